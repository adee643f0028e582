//! Parabolic-mirror geometry.
//!
//! A ray parallel to the axis at height `r` is reflected towards the focus
//! under the polar angle `theta = 2 atan(r / 2f)`, measured from the axis
//! pointing away from the vertex. The vertex hole and the outer aperture thus
//! become an angular range `[theta_min, theta_max]`.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorGeometry {
    focal_length: f64,
    theta_min: f64,
    theta_max: f64,
    reflectivity: f64,
}

impl MirrorGeometry {
    pub fn new(focal_length: f64, theta_min: f64, theta_max: f64, reflectivity: f64) -> Result<Self> {
        if !(focal_length > 0.0 && focal_length.is_finite()) {
            return Err(Error::invalid(format!("focal length must be positive, got {focal_length}")));
        }
        check_angles(theta_min, theta_max)?;
        if !(0.0..=1.0).contains(&reflectivity) {
            return Err(Error::invalid(format!("reflectivity must be in [0, 1], got {reflectivity}")));
        }
        Ok(MirrorGeometry {
            focal_length,
            theta_min,
            theta_max,
            reflectivity,
        })
    }

    /// Illumination through the inner half of the mirror (`theta_max = pi/2`)
    /// with a vertex hole that removes `hole_deficit` of the weighted solid
    /// angle.
    pub fn half_solid_angle(focal_length: f64, hole_deficit: f64, reflectivity: f64) -> Result<Self> {
        let theta_min = if hole_deficit == 0.0 {
            0.0
        } else {
            hole_angle_for_omega(hole_deficit)?
        };
        Self::new(focal_length, theta_min, FRAC_PI_2, reflectivity)
    }

    /// f = 2.1 mm, 64 % reflectivity, half solid angle and a hole costing 0.01
    /// of the weighted solid angle (leaving 0.49).
    pub fn yb_reference() -> Self {
        Self::half_solid_angle(2.1e-3, 0.01, 0.64).expect("default geometry is valid")
    }

    pub fn focal_length(&self) -> f64 {
        self.focal_length
    }

    pub fn theta_min(&self) -> f64 {
        self.theta_min
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    pub fn reflectivity(&self) -> f64 {
        self.reflectivity
    }

    /// Dipole-weighted solid-angle fraction of the illuminated range.
    pub fn omega(&self) -> f64 {
        weighted_solid_angle(self.theta_min, self.theta_max).expect("angles validated at construction")
    }

    /// Radii of the vertex hole and of the outer aperture in the input plane.
    pub fn aperture_radii(&self) -> (f64, f64) {
        let f = self.focal_length;
        let outer = if self.theta_max >= PI {
            f64::INFINITY
        } else {
            radius_from_theta(self.theta_max, f).expect("validated")
        };
        (radius_from_theta(self.theta_min, f).expect("validated"), outer)
    }
}

fn check_angles(theta_min: f64, theta_max: f64) -> Result<()> {
    if !(0.0 <= theta_min && theta_min < theta_max && theta_max <= PI) {
        return Err(Error::invalid(format!(
            "angular range must satisfy 0 <= theta_min < theta_max <= pi, got [{theta_min}, {theta_max}]"
        )));
    }
    Ok(())
}

pub fn theta_from_radius(r: f64, f: f64) -> Result<f64> {
    if !(f > 0.0) {
        return Err(Error::invalid(format!("focal length must be positive, got {f}")));
    }
    if !(r >= 0.0) {
        return Err(Error::invalid(format!("radius must be >= 0, got {r}")));
    }
    Ok(2.0 * (r / (2.0 * f)).atan())
}

pub fn radius_from_theta(theta: f64, f: f64) -> Result<f64> {
    if !(f > 0.0) {
        return Err(Error::invalid(format!("focal length must be positive, got {f}")));
    }
    if !(0.0..PI).contains(&theta) {
        return Err(Error::invalid(format!("theta must be in [0, pi), got {theta}")));
    }
    Ok(2.0 * f * (0.5 * theta).tan())
}

// cos written as a sine of the complement, exact at 0, pi/2 and pi.
fn cos_exact_at_quadrants(theta: f64) -> f64 {
    (FRAC_PI_2 - theta).sin()
}

fn omega_unchecked(theta_min: f64, theta_max: f64) -> f64 {
    let c1 = cos_exact_at_quadrants(theta_min);
    let c2 = cos_exact_at_quadrants(theta_max);
    // (3/4)[c1 - c2 - (c1^3 - c2^3)/3], factored
    0.25 * (c1 - c2) * (3.0 - (c1 * c1 + c1 * c2 + c2 * c2))
}

/// `(3/4) int sin^3(theta) dtheta` over `[theta_min, theta_max]`, in closed form.
pub fn weighted_solid_angle(theta_min: f64, theta_max: f64) -> Result<f64> {
    check_angles(theta_min, theta_max)?;
    Ok(omega_unchecked(theta_min, theta_max))
}

/// Hole half-angle `theta_h` such that `Omega(0, theta_h) = omega_deficit`.
pub fn hole_angle_for_omega(omega_deficit: f64) -> Result<f64> {
    if !(omega_deficit > 0.0 && omega_deficit < 1.0) {
        return Err(Error::NoSolution(format!(
            "a hole can only remove a fraction in (0, 1) of the solid angle, got {omega_deficit}"
        )));
    }
    // Omega(0, theta) rises monotonically from 0 to 1 on [0, pi].
    let (mut lo, mut hi) = (0.0, PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if omega_unchecked(0.0, mid) < omega_deficit {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    let residual = (omega_unchecked(0.0, theta) - omega_deficit).abs();
    if residual > 1e-10 {
        return Err(Error::NoSolution(format!(
            "bisection stalled with residual {residual:e}"
        )));
    }
    Ok(theta)
}

/// Power reaching the ion after the single reflection on the mirror.
pub fn power_after_mirror(p_incident: f64, geometry: &MirrorGeometry) -> f64 {
    p_incident * geometry.reflectivity
}
