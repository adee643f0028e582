//! Steady-state response of an ideal two-level system.
//!
//! The drive is expressed as a rate of photons in the dipole mode, `|beta|^2`,
//! and a normalised detuning `delta = 2 Delta / Gamma`. With the on-resonance
//! saturation parameter `q = 8 |beta|^2 / (Gamma (1 + delta^2))` the
//! upper-level population is `q / (2 (1 + q))` and the scattering rate is
//! `Gamma` times that.

use crate::constants::{HBAR, PLANCK, SPEED_OF_LIGHT, YB_COOLING_LINEWIDTH_HZ, YB_COOLING_WAVELENGTH};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// The driven atomic transition.
///
/// `multiplicity` is the factor by which the saturation power of the driven
/// sub-transition exceeds that of an ideal two-level system (3 for the pi
/// component of a J=1/2 to J=1/2 line).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomicTransition {
    wavelength: f64,
    gamma: f64,
    multiplicity: f64,
}

impl AtomicTransition {
    pub fn new(wavelength: f64, gamma: f64, multiplicity: f64) -> Result<Self> {
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::invalid(format!("wavelength must be positive, got {wavelength}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
        }
        if !(multiplicity >= 1.0 && multiplicity.is_finite()) {
            return Err(Error::invalid(format!("multiplicity must be >= 1, got {multiplicity}")));
        }
        Ok(AtomicTransition {
            wavelength,
            gamma,
            multiplicity,
        })
    }

    /// Builds the transition from a linewidth `Gamma / 2pi` in Hz.
    pub fn from_linewidth_hz(wavelength: f64, linewidth_hz: f64, multiplicity: f64) -> Result<Self> {
        Self::new(wavelength, 2.0 * PI * linewidth_hz, multiplicity)
    }

    /// 2S1/2 - 2P1/2 line of 174Yb+ at 369.5 nm, driving only its pi component.
    pub fn yb174_cooling() -> Self {
        Self::from_linewidth_hz(YB_COOLING_WAVELENGTH, YB_COOLING_LINEWIDTH_HZ, 3.0)
            .expect("tabulated constants are valid")
    }

    pub fn with_multiplicity(self, multiplicity: f64) -> Result<Self> {
        Self::new(self.wavelength, self.gamma, multiplicity)
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// Spontaneous decay rate in rad/s.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn multiplicity(&self) -> f64 {
        self.multiplicity
    }

    /// Transition angular frequency in rad/s.
    pub fn angular_frequency(&self) -> f64 {
        2.0 * PI * SPEED_OF_LIGHT / self.wavelength
    }

    pub fn photon_energy(&self) -> f64 {
        HBAR * self.angular_frequency()
    }
}

/// Photon energy `h c / lambda` in joules.
pub fn photon_energy(wavelength: f64) -> Result<f64> {
    if !(wavelength > 0.0 && wavelength.is_finite()) {
        return Err(Error::invalid(format!("wavelength must be positive, got {wavelength}")));
    }
    Ok(PLANCK * SPEED_OF_LIGHT / wavelength)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drive {
    /// Rate of photons in the dipole mode, 1/s.
    pub photon_rate: f64,
    /// Normalised detuning `2 Delta / Gamma`.
    pub delta: f64,
}

impl Drive {
    pub fn new(photon_rate: f64, delta: f64) -> Result<Self> {
        if !(photon_rate >= 0.0 && photon_rate.is_finite()) {
            return Err(Error::invalid(format!("photon rate must be >= 0, got {photon_rate}")));
        }
        if !delta.is_finite() {
            return Err(Error::invalid("detuning must be finite"));
        }
        Ok(Drive { photon_rate, delta })
    }

    /// On-resonance-equivalent saturation parameter.
    pub fn saturation_parameter(&self, gamma: f64) -> f64 {
        8.0 * self.photon_rate / (gamma * (1.0 + self.delta * self.delta))
    }
}

/// Photon scattering rate of the driven system.
///
/// Algebraically identical to `(G/2)(1 - (1+d^2)/(1+d^2+8|b|^2/G))` but
/// evaluated as `(G/2) q/(1+q)`, which does not cancel for weak drives.
pub fn scattering_rate(drive: Drive, gamma: f64) -> f64 {
    gamma * excited_population(drive, gamma)
}

pub fn excited_population(drive: Drive, gamma: f64) -> f64 {
    let q = drive.saturation_parameter(gamma);
    0.5 * q / (1.0 + q)
}

/// Power incident on the ion at which the upper-level population reaches 1/4,
/// for a coupling efficiency `g`.
pub fn saturation_power(transition: &AtomicTransition, delta: f64, g: f64) -> Result<f64> {
    if !(g > 0.0 && g <= 1.0) {
        return Err(Error::invalid(format!("coupling efficiency must be in (0, 1], got {g}")));
    }
    if !delta.is_finite() {
        return Err(Error::invalid("detuning must be finite"));
    }
    Ok(transition.multiplicity * transition.photon_energy() * transition.gamma * (1.0 + delta * delta)
        / (8.0 * g))
}

/// Upper-level population at power `p`, given the power `p_quarter` at which it
/// equals 1/4.
pub fn population_vs_power(p: f64, p_quarter: f64) -> Result<f64> {
    if !(p_quarter > 0.0) {
        return Err(Error::invalid(format!("p_quarter must be positive, got {p_quarter}")));
    }
    if !(p >= 0.0) {
        return Err(Error::invalid(format!("power must be >= 0, got {p}")));
    }
    if p.is_infinite() {
        return Ok(0.5);
    }
    Ok(p / (2.0 * (p + p_quarter)))
}
