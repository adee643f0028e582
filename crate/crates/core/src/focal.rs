//! Vector focal fields of the parabolic mirror.
//!
//! A radially polarised doughnut beam `E_in(r) = (r/w) exp(-r^2/w^2)` is
//! mapped by the mirror onto a converging spherical wave with angular
//! amplitude `A(theta) = f / cos^2(theta/2) * E_in(2f tan(theta/2))`. That
//! factor makes `int |E_in|^2 2 pi r dr = 2 pi int |A|^2 sin(theta) dtheta`
//! hold exactly. The focal field near the focus is then
//!
//! ```text
//! E_z   ~ int A sin^2(theta)            J0(k rho sin theta) exp(i k z cos theta) dtheta
//! E_rho ~ int A sin(theta) cos(theta)   J1(k rho sin theta) exp(i k z cos theta) dtheta
//! ```
//!
//! with constant prefactors dropped; only relative intensities are used.

use crate::mirror::MirrorGeometry;
use crate::quadrature::IntervalRule;
use crate::special::{bessel_j0, bessel_j1};
use crate::{Error, Result};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::io::Write;

const MIN_ORDER: usize = 128;
const MAX_ORDER: usize = 8192;
const ORDER_TOLERANCE: f64 = 1e-8;

/// First-order Laguerre-Gaussian (doughnut) amplitude profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamProfile {
    waist: f64,
}

impl BeamProfile {
    pub fn new(waist: f64) -> Result<Self> {
        if !(waist > 0.0 && waist.is_finite()) {
            return Err(Error::invalid(format!("waist must be positive, got {waist}")));
        }
        Ok(BeamProfile { waist })
    }

    pub fn waist(&self) -> f64 {
        self.waist
    }

    pub fn amplitude(&self, r: f64) -> f64 {
        let x = r / self.waist;
        x * (-x * x).exp()
    }

    /// `int_0^inf |E_in|^2 2 pi r dr`.
    pub fn total_power(&self) -> f64 {
        0.25 * PI * self.waist * self.waist
    }
}

/// Angular amplitude of the converging wave, sampled on a Gauss-Legendre rule
/// spanning the illuminated range.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularAmplitude {
    theta_min: f64,
    theta_max: f64,
    rule: IntervalRule,
    values: Vec<Complex64>,
}

impl AngularAmplitude {
    /// Samples `f` with the smallest doubled order (from 128) at which both the
    /// on-axis focal field and the energy are stable to 1e-8 relative.
    pub fn from_fn(theta_min: f64, theta_max: f64, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let mut current = Self::with_order(theta_min, theta_max, MIN_ORDER, &f)?;
        let mut order = MIN_ORDER;
        while order < MAX_ORDER {
            order *= 2;
            let refined = Self::with_order(theta_min, theta_max, order, &f)?;
            let de = rel_change(refined.energy(), current.energy());
            let dz = (refined.on_axis_moment() - current.on_axis_moment()).norm()
                / refined.on_axis_moment().norm().max(f64::MIN_POSITIVE);
            current = refined;
            if de < ORDER_TOLERANCE && dz < ORDER_TOLERANCE {
                return Ok(current);
            }
        }
        Err(Error::NumericalFailure(format!(
            "angular quadrature did not converge to {ORDER_TOLERANCE:e} by order {MAX_ORDER}"
        )))
    }

    pub fn with_order(
        theta_min: f64,
        theta_max: f64,
        order: usize,
        f: impl Fn(f64) -> Complex64,
    ) -> Result<Self> {
        if !(0.0 <= theta_min && theta_min < theta_max && theta_max <= PI) {
            return Err(Error::invalid(format!(
                "empty or invalid angular range [{theta_min}, {theta_max}]"
            )));
        }
        if order == 0 {
            return Err(Error::invalid("quadrature order must be positive"));
        }
        let rule = IntervalRule::new(theta_min, theta_max, order);
        let values = rule.nodes.iter().map(|&t| f(t)).collect();
        Ok(AngularAmplitude {
            theta_min,
            theta_max,
            rule,
            values,
        })
    }

    /// The ideal converging linear-dipole wave, `A = sin(theta)`.
    pub fn dipole(theta_min: f64, theta_max: f64) -> Result<Self> {
        Self::from_fn(theta_min, theta_max, |t| Complex64::new(t.sin(), 0.0))
    }

    pub fn scaled(mut self, c: Complex64) -> Self {
        self.values.iter_mut().for_each(|v| *v *= c);
        self
    }

    pub fn theta_range(&self) -> (f64, f64) {
        (self.theta_min, self.theta_max)
    }

    pub fn order(&self) -> usize {
        self.rule.order()
    }

    /// `(theta, weight, A(theta))` triples.
    pub fn samples(&self) -> impl Iterator<Item = (f64, f64, Complex64)> + '_ {
        self.rule
            .nodes
            .iter()
            .zip(&self.rule.weights)
            .zip(&self.values)
            .map(|((&t, &w), &a)| (t, w, a))
    }

    /// `int |A|^2 sin(theta) dtheta`.
    pub fn energy(&self) -> f64 {
        self.samples().map(|(t, w, a)| w * a.norm_sqr() * t.sin()).sum()
    }

    fn on_axis_moment(&self) -> Complex64 {
        self.samples().map(|(t, w, a)| a * (w * t.sin().powi(2))).sum()
    }
}

fn rel_change(new: f64, old: f64) -> f64 {
    if new == old {
        return 0.0;
    }
    ((new - old) / new).abs()
}

/// Angular amplitude produced by the mirror from an arbitrary radial input
/// profile `e_in(r)`.
pub fn apodize_field(geometry: &MirrorGeometry, e_in: impl Fn(f64) -> f64) -> Result<AngularAmplitude> {
    let f = geometry.focal_length();
    AngularAmplitude::from_fn(geometry.theta_min(), geometry.theta_max(), |t| {
        let c = (0.5 * t).cos();
        let r = 2.0 * f * (0.5 * t).tan();
        Complex64::new(f / (c * c) * e_in(r), 0.0)
    })
}

pub fn apodize(beam: &BeamProfile, geometry: &MirrorGeometry) -> Result<AngularAmplitude> {
    apodize_field(geometry, |r| beam.amplitude(r))
}

/// Field overlap of `a` with the converging dipole wave on the same range.
pub fn dipole_overlap(a: &AngularAmplitude) -> Result<f64> {
    let energy = a.energy();
    if !(energy > 0.0) || !energy.is_finite() {
        return Err(Error::invalid("angular amplitude carries no energy"));
    }
    let projection: Complex64 = a.samples().map(|(t, w, v)| v * (w * t.sin().powi(2))).sum();
    let dipole_energy = a.samples().map(|(t, w, _)| w * t.sin().powi(3)).sum::<f64>();
    Ok((projection.norm() / (energy * dipole_energy).sqrt()).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaistOptimum {
    pub waist: f64,
    pub eta: f64,
}

/// Golden-section search for the doughnut waist maximising the dipole
/// overlap, over `w in [0.1 f, 10 f]`, to 1e-6 relative in `w`.
pub fn optimize_waist(geometry: &MirrorGeometry) -> Result<WaistOptimum> {
    let f = geometry.focal_length();
    let eta_at = |w: f64| -> Result<f64> { dipole_overlap(&apodize(&BeamProfile::new(w)?, geometry)?) };

    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.05 * 2.0 * f, 5.0 * 2.0 * f);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eta_at(c)?;
    let mut fd = eta_at(d)?;
    while (b - a) > 1e-6 * 0.5 * (a + b) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eta_at(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eta_at(d)?;
        }
    }
    let waist = 0.5 * (a + b);
    Ok(WaistOptimum {
        waist,
        eta: eta_at(waist)?,
    })
}

/// Folds a Strehl ratio (an intensity factor) into a field overlap.
pub fn apply_strehl(eta_mode: f64, strehl: f64) -> Result<f64> {
    if !(eta_mode > 0.0 && eta_mode <= 1.0) {
        return Err(Error::invalid(format!("mode overlap must be in (0, 1], got {eta_mode}")));
    }
    if !(strehl > 0.0 && strehl <= 1.0) {
        return Err(Error::invalid(format!("Strehl ratio must be in (0, 1], got {strehl}")));
    }
    Ok(strehl.sqrt() * eta_mode)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub e_rho: Complex64,
    pub e_z: Complex64,
}

impl FieldSample {
    pub fn intensity(&self) -> f64 {
        self.e_rho.norm_sqr() + self.e_z.norm_sqr()
    }
}

/// Radial and longitudinal field at cylindrical position `(rho, z)` relative
/// to the geometric focus.
pub fn focal_field_point(a: &AngularAmplitude, rho: f64, z: f64, wavelength: f64) -> Result<FieldSample> {
    if !(wavelength > 0.0 && wavelength.is_finite()) {
        return Err(Error::invalid(format!("wavelength must be positive, got {wavelength}")));
    }
    let k = 2.0 * PI / wavelength;
    // Phase excursion of the integrand across the range; a Gauss rule needs
    // roughly half that many nodes to resolve it.
    let bandwidth = k * (rho.abs() + z.abs()) * (a.theta_max - a.theta_min);
    if (a.order() as f64) < 0.5 * bandwidth + 10.0 {
        return Err(Error::NumericalFailure(format!(
            "quadrature order {} cannot resolve phase bandwidth {bandwidth:.1} rad at rho = {rho:e} m, z = {z:e} m",
            a.order()
        )));
    }
    let mut e_rho = Complex64::new(0.0, 0.0);
    let mut e_z = Complex64::new(0.0, 0.0);
    for (t, w, amp) in a.samples() {
        let (s, c) = t.sin_cos();
        let arg = k * rho * s;
        let phase = Complex64::from_polar(1.0, k * z * c);
        let base = amp * phase * w;
        e_z += base * (s * s * bessel_j0(arg));
        e_rho += base * (s * c * bessel_j1(arg));
    }
    if !(e_rho.re.is_finite() && e_rho.im.is_finite() && e_z.re.is_finite() && e_z.im.is_finite()) {
        return Err(Error::NumericalFailure(format!(
            "non-finite field at rho = {rho:e} m, z = {z:e} m"
        )));
    }
    Ok(FieldSample { e_rho, e_z })
}

/// Regular Cartesian grid centred on `origin`. Axis `i` has `n_i` points at
/// `origin_i + (j - (n_i - 1)/2) * pitch`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub pitch: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub origin: [f64; 3],
}

impl GridSpec {
    pub fn centered(pitch: f64, nx: usize, ny: usize, nz: usize) -> Self {
        GridSpec {
            pitch,
            nx,
            ny,
            nz,
            origin: [0.0; 3],
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if !(self.pitch > 0.0 && self.pitch.is_finite()) {
            return Err(Error::invalid(format!("grid pitch must be positive, got {}", self.pitch)));
        }
        if self.is_empty() {
            return Err(Error::invalid("grid has no points"));
        }
        Ok(())
    }

    pub fn coordinate(&self, axis: usize, index: usize) -> f64 {
        let n = [self.nx, self.ny, self.nz][axis];
        self.origin[axis] + (index as f64 - 0.5 * (n as f64 - 1.0)) * self.pitch
    }

    /// Flat index with x varying fastest, then y, then z.
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.ny + iy) * self.nx + ix
    }

    pub fn unflatten(&self, flat: usize) -> (usize, usize, usize) {
        (flat % self.nx, (flat / self.nx) % self.ny, flat / (self.nx * self.ny))
    }

    pub fn position(&self, flat: usize) -> [f64; 3] {
        let (ix, iy, iz) = self.unflatten(flat);
        [self.coordinate(0, ix), self.coordinate(1, iy), self.coordinate(2, iz)]
    }
}

/// Focal intensity sampled on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct FocalField {
    pub grid: GridSpec,
    pub intensity: Vec<f64>,
    /// Whether `intensity` has been divided by `peak`.
    pub normalized: bool,
    /// Largest raw intensity on the grid.
    pub peak: f64,
}

impl FocalField {
    pub fn at(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.intensity[self.grid.index(ix, iy, iz)]
    }

    pub fn argmax(&self) -> (usize, usize, usize) {
        let flat = self
            .intensity
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0;
        self.grid.unflatten(flat)
    }

    /// `(position, intensity)` along `axis` through the grid point `through`.
    pub fn profile(&self, axis: usize, through: (usize, usize, usize)) -> Vec<(f64, f64)> {
        let n = [self.grid.nx, self.grid.ny, self.grid.nz][axis];
        (0..n)
            .map(|j| {
                let (mut ix, mut iy, mut iz) = through;
                match axis {
                    0 => ix = j,
                    1 => iy = j,
                    _ => iz = j,
                }
                (self.grid.coordinate(axis, j), self.at(ix, iy, iz))
            })
            .collect()
    }

    /// Writes `x_m,y_m,z_m,intensity`, one row per grid point, x fastest.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x_m", "y_m", "z_m", "intensity"]).map_err(csv_io)?;
        for (flat, v) in self.intensity.iter().enumerate() {
            let [x, y, z] = self.grid.position(flat);
            w.write_record([x.to_string(), y.to_string(), z.to_string(), v.to_string()])
                .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Evaluates the focal intensity on every grid point. Points are independent
/// and evaluated in parallel; the result does not depend on scheduling.
pub fn intensity_map(a: &AngularAmplitude, grid: &GridSpec, wavelength: f64, normalize: bool) -> Result<FocalField> {
    grid.validate()?;
    let intensity = (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            let [x, y, z] = grid.position(flat);
            focal_field_point(a, x.hypot(y), z, wavelength).map(|s| s.intensity())
        })
        .collect::<Result<Vec<f64>>>()?;
    let peak = intensity.iter().copied().fold(0.0, f64::max);
    let mut field = FocalField {
        grid: *grid,
        intensity,
        normalized: false,
        peak,
    };
    if normalize {
        if !(peak > 0.0) {
            return Err(Error::NumericalFailure("focal map is identically zero".into()));
        }
        field.intensity.iter_mut().for_each(|v| *v /= peak);
        field.normalized = true;
    }
    Ok(field)
}

/// Full width at half maximum of a sampled single-peaked profile, by linear
/// interpolation of the half-maximum crossings either side of the global
/// maximum. Samples must be ordered by position.
pub fn fwhm_1d(samples: &[(f64, f64)]) -> Result<f64> {
    if samples.len() < 3 {
        return Err(Error::invalid(format!("need at least 3 samples, got {}", samples.len())));
    }
    let (imax, vmax) = samples
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &(_, v))| if v > best.1 { (i, v) } else { best });
    if !(vmax > 0.0) {
        return Err(Error::invalid("profile has no positive maximum"));
    }
    let half = 0.5 * vmax;
    let cross = |a: (f64, f64), b: (f64, f64)| a.0 + (half - a.1) * (b.0 - a.0) / (b.1 - a.1);

    let right = (imax + 1..samples.len())
        .find(|&j| samples[j].1 <= half)
        .map(|j| cross(samples[j - 1], samples[j]))
        .ok_or_else(|| Error::PeakTruncated("no half-maximum crossing after the peak".into()))?;
    let left = (0..imax)
        .rev()
        .find(|&j| samples[j].1 <= half)
        .map(|j| cross(samples[j], samples[j + 1]))
        .ok_or_else(|| Error::PeakTruncated("no half-maximum crossing before the peak".into()))?;
    Ok(right - left)
}

/// Convenience: transverse and longitudinal FWHM of the focus of `a`, sampled
/// at `pitch` over `+-half_extent` through the geometric focus.
pub fn focus_fwhm(a: &AngularAmplitude, wavelength: f64, pitch: f64, half_extent: f64) -> Result<(f64, f64)> {
    let n = 2 * (half_extent / pitch).round() as usize + 1;
    let transverse = intensity_map(a, &GridSpec::centered(pitch, n, 1, 1), wavelength, false)?;
    let axial = intensity_map(a, &GridSpec::centered(pitch, 1, 1, n), wavelength, false)?;
    Ok((
        fwhm_1d(&transverse.profile(0, (0, 0, 0)))?,
        fwhm_1d(&axial.profile(2, (0, 0, 0)))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mirror::{hole_angle_for_omega, radius_from_theta, theta_from_radius};
    use crate::oracle::adaptive_simpson;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    const F: f64 = 2.1e-3;
    const LAMBDA: f64 = 369.5e-9;

    fn half_space(theta_min: f64) -> MirrorGeometry {
        MirrorGeometry::new(F, theta_min, FRAC_PI_2, 1.0).unwrap()
    }

    fn annulus_power(beam: &BeamProfile, g: &MirrorGeometry) -> f64 {
        let (r0, r1) = (
            radius_from_theta(g.theta_min(), F).unwrap(),
            radius_from_theta(g.theta_max(), F).unwrap(),
        );
        let f = |r: f64| beam.amplitude(r).powi(2) * 2.0 * PI * r;
        let rough = adaptive_simpson(&f, r0, r1, 1e-6 * beam.total_power());
        adaptive_simpson(&f, r0, r1, 1e-12 * rough.abs().max(1e-300))
    }

    #[test]
    fn beam_power_closed_form() {
        let beam = BeamProfile::new(1.3e-3).unwrap();
        let f = |r: f64| beam.amplitude(r).powi(2) * 2.0 * PI * r;
        let w = beam.waist();
        let numeric: f64 = (0..12)
            .map(|i| adaptive_simpson(&f, i as f64 * w, (i + 1) as f64 * w, 1e-15 * beam.total_power()))
            .sum();
        assert!(rel_change(numeric, beam.total_power()) < 1e-10);
        assert!(BeamProfile::new(0.0).is_err());
    }

    #[test]
    fn dipole_matched_input_gives_sine() {
        let g = half_space(0.2);
        let a = apodize_field(&g, |r| {
            let t = theta_from_radius(r, F).unwrap();
            t.sin() * (0.5 * t).cos().powi(2) / F
        })
        .unwrap();
        for (t, _, v) in a.samples() {
            assert!((v.re - t.sin()).abs() < 1e-12);
        }
        assert!((dipole_overlap(&a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn energy_conservation_doughnut_half_space() {
        let beam = BeamProfile::new(2.0 * F).unwrap();
        let g = half_space(0.0);
        let a = apodize(&beam, &g).unwrap();
        let lhs = annulus_power(&beam, &g);
        let rhs = 2.0 * PI * a.energy();
        assert!(rel_change(rhs, lhs) < 1e-8, "{lhs} vs {rhs}");
    }

    #[test]
    fn hole_excludes_inner_energy() {
        let beam = BeamProfile::new(2.0 * F).unwrap();
        let hole = hole_angle_for_omega(0.01).unwrap();
        let full = apodize(&beam, &half_space(0.0)).unwrap();
        let holed = apodize(&beam, &half_space(hole)).unwrap();
        let inner = apodize(&beam, &MirrorGeometry::new(F, 0.0, hole, 1.0).unwrap()).unwrap();
        assert_eq!(holed.theta_range(), (hole, FRAC_PI_2));
        assert!(rel_change(holed.energy() + inner.energy(), full.energy()) < 1e-10);
        assert!(holed.energy() < full.energy());
    }

    #[test]
    fn empty_range_is_rejected() {
        assert!(AngularAmplitude::dipole(1.0, 1.0).is_err());
        assert!(AngularAmplitude::dipole(1.2, 1.0).is_err());
    }

    #[test]
    fn overlap_examples() {
        let sine = AngularAmplitude::dipole(0.0, FRAC_PI_2).unwrap();
        assert!((dipole_overlap(&sine).unwrap() - 1.0).abs() < 1e-12);

        let flat = AngularAmplitude::from_fn(0.0, FRAC_PI_2, |_| Complex64::new(1.0, 0.0)).unwrap();
        let want = (PI / 4.0) / (2.0f64 / 3.0).sqrt();
        assert!((dipole_overlap(&flat).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.9619).abs() < 1e-4);

        let zero = AngularAmplitude::from_fn(0.0, 1.0, |_| Complex64::new(0.0, 0.0)).unwrap();
        assert!(dipole_overlap(&zero).is_err());
    }

    #[test]
    fn overlap_scale_and_phase_invariant() {
        let beam = BeamProfile::new(1.7 * F).unwrap();
        let a = apodize(&beam, &half_space(0.3)).unwrap();
        let eta = dipole_overlap(&a).unwrap();
        let scaled = dipole_overlap(&a.clone().scaled(Complex64::new(7.3, 0.0))).unwrap();
        let rotated = dipole_overlap(&a.scaled(Complex64::from_polar(2.0, 1.1))).unwrap();
        assert!((eta - scaled).abs() < 1e-12);
        assert!((eta - rotated).abs() < 1e-12);
    }

    #[test]
    fn optimized_waist_is_a_maximum() {
        let hole = hole_angle_for_omega(0.01).unwrap();
        let g = half_space(hole);
        let best = optimize_waist(&g).unwrap();
        let eta = |w: f64| dipole_overlap(&apodize(&BeamProfile::new(w).unwrap(), &g).unwrap()).unwrap();
        assert!(best.eta >= eta(2.0 * F));
        assert!(best.eta >= eta(F));
        assert!(eta(best.waist * 1.01) < best.eta);
        assert!(eta(best.waist * 0.99) < best.eta);
        assert!((0.95..=1.0).contains(&best.eta), "{}", best.eta);
    }

    #[test]
    fn strehl_examples() {
        assert!((apply_strehl(0.91 / 0.87f64.sqrt(), 0.87).unwrap() - 0.91).abs() < 1e-12);
        assert!((apply_strehl(0.9757, 0.87).unwrap() - 0.910).abs() < 1e-3);
        assert_eq!(apply_strehl(0.8, 1.0).unwrap(), 0.8);
        assert_eq!(apply_strehl(1.0, 0.25).unwrap(), 0.5);
        assert!(apply_strehl(0.0, 0.5).is_err());
        assert!(apply_strehl(0.5, 1.5).is_err());
    }

    #[test]
    fn on_axis_radial_field_vanishes() {
        let a = AngularAmplitude::dipole(0.0, FRAC_PI_2).unwrap();
        for z in [-3e-7, 0.0, 1.1e-7] {
            let s = focal_field_point(&a, 0.0, z, LAMBDA).unwrap();
            assert_eq!(s.e_rho, Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn z_mirror_symmetry_for_symmetric_range() {
        let a = AngularAmplitude::dipole(0.4, PI - 0.4).unwrap();
        for (rho, z) in [(0.0, 1e-7), (1.3e-7, 2.2e-7), (4e-7, 5e-8)] {
            let p = focal_field_point(&a, rho, z, LAMBDA).unwrap().intensity();
            let m = focal_field_point(&a, rho, -z, LAMBDA).unwrap().intensity();
            assert!(((p - m) / p).abs() < 1e-12);
        }
    }

    #[test]
    fn rho_sign_does_not_change_intensity() {
        let a = AngularAmplitude::dipole(0.2, FRAC_PI_2).unwrap();
        for rho in [5e-8, 2.4e-7, 6.1e-7] {
            let p = focal_field_point(&a, rho, 3e-8, LAMBDA).unwrap().intensity();
            let m = focal_field_point(&a, -rho, 3e-8, LAMBDA).unwrap().intensity();
            assert!(((p - m) / p).abs() < 1e-14);
        }
    }

    #[test]
    fn ideal_half_space_focus_widths() {
        let a = AngularAmplitude::dipole(0.0, FRAC_PI_2).unwrap();
        let (tr, lo) = focus_fwhm(&a, LAMBDA, 1e-9, 600e-9).unwrap();
        assert!((120e-9..=170e-9).contains(&tr), "transverse {tr}");
        assert!((350e-9..=480e-9).contains(&lo), "longitudinal {lo}");
    }

    #[test]
    fn under_resolved_evaluation_fails() {
        let a = AngularAmplitude::with_order(0.0, FRAC_PI_2, 8, |t| Complex64::new(t.sin(), 0.0)).unwrap();
        assert!(matches!(
            focal_field_point(&a, 5e-6, 0.0, LAMBDA),
            Err(Error::NumericalFailure(_))
        ));
    }

    #[test]
    fn map_single_point_matches_direct_evaluation() {
        let a = AngularAmplitude::dipole(0.1, FRAC_PI_2).unwrap();
        let map = intensity_map(&a, &GridSpec::centered(1e-8, 1, 1, 1), LAMBDA, false).unwrap();
        let direct = focal_field_point(&a, 0.0, 0.0, LAMBDA).unwrap().intensity();
        assert_eq!(map.intensity, vec![direct]);
    }

    #[test]
    fn map_peak_at_focus_and_radially_symmetric() {
        let hole = hole_angle_for_omega(0.01).unwrap();
        let a = AngularAmplitude::dipole(hole, FRAC_PI_2).unwrap();
        let grid = GridSpec::centered(25e-9, 21, 21, 1);
        let map = intensity_map(&a, &grid, LAMBDA, true).unwrap();
        let (ix, iy, _) = map.argmax();
        assert!(ix.abs_diff(10) <= 1 && iy.abs_diff(10) <= 1);
        assert!((map.intensity.iter().copied().fold(0.0, f64::max) - 1.0).abs() < 1e-15);
        for ix in 0..21 {
            for iy in 0..21 {
                let v = map.at(ix, iy, 0);
                assert!((v - map.at(20 - ix, iy, 0)).abs() < 1e-12);
                assert!((v - map.at(ix, 20 - iy, 0)).abs() < 1e-12);
                assert!((v - map.at(iy, ix, 0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn doubling_order_keeps_peak() {
        let sine = |t: f64| Complex64::new(t.sin(), 0.0);
        let grid = GridSpec::centered(40e-9, 11, 1, 11);
        let coarse = AngularAmplitude::with_order(0.0, FRAC_PI_2, 128, sine).unwrap();
        let fine = AngularAmplitude::with_order(0.0, FRAC_PI_2, 256, sine).unwrap();
        let pc = intensity_map(&coarse, &grid, LAMBDA, false).unwrap().peak;
        let pf = intensity_map(&fine, &grid, LAMBDA, false).unwrap().peak;
        assert!(rel_change(pf, pc) < 1e-6);
    }

    #[test]
    fn global_phase_leaves_intensity() {
        let a = AngularAmplitude::dipole(0.3, 1.4).unwrap();
        let b = a.clone().scaled(Complex64::from_polar(1.0, 0.77));
        let grid = GridSpec::centered(60e-9, 5, 3, 4);
        let ma = intensity_map(&a, &grid, LAMBDA, false).unwrap();
        let mb = intensity_map(&b, &grid, LAMBDA, false).unwrap();
        for (x, y) in ma.intensity.iter().zip(&mb.intensity) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn csv_export_layout() {
        let a = AngularAmplitude::dipole(0.0, FRAC_PI_2).unwrap();
        let map = intensity_map(&a, &GridSpec::centered(50e-9, 3, 2, 1), LAMBDA, true).unwrap();
        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "x_m,y_m,z_m,intensity");
        assert_eq!(lines.len(), 7);
        assert!(lines[1].starts_with("-0.00000005,-0.000000025,0,"));
        assert!(lines[2].starts_with("0,-0.000000025,0,"));
    }

    #[test]
    fn fwhm_examples() {
        let sigma = 100e-9;
        let gauss: Vec<_> = (-60..=60)
            .map(|i| {
                let x = i as f64 * 10e-9;
                (x, (-x * x / (2.0 * sigma * sigma)).exp())
            })
            .collect();
        let w = fwhm_1d(&gauss).unwrap();
        assert!((w - 2.0 * (2.0 * 2f64.ln()).sqrt() * sigma).abs() < 10e-9);

        let h = 0.8;
        let tri: Vec<_> = (-10..=10)
            .map(|i| {
                let x = i as f64 * 0.1;
                (x, (1.0 - x.abs() / h).max(0.0))
            })
            .collect();
        assert!((fwhm_1d(&tri).unwrap() - h).abs() < 1e-12);

        let rising: Vec<_> = (0..10).map(|i| (i as f64, i as f64)).collect();
        assert!(matches!(fwhm_1d(&rising), Err(Error::PeakTruncated(_))));
        assert!(fwhm_1d(&[(0.0, 1.0), (1.0, 0.0)]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn apodization_conserves_energy(w_over_f in 0.1f64..6.0, t0 in 0.0f64..1.2, span in 0.2f64..1.8) {
            let t1 = (t0 + span).min(2.8);
            let g = MirrorGeometry::new(F, t0, t1, 1.0).unwrap();
            let beam = BeamProfile::new(w_over_f * F).unwrap();
            let a = apodize(&beam, &g).unwrap();
            let lhs = annulus_power(&beam, &g);
            prop_assume!(lhs > 1e-12 * beam.total_power());
            let rhs = 2.0 * PI * a.energy();
            prop_assert!(rel_change(rhs, lhs) < 1e-8, "{} vs {}", lhs, rhs);
        }

        #[test]
        fn overlap_bounded(w_over_f in 0.1f64..10.0, t0 in 0.0f64..1.5) {
            let g = MirrorGeometry::new(F, t0, (t0 + 0.8).min(PI), 1.0).unwrap();
            let eta = dipole_overlap(&apodize(&BeamProfile::new(w_over_f * F).unwrap(), &g).unwrap()).unwrap();
            prop_assert!((0.0..=1.0).contains(&eta));
        }

        #[test]
        fn gaussian_fwhm_within_a_pitch(sigma_over_pitch in 5.0f64..40.0, offset in -0.5f64..0.5) {
            let pitch = 1.0;
            let sigma = sigma_over_pitch * pitch;
            let n = (6.0 * sigma / pitch) as i64;
            let samples: Vec<_> = (-n..=n)
                .map(|i| {
                    let x = i as f64 * pitch;
                    let d = x - offset;
                    (x, (-d * d / (2.0 * sigma * sigma)).exp())
                })
                .collect();
            let w = fwhm_1d(&samples).unwrap();
            prop_assert!((w - 2.0 * (2.0 * 2f64.ln()).sqrt() * sigma).abs() < pitch);
        }
    }
}
