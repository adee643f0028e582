//! JSON configuration. Every section is optional; missing fields fall back to
//! the Yb+ / parabolic-mirror setup shipped in `data/defaults.json`. Unknown
//! keys are rejected.

use crate::CliError;
use ioncouple::constants::{ATOMIC_MASS_UNIT, ELECTRON_MASS, YB174_ATOMIC_MASS_U};
use ioncouple::focal::{apodize, dipole_overlap, optimize_waist, apply_strehl, BeamProfile};
use ioncouple::mirror::{hole_angle_for_omega, MirrorGeometry};
use ioncouple::scan::{default_probe_schedule, IonWavepacket};
use ioncouple::tls::AtomicTransition;
use ioncouple::coupling::CouplingBudget;
use ioncouple::PICOWATT;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

pub const DEFAULTS_JSON: &str = include_str!("../data/defaults.json");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub transition: TransitionConfig,
    pub mirror: MirrorConfig,
    pub beam: BeamConfig,
    pub budget: BudgetConfig,
    pub measurement: MeasurementConfig,
    pub ion: IonConfig,
    pub scan: ScanConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransitionConfig {
    pub wavelength_m: f64,
    /// Natural linewidth Γ/2π.
    pub linewidth_hz: f64,
    pub multiplicity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum Hole {
    /// Weighted solid angle removed by the vertex hole.
    OmegaDeficit(f64),
    ThetaMinRad(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MirrorConfig {
    pub focal_length_m: f64,
    pub reflectivity: f64,
    pub hole: Hole,
    pub theta_max_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Keyword {
    #[serde(rename = "optimize")]
    Optimize,
    #[serde(rename = "compute")]
    Compute,
}

/// A number or a keyword (`"optimize"` for the waist, `"compute"` for η).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Setting {
    Value(f64),
    Keyword(Keyword),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamConfig {
    pub waist_m: Setting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetConfig {
    /// Final overlap, or `"compute"` for the doughnut-mode overlap times
    /// the square root of `strehl`.
    pub eta: Setting,
    pub strehl: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementConfig {
    pub detuning_delta: f64,
    /// Quarter-population power in front of the mirror; used when no data
    /// file is given and as the nominal scan power.
    pub p_quarter_mirror_pw: f64,
    pub p_quarter_mirror_sigma_pw: f64,
    pub floating_offset: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IonConfig {
    /// Neutral atomic mass; the ion is taken as singly charged.
    pub atomic_mass_u: f64,
    pub trap_frequency_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Transverse plane through the focus.
    Xy,
    /// Line along the optical axis.
    Z,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum Truth {
    /// Focal field of the configured beam and mirror.
    Focal,
    Gaussian { fwhm_x_m: f64, fwhm_y_m: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub layout: Layout,
    pub pitch_m: f64,
    pub nx: usize,
    pub ny: usize,
    /// Probe powers at the mirror; defaults to 8 log-spaced powers around
    /// the nominal quarter-population power.
    pub probe_powers_pw: Option<Vec<f64>>,
    pub counts_at_saturation: f64,
    pub duration_s: f64,
    pub background_rate_cps: f64,
    pub blur_sigma_m: f64,
    pub noiseless: bool,
    pub seed: u64,
    pub truth: Truth,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        TransitionConfig {
            wavelength_m: 369.5e-9,
            linewidth_hz: 19.6e6,
            multiplicity: 3.0,
        }
    }
}

impl Default for MirrorConfig {
    fn default() -> Self {
        MirrorConfig {
            focal_length_m: 2.1e-3,
            reflectivity: 0.64,
            hole: Hole::OmegaDeficit(0.01),
            theta_max_rad: FRAC_PI_2,
        }
    }
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            waist_m: Setting::Keyword(Keyword::Optimize),
        }
    }
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            eta: Setting::Value(0.91),
            strehl: 0.87,
            loss: 0.0,
        }
    }
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        MeasurementConfig {
            detuning_delta: 1.0,
            p_quarter_mirror_pw: 1081.0,
            p_quarter_mirror_sigma_pw: 31.25,
            floating_offset: false,
        }
    }
}

impl Default for IonConfig {
    fn default() -> Self {
        IonConfig {
            atomic_mass_u: YB174_ATOMIC_MASS_U,
            trap_frequency_hz: 560e3,
        }
    }
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            layout: Layout::Xy,
            pitch_m: 50e-9,
            nx: 21,
            ny: 21,
            probe_powers_pw: None,
            counts_at_saturation: 5000.0,
            duration_s: 0.1,
            background_rate_cps: 0.0,
            blur_sigma_m: 217e-9,
            noiseless: false,
            seed: 1,
            truth: Truth::Focal,
        }
    }
}

fn field_error(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field_error(field, format!("must be positive, got {v}")))
    }
}

fn fraction(field: &str, v: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(field_error(field, format!("must be in [0, 1], got {v}")))
    }
}

/// Derived optical quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Optics {
    pub theta_min_rad: f64,
    pub theta_max_rad: f64,
    pub omega: f64,
    pub waist_m: f64,
    /// Doughnut-mode overlap before aberrations, when computed.
    pub eta_mode: Option<f64>,
    pub eta: f64,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            field_error(if path == "." { "config" } else { &path }, e.inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Self::parse(DEFAULTS_JSON),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let t = &self.transition;
        positive("transition.wavelength_m", t.wavelength_m)?;
        positive("transition.linewidth_hz", t.linewidth_hz)?;
        positive("transition.multiplicity", t.multiplicity)?;

        let m = &self.mirror;
        positive("mirror.focal_length_m", m.focal_length_m)?;
        fraction("mirror.reflectivity", m.reflectivity)?;
        match m.hole {
            Hole::OmegaDeficit(d) if !(0.0..1.0).contains(&d) => {
                return Err(field_error("mirror.hole.omega_deficit", format!("must be in [0, 1), got {d}")))
            }
            Hole::ThetaMinRad(t) if !(0.0..PI).contains(&t) => {
                return Err(field_error("mirror.hole.theta_min_rad", format!("must be in [0, pi), got {t}")))
            }
            _ => {}
        }
        if !(m.theta_max_rad > 0.0 && m.theta_max_rad <= PI) {
            return Err(field_error("mirror.theta_max_rad", format!("must be in (0, pi], got {}", m.theta_max_rad)));
        }
        self.geometry()?;

        if let Setting::Value(w) = self.beam.waist_m {
            positive("beam.waist_m", w)?;
        } else if self.beam.waist_m != Setting::Keyword(Keyword::Optimize) {
            return Err(field_error("beam.waist_m", "must be a number or \"optimize\""));
        }
        match self.budget.eta {
            Setting::Value(e) => fraction("budget.eta", e)?,
            Setting::Keyword(Keyword::Compute) => {}
            _ => return Err(field_error("budget.eta", "must be a number or \"compute\"")),
        }
        if !(self.budget.strehl > 0.0 && self.budget.strehl <= 1.0) {
            return Err(field_error("budget.strehl", format!("must be in (0, 1], got {}", self.budget.strehl)));
        }
        fraction("budget.loss", self.budget.loss)?;

        let me = &self.measurement;
        if !me.detuning_delta.is_finite() {
            return Err(field_error("measurement.detuning_delta", "must be finite"));
        }
        positive("measurement.p_quarter_mirror_pw", me.p_quarter_mirror_pw)?;
        if !(me.p_quarter_mirror_sigma_pw >= 0.0 && me.p_quarter_mirror_sigma_pw.is_finite()) {
            return Err(field_error("measurement.p_quarter_mirror_sigma_pw", "must be >= 0"));
        }

        positive("ion.atomic_mass_u", self.ion.atomic_mass_u)?;
        positive("ion.trap_frequency_hz", self.ion.trap_frequency_hz)?;

        let s = &self.scan;
        positive("scan.pitch_m", s.pitch_m)?;
        if s.nx == 0 || s.ny == 0 {
            return Err(field_error("scan.nx/ny", "must be >= 1"));
        }
        if let Some(p) = &s.probe_powers_pw {
            if p.is_empty() || p.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(field_error("scan.probe_powers_pw", "must be a non-empty list of positive powers"));
            }
        }
        positive("scan.counts_at_saturation", s.counts_at_saturation)?;
        positive("scan.duration_s", s.duration_s)?;
        if !(s.background_rate_cps >= 0.0 && s.background_rate_cps.is_finite()) {
            return Err(field_error("scan.background_rate_cps", "must be >= 0"));
        }
        if !(s.blur_sigma_m >= 0.0 && s.blur_sigma_m.is_finite()) {
            return Err(field_error("scan.blur_sigma_m", "must be >= 0"));
        }
        if let Truth::Gaussian { fwhm_x_m, fwhm_y_m } = s.truth {
            positive("scan.truth.fwhm_x_m", fwhm_x_m)?;
            positive("scan.truth.fwhm_y_m", fwhm_y_m)?;
        }
        Ok(())
    }

    pub fn transition(&self) -> Result<AtomicTransition, CliError> {
        let t = &self.transition;
        AtomicTransition::from_linewidth_hz(t.wavelength_m, t.linewidth_hz, t.multiplicity)
            .map_err(|e| field_error("transition", e))
    }

    pub fn geometry(&self) -> Result<MirrorGeometry, CliError> {
        let m = &self.mirror;
        let theta_min = match m.hole {
            Hole::OmegaDeficit(0.0) => 0.0,
            Hole::OmegaDeficit(d) => hole_angle_for_omega(d).map_err(|e| field_error("mirror.hole.omega_deficit", e))?,
            Hole::ThetaMinRad(t) => t,
        };
        MirrorGeometry::new(m.focal_length_m, theta_min, m.theta_max_rad, m.reflectivity)
            .map_err(|e| field_error("mirror", e))
    }

    pub fn optics(&self) -> Result<Optics, CliError> {
        let geometry = self.geometry()?;
        let (waist, optimum) = match self.beam.waist_m {
            Setting::Value(w) => (w, None),
            _ => {
                let opt = optimize_waist(&geometry)?;
                (opt.waist, Some(opt.eta))
            }
        };
        let (eta_mode, eta) = match self.budget.eta {
            Setting::Value(e) => (optimum, e),
            _ => {
                let mode = match optimum {
                    Some(m) => m,
                    None => {
                        let beam = BeamProfile::new(waist).map_err(|e| field_error("beam.waist_m", e))?;
                        dipole_overlap(&apodize(&beam, &geometry)?)?
                    }
                };
                (Some(mode), apply_strehl(mode, self.budget.strehl)?)
            }
        };
        Ok(Optics {
            theta_min_rad: geometry.theta_min(),
            theta_max_rad: geometry.theta_max(),
            omega: geometry.omega(),
            waist_m: waist,
            eta_mode,
            eta,
        })
    }

    pub fn budget(&self, optics: &Optics) -> Result<CouplingBudget, CliError> {
        CouplingBudget::new(optics.omega, optics.eta, self.budget.loss).map_err(|e| field_error("budget", e))
    }

    pub fn wavepacket(&self) -> Result<IonWavepacket, CliError> {
        let mass = self.ion.atomic_mass_u * ATOMIC_MASS_UNIT - ELECTRON_MASS;
        let gamma = 2.0 * PI * self.transition.linewidth_hz;
        IonWavepacket::doppler_limited(mass, 2.0 * PI * self.ion.trap_frequency_hz, gamma)
            .map_err(|e| field_error("ion", e))
    }

    /// Probe powers in watts.
    pub fn probe_powers(&self) -> Vec<f64> {
        match &self.scan.probe_powers_pw {
            Some(p) => p.iter().map(|v| v * PICOWATT).collect(),
            None => default_probe_schedule(self.measurement.p_quarter_mirror_pw * PICOWATT),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_defaults_match_builtin() {
        assert_eq!(Config::parse(DEFAULTS_JSON).unwrap(), Config::default());
        assert_eq!(Config::parse("{}").unwrap(), Config::default());
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let err = Config::parse(r#"{"mirror": {"focal_lenght_m": 1e-3}}"#).unwrap_err();
        assert!(err.to_string().contains("mirror"), "{err}");
        let err = Config::parse(r#"{"bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = Config::parse(r#"{"mirror": {"reflectivity": 1.5}}"#).unwrap_err();
        assert!(err.to_string().contains("mirror.reflectivity"), "{err}");
        let err = Config::parse(r#"{"beam": {"waist_m": "compute"}}"#).unwrap_err();
        assert!(err.to_string().contains("beam.waist_m"), "{err}");
        let err = Config::parse(r#"{"budget": {"eta": "fast"}}"#).unwrap_err();
        assert!(err.to_string().contains("budget.eta"), "{err}");
    }

    #[test]
    fn keyword_settings() {
        let cfg = Config::parse(r#"{"beam": {"waist_m": 0.004}, "budget": {"eta": "compute"}}"#).unwrap();
        assert_eq!(cfg.beam.waist_m, Setting::Value(0.004));
        let optics = cfg.optics().unwrap();
        let mode = optics.eta_mode.unwrap();
        assert!(mode > 0.95 && mode <= 1.0);
        assert!((optics.eta - mode * 0.87f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn hole_variants() {
        let cfg = Config::parse(r#"{"mirror": {"hole": {"theta_min_rad": 0.0}}}"#).unwrap();
        assert_eq!(cfg.geometry().unwrap().omega(), 0.5);
        let omega = Config::default().geometry().unwrap().omega();
        assert!((omega - 0.49).abs() < 1e-6);
    }

    #[test]
    fn scan_truth_tagging() {
        let cfg = Config::parse(r#"{"scan": {"truth": {"model": "gaussian", "fwhm_x_m": 1.4e-7, "fwhm_y_m": 1.4e-7}}}"#)
            .unwrap();
        assert!(matches!(cfg.scan.truth, Truth::Gaussian { .. }));
        assert_eq!(cfg.probe_powers().len(), 8);
    }
}
