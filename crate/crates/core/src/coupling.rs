//! Coupling-efficiency bookkeeping.
//!
//! The efficiency of a focusing geometry is `G = Omega eta^2 (1 - L)`. It is
//! measured as the ratio of the minimal saturation power (perfect coupling)
//! to the power actually needed at the ion.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("{name} must be in [0, 1], got {v}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingBudget {
    pub omega: f64,
    pub eta: f64,
    pub loss: f64,
}

impl CouplingBudget {
    pub fn new(omega: f64, eta: f64, loss: f64) -> Result<Self> {
        check_fraction("omega", omega)?;
        check_fraction("eta", eta)?;
        check_fraction("loss", loss)?;
        Ok(CouplingBudget { omega, eta, loss })
    }

    pub fn efficiency(&self) -> f64 {
        budget_efficiency(self)
    }
}

pub fn budget_efficiency(b: &CouplingBudget) -> f64 {
    b.omega * b.eta * b.eta * (1.0 - b.loss)
}

/// A power with its 1-sigma uncertainty, in watts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerMeasurement {
    pub value: f64,
    pub uncertainty: f64,
}

impl PowerMeasurement {
    pub fn new(value: f64, uncertainty: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::invalid(format!("power must be positive, got {value}")));
        }
        if !(uncertainty >= 0.0 && uncertainty.is_finite()) {
            return Err(Error::invalid(format!("uncertainty must be >= 0, got {uncertainty}")));
        }
        Ok(PowerMeasurement { value, uncertainty })
    }

    pub fn exact(value: f64) -> Result<Self> {
        Self::new(value, 0.0)
    }

    pub fn relative_uncertainty(&self) -> f64 {
        self.uncertainty / self.value
    }
}

/// Measured efficiency with the separate first-order contributions of the two
/// input uncertainties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    pub value: f64,
    pub uncertainty: f64,
    pub from_minimal_power: f64,
    pub from_measured_power: f64,
}

pub fn efficiency_from_powers(p_min: PowerMeasurement, p_exp: PowerMeasurement) -> Result<Efficiency> {
    if !(p_exp.value > 0.0) {
        return Err(Error::invalid(format!("measured power must be positive, got {}", p_exp.value)));
    }
    if !(p_min.value > 0.0) {
        return Err(Error::invalid(format!("minimal power must be positive, got {}", p_min.value)));
    }
    let g = p_min.value / p_exp.value;
    let from_min = g * p_min.relative_uncertainty();
    let from_exp = g * p_exp.relative_uncertainty();
    Ok(Efficiency {
        value: g,
        uncertainty: from_min.hypot(from_exp),
        from_minimal_power: from_min,
        from_measured_power: from_exp,
    })
}

/// Residual loss `L` that reconciles a measured efficiency with the geometric
/// and mode-overlap factors.
pub fn infer_loss(g_measured: f64, omega: f64, eta: f64) -> Result<f64> {
    let bound = omega * eta * eta;
    if !(bound > 0.0) {
        return Err(Error::invalid("omega * eta^2 must be positive"));
    }
    if !(g_measured >= 0.0) {
        return Err(Error::invalid(format!("measured efficiency must be >= 0, got {g_measured}")));
    }
    if g_measured > bound {
        return Err(Error::InconsistentBudget {
            measured: g_measured,
            bound,
        });
    }
    Ok(1.0 - g_measured / bound)
}

/// Inputs, derived quantities and provenance of a coupling analysis; the
/// payload of the `coupling-report` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub inputs: ReportInputs,
    pub derived: ReportDerived,
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportInputs {
    pub p_min_pw: f64,
    pub p_exp_pw: f64,
    pub p_exp_sigma_pw: f64,
    pub budget: CouplingBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ReportDerived {
    pub G_measured: f64,
    pub G_measured_sigma: f64,
    /// Uncertainty contributions keyed by source.
    pub G_sigma_contributions: BTreeMap<String, f64>,
    pub G_expected: f64,
    /// `None` when the measured efficiency exceeds `Omega eta^2`.
    pub L_inferred: Option<f64>,
}

impl CouplingReport {
    /// `extra_sigma` lists additional relative uncertainties on the measured
    /// power (such as the fit statistics) that are combined in quadrature with
    /// the contributions already carried by `p_exp`.
    pub fn build(
        p_min: PowerMeasurement,
        p_exp: PowerMeasurement,
        budget: CouplingBudget,
        extra_sigma: &[(String, f64)],
        provenance: Vec<String>,
    ) -> Result<Self> {
        let eff = efficiency_from_powers(p_min, p_exp)?;
        let mut contributions = BTreeMap::from([
            ("minimal_power".to_string(), eff.from_minimal_power),
            ("measured_power".to_string(), eff.from_measured_power),
        ]);
        contributions.extend(extra_sigma.iter().map(|(k, rel)| (k.clone(), rel * eff.value)));
        let sigma = contributions.values().map(|s| s * s).sum::<f64>().sqrt();
        let pw = crate::PICOWATT;
        Ok(CouplingReport {
            inputs: ReportInputs {
                p_min_pw: p_min.value / pw,
                p_exp_pw: p_exp.value / pw,
                p_exp_sigma_pw: p_exp.uncertainty / pw,
                budget,
            },
            derived: ReportDerived {
                G_measured: eff.value,
                G_measured_sigma: sigma,
                G_sigma_contributions: contributions,
                G_expected: budget.efficiency(),
                L_inferred: infer_loss(eff.value, budget.omega, budget.eta).ok(),
            },
            provenance,
        })
    }
}
