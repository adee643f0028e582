//! Saturation-curve fitting.
//!
//! Detected counts follow `C(p) = t * A * p / (p + P_q)` where `A` is the
//! count rate at full saturation (it absorbs `Gamma/2` and every detection
//! efficiency) and `P_q` the power at which the upper-level population is 1/4.
//! Because `A` is a free parameter, `P_q` does not depend on detection losses.
//!
//! Background is removed before the fit; the residuals are weighted with the
//! propagated Poisson variance (floored at one count) and minimised by
//! Levenberg-Marquardt with Marquardt's diagonal scaling.

use crate::coupling::PowerMeasurement;
use crate::focal::csv_io;
use crate::mirror::MirrorGeometry;
use crate::{Error, Result, PICOWATT};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const CSV_HEADER: [&str; 5] = ["power_pW", "counts", "duration_s", "bg_counts", "bg_duration_s"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Background {
    pub counts: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationPoint {
    /// Power in front of the mirror, W.
    pub power: f64,
    /// Detected counts. Poisson data are integral; noiseless model data need
    /// not be.
    pub counts: f64,
    pub duration: f64,
    pub background: Option<Background>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaturationDataset {
    pub points: Vec<SaturationPoint>,
    /// Used for points without their own background record.
    pub shared_background: Option<Background>,
    pub detuning_delta: f64,
}

impl SaturationDataset {
    pub fn new(points: Vec<SaturationPoint>, detuning_delta: f64) -> Result<Self> {
        let ds = SaturationDataset {
            points,
            shared_background: None,
            detuning_delta,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_shared_background(mut self, bg: Background) -> Result<Self> {
        check_background(&bg)?;
        self.shared_background = Some(bg);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !(p.power >= 0.0 && p.power.is_finite()) {
                return Err(Error::invalid(format!("point {i}: power must be >= 0, got {}", p.power)));
            }
            if !(p.counts >= 0.0 && p.counts.is_finite()) {
                return Err(Error::invalid(format!("point {i}: counts must be >= 0, got {}", p.counts)));
            }
            if !(p.duration > 0.0 && p.duration.is_finite()) {
                return Err(Error::invalid(format!("point {i}: duration must be > 0, got {}", p.duration)));
            }
            if let Some(bg) = &p.background {
                check_background(bg)?;
            }
        }
        if !self.detuning_delta.is_finite() {
            return Err(Error::invalid("detuning must be finite"));
        }
        Ok(())
    }
}

fn check_background(bg: &Background) -> Result<()> {
    if !(bg.counts >= 0.0 && bg.counts.is_finite()) {
        return Err(Error::invalid(format!("background counts must be >= 0, got {}", bg.counts)));
    }
    if !(bg.duration > 0.0 && bg.duration.is_finite()) {
        return Err(Error::invalid(format!("background duration must be > 0, got {}", bg.duration)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectedPoint {
    pub power: f64,
    /// Background-free counts; may be negative.
    pub counts: f64,
    pub variance: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedDataset {
    pub points: Vec<CorrectedPoint>,
    pub detuning_delta: f64,
}

pub fn model_counts(p: f64, asymptote: f64, p_quarter: f64, duration: f64) -> f64 {
    if p.is_infinite() {
        return duration * asymptote;
    }
    duration * asymptote * p / (p + p_quarter)
}

/// Subtracts the duration-scaled background from every point and propagates
/// the Poisson variance of both records.
pub fn subtract_background(raw: &SaturationDataset) -> Result<CorrectedDataset> {
    raw.validate()?;
    let points = raw
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let bg = p
                .background
                .or(raw.shared_background)
                .ok_or_else(|| Error::invalid(format!("point {i} has no background record")))?;
            let scale = p.duration / bg.duration;
            Ok(CorrectedPoint {
                power: p.power,
                counts: p.counts - scale * bg.counts,
                variance: p.counts + scale * scale * bg.counts,
                duration: p.duration,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CorrectedDataset {
        points,
        detuning_delta: raw.detuning_delta,
    })
}

/// Merges points recorded at the same power by summing counts and durations
/// (and their background records), which is exact for Poisson data. Returns
/// the merged dataset and the number of rows folded away.
pub fn merge_duplicate_powers(raw: &SaturationDataset) -> (SaturationDataset, usize) {
    let mut merged: Vec<SaturationPoint> = Vec::with_capacity(raw.points.len());
    let mut folded = 0;
    for p in &raw.points {
        let twin = merged
            .iter_mut()
            .find(|q| q.power == p.power && q.background.is_some() == p.background.is_some());
        match twin {
            Some(q) => {
                q.counts += p.counts;
                q.duration += p.duration;
                if let (Some(a), Some(b)) = (q.background.as_mut(), p.background) {
                    a.counts += b.counts;
                    a.duration += b.duration;
                }
                folded += 1;
            }
            None => merged.push(*p),
        }
    }
    (
        SaturationDataset {
            points: merged,
            shared_background: raw.shared_background,
            detuning_delta: raw.detuning_delta,
        },
        folded,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Adds a constant residual count rate as a third parameter.
    pub floating_offset: bool,
    pub max_iterations: usize,
    /// Convergence threshold on the largest relative parameter step.
    pub step_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            floating_offset: false,
            max_iterations: 200,
            step_tolerance: 1e-8,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

impl Estimate {
    pub fn relative_sigma(&self) -> f64 {
        (self.sigma / self.value).abs()
    }
}

/// Relative `p_quarter` uncertainty above which a fit is flagged as not
/// constraining the saturation power.
pub const WELL_CONSTRAINED_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Saturation power in front of the mirror, W.
    pub p_quarter: Estimate,
    /// Saturated count rate, 1/s.
    pub asymptote: Estimate,
    /// Residual background rate when fitted, 1/s.
    pub offset: Option<Estimate>,
    /// Parameter covariance, ordered (asymptote, p_quarter[, offset]).
    pub covariance: Vec<Vec<f64>>,
    pub chi2_red: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_points: usize,
}

impl FitResult {
    pub fn is_well_constrained(&self) -> bool {
        self.p_quarter.relative_sigma() <= WELL_CONSTRAINED_LIMIT
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary {
            p_quarter_pw: self.p_quarter.value / PICOWATT,
            p_quarter_sigma_pw: self.p_quarter.sigma / PICOWATT,
            asymptote_cps: self.asymptote.value,
            chi2_red: self.chi2_red,
            converged: self.converged,
            iterations: self.iterations,
        }
    }
}

/// JSON view of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    #[serde(rename = "p_quarter_pW")]
    pub p_quarter_pw: f64,
    #[serde(rename = "p_quarter_sigma_pW")]
    pub p_quarter_sigma_pw: f64,
    pub asymptote_cps: f64,
    pub chi2_red: f64,
    pub converged: bool,
    pub iterations: usize,
}

struct Problem {
    points: Vec<CorrectedPoint>,
    inv_sigma: Vec<f64>,
    offset: bool,
}

impl Problem {
    fn n_params(&self) -> usize {
        if self.offset {
            3
        } else {
            2
        }
    }

    /// Model value and gradient for point `i`.
    fn eval(&self, x: &DVector<f64>, pt: &CorrectedPoint) -> (f64, [f64; 3]) {
        let (a, pq) = (x[0], x[1]);
        let b = if self.offset { x[2] } else { 0.0 };
        let t = pt.duration;
        let denom = pt.power + pq;
        let frac = pt.power / denom;
        let m = t * (a * frac + b);
        (m, [t * frac, -t * a * pt.power / (denom * denom), t])
    }

    fn chi2(&self, x: &DVector<f64>) -> f64 {
        self.points
            .iter()
            .zip(&self.inv_sigma)
            .map(|(pt, w)| {
                let r = (pt.counts - self.eval(x, pt).0) * w;
                r * r
            })
            .sum()
    }

    fn normal_equations(&self, x: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, f64) {
        let n = self.n_params();
        let mut normal = DMatrix::zeros(n, n);
        let mut grad = DVector::zeros(n);
        let mut chi2 = 0.0;
        for (pt, w) in self.points.iter().zip(&self.inv_sigma) {
            let (m, d) = self.eval(x, pt);
            let r = (pt.counts - m) * w;
            chi2 += r * r;
            for j in 0..n {
                let jj = d[j] * w;
                grad[j] += jj * r;
                for k in 0..n {
                    normal[(j, k)] += jj * d[k] * w;
                }
            }
        }
        (normal, grad, chi2)
    }

    fn step_scale(&self, x: &DVector<f64>, j: usize) -> f64 {
        match j {
            2 => x[2].abs().max(1e-6 * x[0].abs()),
            _ => x[j].abs(),
        }
    }
}

fn sort_points(points: &mut [CorrectedPoint]) {
    points.sort_by(|a, b| {
        a.power
            .total_cmp(&b.power)
            .then(a.counts.total_cmp(&b.counts))
            .then(a.variance.total_cmp(&b.variance))
            .then(a.duration.total_cmp(&b.duration))
    });
}

pub fn fit_saturation(data: &CorrectedDataset) -> Result<FitResult> {
    fit_saturation_with(data, &FitOptions::default())
}

pub fn fit_saturation_with(data: &CorrectedDataset, opts: &FitOptions) -> Result<FitResult> {
    let mut points = data.points.clone();
    let n_params = if opts.floating_offset { 3 } else { 2 };
    if points.len() < 4.max(n_params + 1) {
        return Err(Error::invalid(format!(
            "need at least {} points to fit, got {}",
            4.max(n_params + 1),
            points.len()
        )));
    }
    for p in &points {
        if !(p.power >= 0.0 && p.power.is_finite() && p.duration > 0.0 && p.variance >= 0.0 && p.counts.is_finite()) {
            return Err(Error::invalid(format!("malformed corrected point {p:?}")));
        }
    }
    // Sorting makes the result independent of input order, bit for bit.
    sort_points(&mut points);

    let positive: Vec<f64> = points.iter().map(|p| p.power).filter(|&p| p > 0.0).collect();
    let (pmin, pmax) = match (positive.first(), positive.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::invalid("no point has positive power")),
    };
    if pmax < 4.0 * pmin {
        return Err(Error::invalid(format!(
            "powers must span at least a factor 4, got {:.3}",
            pmax / pmin
        )));
    }

    let rates: Vec<f64> = points.iter().map(|p| p.counts / p.duration).collect();
    let max_rate = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max_rate > 0.0) {
        return Err(Error::invalid("no positive signal above background"));
    }
    let pq0 = points
        .iter()
        .zip(&rates)
        .find(|(p, &r)| p.power > 0.0 && r > 0.5 * max_rate)
        .map(|(p, _)| p.power)
        .unwrap_or(pmin);

    let inv_sigma = points.iter().map(|p| 1.0 / p.variance.max(1.0).sqrt()).collect();
    let problem = Problem {
        points,
        inv_sigma,
        offset: opts.floating_offset,
    };

    let mut x = DVector::zeros(n_params);
    x[0] = 1.1 * max_rate;
    x[1] = pq0;
    let (mut normal, mut grad, mut chi2) = problem.normal_equations(&x);
    if normal.clone().cholesky().is_none() {
        return Err(Error::SingularNormalMatrix("at the initial guess".into()));
    }

    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let mut damped = normal.clone();
        for j in 0..n_params {
            damped[(j, j)] += lambda * normal[(j, j)];
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= 10.0;
            continue;
        };
        let delta = chol.solve(&grad);
        let rel_step = (0..n_params)
            .map(|j| delta[j].abs() / problem.step_scale(&x, j))
            .fold(0.0, f64::max);
        let trial = &x + &delta;
        let chi2_trial = if trial[0] > 0.0 && trial[1] > 0.0 {
            problem.chi2(&trial)
        } else {
            f64::INFINITY
        };
        if chi2_trial <= chi2 {
            x = trial;
            (normal, grad, chi2) = problem.normal_equations(&x);
            lambda /= 10.0;
            if rel_step < opts.step_tolerance {
                converged = true;
                break;
            }
        } else {
            if rel_step < opts.step_tolerance && lambda <= opts.initial_damping {
                // Already at the minimum to working precision.
                converged = true;
                break;
            }
            lambda *= 10.0;
        }
    }
    if !converged {
        return Err(Error::FitNotConverged {
            iterations,
            p_quarter: x[1],
            asymptote: x[0],
        });
    }

    let covariance = normal
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::SingularNormalMatrix("at the solution".into()))?;
    let est = |j: usize| Estimate {
        value: x[j],
        sigma: covariance[(j, j)].max(0.0).sqrt(),
    };
    let dof = (problem.points.len() - n_params) as f64;
    Ok(FitResult {
        p_quarter: est(1),
        asymptote: est(0),
        offset: opts.floating_offset.then(|| est(2)),
        covariance: (0..n_params)
            .map(|j| (0..n_params).map(|k| covariance[(j, k)]).collect())
            .collect(),
        chi2_red: chi2 / dof,
        converged,
        iterations,
        n_points: problem.points.len(),
    })
}

/// Fitted saturation power referred to the ion, i.e. after one reflection.
pub fn p_quarter_at_ion(fit: &FitResult, geometry: &MirrorGeometry) -> PowerMeasurement {
    let r = geometry.reflectivity();
    PowerMeasurement {
        value: fit.p_quarter.value * r,
        uncertainty: fit.p_quarter.sigma * r,
    }
}

fn parse_field(value: &str, line: usize, column: &str) -> Result<f64> {
    value.trim().parse::<f64>().map_err(|_| Error::Data {
        line,
        message: format!("column {column}: cannot parse {value:?} as a number"),
    })
}

/// Reads a dataset with header `power_pW,counts,duration_s,bg_counts,bg_duration_s`.
/// The two background columns may be left empty together.
pub fn read_csv<R: Read>(input: R, detuning_delta: f64) -> Result<SaturationDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        None => {
            return Err(Error::Data {
                line: 1,
                message: "empty file: expected header".into(),
            })
        }
        Some(r) => r.map_err(|e| Error::Data {
            line: 1,
            message: e.to_string(),
        })?,
    };
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Data {
            line: 1,
            message: format!("expected header {}, got {}", CSV_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut points = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Data {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Data {
                line,
                message: format!("expected {} fields, got {}", CSV_HEADER.len(), rec.len()),
            });
        }
        let power = parse_field(&rec[0], line, CSV_HEADER[0])? * PICOWATT;
        let counts = parse_field(&rec[1], line, CSV_HEADER[1])?;
        let duration = parse_field(&rec[2], line, CSV_HEADER[2])?;
        let background = match (rec[3].is_empty(), rec[4].is_empty()) {
            (true, true) => None,
            (false, false) => Some(Background {
                counts: parse_field(&rec[3], line, CSV_HEADER[3])?,
                duration: parse_field(&rec[4], line, CSV_HEADER[4])?,
            }),
            _ => {
                return Err(Error::Data {
                    line,
                    message: "bg_counts and bg_duration_s must both be set or both be empty".into(),
                })
            }
        };
        let point = SaturationPoint {
            power,
            counts,
            duration,
            background,
        };
        SaturationDataset::new(vec![point], detuning_delta).map_err(|e| Error::Data {
            line,
            message: e.to_string(),
        })?;
        points.push(point);
    }
    if points.is_empty() {
        return Err(Error::Data {
            line: 2,
            message: "no data rows".into(),
        });
    }
    SaturationDataset::new(points, detuning_delta)
}

pub fn write_csv<W: Write>(data: &SaturationDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_io)?;
    for p in &data.points {
        let bg = p.background.or(data.shared_background);
        let (bc, bd) = bg
            .map(|b| (b.counts.to_string(), b.duration.to_string()))
            .unwrap_or_default();
        w.write_record([
            (p.power / PICOWATT).to_string(),
            p.counts.to_string(),
            p.duration.to_string(),
            bc,
            bd,
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    const PQ: f64 = 1081e-12;

    fn log_powers(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect()
    }

    fn noiseless(powers: &[f64], asymptote: f64, pq: f64, t: f64) -> CorrectedDataset {
        CorrectedDataset {
            points: powers
                .iter()
                .map(|&p| {
                    let c = model_counts(p, asymptote, pq, t);
                    CorrectedPoint {
                        power: p,
                        counts: c,
                        variance: c,
                        duration: t,
                    }
                })
                .collect(),
            detuning_delta: 1.0,
        }
    }

    fn poisson_dataset(rng: &mut ChaCha8Rng, powers: &[f64], counts_at_saturation: f64, pq: f64) -> CorrectedDataset {
        let t = 0.1;
        let a = counts_at_saturation / t;
        let raw = SaturationDataset {
            points: powers
                .iter()
                .map(|&p| SaturationPoint {
                    power: p,
                    counts: Poisson::new(model_counts(p, a, pq, t)).unwrap().sample(rng),
                    duration: t,
                    background: Some(Background { counts: 0.0, duration: t }),
                })
                .collect(),
            shared_background: None,
            detuning_delta: 1.0,
        };
        subtract_background(&raw).unwrap()
    }

    #[test]
    fn model_examples() {
        assert_eq!(model_counts(2.0, 100.0, 2.0, 0.5), 25.0);
        assert_eq!(model_counts(f64::INFINITY, 100.0, 2.0, 0.5), 50.0);
        assert_eq!(model_counts(6.0, 100.0, 2.0, 1.0), 75.0);
    }

    #[test]
    fn background_examples() {
        let pt = |counts, bg: Option<Background>| SaturationPoint {
            power: 1e-10,
            counts,
            duration: 0.1,
            background: bg,
        };
        let ds = SaturationDataset::new(vec![pt(1000.0, Some(Background { counts: 100.0, duration: 0.1 }))], 1.0).unwrap();
        let c = subtract_background(&ds).unwrap();
        assert_eq!(c.points[0].counts, 900.0);
        assert_eq!(c.points[0].variance, 1100.0);

        let ds = SaturationDataset::new(vec![pt(1000.0, Some(Background { counts: 0.0, duration: 0.1 }))], 1.0).unwrap();
        let c = subtract_background(&ds).unwrap();
        assert_eq!((c.points[0].counts, c.points[0].variance), (1000.0, 1000.0));

        let ds = SaturationDataset::new(vec![pt(1000.0, Some(Background { counts: 100.0, duration: 0.2 }))], 1.0).unwrap();
        let c = subtract_background(&ds).unwrap();
        assert_eq!(c.points[0].counts, 950.0);
        assert_eq!(c.points[0].variance, 1025.0);

        let ds = SaturationDataset::new(vec![pt(10.0, Some(Background { counts: 50.0, duration: 0.1 }))], 1.0).unwrap();
        assert_eq!(subtract_background(&ds).unwrap().points[0].counts, -40.0);

        let ds = SaturationDataset::new(vec![pt(10.0, None)], 1.0).unwrap();
        assert!(subtract_background(&ds).is_err());
        let shared = ds.with_shared_background(Background { counts: 4.0, duration: 0.1 }).unwrap();
        assert_eq!(subtract_background(&shared).unwrap().points[0].counts, 6.0);
    }

    #[test]
    fn noiseless_recovery() {
        let data = noiseless(&log_powers(12, PQ / 8.0, PQ * 8.0), 5e4, PQ, 0.1);
        let fit = fit_saturation(&data).unwrap();
        assert!(fit.converged);
        assert!((fit.p_quarter.value / PQ - 1.0).abs() < 1e-8, "{:?}", fit);
        assert!((fit.asymptote.value / 5e4 - 1.0).abs() < 1e-8);
        assert!(fit.chi2_red < 1e-12);
        let c = &fit.covariance;
        assert!((c[0][1] - c[1][0]).abs() <= 1e-12 * (c[0][0] * c[1][1]).sqrt());
        assert!(c[0][0] > 0.0 && c[1][1] > 0.0 && c[0][0] * c[1][1] >= c[0][1] * c[0][1]);
    }

    #[test]
    fn floating_offset_recovers_residual_background() {
        let mut data = noiseless(&log_powers(12, PQ / 8.0, PQ * 8.0), 5e4, PQ, 0.1);
        for p in &mut data.points {
            p.counts += 0.1 * 300.0;
        }
        let opts = FitOptions {
            floating_offset: true,
            ..FitOptions::default()
        };
        let fit = fit_saturation_with(&data, &opts).unwrap();
        assert!((fit.p_quarter.value / PQ - 1.0).abs() < 1e-7);
        assert!((fit.offset.unwrap().value - 300.0).abs() < 1e-4);
        assert_eq!(fit.covariance.len(), 3);
    }

    #[test]
    fn poisson_monte_carlo_median_error() {
        let powers = log_powers(12, PQ / 8.0, PQ * 8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut errs: Vec<f64> = (0..100)
            .map(|_| {
                let fit = fit_saturation(&poisson_dataset(&mut rng, &powers, 5000.0, PQ)).unwrap();
                (fit.p_quarter.value / PQ - 1.0).abs()
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        let median = 0.5 * (errs[49] + errs[50]);
        assert!(median < 0.03, "median {median}");
    }

    #[test]
    fn reduced_chi2_is_near_one() {
        // 60 points: the chi2/dof spread is about 0.19, so [0.5, 1.5] holds well
        // above 95 % of the time.
        let powers = log_powers(60, PQ / 8.0, PQ * 8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let inside = (0..100)
            .filter(|_| {
                let fit = fit_saturation(&poisson_dataset(&mut rng, &powers, 5000.0, PQ)).unwrap();
                (0.5..=1.5).contains(&fit.chi2_red)
            })
            .count();
        assert!(inside >= 95, "{inside}");
    }

    #[test]
    fn low_power_data_is_flagged() {
        let powers = log_powers(10, PQ / 1000.0, PQ / 200.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = poisson_dataset(&mut rng, &powers, 5000.0, PQ);
        match fit_saturation(&data) {
            Ok(fit) => assert!(!fit.is_well_constrained(), "{fit:?}"),
            Err(e) => assert!(matches!(e, Error::FitNotConverged { .. } | Error::SingularNormalMatrix(_))),
        }
    }

    #[test]
    fn rejects_too_little_data() {
        let data = noiseless(&log_powers(3, PQ / 8.0, PQ * 8.0), 5e4, PQ, 0.1);
        assert!(matches!(fit_saturation(&data), Err(Error::InvalidInput(_))));
        let narrow = noiseless(&log_powers(8, PQ, PQ * 2.0), 5e4, PQ, 0.1);
        assert!(matches!(fit_saturation(&narrow), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn quarter_power_at_ion() {
        let data = noiseless(&log_powers(12, PQ / 8.0, PQ * 8.0), 5e4, PQ, 0.1);
        let mut fit = fit_saturation(&data).unwrap();
        fit.p_quarter.sigma = 31.25e-12;
        let at_ion = p_quarter_at_ion(&fit, &MirrorGeometry::yb_reference());
        assert!((at_ion.value - 691.84e-12).abs() < 1e-17);
        assert!((at_ion.uncertainty - 20e-12).abs() < 1e-20);
        let ideal = MirrorGeometry::new(2.1e-3, 0.0, 1.5, 1.0).unwrap();
        assert_eq!(p_quarter_at_ion(&fit, &ideal).value, fit.p_quarter.value);
    }

    #[test]
    fn merges_duplicate_powers() {
        let pt = |p: f64, c: f64| SaturationPoint {
            power: p,
            counts: c,
            duration: 0.1,
            background: Some(Background { counts: 10.0, duration: 0.1 }),
        };
        let ds = SaturationDataset::new(vec![pt(1e-10, 100.0), pt(2e-10, 150.0), pt(1e-10, 100.0)], 1.0).unwrap();
        let (merged, folded) = merge_duplicate_powers(&ds);
        assert_eq!(folded, 1);
        assert_eq!(merged.points.len(), 2);
        assert_eq!(merged.points[0].counts, 200.0);
        assert_eq!(merged.points[0].duration, 0.2);
        assert_eq!(merged.points[0].background.unwrap().counts, 20.0);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        assert!(matches!(read_csv("".as_bytes(), 1.0), Err(Error::Data { line: 1, .. })));
        assert!(matches!(read_csv("a,b\n".as_bytes(), 1.0), Err(Error::Data { line: 1, .. })));
        let bad = "power_pW,counts,duration_s,bg_counts,bg_duration_s\n100,5,0.1,1,0.1\n200,x,0.1,1,0.1\n";
        match read_csv(bad.as_bytes(), 1.0) {
            Err(Error::Data { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let negative = "power_pW,counts,duration_s,bg_counts,bg_duration_s\n100,5,-0.1,1,0.1\n";
        assert!(matches!(read_csv(negative.as_bytes(), 1.0), Err(Error::Data { line: 2, .. })));
        let header_only = "power_pW,counts,duration_s,bg_counts,bg_duration_s\n";
        assert!(matches!(read_csv(header_only.as_bytes(), 1.0), Err(Error::Data { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let text = "power_pW,counts,duration_s,bg_counts,bg_duration_s\n100,5,0.1,1,0.1\n250.5,17,0.1,,\n";
        let ds = read_csv(text.as_bytes(), 1.0).unwrap();
        assert_eq!(ds.points.len(), 2);
        assert!(ds.points[1].background.is_none());
        assert!((ds.points[1].power - 250.5e-12).abs() < 1e-24);
        let mut out = Vec::new();
        write_csv(&ds, &mut out).unwrap();
        let back = read_csv(out.as_slice(), 1.0).unwrap();
        assert_eq!(back.points.len(), 2);
        for (a, b) in ds.points.iter().zip(&back.points) {
            assert!((a.power - b.power).abs() <= 1e-15 * a.power);
            assert_eq!(a.counts, b.counts);
        }
    }

    #[test]
    fn summary_field_names() {
        let data = noiseless(&log_powers(12, PQ / 8.0, PQ * 8.0), 5e4, PQ, 0.1);
        let json = serde_json::to_value(fit_saturation(&data).unwrap().summary()).unwrap();
        for key in ["p_quarter_pW", "p_quarter_sigma_pW", "asymptote_cps", "chi2_red", "converged", "iterations"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert!((json["p_quarter_pW"].as_f64().unwrap() - 1081.0).abs() < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn power_rescaling(seed in 0u64..1000, k in 1e-3f64..1e3) {
            let powers = log_powers(12, PQ / 8.0, PQ * 8.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = poisson_dataset(&mut rng, &powers, 5000.0, PQ);
            let mut scaled = data.clone();
            scaled.points.iter_mut().for_each(|p| p.power *= k);
            let a = fit_saturation(&data).unwrap();
            let b = fit_saturation(&scaled).unwrap();
            prop_assert!((b.p_quarter.value / (k * a.p_quarter.value) - 1.0).abs() < 1e-8);
            prop_assert!((b.asymptote.value / a.asymptote.value - 1.0).abs() < 1e-8);
        }

        #[test]
        fn count_rescaling(seed in 0u64..1000, k in 1.0f64..1e3) {
            // Detection efficiency enters counts and their variance together.
            let powers = log_powers(12, PQ / 8.0, PQ * 8.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = poisson_dataset(&mut rng, &powers, 5000.0, PQ);
            let mut scaled = data.clone();
            scaled.points.iter_mut().for_each(|p| {
                p.counts *= k;
                p.variance *= k;
            });
            let a = fit_saturation(&data).unwrap();
            let b = fit_saturation(&scaled).unwrap();
            prop_assert!((b.p_quarter.value / a.p_quarter.value - 1.0).abs() < 1e-8);
            prop_assert!((b.asymptote.value / (k * a.asymptote.value) - 1.0).abs() < 1e-8);
        }

        #[test]
        fn order_independent(seed in 0u64..1000, rot in 0usize..12) {
            let powers = log_powers(12, PQ / 8.0, PQ * 8.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = poisson_dataset(&mut rng, &powers, 5000.0, PQ);
            let mut shuffled = data.clone();
            shuffled.points.rotate_left(rot);
            shuffled.points.reverse();
            prop_assert_eq!(fit_saturation(&data).unwrap(), fit_saturation(&shuffled).unwrap());
        }
    }
}
