//! Saturation-based focal scans.
//!
//! At each pixel the ion sees the local intensity `I` (peak-normalised), so the
//! power needed for a quarter population is `P_q(peak) / I`. A scan records a
//! short saturation curve per pixel; the reconstructed map is the inverse of
//! the fitted `P_q`, normalised to its maximum. Detection efficiency drops out
//! because each pixel fits its own asymptote.

use crate::constants::{BOLTZMANN, HBAR};
use crate::focal::{csv_io, fwhm_1d, FocalField};
use crate::satfit::{
    fit_saturation, model_counts, subtract_background, Background, FitResult, SaturationDataset, SaturationPoint,
};
use crate::{Error, Result, PICOWATT};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};

/// `FWHM = FWHM_PER_SIGMA * sigma` for a Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

pub const FORWARD_CSV_HEADER: [&str; 9] = [
    "ix",
    "iy",
    "x_m",
    "y_m",
    "power_pW",
    "counts",
    "duration_s",
    "bg_counts",
    "bg_duration_s",
];
pub const MAP_CSV_HEADER: [&str; 7] = ["ix", "iy", "x_m", "y_m", "p_quarter_pW", "sigma_pW", "ok"];

fn coordinate(origin: f64, pitch: f64, n: usize, i: usize) -> f64 {
    origin + (i as f64 - (n as f64 - 1.0) / 2.0) * pitch
}

/// Row-major 2D grid of intensities, `values[iy * nx + ix]`. Pixel centres sit
/// symmetrically about `origin`. One-dimensional scans use `ny = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityGrid {
    pub nx: usize,
    pub ny: usize,
    pub pitch: f64,
    pub origin: [f64; 2],
    pub values: Vec<f64>,
}

impl IntensityGrid {
    pub fn new(nx: usize, ny: usize, pitch: f64, origin: [f64; 2], values: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid("grid dimensions must be >= 1"));
        }
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(Error::invalid(format!("pitch must be positive, got {pitch}")));
        }
        if values.len() != nx * ny {
            return Err(Error::invalid(format!(
                "expected {} values for a {nx}x{ny} grid, got {}",
                nx * ny,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid values must be finite"));
        }
        Ok(IntensityGrid {
            nx,
            ny,
            pitch,
            origin,
            values,
        })
    }

    /// Samples `f(x, y)` on a centred grid.
    pub fn from_fn(nx: usize, ny: usize, pitch: f64, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                values.push(f(coordinate(0.0, pitch, nx, ix), coordinate(0.0, pitch, ny, iy)));
            }
        }
        Self::new(nx, ny, pitch, [0.0, 0.0], values)
    }

    /// The x-y plane `iz` of a focal field.
    pub fn from_field_plane(field: &FocalField, iz: usize) -> Result<Self> {
        let g = &field.grid;
        if iz >= g.nz {
            return Err(Error::invalid(format!("plane {iz} outside grid with nz = {}", g.nz)));
        }
        let values = (0..g.ny)
            .flat_map(|iy| (0..g.nx).map(move |ix| (ix, iy)))
            .map(|(ix, iy)| field.at(ix, iy, iz))
            .collect();
        Self::new(g.nx, g.ny, g.pitch, [g.origin[0], g.origin[1]], values)
    }

    /// A line of a focal field along `axis` (0, 1, 2 for x, y, z) as a 1D grid.
    pub fn from_field_line(field: &FocalField, axis: usize, through: (usize, usize, usize)) -> Result<Self> {
        if axis > 2 {
            return Err(Error::invalid(format!("axis must be 0, 1 or 2, got {axis}")));
        }
        let profile = field.profile(axis, through);
        let values: Vec<f64> = profile.iter().map(|&(_, v)| v).collect();
        let n = values.len();
        Self::new(n, 1, field.grid.pitch, [field.grid.origin[axis], 0.0], values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    pub fn x(&self, ix: usize) -> f64 {
        coordinate(self.origin[0], self.pitch, self.nx, ix)
    }

    pub fn y(&self, iy: usize) -> f64 {
        coordinate(self.origin[1], self.pitch, self.ny, iy)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn argmax(&self) -> (usize, usize) {
        argmax_masked(self, |_| true).expect("grid is never empty")
    }

    /// Copy scaled so the maximum is one.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.max();
        if !(m > 0.0) {
            return Err(Error::invalid("grid has no positive value to normalise by"));
        }
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v /= m);
        Ok(out)
    }

    /// Central `nx` by `ny` window; both parities must match the grid's so
    /// the window stays centred on `origin`.
    pub fn crop_center(&self, nx: usize, ny: usize) -> Result<Self> {
        if nx > self.nx || ny > self.ny || !(self.nx - nx).is_multiple_of(2) || !(self.ny - ny).is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "cannot crop {}x{} to a centred {nx}x{ny} window",
                self.nx, self.ny
            )));
        }
        let (ox, oy) = ((self.nx - nx) / 2, (self.ny - ny) / 2);
        let values = (0..ny)
            .flat_map(|iy| (0..nx).map(move |ix| (ix, iy)))
            .map(|(ix, iy)| self.at(ix + ox, iy + oy))
            .collect();
        Self::new(nx, ny, self.pitch, self.origin, values)
    }

    /// Cut along x (`axis = 0`) or y (`axis = 1`) through pixel `through`.
    pub fn cut(&self, axis: usize, through: (usize, usize)) -> Vec<(f64, f64)> {
        match axis {
            0 => (0..self.nx).map(|ix| (self.x(ix), self.at(ix, through.1))).collect(),
            _ => (0..self.ny).map(|iy| (self.y(iy), self.at(through.0, iy))).collect(),
        }
    }
}

fn argmax_masked(grid: &IntensityGrid, keep: impl Fn(usize) -> bool) -> Option<(usize, usize)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in grid.values.iter().enumerate() {
        if keep(i) && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| (i % grid.nx, i / grid.nx))
}

/// Kernel radius in pixels for a Gaussian of width `sigma`.
pub fn kernel_radius(sigma: f64, pitch: f64) -> usize {
    (4.0 * sigma / pitch).ceil() as usize
}

fn gaussian_kernel(sigma: f64, pitch: f64) -> Vec<f64> {
    let r = kernel_radius(sigma, pitch) as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|j| {
            let x = j as f64 * pitch / sigma;
            (-0.5 * x * x).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

fn convolve_axis(values: &[f64], nx: usize, ny: usize, kernel: &[f64], along_x: bool) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; values.len()];
    for iy in 0..ny {
        for ix in 0..nx {
            let mut acc = 0.0;
            for (j, w) in kernel.iter().enumerate() {
                let off = j as i64 - r;
                let (sx, sy) = if along_x {
                    (ix as i64 + off, iy as i64)
                } else {
                    (ix as i64, iy as i64 + off)
                };
                if sx >= 0 && sy >= 0 && (sx as usize) < nx && (sy as usize) < ny {
                    acc += w * values[sy as usize * nx + sx as usize];
                }
            }
            out[iy * nx + ix] = acc;
        }
    }
    out
}

/// Convolves with an isotropic Gaussian of standard deviation `sigma`,
/// truncated at `4 sigma` and renormalised. Outside the grid the input is
/// taken as zero. A grid with `ny = 1` is blurred along x only.
pub fn blur_map(grid: &IntensityGrid, sigma: f64) -> Result<IntensityGrid> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("blur sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(grid.clone());
    }
    let r = kernel_radius(sigma, grid.pitch);
    if r > grid.nx.max(grid.ny) {
        return Err(Error::invalid(format!(
            "blur kernel radius of {r} pixels exceeds the {}x{} grid",
            grid.nx, grid.ny
        )));
    }
    let kernel = gaussian_kernel(sigma, grid.pitch);
    let mut values = convolve_axis(&grid.values, grid.nx, grid.ny, &kernel, true);
    if grid.ny > 1 {
        values = convolve_axis(&values, grid.nx, grid.ny, &kernel, false);
    }
    Ok(IntensityGrid {
        values,
        ..grid.clone()
    })
}

/// Gaussian-equivalent blur FWHM that widens `predicted` to `measured`.
pub fn required_blur(measured_fwhm: f64, predicted_fwhm: f64) -> Result<f64> {
    if !(measured_fwhm > 0.0 && predicted_fwhm >= 0.0) {
        return Err(Error::invalid(format!(
            "widths must be positive, got measured {measured_fwhm}, predicted {predicted_fwhm}"
        )));
    }
    if measured_fwhm < predicted_fwhm {
        return Err(Error::NoBlurNeeded {
            measured: measured_fwhm,
            predicted: predicted_fwhm,
        });
    }
    Ok(((measured_fwhm - predicted_fwhm) * (measured_fwhm + predicted_fwhm)).sqrt())
}

pub fn doppler_temperature(gamma: f64) -> f64 {
    HBAR * gamma / (2.0 * BOLTZMANN)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonWavepacket {
    mass: f64,
    trap_frequency: f64,
    temperature: f64,
}

impl IonWavepacket {
    /// `trap_frequency` is angular, rad/s.
    pub fn new(mass: f64, trap_frequency: f64, temperature: f64) -> Result<Self> {
        for (name, v) in [("mass", mass), ("trap frequency", trap_frequency), ("temperature", temperature)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(IonWavepacket {
            mass,
            trap_frequency,
            temperature,
        })
    }

    pub fn doppler_limited(mass: f64, trap_frequency: f64, gamma: f64) -> Result<Self> {
        Self::new(mass, trap_frequency, doppler_temperature(gamma))
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn trap_frequency(&self) -> f64 {
        self.trap_frequency
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn sigma(&self) -> f64 {
        thermal_sigma(self)
    }
}

/// Position spread of a classical thermal oscillator.
pub fn thermal_sigma(w: &IonWavepacket) -> f64 {
    (BOLTZMANN * w.temperature / w.mass).sqrt() / w.trap_frequency
}

/// Eight log-spaced powers from `nominal / 8` to `8 nominal`.
pub fn default_probe_schedule(nominal: f64) -> Vec<f64> {
    (0..8).map(|i| nominal / 8.0 * 64f64.powf(i as f64 / 7.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSettings {
    /// Powers at the mirror, W.
    pub probe_powers: Vec<f64>,
    /// Quarter-population power at the intensity maximum, W.
    pub peak_p_quarter: f64,
    /// Saturated count rate at unit detection efficiency, 1/s.
    pub asymptote: f64,
    pub duration: f64,
    pub background_rate: f64,
    /// Per-pixel multiplier on `asymptote`, row-major like the grid.
    pub efficiency: Option<Vec<f64>>,
    /// Emit expected counts instead of Poisson draws.
    pub noiseless: bool,
}

impl ScanSettings {
    pub fn new(peak_p_quarter: f64, counts_at_saturation: f64, duration: f64) -> Self {
        ScanSettings {
            probe_powers: default_probe_schedule(peak_p_quarter),
            peak_p_quarter,
            asymptote: counts_at_saturation / duration,
            duration,
            background_rate: 0.0,
            efficiency: None,
            noiseless: false,
        }
    }

    fn validate(&self, n_pixels: usize) -> Result<()> {
        if self.probe_powers.is_empty() || self.probe_powers.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::invalid("probe powers must be positive and non-empty"));
        }
        for (name, v) in [
            ("peak P_q", self.peak_p_quarter),
            ("asymptote", self.asymptote),
            ("duration", self.duration),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.background_rate >= 0.0 && self.background_rate.is_finite()) {
            return Err(Error::invalid("background rate must be >= 0"));
        }
        if let Some(eff) = &self.efficiency {
            if eff.len() != n_pixels {
                return Err(Error::invalid(format!(
                    "efficiency field has {} entries for {n_pixels} pixels",
                    eff.len()
                )));
            }
            if eff.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(Error::invalid("efficiency field must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelData {
    pub ix: usize,
    pub iy: usize,
    pub x: f64,
    pub y: f64,
    /// False where the true intensity is zero and no saturation is reachable.
    pub fittable: bool,
    pub data: SaturationDataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardScan {
    pub nx: usize,
    pub ny: usize,
    pub pitch: f64,
    pub origin: [f64; 2],
    pub pixels: Vec<PixelData>,
}

fn draw(rng: &mut ChaCha8Rng, mean: f64, noiseless: bool) -> f64 {
    if noiseless {
        mean
    } else if mean > 0.0 {
        Poisson::new(mean).expect("finite positive mean").sample(rng)
    } else {
        0.0
    }
}

/// Simulates a saturation measurement at every pixel of `truth`, which must
/// be peak-normalised. Pixel `k` draws from stream `k` of a generator seeded
/// with `seed`, so the result does not depend on evaluation order.
pub fn forward_scan(truth: &IntensityGrid, settings: &ScanSettings, seed: u64) -> Result<ForwardScan> {
    settings.validate(truth.len())?;
    let m = truth.max();
    if (m - 1.0).abs() > 1e-9 || truth.values.iter().any(|v| *v < 0.0) {
        return Err(Error::invalid(format!(
            "truth must be non-negative with maximum 1, got maximum {m}"
        )));
    }
    let pixels = (0..truth.len())
        .into_par_iter()
        .map(|k| {
            let (ix, iy) = (k % truth.nx, k / truth.nx);
            let intensity = truth.values[k];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let asymptote = settings.asymptote * settings.efficiency.as_ref().map_or(1.0, |e| e[k]);
            let p_quarter = settings.peak_p_quarter / intensity;
            let t = settings.duration;
            let points = settings
                .probe_powers
                .iter()
                .map(|&p| {
                    let signal = if intensity > 0.0 { model_counts(p, asymptote, p_quarter, t) } else { 0.0 };
                    let bg_mean = settings.background_rate * t;
                    SaturationPoint {
                        power: p,
                        counts: draw(&mut rng, signal + bg_mean, settings.noiseless),
                        duration: t,
                        background: Some(Background {
                            counts: draw(&mut rng, bg_mean, settings.noiseless),
                            duration: t,
                        }),
                    }
                })
                .collect();
            PixelData {
                ix,
                iy,
                x: truth.x(ix),
                y: truth.y(iy),
                fittable: intensity > 0.0,
                data: SaturationDataset {
                    points,
                    shared_background: None,
                    detuning_delta: 0.0,
                },
            }
        })
        .collect();
    Ok(ForwardScan {
        nx: truth.nx,
        ny: truth.ny,
        pitch: truth.pitch,
        origin: truth.origin,
        pixels,
    })
}

impl ForwardScan {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(FORWARD_CSV_HEADER).map_err(csv_io)?;
        for px in &self.pixels {
            for p in &px.data.points {
                let bg = p.background.or(px.data.shared_background);
                let (bc, bd) = bg
                    .map(|b| (b.counts.to_string(), b.duration.to_string()))
                    .unwrap_or_default();
                w.write_record([
                    px.ix.to_string(),
                    px.iy.to_string(),
                    px.x.to_string(),
                    px.y.to_string(),
                    (p.power / PICOWATT).to_string(),
                    p.counts.to_string(),
                    p.duration.to_string(),
                    bc,
                    bd,
                ])
                .map_err(csv_io)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the per-probe CSV written by [`ForwardScan::write_csv`]. Grid
    /// size, pitch and origin are inferred from the pixel indices and
    /// coordinates.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let data_err = |line: usize, message: String| Error::Data { line, message };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut records = reader.records();
        let header = records
            .next()
            .ok_or_else(|| data_err(1, "empty file: expected header".into()))?
            .map_err(|e| data_err(1, e.to_string()))?;
        if header.iter().collect::<Vec<_>>() != FORWARD_CSV_HEADER {
            return Err(data_err(1, format!("expected header {}", FORWARD_CSV_HEADER.join(","))));
        }
        let mut pixels: BTreeMap<(usize, usize), PixelData> = BTreeMap::new();
        for (i, rec) in records.enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| data_err(line, e.to_string()))?;
            if rec.len() != FORWARD_CSV_HEADER.len() {
                return Err(data_err(line, format!("expected {} fields, got {}", FORWARD_CSV_HEADER.len(), rec.len())));
            }
            let int = |j: usize| {
                rec[j]
                    .parse::<usize>()
                    .map_err(|_| data_err(line, format!("column {}: cannot parse {:?}", FORWARD_CSV_HEADER[j], &rec[j])))
            };
            let num = |j: usize| {
                rec[j]
                    .parse::<f64>()
                    .map_err(|_| data_err(line, format!("column {}: cannot parse {:?}", FORWARD_CSV_HEADER[j], &rec[j])))
            };
            let (ix, iy, x, y) = (int(0)?, int(1)?, num(2)?, num(3)?);
            let background = match (rec[7].is_empty(), rec[8].is_empty()) {
                (true, true) => None,
                (false, false) => Some(Background {
                    counts: num(7)?,
                    duration: num(8)?,
                }),
                _ => return Err(data_err(line, "bg_counts and bg_duration_s must both be set or both be empty".into())),
            };
            let point = SaturationPoint {
                power: num(4)? * PICOWATT,
                counts: num(5)?,
                duration: num(6)?,
                background,
            };
            SaturationDataset::new(vec![point], 0.0).map_err(|e| data_err(line, e.to_string()))?;
            let px = pixels.entry((iy, ix)).or_insert_with(|| PixelData {
                ix,
                iy,
                x,
                y,
                fittable: true,
                data: SaturationDataset {
                    points: Vec::new(),
                    shared_background: None,
                    detuning_delta: 0.0,
                },
            });
            if px.x != x || px.y != y {
                return Err(data_err(line, format!("pixel ({ix}, {iy}) has inconsistent coordinates")));
            }
            px.data.points.push(point);
        }
        if pixels.is_empty() {
            return Err(data_err(2, "no data rows".into()));
        }
        let nx = pixels.values().map(|p| p.ix).max().unwrap() + 1;
        let ny = pixels.values().map(|p| p.iy).max().unwrap() + 1;
        if pixels.len() != nx * ny {
            return Err(data_err(0, format!("expected {} pixels for a {nx}x{ny} grid, found {}", nx * ny, pixels.len())));
        }
        let corner = &pixels[&(0, 0)];
        let pitch = if nx > 1 {
            (pixels[&(0, nx - 1)].x - corner.x) / (nx - 1) as f64
        } else if ny > 1 {
            (pixels[&(ny - 1, 0)].y - corner.y) / (ny - 1) as f64
        } else {
            return Err(data_err(0, "cannot infer the pitch of a single-pixel scan".into()));
        };
        if !(pitch > 0.0) {
            return Err(data_err(0, format!("pixel coordinates must increase with index, pitch {pitch}")));
        }
        let origin = [
            corner.x + (nx as f64 - 1.0) / 2.0 * pitch,
            if ny > 1 { corner.y + (ny as f64 - 1.0) / 2.0 * pitch } else { corner.y },
        ];
        let mut pixels: Vec<PixelData> = pixels.into_values().collect();
        for px in &mut pixels {
            px.fittable = px.data.points.iter().any(|p| p.counts > p.background.map_or(0.0, |b| b.counts));
        }
        Ok(ForwardScan {
            nx,
            ny,
            pitch,
            origin,
            pixels,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelFit {
    /// Fitted quarter-population power at the mirror, W; NaN when the fit failed.
    pub p_quarter: f64,
    pub sigma: f64,
    pub ok: bool,
    /// `min P_q / P_q`, so the brightest fitted pixel is one.
    pub intensity: f64,
    pub intensity_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanMap {
    pub nx: usize,
    pub ny: usize,
    pub pitch: f64,
    pub origin: [f64; 2],
    pub pixels: Vec<PixelFit>,
    /// Smallest fitted `P_q`, which maps to unit intensity, W.
    pub normalization: f64,
}

/// Fits every pixel and normalises the inverse saturation powers. Pixels
/// whose fit fails are flagged, not filled in. The normalisation uses only
/// fits that constrain `P_q`, so a noisy dim pixel cannot set the scale.
pub fn reconstruct_scan(scan: &ForwardScan) -> Result<ScanMap> {
    if scan.pixels.len() != scan.nx * scan.ny {
        return Err(Error::invalid("pixel count does not match grid size"));
    }
    let fits: Vec<Option<FitResult>> = scan
        .pixels
        .par_iter()
        .map(|px| {
            if !px.fittable {
                return None;
            }
            let fit = subtract_background(&px.data).and_then(|c| fit_saturation(&c)).ok()?;
            fit.converged.then_some(fit)
        })
        .collect();
    let min_over = |strict: bool| {
        fits.iter()
            .flatten()
            .filter(|f| !strict || f.is_well_constrained())
            .map(|f| f.p_quarter.value)
            .fold(f64::INFINITY, f64::min)
    };
    let mut normalization = min_over(true);
    if !normalization.is_finite() {
        normalization = min_over(false);
    }
    if !normalization.is_finite() {
        return Err(Error::EmptyMap);
    }
    let pixels = fits
        .into_iter()
        .map(|f| match f {
            Some(fit) => {
                let (p, s) = (fit.p_quarter.value, fit.p_quarter.sigma);
                PixelFit {
                    p_quarter: p,
                    sigma: s,
                    ok: true,
                    intensity: normalization / p,
                    intensity_sigma: normalization / p * s / p,
                }
            }
            None => PixelFit {
                p_quarter: f64::NAN,
                sigma: f64::NAN,
                ok: false,
                intensity: 0.0,
                intensity_sigma: f64::NAN,
            },
        })
        .collect();
    Ok(ScanMap {
        nx: scan.nx,
        ny: scan.ny,
        pitch: scan.pitch,
        origin: scan.origin,
        pixels,
        normalization,
    })
}

impl ScanMap {
    pub fn x(&self, ix: usize) -> f64 {
        coordinate(self.origin[0], self.pitch, self.nx, ix)
    }

    pub fn y(&self, iy: usize) -> f64 {
        coordinate(self.origin[1], self.pitch, self.ny, iy)
    }

    pub fn at(&self, ix: usize, iy: usize) -> &PixelFit {
        &self.pixels[iy * self.nx + ix]
    }

    pub fn ok_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.ok).count()
    }

    /// Normalised intensities with failed pixels set to zero.
    pub fn intensity_grid(&self) -> IntensityGrid {
        IntensityGrid {
            nx: self.nx,
            ny: self.ny,
            pitch: self.pitch,
            origin: self.origin,
            values: self.pixels.iter().map(|p| p.intensity).collect(),
        }
    }

    pub fn peak(&self) -> (usize, usize) {
        argmax_masked(&self.intensity_grid(), |k| self.pixels[k].ok).expect("a scan map has at least one fitted pixel")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(MAP_CSV_HEADER).map_err(csv_io)?;
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let p = self.at(ix, iy);
                w.write_record([
                    ix.to_string(),
                    iy.to_string(),
                    self.x(ix).to_string(),
                    self.y(iy).to_string(),
                    (p.p_quarter / PICOWATT).to_string(),
                    (p.sigma / PICOWATT).to_string(),
                    (p.ok as u8).to_string(),
                ])
                .map_err(csv_io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// FWHM along x (`axis = 0`) or y (`axis = 1`) through the brightest fitted
/// pixel. Failed pixels are left out of the cut.
pub fn map_fwhm_axis(map: &ScanMap, axis: usize) -> Result<f64> {
    let n = if axis == 0 { map.nx } else { map.ny };
    if n < 3 {
        return Err(Error::invalid(format!("axis {axis} has only {n} pixels")));
    }
    let peak = map.peak();
    let grid = map.intensity_grid();
    let cut: Vec<(f64, f64)> = grid
        .cut(axis, peak)
        .into_iter()
        .enumerate()
        .filter(|&(i, _)| {
            let (ix, iy) = if axis == 0 { (i, peak.1) } else { (peak.0, i) };
            map.at(ix, iy).ok
        })
        .map(|(_, s)| s)
        .collect();
    fwhm_1d(&cut)
}

pub fn map_fwhm(map: &ScanMap) -> Result<(f64, f64)> {
    Ok((map_fwhm_axis(map, 0)?, map_fwhm_axis(map, 1)?))
}

/// FWHMs of an intensity grid through its maximum.
pub fn grid_fwhm(grid: &IntensityGrid) -> Result<(f64, f64)> {
    let peak = grid.argmax();
    Ok((fwhm_1d(&grid.cut(0, peak))?, fwhm_1d(&grid.cut(1, peak))?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakLocation {
    pub ix: usize,
    pub iy: usize,
    pub x_m: f64,
    pub y_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBlur {
    pub measured_fwhm_m: f64,
    pub predicted_fwhm_m: f64,
    pub blur_fwhm_m: Option<f64>,
    pub blur_sigma_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub fwhm_x_m: Option<f64>,
    pub fwhm_y_m: Option<f64>,
    pub peak: PeakLocation,
    #[serde(rename = "normalization_p_quarter_pW")]
    pub normalization_p_quarter_pw: f64,
    pub pixels_ok: usize,
    pub pixels_failed: usize,
    pub blur_x: Option<AxisBlur>,
    pub blur_y: Option<AxisBlur>,
    pub thermal_sigma_m: Option<f64>,
    pub notes: Vec<String>,
}

impl ScanSummary {
    /// `predicted` holds the aberration-free widths along the map axes, used
    /// for the per-axis blur estimate.
    pub fn build(map: &ScanMap, predicted: Option<(f64, f64)>, thermal_sigma: Option<f64>) -> Self {
        let mut notes = Vec::new();
        let mut axis = |a: usize| match map_fwhm_axis(map, a) {
            Ok(w) => Some(w),
            Err(e) => {
                notes.push(format!("axis {a}: {e}"));
                None
            }
        };
        let (fx, fy) = (axis(0), axis(1));
        let mut blur = |measured: Option<f64>, predicted: Option<f64>, name: &str| {
            let (m, p) = (measured?, predicted?);
            let b = match required_blur(m, p) {
                Ok(b) => Some(b),
                Err(e) => {
                    notes.push(format!("{name}: {e}"));
                    None
                }
            };
            Some(AxisBlur {
                measured_fwhm_m: m,
                predicted_fwhm_m: p,
                blur_fwhm_m: b,
                blur_sigma_m: b.map(|b| b / FWHM_PER_SIGMA),
            })
        };
        let blur_x = blur(fx, predicted.map(|p| p.0), "x blur");
        let blur_y = blur(fy, predicted.map(|p| p.1), "y blur");
        let (ix, iy) = map.peak();
        let ok = map.ok_count();
        ScanSummary {
            fwhm_x_m: fx,
            fwhm_y_m: fy,
            peak: PeakLocation {
                ix,
                iy,
                x_m: map.x(ix),
                y_m: map.y(iy),
            },
            normalization_p_quarter_pw: map.normalization / PICOWATT,
            pixels_ok: ok,
            pixels_failed: map.pixels.len() - ok,
            blur_x,
            blur_y,
            thermal_sigma_m: thermal_sigma,
            notes,
        }
    }
}
