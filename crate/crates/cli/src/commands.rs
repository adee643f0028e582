use crate::config::{Config, Layout, Optics, Truth};
use crate::{CliError, Format};
use ioncouple::coupling::{efficiency_from_powers, CouplingReport, PowerMeasurement};
use ioncouple::focal::{apodize, fwhm_1d, intensity_map, BeamProfile, GridSpec};
use ioncouple::satfit::{self, fit_saturation_with, merge_duplicate_powers, p_quarter_at_ion, subtract_background, FitOptions};
use ioncouple::scan::{
    blur_map, forward_scan, grid_fwhm, kernel_radius, reconstruct_scan, ForwardScan, IntensityGrid, ScanSettings,
    ScanSummary, FWHM_PER_SIGMA,
};
use ioncouple::tls::saturation_power;
use ioncouple::PICOWATT;
use serde_json::{json, Value};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub struct Context {
    pub config: Config,
    pub format: Format,
    pub out: Option<PathBuf>,
}

fn data_io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| data_io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| data_io(path, e))
}

fn out_dir(ctx: &Context) -> Result<PathBuf, CliError> {
    let dir = ctx.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| data_io(&dir, e))?;
    Ok(dir)
}

/// Flattens nested JSON into `key,value` rows with dotted keys.
pub fn flatten(value: &Value) -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
        let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
        match v {
            Value::Object(map) => map.iter().for_each(|(k, v)| walk(&key(k), v, rows)),
            Value::Array(items) => items.iter().enumerate().for_each(|(i, v)| walk(&key(&i.to_string()), v, rows)),
            Value::Null => rows.push((prefix.to_string(), String::new())),
            Value::String(s) => rows.push((prefix.to_string(), s.clone())),
            other => rows.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut rows = Vec::new();
    walk("", value, &mut rows);
    rows
}

fn render(report: &Value, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(report).expect("reports serialise") + "\n",
        Format::Csv => {
            let mut s = String::from("key,value\n");
            for (k, v) in flatten(report) {
                let quote = |x: &str| {
                    if x.contains([',', '"', '\n']) {
                        format!("\"{}\"", x.replace('"', "\"\""))
                    } else {
                        x.to_string()
                    }
                };
                s.push_str(&format!("{},{}\n", quote(&k), quote(&v)));
            }
            s
        }
    }
}

/// Prints the report and, with `--out`, stores it as `<name>.json` or `.csv`.
fn emit(ctx: &Context, name: &str, report: &Value) -> Result<(), CliError> {
    let text = render(report, ctx.format);
    if let Some(dir) = &ctx.out {
        std::fs::create_dir_all(dir).map_err(|e| data_io(dir, e))?;
        let ext = match ctx.format {
            Format::Json => "json",
            Format::Csv => "csv",
        };
        let path = dir.join(format!("{name}.{ext}"));
        std::fs::write(&path, &text).map_err(|e| data_io(&path, e))?;
    }
    std::io::stdout()
        .write_all(text.as_bytes())
        .map_err(|e| CliError::Data(format!("stdout: {e}")))
}

fn report(command: &str, ctx: &Context, resolved: Value, results: Value) -> Value {
    json!({
        "command": command,
        "config": ctx.config,
        "resolved": resolved,
        "results": results,
    })
}

fn minimal_power(cfg: &Config, multiplicity_one: bool) -> Result<f64, CliError> {
    let mut t = cfg.transition()?;
    if multiplicity_one {
        t = t.with_multiplicity(1.0)?;
    }
    Ok(saturation_power(&t, cfg.measurement.detuning_delta, 1.0)?)
}

pub fn predict(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let optics = cfg.optics()?;
    let budget = cfg.budget(&optics)?;
    let p_tls = minimal_power(cfg, true)?;
    let p_min = minimal_power(cfg, false)?;
    let g = budget.efficiency();
    let results = if g > 0.0 {
        let at_ion = p_min / g;
        json!({
            "p_min_two_level_pW": p_tls / PICOWATT,
            "p_min_pW": p_min / PICOWATT,
            "G_expected": g,
            "p_expected_at_ion_pW": at_ion / PICOWATT,
            "p_expected_at_mirror_pW": (cfg.mirror.reflectivity > 0.0).then(|| at_ion / cfg.mirror.reflectivity / PICOWATT),
        })
    } else {
        json!({
            "p_min_two_level_pW": p_tls / PICOWATT,
            "p_min_pW": p_min / PICOWATT,
            "G_expected": g,
            "p_expected_at_ion_pW": null,
            "p_expected_at_mirror_pW": null,
        })
    };
    emit(ctx, "predict", &report("predict", ctx, json!({ "optics": optics, "budget": budget }), results))
}

pub fn optimize_waist(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let geometry = cfg.geometry()?;
    let opt = ioncouple::focal::optimize_waist(&geometry)?;
    let eta = ioncouple::focal::apply_strehl(opt.eta, cfg.budget.strehl)?;
    let results = json!({
        "waist_m": opt.waist,
        "waist_over_focal_length": opt.waist / geometry.focal_length(),
        "eta_mode": opt.eta,
        "strehl": cfg.budget.strehl,
        "eta_with_strehl": eta,
        "omega": geometry.omega(),
    });
    emit(ctx, "optimize-waist", &report("optimize-waist", ctx, json!({ "geometry": geometry }), results))
}

struct FitOutcome {
    fit: satfit::FitResult,
    merged: usize,
    at_ion: PowerMeasurement,
}

fn fit_file(cfg: &Config, path: &Path) -> Result<FitOutcome, CliError> {
    let raw = satfit::read_csv(open(path)?, cfg.measurement.detuning_delta)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let (raw, merged) = merge_duplicate_powers(&raw);
    if merged > 0 {
        eprintln!("warning: merged {merged} row(s) recorded at an already-present power");
    }
    let corrected = subtract_background(&raw).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let opts = FitOptions {
        floating_offset: cfg.measurement.floating_offset,
        ..FitOptions::default()
    };
    let fit = fit_saturation_with(&corrected, &opts).map_err(|e| match e {
        ioncouple::Error::InvalidInput(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => CliError::from(other),
    })?;
    if !fit.is_well_constrained() {
        eprintln!(
            "warning: saturation power poorly constrained (relative sigma {:.2})",
            fit.p_quarter.relative_sigma()
        );
    }
    let at_ion = p_quarter_at_ion(&fit, &cfg.geometry()?);
    Ok(FitOutcome { fit, merged, at_ion })
}

pub fn fit(ctx: &Context, path: &Path) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let FitOutcome { fit, merged, at_ion } = fit_file(cfg, path)?;
    let p_min = PowerMeasurement::exact(minimal_power(cfg, false)?)?;
    let g = efficiency_from_powers(p_min, at_ion)?;
    let results = json!({
        "fit": fit.summary(),
        "asymptote_sigma_cps": fit.asymptote.sigma,
        "offset_cps": fit.offset,
        "n_points": fit.n_points,
        "duplicates_merged": merged,
        "well_constrained": fit.is_well_constrained(),
        "p_quarter_at_ion_pW": at_ion.value / PICOWATT,
        "p_quarter_at_ion_sigma_pW": at_ion.uncertainty / PICOWATT,
        "p_min_pW": p_min.value / PICOWATT,
        "G_measured": g.value,
        "G_measured_sigma": g.uncertainty,
    });
    emit(ctx, "fit", &report("fit", ctx, json!({ "data": path.display().to_string() }), results))
}

pub fn coupling_report(ctx: &Context, data: Option<&Path>) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let optics = cfg.optics()?;
    let budget = cfg.budget(&optics)?;
    let p_min = PowerMeasurement::exact(minimal_power(cfg, false)?)?;
    let mut provenance = vec![format!(
        "p_min: quarter-population power of the configured transition at detuning {} with unit coupling and multiplicity {}",
        cfg.measurement.detuning_delta, cfg.transition.multiplicity
    )];
    let p_exp = match data {
        Some(path) => {
            let outcome = fit_file(cfg, path)?;
            provenance.push(format!(
                "p_exp: saturation fit of {} referred to the ion through reflectivity {}",
                path.display(),
                cfg.mirror.reflectivity
            ));
            outcome.at_ion
        }
        None => {
            let r = cfg.mirror.reflectivity;
            provenance.push(format!(
                "p_exp: measurement.p_quarter_mirror_pw = {} +- {} pW times reflectivity {r}",
                cfg.measurement.p_quarter_mirror_pw, cfg.measurement.p_quarter_mirror_sigma_pw
            ));
            PowerMeasurement::new(
                cfg.measurement.p_quarter_mirror_pw * PICOWATT * r,
                cfg.measurement.p_quarter_mirror_sigma_pw * PICOWATT * r,
            )
            .map_err(|e| CliError::Config(format!("measurement: {e}")))?
        }
    };
    provenance.push(match optics.eta_mode {
        Some(mode) if matches!(cfg.budget.eta, crate::config::Setting::Keyword(_)) => format!(
            "eta: doughnut-mode overlap {mode:.6} times sqrt(strehl {})",
            cfg.budget.strehl
        ),
        _ => "eta: configured budget.eta".to_string(),
    });
    provenance.push(format!("omega: weighted solid angle of [{:.6}, {:.6}] rad", optics.theta_min_rad, optics.theta_max_rad));
    let rep = CouplingReport::build(p_min, p_exp, budget, &[], provenance)?;
    if rep.derived.L_inferred.is_none() {
        eprintln!("warning: measured efficiency exceeds omega * eta^2; no loss inferred");
    }
    emit(
        ctx,
        "coupling-report",
        &report("coupling-report", ctx, json!({ "optics": optics }), serde_json::to_value(&rep).expect("serialise")),
    )
}

/// Unblurred and blurred truth maps, both peak-normalised and cropped to the
/// configured scan window.
struct Truths {
    ideal: IntensityGrid,
    blurred: IntensityGrid,
}

fn build_truth(cfg: &Config, optics: &Optics) -> Result<Truths, CliError> {
    let s = &cfg.scan;
    let pad = kernel_radius(s.blur_sigma_m, s.pitch_m);
    let (nx, ny) = match s.layout {
        Layout::Xy => (s.nx, s.ny),
        Layout::Z => (s.nx, 1),
    };
    let (pnx, pny) = (nx + 2 * pad, if ny > 1 { ny + 2 * pad } else { 1 });
    let padded = match (&s.truth, s.layout) {
        (Truth::Focal, layout) => {
            let beam = BeamProfile::new(optics.waist_m).map_err(|e| CliError::Config(format!("beam.waist_m: {e}")))?;
            let amplitude = apodize(&beam, &cfg.geometry()?)?;
            let lambda = cfg.transition.wavelength_m;
            match layout {
                Layout::Xy => {
                    let field = intensity_map(&amplitude, &GridSpec::centered(s.pitch_m, pnx, pny, 1), lambda, true)?;
                    IntensityGrid::from_field_plane(&field, 0)?
                }
                Layout::Z => {
                    let field = intensity_map(&amplitude, &GridSpec::centered(s.pitch_m, 1, 1, pnx), lambda, true)?;
                    IntensityGrid::from_field_line(&field, 2, (0, 0, 0))?
                }
            }
        }
        (&Truth::Gaussian { fwhm_x_m, fwhm_y_m }, _) => {
            let (sx, sy) = (fwhm_x_m / FWHM_PER_SIGMA, fwhm_y_m / FWHM_PER_SIGMA);
            IntensityGrid::from_fn(pnx, pny, s.pitch_m, |x, y| (-0.5 * (x * x / (sx * sx) + y * y / (sy * sy))).exp())?
        }
    };
    let crop = |g: &IntensityGrid| -> Result<IntensityGrid, CliError> { Ok(g.crop_center(nx, ny)?.normalized()?) };
    Ok(Truths {
        ideal: crop(&padded)?,
        blurred: crop(&blur_map(&padded, s.blur_sigma_m)?)?,
    })
}

fn widths(grid: &IntensityGrid) -> Option<(f64, f64)> {
    if grid.ny > 1 {
        grid_fwhm(grid).ok()
    } else {
        let w = fwhm_1d(&grid.cut(0, grid.argmax())).ok()?;
        Some((w, w))
    }
}

fn write_grid_csv(grid: &IntensityGrid, path: &Path) -> Result<(), CliError> {
    let mut w = create(path)?;
    let io = |e: std::io::Error| data_io(path, e);
    writeln!(w, "ix,iy,x_m,y_m,intensity").map_err(io)?;
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            writeln!(w, "{ix},{iy},{},{},{}", grid.x(ix), grid.y(iy), grid.at(ix, iy)).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn scan_simulate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let s = &cfg.scan;
    let optics = cfg.optics()?;
    let truths = build_truth(cfg, &optics)?;
    let settings = ScanSettings {
        probe_powers: cfg.probe_powers(),
        peak_p_quarter: cfg.measurement.p_quarter_mirror_pw * PICOWATT,
        asymptote: s.counts_at_saturation / s.duration_s,
        duration: s.duration_s,
        background_rate: s.background_rate_cps,
        efficiency: None,
        noiseless: s.noiseless,
    };
    let scan = forward_scan(&truths.blurred, &settings, s.seed)?;
    let dir = out_dir(ctx)?;
    let scan_path = dir.join("forward_scan.csv");
    scan.write_csv(create(&scan_path)?).map_err(|e| CliError::Data(format!("{}: {e}", scan_path.display())))?;
    let truth_path = dir.join("truth.csv");
    write_grid_csv(&truths.blurred, &truth_path)?;
    let results = json!({
        "forward_scan_csv": scan_path.display().to_string(),
        "truth_csv": truth_path.display().to_string(),
        "pixels": truths.blurred.len(),
        "probe_powers_pW": settings.probe_powers.iter().map(|p| p / PICOWATT).collect::<Vec<_>>(),
        "predicted_fwhm_m": widths(&truths.ideal),
        "blurred_truth_fwhm_m": widths(&truths.blurred),
    });
    emit(ctx, "scan-simulate", &report("scan simulate", ctx, json!({ "optics": optics }), results))
}

pub fn scan_reconstruct(ctx: &Context, input: Option<&Path>) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let dir = out_dir(ctx)?;
    let input = input.map(Path::to_path_buf).unwrap_or_else(|| dir.join("forward_scan.csv"));
    let scan = ForwardScan::read_csv(open(&input)?).map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    let map = reconstruct_scan(&scan)?;
    let optics = cfg.optics()?;
    let predicted = widths(&build_truth(cfg, &optics)?.ideal);
    let thermal = cfg.wavepacket()?.sigma();
    let summary = ScanSummary::build(&map, predicted, Some(thermal));
    let map_path = dir.join("scan_map.csv");
    map.write_csv(create(&map_path)?).map_err(|e| CliError::Data(format!("{}: {e}", map_path.display())))?;
    let summary_path = dir.join("scan_summary.json");
    let summary_value = serde_json::to_value(&summary).expect("serialise");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary_value).expect("serialise") + "\n")
        .map_err(|e| data_io(&summary_path, e))?;
    let results = json!({
        "input_csv": input.display().to_string(),
        "scan_map_csv": map_path.display().to_string(),
        "summary_json": summary_path.display().to_string(),
        "summary": summary_value,
    });
    emit(ctx, "scan-reconstruct", &report("scan reconstruct", ctx, json!({ "optics": optics }), results))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_nested() {
        let v = json!({"a": {"b": 1, "c": [true, null]}, "d": "x,y"});
        let rows = flatten(&v);
        assert_eq!(
            rows,
            vec![
                ("a.b".to_string(), "1".to_string()),
                ("a.c.0".to_string(), "true".to_string()),
                ("a.c.1".to_string(), String::new()),
                ("d".to_string(), "x,y".to_string()),
            ]
        );
        let csv = render(&v, Format::Csv);
        assert!(csv.ends_with("d,\"x,y\"\n"), "{csv}");
    }

    #[test]
    fn gaussian_truth_widths() {
        let mut cfg = Config::default();
        cfg.beam.waist_m = crate::config::Setting::Value(4e-3);
        cfg.scan.truth = Truth::Gaussian {
            fwhm_x_m: 140e-9,
            fwhm_y_m: 140e-9,
        };
        let optics = cfg.optics().unwrap();
        let t = build_truth(&cfg, &optics).unwrap();
        let (fx, _) = widths(&t.ideal).unwrap();
        assert!((fx / 140e-9 - 1.0).abs() < 0.05, "{fx}");
        let (bx, by) = widths(&t.blurred).unwrap();
        assert!((bx / 530e-9 - 1.0).abs() < 0.02, "{bx}");
        assert!((bx - by).abs() < 1e-15);
    }
}
