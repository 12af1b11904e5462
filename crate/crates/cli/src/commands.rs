use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use nvlab_core::fit::{extract_pi_pulse, fit, validate_hierarchy, FitError, FitModel, FitProblem, FitResult, WeightMode};
use nvlab_core::physics::{resonance_frequencies, PhysicalConstants};
use nvlab_core::pulse::SequenceKind;
use nvlab_core::sim::{grid, Experiment, SweepResult};

use crate::config::Resolved;
use crate::odmr::{find_dips, Dip};
use crate::output::{commented, plot_text, read_file, summary, write_file};
use crate::CliError;

/// Reduced chi-square above which a fit is reported as a poor description
/// of the data.
pub const MISFIT_THRESHOLD: f64 = 5.0;

fn stem(kind: SequenceKind) -> &'static str {
    match kind {
        SequenceKind::Rabi => "rabi",
        SequenceKind::T1 => "t1",
        SequenceKind::HahnEcho => "echo",
        SequenceKind::Odmr => "odmr",
    }
}

fn say(w: &mut dyn Write, text: &str) -> Result<(), CliError> {
    w.write_all(text.as_bytes()).map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn sim_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Simulates one sweep of `kind` with the given noise seed and applied
/// π-pulse, embedding the resolved configuration in the metadata.
fn simulate_sweep(r: &Resolved, kind: SequenceKind, seed: u64, t_pi_applied_ns: f64, top_grid: bool) -> Result<SweepResult, CliError> {
    let spec = r.grid_for(kind, top_grid)?;
    let xs = grid(spec.start, spec.stop, spec.count, spec.log).map_err(sim_err)?;
    let c = &r.config;
    let exp = match kind {
        SequenceKind::Odmr => Experiment::odmr(&PhysicalConstants::default(), c.odmr.b_z_mt, c.odmr.linewidth_mhz, r.contrast),
        _ => Experiment::for_kind(kind, &r.truth, r.contrast, t_pi_applied_ns, &c.hardware),
    }
    .map_err(sim_err)?;
    let mut sweep = exp.run_sweep(&xs, &r.noise(seed), c.blocks).map_err(sim_err)?;
    if kind != SequenceKind::Odmr {
        sweep.metadata.power_dbm = Some(c.power_dbm);
    }
    sweep.metadata.extra = c.to_toml().lines().map(str::to_string).collect();
    Ok(sweep)
}

fn applied_pi(r: &Resolved) -> f64 {
    r.config.truth.t_pi_applied_ns.unwrap_or_else(|| r.truth.t_pi_ns())
}

fn out_dir(r: &Resolved) -> PathBuf {
    PathBuf::from(&r.config.out)
}

/// Simulates the configured experiment and writes `<out>/<kind>.dat`.
pub fn cmd_simulate(r: &Resolved, w: &mut dyn Write) -> Result<PathBuf, CliError> {
    let kind = r
        .kind
        .ok_or_else(|| CliError::Config("simulate needs an experiment kind (`kind` or --kind)".into()))?;
    let sweep = simulate_sweep(r, kind, r.seed, applied_pi(r), true)?;
    let path = out_dir(r).join(format!("{}.dat", stem(kind)));
    write_file(&path, &sweep.to_text())?;
    say(
        w,
        &format!(
            "simulated {kind}: {} points x {} blocks, seed {} -> {}\n",
            sweep.len(),
            r.config.blocks,
            r.seed,
            path.display()
        ),
    )?;
    Ok(path)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitOptions {
    /// Defaults to the model matching the data's experiment kind.
    pub model: Option<FitModel>,
    pub free_detuning: bool,
    pub uniform_weights: bool,
    /// Defaults to the data file's directory.
    pub out: Option<PathBuf>,
}

fn fit_sweep(data: SweepResult, model: FitModel, free_detuning: bool, uniform: bool) -> Result<FitResult, FitError> {
    let mut problem = FitProblem::new(model, data);
    if model == FitModel::Rabi && free_detuning {
        problem.free("detuning_mhz")?;
    }
    if uniform {
        problem.weights = WeightMode::Uniform;
    }
    fit(&problem)
}

fn fit_header(data: &SweepResult, model: FitModel, free_detuning: bool, uniform: bool) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "data_kind = {}", data.metadata.kind);
    let _ = writeln!(h, "data_seed = {}", data.metadata.seed);
    let _ = writeln!(h, "fit_model = {model}");
    let _ = writeln!(h, "free_detuning = {free_detuning}");
    let _ = writeln!(h, "uniform_weights = {uniform}");
    for line in &data.metadata.extra {
        let _ = writeln!(h, "{line}");
    }
    h
}

/// Writes `<stem>.fit` and `<stem>.plot` and prints the summary. A fit that
/// stopped without converging is still written before the error is
/// returned.
fn fit_and_write(
    data: SweepResult,
    model: FitModel,
    free_detuning: bool,
    uniform: bool,
    dir: &Path,
    name: &str,
    w: &mut dyn Write,
) -> Result<FitResult, CliError> {
    let header = fit_header(&data, model, free_detuning, uniform);
    let (result, failure) = match fit_sweep(data.clone(), model, free_detuning, uniform) {
        Ok(r) => (r, None),
        Err(FitError::NotConverged(r)) => (*r, Some(CliError::Fit("did not converge".into()))),
        Err(e) => return Err(e.into()),
    };
    write_file(&dir.join(format!("{name}.fit")), &(commented("# ", &header) + &result.to_text()))?;
    write_file(&dir.join(format!("{name}.plot")), &plot_text(&header, &data, &result))?;
    say(w, &summary(&result))?;
    if !result.saturated.is_empty() {
        eprintln!("warning: parameters at a bound: {}", result.saturated.join(", "));
    }
    if result.reduced_chi_square > MISFIT_THRESHOLD {
        eprintln!(
            "warning: reduced chi-square {:.2} exceeds {MISFIT_THRESHOLD}; the {model} model does not describe these data",
            result.reduced_chi_square
        );
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(result),
    }
}

/// Fits a sweep file.
pub fn cmd_fit(data_path: &Path, opts: &FitOptions, w: &mut dyn Write) -> Result<FitResult, CliError> {
    let text = read_file(data_path)?;
    let data = SweepResult::from_text(&text).map_err(|e| CliError::Io(format!("{}: {e}", data_path.display())))?;
    let model = match opts.model {
        Some(m) => m,
        None => FitModel::for_kind(data.metadata.kind)
            .ok_or_else(|| CliError::Config(format!("no fit model for {} data; pass --model", data.metadata.kind)))?,
    };
    let dir = match &opts.out {
        Some(d) => d.clone(),
        None => data_path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let name = data_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CliError::Io(format!("{}: not a file name", data_path.display())))?
        .to_string();
    fit_and_write(data, model, opts.free_detuning, opts.uniform_weights, &dir, &name, w)
}

/// Simulates an ODMR scan, writes `<out>/odmr.dat` and reports the dips.
/// An empty result is an error so scripts notice a grid that misses the
/// resonances.
pub fn cmd_odmr(r: &Resolved, w: &mut dyn Write) -> Result<Vec<Dip>, CliError> {
    let scan = simulate_sweep(r, SequenceKind::Odmr, r.seed, applied_pi(r), true)?;
    let path = out_dir(r).join("odmr.dat");
    write_file(&path, &scan.to_text())?;
    let dips = find_dips(&scan, r.config.odmr.linewidth_mhz);
    let (upper, lower) = resonance_frequencies(&PhysicalConstants::default(), r.config.odmr.b_z_mt).map_err(sim_err)?;
    let mut text = format!(
        "ODMR scan at B_z = {} mT: {} points -> {}\nexpected resonances: {lower:.1} MHz, {upper:.1} MHz\n",
        r.config.odmr.b_z_mt,
        scan.len(),
        path.display()
    );
    for d in &dips {
        let _ = writeln!(text, "dip at {:.2} MHz (depth {:.4})", d.center_mhz, d.depth);
    }
    say(w, &text)?;
    if dips.is_empty() {
        return Err(CliError::NoDip(format!("{:.1}–{:.1} MHz", scan.points[0].x, scan.points[scan.len() - 1].x)));
    }
    Ok(dips)
}

/// Outcome of a full pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub rabi: FitResult,
    pub t1: FitResult,
    pub echo: FitResult,
    pub t_pi_ns: f64,
    pub text: String,
}

fn stage_section(report: &mut String, title: &str, seed: u64, file: &str, data: &SweepResult, r: &FitResult) {
    let _ = writeln!(report, "\n[{title}]");
    let _ = writeln!(report, "seed = {seed}");
    let _ = writeln!(report, "data = {file}");
    let _ = writeln!(report, "points = {}, blocks = {}", data.len(), data.metadata.n_blocks);
    let _ = writeln!(report, "iterations = {}, converged = {}", r.iterations, r.converged);
    report.push_str(&summary(r));
}

/// Rabi → T1 → echo with the fitted π-pulse reused downstream, then the
/// coherence-hierarchy verdict. Writes every sweep, fit and plot file plus
/// `report.txt` to the output directory.
pub fn cmd_pipeline(r: &Resolved, w: &mut dyn Write) -> Result<PipelineReport, CliError> {
    if r.config.grid.is_some() {
        return Err(CliError::Config(
            "a single --grid is ambiguous for the pipeline; set [grids] rabi / t1 / echo instead".into(),
        ));
    }
    let dir = out_dir(r);
    let c = &r.config;
    let mut report = String::from("nvlab pipeline report\n");
    report.push_str(&commented("# ", &c.to_toml()));

    let run_stage = |kind: SequenceKind, stage: u64, t_pi: f64, report: &mut String, w: &mut dyn Write| {
        let seed = r.stage_seed(stage);
        let data = simulate_sweep(r, kind, seed, t_pi, false)?;
        let name = stem(kind);
        write_file(&dir.join(format!("{name}.dat")), &data.to_text())?;
        say(w, &format!("-- {kind} (seed {seed})\n"))?;
        let model = FitModel::for_kind(kind).expect("pipeline stages have fit models");
        let fitted = fit_and_write(data.clone(), model, c.fit.free_detuning, c.fit.uniform_weights, &dir, name, w)?;
        stage_section(report, name, seed, &format!("{name}.dat"), &data, &fitted);
        Ok::<_, CliError>(fitted)
    };

    let rabi = run_stage(SequenceKind::Rabi, 0, applied_pi(r), &mut report, w)?;
    let pi = extract_pi_pulse(&rabi)?;
    let ticks = c.hardware.to_ticks(pi.t_pi_ns);
    let _ = writeln!(
        report,
        "t_pi = {} (applied as {ticks} ticks = {:.1} ns){}",
        crate::output::plus_minus(pi.t_pi_ns, pi.sigma_ns, "ns"),
        c.hardware.to_ns(ticks),
        if pi.off_resonance { ", off resonance" } else { "" }
    );
    say(w, &format!("t_pi = {:.2} ns, reused for T1 and echo\n", pi.t_pi_ns))?;
    let t1 = run_stage(SequenceKind::T1, 1, pi.t_pi_ns, &mut report, w)?;
    let echo = run_stage(SequenceKind::HahnEcho, 2, pi.t_pi_ns, &mut report, w)?;

    let verdict = validate_hierarchy(&t1, &echo, &rabi)?;
    let h = verdict.hierarchy;
    let _ = writeln!(report, "\n[hierarchy]");
    let _ = writeln!(report, "T1 = {:.1} µs, T2 = {:.3} µs, T2* = {:.3} µs", h.t1_us(), h.t2_us, h.t2_star_us);
    let _ = writeln!(
        report,
        "margins: T1 - T2 = {:.1} sigma, T2 - T2* = {:.1} sigma",
        verdict.t1_t2_margin_sigma, verdict.t2_t2star_margin_sigma
    );
    let line = match verdict.outcome {
        Ok(()) => "verdict = pass (T1 >= T2 > T2*)".to_string(),
        Err(v) => format!("verdict = fail ({v})"),
    };
    let _ = writeln!(report, "{line}");
    write_file(&dir.join("report.txt"), &report)?;
    say(w, &format!("{line}\nreport -> {}\n", dir.join("report.txt").display()))?;
    if let Err(v) = verdict.outcome {
        return Err(CliError::Hierarchy(v));
    }
    Ok(PipelineReport { rabi, t1, echo, t_pi_ns: pi.t_pi_ns, text: report })
}

/// Applies `T1 >= T2 > T2*` to three fit files given in any order.
pub fn cmd_validate(paths: &[PathBuf], w: &mut dyn Write) -> Result<(), CliError> {
    let mut slots: [Option<FitResult>; 3] = [None, None, None];
    for p in paths {
        let r = FitResult::parse_any(&read_file(p)?).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        let i = match r.model {
            FitModel::T1 => 0,
            FitModel::HahnEcho => 1,
            FitModel::Rabi => 2,
        };
        if slots[i].replace(r).is_some() {
            return Err(CliError::Config(format!("more than one {} fit given", ["T1", "HahnEcho", "Rabi"][i])));
        }
    }
    let [Some(t1), Some(echo), Some(rabi)] = slots else {
        return Err(CliError::Config("validate needs one T1, one HahnEcho and one Rabi fit".into()));
    };
    let v = validate_hierarchy(&t1, &echo, &rabi)?;
    let h = v.hierarchy;
    let verdict = match v.outcome {
        Ok(()) => "pass".to_string(),
        Err(e) => format!("fail ({e})"),
    };
    say(
        w,
        &format!(
            "T1 = {:.1} µs, T2 = {:.3} µs, T2* = {:.3} µs\nmargins: {:.1} sigma, {:.1} sigma\nverdict = {verdict}\n",
            h.t1_us(),
            h.t2_us,
            h.t2_star_us,
            v.t1_t2_margin_sigma,
            v.t2_t2star_margin_sigma
        ),
    )?;
    v.outcome.map_err(CliError::Hierarchy)
}
