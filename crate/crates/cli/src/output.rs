use std::fmt::Write as _;
use std::path::Path;

use nvlab_core::fit::{FitModel, FitResult};
use nvlab_core::sim::SweepResult;

use crate::CliError;

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub(crate) fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Prefixes every line of `body` with `prefix`.
pub(crate) fn commented(prefix: &str, body: &str) -> String {
    body.lines().map(|l| format!("{prefix}{l}\n")).collect()
}

/// `v ± s` with the uncertainty rounded to two significant figures.
pub(crate) fn plus_minus(v: f64, s: f64, unit: &str) -> String {
    let unit = if unit.is_empty() { String::new() } else { format!(" {unit}") };
    if !(s.is_finite() && s > 0.0) {
        return format!("{v:.4}{unit} (fixed)");
    }
    let digits = (1 - s.log10().floor() as i32).clamp(0, 12) as usize;
    format!("{v:.digits$} ± {s:.digits$}{unit}")
}

/// Summary lines in customary units: `(label, value, sigma, unit)` per parameter.
pub(crate) fn summary_rows(r: &FitResult) -> Vec<(String, f64, f64, &'static str)> {
    let row = |label: &str, name: &str, scale: f64, unit: &'static str| {
        let i = r.names.iter().position(|n| n == name).expect("model parameter");
        let s = if r.free[i] { r.uncertainties[i] * scale } else { 0.0 };
        (label.to_string(), r.estimates[i] * scale, s, unit)
    };
    match r.model {
        FitModel::Rabi => {
            let mut rows = vec![row("Rabi frequency", "rabi_freq_mhz", 1.0, "MHz")];
            if r.free[1] {
                rows.push(row("detuning", "detuning_mhz", 1.0, "MHz"));
            }
            rows.push(row("T2*", "t2_star_us", 1e3, "ns"));
            rows.push(row("amplitude", "amplitude", 1.0, ""));
            rows
        }
        FitModel::T1 => vec![row("T1", "t1_ms", 1.0, "ms"), row("amplitude", "amplitude", 1.0, "")],
        FitModel::HahnEcho => vec![
            row("T2", "t2_us", 1.0, "µs"),
            row("n", "n", 1.0, ""),
            row("k", "k", 1.0, ""),
            row("f_a", "f_a_mhz", 1.0, "MHz"),
            row("f_b", "f_b_mhz", 1e3, "kHz"),
            row("amplitude", "amplitude", 1.0, ""),
        ],
    }
}

pub(crate) fn summary(r: &FitResult) -> String {
    let mut out = String::new();
    for (label, v, s, unit) in summary_rows(r) {
        let _ = writeln!(out, "{label} = {}", plus_minus(v, s, unit));
    }
    let _ = writeln!(
        out,
        "reduced chi-square = {:.3} ({} dof, {} weights)",
        r.reduced_chi_square,
        r.degrees_of_freedom,
        r.weighting.name()
    );
    out
}

/// Plot-ready columns: the measured normalized signal and the fitted curve
/// on the same scale.
pub(crate) fn plot_text(header: &str, data: &SweepResult, fit: &FitResult) -> String {
    let mut out = commented("# ", header);
    let _ = writeln!(out, "# x_unit = {}", data.metadata.x_unit);
    out.push_str("x, y, yerr, fit\n");
    for p in &data.points {
        let _ = writeln!(out, "{:.10e}, {:.10e}, {:.10e}, {:.10e}", p.x, p.mean, p.stderr, 1.0 - fit.curve(p.x));
    }
    out
}
