//! FitResult export.
//!
//! ```text
//! [fit]
//! model = T1
//! data_seed = 7
//! ...
//! [estimates]
//! t1_ms = 1.7791e0
//! [uncertainties]
//! t1_ms = 4.1e-2
//! [covariance]
//! row0 = 1.6e-3, ...
//! ```

use std::fmt::Write as _;

use thiserror::Error;

use super::{FitModel, FitResult, WeightMode};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl FitResult {
    pub fn to_text(&self) -> String {
        let mut out = String::from("[fit]\n");
        let _ = writeln!(out, "model = {}", self.model);
        let _ = writeln!(out, "data_seed = {}", self.data_seed);
        let _ = writeln!(out, "n_points = {}", self.n_points);
        let _ = writeln!(out, "degrees_of_freedom = {}", self.degrees_of_freedom);
        let _ = writeln!(out, "weighting = {}", self.weighting.name());
        let _ = writeln!(out, "converged = {}", self.converged);
        let _ = writeln!(out, "iterations = {}", self.iterations);
        let _ = writeln!(out, "branch = {}", self.branch);
        let _ = writeln!(out, "chi_square = {:e}", self.chi_square);
        let _ = writeln!(out, "reduced_chi_square = {:e}", self.reduced_chi_square);
        let _ = writeln!(out, "saturated = {}", self.saturated.join(", "));
        out.push_str("[estimates]\n");
        for (n, v) in self.names.iter().zip(&self.estimates) {
            let _ = writeln!(out, "{n} = {v:e}");
        }
        out.push_str("[uncertainties]\n");
        for (n, v) in self.names.iter().zip(&self.uncertainties) {
            let _ = writeln!(out, "{n} = {v:e}");
        }
        out.push_str("[free]\n");
        for (n, v) in self.names.iter().zip(&self.free) {
            let _ = writeln!(out, "{n} = {v}");
        }
        out.push_str("[covariance]\n");
        let n = self.names.len();
        for r in 0..n {
            let row: Vec<String> = self.covariance[r * n..(r + 1) * n].iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "row{r} = {}", row.join(", "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ReportError> {
        let err = |line: usize, reason: &str| ReportError::Parse { line, reason: reason.into() };
        let mut section = String::new();
        let mut model = None;
        let mut r = FitResult {
            model: FitModel::T1,
            names: vec![],
            estimates: vec![],
            uncertainties: vec![],
            free: vec![],
            covariance: vec![],
            chi_square: f64::NAN,
            reduced_chi_square: f64::NAN,
            degrees_of_freedom: 0,
            iterations: 0,
            converged: false,
            weighting: WeightMode::Uniform,
            saturated: vec![],
            branch: 0,
            data_seed: 0,
            n_points: 0,
            cost_history: vec![],
        };
        let mut unc: Vec<(String, f64)> = vec![];
        let mut free: Vec<(String, bool)> = vec![];
        for (i, raw) in text.lines().enumerate() {
            let no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(s) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = s.to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(no, "expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(no, "malformed number"));
            let int = |s: &str| s.parse::<u64>().map_err(|_| err(no, "malformed integer"));
            match section.as_str() {
                "fit" => match k {
                    "model" => model = Some(FitModel::from_name(v).ok_or_else(|| err(no, "unknown model"))?),
                    "data_seed" => r.data_seed = int(v)?,
                    "n_points" => r.n_points = int(v)? as usize,
                    "degrees_of_freedom" => r.degrees_of_freedom = int(v)? as usize,
                    "weighting" => r.weighting = WeightMode::from_name(v).ok_or_else(|| err(no, "unknown weighting"))?,
                    "converged" => r.converged = v.parse().map_err(|_| err(no, "malformed bool"))?,
                    "iterations" => r.iterations = int(v)? as usize,
                    "branch" => r.branch = int(v)? as usize,
                    "chi_square" => r.chi_square = num(v)?,
                    "reduced_chi_square" => r.reduced_chi_square = num(v)?,
                    "saturated" => {
                        r.saturated = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
                    }
                    _ => return Err(err(no, "unknown key")),
                },
                "estimates" => {
                    r.names.push(k.to_string());
                    r.estimates.push(num(v)?);
                }
                "uncertainties" => unc.push((k.to_string(), num(v)?)),
                "free" => free.push((k.to_string(), v.parse().map_err(|_| err(no, "malformed bool"))?)),
                "covariance" => {
                    for c in v.split(',') {
                        r.covariance.push(num(c.trim())?);
                    }
                }
                _ => return Err(err(no, "entry outside a known section")),
            }
        }
        r.model = model.ok_or_else(|| err(1, "missing model"))?;
        let expected: Vec<&str> = r.model.param_names().to_vec();
        if r.names != expected {
            return Err(err(1, "estimates do not match the model's parameters"));
        }
        let n = r.names.len();
        if unc.len() != n || unc.iter().zip(&r.names).any(|((a, _), b)| a != b) {
            return Err(err(1, "uncertainties do not match estimates"));
        }
        r.uncertainties = unc.into_iter().map(|(_, v)| v).collect();
        r.free = if free.is_empty() { vec![true; n] } else { free.into_iter().map(|(_, v)| v).collect() };
        if r.free.len() != n || r.covariance.len() != n * n {
            return Err(err(1, "covariance has the wrong size"));
        }
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit results serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads either export format.
    pub fn parse_any(text: &str) -> Result<Self, ReportError> {
        if text.trim_start().starts_with('{') {
            Self::from_json(text)
        } else {
            Self::from_text(text)
        }
    }
}
