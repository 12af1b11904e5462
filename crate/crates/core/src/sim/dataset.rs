//! Sweep datasets and their columnar text form.
//!
//! ```text
//! # nvlab sweep v1
//! # kind = T1
//! # x_name = delay
//! # x_unit = ms
//! # seed = 7
//! # n_blocks = 150
//! # power_dbm = 40
//! # truth.t1_ms = 1.78
//! #| <free-form configuration line>
//! x, mean, stderr, n
//! 0.0000000000000000e0, 8.0223...e-1, 1.1...e-3, 150
//! ```

use std::fmt::Write as _;

use thiserror::Error;

use crate::pulse::SequenceKind;

const MAGIC: &str = "# nvlab sweep v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("sweep has no points")]
    Empty,
    #[error("sweep abscissa must be strictly increasing (point {0})")]
    NotIncreasing(usize),
    #[error("invalid point {index}: {reason}")]
    InvalidPoint { index: usize, reason: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub x: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n_blocks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepMetadata {
    pub kind: SequenceKind,
    pub x_name: String,
    pub x_unit: String,
    pub seed: u64,
    pub n_blocks: usize,
    pub power_dbm: Option<f64>,
    pub branch: Option<String>,
    /// Ground-truth parameters the data was generated from.
    pub truth: Vec<(String, f64)>,
    /// Free-form lines (resolved configuration) carried verbatim.
    pub extra: Vec<String>,
}

impl SweepMetadata {
    pub fn new(kind: SequenceKind, seed: u64, n_blocks: usize) -> Self {
        let (x_name, x_unit) = match kind {
            SequenceKind::Rabi => ("mw_duration", "ns"),
            SequenceKind::T1 => ("delay", "ms"),
            SequenceKind::HahnEcho => ("tau", "us"),
            SequenceKind::Odmr => ("mw_frequency", "MHz"),
        };
        Self {
            kind,
            x_name: x_name.into(),
            x_unit: x_unit.into(),
            seed,
            n_blocks,
            power_dbm: None,
            branch: None,
            truth: Vec::new(),
            extra: Vec::new(),
        }
    }

    pub fn truth_value(&self, key: &str) -> Option<f64> {
        self.truth.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

/// Normalized signal against the swept variable.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub metadata: SweepMetadata,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn new(metadata: SweepMetadata, points: Vec<SweepPoint>) -> Result<Self, DatasetError> {
        if points.is_empty() {
            return Err(DatasetError::Empty);
        }
        for (i, p) in points.iter().enumerate() {
            if p.n_blocks < 1 {
                return Err(DatasetError::InvalidPoint { index: i, reason: "no valid blocks".into() });
            }
            if !(p.stderr >= 0.0) || !p.mean.is_finite() || !p.x.is_finite() {
                return Err(DatasetError::InvalidPoint { index: i, reason: "non-finite value or negative stderr".into() });
            }
            if i > 0 && !(p.x > points[i - 1].x) {
                return Err(DatasetError::NotIncreasing(i));
            }
        }
        Ok(Self { metadata, points })
    }

    pub fn xs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_text(&self) -> String {
        let m = &self.metadata;
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        let _ = writeln!(out, "# kind = {}", m.kind);
        let _ = writeln!(out, "# x_name = {}", m.x_name);
        let _ = writeln!(out, "# x_unit = {}", m.x_unit);
        let _ = writeln!(out, "# seed = {}", m.seed);
        let _ = writeln!(out, "# n_blocks = {}", m.n_blocks);
        if let Some(p) = m.power_dbm {
            let _ = writeln!(out, "# power_dbm = {p:e}");
        }
        if let Some(b) = &m.branch {
            let _ = writeln!(out, "# branch = {b}");
        }
        for (k, v) in &m.truth {
            let _ = writeln!(out, "# truth.{k} = {v:e}");
        }
        for line in &m.extra {
            let _ = writeln!(out, "#| {line}");
        }
        out.push_str("x, mean, stderr, n\n");
        for p in &self.points {
            let _ = writeln!(out, "{:.16e}, {:.16e}, {:.16e}, {}", p.x, p.mean, p.stderr, p.n_blocks);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, DatasetError> {
        let perr = |line: usize, reason: &str| DatasetError::Parse { line, reason: reason.to_string() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => return Err(perr(1, "missing sweep header")),
        }
        let mut kind = None;
        let mut meta = SweepMetadata::new(SequenceKind::Rabi, 0, 0);
        let mut points = Vec::new();
        let mut in_table = false;
        for (no, raw) in lines {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(extra) = line.strip_prefix("#|") {
                meta.extra.push(extra.strip_prefix(' ').unwrap_or(extra).to_string());
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (key, value) = rest.split_once('=').ok_or_else(|| perr(no, "expected `key = value`"))?;
                let (key, value) = (key.trim(), value.trim());
                let num = || value.parse::<f64>().map_err(|_| perr(no, "malformed number"));
                match key {
                    "kind" => kind = Some(SequenceKind::from_name(value).ok_or_else(|| perr(no, "unknown kind"))?),
                    "x_name" => meta.x_name = value.to_string(),
                    "x_unit" => meta.x_unit = value.to_string(),
                    "seed" => meta.seed = value.parse().map_err(|_| perr(no, "malformed seed"))?,
                    "n_blocks" => meta.n_blocks = value.parse().map_err(|_| perr(no, "malformed n_blocks"))?,
                    "power_dbm" => meta.power_dbm = Some(num()?),
                    "branch" => meta.branch = Some(value.to_string()),
                    k => match k.strip_prefix("truth.") {
                        Some(name) => meta.truth.push((name.to_string(), num()?)),
                        None => return Err(perr(no, "unknown header key")),
                    },
                }
                continue;
            }
            if !in_table {
                if line.replace(' ', "") != "x,mean,stderr,n" {
                    return Err(perr(no, "expected column header `x, mean, stderr, n`"));
                }
                in_table = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(perr(no, "expected four columns"));
            }
            let f = |s: &str| s.parse::<f64>().map_err(|_| perr(no, "malformed number"));
            points.push(SweepPoint {
                x: f(cols[0])?,
                mean: f(cols[1])?,
                stderr: f(cols[2])?,
                n_blocks: cols[3].parse().map_err(|_| perr(no, "malformed block count"))?,
            });
        }
        meta.kind = kind.ok_or_else(|| perr(1, "missing `kind`"))?;
        Self::new(meta, points)
    }
}
