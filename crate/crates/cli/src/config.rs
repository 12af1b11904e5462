//! Run configuration: one TOML file plus command-line overrides.
//!
//! ```toml
//! kind = "T1"
//! seed = 7
//! power_dbm = 40.0
//! blocks = 150
//! grid = "0:25:40"
//!
//! [noise]
//! level = 0.01
//!
//! [truth]
//! t1_ms = 1.78
//! ```

use std::fmt;
use std::str::FromStr;

use nvlab_core::physics::PhysicalConstants;
use nvlab_core::pulse::{HardwareProfile, SequenceKind};
use nvlab_core::pumping::LevelScheme;
use nvlab_core::sim::{grid, NoiseModel, Optics, PowerCalibration, SpinTruth};
use serde::{Deserialize, Serialize};

use crate::CliError;

const MIN_GRID_POINTS: usize = 8;

/// `start:stop:count[:log]` in the sweep's native unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    pub log: bool,
}

impl GridSpec {
    pub fn linear(start: f64, stop: f64, count: usize) -> Self {
        Self { start, stop, count, log: false }
    }

    pub fn points(&self) -> Result<Vec<f64>, CliError> {
        if self.count < MIN_GRID_POINTS {
            return Err(CliError::Config(format!("grid needs at least {MIN_GRID_POINTS} points, got {}", self.count)));
        }
        grid(self.start, self.stop, self.count, self.log).map_err(|e| CliError::Config(e.to_string()))
    }
}

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let bad = || format!("invalid grid `{s}`; expected start:stop:count[:log]");
        if !(3..=4).contains(&parts.len()) {
            return Err(bad());
        }
        let log = match parts.get(3) {
            None | Some(&"lin") | Some(&"linear") => false,
            Some(&"log") => true,
            Some(_) => return Err(bad()),
        };
        Ok(Self {
            start: parts[0].parse().map_err(|_| bad())?,
            stop: parts[1].parse().map_err(|_| bad())?,
            count: parts[2].parse().map_err(|_| bad())?,
            log,
        })
    }
}

impl TryFrom<String> for GridSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<GridSpec> for String {
    fn from(g: GridSpec) -> String {
        g.to_string()
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.count)?;
        if self.log {
            f.write_str(":log")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Relative per-image shot noise; 0 disables counting noise.
    pub level: f64,
    /// Background light as a fraction of the reference level.
    pub background: f64,
    /// Fractional light drift per block.
    pub drift: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { level: 0.01, background: 0.0, drift: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSet {
    pub rabi: Option<GridSpec>,
    pub t1: Option<GridSpec>,
    pub echo: Option<GridSpec>,
    pub odmr: Option<GridSpec>,
}

/// Overrides of the sample's ground truth; unset values come from the power
/// calibration and the characterized T1 / echo parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    pub rabi_freq_mhz: Option<f64>,
    pub detuning_mhz: Option<f64>,
    pub t2_star_us: Option<f64>,
    pub t1_ms: Option<f64>,
    pub t2_us: Option<f64>,
    pub n: Option<f64>,
    pub k: Option<f64>,
    pub f_a_mhz: Option<f64>,
    pub f_b_mhz: Option<f64>,
    /// Photoluminescence contrast; defaults to the optical-pumping model.
    pub contrast: Option<f64>,
    /// π-pulse the operator applies in T1 / echo simulations; defaults to
    /// the true π-time.
    pub t_pi_applied_ns: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdmrConfig {
    pub b_z_mt: f64,
    pub linewidth_mhz: f64,
}

impl Default for OdmrConfig {
    fn default() -> Self {
        Self { b_z_mt: 8.5, linewidth_mhz: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Let the Rabi detuning float instead of holding it at zero.
    pub free_detuning: bool,
    /// Use uniform weights instead of inverse-variance.
    pub uniform_weights: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kind: Option<String>,
    pub seed: Option<u64>,
    pub power_dbm: f64,
    pub blocks: usize,
    pub out: String,
    pub grid: Option<GridSpec>,
    pub noise: NoiseConfig,
    pub grids: GridSet,
    pub truth: TruthConfig,
    pub odmr: OdmrConfig,
    pub fit: FitConfig,
    pub hardware: HardwareProfile,
    pub scheme: LevelScheme,
    pub calibration: PowerCalibration,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kind: None,
            seed: None,
            power_dbm: 40.0,
            blocks: 150,
            out: "nvlab-out".into(),
            grid: None,
            noise: NoiseConfig::default(),
            grids: GridSet::default(),
            truth: TruthConfig::default(),
            odmr: OdmrConfig::default(),
            fit: FitConfig::default(),
            hardware: HardwareProfile::default(),
            scheme: LevelScheme::default(),
            calibration: PowerCalibration::default(),
        }
    }
}

/// Values given on the command line; set ones win over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub kind: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub power_dbm: Option<f64>,
    pub blocks: Option<usize>,
    pub grid: Option<GridSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: Option<&std::path::Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(k) = &o.kind {
            self.kind = Some(k.clone());
        }
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(p) = o.power_dbm {
            self.power_dbm = p;
        }
        if let Some(b) = o.blocks {
            self.blocks = b;
        }
        if o.grid.is_some() {
            self.grid = o.grid;
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    /// Checks the invariants and fills in everything derived from them.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let cfg = |m: String| CliError::Config(m);
        let seed = self.seed.ok_or_else(|| cfg("a seed is required (set `seed` or pass --seed)".into()))?;
        let kind = match &self.kind {
            None => None,
            Some(k) => Some(SequenceKind::from_name(k).ok_or_else(|| cfg(format!("unknown experiment kind `{k}`")))?),
        };
        if self.blocks == 0 {
            return Err(cfg("blocks must be at least 1".into()));
        }
        if !(self.noise.level >= 0.0 && self.noise.background >= 0.0 && self.noise.drift >= 0.0) {
            return Err(cfg("noise level, background and drift must be non-negative".into()));
        }
        if !self.power_dbm.is_finite() {
            return Err(cfg("power_dbm must be finite".into()));
        }
        self.hardware.validate().map_err(|e| cfg(e.to_string()))?;
        self.scheme.validate().map_err(|e| cfg(e.to_string()))?;
        let calibration = PowerCalibration::new(self.calibration.points.clone()).map_err(|e| cfg(e.to_string()))?;

        let base = SpinTruth::at_power(&calibration, self.power_dbm);
        let t = &self.truth;
        let truth = SpinTruth {
            rabi_freq_mhz: t.rabi_freq_mhz.unwrap_or(base.rabi_freq_mhz),
            detuning_mhz: t.detuning_mhz.unwrap_or(base.detuning_mhz),
            t2_star_us: t.t2_star_us.unwrap_or(base.t2_star_us),
            t1_ms: t.t1_ms.unwrap_or(base.t1_ms),
            t2_us: t.t2_us.unwrap_or(base.t2_us),
            n: t.n.unwrap_or(base.n),
            k: t.k.unwrap_or(base.k),
            f_a_mhz: t.f_a_mhz.unwrap_or(base.f_a_mhz),
            f_b_mhz: t.f_b_mhz.unwrap_or(base.f_b_mhz),
        };
        truth.rabi().validate().map_err(|e| cfg(e.to_string()))?;
        truth.t1().validate().map_err(|e| cfg(e.to_string()))?;
        truth.echo().validate().map_err(|e| cfg(e.to_string()))?;
        if !(truth.rabi_freq_mhz > 0.0) {
            return Err(cfg("Rabi frequency must be positive".into()));
        }

        let contrast = match t.contrast {
            Some(c) => c,
            None => Optics::from_scheme(&self.scheme, &self.hardware)
                .map_err(|e| cfg(e.to_string()))?
                .effective_contrast(),
        };
        if !(contrast > 0.0 && contrast <= 1.0) {
            return Err(cfg(format!("contrast must lie in (0, 1], got {contrast}")));
        }
        if !(self.odmr.linewidth_mhz > 0.0) || !self.odmr.b_z_mt.is_finite() || self.odmr.b_z_mt < 0.0 {
            return Err(cfg("ODMR needs a positive linewidth and a non-negative field".into()));
        }

        let mut config = self.clone();
        config.calibration = calibration;
        Ok(Resolved { config, seed, kind, truth, contrast })
    }
}

/// A validated configuration with its derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub config: RunConfig,
    pub seed: u64,
    pub kind: Option<SequenceKind>,
    pub truth: SpinTruth,
    pub contrast: f64,
}

impl Resolved {
    pub fn noise(&self, seed: u64) -> NoiseModel {
        let n = &self.config.noise;
        if n.level == 0.0 {
            return NoiseModel { drift_rate: n.drift, ..NoiseModel::noiseless(seed) };
        }
        let base = NoiseModel::relative(n.level, seed);
        NoiseModel {
            background_level: n.background * base.photon_budget,
            drift_rate: n.drift,
            ..base
        }
    }

    /// Grid for `kind`: the command-line / top-level grid when it applies,
    /// then the `[grids]` table, then a default scaled to the truth.
    pub fn grid_for(&self, kind: SequenceKind, use_top_level: bool) -> Result<GridSpec, CliError> {
        let g = &self.config.grids;
        let specific = match kind {
            SequenceKind::Rabi => g.rabi,
            SequenceKind::T1 => g.t1,
            SequenceKind::HahnEcho => g.echo,
            SequenceKind::Odmr => g.odmr,
        };
        let top = if use_top_level { self.config.grid } else { None };
        let spec = top.or(specific).unwrap_or_else(|| self.default_grid(kind));
        spec.points()?;
        Ok(spec)
    }

    fn default_grid(&self, kind: SequenceKind) -> GridSpec {
        let t = &self.truth;
        match kind {
            // 0–600 ns / 60 points at the 190 ns T2*; longer windows keep at
            // least four samples per Rabi period.
            SequenceKind::Rabi => {
                let stop = (600.0 * (t.t2_star_us / 0.190).max(1.0)).round();
                let step = 0.5 * t.t_pi_ns();
                let count = 60usize.max((stop / step).ceil() as usize + 1);
                GridSpec::linear(0.0, stop, count)
            }
            SequenceKind::T1 => GridSpec::linear(0.0, 25.0 * t.t1_ms / 1.78, 40),
            // 25 ns steps over 0–4 µs at T2 = 2.38 µs, at least 8 samples per
            // modulation period.
            SequenceKind::HahnEcho => {
                let stop = 4.0 * t.t2_us / 2.38;
                let count = 161usize.max((stop * t.f_a_mhz * 8.0).ceil() as usize + 1);
                GridSpec::linear(0.0, stop, count)
            }
            SequenceKind::Odmr => {
                let c = PhysicalConstants::default();
                let split = c.gamma_e_mhz_per_mt * self.config.odmr.b_z_mt;
                let lo = ((c.d_mhz - split - 150.0) / 10.0).floor() * 10.0;
                let hi = ((c.d_mhz + split + 150.0) / 10.0).ceil() * 10.0;
                GridSpec::linear(lo, hi, ((hi - lo) as usize) + 1)
            }
        }
    }

    /// Per-stage seed of a pipeline: the run seed offset by the stage index.
    pub fn stage_seed(&self, stage: u64) -> u64 {
        self.seed.wrapping_add(stage)
    }
}
