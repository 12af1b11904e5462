//! The virtual instrument.
//!
//! Every swept point is measured as a series of blocks; a block is three
//! acquisitions taken back to back with the same timing (full sequence,
//! microwave suppressed, everything suppressed) and is normalized as
//! `(S - B) / (R - B)`. Images are reduced to region-averaged counts.
//!
//! The coherence models are contrast-positive; the instrument maps a model
//! value `m(x)` to photoluminescence `1 - C · m(x)` where `C` is the
//! effective optical contrast obtained from the pumping model.

mod dataset;

use std::f64::consts::FRAC_PI_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{DatasetError, SweepMetadata, SweepPoint, SweepResult};

use crate::coherence::{hahn_echo_signal, rabi_signal, t1_signal, EchoParams, RabiParams, T1Params};
use crate::physics::{resonance_frequencies, PhysicalConstants, PhysicsError};
use crate::pulse::{build, compile, HardwareProfile, SequenceKind, TauSpec};
use crate::pumping::{pumped_polarization, readout_contrast, LevelScheme, PumpingError};

/// Counts below this use exact Poisson sampling; above it a normal
/// approximation.
const POISSON_LIMIT: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("invalid sweep grid: {0}")]
    InvalidGrid(String),
    #[error("degenerate normalization: reference {reference} <= background {background}")]
    DegenerateNormalization { reference: f64, background: f64 },
    #[error("every block at x = {0} had a degenerate normalization")]
    AllBlocksInvalid(f64),
    #[error("invalid power calibration: {0}")]
    InvalidCalibration(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Pumping(#[from] PumpingError),
    #[error("sequence error: {0}")]
    Sequence(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Expected counts in a reference image.
    pub photon_budget: f64,
    pub background_level: f64,
    /// Fractional change of the collected light per block.
    pub drift_rate: f64,
    pub rng_seed: u64,
    /// When false the expected counts are returned without sampling.
    pub counting_noise: bool,
}

impl NoiseModel {
    /// Noise whose per-image relative fluctuation is `level` (1% → 1e4 counts).
    pub fn relative(level: f64, seed: u64) -> Self {
        Self {
            photon_budget: 1.0 / (level * level),
            background_level: 0.0,
            drift_rate: 0.0,
            rng_seed: seed,
            counting_noise: true,
        }
    }

    pub fn noiseless(seed: u64) -> Self {
        Self {
            photon_budget: 1e4,
            background_level: 0.0,
            drift_rate: 0.0,
            rng_seed: seed,
            counting_noise: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.photon_budget > 0.0) {
            return Err(SimError::InvalidNoise("photon budget must be positive".into()));
        }
        if !(self.background_level >= 0.0) || !(self.drift_rate >= 0.0) {
            return Err(SimError::InvalidNoise("background and drift must be non-negative".into()));
        }
        Ok(())
    }
}

/// One signal / reference / background triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementBlock {
    pub signal_counts: f64,
    pub reference_counts: f64,
    pub background_counts: f64,
}

/// `(S - B) / (R - B)`.
pub fn normalize(b: &MeasurementBlock) -> Result<f64, SimError> {
    let denom = b.reference_counts - b.background_counts;
    if !(denom > 0.0) {
        return Err(SimError::DegenerateNormalization {
            reference: b.reference_counts,
            background: b.background_counts,
        });
    }
    Ok((b.signal_counts - b.background_counts) / denom)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-block RNG seed derived from the run seed, the swept value and the
/// block index, so results do not depend on evaluation order.
pub fn block_seed(seed: u64, x: f64, block_index: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ x.to_bits()) ^ block_index as u64)
}

fn sample_counts(mean: f64, rng: &mut ChaCha8Rng) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    if mean < POISSON_LIMIT {
        Poisson::new(mean).expect("positive mean").sample(rng)
    } else {
        Normal::new(mean, mean.sqrt()).expect("finite sigma").sample(rng).max(0.0)
    }
}

/// Optical properties feeding the instrument: ground `|0>` fraction after
/// the pump and relative readout contrast between `|0>` and `|±1>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optics {
    pub polarization: f64,
    pub readout_contrast: f64,
}

impl Optics {
    pub fn from_scheme(scheme: &LevelScheme, hw: &HardwareProfile) -> Result<Self, SimError> {
        Ok(Self {
            polarization: pumped_polarization(scheme, hw.pump_duration_ns)?,
            readout_contrast: readout_contrast(scheme, hw.readout_duration_ns)?,
        })
    }

    /// Fractional photoluminescence drop for complete transfer of the
    /// polarization imbalance into the dark level.
    pub fn effective_contrast(&self) -> f64 {
        let p = self.polarization;
        let c = self.readout_contrast;
        c * (p - 0.5 * (1.0 - p)) / (1.0 - c * (1.0 - p))
    }
}

/// Population transferred by a π-pulse of `applied_ns` when the true π-time
/// is `true_ns`.
pub fn pi_pulse_fidelity(applied_ns: f64, true_ns: f64) -> f64 {
    (FRAC_PI_2 * applied_ns / true_ns).sin().powi(2)
}

/// MW power → Rabi frequency and `T2*`, interpolated log-linearly in power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCalibration {
    /// `(power_dbm, rabi_freq_mhz, t2_star_us)` sorted by power.
    pub points: Vec<(f64, f64, f64)>,
}

impl Default for PowerCalibration {
    /// 40 dBm: `t_pi = 44 ns`, `T2* = 190 ns`. 30 dBm: `T2* = 350 ns` with
    /// the Rabi frequency scaled by `sqrt(P)` from the 40 dBm point.
    fn default() -> Self {
        let f40 = RabiParams::freq_for_pi_time_ns(44.0);
        Self {
            points: vec![(30.0, f40 / 10f64.sqrt(), 0.350), (40.0, f40, 0.190)],
        }
    }
}

impl PowerCalibration {
    pub fn new(mut points: Vec<(f64, f64, f64)>) -> Result<Self, SimError> {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.is_empty() {
            return Err(SimError::InvalidCalibration("no calibration points".into()));
        }
        if points.iter().any(|p| !(p.1 > 0.0 && p.2 > 0.0)) {
            return Err(SimError::InvalidCalibration("values must be positive".into()));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0 && w[1].1 > w[0].1)) {
            return Err(SimError::InvalidCalibration(
                "Rabi frequency must increase strictly with power".into(),
            ));
        }
        Ok(Self { points })
    }

    /// `(rabi_freq_mhz, t2_star_us)` at `power_dbm`; outside the table the
    /// end segments are extended.
    pub fn at(&self, power_dbm: f64) -> (f64, f64) {
        let pts = &self.points;
        if pts.len() == 1 {
            return (pts[0].1, pts[0].2);
        }
        let i = pts
            .windows(2)
            .position(|w| power_dbm <= w[1].0)
            .unwrap_or(pts.len() - 2);
        let (a, b) = (pts[i], pts[i + 1]);
        let s = (power_dbm - a.0) / (b.0 - a.0);
        let lerp_log = |ya: f64, yb: f64| (ya.ln() + s * (yb.ln() - ya.ln())).exp();
        (lerp_log(a.1, b.1), lerp_log(a.2, b.2))
    }
}

/// What the spins do during the microwave block, as a contrast-positive
/// transfer fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalModel {
    /// `x` = microwave pulse duration in ns.
    Rabi(RabiParams),
    /// `x` = delay in ms.
    T1 { params: T1Params, pulse_fidelity: f64 },
    /// `x` = τ in µs.
    Echo { params: EchoParams, pulse_fidelity: f64 },
    /// `x` = microwave frequency in MHz.
    Odmr {
        upper_mhz: f64,
        lower_mhz: f64,
        linewidth_mhz: f64,
        pulse_fidelity: f64,
    },
}

impl SignalModel {
    pub fn kind(&self) -> SequenceKind {
        match self {
            SignalModel::Rabi(_) => SequenceKind::Rabi,
            SignalModel::T1 { .. } => SequenceKind::T1,
            SignalModel::Echo { .. } => SequenceKind::HahnEcho,
            SignalModel::Odmr { .. } => SequenceKind::Odmr,
        }
    }

    pub fn transfer(&self, x: f64) -> f64 {
        match self {
            SignalModel::Rabi(p) => rabi_signal(x * 1e-3, p),
            SignalModel::T1 { params, pulse_fidelity } => pulse_fidelity * t1_signal(x, params),
            SignalModel::Echo { params, pulse_fidelity } => pulse_fidelity * hahn_echo_signal(x, params),
            SignalModel::Odmr {
                upper_mhz,
                lower_mhz,
                linewidth_mhz,
                pulse_fidelity,
            } => {
                let lorentz = |f0: f64| {
                    let u = 2.0 * (x - f0) / linewidth_mhz;
                    1.0 / (1.0 + u * u)
                };
                let both = 1.0 - (1.0 - lorentz(*upper_mhz)) * (1.0 - lorentz(*lower_mhz));
                pulse_fidelity * both
            }
        }
    }

    fn truth_entries(&self) -> Vec<(String, f64)> {
        let e = |k: &str, v: f64| (k.to_string(), v);
        match self {
            SignalModel::Rabi(p) => vec![
                e("rabi_freq_mhz", p.rabi_freq_mhz),
                e("detuning_mhz", p.detuning_mhz),
                e("t2_star_us", p.t2_star_us),
                e("t_pi_ns", 1e3 * std::f64::consts::PI / p.generalized_omega()),
            ],
            SignalModel::T1 { params, pulse_fidelity } => {
                vec![e("t1_ms", params.t1_ms), e("pulse_fidelity", *pulse_fidelity)]
            }
            SignalModel::Echo { params, pulse_fidelity } => vec![
                e("t2_us", params.t2_us),
                e("n", params.n),
                e("k", params.k),
                e("f_a_mhz", params.f_a_mhz),
                e("f_b_mhz", params.f_b_mhz),
                e("pulse_fidelity", *pulse_fidelity),
            ],
            SignalModel::Odmr {
                upper_mhz,
                lower_mhz,
                linewidth_mhz,
                ..
            } => vec![
                e("upper_mhz", *upper_mhz),
                e("lower_mhz", *lower_mhz),
                e("linewidth_mhz", *linewidth_mhz),
            ],
        }
    }
}

/// Ground-truth spin parameters of the simulated sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinTruth {
    pub rabi_freq_mhz: f64,
    pub detuning_mhz: f64,
    pub t2_star_us: f64,
    pub t1_ms: f64,
    pub t2_us: f64,
    pub n: f64,
    pub k: f64,
    pub f_a_mhz: f64,
    pub f_b_mhz: f64,
}

impl SpinTruth {
    /// Sample at `power_dbm` with the characterized T1 and echo parameters.
    pub fn at_power(cal: &PowerCalibration, power_dbm: f64) -> Self {
        let (rabi_freq_mhz, t2_star_us) = cal.at(power_dbm);
        Self {
            rabi_freq_mhz,
            detuning_mhz: 0.0,
            t2_star_us,
            t1_ms: 1.78,
            t2_us: 2.38,
            n: 1.29,
            k: 3.0,
            f_a_mhz: 3.04,
            f_b_mhz: 0.07,
        }
    }

    pub fn rabi(&self) -> RabiParams {
        RabiParams {
            rabi_freq_mhz: self.rabi_freq_mhz,
            detuning_mhz: self.detuning_mhz,
            t2_star_us: self.t2_star_us,
            amplitude: 1.0,
            offset: 0.0,
        }
    }

    pub fn t1(&self) -> T1Params {
        T1Params {
            t1_ms: self.t1_ms,
            amplitude: 1.0,
            offset: 0.0,
        }
    }

    pub fn echo(&self) -> EchoParams {
        EchoParams {
            t2_us: self.t2_us,
            n: self.n,
            k: self.k,
            f_a_mhz: self.f_a_mhz,
            f_b_mhz: self.f_b_mhz,
            amplitude: 1.0,
            offset: 0.0,
        }
    }

    /// True π-pulse duration, ns.
    pub fn t_pi_ns(&self) -> f64 {
        1e3 * std::f64::consts::PI / self.rabi().generalized_omega()
    }
}

/// A configured measurement: what the spins do and how much light contrast
/// that produces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experiment {
    pub model: SignalModel,
    /// Photoluminescence drop for unit transfer.
    pub contrast: f64,
}

impl Experiment {
    pub fn new(model: SignalModel, contrast: f64) -> Self {
        Self { model, contrast }
    }

    /// Builds the experiment for `kind`, compiling its canonical sequence
    /// with the π-pulse the operator calibrated (`t_pi_applied_ns`). The
    /// tick-quantized π-pulse sets the transfer fidelity of T1, echo and
    /// ODMR sequences.
    pub fn for_kind(
        kind: SequenceKind,
        truth: &SpinTruth,
        contrast: f64,
        t_pi_applied_ns: f64,
        hw: &HardwareProfile,
    ) -> Result<Self, SimError> {
        let fidelity = || -> Result<f64, SimError> {
            let (seq, bindings) =
                build(SequenceKind::T1, t_pi_applied_ns, TauSpec::Fixed(0.0)).map_err(|e| SimError::Sequence(e.to_string()))?;
            let resolved = seq.resolve(&bindings).map_err(|e| SimError::Sequence(e.to_string()))?;
            let table = compile(&resolved, hw).map_err(|e| SimError::Sequence(e.to_string()))?;
            let applied = table.mw[0].len() as f64 * hw.tick_ns;
            Ok(pi_pulse_fidelity(applied, truth.t_pi_ns()))
        };
        let model = match kind {
            SequenceKind::Rabi => SignalModel::Rabi(truth.rabi()),
            SequenceKind::T1 => SignalModel::T1 {
                params: truth.t1(),
                pulse_fidelity: fidelity()?,
            },
            SequenceKind::HahnEcho => SignalModel::Echo {
                params: truth.echo(),
                pulse_fidelity: fidelity()?,
            },
            SequenceKind::Odmr => {
                return Err(SimError::Sequence("use Experiment::odmr for frequency scans".into()));
            }
        };
        Ok(Self { model, contrast })
    }

    pub fn odmr(
        constants: &PhysicalConstants,
        b_z_mt: f64,
        linewidth_mhz: f64,
        contrast: f64,
    ) -> Result<Self, SimError> {
        let (upper_mhz, lower_mhz) = resonance_frequencies(constants, b_z_mt)?;
        Ok(Self {
            model: SignalModel::Odmr {
                upper_mhz,
                lower_mhz,
                linewidth_mhz,
                pulse_fidelity: 1.0,
            },
            contrast,
        })
    }

    pub fn kind(&self) -> SequenceKind {
        self.model.kind()
    }

    /// Noiseless normalized photoluminescence.
    pub fn expected_normalized(&self, x: f64) -> f64 {
        1.0 - self.contrast * self.model.transfer(x)
    }

    /// One signal / reference / background triple at `x`. Deterministic in
    /// `(noise.rng_seed, x, block_index)`.
    pub fn measure_block(&self, x: f64, noise: &NoiseModel, block_index: usize) -> MeasurementBlock {
        let drift = 1.0 + noise.drift_rate * block_index as f64;
        let light = noise.photon_budget * drift;
        let signal = noise.background_level + light * self.expected_normalized(x);
        let reference = noise.background_level + light;
        let background = noise.background_level;
        if !noise.counting_noise {
            return MeasurementBlock {
                signal_counts: signal,
                reference_counts: reference,
                background_counts: background,
            };
        }
        let mut rng = ChaCha8Rng::seed_from_u64(block_seed(noise.rng_seed, x, block_index));
        MeasurementBlock {
            signal_counts: sample_counts(signal, &mut rng),
            reference_counts: sample_counts(reference, &mut rng),
            background_counts: sample_counts(background, &mut rng),
        }
    }

    fn measure_point(&self, x: f64, noise: &NoiseModel, n_blocks: usize) -> Result<SweepPoint, SimError> {
        let values: Vec<f64> = (0..n_blocks)
            .filter_map(|b| normalize(&self.measure_block(x, noise, b)).ok())
            .collect();
        if values.is_empty() {
            return Err(SimError::AllBlocksInvalid(x));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() > 1 && noise.counting_noise {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Ok(SweepPoint {
            x,
            mean,
            stderr,
            n_blocks: values.len(),
        })
    }

    /// Sweeps `xs`, averaging `n_blocks` normalized blocks per point.
    pub fn run_sweep(&self, xs: &[f64], noise: &NoiseModel, n_blocks: usize) -> Result<SweepResult, SimError> {
        noise.validate()?;
        if xs.is_empty() {
            return Err(SimError::InvalidGrid("grid is empty".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SimError::InvalidGrid("grid must be strictly increasing".into()));
        }
        if n_blocks == 0 {
            return Err(SimError::InvalidGrid("at least one block per point is required".into()));
        }
        let points = xs
            .par_iter()
            .map(|&x| self.measure_point(x, noise, n_blocks))
            .collect::<Result<Vec<_>, _>>()?;
        let mut meta = SweepMetadata::new(self.kind(), noise.rng_seed, n_blocks);
        meta.truth = self.model.truth_entries();
        meta.truth.push(("contrast".into(), self.contrast));
        Ok(SweepResult::new(meta, points)?)
    }
}

/// Scans the microwave frequency across `freqs_mhz` at field `b_z_mt`.
pub fn run_odmr_scan(
    freqs_mhz: &[f64],
    b_z_mt: f64,
    linewidth_mhz: f64,
    constants: &PhysicalConstants,
    contrast: f64,
    noise: &NoiseModel,
    n_blocks: usize,
) -> Result<SweepResult, SimError> {
    Experiment::odmr(constants, b_z_mt, linewidth_mhz, contrast)?.run_sweep(freqs_mhz, noise, n_blocks)
}

/// `count` points from `start` to `stop` inclusive, linearly or
/// geometrically spaced.
pub fn grid(start: f64, stop: f64, count: usize, log: bool) -> Result<Vec<f64>, SimError> {
    if count < 2 || !(stop > start) {
        return Err(SimError::InvalidGrid(format!("need count >= 2 and stop > start ({start}..{stop}, {count})")));
    }
    if log && !(start > 0.0) {
        return Err(SimError::InvalidGrid("log grids need a positive start".into()));
    }
    let last = (count - 1) as f64;
    Ok((0..count)
        .map(|i| {
            let s = i as f64 / last;
            if log {
                (start.ln() + s * (stop.ln() - start.ln())).exp()
            } else {
                start + s * (stop - start)
            }
        })
        .collect())
}
