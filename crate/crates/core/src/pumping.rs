//! Rate-equation model of optical pumping and spin-dependent readout.
//!
//! Seven effective levels: ground triplet `{0, +1, -1}`, excited triplet
//! `{0, +1, -1}` and a single merged singlet metastable level. Populations
//! evolve as `dp/dt = G p` where `G[(i, j)]` is the rate from level `j` to
//! level `i`. Times are in ns, rates in 1/ns.
//!
//! The intersystem-crossing rates, singlet branching and pump rate are not
//! pinned by measurement; the defaults below are model choices that give
//! strong polarization into ground `|0>` and a positive readout contrast.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_LEVELS: usize = 7;

pub type RateMatrix = SMatrix<f64, N_LEVELS, N_LEVELS>;
pub type Populations = SVector<f64, N_LEVELS>;

const SIMPLEX_TOL: f64 = 1e-9;

/// Level indices within a [`PopulationVector`].
pub mod level {
    pub const GROUND_0: usize = 0;
    pub const GROUND_PLUS: usize = 1;
    pub const GROUND_MINUS: usize = 2;
    pub const EXCITED_0: usize = 3;
    pub const EXCITED_PLUS: usize = 4;
    pub const EXCITED_MINUS: usize = 5;
    pub const SINGLET: usize = 6;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PumpingError {
    #[error("invalid level scheme: {0}")]
    InvalidScheme(String),
    #[error("laser is on but the pump rate is zero")]
    NoPump,
    #[error("invalid population vector: {0}")]
    InvalidPopulations(String),
    #[error("steady state is not unique ({null_dim} stationary directions)")]
    NonUniqueSteadyState { null_dim: usize },
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LevelScheme {
    /// Excited-state radiative lifetime, ns.
    pub radiative_lifetime_ns: f64,
    /// Lifetime of the merged singlet metastable level, ns.
    pub metastable_lifetime_ns: f64,
    /// Intersystem crossing from excited `|±1>`, 1/ns.
    pub isc_rate_pm1: f64,
    /// Intersystem crossing from excited `|0>`, 1/ns.
    pub isc_rate_0: f64,
    /// Fraction of singlet decay landing in ground `|0>`; the rest splits
    /// equally between `|±1>`.
    pub singlet_branching_to_0: f64,
    /// Ground-to-excited optical pumping rate under illumination, 1/ns.
    pub pump_rate: f64,
}

impl Default for LevelScheme {
    fn default() -> Self {
        Self {
            radiative_lifetime_ns: 12.9,
            metastable_lifetime_ns: 200.0,
            isc_rate_pm1: 0.08,
            isc_rate_0: 0.008,
            singlet_branching_to_0: 0.8,
            pump_rate: 5e-4,
        }
    }
}

impl LevelScheme {
    pub fn validate(&self) -> Result<(), PumpingError> {
        let rates = [
            self.isc_rate_pm1,
            self.isc_rate_0,
            self.pump_rate,
        ];
        if rates.iter().any(|r| !(*r >= 0.0)) {
            return Err(PumpingError::InvalidScheme("rates must be non-negative".into()));
        }
        if !(self.radiative_lifetime_ns > 0.0) || !(self.metastable_lifetime_ns > 0.0) {
            return Err(PumpingError::InvalidScheme("lifetimes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.singlet_branching_to_0) {
            return Err(PumpingError::InvalidScheme("singlet branching must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Scheme with no spin selectivity anywhere.
    pub fn symmetric(&self) -> Self {
        Self {
            isc_rate_0: self.isc_rate_pm1,
            singlet_branching_to_0: 1.0 / 3.0,
            ..*self
        }
    }
}

/// Occupation probabilities of the seven levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationVector(Populations);

impl PopulationVector {
    pub fn new(p: [f64; N_LEVELS]) -> Result<Self, PumpingError> {
        if p.iter().any(|x| !(*x >= -SIMPLEX_TOL && *x <= 1.0 + SIMPLEX_TOL)) {
            return Err(PumpingError::InvalidPopulations("entries must lie in [0, 1]".into()));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(PumpingError::InvalidPopulations(format!("sum {sum} != 1")));
        }
        Ok(Self(Populations::from(p)))
    }

    pub fn pure(index: usize) -> Self {
        let mut p = Populations::zeros();
        p[index] = 1.0;
        Self(p)
    }

    /// Thermal ground state: equal thirds over the ground triplet.
    pub fn unpolarized() -> Self {
        let mut p = Populations::zeros();
        for i in 0..3 {
            p[i] = 1.0 / 3.0;
        }
        Self(p)
    }

    pub fn as_vector(&self) -> &Populations {
        &self.0
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }

    pub fn sum(&self) -> f64 {
        self.0.sum()
    }

    pub fn ground_total(&self) -> f64 {
        self.0[level::GROUND_0] + self.0[level::GROUND_PLUS] + self.0[level::GROUND_MINUS]
    }

    pub fn excited_total(&self) -> f64 {
        self.0[level::EXCITED_0] + self.0[level::EXCITED_PLUS] + self.0[level::EXCITED_MINUS]
    }

    /// Fraction of the ground manifold sitting in `|0>`.
    pub fn ground_polarization(&self) -> f64 {
        self.0[level::GROUND_0] / self.ground_total()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        (self.0 - other.0).abs().sum()
    }
}

/// Generator of the level kinetics.
pub fn rate_matrix(s: &LevelScheme, laser_on: bool) -> Result<RateMatrix, PumpingError> {
    use level::*;
    s.validate()?;
    if laser_on && s.pump_rate == 0.0 {
        return Err(PumpingError::NoPump);
    }
    let mut g = RateMatrix::zeros();
    let mut add = |from: usize, to: usize, rate: f64| {
        g[(to, from)] += rate;
        g[(from, from)] -= rate;
    };
    let pairs = [
        (GROUND_0, EXCITED_0, s.isc_rate_0),
        (GROUND_PLUS, EXCITED_PLUS, s.isc_rate_pm1),
        (GROUND_MINUS, EXCITED_MINUS, s.isc_rate_pm1),
    ];
    let k_rad = 1.0 / s.radiative_lifetime_ns;
    for (ground, excited, isc) in pairs {
        if laser_on {
            add(ground, excited, s.pump_rate);
        }
        add(excited, ground, k_rad);
        add(excited, SINGLET, isc);
    }
    let k_singlet = 1.0 / s.metastable_lifetime_ns;
    let to_0 = s.singlet_branching_to_0;
    add(SINGLET, GROUND_0, k_singlet * to_0);
    add(SINGLET, GROUND_PLUS, k_singlet * 0.5 * (1.0 - to_0));
    add(SINGLET, GROUND_MINUS, k_singlet * 0.5 * (1.0 - to_0));
    Ok(g)
}

/// `exp(G t) p0`.
pub fn propagate(
    s: &LevelScheme,
    p0: &PopulationVector,
    t_ns: f64,
    laser_on: bool,
) -> Result<PopulationVector, PumpingError> {
    if !(t_ns >= 0.0) {
        return Err(PumpingError::NegativeTime(t_ns));
    }
    let g = rate_matrix(s, laser_on)?;
    Ok(PopulationVector((g * t_ns).exp() * p0.0))
}

/// Normalized null vector of the generator.
pub fn steady_state(s: &LevelScheme, laser_on: bool) -> Result<PopulationVector, PumpingError> {
    let g = rate_matrix(s, laser_on)?;
    let svd = g.svd(false, true);
    let v_t = svd.v_t.expect("SVD requested V^T");
    let sv = svd.singular_values;
    let scale = sv.max();
    let null_dim = sv.iter().filter(|x| **x <= 1e-12 * scale).count();
    if null_dim != 1 {
        return Err(PumpingError::NonUniqueSteadyState { null_dim });
    }
    let idx = sv.imin();
    let row = v_t.row(idx).transpose();
    let sum = row.sum();
    let p = row / sum;
    Ok(PopulationVector(p.map(|x| if x.abs() < 1e-15 { 0.0 } else { x })))
}

/// Photoluminescence trace during illumination.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutTrace {
    pub dt_ns: f64,
    /// Radiative decay flux (photons/ns per center) at `k * dt_ns`.
    pub flux: Vec<f64>,
}

impl ReadoutTrace {
    /// Trapezoidal integral of the flux over the window.
    pub fn integrated(&self) -> f64 {
        let n = self.flux.len();
        if n < 2 {
            return 0.0;
        }
        let inner: f64 = self.flux[1..n - 1].iter().sum();
        self.dt_ns * (inner + 0.5 * (self.flux[0] + self.flux[n - 1]))
    }
}

fn radiative_flux(s: &LevelScheme, p: &Populations) -> f64 {
    (p[level::EXCITED_0] + p[level::EXCITED_PLUS] + p[level::EXCITED_MINUS]) / s.radiative_lifetime_ns
}

/// Radiative flux while the laser is on, sampled over `window_ns`.
pub fn readout_trace(
    s: &LevelScheme,
    p0: &PopulationVector,
    window_ns: f64,
) -> Result<ReadoutTrace, PumpingError> {
    if !(window_ns > 0.0) {
        return Err(PumpingError::InvalidScheme(format!(
            "readout window must be positive, got {window_ns}"
        )));
    }
    let g = rate_matrix(s, true)?;
    let steps = ((window_ns / 1.0).ceil() as usize).max(1000);
    let dt = window_ns / steps as f64;
    let step = (g * dt).exp();
    let mut p = p0.0;
    let mut flux = Vec::with_capacity(steps + 1);
    flux.push(radiative_flux(s, &p));
    for _ in 0..steps {
        p = step * p;
        flux.push(radiative_flux(s, &p));
    }
    Ok(ReadoutTrace { dt_ns: dt, flux })
}

/// Relative photoluminescence drop `(I_0 - I_1) / I_0` between a `|0>` and a
/// `|-1>` start integrated over the readout window.
pub fn readout_contrast(s: &LevelScheme, window_ns: f64) -> Result<f64, PumpingError> {
    let bright = readout_trace(s, &PopulationVector::pure(level::GROUND_0), window_ns)?.integrated();
    let dark = readout_trace(s, &PopulationVector::pure(level::GROUND_MINUS), window_ns)?.integrated();
    Ok((bright - dark) / bright)
}

/// Ground-`|0>` fraction after pumping an unpolarized ensemble for `t_ns`.
pub fn pumped_polarization(s: &LevelScheme, t_ns: f64) -> Result<f64, PumpingError> {
    Ok(propagate(s, &PopulationVector::unpolarized(), t_ns, true)?.ground_polarization())
}

#[cfg(test)]
mod tests {
    use super::level::*;
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn generator_structure() {
        let s = LevelScheme::default();
        for laser in [false, true] {
            let g = rate_matrix(&s, laser).unwrap();
            for j in 0..N_LEVELS {
                assert_abs_diff_eq!(g.column(j).sum(), 0.0, epsilon = 1e-15);
                for i in 0..N_LEVELS {
                    if i != j {
                        assert!(g[(i, j)] >= 0.0);
                    }
                }
            }
        }
        let off = rate_matrix(&s, false).unwrap();
        for ground in 0..3 {
            for excited in 3..6 {
                assert_eq!(off[(excited, ground)], 0.0);
            }
        }
        let on = rate_matrix(&s, true).unwrap();
        assert_eq!(on[(EXCITED_0, GROUND_0)], s.pump_rate);
        assert_eq!(on[(EXCITED_PLUS, GROUND_0)], 0.0);
    }

    #[test]
    fn invalid_schemes() {
        let zero_pump = LevelScheme { pump_rate: 0.0, ..Default::default() };
        assert_eq!(rate_matrix(&zero_pump, true), Err(PumpingError::NoPump));
        assert!(rate_matrix(&zero_pump, false).is_ok());
        let bad = LevelScheme { singlet_branching_to_0: 1.2, ..Default::default() };
        assert!(rate_matrix(&bad, false).is_err());
        let bad = LevelScheme { isc_rate_0: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn slowest_dark_relaxation_is_metastable() {
        let s = LevelScheme::default();
        let g = rate_matrix(&s, false).unwrap();
        let eig = g.complex_eigenvalues();
        let mut rates: Vec<f64> = eig.iter().map(|z| z.re.abs()).filter(|r| *r > 1e-12).collect();
        rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(rates[0], 1.0 / s.metastable_lifetime_ns, epsilon = 1e-12);
        assert!(1.0 / rates[0] >= 10.0 * s.radiative_lifetime_ns);
    }

    #[test]
    fn propagate_identity_and_dark_limit() {
        let s = LevelScheme::default();
        let p0 = PopulationVector::new([0.1, 0.1, 0.1, 0.2, 0.1, 0.1, 0.3]).unwrap();
        assert_eq!(propagate(&s, &p0, 0.0, true).unwrap(), p0);
        let late = propagate(&s, &p0, 1e5, false).unwrap();
        assert_abs_diff_eq!(late.ground_total(), 1.0, epsilon = 1e-9);
        assert!(propagate(&s, &p0, -1.0, true).is_err());
    }

    #[test]
    fn steady_state_cases() {
        let s = LevelScheme::default();
        let ss = steady_state(&s, true).unwrap();
        assert!(ss.get(GROUND_0) > 0.8, "ground |0> = {}", ss.get(GROUND_0));
        assert_abs_diff_eq!(ss.sum(), 1.0, epsilon = 1e-12);

        let sym = steady_state(&s.symmetric(), true).unwrap();
        assert_abs_diff_eq!(sym.get(GROUND_0), sym.get(GROUND_PLUS), epsilon = 1e-9);
        assert_abs_diff_eq!(sym.get(GROUND_0), sym.get(GROUND_MINUS), epsilon = 1e-9);

        assert!(matches!(
            steady_state(&s, false),
            Err(PumpingError::NonUniqueSteadyState { null_dim: 3 })
        ));
    }

    #[test]
    fn pump_reaches_steady_state() {
        let s = LevelScheme::default();
        let ss = steady_state(&s, true).unwrap();
        let pumped = propagate(&s, &PopulationVector::unpolarized(), 350_000.0, true).unwrap();
        assert!(pumped.get(GROUND_0) > ss.get(GROUND_0) - 1e-3);
        assert_abs_diff_eq!(pumped.sum(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn readout_examples() {
        let s = LevelScheme::default();
        let dark = readout_trace(&s, &PopulationVector::pure(SINGLET), 100.0).unwrap();
        assert_eq!(dark.flux[0], 0.0);
        let c = readout_contrast(&s, 10_000.0).unwrap();
        assert!(c > 0.0, "contrast {c}");
        let sym = readout_contrast(&s.symmetric(), 10_000.0).unwrap();
        assert_abs_diff_eq!(sym, 0.0, epsilon = 1e-9);
        assert!(readout_trace(&s, &PopulationVector::unpolarized(), 0.0).is_err());
    }

    #[test]
    fn population_vector_validation() {
        assert!(PopulationVector::new([0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.1]).is_err());
        assert!(PopulationVector::new([1.5, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert_abs_diff_eq!(PopulationVector::unpolarized().ground_polarization(), 1.0 / 3.0);
    }
}
