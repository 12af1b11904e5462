//! Closed-form coherence signal models.
//!
//! All three models are contrast-positive: a larger value means more
//! population transferred out of `|0>`. The instrument layer turns them into
//! photoluminescence dips. Frequencies are ordinary (MHz), times are in µs
//! except for T1 which lives on the millisecond scale.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::generalized_rabi;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid {model} parameters: {reason}")]
    InvalidParams { model: &'static str, reason: String },
}

fn invalid(model: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidParams {
        model,
        reason: reason.into(),
    }
}

/// Rabi oscillation under a `T2*` envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiParams {
    /// On-resonance Rabi frequency `Ω_R / 2π`, MHz.
    pub rabi_freq_mhz: f64,
    /// Detuning `Δ / 2π`, MHz.
    pub detuning_mhz: f64,
    pub t2_star_us: f64,
    pub amplitude: f64,
    pub offset: f64,
}

impl RabiParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.t2_star_us > 0.0) {
            return Err(invalid("Rabi", "T2* must be positive"));
        }
        if !(self.rabi_freq_mhz >= 0.0) {
            return Err(invalid("Rabi", "Rabi frequency must be non-negative"));
        }
        if !(self.amplitude > 0.0) {
            return Err(invalid("Rabi", "amplitude must be positive"));
        }
        Ok(())
    }

    /// Generalized Rabi angular frequency, rad/µs.
    pub fn generalized_omega(&self) -> f64 {
        generalized_rabi(TAU * self.rabi_freq_mhz, TAU * self.detuning_mhz)
    }

    /// Rabi frequency (MHz) whose π-pulse lasts `t_pi_ns`.
    pub fn freq_for_pi_time_ns(t_pi_ns: f64) -> f64 {
        1e3 / (2.0 * t_pi_ns)
    }
}

/// `offset + amplitude · exp(-t/T2*) · sin²(Ω'_R t / 2)`, `t` in µs.
pub fn rabi_signal(t_us: f64, p: &RabiParams) -> f64 {
    let half_phase = 0.5 * p.generalized_omega() * t_us;
    p.offset + p.amplitude * (-t_us / p.t2_star_us).exp() * half_phase.sin().powi(2)
}

/// Longitudinal relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T1Params {
    pub t1_ms: f64,
    pub amplitude: f64,
    pub offset: f64,
}

impl T1Params {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.t1_ms > 0.0) {
            return Err(invalid("T1", "T1 must be positive"));
        }
        Ok(())
    }
}

/// `offset + amplitude · exp(-t/T1)`, `t` in ms.
pub fn t1_signal(t_ms: f64, p: &T1Params) -> f64 {
    p.offset + p.amplitude * (-t_ms / p.t1_ms).exp()
}

/// Hahn echo with nuclear-spin modulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoParams {
    pub t2_us: f64,
    /// Stretch exponent of the decay.
    pub n: f64,
    /// Modulation depth.
    pub k: f64,
    /// `ω_a / 2π`, MHz.
    pub f_a_mhz: f64,
    /// `ω_b / 2π`, MHz.
    pub f_b_mhz: f64,
    pub amplitude: f64,
    pub offset: f64,
}

impl EchoParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.t2_us > 0.0) {
            return Err(invalid("HahnEcho", "T2 must be positive"));
        }
        if !(self.n > 0.0) {
            return Err(invalid("HahnEcho", "power index n must be positive"));
        }
        if !(self.k >= 0.0) {
            return Err(invalid("HahnEcho", "modulation depth k must be non-negative"));
        }
        if !(self.f_a_mhz > self.f_b_mhz && self.f_b_mhz >= 0.0) {
            return Err(invalid("HahnEcho", "require f_a > f_b >= 0"));
        }
        Ok(())
    }

    pub fn omega_a(&self) -> f64 {
        TAU * self.f_a_mhz
    }

    pub fn omega_b(&self) -> f64 {
        TAU * self.f_b_mhz
    }
}

/// The modulation factor
/// `1 - 0.25 k [2 - 2cos(ω_a τ) - 2cos(ω_b τ) + cos((ω_a+ω_b)τ) + cos((ω_a-ω_b)τ)]`.
pub fn echo_modulation(tau_us: f64, p: &EchoParams) -> f64 {
    let (wa, wb) = (p.omega_a(), p.omega_b());
    let inner = 2.0 - 2.0 * (wa * tau_us).cos() - 2.0 * (wb * tau_us).cos()
        + ((wa + wb) * tau_us).cos()
        + ((wa - wb) * tau_us).cos();
    1.0 - 0.25 * p.k * inner
}

/// `offset + amplitude · exp(-(2τ/T2)^n) · modulation(τ)`, `τ` in µs.
pub fn hahn_echo_signal(tau_us: f64, p: &EchoParams) -> f64 {
    let decay = (-(2.0 * tau_us / p.t2_us).powf(p.n)).exp();
    p.offset + p.amplitude * decay * echo_modulation(tau_us, p)
}

/// The three characteristic times, each in its customary unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceHierarchy {
    pub t1_ms: f64,
    pub t2_us: f64,
    pub t2_star_us: f64,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum HierarchyViolation {
    #[error("all coherence times must be positive")]
    NonPositive,
    #[error("T1 < T2")]
    T1BelowT2,
    #[error("T2 <= T2*")]
    T2NotAboveT2Star,
}

impl CoherenceHierarchy {
    pub fn t1_us(&self) -> f64 {
        self.t1_ms * 1e3
    }
}

/// Checks `T1 >= T2 > T2*` after converting T1 to µs.
pub fn check_hierarchy(h: &CoherenceHierarchy) -> Result<(), HierarchyViolation> {
    if !(h.t1_ms > 0.0 && h.t2_us > 0.0 && h.t2_star_us > 0.0) {
        return Err(HierarchyViolation::NonPositive);
    }
    if h.t1_us() < h.t2_us {
        return Err(HierarchyViolation::T1BelowT2);
    }
    if h.t2_us <= h.t2_star_us {
        return Err(HierarchyViolation::T2NotAboveT2Star);
    }
    Ok(())
}
