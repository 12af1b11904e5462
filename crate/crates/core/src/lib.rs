//! Virtual NV-center spin-coherence laboratory.
//!
//! The crate is organised bottom-up:
//!
//! - [`physics`]: spin-1 operators, ground-state and rotating-frame
//!   Hamiltonians, resonance conditions and exact unitary evolution.
//! - [`coherence`]: closed-form Rabi, T1 and Hahn-echo signal models.
//! - [`pumping`]: seven-level rate-equation model of optical pumping and
//!   spin-dependent photoluminescence readout.
//! - [`pulse`]: the pulse-sequence language, canonical builders and the
//!   tick-quantized timing-table compiler.
//! - [`sim`]: the virtual instrument producing normalized sweep datasets.
//! - [`fit`]: damped least-squares recovery of coherence parameters.

pub mod coherence;
pub mod fit;
pub mod physics;
pub mod pulse;
pub mod pumping;
pub mod sim;
