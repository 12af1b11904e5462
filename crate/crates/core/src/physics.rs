//! Spin-1 ground-state physics of the NV center.
//!
//! Matrices are written in the `S_z` basis ordered `{|+1>, |0>, |-1>}`.
//! Stored parameters are ordinary frequencies (MHz); Hamiltonians are
//! returned in angular units (rad/µs) so that `exp(-i H t)` takes `t` in µs.
//!
//! # Drive convention
//!
//! The rotating-frame Hamiltonian carries the drive as
//! `Omega_R / (2 sqrt 2) * S_x`. Because `S_x` couples `|0>` to `|±1>` with
//! weight `1/sqrt 2`, the off-diagonal element of the selected two-level
//! block is `Omega_R / 4`, and the projected qubit undergoes population
//! oscillation at angular frequency `Omega_R / 2`. Everything downstream
//! (signal models, fits, `t_pi = pi / Omega`) is expressed with the
//! effective two-level rate; [`drive_for_two_level_rabi`] and
//! [`two_level_rabi_from_drive`] convert between the two.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

pub type CMatrix3 = Matrix3<Complex64>;

const HERMITIAN_TOL: f64 = 1e-8;
const STATE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("invalid physical constants: {0}")]
    InvalidConstants(String),
    #[error("invalid field configuration: {0}")]
    InvalidField(String),
    #[error("lower resonance branch D - gamma_e*B_z = {0} MHz is not positive")]
    OutsideValidity(f64),
    #[error("Hamiltonian is not Hermitian (max asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("evolution time must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error("invalid density matrix: {0}")]
    InvalidState(String),
}

/// Zero-field splitting and gyromagnetic ratio, both as ordinary frequencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Zero-field splitting, MHz.
    pub d_mhz: f64,
    /// Electron gyromagnetic ratio, MHz/mT.
    pub gamma_e_mhz_per_mt: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            d_mhz: 2870.0,
            gamma_e_mhz_per_mt: 28.0,
        }
    }
}

impl PhysicalConstants {
    pub fn new(d_mhz: f64, gamma_e_mhz_per_mt: f64) -> Result<Self, PhysicsError> {
        if !(d_mhz > 0.0) || !(gamma_e_mhz_per_mt > 0.0) {
            return Err(PhysicsError::InvalidConstants(format!(
                "D = {d_mhz} and gamma_e = {gamma_e_mhz_per_mt} must both be positive"
            )));
        }
        Ok(Self {
            d_mhz,
            gamma_e_mhz_per_mt,
        })
    }
}

/// Static field and microwave drive seen in the rotating frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldConfig {
    /// On-axis magnetic field, mT.
    pub b_z_mt: f64,
    /// Microwave angular frequency, rad/µs.
    pub omega_mw: f64,
    /// Drive amplitude as it enters the rotating-frame Hamiltonian, rad/µs.
    pub omega_r: f64,
}

impl FieldConfig {
    pub fn new(b_z_mt: f64, omega_mw: f64, omega_r: f64) -> Result<Self, PhysicsError> {
        if !(b_z_mt >= 0.0) {
            return Err(PhysicsError::InvalidField(format!("B_z = {b_z_mt} mT is negative")));
        }
        if !(omega_r >= 0.0) {
            return Err(PhysicsError::InvalidField(format!("Omega_R = {omega_r} is negative")));
        }
        Ok(Self {
            b_z_mt,
            omega_mw,
            omega_r,
        })
    }

    /// Field configuration whose microwave frequency zeroes the detuning of
    /// the chosen branch under this module's sign convention.
    pub fn on_resonance(
        c: &PhysicalConstants,
        b_z_mt: f64,
        branch: QubitProjection,
        omega_r: f64,
    ) -> Result<Self, PhysicsError> {
        let zeeman = TAU * c.gamma_e_mhz_per_mt * b_z_mt;
        let d = TAU * c.d_mhz;
        let omega_mw = match branch {
            QubitProjection::Minus => d - zeeman,
            QubitProjection::Plus => -(d + zeeman),
        };
        Self::new(b_z_mt, omega_mw, omega_r)
    }
}

/// Two-level subspace used as the qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QubitProjection {
    /// `{|0>, |+1>}`
    Plus,
    /// `{|0>, |-1>}`
    Minus,
}

impl QubitProjection {
    /// Basis index of the non-zero spin level of the qubit.
    pub fn target_index(self) -> usize {
        match self {
            QubitProjection::Plus => 0,
            QubitProjection::Minus => 2,
        }
    }

    /// Basis index of the spectator level.
    pub fn spectator_index(self) -> usize {
        2 - self.target_index()
    }

    /// Removes every coupling to the spectator level, leaving a 3×3 matrix
    /// that acts as the selected two-level system embedded in the spin-1
    /// space.
    pub fn project(self, h: &CMatrix3) -> CMatrix3 {
        let s = self.spectator_index();
        let mut out = *h;
        for k in 0..3 {
            if k != s {
                out[(s, k)] = Complex64::new(0.0, 0.0);
                out[(k, s)] = Complex64::new(0.0, 0.0);
            }
        }
        out
    }

    /// The 2×2 block `[[H_00, H_0t], [H_t0, H_tt]]` over `{|0>, target}`.
    pub fn block(self, h: &CMatrix3) -> [[Complex64; 2]; 2] {
        let t = self.target_index();
        [[h[(1, 1)], h[(1, t)]], [h[(t, 1)], h[(t, t)]]]
    }
}

/// Spin-1 operators in the `S_z` basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinOperators {
    pub sz: CMatrix3,
    pub sx: CMatrix3,
}

impl SpinOperators {
    pub fn spin_one() -> Self {
        let c = |x: f64| Complex64::new(x, 0.0);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let sz = Matrix3::new(c(1.0), c(0.0), c(0.0), c(0.0), c(0.0), c(0.0), c(0.0), c(0.0), c(-1.0));
        let sx = Matrix3::new(c(0.0), c(r), c(0.0), c(r), c(0.0), c(r), c(0.0), c(r), c(0.0));
        Self { sz, sx }
    }
}

impl Default for SpinOperators {
    fn default() -> Self {
        Self::spin_one()
    }
}

/// Largest element-wise deviation `|H - H†|`.
pub fn hermitian_defect(h: &CMatrix3) -> f64 {
    (h - h.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `2π (D S_z² + γ_e B_z S_z)` in rad/µs.
pub fn ground_state_hamiltonian(c: &PhysicalConstants, b_z_mt: f64) -> CMatrix3 {
    let s = SpinOperators::spin_one();
    let sz2 = s.sz * s.sz;
    (sz2 * Complex64::from(c.d_mhz) + s.sz * Complex64::from(c.gamma_e_mhz_per_mt * b_z_mt))
        * Complex64::from(TAU)
}

/// `2π D S_z² + (2π γ_e B_z + ω_mw) S_z + Ω_R/(2√2) S_x` in rad/µs.
pub fn rotating_frame_hamiltonian(c: &PhysicalConstants, f: &FieldConfig) -> CMatrix3 {
    let s = SpinOperators::spin_one();
    let sz2 = s.sz * s.sz;
    let zeeman = TAU * c.gamma_e_mhz_per_mt * f.b_z_mt + f.omega_mw;
    sz2 * Complex64::from(TAU * c.d_mhz)
        + s.sz * Complex64::from(zeeman)
        + s.sx * Complex64::from(f.omega_r / (2.0 * 2f64.sqrt()))
}

/// The two `|0> -> |±1>` transition frequencies `(D + γ_e B_z, D - γ_e B_z)`, MHz.
pub fn resonance_frequencies(
    c: &PhysicalConstants,
    b_z_mt: f64,
) -> Result<(f64, f64), PhysicsError> {
    if !(b_z_mt >= 0.0) {
        return Err(PhysicsError::InvalidField(format!("B_z = {b_z_mt} mT is negative")));
    }
    let split = c.gamma_e_mhz_per_mt * b_z_mt;
    let lower = c.d_mhz - split;
    if lower <= 0.0 {
        return Err(PhysicsError::OutsideValidity(lower));
    }
    Ok((c.d_mhz + split, lower))
}

/// `sqrt(Ω_R² + Δ²)`.
pub fn generalized_rabi(omega_r: f64, delta: f64) -> f64 {
    omega_r.hypot(delta)
}

/// Effective two-level Rabi angular frequency produced by a rotating-frame
/// drive amplitude `omega_r`.
pub fn two_level_rabi_from_drive(omega_r: f64) -> f64 {
    omega_r / 2.0
}

/// Rotating-frame drive amplitude that yields the given two-level Rabi rate.
pub fn drive_for_two_level_rabi(omega_two_level: f64) -> f64 {
    2.0 * omega_two_level
}

/// `t_pi = π / Ω` for an effective two-level angular frequency.
pub fn pi_time(omega_two_level: f64) -> f64 {
    PI / omega_two_level
}

/// A validated spin-1 density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    rho: CMatrix3,
}

impl DensityMatrix {
    pub fn new(rho: CMatrix3) -> Result<Self, PhysicsError> {
        let defect = hermitian_defect(&rho);
        if defect >= STATE_TOL {
            return Err(PhysicsError::InvalidState(format!("not Hermitian ({defect:.3e})")));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(PhysicsError::InvalidState(format!("trace {tr} != 1")));
        }
        let herm = (rho + rho.adjoint()) * Complex64::from(0.5);
        let min_eig = SymmetricEigen::new(herm)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -STATE_TOL {
            return Err(PhysicsError::InvalidState(format!("negative eigenvalue {min_eig:.3e}")));
        }
        Ok(Self { rho })
    }

    /// Pure basis state; `index` follows `{|+1>, |0>, |-1>}`.
    pub fn basis(index: usize) -> Self {
        assert!(index < 3, "spin-1 basis index out of range");
        let mut rho = CMatrix3::zeros();
        rho[(index, index)] = Complex64::from(1.0);
        Self { rho }
    }

    /// `|0><0|`, the optically pumped state.
    pub fn ground_zero() -> Self {
        Self::basis(1)
    }

    pub fn matrix(&self) -> &CMatrix3 {
        &self.rho
    }

    pub fn populations(&self) -> [f64; 3] {
        [self.rho[(0, 0)].re, self.rho[(1, 1)].re, self.rho[(2, 2)].re]
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }
}

/// `exp(-i H t)` via the eigendecomposition of the Hermitian `H`.
pub fn propagator(h: &CMatrix3, t: f64) -> Result<CMatrix3, PhysicsError> {
    let defect = hermitian_defect(h);
    if defect > HERMITIAN_TOL {
        return Err(PhysicsError::NotHermitian(defect));
    }
    if !(t >= 0.0) {
        return Err(PhysicsError::NegativeTime(t));
    }
    let herm = (h + h.adjoint()) * Complex64::from(0.5);
    let eig = SymmetricEigen::new(herm);
    let v = eig.eigenvectors;
    let phases = CMatrix3::from_diagonal(&eig.eigenvalues.map(|l| Complex64::new(0.0, -l * t).exp()));
    Ok(v * phases * v.adjoint())
}

/// `U ρ U†` with `U = exp(-i H t)`.
pub fn evolve(h: &CMatrix3, rho: &DensityMatrix, t: f64) -> Result<DensityMatrix, PhysicsError> {
    let u = propagator(h, t)?;
    if t == 0.0 {
        return Ok(rho.clone());
    }
    let out = u * rho.rho * u.adjoint();
    // Restore exact Hermiticity lost to rounding.
    let out = (out + out.adjoint()) * Complex64::from(0.5);
    Ok(DensityMatrix { rho: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sorted_eigs_mhz(h: &CMatrix3) -> Vec<f64> {
        let mut e: Vec<f64> = SymmetricEigen::new(*h).eigenvalues.iter().map(|x| x / TAU).collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        e
    }

    #[test]
    fn spin_algebra() {
        let s = SpinOperators::spin_one();
        assert_eq!(hermitian_defect(&s.sz), 0.0);
        assert_eq!(hermitian_defect(&s.sx), 0.0);
        let comm = |a: &CMatrix3, b: &CMatrix3| a * b - b * a;
        let double = comm(&s.sz, &comm(&s.sz, &s.sx));
        assert!((double - s.sx).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn zero_field_degeneracy() {
        let h = ground_state_hamiltonian(&PhysicalConstants::default(), 0.0);
        let e = sorted_eigs_mhz(&h);
        assert_abs_diff_eq!(e[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e[1], 2870.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e[2], 2870.0, epsilon = 1e-9);
    }

    #[test]
    fn ground_transitions_at_85_gauss() {
        let h = ground_state_hamiltonian(&PhysicalConstants::default(), 8.5);
        assert!(h.iter().enumerate().all(|(k, z)| k % 4 == 0 || z.norm() == 0.0));
        let up = (h[(0, 0)].re - h[(1, 1)].re) / TAU;
        let down = (h[(2, 2)].re - h[(1, 1)].re) / TAU;
        assert_abs_diff_eq!(up, 3108.0, epsilon = 1e-9);
        assert_abs_diff_eq!(down, 2632.0, epsilon = 1e-9);
    }

    #[test]
    fn resonance_pairs() {
        let c = PhysicalConstants::default();
        assert_eq!(resonance_frequencies(&c, 0.0).unwrap(), (2870.0, 2870.0));
        assert_eq!(resonance_frequencies(&c, 8.5).unwrap(), (3108.0, 2632.0));
        assert!(matches!(
            resonance_frequencies(&c, 102.6),
            Err(PhysicsError::OutsideValidity(_))
        ));
        assert!(resonance_frequencies(&c, -1.0).is_err());
    }

    #[test]
    fn rejects_bad_constants_and_fields() {
        assert!(PhysicalConstants::new(0.0, 28.0).is_err());
        assert!(PhysicalConstants::new(2870.0, -1.0).is_err());
        assert!(FieldConfig::new(-0.1, 0.0, 1.0).is_err());
        assert!(FieldConfig::new(1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn undriven_rotating_frame_is_diagonal() {
        let c = PhysicalConstants::default();
        let f = FieldConfig::new(8.5, 123.0, 0.0).unwrap();
        let h = rotating_frame_hamiltonian(&c, &f);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(h[(i, j)].norm(), 0.0);
                }
            }
        }
    }

    #[test]
    fn resonant_block_has_zero_detuning_and_quarter_coupling() {
        let c = PhysicalConstants::default();
        let omega_r = TAU * 10.0;
        let f = FieldConfig::on_resonance(&c, 8.5, QubitProjection::Minus, omega_r).unwrap();
        let h = rotating_frame_hamiltonian(&c, &f);
        let b = QubitProjection::Minus.block(&h);
        assert_abs_diff_eq!(b[1][1].re - b[0][0].re, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(b[0][1].norm(), omega_r / 4.0, epsilon = 1e-12);

        let f = FieldConfig::on_resonance(&c, 8.5, QubitProjection::Plus, omega_r).unwrap();
        let b = QubitProjection::Plus.block(&rotating_frame_hamiltonian(&c, &f));
        assert_abs_diff_eq!(b[1][1].re - b[0][0].re, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn drive_of_2pi_10_gives_population_period_of_point_two_us() {
        // Off-diagonal Omega_R/4 => P0(t) = cos²(Omega_R t / 4), period 4π/Omega_R.
        let c = PhysicalConstants::default();
        let omega_r = TAU * 10.0;
        let f = FieldConfig::on_resonance(&c, 8.5, QubitProjection::Minus, omega_r).unwrap();
        let h = QubitProjection::Minus.project(&rotating_frame_hamiltonian(&c, &f));
        let rho0 = DensityMatrix::ground_zero();
        let period = 4.0 * PI / omega_r;
        assert_abs_diff_eq!(period, 0.2, epsilon = 1e-12);
        let p_full = evolve(&h, &rho0, period).unwrap().populations()[1];
        let p_half = evolve(&h, &rho0, period / 2.0).unwrap().populations()[1];
        assert_abs_diff_eq!(p_full, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p_half, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn generalized_rabi_cases() {
        assert_eq!(generalized_rabi(3.0, 0.0), 3.0);
        assert_eq!(generalized_rabi(0.0, -2.5), 2.5);
        let w = TAU * 11.36;
        assert_eq!(generalized_rabi(w, 0.0), w);
        assert_abs_diff_eq!(pi_time(w) * 1e3, 44.014, epsilon = 1e-3);
    }

    #[test]
    fn evolve_trivial_cases() {
        let c = PhysicalConstants::default();
        let h = ground_state_hamiltonian(&c, 3.0);
        let mut rho = CMatrix3::zeros();
        rho[(0, 0)] = Complex64::from(0.2);
        rho[(1, 1)] = Complex64::from(0.5);
        rho[(2, 2)] = Complex64::from(0.3);
        let rho = DensityMatrix::new(rho).unwrap();
        for t in [0.0, 0.37, 12.5] {
            let out = evolve(&h, &rho, t).unwrap();
            assert!((out.matrix() - rho.matrix()).iter().all(|z| z.norm() < 1e-12));
        }
        let f = FieldConfig::new(2.0, 50.0, 40.0).unwrap();
        let driven = rotating_frame_hamiltonian(&c, &f);
        let out = evolve(&driven, &DensityMatrix::ground_zero(), 0.0).unwrap();
        assert_eq!(out.matrix(), DensityMatrix::ground_zero().matrix());
    }

    #[test]
    fn evolve_rejects_bad_input() {
        let mut h = CMatrix3::zeros();
        h[(0, 1)] = Complex64::from(1.0);
        assert!(matches!(
            evolve(&h, &DensityMatrix::ground_zero(), 1.0),
            Err(PhysicsError::NotHermitian(_))
        ));
        let h = ground_state_hamiltonian(&PhysicalConstants::default(), 0.0);
        assert!(matches!(
            evolve(&h, &DensityMatrix::ground_zero(), -1.0),
            Err(PhysicsError::NegativeTime(_))
        ));
    }

    #[test]
    fn density_matrix_validation() {
        let mut rho = CMatrix3::zeros();
        rho[(0, 0)] = Complex64::from(0.5);
        assert!(DensityMatrix::new(rho).is_err());
        rho[(1, 1)] = Complex64::from(0.5);
        assert!(DensityMatrix::new(rho).is_ok());
        rho[(0, 1)] = Complex64::new(0.0, 0.1);
        assert!(DensityMatrix::new(rho).is_err());
        let mut neg = CMatrix3::zeros();
        neg[(0, 0)] = Complex64::from(1.5);
        neg[(1, 1)] = Complex64::from(-0.5);
        assert!(DensityMatrix::new(neg).is_err());
    }
}
