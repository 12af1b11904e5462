//! `evolve` against an independent fine-step propagator.
//!
//! The oracle never diagonalizes anything: it multiplies short-time
//! propagators, each a 14th-order Taylor polynomial of `-i H dt` with
//! `‖H‖ dt <= 0.05`, so the per-step truncation error is far below
//! rounding.

use nalgebra::Matrix3;
use num_complex::Complex64;
use nvlab_core::physics::*;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn frobenius(m: &CMatrix3) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn taylor_step(h: &CMatrix3, dt: f64) -> CMatrix3 {
    let a = h * c(0.0, -dt);
    let mut term = CMatrix3::identity();
    let mut sum = CMatrix3::identity();
    for k in 1..=14 {
        term = term * a / c(k as f64, 0.0);
        sum += term;
    }
    sum
}

fn fine_step_propagator(h: &CMatrix3, t: f64) -> CMatrix3 {
    let steps = ((frobenius(h) * t / 0.05).ceil() as usize).max(1);
    let step = taylor_step(h, t / steps as f64);
    let mut u = CMatrix3::identity();
    for _ in 0..steps {
        u = step * u;
    }
    u
}

fn max_abs(m: &CMatrix3) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn hermitian(d: [f64; 3], off: [f64; 6]) -> CMatrix3 {
    let mut h = Matrix3::from_diagonal(&nalgebra::Vector3::new(c(d[0], 0.0), c(d[1], 0.0), c(d[2], 0.0)));
    let pairs = [(0, 1), (0, 2), (1, 2)];
    for (k, (i, j)) in pairs.into_iter().enumerate() {
        let z = c(off[2 * k], off[2 * k + 1]);
        h[(i, j)] = z;
        h[(j, i)] = z.conj();
    }
    h
}

/// Mixed state from three weights and three (unnormalized) vectors.
fn density(w: [f64; 3], v: [[f64; 6]; 3]) -> DensityMatrix {
    let total: f64 = w.iter().sum();
    let mut rho = CMatrix3::zeros();
    for (wk, vk) in w.iter().zip(v) {
        let psi = nalgebra::Vector3::new(c(vk[0], vk[1]), c(vk[2], vk[3]), c(vk[4], vk[5]));
        let psi = psi / c(psi.norm(), 0.0);
        rho += psi * psi.adjoint() * c(wk / total, 0.0);
    }
    let rho = (rho + rho.adjoint()) * c(0.5, 0.0);
    DensityMatrix::new(rho).unwrap()
}

fn arb_density() -> impl Strategy<Value = DensityMatrix> {
    (
        prop::array::uniform3(0.05..1.0f64),
        prop::array::uniform3(prop::array::uniform6(-1.0..1.0f64)),
    )
        .prop_filter("non-degenerate vectors", |(_, v)| {
            v.iter().all(|x| x.iter().map(|a| a * a).sum::<f64>() > 1e-3)
        })
        .prop_map(|(w, v)| density(w, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn evolve_matches_fine_step_generic(
        d in prop::array::uniform3(-60.0..60.0f64),
        off in prop::array::uniform6(-30.0..30.0f64),
        t in 0.0..2.0f64,
        rho in arb_density(),
    ) {
        let h = hermitian(d, off);
        let u = fine_step_propagator(&h, t);
        let expected = u * rho.matrix() * u.adjoint();
        let got = evolve(&h, &rho, t).unwrap();
        prop_assert!(max_abs(&(got.matrix() - expected)) < 1e-6);
        prop_assert!(max_abs(&(propagator(&h, t).unwrap() - u)) < 1e-6);
    }

    #[test]
    fn evolve_matches_fine_step_rotating_frame(
        b in 0.0..20.0f64,
        detune in -20.0..20.0f64,
        omega_r in 0.0..200.0f64,
        plus in any::<bool>(),
        t in 0.0..0.05f64,
        rho in arb_density(),
    ) {
        let consts = PhysicalConstants::default();
        let branch = if plus { QubitProjection::Plus } else { QubitProjection::Minus };
        let mut field = FieldConfig::on_resonance(&consts, b, branch, omega_r).unwrap();
        field.omega_mw += detune;
        let h = rotating_frame_hamiltonian(&consts, &field);
        let u = fine_step_propagator(&h, t);
        let expected = u * rho.matrix() * u.adjoint();
        let got = evolve(&h, &rho, t).unwrap();
        prop_assert!(max_abs(&(got.matrix() - expected)) < 1e-6);
    }

    #[test]
    fn composition(
        d in prop::array::uniform3(-60.0..60.0f64),
        off in prop::array::uniform6(-30.0..30.0f64),
        t1 in 0.0..1.0f64,
        t2 in 0.0..1.0f64,
        rho in arb_density(),
    ) {
        let h = hermitian(d, off);
        let split = evolve(&h, &evolve(&h, &rho, t1).unwrap(), t2).unwrap();
        let joint = evolve(&h, &rho, t1 + t2).unwrap();
        prop_assert!(max_abs(&(split.matrix() - joint.matrix())) < 1e-9);
    }

    #[test]
    fn trace_and_positivity_preserved(
        d in prop::array::uniform3(-60.0..60.0f64),
        off in prop::array::uniform6(-30.0..30.0f64),
        t in 0.0..5.0f64,
        rho in arb_density(),
    ) {
        let out = evolve(&hermitian(d, off), &rho, t).unwrap();
        prop_assert!((out.trace() - c(1.0, 0.0)).norm() < 1e-12);
        prop_assert!(out.populations().iter().all(|p| *p >= -1e-12));
    }
}

#[test]
fn resonant_pi_pulse_swaps_populations() {
    let consts = PhysicalConstants::default();
    for branch in [QubitProjection::Minus, QubitProjection::Plus] {
        for b in [0.0, 8.5, 30.0] {
            for omega in [std::f64::consts::TAU * 11.3636, 5.0, 40.0] {
                let field = FieldConfig::on_resonance(&consts, b, branch, drive_for_two_level_rabi(omega)).unwrap();
                let h = branch.project(&rotating_frame_hamiltonian(&consts, &field));
                let out = evolve(&h, &DensityMatrix::ground_zero(), pi_time(omega)).unwrap();
                let pops = out.populations();
                let err = (1.0 - pops[branch.target_index()]).abs();
                assert!(err < 1e-8, "{branch:?} B={b} Ω={omega}: swap error {err:e}");
                assert!(pops[1] < 1e-8);
            }
        }
    }
}

#[test]
fn oracle_self_check_on_diagonal_hamiltonian() {
    let h = hermitian([3.0, -1.0, 7.0], [0.0; 6]);
    let u = fine_step_propagator(&h, 0.7);
    for (k, e) in [3.0f64, -1.0, 7.0].iter().enumerate() {
        assert!((u[(k, k)] - c(0.0, -e * 0.7).exp()).norm() < 1e-13);
    }
}
