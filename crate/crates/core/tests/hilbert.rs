use nalgebra::DMatrix;
use proptest::prelude::*;
use smpd_core::hilbert::*;

fn random_state(layout: &ModeLayout, re: &[f64], im: &[f64]) -> DensityMatrix {
    let d = layout.dim();
    let a = DMatrix::from_fn(d, d, |i, j| C64::new(re[i * d + j], im[i * d + j]));
    let m = &a * a.adjoint();
    let tr = m.trace();
    DensityMatrix::new(layout.clone(), m / tr).unwrap()
}

fn entries(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-1.0f64..1.0, n), prop::collection::vec(-1.0f64..1.0, n))
}

#[test]
fn coherent_amplitude_and_number() {
    let l = ModeLayout::single(BUFFER, 8).unwrap();
    let beta = C64::new(0.3, -0.4);
    let rho = coherent_state(&l, BUFFER, beta).unwrap();
    let a = expectation(&rho, &annihilation(&l, BUFFER).unwrap()).unwrap();
    let n = expectation(&rho, &number(&l, BUFFER).unwrap()).unwrap();
    assert!((a - beta).norm() < 1e-6);
    assert!((n.re - 0.25).abs() < 1e-6);
    assert!((rho.purity() - 1.0).abs() < 1e-9);
}

#[test]
fn embedded_coherent_state_leaves_other_modes_in_vacuum() {
    let l = ModeLayout::buffer_qubit(6).unwrap();
    let rho = coherent_state(&l, BUFFER, C64::new(0.5, 0.0)).unwrap();
    assert!((rho.level_population(QUBIT, 0).unwrap() - 1.0).abs() < 1e-12);
    let b = partial_trace(&rho, &[BUFFER]).unwrap();
    let direct = coherent_state(&ModeLayout::single(BUFFER, 6).unwrap(), BUFFER, C64::new(0.5, 0.0)).unwrap();
    assert!((b.matrix() - direct.matrix()).iter().all(|z| z.norm() < 1e-14));
}

#[test]
fn thermal_state_occupation() {
    let l = ModeLayout::single(BUFFER, 30).unwrap();
    let rho = DensityMatrix::thermal(&l, BUFFER, 0.5).unwrap();
    let n = expectation(&rho, &number(&l, BUFFER).unwrap()).unwrap().re;
    assert!((n - 0.5).abs() < 1e-9);
}

#[test]
fn operator_algebra_tracks_layout() {
    let l = ModeLayout::detector(3, 3).unwrap();
    let b = annihilation(&l, BUFFER).unwrap();
    let w = annihilation(&l, WASTE).unwrap();
    assert_eq!(b.commutator(&w).unwrap().max_abs(), 0.0);
    assert!((&b * &b.adjoint()).is_hermitian(1e-15));
    let other = annihilation(&ModeLayout::buffer_qubit(3).unwrap(), BUFFER).unwrap();
    assert!(b.try_mul(&other).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partial_trace_keeps_trace_and_positivity((re, im) in entries(144)) {
        let l = ModeLayout::new([("a", 2), ("b", 3), ("c", 2)]).unwrap();
        let rho = random_state(&l, &re, &im);
        for kept in [vec!["a"], vec!["b", "c"], vec!["a", "c"]] {
            let r = partial_trace(&rho, &kept).unwrap();
            prop_assert!((r.trace().re - 1.0).abs() < 1e-12);
            prop_assert!(r.trace().im.abs() < 1e-12);
            prop_assert!(r.hermiticity_error() < 1e-12);
            prop_assert!(r.min_eigenvalue() > -1e-12);
        }
    }

    #[test]
    fn product_state_factors_back((ra, ia) in entries(4), (rb, ib) in entries(9)) {
        let la = ModeLayout::single("a", 2).unwrap();
        let lb = ModeLayout::single("b", 3).unwrap();
        let a = random_state(&la, &ra, &ia);
        let b = random_state(&lb, &rb, &ib);
        let ab = a.tensor(&b).unwrap();
        let back = partial_trace(&ab, &["a"]).unwrap();
        prop_assert!((back.matrix() - a.matrix()).iter().all(|z| z.norm() < 1e-12));
        let back = partial_trace(&ab, &["b"]).unwrap();
        prop_assert!((back.matrix() - b.matrix()).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn identity_expectation_and_fidelity_bounds((r1, i1) in entries(16), (r2, i2) in entries(16)) {
        let l = ModeLayout::single("a", 4).unwrap();
        let x = random_state(&l, &r1, &i1);
        let y = random_state(&l, &r2, &i2);
        prop_assert!((expectation(&x, &Operator::identity(&l)).unwrap() - C64::new(1.0, 0.0)).norm() < 1e-9);
        let fxy = fidelity(&x, &y).unwrap();
        let fyx = fidelity(&y, &x).unwrap();
        prop_assert!((-1e-9..=1.0 + 1e-9).contains(&fxy));
        prop_assert!((fxy - fyx).abs() < 1e-7);
        prop_assert!((fidelity(&x, &x).unwrap() - 1.0).abs() < 1e-7);
    }
}
