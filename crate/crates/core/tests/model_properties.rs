mod common;

use arivc::lti::{MatrixPolynomial, Polynomial, C64};
use arivc::model::{
    frf_eval, kron_lift, pack_parameters, unpack_parameters, validate_model, vec_of, AdditiveModel, Submodel,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

/// Stable, strictly proper additive model with at most one integrating part.
fn random_model(seed: u64) -> AdditiveModel {
    let mut r = common::rng(seed);
    let n_y = r.random_range(1..=3);
    let n_u = r.random_range(1..=3);
    let k = r.random_range(1..=3);
    let submodels = (0..k)
        .map(|i| {
            let ell = if i == 0 { r.random_range(0..=2) } else { 0 };
            let n = r.random_range(if ell == 0 { 1 } else { 0 }..=3);
            let m = r.random_range(0..n + ell);
            let a = Polynomial::new(common::stable_poly(&mut r, n)).unwrap();
            let b = (0..=m).map(|_| common::random_matrix(&mut r, n_y, n_u)).collect();
            Submodel::new(ell, a, MatrixPolynomial::new(b).unwrap())
        })
        .collect();
    AdditiveModel::new(n_u, n_y, submodels).unwrap()
}

fn horner(c: &[f64], s: C64) -> C64 {
    c.iter().rev().fold(C64::new(0.0, 0.0), |acc, &v| acc * s + v)
}

/// Entry-by-entry evaluation of the additive transfer matrix.
fn frf_oracle(model: &AdditiveModel, omega: f64) -> DMatrix<C64> {
    let s = C64::new(0.0, omega);
    DMatrix::from_fn(model.n_y, model.n_u, |i, j| {
        model
            .submodels
            .iter()
            .map(|sm| {
                let num: Vec<f64> = sm.b.coeffs().iter().map(|c| c[(i, j)]).collect();
                horner(&num, s) / (s.powi(sm.ell as i32) * horner(sm.a.coeffs(), s))
            })
            .sum()
    })
}

fn rel_c(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    (a - b).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
        / b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE)
}

const OMEGAS: [f64; 6] = [0.3, 2.0, 9.5, 41.0, 130.0, 700.0];

#[test]
fn frf_matches_entrywise_evaluation() {
    for seed in 0..40 {
        let model = random_model(seed);
        for (g, &w) in frf_eval(&model, &OMEGAS).unwrap().iter().zip(&OMEGAS) {
            assert!(rel_c(g, &frf_oracle(&model, w)) < 1e-12, "seed {seed}, omega {w}");
        }
    }
}

#[test]
fn frf_is_additive_over_submodels() {
    for seed in 0..40 {
        let model = random_model(seed);
        let total = frf_eval(&model, &OMEGAS).unwrap();
        let mut parts = vec![DMatrix::<C64>::zeros(model.n_y, model.n_u); OMEGAS.len()];
        for sm in &model.submodels {
            let single = AdditiveModel::new(model.n_u, model.n_y, vec![sm.clone()]).unwrap();
            for (acc, g) in parts.iter_mut().zip(frf_eval(&single, &OMEGAS).unwrap()) {
                *acc += g;
            }
        }
        for (t, p) in total.iter().zip(&parts) {
            assert!(rel_c(p, t) < 1e-14);
        }
    }
}

#[test]
fn state_space_realization_has_same_frf() {
    for seed in 0..40 {
        let model = random_model(seed);
        let ss = model.to_state_space().unwrap();
        for (g, &w) in frf_eval(&model, &OMEGAS).unwrap().iter().zip(&OMEGAS) {
            let h = ss.frequency_response(C64::new(0.0, w)).unwrap();
            assert!(rel_c(&h, g) < 1e-9, "seed {seed}, omega {w}: {}", rel_c(&h, g));
        }
    }
}

#[test]
fn generated_models_pass_validation() {
    for seed in 0..40 {
        let report = validate_model(&random_model(seed));
        assert!(report.passed(), "seed {seed}: {:?}", report.violations);
    }
}

#[test]
fn two_integrating_parts_are_rejected() {
    let one = |ell| Submodel::new(ell, Polynomial::new(vec![1.0, 0.1]).unwrap(), MatrixPolynomial::from_scalar(&Polynomial::one()));
    let model = AdditiveModel::new(1, 1, vec![one(1), one(2)]).unwrap();
    assert!(!validate_model(&model).passed());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pack_unpack_round_trip(seed in any::<u64>()) {
        let model = random_model(seed);
        let params = pack_parameters(&model).unwrap();
        prop_assert_eq!(params.beta.len(), model.structure().param_count());
        let back = unpack_parameters(&params).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(pack_parameters(&back).unwrap().beta, params.beta);
    }

    #[test]
    fn kron_lift_applies_matrix(seed in any::<u64>(), n_y in 1usize..4, n_u in 1usize..4) {
        let mut r = common::rng(seed);
        let b = common::random_matrix(&mut r, n_y, n_u);
        let u = common::random_matrix(&mut r, n_u, 1);
        let lifted = kron_lift(u.as_slice(), n_y).transpose() * vec_of(&b);
        prop_assert!((lifted - &b * &u).amax() < 1e-14);
    }
}
