use approx::assert_relative_eq;
use bayes_invert::atais::{final_reweight, run_atais, AtaisConfig};
use bayes_invert::experiment::{pooled_mae, RunConfig};
use bayes_invert::likelihood::{fixedpoint_scale, gaussian_loglik, ml_covariance, FIXED_POINT_MAX_ITER};
use bayes_invert::models::{generate_synthetic, ExperimentSpec, ModelId};
use bayes_invert::posterior::{conditional_reweight, joint_weights, sample_wishart, WishartParams};
use bayes_invert::util::normalize_log_weights;
use bayes_invert::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn spd_strategy(k: usize) -> impl Strategy<Value = SpdMatrix> {
    prop::collection::vec(-2.0..2.0f64, k * k).prop_map(move |v| {
        let a = DMatrix::from_vec(k, k, v);
        SpdMatrix::new(&a * a.transpose() + DMatrix::identity(k, k) * 0.5).unwrap()
    })
}

fn residual_strategy(k: usize, r: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, k * r).prop_map(move |v| DMatrix::from_vec(k, r, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalized_weights_sum_to_one(logw in prop::collection::vec(-700.0..700.0f64, 1..200), shift in -500.0..500.0f64) {
        let w = normalize_log_weights(&logw).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = logw.iter().map(|v| v + shift).collect();
        let w2 = normalize_log_weights(&shifted).unwrap();
        for (a, b) in w.iter().zip(&w2) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_loglik_scaling(e in residual_strategy(3, 20), s in spd_strategy(3), c in 0.1..10.0f64) {
        // log l(cS) = log l(S) - (RK/2) ln c - (1/c - 1) * sum_r q_r / 2
        let base = gaussian_loglik(&e, &s).unwrap();
        let scaled = gaussian_loglik(&e, &s.scaled(c).unwrap()).unwrap();
        let q: f64 = (0..20).map(|r| s.quad_form(e.column(r).as_slice())).sum();
        let want = base - 0.5 * 60.0 * c.ln() - 0.5 * (1.0 / c - 1.0) * q;
        prop_assert!((scaled - want).abs() < 1e-8 * want.abs().max(1.0));
    }

    #[test]
    fn unit_eta_fixed_point_is_sample_covariance(e in residual_strategy(3, 30), s0 in spd_strategy(3)) {
        let fp = fixedpoint_scale(&e, |_| 1.0, &s0, 1e-12, FIXED_POINT_MAX_ITER).unwrap();
        let ml = ml_covariance(&e);
        prop_assert!((fp.matrix() - &ml).amax() < 1e-10);
    }

    #[test]
    fn pooled_mae_is_a_mean(t in 0.0..5.0f64, s in 0.0..5.0f64, m in 1usize..6, k in 1usize..6) {
        let c = pooled_mae(t, m, s, k);
        prop_assert!(c >= t.min(s) - 1e-15 && c <= t.max(s) + 1e-15);
        prop_assert!((pooled_mae(t, m, t, k) - t).abs() < 1e-14);
    }

    #[test]
    fn spd_quad_form_and_log_det(s in spd_strategy(4), x in prop::collection::vec(-5.0..5.0f64, 4)) {
        let inv = s.inverse();
        let v = DVector::from_column_slice(&x);
        let direct = (v.transpose() * &inv * &v)[(0, 0)];
        prop_assert!((s.quad_form(&x) - direct).abs() < 1e-8 * direct.abs().max(1.0));
        prop_assert!((s.log_det() - s.matrix().determinant().ln()).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn second_stage_identities(seed in 0u64..10_000, j in 1usize..6) {
        let spec = ExperimentSpec::localization();
        let data = generate_synthetic(&spec, RngStream::new(seed)).unwrap();
        let model = spec.build_model();
        let cfg = AtaisConfig::new(20, 5, DVector::from_vec(vec![2.0, 2.0]), SpdMatrix::identity(2));
        let out = run_atais(&cfg, &*model, &data, &spec.prior, &spec.noise, RngStream::new(seed + 1)).unwrap();
        let w = WishartParams::centred_on(&out.sigma_ml, 20.0).unwrap();
        let mut rng = RngStream::new(seed + 2).rng();
        let sigmas: Vec<SpdMatrix> = (0..j).map(|_| sample_wishart(&w, &mut rng).unwrap()).collect();
        let joint = joint_weights(&out.store, &sigmas, Some(&w), &w, &spec.prior, &spec.noise).unwrap();
        let beta = joint.beta();
        let total: f64 = beta.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!((joint.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((joint.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (i, a) in joint.alpha.iter().enumerate() {
            prop_assert!((beta.row(i).sum() - a).abs() < 1e-12);
        }
        for (c, l) in joint.lambda.iter().enumerate() {
            prop_assert!((beta.column(c).sum() - l).abs() < 1e-12);
        }
        // the stored corrected weights are the conditional weights at the final estimate
        let rho = conditional_reweight(&out.store, &out.sigma_ml, &spec.prior, &spec.noise).unwrap();
        let mut store = out.store.clone();
        final_reweight(&mut store, &out.sigma_ml, &spec.noise, &spec.prior).unwrap();
        let w2 = normalize_log_weights(&store.corrected_log_weights()).unwrap();
        for (a, b) in rho.iter().zip(&w2) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn models_finite_on_domain(seed in 0u64..1_000_000) {
        let mut r = RngStream::new(seed).rng();
        use rand::Rng;
        for id in ModelId::ALL {
            let spec = ExperimentSpec::for_model(id).with_r(20);
            let data = generate_synthetic(&spec, RngStream::new(seed)).unwrap();
            let model = spec.build_model();
            let theta: Vec<f64> = match id {
                ModelId::BiologyOde => (0..4).map(|_| r.random_range(0.1..5.0)).collect(),
                ModelId::Graph => vec![r.random_range(-2.0..2.0), r.random_range(0.0..5.0), r.random_range(0.0..8.0), r.random_range(0.0..5.0)],
                _ => (0..2).map(|_| r.random_range(-5.0..5.0)).collect(),
            };
            let a = residuals(&*model, &theta, &data).unwrap();
            let b = residuals(&*model, &theta, &data).unwrap();
            prop_assert!(a.iter().all(|v| v.is_finite()));
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn config_round_trip(n in 1usize..500, t in 2usize..100, runs in 1usize..50, seed in any::<u64>()) {
        let mut p = bayes_invert::experiment::AtaisParams::new(n, t);
        p.warmup = t / 2;
        let cfg = RunConfig::new(ModelId::Multioutput, bayes_invert::experiment::AlgorithmConfig::Atais(p), seed, runs);
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn wishart_scaled_identity_example() {
    let w = WishartParams::new(100.0, SpdMatrix::identity(2).scaled(0.01).unwrap()).unwrap();
    let mut rng = RngStream::new(3).rng();
    let mut acc = DMatrix::zeros(2, 2);
    for _ in 0..100_000 {
        acc += sample_wishart(&w, &mut rng).unwrap().matrix();
    }
    let mean = acc / 100_000.0;
    assert_relative_eq!(mean, DMatrix::identity(2, 2), epsilon = 0.05);
}
