use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};

use super::*;
use crate::data::AuxInput;
use crate::likelihood::gaussian_loglik;
use crate::model::FnModel;
use crate::util::normalize_log_weights;

fn line_model() -> FnModel<impl Fn(&[f64], Option<&AuxInput>, &mut [f64]) + Send + Sync> {
    FnModel::new(2, 2, |th: &[f64], aux: Option<&AuxInput>, out: &mut [f64]| {
        let t = aux.and_then(AuxInput::scalar).unwrap_or(0.0);
        out[0] = th[0] + th[1] * t;
        out[1] = th[0] * th[0] - th[1];
    })
}

fn line_data() -> Dataset {
    let times: Vec<f64> = (0..20).map(|i| i as f64 / 10.0).collect();
    let y = DMatrix::from_fn(2, 20, |i, j| {
        let t = times[j];
        let noise = ((i * 31 + j * 17) % 7) as f64 / 7.0 - 0.4;
        if i == 0 {
            1.0 + 0.5 * t + 0.3 * noise
        } else {
            1.0 - 0.5 + noise
        }
    });
    Dataset::new(y).unwrap().with_times(&times).unwrap()
}

#[test]
fn global_update_rules() {
    let data = line_data();
    let model = line_model();
    let prior = LogPrior::Flat;
    let fam = NoiseFamily::Gaussian;
    let mut st = AtaisState::new(SpdMatrix::identity(2));
    let th = DVector::from_vec(vec![1.0, 0.5]);
    let e = residuals(&model, th.as_slice(), &data).unwrap();
    let lt = gaussian_loglik(&e, &SpdMatrix::identity(2)).unwrap();
    assert!(st.global_max_update(&th, &e, lt, &fam, &prior, false).unwrap());
    let sig = SpdMatrix::new(ml_covariance(&e)).unwrap();
    assert_relative_eq!(st.sigma_ml.matrix(), sig.matrix(), epsilon = 1e-14);
    assert_relative_eq!(st.log_pi_map, gaussian_loglik(&e, &sig).unwrap(), epsilon = 1e-10);
    assert!(st.log_pi_map >= lt);

    let worse = DVector::from_vec(vec![3.0, 0.0]);
    let e2 = residuals(&model, worse.as_slice(), &data).unwrap();
    let lt2 = gaussian_loglik(&e2, &st.sigma_ml).unwrap();
    let before = st.clone();
    assert!(!st.global_max_update(&worse, &e2, lt2, &fam, &prior, false).unwrap());
    assert_eq!(st, before);
}

#[test]
fn current_max_examples() {
    let data = line_data();
    let model = line_model();
    let xs = vec![DVector::from_vec(vec![1.0, 0.5]), DVector::from_vec(vec![0.0, 0.0])];
    let (i, s) = current_max(&xs, &[-1.0, -2.0], &model, &data).unwrap();
    assert_eq!(i, 0);
    let e = residuals(&model, xs[0].as_slice(), &data).unwrap();
    assert_eq!(s, ml_covariance(&e));
    let (i, _) = current_max(&xs, &[-3.0, -3.0], &model, &data).unwrap();
    assert_eq!(i, 0);
    assert!(current_max(&xs, &[f64::NEG_INFINITY; 2], &model, &data).is_err());
}

fn small_run(seed: u64, t: usize) -> AtaisOutput {
    let cfg = AtaisConfig::new(30, t, DVector::zeros(2), SpdMatrix::identity(2));
    run_atais(&cfg, &line_model(), &line_data(), &LogPrior::Flat, &NoiseFamily::Gaussian, RngStream::new(seed)).unwrap()
}

#[test]
fn final_reweight_matches_from_scratch() {
    let out = small_run(5, 2);
    let data = line_data();
    let model = line_model();
    let mut k = 0;
    let corrected = out.store.corrected_log_weights();
    for it in out.store.iterations() {
        for s in &it.samples {
            let e = residuals(&model, s.theta.as_slice(), &data).unwrap();
            let l_final = gaussian_loglik(&e, &out.sigma_ml).unwrap();
            let l_t = gaussian_loglik(&e, &it.target_sigma).unwrap();
            let q = Proposal::gaussian(it.proposals[0].mean.clone(), it.proposals[0].cov.clone()).unwrap();
            let want = l_final - q.log_density(s.theta.as_slice());
            assert_relative_eq!(corrected[k], want, epsilon = 1e-10, max_relative = 1e-10);
            assert_relative_eq!(s.log_weight, l_t - q.log_density(s.theta.as_slice()), epsilon = 1e-10);
            k += 1;
        }
    }
    let w = out.normalized_weights().unwrap();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn final_reweight_constant_sigma_is_identity() {
    let mut out = small_run(9, 3);
    let sig = out.store.iterations()[0].target_sigma.clone();
    for it in out.store.iterations_mut() {
        it.target_sigma = sig.clone();
    }
    let lw: Vec<f64> = out.store.samples().map(|(_, s)| s.log_weight).collect();
    let c = final_reweight(&mut out.store, &sig, &NoiseFamily::Gaussian, &LogPrior::Flat).unwrap();
    for (a, b) in lw.iter().zip(&c) {
        assert_relative_eq!(a, b, epsilon = 1e-9);
    }
}

#[test]
fn single_sample_store_normalises_to_one() {
    let cfg = AtaisConfig::new(1, 1, DVector::zeros(2), SpdMatrix::identity(2));
    let out = run_atais(&cfg, &line_model(), &line_data(), &LogPrior::Flat, &NoiseFamily::Gaussian, RngStream::new(1))
        .unwrap();
    assert_eq!(out.normalized_weights().unwrap(), vec![1.0]);
}

#[test]
fn monotone_map_and_spd_proposals() {
    for seed in 0..5 {
        let out = small_run(seed, 15);
        for w in out.trajectory.windows(2) {
            assert!(w[1].log_pi_map >= w[0].log_pi_map - 1e-9);
        }
        for it in out.store.iterations() {
            assert!(it.proposals[0].cov.lower().diagonal().iter().all(|d| *d > 0.0));
            for s in &it.samples {
                assert!(!s.log_weight.is_nan() && !s.log_corrected.is_nan());
            }
        }
        assert_eq!(out.model_evaluations, 30 * 15);
    }
}

#[test]
fn deterministic() {
    assert_eq!(small_run(42, 6), small_run(42, 6));
}

#[test]
fn relevant_retention_keeps_map_sample() {
    let mut cfg = AtaisConfig::new(40, 6, DVector::zeros(2), SpdMatrix::identity(2));
    cfg.retention = Retention::Relevant;
    let data = line_data();
    let out = run_atais(&cfg, &line_model(), &data, &LogPrior::Flat, &NoiseFamily::Gaussian, RngStream::new(3)).unwrap();
    assert!(out.store.retained() < 40 * 6);
    for it in out.store.iterations() {
        assert!(!it.samples.is_empty());
    }
    // same draws as a full-retention run with the same N
    let mut cfg_all = cfg.clone();
    cfg_all.retention = Retention::All;
    let full = run_atais(&cfg_all, &line_model(), &data, &LogPrior::Flat, &NoiseFamily::Gaussian, RngStream::new(3))
        .unwrap();
    assert_eq!(full.theta_map, out.theta_map);
    // the relevant set per iteration matches retain_relevant on the full weights
    for (a, b) in full.store.iterations().iter().zip(out.store.iterations()) {
        let lw: Vec<f64> = a.samples.iter().map(|s| s.log_weight).collect();
        let w = normalize_log_weights(&lw).unwrap();
        let idx = retain_relevant(&w, 40);
        let kept: Vec<_> = idx.iter().map(|&i| a.samples[i].theta.clone()).collect();
        let got: Vec<_> = b.samples.iter().map(|s| s.theta.clone()).collect();
        assert_eq!(kept, got);
    }
}

#[test]
fn mixture_and_multiple_proposals_run() {
    let mut cfg = AtaisConfig::new(20, 8, DVector::zeros(2), SpdMatrix::identity(2));
    cfg.denominator = WeightDenominator::Mixture { epsilon: 0.3 };
    cfg.init_means.push(DVector::from_vec(vec![2.0, 2.0]));
    let out = run_atais(&cfg, &line_model(), &line_data(), &LogPrior::Flat, &NoiseFamily::Gaussian, RngStream::new(8))
        .unwrap();
    assert_eq!(out.model_evaluations, 20 * 8 * 2);
    assert_eq!(out.store.total_drawn(), 20 * 8 * 2);
    assert!(out.theta_map.iter().all(|v| v.is_finite()));
    for w in out.trajectory.windows(2) {
        assert!(w[1].log_pi_map >= w[0].log_pi_map - 1e-9);
    }
}

#[test]
fn warmup_uses_identity() {
    let mut cfg = AtaisConfig::new(20, 5, DVector::zeros(2), SpdMatrix::identity(2));
    cfg.warmup = 2;
    cfg.init_sigma = Some(SpdMatrix::from_diagonal(&[5.0, 5.0]).unwrap());
    let out = run_atais(&cfg, &line_model(), &line_data(), &LogPrior::Flat, &NoiseFamily::Gaussian, RngStream::new(2))
        .unwrap();
    let its = out.store.iterations();
    assert_eq!(its[0].target_sigma, SpdMatrix::identity(2));
    assert_eq!(its[1].target_sigma, SpdMatrix::identity(2));
    assert_ne!(its[2].target_sigma, SpdMatrix::identity(2));
}

#[test]
fn config_validation() {
    let mut cfg = AtaisConfig::new(10, 3, DVector::zeros(2), SpdMatrix::identity(2));
    cfg.warmup = 3;
    assert!(cfg.validate(2, 2).is_err());
    cfg.warmup = 0;
    cfg.delta.a = 1.0;
    assert!(cfg.validate(2, 2).is_err());
    cfg.delta.a = 0.1;
    assert!(cfg.validate(3, 2).is_err());
    assert!(cfg.validate(2, 2).is_ok());
}
