use std::fs;
use std::path::Path;

use bayes_invert::experiment::*;
use bayes_invert::mcmc::{AdaptiveMhConfig, GibbsConfig, JointMhConfig};
use bayes_invert::minibatch::BatchStrategy;
use bayes_invert::models::ModelId;

fn small_configs() -> Vec<(RunConfig, usize)> {
    let mut atais = AtaisParams::new(20, 8);
    atais.warmup = 2;
    let mut interval = atais.clone();
    interval.sigma_posterior = Some(bayes_invert::posterior::SigmaPosteriorConfig {
        j: 50,
        ..Default::default()
    });
    let mut mb = match preset("multioutput_minibatch").unwrap().algorithm {
        AlgorithmConfig::AtaisMinibatch(p) => p,
        _ => unreachable!(),
    };
    mb.n = 30;
    mb.strategy = BatchStrategy::Rescore;
    let fused = MinibatchParams {
        strategy: BatchStrategy::Fusion,
        ..mb.clone()
    };
    let ilis = IlisParams {
        j: 4,
        t: 50,
        burn_in: Some(10),
        ..IlisParams::localization()
    };
    let mh = MhConditionalParams {
        t: 40,
        scale: 0.05,
        init: vec![0.0, 0.0],
    };
    let mut adaptive = AdaptiveMhConfig::new(50, 60);
    adaptive.every = 10;
    vec![
        (RunConfig::new(ModelId::Localization, AlgorithmConfig::Atais(interval), 3, 3), 8),
        (RunConfig::new(ModelId::Multioutput, AlgorithmConfig::Atais(atais), 3, 3), 8),
        // R = 50 in batches of 5
        (RunConfig::new(ModelId::Multioutput, AlgorithmConfig::AtaisMinibatch(mb), 3, 2), 10),
        (RunConfig::new(ModelId::Multioutput, AlgorithmConfig::AtaisMinibatch(fused), 3, 2), 10),
        // post burn-in steps
        (RunConfig::new(ModelId::Localization, AlgorithmConfig::Ilis(ilis), 3, 2), 40),
        (RunConfig::new(ModelId::Localization, AlgorithmConfig::MhConditional(mh), 3, 2), 40),
        (RunConfig::new(ModelId::Multioutput, AlgorithmConfig::MhJoint(JointMhConfig::new(0.1, 50, 50)), 3, 2), 50),
        (RunConfig::new(ModelId::Multioutput, AlgorithmConfig::AdaptiveMh(adaptive), 3, 2), 60),
        (RunConfig::new(ModelId::Multioutput, AlgorithmConfig::MhWithinGibbs(GibbsConfig::new(2, 30)), 3, 2), 30),
    ]
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn csv_rows(path: &Path) -> (csv::StringRecord, usize) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    (header, r.records().collect::<Result<Vec<_>, _>>().unwrap().len())
}

#[test]
fn every_algorithm_writes_consistent_outputs() {
    for (cfg, rows) in small_configs() {
        let id = cfg.algorithm.id();
        let (m, k) = cfg.experiment.dims();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = run_experiment(&cfg, &RunOptions { jobs: Some(1), out: Some(a.path().into()), ..Default::default() }).unwrap();
        let sb = run_experiment(&cfg, &RunOptions { jobs: Some(2), out: Some(b.path().into()), ..Default::default() }).unwrap();
        assert_eq!(sa, sb, "{id}");
        assert_eq!(read_dir_sorted(a.path()), read_dir_sorted(b.path()), "{id}: files differ between reruns");

        let (header, n) = csv_rows(&a.path().join("summary.csv"));
        assert_eq!(n, cfg.runs, "{id}");
        assert_eq!(&header[0], "run");
        for run in 0..cfg.runs {
            let (header, n) = csv_rows(&a.path().join(format!("trajectory_run{run:04}.csv")));
            assert_eq!(n, rows, "{id} run {run}");
            assert_eq!(header.len(), 1 + m + k * k + 3, "{id}");
            assert_eq!(&header[header.len() - 1], "log_target");
        }

        let json: serde_json::Value = serde_json::from_slice(&fs::read(a.path().join("summary.json")).unwrap()).unwrap();
        for key in ["experiment", "algorithm", "noise", "runs", "mae_theta", "mae_sigma", "mae_complete", "evaluations_total", "per_run"] {
            assert!(json.get(key).is_some(), "{id}: summary lacks {key}");
        }
        assert_eq!(json["algorithm"], id);
        let back: Summary = serde_json::from_value(json).unwrap();
        assert_eq!(back, sa);

        for r in &sa.per_run {
            assert_eq!(r.theta_hat.len(), m);
            assert_eq!(r.sigma_hat.len(), k);
            assert!(r.evaluations > 0);
            let pooled = pooled_mae(r.mae_theta, m, r.mae_sigma, k);
            assert!((r.mae_complete - pooled).abs() < 1e-12, "{id}");
            assert_eq!(r.seed, cfg.seed_of(r.run, 0));
        }
        assert_eq!(sa.evaluations_total, sa.per_run.iter().map(|r| r.evaluations).sum::<u64>());
        let mean = sa.per_run.iter().map(|r| r.mae_theta).sum::<f64>() / cfg.runs as f64;
        assert!((sa.mae_theta - mean).abs() < 1e-12);
    }
}

#[test]
fn seed_offset_changes_runs() {
    let cfg = preset("smoke").unwrap();
    let a = run_experiment(&cfg, &RunOptions::default()).unwrap();
    let b = run_experiment(&cfg, &RunOptions { seed_offset: 100, ..Default::default() }).unwrap();
    assert_ne!(a.per_run[0].theta_hat, b.per_run[0].theta_hat);
    assert_eq!(b.per_run[1].seed, 102);
}

#[test]
fn interval_and_evidence_reported_when_requested() {
    let (cfg, _) = small_configs().remove(0);
    let s = run_experiment(&cfg, &RunOptions::default()).unwrap();
    let iv = s.interval.unwrap();
    assert!(iv.lower.iter().flatten().zip(iv.upper.iter().flatten()).all(|(l, u)| l <= u));
    assert!((0.0..=1.0).contains(&iv.coverage));
    assert!(s.log_evidence.unwrap().is_finite());
}

#[test]
fn invalid_config_is_a_config_error() {
    let mut cfg = preset("smoke").unwrap();
    cfg.runs = 0;
    let err = run_experiment(&cfg, &RunOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
