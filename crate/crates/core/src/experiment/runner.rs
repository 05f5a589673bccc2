use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AlgorithmConfig, AtaisParams, MinibatchParams, RunConfig};
use super::metrics::{mae_sigma, mae_theta, pooled_mae, sigma_groundtruth};
use super::ExperimentError;
use crate::atais::{run_atais, AtaisConfig, AtaisOutput};
use crate::error::{Error, Result};
use crate::ilis::{run_ilis, IlisConfig};
use crate::likelihood::NoiseFamily;
use crate::mcmc::{
    adaptive_mh, conditional_target, mh_conditional, mh_joint, mh_within_gibbs, ChainInit, ChainRecord, JointTarget,
};
use crate::minibatch::{run_atais_minibatch, BatchPlan};
use crate::models::{generate_synthetic, threshold_adjacency, ExperimentSpec, GRAPH_THRESHOLD};
use crate::posterior::{sigma_posterior, WishartParams};
use crate::rng::{role, RngStream};
use crate::spd::SpdMatrix;

/// One line of a trajectory file: the running estimate after an iteration or step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub theta: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub delta: Option<f64>,
    pub ess: Option<f64>,
    pub log_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub level: f64,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    /// Fraction of the true covariance entries inside their interval.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub theta_hat: Vec<f64>,
    pub sigma_hat: Vec<Vec<f64>>,
    pub sigma_groundtruth: Vec<Vec<f64>>,
    pub mae_theta: f64,
    pub mae_sigma: f64,
    pub mae_complete: f64,
    pub evaluations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_evidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<IntervalSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_adjacency_recovered: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub acceptance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub algorithm: String,
    pub noise: NoiseFamily,
    pub runs: usize,
    pub mae_theta: f64,
    pub mae_sigma: f64,
    pub mae_complete: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_evidence: Option<f64>,
    /// Endpoints averaged over runs; coverage pooled over (run, entry) pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<IntervalSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency_recovery_rate: Option<f64>,
    pub evaluations_total: u64,
    pub per_run: Vec<RunResult>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; the global pool when `None`.
    pub jobs: Option<usize>,
    pub seed_offset: u64,
    /// Overrides the config's output directory.
    pub out: Option<PathBuf>,
}

pub fn spec_for(cfg: &RunConfig) -> ExperimentSpec {
    let mut spec = ExperimentSpec::for_model(cfg.experiment);
    spec.noise = cfg.noise;
    if let Some(r) = cfg.r {
        spec = spec.with_r(r);
    }
    spec
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Random starting point: `theta` entries `4 z`, and `|1 + 4 z| I` for the noise
/// covariance, drawn in that order.
pub fn random_init(stream: &RngStream, m: usize, k: usize, proposals: usize) -> (Vec<DVector<f64>>, SpdMatrix) {
    let mut r = stream.rng();
    let means = (0..proposals)
        .map(|_| DVector::from_fn(m, |_, _| 4.0 * r.sample::<f64, _>(StandardNormal)))
        .collect();
    let s0 = (1.0 + 4.0 * r.sample::<f64, _>(StandardNormal)).abs().max(1e-6);
    (means, SpdMatrix::identity(k).scaled(s0).expect("positive scale"))
}

fn atais_config(p: &AtaisParams, means: Vec<DVector<f64>>, sigma0: SpdMatrix, m: usize) -> Result<AtaisConfig> {
    let means = match &p.init_mean {
        Some(v) => vec![DVector::from_column_slice(v); means.len()],
        None => means,
    };
    let mut cfg = AtaisConfig::new(p.n, p.t, means[0].clone(), SpdMatrix::identity(m).scaled(p.init_cov)?);
    cfg.init_means = means;
    cfg.warmup = p.warmup;
    cfg.init_sigma = Some(sigma0);
    cfg.delta = p.delta;
    cfg.proposal_family = p.proposal_family;
    cfg.denominator = p.denominator;
    cfg.retention = p.retention;
    Ok(cfg)
}

fn atais_rows(out: &AtaisOutput) -> Vec<TrajectoryRow> {
    out.trajectory
        .iter()
        .map(|s| TrajectoryRow {
            theta: s.theta_map.clone(),
            sigma: s.sigma_ml.clone(),
            delta: Some(s.delta),
            ess: Some(s.ess),
            log_target: s.log_pi_map,
        })
        .collect()
}

/// Running best state of a chain.
fn chain_rows(rec: &ChainRecord, fixed_sigma: Option<&DMatrix<f64>>) -> Vec<TrajectoryRow> {
    let mut best = 0;
    (0..rec.len())
        .map(|i| {
            if rec.log_targets[i] > rec.log_targets[best] {
                best = i;
            }
            TrajectoryRow {
                theta: rec.thetas[best].clone(),
                sigma: fixed_sigma.cloned().unwrap_or_else(|| rec.sigmas[best].clone()),
                delta: None,
                ess: None,
                log_target: rec.log_targets[best],
            }
        })
        .collect()
}

struct Estimate {
    theta: DVector<f64>,
    sigma: DMatrix<f64>,
    evaluations: u64,
    log_evidence: Option<f64>,
    interval: Option<crate::posterior::CredibleInterval>,
    acceptance: Vec<f64>,
    rows: Vec<TrajectoryRow>,
}

impl Estimate {
    fn from_chain(rec: ChainRecord, fixed_sigma: Option<&DMatrix<f64>>) -> Result<Self> {
        let (theta, sigma) = rec.map_estimate().ok_or_else(|| Error::InvalidParameter("empty chain".into()))?;
        Ok(Estimate {
            theta,
            sigma: sigma.or_else(|| fixed_sigma.cloned()).expect("joint chains record Sigma"),
            evaluations: rec.evaluations,
            log_evidence: None,
            interval: None,
            acceptance: (0..rec.accepted.len()).map(|b| rec.acceptance_rate(b)).collect(),
            rows: chain_rows(&rec, fixed_sigma),
        })
    }
}

fn run_minibatch(
    p: &MinibatchParams,
    spec: &ExperimentSpec,
    data: &crate::data::Dataset,
    root: &RngStream,
) -> Result<Estimate> {
    let (m, k) = spec.model.dims();
    let model = spec.build_model();
    let plan = BatchPlan::random(data.r(), p.batch_size, p.strategy, &mut root.child(role::BATCH).rng())?;
    let (means, s0) = random_init(&root.child(role::INIT), m, k, 1);
    let mut cfg = AtaisConfig::new(p.n, plan.t(), means[0].clone(), SpdMatrix::identity(m).scaled(p.init_cov)?);
    cfg.warmup = p.warmup;
    cfg.init_sigma = Some(s0);
    cfg.delta = p.delta;
    let out = run_atais_minibatch(&cfg, &plan, &*model, data, &spec.prior, &spec.noise, root.child(role::PROPOSAL))?;
    Ok(Estimate {
        theta: out.output.theta_map.clone(),
        sigma: out.output.sigma_ml.matrix().clone(),
        evaluations: out.output.model_evaluations,
        log_evidence: None,
        interval: None,
        acceptance: Vec::new(),
        rows: atais_rows(&out.output),
    })
}

fn estimate(cfg: &RunConfig, spec: &ExperimentSpec, data: &crate::data::Dataset, root: &RngStream) -> Result<Estimate> {
    let (m, k) = spec.model.dims();
    let model = spec.build_model();
    let target = || JointTarget {
        model: &*model,
        data,
        prior: &spec.prior,
        family: spec.noise,
        sigma_prior: None,
    };
    let chain_init = || {
        let (means, sigma) = random_init(&root.child(role::INIT), m, k, 1);
        ChainInit {
            theta: means.into_iter().next().expect("one mean"),
            sigma,
        }
    };
    let mut chain_rng = root.child(role::CHAIN).rng();
    match &cfg.algorithm {
        AlgorithmConfig::Atais(p) => {
            let (means, s0) = random_init(&root.child(role::INIT), m, k, p.proposals);
            let acfg = atais_config(p, means, s0, m)?;
            let out = run_atais(&acfg, &*model, data, &spec.prior, &spec.noise, root.child(role::PROPOSAL))?;
            let stage = match &p.sigma_posterior {
                Some(sp) => Some(sigma_posterior(&out, sp, &spec.prior, &spec.noise, root.child(role::SIGMA))?),
                None => None,
            };
            Ok(Estimate {
                theta: out.theta_map.clone(),
                sigma: out.sigma_ml.matrix().clone(),
                evaluations: out.model_evaluations,
                log_evidence: stage.as_ref().map(|s| s.log_evidence),
                interval: stage.map(|s| s.interval),
                acceptance: Vec::new(),
                rows: atais_rows(&out),
            })
        }
        AlgorithmConfig::AtaisMinibatch(p) => run_minibatch(p, spec, data, root),
        AlgorithmConfig::Ilis(p) => {
            let icfg = IlisConfig {
                j: p.j,
                t: p.t,
                burn_in: p.burn_in,
                mh_scale: p.mh_scale,
                init: p.init.clone(),
            };
            let w = WishartParams::new(p.wishart_dof, SpdMatrix::identity(k).scaled(p.wishart_phi_scale)?)?;
            let out = run_ilis(&icfg, &w, None, &*model, data, &spec.prior, &spec.noise, &root.child(role::CHAIN))?;
            let sigma = out.sigma_mean();
            let len = out.chains[0].len();
            let rows = (0..len)
                .map(|i| TrajectoryRow {
                    theta: out.chains.iter().zip(&out.gamma_bar).map(|(c, &g)| &c[i] * g).sum(),
                    sigma: sigma.clone(),
                    delta: None,
                    ess: None,
                    log_target: f64::NAN,
                })
                .collect();
            Ok(Estimate {
                theta: out.theta_mean(),
                sigma,
                evaluations: out.evaluations,
                log_evidence: None,
                interval: None,
                acceptance: out.acceptance.clone(),
                rows,
            })
        }
        AlgorithmConfig::MhConditional(p) => {
            let cov = SpdMatrix::identity(m).scaled(p.scale)?;
            let f = conditional_target(&*model, data, &spec.sigma_true, &spec.prior, &spec.noise);
            let rec = mh_conditional(f, &DVector::from_column_slice(&p.init), &cov, p.t, &mut chain_rng)?;
            Estimate::from_chain(rec, Some(spec.sigma_true.matrix()))
        }
        AlgorithmConfig::MhJoint(p) => Estimate::from_chain(mh_joint(&target(), &chain_init(), p, &mut chain_rng)?, None),
        AlgorithmConfig::AdaptiveMh(p) => {
            Estimate::from_chain(adaptive_mh(&target(), &chain_init(), p, &mut chain_rng)?, None)
        }
        AlgorithmConfig::MhWithinGibbs(p) => {
            Estimate::from_chain(mh_within_gibbs(&target(), &chain_init(), p, &mut chain_rng)?, None)
        }
    }
}

/// Generates a dataset from `seed`, runs the configured algorithm and scores it.
pub fn run_single(cfg: &RunConfig, spec: &ExperimentSpec, run: usize, seed: u64) -> Result<(RunResult, Vec<TrajectoryRow>)> {
    let root = RngStream::new(seed);
    let data = generate_synthetic(spec, root.child(role::DATA))?;
    let truth = sigma_groundtruth(spec, &data)?;
    let est = estimate(cfg, spec, &data, &root)?;
    let (m, k) = spec.model.dims();
    let mt = mae_theta(&est.theta, &spec.theta_true)?;
    let ms = mae_sigma(&est.sigma, &truth)?;
    let interval = est.interval.map(|ci| {
        let inside = ci.contains(spec.sigma_true.matrix());
        IntervalSummary {
            level: ci.level,
            lower: rows(&ci.lower),
            upper: rows(&ci.upper),
            coverage: inside.iter().filter(|&&b| b).count() as f64 / inside.len() as f64,
        }
    });
    let adjacency = spec.precision_true.as_ref().map(|p| {
        SpdMatrix::new(est.sigma.clone())
            .map(|s| threshold_adjacency(&s.inverse(), GRAPH_THRESHOLD) == threshold_adjacency(p, GRAPH_THRESHOLD))
            .unwrap_or(false)
    });
    let result = RunResult {
        run,
        seed,
        theta_hat: est.theta.iter().copied().collect(),
        sigma_hat: rows(&est.sigma),
        sigma_groundtruth: rows(&truth),
        mae_theta: mt,
        mae_sigma: ms,
        mae_complete: pooled_mae(mt, m, ms, k),
        evaluations: est.evaluations,
        log_evidence: est.log_evidence,
        interval,
        exact_adjacency_recovered: adjacency,
        acceptance: est.acceptance,
    };
    Ok((result, est.rows))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

pub fn summarize(cfg: &RunConfig, per_run: Vec<RunResult>) -> Summary {
    let (m, k) = cfg.experiment.dims();
    let mt = mean(per_run.iter().map(|r| r.mae_theta));
    let ms = mean(per_run.iter().map(|r| r.mae_sigma));
    let evid: Vec<f64> = per_run.iter().filter_map(|r| r.log_evidence).collect();
    let ivs: Vec<&IntervalSummary> = per_run.iter().filter_map(|r| r.interval.as_ref()).collect();
    let interval = (!ivs.is_empty()).then(|| {
        let avg = |f: fn(&IntervalSummary) -> &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            (0..k).map(|i| (0..k).map(|j| mean(ivs.iter().map(|v| f(v)[i][j]))).collect()).collect()
        };
        IntervalSummary {
            level: ivs[0].level,
            lower: avg(|v| &v.lower),
            upper: avg(|v| &v.upper),
            coverage: mean(ivs.iter().map(|v| v.coverage)),
        }
    });
    let adj: Vec<bool> = per_run.iter().filter_map(|r| r.exact_adjacency_recovered).collect();
    Summary {
        experiment: cfg.experiment.name().to_string(),
        algorithm: cfg.algorithm.id().to_string(),
        noise: cfg.noise,
        runs: per_run.len(),
        mae_theta: mt,
        mae_sigma: ms,
        mae_complete: pooled_mae(mt, m, ms, k),
        log_evidence: (!evid.is_empty()).then(|| mean(evid.iter().copied())),
        interval,
        adjacency_recovery_rate: (!adj.is_empty()).then(|| adj.iter().filter(|&&b| b).count() as f64 / adj.len() as f64),
        evaluations_total: per_run.iter().map(|r| r.evaluations).sum(),
        per_run,
    }
}

pub fn write_trajectory(path: &Path, rows: &[TrajectoryRow]) -> std::result::Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    if let Some(first) = rows.first() {
        let k = first.sigma.nrows();
        let mut header = vec!["t".to_string()];
        header.extend((0..first.theta.len()).map(|i| format!("theta_{i}")));
        header.extend((0..k).flat_map(|i| (0..k).map(move |j| format!("sigma_{i}_{j}"))));
        header.extend(["delta", "ess", "log_target"].map(String::from));
        w.write_record(&header)?;
    }
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (t, row) in rows.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.theta.iter().map(f64::to_string));
        rec.extend(row.sigma.transpose().iter().map(f64::to_string));
        rec.push(opt(row.delta));
        rec.push(opt(row.ess));
        rec.push(row.log_target.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(dir: &Path, summary: &Summary) -> std::result::Result<(), ExperimentError> {
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(summary)?)?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record([
        "run",
        "seed",
        "mae_theta",
        "mae_sigma",
        "mae_complete",
        "evaluations",
        "log_evidence",
        "interval_coverage",
        "exact_adjacency_recovered",
    ])?;
    for r in &summary.per_run {
        w.write_record([
            r.run.to_string(),
            r.seed.to_string(),
            r.mae_theta.to_string(),
            r.mae_sigma.to_string(),
            r.mae_complete.to_string(),
            r.evaluations.to_string(),
            r.log_evidence.map(|v| v.to_string()).unwrap_or_default(),
            r.interval.as_ref().map(|v| v.coverage.to_string()).unwrap_or_default(),
            r.exact_adjacency_recovered.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every seeded replicate (in parallel), writing trajectories and the summary
/// when an output directory is configured.
pub fn run_experiment(cfg: &RunConfig, opts: &RunOptions) -> std::result::Result<Summary, ExperimentError> {
    cfg.validate()?;
    let spec = spec_for(cfg);
    let out = opts.out.clone().or_else(|| cfg.output_dir.clone());
    if let Some(dir) = &out {
        fs::create_dir_all(dir)?;
    }
    let one = |run: usize| -> std::result::Result<RunResult, ExperimentError> {
        let seed = cfg.seed_of(run, opts.seed_offset);
        let (res, rows) = run_single(cfg, &spec, run, seed).map_err(|source| ExperimentError::Run { run, source })?;
        if let Some(dir) = &out {
            write_trajectory(&dir.join(format!("trajectory_run{run:04}.csv")), &rows)?;
        }
        Ok(res)
    };
    let per_run = match opts.jobs {
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
            pool.install(|| (0..cfg.runs).into_par_iter().map(one).collect::<std::result::Result<Vec<_>, _>>())?
        }
        None => (0..cfg.runs).into_par_iter().map(one).collect::<std::result::Result<Vec<_>, _>>()?,
    };
    let summary = summarize(cfg, per_run);
    if let Some(dir) = &out {
        write_summary(dir, &summary)?;
    }
    Ok(summary)
}
