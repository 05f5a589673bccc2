use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::atais::{DeltaSchedule, ProposalFamily, Retention, WeightDenominator};
use crate::likelihood::NoiseFamily;
use crate::mcmc::{AdaptiveMhConfig, GibbsConfig, JointMhConfig};
use crate::minibatch::BatchStrategy;
use crate::models::ModelId;
use crate::posterior::{SigmaPosteriorConfig, SigmaPrior};

use super::ExperimentError;

fn one() -> usize {
    1
}

fn init_cov() -> f64 {
    6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtaisParams {
    pub n: usize,
    pub t: usize,
    #[serde(default)]
    pub warmup: usize,
    #[serde(default = "one")]
    pub proposals: usize,
    /// Initial proposal covariance, a multiple of the identity.
    #[serde(default = "init_cov")]
    pub init_cov: f64,
    /// Fixed initial proposal mean; drawn around zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_mean: Option<Vec<f64>>,
    #[serde(default)]
    pub delta: DeltaSchedule,
    #[serde(default)]
    pub proposal_family: ProposalFamily,
    #[serde(default)]
    pub denominator: WeightDenominator,
    #[serde(default)]
    pub retention: Retention,
    /// Run the covariance stage after sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_posterior: Option<SigmaPosteriorConfig>,
}

impl AtaisParams {
    pub fn new(n: usize, t: usize) -> Self {
        AtaisParams {
            n,
            t,
            warmup: 0,
            proposals: 1,
            init_cov: init_cov(),
            init_mean: None,
            delta: DeltaSchedule::default(),
            proposal_family: ProposalFamily::Gaussian,
            denominator: WeightDenominator::Standard,
            retention: Retention::All,
            sigma_posterior: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinibatchParams {
    pub n: usize,
    /// Columns per batch L; the run takes R / L iterations, one per batch.
    pub batch_size: usize,
    pub strategy: BatchStrategy,
    #[serde(default)]
    pub warmup: usize,
    #[serde(default = "init_cov")]
    pub init_cov: f64,
    #[serde(default)]
    pub delta: DeltaSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IlisParams {
    pub j: usize,
    pub t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    pub mh_scale: f64,
    pub init: Vec<f64>,
    /// Wishart proposal `W(dof, phi_scale * I)`.
    pub wishart_dof: f64,
    pub wishart_phi_scale: f64,
}

impl IlisParams {
    pub fn localization() -> Self {
        IlisParams {
            j: 10,
            t: 200,
            burn_in: None,
            mh_scale: 0.05,
            init: vec![0.0, 0.0],
            wishart_dof: 4.0,
            wishart_phi_scale: 3.0,
        }
    }
}

/// Parameter-only chain with the noise covariance fixed at its true value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MhConditionalParams {
    pub t: usize,
    pub scale: f64,
    pub init: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", content = "params", rename_all = "snake_case")]
pub enum AlgorithmConfig {
    Atais(AtaisParams),
    AtaisMinibatch(MinibatchParams),
    Ilis(IlisParams),
    MhConditional(MhConditionalParams),
    MhJoint(JointMhConfig),
    AdaptiveMh(AdaptiveMhConfig),
    MhWithinGibbs(GibbsConfig),
}

impl AlgorithmConfig {
    pub fn id(&self) -> &'static str {
        match self {
            AlgorithmConfig::Atais(_) => "atais",
            AlgorithmConfig::AtaisMinibatch(_) => "atais_minibatch",
            AlgorithmConfig::Ilis(_) => "ilis",
            AlgorithmConfig::MhConditional(_) => "mh_conditional",
            AlgorithmConfig::MhJoint(_) => "mh_joint",
            AlgorithmConfig::AdaptiveMh(_) => "adaptive_mh",
            AlgorithmConfig::MhWithinGibbs(_) => "mh_within_gibbs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ModelId,
    #[serde(default)]
    pub noise: NoiseFamily,
    /// Overrides the experiment's observation count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    pub algorithm: AlgorithmConfig,
    /// One seed per run, or a single base seed for runs `base, base + 1, ...`.
    pub seeds: Vec<u64>,
    pub runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn bad(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

impl RunConfig {
    pub fn new(experiment: ModelId, algorithm: AlgorithmConfig, seed: u64, runs: usize) -> Self {
        RunConfig {
            experiment,
            noise: NoiseFamily::Gaussian,
            r: None,
            algorithm,
            seeds: vec![seed],
            runs,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn seed_of(&self, run: usize, offset: u64) -> u64 {
        let base = if self.seeds.len() == 1 {
            self.seeds[0].wrapping_add(run as u64)
        } else {
            self.seeds[run]
        };
        base.wrapping_add(offset)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.runs == 0 {
            return Err(bad("runs must be at least 1"));
        }
        if self.seeds.is_empty() || (self.seeds.len() > 1 && self.seeds.len() != self.runs) {
            return Err(bad("give one base seed or exactly one seed per run"));
        }
        if self.r == Some(0) {
            return Err(bad("R must be positive"));
        }
        self.noise.validate().map_err(|e| bad(e.to_string()))?;
        let (m, k) = self.experiment.dims();
        match &self.algorithm {
            AlgorithmConfig::Atais(p) => {
                if p.n == 0 || p.t == 0 || p.proposals == 0 || p.warmup >= p.t || !(p.init_cov > 0.0) {
                    return Err(bad("atais needs N, T, proposals >= 1, warm-up < T and a positive init_cov"));
                }
                p.delta.validate().map_err(|e| bad(e.to_string()))?;
                if p.init_mean.as_ref().is_some_and(|v| v.len() != m) {
                    return Err(bad(format!("init_mean must have {m} entries")));
                }
                if let Some(s) = &p.sigma_posterior {
                    if s.dof < k as f64 || s.j == 0 || !(s.level > 0.0 && s.level < 1.0) {
                        return Err(bad("sigma_posterior needs dof >= K, J >= 1 and a level in (0, 1)"));
                    }
                    if s.dof.fract() != 0.0 {
                        return Err(bad("sigma_posterior dof must be an integer"));
                    }
                }
            }
            AlgorithmConfig::AtaisMinibatch(p) => {
                let r = self.r.unwrap_or_else(|| crate::models::ExperimentSpec::for_model(self.experiment).r);
                if p.n == 0 || p.batch_size == 0 || !r.is_multiple_of(p.batch_size) {
                    return Err(bad(format!("batch size must divide R = {r}")));
                }
                if p.warmup >= r / p.batch_size || !(p.init_cov > 0.0) {
                    return Err(bad("warm-up must be shorter than the number of batches"));
                }
                p.delta.validate().map_err(|e| bad(e.to_string()))?;
            }
            AlgorithmConfig::Ilis(p) => {
                if p.init.len() != m {
                    return Err(bad(format!("ILIS init must have {m} entries")));
                }
                if p.j == 0 || p.burn_in.unwrap_or(p.t / 5) >= p.t || !(p.mh_scale > 0.0) {
                    return Err(bad("ILIS needs J >= 1, burn-in < T and a positive step"));
                }
                if p.wishart_dof < k as f64 || p.wishart_dof.fract() != 0.0 || !(p.wishart_phi_scale > 0.0) {
                    return Err(bad("ILIS Wishart needs an integer dof >= K and a positive scale"));
                }
            }
            AlgorithmConfig::MhConditional(p) => {
                if p.init.len() != m || p.t == 0 || !(p.scale > 0.0) {
                    return Err(bad(format!("mh_conditional needs T >= 1, a positive scale and {m} init values")));
                }
            }
            AlgorithmConfig::MhJoint(p) => {
                if p.t == 0 || !(p.a > 0.0) || p.dof < k {
                    return Err(bad("mh_joint needs T >= 1, a > 0 and dof >= K"));
                }
            }
            AlgorithmConfig::AdaptiveMh(p) => {
                if p.warmup >= p.t || p.every == 0 || p.dof < k || !(p.a0 > 0.0) {
                    return Err(bad("adaptive_mh needs warm-up < T, a positive period and dof >= K"));
                }
            }
            AlgorithmConfig::MhWithinGibbs(p) => {
                if p.t == 0 || p.inner_steps == 0 || !(p.theta_sd > 0.0 && p.sigma_sd > 0.0) {
                    return Err(bad("mh_within_gibbs needs T, inner steps >= 1 and positive step sizes"));
                }
            }
        }
        Ok(())
    }
}

/// Named configurations for the bundled experiments.
pub fn presets() -> Vec<(&'static str, RunConfig)> {
    let atais = |n, t| AlgorithmConfig::Atais(AtaisParams::new(n, t));
    let mut loc = AtaisParams::new(50, 50);
    loc.warmup = 20;
    let interval = SigmaPosteriorConfig {
        sigma_prior: SigmaPrior::Flat,
        ..SigmaPosteriorConfig::default()
    };
    loc.sigma_posterior = Some(interval);
    let mut mo = AtaisParams::new(50, 50);
    mo.warmup = 20;
    let mut bio = AtaisParams::new(300, 100);
    bio.init_mean = Some(vec![0.0; 4]);
    bio.sigma_posterior = Some(interval);
    let mut graph = AtaisParams::new(5000, 10);
    graph.warmup = 5;
    graph.retention = Retention::Relevant;
    let student = |id| RunConfig {
        noise: NoiseFamily::StudentT { dof: 10.0 },
        ..RunConfig::new(id, AlgorithmConfig::Atais(AtaisParams { warmup: 20, ..AtaisParams::new(100, 50) }), 1, 100)
    };
    vec![
        ("localization", RunConfig::new(ModelId::Localization, AlgorithmConfig::Atais(loc), 1, 200)),
        ("localization_ilis", RunConfig::new(ModelId::Localization, AlgorithmConfig::Ilis(IlisParams::localization()), 1, 200)),
        (
            "localization_mh",
            RunConfig::new(
                ModelId::Localization,
                AlgorithmConfig::MhConditional(MhConditionalParams {
                    t: 2000,
                    scale: 0.05,
                    init: vec![0.0, 0.0],
                }),
                1,
                200,
            ),
        ),
        ("multioutput", RunConfig::new(ModelId::Multioutput, AlgorithmConfig::Atais(mo), 1, 200)),
        (
            "multioutput_minibatch",
            RunConfig::new(
                ModelId::Multioutput,
                AlgorithmConfig::AtaisMinibatch(MinibatchParams {
                    n: 5000,
                    batch_size: 5,
                    strategy: BatchStrategy::Fusion,
                    warmup: 0,
                    init_cov: init_cov(),
                    delta: DeltaSchedule::default(),
                }),
                1,
                100,
            ),
        ),
        ("multioutput_mh_joint", RunConfig::new(ModelId::Multioutput, AlgorithmConfig::MhJoint(JointMhConfig::new(0.1, 50, 20_000)), 1, 100)),
        ("multioutput_adaptive_mh", RunConfig::new(ModelId::Multioutput, AlgorithmConfig::AdaptiveMh(AdaptiveMhConfig::new(50, 20_000)), 1, 100)),
        ("multioutput_gibbs", RunConfig::new(ModelId::Multioutput, AlgorithmConfig::MhWithinGibbs(GibbsConfig::new(10, 2000)), 1, 100)),
        ("multioutput_comparison_atais", RunConfig::new(ModelId::Multioutput, AlgorithmConfig::Atais(AtaisParams { warmup: 20, ..AtaisParams::new(100, 200) }), 1, 100)),
        ("localization_student_t", student(ModelId::Localization)),
        ("multioutput_student_t", student(ModelId::Multioutput)),
        ("biology", RunConfig::new(ModelId::BiologyOde, AlgorithmConfig::Atais(bio), 1, 50)),
        ("graph", RunConfig::new(ModelId::Graph, AlgorithmConfig::Atais(graph), 1, 100)),
        ("smoke", RunConfig::new(ModelId::Localization, atais(20, 10), 1, 2)),
    ]
}

pub fn preset(name: &str) -> Option<RunConfig> {
    presets().into_iter().find(|(n, _)| *n == name).map(|(_, c)| c)
}
