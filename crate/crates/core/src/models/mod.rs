//! Experiment models and synthetic data generation.

pub mod biology;
pub mod graph;
pub mod localization;
pub mod multioutput;
pub mod ode;

use nalgebra::{DMatrix, DVector};
use rand_distr::{ChiSquared, Distribution};
use serde::{Deserialize, Serialize};

pub use biology::Biology;
pub use graph::{random_precision, threshold_adjacency, GraphSignals};
pub use localization::Localization;
pub use multioutput::MultiOutput;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::NoiseFamily;
use crate::model::ForwardModel;
use crate::prior::LogPrior;
use crate::rng::{standard_normal_vec, RngStream};
use crate::spd::SpdMatrix;

/// Seed of the fixed ground-truth graph.
pub const GRAPH_SEED: u64 = 20_240_610;
pub const GRAPH_EDGE_PROB: f64 = 0.2;
pub const GRAPH_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    Localization,
    Multioutput,
    BiologyOde,
    Graph,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::Localization, ModelId::Multioutput, ModelId::BiologyOde, ModelId::Graph];

    pub fn name(&self) -> &'static str {
        match self {
            ModelId::Localization => "localization",
            ModelId::Multioutput => "multioutput",
            ModelId::BiologyOde => "biology_ode",
            ModelId::Graph => "graph",
        }
    }

    /// (M, K)
    pub fn dims(&self) -> (usize, usize) {
        match self {
            ModelId::Localization => (2, 3),
            ModelId::Multioutput => (2, 4),
            ModelId::BiologyOde => (4, 2),
            ModelId::Graph => (4, 10),
        }
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub model: ModelId,
    pub theta_true: DVector<f64>,
    pub sigma_true: SpdMatrix,
    pub r: usize,
    pub noise: NoiseFamily,
    /// Time instant of every column; empty for models without time input.
    pub times: Vec<f64>,
    pub prior: LogPrior,
    /// Ground-truth precision for the graph experiment.
    pub precision_true: Option<DMatrix<f64>>,
}

impl ExperimentSpec {
    pub fn localization() -> Self {
        ExperimentSpec {
            model: ModelId::Localization,
            theta_true: DVector::from_vec(vec![2.5, 2.0]),
            sigma_true: SpdMatrix::from_diagonal(&[1.0, 2.0, 3.0]).expect("diagonal"),
            r: 50,
            noise: NoiseFamily::Gaussian,
            times: Vec::new(),
            prior: LogPrior::Flat,
            precision_true: None,
        }
    }

    pub fn multioutput() -> Self {
        let s = DMatrix::from_row_slice(
            4,
            4,
            &[0.1, 0.3, 0.16, 0.0, 0.3, 1.05, 0.0, 0.0, 0.16, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 2.95],
        );
        ExperimentSpec {
            model: ModelId::Multioutput,
            theta_true: DVector::from_vec(vec![0.2, 0.1]),
            sigma_true: SpdMatrix::new(s).expect("spd"),
            r: 50,
            noise: NoiseFamily::Gaussian,
            times: linspace(0.1, 5.0, 50),
            prior: LogPrior::Flat,
            precision_true: None,
        }
    }

    pub fn biology() -> Self {
        ExperimentSpec {
            model: ModelId::BiologyOde,
            theta_true: DVector::from_vec(vec![1.0, 1.0, 1.0, 2.0]),
            sigma_true: SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 2.0])).expect("spd"),
            r: 100,
            noise: NoiseFamily::Gaussian,
            times: linspace(0.0, 5.0, 100),
            prior: LogPrior::uniform_box(vec![0.0; 4], vec![5.0; 4]),
            precision_true: None,
        }
    }

    pub fn graph() -> Self {
        let p = random_precision(10, GRAPH_EDGE_PROB, RngStream::new(GRAPH_SEED));
        let sigma = SpdMatrix::new(p.clone()).expect("diagonally dominant").inverse();
        ExperimentSpec {
            model: ModelId::Graph,
            theta_true: DVector::from_vec(vec![0.5, 2.0, 5.0, 3.0]),
            sigma_true: SpdMatrix::new(sigma).expect("spd"),
            r: 500,
            noise: NoiseFamily::Gaussian,
            times: linspace(0.1, 5.0, 500),
            prior: LogPrior::Flat,
            precision_true: Some(p),
        }
    }

    pub fn for_model(id: ModelId) -> Self {
        match id {
            ModelId::Localization => Self::localization(),
            ModelId::Multioutput => Self::multioutput(),
            ModelId::BiologyOde => Self::biology(),
            ModelId::Graph => Self::graph(),
        }
    }

    /// Replaces the observation count, regenerating the time grid over the same span.
    pub fn with_r(mut self, r: usize) -> Self {
        if let (Some(&a), Some(&b)) = (self.times.first(), self.times.last()) {
            self.times = linspace(a, b, r);
        }
        self.r = r;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (m, k) = self.model.dims();
        Error::check_dim(m, self.theta_true.len())?;
        Error::check_dim(k, self.sigma_true.dim())?;
        if self.r == 0 {
            return Err(Error::invalid("R must be positive"));
        }
        if self.model != ModelId::Localization {
            Error::check_dim(self.r, self.times.len())?;
        }
        self.noise.validate()
    }

    pub fn build_model(&self) -> Box<dyn ForwardModel> {
        match self.model {
            ModelId::Localization => Box::new(Localization::default()),
            ModelId::Multioutput => Box::new(MultiOutput),
            ModelId::BiologyOde => Box::new(Biology::default()),
            ModelId::Graph => Box::new(GraphSignals::with_grid(&self.times)),
        }
    }

    /// Noise-free observation matrix `f_r(theta_true)` with the experiment's time grid attached.
    fn empty_dataset(&self) -> Result<Dataset> {
        let (_, k) = self.model.dims();
        let d = Dataset::new(DMatrix::zeros(k, self.r))?;
        if self.times.is_empty() {
            Ok(d)
        } else {
            d.with_times(&self.times)
        }
    }
}

/// `y_r = f_r(theta_true) + v_r`, with `v_r` from the experiment's noise family and scale.
pub fn generate_synthetic(spec: &ExperimentSpec, rng: RngStream) -> Result<Dataset> {
    spec.validate()?;
    let model = spec.build_model();
    let skeleton = spec.empty_dataset()?;
    let cols: Vec<usize> = (0..spec.r).collect();
    let mut y = model.evaluate_columns(spec.theta_true.as_slice(), &skeleton, &cols)?;
    let mut r = rng.rng();
    let l = spec.sigma_true.lower();
    let k = y.nrows();
    let chi = match spec.noise {
        NoiseFamily::StudentT { dof } => Some((dof, ChiSquared::new(dof).map_err(|e| Error::invalid(e.to_string()))?)),
        NoiseFamily::Gaussian => None,
    };
    for c in 0..spec.r {
        let z = standard_normal_vec(&mut r, k);
        let mut v = l * z;
        if let Some((dof, chi)) = &chi {
            let w: f64 = chi.sample(&mut r);
            v /= (w / dof).sqrt();
        }
        let mut col = y.column_mut(c);
        col += v;
    }
    let d = Dataset::new(y)?;
    if spec.times.is_empty() {
        Ok(d)
    } else {
        d.with_times(&spec.times)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::ml_covariance;
    use crate::model::residuals;

    #[test]
    fn specs_are_consistent() {
        for id in ModelId::ALL {
            let s = ExperimentSpec::for_model(id);
            s.validate().unwrap();
            let m = s.build_model();
            assert_eq!((m.param_dim(), m.output_dim()), id.dims());
        }
    }

    #[test]
    fn noiseless_limit() {
        let mut s = ExperimentSpec::multioutput();
        s.sigma_true = SpdMatrix::from_diagonal(&[1e-12; 4]).unwrap();
        let d = generate_synthetic(&s, RngStream::new(1)).unwrap();
        let e = residuals(&*s.build_model(), s.theta_true.as_slice(), &d).unwrap();
        assert!(e.amax() < 1e-4);
    }

    #[test]
    fn deterministic() {
        let s = ExperimentSpec::localization();
        assert_eq!(
            generate_synthetic(&s, RngStream::new(4)).unwrap(),
            generate_synthetic(&s, RngStream::new(4)).unwrap()
        );
    }

    #[test]
    fn localization_noise_covariance() {
        let s = ExperimentSpec::localization().with_r(100_000);
        let d = generate_synthetic(&s, RngStream::new(9)).unwrap();
        let e = residuals(&*s.build_model(), s.theta_true.as_slice(), &d).unwrap();
        let c = ml_covariance(&e);
        for (i, want) in [1.0, 2.0, 3.0].iter().enumerate() {
            assert!((c[(i, i)] / want - 1.0).abs() < 0.02, "{}", c[(i, i)]);
        }
        assert!(c[(0, 1)].abs() < 0.03 && c[(1, 2)].abs() < 0.05);
    }
}
