//! Adaptive-target importance sampling for joint inference of model parameters and
//! noise covariance in multi-output nonlinear regression.

pub mod atais;
pub mod data;
pub mod error;
pub mod experiment;
pub mod ilis;
pub mod likelihood;
pub mod mcmc;
pub mod minibatch;
pub mod model;
pub mod models;
pub mod posterior;
pub mod prior;
pub mod rng;
pub mod spd;
pub mod store;
pub mod util;

pub use data::{AuxInput, Dataset};
pub use error::{Error, Result};
pub use likelihood::NoiseFamily;
pub use model::{residuals, CountingModel, ForwardModel};
pub use prior::LogPrior;
pub use rng::RngStream;
pub use spd::{JitterPolicy, SpdMatrix};
pub use store::SampleStore;
