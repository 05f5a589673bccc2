use crate::data::AuxInput;
use crate::error::{Error, Result};
use crate::model::ForwardModel;

/// Four signals over time:
/// `[t1 sin(t) t, t2 cos(t) t^2, (t1 + t2) sin(t) cos(t), t2 t^2]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MultiOutput;

impl ForwardModel for MultiOutput {
    fn param_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        4
    }

    fn evaluate_into(&self, theta: &[f64], r: usize, aux: Option<&AuxInput>, out: &mut [f64]) -> Result<()> {
        let tau = aux.and_then(AuxInput::scalar).ok_or_else(|| Error::Model {
            index: r,
            reason: "missing time input".into(),
        })?;
        let (s, c) = tau.sin_cos();
        out[0] = theta[0] * s * tau;
        out[1] = theta[1] * c * tau * tau;
        out[2] = (theta[0] + theta[1]) * s * c;
        out[3] = theta[1] * tau * tau;
        Ok(())
    }
}
