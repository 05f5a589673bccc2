//! One proposal's worth of draws: sampling, parallel evaluation, weighting and
//! streaming retention.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::proposal::Proposal;
use super::weights::{is_relevant, log_denominator, weight_from, Retention, WeightDenominator};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::NoiseFamily;
use crate::model::{residuals_columns, ForwardModel};
use crate::prior::LogPrior;
use crate::rng::StreamRng;
use crate::spd::SpdMatrix;
use crate::util::log_add_exp;

const CHUNK: usize = 256;

/// Target used for one iteration.
pub(crate) struct Target<'a> {
    pub sigma: &'a SpdMatrix,
    /// Batch columns; `None` means the full dataset.
    pub columns: Option<&'a [usize]>,
    pub prior_power: f64,
}

impl Target<'_> {
    pub fn log_density(&self, res: &DMatrix<f64>, log_prior: f64, family: &NoiseFamily) -> Result<f64> {
        Ok(family.loglik(res, self.sigma)? + self.prior_power * log_prior)
    }
}

pub(crate) struct GroupDraw {
    pub thetas: Vec<DVector<f64>>,
    pub log_targets: Vec<f64>,
    pub log_dens: Vec<f64>,
    pub log_weights: Vec<f64>,
    /// Retained samples with their residual blocks, in index order.
    pub kept: Vec<(usize, DMatrix<f64>)>,
    /// Sample with the largest log-target and its residuals.
    pub best: Option<(usize, DMatrix<f64>)>,
    pub evaluations: u64,
}

impl GroupDraw {
    pub fn best_log_target(&self) -> f64 {
        self.best.as_ref().map_or(f64::NEG_INFINITY, |(i, _)| self.log_targets[*i])
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn draw_group<M: ForwardModel + ?Sized>(
    model: &M,
    data: &Dataset,
    prior: &LogPrior,
    family: &NoiseFamily,
    target: &Target<'_>,
    mixture: &[Proposal],
    current: usize,
    mode: &WeightDenominator,
    n: usize,
    retention: Retention,
    rng: &mut StreamRng,
) -> Result<GroupDraw> {
    let thetas: Vec<DVector<f64>> = (0..n).map(|_| mixture[current].sample(rng)).collect();
    let all_cols: Vec<usize>;
    let cols = match target.columns {
        Some(c) => c,
        None => {
            all_cols = (0..data.r()).collect();
            &all_cols
        }
    };

    let mut out = GroupDraw {
        log_targets: Vec::with_capacity(n),
        log_dens: Vec::with_capacity(n),
        log_weights: Vec::with_capacity(n),
        kept: Vec::new(),
        best: None,
        evaluations: 0,
        thetas: Vec::new(),
    };
    let mut log_norm = f64::NEG_INFINITY;

    for (c, chunk) in thetas.chunks(CHUNK).enumerate() {
        let evaluated: Vec<Result<(f64, f64, Option<DMatrix<f64>>, bool)>> = chunk
            .par_iter()
            .map(|th| {
                let den = log_denominator(th.as_slice(), mixture, current, mode);
                let lp = prior.log_density(th.as_slice());
                if lp == f64::NEG_INFINITY {
                    return Ok((lp, den, None, false));
                }
                match residuals_columns(model, th.as_slice(), data, cols) {
                    Ok(e) => {
                        let lt = target.log_density(&e, lp, family)?;
                        Ok((lt, den, Some(e), true))
                    }
                    // overflow in the forward map: zero weight, nothing stored
                    Err(Error::NonFinite { .. }) => Ok((f64::NEG_INFINITY, den, None, true)),
                    Err(err) => Err(err),
                }
            })
            .collect();
        for (j, r) in evaluated.into_iter().enumerate() {
            let i = c * CHUNK + j;
            let (lt, den, e, evaluated) = r?;
            let lw = weight_from(lt, den);
            out.log_targets.push(lt);
            out.log_dens.push(den);
            out.log_weights.push(lw);
            if evaluated {
                out.evaluations += 1;
            }
            let Some(e) = e else { continue };
            log_norm = log_add_exp(log_norm, lw);
            if lt > out.best_log_target() {
                out.best = Some((i, e.clone()));
            }
            let keep = match retention {
                Retention::All => lt > f64::NEG_INFINITY,
                Retention::Relevant => is_relevant(lw, log_norm, n),
            };
            if keep {
                out.kept.push((i, e));
            }
        }
        if retention == Retention::Relevant {
            let lw = &out.log_weights;
            out.kept.retain(|(i, _)| is_relevant(lw[*i], log_norm, n));
        }
    }
    out.thetas = thetas;
    Ok(out)
}
