//! Finite-difference check of the analytic gradient.

use rand::seq::index::sample;

use endorse_core::rng::{stream, Stream};

use crate::error::ModelError;
use crate::model::{self, Example};
use crate::params::Parameters;

pub const EPSILON: f64 = 1e-5;
/// Floor on the denominator of the relative error, so parameters with
/// near-zero gradient are judged by absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// Flat index of the parameter with the largest error.
    pub worst_index: usize,
    pub checked: Vec<usize>,
}

/// Compare analytic and central-difference gradients on `samples` random
/// parameters plus every index in `always`.
pub fn gradient_check(
    params: &Parameters,
    example: &Example,
    samples: usize,
    always: &[usize],
    seed: u64,
) -> Result<GradCheck, ModelError> {
    let (_, analytic) = model::loss_and_grad(params, example, None)?;
    let mut rng = stream(seed, Stream::GradCheck);
    let n = params.values.len();
    let mut checked: Vec<usize> = sample(&mut rng, n, samples.min(n)).into_vec();
    checked.extend(always.iter().copied().filter(|&i| i < n));
    checked.sort_unstable();
    checked.dedup();

    let mut probe = params.clone();
    let mut worst = (0.0, 0);
    for &i in &checked {
        let orig = probe.values[i];
        probe.values[i] = orig + EPSILON;
        let plus = model::loss(&probe, example)?;
        probe.values[i] = orig - EPSILON;
        let minus = model::loss(&probe, example)?;
        probe.values[i] = orig;
        let numeric = (plus - minus) / (2.0 * EPSILON);
        let a = analytic[i];
        let err = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(RELATIVE_FLOOR));
        if err > worst.0 {
            worst = (err, i);
        }
    }
    Ok(GradCheck {
        max_relative_error: worst.0,
        worst_index: worst.1,
        checked,
    })
}
