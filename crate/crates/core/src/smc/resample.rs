use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Resampling scheme used between SMC steps. Multinomial is the default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResamplingScheme {
    #[default]
    Multinomial,
    Systematic,
}

fn cumulative(weights: &[f64], cum: &mut Vec<f64>) -> f64 {
    cum.clear();
    let mut acc = 0.0;
    for &w in weights {
        acc += w;
        cum.push(acc);
    }
    acc
}

#[inline]
fn locate(cum: &[f64], u: f64) -> usize {
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

/// Single categorical draw from (not necessarily normalized) nonnegative weights.
pub fn categorical(weights: &[f64], rng: &mut RngStream) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave u == total; fall back to the last positive weight.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

#[derive(Clone, Debug, Default)]
pub(crate) struct ResampleScratch {
    cum: Vec<f64>,
}

pub(crate) fn resample_into(
    scheme: ResamplingScheme,
    weights: &[f64],
    out: &mut [usize],
    scratch: &mut ResampleScratch,
    rng: &mut RngStream,
) {
    if out.is_empty() {
        return;
    }
    match scheme {
        ResamplingScheme::Multinomial => {
            let total = cumulative(weights, &mut scratch.cum);
            for o in out.iter_mut() {
                *o = locate(&scratch.cum, rng.uniform() * total);
            }
        }
        ResamplingScheme::Systematic => {
            let total = cumulative(weights, &mut scratch.cum);
            let cum = &scratch.cum;
            let step = total / out.len() as f64;
            let mut u = rng.uniform() * step;
            let mut j = 0;
            for o in out.iter_mut() {
                while j + 1 < cum.len() && cum[j] <= u {
                    j += 1;
                }
                *o = j;
                u += step;
            }
        }
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::invalid("resample: empty weight vector"));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid(format!("resample: invalid weight {w}")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("resample: weights sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Draw `count` i.i.d. indices from Categorical(`weights`). Indices are 0-based.
pub fn multinomial_resample(weights: &[f64], count: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    check_weights(weights)?;
    if count == 0 {
        return Err(Error::invalid("resample: count must be >= 1"));
    }
    let mut out = vec![0; count];
    let mut scratch = ResampleScratch::default();
    resample_into(ResamplingScheme::Multinomial, weights, &mut out, &mut scratch, rng);
    Ok(out)
}

pub fn systematic_resample(weights: &[f64], count: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    check_weights(weights)?;
    if count == 0 {
        return Err(Error::invalid("resample: count must be >= 1"));
    }
    let mut out = vec![0; count];
    let mut scratch = ResampleScratch::default();
    resample_into(ResamplingScheme::Systematic, weights, &mut out, &mut scratch, rng);
    Ok(out)
}
