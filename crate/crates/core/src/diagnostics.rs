//! Chain diagnostics and the exact linear-Gaussian oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LinearGaussianSsm, NoiseParams};
use crate::trace::Trace;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AcfResult {
    pub lags: Vec<usize>,
    pub values: Vec<f64>,
}

impl AcfResult {
    pub fn at(&self, lag: usize) -> f64 {
        self.values[lag]
    }
}

/// Biased sample autocorrelation (denominator `n`) for lags `0..=max_lag`.
pub fn acf(series: &[f64], max_lag: usize) -> Result<AcfResult> {
    let n = series.len();
    if n < 2 {
        return Err(Error::invalid("acf: need at least two samples"));
    }
    if max_lag >= n {
        return Err(Error::invalid(format!("acf: max_lag {max_lag} must be < n = {n}")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let denom: f64 = z.iter().map(|v| v * v).sum();
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::invalid("acf: series has zero variance"));
    }
    let values = (0..=max_lag)
        .map(|k| {
            let num: f64 = z[..n - k].iter().zip(&z[k..]).map(|(a, b)| a * b).sum();
            if k == 0 {
                1.0
            } else {
                num / denom
            }
        })
        .collect();
    Ok(AcfResult {
        lags: (0..=max_lag).collect(),
        values,
    })
}

/// Drop the first `floor(M/3)` iterations of a trace.
pub fn discard_burn_in(trace: &Trace) -> Result<Trace> {
    trace.discard_burn_in()
}

pub fn state_rmse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::LengthMismatch {
            what: "state_rmse",
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::invalid("state_rmse: empty input"));
    }
    let ss: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss / truth.len() as f64).sqrt())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Linear-interpolated quantile of already sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

pub fn summarize(samples: &[f64]) -> Result<PosteriorSummary> {
    if samples.len() < 2 {
        return Err(Error::invalid("summarize: need at least two samples"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(PosteriorSummary {
        mean: mean(samples),
        sd: variance(samples).sqrt(),
        q025: quantile_sorted(&sorted, 0.025),
        q975: quantile_sorted(&sorted, 0.975),
    })
}

/// Monte-Carlo standard error of the mean of a correlated chain by
/// non-overlapping batch means.
pub fn batch_means_se(series: &[f64], batches: usize) -> Result<f64> {
    if batches < 2 || series.len() < 2 * batches {
        return Err(Error::invalid("batch_means_se: need >= 2 batches of >= 2 samples"));
    }
    let len = series.len() / batches;
    let means: Vec<f64> = series.chunks_exact(len).take(batches).map(mean).collect();
    Ok((variance(&means) / batches as f64).sqrt())
}

/// Scalar linear-Gaussian model `x_t = a x_{t-1} + N(0,q)`, `y_t = c x_t + N(0,r)`,
/// `x_1 ~ N(m0, p0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianModel {
    pub a: f64,
    pub c: f64,
    pub q: f64,
    pub r: f64,
    pub m0: f64,
    pub p0: f64,
}

impl LinearGaussianModel {
    pub fn ssm(&self) -> LinearGaussianSsm {
        LinearGaussianSsm {
            a: self.a,
            c: self.c,
            m0: self.m0,
            p0: self.p0,
        }
    }

    pub fn noise(&self) -> NoiseParams {
        NoiseParams {
            q: self.q,
            r: self.r,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.q > 0.0 && self.r > 0.0 && self.p0 > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "linear-Gaussian model needs q, r, p0 > 0 (q={}, r={}, p0={})",
                self.q, self.r, self.p0
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KalmanOutput {
    pub filtered_means: Vec<f64>,
    pub filtered_vars: Vec<f64>,
    pub smoothed_means: Vec<f64>,
    pub smoothed_vars: Vec<f64>,
    pub log_likelihood: f64,
}

/// Kalman filter, Rauch–Tung–Striebel smoother and exact log-likelihood.
pub fn kalman_filter_smoother(model: &LinearGaussianModel, obs: &[f64]) -> Result<KalmanOutput> {
    model.validate()?;
    if obs.is_empty() {
        return Err(Error::invalid("kalman_filter_smoother: empty observations"));
    }
    let n = obs.len();
    let LinearGaussianModel { a, c, q, r, m0, p0 } = *model;
    let mut pred_m = Vec::with_capacity(n);
    let mut pred_p = Vec::with_capacity(n);
    let mut filt_m = Vec::with_capacity(n);
    let mut filt_p = Vec::with_capacity(n);
    let mut loglik = 0.0;
    for (k, &y) in obs.iter().enumerate() {
        let (mp, pp) = if k == 0 {
            (m0, p0)
        } else {
            (a * filt_m[k - 1], a * a * filt_p[k - 1] + q)
        };
        let s = c * c * pp + r;
        let innov = y - c * mp;
        loglik += -0.5 * (LN_2PI + s.ln() + innov * innov / s);
        let gain = pp * c / s;
        pred_m.push(mp);
        pred_p.push(pp);
        filt_m.push(mp + gain * innov);
        filt_p.push((1.0 - gain * c) * pp);
    }
    let mut sm = filt_m.clone();
    let mut sp = filt_p.clone();
    for k in (0..n - 1).rev() {
        let j = filt_p[k] * a / pred_p[k + 1];
        sm[k] = filt_m[k] + j * (sm[k + 1] - pred_m[k + 1]);
        sp[k] = filt_p[k] + j * j * (sp[k + 1] - pred_p[k + 1]);
    }
    Ok(KalmanOutput {
        filtered_means: filt_m,
        filtered_vars: filt_p,
        smoothed_means: sm,
        smoothed_vars: sp,
        log_likelihood: loglik,
    })
}
