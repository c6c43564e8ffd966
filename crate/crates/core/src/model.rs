//! State-space model abstraction, the nonlinear benchmark model and forward simulation.
//!
//! Time indices in this crate are 1-based in documentation and in the
//! `t` arguments of the model methods; slices are 0-based, so `x[k]` holds
//! `x_{k+1}`. The transition into `x_t` uses the phase of the state it
//! propagates from: `x_t = f(x_{t-1}, t-1) + eps_t`.

use std::ops::Deref;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Process and measurement noise variances `(Q, R)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub q: f64,
    pub r: f64,
}

impl NoiseParams {
    pub fn new(q: f64, r: f64) -> Result<Self> {
        if !(q > 0.0 && q.is_finite()) || !(r > 0.0 && r.is_finite()) {
            return Err(Error::invalid(format!(
                "noise variances must be positive and finite (q={q}, r={r})"
            )));
        }
        Ok(Self { q, r })
    }

    pub(crate) fn validate(&self) -> Result<()> {
        Self::new(self.q, self.r).map(|_| ())
    }
}

/// Latent path `x_{1:T}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory(Vec<f64>);

/// Observations `y_{1:T}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries(Vec<f64>);

fn check_series(what: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::invalid(format!("{what} must have length >= 1")));
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what}[{}] = {}", k + 1, values[k])));
    }
    Ok(())
}

macro_rules! series_newtype {
    ($ty:ident, $what:literal) => {
        impl $ty {
            pub fn new(values: Vec<f64>) -> Result<Self> {
                check_series($what, &values)?;
                Ok(Self(values))
            }

            pub fn values(&self) -> &[f64] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn horizon(&self) -> usize {
                self.0.len()
            }
        }

        impl AsRef<[f64]> for $ty {
            fn as_ref(&self) -> &[f64] {
                &self.0
            }
        }

        impl Deref for $ty {
            type Target = [f64];

            fn deref(&self) -> &[f64] {
                &self.0
            }
        }
    };
}

series_newtype!(Trajectory, "trajectory");
series_newtype!(ObservationSeries, "observation series");

/// Distribution of `x_1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialState {
    /// `x_1` is known exactly.
    Fixed(f64),
    Gaussian { mean: f64, variance: f64 },
}

impl InitialState {
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match *self {
            InitialState::Fixed(x) => x,
            InitialState::Gaussian { mean, variance } => rng.normal(mean, variance),
        }
    }
}

#[inline]
pub fn gaussian_logpdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + variance.ln()) - 0.5 * d * d / variance
}

/// Scalar state-space model with additive Gaussian noises:
/// `x_t ~ N(f(x_{t-1}, t-1), Q)`, `y_t ~ N(g(x_t), R)`.
pub trait SsmModel: Send + Sync {
    fn initial(&self) -> InitialState;

    /// `f(x_prev, t_prev)`, where `t_prev` is the 1-based index of `x_prev`.
    fn transition_mean(&self, x_prev: f64, t_prev: usize) -> f64;

    /// `g(x)`.
    fn observation_mean(&self, x: f64) -> f64;

    fn sample_transition(&self, x_prev: f64, t_prev: usize, q: f64, rng: &mut RngStream) -> f64 {
        self.transition_mean(x_prev, t_prev) + q.sqrt() * rng.standard_normal()
    }

    fn transition_logpdf(&self, x: f64, x_prev: f64, t_prev: usize, q: f64) -> f64 {
        gaussian_logpdf(x, self.transition_mean(x_prev, t_prev), q)
    }

    fn observation_logpdf(&self, y: f64, x: f64, r: f64) -> f64 {
        gaussian_logpdf(y, self.observation_mean(x), r)
    }
}

impl<M: SsmModel + ?Sized> SsmModel for &M {
    fn initial(&self) -> InitialState {
        (**self).initial()
    }
    fn transition_mean(&self, x_prev: f64, t_prev: usize) -> f64 {
        (**self).transition_mean(x_prev, t_prev)
    }
    fn observation_mean(&self, x: f64) -> f64 {
        (**self).observation_mean(x)
    }
}

const FORCING_TABLE_LEN: usize = 8192;

fn forcing(t: usize) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| (0..FORCING_TABLE_LEN).map(|t| 8.0 * (1.2 * t as f64).cos()).collect());
    match table.get(t) {
        Some(v) => *v,
        None => 8.0 * (1.2 * t as f64).cos(),
    }
}

#[inline]
pub fn benchmark_f(x: f64, t: usize) -> f64 {
    0.5 * x + 25.0 * x / (1.0 + x * x) + forcing(t)
}

pub fn benchmark_g(x: f64) -> f64 {
    x * x / 20.0
}

/// The nonlinear benchmark: `f(x,t) = 0.5x + 25x/(1+x^2) + 8cos(1.2t)`, `g(x) = x^2/20`, `x_1 = 0`.
#[derive(Clone, Copy, Debug, Default)]
pub struct BenchmarkModel;

impl BenchmarkModel {
    pub const TRUE_PARAMS: NoiseParams = NoiseParams { q: 0.1, r: 1.0 };
    pub const HORIZON: usize = 500;
}

impl SsmModel for BenchmarkModel {
    fn initial(&self) -> InitialState {
        InitialState::Fixed(0.0)
    }

    #[inline]
    fn transition_mean(&self, x_prev: f64, t_prev: usize) -> f64 {
        benchmark_f(x_prev, t_prev)
    }

    #[inline]
    fn observation_mean(&self, x: f64) -> f64 {
        benchmark_g(x)
    }
}

/// `x_t = a x_{t-1} + eps`, `y_t = c x_t + w`, `x_1 ~ N(m0, p0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearGaussianSsm {
    pub a: f64,
    pub c: f64,
    pub m0: f64,
    pub p0: f64,
}

impl SsmModel for LinearGaussianSsm {
    fn initial(&self) -> InitialState {
        if self.p0 > 0.0 {
            InitialState::Gaussian {
                mean: self.m0,
                variance: self.p0,
            }
        } else {
            InitialState::Fixed(self.m0)
        }
    }

    #[inline]
    fn transition_mean(&self, x_prev: f64, _t_prev: usize) -> f64 {
        self.a * x_prev
    }

    #[inline]
    fn observation_mean(&self, x: f64) -> f64 {
        self.c * x
    }
}

/// Simulate `(x_{1:T}, y_{1:T})` from `model` under `params`.
pub fn simulate<M: SsmModel + ?Sized>(
    model: &M,
    params: NoiseParams,
    horizon: usize,
    rng: &mut RngStream,
) -> Result<(Trajectory, ObservationSeries)> {
    if horizon == 0 {
        return Err(Error::invalid("simulate: T must be >= 1"));
    }
    params.validate()?;
    let mut xs = Vec::with_capacity(horizon);
    let mut ys = Vec::with_capacity(horizon);
    let mut x = model.initial().sample(rng);
    for t in 1..=horizon {
        if t > 1 {
            x = model.sample_transition(x, t - 1, params.q, rng);
        }
        let y = model.observation_mean(x) + params.r.sqrt() * rng.standard_normal();
        xs.push(x);
        ys.push(y);
    }
    Ok((Trajectory::new(xs)?, ObservationSeries::new(ys)?))
}
