//! Conjugate `(Q, R)` updates and the particle Gibbs drivers (PG and PGAS).

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NoiseParams, SsmModel, Trajectory};
use crate::rng::RngStream;
use crate::smc::{bootstrap_sweep, conditional_sweep, ParticleSystem, ResamplingScheme, SweepOptions};
use crate::trace::{Trace, TraceMeta};

/// Independent inverse-gamma priors `Q ~ IG(alpha_q, beta_q)`, `R ~ IG(alpha_r, beta_r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvGammaPrior {
    pub alpha_q: f64,
    pub beta_q: f64,
    pub alpha_r: f64,
    pub beta_r: f64,
}

impl Default for InvGammaPrior {
    fn default() -> Self {
        Self {
            alpha_q: 0.01,
            beta_q: 0.01,
            alpha_r: 0.01,
            beta_r: 0.01,
        }
    }
}

impl InvGammaPrior {
    pub fn new(alpha_q: f64, beta_q: f64, alpha_r: f64, beta_r: f64) -> Result<Self> {
        let p = Self {
            alpha_q,
            beta_q,
            alpha_r,
            beta_r,
        };
        p.validate()?;
        Ok(p)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let all = [self.alpha_q, self.beta_q, self.alpha_r, self.beta_r];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("inverse-gamma hyperparameters must be positive: {self:?}")))
        }
    }
}

/// Shape and scale of an inverse-gamma law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InvGamma {
    pub fn mean(&self) -> Option<f64> {
        (self.shape > 1.0).then(|| self.scale / (self.shape - 1.0))
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        rng.inverse_gamma(self.shape, self.scale)
    }
}

pub(crate) fn transition_sum_sq<M: SsmModel + ?Sized>(model: &M, states: &[f64]) -> f64 {
    states
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let e = w[1] - model.transition_mean(w[0], k + 1);
            e * e
        })
        .sum()
}

pub(crate) fn observation_sum_sq<M: SsmModel + ?Sized>(model: &M, states: &[f64], obs: &[f64]) -> f64 {
    states
        .iter()
        .zip(obs)
        .map(|(&x, &y)| {
            let e = y - model.observation_mean(x);
            e * e
        })
        .sum()
}

fn finite_or(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what}: sum of squared residuals is {v}")))
    }
}

/// `IG(alpha_q + (T-1)/2, beta_q + 1/2 sum_{t>=2} (x_t - f(x_{t-1}, t-1))^2)`.
pub fn q_posterior<M: SsmModel + ?Sized>(states: &[f64], prior: &InvGammaPrior, model: &M) -> Result<InvGamma> {
    let ss = finite_or("q_posterior", transition_sum_sq(model, states))?;
    Ok(InvGamma {
        shape: prior.alpha_q + 0.5 * states.len().saturating_sub(1) as f64,
        scale: prior.beta_q + 0.5 * ss,
    })
}

/// `IG(alpha_r + T/2, beta_r + 1/2 sum_t (y_t - g(x_t))^2)`.
pub fn r_posterior<M: SsmModel + ?Sized>(
    states: &[f64],
    obs: &[f64],
    prior: &InvGammaPrior,
    model: &M,
) -> Result<InvGamma> {
    if states.len() != obs.len() {
        return Err(Error::LengthMismatch {
            what: "r_posterior observations",
            expected: states.len(),
            got: obs.len(),
        });
    }
    let ss = finite_or("r_posterior", observation_sum_sq(model, states, obs))?;
    Ok(InvGamma {
        shape: prior.alpha_r + 0.5 * states.len() as f64,
        scale: prior.beta_r + 0.5 * ss,
    })
}

pub fn sample_q_posterior<M: SsmModel + ?Sized>(
    states: &Trajectory,
    prior: &InvGammaPrior,
    model: &M,
    rng: &mut RngStream,
) -> Result<f64> {
    if states.len() < 2 {
        return Err(Error::invalid("sample_q_posterior: need at least two states"));
    }
    Ok(q_posterior(states, prior, model)?.sample(rng))
}

pub fn sample_r_posterior<M: SsmModel + ?Sized>(
    states: &Trajectory,
    obs: &[f64],
    prior: &InvGammaPrior,
    model: &M,
    rng: &mut RngStream,
) -> Result<f64> {
    Ok(r_posterior(states, obs, prior, model)?.sample(rng))
}

/// Draw `(Q, R)` from the conjugate posterior given a full path.
pub(crate) fn sample_theta<M: SsmModel + ?Sized>(
    model: &M,
    states: &[f64],
    obs: &[f64],
    prior: &InvGammaPrior,
    rng: &mut RngStream,
) -> Result<NoiseParams> {
    let q = q_posterior(states, prior, model)?.sample(rng);
    let r = r_posterior(states, obs, prior, model)?.sample(rng);
    NoiseParams::new(q, r).map_err(|_| Error::NonFinite(format!("posterior draw out of range: q={q}, r={r}")))
}

/// How `theta` is treated by a sampler.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThetaMode {
    /// Hold `theta` at a known value; only states are sampled.
    Fixed(NoiseParams),
    /// Gibbs-update `theta` from its conjugate posterior, starting at `init`.
    Infer { prior: InvGammaPrior, init: NoiseParams },
}

impl ThetaMode {
    pub fn initial(&self) -> NoiseParams {
        match *self {
            ThetaMode::Fixed(t) => t,
            ThetaMode::Infer { init, .. } => init,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            ThetaMode::Fixed(t) => t.validate(),
            ThetaMode::Infer { prior, init } => {
                prior.validate()?;
                init.validate()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgConfig {
    pub num_particles: usize,
    pub iterations: usize,
    pub theta: ThetaMode,
    pub scheme: ResamplingScheme,
    pub state_thin: usize,
    /// Read by `pgas_run` only; `false` turns PGAS into plain PG.
    pub ancestor_sampling: bool,
}

impl PgConfig {
    pub fn new(num_particles: usize, iterations: usize, theta: ThetaMode) -> Self {
        Self {
            num_particles,
            iterations,
            theta,
            scheme: ResamplingScheme::Multinomial,
            state_thin: 1,
            ancestor_sampling: true,
        }
    }

    pub fn with_state_thin(mut self, thin: usize) -> Self {
        self.state_thin = thin;
        self
    }
}

/// A starting path drawn from one bootstrap filter sweep at `theta`.
pub fn initial_path<M: SsmModel + ?Sized>(
    model: &M,
    obs: &[f64],
    theta: NoiseParams,
    n: usize,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    let mut ps = ParticleSystem::new();
    Ok(bootstrap_sweep(model, theta, obs, n, ResamplingScheme::Multinomial, &mut ps, rng)?.sampled_path)
}

pub(crate) fn check_run(obs: &[f64], init_path: &[f64], n: usize, m: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 particles, got {n}")));
    }
    if m < 1 {
        return Err(Error::invalid("need at least 1 iteration"));
    }
    if obs.is_empty() {
        return Err(Error::invalid("observation series is empty"));
    }
    if init_path.len() != obs.len() {
        return Err(Error::LengthMismatch {
            what: "initial path",
            expected: obs.len(),
            got: init_path.len(),
        });
    }
    Ok(())
}

fn particle_gibbs<M: SsmModel + ?Sized>(
    name: &str,
    model: &M,
    obs: &[f64],
    cfg: &PgConfig,
    opts: SweepOptions,
    init_path: &[f64],
    rng: &mut RngStream,
) -> Result<Trace> {
    check_run(obs, init_path, cfg.num_particles, cfg.iterations)?;
    cfg.theta.validate()?;
    let start = Instant::now();
    let mut trace = Trace::new(TraceMeta {
        sampler: name.to_string(),
        num_particles: cfg.num_particles,
        iterations: cfg.iterations,
        horizon: obs.len(),
        seed: rng.seed(),
        chains: 1,
        state_thin: cfg.state_thin,
        wall_time_seconds: 0.0,
    });
    let mut theta = cfg.theta.initial();
    let mut path = init_path.to_vec();
    trace.record(0, theta, &[&path]);

    let mut ps = ParticleSystem::new();
    for m in 1..cfg.iterations {
        if let ThetaMode::Infer { prior, .. } = &cfg.theta {
            theta = sample_theta(model, &path, obs, prior, rng)?;
        }
        let res = conditional_sweep(model, theta, obs, &path, cfg.num_particles, opts, &mut ps, rng)?;
        path = res.sampled_path.into_inner();
        trace.record(m, theta, &[&path]);
    }
    trace.meta.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(trace)
}

/// Particle Gibbs: alternate a conjugate `theta` draw with a conditional SMC path draw.
pub fn pg_run<M: SsmModel + ?Sized>(
    model: &M,
    obs: &[f64],
    cfg: &PgConfig,
    init_path: &[f64],
    rng: &mut RngStream,
) -> Result<Trace> {
    let opts = SweepOptions {
        ancestor_sampling: false,
        scheme: cfg.scheme,
    };
    particle_gibbs("pg", model, obs, cfg, opts, init_path, rng)
}

/// Particle Gibbs with ancestor sampling. Identical to [`pg_run`], draw for
/// draw, when `cfg.ancestor_sampling` is off.
pub fn pgas_run<M: SsmModel + ?Sized>(
    model: &M,
    obs: &[f64],
    cfg: &PgConfig,
    init_path: &[f64],
    rng: &mut RngStream,
) -> Result<Trace> {
    let opts = SweepOptions {
        ancestor_sampling: cfg.ancestor_sampling,
        scheme: cfg.scheme,
    };
    particle_gibbs("pgas", model, obs, cfg, opts, init_path, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{benchmark_f, simulate, BenchmarkModel};
    use statrs::distribution::{ContinuousCDF, InverseGamma};

    fn traj(v: Vec<f64>) -> Trajectory {
        Trajectory::new(v).unwrap()
    }

    /// A path whose transition residuals are exactly `res` under the benchmark.
    fn path_with_residuals(res: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0];
        for (k, e) in res.iter().enumerate() {
            let next = benchmark_f(x[k], k + 1) + e;
            x.push(next);
        }
        x
    }

    #[test]
    fn q_posterior_zero_residuals_keeps_scale() {
        let x = path_with_residuals(&[0.0, 0.0, 0.0]);
        let prior = InvGammaPrior::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let post = q_posterior(&x, &prior, &BenchmarkModel).unwrap();
        assert!((post.shape - 2.5).abs() < 1e-15);
        assert!((post.scale - 1.0).abs() < 1e-12);
    }

    #[test]
    fn q_posterior_moment_oracle() {
        let x = path_with_residuals(&[1.0, 2.0]);
        let prior = InvGammaPrior::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let post = q_posterior(&x, &prior, &BenchmarkModel).unwrap();
        assert!((post.shape - 2.0).abs() < 1e-12);
        assert!((post.scale - 3.5).abs() < 1e-9);
        // IG(2, 3.5) has infinite variance, so the sample mean of raw draws is a
        // poor check; compare the mean of 1/Q ~ Gamma(2, rate 3.5) instead and
        // the median of Q against the analytic CDF.
        let mut rng = RngStream::from_seed(10);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_q_posterior(&traj(x.clone()), &prior, &BenchmarkModel, &mut rng).unwrap())
            .collect();
        let inv_mean = draws.iter().map(|q| 1.0 / q).sum::<f64>() / n as f64;
        let se = (2.0f64).sqrt() / 3.5 / (n as f64).sqrt();
        assert!((inv_mean - 2.0 / 3.5).abs() < 4.0 * se, "mean of 1/Q = {inv_mean}");
        let ig = InverseGamma::new(2.0, 3.5).unwrap();
        let below = draws.iter().filter(|&&q| q < ig.inverse_cdf(0.5)).count() as f64 / n as f64;
        assert!((below - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn r_posterior_moment_oracle() {
        let lg = crate::model::LinearGaussianSsm { a: 1.0, c: 1.0, m0: 0.0, p0: 1.0 };
        let x = vec![0.5, -1.0];
        let y = vec![0.5 + 3.0, -1.0 - 4.0];
        let prior = InvGammaPrior::new(1.0, 1.0, 2.0, 1.0).unwrap();
        let post = r_posterior(&x, &y, &prior, &lg).unwrap();
        assert!((post.shape - 3.0).abs() < 1e-15);
        assert!((post.scale - 13.5).abs() < 1e-12);
        assert!((post.mean().unwrap() - 6.75).abs() < 1e-12);
        let mut rng = RngStream::from_seed(11);
        let n = 100_000;
        // Var of IG(3, 13.5) = 13.5^2 / (4 * 1) = 45.5625.
        let mean = (0..n)
            .map(|_| sample_r_posterior(&traj(x.clone()), &y, &prior, &lg, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 6.75).abs() < 4.0 * (45.5625f64 / n as f64).sqrt());
    }

    #[test]
    fn r_posterior_zero_residuals_and_mismatch() {
        let lg = crate::model::LinearGaussianSsm { a: 1.0, c: 1.0, m0: 0.0, p0: 1.0 };
        let prior = InvGammaPrior::default();
        let post = r_posterior(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &prior, &lg).unwrap();
        assert_eq!(post.scale, prior.beta_r);
        assert!((post.shape - (prior.alpha_r + 1.5)).abs() < 1e-15);
        assert!(r_posterior(&[1.0, 2.0], &[1.0], &prior, &lg).is_err());
    }

    #[test]
    fn q_sampler_needs_two_states_and_finite_residuals() {
        let prior = InvGammaPrior::default();
        let mut rng = RngStream::from_seed(1);
        assert!(sample_q_posterior(&traj(vec![0.0]), &prior, &BenchmarkModel, &mut rng).is_err());
        assert!(q_posterior(&[0.0, 1e200], &prior, &BenchmarkModel).is_err());
    }

    #[test]
    fn conjugate_draws_pass_ks() {
        let x = path_with_residuals(&[0.3, -0.7, 1.1, 0.2]);
        let prior = InvGammaPrior::new(2.0, 0.5, 1.0, 1.0).unwrap();
        let post = q_posterior(&x, &prior, &BenchmarkModel).unwrap();
        let ig = InverseGamma::new(post.shape, post.scale).unwrap();
        let mut rng = RngStream::from_seed(12);
        let n = 100_000;
        let mut draws: Vec<f64> = (0..n).map(|_| post.sample(&mut rng)).collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = draws
            .iter()
            .enumerate()
            .map(|(i, &q)| {
                let f = ig.cdf(q);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // Asymptotic KS critical value at alpha = 0.001.
        let crit = 1.9495 / (n as f64).sqrt();
        assert!(d < crit, "KS D={d} crit={crit}");
    }

    #[test]
    fn posterior_concentrates_with_true_states() {
        let mut rng = RngStream::from_seed(2);
        let (x, y) = simulate(&BenchmarkModel, BenchmarkModel::TRUE_PARAMS, 500, &mut rng).unwrap();
        let prior = InvGammaPrior::default();
        let q = q_posterior(&x, &prior, &BenchmarkModel).unwrap().mean().unwrap();
        let r = r_posterior(&x, &y, &prior, &BenchmarkModel).unwrap().mean().unwrap();
        assert!((q - 0.1).abs() < 0.03, "Q mean {q}");
        assert!((0.8..=1.25).contains(&r), "R mean {r}");
    }

    #[test]
    fn single_iteration_is_initialization_only() {
        let mut rng = RngStream::from_seed(3);
        let (_, y) = simulate(&BenchmarkModel, BenchmarkModel::TRUE_PARAMS, 30, &mut rng).unwrap();
        let init = NoiseParams::new(1.0, 1.0).unwrap();
        let path = initial_path(&BenchmarkModel, &y, init, 50, &mut rng).unwrap();
        let cfg = PgConfig::new(20, 1, ThetaMode::Infer { prior: InvGammaPrior::default(), init });
        let tr = pg_run(&BenchmarkModel, &y, &cfg, &path, &mut rng).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.theta[0], init);
        assert_eq!(tr.state(0, 0), path.values());
    }

    #[test]
    fn pgas_without_ancestor_sampling_equals_pg() {
        let mut rng = RngStream::from_seed(4);
        let (_, y) = simulate(&BenchmarkModel, BenchmarkModel::TRUE_PARAMS, 60, &mut rng).unwrap();
        let init = NoiseParams::new(1.0, 1.0).unwrap();
        let path = initial_path(&BenchmarkModel, &y, init, 50, &mut rng).unwrap();
        let mut cfg = PgConfig::new(15, 40, ThetaMode::Infer { prior: InvGammaPrior::default(), init });
        cfg.ancestor_sampling = false;
        let a = pg_run(&BenchmarkModel, &y, &cfg, &path, &mut RngStream::from_seed(9)).unwrap();
        let b = pgas_run(&BenchmarkModel, &y, &cfg, &path, &mut RngStream::from_seed(9)).unwrap();
        assert_eq!(a.theta, b.theta);
        for row in 0..a.num_state_rows() {
            assert_eq!(a.state(row, 0), b.state(row, 0));
        }
        cfg.ancestor_sampling = true;
        let c = pgas_run(&BenchmarkModel, &y, &cfg, &path, &mut RngStream::from_seed(9)).unwrap();
        assert_ne!(a.theta, c.theta);
    }

    #[test]
    fn sampled_parameters_are_positive() {
        let mut rng = RngStream::from_seed(5);
        let (_, y) = simulate(&BenchmarkModel, BenchmarkModel::TRUE_PARAMS, 50, &mut rng).unwrap();
        let init = NoiseParams::new(1.0, 1.0).unwrap();
        let path = initial_path(&BenchmarkModel, &y, init, 50, &mut rng).unwrap();
        let cfg = PgConfig::new(10, 200, ThetaMode::Infer { prior: InvGammaPrior::default(), init });
        let tr = pgas_run(&BenchmarkModel, &y, &cfg, &path, &mut rng).unwrap();
        assert!(tr.theta.iter().all(|t| t.q > 0.0 && t.r > 0.0));
        assert_eq!(tr.len(), 200);
    }
}
