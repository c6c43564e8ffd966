//! Collapsed (marginalized) particle Gibbs.
//!
//! The noise variances are integrated out of the SMC weights. Each particle
//! carries conjugate hyperparameters `(chi, nu)` along its lineage;
//! `chi_t = chi_{t-1} + s_t` and `nu_t = nu_{t-1} + r_t`. The incremental
//! weight is the predictive `h_t g(chi_{t-1}, nu_{t-1}) / g(chi_t, nu_t)`
//! divided by the proposal density.

use std::time::Instant;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{gaussian_logpdf, NoiseParams, SsmModel, Trajectory};
use crate::pg::{check_run, InvGammaPrior};
use crate::rng::RngStream;
use crate::smc::resample::resample_into;
use crate::smc::weights::normalize_into;
use crate::smc::{categorical, ParticleSystem, ResamplingScheme, SweepResult};
use crate::trace::{Trace, TraceMeta};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Conjugate hyperparameters: `chi` accumulates natural statistics, `nu` counts.
#[derive(Clone, Debug, PartialEq)]
pub struct ConjugateState {
    pub chi: Vec<f64>,
    pub nu: Vec<f64>,
}

/// A conjugate prior for `theta = (Q, R)` under a restricted exponential
/// family. `x_prev = None` marks the first step, which has no transition term.
pub trait ConjugateModel: Send + Sync {
    fn dim(&self) -> usize;

    fn prior_state(&self) -> ConjugateState;

    /// `s_t(x_t, y_t, x_{t-1})`.
    fn sufficient_stats<M: SsmModel + ?Sized>(
        &self,
        model: &M,
        x: f64,
        y: f64,
        x_prev: Option<f64>,
        t: usize,
        out: &mut [f64],
    );

    /// `r_t`, the count increments.
    fn penalty_stats(&self, x_prev: Option<f64>, out: &mut [f64]);

    /// `log h_t`.
    fn log_base_measure(&self, x_prev: Option<f64>) -> f64;

    /// `log g(chi, nu)`.
    fn log_normalizer(&self, chi: &[f64], nu: &[f64]) -> Result<f64>;

    /// `log g(chi, nu) - log g(chi + s, nu + r)` for increments `(s, r)`.
    fn log_normalizer_ratio(&self, chi: &[f64], nu: &[f64], s: &[f64], r: &[f64]) -> Result<f64> {
        let chi1: Vec<f64> = chi.iter().zip(s).map(|(c, s)| c + s).collect();
        let nu1: Vec<f64> = nu.iter().zip(r).map(|(n, r)| n + r).collect();
        Ok(self.log_normalizer(chi, nu)? - self.log_normalizer(&chi1, &nu1)?)
    }

    /// Draw `theta ~ p(theta | chi, nu)`.
    fn posterior_draw(&self, chi: &[f64], nu: &[f64], rng: &mut RngStream) -> Result<NoiseParams>;

    /// Draw `x_t` given `x_{t-1}` and the particle's hyperparameters.
    #[allow(clippy::too_many_arguments)]
    fn propose<M: SsmModel + ?Sized>(
        &self,
        model: &M,
        chi: &[f64],
        nu: &[f64],
        x_prev: Option<f64>,
        t: usize,
        rng: &mut RngStream,
    ) -> f64;

    /// Log density of [`ConjugateModel::propose`] at `x` (`theta`-free factors may be dropped
    /// as long as [`ConjugateModel::log_base_measure`] drops the same ones).
    #[allow(clippy::too_many_arguments)]
    fn proposal_logpdf<M: SsmModel + ?Sized>(
        &self,
        model: &M,
        chi: &[f64],
        nu: &[f64],
        x: f64,
        x_prev: Option<f64>,
        t: usize,
    ) -> f64;
}

/// `ln Gamma(a + 1/2) - ln Gamma(a)`, accurate for very large `a`.
#[cfg(test)]
fn ln_gamma_half_ratio(a: f64) -> f64 {
    ln_gamma_half_ratio_scaled(a, 1.0)
}

/// `ln Gamma(a + 1/2) - ln Gamma(a) - ln(b)/2`, with one logarithm for large `a`.
#[inline]
fn ln_gamma_half_ratio_scaled(a: f64, b: f64) -> f64 {
    if a < 30.0 {
        return ln_gamma(a + 0.5) - ln_gamma(a) - 0.5 * b.ln();
    }
    let i = 1.0 / a;
    let i2 = i * i;
    0.5 * (a / b).ln() - i * (1.0 / 8.0 - i2 * (1.0 / 192.0 - i2 * (1.0 / 640.0 - i2 * 17.0 / 14336.0)))
}

/// Independent inverse-gamma priors on `Q` and `R`. Coordinates are
/// `chi = (beta_q, beta_r)` and `nu = (alpha_q, alpha_r)`; each Gaussian
/// residual `e` adds `e^2 / 2` to the matching `beta` and `1/2` to `alpha`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GaussianVarianceConjugate {
    pub prior: InvGammaPrior,
}

impl GaussianVarianceConjugate {
    pub fn new(prior: InvGammaPrior) -> Self {
        Self { prior }
    }
}

#[cold]
fn domain_error(chi: &[f64], nu: &[f64]) -> Error {
    Error::Domain(format!("hyperparameters outside the normalizer domain: chi={chi:?}, nu={nu:?}"))
}

#[inline]
fn in_domain(v: f64) -> bool {
    v > 0.0 && v < f64::INFINITY
}

fn check_domain(chi: &[f64], nu: &[f64]) -> Result<()> {
    if chi.iter().chain(nu).all(|&v| in_domain(v)) {
        Ok(())
    } else {
        Err(domain_error(chi, nu))
    }
}

impl ConjugateModel for GaussianVarianceConjugate {
    fn dim(&self) -> usize {
        2
    }

    fn prior_state(&self) -> ConjugateState {
        ConjugateState {
            chi: vec![self.prior.beta_q, self.prior.beta_r],
            nu: vec![self.prior.alpha_q, self.prior.alpha_r],
        }
    }

    fn sufficient_stats<M: SsmModel + ?Sized>(
        &self,
        model: &M,
        x: f64,
        y: f64,
        x_prev: Option<f64>,
        t: usize,
        out: &mut [f64],
    ) {
        out[0] = x_prev.map_or(0.0, |xp| {
            let e = x - model.transition_mean(xp, t - 1);
            0.5 * e * e
        });
        let e = y - model.observation_mean(x);
        out[1] = 0.5 * e * e;
    }

    fn penalty_stats(&self, x_prev: Option<f64>, out: &mut [f64]) {
        out[0] = if x_prev.is_some() { 0.5 } else { 0.0 };
        out[1] = 0.5;
    }

    fn log_base_measure(&self, x_prev: Option<f64>) -> f64 {
        if x_prev.is_some() {
            -2.0 * HALF_LN_2PI
        } else {
            -HALF_LN_2PI
        }
    }

    fn log_normalizer(&self, chi: &[f64], nu: &[f64]) -> Result<f64> {
        check_domain(chi, nu)?;
        Ok(chi.iter().zip(nu).map(|(b, a)| a * b.ln() - ln_gamma(*a)).sum())
    }

    fn log_normalizer_ratio(&self, chi: &[f64], nu: &[f64], s: &[f64], r: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..2 {
            let (a, b) = (nu[k], chi[k]);
            if !(a > 0.0 && b > 0.0) {
                return Err(domain_error(chi, nu));
            }
            total += if r[k] == 0.0 && s[k] == 0.0 {
                0.0
            } else if r[k] == 0.5 && s[k] >= 0.0 {
                // One Gaussian residual: stable for very large counts.
                ln_gamma_half_ratio_scaled(a, b) - (a + 0.5) * (s[k] / b).ln_1p()
            } else {
                let (a1, b1) = (a + r[k], b + s[k]);
                check_domain(&[b1], &[a1])?;
                a * b.ln() - ln_gamma(a) - a1 * b1.ln() + ln_gamma(a1)
            };
        }
        if total.is_nan() {
            return Err(Error::NonFinite("predictive weight".into()));
        }
        Ok(total)
    }

    fn posterior_draw(&self, chi: &[f64], nu: &[f64], rng: &mut RngStream) -> Result<NoiseParams> {
        check_domain(chi, nu)?;
        let q = rng.inverse_gamma(nu[0], chi[0]);
        let r = rng.inverse_gamma(nu[1], chi[1]);
        NoiseParams::new(q, r).map_err(|_| Error::NonFinite(format!("posterior draw out of range: q={q}, r={r}")))
    }

    /// Gaussian around `f(x_{t-1}, t-1)` with the predictive's scale
    /// `chi_q / nu_q`; the first state comes from the model's initial law.
    fn propose<M: SsmModel + ?Sized>(
        &self,
        model: &M,
        chi: &[f64],
        nu: &[f64],
        x_prev: Option<f64>,
        t: usize,
        rng: &mut RngStream,
    ) -> f64 {
        match x_prev {
            None => model.initial().sample(rng),
            Some(xp) => model.transition_mean(xp, t - 1) + (chi[0] / nu[0]).sqrt() * rng.standard_normal(),
        }
    }

    fn proposal_logpdf<M: SsmModel + ?Sized>(
        &self,
        model: &M,
        chi: &[f64],
        nu: &[f64],
        x: f64,
        x_prev: Option<f64>,
        t: usize,
    ) -> f64 {
        match x_prev {
            // Theta-free initial law: dropped here and from `h_1`.
            None => 0.0,
            Some(xp) => gaussian_logpdf(x, model.transition_mean(xp, t - 1), chi[0] / nu[0]),
        }
    }
}

/// Fill `(s_t, r_t)` and check that `(chi + s, nu + r)` stays in the domain.
#[allow(clippy::too_many_arguments)]
fn increments<C: ConjugateModel, M: SsmModel + ?Sized>(
    conj: &C,
    model: &M,
    x: f64,
    y: f64,
    x_prev: Option<f64>,
    t: usize,
    s: &mut [f64],
    r: &mut [f64],
) {
    conj.sufficient_stats(model, x, y, x_prev, t, s);
    conj.penalty_stats(x_prev, r);
}

#[inline]
fn add_into(prev: (&[f64], &[f64]), inc: (&[f64], &[f64]), out: (&mut [f64], &mut [f64])) -> Result<()> {
    let d = out.0.len();
    let (chi, nu) = out;
    let mut ok = true;
    for k in 0..d {
        chi[k] = prev.0[k] + inc.0[k];
        nu[k] = prev.1[k] + inc.1[k];
        ok &= in_domain(chi[k]) & in_domain(nu[k]);
    }
    if ok {
        Ok(())
    } else {
        Err(domain_error(chi, nu))
    }
}

/// `(chi_t, nu_t) = (chi_{t-1} + s_t, nu_{t-1} + r_t)` for 1-based time `t`.
pub fn update_hyperparams<C: ConjugateModel, M: SsmModel + ?Sized>(
    conj: &C,
    model: &M,
    state: &ConjugateState,
    x: f64,
    y: f64,
    x_prev: Option<f64>,
    t: usize,
) -> Result<ConjugateState> {
    let d = conj.dim();
    let (mut s, mut r) = (vec![0.0; d], vec![0.0; d]);
    increments(conj, model, x, y, x_prev, t, &mut s, &mut r);
    let mut next = ConjugateState {
        chi: vec![0.0; d],
        nu: vec![0.0; d],
    };
    add_into((&state.chi, &state.nu), (&s, &r), (&mut next.chi, &mut next.nu))?;
    Ok(next)
}

/// `log p(x_t, y_t | x_{t-1}, chi_{t-1}, nu_{t-1}) = log h_t + log g(chi_{t-1}, nu_{t-1}) - log g(chi_t, nu_t)`.
pub fn predictive_log_marginal<C: ConjugateModel, M: SsmModel + ?Sized>(
    conj: &C,
    model: &M,
    state: &ConjugateState,
    x: f64,
    y: f64,
    x_prev: Option<f64>,
    t: usize,
) -> Result<f64> {
    let d = conj.dim();
    let (mut s, mut r) = (vec![0.0; d], vec![0.0; d]);
    increments(conj, model, x, y, x_prev, t, &mut s, &mut r);
    check_domain(&state.chi, &state.nu)?;
    let mut next = ConjugateState {
        chi: vec![0.0; d],
        nu: vec![0.0; d],
    };
    add_into((&state.chi, &state.nu), (&s, &r), (&mut next.chi, &mut next.nu))?;
    Ok(conj.log_base_measure(x_prev) + conj.log_normalizer_ratio(&state.chi, &state.nu, &s, &r)?)
}

/// Particle system of a marginalized conditional sweep, with each particle's
/// hyperparameters stored per step (`T x N x dim`).
#[derive(Clone, Debug, Default)]
pub struct CollapsedParticles {
    pub system: ParticleSystem,
    dim: usize,
    chi: Vec<f64>,
    nu: Vec<f64>,
}

impl CollapsedParticles {
    pub fn new() -> Self {
        Self::default()
    }

    /// Hyperparameters of particle `i` after step `k` (0-based).
    pub fn state_at(&self, k: usize, i: usize) -> ConjugateState {
        let n = self.system.num_particles();
        let at = (k * n + i) * self.dim;
        ConjugateState {
            chi: self.chi[at..at + self.dim].to_vec(),
            nu: self.nu[at..at + self.dim].to_vec(),
        }
    }
}

/// Marginalized conditional SMC. The reference occupies the last slot at
/// every step and keeps itself as ancestor.
#[allow(clippy::too_many_arguments)]
pub fn mcsmc_sweep<C: ConjugateModel, M: SsmModel + ?Sized>(
    model: &M,
    conj: &C,
    obs: &[f64],
    reference: &[f64],
    n: usize,
    cp: &mut CollapsedParticles,
    rng: &mut RngStream,
) -> Result<SweepResult> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 particles, got {n}")));
    }
    if obs.is_empty() || reference.len() != obs.len() {
        return Err(Error::LengthMismatch {
            what: "reference path",
            expected: obs.len(),
            got: reference.len(),
        });
    }
    let horizon = obs.len();
    let d = conj.dim();
    let prior = conj.prior_state();
    check_domain(&prior.chi, &prior.nu)?;
    cp.dim = d;
    cp.chi.resize(horizon * n * d, 0.0);
    cp.nu.resize(horizon * n * d, 0.0);
    let ps = &mut cp.system;
    ps.reset(horizon, n);
    let ln_n = (n as f64).ln();
    let free = n - 1;
    let degenerate = |k: usize| Error::DegenerateWeights { stage: "mcsmc", t: k + 1 };
    let mut log_z = 0.0;
    let (mut s_inc, mut r_inc) = (vec![0.0; d], vec![0.0; d]);

    for k in 0..horizon {
        let t = k + 1;
        let y = obs[k];
        if k == 0 {
            for i in 0..n {
                ps.ancestors[i] = i;
            }
        } else {
            let anc = &mut ps.ancestors[k * n..(k + 1) * n];
            resample_into(ResamplingScheme::Multinomial, &ps.weights, &mut anc[..free], &mut ps.resample, rng);
            anc[free] = free;
        }
        let (chi_done, chi_rest) = cp.chi.split_at_mut(k * n * d);
        let (nu_done, nu_rest) = cp.nu.split_at_mut(k * n * d);
        for i in 0..n {
            let (x_prev, chi_prev, nu_prev) = if k == 0 {
                (None, &prior.chi[..], &prior.nu[..])
            } else {
                let a = ps.ancestors[k * n + i];
                let at = ((k - 1) * n + a) * d;
                (
                    Some(ps.particles[(k - 1) * n + a]),
                    &chi_done[at..at + d],
                    &nu_done[at..at + d],
                )
            };
            let x = if i < free {
                conj.propose(model, chi_prev, nu_prev, x_prev, t, rng)
            } else {
                reference[k]
            };
            let chi = &mut chi_rest[i * d..(i + 1) * d];
            let nu = &mut nu_rest[i * d..(i + 1) * d];
            increments(conj, model, x, y, x_prev, t, &mut s_inc, &mut r_inc);
            add_into((chi_prev, nu_prev), (&s_inc, &r_inc), (chi, nu))?;
            let pred = conj.log_base_measure(x_prev) + conj.log_normalizer_ratio(chi_prev, nu_prev, &s_inc, &r_inc)?;
            ps.particles[k * n + i] = x;
            ps.log_weights[k * n + i] = pred - conj.proposal_logpdf(model, chi_prev, nu_prev, x, x_prev, t);
        }
        let lw = &ps.log_weights[k * n..(k + 1) * n];
        let lse = normalize_into(lw, &mut ps.weights).ok_or_else(|| degenerate(k))?;
        log_z += lse - ln_n;
    }
    let b = categorical(&ps.weights, rng);
    Ok(SweepResult {
        sampled_path: Trajectory::new(ps.trace_path(b))?,
        chosen_index: b,
        log_marginal_likelihood: log_z,
    })
}

/// Marginalized conditional SMC with a fresh particle system.
pub fn mcsmc<C: ConjugateModel, M: SsmModel + ?Sized>(
    model: &M,
    conj: &C,
    obs: &[f64],
    reference: &[f64],
    n: usize,
    rng: &mut RngStream,
) -> Result<SweepResult> {
    mcsmc_sweep(model, conj, obs, reference, n, &mut CollapsedParticles::new(), rng)
}

/// Hyperparameters `(chi_T, nu_T)` accumulated along a full path.
pub fn path_hyperparams<C: ConjugateModel, M: SsmModel + ?Sized>(
    conj: &C,
    model: &M,
    path: &[f64],
    obs: &[f64],
) -> Result<ConjugateState> {
    let mut state = conj.prior_state();
    for (k, (&x, &y)) in path.iter().zip(obs).enumerate() {
        let x_prev = (k > 0).then(|| path[k - 1]);
        state = update_hyperparams(conj, model, &state, x, y, x_prev, k + 1)?;
    }
    Ok(state)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CollapsedPgConfig {
    pub num_particles: usize,
    pub iterations: usize,
    pub state_thin: usize,
}

impl CollapsedPgConfig {
    pub fn new(num_particles: usize, iterations: usize) -> Self {
        Self {
            num_particles,
            iterations,
            state_thin: 1,
        }
    }
}

/// Collapsed particle Gibbs. Each iteration records `theta[m]` drawn from
/// the conjugate posterior of the current path (it plays no part in the
/// weights), then refreshes the path with [`mcsmc`].
pub fn collapsed_pg_run<C: ConjugateModel, M: SsmModel + ?Sized>(
    model: &M,
    conj: &C,
    obs: &[f64],
    cfg: &CollapsedPgConfig,
    init_path: &[f64],
    rng: &mut RngStream,
) -> Result<Trace> {
    check_run(obs, init_path, cfg.num_particles, cfg.iterations)?;
    let start = Instant::now();
    let mut trace = Trace::new(TraceMeta {
        sampler: "collapsed_pg".into(),
        num_particles: cfg.num_particles,
        iterations: cfg.iterations,
        horizon: obs.len(),
        seed: rng.seed(),
        chains: 1,
        state_thin: cfg.state_thin,
        wall_time_seconds: 0.0,
    });
    let mut path = init_path.to_vec();
    let mut cp = CollapsedParticles::new();
    for m in 0..cfg.iterations {
        let post = path_hyperparams(conj, model, &path, obs)?;
        let theta = conj.posterior_draw(&post.chi, &post.nu, rng)?;
        if m > 0 {
            path = mcsmc_sweep(model, conj, obs, &path, cfg.num_particles, &mut cp, rng)?
                .sampled_path
                .into_inner();
        }
        trace.record(m, theta, &[&path]);
    }
    trace.meta.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(trace)
}
