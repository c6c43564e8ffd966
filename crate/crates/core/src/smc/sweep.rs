//! Bootstrap, conditional and ancestor-sampling SMC sweeps.
//!
//! All sweeps share one engine. A sweep covers a window of observations
//! starting at 1-based time `first_t`; full-horizon sweeps use `first_t = 1`,
//! blocked sweeps use a block's start index. When a reference path is given,
//! it occupies the last particle slot (`N - 1`) at every step.

use crate::error::{Error, Result};
use crate::model::{NoiseParams, SsmModel, Trajectory};
use crate::rng::RngStream;
use crate::smc::particles::{ParticleSystem, SweepResult};
use crate::smc::resample::{categorical, resample_into, ResamplingScheme};
use crate::smc::weights::normalize_into;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Precomputed Gaussian log-density constants for a fixed variance.
#[derive(Clone, Copy, Debug)]
pub(crate) struct GaussTerm {
    log_norm: f64,
    half_prec: f64,
    sd: f64,
}

impl GaussTerm {
    pub(crate) fn new(variance: f64) -> Self {
        Self {
            log_norm: -0.5 * (LN_2PI + variance.ln()),
            half_prec: 0.5 / variance,
            sd: variance.sqrt(),
        }
    }

    #[inline]
    pub(crate) fn logpdf(&self, x: f64, mean: f64) -> f64 {
        let d = x - mean;
        self.log_norm - self.half_prec * d * d
    }
}

/// How the first particle generation of a window is drawn.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Start {
    /// From the model's initial-state law (only valid when `first_t == 1`).
    Model,
    /// From `p(x_s | x_{s-1})` given the boundary state `x_{s-1}`.
    After(f64),
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct SweepSpec<'a> {
    pub obs: &'a [f64],
    pub first_t: usize,
    pub start: Start,
    pub reference: Option<&'a [f64]>,
    pub ancestor_sampling: bool,
    /// Boundary state `x_{u+1}` that multiplies the final weights by `p(x_{u+1} | x_u)`.
    pub terminal: Option<f64>,
    pub scheme: ResamplingScheme,
    pub stage: &'static str,
}

/// Options shared by the conditional sweeps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepOptions {
    pub ancestor_sampling: bool,
    pub scheme: ResamplingScheme,
}

pub(crate) fn run_sweep<M: SsmModel + ?Sized>(
    model: &M,
    params: NoiseParams,
    spec: &SweepSpec<'_>,
    ps: &mut ParticleSystem,
    rng: &mut RngStream,
) -> Result<SweepResult> {
    let horizon = spec.obs.len();
    let n = ps.num_particles();
    let free = if spec.reference.is_some() { n - 1 } else { n };
    let trans = GaussTerm::new(params.q);
    let obs = GaussTerm::new(params.r);
    let ln_n = (n as f64).ln();
    let degenerate = |k: usize| Error::DegenerateWeights {
        stage: spec.stage,
        t: spec.first_t + k,
    };
    let mut log_z = 0.0;

    // First generation.
    {
        let y = spec.obs[0];
        let init = model.initial();
        for i in 0..n {
            let x = if i < free {
                match spec.start {
                    Start::Model => init.sample(rng),
                    Start::After(xp) => {
                        model.transition_mean(xp, spec.first_t - 1) + trans.sd * rng.standard_normal()
                    }
                }
            } else {
                spec.reference.unwrap()[0]
            };
            ps.particles[i] = x;
            ps.ancestors[i] = i;
            ps.log_weights[i] = obs.logpdf(y, model.observation_mean(x));
        }
        let lse = normalize_into(&ps.log_weights[..n], &mut ps.weights).ok_or_else(|| degenerate(0))?;
        log_z += lse - ln_n;
    }

    for k in 1..horizon {
        let t_prev = spec.first_t + k - 1;
        let (done, rest) = ps.particles.split_at_mut(k * n);
        let prev = &done[(k - 1) * n..];
        let cur = &mut rest[..n];
        let anc = &mut ps.ancestors[k * n..(k + 1) * n];

        resample_into(spec.scheme, &ps.weights, &mut anc[..free], &mut ps.resample, rng);

        if let Some(reference) = spec.reference {
            let x_ref = reference[k];
            anc[n - 1] = if spec.ancestor_sampling {
                let lw_prev = &ps.log_weights[(k - 1) * n..k * n];
                for i in 0..n {
                    ps.scratch[i] = lw_prev[i] + trans.logpdf(x_ref, model.transition_mean(prev[i], t_prev));
                }
                let (scratch, weights) = (&ps.scratch, &mut ps.weights);
                normalize_into(scratch, weights).ok_or_else(|| degenerate(k))?;
                categorical(&ps.weights, rng)
            } else {
                n - 1
            };
            cur[n - 1] = x_ref;
        }

        for i in 0..free {
            cur[i] = model.transition_mean(prev[anc[i]], t_prev) + trans.sd * rng.standard_normal();
        }

        let y = spec.obs[k];
        let lw = &mut ps.log_weights[k * n..(k + 1) * n];
        for i in 0..n {
            lw[i] = obs.logpdf(y, model.observation_mean(cur[i]));
        }
        let lse = normalize_into(lw, &mut ps.weights).ok_or_else(|| degenerate(k))?;
        log_z += lse - ln_n;
    }

    if let Some(x_next) = spec.terminal {
        let last = horizon - 1;
        let t_last = spec.first_t + last;
        for i in 0..n {
            let x = ps.particles[last * n + i];
            ps.scratch[i] =
                ps.log_weights[last * n + i] + trans.logpdf(x_next, model.transition_mean(x, t_last));
        }
        let (scratch, weights) = (&ps.scratch, &mut ps.weights);
        normalize_into(scratch, weights).ok_or_else(|| degenerate(last))?;
    }

    let b = categorical(&ps.weights, rng);
    Ok(SweepResult {
        sampled_path: Trajectory::new(ps.trace_path(b))?,
        chosen_index: b,
        log_marginal_likelihood: log_z,
    })
}

fn check_common(obs_len: usize, n: usize, min_n: usize) -> Result<()> {
    if obs_len == 0 {
        return Err(Error::invalid("observation series is empty"));
    }
    if n < min_n {
        return Err(Error::invalid(format!(
            "need at least {min_n} particles, got {n}"
        )));
    }
    Ok(())
}

/// One bootstrap particle-filter sweep into a caller-owned particle system.
pub fn bootstrap_sweep<M: SsmModel + ?Sized>(
    model: &M,
    params: NoiseParams,
    obs: &[f64],
    n: usize,
    scheme: ResamplingScheme,
    ps: &mut ParticleSystem,
    rng: &mut RngStream,
) -> Result<SweepResult> {
    check_common(obs.len(), n, 1)?;
    params.validate()?;
    ps.reset(obs.len(), n);
    let spec = SweepSpec {
        obs,
        first_t: 1,
        start: Start::Model,
        reference: None,
        ancestor_sampling: false,
        terminal: None,
        scheme,
        stage: "bootstrap_pf",
    };
    run_sweep(model, params, &spec, ps, rng)
}

/// Bootstrap particle filter: returns the particle system, a path drawn from
/// the final weights, and the filtered means `E[x_t | y_{1:t}]`.
pub fn bootstrap_pf<M: SsmModel + ?Sized>(
    model: &M,
    params: NoiseParams,
    obs: &[f64],
    n: usize,
    rng: &mut RngStream,
) -> Result<(ParticleSystem, SweepResult, Vec<f64>)> {
    let mut ps = ParticleSystem::new();
    let res = bootstrap_sweep(model, params, obs, n, ResamplingScheme::Multinomial, &mut ps, rng)?;
    let means = ps.filtered_means()?;
    Ok((ps, res, means))
}

/// Conditional SMC sweep (optionally with ancestor sampling) into a caller-owned particle system.
pub fn conditional_sweep<M: SsmModel + ?Sized>(
    model: &M,
    params: NoiseParams,
    obs: &[f64],
    reference: &[f64],
    n: usize,
    opts: SweepOptions,
    ps: &mut ParticleSystem,
    rng: &mut RngStream,
) -> Result<SweepResult> {
    check_common(obs.len(), n, 2)?;
    params.validate()?;
    if reference.len() != obs.len() {
        return Err(Error::LengthMismatch {
            what: "reference path",
            expected: obs.len(),
            got: reference.len(),
        });
    }
    ps.reset(obs.len(), n);
    let stage = if opts.ancestor_sampling { "csmc_as" } else { "csmc" };
    let spec = SweepSpec {
        obs,
        first_t: 1,
        start: Start::Model,
        reference: Some(reference),
        ancestor_sampling: opts.ancestor_sampling,
        terminal: None,
        scheme: opts.scheme,
        stage,
    };
    run_sweep(model, params, &spec, ps, rng)
}

/// Conditional SMC: the reference path is pinned to the last particle slot and
/// its ancestor is fixed to itself.
pub fn csmc<M: SsmModel + ?Sized>(
    model: &M,
    params: NoiseParams,
    obs: &[f64],
    reference: &[f64],
    n: usize,
    rng: &mut RngStream,
) -> Result<SweepResult> {
    let mut ps = ParticleSystem::new();
    conditional_sweep(model, params, obs, reference, n, SweepOptions::default(), &mut ps, rng)
}

/// Conditional SMC with ancestor sampling for the reference particle.
pub fn csmc_as<M: SsmModel + ?Sized>(
    model: &M,
    params: NoiseParams,
    obs: &[f64],
    reference: &[f64],
    n: usize,
    rng: &mut RngStream,
) -> Result<SweepResult> {
    let mut ps = ParticleSystem::new();
    let opts = SweepOptions {
        ancestor_sampling: true,
        ..SweepOptions::default()
    };
    conditional_sweep(model, params, obs, reference, n, opts, &mut ps, rng)
}

/// Normalized ancestor weights `w_{t-1}^i p(x'_t | x_{t-1}^i)` for the reference
/// value `reference_next = x'_t`; `t` is the 1-based index of `x'_t`.
pub fn ancestor_weights<M: SsmModel + ?Sized>(
    log_w_prev: &[f64],
    reference_next: f64,
    particles_prev: &[f64],
    t: usize,
    params: NoiseParams,
    model: &M,
) -> Result<Vec<f64>> {
    if log_w_prev.len() != particles_prev.len() {
        return Err(Error::LengthMismatch {
            what: "ancestor_weights particles",
            expected: log_w_prev.len(),
            got: particles_prev.len(),
        });
    }
    if t < 2 {
        return Err(Error::invalid("ancestor_weights: t must be >= 2"));
    }
    if !reference_next.is_finite() || particles_prev.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("ancestor_weights: non-finite input".into()));
    }
    let logw: Vec<f64> = log_w_prev
        .iter()
        .zip(particles_prev)
        .map(|(lw, &x)| lw + model.transition_logpdf(reference_next, x, t - 1, params.q))
        .collect();
    let mut out = vec![0.0; logw.len()];
    normalize_into(&logw, &mut out).ok_or(Error::DegenerateWeights {
        stage: "ancestor_weights",
        t,
    })?;
    Ok(out)
}
