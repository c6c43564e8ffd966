//! Blocked particle Gibbs: overlapping blocks of the state sequence are
//! refreshed by conditional SMC with boundary corrections, odd-numbered
//! blocks first and then even-numbered blocks, each parity in parallel.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{NoiseParams, SsmModel, Trajectory};
use crate::pool::with_threads;
use crate::pg::{initial_path, sample_theta, ThetaMode};
use crate::rng::RngStream;
use crate::smc::sweep::{run_sweep, Start, SweepSpec};
use crate::smc::{ParticleSystem, ResamplingScheme, SweepResult};
use crate::trace::{Trace, TraceMeta};

/// Inclusive 1-based index range `start..=end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Block {
    pub start: usize,
    pub end: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn range0(&self) -> std::ops::Range<usize> {
        self.start - 1..self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPartition {
    pub blocks: Vec<Block>,
    pub block_len: usize,
    pub overlap: usize,
    pub horizon: usize,
}

/// Partition `1..=T` with `s_1 = 1`, `u_j = min(s_j + L - 1, T)`, `s_{j+1} = u_j - p + 1`.
pub fn make_blocks(horizon: usize, block_len: usize, overlap: usize) -> Result<BlockPartition> {
    if block_len < 2 || block_len > horizon {
        return Err(Error::invalid(format!(
            "block_len must satisfy 2 <= L <= T (L={block_len}, T={horizon})"
        )));
    }
    if 2 * overlap >= block_len {
        return Err(Error::invalid(format!(
            "overlap must satisfy p < L/2 (p={overlap}, L={block_len})"
        )));
    }
    let mut blocks = Vec::new();
    let mut start = 1;
    loop {
        let end = (start + block_len - 1).min(horizon);
        blocks.push(Block { start, end });
        if end == horizon {
            break;
        }
        start = end - overlap + 1;
    }
    Ok(BlockPartition {
        blocks,
        block_len,
        overlap,
        horizon,
    })
}

/// Fixed states just outside a block: `x_{s-1}` and `x_{u+1}`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BlockBoundary {
    pub initial_state: Option<f64>,
    pub terminal_state: Option<f64>,
}

/// Blocked conditional SMC over `y_{s:u}` into a caller-owned particle system.
/// `start` is the 1-based index `s` of the first state in the block.
#[allow(clippy::too_many_arguments)]
pub fn blocked_sweep<M: SsmModel + ?Sized>(
    model: &M,
    params: NoiseParams,
    obs: &[f64],
    reference: &[f64],
    start: usize,
    boundary: BlockBoundary,
    n: usize,
    ps: &mut ParticleSystem,
    rng: &mut RngStream,
) -> Result<SweepResult> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 particles, got {n}")));
    }
    if obs.is_empty() || reference.len() != obs.len() {
        return Err(Error::LengthMismatch {
            what: "block reference",
            expected: obs.len(),
            got: reference.len(),
        });
    }
    params.validate()?;
    let start_law = match (start, boundary.initial_state) {
        (1, _) => Start::Model,
        (_, Some(x)) => Start::After(x),
        (_, None) => {
            return Err(Error::invalid(format!(
                "block starting at t={start} needs an initial boundary state"
            )))
        }
    };
    ps.reset(obs.len(), n);
    let spec = SweepSpec {
        obs,
        first_t: start,
        start: start_law,
        reference: Some(reference),
        ancestor_sampling: false,
        terminal: boundary.terminal_state,
        scheme: ResamplingScheme::Multinomial,
        stage: "blocked_csmc",
    };
    run_sweep(model, params, &spec, ps, rng)
}

/// Draw a new block path `x_{s:u}` given the boundary states.
#[allow(clippy::too_many_arguments)]
pub fn blocked_csmc<M: SsmModel + ?Sized>(
    model: &M,
    params: NoiseParams,
    obs: &[f64],
    reference: &[f64],
    start: usize,
    boundary: BlockBoundary,
    n: usize,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    let mut ps = ParticleSystem::new();
    Ok(blocked_sweep(model, params, obs, reference, start, boundary, n, &mut ps, rng)?.sampled_path)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockedPgConfig {
    pub num_particles: usize,
    pub iterations: usize,
    pub block_len: usize,
    pub overlap: usize,
    pub theta: ThetaMode,
    pub state_thin: usize,
    /// Worker threads for the per-parity block updates; 0 uses the global pool.
    pub threads: usize,
}

impl BlockedPgConfig {
    pub fn new(num_particles: usize, iterations: usize, block_len: usize, overlap: usize, theta: ThetaMode) -> Self {
        Self {
            num_particles,
            iterations,
            block_len,
            overlap,
            theta,
            state_thin: 1,
            threads: 0,
        }
    }
}

fn boundary_for(block: &Block, path: &[f64]) -> BlockBoundary {
    BlockBoundary {
        initial_state: (block.start > 1).then(|| path[block.start - 2]),
        terminal_state: path.get(block.end).copied(),
    }
}

/// Refresh every block of one parity (0 = odd-numbered blocks, 1 = even) in parallel.
fn update_parity<M: SsmModel + ?Sized>(
    model: &M,
    params: NoiseParams,
    obs: &[f64],
    partition: &BlockPartition,
    parity: usize,
    n: usize,
    path: &mut [f64],
    iter_rng: &RngStream,
) -> Result<()> {
    let ids: Vec<usize> = (parity..partition.blocks.len()).step_by(2).collect();
    let current: &[f64] = path;
    let updates: Vec<Result<(usize, Vec<f64>)>> = ids
        .par_iter()
        .map_init(ParticleSystem::new, |ps, &j| {
            let block = partition.blocks[j];
            let mut rng = iter_rng.derive(&[j as u64]);
            let res = blocked_sweep(
                model,
                params,
                &obs[block.range0()],
                &current[block.range0()],
                block.start,
                boundary_for(&block, current),
                n,
                ps,
                &mut rng,
            )
            .map_err(|e| e.in_block(j + 1))?;
            Ok((j, res.sampled_path.into_inner()))
        })
        .collect();
    for u in updates {
        let (j, values) = u?;
        path[partition.blocks[j].range0()].copy_from_slice(&values);
    }
    Ok(())
}

fn blocked_loop<M: SsmModel + ?Sized>(
    model: &M,
    obs: &[f64],
    cfg: &BlockedPgConfig,
    partition: &BlockPartition,
    rng: &mut RngStream,
) -> Result<Trace> {
    let start = Instant::now();
    let mut trace = Trace::new(TraceMeta {
        sampler: "blocked_pg".into(),
        num_particles: cfg.num_particles,
        iterations: cfg.iterations,
        horizon: obs.len(),
        seed: rng.seed(),
        chains: 1,
        state_thin: cfg.state_thin,
        wall_time_seconds: 0.0,
    });
    let mut theta = cfg.theta.initial();
    let mut path = initial_path(model, obs, theta, cfg.num_particles, rng)?.into_inner();
    trace.record(0, theta, &[&path]);
    for m in 1..cfg.iterations {
        if let ThetaMode::Infer { prior, .. } = &cfg.theta {
            theta = sample_theta(model, &path, obs, prior, rng)?;
        }
        let iter_rng = rng.derive(&[m as u64]);
        for parity in 0..2 {
            let parity_rng = iter_rng.derive(&[parity as u64]);
            update_parity(model, theta, obs, partition, parity, cfg.num_particles, &mut path, &parity_rng)?;
        }
        trace.record(m, theta, &[&path]);
    }
    trace.meta.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(trace)
}

/// Blocked particle Gibbs. Iteration 1 is a bootstrap-filter path; each later
/// iteration refreshes odd blocks, then even blocks, conditioning on the
/// latest values outside each block. Within a parity, output does not depend
/// on thread count.
pub fn blocked_pg_run<M: SsmModel + ?Sized>(
    model: &M,
    obs: &[f64],
    cfg: &BlockedPgConfig,
    rng: &mut RngStream,
) -> Result<Trace> {
    if cfg.num_particles < 2 {
        return Err(Error::invalid("blocked PG needs at least 2 particles"));
    }
    if cfg.iterations < 1 {
        return Err(Error::invalid("need at least 1 iteration"));
    }
    cfg.theta.validate()?;
    let partition = make_blocks(obs.len(), cfg.block_len, cfg.overlap)?;
    with_threads(cfg.threads, || blocked_loop(model, obs, cfg, &partition, rng))
}
