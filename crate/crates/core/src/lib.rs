//! Particle Gibbs toolkit for nonlinear state-space models with Gaussian noise.
//!
//! Samplers: bootstrap particle filter, particle Gibbs (PG), PG with ancestor
//! sampling (PGAS), interacting PMCMC, blocked PG and collapsed PG, plus
//! mixing diagnostics and an exact linear-Gaussian (Kalman/RTS) oracle.

pub mod blocked;
pub mod collapsed;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod ipmcmc;
pub mod model;
pub mod pg;
mod pool;
pub mod rng;
pub mod smc;
pub mod trace;

pub use blocked::{blocked_csmc, blocked_pg_run, make_blocks, Block, BlockBoundary, BlockPartition, BlockedPgConfig};
pub use collapsed::{
    collapsed_pg_run, mcsmc, predictive_log_marginal, update_hyperparams, CollapsedPgConfig, ConjugateModel,
    ConjugateState, GaussianVarianceConjugate,
};
pub use error::{Error, Result};
pub use ipmcmc::{ipmcmc_run, node_zhat, resample_conditional_ids, IpmcmcConfig};
pub use model::{
    benchmark_f, benchmark_g, simulate, BenchmarkModel, InitialState, LinearGaussianSsm, NoiseParams,
    ObservationSeries, SsmModel, Trajectory,
};
pub use pg::{pg_run, pgas_run, InvGammaPrior, PgConfig, ThetaMode};
pub use rng::RngStream;
pub use trace::{Trace, TraceMeta};
