//! Weight arithmetic, resampling and the SMC sweep variants.

mod particles;
pub(crate) mod resample;
pub(crate) mod sweep;
pub(crate) mod weights;

pub use particles::{ParticleSystem, SweepResult};
pub use resample::{categorical, multinomial_resample, systematic_resample, ResamplingScheme};
pub use sweep::{
    ancestor_weights, bootstrap_pf, bootstrap_sweep, conditional_sweep, csmc, csmc_as, SweepOptions,
};
pub use weights::{log_sum_exp, normalize_log_weights};
