//! Interacting particle MCMC: a pool of `R` nodes, `P` of which run
//! conditional SMC on retained reference paths while the rest run plain
//! bootstrap filters. After every sweep the conditional roles are reassigned
//! in proportion to the nodes' marginal-likelihood estimates.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::SsmModel;
use crate::pg::{sample_theta, ThetaMode};
use crate::pool::with_threads;
use crate::rng::RngStream;
use crate::smc::{bootstrap_sweep, categorical, conditional_sweep, log_sum_exp, ParticleSystem, ResamplingScheme, SweepOptions};
use crate::smc::weights::normalize_into;
use crate::trace::{Trace, TraceMeta};

/// `log Z-hat = sum_t log(N^-1 sum_i w~_t^i)` from the per-step unnormalized log-weights.
pub fn node_zhat<W: AsRef<[f64]>>(log_weight_rows: &[W]) -> Result<f64> {
    log_weight_rows.iter().try_fold(0.0, |acc, row| {
        let row = row.as_ref();
        let lse = log_sum_exp(row).ok_or(Error::WeightCollapse)?;
        Ok(acc + lse - (row.len() as f64).ln())
    })
}

/// Selection probabilities for slot `j`: proportional to `Z-hat_r` over the
/// nodes not held by any other slot. Ids are 0-based.
pub fn conditional_id_probabilities(log_zhats: &[f64], ids: &[usize], j: usize) -> Result<Vec<f64>> {
    let logw: Vec<f64> = (0..log_zhats.len())
        .map(|r| {
            let taken = ids.iter().enumerate().any(|(k, &c)| k != j && c == r);
            if taken {
                f64::NEG_INFINITY
            } else {
                log_zhats[r]
            }
        })
        .collect();
    if logw.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("marginal-likelihood estimate".into()));
    }
    let mut w = vec![0.0; logw.len()];
    normalize_into(&logw, &mut w).ok_or_else(|| {
        Error::DegenerateWeights {
            stage: "ipmcmc_ids",
            t: j + 1,
        }
    })?;
    Ok(w)
}

fn check_ids(num_nodes: usize, ids: &[usize]) -> Result<()> {
    if ids.is_empty() || ids.len() > num_nodes {
        return Err(Error::invalid(format!(
            "need 1 <= P <= R conditional ids (P={}, R={num_nodes})",
            ids.len()
        )));
    }
    for (k, &c) in ids.iter().enumerate() {
        if c >= num_nodes {
            return Err(Error::invalid(format!("conditional id {c} out of range for R={num_nodes}")));
        }
        if ids[..k].contains(&c) {
            return Err(Error::invalid(format!("conditional id {c} appears twice")));
        }
    }
    Ok(())
}

/// Resample the conditional ids in order `j = 1..P`, each from the nodes not
/// currently held by another slot. The result is always pairwise distinct.
pub fn resample_conditional_ids(log_zhats: &[f64], current: &[usize], rng: &mut RngStream) -> Result<Vec<usize>> {
    check_ids(log_zhats.len(), current)?;
    let mut ids = current.to_vec();
    for j in 0..ids.len() {
        let w = conditional_id_probabilities(log_zhats, &ids, j)?;
        let c = categorical(&w, rng);
        debug_assert!(!ids.iter().enumerate().any(|(k, &o)| k != j && o == c));
        ids[j] = c;
    }
    Ok(ids)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IpmcmcConfig {
    pub num_particles: usize,
    pub iterations: usize,
    /// Total nodes `R`.
    pub num_nodes: usize,
    /// Conditional nodes `P`.
    pub num_conditional: usize,
    /// `Fixed` runs state inference only. `Infer` adds a shared conjugate
    /// `theta` update each iteration, conditioned on the first retained path.
    pub theta: ThetaMode,
    pub state_thin: usize,
    /// Worker threads for the node sweeps; 0 uses the global pool.
    pub threads: usize,
}

impl IpmcmcConfig {
    pub fn new(num_particles: usize, iterations: usize, num_nodes: usize, num_conditional: usize, theta: ThetaMode) -> Self {
        Self {
            num_particles,
            iterations,
            num_nodes,
            num_conditional,
            theta,
            state_thin: 1,
            threads: 0,
        }
    }
}

struct NodeOutput {
    log_zhat: f64,
    path: Vec<f64>,
}

/// Interacting PMCMC. `init_paths` holds the `P` starting references; the
/// trace records all `P` retained paths per iteration plus a swap flag.
pub fn ipmcmc_run<M: SsmModel + ?Sized, P: AsRef<[f64]> + Sync>(
    model: &M,
    obs: &[f64],
    cfg: &IpmcmcConfig,
    init_paths: &[P],
    rng: &mut RngStream,
) -> Result<Trace> {
    if cfg.num_particles < 2 {
        return Err(Error::invalid(format!("need at least 2 particles, got {}", cfg.num_particles)));
    }
    if cfg.iterations < 1 {
        return Err(Error::invalid("need at least 1 iteration"));
    }
    if cfg.num_conditional < 1 || cfg.num_conditional > cfg.num_nodes {
        return Err(Error::invalid(format!(
            "need 1 <= P <= R (P={}, R={})",
            cfg.num_conditional, cfg.num_nodes
        )));
    }
    if init_paths.len() != cfg.num_conditional {
        return Err(Error::LengthMismatch {
            what: "initial paths",
            expected: cfg.num_conditional,
            got: init_paths.len(),
        });
    }
    for p in init_paths {
        crate::pg::check_run(obs, p.as_ref(), cfg.num_particles, cfg.iterations)?;
    }
    cfg.theta.validate()?;
    with_threads(cfg.threads, || ipmcmc_loop(model, obs, cfg, init_paths, rng))
}

fn ipmcmc_loop<M: SsmModel + ?Sized, P: AsRef<[f64]>>(
    model: &M,
    obs: &[f64],
    cfg: &IpmcmcConfig,
    init_paths: &[P],
    rng: &mut RngStream,
) -> Result<Trace> {
    let start = Instant::now();
    let p = cfg.num_conditional;
    let mut trace = Trace::new(TraceMeta {
        sampler: "ipmcmc".into(),
        num_particles: cfg.num_particles,
        iterations: cfg.iterations,
        horizon: obs.len(),
        seed: rng.seed(),
        chains: p,
        state_thin: cfg.state_thin,
        wall_time_seconds: 0.0,
    });
    let mut theta = cfg.theta.initial();
    let mut refs: Vec<Vec<f64>> = init_paths.iter().map(|p| p.as_ref().to_vec()).collect();
    let mut ids: Vec<usize> = (0..p).collect();
    {
        let views: Vec<&[f64]> = refs.iter().map(|r| r.as_slice()).collect();
        trace.record(0, theta, &views);
        trace.record_swap(false);
    }

    let opts = SweepOptions {
        ancestor_sampling: false,
        scheme: ResamplingScheme::Multinomial,
    };
    for m in 1..cfg.iterations {
        if let ThetaMode::Infer { prior, .. } = &cfg.theta {
            theta = sample_theta(model, &refs[0], obs, prior, rng)?;
        }
        // Which reference (if any) each node conditions on.
        let mut slot_of = vec![None; cfg.num_nodes];
        for (j, &c) in ids.iter().enumerate() {
            slot_of[c] = Some(j);
        }
        let outputs: Vec<Result<NodeOutput>> = (0..cfg.num_nodes)
            .into_par_iter()
            .map_init(ParticleSystem::new, |ps, r| {
                let mut node_rng = rng.derive(&[m as u64, r as u64]);
                let res = match slot_of[r] {
                    Some(j) => conditional_sweep(model, theta, obs, &refs[j], cfg.num_particles, opts, ps, &mut node_rng),
                    None => bootstrap_sweep(model, theta, obs, cfg.num_particles, opts.scheme, ps, &mut node_rng),
                }
                .map_err(|e| e.in_node(r + 1))?;
                Ok(NodeOutput {
                    log_zhat: res.log_marginal_likelihood,
                    path: res.sampled_path.into_inner(),
                })
            })
            .collect();
        let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;
        let log_zhats: Vec<f64> = outputs.iter().map(|o| o.log_zhat).collect();
        let new_ids = resample_conditional_ids(&log_zhats, &ids, rng)?;
        let swapped = new_ids != ids;
        ids = new_ids;
        for (j, &c) in ids.iter().enumerate() {
            refs[j].copy_from_slice(&outputs[c].path);
        }
        let views: Vec<&[f64]> = refs.iter().map(|r| r.as_slice()).collect();
        trace.record(m, theta, &views);
        trace.record_swap(swapped);
    }
    trace.meta.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, BenchmarkModel, NoiseParams};
    use crate::pg::initial_path;
    use approx::assert_abs_diff_eq;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn zhat_examples() {
        assert_abs_diff_eq!(node_zhat(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap(), 0.0);
        let one = node_zhat(&[vec![2f64.ln(), 4f64.ln()]]).unwrap();
        assert_abs_diff_eq!(one, 3f64.ln(), epsilon = 1e-14);
        let two = node_zhat(&[vec![0.0, 0.0], vec![2f64.ln(), 2f64.ln()]]).unwrap();
        assert_abs_diff_eq!(two, 2f64.ln(), epsilon = 1e-14);
        assert!(node_zhat(&[vec![f64::NEG_INFINITY; 3]]).is_err());
    }

    #[test]
    fn single_node_is_always_conditional() {
        let mut rng = RngStream::from_seed(1);
        for _ in 0..10 {
            assert_eq!(resample_conditional_ids(&[-3.0], &[0], &mut rng).unwrap(), vec![0]);
        }
    }

    #[test]
    fn excluded_node_has_zero_probability() {
        let w = conditional_id_probabilities(&[0.0, 0.0, 0.0], &[0, 1], 0).unwrap();
        assert_eq!(w, vec![0.5, 0.0, 0.5]);
        let w = conditional_id_probabilities(&[0.0, 3f64.ln()], &[0], 0).unwrap();
        assert_abs_diff_eq!(w[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_ids_and_dead_nodes() {
        let mut rng = RngStream::from_seed(1);
        assert!(resample_conditional_ids(&[0.0, 0.0], &[0, 0], &mut rng).is_err());
        assert!(resample_conditional_ids(&[0.0, 0.0], &[2], &mut rng).is_err());
        let dead = f64::NEG_INFINITY;
        assert!(resample_conditional_ids(&[dead, 0.0, dead], &[1, 0], &mut rng).is_err());
    }

    #[test]
    fn two_node_frequencies() {
        let mut rng = RngStream::from_seed(9);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| resample_conditional_ids(&[0.0, 3f64.ln()], &[0], &mut rng).unwrap()[0] == 1)
            .count() as f64;
        let chi = (hits - 0.75 * n as f64).powi(2) / (0.75 * n as f64)
            + (n as f64 - hits - 0.25 * n as f64).powi(2) / (0.25 * n as f64);
        assert!(chi < ChiSquared::new(1.0).unwrap().inverse_cdf(0.999), "chi2={chi}");
    }

    #[test]
    fn ids_stay_distinct() {
        let mut rng = RngStream::from_seed(4);
        let lz = [0.3, -1.0, 2.0, 0.0, 1.5];
        let mut ids = vec![0, 1, 2];
        for _ in 0..2000 {
            ids = resample_conditional_ids(&lz, &ids, &mut rng).unwrap();
            let mut s = ids.clone();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), 3);
        }
    }

    fn bench_data(t: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::from_seed(seed);
        simulate(&BenchmarkModel, BenchmarkModel::TRUE_PARAMS, t, &mut rng).unwrap().1.into_inner()
    }

    fn inits(y: &[f64], p: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
        (0..p)
            .map(|_| initial_path(&BenchmarkModel, y, BenchmarkModel::TRUE_PARAMS, 50, rng).unwrap().into_inner())
            .collect()
    }

    #[test]
    fn trace_shape_and_swaps() {
        let y = bench_data(40, 2);
        let mut rng = RngStream::from_seed(5);
        let init = inits(&y, 2, &mut rng);
        let cfg = IpmcmcConfig::new(30, 60, 4, 2, ThetaMode::Fixed(BenchmarkModel::TRUE_PARAMS));
        let tr = ipmcmc_run(&BenchmarkModel, &y, &cfg, &init, &mut rng).unwrap();
        assert_eq!(tr.len(), 60);
        assert_eq!(tr.meta.chains, 2);
        assert_eq!(tr.num_state_rows(), 60);
        assert_eq!(tr.state(0, 1), init[1].as_slice());
        let sw = tr.swapped.as_ref().unwrap();
        assert_eq!(sw.len(), 60);
        assert!(!sw[0]);
        assert!(sw.iter().any(|&s| s));
    }

    #[test]
    fn all_conditional_pool_runs() {
        let y = bench_data(30, 3);
        let mut rng = RngStream::from_seed(6);
        let init = inits(&y, 3, &mut rng);
        let cfg = IpmcmcConfig::new(20, 20, 3, 3, ThetaMode::Fixed(BenchmarkModel::TRUE_PARAMS));
        let tr = ipmcmc_run(&BenchmarkModel, &y, &cfg, &init, &mut rng).unwrap();
        assert_eq!(tr.len(), 20);
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let y = bench_data(30, 7);
        let init = inits(&y, 2, &mut RngStream::from_seed(1));
        let mut cfg = IpmcmcConfig::new(20, 15, 4, 2, ThetaMode::Fixed(BenchmarkModel::TRUE_PARAMS));
        cfg.threads = 1;
        let a = ipmcmc_run(&BenchmarkModel, &y, &cfg, &init, &mut RngStream::from_seed(8)).unwrap();
        cfg.threads = 3;
        let b = ipmcmc_run(&BenchmarkModel, &y, &cfg, &init, &mut RngStream::from_seed(8)).unwrap();
        for row in 0..a.num_state_rows() {
            for c in 0..2 {
                assert_eq!(a.state(row, c), b.state(row, c));
            }
        }
        assert_eq!(a.swapped, b.swapped);
    }

    #[test]
    fn inferred_theta_is_positive() {
        let y = bench_data(40, 11);
        let mut rng = RngStream::from_seed(12);
        let init = inits(&y, 1, &mut rng);
        let theta = ThetaMode::Infer {
            prior: Default::default(),
            init: NoiseParams::new(1.0, 1.0).unwrap(),
        };
        let cfg = IpmcmcConfig::new(20, 30, 3, 1, theta);
        let tr = ipmcmc_run(&BenchmarkModel, &y, &cfg, &init, &mut rng).unwrap();
        assert!(tr.theta.iter().all(|t| t.q > 0.0 && t.r > 0.0));
        assert_ne!(tr.theta[29], tr.theta[0]);
    }

    #[test]
    fn config_errors() {
        let y = bench_data(10, 1);
        let init = vec![vec![0.0; 10]];
        let fixed = ThetaMode::Fixed(BenchmarkModel::TRUE_PARAMS);
        let mut rng = RngStream::from_seed(1);
        assert!(ipmcmc_run(&BenchmarkModel, &y, &IpmcmcConfig::new(10, 5, 2, 3, fixed), &init, &mut rng).is_err());
        assert!(ipmcmc_run(&BenchmarkModel, &y, &IpmcmcConfig::new(10, 5, 2, 2, fixed), &init, &mut rng).is_err());
        assert!(ipmcmc_run(&BenchmarkModel, &y, &IpmcmcConfig::new(1, 5, 2, 1, fixed), &init, &mut rng).is_err());
    }
}
