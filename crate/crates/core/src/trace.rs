//! MCMC output container shared by every sampler.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NoiseParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub sampler: String,
    pub num_particles: usize,
    pub iterations: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Number of state paths recorded per iteration (P for iPMCMC, 1 otherwise).
    pub chains: usize,
    /// States are stored every `state_thin` iterations; 0 disables state storage.
    pub state_thin: usize,
    pub wall_time_seconds: f64,
}

/// Per-iteration parameter draws and (optionally thinned) state paths.
///
/// Iterations are numbered from 0 internally; the first row is the
/// initialization. After burn-in removal `first_iter` records how many
/// leading iterations were dropped.
#[derive(Clone, Debug)]
pub struct Trace {
    pub meta: TraceMeta,
    pub first_iter: usize,
    pub theta: Vec<NoiseParams>,
    states: Vec<f64>,
    state_iters: Vec<usize>,
    /// Per-iteration flag: did any conditional node id change (iPMCMC only).
    pub swapped: Option<Vec<bool>>,
}

impl Trace {
    pub fn new(meta: TraceMeta) -> Self {
        Self {
            meta,
            first_iter: 0,
            theta: Vec::new(),
            states: Vec::new(),
            state_iters: Vec::new(),
            swapped: None,
        }
    }

    /// Append iteration `m` (0-based). `paths` holds one path per chain.
    pub(crate) fn record(&mut self, m: usize, theta: NoiseParams, paths: &[&[f64]]) {
        debug_assert_eq!(paths.len(), self.meta.chains);
        self.theta.push(theta);
        let thin = self.meta.state_thin;
        if thin > 0 && m % thin == 0 {
            for p in paths {
                debug_assert_eq!(p.len(), self.meta.horizon);
                self.states.extend_from_slice(p);
            }
            self.state_iters.push(m);
        }
    }

    pub(crate) fn record_swap(&mut self, swapped: bool) {
        self.swapped.get_or_insert_with(Vec::new).push(swapped);
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn q_samples(&self) -> Vec<f64> {
        self.theta.iter().map(|t| t.q).collect()
    }

    pub fn r_samples(&self) -> Vec<f64> {
        self.theta.iter().map(|t| t.r).collect()
    }

    pub fn num_state_rows(&self) -> usize {
        self.state_iters.len()
    }

    /// 0-based iteration index of each stored state row.
    pub fn state_iterations(&self) -> &[usize] {
        &self.state_iters
    }

    pub fn state(&self, row: usize, chain: usize) -> &[f64] {
        let t = self.meta.horizon;
        let start = (row * self.meta.chains + chain) * t;
        &self.states[start..start + t]
    }

    /// Pointwise posterior mean of the stored paths, pooled over all chains.
    pub fn state_mean(&self) -> Option<Vec<f64>> {
        let rows = self.num_state_rows();
        if rows == 0 {
            return None;
        }
        let t = self.meta.horizon;
        let mut mean = vec![0.0; t];
        for chunk in self.states.chunks_exact(t) {
            for (m, x) in mean.iter_mut().zip(chunk) {
                *m += x;
            }
        }
        let count = (rows * self.meta.chains) as f64;
        mean.iter_mut().for_each(|m| *m /= count);
        Some(mean)
    }

    /// Samples of `x_t` (0-based `k`) for one chain across stored rows.
    pub fn state_series(&self, k: usize, chain: usize) -> Vec<f64> {
        (0..self.num_state_rows()).map(|row| self.state(row, chain)[k]).collect()
    }

    /// Drop the first `floor(M/3)` iterations.
    pub fn discard_burn_in(&self) -> Result<Trace> {
        let m = self.len();
        if m < 3 {
            return Err(Error::invalid(format!(
                "burn-in removal needs at least 3 iterations, trace has {m}"
            )));
        }
        self.drop_leading(m / 3)
    }

    pub fn drop_leading(&self, cut: usize) -> Result<Trace> {
        if cut > self.len() {
            return Err(Error::invalid("cannot drop more rows than the trace holds"));
        }
        let abs_cut = self.first_iter + cut;
        let keep_from = self.state_iters.partition_point(|&it| it < abs_cut);
        let stride = self.meta.chains * self.meta.horizon;
        Ok(Trace {
            meta: self.meta.clone(),
            first_iter: abs_cut,
            theta: self.theta[cut..].to_vec(),
            states: self.states[keep_from * stride..].to_vec(),
            state_iters: self.state_iters[keep_from..].to_vec(),
            swapped: self.swapped.as_ref().map(|s| s[cut.min(s.len())..].to_vec()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(m: usize, thin: usize) -> Trace {
        let mut tr = Trace::new(TraceMeta {
            sampler: "toy".into(),
            num_particles: 2,
            iterations: m,
            horizon: 2,
            seed: 0,
            chains: 1,
            state_thin: thin,
            wall_time_seconds: 0.0,
        });
        for i in 0..m {
            let v = i as f64;
            tr.record(i, NoiseParams { q: 1.0 + v, r: 1.0 }, &[&[v, -v]]);
        }
        tr
    }

    #[test]
    fn burn_in_row_counts() {
        assert_eq!(toy(9, 1).discard_burn_in().unwrap().len(), 6);
        assert_eq!(toy(10, 1).discard_burn_in().unwrap().len(), 7);
        assert_eq!(toy(3, 1).discard_burn_in().unwrap().len(), 2);
        assert!(toy(2, 1).discard_burn_in().is_err());
    }

    #[test]
    fn burn_in_keeps_states_aligned() {
        let tr = toy(10, 1).discard_burn_in().unwrap();
        assert_eq!(tr.first_iter, 3);
        assert_eq!(tr.num_state_rows(), 7);
        assert_eq!(tr.state(0, 0), &[3.0, -3.0]);
        assert_eq!(tr.theta[0].q, 4.0);
    }

    #[test]
    fn thinning() {
        let tr = toy(10, 3);
        assert_eq!(tr.state_iterations(), &[0, 3, 6, 9]);
        let b = tr.discard_burn_in().unwrap();
        assert_eq!(b.state_iterations(), &[3, 6, 9]);
        assert_eq!(b.state_mean().unwrap(), vec![6.0, -6.0]);
        assert!(toy(4, 0).state_mean().is_none());
    }
}
