use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Trajectory;
use crate::smc::resample::ResampleScratch;
use crate::smc::weights::{log_sum_exp, normalize_into};

/// Particle values, unnormalized log-weights and ancestor indices of one
/// sweep, stored row-major as `T x N`. Indices are 0-based; row 0 of
/// `ancestors` is unused and holds the identity.
#[derive(Clone, Debug, Default)]
pub struct ParticleSystem {
    horizon: usize,
    num_particles: usize,
    pub(crate) particles: Vec<f64>,
    pub(crate) log_weights: Vec<f64>,
    pub(crate) ancestors: Vec<usize>,
    pub(crate) weights: Vec<f64>,
    pub(crate) scratch: Vec<f64>,
    pub(crate) resample: ResampleScratch,
}

impl ParticleSystem {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn reset(&mut self, horizon: usize, num_particles: usize) {
        self.horizon = horizon;
        self.num_particles = num_particles;
        // Every cell is overwritten by the sweep, so only the sizes matter.
        let cells = horizon * num_particles;
        self.particles.resize(cells, 0.0);
        self.log_weights.resize(cells, 0.0);
        self.ancestors.resize(cells, 0);
        self.weights.resize(num_particles, 0.0);
        self.scratch.resize(num_particles, 0.0);
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_particles(&self) -> usize {
        self.num_particles
    }

    /// Particle values at 0-based step `k`.
    pub fn particles_at(&self, k: usize) -> &[f64] {
        let n = self.num_particles;
        &self.particles[k * n..(k + 1) * n]
    }

    pub fn log_weights_at(&self, k: usize) -> &[f64] {
        let n = self.num_particles;
        &self.log_weights[k * n..(k + 1) * n]
    }

    pub fn ancestors_at(&self, k: usize) -> &[usize] {
        let n = self.num_particles;
        &self.ancestors[k * n..(k + 1) * n]
    }

    pub fn normalized_weights_at(&self, k: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.num_particles];
        normalize_into(self.log_weights_at(k), &mut out).ok_or(Error::WeightCollapse)?;
        Ok(out)
    }

    /// Particle indices along the lineage of final particle `b`, oldest first.
    pub fn lineage(&self, b: usize) -> Vec<usize> {
        let mut idx = vec![0; self.horizon];
        let mut i = b;
        for k in (0..self.horizon).rev() {
            idx[k] = i;
            if k > 0 {
                i = self.ancestors_at(k)[i];
            }
        }
        idx
    }

    /// The path obtained by tracing final particle `b` back through the ancestors.
    pub fn trace_path(&self, b: usize) -> Vec<f64> {
        self.lineage(b)
            .into_iter()
            .enumerate()
            .map(|(k, i)| self.particles_at(k)[i])
            .collect()
    }

    /// `sum_i w_t^i x_t^i` with normalized weights, for every step.
    pub fn filtered_means(&self) -> Result<Vec<f64>> {
        (0..self.horizon)
            .map(|k| {
                let w = self.normalized_weights_at(k)?;
                Ok(w.iter().zip(self.particles_at(k)).map(|(w, x)| w * x).sum())
            })
            .collect()
    }

    /// `sum_t log(N^-1 sum_i w~_t^i)` over all stored rows.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        let ln_n = (self.num_particles as f64).ln();
        (0..self.horizon).try_fold(0.0, |acc, k| {
            let lse = log_sum_exp(self.log_weights_at(k)).ok_or(Error::WeightCollapse)?;
            Ok(acc + lse - ln_n)
        })
    }

    /// JSON debug dump `{T, N, particles, log_weights, ancestors}` with 1-based ancestors.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        #[allow(non_snake_case)]
        struct Dump {
            T: usize,
            N: usize,
            particles: Vec<Vec<f64>>,
            log_weights: Vec<Vec<f64>>,
            ancestors: Vec<Vec<usize>>,
        }
        let dump = Dump {
            T: self.horizon,
            N: self.num_particles,
            particles: (0..self.horizon).map(|k| self.particles_at(k).to_vec()).collect(),
            log_weights: (0..self.horizon).map(|k| self.log_weights_at(k).to_vec()).collect(),
            ancestors: (0..self.horizon)
                .map(|k| self.ancestors_at(k).iter().map(|a| a + 1).collect())
                .collect(),
        };
        Ok(serde_json::to_string(&dump)?)
    }
}

/// Output of a sweep: the drawn path, the chosen final index (0-based) and `log Z-hat`.
#[derive(Clone, Debug)]
pub struct SweepResult {
    pub sampled_path: Trajectory,
    pub chosen_index: usize,
    pub log_marginal_likelihood: f64,
}
