//! Self-improving pool of "real" samples for adversarial training.
//!
//! The buffer is filled by running the MH-corrected kernel over the untrained
//! flow, so its contents target `p_d` from the start, however slowly that
//! chain mixes. Each refresh replaces half of the pool with fresh
//! MH-corrected samples from the latest model, warm-started from the states
//! being replaced.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nice::NiceModel;
use crate::samplers::{chain_rngs, StepStats, TransitionKernel};
use crate::targets::EnergyTarget;
use crate::tensor::Tensor;

/// Ring-buffer of x-states with provenance tags recording which model
/// generation produced each sample.
pub struct BootstrapBuffer {
    samples: Tensor,
    generation: Vec<u32>,
    current_generation: u32,
    /// Mean MH acceptance during the most recent fill or refresh.
    pub last_fill_acceptance: f64,
}

impl BootstrapBuffer {
    /// Fill `capacity` slots by running that many MH-corrected chains from
    /// `N(0, sigma^2 I)` for `steps` transitions and keeping the final states.
    pub fn init_fill(
        model: &NiceModel,
        target: &dyn EnergyTarget,
        capacity: usize,
        steps: usize,
        init_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be positive".into()));
        }
        let kernel = TransitionKernel::NiceMh { model: model.clone() };
        let mut rngs = chain_rngs(seed, capacity);
        let mut x = Tensor::zeros(vec![capacity, target.dim()]);
        for (i, rng) in rngs.iter_mut().enumerate() {
            for c in x.row_mut(i) {
                let z: f64 = StandardNormal.sample(rng);
                *c = init_sigma * z;
            }
        }
        let mut energies = target.energy_batch(&x);
        let mut stats = StepStats::new(capacity);
        for _ in 0..steps {
            kernel.step(target, &mut x, &mut energies, &mut rngs, &mut stats)?;
        }
        let accepted: u64 = stats.accepted.iter().sum();
        let acceptance =
            if stats.proposals > 0 { accepted as f64 / stats.proposals as f64 } else { 0.0 };
        Ok(BootstrapBuffer {
            samples: x,
            generation: vec![0; capacity],
            current_generation: 0,
            last_fill_acceptance: acceptance,
        })
    }

    /// Fill the pool from a thinned HMC run: `chains` chains are burned in,
    /// then every `thin`-th state of every chain is kept until `capacity`
    /// rows are collected. Used to seed training on targets where the
    /// untrained kernel mixes too slowly to produce useful initial samples.
    #[allow(clippy::too_many_arguments)]
    pub fn init_fill_hmc(
        target: &dyn EnergyTarget,
        capacity: usize,
        step_size: f64,
        leapfrog_steps: usize,
        chains: usize,
        burn_in: usize,
        thin: usize,
        init_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be positive".into()));
        }
        let chains = chains.min(capacity).max(1);
        let kernel = TransitionKernel::Hmc { step_size, leapfrog_steps };
        let mut rngs = chain_rngs(seed, chains);
        let mut x = Tensor::zeros(vec![chains, target.dim()]);
        for (i, rng) in rngs.iter_mut().enumerate() {
            for c in x.row_mut(i) {
                let z: f64 = StandardNormal.sample(rng);
                *c = init_sigma * z;
            }
        }
        let mut energies = target.energy_batch(&x);
        let mut stats = StepStats::new(chains);
        for _ in 0..burn_in {
            kernel.step(target, &mut x, &mut energies, &mut rngs, &mut stats)?;
        }
        let mut samples = Tensor::zeros(vec![capacity, target.dim()]);
        let mut filled = 0;
        while filled < capacity {
            for _ in 0..thin.max(1) {
                kernel.step(target, &mut x, &mut energies, &mut rngs, &mut stats)?;
            }
            for c in 0..chains {
                if filled == capacity {
                    break;
                }
                samples.row_mut(filled).copy_from_slice(x.row(c));
                filled += 1;
            }
        }
        let accepted: u64 = stats.accepted.iter().sum();
        let acceptance =
            if stats.proposals > 0 { accepted as f64 / stats.proposals as f64 } else { 0.0 };
        Ok(BootstrapBuffer {
            samples,
            generation: vec![0; capacity],
            current_generation: 0,
            last_fill_acceptance: acceptance,
        })
    }

    /// Build a buffer directly from known-good samples (e.g. to warm-start
    /// training from an exact draw).
    pub fn from_samples(samples: Tensor) -> Result<Self> {
        if samples.rank() != 2 || samples.rows() == 0 {
            return Err(Error::Config("buffer needs a non-empty [n, dim] sample matrix".into()));
        }
        let n = samples.rows();
        Ok(BootstrapBuffer {
            samples,
            generation: vec![0; n],
            current_generation: 0,
            last_fill_acceptance: 0.0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.samples.rows()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn current_generation(&self) -> u32 {
        self.current_generation
    }

    pub fn rows(&self) -> &Tensor {
        &self.samples
    }

    /// Fraction of slots still holding generation-0 samples.
    pub fn initial_fraction(&self) -> f64 {
        let zero = self.generation.iter().filter(|&&g| g == 0).count();
        zero as f64 / self.generation.len() as f64
    }

    /// Draw `n` rows uniformly with replacement.
    pub fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let dim = self.dim();
        let mut data = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let idx = rng.gen_range(0..self.capacity());
            data.extend_from_slice(self.samples.row(idx));
        }
        Tensor::matrix(n, dim, data)
    }

    /// Replace half of the pool (uniformly chosen slots) with MH-corrected
    /// samples from the given model, warm-started at the replaced states and
    /// run for `steps` transitions. On sampling failure the old buffer is
    /// kept untouched.
    pub fn refresh(
        &mut self,
        model: &NiceModel,
        target: &dyn EnergyTarget,
        steps: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let k = self.capacity() / 2;
        if k == 0 {
            return Ok(());
        }
        let indices = sample_distinct(self.capacity(), k, rng);
        let dim = self.dim();
        let mut start = Vec::with_capacity(k * dim);
        for &i in &indices {
            start.extend_from_slice(self.samples.row(i));
        }
        let mut x = Tensor::matrix(k, dim, start);
        let kernel = TransitionKernel::NiceMh { model: model.clone() };
        let mut rngs = chain_rngs(rng.gen::<u64>(), k);
        let mut energies = target.energy_batch(&x);
        let mut stats = StepStats::new(k);
        for _ in 0..steps {
            kernel.step(target, &mut x, &mut energies, &mut rngs, &mut stats)?;
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("bootstrap refresh produced non-finite states".into()));
        }
        self.current_generation += 1;
        for (slot, &i) in indices.iter().enumerate() {
            self.samples.row_mut(i).copy_from_slice(x.row(slot));
            self.generation[i] = self.current_generation;
        }
        let accepted: u64 = stats.accepted.iter().sum();
        self.last_fill_acceptance =
            if stats.proposals > 0 { accepted as f64 / stats.proposals as f64 } else { 0.0 };
        Ok(())
    }
}

/// `k` distinct indices in `0..n`, uniformly, by partial Fisher-Yates.
fn sample_distinct(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    assert!(k <= n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}
