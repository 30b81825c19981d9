//! Transition kernels and the batched chain runner.
//!
//! Every chain owns an independent ChaCha stream derived from one master seed,
//! so runs are reproducible regardless of batching or thread scheduling.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nice::NiceModel;
use crate::targets::{rejection_sample, EnergyTarget};
use crate::tensor::Tensor;
use crate::util::{atomic_write, sumsq};

/// `H(x, v) = U(x) + v.v / 2` given a precomputed energy.
#[inline]
pub fn hamiltonian(energy: f64, v: &[f64]) -> f64 {
    energy + 0.5 * sumsq(v)
}

/// Metropolis-Hastings acceptance probability for a symmetric proposal over
/// the joint state: `min(1, exp(H_current - H_proposed))`.
///
/// Finite inputs only; the kernels reject non-finite proposals before calling.
#[inline]
pub fn mh_accept_prob(h_current: f64, h_proposed: f64) -> f64 {
    (h_current - h_proposed).exp().min(1.0)
}

/// Leapfrog integration of `H = U(x) + |v|^2/2`: half-step momentum,
/// alternating full steps, half-step momentum, then momentum negation.
///
/// Operates on a `[batch, dim]` state; rows integrate independently. Rows
/// that blow up mid-trajectory surface as non-finite output for the kernel to
/// reject.
pub fn leapfrog(
    target: &dyn EnergyTarget,
    x: &Tensor,
    v: &Tensor,
    step_size: f64,
    steps: usize,
) -> (Tensor, Tensor) {
    assert!(steps >= 1, "leapfrog needs at least one step");
    let mut x = x.clone();
    let mut v = v.clone();
    let half = 0.5 * step_size;

    let mut grad = target.grad_batch(&x);
    axpy(&mut v, -half, &grad);
    for step in 0..steps {
        axpy(&mut x, step_size, &v);
        grad = target.grad_batch(&x);
        let coeff = if step + 1 == steps { -half } else { -step_size };
        axpy(&mut v, coeff, &grad);
    }
    for vi in v.data_mut() {
        *vi = -*vi;
    }
    (x, v)
}

/// `y += a * x` elementwise.
fn axpy(y: &mut Tensor, a: f64, x: &Tensor) {
    for (yi, &xi) in y.data_mut().iter_mut().zip(x.data()) {
        *yi += a * xi;
    }
}

/// Direction chosen by the coin flip of the flow proposal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Apply the flow proposal with explicit coin outcomes: rows with `u > 0.5`
/// go through the forward map, the rest through the inverse.
pub fn nice_propose_with(
    model: &NiceModel,
    x: &Tensor,
    v: &Tensor,
    u: &[f64],
) -> Result<(Tensor, Tensor, Vec<Direction>)> {
    let batch = x.rows();
    assert_eq!(u.len(), batch, "one coin per chain");
    let directions: Vec<Direction> = u
        .iter()
        .map(|&ui| if ui > 0.5 { Direction::Forward } else { Direction::Inverse })
        .collect();

    let fwd_rows: Vec<usize> =
        (0..batch).filter(|&i| directions[i] == Direction::Forward).collect();
    let inv_rows: Vec<usize> =
        (0..batch).filter(|&i| directions[i] == Direction::Inverse).collect();

    let mut x_out = Tensor::zeros(vec![batch, model.x_dim]);
    let mut v_out = Tensor::zeros(vec![batch, model.v_dim]);
    for (rows, forward) in [(&fwd_rows, true), (&inv_rows, false)] {
        if rows.is_empty() {
            continue;
        }
        let xs = gather_rows(x, rows);
        let vs = gather_rows(v, rows);
        let (xs2, vs2) = if forward { model.forward(&xs, &vs)? } else { model.inverse(&xs, &vs)? };
        scatter_rows(&mut x_out, rows, &xs2);
        scatter_rows(&mut v_out, rows, &vs2);
    }
    Ok((x_out, v_out, directions))
}

fn gather_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    let cols = t.cols();
    let mut data = Vec::with_capacity(rows.len() * cols);
    for &r in rows {
        data.extend_from_slice(t.row(r));
    }
    Tensor::matrix(rows.len(), cols, data)
}

fn scatter_rows(dest: &mut Tensor, rows: &[usize], src: &Tensor) {
    for (i, &r) in rows.iter().enumerate() {
        dest.row_mut(r).copy_from_slice(src.row(i));
    }
}

/// A transition kernel: HMC or the MH-corrected flow proposal.
pub enum TransitionKernel {
    Hmc { step_size: f64, leapfrog_steps: usize },
    NiceMh { model: NiceModel },
}

impl TransitionKernel {
    pub fn describe(&self) -> String {
        match self {
            TransitionKernel::Hmc { step_size, leapfrog_steps } => {
                format!("hmc(step_size={step_size}, leapfrog={leapfrog_steps})")
            }
            TransitionKernel::NiceMh { model } => format!(
                "anicemc(pattern={}, x_dim={}, v_dim={})",
                model.pattern_string(),
                model.x_dim,
                model.v_dim
            ),
        }
    }

    pub fn validate(&self, target: &dyn EnergyTarget) -> Result<()> {
        match self {
            TransitionKernel::Hmc { step_size, leapfrog_steps } => {
                if !(*step_size > 0.0) {
                    return Err(Error::Config(format!("step size must be > 0, got {step_size}")));
                }
                if *leapfrog_steps < 1 {
                    return Err(Error::Config("leapfrog steps must be >= 1".into()));
                }
            }
            TransitionKernel::NiceMh { model } => {
                model.validate()?;
                if model.x_dim != target.dim() {
                    return Err(Error::Shape(format!(
                        "model x_dim {} vs target dim {}",
                        model.x_dim,
                        target.dim()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Advance every chain one step in place.
    pub fn step(
        &self,
        target: &dyn EnergyTarget,
        x: &mut Tensor,
        energies: &mut [f64],
        rngs: &mut [ChaCha8Rng],
        stats: &mut StepStats,
    ) -> Result<()> {
        match self {
            TransitionKernel::Hmc { step_size, leapfrog_steps } => {
                let batch = x.rows();
                let mut v = Tensor::zeros(vec![batch, target.dim()]);
                fill_normal(&mut v, rngs);
                let (x_prop, v_prop) = leapfrog(target, x, &v, *step_size, *leapfrog_steps);
                let prop_energies = target.energy_batch(&x_prop);
                accept_reject(
                    target, x, energies, &x_prop, &prop_energies, &v, &v_prop, rngs, stats,
                );
            }
            TransitionKernel::NiceMh { model } => {
                let batch = x.rows();
                let mut v = Tensor::zeros(vec![batch, model.v_dim]);
                fill_normal(&mut v, rngs);
                let u: Vec<f64> = rngs.iter_mut().map(|r| r.gen_range(0.0..1.0)).collect();
                let (x_prop, v_prop, _) = nice_propose_with(model, x, &v, &u)?;
                let prop_energies = target.energy_batch(&x_prop);
                accept_reject(
                    target, x, energies, &x_prop, &prop_energies, &v, &v_prop, rngs, stats,
                );
            }
        }
        Ok(())
    }
}

fn fill_normal(t: &mut Tensor, rngs: &mut [ChaCha8Rng]) {
    for (i, rng) in rngs.iter_mut().enumerate() {
        for z in t.row_mut(i) {
            *z = StandardNormal.sample(rng);
        }
    }
}

/// Shared MH accept step over the joint `(x, v)` state. The proposal density
/// ratio is identically 1 for both kernels (leapfrog is an involution after
/// momentum negation; the flow coin flip is symmetric), so only
/// `p(x, v) = exp(-U(x)) N(v)` enters. The auxiliary variable is discarded
/// afterwards either way.
#[allow(clippy::too_many_arguments)]
fn accept_reject(
    _target: &dyn EnergyTarget,
    x: &mut Tensor,
    energies: &mut [f64],
    x_prop: &Tensor,
    prop_energies: &[f64],
    v: &Tensor,
    v_prop: &Tensor,
    rngs: &mut [ChaCha8Rng],
    stats: &mut StepStats,
) {
    let batch = x.rows();
    for i in 0..batch {
        stats.proposals += 1;
        let h_cur = hamiltonian(energies[i], v.row(i));
        let h_prop = hamiltonian(prop_energies[i], v_prop.row(i));
        let finite = h_prop.is_finite() && x_prop.row(i).iter().all(|c| c.is_finite());
        if !finite {
            stats.nonfinite += 1;
            continue; // counts as a rejection
        }
        let a = mh_accept_prob(h_cur, h_prop);
        if rngs[i].gen_range(0.0..1.0) < a {
            x.row_mut(i).copy_from_slice(x_prop.row(i));
            energies[i] = prop_energies[i];
            stats.accepted[i] += 1;
        }
    }
}

/// Per-step bookkeeping for a batch of chains.
pub struct StepStats {
    pub accepted: Vec<u64>,
    pub proposals: u64,
    pub nonfinite: u64,
}

impl StepStats {
    pub fn new(n_chains: usize) -> Self {
        StepStats { accepted: vec![0; n_chains], proposals: 0, nonfinite: 0 }
    }
}

/// Chain-run sizes and seeding.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub n_chains: usize,
    pub burn_in: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Standard deviation of the `N(0, sigma^2 I)` initial distribution.
    pub init_sigma: f64,
}

impl RunConfig {
    pub fn new(n_chains: usize, burn_in: usize, n_steps: usize, seed: u64) -> Self {
        RunConfig { n_chains, burn_in, n_steps, seed, init_sigma: 1.0 }
    }

    pub fn with_init_sigma(mut self, sigma: f64) -> Self {
        self.init_sigma = sigma;
        self
    }
}

/// Metadata attached to a chain dump (the JSON sidecar contents).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DumpMeta {
    pub target_name: String,
    pub kernel: String,
    pub n_chains: usize,
    pub n_steps: usize,
    pub dim: usize,
    pub seed: u64,
    pub init_sigma: f64,
    /// Post-burn-in acceptance fraction per chain.
    pub acceptance_rate: Vec<f64>,
    /// Seconds spent inside the transition loop (burn-in included).
    pub wall_time_seconds: f64,
    /// Proposals rejected because the proposed state was non-finite.
    pub nonfinite_rejections: u64,
    /// Chains whose state became non-finite and were frozen.
    pub failed_chains: Vec<usize>,
}

/// Post-burn-in samples from a batch of chains, `[chain][step][dim]` flattened.
#[derive(Clone, Debug)]
pub struct ChainDump {
    pub meta: DumpMeta,
    pub samples: Vec<f64>,
}

impl ChainDump {
    pub fn sample(&self, chain: usize, step: usize) -> &[f64] {
        let d = self.meta.dim;
        let base = (chain * self.meta.n_steps + step) * d;
        &self.samples[base..base + d]
    }

    /// The series of one coordinate along one chain.
    pub fn dim_series(&self, chain: usize, dim: usize) -> Vec<f64> {
        (0..self.meta.n_steps).map(|t| self.sample(chain, t)[dim]).collect()
    }

    /// The series of a scalar statistic along one chain.
    pub fn stat_series(&self, chain: usize, stat: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.meta.n_steps).map(|t| stat(self.sample(chain, t))).collect()
    }

    /// Write `<stem>.csv` (one row per (chain, step), columns = coordinates)
    /// and the `<stem>.json` sidecar. Returns both paths.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        let csv_path = dir.join(format!("{stem}.csv"));
        let json_path = dir.join(format!("{stem}.json"));
        atomic_write(&csv_path, |f| {
            use std::io::Write;
            let mut w = std::io::BufWriter::new(f);
            let header: Vec<String> = (0..self.meta.dim).map(|d| format!("x{d}")).collect();
            writeln!(w, "{}", header.join(","))?;
            let mut line = String::new();
            for c in 0..self.meta.n_chains {
                for t in 0..self.meta.n_steps {
                    line.clear();
                    for (j, v) in self.sample(c, t).iter().enumerate() {
                        if j > 0 {
                            line.push(',');
                        }
                        line.push_str(&format!("{v}"));
                    }
                    writeln!(w, "{line}")?;
                }
            }
            w.flush()?;
            Ok(())
        })?;
        atomic_write(&json_path, |f| {
            serde_json::to_writer_pretty(&mut *f, &self.meta)
                .map_err(|e| Error::Format(format!("sidecar encode: {e}")))?;
            use std::io::Write;
            writeln!(f)?;
            Ok(())
        })?;
        Ok((csv_path, json_path))
    }

    /// Read a dump back from its CSV and sidecar.
    pub fn read_files(csv_path: &Path, json_path: &Path) -> Result<ChainDump> {
        let meta: DumpMeta = serde_json::from_str(&std::fs::read_to_string(json_path)?)
            .map_err(|e| Error::Format(format!("{}: {e}", json_path.display())))?;
        let text = std::fs::read_to_string(csv_path)?;
        let mut lines = text.lines().enumerate();
        if lines.next().is_none() {
            return Err(Error::Format("empty dump csv".into()));
        }
        let mut samples = Vec::with_capacity(meta.n_chains * meta.n_steps * meta.dim);
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut count = 0;
            for cell in line.split(',') {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Ingestion {
                    row: lineno + 1,
                    message: format!("non-numeric cell {cell:?}"),
                })?;
                samples.push(v);
                count += 1;
            }
            if count != meta.dim {
                return Err(Error::Ingestion {
                    row: lineno + 1,
                    message: format!("expected {} columns, found {count}", meta.dim),
                });
            }
        }
        if samples.len() != meta.n_chains * meta.n_steps * meta.dim {
            return Err(Error::Format(format!(
                "dump has {} values, sidecar promises {}",
                samples.len(),
                meta.n_chains * meta.n_steps * meta.dim
            )));
        }
        Ok(ChainDump { meta, samples })
    }
}

/// Independent per-chain RNG streams from one master seed.
pub fn chain_rngs(seed: u64, n_chains: usize) -> Vec<ChaCha8Rng> {
    (0..n_chains)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            rng
        })
        .collect()
}

/// Run `n_chains` chains for `burn_in + n_steps` transitions and keep the
/// post-burn-in samples. Deterministic given the seed.
pub fn run_chain(
    kernel: &TransitionKernel,
    target: &dyn EnergyTarget,
    cfg: &RunConfig,
) -> Result<ChainDump> {
    if cfg.n_chains < 1 {
        return Err(Error::Config("need at least one chain".into()));
    }
    kernel.validate(target)?;
    let dim = target.dim();
    let mut rngs = chain_rngs(cfg.seed, cfg.n_chains);

    let mut x = Tensor::zeros(vec![cfg.n_chains, dim]);
    for (i, rng) in rngs.iter_mut().enumerate() {
        for c in x.row_mut(i) {
            let z: f64 = StandardNormal.sample(rng);
            *c = cfg.init_sigma * z;
        }
    }
    let mut energies = target.energy_batch(&x);

    let mut samples = Vec::with_capacity(cfg.n_chains * cfg.n_steps * dim);
    let mut recorded: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.n_steps * dim); cfg.n_chains];
    let mut stats = StepStats::new(cfg.n_chains);
    let mut failed_chains = Vec::new();
    let mut burn_accepted = vec![0u64; cfg.n_chains];

    let started = Instant::now();
    for step in 0..cfg.burn_in + cfg.n_steps {
        if step == cfg.burn_in {
            burn_accepted.copy_from_slice(&stats.accepted);
        }
        kernel.step(target, &mut x, &mut energies, &mut rngs, &mut stats)?;
        if step >= cfg.burn_in {
            for c in 0..cfg.n_chains {
                recorded[c].extend_from_slice(x.row(c));
            }
        }
    }
    let wall_time_seconds = started.elapsed().as_secs_f64();

    for (c, row) in recorded.iter().enumerate() {
        if !row.iter().all(|v| v.is_finite()) {
            failed_chains.push(c);
        }
        samples.extend_from_slice(row);
    }

    let denom = cfg.n_steps.max(1) as f64;
    let acceptance_rate: Vec<f64> = stats
        .accepted
        .iter()
        .zip(&burn_accepted)
        .map(|(&total, &burn)| {
            if cfg.n_steps == 0 {
                0.0
            } else {
                (total - burn) as f64 / denom
            }
        })
        .collect();

    Ok(ChainDump {
        meta: DumpMeta {
            target_name: target.name().to_string(),
            kernel: kernel.describe(),
            n_chains: cfg.n_chains,
            n_steps: cfg.n_steps,
            dim,
            seed: cfg.seed,
            init_sigma: cfg.init_sigma,
            acceptance_rate,
            wall_time_seconds,
            nonfinite_rejections: stats.nonfinite,
            failed_chains,
        },
        samples,
    })
}

/// Fit the initial-distribution scale by maximum likelihood on a pilot
/// rejection sample: for `N(0, sigma^2 I)` the MLE is
/// `sigma^2 = mean(|x|^2) / dim`.
pub fn fit_init_sigma(target: &dyn EnergyTarget, pilot: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX); // keep the pilot off the chain streams
    let sample = rejection_sample(target, pilot, &mut rng)?;
    let total: f64 = sample.data().iter().map(|v| v * v).sum();
    Ok((total / (pilot as f64 * target.dim() as f64)).sqrt())
}
