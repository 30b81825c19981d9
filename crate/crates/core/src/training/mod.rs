//! Adversarial training of the flow proposal against a target energy.
//!
//! Each iteration runs several critic updates followed by one generator
//! update. Generator rollouts apply the raw forward flow (no MH correction —
//! the accept step is not differentiable); every evaluation chain, including
//! the bootstrap buffer and ESS snapshots, runs the MH-corrected kernel.

mod buffer;
mod losses;

pub use buffer::BootstrapBuffer;
pub use losses::{
    critic_inputs, critic_loss_tape, mgan_loss_values, mgan_losses, normal_matrix,
    pairwise_loss_values, pairwise_losses, rollout, rollout_tape, sample_mgan_batch,
    sample_pair_batch, v_prior_penalty, v_prior_penalty_tape, Discriminator, MganBatch, PairBatch,
    RolloutNodes, LIPSCHITZ_DELTA, V_PRIOR_VAR_FLOOR,
};

use std::io::Write;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{ess_report, reference_moments_2d, RefMoments};
use crate::error::{Error, Result};
use crate::nice::NiceModel;
use crate::samplers::{run_chain, RunConfig, TransitionKernel};
use crate::targets::EnergyTarget;
use crate::tensor::{AdamState, Tensor};
use crate::util::mean;

/// How the critic's Lipschitz constraint is enforced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LipschitzMode {
    /// Penalize `(|D(x + delta u) - D(x)| / delta - 1)^2` at real/fake
    /// interpolation points along random unit directions.
    FiniteDiffPenalty,
    /// Clamp critic weights to `[-clip, clip]` after each update.
    WeightClip,
}

impl std::str::FromStr for LipschitzMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finite_diff_penalty" => Ok(LipschitzMode::FiniteDiffPenalty),
            "weight_clip" => Ok(LipschitzMode::WeightClip),
            other => Err(Error::Config(format!("unknown lipschitz mode {other:?}"))),
        }
    }
}

/// Where the initial bootstrap samples come from.
///
/// The default runs the MH-corrected untrained flow, which suffices for the
/// low-dimensional energies. Concentrated high-dimensional posteriors can
/// instead be seeded from a short HMC run — any operator with the right
/// stationary distribution is a valid sample source for the bootstrap, and
/// the self-improvement loop then proceeds identically.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BufferInit {
    UntrainedKernel,
    Hmc { step_size: f64, leapfrog_steps: usize, chains: usize, burn_in: usize, thin: usize },
}

impl std::str::FromStr for BufferInit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "untrained" => Ok(BufferInit::UntrainedKernel),
            "hmc" => Ok(BufferInit::Hmc {
                step_size: 0.02,
                leapfrog_steps: 40,
                chains: 128,
                burn_in: 300,
                thin: 25,
            }),
            other => Err(Error::Config(format!("unknown buffer init {other:?}"))),
        }
    }
}

/// Hyperparameters for [`train`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Cap on rollout length from noise starts (`b ~ U[1, B]`).
    pub b_max: usize,
    /// Cap on rollout length from buffer starts (`m ~ U[1, M]`).
    pub m_max: usize,
    /// Weight of the noise-start term in the single-sample objective.
    pub lambda: f64,
    /// Weight of the auxiliary-variable prior penalty.
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_iterations: usize,
    pub bootstrap_refresh_interval: usize,
    pub disc_steps_per_gen_step: usize,
    pub lipschitz_mode: LipschitzMode,
    pub penalty_coef: f64,
    pub clip_value: f64,
    /// Score sample pairs rather than single samples.
    pub pairwise: bool,
    /// 0 means the default `10 * batch_size * b_max`.
    pub buffer_capacity: usize,
    /// 0 means match the state dimension.
    pub v_dim: usize,
    pub mnet_hidden: usize,
    /// Scale applied to the output layer of every coupling network at
    /// initialization; small values start the flow near the identity, which
    /// keeps early MH acceptance high on concentrated targets.
    pub mnet_init_scale: f64,
    /// Give the middle (x-updating) coupling network two hidden layers.
    pub middle_two_layer: bool,
    pub disc_hidden: usize,
    pub disc_layers: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Source of the initial buffer contents.
    pub buffer_init: BufferInit,
    /// MH transitions used to fill the buffer initially (untrained-kernel
    /// init).
    pub init_buffer_steps: usize,
    /// MH transitions per bootstrap refresh.
    pub refresh_chain_steps: usize,
    /// Iterations between ESS snapshots; 0 disables them.
    pub snapshot_interval: usize,
    pub eval_chains: usize,
    pub eval_burn_in: usize,
    pub eval_steps: usize,
    /// Draws used for snapshot reference moments.
    pub reference_draws: usize,
    /// Iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
    pub log_interval: usize,
    /// Scale of the `N(0, sigma^2 I)` start distribution for chains and
    /// noise rollouts.
    pub init_sigma: f64,
    /// Where checkpoints and the line-JSON log go; `None` keeps everything
    /// in memory.
    pub out_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// Preset for the 2D energies: `B = 4, M = 2`, batch 32, learning rate
    /// 1e-4, 20000 iterations, 400-unit networks.
    pub fn energies() -> Self {
        TrainConfig {
            b_max: 4,
            m_max: 2,
            lambda: 1.0 / 3.0,
            gamma: 1.0,
            learning_rate: 1e-4,
            batch_size: 32,
            total_iterations: 20_000,
            bootstrap_refresh_interval: 500,
            disc_steps_per_gen_step: 5,
            lipschitz_mode: LipschitzMode::FiniteDiffPenalty,
            penalty_coef: 10.0,
            clip_value: 0.01,
            pairwise: true,
            buffer_capacity: 0,
            v_dim: 0,
            mnet_hidden: 400,
            mnet_init_scale: 1.0,
            middle_two_layer: false,
            disc_hidden: 400,
            disc_layers: 3,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            buffer_init: BufferInit::UntrainedKernel,
            init_buffer_steps: 64,
            refresh_chain_steps: 50,
            snapshot_interval: 500,
            eval_chains: 32,
            eval_burn_in: 200,
            eval_steps: 1000,
            reference_draws: 200_000,
            checkpoint_interval: 0,
            log_interval: 50,
            init_sigma: 1.0,
            out_dir: None,
        }
    }

    /// Preset for logistic regression posteriors: `B = 16, M = 2`, learning
    /// rate 5e-4, 800-unit critic, 50 auxiliary dimensions, two hidden layers
    /// in the middle coupling network.
    pub fn blr() -> Self {
        TrainConfig {
            b_max: 16,
            learning_rate: 5e-4,
            v_dim: 50,
            middle_two_layer: true,
            disc_hidden: 800,
            eval_chains: 16,
            ..TrainConfig::energies()
        }
    }

    pub fn effective_buffer_capacity(&self) -> usize {
        if self.buffer_capacity > 0 {
            self.buffer_capacity
        } else {
            10 * self.batch_size * self.b_max
        }
    }

    pub fn effective_v_dim(&self, x_dim: usize) -> usize {
        if self.v_dim > 0 {
            self.v_dim
        } else {
            x_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.b_max < 1 || self.m_max < 1 {
            return Err(Error::Config("rollout caps must be >= 1".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Config(format!(
                "lambda must lie strictly inside (0, 1), got {}",
                self.lambda
            )));
        }
        if self.gamma < 0.0 {
            return Err(Error::Config("gamma must be >= 0".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be >= 2".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.disc_steps_per_gen_step < 1 {
            return Err(Error::Config("need at least one critic step".into()));
        }
        if self.effective_buffer_capacity() < 2 * self.batch_size {
            return Err(Error::Config("buffer must hold at least two batches".into()));
        }
        Ok(())
    }
}

/// Mixing measurement taken during training with the MH-corrected kernel.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EssSnapshot {
    /// Reported ESS (summary statistic when the target defines one, minimum
    /// across dimensions otherwise); absent when no reference moments exist.
    pub ess: Option<f64>,
    pub acceptance: f64,
    pub statistic: String,
}

/// One line of the training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub v_penalty: f64,
    pub lipschitz_penalty: f64,
    pub buffer_generation: u32,
    pub buffer_acceptance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<EssSnapshot>,
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub model: NiceModel,
    pub log: Vec<LogRecord>,
    pub buffer: BootstrapBuffer,
}

struct Optimizer {
    adam: AdamState,
}

impl Optimizer {
    fn for_model(model: &NiceModel, cfg: &TrainConfig) -> Self {
        Optimizer {
            adam: AdamState::with_betas(
                &model.param_refs(),
                model.param_names(),
                cfg.learning_rate,
                cfg.adam_beta1,
                cfg.adam_beta2,
            ),
        }
    }

    fn for_disc(disc: &Discriminator, cfg: &TrainConfig) -> Self {
        Optimizer {
            adam: AdamState::with_betas(
                &disc.net.param_refs(),
                disc.net.param_names("disc"),
                cfg.learning_rate,
                cfg.adam_beta1,
                cfg.adam_beta2,
            ),
        }
    }
}

/// Train a flow proposal against `target`. Deterministic given `seed`.
///
/// Aborts with an error on divergence (non-finite loss); the last periodic
/// checkpoint, if any, remains on disk.
pub fn train(target: &dyn EnergyTarget, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let x_dim = target.dim();
    let v_dim = cfg.effective_v_dim(x_dim);

    let mut rng_init = stream(seed, 0);
    let mut rng_train = stream(seed, 1);
    let mut rng_buffer = stream(seed, 2);
    let mut rng_eval = stream(seed, 3);

    let mut model = if cfg.middle_two_layer {
        NiceModel::blr_arch(x_dim, v_dim, cfg.mnet_hidden, &mut rng_init)
    } else {
        NiceModel::energy_arch(x_dim, v_dim, cfg.mnet_hidden, &mut rng_init)
    };
    if cfg.mnet_init_scale != 1.0 {
        for layer in &mut model.layers {
            let out = layer.m_net.layers.last_mut().expect("coupling net has layers");
            out.weight = out.weight.scale(cfg.mnet_init_scale);
        }
    }
    let mut disc =
        Discriminator::new(x_dim, cfg.disc_hidden, cfg.disc_layers, cfg.pairwise, &mut rng_init);

    let snapshot_refs = if cfg.snapshot_interval > 0 && target.rejection_envelope().is_some() {
        Some(reference_moments_2d(target, cfg.reference_draws, rng_eval.gen())?)
    } else {
        None
    };

    let mut buffer = match cfg.buffer_init {
        BufferInit::UntrainedKernel => BootstrapBuffer::init_fill(
            &model,
            target,
            cfg.effective_buffer_capacity(),
            cfg.init_buffer_steps,
            cfg.init_sigma,
            rng_buffer.gen(),
        )?,
        BufferInit::Hmc { step_size, leapfrog_steps, chains, burn_in, thin } => {
            BootstrapBuffer::init_fill_hmc(
                target,
                cfg.effective_buffer_capacity(),
                step_size,
                leapfrog_steps,
                chains,
                burn_in,
                thin,
                cfg.init_sigma,
                rng_buffer.gen(),
            )?
        }
    };

    let mut opt_g = Optimizer::for_model(&model, cfg);
    let mut opt_d = Optimizer::for_disc(&disc, cfg);

    let mut log = Vec::new();
    let mut log_file = match &cfg.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(std::io::BufWriter::new(std::fs::File::create(dir.join("train_log.jsonl"))?))
        }
        None => None,
    };
    let write_record = |record: &LogRecord, file: &mut Option<std::io::BufWriter<std::fs::File>>| -> Result<()> {
        if let Some(f) = file {
            serde_json::to_writer(&mut *f, record)
                .map_err(|e| Error::Format(format!("log encode: {e}")))?;
            writeln!(f)?;
            f.flush()?;
        }
        Ok(())
    };

    for it in 1..=cfg.total_iterations {
        let mut d_loss = 0.0;
        let mut penalty = 0.0;
        for _ in 0..cfg.disc_steps_per_gen_step {
            let (d, p) = disc_step(&model, &mut disc, &buffer, cfg, &mut rng_train, &mut opt_d)?;
            d_loss = d;
            penalty = p;
        }
        let (g_loss, v_penalty) =
            gen_step(&mut model, &disc, &buffer, cfg, &mut rng_train, &mut opt_g)?;

        if !d_loss.is_finite() || !g_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training diverged at iteration {it} (d_loss={d_loss}, g_loss={g_loss}); \
                 the most recent checkpoint is the last good state"
            )));
        }

        if cfg.bootstrap_refresh_interval > 0 && it % cfg.bootstrap_refresh_interval == 0 {
            buffer.refresh(&model, target, cfg.refresh_chain_steps, &mut rng_buffer)?;
        }

        let snapshot_due = cfg.snapshot_interval > 0
            && (it % cfg.snapshot_interval == 0 || it == cfg.total_iterations);
        let snapshot = if snapshot_due {
            Some(take_snapshot(&model, target, cfg, snapshot_refs.as_ref(), rng_eval.gen())?)
        } else {
            None
        };

        if cfg.checkpoint_interval > 0 && it % cfg.checkpoint_interval == 0 {
            if let Some(dir) = &cfg.out_dir {
                model.save(&dir.join(format!("checkpoint_{it}.ckpt")))?;
            }
        }

        if snapshot.is_some() || it % cfg.log_interval == 0 || it == cfg.total_iterations {
            let record = LogRecord {
                iteration: it,
                d_loss,
                g_loss,
                v_penalty,
                lipschitz_penalty: penalty,
                buffer_generation: buffer.current_generation(),
                buffer_acceptance: buffer.last_fill_acceptance,
                snapshot,
            };
            write_record(&record, &mut log_file)?;
            log.push(record);
        }
    }

    if let Some(dir) = &cfg.out_dir {
        model.save(&dir.join("checkpoint_final.ckpt"))?;
    }

    Ok(TrainOutcome { model, log, buffer })
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One critic update. Returns the Wasserstein loss and the Lipschitz penalty.
fn disc_step(
    model: &NiceModel,
    disc: &mut Discriminator,
    buffer: &BootstrapBuffer,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    opt: &mut Optimizer,
) -> Result<(f64, f64)> {
    let inputs = if cfg.pairwise {
        let batch = sample_pair_batch(
            model,
            buffer,
            cfg.batch_size,
            cfg.b_max,
            cfg.m_max,
            cfg.init_sigma,
            rng,
        )?;
        critic_inputs(&batch.real_pairs, &batch.fake_xz1, &batch.fake_z23, 0.5, rng)
    } else {
        let batch = sample_mgan_batch(
            model,
            buffer,
            cfg.batch_size,
            cfg.b_max,
            cfg.m_max,
            cfg.init_sigma,
            rng,
        )?;
        critic_inputs(&batch.real, &batch.fake_b, &batch.fake_m, cfg.lambda, rng)
    };

    let coef = match cfg.lipschitz_mode {
        LipschitzMode::FiniteDiffPenalty => cfg.penalty_coef,
        LipschitzMode::WeightClip => 0.0,
    };
    let mut tape = crate::tensor::Tape::new();
    let bound = disc.net.bind(&mut tape, 0);
    let (loss, wasserstein, penalty) = critic_loss_tape(&mut tape, disc, &bound, &inputs, coef)?;
    let grads = tape.backward(loss)?;
    apply_grads(&grads, disc.net.param_refs_mut(), &mut opt.adam)?;
    if cfg.lipschitz_mode == LipschitzMode::WeightClip {
        let c = cfg.clip_value;
        for p in disc.net.param_refs_mut() {
            for v in p.data_mut() {
                *v = v.clamp(-c, c);
            }
        }
    }
    Ok((wasserstein, penalty))
}

/// One generator update. Returns the generator loss and the prior penalty.
fn gen_step(
    model: &mut NiceModel,
    disc: &Discriminator,
    buffer: &BootstrapBuffer,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    opt: &mut Optimizer,
) -> Result<(f64, f64)> {
    let n = cfg.batch_size;
    let mut tape = crate::tensor::Tape::new();
    let gbound = model.bind(&mut tape);
    let dbound = disc.net.bind_const(&mut tape);

    let (scores, n_groups, v_cat) = if cfg.pairwise {
        let x_start = buffer.draw(n, rng);
        let b1 = rng.gen_range(1..=cfg.b_max);
        let noise = normal_matrix(n, model.x_dim, rng).scale(cfg.init_sigma);
        let b2 = rng.gen_range(1..=cfg.b_max);
        // the noise-start rollout is gradient-blocked: computed off-tape
        let (z2, _) = rollout(model, &noise, b2, rng)?;
        let m_steps = rng.gen_range(1..=cfg.m_max);

        let x_node = tape.constant(&x_start);
        let r1 = rollout_tape(&mut tape, model, &gbound, x_node, b1, rng)?;
        let z2_node = tape.constant(&z2);
        let r3 = rollout_tape(&mut tape, model, &gbound, z2_node, m_steps, rng)?;

        let pair1 = tape.concat_cols(x_node, r1.x);
        let pair2 = tape.concat_cols(z2_node, r3.x);
        let stacked = tape.concat_rows(pair1, pair2);
        let scores = disc.net.forward_tape_node(&mut tape, &dbound, stacked)?;
        let v_cat = tape.concat_rows(r1.v_final, r3.v_final);
        (scores, [0.5, 0.5], v_cat)
    } else {
        let noise = normal_matrix(n, model.x_dim, rng).scale(cfg.init_sigma);
        let b_steps = rng.gen_range(1..=cfg.b_max);
        let data_start = buffer.draw(n, rng);
        let m_steps = rng.gen_range(1..=cfg.m_max);

        let noise_node = tape.constant(&noise);
        let rb = rollout_tape(&mut tape, model, &gbound, noise_node, b_steps, rng)?;
        let data_node = tape.constant(&data_start);
        let rm = rollout_tape(&mut tape, model, &gbound, data_node, m_steps, rng)?;

        let stacked = tape.concat_rows(rb.x, rm.x);
        let scores = disc.net.forward_tape_node(&mut tape, &dbound, stacked)?;
        let v_cat = tape.concat_rows(rb.v_final, rm.v_final);
        (scores, [cfg.lambda, 1.0 - cfg.lambda], v_cat)
    };

    let s1 = tape.slice_rows(scores, 0, n);
    let s2 = tape.slice_rows(scores, n, n);
    let m1 = tape.mean_all(s1);
    let m2 = tape.mean_all(s2);
    let w1 = tape.scale(m1, -n_groups[0]);
    let w2 = tape.scale(m2, -n_groups[1]);
    let gan = tape.add(w1, w2);

    let kl = v_prior_penalty_tape(&mut tape, v_cat)?;
    let weighted_kl = tape.scale(kl, cfg.gamma);
    let loss = tape.add(gan, weighted_kl);

    let g_loss = tape.value(loss).item();
    let v_penalty = tape.value(kl).item();
    let grads = tape.backward(loss)?;
    apply_grads(&grads, model.param_refs_mut(), &mut opt.adam)?;
    Ok((g_loss, v_penalty))
}

fn apply_grads(
    grads: &crate::tensor::Gradients,
    mut params: Vec<&mut Tensor>,
    adam: &mut AdamState,
) -> Result<()> {
    let grad_tensors: Vec<Tensor> =
        params.iter().enumerate().map(|(k, p)| grads.param_grad(k, p.shape())).collect();
    adam.step(&mut params, &grad_tensors)
}

fn take_snapshot(
    model: &NiceModel,
    target: &dyn EnergyTarget,
    cfg: &TrainConfig,
    refs: Option<&(Vec<RefMoments>, Option<RefMoments>)>,
    seed: u64,
) -> Result<EssSnapshot> {
    let kernel = TransitionKernel::NiceMh { model: model.clone() };
    let run = RunConfig::new(cfg.eval_chains, cfg.eval_burn_in, cfg.eval_steps, seed)
        .with_init_sigma(cfg.init_sigma);
    let dump = run_chain(&kernel, target, &run)?;
    let acceptance = mean(&dump.meta.acceptance_rate);
    match refs {
        Some((per_dim, summary_ref)) => {
            let summary = match (target.summary_statistic(), summary_ref) {
                (Some(stat), Some(r)) => Some((stat, *r)),
                _ => None,
            };
            let report = ess_report(&dump, per_dim, summary, "rejection")?;
            Ok(EssSnapshot {
                ess: Some(report.min_ess),
                acceptance,
                statistic: report.statistic,
            })
        }
        None => Ok(EssSnapshot {
            ess: None,
            acceptance,
            statistic: "acceptance_only".into(),
        }),
    }
}
