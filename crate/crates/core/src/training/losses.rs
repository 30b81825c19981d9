//! Loss assembly for adversarial kernel training: generator rollouts, the
//! single-sample and pairwise Wasserstein objectives, and the
//! auxiliary-variable prior penalty.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nice::{BoundNice, NiceModel};
use crate::tensor::{Activation, BoundMlp, MlpParams, NodeId, Tape, Tensor};
use crate::util::mean;

use super::buffer::BootstrapBuffer;

/// Wasserstein critic scoring either single states or concatenated pairs.
pub struct Discriminator {
    pub net: MlpParams,
    pub pairwise: bool,
    pub x_dim: usize,
}

impl Discriminator {
    pub fn new<R: Rng>(
        x_dim: usize,
        hidden: usize,
        hidden_layers: usize,
        pairwise: bool,
        rng: &mut R,
    ) -> Self {
        let input = if pairwise { 2 * x_dim } else { x_dim };
        let mut dims = vec![input];
        dims.extend(std::iter::repeat(hidden).take(hidden_layers));
        dims.push(1);
        Discriminator {
            net: MlpParams::new(&dims, Activation::LeakyRelu, Activation::Linear, rng),
            pairwise,
            x_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Scores for a `[n, input_dim]` batch, `[n, 1]`.
    pub fn score(&self, input: &Tensor) -> Result<Tensor> {
        self.net.forward(input)
    }
}

/// Standard-normal `[rows, cols]` draw.
pub fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data)
}

/// Apply the forward flow `steps` times with a fresh auxiliary draw each
/// step; returns the final states and the final auxiliary output.
pub fn rollout(
    model: &NiceModel,
    start: &Tensor,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Tensor)> {
    assert!(steps >= 1, "rollout needs at least one step");
    let batch = start.rows();
    let mut x = start.clone();
    let mut v_out = Tensor::zeros(vec![batch, model.v_dim]);
    for _ in 0..steps {
        let v = normal_matrix(batch, model.v_dim, rng);
        let (nx, nv) = model.forward(&x, &v)?;
        x = nx;
        v_out = nv;
    }
    Ok((x, v_out))
}

/// Final x and v' nodes of a recorded rollout.
pub struct RolloutNodes {
    pub x: NodeId,
    pub v_final: NodeId,
}

/// Recorded version of [`rollout`]; auxiliary draws consume the rng in the
/// same order, so given equal inputs the values match the plain version
/// exactly.
pub fn rollout_tape(
    tape: &mut Tape,
    model: &NiceModel,
    bound: &BoundNice,
    start: NodeId,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutNodes> {
    assert!(steps >= 1, "rollout needs at least one step");
    let batch = tape.value(start).rows();
    let mut x = start;
    let mut v_final = None;
    for _ in 0..steps {
        let v = normal_matrix(batch, model.v_dim, rng);
        let vn = tape.constant(&v);
        let (nx, nv) = model.forward_tape(tape, bound, x, vn)?;
        x = nx;
        v_final = Some(nv);
    }
    Ok(RolloutNodes { x, v_final: v_final.unwrap() })
}

/// Variance floor protecting the prior penalty from degenerate batches.
pub const V_PRIOR_VAR_FLOOR: f64 = 1e-6;

/// Moment-matched Gaussian KL from a batch of auxiliary outputs to the
/// standard-normal prior, summed over dimensions:
///
/// `sum_d 0.5 (mu_d^2 + var_d - 1 - ln var_d)`
///
/// with per-dimension batch mean and (population) variance, floored at 1e-6.
pub fn v_prior_penalty(v: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let node = tape.constant(v);
    let out = v_prior_penalty_tape(&mut tape, node)?;
    Ok(tape.value(out).item())
}

/// Recorded version of [`v_prior_penalty`].
pub fn v_prior_penalty_tape(tape: &mut Tape, v: NodeId) -> Result<NodeId> {
    let n = tape.value(v).rows();
    if n < 2 {
        return Err(Error::Usage(format!("prior penalty needs a batch of >= 2, got {n}")));
    }
    let inv_n = 1.0 / n as f64;
    let col_sum = tape.sum_axis0(v);
    let mu = tape.scale(col_sum, inv_n);
    let v_sq = tape.square(v);
    let sq_sum = tape.sum_axis0(v_sq);
    let mean_sq = tape.scale(sq_sum, inv_n);
    let mu_sq = tape.square(mu);
    let var = tape.sub(mean_sq, mu_sq);
    let var = tape.clamp_min(var, V_PRIOR_VAR_FLOOR);
    let ln_var = tape.log(var);
    let t = tape.add(mu_sq, var);
    let t = tape.add_const(t, -1.0);
    let t = tape.sub(t, ln_var);
    let total = tape.sum_all(t);
    Ok(tape.scale(total, 0.5))
}

/// Minibatch for the single-sample objective.
pub struct MganBatch {
    pub real: Tensor,
    /// `b`-step rollouts from noise starts.
    pub fake_b: Tensor,
    /// `m`-step rollouts from buffer starts.
    pub fake_m: Tensor,
    pub b_steps: usize,
    pub m_steps: usize,
}

/// Minibatch for the pairwise objective.
pub struct PairBatch {
    /// Two independent buffer draws, concatenated: `[n, 2d]`.
    pub real_pairs: Tensor,
    /// Buffer draw paired with its own `b`-step rollout.
    pub fake_xz1: Tensor,
    /// Gradient-blocked `b`-step rollout from noise paired with its `m`-step
    /// continuation.
    pub fake_z23: Tensor,
    /// The unpaired pieces, kept for building the recorded generator pass.
    pub x_start: Tensor,
    pub z2: Tensor,
    pub b1: usize,
    pub b2: usize,
    pub m_steps: usize,
}

fn concat_cols(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, p, q) = (a.rows(), a.cols(), b.cols());
    let mut data = Vec::with_capacity(m * (p + q));
    for i in 0..m {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    Tensor::matrix(m, p + q, data)
}

/// Draw the minibatch pieces for [`mgan_loss_values`]. Rollout lengths are
/// sampled uniformly from `[1, B]` and `[1, M]` per call.
pub fn sample_mgan_batch(
    model: &NiceModel,
    buffer: &BootstrapBuffer,
    batch_size: usize,
    b_max: usize,
    m_max: usize,
    init_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MganBatch> {
    let real = buffer.draw(batch_size, rng);
    let b_steps = rng.gen_range(1..=b_max);
    let m_steps = rng.gen_range(1..=m_max);
    let noise = normal_matrix(batch_size, model.x_dim, rng).scale(init_sigma);
    let (fake_b, _) = rollout(model, &noise, b_steps, rng)?;
    let data_start = buffer.draw(batch_size, rng);
    let (fake_m, _) = rollout(model, &data_start, m_steps, rng)?;
    Ok(MganBatch { real, fake_b, fake_m, b_steps, m_steps })
}

/// Wasserstein losses for the single-sample objective on a fixed minibatch:
///
/// critic loss `lambda E[D(fake_b)] + (1-lambda) E[D(fake_m)] - E[D(real)]`,
/// generator loss the negated fake terms.
pub fn mgan_loss_values(disc: &Discriminator, batch: &MganBatch, lambda: f64) -> Result<(f64, f64)> {
    let d_real = mean(disc.score(&batch.real)?.data());
    let d_b = mean(disc.score(&batch.fake_b)?.data());
    let d_m = mean(disc.score(&batch.fake_m)?.data());
    let fake = lambda * d_b + (1.0 - lambda) * d_m;
    Ok((fake - d_real, -fake))
}

/// Single-sample losses on a freshly sampled minibatch.
pub fn mgan_losses(
    disc: &Discriminator,
    buffer: &BootstrapBuffer,
    model: &NiceModel,
    batch_size: usize,
    b_max: usize,
    m_max: usize,
    lambda: f64,
    init_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let batch = sample_mgan_batch(model, buffer, batch_size, b_max, m_max, init_sigma, rng)?;
    mgan_loss_values(disc, &batch, lambda)
}

/// Draw the minibatch pieces for [`pairwise_loss_values`].
pub fn sample_pair_batch(
    model: &NiceModel,
    buffer: &BootstrapBuffer,
    batch_size: usize,
    b_max: usize,
    m_max: usize,
    init_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PairBatch> {
    if buffer.capacity() < 2 * batch_size {
        return Err(Error::Config(format!(
            "pairwise objective needs a buffer of >= {} samples, have {}",
            2 * batch_size,
            buffer.capacity()
        )));
    }
    let r1 = buffer.draw(batch_size, rng);
    let r2 = buffer.draw(batch_size, rng);
    let real_pairs = concat_cols(&r1, &r2);

    let x_start = buffer.draw(batch_size, rng);
    let b1 = rng.gen_range(1..=b_max);
    let (z1, _) = rollout(model, &x_start, b1, rng)?;
    let fake_xz1 = concat_cols(&x_start, &z1);

    let noise = normal_matrix(batch_size, model.x_dim, rng).scale(init_sigma);
    let b2 = rng.gen_range(1..=b_max);
    let (z2, _) = rollout(model, &noise, b2, rng)?;
    let m_steps = rng.gen_range(1..=m_max);
    let (z3, _) = rollout(model, &z2, m_steps, rng)?;
    let fake_z23 = concat_cols(&z2, &z3);

    Ok(PairBatch { real_pairs, fake_xz1, fake_z23, x_start, z2, b1, b2, m_steps })
}

/// Wasserstein losses for the pairwise objective; the two fake pair types
/// carry equal weight.
pub fn pairwise_loss_values(disc: &Discriminator, batch: &PairBatch) -> Result<(f64, f64)> {
    let d_real = mean(disc.score(&batch.real_pairs)?.data());
    let d_xz1 = mean(disc.score(&batch.fake_xz1)?.data());
    let d_z23 = mean(disc.score(&batch.fake_z23)?.data());
    let fake = 0.5 * d_xz1 + 0.5 * d_z23;
    Ok((fake - d_real, -fake))
}

/// Pairwise losses on a freshly sampled minibatch.
pub fn pairwise_losses(
    disc: &Discriminator,
    buffer: &BootstrapBuffer,
    model: &NiceModel,
    batch_size: usize,
    b_max: usize,
    m_max: usize,
    init_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let batch = sample_pair_batch(model, buffer, batch_size, b_max, m_max, init_sigma, rng)?;
    pairwise_loss_values(disc, &batch)
}

/// Step size of the directional finite difference in the Lipschitz penalty.
pub const LIPSCHITZ_DELTA: f64 = 1e-3;

/// Critic-training pieces: groups of rows stacked into a single forward pass.
pub struct CriticInputs {
    /// `[real, fake_a, fake_b, interp, interp + delta u]` stacked row-wise.
    pub stacked: Tensor,
    pub group_len: usize,
    /// Weight of `fake_a` in the critic loss (`fake_b` gets `1 -` this).
    pub fake_a_weight: f64,
}

/// Build the stacked critic input from one real group and two fake groups,
/// plus interpolation points (and their displaced copies) for the
/// finite-difference Lipschitz penalty.
pub fn critic_inputs(
    real: &Tensor,
    fake_a: &Tensor,
    fake_b: &Tensor,
    fake_a_weight: f64,
    rng: &mut ChaCha8Rng,
) -> CriticInputs {
    let n = real.rows();
    let d = real.cols();
    let mut interp = Tensor::zeros(vec![n, d]);
    let mut displaced = Tensor::zeros(vec![n, d]);
    for i in 0..n {
        let eps: f64 = rng.gen_range(0.0..1.0);
        // alternate the fake group so both anchor the penalty
        let fake = if i % 2 == 0 { fake_a.row(i) } else { fake_b.row(i) };
        // random unit direction
        let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = crate::util::sumsq(&u).sqrt().max(1e-12);
        for ui in u.iter_mut() {
            *ui /= norm;
        }
        for j in 0..d {
            let x = eps * real.row(i)[j] + (1.0 - eps) * fake[j];
            interp.row_mut(i)[j] = x;
            displaced.row_mut(i)[j] = x + LIPSCHITZ_DELTA * u[j];
        }
    }
    let mut data = Vec::with_capacity(5 * n * d);
    for t in [real, fake_a, fake_b, &interp, &displaced] {
        data.extend_from_slice(t.data());
    }
    CriticInputs { stacked: Tensor::matrix(5 * n, d, data), group_len: n, fake_a_weight }
}

/// Critic loss on a tape: Wasserstein terms plus the finite-difference
/// Lipschitz penalty `(|D(x + delta u) - D(x)| / delta - 1)^2` evaluated at
/// the interpolation points. Returns `(loss_node, wasserstein, penalty)`.
pub fn critic_loss_tape(
    tape: &mut Tape,
    disc: &Discriminator,
    bound: &BoundMlp,
    inputs: &CriticInputs,
    penalty_coef: f64,
) -> Result<(NodeId, f64, f64)> {
    let n = inputs.group_len;
    let stacked = tape.constant(&inputs.stacked);
    let scores = disc.net.forward_tape_node(tape, bound, stacked)?;
    let real = tape.slice_rows(scores, 0, n);
    let fake_a = tape.slice_rows(scores, n, n);
    let fake_b = tape.slice_rows(scores, 2 * n, n);
    let interp = tape.slice_rows(scores, 3 * n, n);
    let displaced = tape.slice_rows(scores, 4 * n, n);

    let m_real = tape.mean_all(real);
    let m_fa = tape.mean_all(fake_a);
    let m_fb = tape.mean_all(fake_b);
    let wa = tape.scale(m_fa, inputs.fake_a_weight);
    let wb = tape.scale(m_fb, 1.0 - inputs.fake_a_weight);
    let fake = tape.add(wa, wb);
    let neg_real = tape.scale(m_real, -1.0);
    let wasserstein = tape.add(fake, neg_real);

    let diff = tape.sub(displaced, interp);
    let mag = tape.abs(diff);
    let slope = tape.scale(mag, 1.0 / LIPSCHITZ_DELTA);
    let excess = tape.add_const(slope, -1.0);
    let sq = tape.square(excess);
    let penalty = tape.mean_all(sq);

    let scaled_penalty = tape.scale(penalty, penalty_coef);
    let loss = tape.add(wasserstein, scaled_penalty);
    Ok((loss, tape.value(wasserstein).item(), tape.value(penalty).item()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nice::zeroed;
    use crate::targets::Ring;
    use crate::training::buffer::BootstrapBuffer;
    use rand::SeedableRng;

    fn setup(seed: u64) -> (NiceModel, BootstrapBuffer, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = NiceModel::energy_arch(2, 2, 8, &mut rng);
        let buffer = BootstrapBuffer::init_fill(&model, &Ring, 128, 4, 1.0, seed).unwrap();
        (model, buffer, rng)
    }

    #[test]
    fn identity_model_rollout_is_identity() {
        let (model, _, mut rng) = setup(1);
        let model = zeroed(model);
        let start = normal_matrix(6, 2, &mut rng);
        for steps in [1, 3, 5] {
            let (x, _) = rollout(&model, &start, steps, &mut rng).unwrap();
            assert_eq!(x.data(), start.data());
        }
    }

    #[test]
    fn tape_rollout_matches_plain_rollout() {
        let (model, _, mut rng) = setup(2);
        let start = normal_matrix(4, 2, &mut rng);
        let mut rng_a = ChaCha8Rng::seed_from_u64(99);
        let (x_plain, v_plain) = rollout(&model, &start, 3, &mut rng_a).unwrap();
        let mut rng_b = ChaCha8Rng::seed_from_u64(99);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let start_node = tape.constant(&start);
        let nodes = rollout_tape(&mut tape, &model, &bound, start_node, 3, &mut rng_b).unwrap();
        assert_eq!(tape.value(nodes.x).data(), x_plain.data());
        assert_eq!(tape.value(nodes.v_final).data(), v_plain.data());
    }

    #[test]
    fn zero_critic_gives_zero_losses() {
        let (model, buffer, mut rng) = setup(3);
        let mut disc = Discriminator::new(2, 8, 2, true, &mut rng);
        for layer in &mut disc.net.layers {
            layer.weight = Tensor::zeros(layer.weight.shape().to_vec());
            layer.bias = Tensor::zeros(layer.bias.shape().to_vec());
        }
        let (d, g) = pairwise_losses(&disc, &buffer, &model, 16, 4, 2, 1.0, &mut rng).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(g, 0.0);
    }

    #[test]
    fn lambda_one_ignores_the_data_start_term() {
        let (model, buffer, mut rng) = setup(4);
        let disc = Discriminator::new(2, 8, 2, false, &mut rng);
        let batch = sample_mgan_batch(&model, &buffer, 16, 4, 2, 1.0, &mut rng).unwrap();
        let (d1, g1) = mgan_loss_values(&disc, &batch, 1.0).unwrap();
        // change fake_m arbitrarily: with lambda = 1 the losses cannot move
        let mut altered = MganBatch {
            real: batch.real.clone(),
            fake_b: batch.fake_b.clone(),
            fake_m: batch.fake_m.scale(3.7),
            b_steps: batch.b_steps,
            m_steps: batch.m_steps,
        };
        altered.fake_m.data_mut()[0] += 11.0;
        let (d2, g2) = mgan_loss_values(&disc, &altered, 1.0).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn loss_equals_hand_assembled_means_exactly() {
        let (model, buffer, mut rng) = setup(5);
        let disc = Discriminator::new(2, 8, 2, true, &mut rng);
        let batch = sample_pair_batch(&model, &buffer, 16, 4, 2, 1.0, &mut rng).unwrap();
        let (d_loss, g_loss) = pairwise_loss_values(&disc, &batch).unwrap();
        // independent assembly of the same arithmetic
        let score_mean = |t: &Tensor| {
            let s = disc.score(t).unwrap();
            s.data().iter().sum::<f64>() / s.data().len() as f64
        };
        let fake = 0.5 * score_mean(&batch.fake_xz1) + 0.5 * score_mean(&batch.fake_z23);
        let real = score_mean(&batch.real_pairs);
        assert_eq!(d_loss, fake - real);
        assert_eq!(g_loss, -fake);
    }

    #[test]
    fn pair_input_width_is_twice_the_state_dim() {
        let (model, buffer, mut rng) = setup(6);
        let batch = sample_pair_batch(&model, &buffer, 8, 4, 2, 1.0, &mut rng).unwrap();
        assert_eq!(batch.real_pairs.cols(), 2 * model.x_dim);
        assert_eq!(batch.fake_xz1.cols(), 2 * model.x_dim);
        assert_eq!(batch.fake_z23.cols(), 2 * model.x_dim);
    }

    #[test]
    fn prior_penalty_standard_normal_batch_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = normal_matrix(100_000, 3, &mut rng);
        let p = v_prior_penalty(&v).unwrap();
        assert!(p >= 0.0);
        assert!(p <= 1e-3, "penalty {p}");
    }

    #[test]
    fn prior_penalty_degenerate_batch_hits_the_floor() {
        let v = Tensor::zeros(vec![64, 2]);
        let p = v_prior_penalty(&v).unwrap();
        // mu = 0, var floored at 1e-6: per dim 0.5(1e-6 - 1 - ln 1e-6)
        let per_dim = 0.5 * (V_PRIOR_VAR_FLOOR - 1.0 - V_PRIOR_VAR_FLOOR.ln());
        assert!((p - 2.0 * per_dim).abs() < 1e-12);
        assert!(p.is_finite());
    }

    #[test]
    fn prior_penalty_closed_form_case() {
        // batch with mean 1 and variance 1 per dim: KL = 0.5 per dim
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut v = normal_matrix(n, 2, &mut rng);
        // force exact sample mean 1 and population variance 1 per column
        for d in 0..2 {
            let col: Vec<f64> = (0..n).map(|i| v.row(i)[d]).collect();
            let mu = mean(&col);
            let var = crate::util::variance_around(&col, mu);
            let s = var.sqrt();
            for i in 0..n {
                v.row_mut(i)[d] = (v.row(i)[d] - mu) / s + 1.0;
            }
        }
        let p = v_prior_penalty(&v).unwrap();
        assert!((p - 1.0).abs() < 1e-9, "penalty {p} should be 2 dims x 0.5");
    }

    #[test]
    fn prior_penalty_rejects_singleton_batch() {
        let v = Tensor::matrix(1, 2, vec![0.1, 0.2]);
        assert!(v_prior_penalty(&v).is_err());
    }
}
