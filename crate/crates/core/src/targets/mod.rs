//! Target distributions exposed as energy functions `U(x)` with gradients,
//! where `p_d(x) ~ exp(-U(x))`.

mod blr;

pub use blr::{load_uci_csv, BlrPosterior, DatasetSpec, LabelColumn, LogisticRegressionData};

use crate::tensor::Tensor;

/// Scalar statistic of a sample point used for mixing diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum SummaryStatistic {
    DistanceToOrigin,
}

impl SummaryStatistic {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            SummaryStatistic::DistanceToOrigin => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SummaryStatistic::DistanceToOrigin => "distance_to_origin",
        }
    }
}

/// Box proposal for rejection sampling: uniform over `[-halfwidth, halfwidth]^dim`
/// with `density_bound >= max exp(-U)` on that box.
#[derive(Clone, Copy, Debug)]
pub struct RejectionEnvelope {
    pub halfwidth: f64,
    pub density_bound: f64,
}

/// A named target with energy, gradient and dimensionality.
pub trait EnergyTarget: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;

    /// `U(x)` in nats; finite for finite input.
    fn energy(&self, x: &[f64]) -> f64;

    /// `dU/dx` written into `out`.
    fn grad(&self, x: &[f64], out: &mut [f64]);

    /// Energy of every row of a `[batch, dim]` tensor.
    fn energy_batch(&self, xs: &Tensor) -> Vec<f64> {
        (0..xs.rows()).map(|i| self.energy(xs.row(i))).collect()
    }

    /// Row-wise gradient of a `[batch, dim]` tensor.
    fn grad_batch(&self, xs: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(vec![xs.rows(), xs.cols()]);
        for i in 0..xs.rows() {
            self.grad(xs.row(i), out.row_mut(i));
        }
        out
    }

    /// Statistic used in place of raw coordinates for ESS/R-hat, when one is
    /// conventional for this target.
    fn summary_statistic(&self) -> Option<SummaryStatistic> {
        None
    }

    /// Rejection-sampling envelope, available for the analytic 2D targets.
    fn rejection_envelope(&self) -> Option<RejectionEnvelope> {
        None
    }
}

/// Ring-shaped density: `U(x) = (sqrt(x1^2 + x2^2) - 2)^2 / 0.32`.
pub struct Ring;

impl EnergyTarget for Ring {
    fn name(&self) -> &str {
        "ring"
    }

    fn dim(&self) -> usize {
        2
    }

    fn energy(&self, x: &[f64]) -> f64 {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        (r - 2.0) * (r - 2.0) / 0.32
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        if r == 0.0 {
            out[0] = 0.0;
            out[1] = 0.0;
            return;
        }
        let c = 2.0 * (r - 2.0) / (0.32 * r);
        out[0] = c * x[0];
        out[1] = c * x[1];
    }

    fn rejection_envelope(&self) -> Option<RejectionEnvelope> {
        Some(RejectionEnvelope { halfwidth: 4.5, density_bound: 1.0 })
    }
}

/// Mixture of axis-aligned 2D Gaussians.
///
/// The default energy is the mixture density through log-sum-exp,
/// `U = -log((1/K) sum_i exp f_i)` with `f_i` the component log-pdf. With
/// `literal_sum` set, `U = -sum_i f_i` instead (the product-density reading;
/// additive constants are dropped as they never affect sampling).
pub struct MixtureOfGaussians {
    name: String,
    means: Vec<[f64; 2]>,
    sigmas: Vec<[f64; 2]>,
    literal_sum: bool,
    envelope: RejectionEnvelope,
}

/// Two components at `(+-5, 0)`, sigma 0.5.
pub fn mog2(literal_sum: bool) -> MixtureOfGaussians {
    MixtureOfGaussians {
        name: "mog2".into(),
        means: vec![[5.0, 0.0], [-5.0, 0.0]],
        sigmas: vec![[0.5, 0.5]; 2],
        literal_sum,
        envelope: RejectionEnvelope { halfwidth: 7.0, density_bound: 0.35 },
    }
}

/// Six components evenly spaced on a circle of radius 4, sigma 0.5.
pub fn mog6(literal_sum: bool) -> MixtureOfGaussians {
    let means = (1..=6)
        .map(|i| {
            let a = i as f64 * std::f64::consts::PI / 3.0;
            [4.0 * a.sin(), 4.0 * a.cos()]
        })
        .collect();
    MixtureOfGaussians {
        name: "mog6".into(),
        means,
        sigmas: vec![[0.5, 0.5]; 6],
        literal_sum,
        envelope: RejectionEnvelope { halfwidth: 6.5, density_bound: 0.12 },
    }
}

impl MixtureOfGaussians {
    /// Component log-pdfs at `x`.
    fn log_pdfs(&self, x: &[f64]) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.sigmas)
            .map(|(mu, sg)| {
                let mut f = 0.0;
                for d in 0..2 {
                    let z = (x[d] - mu[d]) / sg[d];
                    f -= 0.5 * z * z + (sg[d] * (2.0 * std::f64::consts::PI).sqrt()).ln();
                }
                f
            })
            .collect()
    }
}

impl EnergyTarget for MixtureOfGaussians {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        2
    }

    fn energy(&self, x: &[f64]) -> f64 {
        let fs = self.log_pdfs(x);
        if self.literal_sum {
            return -fs.iter().sum::<f64>();
        }
        let k = fs.len() as f64;
        let fmax = fs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = fmax + fs.iter().map(|f| (f - fmax).exp()).sum::<f64>().ln();
        -(lse - k.ln())
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        let fs = self.log_pdfs(x);
        out.fill(0.0);
        if self.literal_sum {
            for (mu, sg) in self.means.iter().zip(&self.sigmas) {
                for d in 0..2 {
                    out[d] += (x[d] - mu[d]) / (sg[d] * sg[d]);
                }
            }
            return;
        }
        // mixture: dU = sum_i w_i (x - mu_i) / sigma_i^2 with w = softmax(f)
        let fmax = fs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = fs.iter().map(|f| (f - fmax).exp()).collect();
        let total: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= total;
        }
        for ((mu, sg), w) in self.means.iter().zip(&self.sigmas).zip(&weights) {
            for d in 0..2 {
                out[d] += w * (x[d] - mu[d]) / (sg[d] * sg[d]);
            }
        }
    }

    fn rejection_envelope(&self) -> Option<RejectionEnvelope> {
        Some(self.envelope)
    }
}

/// Five concentric rings: `U(x) = min_i (sqrt(x1^2+x2^2) - i)^2 / 0.04`,
/// `i = 1..5`. On tie radii the gradient follows the lower-index branch.
pub struct Ring5;

impl Ring5 {
    fn argmin_branch(r: f64) -> (usize, f64) {
        let mut best = (1usize, (r - 1.0) * (r - 1.0) / 0.04);
        for i in 2..=5 {
            let u = (r - i as f64) * (r - i as f64) / 0.04;
            if u < best.1 {
                best = (i, u);
            }
        }
        best
    }
}

impl EnergyTarget for Ring5 {
    fn name(&self) -> &str {
        "ring5"
    }

    fn dim(&self) -> usize {
        2
    }

    fn energy(&self, x: &[f64]) -> f64 {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        Ring5::argmin_branch(r).1
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        if r == 0.0 {
            out[0] = 0.0;
            out[1] = 0.0;
            return;
        }
        let (i, _) = Ring5::argmin_branch(r);
        let c = 2.0 * (r - i as f64) / (0.04 * r);
        out[0] = c * x[0];
        out[1] = c * x[1];
    }

    fn summary_statistic(&self) -> Option<SummaryStatistic> {
        Some(SummaryStatistic::DistanceToOrigin)
    }

    fn rejection_envelope(&self) -> Option<RejectionEnvelope> {
        Some(RejectionEnvelope { halfwidth: 6.0, density_bound: 1.0 })
    }
}

/// Draw `n` exact samples from `p_d ~ exp(-U)` by rejection against the
/// target's box envelope. Errors for targets without one.
pub fn rejection_sample(
    target: &dyn EnergyTarget,
    n: usize,
    rng: &mut impl rand::Rng,
) -> crate::Result<Tensor> {
    let env = target.rejection_envelope().ok_or_else(|| {
        crate::Error::Config(format!("target {} has no rejection envelope", target.name()))
    })?;
    let dim = target.dim();
    let mut out = Vec::with_capacity(n * dim);
    let mut point = vec![0.0; dim];
    let mut accepted = 0;
    let mut proposals = 0usize;
    let cap = n.saturating_mul(100_000).max(1_000_000);
    while accepted < n {
        proposals += 1;
        if proposals > cap {
            return Err(crate::Error::Config(format!(
                "rejection sampler for {} exceeded {cap} proposals; envelope too loose",
                target.name()
            )));
        }
        for p in point.iter_mut() {
            *p = rng.gen_range(-env.halfwidth..env.halfwidth);
        }
        let density = (-target.energy(&point)).exp();
        if rng.gen_range(0.0..env.density_bound) < density {
            out.extend_from_slice(&point);
            accepted += 1;
        }
    }
    Ok(Tensor::matrix(n, dim, out))
}

/// Look up one of the analytic 2D targets by name.
pub fn analytic_target(name: &str, literal_mixture: bool) -> crate::Result<Box<dyn EnergyTarget>> {
    match name {
        "ring" => Ok(Box::new(Ring)),
        "mog2" => Ok(Box::new(mog2(literal_mixture))),
        "mog6" => Ok(Box::new(mog6(literal_mixture))),
        "ring5" => Ok(Box::new(Ring5)),
        other => Err(crate::Error::Config(format!("unknown target {other:?}"))),
    }
}
