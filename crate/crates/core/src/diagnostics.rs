//! Chain-quality metrics: effective sample size from truncated
//! autocorrelations against reference moments, Gelman-Rubin R-hat,
//! error-vs-length curves and density rasters.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::samplers::{run_chain, ChainDump, RunConfig, TransitionKernel};
use crate::targets::{rejection_sample, EnergyTarget, SummaryStatistic};
use crate::util::{mean, variance_around};

/// Moments of the target statistic obtained from an independent sampler.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RefMoments {
    pub mean: f64,
    pub var: f64,
}

/// Lag-`s` autocorrelation estimate using externally supplied reference
/// moments:
///
/// `rho_s = 1 / (var * (N - s)) * sum_{n=s+1}^{N} (x_n - mu)(x_{n-s} - mu)`
pub fn autocorrelation(series: &[f64], reference: &RefMoments, lag: usize) -> Result<f64> {
    let n = series.len();
    if lag >= n {
        return Err(Error::Usage(format!("lag {lag} out of range for {n} samples")));
    }
    if !(reference.var > 0.0) {
        return Err(Error::Usage(format!("reference variance must be > 0, got {}", reference.var)));
    }
    let mu = reference.mean;
    let mut acc = 0.0;
    for i in lag..n {
        acc += (series[i] - mu) * (series[i - lag] - mu);
    }
    Ok(acc / (reference.var * (n - lag) as f64))
}

/// Cutoff below which the autocorrelation sum is truncated.
pub const AUTOCORR_CUTOFF: f64 = 0.05;

/// Effective sample size of one series:
///
/// `ESS = N / (1 + 2 sum_{s=1}^{S-1} (1 - s/N) rho_s)`
///
/// where `S` is the first lag whose autocorrelation falls below 0.05
/// (the sum is empty — ESS = N — when that happens at lag 1).
pub fn ess(series: &[f64], reference: &RefMoments) -> Result<f64> {
    let n = series.len();
    if n < 10 {
        return Err(Error::Usage(format!("need at least 10 samples for ESS, got {n}")));
    }
    let mut acc = 0.0;
    for s in 1..n {
        let rho = autocorrelation(series, reference, s)?;
        if rho < AUTOCORR_CUTOFF {
            break;
        }
        acc += (1.0 - s as f64 / n as f64) * rho;
    }
    Ok(n as f64 / (1.0 + 2.0 * acc))
}

/// Aggregate throughput: per-chain ESS times the batch width over wall time.
pub fn ess_per_second(min_ess: f64, n_chains: usize, wall_time_seconds: f64) -> Result<f64> {
    if !(wall_time_seconds > 0.0) {
        return Err(Error::Usage("wall time must be positive".into()));
    }
    Ok(min_ess * n_chains as f64 / wall_time_seconds)
}

/// Per-dimension ESS for a dump, averaged over chains, plus the reported
/// scalar (`min_ess`).
#[derive(Clone, Debug, Serialize)]
pub struct EssReport {
    /// Mean over chains of per-chain ESS, one entry per dimension.
    pub per_dim: Vec<f64>,
    /// ESS of the summary statistic, when the target defines one.
    pub summary: Option<f64>,
    /// The reported scalar: the summary-statistic ESS when present,
    /// otherwise the minimum across dimensions.
    pub min_ess: f64,
    pub statistic: String,
    pub n_chains: usize,
    pub n_steps: usize,
    pub ess_per_second: f64,
    pub reference: String,
}

/// Compute an [`EssReport`] for a dump. `refs` holds one reference moment
/// pair per dimension; `summary` supplies the statistic and its reference
/// when the target defines one (its ESS then becomes the reported scalar).
pub fn ess_report(
    dump: &ChainDump,
    refs: &[RefMoments],
    summary: Option<(SummaryStatistic, RefMoments)>,
    reference_source: &str,
) -> Result<EssReport> {
    let dim = dump.meta.dim;
    if refs.len() != dim {
        return Err(Error::Usage(format!("{} reference moments for dim {dim}", refs.len())));
    }
    let chains: Vec<usize> = (0..dump.meta.n_chains).collect();
    let mut per_dim = Vec::with_capacity(dim);
    for d in 0..dim {
        let per_chain: Vec<f64> = chains
            .par_iter()
            .map(|&c| ess(&dump.dim_series(c, d), &refs[d]))
            .collect::<Result<Vec<f64>>>()?;
        per_dim.push(mean(&per_chain));
    }
    let summary_ess = match &summary {
        Some((stat, sref)) => {
            let per_chain: Vec<f64> = chains
                .par_iter()
                .map(|&c| ess(&dump.stat_series(c, |x| stat.eval(x)), sref))
                .collect::<Result<Vec<f64>>>()?;
            Some(mean(&per_chain))
        }
        None => None,
    };
    let min_dim = per_dim.iter().cloned().fold(f64::INFINITY, f64::min);
    let (min_ess, statistic) = match (&summary, summary_ess) {
        (Some((stat, _)), Some(se)) => (se, stat.name().to_string()),
        _ => (min_dim, "min_dimension".to_string()),
    };
    let ess_per_second = ess_per_second(min_ess, dump.meta.n_chains, dump.meta.wall_time_seconds)?;
    Ok(EssReport {
        per_dim,
        summary: summary_ess,
        min_ess,
        statistic,
        n_chains: dump.meta.n_chains,
        n_steps: dump.meta.n_steps,
        ess_per_second,
        reference: reference_source.to_string(),
    })
}

/// Gelman-Rubin potential scale reduction factor.
#[derive(Clone, Debug, Serialize)]
pub struct RhatReport {
    pub statistic: String,
    pub per_chain_mean: Vec<f64>,
    pub per_chain_var: Vec<f64>,
    pub rhat: f64,
    /// Set when the within-chain variance vanished.
    pub degenerate: bool,
}

/// Classic R-hat from between/within-chain variances over
/// `chain_statistics[chain][step]`.
pub fn rhat(chain_statistics: &[Vec<f64>], statistic: &str) -> Result<RhatReport> {
    let m = chain_statistics.len();
    if m < 2 {
        return Err(Error::Usage("R-hat needs at least 2 chains".into()));
    }
    let n = chain_statistics[0].len();
    if n < 10 {
        return Err(Error::Usage("R-hat needs at least 10 steps".into()));
    }
    if chain_statistics.iter().any(|c| c.len() != n) {
        return Err(Error::Usage("chains must have equal length".into()));
    }
    let per_chain_mean: Vec<f64> = chain_statistics.iter().map(|c| mean(c)).collect();
    let per_chain_var: Vec<f64> = chain_statistics
        .iter()
        .zip(&per_chain_mean)
        .map(|(c, &mu)| c.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / (n as f64 - 1.0))
        .collect();
    let grand = mean(&per_chain_mean);
    let b = n as f64 / (m as f64 - 1.0)
        * per_chain_mean.iter().map(|&mu| (mu - grand) * (mu - grand)).sum::<f64>();
    let w = mean(&per_chain_var);
    if !(w > 0.0) {
        return Ok(RhatReport {
            statistic: statistic.to_string(),
            per_chain_mean,
            per_chain_var,
            rhat: f64::INFINITY,
            degenerate: true,
        });
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    Ok(RhatReport {
        statistic: statistic.to_string(),
        per_chain_mean,
        per_chain_var,
        rhat: (var_plus / w).sqrt(),
        degenerate: false,
    })
}

/// One point of an error-vs-length curve.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ErrorPoint {
    pub length: usize,
    /// MAE of the running mean estimate against the true mean.
    pub mae_mean: f64,
    /// MAE of the running standard-deviation estimate against the true one.
    pub mae_std: f64,
}

/// Mean absolute error of running estimates of `E[stat]` and `Std[stat]`
/// versus supplied ground truth, at every prefix length, averaged over chains.
pub fn error_curve(
    dump: &ChainDump,
    stat: SummaryStatistic,
    true_mean: f64,
    true_std: f64,
) -> Vec<ErrorPoint> {
    let n = dump.meta.n_steps;
    let m = dump.meta.n_chains;
    let mut mae_mean = vec![0.0; n];
    let mut mae_std = vec![0.0; n];
    for c in 0..m {
        let series = dump.stat_series(c, |x| stat.eval(x));
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for (t, &x) in series.iter().enumerate() {
            sum += x;
            sumsq += x * x;
            let k = (t + 1) as f64;
            let est_mean = sum / k;
            let est_var = (sumsq / k - est_mean * est_mean).max(0.0);
            mae_mean[t] += (est_mean - true_mean).abs();
            mae_std[t] += (est_var.sqrt() - true_std).abs();
        }
    }
    (0..n)
        .map(|t| ErrorPoint {
            length: t + 1,
            mae_mean: mae_mean[t] / m as f64,
            mae_std: mae_std[t] / m as f64,
        })
        .collect()
}

/// Reference moments per dimension (and for the summary statistic, when the
/// target defines one) from a rejection sample of `n` draws.
pub fn reference_moments_2d(
    target: &dyn EnergyTarget,
    n: usize,
    seed: u64,
) -> Result<(Vec<RefMoments>, Option<RefMoments>)> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let sample = rejection_sample(target, n, &mut rng)?;
    let dim = target.dim();
    let mut per_dim = Vec::with_capacity(dim);
    for d in 0..dim {
        let col: Vec<f64> = (0..n).map(|i| sample.row(i)[d]).collect();
        let mu = mean(&col);
        per_dim.push(RefMoments { mean: mu, var: variance_around(&col, mu) });
    }
    let summary = target.summary_statistic().map(|stat| {
        let col: Vec<f64> = (0..n).map(|i| stat.eval(sample.row(i))).collect();
        let mu = mean(&col);
        RefMoments { mean: mu, var: variance_around(&col, mu) }
    });
    Ok((per_dim, summary))
}

/// Reference moments from a long well-tuned HMC run, pooling every chain's
/// post-burn-in samples per dimension. Used for targets with no tractable
/// independent sampler (the logistic regression posteriors).
pub fn reference_moments_hmc(
    target: &dyn EnergyTarget,
    step_size: f64,
    leapfrog_steps: usize,
    n_chains: usize,
    burn_in: usize,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<RefMoments>> {
    let kernel = TransitionKernel::Hmc { step_size, leapfrog_steps };
    let dump = run_chain(&kernel, target, &RunConfig::new(n_chains, burn_in, n_steps, seed))?;
    let dim = dump.meta.dim;
    let total = dump.meta.n_chains * dump.meta.n_steps;
    let mut per_dim = Vec::with_capacity(dim);
    for d in 0..dim {
        let col: Vec<f64> = (0..total)
            .map(|i| dump.samples[i * dim + d])
            .collect();
        let mu = mean(&col);
        per_dim.push(RefMoments { mean: mu, var: variance_around(&col, mu) });
    }
    Ok(per_dim)
}

/// 2D histogram of all samples on a `grid x grid` raster over
/// `[-halfwidth, halfwidth]^2`. Out-of-range samples clamp to edge bins, so
/// the counts always sum to the sample count.
pub fn density_raster(dump: &ChainDump, grid: usize, halfwidth: f64) -> Result<Vec<u64>> {
    if dump.meta.dim != 2 {
        return Err(Error::Usage(format!(
            "density raster needs a 2-d dump, got dim {}",
            dump.meta.dim
        )));
    }
    let mut counts = vec![0u64; grid * grid];
    let to_bin = |v: f64| -> usize {
        let t = (v + halfwidth) / (2.0 * halfwidth);
        ((t * grid as f64).floor() as isize).clamp(0, grid as isize - 1) as usize
    };
    for c in 0..dump.meta.n_chains {
        for t in 0..dump.meta.n_steps {
            let p = dump.sample(c, t);
            counts[to_bin(p[1]) * grid + to_bin(p[0])] += 1;
        }
    }
    Ok(counts)
}
