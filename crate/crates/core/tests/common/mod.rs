//! Helpers shared by the integration suites.
#![allow(dead_code)]

use anicemc::tensor::Tensor;

/// Central finite difference of a scalar function of one flat parameter
/// vector: `df/dx_i ~ (f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest relative error between two gradient vectors, with an absolute
/// floor so near-zero entries compare sanely.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Determinant of a small dense matrix by Gaussian elimination with partial
/// pivoting.
pub fn determinant(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        if m[pivot][col].abs() < 1e-300 {
            return 0.0;
        }
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        det *= m[col][col];
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    det
}

/// Finite-difference Jacobian of a map `R^n -> R^n` given as a closure over
/// flat slices.
pub fn numeric_jacobian(
    x: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> Vec<f64>,
) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut jac = vec![vec![0.0; n]; n];
    let mut probe = x.to_vec();
    for j in 0..n {
        probe[j] = x[j] + h;
        let up = f(&probe);
        probe[j] = x[j] - h;
        let down = f(&probe);
        probe[j] = x[j];
        for i in 0..n {
            jac[i][j] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac
}

/// AR(1) series `x_t = phi x_{t-1} + sqrt(1 - phi^2) z_t` with unit
/// stationary variance.
pub fn ar1_series(phi: f64, n: usize, seed: u64) -> Vec<f64> {
    use rand::SeedableRng;
    use rand_distr::Distribution;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::StandardNormal;
    let innov = (1.0 - phi * phi).sqrt();
    let mut x = 0.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = normal.sample(&mut rng);
        x = phi * x + innov * z;
        out.push(x);
    }
    out
}

/// Mean and population variance of a slice.
pub fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Row of a `[batch, dim]` tensor as a Vec.
pub fn row_vec(t: &Tensor, i: usize) -> Vec<f64> {
    t.row(i).to_vec()
}

/// Synthetic logistic-regression data shaped like the german credit file:
/// 1000 rows, 24 numeric feature columns, labels in `{1, 2}` in the last
/// column, whitespace separated. Features are deliberately correlated
/// (mixtures of shared latent factors), as real tabular data is — column
/// standardization cannot undo that, so the posterior stays anisotropic.
pub fn write_german_like(path: &std::path::Path, seed: u64) {
    use rand::{Rng, SeedableRng};
    use rand_distr::Distribution;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (n, p, factors) = (1000, 24, 6);
    let normal = rand_distr::StandardNormal;
    // loading matrix: each feature leans on one or two latent factors
    let loadings: Vec<Vec<f64>> = (0..p)
        .map(|_| {
            let mut row = vec![0.0; factors];
            let f1 = rng.gen_range(0..factors);
            row[f1] = rng.gen_range(0.6..1.4);
            if rng.gen_bool(0.5) {
                let f2 = rng.gen_range(0..factors);
                row[f2] += rng.gen_range(-0.8..0.8);
            }
            row
        })
        .collect();
    let noise_scale: Vec<f64> = (0..p).map(|_| rng.gen_range(0.1..0.8)).collect();
    let true_w: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut text = String::new();
    for _ in 0..n {
        let z: Vec<f64> = (0..factors).map(|_| normal.sample(&mut rng)).collect();
        let x: Vec<f64> = (0..p)
            .map(|j| {
                let shared: f64 = loadings[j].iter().zip(&z).map(|(l, zf)| l * zf).sum();
                let own: f64 = normal.sample(&mut rng);
                2.0 * (shared + noise_scale[j] * own) + 1.0
            })
            .collect();
        let eta: f64 =
            x.iter().zip(&true_w).map(|(a, b)| (a - 1.0) / 2.0 * b).sum::<f64>() * 0.4 - 0.3;
        let pr = 1.0 / (1.0 + (-eta).exp());
        let label = if rng.gen_range(0.0..1.0) < pr { 2 } else { 1 };
        for v in &x {
            text.push_str(&format!("{v:.6} "));
        }
        text.push_str(&format!("{label}\n"));
    }
    std::fs::write(path, text).unwrap();
}
