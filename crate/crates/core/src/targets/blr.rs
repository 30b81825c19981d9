//! Bayesian logistic regression posteriors over standardized tabular datasets.

use std::path::Path;

use super::EnergyTarget;
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Which column of the raw file holds the class label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelColumn {
    Last,
    Index(usize),
}

/// Ingestion conventions for a dataset.
#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub name: String,
    pub label_column: LabelColumn,
}

impl DatasetSpec {
    pub fn new(name: &str, label_column: LabelColumn) -> Self {
        DatasetSpec { name: name.into(), label_column }
    }

    /// Conventions for the datasets used in the benchmarks. All three store
    /// the label in the last column; `german` and `heart` encode it as
    /// `{1, 2}`, `australian` as `{0, 1}` — the loader maps either to `{0, 1}`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "german" | "heart" | "australian" => Ok(DatasetSpec::new(name, LabelColumn::Last)),
            other => Err(Error::Config(format!("unknown dataset preset {other:?}"))),
        }
    }
}

/// Standardized design matrix (bias column appended) and binary labels.
#[derive(Clone, Debug)]
pub struct LogisticRegressionData {
    pub name: String,
    /// `[N, d]` with the final column all ones.
    pub covariates: Tensor,
    /// Values in `{0, 1}`, length `N`.
    pub labels: Vec<f64>,
}

impl LogisticRegressionData {
    pub fn rows(&self) -> usize {
        self.covariates.rows()
    }

    /// Covariate count, bias included.
    pub fn dim(&self) -> usize {
        self.covariates.cols()
    }
}

/// Load a numeric delimited file (comma or whitespace separated), standardize
/// every feature column to mean 0 / variance 1, append a bias column of ones
/// and map the two observed label values to `{0, 1}` (smaller value becomes 0).
///
/// A single all-non-numeric first line is treated as a header and skipped.
pub fn load_uci_csv(path: &Path, spec: &DatasetSpec) -> Result<LogisticRegressionData> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = if line.contains(',') {
            line.split(',').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        let parsed: std::result::Result<Vec<f64>, _> =
            cells.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(values) => {
                if let Some(w) = width {
                    if values.len() != w {
                        return Err(Error::Ingestion {
                            row: lineno + 1,
                            message: format!("expected {w} columns, found {}", values.len()),
                        });
                    }
                } else {
                    width = Some(values.len());
                }
                rows.push(values);
            }
            Err(_) => {
                let all_non_numeric = cells.iter().all(|c| c.parse::<f64>().is_err());
                if rows.is_empty() && width.is_none() && all_non_numeric {
                    continue; // header line
                }
                let bad = cells
                    .iter()
                    .position(|c| c.parse::<f64>().is_err())
                    .map(|i| cells[i])
                    .unwrap_or("");
                return Err(Error::Ingestion {
                    row: lineno + 1,
                    message: format!("non-numeric cell {bad:?}"),
                });
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Ingestion { row: 0, message: "no data rows".into() });
    }

    let ncols = width.unwrap();
    let label_idx = match spec.label_column {
        LabelColumn::Last => ncols - 1,
        LabelColumn::Index(i) => i,
    };
    if label_idx >= ncols {
        return Err(Error::Ingestion {
            row: 0,
            message: format!("label column {label_idx} out of range for {ncols} columns"),
        });
    }

    let mut label_values: Vec<f64> = rows.iter().map(|r| r[label_idx]).collect();
    let mut distinct = label_values.clone();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() != 2 {
        return Err(Error::Ingestion {
            row: 0,
            message: format!("labels must take exactly 2 values, found {}", distinct.len()),
        });
    }
    let hi = distinct[1];
    for l in label_values.iter_mut() {
        *l = if *l == hi { 1.0 } else { 0.0 };
    }

    let n = rows.len();
    let n_features = ncols - 1;
    let mut covariates = Tensor::zeros(vec![n, n_features + 1]);
    for (j_out, j_in) in (0..ncols).filter(|&j| j != label_idx).enumerate() {
        let col: Vec<f64> = rows.iter().map(|r| r[j_in]).collect();
        let mean = crate::util::mean(&col);
        let var = crate::util::variance_around(&col, mean);
        let std = if var > 1e-24 { var.sqrt() } else { 1.0 };
        for (i, &v) in col.iter().enumerate() {
            covariates.row_mut(i)[j_out] = (v - mean) / std;
        }
    }
    for i in 0..n {
        covariates.row_mut(i)[n_features] = 1.0;
    }

    Ok(LogisticRegressionData { name: spec.name.clone(), covariates, labels: label_values })
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Logistic function, stable on both tails.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Posterior energy for logistic regression with an isotropic Gaussian prior:
///
/// `U(w) = sum_n [softplus(w.x_n) - y_n (w.x_n)] + |w|^2 / (2 alpha)`
///
/// which is the negative Bernoulli log-likelihood in log-sigmoid form.
pub struct BlrPosterior {
    data: LogisticRegressionData,
    pub prior_variance: f64,
    name: String,
}

impl BlrPosterior {
    /// Default prior variance of 100 per component.
    pub fn new(data: LogisticRegressionData) -> Self {
        Self::with_prior_variance(data, 100.0)
    }

    pub fn with_prior_variance(data: LogisticRegressionData, prior_variance: f64) -> Self {
        let name = format!("blr-{}", data.name);
        BlrPosterior { data, prior_variance, name }
    }

    pub fn data(&self) -> &LogisticRegressionData {
        &self.data
    }

    fn check_dim(&self, got: usize) {
        assert_eq!(got, self.data.dim(), "weight dim {} vs {} covariates", got, self.data.dim());
    }
}

impl EnergyTarget for BlrPosterior {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn energy(&self, w: &[f64]) -> f64 {
        self.check_dim(w.len());
        let mut u = 0.0;
        for (i, &y) in self.data.labels.iter().enumerate() {
            let z: f64 = self.data.covariates.row(i).iter().zip(w).map(|(&x, &wi)| x * wi).sum();
            u += softplus(z) - y * z;
        }
        u + crate::util::sumsq(w) / (2.0 * self.prior_variance)
    }

    fn grad(&self, w: &[f64], out: &mut [f64]) {
        self.check_dim(w.len());
        out.fill(0.0);
        for (i, &y) in self.data.labels.iter().enumerate() {
            let row = self.data.covariates.row(i);
            let z: f64 = row.iter().zip(w.iter()).map(|(&x, &wi)| x * wi).sum();
            let c = sigmoid(z) - y;
            for (o, &x) in out.iter_mut().zip(row) {
                *o += c * x;
            }
        }
        for (o, &wi) in out.iter_mut().zip(w) {
            *o += wi / self.prior_variance;
        }
    }

    fn energy_batch(&self, xs: &Tensor) -> Vec<f64> {
        let logits = self.logits(xs);
        let (batch, n) = (xs.rows(), self.data.rows());
        let mut out = Vec::with_capacity(batch);
        for b in 0..batch {
            let mut u = 0.0;
            let zrow = &logits.data()[b * n..(b + 1) * n];
            for (z, &y) in zrow.iter().zip(&self.data.labels) {
                u += softplus(*z) - y * z;
            }
            u += crate::util::sumsq(xs.row(b)) / (2.0 * self.prior_variance);
            out.push(u);
        }
        out
    }

    fn grad_batch(&self, xs: &Tensor) -> Tensor {
        let mut logits = self.logits(xs);
        let (batch, n, d) = (xs.rows(), self.data.rows(), self.data.dim());
        // residuals sigma(z) - y, in place
        for b in 0..batch {
            let row = &mut logits.data_mut()[b * n..(b + 1) * n];
            for (z, &y) in row.iter_mut().zip(&self.data.labels) {
                *z = sigmoid(*z) - y;
            }
        }
        let mut out = Tensor::zeros(vec![batch, d]);
        gemm(
            false,
            false,
            batch,
            n,
            d,
            1.0,
            logits.data(),
            self.data.covariates.data(),
            0.0,
            out.data_mut(),
        );
        for b in 0..batch {
            let w = xs.row(b).to_vec();
            for (o, wi) in out.row_mut(b).iter_mut().zip(w) {
                *o += wi / self.prior_variance;
            }
        }
        out
    }
}

impl BlrPosterior {
    /// `[batch, N]` matrix of `w_b . x_n`.
    fn logits(&self, xs: &Tensor) -> Tensor {
        assert_eq!(xs.cols(), self.data.dim(), "weight batch dim mismatch");
        let (batch, d, n) = (xs.rows(), self.data.dim(), self.data.rows());
        let mut logits = Tensor::zeros(vec![batch, n]);
        gemm(
            false,
            true,
            batch,
            d,
            n,
            1.0,
            xs.data(),
            self.data.covariates.data(),
            0.0,
            logits.data_mut(),
        );
        logits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy_data() -> LogisticRegressionData {
        LogisticRegressionData {
            name: "toy".into(),
            covariates: Tensor::matrix(
                4,
                3,
                vec![0.5, -1.0, 1.0, -0.5, 1.0, 1.0, 1.5, 0.3, 1.0, -1.5, -0.3, 1.0],
            ),
            labels: vec![1.0, 0.0, 1.0, 0.0],
        }
    }

    #[test]
    fn zero_weights_give_n_log_two() {
        let t = BlrPosterior::new(toy_data());
        assert_abs_diff_eq!(t.energy(&[0.0; 3]), 4.0 * 2.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn duplicating_rows_doubles_the_likelihood_term() {
        let data = toy_data();
        let mut doubled_rows = data.covariates.data().to_vec();
        doubled_rows.extend_from_slice(data.covariates.data());
        let mut labels = data.labels.clone();
        labels.extend_from_slice(&data.labels);
        let doubled = LogisticRegressionData {
            name: "toy2".into(),
            covariates: Tensor::matrix(8, 3, doubled_rows),
            labels,
        };
        let single = BlrPosterior::new(data);
        let twice = BlrPosterior::new(doubled);
        let w = [0.3, -0.8, 0.12];
        let prior = crate::util::sumsq(&w) / 200.0;
        let lik1 = single.energy(&w) - prior;
        let lik2 = twice.energy(&w) - prior;
        assert_abs_diff_eq!(lik2, 2.0 * lik1, epsilon = 1e-10);
    }

    #[test]
    fn batch_paths_match_scalar_paths() {
        let t = BlrPosterior::new(toy_data());
        let ws = Tensor::matrix(2, 3, vec![0.3, -0.8, 0.12, -1.1, 0.05, 0.7]);
        let us = t.energy_batch(&ws);
        let gs = t.grad_batch(&ws);
        for b in 0..2 {
            assert_abs_diff_eq!(us[b], t.energy(ws.row(b)), epsilon = 1e-10);
            let mut g = [0.0; 3];
            t.grad(ws.row(b), &mut g);
            for (a, e) in gs.row(b).iter().zip(g) {
                assert_abs_diff_eq!(*a, e, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn loads_toy_csv_with_label_mapping_and_standardization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        std::fs::write(&path, "1.0,10.0,1\n3.0,30.0,2\n").unwrap();
        let spec = DatasetSpec::new("toy", LabelColumn::Last);
        let data = load_uci_csv(&path, &spec).unwrap();
        assert_eq!(data.rows(), 2);
        assert_eq!(data.dim(), 3); // 2 features + bias
        assert_eq!(data.labels, vec![0.0, 1.0]);
        for j in 0..2 {
            let col_mean = (data.covariates.row(0)[j] + data.covariates.row(1)[j]) / 2.0;
            assert_abs_diff_eq!(col_mean, 0.0, epsilon = 1e-12);
        }
        assert_eq!(data.covariates.row(0)[2], 1.0);
        assert_eq!(data.covariates.row(1)[2], 1.0);
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1.0,2.0,1\n1.0,oops,2\n").unwrap();
        let err = load_uci_csv(&path, &DatasetSpec::new("bad", LabelColumn::Last)).unwrap_err();
        assert!(err.to_string().contains("row 2"), "got: {err}");
    }

    #[test]
    fn empty_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        assert!(load_uci_csv(&path, &DatasetSpec::new("e", LabelColumn::Last)).is_err());
    }
}
