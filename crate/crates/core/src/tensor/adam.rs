//! Adam optimizer with bias correction.

use super::Tensor;
use crate::error::{Error, Result};

/// Moment accumulators plus hyperparameters for one parameter group.
///
/// Accumulator shapes mirror the parameter shapes exactly; `step` checks this
/// on every call.
#[derive(Clone, Debug)]
pub struct AdamState {
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    names: Vec<String>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &[&Tensor], names: Vec<String>, learning_rate: f64) -> Self {
        Self::with_betas(params, names, learning_rate, 0.9, 0.999)
    }

    pub fn with_betas(
        params: &[&Tensor],
        names: Vec<String>,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
    ) -> Self {
        assert_eq!(params.len(), names.len(), "one name per parameter");
        AdamState {
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            names,
            step_count: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon: 1e-8,
        }
    }

    /// One Adam update over all parameters in the group.
    ///
    /// A non-finite gradient aborts with a diagnostic naming the parameter.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        assert_eq!(params.len(), self.first_moment.len(), "parameter group size changed");
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        for (i, g) in grads.iter().enumerate() {
            assert_eq!(
                g.shape(),
                params[i].shape(),
                "gradient shape mismatch for {}",
                self.names[i]
            );
            if !g.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient for parameter {:?} at step {}",
                    self.names[i],
                    self.step_count + 1
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            let md = m.data_mut();
            let vd = v.data_mut();
            let pd = param.data_mut();
            for ((p, &g), (mi, vi)) in
                pd.iter_mut().zip(grad.data()).zip(md.iter_mut().zip(vd.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
