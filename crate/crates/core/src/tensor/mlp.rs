//! Small fully connected networks used for coupling offsets and critics.

use rand::Rng;

use super::{BoundMlp, NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// Negative-side slope used wherever a leaky rectifier appears.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    LeakyRelu,
    Tanh,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::LeakyRelu => "lrelu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "linear" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            "lrelu" => Ok(Activation::LeakyRelu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Format(format!("unknown activation tag {other:?}"))),
        }
    }
}

/// One affine layer: `y = act(x W + b)` with `W` stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

/// A stack of [`Layer`]s with chained dimensions.
#[derive(Clone, Debug)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// Build a network with the given layer sizes, hidden activation on all
    /// but the last layer and `out_act` on the last. Weights are drawn from
    /// `uniform(+-sqrt(6/(fan_in+fan_out)))`, biases start at zero.
    pub fn new<R: Rng>(
        dims: &[usize],
        hidden_act: Activation,
        out_act: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            let act = if i + 1 == dims.len() - 1 { out_act } else { hidden_act };
            layers.push(Layer {
                weight: Tensor::matrix(fan_in, fan_out, data),
                bias: Tensor::zeros(vec![fan_out]),
                activation: act,
            });
        }
        MlpParams { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.cols()
    }

    fn check_chain(&self) -> Result<()> {
        for w in self.layers.windows(2) {
            if w[0].weight.cols() != w[1].weight.rows() {
                return Err(Error::Shape(format!(
                    "layer dims do not chain: {} -> {}",
                    w[0].weight.cols(),
                    w[1].weight.rows()
                )));
            }
        }
        Ok(())
    }

    /// Plain forward pass for a `[batch, in]` input, no tape involved.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_chain()?;
        if input.rank() != 2 || input.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "mlp expects [batch, {}], got {:?}",
                self.input_dim(),
                input.shape()
            )));
        }
        let mut h = input.clone();
        for layer in &self.layers {
            let mut z = h.matmul(&layer.weight);
            let (rows, cols) = (z.rows(), z.cols());
            for i in 0..rows {
                let r = z.row_mut(i);
                for j in 0..cols {
                    r[j] = layer.activation.apply(r[j] + layer.bias.data()[j]);
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Register every weight and bias on `tape` as trainable parameters with
    /// keys `first_key, first_key+1, ...` in layer order.
    pub fn bind(&self, tape: &mut Tape, first_key: usize) -> BoundMlp {
        let mut key = first_key;
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let w = tape.param(key, &layer.weight);
            let b = tape.param(key + 1, &layer.bias);
            key += 2;
            layers.push((w, b));
        }
        BoundMlp { layers }
    }

    /// Register parameters as constants (no gradients collected).
    pub fn bind_const(&self, tape: &mut Tape) -> BoundMlp {
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let w = tape.constant(&layer.weight);
            let b = tape.constant(&layer.bias);
            layers.push((w, b));
        }
        BoundMlp { layers }
    }

    /// Recorded forward pass through bound parameters.
    pub fn forward_tape(&self, tape: &mut Tape, bound: &BoundMlp, input: NodeId) -> Result<Tensor> {
        self.forward_tape_node(tape, bound, input).map(|id| tape.value(id).clone())
    }

    /// Recorded forward pass, returning the output node.
    pub fn forward_tape_node(
        &self,
        tape: &mut Tape,
        bound: &BoundMlp,
        input: NodeId,
    ) -> Result<NodeId> {
        self.check_chain()?;
        let in_cols = tape.value(input).cols();
        if in_cols != self.input_dim() {
            return Err(Error::Shape(format!(
                "mlp expects [batch, {}], got {} columns",
                self.input_dim(),
                in_cols
            )));
        }
        let mut h = input;
        for (layer, &(w, b)) in self.layers.iter().zip(&bound.layers) {
            let z = tape.matmul(h, w);
            let z = tape.add_bias(z, b);
            h = match layer.activation {
                Activation::Linear => z,
                Activation::Relu => tape.relu(z),
                Activation::LeakyRelu => tape.leaky_relu(z, LEAKY_SLOPE),
                Activation::Tanh => tape.tanh(z),
            };
        }
        Ok(h)
    }

    /// Flat views of all parameters, layer order, weight before bias.
    pub fn param_refs(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn param_refs_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.len() * 2
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut names = Vec::with_capacity(self.param_count());
        for (i, _) in self.layers.iter().enumerate() {
            names.push(format!("{prefix}.layer{i}.weight"));
            names.push(format!("{prefix}.layer{i}.bias"));
        }
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_layer(w: Vec<Vec<f64>>, b: Vec<f64>, act: Activation) -> MlpParams {
        let rows = w.len();
        let cols = w[0].len();
        let data = w.into_iter().flatten().collect();
        MlpParams {
            layers: vec![Layer {
                weight: Tensor::matrix(rows, cols, data),
                bias: Tensor::vector(b),
                activation: act,
            }],
        }
    }

    #[test]
    fn zero_network_maps_to_zero() {
        let net = single_layer(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![0.0, 0.0], Activation::Linear);
        let x = Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 4.0, -1.0, 9.0]);
        let y = net.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_network_is_identity() {
        let net = single_layer(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0], Activation::Linear);
        let x = Tensor::matrix(2, 2, vec![3.0, -1.5, 0.25, 8.0]);
        let y = net.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn affine_relu_hand_case() {
        // W = [[2]], b = [1], relu: -3 -> 0 and 3 -> 7
        let net = single_layer(vec![vec![2.0]], vec![1.0], Activation::Relu);
        let y = net.forward(&Tensor::matrix(2, 1, vec![-3.0, 3.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 7.0]);
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = MlpParams::new(&[3, 8, 2], Activation::LeakyRelu, Activation::Linear, &mut rng);
        let x = Tensor::matrix(4, 3, (0..12).map(|i| (i as f64) * 0.37 - 1.8).collect());
        let plain = net.forward(&x).unwrap();
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, 0);
        let xin = tape.constant(&x);
        let taped = net.forward_tape(&mut tape, &bound, xin).unwrap();
        assert_eq!(plain.data(), taped.data());
    }

    #[test]
    fn input_dim_mismatch_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = MlpParams::new(&[3, 4, 2], Activation::Relu, Activation::Linear, &mut rng);
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]);
        assert!(net.forward(&x).is_err());
    }
}
