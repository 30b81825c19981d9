//! Volume-preserving flow over the joint `(x, v)` state: stacked additive
//! coupling layers `y' = y, z' = z + m(y)` with exact inverses.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{checkpoint, Activation, BoundMlp, MlpParams, NodeId, Tape, Tensor};

/// Which half of the `(x, v)` pair a coupling layer shifts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    X,
    V,
}

impl Partition {
    fn tag(&self) -> char {
        match self {
            Partition::X => 'X',
            Partition::V => 'V',
        }
    }

    fn from_tag(c: char) -> Result<Self> {
        match c {
            'X' => Ok(Partition::X),
            'V' => Ok(Partition::V),
            other => Err(Error::Format(format!("bad partition tag {other:?}"))),
        }
    }
}

/// One additive coupling layer: the `update` partition is shifted by the
/// offset network applied to the other partition, which passes unchanged.
#[derive(Clone, Debug)]
pub struct CouplingLayer {
    pub update: Partition,
    pub m_net: MlpParams,
}

impl CouplingLayer {
    /// Forward map on a batch. The conditioning partition is returned
    /// untouched (same allocation semantics as the inverse).
    pub fn forward(&self, x: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
        match self.update {
            Partition::V => {
                let offset = self.m_net.forward(x)?;
                Ok((x.clone(), v.add(&offset)))
            }
            Partition::X => {
                let offset = self.m_net.forward(v)?;
                Ok((x.add(&offset), v.clone()))
            }
        }
    }

    pub fn inverse(&self, x: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
        match self.update {
            Partition::V => {
                let offset = self.m_net.forward(x)?;
                Ok((x.clone(), v.sub(&offset)))
            }
            Partition::X => {
                let offset = self.m_net.forward(v)?;
                Ok((x.sub(&offset), v.clone()))
            }
        }
    }

    fn forward_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundMlp,
        x: NodeId,
        v: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        match self.update {
            Partition::V => {
                let offset = self.m_net.forward_tape_node(tape, bound, x)?;
                Ok((x, tape.add(v, offset)))
            }
            Partition::X => {
                let offset = self.m_net.forward_tape_node(tape, bound, v)?;
                Ok((tape.add(x, offset), v))
            }
        }
    }
}

/// Stack of coupling layers over `(x, v)`, exactly invertible with unit
/// Jacobian determinant.
#[derive(Clone, Debug)]
pub struct NiceModel {
    pub x_dim: usize,
    pub v_dim: usize,
    pub layers: Vec<CouplingLayer>,
}

impl NiceModel {
    /// Build a model from an update pattern and per-layer hidden widths.
    /// Offset networks use leaky-ReLU hidden units and a linear output.
    pub fn new<R: Rng>(
        x_dim: usize,
        v_dim: usize,
        pattern: &[(Partition, Vec<usize>)],
        rng: &mut R,
    ) -> Self {
        let layers = pattern
            .iter()
            .map(|(update, hidden)| {
                let (inp, out) = match update {
                    Partition::V => (x_dim, v_dim),
                    Partition::X => (v_dim, x_dim),
                };
                let mut dims = vec![inp];
                dims.extend_from_slice(hidden);
                dims.push(out);
                CouplingLayer {
                    update: *update,
                    m_net: MlpParams::new(&dims, Activation::LeakyRelu, Activation::Linear, rng),
                }
            })
            .collect();
        NiceModel { x_dim, v_dim, layers }
    }

    /// The v-x-v stack used for the 2D energies: each offset network has one
    /// hidden layer of `hidden` units.
    pub fn energy_arch<R: Rng>(x_dim: usize, v_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self::new(
            x_dim,
            v_dim,
            &[
                (Partition::V, vec![hidden]),
                (Partition::X, vec![hidden]),
                (Partition::V, vec![hidden]),
            ],
            rng,
        )
    }

    /// The v-x-v stack used for logistic regression posteriors: the middle
    /// (x-updating) network gets two hidden layers.
    pub fn blr_arch<R: Rng>(x_dim: usize, v_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self::new(
            x_dim,
            v_dim,
            &[
                (Partition::V, vec![hidden]),
                (Partition::X, vec![hidden, hidden]),
                (Partition::V, vec![hidden]),
            ],
            rng,
        )
    }

    pub fn pattern_string(&self) -> String {
        self.layers.iter().map(|l| l.update.tag()).collect()
    }

    fn check_shapes(&self, x: &Tensor, v: &Tensor) -> Result<()> {
        if x.rank() != 2 || v.rank() != 2 || x.cols() != self.x_dim || v.cols() != self.v_dim {
            return Err(Error::Shape(format!(
                "expected x [batch, {}] and v [batch, {}], got {:?} and {:?}",
                self.x_dim,
                self.v_dim,
                x.shape(),
                v.shape()
            )));
        }
        if x.rows() != v.rows() {
            return Err(Error::Shape(format!(
                "x batch {} vs v batch {}",
                x.rows(),
                v.rows()
            )));
        }
        Ok(())
    }

    /// Apply every layer in order.
    pub fn forward(&self, x: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_shapes(x, v)?;
        let (mut x, mut v) = (x.clone(), v.clone());
        for layer in &self.layers {
            let (nx, nv) = layer.forward(&x, &v)?;
            x = nx;
            v = nv;
        }
        Ok((x, v))
    }

    /// Apply layers in reverse order with subtraction; exact inverse of
    /// [`NiceModel::forward`].
    pub fn inverse(&self, x: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_shapes(x, v)?;
        let (mut x, mut v) = (x.clone(), v.clone());
        for layer in self.layers.iter().rev() {
            let (nx, nv) = layer.inverse(&x, &v)?;
            x = nx;
            v = nv;
        }
        Ok((x, v))
    }

    /// Recorded forward pass for training.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundNice,
        x: NodeId,
        v: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let (mut x, mut v) = (x, v);
        for (layer, b) in self.layers.iter().zip(&bound.nets) {
            let (nx, nv) = layer.forward_tape(tape, b, x, v)?;
            x = nx;
            v = nv;
        }
        Ok((x, v))
    }

    /// Register all offset-network parameters with keys `0..param_count()`.
    pub fn bind(&self, tape: &mut Tape) -> BoundNice {
        let mut key = 0;
        let nets = self
            .layers
            .iter()
            .map(|l| {
                let b = l.m_net.bind(tape, key);
                key += l.m_net.param_count();
                b
            })
            .collect();
        BoundNice { nets }
    }

    pub fn bind_const(&self, tape: &mut Tape) -> BoundNice {
        BoundNice { nets: self.layers.iter().map(|l| l.m_net.bind_const(tape)).collect() }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.m_net.param_count()).sum()
    }

    pub fn param_refs(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.m_net.param_refs()).collect()
    }

    pub fn param_refs_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.m_net.param_refs_mut()).collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.m_net.param_names(&format!("coupling{i}")))
            .collect()
    }

    /// Write the model to the tensor checkpoint format, with a JSON header
    /// recording dimensions, update pattern and activation tags.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ModelHeader {
            x_dim: self.x_dim,
            v_dim: self.v_dim,
            pattern: self.pattern_string(),
            activations: self
                .layers
                .iter()
                .map(|l| l.m_net.layers.iter().map(|ly| ly.activation.tag().to_string()).collect())
                .collect(),
        };
        let header = serde_json::to_string(&header)
            .map_err(|e| Error::Format(format!("header encode: {e}")))?;
        let names = self.param_names();
        let params = self.param_refs();
        let entries: Vec<(String, &Tensor)> =
            names.into_iter().zip(params.into_iter()).collect();
        checkpoint::save_tensors(path, &header, &entries)
    }

    pub fn load(path: &Path) -> Result<NiceModel> {
        let (header, entries) = checkpoint::load_tensors(path)?;
        let header: ModelHeader = serde_json::from_str(&header)
            .map_err(|e| Error::Format(format!("{}: header decode: {e}", path.display())))?;
        if header.pattern.len() != header.activations.len() {
            return Err(Error::Format("pattern/activation count mismatch".into()));
        }
        let mut iter = entries.into_iter();
        let mut layers = Vec::with_capacity(header.pattern.len());
        for (tag, acts) in header.pattern.chars().zip(&header.activations) {
            let update = Partition::from_tag(tag)?;
            let mut net_layers = Vec::with_capacity(acts.len());
            for act in acts {
                let (_, weight) = iter
                    .next()
                    .ok_or_else(|| Error::Format("checkpoint truncated (weight)".into()))?;
                let (_, bias) = iter
                    .next()
                    .ok_or_else(|| Error::Format("checkpoint truncated (bias)".into()))?;
                net_layers.push(crate::tensor::Layer {
                    weight,
                    bias,
                    activation: Activation::from_tag(act)?,
                });
            }
            layers.push(CouplingLayer { update, m_net: MlpParams { layers: net_layers } });
        }
        let model = NiceModel { x_dim: header.x_dim, v_dim: header.v_dim, layers };
        model.validate()?;
        Ok(model)
    }

    /// Check that every offset network maps the conditioning partition onto
    /// the updated partition.
    pub fn validate(&self) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            let (want_in, want_out) = match layer.update {
                Partition::V => (self.x_dim, self.v_dim),
                Partition::X => (self.v_dim, self.x_dim),
            };
            if layer.m_net.input_dim() != want_in || layer.m_net.output_dim() != want_out {
                return Err(Error::Shape(format!(
                    "coupling layer {i}: net maps {} -> {}, expected {} -> {}",
                    layer.m_net.input_dim(),
                    layer.m_net.output_dim(),
                    want_in,
                    want_out
                )));
            }
        }
        Ok(())
    }
}

/// Node handles for a [`NiceModel`] bound on a tape.
pub struct BoundNice {
    nets: Vec<BoundMlp>,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    x_dim: usize,
    v_dim: usize,
    pattern: String,
    activations: Vec<Vec<String>>,
}

/// Zero all offset-network output layers, making the map exactly the identity.
#[cfg(test)]
pub(crate) fn zeroed(mut model: NiceModel) -> NiceModel {
    for layer in &mut model.layers {
        for net_layer in &mut layer.m_net.layers {
            net_layer.weight = Tensor::zeros(net_layer.weight.shape().to_vec());
            net_layer.bias = Tensor::zeros(net_layer.bias.shape().to_vec());
        }
    }
    model
}
