//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! Values are computed eagerly as ops are pushed; `backward` walks the tape
//! once in reverse. Nodes are topologically ordered by construction, so a
//! single reverse sweep visits every node exactly once and two sweeps over the
//! same tape produce bitwise-identical gradients.

use super::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    AddBias { a: NodeId, bias: NodeId },
    Scale { a: NodeId, c: f64 },
    AddConst { a: NodeId },
    Relu { a: NodeId },
    LeakyRelu { a: NodeId, slope: f64 },
    Tanh { a: NodeId },
    Square { a: NodeId },
    Exp { a: NodeId },
    Log { a: NodeId },
    Abs { a: NodeId },
    SumAll { a: NodeId },
    SumAxis0 { a: NodeId },
    ClampMin { a: NodeId, c: f64 },
    ConcatCols { a: NodeId, b: NodeId },
    ConcatRows { a: NodeId, b: NodeId },
    SliceRows { a: NodeId, start: usize, len: usize },
}

struct Node {
    op: Op,
    value: Tensor,
    /// Set for leaves registered as trainable parameters.
    param_key: Option<usize>,
}

/// Recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value, param_key: None });
        NodeId(self.nodes.len() - 1)
    }

    /// Register an input the caller does not want gradients for.
    pub fn constant(&mut self, t: &Tensor) -> NodeId {
        self.push(Op::Leaf, t.clone())
    }

    /// Register a trainable parameter; its gradient is retrievable by `key`.
    pub fn param(&mut self, key: usize, t: &Tensor) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value: t.clone(), param_key: Some(key) });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::Matmul { a, b }, v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).add(self.value(b));
        self.push(Op::Add { a, b }, v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).sub(self.value(b));
        self.push(Op::Sub { a, b }, v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).mul(self.value(b));
        self.push(Op::Mul { a, b }, v)
    }

    /// Broadcast a bias row over every row of a 2-d tensor.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let av = self.value(a);
        let bv = self.value(bias);
        assert_eq!(av.cols(), bv.numel(), "bias length {} vs {} columns", bv.numel(), av.cols());
        let cols = av.cols();
        let mut out = av.clone();
        for row in 0..out.rows() {
            let r = out.row_mut(row);
            for j in 0..cols {
                r[j] += bv.data()[j];
            }
        }
        self.push(Op::AddBias { a, bias }, out)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        self.push(Op::Scale { a, c }, v)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddConst { a }, v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu { a }, v)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu { a, slope }, v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh { a }, v)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square { a }, v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp { a }, v)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log { a }, v)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::abs);
        self.push(Op::Abs { a }, v)
    }

    /// Sum of all elements, producing a scalar node.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::SumAll { a }, v)
    }

    /// Mean of all elements, producing a scalar node.
    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Column sums of a 2-d tensor: `[m, n] -> [n]`.
    pub fn sum_axis0(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (j, o) in out.iter_mut().enumerate() {
                *o += av.data()[i * n + j];
            }
        }
        self.push(Op::SumAxis0 { a }, Tensor::vector(out))
    }

    /// Elementwise `max(a, c)`.
    pub fn clamp_min(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x.max(c));
        self.push(Op::ClampMin { a, c }, v)
    }

    /// Concatenate two 2-d tensors side by side: `[m, p] + [m, q] -> [m, p+q]`.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows(), bv.rows(), "concat_cols row mismatch");
        let (m, p, q) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        self.push(Op::ConcatCols { a, b }, Tensor::matrix(m, p + q, data))
    }

    /// Stack two 2-d tensors vertically: `[m1, n] + [m2, n] -> [m1+m2, n]`.
    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.cols(), "concat_rows column mismatch");
        let (m1, m2, n) = (av.rows(), bv.rows(), av.cols());
        let mut data = Vec::with_capacity((m1 + m2) * n);
        data.extend_from_slice(av.data());
        data.extend_from_slice(bv.data());
        self.push(Op::ConcatRows { a, b }, Tensor::matrix(m1 + m2, n, data))
    }

    /// Rows `start..start+len` of a 2-d tensor.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let av = self.value(a);
        let n = av.cols();
        assert!(start + len <= av.rows(), "slice_rows out of range");
        let data = av.data()[start * n..(start + len) * n].to_vec();
        self.push(Op::SliceRows { a, start, len }, Tensor::matrix(len, n, data))
    }

    /// Gradient of a scalar node with respect to everything upstream of it.
    ///
    /// Errors if `root` is not a single-element node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::new(
            self.value(root).shape().to_vec(),
            vec![1.0],
        ));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.accumulate(&self.nodes[idx].op, idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients { grads, params: self.param_table() })
    }

    fn param_table(&self) -> Vec<(usize, NodeId)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param_key.map(|k| (k, NodeId(i))))
            .collect()
    }

    fn accumulate(&self, op: &Op, _idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut bump = |id: NodeId, delta: Tensor| {
            match &mut grads[id.0] {
                Some(existing) => {
                    let d = existing.add(&delta);
                    *existing = d;
                }
                slot => *slot = Some(delta),
            }
        };
        match *op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let av = self.value(a);
                let bv = self.value(b);
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                // dA = g . B^T, dB = A^T . g
                let mut da = Tensor::zeros(vec![m, k]);
                gemm(false, true, m, n, k, 1.0, g.data(), bv.data(), 0.0, da.data_mut());
                let mut db = Tensor::zeros(vec![k, n]);
                gemm(true, false, k, m, n, 1.0, av.data(), g.data(), 0.0, db.data_mut());
                bump(a, da);
                bump(b, db);
            }
            Op::Add { a, b } => {
                bump(a, g.clone());
                bump(b, g.clone());
            }
            Op::Sub { a, b } => {
                bump(a, g.clone());
                bump(b, g.scale(-1.0));
            }
            Op::Mul { a, b } => {
                bump(a, g.mul(self.value(b)));
                bump(b, g.mul(self.value(a)));
            }
            Op::AddBias { a, bias } => {
                let n = self.value(bias).numel();
                let mut db = vec![0.0; n];
                for (i, &v) in g.data().iter().enumerate() {
                    db[i % n] += v;
                }
                bump(a, g.clone());
                bump(bias, Tensor::vector(db));
            }
            Op::Scale { a, c } => bump(a, g.scale(c)),
            Op::AddConst { a, .. } => bump(a, g.clone()),
            Op::Relu { a } => {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                bump(a, g.mul(&mask));
            }
            Op::LeakyRelu { a, slope } => {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { slope });
                bump(a, g.mul(&mask));
            }
            Op::Tanh { a } => {
                let y = self.value(a).map(f64::tanh);
                let d = y.map(|t| 1.0 - t * t);
                bump(a, g.mul(&d));
            }
            Op::Square { a } => {
                let d = self.value(a).scale(2.0);
                bump(a, g.mul(&d));
            }
            Op::Exp { a } => {
                let y = self.value(a).map(f64::exp);
                bump(a, g.mul(&y));
            }
            Op::Log { a } => {
                let d = self.value(a).map(|x| 1.0 / x);
                bump(a, g.mul(&d));
            }
            Op::Abs { a } => {
                let s = self.value(a).map(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                bump(a, g.mul(&s));
            }
            Op::SumAll { a } => {
                let gv = g.item();
                bump(a, self.value(a).map(|_| gv));
            }
            Op::SumAxis0 { a } => {
                let av = self.value(a);
                let (m, n) = (av.rows(), av.cols());
                let mut da = Tensor::zeros(vec![m, n]);
                for i in 0..m {
                    da.row_mut(i).copy_from_slice(g.data());
                }
                bump(a, da);
            }
            Op::ClampMin { a, c } => {
                let mask = self.value(a).map(|x| if x >= c { 1.0 } else { 0.0 });
                bump(a, g.mul(&mask));
            }
            Op::ConcatCols { a, b } => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, p, q) = (av.rows(), av.cols(), bv.cols());
                let mut da = Tensor::zeros(vec![m, p]);
                let mut db = Tensor::zeros(vec![m, q]);
                for i in 0..m {
                    let gr = g.row(i);
                    da.row_mut(i).copy_from_slice(&gr[..p]);
                    db.row_mut(i).copy_from_slice(&gr[p..]);
                }
                bump(a, da);
                bump(b, db);
            }
            Op::ConcatRows { a, b } => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m1, n) = (av.rows(), av.cols());
                let m2 = bv.rows();
                let da = Tensor::matrix(m1, n, g.data()[..m1 * n].to_vec());
                let db = Tensor::matrix(m2, n, g.data()[m1 * n..].to_vec());
                bump(a, da);
                bump(b, db);
            }
            Op::SliceRows { a, start, len } => {
                let av = self.value(a);
                let (m, n) = (av.rows(), av.cols());
                let mut da = Tensor::zeros(vec![m, n]);
                da.data_mut()[start * n..(start + len) * n].copy_from_slice(g.data());
                bump(a, da);
            }
        }
    }
}

/// Result of a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, NodeId)>,
}

impl Gradients {
    /// Gradient flowing into `id`, if any path from the root reached it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for the parameter registered under `key`; zeros of the given
    /// shape when the root did not depend on it.
    pub fn param_grad(&self, key: usize, shape: &[usize]) -> Tensor {
        self.params
            .iter()
            .find(|(k, _)| *k == key)
            .and_then(|(_, id)| self.grads[id.0].clone())
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

/// Node handles for an MLP whose parameters were registered on a tape.
pub struct BoundMlp {
    /// `(weight, bias)` node per layer.
    pub layers: Vec<(NodeId, NodeId)>,
}
