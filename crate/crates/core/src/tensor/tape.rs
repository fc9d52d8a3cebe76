use std::borrow::Cow;

use super::ops::{self, conv2d_backward, linear_backward, maxpool2_with_argmax};
use super::{expect_extent, expect_rank, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    MaxPool2 {
        input: NodeId,
        argmax: Vec<u32>,
    },
    Relu {
        input: NodeId,
    },
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    GlobalAvgPool {
        input: NodeId,
    },
    Reshape {
        input: NodeId,
    },
    Sum {
        input: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    WeightedL1 {
        pred: NodeId,
        target: Vec<f32>,
        weights: Vec<f32>,
    },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, so every node's inputs precede it and
/// [`Tape::backward`] simply walks the list in reverse. Leaves may borrow
/// their tensors (parameters) so recording a pass does not copy weights.
///
/// Leaf gradients accumulate across `backward` calls until
/// [`Tape::clear_grads`].
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    leaf_grads: Vec<Option<Vec<f32>>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> Result<&Node<'a>> {
        self.nodes.get(id.0).ok_or(TensorError::UnknownNode(id.0))
    }

    /// Trainable leaf borrowing an existing tensor.
    pub fn param(&mut self, tensor: &'a Tensor) -> NodeId {
        self.push(Cow::Borrowed(tensor), Op::Leaf, true)
    }

    /// Leaf owning its tensor.
    pub fn leaf(&mut self, tensor: Tensor, requires_grad: bool) -> NodeId {
        self.push(Cow::Owned(tensor), Op::Leaf, requires_grad)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, tensor: Tensor) -> NodeId {
        self.leaf(tensor, false)
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.node(id).map(|n| n.value.as_ref())
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.leaf_grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn clear_grads(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let out = ops::conv2d(self.value(input)?, self.value(weight)?, self.value(bias)?)?;
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(
            Cow::Owned(out),
            Op::Conv2d {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    pub fn maxpool2(&mut self, input: NodeId) -> Result<NodeId> {
        let (out, argmax) = maxpool2_with_argmax(self.value(input)?)?;
        let rg = self.needs(&[input]);
        Ok(self.push(Cow::Owned(out), Op::MaxPool2 { input, argmax }, rg))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let out = ops::relu(self.value(input)?);
        let rg = self.needs(&[input]);
        Ok(self.push(Cow::Owned(out), Op::Relu { input }, rg))
    }

    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let out = ops::linear(self.value(input)?, self.value(weight)?, self.value(bias)?)?;
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(
            Cow::Owned(out),
            Op::Linear {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let out = ops::global_avg_pool(self.value(input)?)?;
        let rg = self.needs(&[input]);
        Ok(self.push(Cow::Owned(out), Op::GlobalAvgPool { input }, rg))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(input)?.clone().reshape(shape.to_vec())?;
        let rg = self.needs(&[input]);
        Ok(self.push(Cow::Owned(out), Op::Reshape { input }, rg))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        let s: f32 = self.value(input)?.data().iter().sum();
        let rg = self.needs(&[input]);
        Ok(self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum { input }, rg))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a)?, self.value(b)?);
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                axis: "numel",
                expected: ta.numel(),
                got: tb.numel(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::Mul { a, b }, rg))
    }

    /// Batch mean of per-row weighted L1 distances:
    /// `(1/N) * sum_n sum_i w_i |pred[n,i] - target[n,i]|` for `pred: [N, D]`.
    pub fn weighted_l1(&mut self, pred: NodeId, target: &[f32], weights: &[f32]) -> Result<NodeId> {
        const OP: &str = "weighted_l1";
        let p = self.value(pred)?;
        expect_rank(OP, p, 2)?;
        let (n, d) = (p.shape()[0], p.shape()[1]);
        expect_extent(OP, "weights", d, weights.len())?;
        expect_extent(OP, "target", n * d, target.len())?;
        let mut total = 0.0f64;
        for (row, trow) in p.data().chunks_exact(d).zip(target.chunks_exact(d)) {
            for ((&v, &t), &w) in row.iter().zip(trow).zip(weights) {
                total += f64::from(w) * f64::from((v - t).abs());
            }
        }
        let loss = (total / n as f64) as f32;
        let rg = self.needs(&[pred]);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(loss)),
            Op::WeightedL1 {
                pred,
                target: target.to_vec(),
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar loss. Adds `d loss / d leaf` into every
    /// differentiable leaf's accumulator.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let lt = self.value(loss)?;
        if !lt.is_scalar() {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                },
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                } => {
                    let need_dx = self.nodes[input.0].requires_grad;
                    let grads = conv2d_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[weight.0].value,
                        &self.nodes[bias.0].value,
                        &g,
                        need_dx,
                    )?;
                    if let Some(dx) = grads.dinput {
                        add_adj(&mut adj, *input, dx);
                    }
                    add_adj(&mut adj, *weight, grads.dweight);
                    add_adj(&mut adj, *bias, grads.dbias);
                }
                Op::MaxPool2 { input, argmax } => {
                    let mut dx = vec![0.0f32; self.nodes[input.0].value.numel()];
                    for (&a, &gv) in argmax.iter().zip(&g) {
                        dx[a as usize] += gv;
                    }
                    add_adj(&mut adj, *input, dx);
                }
                Op::Relu { input } => {
                    let dx = node
                        .value
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&y, &gv)| if y > 0.0 { gv } else { 0.0 })
                        .collect();
                    add_adj(&mut adj, *input, dx);
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let grads =
                        linear_backward(&self.nodes[input.0].value, &self.nodes[weight.0].value, &g);
                    add_adj(&mut adj, *input, grads.dinput);
                    add_adj(&mut adj, *weight, grads.dweight);
                    add_adj(&mut adj, *bias, grads.dbias);
                }
                Op::GlobalAvgPool { input } => {
                    let s = self.nodes[input.0].value.shape();
                    let hw = s[2] * s[3];
                    let inv = 1.0 / hw as f32;
                    let mut dx = Vec::with_capacity(hw * g.len());
                    for &gv in &g {
                        dx.extend(std::iter::repeat_n(gv * inv, hw));
                    }
                    add_adj(&mut adj, *input, dx);
                }
                Op::Reshape { input } => add_adj(&mut adj, *input, g),
                Op::Sum { input } => {
                    let n = self.nodes[input.0].value.numel();
                    add_adj(&mut adj, *input, vec![g[0]; n]);
                }
                Op::Mul { a, b } => {
                    let va = self.nodes[a.0].value.data();
                    let vb = self.nodes[b.0].value.data();
                    let da = g.iter().zip(vb).map(|(x, y)| x * y).collect();
                    let db = g.iter().zip(va).map(|(x, y)| x * y).collect();
                    add_adj(&mut adj, *a, da);
                    add_adj(&mut adj, *b, db);
                }
                Op::WeightedL1 {
                    pred,
                    target,
                    weights,
                } => {
                    let p = &self.nodes[pred.0].value;
                    let (n, d) = (p.shape()[0], p.shape()[1]);
                    let scale = g[0] / n as f32;
                    let dx = p
                        .data()
                        .iter()
                        .zip(target)
                        .enumerate()
                        .map(|(j, (&v, &t))| {
                            let diff = v - t;
                            let sign = if diff > 0.0 {
                                1.0
                            } else if diff < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            sign * weights[j % d] * scale
                        })
                        .collect();
                    add_adj(&mut adj, *pred, dx);
                }
            }
        }
        Ok(())
    }
}

fn add_adj(adj: &mut [Option<Vec<f32>>], id: NodeId, g: Vec<f32>) {
    match &mut adj[id.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}
