//! Dynamic reverse-mode tape.
//!
//! Every method on [`Tape`] evaluates its operation eagerly and appends a
//! node holding the result together with whatever the backward pass needs.
//! Nodes only ever reference earlier nodes, so walking the node list in
//! reverse visits operations in exact reverse execution order.

use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::ops::activation::{self, Pointwise};
use crate::ops::conv::{self, Conv2dSpec};
use crate::ops::elementwise;
use crate::ops::filter;
use crate::ops::loss::{self, BalancedCe};
use crate::ops::norm::{self, BnStats};
use crate::ops::pool::{self, PoolMode};
use crate::ops::sample;
use crate::params::ParamStore;
use crate::tensor::{ensure_same_shape, DType, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Constant,
    Param,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
    },
    PoolSpatial {
        x: Var,
        mode: PoolMode,
        argmax: Option<Vec<usize>>,
    },
    PoolChannel {
        x: Var,
        mode: PoolMode,
        argmax: Option<Vec<usize>>,
    },
    Pointwise {
        x: Var,
        f: Pointwise,
    },
    Softmax {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
        training: bool,
    },
    Concat {
        parts: Vec<Var>,
    },
    BroadcastMul {
        x: Var,
        gate: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Div {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        k: f64,
    },
    AddScalar {
        x: Var,
    },
    Sum {
        x: Var,
    },
    WeightedSum {
        x: Var,
        weights: Tensor,
    },
    SliceChannels {
        x: Var,
        start: usize,
    },
    Upsample {
        x: Var,
    },
    GridSample {
        x: Var,
        positions: Var,
    },
    Aligned {
        x: Var,
        offset: Var,
    },
    GradScale {
        x: Var,
        k: f64,
    },
    LocalFilter {
        x: Var,
        weights: Var,
        taps: Vec<(isize, isize)>,
    },
    Bce {
        scores: Var,
        labels: Tensor,
    },
    BalancedCe {
        logits: Var,
        labels: Vec<u8>,
        ignore: u8,
        class_counts: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of executed operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Gradients of a scalar with respect to every recorded value.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `v`; `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes.get(v.0).ok_or(TensorError::ForeignVar(v.0))
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records a value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Records a trainable leaf. Requesting the same name twice returns the
    /// same variable.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.push(value, Op::Param, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let out = conv::conv2d(
            &self.node(x)?.value,
            &self.node(w)?.value,
            match b {
                Some(b) => Some(&self.node(b)?.value),
                None => None,
            },
            spec,
        )?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let needs = self.needs(&inputs);
        Ok(self.push(out, Op::Conv { x, w, b, spec }, needs))
    }

    pub fn global_pool_spatial(&mut self, x: Var, mode: PoolMode) -> Result<Var> {
        let pooled = pool::pool_spatial(&self.node(x)?.value, mode);
        let needs = self.needs(&[x]);
        Ok(self.push(
            pooled.value,
            Op::PoolSpatial {
                x,
                mode,
                argmax: pooled.argmax,
            },
            needs,
        ))
    }

    pub fn global_pool_channel(&mut self, x: Var, mode: PoolMode) -> Result<Var> {
        let pooled = pool::pool_channel(&self.node(x)?.value, mode);
        let needs = self.needs(&[x]);
        Ok(self.push(
            pooled.value,
            Op::PoolChannel {
                x,
                mode,
                argmax: pooled.argmax,
            },
            needs,
        ))
    }

    pub fn pointwise(&mut self, x: Var, f: Pointwise) -> Result<Var> {
        let out = activation::pointwise(&self.node(x)?.value, f);
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::Pointwise { x, f }, needs))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.pointwise(x, Pointwise::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.pointwise(x, Pointwise::Relu)
    }

    pub fn softmax_channel(&mut self, x: Var) -> Result<Var> {
        let out = activation::softmax_channel(&self.node(x)?.value);
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::Softmax { x }, needs))
    }

    /// Batch normalization. In training mode the returned statistics are the
    /// running averages after this batch; applying them is up to the caller.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &BnStats,
        training: bool,
    ) -> Result<(Var, Option<BnStats>)> {
        let f = norm::batchnorm_forward(
            &self.node(x)?.value,
            &self.node(gamma)?.value,
            &self.node(beta)?.value,
            stats,
            training,
        )?;
        let needs = self.needs(&[x, gamma, beta]);
        let v = self.push(
            f.output,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized: f.normalized,
                inv_std: f.inv_std,
                training,
            },
            needs,
        );
        Ok((v, f.updated))
    }

    pub fn concat_channel(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors = parts
            .iter()
            .map(|&p| self.node(p).map(|n| &n.value))
            .collect::<Result<Vec<_>>>()?;
        let out = elementwise::concat_channel(&tensors)?;
        let needs = self.needs(parts);
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// Channel-wise, spatial-wise or elementwise product (see
    /// [`GateKind`](crate::ops::GateKind)).
    pub fn broadcast_mul(&mut self, x: Var, gate: Var) -> Result<Var> {
        let out = elementwise::broadcast_mul(&self.node(x)?.value, &self.node(gate)?.value)?;
        let needs = self.needs(&[x, gate]);
        Ok(self.push(out, Op::BroadcastMul { x, gate }, needs))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (&self.node(a)?.value, &self.node(b)?.value);
        ensure_same_shape(op, ta.shape(), tb.shape())?;
        ta.zip_map(tb, f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub { a, b }, needs))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("div", a, b, |x, y| x / y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Div { a, b }, needs))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let out = self.node(x)?.value.map(|v| v * k);
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::Scale { x, k }, needs))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Result<Var> {
        let out = self.node(x)?.value.map(|v| v + k);
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::AddScalar { x }, needs))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let t = &self.node(x)?.value;
        let out = Tensor::from_raw(Shape::scalar(), t.dtype(), vec![t.sum()]);
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::Sum { x }, needs))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let count = self.node(x)?.value.shape().numel() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / count)
    }

    /// `Σ x ⊙ weights`, as a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        let t = &self.node(x)?.value;
        ensure_same_shape("weighted_sum", t.shape(), weights.shape())?;
        let total = t.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let out = Tensor::from_raw(Shape::scalar(), t.dtype(), vec![total]);
        let needs = self.needs(&[x]);
        Ok(self.push(
            out,
            Op::WeightedSum {
                x,
                weights: weights.clone(),
            },
            needs,
        ))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let out = elementwise::slice_channels(&self.node(x)?.value, start, end)?;
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::SliceChannels { x, start }, needs))
    }

    pub fn bilinear_upsample(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = sample::bilinear_upsample(&self.node(x)?.value, out_h, out_w)?;
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::Upsample { x }, needs))
    }

    pub fn grid_sample_bilinear(&mut self, x: Var, positions: Var) -> Result<Var> {
        let out = sample::grid_sample_bilinear(&self.node(x)?.value, &self.node(positions)?.value)?;
        let needs = self.needs(&[x, positions]);
        Ok(self.push(out, Op::GridSample { x, positions }, needs))
    }

    /// Offset-guided upsampling, see [`crate::ops::aligned_upsample`].
    pub fn aligned_upsample(&mut self, x: Var, offset: Var, stride: usize) -> Result<Var> {
        let out = sample::aligned_upsample(&self.node(x)?.value, &self.node(offset)?.value, stride)?;
        let needs = self.needs(&[x, offset]);
        Ok(self.push(out, Op::Aligned { x, offset }, needs))
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.pointwise(x, Pointwise::Ln)
    }

    /// Per-pixel weighted neighbourhood sum, see [`crate::ops::local_filter`].
    pub fn local_filter(&mut self, x: Var, weights: Var, taps: &[(isize, isize)]) -> Result<Var> {
        let out = filter::local_filter(&self.node(x)?.value, &self.node(weights)?.value, taps)?;
        let needs = self.needs(&[x, weights]);
        Ok(self.push(
            out,
            Op::LocalFilter {
                x,
                weights,
                taps: taps.to_vec(),
            },
            needs,
        ))
    }

    /// Identity in the forward pass; multiplies the incoming gradient by `k`.
    pub fn grad_scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let out = self.node(x)?.value.clone();
        let needs = self.needs(&[x]);
        Ok(self.push(out, Op::GradScale { x, k }, needs))
    }

    /// Mean binary cross-entropy with logits against a 0/1 label tensor.
    pub fn bce_with_logits(&mut self, scores: Var, labels: &Tensor) -> Result<Var> {
        let t = &self.node(scores)?.value;
        let value = loss::bce_with_logits(t, labels)?;
        let out = Tensor::from_raw(Shape::scalar(), t.dtype(), vec![value]);
        let needs = self.needs(&[scores]);
        Ok(self.push(
            out,
            Op::Bce {
                scores,
                labels: labels.clone(),
            },
            needs,
        ))
    }

    /// Class-balanced cross-entropy against a label map, see
    /// [`crate::ops::balanced_cross_entropy`].
    pub fn balanced_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[u8],
        ignore: u8,
    ) -> Result<(Var, BalancedCe)> {
        let t = &self.node(logits)?.value;
        let info = loss::balanced_cross_entropy(t, labels, ignore)?;
        let out = Tensor::from_raw(Shape::scalar(), t.dtype(), vec![info.loss]);
        let needs = self.needs(&[logits]);
        let v = self.push(
            out,
            Op::BalancedCe {
                logits,
                labels: labels.to_vec(),
                ignore,
                class_counts: info.class_counts.clone(),
            },
            needs,
        );
        Ok((v, info))
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to every node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let root = self.node(loss)?;
        if !root.value.shape().is_scalar() {
            return Err(TensorError::NotScalar {
                shape: root.value.shape().dims(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let g = Tensor::from_raw(node.value.shape(), DType::F64, g);
            self.backprop(node, &g, &mut grads)?;
            grads[i] = Some(g.into_data());
        }

        Ok(Gradients {
            grads: grads
                .into_iter()
                .enumerate()
                .map(|(i, g)| {
                    g.map(|d| {
                        let v = &self.nodes[i].value;
                        Tensor::from_raw(v.shape(), v.dtype(), d)
                    })
                })
                .collect(),
        })
    }

    /// Accumulates `∂loss/∂param` into `params` for every parameter recorded
    /// on this tape. Calling it repeatedly keeps adding.
    pub fn backward(&self, loss: Var, params: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (name, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                params.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }

    fn backprop(&self, node: &Node, g: &Tensor, grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, d: Vec<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(d).for_each(|(e, x)| *e += x),
                slot => *slot = Some(d),
            }
        };
        let gd = g.data();

        match &node.op {
            Op::Constant | Op::Param => {}
            Op::Conv { x, w, b, spec } => {
                let grads = conv::conv2d_backward(
                    val(*x),
                    val(*w),
                    b.map(val),
                    *spec,
                    g,
                    wants(*x),
                )?;
                if let Some(gi) = grads.input {
                    acc(*x, gi.into_data());
                }
                acc(*w, grads.weight.into_data());
                if let (Some(b), Some(gb)) = (b, grads.bias) {
                    acc(*b, gb.into_data());
                }
            }
            Op::PoolSpatial { x, mode, argmax } => {
                acc(
                    *x,
                    pool::pool_spatial_backward(val(*x).shape(), *mode, argmax.as_deref(), g),
                );
            }
            Op::PoolChannel { x, mode, argmax } => {
                acc(
                    *x,
                    pool::pool_channel_backward(val(*x).shape(), *mode, argmax.as_deref(), g),
                );
            }
            Op::Pointwise { x, f } => {
                acc(*x, activation::pointwise_backward(*f, val(*x), &node.value, g));
            }
            Op::Softmax { x } => acc(*x, activation::softmax_backward(&node.value, g)),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
                training,
            } => {
                let bg = norm::batchnorm_backward(
                    val(*x).shape(),
                    val(*gamma),
                    normalized,
                    inv_std,
                    *training,
                    g,
                );
                acc(*x, bg.input);
                acc(*gamma, bg.gamma);
                acc(*beta, bg.beta);
            }
            Op::Concat { parts } => {
                let s = node.value.shape();
                let p = s.plane();
                let mut offset = 0;
                for &part in parts {
                    let pc = val(part).shape().c();
                    let mut d = Vec::with_capacity(s.n() * pc * p);
                    for n in 0..s.n() {
                        let start = (n * s.c() + offset) * p;
                        d.extend_from_slice(&gd[start..start + pc * p]);
                    }
                    acc(part, d);
                    offset += pc;
                }
            }
            Op::BroadcastMul { x, gate } => {
                let (gi, gg) = elementwise::broadcast_mul_backward(val(*x), val(*gate), g);
                acc(*x, gi);
                acc(*gate, gg);
            }
            Op::Add { a, b } => {
                acc(*a, gd.to_vec());
                acc(*b, gd.to_vec());
            }
            Op::Sub { a, b } => {
                acc(*a, gd.to_vec());
                acc(*b, gd.iter().map(|v| -v).collect());
            }
            Op::Div { a, b } => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                acc(*a, gd.iter().zip(tb).map(|(g, y)| g / y).collect());
                acc(
                    *b,
                    gd.iter()
                        .zip(ta.iter().zip(tb))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect(),
                );
            }
            Op::Scale { x, k } => acc(*x, gd.iter().map(|v| v * k).collect()),
            Op::AddScalar { x } => acc(*x, gd.to_vec()),
            Op::Sum { x } => acc(*x, vec![gd[0]; val(*x).shape().numel()]),
            Op::WeightedSum { x, weights } => {
                acc(*x, weights.data().iter().map(|w| w * gd[0]).collect())
            }
            Op::SliceChannels { x, start } => {
                let s = val(*x).shape();
                let os = node.value.shape();
                let p = s.plane();
                let mut d = vec![0.0; s.numel()];
                for n in 0..s.n() {
                    let dst = (n * s.c() + start) * p;
                    let src = n * os.c() * p;
                    d[dst..dst + os.c() * p].copy_from_slice(&gd[src..src + os.c() * p]);
                }
                acc(*x, d);
            }
            Op::Upsample { x } => {
                let os = node.value.shape();
                acc(
                    *x,
                    sample::bilinear_upsample_backward(val(*x), os.h(), os.w(), g),
                );
            }
            Op::GridSample { x, positions } => {
                let sg = sample::grid_sample_backward(
                    val(*x),
                    val(*positions),
                    g,
                    wants(*x),
                    wants(*positions),
                );
                if let Some(gi) = sg.input {
                    acc(*x, gi);
                }
                if let Some(gp) = sg.coords {
                    acc(*positions, coords_to_planes(val(*positions).shape(), &gp));
                }
            }
            Op::Aligned { x, offset } => {
                let sg = sample::aligned_upsample_backward(
                    val(*x),
                    val(*offset),
                    g,
                    wants(*x),
                    wants(*offset),
                );
                if let Some(gi) = sg.input {
                    acc(*x, gi);
                }
                if let Some(gp) = sg.coords {
                    acc(*offset, coords_to_planes(val(*offset).shape(), &gp));
                }
            }
            Op::GradScale { x, k } => acc(*x, gd.iter().map(|v| v * k).collect()),
            Op::LocalFilter { x, weights, taps } => {
                let fg = filter::local_filter_backward(val(*x), val(*weights), taps, g);
                acc(*x, fg.input);
                acc(*weights, fg.weights);
            }
            Op::Bce { scores, labels } => {
                acc(*scores, loss::bce_backward(val(*scores), labels, gd[0]));
            }
            Op::BalancedCe {
                logits,
                labels,
                ignore,
                class_counts,
            } => {
                acc(
                    *logits,
                    loss::balanced_ce_backward(val(*logits), labels, *ignore, class_counts, gd[0]),
                );
            }
        }
        Ok(())
    }
}

fn coords_to_planes(shape: Shape, coords: &[(f64, f64)]) -> Vec<f64> {
    let p = shape.plane();
    let mut d = vec![0.0; shape.numel()];
    for (i, &(dy, dx)) in coords.iter().enumerate() {
        let (n, px) = (i / p, i % p);
        d[n * 2 * p + px] = dy;
        d[(n * 2 + 1) * p + px] = dx;
    }
    d
}

/// Free-function form of [`Tape::backward`].
pub fn backward(tape: &Tape, loss: Var, params: &mut ParamStore) -> Result<()> {
    tape.backward(loss, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, t, 1.0).unwrap();
        s
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        let x = Tensor::from_vec([1, 3, 1, 1], vec![0.5, -2.0, 4.0]).unwrap();
        let mut store = store_with("w", Tensor::from_vec([1, 3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let xc = tape.constant(x.clone());
        let prod = tape.broadcast_mul(w, xc).unwrap();
        let loss = tape.sum(prod).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), x.data());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut store = store_with("w", Tensor::from_vec([1, 2, 1, 1], vec![1.5, -0.5]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let s = tape.sigmoid(w).unwrap();
        let loss = tape.sum(s).unwrap();
        tape.backward(loss, &mut store).unwrap();
        let once = store.grad("w").unwrap().clone();
        tape.backward(loss, &mut store).unwrap();
        let twice = store.grad("w").unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut store = store_with("w", Tensor::from_vec([1, 2, 1, 1], vec![1.0, 2.0]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        assert!(matches!(
            tape.backward(w, &mut store),
            Err(TensorError::NotScalar { .. })
        ));
    }

    #[test]
    fn shared_param_gradients_add_up() {
        let mut store = store_with("w", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let a = tape.param(&store, "w").unwrap();
        let b = tape.param(&store, "w").unwrap();
        assert_eq!(a, b);
        let sq = tape.broadcast_mul(a, b).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[6.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let s = tape.sum(c).unwrap();
        let grads = tape.gradients(s).unwrap();
        assert!(grads.get(c).is_none());
    }
}
