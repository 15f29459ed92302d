//! Differentiable tensor primitives recorded on a [`Graph`].

use super::{Backward, Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::{numel, strides, PadMode, ReduceKind, Tensor, Unary};

struct AddRule;

impl Backward for AddRule {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        needs.iter().map(|&n| n.then(|| grad.clone())).collect()
    }
}

pub fn add(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let v = g.value(a).add(g.value(b))?;
    Ok(g.record(&[a, b], v, AddRule))
}

struct SubRule;

impl Backward for SubRule {
    fn name(&self) -> &'static str {
        "sub"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![
            needs[0].then(|| grad.clone()),
            needs[1].then(|| grad.map_unary(Unary::Negate)),
        ]
    }
}

pub fn sub(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let v = g.value(a).sub(g.value(b))?;
    Ok(g.record(&[a, b], v, SubRule))
}

struct MulRule;

impl Backward for MulRule {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![
            needs[0].then(|| grad.mul(inputs[1]).expect("mul backward")),
            needs[1].then(|| grad.mul(inputs[0]).expect("mul backward")),
        ]
    }
}

/// Elementwise product.
pub fn mul(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let v = g.value(a).mul(g.value(b))?;
    Ok(g.record(&[a, b], v, MulRule))
}

struct UnaryRule(Unary);

impl Backward for UnaryRule {
    fn name(&self) -> &'static str {
        match self.0 {
            Unary::Relu => "relu",
            Unary::Tanh => "tanh",
            Unary::Negate => "negate",
            Unary::Scale(_) => "scale",
            Unary::Sigmoid => "sigmoid",
        }
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let d = match self.0 {
            // Subgradient at exactly zero is zero.
            Unary::Relu => grad.zip_with(x, "relu", |g, x| if x > 0.0 { g } else { 0.0 }),
            Unary::Tanh => grad.zip_with(output, "tanh", |g, y| g * (1.0 - y * y)),
            Unary::Sigmoid => grad.zip_with(output, "sigmoid", |g, y| g * y * (1.0 - y)),
            Unary::Negate => Ok(grad.map_unary(Unary::Negate)),
            Unary::Scale(a) => Ok(grad.scale(a)),
        };
        vec![Some(d.expect("unary backward"))]
    }
}

pub fn unary(g: &mut Graph, x: NodeId, f: Unary) -> NodeId {
    let v = g.value(x).map_unary(f);
    g.record(&[x], v, UnaryRule(f))
}

pub fn relu(g: &mut Graph, x: NodeId) -> NodeId {
    unary(g, x, Unary::Relu)
}

pub fn tanh(g: &mut Graph, x: NodeId) -> NodeId {
    unary(g, x, Unary::Tanh)
}

pub fn sigmoid(g: &mut Graph, x: NodeId) -> NodeId {
    unary(g, x, Unary::Sigmoid)
}

pub fn negate(g: &mut Graph, x: NodeId) -> NodeId {
    unary(g, x, Unary::Negate)
}

pub fn scale(g: &mut Graph, x: NodeId, alpha: f64) -> NodeId {
    unary(g, x, Unary::Scale(alpha))
}

struct MatMulRule;

impl Backward for MatMulRule {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let da = needs[0].then(|| grad.matmul(&b.transpose2().unwrap()).expect("matmul backward"));
        let db = needs[1].then(|| a.transpose2().unwrap().matmul(grad).expect("matmul backward"));
        vec![da, db]
    }
}

pub fn matmul(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let v = g.value(a).matmul(g.value(b))?;
    Ok(g.record(&[a, b], v, MatMulRule))
}

struct AddBiasRule;

impl Backward for AddBiasRule {
    fn name(&self) -> &'static str {
        "add_bias"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let db = needs[1].then(|| {
            let n = inputs[1].numel();
            let mut acc = vec![0.0; n];
            for row in grad.data().chunks(n) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            Tensor::from_parts(vec![n], acc, grad.precision())
        });
        vec![needs[0].then(|| grad.clone()), db]
    }
}

/// Adds a rank-1 `bias` along the last axis of `x`.
pub fn add_bias(g: &mut Graph, x: NodeId, bias: NodeId) -> Result<NodeId> {
    let (xv, bv) = (g.value(x), g.value(bias));
    if bv.rank() != 1 || xv.rank() == 0 || xv.shape()[xv.rank() - 1] != bv.numel() {
        return Err(Error::ShapeMismatch {
            op: "add_bias",
            left: xv.shape().to_vec(),
            right: bv.shape().to_vec(),
        });
    }
    if xv.precision() != bv.precision() {
        return Err(Error::PrecisionMismatch { op: "add_bias" });
    }
    let n = bv.numel();
    let mut data = xv.data().to_vec();
    for row in data.chunks_mut(n) {
        for (v, b) in row.iter_mut().zip(bv.data()) {
            *v += b;
        }
    }
    let v = Tensor::from_parts(xv.shape().to_vec(), data, xv.precision());
    Ok(g.record(&[x, bias], v, AddBiasRule))
}

struct ReshapeRule;

impl Backward for ReshapeRule {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(grad.reshape(inputs[0].shape()).expect("reshape backward"))]
    }
}

pub fn reshape(g: &mut Graph, x: NodeId, shape: &[usize]) -> Result<NodeId> {
    let v = g.value(x).reshape(shape)?;
    Ok(g.record(&[x], v, ReshapeRule))
}

struct ReduceRule {
    axes: Vec<usize>,
    kind: ReduceKind,
}

impl Backward for ReduceRule {
    fn name(&self) -> &'static str {
        match self.kind {
            ReduceKind::Sum => "reduce_sum",
            ReduceKind::Mean => "reduce_mean",
            ReduceKind::Max => "reduce_max",
        }
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let rank = x.rank();
        let reduced: Vec<bool> = (0..rank).map(|a| self.axes.contains(&a)).collect();
        let kept: Vec<usize> = x
            .shape()
            .iter()
            .zip(&reduced)
            .map(|(&n, &r)| if r { 1 } else { n })
            .collect();
        let count: usize = x
            .shape()
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(n, _)| *n)
            .product();
        let in_strides = x.strides();
        let out_strides = strides(&kept);
        let mut out = vec![0.0; x.numel()];
        let mut claimed = vec![false; numel(&kept)];
        for (flat, slot) in out.iter_mut().enumerate() {
            let mut rem = flat;
            let mut o = 0;
            for ax in 0..rank {
                let i = rem / in_strides[ax];
                rem %= in_strides[ax];
                if !reduced[ax] {
                    o += i * out_strides[ax];
                }
            }
            *slot = match self.kind {
                ReduceKind::Sum => grad.data()[o],
                ReduceKind::Mean => grad.data()[o] / count as f64,
                // First maximal element receives the gradient.
                ReduceKind::Max => {
                    if !claimed[o] && x.data()[flat] == output.data()[o] {
                        claimed[o] = true;
                        grad.data()[o]
                    } else {
                        0.0
                    }
                }
            };
        }
        vec![Some(Tensor::from_parts(x.shape().to_vec(), out, x.precision()))]
    }
}

pub fn reduce(g: &mut Graph, x: NodeId, axes: &[usize], kind: ReduceKind, keep_dims: bool) -> Result<NodeId> {
    let v = g.value(x).reduce(axes, kind, keep_dims)?;
    Ok(g.record(
        &[x],
        v,
        ReduceRule {
            axes: axes.to_vec(),
            kind,
        },
    ))
}

/// Sum of all elements, as a rank-0 tensor.
pub fn sum(g: &mut Graph, x: NodeId) -> NodeId {
    let axes: Vec<usize> = (0..g.value(x).rank()).collect();
    reduce(g, x, &axes, ReduceKind::Sum, false).expect("full reduction is always valid")
}

/// Mean of all elements, as a rank-0 tensor.
pub fn mean(g: &mut Graph, x: NodeId) -> NodeId {
    let axes: Vec<usize> = (0..g.value(x).rank()).collect();
    reduce(g, x, &axes, ReduceKind::Mean, false).expect("full reduction is always valid")
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

struct NarrowRule {
    axis: usize,
    start: usize,
}

impl Backward for NarrowRule {
    fn name(&self) -> &'static str {
        "narrow"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (outer, extent, inner) = split_axis(x.shape(), self.axis);
        let len = grad.shape()[self.axis];
        let mut out = vec![0.0; x.numel()];
        for o in 0..outer {
            let src = &grad.data()[o * len * inner..(o + 1) * len * inner];
            let dst_start = (o * extent + self.start) * inner;
            out[dst_start..dst_start + len * inner].copy_from_slice(src);
        }
        vec![Some(Tensor::from_parts(x.shape().to_vec(), out, x.precision()))]
    }
}

/// Slice `len` entries of `axis` starting at `start`.
pub fn narrow(g: &mut Graph, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
    let xv = g.value(x);
    if axis >= xv.rank() {
        return Err(Error::InvalidAxis { axis, rank: xv.rank() });
    }
    if start + len > xv.shape()[axis] {
        return Err(Error::invalid(format!(
            "narrow: range {}..{} exceeds extent {} of axis {}",
            start,
            start + len,
            xv.shape()[axis],
            axis
        )));
    }
    let (outer, extent, inner) = split_axis(xv.shape(), axis);
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let s = (o * extent + start) * inner;
        data.extend_from_slice(&xv.data()[s..s + len * inner]);
    }
    let mut shape = xv.shape().to_vec();
    shape[axis] = len;
    let v = Tensor::from_parts(shape, data, xv.precision());
    Ok(g.record(&[x], v, NarrowRule { axis, start }))
}

struct ConcatRule {
    axis: usize,
}

impl Backward for ConcatRule {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (outer, total, inner) = split_axis(grad.shape(), self.axis);
        let mut offset = 0;
        inputs
            .iter()
            .zip(needs)
            .map(|(x, &need)| {
                let len = x.shape()[self.axis];
                let start = offset;
                offset += len;
                need.then(|| {
                    let mut data = Vec::with_capacity(x.numel());
                    for o in 0..outer {
                        let s = (o * total + start) * inner;
                        data.extend_from_slice(&grad.data()[s..s + len * inner]);
                    }
                    Tensor::from_parts(x.shape().to_vec(), data, x.precision())
                })
            })
            .collect()
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat(g: &mut Graph, xs: &[NodeId], axis: usize) -> Result<NodeId> {
    let first = g.value(*xs.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?);
    if axis >= first.rank() {
        return Err(Error::InvalidAxis {
            axis,
            rank: first.rank(),
        });
    }
    let mut shape = first.shape().to_vec();
    let precision = first.precision();
    shape[axis] = 0;
    for &x in xs {
        let v = g.value(x);
        let compatible = v.rank() == shape.len()
            && v.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::ShapeMismatch {
                op: "concat",
                left: first.shape().to_vec(),
                right: v.shape().to_vec(),
            });
        }
        if v.precision() != precision {
            return Err(Error::PrecisionMismatch { op: "concat" });
        }
        shape[axis] += v.shape()[axis];
    }
    let (outer, _, inner) = split_axis(&shape, axis);
    let mut data = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for &x in xs {
            let v = g.value(x);
            let len = v.shape()[axis] * inner;
            data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
        }
    }
    let v = Tensor::from_parts(shape, data, precision);
    Ok(g.record(xs, v, ConcatRule { axis }))
}

struct PadCropRule {
    amounts: Vec<(usize, usize)>,
    mode: PadMode,
}

impl Backward for PadCropRule {
    fn name(&self) -> &'static str {
        match self.mode {
            PadMode::ZeroPad => "zero_pad",
            PadMode::Crop => "crop",
        }
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let inverse = match self.mode {
            PadMode::ZeroPad => PadMode::Crop,
            PadMode::Crop => PadMode::ZeroPad,
        };
        vec![Some(grad.pad_crop(&self.amounts, inverse).expect("pad_crop backward"))]
    }
}

pub fn pad_crop(g: &mut Graph, x: NodeId, amounts: &[(usize, usize)], mode: PadMode) -> Result<NodeId> {
    let v = g.value(x).pad_crop(amounts, mode)?;
    Ok(g.record(
        &[x],
        v,
        PadCropRule {
            amounts: amounts.to_vec(),
            mode,
        },
    ))
}
