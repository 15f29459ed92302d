use crate::autodiff::{ops, Backward, Graph, NodeId};
use crate::error::{Error, Result};
use crate::nn::conv::{output_extent, ConvSpec};
use crate::tensor::{ReduceKind, Tensor};

struct MaxPoolRule {
    /// For each output element, the flat input index of the winning element.
    argmax: Vec<usize>,
}

impl Backward for MaxPoolRule {
    fn name(&self) -> &'static str {
        "max_pool"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let mut dx = vec![0.0; x.numel()];
        for (&src, &g) in self.argmax.iter().zip(grad.data()) {
            dx[src] += g;
        }
        vec![Some(Tensor::from_parts(x.shape().to_vec(), dx, x.precision()))]
    }
}

/// Max pooling without padding over the spatial axes of a channels-last
/// tensor (`[N, H, W, C]` or `[N, D, H, W, C]`).
pub fn max_pool(g: &mut Graph, x: NodeId, window: &[usize], stride: &[usize]) -> Result<NodeId> {
    let xv = g.value(x);
    let r = window.len();
    if !(r == 2 || r == 3) || stride.len() != r || xv.rank() != r + 2 {
        return Err(Error::invalid(format!(
            "max_pool: window {window:?} / stride {stride:?} do not fit input {:?}",
            xv.shape()
        )));
    }
    let names = ConvSpec::axis_names(r);
    let spatial = &xv.shape()[1..r + 1];
    let mut out_spatial = Vec::with_capacity(r);
    for i in 0..r {
        let e = output_extent(spatial[i], window[i], stride[i], 0).ok_or(Error::NonIntegralExtent {
            axis: names[i],
            input: spatial[i],
            pad: 0,
            kernel: window[i],
            stride: stride[i],
        })?;
        out_spatial.push(e);
    }
    let lift = |v: &[usize]| -> [usize; 3] {
        if r == 3 {
            [v[0], v[1], v[2]]
        } else {
            [1, v[0], v[1]]
        }
    };
    let (n, c) = (xv.shape()[0], xv.shape()[r + 1]);
    let [d, h, w] = lift(spatial);
    let [od_n, oh_n, ow_n] = lift(&out_spatial);
    let [kd_n, kh_n, kw_n] = lift(window);
    let [sd, sh, sw] = lift(stride);
    let mut out = Vec::with_capacity(n * od_n * oh_n * ow_n * c);
    let mut argmax = Vec::with_capacity(out.capacity());
    let data = xv.data();
    for b in 0..n {
        for od in 0..od_n {
            for oh in 0..oh_n {
                for ow in 0..ow_n {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_i = 0;
                        for kd in 0..kd_n {
                            for kh in 0..kh_n {
                                for kw in 0..kw_n {
                                    let (id, ih, iw) = (od * sd + kd, oh * sh + kh, ow * sw + kw);
                                    let i = (((b * d + id) * h + ih) * w + iw) * c + ch;
                                    if data[i] > best {
                                        best = data[i];
                                        best_i = i;
                                    }
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_i);
                    }
                }
            }
        }
    }
    let mut shape = vec![n];
    shape.extend_from_slice(&out_spatial);
    shape.push(c);
    let value = Tensor::from_parts(shape, out, xv.precision());
    Ok(g.record(&[x], value, MaxPoolRule { argmax }))
}

/// Mean over all spatial axes: `[N, ..., C] -> [N, C]`.
pub fn global_avg_pool(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let rank = g.value(x).rank();
    if rank < 3 {
        return Err(Error::invalid(format!("global_avg_pool needs rank >= 3, got {rank}")));
    }
    let axes: Vec<usize> = (1..rank - 1).collect();
    ops::reduce(g, x, &axes, ReduceKind::Mean, false)
}
