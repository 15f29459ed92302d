//! 2D and 3D convolution (cross-correlation, no kernel flip) with symmetric
//! zero padding.
//!
//! Layouts are channels-last: input `[N, (D,) H, W, C]`, kernel
//! `[(k_d,) k_h, k_w, C, F]`, output `[N, (D₂,) H₂, W₂, F]` where each output
//! extent is `(X + 2p - k) / s + 1` and must be integral. Both ranks share one
//! kernel; the 2D case runs as 3D with a unit depth axis.

use crate::autodiff::{Backward, Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
}

const AXES_2D: [&str; 2] = ["height", "width"];
const AXES_3D: [&str; 3] = ["depth", "height", "width"];

impl ConvSpec {
    pub fn new2d(filters: usize, kernel: [usize; 2], stride: [usize; 2], padding: [usize; 2]) -> Self {
        ConvSpec {
            filters,
            kernel: kernel.to_vec(),
            stride: stride.to_vec(),
            padding: padding.to_vec(),
        }
    }

    pub fn new3d(filters: usize, kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Self {
        ConvSpec {
            filters,
            kernel: kernel.to_vec(),
            stride: stride.to_vec(),
            padding: padding.to_vec(),
        }
    }

    pub fn spatial_rank(&self) -> usize {
        self.kernel.len()
    }

    pub(crate) fn axis_names(rank: usize) -> &'static [&'static str] {
        if rank == 3 {
            &AXES_3D
        } else {
            &AXES_2D
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.kernel.len();
        if !(r == 2 || r == 3) || self.stride.len() != r || self.padding.len() != r {
            return Err(Error::invalid(format!(
                "conv spec must have 2 or 3 consistent spatial axes: {self:?}"
            )));
        }
        if self.filters == 0 || self.kernel.contains(&0) || self.stride.contains(&0) {
            return Err(Error::invalid(format!(
                "conv spec needs positive filters, kernel and stride: {self:?}"
            )));
        }
        Ok(())
    }

    /// Output spatial extents for the given input spatial extents.
    pub fn output_extents(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        if input.len() != self.spatial_rank() {
            return Err(Error::invalid(format!(
                "conv: {} spatial input extents for a {}-axis kernel",
                input.len(),
                self.spatial_rank()
            )));
        }
        let names = Self::axis_names(self.spatial_rank());
        (0..input.len())
            .map(|i| {
                output_extent(input[i], self.kernel[i], self.stride[i], self.padding[i]).ok_or(
                    Error::NonIntegralExtent {
                        axis: names[i],
                        input: input[i],
                        pad: self.padding[i],
                        kernel: self.kernel[i],
                        stride: self.stride[i],
                    },
                )
            })
            .collect()
    }

    /// Trailing rows per axis that a floor-mode convolution would ignore.
    pub fn floor_trim(&self, input: &[usize]) -> Vec<usize> {
        (0..input.len())
            .map(|i| {
                let span = input[i] + 2 * self.padding[i];
                if span < self.kernel[i] {
                    0
                } else {
                    (span - self.kernel[i]) % self.stride[i]
                }
            })
            .collect()
    }
}

/// `(input + 2 pad - kernel) / stride + 1` if it is a positive integer.
pub fn output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = input + 2 * pad;
    if span < kernel || !(span - kernel).is_multiple_of(stride) {
        return None;
    }
    Some((span - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    input: [usize; 3],
    channels: usize,
    kernel: [usize; 3],
    filters: usize,
    output: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
}

impl Geometry {
    fn output_len(&self) -> usize {
        self.n * self.output.iter().product::<usize>() * self.filters
    }

    /// Calls `visit(out_base, x_base, w_base)` for every valid
    /// (output position, kernel tap) pair. Bases index the first channel or
    /// filter of the respective row.
    #[inline]
    fn for_each_tap(&self, mut visit: impl FnMut(usize, usize, usize)) {
        let [d, h, w] = self.input;
        let [od_n, oh_n, ow_n] = self.output;
        let [kd_n, kh_n, kw_n] = self.kernel;
        let (c, f) = (self.channels, self.filters);
        for n in 0..self.n {
            for od in 0..od_n {
                for oh in 0..oh_n {
                    for ow in 0..ow_n {
                        let out_base = (((n * od_n + od) * oh_n + oh) * ow_n + ow) * f;
                        for kd in 0..kd_n {
                            let Some(id) = (od * self.stride[0] + kd).checked_sub(self.pad[0]).filter(|&i| i < d)
                            else {
                                continue;
                            };
                            for kh in 0..kh_n {
                                let Some(ih) = (oh * self.stride[1] + kh).checked_sub(self.pad[1]).filter(|&i| i < h)
                                else {
                                    continue;
                                };
                                for kw in 0..kw_n {
                                    let Some(iw) =
                                        (ow * self.stride[2] + kw).checked_sub(self.pad[2]).filter(|&i| i < w)
                                    else {
                                        continue;
                                    };
                                    let x_base = (((n * d + id) * h + ih) * w + iw) * c;
                                    let w_base = ((kd * kh_n + kh) * kw_n + kw) * c * f;
                                    visit(out_base, x_base, w_base);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward(x: &[f64], weight: &[f64], bias: &[f64], geo: &Geometry) -> Vec<f64> {
    let (c, f) = (geo.channels, geo.filters);
    let mut out = vec![0.0; geo.output_len()];
    for row in out.chunks_mut(f) {
        row.copy_from_slice(bias);
    }
    geo.for_each_tap(|ob, xb, wb| {
        let out_row = &mut out[ob..ob + f];
        for ci in 0..c {
            let xv = x[xb + ci];
            if xv == 0.0 {
                continue;
            }
            let w_row = &weight[wb + ci * f..wb + (ci + 1) * f];
            for (o, &wv) in out_row.iter_mut().zip(w_row) {
                *o += xv * wv;
            }
        }
    });
    out
}

struct ConvGrads {
    dx: Option<Vec<f64>>,
    dw: Option<Vec<f64>>,
    db: Option<Vec<f64>>,
}

fn conv_backward(x: &[f64], weight: &[f64], dy: &[f64], geo: &Geometry, needs: [bool; 3]) -> ConvGrads {
    let (c, f) = (geo.channels, geo.filters);
    let mut dx = needs[0].then(|| vec![0.0; x.len()]);
    let mut dw = needs[1].then(|| vec![0.0; weight.len()]);
    let db = needs[2].then(|| {
        let mut db = vec![0.0; f];
        for row in dy.chunks(f) {
            for (a, v) in db.iter_mut().zip(row) {
                *a += v;
            }
        }
        db
    });
    if dx.is_some() || dw.is_some() {
        geo.for_each_tap(|ob, xb, wb| {
            let g_row = &dy[ob..ob + f];
            for ci in 0..c {
                let w_row = &weight[wb + ci * f..wb + (ci + 1) * f];
                if let Some(dx) = dx.as_mut() {
                    dx[xb + ci] += w_row.iter().zip(g_row).map(|(a, b)| a * b).sum::<f64>();
                }
                if let Some(dw) = dw.as_mut() {
                    let xv = x[xb + ci];
                    if xv != 0.0 {
                        for (d, &gv) in dw[wb + ci * f..wb + (ci + 1) * f].iter_mut().zip(g_row) {
                            *d += xv * gv;
                        }
                    }
                }
            }
        });
    }
    ConvGrads { dx, dw, db }
}

struct ConvRule {
    geo: Geometry,
}

impl Backward for ConvRule {
    fn name(&self) -> &'static str {
        "conv"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
        let grads = conv_backward(
            x.data(),
            w.data(),
            grad.data(),
            &self.geo,
            [needs[0], needs[1], needs[2]],
        );
        let p = grad.precision();
        vec![
            grads.dx.map(|d| Tensor::from_parts(x.shape().to_vec(), d, p)),
            grads.dw.map(|d| Tensor::from_parts(w.shape().to_vec(), d, p)),
            grads.db.map(|d| Tensor::from_parts(b.shape().to_vec(), d, p)),
        ]
    }
}

fn conv_nd(g: &mut Graph, x: NodeId, weight: NodeId, bias: NodeId, spec: &ConvSpec) -> Result<NodeId> {
    spec.validate()?;
    let r = spec.spatial_rank();
    let (xv, wv, bv) = (g.value(x), g.value(weight), g.value(bias));
    let mismatch = |left: &Tensor, right: &Tensor| Error::ShapeMismatch {
        op: if r == 3 { "conv3d" } else { "conv2d" },
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    };
    if xv.rank() != r + 2 || wv.rank() != r + 2 {
        return Err(mismatch(xv, wv));
    }
    let c = xv.shape()[r + 1];
    let f = wv.shape()[r + 1];
    if wv.shape()[..r] != spec.kernel[..] || wv.shape()[r] != c || f != spec.filters {
        return Err(mismatch(xv, wv));
    }
    if bv.shape() != [f] {
        return Err(mismatch(wv, bv));
    }
    if xv.precision() != wv.precision() || wv.precision() != bv.precision() {
        return Err(Error::PrecisionMismatch { op: "conv" });
    }
    let out_spatial = spec.output_extents(&xv.shape()[1..r + 1])?;

    let lift = |v: &[usize], fill: usize| -> [usize; 3] {
        if r == 3 {
            [v[0], v[1], v[2]]
        } else {
            [fill, v[0], v[1]]
        }
    };
    let geo = Geometry {
        n: xv.shape()[0],
        input: lift(&xv.shape()[1..r + 1], 1),
        channels: c,
        kernel: lift(&spec.kernel, 1),
        filters: f,
        output: lift(&out_spatial, 1),
        stride: lift(&spec.stride, 1),
        pad: lift(&spec.padding, 0),
    };
    let out = conv_forward(xv.data(), wv.data(), bv.data(), &geo);
    let mut shape = vec![geo.n];
    shape.extend_from_slice(&out_spatial);
    shape.push(f);
    let value = Tensor::from_parts(shape, out, xv.precision());
    Ok(g.record(&[x, weight, bias], value, ConvRule { geo }))
}

/// `x: [N, H, W, C]`, `weight: [k_h, k_w, C, F]`, `bias: [F]`.
pub fn conv2d(g: &mut Graph, x: NodeId, weight: NodeId, bias: NodeId, spec: &ConvSpec) -> Result<NodeId> {
    if spec.spatial_rank() != 2 {
        return Err(Error::invalid("conv2d needs a 2-axis spec"));
    }
    conv_nd(g, x, weight, bias, spec)
}

/// `x: [N, D, H, W, C]`, `weight: [k_d, k_h, k_w, C, F]`, `bias: [F]`.
pub fn conv3d(g: &mut Graph, x: NodeId, weight: NodeId, bias: NodeId, spec: &ConvSpec) -> Result<NodeId> {
    if spec.spatial_rank() != 3 {
        return Err(Error::invalid("conv3d needs a 3-axis spec"));
    }
    conv_nd(g, x, weight, bias, spec)
}

/// Dispatches on the spec's spatial rank.
pub fn conv(g: &mut Graph, x: NodeId, weight: NodeId, bias: NodeId, spec: &ConvSpec) -> Result<NodeId> {
    conv_nd(g, x, weight, bias, spec)
}
