//! Dense row-major tensors.
//!
//! Storage is always `f64`. A [`Precision`] tag decides whether values are
//! additionally rounded to the nearest `f32` whenever a tensor is produced, so
//! single-precision tensors only ever hold values representable as `f32`.
//! Images use the channels-last convention: `(H, W, C)` for frames and
//! `(D, H, W, C)` for frame sequences, with a leading batch axis where needed.

mod rng;

pub use rng::{derive_seed, SeededRng};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Single,
    Double,
}

impl Precision {
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            Precision::Single => v as f32 as f64,
            Precision::Double => v,
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Precision::Single => 0,
            Precision::Double => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Precision::Single),
            1 => Some(Precision::Double),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::Single => "single",
            Precision::Double => "double",
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            other => Err(format!("unknown precision `{other}` (expected single or double)")),
        }
    }
}

/// Elementwise maps supported by [`Tensor::map_unary`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Relu,
    Tanh,
    Negate,
    Scale(f64),
    Sigmoid,
}

impl Unary {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Unary::Tanh => x.tanh(),
            Unary::Negate => -x,
            Unary::Scale(a) => a * x,
            Unary::Sigmoid => sigmoid(x),
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    ZeroPad,
    Crop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    precision: Precision,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl Tensor {
    /// Builds a tensor, rounding every element to `precision`.
    pub fn new(shape: Vec<usize>, mut data: Vec<f64>, precision: Precision) -> Result<Self> {
        if data.len() != numel(&shape) {
            return Err(Error::invalid(format!(
                "data length {} does not match shape {:?} ({} elements)",
                data.len(),
                shape,
                numel(&shape)
            )));
        }
        if precision == Precision::Single {
            data.iter_mut().for_each(|v| *v = precision.round(*v));
        }
        Ok(Tensor { shape, data, precision })
    }

    /// Internal constructor for callers that already guarantee the length.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>, precision: Precision) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        let mut t = Tensor { shape, data, precision };
        if precision == Precision::Single {
            t.data.iter_mut().for_each(|v| *v = precision.round(*v));
        }
        t
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Tensor::new(shape.to_vec(), data, Precision::Double)
    }

    pub fn zeros(shape: &[usize], precision: Precision) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
            precision,
        }
    }

    pub fn ones(shape: &[usize], precision: Precision) -> Self {
        Tensor::full(shape, 1.0, precision)
    }

    pub fn full(shape: &[usize], value: f64, precision: Precision) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![precision.round(value); numel(shape)],
            precision,
        }
    }

    pub fn scalar(value: f64, precision: Precision) -> Self {
        Tensor::full(&[], value, precision)
    }

    pub fn eye(n: usize, precision: Precision) -> Self {
        let mut t = Tensor::zeros(&[n, n], precision);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn uniform(shape: &[usize], low: f64, high: f64, rng: &mut SeededRng, precision: Precision) -> Self {
        let data = (0..numel(shape)).map(|_| rng.uniform_range(low, high)).collect();
        Tensor::from_parts(shape.to_vec(), data, precision)
    }

    pub fn normal(shape: &[usize], std: f64, rng: &mut SeededRng, precision: Precision) -> Self {
        let data = (0..numel(shape)).map(|_| std * rng.normal()).collect();
        Tensor::from_parts(shape.to_vec(), data, precision)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw buffer. Values written here are not rounded;
    /// call [`Tensor::round_in_place`] afterwards for single precision.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn round_in_place(&mut self) {
        let p = self.precision;
        if p == Precision::Single {
            self.data.iter_mut().for_each(|v| *v = p.round(*v));
        }
    }

    pub fn to_precision(&self, precision: Precision) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.clone(), precision)
    }

    /// Value of a rank-0 (or single-element) tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(i, n)| i >= n) {
            return Err(Error::invalid(format!(
                "index {:?} out of bounds for shape {:?}",
                index, self.shape
            )));
        }
        Ok(index.iter().zip(self.strides()).map(|(i, s)| i * s).sum())
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
            precision: self.precision,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map_unary(&self, f: Unary) -> Tensor {
        let data = self.data.iter().map(|&x| f.apply(x)).collect();
        Tensor::from_parts(self.shape.clone(), data, self.precision)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data.iter().map(|&x| f(x)).collect();
        Tensor::from_parts(self.shape.clone(), data, self.precision)
    }

    pub fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor::from_parts(self.shape.clone(), data, self.precision))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        self.map_unary(Unary::Scale(alpha))
    }

    pub(crate) fn check_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        if self.precision != other.precision {
            return Err(Error::PrecisionMismatch { op });
        }
        Ok(())
    }

    /// `self` is `m×k`, `other` is `k×n`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        if self.precision != other.precision {
            return Err(Error::PrecisionMismatch { op: "matmul" });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Ok(Tensor::from_parts(vec![m, n], out, self.precision))
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::invalid(format!("transpose of rank-{} tensor", self.rank())));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor::from_parts(vec![n, m], out, self.precision))
    }

    /// Zero-pads or crops each axis by `(leading, trailing)` amounts.
    pub fn pad_crop(&self, amounts: &[(usize, usize)], mode: PadMode) -> Result<Tensor> {
        if amounts.len() != self.rank() {
            return Err(Error::invalid(format!(
                "pad_crop: {} amount pairs for a rank-{} tensor",
                amounts.len(),
                self.rank()
            )));
        }
        let out_shape: Vec<usize> = match mode {
            PadMode::ZeroPad => self.shape.iter().zip(amounts).map(|(&n, &(a, b))| n + a + b).collect(),
            PadMode::Crop => {
                let mut s = Vec::with_capacity(self.rank());
                for (axis, (&n, &(a, b))) in self.shape.iter().zip(amounts).enumerate() {
                    if a + b > n {
                        return Err(Error::OverCrop {
                            axis,
                            amount: a + b,
                            extent: n,
                        });
                    }
                    s.push(n - a - b);
                }
                s
            }
        };
        let mut out = vec![0.0; numel(&out_shape)];
        let (src_shape, dst_shape) = match mode {
            PadMode::ZeroPad => (&self.shape, &out_shape),
            PadMode::Crop => (&out_shape, &self.shape),
        };
        // Walk the smaller (inner) region; map into the larger one.
        let inner = src_shape;
        let inner_strides = strides(inner);
        let outer_strides = strides(dst_shape);
        let total = numel(inner);
        for flat in 0..total {
            let mut rem = flat;
            let mut outer_off = 0;
            for ax in 0..inner.len() {
                let i = rem / inner_strides[ax];
                rem %= inner_strides[ax];
                outer_off += (i + amounts[ax].0) * outer_strides[ax];
            }
            match mode {
                PadMode::ZeroPad => out[outer_off] = self.data[flat],
                PadMode::Crop => out[flat] = self.data[outer_off],
            }
        }
        Ok(Tensor::from_parts(out_shape, out, self.precision))
    }

    /// Reduces over `axes`. Reduced axes are dropped unless `keep_dims`.
    pub fn reduce(&self, axes: &[usize], kind: ReduceKind, keep_dims: bool) -> Result<Tensor> {
        let rank = self.rank();
        let mut reduced = vec![false; rank];
        for &a in axes {
            if a >= rank {
                return Err(Error::InvalidAxis { axis: a, rank });
            }
            if reduced[a] {
                return Err(Error::invalid(format!("reduce: axis {a} listed twice")));
            }
            reduced[a] = true;
        }
        let kept_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&reduced)
            .map(|(&n, &r)| if r { 1 } else { n })
            .collect();
        let out_n = numel(&kept_shape);
        let count: usize = self
            .shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(n, _)| *n)
            .product();
        let init = match kind {
            ReduceKind::Max => f64::NEG_INFINITY,
            _ => 0.0,
        };
        let mut out = vec![init; out_n];
        let in_strides = self.strides();
        let out_strides = strides(&kept_shape);
        for (flat, &v) in self.data.iter().enumerate() {
            let mut rem = flat;
            let mut o = 0;
            for ax in 0..rank {
                let i = rem / in_strides[ax];
                rem %= in_strides[ax];
                if !reduced[ax] {
                    o += i * out_strides[ax];
                }
            }
            match kind {
                ReduceKind::Max => {
                    if v > out[o] {
                        out[o] = v
                    }
                }
                _ => out[o] += v,
            }
        }
        if kind == ReduceKind::Mean && count > 0 {
            out.iter_mut().for_each(|v| *v /= count as f64);
        }
        let shape = if keep_dims {
            kept_shape
        } else {
            self.shape
                .iter()
                .zip(&reduced)
                .filter(|(_, &r)| !r)
                .map(|(n, _)| *n)
                .collect()
        };
        Ok(Tensor::from_parts(shape, out, self.precision))
    }
}

/// `out += a(m×k) · b(k×n)`, row-major.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}
