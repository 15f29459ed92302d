//! Spatial batch normalization over a channels-last tensor.
//!
//! Statistics are taken per channel over every non-channel axis (batch and
//! all spatial axes). Train mode uses the batch statistics (biased variance)
//! and yields them for the running averages; infer mode uses the running
//! averages only.

use crate::autodiff::{Backward, Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.99;
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Tensor,
    pub var: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl RunningStats {
    pub fn new(channels: usize, precision: Precision) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[channels], precision),
            var: Tensor::ones(&[channels], precision),
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        }
    }

    /// `running <- momentum * running + (1 - momentum) * batch`.
    pub fn update(&mut self, batch: &BatchStats) {
        let m = self.momentum;
        for (r, b) in self.mean.data_mut().iter_mut().zip(batch.mean.data()) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.var.data_mut().iter_mut().zip(batch.var.data()) {
            *r = m * *r + (1.0 - m) * b;
        }
        self.mean.round_in_place();
        self.var.round_in_place();
    }
}

/// Learned scale and shift plus running statistics of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running: RunningStats,
}

impl BatchNormParams {
    pub fn new(channels: usize, precision: Precision) -> Self {
        BatchNormParams {
            gamma: Tensor::ones(&[channels], precision),
            beta: Tensor::zeros(&[channels], precision),
            running: RunningStats::new(channels, precision),
        }
    }
}

fn check_operands(g: &Graph, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<usize> {
    let xv = g.value(x);
    let c = *xv
        .shape()
        .last()
        .ok_or_else(|| Error::invalid("batch norm of a rank-0 tensor"))?;
    for p in [gamma, beta] {
        let pv = g.value(p);
        if pv.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "spatial_batchnorm",
                left: xv.shape().to_vec(),
                right: pv.shape().to_vec(),
            });
        }
        if pv.precision() != xv.precision() {
            return Err(Error::PrecisionMismatch {
                op: "spatial_batchnorm",
            });
        }
    }
    Ok(c)
}

struct BnTrainRule {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Backward for BnTrainRule {
    fn name(&self) -> &'static str {
        "batchnorm_train"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let c = gamma.numel();
        let m = (x.numel() / c) as f64;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for (i, &dy) in grad.data().iter().enumerate() {
            let ch = i % c;
            sum_dy[ch] += dy;
            sum_dy_xhat[ch] += dy * self.xhat[i];
        }
        let p = grad.precision();
        let dx = needs[0].then(|| {
            let data = grad
                .data()
                .iter()
                .enumerate()
                .map(|(i, &dy)| {
                    let ch = i % c;
                    gamma.data()[ch] * self.inv_std[ch] / m * (m * dy - sum_dy[ch] - self.xhat[i] * sum_dy_xhat[ch])
                })
                .collect();
            Tensor::from_parts(x.shape().to_vec(), data, p)
        });
        vec![
            dx,
            needs[1].then(|| Tensor::from_parts(vec![c], sum_dy_xhat, p)),
            needs[2].then(|| Tensor::from_parts(vec![c], sum_dy, p)),
        ]
    }
}

/// Normalizes with batch statistics. Errors when a channel has a single
/// element (variance undefined).
pub fn batch_norm_train(
    g: &mut Graph,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    eps: f64,
) -> Result<(NodeId, BatchStats)> {
    let c = check_operands(g, x, gamma, beta)?;
    let (xv, gv, bv) = (g.value(x), g.value(gamma), g.value(beta));
    let per_channel = xv.numel() / c.max(1);
    if per_channel < 2 {
        return Err(Error::invalid(format!(
            "spatial_batchnorm in train mode needs more than one element per channel (input {:?})",
            xv.shape()
        )));
    }
    let m = per_channel as f64;
    let mut mean = vec![0.0; c];
    for (i, v) in xv.data().iter().enumerate() {
        mean[i % c] += v;
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![0.0; c];
    for (i, v) in xv.data().iter().enumerate() {
        let d = v - mean[i % c];
        var[i % c] += d * d;
    }
    var.iter_mut().for_each(|v| *v /= m);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let xhat: Vec<f64> = xv
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| (v - mean[i % c]) * inv_std[i % c])
        .collect();
    let out: Vec<f64> = xhat
        .iter()
        .enumerate()
        .map(|(i, h)| gv.data()[i % c] * h + bv.data()[i % c])
        .collect();
    let p = xv.precision();
    let value = Tensor::from_parts(xv.shape().to_vec(), out, p);
    let stats = BatchStats {
        mean: Tensor::from_parts(vec![c], mean, p),
        var: Tensor::from_parts(vec![c], var, p),
    };
    let id = g.record(&[x, gamma, beta], value, BnTrainRule { xhat, inv_std });
    Ok((id, stats))
}

struct BnInferRule {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Backward for BnInferRule {
    fn name(&self) -> &'static str {
        "batchnorm_infer"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let c = gamma.numel();
        let p = grad.precision();
        let dx = needs[0].then(|| {
            let data = grad
                .data()
                .iter()
                .enumerate()
                .map(|(i, dy)| dy * gamma.data()[i % c] * self.inv_std[i % c])
                .collect();
            Tensor::from_parts(x.shape().to_vec(), data, p)
        });
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for (i, (&dy, &xv)) in grad.data().iter().zip(x.data()).enumerate() {
            let ch = i % c;
            dgamma[ch] += dy * (xv - self.mean[ch]) * self.inv_std[ch];
            dbeta[ch] += dy;
        }
        vec![
            dx,
            needs[1].then(|| Tensor::from_parts(vec![c], dgamma, p)),
            needs[2].then(|| Tensor::from_parts(vec![c], dbeta, p)),
        ]
    }
}

/// Normalizes with fixed (running) statistics.
pub fn batch_norm_infer(
    g: &mut Graph,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    mean: &Tensor,
    var: &Tensor,
    eps: f64,
) -> Result<NodeId> {
    let c = check_operands(g, x, gamma, beta)?;
    if mean.shape() != [c] || var.shape() != [c] {
        return Err(Error::ShapeMismatch {
            op: "spatial_batchnorm",
            left: vec![c],
            right: mean.shape().to_vec(),
        });
    }
    let (xv, gv, bv) = (g.value(x), g.value(gamma), g.value(beta));
    let inv_std: Vec<f64> = var.data().iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mean = mean.data().to_vec();
    let out = xv
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let ch = i % c;
            gv.data()[ch] * (v - mean[ch]) * inv_std[ch] + bv.data()[ch]
        })
        .collect();
    let value = Tensor::from_parts(xv.shape().to_vec(), out, xv.precision());
    Ok(g.record(&[x, gamma, beta], value, BnInferRule { mean, inv_std }))
}

/// Batch norm with in-place running-statistics update in train mode.
pub fn spatial_batchnorm(
    g: &mut Graph,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    running: &mut RunningStats,
    mode: BnMode,
) -> Result<NodeId> {
    match mode {
        BnMode::Train => {
            let (y, stats) = batch_norm_train(g, x, gamma, beta, running.eps)?;
            running.update(&stats);
            Ok(y)
        }
        BnMode::Infer => batch_norm_infer(g, x, gamma, beta, &running.mean, &running.var, running.eps),
    }
}
