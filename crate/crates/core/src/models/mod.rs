//! Model graphs and the three steering architectures.
//!
//! A [`ModelGraph`] is a topologically ordered list of layers. Each layer
//! reads the outputs of earlier layers (by index), so residual shortcuts are
//! ordinary `Add` layers and the layer index doubles as the unit of freezing:
//! freezing `n` layers marks every parameter owned by layers `0..n` as
//! non-trainable. Parameter names embed the owning layer index
//! (`L038_res3a_branch2a/kernel`), which keeps that policy inspectable.
//!
//! Batch-norm running statistics are buffers, not parameters: they are saved
//! in checkpoints but never counted by [`ModelGraph::param_count`] and never
//! touched by the optimizer.

mod builders;
pub mod checkpoint;

pub use builders::{
    build_conv3d_lstm, build_nvidia, build_nvidia_sized, build_transfer, Conv3dLstmConfig, ConvLayerConfig,
    ResidualConfig, TransferConfig, CONV3D_LSTM_PARAM_COUNT, NVIDIA_PARAM_COUNT, TRANSFER_FULL_PARAM_COUNT,
    TRANSFER_TRUNK_LAYERS,
};
pub use checkpoint::{Checkpoint, ImportReport, Metadata};

use crate::autodiff::{ops, Graph, NodeId};
use crate::error::{Error, Result};
use crate::nn::{self, BatchStats, BnMode, ConvSpec, LstmParams};
use crate::tensor::{derive_seed, numel, PadMode, Precision, SeededRng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Input,
    /// Symmetric zero padding of every spatial axis.
    ZeroPad {
        padding: Vec<usize>,
    },
    /// Convolution; `trim` trailing rows per spatial axis are dropped first so
    /// strided layers behave like floor-mode convolutions.
    Conv {
        spec: ConvSpec,
        trim: Vec<usize>,
    },
    BatchNorm {
        momentum: f64,
        eps: f64,
    },
    Relu,
    MaxPool {
        window: Vec<usize>,
        stride: Vec<usize>,
        trim: Vec<usize>,
    },
    GlobalAvgPool,
    Flatten,
    Dense {
        units: usize,
        relu: bool,
    },
    /// Elementwise sum of all inputs.
    Add,
    /// `[B, S, ...] -> [B*S, ...]`.
    FoldSequences,
    /// `[B*S, ...] -> [B, S, features]`.
    UnfoldSequences {
        steps: usize,
    },
    /// Stateless per call: every window starts from zero state.
    Lstm {
        hidden: usize,
        return_sequences: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    /// Indices of the layers whose outputs feed this one.
    pub inputs: Vec<usize>,
    /// Per-sample output shape (batch axis excluded).
    pub output_shape: Vec<usize>,
    pub params: Vec<usize>,
    pub buffers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub name: String,
    pub value: Tensor,
}

/// Result of one forward pass.
pub struct Forward {
    /// `[B]` predictions.
    pub output: NodeId,
    /// Batch statistics per batch-norm layer (train mode only).
    pub batch_stats: Vec<(usize, BatchStats)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub id: String,
    pub precision: Precision,
    pub layers: Vec<Layer>,
    pub params: Vec<Parameter>,
    pub buffers: Vec<Buffer>,
}

impl ModelGraph {
    /// Per-sample input shape.
    pub fn input_shape(&self) -> &[usize] {
        &self.layers[0].output_shape
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn layer_param_count(&self, layer: usize) -> usize {
        self.layers[layer]
            .params
            .iter()
            .map(|&i| self.params[i].value.numel())
            .sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Marks parameters of layers `0..n` frozen and every other one trainable.
    pub fn freeze_layers(&mut self, n: usize) -> Result<()> {
        if n > self.layers.len() {
            return Err(Error::invalid(format!(
                "freeze_layers = {n} exceeds the model's {} layers",
                self.layers.len()
            )));
        }
        for p in &mut self.params {
            p.trainable = p.layer >= n;
        }
        Ok(())
    }

    pub fn frozen_names(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| !p.trainable)
            .map(|p| p.name.as_str())
            .collect()
    }

    /// Records every parameter in `g`. Trainable parameters become gradient
    /// leaves when `track_grads` is set; everything else is a constant.
    pub fn bind(&self, g: &mut Graph, track_grads: bool) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|p| {
                if track_grads && p.trainable {
                    g.variable(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Runs the model on `x: [B, input_shape...]` with parameters bound by
    /// [`bind`](Self::bind).
    pub fn forward(&self, g: &mut Graph, x: NodeId, params: &[NodeId], mode: BnMode) -> Result<Forward> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != self.input_shape().len() + 1 || shape[1..] != *self.input_shape() {
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: shape,
                right: self.input_shape().to_vec(),
            });
        }
        let batch = shape[0];
        let mut values: Vec<NodeId> = Vec::with_capacity(self.layers.len());
        let mut batch_stats = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            let input = layer.inputs.first().map(|&i| values[i]);
            let arg = || input.expect("non-input layer has an input");
            let p = |k: usize| params[layer.params[k]];
            let out = match &layer.kind {
                LayerKind::Input => x,
                LayerKind::ZeroPad { padding } => {
                    let amounts = spatial_amounts(padding, |v| (v, v));
                    ops::pad_crop(g, arg(), &amounts, PadMode::ZeroPad)?
                }
                LayerKind::Conv { spec, trim } => {
                    let h = crop_trailing(g, arg(), trim)?;
                    nn::conv(g, h, p(0), p(1), spec)?
                }
                LayerKind::BatchNorm { eps, .. } => match mode {
                    BnMode::Train => {
                        let (y, stats) = nn::batch_norm_train(g, arg(), p(0), p(1), *eps)?;
                        batch_stats.push((idx, stats));
                        y
                    }
                    BnMode::Infer => {
                        let (mean, var) = (
                            &self.buffers[layer.buffers[0]].value,
                            &self.buffers[layer.buffers[1]].value,
                        );
                        nn::batch_norm_infer(g, arg(), p(0), p(1), mean, var, *eps)?
                    }
                },
                LayerKind::Relu => ops::relu(g, arg()),
                LayerKind::MaxPool { window, stride, trim } => {
                    let h = crop_trailing(g, arg(), trim)?;
                    nn::max_pool(g, h, window, stride)?
                }
                LayerKind::GlobalAvgPool => nn::global_avg_pool(g, arg())?,
                LayerKind::Flatten => ops::reshape(g, arg(), &[batch, numel(&layer.output_shape)])?,
                LayerKind::Dense { relu, .. } => {
                    let y = nn::dense(g, arg(), p(0), p(1))?;
                    if *relu {
                        ops::relu(g, y)
                    } else {
                        y
                    }
                }
                LayerKind::Add => {
                    let mut acc = values[layer.inputs[0]];
                    for &i in &layer.inputs[1..] {
                        acc = ops::add(g, acc, values[i])?;
                    }
                    acc
                }
                LayerKind::FoldSequences => {
                    let in_shape = &self.layers[layer.inputs[0]].output_shape;
                    let mut s = vec![batch * in_shape[0]];
                    s.extend_from_slice(&layer.output_shape);
                    ops::reshape(g, arg(), &s)?
                }
                LayerKind::UnfoldSequences { steps } => {
                    let per_step = layer.output_shape[1];
                    let total = g.value(arg()).shape()[0];
                    ops::reshape(g, arg(), &[total / steps, *steps, per_step])?
                }
                LayerKind::Lstm {
                    hidden,
                    return_sequences,
                } => {
                    let w = LstmParams {
                        input: p(0),
                        recurrent: p(1),
                        bias: p(2),
                    };
                    let seq = nn::lstm_layer(g, arg(), &w, None)?;
                    if *return_sequences {
                        seq
                    } else {
                        let steps = g.value(seq).shape()[1];
                        let last = ops::narrow(g, seq, 1, steps - 1, 1)?;
                        ops::reshape(g, last, &[batch, *hidden])?
                    }
                }
            };
            values.push(out);
        }
        let last = *values.last().expect("model has layers");
        let output = ops::reshape(g, last, &[batch])?;
        Ok(Forward { output, batch_stats })
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn commit_batch_stats(&mut self, stats: &[(usize, BatchStats)]) {
        for (layer_idx, batch) in stats {
            let layer = &self.layers[*layer_idx];
            let LayerKind::BatchNorm { momentum, .. } = layer.kind else {
                continue;
            };
            let pairs = [(layer.buffers[0], &batch.mean), (layer.buffers[1], &batch.var)];
            for (buf, b) in pairs {
                let running = &mut self.buffers[buf].value;
                for (r, v) in running.data_mut().iter_mut().zip(b.data()) {
                    *r = momentum * *r + (1.0 - momentum) * v;
                }
                running.round_in_place();
            }
        }
    }

    /// Inference-mode predictions for `x: [B, input_shape...]`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let xi = g.constant(x.to_precision(self.precision));
        let out = self.forward(&mut g, xi, &params, BnMode::Infer)?;
        Ok(g.value(out.output).clone())
    }
}

fn spatial_amounts(per_axis: &[usize], f: impl Fn(usize) -> (usize, usize)) -> Vec<(usize, usize)> {
    let mut amounts = vec![(0, 0)];
    amounts.extend(per_axis.iter().map(|&v| f(v)));
    amounts.push((0, 0));
    amounts
}

fn crop_trailing(g: &mut Graph, x: NodeId, trim: &[usize]) -> Result<NodeId> {
    if trim.iter().all(|&t| t == 0) {
        return Ok(x);
    }
    let amounts = spatial_amounts(trim, |t| (0, t));
    ops::pad_crop(g, x, &amounts, PadMode::Crop)
}

/// Initial value policy for a new parameter.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    HeUniform {
        fan_in: usize,
    },
    /// Uniform in `±bound`.
    Uniform(f64),
    Zeros,
    Ones,
}

/// Incremental model construction with shape inference.
///
/// Layers are appended after the current layer unless explicit inputs are
/// given. Every parameter draws from its own stream derived from the seed
/// and its creation index, so rebuilding with one seed is bit-identical.
pub struct ModelBuilder {
    graph: ModelGraph,
    seed: u64,
    current: usize,
}

impl ModelBuilder {
    pub fn new(id: &str, input_shape: &[usize], seed: u64, precision: Precision) -> Self {
        let input = Layer {
            name: "input".into(),
            kind: LayerKind::Input,
            inputs: vec![],
            output_shape: input_shape.to_vec(),
            params: vec![],
            buffers: vec![],
        };
        ModelBuilder {
            graph: ModelGraph {
                id: id.into(),
                precision,
                layers: vec![input],
                params: vec![],
                buffers: vec![],
            },
            seed,
            current: 0,
        }
    }

    /// Index of the most recently added layer.
    pub fn current(&self) -> usize {
        self.current
    }

    pub fn shape(&self, layer: usize) -> &[usize] {
        &self.graph.layers[layer].output_shape
    }

    pub fn layer_count(&self) -> usize {
        self.graph.layers.len()
    }

    fn push(&mut self, name: &str, kind: LayerKind, inputs: Vec<usize>, output_shape: Vec<usize>) -> usize {
        let idx = self.graph.layers.len();
        self.graph.layers.push(Layer {
            name: name.into(),
            kind,
            inputs,
            output_shape,
            params: vec![],
            buffers: vec![],
        });
        self.current = idx;
        idx
    }

    fn param(&mut self, layer: usize, suffix: &str, shape: &[usize], init: Init) {
        let idx = self.graph.params.len();
        let mut rng = SeededRng::new(derive_seed(self.seed, &[idx as u64]));
        let p = self.graph.precision;
        let value = match init {
            Init::HeUniform { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                Tensor::uniform(shape, -bound, bound, &mut rng, p)
            }
            Init::Uniform(bound) => Tensor::uniform(shape, -bound, bound, &mut rng, p),
            Init::Zeros => Tensor::zeros(shape, p),
            Init::Ones => Tensor::ones(shape, p),
        };
        let name = format!("L{layer:03}_{}/{suffix}", self.graph.layers[layer].name);
        self.graph.params.push(Parameter {
            name,
            value,
            trainable: true,
            layer,
        });
        self.graph.layers[layer].params.push(idx);
    }

    fn buffer(&mut self, layer: usize, suffix: &str, value: Tensor) {
        let idx = self.graph.buffers.len();
        let name = format!("L{layer:03}_{}/{suffix}", self.graph.layers[layer].name);
        self.graph.buffers.push(Buffer { name, value });
        self.graph.layers[layer].buffers.push(idx);
    }

    pub fn zero_pad(&mut self, name: &str, padding: &[usize]) -> Result<usize> {
        let input = self.shape(self.current).to_vec();
        let r = input.len() - 1;
        if padding.len() != r {
            return Err(Error::invalid(format!(
                "{name}: padding {padding:?} for input {input:?}"
            )));
        }
        let mut out: Vec<usize> = (0..r).map(|i| input[i] + 2 * padding[i]).collect();
        out.push(input[r]);
        Ok(self.push(
            name,
            LayerKind::ZeroPad {
                padding: padding.to_vec(),
            },
            vec![self.current],
            out,
        ))
    }

    /// Convolution with bias, reading from `from` (or the current layer).
    pub fn conv_from(&mut self, from: usize, name: &str, spec: ConvSpec) -> Result<usize> {
        spec.validate()?;
        let input = self.shape(from).to_vec();
        let r = spec.spatial_rank();
        if input.len() != r + 1 {
            return Err(Error::invalid(format!("{name}: {r}-axis conv on input {input:?}")));
        }
        let spatial = &input[..r];
        let trim = spec.floor_trim(spatial);
        let trimmed: Vec<usize> = spatial.iter().zip(&trim).map(|(a, t)| a - t).collect();
        let mut out = spec.output_extents(&trimmed)?;
        out.push(spec.filters);
        let c = input[r];
        let mut wshape = spec.kernel.clone();
        wshape.extend([c, spec.filters]);
        let fan_in = spec.kernel.iter().product::<usize>() * c;
        let filters = spec.filters;
        let idx = self.push(name, LayerKind::Conv { spec, trim }, vec![from], out);
        self.param(idx, "kernel", &wshape, Init::HeUniform { fan_in });
        self.param(idx, "bias", &[filters], Init::Zeros);
        Ok(idx)
    }

    pub fn conv(&mut self, name: &str, spec: ConvSpec) -> Result<usize> {
        self.conv_from(self.current, name, spec)
    }

    pub fn batch_norm(&mut self, name: &str) -> usize {
        let shape = self.shape(self.current).to_vec();
        let c = *shape.last().expect("non-scalar activations");
        let idx = self.push(
            name,
            LayerKind::BatchNorm {
                momentum: nn::batchnorm::DEFAULT_MOMENTUM,
                eps: nn::batchnorm::DEFAULT_EPS,
            },
            vec![self.current],
            shape,
        );
        self.param(idx, "gamma", &[c], Init::Ones);
        self.param(idx, "beta", &[c], Init::Zeros);
        let p = self.graph.precision;
        self.buffer(idx, "moving_mean", Tensor::zeros(&[c], p));
        self.buffer(idx, "moving_variance", Tensor::ones(&[c], p));
        idx
    }

    pub fn relu(&mut self, name: &str) -> usize {
        let shape = self.shape(self.current).to_vec();
        self.push(name, LayerKind::Relu, vec![self.current], shape)
    }

    pub fn max_pool(&mut self, name: &str, window: &[usize], stride: &[usize]) -> Result<usize> {
        let input = self.shape(self.current).to_vec();
        let r = window.len();
        if input.len() != r + 1 || stride.len() != r {
            return Err(Error::invalid(format!(
                "{name}: pool window {window:?} on input {input:?}"
            )));
        }
        let spec = ConvSpec {
            filters: input[r],
            kernel: window.to_vec(),
            stride: stride.to_vec(),
            padding: vec![0; r],
        };
        let trim = spec.floor_trim(&input[..r]);
        let trimmed: Vec<usize> = input[..r].iter().zip(&trim).map(|(a, t)| a - t).collect();
        let mut out = spec.output_extents(&trimmed)?;
        out.push(input[r]);
        let kind = LayerKind::MaxPool {
            window: window.to_vec(),
            stride: stride.to_vec(),
            trim,
        };
        Ok(self.push(name, kind, vec![self.current], out))
    }

    pub fn global_avg_pool(&mut self, name: &str) -> usize {
        let c = *self.shape(self.current).last().expect("non-scalar activations");
        self.push(name, LayerKind::GlobalAvgPool, vec![self.current], vec![c])
    }

    pub fn flatten(&mut self, name: &str) -> usize {
        let n = numel(self.shape(self.current));
        self.push(name, LayerKind::Flatten, vec![self.current], vec![n])
    }

    pub fn dense(&mut self, name: &str, units: usize, relu: bool) -> Result<usize> {
        let input = self.shape(self.current).to_vec();
        let [fan_in] = input[..] else {
            return Err(Error::invalid(format!(
                "{name}: dense layer needs flat input, got {input:?}"
            )));
        };
        let idx = self.push(name, LayerKind::Dense { units, relu }, vec![self.current], vec![units]);
        self.param(idx, "kernel", &[fan_in, units], Init::HeUniform { fan_in });
        self.param(idx, "bias", &[units], Init::Zeros);
        Ok(idx)
    }

    pub fn add(&mut self, name: &str, inputs: &[usize]) -> Result<usize> {
        let shape = self.shape(inputs[0]).to_vec();
        for &i in &inputs[1..] {
            if self.shape(i) != shape {
                return Err(Error::ShapeMismatch {
                    op: "residual add",
                    left: shape,
                    right: self.shape(i).to_vec(),
                });
            }
        }
        Ok(self.push(name, LayerKind::Add, inputs.to_vec(), shape))
    }

    pub fn fold_sequences(&mut self, name: &str) -> usize {
        let shape = self.shape(self.current)[1..].to_vec();
        self.push(name, LayerKind::FoldSequences, vec![self.current], shape)
    }

    pub fn unfold_sequences(&mut self, name: &str, steps: usize) -> usize {
        let features = numel(self.shape(self.current));
        let kind = LayerKind::UnfoldSequences { steps };
        self.push(name, kind, vec![self.current], vec![steps, features])
    }

    pub fn lstm(&mut self, name: &str, hidden: usize, return_sequences: bool) -> Result<usize> {
        let input = self.shape(self.current).to_vec();
        let [steps, features] = input[..] else {
            return Err(Error::invalid(format!(
                "{name}: LSTM needs [steps, features], got {input:?}"
            )));
        };
        let out = if return_sequences {
            vec![steps, hidden]
        } else {
            vec![hidden]
        };
        let kind = LayerKind::Lstm {
            hidden,
            return_sequences,
        };
        let idx = self.push(name, kind, vec![self.current], out);
        let bound = 1.0 / (hidden as f64).sqrt();
        self.param(idx, "kernel", &[features, 4 * hidden], Init::Uniform(bound));
        self.param(idx, "recurrent_kernel", &[hidden, 4 * hidden], Init::Uniform(bound));
        self.param(idx, "bias", &[4 * hidden], Init::Zeros);
        Ok(idx)
    }

    /// Finishes the graph; the last layer must produce one value per sample.
    pub fn finish(self) -> Result<ModelGraph> {
        let out = self.shape(self.current);
        if out != [1] {
            return Err(Error::invalid(format!("model must end in a single unit, got {out:?}")));
        }
        Ok(self.graph)
    }
}
