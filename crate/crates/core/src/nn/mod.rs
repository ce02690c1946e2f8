//! Dilated separable-convolution encoder and linear classifier.
//!
//! The encoder treats a multichannel series `[channels, length]` as a single
//! feature map over a (sensor × time) plane. Each block applies
//!
//! 1. a 1×1 pointwise convolution,
//! 2. a 1×3 temporal convolution (dilated along time),
//! 3. a 3×1 cross-channel convolution along the sensor axis,
//! 4. a 1×3 depthwise convolution with depth multiplier 2,
//!
//! each followed by relu, and then a 1×2 average pooling that halves the time
//! axis. After the last block the remaining (sensor × time) plane is averaged
//! away and a linear map produces the embedding. For univariate input the
//! sensor axis has extent 1, so the 3×1 layer only ever touches its centre tap.
//!
//! There is no projection head: the contrastive losses consume the encoder
//! output directly.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Conv2dOptions, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Shape hyperparameters of the encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub num_blocks: usize,
    pub dilations: Vec<usize>,
    /// Base width of each block; the block emits twice this many channels.
    pub feature_channels: Vec<usize>,
    pub embed_dim: usize,
}

impl EncoderConfig {
    /// Three blocks with dilations (1, 2, 4), width 8 and a 64-dimensional embedding.
    pub fn new(in_channels: usize) -> Self {
        EncoderConfig {
            in_channels,
            num_blocks: 3,
            dilations: vec![1, 2, 4],
            feature_channels: vec![8, 8, 8],
            embed_dim: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(Error::Config("encoder needs at least one block".into()));
        }
        if self.dilations.len() != self.num_blocks || self.feature_channels.len() != self.num_blocks {
            return Err(Error::Config(format!(
                "{} blocks but {} dilations and {} feature widths",
                self.num_blocks,
                self.dilations.len(),
                self.feature_channels.len()
            )));
        }
        let extents = [self.in_channels, self.embed_dim]
            .into_iter()
            .chain(self.dilations.iter().copied())
            .chain(self.feature_channels.iter().copied());
        if extents.into_iter().any(|e| e == 0) {
            return Err(Error::Config(format!("all encoder extents must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Shortest series that survives every pooling stage.
    pub fn min_length(&self) -> usize {
        1 << self.num_blocks
    }

    /// Channels leaving the last block.
    pub fn output_channels(&self) -> usize {
        2 * self.feature_channels[self.num_blocks - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Pointwise,
    Temporal,
    CrossChannel,
    Depthwise,
}

impl LayerKind {
    fn name(self) -> &'static str {
        match self {
            LayerKind::Pointwise => "pointwise",
            LayerKind::Temporal => "temporal",
            LayerKind::CrossChannel => "cross",
            LayerKind::Depthwise => "depthwise",
        }
    }
}

/// One convolution of a block, kernel given as (sensor, time).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
}

impl ConvLayerSpec {
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels / self.groups, self.kernel.0, self.kernel.1]
    }

    pub fn weight_count(&self) -> usize {
        conv_weight_count(self.in_channels, self.out_channels, self.kernel, self.groups)
    }

    /// Zero padding that keeps both plane extents unchanged.
    pub fn options(&self) -> Conv2dOptions {
        Conv2dOptions {
            stride: (1, 1),
            dilation: self.dilation,
            padding: (
                self.dilation.0 * (self.kernel.0 - 1) / 2,
                self.dilation.1 * (self.kernel.1 - 1) / 2,
            ),
            groups: self.groups,
        }
    }
}

/// Number of weights (bias excluded) in a grouped convolution.
pub fn conv_weight_count(in_channels: usize, out_channels: usize, kernel: (usize, usize), groups: usize) -> usize {
    out_channels * (in_channels / groups) * kernel.0 * kernel.1
}

/// The four convolutions of one block plus its temporal pooling window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub layers: [ConvLayerSpec; 4],
    pub pool_window: usize,
}

pub const DEPTH_MULTIPLIER: usize = 2;
pub const POOL_WINDOW: usize = 2;

/// Layer stack of block `block_index` under `cfg`.
pub fn build_block(cfg: &EncoderConfig, block_index: usize) -> Result<BlockSpec> {
    cfg.validate()?;
    if block_index >= cfg.num_blocks {
        return Err(Error::Config(format!(
            "block {block_index} requested from a {}-block encoder",
            cfg.num_blocks
        )));
    }
    let input = if block_index == 0 {
        1
    } else {
        DEPTH_MULTIPLIER * cfg.feature_channels[block_index - 1]
    };
    let width = cfg.feature_channels[block_index];
    let dilation = cfg.dilations[block_index];
    let layer = |kind, in_channels, out_channels, kernel, dilation, groups| ConvLayerSpec {
        kind,
        in_channels,
        out_channels,
        kernel,
        dilation,
        groups,
    };
    let layers = [
        layer(LayerKind::Pointwise, input, width, (1, 1), (1, 1), 1),
        layer(LayerKind::Temporal, width, width, (1, 3), (1, dilation), 1),
        layer(LayerKind::CrossChannel, width, width, (3, 1), (1, 1), 1),
        layer(LayerKind::Depthwise, width, DEPTH_MULTIPLIER * width, (1, 3), (1, 1), width),
    ];
    for pair in layers.windows(2) {
        if pair[0].out_channels != pair[1].in_channels {
            return Err(Error::Config(format!("channel mismatch in block {block_index}: {pair:?}")));
        }
    }
    Ok(BlockSpec { layers, pool_window: POOL_WINDOW })
}

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Encoder `f` and classifier `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotsModel {
    config: EncoderConfig,
    num_classes: usize,
    blocks: Vec<BlockSpec>,
    params: Vec<Param>,
}

/// Tape handles for every parameter, in [`SlotsModel::parameters`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Uses caller-built handles, one per parameter of `model` in order.
    pub fn from_vars(model: &SlotsModel, tape: &Tape, vars: Vec<Var>) -> Result<Self> {
        if vars.len() != model.params.len() {
            return Err(Error::Contract(format!("{} handles for {} parameters", vars.len(), model.params.len())));
        }
        for (p, v) in model.params.iter().zip(&vars) {
            if tape.shape(*v) != p.value.shape() {
                return Err(Error::dim("bind", format!("{} is {:?}, handle is {:?}", p.name, p.value.shape(), tape.shape(*v))));
            }
        }
        Ok(BoundParams { vars })
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl SlotsModel {
    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, num_classes: usize, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(config, num_classes)?;
        for p in &mut model.params {
            if p.name.ends_with(".bias") {
                continue;
            }
            let shape = p.value.shape();
            let fan_in = if shape.len() == 4 { shape[1] * shape[2] * shape[3] } else { shape[0] };
            let bound = (6.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for v in p.value.data_mut() {
                *v = dist.sample(rng);
            }
        }
        Ok(model)
    }

    /// All parameters zero; the layout matches [`SlotsModel::new`].
    pub fn zeros(config: EncoderConfig, num_classes: usize) -> Result<Self> {
        config.validate()?;
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        let blocks = (0..config.num_blocks)
            .map(|b| build_block(&config, b))
            .collect::<Result<Vec<_>>>()?;
        let mut params = Vec::new();
        for (b, block) in blocks.iter().enumerate() {
            for layer in &block.layers {
                let prefix = format!("block{b}.{}", layer.kind.name());
                params.push(Param { name: format!("{prefix}.weight"), value: Tensor::zeros(&layer.weight_shape()) });
                params.push(Param { name: format!("{prefix}.bias"), value: Tensor::zeros(&[layer.out_channels]) });
            }
        }
        let (feat, d) = (config.output_channels(), config.embed_dim);
        params.push(Param { name: "embed.weight".into(), value: Tensor::zeros(&[feat, d]) });
        params.push(Param { name: "embed.bias".into(), value: Tensor::zeros(&[d]) });
        params.push(Param { name: "classifier.weight".into(), value: Tensor::zeros(&[d, num_classes]) });
        params.push(Param { name: "classifier.bias".into(), value: Tensor::zeros(&[num_classes]) });
        Ok(SlotsModel { config, num_classes, blocks, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn parameters(&self) -> &[Param] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Whether parameter `index` belongs to the classifier `g`.
    pub fn is_classifier_param(&self, index: usize) -> bool {
        index + 2 >= self.params.len()
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Registers every parameter as a gradient-carrying leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams { vars: self.params.iter().map(|p| tape.leaf(p.value.clone())).collect() }
    }

    /// Registers parameter `i` as a leaf when `trainable(i)`, else as a constant.
    pub fn bind_selected(&self, tape: &mut Tape, trainable: impl Fn(usize) -> bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| if trainable(i) { tape.leaf(p.value.clone()) } else { tape.constant(p.value.clone()) })
            .collect();
        BoundParams { vars }
    }

    /// Registers every parameter as a constant (inference).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        BoundParams { vars: self.params.iter().map(|p| tape.constant(p.value.clone())).collect() }
    }

    /// `[batch, in_channels, length] -> [batch, embed_dim]`.
    pub fn encode(&self, tape: &mut Tape, params: &BoundParams, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.config.in_channels {
            return Err(Error::dim(
                "encode",
                format!("expected [batch, {}, length], got {shape:?}", self.config.in_channels),
            ));
        }
        let min = self.config.min_length();
        if shape[2] < min {
            return Err(Error::InputLength { min, got: shape[2] });
        }
        let mut h = tape.reshape(x, vec![shape[0], 1, shape[1], shape[2]])?;
        let mut p = 0;
        for block in &self.blocks {
            for layer in &block.layers {
                let (w, b) = (params.vars[p], params.vars[p + 1]);
                p += 2;
                h = tape.conv2d(h, w, Some(b), layer.options())?;
                h = tape.relu(h);
            }
            h = tape.avg_pool(h, block.pool_window)?;
        }
        let s = tape.shape(h).to_vec();
        let flat = tape.reshape(h, vec![s[0], s[1], s[2] * s[3]])?;
        let pooled = tape.mean_axis(flat, 2)?;
        let z = tape.matmul(pooled, params.vars[p])?;
        tape.add_bias(z, params.vars[p + 1], 1)
    }

    /// Logits `zW + b`, no activation.
    pub fn classify(&self, tape: &mut Tape, params: &BoundParams, z: Var) -> Result<Var> {
        let shape = tape.shape(z);
        if shape.len() != 2 || shape[1] != self.config.embed_dim {
            return Err(Error::dim(
                "classify",
                format!("expected [batch, {}], got {shape:?}", self.config.embed_dim),
            ));
        }
        let n = self.params.len();
        let logits = tape.matmul(z, params.vars[n - 2])?;
        tape.add_bias(logits, params.vars[n - 1], 1)
    }

    /// Embeddings of a batch without recording gradients.
    pub fn embed(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.bind_frozen(&mut tape);
        let x = tape.constant(batch.clone());
        let z = self.encode(&mut tape, &params, x)?;
        Ok(tape.value(z).clone())
    }

    /// Class probabilities `[batch, num_classes]`.
    pub fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.bind_frozen(&mut tape);
        let x = tape.constant(batch.clone());
        let z = self.encode(&mut tape, &params, x)?;
        let logits = self.classify(&mut tape, &params, z)?;
        let p = tape.softmax(logits, 1)?;
        Ok(tape.value(p).clone())
    }

    /// Replaces parameter values, checking names and shapes against this layout.
    pub fn load_parameters(&mut self, params: Vec<Param>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                params.len()
            )));
        }
        for (own, new) in self.params.iter().zip(&params) {
            if own.name != new.name || own.value.shape() != new.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    new.name,
                    new.value.shape(),
                    own.name,
                    own.value.shape()
                )));
            }
        }
        self.params = params;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
