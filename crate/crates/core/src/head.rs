//! Downstream emotion classifier over all encoder layer outputs.
//!
//! The layer outputs are mixed with softmax-normalized trainable weights,
//! passed through three point-wise (kernel size 1) convolutions with ReLU
//! between them, averaged over time, and classified by two fully connected
//! layers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_CONV_DIM: usize = 256;
pub const DEFAULT_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub n_layers_in: usize,
    pub hidden_in: usize,
    pub conv_dim: usize,
    pub n_classes: usize,
}

impl HeadConfig {
    pub fn for_backbone(backbone: &BackboneConfig) -> Self {
        HeadConfig {
            n_layers_in: backbone.n_layers,
            hidden_in: backbone.hidden,
            conv_dim: DEFAULT_CONV_DIM,
            n_classes: DEFAULT_CLASSES,
        }
    }

    pub fn with_conv_dim(mut self, conv_dim: usize) -> Self {
        self.conv_dim = conv_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers_in == 0 || self.hidden_in == 0 || self.conv_dim == 0 || self.n_classes < 2 {
            return Err(Error::Config(format!("invalid head config {self:?}")));
        }
        Ok(())
    }

    /// Layer weights + conv1 + conv2/conv3 + fc1 + fc2.
    pub fn param_count(&self) -> usize {
        let c = self.conv_dim;
        self.n_layers_in
            + (self.hidden_in * c + c)
            + 2 * (c * c + c)
            + (c * c + c)
            + (c * self.n_classes + self.n_classes)
    }
}

#[derive(Debug, Clone)]
pub struct HeadState {
    config: HeadConfig,
    params: ParamStore,
    layer_logits: ParamId,
    convs: [Linear; 3],
    fc1: Linear,
    fc2: Linear,
}

impl HeadState {
    pub fn new(config: HeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = config.conv_dim;
        let layer_logits = params.add(
            "layer_logits",
            Tensor::zeros(&[config.n_layers_in]).with_requires_grad(true),
        );
        let convs = [
            Linear::init(&mut params, "conv1", config.hidden_in, c, &mut rng),
            Linear::init(&mut params, "conv2", c, c, &mut rng),
            Linear::init(&mut params, "conv3", c, c, &mut rng),
        ];
        let fc1 = Linear::init(&mut params, "fc1", c, c, &mut rng);
        let fc2 = Linear::init(&mut params, "fc2", c, config.n_classes, &mut rng);
        Ok(HeadState {
            config,
            params,
            layer_logits,
            convs,
            fc1,
            fc2,
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        self.params.bind(tape)
    }

    /// softmax(layer_logits)
    pub fn averaging_weights(&self) -> Vec<f64> {
        let logits = self.params.get(self.layer_logits).data();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Logits (shape `[n_classes]`) for one utterance's layer outputs.
    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, hiddens: &[Var]) -> Result<Var> {
        let pooled = self.pooled(tape, bound, hiddens)?;
        let x = tape.reshape(pooled, &[1, self.config.conv_dim])?;
        let x = self.fc1.forward(tape, bound, x)?;
        let x = tape.relu(x);
        let logits = self.fc2.forward(tape, bound, x)?;
        tape.reshape(logits, &[self.config.n_classes])
    }

    /// Per-frame activations after the third convolution (`T × conv_dim`).
    pub fn frame_features(&self, tape: &mut Tape, bound: &BoundParams, hiddens: &[Var]) -> Result<Var> {
        if hiddens.len() != self.config.n_layers_in {
            return Err(Error::Usage(format!(
                "head expects {} layer outputs, got {}",
                self.config.n_layers_in,
                hiddens.len()
            )));
        }
        let shape = tape.shape(hiddens[0]).to_vec();
        if shape.len() != 2 || shape[1] != self.config.hidden_in {
            return Err(Error::Dimension(format!(
                "layer output shape {shape:?} does not match head width {}",
                self.config.hidden_in
            )));
        }
        if let Some(bad) = hiddens.iter().find(|&&h| tape.shape(h) != shape.as_slice()) {
            return Err(Error::Dimension(format!(
                "layer outputs differ in shape: {:?} vs {shape:?}",
                tape.shape(*bad)
            )));
        }
        let weights = tape.softmax(bound[self.layer_logits], 0)?;
        let mut mixed: Option<Var> = None;
        for (i, &h) in hiddens.iter().enumerate() {
            let w = tape.select(weights, i)?;
            let term = tape.mul(h, w)?;
            mixed = Some(match mixed {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        let mut x = mixed.expect("at least one layer");
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.forward(tape, bound, x)?;
            if i + 1 < self.convs.len() {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    fn pooled(&self, tape: &mut Tape, bound: &BoundParams, hiddens: &[Var]) -> Result<Var> {
        let frames = self.frame_features(tape, bound, hiddens)?;
        tape.mean(frames, 0)
    }
}
