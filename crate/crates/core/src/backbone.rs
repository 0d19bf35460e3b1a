//! Pre-norm transformer encoder standing in for a frozen pre-trained model.
//!
//! The encoder consumes precomputed feature frames through a linear
//! frontend, adds learned absolute positional embeddings, and returns the
//! output of every layer. Named presets reproduce the layer count and widths
//! of the speech encoders the downstream head was sized for; their weights
//! are random.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{LayerNorm, Linear};
use crate::params::{BoundParams, ParamStore};
use crate::peft::{self, LayerPeft, PeftState};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub frontend_in: usize,
}

/// Preset names accepted by [`BackboneConfig::preset`], in table order.
pub const PRESETS: [&str; 6] = [
    "whisper-tiny-geom",
    "whisper-base-geom",
    "whisper-small-geom",
    "w2v2-base-geom",
    "wavlm-base-plus-geom",
    "toy",
];

impl BackboneConfig {
    /// Desk-scale geometry used by tests and the synthetic corpus.
    pub const fn toy() -> Self {
        BackboneConfig {
            n_layers: 2,
            hidden: 32,
            n_heads: 2,
            ffn_dim: 64,
            max_positions: 80,
            frontend_in: 16,
        }
    }

    /// Whisper geometries take 80 mel bins and 1500 encoder positions; the
    /// wav2vec-style models take the 512-wide output of their conv extractor.
    pub fn preset(name: &str) -> Result<Self> {
        let whisper = |n_layers, hidden, n_heads| BackboneConfig {
            n_layers,
            hidden,
            n_heads,
            ffn_dim: 4 * hidden,
            max_positions: 1500,
            frontend_in: 80,
        };
        let base_768 = BackboneConfig {
            n_layers: 12,
            hidden: 768,
            n_heads: 12,
            ffn_dim: 3072,
            max_positions: 1500,
            frontend_in: 512,
        };
        match name {
            // 384 wide (not 376): the only width consistent with the
            // trainable-parameter counts of every PEFT column.
            "whisper-tiny-geom" => Ok(whisper(4, 384, 6)),
            // 6 layers (not 8), for the same reason.
            "whisper-base-geom" => Ok(whisper(6, 512, 8)),
            "whisper-small-geom" => Ok(whisper(12, 768, 12)),
            "w2v2-base-geom" | "wavlm-base-plus-geom" => Ok(base_768),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Config(format!(
                "unknown backbone preset {other:?}; expected one of {PRESETS:?}"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("hidden", self.hidden),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_positions", self.max_positions),
            ("frontend_in", self.frontend_in),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("backbone {name} must be at least 1")));
        }
        if !self.hidden.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.n_heads
    }

    /// Closed-form parameter count of a built backbone.
    pub fn param_count(&self) -> usize {
        let d = self.hidden;
        let f = self.ffn_dim;
        let frontend = self.frontend_in * d + d;
        let positions = self.max_positions * d;
        let per_layer = 2 * (2 * d) + 4 * (d * d + d) + (d * f + f) + (f * d + d);
        frontend + positions + self.n_layers * per_layer
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderLayer {
    pub(crate) attn_norm: LayerNorm,
    pub(crate) query: Linear,
    pub(crate) key: Linear,
    pub(crate) value: Linear,
    pub(crate) attn_out: Linear,
    pub(crate) ffn_norm: LayerNorm,
    pub(crate) ffn_in: Linear,
    pub(crate) ffn_out: Linear,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    config: BackboneConfig,
    params: ParamStore,
    frontend: Linear,
    positions: crate::params::ParamId,
    pub(crate) layers: Vec<EncoderLayer>,
    frozen: bool,
}

/// What runs inside one layer's feed-forward sub-block besides the plain path.
enum FfnHook<'a> {
    None,
    Serial(&'a peft::AdapterParams, &'a BoundParams),
    Parallel(&'a peft::AdapterParams, &'a BoundParams),
    Lora(&'a peft::LoraParams, &'a BoundParams),
}

impl Backbone {
    /// Deterministic per seed. Parameters start trainable; see [`Backbone::freeze`].
    pub fn build(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.hidden;
        let frontend = Linear::init(&mut params, "frontend", config.frontend_in, d, &mut rng);
        let positions = params.add(
            "positions",
            Tensor::uniform(&[config.max_positions, d], 1.0 / (d as f64).sqrt(), &mut rng).with_requires_grad(true),
        );
        let layers = (0..config.n_layers)
            .map(|i| {
                let p = format!("layers.{i}");
                EncoderLayer {
                    attn_norm: LayerNorm::init(&mut params, &format!("{p}.attn_norm"), d),
                    query: Linear::init(&mut params, &format!("{p}.attn.query"), d, d, &mut rng),
                    key: Linear::init(&mut params, &format!("{p}.attn.key"), d, d, &mut rng),
                    value: Linear::init(&mut params, &format!("{p}.attn.value"), d, d, &mut rng),
                    attn_out: Linear::init(&mut params, &format!("{p}.attn.out"), d, d, &mut rng),
                    ffn_norm: LayerNorm::init(&mut params, &format!("{p}.ffn_norm"), d),
                    ffn_in: Linear::init(&mut params, &format!("{p}.ffn.in"), d, config.ffn_dim, &mut rng),
                    ffn_out: Linear::init(&mut params, &format!("{p}.ffn.out"), config.ffn_dim, d, &mut rng),
                }
            })
            .collect();
        Ok(Backbone {
            config,
            params,
            frontend,
            positions,
            layers,
            frozen: false,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Removes every backbone tensor from gradient computation.
    pub fn freeze(&mut self) {
        self.params.set_requires_grad(false);
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.params.set_requires_grad(true);
        self.frozen = false;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        self.params.bind(tape)
    }

    /// Runs the encoder over `frames` (`T × frontend_in`) and returns the
    /// `T × hidden` output of each layer, in order.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        frames: Var,
        peft: Option<(&PeftState, &BoundParams)>,
    ) -> Result<Vec<Var>> {
        let (t, width) = match tape.shape(frames) {
            &[t, w] => (t, w),
            other => return Err(Error::Dimension(format!("frames must be T×features, got {other:?}"))),
        };
        if width != self.config.frontend_in {
            return Err(Error::Dimension(format!(
                "frames have {width} features, frontend expects {}",
                self.config.frontend_in
            )));
        }
        if t == 0 {
            return Err(Error::Dimension("empty frame sequence".into()));
        }
        if t > self.config.max_positions {
            return Err(Error::Capacity(format!(
                "{t} frames exceed {} positions",
                self.config.max_positions
            )));
        }
        if let Some((state, _)) = peft {
            state.check_compatible(&self.config)?;
        }

        let x = self.frontend.forward(tape, bound, frames)?;
        let pos = tape.slice_rows(bound[self.positions], 0, t)?;
        let mut x = tape.add(x, pos)?;
        let mut outputs = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let hook = peft.and_then(|(s, b)| s.layer(i).map(|l| (l, b)));
            x = match hook {
                Some((LayerPeft::Prompt(id), pb)) => {
                    peft::apply_prompt(tape, x, pb[*id], self.config.max_positions, |tape, h| {
                        self.layer_forward(tape, bound, layer, h, FfnHook::None)
                    })?
                }
                Some((LayerPeft::Adapter(p), pb)) => {
                    self.layer_forward(tape, bound, layer, x, FfnHook::Serial(p, pb))?
                }
                Some((LayerPeft::ParallelAdapter(p), pb)) => {
                    self.layer_forward(tape, bound, layer, x, FfnHook::Parallel(p, pb))?
                }
                Some((LayerPeft::Lora(p), pb)) => self.layer_forward(tape, bound, layer, x, FfnHook::Lora(p, pb))?,
                None => self.layer_forward(tape, bound, layer, x, FfnHook::None)?,
            };
            outputs.push(x);
        }
        Ok(outputs)
    }

    /// Convenience forward on plain tensors; gradients are not tracked.
    pub fn forward_values(&self, frames: &Tensor, peft: Option<&PeftState>) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let pbound = peft.map(|p| p.bind(&mut tape));
        let x = tape.constant(frames.clone());
        let outs = self.forward(&mut tape, &bound, x, peft.zip(pbound.as_ref()))?;
        Ok(outs.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    fn layer_forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        layer: &EncoderLayer,
        x: Var,
        hook: FfnHook<'_>,
    ) -> Result<Var> {
        let h = layer.attn_norm.forward(tape, bound, x)?;
        let attn = self.self_attention(tape, bound, layer, h)?;
        let a = tape.add(x, attn)?;

        let n = layer.ffn_norm.forward(tape, bound, a)?;
        let (w1, b1) = (bound[layer.ffn_in.weight], bound[layer.ffn_in.bias]);
        let u = match &hook {
            FfnHook::Lora(p, pb) => peft::apply_lora_forward(tape, n, w1, b1, pb[p.down], pb[p.up])?,
            _ => layer.ffn_in.forward(tape, bound, n)?,
        };
        let u = tape.gelu(u);
        let ffn = layer.ffn_out.forward(tape, bound, u)?;
        let f = tape.add(a, ffn)?;

        match hook {
            FfnHook::Serial(p, pb) => peft::apply_adapter(tape, f, &p.bind(pb)),
            FfnHook::Parallel(p, pb) => peft::apply_parallel_adapter(tape, a, f, &p.bind(pb)),
            FfnHook::None | FfnHook::Lora(..) => Ok(f),
        }
    }

    fn self_attention(&self, tape: &mut Tape, bound: &BoundParams, layer: &EncoderLayer, h: Var) -> Result<Var> {
        let q = layer.query.forward(tape, bound, h)?;
        let k = layer.key.forward(tape, bound, h)?;
        let v = layer.value.forward(tape, bound, h)?;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for head in 0..self.config.n_heads {
            let qh = tape.slice_cols(q, head * dh, dh)?;
            let kh = tape.slice_cols(k, head * dh, dh)?;
            let vh = tape.slice_cols(v, head * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let weights = tape.softmax(scores, 1)?;
            heads.push(tape.matmul(weights, vh)?);
        }
        let ctx = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        layer.attn_out.forward(tape, bound, ctx)
    }
}
