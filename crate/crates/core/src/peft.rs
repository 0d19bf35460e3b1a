//! Parameter-efficient fine-tuning hooks for the [`Backbone`].
//!
//! Four mechanisms are supported, each adding its own trainable tensors while
//! the backbone stays frozen:
//!
//! * **Adapter**: a bottleneck `h + relu(h·W_d + b_d)·W_u + b_u` applied in
//!   series to the output of each layer's feed-forward sub-block.
//! * **Parallel adapter**: the same bottleneck fed from the input of the
//!   layer-norm + feed-forward sub-block and summed into its output.
//! * **Prompt**: `l` free vectors prepended to each layer's input; the
//!   corresponding output rows are dropped before the next layer, which gets
//!   its own prompts. Prompts receive no positional embedding.
//! * **LoRA**: the first feed-forward projection uses `W1 − W_d·W_u` with
//!   rank-`r` factors. No `α/r` scaling is applied. The update can be folded
//!   into the backbone with [`merge_lora`].
//!
//! Adapter up-projections and LoRA `W_u` start at zero, so those three kinds
//! reproduce the plain backbone exactly at initialization. Prompts have no
//! such identity and start as `0.01·N(0, 1)`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::head::HeadConfig;
use crate::layers::Linear;
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::tensor::{matmul_raw, Tape, Tensor, Var};

pub const PROMPT_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeftKind {
    None,
    Adapter,
    ParallelAdapter,
    Prompt,
    Lora,
}

impl PeftKind {
    pub const ALL: [PeftKind; 5] = [
        PeftKind::None,
        PeftKind::Adapter,
        PeftKind::ParallelAdapter,
        PeftKind::Prompt,
        PeftKind::Lora,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PeftKind::None => "none",
            PeftKind::Adapter => "adapter",
            PeftKind::ParallelAdapter => "parallel_adapter",
            PeftKind::Prompt => "prompt",
            PeftKind::Lora => "lora",
        }
    }
}

impl fmt::Display for PeftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PeftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        PeftKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown PEFT kind {s:?}")))
    }
}

fn default_bottleneck() -> usize {
    128
}
fn default_prompt_len() -> usize {
    5
}
fn default_rank() -> usize {
    8
}

/// Which mechanism to inject; only the size field of the chosen kind is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeftConfig {
    pub kind: PeftKind,
    /// Adapter bottleneck width `e`.
    #[serde(rename = "e", default = "default_bottleneck")]
    pub bottleneck: usize,
    /// Prompt length `l`.
    #[serde(rename = "l", default = "default_prompt_len")]
    pub prompt_len: usize,
    /// LoRA rank `r`.
    #[serde(rename = "r", default = "default_rank")]
    pub rank: usize,
}

impl Default for PeftConfig {
    fn default() -> Self {
        PeftConfig {
            kind: PeftKind::None,
            bottleneck: default_bottleneck(),
            prompt_len: default_prompt_len(),
            rank: default_rank(),
        }
    }
}

impl PeftConfig {
    pub fn new(kind: PeftKind) -> Self {
        PeftConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn adapter(bottleneck: usize) -> Self {
        PeftConfig {
            bottleneck,
            ..Self::new(PeftKind::Adapter)
        }
    }

    pub fn parallel_adapter(bottleneck: usize) -> Self {
        PeftConfig {
            bottleneck,
            ..Self::new(PeftKind::ParallelAdapter)
        }
    }

    pub fn prompt(prompt_len: usize) -> Self {
        PeftConfig {
            prompt_len,
            ..Self::new(PeftKind::Prompt)
        }
    }

    pub fn lora(rank: usize) -> Self {
        PeftConfig {
            rank,
            ..Self::new(PeftKind::Lora)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (name, value) = match self.kind {
            PeftKind::None => return Ok(()),
            PeftKind::Adapter | PeftKind::ParallelAdapter => ("bottleneck e", self.bottleneck),
            PeftKind::Prompt => ("prompt length l", self.prompt_len),
            PeftKind::Lora => ("rank r", self.rank),
        };
        if value == 0 {
            return Err(Error::Config(format!("{} {name} must be at least 1", self.kind)));
        }
        Ok(())
    }

    /// The size hyperparameter of the chosen kind, keyed by its short name.
    pub fn size_param(&self) -> Option<(&'static str, usize)> {
        match self.kind {
            PeftKind::None => None,
            PeftKind::Adapter | PeftKind::ParallelAdapter => Some(("e", self.bottleneck)),
            PeftKind::Prompt => Some(("l", self.prompt_len)),
            PeftKind::Lora => Some(("r", self.rank)),
        }
    }

    /// Closed-form trainable count for a backbone geometry.
    pub fn trainable_count(&self, backbone: &BackboneConfig) -> usize {
        let n = backbone.n_layers;
        let d = backbone.hidden;
        match self.kind {
            PeftKind::None => 0,
            PeftKind::Adapter | PeftKind::ParallelAdapter => {
                let e = self.bottleneck;
                n * (2 * d * e + e + d)
            }
            PeftKind::Prompt => n * self.prompt_len * d,
            PeftKind::Lora => n * self.rank * (d + backbone.ffn_dim),
        }
    }
}

/// Bottleneck parameters: `W_d: hidden×e`, `b_d: e`, `W_u: e×hidden`, `b_u: hidden`.
#[derive(Debug, Clone, Copy)]
pub struct AdapterParams {
    pub down: Linear,
    pub up: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct AdapterVars {
    pub w_down: Var,
    pub b_down: Var,
    pub w_up: Var,
    pub b_up: Var,
}

impl AdapterParams {
    pub fn bind(&self, bound: &BoundParams) -> AdapterVars {
        AdapterVars {
            w_down: bound[self.down.weight],
            b_down: bound[self.down.bias],
            w_up: bound[self.up.weight],
            b_up: bound[self.up.bias],
        }
    }
}

/// Low-rank factors `W_d: hidden×r` and `W_u: r×ffn_dim` for the first FFN projection.
#[derive(Debug, Clone, Copy)]
pub struct LoraParams {
    pub down: ParamId,
    pub up: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub enum LayerPeft {
    Adapter(AdapterParams),
    ParallelAdapter(AdapterParams),
    Prompt(ParamId),
    Lora(LoraParams),
}

#[derive(Debug, Clone)]
pub struct PeftState {
    config: PeftConfig,
    geometry: BackboneConfig,
    params: ParamStore,
    layers: Vec<LayerPeft>,
}

/// Kaiming-uniform bound for a ReLU-fed projection.
fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

impl PeftState {
    pub fn new(backbone: &BackboneConfig, config: &PeftConfig, seed: u64) -> Result<Self> {
        backbone.validate()?;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = backbone.hidden;
        let mut layers = Vec::new();
        if config.kind != PeftKind::None {
            for i in 0..backbone.n_layers {
                let p = format!("layers.{i}");
                let layer = match config.kind {
                    PeftKind::Adapter | PeftKind::ParallelAdapter => {
                        let e = config.bottleneck;
                        let trainable = |t: Tensor| t.with_requires_grad(true);
                        let down = Linear {
                            weight: params.add(
                                format!("{p}.adapter.down.weight"),
                                trainable(Tensor::uniform(&[d, e], kaiming_bound(d), &mut rng)),
                            ),
                            bias: params.add(format!("{p}.adapter.down.bias"), trainable(Tensor::zeros(&[e]))),
                        };
                        let up = Linear {
                            weight: params.add(format!("{p}.adapter.up.weight"), trainable(Tensor::zeros(&[e, d]))),
                            bias: params.add(format!("{p}.adapter.up.bias"), trainable(Tensor::zeros(&[d]))),
                        };
                        let adapter = AdapterParams { down, up };
                        if config.kind == PeftKind::Adapter {
                            LayerPeft::Adapter(adapter)
                        } else {
                            LayerPeft::ParallelAdapter(adapter)
                        }
                    }
                    PeftKind::Prompt => LayerPeft::Prompt(params.add(
                        format!("{p}.prompts"),
                        Tensor::normal(&[config.prompt_len, d], PROMPT_INIT_SCALE, &mut rng).with_requires_grad(true),
                    )),
                    PeftKind::Lora => {
                        let r = config.rank;
                        let down = params.add(
                            format!("{p}.lora.down"),
                            Tensor::uniform(&[d, r], kaiming_bound(d), &mut rng).with_requires_grad(true),
                        );
                        let up = params.add(
                            format!("{p}.lora.up"),
                            Tensor::zeros(&[r, backbone.ffn_dim]).with_requires_grad(true),
                        );
                        LayerPeft::Lora(LoraParams { down, up })
                    }
                    PeftKind::None => unreachable!(),
                };
                layers.push(layer);
            }
        }
        Ok(PeftState {
            config: *config,
            geometry: *backbone,
            params,
            layers,
        })
    }

    pub fn config(&self) -> &PeftConfig {
        &self.config
    }

    pub fn kind(&self) -> PeftKind {
        self.config.kind
    }

    pub fn geometry(&self) -> &BackboneConfig {
        &self.geometry
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layer(&self, i: usize) -> Option<&LayerPeft> {
        self.layers.get(i)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        self.params.bind(tape)
    }

    /// Number of scalars in the instantiated tensors.
    pub fn trainable_count(&self) -> usize {
        self.params.numel()
    }

    pub(crate) fn check_compatible(&self, backbone: &BackboneConfig) -> Result<()> {
        let g = &self.geometry;
        if self.kind() != PeftKind::None
            && (g.n_layers != backbone.n_layers || g.hidden != backbone.hidden || g.ffn_dim != backbone.ffn_dim)
        {
            return Err(Error::Dimension(format!(
                "PEFT state built for {} layers × {} hidden (ffn {}), backbone has {} × {} (ffn {})",
                g.n_layers, g.hidden, g.ffn_dim, backbone.n_layers, backbone.hidden, backbone.ffn_dim
            )));
        }
        Ok(())
    }
}

fn bottleneck(tape: &mut Tape, x: Var, p: &AdapterVars) -> Result<Var> {
    let z = tape.matmul(x, p.w_down)?;
    let z = tape.add(z, p.b_down)?;
    let z = tape.relu(z);
    let z = tape.matmul(z, p.w_up)?;
    tape.add(z, p.b_up)
}

/// Serial adapter with residual: `h + relu(h·W_d + b_d)·W_u + b_u`.
pub fn apply_adapter(tape: &mut Tape, h: Var, p: &AdapterVars) -> Result<Var> {
    let branch = bottleneck(tape, h, p)?;
    tape.add(h, branch)
}

/// Parallel adapter: `ffn_block_out + relu(x_in·W_d + b_d)·W_u + b_u`.
pub fn apply_parallel_adapter(tape: &mut Tape, x_in: Var, ffn_block_out: Var, p: &AdapterVars) -> Result<Var> {
    if tape.shape(x_in) != tape.shape(ffn_block_out) {
        return Err(Error::Dimension(format!(
            "parallel adapter input {:?} and block output {:?} differ",
            tape.shape(x_in),
            tape.shape(ffn_block_out)
        )));
    }
    let branch = bottleneck(tape, x_in, p)?;
    tape.add(ffn_block_out, branch)
}

/// Runs `layer` over `concat(prompts, h)` and drops the prompt rows.
pub fn apply_prompt<F>(tape: &mut Tape, h: Var, prompts: Var, max_positions: usize, layer: F) -> Result<Var>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let l = tape.shape(prompts).first().copied().unwrap_or(0);
    let t = tape.shape(h).first().copied().unwrap_or(0);
    if l + t > max_positions {
        return Err(Error::Capacity(format!(
            "{l} prompts + {t} frames exceed {max_positions} positions"
        )));
    }
    let joined = tape.concat_rows(&[prompts, h])?;
    let out = layer(tape, joined)?;
    tape.slice_rows(out, l, t)
}

/// `h·(W1 − W_d·W_u) + b1`, evaluated as `h·W1 − (h·W_d)·W_u + b1`.
pub fn apply_lora_forward(tape: &mut Tape, h: Var, w1: Var, b1: Var, w_down: Var, w_up: Var) -> Result<Var> {
    let base = tape.matmul(h, w1)?;
    let low = tape.matmul(h, w_down)?;
    let delta = tape.matmul(low, w_up)?;
    let y = tape.sub(base, delta)?;
    tape.add(y, b1)
}

/// Folds LoRA factors into the backbone: each `W1` becomes `W1 − W_d·W_u`.
pub fn merge_lora(backbone: &Backbone, lora: &PeftState) -> Result<Backbone> {
    if lora.kind() != PeftKind::Lora {
        return Err(Error::Usage(format!(
            "cannot merge a {} state into the backbone",
            lora.kind()
        )));
    }
    lora.check_compatible(backbone.config())?;
    let cfg = *backbone.config();
    let mut merged = backbone.clone();
    for (i, layer) in backbone.layers.iter().enumerate() {
        let Some(LayerPeft::Lora(p)) = lora.layer(i) else {
            return Err(Error::Usage(format!("layer {i} has no LoRA factors")));
        };
        let delta = matmul_raw(
            lora.params().get(p.down).data(),
            lora.params().get(p.up).data(),
            cfg.hidden,
            lora.config().rank,
            cfg.ffn_dim,
        );
        let w1 = merged.params_mut().get_mut(layer.ffn_in.weight);
        for (w, d) in w1.data_mut().iter_mut().zip(&delta) {
            *w -= d;
        }
    }
    Ok(merged)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub backbone_frozen: usize,
    pub peft_trainable: usize,
    pub head_trainable: usize,
}

/// Closed-form parameter audit.
pub fn count_params(backbone: &BackboneConfig, peft: &PeftConfig, head: &HeadConfig) -> ParamCounts {
    ParamCounts {
        backbone_frozen: backbone.param_count(),
        peft_trainable: peft.trainable_count(backbone),
        head_trainable: head.param_count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn adapter_vars(tape: &mut Tape, wd: Tensor, bd: Tensor, wu: Tensor, bu: Tensor) -> AdapterVars {
        AdapterVars {
            w_down: tape.leaf(&wd.with_requires_grad(true)),
            b_down: tape.leaf(&bd.with_requires_grad(true)),
            w_up: tape.leaf(&wu.with_requires_grad(true)),
            b_up: tape.leaf(&bu.with_requires_grad(true)),
        }
    }

    #[test]
    fn adapter_hand_example() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::matrix(&[&[1.0, 1.0]]));
        let p = adapter_vars(
            &mut tape,
            Tensor::matrix(&[&[1.0], &[1.0]]),
            Tensor::zeros(&[1]),
            Tensor::matrix(&[&[1.0, 0.0]]),
            Tensor::zeros(&[2]),
        );
        let out = apply_adapter(&mut tape, h, &p).unwrap();
        assert_eq!(tape.value(out).data(), &[3.0, 1.0]);
    }

    #[test]
    fn adapter_with_zero_up_projection_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let h0 = Tensor::normal(&[4, 6], 1.0, &mut rng);
        let h = tape.constant(h0.clone());
        let p = adapter_vars(
            &mut tape,
            Tensor::normal(&[6, 3], 1.0, &mut rng),
            Tensor::normal(&[3], 1.0, &mut rng),
            Tensor::zeros(&[3, 6]),
            Tensor::zeros(&[6]),
        );
        let out = apply_adapter(&mut tape, h, &p).unwrap();
        assert_eq!(tape.value(out).data(), h0.data());
    }

    #[test]
    fn adapter_shape_mismatch_is_dimension_error() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::zeros(&[2, 5]));
        let p = adapter_vars(
            &mut tape,
            Tensor::zeros(&[4, 2]),
            Tensor::zeros(&[2]),
            Tensor::zeros(&[2, 4]),
            Tensor::zeros(&[4]),
        );
        assert!(matches!(apply_adapter(&mut tape, h, &p), Err(Error::Dimension(_))));
    }

    #[test]
    fn parallel_adapter_cases() {
        let mut tape = Tape::new();
        let x_in = tape.constant(Tensor::matrix(&[&[1.0, 1.0]]));
        let ffn = tape.constant(Tensor::matrix(&[&[0.5, -0.5]]));
        let p = adapter_vars(
            &mut tape,
            Tensor::matrix(&[&[1.0], &[1.0]]),
            Tensor::zeros(&[1]),
            Tensor::matrix(&[&[1.0, 0.0]]),
            Tensor::zeros(&[2]),
        );
        // ffn + relu(2)·[1, 0]
        let out = apply_parallel_adapter(&mut tape, x_in, ffn, &p).unwrap();
        assert_eq!(tape.value(out).data(), &[2.5, -0.5]);

        // x_in = 0, b_d = 0: branch is b_u on every frame.
        let zeros = tape.constant(Tensor::zeros(&[3, 2]));
        let ffn3 = tape.constant(Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let p2 = adapter_vars(
            &mut tape,
            Tensor::matrix(&[&[1.0], &[1.0]]),
            Tensor::zeros(&[1]),
            Tensor::matrix(&[&[7.0, 7.0]]),
            Tensor::vector(vec![0.25, -1.0]),
        );
        let out = apply_parallel_adapter(&mut tape, zeros, ffn3, &p2).unwrap();
        assert_eq!(tape.value(out).data(), &[1.25, 1.0, 3.25, 3.0, 5.25, 5.0]);

        let wrong = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(
            apply_parallel_adapter(&mut tape, wrong, ffn3, &p2),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn lora_zero_up_matches_plain_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::normal(&[5, 8], 1.0, &mut rng));
        let w1 = tape.constant(Tensor::normal(&[8, 12], 1.0, &mut rng));
        let b1 = tape.constant(Tensor::normal(&[12], 1.0, &mut rng));
        let wd = tape.constant(Tensor::normal(&[8, 2], 1.0, &mut rng));
        let wu = tape.constant(Tensor::zeros(&[2, 12]));
        let hooked = apply_lora_forward(&mut tape, h, w1, b1, wd, wu).unwrap();
        let plain = tape.matmul(h, w1).unwrap();
        let plain = tape.add(plain, b1).unwrap();
        assert_eq!(tape.value(hooked).data(), tape.value(plain).data());
    }

    #[test]
    fn lora_full_rank_cancellation_leaves_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let d = 6;
        let w1_t = Tensor::normal(&[d, 10], 1.0, &mut rng);
        let mut eye = Tensor::zeros(&[d, d]);
        for i in 0..d {
            eye.data_mut()[i * d + i] = 1.0;
        }
        let b1_t = Tensor::normal(&[10], 1.0, &mut rng);
        let h = tape.constant(Tensor::normal(&[3, d], 1.0, &mut rng));
        let w1 = tape.constant(w1_t.clone());
        let b1 = tape.constant(b1_t.clone());
        let wd = tape.constant(eye);
        let wu = tape.constant(w1_t);
        let out = apply_lora_forward(&mut tape, h, w1, b1, wd, wu).unwrap();
        for r in 0..3 {
            assert_eq!(tape.value(out).row(r), b1_t.data());
        }
    }

    #[test]
    fn lora_factored_equals_dense_materialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h0 = Tensor::normal(&[8, 16], 1.0, &mut rng);
        let w1_0 = Tensor::normal(&[16, 24], 1.0, &mut rng);
        let b1_0 = Tensor::normal(&[24], 1.0, &mut rng);
        let wd0 = Tensor::normal(&[16, 4], 1.0, &mut rng);
        let wu0 = Tensor::normal(&[4, 24], 1.0, &mut rng);

        // Dense oracle: materialize W1 − W_d·W_u elementwise.
        let mut dense = w1_0.data().to_vec();
        for i in 0..16 {
            for j in 0..24 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += wd0.at(i, k) * wu0.at(k, j);
                }
                dense[i * 24 + j] -= s;
            }
        }
        let mut expected = vec![0.0; 8 * 24];
        for r in 0..8 {
            for j in 0..24 {
                let mut s = b1_0.data()[j];
                for i in 0..16 {
                    s += h0.at(r, i) * dense[i * 24 + j];
                }
                expected[r * 24 + j] = s;
            }
        }

        let mut tape = Tape::new();
        let h = tape.constant(h0);
        let w1 = tape.constant(w1_0);
        let b1 = tape.constant(b1_0);
        let wd = tape.constant(wd0);
        let wu = tape.constant(wu0);
        let out = apply_lora_forward(&mut tape, h, w1, b1, wd, wu).unwrap();
        let max = tape
            .value(out)
            .data()
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max < 1e-12, "max |Δ| = {max}");
    }

    #[test]
    fn prompt_capacity_error() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::zeros(&[8, 4]));
        let p = tape.constant(Tensor::zeros(&[3, 4]));
        let r = apply_prompt(&mut tape, h, p, 10, |_, x| Ok(x));
        assert!(matches!(r, Err(Error::Capacity(_))));
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(PeftConfig::adapter(0).validate().is_err());
        assert!(PeftConfig::prompt(0).validate().is_err());
        assert!(PeftConfig::lora(0).validate().is_err());
        // Sizes of other kinds are ignored.
        let cfg = PeftConfig {
            bottleneck: 0,
            ..PeftConfig::lora(4)
        };
        cfg.validate().unwrap();
    }

    #[test]
    fn kind_parsing() {
        assert_eq!(
            "parallel-adapter".parse::<PeftKind>().unwrap(),
            PeftKind::ParallelAdapter
        );
        assert_eq!("lora".parse::<PeftKind>().unwrap(), PeftKind::Lora);
        assert!("bitfit".parse::<PeftKind>().is_err());
        let cfg: PeftConfig = serde_json::from_str(r#"{"kind":"lora","r":16}"#).unwrap();
        assert_eq!(cfg, PeftConfig::lora(16));
        assert!(serde_json::from_str::<PeftConfig>(r#"{"kind":"lora","alpha":2}"#).is_err());
    }

    #[test]
    fn merge_requires_lora() {
        let cfg = BackboneConfig::toy();
        let b = Backbone::build(cfg, 0).unwrap();
        let a = PeftState::new(&cfg, &PeftConfig::adapter(4), 0).unwrap();
        assert!(matches!(merge_lora(&b, &a), Err(Error::Usage(_))));
        let l = PeftState::new(&cfg, &PeftConfig::lora(4), 0).unwrap();
        let merged = merge_lora(&b, &l).unwrap();
        assert_eq!(merged.checksum(), b.checksum());
    }
}
