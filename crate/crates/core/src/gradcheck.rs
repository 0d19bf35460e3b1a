//! Directional finite-difference check of the full model gradient.
//!
//! For each PEFT kind a small toy model is built with every parameter
//! trainable, including the backbone, and the PEFT tensors randomized away
//! from their zero init. The analytic directional derivative `g·u` is then
//! compared with a central difference along random unit directions `u`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::Result;
use crate::head::HeadConfig;
use crate::model::Model;
use crate::params::ParamStore;
use crate::peft::{PeftConfig, PeftKind};
use crate::tensor::{Tape, Tensor};

pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub directions: usize,
    pub step: f64,
    pub n_frames: usize,
    pub batch: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            directions: 20,
            step: 1e-4,
            n_frames: 6,
            batch: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindResult {
    pub kind: PeftKind,
    pub n_params: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub directions: usize,
    pub tolerance: f64,
    pub kinds: Vec<KindResult>,
    pub max_rel_err: f64,
    pub passed: bool,
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn stores(model: &mut Model) -> [&mut ParamStore; 3] {
    let Model { backbone, peft, head } = model;
    [backbone.params_mut(), peft.params_mut(), head.params_mut()]
}

fn loss(model: &Model, batch: &[(Tensor, usize)], with_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let c = model.head.config().n_classes;
    let mut rows = Vec::new();
    for (x, _) in batch {
        let logits = model.logits(&mut tape, &bound, x)?;
        rows.push(tape.reshape(logits, &[1, c])?);
    }
    let logits = tape.concat_rows(&rows)?;
    let labels: Vec<usize> = batch.iter().map(|(_, y)| *y).collect();
    let l = tape.cross_entropy(logits, &labels)?;
    let value = tape.value(l).data()[0];
    if !with_grad {
        return Ok((value, None));
    }
    tape.backward(l)?;
    let mut m = model.clone();
    m.zero_grad();
    m.accumulate_grads(&tape, &bound)?;
    let mut flat = Vec::new();
    for s in stores(&mut m) {
        for p in s.iter() {
            match p.tensor.grad() {
                Some(g) => flat.extend_from_slice(g),
                None => flat.extend(std::iter::repeat_n(0.0, p.tensor.numel())),
            }
        }
    }
    Ok((value, Some(flat)))
}

fn shift(model: &mut Model, dir: &[f64], amount: f64) {
    let mut k = 0;
    for s in stores(model) {
        for p in s.iter_mut() {
            for v in p.tensor.data_mut() {
                *v += amount * dir[k];
                k += 1;
            }
        }
    }
}

/// Checks one PEFT kind; returns the worst relative error over all directions.
pub fn check_kind(kind: PeftKind, cfg: &GradcheckConfig) -> Result<KindResult> {
    let bb = BackboneConfig::toy();
    let peft = PeftConfig {
        kind,
        bottleneck: 4,
        prompt_len: 3,
        rank: 3,
    };
    let head = HeadConfig::for_backbone(&bb).with_conv_dim(8);
    let mut model = Model::new(bb, peft, head, cfg.seed)?;
    model.backbone.unfreeze();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6772_6164);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    for p in model.peft.params_mut().iter_mut() {
        for v in p.tensor.data_mut() {
            *v = 0.2 * normal(&mut rng);
        }
    }
    for v in model
        .head
        .params_mut()
        .iter_mut()
        .filter(|p| p.name == "layer_logits")
        .flat_map(|p| p.tensor.data_mut().iter_mut())
    {
        *v = normal(&mut rng);
    }
    let batch: Vec<(Tensor, usize)> = (0..cfg.batch)
        .map(|i| {
            (
                Tensor::normal(&[cfg.n_frames, bb.frontend_in], 1.0, &mut rng),
                i % head.n_classes,
            )
        })
        .collect();

    let (_, grad) = loss(&model, &batch, true)?;
    let grad = grad.expect("requested");
    let n = grad.len();
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.directions {
        let mut u: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        u.iter_mut().for_each(|x| *x /= norm);
        let analytic: f64 = grad.iter().zip(&u).map(|(g, d)| g * d).sum();
        shift(&mut model, &u, cfg.step);
        let (plus, _) = loss(&model, &batch, false)?;
        shift(&mut model, &u, -2.0 * cfg.step);
        let (minus, _) = loss(&model, &batch, false)?;
        shift(&mut model, &u, cfg.step);
        let numeric = (plus - minus) / (2.0 * cfg.step);
        worst = worst.max(rel_err(analytic, numeric));
    }
    Ok(KindResult {
        kind,
        n_params: n,
        max_rel_err: worst,
    })
}

pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let kinds = PeftKind::ALL
        .iter()
        .map(|&k| check_kind(k, cfg))
        .collect::<Result<Vec<_>>>()?;
    let max_rel_err = kinds.iter().map(|k| k.max_rel_err).fold(0.0, f64::max);
    Ok(GradcheckReport {
        seed: cfg.seed,
        directions: cfg.directions,
        tolerance: TOLERANCE,
        passed: max_rel_err < TOLERANCE,
        kinds,
        max_rel_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_is_symmetric_and_floored() {
        assert_eq!(rel_err(1.0, 1.0), 0.0);
        assert_eq!(rel_err(2.0, 1.0), rel_err(1.0, 2.0));
        assert!((rel_err(0.0, 1e-12) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn lora_gradient_matches_finite_differences() {
        let r = check_kind(
            PeftKind::Lora,
            &GradcheckConfig {
                directions: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.max_rel_err < TOLERANCE, "{r:?}");
    }
}
