//! Backbone + PEFT state + head, wired together for training and inference.

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::Result;
use crate::head::{HeadConfig, HeadState};
use crate::params::{BoundParams, ParamStore};
use crate::peft::{PeftConfig, PeftKind, PeftState};
use crate::tensor::{Tape, Tensor, Var};

// Stream offsets so that each component's initialization is independent of
// the others' (in particular, the head init does not depend on the PEFT kind).
const PEFT_SEED_OFFSET: u64 = 0x5045_4654;
const HEAD_SEED_OFFSET: u64 = 0x4845_4144;

#[derive(Debug, Clone)]
pub struct Model {
    pub backbone: Backbone,
    pub peft: PeftState,
    pub head: HeadState,
}

pub struct BoundModel {
    pub backbone: BoundParams,
    pub peft: BoundParams,
    pub head: BoundParams,
}

impl Model {
    /// Builds all three components from one seed and freezes the backbone.
    pub fn new(backbone: BackboneConfig, peft: PeftConfig, head: HeadConfig, seed: u64) -> Result<Self> {
        let mut bb = Backbone::build(backbone, seed)?;
        bb.freeze();
        let peft = PeftState::new(&backbone, &peft, seed.wrapping_add(PEFT_SEED_OFFSET))?;
        let head = HeadState::new(head, seed.wrapping_add(HEAD_SEED_OFFSET))?;
        Ok(Model {
            backbone: bb,
            peft,
            head,
        })
    }

    pub fn from_parts(backbone: Backbone, peft: PeftState, head: HeadState) -> Self {
        Model { backbone, peft, head }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        BoundModel {
            backbone: self.backbone.bind(tape),
            peft: self.peft.bind(tape),
            head: self.head.bind(tape),
        }
    }

    /// All layer outputs for one utterance.
    pub fn hiddens(&self, tape: &mut Tape, bound: &BoundModel, frames: &Tensor) -> Result<Vec<Var>> {
        let x = tape.constant(frames.clone());
        let peft = (self.peft.kind() != PeftKind::None).then_some((&self.peft, &bound.peft));
        self.backbone.forward(tape, &bound.backbone, x, peft)
    }

    pub fn logits(&self, tape: &mut Tape, bound: &BoundModel, frames: &Tensor) -> Result<Var> {
        let hiddens = self.hiddens(tape, bound, frames)?;
        self.head.forward(tape, &bound.head, &hiddens)
    }

    pub fn predict_logits(&self, frames: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let logits = self.logits(&mut tape, &bound, frames)?;
        Ok(tape.value(logits).data().to_vec())
    }

    /// Arg-max class; ties go to the lower index.
    pub fn predict(&self, frames: &Tensor) -> Result<usize> {
        let logits = self.predict_logits(frames)?;
        Ok(argmax(&logits))
    }

    /// Stores the optimizer updates: PEFT and head, plus the backbone when unfrozen.
    pub fn trainable_stores_mut(&mut self) -> Vec<&mut ParamStore> {
        let mut stores = Vec::with_capacity(3);
        if !self.backbone.is_frozen() {
            stores.push(self.backbone.params_mut());
        }
        stores.push(self.peft.params_mut());
        stores.push(self.head.params_mut());
        stores
    }

    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &BoundModel) -> Result<()> {
        self.backbone.params_mut().accumulate_grads(tape, &bound.backbone)?;
        self.peft.params_mut().accumulate_grads(tape, &bound.peft)?;
        self.head.params_mut().accumulate_grads(tape, &bound.head)
    }

    pub fn zero_grad(&mut self) {
        self.backbone.params_mut().zero_grad();
        self.peft.params_mut().zero_grad();
        self.head.params_mut().zero_grad();
    }

    pub fn trainable_numel(&self) -> usize {
        self.backbone.params().trainable_numel()
            + self.peft.params().trainable_numel()
            + self.head.params().trainable_numel()
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
