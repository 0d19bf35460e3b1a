//! Parameter-efficient fine-tuning of a small transformer encoder for
//! speech emotion recognition, on a hand-written reverse-mode autodiff.

pub mod audit;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod head;
pub mod layers;
pub mod model;
pub mod optim;
pub mod params;
pub mod peft;
pub mod pipeline;
pub mod tensor;
pub mod trainer;

pub use backbone::{Backbone, BackboneConfig};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use head::{HeadConfig, HeadState};
pub use model::Model;
pub use params::{ParamId, ParamStore};
pub use peft::{PeftConfig, PeftKind, PeftState};
pub use tensor::{Tape, Tensor, Var};
pub use trainer::{TrainConfig, TrainReport, Trainer};
