//! Contrastive objectives for learning the embedding the detector consumes,
//! plus a linear toy encoder trained on them.

mod contrastive;
mod toy;

pub use contrastive::{
    contrastive_loss_and_grad, nt_xent_grad, nt_xent_grad_raw, nt_xent_loss, nt_xent_loss_raw, supcon_grad, supcon_grad_raw,
    supcon_loss, supcon_loss_raw, ContrastiveBatch,
};
pub use toy::{
    train_toy, JitterSpec, ToyEncoder, ToyExperiment, ToyReport, TrainConfig, TrainOutcome,
};
