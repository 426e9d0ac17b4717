//! AdamW base step, SAM perturbations, and the SAM optimizer family.

mod adamw;
mod perturb;
mod selector;
mod steps;

pub use adamw::{adamw_step, AdamWConfig, GradStash, OptimizerState};
pub use perturb::{sam_perturb, PerturbNorm, SamConfig};
pub use selector::{select_layers_ablation, LayerSelector, Selection, SelectorKind};
pub use steps::{
    adamw_train_step, adasam_step, masked_adamw_step, s2sam_step, sl_s2sam_step, slsam_step, two_pass_step, StepConfig,
};
