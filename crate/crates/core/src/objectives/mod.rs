//! Differentiable layered objectives `f(x, ξ)`.

mod finite_diff;
mod mlp;
mod quadratic;

pub use finite_diff::{finite_diff_grad, grad_check, GradCheckReport, GRAD_CHECK_FLOOR};
pub use mlp::{Activation, MlpClassifier};
pub use quadratic::BlockQuadratic;

use crate::data::Batch;
use crate::error::Result;
use crate::layered::{ActiveSet, LayeredVector, MaskedGrad};

/// A loss over layered parameters.
///
/// `loss_and_grad` must fill exactly the blocks in `active`; everything else
/// stays zero and is marked absent in the returned [`MaskedGrad`]. The
/// entries it does fill must not depend on which other layers are active.
pub trait Objective: Send + Sync {
    fn layer_sizes(&self) -> Vec<usize>;

    fn loss(&self, x: &LayeredVector, batch: &Batch) -> Result<f64>;

    fn loss_and_grad(&self, x: &LayeredVector, batch: &Batch, active: &ActiveSet) -> Result<(f64, MaskedGrad)>;

    fn grad(&self, x: &LayeredVector, batch: &Batch, active: &ActiveSet) -> Result<MaskedGrad> {
        self.loss_and_grad(x, batch, active).map(|(_, g)| g)
    }

    fn num_params(&self) -> usize {
        self.layer_sizes().iter().sum()
    }
}
