use rand::seq::index;
use rand::Rng;

use crate::bandit::LayerBandit;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::layered::{ActiveSet, LayerId, LayeredVector};
use crate::objectives::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorKind {
    Bandit,
    UniformRandom,
    /// Needs a full gradient pass every step.
    GreedyTopK,
}

/// Outcome of choosing the active layers for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub active: ActiveSet,
    pub redraws: u32,
    /// Parameter-gradient evaluations spent choosing.
    pub cost: usize,
}

/// Uniform-random or greedy top-k choice of `k` layers.
///
/// Greedy ranks layers by the L2 norm of a full minibatch gradient; ties go
/// to the lower index.
pub fn select_layers_ablation<R: Rng + ?Sized>(
    kind: SelectorKind,
    obj: &dyn Objective,
    x: &LayeredVector,
    batch: &Batch,
    k: usize,
    rng: &mut R,
) -> Result<ActiveSet> {
    let n = x.num_layers();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("k = {k} must lie in [1, {n}]")));
    }
    match kind {
        SelectorKind::UniformRandom => Ok(ActiveSet::from_indices(n, index::sample(rng, n, k))),
        SelectorKind::GreedyTopK => {
            let g = obj.grad(x, batch, &ActiveSet::full(n))?;
            let mut ranked: Vec<(LayerId, f64)> = g.layer_norms();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            Ok(ActiveSet::from_indices(n, ranked.into_iter().take(k).map(|(l, _)| l)))
        }
        SelectorKind::Bandit => Err(Error::InvalidConfig(
            "the bandit selector is stateful; use LayerSelector".into(),
        )),
    }
}

/// Strategy choosing `S_t`, plus whatever state it carries between steps.
#[derive(Debug, Clone)]
pub enum LayerSelector {
    Bandit(LayerBandit),
    UniformRandom { k: usize },
    GreedyTopK { k: usize },
}

impl LayerSelector {
    pub fn kind(&self) -> SelectorKind {
        match self {
            LayerSelector::Bandit(_) => SelectorKind::Bandit,
            LayerSelector::UniformRandom { .. } => SelectorKind::UniformRandom,
            LayerSelector::GreedyTopK { .. } => SelectorKind::GreedyTopK,
        }
    }

    pub fn bandit(&self) -> Option<&LayerBandit> {
        match self {
            LayerSelector::Bandit(b) => Some(b),
            _ => None,
        }
    }

    pub fn select<R: Rng + ?Sized>(
        &mut self,
        obj: &dyn Objective,
        x: &LayeredVector,
        batch: &Batch,
        rng: &mut R,
    ) -> Result<Selection> {
        match self {
            LayerSelector::Bandit(b) => {
                let before = b.redraws();
                let active = b.sample(rng);
                Ok(Selection {
                    active,
                    redraws: (b.redraws() - before) as u32,
                    cost: 0,
                })
            }
            LayerSelector::UniformRandom { k } => Ok(Selection {
                active: select_layers_ablation(SelectorKind::UniformRandom, obj, x, batch, *k, rng)?,
                redraws: 0,
                cost: 0,
            }),
            LayerSelector::GreedyTopK { k } => Ok(Selection {
                active: select_layers_ablation(SelectorKind::GreedyTopK, obj, x, batch, *k, rng)?,
                redraws: 0,
                cost: x.len(),
            }),
        }
    }

    /// Feeds the per-layer norms of the step back to the selector.
    pub fn observe(&mut self, active: &ActiveSet, norms: &[(LayerId, f64)]) -> Result<()> {
        match self {
            LayerSelector::Bandit(b) => b.update(active, norms),
            _ => Ok(()),
        }
    }
}
