use crate::error::{Error, Result};
use crate::layered::{ActiveSet, LayerId, LayeredVector};

/// AdamW hyper-parameters. The update carries no bias correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub eta: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Added to `v` inside the square root.
    pub adam_eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta = {} must be > 0", self.eta)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda = {} must be >= 0",
                self.weight_decay
            )));
        }
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::InvalidConfig(format!(
                "beta1 = {}, beta2 = {} must lie in (0, 1)",
                self.beta1, self.beta2
            )));
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "adam_eps = {} must be > 0",
                self.adam_eps
            )));
        }
        Ok(())
    }
}

/// Gradients kept from an earlier step, with the step that produced each
/// layer's entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStash {
    grads: LayeredVector,
    stamps: Vec<Option<u64>>,
}

impl GradStash {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            grads: LayeredVector::zeros(sizes),
            stamps: vec![None; sizes.len()],
        }
    }

    /// Stores the blocks of `g` on `active`, stamped with `step`.
    pub fn store(&mut self, g: &LayeredVector, active: &ActiveSet, step: u64) {
        for l in active.iter() {
            self.grads.block_mut(l).copy_from_slice(g.block(l));
            self.stamps[l] = Some(step);
        }
    }

    pub fn grads(&self) -> &LayeredVector {
        &self.grads
    }

    pub fn is_present(&self, l: LayerId) -> bool {
        self.stamps[l].is_some()
    }

    /// Steps elapsed between the stored entry of `l` and `step`.
    pub fn staleness(&self, l: LayerId, step: u64) -> Option<u64> {
        self.stamps[l].map(|s| step - s)
    }
}

/// Moments, step counter and (single-step variants) the gradient stash.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: LayeredVector,
    pub v: LayeredVector,
    /// Number of completed steps.
    pub t: u64,
    pub prev_grad: Option<GradStash>,
}

impl OptimizerState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: LayeredVector::zeros(sizes),
            v: LayeredVector::zeros(sizes),
            t: 0,
            prev_grad: None,
        }
    }

    /// Largest `m² / (v + adam_eps)` over every coordinate.
    pub fn max_moment_ratio(&self, adam_eps: f64) -> f64 {
        self.m
            .blocks()
            .iter()
            .flatten()
            .zip(self.v.blocks().iter().flatten())
            .map(|(m, v)| m * m / (v + adam_eps))
            .fold(0.0, f64::max)
    }
}

/// One AdamW update on the blocks in `active`:
///
/// ```text
/// m ← β₁ m + (1 − β₁) g
/// v ← β₂ v + (1 − β₂) g ⊙ g
/// x ← x − η m / √(v + ε) − η λ x
/// ```
///
/// Blocks outside `active` keep `x`, `m` and `v` untouched.
pub fn adamw_step(
    state: &mut OptimizerState,
    x: &mut LayeredVector,
    g: &LayeredVector,
    active: &ActiveSet,
    cfg: &AdamWConfig,
) -> Result<()> {
    x.check_shape(g)?;
    x.check_shape(&state.m)?;
    if active.num_layers() != x.num_layers() {
        return Err(Error::ShapeMismatch("active set does not match layer count".into()));
    }
    if let Some(l) = active.iter().find(|&l| g.block(l).iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("gradient of layer {l}")));
    }
    let AdamWConfig {
        eta,
        weight_decay,
        beta1,
        beta2,
        adam_eps,
    } = *cfg;
    for l in active.iter() {
        let gl = g.block(l);
        let (ml, vl) = (state.m.block_mut(l), state.v.block_mut(l));
        for i in 0..gl.len() {
            ml[i] = beta1 * ml[i] + (1.0 - beta1) * gl[i];
            vl[i] = beta2 * vl[i] + (1.0 - beta2) * gl[i] * gl[i];
        }
        let (ml, vl) = (state.m.block(l), state.v.block(l));
        for (i, xi) in x.block_mut(l).iter_mut().enumerate() {
            *xi = *xi - eta * ml[i] / (vl[i] + adam_eps).sqrt() - eta * weight_decay * *xi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> LayeredVector {
        LayeredVector::from_blocks(vec![vec![v]]).unwrap()
    }

    #[test]
    fn first_step_matches_high_precision_trace() {
        let cfg = AdamWConfig {
            eta: 0.1,
            ..AdamWConfig::default()
        };
        let mut st = OptimizerState::new(&[1]);
        let mut x = scalar(1.0);
        adamw_step(&mut st, &mut x, &scalar(1.0), &ActiveSet::full(1), &cfg).unwrap();
        assert!((st.m.block(0)[0] - 0.1).abs() < 1e-15);
        assert!((st.v.block(0)[0] - 1e-3).abs() < 1e-17);
        assert!((x.block(0)[0] - 0.683_773_815_110_133_7).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_isolates_weight_decay() {
        let cfg = AdamWConfig {
            eta: 0.1,
            weight_decay: 0.5,
            ..AdamWConfig::default()
        };
        let mut st = OptimizerState::new(&[1]);
        let mut x = scalar(2.0);
        adamw_step(&mut st, &mut x, &scalar(0.0), &ActiveSet::full(1), &cfg).unwrap();
        assert!((x.block(0)[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn inactive_layers_are_frozen() {
        let cfg = AdamWConfig::default();
        let mut st = OptimizerState::new(&[2, 3]);
        st.m = LayeredVector::filled(&[2, 3], 0.3);
        st.v = LayeredVector::filled(&[2, 3], 0.7);
        let mut x = LayeredVector::filled(&[2, 3], -1.25);
        let before = (x.clone(), st.clone());
        let g = LayeredVector::filled(&[2, 3], 4.0);
        adamw_step(&mut st, &mut x, &g, &ActiveSet::from_indices(2, [0]), &cfg).unwrap();
        assert_eq!(x.block(1), before.0.block(1));
        assert_eq!(st.m.block(1), before.1.m.block(1));
        assert_eq!(st.v.block(1), before.1.v.block(1));
        assert_ne!(x.block(0), before.0.block(0));
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut st = OptimizerState::new(&[1]);
        let mut x = scalar(1.0);
        let g = LayeredVector::zeros(&[1]);
        let mut bad = g.clone();
        bad.block_mut(0)[0] = f64::INFINITY;
        let err = adamw_step(&mut st, &mut x, &bad, &ActiveSet::full(1), &AdamWConfig::default());
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn config_validation() {
        assert!(AdamWConfig::default().validate().is_ok());
        assert!(AdamWConfig {
            beta1: 1.0,
            ..AdamWConfig::default()
        }
        .validate()
        .is_err());
        assert!(AdamWConfig {
            eta: 0.0,
            ..AdamWConfig::default()
        }
        .validate()
        .is_err());
        assert!(AdamWConfig {
            weight_decay: -1.0,
            ..AdamWConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn stash_tracks_staleness() {
        let mut s = GradStash::new(&[1, 1]);
        assert!(!s.is_present(0));
        s.store(&LayeredVector::filled(&[1, 1], 2.0), &ActiveSet::full(2), 1);
        assert_eq!(s.staleness(0, 2), Some(1));
        s.store(
            &LayeredVector::filled(&[1, 1], 3.0),
            &ActiveSet::from_indices(2, [1]),
            4,
        );
        assert_eq!(s.staleness(0, 5), Some(4));
        assert_eq!(s.staleness(1, 5), Some(1));
        assert_eq!(s.grads().block(0), &[2.0]);
    }
}
