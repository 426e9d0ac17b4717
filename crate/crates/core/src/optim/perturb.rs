use crate::error::{Error, Result};
use crate::layered::{ActiveSet, LayeredVector};

/// How the ascent direction is normalised to radius `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbNorm {
    /// All active blocks share one scale `ρ / ‖r_active‖₂`.
    Global,
    /// Each active block is scaled to norm `ρ` on its own.
    PerLayer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamConfig {
    pub rho: f64,
    pub perturb_norm: PerturbNorm,
}

impl Default for SamConfig {
    fn default() -> Self {
        Self {
            rho: 0.01,
            perturb_norm: PerturbNorm::PerLayer,
        }
    }
}

impl SamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidConfig(format!("rho = {} must be >= 0", self.rho)));
        }
        Ok(())
    }
}

/// Adversarial perturbation `ε` built from `r` on `active`. Zero-norm blocks
/// (or a zero joint norm) give a zero perturbation; inactive blocks are zero.
pub fn sam_perturb(r: &LayeredVector, active: &ActiveSet, cfg: &SamConfig) -> LayeredVector {
    let mut eps = LayeredVector::zeros(&r.layer_sizes());
    let scale_into = |eps: &mut LayeredVector, l: usize, scale: f64| {
        for (e, v) in eps.block_mut(l).iter_mut().zip(r.block(l)) {
            *e = scale * v;
        }
    };
    match cfg.perturb_norm {
        PerturbNorm::PerLayer => {
            for l in active.iter() {
                let n = r.layer_l2_norm(l);
                if n > 0.0 {
                    scale_into(&mut eps, l, cfg.rho / n);
                }
            }
        }
        PerturbNorm::Global => {
            let n = r.masked_l2_norm(active);
            if n > 0.0 {
                for l in active.iter() {
                    scale_into(&mut eps, l, cfg.rho / n);
                }
            }
        }
    }
    eps
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lv(blocks: &[&[f64]]) -> LayeredVector {
        LayeredVector::from_blocks(blocks.iter().map(|b| b.to_vec()).collect()).unwrap()
    }

    fn approx(a: &LayeredVector, b: &LayeredVector) -> bool {
        a.blocks()
            .iter()
            .flatten()
            .zip(b.blocks().iter().flatten())
            .all(|(x, y)| (x - y).abs() < 1e-15)
    }

    #[test]
    fn per_layer_unit_scaling() {
        let cfg = SamConfig {
            rho: 0.01,
            perturb_norm: PerturbNorm::PerLayer,
        };
        let eps = sam_perturb(&lv(&[&[3.0, 4.0]]), &ActiveSet::full(1), &cfg);
        assert!(approx(&eps, &lv(&[&[0.006, 0.008]])));
    }

    #[test]
    fn zero_block_gives_zero_perturbation() {
        let cfg = SamConfig::default();
        let eps = sam_perturb(&lv(&[&[0.0, 0.0], &[1.0]]), &ActiveSet::full(2), &cfg);
        assert_eq!(eps.block(0), &[0.0, 0.0]);
        let cfg = SamConfig {
            perturb_norm: PerturbNorm::Global,
            ..cfg
        };
        let eps = sam_perturb(&lv(&[&[0.0, 0.0]]), &ActiveSet::full(1), &cfg);
        assert_eq!(eps.total_l1_norm(), 0.0);
    }

    #[test]
    fn global_joint_scaling() {
        let cfg = SamConfig {
            rho: 0.01,
            perturb_norm: PerturbNorm::Global,
        };
        let eps = sam_perturb(&lv(&[&[3.0], &[4.0]]), &ActiveSet::full(2), &cfg);
        assert!(approx(&eps, &lv(&[&[0.006], &[0.008]])));
    }

    #[test]
    fn inactive_blocks_stay_zero() {
        let cfg = SamConfig {
            rho: 1.0,
            perturb_norm: PerturbNorm::Global,
        };
        let eps = sam_perturb(&lv(&[&[3.0], &[4.0]]), &ActiveSet::from_indices(2, [1]), &cfg);
        assert_eq!(eps, lv(&[&[0.0], &[1.0]]));
    }

    proptest! {
        #[test]
        fn perturbation_has_radius_rho(
            blocks in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 1..6), 1..5),
            rho in 1e-4f64..1.0,
        ) {
            let r = LayeredVector::from_blocks(blocks).unwrap();
            let full = ActiveSet::full(r.num_layers());
            let eps = sam_perturb(&r, &full, &SamConfig { rho, perturb_norm: PerturbNorm::PerLayer });
            for l in 0..r.num_layers() {
                if r.layer_l2_norm(l) > 0.0 {
                    prop_assert!((eps.layer_l2_norm(l) - rho).abs() <= 1e-12);
                }
            }
            let eps = sam_perturb(&r, &full, &SamConfig { rho, perturb_norm: PerturbNorm::Global });
            if r.masked_l2_norm(&full) > 0.0 {
                prop_assert!((eps.masked_l2_norm(&full) - rho).abs() <= 1e-12);
            }
        }
    }
}
