use super::Objective;
use crate::data::Batch;
use crate::error::Result;
use crate::layered::{ActiveSet, LayeredVector};

/// Magnitude below which [`grad_check`] measures absolute instead of
/// relative error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h` over every
/// coordinate of every layer.
pub fn finite_diff_grad(obj: &dyn Objective, x: &LayeredVector, batch: &Batch, h: f64) -> Result<LayeredVector> {
    assert!(h > 0.0, "step must be positive");
    let mut probe = x.clone();
    let mut out = LayeredVector::zeros(&x.layer_sizes());
    for l in 0..x.num_layers() {
        for i in 0..x.block(l).len() {
            let orig = probe.block(l)[i];
            probe.block_mut(l)[i] = orig + h;
            let up = obj.loss(&probe, batch)?;
            probe.block_mut(l)[i] = orig - h;
            let down = obj.loss(&probe, batch)?;
            probe.block_mut(l)[i] = orig;
            out.block_mut(l)[i] = (up - down) / (2.0 * h);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_error: f64,
    /// `max |a − n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
    pub max_rel_error: f64,
}

/// Compares the analytic full gradient against [`finite_diff_grad`].
pub fn grad_check(obj: &dyn Objective, x: &LayeredVector, batch: &Batch, h: f64) -> Result<GradCheckReport> {
    let analytic = obj.grad(x, batch, &ActiveSet::full(x.num_layers()))?.values;
    let numeric = finite_diff_grad(obj, x, batch, h)?;
    let mut report = GradCheckReport {
        max_abs_error: 0.0,
        max_rel_error: 0.0,
    };
    for (a, n) in analytic
        .blocks()
        .iter()
        .flatten()
        .zip(numeric.blocks().iter().flatten())
    {
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(GRAD_CHECK_FLOOR);
        report.max_abs_error = report.max_abs_error.max(abs);
        report.max_rel_error = report.max_rel_error.max(rel);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BatchId, Dataset, Matrix};
    use crate::error::Result as CrateResult;
    use crate::layered::MaskedGrad;
    use crate::objectives::{Activation, BlockQuadratic, MlpClassifier};
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    struct Constant;

    impl Objective for Constant {
        fn layer_sizes(&self) -> Vec<usize> {
            vec![2, 1]
        }
        fn loss(&self, _: &LayeredVector, _: &Batch) -> CrateResult<f64> {
            Ok(3.5)
        }
        fn loss_and_grad(&self, x: &LayeredVector, _: &Batch, a: &ActiveSet) -> CrateResult<(f64, MaskedGrad)> {
            Ok((
                3.5,
                MaskedGrad {
                    values: LayeredVector::zeros(&x.layer_sizes()),
                    active: a.clone(),
                },
            ))
        }
    }

    #[test]
    fn quadratic_linear_gradient_is_exact() {
        let q = BlockQuadratic::centered(vec![1.0], &[1]).unwrap();
        let x = LayeredVector::from_blocks(vec![vec![2.0]]).unwrap();
        let g = finite_diff_grad(&q, &x, &Batch::token(BatchId::default()), 1e-6).unwrap();
        assert!((g.block(0)[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        let x = LayeredVector::filled(&[2, 1], 0.7);
        let g = finite_diff_grad(&Constant, &x, &Batch::token(BatchId::default()), 1e-6).unwrap();
        assert_eq!(g.total_l1_norm(), 0.0);
    }

    fn random_batch(seed: u64, rows: usize) -> Batch {
        let mut rng = stream_rng(seed, Stream::Dataset);
        let data: Vec<f64> = (0..rows * 2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..2)).collect();
        Dataset::new(Matrix::new(rows, 2, data).unwrap(), labels, 2, seed)
            .unwrap()
            .as_batch()
    }

    #[test]
    fn mlp_2_16_2_matches_finite_differences() {
        let mlp = MlpClassifier::new(vec![2, 16, 2], Activation::Tanh, true).unwrap();
        for seed in 0..5 {
            let x = mlp.init_params(seed);
            let batch = random_batch(seed, 8);
            let report = grad_check(&mlp, &x, &batch, 1e-6).unwrap();
            assert!(report.max_rel_error <= 1e-5, "seed {seed}: {report:?}");
            // the oracle agrees with itself across step sizes
            let a = finite_diff_grad(&mlp, &x, &batch, 1e-5).unwrap();
            let b = finite_diff_grad(&mlp, &x, &batch, 1e-6).unwrap();
            for (p, q) in a.blocks().iter().flatten().zip(b.blocks().iter().flatten()) {
                assert!((p - q).abs() / p.abs().max(q.abs()).max(GRAD_CHECK_FLOOR) <= 1e-5);
            }
        }
    }
}
