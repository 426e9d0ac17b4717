//! Per-step telemetry and run-level aggregates.

use crate::layered::{ActiveSet, LayerId};

/// What one optimizer step did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTelemetry {
    /// 1-based step index.
    pub step: u64,
    /// Minibatch loss at the pre-update iterate.
    pub loss: f64,
    /// L1 norm of the gradient the step computed on its active layers
    /// (the ascent gradient for two-pass variants).
    pub grad_l1: f64,
    pub active_layers: ActiveSet,
    /// `Σ_{l ∈ active} d_l`.
    pub active_param_count: usize,
    /// Sparse gradient passes over `active_layers`: 1 or 2.
    pub grad_passes: u8,
    /// Parameter-gradient evaluations spent on layer selection (greedy
    /// top-k pays a full pass each step; zero otherwise).
    pub selection_params: usize,
    /// Per-layer norms fed to the sampler (or of the ascent gradient).
    pub layer_norms: Vec<(LayerId, f64)>,
    /// Age of the stashed gradient used for each sampled layer.
    pub staleness: Vec<(LayerId, u64)>,
    /// Empty draws discarded before `active_layers`.
    pub redraws: u32,
    /// Full-gradient L1 norm at the pre-update iterate, when probed.
    pub probe_grad_l1: Option<f64>,
    pub wall_ns: u64,
}

impl StepTelemetry {
    /// Parameter-gradient evaluations charged to this step.
    pub fn param_grad_evals(&self) -> usize {
        self.grad_passes as usize * self.active_param_count + self.selection_params
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub final_loss: f64,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub active_ratio: f64,
    pub layer_frequency: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub config_digest: String,
    pub seed: u64,
    pub layer_sizes: Vec<usize>,
    pub steps: Vec<StepTelemetry>,
    pub summary: Option<RunSummary>,
}

impl RunRecord {
    pub fn new(config_digest: impl Into<String>, seed: u64, layer_sizes: Vec<usize>) -> Self {
        Self {
            config_digest: config_digest.into(),
            seed,
            layer_sizes,
            steps: Vec::new(),
            summary: None,
        }
    }

    /// Appends a step; steps must arrive in strictly increasing order.
    pub fn push(&mut self, step: StepTelemetry) {
        if let Some(last) = self.steps.last() {
            assert!(step.step > last.step, "steps must be strictly increasing");
        }
        self.steps.push(step);
    }

    pub fn total_params(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    pub fn total_grad_passes(&self) -> u64 {
        self.steps.iter().map(|s| u64::from(s.grad_passes)).sum()
    }

    pub fn total_param_grad_evals(&self) -> usize {
        self.steps.iter().map(StepTelemetry::param_grad_evals).sum()
    }
}

/// Parameter-gradient evaluations relative to one dense pass per step:
/// `Σ_t (passes_t · active_t + selection_t) / (T · d)`.
pub fn active_ratio(run: &RunRecord, total_params: usize) -> f64 {
    assert!(!run.steps.is_empty(), "active ratio of an empty run");
    run.total_param_grad_evals() as f64 / (run.steps.len() as f64 * total_params as f64)
}

/// Fraction of steps in which each layer was active.
pub fn layer_frequency(run: &RunRecord) -> Vec<f64> {
    assert!(!run.steps.is_empty(), "layer frequency of an empty run");
    let n = run.steps[0].active_layers.num_layers();
    let mut counts = vec![0usize; n];
    for s in &run.steps {
        s.active_layers.iter().for_each(|l| counts[l] += 1);
    }
    let t = run.steps.len() as f64;
    counts.into_iter().map(|c| c as f64 / t).collect()
}

/// Means over consecutive non-overlapping windows, labelled by the last step
/// of each window. A trailing partial window is kept.
pub fn windowed_means(points: &[(u64, f64)], window: usize) -> Vec<(u64, f64)> {
    assert!(window >= 1, "window must be positive");
    points
        .chunks(window)
        .map(|c| {
            let mean = c.iter().map(|p| p.1).sum::<f64>() / c.len() as f64;
            (c.last().unwrap().0, mean)
        })
        .collect()
}

/// Windowed means of the per-step `grad_l1`.
pub fn grad_l1_trend(run: &RunRecord, window: usize) -> Vec<(u64, f64)> {
    let pts: Vec<(u64, f64)> = run.steps.iter().map(|s| (s.step, s.grad_l1)).collect();
    windowed_means(&pts, window)
}

/// Windowed means of the full-gradient probe, over the steps that have one.
pub fn probe_l1_trend(run: &RunRecord, window: usize) -> Vec<(u64, f64)> {
    let pts: Vec<(u64, f64)> = run
        .steps
        .iter()
        .filter_map(|s| s.probe_grad_l1.map(|p| (s.step, p)))
        .collect();
    windowed_means(&pts, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn step(t: u64, active: ActiveSet, sizes: &[usize], passes: u8, l1: f64) -> StepTelemetry {
        StepTelemetry {
            step: t,
            loss: 0.0,
            grad_l1: l1,
            active_param_count: active.param_count(sizes),
            active_layers: active,
            grad_passes: passes,
            selection_params: 0,
            layer_norms: vec![],
            staleness: vec![],
            redraws: 0,
            probe_grad_l1: None,
            wall_ns: 0,
        }
    }

    fn run_of(sizes: &[usize], steps: Vec<StepTelemetry>) -> RunRecord {
        let mut r = RunRecord::new("d", 0, sizes.to_vec());
        steps.into_iter().for_each(|s| r.push(s));
        r
    }

    #[test]
    fn active_ratio_examples() {
        let sizes = [10, 20, 70];
        let dense = |passes| {
            run_of(
                &sizes,
                (1..=5)
                    .map(|t| step(t, ActiveSet::full(3), &sizes, passes, 0.0))
                    .collect(),
            )
        };
        assert_eq!(active_ratio(&dense(1), 100), 1.0);
        assert_eq!(active_ratio(&dense(2), 100), 2.0);
        let one = run_of(
            &sizes,
            vec![step(1, ActiveSet::from_indices(3, [0, 2]), &sizes, 2, 0.0)],
        );
        assert!((active_ratio(&one, 100) - 1.6).abs() < 1e-15);
    }

    #[test]
    fn selection_cost_counts_toward_ratio() {
        let sizes = [5, 5];
        let mut s = step(1, ActiveSet::from_indices(2, [0]), &sizes, 2, 0.0);
        s.selection_params = 10;
        assert_eq!(active_ratio(&run_of(&sizes, vec![s]), 10), 2.0);
    }

    #[test]
    fn layer_frequency_examples() {
        let sizes = [1, 1];
        let run = run_of(
            &sizes,
            (1..=4)
                .map(|t| step(t, ActiveSet::from_indices(2, [0]), &sizes, 2, 0.0))
                .collect(),
        );
        assert_eq!(layer_frequency(&run), vec![1.0, 0.0]);
    }

    #[test]
    fn fixed_probability_frequency() {
        let sizes = [1, 1];
        let mut rng = stream_rng(5, Stream::Sampler);
        let steps = (1..=10_000)
            .map(|t| {
                let on = rng.random::<f64>() < 0.3;
                let set = if on {
                    ActiveSet::full(2)
                } else {
                    ActiveSet::from_indices(2, [1])
                };
                step(t, set, &sizes, 2, 0.0)
            })
            .collect();
        let f = layer_frequency(&run_of(&sizes, steps));
        assert!((f[0] - 0.3).abs() <= 0.02, "{f:?}");
    }

    #[test]
    fn trend_examples() {
        let sizes = [1];
        let mk = |vals: &[f64]| {
            run_of(
                &sizes,
                vals.iter()
                    .enumerate()
                    .map(|(i, &v)| step(i as u64 + 1, ActiveSet::full(1), &sizes, 1, v))
                    .collect(),
            )
        };
        assert!(grad_l1_trend(&mk(&[3.0; 6]), 2).iter().all(|&(_, m)| m == 3.0));
        assert_eq!(grad_l1_trend(&mk(&[1.0, 2.0, 3.0, 6.0]), 4), vec![(4, 3.0)]);
        assert_eq!(grad_l1_trend(&mk(&[4.0, 2.0]), 1), vec![(1, 4.0), (2, 2.0)]);
    }

    #[test]
    #[should_panic(expected = "strictly increasing")]
    fn rejects_out_of_order_steps() {
        let sizes = [1];
        run_of(
            &sizes,
            vec![
                step(2, ActiveSet::full(1), &sizes, 1, 0.0),
                step(2, ActiveSet::full(1), &sizes, 1, 0.0),
            ],
        );
    }
}
