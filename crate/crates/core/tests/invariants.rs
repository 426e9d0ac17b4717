use sparsam::bandit::{sample_with_redraws, SamplingDistribution};
use sparsam::data::{gen_two_moons, Batch, BatchId};
use sparsam::layered::LayeredVector;
use sparsam::metrics::{active_ratio, RunRecord};
use sparsam::objectives::{Activation, BlockQuadratic, MlpClassifier};
use sparsam::optim::{two_pass_step, OptimizerState, StepConfig};
use sparsam::rng::{stream_rng, Stream};
use sparsam::train::{train, train_with, OptimizerKind, Problem, TrainConfig};

fn moons() -> Problem {
    Problem::Classifier {
        model: MlpClassifier::new(vec![2, 8, 8, 2], Activation::Tanh, true).unwrap(),
        train: gen_two_moons(64, 0.1, 1).unwrap(),
        test: Some(gen_two_moons(64, 0.1, 2).unwrap()),
        batch_size: 16,
    }
}

#[test]
fn uniform_sampling_ratio_tracks_twice_the_budget_fraction() {
    // Many layers, so the redraw-on-empty bias (0.8^50) is negligible.
    let n = 50;
    let sizes = vec![2; n];
    let q = BlockQuadratic::new(vec![1.0; n], LayeredVector::zeros(&sizes), 0.1, 0).unwrap();
    let dist = SamplingDistribution::init_uniform(n, 0.2 * n as f64, 0.02).unwrap();
    let mut rng = stream_rng(9, Stream::Sampler);
    let mut x = LayeredVector::filled(&sizes, 1.0);
    let mut state = OptimizerState::new(&sizes);
    let mut record = RunRecord::new("uniform", 9, sizes.clone());
    let steps = 2000;
    for t in 0..steps {
        let (active, _) = sample_with_redraws(&dist, &mut rng);
        let batch = Batch::token(BatchId { epoch: 0, index: t });
        record.push(two_pass_step(&q, &mut x, &batch, &mut state, &active, &StepConfig::default()).unwrap());
    }
    let ratio = active_ratio(&record, record.total_params());
    let tol = 4.0 * (0.2f64 * 0.8 / steps as f64).sqrt();
    assert!((ratio - 0.4).abs() <= tol, "ratio {ratio}, tolerance {tol}");
}

#[test]
fn sparse_variants_never_touch_frozen_layers() {
    let problem = moons();
    for kind in [
        OptimizerKind::SlSam,
        OptimizerKind::SlS2Sam,
        OptimizerKind::RandomSlSam,
        OptimizerKind::TopSlSam,
    ] {
        let mut cfg = TrainConfig::new(kind, 150, 4);
        cfg.bandit.s_over_n = 0.34;
        let mut prev = (problem.initial_params(4), OptimizerState::new(&problem.layer_sizes()));
        let mut frozen_seen = 0;
        train_with(&problem, &cfg, "freeze", |view| {
            let active = &view.telemetry.active_layers;
            for l in (0..active.num_layers()).filter(|&l| !active.contains(l)) {
                assert_eq!(view.params.block(l), prev.0.block(l), "{kind} x layer {l}");
                assert_eq!(view.state.m.block(l), prev.1.m.block(l), "{kind} m layer {l}");
                assert_eq!(view.state.v.block(l), prev.1.v.block(l), "{kind} v layer {l}");
                frozen_seen += 1;
            }
            prev = (view.params.clone(), view.state.clone());
            Ok(())
        })
        .unwrap();
        assert!(frozen_seen > 0, "{kind} never froze a layer");
    }
}

#[test]
fn identical_seed_reproduces_every_non_timing_field() {
    let problem = moons();
    for kind in OptimizerKind::ALL {
        let cfg = TrainConfig::new(kind, 60, 21);
        let a = train(&problem, &cfg, "d").unwrap();
        let b = train(&problem, &cfg, "d").unwrap();
        assert_eq!(a.params, b.params, "{kind}");
        let strip = |r: &RunRecord| {
            r.steps
                .iter()
                .cloned()
                .map(|mut s| {
                    s.wall_ns = 0;
                    s
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a.record), strip(&b.record), "{kind}");
        assert_eq!(a.record.summary, b.record.summary, "{kind}");
    }
}

#[test]
fn different_seeds_give_different_runs() {
    let problem = moons();
    let a = train(&problem, &TrainConfig::new(OptimizerKind::SlSam, 30, 1), "d").unwrap();
    let b = train(&problem, &TrainConfig::new(OptimizerKind::SlSam, 30, 2), "d").unwrap();
    assert_ne!(a.params, b.params);
}

#[test]
fn single_step_variant_uses_one_step_old_gradients() {
    let problem = moons();
    let out = train(&problem, &TrainConfig::new(OptimizerKind::S2Sam, 40, 3), "d").unwrap();
    for s in &out.record.steps[1..] {
        assert_eq!(s.grad_passes, 1);
        assert!(s.staleness.iter().all(|&(_, age)| age == 1));
    }
}
