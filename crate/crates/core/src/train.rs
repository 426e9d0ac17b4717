//! Training loop tying an objective, an optimizer variant and telemetry
//! together.

use std::fmt;
use std::str::FromStr;

use crate::bandit::{BanditConfig, LayerBandit, MaxNormScope, SamplingDistribution};
use crate::data::{Batch, BatchId, BatchStream, Dataset};
use crate::error::{Error, Result};
use crate::layered::{ActiveSet, LayeredVector};
use crate::metrics::{self, RunRecord, RunSummary, StepTelemetry};
use crate::objectives::{BlockQuadratic, MlpClassifier, Objective};
use crate::optim::{
    adamw_train_step, adasam_step, s2sam_step, sl_s2sam_step, slsam_step, LayerSelector, OptimizerState, PerturbNorm,
    StepConfig,
};
use crate::rng::{stream_rng, SeededRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    AdamW,
    AdaSam,
    SlSam,
    S2Sam,
    SlS2Sam,
    RandomSlSam,
    TopSlSam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 7] = [
        Self::AdamW,
        Self::AdaSam,
        Self::SlSam,
        Self::S2Sam,
        Self::SlS2Sam,
        Self::RandomSlSam,
        Self::TopSlSam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::AdamW => "adamw",
            Self::AdaSam => "adasam",
            Self::SlSam => "slsam",
            Self::S2Sam => "s2sam",
            Self::SlS2Sam => "sl_s2sam",
            Self::RandomSlSam => "random_slsam",
            Self::TopSlSam => "top_slsam",
        }
    }

    /// Whether the variant trains a sampled subset of layers.
    pub fn is_sparse(self) -> bool {
        matches!(self, Self::SlSam | Self::SlS2Sam | Self::RandomSlSam | Self::TopSlSam)
    }

    /// Perturbation normalisation used when the config leaves it unset:
    /// per-layer for the sparse variants, global for the dense ones.
    pub fn default_perturb_norm(self) -> PerturbNorm {
        if self.is_sparse() {
            PerturbNorm::PerLayer
        } else {
            PerturbNorm::Global
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown optimizer {s:?}")))
    }
}

/// Layer-sampling settings shared by the sparse variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditSettings {
    /// Expected fraction of layers active per step, `s / N`.
    pub s_over_n: f64,
    /// `p_min = p_min_factor · s / N`.
    pub p_min_factor: f64,
    pub alpha_p: f64,
    pub exponent_clamp: f64,
    pub max_scope: MaxNormScope,
}

impl Default for BanditSettings {
    fn default() -> Self {
        let cfg = BanditConfig::default();
        Self {
            s_over_n: 0.2,
            p_min_factor: 0.1,
            alpha_p: cfg.alpha_p,
            exponent_clamp: cfg.exponent_clamp,
            max_scope: cfg.max_scope,
        }
    }
}

impl BanditSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_over_n > 0.0 && self.s_over_n <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "s_over_n must be in (0, 1], got {}",
                self.s_over_n
            )));
        }
        if !(self.p_min_factor > 0.0 && self.p_min_factor <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "p_min_factor must be in (0, 1], got {}",
                self.p_min_factor
            )));
        }
        self.bandit_config().validate()
    }

    pub fn bandit_config(&self) -> BanditConfig {
        BanditConfig {
            alpha_p: self.alpha_p,
            exponent_clamp: self.exponent_clamp,
            max_scope: self.max_scope,
        }
    }

    /// Budget `s` for `n` layers.
    pub fn budget(&self, n: usize) -> f64 {
        self.s_over_n * n as f64
    }

    pub fn p_min(&self) -> f64 {
        self.p_min_factor * self.s_over_n
    }

    /// Fixed subset size for the uniform-random and top-k selectors.
    pub fn fixed_k(&self, n: usize) -> usize {
        (self.budget(n).round() as usize).clamp(1, n)
    }

    pub fn initial_distribution(&self, n: usize) -> Result<SamplingDistribution> {
        SamplingDistribution::init_uniform(n, self.budget(n), self.p_min())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub step: StepConfig,
    pub bandit: BanditSettings,
    pub steps: u64,
    pub seed: u64,
    /// Probe the full gradient every this many steps; 0 disables the probe.
    pub eval_every: u64,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerKind, steps: u64, seed: u64) -> Self {
        let mut step = StepConfig::default();
        step.sam.perturb_norm = optimizer.default_perturb_norm();
        Self {
            optimizer,
            step,
            bandit: BanditSettings::default(),
            steps,
            seed,
            eval_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        self.step.adamw.validate()?;
        self.step.sam.validate()?;
        self.bandit.validate()
    }

    fn selector(&self, n: usize) -> Result<Option<LayerSelector>> {
        Ok(match self.optimizer {
            OptimizerKind::SlSam | OptimizerKind::SlS2Sam => Some(LayerSelector::Bandit(LayerBandit::new(
                self.bandit.initial_distribution(n)?,
                self.bandit.bandit_config(),
            )?)),
            OptimizerKind::RandomSlSam => Some(LayerSelector::UniformRandom {
                k: self.bandit.fixed_k(n),
            }),
            OptimizerKind::TopSlSam => Some(LayerSelector::GreedyTopK {
                k: self.bandit.fixed_k(n),
            }),
            _ => None,
        })
    }
}

/// What to train and how to feed it.
#[derive(Debug, Clone)]
pub enum Problem {
    Quadratic {
        objective: BlockQuadratic,
        init: LayeredVector,
    },
    Classifier {
        model: MlpClassifier,
        train: Dataset,
        test: Option<Dataset>,
        batch_size: usize,
    },
}

impl Problem {
    pub fn objective(&self) -> &dyn Objective {
        match self {
            Self::Quadratic { objective, .. } => objective,
            Self::Classifier { model, .. } => model,
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.objective().layer_sizes()
    }

    pub fn initial_params(&self, seed: u64) -> LayeredVector {
        match self {
            Self::Quadratic { init, .. } => init.clone(),
            Self::Classifier { model, .. } => model.init_params(seed),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Quadratic { objective, init } => init.check_shape(objective.centers()),
            Self::Classifier {
                model,
                train,
                test,
                batch_size,
            } => {
                if *batch_size == 0 {
                    return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
                }
                let inputs = model.widths()[0];
                for ds in std::iter::once(train).chain(test.iter()) {
                    if ds.features.cols() != inputs {
                        return Err(Error::ShapeMismatch(format!(
                            "model takes {inputs} inputs, dataset has {}",
                            ds.features.cols()
                        )));
                    }
                    if ds.class_count > model.class_count() {
                        return Err(Error::ShapeMismatch(format!(
                            "dataset has {} classes, model outputs {}",
                            ds.class_count,
                            model.class_count()
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// L1 norm of the full-data (noise-free) gradient.
    pub fn full_grad_l1(&self, x: &LayeredVector) -> Result<f64> {
        match self {
            Self::Quadratic { objective, .. } => Ok(objective.mean_grad(x)?.total_l1_norm()),
            Self::Classifier { model, train, .. } => {
                let full = ActiveSet::full(x.num_layers());
                Ok(model.grad(x, &train.as_batch(), &full)?.l1_norm())
            }
        }
    }

    /// Full-data loss, used for the run summary.
    pub fn full_loss(&self, x: &LayeredVector) -> Result<f64> {
        match self {
            Self::Quadratic { objective, .. } => objective.mean_loss(x),
            Self::Classifier { model, train, .. } => model.loss(x, &train.as_batch()),
        }
    }
}

enum Batches<'a> {
    Token(u64),
    Stream(BatchStream<'a>),
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        match self {
            Self::Token(i) => {
                let b = Batch::token(BatchId { epoch: 0, index: *i });
                *i += 1;
                Some(b)
            }
            Self::Stream(s) => s.next(),
        }
    }
}

/// Read-only snapshot handed to the per-step observer, after the update.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub telemetry: &'a StepTelemetry,
    pub params: &'a LayeredVector,
    pub state: &'a OptimizerState,
    /// Sampling distribution after the bandit update, for bandit variants.
    pub distribution: Option<&'a SamplingDistribution>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub params: LayeredVector,
    /// Set when training stopped on a non-finite value; `record` then holds
    /// the steps completed before it and no summary.
    pub diverged: Option<Error>,
}

pub fn train(problem: &Problem, cfg: &TrainConfig, config_digest: &str) -> Result<RunOutcome> {
    train_with(problem, cfg, config_digest, |_| Ok(()))
}

/// Runs `cfg.steps` iterations, calling `observe` after every step.
/// Configuration errors and observer errors abort with `Err`; a non-finite
/// loss or gradient ends the run early with [`RunOutcome::diverged`] set.
pub fn train_with<F>(problem: &Problem, cfg: &TrainConfig, config_digest: &str, mut observe: F) -> Result<RunOutcome>
where
    F: FnMut(&StepView<'_>) -> Result<()>,
{
    cfg.validate()?;
    problem.validate()?;
    let obj = problem.objective();
    let sizes = problem.layer_sizes();
    let mut x = problem.initial_params(cfg.seed);
    let mut state = OptimizerState::new(&sizes);
    let mut selector = cfg.selector(sizes.len())?;
    let mut rng: SeededRng = stream_rng(cfg.seed, Stream::Sampler);
    let mut batches = match problem {
        Problem::Quadratic { .. } => Batches::Token(0),
        Problem::Classifier { train, batch_size, .. } => {
            Batches::Stream(BatchStream::new(train, *batch_size, cfg.seed))
        }
    };
    let mut record = RunRecord::new(config_digest, cfg.seed, sizes.clone());

    for t in 1..=cfg.steps {
        let batch = batches.next().expect("batch source is endless");
        let probe = if cfg.eval_every > 0 && (t - 1) % cfg.eval_every == 0 {
            match problem.full_grad_l1(&x) {
                Ok(v) => Some(v),
                Err(e @ Error::NonFinite(_)) => return Ok(diverged(record, x, e)),
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let result = match (cfg.optimizer, selector.as_mut()) {
            (OptimizerKind::AdamW, _) => adamw_train_step(obj, &mut x, &batch, &mut state, &cfg.step.adamw),
            (OptimizerKind::AdaSam, _) => adasam_step(obj, &mut x, &batch, &mut state, &cfg.step),
            (OptimizerKind::S2Sam, _) => s2sam_step(obj, &mut x, &batch, &mut state, &cfg.step),
            (OptimizerKind::SlS2Sam, Some(sel)) => {
                sl_s2sam_step(obj, &mut x, &batch, &mut state, sel, &mut rng, &cfg.step)
            }
            (_, Some(sel)) => slsam_step(obj, &mut x, &batch, &mut state, sel, &mut rng, &cfg.step),
            (kind, None) => unreachable!("{kind} has no selector"),
        };
        let mut tel = match result {
            Ok(tel) => tel,
            Err(e @ Error::NonFinite(_)) => return Ok(diverged(record, x, e)),
            Err(e) => return Err(e),
        };
        if !tel.loss.is_finite() || !x.is_finite() {
            let e = Error::NonFinite(format!("step {t}: loss {}", tel.loss));
            return Ok(diverged(record, x, e));
        }
        tel.probe_grad_l1 = probe;
        observe(&StepView {
            telemetry: &tel,
            params: &x,
            state: &state,
            distribution: selector
                .as_ref()
                .and_then(LayerSelector::bandit)
                .map(LayerBandit::distribution),
        })?;
        record.push(tel);
    }

    let final_loss = problem.full_loss(&x)?;
    let (train_accuracy, test_accuracy) = match problem {
        Problem::Classifier { model, train, test, .. } => (
            Some(model.accuracy(&x, train)),
            test.as_ref().map(|ds| model.accuracy(&x, ds)),
        ),
        Problem::Quadratic { .. } => (None, None),
    };
    record.summary = Some(RunSummary {
        final_loss,
        train_accuracy,
        test_accuracy,
        active_ratio: metrics::active_ratio(&record, record.total_params()),
        layer_frequency: metrics::layer_frequency(&record),
    });
    log::info!(
        "{}: {} steps, final loss {final_loss:.6e}",
        cfg.optimizer,
        record.steps.len()
    );
    Ok(RunOutcome {
        record,
        params: x,
        diverged: None,
    })
}

fn diverged(record: RunRecord, params: LayeredVector, err: Error) -> RunOutcome {
    log::warn!("training diverged: {err}");
    RunOutcome {
        record,
        params,
        diverged: Some(err),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_two_moons;
    use crate::objectives::Activation;

    fn quadratic() -> Problem {
        let sizes = [2, 3, 1, 2];
        Problem::Quadratic {
            objective: BlockQuadratic::new(vec![1.0, 2.0, 0.5, 4.0], LayeredVector::filled(&sizes, 0.5), 0.1, 3)
                .unwrap(),
            init: LayeredVector::filled(&sizes, 2.0),
        }
    }

    #[test]
    fn optimizer_names_round_trip() {
        for k in OptimizerKind::ALL {
            assert_eq!(k.name().parse::<OptimizerKind>().unwrap(), k);
        }
        assert!("sgd".parse::<OptimizerKind>().is_err());
    }

    #[test]
    fn dense_ratios_and_pass_counts() {
        let p = quadratic();
        for (kind, ratio) in [
            (OptimizerKind::AdamW, 1.0),
            (OptimizerKind::AdaSam, 2.0),
            (OptimizerKind::S2Sam, 1.0),
        ] {
            let out = train(&p, &TrainConfig::new(kind, 30, 1), "x").unwrap();
            let s = out.record.summary.unwrap();
            assert_eq!(s.active_ratio, ratio, "{kind}");
            assert!(s.layer_frequency.iter().all(|&f| f == 1.0));
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let p = quadratic();
        for kind in OptimizerKind::ALL {
            let cfg = TrainConfig::new(kind, 40, 11);
            let a = train(&p, &cfg, "x").unwrap();
            let b = train(&p, &cfg, "x").unwrap();
            assert_eq!(a.params, b.params, "{kind}");
            let strip = |r: &RunRecord| {
                r.steps
                    .iter()
                    .map(|s| (s.loss, s.active_layers.clone(), s.grad_l1))
                    .collect::<Vec<_>>()
            };
            assert_eq!(strip(&a.record), strip(&b.record));
        }
    }

    #[test]
    fn probe_is_recorded_on_schedule() {
        let mut cfg = TrainConfig::new(OptimizerKind::SlSam, 10, 0);
        cfg.eval_every = 4;
        let out = train(&quadratic(), &cfg, "x").unwrap();
        let probed: Vec<u64> = out
            .record
            .steps
            .iter()
            .filter(|s| s.probe_grad_l1.is_some())
            .map(|s| s.step)
            .collect();
        assert_eq!(probed, vec![1, 5, 9]);
    }

    #[test]
    fn observer_sees_bandit_distribution() {
        let mut seen = 0;
        train_with(&quadratic(), &TrainConfig::new(OptimizerKind::SlSam, 5, 0), "x", |v| {
            let d = v.distribution.expect("bandit run");
            assert!((d.probs().iter().sum::<f64>() - d.budget()).abs() < 1e-9);
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, 5);
    }

    #[test]
    fn huge_learning_rate_diverges_gracefully() {
        let mlp = MlpClassifier::new(vec![2, 4, 2], Activation::Relu, true).unwrap();
        let ds = gen_two_moons(20, 0.1, 0).unwrap();
        let p = Problem::Classifier {
            model: mlp,
            train: ds,
            test: None,
            batch_size: 5,
        };
        let mut cfg = TrainConfig::new(OptimizerKind::AdamW, 200, 0);
        cfg.step.adamw.eta = 1e300;
        let out = train(&p, &cfg, "x").unwrap();
        assert!(out.diverged.is_some());
        assert!(out.record.summary.is_none());
        assert!(out.record.steps.len() < 200);
    }

    #[test]
    fn rejects_invalid_settings() {
        let mut cfg = TrainConfig::new(OptimizerKind::SlSam, 5, 0);
        cfg.bandit.s_over_n = 1.5;
        assert!(matches!(train(&quadratic(), &cfg, "x"), Err(Error::InvalidConfig(_))));
    }
}
