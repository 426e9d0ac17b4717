//! Bandit-driven layer sampling.
//!
//! Each layer `l` is kept active with probability `p_l`, where the vector
//! `p` sums to a budget `s` and every entry lies in `[p_min, 1]`. After a
//! step the sampled layers receive an importance-weighted pseudo-loss
//!
//! ```text
//! k_l = G²/p_min² − ‖r_l‖²/p_l²     (l sampled, G = max sampled ‖r‖)
//! k_l = 0                          (l not sampled)
//! ```
//!
//! the weights are updated multiplicatively, `u_l = p_l exp(−α k_l / p_l)`,
//! and `u` is mapped back onto the feasible set by KL projection.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layered::{ActiveSet, LayerId};

/// Tolerance on `Σ p = s` accepted by [`SamplingDistribution::validate`].
pub const SUM_TOLERANCE: f64 = 1e-9;
/// Target residual of the projection bisection.
pub const PROJECTION_TOLERANCE: f64 = 1e-12;
pub const PROJECTION_MAX_ITERS: usize = 200;

/// Per-layer inclusion probabilities with budget `s` and floor `p_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDistribution {
    p: Vec<f64>,
    s: f64,
    p_min: f64,
}

fn check_feasible(n: usize, s: f64, p_min: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::Infeasible("no layers".into()));
    }
    if !(p_min > 0.0 && s > 0.0 && p_min.is_finite() && s.is_finite()) {
        return Err(Error::Infeasible(format!(
            "need s > 0 and p_min > 0, got s={s}, p_min={p_min}"
        )));
    }
    let n = n as f64;
    if n * p_min > s * (1.0 + 1e-12) {
        return Err(Error::Infeasible(format!("N·p_min = {} exceeds s = {s}", n * p_min)));
    }
    if s > n * (1.0 + 1e-12) {
        return Err(Error::Infeasible(format!("s = {s} exceeds N = {n}")));
    }
    Ok(())
}

impl SamplingDistribution {
    /// `p_l = s/N` for every layer.
    pub fn init_uniform(n: usize, s: f64, p_min: f64) -> Result<Self> {
        check_feasible(n, s, p_min)?;
        Ok(Self {
            p: vec![s / n as f64; n],
            s,
            p_min,
        })
    }

    pub fn from_probs(p: Vec<f64>, s: f64, p_min: f64) -> Result<Self> {
        let d = Self { p, s, p_min };
        d.validate()?;
        Ok(d)
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn budget(&self) -> f64 {
        self.s
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    pub fn num_layers(&self) -> usize {
        self.p.len()
    }

    /// Checks `|Σp − s| ≤ 1e-9` and `p_min ≤ p_l ≤ 1`.
    pub fn validate(&self) -> Result<()> {
        check_feasible(self.p.len(), self.s, self.p_min)?;
        let sum: f64 = self.p.iter().sum();
        if (sum - self.s).abs() > SUM_TOLERANCE {
            return Err(Error::Infeasible(format!("Σp = {sum} differs from s = {}", self.s)));
        }
        if let Some((l, p)) = self.p.iter().enumerate().find(|(_, &p)| !(p >= self.p_min && p <= 1.0)) {
            return Err(Error::Infeasible(format!("p[{l}] = {p} outside [{}, 1]", self.p_min)));
        }
        Ok(())
    }
}

/// Which norms the pseudo-loss maximum `G` ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaxNormScope {
    /// Layers sampled in the current iteration.
    #[default]
    Current,
    /// Every norm observed so far.
    Running,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditConfig {
    pub alpha_p: f64,
    pub exponent_clamp: f64,
    pub max_scope: MaxNormScope,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            alpha_p: 1e-4,
            exponent_clamp: 50.0,
            max_scope: MaxNormScope::Current,
        }
    }
}

impl BanditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_p > 0.0 && self.alpha_p.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha_p = {} must be > 0", self.alpha_p)));
        }
        if !(self.exponent_clamp > 0.0 && self.exponent_clamp.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "exponent_clamp = {} must be > 0",
                self.exponent_clamp
            )));
        }
        Ok(())
    }
}

/// Independent Bernoulli draw per layer; an empty draw is discarded and
/// redrawn. Returns the set and the number of redraws.
pub fn sample_with_redraws<R: Rng + ?Sized>(dist: &SamplingDistribution, rng: &mut R) -> (ActiveSet, u32) {
    let mut redraws = 0;
    loop {
        let mask: Vec<bool> = dist.p.iter().map(|&p| rng.random::<f64>() < p).collect();
        if mask.iter().any(|&b| b) {
            return (ActiveSet::from_mask(mask), redraws);
        }
        redraws += 1;
        log::debug!("empty layer draw, resampling (redraw {redraws})");
    }
}

pub fn sample_active_set<R: Rng + ?Sized>(dist: &SamplingDistribution, rng: &mut R) -> ActiveSet {
    sample_with_redraws(dist, rng).0
}

fn norms_on_active(r_norms: &[(LayerId, f64)], active: &ActiveSet, n: usize) -> Result<Vec<f64>> {
    if active.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    let mut out = vec![f64::NAN; n];
    for &(l, v) in r_norms {
        if !active.contains(l) {
            return Err(Error::ShapeMismatch(format!("norm given for inactive layer {l}")));
        }
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::NonFinite(format!("norm of layer {l} is {v}")));
        }
        out[l] = v;
    }
    if let Some(l) = active.iter().find(|&l| out[l].is_nan()) {
        return Err(Error::ShapeMismatch(format!("no norm for active layer {l}")));
    }
    Ok(out)
}

/// Pseudo-loss with `G` supplied by the caller (`G` must dominate the
/// sampled norms).
pub fn pseudo_loss_with_max(
    r_norms: &[(LayerId, f64)],
    dist: &SamplingDistribution,
    active: &ActiveSet,
    g_max: f64,
) -> Result<Vec<f64>> {
    let n = dist.num_layers();
    if active.num_layers() != n {
        return Err(Error::ShapeMismatch("active set does not match distribution".into()));
    }
    let norms = norms_on_active(r_norms, active, n)?;
    let floor = g_max * g_max / (dist.p_min * dist.p_min);
    Ok((0..n)
        .map(|l| {
            if active.contains(l) {
                let p = dist.p[l];
                // ‖r‖ ≤ G and p ≥ p_min make this nonnegative up to rounding
                (floor - norms[l] * norms[l] / (p * p)).max(0.0)
            } else {
                0.0
            }
        })
        .collect())
}

/// Pseudo-loss with `G` the largest norm among the sampled layers.
pub fn pseudo_loss(r_norms: &[(LayerId, f64)], dist: &SamplingDistribution, active: &ActiveSet) -> Result<Vec<f64>> {
    let g = r_norms.iter().map(|&(_, v)| v).fold(0.0, f64::max);
    pseudo_loss_with_max(r_norms, dist, active, g)
}

/// `u_l = p_l · exp(clamp(−α k_l / p_l, −clamp, 0))`.
pub fn exp_update(dist: &SamplingDistribution, k: &[f64], cfg: &BanditConfig) -> Vec<f64> {
    dist.p
        .iter()
        .zip(k)
        .map(|(&p, &kl)| p * (-cfg.alpha_p * kl / p).clamp(-cfg.exponent_clamp, 0.0).exp())
        .collect()
}

/// KL projection of positive weights `u` onto
/// `{q : Σ q = s, p_min ≤ q ≤ 1}`.
///
/// The minimiser has the form `q_l = clip(c·u_l, p_min, 1)`; the scalar `c`
/// is found by bisection on the nondecreasing map `c ↦ Σ clip(c·u_l)`.
pub fn kl_project(u: &[f64], s: f64, p_min: f64) -> Result<SamplingDistribution> {
    check_feasible(u.len(), s, p_min)?;
    if let Some(bad) = u.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Infeasible(format!("weights must be positive, got {bad}")));
    }
    let mass = |c: f64| -> f64 { u.iter().map(|&v| (c * v).clamp(p_min, 1.0)).sum() };
    let u_min = u.iter().copied().fold(f64::INFINITY, f64::min);

    let (mut lo, mut hi) = (0.0, 1.0 / u_min);
    let mut c = None;
    for bound in [lo, hi] {
        if (mass(bound) - s).abs() <= PROJECTION_TOLERANCE {
            c = Some(bound);
            break;
        }
    }
    let mut residual = f64::INFINITY;
    let mut iters = 0;
    while c.is_none() && iters < PROJECTION_MAX_ITERS {
        iters += 1;
        let mid = 0.5 * (lo + hi);
        let m = mass(mid);
        residual = m - s;
        if residual.abs() <= PROJECTION_TOLERANCE {
            c = Some(mid);
        } else if mid <= lo || mid >= hi {
            break;
        } else if residual < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = c.ok_or(Error::ProjectionDiverged {
        iterations: iters,
        residual,
    })?;
    Ok(SamplingDistribution {
        p: u.iter().map(|&v| (c * v).clamp(p_min, 1.0)).collect(),
        s,
        p_min,
    })
}

/// One full distribution update: pseudo-loss, exponential step, projection.
pub fn update_distribution(
    dist: &SamplingDistribution,
    active: &ActiveSet,
    r_norms: &[(LayerId, f64)],
    cfg: &BanditConfig,
) -> Result<SamplingDistribution> {
    let k = pseudo_loss(r_norms, dist, active)?;
    kl_project(&exp_update(dist, &k, cfg), dist.s, dist.p_min)
}

/// Sampling distribution plus the state the update rule carries between
/// iterations.
#[derive(Debug, Clone)]
pub struct LayerBandit {
    dist: SamplingDistribution,
    cfg: BanditConfig,
    running_max: f64,
    redraws: u64,
}

impl LayerBandit {
    pub fn new(dist: SamplingDistribution, cfg: BanditConfig) -> Result<Self> {
        dist.validate()?;
        cfg.validate()?;
        Ok(Self {
            dist,
            cfg,
            running_max: 0.0,
            redraws: 0,
        })
    }

    pub fn distribution(&self) -> &SamplingDistribution {
        &self.dist
    }

    pub fn config(&self) -> &BanditConfig {
        &self.cfg
    }

    /// Total number of empty draws discarded so far.
    pub fn redraws(&self) -> u64 {
        self.redraws
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> ActiveSet {
        let (set, redraws) = sample_with_redraws(&self.dist, rng);
        self.redraws += u64::from(redraws);
        set
    }

    /// Applies one update and re-checks the distribution invariants.
    pub fn update(&mut self, active: &ActiveSet, norms: &[(LayerId, f64)]) -> Result<()> {
        let next = match self.cfg.max_scope {
            MaxNormScope::Current => update_distribution(&self.dist, active, norms, &self.cfg)?,
            MaxNormScope::Running => {
                let current = norms.iter().map(|&(_, v)| v).fold(0.0, f64::max);
                self.running_max = self.running_max.max(current);
                let k = pseudo_loss_with_max(norms, &self.dist, active, self.running_max)?;
                kl_project(&exp_update(&self.dist, &k, &self.cfg), self.dist.s, self.dist.p_min)?
            }
        };
        next.validate()?;
        self.dist = next;
        Ok(())
    }
}
