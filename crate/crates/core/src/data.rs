//! Synthetic datasets and minibatching.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// New matrix made of the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Identifies a minibatch: epoch and position inside the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct BatchId {
    pub epoch: u64,
    pub index: u64,
}

/// A minibatch `ξ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Vec<usize>,
    pub id: BatchId,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Vec<usize>, id: BatchId) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::ShapeMismatch("batch must hold at least one row".into()));
        }
        if inputs.rows() != targets.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} input rows but {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        Ok(Self { inputs, targets, id })
    }

    /// Featureless single-sample batch, used by analytic objectives whose
    /// only per-batch randomness is keyed by `id`.
    pub fn token(id: BatchId) -> Self {
        Self {
            inputs: Matrix::zeros(1, 0),
            targets: vec![0],
            id,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Labelled classification data.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub seed: u64,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize, seed: u64) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::InvalidConfig(format!("label {bad} outside [0, {class_count})")));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The whole dataset as one batch.
    pub fn as_batch(&self) -> Batch {
        Batch {
            inputs: self.features.clone(),
            targets: self.labels.clone(),
            id: BatchId::default(),
        }
    }
}

/// Two interleaving half circles.
///
/// The first `n/2` rows are class 0 at `(cos θ, sin θ)`, the rest class 1 at
/// `(1 - cos θ, 0.5 - sin θ)`, with `θ` evenly spaced over `[0, π]`. Each
/// coordinate then receives `N(0, noise²)` jitter drawn from the dataset
/// stream of `seed`.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("two moons needs an even n >= 2, got {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise must be >= 0, got {noise}")));
    }
    let half = n / 2;
    let theta = |i: usize| {
        if half == 1 {
            0.0
        } else {
            PI * i as f64 / (half - 1) as f64
        }
    };
    let mut rng = stream_rng(seed, Stream::Dataset);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for class in 0..2 {
        for i in 0..half {
            let t = theta(i);
            let (x, y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let jx: f64 = StandardNormal.sample(&mut rng);
            let jy: f64 = StandardNormal.sample(&mut rng);
            data.push(x + noise * jx);
            data.push(y + noise * jy);
            labels.push(class);
        }
    }
    Dataset::new(Matrix::new(n, 2, data)?, labels, 2, seed)
}

/// Isotropic Gaussian blobs around `k` centers equally spaced on the unit
/// circle. Row `i` belongs to class `i % k`.
pub fn gen_blobs(n: usize, k: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    if k < 2 || n < k {
        return Err(Error::InvalidConfig(format!(
            "blobs need n >= k >= 2, got n={n}, k={k}"
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut rng = stream_rng(seed, Stream::Dataset);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        let angle = 2.0 * PI * class as f64 / k as f64;
        let jx: f64 = StandardNormal.sample(&mut rng);
        let jy: f64 = StandardNormal.sample(&mut rng);
        data.push(angle.cos() + sigma * jx);
        data.push(angle.sin() + sigma * jy);
        labels.push(class);
    }
    Dataset::new(Matrix::new(n, 2, data)?, labels, k, seed)
}

/// Splits one epoch into shuffled batches. The permutation depends only on
/// `(seed, epoch)`; the last short batch is kept.
pub fn minibatches(ds: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Minibatch { epoch }));
    order
        .chunks(batch_size)
        .enumerate()
        .map(|(index, rows)| Batch {
            inputs: ds.features.select_rows(rows),
            targets: rows.iter().map(|&r| ds.labels[r]).collect(),
            id: BatchId {
                epoch,
                index: index as u64,
            },
        })
        .collect()
}

/// Endless minibatch source cycling through epochs.
#[derive(Debug, Clone)]
pub struct BatchStream<'a> {
    ds: &'a Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    pending: std::vec::IntoIter<Batch>,
}

impl<'a> BatchStream<'a> {
    pub fn new(ds: &'a Dataset, batch_size: usize, seed: u64) -> Self {
        Self {
            ds,
            batch_size,
            seed,
            epoch: 0,
            pending: minibatches(ds, batch_size, seed, 0).into_iter(),
        }
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if let Some(b) = self.pending.next() {
            return Some(b);
        }
        self.epoch += 1;
        self.pending = minibatches(self.ds, self.batch_size, self.seed, self.epoch).into_iter();
        self.pending.next()
    }
}
