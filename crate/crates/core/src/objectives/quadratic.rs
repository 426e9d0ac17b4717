use rand_distr::{Distribution, StandardNormal};

use super::Objective;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::layered::{ActiveSet, LayeredVector, MaskedGrad};
use crate::rng::{stream_rng, Stream};

/// Separable quadratic `Σ_l a_l/2 ‖x_l − c_l‖²`.
///
/// With `noise_sigma > 0` each batch adds a linear term `σ⟨z, x⟩` where `z`
/// is a standard normal vector drawn from the noise stream of the batch id,
/// so the stochastic gradient is `a_l (x_l − c_l) + σ z_l` and both SAM
/// passes on one batch see the same noise.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockQuadratic {
    scales: Vec<f64>,
    centers: LayeredVector,
    noise_sigma: f64,
    noise_seed: u64,
}

impl BlockQuadratic {
    pub fn new(scales: Vec<f64>, centers: LayeredVector, noise_sigma: f64, noise_seed: u64) -> Result<Self> {
        if scales.len() != centers.num_layers() {
            return Err(Error::ShapeMismatch(format!(
                "{} scales for {} layers",
                scales.len(),
                centers.num_layers()
            )));
        }
        if let Some(a) = scales.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::InvalidConfig(format!("scale {a} must be positive")));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise_sigma {noise_sigma} must be >= 0")));
        }
        Ok(Self {
            scales,
            centers,
            noise_sigma,
            noise_seed,
        })
    }

    /// Noise-free quadratic with zero centers.
    pub fn centered(scales: Vec<f64>, dims: &[usize]) -> Result<Self> {
        Self::new(scales, LayeredVector::zeros(dims), 0.0, 0)
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn centers(&self) -> &LayeredVector {
        &self.centers
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    fn noise(&self, batch: &Batch) -> Option<LayeredVector> {
        if self.noise_sigma == 0.0 {
            return None;
        }
        let mut rng = stream_rng(
            self.noise_seed,
            Stream::Noise {
                epoch: batch.id.epoch,
                index: batch.id.index,
            },
        );
        let mut z = LayeredVector::zeros(&self.centers.layer_sizes());
        for l in 0..z.num_layers() {
            for v in z.block_mut(l) {
                *v = StandardNormal.sample(&mut rng);
            }
        }
        Some(z)
    }

    /// Expected loss (noise term removed).
    pub fn mean_loss(&self, x: &LayeredVector) -> Result<f64> {
        x.check_shape(&self.centers)?;
        Ok((0..x.num_layers())
            .map(|l| {
                let sq: f64 = x
                    .block(l)
                    .iter()
                    .zip(self.centers.block(l))
                    .map(|(xi, ci)| (xi - ci) * (xi - ci))
                    .sum();
                0.5 * self.scales[l] * sq
            })
            .sum())
    }

    /// Expected (noise-free) full gradient.
    pub fn mean_grad(&self, x: &LayeredVector) -> Result<LayeredVector> {
        x.check_shape(&self.centers)?;
        let mut g = LayeredVector::zeros(&x.layer_sizes());
        for l in 0..x.num_layers() {
            let a = self.scales[l];
            for ((gi, xi), ci) in g.block_mut(l).iter_mut().zip(x.block(l)).zip(self.centers.block(l)) {
                *gi = a * (xi - ci);
            }
        }
        Ok(g)
    }
}

impl Objective for BlockQuadratic {
    fn layer_sizes(&self) -> Vec<usize> {
        self.centers.layer_sizes()
    }

    fn loss(&self, x: &LayeredVector, batch: &Batch) -> Result<f64> {
        let mut loss = self.mean_loss(x)?;
        if let Some(z) = self.noise(batch) {
            loss += self.noise_sigma * (0..x.num_layers()).map(|l| x.layer_dot(l, &z)).sum::<f64>();
        }
        Ok(loss)
    }

    fn loss_and_grad(&self, x: &LayeredVector, batch: &Batch, active: &ActiveSet) -> Result<(f64, MaskedGrad)> {
        let loss = self.loss(x, batch)?;
        if active.num_layers() != x.num_layers() {
            return Err(Error::ShapeMismatch("active set does not match layer count".into()));
        }
        let noise = self.noise(batch);
        let mut g = LayeredVector::zeros(&x.layer_sizes());
        for l in active.iter() {
            let a = self.scales[l];
            for (i, gi) in g.block_mut(l).iter_mut().enumerate() {
                *gi = a * (x.block(l)[i] - self.centers.block(l)[i]);
                if let Some(z) = &noise {
                    *gi += self.noise_sigma * z.block(l)[i];
                }
            }
        }
        Ok((
            loss,
            MaskedGrad {
                values: g,
                active: active.clone(),
            },
        ))
    }
}
