//! Layer-blocked vectors.
//!
//! Parameters, gradients and optimizer moments are all stored as an ordered
//! list of flat per-layer blocks. Shape metadata (matrix vs. bias, fan-in)
//! lives with the objective; everything here is shape-agnostic.

use crate::error::{Error, Result};

/// Index of a layer inside a [`LayeredVector`].
pub type LayerId = usize;

/// Ordered list of per-layer real blocks. `N >= 1`, every block non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredVector {
    blocks: Vec<Vec<f64>>,
}

impl LayeredVector {
    pub fn from_blocks(blocks: Vec<Vec<f64>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidVector("at least one layer required".into()));
        }
        for (l, b) in blocks.iter().enumerate() {
            if b.is_empty() {
                return Err(Error::InvalidVector(format!("layer {l} is empty")));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidVector(format!("layer {l} has non-finite entries")));
            }
        }
        Ok(Self { blocks })
    }

    /// All-zero vector with the given layer sizes.
    ///
    /// Panics if `sizes` is empty or contains a zero.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(!sizes.is_empty(), "at least one layer required");
        assert!(sizes.iter().all(|&d| d > 0), "layer sizes must be positive");
        Self {
            blocks: sizes.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    pub fn filled(sizes: &[usize], value: f64) -> Self {
        let mut v = Self::zeros(sizes);
        v.blocks.iter_mut().for_each(|b| b.fill(value));
        v
    }

    pub fn num_layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    /// Total dimension `d = sum of d_l`.
    pub fn len(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block(&self, l: LayerId) -> &[f64] {
        &self.blocks[l]
    }

    pub fn block_mut(&mut self, l: LayerId) -> &mut [f64] {
        &mut self.blocks[l]
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Vec<f64>> {
        self.blocks
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.blocks.len() == other.blocks.len()
            && self.blocks.iter().zip(&other.blocks).all(|(a, b)| a.len() == b.len())
    }

    pub fn check_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.layer_sizes(),
                other.layer_sizes()
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|v| v.is_finite())
    }

    /// Euclidean norm of block `l`.
    pub fn layer_l2_norm(&self, l: LayerId) -> f64 {
        self.blocks[l].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn layer_dot(&self, l: LayerId, other: &Self) -> f64 {
        self.blocks[l].iter().zip(&other.blocks[l]).map(|(a, b)| a * b).sum()
    }

    /// Sum of absolute values over all blocks.
    pub fn total_l1_norm(&self) -> f64 {
        self.blocks.iter().flatten().map(|v| v.abs()).sum()
    }

    /// L1 norm over the blocks in `active`.
    pub fn masked_l1_norm(&self, active: &ActiveSet) -> f64 {
        active.iter().flat_map(|l| self.blocks[l].iter()).map(|v| v.abs()).sum()
    }

    /// Joint Euclidean norm over the blocks in `active`.
    pub fn masked_l2_norm(&self, active: &ActiveSet) -> f64 {
        active
            .iter()
            .flat_map(|l| self.blocks[l].iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// `y_l += a * x_l` for `l` in `active`. Other blocks are not touched.
    pub fn masked_axpy(&mut self, a: f64, x: &Self, active: &ActiveSet) -> Result<()> {
        self.check_shape(x)?;
        if active.num_layers() != self.num_layers() {
            return Err(Error::ShapeMismatch(format!(
                "active set over {} layers, vector has {}",
                active.num_layers(),
                self.num_layers()
            )));
        }
        for l in active.iter() {
            for (y, xv) in self.blocks[l].iter_mut().zip(&x.blocks[l]) {
                *y += a * xv;
            }
        }
        Ok(())
    }

    /// Unmasked `y += a * x`.
    pub fn axpy(&mut self, a: f64, x: &Self) -> Result<()> {
        self.check_shape(x)?;
        for (yb, xb) in self.blocks.iter_mut().zip(&x.blocks) {
            for (y, xv) in yb.iter_mut().zip(xb) {
                *y += a * xv;
            }
        }
        Ok(())
    }

    /// Elementwise product `self ⊙ other`.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        Ok(Self {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).collect())
                .collect(),
        })
    }

    /// Copy of `self` with blocks outside `active` zeroed.
    pub fn restricted(&self, active: &ActiveSet) -> Self {
        let mut out = self.clone();
        for l in 0..out.num_layers() {
            if !active.contains(l) {
                out.blocks[l].fill(0.0);
            }
        }
        out
    }
}

/// Subset of layer indices taking part in one iteration.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActiveSet {
    mask: Vec<bool>,
}

impl ActiveSet {
    pub fn empty(num_layers: usize) -> Self {
        Self {
            mask: vec![false; num_layers],
        }
    }

    pub fn full(num_layers: usize) -> Self {
        Self {
            mask: vec![true; num_layers],
        }
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self { mask }
    }

    /// Panics if an index is out of range.
    pub fn from_indices<I: IntoIterator<Item = LayerId>>(num_layers: usize, indices: I) -> Self {
        let mut set = Self::empty(num_layers);
        for l in indices {
            assert!(l < num_layers, "layer {l} out of range for {num_layers} layers");
            set.mask[l] = true;
        }
        set
    }

    pub fn num_layers(&self) -> usize {
        self.mask.len()
    }

    pub fn contains(&self, l: LayerId) -> bool {
        self.mask.get(l).copied().unwrap_or(false)
    }

    pub fn insert(&mut self, l: LayerId) {
        self.mask[l] = true;
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub fn is_full(&self) -> bool {
        self.mask.iter().all(|&b| b)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Active indices in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = LayerId> + '_ {
        self.mask.iter().enumerate().filter_map(|(l, &on)| on.then_some(l))
    }

    /// Sum of the sizes of the active layers.
    pub fn param_count(&self, layer_sizes: &[usize]) -> usize {
        self.iter().map(|l| layer_sizes[l]).sum()
    }
}

/// A gradient populated only on `active`; other blocks are zero and absent.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedGrad {
    pub values: LayeredVector,
    pub active: ActiveSet,
}

impl MaskedGrad {
    pub fn is_present(&self, l: LayerId) -> bool {
        self.active.contains(l)
    }

    pub fn block(&self, l: LayerId) -> Option<&[f64]> {
        self.is_present(l).then(|| self.values.block(l))
    }

    /// `(layer, ‖g_l‖₂)` for every present layer.
    pub fn layer_norms(&self) -> Vec<(LayerId, f64)> {
        self.active.iter().map(|l| (l, self.values.layer_l2_norm(l))).collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.masked_l1_norm(&self.active)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lv(blocks: &[&[f64]]) -> LayeredVector {
        LayeredVector::from_blocks(blocks.iter().map(|b| b.to_vec()).collect()).unwrap()
    }

    #[test]
    fn layer_norm_examples() {
        assert_eq!(lv(&[&[3.0, 4.0]]).layer_l2_norm(0), 5.0);
        assert_eq!(lv(&[&[0.0, 0.0, 0.0]]).layer_l2_norm(0), 0.0);
        assert_eq!(lv(&[&[1.0, 1.0, 1.0, 1.0]]).layer_l2_norm(0), 2.0);
    }

    #[test]
    fn l1_examples() {
        assert_eq!(lv(&[&[1.0, -2.0], &[3.0]]).total_l1_norm(), 6.0);
        assert_eq!(LayeredVector::zeros(&[3, 2]).total_l1_norm(), 0.0);
        assert_eq!(lv(&[&[-1.0], &[-1.0], &[-1.0]]).total_l1_norm(), 3.0);
    }

    #[test]
    fn masked_axpy_examples() {
        let x = lv(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let mut y = lv(&[&[1.0, 1.0], &[2.0, 2.0]]);
        y.masked_axpy(2.0, &x, &ActiveSet::from_indices(2, [0])).unwrap();
        assert_eq!(y, lv(&[&[3.0, 1.0], &[2.0, 2.0]]));

        let before = y.clone();
        y.masked_axpy(2.0, &x, &ActiveSet::empty(2)).unwrap();
        assert_eq!(y, before);
        y.masked_axpy(0.0, &x, &ActiveSet::full(2)).unwrap();
        assert_eq!(y, before);
    }

    #[test]
    fn masked_axpy_rejects_shape_mismatch() {
        let mut y = lv(&[&[1.0, 1.0]]);
        let x = lv(&[&[1.0]]);
        assert!(matches!(
            y.masked_axpy(1.0, &x, &ActiveSet::full(1)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn construction_invariants() {
        assert!(LayeredVector::from_blocks(vec![]).is_err());
        assert!(LayeredVector::from_blocks(vec![vec![]]).is_err());
        assert!(LayeredVector::from_blocks(vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn active_set_basics() {
        let s = ActiveSet::from_indices(5, [3, 1]);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.param_count(&[10, 20, 30, 40, 50]), 60);
        assert!(!s.contains(7));
        assert!(ActiveSet::empty(3).is_empty());
        assert!(ActiveSet::full(3).is_full());
    }

    type Blocks = Vec<Vec<f64>>;

    fn blocks_strategy() -> impl Strategy<Value = (Blocks, Blocks, Vec<bool>, f64)> {
        prop::collection::vec(1usize..6, 1..6).prop_flat_map(|sizes| {
            let n = sizes.len();
            let blocks = |sizes: Vec<usize>| {
                sizes
                    .into_iter()
                    .map(|d| prop::collection::vec(-1e3f64..1e3, d))
                    .collect::<Vec<_>>()
            };
            (
                blocks(sizes.clone()),
                blocks(sizes),
                prop::collection::vec(any::<bool>(), n),
                -10.0f64..10.0,
            )
        })
    }

    proptest! {
        #[test]
        fn full_mask_equals_unmasked((yb, xb, _mask, a) in blocks_strategy()) {
            let x = LayeredVector::from_blocks(xb).unwrap();
            let mut y1 = LayeredVector::from_blocks(yb).unwrap();
            let mut y2 = y1.clone();
            y1.masked_axpy(a, &x, &ActiveSet::full(x.num_layers())).unwrap();
            y2.axpy(a, &x).unwrap();
            prop_assert_eq!(y1, y2);
        }

        #[test]
        fn frozen_blocks_bit_identical((yb, xb, mask, a) in blocks_strategy()) {
            let x = LayeredVector::from_blocks(xb).unwrap();
            let y0 = LayeredVector::from_blocks(yb).unwrap();
            let mut y = y0.clone();
            let active = ActiveSet::from_mask(mask);
            y.masked_axpy(a, &x, &active).unwrap();
            for l in 0..y.num_layers() {
                if !active.contains(l) {
                    let same = y.block(l).iter().zip(y0.block(l)).all(|(p, q)| p.to_bits() == q.to_bits());
                    prop_assert!(same);
                }
            }
        }

        #[test]
        fn squared_norm_matches_dot((yb, _xb, _mask, _a) in blocks_strategy()) {
            let y = LayeredVector::from_blocks(yb).unwrap();
            for l in 0..y.num_layers() {
                let n2 = y.layer_l2_norm(l).powi(2);
                let dot = y.layer_dot(l, &y);
                prop_assert!((n2 - dot).abs() <= 1e-12 * dot.max(f64::MIN_POSITIVE));
            }
        }
    }
}
