//! Dense parameter vectors partitioned into family blocks, soft-thresholding
//! and a scratch accumulator for sparse gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureBank, SparseVec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    values: Vec<f64>,
}

impl WeightVector {
    pub fn zeros(dimension: usize) -> Self {
        Self { values: vec![0.0; dimension] }
    }

    pub fn from_dense(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn from_sparse(dimension: usize, v: &SparseVec) -> Result<Self> {
        let mut values = vec![0.0; dimension];
        for (c, x) in v.iter() {
            let slot = values.get_mut(c as usize).ok_or_else(|| Error::domain(format!("column {c} outside dimension {dimension}")))?;
            *slot = x;
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }

    pub fn l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// `||w_k||_1` for each family `k`.
    pub fn block_l1(&self, bank: &FeatureBank) -> Vec<f64> {
        let mut out = vec![0.0; bank.num_families()];
        for (v, &k) in self.values.iter().zip(bank.families()) {
            out[k as usize] += v.abs();
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    /// Nonzero weights per family.
    pub fn nnz_by_family(&self, bank: &FeatureBank) -> Vec<usize> {
        let mut out = vec![0; bank.num_families()];
        for (v, &k) in self.values.iter().zip(bank.families()) {
            if *v != 0.0 {
                out[k as usize] += 1;
            }
        }
        out
    }

    pub fn to_sparse(&self) -> SparseVec {
        SparseVec::from_dense(&self.values)
    }
}

/// `sign(v) max(0, |v| - t)`.
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Per-column L1 coefficient `λ r_k + β` for the family `k` of each column.
pub fn column_rates(bank: &FeatureBank, penalties: &[f64], lambda: f64, beta: f64) -> Vec<f64> {
    bank.families().iter().map(|&k| lambda * penalties[k as usize] + beta).collect()
}

/// `Σ_k (λ r_k + β) ||w_k||_1`.
pub fn vrm_penalty(w: &WeightVector, bank: &FeatureBank, penalties: &[f64], lambda: f64, beta: f64) -> f64 {
    w.block_l1(bank).iter().zip(penalties).map(|(norm, r)| (lambda * r + beta) * norm).sum()
}

/// Dense scratch with a list of touched columns.
#[derive(Debug, Clone)]
pub struct GradBuf {
    dense: Vec<f64>,
    seen: Vec<bool>,
    touched: Vec<u32>,
}

impl GradBuf {
    pub fn new(dimension: usize) -> Self {
        Self { dense: vec![0.0; dimension], seen: vec![false; dimension], touched: Vec::new() }
    }

    #[inline]
    pub fn add(&mut self, column: u32, value: f64) {
        let j = column as usize;
        if !self.seen[j] {
            self.seen[j] = true;
            self.touched.push(column);
        }
        self.dense[j] += value;
    }

    pub fn add_sparse(&mut self, v: &SparseVec, scale: f64) {
        for (c, x) in v.iter() {
            self.add(c, scale * x);
        }
    }

    /// Empties the buffer into a sparse vector, keeping exact zeros out.
    pub fn take(&mut self) -> SparseVec {
        self.touched.sort_unstable();
        let mut pairs = Vec::with_capacity(self.touched.len());
        for &c in &self.touched {
            let j = c as usize;
            pairs.push((c, self.dense[j]));
            self.dense[j] = 0.0;
            self.seen[j] = false;
        }
        self.touched.clear();
        SparseVec::from_pairs(pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureTemplate;
    use crate::types::{LabeledSequence, TokenSequence};
    use proptest::prelude::*;

    fn bank() -> FeatureBank {
        let mut bank = FeatureBank::new(vec![
            FeatureTemplate::new(1, 0, 0).unwrap(),
            FeatureTemplate::new(0, 1, 0).unwrap(),
            FeatureTemplate::new(1, 1, 0).unwrap(),
        ])
        .unwrap();
        let x = TokenSequence::from_strs(&["a", "b", "a", "c"]).unwrap();
        bank.grow_from(&[LabeledSequence::new(x, vec![0, 1, 1, 0], 2).unwrap()]).unwrap();
        bank.freeze();
        bank
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(1.5, 0.5), 1.0);
        assert_eq!(soft_threshold(-1.5, 0.5), -1.0);
        assert_eq!(soft_threshold(0.3, 0.5), 0.0);
        assert_eq!(soft_threshold(0.3, 0.0), 0.3);
    }

    #[test]
    fn grad_buf_accumulates_and_resets() {
        let mut g = GradBuf::new(5);
        g.add(3, 1.0);
        g.add(1, 2.0);
        g.add(3, 0.5);
        g.add(4, 1.0);
        g.add(4, -1.0);
        let v = g.take();
        assert_eq!(v.entries(), &[(1, 2.0), (3, 1.5)]);
        assert!(g.take().is_empty());
    }

    proptest! {
        #[test]
        fn soft_threshold_never_grows(v in -10.0f64..10.0, t in 0.0f64..5.0) {
            let s = soft_threshold(v, t);
            prop_assert!(s.abs() <= v.abs());
            prop_assert!(s == 0.0 || s.signum() == v.signum());
        }
    }

    #[test]
    fn block_norms_partition_l1_random() {
        let b = bank();
        let n = b.dimension();
        for seed in 0..20u32 {
            let w = WeightVector::from_dense((0..n).map(|j| ((j as f64 + 1.3) * (seed as f64 + 0.1)).sin()).collect());
            let blocks: f64 = w.block_l1(&b).iter().sum();
            assert!((blocks - w.l1()).abs() < 1e-12);
            let pen = vrm_penalty(&w, &b, &[0.1, 0.2, 0.3], 1.0, 0.5);
            let direct: f64 = w.as_slice().iter().zip(column_rates(&b, &[0.1, 0.2, 0.3], 1.0, 0.5)).map(|(v, r)| v.abs() * r).sum();
            assert!((pen - direct).abs() < 1e-12);
        }
    }
}
