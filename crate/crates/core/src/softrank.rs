//! Differentiable ranking by projection onto the permutahedron.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftRankConfig {
    /// ε; smaller values approach hard ranks.
    pub regularization_strength: f64,
}

impl Default for SoftRankConfig {
    fn default() -> Self {
        Self {
            regularization_strength: 1.0,
        }
    }
}

impl SoftRankConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.regularization_strength > 0.0 && self.regularization_strength.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "soft rank regularization must be positive, got {}",
                self.regularization_strength
            )));
        }
        Ok(())
    }
}

/// Non-increasing isotonic regression of `y` by pool-adjacent-violators.
/// Returns the fitted values and the `[start, end)` ranges of pooled blocks.
pub fn isotonic_decreasing(y: &[f64]) -> (Vec<f64>, Vec<(usize, usize)>) {
    // (start, len, sum)
    let mut blocks: Vec<(usize, usize, f64)> = Vec::with_capacity(y.len());
    for (i, &v) in y.iter().enumerate() {
        blocks.push((i, 1, v));
        while blocks.len() > 1 {
            let (_, ln, sn) = blocks[blocks.len() - 1];
            let (_, lp, sp) = blocks[blocks.len() - 2];
            if sn / ln as f64 > sp / lp as f64 {
                blocks.pop();
                let last = blocks.last_mut().expect("len > 1");
                last.1 += ln;
                last.2 += sn;
            } else {
                break;
            }
        }
    }
    let mut fit = Vec::with_capacity(y.len());
    let mut ranges = Vec::with_capacity(blocks.len());
    for (start, len, sum) in blocks {
        let mean = sum / len as f64;
        fit.extend(std::iter::repeat_n(mean, len));
        ranges.push((start, start + len));
    }
    (fit, ranges)
}

/// Forward pass of the soft rank, retaining what the Jacobian needs.
#[derive(Debug, Clone)]
pub struct SoftRank {
    pub ranks: Vec<f64>,
    /// Indices of the input in descending order of value.
    order: Vec<usize>,
    blocks: Vec<(usize, usize)>,
    /// Sorted `z − w`, the isotonic regression target.
    target: Vec<f64>,
    inv_eps: f64,
}

impl SoftRank {
    /// Ascending soft rank of `v`: largest entry tends to `n`, smallest to 1.
    pub fn new(v: &[f64], cfg: &SoftRankConfig) -> Result<Self> {
        cfg.validate()?;
        if v.is_empty() {
            return Err(Error::DegenerateInput("soft rank of an empty list".into()));
        }
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::DegenerateInput(format!("non-finite value at {i}")));
        }
        let n = v.len();
        let inv_eps = 1.0 / cfg.regularization_strength;
        let z: Vec<f64> = v.iter().map(|x| x * inv_eps).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
        let target: Vec<f64> = order
            .iter()
            .enumerate()
            .map(|(j, &i)| z[i] - (n - j) as f64)
            .collect();
        let (fit, blocks) = isotonic_decreasing(&target);
        let mut ranks = vec![0.0; n];
        for (j, &i) in order.iter().enumerate() {
            ranks[i] = z[i] - fit[j];
        }
        Ok(Self {
            ranks,
            order,
            blocks,
            target,
            inv_eps,
        })
    }

    /// `(I − B) / ε` applied in sorted coordinates, where `B` averages
    /// within each pooled block. The Jacobian is symmetric.
    fn apply_jacobian(&self, t: &[f64]) -> Vec<f64> {
        assert_eq!(t.len(), self.ranks.len(), "tangent length mismatch");
        let mut out = vec![0.0; t.len()];
        for &(s, e) in &self.blocks {
            let idx = &self.order[s..e];
            let mean = idx.iter().map(|&i| t[i]).sum::<f64>() / (e - s) as f64;
            for &i in idx {
                out[i] = (t[i] - mean) * self.inv_eps;
            }
        }
        out
    }

    /// Jacobian-vector product.
    pub fn jvp(&self, tangent: &[f64]) -> Vec<f64> {
        self.apply_jacobian(tangent)
    }

    /// Vector-Jacobian product.
    pub fn vjp(&self, cotangent: &[f64]) -> Vec<f64> {
        self.apply_jacobian(cotangent)
    }

    /// Whether `v` lies within `margin` of a point where the pooling pattern
    /// changes (adjacent blocks about to merge or a block about to split),
    /// where the Jacobian jumps.
    pub fn near_block_boundary(&self, margin: f64) -> bool {
        let mean = |s: usize, e: usize| self.target[s..e].iter().sum::<f64>() / (e - s) as f64;
        let merging = self
            .blocks
            .windows(2)
            .any(|w| (mean(w[0].0, w[0].1) - mean(w[1].0, w[1].1)).abs() < margin);
        let splitting = self.blocks.iter().any(|&(s, e)| {
            let m = mean(s, e);
            (s + 1..e).any(|k| (mean(s, k) - m).abs() < margin)
        });
        merging || splitting
    }
}

pub fn soft_rank(v: &[f64], cfg: &SoftRankConfig) -> Result<Vec<f64>> {
    SoftRank::new(v, cfg).map(|s| s.ranks)
}
