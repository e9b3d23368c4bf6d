use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::stream_rng;
use crate::error::{Error, Result};
use crate::linalg::{lambda_min, symmetry_defect, Matrix};

/// Tolerance for the symmetry and PSD checks on ensemble members.
pub const ENSEMBLE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "rank")]
pub enum EnsembleKind {
    /// `G^T G / d` with `G` a `d x d` standard normal matrix.
    FullRank,
    /// `G^T G / d` with `G` an `r x d` standard normal matrix.
    LowRank(usize),
    /// Diagonal with independent `Exp(1)` entries; all members commute.
    CommutingDiagonal,
}

/// Per-example Hessians `H_i` at the minimum, taken to be the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianEnsemble {
    hessians: Vec<Matrix>,
    mean: Matrix,
}

impl HessianEnsemble {
    /// Validates squareness, matching dimensions, symmetry and PSD-ness.
    pub fn new(hessians: Vec<Matrix>) -> Result<Self> {
        let Some(first) = hessians.first() else {
            return Err(Error::invalid("an ensemble needs at least one Hessian"));
        };
        let d = first.nrows();
        for (i, h) in hessians.iter().enumerate() {
            if h.nrows() != d || h.ncols() != d {
                return Err(Error::invalid(format!("H_{i} is not {d} x {d}")));
            }
            if symmetry_defect(h) > ENSEMBLE_TOL {
                return Err(Error::invalid(format!("H_{i} is not symmetric")));
            }
            if lambda_min(h) < -ENSEMBLE_TOL {
                return Err(Error::invalid(format!("H_{i} is not positive semi-definite")));
            }
        }
        let mean = mean_of(hessians.iter());
        Ok(HessianEnsemble { hessians, mean })
    }

    pub fn n(&self) -> usize {
        self.hessians.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.nrows()
    }

    pub fn hessian(&self, i: usize) -> &Matrix {
        &self.hessians[i]
    }

    pub fn hessians(&self) -> &[Matrix] {
        &self.hessians
    }

    /// `H̄`, the mean of all members.
    pub fn mean(&self) -> &Matrix {
        &self.mean
    }

    /// `H_S`, the mean over `subset` in the order given.
    pub fn subset_mean(&self, subset: &[usize]) -> Matrix {
        mean_of(subset.iter().map(|&i| &self.hessians[i]))
    }

    /// Every member multiplied by `c >= 0`.
    pub fn scaled(&self, c: f64) -> HessianEnsemble {
        HessianEnsemble {
            hessians: self.hessians.iter().map(|h| h * c).collect(),
            mean: &self.mean * c,
        }
    }
}

fn mean_of<'a>(items: impl ExactSizeIterator<Item = &'a Matrix>) -> Matrix {
    let count = items.len() as f64;
    let mut iter = items;
    let mut acc = iter.next().expect("non-empty").clone();
    for m in iter {
        acc += m;
    }
    acc / count
}

fn symmetrized(m: Matrix) -> Matrix {
    (&m + m.transpose()) * 0.5
}

pub fn sample_ensemble(n: usize, d: usize, seed: u64, kind: EnsembleKind) -> Result<HessianEnsemble> {
    if n == 0 || d == 0 {
        return Err(Error::invalid("ensemble needs n >= 1 and d >= 1"));
    }
    let mut rng = stream_rng(seed, 0);
    let gram = |rows: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let g = Matrix::from_fn(rows, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        symmetrized(g.transpose() * &g / d as f64)
    };
    let hessians = match kind {
        EnsembleKind::FullRank => (0..n).map(|_| gram(d, &mut rng)).collect(),
        EnsembleKind::LowRank(r) => {
            if r == 0 || r > d {
                return Err(Error::invalid(format!("rank {r} must lie in 1..={d}")));
            }
            (0..n).map(|_| gram(r, &mut rng)).collect()
        }
        EnsembleKind::CommutingDiagonal => (0..n)
            .map(|_| {
                let diag: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                Matrix::from_diagonal(&nalgebra::DVector::from_vec(diag))
            })
            .collect(),
    };
    HessianEnsemble::new(hessians)
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i + 1) as u128;
    }
    acc
}

/// Number of unordered partitions of `b` items into `m` blocks of `b / m`.
pub fn equal_partition_count(b: usize, m: usize) -> u128 {
    if m == 0 || !b.is_multiple_of(m) {
        return 0;
    }
    let s = b / m;
    // Fix the smallest remaining item in each block and choose its companions.
    let mut acc: u128 = 1;
    let mut remaining = b;
    for _ in 0..m {
        acc = acc.saturating_mul(binomial(remaining - 1, s - 1));
        remaining -= s;
    }
    acc
}

/// All size-`k` subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] != i + n - k) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// All unordered partitions of `items` into `m` equal blocks. Each block lists
/// items in their original order; blocks are ordered by first item.
pub fn equal_partitions(items: &[usize], m: usize) -> Vec<Vec<Vec<usize>>> {
    if m == 0 || !items.len().is_multiple_of(m) {
        return Vec::new();
    }
    let size = items.len() / m;
    let mut out = Vec::new();
    partition_rec(items, size, &mut Vec::new(), &mut out);
    out
}

fn partition_rec(rest: &[usize], size: usize, acc: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
    if rest.is_empty() {
        out.push(acc.clone());
        return;
    }
    let head = rest[0];
    let tail = &rest[1..];
    for pick in combinations(tail.len(), size - 1) {
        let mut block = vec![head];
        block.extend(pick.iter().map(|&p| tail[p]));
        let remaining: Vec<usize> = tail
            .iter()
            .enumerate()
            .filter(|(p, _)| !pick.contains(p))
            .map(|(_, &x)| x)
            .collect();
        acc.push(block);
        partition_rec(&remaining, size, acc, out);
        acc.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_enumeration() {
        assert_eq!(binomial(8, 4), 70);
        assert_eq!(combinations(8, 4).len(), 70);
        assert_eq!(equal_partition_count(4, 2), 3);
        assert_eq!(equal_partitions(&[0, 1, 2, 3], 2).len(), 3);
        assert_eq!(equal_partition_count(8, 4), 105);
        assert_eq!(equal_partitions(&(0..8).collect::<Vec<_>>(), 4).len(), 105);
        assert_eq!(equal_partition_count(6, 3), 15);
        assert_eq!(equal_partitions(&[1, 3, 5, 7, 9, 11], 1).len(), 1);
    }

    #[test]
    fn sampled_members_are_psd_and_deterministic() {
        for kind in [
            EnsembleKind::FullRank,
            EnsembleKind::LowRank(2),
            EnsembleKind::CommutingDiagonal,
        ] {
            let a = sample_ensemble(5, 4, 11, kind).unwrap();
            let b = sample_ensemble(5, 4, 11, kind).unwrap();
            assert_eq!(a, b);
            for h in a.hessians() {
                assert!(lambda_min(h) >= -ENSEMBLE_TOL);
            }
        }
    }

    #[test]
    fn single_member_mean() {
        let e = sample_ensemble(1, 3, 2, EnsembleKind::CommutingDiagonal).unwrap();
        assert_eq!(e.mean(), e.hessian(0));
    }

    #[test]
    fn rejects_indefinite() {
        let h = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(HessianEnsemble::new(vec![h]).is_err());
    }
}
