use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::stream_rng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShardPolicy {
    /// All shards have exactly `B / m` examples.
    Strict,
    /// Sizes differ by at most one; the first `B mod m` shards take the extra
    /// example and shard gradients are weighted by `|S_j| / B`.
    Weighted,
}

/// A minibatch partitioned into `m` disjoint, non-empty shards.
///
/// Shard `j` is `indices[bounds[j]..bounds[j + 1]]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroBatchPlan {
    indices: Vec<usize>,
    bounds: Vec<usize>,
}

impl MicroBatchPlan {
    pub fn from_shards(shards: Vec<Vec<usize>>) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::Partition("a plan needs at least one shard".into()));
        }
        let mut bounds = vec![0];
        let mut indices = Vec::new();
        for (j, s) in shards.into_iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Partition(format!("shard {j} is empty")));
            }
            indices.extend(s);
            bounds.push(indices.len());
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Partition(format!(
                "index {} appears in more than one shard",
                w[0]
            )));
        }
        Ok(MicroBatchPlan { indices, bounds })
    }

    /// The single-shard plan.
    pub fn whole(batch: &[usize]) -> Result<Self> {
        MicroBatchPlan::from_shards(vec![batch.to_vec()])
    }

    pub fn num_shards(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn batch_size(&self) -> usize {
        self.indices.len()
    }

    pub fn shard(&self, j: usize) -> &[usize] {
        &self.indices[self.bounds[j]..self.bounds[j + 1]]
    }

    pub fn shards(&self) -> impl Iterator<Item = &[usize]> {
        (0..self.num_shards()).map(|j| self.shard(j))
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.bounds.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `|S_j| / B` per shard.
    pub fn weights(&self) -> Vec<f64> {
        let b = self.batch_size() as f64;
        self.shard_sizes().into_iter().map(|s| s as f64 / b).collect()
    }

    pub fn is_equal_sized(&self) -> bool {
        let sizes = self.shard_sizes();
        sizes.iter().all(|&s| s == sizes[0])
    }

    /// All indices, shard after shard.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Checks that the shards cover exactly `batch`.
    pub fn check_covers(&self, batch: &[usize]) -> Result<()> {
        let mut a = self.indices.clone();
        let mut b = batch.to_vec();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(Error::Partition("shards do not cover the minibatch exactly".into()));
        }
        Ok(())
    }

    /// Same shards in a different order.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.num_shards() {
            return Err(Error::Partition("order length differs from shard count".into()));
        }
        MicroBatchPlan::from_shards(order.iter().map(|&j| self.shard(j).to_vec()).collect())
    }
}

/// Partitions a minibatch into `m` shards: a seeded permutation cut into
/// contiguous blocks. With `m = 1` the minibatch is kept in its given order.
pub fn make_shards(batch: &[usize], m: usize, policy: ShardPolicy, seed: u64) -> Result<MicroBatchPlan> {
    let b = batch.len();
    if m == 0 || m > b {
        return Err(Error::Partition(format!("cannot split {b} examples into {m} shards")));
    }
    if policy == ShardPolicy::Strict && !b.is_multiple_of(m) {
        return Err(Error::Divisibility { batch: b, shards: m });
    }
    if m == 1 {
        return MicroBatchPlan::whole(batch);
    }
    let mut order = batch.to_vec();
    order.shuffle(&mut stream_rng(seed, 0));
    let (base, extra) = (b / m, b % m);
    let mut shards = Vec::with_capacity(m);
    let mut start = 0;
    for j in 0..m {
        let size = base + usize::from(j < extra);
        shards.push(order[start..start + size].to_vec());
        start += size;
    }
    MicroBatchPlan::from_shards(shards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eight_into_four() {
        let batch: Vec<usize> = (10..18).collect();
        let plan = make_shards(&batch, 4, ShardPolicy::Strict, 1).unwrap();
        assert_eq!(plan.shard_sizes(), vec![2, 2, 2, 2]);
        plan.check_covers(&batch).unwrap();
    }

    #[test]
    fn single_shard_is_minibatch() {
        let batch = vec![5, 3, 9];
        let plan = make_shards(&batch, 1, ShardPolicy::Strict, 7).unwrap();
        assert_eq!(plan.shard(0), &batch[..]);
    }

    #[test]
    fn weighted_uneven() {
        let batch: Vec<usize> = (0..7).collect();
        let plan = make_shards(&batch, 2, ShardPolicy::Weighted, 0).unwrap();
        assert_eq!(plan.shard_sizes(), vec![4, 3]);
        assert_eq!(plan.weights(), vec![4.0 / 7.0, 3.0 / 7.0]);
        assert!(matches!(
            make_shards(&batch, 2, ShardPolicy::Strict, 0),
            Err(Error::Divisibility { batch: 7, shards: 2 })
        ));
    }

    #[test]
    fn overlapping_shards_rejected() {
        assert!(MicroBatchPlan::from_shards(vec![vec![1, 2], vec![2, 3]]).is_err());
        assert!(MicroBatchPlan::from_shards(vec![vec![1], vec![]]).is_err());
    }

    proptest! {
        #[test]
        fn plans_partition_the_minibatch(b in 1usize..64, m_frac in 0.0f64..1.0, seed: u64) {
            let m = 1 + ((b - 1) as f64 * m_frac) as usize;
            let batch: Vec<usize> = (0..b).map(|i| 3 * i + 1).collect();
            let plan = make_shards(&batch, m, ShardPolicy::Weighted, seed).unwrap();
            prop_assert_eq!(plan.num_shards(), m);
            prop_assert!(plan.check_covers(&batch).is_ok());
            let sizes = plan.shard_sizes();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let total: f64 = plan.weights().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
