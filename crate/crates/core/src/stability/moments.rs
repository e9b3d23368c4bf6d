use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::ensemble::{binomial, combinations, equal_partition_count, equal_partitions, HessianEnsemble};
use crate::data::stream_rng;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optim::Method;

/// Largest number of (subset, partition) draws exhaustive mode will visit.
pub const ENUMERATION_BUDGET: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum SamplingMode {
    /// Every size-`B` subset, and for mSAM every unordered equal partition.
    Exhaustive,
    /// `trials` draws; trial `t` uses its own stream of `seed`.
    MonteCarlo { trials: u64, seed: u64 },
}

/// Minibatch law: uniform over size-`B` subsets without replacement, each split
/// uniformly into `m` equal shards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingScheme {
    pub batch_size: usize,
    pub shards: usize,
    pub mode: SamplingMode,
}

impl SamplingScheme {
    pub fn exhaustive(batch_size: usize, shards: usize) -> Self {
        SamplingScheme {
            batch_size,
            shards,
            mode: SamplingMode::Exhaustive,
        }
    }

    pub fn monte_carlo(batch_size: usize, shards: usize, trials: u64, seed: u64) -> Self {
        SamplingScheme {
            batch_size,
            shards,
            mode: SamplingMode::MonteCarlo { trials, seed },
        }
    }

    /// Exhaustive when `n <= 10` and `B <= 6`, Monte-Carlo otherwise.
    pub fn auto(n: usize, batch_size: usize, shards: usize, trials: u64, seed: u64) -> Self {
        if n <= 10 && batch_size <= 6 {
            Self::exhaustive(batch_size, shards)
        } else {
            Self::monte_carlo(batch_size, shards, trials, seed)
        }
    }

    /// Number of distinct (subset, partition) draws for an `n`-example ensemble.
    pub fn draw_count(&self, n: usize) -> u128 {
        binomial(n, self.batch_size).saturating_mul(equal_partition_count(self.batch_size, self.shards))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let (b, m) = (self.batch_size, self.shards);
        if !(1 <= m && m <= b && b <= n) {
            return Err(Error::invalid(format!(
                "need 1 <= m <= B <= n, got m={m}, B={b}, n={n}"
            )));
        }
        if b % m != 0 {
            return Err(Error::Divisibility { batch: b, shards: m });
        }
        match self.mode {
            SamplingMode::Exhaustive => {
                let required = self.draw_count(n);
                if required > ENUMERATION_BUDGET {
                    return Err(Error::EnumerationBudget {
                        required,
                        budget: ENUMERATION_BUDGET,
                    });
                }
            }
            SamplingMode::MonteCarlo { trials, .. } => {
                if trials < 2 {
                    return Err(Error::invalid("monte-carlo mode needs at least 2 trials"));
                }
            }
        }
        Ok(())
    }
}

/// Calls `visit(subset, partition)` for each draw of the scheme. Subsets and
/// shards list indices in ascending order. Exhaustive draws are equally likely.
pub(crate) fn for_each_draw<F>(n: usize, scheme: &SamplingScheme, mut visit: F) -> Result<u64>
where
    F: FnMut(&[usize], &[Vec<usize>]) -> Result<()>,
{
    scheme.validate(n)?;
    let (b, m) = (scheme.batch_size, scheme.shards);
    match scheme.mode {
        SamplingMode::Exhaustive => {
            let mut count = 0;
            for subset in combinations(n, b) {
                for partition in equal_partitions(&subset, m) {
                    visit(&subset, &partition)?;
                    count += 1;
                }
            }
            Ok(count)
        }
        SamplingMode::MonteCarlo { trials, seed } => {
            for t in 0..trials {
                let (subset, partition) = random_draw(n, b, m, seed, t);
                visit(&subset, &partition)?;
            }
            Ok(trials)
        }
    }
}

/// One draw: a uniform permutation prefix of length `B` cut into `m`
/// contiguous blocks.
pub(crate) fn random_draw(n: usize, b: usize, m: usize, seed: u64, trial: u64) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut rng = stream_rng(seed, trial);
    let picked = index::sample(&mut rng, n, b).into_vec();
    let size = b / m;
    let partition: Vec<Vec<usize>> = picked
        .chunks(size)
        .map(|c| {
            let mut c = c.to_vec();
            c.sort_unstable();
            c
        })
        .collect();
    let mut subset = picked;
    subset.sort_unstable();
    (subset, partition)
}

fn check_subset(n: usize, subset: &[usize]) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::Partition("minibatch is empty".into()));
    }
    let mut seen = vec![false; n];
    for &i in subset {
        if i >= n {
            return Err(Error::Partition(format!("index {i} is outside 0..{n}")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Partition(format!("index {i} appears twice in the minibatch")));
        }
    }
    Ok(())
}

fn check_partition(subset: &[usize], partition: &[Vec<usize>]) -> Result<()> {
    let mut shard_items: Vec<usize> = partition.iter().flatten().copied().collect();
    if partition.iter().any(Vec::is_empty) {
        return Err(Error::Partition("partition contains an empty shard".into()));
    }
    shard_items.sort_unstable();
    let mut s = subset.to_vec();
    s.sort_unstable();
    if shard_items != s {
        return Err(Error::Partition("shards do not cover the minibatch disjointly".into()));
    }
    Ok(())
}

/// `(rho / m) Σ_j (H_{S_j} − H_S)²`, the mSAM correction for one draw.
fn msam_correction(ens: &HessianEnsemble, hs: &Matrix, partition: &[Vec<usize>], rho: f64) -> Matrix {
    let d = ens.dim();
    let mut acc = Matrix::zeros(d, d);
    for shard in partition {
        let diff = ens.subset_mean(shard) - hs;
        acc += &diff * &diff;
    }
    acc * (rho / partition.len() as f64)
}

/// Per-draw matrices `J_{1,S}`, `J_{2,S}`, `J_{3,S}` and the mSAM correction.
fn draw_matrices(ens: &HessianEnsemble, subset: &[usize], partition: &[Vec<usize>], rho: f64) -> ([Matrix; 3], Matrix) {
    let hs = ens.subset_mean(subset);
    let j2 = &hs + (&hs * &hs) * rho;
    let corr = msam_correction(ens, &hs, partition, rho);
    let j3 = &j2 + &corr;
    ([hs, j2, j3], corr)
}

/// `J_{k,S}` for one minibatch: `H_S`, `H_S + rho H_S²`, or
/// `H_S + rho H_S² + (rho/m) Σ_j (H_{S_j} − H_S)²`. The partition is only
/// read for mSAM.
pub fn j_minibatch(
    ens: &HessianEnsemble,
    subset: &[usize],
    partition: &[Vec<usize>],
    method: Method,
    rho: f64,
) -> Result<Matrix> {
    check_subset(ens.n(), subset)?;
    let hs = ens.subset_mean(subset);
    match method {
        Method::Sgd => Ok(hs),
        Method::Sam => Ok(&hs + (&hs * &hs) * rho),
        Method::Msam => {
            check_partition(subset, partition)?;
            let corr = msam_correction(ens, &hs, partition, rho);
            Ok(&hs + (&hs * &hs) * rho + corr)
        }
    }
}

/// Largest entrywise Monte-Carlo standard error of each estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentStdError {
    pub jstar: [f64; 3],
    pub sigma: [f64; 3],
    pub omega: f64,
}

/// First and second moments of `J_S` for the three methods, indexed by
/// [`Method::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub rho: f64,
    pub n: usize,
    pub batch_size: usize,
    pub shards: usize,
    pub draws: u64,
    pub mean_hessian: Matrix,
    /// `J* = E[J_S]`.
    pub jstar: [Matrix; 3],
    /// `Σ = E[(J_S − J*)²]`, the centered-square form.
    pub sigma: [Matrix; 3],
    /// `E[J_S²] − (J*)²`, the variance-identity form.
    pub sigma_from_variance: [Matrix; 3],
    /// `E[J_S²]`.
    pub second_moment: [Matrix; 3],
    /// `Ω = E[(rho/m) Σ_j (H_{S_j} − H_S)²]`.
    pub omega: Matrix,
    /// Present in Monte-Carlo mode only.
    pub std_error: Option<MomentStdError>,
}

impl MomentSet {
    pub fn jstar(&self, method: Method) -> &Matrix {
        &self.jstar[method.index()]
    }

    pub fn sigma(&self, method: Method) -> &Matrix {
        &self.sigma[method.index()]
    }
}

struct Accum {
    sum: Matrix,
    sum_entry_sq: Matrix,
}

impl Accum {
    fn new(d: usize) -> Self {
        Accum {
            sum: Matrix::zeros(d, d),
            sum_entry_sq: Matrix::zeros(d, d),
        }
    }

    fn push(&mut self, x: &Matrix) {
        self.sum += x;
        self.sum_entry_sq += x.component_mul(x);
    }

    fn mean(&self, count: f64) -> Matrix {
        &self.sum / count
    }

    /// Max over entries of `sqrt(sample variance / count)`.
    fn std_error(&self, count: f64) -> f64 {
        let mean = self.mean(count);
        let mut worst: f64 = 0.0;
        for (s2, mu) in self.sum_entry_sq.iter().zip(mean.iter()) {
            let var = ((s2 / count - mu * mu) * count / (count - 1.0)).max(0.0);
            worst = worst.max((var / count).sqrt());
        }
        worst
    }
}

/// Exact (exhaustive) or sampled (Monte-Carlo) moments. Runs two passes over
/// the same draws: the first for `J*`, `E[J²]` and `Ω`, the second for the
/// centered squares.
pub fn compute_moments(ens: &HessianEnsemble, scheme: &SamplingScheme, rho: f64) -> Result<MomentSet> {
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::invalid("rho must be finite and non-negative"));
    }
    let d = ens.dim();
    let mut first: [Accum; 3] = std::array::from_fn(|_| Accum::new(d));
    let mut squares: [Matrix; 3] = std::array::from_fn(|_| Matrix::zeros(d, d));
    let mut omega = Accum::new(d);

    let draws = for_each_draw(ens.n(), scheme, |subset, partition| {
        let (js, corr) = draw_matrices(ens, subset, partition, rho);
        for (k, j) in js.iter().enumerate() {
            first[k].push(j);
            squares[k] += j * j;
        }
        omega.push(&corr);
        Ok(())
    })?;
    let count = draws as f64;
    let jstar: [Matrix; 3] = std::array::from_fn(|k| first[k].mean(count));
    let second_moment: [Matrix; 3] = std::array::from_fn(|k| &squares[k] / count);
    let sigma_from_variance: [Matrix; 3] = std::array::from_fn(|k| &second_moment[k] - &jstar[k] * &jstar[k]);

    let mut centered: [Accum; 3] = std::array::from_fn(|_| Accum::new(d));
    for_each_draw(ens.n(), scheme, |subset, partition| {
        let (js, _) = draw_matrices(ens, subset, partition, rho);
        for (k, j) in js.iter().enumerate() {
            let c = j - &jstar[k];
            centered[k].push(&(&c * &c));
        }
        Ok(())
    })?;
    let sigma: [Matrix; 3] = std::array::from_fn(|k| centered[k].mean(count));

    let std_error = matches!(scheme.mode, SamplingMode::MonteCarlo { .. }).then(|| MomentStdError {
        jstar: std::array::from_fn(|k| first[k].std_error(count)),
        sigma: std::array::from_fn(|k| centered[k].std_error(count)),
        omega: omega.std_error(count),
    });

    Ok(MomentSet {
        rho,
        n: ens.n(),
        batch_size: scheme.batch_size,
        shards: scheme.shards,
        draws,
        mean_hessian: ens.mean().clone(),
        jstar,
        sigma,
        sigma_from_variance,
        second_moment,
        omega: omega.mean(count),
        std_error,
    })
}

/// All `J_S` matrices of one method under an exhaustive scheme, in draw order.
pub fn minibatch_matrices(
    ens: &HessianEnsemble,
    scheme: &SamplingScheme,
    method: Method,
    rho: f64,
) -> Result<Vec<Matrix>> {
    let mut out = Vec::new();
    for_each_draw(ens.n(), scheme, |subset, partition| {
        out.push(j_minibatch(ens, subset, partition, method, rho)?);
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_ensemble(values: &[f64]) -> HessianEnsemble {
        HessianEnsemble::new(values.iter().map(|&v| Matrix::from_element(1, 1, v)).collect()).unwrap()
    }

    #[test]
    fn two_point_scalar_minibatch() {
        let e = scalar_ensemble(&[2.0, 4.0]);
        let p = vec![vec![0], vec![1]];
        let j2 = j_minibatch(&e, &[0, 1], &p, Method::Sam, 0.1).unwrap()[(0, 0)];
        let j3 = j_minibatch(&e, &[0, 1], &p, Method::Msam, 0.1).unwrap()[(0, 0)];
        assert!((j2 - 3.9).abs() < 1e-12);
        assert!((j3 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn bad_partition_is_rejected() {
        let e = scalar_ensemble(&[1.0, 2.0, 3.0]);
        let overlap = vec![vec![0, 1], vec![1]];
        assert!(matches!(
            j_minibatch(&e, &[0, 1], &overlap, Method::Msam, 0.1),
            Err(Error::Partition(_))
        ));
        assert!(j_minibatch(&e, &[0, 1], &overlap, Method::Sam, 0.1).is_ok());
        assert!(j_minibatch(&e, &[0, 5], &[], Method::Sgd, 0.1).is_err());
    }

    #[test]
    fn full_batch_has_zero_noise() {
        let e = scalar_ensemble(&[1.0, 2.0, 6.0]);
        let m = compute_moments(&e, &SamplingScheme::exhaustive(3, 1), 0.2).unwrap();
        assert_eq!(m.draws, 1);
        assert!(m.sigma[0][(0, 0)].abs() < 1e-15);
        assert!((m.jstar[0][(0, 0)] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn budget_refusal() {
        let scheme = SamplingScheme::exhaustive(12, 2);
        assert!(matches!(scheme.validate(40), Err(Error::EnumerationBudget { .. })));
        assert!(SamplingScheme::monte_carlo(12, 2, 100, 0).validate(40).is_ok());
        assert!(SamplingScheme::exhaustive(5, 2).validate(8).is_err());
        assert!(SamplingScheme::exhaustive(5, 1).validate(4).is_err());
    }

    #[test]
    fn monte_carlo_draws_are_partitions() {
        for t in 0..20 {
            let (s, p) = random_draw(10, 6, 3, 4, t);
            assert_eq!(s.len(), 6);
            check_subset(10, &s).unwrap();
            check_partition(&s, &p).unwrap();
            assert!(p.iter().all(|b| b.len() == 2));
        }
    }
}
