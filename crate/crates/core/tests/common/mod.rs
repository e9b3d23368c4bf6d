#![allow(dead_code)]

use msam_core::autodiff::{Activation, Head, ModelSpec};
use msam_core::data::{Dataset, Labels};
use msam_core::linalg::Matrix;
use msam_core::stability::HessianEnsemble;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[allow(clippy::unusual_byte_groupings)]
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7e57)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Loss of a dense network evaluated with plain loops: layer-major parameters,
/// each layer a row-major `[fan_in, fan_out]` weight block then the bias.
pub fn oracle_loss(spec: &ModelSpec, params: &[f64], ds: &Dataset, idx: &[usize]) -> f64 {
    let mut total = 0.0;
    for &i in idx {
        let mut h: Vec<f64> = ds.row(i).to_vec();
        let mut off = 0;
        let layers = spec.widths.len() - 1;
        for l in 0..layers {
            let (fi, fo) = (spec.widths[l], spec.widths[l + 1]);
            let w = &params[off..off + fi * fo];
            let b = &params[off + fi * fo..off + fi * fo + fo];
            off += fi * fo + fo;
            let mut z = vec![0.0; fo];
            for o in 0..fo {
                let mut acc = b[o];
                for k in 0..fi {
                    acc += h[k] * w[k * fo + o];
                }
                z[o] = acc;
            }
            h = if l + 1 == layers {
                z
            } else {
                z.into_iter()
                    .map(|x| match spec.activation {
                        Activation::Relu => x.max(0.0),
                        Activation::Tanh => x.tanh(),
                    })
                    .collect()
            };
        }
        total += match (spec.head, ds.labels()) {
            (Head::SoftmaxCrossEntropy, Labels::Classes { labels, .. }) => {
                let mx = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + h.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
                lse - h[labels[i]]
            }
            (Head::MeanSquaredError, Labels::Targets { values, width }) => {
                (0..*width).map(|k| (h[k] - values[i * width + k]).powi(2)).sum()
            }
            _ => panic!("head and labels disagree"),
        };
    }
    spec.loss_scale * total / idx.len() as f64
}

/// Central differences of `f` at `w` with step `h`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, w: &[f64], h: f64) -> Vec<f64> {
    let mut x = w.to_vec();
    (0..w.len())
        .map(|j| {
            x[j] = w[j] + h;
            let up = f(&x);
            x[j] = w[j] - h;
            let down = f(&x);
            x[j] = w[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

/// A small random classification or regression problem with its model and
/// parameters.
pub struct Problem {
    pub spec: ModelSpec,
    pub data: Dataset,
    pub params: Vec<f64>,
}

pub fn random_problem(seed: u64, max_hidden: usize) -> Problem {
    let mut r = rng(seed);
    let p = 1 + (seed as usize % 4);
    let depth = seed as usize % 3;
    let mut widths = vec![p];
    for _ in 0..depth {
        widths.push(1 + r.random_range(0..max_hidden));
    }
    let classification = seed.is_multiple_of(2);
    let out = if classification {
        2 + (seed as usize % 3)
    } else {
        1 + (seed as usize % 2)
    };
    widths.push(out);
    let activation = if seed % 4 < 2 {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    let n = 6 + (seed as usize % 5);
    let features: Vec<f64> = (0..n * p).map(|_| normal(&mut r)).collect();
    let (head, data) = if classification {
        let labels = (0..n).map(|i| i % out).collect();
        (
            Head::SoftmaxCrossEntropy,
            Dataset::from_classes(features, p, labels, out).unwrap(),
        )
    } else {
        let targets = (0..n * out).map(|_| normal(&mut r)).collect();
        (
            Head::MeanSquaredError,
            Dataset::from_targets(features, p, targets, out).unwrap(),
        )
    };
    let spec = ModelSpec::new(widths, activation, head).unwrap();
    let params = (0..spec.num_params()).map(|_| 0.7 * normal(&mut r)).collect();
    Problem { spec, data, params }
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn mean_of(ens: &HessianEnsemble, idx: &[usize]) -> Matrix {
    let d = ens.dim();
    let mut acc = Matrix::zeros(d, d);
    for &i in idx {
        acc += ens.hessian(i);
    }
    acc / idx.len() as f64
}

/// All size-`b` subsets of `0..n`, enumerated by bitmask.
pub fn oracle_subsets(n: usize, b: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|mask| mask.count_ones() as usize == b)
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}

/// All unordered partitions of `items` into `m` blocks of equal size, via
/// restricted-growth labelings.
pub fn oracle_partitions(items: &[usize], m: usize) -> Vec<Vec<Vec<usize>>> {
    let size = items.len() / m;
    let mut out = Vec::new();
    let mut labels = vec![0usize; items.len()];
    fn rec(
        pos: usize,
        used: usize,
        labels: &mut Vec<usize>,
        items: &[usize],
        m: usize,
        size: usize,
        out: &mut Vec<Vec<Vec<usize>>>,
    ) {
        if pos == items.len() {
            let blocks: Vec<Vec<usize>> = (0..m)
                .map(|b| (0..items.len()).filter(|&i| labels[i] == b).map(|i| items[i]).collect())
                .collect();
            if blocks.iter().all(|b| b.len() == size) {
                out.push(blocks);
            }
            return;
        }
        for l in 0..(used + 1).min(m) {
            labels[pos] = l;
            rec(pos + 1, used.max(l + 1), labels, items, m, size, out);
        }
    }
    rec(0, 0, &mut labels, items, m, size, &mut out);
    out
}

/// Uniform expectation of `f` over every (subset, equal partition) draw.
pub fn oracle_expect(
    ens: &HessianEnsemble,
    b: usize,
    m: usize,
    f: impl Fn(&[usize], &[Vec<usize>]) -> Matrix,
) -> Matrix {
    let d = ens.dim();
    let mut acc = Matrix::zeros(d, d);
    let mut count = 0.0;
    for s in oracle_subsets(ens.n(), b) {
        for p in oracle_partitions(&s, m) {
            acc += f(&s, &p);
            count += 1.0;
        }
    }
    acc / count
}

/// `J_{3,S}` from its definition.
pub fn oracle_j3(ens: &HessianEnsemble, s: &[usize], p: &[Vec<usize>], rho: f64) -> Matrix {
    let hs = mean_of(ens, s);
    let mut corr = Matrix::zeros(ens.dim(), ens.dim());
    for shard in p {
        let diff = mean_of(ens, shard) - &hs;
        corr += &diff * &diff;
    }
    &hs + &hs * &hs * rho + corr * (rho / p.len() as f64)
}
