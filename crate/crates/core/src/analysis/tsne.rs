//! Exact t-SNE.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const AFFINITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Optional PCA pre-reduction to this many dimensions.
    pub pca_dims: Option<usize>,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            pca_dims: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Affinities {
    pub n: usize,
    /// Symmetric joint affinities, row-major `n × n`, zero diagonal.
    pub p: Vec<f64>,
    /// Perplexity reached by each conditional distribution.
    pub perplexities: Vec<f64>,
    /// Rows whose perplexity target could not be met and were floored.
    pub floored_rows: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection2D {
    pub coords: Vec<[f64; 2]>,
    /// KL(P‖Q) after each iteration, computed with unexaggerated P.
    pub kl_trace: Vec<f64>,
    pub floored_rows: Vec<usize>,
}

fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Row `i` of the conditional distribution at precision `beta`; returns the
/// Shannon entropy in nats.
fn conditional(dist: &[f64], i: usize, beta: f64, row: &mut [f64]) -> f64 {
    let min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (&d, r)) in dist.iter().zip(row.iter_mut()).enumerate() {
        *r = if j == i { 0.0 } else { (-beta * (d - min)).exp() };
        sum += *r;
    }
    let mut h = 0.0;
    for r in row.iter_mut() {
        *r /= sum;
        if *r > 0.0 {
            h -= *r * r.ln();
        }
    }
    h
}

/// Binary-searches each point's Gaussian precision to the target perplexity
/// and symmetrizes `p_ij = (p_j|i + p_i|j) / 2n`.
pub fn affinities(points: &[Vec<f64>], perplexity: f64) -> Result<Affinities> {
    let n = points.len();
    if n < 2 || !(perplexity > 1.0) || (n as f64) < 3.0 * perplexity {
        return Err(Error::Contract(format!(
            "t-SNE needs n ≥ 3·perplexity (n = {n}, perplexity = {perplexity})"
        )));
    }
    let dist = squared_distances(points);
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    let mut perplexities = Vec::with_capacity(n);
    let mut floored_rows = Vec::new();
    for i in 0..n {
        let d = &dist[i * n..(i + 1) * n];
        let row = &mut cond[i * n..(i + 1) * n];
        let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
        let mut h = conditional(d, i, beta, row);
        for _ in 0..200 {
            if (h - target).abs() < 1e-7 {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            h = conditional(d, i, beta, row);
        }
        if (h - target).abs() > 1e-4 {
            floored_rows.push(i);
            let mut sum = 0.0;
            for (j, r) in row.iter_mut().enumerate() {
                if j != i {
                    *r = r.max(AFFINITY_FLOOR);
                }
                sum += *r;
            }
            row.iter_mut().for_each(|r| *r /= sum);
        }
        perplexities.push(h.exp());
    }
    if !floored_rows.is_empty() {
        log::warn!(
            "{} of {n} points could not reach perplexity {perplexity} (duplicate-heavy neighborhoods); affinities floored at {AFFINITY_FLOOR}",
            floored_rows.len()
        );
    }
    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / denom;
        }
    }
    Ok(Affinities {
        n,
        p,
        perplexities,
        floored_rows,
    })
}

/// Projects onto the leading principal components.
pub fn pca(points: &[Vec<f64>], dims: usize) -> Result<Vec<Vec<f64>>> {
    let n = points.len();
    let d = points.first().map_or(0, Vec::len);
    if n == 0 || dims == 0 || dims > d {
        return Err(Error::Contract(format!("pca to {dims} dims from {d}-dimensional input")));
    }
    let mean: Vec<f64> = (0..d).map(|k| points.iter().map(|p| p[k]).sum::<f64>() / n as f64).collect();
    let x = nalgebra::DMatrix::from_fn(n, d, |i, k| points[i][k] - mean[k]);
    let cov = x.transpose() * &x;
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    Ok((0..n)
        .map(|i| {
            order[..dims]
                .iter()
                .map(|&c| (0..d).map(|k| x[(i, k)] * eig.eigenvectors[(k, c)]).sum())
                .collect()
        })
        .collect())
}

fn kl(p: &[f64], q_num: &[f64], q_sum: f64) -> f64 {
    p.iter()
        .zip(q_num)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &num)| p * (p / (num / q_sum).max(AFFINITY_FLOOR)).ln())
        .sum()
}

pub fn tsne(points: &[Vec<f64>], config: &TsneConfig) -> Result<Projection2D> {
    if points.iter().any(|p| p.len() != points[0].len() || p.len() < 2) {
        return Err(Error::Contract("t-SNE input must be at least 2-dimensional with a common width".into()));
    }
    let reduced;
    let input = match config.pca_dims {
        Some(k) if k < points[0].len() => {
            reduced = pca(points, k)?;
            &reduced
        }
        _ => points,
    };
    let aff = affinities(input, config.perplexity)?;
    let n = aff.n;
    let p = &aff.p;

    let mut rng = seed::rng(config.seed, "tsne/init");
    let init = Normal::new(0.0, 1e-4).expect("valid sd");
    let mut y: Vec<f64> = (0..2 * n).map(|_| init.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];
    let mut kl_trace = Vec::with_capacity(config.iterations);

    for iter in 0..config.iterations {
        let exaggeration = if iter < config.exaggeration_iterations {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < config.exaggeration_iterations {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        let mut q_sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                num[j * n + i] = v;
                q_sum += 2.0 * v;
            }
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = num[i * n + j];
                let m = (exaggeration * p[i * n + j] - v / q_sum) * v;
                gx += m * (y[2 * i] - y[2 * j]);
                gy += m * (y[2 * i + 1] - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            update[k] = momentum * update[k] - config.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        for c in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + c]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + c] -= mean);
        }
        // KL at the updated coordinates
        let mut q_sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                num[j * n + i] = v;
                q_sum += 2.0 * v;
            }
        }
        kl_trace.push(kl(p, &num, q_sum));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("t-SNE coordinates diverged".into()));
    }
    Ok(Projection2D {
        coords: (0..n).map(|i| [y[2 * i], y[2 * i + 1]]).collect(),
        kl_trace,
        floored_rows: aff.floored_rows,
    })
}
