//! Seeded k-means and cluster purity.

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed;

pub const KMEANS_RESTARTS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut seed::Rng) -> KMeans {
    let n = points.len();
    // k-means++ seeding
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            nearest
                .iter()
                .position(|&d| {
                    t -= d;
                    t < 0.0
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[next].clone());
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(dist2(p, centroids.last().expect("non-empty")));
        }
    }
    let dim = points[0].len();
    let mut assignments = vec![0; n];
    for _ in 0..300 {
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(points) {
            let best = (0..k)
                .min_by(|&x, &y| dist2(p, &centroids[x]).total_cmp(&dist2(p, &centroids[y])))
                .expect("k ≥ 1");
            changed |= *a != best;
            *a = best;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (a, p) in assignments.iter().zip(points) {
            counts[*a] += 1;
            sums[*a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = assignments.iter().zip(points).map(|(&a, p)| dist2(p, &centroids[a])).sum();
    KMeans {
        assignments,
        centroids,
        inertia,
    }
}

/// Best-inertia k-means over `restarts` k-means++ initializations.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || points.len() < k {
        return Err(Error::Contract(format!("k-means with k = {k} on {} points", points.len())));
    }
    (0..restarts.max(1) as u64)
        .map(|r| lloyd(points, k, &mut seed::rng_indexed(seed, "kmeans", r)))
        .min_by(|a, b| a.inertia.total_cmp(&b.inertia))
        .ok_or_else(|| Error::Contract("no k-means restarts".into()))
}

/// Fraction of points whose k-means cluster's majority label is their own,
/// with `k` the number of distinct labels.
pub fn cluster_purity<L: Ord + Clone>(coords: &[Vec<f64>], labels: &[L], seed: u64) -> Result<f64> {
    if coords.len() != labels.len() {
        return Err(Error::Dimension {
            op: "cluster_purity",
            lhs: vec![coords.len()],
            rhs: vec![labels.len()],
        });
    }
    let distinct: BTreeMap<&L, usize> = labels.iter().map(|l| (l, 0)).collect();
    if distinct.len() < 2 {
        return Err(Error::Contract("cluster purity needs at least two labels".into()));
    }
    let km = kmeans(coords, distinct.len(), KMEANS_RESTARTS, seed)?;
    let mut counts: BTreeMap<(usize, &L), usize> = BTreeMap::new();
    for (a, l) in km.assignments.iter().zip(labels) {
        *counts.entry((*a, l)).or_default() += 1;
    }
    let mut majority: BTreeMap<usize, usize> = BTreeMap::new();
    for ((cluster, _), c) in counts {
        let m = majority.entry(cluster).or_default();
        *m = (*m).max(c);
    }
    Ok(majority.values().sum::<usize>() as f64 / coords.len() as f64)
}

/// Share of points closest to the centroid of their own label.
pub fn nearest_centroid_purity<L: Ord + Clone>(coords: &[Vec<f64>], labels: &[L]) -> f64 {
    let mut sums: BTreeMap<&L, (Vec<f64>, usize)> = BTreeMap::new();
    for (p, l) in coords.iter().zip(labels) {
        let e = sums.entry(l).or_insert_with(|| (vec![0.0; p.len()], 0));
        e.0.iter_mut().zip(p).for_each(|(s, v)| *s += v);
        e.1 += 1;
    }
    let centroids: Vec<(&L, Vec<f64>)> = sums
        .into_iter()
        .map(|(l, (s, c))| (l, s.into_iter().map(|v| v / c as f64).collect()))
        .collect();
    let hits = coords
        .iter()
        .zip(labels)
        .filter(|(p, l)| {
            let best = centroids
                .iter()
                .min_by(|a, b| dist2(p, &a.1).total_cmp(&dist2(p, &b.1)))
                .expect("non-empty");
            best.0 == *l
        })
        .count();
    hits as f64 / coords.len().max(1) as f64
}
