//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Otsu split by direct scan over raw counts: for every split, class sizes
/// and bin-center means are summed from scratch.
pub fn brute_otsu(edges: &[f64], counts: &[u64]) -> (usize, Vec<f64>) {
    let bins = counts.len();
    let centers: Vec<f64> = edges.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    let n: f64 = counts.iter().map(|&c| c as f64).sum();
    let mut curve = Vec::new();
    for k in 0..bins.saturating_sub(1) {
        let (lo_c, hi_c) = counts.split_at(k + 1);
        let (lo_x, hi_x) = centers.split_at(k + 1);
        let n0: f64 = lo_c.iter().map(|&c| c as f64).sum();
        let n1: f64 = hi_c.iter().map(|&c| c as f64).sum();
        if n0 == 0.0 || n1 == 0.0 {
            curve.push(0.0);
            continue;
        }
        let m0 = lo_c.iter().zip(lo_x).map(|(&c, x)| c as f64 * x).sum::<f64>() / n0;
        let m1 = hi_c.iter().zip(hi_x).map(|(&c, x)| c as f64 * x).sum::<f64>() / n1;
        curve.push((n0 / n) * (n1 / n) * (m0 - m1) * (m0 - m1));
    }
    let occupied = counts.iter().filter(|&&c| c > 0).count();
    if occupied <= 1 {
        return (bins - 1, curve);
    }
    let mut best = 0;
    for k in 1..curve.len() {
        if curve[k] > curve[best] {
            best = k;
        }
    }
    (best, curve)
}

/// Within-class and total variance of a histogram split, bin-center moments.
pub fn otsu_within_and_total(edges: &[f64], counts: &[u64], k: usize) -> (f64, f64) {
    let centers: Vec<f64> = edges.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    let n: f64 = counts.iter().map(|&c| c as f64).sum();
    let moments = |cs: &[u64], xs: &[f64]| {
        let m: f64 = cs.iter().map(|&c| c as f64).sum();
        if m == 0.0 {
            return (0.0, 0.0);
        }
        let mean = cs.iter().zip(xs).map(|(&c, x)| c as f64 * x).sum::<f64>() / m;
        let var = cs
            .iter()
            .zip(xs)
            .map(|(&c, x)| c as f64 * (x - mean).powi(2))
            .sum::<f64>()
            / m;
        (m / n, var)
    };
    let (w0, v0) = moments(&counts[..=k], &centers[..=k]);
    let (w1, v1) = moments(&counts[k + 1..], &centers[k + 1..]);
    let (_, total) = moments(counts, &centers);
    (w0 * v0 + w1 * v1, total)
}

/// Random histogram with `bins` bins of unit width starting at a random offset.
pub fn random_histogram(r: &mut ChaCha8Rng, bins: usize, max_count: u64) -> (Vec<f64>, Vec<u64>) {
    let start: f64 = r.random_range(-50.0..50.0);
    let width: f64 = r.random_range(0.01..10.0);
    let edges = (0..=bins).map(|i| start + i as f64 * width).collect();
    let counts = (0..bins).map(|_| r.random_range(0..=max_count)).collect();
    (edges, counts)
}

/// Two Gaussian clusters of scores, shifted to stay non-negative.
pub fn two_clusters(r: &mut ChaCha8Rng, n: usize, gap_in_sd: f64, sd: f64) -> Vec<f64> {
    let lo = Normal::new(10.0 * sd, sd).unwrap();
    let hi = Normal::new(10.0 * sd + gap_in_sd * sd, sd).unwrap();
    let n_lo = r.random_range(n / 4..=3 * n / 4);
    let mut v: Vec<f64> = (0..n)
        .map(|i| if i < n_lo { lo.sample(r) } else { hi.sample(r) })
        .collect();
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    if min < 0.0 {
        v.iter_mut().for_each(|x| *x -= min);
    }
    v
}

/// Population mean and deviation by the textbook two-pass formula.
pub fn pop_moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Direct evaluation of the gate quantities: returns (cv_tot, cv_lt, cv_gt,
/// lhs, rhs, bimodal). Assumes both partitions are non-empty.
pub fn direct_gate(xs: &[f64], tau: f64, alpha: f64) -> (f64, f64, f64, f64, f64, bool) {
    let lt: Vec<f64> = xs.iter().copied().filter(|&x| x <= tau).collect();
    let gt: Vec<f64> = xs.iter().copied().filter(|&x| x > tau).collect();
    let cv = |v: &[f64]| {
        let (m, s) = pop_moments(v);
        s / m
    };
    let (t, l, g) = (cv(xs), cv(&lt), cv(&gt));
    (t, l, g, alpha * t, l + g, alpha * t < l + g)
}

/// Inverse of a symmetric 2×2 matrix by the adjugate formula.
pub fn inverse_2x2(a: f64, b: f64, d: f64) -> [[f64; 2]; 2] {
    let det = a * d - b * b;
    [[d / det, -b / det], [-b / det, a / det]]
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
