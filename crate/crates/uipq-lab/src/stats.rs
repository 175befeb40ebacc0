//! Empirical laws on code alphabets, total variation with bootstrap error
//! bars, and the Kolmogorov-Smirnov distance.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use uipq_core::RandomSource;

/// Codes seen fewer times than this (both samples together) share one
/// pooled cell.
pub const POOL_BELOW: u32 = 5;

/// Dense ids for a set of samples over a common sorted alphabet.
pub fn index_samples<K: Ord + Clone>(arms: &[&[K]]) -> (Vec<Vec<u32>>, usize) {
    let mut ids: BTreeMap<K, u32> = BTreeMap::new();
    for arm in arms {
        for k in arm.iter() {
            ids.entry(k.clone()).or_insert(0);
        }
    }
    for (i, v) in ids.values_mut().enumerate() {
        *v = i as u32;
    }
    let out = arms.iter().map(|arm| arm.iter().map(|k| ids[k]).collect()).collect();
    (out, ids.len())
}

pub fn counts(ids: &[u32], k: usize) -> Vec<u32> {
    let mut c = vec![0u32; k];
    for &i in ids {
        c[i as usize] += 1;
    }
    c
}

/// Plug-in TV between two count vectors on the same alphabet, after pooling
/// the rare cells.
pub fn tv_pooled(a: &[u32], b: &[u32]) -> f64 {
    let (na, nb) = (a.iter().sum::<u32>() as f64, b.iter().sum::<u32>() as f64);
    let mut tv = 0.0;
    let (mut ra, mut rb) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (pa, pb) = (x as f64 / na, y as f64 / nb);
        if x + y < POOL_BELOW {
            ra += pa;
            rb += pb;
        } else {
            tv += (pa - pb).abs();
        }
    }
    (tv + (ra - rb).abs()) / 2.0
}

fn resample(ids: &[u32], k: usize, rng: &mut RandomSource) -> Vec<u32> {
    let mut c = vec![0u32; k];
    for _ in 0..ids.len() {
        c[ids[rng.below(ids.len() as u64) as usize] as usize] += 1;
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvEstimate {
    pub tv: f64,
    /// bootstrap standard deviation
    pub sd: f64,
    /// the 2.5% and 97.5% bootstrap quantiles
    pub lo: f64,
    pub hi: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

fn sd(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1).max(1) as f64).sqrt()
}

/// Maps both samples onto the cells of the observed pair: codes seen at
/// least `POOL_BELOW` times keep their own cell, the rest share cell 0.
/// Returns the relabeled samples and the number of cells.
pub fn pool_cells(a: &[u32], b: &[u32], k: usize) -> (Vec<u32>, Vec<u32>, usize) {
    let (ca, cb) = (counts(a, k), counts(b, k));
    let mut cell = vec![0u32; k];
    let mut next = 1;
    for i in 0..k {
        if ca[i] + cb[i] >= POOL_BELOW {
            cell[i] = next;
            next += 1;
        }
    }
    let map = |v: &[u32]| v.iter().map(|&i| cell[i as usize]).collect::<Vec<u32>>();
    (map(a), map(b), next as usize)
}

/// Plug-in TV on already pooled cells.
pub fn tv_counts(a: &[u32], b: &[u32]) -> f64 {
    let (na, nb) = (a.iter().sum::<u32>() as f64, b.iter().sum::<u32>() as f64);
    a.iter().zip(b).map(|(&x, &y)| (x as f64 / na - y as f64 / nb).abs()).sum::<f64>() / 2.0
}

/// TV with a nonparametric bootstrap: the cells are pooled once from the
/// observed samples, then both samples are resampled with replacement
/// `resamples` times, one child stream per resample.
pub fn bootstrap_tv(a: &[u32], b: &[u32], k: usize, resamples: usize, seed: u64) -> TvEstimate {
    let (a, b, cells) = pool_cells(a, b, k);
    let tv = tv_counts(&counts(&a, cells), &counts(&b, cells));
    let mut reps: Vec<f64> = (0..resamples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RandomSource::child(seed, i);
            tv_counts(&resample(&a, cells, &mut rng), &resample(&b, cells, &mut rng))
        })
        .collect();
    let s = sd(&reps);
    reps.sort_by(f64::total_cmp);
    TvEstimate { tv, sd: s, lo: quantile(&reps, 0.025), hi: quantile(&reps, 0.975) }
}

/// Permutation law of the TV when both samples come from one law: the
/// pooled sample is shuffled and split `resamples` times. Returns the
/// observed TV and the 95% quantile of the permuted values.
pub fn permutation_tv(a: &[u32], b: &[u32], k: usize, resamples: usize, seed: u64) -> (f64, f64) {
    let tv = tv_pooled(&counts(a, k), &counts(b, k));
    let all: Vec<u32> = a.iter().chain(b).copied().collect();
    let mut reps: Vec<f64> = (0..resamples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RandomSource::child(seed, i);
            let mut v = all.clone();
            v.shuffle(&mut rng);
            let (x, y) = v.split_at(a.len());
            tv_pooled(&counts(x, k), &counts(y, k))
        })
        .collect();
    reps.sort_by(f64::total_cmp);
    (tv, quantile(&reps, 0.95))
}

/// sup |F_n - F| for the empirical law of `xs` against a continuous cdf.
pub fn ks_distance(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (m, sd(xs) / (xs.len() as f64).sqrt())
}
