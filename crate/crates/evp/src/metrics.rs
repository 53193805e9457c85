//! Exact float-space distances, rank statistics, pair sampling, and
//! isotonic regression.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::bitcode::CodeCollection;
use crate::error::{Error, Result};
use crate::quantize::QuantizerKind;
use crate::vecstore::Dataset;

/// Euclidean distance with `f64` accumulation.
///
/// Panics if the vectors have different lengths.
pub fn euclidean(u: &[f32], v: &[f32]) -> f64 {
    assert_eq!(u.len(), v.len(), "dimension mismatch");
    let mut acc = 0.0f64;
    for i in 0..u.len() {
        let diff = u[i] as f64 - v[i] as f64;
        acc += diff * diff;
    }
    acc.sqrt()
}

/// Squared Euclidean distance in pure `f32`, the kernel used by exhaustive
/// scans. Ranking by it matches ranking by [`euclidean`] since the square
/// root is monotone.
#[inline]
pub fn euclidean_sq_f32(u: &[f32], v: &[f32]) -> f32 {
    debug_assert_eq!(u.len(), v.len());
    let mut acc = 0.0f32;
    for i in 0..u.len() {
        let diff = u[i] - v[i];
        acc += diff * diff;
    }
    acc
}

/// Scalar product with `f64` accumulation.
///
/// Panics if the vectors have different lengths.
pub fn dot(u: &[f32], v: &[f32]) -> f64 {
    assert_eq!(u.len(), v.len(), "dimension mismatch");
    let mut acc = 0.0f64;
    for i in 0..u.len() {
        acc += u[i] as f64 * v[i] as f64;
    }
    acc
}

/// Draws `count` distinct unordered row pairs `(i, j)`, `i < j`, uniformly
/// from a collection of `n_rows` rows. Deterministic for a given seed.
pub fn sample_pairs(n_rows: usize, count: usize, seed: u64) -> Result<Vec<(u32, u32)>> {
    if n_rows < 2 {
        return Err(Error::InsufficientPairs {
            requested: count,
            available: 0,
        });
    }
    let total = n_rows * (n_rows - 1) / 2;
    if count > total {
        return Err(Error::InsufficientPairs {
            requested: count,
            available: total,
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, total, count);
    Ok(picks.into_iter().map(pair_from_index).collect())
}

/// Decodes a flat pair index `p` in `[0, n(n-1)/2)` into `(i, j)` with
/// `i < j`, enumerating pairs as (0,1), (0,2), (1,2), (0,3), ...
fn pair_from_index(p: usize) -> (u32, u32) {
    let mut j = ((1.0 + (1.0 + 8.0 * p as f64).sqrt()) / 2.0) as usize;
    while j * (j - 1) / 2 > p {
        j -= 1;
    }
    while (j + 1) * j / 2 <= p {
        j += 1;
    }
    let i = p - j * (j - 1) / 2;
    (i as u32, j as u32)
}

/// Average ranks (1-based); tied values share the mean of their rank range.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: the Pearson correlation of average-ranked
/// values. Errors when either sequence has zero rank variance.
///
/// Panics if the sequences are empty or differ in length.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    assert_eq!(xs.len(), ys.len(), "length mismatch");
    assert!(!xs.is_empty(), "empty sequences");
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..rx.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::DegenerateRanks);
    }
    Ok(cov / (vx * vy).sqrt())
}

/// One sampled comparison: the exact distance and the quantised proxy value
/// for the same row pair.
#[derive(Debug, Clone, Copy)]
pub struct DistancePair {
    pub true_distance: f64,
    pub proxy_value: f64,
}

/// A set of (true distance, proxy value) pairs for one quantiser.
#[derive(Debug, Clone)]
pub struct DistancePairSample {
    pub pairs: Vec<DistancePair>,
    pub proxy_kind: QuantizerKind,
    pub sample_seed: u64,
}

/// Evaluates exact and proxy distances over sampled row pairs.
///
/// Proxy values ascend with dissimilarity: negated ternary scalar product
/// for ternary codes, Hamming distance for binary codes.
pub fn proxy_pair_sample(
    data: &Dataset,
    codes: &CodeCollection,
    kind: QuantizerKind,
    pairs: &[(u32, u32)],
    sample_seed: u64,
) -> Result<DistancePairSample> {
    if codes.len() != data.len() {
        return Err(Error::InvalidConfig(format!(
            "code collection has {} rows, dataset has {}",
            codes.len(),
            data.len()
        )));
    }
    if codes.d() != data.d() {
        return Err(Error::DimensionMismatch {
            expected: data.d(),
            actual: codes.d(),
        });
    }
    let out = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (i, j) = (i as usize, j as usize);
            let true_distance = euclidean(data.row(i), data.row(j));
            let proxy_value = match codes {
                CodeCollection::Ternary(c) => -(c.b2sp_rows(i, j) as f64),
                CodeCollection::Binary(c) => c.hamming_rows(i, j) as f64,
            };
            DistancePair {
                true_distance,
                proxy_value,
            }
        })
        .collect();
    Ok(DistancePairSample {
        pairs: out,
        proxy_kind: kind,
        sample_seed,
    })
}

/// A non-decreasing step function fitted by isotonic regression.
#[derive(Debug, Clone)]
pub struct IsotonicFit {
    /// Distinct proxy values, ascending.
    pub breakpoints: Vec<f64>,
    /// Fitted levels, non-decreasing, one per breakpoint.
    pub levels: Vec<f64>,
}

impl IsotonicFit {
    /// Fitted value at `x`: the level of the rightmost breakpoint `<= x`
    /// (the first level below the first breakpoint).
    pub fn predict(&self, x: f64) -> f64 {
        let pos = self.breakpoints.partition_point(|&b| b <= x);
        if pos == 0 {
            self.levels[0]
        } else {
            self.levels[pos - 1]
        }
    }
}

/// Least-squares isotonic regression of true distance as a non-decreasing
/// function of the proxy value, by pool-adjacent-violators.
///
/// Panics if the sample is empty.
pub fn isotonic_fit(sample: &DistancePairSample) -> IsotonicFit {
    assert!(!sample.pairs.is_empty(), "empty sample");
    let mut points: Vec<(f64, f64)> = sample
        .pairs
        .iter()
        .map(|p| (p.proxy_value, p.true_distance))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));

    // group duplicate proxy values so the fit is a function of x
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new(); // group mean
    let mut ws: Vec<f64> = Vec::new(); // group weight
    let mut i = 0;
    while i < points.len() {
        let mut j = i;
        let mut sum = 0.0;
        while j < points.len() && points[j].0 == points[i].0 {
            sum += points[j].1;
            j += 1;
        }
        xs.push(points[i].0);
        ys.push(sum / (j - i) as f64);
        ws.push((j - i) as f64);
        i = j;
    }

    // pool-adjacent-violators over the grouped points
    // block: (weight, weighted mean, index of first group)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(xs.len());
    for g in 0..xs.len() {
        blocks.push((ws[g], ys[g], g));
        while blocks.len() >= 2 {
            let last = blocks[blocks.len() - 1];
            let prev = blocks[blocks.len() - 2];
            if prev.1 <= last.1 {
                break;
            }
            blocks.pop();
            blocks.pop();
            let w = prev.0 + last.0;
            let mean = (prev.0 * prev.1 + last.0 * last.1) / w;
            blocks.push((w, mean, prev.2));
        }
    }

    let mut levels = vec![0.0; xs.len()];
    for (b, block) in blocks.iter().enumerate() {
        let end = if b + 1 < blocks.len() {
            blocks[b + 1].2
        } else {
            xs.len()
        };
        for level in levels.iter_mut().take(end).skip(block.2) {
            *level = block.1;
        }
    }
    IsotonicFit {
        breakpoints: xs,
        levels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclidean_basics() {
        let u = [1.0f32, 0.0];
        assert_eq!(euclidean(&u, &u), 0.0);
        let v = [0.0f32, 1.0];
        assert!((euclidean(&u, &v) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn unit_sphere_identity() {
        let data = crate::vecstore::generate_uniform_sphere(3, 50, 64);
        for i in 0..49 {
            let (u, v) = (data.row(i), data.row(i + 1));
            let lhs = euclidean(u, v).powi(2);
            let rhs = 2.0 - 2.0 * dot(u, v);
            assert!((lhs - rhs).abs() <= 1e-6);
        }
    }

    #[test]
    fn dot_matches_naive_loop() {
        let u = [0.32f32, 0.4, -0.38, -0.19, 0.29, 0.45, 0.44, -0.16, 0.23, -0.02];
        let v = [-0.16f32, -0.4, 0.38, 0.45, 0.14, 0.19, -0.38, -0.04, -0.4, -0.35];
        let mut naive = 0.0f64;
        for i in 0..u.len() {
            naive += u[i] as f64 * v[i] as f64;
        }
        assert!((dot(&u, &v) - naive).abs() < 1e-6);
        assert!((dot(&u, &u) - 1.0).abs() < 0.1); // not normalised, just sane
    }

    #[test]
    fn sample_pairs_exhausts_small_sets() {
        let mut pairs = sample_pairs(3, 3, 99).unwrap();
        pairs.sort_unstable();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn sample_pairs_deterministic_and_distinct() {
        let a = sample_pairs(1000, 500, 7).unwrap();
        let b = sample_pairs(1000, 500, 7).unwrap();
        assert_eq!(a, b);
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in &a {
            assert!(i < j, "({i},{j}) not ordered");
            assert!(seen.insert((i, j)), "duplicate pair ({i},{j})");
        }
    }

    #[test]
    fn sample_pairs_rejects_overdraw() {
        assert!(matches!(
            sample_pairs(3, 4, 0),
            Err(Error::InsufficientPairs { available: 3, .. })
        ));
        assert!(matches!(
            sample_pairs(1, 1, 0),
            Err(Error::InsufficientPairs { .. })
        ));
    }

    #[test]
    fn pair_index_decoding_is_bijective() {
        let n = 80usize;
        let mut seen = std::collections::HashSet::new();
        for p in 0..n * (n - 1) / 2 {
            let (i, j) = pair_from_index(p);
            assert!(i < j && (j as usize) < n);
            assert!(seen.insert((i, j)));
        }
    }

    #[test]
    fn spearman_monotone_map_is_one() {
        let xs: Vec<f64> = (1..=20).map(|v| v as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|v| v * v).collect();
        assert!((spearman_rho(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman_rho(&xs, &xs).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_reversed_is_minus_one() {
        let xs: Vec<f64> = (1..=20).map(|v| v as f64).collect();
        let ys: Vec<f64> = xs.iter().rev().cloned().collect();
        assert!((spearman_rho(&xs, &ys).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_with_ties() {
        // hand-computed with average ranks: 4.5 / sqrt(22.5)
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [1.0, 2.0, 2.0, 4.0];
        let rho = spearman_rho(&xs, &ys).unwrap();
        assert!((rho - 0.948_683_298_050_513_8).abs() < 1e-12, "{rho}");
    }

    #[test]
    fn spearman_degenerate_ranks() {
        let xs = [1.0, 2.0, 3.0];
        let ys = [5.0, 5.0, 5.0];
        assert!(matches!(
            spearman_rho(&xs, &ys),
            Err(Error::DegenerateRanks)
        ));
    }

    fn sample_of(points: &[(f64, f64)]) -> DistancePairSample {
        DistancePairSample {
            pairs: points
                .iter()
                .map(|&(x, y)| DistancePair {
                    proxy_value: x,
                    true_distance: y,
                })
                .collect(),
            proxy_kind: QuantizerKind::Evp,
            sample_seed: 0,
        }
    }

    #[test]
    fn isotonic_monotone_points_fit_exactly() {
        let sample = sample_of(&[(0.0, 1.0), (1.0, 2.0), (2.0, 5.0)]);
        let fit = isotonic_fit(&sample);
        assert_eq!(fit.levels, vec![1.0, 2.0, 5.0]);
        assert_eq!(fit.predict(1.0), 2.0);
        assert_eq!(fit.predict(1.5), 2.0);
        assert_eq!(fit.predict(-3.0), 1.0);
        assert_eq!(fit.predict(9.0), 5.0);
    }

    #[test]
    fn isotonic_single_violation_pools_to_mean() {
        let sample = sample_of(&[(0.0, 4.0), (1.0, 2.0)]);
        let fit = isotonic_fit(&sample);
        assert_eq!(fit.levels, vec![3.0, 3.0]);
    }

    #[test]
    fn isotonic_beats_constant_fit_on_random_points() {
        let mut pts = Vec::new();
        let mut state = 12345u64;
        for i in 0..100 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let noise = (state >> 33) as f64 / (1u64 << 31) as f64 - 0.5;
            pts.push((i as f64, i as f64 * 0.1 + noise));
        }
        let sample = sample_of(&pts);
        let fit = isotonic_fit(&sample);
        for w in fit.levels.windows(2) {
            assert!(w[0] <= w[1]);
        }
        let mean = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let sse_fit: f64 = pts
            .iter()
            .map(|&(x, y)| (y - fit.predict(x)).powi(2))
            .sum();
        let sse_const: f64 = pts.iter().map(|&(_, y)| (y - mean).powi(2)).sum();
        assert!(sse_fit <= sse_const);
    }
}
