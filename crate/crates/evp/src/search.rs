//! Exhaustive kNN over the float space (ground truth), exhaustive proxy
//! search over packed codes, reranking, and k@n recall.
//!
//! Every ranking uses ascending scores (smaller = closer) and breaks score
//! ties toward the lower row index, so results are reproducible run to run
//! regardless of worker scheduling.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bitcode::{CodeCollection, PackedCode};
use crate::error::{Error, Result};
use crate::metrics::euclidean_sq_f32;
use crate::quantize::QuantizerConfig;
use crate::vecstore::Dataset;

/// One search hit: a row index and its score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Neighbor {
    pub index: u32,
    pub score: f64,
}

/// A ranked result list, ascending by score, ties by lower index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborList {
    pub entries: Vec<Neighbor>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.index)
    }
}

#[derive(PartialEq)]
struct HeapItem {
    score: f64,
    index: u32,
}

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then(self.index.cmp(&other.index))
    }
}

/// Bounded selection of the `k` smallest (score, index) pairs.
struct TopK {
    k: usize,
    heap: BinaryHeap<HeapItem>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, score: f64, index: u32) {
        if self.heap.len() < self.k {
            self.heap.push(HeapItem { score, index });
        } else if let Some(worst) = self.heap.peek() {
            let item = HeapItem { score, index };
            if item.cmp(worst) == Ordering::Less {
                self.heap.pop();
                self.heap.push(item);
            }
        }
    }

    fn into_list(self) -> NeighborList {
        let entries = self
            .heap
            .into_sorted_vec()
            .into_iter()
            .map(|item| Neighbor {
                index: item.index,
                score: item.score,
            })
            .collect();
        NeighborList { entries }
    }
}

/// Exhaustive exact kNN: the `k` rows nearest to `q` by Euclidean distance.
/// When `k` exceeds the dataset size the full ranking is returned.
///
/// Panics if `q` does not have the dataset dimension or `k` is zero.
pub fn exact_knn(data: &Dataset, q: &[f32], k: usize) -> NeighborList {
    assert_eq!(q.len(), data.d(), "dimension mismatch");
    assert!(k >= 1, "k must be positive");
    let mut top = TopK::new(k.min(data.len()));
    for (i, row) in data.rows().enumerate() {
        top.offer(euclidean_sq_f32(q, row) as f64, i as u32);
    }
    let mut list = top.into_list();
    for e in &mut list.entries {
        e.score = e.score.sqrt();
    }
    list
}

/// Exhaustive proxy search: the `n` rows with the smallest proxy score
/// against the query code. Scores are the negated ternary scalar product
/// for ternary codes and the Hamming distance for binary codes.
pub fn proxy_knn(codes: &CodeCollection, q: &PackedCode, n: usize) -> Result<NeighborList> {
    if q.d() != codes.d() {
        return Err(Error::DimensionMismatch {
            expected: codes.d(),
            actual: q.d(),
        });
    }
    let n = n.min(codes.len());
    let mut top = TopK::new(n);
    match (codes, q) {
        (CodeCollection::Ternary(c), PackedCode::Ternary(q)) => {
            for i in 0..c.len() {
                top.offer(-(c.b2sp_with(i, q) as f64), i as u32);
            }
        }
        (CodeCollection::Binary(c), PackedCode::Binary(q)) => {
            for i in 0..c.len() {
                top.offer(c.hamming_with(i, q) as f64, i as u32);
            }
        }
        _ => {
            return Err(Error::InvalidConfig(
                "quantizer mismatch: query and collection use different code kinds".into(),
            ))
        }
    }
    Ok(top.into_list())
}

/// Fraction of the true top `k` found within the proxy top `n`.
pub fn recall_k_at_n(truth: &NeighborList, proxy: &NeighborList, k: usize, n: usize) -> Result<f64> {
    if truth.len() < k {
        return Err(Error::InsufficientEntries {
            needed: k,
            have: truth.len(),
        });
    }
    if proxy.len() < n {
        return Err(Error::InsufficientEntries {
            needed: n,
            have: proxy.len(),
        });
    }
    let wanted: HashSet<u32> = truth.entries[..k].iter().map(|e| e.index).collect();
    let hits = proxy.entries[..n]
        .iter()
        .filter(|e| wanted.contains(&e.index))
        .count();
    Ok(hits as f64 / k as f64)
}

/// Re-scores candidate rows by exact Euclidean distance to `q` and returns
/// the best `k`.
pub fn rerank(
    candidates: &NeighborList,
    data: &Dataset,
    q: &[f32],
    k: usize,
) -> Result<NeighborList> {
    if candidates.len() < k {
        return Err(Error::InsufficientEntries {
            needed: k,
            have: candidates.len(),
        });
    }
    let mut top = TopK::new(k);
    for e in &candidates.entries {
        if e.index as usize >= data.len() {
            return Err(Error::InvalidConfig(format!(
                "candidate index {} out of range for {} rows",
                e.index,
                data.len()
            )));
        }
        top.offer(
            euclidean_sq_f32(q, data.row(e.index as usize)) as f64,
            e.index,
        );
    }
    let mut list = top.into_list();
    for e in &mut list.entries {
        e.score = e.score.sqrt();
    }
    Ok(list)
}

/// Recall of one quantiser at one candidate-list size.
#[derive(Debug, Clone, Serialize)]
pub struct RecallReport {
    pub quantizer: String,
    pub k: usize,
    pub n: usize,
    pub mean: f64,
    pub per_query: Vec<f64>,
}

impl RecallReport {
    /// Histogram of per-query recall over `[0, 1]` with `bins` equal bins.
    pub fn histogram(&self, bins: usize) -> Vec<usize> {
        let mut counts = vec![0usize; bins];
        for &r in &self.per_query {
            let b = ((r * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        counts
    }
}

/// SHA-256 of a dataset's shape and raw little-endian contents, used to key
/// the ground-truth cache.
pub fn dataset_fingerprint(data: &Dataset) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((data.d() as u64).to_le_bytes());
    h.update((data.len() as u64).to_le_bytes());
    for &v in data.as_flat() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

fn cache_path(dir: &Path, data: &Dataset, queries: &Dataset, k: usize) -> PathBuf {
    let dh = dataset_fingerprint(data);
    let qh = dataset_fingerprint(queries);
    let hex = |b: &[u8]| -> String { b.iter().map(|x| format!("{x:02x}")).collect() };
    dir.join(format!("gt-{}-{}-k{k}.bin", hex(&dh[..8]), hex(&qh[..8])))
}

fn write_ground_truth(path: &Path, lists: &[NeighborList], k: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"EVPG")?;
    w.write_all(&[1u8])?;
    w.write_all(&(k as u32).to_le_bytes())?;
    w.write_all(&(lists.len() as u64).to_le_bytes())?;
    for list in lists {
        for e in &list.entries {
            w.write_all(&e.index.to_le_bytes())?;
            w.write_all(&e.score.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_ground_truth(path: &Path, k: usize, queries: usize) -> Option<Vec<NeighborList>> {
    let mut r = BufReader::new(File::open(path).ok()?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).ok()?;
    if &magic != b"EVPG" {
        return None;
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version).ok()?;
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).ok()?;
    if version[0] != 1 || u32::from_le_bytes(b4) as usize != k {
        return None;
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).ok()?;
    if u64::from_le_bytes(b8) as usize != queries {
        return None;
    }
    let mut lists = Vec::with_capacity(queries);
    for _ in 0..queries {
        let mut entries = Vec::with_capacity(k);
        for _ in 0..k {
            r.read_exact(&mut b4).ok()?;
            let index = u32::from_le_bytes(b4);
            r.read_exact(&mut b8).ok()?;
            entries.push(Neighbor {
                index,
                score: f64::from_le_bytes(b8),
            });
        }
        lists.push(NeighborList { entries });
    }
    Some(lists)
}

/// Exact top-`k` lists for every query row, computed in parallel. With a
/// cache directory, results are stored on disk keyed by the fingerprints of
/// both datasets plus `k`, and reused on later runs; an unreadable or stale
/// cache entry is silently recomputed.
pub fn ground_truth(
    data: &Dataset,
    queries: &Dataset,
    k: usize,
    cache_dir: Option<&Path>,
) -> Result<Vec<NeighborList>> {
    if queries.d() != data.d() {
        return Err(Error::DimensionMismatch {
            expected: data.d(),
            actual: queries.d(),
        });
    }
    if k > data.len() {
        return Err(Error::InsufficientEntries {
            needed: k,
            have: data.len(),
        });
    }
    let cache = cache_dir.map(|dir| cache_path(dir, data, queries, k));
    if let Some(path) = &cache {
        if let Some(lists) = read_ground_truth(path, k, queries.len()) {
            return Ok(lists);
        }
    }
    let lists: Vec<NeighborList> = (0..queries.len())
        .into_par_iter()
        .map(|qi| exact_knn(data, queries.row(qi), k))
        .collect();
    if let Some(path) = &cache {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        write_ground_truth(path, &lists, k)?;
    }
    Ok(lists)
}

/// Runs the k@n recall experiment for one quantiser: exact ground truth,
/// proxy rankings over the packed codes (queries quantised with the same
/// configuration), and one [`RecallReport`] per requested `n`.
///
/// Queries that also occur in the data simply match themselves; recall
/// stays well defined.
pub fn run_recall_experiment(
    data: &Dataset,
    queries: &Dataset,
    k: usize,
    ns: &[usize],
    quantizer: &QuantizerConfig,
    cache_dir: Option<&Path>,
) -> Result<Vec<RecallReport>> {
    if ns.is_empty() {
        return Err(Error::InvalidConfig("empty candidate-size list".into()));
    }
    if k < 1 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    let max_n = *ns.iter().max().unwrap();
    if max_n > data.len() {
        return Err(Error::InsufficientEntries {
            needed: max_n,
            have: data.len(),
        });
    }
    let truth = ground_truth(data, queries, k, cache_dir)?;
    let codes = quantizer.encode_dataset(data)?;
    let proxies: Vec<NeighborList> = (0..queries.len())
        .into_par_iter()
        .map(|qi| {
            let q_code = quantizer.encode(queries.row(qi))?;
            proxy_knn(&codes, &q_code, max_n)
        })
        .collect::<Result<_>>()?;

    let label = quantizer.kind().label().to_string();
    let mut reports = Vec::with_capacity(ns.len());
    for &n in ns {
        let per_query: Vec<f64> = truth
            .iter()
            .zip(proxies.iter())
            .map(|(t, p)| recall_k_at_n(t, p, k.min(t.len()), n))
            .collect::<Result<_>>()?;
        let mean = per_query.iter().sum::<f64>() / per_query.len().max(1) as f64;
        reports.push(RecallReport {
            quantizer: label.clone(),
            k,
            n,
            mean,
            per_query,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::EvpConfig;
    use crate::vecstore::generate_uniform_sphere;

    fn planar_dataset() -> Dataset {
        // five points on a line: hand-checkable distances
        Dataset::new(
            "toy",
            2,
            vec![0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 5.0, 0.0, 9.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn exact_knn_matches_hand_ranking() {
        let data = planar_dataset();
        let list = exact_knn(&data, &[1.9, 0.0], 5);
        let order: Vec<u32> = list.indices().collect();
        assert_eq!(order, vec![2, 1, 0, 3, 4]);
        assert!((list.entries[0].score - 0.1).abs() < 1e-6);
    }

    #[test]
    fn exact_knn_self_match_first() {
        let data = generate_uniform_sphere(5, 50, 16);
        let list = exact_knn(&data, data.row(17), 3);
        assert_eq!(list.entries[0].index, 17);
        assert!(list.entries[0].score.abs() < 1e-6);
    }

    #[test]
    fn exact_knn_truncates_large_k() {
        let data = planar_dataset();
        let list = exact_knn(&data, &[0.0, 0.0], 100);
        assert_eq!(list.len(), 5);
    }

    #[test]
    fn exact_knn_tie_breaks_by_index() {
        // rows 0 and 1 are equidistant from the query
        let data = Dataset::new("t", 1, vec![-1.0, 1.0, 3.0]).unwrap();
        let list = exact_knn(&data, &[0.0], 2);
        let order: Vec<u32> = list.indices().collect();
        assert_eq!(order, vec![0, 1]);
    }

    #[test]
    fn proxy_knn_matches_reference_ranking() {
        use crate::bitcode::{pack, ternary_dot_reference};
        use crate::quantize::evp_quantize;

        let cfg = EvpConfig::new(16, 10).unwrap();
        let data = generate_uniform_sphere(9, 10, 16);
        let quant = QuantizerConfig::Evp(cfg);
        let codes = quant.encode_dataset(&data).unwrap();
        let q = generate_uniform_sphere(10, 1, 16);
        let q_tern = evp_quantize(q.row(0), &cfg).unwrap();
        let q_code = quant.encode(q.row(0)).unwrap();

        let list = proxy_knn(&codes, &q_code, 10).unwrap();

        // brute-force oracle over the naive ternary dot
        let mut expected: Vec<(f64, u32)> = (0..10)
            .map(|i| {
                let v = evp_quantize(data.row(i), &cfg).unwrap();
                assert_eq!(pack(&v), {
                    let CodeCollection::Ternary(ref c) = codes else {
                        panic!()
                    };
                    c.row(i)
                });
                (-(ternary_dot_reference(&v, &q_tern) as f64), i as u32)
            })
            .collect();
        expected.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let got: Vec<(f64, u32)> = list.entries.iter().map(|e| (e.score, e.index)).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn proxy_knn_self_similarity_is_maximal() {
        let cfg = EvpConfig::new(16, 10).unwrap();
        let quant = QuantizerConfig::Evp(cfg);
        let data = generate_uniform_sphere(9, 10, 16);
        let codes = quant.encode_dataset(&data).unwrap();
        let q_code = quant.encode(data.row(4)).unwrap();
        let list = proxy_knn(&codes, &q_code, 1).unwrap();
        assert_eq!(list.entries[0].index, 4);
        // self-product of a full-budget code equals x, score is its negation
        assert_eq!(list.entries[0].score, -10.0);
    }

    #[test]
    fn proxy_knn_rejects_mismatches() {
        let data = generate_uniform_sphere(9, 10, 16);
        let tern = QuantizerConfig::Evp(EvpConfig::new(16, 10).unwrap());
        let codes = tern.encode_dataset(&data).unwrap();
        let bin_query = QuantizerConfig::OneBit.encode(data.row(0)).unwrap();
        assert!(matches!(
            proxy_knn(&codes, &bin_query, 3),
            Err(Error::InvalidConfig(_))
        ));

        let small = QuantizerConfig::Evp(EvpConfig::new(8, 5).unwrap());
        let q8 = small.encode(&data.row(0)[..8]).unwrap();
        assert!(matches!(
            proxy_knn(&codes, &q8, 3),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn recall_set_arithmetic() {
        let list = |ids: &[u32]| NeighborList {
            entries: ids
                .iter()
                .map(|&i| Neighbor {
                    index: i,
                    score: i as f64,
                })
                .collect(),
        };
        let truth = list(&[1, 2, 3]);
        assert_eq!(recall_k_at_n(&truth, &truth, 3, 3).unwrap(), 1.0);
        let proxy = list(&[9, 2, 7, 3, 8]);
        assert!((recall_k_at_n(&truth, &proxy, 3, 5).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let disjoint = list(&[7, 8, 9]);
        assert_eq!(recall_k_at_n(&truth, &disjoint, 3, 3).unwrap(), 0.0);
        assert!(matches!(
            recall_k_at_n(&truth, &proxy, 4, 5),
            Err(Error::InsufficientEntries { .. })
        ));
    }

    #[test]
    fn rerank_recovers_exact_order() {
        let data = planar_dataset();
        let q = [1.9f32, 0.0];
        // proxy order deliberately scrambled
        let candidates = NeighborList {
            entries: [4u32, 0, 3, 2, 1]
                .iter()
                .map(|&i| Neighbor {
                    index: i,
                    score: 0.0,
                })
                .collect(),
        };
        let reranked = rerank(&candidates, &data, &q, 3).unwrap();
        let order: Vec<u32> = reranked.indices().collect();
        assert_eq!(order, vec![2, 1, 0]);

        let exact = exact_knn(&data, &q, 3);
        assert_eq!(reranked, exact);
    }

    #[test]
    fn rerank_rejects_bad_index() {
        let data = planar_dataset();
        let candidates = NeighborList {
            entries: vec![Neighbor {
                index: 99,
                score: 0.0,
            }],
        };
        assert!(rerank(&candidates, &data, &[0.0, 0.0], 1).is_err());
    }

    #[test]
    fn identity_quantizer_would_give_full_recall() {
        // using exact search as its own proxy: recall 1.0 at every n >= k
        let data = generate_uniform_sphere(3, 200, 8);
        let q = data.row(7);
        let truth = exact_knn(&data, q, 10);
        let proxy = exact_knn(&data, q, 50);
        assert_eq!(recall_k_at_n(&truth, &proxy, 10, 10).unwrap(), 1.0);
        assert_eq!(recall_k_at_n(&truth, &proxy, 10, 50).unwrap(), 1.0);
    }

    #[test]
    fn recall_experiment_shapes_and_monotonicity() {
        let data = generate_uniform_sphere(21, 2000, 32);
        let queries = generate_uniform_sphere(22, 20, 32);
        let quant = QuantizerConfig::Evp(EvpConfig::with_default_x(32).unwrap());
        let reports =
            run_recall_experiment(&data, &queries, 10, &[10, 50, 200], &quant, None).unwrap();
        assert_eq!(reports.len(), 3);
        for r in &reports {
            assert_eq!(r.per_query.len(), 20);
            assert!(r.per_query.iter().all(|&x| (0.0..=1.0).contains(&x)));
            let mean = r.per_query.iter().sum::<f64>() / 20.0;
            assert!((mean - r.mean).abs() < 1e-12);
            assert_eq!(r.histogram(20).iter().sum::<usize>(), 20);
        }
        assert!(reports[0].mean <= reports[1].mean);
        assert!(reports[1].mean <= reports[2].mean);
    }

    #[test]
    fn ground_truth_cache_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_uniform_sphere(31, 300, 16);
        let queries = generate_uniform_sphere(32, 5, 16);
        let first = ground_truth(&data, &queries, 7, Some(dir.path())).unwrap();
        // second call must hit the cache and agree exactly
        let second = ground_truth(&data, &queries, 7, Some(dir.path())).unwrap();
        assert_eq!(first, second);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        // different k gets its own entry
        let _ = ground_truth(&data, &queries, 3, Some(dir.path())).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
    }
}
