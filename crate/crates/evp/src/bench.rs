//! Micro-benchmarks of the distance kernels and end-to-end exhaustive-scan
//! timing.
//!
//! Operands are pre-generated outside the timed region and laid out
//! contiguously in scan order, so end-to-end numbers include realistic
//! memory traffic. Every timed loop folds its results into a checksum that
//! is compared against an untimed pass, which both defeats dead-code
//! elimination and verifies that the timed kernels compute the same values.
//!
//! Benchmarks are single-threaded; run them on a quiet machine.

use std::hint::black_box;
use std::time::Instant;

use serde::Serialize;

use crate::bitcode::{self, CodeCollection, PackedCode};
use crate::error::{Error, Result};
use crate::metrics::euclidean_sq_f32;
use crate::quantize::{evp_quantize, select_x, EvpConfig, QuantizerConfig};
use crate::vecstore::{generate_uniform_sphere, Dataset};

/// Wall-clock statistics for one timed kernel.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub kernel: String,
    pub d: usize,
    pub comparisons: usize,
    pub trials: usize,
    pub fastest_ms: f64,
    pub slowest_ms: f64,
    pub median_ms: f64,
    pub mean_ms: f64,
    /// mean time per comparison
    pub per_op_ns: f64,
    /// checksum of the timed outputs, equal to an untimed pass
    pub checksum: String,
    pub hardware: String,
}

impl BenchReport {
    fn from_trials(
        kernel: impl Into<String>,
        d: usize,
        comparisons: usize,
        mut trial_ms: Vec<f64>,
        checksum: u64,
    ) -> Self {
        let trials = trial_ms.len();
        trial_ms.sort_by(f64::total_cmp);
        let fastest_ms = trial_ms[0];
        let slowest_ms = trial_ms[trials - 1];
        let median_ms = if trials % 2 == 1 {
            trial_ms[trials / 2]
        } else {
            (trial_ms[trials / 2 - 1] + trial_ms[trials / 2]) / 2.0
        };
        let mean_ms = trial_ms.iter().sum::<f64>() / trials as f64;
        BenchReport {
            kernel: kernel.into(),
            d,
            comparisons,
            trials,
            fastest_ms,
            slowest_ms,
            median_ms,
            mean_ms,
            per_op_ns: mean_ms * 1e6 / comparisons as f64,
            checksum: format!("{checksum:016x}"),
            hardware: hardware_description(),
        }
    }
}

/// The kernels the micro-benchmark can time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchKernel {
    B2sp,
    EuclideanF32,
    Hamming,
    MaskedAdd,
}

impl std::fmt::Display for BenchKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BenchKernel::B2sp => "b2sp",
            BenchKernel::EuclideanF32 => "euclidean-f32",
            BenchKernel::Hamming => "hamming",
            BenchKernel::MaskedAdd => "masked-add",
        })
    }
}

impl std::str::FromStr for BenchKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "b2sp" => Ok(BenchKernel::B2sp),
            "euclidean-f32" | "euclidean" => Ok(BenchKernel::EuclideanF32),
            "hamming" => Ok(BenchKernel::Hamming),
            "masked-add" | "masked_add" => Ok(BenchKernel::MaskedAdd),
            other => Err(Error::InvalidConfig(format!(
                "unknown kernel '{other}', expected b2sp, euclidean-f32, hamming or masked-add"
            ))),
        }
    }
}

fn hardware_description() -> String {
    if let Ok(info) = std::fs::read_to_string("/proc/cpuinfo") {
        for line in info.lines() {
            if let Some(rest) = line.strip_prefix("model name") {
                if let Some(name) = rest.split(':').nth(1) {
                    return format!("{} ({})", name.trim(), std::env::consts::ARCH);
                }
            }
        }
    }
    std::env::consts::ARCH.to_string()
}

/// Rows the operand pool holds; comparisons cycle through it in scan order.
const MAX_POOL_ROWS: usize = 32_768;

/// Times `comparisons` kernel evaluations per trial against a pre-generated
/// operand pool, after one untimed warm-up pass.
///
/// Panics if a timed trial's checksum disagrees with the untimed pass.
pub fn bench_kernel(
    kernel: BenchKernel,
    d: usize,
    comparisons: usize,
    trials: usize,
    seed: u64,
) -> BenchReport {
    assert!(comparisons >= 1 && trials >= 1 && d >= 2);
    let pool_rows = comparisons.min(MAX_POOL_ROWS);
    let data = generate_uniform_sphere(seed, pool_rows + 1, d);
    let x = select_x(d);
    let cfg = EvpConfig::new(d, x).unwrap();

    match kernel {
        BenchKernel::EuclideanF32 => {
            let query = data.row(pool_rows).to_vec();
            let run = |timed: bool| {
                let mut sum = 0.0f64;
                let mut idx = 0usize;
                let start = timed.then(Instant::now);
                for _ in 0..comparisons {
                    sum += euclidean_sq_f32(&query, data.row(idx)) as f64;
                    idx += 1;
                    if idx == pool_rows {
                        idx = 0;
                    }
                }
                (elapsed_ms(start), black_box(sum).to_bits())
            };
            finish(kernel, d, comparisons, trials, run)
        }
        BenchKernel::B2sp => {
            let quant = QuantizerConfig::Evp(cfg);
            let CodeCollection::Ternary(codes) = quant.encode_dataset(&data).unwrap() else {
                unreachable!()
            };
            let query = bitcode::pack(&evp_quantize(data.row(pool_rows), &cfg).unwrap());
            let run = |timed: bool| {
                let mut sum = 0i64;
                let mut idx = 0usize;
                let start = timed.then(Instant::now);
                for _ in 0..comparisons {
                    sum = sum.wrapping_add(codes.b2sp_with(idx, &query));
                    idx += 1;
                    if idx == pool_rows {
                        idx = 0;
                    }
                }
                (elapsed_ms(start), black_box(sum) as u64)
            };
            finish(kernel, d, comparisons, trials, run)
        }
        BenchKernel::Hamming => {
            let CodeCollection::Binary(codes) =
                QuantizerConfig::OneBit.encode_dataset(&data).unwrap()
            else {
                unreachable!()
            };
            let query = crate::quantize::one_bit_quantize(data.row(pool_rows));
            let run = |timed: bool| {
                let mut sum = 0u64;
                let mut idx = 0usize;
                let start = timed.then(Instant::now);
                for _ in 0..comparisons {
                    sum = sum.wrapping_add(codes.hamming_with(idx, &query) as u64);
                    idx += 1;
                    if idx == pool_rows {
                        idx = 0;
                    }
                }
                (elapsed_ms(start), black_box(sum))
            };
            finish(kernel, d, comparisons, trials, run)
        }
        BenchKernel::MaskedAdd => {
            let query = bitcode::pack(&evp_quantize(data.row(pool_rows), &cfg).unwrap());
            let run = |timed: bool| {
                let mut sum = 0.0f64;
                let mut idx = 0usize;
                let start = timed.then(Instant::now);
                for _ in 0..comparisons {
                    sum += bitcode::masked_add_sp(&query, data.row(idx));
                    idx += 1;
                    if idx == pool_rows {
                        idx = 0;
                    }
                }
                (elapsed_ms(start), black_box(sum).to_bits())
            };
            finish(kernel, d, comparisons, trials, run)
        }
    }
}

fn elapsed_ms(start: Option<Instant>) -> f64 {
    start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3)
}

fn finish(
    kernel: BenchKernel,
    d: usize,
    comparisons: usize,
    trials: usize,
    run: impl Fn(bool) -> (f64, u64),
) -> BenchReport {
    let (_, _) = run(false); // warm-up
    let (_, reference) = run(false); // untimed checksum
    let mut trial_ms = Vec::with_capacity(trials);
    let mut checksum = reference;
    for t in 0..trials {
        let (ms, sum) = run(true);
        assert_eq!(
            sum, reference,
            "trial {t} checksum diverged from the untimed pass"
        );
        trial_ms.push(ms);
        checksum = sum;
    }
    BenchReport::from_trials(kernel.to_string(), d, comparisons, trial_ms, checksum)
}

/// Paired end-to-end timings: the same exhaustive top-`k` queries scanned
/// once with exact float distances and once with the quantised kernel.
#[derive(Debug, Clone, Serialize)]
pub struct FullScanReport {
    pub euclidean: BenchReport,
    pub proxy: BenchReport,
    /// euclidean mean time over proxy mean time
    pub speedup: f64,
}

/// Times `query_count` exhaustive top-30 scans over the whole dataset, in
/// both the float space and the packed-code space. Queries are the first
/// rows of the dataset; codes are built before timing starts.
pub fn bench_full_scan(
    data: &Dataset,
    query_count: usize,
    quantizer: &QuantizerConfig,
    trials: usize,
) -> Result<FullScanReport> {
    const K: usize = 30;
    if query_count == 0 || query_count > data.len() {
        return Err(Error::InvalidConfig(format!(
            "query count {query_count} out of range for {} rows",
            data.len()
        )));
    }
    let codes = quantizer.encode_dataset(data)?;
    let query_codes: Vec<PackedCode> = (0..query_count)
        .map(|i| quantizer.encode(data.row(i)))
        .collect::<Result<_>>()?;
    let comparisons = query_count * data.len();

    let run_euclid = |timed: bool| {
        let mut sum = 0.0f64;
        let start = timed.then(Instant::now);
        for qi in 0..query_count {
            let q = data.row(qi);
            let list = crate::search::exact_knn(data, q, K);
            sum += list.entries.iter().map(|e| e.score).sum::<f64>();
        }
        (elapsed_ms(start), black_box(sum).to_bits())
    };
    let run_proxy = |timed: bool| {
        let mut sum = 0.0f64;
        let start = timed.then(Instant::now);
        for q in &query_codes {
            let list = crate::search::proxy_knn(&codes, q, K).expect("validated above");
            sum += list.entries.iter().map(|e| e.score).sum::<f64>();
        }
        (elapsed_ms(start), black_box(sum).to_bits())
    };

    let euclidean = finish(
        BenchKernel::EuclideanF32,
        data.d(),
        comparisons,
        trials,
        run_euclid,
    );
    let proxy_kernel = match codes {
        CodeCollection::Ternary(_) => BenchKernel::B2sp,
        CodeCollection::Binary(_) => BenchKernel::Hamming,
    };
    let proxy = finish(proxy_kernel, data.d(), comparisons, trials, run_proxy);
    let speedup = euclidean.mean_ms / proxy.mean_ms;
    Ok(FullScanReport {
        euclidean,
        proxy,
        speedup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_statistics_are_ordered() {
        for kernel in [
            BenchKernel::B2sp,
            BenchKernel::EuclideanF32,
            BenchKernel::Hamming,
            BenchKernel::MaskedAdd,
        ] {
            let r = bench_kernel(kernel, 64, 2000, 3, 1);
            assert!(r.fastest_ms <= r.median_ms, "{kernel}");
            assert!(r.median_ms <= r.slowest_ms, "{kernel}");
            assert!(r.per_op_ns > 0.0);
            assert_eq!(r.trials, 3);
        }
    }

    #[test]
    fn full_scan_produces_speedup_ratio() {
        let data = generate_uniform_sphere(2, 1000, 100);
        let quant = QuantizerConfig::Evp(EvpConfig::with_default_x(100).unwrap());
        let report = bench_full_scan(&data, 5, &quant, 2).unwrap();
        assert!(report.speedup > 1.0, "speedup {}", report.speedup);
        assert_eq!(report.euclidean.comparisons, 5000);
    }

    #[test]
    fn kernel_names_parse() {
        for (s, k) in [
            ("b2sp", BenchKernel::B2sp),
            ("euclidean-f32", BenchKernel::EuclideanF32),
            ("hamming", BenchKernel::Hamming),
            ("masked-add", BenchKernel::MaskedAdd),
        ] {
            assert_eq!(s.parse::<BenchKernel>().unwrap(), k);
        }
        assert!("bogus".parse::<BenchKernel>().is_err());
    }
}
