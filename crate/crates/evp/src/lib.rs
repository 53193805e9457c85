//! Ternary vertex codes for high-dimensional embedding search.
//!
//! Unit-length embedding vectors are mapped to the nearest vertex of an
//! `{x,d}` polytope: the ternary vector over `{-1, 0, +1}` with exactly `x`
//! nonzero entries that maximises the scalar product with the input. Each
//! code packs into two bit planes, and the scalar product between two codes
//! reduces to four AND+popcount passes (`b2sp`), giving a distance proxy
//! that is both 16x smaller than 32-bit floats and far cheaper to evaluate.
//!
//! The crate bundles:
//!
//! * [`vecstore`] - float datasets: file ingestion, normalisation,
//!   synthetic hypersphere generation, seeded random rotation;
//! * [`quantize`] - the vertex quantiser plus 1-bit and mean-scaled ternary
//!   baselines;
//! * [`bitcode`] - packed bit planes, the `bsp`/`b2sp`/Hamming/masked-add
//!   kernels, and the serialised code format;
//! * [`metrics`] - exact distances, Spearman rank correlation, pair
//!   sampling, isotonic regression;
//! * [`search`] - exhaustive exact and proxy kNN, reranking, k@n recall;
//! * [`bench`] - micro-benchmarks and end-to-end scan timings.

pub mod bench;
pub mod bitcode;
pub mod error;
pub mod metrics;
pub mod quantize;
pub mod search;
pub mod vecstore;

pub use error::{Error, Result};
