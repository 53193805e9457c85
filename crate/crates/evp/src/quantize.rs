//! Quantisers mapping float vectors to compact codes.
//!
//! Three quantisers are provided:
//!
//! * **Vertex codes** ([`evp_quantize`]): the nearest vertex of the `{x,d}`
//!   polytope whose vertices are all ternary vectors with exactly `x`
//!   nonzero elements. The nearest vertex to `u` is the one maximising the
//!   scalar product with `u`, and it is found directly: keep the sign of the
//!   `x` largest-magnitude coordinates, zero the rest.
//! * **1-bit sign codes** ([`one_bit_quantize`]): bit `i` set iff `u[i] > 0`,
//!   compared under Hamming distance. Equivalent to the `{d,d}` vertex
//!   mapping up to the sign convention.
//! * **Mean-scaled ternary codes** ([`b158_quantize`]): each element is
//!   `u[i] / (gamma + epsilon)` rounded half away from zero and clamped to
//!   `[-1, 1]`, where `gamma` is the mean absolute value of the vector.
//!   `gamma` is computed per vector here, the natural per-embedding analogue
//!   of the per-matrix scale the scheme was introduced with.

use serde::Serialize;

use crate::bitcode::{self, BinaryCodes, CodeCollection, PackedBinary, PackedCode, TernaryCodes};
use crate::error::{Error, Result};
use crate::vecstore::Dataset;

use rayon::prelude::*;

/// A logical vector over `{-1, 0, +1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TernaryVector {
    elems: Vec<i8>,
}

impl TernaryVector {
    /// Wraps the given elements; panics if any element is outside
    /// `{-1, 0, 1}`.
    pub fn new(elems: Vec<i8>) -> Self {
        assert!(
            elems.iter().all(|&e| (-1..=1).contains(&e)),
            "ternary elements must be -1, 0 or 1"
        );
        Self { elems }
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn elems(&self) -> &[i8] {
        &self.elems
    }

    pub fn nonzeros(&self) -> usize {
        self.elems.iter().filter(|&&e| e != 0).count()
    }
}

/// Parameters of an `{x,d}` vertex code: dimension and nonzero budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EvpConfig {
    pub d: usize,
    pub x: usize,
}

impl EvpConfig {
    pub fn new(d: usize, x: usize) -> Result<Self> {
        if d == 0 || x == 0 || x > d {
            return Err(Error::InvalidConfig(format!(
                "nonzero budget must satisfy 1 <= x <= d, got x={x}, d={d}"
            )));
        }
        Ok(Self { d, x })
    }

    /// Config with the vertex-count-maximising budget `x = round(2d/3)`.
    pub fn with_default_x(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidConfig(format!(
                "dimension must be at least 2, got {d}"
            )));
        }
        Self::new(d, select_x(d))
    }
}

/// Parameters of the mean-scaled ternary quantiser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct B158Config {
    /// Small positive value added to the mean absolute value before
    /// dividing, so all-zero vectors quantise to all-zero codes.
    pub epsilon: f64,
}

impl B158Config {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }
}

impl Default for B158Config {
    fn default() -> Self {
        Self { epsilon: 1e-6 }
    }
}

/// The nonzero budget maximising the vertex count `C(d,x) * 2^x`:
/// `2d/3` rounded to the nearest integer, ties upward.
pub fn select_x(d: usize) -> usize {
    assert!(d >= 2, "dimension must be at least 2");
    (2 * d + 1) / 3
}

/// Maps `u` to its nearest `{x,d}` vertex.
///
/// The `x` positions of largest magnitude keep their sign as `+1`/`-1`; all
/// other positions become `0`. A coordinate that is exactly zero maps to `0`
/// even when selected, so such codes carry fewer than `x` nonzeros. Ties in
/// magnitude are broken toward the lower index, which keeps the mapping
/// deterministic.
pub fn evp_quantize(u: &[f32], cfg: &EvpConfig) -> Result<TernaryVector> {
    if u.len() != cfg.d {
        return Err(Error::DimensionMismatch {
            expected: cfg.d,
            actual: u.len(),
        });
    }
    let mut idx: Vec<u32> = (0..cfg.d as u32).collect();
    let top = cfg.x.min(cfg.d);
    // order: magnitude descending, index ascending
    let by_magnitude = |&a: &u32, &b: &u32| {
        u[b as usize]
            .abs()
            .total_cmp(&u[a as usize].abs())
            .then(a.cmp(&b))
    };
    if top < cfg.d {
        idx.select_nth_unstable_by(top - 1, by_magnitude);
    }
    let mut elems = vec![0i8; cfg.d];
    for &i in &idx[..top] {
        let v = u[i as usize];
        elems[i as usize] = if v > 0.0 {
            1
        } else if v < 0.0 {
            -1
        } else {
            0
        };
    }
    Ok(TernaryVector { elems })
}

/// Sign-quantises `u`: bit `i` is set iff `u[i] > 0`.
pub fn one_bit_quantize(u: &[f32]) -> PackedBinary {
    assert!(!u.is_empty(), "cannot quantise an empty vector");
    PackedBinary::from_bits(u.iter().map(|&v| v > 0.0), u.len())
}

/// Mean-scaled ternary quantisation of `u`.
pub fn b158_quantize(u: &[f32], cfg: &B158Config) -> TernaryVector {
    assert!(!u.is_empty(), "cannot quantise an empty vector");
    let gamma: f64 = u.iter().map(|&v| (v as f64).abs()).sum::<f64>() / u.len() as f64;
    let scale = gamma + cfg.epsilon;
    let elems = u
        .iter()
        .map(|&v| (v as f64 / scale).round().clamp(-1.0, 1.0) as i8)
        .collect();
    TernaryVector { elems }
}

/// Base-10 logarithm of the `{x,d}` vertex count `C(d,x) * 2^x`, computed
/// through the log-gamma function so huge counts never overflow.
pub fn log10_vertex_count(cfg: &EvpConfig) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let (d, x) = (cfg.d as f64, cfg.x as f64);
    let ln_binomial = ln_gamma(d + 1.0) - ln_gamma(x + 1.0) - ln_gamma(d - x + 1.0);
    ln_binomial / std::f64::consts::LN_10 + x * std::f64::consts::LOG10_2
}

/// Which quantiser a code collection was produced by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantizerKind {
    Evp,
    OneBit,
    B158,
}

impl QuantizerKind {
    pub fn label(&self) -> &'static str {
        match self {
            QuantizerKind::Evp => "evp",
            QuantizerKind::OneBit => "one-bit",
            QuantizerKind::B158 => "b158",
        }
    }
}

impl std::fmt::Display for QuantizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for QuantizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "evp" => Ok(QuantizerKind::Evp),
            "one-bit" | "onebit" | "1-bit" => Ok(QuantizerKind::OneBit),
            "b158" | "b1.58" => Ok(QuantizerKind::B158),
            other => Err(Error::InvalidConfig(format!(
                "unknown quantizer '{other}', expected evp, one-bit or b158"
            ))),
        }
    }
}

/// A fully-parameterised quantiser, ready to encode vectors or datasets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantizerConfig {
    Evp(EvpConfig),
    OneBit,
    B158(B158Config),
}

impl QuantizerConfig {
    pub fn kind(&self) -> QuantizerKind {
        match self {
            QuantizerConfig::Evp(_) => QuantizerKind::Evp,
            QuantizerConfig::OneBit => QuantizerKind::OneBit,
            QuantizerConfig::B158(_) => QuantizerKind::B158,
        }
    }

    /// Encodes a single vector into its packed form.
    pub fn encode(&self, u: &[f32]) -> Result<PackedCode> {
        Ok(match self {
            QuantizerConfig::Evp(cfg) => PackedCode::Ternary(bitcode::pack(&evp_quantize(u, cfg)?)),
            QuantizerConfig::OneBit => PackedCode::Binary(one_bit_quantize(u)),
            QuantizerConfig::B158(cfg) => PackedCode::Ternary(bitcode::pack(&b158_quantize(u, cfg))),
        })
    }

    /// Encodes every row of a dataset, in row order. Rows are quantised in
    /// parallel; the output ordering is deterministic.
    pub fn encode_dataset(&self, data: &Dataset) -> Result<CodeCollection> {
        let d = data.d();
        match self {
            QuantizerConfig::Evp(cfg) => {
                if cfg.d != d {
                    return Err(Error::DimensionMismatch {
                        expected: cfg.d,
                        actual: d,
                    });
                }
                let packed: Vec<_> = (0..data.len())
                    .into_par_iter()
                    .map(|i| evp_quantize(data.row(i), cfg).map(|v| bitcode::pack(&v)))
                    .collect::<Result<_>>()?;
                let mut codes = TernaryCodes::new(d, cfg.x as u32);
                for p in &packed {
                    codes.push(p);
                }
                Ok(CodeCollection::Ternary(codes))
            }
            QuantizerConfig::OneBit => {
                let packed: Vec<_> = (0..data.len())
                    .into_par_iter()
                    .map(|i| one_bit_quantize(data.row(i)))
                    .collect();
                let mut codes = BinaryCodes::new(d);
                for p in &packed {
                    codes.push(p);
                }
                Ok(CodeCollection::Binary(codes))
            }
            QuantizerConfig::B158(cfg) => {
                let packed: Vec<_> = (0..data.len())
                    .into_par_iter()
                    .map(|i| bitcode::pack(&b158_quantize(data.row(i), cfg)))
                    .collect();
                let mut codes = TernaryCodes::new(d, 0);
                for p in &packed {
                    codes.push(p);
                }
                Ok(CodeCollection::Ternary(codes))
            }
        }
    }
}
