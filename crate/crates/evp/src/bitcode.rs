//! Packed bit-plane codes and the bitwise distance kernels.
//!
//! A ternary code over `{-1, 0, +1}` is stored as two bit planes: `plus` has
//! bit `i` set when element `i` is `+1`, `minus` has bit `i` set when element
//! `i` is `-1`. No bit may be set in both planes.
//!
//! # Bit layout
//!
//! Planes are `u64` word arrays. Element `i` lives in word `i / 64` at bit
//! offset `i % 64` (LSB first). On disk, words are written little-endian, so
//! element `i` occupies byte `i / 8`, bit `i % 8`. Every plane is padded to a
//! multiple of 256 bits and all pad bits are zero, which keeps the planes
//! friendly to wide registers and lets the kernels run over whole words
//! without masking.
//!
//! The scalar product of two ternary codes reduces to four AND+popcount
//! passes over the planes:
//!
//! ```text
//! b2sp(v, w) = (bsp(v+, w+) + bsp(v-, w-)) - (bsp(v+, w-) + bsp(v-, w+))
//! ```
//!
//! where `bsp` counts the set bits of the bitwise AND. Negating `b2sp` gives
//! a distance proxy (smaller = closer).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::quantize::TernaryVector;

/// Planes are padded to a multiple of this many bits.
pub const PLANE_ALIGN_BITS: usize = 256;

const WORDS_PER_LANE: usize = PLANE_ALIGN_BITS / 64;

/// Number of `u64` words in one plane holding `d` logical bits.
pub fn plane_words(d: usize) -> usize {
    d.div_ceil(PLANE_ALIGN_BITS) * WORDS_PER_LANE
}

/// Physical plane length in bits for logical dimension `d`.
pub fn padded_bits(d: usize) -> usize {
    plane_words(d) * 64
}

/// A ternary code packed into a plus plane and a minus plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedTernary {
    plus: Vec<u64>,
    minus: Vec<u64>,
    d: usize,
}

impl PackedTernary {
    /// Builds a packed code from raw planes, validating the invariants:
    /// correct plane length, no overlapping bit, zero pad bits.
    pub fn from_planes(plus: Vec<u64>, minus: Vec<u64>, d: usize) -> Result<Self> {
        let words = plane_words(d);
        if plus.len() != words || minus.len() != words {
            return Err(Error::Corrupt(format!(
                "plane length {}/{} does not match {} words for d={}",
                plus.len(),
                minus.len(),
                words,
                d
            )));
        }
        for (w, (&p, &m)) in plus.iter().zip(minus.iter()).enumerate() {
            if p & m != 0 {
                return Err(Error::Corrupt(format!(
                    "overlapping bit planes in word {w}: a position is both +1 and -1"
                )));
            }
            if (p | m) & !tail_mask(d, w) != 0 {
                return Err(Error::Corrupt(format!("nonzero pad bits in word {w}")));
            }
        }
        Ok(Self { plus, minus, d })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn padded_bits(&self) -> usize {
        self.plus.len() * 64
    }

    pub fn plus(&self) -> &[u64] {
        &self.plus
    }

    pub fn minus(&self) -> &[u64] {
        &self.minus
    }

    /// Number of nonzero elements in the code.
    pub fn nonzeros(&self) -> u32 {
        popcount(&self.plus) + popcount(&self.minus)
    }
}

/// A binary code (one bit per dimension) packed into a single plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBinary {
    bits: Vec<u64>,
    d: usize,
}

impl PackedBinary {
    /// Builds a binary code from per-dimension bits.
    pub fn from_bits(bits: impl IntoIterator<Item = bool>, d: usize) -> Self {
        let mut plane = vec![0u64; plane_words(d)];
        let mut n = 0usize;
        for (i, b) in bits.into_iter().enumerate() {
            if b {
                plane[i / 64] |= 1 << (i % 64);
            }
            n = i + 1;
        }
        assert_eq!(n, d, "bit count does not match dimension");
        Self { bits: plane, d }
    }

    pub(crate) fn from_plane(bits: Vec<u64>, d: usize) -> Result<Self> {
        let words = plane_words(d);
        if bits.len() != words {
            return Err(Error::Corrupt(format!(
                "plane length {} does not match {words} words for d={d}",
                bits.len()
            )));
        }
        for (w, &p) in bits.iter().enumerate() {
            if p & !tail_mask(d, w) != 0 {
                return Err(Error::Corrupt(format!("nonzero pad bits in word {w}")));
            }
        }
        Ok(Self { bits, d })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn padded_bits(&self) -> usize {
        self.bits.len() * 64
    }

    pub fn bits(&self) -> &[u64] {
        &self.bits
    }

    /// Value of the logical bit at position `i`.
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.d);
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }
}

/// Mask of valid (non-pad) bits for word `w` of a plane with `d` logical bits.
fn tail_mask(d: usize, w: usize) -> u64 {
    let lo = w * 64;
    if d >= lo + 64 {
        !0
    } else if d <= lo {
        0
    } else {
        (1u64 << (d - lo)) - 1
    }
}

/// Packs a ternary vector into its two bit planes.
pub fn pack(v: &TernaryVector) -> PackedTernary {
    let d = v.len();
    let words = plane_words(d);
    let mut plus = vec![0u64; words];
    let mut minus = vec![0u64; words];
    for (i, &e) in v.elems().iter().enumerate() {
        match e {
            1 => plus[i / 64] |= 1 << (i % 64),
            -1 => minus[i / 64] |= 1 << (i % 64),
            _ => {}
        }
    }
    PackedTernary { plus, minus, d }
}

/// Recovers the ternary vector from a packed code.
///
/// Fails if the planes overlap, which can only happen with corrupted data;
/// codes produced by [`pack`] always round-trip.
pub fn unpack(p: &PackedTernary) -> Result<TernaryVector> {
    let mut elems = Vec::with_capacity(p.d);
    for i in 0..p.d {
        let plus = p.plus[i / 64] >> (i % 64) & 1;
        let minus = p.minus[i / 64] >> (i % 64) & 1;
        elems.push(match (plus, minus) {
            (1, 1) => {
                return Err(Error::Corrupt(format!(
                    "overlapping bit planes at position {i}"
                )))
            }
            (1, 0) => 1,
            (0, 1) => -1,
            _ => 0,
        });
    }
    Ok(TernaryVector::new(elems))
}

/// Bitwise scalar product of two bit planes: the population count of their
/// AND.
///
/// Panics if the planes have different lengths.
#[inline]
pub fn bsp(a: &[u64], b: &[u64]) -> u32 {
    assert_eq!(a.len(), b.len(), "bit plane length mismatch");
    let mut n = 0u32;
    for i in 0..a.len() {
        n += (a[i] & b[i]).count_ones();
    }
    n
}

/// Population count over a plane.
#[inline]
pub fn popcount(plane: &[u64]) -> u32 {
    plane.iter().map(|w| w.count_ones()).sum()
}

/// Portable software population count (SWAR), used to cross-check the
/// platform popcount instruction that `u64::count_ones` compiles to.
pub fn popcount_portable(mut x: u64) -> u32 {
    x -= (x >> 1) & 0x5555_5555_5555_5555;
    x = (x & 0x3333_3333_3333_3333) + ((x >> 2) & 0x3333_3333_3333_3333);
    x = (x + (x >> 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    (x.wrapping_mul(0x0101_0101_0101_0101) >> 56) as u32
}

/// Scalar product of two ternary codes computed entirely on their bit
/// planes. Equals the integer dot product of the unpacked vectors; the
/// distance proxy is the negation.
///
/// Panics if the codes have different dimensions.
#[inline]
pub fn b2sp(v: &PackedTernary, w: &PackedTernary) -> i64 {
    assert_eq!(v.d, w.d, "dimension mismatch");
    b2sp_planes(&v.plus, &v.minus, &w.plus, &w.minus)
}

/// `b2sp` over raw planes; one fused pass computes all four AND+popcount
/// terms.
#[inline]
pub fn b2sp_planes(vp: &[u64], vm: &[u64], wp: &[u64], wm: &[u64]) -> i64 {
    debug_assert!(vp.len() == vm.len() && wp.len() == wm.len() && vp.len() == wp.len());
    let mut same = 0u32;
    let mut diff = 0u32;
    for i in 0..vp.len() {
        same += (vp[i] & wp[i]).count_ones() + (vm[i] & wm[i]).count_ones();
        diff += (vp[i] & wm[i]).count_ones() + (vm[i] & wp[i]).count_ones();
    }
    same as i64 - diff as i64
}

/// Hamming distance between two binary codes: popcount of the XOR over the
/// logical bits. Pad bits are zero in both operands so whole words can be
/// XORed without masking.
///
/// Panics if the codes have different dimensions.
#[inline]
pub fn hamming(a: &PackedBinary, b: &PackedBinary) -> u32 {
    assert_eq!(a.d, b.d, "dimension mismatch");
    hamming_planes(&a.bits, &b.bits)
}

/// Hamming distance over raw planes.
#[inline]
pub fn hamming_planes(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    let mut n = 0u32;
    for i in 0..a.len() {
        n += (a[i] ^ b[i]).count_ones();
    }
    n
}

/// Mixed product of a ternary code with a float vector: adds `w[i]` where
/// the plus plane is set and subtracts it where the minus plane is set.
/// Equals the scalar product of the unpacked code with `w`.
///
/// Panics if `w.len()` differs from the code dimension.
pub fn masked_add_sp(v: &PackedTernary, w: &[f32]) -> f64 {
    assert_eq!(v.d, w.len(), "dimension mismatch");
    masked_add_planes(&v.plus, &v.minus, w)
}

#[inline]
pub(crate) fn masked_add_planes(plus: &[u64], minus: &[u64], w: &[f32]) -> f64 {
    let mut sum = 0.0f64;
    for (wi, (&p, &m)) in plus.iter().zip(minus.iter()).enumerate() {
        let base = wi * 64;
        let mut bits = p;
        while bits != 0 {
            sum += w[base + bits.trailing_zeros() as usize] as f64;
            bits &= bits - 1;
        }
        let mut bits = m;
        while bits != 0 {
            sum -= w[base + bits.trailing_zeros() as usize] as f64;
            bits &= bits - 1;
        }
    }
    sum
}

/// Plain integer dot product of two ternary vectors, element by element.
///
/// This is the reference the bit-plane path is checked against; it must stay
/// a naive loop, independent of any packing.
pub fn ternary_dot_reference(a: &TernaryVector, b: &TernaryVector) -> i64 {
    assert_eq!(a.len(), b.len(), "dimension mismatch");
    let mut sum = 0i64;
    for i in 0..a.len() {
        sum += a.elems()[i] as i64 * b.elems()[i] as i64;
    }
    sum
}

/// A column of packed ternary codes stored contiguously in scan order.
///
/// Each row occupies `2 * plane_words(d)` words: the plus plane followed by
/// the minus plane, mirroring the on-disk layout.
#[derive(Debug, Clone)]
pub struct TernaryCodes {
    d: usize,
    /// Fixed nonzero budget of the codes, or 0 when the quantiser does not
    /// fix one (mean-scaled ternary codes).
    x: u32,
    words_per_plane: usize,
    words: Vec<u64>,
}

impl TernaryCodes {
    pub fn new(d: usize, x: u32) -> Self {
        Self {
            d,
            x,
            words_per_plane: plane_words(d),
            words: Vec::new(),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn x(&self) -> u32 {
        self.x
    }

    pub fn len(&self) -> usize {
        if self.words_per_plane == 0 {
            0
        } else {
            self.words.len() / (2 * self.words_per_plane)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, code: &PackedTernary) {
        assert_eq!(code.d, self.d, "dimension mismatch");
        self.words.extend_from_slice(&code.plus);
        self.words.extend_from_slice(&code.minus);
    }

    /// The plus and minus planes of row `i`.
    pub fn row_planes(&self, i: usize) -> (&[u64], &[u64]) {
        let stride = 2 * self.words_per_plane;
        let start = i * stride;
        (
            &self.words[start..start + self.words_per_plane],
            &self.words[start + self.words_per_plane..start + stride],
        )
    }

    pub fn row(&self, i: usize) -> PackedTernary {
        let (p, m) = self.row_planes(i);
        PackedTernary {
            plus: p.to_vec(),
            minus: m.to_vec(),
            d: self.d,
        }
    }

    /// Ternary scalar product of row `i` against a query code.
    #[inline]
    pub fn b2sp_with(&self, i: usize, q: &PackedTernary) -> i64 {
        debug_assert_eq!(q.d, self.d);
        let (p, m) = self.row_planes(i);
        b2sp_planes(p, m, &q.plus, &q.minus)
    }

    /// Ternary scalar product between rows `i` and `j`.
    pub fn b2sp_rows(&self, i: usize, j: usize) -> i64 {
        let (pi, mi) = self.row_planes(i);
        let (pj, mj) = self.row_planes(j);
        b2sp_planes(pi, mi, pj, mj)
    }

    /// Serialises the collection.
    ///
    /// Layout: magic `EVPB`, version `u8` (1), `d` as `u32` LE, `x` as `u32`
    /// LE (0 when no fixed budget), row count as `u64` LE, then per row the
    /// plus plane and the minus plane, each `padded_bits / 8` bytes of
    /// little-endian `u64` words.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"EVPB")?;
        w.write_all(&[1u8])?;
        w.write_all(&(self.d as u32).to_le_bytes())?;
        w.write_all(&self.x.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for word in &self.words {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Reads a collection back, validating the header and every row's plane
    /// invariants (no overlap, clean pad bits).
    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"EVPB" {
            return Err(Error::Corrupt("bad magic, expected EVPB".into()));
        }
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        if byte[0] != 1 {
            return Err(Error::Corrupt(format!("unsupported version {}", byte[0])));
        }
        let d = read_u32(r)? as usize;
        let x = read_u32(r)?;
        let rows = read_u64(r)? as usize;
        if d == 0 {
            return Err(Error::Corrupt("zero dimension".into()));
        }
        if x as usize > d {
            return Err(Error::Corrupt(format!("x={x} exceeds d={d}")));
        }
        let wpp = plane_words(d);
        let mut words = vec![0u64; rows * 2 * wpp];
        let mut buf = [0u8; 8];
        for word in words.iter_mut() {
            r.read_exact(&mut buf)?;
            *word = u64::from_le_bytes(buf);
        }
        let codes = Self {
            d,
            x,
            words_per_plane: wpp,
            words,
        };
        for i in 0..rows {
            let (p, m) = codes.row_planes(i);
            for w in 0..wpp {
                if p[w] & m[w] != 0 {
                    return Err(Error::Corrupt(format!(
                        "overlapping bit planes in row {i}, word {w}"
                    )));
                }
                if (p[w] | m[w]) & !tail_mask(d, w) != 0 {
                    return Err(Error::Corrupt(format!(
                        "nonzero pad bits in row {i}, word {w}"
                    )));
                }
            }
        }
        Ok(codes)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// A column of packed binary codes stored contiguously in scan order.
#[derive(Debug, Clone)]
pub struct BinaryCodes {
    d: usize,
    words_per_plane: usize,
    words: Vec<u64>,
}

impl BinaryCodes {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            words_per_plane: plane_words(d),
            words: Vec::new(),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        if self.words_per_plane == 0 {
            0
        } else {
            self.words.len() / self.words_per_plane
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, code: &PackedBinary) {
        assert_eq!(code.d, self.d, "dimension mismatch");
        self.words.extend_from_slice(&code.bits);
    }

    pub fn row_plane(&self, i: usize) -> &[u64] {
        let start = i * self.words_per_plane;
        &self.words[start..start + self.words_per_plane]
    }

    pub fn row(&self, i: usize) -> PackedBinary {
        PackedBinary {
            bits: self.row_plane(i).to_vec(),
            d: self.d,
        }
    }

    #[inline]
    pub fn hamming_with(&self, i: usize, q: &PackedBinary) -> u32 {
        debug_assert_eq!(q.d, self.d);
        hamming_planes(self.row_plane(i), &q.bits)
    }

    pub fn hamming_rows(&self, i: usize, j: usize) -> u32 {
        hamming_planes(self.row_plane(i), self.row_plane(j))
    }

    /// Serialises the collection. Same layout as the ternary format but with
    /// magic `EVP1`, no `x` field, and a single plane per row.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"EVP1")?;
        w.write_all(&[1u8])?;
        w.write_all(&(self.d as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for word in &self.words {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"EVP1" {
            return Err(Error::Corrupt("bad magic, expected EVP1".into()));
        }
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        if byte[0] != 1 {
            return Err(Error::Corrupt(format!("unsupported version {}", byte[0])));
        }
        let d = read_u32(r)? as usize;
        let rows = read_u64(r)? as usize;
        if d == 0 {
            return Err(Error::Corrupt("zero dimension".into()));
        }
        let wpp = plane_words(d);
        let mut words = vec![0u64; rows * wpp];
        let mut buf = [0u8; 8];
        for word in words.iter_mut() {
            r.read_exact(&mut buf)?;
            *word = u64::from_le_bytes(buf);
        }
        for i in 0..rows {
            for w in 0..wpp {
                if words[i * wpp + w] & !tail_mask(d, w) != 0 {
                    return Err(Error::Corrupt(format!(
                        "nonzero pad bits in row {i}, word {w}"
                    )));
                }
            }
        }
        Ok(Self {
            d,
            words_per_plane: wpp,
            words,
        })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// A packed code collection of either kind.
#[derive(Debug, Clone)]
pub enum CodeCollection {
    Ternary(TernaryCodes),
    Binary(BinaryCodes),
}

impl CodeCollection {
    pub fn len(&self) -> usize {
        match self {
            CodeCollection::Ternary(c) => c.len(),
            CodeCollection::Binary(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d(&self) -> usize {
        match self {
            CodeCollection::Ternary(c) => c.d(),
            CodeCollection::Binary(c) => c.d(),
        }
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        match self {
            CodeCollection::Ternary(c) => c.write_file(path),
            CodeCollection::Binary(c) => c.write_file(path),
        }
    }
}

/// A single packed code of either kind, used as a query operand.
#[derive(Debug, Clone)]
pub enum PackedCode {
    Ternary(PackedTernary),
    Binary(PackedBinary),
}

impl PackedCode {
    pub fn d(&self) -> usize {
        match self {
            PackedCode::Ternary(c) => c.d(),
            PackedCode::Binary(c) => c.d(),
        }
    }
}
