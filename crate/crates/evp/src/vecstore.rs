//! Float-vector datasets: ingestion, normalisation, synthetic generation,
//! and seeded random rotation.
//!
//! Vectors are stored as 32-bit floats in one contiguous row-major buffer.
//! Row index is the datum identity used by search results, so row order is
//! kept stable through every operation.
//!
//! All randomness is drawn from a ChaCha12 generator seeded explicitly;
//! normal variates use the ziggurat sampler from `rand_distr`. The same
//! seed therefore reproduces the same dataset bytes on every run of a given
//! build.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// An immutable collection of same-dimension float vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    d: usize,
    data: Vec<f32>,
}

impl Dataset {
    /// Wraps a flat row-major buffer. The buffer length must be a multiple
    /// of `d` and every element must be finite.
    pub fn new(name: impl Into<String>, d: usize, data: Vec<f32>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        if data.len() % d != 0 {
            return Err(Error::InvalidConfig(format!(
                "buffer of {} floats is not a multiple of d={d}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "non-finite element at flat index {i}"
            )));
        }
        Ok(Self {
            name: name.into(),
            d,
            data,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of rows.
    pub fn len(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.d)
    }

    /// The contiguous row-major buffer.
    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    /// Normalises every row to unit length in place.
    pub fn l2_normalize_all(&mut self) -> Result<()> {
        for row in self.data.chunks_exact_mut(self.d) {
            normalize_in_place(row)?;
        }
        Ok(())
    }
}

fn normalize_in_place(v: &mut [f32]) -> Result<()> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return Err(Error::ZeroVector);
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / norm) as f32;
    }
    Ok(())
}

/// Returns `v / ||v||`, preserving direction.
pub fn l2_normalize(v: &[f32]) -> Result<Vec<f32>> {
    let mut out = v.to_vec();
    normalize_in_place(&mut out)?;
    Ok(out)
}

/// Generates `n` unit vectors uniformly distributed on the `d`-sphere:
/// each row is `d` independent standard normals, normalised.
pub fn generate_uniform_sphere(seed: u64, n: usize, d: usize) -> Dataset {
    assert!(n >= 1 && d >= 1, "need n >= 1 and d >= 1");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * d);
    let mut row = vec![0.0f64; d];
    for _ in 0..n {
        loop {
            let mut norm_sq = 0.0f64;
            for r in row.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *r = z;
                norm_sq += z * z;
            }
            // an all-zero draw has probability zero but would not normalise
            if norm_sq > 0.0 {
                let inv = 1.0 / norm_sq.sqrt();
                data.extend(row.iter().map(|&z| (z * inv) as f32));
                break;
            }
        }
    }
    Dataset {
        name: format!("uniform-d{d}-n{n}-seed{seed}"),
        d,
        data,
    }
}

/// A seeded random orthonormal matrix.
///
/// Built by QR-factorising a matrix of independent standard normals and
/// fixing the signs so the factor is uniquely determined (and Haar
/// distributed). Entries are kept in `f64`; applying the rotation
/// accumulates in `f64` and rounds once at the end.
#[derive(Debug, Clone)]
pub struct RotationMatrix {
    d: usize,
    seed: u64,
    /// row-major d*d entries
    entries: Vec<f64>,
}

impl RotationMatrix {
    pub fn new(seed: u64, d: usize) -> Self {
        assert!(d >= 1, "need d >= 1");
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let gaussian =
            DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = gaussian.qr();
        let r = qr.r();
        let mut q = qr.q();
        for j in 0..d {
            if r[(j, j)] < 0.0 {
                for i in 0..d {
                    q[(i, j)] = -q[(i, j)];
                }
            }
        }
        let mut entries = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                entries.push(q[(i, j)]);
            }
        }
        Self { d, seed, entries }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.d + j]
    }

    /// Largest absolute deviation of `Q * Q^T` from the identity.
    pub fn max_orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.d {
            for j in i..self.d {
                let mut dot = 0.0f64;
                for k in 0..self.d {
                    dot += self.entry(i, k) * self.entry(j, k);
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Applies the rotation to a single vector.
    pub fn apply(&self, v: &[f32]) -> Vec<f32> {
        assert_eq!(v.len(), self.d, "dimension mismatch");
        let mut out = Vec::with_capacity(self.d);
        for i in 0..self.d {
            let row = &self.entries[i * self.d..(i + 1) * self.d];
            let mut acc = 0.0f64;
            for (q, &x) in row.iter().zip(v.iter()) {
                acc += q * x as f64;
            }
            out.push(acc as f32);
        }
        out
    }

    /// Applies the rotation to every row of a dataset.
    pub fn apply_dataset(&self, data: &Dataset) -> Dataset {
        assert_eq!(data.d(), self.d, "dimension mismatch");
        let mut out = Vec::with_capacity(data.as_flat().len());
        for row in data.rows() {
            out.extend_from_slice(&self.apply(row));
        }
        Dataset {
            name: format!("{}-rot{}", data.name(), self.seed),
            d: self.d,
            data: out,
        }
    }
}

/// On-disk dataset encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// Per record: `i32` little-endian dimension, then that many `f32`
    /// little-endian values.
    Fvecs,
    /// Headerless little-endian `f32`, row-major; the dimension comes from
    /// the caller.
    RawF32,
    /// One row per line, comma-separated decimal floats.
    Csv,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fvecs" => Ok(DataFormat::Fvecs),
            "raw-f32" | "raw" | "f32" => Ok(DataFormat::RawF32),
            "csv" => Ok(DataFormat::Csv),
            other => Err(Error::InvalidConfig(format!(
                "unknown format '{other}', expected fvecs, raw-f32 or csv"
            ))),
        }
    }
}

/// Loads a dataset from `path`. `d` is the expected dimension; fvecs
/// records carry their own dimension header and must agree with it.
pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat, d: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let data = match format {
        DataFormat::RawF32 => load_raw_f32(path, d)?,
        DataFormat::Fvecs => load_fvecs(path, d)?,
        DataFormat::Csv => load_csv(path, d)?,
    };
    Dataset::new(name, d, data)
}

fn load_raw_f32(path: &Path, d: usize) -> Result<Vec<f32>> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    if len % (4 * d as u64) != 0 {
        return Err(Error::Parse {
            offset: len,
            reason: format!("file length {len} is not a multiple of 4*d = {}", 4 * d),
        });
    }
    let mut reader = BufReader::new(file);
    let mut bytes = Vec::with_capacity(len as usize);
    reader.read_to_end(&mut bytes)?;
    let mut data = Vec::with_capacity(bytes.len() / 4);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Parse {
                offset: (i * 4) as u64,
                reason: "non-finite float".into(),
            });
        }
        data.push(v);
    }
    Ok(data)
}

fn load_fvecs(path: &Path, d: usize) -> Result<Vec<f32>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut data = Vec::new();
    let mut offset = 0u64;
    let mut buf4 = [0u8; 4];
    loop {
        match reader.read_exact(&mut buf4) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let header = i32::from_le_bytes(buf4);
        if header as usize != d {
            return Err(Error::Parse {
                offset,
                reason: format!("record dimension {header} does not match declared d={d}"),
            });
        }
        offset += 4;
        for _ in 0..d {
            reader.read_exact(&mut buf4).map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    Error::Parse {
                        offset,
                        reason: "truncated record".into(),
                    }
                } else {
                    e.into()
                }
            })?;
            let v = f32::from_le_bytes(buf4);
            if !v.is_finite() {
                return Err(Error::Parse {
                    offset,
                    reason: "non-finite float".into(),
                });
            }
            data.push(v);
            offset += 4;
        }
    }
    Ok(data)
}

fn load_csv(path: &Path, d: usize) -> Result<Vec<f32>> {
    let reader = BufReader::new(File::open(path)?);
    let mut data = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d {
            return Err(Error::Parse {
                offset: (lineno + 1) as u64,
                reason: format!("line {}: {} fields, expected {d}", lineno + 1, fields.len()),
            });
        }
        for f in fields {
            let v: f32 = f.trim().parse().map_err(|_| Error::Parse {
                offset: (lineno + 1) as u64,
                reason: format!("line {}: invalid float '{}'", lineno + 1, f.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    offset: (lineno + 1) as u64,
                    reason: format!("line {}: non-finite float", lineno + 1),
                });
            }
            data.push(v);
        }
    }
    Ok(data)
}

/// Writes a dataset to `path` in the given format. Round-trips through
/// [`load_dataset`] are value-exact for the binary formats.
pub fn write_dataset(path: impl AsRef<Path>, format: DataFormat, data: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        DataFormat::RawF32 => {
            for &v in data.as_flat() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        DataFormat::Fvecs => {
            for row in data.rows() {
                w.write_all(&(data.d() as i32).to_le_bytes())?;
                for &v in row {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        DataFormat::Csv => {
            for row in data.rows() {
                let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                writeln!(w, "{}", line.join(","))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_normalize_345_triangle() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-7);
        assert!((v[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn l2_normalize_already_unit() {
        assert_eq!(l2_normalize(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        let v = l2_normalize(&[1.0, 1.0]).unwrap();
        let inv_sqrt2 = 1.0 / 2f32.sqrt();
        assert!((v[0] - inv_sqrt2).abs() < 1e-7);
        assert!((v[1] - inv_sqrt2).abs() < 1e-7);
    }

    #[test]
    fn l2_normalize_zero_vector_errors() {
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn generated_sphere_rows_are_unit() {
        let data = generate_uniform_sphere(7, 5, 100);
        for row in data.rows() {
            let norm: f64 = row.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_uniform_sphere(7, 5, 100);
        let b = generate_uniform_sphere(7, 5, 100);
        assert_eq!(a.as_flat(), b.as_flat());
        let c = generate_uniform_sphere(8, 5, 100);
        assert_ne!(a.as_flat(), c.as_flat());
    }

    #[test]
    fn rotation_is_orthonormal_and_deterministic() {
        let q = RotationMatrix::new(3, 8);
        assert!(q.max_orthonormality_error() <= 1e-6);
        let q2 = RotationMatrix::new(3, 8);
        assert_eq!(q.entries, q2.entries);
    }

    #[test]
    fn rotation_preserves_norms_and_distances() {
        let q = RotationMatrix::new(11, 16);
        let data = generate_uniform_sphere(5, 100, 16);
        for row in data.rows() {
            let r = q.apply(row);
            let norm: f64 = r.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-6);
        }
        for i in (0..100).step_by(7) {
            for j in (1..100).step_by(13) {
                let before = crate::metrics::euclidean(data.row(i), data.row(j));
                let after = crate::metrics::euclidean(&q.apply(data.row(i)), &q.apply(data.row(j)));
                assert!((before - after).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn raw_f32_round_trip_and_size_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.f32");
        let data = Dataset::new("t", 4, vec![1.0, 2.0, 3.0, 4.0, -1.0, -2.0, -3.0, -4.0]).unwrap();
        write_dataset(&path, DataFormat::RawF32, &data).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 32);
        let back = load_dataset(&path, DataFormat::RawF32, 4).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.as_flat(), data.as_flat());

        // length not a multiple of 4*d
        let err = load_dataset(&path, DataFormat::RawF32, 3).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn fvecs_round_trip_and_header_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.fvecs");
        let data = Dataset::new("t", 3, vec![0.5, -1.5, 2.5, 9.0, 8.0, 7.0]).unwrap();
        write_dataset(&path, DataFormat::Fvecs, &data).unwrap();
        let back = load_dataset(&path, DataFormat::Fvecs, 3).unwrap();
        assert_eq!(back.as_flat(), data.as_flat());

        let err = load_dataset(&path, DataFormat::Fvecs, 384).unwrap_err();
        match err {
            Error::Parse { offset, reason } => {
                assert_eq!(offset, 0);
                assert!(reason.contains("384"), "{reason}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let data = Dataset::new("t", 2, vec![0.25, -3.5, 1.0, 0.125]).unwrap();
        write_dataset(&path, DataFormat::Csv, &data).unwrap();
        let back = load_dataset(&path, DataFormat::Csv, 2).unwrap();
        assert_eq!(back.as_flat(), data.as_flat());

        std::fs::write(&path, "1.0,2.0\n3.0,oops\n").unwrap();
        let err = load_dataset(&path, DataFormat::Csv, 2).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}
