//! The PET binary tensor format.
//!
//! Little-endian throughout: 4-byte magic `PETB`, `u32` version (currently
//! 1), `u32` item, part and component counts, then `n * q * d` IEEE-754
//! 32-bit floats in `[item][part][component]` order.
//!
//! Embeddings are held in 64-bit precision in memory and stored in 32-bit
//! precision on disk. A tensor whose data is 32-bit representable round-trips
//! bit-exactly; one save/load round snaps any tensor onto that set. Rows
//! whose norm drifts beyond the in-memory tolerance (from files written at
//! lower precision) are re-normalized on load, up to a hard error at 1e-4.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use partcc_core::tensor::{PartEmbeddingTensor, UNIT_NORM_TOL};
use partcc_core::Matrix;

const MAGIC: [u8; 4] = *b"PETB";
const VERSION: u32 = 1;

/// Norm drift beyond which a stored embedding row is rejected instead of
/// silently re-normalized.
const RENORM_LIMIT: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum PetError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: bad magic {found:?} (expected \"PETB\")", path.display())]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{}: unsupported version {found} (expected {VERSION})", path.display())]
    UnsupportedVersion { path: PathBuf, found: u32 },
    #[error("{}: truncated payload: header declares {expected_floats} floats, file holds {found_bytes} payload bytes", path.display())]
    Truncated {
        path: PathBuf,
        expected_floats: usize,
        found_bytes: usize,
    },
    #[error("{}: header declares zero parts or components", path.display())]
    EmptyShape { path: PathBuf },
    #[error("{}: item {item}, part {part} has norm {norm}, beyond the re-normalization limit", path.display())]
    Normalization {
        path: PathBuf,
        item: usize,
        part: usize,
        norm: f64,
    },
}

/// What `read_embeddings` had to fix up.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Rows whose norm drift exceeded the in-memory tolerance and were
    /// re-normalized exactly.
    pub renormalized: usize,
}

fn io_err(path: &Path, source: io::Error) -> PetError {
    PetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn encode(n: usize, q: usize, d: usize, data: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(20 + data.len() * 4);
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(n as u32).to_le_bytes());
    bytes.extend_from_slice(&(q as u32).to_le_bytes());
    bytes.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    bytes
}

/// Write through a temp file and rename, so a failed write leaves nothing
/// partially usable behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PetError> {
    let tmp = path.with_extension("pet.tmp");
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(io_err(path, e));
    }
    Ok(())
}

/// Save a part-embedding tensor.
pub fn write_embeddings(path: &Path, tensor: &PartEmbeddingTensor) -> Result<(), PetError> {
    write_atomic(
        path,
        &encode(
            tensor.n_items(),
            tensor.n_parts(),
            tensor.dim(),
            tensor.data(),
        ),
    )
}

/// Save a plain matrix as a single-part tensor (used for raw features and
/// parameter blocks; no normalization is implied).
pub fn write_raw(path: &Path, matrix: &Matrix) -> Result<(), PetError> {
    write_atomic(
        path,
        &encode(matrix.rows(), 1, matrix.cols(), matrix.data()),
    )
}

struct Decoded {
    n: usize,
    q: usize,
    d: usize,
    data: Vec<f64>,
}

fn read_file(path: &Path) -> Result<Decoded, PetError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    decode(path, &bytes)
}

fn decode(path: &Path, bytes: &[u8]) -> Result<Decoded, PetError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(PetError::BadMagic {
            path: path.to_path_buf(),
            found,
        });
    }
    if bytes.len() < 20 {
        return Err(PetError::Truncated {
            path: path.to_path_buf(),
            expected_floats: 0,
            found_bytes: bytes.len().saturating_sub(4),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(PetError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let (n, q, d) = (word(8) as usize, word(12) as usize, word(16) as usize);
    if q == 0 || d == 0 {
        return Err(PetError::EmptyShape {
            path: path.to_path_buf(),
        });
    }
    let expected_floats = n * q * d;
    let payload = &bytes[20..];
    if payload.len() != expected_floats * 4 {
        return Err(PetError::Truncated {
            path: path.to_path_buf(),
            expected_floats,
            found_bytes: payload.len(),
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Decoded { n, q, d, data })
}

/// Load a part-embedding tensor, verifying the unit-norm invariant.
pub fn read_embeddings(path: &Path) -> Result<(PartEmbeddingTensor, LoadReport), PetError> {
    let Decoded { n, q, d, mut data } = read_file(path)?;
    let mut report = LoadReport::default();
    for item in 0..n {
        for part in 0..q {
            let off = (item * q + part) * d;
            let row = &mut data[off..off + d];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            let drift = (norm - 1.0).abs();
            if drift <= UNIT_NORM_TOL {
                continue;
            }
            if drift > RENORM_LIMIT || !norm.is_finite() {
                return Err(PetError::Normalization {
                    path: path.to_path_buf(),
                    item,
                    part,
                    norm,
                });
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
            report.renormalized += 1;
        }
    }
    let tensor = PartEmbeddingTensor::new(n, q, d, data).expect("validated on load");
    Ok((tensor, report))
}

/// Load any PET file as an `n x (q * d)` matrix, without norm checks.
pub fn read_raw(path: &Path) -> Result<Matrix, PetError> {
    let Decoded { n, q, d, data } = read_file(path)?;
    Ok(Matrix::from_vec(n, q * d, data).expect("shape from header"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use partcc_core::rng::Rng;

    fn tmpdir() -> PathBuf {
        let dir = std::env::temp_dir().join(format!("pet-test-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn random_tensor(seed: u64, n: usize, q: usize, d: usize) -> PartEmbeddingTensor {
        let mut rng = Rng::new(seed);
        let data: Vec<f64> = (0..n * q * d).map(|_| rng.next_gauss()).collect();
        PartEmbeddingTensor::from_unnormalized(n, q, d, data).unwrap()
    }

    #[test]
    fn file_bytes_stabilize_after_one_round_trip() {
        let dir = tmpdir();
        let path = dir.join("roundtrip.pet");
        let t = random_tensor(1, 4, 3, 2);
        write_embeddings(&path, &t).unwrap();
        let bytes1 = fs::read(&path).unwrap();
        let (t2, report) = read_embeddings(&path).unwrap();
        assert_eq!(report.renormalized, 0);
        write_embeddings(&path, &t2).unwrap();
        let bytes2 = fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
        let (t3, _) = read_embeddings(&path).unwrap();
        assert_eq!(t2, t3);
    }

    #[test]
    fn empty_tensor_round_trips() {
        let dir = tmpdir();
        let path = dir.join("empty.pet");
        let t = PartEmbeddingTensor::new(0, 6, 8, vec![]).unwrap();
        write_embeddings(&path, &t).unwrap();
        let (loaded, _) = read_embeddings(&path).unwrap();
        assert_eq!(loaded.n_items(), 0);
        assert_eq!(loaded.n_parts(), 6);
        assert_eq!(loaded.dim(), 8);
    }

    #[test]
    fn handcrafted_header_decodes() {
        let dir = tmpdir();
        let path = dir.join("handmade.pet");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"PETB");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        let unit = std::f32::consts::FRAC_1_SQRT_2;
        for _ in 0..4 {
            bytes.extend_from_slice(&unit.to_le_bytes());
            bytes.extend_from_slice(&unit.to_le_bytes());
        }
        fs::write(&path, &bytes).unwrap();
        let (t, _) = read_embeddings(&path).unwrap();
        assert_eq!((t.n_items(), t.n_parts(), t.dim()), (2, 2, 2));
    }

    #[test]
    fn bad_magic_is_detected() {
        let dir = tmpdir();
        let path = dir.join("bad_magic.pet");
        fs::write(&path, b"XXXXrest-of-file").unwrap();
        assert!(matches!(
            read_embeddings(&path),
            Err(PetError::BadMagic { found: [b'X', b'X', b'X', b'X'], .. })
        ));
    }

    #[test]
    fn unsupported_version_is_detected() {
        let dir = tmpdir();
        let path = dir.join("bad_version.pet");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"PETB");
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 12]);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_embeddings(&path),
            Err(PetError::UnsupportedVersion { found: 2, .. })
        ));
    }

    #[test]
    fn truncated_payload_is_detected() {
        let dir = tmpdir();
        let path = dir.join("truncated.pet");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"PETB");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&10u32.to_le_bytes()); // declares 10 items
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        // Only 5 items of payload.
        bytes.extend(std::iter::repeat(0u8).take(5 * 2 * 2 * 4));
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_embeddings(&path),
            Err(PetError::Truncated { expected_floats: 40, found_bytes: 80, .. })
        ));
    }

    #[test]
    fn drifted_rows_are_renormalized_and_counted() {
        let dir = tmpdir();
        let path = dir.join("drift.pet");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"PETB");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        // Norm 1.00005: within the re-normalization window.
        let row = [1.00005f32, 0.0];
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, &bytes).unwrap();
        let (t, report) = read_embeddings(&path).unwrap();
        assert_eq!(report.renormalized, 1);
        assert!((t.part(0, 0)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oversized_drift_is_an_error() {
        let dir = tmpdir();
        let path = dir.join("oversize.pet");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"PETB");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        for v in [1.2f32, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_embeddings(&path),
            Err(PetError::Normalization { item: 0, part: 0, .. })
        ));
    }

    #[test]
    fn raw_matrices_round_trip_without_norm_checks() {
        let dir = tmpdir();
        let path = dir.join("raw.pet");
        let m = Matrix::from_vec(2, 3, vec![5.0, -2.0, 0.25, 1.5, 100.0, 0.0]).unwrap();
        write_raw(&path, &m).unwrap();
        let loaded = read_raw(&path).unwrap();
        assert_eq!(loaded, m);
    }
}
