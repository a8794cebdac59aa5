//! Training-set files.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! magic   4 bytes  "GPDE"
//! version u32      1
//! d       u32
//! n       u32
//! N       u64
//! then N forcing vectors followed by N solution vectors,
//! each n^d f64 values
//! ```
//!
//! A human-readable sidecar `<path>.meta.json` carries the provenance
//! (kernel, seed, coefficient, creation time). A missing sidecar is a
//! warning, not an error: the vectors are still usable, just unattributed.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use greenpeel::field::{FieldRole, FieldVector};
use greenpeel::peel::{Provenance, ProvenanceSource, TrainingSet};
use nalgebra::DVector;

pub const MAGIC: &[u8; 4] = b"GPDE";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad magic: expected \"GPDE\", found {found:02x?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {found} (expected {VERSION})")]
    BadVersion { found: u32 },
    #[error("header invalid: {0}")]
    BadHeader(String),
    #[error("length mismatch: header implies {expected} bytes, found {found}")]
    LengthMismatch { expected: u64, found: u64 },
    #[error("sidecar invalid: {0}")]
    BadSidecar(String),
}

/// Sidecar metadata, JSON next to the binary file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetMeta {
    pub kernel: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_scale: Option<f64>,
    pub master_seed: u64,
    pub coefficient: String,
    pub created_unix: u64,
    /// `external`, or `active:<16-hex config fingerprint>` for recorded runs.
    pub source: String,
}

impl DatasetMeta {
    fn from_provenance(p: &Provenance) -> Self {
        let source = match p.source {
            ProvenanceSource::External => "external".to_string(),
            ProvenanceSource::ActiveRecording { config_fingerprint } => {
                format!("active:{config_fingerprint:016x}")
            }
        };
        Self {
            kernel: p.kernel_name.clone(),
            length_scale: p.length_scale,
            master_seed: p.master_seed,
            coefficient: p.coefficient.clone(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            source,
        }
    }

    fn provenance(&self) -> Provenance {
        let source = match self.source.strip_prefix("active:") {
            Some(hex) => match u64::from_str_radix(hex, 16) {
                Ok(fp) => ProvenanceSource::ActiveRecording { config_fingerprint: fp },
                Err(_) => ProvenanceSource::External,
            },
            None => ProvenanceSource::External,
        };
        Provenance {
            kernel_name: self.kernel.clone(),
            length_scale: self.length_scale,
            master_seed: self.master_seed,
            coefficient: self.coefficient.clone(),
            source,
        }
    }
}

/// Serialize a training set to the binary layout.
pub fn dataset_to_bytes(data: &TrainingSet) -> Vec<u8> {
    let vec_len = data.n.pow(data.d as u32);
    let mut out = Vec::with_capacity(24 + 2 * data.pairs.len() * vec_len * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(data.d as u32).to_le_bytes());
    out.extend_from_slice(&(data.n as u32).to_le_bytes());
    out.extend_from_slice(&(data.pairs.len() as u64).to_le_bytes());
    for (f, _) in &data.pairs {
        for v in f.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for (_, u) in &data.pairs {
        for v in u.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parse the binary layout. Validates the header against the actual byte
/// count before allocating anything proportional to it.
pub fn dataset_from_bytes(bytes: &[u8]) -> Result<TrainingSet, DatasetError> {
    if bytes.len() < 24 {
        return Err(DatasetError::LengthMismatch { expected: 24, found: bytes.len() as u64 });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[0..4]);
    if &magic != MAGIC {
        return Err(DatasetError::BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(DatasetError::BadVersion { found: version });
    }
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if !(1..=3).contains(&d) {
        return Err(DatasetError::BadHeader(format!("d must be 1..=3, got {d}")));
    }
    if n < 2 {
        return Err(DatasetError::BadHeader(format!("n must be at least 2, got {n}")));
    }
    let vec_len = (n as u64)
        .checked_pow(d as u32)
        .ok_or_else(|| DatasetError::BadHeader("n^d overflows".into()))?;
    let payload = count
        .checked_mul(2)
        .and_then(|x| x.checked_mul(vec_len))
        .and_then(|x| x.checked_mul(8))
        .ok_or_else(|| DatasetError::BadHeader("payload size overflows".into()))?;
    let expected = 24u64
        .checked_add(payload)
        .ok_or_else(|| DatasetError::BadHeader("payload size overflows".into()))?;
    if expected != bytes.len() as u64 {
        return Err(DatasetError::LengthMismatch { expected, found: bytes.len() as u64 });
    }

    let vec_len = vec_len as usize;
    let count = count as usize;
    let mut offset = 24usize;
    let mut read_vec = || -> DVector<f64> {
        let v = DVector::from_fn(vec_len, |i, _| {
            f64::from_le_bytes(bytes[offset + 8 * i..offset + 8 * i + 8].try_into().unwrap())
        });
        offset += 8 * vec_len;
        v
    };
    let forcings: Vec<DVector<f64>> = (0..count).map(|_| read_vec()).collect();
    let solutions: Vec<DVector<f64>> = (0..count).map(|_| read_vec()).collect();
    let pairs = forcings
        .into_iter()
        .zip(solutions)
        .map(|(f, u)| {
            (
                FieldVector { values: f, role: FieldRole::Forcing },
                FieldVector { values: u, role: FieldRole::Solution },
            )
        })
        .collect();
    Ok(TrainingSet {
        d,
        n,
        pairs,
        provenance: Provenance {
            kernel_name: "unknown".into(),
            length_scale: None,
            master_seed: 0,
            coefficient: "unknown".into(),
            source: ProvenanceSource::External,
        },
    })
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta.json");
    PathBuf::from(os)
}

pub fn write_dataset(path: &Path, data: &TrainingSet) -> Result<(), DatasetError> {
    let bytes = dataset_to_bytes(data);
    let mut file = std::fs::File::create(path)
        .map_err(|source| DatasetError::Io { path: path.into(), source })?;
    file.write_all(&bytes).map_err(|source| DatasetError::Io { path: path.into(), source })?;
    let meta = DatasetMeta::from_provenance(&data.provenance);
    let meta_path = sidecar_path(path);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes"))
        .map_err(|source| DatasetError::Io { path: meta_path, source })?;
    Ok(())
}

/// Read a dataset; the boolean is true when the sidecar was missing and the
/// provenance is therefore a placeholder.
pub fn read_dataset(path: &Path) -> Result<(TrainingSet, bool), DatasetError> {
    let bytes =
        std::fs::read(path).map_err(|source| DatasetError::Io { path: path.into(), source })?;
    let mut data = dataset_from_bytes(&bytes)?;
    let meta_path = sidecar_path(path);
    match std::fs::read_to_string(&meta_path) {
        Ok(text) => {
            let meta: DatasetMeta = serde_json::from_str(&text)
                .map_err(|e| DatasetError::BadSidecar(e.to_string()))?;
            data.provenance = meta.provenance();
            Ok((data, false))
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok((data, true)),
        Err(source) => Err(DatasetError::Io { path: meta_path, source }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_set(count: usize) -> TrainingSet {
        let pairs = (0..count)
            .map(|j| {
                (
                    FieldVector::forcing(DVector::from_fn(4, |i, _| (i + j) as f64 + 0.25)),
                    FieldVector::solution(DVector::from_fn(4, |i, _| (i * j) as f64 - 0.5)),
                )
            })
            .collect();
        TrainingSet {
            d: 1,
            n: 4,
            pairs,
            provenance: Provenance {
                kernel_name: "white".into(),
                length_scale: None,
                master_seed: 9,
                coefficient: "identity".into(),
                source: ProvenanceSource::External,
            },
        }
    }

    #[test]
    fn header_size_matches_layout() {
        // d=1, n=4, N=2: 24-byte header + 2*2*4*8 payload = 152 bytes
        let bytes = dataset_to_bytes(&tiny_set(2));
        assert_eq!(bytes.len(), 152);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let set = tiny_set(3);
        let back = dataset_from_bytes(&dataset_to_bytes(&set)).unwrap();
        assert_eq!(back.d, 1);
        assert_eq!(back.n, 4);
        for ((f0, u0), (f1, u1)) in set.pairs.iter().zip(&back.pairs) {
            assert_eq!(f0.values, f1.values);
            assert_eq!(u0.values, u1.values);
        }
    }

    #[test]
    fn truncated_file_reports_expected_bytes() {
        let mut bytes = dataset_to_bytes(&tiny_set(2));
        bytes.truncate(100);
        match dataset_from_bytes(&bytes) {
            Err(DatasetError::LengthMismatch { expected: 152, found: 100 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = dataset_to_bytes(&tiny_set(1));
        bytes[0] = b'X';
        assert!(matches!(dataset_from_bytes(&bytes), Err(DatasetError::BadMagic { .. })));
        let mut bytes = dataset_to_bytes(&tiny_set(1));
        bytes[4] = 9;
        assert!(matches!(dataset_from_bytes(&bytes), Err(DatasetError::BadVersion { found: 9 })));
    }

    #[test]
    fn lying_header_cannot_force_allocation() {
        let mut bytes = dataset_to_bytes(&tiny_set(1));
        // claim u64::MAX vectors
        bytes[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(
            dataset_from_bytes(&bytes),
            Err(DatasetError::BadHeader(_)) | Err(DatasetError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn file_roundtrip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.gpde");
        let set = tiny_set(2);
        write_dataset(&path, &set).unwrap();
        let (back, missing) = read_dataset(&path).unwrap();
        assert!(!missing);
        assert_eq!(back.provenance.kernel_name, "white");
        assert_eq!(back.provenance.master_seed, 9);
        // drop the sidecar: still readable, flagged
        std::fs::remove_file(dir.path().join("train.gpde.meta.json")).unwrap();
        let (_, missing) = read_dataset(&path).unwrap();
        assert!(missing);
    }
}
