//! Content-addressed checkpoint storage.
//!
//! Each checkpoint is written as `<id>.ckpt` with a JSON sidecar `<id>.json`:
//!
//! ```text
//! offset  size        field
//! 0       8           magic "LPFCKPT1"
//! 8       8           u64 LE  number of layer sizes L
//! 16      8·L         u64 LE  layer sizes
//! 16+8L   8·P         f64 LE  parameters (P = parameter count of the spec)
//! ```
//!
//! The id is the first 16 bytes of SHA-256 over the layer sizes and parameter bits,
//! hex encoded, so saving the same network twice yields the same id. Stores are
//! append-only: saving an existing id leaves both files untouched.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{NetworkSpec, ParameterVector};

pub const MAGIC: &[u8; 8] = b"LPFCKPT1";

/// Environment variable naming the default checkpoint directory.
pub const STORE_ENV: &str = "LANDSCAPE_STORE";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CheckpointId(String);

impl CheckpointId {
    pub fn parse(s: &str) -> Result<Self> {
        if s.len() == 32
            && s.bytes()
                .all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
        {
            Ok(Self(s.to_string()))
        } else {
            Err(Error::Config(format!("'{s}' is not a checkpoint id")))
        }
    }

    pub fn of(spec: &NetworkSpec, params: &ParameterVector) -> Self {
        let mut hasher = Sha256::new();
        for &s in spec.layer_sizes() {
            hasher.update((s as u64).to_le_bytes());
        }
        for &p in params.as_slice() {
            hasher.update(p.to_bits().to_le_bytes());
        }
        Self(hex::encode(&hasher.finalize()[..16]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CheckpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub beta: f64,
    pub seed: u64,
    pub lr: f64,
    pub parent_id: Option<CheckpointId>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

impl CheckpointMeta {
    pub fn new(beta: f64, seed: u64, lr: f64, parent_id: Option<CheckpointId>) -> Self {
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            beta,
            seed,
            lr,
            parent_id,
            created_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    id: CheckpointId,
    spec: NetworkSpec,
    params: ParameterVector,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(spec: NetworkSpec, params: ParameterVector, meta: CheckpointMeta) -> Result<Self> {
        params.check_spec(&spec)?;
        Ok(Self {
            id: CheckpointId::of(&spec, &params),
            spec,
            params,
            meta,
        })
    }

    pub fn id(&self) -> &CheckpointId {
        &self.id
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn into_params(self) -> ParameterVector {
        self.params
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    checkpoint_id: CheckpointId,
    layer_sizes: Vec<usize>,
    parameter_count: usize,
    meta: CheckpointMeta,
}

pub fn encode(spec: &NetworkSpec, params: &ParameterVector) -> Vec<u8> {
    let sizes = spec.layer_sizes();
    let mut out = Vec::with_capacity(16 + 8 * sizes.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(sizes.len() as u64).to_le_bytes());
    for &s in sizes {
        out.extend_from_slice(&(s as u64).to_le_bytes());
    }
    for &p in params.as_slice() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(NetworkSpec, ParameterVector)> {
    let truncated = || Error::Format("truncated checkpoint".into());
    let word = |i: usize| -> Result<[u8; 8]> {
        bytes
            .get(i..i + 8)
            .map(|b| b.try_into().unwrap())
            .ok_or_else(truncated)
    };
    if &word(0)? != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..8]),
            std::str::from_utf8(MAGIC).unwrap()
        )));
    }
    let n_sizes = u64::from_le_bytes(word(8)?) as usize;
    if n_sizes > (bytes.len() - 16) / 8 {
        return Err(truncated());
    }
    let sizes = (0..n_sizes)
        .map(|i| word(16 + 8 * i).map(|w| u64::from_le_bytes(w) as usize))
        .collect::<Result<Vec<_>>>()?;
    let spec = NetworkSpec::new(sizes).map_err(|e| Error::Format(e.to_string()))?;
    let start = 16 + 8 * n_sizes;
    let body = &bytes[start..];
    let expected = 8 * spec.parameter_count();
    if body.len() < expected {
        return Err(truncated());
    }
    if body.len() > expected {
        return Err(Error::Format(format!(
            "length mismatch: {} parameter bytes for a {spec} network needing {expected}",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = ParameterVector::new(values).map_err(|e| Error::Format(e.to_string()))?;
    Ok((spec, params))
}

/// Somewhere checkpoints can be saved and revisited.
pub trait CheckpointRepo {
    fn save(&mut self, cp: &Checkpoint) -> Result<CheckpointId>;
    fn load(&self, id: &CheckpointId) -> Result<Checkpoint>;
}

/// A directory of `.ckpt` files and JSON sidecars.
#[derive(Debug, Clone)]
pub struct CheckpointStore {
    root: PathBuf,
}

impl CheckpointStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_of(&self, id: &CheckpointId) -> PathBuf {
        self.root.join(format!("{id}.ckpt"))
    }

    pub fn contains(&self, id: &CheckpointId) -> bool {
        self.path_of(id).exists()
    }
}

impl CheckpointRepo for CheckpointStore {
    fn save(&mut self, cp: &Checkpoint) -> Result<CheckpointId> {
        save_checkpoint(cp, &self.root)
    }

    fn load(&self, id: &CheckpointId) -> Result<Checkpoint> {
        load_checkpoint(&self.root, id)
    }
}

pub fn save_checkpoint(cp: &Checkpoint, store: &Path) -> Result<CheckpointId> {
    let path = store.join(format!("{}.ckpt", cp.id));
    if path.exists() {
        return Ok(cp.id.clone());
    }
    let sidecar = Sidecar {
        checkpoint_id: cp.id.clone(),
        layer_sizes: cp.spec.layer_sizes().to_vec(),
        parameter_count: cp.params.len(),
        meta: cp.meta.clone(),
    };
    let json_path = store.join(format!("{}.json", cp.id));
    let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    // Write-then-rename so a crash never leaves a partial file under a valid id.
    let tmp = store.join(format!("{}.ckpt.tmp", cp.id));
    fs::write(&tmp, encode(&cp.spec, &cp.params)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(cp.id.clone())
}

pub fn load_checkpoint(store: &Path, id: &CheckpointId) -> Result<Checkpoint> {
    let path = store.join(format!("{id}.ckpt"));
    if !path.exists() {
        return Err(Error::NotFound(format!(
            "checkpoint {id} not found in {}",
            store.display()
        )));
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let (spec, params) = decode(&bytes)?;
    let actual = CheckpointId::of(&spec, &params);
    if &actual != id {
        return Err(Error::Format(format!(
            "{}: content hashes to {actual}, not {id}",
            path.display()
        )));
    }
    let json_path = store.join(format!("{id}.json"));
    let meta = match fs::read(&json_path) {
        Ok(raw) => {
            let sidecar: Sidecar = serde_json::from_slice(&raw)
                .map_err(|e| Error::Format(format!("{}: {e}", json_path.display())))?;
            sidecar.meta
        }
        Err(_) => CheckpointMeta::default(),
    };
    Ok(Checkpoint {
        id: actual,
        spec,
        params,
        meta,
    })
}

/// In-memory repository for tests and throwaway runs.
#[derive(Debug, Default)]
pub struct MemoryStore {
    checkpoints: HashMap<CheckpointId, Checkpoint>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }
}

impl CheckpointRepo for MemoryStore {
    fn save(&mut self, cp: &Checkpoint) -> Result<CheckpointId> {
        self.checkpoints
            .entry(cp.id.clone())
            .or_insert_with(|| cp.clone());
        Ok(cp.id.clone())
    }

    fn load(&self, id: &CheckpointId) -> Result<Checkpoint> {
        self.checkpoints
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("checkpoint {id} not found")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn sample() -> Checkpoint {
        let spec = NetworkSpec::new(vec![3, 2, 2]).unwrap();
        let params = ParameterVector::init(&spec, 4);
        Checkpoint::new(spec, params, CheckpointMeta::new(0.5, 4, 0.0015, None)).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempdir().unwrap();
        let cp = sample();
        let id = save_checkpoint(&cp, dir.path()).unwrap();
        let back = load_checkpoint(dir.path(), &id).unwrap();
        assert_eq!(back.params(), cp.params());
        assert_eq!(back.spec(), cp.spec());
        assert_eq!(back.meta, cp.meta);
        assert_eq!(back.params().len(), back.spec().parameter_count());
    }

    #[test]
    fn identical_params_share_an_id() {
        let dir = tempdir().unwrap();
        let a = sample();
        let mut b = sample();
        b.meta.beta = 9.0;
        assert_eq!(
            save_checkpoint(&a, dir.path()).unwrap(),
            save_checkpoint(&b, dir.path()).unwrap()
        );
        // first write wins
        assert_eq!(load_checkpoint(dir.path(), a.id()).unwrap().meta.beta, 0.5);
    }

    #[test]
    fn truncated_file_is_reported() {
        let dir = tempdir().unwrap();
        let cp = sample();
        let id = save_checkpoint(&cp, dir.path()).unwrap();
        let path = dir.path().join(format!("{id}.ckpt"));
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(dir.path(), &id).unwrap_err().to_string();
        assert!(err.contains("truncated checkpoint"), "{err}");
    }

    #[test]
    fn bad_magic_and_missing_id() {
        let dir = tempdir().unwrap();
        let cp = sample();
        let id = save_checkpoint(&cp, dir.path()).unwrap();
        let path = dir.path().join(format!("{id}.ckpt"));
        let mut bytes = fs::read(&path).unwrap();
        bytes[..8].copy_from_slice(b"XXXXXXXX");
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path(), &id),
            Err(Error::Format(_))
        ));

        let unknown = CheckpointId::parse(&"0".repeat(32)).unwrap();
        let err = load_checkpoint(dir.path(), &unknown).unwrap_err();
        assert!(matches!(err, Error::NotFound(_)));
        assert!(err.to_string().contains("not found"));
    }

    #[test]
    fn extra_bytes_are_a_length_mismatch() {
        let cp = sample();
        let mut bytes = encode(cp.spec(), cp.params());
        bytes.extend_from_slice(&[0; 8]);
        let err = decode(&bytes).unwrap_err().to_string();
        assert!(err.contains("length mismatch"), "{err}");
    }

    #[test]
    fn memory_store_round_trip() {
        let mut store = MemoryStore::new();
        let cp = sample();
        let id = store.save(&cp).unwrap();
        assert_eq!(store.load(&id).unwrap(), cp);
        assert_eq!(store.len(), 1);
    }

    proptest! {
        #[test]
        fn any_finite_bits_round_trip(bits in prop::collection::vec(any::<u64>(), 9)) {
            let values: Vec<f64> = bits
                .into_iter()
                .map(f64::from_bits)
                .map(|v| if v.is_finite() { v } else { f64::MIN_POSITIVE / 8.0 })
                .collect();
            let spec = NetworkSpec::new(vec![2, 3]).unwrap();
            let params = ParameterVector::new(values).unwrap();
            let (s, p) = decode(&encode(&spec, &params)).unwrap();
            prop_assert_eq!(s, spec);
            for (a, b) in p.as_slice().iter().zip(params.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
