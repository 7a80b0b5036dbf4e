//! Named, seeded parameter storage and the binary checkpoint container.
//!
//! Every trainable tensor lives in a [`ParamStore`] under a dotted name
//! (`image.blocks.3.attn.qkv.weight`). Initialisation draws from a
//! ChaCha stream so that identical seeds give bit-identical models.
//!
//! Checkpoints use the safetensors layout: an 8-byte little-endian header
//! length, a JSON manifest listing every tensor (name, dtype, shape, byte
//! offsets) plus free-form metadata, then the raw little-endian `f32` data.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "facerep-checkpoint";
pub const CHECKPOINT_VERSION: &str = "1";

pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("params", &self.vars.len())
            .field("dtype", &self.dtype)
            .finish()
    }
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn register(&mut self, name: &str, tensor: Tensor) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        let var = Var::from_tensor(&tensor)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    /// Gaussian initialisation with the given standard deviation.
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
        let values: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        self.register(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::zeros(shape, self.dtype, &self.device)?;
        self.register(name, t)
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::ones(shape, self.dtype, &self.device)?;
        self.register(name, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let t = (Tensor::ones(shape, self.dtype, &self.device)? * value)?;
        self.register(name, t)
    }

    /// Swaps in a new tensor (possibly of a different shape) under an existing
    /// name and returns the live handle.
    pub fn replace(&mut self, name: &str, tensor: &Tensor) -> Result<Tensor> {
        if !self.vars.contains_key(name) {
            return Err(Error::config(format!("unknown parameter `{name}`")));
        }
        let var = Var::from_tensor(&tensor.to_dtype(self.dtype)?)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Variables whose name starts with `prefix`, in name order.
    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<(String, Var)> {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn all_vars(&self) -> Vec<(String, Var)> {
        self.vars_with_prefix("")
    }

    /// SHA-256 over names, shapes and the exact values of every parameter under
    /// `prefix`. Used to prove that frozen weights did not move.
    pub fn content_hash(&self, prefix: &str) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, var) in self.vars.iter().filter(|(k, _)| k.starts_with(prefix)) {
            hasher.update(name.as_bytes());
            for d in var.dims() {
                hasher.update((*d as u64).to_le_bytes());
            }
            let values = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(hasher.finalize()))
    }

    pub fn save(&self, path: &Path, metadata: &BTreeMap<String, String>) -> Result<()> {
        let bytes = self.to_checkpoint_bytes(metadata)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn to_checkpoint_bytes(&self, metadata: &BTreeMap<String, String>) -> Result<Vec<u8>> {
        let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::with_capacity(self.vars.len());
        for (name, var) in &self.vars {
            let values = var.as_tensor().flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
            let mut raw = Vec::with_capacity(values.len() * 4);
            for v in values {
                raw.extend_from_slice(&v.to_le_bytes());
            }
            buffers.push((name.clone(), var.dims().to_vec(), raw));
        }
        let views = buffers
            .iter()
            .map(|(name, shape, raw)| {
                safetensors::tensor::TensorView::new(safetensors::Dtype::F32, shape.clone(), raw)
                    .map(|v| (name.clone(), v))
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut info: HashMap<String, String> =
            metadata.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        info.insert("format".into(), CHECKPOINT_FORMAT.into());
        info.insert("version".into(), CHECKPOINT_VERSION.into());
        let bytes =
            safetensors::tensor::serialize(views, Some(info)).map_err(|e| Error::Checkpoint(e.to_string()))?;
        canonical_header(bytes)
    }

    /// Overwrites the values of every parameter present in the checkpoint.
    /// Shapes must match exactly; re-grid positional tables after loading.
    pub fn load(&mut self, path: &Path) -> Result<BTreeMap<String, String>> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.load_bytes(&bytes)
    }

    pub fn load_bytes(&mut self, bytes: &[u8]) -> Result<BTreeMap<String, String>> {
        self.load_filtered(bytes, None)
    }

    /// Loads only the tensors under `prefix`; every parameter of the store
    /// under that prefix must be present in the checkpoint.
    pub fn load_prefixed(&mut self, path: &Path, prefix: &str) -> Result<BTreeMap<String, String>> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.load_filtered(&bytes, Some(prefix))
    }

    fn load_filtered(&mut self, bytes: &[u8], prefix: Option<&str>) -> Result<BTreeMap<String, String>> {
        let metadata = read_checkpoint_metadata(bytes)?;
        let st = safetensors::SafeTensors::deserialize(bytes)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if let Some(prefix) = prefix {
            let present: std::collections::BTreeSet<String> = st.names().into_iter().map(String::from).collect();
            if let Some(missing) = self.vars.keys().find(|k| k.starts_with(prefix) && !present.contains(*k)) {
                return Err(Error::Checkpoint(format!("checkpoint lacks parameter `{missing}`")));
            }
        }
        for (name, view) in st.tensors() {
            if prefix.is_some_and(|p| !name.starts_with(p)) {
                continue;
            }
            if view.dtype() != safetensors::Dtype::F32 {
                return Err(Error::Checkpoint(format!("{name}: expected f32 data")));
            }
            let values: Vec<f32> = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor = Tensor::from_vec(values, view.shape(), &self.device)?.to_dtype(self.dtype)?;
            match self.vars.get(&name) {
                Some(var) if var.dims() == view.shape() => var.set(&tensor)?,
                Some(var) => {
                    return Err(Error::Checkpoint(format!(
                        "{name}: checkpoint shape {:?} does not match model shape {:?}",
                        view.shape(),
                        var.dims()
                    )))
                }
                None => {
                    tracing::warn!(param = %name, "checkpoint tensor has no matching parameter; ignored");
                }
            }
        }
        Ok(metadata)
    }
}

/// Rewrites the JSON header with sorted keys so equal stores give equal bytes.
fn canonical_header(bytes: Vec<u8>) -> Result<Vec<u8>> {
    fn sorted(v: serde_json::Value) -> serde_json::Value {
        match v {
            serde_json::Value::Object(m) => {
                let ordered: BTreeMap<String, serde_json::Value> = m.into_iter().map(|(k, v)| (k, sorted(v))).collect();
                serde_json::Value::Object(ordered.into_iter().collect())
            }
            other => other,
        }
    }
    let bad = || Error::Checkpoint("truncated header".into());
    let n = u64::from_le_bytes(bytes.get(..8).ok_or_else(bad)?.try_into().map_err(|_| bad())?) as usize;
    let header = bytes.get(8..8 + n).ok_or_else(bad)?;
    let value: serde_json::Value = serde_json::from_slice(header)?;
    let mut text = serde_json::to_vec(&sorted(value))?;
    while text.len() % 8 != 0 {
        text.push(b' ');
    }
    let mut out = Vec::with_capacity(8 + text.len() + bytes.len() - 8 - n);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&bytes[8 + n..]);
    Ok(out)
}

/// Reads the free-form metadata block and validates the container version.
pub fn read_checkpoint_metadata(bytes: &[u8]) -> Result<BTreeMap<String, String>> {
    let (_, meta) = safetensors::SafeTensors::read_metadata(bytes)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let map: BTreeMap<String, String> = meta
        .metadata()
        .clone()
        .unwrap_or_default()
        .into_iter()
        .collect();
    match (map.get("format").map(String::as_str), map.get("version").map(String::as_str)) {
        (Some(CHECKPOINT_FORMAT), Some(CHECKPOINT_VERSION)) => Ok(map),
        (Some(CHECKPOINT_FORMAT), v) => Err(Error::Checkpoint(format!("unsupported version {v:?}"))),
        _ => Err(Error::Checkpoint("not a facerep checkpoint".into())),
    }
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
