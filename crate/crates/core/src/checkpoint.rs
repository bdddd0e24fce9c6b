//! Weight checkpoints and feature files.
//!
//! Both share one container: a magic line, a little-endian `u64` header
//! length, a JSON header, then raw little-endian `f32` values in header order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use kinesics_nn::{Parameterized, Real};

use crate::backbone::{FeatureMap, FeatureSet};
use crate::blob::write_atomic;
use crate::error::{CoreError, Result};

pub const CHECKPOINT_FORMAT: &str = "kckpt/1";
pub const FEATURES_FORMAT: &str = "kfeat/1";
const CHECKPOINT_MAGIC: &[u8] = b"KCKPT\n";
const FEATURES_MAGIC: &[u8] = b"KFEAT\n";

/// SHA-256 over every parameter's name, shape and `f32` bytes, buffers
/// included, in visit order.
pub fn parameter_checksum<R: Real>(model: &dyn Parameterized<R>) -> String {
    let mut h = Sha256::new();
    model.visit(&mut |p| {
        h.update(p.name.as_bytes());
        h.update([0]);
        for d in p.value.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            h.update((v.as_f64() as f32).to_le_bytes());
        }
    });
    hex::encode(h.finalize())
}

/// Copy of every parameter value, buffers included.
pub fn snapshot<R: Real>(model: &dyn Parameterized<R>) -> Vec<Vec<R>> {
    let mut out = Vec::new();
    model.visit(&mut |p| out.push(p.value.data().to_vec()));
    out
}

pub fn restore<R: Real>(model: &mut dyn Parameterized<R>, values: &[Vec<R>]) {
    let mut i = 0;
    model.visit_mut(&mut |p| {
        p.value.data_mut().copy_from_slice(&values[i]);
        i += 1;
    });
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    kind: String,
    config: serde_json::Value,
    params: Vec<ParamEntry>,
    checksum: String,
    extra: serde_json::Value,
}

fn encode_container(magic: &[u8], header: &impl Serialize, payload: impl Iterator<Item = f32>) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header)?;
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn decode_container<'a>(magic: &[u8], bytes: &'a [u8]) -> std::result::Result<(&'a [u8], Vec<f32>), String> {
    let rest = bytes.strip_prefix(magic).ok_or("bad magic")?;
    if rest.len() < 8 {
        return Err("truncated header length".into());
    }
    let len = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
    let rest = &rest[8..];
    if rest.len() < len {
        return Err("truncated header".into());
    }
    let (header, payload) = rest.split_at(len);
    if payload.len() % 4 != 0 {
        return Err("payload is not a whole number of f32 values".into());
    }
    Ok((header, payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()))
}

/// Write `model` with its config and free-form metadata. Returns the
/// parameter checksum.
pub fn save_checkpoint<C: Serialize>(
    path: &Path,
    kind: &str,
    config: &C,
    model: &dyn Parameterized<f32>,
    extra: serde_json::Value,
) -> Result<String> {
    let checksum = parameter_checksum(model);
    let mut params = Vec::new();
    let mut payload = Vec::new();
    model.visit(&mut |p| {
        params.push(ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec() });
        payload.extend_from_slice(p.value.data());
    });
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        kind: kind.into(),
        config: serde_json::to_value(config)?,
        params,
        checksum: checksum.clone(),
        extra,
    };
    write_atomic(path, &encode_container(CHECKPOINT_MAGIC, &header, payload.into_iter())?)?;
    Ok(checksum)
}

/// A checkpoint read from disk but not yet bound to a model.
#[derive(Debug)]
pub struct StoredCheckpoint {
    path: std::path::PathBuf,
    header: CheckpointHeader,
    payload: Vec<f32>,
}

pub fn read_checkpoint(path: &Path, kind: &str) -> Result<StoredCheckpoint> {
    let err = |reason: String| CoreError::Load { path: path.to_path_buf(), format: CHECKPOINT_FORMAT, reason };
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let (header, payload) = decode_container(CHECKPOINT_MAGIC, &bytes).map_err(err)?;
    let header: CheckpointHeader = serde_json::from_slice(header).map_err(|e| err(format!("corrupt header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(err(format!("file declares format '{}'", header.format)));
    }
    if header.kind != kind {
        return Err(err(format!("expected a {kind} checkpoint, found {}", header.kind)));
    }
    let expected: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if expected != payload.len() {
        return Err(err(format!("payload holds {} values, header describes {expected}", payload.len())));
    }
    Ok(StoredCheckpoint { path: path.to_path_buf(), header, payload })
}

impl StoredCheckpoint {
    pub fn config<C: DeserializeOwned>(&self) -> Result<C> {
        serde_json::from_value(self.header.config.clone()).map_err(|e| self.err(format!("config does not parse: {e}")))
    }

    pub fn extra(&self) -> &serde_json::Value {
        &self.header.extra
    }

    pub fn checksum(&self) -> &str {
        &self.header.checksum
    }

    fn err(&self, reason: String) -> CoreError {
        CoreError::Load { path: self.path.clone(), format: CHECKPOINT_FORMAT, reason }
    }

    /// Copy the stored weights into `model`, refusing when the stored config
    /// differs from `config` or any parameter name or shape disagrees.
    pub fn load_into<C: Serialize>(&self, config: &C, model: &mut dyn Parameterized<f32>) -> Result<()> {
        if serde_json::to_value(config)? != self.header.config {
            return Err(self.err(format!("config mismatch: checkpoint was written for {}", self.header.config)));
        }
        let mut problem = None;
        let mut i = 0;
        let mut offset = 0;
        model.visit(&mut |p| {
            match self.header.params.get(i) {
                Some(e) if e.name == p.name && e.shape == p.value.shape() => {}
                Some(e) => {
                    problem.get_or_insert(format!(
                        "parameter {i} is {} {:?}, model has {} {:?}",
                        e.name,
                        e.shape,
                        p.name,
                        p.value.shape()
                    ));
                }
                None => {
                    problem.get_or_insert(format!("model parameter {} missing from checkpoint", p.name));
                }
            }
            i += 1;
        });
        if problem.is_none() && i != self.header.params.len() {
            problem = Some(format!("checkpoint has {} parameters, model has {i}", self.header.params.len()));
        }
        if let Some(p) = problem {
            return Err(self.err(p));
        }
        model.visit_mut(&mut |p| {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&self.payload[offset..offset + n]);
            offset += n;
        });
        let actual = parameter_checksum(model);
        if actual != self.header.checksum {
            return Err(self.err(format!("checksum mismatch: header {}, payload {actual}", self.header.checksum)));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FeaturesHeader {
    format: String,
    backbone_checksum: String,
    shape: [usize; 3],
    names: Vec<String>,
}

pub fn save_features(path: &Path, set: &FeatureSet) -> Result<()> {
    let header = FeaturesHeader {
        format: FEATURES_FORMAT.into(),
        backbone_checksum: set.backbone_checksum.clone(),
        shape: set.shape,
        names: set.features.keys().cloned().collect(),
    };
    let payload = set.features.values().flat_map(|f| f.map.iter().chain(&f.pooled).copied());
    write_atomic(path, &encode_container(FEATURES_MAGIC, &header, payload)?)
}

pub fn load_features(path: &Path) -> Result<FeatureSet> {
    let err = |reason: String| CoreError::Load { path: path.to_path_buf(), format: FEATURES_FORMAT, reason };
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let (header, payload) = decode_container(FEATURES_MAGIC, &bytes).map_err(err)?;
    let header: FeaturesHeader = serde_json::from_slice(header).map_err(|e| err(format!("corrupt header: {e}")))?;
    if header.format != FEATURES_FORMAT {
        return Err(err(format!("file declares format '{}'", header.format)));
    }
    let map_len: usize = header.shape.iter().product();
    let per = map_len + header.shape[0];
    if payload.len() != per * header.names.len() {
        return Err(err(format!("payload holds {} values, expected {}", payload.len(), per * header.names.len())));
    }
    let features: BTreeMap<String, FeatureMap> = header
        .names
        .into_iter()
        .zip(payload.chunks_exact(per.max(1)))
        .map(|(name, chunk)| (name, FeatureMap { map: chunk[..map_len].to_vec(), pooled: chunk[map_len..].to_vec() }))
        .collect();
    Ok(FeatureSet { backbone_checksum: header.backbone_checksum, shape: header.shape, features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{Backbone, BackboneConfig};

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.kckpt");
        let cfg = BackboneConfig::compact(4);
        let model = Backbone::<f32>::new(&cfg, 1).unwrap();
        let sum = save_checkpoint(&path, "backbone", &cfg, &model, serde_json::json!({"labels": [2, 4, 8, 11]})).unwrap();

        let stored = read_checkpoint(&path, "backbone").unwrap();
        assert_eq!(stored.config::<BackboneConfig>().unwrap(), cfg);
        let mut other = Backbone::<f32>::new(&cfg, 2).unwrap();
        assert_ne!(parameter_checksum(&other), sum);
        stored.load_into(&cfg, &mut other).unwrap();
        assert_eq!(parameter_checksum(&other), sum);

        let wider = BackboneConfig::compact(5);
        let mut m5 = Backbone::<f32>::new(&wider, 1).unwrap();
        assert!(matches!(stored.load_into(&wider, &mut m5), Err(CoreError::Load { .. })));
        assert!(read_checkpoint(&path, "head").is_err());
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.kckpt");
        let cfg = BackboneConfig::compact(4);
        let model = Backbone::<f32>::new(&cfg, 1).unwrap();
        save_checkpoint(&path, "backbone", &cfg, &model, serde_json::Value::Null).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        let mut m = Backbone::<f32>::new(&cfg, 1).unwrap();
        let stored = read_checkpoint(&path, "backbone").unwrap();
        assert!(stored.load_into(&cfg, &mut m).is_err());
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_checkpoint(&path, "backbone").is_err());
    }

    #[test]
    fn features_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.kfeat");
        let mut features = BTreeMap::new();
        for (i, name) in ["CC0001_0_1", "CL0203_1_2"].iter().enumerate() {
            features.insert(
                name.to_string(),
                FeatureMap { map: (0..12).map(|j| (i * 12 + j) as f32 * 0.5).collect(), pooled: vec![i as f32, -1.0] },
            );
        }
        let set = FeatureSet { backbone_checksum: "abc".into(), shape: [2, 3, 2], features };
        save_features(&path, &set).unwrap();
        assert_eq!(load_features(&path).unwrap(), set);
    }
}
