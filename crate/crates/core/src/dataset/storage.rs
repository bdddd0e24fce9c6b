//! Portable on-disk bundle: `manifest.json` plus one array file per record
//! under `arrays/`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bundle::{DatasetBundle, SampleRecord};
use super::skeleton::SkeletonSequence;
use crate::blob::{decode_array, encode_array, write_atomic};
use crate::error::{CoreError, Result};

pub const BUNDLE_FORMAT: &str = "kbundle/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    /// Upstream key names for the two split lists.
    split_keys: SplitKeys,
    train: Vec<String>,
    val: Vec<String>,
    records: Vec<RecordEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitKeys {
    train: String,
    val: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordEntry {
    frame_dir: String,
    label: usize,
    total_frames: usize,
    shape: [usize; 4],
    file: String,
    sha256: String,
}

pub fn serialize_bundle(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    let arrays = dir.join("arrays");
    std::fs::create_dir_all(&arrays).map_err(|e| CoreError::io(&arrays, e))?;
    let mut entries = Vec::with_capacity(bundle.records.len());
    for r in &bundle.records {
        let file = format!("arrays/{}.karr", r.frame_dir);
        let bytes = encode_array(&r.keypoint.shape(), r.keypoint.flatten());
        write_atomic(&dir.join(&file), &bytes)?;
        entries.push(RecordEntry {
            frame_dir: r.frame_dir.clone(),
            label: r.label,
            total_frames: r.total_frames,
            shape: r.keypoint.shape(),
            file,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let manifest = Manifest {
        format: BUNDLE_FORMAT.into(),
        split_keys: SplitKeys { train: "xsub_train".into(), val: "xsub_value".into() },
        train: bundle.train_names.clone(),
        val: bundle.val_names.clone(),
        records: entries,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
}

pub fn deserialize_bundle(dir: &Path) -> Result<DatasetBundle> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let load_err = |reason: String| CoreError::Load { path: manifest_path.clone(), format: BUNDLE_FORMAT, reason };
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| CoreError::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| load_err(format!("corrupt manifest: {e}")))?;
    if manifest.format != BUNDLE_FORMAT {
        return Err(load_err(format!("file declares format '{}'", manifest.format)));
    }
    let mut records = Vec::with_capacity(manifest.records.len());
    for entry in manifest.records {
        let path = dir.join(&entry.file);
        let arr_err = |reason: String| CoreError::Load { path: path.clone(), format: BUNDLE_FORMAT, reason };
        let bytes = std::fs::read(&path).map_err(|e| CoreError::io(&path, e))?;
        if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
            return Err(arr_err("checksum mismatch".into()));
        }
        let (shape, values) = decode_array(&bytes).map_err(arr_err)?;
        if shape != entry.shape {
            return Err(arr_err(format!("array shape {shape:?} disagrees with manifest {:?}", entry.shape)));
        }
        let keypoint = SkeletonSequence::new(entry.shape, values)?;
        records.push(SampleRecord { frame_dir: entry.frame_dir, label: entry.label, total_frames: entry.total_frames, keypoint });
    }
    let bundle = DatasetBundle { train_names: manifest.train, val_names: manifest.val, records };
    bundle.validate()?;
    Ok(bundle)
}
