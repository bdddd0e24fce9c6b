use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use tracing::warn;

use super::name::{Location, SampleName};
use super::skeleton::{load_skeleton_csv, JointMap, SkeletonSequence};
use crate::error::{CoreError, Result};

/// One annotated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub frame_dir: String,
    pub label: usize,
    pub total_frames: usize,
    pub keypoint: SkeletonSequence,
}

impl SampleRecord {
    pub fn new(name: &SampleName, keypoint: SkeletonSequence) -> Self {
        Self {
            frame_dir: name.render(),
            label: name.interaction as usize,
            total_frames: keypoint.frames(),
            keypoint,
        }
    }
}

/// Split lists plus every record. `train_names`/`val_names` correspond to the
/// upstream `xsub_train`/`xsub_value` lists.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetBundle {
    pub train_names: Vec<String>,
    pub val_names: Vec<String>,
    pub records: Vec<SampleRecord>,
}

/// Which subjects form the held-out split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitRule {
    /// Pair 01 recorded at CC and pair 10 recorded at CM are held out.
    CrossSubject,
    /// Arbitrary held-out `(location, pair)` combinations.
    HeldOut(Vec<(Location, u8)>),
}

impl SplitRule {
    pub fn is_test(&self, name: &SampleName) -> bool {
        match self {
            SplitRule::CrossSubject => {
                (name.location == Location::CC && name.pair == 1) || (name.location == Location::CM && name.pair == 10)
            }
            SplitRule::HeldOut(list) => list.iter().any(|(l, p)| *l == name.location && *p == name.pair),
        }
    }
}

/// Partition names into `(train, test)` by the cross-subject rule,
/// preserving input order.
pub fn cross_subject_split(names: &[SampleName]) -> (Vec<SampleName>, Vec<SampleName>) {
    split_by(names, &SplitRule::CrossSubject)
}

pub fn split_by(names: &[SampleName], rule: &SplitRule) -> (Vec<SampleName>, Vec<SampleName>) {
    names.iter().cloned().partition(|n| !rule.is_test(n))
}

impl DatasetBundle {
    /// Assemble a bundle from records, assigning split membership by `rule`.
    /// Records are sorted by sample name.
    pub fn from_records(mut records: Vec<SampleRecord>, rule: &SplitRule) -> Result<Self> {
        records.sort_by(|a, b| a.frame_dir.cmp(&b.frame_dir));
        let mut train_names = Vec::new();
        let mut val_names = Vec::new();
        for r in &records {
            let name = SampleName::parse(&r.frame_dir)?;
            if rule.is_test(&name) {
                val_names.push(r.frame_dir.clone());
            } else {
                train_names.push(r.frame_dir.clone());
            }
        }
        let bundle = Self { train_names, val_names, records };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Check every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let mut by_name: HashSet<&str> = HashSet::new();
        for r in &self.records {
            if !by_name.insert(r.frame_dir.as_str()) {
                return Err(CoreError::Dataset(format!("duplicate record {}", r.frame_dir)));
            }
            let name = SampleName::parse(&r.frame_dir)?;
            if name.interaction as usize != r.label {
                return Err(CoreError::Dataset(format!("{}: label {} disagrees with name", r.frame_dir, r.label)));
            }
            if r.total_frames != r.keypoint.frames() {
                return Err(CoreError::Dataset(format!(
                    "{}: total_frames {} but keypoint has {} frames",
                    r.frame_dir,
                    r.total_frames,
                    r.keypoint.frames()
                )));
            }
        }
        let mut listed: HashSet<&str> = HashSet::new();
        for n in self.train_names.iter().chain(&self.val_names) {
            if !listed.insert(n.as_str()) {
                return Err(CoreError::Dataset(format!("{n} appears in more than one split slot")));
            }
            if !by_name.contains(n.as_str()) {
                return Err(CoreError::Dataset(format!("split entry {n} has no record")));
            }
        }
        if listed.len() != by_name.len() {
            return Err(CoreError::Dataset(format!(
                "{} records but {} split entries",
                by_name.len(),
                listed.len()
            )));
        }
        Ok(())
    }

    pub fn record(&self, name: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.frame_dir == name)
    }

    fn index(&self) -> BTreeMap<&str, usize> {
        self.records.iter().enumerate().map(|(i, r)| (r.frame_dir.as_str(), i)).collect()
    }

    /// Records of the training split, in split-list order.
    pub fn train_records(&self) -> Vec<&SampleRecord> {
        let idx = self.index();
        self.train_names.iter().map(|n| &self.records[idx[n.as_str()]]).collect()
    }

    pub fn val_records(&self) -> Vec<&SampleRecord> {
        let idx = self.index();
        self.val_names.iter().map(|n| &self.records[idx[n.as_str()]]).collect()
    }

    /// Distinct labels present, ascending.
    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn label_histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for r in &self.records {
            *h.entry(r.label).or_insert(0) += 1;
        }
        h
    }

    /// Restrict records and split lists to the given activity labels.
    pub fn filter_by_labels(&self, labels: &BTreeSet<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(CoreError::Config("label filter is empty".into()));
        }
        if let Some(bad) = labels.iter().find(|l| **l > 11) {
            return Err(CoreError::LabelOutOfRange(*bad));
        }
        let keep: HashSet<&str> = self
            .records
            .iter()
            .filter(|r| labels.contains(&r.label))
            .map(|r| r.frame_dir.as_str())
            .collect();
        let out = Self {
            train_names: self.train_names.iter().filter(|n| keep.contains(n.as_str())).cloned().collect(),
            val_names: self.val_names.iter().filter(|n| keep.contains(n.as_str())).cloned().collect(),
            records: self.records.iter().filter(|r| labels.contains(&r.label)).cloned().collect(),
        };
        if out.is_empty() {
            warn!(?labels, "label filter left an empty bundle");
        }
        Ok(out)
    }

    /// Apply `f` to every record's keypoints.
    pub fn map_sequences(&self, f: impl Fn(&SkeletonSequence) -> Result<SkeletonSequence> + Sync) -> Result<Self> {
        let records = self
            .records
            .par_iter()
            .map(|r| {
                let keypoint = f(&r.keypoint).map_err(|e| CoreError::Sample { sample: r.frame_dir.clone(), source: Box::new(e) })?;
                Ok(SampleRecord { frame_dir: r.frame_dir.clone(), label: r.label, total_frames: keypoint.frames(), keypoint })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { train_names: self.train_names.clone(), val_names: self.val_names.clone(), records })
    }

    /// SHA-256 over split lists, labels and every keypoint value.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (tag, list) in [("train", &self.train_names), ("val", &self.val_names)] {
            h.update(tag.as_bytes());
            for n in list {
                h.update(n.as_bytes());
                h.update([0u8]);
            }
        }
        for r in &self.records {
            h.update(r.frame_dir.as_bytes());
            h.update((r.label as u64).to_le_bytes());
            for d in r.keypoint.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in r.keypoint.flatten() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub joint_map: JointMap,
    pub split_rule: SplitRule,
    /// Abort on an unparsable file name instead of skipping it.
    pub strict: bool,
    pub target_frames: Option<usize>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { joint_map: JointMap::duet_default(), split_rule: SplitRule::CrossSubject, strict: true, target_frames: None }
    }
}

fn collect_csvs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| CoreError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CoreError::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_csvs(&path, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            out.push(path);
        }
    }
    Ok(())
}

/// Read every `LLIISS_t1_t2.csv` under `csv_root`, reduce keypoints and
/// split. Files are loaded in parallel; record order is by sample name.
pub fn build_bundle(csv_root: &Path, options: &BuildOptions) -> Result<DatasetBundle> {
    let mut files = Vec::new();
    collect_csvs(csv_root, &mut files)?;
    if files.is_empty() {
        return Err(CoreError::Dataset(format!("no CSV files under {}", csv_root.display())));
    }
    files.sort();
    let mut named = Vec::new();
    for path in files {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        match SampleName::parse(&stem) {
            Ok(name) => named.push((name, path)),
            Err(e) if options.strict => return Err(e),
            Err(e) => warn!(file = %path.display(), error = %e, "skipping file with unparsable name"),
        }
    }
    if named.is_empty() {
        return Err(CoreError::Dataset(format!("no usable sample files under {}", csv_root.display())));
    }
    let records = named
        .par_iter()
        .map(|(name, path)| {
            let raw = load_skeleton_csv(path)?;
            let mut seq = raw.reduce_keypoints(&options.joint_map)?;
            if let Some(t) = options.target_frames {
                seq = seq.resample_time(t)?;
            }
            Ok(SampleRecord::new(name, seq))
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetBundle::from_records(records, &options.split_rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(list: &[&str]) -> Vec<SampleName> {
        list.iter().map(|s| SampleName::parse(s).unwrap()).collect()
    }

    #[test]
    fn split_examples() {
        let (train, test) = cross_subject_split(&names(&["CC0001_0_1"]));
        assert!(train.is_empty() && test.len() == 1);
        let (train, test) = cross_subject_split(&names(&["CM0010_0_1"]));
        assert!(train.is_empty() && test.len() == 1);
        let (train, test) = cross_subject_split(&names(&["CL0001_0_1", "CC0002_0_1"]));
        assert_eq!(train.len(), 2);
        assert!(test.is_empty());
    }

    #[test]
    fn split_is_a_partition_over_all_locations_and_pairs() {
        let mut all = Vec::new();
        for loc in ["CC", "CM", "CL"] {
            for ii in 0..12 {
                for ss in 1..=10 {
                    all.push(SampleName::parse(&format!("{loc}{ii:02}{ss:02}_0_1")).unwrap());
                }
            }
        }
        let (train, test) = cross_subject_split(&all);
        assert_eq!(train.len() + test.len(), all.len());
        assert_eq!(test.len(), 24);
        for n in &test {
            assert!((n.location == Location::CC && n.pair == 1) || (n.location == Location::CM && n.pair == 10));
        }
        for n in &train {
            assert!(!SplitRule::CrossSubject.is_test(n));
        }
    }

    fn record(name: &str) -> SampleRecord {
        let n = SampleName::parse(name).unwrap();
        SampleRecord::new(&n, SkeletonSequence::zeros([2, 2, 25, 3]))
    }

    #[test]
    fn filter_keeps_requested_labels_only() {
        let b = DatasetBundle::from_records(
            vec![record("CC0201_0_1"), record("CL0402_0_1"), record("CL0503_0_1"), record("CM1110_0_1")],
            &SplitRule::CrossSubject,
        )
        .unwrap();
        let f = b.filter_by_labels(&[2, 4, 8, 11].into_iter().collect()).unwrap();
        assert_eq!(f.labels(), vec![2, 4, 11]);
        f.validate().unwrap();
        let all = b.filter_by_labels(&(0..12).collect()).unwrap();
        assert_eq!(all, b);
        let none = b.filter_by_labels(&[7].into_iter().collect()).unwrap();
        assert!(none.is_empty());
        none.validate().unwrap();
        assert!(b.filter_by_labels(&BTreeSet::new()).is_err());
    }

    #[test]
    fn validate_catches_broken_invariants() {
        let mut b = DatasetBundle::from_records(vec![record("CC0201_0_1"), record("CL0402_0_1")], &SplitRule::CrossSubject).unwrap();
        b.train_names.push(b.val_names[0].clone());
        assert!(b.validate().is_err());
        let mut b = DatasetBundle::from_records(vec![record("CC0201_0_1")], &SplitRule::CrossSubject).unwrap();
        b.records[0].label = 3;
        assert!(b.validate().is_err());
    }

    #[test]
    fn checksum_changes_with_content() {
        let a = DatasetBundle::from_records(vec![record("CC0201_0_1")], &SplitRule::CrossSubject).unwrap();
        let mut b = a.clone();
        b.records[0].keypoint.set(0, 0, 0, 0, 1.0);
        assert_ne!(a.checksum(), b.checksum());
        assert_eq!(a.checksum(), a.clone().checksum());
    }
}
