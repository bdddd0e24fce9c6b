//! Raw capture ingestion, keypoint reduction, splits and the bundle container.

mod bundle;
mod name;
mod skeleton;
mod storage;

pub use bundle::{build_bundle, cross_subject_split, split_by, BuildOptions, DatasetBundle, SampleRecord, SplitRule};
pub use name::{Location, SampleName};
pub use skeleton::{
    load_skeleton_csv, parse_skeleton_csv, write_skeleton_csv, JointMap, SkeletonSequence, COORDS,
    DUET_TO_MODEL_JOINTS, MODEL_JOINTS, PERSONS, RAW_JOINTS,
};
pub use storage::{deserialize_bundle, serialize_bundle, BUNDLE_FORMAT};
