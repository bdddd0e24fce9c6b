use std::path::Path;

use crate::error::{CoreError, Result};

pub const PERSONS: usize = 2;
pub const COORDS: usize = 3;
pub const RAW_JOINTS: usize = 32;
pub const MODEL_JOINTS: usize = 25;

/// Joint trajectories of one sample, stored frame-major as `T x M x V x C`.
/// That is also the column order of one CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    frames: usize,
    persons: usize,
    joints: usize,
    coords: usize,
    data: Vec<f32>,
}

impl SkeletonSequence {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let [frames, persons, joints, coords] = shape;
        if frames == 0 {
            return Err(CoreError::Dataset("a skeleton sequence needs at least one frame".into()));
        }
        if frames * persons * joints * coords != data.len() {
            return Err(CoreError::Dataset(format!("shape {shape:?} does not match {} values", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::Dataset(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { frames, persons, joints, coords, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        let len = shape.iter().product();
        Self { frames: shape[0], persons: shape[1], joints: shape[2], coords: shape[3], data: vec![0.0; len] }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.persons, self.joints, self.coords]
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn persons(&self) -> usize {
        self.persons
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn coords(&self) -> usize {
        self.coords
    }

    /// Flat values in `(frame, person, joint, coordinate)` order.
    pub fn flatten(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    fn offset(&self, t: usize, m: usize, v: usize, c: usize) -> usize {
        ((t * self.persons + m) * self.joints + v) * self.coords + c
    }

    pub fn get(&self, t: usize, m: usize, v: usize, c: usize) -> f32 {
        self.data[self.offset(t, m, v, c)]
    }

    pub fn set(&mut self, t: usize, m: usize, v: usize, c: usize, value: f32) {
        let o = self.offset(t, m, v, c);
        self.data[o] = value;
    }

    /// One frame's joints for one person, `V x C` values.
    pub fn person_frame(&self, t: usize, m: usize) -> &[f32] {
        let o = self.offset(t, m, 0, 0);
        &self.data[o..o + self.joints * self.coords]
    }

    fn person_absent(&self, t: usize, m: usize) -> bool {
        self.person_frame(t, m).iter().all(|v| *v == 0.0)
    }

    /// Gather joints: output joint `j` is input joint `joint_map[j]`.
    pub fn reduce_keypoints(&self, joint_map: &JointMap) -> Result<Self> {
        if self.joints != joint_map.source_joints {
            return Err(CoreError::Config(format!(
                "joint map expects {} source joints, sequence has {}",
                joint_map.source_joints, self.joints
            )));
        }
        let v_out = joint_map.indices.len();
        let mut data = Vec::with_capacity(self.frames * self.persons * v_out * self.coords);
        for t in 0..self.frames {
            for m in 0..self.persons {
                for &src in &joint_map.indices {
                    let o = self.offset(t, m, src, 0);
                    data.extend_from_slice(&self.data[o..o + self.coords]);
                }
            }
        }
        Ok(Self { frames: self.frames, persons: self.persons, joints: v_out, coords: self.coords, data })
    }

    /// Linear interpolation along the frame axis to exactly `target` frames,
    /// with the first and last frames pinned.
    pub fn resample_time(&self, target: usize) -> Result<Self> {
        if target == 0 {
            return Err(CoreError::Config("target frame count must be at least 1".into()));
        }
        if target == self.frames {
            return Ok(self.clone());
        }
        let stride = self.persons * self.joints * self.coords;
        let mut data = Vec::with_capacity(target * stride);
        for i in 0..target {
            let pos = if target == 1 || self.frames == 1 {
                0.0
            } else {
                i as f64 * (self.frames - 1) as f64 / (target - 1) as f64
            };
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(self.frames - 1);
            let w = (pos - lo as f64) as f32;
            let a = &self.data[lo * stride..(lo + 1) * stride];
            let b = &self.data[hi * stride..(hi + 1) * stride];
            data.extend(a.iter().zip(b).map(|(x, y)| if w == 0.0 { *x } else { x + (y - x) * w }));
        }
        Ok(Self { frames: target, persons: self.persons, joints: self.joints, coords: self.coords, data })
    }

    /// Translate every present person so that the time-averaged position of
    /// `pelvis` on person 0 becomes the origin. Absent (all-zero) person
    /// frames stay zero.
    pub fn center_on_pelvis(&self, pelvis: usize) -> Self {
        let mut origin = [0.0f64; 3];
        let mut count = 0usize;
        for t in 0..self.frames {
            if self.person_absent(t, 0) {
                continue;
            }
            for (c, o) in origin.iter_mut().enumerate().take(self.coords) {
                *o += self.get(t, 0, pelvis, c) as f64;
            }
            count += 1;
        }
        let mut out = self.clone();
        if count == 0 {
            return out;
        }
        origin.iter_mut().for_each(|o| *o /= count as f64);
        for t in 0..self.frames {
            for m in 0..self.persons {
                if self.person_absent(t, m) {
                    continue;
                }
                for v in 0..self.joints {
                    for (c, o) in origin.iter().enumerate().take(self.coords) {
                        let val = self.get(t, m, v, c) - *o as f32;
                        out.set(t, m, v, c, val);
                    }
                }
            }
        }
        out
    }

    /// Exchange persons 0 and 1.
    pub fn swap_persons(&self) -> Self {
        let mut out = self.clone();
        if self.persons < 2 {
            return out;
        }
        let block = self.joints * self.coords;
        for t in 0..self.frames {
            let a = self.offset(t, 0, 0, 0);
            let b = self.offset(t, 1, 0, 0);
            out.data[a..a + block].copy_from_slice(&self.data[b..b + block]);
            out.data[b..b + block].copy_from_slice(&self.data[a..a + block]);
        }
        out
    }
}

/// Parse one raw capture: comma-separated, no header, one frame per row,
/// `M x V x C` values per row. A row carrying only one person's values
/// (`V x C` fields) gets a zero-filled second person.
pub fn parse_skeleton_csv(text: &str, path: &Path, joints: usize) -> Result<SkeletonSequence> {
    let full = PERSONS * joints * COORDS;
    let single = joints * COORDS;
    let mut data = Vec::new();
    let mut frames = 0;
    for (row, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let start = data.len();
        for (col, field) in line.split(',').enumerate() {
            let field = field.trim();
            let value: f32 = field.parse().map_err(|_| CoreError::CsvFormat {
                path: path.to_path_buf(),
                row,
                reason: format!("column {col}: '{field}' is not numeric"),
            })?;
            if !value.is_finite() {
                return Err(CoreError::CsvFormat {
                    path: path.to_path_buf(),
                    row,
                    reason: format!("column {col}: non-finite value"),
                });
            }
            data.push(value);
        }
        let n = data.len() - start;
        if n == single {
            data.extend(std::iter::repeat(0.0).take(single));
        } else if n != full {
            return Err(CoreError::CsvFormat {
                path: path.to_path_buf(),
                row,
                reason: format!("expected {full} fields, found {n}"),
            });
        }
        frames += 1;
    }
    if frames == 0 {
        return Err(CoreError::CsvFormat { path: path.to_path_buf(), row: 0, reason: "no frames".into() });
    }
    SkeletonSequence::new([frames, PERSONS, joints, COORDS], data)
}

pub fn load_skeleton_csv(path: &Path) -> Result<SkeletonSequence> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    parse_skeleton_csv(&text, path, RAW_JOINTS)
}

/// Render rows in the same dialect [`parse_skeleton_csv`] reads. Uses the
/// shortest representation that parses back to the identical `f32`.
pub fn write_skeleton_csv(seq: &SkeletonSequence) -> String {
    let stride = seq.persons() * seq.joints() * seq.coords();
    let mut out = String::new();
    for row in seq.flatten().chunks(stride) {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Validated gather list from a source joint layout to a model layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointMap {
    source_joints: usize,
    indices: Vec<usize>,
}

/// Source joint for each of the 25 model joints, by anatomical
/// correspondence between the 32-joint capture layout and the 25-joint
/// graph layout. Dropped: both clavicles, nose, eyes and ears.
pub const DUET_TO_MODEL_JOINTS: [usize; MODEL_JOINTS] = [
    0,  // spine base        <- pelvis
    1,  // spine mid         <- spine navel
    3,  // neck              <- neck
    26, // head              <- head
    5,  // left shoulder
    6,  // left elbow
    7,  // left wrist
    8,  // left hand
    12, // right shoulder
    13, // right elbow
    14, // right wrist
    15, // right hand
    18, // left hip
    19, // left knee
    20, // left ankle
    21, // left foot
    22, // right hip
    23, // right knee
    24, // right ankle
    25, // right foot
    2,  // spine shoulder    <- spine chest
    9,  // left hand tip
    10, // left thumb
    16, // right hand tip
    17, // right thumb
];

impl JointMap {
    pub fn new(source_joints: usize, indices: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; source_joints];
        for &i in &indices {
            if i >= source_joints {
                return Err(CoreError::Config(format!("joint index {i} out of range 0..{source_joints}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(CoreError::Config(format!("joint index {i} listed twice")));
            }
        }
        if indices.is_empty() {
            return Err(CoreError::Config("joint map is empty".into()));
        }
        Ok(Self { source_joints, indices })
    }

    pub fn duet_default() -> Self {
        Self::new(RAW_JOINTS, DUET_TO_MODEL_JOINTS.to_vec()).expect("default joint map is valid")
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn source_joints(&self) -> usize {
        self.source_joints
    }
}
