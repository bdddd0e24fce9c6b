//! ST-GCN activity classifier and transfer-feature extraction.
//!
//! Input layout is `(N, M, T, V, C)`: samples, persons, frames, joints,
//! coordinates. Both persons share every weight; the last activation map is
//! max-pooled over persons, so the output does not depend on person order.

mod block;
mod gcn;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use kinesics_nn::layers::{BatchNorm, ConvGeometry, GlobalAvgPool, Linear};
use kinesics_nn::{argmax, Layer, Param, Parameterized, Real, Tensor};

pub use block::{BlockSpec, StGcnBlock};
pub use gcn::GraphConv;

use crate::dataset::{DatasetBundle, SkeletonSequence, COORDS, MODEL_JOINTS, PERSONS};
use crate::error::{CoreError, Result};
use crate::graph::{build_named_graph, SkeletonGraph, SkeletonLayout};

/// Which joint layout the graph is built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayoutSpec {
    Body25,
    Chain { joints: usize },
}

impl LayoutSpec {
    pub fn layout(&self) -> SkeletonLayout {
        match self {
            LayoutSpec::Body25 => SkeletonLayout::body25(),
            LayoutSpec::Chain { joints } => SkeletonLayout::chain(*joints),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub num_classes: usize,
    pub in_channels: usize,
    pub frames: usize,
    pub persons: usize,
    pub layout: LayoutSpec,
    pub partition: String,
    pub stages: Vec<StageSpec>,
    pub temporal_kernel: usize,
    pub dropout: f64,
    pub edge_importance: bool,
    /// Translate every sequence so person 0's mean pelvis sits at the origin.
    pub center_pelvis: bool,
    pub pelvis_joint: usize,
}

impl BackboneConfig {
    /// Ten blocks, 64-64-64-64-128-128-128-256-256-256, stride 2 entering the
    /// 128 and 256 stages, temporal kernel 9, 64 frames.
    pub fn reference(num_classes: usize) -> Self {
        let stages = [64, 64, 64, 64, 128, 128, 128, 256, 256, 256]
            .iter()
            .enumerate()
            .map(|(i, &channels)| StageSpec { channels, stride: if i == 4 || i == 7 { 2 } else { 1 } })
            .collect();
        Self {
            num_classes,
            in_channels: COORDS,
            frames: 64,
            persons: PERSONS,
            layout: LayoutSpec::Body25,
            partition: "spatial".into(),
            stages,
            temporal_kernel: 9,
            dropout: 0.0,
            edge_importance: true,
            center_pelvis: true,
            pelvis_joint: 0,
        }
    }

    /// Four narrow blocks over 32 frames; sized for CPU-only test runs.
    pub fn compact(num_classes: usize) -> Self {
        let stages = [(16, 1), (32, 2), (32, 1), (64, 2)]
            .iter()
            .map(|&(channels, stride)| StageSpec { channels, stride })
            .collect();
        Self { frames: 32, stages, ..Self::reference(num_classes) }
    }

    pub fn joints(&self) -> usize {
        match &self.layout {
            LayoutSpec::Body25 => MODEL_JOINTS,
            LayoutSpec::Chain { joints } => *joints,
        }
    }

    /// `(C', T', V)` of the transfer feature map.
    pub fn feature_shape(&self) -> [usize; 3] {
        let mut t = self.frames;
        for s in &self.stages {
            t = ConvGeometry::temporal(1, 1, self.temporal_kernel, s.stride).output_hw(t, 1).0;
        }
        [self.stages.last().map_or(0, |s| s.channels), t, self.joints()]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.stages.is_empty() {
            return bad("backbone needs at least one block".into());
        }
        if self.stages.iter().any(|s| s.channels == 0 || s.stride == 0) {
            return bad("block channels and strides must be positive".into());
        }
        if self.temporal_kernel % 2 == 0 {
            return bad(format!("temporal kernel must be odd, got {}", self.temporal_kernel));
        }
        if self.frames == 0 || self.persons == 0 || self.in_channels == 0 {
            return bad("input frames, persons and channels must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.center_pelvis && self.pelvis_joint >= self.joints() {
            return bad(format!("pelvis joint {} outside 0..{}", self.pelvis_joint, self.joints()));
        }
        Ok(())
    }

    pub fn graph(&self) -> Result<SkeletonGraph> {
        build_named_graph(&self.layout.layout(), &self.partition)
    }

    /// Resample to the configured length and apply the configured centering.
    pub fn prepare(&self, seq: &SkeletonSequence) -> Result<SkeletonSequence> {
        let seq = if seq.frames() == self.frames { seq.clone() } else { seq.resample_time(self.frames)? };
        Ok(if self.center_pelvis { seq.center_on_pelvis(self.pelvis_joint) } else { seq })
    }

    /// Check a prepared sequence against the input shape, naming the first
    /// axis that disagrees.
    pub fn check_input(&self, seq: &SkeletonSequence) -> Result<()> {
        let expected = [("frames", self.frames), ("persons", self.persons), ("joints", self.joints()), ("coords", self.in_channels)];
        for ((axis, want), got) in expected.into_iter().zip(seq.shape()) {
            if want != got {
                return Err(CoreError::Shape { axis, expected: want, actual: got });
            }
        }
        Ok(())
    }

    /// Stack prepared sequences into an `(N, M, T, V, C)` tensor.
    pub fn batch_input<R: Real>(&self, seqs: &[&SkeletonSequence]) -> Result<Tensor<R>> {
        let mut data = Vec::with_capacity(seqs.iter().map(|s| s.flatten().len()).sum());
        for s in seqs {
            self.check_input(s)?;
            // Sequences are stored (T, M, V, C); the model wants persons outermost.
            for m in 0..s.persons() {
                for t in 0..s.frames() {
                    data.extend(s.person_frame(t, m).iter().map(|x| R::of(*x as f64)));
                }
            }
        }
        Ok(Tensor::from_vec(&[seqs.len(), self.persons, self.frames, self.joints(), self.in_channels], data)?)
    }
}

/// Outputs of one batched forward pass.
#[derive(Debug, Clone)]
pub struct BackboneOutput<R> {
    /// `(N, num_classes)`.
    pub logits: Tensor<R>,
    /// `(N, C', T', V)`, the last activation map after the person max.
    pub features: Tensor<R>,
    /// `(N, C')`, global average of `features`.
    pub pooled: Tensor<R>,
}

#[derive(Debug, Clone)]
pub struct Backbone<R: Real> {
    config: BackboneConfig,
    data_bn: BatchNorm<R>,
    blocks: Vec<StGcnBlock<R>>,
    gap: GlobalAvgPool,
    fc: Linear<R>,
    /// Winning person per feature element, from the last forward pass.
    person_choice: Vec<u8>,
    act_shape: Vec<usize>,
}

impl<R: Real> Backbone<R> {
    pub fn new(config: &BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let graph = config.graph()?;
        let partitions = graph.partition_tensor::<R>();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = config.joints();
        let mut blocks = Vec::with_capacity(config.stages.len());
        let mut cin = config.in_channels;
        for (i, stage) in config.stages.iter().enumerate() {
            let spec = BlockSpec {
                in_channels: cin,
                out_channels: stage.channels,
                stride: stage.stride,
                temporal_kernel: config.temporal_kernel,
                dropout: config.dropout,
                edge_importance: config.edge_importance,
                residual: i > 0,
            };
            let dropout_seed = seed.wrapping_add(1 + i as u64);
            blocks.push(StGcnBlock::new(&format!("blocks.{i}"), &spec, partitions.clone(), dropout_seed, &mut rng));
            cin = stage.channels;
        }
        Ok(Self {
            config: config.clone(),
            data_bn: BatchNorm::new("data_bn", v * config.in_channels),
            blocks,
            gap: GlobalAvgPool::new(),
            fc: Linear::new("fc", cin, config.num_classes, &mut rng),
            person_choice: Vec::new(),
            act_shape: Vec::new(),
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// Stack prepared sequences into an `(N, M, T, V, C)` tensor.
    pub fn batch_input(&self, seqs: &[&SkeletonSequence]) -> Result<Tensor<R>> {
        self.config.batch_input(seqs)
    }

    pub fn forward(&mut self, x: &Tensor<R>, train: bool) -> Result<BackboneOutput<R>> {
        let c = &self.config;
        let dims = [("persons", c.persons), ("frames", c.frames), ("joints", c.joints()), ("coords", c.in_channels)];
        if x.shape().len() != 5 {
            return Err(CoreError::Shape { axis: "rank", expected: 5, actual: x.shape().len() });
        }
        for (i, (axis, want)) in dims.into_iter().enumerate() {
            if x.dim(i + 1) != want {
                return Err(CoreError::Shape { axis, expected: want, actual: x.dim(i + 1) });
            }
        }
        let (n, m, t, v, ch) = (x.dim(0), c.persons, c.frames, c.joints(), c.in_channels);
        let h = x.clone().reshape(&[n * m, t, v * ch])?.permute(&[0, 2, 1]);
        let h = self.data_bn.forward(&h, train)?;
        let mut h = h.reshape(&[n * m, v, ch, t])?.permute(&[0, 2, 3, 1]);
        for block in &mut self.blocks {
            h = block.forward(&h, train)?;
        }
        let features = self.max_over_persons(&h, n);
        let pooled = self.gap.forward(&features, train)?;
        let logits = self.fc.forward(&pooled, train)?;
        Ok(BackboneOutput { logits, features, pooled })
    }

    fn max_over_persons(&mut self, act: &Tensor<R>, n: usize) -> Tensor<R> {
        let m = self.config.persons;
        let inner = act.len() / (n * m).max(1);
        let mut out = Vec::with_capacity(n * inner);
        self.person_choice.clear();
        for s in 0..n {
            for i in 0..inner {
                let (mut best, mut who) = (act.data()[s * m * inner + i], 0u8);
                for p in 1..m {
                    let v = act.data()[(s * m + p) * inner + i];
                    if v > best {
                        best = v;
                        who = p as u8;
                    }
                }
                out.push(best);
                self.person_choice.push(who);
            }
        }
        self.act_shape = act.shape().to_vec();
        let mut shape = act.shape().to_vec();
        shape[0] = n;
        Tensor::from_vec(&shape, out).expect("person max shape")
    }

    /// Accumulate parameter gradients for `dlogits` from the last forward.
    pub fn backward(&mut self, dlogits: &Tensor<R>) {
        let dpooled = self.fc.backward(dlogits);
        let dfeat = self.gap.backward(&dpooled);
        let m = self.config.persons;
        let inner = dfeat.len() / dfeat.dim(0).max(1);
        let mut dact = Tensor::zeros(&self.act_shape);
        for (j, (g, who)) in dfeat.data().iter().zip(&self.person_choice).enumerate() {
            let (s, i) = (j / inner, j % inner);
            dact.data_mut()[(s * m + *who as usize) * inner + i] = *g;
        }
        let mut d = dact;
        for block in self.blocks.iter_mut().rev() {
            d = block.backward(&d);
        }
        let (nm, ch, t, v) = (d.dim(0), d.dim(1), d.dim(2), d.dim(3));
        let d = d.permute(&[0, 3, 1, 2]).reshape(&[nm, v * ch, t]).expect("data bn gradient shape");
        self.data_bn.backward(&d);
    }

    /// Forward a single prepared sequence in evaluation mode.
    pub fn infer(&mut self, seq: &SkeletonSequence) -> Result<BackboneOutput<R>> {
        let x = self.batch_input(&[seq])?;
        self.forward(&x, false)
    }
}

impl<R: Real> Parameterized<R> for Backbone<R> {
    fn visit(&self, f: &mut dyn FnMut(&Param<R>)) {
        self.data_bn.visit(f);
        for b in &self.blocks {
            b.visit(f);
        }
        self.fc.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        self.data_bn.visit_mut(f);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.fc.visit_mut(f);
    }
}

/// Argmax of a logit row; ties go to the lowest index.
pub fn predict_activity<R: Real>(logits: &[R]) -> usize {
    argmax(logits)
}

/// One sample's transfer features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    /// `C' * T' * V` values, row-major.
    pub map: Vec<f32>,
    pub pooled: Vec<f32>,
}

/// Transfer features for a bundle, keyed by sample name, tagged with the
/// checksum of the backbone that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub backbone_checksum: String,
    pub shape: [usize; 3],
    pub features: BTreeMap<String, FeatureMap>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&FeatureMap> {
        self.features.get(name)
    }
}

/// Run every record through the backbone in evaluation mode.
///
/// Each sample is forwarded on its own, so results do not depend on which
/// other records are present. Errors carry the sample name.
pub fn extract_features(backbone: &mut Backbone<f32>, bundle: &DatasetBundle) -> Result<FeatureSet> {
    let shape = backbone.config().feature_shape();
    let mut features = BTreeMap::new();
    for record in &bundle.records {
        let tag = |e: CoreError| CoreError::Sample { sample: record.frame_dir.clone(), source: Box::new(e) };
        let seq = backbone.config().prepare(&record.keypoint).map_err(tag)?;
        let out = backbone.infer(&seq).map_err(tag)?;
        if !out.features.all_finite() {
            return Err(tag(CoreError::Dataset("non-finite backbone features".into())));
        }
        features.insert(
            record.frame_dir.clone(),
            FeatureMap { map: out.features.into_data(), pooled: out.pooled.into_data() },
        );
    }
    Ok(FeatureSet { backbone_checksum: crate::checkpoint::parameter_checksum(backbone), shape, features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use kinesics_nn::gradcheck::check_gradients;
    use kinesics_nn::loss::cross_entropy;
    use rand::Rng;

    fn tiny_config() -> BackboneConfig {
        BackboneConfig {
            num_classes: 3,
            frames: 4,
            layout: LayoutSpec::Chain { joints: 5 },
            stages: vec![StageSpec { channels: 4, stride: 1 }, StageSpec { channels: 8, stride: 2 }],
            temporal_kernel: 3,
            center_pelvis: false,
            ..BackboneConfig::reference(3)
        }
    }

    fn random_seq(cfg: &BackboneConfig, seed: u64) -> SkeletonSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [cfg.frames, cfg.persons, cfg.joints(), cfg.in_channels];
        let data = (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SkeletonSequence::new(shape, data).unwrap()
    }

    #[test]
    fn reference_feature_shape() {
        assert_eq!(BackboneConfig::reference(12).feature_shape(), [256, 16, 25]);
        assert_eq!(BackboneConfig::compact(12).feature_shape(), [64, 8, 25]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = tiny_config();
        let mut model = Backbone::<f64>::new(&cfg, 7).unwrap();
        let seqs: Vec<SkeletonSequence> = (0..3).map(|i| random_seq(&cfg, 100 + i)).collect();
        let refs: Vec<&SkeletonSequence> = seqs.iter().collect();
        let x = model.batch_input(&refs).unwrap();
        let targets = [0, 2, 1];
        let report = check_gradients(
            &mut model,
            |m, backward| {
                let out = m.forward(&x, true).unwrap();
                let (loss, d) = cross_entropy(&out.logits, &targets, None).unwrap();
                if backward {
                    m.backward(&d);
                }
                loss
            },
            1e-6,
            1e-6,
        );
        assert!(report.passes(1e-3), "{report:?}");
    }

    #[test]
    fn person_swap_leaves_logits_unchanged() {
        let cfg = tiny_config();
        let mut model = Backbone::<f32>::new(&cfg, 3).unwrap();
        let seq = random_seq(&cfg, 1);
        let a = model.infer(&seq).unwrap();
        let b = model.infer(&seq.swap_persons()).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn zero_input_is_finite_and_repeatable() {
        let cfg = tiny_config();
        let mut model = Backbone::<f32>::new(&cfg, 3).unwrap();
        let zero = SkeletonSequence::zeros([cfg.frames, cfg.persons, cfg.joints(), cfg.in_channels]);
        let a = model.infer(&zero).unwrap();
        assert!(a.logits.all_finite() && a.features.all_finite());
        let b = model.infer(&zero).unwrap();
        assert_eq!(a.logits.data(), b.logits.data());
        let x = model.batch_input(&[&zero, &zero]).unwrap();
        assert!(model.forward(&x, true).unwrap().logits.all_finite());
    }

    #[test]
    fn batched_matches_single() {
        let cfg = tiny_config();
        let mut model = Backbone::<f32>::new(&cfg, 3).unwrap();
        let seqs: Vec<SkeletonSequence> = (0..4).map(|i| random_seq(&cfg, i)).collect();
        let refs: Vec<&SkeletonSequence> = seqs.iter().collect();
        let batched = model.forward(&model.batch_input(&refs).unwrap(), false).unwrap();
        let per = batched.features.len() / 4;
        for (i, s) in seqs.iter().enumerate() {
            let single = model.infer(s).unwrap();
            for (a, b) in single.features.data().iter().zip(&batched.features.data()[i * per..]) {
                assert!((a - b).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn shape_errors_name_the_axis() {
        let cfg = tiny_config();
        let model = Backbone::<f32>::new(&cfg, 3).unwrap();
        let bad = SkeletonSequence::zeros([cfg.frames, cfg.persons, 6, cfg.in_channels]);
        match model.batch_input(&[&bad]) {
            Err(CoreError::Shape { axis, expected, actual }) => assert_eq!((axis, expected, actual), ("joints", 5, 6)),
            other => panic!("unexpected {other:?}"),
        }
        let short = SkeletonSequence::zeros([3, cfg.persons, 5, cfg.in_channels]);
        assert!(matches!(model.batch_input(&[&short]), Err(CoreError::Shape { axis: "frames", .. })));
    }

    #[test]
    fn prediction_tie_break() {
        assert_eq!(predict_activity(&[0.1f32, 2.0, -1.0]), 1);
        assert_eq!(predict_activity(&[0.5f32; 4]), 0);
        let p = kinesics_nn::softmax(&[0.1f32, 2.0, -1.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}
