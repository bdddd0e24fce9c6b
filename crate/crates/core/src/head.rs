//! CNN that maps frozen backbone feature maps to kinesic categories.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use kinesics_nn::layers::{Conv2d, ConvGeometry, Dropout, GlobalAvgPool, Linear, MaxPool2d, Relu};
use kinesics_nn::{argmax, Layer, Param, Parameterized, Real, Tensor};

use crate::backbone::{Backbone, FeatureMap};
use crate::error::{CoreError, Result};
use crate::taxonomy::{ActivityLabel, KinesicCategory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    /// `(C', T', V)` of the incoming feature map.
    pub input_shape: [usize; 3],
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub dropout: f64,
    pub num_categories: usize,
}

impl HeadConfig {
    /// Two 3x3 conv stages (128, 64), dropout 0.5.
    pub fn reference(input_shape: [usize; 3], num_categories: usize) -> Self {
        Self { input_shape, conv_channels: vec![128, 64], kernel: 3, dropout: 0.5, num_categories }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_categories < 2 {
            return Err(CoreError::Config(format!("num_categories must be >= 2, got {}", self.num_categories)));
        }
        if self.input_shape.contains(&0) || self.conv_channels.contains(&0) {
            return Err(CoreError::Config(format!("degenerate head shape {:?} / {:?}", self.input_shape, self.conv_channels)));
        }
        if self.kernel % 2 == 0 {
            return Err(CoreError::Config(format!("head kernel must be odd, got {}", self.kernel)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Stack feature maps into an `(N, C', T', V)` tensor.
    pub fn batch_input<R: Real>(&self, maps: &[&FeatureMap]) -> Result<Tensor<R>> {
        let want: usize = self.input_shape.iter().product();
        let mut data = Vec::with_capacity(want * maps.len());
        for m in maps {
            if m.map.len() != want {
                return Err(CoreError::Shape { axis: "feature map", expected: want, actual: m.map.len() });
            }
            data.extend(m.map.iter().map(|x| R::of(*x as f64)));
        }
        let [c, t, v] = self.input_shape;
        Ok(Tensor::from_vec(&[maps.len(), c, t, v], data)?)
    }
}

/// Whether the head predicts all five categories or only those a subset
/// actually contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryMode {
    #[default]
    Present,
    All,
}

/// Head output index to kinesic category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMapping {
    pub mode: CategoryMode,
    pub categories: Vec<KinesicCategory>,
}

impl CategoryMapping {
    pub fn for_labels(labels: &[ActivityLabel], mode: CategoryMode) -> Self {
        let categories = match mode {
            CategoryMode::All => KinesicCategory::ALL.to_vec(),
            CategoryMode::Present => {
                let mut cats: Vec<KinesicCategory> = labels.iter().map(|l| l.category()).collect();
                cats.sort();
                cats.dedup();
                cats
            }
        };
        Self { mode, categories }
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn index_of(&self, category: KinesicCategory) -> Option<usize> {
        self.categories.iter().position(|c| *c == category)
    }

    pub fn category(&self, index: usize) -> KinesicCategory {
        self.categories[index]
    }
}

#[derive(Debug, Clone)]
struct ConvStage<R: Real> {
    conv: Conv2d<R>,
    relu: Relu,
    pool: MaxPool2d,
}

#[derive(Debug, Clone)]
pub struct KinesicsHead<R: Real> {
    config: HeadConfig,
    stages: Vec<ConvStage<R>>,
    gap: GlobalAvgPool,
    dropout: Dropout,
    fc: Linear<R>,
}

impl<R: Real> KinesicsHead<R> {
    pub fn new(config: &HeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = config.input_shape[0];
        let mut stages = Vec::new();
        for (i, &c) in config.conv_channels.iter().enumerate() {
            let mut conv = Conv2d::new(&format!("head.conv{i}"), ConvGeometry::square(cin, c, config.kernel), &mut rng);
            conv.needs_input_grad = i > 0;
            stages.push(ConvStage { conv, relu: Relu::new(), pool: MaxPool2d::new() });
            cin = c;
        }
        Ok(Self {
            config: config.clone(),
            stages,
            gap: GlobalAvgPool::new(),
            dropout: Dropout::new(config.dropout, seed.wrapping_add(1)),
            fc: Linear::new("head.fc", cin, config.num_categories, &mut rng),
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    /// Stack feature maps into an `(N, C', T', V)` tensor.
    pub fn batch_input(&self, maps: &[&FeatureMap]) -> Result<Tensor<R>> {
        self.config.batch_input(maps)
    }

    pub fn forward(&mut self, x: &Tensor<R>, train: bool) -> Result<Tensor<R>> {
        let [c, t, v] = self.config.input_shape;
        if x.shape().len() != 4 {
            return Err(CoreError::Shape { axis: "rank", expected: 4, actual: x.shape().len() });
        }
        for (axis, want, got) in [("channels", c, x.dim(1)), ("frames", t, x.dim(2)), ("joints", v, x.dim(3))] {
            if want != got {
                return Err(CoreError::Shape { axis, expected: want, actual: got });
            }
        }
        let mut h = x.clone();
        for s in &mut self.stages {
            h = s.conv.forward(&h, train)?;
            h = s.relu.forward(&h, train)?;
            h = s.pool.forward(&h, train)?;
        }
        let h = self.gap.forward(&h, train)?;
        let h = self.dropout.forward(&h, train)?;
        Ok(self.fc.forward(&h, train)?)
    }

    pub fn backward(&mut self, dlogits: &Tensor<R>) {
        let d = self.fc.backward(dlogits);
        let d = self.dropout.backward(&d);
        let mut d = self.gap.backward(&d);
        for s in self.stages.iter_mut().rev() {
            d = s.pool.backward(&d);
            d = s.relu.backward(&d);
            d = s.conv.backward(&d);
        }
    }

    pub fn infer(&mut self, features: &FeatureMap) -> Result<Tensor<R>> {
        let x = self.batch_input(&[features])?;
        self.forward(&x, false)
    }
}

impl<R: Real> Parameterized<R> for KinesicsHead<R> {
    fn visit(&self, f: &mut dyn FnMut(&Param<R>)) {
        for s in &self.stages {
            s.conv.visit(f);
        }
        self.fc.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        for s in &mut self.stages {
            s.conv.visit_mut(f);
        }
        self.fc.visit_mut(f);
    }
}

/// Category for one logit row; ties go to the lowest index.
pub fn predict_kinesic<R: Real>(logits: &[R], mapping: &CategoryMapping) -> KinesicCategory {
    mapping.category(argmax(logits))
}

/// Frozen backbone feeding a trainable head. Only the head's parameters are
/// visible to optimizers; gradients stop at the feature map.
#[derive(Debug, Clone)]
pub struct TransferModel<R: Real> {
    pub backbone: Backbone<R>,
    pub head: KinesicsHead<R>,
}

impl<R: Real> TransferModel<R> {
    pub fn new(backbone: Backbone<R>, head: KinesicsHead<R>) -> Result<Self> {
        let produced = backbone.config().feature_shape();
        if produced != head.config().input_shape {
            return Err(CoreError::Config(format!(
                "head expects features {:?}, backbone produces {produced:?}",
                head.config().input_shape
            )));
        }
        Ok(Self { backbone, head })
    }

    /// Backbone in evaluation mode, head in the requested mode.
    pub fn forward(&mut self, x: &Tensor<R>, train: bool) -> Result<Tensor<R>> {
        let features = self.backbone.forward(x, false)?.features;
        self.head.forward(&features, train)
    }

    pub fn backward(&mut self, dlogits: &Tensor<R>) {
        self.head.backward(dlogits);
    }
}

impl<R: Real> Parameterized<R> for TransferModel<R> {
    fn visit(&self, f: &mut dyn FnMut(&Param<R>)) {
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        self.head.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kinesics_nn::gradcheck::check_gradients;
    use kinesics_nn::loss::cross_entropy;
    use rand::Rng;

    fn tiny() -> HeadConfig {
        HeadConfig { input_shape: [3, 4, 5], conv_channels: vec![4, 3], kernel: 3, dropout: 0.0, num_categories: 3 }
    }

    fn random_maps(cfg: &HeadConfig, n: usize, seed: u64) -> Vec<FeatureMap> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len: usize = cfg.input_shape.iter().product();
        (0..n)
            .map(|_| FeatureMap { map: (0..len).map(|_| rng.gen_range(0.0..2.0)).collect(), pooled: vec![] })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = tiny();
        let mut head = KinesicsHead::<f64>::new(&cfg, 5).unwrap();
        let maps = random_maps(&cfg, 3, 9);
        let x = head.batch_input(&maps.iter().collect::<Vec<_>>()).unwrap();
        let targets = [2, 0, 1];
        let weights = [0.5, 1.0, 2.0];
        let report = check_gradients(
            &mut head,
            |h, backward| {
                let logits = h.forward(&x, true).unwrap();
                let (loss, d) = cross_entropy(&logits, &targets, Some(&weights)).unwrap();
                if backward {
                    h.backward(&d);
                }
                loss
            },
            1e-6,
            1e-6,
        );
        assert!(report.passes(1e-3), "{report:?}");
    }

    #[test]
    fn zero_features_give_finite_repeatable_logits() {
        let cfg = HeadConfig::reference([8, 4, 5], 5);
        let mut head = KinesicsHead::<f32>::new(&cfg, 1).unwrap();
        let zero = FeatureMap { map: vec![0.0; 160], pooled: vec![0.0; 8] };
        let a = head.infer(&zero).unwrap();
        assert!(a.all_finite());
        assert_eq!(a.data(), head.infer(&zero).unwrap().data());
        let p = kinesics_nn::softmax(a.data());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn uniform_logits_predict_emblem() {
        let all = CategoryMapping::for_labels(&[], CategoryMode::All);
        assert_eq!(predict_kinesic(&[0.0f32; 5], &all), KinesicCategory::Emblem);
    }

    #[test]
    fn present_mode_keeps_only_subset_categories() {
        let labels: Vec<ActivityLabel> = [2, 4, 8, 11].iter().map(|&l| ActivityLabel::new(l).unwrap()).collect();
        let m = CategoryMapping::for_labels(&labels, CategoryMode::Present);
        let mut expected: Vec<KinesicCategory> = labels.iter().map(|l| l.category()).collect();
        expected.sort();
        expected.dedup();
        assert_eq!(m.categories, expected);
        assert!(m.len() >= 2 && m.len() <= 5);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut head = KinesicsHead::<f32>::new(&tiny(), 1).unwrap();
        let wrong = FeatureMap { map: vec![0.0; 7], pooled: vec![] };
        assert!(matches!(head.infer(&wrong), Err(CoreError::Shape { .. })));
        let x = Tensor::<f32>::zeros(&[1, 3, 4, 6]);
        assert!(matches!(head.forward(&x, false), Err(CoreError::Shape { axis: "joints", .. })));
    }
}
