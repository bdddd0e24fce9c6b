//! Metrics, confusion matrices and the five-subset experiment harness.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{extract_features, predict_activity, BackboneConfig};
use crate::blob::write_atomic;
use crate::checkpoint::parameter_checksum;
use crate::dataset::DatasetBundle;
use crate::error::{CoreError, Result};
use crate::head::{predict_kinesic, CategoryMapping, CategoryMode, HeadConfig};
use crate::taxonomy::{kinesic_of, ActivityLabel, KinesicCategory, NUM_ACTIVITIES, NUM_CATEGORIES};
use crate::training::{train_backbone, train_head, HeadData, TrainConfig, TrainReport};

/// Activity labels of each evaluated subset, keyed by subset size.
pub const SUBSETS: [(usize, &[usize]); 5] = [
    (4, &[2, 4, 8, 11]),
    (6, &[2, 4, 5, 7, 8, 11]),
    (8, &[0, 2, 4, 6, 7, 8, 9, 11]),
    (10, &[0, 1, 2, 3, 5, 6, 7, 8, 10, 11]),
    (12, &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]),
];

/// Published `(subset, backbone %, head %)` results used for parity flags.
pub const REFERENCE_ACCURACY: [(usize, f64, f64); 5] =
    [(4, 77.0, 85.0), (6, 75.0, 81.0), (8, 70.0, 70.0), (10, 67.0, 58.0), (12, 55.0, 48.0)];

/// Half-width of the parity band around a reference cell, in percentage points.
pub const PARITY_BAND: f64 = 10.0;

pub fn subset_labels(subset: usize) -> Result<&'static [usize]> {
    SUBSETS
        .iter()
        .find(|(s, _)| *s == subset)
        .map(|(_, l)| *l)
        .ok_or_else(|| CoreError::Config(format!("{subset} is not an evaluated subset (expected 4, 6, 8, 10 or 12)")))
}

pub fn reference_accuracy(subset: usize) -> Option<(f64, f64)> {
    REFERENCE_ACCURACY.iter().find(|(s, _, _)| *s == subset).map(|&(_, b, h)| (b, h))
}

/// Percent of positions where `predictions` equals `labels`.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(CoreError::Metric(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(CoreError::Metric("accuracy of an empty set".into()));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * correct as f64 / labels.len() as f64)
}

/// Square count matrix; entry `(i, j)` counts samples of true class `i`
/// predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth * self.classes + predicted]
    }

    pub fn row(&self, truth: usize) -> &[usize] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        (0..self.classes).map(|i| self.row(i).iter().sum()).collect()
    }

    /// `100 * trace / total`; `None` when empty.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| 100.0 * self.trace() as f64 / total as f64)
    }

    /// Merge classes through `group`, which maps each class to one of
    /// `groups` coarser classes.
    pub fn aggregate(&self, groups: usize, group: impl Fn(usize) -> usize) -> Result<Self> {
        let mut out = Self::zeros(groups);
        for i in 0..self.classes {
            for j in 0..self.classes {
                let (gi, gj) = (group(i), group(j));
                if gi >= groups || gj >= groups {
                    return Err(CoreError::Metric(format!("class {i} or {j} mapped outside {groups} groups")));
                }
                out.counts[gi * groups + gj] += self.get(i, j);
            }
        }
        Ok(out)
    }
}

pub fn confusion_matrix(predictions: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(CoreError::Metric(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(CoreError::Metric(format!("value {} outside {classes} classes", p.max(l))));
        }
        cm.counts[l * classes + p] += 1;
    }
    Ok(cm)
}

/// Model sizes for an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-size backbone, 80/50 epochs.
    #[default]
    Reference,
    /// Narrow backbone on 32 frames, 30 epochs per stage; sized for CI.
    Compact,
}

/// Everything needed to run one subset end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub subset_id: usize,
    pub labels: Vec<usize>,
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
    pub backbone_training: TrainConfig,
    pub head_training: TrainConfig,
    pub category_mode: CategoryMode,
    /// Seeds both training stages; the stage configs' own seeds are overwritten.
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn new(subset_id: usize, preset: Preset, seed: u64) -> Result<Self> {
        let labels = subset_labels(subset_id)?.to_vec();
        let category_mode = CategoryMode::Present;
        let categories = category_mapping(&labels, category_mode)?.len();
        let (backbone, epochs) = match preset {
            Preset::Reference => (BackboneConfig::reference(labels.len()), None),
            Preset::Compact => (BackboneConfig::compact(labels.len()), Some(30)),
        };
        let head = HeadConfig::reference(backbone.feature_shape(), categories);
        let mut backbone_training = TrainConfig::backbone();
        let mut head_training = TrainConfig::head();
        if let Some(e) = epochs {
            backbone_training.epochs = e;
            head_training.epochs = e;
        }
        Ok(Self { subset_id, labels, backbone, head, backbone_training, head_training, category_mode, seed })
    }

    /// Check that the parts agree with each other.
    pub fn validate(&self) -> Result<()> {
        let expected = subset_labels(self.subset_id)?;
        if self.labels != expected {
            return Err(CoreError::Config(format!(
                "subset {} must use labels {expected:?}, got {:?}",
                self.subset_id, self.labels
            )));
        }
        self.backbone.validate()?;
        self.head.validate()?;
        self.backbone_training.validate()?;
        self.head_training.validate()?;
        if self.backbone.num_classes != self.labels.len() {
            return Err(CoreError::Config(format!(
                "backbone has {} outputs for {} activities",
                self.backbone.num_classes,
                self.labels.len()
            )));
        }
        if self.head.input_shape != self.backbone.feature_shape() {
            return Err(CoreError::Config(format!(
                "head input {:?} does not match backbone features {:?}",
                self.head.input_shape,
                self.backbone.feature_shape()
            )));
        }
        let categories = category_mapping(&self.labels, self.category_mode)?.len();
        if self.head.num_categories != categories {
            return Err(CoreError::Config(format!(
                "head has {} outputs for {categories} categories",
                self.head.num_categories
            )));
        }
        Ok(())
    }

    /// Stable identifier of this spec applied to a bundle.
    pub fn experiment_hash(&self, bundle_checksum: &str) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("spec serializes"));
        h.update([0u8]);
        h.update(bundle_checksum.as_bytes());
        hex::encode(&h.finalize()[..8])
    }
}

/// Head output mapping for a set of activity labels.
pub fn category_mapping(labels: &[usize], mode: CategoryMode) -> Result<CategoryMapping> {
    let labels = labels.iter().map(|&l| ActivityLabel::new(l)).collect::<Result<Vec<_>>>()?;
    Ok(CategoryMapping::for_labels(&labels, mode))
}

/// What is needed to reproduce a result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub experiment: String,
    pub spec: ExperimentSpec,
    pub bundle_checksum: String,
    pub backbone_checksum: String,
    pub head_checksum: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub subset_id: usize,
    pub stgcn_accuracy: f64,
    pub cnn_accuracy: f64,
    /// Over all 12 activities; rows of labels outside the subset are empty.
    pub activity_confusion: ConfusionMatrix,
    /// Head predictions over the five categories.
    pub category_confusion: ConfusionMatrix,
    pub backbone_report: TrainReport,
    pub head_report: TrainReport,
    pub provenance: Provenance,
}

/// Filter, train the backbone, extract features, train the head, and score
/// both stages on the test split. Errors name the failing stage.
pub fn run_experiment(spec: &ExperimentSpec, bundle: &DatasetBundle) -> Result<ExperimentResult> {
    spec.validate().map_err(|e| e.in_stage("configure"))?;
    let wanted: BTreeSet<usize> = spec.labels.iter().copied().collect();
    let subset = bundle.filter_by_labels(&wanted).map_err(|e| e.in_stage("filter"))?;
    let present: BTreeSet<usize> = subset.labels().into_iter().collect();
    if present != wanted {
        let missing: Vec<_> = wanted.difference(&present).collect();
        return Err(CoreError::Dataset(format!("bundle lacks activities {missing:?}")).in_stage("filter"));
    }
    if subset.val_names.is_empty() {
        return Err(CoreError::Dataset("subset has no test records".into()).in_stage("filter"));
    }

    let backbone_training = TrainConfig { seed: spec.seed, ..spec.backbone_training.clone() };
    let mut trained =
        train_backbone(&subset, &spec.backbone, &backbone_training).map_err(|e| e.in_stage("train-backbone"))?;
    let features = extract_features(&mut trained.model, &subset).map_err(|e| e.in_stage("extract-features"))?;

    let mapping = category_mapping(&spec.labels, spec.category_mode)?;
    let head_rows = |names: &[String]| -> Result<Vec<(String, usize)>> {
        names
            .iter()
            .map(|n| {
                let record = subset.record(n).ok_or_else(|| CoreError::Dataset(format!("no record {n}")))?;
                let category = kinesic_of(record.label)?;
                let index = mapping
                    .index_of(category)
                    .ok_or_else(|| CoreError::Dataset(format!("{n}: category {category:?} has no head output")))?;
                Ok((n.clone(), index))
            })
            .collect()
    };
    let data = HeadData {
        train: head_rows(&subset.train_names).map_err(|e| e.in_stage("train-head"))?,
        val: head_rows(&subset.val_names).map_err(|e| e.in_stage("train-head"))?,
    };
    let head_training = TrainConfig { seed: spec.seed, ..spec.head_training.clone() };
    let (mut head, head_report) =
        train_head(&features, &data, &spec.head, &head_training, &trained.model).map_err(|e| e.in_stage("train-head"))?;

    let mut score = || -> Result<(Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>)> {
        let (mut act_pred, mut act_true, mut cat_pred, mut cat_true) = (vec![], vec![], vec![], vec![]);
        for name in &subset.val_names {
            let record = subset.record(name).ok_or_else(|| CoreError::Dataset(format!("no record {name}")))?;
            let seq = spec.backbone.prepare(&record.keypoint)?;
            let logits = trained.model.infer(&seq)?.logits;
            act_pred.push(trained.class_labels[predict_activity(logits.data())]);
            act_true.push(record.label);
            let fmap = features.get(name).ok_or_else(|| CoreError::Dataset(format!("no features for {name}")))?;
            let head_logits = head.infer(fmap)?;
            cat_pred.push(predict_kinesic(head_logits.data(), &mapping).code());
            cat_true.push(kinesic_of(record.label)?.code());
        }
        Ok((act_pred, act_true, cat_pred, cat_true))
    };
    let (act_pred, act_true, cat_pred, cat_true) = score().map_err(|e| e.in_stage("evaluate"))?;
    let activity_confusion = confusion_matrix(&act_pred, &act_true, NUM_ACTIVITIES)?;
    let category_confusion = confusion_matrix(&cat_pred, &cat_true, NUM_CATEGORIES)?;

    let bundle_checksum = bundle.checksum();
    Ok(ExperimentResult {
        subset_id: spec.subset_id,
        stgcn_accuracy: accuracy(&act_pred, &act_true)?,
        cnn_accuracy: accuracy(&cat_pred, &cat_true)?,
        activity_confusion,
        category_confusion,
        backbone_report: trained.report,
        head_report,
        provenance: Provenance {
            experiment: spec.experiment_hash(&bundle_checksum),
            spec: spec.clone(),
            bundle_checksum,
            backbone_checksum: parameter_checksum(&trained.model),
            head_checksum: parameter_checksum(&head),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    })
}

/// Mean accuracies of one subset over seeds, with parity against the
/// published numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSummary {
    pub subset_id: usize,
    pub stgcn_accuracy: f64,
    pub cnn_accuracy: f64,
    pub reference: Option<(f64, f64)>,
    /// Both cells within the parity band; outside it is flagged, not failed.
    pub within_band: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub subsets: Vec<SubsetSummary>,
    /// Backbone accuracy never rises as the subset grows.
    pub stgcn_non_increasing: bool,
    /// Rank correlation between the backbone and head columns.
    pub spearman: Option<f64>,
}

/// Every subset for every seed, then the trend over subset means.
pub fn run_table2(
    bundle: &DatasetBundle,
    seeds: &[u64],
    make_spec: impl Fn(usize, u64) -> Result<ExperimentSpec>,
) -> Result<(Vec<ExperimentResult>, TrendSummary)> {
    if seeds.is_empty() {
        return Err(CoreError::Config("at least one seed is required".into()));
    }
    let mut results = Vec::with_capacity(SUBSETS.len() * seeds.len());
    for (subset, _) in SUBSETS {
        for &seed in seeds {
            let spec = make_spec(subset, seed)?;
            tracing::info!(subset, seed, "running experiment");
            results.push(run_experiment(&spec, bundle)?);
        }
    }
    let summary = summarize(&results)?;
    Ok((results, summary))
}

/// Average per subset (ordered by size) and compute the trend statistics.
pub fn summarize(results: &[ExperimentResult]) -> Result<TrendSummary> {
    if results.is_empty() {
        return Err(CoreError::Metric("no results to summarize".into()));
    }
    let ids: BTreeSet<usize> = results.iter().map(|r| r.subset_id).collect();
    let subsets: Vec<SubsetSummary> = ids
        .into_iter()
        .map(|id| {
            let rows: Vec<_> = results.iter().filter(|r| r.subset_id == id).collect();
            let n = rows.len() as f64;
            let stgcn = rows.iter().map(|r| r.stgcn_accuracy).sum::<f64>() / n;
            let cnn = rows.iter().map(|r| r.cnn_accuracy).sum::<f64>() / n;
            let reference = reference_accuracy(id);
            SubsetSummary {
                subset_id: id,
                stgcn_accuracy: stgcn,
                cnn_accuracy: cnn,
                reference,
                within_band: reference
                    .map(|(b, h)| (stgcn - b).abs() <= PARITY_BAND && (cnn - h).abs() <= PARITY_BAND),
            }
        })
        .collect();
    let stgcn: Vec<f64> = subsets.iter().map(|s| s.stgcn_accuracy).collect();
    let cnn: Vec<f64> = subsets.iter().map(|s| s.cnn_accuracy).collect();
    Ok(TrendSummary { stgcn_non_increasing: non_increasing(&stgcn), spearman: spearman(&stgcn, &cnn), subsets })
}

pub fn non_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}

/// Spearman rank correlation with average ranks for ties. `None` for fewer
/// than two points or a constant column.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - mean) * (y - mean);
        va += (x - mean).powi(2);
        vb += (y - mean).powi(2);
    }
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Files written by [`render_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub table: PathBuf,
    pub summary: PathBuf,
    pub timing: PathBuf,
    pub ledger: PathBuf,
    pub plots: Vec<PathBuf>,
}

pub const RESULTS_TABLE: &str = "results.tsv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const TIMING_FILE: &str = "timing.tsv";
pub const RUN_LEDGER: &str = "runs.jsonl";

/// Write the results table, a text summary, confusion-matrix SVGs and
/// wall-clock timings, and append each result to the run ledger.
///
/// Everything except the timing file and the ledger is a pure function of
/// `results`.
pub fn render_report(results: &[ExperimentResult], out_dir: &Path) -> Result<ReportFiles> {
    if results.is_empty() {
        return Err(CoreError::Metric("no results to render".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| CoreError::io(out_dir, e))?;

    let mut table = String::from("subset\tseed\tactivities\tstgcn_accuracy\tcnn_accuracy\tstgcn_reference\tcnn_reference\texperiment\n");
    let mut timing = String::from("experiment\tbackbone_secs\thead_secs\n");
    for r in results {
        let (rb, rh) = reference_accuracy(r.subset_id).map_or((String::new(), String::new()), |(b, h)| (format!("{b:.1}"), format!("{h:.1}")));
        let labels: Vec<String> = r.provenance.spec.labels.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(
            table,
            "{}\t{}\t{}\t{:.2}\t{:.2}\t{rb}\t{rh}\t{}",
            r.subset_id,
            r.provenance.spec.seed,
            labels.join(","),
            r.stgcn_accuracy,
            r.cnn_accuracy,
            r.provenance.experiment
        );
        let _ = writeln!(
            timing,
            "{}\t{:.3}\t{:.3}",
            r.provenance.experiment, r.backbone_report.wall_clock_secs.0, r.head_report.wall_clock_secs.0
        );
    }

    let summary = summarize(results)?;
    let mut text = String::new();
    for s in &summary.subsets {
        let _ = write!(text, "subset {:>2}: backbone {:6.2}%  head {:6.2}%", s.subset_id, s.stgcn_accuracy, s.cnn_accuracy);
        match (s.reference, s.within_band) {
            (Some((b, h)), Some(ok)) => {
                let flag = if ok { "within" } else { "OUTSIDE" };
                let _ = writeln!(text, "  (reference {b:.0}% / {h:.0}%, {flag} +/-{PARITY_BAND:.0}pp)");
            }
            _ => text.push('\n'),
        }
    }
    if summary.subsets.len() > 1 {
        let rho = summary.spearman.map_or("undefined".to_string(), |r| format!("{r:.3}"));
        let _ = writeln!(
            text,
            "trend: backbone accuracy non-increasing with subset size: {}; spearman(backbone, head) = {rho}",
            if summary.stgcn_non_increasing { "yes" } else { "no" }
        );
    }

    let mut plots = Vec::new();
    for r in results {
        let stem = format!("confusion_{}_s{}", r.subset_id, r.provenance.spec.seed);
        let activity = restrict(&r.activity_confusion, &r.provenance.spec.labels);
        let names: Vec<String> = r.provenance.spec.labels.iter().map(|l| l.to_string()).collect();
        let path = out_dir.join(format!("{stem}_activity.svg"));
        write_atomic(&path, confusion_svg(&activity, &names, "activity").as_bytes())?;
        plots.push(path);
        let cats: Vec<String> = KinesicCategory::ALL.iter().map(|c| c.as_str().to_string()).collect();
        let path = out_dir.join(format!("{stem}_category.svg"));
        write_atomic(&path, confusion_svg(&r.category_confusion, &cats, "category").as_bytes())?;
        plots.push(path);
    }

    let files = ReportFiles {
        table: out_dir.join(RESULTS_TABLE),
        summary: out_dir.join(SUMMARY_FILE),
        timing: out_dir.join(TIMING_FILE),
        ledger: out_dir.join(RUN_LEDGER),
        plots,
    };
    write_atomic(&files.table, table.as_bytes())?;
    write_atomic(&files.summary, text.as_bytes())?;
    write_atomic(&files.timing, timing.as_bytes())?;
    append_ledger(&files.ledger, results)?;
    Ok(files)
}

/// One JSON line per result, each written with a single append.
fn append_ledger(path: &Path, results: &[ExperimentResult]) -> Result<()> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CoreError::io(path, e))?;
    for r in results {
        let mut line = serde_json::to_vec(&serde_json::json!({ "experiment": r.provenance.experiment, "result": r }))?;
        line.push(b'\n');
        file.write_all(&line).map_err(|e| CoreError::io(path, e))?;
    }
    Ok(())
}

fn restrict(cm: &ConfusionMatrix, labels: &[usize]) -> ConfusionMatrix {
    let k = labels.len();
    let mut out = ConfusionMatrix::zeros(k);
    for (i, &a) in labels.iter().enumerate() {
        for (j, &b) in labels.iter().enumerate() {
            out.counts[i * k + j] = cm.get(a, b);
        }
    }
    out
}

fn confusion_svg(cm: &ConfusionMatrix, names: &[String], title: &str) -> String {
    const CELL: usize = 40;
    const MARGIN: usize = 110;
    let k = cm.classes();
    let size = MARGIN + k * CELL + 10;
    let rows = cm.row_sums();
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"16\" font-size=\"13\">{title}: rows true, columns predicted</text>", 10);
    for i in 0..k {
        let y = MARGIN + i * CELL;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>", MARGIN - 6, y + CELL / 2 + 4, names[i]);
        let x = MARGIN + i * CELL + CELL / 2;
        let _ = writeln!(
            s,
            "<text x=\"{x}\" y=\"{}\" transform=\"rotate(-45 {x} {})\">{}</text>",
            MARGIN - 6,
            MARGIN - 6,
            names[i]
        );
        for j in 0..k {
            let count = cm.get(i, j);
            let share = if rows[i] == 0 { 0.0 } else { count as f64 / rows[i] as f64 };
            let shade = 255 - (share * 200.0).round() as u8;
            let _ = writeln!(
                s,
                "<rect x=\"{}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"rgb({shade},{shade},255)\" stroke=\"#999\"/>",
                MARGIN + j * CELL
            );
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{count}</text>",
                MARGIN + j * CELL + CELL / 2,
                y + CELL / 2 + 4
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
