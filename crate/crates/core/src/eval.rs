//! k-fold cross-validation of a feature pipeline with built-in classifiers.
//!
//! A pipeline is: optional Fisherfaces reduction, optional SOM prototype
//! features (replace or augment), then a classifier. In `PerFold` leakage
//! mode every fitted step sees only the training slice of each fold; in
//! `Paper` mode the transform is fitted once on all rows before splitting.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureDataset;
use crate::fingerprint::fingerprint;
use crate::fisherfaces::{fit_fisherfaces, FisherModel};
use crate::kmeans::squared_distance;
use crate::som::{augment, fit_som, quantize_replace, SomConfig, SomMap};

pub const VARIANCE_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Fold index of every row.
    pub assignment: Vec<usize>,
    pub seed: u64,
    pub stratified: bool,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded shuffle, then round-robin fold assignment. When stratified, rows are
/// shuffled within each class and the classes are dealt one after another
/// without resetting the round-robin counter, so both the overall and the
/// per-class fold sizes differ by at most one.
pub fn kfold_split(labels: &[usize], k: usize, seed: u64, stratified: bool) -> Result<FoldPlan> {
    let n = labels.len();
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!(
            "fold count {k} must lie in 2..={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<usize> = if stratified {
        let mut classes: Vec<usize> = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let mut order = Vec::with_capacity(n);
        for c in classes {
            let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            members.shuffle(&mut rng);
            order.extend(members);
        }
        order
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    };
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldPlan {
        k,
        assignment,
        seed,
        stratified,
    })
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

/// Normal-vs-abnormal summary with abnormal as the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub true_positive: u64,
    pub false_negative: u64,
    pub true_negative: u64,
    pub false_positive: u64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.correct() as f64 / t as f64,
        }
    }

    pub fn binary(&self, normal: usize) -> BinaryMetrics {
        let mut m = BinaryMetrics {
            true_positive: 0,
            false_negative: 0,
            true_negative: 0,
            false_positive: 0,
            sensitivity: None,
            specificity: None,
        };
        for (t, row) in self.counts.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                match (t == normal, p == normal) {
                    (false, false) => m.true_positive += n,
                    (false, true) => m.false_negative += n,
                    (true, true) => m.true_negative += n,
                    (true, false) => m.false_positive += n,
                }
            }
        }
        let ratio = |a: u64, b: u64| (a + b > 0).then(|| a as f64 / (a + b) as f64);
        m.sensitivity = ratio(m.true_positive, m.false_negative);
        m.specificity = ratio(m.true_negative, m.false_positive);
        m
    }
}

// ---------------------------------------------------------------------------
// Classifiers

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classifier {
    #[serde(rename = "1nn")]
    NearestNeighbor,
    #[serde(rename = "gnb")]
    GaussianNb,
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classifier::NearestNeighbor => "1-NN",
            Classifier::GaussianNb => "GaussianNB",
        })
    }
}

/// Label of the Euclidean-nearest training row; ties go to the earlier row.
pub fn classify_1nn(train: &FeatureDataset, x: &[f64]) -> Result<usize> {
    if train.is_empty() {
        return Err(Error::Empty("1-NN needs training rows".into()));
    }
    if x.len() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            actual: x.len(),
        });
    }
    let mut best = (0, f64::INFINITY);
    for r in &train.rows {
        let d = squared_distance(&r.values, x);
        if d < best.1 {
            best = (r.label, d);
        }
    }
    Ok(best.0)
}

/// Per-class, per-feature normal densities.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianNb {
    /// (class index, log prior, means, variances), ascending class index.
    classes: Vec<(usize, f64, Vec<f64>, Vec<f64>)>,
    dim: usize,
}

impl GaussianNb {
    /// Classes absent from `train` are never predicted. Present classes need
    /// two rows each so a variance exists.
    pub fn fit(train: &FeatureDataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("naive Bayes needs training rows".into()));
        }
        let n = train.len() as f64;
        let mut classes = Vec::new();
        for c in 0..train.class_names.len() {
            let members: Vec<&[f64]> = train
                .rows
                .iter()
                .filter(|r| r.label == c)
                .map(|r| r.values.as_slice())
                .collect();
            match members.len() {
                0 => continue,
                1 => {
                    return Err(Error::TooFewSamples {
                        class: train.class_names[c].clone(),
                        count: 1,
                        required: 2,
                    })
                }
                _ => {}
            }
            let m = members.len() as f64;
            let means: Vec<f64> = (0..train.dim())
                .map(|j| members.iter().map(|v| v[j]).sum::<f64>() / m)
                .collect();
            let vars: Vec<f64> = (0..train.dim())
                .map(|j| {
                    let ss: f64 = members.iter().map(|v| (v[j] - means[j]).powi(2)).sum();
                    (ss / (m - 1.0)).max(VARIANCE_FLOOR)
                })
                .collect();
            classes.push((c, (m / n).ln(), means, vars));
        }
        Ok(Self {
            classes,
            dim: train.dim(),
        })
    }

    pub fn log_posterior(&self, x: &[f64]) -> Result<Vec<(usize, f64)>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        const LN_2PI: f64 = 1.837_877_066_409_345_5;
        Ok(self
            .classes
            .iter()
            .map(|(c, prior, means, vars)| {
                let ll: f64 = x
                    .iter()
                    .zip(means.iter().zip(vars))
                    .map(|(v, (m, s2))| -0.5 * (LN_2PI + s2.ln() + (v - m) * (v - m) / s2))
                    .sum();
                (*c, prior + ll)
            })
            .collect())
    }

    /// Highest posterior; ties go to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let scores = self.log_posterior(x)?;
        let mut best = (scores[0].0, f64::NEG_INFINITY);
        for (c, s) in scores {
            if s > best.1 {
                best = (c, s);
            }
        }
        Ok(best.0)
    }
}

enum Trained<'a> {
    Nearest(&'a FeatureDataset),
    Bayes(GaussianNb),
}

impl Trained<'_> {
    fn predict(&self, x: &[f64]) -> Result<usize> {
        match self {
            Trained::Nearest(ds) => classify_1nn(ds, x),
            Trained::Bayes(m) => m.predict(x),
        }
    }
}

fn train_classifier(kind: Classifier, ds: &FeatureDataset) -> Result<Trained<'_>> {
    Ok(match kind {
        Classifier::NearestNeighbor => Trained::Nearest(ds),
        Classifier::GaussianNb => Trained::Bayes(GaussianNb::fit(ds)?),
    })
}

// ---------------------------------------------------------------------------
// Pipeline

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SomMode {
    Off,
    Replace,
    Augment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageMode {
    PerFold,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub fisher: bool,
    pub som_mode: SomMode,
    pub som: SomConfig,
    pub classifier: Classifier,
}

/// Fitted feature transform: Fisherfaces and/or SOM.
#[derive(Clone, Debug)]
pub struct FittedTransform {
    pub fisher: Option<FisherModel>,
    pub som: Option<SomMap>,
    pub som_mode: SomMode,
}

impl FittedTransform {
    pub fn fit(train: &FeatureDataset, spec: &PipelineSpec) -> Result<Self> {
        let fisher = if spec.fisher {
            let (model, _) = fit_fisherfaces(&train.vectors(), &train.labels())?;
            Some(model)
        } else {
            None
        };
        let mut out = Self {
            fisher,
            som: None,
            som_mode: spec.som_mode,
        };
        if spec.som_mode != SomMode::Off {
            let reduced = out.reduce(train)?;
            out.som = Some(fit_som(&spec.som, &reduced.vectors())?);
        }
        Ok(out)
    }

    fn reduce(&self, ds: &FeatureDataset) -> Result<FeatureDataset> {
        match &self.fisher {
            None => Ok(ds.clone()),
            Some(model) => {
                let values = ds
                    .rows
                    .iter()
                    .map(|r| model.project(&r.values))
                    .collect::<Result<Vec<_>>>()?;
                let names = (1..=model.output_dim()).map(|i| format!("fld{i}")).collect();
                ds.with_values(names, values)
            }
        }
    }

    pub fn apply(&self, ds: &FeatureDataset) -> Result<FeatureDataset> {
        let reduced = self.reduce(ds)?;
        match (&self.som, self.som_mode) {
            (Some(map), SomMode::Replace) => quantize_replace(map, &reduced),
            (Some(map), SomMode::Augment) => augment(&reduced, &quantize_replace(map, &reduced)?),
            _ => Ok(reduced),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fingerprint: String,
    pub spec: PipelineSpec,
    pub leakage: LeakageMode,
    pub folds: usize,
    pub fold_seed: u64,
    pub stratified: bool,
    pub class_names: Vec<String>,
    pub normal_class: usize,
    pub per_fold: Vec<ConfusionMatrix>,
    pub pooled: ConfusionMatrix,
    pub overall_accuracy: f64,
    pub binary: BinaryMetrics,
}

impl EvalReport {
    pub fn sensitivity(&self) -> Option<f64> {
        self.binary.sensitivity
    }

    pub fn specificity(&self) -> Option<f64> {
        self.binary.specificity
    }
}

/// The class treated as negative in sensitivity/specificity: `NORM` when
/// present, else the first class.
pub fn default_normal_class(class_names: &[String]) -> usize {
    class_names.iter().position(|c| c == "NORM").unwrap_or(0)
}

#[derive(Serialize)]
struct EvalParams<'a> {
    spec: &'a PipelineSpec,
    leakage: LeakageMode,
    k: usize,
    seed: u64,
    stratified: bool,
    normal_class: usize,
}

fn evaluate_fold(
    transformed_train: &FeatureDataset,
    transformed_test: &FeatureDataset,
    classifier: Classifier,
    classes: usize,
) -> Result<ConfusionMatrix> {
    let model = train_classifier(classifier, transformed_train)?;
    let mut cm = ConfusionMatrix::new(classes);
    for r in &transformed_test.rows {
        cm.record(r.label, model.predict(&r.values)?);
    }
    Ok(cm)
}

pub fn evaluate_pipeline(
    data: &FeatureDataset,
    spec: &PipelineSpec,
    plan: &FoldPlan,
    leakage: LeakageMode,
    normal_class: Option<usize>,
) -> Result<EvalReport> {
    evaluate_classifiers(data, spec, &[spec.classifier], plan, leakage, normal_class)?
        .pop()
        .expect("one classifier in, one report out")
}

/// Cross-validate several classifiers on one transform. Each fold's transform
/// is fitted once and shared by all classifiers. The outer error covers the
/// transform; the inner ones are per classifier (for instance naive Bayes
/// refusing a class with a single training row while 1-NN succeeds).
/// `spec.classifier` is ignored.
pub fn evaluate_classifiers(
    data: &FeatureDataset,
    spec: &PipelineSpec,
    classifiers: &[Classifier],
    plan: &FoldPlan,
    leakage: LeakageMode,
    normal_class: Option<usize>,
) -> Result<Vec<Result<EvalReport>>> {
    if plan.assignment.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            actual: plan.assignment.len(),
        }
        .context("fold plan size"));
    }
    let classes = data.class_names.len();
    let normal = normal_class.unwrap_or_else(|| default_normal_class(&data.class_names));
    if normal >= classes {
        return Err(Error::InvalidArgument(format!("normal class index {normal} out of range")));
    }

    let mut tested = vec![0usize; data.len()];
    for fold in 0..plan.k {
        for i in plan.test_indices(fold) {
            tested[i] += 1;
        }
    }
    if let Some(i) = tested.iter().position(|&t| t != 1) {
        return Err(Error::InvalidArgument(format!(
            "row {i} tested {} times by the fold plan",
            tested[i]
        )));
    }

    let shared = match leakage {
        LeakageMode::Paper => Some(
            FittedTransform::fit(data, spec)
                .and_then(|t| t.apply(data))
                .map_err(|e| e.context("fitting shared transform"))?,
        ),
        LeakageMode::PerFold => None,
    };

    // [fold][classifier]
    let per_fold = crate::par::map_range(plan.k, |fold| {
        let train_idx = plan.train_indices(fold);
        let test_idx = plan.test_indices(fold);
        let split = match &shared {
            Some(all) => Ok((all.subset(&train_idx), all.subset(&test_idx))),
            None => {
                let train = data.subset(&train_idx);
                FittedTransform::fit(&train, spec).and_then(|t| {
                    // the test slice only ever passes through the fitted transform
                    Ok((t.apply(&train)?, t.apply(&data.subset(&test_idx))?))
                })
            }
        };
        let context = |e: Error| e.context(format!("fold {}", fold + 1));
        split.map_err(context).map(|(tr, te)| {
            classifiers
                .iter()
                .map(|&c| evaluate_fold(&tr, &te, c, classes).map_err(context))
                .collect::<Vec<_>>()
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut folds_by_classifier: Vec<Vec<Result<ConfusionMatrix>>> =
        classifiers.iter().map(|_| Vec::with_capacity(plan.k)).collect();
    for fold in per_fold {
        for (slot, cm) in folds_by_classifier.iter_mut().zip(fold) {
            slot.push(cm);
        }
    }

    Ok(classifiers
        .iter()
        .zip(folds_by_classifier)
        .map(|(&classifier, folds)| {
            let per_fold = folds.into_iter().collect::<Result<Vec<_>>>()?;
            let mut pooled = ConfusionMatrix::new(classes);
            for cm in &per_fold {
                pooled.merge(cm);
            }
            debug_assert_eq!(pooled.total() as usize, data.len());
            let spec = PipelineSpec {
                classifier,
                ..spec.clone()
            };
            let params = EvalParams {
                spec: &spec,
                leakage,
                k: plan.k,
                seed: plan.seed,
                stratified: plan.stratified,
                normal_class: normal,
            };
            Ok(EvalReport {
                fingerprint: fingerprint(&params),
                spec,
                leakage,
                folds: plan.k,
                fold_seed: plan.seed,
                stratified: plan.stratified,
                class_names: data.class_names.clone(),
                normal_class: normal,
                overall_accuracy: pooled.accuracy(),
                binary: pooled.binary(normal),
                per_fold,
                pooled,
            })
        })
        .collect())
}
