//! Two-stage diagnosis: a link problem detector (LPD) followed by a network of
//! independent binary client-fault modules (CFD).

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featsel::{self, FeatselError, SelectionResult, WrapperConfig};
use crate::preprocess::{self, PreprocessError, ScalerParams};
use crate::signature::{self, ClassLabel, SignatureDatabase, SignatureError, CATALOGUE_VERSION};
use crate::svm::{self, KernelSpec, SvmError, TrainedSvm};
use crate::trace::TraceFile;

pub const BUNDLE_FORMAT: &str = "iacd-bundle";
pub const BUNDLE_VERSION: u32 = 1;

/// Candidate LPD feature counts.
pub const LPD_SIZES: [usize; 2] = [25, 75];

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("no healthy-client (CF0) samples to train against")]
    NoHealthyBaseline,
    #[error("no samples of class {0}")]
    MissingClass(ClassLabel),
    #[error("{0} is not a client-fault class")]
    NotAFault(ClassLabel),
    #[error("bundle has no client-fault modules")]
    NoModules,
    #[error("unsupported bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Signature(#[from] SignatureError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Featsel(#[from] FeatselError),
    #[error(transparent)]
    Svm(#[from] SvmError),
}

/// Short name of a client-fault class.
pub fn fault_name(j: u32) -> String {
    match j {
        0 => "Healthy".into(),
        1 => "SACK".into(),
        2 => "DSACK".into(),
        3 => "RBuf".into(),
        4 => "WBuf".into(),
        5 => "R-WBuf".into(),
        j => format!("CF{j}"),
    }
}

/// Kernel family and candidate feature counts of one classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleConfig {
    pub kernel: KernelSpec,
    pub sizes: Vec<usize>,
}

impl ModuleConfig {
    pub fn new(kernel: KernelSpec, sizes: &[usize]) -> Self {
        Self {
            kernel,
            sizes: sizes.to_vec(),
        }
    }

    pub fn lpd_default() -> Self {
        Self::new(KernelSpec::poly(2), &LPD_SIZES)
    }

    /// Default kernel and feature count per fault class.
    pub fn cf_default(j: u32) -> Self {
        match j {
            1 => Self::new(KernelSpec::Linear, &[12]),
            2 => Self::new(KernelSpec::rbf(1.0), &[32]),
            3 => Self::new(KernelSpec::poly(3), &[24]),
            4 => Self::new(KernelSpec::rbf(1.0), &[16]),
            _ => Self::new(KernelSpec::rbf(1.0), &[16]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    /// Cross-validation folds; by default five, fewer for tiny classes.
    pub k_folds: Option<usize>,
    pub lpd: ModuleConfig,
    pub cf: BTreeMap<u32, ModuleConfig>,
    /// Fault classes to build modules for.
    pub fault_classes: Vec<u32>,
    pub c_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub max_iter: usize,
    pub tol: f64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            k_folds: None,
            lpd: ModuleConfig::lpd_default(),
            cf: (1..=4).map(|j| (j, ModuleConfig::cf_default(j))).collect(),
            fault_classes: vec![1, 2, 3, 4],
            c_grid: featsel::default_c_grid(),
            gamma_grid: featsel::default_gamma_grid(),
            max_iter: svm::DEFAULT_MAX_ITER,
            tol: svm::DEFAULT_TOL,
        }
    }

    pub fn module(&self, j: u32) -> ModuleConfig {
        self.cf.get(&j).cloned().unwrap_or_else(|| ModuleConfig::cf_default(j))
    }

    fn wrapper(&self, kernel: KernelSpec, salt: u64) -> WrapperConfig {
        WrapperConfig {
            kernel,
            c_grid: self.c_grid.clone(),
            gamma_grid: self.gamma_grid.clone(),
            max_iter: self.max_iter,
            tol: self.tol,
            seed: self.seed.wrapping_add(salt),
        }
    }
}

/// Summary of the wrapper run that produced a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub k_folds: usize,
    /// Best cross-validation accuracy per candidate feature count.
    pub cv_accuracy: BTreeMap<usize, f64>,
}

impl From<&SelectionResult> for SelectionSummary {
    fn from(r: &SelectionResult) -> Self {
        Self {
            k_folds: r.k_folds,
            cv_accuracy: r.cv_by_size.iter().map(|(q, s)| (*q, s.accuracy)).collect(),
        }
    }
}

/// A binary SVM over a subset of the raw signature features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryModel {
    /// Raw signature indices, in ranking order.
    pub selected_indices: Vec<usize>,
    pub svm: TrainedSvm,
    pub selection: SelectionSummary,
}

impl BinaryModel {
    pub fn q(&self) -> usize {
        self.selected_indices.len()
    }

    fn decision(&self, scaled: &[f64], scaler: &ScalerParams) -> Result<f64, ClassifierError> {
        let x: Vec<f64> = self
            .selected_indices
            .iter()
            .map(|&j| {
                scaler
                    .position(j)
                    .map(|p| scaled[p])
                    .ok_or_else(|| ClassifierError::Bundle(format!("feature {j} is not retained by the scaler")))
            })
            .collect::<Result<_, _>>()?;
        Ok(self.svm.decision_value(&x)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfModuleModel {
    pub fault_class: ClassLabel,
    pub model: BinaryModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierBundle {
    pub format: String,
    pub version: u32,
    pub catalogue_version: String,
    pub scaler: ScalerParams,
    pub lpd: BinaryModel,
    pub cf_modules: Vec<CfModuleModel>,
    /// Combined-fault classes and the modules each is expected to trigger.
    pub combined_classes: BTreeMap<ClassLabel, Vec<ClassLabel>>,
}

fn default_combined() -> BTreeMap<ClassLabel, Vec<ClassLabel>> {
    BTreeMap::from([(ClassLabel::Cf(5), vec![ClassLabel::Cf(3), ClassLabel::Cf(4)])])
}

/// Scaled training rows and ±1 targets for the `positive` vs `negative` subset.
fn subset(
    db: &SignatureDatabase,
    scaler: &ScalerParams,
    positive: ClassLabel,
    negative: ClassLabel,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), ClassifierError> {
    let mut xs = Vec::new();
    let mut y = Vec::new();
    for s in db.signatures() {
        let t = if s.label == positive {
            1.0
        } else if s.label == negative {
            -1.0
        } else {
            continue;
        };
        xs.push(preprocess::apply_scaler(&s.features, scaler)?);
        y.push(t);
    }
    if !y.contains(&1.0) {
        return Err(ClassifierError::MissingClass(positive));
    }
    if !y.contains(&-1.0) {
        return Err(ClassifierError::MissingClass(negative));
    }
    Ok((xs, y))
}

/// Rank, wrapper-select and train one binary model on scaled data.
fn fit_binary(
    xs: &[Vec<f64>],
    y: &[f64],
    scaler: &ScalerParams,
    module: &ModuleConfig,
    cfg: &TrainConfig,
    salt: u64,
) -> Result<BinaryModel, ClassifierError> {
    let (ranking, k) = if y
        .iter()
        .filter(|t| **t > 0.0)
        .count()
        .min(y.iter().filter(|t| **t <= 0.0).count())
        < 2
    {
        // Too few samples for a t-test or folds: rank by mean gap, select on training accuracy.
        (featsel::rank_features(&mean_gaps(xs, y)), 1)
    } else {
        let k = cfg.k_folds.unwrap_or_else(|| featsel::default_folds(y)).max(2);
        (featsel::rank_features(&featsel::t_scores(xs, y)?), k)
    };
    let sizes: Vec<usize> = module.sizes.iter().map(|&q| q.min(ranking.len())).collect();
    let wrapper = cfg.wrapper(module.kernel, salt);
    let sel = featsel::wrapper_select(xs, y, &ranking, &sizes, k, &wrapper)?;
    let cols = &sel.selected_indices;
    let data: Vec<Vec<f64>> = xs.iter().map(|x| cols.iter().map(|&c| x[c]).collect()).collect();
    let svm = svm::train(&data, y, &sel.chosen().config)?;
    Ok(BinaryModel {
        selected_indices: cols.iter().map(|&p| scaler.retained_indices[p]).collect(),
        svm,
        selection: SelectionSummary::from(&sel),
    })
}

fn mean_gaps(xs: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let mean = |pos: bool, j: usize| {
        let v: Vec<f64> = xs
            .iter()
            .zip(y)
            .filter(|(_, t)| (**t > 0.0) == pos)
            .map(|(x, _)| x[j])
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    (0..xs[0].len())
        .map(|j| (mean(true, j) - mean(false, j)).abs())
        .collect()
}

/// Link problem detector on the LINK_FAULTY (+1) / LINK_HEALTHY (−1) samples of `db`.
pub fn train_lpd(
    db: &SignatureDatabase,
    scaler: &ScalerParams,
    cfg: &TrainConfig,
) -> Result<BinaryModel, ClassifierError> {
    let (xs, y) = subset(db, scaler, ClassLabel::LinkFaulty, ClassLabel::LinkHealthy)?;
    fit_binary(&xs, &y, scaler, &cfg.lpd, cfg, 0)
}

/// One module per fault class `j`, each trained on cf_j (+1) against cf_0 (−1) only.
pub fn train_cfd(
    db: &SignatureDatabase,
    scaler: &ScalerParams,
    cfg: &TrainConfig,
) -> Result<Vec<CfModuleModel>, ClassifierError> {
    if db.count(ClassLabel::HEALTHY_CLIENT) == 0 {
        return Err(ClassifierError::NoHealthyBaseline);
    }
    for &j in &cfg.fault_classes {
        if j == 0 {
            return Err(ClassifierError::NotAFault(ClassLabel::Cf(0)));
        }
        if db.count(ClassLabel::Cf(j)) == 0 {
            return Err(ClassifierError::MissingClass(ClassLabel::Cf(j)));
        }
    }
    cfg.fault_classes
        .par_iter()
        .map(|&j| {
            let (xs, y) = subset(db, scaler, ClassLabel::Cf(j), ClassLabel::HEALTHY_CLIENT)?;
            let model = fit_binary(&xs, &y, scaler, &cfg.module(j), cfg, j as u64)?;
            Ok(CfModuleModel {
                fault_class: ClassLabel::Cf(j),
                model,
            })
        })
        .collect()
}

/// Fit the shared scaler on every signature, then train the LPD and all CF modules.
pub fn train_bundle(db: &SignatureDatabase, cfg: &TrainConfig) -> Result<ClassifierBundle, ClassifierError> {
    let scaler = preprocess::fit_scaler(db)?;
    let (lpd, cf_modules) = rayon::join(|| train_lpd(db, &scaler, cfg), || train_cfd(db, &scaler, cfg));
    let cf_modules = cf_modules?;
    if cf_modules.is_empty() {
        return Err(ClassifierError::NoModules);
    }
    Ok(ClassifierBundle {
        format: BUNDLE_FORMAT.into(),
        version: BUNDLE_VERSION,
        catalogue_version: db.catalogue_version().to_string(),
        scaler,
        lpd: lpd?,
        cf_modules,
        combined_classes: default_combined(),
    })
}

impl ClassifierBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let b: ClassifierBundle = serde_json::from_str(text).map_err(|e| ClassifierError::Bundle(e.to_string()))?;
        if b.format != BUNDLE_FORMAT {
            return Err(ClassifierError::Bundle(format!("format {:?}", b.format)));
        }
        if b.version > BUNDLE_VERSION {
            return Err(ClassifierError::Bundle(format!(
                "version {} is newer than {BUNDLE_VERSION}",
                b.version
            )));
        }
        if b.catalogue_version != CATALOGUE_VERSION {
            return Err(ClassifierError::Bundle(format!(
                "catalogue {} does not match {CATALOGUE_VERSION}",
                b.catalogue_version
            )));
        }
        if b.cf_modules.is_empty() {
            return Err(ClassifierError::NoModules);
        }
        let retained = |m: &BinaryModel| m.selected_indices.iter().all(|&j| b.scaler.position(j).is_some());
        if !retained(&b.lpd) || !b.cf_modules.iter().all(|m| retained(&m.model)) {
            return Err(ClassifierError::Bundle(
                "selected feature outside the scaler's retained set".into(),
            ));
        }
        Ok(b)
    }

    fn scale(&self, features: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        Ok(preprocess::apply_scaler(features, &self.scaler)?)
    }

    pub fn lpd_decision(&self, features: &[f64]) -> Result<f64, ClassifierError> {
        self.lpd.decision(&self.scale(features)?, &self.scaler)
    }

    /// Decision value of every CF module, in bundle order.
    pub fn module_decisions(&self, features: &[f64]) -> Result<Vec<ModuleOutput>, ClassifierError> {
        let scaled = self.scale(features)?;
        self.cf_modules
            .iter()
            .map(|m| {
                let d = m.model.decision(&scaled, &self.scaler)?;
                Ok(ModuleOutput {
                    fault_class: m.fault_class,
                    decision_value: d,
                    positive: d >= 0.0,
                })
            })
            .collect()
    }

    fn name_of(label: ClassLabel) -> String {
        match label {
            ClassLabel::Cf(j) => fault_name(j),
            l => l.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LinkStatus {
    Faulty,
    Healthy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleOutput {
    pub fault_class: ClassLabel,
    pub decision_value: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "faults", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Overall {
    LinkProblem,
    ClientFaults(Vec<ClassLabel>),
    ClientHealthy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub link_status: LinkStatus,
    pub link_decision: f64,
    /// Empty when the CF modules were skipped.
    pub modules: Vec<ModuleOutput>,
    pub client_faults: Vec<ClassLabel>,
    pub overall: Overall,
}

impl DiagnosisReport {
    /// One-line human summary, e.g. `CLIENT_FAULTS RBuf,WBuf`.
    pub fn summary(&self) -> String {
        match &self.overall {
            Overall::LinkProblem => "LINK_PROBLEM".into(),
            Overall::ClientHealthy => "CLIENT_HEALTHY".into(),
            Overall::ClientFaults(f) => {
                let names: Vec<String> = f.iter().map(|&l| ClassifierBundle::name_of(l)).collect();
                format!("CLIENT_FAULTS {}", names.join(","))
            }
        }
    }
}

impl fmt::Display for DiagnosisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.summary())
    }
}

/// Diagnose one signature. With `run_both`, the CF modules run even when the link looks faulty.
pub fn diagnose_features(
    bundle: &ClassifierBundle,
    features: &[f64],
    run_both: bool,
) -> Result<DiagnosisReport, ClassifierError> {
    let link_decision = bundle.lpd_decision(features)?;
    let link_status = if link_decision >= 0.0 {
        LinkStatus::Faulty
    } else {
        LinkStatus::Healthy
    };
    let modules = if link_status == LinkStatus::Healthy || run_both {
        bundle.module_decisions(features)?
    } else {
        Vec::new()
    };
    let client_faults: Vec<ClassLabel> = modules.iter().filter(|m| m.positive).map(|m| m.fault_class).collect();
    let overall = if link_status == LinkStatus::Faulty && !run_both {
        Overall::LinkProblem
    } else if !client_faults.is_empty() {
        Overall::ClientFaults(client_faults.clone())
    } else if link_status == LinkStatus::Faulty {
        Overall::LinkProblem
    } else {
        Overall::ClientHealthy
    };
    Ok(DiagnosisReport {
        link_status,
        link_decision,
        modules,
        client_faults,
        overall,
    })
}

pub fn diagnose(
    bundle: &ClassifierBundle,
    client: &TraceFile,
    server: &TraceFile,
    run_both: bool,
) -> Result<DiagnosisReport, ClassifierError> {
    let features = signature::signature_features(client, server)?;
    diagnose_features(bundle, &features, run_both)
}

// ---- evaluation ---------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: ClassLabel,
    pub name: String,
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl Confusion {
    fn add(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn accuracy(&self) -> Option<f64> {
        let n = self.tp + self.fn_ + self.fp + self.tn;
        (n > 0).then(|| (self.tp + self.tn) as f64 / n as f64)
    }

    pub fn false_positive_rate(&self) -> Option<f64> {
        let n = self.fp + self.tn;
        (n > 0).then(|| self.fp as f64 / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleMetrics {
    pub fault_class: ClassLabel,
    pub name: String,
    /// Counted on the module's own subset: cf_j positives against cf_0 negatives.
    pub confusion: Confusion,
    pub accuracy: Option<f64>,
    pub false_positive_rate: Option<f64>,
}

/// Row of the confusion table: how often each detector fired for one true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub label: ClassLabel,
    pub samples: usize,
    pub lpd_faulty: usize,
    /// Firing count per module, in bundle order.
    pub module_positive: Vec<usize>,
    /// Samples on which no CF module fired.
    pub no_module: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationMetrics {
    pub classes: Vec<ClassMetrics>,
    pub lpd: Confusion,
    pub modules: Vec<ModuleMetrics>,
    pub confusion: Vec<ConfusionRow>,
    /// Share of cf_0 samples with no positive module.
    pub healthy_accuracy: Option<f64>,
    pub module_names: Vec<String>,
}

/// Raw detector outputs for one signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decisions {
    pub label: ClassLabel,
    pub lpd: f64,
    pub modules: Vec<f64>,
}

pub fn decisions(bundle: &ClassifierBundle, db: &SignatureDatabase) -> Result<Vec<Decisions>, ClassifierError> {
    db.signatures()
        .par_iter()
        .map(|s| {
            Ok(Decisions {
                label: s.label,
                lpd: bundle.lpd_decision(&s.features)?,
                modules: bundle
                    .module_decisions(&s.features)?
                    .iter()
                    .map(|m| m.decision_value)
                    .collect(),
            })
        })
        .collect()
}

/// Metrics over a labelled database.
///
/// Link-labelled samples score the LPD. Client-labelled samples score the CF
/// network directly: cf_0 is correct when no module fires, cf_j when module j
/// fires, and a combined class when all of its expected modules fire.
pub fn evaluate(bundle: &ClassifierBundle, db: &SignatureDatabase) -> Result<EvaluationMetrics, ClassifierError> {
    Ok(metrics_from_decisions(bundle, &decisions(bundle, db)?))
}

pub fn metrics_from_decisions(bundle: &ClassifierBundle, rows: &[Decisions]) -> EvaluationMetrics {
    let module_classes: Vec<ClassLabel> = bundle.cf_modules.iter().map(|m| m.fault_class).collect();
    let mut by_class: BTreeMap<ClassLabel, (usize, usize)> = BTreeMap::new();
    let mut confusion: BTreeMap<ClassLabel, ConfusionRow> = BTreeMap::new();
    let mut lpd = Confusion::default();
    let mut modules = vec![Confusion::default(); module_classes.len()];

    for r in rows {
        let lpd_pos = r.lpd >= 0.0;
        let fired: Vec<bool> = r.modules.iter().map(|&d| d >= 0.0).collect();
        let row = confusion.entry(r.label).or_insert_with(|| ConfusionRow {
            label: r.label,
            samples: 0,
            lpd_faulty: 0,
            module_positive: vec![0; module_classes.len()],
            no_module: 0,
        });
        row.samples += 1;
        row.lpd_faulty += lpd_pos as usize;
        for (c, &f) in row.module_positive.iter_mut().zip(&fired) {
            *c += f as usize;
        }
        row.no_module += (!fired.contains(&true)) as usize;

        let correct = match r.label {
            ClassLabel::LinkFaulty | ClassLabel::LinkHealthy => {
                let truth = r.label == ClassLabel::LinkFaulty;
                lpd.add(truth, lpd_pos);
                truth == lpd_pos
            }
            ClassLabel::Cf(0) => {
                for (m, &f) in modules.iter_mut().zip(&fired) {
                    m.add(false, f);
                }
                !fired.contains(&true)
            }
            label => {
                let expected: Vec<ClassLabel> = match bundle.combined_classes.get(&label) {
                    Some(parts) => parts.clone(),
                    None => vec![label],
                };
                for (i, m) in modules.iter_mut().enumerate() {
                    if module_classes[i] == label {
                        m.add(true, fired[i]);
                    }
                }
                let hits: Vec<bool> = expected
                    .iter()
                    .map(|e| module_classes.iter().position(|c| c == e).is_some_and(|i| fired[i]))
                    .collect();
                hits.iter().all(|&h| h)
            }
        };
        let e = by_class.entry(r.label).or_default();
        e.0 += 1;
        e.1 += correct as usize;
    }

    let classes: Vec<ClassMetrics> = by_class
        .into_iter()
        .map(|(label, (n, c))| ClassMetrics {
            label,
            name: ClassifierBundle::name_of(label),
            samples: n,
            correct: c,
            accuracy: c as f64 / n as f64,
        })
        .collect();
    let healthy_accuracy = classes
        .iter()
        .find(|c| c.label == ClassLabel::Cf(0))
        .map(|c| c.accuracy);
    EvaluationMetrics {
        classes,
        lpd,
        modules: module_classes
            .iter()
            .zip(modules)
            .map(|(&fc, m)| ModuleMetrics {
                fault_class: fc,
                name: ClassifierBundle::name_of(fc),
                confusion: m,
                accuracy: m.accuracy(),
                false_positive_rate: m.false_positive_rate(),
            })
            .collect(),
        confusion: confusion.into_values().collect(),
        healthy_accuracy,
        module_names: module_classes.iter().map(|&c| ClassifierBundle::name_of(c)).collect(),
    }
}

impl EvaluationMetrics {
    pub fn class(&self, label: ClassLabel) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.label == label)
    }

    /// Per-class accuracy table: `label,name,samples,correct,accuracy`.
    pub fn accuracy_csv(&self) -> String {
        let mut out = String::from("label,name,samples,correct,accuracy\n");
        for c in &self.classes {
            out.push_str(&format!(
                "{},{},{},{},{:.4}\n",
                c.label, c.name, c.samples, c.correct, c.accuracy
            ));
        }
        out
    }

    /// Firing counts of every detector per true class.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("label,samples,LPD_FAULTY");
        for n in &self.module_names {
            out.push(',');
            out.push_str(n);
        }
        out.push_str(",NONE\n");
        for r in &self.confusion {
            out.push_str(&format!("{},{},{}", r.label, r.samples, r.lpd_faulty));
            for c in &r.module_positive {
                out.push_str(&format!(",{c}"));
            }
            out.push_str(&format!(",{}\n", r.no_module));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }
}
