//! Refitting model parameters from submitted labels, evaluation metrics and
//! the on-disk model registry.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::editor::{extract_table, LabelRecord};
use crate::extract::{
    detect_cells, featurize_region, propose_regions, score_candidates, select_tables, sigmoid, ModelParams,
    DUPLICATE_IOU, FEATURE_COUNT,
};
use crate::geometry::{iou, BBox};
use crate::layout::PageLayout;
use crate::structure::{build_grid, grid_agreement, TableGrid};

/// IoU at which a detection counts as matching a reference table.
pub const MATCH_IOU: f64 = 0.5;
pub const LEARNING_RATE: f64 = 0.5;
pub const ITERATIONS: usize = 500;
pub const L2_PENALTY: f64 = 1e-3;
pub const GAP_GRID: [f64; 7] = [2.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0];
pub const VALLEY_GRID: [f64; 4] = [0.05, 0.1, 0.2, 0.3];
pub const THRESHOLD_GRID: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];

#[derive(Debug, thiserror::Error)]
pub enum FinetuneError {
    #[error("nothing to train on")]
    NothingToTrain,
    #[error("training loss became non-finite at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("unknown model version {0}")]
    UnknownModel(String),
    #[error("model version {0} already registered")]
    DuplicateVersion(String),
    #[error("registry io: {0}")]
    Io(#[from] io::Error),
    #[error("registry entry {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

/// A submitted label together with the page it was made on.
#[derive(Debug, Clone, Copy)]
pub struct LabelledPage<'a> {
    pub record: &'a LabelRecord,
    pub page: &'a PageLayout,
}

impl LabelledPage<'_> {
    fn effective(&self) -> PageLayout {
        self.record.effective_page(self.page)
    }

    fn truth_boxes(&self) -> Vec<BBox> {
        self.record.tables.iter().map(|t| t.region.bbox).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchLabel {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub bbox: BBox,
    pub label: MatchLabel,
}

/// Greedy one-to-one matching by descending IoU; pairs below `MATCH_IOU`
/// never match. Returns, per prediction, the index of its reference.
pub fn match_boxes(pred: &[BBox], truth: &[BBox]) -> Vec<Option<usize>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let v = iou(p, t);
            if v >= MATCH_IOU {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; pred.len()];
    let mut used = vec![false; truth.len()];
    for (_, i, j) in pairs {
        if out[i].is_none() && !used[j] {
            out[i] = Some(j);
            used[j] = true;
        }
    }
    out
}

pub fn match_outcomes(candidates: &[BBox], truth: &[BBox]) -> Vec<MatchOutcome> {
    match_boxes(candidates, truth)
        .into_iter()
        .zip(candidates)
        .map(|(m, bbox)| MatchOutcome {
            bbox: *bbox,
            label: if m.is_some() {
                MatchLabel::Positive
            } else {
                MatchLabel::Negative
            },
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl DetectionCounts {
    pub fn of(pred: &[BBox], truth: &[BBox]) -> Self {
        let tp = match_boxes(pred, truth).iter().flatten().count();
        Self {
            tp,
            fp: pred.len() - tp,
            fn_: truth.len() - tp,
        }
    }

    pub fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }

    /// F1 score; 1 when there was nothing to find and nothing was found.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub detection_f1: f64,
    pub grid_agreement: f64,
}

/// Result of running the full pipeline over reference pages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pages: usize,
    pub counts: DetectionCounts,
    pub detection_f1: f64,
    /// Mean over reference tables; unmatched references count as 0.
    pub grid_agreement: f64,
}

/// Grid agreement of each reference table against the matched prediction.
pub fn table_agreements(pred: &[TableGrid], truth: &[TableGrid]) -> Vec<f64> {
    let pb: Vec<BBox> = pred.iter().map(|g| g.bbox).collect();
    let tb: Vec<BBox> = truth.iter().map(|g| g.bbox).collect();
    let mut scores = vec![0.0; truth.len()];
    for (i, m) in match_boxes(&pb, &tb).into_iter().enumerate() {
        if let Some(j) = m {
            scores[j] = grid_agreement(&pred[i], &truth[j]);
        }
    }
    scores
}

/// Detection followed by cell detection and grid building.
pub fn extract_page(params: &ModelParams, page: &PageLayout) -> Vec<TableGrid> {
    crate::extract::detect_tables(params, page)
        .iter()
        .map(|r| {
            let cells = detect_cells(params, page, &r.bbox);
            build_grid(&r.table_id, &r.bbox, &cells, page)
        })
        .collect()
}

pub fn evaluate(params: &ModelParams, pages: &[(&PageLayout, &[TableGrid])]) -> EvalReport {
    let per_page: Vec<(DetectionCounts, Vec<f64>)> = pages
        .par_iter()
        .map(|(page, truth)| {
            let pred = extract_page(params, page);
            let pb: Vec<BBox> = pred.iter().map(|g| g.bbox).collect();
            let tb: Vec<BBox> = truth.iter().map(|g| g.bbox).collect();
            (DetectionCounts::of(&pb, &tb), table_agreements(&pred, truth))
        })
        .collect();
    let mut counts = DetectionCounts::default();
    let mut scores = Vec::new();
    for (c, s) in per_page {
        counts = counts.add(c);
        scores.extend(s);
    }
    let grid_agreement = if scores.is_empty() {
        1.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    EvalReport {
        pages: pages.len(),
        counts,
        detection_f1: counts.f1(),
        grid_agreement,
    }
}

/// Features and labels from every labelled page: the page's candidates
/// plus its reference boxes (unless a candidate already duplicates one).
pub fn build_training_set(labels: &[LabelledPage<'_>], params: &ModelParams) -> Vec<(Vec<f64>, bool)> {
    let mut out = Vec::new();
    for lp in labels {
        let page = lp.effective();
        let truth = lp.truth_boxes();
        let mut candidates = propose_regions(params, &page);
        for t in &truth {
            if candidates.iter().all(|c| iou(c, t) <= DUPLICATE_IOU) {
                candidates.push(*t);
            }
        }
        for (outcome, bbox) in match_outcomes(&candidates, &truth).iter().zip(&candidates) {
            out.push((featurize_region(&page, bbox), outcome.label == MatchLabel::Positive));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Set when there were no positives and `init` was returned unchanged.
    pub degraded: bool,
    pub final_loss: f64,
}

/// Per-example weights giving each class half of the total weight, so a
/// handful of labelled tables is not drowned out by their many negative
/// candidates. Sums to 1.
fn class_weights(train: &[(Vec<f64>, bool)]) -> Vec<f64> {
    let pos = train.iter().filter(|(_, y)| *y).count();
    let neg = train.len() - pos;
    train
        .iter()
        .map(|(_, y)| match (*y, pos, neg) {
            (_, 0, n) | (_, n, 0) => 1.0 / n as f64,
            (true, p, _) => 0.5 / p as f64,
            (false, _, n) => 0.5 / n as f64,
        })
        .collect()
}

fn weighted_loss(train: &[(Vec<f64>, bool)], weights: &[f64], w: &[f64], b: f64) -> f64 {
    let mut total = 0.0;
    for ((f, y), k) in train.iter().zip(weights) {
        let z: f64 = w.iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + b;
        // log(1 + e^z) - y z, computed stably.
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        total += k * (softplus - if *y { z } else { 0.0 });
    }
    let l2: f64 = w.iter().map(|v| v * v).sum::<f64>();
    total + 0.5 * L2_PENALTY * l2
}

/// Class-balanced logistic regression by full-batch gradient descent from
/// `init`.
pub fn fit_detector(train: &[(Vec<f64>, bool)], init: &ModelParams) -> Result<DetectorFit, FinetuneError> {
    if !train.iter().any(|(_, y)| *y) {
        log::warn!("no positive examples; keeping the initial detector");
        return Ok(DetectorFit {
            weights: init.weights.clone(),
            bias: init.bias,
            degraded: true,
            final_loss: f64::NAN,
        });
    }
    let k = class_weights(train);
    let mut w = init.weights.clone();
    let mut b = init.bias;
    let mut gw = vec![0.0; w.len()];
    for iter in 0..ITERATIONS {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for ((f, y), k) in train.iter().zip(&k) {
            let z: f64 = w.iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + b;
            let err = k * (sigmoid(z) - if *y { 1.0 } else { 0.0 });
            for (g, x) in gw.iter_mut().zip(f) {
                *g += err * x;
            }
            gb += err;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= LEARNING_RATE * (g + L2_PENALTY * *wi);
        }
        b -= LEARNING_RATE * gb;
        if !w.iter().all(|v| v.is_finite()) || !b.is_finite() {
            return Err(FinetuneError::NonFiniteLoss(iter));
        }
    }
    let final_loss = weighted_loss(train, &k, &w, b);
    if !final_loss.is_finite() {
        return Err(FinetuneError::NonFiniteLoss(ITERATIONS));
    }
    Ok(DetectorFit {
        weights: w,
        bias: b,
        degraded: false,
        final_loss,
    })
}

/// Mean grid agreement of re-extracting every labelled table inside its
/// labelled border with the given cell parameters.
pub fn cell_objective(labels: &[LabelledPage<'_>], pages: &[PageLayout], params: &ModelParams) -> Option<f64> {
    let mut scores = Vec::new();
    for (lp, page) in labels.iter().zip(pages) {
        for t in &lp.record.tables {
            let g = extract_table(params, page, &t.region.table_id, &t.region.bbox);
            scores.push(grid_agreement(&g, &t.grid));
        }
    }
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Best `(col_gap_min, row_gap_min, valley_frac)` by mean grid agreement
/// over the search grid (which also contains the initial triple); ties
/// go to the lexicographically smallest triple.
pub fn fit_cell_params(labels: &[LabelledPage<'_>], init: &ModelParams) -> Result<((f64, f64, f64), f64), FinetuneError> {
    let pages: Vec<PageLayout> = labels.iter().map(LabelledPage::effective).collect();
    if labels.iter().all(|lp| lp.record.tables.is_empty()) {
        return Err(FinetuneError::NothingToTrain);
    }
    let mut triples: Vec<(f64, f64, f64)> = Vec::new();
    for &c in &GAP_GRID {
        for &r in &GAP_GRID {
            for &v in &VALLEY_GRID {
                triples.push((c, r, v));
            }
        }
    }
    triples.push(init.cell_params());
    triples.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    triples.dedup();
    let scores: Vec<f64> = triples
        .par_iter()
        .map(|&(c, r, v)| {
            let p = ModelParams {
                col_gap_min: c,
                row_gap_min: r,
                valley_frac: v,
                ..init.clone()
            };
            cell_objective(labels, &pages, &p).unwrap_or(0.0)
        })
        .collect();
    let mut best = 0;
    for i in 1..triples.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    Ok((triples[best], scores[best]))
}

fn training_detection(params: &ModelParams, labels: &[LabelledPage<'_>], threshold: f64) -> DetectionCounts {
    labels
        .iter()
        .map(|lp| {
            let page = lp.effective();
            let pred: Vec<BBox> = select_tables(score_candidates(params, &page), threshold)
                .into_iter()
                .map(|r| r.bbox)
                .collect();
            DetectionCounts::of(&pred, &lp.truth_boxes())
        })
        .fold(DetectionCounts::default(), DetectionCounts::add)
}

/// Detection F1 of `params` (at its own threshold) on the labelled pages.
pub fn training_f1(params: &ModelParams, labels: &[LabelledPage<'_>]) -> f64 {
    training_detection(params, labels, params.detect_threshold).f1()
}

/// Threshold from the fixed grid maximizing training F1; ties prefer 0.5,
/// then the value nearer 0.5, then the lower one.
pub fn choose_threshold(params: &ModelParams, labels: &[LabelledPage<'_>]) -> f64 {
    let scored: Vec<(Vec<(BBox, f64)>, Vec<BBox>)> = labels
        .iter()
        .map(|lp| (score_candidates(params, &lp.effective()), lp.truth_boxes()))
        .collect();
    let f1_at = |t: f64| {
        scored
            .iter()
            .map(|(s, truth)| {
                let pred: Vec<BBox> = select_tables(s.clone(), t).into_iter().map(|r| r.bbox).collect();
                DetectionCounts::of(&pred, truth)
            })
            .fold(DetectionCounts::default(), DetectionCounts::add)
            .f1()
    };
    let mut candidates: Vec<(f64, f64)> = THRESHOLD_GRID.iter().map(|&t| (t, f1_at(t))).collect();
    candidates.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then((a.0 - 0.5).abs().total_cmp(&(b.0 - 0.5).abs()))
            .then(a.0.total_cmp(&b.0))
    });
    candidates[0].0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitChoice {
    Fitted,
    FittedCellsOnly,
    Base,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    pub params: ModelParams,
    pub metrics: FitMetrics,
    pub training_pages: Vec<String>,
    pub choice: FitChoice,
    pub base_f1: f64,
}

/// Fits a model derived from `base` on the submitted labels.
///
/// Cell parameters are fitted first so that detection training sees the
/// candidates the final model will propose. The result is never worse than
/// `base` in training detection F1: if the fitted detector loses, the
/// fitted cell parameters are kept with the base detector, and failing
/// that the base is returned under the new version id.
pub fn finetune(labels: &[LabelledPage<'_>], base: &ModelParams, version_id: &str) -> Result<FinetuneOutcome, FinetuneError> {
    let labels: Vec<LabelledPage<'_>> = labels.iter().copied().filter(|lp| lp.record.is_submitted()).collect();
    if labels.is_empty() {
        return Err(FinetuneError::NothingToTrain);
    }
    let triple = match fit_cell_params(&labels, base) {
        Ok((t, _)) => t,
        Err(FinetuneError::NothingToTrain) => base.cell_params(),
        Err(e) => return Err(e),
    };
    let with_cells = ModelParams {
        version_id: version_id.to_string(),
        parent_id: Some(base.version_id.clone()),
        col_gap_min: triple.0,
        row_gap_min: triple.1,
        valley_frac: triple.2,
        ..base.clone()
    };
    let train = build_training_set(&labels, &with_cells);
    let fit = fit_detector(&train, base)?;
    let mut fitted = ModelParams {
        weights: fit.weights,
        bias: fit.bias,
        ..with_cells.clone()
    };
    fitted.detect_threshold = choose_threshold(&fitted, &labels);

    let base_f1 = training_f1(base, &labels);
    let base_renamed = ModelParams {
        version_id: version_id.to_string(),
        parent_id: Some(base.version_id.clone()),
        ..base.clone()
    };
    let options = [
        (FitChoice::Fitted, fitted),
        (FitChoice::FittedCellsOnly, with_cells),
        (FitChoice::Base, base_renamed),
    ];
    let (choice, params) = options
        .into_iter()
        .find(|(_, p)| training_f1(p, &labels) >= base_f1)
        .expect("the base always matches itself");
    if choice != FitChoice::Fitted {
        log::warn!("fitted detector lowered training F1; using {choice:?}");
    }

    let truth: Vec<Vec<TableGrid>> = labels
        .iter()
        .map(|lp| lp.record.tables.iter().map(|t| t.grid.clone()).collect())
        .collect();
    let pages: Vec<PageLayout> = labels.iter().map(LabelledPage::effective).collect();
    let pairs: Vec<(&PageLayout, &[TableGrid])> = pages.iter().zip(&truth).map(|(p, t)| (p, t.as_slice())).collect();
    let report = evaluate(&params, &pairs);
    let mut training_pages: Vec<String> = labels.iter().map(|lp| lp.record.page_id.clone()).collect();
    training_pages.sort();
    training_pages.dedup();
    Ok(FinetuneOutcome {
        params,
        metrics: FitMetrics {
            detection_f1: report.detection_f1,
            grid_agreement: report.grid_agreement,
        },
        training_pages,
        choice,
        base_f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistryEntry {
    #[serde(flatten)]
    pub params: ModelParams,
    pub created_at: u64,
    pub training_pages: Vec<String>,
    pub metrics: Option<FitMetrics>,
}

impl ModelRegistryEntry {
    pub fn version_id(&self) -> &str {
        &self.params.version_id
    }

    pub fn parent_id(&self) -> Option<&str> {
        self.params.parent_id.as_deref()
    }

    pub fn is_base(&self) -> bool {
        self.params.parent_id.is_none()
    }
}

pub fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub const DEFAULT_BASE: &str = "base-general";

/// The pre-trained starting points shipped with the tool.
pub fn builtin_bases() -> Vec<ModelParams> {
    let base = |id: &str, weights: [f64; FEATURE_COUNT], bias: f64, gaps: (f64, f64, f64)| ModelParams {
        version_id: id.to_string(),
        parent_id: None,
        weights: weights.to_vec(),
        bias,
        detect_threshold: 0.5,
        col_gap_min: gaps.0,
        row_gap_min: gaps.1,
        valley_frac: gaps.2,
    };
    vec![
        // col align, row align, rulings, numeric, density, gap regularity, aspect
        base(DEFAULT_BASE, [2.0, 0.5, 3.0, 0.2, 0.0, 3.7, -5.4], -2.3, (6.0, 4.0, 0.1)),
        base("base-ruled", [1.5, 0.5, 6.0, 0.2, 0.0, 2.0, -4.0], -3.0, (6.0, 4.0, 0.1)),
        base("base-sparse", [2.0, 0.5, 3.0, 0.2, 0.0, 3.7, -5.4], -2.3, (16.0, 8.0, 0.1)),
    ]
}

/// Append-only store with one JSON file per entry.
#[derive(Debug)]
pub struct Registry {
    dir: PathBuf,
    entries: BTreeMap<String, ModelRegistryEntry>,
}

impl Registry {
    /// Loads every entry under `dir`, writing the built-in bases first if
    /// they are missing.
    pub fn open(dir: &Path) -> Result<Self, FinetuneError> {
        fs::create_dir_all(dir)?;
        let mut reg = Self {
            dir: dir.to_path_buf(),
            entries: BTreeMap::new(),
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let text = fs::read_to_string(&path)?;
            let entry: ModelRegistryEntry = serde_json::from_str(&text).map_err(|e| FinetuneError::Corrupt {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            reg.entries.insert(entry.params.version_id.clone(), entry);
        }
        for params in builtin_bases() {
            if !reg.entries.contains_key(&params.version_id) {
                reg.register_base(params)?;
            }
        }
        Ok(reg)
    }

    pub fn get(&self, version_id: &str) -> Option<&ModelRegistryEntry> {
        self.entries.get(version_id)
    }

    pub fn params(&self, version_id: &str) -> Result<ModelParams, FinetuneError> {
        self.get(version_id)
            .map(|e| e.params.clone())
            .ok_or_else(|| FinetuneError::UnknownModel(version_id.to_string()))
    }

    pub fn list(&self) -> impl Iterator<Item = &ModelRegistryEntry> {
        self.entries.values()
    }

    /// Adds a root model without training provenance.
    pub fn register_base(&mut self, params: ModelParams) -> Result<&ModelRegistryEntry, FinetuneError> {
        self.insert(ModelRegistryEntry {
            params: ModelParams { parent_id: None, ..params },
            created_at: 0,
            training_pages: Vec::new(),
            metrics: None,
        })
    }

    /// Adds a derived model. Its parent must already exist, which keeps
    /// parent chains acyclic.
    pub fn register(&mut self, entry: ModelRegistryEntry) -> Result<&ModelRegistryEntry, FinetuneError> {
        match entry.parent_id() {
            Some(p) if self.entries.contains_key(p) => {}
            Some(p) => return Err(FinetuneError::UnknownModel(p.to_string())),
            None => {}
        }
        self.insert(entry)
    }

    /// Unused version id of the form `{parent}.ft{n}`.
    pub fn next_version_id(&self, parent: &str) -> String {
        (1..)
            .map(|n| format!("{parent}.ft{n}"))
            .find(|id| !self.entries.contains_key(id))
            .expect("unbounded")
    }

    fn insert(&mut self, entry: ModelRegistryEntry) -> Result<&ModelRegistryEntry, FinetuneError> {
        let id = entry.params.version_id.clone();
        if self.entries.contains_key(&id) {
            return Err(FinetuneError::DuplicateVersion(id));
        }
        let text = serde_json::to_string_pretty(&entry).expect("entry serializes");
        let path = self.dir.join(format!("{id}.json"));
        let tmp = self.dir.join(format!(".{id}.json.tmp"));
        fs::write(&tmp, text)?;
        fs::rename(&tmp, &path)?;
        Ok(self.entries.entry(id).or_insert(entry))
    }
}
