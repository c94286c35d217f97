//! The finetunable extraction model: table regions, cell boxes and their
//! confidences.
//!
//! Candidates come from [`propose_regions`], each is described by
//! [`featurize_region`] and scored with a logistic model. Accepted tables
//! are split into cells by ruling lines and projection valleys in
//! [`detect_cells`].

mod cells;
mod features;
mod regions;

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox};
use crate::layout::PageLayout;

pub use cells::detect_cells;
pub use features::{featurize_region, is_numeric, FEATURE_COUNT, FEATURE_NAMES};
pub use regions::propose_regions;


/// Candidates overlapping an accepted table above this IoU are suppressed.
pub const OVERLAP_SUPPRESSION_IOU: f64 = 0.2;
/// Candidates above this IoU with an earlier candidate are duplicates.
pub const DUPLICATE_IOU: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub version_id: String,
    pub parent_id: Option<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub detect_threshold: f64,
    pub col_gap_min: f64,
    pub row_gap_min: f64,
    pub valley_frac: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("feature length mismatch: expected {expected}, got {actual}")]
    FeatureLength { expected: usize, actual: usize },
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidParams(m.to_string()));
        if self.weights.len() != FEATURE_COUNT {
            return Err(ModelError::FeatureLength {
                expected: FEATURE_COUNT,
                actual: self.weights.len(),
            });
        }
        if !self.weights.iter().all(|w| w.is_finite()) || !self.bias.is_finite() {
            return bad("weights must be finite");
        }
        if !(self.detect_threshold > 0.0 && self.detect_threshold < 1.0) {
            return bad("detect_threshold must lie in (0, 1)");
        }
        if !(self.col_gap_min > 0.0 && self.row_gap_min > 0.0) {
            return bad("gap minimums must be > 0");
        }
        if !(self.valley_frac > 0.0 && self.valley_frac < 1.0) {
            return bad("valley_frac must lie in (0, 1)");
        }
        Ok(())
    }

    /// The `(col_gap_min, row_gap_min, valley_frac)` triple.
    pub fn cell_params(&self) -> (f64, f64, f64) {
        (self.col_gap_min, self.row_gap_min, self.valley_frac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRegion {
    pub table_id: String,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellBox {
    pub cell_id: String,
    pub bbox: BBox,
    pub confidence: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(w · f + b)`.
pub fn score_region(params: &ModelParams, features: &[f64]) -> Result<f64, ModelError> {
    if features.len() != params.weights.len() {
        return Err(ModelError::FeatureLength {
            expected: params.weights.len(),
            actual: features.len(),
        });
    }
    let z: f64 = params
        .weights
        .iter()
        .zip(features)
        .map(|(w, f)| w * f)
        .sum::<f64>()
        + params.bias;
    Ok(sigmoid(z).clamp(0.0, 1.0))
}

/// Every candidate of the page with its confidence, in candidate order.
pub fn score_candidates(params: &ModelParams, page: &PageLayout) -> Vec<(BBox, f64)> {
    propose_regions(params, page)
        .into_iter()
        .map(|bbox| {
            let f = featurize_region(page, &bbox);
            let conf = score_region(params, &f).unwrap_or(0.0);
            (bbox, conf)
        })
        .collect()
}

/// Keeps candidates at or above the threshold, suppressing overlaps
/// greedily by descending confidence. Ids follow reading order.
pub fn detect_tables(params: &ModelParams, page: &PageLayout) -> Vec<TableRegion> {
    select_tables(score_candidates(params, page), params.detect_threshold)
}

/// Threshold plus greedy suppression over already scored candidates.
pub fn select_tables(scored: Vec<(BBox, f64)>, threshold: f64) -> Vec<TableRegion> {
    let mut order: Vec<usize> = (0..scored.len())
        .filter(|&i| scored[i].1 >= threshold)
        .collect();
    order.sort_by(|&a, &b| scored[b].1.total_cmp(&scored[a].1).then(a.cmp(&b)));
    let mut accepted: Vec<(BBox, f64)> = Vec::new();
    for i in order {
        let (bbox, conf) = scored[i];
        if accepted
            .iter()
            .all(|(a, _)| iou(a, &bbox) <= OVERLAP_SUPPRESSION_IOU)
        {
            accepted.push((bbox, conf));
        }
    }
    accepted.sort_by(|a, b| a.0.reading_cmp(&b.0));
    accepted
        .into_iter()
        .enumerate()
        .map(|(i, (bbox, confidence))| TableRegion {
            table_id: format!("t{i}"),
            bbox,
            confidence,
        })
        .collect()
}

/// Weakest table confidence on a page; `None` for pages without tables.
pub fn page_confidence(regions: &[TableRegion]) -> Option<f64> {
    regions
        .iter()
        .map(|r| r.confidence)
        .min_by(f64::total_cmp)
}
