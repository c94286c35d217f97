//! Page templates: layout embeddings, average-linkage clustering and label
//! recommendations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::extract::TableRegion;
use crate::layout::PageLayout;

pub const HISTOGRAM_BINS: usize = 32;
pub const EMBEDDING_LEN: usize = 2 * HISTOGRAM_BINS + 4;
pub const DEFAULT_CUT: f64 = 0.35;

/// Unit-norm layout descriptor of a page (all zeros for an empty page).
///
/// Layout: 32-bin x-projection histogram, 32-bin y-projection histogram
/// (each L2-normalized, bins are fractions of the page size), then table
/// count / 4, mean table width fraction, mean table height fraction and
/// ruling density, all clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEmbedding(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateAssignment {
    pub page_id: String,
    pub template_id: usize,
    pub distance_to_medoid: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecommendationKind {
    /// Lowest confidence in its template; tagged red.
    Impact,
    /// Highest confidence in its template; tagged yellow.
    Easy,
}

impl RecommendationKind {
    pub fn tag_color(self) -> &'static str {
        match self {
            RecommendationKind::Impact => "red",
            RecommendationKind::Easy => "yellow",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub page_id: String,
    pub template_id: usize,
    pub kind: RecommendationKind,
}

/// One agglomeration step: the two merged clusters (by member page ids)
/// and their average-linkage distance at merge time.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub left: Vec<String>,
    pub right: Vec<String>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<TemplateAssignment>,
    pub merges: Vec<Merge>,
}

pub fn embed_page(page: &PageLayout, regions: &[TableRegion]) -> LayoutEmbedding {
    let mut v = vec![0.0; EMBEDDING_LEN];
    let (w, h) = (page.width, page.height);
    for t in &page.tokens {
        add_projection(&mut v[..HISTOGRAM_BINS], t.bbox.x0 / w, t.bbox.x1 / w);
        add_projection(&mut v[HISTOGRAM_BINS..2 * HISTOGRAM_BINS], t.bbox.y0 / h, t.bbox.y1 / h);
    }
    normalize(&mut v[..HISTOGRAM_BINS]);
    normalize(&mut v[HISTOGRAM_BINS..2 * HISTOGRAM_BINS]);
    let tail = &mut v[2 * HISTOGRAM_BINS..];
    if !regions.is_empty() {
        let n = regions.len() as f64;
        tail[0] = (n / 4.0).min(1.0);
        tail[1] = (regions.iter().map(|r| r.bbox.width()).sum::<f64>() / n / w).clamp(0.0, 1.0);
        tail[2] = (regions.iter().map(|r| r.bbox.height()).sum::<f64>() / n / h).clamp(0.0, 1.0);
    }
    let ruling_len: f64 = page.rulings.iter().map(|r| r.length()).sum();
    tail[3] = (ruling_len / (2.0 * (w + h))).clamp(0.0, 1.0);
    normalize(&mut v);
    LayoutEmbedding(v)
}

/// Adds the overlap of `[a, b)` (in page fractions) with each bin.
fn add_projection(bins: &mut [f64], a: f64, b: f64) {
    let n = bins.len() as f64;
    let (a, b) = (a.clamp(0.0, 1.0) * n, b.clamp(0.0, 1.0) * n);
    let first = a.floor() as usize;
    let last = (b.ceil() as usize).min(bins.len());
    for (i, bin) in bins.iter_mut().enumerate().take(last).skip(first) {
        let lo = a.max(i as f64);
        let hi = b.min(i as f64 + 1.0);
        if hi > lo {
            *bin += hi - lo;
        }
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// `1 - cos`. Two zero vectors are identical; a zero and a non-zero vector
/// are treated as orthogonal.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na > 0.0, nb > 0.0) {
        (false, false) => 0.0,
        (true, true) => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
        }
        _ => 1.0,
    }
}

/// Average-linkage agglomerative clustering under cosine distance. Merging
/// stops once the closest pair of clusters is farther apart than `cut`.
pub fn cluster_templates(embeddings: &BTreeMap<String, LayoutEmbedding>, cut: f64) -> Clustering {
    let ids: Vec<&String> = embeddings.keys().collect();
    let n = ids.len();
    if n == 0 {
        return Clustering {
            assignments: Vec::new(),
            merges: Vec::new(),
        };
    }
    let vecs: Vec<&[f64]> = embeddings.values().map(|e| e.0.as_slice()).collect();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(vecs[i], vecs[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    // Clusters stay ordered by their smallest page id, so index order is
    // also page-id order.
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut merges = Vec::new();
    let linkage = |a: &[usize], b: &[usize]| {
        let total: f64 = a.iter().flat_map(|&i| b.iter().map(move |&j| (i, j))).map(|(i, j)| dist[i][j]).sum();
        total / (a.len() * b.len()) as f64
    };
    while clusters.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let d = linkage(&clusters[a], &clusters[b]);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let (d, a, b) = best.expect("at least two clusters");
        if d > cut {
            break;
        }
        let right = clusters.remove(b);
        let names = |c: &[usize]| c.iter().map(|&i| ids[i].clone()).collect::<Vec<_>>();
        merges.push(Merge {
            left: names(&clusters[a]),
            right: names(&right),
            distance: d,
        });
        clusters[a].extend(right);
        clusters[a].sort_unstable();
    }

    let mut assignments = Vec::with_capacity(n);
    for (template_id, members) in clusters.iter().enumerate() {
        let medoid = members
            .iter()
            .copied()
            .min_by(|&x, &y| {
                let sx: f64 = members.iter().map(|&m| dist[x][m]).sum();
                let sy: f64 = members.iter().map(|&m| dist[y][m]).sum();
                sx.total_cmp(&sy).then(x.cmp(&y))
            })
            .expect("non-empty cluster");
        for &m in members {
            assignments.push(TemplateAssignment {
                page_id: ids[m].clone(),
                template_id,
                distance_to_medoid: dist[m][medoid],
            });
        }
    }
    assignments.sort_by(|a, b| a.page_id.cmp(&b.page_id));
    Clustering { assignments, merges }
}

/// Per template, the lowest-confidence eligible page (impact) and the
/// highest-confidence remaining one (easy). Pages without a confidence or
/// already labelled are not eligible; ties go to the smaller page id.
pub fn recommend_labels(
    assignments: &[TemplateAssignment],
    confidences: &BTreeMap<String, Option<f64>>,
    labelled: &BTreeSet<String>,
) -> Vec<Recommendation> {
    let mut by_template: BTreeMap<usize, Vec<(&str, f64)>> = BTreeMap::new();
    for a in assignments {
        if labelled.contains(&a.page_id) {
            continue;
        }
        if let Some(Some(c)) = confidences.get(&a.page_id) {
            if c.is_finite() {
                by_template
                    .entry(a.template_id)
                    .or_default()
                    .push((a.page_id.as_str(), *c));
            }
        }
    }
    let mut out = Vec::new();
    for (template_id, mut pages) in by_template {
        pages.sort_by(|a, b| a.0.cmp(b.0));
        let impact = pages
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(b.0)))
            .map(|p| p.0)
            .expect("non-empty");
        out.push(Recommendation {
            page_id: impact.to_string(),
            template_id,
            kind: RecommendationKind::Impact,
        });
        let easy = pages
            .iter()
            .filter(|p| p.0 != impact)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(a.0)));
        if let Some(p) = easy {
            out.push(Recommendation {
                page_id: p.0.to_string(),
                template_id,
                kind: RecommendationKind::Easy,
            });
        }
    }
    out
}
