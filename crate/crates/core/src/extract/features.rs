//! Layout features of a candidate table region.
//!
//! Order of the vector, every component in `[0, 1]`:
//!
//! | idx | feature |
//! |-----|---------|
//! | 0 | column alignment: fraction of tokens whose x0 lies within 2 pt of one of the 8 strongest x0 modes |
//! | 1 | row alignment: the same on y0 |
//! | 2 | ruling coverage: fraction of the region perimeter within 2 pt of a ruling |
//! | 3 | fraction of numeric tokens |
//! | 4 | token density in tokens per 1000 pt², clamped to 1 |
//! | 5 | gap regularity: 1 - coefficient of variation of inter-row gaps |
//! | 6 | aspect ratio width/height clamped to `[0, 4]`, divided by 4 |

use crate::geometry::{overlap_len, BBox};
use crate::layout::{Orientation, PageLayout, Token};

pub const FEATURE_COUNT: usize = 7;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "column_alignment",
    "row_alignment",
    "ruling_coverage",
    "numeric_fraction",
    "token_density",
    "gap_regularity",
    "aspect_ratio",
];

/// Snap distance for alignment modes and ruling coverage.
pub const SNAP_TOLERANCE: f64 = 2.0;
/// Number of alignment modes considered.
pub const ALIGNMENT_MODES: usize = 8;

pub fn featurize_region(page: &PageLayout, region: &BBox) -> Vec<f64> {
    let tokens: Vec<&Token> = page.tokens_in(region).collect();
    let mut f = vec![0.0; FEATURE_COUNT];
    if tokens.is_empty() {
        return f;
    }
    let xs: Vec<f64> = tokens.iter().map(|t| t.bbox.x0).collect();
    let ys: Vec<f64> = tokens.iter().map(|t| t.bbox.y0).collect();
    f[0] = alignment(&xs);
    f[1] = alignment(&ys);
    f[2] = ruling_coverage(page, region);
    f[3] = tokens.iter().filter(|t| is_numeric(&t.text)).count() as f64 / tokens.len() as f64;
    let area = region.area();
    f[4] = if area > 0.0 {
        (tokens.len() as f64 / (area / 1000.0)).min(1.0)
    } else {
        0.0
    };
    f[5] = gap_regularity(&tokens);
    f[6] = if region.height() > 0.0 {
        (region.width() / region.height()).clamp(0.0, 4.0) / 4.0
    } else {
        0.0
    };
    f
}

/// Fraction of values covered by the strongest modes. A mode needs the
/// support of at least two values, so isolated values never count.
fn alignment(values: &[f64]) -> f64 {
    let n = values.len();
    let mut remaining: Vec<f64> = values.to_vec();
    remaining.sort_by(f64::total_cmp);
    let mut covered = 0usize;
    for _ in 0..ALIGNMENT_MODES {
        let mut best: Option<(usize, f64)> = None;
        for &v in &remaining {
            let support = remaining
                .iter()
                .filter(|w| (**w - v).abs() <= SNAP_TOLERANCE)
                .count();
            if best.is_none_or(|(s, _)| support > s) {
                best = Some((support, v));
            }
        }
        match best {
            Some((support, center)) if support >= 2 => {
                covered += support;
                remaining.retain(|w| (*w - center).abs() > SNAP_TOLERANCE);
            }
            _ => break,
        }
    }
    covered as f64 / n as f64
}

fn ruling_coverage(page: &PageLayout, r: &BBox) -> f64 {
    let perimeter = 2.0 * (r.width() + r.height());
    if perimeter <= 0.0 {
        return 0.0;
    }
    let edges = [
        (Orientation::Horizontal, r.y0, (r.x0, r.x1)),
        (Orientation::Horizontal, r.y1, (r.x0, r.x1)),
        (Orientation::Vertical, r.x0, (r.y0, r.y1)),
        (Orientation::Vertical, r.x1, (r.y0, r.y1)),
    ];
    let mut covered = 0.0;
    for (orientation, at, extent) in edges {
        let mut spans: Vec<(f64, f64)> = page
            .rulings
            .iter()
            .filter(|l| l.orientation == orientation)
            .filter_map(|l| {
                let (across, along) = match orientation {
                    Orientation::Horizontal => ((l.bbox.y0, l.bbox.y1), (l.bbox.x0, l.bbox.x1)),
                    Orientation::Vertical => ((l.bbox.x0, l.bbox.x1), (l.bbox.y0, l.bbox.y1)),
                };
                let dist = if at < across.0 {
                    across.0 - at
                } else if at > across.1 {
                    at - across.1
                } else {
                    0.0
                };
                if dist > SNAP_TOLERANCE {
                    return None;
                }
                let lo = (along.0 - SNAP_TOLERANCE).max(extent.0);
                let hi = (along.1 + SNAP_TOLERANCE).min(extent.1);
                (lo < hi).then_some((lo, hi))
            })
            .collect();
        covered += union_length(&mut spans);
    }
    (covered / perimeter).clamp(0.0, 1.0)
}

pub(crate) fn union_length(spans: &mut [(f64, f64)]) -> f64 {
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for &(lo, hi) in spans.iter() {
        cur = match cur {
            Some((clo, chi)) if lo <= chi => Some((clo, chi.max(hi))),
            Some((clo, chi)) => {
                total += chi - clo;
                Some((lo, hi))
            }
            None => Some((lo, hi)),
        };
    }
    if let Some((lo, hi)) = cur {
        total += hi - lo;
    }
    total
}

/// Digits plus the usual money and percentage punctuation.
pub fn is_numeric(text: &str) -> bool {
    let t = text.trim();
    t.chars().any(|c| c.is_ascii_digit())
        && t.chars()
            .all(|c| c.is_ascii_digit() || ".,-+()$%€£".contains(c))
}

/// Groups tokens into text lines by vertical overlap.
pub(crate) fn text_lines(tokens: &[&Token]) -> Vec<(f64, f64)> {
    let mut spans: Vec<(f64, f64)> = tokens.iter().map(|t| (t.bbox.y0, t.bbox.y1)).collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut lines: Vec<(f64, f64)> = Vec::new();
    for (lo, hi) in spans {
        match lines.last_mut() {
            Some(last) if overlap_len(*last, (lo, hi)) > 0.0 => last.1 = last.1.max(hi),
            _ => lines.push((lo, hi)),
        }
    }
    lines
}

fn gap_regularity(tokens: &[&Token]) -> f64 {
    let lines = text_lines(tokens);
    if lines.len() < 2 {
        return 0.0;
    }
    let gaps: Vec<f64> = lines
        .windows(2)
        .map(|w| (w[1].0 - w[0].1).max(0.0))
        .collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    if mean <= 0.0 {
        return 1.0;
    }
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64;
    (1.0 - var.sqrt() / mean).clamp(0.0, 1.0)
}
