//! Cell detection inside a table region.

use crate::geometry::{hull, Axis, BBox};
use crate::layout::{Orientation, PageLayout, Token};

use super::{features::SNAP_TOLERANCE, CellBox, ModelParams};

const EMPTY_CELL_CONFIDENCE: f64 = 0.5;

/// Splits `region` into grid rectangles at interior ruling lines and at
/// low-coverage projection valleys, then shrinks every occupied rectangle
/// to the hull of its tokens. Empty rectangles keep their full extent.
pub fn detect_cells(params: &ModelParams, page: &PageLayout, region: &BBox) -> Vec<CellBox> {
    let tokens: Vec<&Token> = page.tokens_in(region).collect();
    let xs = boundaries(page, region, &tokens, Axis::Col, params.col_gap_min, params.valley_frac);
    let ys = boundaries(page, region, &tokens, Axis::Row, params.row_gap_min, params.valley_frac);

    let (nc, nr) = (xs.len() - 1, ys.len() - 1);
    let mut buckets: Vec<Vec<&Token>> = vec![Vec::new(); nr * nc];
    for t in &tokens {
        let (cx, cy) = t.bbox.center();
        let c = slot(&xs, cx);
        let r = slot(&ys, cy);
        buckets[r * nc + c].push(t);
    }

    let mut cells = Vec::with_capacity(nr * nc);
    for r in 0..nr {
        for c in 0..nc {
            let rect = BBox::raw(xs[c], ys[r], xs[c + 1], ys[r + 1]);
            let members = &buckets[r * nc + c];
            let (bbox, confidence) = match hull(members.iter().map(|t| &t.bbox)) {
                None => (rect, EMPTY_CELL_CONFIDENCE),
                Some(h) => {
                    let bbox = h.intersection(&rect).unwrap_or(rect);
                    let inside = members.iter().filter(|t| bbox.contains(&t.bbox, 1e-9)).count();
                    (bbox, inside as f64 / members.len() as f64)
                }
            };
            cells.push(CellBox {
                cell_id: format!("c{}", cells.len()),
                bbox,
                confidence,
            });
        }
    }
    cells
}

/// Index of the slot of `v` among sorted boundaries; values on a cut go to
/// the later slot.
fn slot(bounds: &[f64], v: f64) -> usize {
    let cuts = &bounds[1..bounds.len() - 1];
    cuts.iter().filter(|c| **c <= v).count()
}

/// Region edges plus interior cut positions, sorted.
fn boundaries(
    page: &PageLayout,
    region: &BBox,
    tokens: &[&Token],
    axis: Axis,
    gap_min: f64,
    valley_frac: f64,
) -> Vec<f64> {
    let (lo, hi) = region.span(axis);
    let across = match axis {
        Axis::Col => Axis::Row,
        Axis::Row => Axis::Col,
    };
    let orientation = match axis {
        Axis::Col => Orientation::Vertical,
        Axis::Row => Orientation::Horizontal,
    };
    let mut rule_cuts: Vec<f64> = page
        .rulings
        .iter()
        .filter(|l| l.orientation == orientation)
        .filter(|l| {
            let (a, b) = l.bbox.span(across);
            let (ra, rb) = region.span(across);
            a.max(ra) < b.min(rb)
        })
        .map(|l| l.position())
        .filter(|p| *p > lo + SNAP_TOLERANCE && *p < hi - SNAP_TOLERANCE)
        .collect();
    rule_cuts.sort_by(f64::total_cmp);
    rule_cuts.dedup_by(|a, b| (*a - *b).abs() <= SNAP_TOLERANCE);

    let mut cuts = rule_cuts.clone();
    for (vlo, vhi) in valleys(tokens, axis, lo, hi, valley_frac) {
        if vhi - vlo <= gap_min {
            continue;
        }
        let ruled = rule_cuts
            .iter()
            .any(|c| *c >= vlo - SNAP_TOLERANCE && *c <= vhi + SNAP_TOLERANCE);
        if !ruled {
            cuts.push((vlo + vhi) * 0.5);
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(cuts.len() + 2);
    out.push(lo);
    out.extend(cuts);
    out.push(hi);
    out
}

/// Maximal runs strictly between the first and last token edge where the
/// fraction of tokens covering the projection stays below `valley_frac`.
fn valleys(tokens: &[&Token], axis: Axis, lo: f64, hi: f64, valley_frac: f64) -> Vec<(f64, f64)> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let spans: Vec<(f64, f64)> = tokens
        .iter()
        .map(|t| {
            let (a, b) = t.bbox.span(axis);
            (a.max(lo), b.min(hi))
        })
        .collect();
    let mut points: Vec<f64> = spans.iter().flat_map(|&(a, b)| [a, b]).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let n = tokens.len() as f64;
    let first = points[0];
    let mut out = Vec::new();
    let mut run: Option<(f64, f64)> = None;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let covering = spans.iter().filter(|s| s.0 <= a && s.1 >= b).count() as f64;
        if covering / n < valley_frac {
            run = match run {
                Some((ra, _)) => Some((ra, b)),
                None => Some((a, b)),
            };
        } else if let Some(r) = run.take() {
            // Runs touching the outermost token edges are margins.
            if r.0 > first {
                out.push(r);
            }
        }
    }
    out
}
