//! Candidate table rectangles.

use crate::geometry::{hull, iou, BBox};
use crate::layout::{Orientation, PageLayout};

use super::{features::SNAP_TOLERANCE, ModelParams, DUPLICATE_IOU};

/// Candidates in a fixed order: whitespace-separated token blocks top to
/// bottom, ruling frames, then unions of every run of two or more
/// vertically adjacent blocks. Near-duplicates of an earlier candidate are
/// dropped.
pub fn propose_regions(params: &ModelParams, page: &PageLayout) -> Vec<BBox> {
    let blocks = token_blocks(page, params.row_gap_min);
    let mut candidates: Vec<BBox> = blocks.clone();
    candidates.extend(ruling_frames(page));
    for start in 0..blocks.len() {
        for end in start + 1..blocks.len() {
            if let Some(h) = hull(&blocks[start..=end]) {
                candidates.push(h);
            }
        }
    }
    let mut out: Vec<BBox> = Vec::with_capacity(candidates.len());
    for c in candidates {
        if out.iter().all(|k| iou(k, &c) <= DUPLICATE_IOU) {
            out.push(c);
        }
    }
    out
}

/// Hulls of token groups separated by horizontal whitespace bands taller
/// than `min_gap`.
fn token_blocks(page: &PageLayout, min_gap: f64) -> Vec<BBox> {
    let mut boxes: Vec<BBox> = page.tokens.iter().map(|t| t.bbox).collect();
    boxes.sort_by(|a, b| a.reading_cmp(b));
    let mut blocks: Vec<(BBox, f64)> = Vec::new();
    for b in boxes {
        match blocks.last_mut() {
            Some((h, bottom)) if b.y0 - *bottom <= min_gap => {
                *h = h.union(&b);
                *bottom = bottom.max(b.y1);
            }
            _ => blocks.push((b, b.y1)),
        }
    }
    blocks.into_iter().map(|(h, _)| h).collect()
}

/// Bounding boxes of connected ruling groups containing at least two
/// horizontal and two vertical lines.
fn ruling_frames(page: &PageLayout) -> Vec<BBox> {
    let n = page.rulings.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut c = i;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    for i in 0..n {
        let a = &page.rulings[i].bbox;
        let grown = BBox::raw(
            a.x0 - SNAP_TOLERANCE,
            a.y0 - SNAP_TOLERANCE,
            a.x1 + SNAP_TOLERANCE,
            a.y1 + SNAP_TOLERANCE,
        );
        for j in i + 1..n {
            let b = &page.rulings[j].bbox;
            let touches = grown.x0 <= b.x1 && b.x0 <= grown.x1 && grown.y0 <= b.y1 && b.y0 <= grown.y1;
            if touches {
                let (ra, rb) = (find(&mut parent, i), find(&mut parent, j));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        match groups.iter_mut().find(|(r, _)| *r == root) {
            Some((_, members)) => members.push(i),
            None => groups.push((root, vec![i])),
        }
    }
    let mut frames: Vec<BBox> = groups
        .into_iter()
        .filter_map(|(_, members)| {
            let count = |o| {
                members
                    .iter()
                    .filter(|&&m| page.rulings[m].orientation == o)
                    .count()
            };
            if count(Orientation::Horizontal) < 2 || count(Orientation::Vertical) < 2 {
                return None;
            }
            let h = hull(members.iter().map(|&m| &page.rulings[m].bbox))?;
            (h.area() > 0.0).then_some(h)
        })
        .collect();
    frames.sort_by(|a, b| a.reading_cmp(b));
    frames
}
