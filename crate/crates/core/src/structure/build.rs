use crate::extract::CellBox;
use crate::geometry::BBox;
use crate::layout::{token_order, PageLayout, Token};

use super::{cluster_axis, id_cmp, Cell, TableGrid};

/// Minimum overlap fraction for interval clustering on both axes.
pub const OVERLAP_MIN: f64 = 0.5;

struct Placed {
    id: String,
    bbox: BBox,
    rows: (usize, usize),
    cols: (usize, usize),
}

/// Assembles a tiled grid from cell boxes: rows and columns come from
/// interval clustering, conflicting cells shrink into free space or are
/// absorbed, holes are filled with empty cells, and every token inside the
/// region goes to the tightest cell containing its center.
pub fn build_grid(table_id: &str, region: &BBox, cells: &[CellBox], page: &PageLayout) -> TableGrid {
    let mut boxes: Vec<&CellBox> = cells.iter().collect();
    boxes.sort_by(|a, b| a.bbox.reading_cmp(&b.bbox).then_with(|| id_cmp(&a.cell_id, &b.cell_id)));

    let tokens: Vec<&Token> = page.tokens_in(region).collect();
    if boxes.is_empty() {
        let mut cell = Cell {
            cell_id: "c0".into(),
            row: 0,
            col: 0,
            row_span: 1,
            col_span: 1,
            bbox: *region,
            token_ids: Vec::new(),
            text: String::new(),
        };
        fill_tokens(std::slice::from_mut(&mut cell), &tokens);
        return TableGrid {
            table_id: table_id.into(),
            bbox: *region,
            n_rows: 1,
            n_cols: 1,
            cells: vec![cell],
        };
    }

    let rows = cluster_axis(
        &boxes.iter().map(|c| (c.bbox.y0, c.bbox.y1)).collect::<Vec<_>>(),
        OVERLAP_MIN,
    );
    let cols = cluster_axis(
        &boxes.iter().map(|c| (c.bbox.x0, c.bbox.x1)).collect::<Vec<_>>(),
        OVERLAP_MIN,
    );
    let (n_rows, n_cols) = (rows.bands.len(), cols.bands.len());

    let mut pending: Vec<Placed> = boxes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let r = &rows.assignment[i];
            let k = &cols.assignment[i];
            Placed {
                id: c.cell_id.clone(),
                bbox: c.bbox,
                rows: (r[0], r[r.len() - 1] + 1),
                cols: (k[0], k[k.len() - 1] + 1),
            }
        })
        .collect();
    // Unit cells claim their positions before spanning ones.
    pending.sort_by(|a, b| {
        let area = |p: &Placed| (p.rows.1 - p.rows.0) * (p.cols.1 - p.cols.0);
        area(a)
            .cmp(&area(b))
            .then((a.rows.0, a.cols.0).cmp(&(b.rows.0, b.cols.0)))
            .then_with(|| id_cmp(&a.id, &b.id))
    });

    let mut owner: Vec<Option<usize>> = vec![None; n_rows * n_cols];
    let mut placed: Vec<Placed> = Vec::new();
    for mut p in pending {
        let free = |owner: &[Option<usize>], rows: (usize, usize), cols: (usize, usize)| {
            (rows.0..rows.1).all(|r| (cols.0..cols.1).all(|c| owner[r * n_cols + c].is_none()))
        };
        if !free(&owner, p.rows, p.cols) {
            match largest_free(&owner, n_cols, p.rows, p.cols) {
                Some((rows, cols)) => {
                    p.rows = rows;
                    p.cols = cols;
                }
                None => {
                    let host = owner[p.rows.0 * n_cols + p.cols.0].expect("occupied");
                    let h = &mut placed[host];
                    h.bbox = h.bbox.union(&p.bbox);
                    continue;
                }
            }
        }
        let idx = placed.len();
        for r in p.rows.0..p.rows.1 {
            for c in p.cols.0..p.cols.1 {
                owner[r * n_cols + c] = Some(idx);
            }
        }
        placed.push(p);
    }

    let mut grid_cells: Vec<Cell> = placed
        .into_iter()
        .map(|p| Cell {
            cell_id: p.id,
            row: p.rows.0,
            col: p.cols.0,
            row_span: p.rows.1 - p.rows.0,
            col_span: p.cols.1 - p.cols.0,
            bbox: p.bbox,
            token_ids: Vec::new(),
            text: String::new(),
        })
        .collect();

    let mut ids: Vec<String> = grid_cells.iter().map(|c| c.cell_id.clone()).collect();
    for r in 0..n_rows {
        for c in 0..n_cols {
            if owner[r * n_cols + c].is_none() {
                let id = super::fresh_id(ids.iter().map(String::as_str), "c");
                ids.push(id.clone());
                let (x0, x1) = cols.bands[c];
                let (y0, y1) = rows.bands[r];
                grid_cells.push(Cell {
                    cell_id: id,
                    row: r,
                    col: c,
                    row_span: 1,
                    col_span: 1,
                    bbox: BBox::raw(x0, y0, x1, y1),
                    token_ids: Vec::new(),
                    text: String::new(),
                });
            }
        }
    }

    grid_cells.sort_by(|a, b| (a.row, a.col).cmp(&(b.row, b.col)));
    fill_tokens(&mut grid_cells, &tokens);
    TableGrid {
        table_id: table_id.into(),
        bbox: *region,
        n_rows,
        n_cols,
        cells: grid_cells,
    }
}

/// Largest fully free sub-rectangle of the given span, top-left first on
/// ties.
fn largest_free(
    owner: &[Option<usize>],
    n_cols: usize,
    rows: (usize, usize),
    cols: (usize, usize),
) -> Option<((usize, usize), (usize, usize))> {
    let mut best: Option<(usize, (usize, usize), (usize, usize))> = None;
    for r0 in rows.0..rows.1 {
        for c0 in cols.0..cols.1 {
            for r1 in r0 + 1..=rows.1 {
                for c1 in c0 + 1..=cols.1 {
                    let ok = (r0..r1).all(|r| (c0..c1).all(|c| owner[r * n_cols + c].is_none()));
                    if !ok {
                        continue;
                    }
                    let area = (r1 - r0) * (c1 - c0);
                    if best.is_none_or(|(a, _, _)| area > a) {
                        best = Some((area, (r0, r1), (c0, c1)));
                    }
                }
            }
        }
    }
    best.map(|(_, r, c)| (r, c))
}

fn fill_tokens(cells: &mut [Cell], tokens: &[&Token]) {
    let mut members: Vec<Vec<&Token>> = vec![Vec::new(); cells.len()];
    for t in tokens {
        let (cx, cy) = t.bbox.center();
        let target = cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.bbox.contains_point(cx, cy))
            .min_by(|(_, a), (_, b)| {
                a.bbox
                    .area()
                    .total_cmp(&b.bbox.area())
                    .then_with(|| id_cmp(&a.cell_id, &b.cell_id))
            })
            .map(|(i, _)| i);
        if let Some(i) = target {
            members[i].push(t);
        }
    }
    for (cell, mut toks) in cells.iter_mut().zip(members) {
        toks.sort_by(|a, b| token_order(a, b));
        cell.token_ids = toks.iter().map(|t| t.id.clone()).collect();
        cell.text = toks.iter().map(|t| t.text.trim()).collect::<Vec<_>>().join(" ");
    }
}
