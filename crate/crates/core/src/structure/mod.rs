//! Row/column structure of a table: interval clustering, grid assembly,
//! HTML rendering and the annotation exchange format.

mod axis;
mod build;
mod html;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::layout::{token_order, PageLayout, Token};

pub use axis::{cluster_axis, AxisClusters};
pub use build::{build_grid, OVERLAP_MIN};
pub use html::to_html;

/// One grid cell. Serialized in the annotation schema, where the token id
/// list is called `tokens`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub cell_id: String,
    pub row: usize,
    pub col: usize,
    pub row_span: usize,
    pub col_span: usize,
    pub bbox: BBox,
    #[serde(rename = "tokens")]
    pub token_ids: Vec<String>,
    pub text: String,
}

impl Cell {
    pub fn row_end(&self) -> usize {
        self.row + self.row_span
    }

    pub fn col_end(&self) -> usize {
        self.col + self.col_span
    }

    pub fn covers(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row_end() && c >= self.col && c < self.col_end()
    }

    /// `(row, col, row_span, col_span)`.
    pub fn rect(&self) -> (usize, usize, usize, usize) {
        (self.row, self.col, self.row_span, self.col_span)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableGrid {
    pub table_id: String,
    pub bbox: BBox,
    pub n_rows: usize,
    pub n_cols: usize,
    pub cells: Vec<Cell>,
}

/// Positions that break the tiling invariant.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TilingReport {
    pub uncovered: Vec<(usize, usize)>,
    pub doubly_covered: Vec<(usize, usize)>,
    pub outside: Vec<String>,
}

impl TilingReport {
    pub fn is_ok(&self) -> bool {
        self.uncovered.is_empty() && self.doubly_covered.is_empty() && self.outside.is_empty()
    }
}

impl fmt::Display for TilingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |v: &[(usize, usize)]| {
            v.iter()
                .map(|(r, c)| format!("({r},{c})"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut parts = Vec::new();
        if !self.uncovered.is_empty() {
            parts.push(format!("uncovered {}", list(&self.uncovered)));
        }
        if !self.doubly_covered.is_empty() {
            parts.push(format!("doubly covered {}", list(&self.doubly_covered)));
        }
        if !self.outside.is_empty() {
            parts.push(format!("outside grid {}", self.outside.join(", ")));
        }
        write!(f, "{}", parts.join("; "))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("annotation schema violation: {0}")]
    Schema(String),
    #[error("tiling violated: {0}")]
    Tiling(TilingReport),
    #[error("invalid grid: {0}")]
    Invalid(String),
}

impl TableGrid {
    pub fn tiling_report(&self) -> TilingReport {
        let mut report = TilingReport::default();
        let mut count = vec![0u32; self.n_rows * self.n_cols];
        for cell in &self.cells {
            if cell.row_span == 0
                || cell.col_span == 0
                || cell.row_end() > self.n_rows
                || cell.col_end() > self.n_cols
            {
                report.outside.push(cell.cell_id.clone());
                continue;
            }
            for r in cell.row..cell.row_end() {
                for c in cell.col..cell.col_end() {
                    count[r * self.n_cols + c] += 1;
                }
            }
        }
        for r in 0..self.n_rows {
            for c in 0..self.n_cols {
                match count[r * self.n_cols + c] {
                    0 => report.uncovered.push((r, c)),
                    1 => {}
                    _ => report.doubly_covered.push((r, c)),
                }
            }
        }
        report
    }

    pub fn check_tiling(&self) -> Result<(), GridError> {
        let report = self.tiling_report();
        if report.is_ok() {
            Ok(())
        } else {
            Err(GridError::Tiling(report))
        }
    }

    /// Full structural validation: dimensions, spans, unique ids, token
    /// uniqueness and tiling.
    pub fn validate(&self) -> Result<(), GridError> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(GridError::Invalid("grid needs at least one row and column".into()));
        }
        let mut ids = HashSet::new();
        let mut tokens = HashSet::new();
        for cell in &self.cells {
            if !ids.insert(cell.cell_id.as_str()) {
                return Err(GridError::Invalid(format!("duplicate cell id {}", cell.cell_id)));
            }
            for t in &cell.token_ids {
                if !tokens.insert(t.as_str()) {
                    return Err(GridError::Invalid(format!("token {t} assigned twice")));
                }
            }
        }
        self.check_tiling()
    }

    pub fn cell(&self, id: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.cell_id == id)
    }

    pub fn cell_at(&self, r: usize, c: usize) -> Option<&Cell> {
        self.cells.iter().find(|cell| cell.covers(r, c))
    }

    pub fn sort_cells(&mut self) {
        self.cells
            .sort_by(|a, b| (a.row, a.col).cmp(&(b.row, b.col)).then_with(|| id_cmp(&a.cell_id, &b.cell_id)));
    }

    /// A cell id not used in this grid.
    pub fn fresh_cell_id(&self) -> String {
        fresh_id(self.cells.iter().map(|c| c.cell_id.as_str()), "c")
    }

    pub fn token_ids(&self) -> impl Iterator<Item = &str> {
        self.cells.iter().flat_map(|c| c.token_ids.iter().map(String::as_str))
    }

    /// Sorts each cell's tokens into reading order and rebuilds its text
    /// from the given token lookup.
    pub fn refresh_text(&mut self, lookup: &BTreeMap<String, Token>) {
        for cell in &mut self.cells {
            refresh_cell(cell, lookup);
        }
    }

    /// Serialized annotation record (cells in row-major order).
    pub fn export(&self) -> String {
        let mut g = self.clone();
        g.sort_cells();
        serde_json::to_string(&g).expect("grid serializes")
    }

    pub fn scaled(&self, s: f64) -> TableGrid {
        let mut g = self.clone();
        g.bbox = g.bbox.scaled(s);
        for c in &mut g.cells {
            c.bbox = c.bbox.scaled(s);
        }
        g
    }
}

pub(crate) fn refresh_cell(cell: &mut Cell, lookup: &BTreeMap<String, Token>) {
    let mut toks: Vec<&Token> = cell
        .token_ids
        .iter()
        .filter_map(|id| lookup.get(id))
        .collect();
    toks.sort_by(|a, b| token_order(a, b));
    cell.token_ids = toks.iter().map(|t| t.id.clone()).collect();
    cell.text = toks
        .iter()
        .map(|t| t.text.trim())
        .collect::<Vec<_>>()
        .join(" ");
}

pub fn token_lookup(page: &PageLayout) -> BTreeMap<String, Token> {
    page.tokens.iter().map(|t| (t.id.clone(), t.clone())).collect()
}

/// Orders ids like `c2` before `c10`: shorter first, then lexicographic.
pub fn id_cmp(a: &str, b: &str) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| a.cmp(b))
}

/// `prefix{n}` with `n` one past the largest numeric suffix in use.
pub fn fresh_id<'a>(existing: impl Iterator<Item = &'a str>, prefix: &str) -> String {
    let next = existing
        .filter_map(|id| id.strip_prefix(prefix)?.parse::<u64>().ok())
        .max()
        .map_or(0, |m| m + 1);
    format!("{prefix}{next}")
}

/// Parses an annotation record, checking schema, spans and tiling.
pub fn from_annotation(json: &str) -> Result<TableGrid, GridError> {
    let mut grid: TableGrid =
        serde_json::from_str(json).map_err(|e| GridError::Schema(e.to_string()))?;
    for c in &grid.cells {
        if c.row_span == 0 || c.col_span == 0 {
            return Err(GridError::Invalid(format!("cell {} has a zero span", c.cell_id)));
        }
    }
    grid.validate()?;
    grid.sort_cells();
    Ok(grid)
}

/// Agreement of a predicted grid with a reference: 1 when the shape and
/// every span rectangle match, otherwise the fraction of reference cells
/// whose `(row, col, row_span, col_span)` is reproduced.
pub fn grid_agreement(pred: &TableGrid, truth: &TableGrid) -> f64 {
    let mut p: Vec<_> = pred.cells.iter().map(Cell::rect).collect();
    let mut t: Vec<_> = truth.cells.iter().map(Cell::rect).collect();
    p.sort_unstable();
    t.sort_unstable();
    if pred.n_rows == truth.n_rows && pred.n_cols == truth.n_cols && p == t {
        return 1.0;
    }
    if t.is_empty() {
        return 0.0;
    }
    let have: HashSet<_> = p.into_iter().collect();
    t.iter().filter(|r| have.contains(r)).count() as f64 / t.len() as f64
}
