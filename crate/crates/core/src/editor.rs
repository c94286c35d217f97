//! User corrections to extracted tables.
//!
//! Every operation takes a [`LabelRecord`] by reference and returns a new
//! one, so a failed operation never changes the stored record. Applied
//! operations are appended to the record's edit log together with the
//! model version used for any re-extraction, which makes the log
//! replayable from the initial extraction.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::extract::{detect_cells, ModelParams, TableRegion, OVERLAP_SUPPRESSION_IOU};
use crate::geometry::{hull, iou, Axis, BBox};
use crate::layout::{PageLayout, Token};
use crate::structure::{build_grid, fresh_id, id_cmp, Cell, TableGrid, TilingReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTable {
    pub region: TableRegion,
    pub grid: TableGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelStatus {
    Draft,
    Submitted,
}

/// One correction, with parameters named as in the service API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum EditOp {
    SetTableBbox {
        table_id: String,
        new_bbox: BBox,
    },
    AddTable {
        bbox: BBox,
    },
    DeleteTable {
        table_id: String,
    },
    MergeCells {
        table_id: String,
        cell_ids: Vec<String>,
    },
    SplitCell {
        table_id: String,
        cell_id: String,
        axis: Axis,
        count: usize,
    },
    MergeRows {
        table_id: String,
        row_indices: Vec<usize>,
    },
    MergeCols {
        table_id: String,
        col_indices: Vec<usize>,
    },
    SplitRow {
        table_id: String,
        row_index: usize,
        boundary_y: f64,
    },
    SplitCol {
        table_id: String,
        col_index: usize,
        boundary_x: f64,
    },
    MoveTextChunk {
        table_id: String,
        token_ids: Vec<String>,
        target_cell_id: String,
    },
    EditToken {
        token_id: String,
        new_text: String,
        new_bbox: BBox,
    },
}

impl EditOp {
    pub fn name(&self) -> &'static str {
        match self {
            EditOp::SetTableBbox { .. } => "set_table_bbox",
            EditOp::AddTable { .. } => "add_table",
            EditOp::DeleteTable { .. } => "delete_table",
            EditOp::MergeCells { .. } => "merge_cells",
            EditOp::SplitCell { .. } => "split_cell",
            EditOp::MergeRows { .. } => "merge_rows",
            EditOp::MergeCols { .. } => "merge_cols",
            EditOp::SplitRow { .. } => "split_row",
            EditOp::SplitCol { .. } => "split_col",
            EditOp::MoveTextChunk { .. } => "move_text_chunk",
            EditOp::EditToken { .. } => "edit_token",
        }
    }

    fn grid_edit_target(&self) -> Option<&str> {
        match self {
            EditOp::MergeCells { table_id, .. }
            | EditOp::SplitCell { table_id, .. }
            | EditOp::MergeRows { table_id, .. }
            | EditOp::MergeCols { table_id, .. }
            | EditOp::SplitRow { table_id, .. }
            | EditOp::SplitCol { table_id, .. }
            | EditOp::MoveTextChunk { table_id, .. } => Some(table_id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub op: EditOp,
    pub model_version: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub page_id: String,
    pub revision: u32,
    pub status: LabelStatus,
    pub tables: Vec<LabeledTable>,
    /// Tables as first extracted; the starting point for log replay.
    pub initial: Vec<LabeledTable>,
    /// Tokens whose text or box the user changed, by id.
    pub token_edits: BTreeMap<String, Token>,
    pub edit_log: Vec<LogEntry>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EditError {
    #[error("record is submitted and can no longer change")]
    NotDraft,
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown cell {0}")]
    UnknownCell(String),
    #[error("unknown token {0}")]
    UnknownToken(String),
    #[error("token {0} is not assigned within the table")]
    TokenNotInTable(String),
    #[error("invalid bbox: {0}")]
    InvalidBBox(String),
    #[error("bbox overlaps table {table_id} (IoU {iou:.3} > 0.2)")]
    Overlap { table_id: String, iou: f64 },
    #[error("selection is not rectangular: position ({row},{col}) is not covered by the selected cells")]
    NonRectangular { row: usize, col: usize },
    #[error("selection is empty")]
    EmptySelection,
    #[error("split count must be at least 2, got {0}")]
    InvalidCount(usize),
    #[error("indices {0:?} are not consecutive")]
    NonConsecutive(Vec<usize>),
    #[error("index {index} out of range (grid has {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("boundary {boundary} outside band {index} ({lo}..{hi})")]
    BoundaryOutsideBand {
        index: usize,
        boundary: f64,
        lo: f64,
        hi: f64,
    },
    #[error("token text must not be empty")]
    EmptyText,
    #[error("tiling violated in table {table_id}: {report}")]
    Tiling { table_id: String, report: TilingReport },
}

impl EditError {
    pub fn code(&self) -> &'static str {
        match self {
            EditError::NotDraft => "not_draft",
            EditError::UnknownTable(_) | EditError::UnknownCell(_) | EditError::UnknownToken(_) => "not_found",
            EditError::Tiling { .. } => "tiling_violation",
            EditError::Overlap { .. } => "overlap",
            _ => "invalid_edit",
        }
    }
}

/// What an edit needs besides the record: the page as ingested and the
/// model used for re-extraction.
#[derive(Debug, Clone, Copy)]
pub struct EditContext<'a> {
    pub page: &'a PageLayout,
    pub model: &'a ModelParams,
}

/// Region and grid extraction for one table box.
pub fn extract_table(model: &ModelParams, page: &PageLayout, table_id: &str, bbox: &BBox) -> TableGrid {
    let cells = detect_cells(model, page, bbox);
    build_grid(table_id, bbox, &cells, page)
}

impl LabelRecord {
    /// Draft record seeded from an extraction; region confidences become 1.
    pub fn from_extraction(page_id: &str, regions: &[TableRegion], grids: &[TableGrid]) -> Self {
        let tables: Vec<LabeledTable> = regions
            .iter()
            .zip(grids)
            .map(|(r, g)| LabeledTable {
                region: TableRegion {
                    confidence: 1.0,
                    ..r.clone()
                },
                grid: g.clone(),
            })
            .collect();
        Self {
            page_id: page_id.to_string(),
            revision: 0,
            status: LabelStatus::Draft,
            initial: tables.clone(),
            tables,
            token_edits: BTreeMap::new(),
            edit_log: Vec::new(),
        }
    }

    /// New draft revision continuing from this record.
    pub fn revise(&self) -> Self {
        Self {
            revision: self.revision + 1,
            status: LabelStatus::Draft,
            ..self.clone()
        }
    }

    pub fn is_submitted(&self) -> bool {
        self.status == LabelStatus::Submitted
    }

    pub fn table(&self, table_id: &str) -> Option<&LabeledTable> {
        self.tables.iter().find(|t| t.region.table_id == table_id)
    }

    /// The page with this record's token edits applied.
    pub fn effective_page(&self, page: &PageLayout) -> PageLayout {
        if self.token_edits.is_empty() {
            return page.clone();
        }
        let mut p = page.clone();
        for t in &mut p.tokens {
            if let Some(edit) = self.token_edits.get(&t.id) {
                *t = edit.clone();
            }
        }
        p
    }

    pub fn tiling_report(&self) -> Option<(String, TilingReport)> {
        self.tables.iter().find_map(|t| {
            let r = t.grid.tiling_report();
            (!r.is_ok()).then(|| (t.region.table_id.clone(), r))
        })
    }

    /// Applies one operation, returning the updated record.
    pub fn apply(&self, ctx: EditContext<'_>, op: EditOp) -> Result<LabelRecord, EditError> {
        if self.is_submitted() {
            return Err(EditError::NotDraft);
        }
        let mut rec = self.clone();
        let notes = rec.apply_in_place(ctx, &op)?;
        if let Some((table_id, report)) = rec.tiling_report() {
            return Err(EditError::Tiling { table_id, report });
        }
        rec.edit_log.push(LogEntry {
            op,
            model_version: ctx.model.version_id.clone(),
            notes,
        });
        Ok(rec)
    }

    pub fn submit(&self) -> Result<LabelRecord, EditError> {
        if self.is_submitted() {
            return Err(EditError::NotDraft);
        }
        if let Some((table_id, report)) = self.tiling_report() {
            return Err(EditError::Tiling { table_id, report });
        }
        let mut rec = self.clone();
        rec.status = LabelStatus::Submitted;
        Ok(rec)
    }

    /// Rebuilds a record from its initial tables and edit log.
    pub fn replay<F>(&self, page: &PageLayout, models: F) -> Result<LabelRecord, EditError>
    where
        F: Fn(&str) -> Option<ModelParams>,
    {
        let mut rec = LabelRecord {
            page_id: self.page_id.clone(),
            revision: self.revision,
            status: LabelStatus::Draft,
            tables: self.initial.clone(),
            initial: self.initial.clone(),
            token_edits: BTreeMap::new(),
            edit_log: Vec::new(),
        };
        for entry in &self.edit_log {
            let model = models(&entry.model_version)
                .ok_or_else(|| EditError::InvalidBBox(format!("unknown model {}", entry.model_version)))?;
            rec = rec.apply(EditContext { page, model: &model }, entry.op.clone())?;
        }
        if self.is_submitted() {
            rec = rec.submit()?;
        }
        Ok(rec)
    }

    fn table_mut(&mut self, table_id: &str) -> Result<&mut LabeledTable, EditError> {
        self.tables
            .iter_mut()
            .find(|t| t.region.table_id == table_id)
            .ok_or_else(|| EditError::UnknownTable(table_id.to_string()))
    }

    fn apply_in_place(&mut self, ctx: EditContext<'_>, op: &EditOp) -> Result<Vec<String>, EditError> {
        let page = self.effective_page(ctx.page);
        let lookup: BTreeMap<String, Token> = page.tokens.iter().map(|t| (t.id.clone(), t.clone())).collect();
        let mut notes = Vec::new();
        match op {
            EditOp::SetTableBbox { table_id, new_bbox } => {
                check_bbox(new_bbox, &page)?;
                if self.table(table_id).is_none() {
                    return Err(EditError::UnknownTable(table_id.clone()));
                }
                if self.has_grid_edits(table_id) {
                    notes.push(format!("discarded manual grid edits for table {table_id}"));
                    log::warn!("page {}: border change discards grid edits of {table_id}", self.page_id);
                }
                let grid = extract_table(ctx.model, &page, table_id, new_bbox);
                let t = self.table_mut(table_id)?;
                t.region.bbox = *new_bbox;
                t.grid = grid;
            }
            EditOp::AddTable { bbox } => {
                check_bbox(bbox, &page)?;
                for t in &self.tables {
                    let v = iou(&t.region.bbox, bbox);
                    if v > OVERLAP_SUPPRESSION_IOU {
                        return Err(EditError::Overlap {
                            table_id: t.region.table_id.clone(),
                            iou: v,
                        });
                    }
                }
                let table_id = fresh_id(self.tables.iter().map(|t| t.region.table_id.as_str()), "t");
                let grid = extract_table(ctx.model, &page, &table_id, bbox);
                self.tables.push(LabeledTable {
                    region: TableRegion {
                        table_id,
                        bbox: *bbox,
                        confidence: 1.0,
                    },
                    grid,
                });
            }
            EditOp::DeleteTable { table_id } => {
                let before = self.tables.len();
                self.tables.retain(|t| &t.region.table_id != table_id);
                if self.tables.len() == before {
                    return Err(EditError::UnknownTable(table_id.clone()));
                }
            }
            EditOp::MergeCells { table_id, cell_ids } => {
                let grid = &mut self.table_mut(table_id)?.grid;
                merge_cells(grid, cell_ids)?;
                grid.refresh_text(&lookup);
            }
            EditOp::SplitCell {
                table_id,
                cell_id,
                axis,
                count,
            } => {
                let grid = &mut self.table_mut(table_id)?.grid;
                split_cell(grid, cell_id, *axis, *count, &lookup)?;
                grid.refresh_text(&lookup);
            }
            EditOp::MergeRows { table_id, row_indices } => {
                let grid = &mut self.table_mut(table_id)?.grid;
                merge_bands(grid, Axis::Row, row_indices)?;
                grid.refresh_text(&lookup);
            }
            EditOp::MergeCols { table_id, col_indices } => {
                let grid = &mut self.table_mut(table_id)?.grid;
                merge_bands(grid, Axis::Col, col_indices)?;
                grid.refresh_text(&lookup);
            }
            EditOp::SplitRow {
                table_id,
                row_index,
                boundary_y,
            } => {
                let grid = &mut self.table_mut(table_id)?.grid;
                split_band(grid, Axis::Row, *row_index, *boundary_y, &lookup)?;
                grid.refresh_text(&lookup);
            }
            EditOp::SplitCol {
                table_id,
                col_index,
                boundary_x,
            } => {
                let grid = &mut self.table_mut(table_id)?.grid;
                split_band(grid, Axis::Col, *col_index, *boundary_x, &lookup)?;
                grid.refresh_text(&lookup);
            }
            EditOp::MoveTextChunk {
                table_id,
                token_ids,
                target_cell_id,
            } => {
                let grid = &mut self.table_mut(table_id)?.grid;
                move_tokens(grid, token_ids, target_cell_id)?;
                grid.refresh_text(&lookup);
            }
            EditOp::EditToken {
                token_id,
                new_text,
                new_bbox,
            } => {
                let old = lookup
                    .get(token_id)
                    .ok_or_else(|| EditError::UnknownToken(token_id.clone()))?;
                if new_text.trim().is_empty() {
                    return Err(EditError::EmptyText);
                }
                check_bbox(new_bbox, &page)?;
                let edited = Token {
                    id: old.id.clone(),
                    bbox: *new_bbox,
                    text: new_text.clone(),
                };
                self.token_edits.insert(token_id.clone(), edited.clone());
                let mut lookup = lookup;
                lookup.insert(token_id.clone(), edited);
                for t in &mut self.tables {
                    let holder = t
                        .grid
                        .cells
                        .iter()
                        .find(|c| c.token_ids.iter().any(|id| id == token_id))
                        .map(|c| (c.cell_id.clone(), c.bbox));
                    if let Some((cell_id, cell_box)) = holder {
                        if !cell_box.contains_center_of(new_bbox) {
                            notes.push(format!(
                                "token {token_id} now lies outside cell {cell_id} of table {}; assignment kept",
                                t.region.table_id
                            ));
                        }
                        t.grid.refresh_text(&lookup);
                    }
                }
            }
        }
        Ok(notes)
    }

    /// True when a grid edit on `table_id` was applied after the table's
    /// last (re-)extraction.
    fn has_grid_edits(&self, table_id: &str) -> bool {
        for entry in self.edit_log.iter().rev() {
            match &entry.op {
                EditOp::SetTableBbox { table_id: t, .. } if t == table_id => return false,
                op if op.grid_edit_target() == Some(table_id) => return true,
                _ => {}
            }
        }
        false
    }
}

fn check_bbox(b: &BBox, page: &PageLayout) -> Result<(), EditError> {
    b.validate().map_err(|e| EditError::InvalidBBox(e.to_string()))?;
    if !page.bounds().contains(b, 0.0) {
        return Err(EditError::InvalidBBox("bbox outside page".into()));
    }
    Ok(())
}

fn start(c: &Cell, axis: Axis) -> usize {
    match axis {
        Axis::Row => c.row,
        Axis::Col => c.col,
    }
}

fn span(c: &Cell, axis: Axis) -> usize {
    match axis {
        Axis::Row => c.row_span,
        Axis::Col => c.col_span,
    }
}

fn set_extent(c: &mut Cell, axis: Axis, start: usize, span: usize) {
    match axis {
        Axis::Row => {
            c.row = start;
            c.row_span = span;
        }
        Axis::Col => {
            c.col = start;
            c.col_span = span;
        }
    }
}

fn band_count(g: &TableGrid, axis: Axis) -> usize {
    match axis {
        Axis::Row => g.n_rows,
        Axis::Col => g.n_cols,
    }
}

fn set_band_count(g: &mut TableGrid, axis: Axis, n: usize) {
    match axis {
        Axis::Row => g.n_rows = n,
        Axis::Col => g.n_cols = n,
    }
}

fn bbox_with_span(b: &BBox, axis: Axis, lo: f64, hi: f64) -> BBox {
    match axis {
        Axis::Row => BBox::raw(b.x0, lo, b.x1, hi),
        Axis::Col => BBox::raw(lo, b.y0, hi, b.y1),
    }
}

/// Geometric extent of one band: taken from cells occupying only that
/// band, or from an even slice of spanning cells when there are none.
pub fn band_extent(g: &TableGrid, axis: Axis, index: usize) -> (f64, f64) {
    let single = g
        .cells
        .iter()
        .filter(|c| start(c, axis) == index && span(c, axis) == 1)
        .map(|c| c.bbox.span(axis));
    let mut ext: Option<(f64, f64)> = None;
    for (lo, hi) in single {
        ext = Some(ext.map_or((lo, hi), |(a, b)| (a.min(lo), b.max(hi))));
    }
    if let Some(e) = ext {
        return e;
    }
    for c in &g.cells {
        let (s, n) = (start(c, axis), span(c, axis));
        if index >= s && index < s + n {
            let (lo, hi) = c.bbox.span(axis);
            let step = (hi - lo) / n as f64;
            let k = (index - s) as f64;
            let (a, b) = (lo + step * k, lo + step * (k + 1.0));
            ext = Some(ext.map_or((a, b), |(x, y)| (x.min(a), y.max(b))));
        }
    }
    ext.unwrap_or_else(|| g.bbox.span(axis))
}

fn merge_cells(grid: &mut TableGrid, cell_ids: &[String]) -> Result<(), EditError> {
    if cell_ids.is_empty() {
        return Err(EditError::EmptySelection);
    }
    let mut chosen: Vec<usize> = Vec::new();
    for id in cell_ids {
        let i = grid
            .cells
            .iter()
            .position(|c| &c.cell_id == id)
            .ok_or_else(|| EditError::UnknownCell(id.clone()))?;
        if !chosen.contains(&i) {
            chosen.push(i);
        }
    }
    let r0 = chosen.iter().map(|&i| grid.cells[i].row).min().unwrap();
    let r1 = chosen.iter().map(|&i| grid.cells[i].row_end()).max().unwrap();
    let c0 = chosen.iter().map(|&i| grid.cells[i].col).min().unwrap();
    let c1 = chosen.iter().map(|&i| grid.cells[i].col_end()).max().unwrap();
    for r in r0..r1 {
        for c in c0..c1 {
            if !chosen.iter().any(|&i| grid.cells[i].covers(r, c)) {
                return Err(EditError::NonRectangular { row: r, col: c });
            }
        }
    }
    chosen.sort_by(|&a, &b| {
        let (x, y) = (&grid.cells[a], &grid.cells[b]);
        (x.row, x.col).cmp(&(y.row, y.col))
    });
    let keep = chosen[0];
    let mut merged = grid.cells[keep].clone();
    for &i in &chosen[1..] {
        let c = &grid.cells[i];
        merged.bbox = merged.bbox.union(&c.bbox);
        merged.token_ids.extend(c.token_ids.iter().cloned());
    }
    merged.row = r0;
    merged.col = c0;
    merged.row_span = r1 - r0;
    merged.col_span = c1 - c0;
    let drop: BTreeSet<usize> = chosen.into_iter().collect();
    let mut cells: Vec<Cell> = grid
        .cells
        .iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(i))
        .map(|(_, c)| c.clone())
        .collect();
    cells.push(merged);
    grid.cells = cells;
    grid.sort_cells();
    Ok(())
}

/// Makes room for `extra` new bands directly after band `after`: cells
/// crossing that band widen, cells beyond it shift.
fn insert_bands(grid: &mut TableGrid, axis: Axis, after: usize, extra: usize, except: Option<&str>) {
    for c in &mut grid.cells {
        let (s, n) = (start(c, axis), span(c, axis));
        if s > after {
            set_extent(c, axis, s + extra, n);
        } else if s + n > after && Some(c.cell_id.as_str()) != except {
            set_extent(c, axis, s, n + extra);
        }
    }
    let n = band_count(grid, axis);
    set_band_count(grid, axis, n + extra);
}

fn split_cell(
    grid: &mut TableGrid,
    cell_id: &str,
    axis: Axis,
    count: usize,
    lookup: &BTreeMap<String, Token>,
) -> Result<(), EditError> {
    if count < 2 {
        return Err(EditError::InvalidCount(count));
    }
    let idx = grid
        .cells
        .iter()
        .position(|c| c.cell_id == cell_id)
        .ok_or_else(|| EditError::UnknownCell(cell_id.to_string()))?;
    let (s, n) = (start(&grid.cells[idx], axis), span(&grid.cells[idx], axis));
    if n < count {
        let extra = count - n;
        insert_bands(grid, axis, s + n - 1, extra, Some(cell_id));
        let c = &mut grid.cells[idx];
        set_extent(c, axis, s, count);
    }
    let original = grid.cells.remove(idx);
    let total = span(&original, axis);
    let (lo, hi) = original.bbox.span(axis);
    let step = (hi - lo) / count as f64;
    let mut ids: Vec<String> = grid.cells.iter().map(|c| c.cell_id.clone()).collect();
    ids.push(original.cell_id.clone());
    let mut offset = s;
    let mut fragments = Vec::with_capacity(count);
    for k in 0..count {
        let width = total / count + usize::from(k < total % count);
        let mut frag = original.clone();
        if k > 0 {
            frag.cell_id = fresh_id(ids.iter().map(String::as_str), "c");
            ids.push(frag.cell_id.clone());
        }
        set_extent(&mut frag, axis, offset, width);
        offset += width;
        let (a, b) = (lo + step * k as f64, lo + step * (k + 1) as f64);
        frag.bbox = bbox_with_span(&original.bbox, axis, a, b);
        frag.token_ids = original
            .token_ids
            .iter()
            .filter(|id| {
                let Some(t) = lookup.get(*id) else { return k == 0 };
                let (cx, cy) = t.bbox.center();
                let v = match axis {
                    Axis::Row => cy,
                    Axis::Col => cx,
                };
                let slot = (((v - lo) / step).floor().max(0.0) as usize).min(count - 1);
                slot == k
            })
            .cloned()
            .collect();
        fragments.push(frag);
    }
    grid.cells.extend(fragments);
    grid.sort_cells();
    Ok(())
}

fn merge_bands(grid: &mut TableGrid, axis: Axis, indices: &[usize]) -> Result<(), EditError> {
    if indices.is_empty() {
        return Err(EditError::EmptySelection);
    }
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let len = band_count(grid, axis);
    if let Some(&bad) = sorted.iter().find(|&&i| i >= len) {
        return Err(EditError::IndexOutOfRange { index: bad, len });
    }
    if sorted.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(EditError::NonConsecutive(indices.to_vec()));
    }
    let (a, b) = (sorted[0], sorted[sorted.len() - 1]);
    if a == b {
        return Ok(());
    }
    let removed = b - a;
    let map = |i: usize| {
        if i <= a {
            i
        } else if i <= b {
            a
        } else {
            i - removed
        }
    };
    for c in &mut grid.cells {
        let (s, n) = (start(c, axis), span(c, axis));
        let (ns, ne) = (map(s), map(s + n - 1) + 1);
        set_extent(c, axis, ns, ne - ns);
    }
    set_band_count(grid, axis, len - removed);
    coalesce(grid);
    Ok(())
}

/// Merges overlapping cells into their bounding rectangle until no two
/// cells overlap.
fn coalesce(grid: &mut TableGrid) {
    grid.sort_cells();
    loop {
        let mut pair = None;
        'outer: for i in 0..grid.cells.len() {
            for j in i + 1..grid.cells.len() {
                let (x, y) = (&grid.cells[i], &grid.cells[j]);
                let rows = x.row < y.row_end() && y.row < x.row_end();
                let cols = x.col < y.col_end() && y.col < x.col_end();
                if rows && cols {
                    pair = Some((i, j));
                    break 'outer;
                }
            }
        }
        let Some((i, j)) = pair else { break };
        let other = grid.cells.remove(j);
        let keep = &mut grid.cells[i];
        let (r0, r1) = (keep.row.min(other.row), keep.row_end().max(other.row_end()));
        let (c0, c1) = (keep.col.min(other.col), keep.col_end().max(other.col_end()));
        keep.row = r0;
        keep.row_span = r1 - r0;
        keep.col = c0;
        keep.col_span = c1 - c0;
        keep.bbox = keep.bbox.union(&other.bbox);
        keep.token_ids.extend(other.token_ids);
        if id_cmp(&other.cell_id, &keep.cell_id).is_lt() && (other.row, other.col) == (r0, c0) {
            keep.cell_id = other.cell_id;
        }
        grid.sort_cells();
    }
}

fn split_band(
    grid: &mut TableGrid,
    axis: Axis,
    index: usize,
    boundary: f64,
    lookup: &BTreeMap<String, Token>,
) -> Result<(), EditError> {
    let len = band_count(grid, axis);
    if index >= len {
        return Err(EditError::IndexOutOfRange { index, len });
    }
    let (lo, hi) = band_extent(grid, axis, index);
    if !(boundary > lo && boundary < hi) {
        return Err(EditError::BoundaryOutsideBand {
            index,
            boundary,
            lo,
            hi,
        });
    }
    let targets: Vec<String> = grid
        .cells
        .iter()
        .filter(|c| start(c, axis) == index && span(c, axis) == 1)
        .map(|c| c.cell_id.clone())
        .collect();
    let mut ids: Vec<String> = grid.cells.iter().map(|c| c.cell_id.clone()).collect();
    for c in &mut grid.cells {
        let (s, n) = (start(c, axis), span(c, axis));
        if s > index {
            set_extent(c, axis, s + 1, n);
        } else if s + n > index && !targets.contains(&c.cell_id) {
            set_extent(c, axis, s, n + 1);
        }
    }
    set_band_count(grid, axis, len + 1);
    let mut fresh = Vec::new();
    for c in grid.cells.iter_mut().filter(|c| targets.contains(&c.cell_id)) {
        let (clo, chi) = c.bbox.span(axis);
        let mut second = c.clone();
        second.cell_id = fresh_id(ids.iter().map(String::as_str), "c");
        ids.push(second.cell_id.clone());
        set_extent(&mut second, axis, index + 1, 1);
        c.bbox = bbox_with_span(&c.bbox, axis, clo.min(lo), boundary);
        second.bbox = bbox_with_span(&second.bbox, axis, boundary, chi.max(hi));
        let before = |id: &String| {
            lookup.get(id).is_none_or(|t| {
                let (cx, cy) = t.bbox.center();
                match axis {
                    Axis::Row => cy < boundary,
                    Axis::Col => cx < boundary,
                }
            })
        };
        second.token_ids = c.token_ids.iter().filter(|id| !before(id)).cloned().collect();
        c.token_ids.retain(|id| before(id));
        fresh.push(second);
    }
    grid.cells.extend(fresh);
    grid.sort_cells();
    Ok(())
}

fn move_tokens(grid: &mut TableGrid, token_ids: &[String], target: &str) -> Result<(), EditError> {
    if token_ids.is_empty() {
        return Err(EditError::EmptySelection);
    }
    if grid.cell(target).is_none() {
        return Err(EditError::UnknownCell(target.to_string()));
    }
    for id in token_ids {
        if !grid.cells.iter().any(|c| c.token_ids.contains(id)) {
            return Err(EditError::TokenNotInTable(id.clone()));
        }
    }
    let moving: BTreeSet<&String> = token_ids.iter().collect();
    for c in &mut grid.cells {
        c.token_ids.retain(|id| !moving.contains(id));
    }
    let t = grid
        .cells
        .iter_mut()
        .find(|c| c.cell_id == target)
        .expect("checked above");
    t.token_ids.extend(moving.into_iter().cloned());
    Ok(())
}

/// Hull of a table's token boxes, used when snapping a border to content.
pub fn content_hull(grid: &TableGrid, lookup: &BTreeMap<String, Token>) -> Option<BBox> {
    hull(grid.token_ids().filter_map(|id| lookup.get(id)).map(|t| &t.bbox))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::FEATURE_COUNT;

    fn model() -> ModelParams {
        ModelParams {
            version_id: "m0".into(),
            parent_id: None,
            weights: vec![0.0; FEATURE_COUNT],
            bias: 0.0,
            detect_threshold: 0.5,
            col_gap_min: 8.0,
            row_gap_min: 8.0,
            valley_frac: 0.1,
        }
    }

    /// Tokens on a rows x cols lattice: 40x8 boxes, 60 pt column pitch,
    /// 18 pt row pitch, starting at (100, 100).
    fn lattice(rows: usize, cols: usize) -> PageLayout {
        let mut tokens = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let (x, y) = (100.0 + 60.0 * c as f64, 100.0 + 18.0 * r as f64);
                tokens.push(Token {
                    id: format!("r{r}c{c}"),
                    bbox: BBox::raw(x, y, x + 40.0, y + 8.0),
                    text: format!("v{r}{c}"),
                });
            }
        }
        PageLayout {
            page_id: "p".into(),
            width: 612.0,
            height: 792.0,
            tokens,
            rulings: vec![],
            raster_ref: None,
        }
    }

    fn record(page: &PageLayout, bbox: BBox) -> LabelRecord {
        let grid = extract_table(&model(), page, "t0", &bbox);
        let region = TableRegion {
            table_id: "t0".into(),
            bbox,
            confidence: 0.4,
        };
        LabelRecord::from_extraction(&page.page_id, &[region], &[grid])
    }

    fn lattice_box(rows: usize, cols: usize) -> BBox {
        BBox::raw(100.0, 100.0, 100.0 + 60.0 * cols as f64 - 20.0, 100.0 + 18.0 * rows as f64 - 10.0)
    }

    fn rects(g: &TableGrid) -> Vec<(usize, usize, usize, usize)> {
        g.cells.iter().map(Cell::rect).collect()
    }

    fn apply(rec: &LabelRecord, page: &PageLayout, op: EditOp) -> Result<LabelRecord, EditError> {
        rec.apply(EditContext { page, model: &model() }, op)
    }

    fn id_at(rec: &LabelRecord, r: usize, c: usize) -> String {
        rec.tables[0].grid.cell_at(r, c).unwrap().cell_id.clone()
    }

    #[test]
    fn initial_record_confidence_is_one() {
        let page = lattice(2, 2);
        let rec = record(&page, lattice_box(2, 2));
        assert_eq!(rec.tables[0].region.confidence, 1.0);
        assert_eq!((rec.tables[0].grid.n_rows, rec.tables[0].grid.n_cols), (2, 2));
    }

    #[test]
    fn shrink_border_drops_caption_row() {
        let page = lattice(4, 3);
        let rec = record(&page, lattice_box(4, 3));
        assert_eq!(rec.tables[0].grid.n_rows, 4);
        let smaller = BBox::raw(100.0, 118.0, 260.0, 162.0);
        let rec = apply(&rec, &page, EditOp::SetTableBbox { table_id: "t0".into(), new_bbox: smaller }).unwrap();
        let direct = extract_table(&model(), &page, "t0", &smaller);
        assert_eq!(rec.tables[0].grid, direct);
        assert_eq!(rec.tables[0].grid.n_rows, 3);
    }

    #[test]
    fn same_border_is_idempotent() {
        let page = lattice(3, 3);
        let bbox = lattice_box(3, 3);
        let rec = record(&page, bbox);
        let again = apply(&rec, &page, EditOp::SetTableBbox { table_id: "t0".into(), new_bbox: bbox }).unwrap();
        assert_eq!(again.tables, rec.tables);
    }

    #[test]
    fn border_outside_page_rejected() {
        let page = lattice(2, 2);
        let rec = record(&page, lattice_box(2, 2));
        let err = apply(
            &rec,
            &page,
            EditOp::SetTableBbox { table_id: "t0".into(), new_bbox: BBox::raw(0.0, 0.0, 700.0, 10.0) },
        )
        .unwrap_err();
        assert!(matches!(err, EditError::InvalidBBox(_)));
    }

    #[test]
    fn border_change_discards_grid_edits_with_note() {
        let page = lattice(2, 2);
        let bbox = lattice_box(2, 2);
        let rec = record(&page, bbox);
        let ids = vec![id_at(&rec, 0, 0), id_at(&rec, 0, 1)];
        let rec = apply(&rec, &page, EditOp::MergeCells { table_id: "t0".into(), cell_ids: ids }).unwrap();
        let rec = apply(&rec, &page, EditOp::SetTableBbox { table_id: "t0".into(), new_bbox: bbox }).unwrap();
        assert_eq!(rec.tables[0].grid.cells.len(), 4);
        assert!(rec.edit_log[1].notes[0].contains("discarded"));
    }

    #[test]
    fn add_and_delete_tables() {
        let page = lattice(3, 3);
        let mut rec = LabelRecord::from_extraction("p", &[], &[]);
        let bbox = lattice_box(3, 3);
        rec = apply(&rec, &page, EditOp::AddTable { bbox }).unwrap();
        assert_eq!(rec.tables.len(), 1);
        assert_eq!(rec.tables[0].grid, extract_table(&model(), &page, "t0", &bbox));
        let overlapping = BBox::raw(100.0, 100.0, 260.0, 120.0);
        assert!(matches!(
            apply(&rec, &page, EditOp::AddTable { bbox: overlapping }),
            Err(EditError::Overlap { .. })
        ));
        rec = apply(&rec, &page, EditOp::DeleteTable { table_id: "t0".into() }).unwrap();
        assert!(rec.tables.is_empty());
        rec.submit().unwrap();
    }

    #[test]
    fn merge_pair_in_row() {
        let page = lattice(2, 2);
        let rec = record(&page, lattice_box(2, 2));
        let ids = vec![id_at(&rec, 0, 0), id_at(&rec, 0, 1)];
        let rec = apply(&rec, &page, EditOp::MergeCells { table_id: "t0".into(), cell_ids: ids }).unwrap();
        assert_eq!(rects(&rec.tables[0].grid), vec![(0, 0, 1, 2), (1, 0, 1, 1), (1, 1, 1, 1)]);
        assert_eq!(rec.tables[0].grid.cells[0].text, "v00 v01");
    }

    #[test]
    fn l_shaped_merge_rejected() {
        let page = lattice(2, 2);
        let rec = record(&page, lattice_box(2, 2));
        let ids = vec![id_at(&rec, 0, 0), id_at(&rec, 0, 1), id_at(&rec, 1, 0)];
        let err = apply(&rec, &page, EditOp::MergeCells { table_id: "t0".into(), cell_ids: ids }).unwrap_err();
        assert_eq!(err, EditError::NonRectangular { row: 1, col: 1 });
    }

    #[test]
    fn merge_full_row_matches_golden() {
        let page = lattice(2, 3);
        let rec = record(&page, lattice_box(2, 3));
        let ids = (0..3).map(|c| id_at(&rec, 0, c)).collect();
        let rec = apply(&rec, &page, EditOp::MergeCells { table_id: "t0".into(), cell_ids: ids }).unwrap();
        let golden = include_str!("../tests/golden/merged_row.json").trim_end();
        assert_eq!(rec.tables[0].grid.export(), golden);
    }

    #[test]
    fn split_spanning_cell_keeps_shape() {
        let page = lattice(2, 2);
        let rec = record(&page, lattice_box(2, 2));
        let ids = vec![id_at(&rec, 0, 0), id_at(&rec, 0, 1)];
        let rec = apply(&rec, &page, EditOp::MergeCells { table_id: "t0".into(), cell_ids: ids }).unwrap();
        let merged = id_at(&rec, 0, 0);
        let rec = apply(
            &rec,
            &page,
            EditOp::SplitCell { table_id: "t0".into(), cell_id: merged, axis: Axis::Col, count: 2 },
        )
        .unwrap();
        let g = &rec.tables[0].grid;
        assert_eq!((g.n_rows, g.n_cols), (2, 2));
        assert_eq!(rects(g), vec![(0, 0, 1, 1), (0, 1, 1, 1), (1, 0, 1, 1), (1, 1, 1, 1)]);
        assert_eq!(g.cell_at(0, 0).unwrap().text, "v00");
        assert_eq!(g.cell_at(0, 1).unwrap().text, "v01");
    }

    #[test]
    fn split_unit_cell_inserts_band() {
        let page = lattice(2, 2);
        let rec = record(&page, lattice_box(2, 2));
        let target = id_at(&rec, 0, 0);
        let rec = apply(
            &rec,
            &page,
            EditOp::SplitCell { table_id: "t0".into(), cell_id: target, axis: Axis::Row, count: 2 },
        )
        .unwrap();
        let g = &rec.tables[0].grid;
        assert_eq!((g.n_rows, g.n_cols), (3, 2));
        // Expected tiling by hand: the split cell becomes rows 0 and 1 of
        // column 0, its sibling spans both, the old second row moves to 2.
        assert_eq!(
            rects(g),
            vec![(0, 0, 1, 1), (0, 1, 2, 1), (1, 0, 1, 1), (2, 0, 1, 1), (2, 1, 1, 1)]
        );
    }

    #[test]
    fn split_count_one_rejected() {
        let page = lattice(1, 1);
        let rec = record(&page, lattice_box(1, 1));
        let id = id_at(&rec, 0, 0);
        let err = apply(&rec, &page, EditOp::SplitCell { table_id: "t0".into(), cell_id: id, axis: Axis::Col, count: 1 })
            .unwrap_err();
        assert_eq!(err, EditError::InvalidCount(1));
    }

    #[test]
    fn merge_rows_concatenates_per_column() {
        let page = lattice(2, 2);
        let rec = record(&page, lattice_box(2, 2));
        let rec = apply(&rec, &page, EditOp::MergeRows { table_id: "t0".into(), row_indices: vec![0, 1] }).unwrap();
        let g = &rec.tables[0].grid;
        assert_eq!((g.n_rows, g.n_cols), (1, 2));
        let texts: Vec<_> = g.cells.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["v00 v10", "v01 v11"]);
    }

    #[test]
    fn merge_rows_non_consecutive_rejected() {
        let page = lattice(3, 2);
        let rec = record(&page, lattice_box(3, 2));
        let err = apply(&rec, &page, EditOp::MergeRows { table_id: "t0".into(), row_indices: vec![0, 2] }).unwrap_err();
        assert!(matches!(err, EditError::NonConsecutive(_)));
    }

    #[test]
    fn split_col_of_single_cell() {
        let page = lattice(1, 1);
        let rec = record(&page, lattice_box(1, 1));
        let rec = apply(&rec, &page, EditOp::SplitCol { table_id: "t0".into(), col_index: 0, boundary_x: 120.0 }).unwrap();
        let g = &rec.tables[0].grid;
        assert_eq!((g.n_rows, g.n_cols), (1, 2));
        // Token center x = 120 is not left of the boundary.
        assert_eq!(g.cells[0].text, "");
        assert_eq!(g.cells[1].text, "v00");
        let err = apply(&rec, &page, EditOp::SplitCol { table_id: "t0".into(), col_index: 0, boundary_x: 500.0 }).unwrap_err();
        assert!(matches!(err, EditError::BoundaryOutsideBand { .. }));
    }

    #[test]
    fn move_chunks() {
        let page = lattice(2, 2);
        let rec = record(&page, lattice_box(2, 2));
        let (a, b) = (id_at(&rec, 0, 0), id_at(&rec, 1, 1));
        let moved = apply(
            &rec,
            &page,
            EditOp::MoveTextChunk { table_id: "t0".into(), token_ids: vec!["r0c0".into()], target_cell_id: b.clone() },
        )
        .unwrap();
        let g = &moved.tables[0].grid;
        assert_eq!(g.cell(&a).unwrap().text, "");
        assert_eq!(g.cell(&b).unwrap().text, "v00 v11");
        assert_eq!(g.cells.len(), 4);

        let chunk = vec!["r1c1".to_string(), "r0c1".into(), "r1c0".into()];
        let moved = apply(&rec, &page, EditOp::MoveTextChunk { table_id: "t0".into(), token_ids: chunk, target_cell_id: a.clone() })
            .unwrap();
        let ids = &moved.tables[0].grid.cell(&a).unwrap().token_ids;
        let mut sorted = ids.clone();
        sorted.sort_by(|x, y| crate::layout::token_order(page.token(x).unwrap(), page.token(y).unwrap()));
        assert_eq!(ids, &sorted);
        assert_eq!(ids.len(), 4);

        let err = apply(&rec, &page, EditOp::MoveTextChunk { table_id: "t0".into(), token_ids: vec!["zz".into()], target_cell_id: a })
            .unwrap_err();
        assert_eq!(err, EditError::TokenNotInTable("zz".into()));
    }

    #[test]
    fn edit_token_text_and_box() {
        let page = lattice(1, 2);
        let rec = record(&page, lattice_box(1, 2));
        let bbox = page.token("r0c0").unwrap().bbox;
        let rec2 = apply(&rec, &page, EditOp::EditToken { token_id: "r0c0".into(), new_text: "123".into(), new_bbox: bbox }).unwrap();
        assert_eq!(rec2.tables[0].grid.cells[0].text, "123");
        let far = BBox::raw(400.0, 400.0, 420.0, 408.0);
        let rec3 = apply(&rec2, &page, EditOp::EditToken { token_id: "r0c0".into(), new_text: "123".into(), new_bbox: far }).unwrap();
        assert_eq!(rec3.tables[0].grid.cells[0].token_ids, vec!["r0c0"]);
        assert!(rec3.edit_log[1].notes[0].contains("outside"));
        let err = apply(&rec, &page, EditOp::EditToken { token_id: "r0c0".into(), new_text: " ".into(), new_bbox: bbox }).unwrap_err();
        assert_eq!(err, EditError::EmptyText);
    }

    #[test]
    fn submitted_is_immutable_and_replayable() {
        let page = lattice(3, 3);
        let rec = record(&page, lattice_box(3, 3));
        let ids = vec![id_at(&rec, 0, 0), id_at(&rec, 0, 1)];
        let rec = apply(&rec, &page, EditOp::MergeCells { table_id: "t0".into(), cell_ids: ids }).unwrap();
        let rec = apply(&rec, &page, EditOp::SplitRow { table_id: "t0".into(), row_index: 2, boundary_y: 140.0 }).unwrap();
        let rec = rec.submit().unwrap();
        assert_eq!(apply(&rec, &page, EditOp::DeleteTable { table_id: "t0".into() }).unwrap_err(), EditError::NotDraft);
        let replayed = rec.replay(&page, |_| Some(model())).unwrap();
        assert_eq!(replayed, rec);
        let rev = rec.revise();
        assert_eq!(rev.revision, 1);
        assert!(!rev.is_submitted());
    }

    #[test]
    fn serde_op_names() {
        let op: EditOp = serde_json::from_str(r#"{"op":"split_cell","table_id":"t0","cell_id":"c1","axis":"row","count":2}"#).unwrap();
        assert_eq!(op.name(), "split_cell");
        let bad = serde_json::from_str::<EditOp>(r#"{"op":"delete_table","table_id":"t0","x":1}"#);
        assert!(bad.is_err());
    }
}
