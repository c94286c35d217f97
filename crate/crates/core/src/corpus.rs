//! Synthetic page collections with known ground truth.
//!
//! Every page carries a one-token title, one table and a short prose
//! paragraph. Coordinates are whole points; each token's origin is jittered
//! by a seeded uniform offset in `[-1, 1]`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::extract::{CellBox, TableRegion};
use crate::geometry::{hull, BBox};
use crate::layout::{normalize_layout, Orientation, PageLayout, RulingLine, Token};
use crate::structure::{from_annotation, Cell, GridError, TableGrid};

const TOKEN_HEIGHT: i64 = 8;
const CHAR_WIDTH: i64 = 5;
const MARGIN: i64 = 72;
const TITLE_GAP: i64 = 20;
const PROSE_GAP: i64 = 24;
const PROSE_LINES: i64 = 4;
const PROSE_PITCH: i64 = 9;
const RULE_PAD: i64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateSpec {
    pub seed: u64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub col_gap: u32,
    pub row_gap: u32,
    pub ruled: bool,
    pub header_span: bool,
    pub numeric_frac: f64,
    pub page_width: u32,
    pub page_height: u32,
    /// Top-left corner of the table body.
    pub origin_x: u32,
    pub origin_y: u32,
    /// Width reserved for each column's text.
    pub col_width: u32,
}

impl Default for TemplateSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_rows: 4,
            n_cols: 3,
            col_gap: 10,
            row_gap: 8,
            ruled: false,
            header_span: false,
            numeric_frac: 0.7,
            page_width: 612,
            page_height: 792,
            origin_x: 72,
            origin_y: 120,
            col_width: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid template: {0}")]
    Invalid(String),
    #[error("template does not fit on the page: {0}")]
    TooLarge(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPage {
    pub page: PageLayout,
    pub region: TableRegion,
    pub grid: TableGrid,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub pages: Vec<GeneratedPage>,
    /// page_id to generator template index.
    pub manifest: BTreeMap<String, usize>,
}

impl TemplateSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::Invalid(m.to_string()));
        if self.n_rows == 0 || self.n_cols == 0 {
            return bad("dimensions must be >= 1");
        }
        if self.col_gap == 0 || self.row_gap == 0 {
            return bad("gaps must be > 0");
        }
        if !(0.0..=1.0).contains(&self.numeric_frac) {
            return bad("numeric_frac must lie in [0, 1]");
        }
        if self.col_width < 2 * CHAR_WIDTH as u32 {
            return bad("col_width must fit two characters");
        }
        let right = self.origin_x as i64 + self.table_width() + RULE_PAD + 1;
        let bottom = self.prose_top() + PROSE_LINES * PROSE_PITCH + 1;
        let title_top = self.origin_y as i64 - TITLE_GAP - TOKEN_HEIGHT - RULE_PAD - 1;
        if right > self.page_width as i64 - 1 || bottom > self.page_height as i64 - 1 {
            return Err(CorpusError::TooLarge(format!(
                "content reaches ({right}, {bottom}) on a {}x{} page",
                self.page_width, self.page_height
            )));
        }
        if title_top < 1 || (self.origin_x as i64) < RULE_PAD + 2 {
            return Err(CorpusError::TooLarge("origin leaves no room for the title".into()));
        }
        if self.page_width as i64 <= 2 * MARGIN + 2 * CHAR_WIDTH {
            return Err(CorpusError::TooLarge("page narrower than its margins".into()));
        }
        Ok(())
    }

    fn table_width(&self) -> i64 {
        let n = self.n_cols as i64;
        n * self.col_width as i64 + (n - 1) * self.col_gap as i64
    }

    fn table_height(&self) -> i64 {
        let n = self.n_rows as i64;
        n * TOKEN_HEIGHT + (n - 1) * self.row_gap as i64
    }

    fn prose_top(&self) -> i64 {
        self.origin_y as i64 + self.table_height() + RULE_PAD + PROSE_GAP
    }

    fn col_x(&self, c: usize) -> i64 {
        self.origin_x as i64 + c as i64 * (self.col_width + self.col_gap) as i64
    }

    fn row_y(&self, r: usize) -> i64 {
        self.origin_y as i64 + r as i64 * (TOKEN_HEIGHT + self.row_gap as i64)
    }
}

fn word(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| (b'a' + rng.random_range(0..26u8)) as char)
        .collect()
}

fn number(rng: &mut ChaCha8Rng, len: usize) -> String {
    let mut s: String = (0..len)
        .map(|_| (b'0' + rng.random_range(0..10u8)) as char)
        .collect();
    if len >= 4 && rng.random_bool(0.5) {
        s.replace_range(len - 2..len - 1, ".");
    }
    s
}

fn bx(x0: i64, y0: i64, x1: i64, y1: i64) -> BBox {
    BBox::raw(x0 as f64, y0 as f64, x1 as f64, y1 as f64)
}

/// One page and its ground truth, fully determined by `spec` and `page_id`.
pub fn generate_page(spec: &TemplateSpec, page_id: &str) -> Result<GeneratedPage, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tokens: Vec<Token> = Vec::new();
    let mut push = |rng: &mut ChaCha8Rng, x: i64, y: i64, text: String| -> String {
        let (dx, dy) = (rng.random_range(-1..=1i64), rng.random_range(-1..=1i64));
        let w = CHAR_WIDTH * text.chars().count() as i64;
        let id = format!("w{}", tokens.len());
        tokens.push(Token {
            id: id.clone(),
            bbox: bx(x + dx, y + dy, x + dx + w, y + dy + TOKEN_HEIGHT),
            text,
        });
        id
    };

    let title = format!("Table{}", rng.random_range(1..100u32));
    push(&mut rng, spec.origin_x as i64, spec.origin_y as i64 - TITLE_GAP - TOKEN_HEIGHT, title);

    let max_chars = (spec.col_width as i64 / CHAR_WIDTH) as usize;
    let mut cell_tokens: Vec<(usize, usize, usize, String)> = Vec::new();
    for r in 0..spec.n_rows {
        if r == 0 && spec.header_span {
            let width = spec.table_width() * 3 / 5;
            let chars = ((width / CHAR_WIDTH) as usize).max(2);
            let x = spec.origin_x as i64 + (spec.table_width() - chars as i64 * CHAR_WIDTH) / 2;
            let text = word(&mut rng, chars);
            let id = push(&mut rng, x, spec.row_y(0), text);
            cell_tokens.push((0, 0, spec.n_cols, id));
            continue;
        }
        for c in 0..spec.n_cols {
            let text = if r == 0 {
                word(&mut rng, max_chars)
            } else if rng.random_bool(spec.numeric_frac) {
                let len = rng.random_range(2..=max_chars);
                number(&mut rng, len)
            } else {
                let len = rng.random_range(2..=max_chars);
                word(&mut rng, len)
            };
            let id = push(&mut rng, spec.col_x(c), spec.row_y(r), text);
            cell_tokens.push((r, c, 1, id));
        }
    }

    let mut y = spec.prose_top();
    for _ in 0..PROSE_LINES {
        let mut x = MARGIN;
        loop {
            let len = rng.random_range(2..=9usize);
            if x + len as i64 * CHAR_WIDTH > spec.page_width as i64 - MARGIN {
                break;
            }
            let text = word(&mut rng, len);
            push(&mut rng, x, y, text);
            x += (len as i64 + 1) * CHAR_WIDTH;
        }
        y += PROSE_PITCH;
    }

    let table_ids: Vec<&String> = cell_tokens.iter().map(|t| &t.3).collect();
    let by_id: BTreeMap<&str, &Token> = tokens.iter().map(|t| (t.id.as_str(), t)).collect();
    let token_hull = hull(table_ids.iter().map(|id| &by_id[id.as_str()].bbox)).expect("table has tokens");

    let mut rulings = Vec::new();
    // Ruled cell rectangles indexed [row][col]: cut positions on each axis.
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    if spec.ruled {
        let x0 = spec.origin_x as i64 - RULE_PAD;
        let x1 = spec.origin_x as i64 + spec.table_width() + RULE_PAD;
        let y0 = spec.origin_y as i64 - RULE_PAD;
        let y1 = spec.origin_y as i64 + spec.table_height() + RULE_PAD;
        xs.push(x0);
        for c in 1..spec.n_cols {
            xs.push(spec.col_x(c) - spec.col_gap as i64 / 2);
        }
        xs.push(x1);
        ys.push(y0);
        for r in 1..spec.n_rows {
            ys.push(spec.row_y(r) - spec.row_gap as i64 / 2);
        }
        ys.push(y1);
        let h = |y: i64, a: i64, b: i64| RulingLine {
            orientation: Orientation::Horizontal,
            bbox: bx(a, y, b, y + 1),
        };
        let v = |x: i64, a: i64, b: i64| RulingLine {
            orientation: Orientation::Vertical,
            bbox: bx(x, a, x + 1, b),
        };
        for &y in &ys {
            rulings.push(h(y, x0, x1 + 1));
        }
        let inner_top = if spec.header_span && spec.n_rows > 1 { ys[1] } else { y0 };
        for (i, &x) in xs.iter().enumerate() {
            let outer = i == 0 || i == xs.len() - 1;
            rulings.push(v(x, if outer { y0 } else { inner_top }, y1 + 1));
        }
    }

    let mut cells = Vec::new();
    for (k, (r, c, span, id)) in cell_tokens.iter().enumerate() {
        let tok = by_id[id.as_str()];
        let bbox = if spec.ruled {
            bx(xs[*c], ys[*r], xs[c + span], ys[r + 1])
        } else {
            tok.bbox
        };
        cells.push(Cell {
            cell_id: format!("c{k}"),
            row: *r,
            col: *c,
            row_span: 1,
            col_span: *span,
            bbox,
            token_ids: vec![id.clone()],
            text: tok.text.clone(),
        });
    }
    let table_box = if spec.ruled {
        bx(xs[0], ys[0], xs[xs.len() - 1] + 1, ys[ys.len() - 1] + 1)
    } else {
        token_hull
    };

    let page = normalize_layout(PageLayout {
        page_id: page_id.to_string(),
        width: spec.page_width as f64,
        height: spec.page_height as f64,
        tokens,
        rulings,
        raster_ref: None,
    });
    let grid = TableGrid {
        table_id: "t0".into(),
        bbox: table_box,
        n_rows: spec.n_rows,
        n_cols: spec.n_cols,
        cells,
    };
    let region = TableRegion {
        table_id: "t0".into(),
        bbox: table_box,
        confidence: 1.0,
    };
    Ok(GeneratedPage { page, region, grid })
}

/// Cell boxes of a gap-separated lattice with at most one spanning cell,
/// plus one token per cell. `rects` holds each cell's
/// `(row, col, row_span, col_span)` in the order of `cells`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellLayout {
    pub region: BBox,
    pub cells: Vec<CellBox>,
    pub page: PageLayout,
    pub n_rows: usize,
    pub n_cols: usize,
    pub rects: Vec<(usize, usize, usize, usize)>,
}

/// Random lattice of up to `max_rows` by `max_cols` bands. Box edges are
/// pulled inward by up to 2pt; gaps between bands are at least 4pt.
pub fn cell_layout(seed: u64, max_rows: usize, max_cols: usize) -> CellLayout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_rows = rng.random_range(1..=max_rows.max(1));
    let n_cols = rng.random_range(1..=max_cols.max(1));
    let bands = |rng: &mut ChaCha8Rng, n: usize, start: i64, size: (i64, i64), gap: (i64, i64)| {
        let mut out = Vec::with_capacity(n);
        let mut at = start;
        for _ in 0..n {
            let len = rng.random_range(size.0..=size.1);
            out.push((at, at + len));
            at += len + rng.random_range(gap.0..=gap.1);
        }
        out
    };
    let cols = bands(&mut rng, n_cols, 50, (20, 60), (4, 12));
    let rows = bands(&mut rng, n_rows, 80, (10, 24), (4, 8));

    // An optional span that leaves every band witnessed by a plain cell.
    let mut span = None;
    if rng.random_bool(0.6) && n_rows * n_cols > 1 {
        let rs = rng.random_range(1..=n_rows);
        let cs = rng.random_range(1..=n_cols);
        if (rs > 1 || cs > 1) && (rs == 1 || cs < n_cols) && (cs == 1 || rs < n_rows) {
            let r0 = rng.random_range(0..=n_rows - rs);
            let c0 = rng.random_range(0..=n_cols - cs);
            span = Some((r0, c0, rs, cs));
        }
    }
    let mut rects = Vec::new();
    for r in 0..n_rows {
        for c in 0..n_cols {
            match span {
                Some((r0, c0, rs, cs)) if (r0..r0 + rs).contains(&r) && (c0..c0 + cs).contains(&c) => {
                    if (r, c) == (r0, c0) {
                        rects.push((r0, c0, rs, cs));
                    }
                }
                _ => rects.push((r, c, 1, 1)),
            }
        }
    }

    let mut cells = Vec::new();
    let mut tokens = Vec::new();
    for (k, &(r, c, rs, cs)) in rects.iter().enumerate() {
        let mut inset = || rng.random_range(0..=2i64);
        let b = bx(
            cols[c].0 + inset(),
            rows[r].0 + inset(),
            cols[c + cs - 1].1 - inset(),
            rows[r + rs - 1].1 - inset(),
        );
        let (cx, cy) = b.center();
        tokens.push(Token {
            id: format!("w{k}"),
            bbox: BBox::raw(cx - 4.0, cy - 3.0, cx + 4.0, cy + 3.0),
            text: format!("r{r}c{c}"),
        });
        cells.push(CellBox {
            cell_id: format!("c{k}"),
            bbox: b,
            confidence: 1.0,
        });
    }
    let region = bx(
        cols[0].0 - 2,
        rows[0].0 - 2,
        cols[n_cols - 1].1 + 2,
        rows[n_rows - 1].1 + 2,
    );
    let page = normalize_layout(PageLayout {
        page_id: format!("lattice-{seed}"),
        width: (region.x1 + 50.0).max(612.0),
        height: (region.y1 + 50.0).max(792.0),
        tokens,
        rulings: Vec::new(),
        raster_ref: None,
    });
    CellLayout {
        region,
        cells,
        page,
        n_rows,
        n_cols,
        rects,
    }
}

/// Seed of the `index`-th page drawn from a template.
pub fn page_seed(template_seed: u64, index: usize) -> u64 {
    template_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64 + 1)
}

/// `count` pages per template, named `p{template:02}-{index:03}`.
pub fn generate_collection(specs: &[(TemplateSpec, usize)]) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    for (t, (spec, count)) in specs.iter().enumerate() {
        for i in 0..*count {
            let page_id = format!("p{t:02}-{i:03}");
            let s = TemplateSpec {
                seed: page_seed(spec.seed, i),
                ..spec.clone()
            };
            corpus.pages.push(generate_page(&s, &page_id)?);
            corpus.manifest.insert(page_id, t);
        }
    }
    Ok(corpus)
}

impl Corpus {
    /// Writes `pages/{id}.json`, `truth/{id}.json` (a list of table
    /// annotations) and `manifest.json` under `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir.join("pages"))?;
        fs::create_dir_all(dir.join("truth"))?;
        for p in &self.pages {
            let id = &p.page.page_id;
            fs::write(dir.join("pages").join(format!("{id}.json")), p.page.to_json())?;
            fs::write(
                dir.join("truth").join(format!("{id}.json")),
                annotation_file(std::slice::from_ref(&p.grid)),
            )?;
        }
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(dir.join("manifest.json"), manifest)
    }
}

/// A page's annotation file: its table records in the export schema.
pub fn annotation_file(grids: &[TableGrid]) -> String {
    let parts: Vec<String> = grids.iter().map(TableGrid::export).collect();
    format!("[{}]", parts.join(","))
}

/// Inverse of [`annotation_file`].
pub fn parse_annotation_file(text: &str) -> Result<Vec<TableGrid>, GridError> {
    let records: Vec<serde_json::Value> =
        serde_json::from_str(text).map_err(|e| GridError::Schema(e.to_string()))?;
    records.iter().map(|r| from_annotation(&r.to_string())).collect()
}
