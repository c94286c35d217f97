//! Table extraction workbench core.
//!
//! Page-layout files are parsed into [`layout::PageLayout`]s, tables are
//! detected and split into cells by a small parametric model
//! ([`extract`]), cells are organized into row/column grids
//! ([`structure`]), pages are clustered into layout templates to pick the
//! pages worth labelling ([`template`]), user corrections are recorded by
//! the [`editor`], and the model is refit from those labels
//! ([`finetune`]). [`project`] ties it together with persistence and jobs.

pub mod corpus;
pub mod editor;
pub mod extract;
pub mod finetune;
pub mod geometry;
pub mod layout;
pub mod project;
pub mod structure;
pub mod template;

pub use extract::{CellBox, ModelParams, TableRegion};
pub use geometry::{iou, Axis, BBox};
pub use layout::{normalize_layout, parse_page_file, PageLayout, RulingLine, Token};
pub use structure::{build_grid, to_html, Cell, TableGrid};
