//! Page-layout input files: parsing, validation and normalization.
//!
//! One file describes one page:
//!
//! ```text
//! {"page_id": str, "width": num, "height": num,
//!  "tokens": [{"id": str, "bbox": [x0,y0,x1,y1], "text": str}],
//!  "rulings": [{"orientation": "h"|"v", "bbox": [...]}],
//!  "raster_ref": str|null}
//! ```
//!
//! Unknown fields are rejected. Geometry that violates a box invariant or
//! leaves the page is rejected, never clamped.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, BBoxError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Token {
    pub id: String,
    pub bbox: BBox,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Orientation {
    #[serde(rename = "h")]
    Horizontal,
    #[serde(rename = "v")]
    Vertical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulingLine {
    pub orientation: Orientation,
    pub bbox: BBox,
}

impl RulingLine {
    /// Position across the line: y for horizontal rules, x for vertical ones.
    pub fn position(&self) -> f64 {
        let (cx, cy) = self.bbox.center();
        match self.orientation {
            Orientation::Horizontal => cy,
            Orientation::Vertical => cx,
        }
    }

    pub fn length(&self) -> f64 {
        match self.orientation {
            Orientation::Horizontal => self.bbox.width(),
            Orientation::Vertical => self.bbox.height(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageLayout {
    pub page_id: String,
    pub width: f64,
    pub height: f64,
    pub tokens: Vec<Token>,
    #[serde(default)]
    pub rulings: Vec<RulingLine>,
    #[serde(default)]
    pub raster_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LayoutError {
    #[error("input is not valid UTF-8")]
    Utf8,
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("invalid page: {0}")]
    Page(String),
    #[error("{reason} for token {id}")]
    Token { id: String, reason: String },
    #[error("{reason} for ruling {index}")]
    Ruling { index: usize, reason: String },
}

impl PageLayout {
    pub fn bounds(&self) -> BBox {
        BBox::raw(0.0, 0.0, self.width, self.height)
    }

    pub fn token(&self, id: &str) -> Option<&Token> {
        self.tokens.iter().find(|t| t.id == id)
    }

    /// Tokens whose center lies inside `region`, in page order.
    pub fn tokens_in<'a>(&'a self, region: &'a BBox) -> impl Iterator<Item = &'a Token> + 'a {
        self.tokens
            .iter()
            .filter(move |t| region.contains_center_of(&t.bbox))
    }

    /// Checks every type invariant of the page and its children.
    pub fn validate(&self) -> Result<(), LayoutError> {
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(LayoutError::Page("width must be > 0".into()));
        }
        if !(self.height.is_finite() && self.height > 0.0) {
            return Err(LayoutError::Page("height must be > 0".into()));
        }
        let bounds = self.bounds();
        let mut seen = HashSet::new();
        for t in &self.tokens {
            let err = |reason: String| LayoutError::Token {
                id: t.id.clone(),
                reason,
            };
            if !seen.insert(t.id.as_str()) {
                return Err(err("duplicate id".into()));
            }
            t.bbox.validate().map_err(|e| err(box_reason(e)))?;
            if !bounds.contains(&t.bbox, 0.0) {
                return Err(err("bbox outside page".into()));
            }
        }
        for (index, r) in self.rulings.iter().enumerate() {
            let err = |reason: String| LayoutError::Ruling { index, reason };
            r.bbox.validate().map_err(|e| err(box_reason(e)))?;
            if !bounds.contains(&r.bbox, 0.0) {
                return Err(err("bbox outside page".into()));
            }
            let ok = match r.orientation {
                Orientation::Horizontal => r.bbox.height() <= r.bbox.width(),
                Orientation::Vertical => r.bbox.width() <= r.bbox.height(),
            };
            if !ok {
                return Err(err("orientation does not match bbox shape".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("page layout serializes")
    }
}

fn box_reason(e: BBoxError) -> String {
    e.to_string()
}

/// Parses and validates one page-layout file. Token order is preserved.
pub fn parse_page_file(bytes: &[u8]) -> Result<PageLayout, LayoutError> {
    let text = std::str::from_utf8(bytes).map_err(|_| LayoutError::Utf8)?;
    let page: PageLayout =
        serde_json::from_str(text).map_err(|e| LayoutError::Schema(e.to_string()))?;
    page.validate()?;
    Ok(page)
}

/// Total order on tokens used everywhere tokens are sorted: `(y0, x0)`
/// first, then the remaining coordinates, id and text.
pub fn token_order(a: &Token, b: &Token) -> std::cmp::Ordering {
    a.bbox
        .reading_cmp(&b.bbox)
        .then_with(|| a.id.cmp(&b.id))
        .then_with(|| a.text.cmp(&b.text))
}

/// Sorts tokens by `(y0, x0)`, drops zero-area and whitespace-only tokens,
/// and puts rulings in a canonical order. Idempotent.
pub fn normalize_layout(mut page: PageLayout) -> PageLayout {
    let before = page.tokens.len();
    page.tokens
        .retain(|t| t.bbox.area() > 0.0 && !t.text.trim().is_empty());
    let dropped = before - page.tokens.len();
    if dropped > 0 {
        log::info!("page {}: dropped {dropped} empty tokens", page.page_id);
    }
    page.tokens.sort_by(token_order);
    page.rulings.sort_by(|a, b| {
        a.orientation
            .cmp(&b.orientation)
            .then(a.bbox.reading_cmp(&b.bbox))
    });
    page
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page_json(tokens: &str) -> String {
        format!(
            r#"{{"page_id":"p1","width":612,"height":792,"tokens":[{tokens}],"rulings":[],"raster_ref":null}}"#
        )
    }

    #[test]
    fn minimal_page() {
        let p = parse_page_file(
            page_json(r#"{"id":"t1","bbox":[10,10,50,20],"text":"Revenue"}"#).as_bytes(),
        )
        .unwrap();
        assert_eq!(p.tokens.len(), 1);
        assert!(p.rulings.is_empty());
        assert_eq!(p.tokens[0].text, "Revenue");
    }

    #[test]
    fn inverted_box_names_token() {
        let err = parse_page_file(
            page_json(r#"{"id":"t1","bbox":[50,10,10,20],"text":"x"}"#).as_bytes(),
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "x0 < x1 violated for token t1");
    }

    #[test]
    fn out_of_page_rejected() {
        let err = parse_page_file(
            page_json(r#"{"id":"t9","bbox":[600,10,700,20],"text":"x"}"#).as_bytes(),
        )
        .unwrap_err();
        assert!(matches!(err, LayoutError::Token { ref id, .. } if id == "t9"));
    }

    #[test]
    fn unknown_field_rejected() {
        let err = parse_page_file(
            page_json(r#"{"id":"t1","bbox":[1,1,2,2],"text":"x","font":"Arial"}"#).as_bytes(),
        )
        .unwrap_err();
        match err {
            LayoutError::Schema(m) => assert!(m.contains("font"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_named() {
        let err = parse_page_file(br#"{"page_id":"p","width":1,"tokens":[]}"#).unwrap_err();
        match err {
            LayoutError::Schema(m) => assert!(m.contains("height"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = parse_page_file(
            page_json(
                r#"{"id":"a","bbox":[1,1,2,2],"text":"x"},{"id":"a","bbox":[3,3,4,4],"text":"y"}"#,
            )
            .as_bytes(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn ruling_shape_checked() {
        let text = r#"{"page_id":"p","width":100,"height":100,"tokens":[],"rulings":[{"orientation":"h","bbox":[10,10,11,50]}],"raster_ref":null}"#;
        assert!(matches!(
            parse_page_file(text.as_bytes()),
            Err(LayoutError::Ruling { index: 0, .. })
        ));
    }

    #[test]
    fn normalize_sorts_and_drops() {
        let p = parse_page_file(
            page_json(
                r#"{"id":"c","bbox":[10,30,20,40],"text":"c"},{"id":"b","bbox":[30,10,40,20],"text":"b"},{"id":"a","bbox":[10,10,20,20],"text":"a"},{"id":"w","bbox":[50,50,60,60],"text":"  "}"#,
            )
            .as_bytes(),
        )
        .unwrap();
        let n = normalize_layout(p);
        let ids: Vec<_> = n.tokens.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(normalize_layout(n.clone()), n);
    }

    #[test]
    fn serialization_field_order() {
        let p = parse_page_file(
            page_json(r#"{"id":"t1","bbox":[10,10,50,20],"text":"Revenue"}"#).as_bytes(),
        )
        .unwrap();
        assert_eq!(
            p.to_json(),
            r#"{"page_id":"p1","width":612.0,"height":792.0,"tokens":[{"id":"t1","bbox":[10.0,10.0,50.0,20.0],"text":"Revenue"}],"rulings":[],"raster_ref":null}"#
        );
    }
}
