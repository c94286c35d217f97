//! Axis-aligned boxes in page coordinates (points, origin top-left, y down).

use std::cmp::Ordering;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An axis-aligned rectangle `[x0, y0, x1, y1]`.
///
/// Serialized as a four-element JSON array. Construction through
/// [`BBox::new`] checks the ordering and finiteness invariants; the raw
/// constructor [`BBox::raw`] does not and is meant for intermediate math.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BBoxError {
    #[error("coordinate is not finite")]
    NonFinite,
    #[error("negative coordinate")]
    Negative,
    #[error("x0 < x1 violated")]
    XOrder,
    #[error("y0 < y1 violated")]
    YOrder,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, BBoxError> {
        let b = Self { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub const fn raw(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn validate(&self) -> Result<(), BBoxError> {
        let c = [self.x0, self.y0, self.x1, self.y1];
        if c.iter().any(|v| !v.is_finite()) {
            return Err(BBoxError::NonFinite);
        }
        if c.iter().any(|v| *v < 0.0) {
            return Err(BBoxError::Negative);
        }
        if self.x0 >= self.x1 {
            return Err(BBoxError::XOrder);
        }
        if self.y0 >= self.y1 {
            return Err(BBoxError::YOrder);
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        (self.x1 - self.x0).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y1 - self.y0).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) * 0.5, (self.y0 + self.y1) * 0.5)
    }

    /// Closed containment of a point.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn contains_center_of(&self, other: &BBox) -> bool {
        let (cx, cy) = other.center();
        self.contains_point(cx, cy)
    }

    /// True when `other` lies inside `self`, allowing `eps` slack on each side.
    pub fn contains(&self, other: &BBox, eps: f64) -> bool {
        other.x0 >= self.x0 - eps
            && other.y0 >= self.y0 - eps
            && other.x1 <= self.x1 + eps
            && other.y1 <= self.y1 + eps
    }

    /// Intersection rectangle, or `None` when the overlap has zero area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1);
        let y1 = self.y1.min(other.y1);
        (x0 < x1 && y0 < y1).then_some(BBox::raw(x0, y0, x1, y1))
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox::raw(
            self.x0.min(other.x0),
            self.y0.min(other.y0),
            self.x1.max(other.x1),
            self.y1.max(other.y1),
        )
    }

    pub fn scaled(&self, s: f64) -> BBox {
        BBox::raw(self.x0 * s, self.y0 * s, self.x1 * s, self.y1 * s)
    }

    /// Extent along one axis as `(lo, hi)`.
    pub fn span(&self, axis: Axis) -> (f64, f64) {
        match axis {
            Axis::Col => (self.x0, self.x1),
            Axis::Row => (self.y0, self.y1),
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    /// Reading-order comparison on `(y0, x0)`, then `(y1, x1)`.
    pub fn reading_cmp(&self, other: &BBox) -> Ordering {
        self.y0
            .total_cmp(&other.y0)
            .then(self.x0.total_cmp(&other.x0))
            .then(self.y1.total_cmp(&other.y1))
            .then(self.x1.total_cmp(&other.x1))
    }
}

/// Smallest box covering every input box.
pub fn hull<'a, I>(boxes: I) -> Option<BBox>
where
    I: IntoIterator<Item = &'a BBox>,
{
    boxes.into_iter().fold(None, |acc, b| match acc {
        None => Some(*b),
        Some(h) => Some(h.union(b)),
    })
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b).map_or(0.0, |r| r.area());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Length of the overlap of two closed intervals.
pub fn overlap_len(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

/// Row bands run along y, column bands along x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Row,
    Col,
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x0, y0, x1, y1] = <[f64; 4]>::deserialize(d)?;
        Ok(BBox::raw(x0, y0, x1, y1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        let a = BBox::raw(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::raw(20.0, 20.0, 30.0, 30.0)), 0.0);
        let b = BBox::raw(5.0, 0.0, 15.0, 10.0);
        assert!((iou(&a, &b) - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn touching_boxes_do_not_intersect() {
        let a = BBox::raw(0.0, 0.0, 10.0, 10.0);
        let b = BBox::raw(10.0, 0.0, 20.0, 10.0);
        assert!(a.intersection(&b).is_none());
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn validation() {
        assert_eq!(BBox::new(50.0, 10.0, 10.0, 20.0), Err(BBoxError::XOrder));
        assert_eq!(BBox::new(0.0, 10.0, 10.0, 10.0), Err(BBoxError::YOrder));
        assert_eq!(BBox::new(-1.0, 0.0, 1.0, 1.0), Err(BBoxError::Negative));
        assert_eq!(BBox::new(f64::NAN, 0.0, 1.0, 1.0), Err(BBoxError::NonFinite));
    }

    #[test]
    fn serializes_as_array() {
        let b = BBox::raw(1.0, 2.5, 3.0, 4.0);
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, "[1.0,2.5,3.0,4.0]");
        let back: BBox = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
    }

    proptest::proptest! {
        #[test]
        fn iou_symmetric(ax in 0.0..100.0f64, ay in 0.0..100.0f64, aw in 0.1..50.0f64, ah in 0.1..50.0f64,
                         bx in 0.0..100.0f64, by in 0.0..100.0f64, bw in 0.1..50.0f64, bh in 0.1..50.0f64) {
            let a = BBox::raw(ax, ay, ax + aw, ay + ah);
            let b = BBox::raw(bx, by, bx + bw, by + bh);
            proptest::prop_assert_eq!(iou(&a, &b), iou(&b, &a));
            proptest::prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
            let v = iou(&a, &b);
            proptest::prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
