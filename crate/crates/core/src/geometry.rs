//! Axis-aligned boxes in center form and the overlap primitives built on them.
//!
//! The ordinate grows downward: `top` is the smaller y. Nothing downstream
//! depends on that choice, every quantity here is convention-invariant.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Axis-aligned rectangle given by its center and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite fields and non-positive sizes.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()) {
            return Err(invalid(format!("box has a non-finite field: {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(invalid(format!("box width and height must be positive, got w={} h={}", self.w, self.h)));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { x: self.x + dx, y: self.y + dy, ..*self }
    }

    /// Scales all four fields by `s`, i.e. a similarity about the origin.
    pub fn scaled(&self, s: f64) -> Self {
        Self { x: self.x * s, y: self.y * s, w: self.w * s, h: self.h * s }
    }

    /// Copy of the box scaled by `ratio` about its own center.
    pub fn inner(&self, ratio: f64) -> Self {
        Self { w: self.w * ratio, h: self.h * ratio, ..*self }
    }

    pub fn corners(&self) -> Corners {
        corners_unchecked(self, 1.0)
    }
}

/// Edge coordinates of a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corners {
    pub left: f64,
    pub right: f64,
    pub top: f64,
    pub bottom: f64,
}

impl Corners {
    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    /// Sum of absolute differences over the four edge coordinates.
    pub fn l1_distance(&self, other: &Corners) -> f64 {
        (self.left - other.left).abs()
            + (self.right - other.right).abs()
            + (self.top - other.top).abs()
            + (self.bottom - other.bottom).abs()
    }
}

/// Smallest axis-aligned rectangle covering two boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnclosingBox {
    pub corners: Corners,
    pub width: f64,
    pub height: f64,
    pub area: f64,
    pub diagonal_sq: f64,
}

/// Interval of ratios considered meaningful for auxiliary boxes. Ratios
/// outside it are accepted with a warning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for RatioRange {
    fn default() -> Self {
        Self { lo: 0.5, hi: 1.5 }
    }
}

impl RatioRange {
    pub fn contains(&self, ratio: f64) -> bool {
        ratio >= self.lo && ratio <= self.hi
    }

    pub(crate) fn warn_if_outside(&self, ratio: f64) {
        if !self.contains(ratio) {
            log::warn!("auxiliary-box ratio {ratio} is outside the admissible range [{}, {}]", self.lo, self.hi);
        }
    }
}

pub(crate) fn check_ratio(ratio: f64) -> Result<()> {
    if !ratio.is_finite() || ratio <= 0.0 {
        return Err(invalid(format!("ratio must be finite and > 0, got {ratio}")));
    }
    Ok(())
}

pub(crate) fn corners_unchecked(b: &BBox, ratio: f64) -> Corners {
    let half_w = b.w * ratio / 2.0;
    let half_h = b.h * ratio / 2.0;
    Corners { left: b.x - half_w, right: b.x + half_w, top: b.y - half_h, bottom: b.y + half_h }
}

/// Corners of `b` after scaling it by `ratio` about its center.
pub fn to_corners(b: &BBox, ratio: f64) -> Result<Corners> {
    b.validate()?;
    check_ratio(ratio)?;
    Ok(corners_unchecked(b, ratio))
}

/// Overlap of two closed intervals, clamped at zero.
#[inline]
pub(crate) fn overlap_1d(lo: f64, hi: f64, other_lo: f64, other_hi: f64) -> f64 {
    (hi.min(other_hi) - lo.max(other_lo)).max(0.0)
}

/// Intersection and union of the two boxes after both are scaled by `ratio`.
///
/// The scaled areas (`w·h·ratio²`) are taken from the same corner coordinates
/// as the intersection, so identical boxes give `inter == union` exactly.
pub(crate) fn inter_union(a: &BBox, b: &BBox, ratio: f64) -> (f64, f64) {
    let ca = corners_unchecked(a, ratio);
    let cb = corners_unchecked(b, ratio);
    let iw = overlap_1d(ca.left, ca.right, cb.left, cb.right);
    let ih = overlap_1d(ca.top, ca.bottom, cb.top, cb.bottom);
    let inter = iw * ih;
    let union = cb.width() * cb.height() + ca.width() * ca.height() - inter;
    (inter, union)
}

pub(crate) fn iou_unchecked(a: &BBox, b: &BBox, ratio: f64) -> f64 {
    let (inter, union) = inter_union(a, b, ratio);
    inter / union
}

pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(iou_unchecked(a, b, 1.0))
}

/// IoU of the auxiliary boxes obtained by scaling both inputs by `ratio`.
pub fn inner_iou(a: &BBox, b: &BBox, ratio: f64) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    check_ratio(ratio)?;
    RatioRange::default().warn_if_outside(ratio);
    Ok(iou_unchecked(a, b, ratio))
}

pub(crate) fn enclosing_unchecked(a: &BBox, b: &BBox) -> EnclosingBox {
    let ca = a.corners();
    let cb = b.corners();
    let corners = Corners {
        left: ca.left.min(cb.left),
        right: ca.right.max(cb.right),
        top: ca.top.min(cb.top),
        bottom: ca.bottom.max(cb.bottom),
    };
    let width = corners.width();
    let height = corners.height();
    EnclosingBox { corners, width, height, area: width * height, diagonal_sq: width * width + height * height }
}

pub fn enclosing(a: &BBox, b: &BBox) -> Result<EnclosingBox> {
    a.validate()?;
    b.validate()?;
    Ok(enclosing_unchecked(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    /// Unit-cell coverage count for boxes whose edges sit on the integer grid.
    fn raster_iou(a: &BBox, b: &BBox) -> f64 {
        let (ca, cb) = (a.corners(), b.corners());
        let lo_x = ca.left.min(cb.left).floor() as i64;
        let hi_x = ca.right.max(cb.right).ceil() as i64;
        let lo_y = ca.top.min(cb.top).floor() as i64;
        let hi_y = ca.bottom.max(cb.bottom).ceil() as i64;
        let inside = |c: &Corners, i: i64, j: i64| {
            let (cx, cy) = (i as f64 + 0.5, j as f64 + 0.5);
            cx > c.left && cx < c.right && cy > c.top && cy < c.bottom
        };
        let (mut both, mut any) = (0u64, 0u64);
        for i in lo_x..hi_x {
            for j in lo_y..hi_y {
                let (ia, ib) = (inside(&ca, i, j), inside(&cb, i, j));
                both += (ia && ib) as u64;
                any += (ia || ib) as u64;
            }
        }
        both as f64 / any as f64
    }

    #[test]
    fn corners_at_unit_and_half_ratio() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let c = to_corners(&b, 1.0).unwrap();
        assert_eq!((c.left, c.right, c.top, c.bottom), (-5.0, 5.0, -5.0, 5.0));
        let c = to_corners(&b, 0.5).unwrap();
        assert_eq!((c.left, c.right, c.top, c.bottom), (-2.5, 2.5, -2.5, 2.5));
    }

    #[test]
    fn corners_enlarged() {
        // half-width 8*1.5/2 = 6, half-height 4*1.5/2 = 3
        let c = to_corners(&bx(100.0, 100.0, 8.0, 4.0), 1.5).unwrap();
        assert_eq!((c.left, c.right, c.top, c.bottom), (94.0, 106.0, 97.0, 103.0));
    }

    #[test]
    fn corners_reject_bad_ratio() {
        let b = bx(0.0, 0.0, 1.0, 1.0);
        assert!(to_corners(&b, 0.0).is_err());
        assert!(to_corners(&b, -1.0).is_err());
        assert!(to_corners(&b, f64::NAN).is_err());
    }

    #[test]
    fn degenerate_and_non_finite_boxes_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(BBox::new(f64::INFINITY, 0.0, 1.0, 1.0).is_err());
        let bad = BBox { x: 0.0, y: f64::NAN, w: 1.0, h: 1.0 };
        assert!(iou(&bad, &bx(0.0, 0.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 10.0, 10.0)).unwrap(), 0.0);
        let b = bx(5.0, 0.0, 10.0, 10.0);
        let expected = raster_iou(&a, &b);
        assert_relative_eq!(expected, 1.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(iou(&a, &b).unwrap(), expected, max_relative = 1e-15);
    }

    #[test]
    fn diagonal_disjoint_has_zero_intersection() {
        // both axis overlaps negative: the clamp must keep inter at 0
        let a = bx(0.0, 0.0, 2.0, 2.0);
        let b = bx(5.0, 5.0, 2.0, 2.0);
        let (inter, _) = inter_union(&a, &b, 1.0);
        assert_eq!(inter, 0.0);
    }

    #[test]
    fn enclosing_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let e = enclosing(&a, &a).unwrap();
        assert_eq!((e.width, e.height, e.diagonal_sq), (10.0, 10.0, 200.0));

        let e = enclosing(&a, &bx(20.0, 0.0, 10.0, 10.0)).unwrap();
        assert_eq!((e.width, e.height, e.area), (30.0, 10.0, 300.0));

        let e = enclosing(&a, &bx(2.0, 2.0, 4.0, 4.0)).unwrap();
        assert_eq!(e.corners, a.corners());
    }

    #[test]
    fn inner_iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(5.0, 0.0, 10.0, 10.0);
        for r in [0.5, 0.8, 1.0, 1.3, 1.5] {
            assert_eq!(inner_iou(&a, &a, r).unwrap(), 1.0);
        }
        assert_eq!(inner_iou(&a, &b, 1.0).unwrap(), iou(&a, &b).unwrap());
        // side-5 inner boxes at x=0 and x=5 only touch
        let shrunk = raster_iou(&a.inner(0.5), &b.inner(0.5));
        assert_eq!(shrunk, 0.0);
        assert_eq!(inner_iou(&a, &b, 0.5).unwrap(), shrunk);
        assert!(inner_iou(&a, &b, 0.0).is_err());
    }

    #[test]
    fn inner_iou_outside_range_is_accepted() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(1.0, 0.0, 10.0, 10.0);
        assert!(inner_iou(&a, &b, 3.0).is_ok());
        assert!(!RatioRange::default().contains(3.0));
    }
}
