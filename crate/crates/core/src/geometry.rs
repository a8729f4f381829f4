//! Oriented grasp rectangles and axis-aligned boxes.
//!
//! Angles are in degrees. A two-finger grasp is symmetric under a half turn, so
//! every orientation is folded into `[-90, 90)` when a rectangle is built.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest side length accepted for a rectangle or box, in pixels.
pub const MIN_EXTENT: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rectangle side too small or not finite: w={w}, h={h}")]
    DegenerateRect { w: f64, h: f64 },
    #[error("box must satisfy xmin < xmax and ymin < ymax: [{xmin}, {ymin}, {xmax}, {ymax}]")]
    InvalidBox {
        xmin: f64,
        ymin: f64,
        xmax: f64,
        ymax: f64,
    },
    #[error("non-finite coordinate")]
    NonFinite,
}

/// A 2D point in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Folds an angle in degrees into `[-90, 90)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta - 180.0 * ((theta + 90.0) / 180.0).floor();
    // floor() can land exactly on the upper edge through rounding
    if t >= 90.0 {
        t - 180.0
    } else {
        t
    }
}

/// Distance between two orientations on the 180°-periodic circle, in `[0, 90]`.
pub fn angle_difference(t1: f64, t2: f64) -> f64 {
    let d = (t1 - t2).rem_euclid(180.0);
    d.min(180.0 - d)
}

/// Grasp rectangle: center `(x, y)`, opening `w`, jaw width `h`, orientation
/// `theta` in degrees. Serialized as `[x, y, w, h, theta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 5]", into = "[f64; 5]")]
pub struct OrientedRect {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    theta: f64,
}

impl OrientedRect {
    pub fn new(x: f64, y: f64, w: f64, h: f64, theta: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && theta.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !(w.is_finite() && h.is_finite()) || w < MIN_EXTENT || h < MIN_EXTENT {
            return Err(GeometryError::DegenerateRect { w, h });
        }
        Ok(Self {
            x,
            y,
            w,
            h,
            theta: normalize_angle(theta),
        })
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corners in counter-clockwise order (positive shoelace area in an x-right,
    /// y-up reading of the coordinates).
    pub fn vertices(&self) -> [Point2; 4] {
        let (s, c) = self.theta.to_radians().sin_cos();
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)].map(|(lx, ly)| {
            Point2::new(self.x + lx * c - ly * s, self.y + lx * s + ly * c)
        })
    }

    /// Coordinates of `p` in the rectangle's own frame (opening axis first).
    pub fn to_local(&self, p: Point2) -> Point2 {
        let (s, c) = self.theta.to_radians().sin_cos();
        let (dx, dy) = (p.x - self.x, p.y - self.y);
        Point2::new(dx * c + dy * s, -dx * s + dy * c)
    }

    /// Closed membership test.
    pub fn contains(&self, p: Point2) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= self.w / 2.0 && l.y.abs() <= self.h / 2.0
    }

    /// Open membership test: points on the border are outside.
    pub fn contains_strict(&self, p: Point2) -> bool {
        let l = self.to_local(p);
        l.x.abs() < self.w / 2.0 && l.y.abs() < self.h / 2.0
    }

    /// Tight axis-aligned bounds.
    pub fn bounds(&self) -> AABox {
        let v = self.vertices();
        let fold = |f: fn(f64, f64) -> f64, g: fn(&Point2) -> f64, init: f64| {
            v.iter().map(g).fold(init, f)
        };
        AABox {
            xmin: fold(f64::min, |p| p.x, f64::INFINITY),
            ymin: fold(f64::min, |p| p.y, f64::INFINITY),
            xmax: fold(f64::max, |p| p.x, f64::NEG_INFINITY),
            ymax: fold(f64::max, |p| p.y, f64::NEG_INFINITY),
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.x, self.y, self.w, self.h, self.theta]
    }
}

impl TryFrom<[f64; 5]> for OrientedRect {
    type Error = GeometryError;
    fn try_from(v: [f64; 5]) -> Result<Self, Self::Error> {
        OrientedRect::new(v[0], v[1], v[2], v[3], v[4])
    }
}

impl From<OrientedRect> for [f64; 5] {
    fn from(r: OrientedRect) -> Self {
        r.to_array()
    }
}

/// Free-function form of [`OrientedRect::vertices`].
pub fn rect_vertices(r: &OrientedRect) -> [Point2; 4] {
    r.vertices()
}

/// Signed shoelace area; positive for counter-clockwise order.
pub fn polygon_signed_area(poly: &[Point2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (i, p) in poly.iter().enumerate() {
        let q = poly[(i + 1) % poly.len()];
        acc += p.x * q.y - q.x * p.y;
    }
    acc / 2.0
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Sutherland–Hodgman clip of `subject` against a convex counter-clockwise `clip` polygon.
pub fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut output: Vec<Point2> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        let mut prev = input[input.len() - 1];
        let mut prev_side = cross(a, b, prev);
        for &cur in &input {
            let cur_side = cross(a, b, cur);
            if cur_side >= 0.0 {
                if prev_side < 0.0 {
                    output.push(segment_line_intersection(prev, cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_side >= 0.0 {
                output.push(segment_line_intersection(prev, cur, prev_side, cur_side));
            }
            prev = cur;
            prev_side = cur_side;
        }
    }
    output
}

fn segment_line_intersection(p: Point2, q: Point2, sp: f64, sq: f64) -> Point2 {
    let t = sp / (sp - sq);
    Point2::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// Area of the intersection of two oriented rectangles.
pub fn intersection_area(a: &OrientedRect, b: &OrientedRect) -> f64 {
    let (ca, cb) = (a.center(), b.center());
    let reach = (a.w.hypot(a.h) + b.w.hypot(b.h)) / 2.0;
    if (ca.x - cb.x).hypot(ca.y - cb.y) > reach {
        return 0.0;
    }
    polygon_signed_area(&clip_convex(&a.vertices(), &b.vertices())).max(0.0)
}

/// Jaccard index (intersection over union) of two oriented rectangles.
pub fn rotated_jaccard(a: &OrientedRect, b: &OrientedRect) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Axis-aligned box. Serialized as `[xmin, ymin, xmax, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct AABox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl AABox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, GeometryError> {
        if ![xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if xmin >= xmax || ymin >= ymax {
            return Err(GeometryError::InvalidBox {
                xmin,
                ymin,
                xmax,
                ymax,
            });
        }
        Ok(Self {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point2 {
        Point2::new(
            (self.xmin + self.xmax) / 2.0,
            (self.ymin + self.ymax) / 2.0,
        )
    }

    /// Closed containment.
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    /// Overlap region, if it has positive area.
    pub fn intersection(&self, other: &AABox) -> Option<AABox> {
        let b = AABox {
            xmin: self.xmin.max(other.xmin),
            ymin: self.ymin.max(other.ymin),
            xmax: self.xmax.min(other.xmax),
            ymax: self.ymax.min(other.ymax),
        };
        (b.xmin < b.xmax && b.ymin < b.ymax).then_some(b)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }
}

impl TryFrom<[f64; 4]> for AABox {
    type Error = GeometryError;
    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        AABox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<AABox> for [f64; 4] {
    fn from(b: AABox) -> Self {
        b.to_array()
    }
}

pub fn aabb_iou(a: &AABox, b: &AABox) -> f64 {
    let inter = a.intersection(b).map_or(0.0, |i| i.area());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Smallest box containing both inputs.
pub fn union_box(a: &AABox, b: &AABox) -> AABox {
    AABox {
        xmin: a.xmin.min(b.xmin),
        ymin: a.ymin.min(b.ymin),
        xmax: a.xmax.max(b.xmax),
        ymax: a.ymax.max(b.ymax),
    }
}

/// Area of the union of a set of boxes, by coordinate compression.
pub fn union_area(boxes: &[AABox]) -> f64 {
    if boxes.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f64> = boxes.iter().flat_map(|b| [b.xmin, b.xmax]).collect();
    let mut ys: Vec<f64> = boxes.iter().flat_map(|b| [b.ymin, b.ymax]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let mut area = 0.0;
    for xw in xs.windows(2) {
        for yw in ys.windows(2) {
            let (cx, cy) = ((xw[0] + xw[1]) / 2.0, (yw[0] + yw[1]) / 2.0);
            if boxes.iter().any(|b| b.contains(Point2::new(cx, cy))) {
                area += (xw[1] - xw[0]) * (yw[1] - yw[0]);
            }
        }
    }
    area
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(x: f64, y: f64, w: f64, h: f64, t: f64) -> OrientedRect {
        OrientedRect::new(x, y, w, h, t).unwrap()
    }

    fn bx(a: f64, b: f64, c: f64, d: f64) -> AABox {
        AABox::new(a, b, c, d).unwrap()
    }

    fn close(a: Point2, x: f64, y: f64) -> bool {
        (a.x - x).abs() < 1e-3 && (a.y - y).abs() < 1e-3
    }

    #[test]
    fn normalization_range() {
        assert_eq!(normalize_angle(90.0), -90.0);
        assert_eq!(normalize_angle(-90.0), -90.0);
        assert_eq!(normalize_angle(135.0), -45.0);
        assert_eq!(normalize_angle(-270.0), -90.0);
        assert_eq!(normalize_angle(30.0), 30.0);
        assert!(normalize_angle(89.999_999_999_999_99) < 90.0);
    }

    #[test]
    fn unit_square_vertices() {
        let v = rect(0.0, 0.0, 2.0, 2.0, 0.0).vertices();
        assert!(close(v[0], -1.0, -1.0));
        assert!(close(v[1], 1.0, -1.0));
        assert!(close(v[2], 1.0, 1.0));
        assert!(close(v[3], -1.0, 1.0));
        assert!(polygon_signed_area(&v) > 0.0);
    }

    #[test]
    fn square_rotated_quarter_turn_has_same_corners() {
        let r = rect(0.0, 0.0, 2.0, 2.0, 90.0);
        assert_eq!(r.theta(), -90.0);
        let v = r.vertices();
        for corner in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
            assert!(v.iter().any(|p| close(*p, corner.0, corner.1)));
        }
    }

    #[test]
    fn rotated_vertices_45() {
        let v = rect(0.0, 0.0, 2.0, 1.0, 45.0).vertices();
        assert!(v.iter().any(|p| close(*p, 0.354, 1.061)));
        let cx: f64 = v.iter().map(|p| p.x).sum::<f64>() / 4.0;
        let cy: f64 = v.iter().map(|p| p.y).sum::<f64>() / 4.0;
        assert!(cx.abs() < 1e-12 && cy.abs() < 1e-12);
    }

    #[test]
    fn jaccard_examples() {
        let a = rect(0.0, 0.0, 2.0, 2.0, 0.0);
        assert!((rotated_jaccard(&a, &a) - 1.0).abs() < 1e-12);
        assert_eq!(rotated_jaccard(&a, &rect(10.0, 10.0, 2.0, 2.0, 0.0)), 0.0);
        // overlap 2, union 6
        let j = rotated_jaccard(&a, &rect(1.0, 0.0, 2.0, 2.0, 0.0));
        assert!((j - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn jaccard_is_one_for_half_turn() {
        let a = rect(3.0, 4.0, 10.0, 2.0, 20.0);
        let b = rect(3.0, 4.0, 10.0, 2.0, 200.0);
        assert!((rotated_jaccard(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn angle_difference_examples() {
        assert_eq!(angle_difference(30.0, 30.0), 0.0);
        assert!((angle_difference(30.0, 150.0) - 60.0).abs() < 1e-12);
        assert!((angle_difference(-67.5, 67.5) - 45.0).abs() < 1e-12);
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(aabb_iou(&a, &a), 1.0);
        assert_eq!(aabb_iou(&a, &bx(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert!((aabb_iou(&a, &bx(1.0, 0.0, 3.0, 2.0)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn union_box_examples() {
        let u = bx(0.0, 0.0, 1.0, 1.0);
        assert_eq!(union_box(&u, &u), u);
        assert_eq!(union_box(&u, &bx(2.0, 2.0, 3.0, 3.0)), bx(0.0, 0.0, 3.0, 3.0));
        assert_eq!(
            union_box(&bx(0.0, 1.0, 2.0, 4.0), &bx(1.0, 0.0, 3.0, 2.0)),
            bx(0.0, 0.0, 3.0, 4.0)
        );
    }

    #[test]
    fn rejects_degenerate() {
        assert!(OrientedRect::new(0.0, 0.0, 1e-7, 1.0, 0.0).is_err());
        assert!(OrientedRect::new(0.0, 0.0, 1.0, 0.0, 0.0).is_err());
        assert!(OrientedRect::new(f64::NAN, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(AABox::new(1.0, 0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn union_area_overlapping() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        let b = bx(1.0, 0.0, 3.0, 2.0);
        assert!((union_area(&[a, b]) - 6.0).abs() < 1e-12);
        assert!((union_area(&[a, a]) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn serde_as_arrays() {
        let r = rect(1.0, 2.0, 3.0, 4.0, 100.0);
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, "[1.0,2.0,3.0,4.0,-80.0]");
        assert!(serde_json::from_str::<OrientedRect>("[0,0,0,1,0]").is_err());
        assert!(serde_json::from_str::<AABox>("[2,0,1,1]").is_err());
    }

    fn arb_rect() -> impl Strategy<Value = OrientedRect> {
        (-20.0..20.0f64, -20.0..20.0f64, 0.5..15.0f64, 0.5..15.0f64, -180.0..180.0f64)
            .prop_map(|(x, y, w, h, t)| rect(x, y, w, h, t))
    }

    fn arb_box() -> impl Strategy<Value = AABox> {
        (-10.0..10.0f64, -10.0..10.0f64, 0.1..10.0f64, 0.1..10.0f64)
            .prop_map(|(x, y, w, h)| bx(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn jaccard_symmetric_and_bounded(a in arb_rect(), b in arb_rect()) {
            let ab = rotated_jaccard(&a, &b);
            let ba = rotated_jaccard(&b, &a);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - ba).abs() < 1e-9);
        }

        #[test]
        fn angle_difference_symmetric_periodic(a in -720.0..720.0f64, b in -720.0..720.0f64) {
            prop_assert!((angle_difference(a, b) - angle_difference(b, a)).abs() < 1e-9);
            prop_assert!(angle_difference(a, a + 180.0) < 1e-9);
            let d = angle_difference(a, b);
            prop_assert!((0.0..=90.0).contains(&d));
        }

        #[test]
        fn iou_bounded_and_union_box_laws(a in arb_box(), b in arb_box()) {
            let iou = aabb_iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&iou));
            if a != b { prop_assert!(iou < 1.0); }
            prop_assert_eq!(union_box(&a, &b), union_box(&b, &a));
            prop_assert_eq!(union_box(&a, &a), a);
        }

        #[test]
        fn normalized_angle_in_range(t in -1e4..1e4f64) {
            let n = normalize_angle(t);
            prop_assert!((-90.0..90.0).contains(&n));
            prop_assert!(angle_difference(n, t) < 1e-9);
        }
    }
}
