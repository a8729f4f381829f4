//! Oriented anchor grids, grasp offset coding, and anchor/ground-truth matching.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_difference, normalize_angle, AABox, GeometryError, OrientedRect};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("invalid anchor config: {0}")]
    InvalidConfig(String),
    #[error("grasp delta does not decode to a valid rectangle: {0}")]
    InvalidDelta(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Grid and orientation layout of the anchors placed over one ROI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub grid_w: usize,
    pub grid_h: usize,
    /// Orientations per cell.
    pub k: usize,
    /// Side of the square anchor, in pixels.
    pub anchor_size: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            grid_w: 7,
            grid_h: 7,
            k: 4,
            anchor_size: 12.0,
        }
    }
}

impl AnchorConfig {
    pub fn new(grid_w: usize, grid_h: usize, k: usize, anchor_size: f64) -> Result<Self, CodecError> {
        let cfg = Self {
            grid_w,
            grid_h,
            k,
            anchor_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.grid_w == 0 || self.grid_h == 0 {
            return Err(CodecError::InvalidConfig("grid must be at least 1x1".into()));
        }
        if self.k == 0 {
            return Err(CodecError::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.anchor_size.is_finite() && self.anchor_size > 0.0) {
            return Err(CodecError::InvalidConfig("anchor size must be positive".into()));
        }
        Ok(())
    }

    pub fn anchors_per_roi(&self) -> usize {
        self.grid_w * self.grid_h * self.k
    }

    /// Angle step that one unit of `dtheta` represents.
    pub fn angle_unit(&self) -> f64 {
        90.0 / self.k as f64
    }

    /// Orientation of anchor `i` of a cell: uniform, centered coverage of the half turn.
    pub fn orientation(&self, i: usize) -> f64 {
        -90.0 + (i as f64 + 0.5) * 180.0 / self.k as f64
    }

    /// Flat index of `(row, col, orient)` in the order produced by [`generate_anchors`].
    pub fn index(&self, row: usize, col: usize, orient: usize) -> usize {
        (row * self.grid_w + col) * self.k + orient
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedAnchor {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
    /// `(row, col)` of the grid cell.
    pub cell: (usize, usize),
    pub orient_index: usize,
}

impl OrientedAnchor {
    pub fn rect(&self) -> OrientedRect {
        OrientedRect::new(self.x, self.y, self.w, self.h, self.theta)
            .expect("anchors are built with positive size")
    }
}

/// Regression offsets of a grasp relative to its anchor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 5]", into = "[f64; 5]")]
pub struct GraspDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
    pub dtheta: f64,
}

impl GraspDelta {
    pub const fn new(dx: f64, dy: f64, dw: f64, dh: f64, dtheta: f64) -> Self {
        Self {
            dx,
            dy,
            dw,
            dh,
            dtheta,
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.dx, self.dy, self.dw, self.dh, self.dtheta]
    }
}

impl From<[f64; 5]> for GraspDelta {
    fn from(v: [f64; 5]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }
}

impl From<GraspDelta> for [f64; 5] {
    fn from(d: GraspDelta) -> Self {
        d.to_array()
    }
}

/// Anchors laid out row-major over cells, `k` orientations per cell.
pub fn generate_anchors(roi: &AABox, cfg: &AnchorConfig) -> Vec<OrientedAnchor> {
    let cw = roi.width() / cfg.grid_w as f64;
    let ch = roi.height() / cfg.grid_h as f64;
    let mut out = Vec::with_capacity(cfg.anchors_per_roi());
    for row in 0..cfg.grid_h {
        for col in 0..cfg.grid_w {
            let x = roi.xmin + (col as f64 + 0.5) * cw;
            let y = roi.ymin + (row as f64 + 0.5) * ch;
            for i in 0..cfg.k {
                out.push(OrientedAnchor {
                    x,
                    y,
                    w: cfg.anchor_size,
                    h: cfg.anchor_size,
                    theta: cfg.orientation(i),
                    cell: (row, col),
                    orient_index: i,
                });
            }
        }
    }
    out
}

/// Applies predicted offsets to an anchor.
pub fn decode_grasp(a: &OrientedAnchor, d: &GraspDelta, k: usize) -> Result<OrientedRect, CodecError> {
    if !d.to_array().iter().all(|v| v.is_finite()) {
        return Err(CodecError::InvalidDelta("non-finite component".into()));
    }
    let w = d.dw.exp() * a.w;
    let h = d.dh.exp() * a.h;
    if !(w.is_finite() && h.is_finite()) {
        return Err(CodecError::InvalidDelta(format!(
            "size offsets overflow: dw={}, dh={}",
            d.dw, d.dh
        )));
    }
    let x = d.dx * a.w + a.x;
    let y = d.dy * a.h + a.y;
    let theta = d.dtheta * (90.0 / k as f64) + a.theta;
    OrientedRect::new(x, y, w, h, theta).map_err(|e| CodecError::InvalidDelta(e.to_string()))
}

/// Inverse of [`decode_grasp`]. The angle residual is the representative of
/// `theta_g - theta_a` (mod 180) nearest zero.
pub fn encode_grasp(a: &OrientedAnchor, g: &OrientedRect, k: usize) -> GraspDelta {
    let residual = normalize_angle(g.theta() - a.theta);
    GraspDelta {
        dx: (g.x() - a.x) / a.w,
        dy: (g.y() - a.y) / a.h,
        dw: (g.w() / a.w).ln(),
        dh: (g.h() / a.h).ln(),
        dtheta: residual / (90.0 / k as f64),
    }
}

/// Positive and negative anchors of one ROI.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnchorAssignment {
    /// `(anchor index, ground-truth index)`.
    pub positives: Vec<(usize, usize)>,
    /// Candidate negatives in anchor order; mining picks from these.
    pub negatives: Vec<usize>,
    /// Ground truths whose center lies outside the ROI.
    pub skipped_outside: Vec<usize>,
    /// Ground truths whose anchor was already claimed by an earlier ground truth.
    pub skipped_conflict: Vec<usize>,
}

impl AnchorAssignment {
    pub fn num_positives(&self) -> usize {
        self.positives.len()
    }
}

/// Containing cell along one axis; a coordinate on a cell border goes to the lower cell.
fn cell_of(coord: f64, origin: f64, cell: f64, n: usize) -> usize {
    let t = (coord - origin) / cell;
    let c = t.ceil() as isize - 1;
    c.clamp(0, n as isize - 1) as usize
}

/// Assigns each ground truth centered inside `roi` to the anchor of its cell
/// with the nearest orientation. Ties go to the lower orientation index.
pub fn match_anchors(
    roi: &AABox,
    anchors: &[OrientedAnchor],
    gt: &[OrientedRect],
    cfg: &AnchorConfig,
) -> AnchorAssignment {
    let mut out = AnchorAssignment::default();
    let mut claimed = vec![false; anchors.len()];
    let cw = roi.width() / cfg.grid_w as f64;
    let ch = roi.height() / cfg.grid_h as f64;
    for (gi, g) in gt.iter().enumerate() {
        if !roi.contains(g.center()) {
            out.skipped_outside.push(gi);
            continue;
        }
        let col = cell_of(g.x(), roi.xmin, cw, cfg.grid_w);
        let row = cell_of(g.y(), roi.ymin, ch, cfg.grid_h);
        let mut best = 0;
        let mut best_diff = f64::INFINITY;
        for i in 0..cfg.k {
            let d = angle_difference(g.theta(), cfg.orientation(i));
            if d < best_diff {
                best = i;
                best_diff = d;
            }
        }
        let idx = cfg.index(row, col, best);
        if idx >= anchors.len() || claimed[idx] {
            out.skipped_conflict.push(gi);
            continue;
        }
        claimed[idx] = true;
        out.positives.push((idx, gi));
    }
    out.negatives = (0..anchors.len()).filter(|&i| !claimed[i]).collect();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn anchor(x: f64, y: f64, s: f64, t: f64) -> OrientedAnchor {
        OrientedAnchor {
            x,
            y,
            w: s,
            h: s,
            theta: t,
            cell: (0, 0),
            orient_index: 0,
        }
    }

    #[test]
    fn unit_grid_single_orientation() {
        let roi = AABox::new(0.0, 0.0, 7.0, 7.0).unwrap();
        let cfg = AnchorConfig::new(7, 7, 1, 12.0).unwrap();
        let a = generate_anchors(&roi, &cfg);
        assert_eq!(a.len(), 49);
        for row in 0..7 {
            for col in 0..7 {
                let an = a[cfg.index(row, col, 0)];
                assert_eq!((an.x, an.y), (col as f64 + 0.5, row as f64 + 0.5));
                assert_eq!(an.theta, 0.0);
                assert_eq!(an.cell, (row, col));
            }
        }
    }

    #[test]
    fn four_orientations() {
        let cfg = AnchorConfig::default();
        let t: Vec<f64> = (0..4).map(|i| cfg.orientation(i)).collect();
        assert_eq!(t, vec![-67.5, -22.5, 22.5, 67.5]);
    }

    #[test]
    fn cell_size_from_roi() {
        let roi = AABox::new(0.0, 0.0, 14.0, 14.0).unwrap();
        let a = generate_anchors(&roi, &AnchorConfig::default());
        assert_eq!(a.len(), 196);
        assert_eq!((a[0].x, a[0].y), (1.0, 1.0));
        for cell in a.chunks(4) {
            assert!(cell.iter().all(|x| x.cell == cell[0].cell));
        }
    }

    #[test]
    fn decode_examples() {
        let a = anchor(5.0, 6.0, 12.0, 22.5);
        let r = decode_grasp(&a, &GraspDelta::default(), 4).unwrap();
        assert_eq!(r.to_array(), [5.0, 6.0, 12.0, 12.0, 22.5]);

        let a = anchor(100.0, 100.0, 24.0, 22.5);
        let r = decode_grasp(&a, &GraspDelta::new(0.5, 0.5, 0.0, 0.0, 1.0), 4).unwrap();
        assert_eq!(r.to_array(), [112.0, 112.0, 24.0, 24.0, 45.0]);

        let a = anchor(0.0, 0.0, 12.0, -22.5);
        let ln2 = std::f64::consts::LN_2;
        let r = decode_grasp(&a, &GraspDelta::new(0.0, 0.0, ln2, ln2, 0.0), 4).unwrap();
        let v = r.to_array();
        assert!((v[2] - 24.0).abs() < 1e-12 && (v[3] - 24.0).abs() < 1e-12);
        assert_eq!(v[4], -22.5);
    }

    #[test]
    fn decode_overflow_is_an_error() {
        let a = anchor(0.0, 0.0, 12.0, 0.0);
        let err = decode_grasp(&a, &GraspDelta::new(0.0, 0.0, 800.0, 0.0, 0.0), 4);
        assert!(matches!(err, Err(CodecError::InvalidDelta(_))));
        let err = decode_grasp(&a, &GraspDelta::new(0.0, 0.0, -800.0, 0.0, 0.0), 4);
        assert!(matches!(err, Err(CodecError::InvalidDelta(_))));
    }

    #[test]
    fn encode_examples() {
        let a = anchor(3.0, 4.0, 24.0, 67.5);
        let d = encode_grasp(&a, &a.rect(), 4);
        assert_eq!(d, GraspDelta::default());

        let g = OrientedRect::new(3.0, 4.0, 24.0, 24.0, -89.0).unwrap();
        let d = encode_grasp(&a, &g, 4);
        assert!((d.dtheta - 23.5 / 22.5).abs() < 1e-12);
    }

    #[test]
    fn match_nearest_orientation() {
        let roi = AABox::new(0.0, 0.0, 14.0, 14.0).unwrap();
        let cfg = AnchorConfig::default();
        let anchors = generate_anchors(&roi, &cfg);

        let none = match_anchors(&roi, &anchors, &[], &cfg);
        assert_eq!(none.num_positives(), 0);
        assert_eq!(none.negatives.len(), 196);

        let g = OrientedRect::new(5.0, 3.0, 10.0, 4.0, 10.0).unwrap();
        let m = match_anchors(&roi, &anchors, &[g], &cfg);
        assert_eq!(m.positives.len(), 1);
        let a = anchors[m.positives[0].0];
        assert_eq!(a.cell, (1, 2));
        assert_eq!(a.theta, 22.5);
        assert!(!m.negatives.contains(&m.positives[0].0));
        assert_eq!(m.negatives.len(), 195);
    }

    #[test]
    fn orientation_tie_goes_to_lower_index() {
        let roi = AABox::new(0.0, 0.0, 14.0, 14.0).unwrap();
        let cfg = AnchorConfig::default();
        let anchors = generate_anchors(&roi, &cfg);
        let g = OrientedRect::new(1.0, 1.0, 10.0, 4.0, 0.0).unwrap();
        let m = match_anchors(&roi, &anchors, &[g], &cfg);
        assert_eq!(anchors[m.positives[0].0].orient_index, 1);
    }

    #[test]
    fn cell_border_goes_to_lower_cell() {
        let roi = AABox::new(0.0, 0.0, 14.0, 14.0).unwrap();
        let cfg = AnchorConfig::default();
        let anchors = generate_anchors(&roi, &cfg);
        let g = OrientedRect::new(4.0, 2.0, 10.0, 4.0, 60.0).unwrap();
        let m = match_anchors(&roi, &anchors, &[g], &cfg);
        assert_eq!(anchors[m.positives[0].0].cell, (0, 1));
    }

    #[test]
    fn outside_and_conflicting_ground_truth_reported() {
        let roi = AABox::new(0.0, 0.0, 14.0, 14.0).unwrap();
        let cfg = AnchorConfig::default();
        let anchors = generate_anchors(&roi, &cfg);
        let inside = OrientedRect::new(5.0, 5.0, 10.0, 4.0, 20.0).unwrap();
        let twin = OrientedRect::new(5.2, 5.2, 8.0, 4.0, 25.0).unwrap();
        let outside = OrientedRect::new(50.0, 5.0, 10.0, 4.0, 20.0).unwrap();
        let m = match_anchors(&roi, &anchors, &[inside, outside, twin], &cfg);
        assert_eq!(m.positives.len(), 1);
        assert_eq!(m.skipped_outside, vec![1]);
        assert_eq!(m.skipped_conflict, vec![2]);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            ax in -200.0..200.0f64, ay in -200.0..200.0f64,
            size in prop::sample::select(vec![12.0, 24.0]),
            k in 1usize..8, oi in 0usize..8,
            gx in -300.0..300.0f64, gy in -300.0..300.0f64,
            gw in 1.0..120.0f64, gh in 1.0..120.0f64, gt in -90.0..90.0f64,
        ) {
            let cfg = AnchorConfig::new(1, 1, k, size).unwrap();
            let a = anchor(ax, ay, size, cfg.orientation(oi % k));
            let g = OrientedRect::new(gx, gy, gw, gh, gt).unwrap();
            let back = decode_grasp(&a, &encode_grasp(&a, &g, k), k).unwrap();
            for (p, q) in back.to_array().iter().zip(g.to_array()) {
                prop_assert!((p - q).abs() < 1e-9, "{:?} vs {:?}", back, g);
            }
        }

        #[test]
        fn matching_is_disjoint(
            pts in prop::collection::vec((0.0..14.0f64, 0.0..14.0f64, -90.0..90.0f64), 0..20)
        ) {
            let roi = AABox::new(0.0, 0.0, 14.0, 14.0).unwrap();
            let cfg = AnchorConfig::default();
            let anchors = generate_anchors(&roi, &cfg);
            let gt: Vec<_> = pts.iter()
                .map(|&(x, y, t)| OrientedRect::new(x, y, 8.0, 3.0, t).unwrap())
                .collect();
            let m = match_anchors(&roi, &anchors, &gt, &cfg);
            let mut seen = std::collections::HashSet::new();
            for &(a, _) in &m.positives { prop_assert!(seen.insert(a)); }
            for &n in &m.negatives { prop_assert!(seen.insert(n)); }
            prop_assert_eq!(seen.len(), anchors.len());
            let mut gts: Vec<_> = m.positives.iter().map(|p| p.1).collect();
            gts.dedup();
            prop_assert_eq!(gts.len(), m.positives.len());
        }
    }
}
