//! Image-space grasp to robot-frame grasp pose.
//!
//! Pixels `(u, v)` with depth `d` (mm) are mapped into robot millimeters by an
//! affine map fitted from reference correspondences. The robot frame is taken
//! to be table-down: `+z` points away from the table, so approach vectors have
//! a negative `z` component.

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, OrientedRect, Point2};

pub const DEFAULT_NORMAL_RADIUS: usize = 5;

#[derive(Debug, Error)]
pub enum ExecutionError {
    #[error("at least 4 calibration pairs are needed, got {0}")]
    TooFewPairs(usize),
    #[error("calibration points are degenerate (coplanar or repeated)")]
    RankDeficient,
    #[error("affine map is singular (|det| = {0:e})")]
    SingularMap(f64),
    #[error("no valid depth pixel inside the grasp rectangle")]
    NoValidDepth,
    #[error("too few valid depth pixels around ({u}, {v}) to estimate a surface normal")]
    DegenerateSurface { u: usize, v: usize },
    #[error("gripper opening {opening:.1} mm exceeds the limit of {max:.1} mm")]
    OversizedGrasp { opening: f64, max: f64 },
    #[error("depth raster: {0}")]
    Raster(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Depth raster in millimeters; zero or non-finite samples are holes.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, ExecutionError> {
        if values.len() != width * height {
            return Err(ExecutionError::Raster(format!(
                "{} samples for a {width}x{height} image",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                values.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn raw(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    /// Depth at `(u, v)` if inside the image and valid.
    pub fn get(&self, u: isize, v: isize) -> Option<f64> {
        if u < 0 || v < 0 || u as usize >= self.width || v as usize >= self.height {
            return None;
        }
        let d = self.values[v as usize * self.width + u as usize];
        (d.is_finite() && d > 0.0).then_some(d)
    }

    /// Marks a pixel as missing.
    pub fn mask(&mut self, u: usize, v: usize) {
        self.values[v * self.width + u] = 0.0;
    }
}

/// Binary 16-bit (or 8-bit) PGM, values in millimeters.
pub fn read_pgm(bytes: &[u8]) -> Result<DepthImage, ExecutionError> {
    let bad = |m: &str| ExecutionError::Raster(m.to_string());
    let mut pos = 0;
    let mut token = || -> Result<String, ExecutionError> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ExecutionError::Raster("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let mut num = |what: &str| -> Result<usize, ExecutionError> {
        token()?
            .parse()
            .map_err(|_| ExecutionError::Raster(format!("bad {what}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval out of range"));
    }
    // exactly one whitespace byte separates the header from the samples
    if pos >= bytes.len() {
        return Err(bad("truncated pixel data"));
    }
    let data = &bytes[pos + 1..];
    let bpp = if maxval > 255 { 2 } else { 1 };
    if data.len() < w * h * bpp {
        return Err(bad("truncated pixel data"));
    }
    let values = (0..w * h)
        .map(|i| {
            if bpp == 2 {
                u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as f64
            } else {
                data[i] as f64
            }
        })
        .collect();
    DepthImage::new(w, h, values)
}

/// Encodes as 16-bit PGM, rounding to whole millimeters; holes become 0.
pub fn write_pgm(depth: &DepthImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", depth.width, depth.height).into_bytes();
    for &d in &depth.values {
        let v = if d.is_finite() && d > 0.0 {
            d.round().clamp(0.0, 65535.0) as u16
        } else {
            0
        };
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

/// `(u, v, d) -> linear * (u, v, d) + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub linear: [[f64; 3]; 3],
    pub offset: [f64; 3],
}

impl AffineMap {
    pub fn identity() -> Self {
        Self::from_parts(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_parts(linear: Matrix3<f64>, offset: Vector3<f64>) -> Self {
        let mut l = [[0.0; 3]; 3];
        for (r, row) in l.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = linear[(r, c)];
            }
        }
        Self {
            linear: l,
            offset: [offset.x, offset.y, offset.z],
        }
    }

    pub fn linear_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.linear[r][c])
    }

    pub fn offset_vector(&self) -> Vector3<f64> {
        Vector3::from(self.offset)
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.linear_matrix() * Vector3::from(p) + self.offset_vector();
        [q.x, q.y, q.z]
    }

    /// Row-major linear part followed by the offset.
    pub fn parameters(&self) -> [f64; 12] {
        let mut p = [0.0; 12];
        for r in 0..3 {
            p[r * 3..r * 3 + 3].copy_from_slice(&self.linear[r]);
        }
        p[9..].copy_from_slice(&self.offset);
        p
    }

    fn in_plane(&self) -> Matrix2<f64> {
        Matrix2::new(
            self.linear[0][0],
            self.linear[0][1],
            self.linear[1][0],
            self.linear[1][1],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPair {
    /// `(u, v, depth)`.
    pub pixel: [f64; 3],
    /// Robot coordinates, mm.
    pub robot: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    #[serde(flatten)]
    pub map: AffineMap,
    pub residual_rms: f64,
    pub num_pairs: usize,
}

/// Least-squares affine map from at least four non-coplanar correspondences.
pub fn fit_affine(pairs: &[CalibrationPair]) -> Result<Calibration, ExecutionError> {
    let n = pairs.len();
    if n < 4 {
        return Err(ExecutionError::TooFewPairs(n));
    }
    // center and scale the inputs for conditioning
    let mut mean = [0.0; 3];
    for p in pairs {
        for k in 0..3 {
            mean[k] += p.pixel[k] / n as f64;
        }
    }
    let mut scale = [0.0; 3];
    for p in pairs {
        for k in 0..3 {
            scale[k] += (p.pixel[k] - mean[k]).powi(2) / n as f64;
        }
    }
    let scale = scale.map(|s| if s > 0.0 { s.sqrt() } else { 1.0 });

    let a = DMatrix::from_fn(n, 4, |r, c| {
        if c == 3 {
            1.0
        } else {
            (pairs[r].pixel[c] - mean[c]) / scale[c]
        }
    });
    let b = DMatrix::from_fn(n, 3, |r, c| pairs[r].robot[c]);
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-9 * smax) {
        return Err(ExecutionError::RankDeficient);
    }
    let x = svd
        .solve(&b, 0.0)
        .map_err(|_| ExecutionError::RankDeficient)?;

    // undo the normalization: robot = L' * ((p - mean) / scale) + t'
    let mut linear = Matrix3::zeros();
    let mut offset = Vector3::zeros();
    for out in 0..3 {
        let mut t = x[(3, out)];
        for k in 0..3 {
            let coef = x[(k, out)] / scale[k];
            linear[(out, k)] = coef;
            t -= coef * mean[k];
        }
        offset[out] = t;
    }
    let det = linear.determinant();
    if det.abs() <= 1e-9 {
        return Err(ExecutionError::SingularMap(det));
    }
    let map = AffineMap::from_parts(linear, offset);
    let sq: f64 = pairs
        .iter()
        .map(|p| {
            let q = map.apply(p.pixel);
            (0..3).map(|k| (q[k] - p.robot[k]).powi(2)).sum::<f64>()
        })
        .sum();
    Ok(Calibration {
        map,
        residual_rms: (sq / n as f64).sqrt(),
        num_pairs: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspPixel {
    pub u: usize,
    pub v: usize,
    pub depth: f64,
}

/// Shallowest valid pixel strictly inside `rect`. Ties go to the pixel nearest
/// the rectangle center, then to row-major order.
pub fn grasp_point(depth: &DepthImage, rect: &OrientedRect) -> Result<GraspPixel, ExecutionError> {
    let b = rect.bounds();
    let u0 = b.xmin.floor().max(0.0) as usize;
    let v0 = b.ymin.floor().max(0.0) as usize;
    let u1 = (b.xmax.ceil().max(-1.0) as isize).min(depth.width as isize - 1);
    let v1 = (b.ymax.ceil().max(-1.0) as isize).min(depth.height as isize - 1);
    let c = rect.center();
    let mut best: Option<(f64, f64, GraspPixel)> = None;
    for v in v0 as isize..=v1 {
        for u in u0 as isize..=u1 {
            let Some(d) = depth.get(u, v) else { continue };
            if !rect.contains_strict(Point2::new(u as f64, v as f64)) {
                continue;
            }
            let dist = (u as f64 - c.x).hypot(v as f64 - c.y);
            let better = match &best {
                None => true,
                Some((bd, bdist, _)) => d < *bd || (d == *bd && dist < *bdist),
            };
            if better {
                best = Some((
                    d,
                    dist,
                    GraspPixel {
                        u: u as usize,
                        v: v as usize,
                        depth: d,
                    },
                ));
            }
        }
    }
    best.map(|b| b.2).ok_or(ExecutionError::NoValidDepth)
}

/// Averaged surface normal around `(u, v)`, flipped to point from free space
/// into the surface (negative robot `z`).
pub fn approach_vector(
    depth: &DepthImage,
    at: (usize, usize),
    map: &AffineMap,
    radius: usize,
) -> Result<[f64; 3], ExecutionError> {
    let (cu, cv) = (at.0 as isize, at.1 as isize);
    let r = radius as isize;
    let view = map.linear_matrix() * Vector3::z();
    let point = |u: isize, v: isize| {
        depth
            .get(u, v)
            .map(|d| Vector3::from(map.apply([u as f64, v as f64, d])))
    };
    // central difference when both neighbors exist, one-sided otherwise
    let tangent = |u: isize, v: isize, du: isize, dv: isize, here: Vector3<f64>| {
        match (point(u + du, v + dv), point(u - du, v - dv)) {
            (Some(a), Some(b)) => Some(a - b),
            (Some(a), None) => Some(a - here),
            (None, Some(b)) => Some(here - b),
            (None, None) => None,
        }
    };

    let mut valid = 0;
    let mut sum = Vector3::zeros();
    for v in cv - r..=cv + r {
        for u in cu - r..=cu + r {
            let Some(here) = point(u, v) else { continue };
            valid += 1;
            let (Some(tu), Some(tv)) = (tangent(u, v, 1, 0, here), tangent(u, v, 0, 1, here)) else {
                continue;
            };
            let n = tu.cross(&tv);
            let norm = n.norm();
            if norm <= 0.0 {
                continue;
            }
            let mut n = n / norm;
            let flip = if n.z != 0.0 { n.z > 0.0 } else { n.dot(&view) < 0.0 };
            if flip {
                n = -n;
            }
            sum += n;
        }
    }
    let norm = sum.norm();
    if valid < 3 || norm < 1e-12 {
        return Err(ExecutionError::DegenerateSurface { u: at.0, v: at.1 });
    }
    let a = sum / norm;
    Ok([a.x, a.y, a.z])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutionConfig {
    pub normal_radius: usize,
    /// Largest gripper opening the hardware supports, mm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_opening: Option<f64>,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        Self {
            normal_radius: DEFAULT_NORMAL_RADIUS,
            max_opening: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotGraspPose {
    /// Robot mm.
    pub point: [f64; 3],
    /// Unit vector.
    pub approach: [f64; 3],
    /// Gripper rotation in degrees, modulo 180.
    pub roll: f64,
    /// Gripper opening, mm.
    pub opening: f64,
    pub pixel: GraspPixel,
}

/// Grasp rectangle plus depth to a robot grasp pose.
pub fn to_robot_pose(
    grasp: &OrientedRect,
    depth: &DepthImage,
    map: &AffineMap,
    cfg: &ExecutionConfig,
) -> Result<RobotGraspPose, ExecutionError> {
    let px = grasp_point(depth, grasp)?;
    let point = map.apply([px.u as f64, px.v as f64, px.depth]);
    let approach = approach_vector(depth, (px.u, px.v), map, cfg.normal_radius)?;

    let m = map.in_plane();
    let t = grasp.theta().to_radians();
    let dir = m * Vector2::new(t.cos(), t.sin());
    let roll = normalize_angle(dir.y.atan2(dir.x).to_degrees());
    let sv = m.svd(false, false).singular_values;
    let opening = grasp.w() * (sv[0] + sv[1]) / 2.0;
    if let Some(max) = cfg.max_opening {
        if opening > max {
            return Err(ExecutionError::OversizedGrasp { opening, max });
        }
    }
    Ok(RobotGraspPose {
        point,
        approach,
        roll,
        opening,
        pixel: px,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn pairs_from(map: &AffineMap, pts: &[[f64; 3]]) -> Vec<CalibrationPair> {
        pts.iter()
            .map(|&p| CalibrationPair {
                pixel: p,
                robot: map.apply(p),
            })
            .collect()
    }

    const PTS: [[f64; 3]; 6] = [
        [0.0, 0.0, 500.0],
        [100.0, 0.0, 520.0],
        [0.0, 100.0, 480.0],
        [100.0, 100.0, 600.0],
        [50.0, 20.0, 450.0],
        [20.0, 70.0, 550.0],
    ];

    #[test]
    fn identity_and_translation() {
        let c = fit_affine(&pairs_from(&AffineMap::identity(), &PTS[..4])).unwrap();
        for (a, b) in c.map.parameters().iter().zip(AffineMap::identity().parameters()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(c.residual_rms < 1e-9);

        let shift = AffineMap::from_parts(Matrix3::identity(), Vector3::new(10.0, 20.0, 30.0));
        let c = fit_affine(&pairs_from(&shift, &PTS)).unwrap();
        assert!((c.map.offset[1] - 20.0).abs() < 1e-8);
        assert!(c.residual_rms < 1e-8);
    }

    /// Plain normal-equations solve, independent of the SVD path.
    fn normal_equations(pairs: &[CalibrationPair]) -> [f64; 12] {
        let mut ata = [[0.0; 4]; 4];
        let mut atb = [[0.0; 3]; 4];
        for p in pairs {
            let row = [p.pixel[0], p.pixel[1], p.pixel[2], 1.0];
            for i in 0..4 {
                for j in 0..4 {
                    ata[i][j] += row[i] * row[j];
                }
                for k in 0..3 {
                    atb[i][k] += row[i] * p.robot[k];
                }
            }
        }
        // Gauss-Jordan with partial pivoting
        for col in 0..4 {
            let piv = (col..4).max_by(|&a, &b| ata[a][col].abs().total_cmp(&ata[b][col].abs())).unwrap();
            ata.swap(col, piv);
            atb.swap(col, piv);
            for r in 0..4 {
                if r != col {
                    let f = ata[r][col] / ata[col][col];
                    for c in 0..4 {
                        ata[r][c] -= f * ata[col][c];
                    }
                    for k in 0..3 {
                        atb[r][k] -= f * atb[col][k];
                    }
                }
            }
        }
        let mut out = [0.0; 12];
        for k in 0..3 {
            for i in 0..3 {
                out[k * 3 + i] = atb[i][k] / ata[i][i];
            }
            out[9 + k] = atb[3][k] / ata[3][3];
        }
        out
    }

    #[test]
    fn noisy_fit_matches_normal_equations() {
        let truth = AffineMap::from_parts(Matrix3::identity() * 0.5, Vector3::new(3.0, -4.0, 5.0));
        // centered design so offsets are not extrapolated far from the data
        let pts = [
            [-40.0, -30.0, -20.0],
            [40.0, -35.0, 10.0],
            [-35.0, 40.0, 25.0],
            [30.0, 35.0, -30.0],
            [5.0, -5.0, 40.0],
            [-10.0, 10.0, -40.0],
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let pairs: Vec<_> = pairs_from(&truth, &pts)
            .into_iter()
            .map(|mut p| {
                for k in 0..3 {
                    p.robot[k] += noise.sample(&mut rng);
                }
                p
            })
            .collect();
        let fit = fit_affine(&pairs).unwrap();
        let oracle = normal_equations(&pairs);
        for ((f, o), t) in fit.map.parameters().iter().zip(oracle).zip(truth.parameters()) {
            assert!((f - o).abs() < 1e-9, "{f} vs {o}");
            assert!((f - t).abs() < 0.3, "{f} vs truth {t}");
        }
        assert!(fit.residual_rms > 0.0);
    }

    #[test]
    fn calibration_errors() {
        let id = AffineMap::identity();
        assert!(matches!(
            fit_affine(&pairs_from(&id, &PTS[..3])),
            Err(ExecutionError::TooFewPairs(3))
        ));
        let flat = [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 1.0], [2.0, 3.0, 1.0]];
        assert!(matches!(
            fit_affine(&pairs_from(&id, &flat)),
            Err(ExecutionError::RankDeficient)
        ));
        let squash = AffineMap::from_parts(Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)), Vector3::zeros());
        assert!(matches!(
            fit_affine(&pairs_from(&squash, &PTS)),
            Err(ExecutionError::SingularMap(_))
        ));
    }

    fn rect(x: f64, y: f64, w: f64, h: f64, t: f64) -> OrientedRect {
        OrientedRect::new(x, y, w, h, t).unwrap()
    }

    #[test]
    fn grasp_point_rules() {
        let flat = DepthImage::from_fn(40, 40, |_, _| 500.0);
        let p = grasp_point(&flat, &rect(20.2, 19.9, 10.0, 4.0, 30.0)).unwrap();
        assert_eq!((p.u, p.v), (20, 20));

        let mut bump = DepthImage::from_fn(40, 40, |u, v| if (u, v) == (22, 21) { 400.0 } else { 500.0 });
        let p = grasp_point(&bump, &rect(20.0, 20.0, 10.0, 4.0, 0.0)).unwrap();
        assert_eq!((p.u, p.v, p.depth), (22, 21, 400.0));

        bump.mask(22, 21);
        let mut second = bump.clone();
        second.values[21 * 40 + 18] = 450.0;
        let p = grasp_point(&second, &rect(20.0, 20.0, 10.0, 4.0, 0.0)).unwrap();
        assert_eq!((p.u, p.v), (18, 21));

        let empty = DepthImage::from_fn(40, 40, |_, _| 0.0);
        assert!(matches!(
            grasp_point(&empty, &rect(20.0, 20.0, 10.0, 4.0, 0.0)),
            Err(ExecutionError::NoValidDepth)
        ));
    }

    #[test]
    fn approach_on_planes() {
        let id = AffineMap::identity();
        let flat = DepthImage::from_fn(40, 40, |_, _| 500.0);
        let a = approach_vector(&flat, (20, 20), &id, 5).unwrap();
        assert!((a[0]).abs() < 1e-6 && (a[1]).abs() < 1e-6 && (a[2] + 1.0).abs() < 1e-6);

        let tilted = DepthImage::from_fn(40, 40, |_, v| 500.0 + v as f64);
        let a = approach_vector(&tilted, (20, 20), &id, 5).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((a[0]).abs() < 1e-9 && (a[1] - s).abs() < 1e-9 && (a[2] + s).abs() < 1e-9);
    }

    #[test]
    fn approach_with_holes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut d = DepthImage::from_fn(40, 40, |_, _| 500.0);
        for v in 0..40 {
            for u in 0..40 {
                if rng.random_bool(0.5) {
                    d.mask(u, v);
                }
            }
        }
        let a = approach_vector(&d, (20, 20), &AffineMap::identity(), 5).unwrap();
        assert!((a[2] + 1.0).abs() < 1e-6);

        let mut sparse = DepthImage::from_fn(40, 40, |_, _| 0.0);
        sparse.values[20 * 40 + 20] = 500.0;
        assert!(matches!(
            approach_vector(&sparse, (20, 20), &AffineMap::identity(), 5),
            Err(ExecutionError::DegenerateSurface { .. })
        ));
    }

    #[test]
    fn pose_composition() {
        let flat = DepthImage::from_fn(60, 60, |_, _| 500.0);
        let g = rect(30.0, 30.0, 12.0, 4.0, 20.0);
        let p = to_robot_pose(&g, &flat, &AffineMap::identity(), &ExecutionConfig::default()).unwrap();
        assert_eq!(p.point, [30.0, 30.0, 500.0]);
        assert!((p.approach[2] + 1.0).abs() < 1e-9);
        assert!((p.roll - 20.0).abs() < 1e-9);
        assert!((p.opening - 12.0).abs() < 1e-9);

        let rot = AffineMap::from_parts(
            Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0),
            Vector3::new(0.0, 0.0, 900.0),
        );
        let p = to_robot_pose(&g, &flat, &rot, &ExecutionConfig::default()).unwrap();
        assert!((p.roll - 110.0 + 180.0).abs() < 1e-9);
        assert!(p.approach[2] < 0.0);

        let scale2 = AffineMap::from_parts(Matrix3::identity() * 2.0, Vector3::zeros());
        let p = to_robot_pose(&g, &flat, &scale2, &ExecutionConfig::default()).unwrap();
        assert!((p.opening - 24.0).abs() < 1e-9);

        let limited = ExecutionConfig {
            max_opening: Some(20.0),
            ..Default::default()
        };
        assert!(matches!(
            to_robot_pose(&g, &flat, &scale2, &limited),
            Err(ExecutionError::OversizedGrasp { .. })
        ));
    }

    #[test]
    fn pgm_round_trip() {
        let mut d = DepthImage::from_fn(5, 3, |u, v| 400.0 + (u * 7 + v) as f64);
        d.mask(1, 1);
        let bytes = write_pgm(&d);
        let back = read_pgm(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.get(1, 1), None);
        let mut commented = b"P5\n# depth\n5 3\n65535\n".to_vec();
        commented.extend_from_slice(&bytes[bytes.len() - 30..]);
        assert_eq!(read_pgm(&commented).unwrap(), d);
        assert!(read_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(read_pgm(b"P5\n4 4\n65535\n\x00\x01").is_err());
    }
}
