//! Scene annotation records (objects, owned grasps, stacking relations) and
//! geometric augmentation of those annotations.
//!
//! Records are JSON:
//!
//! ```json
//! {
//!   "image": { "width": 640, "height": 480, "path": "img.png" },
//!   "depth_path": "depth.pgm",
//!   "objects": [ { "id": 1, "category": "cup", "bbox": [10.0, 20.0, 60.0, 90.0] } ],
//!   "grasps": [ { "owner": 1, "rect": [35.0, 55.0, 30.0, 10.0, 45.0] } ],
//!   "relations": [ { "above": 1, "below": 2 } ]
//! }
//! ```
//!
//! Unlisted pairs have no relation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{AABox, OrientedRect};
use crate::relation::{PairLabel, RelationLabel};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: grasp owner {owner} is not an object of the scene")]
    DanglingOwner { path: String, owner: u32 },
    #[error("{path}: duplicate object id {id}")]
    DuplicateObject { path: String, id: u32 },
    #[error("{path}: relation references unknown object {id}")]
    UnknownObject { path: String, id: u32 },
    #[error("{path}: inconsistent relation between {a} and {b}")]
    InconsistentRelation { path: String, a: u32, b: u32 },
    #[error("{path}: {message}")]
    OutOfBounds { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageInfo {
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    pub id: u32,
    pub category: String,
    pub bbox: AABox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspRecord {
    pub owner: u32,
    pub rect: OrientedRect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationRecord {
    pub above: u32,
    pub below: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub image: ImageInfo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_path: Option<String>,
    pub objects: Vec<ObjectRecord>,
    #[serde(default)]
    pub grasps: Vec<GraspRecord>,
    #[serde(default)]
    pub relations: Vec<RelationRecord>,
}

impl SceneRecord {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.image.width == 0 || self.image.height == 0 {
            return Err(DatasetError::Invalid {
                path: "image".into(),
                message: "image dimensions must be positive".into(),
            });
        }
        let (w, h) = (self.image.width as f64, self.image.height as f64);
        let mut ids = BTreeSet::new();
        for (i, o) in self.objects.iter().enumerate() {
            if !ids.insert(o.id) {
                return Err(DatasetError::DuplicateObject {
                    path: format!("objects[{i}].id"),
                    id: o.id,
                });
            }
            let b = o.bbox;
            if b.xmin < 0.0 || b.ymin < 0.0 || b.xmax > w || b.ymax > h {
                return Err(DatasetError::OutOfBounds {
                    path: format!("objects[{i}].bbox"),
                    message: format!("box {:?} exceeds the {w}x{h} image", b.to_array()),
                });
            }
        }
        for (i, g) in self.grasps.iter().enumerate() {
            if !ids.contains(&g.owner) {
                return Err(DatasetError::DanglingOwner {
                    path: format!("grasps[{i}].owner"),
                    owner: g.owner,
                });
            }
        }
        let mut seen = BTreeSet::new();
        for (i, r) in self.relations.iter().enumerate() {
            for id in [r.above, r.below] {
                if !ids.contains(&id) {
                    return Err(DatasetError::UnknownObject {
                        path: format!("relations[{i}]"),
                        id,
                    });
                }
            }
            if r.above == r.below || seen.contains(&(r.below, r.above)) || !seen.insert((r.above, r.below)) {
                return Err(DatasetError::InconsistentRelation {
                    path: format!("relations[{i}]"),
                    a: r.above,
                    b: r.below,
                });
            }
        }
        Ok(())
    }

    pub fn object(&self, id: u32) -> Option<&ObjectRecord> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn grasps_of(&self, owner: u32) -> impl Iterator<Item = &OrientedRect> {
        self.grasps.iter().filter(move |g| g.owner == owner).map(|g| &g.rect)
    }

    /// Relation of `a` to `b` under this record's annotations.
    pub fn relation(&self, a: u32, b: u32) -> RelationLabel {
        for r in &self.relations {
            if (r.above, r.below) == (a, b) {
                return RelationLabel::Above;
            }
            if (r.above, r.below) == (b, a) {
                return RelationLabel::Below;
            }
        }
        RelationLabel::None
    }

    /// One label per unordered pair of objects, `first < second`.
    pub fn pair_labels(&self) -> Vec<PairLabel> {
        let ids: Vec<u32> = self.objects.iter().map(|o| o.id).collect::<BTreeSet<_>>().into_iter().collect();
        let mut out = Vec::new();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                out.push(PairLabel {
                    first: a,
                    second: b,
                    relation: self.relation(a, b),
                    confidence: 1.0,
                });
            }
        }
        out
    }

    /// Grasps grouped by owner.
    pub fn grasp_map(&self) -> BTreeMap<u32, Vec<OrientedRect>> {
        let mut m: BTreeMap<u32, Vec<OrientedRect>> = BTreeMap::new();
        for g in &self.grasps {
            m.entry(g.owner).or_default().push(g.rect);
        }
        m
    }
}

/// Parses and validates one record.
pub fn parse_scene(text: &str) -> Result<SceneRecord, DatasetError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let rec: SceneRecord = serde_path_to_error::deserialize(de).map_err(|e| DatasetError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    rec.validate()?;
    Ok(rec)
}

/// Canonical pretty JSON with a trailing newline.
pub fn serialize_scene(rec: &SceneRecord) -> String {
    let mut s = serde_json::to_string_pretty(rec).expect("records serialize");
    s.push('\n');
    s
}

pub fn load_scene(path: &std::path::Path) -> Result<SceneRecord, DatasetError> {
    parse_scene(&std::fs::read_to_string(path)?)
}

fn map_rect(r: &OrientedRect, f: impl Fn(f64, f64) -> (f64, f64), theta: f64) -> OrientedRect {
    let (x, y) = f(r.x(), r.y());
    OrientedRect::new(x, y, r.w(), r.h(), theta).expect("rigid motions keep rectangles valid")
}

/// Mirror across the vertical center line.
pub fn hflip(rec: &SceneRecord) -> SceneRecord {
    let w = rec.image.width as f64;
    let mut out = rec.clone();
    for o in &mut out.objects {
        let b = o.bbox;
        o.bbox = AABox {
            xmin: w - b.xmax,
            ymin: b.ymin,
            xmax: w - b.xmin,
            ymax: b.ymax,
        };
    }
    for g in &mut out.grasps {
        g.rect = map_rect(&g.rect, |x, y| (w - x, y), -g.rect.theta());
    }
    out
}

/// Rotates the record by `quarter_turns` counter-clockwise quarter turns (as seen
/// on screen). One turn maps `(x, y)` in a `W x H` image to `(y, W - x)` in an
/// `H x W` image.
pub fn rot90(rec: &SceneRecord, quarter_turns: i32) -> SceneRecord {
    let mut out = rec.clone();
    for _ in 0..quarter_turns.rem_euclid(4) {
        out = rot90_once(&out);
    }
    out
}

fn rot90_once(rec: &SceneRecord) -> SceneRecord {
    let w = rec.image.width as f64;
    let mut out = rec.clone();
    out.image.width = rec.image.height;
    out.image.height = rec.image.width;
    for o in &mut out.objects {
        let b = o.bbox;
        o.bbox = AABox {
            xmin: b.ymin,
            ymin: w - b.xmax,
            xmax: b.ymax,
            ymax: w - b.xmin,
        };
    }
    for g in &mut out.grasps {
        g.rect = map_rect(&g.rect, |x, y| (y, w - x), g.rect.theta() + 90.0);
    }
    out
}
