//! From raw per-ROI outputs to objects with one chosen grasp each.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::{decode_grasp, generate_anchors, AnchorConfig, CodecError, GraspDelta};
use crate::geometry::{aabb_iou, AABox, OrientedRect};
use crate::loss::log_softmax2;
use crate::predictions::ScenePredictions;
use crate::relation::{ReasoningError, RelationMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("expected {expected} anchor outputs, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no grasp candidates")]
    NoGrasp,
    #[error("top-n must be at least 1")]
    InvalidTopN,
    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("duplicate detection id {0}")]
    DuplicateId(u32),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDetection {
    pub bbox: AABox,
    pub category: String,
    pub score: f64,
    pub instance_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    pub rect: OrientedRect,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceivedObject {
    pub detection: ObjectDetection,
    /// `None` when the object came with no grasp candidates.
    pub best_grasp: Option<OrientedRect>,
    pub grasp_confidence: f64,
}

/// One anchor's raw head output: five offsets then two logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 7]", into = "[f64; 7]")]
pub struct RawAnchorOutput {
    pub delta: GraspDelta,
    pub logits: [f64; 2],
}

impl From<[f64; 7]> for RawAnchorOutput {
    fn from(v: [f64; 7]) -> Self {
        Self {
            delta: GraspDelta::new(v[0], v[1], v[2], v[3], v[4]),
            logits: [v[5], v[6]],
        }
    }
}

impl From<RawAnchorOutput> for [f64; 7] {
    fn from(o: RawAnchorOutput) -> Self {
        let d = o.delta.to_array();
        [d[0], d[1], d[2], d[3], d[4], o.logits[0], o.logits[1]]
    }
}

/// Decodes every anchor of an ROI into a grasp candidate.
pub fn decode_roi_grasps(
    roi: &AABox,
    outputs: &[RawAnchorOutput],
    cfg: &AnchorConfig,
) -> Result<Vec<GraspCandidate>, PerceptionError> {
    cfg.validate()?;
    let anchors = generate_anchors(roi, cfg);
    if outputs.len() != anchors.len() {
        return Err(PerceptionError::LengthMismatch {
            expected: anchors.len(),
            got: outputs.len(),
        });
    }
    anchors
        .iter()
        .zip(outputs)
        .map(|(a, o)| {
            Ok(GraspCandidate {
                rect: decode_grasp(a, &o.delta, cfg.k)?,
                confidence: log_softmax2(o.logits)[0].exp(),
            })
        })
        .collect()
}

/// Among the `n` most confident candidates, the one closest to the box center.
/// Distance ties go to the higher confidence, then the lower index.
pub fn select_best_grasp(
    cands: &[GraspCandidate],
    obj: &AABox,
    n: usize,
) -> Result<(usize, GraspCandidate), PerceptionError> {
    if n == 0 {
        return Err(PerceptionError::InvalidTopN);
    }
    if cands.is_empty() {
        return Err(PerceptionError::NoGrasp);
    }
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| cands[b].confidence.total_cmp(&cands[a].confidence).then(a.cmp(&b)));
    order.truncate(n);
    let c = obj.center();
    let dist = |i: usize| {
        let p = cands[i].rect.center();
        (p.x - c.x).hypot(p.y - c.y)
    };
    let best = order
        .iter()
        .copied()
        .min_by(|&a, &b| {
            dist(a)
                .total_cmp(&dist(b))
                .then(cands[b].confidence.total_cmp(&cands[a].confidence))
                .then(a.cmp(&b))
        })
        .expect("non-empty");
    Ok((best, cands[best]))
}

/// Greedy per-category non-maximum suppression. A box is dropped when its IoU
/// with an already kept box of the same category exceeds `iou_threshold`.
pub fn nms(dets: &[ObjectDetection], iou_threshold: f64) -> Vec<ObjectDetection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut kept: Vec<ObjectDetection> = Vec::new();
    for i in order {
        let d = &dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.category == d.category && aabb_iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(d.clone());
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptionConfig {
    pub top_n: usize,
    pub nms_iou: f64,
    pub score_floor: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            top_n: 3,
            nms_iou: 0.3,
            score_floor: 0.05,
        }
    }
}

/// Detections after filtering, with their relation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Perception {
    /// Sorted by score, highest first.
    pub objects: Vec<PerceivedObject>,
    pub relations: RelationMatrix,
}

impl Perception {
    pub fn ids(&self) -> Vec<u32> {
        self.objects.iter().map(|o| o.detection.instance_id).collect()
    }

    /// Drops an object and every relation touching it.
    pub fn without(&self, id: u32) -> Self {
        let objects: Vec<PerceivedObject> = self
            .objects
            .iter()
            .filter(|o| o.detection.instance_id != id)
            .cloned()
            .collect();
        let keep: BTreeSet<u32> = objects.iter().map(|o| o.detection.instance_id).collect();
        Self {
            relations: self.relations.restrict(&keep),
            objects,
        }
    }
}

/// Score floor, NMS, candidate decoding and grasp selection for one scene.
pub fn perceive(preds: &ScenePredictions, cfg: &PerceptionConfig) -> Result<Perception, PerceptionError> {
    let mut seen = BTreeSet::new();
    let mut dets = Vec::new();
    for d in &preds.detections {
        if !(0.0..=1.0).contains(&d.score) {
            return Err(PerceptionError::InvalidScore(d.score));
        }
        if !seen.insert(d.id) {
            return Err(PerceptionError::DuplicateId(d.id));
        }
        if d.score >= cfg.score_floor {
            dets.push(d.detection());
        }
    }
    let kept = nms(&dets, cfg.nms_iou);

    let mut objects = Vec::with_capacity(kept.len());
    for det in kept {
        let src = preds
            .detections
            .iter()
            .find(|d| d.id == det.instance_id)
            .expect("kept detections come from the input");
        let cands = src.candidates()?;
        let (best_grasp, grasp_confidence) = match select_best_grasp(&cands, &det.bbox, cfg.top_n) {
            Ok((_, c)) => (Some(c.rect), c.confidence),
            Err(PerceptionError::NoGrasp) => (None, 0.0),
            Err(e) => return Err(e),
        };
        objects.push(PerceivedObject {
            detection: det,
            best_grasp,
            grasp_confidence,
        });
    }

    let ids: Vec<u32> = objects.iter().map(|o| o.detection.instance_id).collect();
    let keep: BTreeSet<u32> = ids.iter().copied().collect();
    let relations = RelationMatrix::new(
        &ids,
        preds
            .relations
            .iter()
            .filter(|r| keep.contains(&r.first) && keep.contains(&r.second))
            .map(|r| ((r.first, r.second), r.probs)),
    )?;
    Ok(Perception { objects, relations })
}
