//! Per-scene predictor output and the predictor abstraction.
//!
//! A predictions file is JSON:
//!
//! ```json
//! {
//!   "scene_id": "0001",
//!   "detections": [
//!     { "id": 0, "category": "cup", "bbox": [10, 20, 60, 90], "score": 0.97,
//!       "grasps": [ { "rect": [35, 55, 30, 10, 45], "confidence": 0.9 } ] },
//!     { "id": 1, "category": "box", "bbox": [40, 30, 120, 100], "score": 0.88,
//!       "raw_grasps": { "roi": [40, 30, 120, 100],
//!                       "config": { "grid_w": 7, "grid_h": 7, "k": 4, "anchor_size": 12.0 },
//!                       "outputs": [ [0, 0, 0, 0, 0, 1.2, -0.3], "..." ] } }
//!   ],
//!   "relations": [ { "first": 0, "second": 1, "probs": [0.1, 0.8, 0.1] },
//!                  { "first": 1, "second": 0, "probs": [0.1, 0.1, 0.8] } ]
//! }
//! ```
//!
//! `probs` is ordered `[none, first-on-second, second-on-first]`. A scene
//! annotation record is also accepted and read as perfect predictions.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::AnchorConfig;
use crate::dataset::{DatasetError, SceneRecord};
use crate::geometry::AABox;
use crate::loss::RelationPrediction;
use crate::perception::{
    decode_roi_grasps, GraspCandidate, ObjectDetection, PerceptionError, RawAnchorOutput,
};

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGraspOutput {
    pub roi: AABox,
    pub config: AnchorConfig,
    pub outputs: Vec<RawAnchorOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictedObject {
    pub id: u32,
    pub category: String,
    pub bbox: AABox,
    pub score: f64,
    #[serde(default)]
    pub grasps: Vec<GraspCandidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_grasps: Option<RawGraspOutput>,
}

impl PredictedObject {
    pub fn detection(&self) -> ObjectDetection {
        ObjectDetection {
            bbox: self.bbox,
            category: self.category.clone(),
            score: self.score,
            instance_id: self.id,
        }
    }

    /// Listed candidates followed by decoded raw anchor outputs.
    pub fn candidates(&self) -> Result<Vec<GraspCandidate>, PerceptionError> {
        let mut out = self.grasps.clone();
        if let Some(raw) = &self.raw_grasps {
            out.extend(decode_roi_grasps(&raw.roi, &raw.outputs, &raw.config)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenePredictions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    pub detections: Vec<PredictedObject>,
    #[serde(default)]
    pub relations: Vec<RelationPrediction>,
}

impl ScenePredictions {
    /// Perfect predictions: every object with score 1, all its grasps at
    /// confidence 1, and one-hot relations for every ordered pair.
    pub fn from_ground_truth(rec: &SceneRecord) -> Self {
        let detections = rec
            .objects
            .iter()
            .map(|o| PredictedObject {
                id: o.id,
                category: o.category.clone(),
                bbox: o.bbox,
                score: 1.0,
                grasps: rec
                    .grasps_of(o.id)
                    .map(|&rect| GraspCandidate {
                        rect,
                        confidence: 1.0,
                    })
                    .collect(),
                raw_grasps: None,
            })
            .collect();
        let mut relations = Vec::new();
        for a in &rec.objects {
            for b in &rec.objects {
                if a.id != b.id {
                    relations.push(RelationPrediction {
                        first: a.id,
                        second: b.id,
                        probs: rec.relation(a.id, b.id).one_hot(),
                    });
                }
            }
        }
        Self {
            scene_id: None,
            detections,
            relations,
        }
    }
}

/// Parses a predictions document, or a scene record standing in for one.
pub fn parse_predictions(text: &str) -> Result<ScenePredictions, PredictError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if value.get("image").is_some() {
        let rec = crate::dataset::parse_scene(text)?;
        return Ok(ScenePredictions::from_ground_truth(&rec));
    }
    serde_path_to_error::deserialize(value).map_err(|e| PredictError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Source of per-scene predictions.
pub trait Predictor {
    type Input: ?Sized;

    fn predict(&self, input: &Self::Input) -> Result<ScenePredictions, PredictError>;
}

/// Reads precomputed predictions from `<dir>/<scene id>.json`.
#[derive(Debug, Clone)]
pub struct FilePredictor {
    dir: PathBuf,
}

impl FilePredictor {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, scene_id: &str) -> PathBuf {
        self.dir.join(format!("{scene_id}.json"))
    }
}

impl Predictor for FilePredictor {
    type Input = str;

    fn predict(&self, scene_id: &str) -> Result<ScenePredictions, PredictError> {
        load_predictions(&self.path_for(scene_id))
    }
}

pub fn load_predictions(path: &Path) -> Result<ScenePredictions, PredictError> {
    let mut p = parse_predictions(&std::fs::read_to_string(path)?)?;
    if p.scene_id.is_none() {
        p.scene_id = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{perceive, PerceptionConfig};

    const SAMPLE: &str = r#"{
      "detections": [
        {"id": 0, "category": "cup", "bbox": [0, 0, 20, 20], "score": 0.9,
         "grasps": [{"rect": [10, 10, 8, 3, 0], "confidence": 0.7}]},
        {"id": 1, "category": "box", "bbox": [10, 10, 40, 40], "score": 0.8}
      ],
      "relations": [
        {"first": 0, "second": 1, "probs": [0.1, 0.8, 0.1]},
        {"first": 1, "second": 0, "probs": [0.1, 0.1, 0.8]}
      ]
    }"#;

    #[test]
    fn parses_and_perceives() {
        let p = parse_predictions(SAMPLE).unwrap();
        let per = perceive(&p, &PerceptionConfig::default()).unwrap();
        assert_eq!(per.objects.len(), 2);
        assert!(per.objects[0].best_grasp.is_some());
        assert!(per.objects[1].best_grasp.is_none());
        assert_eq!(per.relations.get(0, 1), Some([0.1, 0.8, 0.1]));
    }

    #[test]
    fn raw_outputs_are_decoded() {
        let mut p = parse_predictions(SAMPLE).unwrap();
        let cfg = AnchorConfig::new(2, 2, 2, 12.0).unwrap();
        let mut outputs = vec![RawAnchorOutput::from([0.0; 7]); 8];
        outputs[5] = RawAnchorOutput::from([0.0, 0.0, 0.0, 0.0, 0.0, 3.0, 0.0]);
        p.detections[1].raw_grasps = Some(RawGraspOutput {
            roi: p.detections[1].bbox,
            config: cfg,
            outputs,
        });
        let text = serde_json::to_string(&p).unwrap();
        let back = parse_predictions(&text).unwrap();
        assert_eq!(back.detections[1].candidates().unwrap().len(), 8);
        let per = perceive(&back, &PerceptionConfig { top_n: 1, ..Default::default() }).unwrap();
        let g = per.objects[1].best_grasp.unwrap();
        // cell (1, 0), second orientation
        assert_eq!((g.x(), g.y(), g.theta()), (17.5, 32.5, 45.0));
    }

    #[test]
    fn missing_relation_is_rejected() {
        let text = SAMPLE.replace(
            r#",
        {"first": 1, "second": 0, "probs": [0.1, 0.1, 0.8]}"#,
            "",
        );
        let p = parse_predictions(&text).unwrap();
        assert!(perceive(&p, &PerceptionConfig::default()).is_err());
    }

    #[test]
    fn scene_record_reads_as_perfect_predictions() {
        let rec = r#"{"image": {"width": 50, "height": 50},
            "objects": [{"id": 3, "category": "a", "bbox": [0, 0, 10, 10]},
                        {"id": 4, "category": "b", "bbox": [5, 5, 15, 15]}],
            "grasps": [{"owner": 3, "rect": [5, 5, 6, 2, 10]}],
            "relations": [{"above": 4, "below": 3}]}"#;
        let p = parse_predictions(rec).unwrap();
        assert_eq!(p.detections.len(), 2);
        assert_eq!(p.relations.len(), 2);
        let r = p.relations.iter().find(|r| r.first == 4).unwrap();
        assert_eq!(r.probs, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn schema_error_path() {
        let text = SAMPLE.replace("\"score\": 0.9", "\"score\": \"high\"");
        match parse_predictions(&text) {
            Err(PredictError::Schema { path, .. }) => assert_eq!(path, "detections[0].score"),
            other => panic!("{other:?}"),
        }
    }
}
