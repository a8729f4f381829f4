//! Static grasp planning on one set of predictions: the scene is re-reasoned
//! after each planned removal without new perception.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::OrientedRect;
use crate::perception::{perceive, PerceptionConfig, PerceptionError};
use crate::predictions::ScenePredictions;
use crate::relation::{build_graph, next_action, resolve_target, symmetrize, GraspAction, ManipulationGraph, Target};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("target {0:?} is not among the detections")]
    UnknownTarget(Target),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub step: usize,
    pub action: GraspAction,
    pub category: String,
    pub grasp: Option<OrientedRect>,
    /// Graph the action was chosen from.
    pub graph: ManipulationGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub target: Target,
    /// The target was not detected and visible objects are cleared instead.
    pub assumed_hidden: bool,
    /// Several detections share the target category; the best-scored one is used.
    pub ambiguous_target: bool,
    pub steps: Vec<PlanStep>,
    pub reaches_target: bool,
}

/// Ordered grasps toward `target`. An undetected target is an error unless
/// `assume_hidden`, in which case every object is cleared leaf by leaf.
pub fn plan(
    preds: &ScenePredictions,
    target: &Target,
    cfg: &PerceptionConfig,
    assume_hidden: bool,
) -> Result<Plan, PlanError> {
    let mut perception = perceive(preds, cfg)?;
    let resolved = resolve_target(&perception.objects, target);
    let detected = resolved.is_some();
    if !detected && !assume_hidden {
        return Err(PlanError::UnknownTarget(target.clone()));
    }

    let mut steps = Vec::new();
    let mut reaches_target = false;
    while !perception.objects.is_empty() {
        let graph = build_graph(&perception.ids(), &symmetrize(&perception.relations));
        let action = match next_action(&graph, &perception.objects, target) {
            Ok(a) => a,
            Err(_) => break,
        };
        let obj = perception
            .objects
            .iter()
            .find(|o| o.detection.instance_id == action.object)
            .expect("actions name detected objects");
        steps.push(PlanStep {
            step: steps.len(),
            action,
            category: obj.detection.category.clone(),
            grasp: obj.best_grasp,
            graph,
        });
        if action.is_final_target {
            reaches_target = true;
            break;
        }
        perception = perception.without(action.object);
    }
    Ok(Plan {
        target: target.clone(),
        assumed_hidden: !detected,
        ambiguous_target: resolved.is_some_and(|r| r.ambiguous),
        steps,
        reaches_target,
    })
}
