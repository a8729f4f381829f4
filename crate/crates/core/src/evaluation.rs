//! Detection-with-grasp mAP, relationship recall/precision, image accuracy and
//! sequential grasping success.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataset::SceneRecord;
use crate::geometry::{aabb_iou, angle_difference, rotated_jaccard, OrientedRect};
use crate::perception::PerceivedObject;
use crate::relation::{PairLabel, RelationLabel};
use crate::sim::TrialLog;

/// Correctness thresholds. A detection needs box IoU above `iou` with a
/// same-class object, and its grasp needs Jaccard above `jaccard` and an angle
/// difference below `angle` with one of that object's grasps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalThresholds {
    pub iou: f64,
    pub jaccard: f64,
    /// Degrees.
    pub angle: f64,
}

impl Default for EvalThresholds {
    fn default() -> Self {
        Self {
            iou: 0.5,
            jaccard: 0.25,
            angle: 30.0,
        }
    }
}

/// True when `g` matches at least one of `truth`.
pub fn grasp_correct(g: &OrientedRect, truth: &[OrientedRect], th: &EvalThresholds) -> bool {
    truth
        .iter()
        .any(|t| rotated_jaccard(g, t) > th.jaccard && angle_difference(g.theta(), t.theta()) < th.angle)
}

/// Best unused same-class object by box IoU (above the threshold).
fn best_box_match(pred: &PerceivedObject, gt: &SceneRecord, used: &BTreeSet<u32>, th: &EvalThresholds) -> Option<u32> {
    gt.objects
        .iter()
        .filter(|o| !used.contains(&o.id) && o.category == pred.detection.category)
        .map(|o| (o.id, aabb_iou(&o.bbox, &pred.detection.bbox)))
        .filter(|(_, iou)| *iou > th.iou)
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(id, _)| id)
}

/// Ground-truth object id this prediction counts as, if its box and its grasp are both right.
pub fn is_true_positive(
    pred: &PerceivedObject,
    gt: &SceneRecord,
    used: &BTreeSet<u32>,
    th: &EvalThresholds,
) -> Option<u32> {
    let id = best_box_match(pred, gt, used, th)?;
    let grasp = pred.best_grasp?;
    let owned: Vec<OrientedRect> = gt.grasps_of(id).copied().collect();
    grasp_correct(&grasp, &owned, th).then_some(id)
}

/// Area under the precision/recall curve with the precision envelope taken
/// from the right.
pub fn average_precision(recall: &[f64], precision: &[f64]) -> f64 {
    let mut mrec = Vec::with_capacity(recall.len() + 2);
    mrec.push(0.0);
    mrec.extend_from_slice(recall);
    mrec.push(1.0);
    let mut mpre = Vec::with_capacity(precision.len() + 2);
    mpre.push(0.0);
    mpre.extend_from_slice(precision);
    mpre.push(0.0);
    for i in (0..mpre.len() - 1).rev() {
        mpre[i] = mpre[i].max(mpre[i + 1]);
    }
    (0..mrec.len() - 1)
        .filter(|&i| mrec[i + 1] != mrec[i])
        .map(|i| (mrec[i + 1] - mrec[i]) * mpre[i + 1])
        .sum()
}

/// One evaluated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEval {
    pub id: String,
    pub gt: SceneRecord,
    pub objects: Vec<PerceivedObject>,
    /// Consolidated predicted relations between predicted objects.
    pub labels: Vec<PairLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub map_with_grasp: f64,
    pub per_class_ap: BTreeMap<String, f64>,
    pub true_positives: usize,
    pub predictions: usize,
    pub gt_objects: usize,
}

/// VOC-style AP per class, with (O, G) correctness, averaged over classes present in ground truth.
pub fn map_with_grasp(scenes: &[SceneEval], th: &EvalThresholds) -> MapReport {
    let mut classes: BTreeMap<String, usize> = BTreeMap::new();
    for s in scenes {
        for o in &s.gt.objects {
            *classes.entry(o.category.clone()).or_default() += 1;
        }
    }

    // (score, scene id, instance id, scene index, object index)
    let mut preds: Vec<(f64, &str, u32, usize, usize)> = Vec::new();
    for (si, s) in scenes.iter().enumerate() {
        for (oi, o) in s.objects.iter().enumerate() {
            preds.push((o.detection.score, &s.id, o.detection.instance_id, si, oi));
        }
    }
    preds.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));

    let mut used: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); scenes.len()];
    let mut hits: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    let mut tp_total = 0;
    for &(_, _, _, si, oi) in &preds {
        let p = &scenes[si].objects[oi];
        let hit = match is_true_positive(p, &scenes[si].gt, &used[si], th) {
            Some(id) => {
                used[si].insert(id);
                tp_total += 1;
                true
            }
            None => false,
        };
        hits.entry(p.detection.category.as_str()).or_default().push(hit);
    }

    let mut per_class_ap = BTreeMap::new();
    for (cls, &npos) in &classes {
        let flags = hits.get(cls.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut recall = Vec::with_capacity(flags.len());
        let mut precision = Vec::with_capacity(flags.len());
        for &h in flags {
            if h {
                tp += 1;
            } else {
                fp += 1;
            }
            recall.push(tp as f64 / npos as f64);
            precision.push(tp as f64 / (tp + fp) as f64);
        }
        per_class_ap.insert(cls.clone(), average_precision(&recall, &precision));
    }
    let map = if per_class_ap.is_empty() {
        0.0
    } else {
        per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64
    };
    MapReport {
        map_with_grasp: map,
        per_class_ap,
        true_positives: tp_total,
        predictions: preds.len(),
        gt_objects: classes.values().sum(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RateCount {
    pub correct: usize,
    pub total: usize,
    pub rate: f64,
}

impl RateCount {
    fn push(&mut self, ok: bool) {
        self.total += 1;
        if ok {
            self.correct += 1;
        }
        self.rate = self.correct as f64 / self.total as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationReport {
    pub obj_recall: f64,
    pub obj_precision: f64,
    pub image_accuracy: f64,
    /// Keyed by the number of ground-truth objects in the scene.
    pub image_accuracy_by_count: BTreeMap<usize, RateCount>,
    pub gt_pairs: usize,
    pub predicted_pairs: usize,
    pub correct_pairs: usize,
}

/// Greedy score-ordered box matching (no grasp condition): predicted id -> ground-truth id.
pub fn match_objects(objects: &[PerceivedObject], gt: &SceneRecord, th: &EvalThresholds) -> HashMap<u32, u32> {
    let mut order: Vec<&PerceivedObject> = objects.iter().collect();
    order.sort_by(|a, b| {
        b.detection
            .score
            .total_cmp(&a.detection.score)
            .then(a.detection.instance_id.cmp(&b.detection.instance_id))
    });
    let mut used = BTreeSet::new();
    let mut out = HashMap::new();
    for p in order {
        if let Some(id) = best_box_match(p, gt, &used, th) {
            used.insert(id);
            out.insert(p.detection.instance_id, id);
        }
    }
    out
}

fn pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// A ground-truth pair is recovered when both objects are detected and the
/// predicted relation between their detections is the true one. An empty
/// denominator gives a rate of 1.
pub fn relation_metrics(scenes: &[SceneEval], th: &EvalThresholds) -> RelationReport {
    let (mut gt_pairs, mut predicted_pairs, mut correct_pairs) = (0, 0, 0);
    let mut overall = RateCount::default();
    let mut by_count: BTreeMap<usize, RateCount> = BTreeMap::new();

    for s in scenes {
        let matched = match_objects(&s.objects, &s.gt, th);
        let gt_to_pred: HashMap<u32, u32> = matched.iter().map(|(p, g)| (*g, *p)).collect();
        let mut predicted: HashMap<(u32, u32), RelationLabel> = HashMap::new();
        for l in &s.labels {
            predicted.insert((l.first, l.second), l.relation);
            predicted.insert((l.second, l.first), l.relation.reversed());
        }

        let gt_ids: Vec<u32> = s.gt.objects.iter().map(|o| o.id).collect();
        let mut scene_pairs_ok = true;
        for (i, &a) in gt_ids.iter().enumerate() {
            for &b in &gt_ids[i + 1..] {
                gt_pairs += 1;
                let ok = match (gt_to_pred.get(&a), gt_to_pred.get(&b)) {
                    (Some(&pa), Some(&pb)) => {
                        let got = predicted.get(&(pa, pb)).copied().unwrap_or(RelationLabel::None);
                        got == s.gt.relation(a, b)
                    }
                    _ => false,
                };
                if ok {
                    correct_pairs += 1;
                } else {
                    scene_pairs_ok = false;
                }
            }
        }
        predicted_pairs += pairs(s.objects.len());
        let all_found = gt_ids.iter().all(|id| gt_to_pred.contains_key(id));
        let ok = all_found && scene_pairs_ok;
        overall.push(ok);
        by_count.entry(gt_ids.len()).or_default().push(ok);
    }

    let rate = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    RelationReport {
        obj_recall: rate(correct_pairs, gt_pairs),
        obj_precision: rate(correct_pairs, predicted_pairs),
        image_accuracy: if overall.total == 0 { 0.0 } else { overall.rate },
        image_accuracy_by_count: by_count,
        gt_pairs,
        predicted_pairs,
        correct_pairs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenes: usize,
    pub thresholds: EvalThresholds,
    pub map_with_grasp: f64,
    pub per_class_ap: BTreeMap<String, f64>,
    pub obj_recall: f64,
    pub obj_precision: f64,
    pub image_accuracy: f64,
    pub image_accuracy_by_count: BTreeMap<usize, RateCount>,
    pub counts: MetricCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub gt_objects: usize,
    pub predictions: usize,
    pub true_positives: usize,
    pub gt_pairs: usize,
    pub predicted_pairs: usize,
    pub correct_pairs: usize,
}

/// All metrics over a set of scenes. Scene order does not matter.
pub fn evaluate(scenes: &[SceneEval], th: &EvalThresholds) -> MetricsReport {
    let mut sorted: Vec<SceneEval> = scenes.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let m = map_with_grasp(&sorted, th);
    let r = relation_metrics(&sorted, th);
    MetricsReport {
        scenes: sorted.len(),
        thresholds: *th,
        map_with_grasp: m.map_with_grasp,
        per_class_ap: m.per_class_ap,
        obj_recall: r.obj_recall,
        obj_precision: r.obj_precision,
        image_accuracy: r.image_accuracy,
        image_accuracy_by_count: r.image_accuracy_by_count,
        counts: MetricCounts {
            gt_objects: m.gt_objects,
            predictions: m.predictions,
            true_positives: m.true_positives,
            gt_pairs: r.gt_pairs,
            predicted_pairs: r.predicted_pairs,
            correct_pairs: r.correct_pairs,
        },
    }
}

/// Every removal happened with nothing resting on the removed object, and the
/// last removal was the target.
pub fn sequential_success(log: &TrialLog) -> bool {
    let removals: Vec<_> = log.steps.iter().filter_map(|s| s.removal.as_ref()).collect();
    !removals.is_empty()
        && removals.iter().all(|r| r.order_valid)
        && removals.last().is_some_and(|r| r.object == log.target.id)
}
