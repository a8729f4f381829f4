//! Seeded synthetic stacked scenes, an oracle predictor, and the
//! grasp-until-target trial loop.
//!
//! Objects are placed one after another; each new object rests on every
//! earlier object its box overlaps. The support relation is kept transitively
//! closed so any object under something, directly or through a chain, is
//! related to it explicitly.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{GraspRecord, ImageInfo, ObjectRecord, RelationRecord, SceneRecord};
use crate::evaluation::sequential_success;
use crate::execution::{to_robot_pose, AffineMap, DepthImage, ExecutionConfig, RobotGraspPose};
use crate::geometry::{union_area, AABox, OrientedRect};
use crate::loss::RelationPrediction;
use crate::perception::{perceive, GraspCandidate, PerceptionConfig};
use crate::predictions::{PredictedObject, ScenePredictions};
use crate::relation::{build_graph, next_action, symmetrize, GraspAction, ManipulationGraph, RelationLabel, Target};

/// Depth of the empty table, mm.
pub const TABLE_DEPTH: f64 = 1000.0;
/// Height of one stack level, mm.
pub const LEVEL_HEIGHT: f64 = 40.0;

pub const CATEGORIES: [&str; 31] = [
    "apple", "banana", "bottle", "book", "box", "cup", "glasses", "knife", "mobile phone", "mouse",
    "notebook", "orange", "pen", "plate", "remote", "screwdriver", "shaver", "stapler", "tape",
    "toothbrush", "toothpaste", "towel", "umbrella", "wallet", "watch", "wrench", "charger",
    "cable", "comb", "pliers", "lighter",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("object {0} is not in the scene")]
    UnknownObject(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    pub width: u32,
    pub height: u32,
    /// Side length range of object boxes, px.
    pub min_size: f64,
    pub max_size: f64,
    /// An object is hidden once this fraction of its box is covered from above.
    pub visibility_threshold: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            min_objects: 2,
            max_objects: 5,
            width: 160,
            height: 120,
            min_size: 24.0,
            max_size: 70.0,
            visibility_threshold: 0.8,
        }
    }
}

impl SceneConfig {
    pub fn with_counts(min_objects: usize, max_objects: usize) -> Self {
        Self {
            min_objects,
            max_objects,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.into()));
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return bad("object counts must satisfy 1 <= min <= max");
        }
        if self.max_objects > CATEGORIES.len() {
            return bad("more objects than categories");
        }
        if self.width < 16 || self.height < 16 {
            return bad("image must be at least 16x16");
        }
        if !(self.min_size >= 4.0 && self.min_size <= self.max_size)
            || self.max_size > self.width.min(self.height) as f64
        {
            return bad("box sizes must satisfy 4 <= min <= max <= image side");
        }
        if !(self.visibility_threshold > 0.0 && self.visibility_threshold <= 1.0) {
            return bad("visibility threshold must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub id: u32,
    pub category: String,
    pub bbox: AABox,
    pub grasps: Vec<OrientedRect>,
    /// Longest chain of objects underneath.
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimScene {
    pub width: u32,
    pub height: u32,
    pub visibility_threshold: f64,
    pub objects: Vec<SimObject>,
    /// `(above, below)`, transitively closed, sorted.
    pub edges: Vec<(u32, u32)>,
    /// Bumped by every removal.
    pub generation: u64,
    #[serde(skip)]
    depth: DepthImage,
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Deterministic scene for `seed`.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<SimScene, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let cats = sample(&mut rng, CATEGORIES.len(), n);
    let (w, h) = (cfg.width as f64, cfg.height as f64);

    let mut objects: Vec<SimObject> = Vec::with_capacity(n);
    for (i, cat) in cats.into_iter().enumerate() {
        let bw = rng.random_range(cfg.min_size..=cfg.max_size).round();
        let bh = rng.random_range(cfg.min_size..=cfg.max_size).round();
        // centers gather in the middle of the image so boxes pile up
        let cx = rng.random_range(0.3 * w..=0.7 * w);
        let cy = rng.random_range(0.3 * h..=0.7 * h);
        let xmin = (cx - bw / 2.0).round().clamp(0.0, w - bw);
        let ymin = (cy - bh / 2.0).round().clamp(0.0, h - bh);
        let bbox = AABox::new(xmin, ymin, xmin + bw, ymin + bh).expect("positive size");

        let count = rng.random_range(1..=3);
        let side = bw.min(bh);
        let grasps = (0..count)
            .map(|_| {
                let gx = bbox.center().x + rng.random_range(-0.15..=0.15) * bw;
                let gy = bbox.center().y + rng.random_range(-0.15..=0.15) * bh;
                let gw = (rng.random_range(0.45..=0.75) * side).max(2.0);
                let gh = (rng.random_range(0.3..=0.5) * gw).max(2.0);
                let theta = rng.random_range(-90.0..90.0);
                OrientedRect::new(gx, gy, gw, gh, theta).expect("positive size")
            })
            .collect();
        objects.push(SimObject {
            id: i as u32 + 1,
            category: CATEGORIES[cat].to_string(),
            bbox,
            grasps,
            level: 0,
        });
    }

    // later objects rest on every earlier object they overlap
    let mut below = vec![vec![false; n]; n];
    for a in 0..n {
        for b in 0..a {
            below[a][b] = objects[a].bbox.intersection(&objects[b].bbox).is_some();
        }
    }
    for k in 0..n {
        for a in 0..n {
            if below[a][k] {
                let via = below[k].clone();
                for (dst, src) in below[a].iter_mut().zip(via) {
                    *dst |= src;
                }
            }
        }
    }
    let mut edges = Vec::new();
    for (a, row) in below.iter().enumerate() {
        for (b, &on) in row.iter().enumerate() {
            if on {
                edges.push((objects[a].id, objects[b].id));
            }
        }
    }
    edges.sort_unstable();

    let mut scene = SimScene {
        width: cfg.width,
        height: cfg.height,
        visibility_threshold: cfg.visibility_threshold,
        objects,
        edges,
        generation: 0,
        depth: DepthImage::from_fn(1, 1, |_, _| TABLE_DEPTH),
    };
    scene.refresh();
    Ok(scene)
}

impl SimScene {
    /// Recomputes stack levels and the depth raster.
    fn refresh(&mut self) {
        let mut order: Vec<usize> = (0..self.objects.len()).collect();
        // every object sits above objects with smaller ids only
        order.sort_by_key(|&i| self.objects[i].id);
        for &i in &order {
            let id = self.objects[i].id;
            let level = self
                .edges
                .iter()
                .filter(|e| e.0 == id)
                .filter_map(|e| self.object(e.1))
                .map(|o| o.level + 1)
                .max()
                .unwrap_or(0);
            self.objects[i].level = level;
        }
        let objects = &self.objects;
        self.depth = DepthImage::from_fn(self.width as usize, self.height as usize, |u, v| {
            let (px, py) = (u as f64 + 0.5, v as f64 + 0.5);
            objects
                .iter()
                .filter(|o| px >= o.bbox.xmin && px < o.bbox.xmax && py >= o.bbox.ymin && py < o.bbox.ymax)
                .map(|o| TABLE_DEPTH - LEVEL_HEIGHT * (o.level + 1) as f64)
                .fold(TABLE_DEPTH, f64::min)
        });
    }

    pub fn object(&self, id: u32) -> Option<&SimObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn ids(&self) -> Vec<u32> {
        self.objects.iter().map(|o| o.id).collect()
    }

    pub fn depth(&self) -> &DepthImage {
        &self.depth
    }

    /// Objects resting (directly or indirectly) on `id`.
    pub fn above(&self, id: u32) -> Vec<u32> {
        self.edges.iter().filter(|e| e.1 == id).map(|e| e.0).collect()
    }

    pub fn relation(&self, a: u32, b: u32) -> RelationLabel {
        if self.edges.binary_search(&(a, b)).is_ok() {
            RelationLabel::Above
        } else if self.edges.binary_search(&(b, a)).is_ok() {
            RelationLabel::Below
        } else {
            RelationLabel::None
        }
    }

    /// Fraction of the object's box covered by boxes of objects above it.
    pub fn coverage(&self, id: u32) -> Result<f64, SimError> {
        let obj = self.object(id).ok_or(SimError::UnknownObject(id))?;
        let parts: Vec<AABox> = self
            .above(id)
            .into_iter()
            .filter_map(|a| self.object(a)?.bbox.intersection(&obj.bbox))
            .collect();
        Ok(union_area(&parts) / obj.bbox.area())
    }

    pub fn visible_ids(&self) -> Vec<u32> {
        self.ids()
            .into_iter()
            .filter(|&id| self.coverage(id).is_ok_and(|c| c < self.visibility_threshold))
            .collect()
    }

    /// Annotation record of the current scene.
    pub fn to_record(&self) -> SceneRecord {
        SceneRecord {
            image: ImageInfo {
                width: self.width,
                height: self.height,
                path: None,
            },
            depth_path: None,
            objects: self
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    id: o.id,
                    category: o.category.clone(),
                    bbox: o.bbox,
                })
                .collect(),
            grasps: self
                .objects
                .iter()
                .flat_map(|o| o.grasps.iter().map(|&rect| GraspRecord { owner: o.id, rect }))
                .collect(),
            relations: self
                .edges
                .iter()
                .map(|&(above, below)| RelationRecord { above, below })
                .collect(),
        }
    }
}

pub fn visible(scene: &SimScene, id: u32) -> Result<bool, SimError> {
    Ok(scene.coverage(id)? < scene.visibility_threshold)
}

/// Scene without `id` and its edges. Whether anything rested on it is the
/// caller's business.
pub fn remove_object(scene: &SimScene, id: u32) -> Result<SimScene, SimError> {
    if scene.object(id).is_none() {
        return Err(SimError::UnknownObject(id));
    }
    let mut next = scene.clone();
    next.objects.retain(|o| o.id != id);
    next.edges.retain(|e| e.0 != id && e.1 != id);
    next.generation += 1;
    next.refresh();
    Ok(next)
}

/// Pixel `(u, v, depth)` to robot millimeters for the simulated camera:
/// 0.5 mm per pixel, z measured up from the table.
pub fn sim_camera() -> AffineMap {
    AffineMap {
        linear: [[0.5, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, -1.0]],
        offset: [0.0, 0.0, TABLE_DEPTH],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub drop_prob: f64,
    /// px
    pub box_sigma: f64,
    /// degrees
    pub angle_sigma: f64,
    pub relation_flip: f64,
    pub score_sigma: f64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let sigma = |s: f64| s.is_finite() && s >= 0.0;
        if !prob(self.drop_prob) || !prob(self.relation_flip) {
            return Err(SimError::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        if !sigma(self.box_sigma) || !sigma(self.angle_sigma) || !sigma(self.score_sigma) {
            return Err(SimError::InvalidConfig("noise scales must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Ground truth for the visible objects with `noise` applied. The number of
/// random draws does not depend on the noise levels, so runs that differ only
/// in noise share their randomness.
pub fn oracle_predict(scene: &SimScene, noise: &NoiseModel, seed: u64) -> ScenePredictions {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let visible: BTreeSet<u32> = scene.visible_ids().into_iter().collect();
    let (w, h) = (scene.width as f64, scene.height as f64);

    let mut detections = Vec::new();
    for o in &scene.objects {
        let dropped = rng.random::<f64>() < noise.drop_prob;
        let jitter: [f64; 4] = std::array::from_fn(|_| noise.box_sigma * normal(&mut rng));
        let score = (1.0 - noise.score_sigma * normal(&mut rng).abs()).clamp(0.0, 1.0);
        let turns: Vec<f64> = o.grasps.iter().map(|_| noise.angle_sigma * normal(&mut rng)).collect();
        if dropped || !visible.contains(&o.id) {
            continue;
        }
        let [x0, y0, x1, y1] = o.bbox.to_array();
        let xmin = (x0 + jitter[0]).clamp(0.0, w - 1.0);
        let ymin = (y0 + jitter[1]).clamp(0.0, h - 1.0);
        let xmax = (x1 + jitter[2]).clamp(xmin + 1.0, w);
        let ymax = (y1 + jitter[3]).clamp(ymin + 1.0, h);
        let grasps = o
            .grasps
            .iter()
            .zip(&turns)
            .map(|(g, t)| GraspCandidate {
                rect: OrientedRect::new(g.x(), g.y(), g.w(), g.h(), g.theta() + t).expect("valid grasp"),
                confidence: 1.0,
            })
            .collect();
        detections.push(PredictedObject {
            id: o.id,
            category: o.category.clone(),
            bbox: AABox::new(xmin, ymin, xmax, ymax).expect("ordered by construction"),
            score,
            grasps,
            raw_grasps: None,
        });
    }

    let mut relations = Vec::new();
    for a in &detections {
        for b in &detections {
            if a.id == b.id {
                continue;
            }
            let flip = rng.random::<f64>() < noise.relation_flip;
            let pick = rng.random_range(1..=2);
            let truth = scene.relation(a.id, b.id);
            let label = if flip {
                RelationLabel::from_index((truth.index() + pick) % 3).expect("index < 3")
            } else {
                truth
            };
            relations.push(RelationPrediction {
                first: a.id,
                second: b.id,
                probs: label.one_hot(),
            });
        }
    }
    ScenePredictions {
        scene_id: None,
        detections,
        relations,
    }
}

/// How the object to retrieve is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    /// Any object, uniformly.
    #[default]
    Random,
    /// A hidden object when there is one, otherwise any object.
    PreferHidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    pub target_rule: TargetRule,
    pub max_steps: usize,
    pub noise: NoiseModel,
    pub perception: PerceptionConfig,
    /// When set, each chosen grasp is turned into a robot pose and a failure
    /// leaves the object in place.
    pub execution: Option<ExecutionConfig>,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene: SceneConfig::default(),
            target_rule: TargetRule::Random,
            max_steps: SceneConfig::default().max_objects,
            noise: NoiseModel::default(),
            perception: PerceptionConfig::default(),
            execution: Some(ExecutionConfig::default()),
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.scene.validate()?;
        self.noise.validate()?;
        if self.max_steps < self.scene.max_objects {
            return Err(SimError::InvalidConfig("max_steps must be at least the object count".into()));
        }
        if self.perception.top_n == 0 {
            return Err(SimError::InvalidConfig("top_n must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTarget {
    pub id: u32,
    pub category: String,
    pub initially_visible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub object: u32,
    /// Nothing rested on the object when it was taken.
    pub order_valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStep {
    pub step: usize,
    pub visible: Vec<u32>,
    pub predictions: ScenePredictions,
    pub graph: ManipulationGraph,
    pub action: Option<GraspAction>,
    pub grasp: Option<OrientedRect>,
    pub pose: Option<RobotGraspPose>,
    pub removal: Option<Removal>,
    /// Why the step ended without a removal.
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub success: bool,
    pub target_removed: bool,
    pub steps: usize,
    pub removals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub config: TrialConfig,
    pub num_objects: usize,
    pub target: TrialTarget,
    pub steps: Vec<TrialStep>,
    pub outcome: TrialOutcome,
}

impl TrialLog {
    /// Reruns the trial from its configuration and compares.
    pub fn replays(&self) -> Result<bool, SimError> {
        Ok(run_trial(&self.config)? == *self)
    }
}

fn choose_target(scene: &SimScene, rule: TargetRule, rng: &mut impl Rng) -> u32 {
    let ids = scene.ids();
    let hidden: Vec<u32> = ids
        .iter()
        .copied()
        .filter(|&id| !visible(scene, id).unwrap_or(true))
        .collect();
    let pool = match rule {
        TargetRule::PreferHidden if !hidden.is_empty() => hidden,
        _ => ids,
    };
    pool[rng.random_range(0..pool.len())]
}

/// Predict, perceive, reason, act, remove; until the target is gone or the
/// step budget (at most one step per object) is spent.
pub fn run_trial(cfg: &TrialConfig) -> Result<TrialLog, SimError> {
    cfg.validate()?;
    let mut scene = generate_scene(cfg.seed, &cfg.scene)?;
    let n = scene.objects.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let target_id = choose_target(&scene, cfg.target_rule, &mut rng);
    let target_obj = scene.object(target_id).expect("chosen from the scene");
    let target = TrialTarget {
        id: target_id,
        category: target_obj.category.clone(),
        initially_visible: visible(&scene, target_id)?,
    };
    let query = Target::Category(target.category.clone());
    let camera = sim_camera();

    let mut steps = Vec::new();
    let mut target_removed = false;
    for step in 0..cfg.max_steps.min(n) {
        let predictions = oracle_predict(&scene, &cfg.noise, rng.random());
        let mut record = TrialStep {
            step,
            visible: scene.visible_ids(),
            predictions,
            graph: build_graph(&[], &[]),
            action: None,
            grasp: None,
            pose: None,
            removal: None,
            note: None,
        };
        let perception = match perceive(&record.predictions, &cfg.perception) {
            Ok(p) => p,
            Err(e) => {
                record.note = Some(e.to_string());
                steps.push(record);
                continue;
            }
        };
        record.graph = build_graph(&perception.ids(), &symmetrize(&perception.relations));
        let action = match next_action(&record.graph, &perception.objects, &query) {
            Ok(a) => a,
            Err(e) => {
                record.note = Some(e.to_string());
                steps.push(record);
                continue;
            }
        };
        record.action = Some(action);
        record.grasp = perception
            .objects
            .iter()
            .find(|o| o.detection.instance_id == action.object)
            .and_then(|o| o.best_grasp);

        if let Some(exec) = &cfg.execution {
            let Some(grasp) = record.grasp else {
                record.note = Some("no grasp for the chosen object".into());
                steps.push(record);
                continue;
            };
            match to_robot_pose(&grasp, scene.depth(), &camera, exec) {
                Ok(p) => record.pose = Some(p),
                Err(e) => {
                    record.note = Some(e.to_string());
                    steps.push(record);
                    continue;
                }
            }
        }

        let order_valid = scene.above(action.object).is_empty();
        scene = remove_object(&scene, action.object)?;
        record.removal = Some(Removal {
            object: action.object,
            order_valid,
        });
        steps.push(record);
        if action.object == target_id {
            target_removed = true;
            break;
        }
    }

    let mut log = TrialLog {
        config: cfg.clone(),
        num_objects: n,
        target,
        outcome: TrialOutcome {
            success: false,
            target_removed,
            steps: steps.len(),
            removals: steps.iter().filter(|s| s.removal.is_some()).count(),
        },
        steps,
    };
    log.outcome.success = sequential_success(&log);
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regime {
    pub name: String,
    pub min_objects: usize,
    pub max_objects: usize,
}

/// Batch of trials over scene regimes and noise levels. Trial `i` uses seed
/// `seed + i` in every regime and at every noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub trials: usize,
    pub regimes: Vec<Regime>,
    pub noise_levels: Vec<NoiseModel>,
    pub target_rule: TargetRule,
    /// Step budget; the largest object count of the regime when absent.
    pub max_steps: Option<usize>,
    pub visibility_threshold: f64,
    pub perception: PerceptionConfig,
    pub execution: Option<ExecutionConfig>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 32,
            regimes: vec![
                Regime {
                    name: "familiar".into(),
                    min_objects: 2,
                    max_objects: 5,
                },
                Regime {
                    name: "complex".into(),
                    min_objects: 6,
                    max_objects: 9,
                },
            ],
            noise_levels: vec![NoiseModel::default()],
            target_rule: TargetRule::Random,
            max_steps: None,
            visibility_threshold: 0.8,
            perception: PerceptionConfig::default(),
            execution: Some(ExecutionConfig::default()),
        }
    }
}

impl SimulationConfig {
    /// Trial configuration for one trial of one row.
    pub fn trial(&self, regime: &Regime, noise: &NoiseModel, index: usize) -> TrialConfig {
        TrialConfig {
            seed: self.seed.wrapping_add(index as u64),
            scene: SceneConfig {
                visibility_threshold: self.visibility_threshold,
                ..SceneConfig::with_counts(regime.min_objects, regime.max_objects)
            },
            target_rule: self.target_rule,
            max_steps: self.max_steps.unwrap_or(regime.max_objects),
            noise: *noise,
            perception: self.perception,
            execution: self.execution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub regime: String,
    pub noise: NoiseModel,
    pub successes: usize,
    pub trials: usize,
    pub success_rate: f64,
    /// e.g. `90.6% (29/32)`
    pub display: String,
    pub hidden_target_trials: usize,
    pub hidden_target_successes: usize,
    pub mean_steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub rows: Vec<ResultRow>,
}

pub fn format_rate(successes: usize, trials: usize) -> String {
    let pct = if trials == 0 {
        0.0
    } else {
        100.0 * successes as f64 / trials as f64
    };
    format!("{pct:.1}% ({successes}/{trials})")
}

/// One row per noise level and regime, in configuration order.
pub fn run_simulation(cfg: &SimulationConfig) -> Result<SimulationReport, SimError> {
    let mut rows = Vec::new();
    for noise in &cfg.noise_levels {
        for regime in &cfg.regimes {
            let logs: Vec<TrialLog> = (0..cfg.trials)
                .into_par_iter()
                .map(|i| run_trial(&cfg.trial(regime, noise, i)))
                .collect::<Result<_, _>>()?;
            let successes = logs.iter().filter(|l| l.outcome.success).count();
            let hidden: Vec<&TrialLog> = logs.iter().filter(|l| !l.target.initially_visible).collect();
            let steps: usize = logs.iter().map(|l| l.outcome.steps).sum();
            rows.push(ResultRow {
                regime: regime.name.clone(),
                noise: *noise,
                successes,
                trials: logs.len(),
                success_rate: if logs.is_empty() {
                    0.0
                } else {
                    successes as f64 / logs.len() as f64
                },
                display: format_rate(successes, logs.len()),
                hidden_target_trials: hidden.len(),
                hidden_target_successes: hidden.iter().filter(|l| l.outcome.success).count(),
                mean_steps: if logs.is_empty() {
                    0.0
                } else {
                    steps as f64 / logs.len() as f64
                },
            });
        }
    }
    Ok(SimulationReport { seed: cfg.seed, rows })
}

impl SimulationReport {
    /// Plain-text table, one line per row.
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<12} {:>6} {:>6} {:>6} {:>6} {:>6}  {}\n",
            "scene", "flip", "drop", "box", "angle", "score", "success"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>6.2} {:>6.2} {:>6.2} {:>6.2} {:>6.2}  {}\n",
                r.regime,
                r.noise.relation_flip,
                r.noise.drop_prob,
                r.noise.box_sigma,
                r.noise.angle_sigma,
                r.noise.score_sigma,
                r.display
            ));
        }
        out
    }
}
