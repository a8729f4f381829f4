//! Manipulation relationships between detected objects and grasp-order planning.
//!
//! Pairwise predictions are folded into one label per unordered pair, turned
//! into a directed graph whose edges point from an object to the object it
//! rests on, and repaired into a DAG. Objects with nothing on top of them
//! (leaves) are safe to grasp.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::PerceivedObject;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReasoningError {
    #[error("relation for pair ({0}, {1}) missing")]
    MissingPair(u32, u32),
    #[error("relation probabilities for pair ({0}, {1}) invalid")]
    InvalidProbabilities(u32, u32),
    #[error("relation references unknown object {0}")]
    UnknownObject(u32),
    #[error("duplicate object id {0}")]
    DuplicateObject(u32),
    #[error("no objects detected")]
    EmptyScene,
}

/// Relation of the first object of an ordered pair to the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationLabel {
    None,
    /// The first object rests on the second.
    Above,
    /// The second object rests on the first.
    Below,
}

impl RelationLabel {
    pub const ALL: [RelationLabel; 3] = [Self::None, Self::Above, Self::Below];

    /// Class index: 0 none, 1 first-above-second, 2 first-below-second.
    pub fn index(self) -> usize {
        match self {
            Self::None => 0,
            Self::Above => 1,
            Self::Below => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// The same relation seen from the other object.
    pub fn reversed(self) -> Self {
        match self {
            Self::None => Self::None,
            Self::Above => Self::Below,
            Self::Below => Self::Above,
        }
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut p = [0.0; 3];
        p[self.index()] = 1.0;
        p
    }
}

/// Relation distributions for every ordered pair of a set of objects.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationMatrix {
    ids: Vec<u32>,
    probs: HashMap<(u32, u32), [f64; 3]>,
}

impl RelationMatrix {
    /// Requires an entry for each of the `n(n-1)` ordered pairs, each summing to one.
    pub fn new(
        ids: &[u32],
        entries: impl IntoIterator<Item = ((u32, u32), [f64; 3])>,
    ) -> Result<Self, ReasoningError> {
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(ReasoningError::DuplicateObject(w[0]));
        }
        let known: BTreeSet<u32> = sorted.iter().copied().collect();
        let mut probs = HashMap::new();
        for ((a, b), p) in entries {
            for id in [a, b] {
                if !known.contains(&id) {
                    return Err(ReasoningError::UnknownObject(id));
                }
            }
            let sum: f64 = p.iter().sum();
            if a == b || p.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(ReasoningError::InvalidProbabilities(a, b));
            }
            probs.insert((a, b), p);
        }
        for &a in &sorted {
            for &b in &sorted {
                if a != b && !probs.contains_key(&(a, b)) {
                    return Err(ReasoningError::MissingPair(a, b));
                }
            }
        }
        Ok(Self { ids: sorted, probs })
    }

    /// Matrix from known labels, given once per unordered pair (missing pairs are `None`).
    pub fn from_labels(ids: &[u32], labels: &[PairLabel]) -> Result<Self, ReasoningError> {
        let mut entries = Vec::new();
        let lookup: HashMap<(u32, u32), RelationLabel> = labels
            .iter()
            .flat_map(|l| [((l.first, l.second), l.relation), ((l.second, l.first), l.relation.reversed())])
            .collect();
        for &a in ids {
            for &b in ids {
                if a != b {
                    let r = lookup.get(&(a, b)).copied().unwrap_or(RelationLabel::None);
                    entries.push(((a, b), r.one_hot()));
                }
            }
        }
        Self::new(ids, entries)
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn get(&self, a: u32, b: u32) -> Option<[f64; 3]> {
        self.probs.get(&(a, b)).copied()
    }

    /// Same matrix restricted to `keep`.
    pub fn restrict(&self, keep: &BTreeSet<u32>) -> Self {
        Self {
            ids: self.ids.iter().copied().filter(|i| keep.contains(i)).collect(),
            probs: self
                .probs
                .iter()
                .filter(|((a, b), _)| keep.contains(a) && keep.contains(b))
                .map(|(k, v)| (*k, *v))
                .collect(),
        }
    }
}

/// Consolidated relation of an unordered pair, stated from `first`'s side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairLabel {
    pub first: u32,
    pub second: u32,
    pub relation: RelationLabel,
    pub confidence: f64,
}

impl PairLabel {
    /// Directed `(above, below)` edge implied by this label, if any.
    pub fn edge(&self) -> Option<(u32, u32)> {
        match self.relation {
            RelationLabel::None => None,
            RelationLabel::Above => Some((self.first, self.second)),
            RelationLabel::Below => Some((self.second, self.first)),
        }
    }
}

/// Scores of the three jointly consistent labelings of a pair, from `a`'s side.
pub fn joint_scores(p_ab: [f64; 3], p_ba: [f64; 3]) -> [f64; 3] {
    [
        (p_ab[0] + p_ba[0]) / 2.0,
        (p_ab[1] + p_ba[2]) / 2.0,
        (p_ab[2] + p_ba[1]) / 2.0,
    ]
}

/// Picks a label from joint scores. Any tie involving the maximum resolves to
/// `None`: a tie between the two directions cannot be oriented.
pub fn decide(scores: [f64; 3]) -> (RelationLabel, f64) {
    let [none, above, below] = scores;
    if above > below && above > none {
        (RelationLabel::Above, above)
    } else if below > above && below > none {
        (RelationLabel::Below, below)
    } else {
        (RelationLabel::None, none.max(above).max(below))
    }
}

/// One label per unordered pair, `first < second`.
pub fn symmetrize(m: &RelationMatrix) -> Vec<PairLabel> {
    let mut out = Vec::new();
    for (i, &a) in m.ids.iter().enumerate() {
        for &b in &m.ids[i + 1..] {
            let (relation, confidence) = decide(joint_scores(m.probs[&(a, b)], m.probs[&(b, a)]));
            out.push(PairLabel {
                first: a,
                second: b,
                relation,
                confidence,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub above: u32,
    pub below: u32,
    pub confidence: f64,
}

/// Directed acyclic graph of "rests on" relations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationGraph {
    pub nodes: Vec<u32>,
    pub edges: Vec<Edge>,
    /// Edges removed to break cycles, in removal order.
    pub deleted: Vec<Edge>,
}

/// Builds the graph and deletes the weakest edge of some cycle until none remain.
pub fn build_graph(nodes: &[u32], labels: &[PairLabel]) -> ManipulationGraph {
    let mut nodes = nodes.to_vec();
    nodes.sort_unstable();
    nodes.dedup();
    let mut edges: Vec<Edge> = labels
        .iter()
        .filter_map(|l| {
            l.edge().map(|(above, below)| Edge {
                above,
                below,
                confidence: l.confidence,
            })
        })
        .collect();
    let mut deleted = Vec::new();
    while let Some(cycle) = find_cycle(&nodes, &edges) {
        // weakest edge, earliest in edge order on ties
        let weakest = cycle
            .iter()
            .copied()
            .min_by(|&a, &b| edges[a].confidence.total_cmp(&edges[b].confidence).then(a.cmp(&b)))
            .expect("cycles have edges");
        deleted.push(edges.remove(weakest));
    }
    ManipulationGraph {
        nodes,
        edges,
        deleted,
    }
}

/// Indices into `edges` forming one directed cycle, if any.
fn find_cycle(nodes: &[u32], edges: &[Edge]) -> Option<Vec<usize>> {
    let mut out: BTreeMap<u32, Vec<usize>> = nodes.iter().map(|&n| (n, Vec::new())).collect();
    for (i, e) in edges.iter().enumerate() {
        out.entry(e.above).or_default().push(i);
    }
    // 0 unvisited, 1 on stack, 2 done
    let mut state: HashMap<u32, u8> = HashMap::new();
    let mut path: Vec<usize> = Vec::new();

    fn dfs(
        n: u32,
        out: &BTreeMap<u32, Vec<usize>>,
        edges: &[Edge],
        state: &mut HashMap<u32, u8>,
        path: &mut Vec<usize>,
    ) -> Option<Vec<usize>> {
        state.insert(n, 1);
        for &ei in out.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
            let next = edges[ei].below;
            match state.get(&next).copied().unwrap_or(0) {
                1 => {
                    let start = path
                        .iter()
                        .position(|&pe| edges[pe].above == next)
                        .unwrap_or(path.len());
                    let mut cycle = path[start..].to_vec();
                    cycle.push(ei);
                    return Some(cycle);
                }
                0 => {
                    path.push(ei);
                    if let Some(c) = dfs(next, out, edges, state, path) {
                        return Some(c);
                    }
                    path.pop();
                }
                _ => {}
            }
        }
        state.insert(n, 2);
        None
    }

    for &n in out.keys() {
        if state.get(&n).copied().unwrap_or(0) == 0 {
            if let Some(c) = dfs(n, &out, edges, &mut state, &mut path) {
                return Some(c);
            }
        }
    }
    None
}

impl ManipulationGraph {
    /// Nodes with nothing resting on them.
    pub fn leaves(&self) -> BTreeSet<u32> {
        let covered: BTreeSet<u32> = self.edges.iter().map(|e| e.below).collect();
        self.nodes.iter().copied().filter(|n| !covered.contains(n)).collect()
    }

    /// Every node with a directed path to `target` (everything transitively on top of it).
    pub fn ancestors(&self, target: u32) -> BTreeSet<u32> {
        let mut found = BTreeSet::new();
        let mut stack = vec![target];
        while let Some(n) = stack.pop() {
            for e in self.edges.iter().filter(|e| e.below == n) {
                if found.insert(e.above) {
                    stack.push(e.above);
                }
            }
        }
        found.remove(&target);
        found
    }

    /// Subgraph induced by `keep`.
    pub fn restrict(&self, keep: &BTreeSet<u32>) -> Self {
        Self {
            nodes: self.nodes.iter().copied().filter(|n| keep.contains(n)).collect(),
            edges: self
                .edges
                .iter()
                .copied()
                .filter(|e| keep.contains(&e.above) && keep.contains(&e.below))
                .collect(),
            deleted: Vec::new(),
        }
    }

    /// Kahn topological order (smallest id first among ready nodes), or `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<u32>> {
        let mut indeg: BTreeMap<u32, usize> = self.nodes.iter().map(|&n| (n, 0)).collect();
        for e in &self.edges {
            *indeg.entry(e.below).or_default() += 1;
        }
        let mut ready: BTreeSet<u32> =
            indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut order = Vec::with_capacity(indeg.len());
        while let Some(n) = ready.pop_first() {
            order.push(n);
            for e in self.edges.iter().filter(|e| e.above == n) {
                let d = indeg.get_mut(&e.below).expect("edge endpoint");
                *d -= 1;
                if *d == 0 {
                    ready.insert(e.below);
                }
            }
        }
        (order.len() == indeg.len()).then_some(order)
    }
}

/// Free-function form of [`ManipulationGraph::leaves`].
pub fn leaves(g: &ManipulationGraph) -> BTreeSet<u32> {
    g.leaves()
}

/// What the planner is asked to retrieve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Category(String),
    Instance(u32),
}

impl std::str::FromStr for Target {
    type Err = std::num::ParseIntError;

    /// `id:<n>` names an instance; anything else is a category.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_prefix("id:") {
            Some(n) => Ok(Target::Instance(n.trim().parse()?)),
            None => Ok(Target::Category(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetResolution {
    pub instance: u32,
    /// Several detections matched the requested category.
    pub ambiguous: bool,
}

/// Finds the detection standing for `target`; categories go to the highest-scoring match.
pub fn resolve_target(detections: &[PerceivedObject], target: &Target) -> Option<TargetResolution> {
    match target {
        Target::Instance(id) => detections
            .iter()
            .any(|d| d.detection.instance_id == *id)
            .then_some(TargetResolution {
                instance: *id,
                ambiguous: false,
            }),
        Target::Category(cat) => {
            let matches: Vec<&PerceivedObject> =
                detections.iter().filter(|d| &d.detection.category == cat).collect();
            best_by_score(matches.iter().copied()).map(|instance| TargetResolution {
                instance,
                ambiguous: matches.len() > 1,
            })
        }
    }
}

/// Highest score wins, then lowest instance id.
fn best_by_score<'a>(it: impl Iterator<Item = &'a PerceivedObject>) -> Option<u32> {
    it.max_by(|a, b| {
        a.detection
            .score
            .total_cmp(&b.detection.score)
            .then(b.detection.instance_id.cmp(&a.detection.instance_id))
    })
    .map(|d| d.detection.instance_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraspAction {
    pub object: u32,
    pub is_final_target: bool,
}

/// Next object to pick up on the way to `target`.
///
/// With the target detected, objects stacked (transitively) on it are cleared
/// first, best-scored leaf first; once nothing is on it the target itself is
/// returned. With the target not detected, the best-scored leaf of the whole
/// scene is moved to uncover it.
pub fn next_action(
    g: &ManipulationGraph,
    detections: &[PerceivedObject],
    target: &Target,
) -> Result<GraspAction, ReasoningError> {
    if detections.is_empty() {
        return Err(ReasoningError::EmptyScene);
    }
    let leaves = g.leaves();
    let in_graph: BTreeSet<u32> = g.nodes.iter().copied().collect();
    let pick = |allowed: &dyn Fn(u32) -> bool| {
        best_by_score(
            detections
                .iter()
                .filter(|d| allowed(d.detection.instance_id)),
        )
    };

    if let Some(res) = resolve_target(detections, target) {
        let above = g.ancestors(res.instance);
        if above.is_empty() {
            return Ok(GraspAction {
                object: res.instance,
                is_final_target: true,
            });
        }
        let object = pick(&|id| above.contains(&id) && leaves.contains(&id))
            .expect("a non-empty ancestor set of a DAG contains a leaf");
        return Ok(GraspAction {
            object,
            is_final_target: false,
        });
    }

    let object = pick(&|id| leaves.contains(&id) || !in_graph.contains(&id))
        .ok_or(ReasoningError::EmptyScene)?;
    Ok(GraspAction {
        object,
        is_final_target: false,
    })
}
