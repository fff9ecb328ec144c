//! Object-centric scene graph for online perception replay: confidence-gated
//! frame integration, acceptance groups, nearest-neighbor entity association,
//! score-ranked queries, and node locking.
//!
//! The asynchronous update loop of a live system is modeled as an ordered
//! observation stream; replaying the same stream always produces an
//! identical graph (node ids are assigned in integration order).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneGraphError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("observation has an empty point cloud")]
    EmptyPointCloud,
    #[error("segmentation score {0} outside [0, 1]")]
    BadSegScore(f64),
    #[error("invalid parameter {name}: {message}")]
    BadParam { name: &'static str, message: String },
    #[error("unknown node id {0}")]
    UnknownNode(u32),
    #[error("label `{label}` already has locked node {locked}; unlock it before locking node {requested}")]
    LockConflict {
        label: String,
        locked: u32,
        requested: u32,
    },
    #[error("label `{0}` appears in more than one acceptance group")]
    DuplicateGroupLabel(String),
    #[error("acceptance group window must be finite and >= 0, got {0}")]
    BadWindow(f64),
}

/// Thresholds and weights for frame fitness, scoring, and association.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessParams {
    /// Scale factor applied to the per-pixel confidence.
    pub alpha: f64,
    /// Minimum segmentation score for a frame to be considered.
    pub seg_threshold: f64,
    /// Minimum per-pixel confidence for a frame to be considered.
    pub pix_threshold: f64,
    /// Score bonus per sighting beyond the first.
    pub sighting_weight: f64,
    /// Minimum nearest-neighbor overlap fraction to merge into a node.
    pub association_overlap: f64,
    /// Neighbor radius in meters for the overlap fraction.
    pub nn_radius: f64,
}

impl Default for FitnessParams {
    fn default() -> Self {
        FitnessParams {
            alpha: 1000.0,
            seg_threshold: 0.3,
            pix_threshold: 10.0,
            sighting_weight: 0.02,
            association_overlap: 0.5,
            nn_radius: 0.02,
        }
    }
}

impl FitnessParams {
    pub fn validate(&self) -> Result<(), SceneGraphError> {
        let positive = [
            ("alpha", self.alpha),
            ("seg_threshold", self.seg_threshold),
            ("pix_threshold", self.pix_threshold),
            ("sighting_weight", self.sighting_weight),
            ("association_overlap", self.association_overlap),
            ("nn_radius", self.nn_radius),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(SceneGraphError::BadParam {
                    name,
                    message: format!("{value} is not a positive finite number"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    /// Unit quaternion `[w, x, y, z]`.
    pub orientation: [f64; 4],
}

impl Pose {
    fn at(position: [f64; 3]) -> Self {
        Pose {
            position,
            orientation: [1.0, 0.0, 0.0, 0.0],
        }
    }
}

/// One segmented sighting: a labeled point cloud with a segmentation score.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub timestamp: f64,
    pub label: String,
    pub seg_score: f64,
    pub points: Vec<[f64; 3]>,
    pub pose: Option<Pose>,
}

impl Observation {
    pub fn new(
        timestamp: f64,
        label: impl Into<String>,
        seg_score: f64,
        points: Vec<[f64; 3]>,
    ) -> Result<Self, SceneGraphError> {
        if !(0.0..=1.0).contains(&seg_score) || seg_score.is_nan() {
            return Err(SceneGraphError::BadSegScore(seg_score));
        }
        Ok(Observation {
            timestamp,
            label: label.into(),
            seg_score,
            points,
            pose: None,
        })
    }
}

/// Labels that must all be sighted within `window` seconds before any of
/// them is integrated. A window of zero requires identical timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceGroup {
    pub labels: Vec<String>,
    pub window: f64,
}

/// Hash grid over points with cell size equal to the query radius, so a
/// radius query only inspects the 27 surrounding cells.
#[derive(Debug, Clone, PartialEq)]
struct PointGrid {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<[f64; 3]>>,
}

impl PointGrid {
    fn new(cell: f64) -> Self {
        PointGrid {
            cell,
            cells: HashMap::new(),
        }
    }

    fn key(&self, p: &[f64; 3]) -> (i64, i64, i64) {
        (
            (p[0] / self.cell).floor() as i64,
            (p[1] / self.cell).floor() as i64,
            (p[2] / self.cell).floor() as i64,
        )
    }

    fn insert(&mut self, p: [f64; 3]) {
        self.cells.entry(self.key(&p)).or_default().push(p);
    }

    fn has_neighbor_within(&self, p: &[f64; 3], radius: f64) -> bool {
        let (cx, cy, cz) = self.key(p);
        let r2 = radius * radius;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(points) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for q in points {
                            let d2 = (p[0] - q[0]).powi(2)
                                + (p[1] - q[1]).powi(2)
                                + (p[2] - q[2]).powi(2);
                            if d2 <= r2 {
                                return true;
                            }
                        }
                    }
                }
            }
        }
        false
    }
}

/// One object instance: best segmentation score, sighting count, aggregated
/// point cloud, and the lock flag.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneNode {
    pub node_id: u32,
    pub label: String,
    pub seg_score: f64,
    pub sightings: u64,
    pub locked: bool,
    points: Vec<[f64; 3]>,
    grid: PointGrid,
    point_sum: [f64; 3],
    supplied_pose: Option<Pose>,
}

impl SceneNode {
    fn from_observation(node_id: u32, obs: Observation, nn_radius: f64) -> Self {
        let mut node = SceneNode {
            node_id,
            label: obs.label,
            seg_score: obs.seg_score,
            sightings: 1,
            locked: false,
            points: Vec::new(),
            grid: PointGrid::new(nn_radius),
            point_sum: [0.0; 3],
            supplied_pose: obs.pose,
        };
        node.absorb_points(obs.points);
        node
    }

    fn absorb_points(&mut self, points: Vec<[f64; 3]>) {
        for p in points {
            self.point_sum[0] += p[0];
            self.point_sum[1] += p[1];
            self.point_sum[2] += p[2];
            self.grid.insert(p);
            self.points.push(p);
        }
    }

    fn merge(&mut self, obs: Observation) {
        self.sightings += 1;
        self.seg_score = self.seg_score.max(obs.seg_score);
        if obs.pose.is_some() {
            self.supplied_pose = obs.pose;
        }
        self.absorb_points(obs.points);
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// The supplied 6D pose when one was observed, otherwise the centroid of
    /// the aggregated cloud with identity orientation.
    pub fn pose(&self) -> Option<Pose> {
        if let Some(pose) = &self.supplied_pose {
            return Some(pose.clone());
        }
        if self.points.is_empty() {
            return None;
        }
        let n = self.points.len() as f64;
        Some(Pose::at([
            self.point_sum[0] / n,
            self.point_sum[1] / n,
            self.point_sum[2] / n,
        ]))
    }
}

/// Per-pixel confidence `seg_score * alpha / sqrt(point_count)`: larger
/// clouds need proportionally higher confidence to pass.
pub fn pixel_confidence(obs: &Observation, params: &FitnessParams) -> Result<f64, SceneGraphError> {
    if obs.points.is_empty() {
        return Err(SceneGraphError::EmptyPointCloud);
    }
    Ok(obs.seg_score * params.alpha / (obs.points.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    SegScore,
    PixelConfidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFit {
    Accept,
    Reject(RejectReason),
}

/// Both thresholds are inclusive; the segmentation gate is checked first.
pub fn frame_fit(obs: &Observation, params: &FitnessParams) -> FrameFit {
    if obs.seg_score < params.seg_threshold {
        return FrameFit::Reject(RejectReason::SegScore);
    }
    match pixel_confidence(obs, params) {
        Ok(pix) if pix >= params.pix_threshold => FrameFit::Accept,
        _ => FrameFit::Reject(RejectReason::PixelConfidence),
    }
}

/// `seg_score + sighting_weight * (sightings - 1)`.
pub fn object_score(node: &SceneNode, params: &FitnessParams) -> f64 {
    node.seg_score + params.sighting_weight * (node.sightings as f64 - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Association {
    Merge(u32),
    NewNode,
}

/// Overlap with each same-label node: the fraction of observation points
/// with a node point within `nn_radius`. Merge into the highest-overlap node
/// (ties to the lowest id) when the overlap reaches the threshold.
pub fn associate(obs: &Observation, graph: &SceneGraph, params: &FitnessParams) -> Association {
    let mut best: Option<(f64, u32)> = None;
    for node in graph.nodes().iter().filter(|n| n.label == obs.label) {
        let hits = obs
            .points
            .iter()
            .filter(|p| node.grid.has_neighbor_within(p, params.nn_radius))
            .count();
        let overlap = if obs.points.is_empty() {
            0.0
        } else {
            hits as f64 / obs.points.len() as f64
        };
        if best.map_or(true, |(b, _)| overlap > b) {
            best = Some((overlap, node.node_id));
        }
    }
    match best {
        Some((overlap, id)) if overlap >= params.association_overlap => Association::Merge(id),
        _ => Association::NewNode,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IntegrationOutcome {
    Rejected(RejectReason),
    /// Held until every label of the observation's acceptance group has an
    /// accepted sighting inside the group window.
    Buffered,
    /// Node ids touched (merged into or created), in integration order.
    Integrated(Vec<u32>),
}

#[derive(Debug, Clone)]
struct PendingObservation {
    arrival: u64,
    obs: Observation,
}

#[derive(Debug, Clone)]
pub struct SceneGraph {
    params: FitnessParams,
    groups: Vec<AcceptanceGroup>,
    nodes: Vec<SceneNode>,
    pending: Vec<Vec<PendingObservation>>,
    arrivals: u64,
}

impl SceneGraph {
    pub fn new(
        groups: Vec<AcceptanceGroup>,
        params: FitnessParams,
    ) -> Result<Self, SceneGraphError> {
        params.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for group in &groups {
            if !(group.window >= 0.0) || !group.window.is_finite() {
                return Err(SceneGraphError::BadWindow(group.window));
            }
            for label in &group.labels {
                if !seen.insert(label.clone()) {
                    return Err(SceneGraphError::DuplicateGroupLabel(label.clone()));
                }
            }
        }
        let pending = groups.iter().map(|_| Vec::new()).collect();
        Ok(SceneGraph {
            params,
            groups,
            nodes: Vec::new(),
            pending,
            arrivals: 0,
        })
    }

    pub fn params(&self) -> &FitnessParams {
        &self.params
    }

    pub fn nodes(&self) -> &[SceneNode] {
        &self.nodes
    }

    pub fn node(&self, node_id: u32) -> Option<&SceneNode> {
        self.nodes.get(node_id as usize)
    }

    fn group_of(&self, label: &str) -> Option<usize> {
        self.groups
            .iter()
            .position(|g| g.labels.iter().any(|l| l == label))
    }

    /// Feed one observation through fitness gating, group acceptance, and
    /// entity association.
    pub fn integrate(&mut self, obs: Observation) -> IntegrationOutcome {
        if let FrameFit::Reject(reason) = frame_fit(&obs, &self.params) {
            return IntegrationOutcome::Rejected(reason);
        }
        let Some(group_idx) = self.group_of(&obs.label) else {
            let id = self.integrate_now(obs);
            return IntegrationOutcome::Integrated(vec![id]);
        };

        let anchor = obs.timestamp;
        self.arrivals += 1;
        self.pending[group_idx].push(PendingObservation {
            arrival: self.arrivals,
            obs,
        });

        // One candidate per group label: the pending sighting with the
        // latest timestamp inside [anchor - window, anchor] (ties broken by
        // earliest arrival). All labels present triggers integration of
        // exactly one observation per label.
        let window = self.groups[group_idx].window;
        let mut selected: Vec<usize> = Vec::with_capacity(self.groups[group_idx].labels.len());
        for label in &self.groups[group_idx].labels {
            let candidate = self.pending[group_idx]
                .iter()
                .enumerate()
                .filter(|(_, p)| {
                    p.obs.label == *label
                        && p.obs.timestamp >= anchor - window
                        && p.obs.timestamp <= anchor
                })
                .max_by(|(_, a), (_, b)| {
                    a.obs
                        .timestamp
                        .partial_cmp(&b.obs.timestamp)
                        .expect("finite timestamps")
                        .then(b.arrival.cmp(&a.arrival))
                })
                .map(|(i, _)| i);
            match candidate {
                Some(i) => selected.push(i),
                None => return IntegrationOutcome::Buffered,
            }
        }

        selected.sort_unstable();
        let mut chosen: Vec<PendingObservation> = selected
            .into_iter()
            .rev()
            .map(|i| self.pending[group_idx].remove(i))
            .collect();
        chosen.sort_by(|a, b| {
            a.obs
                .timestamp
                .partial_cmp(&b.obs.timestamp)
                .expect("finite timestamps")
                .then(a.arrival.cmp(&b.arrival))
        });
        let ids = chosen
            .into_iter()
            .map(|p| self.integrate_now(p.obs))
            .collect();
        IntegrationOutcome::Integrated(ids)
    }

    fn integrate_now(&mut self, obs: Observation) -> u32 {
        match associate(&obs, self, &self.params) {
            Association::Merge(id) => {
                self.nodes[id as usize].merge(obs);
                id
            }
            Association::NewNode => {
                let id = self.nodes.len() as u32;
                self.nodes
                    .push(SceneNode::from_observation(id, obs, self.params.nn_radius));
                id
            }
        }
    }

    /// The representative node for a label: the locked node when one exists,
    /// otherwise the highest object score (ties to the lowest node id).
    pub fn query(&self, label: &str) -> Option<&SceneNode> {
        let same_label = self.nodes.iter().filter(|n| n.label == label);
        if let Some(locked) = same_label.clone().find(|n| n.locked) {
            return Some(locked);
        }
        same_label.fold(None, |best: Option<&SceneNode>, node| match best {
            None => Some(node),
            Some(b) => {
                if object_score(node, &self.params) > object_score(b, &self.params) {
                    Some(node)
                } else {
                    Some(b)
                }
            }
        })
    }

    /// At most one node per label may hold the lock.
    pub fn lock(&mut self, node_id: u32) -> Result<(), SceneGraphError> {
        let label = self
            .node(node_id)
            .ok_or(SceneGraphError::UnknownNode(node_id))?
            .label
            .clone();
        if let Some(existing) = self
            .nodes
            .iter()
            .find(|n| n.label == label && n.locked && n.node_id != node_id)
        {
            return Err(SceneGraphError::LockConflict {
                label,
                locked: existing.node_id,
                requested: node_id,
            });
        }
        self.nodes[node_id as usize].locked = true;
        Ok(())
    }

    pub fn unlock(&mut self, node_id: u32) -> Result<(), SceneGraphError> {
        self.nodes
            .get_mut(node_id as usize)
            .ok_or(SceneGraphError::UnknownNode(node_id))?
            .locked = false;
        Ok(())
    }

    pub fn dump(&self) -> GraphDump {
        GraphDump {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDump {
                    node_id: n.node_id,
                    label: n.label.clone(),
                    seg_score: n.seg_score,
                    sightings: n.sightings,
                    score: object_score(n, &self.params),
                    point_count: n.point_count(),
                    locked: n.locked,
                    pose: n.pose(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub nodes: Vec<NodeDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDump {
    pub node_id: u32,
    pub label: String,
    pub seg_score: f64,
    pub sightings: u64,
    pub score: f64,
    pub point_count: usize,
    pub locked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Pose>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum StreamLine {
    Directive {
        directive: String,
        node_id: u32,
    },
    Observation {
        t: f64,
        label: String,
        seg_score: f64,
        points: Vec<[f64; 3]>,
        #[serde(default)]
        pose: Option<Pose>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplaySummary {
    pub observations: usize,
    pub integrated: usize,
    pub buffered: usize,
    pub rejected: usize,
    pub directives: usize,
}

/// Replay a JSONL observation stream into the graph. Lines are either
/// observations `{t, label, seg_score, points, pose?}` or directives
/// `{"directive": "lock" | "unlock", "node_id": n}`.
pub fn replay_stream(graph: &mut SceneGraph, text: &str) -> Result<ReplaySummary, SceneGraphError> {
    let mut summary = ReplaySummary::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: StreamLine =
            serde_json::from_str(raw).map_err(|e| SceneGraphError::Malformed {
                line,
                message: e.to_string(),
            })?;
        match parsed {
            StreamLine::Directive { directive, node_id } => {
                summary.directives += 1;
                match directive.as_str() {
                    "lock" => graph.lock(node_id)?,
                    "unlock" => graph.unlock(node_id)?,
                    other => {
                        return Err(SceneGraphError::Malformed {
                            line,
                            message: format!("unknown directive `{other}`"),
                        })
                    }
                }
            }
            StreamLine::Observation {
                t,
                label,
                seg_score,
                points,
                pose,
            } => {
                summary.observations += 1;
                let mut obs =
                    Observation::new(t, label, seg_score, points).map_err(|e| {
                        SceneGraphError::Malformed {
                            line,
                            message: e.to_string(),
                        }
                    })?;
                obs.pose = pose;
                match graph.integrate(obs) {
                    IntegrationOutcome::Integrated(ids) => summary.integrated += ids.len(),
                    IntegrationOutcome::Buffered => summary.buffered += 1,
                    IntegrationOutcome::Rejected(_) => summary.rejected += 1,
                }
            }
        }
    }
    Ok(summary)
}

/// Acceptance groups file: a JSON array of `{labels: [...], window: seconds}`.
pub fn parse_groups(text: &str) -> Result<Vec<AcceptanceGroup>, SceneGraphError> {
    serde_json::from_str(text).map_err(|e| SceneGraphError::Malformed {
        line: 0,
        message: e.to_string(),
    })
}

pub fn load_groups(path: impl AsRef<Path>) -> Result<Vec<AcceptanceGroup>, SceneGraphError> {
    parse_groups(&fs::read_to_string(path)?)
}
