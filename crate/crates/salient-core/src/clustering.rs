//! Track consolidation clustering: generic density-based clustering, per-frame
//! spatial grouping of boxes by IoU, cluster-track construction, and temporal
//! grouping of tracks by Jaccard similarity over frame-qualified labels.
//!
//! All operations iterate items in ascending track-id/index order and assign
//! cluster ids in discovery order, so results are deterministic and
//! independent of internal parallelism.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou_bbox, iou_mask, LabelSet};
use crate::trackmodel::{TrackError, TrackSet};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid parameter {name}: {message}")]
    BadParam { name: &'static str, message: String },
    #[error("seed-ratio minimum cluster size requires at least one seed mask; configure a fixed minimum size instead")]
    NoSeeds,
    #[error("frame cluster map does not match the track set (expected track `{expected}`, found `{found}`)")]
    MismatchedTracks { expected: String, found: String },
    #[error(transparent)]
    Track(#[from] TrackError),
}

/// DBSCAN output for one item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Assignment {
    Cluster(u32),
    Noise,
}

/// Classic DBSCAN over a pairwise distance oracle.
///
/// A point is core when at least `min_samples` points (itself included) lie
/// within `eps`. Clusters are maximal density-connected sets of core points
/// plus any non-core point within `eps` of one of them; everything else is
/// noise. Iteration is in index order, so cluster ids follow discovery order
/// and a border point reachable from two clusters joins the one whose seed
/// core has the lowest index.
pub fn dbscan(
    n: usize,
    dist: impl Fn(usize, usize) -> f64,
    eps: f64,
    min_samples: usize,
) -> Vec<Assignment> {
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist(i, j) <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|ns| ns.len() >= min_samples).collect();

    let mut labels = vec![Assignment::Noise; n];
    let mut assigned = vec![false; n];
    let mut cluster = 0u32;
    for seed in 0..n {
        if !core[seed] || assigned[seed] {
            continue;
        }
        assigned[seed] = true;
        labels[seed] = Assignment::Cluster(cluster);
        let mut queue = VecDeque::from([seed]);
        while let Some(point) = queue.pop_front() {
            for &next in &neighbors[point] {
                if assigned[next] {
                    continue;
                }
                assigned[next] = true;
                labels[next] = Assignment::Cluster(cluster);
                if core[next] {
                    queue.push_back(next);
                }
            }
        }
        cluster += 1;
    }
    labels
}

/// Policy for the per-frame DBSCAN minimum cluster size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinSizePolicy {
    /// `max(1, boxes_in_frame / (2 * seed_count))`: the expected number of
    /// tracks per object given forward+backward tracking from every seed.
    SeedRatio,
    Fixed(usize),
}

/// Distance metric for per-frame spatial clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialMetric {
    BBoxIou,
    /// Segmentation IoU; entries without masks fall back to box IoU.
    MaskIou,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub spatial_eps: f64,
    pub temporal_eps: f64,
    pub temporal_min_size: usize,
    pub spatial_min_size: MinSizePolicy,
    pub spatial_metric: SpatialMetric,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            spatial_eps: 0.4,
            temporal_eps: 0.4,
            temporal_min_size: 2,
            spatial_min_size: MinSizePolicy::SeedRatio,
            spatial_metric: SpatialMetric::BBoxIou,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<(), ClusterError> {
        let check_eps = |name: &'static str, value: f64| {
            if value > 0.0 && value <= 1.0 {
                Ok(())
            } else {
                Err(ClusterError::BadParam {
                    name,
                    message: format!("{value} is outside (0, 1]"),
                })
            }
        };
        check_eps("spatial_eps", self.spatial_eps)?;
        check_eps("temporal_eps", self.temporal_eps)?;
        if self.temporal_min_size < 1 {
            return Err(ClusterError::BadParam {
                name: "temporal_min_size",
                message: "must be at least 1".to_string(),
            });
        }
        if let MinSizePolicy::Fixed(k) = self.spatial_min_size {
            if k < 1 {
                return Err(ClusterError::BadParam {
                    name: "spatial_min_size",
                    message: "fixed minimum size must be at least 1".to_string(),
                });
            }
        }
        Ok(())
    }
}

/// A frame-qualified spatial cluster identity. Labels from different frames
/// never compare equal, and noise assignments get per-track singletons so
/// they dilute Jaccard unions without ever creating intersections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClusterLabel {
    Shared { frame: u32, cluster: u32 },
    Singleton { frame: u32, track: u32 },
}

impl fmt::Display for ClusterLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterLabel::Shared { frame, cluster } => write!(f, "F{frame}C{cluster}"),
            ClusterLabel::Singleton { frame, track } => write!(f, "F{frame}N{track}"),
        }
    }
}

/// Per-frame spatial cluster assignments for every (track, frame) with a box.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameClusterMap {
    track_ids: Vec<String>,
    frames: BTreeMap<u32, Vec<(usize, Assignment)>>,
}

impl FrameClusterMap {
    pub fn track_ids(&self) -> &[String] {
        &self.track_ids
    }

    pub fn assignment(&self, frame: u32, track_id: &str) -> Option<Assignment> {
        let idx = self.track_ids.iter().position(|id| id == track_id)?;
        self.frames
            .get(&frame)?
            .iter()
            .find(|(i, _)| *i == idx)
            .map(|(_, a)| *a)
    }

    /// Frames that have at least one assignment.
    pub fn frames(&self) -> impl Iterator<Item = (u32, &[(usize, Assignment)])> {
        self.frames.iter().map(|(f, v)| (*f, v.as_slice()))
    }

    pub fn cluster_count(&self, frame: u32) -> usize {
        self.frames
            .get(&frame)
            .map(|v| {
                v.iter()
                    .filter_map(|(_, a)| match a {
                        Assignment::Cluster(c) => Some(*c),
                        Assignment::Noise => None,
                    })
                    .max()
                    .map(|m| m as usize + 1)
                    .unwrap_or(0)
            })
            .unwrap_or(0)
    }
}

/// The per-frame minimum cluster size under the seed-ratio policy:
/// `max(1, |boxes at t| / (2 * |seeds|))`.
pub fn spatial_min_size(ts: &TrackSet, t: u32) -> Result<usize, ClusterError> {
    if ts.seeds().is_empty() {
        return Err(ClusterError::NoSeeds);
    }
    let boxes = ts.boxes_at_frame(t)?.len();
    Ok((boxes / (2 * ts.seeds().len())).max(1))
}

/// Cluster every frame's boxes with DBSCAN over `1 - IoU`.
pub fn spatial_cluster(
    ts: &TrackSet,
    params: &ClusterParams,
) -> Result<FrameClusterMap, ClusterError> {
    params.validate()?;
    if matches!(params.spatial_min_size, MinSizePolicy::SeedRatio)
        && ts.seeds().is_empty()
        && !ts.tracks().is_empty()
    {
        return Err(ClusterError::NoSeeds);
    }

    let track_ids: Vec<String> = ts.tracks().iter().map(|t| t.track_id.clone()).collect();
    let frames: BTreeMap<u32, Vec<(usize, Assignment)>> = (0..ts.frame_count)
        .into_par_iter()
        .filter_map(|frame| {
            let items: Vec<(usize, &crate::trackmodel::TrackEntry)> = ts
                .tracks()
                .iter()
                .enumerate()
                .filter_map(|(i, track)| track.entry_at(frame).map(|e| (i, e)))
                .collect();
            if items.is_empty() {
                return None;
            }
            let min_samples = match params.spatial_min_size {
                MinSizePolicy::Fixed(k) => k,
                MinSizePolicy::SeedRatio => (items.len() / (2 * ts.seeds().len())).max(1),
            };
            let dist = |a: usize, b: usize| {
                let (ea, eb) = (items[a].1, items[b].1);
                let similarity = match params.spatial_metric {
                    SpatialMetric::BBoxIou => iou_bbox(&ea.bbox, &eb.bbox),
                    SpatialMetric::MaskIou => match (&ea.mask, &eb.mask) {
                        (Some(ma), Some(mb)) => {
                            iou_mask(ma, mb).expect("track masks share video dimensions")
                        }
                        _ => iou_bbox(&ea.bbox, &eb.bbox),
                    },
                };
                1.0 - similarity
            };
            let labels = dbscan(items.len(), dist, params.spatial_eps, min_samples);
            Some((
                frame,
                items
                    .iter()
                    .zip(labels)
                    .map(|((i, _), a)| (*i, a))
                    .collect(),
            ))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();

    Ok(FrameClusterMap { track_ids, frames })
}

/// The frame-qualified labels one track traverses.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTrack {
    pub track_id: String,
    pub seed_frame: u32,
    pub labels: LabelSet<ClusterLabel>,
}

/// One cluster track per track, in track order. Noise assignments become
/// singleton labels unique to their (track, frame).
pub fn build_cluster_tracks(
    ts: &TrackSet,
    fcm: &FrameClusterMap,
) -> Result<Vec<ClusterTrack>, ClusterError> {
    for (track, id) in ts.tracks().iter().zip(fcm.track_ids()) {
        if track.track_id != *id {
            return Err(ClusterError::MismatchedTracks {
                expected: track.track_id.clone(),
                found: id.clone(),
            });
        }
    }
    if ts.tracks().len() != fcm.track_ids().len() {
        return Err(ClusterError::MismatchedTracks {
            expected: format!("{} tracks", ts.tracks().len()),
            found: format!("{} tracks", fcm.track_ids().len()),
        });
    }

    let mut by_track: Vec<LabelSet<ClusterLabel>> =
        (0..ts.tracks().len()).map(|_| LabelSet::new()).collect();
    for (frame, assignments) in fcm.frames() {
        for (track_idx, assignment) in assignments {
            let label = match assignment {
                Assignment::Cluster(c) => ClusterLabel::Shared { frame, cluster: *c },
                Assignment::Noise => ClusterLabel::Singleton {
                    frame,
                    track: *track_idx as u32,
                },
            };
            by_track[*track_idx].insert(label);
        }
    }

    Ok(ts
        .tracks()
        .iter()
        .zip(by_track)
        .map(|(track, labels)| ClusterTrack {
            track_id: track.track_id.clone(),
            seed_frame: track.seed_frame,
            labels,
        })
        .collect())
}

/// Final track-to-object partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrackLabel {
    Object(u32),
    Discarded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAssignment {
    assignments: BTreeMap<String, TrackLabel>,
    label_count: u32,
}

impl ObjectAssignment {
    pub fn label(&self, track_id: &str) -> Option<TrackLabel> {
        self.assignments.get(track_id).copied()
    }

    pub fn label_count(&self) -> u32 {
        self.label_count
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, TrackLabel)> {
        self.assignments.iter().map(|(id, l)| (id.as_str(), *l))
    }

    pub fn members(&self, object: u32) -> Vec<&str> {
        self.iter()
            .filter(|(_, l)| *l == TrackLabel::Object(object))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn discarded(&self) -> Vec<&str> {
        self.iter()
            .filter(|(_, l)| *l == TrackLabel::Discarded)
            .map(|(id, _)| id)
            .collect()
    }

    pub fn track_count(&self) -> usize {
        self.assignments.len()
    }
}

/// Group cluster tracks with DBSCAN over Jaccard distance; noise tracks are
/// discarded. Object labels are renumbered `0..K` by the earliest seed frame
/// among member tracks (ties by smallest member id), so the numbering is
/// independent of input order.
pub fn temporal_cluster(
    cts: &[ClusterTrack],
    params: &ClusterParams,
) -> Result<ObjectAssignment, ClusterError> {
    params.validate()?;
    let dist = |a: usize, b: usize| cts[a].labels.jaccard_distance(&cts[b].labels);
    let raw = dbscan(cts.len(), dist, params.temporal_eps, params.temporal_min_size);

    // (earliest seed frame, smallest member id) per raw cluster
    let mut order: BTreeMap<u32, (u32, &str)> = BTreeMap::new();
    for (ct, assignment) in cts.iter().zip(&raw) {
        if let Assignment::Cluster(c) = assignment {
            let entry = order
                .entry(*c)
                .or_insert((ct.seed_frame, ct.track_id.as_str()));
            *entry = (*entry).min((ct.seed_frame, ct.track_id.as_str()));
        }
    }
    let mut ranked: Vec<(u32, (u32, &str))> = order.into_iter().collect();
    ranked.sort_by(|a, b| a.1.cmp(&b.1));
    let renumbered: BTreeMap<u32, u32> = ranked
        .iter()
        .enumerate()
        .map(|(new, (raw_id, _))| (*raw_id, new as u32))
        .collect();

    let assignments = cts
        .iter()
        .zip(&raw)
        .map(|(ct, assignment)| {
            let label = match assignment {
                Assignment::Cluster(c) => TrackLabel::Object(renumbered[c]),
                Assignment::Noise => TrackLabel::Discarded,
            };
            (ct.track_id.clone(), label)
        })
        .collect();

    Ok(ObjectAssignment {
        assignments,
        label_count: renumbered.len() as u32,
    })
}
