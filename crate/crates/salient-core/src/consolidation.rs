//! Final consolidation stage: per-frame, per-object mask aggregation by
//! majority pixel vote, and assembly of the labeled salient-objects dataset.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::clustering::{
    build_cluster_tracks, spatial_cluster, temporal_cluster, ClusterError, ClusterParams,
    ObjectAssignment, TrackLabel,
};
use crate::geometry::{mask_to_bbox, BBox, BitMask, GeometryError};
use crate::trackmodel::TrackSet;

#[derive(Debug, Error)]
pub enum ConsolidationError {
    #[error("no masks to aggregate")]
    EmptyAggregation,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("assignment references unknown track `{0}`")]
    UnknownTrack(String),
    #[error("track `{0}` has no object assignment")]
    UncoveredTrack(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

/// One annotated frame/object pair. `mask` is absent when every member entry
/// was box-only; otherwise `bbox == mask_to_bbox(mask)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SalientItem {
    pub frame: u32,
    pub label: u32,
    pub bbox: BBox,
    pub mask: Option<BitMask>,
}

/// Where a dataset came from: the clustering parameters and the hash of the
/// canonical track serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub params: ClusterParams,
    pub track_hash: String,
}

/// The labeled detection dataset produced from one video.
#[derive(Debug, Clone, PartialEq)]
pub struct SalientDataset {
    pub video_id: String,
    pub width: u32,
    pub height: u32,
    pub label_count: u32,
    /// Sorted by `(frame, label)`; at most one item per pair.
    pub items: Vec<SalientItem>,
    pub provenance: Provenance,
}

/// Majority pixel vote: a pixel survives when it is set in at least 50% of
/// the input masks, i.e. in `ceil(n / 2)` of them. With two masks this keeps
/// the union; with three, pixels present in at least two.
pub fn aggregate_masks(masks: &[&BitMask]) -> Result<BitMask, ConsolidationError> {
    let n = masks.len();
    if n == 0 {
        return Err(ConsolidationError::EmptyAggregation);
    }
    let (width, height) = (masks[0].width(), masks[0].height());
    for m in &masks[1..] {
        if m.width() != width || m.height() != height {
            return Err(GeometryError::SizeMismatch(width, height, m.width(), m.height()).into());
        }
    }
    if n == 1 {
        return Ok(masks[0].clone());
    }
    let threshold = n.div_ceil(2) as i32;

    // Difference array over the flattened grid: O(total runs + pixels).
    let size = width as usize * height as usize;
    let mut diff = vec![0i32; size + 1];
    for m in masks {
        for (start, len) in m.spans() {
            diff[start as usize] += 1;
            diff[(start + len) as usize] -= 1;
        }
    }
    let mut runs: Vec<u32> = Vec::new();
    let mut votes = 0i32;
    let mut run_start: Option<usize> = None;
    let mut previous_end = 0usize;
    for (i, d) in diff.iter().enumerate().take(size) {
        votes += d;
        match (votes >= threshold, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                runs.push((s - previous_end) as u32);
                runs.push((i - s) as u32);
                previous_end = i;
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        runs.push((s - previous_end) as u32);
        runs.push((size - s) as u32);
    }
    Ok(BitMask::from_runs(width, height, runs).expect("vote scan emits canonical runs"))
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Coordinate-wise median box; used when an object has only box entries at a
/// frame. Pointwise validity of the inputs guarantees a valid result.
fn median_box(boxes: &[BBox]) -> BBox {
    let pick = |f: fn(&BBox) -> f64| median(boxes.iter().map(f).collect());
    BBox::new(
        pick(|b| b.x_min()),
        pick(|b| b.y_min()),
        pick(|b| b.x_max()),
        pick(|b| b.y_max()),
    )
    .expect("median of valid boxes is valid")
}

/// Build the dataset for a track set under a finished object assignment.
///
/// For every frame and object label, member masks are vote-aggregated; when
/// no member has a mask the box fallback is the coordinate-wise median.
/// Frame/label pairs with no member entries, or whose vote empties the mask,
/// produce no item.
pub fn assemble_dataset(
    ts: &TrackSet,
    asg: &ObjectAssignment,
    params: &ClusterParams,
) -> Result<SalientDataset, ConsolidationError> {
    for track in ts.tracks() {
        if asg.label(&track.track_id).is_none() {
            return Err(ConsolidationError::UncoveredTrack(track.track_id.clone()));
        }
    }
    let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (track_id, label) in asg.iter() {
        let index = ts
            .tracks()
            .binary_search_by(|t| t.track_id.as_str().cmp(track_id))
            .map_err(|_| ConsolidationError::UnknownTrack(track_id.to_string()))?;
        if let TrackLabel::Object(object) = label {
            members.entry(object).or_default().push(index);
        }
    }

    // One work unit per (label, frame) with at least one member entry.
    let mut units: Vec<(u32, u32, Vec<usize>)> = Vec::new();
    for (label, track_indices) in &members {
        let mut frames: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for &idx in track_indices {
            for entry in ts.tracks()[idx].entries() {
                frames.entry(entry.frame).or_default().push(idx);
            }
        }
        for (frame, indices) in frames {
            units.push((*label, frame, indices));
        }
    }

    let mut items: Vec<SalientItem> = units
        .par_iter()
        .filter_map(|(label, frame, indices)| {
            let entries: Vec<&crate::trackmodel::TrackEntry> = indices
                .iter()
                .map(|&idx| {
                    ts.tracks()[idx]
                        .entry_at(*frame)
                        .expect("unit built from entry frames")
                })
                .collect();
            let masks: Vec<&BitMask> =
                entries.iter().filter_map(|e| e.mask.as_ref()).collect();
            if masks.is_empty() {
                let boxes: Vec<BBox> = entries.iter().map(|e| e.bbox).collect();
                return Some(SalientItem {
                    frame: *frame,
                    label: *label,
                    bbox: median_box(&boxes),
                    mask: None,
                });
            }
            let mask = aggregate_masks(&masks).expect("masks share video dimensions");
            let bbox = mask_to_bbox(&mask)?; // empty vote: no item
            Some(SalientItem {
                frame: *frame,
                label: *label,
                bbox,
                mask: Some(mask),
            })
        })
        .collect();
    items.sort_by_key(|item| (item.frame, item.label));

    Ok(SalientDataset {
        video_id: ts.video_id.clone(),
        width: ts.width,
        height: ts.height,
        label_count: asg.label_count(),
        items,
        provenance: Provenance {
            params: params.clone(),
            track_hash: ts.content_hash(),
        },
    })
}

/// What consolidation decided, alongside the dataset itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsolidateSummary {
    pub object_count: u32,
    pub discarded: Vec<String>,
    pub assignment: ObjectAssignment,
}

/// Run the full consolidation pipeline: per-frame spatial clustering,
/// cluster-track construction, temporal grouping, and dataset assembly.
pub fn consolidate(
    ts: &TrackSet,
    params: &ClusterParams,
) -> Result<(SalientDataset, ConsolidateSummary), ConsolidationError> {
    let fcm = spatial_cluster(ts, params)?;
    let cluster_tracks = build_cluster_tracks(ts, &fcm)?;
    let assignment = temporal_cluster(&cluster_tracks, params)?;
    let dataset = assemble_dataset(ts, &assignment, params)?;
    let summary = ConsolidateSummary {
        object_count: assignment.label_count(),
        discarded: assignment
            .discarded()
            .into_iter()
            .map(str::to_string)
            .collect(),
        assignment,
    };
    Ok((dataset, summary))
}
