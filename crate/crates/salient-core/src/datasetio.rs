//! Dataset serialization: a COCO-style annotation file for the salient-objects
//! dataset (the detector-training interface) and readers for detection /
//! ground-truth records used by evaluation.
//!
//! Output is byte-stable: struct field order fixes the key order and numbers
//! use the shortest round-trip decimal representation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusterParams;
use crate::consolidation::{Provenance, SalientDataset, SalientItem};
use crate::geometry::{mask_to_bbox, BBox, BitMask, GeometryError};

#[derive(Debug, Error)]
pub enum DatasetIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> DatasetIoError {
    DatasetIoError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

/// One detection to score: a box with a confidence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub image_id: i64,
    pub category_id: i64,
    pub bbox: BBox,
    pub score: f64,
}

/// One annotated ground-truth box.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    pub image_id: i64,
    pub category_id: i64,
    pub bbox: BBox,
}

#[derive(Serialize, Deserialize)]
struct CocoFile {
    info: InfoSection,
    images: Vec<ImageRecord>,
    annotations: Vec<AnnotationRecord>,
    categories: Vec<CategoryRecord>,
}

#[derive(Serialize, Deserialize)]
struct InfoSection {
    video_id: String,
    width: u32,
    height: u32,
    label_count: u32,
    provenance: ProvenanceSection,
}

#[derive(Serialize, Deserialize)]
struct ProvenanceSection {
    params: ClusterParams,
    track_hash: String,
}

#[derive(Serialize, Deserialize)]
struct ImageRecord {
    id: u32,
    width: u32,
    height: u32,
    file_name: String,
}

#[derive(Serialize, Deserialize)]
struct AnnotationRecord {
    id: u32,
    image_id: u32,
    category_id: u32,
    bbox: [f64; 4],
    area: f64,
    iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segmentation: Option<RleRecord>,
}

#[derive(Serialize, Deserialize)]
struct RleRecord {
    /// `[height, width]`
    size: [u32; 2],
    counts: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct CategoryRecord {
    id: u32,
    name: String,
}

fn dataset_to_file(ds: &SalientDataset) -> CocoFile {
    let mut image_ids: Vec<u32> = ds.items.iter().map(|i| i.frame).collect();
    image_ids.sort_unstable();
    image_ids.dedup();
    CocoFile {
        info: InfoSection {
            video_id: ds.video_id.clone(),
            width: ds.width,
            height: ds.height,
            label_count: ds.label_count,
            provenance: ProvenanceSection {
                params: ds.provenance.params.clone(),
                track_hash: ds.provenance.track_hash.clone(),
            },
        },
        images: image_ids
            .iter()
            .map(|&frame| ImageRecord {
                id: frame,
                width: ds.width,
                height: ds.height,
                file_name: format!("frame_{frame:06}.png"),
            })
            .collect(),
        annotations: ds
            .items
            .iter()
            .enumerate()
            .map(|(idx, item)| AnnotationRecord {
                id: idx as u32,
                image_id: item.frame,
                category_id: item.label,
                bbox: item.bbox.to_xywh(),
                area: item
                    .mask
                    .as_ref()
                    .map(|m| m.count_ones() as f64)
                    .unwrap_or_else(|| item.bbox.area()),
                iscrowd: 0,
                segmentation: item.mask.as_ref().map(|m| RleRecord {
                    size: [m.height(), m.width()],
                    counts: m.runs().to_vec(),
                }),
            })
            .collect(),
        categories: (0..ds.label_count)
            .map(|label| CategoryRecord {
                id: label,
                name: format!("object_{label}"),
            })
            .collect(),
    }
}

/// Serialize a dataset to its canonical JSON text.
pub fn dataset_to_json(ds: &SalientDataset) -> String {
    let mut text = serde_json::to_string(&dataset_to_file(ds)).expect("dataset serializes");
    text.push('\n');
    text
}

pub fn write_dataset(ds: &SalientDataset, path: impl AsRef<Path>) -> Result<(), DatasetIoError> {
    fs::write(path, dataset_to_json(ds))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<SalientDataset, DatasetIoError> {
    dataset_from_json(&fs::read_to_string(path)?)
}

pub fn dataset_from_json(text: &str) -> Result<SalientDataset, DatasetIoError> {
    let file: CocoFile = serde_json::from_str(text)?;
    let mut items = Vec::with_capacity(file.annotations.len());
    let mut previous: Option<(u32, u32)> = None;
    for (idx, ann) in file.annotations.iter().enumerate() {
        let at = format!("annotations[{idx}]");
        if ann.category_id >= file.info.label_count {
            return Err(invalid(
                format!("{at}.category_id"),
                format!(
                    "label {} out of range for label_count {}",
                    ann.category_id, file.info.label_count
                ),
            ));
        }
        let bbox = BBox::from_xywh(ann.bbox[0], ann.bbox[1], ann.bbox[2], ann.bbox[3])
            .map_err(|e| invalid(format!("{at}.bbox"), e.to_string()))?;
        let mask = match &ann.segmentation {
            None => None,
            Some(rle) => {
                let mask = BitMask::from_runs(rle.size[1], rle.size[0], rle.counts.clone())
                    .map_err(|e| invalid(format!("{at}.segmentation"), e.to_string()))?;
                let tight = mask_to_bbox(&mask).ok_or_else(|| {
                    invalid(format!("{at}.segmentation"), "mask is empty")
                })?;
                if tight != bbox {
                    return Err(invalid(
                        format!("{at}.bbox"),
                        "bbox does not equal the tight box of the segmentation",
                    ));
                }
                Some(mask)
            }
        };
        let key = (ann.image_id, ann.category_id);
        if previous.is_some_and(|p| p >= key) {
            return Err(invalid(
                at,
                "annotations must be sorted by (image_id, category_id) with one item per pair",
            ));
        }
        previous = Some(key);
        items.push(SalientItem {
            frame: ann.image_id,
            label: ann.category_id,
            bbox,
            mask,
        });
    }
    Ok(SalientDataset {
        video_id: file.info.video_id,
        width: file.info.width,
        height: file.info.height,
        label_count: file.info.label_count,
        items,
        provenance: Provenance {
            params: file.info.provenance.params,
            track_hash: file.info.provenance.track_hash,
        },
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionJson {
    image_id: i64,
    category_id: i64,
    bbox: [f64; 4],
    score: f64,
}

fn parse_box(at: &str, xywh: [f64; 4]) -> Result<BBox, DatasetIoError> {
    if !(xywh[2] > 0.0) {
        return Err(invalid(format!("{at}.bbox"), "width must be > 0"));
    }
    if !(xywh[3] > 0.0) {
        return Err(invalid(format!("{at}.bbox"), "height must be > 0"));
    }
    BBox::from_xywh(xywh[0], xywh[1], xywh[2], xywh[3])
        .map_err(|e| invalid(format!("{at}.bbox"), e.to_string()))
}

/// Read a COCO results-format file: a JSON array of
/// `{image_id, category_id, bbox:[x,y,w,h], score}` objects.
pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>, DatasetIoError> {
    detections_from_json(&fs::read_to_string(path)?)
}

pub fn detections_from_json(text: &str) -> Result<Vec<DetectionRecord>, DatasetIoError> {
    let raw: Vec<DetectionJson> = serde_json::from_str(text)?;
    let mut records = Vec::with_capacity(raw.len());
    for (idx, det) in raw.into_iter().enumerate() {
        let at = format!("[{idx}]");
        if !(0.0..=1.0).contains(&det.score) || det.score.is_nan() {
            return Err(invalid(
                format!("{at}.score"),
                format!("{} outside [0, 1]", det.score),
            ));
        }
        records.push(DetectionRecord {
            image_id: det.image_id,
            category_id: det.category_id,
            bbox: parse_box(&at, det.bbox)?,
            score: det.score,
        });
    }
    Ok(records)
}

#[derive(Deserialize)]
struct GroundTruthFile {
    annotations: Vec<GroundTruthJson>,
}

#[derive(Deserialize)]
struct GroundTruthJson {
    image_id: i64,
    category_id: i64,
    bbox: [f64; 4],
}

/// Read ground truth from a COCO-style file; only the `annotations` array is
/// consumed.
pub fn read_groundtruth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthRecord>, DatasetIoError> {
    groundtruth_from_json(&fs::read_to_string(path)?)
}

pub fn groundtruth_from_json(text: &str) -> Result<Vec<GroundTruthRecord>, DatasetIoError> {
    let file: GroundTruthFile = serde_json::from_str(text)?;
    let mut records = Vec::with_capacity(file.annotations.len());
    for (idx, gt) in file.annotations.into_iter().enumerate() {
        let at = format!("annotations[{idx}]");
        records.push(GroundTruthRecord {
            image_id: gt.image_id,
            category_id: gt.category_id,
            bbox: parse_box(&at, gt.bbox)?,
        });
    }
    Ok(records)
}

/// Detection categories that never occur in the ground truth; permitted, but
/// callers should surface them.
pub fn unknown_categories(dets: &[DetectionRecord], gts: &[GroundTruthRecord]) -> Vec<i64> {
    let known: std::collections::BTreeSet<i64> = gts.iter().map(|g| g.category_id).collect();
    let mut unknown: Vec<i64> = dets
        .iter()
        .map(|d| d.category_id)
        .filter(|c| !known.contains(c))
        .collect();
    unknown.sort_unstable();
    unknown.dedup();
    unknown
}
