//! Core library: track consolidation into labeled object-detection datasets,
//! detection evaluation metrics, an object-centric scene graph, and plan
//! skeleton construction — plus a synthetic scene generator that makes the
//! whole pipeline verifiable without any upstream models.

pub mod clustering;
pub mod consolidation;
pub mod datasetio;
pub mod evalmetrics;
pub mod geometry;
mod kv;
pub mod planskeleton;
pub mod scenegraph;
pub mod synth;
pub mod trackmodel;

pub use clustering::{ClusterParams, MinSizePolicy, ObjectAssignment, SpatialMetric, TrackLabel};
pub use consolidation::{SalientDataset, SalientItem};
pub use datasetio::{DetectionRecord, GroundTruthRecord};
pub use evalmetrics::MetricsReport;
pub use geometry::{BBox, BitMask, LabelSet};
pub use planskeleton::{FullPlan, SemanticPlan, SkillDefinition, SkillSet};
pub use scenegraph::{FitnessParams, Observation, SceneGraph, SceneNode};
pub use trackmodel::{SeedMask, Track, TrackEntry, TrackSet};
