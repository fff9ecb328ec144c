//! Track-set ingestion: seed masks and the per-frame mask/box tracks an
//! upstream detector+tracker pair produced for one video.
//!
//! The file contract is JSONL: a header line
//! `{"format":"salient-tracks","version":1,...}` followed by one object per
//! seed or track. Loading validates every invariant up front so downstream
//! stages can assume a well-formed [`TrackSet`].

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{mask_to_bbox, BBox, BitMask, GeometryError};

pub const TRACK_FORMAT: &str = "salient-tracks";
pub const TRACK_FORMAT_VERSION: u32 = 1;

/// How far a serialized box may deviate from the box recomputed from its
/// mask before the file is rejected.
const BOX_MASK_TOLERANCE_PX: f64 = 1.0;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unsupported track file format `{0}` (expected `{TRACK_FORMAT}`)")]
    BadFormat(String),
    #[error("unsupported track file version {0} (expected {TRACK_FORMAT_VERSION})")]
    BadVersion(u32),
    #[error("duplicate track id `{0}`")]
    DuplicateTrackId(String),
    #[error("seed {index}: {message}")]
    BadSeed { index: usize, message: String },
    #[error("track `{track_id}`: {message}")]
    BadTrack { track_id: String, message: String },
    #[error("track `{track_id}` frame {frame}: bounding box deviates from its mask by more than {BOX_MASK_TOLERANCE_PX} pixel")]
    BoxMaskMismatch { track_id: String, frame: u32 },
    #[error("frame {frame} out of range for frame_count {frame_count}")]
    FrameOutOfRange { frame: u32, frame_count: u32 },
}

/// Direction metadata carried through from the tracker; consolidation never
/// branches on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
    Unspecified,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Forward => write!(f, "forward"),
            Direction::Backward => write!(f, "backward"),
            Direction::Unspecified => write!(f, "unspecified"),
        }
    }
}

/// A grasp segmentation used to seed tracking at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedMask {
    pub frame: u32,
    pub mask: BitMask,
}

/// One frame of a track. `mask` may be absent for box-only tracker output;
/// when present, `bbox` always equals `mask_to_bbox(mask)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackEntry {
    pub frame: u32,
    pub bbox: BBox,
    pub mask: Option<BitMask>,
}

/// A per-frame sequence of boxes (and usually masks) seeded from one grasp
/// detection. Entries are sorted by strictly increasing frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: String,
    pub seed_frame: u32,
    pub direction: Direction,
    entries: Vec<TrackEntry>,
}

impl Track {
    pub fn entries(&self) -> &[TrackEntry] {
        &self.entries
    }

    pub fn entry_at(&self, frame: u32) -> Option<&TrackEntry> {
        self.entries
            .binary_search_by_key(&frame, |e| e.frame)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn first_frame(&self) -> u32 {
        self.entries[0].frame
    }

    pub fn last_frame(&self) -> u32 {
        self.entries[self.entries.len() - 1].frame
    }
}

/// All seeds and tracks for one video, validated and in canonical order
/// (tracks sorted by id, seeds by frame). Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet {
    pub video_id: String,
    pub frame_count: u32,
    pub width: u32,
    pub height: u32,
    seeds: Vec<SeedMask>,
    tracks: Vec<Track>,
}

/// Raw, not-yet-validated track data handed to [`TrackSet::new`].
#[derive(Debug, Clone)]
pub struct TrackInput {
    pub track_id: String,
    pub seed_frame: u32,
    pub direction: Direction,
    pub entries: Vec<TrackEntry>,
}

impl TrackSet {
    /// Validate and canonicalize. Boxes of mask-bearing entries are
    /// recomputed from the mask; a deviation beyond 1 pixel is an error.
    pub fn new(
        video_id: impl Into<String>,
        frame_count: u32,
        width: u32,
        height: u32,
        mut seeds: Vec<SeedMask>,
        inputs: Vec<TrackInput>,
    ) -> Result<Self, TrackError> {
        for (index, seed) in seeds.iter().enumerate() {
            if seed.frame >= frame_count {
                return Err(TrackError::BadSeed {
                    index,
                    message: format!(
                        "frame {} out of range for frame_count {frame_count}",
                        seed.frame
                    ),
                });
            }
            if seed.mask.width() != width || seed.mask.height() != height {
                return Err(TrackError::BadSeed {
                    index,
                    message: format!(
                        "mask is {}x{}, video is {width}x{height}",
                        seed.mask.width(),
                        seed.mask.height()
                    ),
                });
            }
        }
        seeds.sort_by_key(|s| s.frame);

        let mut tracks = Vec::with_capacity(inputs.len());
        for input in inputs {
            tracks.push(validate_track(input, frame_count, width, height)?);
        }
        tracks.sort_by(|a, b| a.track_id.cmp(&b.track_id));
        let mut seen = BTreeSet::new();
        for track in &tracks {
            if !seen.insert(track.track_id.clone()) {
                return Err(TrackError::DuplicateTrackId(track.track_id.clone()));
            }
        }

        Ok(TrackSet {
            video_id: video_id.into(),
            frame_count,
            width,
            height,
            seeds,
            tracks,
        })
    }

    pub fn seeds(&self) -> &[SeedMask] {
        &self.seeds
    }

    /// Tracks in canonical (track id) order.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn track(&self, track_id: &str) -> Option<&Track> {
        self.tracks
            .binary_search_by(|t| t.track_id.as_str().cmp(track_id))
            .ok()
            .map(|i| &self.tracks[i])
    }

    /// All boxes present at frame `t`, ordered by track id.
    pub fn boxes_at_frame(&self, t: u32) -> Result<Vec<(&str, BBox)>, TrackError> {
        if t >= self.frame_count {
            return Err(TrackError::FrameOutOfRange {
                frame: t,
                frame_count: self.frame_count,
            });
        }
        Ok(self
            .tracks
            .iter()
            .filter_map(|track| {
                track
                    .entry_at(t)
                    .map(|e| (track.track_id.as_str(), e.bbox))
            })
            .collect())
    }

    pub fn total_entries(&self) -> usize {
        self.tracks.iter().map(|t| t.entries.len()).sum()
    }

    /// Canonical JSONL serialization; equal track sets produce equal bytes.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = HeaderLine {
            format: TRACK_FORMAT.to_string(),
            version: TRACK_FORMAT_VERSION,
            video_id: self.video_id.clone(),
            frame_count: self.frame_count,
            width: self.width,
            height: self.height,
        };
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        for seed in &self.seeds {
            let line = RecordLine::Seed {
                frame: seed.frame,
                rle: seed.mask.runs().to_vec(),
            };
            out.push_str(&serde_json::to_string(&line).expect("seed serializes"));
            out.push('\n');
        }
        for track in &self.tracks {
            let line = RecordLine::Track {
                track_id: track.track_id.clone(),
                seed_frame: track.seed_frame,
                direction: match track.direction {
                    Direction::Forward => Some("forward".to_string()),
                    Direction::Backward => Some("backward".to_string()),
                    Direction::Unspecified => None,
                },
                entries: track
                    .entries
                    .iter()
                    .map(|e| EntryLine {
                        frame: e.frame,
                        bbox: e.bbox.corners(),
                        rle: e.mask.as_ref().map(|m| m.runs().to_vec()),
                    })
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&line).expect("track serializes"));
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical serialization, used for dataset provenance.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_jsonl().as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TrackError> {
        let mut lines = text.lines().enumerate();
        let (_, header_line) = lines.next().ok_or(TrackError::Malformed {
            line: 1,
            message: "empty file; expected a header line".to_string(),
        })?;
        let header: HeaderLine =
            serde_json::from_str(header_line).map_err(|e| TrackError::Malformed {
                line: 1,
                message: e.to_string(),
            })?;
        if header.format != TRACK_FORMAT {
            return Err(TrackError::BadFormat(header.format));
        }
        if header.version != TRACK_FORMAT_VERSION {
            return Err(TrackError::BadVersion(header.version));
        }

        let mut seeds = Vec::new();
        let mut inputs = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: RecordLine =
                serde_json::from_str(line).map_err(|e| TrackError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
            match record {
                RecordLine::Seed { frame, rle } => {
                    let mask = BitMask::from_runs(header.width, header.height, rle)
                        .map_err(|e| geometry_at_line(line_no, e))?;
                    seeds.push(SeedMask { frame, mask });
                }
                RecordLine::Track {
                    track_id,
                    seed_frame,
                    direction,
                    entries,
                } => {
                    let direction = match direction.as_deref() {
                        None => Direction::Unspecified,
                        Some("forward") => Direction::Forward,
                        Some("backward") => Direction::Backward,
                        Some(other) => {
                            return Err(TrackError::Malformed {
                                line: line_no,
                                message: format!("unknown direction `{other}`"),
                            })
                        }
                    };
                    let mut track_entries = Vec::with_capacity(entries.len());
                    for entry in entries {
                        let bbox = BBox::new(
                            entry.bbox[0],
                            entry.bbox[1],
                            entry.bbox[2],
                            entry.bbox[3],
                        )
                        .map_err(|e| geometry_at_line(line_no, e))?;
                        let mask = entry
                            .rle
                            .map(|runs| BitMask::from_runs(header.width, header.height, runs))
                            .transpose()
                            .map_err(|e| geometry_at_line(line_no, e))?;
                        track_entries.push(TrackEntry {
                            frame: entry.frame,
                            bbox,
                            mask,
                        });
                    }
                    inputs.push(TrackInput {
                        track_id,
                        seed_frame,
                        direction,
                        entries: track_entries,
                    });
                }
            }
        }

        TrackSet::new(
            header.video_id,
            header.frame_count,
            header.width,
            header.height,
            seeds,
            inputs,
        )
    }
}

fn geometry_at_line(line: usize, e: GeometryError) -> TrackError {
    TrackError::Malformed {
        line,
        message: e.to_string(),
    }
}

fn validate_track(
    input: TrackInput,
    frame_count: u32,
    width: u32,
    height: u32,
) -> Result<Track, TrackError> {
    let TrackInput {
        track_id,
        seed_frame,
        direction,
        entries,
    } = input;
    let bad = |message: String| TrackError::BadTrack {
        track_id: track_id.clone(),
        message,
    };

    if entries.is_empty() {
        return Err(bad("track has no entries".to_string()));
    }
    if seed_frame >= frame_count {
        return Err(bad(format!(
            "seed_frame {seed_frame} out of range for frame_count {frame_count}"
        )));
    }

    let mut checked = Vec::with_capacity(entries.len());
    let mut previous_frame: Option<u32> = None;
    for entry in entries {
        if entry.frame >= frame_count {
            return Err(bad(format!(
                "entry frame {} out of range for frame_count {frame_count}",
                entry.frame
            )));
        }
        if let Some(prev) = previous_frame {
            if entry.frame <= prev {
                return Err(bad(format!(
                    "entry frames must be strictly increasing ({prev} then {})",
                    entry.frame
                )));
            }
        }
        previous_frame = Some(entry.frame);

        let bbox = match &entry.mask {
            Some(mask) => {
                if mask.width() != width || mask.height() != height {
                    return Err(bad(format!(
                        "entry frame {}: mask is {}x{}, video is {width}x{height}",
                        entry.frame,
                        mask.width(),
                        mask.height()
                    )));
                }
                let derived = mask_to_bbox(mask).ok_or_else(|| {
                    bad(format!("entry frame {}: mask is empty", entry.frame))
                })?;
                let deviation = entry
                    .bbox
                    .corners()
                    .iter()
                    .zip(derived.corners())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                if deviation > BOX_MASK_TOLERANCE_PX {
                    return Err(TrackError::BoxMaskMismatch {
                        track_id: track_id.clone(),
                        frame: entry.frame,
                    });
                }
                derived
            }
            None => entry.bbox,
        };
        checked.push(TrackEntry {
            frame: entry.frame,
            bbox,
            mask: entry.mask,
        });
    }

    Ok(Track {
        track_id,
        seed_frame,
        direction,
        entries: checked,
    })
}

pub fn load_trackset(path: impl AsRef<Path>) -> Result<TrackSet, TrackError> {
    let text = fs::read_to_string(path)?;
    TrackSet::from_jsonl(&text)
}

pub fn write_trackset(ts: &TrackSet, path: impl AsRef<Path>) -> Result<(), TrackError> {
    fs::write(path, ts.to_jsonl())?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    format: String,
    version: u32,
    video_id: String,
    frame_count: u32,
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
enum RecordLine {
    #[serde(rename = "seed")]
    Seed { frame: u32, rle: Vec<u32> },
    #[serde(rename = "track")]
    Track {
        track_id: String,
        seed_frame: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        direction: Option<String>,
        entries: Vec<EntryLine>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryLine {
    frame: u32,
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rle: Option<Vec<u32>>,
}
