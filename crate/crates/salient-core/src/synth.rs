//! Synthetic scene generation and partition scoring: fabricated objects on
//! piecewise-linear trajectories, multi-seeded jittered tracks, spurious
//! random-walk tracks, and purity / adjusted-Rand / discard-rate scoring so
//! consolidation correctness is verifiable without any upstream model.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::clustering::{ObjectAssignment, TrackLabel};
use crate::geometry::{iou_bbox, mask_to_bbox, BBox, BitMask};
use crate::kv::{parse_key_values, KvError};
use crate::trackmodel::{Direction, SeedMask, TrackEntry, TrackError, TrackInput, TrackSet};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("assignment and ground truth cover different tracks (`{0}`)")]
    CoverageMismatch(String),
    #[error(transparent)]
    Track(#[from] TrackError),
}

/// Frames `[from, to)` during which every track of one object has no entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occlusion {
    pub object: u32,
    pub from: u32,
    pub to: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub object_count: u32,
    pub frame_count: u32,
    pub width: u32,
    pub height: u32,
    pub seeds_per_object: u32,
    /// Standard deviation of the per-frame box center jitter, in pixels.
    /// Jittered boxes are redrawn until they keep IoU >= 0.6 with the truth.
    pub jitter: f64,
    pub spurious_count: u32,
    pub spurious_max_length: u32,
    pub occlusions: Vec<Occlusion>,
    pub emit_masks: bool,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            object_count: 2,
            frame_count: 60,
            width: 320,
            height: 240,
            seeds_per_object: 1,
            jitter: 0.0,
            spurious_count: 0,
            spurious_max_length: 4,
            occlusions: Vec::new(),
            emit_masks: true,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::BadConfig(m));
        if self.object_count < 1 {
            return bad("object_count must be >= 1".into());
        }
        if self.frame_count < 2 {
            return bad("frame_count must be >= 2".into());
        }
        if self.width < 32 || self.height < 32 {
            return bad("canvas must be at least 32x32".into());
        }
        if self.seeds_per_object < 1 {
            return bad("seeds_per_object must be >= 1".into());
        }
        if !(self.jitter >= 0.0) || !self.jitter.is_finite() {
            return bad(format!("jitter must be >= 0, got {}", self.jitter));
        }
        for occ in &self.occlusions {
            if occ.object >= self.object_count || occ.from >= occ.to || occ.to > self.frame_count {
                return bad(format!(
                    "occlusion {}:{}-{} out of range",
                    occ.object, occ.from, occ.to
                ));
            }
        }
        Ok(())
    }
}

/// Which scene to fabricate: the hand-built crossing scene or a configured
/// random one.
#[derive(Debug, Clone, PartialEq)]
pub enum SynthSpec {
    Crossing,
    Scene(SynthConfig),
}

/// Parse the plain-text `key = value` scene config. `preset = crossing`
/// selects the hand-built crossing scene and allows no other keys.
pub fn parse_synth_config(text: &str) -> Result<SynthSpec, SynthError> {
    let map = parse_key_values(text)?;
    if let Some(preset) = map.get("preset") {
        if map.len() > 1 {
            return Err(SynthError::BadConfig(
                "preset configs take no other keys".into(),
            ));
        }
        return match preset.as_str() {
            "crossing" => Ok(SynthSpec::Crossing),
            other => Err(SynthError::BadConfig(format!("unknown preset `{other}`"))),
        };
    }

    let mut cfg = SynthConfig::default();
    for (key, value) in &map {
        let parse_u32 = || -> Result<u32, SynthError> {
            value
                .parse()
                .map_err(|e| SynthError::BadConfig(format!("{key}: {e}")))
        };
        match key.as_str() {
            "objects" => cfg.object_count = parse_u32()?,
            "frames" => cfg.frame_count = parse_u32()?,
            "width" => cfg.width = parse_u32()?,
            "height" => cfg.height = parse_u32()?,
            "seeds_per_object" => cfg.seeds_per_object = parse_u32()?,
            "spurious" => cfg.spurious_count = parse_u32()?,
            "spurious_max_length" => cfg.spurious_max_length = parse_u32()?,
            "jitter" => {
                cfg.jitter = value
                    .parse()
                    .map_err(|e| SynthError::BadConfig(format!("jitter: {e}")))?
            }
            "seed" => {
                cfg.rng_seed = value
                    .parse()
                    .map_err(|e| SynthError::BadConfig(format!("seed: {e}")))?
            }
            "masks" => {
                cfg.emit_masks = match value.as_str() {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(SynthError::BadConfig(format!(
                            "masks must be true or false, got `{other}`"
                        )))
                    }
                }
            }
            "occlusion" => {
                for part in value.split(',') {
                    let parsed = part
                        .split_once(':')
                        .and_then(|(obj, range)| {
                            let (from, to) = range.split_once('-')?;
                            Some(Occlusion {
                                object: obj.trim().parse().ok()?,
                                from: from.trim().parse().ok()?,
                                to: to.trim().parse().ok()?,
                            })
                        })
                        .ok_or_else(|| {
                            SynthError::BadConfig(format!(
                                "occlusion entries look like `object:from-to`, got `{part}`"
                            ))
                        })?;
                    cfg.occlusions.push(parsed);
                }
            }
            other => return Err(SynthError::BadConfig(format!("unknown key `{other}`"))),
        }
    }
    Ok(SynthSpec::Scene(cfg))
}

/// True origin of each generated track.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackOrigin {
    Object(u32),
    Spurious,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    origins: BTreeMap<String, TrackOrigin>,
}

impl GroundTruth {
    pub fn origin(&self, track_id: &str) -> Option<TrackOrigin> {
        self.origins.get(track_id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, TrackOrigin)> {
        self.origins.iter().map(|(id, o)| (id.as_str(), *o))
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

fn stream_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over a stream-offset seed
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// The entry for one frame of a synthetic track: the true box jittered,
/// clamped to the canvas, and rasterized when masks are on.
fn synth_entry(
    frame: u32,
    truth: &BBox,
    jitter: f64,
    emit_masks: bool,
    width: u32,
    height: u32,
    rng: &mut ChaCha8Rng,
) -> TrackEntry {
    let mut bbox = *truth;
    if jitter > 0.0 {
        for _ in 0..16 {
            let dx = sample_normal(rng) * jitter;
            let dy = sample_normal(rng) * jitter;
            let shift_x = dx
                .max(-truth.x_min())
                .min(width as f64 - truth.x_max());
            let shift_y = dy
                .max(-truth.y_min())
                .min(height as f64 - truth.y_max());
            let candidate = BBox::new(
                truth.x_min() + shift_x,
                truth.y_min() + shift_y,
                truth.x_max() + shift_x,
                truth.y_max() + shift_y,
            )
            .expect("translation preserves validity");
            if iou_bbox(&candidate, truth) >= 0.6 {
                bbox = candidate;
                break;
            }
        }
    }
    if emit_masks {
        let mask = rasterize_box(&bbox, width, height);
        TrackEntry {
            frame,
            bbox: mask_to_bbox(&mask).expect("rasterized box is nonempty"),
            mask: Some(mask),
        }
    } else {
        TrackEntry {
            frame,
            bbox,
            mask: None,
        }
    }
}

fn rasterize_box(bbox: &BBox, width: u32, height: u32) -> BitMask {
    let x0 = bbox.x_min().round().max(0.0) as u32;
    let y0 = bbox.y_min().round().max(0.0) as u32;
    let mut x1 = (bbox.x_max().round() as u32).min(width);
    let mut y1 = (bbox.y_max().round() as u32).min(height);
    if x1 <= x0 {
        x1 = (x0 + 1).min(width);
    }
    if y1 <= y0 {
        y1 = (y0 + 1).min(height);
    }
    BitMask::filled_rect(width, height, x0.min(x1 - 1), y0.min(y1 - 1), x1, y1)
}

/// Generate a deterministic synthetic scene. Objects travel piecewise-linear
/// paths inside disjoint horizontal lanes; every seed yields a forward and a
/// backward track over the full video with independent jitter streams, so
/// regenerating with the same seed is byte-identical and per-track streams
/// make parallel generation order-independent.
pub fn generate(cfg: &SynthConfig) -> Result<(TrackSet, GroundTruth), SynthError> {
    cfg.validate()?;
    let (w, h, t_count) = (cfg.width as f64, cfg.height as f64, cfg.frame_count);
    let lane_h = h / cfg.object_count as f64;
    let box_size = (lane_h * 0.6).clamp(10.0, 80.0).min(w / 3.0);

    let trajectories: Vec<Vec<BBox>> = (0..cfg.object_count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.rng_seed, k as u64));
            let margin = box_size / 2.0 + 2.0;
            let waypoints: Vec<f64> = (0..4).map(|_| rng.random_range(margin..w - margin)).collect();
            let cy = (k as f64 + 0.5) * lane_h;
            (0..t_count)
                .map(|t| {
                    let pos = t as f64 / (t_count - 1) as f64 * (waypoints.len() - 1) as f64;
                    let i = (pos.floor() as usize).min(waypoints.len() - 2);
                    let frac = pos - i as f64;
                    let cx = waypoints[i] * (1.0 - frac) + waypoints[i + 1] * frac;
                    BBox::new(
                        cx - box_size / 2.0,
                        cy - box_size / 2.0,
                        cx + box_size / 2.0,
                        cy + box_size / 2.0,
                    )
                    .expect("lane boxes are valid")
                })
                .collect()
        })
        .collect();

    let seed_frame_for = |j: u32| -> u32 {
        (((j as u64 + 1) * t_count as u64) / (cfg.seeds_per_object as u64 + 1))
            .min(t_count as u64 - 1) as u32
    };

    let occluded = |k: u32, frame: u32| {
        cfg.occlusions
            .iter()
            .any(|o| o.object == k && frame >= o.from && frame < o.to)
    };

    // (track id, origin, stream, seed frame, direction, object index)
    struct TrackPlan {
        id: String,
        object: u32,
        seed_frame: u32,
        direction: Direction,
        stream: u64,
    }
    let mut plans = Vec::new();
    for k in 0..cfg.object_count {
        for j in 0..cfg.seeds_per_object {
            for (d, direction) in [(0u64, Direction::Forward), (1, Direction::Backward)] {
                plans.push(TrackPlan {
                    id: format!(
                        "obj{k:02}_s{j:02}_{}",
                        if d == 0 { 'f' } else { 'b' }
                    ),
                    object: k,
                    seed_frame: seed_frame_for(j),
                    direction,
                    stream: 1_000_000 + (k as u64) * 10_000 + (j as u64) * 2 + d,
                });
            }
        }
    }

    let mut inputs: Vec<TrackInput> = plans
        .par_iter()
        .map(|plan| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.rng_seed, plan.stream));
            let entries: Vec<TrackEntry> = (0..t_count)
                .filter(|&t| !occluded(plan.object, t))
                .map(|t| {
                    synth_entry(
                        t,
                        &trajectories[plan.object as usize][t as usize],
                        cfg.jitter,
                        cfg.emit_masks,
                        cfg.width,
                        cfg.height,
                        &mut rng,
                    )
                })
                .collect();
            TrackInput {
                track_id: plan.id.clone(),
                seed_frame: plan.seed_frame,
                direction: plan.direction,
                entries,
            }
        })
        .collect();

    let mut origins: BTreeMap<String, TrackOrigin> = plans
        .iter()
        .map(|p| (p.id.clone(), TrackOrigin::Object(p.object)))
        .collect();

    for i in 0..cfg.spurious_count {
        let mut rng =
            ChaCha8Rng::seed_from_u64(stream_seed(cfg.rng_seed, 2_000_000 + i as u64));
        let max_len = cfg.spurious_max_length.max(2).min(t_count);
        let len = rng.random_range(2..=max_len);
        let start = rng.random_range(0..=(t_count - len));
        let size = (box_size * 0.8).max(8.0);
        let mut cx = rng.random_range(size / 2.0..w - size / 2.0);
        let mut cy = rng.random_range(size / 2.0..h - size / 2.0);
        let mut entries = Vec::with_capacity(len as usize);
        for frame in start..start + len {
            cx = (cx + rng.random_range(-15.0..15.0)).clamp(size / 2.0, w - size / 2.0);
            cy = (cy + rng.random_range(-15.0..15.0)).clamp(size / 2.0, h - size / 2.0);
            let truth = BBox::new(cx - size / 2.0, cy - size / 2.0, cx + size / 2.0, cy + size / 2.0)
                .expect("walk stays on canvas");
            entries.push(synth_entry(
                frame,
                &truth,
                0.0,
                cfg.emit_masks,
                cfg.width,
                cfg.height,
                &mut rng,
            ));
        }
        let id = format!("spur{i:03}");
        origins.insert(id.clone(), TrackOrigin::Spurious);
        inputs.push(TrackInput {
            track_id: id,
            seed_frame: start,
            direction: Direction::Unspecified,
            entries,
        });
    }

    let mut seeds = Vec::with_capacity((cfg.object_count * cfg.seeds_per_object) as usize);
    for k in 0..cfg.object_count {
        for j in 0..cfg.seeds_per_object {
            let frame = seed_frame_for(j);
            seeds.push(SeedMask {
                frame,
                mask: rasterize_box(
                    &trajectories[k as usize][frame as usize],
                    cfg.width,
                    cfg.height,
                ),
            });
        }
    }

    let ts = TrackSet::new(
        format!("synth-{:016x}", cfg.rng_seed),
        cfg.frame_count,
        cfg.width,
        cfg.height,
        seeds,
        inputs,
    )?;
    Ok((ts, GroundTruth { origins }))
}

/// The hand-built crossing scene: two objects sharing one lane whose paths
/// coincide at exactly one frame, three tracks for the first object (one of
/// them missing the final frame), two for the second, and one two-frame
/// spurious track off in a corner.
pub fn crossing_scene() -> (TrackSet, GroundTruth) {
    let (width, height) = (320u32, 240u32);
    let size = 48.0;
    let y0 = 96.0;
    let a_box = |t: u32| {
        let x = 40.0 + 40.0 * t as f64;
        BBox::new(x, y0, x + size, y0 + size).unwrap()
    };
    let b_box = |t: u32| {
        let x = 200.0 - 40.0 * t as f64;
        BBox::new(x, y0, x + size, y0 + size).unwrap()
    };
    let noise_box = BBox::new(10.0, 10.0, 58.0, 58.0).unwrap();

    let entry = |t: u32, bbox: &BBox| {
        let mask = rasterize_box(bbox, width, height);
        TrackEntry {
            frame: t,
            bbox: mask_to_bbox(&mask).unwrap(),
            mask: Some(mask),
        }
    };
    let track = |id: &str, seed_frame: u32, direction: Direction, frames: &[u32], at: &dyn Fn(u32) -> BBox| {
        TrackInput {
            track_id: id.into(),
            seed_frame,
            direction,
            entries: frames.iter().map(|&t| entry(t, &at(t))).collect(),
        }
    };

    let inputs = vec![
        track("a0_fwd", 0, Direction::Forward, &[0, 1, 2, 3, 4], &a_box),
        track("a0_bwd", 0, Direction::Backward, &[0, 1, 2, 3, 4], &a_box),
        track("a1_fwd", 1, Direction::Forward, &[0, 1, 2, 3], &a_box),
        track("b0_fwd", 3, Direction::Forward, &[0, 1, 2, 3, 4], &b_box),
        track("b0_bwd", 3, Direction::Backward, &[0, 1, 2, 3, 4], &b_box),
        track("noise0", 1, Direction::Unspecified, &[1, 2], &|_| noise_box),
    ];
    let seeds = vec![
        SeedMask {
            frame: 0,
            mask: rasterize_box(&a_box(0), width, height),
        },
        SeedMask {
            frame: 1,
            mask: rasterize_box(&a_box(1), width, height),
        },
        SeedMask {
            frame: 3,
            mask: rasterize_box(&b_box(3), width, height),
        },
    ];
    let ts = TrackSet::new("crossing", 5, width, height, seeds, inputs).unwrap();
    let origins = [
        ("a0_fwd", TrackOrigin::Object(0)),
        ("a0_bwd", TrackOrigin::Object(0)),
        ("a1_fwd", TrackOrigin::Object(0)),
        ("b0_fwd", TrackOrigin::Object(1)),
        ("b0_bwd", TrackOrigin::Object(1)),
        ("noise0", TrackOrigin::Spurious),
    ]
    .into_iter()
    .map(|(id, o)| (id.to_string(), o))
    .collect();
    (ts, GroundTruth { origins })
}

pub fn generate_spec(spec: &SynthSpec) -> Result<(TrackSet, GroundTruth), SynthError> {
    match spec {
        SynthSpec::Crossing => Ok(crossing_scene()),
        SynthSpec::Scene(cfg) => generate(cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionScore {
    /// Fraction of non-spurious tracks whose predicted object's majority
    /// true object matches their own; discarded real tracks count against.
    pub purity: f64,
    /// Adjusted Rand index over non-spurious tracks, with each discarded
    /// track counted as its own singleton cluster.
    pub adjusted_rand: f64,
    /// Fraction of spurious tracks the pipeline discarded (1.0 when the
    /// scene has none).
    pub spurious_discard_rate: f64,
}

fn comb2(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

fn adjusted_rand_index(pairs: &[(u32, u32)]) -> f64 {
    if pairs.len() < 2 {
        return 1.0;
    }
    let mut contingency: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut a_counts: BTreeMap<u32, u64> = BTreeMap::new();
    let mut b_counts: BTreeMap<u32, u64> = BTreeMap::new();
    for &(a, b) in pairs {
        *contingency.entry((a, b)).or_insert(0) += 1;
        *a_counts.entry(a).or_insert(0) += 1;
        *b_counts.entry(b).or_insert(0) += 1;
    }
    let sum_comb: f64 = contingency.values().map(|&n| comb2(n)).sum();
    let sum_a: f64 = a_counts.values().map(|&n| comb2(n)).sum();
    let sum_b: f64 = b_counts.values().map(|&n| comb2(n)).sum();
    let expected = sum_a * sum_b / comb2(pairs.len() as u64);
    let max_index = (sum_a + sum_b) / 2.0;
    if max_index == expected {
        return 1.0;
    }
    (sum_comb - expected) / (max_index - expected)
}

/// Score a consolidation result against the generator's ground truth.
pub fn score_partition(
    asg: &ObjectAssignment,
    gt: &GroundTruth,
) -> Result<PartitionScore, SynthError> {
    for (id, _) in gt.iter() {
        if asg.label(id).is_none() {
            return Err(SynthError::CoverageMismatch(id.to_string()));
        }
    }
    if asg.track_count() != gt.len() {
        let extra = asg
            .iter()
            .map(|(id, _)| id)
            .find(|id| gt.origin(id).is_none())
            .unwrap_or("<count mismatch>");
        return Err(SynthError::CoverageMismatch(extra.to_string()));
    }

    // Majority true object per predicted cluster, voted by non-spurious
    // members (ties to the smallest object id via BTreeMap order).
    let mut votes: BTreeMap<u32, BTreeMap<u32, usize>> = BTreeMap::new();
    for (id, origin) in gt.iter() {
        if let (TrackOrigin::Object(true_obj), Some(TrackLabel::Object(pred))) =
            (origin, asg.label(id))
        {
            *votes.entry(pred).or_default().entry(true_obj).or_insert(0) += 1;
        }
    }
    let majority: BTreeMap<u32, u32> = votes
        .iter()
        .map(|(&pred, counts)| {
            let best = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&obj, _)| obj)
                .expect("vote maps are nonempty");
            (pred, best)
        })
        .collect();

    let mut real_total = 0usize;
    let mut pure = 0usize;
    let mut ari_pairs: Vec<(u32, u32)> = Vec::new();
    let mut next_singleton = asg.label_count();
    let mut spurious_total = 0usize;
    let mut spurious_discarded = 0usize;
    for (id, origin) in gt.iter() {
        let label = asg.label(id).expect("coverage checked");
        match origin {
            TrackOrigin::Object(true_obj) => {
                real_total += 1;
                let pred = match label {
                    TrackLabel::Object(pred) => {
                        if majority[&pred] == true_obj {
                            pure += 1;
                        }
                        pred
                    }
                    TrackLabel::Discarded => {
                        let singleton = next_singleton;
                        next_singleton += 1;
                        singleton
                    }
                };
                ari_pairs.push((true_obj, pred));
            }
            TrackOrigin::Spurious => {
                spurious_total += 1;
                if label == TrackLabel::Discarded {
                    spurious_discarded += 1;
                }
            }
        }
    }

    Ok(PartitionScore {
        purity: if real_total == 0 {
            1.0
        } else {
            pure as f64 / real_total as f64
        },
        adjusted_rand: adjusted_rand_index(&ari_pairs),
        spurious_discard_rate: if spurious_total == 0 {
            1.0
        } else {
            spurious_discarded as f64 / spurious_total as f64
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::ClusterParams;
    use crate::consolidation::consolidate;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            spurious_count: 2,
            jitter: 1.5,
            ..SynthConfig::default()
        };
        let (a, _) = generate(&cfg).unwrap();
        let (b, _) = generate(&cfg).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());

        let other = SynthConfig {
            rng_seed: 1,
            ..cfg.clone()
        };
        let (c, _) = generate(&other).unwrap();
        assert_ne!(a.to_jsonl(), c.to_jsonl());
    }

    #[test]
    fn noise_free_tracks_duplicate_their_object() {
        let cfg = SynthConfig {
            object_count: 2,
            frame_count: 20,
            ..SynthConfig::default()
        };
        let (ts, gt) = generate(&cfg).unwrap();
        assert_eq!(ts.tracks().len(), 4);
        assert_eq!(gt.len(), 4);
        // Forward and backward tracks of one seed are identical without
        // jitter.
        let fwd = ts.track("obj00_s00_f").unwrap();
        let bwd = ts.track("obj00_s00_b").unwrap();
        assert_eq!(fwd.entries(), bwd.entries());
    }

    #[test]
    fn crossing_scene_reproduces_the_expected_pattern() {
        let (ts, gt) = crossing_scene();
        assert_eq!(ts.tracks().len(), 6);
        assert_eq!(ts.seeds().len(), 3);

        // The two object paths coincide exactly at the middle frame.
        let a = ts.track("a0_fwd").unwrap().entry_at(2).unwrap().bbox;
        let b = ts.track("b0_fwd").unwrap().entry_at(2).unwrap().bbox;
        assert_eq!(iou_bbox(&a, &b), 1.0);
        let a1 = ts.track("a0_fwd").unwrap().entry_at(1).unwrap().bbox;
        let b1 = ts.track("b0_fwd").unwrap().entry_at(1).unwrap().bbox;
        assert_eq!(iou_bbox(&a1, &b1), 0.0);

        let (_, summary) = consolidate(&ts, &ClusterParams::default()).unwrap();
        assert_eq!(summary.object_count, 2);
        assert_eq!(summary.discarded, vec!["noise0".to_string()]);
        let score = score_partition(&summary.assignment, &gt).unwrap();
        assert_eq!(score.purity, 1.0);
        assert_eq!(score.adjusted_rand, 1.0);
        assert_eq!(score.spurious_discard_rate, 1.0);
    }

    #[test]
    fn ari_closed_forms() {
        // Identical partitions.
        assert_eq!(adjusted_rand_index(&[(0, 0), (0, 0), (1, 1), (1, 1)]), 1.0);
        // Everything predicted as one cluster over two equal true objects.
        let pairs = [(0, 0), (0, 0), (1, 0), (1, 0)];
        assert_eq!(adjusted_rand_index(&pairs), 0.0);
    }

    #[test]
    fn score_cases() {
        let cfg = SynthConfig {
            object_count: 3,
            frame_count: 30,
            seeds_per_object: 2,
            ..SynthConfig::default()
        };
        let (ts, gt) = generate(&cfg).unwrap();
        let (_, summary) = consolidate(&ts, &ClusterParams::default()).unwrap();
        let score = score_partition(&summary.assignment, &gt).unwrap();
        assert_eq!(score.purity, 1.0);
        assert_eq!(score.adjusted_rand, 1.0);

        // Coverage mismatch is an error.
        let (other_ts, _) = generate(&SynthConfig {
            object_count: 1,
            ..cfg.clone()
        })
        .unwrap();
        let (_, other_summary) = consolidate(&other_ts, &ClusterParams::default()).unwrap();
        assert!(matches!(
            score_partition(&other_summary.assignment, &gt),
            Err(SynthError::CoverageMismatch(_))
        ));
    }

    #[test]
    fn config_parsing() {
        let spec = parse_synth_config("preset = crossing\n").unwrap();
        assert_eq!(spec, SynthSpec::Crossing);

        let spec = parse_synth_config(
            "objects = 3\nframes = 40\njitter = 2.0\nspurious = 4\nmasks = false\nseed = 9\nocclusion = 0:5-8,1:10-12\n",
        )
        .unwrap();
        match spec {
            SynthSpec::Scene(cfg) => {
                assert_eq!(cfg.object_count, 3);
                assert_eq!(cfg.frame_count, 40);
                assert_eq!(cfg.jitter, 2.0);
                assert_eq!(cfg.spurious_count, 4);
                assert!(!cfg.emit_masks);
                assert_eq!(cfg.rng_seed, 9);
                assert_eq!(
                    cfg.occlusions,
                    vec![
                        Occlusion {
                            object: 0,
                            from: 5,
                            to: 8
                        },
                        Occlusion {
                            object: 1,
                            from: 10,
                            to: 12
                        }
                    ]
                );
            }
            other => panic!("unexpected spec {other:?}"),
        }

        assert!(parse_synth_config("bogus = 1\n").is_err());
        assert!(parse_synth_config("preset = nope\n").is_err());
        assert!(parse_synth_config("preset = crossing\nobjects = 2\n").is_err());
    }

    #[test]
    fn occlusions_drop_entries() {
        let cfg = SynthConfig {
            object_count: 1,
            frame_count: 10,
            occlusions: vec![Occlusion {
                object: 0,
                from: 3,
                to: 6,
            }],
            ..SynthConfig::default()
        };
        let (ts, _) = generate(&cfg).unwrap();
        let track = ts.track("obj00_s00_f").unwrap();
        assert_eq!(track.entries().len(), 7);
        assert!(track.entry_at(4).is_none());
    }
}
