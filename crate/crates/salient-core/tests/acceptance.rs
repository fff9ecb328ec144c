//! Acceptance suite: one test per release criterion, each printed as its own
//! pass/fail line. Expected values come from independent oracles implemented
//! here (brute-force density closure, naive metric reference, pixel-level
//! enumeration), never from the code paths under test.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use salient_core::clustering::{
    build_cluster_tracks, dbscan, spatial_cluster, Assignment, ClusterLabel, ClusterParams,
    TrackLabel,
};
use salient_core::consolidation::{aggregate_masks, consolidate};
use salient_core::datasetio::{
    dataset_from_json, dataset_to_json, DetectionRecord, GroundTruthRecord,
};
use salient_core::evalmetrics::{average_precision, evaluate, MetricsReport, IOU_THRESHOLDS};
use salient_core::geometry::{iou_bbox, BBox, BitMask, LabelSet};
use salient_core::planskeleton::{
    build_prompt, expand_plan, pick_place_skills, FullPlan, PlanStep, SearchTarget, SemanticPlan,
};
use salient_core::scenegraph::{
    frame_fit, object_score, pixel_confidence, AcceptanceGroup, FitnessParams, FrameFit,
    Observation, SceneGraph,
};
use salient_core::synth::{crossing_scene, generate, score_partition, SynthConfig};
use salient_core::trackmodel::TrackSet;

// ---------------------------------------------------------------------------
// Criterion 1: the crossing-scene regression.
// Two objects sharing one lane, coincident at a single frame, five real
// tracks and one short spurious track. Consolidation must find exactly two
// objects with the expected memberships, discard the spurious track, and
// finish in under a second.
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_crossing_scene_regression() {
    let started = Instant::now();
    let (ts, gt) = crossing_scene();
    let params = ClusterParams::default();

    // The documented cluster-track pattern. Tracks of object A share one
    // spatial cluster in every frame; object B's tracks share another except
    // at the crossing frame, where all five boxes fall into one cluster.
    let fcm = spatial_cluster(&ts, &params).unwrap();
    let cluster_tracks = build_cluster_tracks(&ts, &fcm).unwrap();
    let labels_of = |id: &str| -> &LabelSet<ClusterLabel> {
        &cluster_tracks
            .iter()
            .find(|ct| ct.track_id == id)
            .unwrap_or_else(|| panic!("missing track {id}"))
            .labels
    };
    let shared = |frame: u32, cluster: u32| ClusterLabel::Shared { frame, cluster };
    let expected_a: LabelSet<ClusterLabel> = (0..5).map(|f| shared(f, 0)).collect();
    assert_eq!(labels_of("a0_fwd"), &expected_a);
    assert_eq!(labels_of("a0_bwd"), &expected_a);
    let expected_a_short: LabelSet<ClusterLabel> = (0..4).map(|f| shared(f, 0)).collect();
    assert_eq!(labels_of("a1_fwd"), &expected_a_short);
    let expected_b: LabelSet<ClusterLabel> =
        [shared(0, 1), shared(1, 1), shared(2, 0), shared(3, 1), shared(4, 1)]
            .into_iter()
            .collect();
    assert_eq!(labels_of("b0_fwd"), &expected_b);
    assert_eq!(labels_of("b0_bwd"), &expected_b);
    // Jaccard between the two groups is exactly 1/9 (one shared frame label
    // out of nine distinct), far outside the neighborhood.
    assert!((labels_of("a0_fwd").jaccard(labels_of("b0_fwd")) - 1.0 / 9.0).abs() < 1e-12);
    // The spurious track shares no label with anyone.
    let noise = labels_of("noise0");
    assert_eq!(noise.len(), 2);
    for other in ["a0_fwd", "a0_bwd", "a1_fwd", "b0_fwd", "b0_bwd"] {
        assert_eq!(noise.jaccard(labels_of(other)), 0.0);
    }

    let (dataset, summary) = consolidate(&ts, &params).unwrap();
    assert_eq!(summary.object_count, 2, "exactly two objects");
    for id in ["a0_fwd", "a0_bwd", "a1_fwd"] {
        assert_eq!(summary.assignment.label(id), Some(TrackLabel::Object(0)), "{id}");
    }
    for id in ["b0_fwd", "b0_bwd"] {
        assert_eq!(summary.assignment.label(id), Some(TrackLabel::Object(1)), "{id}");
    }
    assert_eq!(summary.assignment.label("noise0"), Some(TrackLabel::Discarded));

    let score = score_partition(&summary.assignment, &gt).unwrap();
    assert_eq!(score.purity, 1.0);
    assert_eq!(score.adjusted_rand, 1.0);
    assert_eq!(score.spurious_discard_rate, 1.0);
    assert_eq!(dataset.label_count, 2);

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}, budget 1 s");
}

// ---------------------------------------------------------------------------
// Criterion 2: clustering oracle equivalence.
// ---------------------------------------------------------------------------

/// Brute-force density-connected components by transitive closure: core
/// points are adjacent when within eps; components are ordered by their
/// minimal core index; a border point joins the earliest-ordered component
/// with a core within eps.
fn brute_force_dbscan(
    n: usize,
    dist: impl Fn(usize, usize) -> f64,
    eps: f64,
    min_samples: usize,
) -> Vec<Assignment> {
    let within = |i: usize, j: usize| dist(i, j) <= eps;
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| within(i, j)).count() >= min_samples)
        .collect();

    // Transitive closure over core-core adjacency.
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            reach[i][j] = core[i] && core[j] && within(i, j);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }

    let mut component: Vec<Option<usize>> = vec![None; n];
    let mut next = 0usize;
    for i in 0..n {
        if !core[i] || component[i].is_some() {
            continue;
        }
        for j in 0..n {
            if reach[i][j] && component[j].is_none() {
                component[j] = Some(next);
            }
        }
        component[i] = Some(next);
        next += 1;
    }

    (0..n)
        .map(|i| {
            if let Some(c) = component[i] {
                return Assignment::Cluster(c as u32);
            }
            // Border: earliest component with a core neighbor.
            let joined = (0..n)
                .filter(|&j| core[j] && within(i, j))
                .filter_map(|j| component[j])
                .min();
            match joined {
                Some(c) => Assignment::Cluster(c as u32),
                None => Assignment::Noise,
            }
        })
        .collect()
}

#[test]
fn criterion_2_dbscan_matches_brute_force_closure() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0dbc);
    for case in 0..1000 {
        let n = rng.random_range(0..=8usize);
        let mut matrix = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = rng.random_range(0.0..1.0);
                matrix[i][j] = d;
                matrix[j][i] = d;
            }
        }
        let eps = rng.random_range(0.1..0.9);
        let min_samples = rng.random_range(1..=4usize);
        let dist = |i: usize, j: usize| matrix[i][j];
        let fast = dbscan(n, dist, eps, min_samples);
        let slow = brute_force_dbscan(n, dist, eps, min_samples);
        assert_eq!(fast, slow, "case {case}: n={n} eps={eps} min={min_samples}");
    }
}

#[test]
fn criterion_2_noise_free_scenes_recover_the_partition_exactly() {
    for seed in 0..100u64 {
        let cfg = SynthConfig {
            object_count: 1 + (seed % 6) as u32,
            frame_count: 2 + ((seed * 7) % 99) as u32,
            seeds_per_object: 1 + (seed % 3) as u32,
            jitter: 0.0,
            spurious_count: 0,
            rng_seed: seed,
            emit_masks: seed % 2 == 0,
            ..SynthConfig::default()
        };
        let (ts, gt) = generate(&cfg).unwrap();
        let (_, summary) = consolidate(&ts, &ClusterParams::default()).unwrap();
        let score = score_partition(&summary.assignment, &gt).unwrap();
        assert_eq!(score.adjusted_rand, 1.0, "seed {seed}: {cfg:?}");
        assert_eq!(score.purity, 1.0, "seed {seed}");
        assert_eq!(summary.object_count, cfg.object_count, "seed {seed}");
    }
}

// ---------------------------------------------------------------------------
// Criterion 3: robustness envelope with bounded jitter and spurious tracks.
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_jitter_and_spurious_robustness() {
    let mut purity_sum = 0.0;
    let mut discard_sum = 0.0;
    let scenes = 100u64;
    for seed in 0..scenes {
        let objects = 2 + (seed % 4) as u32;
        let seeds_per_object = 1 + (seed % 2) as u32;
        let real_tracks = objects * 2 * seeds_per_object;
        let cfg = SynthConfig {
            object_count: objects,
            frame_count: 40 + ((seed % 4) * 20) as u32,
            seeds_per_object,
            jitter: 2.0,
            // One spurious track per four real ones: 20% of the total.
            spurious_count: (real_tracks / 4).max(1),
            spurious_max_length: 6,
            rng_seed: 1000 + seed,
            emit_masks: false,
            ..SynthConfig::default()
        };
        let (ts, gt) = generate(&cfg).unwrap();
        let (_, summary) = consolidate(&ts, &ClusterParams::default()).unwrap();
        let score = score_partition(&summary.assignment, &gt).unwrap();
        purity_sum += score.purity;
        discard_sum += score.spurious_discard_rate;
    }
    let purity = purity_sum / scenes as f64;
    let discard = discard_sum / scenes as f64;
    assert!(purity >= 0.95, "mean purity {purity} < 0.95");
    assert!(discard >= 0.90, "mean spurious discard rate {discard} < 0.90");
}

// ---------------------------------------------------------------------------
// Criterion 4: mask aggregation properties and the exact vote threshold.
// ---------------------------------------------------------------------------

fn random_mask(rng: &mut ChaCha8Rng, width: u32, height: u32) -> BitMask {
    let fill = rng.random_range(0.1..0.9);
    let pixels: Vec<bool> = (0..(width * height) as usize)
        .map(|_| rng.random_bool(fill))
        .collect();
    BitMask::from_pixels(width, height, &pixels).unwrap()
}

#[test]
fn criterion_4_aggregation_properties_on_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa66);
    for _ in 0..10_000 {
        let a = random_mask(&mut rng, 8, 8);
        let b = random_mask(&mut rng, 8, 8);
        let c = random_mask(&mut rng, 8, 8);

        let out = aggregate_masks(&[&a, &b, &c]).unwrap();
        // Order invariance.
        assert_eq!(out, aggregate_masks(&[&c, &a, &b]).unwrap());
        assert_eq!(out, aggregate_masks(&[&b, &c, &a]).unwrap());

        // Sandwich between intersection and union, checked pixelwise through
        // an independent decode.
        let (pa, pb, pc, po) = (a.to_pixels(), b.to_pixels(), c.to_pixels(), out.to_pixels());
        for i in 0..po.len() {
            let union = pa[i] || pb[i] || pc[i];
            let inter = pa[i] && pb[i] && pc[i];
            assert!(!po[i] || union, "output exceeds the union");
            assert!(!inter || po[i], "output misses the intersection");
        }

        // Idempotence on duplicated inputs.
        assert_eq!(aggregate_masks(&[&a, &a, &a]).unwrap(), a);
        assert_eq!(aggregate_masks(&[&b, &b]).unwrap(), b);
    }
}

#[test]
fn criterion_4_vote_threshold_exhaustive_enumeration() {
    // For n = 1..=5 masks over a 3x3 grid, enumerate every possible
    // "which masks contain this pixel" subset and check the ceil(n/2) rule
    // pixel by pixel.
    for n in 1..=5usize {
        let threshold = n.div_ceil(2) as u32;
        let subsets: Vec<u32> = (0..(1u32 << n)).collect();
        for chunk in subsets.chunks(9) {
            let masks: Vec<BitMask> = (0..n)
                .map(|j| {
                    BitMask::from_fn(3, 3, |r, c| {
                        let p = (r * 3 + c) as usize;
                        p < chunk.len() && (chunk[p] >> j) & 1 == 1
                    })
                })
                .collect();
            let refs: Vec<&BitMask> = masks.iter().collect();
            let out = aggregate_masks(&refs).unwrap();
            for (p, subset) in chunk.iter().enumerate() {
                let expected = subset.count_ones() >= threshold;
                let (row, col) = ((p / 3) as u32, (p % 3) as u32);
                assert_eq!(
                    out.contains(row, col),
                    expected,
                    "n={n} subset={subset:#b} pixel=({row},{col})"
                );
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 5: metrics against a naive reference implementation.
// ---------------------------------------------------------------------------

/// Naive greedy matcher, written from the protocol statement: walk detections
/// in descending score (ties by input order), give each the highest-IoU
/// unmatched ground truth of its image and category at or above the
/// threshold (ties to the lowest ground-truth index).
fn naive_match(
    dets: &[DetectionRecord],
    gts: &[GroundTruthRecord],
    thr: f64,
) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut used = vec![false; gts.len()];
    let mut matched = vec![None; dets.len()];
    for &d in &order {
        let mut best_iou = -1.0;
        let mut best_gt = None;
        for (g, gt) in gts.iter().enumerate() {
            if used[g]
                || gt.image_id != dets[d].image_id
                || gt.category_id != dets[d].category_id
            {
                continue;
            }
            let iou = iou_bbox(&dets[d].bbox, &gt.bbox);
            if iou >= thr && iou > best_iou {
                best_iou = iou;
                best_gt = Some(g);
            }
        }
        if let Some(g) = best_gt {
            used[g] = true;
            matched[d] = Some(g);
        }
    }
    matched
}

/// Naive AP: re-run the matcher from scratch for every score-ranked prefix,
/// then integrate the 101-point interpolation by literal scan.
fn naive_ap(dets: &[DetectionRecord], gts: &[GroundTruthRecord], thr: f64) -> Option<f64> {
    if gts.is_empty() {
        return if dets.is_empty() { None } else { Some(0.0) };
    }
    if dets.is_empty() {
        return Some(0.0);
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut points = Vec::new();
    for k in 1..=order.len() {
        let prefix: Vec<DetectionRecord> = order[..k].iter().map(|&i| dets[i].clone()).collect();
        let matched = naive_match(&prefix, gts, thr);
        let tp = matched.iter().filter(|m| m.is_some()).count();
        points.push((tp as f64 / gts.len() as f64, tp as f64 / k as f64));
    }
    let mut total = 0.0;
    for r100 in 0..=100u32 {
        let r = r100 as f64 / 100.0;
        let p = points
            .iter()
            .filter(|(recall, _)| *recall >= r)
            .map(|(_, precision)| *precision)
            .fold(0.0, f64::max);
        total += p;
    }
    Some(total / 101.0)
}

fn naive_report(
    dets: &[DetectionRecord],
    gts: &[GroundTruthRecord],
    cutoff: f64,
) -> MetricsReport {
    let categories: std::collections::BTreeSet<i64> = dets
        .iter()
        .map(|d| d.category_id)
        .chain(gts.iter().map(|g| g.category_id))
        .collect();
    let dets_of = |c: i64| -> Vec<DetectionRecord> {
        dets.iter().filter(|d| d.category_id == c).cloned().collect()
    };
    let gts_of = |c: i64| -> Vec<GroundTruthRecord> {
        gts.iter().filter(|g| g.category_id == c).cloned().collect()
    };

    let mut ap_per_cat: BTreeMap<i64, f64> = BTreeMap::new();
    let mut ar_per_cat: BTreeMap<i64, f64> = BTreeMap::new();
    let (mut map_sum, mut mar_sum) = (0.0, 0.0);
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    let cut: Vec<DetectionRecord> = dets.iter().filter(|d| d.score >= cutoff).cloned().collect();

    for &thr in &IOU_THRESHOLDS {
        let (mut ap_sum, mut ap_n) = (0.0, 0usize);
        for &c in &categories {
            if let Some(ap) = naive_ap(&dets_of(c), &gts_of(c), thr) {
                ap_sum += ap;
                ap_n += 1;
                *ap_per_cat.entry(c).or_insert(0.0) += ap;
            }
        }
        map_sum += if ap_n == 0 { 0.0 } else { ap_sum / ap_n as f64 };

        let (mut ar_sum, mut ar_n) = (0.0, 0usize);
        for &c in &categories {
            let cgts = gts_of(c);
            if cgts.is_empty() {
                continue;
            }
            let cdets = dets_of(c);
            // Top-1 per image, ties by input order.
            let mut kept: Vec<DetectionRecord> = Vec::new();
            let mut images: Vec<i64> = cdets.iter().map(|d| d.image_id).collect();
            images.sort_unstable();
            images.dedup();
            for image in images {
                let best = cdets
                    .iter()
                    .filter(|d| d.image_id == image)
                    .fold(None::<&DetectionRecord>, |best, d| match best {
                        Some(b) if b.score >= d.score => Some(b),
                        _ => Some(d),
                    })
                    .unwrap();
                kept.push(best.clone());
            }
            let tp = naive_match(&kept, &cgts, thr)
                .iter()
                .filter(|m| m.is_some())
                .count();
            ar_sum += tp as f64 / cgts.len() as f64;
            ar_n += 1;
            *ar_per_cat.entry(c).or_insert(0.0) += tp as f64 / cgts.len() as f64;
        }
        mar_sum += if ar_n == 0 { 0.0 } else { ar_sum / ar_n as f64 };

        let tp = naive_match(&cut, gts, thr)
            .iter()
            .filter(|m| m.is_some())
            .count();
        let precision = if cut.is_empty() { 0.0 } else { tp as f64 / cut.len() as f64 };
        let recall = if gts.is_empty() { 0.0 } else { tp as f64 / gts.len() as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        p_sum += precision;
        r_sum += recall;
        f_sum += f1;
    }

    let n_thr = IOU_THRESHOLDS.len() as f64;
    MetricsReport {
        map_50_95: map_sum / n_thr,
        mar_1: mar_sum / n_thr,
        f1_50_95: f_sum / n_thr,
        precision_50_95: p_sum / n_thr,
        recall_50_95: r_sum / n_thr,
        per_category: categories
            .iter()
            .map(|&c| {
                (
                    c.to_string(),
                    salient_core::evalmetrics::CategoryMetrics {
                        ap_50_95: ap_per_cat.get(&c).copied().unwrap_or(0.0) / n_thr,
                        ar_1: if gts_of(c).is_empty() {
                            None
                        } else {
                            Some(ar_per_cat.get(&c).copied().unwrap_or(0.0) / n_thr)
                        },
                    },
                )
            })
            .collect(),
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let x0 = rng.random_range(0..40) as f64;
    let y0 = rng.random_range(0..40) as f64;
    let w = rng.random_range(2..14) as f64;
    let h = rng.random_range(2..14) as f64;
    BBox::new(x0, y0, x0 + w, y0 + h).unwrap()
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<DetectionRecord>, Vec<GroundTruthRecord>) {
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for image in 0..3i64 {
        for _ in 0..rng.random_range(0..=5usize) {
            gts.push(GroundTruthRecord {
                image_id: image,
                category_id: rng.random_range(0..3),
                bbox: random_box(rng),
            });
        }
        for _ in 0..rng.random_range(0..=5usize) {
            let image_gts: Vec<&GroundTruthRecord> =
                gts.iter().filter(|g| g.image_id == image).collect();
            let (bbox, category_id) = if !image_gts.is_empty() && rng.random_bool(0.6) {
                let gt = image_gts[rng.random_range(0..image_gts.len())];
                let dx = rng.random_range(-3..=3) as f64;
                let dy = rng.random_range(-3..=3) as f64;
                let corners = gt.bbox.corners();
                let bbox = BBox::new(
                    corners[0] + dx,
                    corners[1] + dy,
                    corners[2] + dx,
                    corners[3] + dy,
                )
                .unwrap();
                let category = if rng.random_bool(0.8) {
                    gt.category_id
                } else {
                    rng.random_range(0..3)
                };
                (bbox, category)
            } else {
                (random_box(rng), rng.random_range(0..3))
            };
            dets.push(DetectionRecord {
                image_id: image,
                category_id,
                bbox,
                score: (rng.random_range(0..=100) as f64) / 100.0,
            });
        }
    }
    (dets, gts)
}

#[test]
fn criterion_5_evaluate_matches_naive_reference_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3fa1);
    for case in 0..1000 {
        let (dets, gts) = random_instance(&mut rng);
        let fast = evaluate(&dets, &gts, 0.5);
        let slow = naive_report(&dets, &gts, 0.5);
        assert_eq!(fast, slow, "case {case} diverged");

        // mAP at the 0.5 threshold alone dominates the 0.5..0.95 mean.
        let categories: std::collections::BTreeSet<i64> = dets
            .iter()
            .map(|d| d.category_id)
            .chain(gts.iter().map(|g| g.category_id))
            .collect();
        let (mut sum, mut count) = (0.0, 0usize);
        for &c in &categories {
            let cdets: Vec<DetectionRecord> =
                dets.iter().filter(|d| d.category_id == c).cloned().collect();
            let cgts: Vec<GroundTruthRecord> =
                gts.iter().filter(|g| g.category_id == c).cloned().collect();
            if let Some(ap) = average_precision(&cdets, &cgts, 0.5) {
                sum += ap;
                count += 1;
            }
        }
        let map_at_50 = if count == 0 { 0.0 } else { sum / count as f64 };
        assert!(
            map_at_50 >= fast.map_50_95 - 1e-12,
            "case {case}: mAP@0.5 {map_at_50} < mAP@0.5..0.95 {}",
            fast.map_50_95
        );
    }
}

#[test]
fn criterion_5_perfect_predictions_score_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9f);
    let mut gts = Vec::new();
    for image in 0..4i64 {
        for category in 0..3i64 {
            gts.push(GroundTruthRecord {
                image_id: image,
                category_id: category,
                bbox: random_box(&mut rng),
            });
        }
    }
    let dets: Vec<DetectionRecord> = gts
        .iter()
        .map(|g| DetectionRecord {
            image_id: g.image_id,
            category_id: g.category_id,
            bbox: g.bbox,
            score: 1.0,
        })
        .collect();
    let report = evaluate(&dets, &gts, 0.5);
    assert_eq!(report.map_50_95, 1.0);
    assert_eq!(report.mar_1, 1.0);
    assert_eq!(report.f1_50_95, 1.0);
    assert_eq!(report.precision_50_95, 1.0);
    assert_eq!(report.recall_50_95, 1.0);
}

// ---------------------------------------------------------------------------
// Criterion 6: scene-graph formulas and replay invariants.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_formulas_exact_and_boundary_accepted() {
    let params = FitnessParams::default();
    let points_2500: Vec<[f64; 3]> = (0..2500).map(|i| [i as f64 * 0.001, 0.0, 0.0]).collect();
    let obs = Observation::new(0.0, "x", 0.5, points_2500).unwrap();
    let pix = pixel_confidence(&obs, &params).unwrap();
    assert!((pix - 10.0).abs() <= 1e-9, "S_pix = {pix}");
    assert_eq!(frame_fit(&obs, &params), FrameFit::Accept, "boundary is inclusive");

    let mut graph = SceneGraph::new(vec![], params.clone()).unwrap();
    graph.integrate(Observation::new(0.0, "y", 0.8, vec![[0.0, 0.0, 0.0]; 4]).unwrap());
    for k in 0..5 {
        graph.integrate(
            Observation::new(1.0 + k as f64, "y", 0.3, vec![[0.0, 0.0, 0.0]; 4]).unwrap(),
        );
    }
    let node = graph.query("y").unwrap();
    assert_eq!(node.sightings, 6);
    let score = object_score(node, &params);
    assert!((score - 0.9).abs() <= 1e-9, "S_obj = {score}");
}

#[test]
fn criterion_6_replay_invariants_over_ten_thousand_steps() {
    let params = FitnessParams::default();
    let groups = vec![AcceptanceGroup {
        labels: vec!["a".into(), "b".into()],
        window: 0.0,
    }];
    let mut graph = SceneGraph::new(groups, params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5c3e);
    let labels = ["a", "b", "c", "d", "e"];

    let group_sightings = |graph: &SceneGraph, label: &str| -> u64 {
        graph
            .nodes()
            .iter()
            .filter(|n| n.label == label)
            .map(|n| n.sightings)
            .sum()
    };

    for step in 0..10_000u32 {
        let roll: f64 = rng.random();
        if roll < 0.85 || graph.nodes().is_empty() {
            let label = labels[rng.random_range(0..labels.len())];
            // A handful of sites per label so several nodes compete.
            let site = rng.random_range(0..3) as f64 * 5.0;
            let count = rng.random_range(2..8usize);
            let points: Vec<[f64; 3]> = (0..count)
                .map(|i| [site + i as f64 * 0.001, 0.0, 0.0])
                .collect();
            let seg = rng.random_range(0.1..1.0);
            let obs = Observation::new(step as f64 * 0.1, label, seg, points).unwrap();
            graph.integrate(obs);
        } else if roll < 0.95 {
            let node_id = rng.random_range(0..graph.nodes().len()) as u32;
            let label = graph.node(node_id).unwrap().label.clone();
            let already_locked = graph
                .nodes()
                .iter()
                .find(|n| n.label == label && n.locked && n.node_id != node_id)
                .map(|n| n.node_id);
            match (already_locked, graph.lock(node_id)) {
                (Some(_), Err(_)) => {} // second lock on a label must fail
                (None, Ok(())) => {}
                (expected, got) => panic!(
                    "step {step}: lock({node_id}) inconsistent: expected conflict={expected:?}, got {got:?}"
                ),
            }
        } else {
            let node_id = rng.random_range(0..graph.nodes().len()) as u32;
            graph.unlock(node_id).unwrap();
        }

        // Lock supremacy after every step.
        for label in labels {
            if let Some(locked) = graph.nodes().iter().find(|n| n.label == label && n.locked) {
                assert_eq!(
                    graph.query(label).unwrap().node_id,
                    locked.node_id,
                    "step {step}: locked node is not the representative"
                );
            }
        }
        // Group atomicity: integrated sightings stay equal.
        assert_eq!(
            group_sightings(&graph, "a"),
            group_sightings(&graph, "b"),
            "step {step}: group labels diverged"
        );
    }
    assert!(!graph.nodes().is_empty());
}

// ---------------------------------------------------------------------------
// Criterion 7: prompt fidelity and plan expansion.
// ---------------------------------------------------------------------------

const EXPECTED_PROMPT: &str = "You will be provided with a video of a human doing a sequence of places and picks.  \
You should analyze the video to determine the actions taken and the objects involved and return this information using the schema provided.  \
Here is a description of the actions and the parameters:\n\
- Place: Place an object onto another object.  Cannot be used for putting an object carefully inside another or into a hole.\n\
\u{20}\u{20}- place_name: Where to put the object currently being held\n\
\u{20}\u{20}- careful: Whether to carefully place the object down or drop it\n\
- Pick: Grasp an object once the object has been found\n\
\u{20}\u{20}- object_name: The object to manipulate\n\
\u{20}\u{20}- future_manipulation: The next action we will do with the object after picking it up\n\
- plan: A list of actions, each of which describes one place or pick along with the objects involved.";

#[test]
fn criterion_7_prompt_is_byte_exact() {
    let prompt = build_prompt(&pick_place_skills()).unwrap();
    assert_eq!(prompt, EXPECTED_PROMPT);
    assert_eq!(prompt.as_bytes(), EXPECTED_PROMPT.as_bytes());
}

#[test]
fn criterion_7_expansion_matches_and_is_idempotent() {
    let skills = pick_place_skills();
    let semantic = SemanticPlan {
        steps: vec![
            PlanStep {
                skill: "Pick".into(),
                params: [
                    ("object_name".to_string(), "A".to_string()),
                    ("future_manipulation".to_string(), "place".to_string()),
                ]
                .into(),
            },
            PlanStep {
                skill: "Place".into(),
                params: [
                    ("place_name".to_string(), "basket".to_string()),
                    ("careful".to_string(), "true".to_string()),
                ]
                .into(),
            },
        ],
    };
    let full = expand_plan(&FullPlan::from(semantic), &skills).unwrap();

    // [Search({A:id0, basket}), Pick(id 0), Place("basket")]
    let kinds: Vec<&str> = full.steps.iter().map(|s| s.skill.as_str()).collect();
    assert_eq!(kinds, ["Search", "Pick", "Place"]);
    assert_eq!(
        full.steps[0].search_targets,
        vec![
            SearchTarget::Detector {
                mod_id: 0,
                object_name: "A".into()
            },
            SearchTarget::Semantic {
                name: "basket".into()
            },
        ]
    );
    assert_eq!(full.steps[1].mod_id, Some(0));
    assert_eq!(full.steps[2].params["place_name"], "basket");

    // Idempotence and the single-search invariant.
    let again = expand_plan(&full, &skills).unwrap();
    assert_eq!(again, full);
    let search_count = again.steps.iter().filter(|s| s.skill == "Search").count();
    assert_eq!(search_count, 1);

    // Detector ids are a contiguous 0-based sequence in first-grasp order.
    let semantic = SemanticPlan {
        steps: vec![
            PlanStep {
                skill: "Pick".into(),
                params: [
                    ("object_name".to_string(), "C".to_string()),
                    ("future_manipulation".to_string(), "place".to_string()),
                ]
                .into(),
            },
            PlanStep {
                skill: "Pick".into(),
                params: [
                    ("object_name".to_string(), "B".to_string()),
                    ("future_manipulation".to_string(), "place".to_string()),
                ]
                .into(),
            },
            PlanStep {
                skill: "Pick".into(),
                params: [
                    ("object_name".to_string(), "C".to_string()),
                    ("future_manipulation".to_string(), "place".to_string()),
                ]
                .into(),
            },
        ],
    };
    let full = expand_plan(&FullPlan::from(semantic), &skills).unwrap();
    let ids: Vec<Option<u32>> = full
        .steps
        .iter()
        .filter(|s| s.skill == "Pick")
        .map(|s| s.mod_id)
        .collect();
    assert_eq!(ids, [Some(0), Some(1), Some(0)]);
}

// ---------------------------------------------------------------------------
// Criterion 8: throughput and thread invariance.
// ---------------------------------------------------------------------------

fn performance_scene() -> TrackSet {
    // 10 objects x 2 seeds x forward/backward = 40 tracks over 300 frames:
    // 12,000 boxes, with masks.
    let cfg = SynthConfig {
        object_count: 10,
        frame_count: 300,
        seeds_per_object: 2,
        jitter: 1.0,
        spurious_count: 0,
        emit_masks: true,
        rng_seed: 88,
        ..SynthConfig::default()
    };
    let (ts, _) = generate(&cfg).unwrap();
    assert_eq!(ts.tracks().len(), 40);
    assert_eq!(ts.total_entries(), 12_000);
    ts
}

#[test]
fn criterion_8_single_thread_budget_and_parallel_determinism() {
    let ts = performance_scene();
    let params = ClusterParams::default();

    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let started = Instant::now();
    let (dataset_single, summary) = single.install(|| consolidate(&ts, &params)).unwrap();
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 5.0,
        "single-threaded consolidate took {elapsed:?}, budget 5 s"
    );
    assert_eq!(summary.object_count, 10);

    let parallel = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let (dataset_parallel, _) = parallel.install(|| consolidate(&ts, &params)).unwrap();
    assert_eq!(
        dataset_to_json(&dataset_single),
        dataset_to_json(&dataset_parallel),
        "parallel execution must be byte-identical"
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: serialization round trips.
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_track_and_dataset_round_trips_are_byte_identical() {
    // Fractional box coordinates (jitter, masks off) stress the float path.
    let float_cfg = SynthConfig {
        object_count: 3,
        frame_count: 24,
        seeds_per_object: 2,
        jitter: 1.7,
        spurious_count: 2,
        emit_masks: false,
        rng_seed: 7,
        ..SynthConfig::default()
    };
    let masked_cfg = SynthConfig {
        emit_masks: true,
        ..float_cfg.clone()
    };
    for cfg in [float_cfg, masked_cfg] {
        let (ts, _) = generate(&cfg).unwrap();
        let first = ts.to_jsonl();
        let reloaded = TrackSet::from_jsonl(&first).unwrap();
        let second = reloaded.to_jsonl();
        assert_eq!(first, second, "track JSONL round trip (masks={})", cfg.emit_masks);
        assert_eq!(reloaded, ts);

        let (dataset, _) = consolidate(&ts, &ClusterParams::default()).unwrap();
        let first = dataset_to_json(&dataset);
        let reloaded = dataset_from_json(&first).unwrap();
        let second = dataset_to_json(&reloaded);
        assert_eq!(first, second, "dataset JSON round trip (masks={})", cfg.emit_masks);
        assert_eq!(reloaded, dataset);
    }
}
