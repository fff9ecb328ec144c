//! End-to-end CLI behavior: exit codes, output files, manifests, and the
//! pipeline flows between subcommands.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn salient() -> Command {
    Command::new(env!("CARGO_BIN_EXE_salient"))
}

fn run(args: &[&str]) -> Output {
    salient().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn crossing_tracks(dir: &Path) -> PathBuf {
    let config = dir.join("scene.cfg");
    write(&config, "preset = crossing\n");
    let tracks = dir.join("tracks.jsonl");
    let out = run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        tracks.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "synth failed: {}", stderr(&out));
    tracks
}

#[test]
fn help_exits_zero_everywhere() {
    for args in [
        vec!["--help"],
        vec!["consolidate", "--help"],
        vec!["evaluate", "--help"],
        vec!["scenegraph-replay", "--help"],
        vec!["synth", "--help"],
        vec!["plan", "--help"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(0), "args {args:?}");
    }
}

#[test]
fn bad_flag_value_exits_two() {
    let dir = TempDir::new().unwrap();
    let tracks = crossing_tracks(dir.path());
    let out = run(&[
        "consolidate",
        "--tracks",
        tracks.to_str().unwrap(),
        "--out",
        dir.path().join("d.json").to_str().unwrap(),
        "--spatial-eps",
        "not-a-number",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&[
        "consolidate",
        "--tracks",
        tracks.to_str().unwrap(),
        "--out",
        dir.path().join("d.json").to_str().unwrap(),
        "--min-size",
        "zero",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("error"));
}

#[test]
fn missing_input_file_exits_two() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "evaluate",
        "--dets",
        dir.path().join("nope.json").to_str().unwrap(),
        "--gt",
        dir.path().join("also-nope.json").to_str().unwrap(),
        "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_str(stderr(&out).trim()).unwrap();
    assert_eq!(err["error"]["kind"], "usage");
}

#[test]
fn consolidate_crossing_scene_end_to_end() {
    let dir = TempDir::new().unwrap();
    let tracks = crossing_tracks(dir.path());
    let dataset = dir.path().join("dataset.json");
    let out = run(&[
        "consolidate",
        "--tracks",
        tracks.to_str().unwrap(),
        "--out",
        dataset.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("2 objects, 1 track discarded"));

    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&dataset).unwrap()).unwrap();
    let categories: Vec<&str> = parsed["categories"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(categories, ["object_0", "object_1"]);

    let manifest_path = PathBuf::from(format!("{}.manifest.json", dataset.display()));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "consolidate");
    assert_eq!(manifest["tool_version"], env!("CARGO_PKG_VERSION"));
    let hash = manifest["inputs"][tracks.to_str().unwrap()].as_str().unwrap();
    assert!(hash.starts_with("sha256:"));
}

#[test]
fn consolidate_renders_overlays() {
    let dir = TempDir::new().unwrap();
    let tracks = crossing_tracks(dir.path());
    let overlays = dir.path().join("overlays");
    let out = run(&[
        "consolidate",
        "--tracks",
        tracks.to_str().unwrap(),
        "--out",
        dir.path().join("d.json").to_str().unwrap(),
        "--render-overlays",
        overlays.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let count = std::fs::read_dir(&overlays).unwrap().count();
    assert_eq!(count, 5);
    assert!(overlays.join("frame_000000.png").is_file());
}

#[test]
fn consolidate_duplicate_track_id_exits_one() {
    let dir = TempDir::new().unwrap();
    let tracks = dir.path().join("bad.jsonl");
    write(
        &tracks,
        concat!(
            r#"{"format":"salient-tracks","version":1,"video_id":"v","frame_count":3,"width":32,"height":32}"#,
            "\n",
            r#"{"kind":"seed","frame":0,"rle":[0,4]}"#,
            "\n",
            r#"{"kind":"track","track_id":"dup","seed_frame":0,"entries":[{"frame":0,"bbox":[0,0,4,4]}]}"#,
            "\n",
            r#"{"kind":"track","track_id":"dup","seed_frame":0,"entries":[{"frame":1,"bbox":[0,0,4,4]}]}"#,
            "\n",
        ),
    );
    let out = run(&[
        "consolidate",
        "--tracks",
        tracks.to_str().unwrap(),
        "--out",
        dir.path().join("d.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_str(stderr(&out).trim()).unwrap();
    assert_eq!(err["error"]["kind"], "data");
    assert!(err["error"]["message"].as_str().unwrap().contains("dup"));
}

#[test]
fn consolidate_empty_track_file_warns_and_writes_empty_dataset() {
    let dir = TempDir::new().unwrap();
    let tracks = dir.path().join("empty.jsonl");
    write(
        &tracks,
        "{\"format\":\"salient-tracks\",\"version\":1,\"video_id\":\"v\",\"frame_count\":3,\"width\":32,\"height\":32}\n",
    );
    let dataset = dir.path().join("d.json");
    let out = run(&[
        "consolidate",
        "--tracks",
        tracks.to_str().unwrap(),
        "--out",
        dataset.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("warning"));
    assert!(stdout(&out).contains("0 objects, 0 tracks discarded"));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&dataset).unwrap()).unwrap();
    assert_eq!(parsed["annotations"].as_array().unwrap().len(), 0);
}

#[test]
fn evaluate_perfect_predictions() {
    let dir = TempDir::new().unwrap();
    let gt = dir.path().join("gt.json");
    write(
        &gt,
        r#"{"annotations":[
            {"image_id":0,"category_id":0,"bbox":[10,10,20,20]},
            {"image_id":1,"category_id":1,"bbox":[5,5,12,8]}
        ]}"#,
    );
    let dets = dir.path().join("dets.json");
    write(
        &dets,
        r#"[
            {"image_id":0,"category_id":0,"bbox":[10,10,20,20],"score":1.0},
            {"image_id":1,"category_id":1,"bbox":[5,5,12,8],"score":1.0}
        ]"#,
    );
    let report_path = dir.path().join("report.json");
    let out = run(&[
        "evaluate",
        "--dets",
        dets.to_str().unwrap(),
        "--gt",
        gt.to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("iou_thresholds: 0.50,0.55,0.60,0.65,0.70,0.75,0.80,0.85,0.90,0.95"));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    for key in ["map_50_95", "mar_1", "f1_50_95", "precision_50_95", "recall_50_95"] {
        assert_eq!(report[key], 1.0, "{key}");
    }
    assert!(report["per_category"].get("0").is_some());
}

#[test]
fn evaluate_rejects_bad_score_exit_one() {
    let dir = TempDir::new().unwrap();
    let gt = dir.path().join("gt.json");
    write(&gt, r#"{"annotations":[{"image_id":0,"category_id":0,"bbox":[0,0,5,5]}]}"#);
    let dets = dir.path().join("dets.json");
    write(&dets, r#"[{"image_id":0,"category_id":0,"bbox":[0,0,5,5],"score":1.2}]"#);
    let out = run(&[
        "evaluate",
        "--dets",
        dets.to_str().unwrap(),
        "--gt",
        gt.to_str().unwrap(),
        "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("score"));
}

#[test]
fn scenegraph_replay_with_groups_and_lock() {
    let dir = TempDir::new().unwrap();
    let stream = dir.path().join("stream.jsonl");
    // Label `a`/`b` form a window-zero group; `c` is ungated. Two competing
    // `c` nodes, then a lock pins the lower-scored one.
    write(
        &stream,
        concat!(
            r#"{"t":1.0,"label":"a","seg_score":0.9,"points":[[0,0,0],[0.001,0,0]]}"#,
            "\n",
            r#"{"t":2.0,"label":"b","seg_score":0.9,"points":[[1,0,0],[1.001,0,0]]}"#,
            "\n",
            r#"{"t":3.0,"label":"a","seg_score":0.9,"points":[[0,0,0],[0.001,0,0]]}"#,
            "\n",
            r#"{"t":3.0,"label":"b","seg_score":0.9,"points":[[1,0,0],[1.001,0,0]]}"#,
            "\n",
            r#"{"t":4.0,"label":"c","seg_score":0.95,"points":[[2,0,0],[2.001,0,0]]}"#,
            "\n",
            r#"{"t":5.0,"label":"c","seg_score":0.6,"points":[[5,0,0],[5.001,0,0]]}"#,
            "\n",
            r#"{"directive":"lock","node_id":3}"#,
            "\n",
        ),
    );
    let groups = dir.path().join("groups.json");
    write(&groups, r#"[{"labels":["a","b"],"window":0.0}]"#);
    let dump_path = dir.path().join("graph.json");
    let out = run(&[
        "scenegraph-replay",
        "--stream",
        stream.to_str().unwrap(),
        "--groups",
        groups.to_str().unwrap(),
        "--dump",
        dump_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let dump: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&dump_path).unwrap()).unwrap();
    let nodes = dump["nodes"].as_array().unwrap();
    // The t=1 and t=2 sightings never pass the zero window; the t=3 pair
    // does. Plus two `c` nodes.
    assert_eq!(nodes.len(), 4);
    assert_eq!(nodes[0]["label"], "a");
    assert_eq!(nodes[0]["sightings"], 1);
    assert_eq!(nodes[1]["label"], "b");
    assert_eq!(nodes[1]["sightings"], 1);
    assert_eq!(nodes[3]["locked"], true);
}

#[test]
fn synth_is_deterministic_and_truth_sidecar_written() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("scene.cfg");
    write(
        &config,
        "objects = 2\nframes = 12\nseeds_per_object = 1\njitter = 1.0\nspurious = 1\nseed = 5\n",
    );
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let truth = dir.path().join("truth.json");
    for (path, with_truth) in [(&a, true), (&b, false)] {
        let mut args = vec![
            "synth",
            "--config",
            config.to_str().unwrap(),
            "--out",
            path.to_str().unwrap(),
        ];
        if with_truth {
            args.extend(["--truth", truth.to_str().unwrap()]);
        }
        let out = run(&args);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    }
    assert_eq!(
        std::fs::read(&a).unwrap(),
        std::fs::read(&b).unwrap(),
        "same config, same bytes"
    );
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&truth).unwrap()).unwrap();
    assert_eq!(parsed["track_origins"]["spur000"], serde_json::Value::Null);
    assert_eq!(parsed["track_origins"]["obj00_s00_f"], 0);
}

#[test]
fn plan_mock_backend_round_trip() {
    let dir = TempDir::new().unwrap();
    let plan_path = dir.path().join("plan.json");
    let out = run(&[
        "plan",
        "--backend",
        "mock",
        "--out",
        plan_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let plan: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&plan_path).unwrap()).unwrap();
    let steps = plan["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 3);
    assert_eq!(steps[0]["skill"], "Search");
    assert_eq!(steps[1]["skill"], "Pick");
    assert_eq!(steps[1]["mod_id"], 0);
    assert_eq!(steps[2]["skill"], "Place");
}

#[test]
fn plan_unknown_backend_exits_two() {
    let out = run(&["plan", "--backend", "imaginary", "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn plan_http_requires_config() {
    let out = run(&["plan", "--backend", "http", "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("backend-config"));
}

#[test]
fn threads_env_is_validated_and_output_thread_invariant() {
    let dir = TempDir::new().unwrap();
    let tracks = crossing_tracks(dir.path());

    let out = salient()
        .args(["consolidate", "--tracks", tracks.to_str().unwrap(), "--out", "x.json"])
        .env("SALIENT_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let (d1, d4) = (dir.path().join("d1.json"), dir.path().join("d4.json"));
    for (path, threads) in [(&d1, "1"), (&d4, "4")] {
        let out = salient()
            .args([
                "consolidate",
                "--tracks",
                tracks.to_str().unwrap(),
                "--out",
                path.to_str().unwrap(),
            ])
            .env("SALIENT_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    }
    assert_eq!(std::fs::read(&d1).unwrap(), std::fs::read(&d4).unwrap());
}
