//! End-to-end pipeline through the binary: gen-suite → mine → rollout →
//! eval → report, plus error paths and ablation flag effects.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crashgen_core::files::{self, ConflictFileDoc, ResultFileDoc};
use crashgen_core::geom::{Pose, Vec2};
use crashgen_core::metrics::MetricsReport;
use crashgen_core::track::{AgentTrack, Scene};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crashgen"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("crashgen_cli_{}_{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_test_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(
        &path,
        r#"{
  "sampler": {
    "diffusion_steps": 15,
    "guidance_steps": 10,
    "perturb_lr": 0.05,
    "final_step_iters": 5,
    "final_step_lr": 0.1,
    "candidates_per_scene": 2,
    "action_horizon": 5,
    "history_len": 5,
    "future_len": 25,
    "dt": 0.1,
    "rollout_horizon": 30
  },
  "seed": 77
}"#,
    )
    .unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn crashgen");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Two far-apart co-moving agents: no candidate survives tier filtering.
fn write_invalid_mining_scene(dir: &Path) {
    let steps = 50;
    let dt = 0.1;
    let make = |id: u64, y: f64| {
        let poses: Vec<Pose> = (0..steps)
            .map(|t| Pose::new(Vec2::new(5.0 * t as f64 * dt, y), 0.0))
            .collect();
        AgentTrack::fully_valid(id, (2.0, 1.0), poses)
    };
    let scene = Scene {
        agents: vec![make(0, 0.0), make(1, 60.0)],
        dt,
        drivable: crashgen_core::geom::DrivableArea::new(
            vec![vec![
                Vec2::new(-10.0, -70.0),
                Vec2::new(40.0, -70.0),
                Vec2::new(40.0, 70.0),
                Vec2::new(-10.0, 70.0),
            ]],
            vec![],
        ),
        history_len: 5,
        future_len: steps - 5,
    };
    files::save_scene(&dir.join("parallel_far_000.json"), "parallel_far_000", &scene).unwrap();
}

#[test]
fn full_pipeline_runs_and_reports() {
    let dir = tmp("pipeline");
    let config = write_test_config(&dir);
    let scenes = dir.join("scenes");

    run_ok(bin().args(["gen-suite", "--count", "6", "--seed", "2024"]).arg("--out").arg(&scenes));
    assert_eq!(fs::read_dir(&scenes).unwrap().count(), 6);
    write_invalid_mining_scene(&scenes);

    let conflicts = dir.join("conflicts.json");
    run_ok(
        bin()
            .args(["mine"])
            .arg("--scenes")
            .arg(&scenes)
            .arg("--out")
            .arg(&conflicts)
            .arg("--config")
            .arg(&config),
    );
    let doc: ConflictFileDoc = serde_json::from_str(&fs::read_to_string(&conflicts).unwrap()).unwrap();
    assert_eq!(doc.records.len(), 6);
    assert_eq!(doc.invalid_scenes, vec!["parallel_far_000".to_string()]);
    assert!(doc.errors.is_empty());

    let guided_dir = dir.join("rollouts_guided");
    let out = run_ok(
        bin()
            .args(["rollout"])
            .arg("--scenes")
            .arg(&scenes)
            .arg("--conflicts")
            .arg(&conflicts)
            .arg("--out")
            .arg(&guided_dir)
            .arg("--config")
            .arg(&config),
    );
    // The unmined scene is skipped with a warning, not a failure.
    assert!(String::from_utf8_lossy(&out.stderr).contains("parallel_far_000"));
    let results: Vec<_> = fs::read_dir(&guided_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().to_string_lossy().ends_with(".result.json"))
        .collect();
    assert_eq!(results.len(), 6);

    let unguided_dir = dir.join("rollouts_unguided");
    run_ok(
        bin()
            .args(["rollout", "--unguided"])
            .arg("--scenes")
            .arg(&scenes)
            .arg("--conflicts")
            .arg(&conflicts)
            .arg("--out")
            .arg(&unguided_dir)
            .arg("--config")
            .arg(&config),
    );

    for (label, dir_path) in [("guided", &guided_dir), ("unguided", &unguided_dir)] {
        let metrics = dir.join(format!("metrics_{label}"));
        run_ok(
            bin()
                .args(["eval", "--horizons", "1,2,3"])
                .arg("--results")
                .arg(dir_path)
                .arg("--scenes")
                .arg(&scenes)
                .arg("--out")
                .arg(&metrics)
                .arg("--config")
                .arg(&config),
        );
        let report: MetricsReport =
            serde_json::from_str(&fs::read_to_string(metrics.with_extension("json")).unwrap()).unwrap();
        assert_eq!(report.aggregate.scenes, 6);
        assert_eq!(report.horizons.len(), 3);
        let csv = fs::read_to_string(metrics.with_extension("csv")).unwrap();
        // Header plus 6 scenes × 3 horizons.
        assert_eq!(csv.trim_end().lines().count(), 1 + 18);
    }

    let report_out = dir.join("comparison");
    run_ok(
        bin()
            .args(["report"])
            .arg(dir.join("metrics_guided.json"))
            .arg(dir.join("metrics_unguided.json"))
            .arg("--out")
            .arg(&report_out),
    );
    let table = fs::read_to_string(report_out.with_extension("txt")).unwrap();
    assert!(table.contains("metrics_guided"));
    assert!(table.contains("metrics_unguided"));
    let csv = fs::read_to_string(report_out.with_extension("csv")).unwrap();
    assert!(csv.starts_with("run,horizon_s,ade,fde,orr,cr,hbr"));

    fs::remove_dir_all(&dir).ok();
}

#[test]
fn mine_records_unreadable_scene_and_exits_partial() {
    let dir = tmp("mine_errors");
    let scenes = dir.join("scenes");
    run_ok(bin().args(["gen-suite", "--count", "2", "--seed", "5"]).arg("--out").arg(&scenes));
    fs::write(scenes.join("broken.json"), "{ not json").unwrap();

    let conflicts = dir.join("conflicts.json");
    let out = bin()
        .args(["mine"])
        .arg("--scenes")
        .arg(&scenes)
        .arg("--out")
        .arg(&conflicts)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "partial failure expected");
    let doc: ConflictFileDoc = serde_json::from_str(&fs::read_to_string(&conflicts).unwrap()).unwrap();
    assert_eq!(doc.records.len(), 2);
    assert_eq!(doc.errors.len(), 1);
    assert_eq!(doc.errors[0].scene_id, "broken");
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn invalid_configuration_exits_2() {
    let out = bin()
        .args(["mine", "--scenes", "/nonexistent_dir_xyz", "--out", "/tmp/x.json"])
        .arg("--config")
        .arg("/nonexistent_config_xyz.json")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablation_flags_change_diagnostics_semantics() {
    let dir = tmp("ablations");
    let config = write_test_config(&dir);
    let scenes = dir.join("scenes");
    run_ok(bin().args(["gen-suite", "--count", "1", "--seed", "11"]).arg("--out").arg(&scenes));
    let conflicts = dir.join("conflicts.json");
    run_ok(
        bin()
            .args(["mine"])
            .arg("--scenes")
            .arg(&scenes)
            .arg("--out")
            .arg(&conflicts)
            .arg("--config")
            .arg(&config),
    );
    let doc: ConflictFileDoc = serde_json::from_str(&fs::read_to_string(&conflicts).unwrap()).unwrap();
    let record = &doc.records[0];

    let run_flags = |flags: &[&str], out_name: &str| -> ResultFileDoc {
        let out_dir = dir.join(out_name);
        let mut cmd = bin();
        cmd.args(["rollout"]);
        for f in flags {
            cmd.arg(f);
        }
        run_ok(
            cmd.arg("--scenes")
                .arg(&scenes)
                .arg("--conflicts")
                .arg(&conflicts)
                .arg("--out")
                .arg(&out_dir)
                .arg("--config")
                .arg(&config),
        );
        let path = out_dir.join(format!("{}.result.json", record.scene_id));
        serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
    };

    let full = run_flags(&[], "full");
    let no_atc = run_flags(&["--no-atc"], "no_atc");
    let no_pg = run_flags(&["--no-pg"], "no_pg");

    // --no-atc: window arrival indices are never compressed.
    let future_cap = 25 - 1;
    for diag in &no_atc.diagnostics {
        let g = diag.guidance.as_ref().unwrap();
        let want_e = record.tau_e.saturating_sub(diag.t_global).min(future_cap);
        let want_a = record.tau_a.saturating_sub(diag.t_global).min(future_cap);
        assert_eq!((g.tau_e_eff, g.tau_a_eff), (want_e, want_a));
    }
    // Full config compresses the gap after the midpoint.
    let mined_gap = record.tau_a.abs_diff(record.tau_e);
    assert!(full
        .diagnostics
        .iter()
        .filter(|d| d.progress >= 0.5)
        .any(|d| {
            let g = d.guidance.as_ref().unwrap();
            g.tau_a_eff.abs_diff(g.tau_e_eff) < mined_gap
        }));
    // --no-pg: stage multiplier pinned to 1.
    for diag in &no_pg.diagnostics {
        assert_eq!(diag.guidance.as_ref().unwrap().stage_multiplier, 1.0);
    }
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn eval_excludes_orphan_results_with_warning() {
    let dir = tmp("orphans");
    let config = write_test_config(&dir);
    let scenes = dir.join("scenes");
    run_ok(bin().args(["gen-suite", "--count", "2", "--seed", "3"]).arg("--out").arg(&scenes));
    let conflicts = dir.join("conflicts.json");
    run_ok(
        bin()
            .args(["mine"])
            .arg("--scenes")
            .arg(&scenes)
            .arg("--out")
            .arg(&conflicts)
            .arg("--config")
            .arg(&config),
    );
    let rollouts = dir.join("rollouts");
    run_ok(
        bin()
            .args(["rollout"])
            .arg("--scenes")
            .arg(&scenes)
            .arg("--conflicts")
            .arg(&conflicts)
            .arg("--out")
            .arg(&rollouts)
            .arg("--config")
            .arg(&config),
    );
    // Forge an orphan result pointing at an unknown scene.
    let some_result = fs::read_dir(&rollouts)
        .unwrap()
        .filter_map(|e| e.ok())
        .find(|e| e.path().to_string_lossy().ends_with(".result.json"))
        .unwrap()
        .path();
    let mut doc: ResultFileDoc = serde_json::from_str(&fs::read_to_string(&some_result).unwrap()).unwrap();
    doc.scene_id = "ghost_scene".into();
    fs::write(
        rollouts.join("ghost_scene.result.json"),
        serde_json::to_string(&doc).unwrap(),
    )
    .unwrap();

    let metrics = dir.join("metrics");
    let out = run_ok(
        bin()
            .args(["eval"])
            .arg("--results")
            .arg(&rollouts)
            .arg("--scenes")
            .arg(&scenes)
            .arg("--out")
            .arg(&metrics)
            .arg("--config")
            .arg(&config),
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("orphan"));
    let report: MetricsReport =
        serde_json::from_str(&fs::read_to_string(metrics.with_extension("json")).unwrap()).unwrap();
    assert!(!report.per_scene.contains_key("ghost_scene"));
    assert_eq!(report.aggregate.scenes, 2);
    fs::remove_dir_all(&dir).ok();
}
