//! File schemas and conversions: scene files, mined-conflict files, run
//! configuration, rollout result files, metric reports and comparison tables.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use thiserror::Error;

use crate::canon::to_canonical_json;
use crate::geom::{DrivableArea, Pose, Vec2};
use crate::guidance::GuidanceConfig;
use crate::metrics::{MetricsOptions, MetricsReport};
use crate::mining::{CandidateConflict, ConflictTarget, ConflictType, MiningRules};
use crate::sampler::{BestOfResult, SamplerConfig};
use crate::track::{AgentTrack, Scene};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("schema violations in {path}:\n  {}", .violations.join("\n  "))]
    Schema {
        path: String,
        violations: Vec<String>,
    },
}

/// A scene plus its identifier from the file.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedScene {
    pub id: String,
    pub scene: Scene,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrackStepDoc {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub valid: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneAgentDoc {
    pub id: u64,
    /// [length, width] in meters.
    pub extent: [f64; 2],
    pub track: Vec<TrackStepDoc>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DrivableDoc {
    pub polygons: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    pub holes: Vec<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneFileDoc {
    pub scene_id: String,
    pub dt: f64,
    pub history_len: usize,
    pub future_len: usize,
    pub agents: Vec<SceneAgentDoc>,
    pub drivable: DrivableDoc,
}

fn poly_to_doc(poly: &[Vec2]) -> Vec<[f64; 2]> {
    poly.iter().map(|p| [p.x, p.y]).collect()
}

fn poly_from_doc(poly: &[[f64; 2]]) -> Vec<Vec2> {
    poly.iter().map(|&[x, y]| Vec2::new(x, y)).collect()
}

pub fn scene_to_doc(id: &str, scene: &Scene) -> SceneFileDoc {
    SceneFileDoc {
        scene_id: id.to_string(),
        dt: scene.dt,
        history_len: scene.history_len,
        future_len: scene.future_len,
        agents: scene
            .agents
            .iter()
            .map(|a| SceneAgentDoc {
                id: a.agent_id,
                extent: [a.extent.0, a.extent.1],
                track: a
                    .poses
                    .iter()
                    .zip(&a.valid)
                    .enumerate()
                    .map(|(t, (pose, &valid))| TrackStepDoc {
                        t,
                        x: pose.position.x,
                        y: pose.position.y,
                        yaw: pose.yaw,
                        valid,
                    })
                    .collect(),
            })
            .collect(),
        drivable: DrivableDoc {
            polygons: scene.drivable.polygons.iter().map(|p| poly_to_doc(p)).collect(),
            holes: scene.drivable.holes.iter().map(|p| poly_to_doc(p)).collect(),
        },
    }
}

/// Validate a parsed document and build the scene. Collects every violation
/// rather than stopping at the first.
pub fn doc_to_scene(doc: &SceneFileDoc) -> Result<LoadedScene, Vec<String>> {
    let mut violations = Vec::new();
    if doc.agents.is_empty() {
        violations.push("scene has no agents".into());
    }
    if !doc.agents.iter().any(|a| a.id == 0) {
        violations.push("ego (id 0) absent".into());
    }
    let mut seen = std::collections::BTreeSet::new();
    for agent in &doc.agents {
        if !seen.insert(agent.id) {
            violations.push(format!("duplicate agent id {}", agent.id));
        }
        for (idx, step) in agent.track.iter().enumerate() {
            if step.t != idx {
                violations.push(format!(
                    "agent {}: track steps not contiguous from t=0 (index {idx} has t={})",
                    agent.id, step.t
                ));
                break;
            }
        }
    }
    let timeline = doc.agents.first().map_or(0, |a| a.track.len());
    if doc.history_len + doc.future_len != timeline {
        violations.push(format!(
            "history_len {} + future_len {} != track length {timeline}",
            doc.history_len, doc.future_len
        ));
    }
    let mut agents: Vec<AgentTrack> = doc
        .agents
        .iter()
        .map(|a| AgentTrack {
            agent_id: a.id,
            extent: (a.extent[0], a.extent[1]),
            poses: a
                .track
                .iter()
                .map(|s| Pose::new(Vec2::new(s.x, s.y), s.yaw))
                .collect(),
            valid: a.track.iter().map(|s| s.valid).collect(),
        })
        .collect();
    // Ego goes to index 0 regardless of file order.
    agents.sort_by_key(|a| a.agent_id);
    let scene = Scene {
        agents,
        dt: doc.dt,
        drivable: DrivableArea {
            polygons: doc.drivable.polygons.iter().map(|p| poly_from_doc(p)).collect(),
            holes: doc.drivable.holes.iter().map(|p| poly_from_doc(p)).collect(),
        },
        history_len: doc.history_len,
        future_len: doc.future_len,
    };
    if violations.is_empty() {
        if let Err(e) = scene.validate() {
            violations.push(e.to_string());
        }
    }
    if violations.is_empty() {
        Ok(LoadedScene {
            id: doc.scene_id.clone(),
            scene,
        })
    } else {
        Err(violations)
    }
}

pub fn load_scene(path: &Path) -> Result<LoadedScene, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let doc: SceneFileDoc = serde_json::from_str(&text).map_err(|source| LoadError::Json {
        path: path.display().to_string(),
        source,
    })?;
    doc_to_scene(&doc).map_err(|violations| LoadError::Schema {
        path: path.display().to_string(),
        violations,
    })
}

pub fn save_scene(path: &Path, id: &str, scene: &Scene) -> std::io::Result<()> {
    let doc = scene_to_doc(id, scene);
    let text = to_canonical_json(&doc).expect("scene serializes");
    fs::write(path, text)
}

/// One mined record of the conflict file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConflictRecordDoc {
    pub scene_id: String,
    pub adversary_id: u64,
    pub conflict_point: [f64; 2],
    pub tau_e: usize,
    pub tau_a: usize,
    pub d_min: f64,
    pub delta_t: f64,
    pub v_rel: f64,
    pub score: f64,
    #[serde(rename = "type")]
    pub conflict_kind: String,
    pub subtype: String,
    pub tier: u8,
    pub guidance_weight: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneErrorDoc {
    pub scene_id: String,
    pub message: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConflictFileDoc {
    pub schema_version: u32,
    pub tool_version: String,
    pub rules: MiningRules,
    pub records: Vec<ConflictRecordDoc>,
    pub invalid_scenes: Vec<String>,
    pub errors: Vec<SceneErrorDoc>,
}

pub fn target_to_record(scene_id: &str, target: &ConflictTarget) -> ConflictRecordDoc {
    let c = &target.candidate;
    ConflictRecordDoc {
        scene_id: scene_id.to_string(),
        adversary_id: c.agent_id,
        conflict_point: [c.conflict_point.x, c.conflict_point.y],
        tau_e: c.tau_e,
        tau_a: c.tau_a,
        d_min: c.d_min,
        delta_t: c.delta_t,
        v_rel: c.v_rel,
        score: c.score,
        conflict_kind: c.conflict_type.kind_str().to_string(),
        subtype: c.conflict_type.subtype_str().to_string(),
        tier: c.tier,
        guidance_weight: target.guidance_weight,
    }
}

pub fn record_to_target(record: &ConflictRecordDoc) -> Result<ConflictTarget, String> {
    let conflict_type = match (record.conflict_kind.as_str(), record.subtype.as_str()) {
        ("intersection", "none") => ConflictType::Intersection,
        ("following", "rear_approach") => ConflictType::RearApproach,
        ("following", "lead_braking") => ConflictType::LeadBraking,
        (k, s) => return Err(format!("unknown conflict type {k}/{s}")),
    };
    Ok(ConflictTarget {
        candidate: CandidateConflict {
            agent_id: record.adversary_id,
            conflict_point: Vec2::new(record.conflict_point[0], record.conflict_point[1]),
            tau_e: record.tau_e,
            tau_a: record.tau_a,
            d_min: record.d_min,
            delta_t: record.delta_t,
            v_rel: record.v_rel,
            score: record.score,
            conflict_type,
            tier: record.tier,
        },
        guidance_weight: record.guidance_weight,
    })
}

/// Run configuration; omitted blocks take the library defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mining_rules: MiningRules,
    pub guidance: GuidanceConfig,
    pub sampler: SamplerConfig,
    pub metrics: MetricsOptions,
    pub seed: u64,
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| LoadError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Rollout output: the winning rollout in the scene/track schema plus the
/// diagnostics and candidate summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultFileDoc {
    pub schema_version: u32,
    pub scene_id: String,
    pub dt: f64,
    pub seed: u64,
    pub guided: bool,
    pub selected_candidate: usize,
    pub adversary_id: u64,
    pub min_ego_adv_distance: f64,
    pub collided: bool,
    pub agents: Vec<SceneAgentDoc>,
    pub diagnostics: Vec<crate::sampler::ReplanDiagnostics>,
    pub candidates: Vec<crate::sampler::CandidateSummary>,
    pub flags: Vec<String>,
}

pub fn result_to_doc(
    scene_id: &str,
    dt: f64,
    base_seed: u64,
    guided: bool,
    best: &BestOfResult,
) -> ResultFileDoc {
    let w = &best.winner;
    ResultFileDoc {
        schema_version: SCHEMA_VERSION,
        scene_id: scene_id.to_string(),
        dt,
        seed: base_seed,
        guided,
        selected_candidate: w.selected_candidate,
        adversary_id: w.adversary_id,
        min_ego_adv_distance: w.min_ego_adv_distance,
        collided: w.collided,
        agents: w
            .tracks
            .iter()
            .map(|a| SceneAgentDoc {
                id: a.agent_id,
                extent: [a.extent.0, a.extent.1],
                track: a
                    .poses
                    .iter()
                    .zip(&a.valid)
                    .enumerate()
                    .map(|(t, (pose, &valid))| TrackStepDoc {
                        t,
                        x: pose.position.x,
                        y: pose.position.y,
                        yaw: pose.yaw,
                        valid,
                    })
                    .collect(),
            })
            .collect(),
        diagnostics: w.diagnostics.clone(),
        candidates: best.candidates.clone(),
        flags: w.flags.clone(),
    }
}

pub fn doc_to_tracks(agents: &[SceneAgentDoc]) -> Vec<AgentTrack> {
    agents
        .iter()
        .map(|a| AgentTrack {
            agent_id: a.id,
            extent: (a.extent[0], a.extent[1]),
            poses: a
                .track
                .iter()
                .map(|s| Pose::new(Vec2::new(s.x, s.y), s.yaw))
                .collect(),
            valid: a.track.iter().map(|s| s.valid).collect(),
        })
        .collect()
}

pub fn load_result(path: &Path) -> Result<ResultFileDoc, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| LoadError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Flat CSV: one row per scene per horizon, fixed column order.
/// Without a horizon breakdown each scene gets one row at the full duration.
pub fn report_to_csv(report: &MetricsReport, full_duration_s: f64) -> String {
    let mut out = String::from("scene_id,horizon_s,ade,fde,orr,collided,hbr\n");
    let blocks: Vec<(f64, &std::collections::BTreeMap<String, crate::metrics::SceneMetrics>)> =
        if report.horizons.is_empty() {
            vec![(full_duration_s, &report.per_scene)]
        } else {
            report.horizons.iter().map(|h| (h.horizon_s, &h.per_scene)).collect()
        };
    for (horizon, per_scene) in blocks {
        for (id, m) in per_scene {
            let _ = writeln!(
                out,
                "{id},{horizon},{},{},{},{},{}",
                m.ade,
                m.fde,
                m.orr,
                m.collided,
                fmt_opt(m.hbr)
            );
        }
    }
    out
}

/// Aligned comparison over several runs: one row per (run, horizon), columns
/// ADE/FDE/ORR/CR/HBR. Missing horizons are marked with "-".
pub fn comparison_table(reports: &[(String, MetricsReport)]) -> (String, String) {
    let mut horizons: Vec<Option<u64>> = Vec::new();
    for (_, report) in reports {
        if report.horizons.is_empty() {
            if !horizons.contains(&None) {
                horizons.push(None);
            }
        }
        for h in &report.horizons {
            let key = Some(h.horizon_s.to_bits());
            if !horizons.contains(&key) {
                horizons.push(key);
            }
        }
    }
    horizons.sort_by(|a, b| match (a, b) {
        (None, None) => std::cmp::Ordering::Equal,
        (None, Some(_)) => std::cmp::Ordering::Less,
        (Some(_), None) => std::cmp::Ordering::Greater,
        (Some(x), Some(y)) => f64::from_bits(*x).partial_cmp(&f64::from_bits(*y)).unwrap(),
    });

    let mut csv = String::from("run,horizon_s,ade,fde,orr,cr,hbr\n");
    let mut text = format!(
        "{:<24} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8}\n",
        "run", "horizon", "ade", "fde", "orr", "cr", "hbr"
    );
    for (label, report) in reports {
        for key in &horizons {
            let (hname, agg) = match key {
                None => ("full".to_string(), Some(&report.aggregate)),
                Some(bits) => {
                    let h = f64::from_bits(*bits);
                    (
                        format!("{h}s"),
                        report
                            .horizons
                            .iter()
                            .find(|r| r.horizon_s == h)
                            .map(|r| &r.aggregate),
                    )
                }
            };
            match agg {
                Some(a) => {
                    let _ = writeln!(
                        csv,
                        "{label},{hname},{},{},{},{},{}",
                        a.ade, a.fde, a.orr, a.collision_rate, a.hbr
                    );
                    let _ = writeln!(
                        text,
                        "{:<24} {:>9} {:>9.3} {:>9.3} {:>8.4} {:>8.4} {:>8.4}",
                        label, hname, a.ade, a.fde, a.orr, a.collision_rate, a.hbr
                    );
                }
                None => {
                    let _ = writeln!(csv, "{label},{hname},-,-,-,-,-");
                    let _ = writeln!(
                        text,
                        "{:<24} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8}",
                        label, hname, "-", "-", "-", "-", "-"
                    );
                }
            }
        }
    }
    (text, csv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{AggregateMetrics, SceneMetrics};
    use crate::synth;
    use std::collections::BTreeMap;

    #[test]
    fn scene_doc_round_trip() {
        let (id, scene) = synth::synth_scene(synth::SuiteKind::Crossing, 7, 0);
        let doc = scene_to_doc(&id, &scene);
        let loaded = doc_to_scene(&doc).unwrap();
        assert_eq!(loaded.id, id);
        assert_eq!(loaded.scene, scene);
    }

    #[test]
    fn missing_ego_reported() {
        let (id, scene) = synth::synth_scene(synth::SuiteKind::Crossing, 7, 0);
        let mut doc = scene_to_doc(&id, &scene);
        doc.agents.retain(|a| a.id != 0);
        let err = doc_to_scene(&doc).unwrap_err();
        assert!(err.iter().any(|v| v.contains("ego (id 0) absent")), "{err:?}");
    }

    #[test]
    fn non_contiguous_steps_reported() {
        let (id, scene) = synth::synth_scene(synth::SuiteKind::RearApproach, 7, 1);
        let mut doc = scene_to_doc(&id, &scene);
        doc.agents[1].track[3].t = 9;
        let err = doc_to_scene(&doc).unwrap_err();
        assert!(err.iter().any(|v| v.contains("not contiguous")));
    }

    #[test]
    fn canonical_save_load_byte_stable() {
        let (id, scene) = synth::synth_scene(synth::SuiteKind::LeadBraking, 3, 2);
        let dir = std::env::temp_dir().join(format!("crashgen_io_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("scene.json");
        save_scene(&path, &id, &scene).unwrap();
        let first = std::fs::read(&path).unwrap();
        let loaded = load_scene(&path).unwrap();
        save_scene(&path, &loaded.id, &loaded.scene).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn conflict_record_round_trip() {
        use crate::mining::{mine_scene, MiningRules};
        let (id, scene) = synth::synth_scene(synth::SuiteKind::Crossing, 11, 0);
        let target = mine_scene(&scene, &MiningRules::default()).unwrap();
        let record = target_to_record(&id, &target);
        let back = record_to_target(&record).unwrap();
        assert_eq!(back, target);
        assert_eq!(record.conflict_kind, "intersection");
        assert_eq!(record.subtype, "none");
    }

    #[test]
    fn run_config_defaults_parse_from_empty_object() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        // Ablation flags land in the right place.
        let cfg: RunConfig = serde_json::from_str(r#"{"guidance": {"atc": false}}"#).unwrap();
        assert!(!cfg.guidance.enable_adaptive_timing);
        assert!(cfg.guidance.enable_progressive);
    }

    fn tiny_report(with_horizon: bool) -> MetricsReport {
        let mut per_scene = BTreeMap::new();
        per_scene.insert(
            "s0".to_string(),
            SceneMetrics {
                ade: 1.0,
                fde: 2.0,
                orr: 0.1,
                collided: true,
                hbr: Some(0.05),
            },
        );
        let aggregate = AggregateMetrics {
            ade: 1.0,
            fde: 2.0,
            orr: 0.1,
            collision_rate: 1.0,
            hbr: 0.05,
            scenes: 1,
        };
        let horizons = if with_horizon {
            vec![crate::metrics::HorizonReport {
                horizon_s: 3.0,
                per_scene: per_scene.clone(),
                aggregate,
            }]
        } else {
            Vec::new()
        };
        MetricsReport {
            per_scene,
            aggregate,
            horizons,
            warnings: Vec::new(),
        }
    }

    #[test]
    fn csv_rows_per_scene_per_horizon() {
        let report = tiny_report(true);
        let csv = report_to_csv(&report, 5.0);
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "scene_id,horizon_s,ade,fde,orr,collided,hbr");
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("s0,3,"));
    }

    #[test]
    fn comparison_marks_gaps() {
        let a = tiny_report(true);
        let b = tiny_report(false);
        let (text, csv) = comparison_table(&[("run_a".into(), a), ("run_b".into(), b)]);
        assert!(csv.lines().any(|l| l.starts_with("run_b,3s,-")));
        assert!(text.contains("run_a"));
        assert!(text.contains("run_b"));
    }
}
