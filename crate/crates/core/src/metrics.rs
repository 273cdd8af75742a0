//! Scene evaluation metrics: displacement errors, off-road rate, collision
//! rate, hard-braking rate, with optional per-horizon breakdown.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::CoreError;
use crate::geom::{obb_overlap, point_in_drivable, DrivableArea, OrientedBox, Vec2};
use crate::track::AgentTrack;

/// Hard-braking threshold in m/s².
pub const HARD_BRAKING_THRESHOLD: f64 = -3.0;

/// How the longitudinal braking signal is formed from acceleration and yaw.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HbrProjection {
    /// a_lon = ‖a‖·cos(ψ). Never negative for |ψ| < π/2, so the signal is
    /// yaw-frame dependent; kept as the default definition.
    #[default]
    NormCos,
    /// a_lon = a · (cos ψ, sin ψ), the conventional heading projection.
    HeadingDot,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsOptions {
    #[serde(rename = "hbr-projection")]
    pub hbr_projection: HbrProjection,
    pub hbr_ego_only: bool,
}

/// Mean over agents of the per-agent mean displacement on valid steps.
pub fn ade(pred: &[Vec<Vec2>], reference: &[Vec<Vec2>], valid: &[Vec<bool>]) -> Result<f64, CoreError> {
    check_shapes(pred, reference, valid)?;
    let mut agent_means = Vec::new();
    for i in 0..pred.len() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for t in 0..pred[i].len() {
            if valid[i][t] {
                sum += (pred[i][t] - reference[i][t]).norm();
                count += 1;
            }
        }
        if count > 0 {
            agent_means.push(sum / count as f64);
        }
    }
    if agent_means.is_empty() {
        return Err(CoreError::UndefinedMetric("no valid (agent, step) for ADE".into()));
    }
    Ok(agent_means.iter().sum::<f64>() / agent_means.len() as f64)
}

/// Mean over agents of the displacement at each agent's final valid step.
pub fn fde(pred: &[Vec<Vec2>], reference: &[Vec<Vec2>], valid: &[Vec<bool>]) -> Result<f64, CoreError> {
    check_shapes(pred, reference, valid)?;
    let mut finals = Vec::new();
    for i in 0..pred.len() {
        if let Some(t) = valid[i].iter().rposition(|&v| v) {
            finals.push((pred[i][t] - reference[i][t]).norm());
        }
    }
    if finals.is_empty() {
        return Err(CoreError::UndefinedMetric("no valid final step for FDE".into()));
    }
    Ok(finals.iter().sum::<f64>() / finals.len() as f64)
}

/// Fraction of valid waypoints outside the drivable area.
pub fn orr(pred: &[Vec<Vec2>], valid: &[Vec<bool>], area: &DrivableArea) -> Result<f64, CoreError> {
    if area.is_empty() {
        return Err(CoreError::UndefinedMetric("empty drivable area for ORR".into()));
    }
    let mut total = 0usize;
    let mut outside = 0usize;
    for i in 0..pred.len() {
        for t in 0..pred[i].len() {
            if valid[i][t] {
                total += 1;
                if !point_in_drivable(pred[i][t], area) {
                    outside += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(CoreError::UndefinedMetric("no valid waypoints for ORR".into()));
    }
    Ok(outside as f64 / total as f64)
}

fn check_shapes(pred: &[Vec<Vec2>], reference: &[Vec<Vec2>], valid: &[Vec<bool>]) -> Result<(), CoreError> {
    if pred.len() != reference.len() || pred.len() != valid.len() {
        return Err(CoreError::ShapeMismatch("agent counts differ".into()));
    }
    for i in 0..pred.len() {
        if pred[i].len() != reference[i].len() || pred[i].len() != valid[i].len() {
            return Err(CoreError::ShapeMismatch(format!("agent {i} lengths differ")));
        }
    }
    Ok(())
}

/// True iff the ego box overlaps any other valid agent box at any step.
pub fn scene_collided(tracks: &[AgentTrack]) -> bool {
    if tracks.is_empty() {
        return false;
    }
    let ego = &tracks[0];
    for other in &tracks[1..] {
        let steps = ego.len().min(other.len());
        for t in 0..steps {
            if !(ego.is_valid(t) && other.is_valid(t)) {
                continue;
            }
            let be = OrientedBox::new(ego.position(t), ego.poses[t].yaw, ego.extent);
            let bo = OrientedBox::new(other.position(t), other.poses[t].yaw, other.extent);
            if obb_overlap(&be, &bo) {
                return true;
            }
        }
    }
    false
}

/// Fraction of scenes with at least one ego–agent collision.
pub fn collision_rate(scenes: &[Vec<AgentTrack>]) -> f64 {
    if scenes.is_empty() {
        return 0.0;
    }
    let collided = scenes.iter().filter(|s| scene_collided(s)).count();
    collided as f64 / scenes.len() as f64
}

/// Per-scene hard-braking fraction; `None` when the scene has no valid
/// acceleration steps (excluded from the mean).
pub fn scene_hbr(tracks: &[AgentTrack], dt: f64, opts: &MetricsOptions) -> Option<f64> {
    let mut events = 0usize;
    let mut total = 0usize;
    let considered: &[AgentTrack] = if opts.hbr_ego_only { &tracks[..1.min(tracks.len())] } else { tracks };
    for track in considered {
        if track.len() < 3 {
            continue;
        }
        for t in 0..track.len() - 2 {
            if !(track.is_valid(t) && track.is_valid(t + 1) && track.is_valid(t + 2)) {
                continue;
            }
            total += 1;
            let accel = (track.position(t + 2) - track.position(t + 1).scale(2.0) + track.position(t))
                .scale(1.0 / (dt * dt));
            let yaw = track.poses[t].yaw;
            let a_lon = match opts.hbr_projection {
                HbrProjection::NormCos => accel.norm() * yaw.cos(),
                HbrProjection::HeadingDot => accel.dot(Vec2::new(yaw.cos(), yaw.sin())),
            };
            if a_lon < HARD_BRAKING_THRESHOLD {
                events += 1;
            }
        }
    }
    if total == 0 {
        None
    } else {
        Some(events as f64 / total as f64)
    }
}

/// Mean of the per-scene hard-braking rates over scenes that have valid
/// acceleration steps. Errors when every scene is excluded.
pub fn hard_braking_rate(
    scenes: &[Vec<AgentTrack>],
    dt: f64,
    opts: &MetricsOptions,
) -> Result<(f64, Vec<Option<f64>>), CoreError> {
    let per_scene: Vec<Option<f64>> = scenes.iter().map(|s| scene_hbr(s, dt, opts)).collect();
    let included: Vec<f64> = per_scene.iter().filter_map(|&h| h).collect();
    if included.is_empty() {
        return Err(CoreError::UndefinedMetric("no scene has valid acceleration steps".into()));
    }
    Ok((included.iter().sum::<f64>() / included.len() as f64, per_scene))
}

/// One scene's evaluation inputs: predicted rollout vs recorded reference.
#[derive(Clone, Debug)]
pub struct EvalScene {
    pub scene_id: String,
    pub dt: f64,
    pub pred: Vec<AgentTrack>,
    pub reference: Vec<AgentTrack>,
    pub drivable: DrivableArea,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub ade: f64,
    pub fde: f64,
    pub orr: f64,
    pub collided: bool,
    pub hbr: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub ade: f64,
    pub fde: f64,
    pub orr: f64,
    pub collision_rate: f64,
    pub hbr: f64,
    pub scenes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub horizon_s: f64,
    pub per_scene: BTreeMap<String, SceneMetrics>,
    pub aggregate: AggregateMetrics,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_scene: BTreeMap<String, SceneMetrics>,
    pub aggregate: AggregateMetrics,
    pub horizons: Vec<HorizonReport>,
    pub warnings: Vec<String>,
}

fn truncated(track: &AgentTrack, steps: usize) -> AgentTrack {
    track.segment(0, steps)
}

fn evaluate_block(
    scenes: &[EvalScene],
    steps_limit: Option<usize>,
    opts: &MetricsOptions,
    warnings: &mut Vec<String>,
) -> (BTreeMap<String, SceneMetrics>, AggregateMetrics) {
    let mut per_scene = BTreeMap::new();
    for scene in scenes {
        let pred: Vec<AgentTrack> = scene
            .pred
            .iter()
            .map(|t| steps_limit.map_or_else(|| t.clone(), |s| truncated(t, s)))
            .collect();
        let mut pred_pos = Vec::new();
        let mut ref_pos = Vec::new();
        let mut masks = Vec::new();
        for (p, r) in pred.iter().zip(&scene.reference) {
            let common = p.len().min(r.len());
            pred_pos.push(p.positions()[..common].to_vec());
            ref_pos.push(r.positions()[..common].to_vec());
            masks.push(
                (0..common)
                    .map(|t| p.is_valid(t) && r.is_valid(t))
                    .collect::<Vec<bool>>(),
            );
        }
        let ade_v = ade(&pred_pos, &ref_pos, &masks);
        let fde_v = fde(&pred_pos, &ref_pos, &masks);
        let pred_all: Vec<Vec<Vec2>> = pred.iter().map(|t| t.positions()).collect();
        let valid_all: Vec<Vec<bool>> = pred.iter().map(|t| t.valid.clone()).collect();
        let orr_v = orr(&pred_all, &valid_all, &scene.drivable);
        let (ade_v, fde_v, orr_v) = match (ade_v, fde_v, orr_v) {
            (Ok(a), Ok(f), Ok(o)) => (a, f, o),
            (a, f, o) => {
                let err = [a.err(), f.err(), o.err()]
                    .into_iter()
                    .flatten()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join("; ");
                warnings.push(format!("scene {} skipped: {}", scene.scene_id, err));
                continue;
            }
        };
        per_scene.insert(
            scene.scene_id.clone(),
            SceneMetrics {
                ade: ade_v,
                fde: fde_v,
                orr: orr_v,
                collided: scene_collided(&pred),
                hbr: scene_hbr(&pred, scene.dt, opts),
            },
        );
    }
    let aggregate = aggregate_metrics(&per_scene);
    (per_scene, aggregate)
}

fn aggregate_metrics(per_scene: &BTreeMap<String, SceneMetrics>) -> AggregateMetrics {
    let n = per_scene.len();
    if n == 0 {
        return AggregateMetrics::default();
    }
    let nf = n as f64;
    let hbr_vals: Vec<f64> = per_scene.values().filter_map(|m| m.hbr).collect();
    AggregateMetrics {
        ade: per_scene.values().map(|m| m.ade).sum::<f64>() / nf,
        fde: per_scene.values().map(|m| m.fde).sum::<f64>() / nf,
        orr: per_scene.values().map(|m| m.orr).sum::<f64>() / nf,
        collision_rate: per_scene.values().filter(|m| m.collided).count() as f64 / nf,
        hbr: if hbr_vals.is_empty() {
            0.0
        } else {
            hbr_vals.iter().sum::<f64>() / hbr_vals.len() as f64
        },
        scenes: n,
    }
}

/// Full report plus per-horizon breakdown; horizons exceeding the data are
/// skipped with a warning.
pub fn evaluate(scenes: &[EvalScene], horizons: &[f64], opts: &MetricsOptions) -> MetricsReport {
    let mut warnings = Vec::new();
    let (per_scene, aggregate) = evaluate_block(scenes, None, opts, &mut warnings);
    let mut horizon_reports = Vec::new();
    for &h in horizons {
        let mut ok = true;
        let mut steps = 0usize;
        for scene in scenes {
            let s = (h / scene.dt).round() as usize;
            let max_len = scene.pred.iter().map(|t| t.len()).max().unwrap_or(0);
            if s == 0 || s > max_len {
                warnings.push(format!("horizon {h}s exceeds data for scene {}; skipped", scene.scene_id));
                ok = false;
                break;
            }
            steps = s;
        }
        if !ok {
            continue;
        }
        let (ps, agg) = evaluate_block(scenes, Some(steps), opts, &mut warnings);
        horizon_reports.push(HorizonReport {
            horizon_s: h,
            per_scene: ps,
            aggregate: agg,
        });
    }
    MetricsReport {
        per_scene,
        aggregate,
        horizons: horizon_reports,
        warnings,
    }
}
