//! Progressive conflict-aware guidance: base weights, stage schedule,
//! adaptive arrival-time compression, the guidance loss and its analytic
//! gradient with respect to trajectory waypoints.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::geom::{closest_boundary_point, local_to_world, point_in_drivable, DrivableArea, Pose, Vec2};
use crate::mining::{ConflictTarget, ConflictType};

/// Epsilon of the gradient-safe norm ∇‖x−c‖ = (x−c)/max(‖x−c‖, ε).
pub const SAFE_NORM_EPS: f64 = 1e-9;

/// Where the normalized progress p comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgressSource {
    /// p = t_global / H over the closed-loop rollout (default).
    #[default]
    Rollout,
    /// p = 1 − (k−1)/K over the denoising chain.
    Denoising,
}

/// Guidance configuration; ablation flags serialize as pg/cw/atc/jr.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    /// Progressive stage schedule (PG).
    #[serde(rename = "pg")]
    pub enable_progressive: bool,
    /// Conflict-aware base weights (CW).
    #[serde(rename = "cw")]
    pub enable_conflict_aware: bool,
    /// Adaptive arrival-time compression (ATC).
    #[serde(rename = "atc")]
    pub enable_adaptive_timing: bool,
    /// Jerk regularization (JR).
    #[serde(rename = "jr")]
    pub enable_jerk: bool,
    /// Constant map-collision weight, not modulated by the stage multiplier.
    pub map_weight: f64,
    /// Stage boundaries of the progressive schedule.
    pub stage_breaks: (f64, f64),
    /// Multiplier levels: early plateau, mid endpoint, late endpoint.
    pub stage_levels: (f64, f64, f64),
    /// Progress threshold after which arrival times are compressed.
    pub compression_start: f64,
    #[serde(rename = "progress-source")]
    pub progress_source: ProgressSource,
    /// Scale the conflict term by |mined weight|/50 (off by default; the
    /// mined weight's role in the loss is otherwise unused).
    pub use_mined_weight: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            enable_progressive: true,
            enable_conflict_aware: true,
            enable_adaptive_timing: true,
            enable_jerk: true,
            map_weight: 2.0,
            stage_breaks: (0.3, 0.7),
            stage_levels: (0.2, 1.5, 3.0),
            compression_start: 0.5,
            progress_source: ProgressSource::default(),
            use_mined_weight: false,
        }
    }
}

/// (λ_s, λ_t, λ_j) resolved from the conflict type and score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaseWeights {
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub lambda_j: f64,
}

/// Per-evaluation context: the mined target, normalized progress, the
/// trajectory horizon, frame anchors and the map for the regularizer.
#[derive(Clone, Debug)]
pub struct GuidanceContext<'a> {
    pub target: &'a ConflictTarget,
    /// Normalized progress in [0, 1].
    pub progress: f64,
    /// Prediction horizon in steps; arrival indices are clamped to it.
    pub horizon: usize,
    /// Anchors for callers holding agent-local trajectories.
    pub ego_anchor: Pose,
    pub adv_anchor: Pose,
    pub drivable: Option<&'a DrivableArea>,
}

impl<'a> GuidanceContext<'a> {
    pub fn new(target: &'a ConflictTarget, progress: f64, horizon: usize) -> Self {
        GuidanceContext {
            target,
            progress,
            horizon,
            ego_anchor: Pose::identity(),
            adv_anchor: Pose::identity(),
            drivable: None,
        }
    }

    pub fn with_drivable(mut self, area: &'a DrivableArea) -> Self {
        self.drivable = Some(area);
        self
    }

    /// Transform agent-local trajectories into the world frame using the
    /// context anchors (the loss itself expects world-frame input).
    pub fn to_world(&self, ego_local: &[Vec2], adv_local: &[Vec2]) -> (Vec<Vec2>, Vec<Vec2>) {
        (
            local_to_world(ego_local, self.ego_anchor),
            local_to_world(adv_local, self.adv_anchor),
        )
    }
}

/// Loss value with its raw components and the schedule state used.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// ‖x_e − c‖ + ‖x_a − c‖, unweighted.
    pub spatial: f64,
    /// ‖x_e − x_a‖, unweighted.
    pub sync: f64,
    /// mean(‖j_e‖) + mean(‖j_a‖) over unit-step third differences, unweighted.
    pub jerk: f64,
    /// map_weight × mean squared distance of off-road waypoints to the
    /// drivable boundary (already weighted).
    pub map: f64,
    pub stage_multiplier: f64,
    pub tau_e_eff: usize,
    pub tau_a_eff: usize,
}

/// Conflict-aware base weights; the disabled branch is the ablation default.
pub fn base_weights(conflict_type: ConflictType, score: f64, conflict_aware: bool) -> BaseWeights {
    let (s, t, j) = if !conflict_aware {
        (1.5 * score, 1.0 * score, 0.5)
    } else {
        match conflict_type {
            ConflictType::Intersection => (2.0 * score, 1.5 * score, 0.3),
            ConflictType::RearApproach => (1.5 * score, 1.0 * score, 0.5),
            ConflictType::LeadBraking => (2.5 * score, 0.8 * score, 0.8),
        }
    };
    BaseWeights {
        lambda_s: s.max(0.3),
        lambda_t: t.max(0.2),
        lambda_j: j,
    }
}

/// Piecewise-linear stage multiplier m(p); constant 1 with PG disabled.
/// Out-of-range p is clamped to [0, 1].
pub fn stage_multiplier(p: f64, cfg: &GuidanceConfig) -> f64 {
    if !cfg.enable_progressive {
        return 1.0;
    }
    let p = p.clamp(0.0, 1.0);
    let (b1, b2) = cfg.stage_breaks;
    let (l1, l2, l3) = cfg.stage_levels;
    if p < b1 {
        l1
    } else if p < b2 {
        l1 + (p - b1) / (b2 - b1) * (l2 - l1)
    } else {
        l2 + (p - b2) / (1.0 - b2) * (l3 - l2)
    }
}

/// Shrink the arrival-time gap by (1−p) once p reaches the compression
/// threshold, moving only the later-arriving agent; round half-up and clamp
/// to [0, horizon−1]. Identity for p below the threshold or with ATC off.
pub fn compress_arrival_times(
    tau_e: usize,
    tau_a: usize,
    p: f64,
    horizon: usize,
    cfg: &GuidanceConfig,
) -> (usize, usize) {
    if !cfg.enable_adaptive_timing || p < cfg.compression_start {
        return (tau_e, tau_a);
    }
    let gap = (tau_e as f64 - tau_a as f64).abs() * (1.0 - p.clamp(0.0, 1.0));
    let clamp = |x: f64| -> usize {
        let hi = horizon.saturating_sub(1) as f64;
        x.round().clamp(0.0, hi) as usize
    };
    if tau_e <= tau_a {
        (clamp(tau_e as f64), clamp(tau_e as f64 + gap))
    } else {
        (clamp(tau_a as f64 + gap), clamp(tau_a as f64))
    }
}

fn check_finite(traj: &[Vec2]) -> Result<(), CoreError> {
    if traj.iter().any(|p| !p.is_finite()) {
        return Err(CoreError::InvalidInput("non-finite waypoint".into()));
    }
    Ok(())
}

/// Unit-step third differences j_t = p_{t+3} − 3p_{t+2} + 3p_{t+1} − p_t.
fn third_differences(traj: &[Vec2]) -> Vec<Vec2> {
    if traj.len() < 4 {
        return Vec::new();
    }
    traj.windows(4)
        .map(|w| w[3] - w[2].scale(3.0) + w[1].scale(3.0) - w[0])
        .collect()
}

fn mean_jerk_norm(traj: &[Vec2]) -> f64 {
    let diffs = third_differences(traj);
    if diffs.is_empty() {
        0.0
    } else {
        diffs.iter().map(|j| j.norm()).sum::<f64>() / diffs.len() as f64
    }
}

struct Resolved {
    m: f64,
    scale: f64,
    weights: BaseWeights,
    tau_e: usize,
    tau_a: usize,
}

fn resolve(ego_len: usize, adv_len: usize, ctx: &GuidanceContext, cfg: &GuidanceConfig) -> Resolved {
    let m = stage_multiplier(ctx.progress, cfg);
    let cand = &ctx.target.candidate;
    let (tau_e, tau_a) =
        compress_arrival_times(cand.tau_e, cand.tau_a, ctx.progress, ctx.horizon, cfg);
    let scale = if cfg.use_mined_weight {
        ctx.target.guidance_weight.abs() / 50.0
    } else {
        1.0
    };
    Resolved {
        m,
        scale,
        weights: base_weights(cand.conflict_type, cand.score, cfg.enable_conflict_aware),
        tau_e: tau_e.min(ego_len.saturating_sub(1)),
        tau_a: tau_a.min(adv_len.saturating_sub(1)),
    }
}

fn map_cost(traj: &[Vec2], area: &DrivableArea) -> (f64, Vec<Option<Vec2>>) {
    let mut sum = 0.0;
    let mut closest = Vec::with_capacity(traj.len());
    for &p in traj {
        if point_in_drivable(p, area) {
            closest.push(None);
        } else if let Some((q, d2)) = closest_boundary_point(p, area) {
            sum += d2;
            closest.push(Some(q));
        } else {
            closest.push(None);
        }
    }
    (sum, closest)
}

/// Evaluate the guidance loss on world-frame trajectories at the compressed
/// arrival indices.
pub fn guidance_loss(
    ego_traj: &[Vec2],
    adv_traj: &[Vec2],
    ctx: &GuidanceContext,
    cfg: &GuidanceConfig,
) -> Result<LossBreakdown, CoreError> {
    check_finite(ego_traj)?;
    check_finite(adv_traj)?;
    if ego_traj.is_empty() || adv_traj.is_empty() {
        return Err(CoreError::InvalidInput("empty trajectory".into()));
    }
    let r = resolve(ego_traj.len(), adv_traj.len(), ctx, cfg);
    let c = ctx.target.candidate.conflict_point;
    let x_e = ego_traj[r.tau_e];
    let x_a = adv_traj[r.tau_a];

    let spatial = (x_e - c).norm() + (x_a - c).norm();
    let sync = (x_e - x_a).norm();
    let jerk = if cfg.enable_jerk {
        mean_jerk_norm(ego_traj) + mean_jerk_norm(adv_traj)
    } else {
        0.0
    };
    let map = match ctx.drivable {
        Some(area) if cfg.map_weight != 0.0 && !area.is_empty() => {
            let (se, _) = map_cost(ego_traj, area);
            let (sa, _) = map_cost(adv_traj, area);
            cfg.map_weight * (se + sa) / (ego_traj.len() + adv_traj.len()) as f64
        }
        _ => 0.0,
    };

    let total = r.scale * r.m * (r.weights.lambda_s * spatial + r.weights.lambda_t * sync)
        + r.weights.lambda_j * jerk
        + map;
    Ok(LossBreakdown {
        total,
        spatial,
        sync,
        jerk,
        map,
        stage_multiplier: r.m,
        tau_e_eff: r.tau_e,
        tau_a_eff: r.tau_a,
    })
}

/// Exact gradient of the total loss with respect to every waypoint of both
/// trajectories (world frame). Waypoints no term touches get zero.
pub fn guidance_gradient(
    ego_traj: &[Vec2],
    adv_traj: &[Vec2],
    ctx: &GuidanceContext,
    cfg: &GuidanceConfig,
) -> Result<(LossBreakdown, Vec<Vec2>, Vec<Vec2>), CoreError> {
    let parts = guidance_loss(ego_traj, adv_traj, ctx, cfg)?;
    let r = resolve(ego_traj.len(), adv_traj.len(), ctx, cfg);
    let c = ctx.target.candidate.conflict_point;
    let x_e = ego_traj[r.tau_e];
    let x_a = adv_traj[r.tau_a];

    let mut grad_e = vec![Vec2::ZERO; ego_traj.len()];
    let mut grad_a = vec![Vec2::ZERO; adv_traj.len()];

    let sm = r.scale * r.m;
    // Spatial attraction to the conflict point.
    grad_e[r.tau_e] = grad_e[r.tau_e] + (x_e - c).safe_unit(SAFE_NORM_EPS).scale(sm * r.weights.lambda_s);
    grad_a[r.tau_a] = grad_a[r.tau_a] + (x_a - c).safe_unit(SAFE_NORM_EPS).scale(sm * r.weights.lambda_s);
    // Synchronization between the two arrival states.
    let u = (x_e - x_a).safe_unit(SAFE_NORM_EPS).scale(sm * r.weights.lambda_t);
    grad_e[r.tau_e] = grad_e[r.tau_e] + u;
    grad_a[r.tau_a] = grad_a[r.tau_a] - u;

    if cfg.enable_jerk {
        accumulate_jerk_gradient(ego_traj, r.weights.lambda_j, &mut grad_e);
        accumulate_jerk_gradient(adv_traj, r.weights.lambda_j, &mut grad_a);
    }

    if let Some(area) = ctx.drivable {
        if cfg.map_weight != 0.0 && !area.is_empty() {
            let n = (ego_traj.len() + adv_traj.len()) as f64;
            accumulate_map_gradient(ego_traj, area, cfg.map_weight, n, &mut grad_e);
            accumulate_map_gradient(adv_traj, area, cfg.map_weight, n, &mut grad_a);
        }
    }

    Ok((parts, grad_e, grad_a))
}

fn accumulate_jerk_gradient(traj: &[Vec2], lambda_j: f64, grad: &mut [Vec2]) {
    let diffs = third_differences(traj);
    if diffs.is_empty() {
        return;
    }
    let inv_m = lambda_j / diffs.len() as f64;
    const COEFF: [f64; 4] = [-1.0, 3.0, -3.0, 1.0];
    for (t, j) in diffs.iter().enumerate() {
        let u = j.safe_unit(SAFE_NORM_EPS).scale(inv_m);
        for (i, &coef) in COEFF.iter().enumerate() {
            grad[t + i] = grad[t + i] + u.scale(coef);
        }
    }
}

fn accumulate_map_gradient(traj: &[Vec2], area: &DrivableArea, weight: f64, n: f64, grad: &mut [Vec2]) {
    let (_, closest) = map_cost(traj, area);
    for (t, q) in closest.iter().enumerate() {
        if let Some(q) = q {
            grad[t] = grad[t] + (traj[t] - *q).scale(2.0 * weight / n);
        }
    }
}
