//! Offline conflict mining: per-pair encounter search, classification,
//! scoring, tier filtering, and adversarial target selection.
//!
//! All operations here work on future-segment tracks (step 0 = first future
//! step); [`mine_scene`] extracts those segments from a [`Scene`].

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::CoreError;
use crate::geom::Vec2;
use crate::track::{AgentTrack, Scene};

/// Conflict classification. Following conflicts always carry a subtype.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictType {
    Intersection,
    RearApproach,
    LeadBraking,
}

impl ConflictType {
    pub fn is_following(self) -> bool {
        matches!(self, ConflictType::RearApproach | ConflictType::LeadBraking)
    }

    /// Coarse kind string for the output schema ("intersection"/"following").
    pub fn kind_str(self) -> &'static str {
        if self.is_following() {
            "following"
        } else {
            "intersection"
        }
    }

    /// Subtype string for the output schema ("none" for intersection).
    pub fn subtype_str(self) -> &'static str {
        match self {
            ConflictType::Intersection => "none",
            ConflictType::RearApproach => "rear_approach",
            ConflictType::LeadBraking => "lead_braking",
        }
    }
}

/// Thresholds of the tiered filtering rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningRules {
    pub min_joint_steps: usize,
    pub cos_threshold: f64,
    /// Tier 1 (intersection): arrival-time gap bound in seconds.
    pub tier1_dt_max: f64,
    /// Tier 2 (rear_approach): minimum-distance bound in meters.
    pub tier2_dmin_max: f64,
    /// Tier 3 (lead_braking): minimum-distance bound in meters.
    pub tier3_dmin_max: f64,
    /// Score floor, compared inclusively (boundary passes).
    pub score_min: f64,
}

impl Default for MiningRules {
    fn default() -> Self {
        MiningRules {
            min_joint_steps: 5,
            cos_threshold: 0.8,
            tier1_dt_max: 5.0,
            tier2_dmin_max: 10.0,
            tier3_dmin_max: 12.0,
            score_min: 0.05,
        }
    }
}

/// A scored ego–agent conflict candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateConflict {
    pub agent_id: u64,
    /// Midpoint of the closest spatio-temporal encounter.
    pub conflict_point: Vec2,
    /// Ego arrival step, future-segment-relative.
    pub tau_e: usize,
    /// Adversary arrival step, future-segment-relative.
    pub tau_a: usize,
    /// Minimum inter-agent distance in meters.
    pub d_min: f64,
    /// Arrival-time gap |τ_e − τ_a|·dt in seconds.
    pub delta_t: f64,
    /// Relative speed at the conflict event in m/s.
    pub v_rel: f64,
    pub score: f64,
    pub conflict_type: ConflictType,
    pub tier: u8,
}

/// Mining output: the selected candidate plus its guidance weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictTarget {
    #[serde(flatten)]
    pub candidate: CandidateConflict,
    /// Always ≤ −50.
    pub guidance_weight: f64,
}

/// Conflict-aware pairwise features evaluated at one timestep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeFeatures {
    pub delta_p: Vec2,
    pub delta_v: Vec2,
    /// +∞ when the pair is not closing.
    pub ttc: f64,
    /// Signed time gap to the mined conflict arrival, in seconds.
    pub tti: f64,
    /// Distance from the other agent to the conflict point.
    pub d_int: f64,
    /// Other agent's speed at its conflict arrival step.
    pub v_int: f64,
}

/// Timesteps where both masks are set.
pub fn joint_valid_steps(ego: &AgentTrack, other: &AgentTrack) -> Result<BTreeSet<usize>, CoreError> {
    if ego.len() != other.len() {
        return Err(CoreError::LengthMismatch(ego.len(), other.len()));
    }
    Ok((0..ego.len())
        .filter(|&t| ego.is_valid(t) && other.is_valid(t))
        .collect())
}

/// The closest spatio-temporal encounter over `valid × valid`:
/// (τ_e, τ_a, d_min, conflict point). Ties go to the first minimizing pair
/// in row-major (t_e, then t_a) scan order.
pub fn closest_encounter(
    ego: &AgentTrack,
    other: &AgentTrack,
    valid: &BTreeSet<usize>,
) -> Option<(usize, usize, f64, Vec2)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for &t_e in valid {
        for &t_a in valid {
            let d = (ego.position(t_e) - other.position(t_a)).norm();
            if best.map_or(true, |(_, _, bd)| d < bd) {
                best = Some((t_e, t_a, d));
            }
        }
    }
    best.map(|(t_e, t_a, d)| {
        let c = (ego.position(t_e) + other.position(t_a)).scale(0.5);
        (t_e, t_a, d, c)
    })
}

/// Velocity at step `t` by backward difference; step 0 falls back to the
/// forward difference (the backward one is undefined there).
pub(crate) fn velocity_at(track: &AgentTrack, t: usize, dt: f64) -> Vec2 {
    if t == 0 {
        if track.len() < 2 {
            return Vec2::ZERO;
        }
        (track.position(1) - track.position(0)).scale(1.0 / dt)
    } else {
        (track.position(t) - track.position(t - 1)).scale(1.0 / dt)
    }
}

/// Relative speed at the conflict event:
/// ‖(p_e(τ_e) − p_e(τ_e−1))/dt − (p_a(τ_a) − p_a(τ_a−1))/dt‖.
pub fn relative_speed(ego: &AgentTrack, other: &AgentTrack, tau_e: usize, tau_a: usize, dt: f64) -> f64 {
    (velocity_at(ego, tau_e, dt) - velocity_at(other, tau_a, dt)).norm()
}

/// Coarse travel direction: last valid position minus first valid position.
fn coarse_direction(track: &AgentTrack) -> Option<Vec2> {
    let first = track.first_valid()?;
    let last = track.last_valid()?;
    Some(track.position(last) - track.position(first))
}

/// Classify the pair from coarse travel directions; following conflicts are
/// split by the other agent's signed position along the ego travel direction
/// at the encounter step (behind or coincident → rear_approach).
pub fn classify_conflict(ego: &AgentTrack, other: &AgentTrack) -> ConflictType {
    classify_with(ego, other, MiningRules::default().cos_threshold)
}

pub fn classify_with(ego: &AgentTrack, other: &AgentTrack, cos_threshold: f64) -> ConflictType {
    let d_e = coarse_direction(ego);
    let d_a = coarse_direction(other);
    let cos_theta = match (d_e, d_a) {
        (Some(a), Some(b)) if a.norm() > 0.0 && b.norm() > 0.0 => {
            a.dot(b) / (a.norm() * b.norm())
        }
        // Degenerate direction: treat as crossing.
        _ => 0.0,
    };
    if cos_theta <= cos_threshold {
        return ConflictType::Intersection;
    }
    // Following: order the agents along the ego travel direction at the
    // encounter time (a jointly valid step by construction). Without a joint
    // encounter fall back to the first valid step of each track.
    let dir = d_e.unwrap().safe_unit(1e-12);
    let (p_e, p_a) = match joint_valid_steps(ego, other).ok().filter(|v| !v.is_empty()) {
        Some(valid) => {
            let (tau_e, _, _, _) = closest_encounter(ego, other, &valid).unwrap();
            (ego.position(tau_e), other.position(tau_e))
        }
        None => (
            ego.position(ego.first_valid().unwrap_or(0)),
            other.position(other.first_valid().unwrap_or(0)),
        ),
    };
    if (p_a - p_e).dot(dir) <= 0.0 {
        ConflictType::RearApproach
    } else {
        ConflictType::LeadBraking
    }
}

/// Type-dependent danger score: intersection emphasizes temporal co-arrival,
/// following emphasizes closing distance.
pub fn conflict_score(conflict_type: ConflictType, v_rel: f64, delta_t: f64, d_min: f64) -> f64 {
    match conflict_type {
        ConflictType::Intersection => v_rel / (delta_t + 0.5),
        ConflictType::RearApproach | ConflictType::LeadBraking => v_rel / (d_min + 1.0),
    }
}

/// Tiered filtering: Some(tier) when the candidate survives, None otherwise.
pub fn assign_tier(
    conflict_type: ConflictType,
    delta_t: f64,
    d_min: f64,
    score: f64,
    rules: &MiningRules,
) -> Option<u8> {
    if score < rules.score_min {
        return None;
    }
    match conflict_type {
        ConflictType::Intersection if delta_t < rules.tier1_dt_max => Some(1),
        ConflictType::RearApproach if d_min < rules.tier2_dmin_max => Some(2),
        ConflictType::LeadBraking if d_min < rules.tier3_dmin_max => Some(3),
        _ => None,
    }
}

/// Guidance weight for the selected candidate, always in [−120, −50].
pub fn guidance_weight(conflict_type: Option<ConflictType>, score: f64) -> f64 {
    match conflict_type {
        Some(ConflictType::Intersection) => -80.0 - 40.0 * score.min(1.0),
        Some(ConflictType::RearApproach) | Some(ConflictType::LeadBraking) => {
            -60.0 - 30.0 * score.min(1.0)
        }
        None => -50.0,
    }
}

/// Lexicographic selection over (tier, −score), remaining ties broken by
/// smaller agent id. Empty input means the scene is invalid for mining.
pub fn select_target(candidates: &[CandidateConflict]) -> Option<ConflictTarget> {
    let mut best: Option<&CandidateConflict> = None;
    for cand in candidates {
        let better = match best {
            None => true,
            Some(b) => {
                (cand.tier, -cand.score, cand.agent_id) < (b.tier, -b.score, b.agent_id)
            }
        };
        if better {
            best = Some(cand);
        }
    }
    best.map(|cand| ConflictTarget {
        candidate: cand.clone(),
        guidance_weight: guidance_weight(Some(cand.conflict_type), cand.score),
    })
}

/// Run the full mining pass over every non-ego agent of the scene's future
/// segment. `None` = invalid scene (no candidate survives filtering).
pub fn mine_scene(scene: &Scene, rules: &MiningRules) -> Option<ConflictTarget> {
    if scene.agents.len() < 2 {
        return None;
    }
    let ego = scene.future_track(0);
    let mut candidates = Vec::new();
    for j in 1..scene.agents.len() {
        let other = scene.future_track(j);
        let valid = match joint_valid_steps(&ego, &other) {
            Ok(v) => v,
            Err(_) => continue,
        };
        if valid.len() < rules.min_joint_steps {
            continue;
        }
        let (tau_e, tau_a, d_min, conflict_point) =
            closest_encounter(&ego, &other, &valid).expect("non-empty valid set");
        let delta_t = (tau_e as f64 - tau_a as f64).abs() * scene.dt;
        let v_rel = relative_speed(&ego, &other, tau_e, tau_a, scene.dt);
        let conflict_type = classify_with(&ego, &other, rules.cos_threshold);
        let score = conflict_score(conflict_type, v_rel, delta_t, d_min);
        let Some(tier) = assign_tier(conflict_type, delta_t, d_min, score, rules) else {
            continue;
        };
        candidates.push(CandidateConflict {
            agent_id: other.agent_id,
            conflict_point,
            tau_e,
            tau_a,
            d_min,
            delta_t,
            v_rel,
            score,
            conflict_type,
            tier,
        });
    }
    select_target(&candidates)
}

/// Pairwise conflict-aware features at step `t` (future-segment-relative,
/// same frame as the mined arrival indices).
pub fn edge_features(
    ego: &AgentTrack,
    other: &AgentTrack,
    t: usize,
    target: &ConflictTarget,
    dt: f64,
) -> EdgeFeatures {
    let delta_p = other.position(t) - ego.position(t);
    let delta_v = velocity_at(other, t, dt) - velocity_at(ego, t, dt);
    let gap = delta_p.norm();
    // Closing speed: −d/dt ‖Δp‖ = −(Δp·Δv)/‖Δp‖.
    let closing = if gap > 0.0 { -delta_p.dot(delta_v) / gap } else { 0.0 };
    let ttc = if closing > 0.0 {
        gap / closing.max(1e-9)
    } else {
        f64::INFINITY
    };
    let tti = (target.candidate.tau_a as f64 - t as f64) * dt;
    let d_int = (other.position(t) - target.candidate.conflict_point).norm();
    let v_int = velocity_at(other, target.candidate.tau_a, dt).norm();
    EdgeFeatures {
        delta_p,
        delta_v,
        ttc,
        tti,
        d_int,
        v_int,
    }
}
