//! Bundled synthetic scene generator: crossing, rear-approach and
//! lead-braking fixtures with seeded parameter jitter. The recorded futures
//! are near misses; rollout guidance is what turns them critical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::{DrivableArea, Vec2};
use crate::sampler::derive_seed;
use crate::track::{poses_from_positions, AgentTrack, Scene};

pub const SUITE_DT: f64 = 0.1;
pub const SUITE_HISTORY_LEN: usize = 5;
pub const SUITE_FUTURE_LEN: usize = 45;
const TIMELINE: usize = SUITE_HISTORY_LEN + SUITE_FUTURE_LEN;
const EXTENT: (f64, f64) = (2.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteKind {
    Crossing,
    RearApproach,
    LeadBraking,
}

impl SuiteKind {
    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::Crossing => "crossing",
            SuiteKind::RearApproach => "rear_approach",
            SuiteKind::LeadBraking => "lead_braking",
        }
    }

    pub fn cycle(index: usize) -> SuiteKind {
        match index % 3 {
            0 => SuiteKind::Crossing,
            1 => SuiteKind::RearApproach,
            _ => SuiteKind::LeadBraking,
        }
    }
}

fn track_from_positions(id: u64, positions: Vec<Vec2>, init_yaw: f64) -> AgentTrack {
    AgentTrack::fully_valid(id, EXTENT, poses_from_positions(&positions, init_yaw))
}

fn straight_positions(start: Vec2, vel: Vec2) -> Vec<Vec2> {
    (0..TIMELINE)
        .map(|t| start + vel.scale(t as f64 * SUITE_DT))
        .collect()
}

/// Axis-aligned rectangle covering every waypoint with a margin.
fn corridor(agents: &[AgentTrack], margin: f64) -> DrivableArea {
    let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for a in agents {
        for p in a.poses.iter().map(|p| p.position) {
            min = Vec2::new(min.x.min(p.x), min.y.min(p.y));
            max = Vec2::new(max.x.max(p.x), max.y.max(p.y));
        }
    }
    DrivableArea::new(
        vec![vec![
            Vec2::new(min.x - margin, min.y - margin),
            Vec2::new(max.x + margin, min.y - margin),
            Vec2::new(max.x + margin, max.y + margin),
            Vec2::new(min.x - margin, max.y + margin),
        ]],
        vec![],
    )
}

/// Far co-moving agent on a parallel path; never survives tier filtering.
fn ambient_agent(id: u64, ego_start: Vec2, ego_vel: Vec2) -> AgentTrack {
    let lateral = Vec2::new(-ego_vel.y, ego_vel.x).safe_unit(1e-12).scale(30.0);
    track_from_positions(id, straight_positions(ego_start + lateral, ego_vel), 0.0)
}

/// Perpendicular paths through a shared crossing point; the adversary
/// arrives 0.8–1.1 s after the ego.
fn crossing(rng: &mut ChaCha8Rng) -> Scene {
    let v_e = rng.random_range(4.5..6.0);
    let v_a = rng.random_range(4.5..6.0);
    let tau_e = rng.random_range(22..=28usize);
    let gap_steps = rng.random_range(8..=11usize);
    let tau_a = tau_e + gap_steps;
    let arrive_e = (SUITE_HISTORY_LEN + tau_e) as f64 * SUITE_DT;
    let arrive_a = (SUITE_HISTORY_LEN + tau_a) as f64 * SUITE_DT;
    let off_y = rng.random_range(-0.3..0.3);

    let ego_start = Vec2::new(0.0, -v_e * arrive_e);
    let ego_vel = Vec2::new(0.0, v_e);
    let adv_start = Vec2::new(-v_a * arrive_a, off_y);
    let adv_vel = Vec2::new(v_a, 0.0);

    let agents = vec![
        track_from_positions(0, straight_positions(ego_start, ego_vel), 0.0),
        track_from_positions(1, straight_positions(adv_start, adv_vel), 0.0),
        ambient_agent(2, ego_start, ego_vel),
    ];
    let drivable = corridor(&agents, 15.0);
    Scene {
        agents,
        dt: SUITE_DT,
        drivable,
        history_len: SUITE_HISTORY_LEN,
        future_len: SUITE_FUTURE_LEN,
    }
}

/// Follower at a steady gap through the history, drifting closer over the
/// recorded future without reaching the ego.
fn rear_approach(rng: &mut ChaCha8Rng) -> Scene {
    let v = rng.random_range(4.5..6.0);
    let dv = rng.random_range(0.5..1.0);
    let closure = dv * SUITE_FUTURE_LEN as f64 * SUITE_DT;
    let gap = closure + rng.random_range(2.6..4.0);

    let ego_vel = Vec2::new(v, 0.0);
    let ego = track_from_positions(0, straight_positions(Vec2::ZERO, ego_vel), 0.0);
    let mut adv_pos = Vec::with_capacity(TIMELINE);
    let mut x = -gap;
    for t in 0..TIMELINE {
        if t > 0 {
            let speed = if t <= SUITE_HISTORY_LEN { v } else { v + dv };
            x += speed * SUITE_DT;
        }
        adv_pos.push(Vec2::new(x, 0.0));
    }
    let agents = vec![
        ego,
        track_from_positions(1, adv_pos, 0.0),
        ambient_agent(2, Vec2::ZERO, ego_vel),
    ];
    let drivable = corridor(&agents, 15.0);
    Scene {
        agents,
        dt: SUITE_DT,
        drivable,
        history_len: SUITE_HISTORY_LEN,
        future_len: SUITE_FUTURE_LEN,
    }
}

/// Leader braking ahead of the ego over the recorded future; the gap shrinks
/// but never closes.
fn lead_braking(rng: &mut ChaCha8Rng) -> Scene {
    let v = rng.random_range(4.5..6.0);
    let decel = rng.random_range(1.2..2.0);
    let brake_steps = rng.random_range(15..=25usize);

    // Integrate the leader's future speed profile to size the initial gap.
    let mut speed = v;
    let mut closure = 0.0;
    for t in 0..SUITE_FUTURE_LEN {
        if t < brake_steps {
            speed = (speed - decel * SUITE_DT).max(1.0);
        }
        closure += (v - speed) * SUITE_DT;
    }
    let gap = closure + rng.random_range(2.6..4.0);

    let ego_vel = Vec2::new(v, 0.0);
    let ego = track_from_positions(0, straight_positions(Vec2::ZERO, ego_vel), 0.0);
    let mut adv_pos = Vec::with_capacity(TIMELINE);
    let mut x = gap;
    let mut cur = v;
    for t in 0..TIMELINE {
        if t > 0 {
            if t > SUITE_HISTORY_LEN && (t - SUITE_HISTORY_LEN) <= brake_steps {
                cur = (cur - decel * SUITE_DT).max(1.0);
            }
            x += cur * SUITE_DT;
        }
        adv_pos.push(Vec2::new(x, 0.0));
    }
    let agents = vec![
        ego,
        track_from_positions(1, adv_pos, 0.0),
        ambient_agent(2, Vec2::ZERO, ego_vel),
    ];
    let drivable = corridor(&agents, 15.0);
    Scene {
        agents,
        dt: SUITE_DT,
        drivable,
        history_len: SUITE_HISTORY_LEN,
        future_len: SUITE_FUTURE_LEN,
    }
}

/// Deterministic fixture: kind + (base_seed, index) fully determine the scene.
pub fn synth_scene(kind: SuiteKind, base_seed: u64, index: usize) -> (String, Scene) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base_seed, index as u64));
    let scene = match kind {
        SuiteKind::Crossing => crossing(&mut rng),
        SuiteKind::RearApproach => rear_approach(&mut rng),
        SuiteKind::LeadBraking => lead_braking(&mut rng),
    };
    (format!("{}_{index:03}", kind.name()), scene)
}

/// The bundled suite: families cycle crossing → rear_approach → lead_braking.
pub fn gen_suite(count: usize, base_seed: u64) -> Vec<(String, Scene)> {
    (0..count)
        .map(|i| synth_scene(SuiteKind::cycle(i), base_seed, i))
        .collect()
}
