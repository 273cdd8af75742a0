//! Agent tracks, scenes, and finite-difference kinematics.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::geom::{DrivableArea, Pose, Vec2};

/// One agent's timestamped poses with a per-step validity mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: u64,
    /// (length, width) of the bounding box in meters.
    pub extent: (f64, f64),
    pub poses: Vec<Pose>,
    pub valid: Vec<bool>,
}

impl AgentTrack {
    pub fn new(agent_id: u64, extent: (f64, f64), poses: Vec<Pose>, valid: Vec<bool>) -> Self {
        AgentTrack {
            agent_id,
            extent,
            poses,
            valid,
        }
    }

    /// Track with every step valid, heading taken as given.
    pub fn fully_valid(agent_id: u64, extent: (f64, f64), poses: Vec<Pose>) -> Self {
        let valid = vec![true; poses.len()];
        AgentTrack::new(agent_id, extent, poses, valid)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn position(&self, t: usize) -> Vec2 {
        self.poses[t].position
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.poses.iter().map(|p| p.position).collect()
    }

    pub fn is_valid(&self, t: usize) -> bool {
        self.valid.get(t).copied().unwrap_or(false)
    }

    pub fn first_valid(&self) -> Option<usize> {
        self.valid.iter().position(|&v| v)
    }

    pub fn last_valid(&self) -> Option<usize> {
        self.valid.iter().rposition(|&v| v)
    }

    /// Sub-track over `[start, start+len)`, reusing id and extent.
    pub fn segment(&self, start: usize, len: usize) -> AgentTrack {
        let end = (start + len).min(self.len());
        AgentTrack::new(
            self.agent_id,
            self.extent,
            self.poses[start.min(self.len())..end].to_vec(),
            self.valid[start.min(self.len())..end].to_vec(),
        )
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.poses.len() != self.valid.len() {
            return Err(CoreError::LengthMismatch(self.poses.len(), self.valid.len()));
        }
        if self.extent.0 <= 0.0 || self.extent.1 <= 0.0 {
            return Err(CoreError::InvalidInput(format!(
                "agent {} extent must be positive, got {:?}",
                self.agent_id, self.extent
            )));
        }
        if !self.valid.iter().any(|&v| v) {
            return Err(CoreError::InvalidInput(format!(
                "agent {} has no valid step",
                self.agent_id
            )));
        }
        for (t, pose) in self.poses.iter().enumerate() {
            if !pose.position.is_finite() || !pose.yaw.is_finite() {
                return Err(CoreError::InvalidInput(format!(
                    "agent {} pose at step {t} is not finite",
                    self.agent_id
                )));
            }
        }
        Ok(())
    }
}

/// A recorded scene: agent tracks over a shared timeline (ego at index 0),
/// split into an observed history prefix and a ground-truth future suffix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub agents: Vec<AgentTrack>,
    /// Timestep in seconds.
    pub dt: f64,
    pub drivable: DrivableArea,
    pub history_len: usize,
    pub future_len: usize,
}

impl Scene {
    pub fn ego(&self) -> &AgentTrack {
        &self.agents[0]
    }

    pub fn timeline_len(&self) -> usize {
        self.agents.first().map_or(0, |a| a.len())
    }

    /// The ground-truth future segment of agent `i` as a standalone track
    /// (step 0 = first future step). Mining operates on these.
    pub fn future_track(&self, i: usize) -> AgentTrack {
        self.agents[i].segment(self.history_len, self.future_len)
    }

    /// The observed history segment of agent `i`.
    pub fn history_track(&self, i: usize) -> AgentTrack {
        self.agents[i].segment(0, self.history_len)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.agents.is_empty() {
            return Err(CoreError::InvalidInput("scene has no agents".into()));
        }
        if self.dt <= 0.0 || !self.dt.is_finite() {
            return Err(CoreError::InvalidInput(format!("dt must be > 0, got {}", self.dt)));
        }
        let len = self.agents[0].len();
        for track in &self.agents {
            track.validate()?;
            if track.len() != len {
                return Err(CoreError::LengthMismatch(track.len(), len));
            }
        }
        if self.history_len + self.future_len != len {
            return Err(CoreError::InvalidInput(format!(
                "history_len {} + future_len {} != timeline {}",
                self.history_len, self.future_len, len
            )));
        }
        self.drivable.validate()?;
        Ok(())
    }
}

/// Forward-difference velocity/acceleration/jerk series for a T-step track
/// (lengths T−1, T−2, T−3; empty when the track is too short).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KinematicsProfile {
    pub velocity: Vec<Vec2>,
    pub acceleration: Vec<Vec2>,
    pub jerk: Vec<Vec2>,
}

/// Poses with heading derived from motion; displacements under 1e-6 m hold
/// the previous yaw.
pub fn poses_from_positions(positions: &[Vec2], init_yaw: f64) -> Vec<Pose> {
    let n = positions.len();
    let mut yaw = init_yaw;
    (0..n)
        .map(|t| {
            let v = if t + 1 < n {
                positions[t + 1] - positions[t]
            } else if n >= 2 {
                positions[t] - positions[t - 1]
            } else {
                Vec2::ZERO
            };
            if v.norm() > 1e-6 {
                yaw = v.y.atan2(v.x);
            }
            Pose::new(positions[t], yaw)
        })
        .collect()
}

/// Forward differences exactly as written: v_t = (p_{t+1} − p_t)/dt,
/// a_t = (v_{t+1} − v_t)/dt, j_t = (a_{t+1} − a_t)/dt.
pub fn kinematics(positions: &[Vec2], dt: f64) -> Result<KinematicsProfile, CoreError> {
    if positions.len() < 2 {
        return Err(CoreError::EmptyProfile(positions.len()));
    }
    if dt <= 0.0 || !dt.is_finite() {
        return Err(CoreError::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    if positions.iter().any(|p| !p.is_finite()) {
        return Err(CoreError::InvalidInput("non-finite position".into()));
    }
    let diff = |xs: &[Vec2]| -> Vec<Vec2> {
        xs.windows(2).map(|w| (w[1] - w[0]).scale(1.0 / dt)).collect()
    };
    let velocity = diff(positions);
    let acceleration = diff(&velocity);
    let jerk = diff(&acceleration);
    Ok(KinematicsProfile {
        velocity,
        acceleration,
        jerk,
    })
}
