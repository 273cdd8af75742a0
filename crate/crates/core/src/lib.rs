//! Counterfactual traffic scenario generation: offline conflict mining over
//! recorded scenes, progressive conflict-aware guidance, guided diffusion
//! sampling over a pluggable trajectory prior, closed-loop rollout, and a
//! safety-metric suite.

pub mod adam;
pub mod canon;
pub mod error;
pub mod files;
pub mod geom;
pub mod guidance;
pub mod metrics;
pub mod mining;
pub mod sampler;
pub mod schedule;
pub mod synth;
pub mod track;
pub mod traj;

pub use error::CoreError;
pub use geom::{DrivableArea, OrientedBox, Pose, Vec2};
pub use mining::{ConflictTarget, MiningRules};
pub use track::{AgentTrack, Scene};
