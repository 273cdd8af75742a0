//! Guided denoising sampler and closed-loop rollout: pluggable denoiser
//! contract, per-step gradient guidance on the adversary, action-horizon
//! re-planning, and best-of-N candidate selection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::error::CoreError;
use crate::geom::{obb_overlap, DrivableArea, OrientedBox, Vec2};
use crate::guidance::{
    guidance_gradient, guidance_loss, GuidanceConfig, GuidanceContext, LossBreakdown,
    ProgressSource,
};
use crate::mining::ConflictTarget;
use crate::schedule::{cosine_schedule, NoiseSchedule};
use crate::track::{AgentTrack, Scene};
use crate::traj::TrajectorySet;

/// Sampler and rollout settings. Defaults follow the experiment
/// configuration; `rollout_horizon` is the closed-loop protocol length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Diffusion steps K.
    pub diffusion_steps: usize,
    /// Inner Adam iterations per denoise step.
    pub guidance_steps: usize,
    pub perturb_lr: f64,
    /// Global 2-norm cap on the flattened perturbation, meters.
    pub perturb_norm_cap: f64,
    pub final_step_lr: f64,
    pub final_step_iters: usize,
    pub intermediate_guidance: bool,
    pub output_stage_guidance: bool,
    pub candidates_per_scene: usize,
    /// Steps committed per re-plan.
    pub action_horizon: usize,
    pub history_len: usize,
    /// Prediction window length per plan.
    pub future_len: usize,
    /// Timestep in seconds.
    pub dt: f64,
    /// Total closed-loop steps H.
    pub rollout_horizon: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            diffusion_steps: 100,
            guidance_steps: 30,
            perturb_lr: 0.001,
            perturb_norm_cap: 100.0,
            final_step_lr: 0.3,
            final_step_iters: 1,
            intermediate_guidance: true,
            output_stage_guidance: false,
            candidates_per_scene: 16,
            action_horizon: 5,
            history_len: 31,
            future_len: 52,
            dt: 0.1,
            rollout_horizon: 100,
        }
    }
}

/// Observed (and later committed) trail of one agent.
#[derive(Clone, Debug)]
pub struct AgentHistory {
    /// Oldest to newest.
    pub positions: Vec<Vec2>,
    pub last_yaw: f64,
}

/// What a denoiser sees besides the noisy sample.
pub struct DenoiseContext<'a> {
    pub history: &'a [AgentHistory],
    pub schedule: &'a NoiseSchedule,
    pub dt: f64,
}

/// Maps a noisy trajectory set and a step index to a clean estimate x̂_0.
/// Output shape must equal input shape; must be deterministic.
pub trait Denoiser {
    fn denoise(&self, noisy: &TrajectorySet, step: usize, ctx: &DenoiseContext<'_>) -> TrajectorySet;
}

/// Analytic stand-in for a learned denoiser:
/// x̂_0 = ᾱ_k·CV + (1−ᾱ_k)·smooth3(x_k), where CV extrapolates each agent at
/// its last observed velocity and smooth3 is a 3-point moving average with
/// fixed endpoints.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConstantVelocityDenoiser;

impl ConstantVelocityDenoiser {
    fn cv_row(history: &AgentHistory, steps: usize, dt: f64) -> Vec<Vec2> {
        let n = history.positions.len();
        let last = *history.positions.last().expect("non-empty history");
        let vel = if n >= 2 {
            (last - history.positions[n - 2]).scale(1.0 / dt)
        } else {
            Vec2::ZERO
        };
        (0..steps)
            .map(|t| last + vel.scale(dt * (t + 1) as f64))
            .collect()
    }

    fn smooth3(row: &[Vec2]) -> Vec<Vec2> {
        let n = row.len();
        (0..n)
            .map(|t| {
                if t == 0 || t == n - 1 {
                    row[t]
                } else {
                    (row[t - 1] + row[t] + row[t + 1]).scale(1.0 / 3.0)
                }
            })
            .collect()
    }
}

impl Denoiser for ConstantVelocityDenoiser {
    fn denoise(&self, noisy: &TrajectorySet, step: usize, ctx: &DenoiseContext<'_>) -> TrajectorySet {
        let (agents, steps) = noisy.shape();
        let ab = ctx.schedule.alpha_bar[step];
        let mut out = TrajectorySet::zeros(agents, steps);
        for a in 0..agents {
            let cv = Self::cv_row(&ctx.history[a], steps, ctx.dt);
            let sm = Self::smooth3(noisy.agent(a));
            let row = out.agent_mut(a);
            for t in 0..steps {
                row[t] = cv[t].scale(ab) + sm[t].scale(1.0 - ab);
            }
        }
        out
    }
}

/// Guidance wiring for one prediction window.
pub struct GuidanceSpec<'a> {
    /// Target with window-relative arrival indices.
    pub target: &'a ConflictTarget,
    pub cfg: &'a GuidanceConfig,
    /// Rollout progress for this window (used unless the config selects
    /// denoising progress).
    pub progress: f64,
    pub drivable: Option<&'a DrivableArea>,
    /// Row of the adversary in the trajectory set; ego is row 0.
    pub adv_slot: usize,
}

impl<'a> GuidanceSpec<'a> {
    fn effective_progress(&self, k: usize, k_total: usize) -> f64 {
        match self.cfg.progress_source {
            ProgressSource::Rollout => self.progress,
            ProgressSource::Denoising => 1.0 - (k.saturating_sub(1) as f64 / k_total as f64),
        }
    }

    fn context(&self, progress: f64, horizon: usize) -> GuidanceContext<'a> {
        let mut ctx = GuidanceContext::new(self.target, progress, horizon);
        ctx.drivable = self.drivable;
        ctx
    }
}

/// Outcome of one guided denoise step.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepInfo {
    pub loss_before: Option<LossBreakdown>,
    pub loss_after: Option<LossBreakdown>,
    pub delta_norm: f64,
}

fn clip_norm(delta: &mut [Vec2], cap: f64) {
    let norm = delta.iter().map(|d| d.norm_sq()).sum::<f64>().sqrt();
    if norm > cap && norm > 0.0 {
        let s = cap / norm;
        for d in delta.iter_mut() {
            *d = d.scale(s);
        }
    }
}

/// Adam-optimize a perturbation of the adversary's waypoints against the
/// guidance loss; the ego row enters the loss as a constant anchor.
pub fn optimize_perturbation(
    x0: &TrajectorySet,
    spec: &GuidanceSpec,
    progress: f64,
    phases: &[(usize, f64)],
    norm_cap: f64,
) -> Result<(Vec<Vec2>, LossBreakdown, LossBreakdown), CoreError> {
    let horizon = x0.num_steps();
    let ctx = spec.context(progress, horizon);
    let ego = x0.agent(0);
    let adv_base = x0.agent(spec.adv_slot);
    let before = guidance_loss(ego, adv_base, &ctx, spec.cfg)?;
    if !before.total.is_finite() {
        return Err(CoreError::InvalidInput("non-finite guidance loss".into()));
    }
    let mut delta = vec![Vec2::ZERO; horizon];
    let mut adam = Adam::new(horizon);
    let mut adv_cur: Vec<Vec2> = adv_base.to_vec();
    for &(iters, lr) in phases {
        for _ in 0..iters {
            let (_, _, grad_adv) = guidance_gradient(ego, &adv_cur, &ctx, spec.cfg)?;
            adam.step(&mut delta, &grad_adv, lr);
            clip_norm(&mut delta, norm_cap);
            for (t, d) in delta.iter().enumerate() {
                adv_cur[t] = adv_base[t] + *d;
            }
        }
    }
    let after = guidance_loss(ego, &adv_cur, &ctx, spec.cfg)?;
    if !after.total.is_finite() {
        return Err(CoreError::InvalidInput("non-finite guidance loss".into()));
    }
    Ok((delta, before, after))
}

fn apply_delta(x0: &mut TrajectorySet, slot: usize, delta: &[Vec2]) {
    if delta.iter().all(|d| d.x == 0.0 && d.y == 0.0) {
        return;
    }
    let row = x0.agent_mut(slot);
    for (t, d) in delta.iter().enumerate() {
        row[t] = row[t] + *d;
    }
}

/// One reverse-process step: denoise, optionally steer the adversary rows of
/// x̂_0, then sample x_{k−1} from the DDPM posterior built from (x_k, x̂_0).
pub fn guided_denoise_step(
    x_k: &TrajectorySet,
    k: usize,
    denoiser: &dyn Denoiser,
    dctx: &DenoiseContext<'_>,
    guidance: Option<&GuidanceSpec<'_>>,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(TrajectorySet, StepInfo), CoreError> {
    assert!(k >= 1 && k <= dctx.schedule.steps(), "step k out of range");
    let mut x0 = denoiser.denoise(x_k, k, dctx);
    let mut info = StepInfo::default();
    if let Some(spec) = guidance {
        if cfg.intermediate_guidance {
            let mut phases = vec![(cfg.guidance_steps, cfg.perturb_lr)];
            if k == 1 {
                phases.push((cfg.final_step_iters, cfg.final_step_lr));
            }
            let progress = spec.effective_progress(k, dctx.schedule.steps());
            let (delta, before, after) =
                optimize_perturbation(&x0, spec, progress, &phases, cfg.perturb_norm_cap)?;
            info.delta_norm = delta.iter().map(|d| d.norm_sq()).sum::<f64>().sqrt();
            info.loss_before = Some(before);
            info.loss_after = Some(after);
            apply_delta(&mut x0, spec.adv_slot, &delta);
        }
    }
    let x_prev = ddpm_posterior_step(x_k, &x0, k, dctx.schedule, rng)?;
    Ok((x_prev, info))
}

/// Standard variance-preserving posterior with fixed variance
/// β̃_k = β_k(1−ᾱ_{k−1})/(1−ᾱ_k); β̃_1 = 0, so the last step is noise-free.
fn ddpm_posterior_step(
    x_k: &TrajectorySet,
    x0: &TrajectorySet,
    k: usize,
    sched: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<TrajectorySet, CoreError> {
    let ab_k = sched.alpha_bar[k];
    let ab_prev = sched.alpha_bar[k - 1];
    let alpha_k = ab_k / ab_prev;
    let beta_k = 1.0 - alpha_k;
    let denom = 1.0 - ab_k;
    let coef_x0 = ab_prev.sqrt() * beta_k / denom;
    let coef_xk = alpha_k.sqrt() * (1.0 - ab_prev) / denom;
    let sd = (beta_k * (1.0 - ab_prev) / denom).max(0.0).sqrt();
    let (agents, steps) = x_k.shape();
    let noise = TrajectorySet::sample_normal(agents, steps, rng);
    let mean = x0.zip_map(x_k, |x0i, xki| x0i.scale(coef_x0) + xki.scale(coef_xk))?;
    mean.zip_map(&noise, |m, z| m + z.scale(sd))
}

/// One rollout attempt failed before completion.
#[derive(Clone, Debug)]
pub struct RolloutAbort {
    pub seed: u64,
    pub t_global: usize,
    pub reason: String,
}

/// All candidates of a scene aborted.
#[derive(Clone, Debug)]
pub struct SceneFailure {
    pub aborts: Vec<RolloutAbort>,
}

/// Per-replan guidance diagnostics (taken from the final denoise step).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceDiag {
    pub stage_multiplier: f64,
    pub tau_e_eff: usize,
    pub tau_a_eff: usize,
    pub loss_before: f64,
    pub loss_after: f64,
    pub delta_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplanDiagnostics {
    pub t_global: usize,
    pub committed: usize,
    pub progress: f64,
    pub guidance: Option<GuidanceDiag>,
}

/// Completed closed-loop rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub seed: u64,
    pub selected_candidate: usize,
    pub adversary_id: u64,
    /// Committed world-frame trajectories, one per scene agent, all steps
    /// valid, yaw derived from motion.
    pub tracks: Vec<AgentTrack>,
    pub diagnostics: Vec<ReplanDiagnostics>,
    pub flags: Vec<String>,
    pub min_ego_adv_distance: f64,
    pub collided: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub index: usize,
    pub seed: u64,
    pub min_ego_adv_distance: Option<f64>,
    pub collided: Option<bool>,
    pub aborted: bool,
}

/// Winner of a best-of-N run plus the per-candidate summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestOfResult {
    pub winner: RolloutResult,
    pub candidates: Vec<CandidateSummary>,
}

/// Everything a rollout needs. `guidance: None` runs the unguided baseline;
/// the target still names the adversary being measured.
pub struct RolloutSetup<'a> {
    pub scene: &'a Scene,
    pub target: &'a ConflictTarget,
    pub denoiser: &'a dyn Denoiser,
    pub guidance: Option<&'a GuidanceConfig>,
    pub sampler: &'a SamplerConfig,
}

/// FNV-1a over a string, for deriving per-scene seeds stably across runs.
pub fn stable_hash(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 stream derivation: candidate i of base seed s gets its own
/// decorrelated rng seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn initial_histories(scene: &Scene, flags: &mut Vec<String>) -> Vec<AgentHistory> {
    scene
        .agents
        .iter()
        .enumerate()
        .map(|(i, track)| {
            let seg = scene.history_track(i);
            let mut positions: Vec<Vec2> = (0..seg.len())
                .filter(|&t| seg.is_valid(t))
                .map(|t| seg.position(t))
                .collect();
            let mut last_yaw = (0..seg.len())
                .rev()
                .find(|&t| seg.is_valid(t))
                .map(|t| seg.poses[t].yaw);
            if positions.is_empty() {
                // Not yet observed: hold the first valid pose of the track.
                let t = track.first_valid().expect("validated track");
                positions.push(track.position(t));
                last_yaw = Some(track.poses[t].yaw);
                flags.push(format!("agent {}: no valid history, holding first valid pose", track.agent_id));
            } else if positions.len() < scene.history_len {
                flags.push(format!("agent {}: history padded by replication", track.agent_id));
            }
            AgentHistory {
                positions,
                last_yaw: last_yaw.unwrap_or(0.0),
            }
        })
        .collect()
}

fn window_target(target: &ConflictTarget, t_global: usize, future_len: usize) -> ConflictTarget {
    let mut shifted = target.clone();
    let clamp = |tau: usize| tau.saturating_sub(t_global).min(future_len.saturating_sub(1));
    shifted.candidate.tau_e = clamp(target.candidate.tau_e);
    shifted.candidate.tau_a = clamp(target.candidate.tau_a);
    shifted
}


/// Plan–commit–replan until the rollout horizon: each re-plan samples a full
/// future window through K guided denoise steps and commits the first
/// `action_horizon` steps for every agent. Deterministic given the seed.
pub fn closed_loop_rollout(setup: &RolloutSetup<'_>, seed: u64) -> Result<RolloutResult, RolloutAbort> {
    let scene = setup.scene;
    let cfg = setup.sampler;
    let abort = |t_global: usize, reason: String| RolloutAbort {
        seed,
        t_global,
        reason,
    };
    let adv_slot = scene
        .agents
        .iter()
        .position(|a| a.agent_id == setup.target.candidate.agent_id)
        .ok_or_else(|| abort(0, format!("adversary id {} not in scene", setup.target.candidate.agent_id)))?;
    let sched = cosine_schedule(cfg.diffusion_steps).map_err(|e| abort(0, e.to_string()))?;

    let mut flags = Vec::new();
    let mut histories = initial_histories(scene, &mut flags);
    let n_agents = scene.agents.len();
    let mut committed: Vec<Vec<Vec2>> = vec![Vec::with_capacity(cfg.rollout_horizon); n_agents];
    let mut diagnostics = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut t_global = 0usize;
    while t_global < cfg.rollout_horizon {
        let commit_len = cfg.action_horizon.min(cfg.rollout_horizon - t_global);
        let progress = (t_global + commit_len) as f64 / cfg.rollout_horizon as f64;
        let wtarget = window_target(setup.target, t_global, cfg.future_len);
        let spec = setup.guidance.map(|gcfg| GuidanceSpec {
            target: &wtarget,
            cfg: gcfg,
            progress,
            drivable: Some(&scene.drivable),
            adv_slot,
        });

        let mut x = TrajectorySet::sample_normal(n_agents, cfg.future_len, &mut rng);
        let mut final_info = StepInfo::default();
        let dctx = DenoiseContext {
            history: &histories,
            schedule: &sched,
            dt: cfg.dt,
        };
        for k in (1..=cfg.diffusion_steps).rev() {
            let (next, info) =
                guided_denoise_step(&x, k, setup.denoiser, &dctx, spec.as_ref(), cfg, &mut rng)
                    .map_err(|e| abort(t_global, e.to_string()))?;
            x = next;
            if k == 1 {
                final_info = info;
            }
        }
        if cfg.output_stage_guidance {
            if let Some(spec) = spec.as_ref() {
                let (delta, _, after) = optimize_perturbation(
                    &x,
                    spec,
                    spec.effective_progress(1, cfg.diffusion_steps),
                    &[(cfg.guidance_steps, cfg.perturb_lr)],
                    cfg.perturb_norm_cap,
                )
                .map_err(|e| abort(t_global, e.to_string()))?;
                apply_delta(&mut x, spec.adv_slot, &delta);
                final_info.loss_after = Some(after);
            }
        }
        drop(dctx);

        for (a, row) in committed.iter_mut().enumerate() {
            let plan = x.agent(a);
            row.extend_from_slice(&plan[..commit_len]);
            let hist = &mut histories[a];
            hist.positions.extend_from_slice(&plan[..commit_len]);
            let keep = cfg.history_len.max(2);
            if hist.positions.len() > keep {
                hist.positions.drain(..hist.positions.len() - keep);
            }
        }
        diagnostics.push(ReplanDiagnostics {
            t_global,
            committed: commit_len,
            progress,
            guidance: final_info.loss_after.map(|after| GuidanceDiag {
                stage_multiplier: after.stage_multiplier,
                tau_e_eff: after.tau_e_eff,
                tau_a_eff: after.tau_a_eff,
                loss_before: final_info.loss_before.map(|l| l.total).unwrap_or(after.total),
                loss_after: after.total,
                delta_norm: final_info.delta_norm,
            }),
        });
        t_global += commit_len;
    }

    let tracks: Vec<AgentTrack> = scene
        .agents
        .iter()
        .enumerate()
        .map(|(a, src)| {
            let poses = crate::track::poses_from_positions(&committed[a], initial_yaw(scene, a));
            AgentTrack::fully_valid(src.agent_id, src.extent, poses)
        })
        .collect();

    let (min_dist, collided) = ego_adversary_outcome(&tracks, adv_slot);
    Ok(RolloutResult {
        seed,
        selected_candidate: 0,
        adversary_id: setup.target.candidate.agent_id,
        tracks,
        diagnostics,
        flags,
        min_ego_adv_distance: min_dist,
        collided,
    })
}

fn initial_yaw(scene: &Scene, a: usize) -> f64 {
    let seg = scene.history_track(a);
    (0..seg.len())
        .rev()
        .find(|&t| seg.is_valid(t))
        .map(|t| seg.poses[t].yaw)
        .or_else(|| scene.agents[a].first_valid().map(|t| scene.agents[a].poses[t].yaw))
        .unwrap_or(0.0)
}

fn ego_adversary_outcome(tracks: &[AgentTrack], adv_slot: usize) -> (f64, bool) {
    let ego = &tracks[0];
    let adv = &tracks[adv_slot];
    let mut min_dist = f64::INFINITY;
    let mut collided = false;
    for t in 0..ego.len().min(adv.len()) {
        let d = (ego.position(t) - adv.position(t)).norm();
        min_dist = min_dist.min(d);
        if !collided {
            let box_e = OrientedBox::new(ego.position(t), ego.poses[t].yaw, ego.extent);
            let box_a = OrientedBox::new(adv.position(t), adv.poses[t].yaw, adv.extent);
            if obb_overlap(&box_e, &box_a) {
                collided = true;
            }
        }
    }
    (min_dist, collided)
}

fn is_better(a: &RolloutResult, b: &RolloutResult) -> bool {
    // Collision first, then smallest minimum distance.
    (b.collided, a.min_ego_adv_distance) < (a.collided, b.min_ego_adv_distance)
}

/// Run N candidate rollouts with derived seeds and keep the most adversarial
/// one (collision first, then smallest ego–adversary distance).
pub fn best_of_candidates(setup: &RolloutSetup<'_>, base_seed: u64) -> Result<BestOfResult, SceneFailure> {
    let n = setup.sampler.candidates_per_scene.max(1);
    let mut summaries = Vec::with_capacity(n);
    let mut best: Option<(usize, RolloutResult)> = None;
    let mut aborts = Vec::new();
    for i in 0..n {
        let seed = derive_seed(base_seed, i as u64);
        match closed_loop_rollout(setup, seed) {
            Ok(result) => {
                summaries.push(CandidateSummary {
                    index: i,
                    seed,
                    min_ego_adv_distance: Some(result.min_ego_adv_distance),
                    collided: Some(result.collided),
                    aborted: false,
                });
                let replace = best.as_ref().map_or(true, |(_, b)| is_better(&result, b));
                if replace {
                    best = Some((i, result));
                }
            }
            Err(abort) => {
                summaries.push(CandidateSummary {
                    index: i,
                    seed,
                    min_ego_adv_distance: None,
                    collided: None,
                    aborted: true,
                });
                aborts.push(abort);
            }
        }
    }
    match best {
        Some((idx, mut winner)) => {
            winner.selected_candidate = idx;
            Ok(BestOfResult {
                winner,
                candidates: summaries,
            })
        }
        None => Err(SceneFailure { aborts }),
    }
}
