//! Deterministic 2-D rigid-body cooperative-manipulation environments.
//!
//! Each environment is an isolated state machine: `reset(seed)` fully
//! determines a trajectory given the action sequence. All agents share one
//! reward. Observations split into private per-agent blocks `o_i`
//! (attachment/body proprioception) and a shared block `o_c` (manipulated
//! object state).

mod lift;
mod peg;

pub use lift::LiftEnv;
pub use peg::PegInHoleEnv;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-step force disturbance applied at the object's center of mass during
/// a step-index window. Component magnitudes are uniform in
/// `[force_lo, force_hi]` with random signs, resampled every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    pub step_lo: usize,
    pub step_hi: usize,
    pub force_lo: f64,
    pub force_hi: f64,
}

impl DisturbanceConfig {
    pub fn range(lo: f64, hi: f64) -> Self {
        Self {
            step_lo: 10,
            step_hi: 100,
            force_lo: lo,
            force_hi: hi,
        }
    }
}

/// What an agent's action components mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSemantics {
    /// `(f_x, f_z)` planar force at the agent's attachment point.
    PlanarForce,
    /// `(f_x, f_z, torque)` force plus a direct torque contribution.
    ForceTorque,
}

impl ActionSemantics {
    pub fn dim(self) -> usize {
        match self {
            ActionSemantics::PlanarForce => 2,
            ActionSemantics::ForceTorque => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Lift,
    PegInHole,
}

/// Physical constants and episode settings. Constructed per named
/// environment via [`EnvConfig::named`]; every field may be overridden from
/// config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub name: String,
    pub kind: EnvKind,
    pub n_agents: usize,
    pub object_mass: f64,
    pub object_inertia: f64,
    /// Attachment points in the object's body frame (lift environments).
    pub attachment_offsets: Vec<[f64; 2]>,
    pub gravity: f64,
    pub dt: f64,
    /// Episode length T.
    pub max_steps: usize,
    /// Tilt window for success accounting (radians).
    pub max_tilt: f64,
    /// Hard tilt limit; exceeding it ends the episode as a failure.
    pub tilt_fail: f64,
    pub target_height: f64,
    /// Success requires the goal condition to hold for this many final
    /// consecutive steps.
    pub success_hold_steps: usize,
    /// Force per unit action component.
    pub action_scale: f64,
    /// Torque per unit action component (force+torque agents).
    pub torque_scale: f64,
    pub lin_damping: f64,
    pub ang_damping: f64,
    pub reset_jitter_pos: f64,
    pub reset_jitter_tilt: f64,
    /// Velocities are scaled by this factor in observations.
    pub vel_obs_scale: f64,
    pub disturbance: Option<DisturbanceConfig>,
    pub action_semantics: Vec<ActionSemantics>,
}

impl EnvConfig {
    /// Registry of named environments.
    pub fn named(name: &str) -> Result<EnvConfig> {
        let base_lift = EnvConfig {
            name: name.to_string(),
            kind: EnvKind::Lift,
            n_agents: 2,
            object_mass: 1.0,
            object_inertia: 0.5,
            attachment_offsets: vec![[-0.5, 0.0], [0.5, 0.0]],
            gravity: 1.0,
            dt: 0.05,
            max_steps: 500,
            max_tilt: 10f64.to_radians(),
            tilt_fail: 0.9,
            target_height: 0.2,
            success_hold_steps: 50,
            action_scale: 1.2,
            torque_scale: 0.3,
            lin_damping: 0.8,
            ang_damping: 3.0,
            reset_jitter_pos: 0.05,
            reset_jitter_tilt: 0.02,
            vel_obs_scale: 0.5,
            disturbance: None,
            action_semantics: vec![ActionSemantics::PlanarForce; 2],
        };
        match name {
            "dual_lift" => Ok(base_lift),
            "four_lift" => Ok(EnvConfig {
                n_agents: 4,
                object_mass: 2.0,
                object_inertia: 1.0,
                attachment_offsets: vec![[-0.6, 0.0], [-0.2, 0.0], [0.2, 0.0], [0.6, 0.0]],
                action_scale: 1.2,
                action_semantics: vec![ActionSemantics::PlanarForce; 4],
                ..base_lift
            }),
            "dual_lift_hetero" => Ok(EnvConfig {
                action_semantics: vec![ActionSemantics::PlanarForce, ActionSemantics::ForceTorque],
                ..base_lift
            }),
            "peg_in_hole" => Ok(EnvConfig {
                kind: EnvKind::PegInHole,
                n_agents: 2,
                object_mass: 1.0,
                object_inertia: 0.1,
                attachment_offsets: vec![],
                gravity: 0.0,
                dt: 0.05,
                max_steps: 500,
                max_tilt: 10f64.to_radians(),
                tilt_fail: f64::INFINITY,
                target_height: 0.0,
                success_hold_steps: 50,
                action_scale: 1.0,
                torque_scale: 0.5,
                lin_damping: 1.5,
                ang_damping: 2.5,
                reset_jitter_pos: 0.3,
                reset_jitter_tilt: 0.5,
                vel_obs_scale: 0.5,
                disturbance: None,
                action_semantics: vec![ActionSemantics::ForceTorque; 2],
                ..base_lift
            }),
            other => Err(Error::Config(format!("unknown environment '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.n_agents == 0 {
            return Err(Error::Config("n_agents must be >= 1".into()));
        }
        if self.action_semantics.len() != self.n_agents {
            return Err(Error::Config(
                "action_semantics must list one entry per agent".into(),
            ));
        }
        if self.kind == EnvKind::Lift && self.attachment_offsets.len() != self.n_agents {
            return Err(Error::Config(
                "attachment count must match n_agents".into(),
            ));
        }
        if let Some(d) = &self.disturbance {
            if d.force_lo > d.force_hi || d.force_lo < 0.0 {
                return Err(Error::Config("disturbance force range invalid".into()));
            }
        }
        Ok(())
    }

    pub fn action_dims(&self) -> Vec<usize> {
        self.action_semantics.iter().map(|s| s.dim()).collect()
    }

    /// Per-environment default latent layout `(agent latent dims, central
    /// latent dim)`, sized so the latent strictly compresses the joint
    /// action space. The central block matches the manipulated object's
    /// planar degrees of freedom.
    pub fn default_latent_dims(&self) -> (Vec<usize>, usize) {
        let total_action: usize = self.action_dims().iter().sum();
        let central = 3usize.min(total_action - 1).max(1);
        let budget = total_action.saturating_sub(central + 1); // keep strict compression
        let per_agent = (budget / self.n_agents).min(1);
        (vec![per_agent; self.n_agents], central)
    }
}

/// Rigid-body pose and velocities of the primary manipulated object plus
/// per-agent attachment positions.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub x: f64,
    pub z: f64,
    pub tilt: f64,
    pub vx: f64,
    pub vz: f64,
    pub omega: f64,
    pub attachments: Vec<[f64; 2]>,
    pub step: usize,
}

/// Step outcome. The single reward is shared by all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub per_agent_obs: Vec<Vec<f64>>,
    pub shared_obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepInfo {
    /// Episode-level success (final K consecutive goal steps); only
    /// meaningful once `done` is set.
    pub success: bool,
    /// Whether the goal condition currently holds for >= K consecutive steps.
    pub success_running: bool,
    /// Disturbance force applied this step (zeros when inactive).
    pub disturbance: [f64; 2],
    /// Episode ended by violating a hard limit.
    pub failure: bool,
}

pub trait Env: Send {
    fn config(&self) -> &EnvConfig;
    fn obs_dims(&self) -> Vec<usize>;
    fn shared_obs_dim(&self) -> usize;
    fn reset(&mut self, seed: u64) -> StepResult;
    fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepResult>;
    /// Flat state snapshot for analysis dumps; labeled by `state_labels`.
    fn state_vector(&self) -> Vec<f64>;
    fn state_labels(&self) -> Vec<String>;
    fn set_disturbance(&mut self, d: Option<DisturbanceConfig>);
    fn clone_env(&self) -> Box<dyn Env>;

    fn n_agents(&self) -> usize {
        self.config().n_agents
    }
    fn action_dims(&self) -> Vec<usize> {
        self.config().action_dims()
    }
    fn max_steps(&self) -> usize {
        self.config().max_steps
    }
}

pub fn make_env(cfg: &EnvConfig) -> Result<Box<dyn Env>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        EnvKind::Lift => Box::new(LiftEnv::new(cfg.clone())?),
        EnvKind::PegInHole => Box::new(PegInHoleEnv::new(cfg.clone())?),
    })
}

pub fn make_named_env(name: &str) -> Result<Box<dyn Env>> {
    make_env(&EnvConfig::named(name)?)
}

/// Draw one disturbance force vector: per-component magnitude uniform in
/// `[lo, hi]`, random sign. Draws nothing when the window or config is
/// inactive.
pub(crate) fn sample_disturbance<R: rand::Rng>(
    cfg: &Option<DisturbanceConfig>,
    step_index: usize,
    rng: &mut R,
) -> [f64; 2] {
    match cfg {
        Some(d) if step_index >= d.step_lo && step_index <= d.step_hi => {
            let mut out = [0.0; 2];
            for o in &mut out {
                let mag = rng.gen_range(d.force_lo..=d.force_hi);
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                *o = sign * mag;
            }
            out
        }
        _ => [0.0, 0.0],
    }
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Reward constants for the lift family, from the task's lift reward shape:
/// `r_lift = max(d - 0.05, 0)`, a 10-degree direction gate, a case split at
/// `d = 0.35`, and a 1/3 outer factor. Rewards are then normalized by the
/// attainable per-step maximum `(10 + 0.30) / 3` so every environment emits
/// rewards in `[0, 1]`.
pub mod lift_reward {
    pub const LIFT_OFFSET: f64 = 0.05;
    pub const HIGH_SPLIT: f64 = 0.35;
    pub const DIR_BONUS: f64 = 10.0;
    pub const HIGH_BONUS: f64 = 3.0;
    pub const OUTER: f64 = 1.0 / 3.0;

    pub fn tilt_gate_cos() -> f64 {
        10f64.to_radians().cos()
    }

    pub fn r_lift(d: f64) -> f64 {
        (d - LIFT_OFFSET).max(0.0)
    }

    pub fn r_dir(tilt: f64) -> f64 {
        if tilt.cos() >= tilt_gate_cos() {
            1.0
        } else {
            0.0
        }
    }

    /// Raw (pre-normalization) per-step reward.
    pub fn raw(d: f64, tilt: f64) -> f64 {
        let dir = r_dir(tilt);
        OUTER
            * if d > HIGH_SPLIT {
                HIGH_BONUS * dir
            } else {
                DIR_BONUS * dir + r_lift(d)
            }
    }

    /// Attainable per-step maximum of `raw` (at `d = HIGH_SPLIT`, level).
    pub fn raw_max() -> f64 {
        OUTER * (DIR_BONUS + (HIGH_SPLIT - LIFT_OFFSET))
    }

    /// Normalized per-step reward in `[0, 1]`.
    pub fn normalized(d: f64, tilt: f64) -> f64 {
        raw(d, tilt) / raw_max()
    }
}
