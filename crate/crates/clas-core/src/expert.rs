//! Scripted experts: hand-written controllers that solve the toy tasks.
//! They calibrate the empirically attainable reward, provide competent
//! frozen policies for robustness sweeps, and double as negative controls
//! (single-agent variant) for the cooperation-necessity checks.

use crate::agents::{ActPolicy, AgentRngs, JointObs};
use crate::envs::{ActionSemantics, EnvConfig, EnvKind};

/// Wrench-space PD controller for the lift family: drive the bar to just
/// below the high-reward split height, keep it level, and distribute the
/// wrench over the attachment points.
pub struct LiftExpert {
    cfg: EnvConfig,
    target_z: f64,
    /// When set, only this agent acts and all others emit zeros.
    solo_agent: Option<usize>,
}

impl LiftExpert {
    pub fn new(cfg: &EnvConfig) -> Self {
        assert_eq!(cfg.kind, EnvKind::Lift, "lift expert needs a lift environment");
        Self {
            cfg: cfg.clone(),
            target_z: 0.33,
            solo_agent: None,
        }
    }

    /// Degenerate variant driving a single agent; used to demonstrate that
    /// one agent cannot solve the task alone.
    pub fn solo(cfg: &EnvConfig, agent: usize) -> Self {
        Self {
            solo_agent: Some(agent),
            ..Self::new(cfg)
        }
    }
}

impl ActPolicy for LiftExpert {
    fn act(&self, obs: &JointObs, _stochastic: bool, _rngs: &mut AgentRngs) -> Vec<Vec<f64>> {
        let cfg = &self.cfg;
        let vs = cfg.vel_obs_scale;
        let (x, z, tilt) = (obs.shared[0], obs.shared[1], obs.shared[2]);
        let (vx, vz, omega) = (
            obs.shared[3] / vs,
            obs.shared[4] / vs,
            obs.shared[5] / vs,
        );

        // Desired wrench on the object.
        let fx_total = cfg.object_mass * (-2.0 * x - 2.0 * vx);
        let fz_total =
            cfg.object_mass * (cfg.gravity + 3.0 * (self.target_z - z) - 2.5 * vz);
        let torque_total = cfg.object_inertia * (-60.0 * tilt - 18.0 * omega);

        // Distribute: equal force shares plus a torque correction along the
        // attachment lever arms.
        let n = cfg.n_agents as f64;
        let lever_sq: f64 = cfg
            .attachment_offsets
            .iter()
            .map(|o| o[0] * o[0])
            .sum::<f64>()
            .max(1e-9);

        let mut actions = Vec::with_capacity(cfg.n_agents);
        for i in 0..cfg.n_agents {
            let lever = cfg.attachment_offsets[i][0];
            let fz_i = fz_total / n + torque_total * lever / lever_sq;
            let fx_i = fx_total / n;
            let mut a = vec![
                (fx_i / cfg.action_scale).clamp(-1.0, 1.0),
                (fz_i / cfg.action_scale).clamp(-1.0, 1.0),
            ];
            if cfg.action_semantics[i] == ActionSemantics::ForceTorque {
                a.push(0.0);
            }
            if let Some(solo) = self.solo_agent {
                if i != solo {
                    a.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            actions.push(a);
        }
        actions
    }
}

/// PD controller for the peg-in-hole analog: the peg chases the hole mouth
/// while aligning orientations; the hole frame steadies itself.
pub struct PegExpert {
    cfg: EnvConfig,
}

impl PegExpert {
    pub fn new(cfg: &EnvConfig) -> Self {
        assert_eq!(cfg.kind, EnvKind::PegInHole);
        Self { cfg: cfg.clone() }
    }
}

impl ActPolicy for PegExpert {
    fn act(&self, obs: &JointObs, _stochastic: bool, _rngs: &mut AgentRngs) -> Vec<Vec<f64>> {
        let cfg = &self.cfg;
        let vs = cfg.vel_obs_scale;
        let peg = &obs.per_agent[0];
        let hole = &obs.per_agent[1];
        let (px, pz, pt) = (peg[0], peg[1], peg[2]);
        let (pvx, pvz, pw) = (peg[3] / vs, peg[4] / vs, peg[5] / vs);
        let (hx, hz, ht) = (hole[0], hole[1], hole[2]);
        let (hvx, hvz, hw) = (hole[3] / vs, hole[4] / vs, hole[5] / vs);

        // Aim the peg body so its tip lands on the hole center.
        let tip_dx = 0.3 * pt.cos();
        let tip_dz = 0.3 * pt.sin();
        let ex = hx - (px + tip_dx);
        let ez = hz - (pz + tip_dz);
        let et = crate::envs::wrap_angle(ht - pt);

        let peg_action = vec![
            ((3.0 * ex - 2.0 * pvx) / cfg.action_scale).clamp(-1.0, 1.0),
            ((3.0 * ez - 2.0 * pvz) / cfg.action_scale).clamp(-1.0, 1.0),
            ((4.0 * et - 2.0 * pw) * cfg.object_inertia / cfg.torque_scale).clamp(-1.0, 1.0),
        ];
        // The hole frame damps itself in place.
        let hole_action = vec![
            ((-2.0 * hvx) / cfg.action_scale).clamp(-1.0, 1.0),
            ((-2.0 * hvz) / cfg.action_scale).clamp(-1.0, 1.0),
            ((-2.0 * hw) * cfg.object_inertia / cfg.torque_scale).clamp(-1.0, 1.0),
        ];
        vec![peg_action, hole_action]
    }
}

/// Uniform-random policy over the environment's action space.
pub struct RandomPolicy {
    pub action_dims: Vec<usize>,
}

impl ActPolicy for RandomPolicy {
    fn act(&self, _obs: &JointObs, _stochastic: bool, rngs: &mut AgentRngs) -> Vec<Vec<f64>> {
        use rand::Rng;
        self.action_dims
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let rng = &mut rngs.per_agent[i];
                (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
            })
            .collect()
    }
}
