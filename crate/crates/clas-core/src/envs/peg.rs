//! Planar peg-in-hole analog: one agent steers a peg segment, the other the
//! hole frame. Both bodies float (no gravity) under force+torque control.
//! The reward combines reaching (peg tip to hole center) and orientation
//! alignment; success is sustained insertion alignment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    sample_disturbance, wrap_angle, DisturbanceConfig, Env, EnvConfig, StepInfo, StepResult,
};
use crate::error::{Error, Result};

const PEG_TIP_OFFSET: f64 = 0.3;
const REACH_TOL: f64 = 0.05;
const ALIGN_TOL: f64 = 10.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, Default)]
struct Body {
    x: f64,
    z: f64,
    theta: f64,
    vx: f64,
    vz: f64,
    omega: f64,
}

#[derive(Debug, Clone)]
pub struct PegInHoleEnv {
    cfg: EnvConfig,
    peg: Body,
    hole: Body,
    step_index: usize,
    rng: ChaCha8Rng,
    done: bool,
    hold_counter: usize,
    started: bool,
}

impl PegInHoleEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.n_agents != 2 {
            return Err(Error::Config("peg-in-hole is a two-agent task".into()));
        }
        Ok(Self {
            cfg,
            peg: Body::default(),
            hole: Body::default(),
            step_index: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            done: true,
            hold_counter: 0,
            started: false,
        })
    }

    fn peg_tip(&self) -> [f64; 2] {
        let (s, c) = self.peg.theta.sin_cos();
        [
            self.peg.x + c * PEG_TIP_OFFSET,
            self.peg.z + s * PEG_TIP_OFFSET,
        ]
    }

    fn distance(&self) -> f64 {
        let tip = self.peg_tip();
        let dx = tip[0] - self.hole.x;
        let dz = tip[1] - self.hole.z;
        (dx * dx + dz * dz).sqrt()
    }

    fn misalignment(&self) -> f64 {
        wrap_angle(self.peg.theta - self.hole.theta).abs()
    }

    fn reward(&self) -> f64 {
        let reach = 1.0 - (2.0 * self.distance()).tanh();
        let align = 1.0 - (2.0 * self.misalignment()).tanh();
        0.5 * reach + 0.5 * align
    }

    fn goal_condition(&self) -> bool {
        self.distance() <= REACH_TOL && self.misalignment() <= ALIGN_TOL
    }

    fn body_obs(&self, b: &Body) -> Vec<f64> {
        let vs = self.cfg.vel_obs_scale;
        vec![b.x, b.z, b.theta, b.vx * vs, b.vz * vs, b.omega * vs]
    }

    fn result(&self, reward: f64, disturbance: [f64; 2]) -> StepResult {
        StepResult {
            per_agent_obs: vec![self.body_obs(&self.peg), self.body_obs(&self.hole)],
            shared_obs: vec![
                self.peg.x,
                self.peg.z,
                self.peg.theta,
                self.hole.x,
                self.hole.z,
                self.hole.theta,
                self.distance(),
            ],
            reward,
            done: self.done,
            info: StepInfo {
                success: self.done && self.hold_counter >= self.cfg.success_hold_steps,
                success_running: self.hold_counter >= self.cfg.success_hold_steps,
                disturbance,
                failure: false,
            },
        }
    }

    fn integrate(body: &mut Body, f: [f64; 3], cfg: &EnvConfig) {
        let ax = f[0] / cfg.object_mass - cfg.lin_damping * body.vx;
        let az = f[1] / cfg.object_mass - cfg.lin_damping * body.vz;
        let aw = f[2] / cfg.object_inertia - cfg.ang_damping * body.omega;
        body.vx += cfg.dt * ax;
        body.vz += cfg.dt * az;
        body.omega += cfg.dt * aw;
        body.x += cfg.dt * body.vx;
        body.z += cfg.dt * body.vz;
        body.theta = wrap_angle(body.theta + cfg.dt * body.omega);
    }
}

impl Env for PegInHoleEnv {
    fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn obs_dims(&self) -> Vec<usize> {
        vec![6, 6]
    }

    fn shared_obs_dim(&self) -> usize {
        7
    }

    fn reset(&mut self, seed: u64) -> StepResult {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let jp = self.cfg.reset_jitter_pos;
        let jt = self.cfg.reset_jitter_tilt;
        let draw = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| {
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                lo
            }
        };
        self.peg = Body {
            x: -0.6 + draw(-jp, jp, &mut self.rng),
            z: draw(-jp, jp, &mut self.rng),
            theta: draw(-jt, jt, &mut self.rng),
            ..Body::default()
        };
        self.hole = Body {
            x: 0.6 + draw(-jp, jp, &mut self.rng),
            z: draw(-jp, jp, &mut self.rng),
            theta: draw(-jt, jt, &mut self.rng),
            ..Body::default()
        };
        self.step_index = 0;
        self.done = false;
        self.started = true;
        self.hold_counter = 0;
        self.result(0.0, [0.0; 2])
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepResult> {
        if self.done || !self.started {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        if actions.len() != 2 {
            return Err(Error::DimMismatch("peg-in-hole expects 2 actions".into()));
        }
        let mut forces = [[0.0; 3]; 2];
        for (i, action) in actions.iter().enumerate() {
            if action.len() != 3 {
                return Err(Error::DimMismatch(format!(
                    "agent {i} action has {} components, expected 3",
                    action.len()
                )));
            }
            forces[i] = [
                action[0].clamp(-1.0, 1.0) * self.cfg.action_scale,
                action[1].clamp(-1.0, 1.0) * self.cfg.action_scale,
                action[2].clamp(-1.0, 1.0) * self.cfg.torque_scale,
            ];
        }

        self.step_index += 1;
        let disturbance = sample_disturbance(&self.cfg.disturbance, self.step_index, &mut self.rng);
        // The disturbance pushes the peg body (the free object of this task).
        forces[0][0] += disturbance[0];
        forces[0][1] += disturbance[1];

        Self::integrate(&mut self.peg, forces[0], &self.cfg);
        Self::integrate(&mut self.hole, forces[1], &self.cfg);

        let reward = self.reward();
        if self.goal_condition() {
            self.hold_counter += 1;
        } else {
            self.hold_counter = 0;
        }
        if self.step_index >= self.cfg.max_steps {
            self.done = true;
        }
        Ok(self.result(reward, disturbance))
    }

    fn state_vector(&self) -> Vec<f64> {
        vec![
            self.peg.x,
            self.peg.z,
            self.peg.theta,
            self.peg.vx,
            self.peg.vz,
            self.peg.omega,
            self.hole.x,
            self.hole.z,
            self.hole.theta,
            self.hole.vx,
            self.hole.vz,
            self.hole.omega,
            self.distance(),
        ]
    }

    fn state_labels(&self) -> Vec<String> {
        [
            "peg_x", "peg_z", "peg_theta", "peg_vx", "peg_vz", "peg_omega", "hole_x", "hole_z",
            "hole_theta", "hole_vx", "hole_vz", "hole_omega", "distance",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    fn set_disturbance(&mut self, d: Option<DisturbanceConfig>) {
        self.cfg.disturbance = d;
    }

    fn clone_env(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {

    use crate::envs::make_named_env;

    #[test]
    fn reward_is_bounded_and_improves_with_proximity() {
        let mut env = make_named_env("peg_in_hole").unwrap();
        env.reset(1);
        let far = env.step(&[vec![0.0; 3], vec![0.0; 3]]).unwrap().reward;
        assert!((0.0..=1.0).contains(&far));

        // Drive the peg toward the hole; reward should rise.
        let mut best = far;
        for _ in 0..200 {
            let r = env.step(&[vec![1.0, 0.0, 0.0], vec![0.0; 3]]).unwrap();
            best = best.max(r.reward);
            if r.done {
                break;
            }
        }
        assert!(best > far, "approaching the hole must increase reward");
    }

    #[test]
    fn shared_obs_carries_both_poses_and_distance() {
        let mut env = make_named_env("peg_in_hole").unwrap();
        let r = env.reset(5);
        assert_eq!(r.shared_obs.len(), 7);
        let sv = env.state_vector();
        assert_eq!(r.shared_obs[6], sv[12], "distance field");
    }

    #[test]
    fn determinism_across_identical_runs() {
        let run = || {
            let mut env = make_named_env("peg_in_hole").unwrap();
            env.reset(11);
            let mut acc = Vec::new();
            for k in 0..50 {
                let u = 0.3 * ((k as f64) * 0.2).cos();
                let r = env
                    .step(&[vec![u, -u, 0.1], vec![-u, u, -0.1]])
                    .unwrap();
                acc.extend(r.shared_obs);
            }
            acc
        };
        assert_eq!(run(), run());
    }
}
