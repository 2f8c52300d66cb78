//! Method-level orchestration: the latent-space learners (full and partial
//! observability), the latent single-agent baseline, and the three direct
//! baselines, all behind one act/update/checkpoint interface.
//!
//! Execution contracts:
//! * latent methods never invoke the encoder to act;
//! * the central latent action is evaluated once per step from the shared
//!   observation and broadcast to every decoder;
//! * decentralized methods (partial latent, independent and central-critic
//!   baselines) compute agent `i`'s action from `(o_i, o_c)` and agent-local
//!   randomness only.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{
    mask_central_latent, ElboBreakdown, LatentActionModel, LatentSpec, ObsActBatch, Observability,
};
use crate::nn::{param_hash, AdamState};
use crate::replay::{ReplayBuffer, TransitionBatch};
use crate::sac::{hcat, DecoderFlowCtx, SacBatch, SacConfig, SacLearner, SacStepMetrics};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    ClasFull,
    ClasPartial,
    Single,
    Laser,
    FullDec,
    SharedQ,
}

impl MethodKind {
    pub fn uses_latent_model(self) -> bool {
        matches!(self, MethodKind::ClasFull | MethodKind::ClasPartial | MethodKind::Laser)
    }

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::ClasFull => "clas_full",
            MethodKind::ClasPartial => "clas_partial",
            MethodKind::Single => "single",
            MethodKind::Laser => "laser",
            MethodKind::FullDec => "full_dec",
            MethodKind::SharedQ => "shared_q",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "clas_full" => MethodKind::ClasFull,
            "clas_partial" => MethodKind::ClasPartial,
            "single" => MethodKind::Single,
            "laser" => MethodKind::Laser,
            "full_dec" => MethodKind::FullDec,
            "shared_q" => MethodKind::SharedQ,
            other => return Err(Error::Config(format!("unknown method '{other}'"))),
        })
    }
}

/// Environment interface dimensions a policy is built against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvDims {
    pub obs_dims: Vec<usize>,
    pub shared_obs_dim: usize,
    pub action_dims: Vec<usize>,
}

impl EnvDims {
    pub fn of(env: &dyn crate::envs::Env) -> Self {
        Self {
            obs_dims: env.obs_dims(),
            shared_obs_dim: env.shared_obs_dim(),
            action_dims: env.action_dims(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.obs_dims.len()
    }

    pub fn full_obs_dim(&self) -> usize {
        self.obs_dims.iter().sum::<usize>() + self.shared_obs_dim
    }

    pub fn total_action_dim(&self) -> usize {
        self.action_dims.iter().sum()
    }
}

/// Latent-model options.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentConfig {
    /// Central latent dim; `None` picks the environment default.
    pub central_latent_dim: Option<usize>,
    /// Uniform per-agent latent dim; `None` picks the environment default.
    pub agent_latent_dim: Option<usize>,
    /// KL weight in the loss.
    pub beta: f64,
    pub hidden_width: usize,
    pub lr: f64,
    /// Let per-agent latent actors see the shared observation as well as
    /// their own (the default follows the factorized policy structure:
    /// private observation only).
    pub agent_actor_sees_shared: bool,
    /// Once policy learning starts, the latent model's learning rate is
    /// multiplied by this factor: co-training continues every step, but the
    /// latent coordinates drift slowly enough for the critics to track them.
    pub post_warmup_lr_scale: f64,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            central_latent_dim: None,
            agent_latent_dim: None,
            beta: 1.0,
            hidden_width: 64,
            lr: 1e-3,
            agent_actor_sees_shared: false,
            post_warmup_lr_scale: 0.1,
        }
    }
}

/// Per-agent and central random streams, so agent `i`'s stochastic action
/// depends on agent-`i` randomness only.
pub struct AgentRngs {
    pub per_agent: Vec<ChaCha8Rng>,
    pub central: ChaCha8Rng,
}

impl AgentRngs {
    pub fn new(seed: u64, n_agents: usize) -> Self {
        let make = |stream: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            rng
        };
        Self {
            per_agent: (0..n_agents).map(|i| make(1 + i as u64)).collect(),
            central: make(0),
        }
    }
}

/// Joint observation at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct JointObs {
    pub per_agent: Vec<Vec<f64>>,
    pub shared: Vec<f64>,
}

impl JointObs {
    pub fn from_step(r: &crate::envs::StepResult) -> Self {
        Self {
            per_agent: r.per_agent_obs.clone(),
            shared: r.shared_obs.clone(),
        }
    }

    pub fn full(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for o in &self.per_agent {
            out.extend_from_slice(o);
        }
        out.extend_from_slice(&self.shared);
        out
    }
}

/// Anything that can drive an environment (learned policies, scripted
/// experts).
pub trait ActPolicy {
    fn act(&self, obs: &JointObs, stochastic: bool, rngs: &mut AgentRngs) -> Vec<Vec<f64>>;
}

/// Diagnostics from one `update` call.
#[derive(Debug, Clone, Default)]
pub struct UpdateMetrics {
    pub elbo: Option<ElboBreakdown>,
    pub sac: Vec<SacStepMetrics>,
}

struct ClasMethod {
    model: LatentActionModel,
    learner: SacLearner,
    model_opt: AdamState,
    decoder_flow_opt: AdamState,
    lr_rescaled: bool,
    beta: f64,
    /// Index into `learner.actors` for each agent's latent actor (agents with
    /// an empty latent block have none). The central actor is always last.
    agent_actor_index: Vec<Option<usize>>,
    agent_actor_sees_shared: bool,
}

struct LaserMethod {
    model: LatentActionModel,
    learner: SacLearner,
    model_opt: AdamState,
    decoder_flow_opt: AdamState,
    lr_rescaled: bool,
    beta: f64,
}

struct SingleMethod {
    learner: SacLearner,
}

struct FullDecMethod {
    learners: Vec<SacLearner>,
}

struct SharedQMethod {
    learner: SacLearner,
}

enum MethodInner {
    Clas(ClasMethod),
    Laser(LaserMethod),
    Single(SingleMethod),
    FullDec(FullDecMethod),
    SharedQ(SharedQMethod),
}

/// One multi-agent policy of a chosen method kind.
pub struct MultiAgentPolicy {
    kind: MethodKind,
    dims: EnvDims,
    sac_cfg: SacConfig,
    latent_cfg: LatentConfig,
    inner: MethodInner,
    mask_central: bool,
}

impl MultiAgentPolicy {
    pub fn new(
        kind: MethodKind,
        dims: EnvDims,
        default_latent: (Vec<usize>, usize),
        sac_cfg: SacConfig,
        latent_cfg: LatentConfig,
        seed: u64,
    ) -> Result<Self> {
        sac_cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0xC0FFEE);
        let inner = match kind {
            MethodKind::ClasPartial | MethodKind::ClasFull => {
                let mode = if kind == MethodKind::ClasPartial {
                    Observability::Partial
                } else {
                    Observability::Full
                };
                let agent_latents = match (mode, latent_cfg.agent_latent_dim) {
                    (Observability::Full, _) => vec![0; dims.n_agents()],
                    (Observability::Partial, Some(d)) => vec![d; dims.n_agents()],
                    (Observability::Partial, None) => default_latent.0.clone(),
                };
                let central = latent_cfg.central_latent_dim.unwrap_or(default_latent.1);
                let spec = LatentSpec {
                    n_agents: dims.n_agents(),
                    obs_dims: dims.obs_dims.clone(),
                    shared_obs_dim: dims.shared_obs_dim,
                    action_dims: dims.action_dims.clone(),
                    agent_latent_dims: agent_latents.clone(),
                    central_latent_dim: central,
                    mode,
                };
                let model = LatentActionModel::new(spec, latent_cfg.hidden_width, &mut rng)?;

                let mut actor_dims: Vec<(usize, usize)> = Vec::new();
                let mut agent_actor_index = vec![None; dims.n_agents()];
                if mode == Observability::Partial {
                    for i in 0..dims.n_agents() {
                        if agent_latents[i] > 0 {
                            let obs = if latent_cfg.agent_actor_sees_shared {
                                dims.obs_dims[i] + dims.shared_obs_dim
                            } else {
                                dims.obs_dims[i]
                            };
                            agent_actor_index[i] = Some(actor_dims.len());
                            actor_dims.push((obs, agent_latents[i]));
                        }
                    }
                    actor_dims.push((dims.shared_obs_dim, central));
                } else {
                    actor_dims.push((dims.full_obs_dim(), central));
                }
                let learner =
                    SacLearner::new(&actor_dims, dims.full_obs_dim(), sac_cfg.clone(), &mut rng)?;
                let model_opt = AdamState::new(&model.trainable_params(), latent_cfg.lr);
                let decoder_flow_opt = AdamState::new(&model.decoder_params(), sac_cfg.lr);
                MethodInner::Clas(ClasMethod {
                    model,
                    learner,
                    model_opt,
                    decoder_flow_opt,
                    lr_rescaled: false,
                    beta: latent_cfg.beta,
                    agent_actor_index,
                    agent_actor_sees_shared: latent_cfg.agent_actor_sees_shared,
                })
            }
            MethodKind::Laser => {
                let central = latent_cfg
                    .central_latent_dim
                    .unwrap_or(default_latent.1.min(dims.total_action_dim() - 1));
                let spec = LatentSpec {
                    n_agents: 1,
                    obs_dims: vec![dims.obs_dims.iter().sum()],
                    shared_obs_dim: dims.shared_obs_dim,
                    action_dims: vec![dims.total_action_dim()],
                    agent_latent_dims: vec![0],
                    central_latent_dim: central,
                    mode: Observability::Full,
                };
                let model = LatentActionModel::new(spec, latent_cfg.hidden_width, &mut rng)?;
                let learner = SacLearner::new(
                    &[(dims.full_obs_dim(), central)],
                    dims.full_obs_dim(),
                    sac_cfg.clone(),
                    &mut rng,
                )?;
                let model_opt = AdamState::new(&model.trainable_params(), latent_cfg.lr);
                let decoder_flow_opt = AdamState::new(&model.decoder_params(), sac_cfg.lr);
                MethodInner::Laser(LaserMethod {
                    model,
                    learner,
                    model_opt,
                    decoder_flow_opt,
                    lr_rescaled: false,
                    beta: latent_cfg.beta,
                })
            }
            MethodKind::Single => {
                let learner = SacLearner::new(
                    &[(dims.full_obs_dim(), dims.total_action_dim())],
                    dims.full_obs_dim(),
                    sac_cfg.clone(),
                    &mut rng,
                )?;
                MethodInner::Single(SingleMethod { learner })
            }
            MethodKind::FullDec => {
                let learners = (0..dims.n_agents())
                    .map(|i| {
                        let obs = dims.obs_dims[i] + dims.shared_obs_dim;
                        SacLearner::new(
                            &[(obs, dims.action_dims[i])],
                            obs,
                            sac_cfg.clone(),
                            &mut rng,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                MethodInner::FullDec(FullDecMethod { learners })
            }
            MethodKind::SharedQ => {
                let actor_dims: Vec<(usize, usize)> = (0..dims.n_agents())
                    .map(|i| (dims.obs_dims[i] + dims.shared_obs_dim, dims.action_dims[i]))
                    .collect();
                let learner = SacLearner::new(
                    &actor_dims,
                    dims.full_obs_dim(),
                    sac_cfg.clone(),
                    &mut rng,
                )?;
                MethodInner::SharedQ(SharedQMethod { learner })
            }
        };
        Ok(Self {
            kind,
            dims,
            sac_cfg,
            latent_cfg,
            inner,
            mask_central: false,
        })
    }

    pub fn kind(&self) -> MethodKind {
        self.kind
    }

    pub fn dims(&self) -> &EnvDims {
        &self.dims
    }

    pub fn sac_cfg(&self) -> &SacConfig {
        &self.sac_cfg
    }

    pub fn latent_cfg(&self) -> &LatentConfig {
        &self.latent_cfg
    }

    pub fn latent_spec(&self) -> Option<&LatentSpec> {
        match &self.inner {
            MethodInner::Clas(m) => Some(m.model.spec()),
            MethodInner::Laser(m) => Some(m.model.spec()),
            _ => None,
        }
    }

    pub fn latent_model(&self) -> Option<&LatentActionModel> {
        match &self.inner {
            MethodInner::Clas(m) => Some(&m.model),
            MethodInner::Laser(m) => Some(&m.model),
            _ => None,
        }
    }

    /// Drop the encoder from the latent model (deployment-style policy).
    pub fn drop_encoder(&mut self) -> Result<()> {
        match &mut self.inner {
            MethodInner::Clas(m) => m.model.drop_encoder(),
            MethodInner::Laser(m) => m.model.drop_encoder(),
            _ => return Err(Error::Contract("method has no latent model".into())),
        }
        Ok(())
    }

    /// Zero the central latent block at execution time (ablation switch).
    pub fn set_mask_central(&mut self, on: bool) -> Result<()> {
        if !self.kind.uses_latent_model() {
            return Err(Error::Config(format!(
                "--mask-central requires a latent-action method, got {}",
                self.kind.name()
            )));
        }
        self.mask_central = on;
        Ok(())
    }

    pub fn mask_central(&self) -> bool {
        self.mask_central
    }

    /// Assemble the full latent action for one step (latent methods only).
    /// The central block is evaluated once from the shared observation and
    /// broadcast; per-agent blocks come from agent actors on private
    /// observations and agent-local randomness.
    pub fn assemble_latent(
        &self,
        obs: &JointObs,
        stochastic: bool,
        rngs: &mut AgentRngs,
    ) -> Result<Vec<f64>> {
        let (model, learner, agent_actor_index, sees_shared) = match &self.inner {
            MethodInner::Clas(m) => (
                &m.model,
                &m.learner,
                Some(&m.agent_actor_index),
                m.agent_actor_sees_shared,
            ),
            MethodInner::Laser(m) => (&m.model, &m.learner, None, false),
            _ => return Err(Error::Contract("method has no latent actors".into())),
        };
        let spec = model.spec();
        let mut v = vec![0.0; spec.total_latent_dim()];

        let central_actor = learner.actors.last().expect("central actor");
        let central_obs: Vec<f64> = match spec.mode {
            Observability::Partial => obs.shared.clone(),
            Observability::Full => obs.full(),
        };
        let v_c = central_actor.act1(&central_obs, stochastic, &mut rngs.central);
        let c0 = spec.central_latent_offset();
        v[c0..].copy_from_slice(&v_c);

        if let Some(index) = agent_actor_index {
            for i in 0..spec.n_agents {
                if let Some(k) = index[i] {
                    let actor = &learner.actors[k];
                    let mut aobs = obs.per_agent[i].clone();
                    if sees_shared {
                        aobs.extend_from_slice(&obs.shared);
                    }
                    let v_i = actor.act1(&aobs, stochastic, &mut rngs.per_agent[i]);
                    let off = spec.agent_latent_offset(i);
                    v[off..off + v_i.len()].copy_from_slice(&v_i);
                }
            }
        }
        if self.mask_central {
            mask_central_latent(&mut v, spec);
        }
        Ok(v)
    }

    fn act_inner(
        &self,
        obs: &JointObs,
        stochastic: bool,
        rngs: &mut AgentRngs,
    ) -> Result<Vec<Vec<f64>>> {
        match &self.inner {
            MethodInner::Clas(m) => {
                let v = self.assemble_latent(obs, stochastic, rngs)?;
                (0..self.dims.n_agents())
                    .map(|i| m.model.decode_action1(i, &obs.per_agent, &obs.shared, &v))
                    .collect()
            }
            MethodInner::Laser(m) => {
                let v = self.assemble_latent(obs, stochastic, rngs)?;
                let merged: Vec<Vec<f64>> = vec![obs.per_agent.concat()];
                let joint = m.model.decode_action1(0, &merged, &obs.shared, &v)?;
                Ok(split_action(&joint, &self.dims.action_dims))
            }
            MethodInner::Single(m) => {
                let joint = m.learner.actors[0].act1(&obs.full(), stochastic, &mut rngs.central);
                Ok(split_action(&joint, &self.dims.action_dims))
            }
            MethodInner::FullDec(m) => Ok((0..self.dims.n_agents())
                .map(|i| {
                    let mut aobs = obs.per_agent[i].clone();
                    aobs.extend_from_slice(&obs.shared);
                    m.learners[i].actors[0].act1(&aobs, stochastic, &mut rngs.per_agent[i])
                })
                .collect()),
            MethodInner::SharedQ(m) => Ok((0..self.dims.n_agents())
                .map(|i| {
                    let mut aobs = obs.per_agent[i].clone();
                    aobs.extend_from_slice(&obs.shared);
                    m.learner.actors[i].act1(&aobs, stochastic, &mut rngs.per_agent[i])
                })
                .collect()),
        }
    }

    /// One training update against the replay buffer. During warm-up only
    /// the latent action model (when the method has one) is trained; actors
    /// and critics start after warm-up.
    pub fn update(
        &mut self,
        replay: &ReplayBuffer,
        in_warmup: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<UpdateMetrics> {
        let batch_size = self.sac_cfg.batch_size;
        if replay.len() < batch_size {
            return Ok(UpdateMetrics::default());
        }
        let samples = replay.sample(batch_size, rng)?;
        let batch = TransitionBatch::gather(&samples);
        let mut metrics = UpdateMetrics::default();

        match &mut self.inner {
            MethodInner::Clas(m) => {
                if !in_warmup && !m.lr_rescaled {
                    m.model_opt.lr *= self.latent_cfg.post_warmup_lr_scale;
                    m.lr_rescaled = true;
                }
                let obs_act = ObsActBatch {
                    per_agent_obs: batch.per_agent_obs.clone(),
                    shared_obs: batch.shared_obs.clone(),
                    actions: batch.actions.clone(),
                };
                metrics.elbo = Some(m.model.train_step(&obs_act, m.beta, &mut m.model_opt, rng)?);

                if !in_warmup {
                    let full_obs = full_obs_tensor(&batch.per_agent_obs, &batch.shared_obs);
                    let next_full_obs =
                        full_obs_tensor(&batch.next_per_agent_obs, &batch.next_shared_obs);
                    let latent = m.model.encode_latent_batch(&obs_act)?;
                    let spec = m.model.spec().clone();

                    let mut actor_obs = Vec::new();
                    let mut next_actor_obs = Vec::new();
                    for i in 0..spec.n_agents {
                        if m.agent_actor_index[i].is_some() {
                            if m.agent_actor_sees_shared {
                                actor_obs.push(hcat(&[&batch.per_agent_obs[i], &batch.shared_obs]));
                                next_actor_obs.push(hcat(&[
                                    &batch.next_per_agent_obs[i],
                                    &batch.next_shared_obs,
                                ]));
                            } else {
                                actor_obs.push(batch.per_agent_obs[i].clone());
                                next_actor_obs.push(batch.next_per_agent_obs[i].clone());
                            }
                        }
                    }
                    match spec.mode {
                        Observability::Partial => {
                            actor_obs.push(batch.shared_obs.clone());
                            next_actor_obs.push(batch.next_shared_obs.clone());
                        }
                        Observability::Full => {
                            actor_obs.push(full_obs.clone());
                            next_actor_obs.push(next_full_obs.clone());
                        }
                    }

                    let sac_batch = SacBatch {
                        actor_obs,
                        next_actor_obs,
                        critic_obs: full_obs,
                        next_critic_obs: next_full_obs,
                        actions: latent,
                        rewards: batch.rewards.clone(),
                        not_done: batch.not_done.clone(),
                    };
                    let flow = DecoderFlowCtx {
                        model: &mut m.model,
                        decoder_opt: &mut m.decoder_flow_opt,
                        per_agent_obs: &batch.per_agent_obs,
                        shared_obs: &batch.shared_obs,
                    };
                    metrics
                        .sac
                        .push(m.learner.update_step(&sac_batch, Some(flow), rng)?);
                }
            }
            MethodInner::Laser(m) => {
                if !in_warmup && !m.lr_rescaled {
                    m.model_opt.lr *= self.latent_cfg.post_warmup_lr_scale;
                    m.lr_rescaled = true;
                }
                let merged_obs = hcat(&batch.per_agent_obs.iter().collect::<Vec<_>>());
                let merged_actions = hcat(&batch.actions.iter().collect::<Vec<_>>());
                let obs_act = ObsActBatch {
                    per_agent_obs: vec![merged_obs.clone()],
                    shared_obs: batch.shared_obs.clone(),
                    actions: vec![merged_actions],
                };
                metrics.elbo = Some(m.model.train_step(&obs_act, m.beta, &mut m.model_opt, rng)?);

                if !in_warmup {
                    let full_obs = full_obs_tensor(&batch.per_agent_obs, &batch.shared_obs);
                    let next_full_obs =
                        full_obs_tensor(&batch.next_per_agent_obs, &batch.next_shared_obs);
                    let latent = m.model.encode_latent_batch(&obs_act)?;
                    let laser_agent_obs = vec![merged_obs];
                    let sac_batch = SacBatch {
                        actor_obs: vec![full_obs.clone()],
                        next_actor_obs: vec![next_full_obs.clone()],
                        critic_obs: full_obs,
                        next_critic_obs: next_full_obs,
                        actions: latent,
                        rewards: batch.rewards.clone(),
                        not_done: batch.not_done.clone(),
                    };
                    let flow = DecoderFlowCtx {
                        model: &mut m.model,
                        decoder_opt: &mut m.decoder_flow_opt,
                        per_agent_obs: &laser_agent_obs,
                        shared_obs: &batch.shared_obs,
                    };
                    metrics
                        .sac
                        .push(m.learner.update_step(&sac_batch, Some(flow), rng)?);
                }
            }
            MethodInner::Single(m) => {
                if !in_warmup {
                    let full_obs = full_obs_tensor(&batch.per_agent_obs, &batch.shared_obs);
                    let next_full_obs =
                        full_obs_tensor(&batch.next_per_agent_obs, &batch.next_shared_obs);
                    let sac_batch = SacBatch {
                        actor_obs: vec![full_obs.clone()],
                        next_actor_obs: vec![next_full_obs.clone()],
                        critic_obs: full_obs,
                        next_critic_obs: next_full_obs,
                        actions: hcat(&batch.actions.iter().collect::<Vec<_>>()),
                        rewards: batch.rewards.clone(),
                        not_done: batch.not_done.clone(),
                    };
                    metrics.sac.push(m.learner.update_step(&sac_batch, None, rng)?);
                }
            }
            MethodInner::FullDec(m) => {
                if !in_warmup {
                    for (i, learner) in m.learners.iter_mut().enumerate() {
                        let aobs = hcat(&[&batch.per_agent_obs[i], &batch.shared_obs]);
                        let next_aobs =
                            hcat(&[&batch.next_per_agent_obs[i], &batch.next_shared_obs]);
                        let sac_batch = SacBatch {
                            actor_obs: vec![aobs.clone()],
                            next_actor_obs: vec![next_aobs.clone()],
                            critic_obs: aobs,
                            next_critic_obs: next_aobs,
                            actions: batch.actions[i].clone(),
                            rewards: batch.rewards.clone(),
                            not_done: batch.not_done.clone(),
                        };
                        metrics.sac.push(learner.update_step(&sac_batch, None, rng)?);
                    }
                }
            }
            MethodInner::SharedQ(m) => {
                if !in_warmup {
                    let full_obs = full_obs_tensor(&batch.per_agent_obs, &batch.shared_obs);
                    let next_full_obs =
                        full_obs_tensor(&batch.next_per_agent_obs, &batch.next_shared_obs);
                    let mut actor_obs = Vec::new();
                    let mut next_actor_obs = Vec::new();
                    for i in 0..self.dims.n_agents() {
                        actor_obs.push(hcat(&[&batch.per_agent_obs[i], &batch.shared_obs]));
                        next_actor_obs
                            .push(hcat(&[&batch.next_per_agent_obs[i], &batch.next_shared_obs]));
                    }
                    let sac_batch = SacBatch {
                        actor_obs,
                        next_actor_obs,
                        critic_obs: full_obs,
                        next_critic_obs: next_full_obs,
                        actions: hcat(&batch.actions.iter().collect::<Vec<_>>()),
                        rewards: batch.rewards.clone(),
                        not_done: batch.not_done.clone(),
                    };
                    metrics.sac.push(m.learner.update_step(&sac_batch, None, rng)?);
                }
            }
        }
        Ok(metrics)
    }

    /// Hash over all actor and critic parameters (warm-up freeze checks).
    pub fn actor_critic_param_hash(&self) -> u64 {
        let mut params: Vec<&Tensor> = Vec::new();
        match &self.inner {
            MethodInner::Clas(m) => params.extend(m.learner.all_params()),
            MethodInner::Laser(m) => params.extend(m.learner.all_params()),
            MethodInner::Single(m) => params.extend(m.learner.all_params()),
            MethodInner::FullDec(m) => {
                for l in &m.learners {
                    params.extend(l.all_params());
                }
            }
            MethodInner::SharedQ(m) => params.extend(m.learner.all_params()),
        }
        param_hash(params)
    }

    /// Hash over every parameter, latent model included.
    pub fn full_param_hash(&self) -> u64 {
        let mut params: Vec<&Tensor> = Vec::new();
        if let Some(model) = self.latent_model() {
            params.extend(model.trainable_params());
        }
        match &self.inner {
            MethodInner::Clas(m) => params.extend(m.learner.all_params()),
            MethodInner::Laser(m) => params.extend(m.learner.all_params()),
            MethodInner::Single(m) => params.extend(m.learner.all_params()),
            MethodInner::FullDec(m) => {
                for l in &m.learners {
                    params.extend(l.all_params());
                }
            }
            MethodInner::SharedQ(m) => params.extend(m.learner.all_params()),
        }
        param_hash(params)
    }

    /// Named parameters of everything this method owns.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        match &self.inner {
            MethodInner::Clas(m) => {
                out.extend(m.model.named_params());
                out.extend(m.learner.named_params(""));
            }
            MethodInner::Laser(m) => {
                out.extend(m.model.named_params());
                out.extend(m.learner.named_params(""));
            }
            MethodInner::Single(m) => out.extend(m.learner.named_params("")),
            MethodInner::FullDec(m) => {
                for (i, l) in m.learners.iter().enumerate() {
                    out.extend(l.named_params(&format!("agent{i}")));
                }
            }
            MethodInner::SharedQ(m) => out.extend(m.learner.named_params("")),
        }
        out
    }

    pub fn load_named_params(
        &mut self,
        lookup: &mut impl FnMut(&str) -> Option<Tensor>,
    ) -> Result<()> {
        match &mut self.inner {
            MethodInner::Clas(m) => {
                m.model.load_named_params(lookup)?;
                m.learner.load_named_params("", lookup)?;
            }
            MethodInner::Laser(m) => {
                m.model.load_named_params(lookup)?;
                m.learner.load_named_params("", lookup)?;
            }
            MethodInner::Single(m) => m.learner.load_named_params("", lookup)?,
            MethodInner::FullDec(m) => {
                for (i, l) in m.learners.iter_mut().enumerate() {
                    l.load_named_params(&format!("agent{i}"), lookup)?;
                }
            }
            MethodInner::SharedQ(m) => m.learner.load_named_params("", lookup)?,
        }
        Ok(())
    }

    /// Direct access for tests and analysis.
    pub fn learners(&self) -> Vec<&SacLearner> {
        match &self.inner {
            MethodInner::Clas(m) => vec![&m.learner],
            MethodInner::Laser(m) => vec![&m.learner],
            MethodInner::Single(m) => vec![&m.learner],
            MethodInner::FullDec(m) => m.learners.iter().collect(),
            MethodInner::SharedQ(m) => vec![&m.learner],
        }
    }

    pub fn learners_mut(&mut self) -> Vec<&mut SacLearner> {
        match &mut self.inner {
            MethodInner::Clas(m) => vec![&mut m.learner],
            MethodInner::Laser(m) => vec![&mut m.learner],
            MethodInner::Single(m) => vec![&mut m.learner],
            MethodInner::FullDec(m) => m.learners.iter_mut().collect(),
            MethodInner::SharedQ(m) => vec![&mut m.learner],
        }
    }
}

impl ActPolicy for MultiAgentPolicy {
    fn act(&self, obs: &JointObs, stochastic: bool, rngs: &mut AgentRngs) -> Vec<Vec<f64>> {
        self.act_inner(obs, stochastic, rngs)
            .expect("policy/environment dimension mismatch")
    }
}

fn split_action(joint: &[f64], dims: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(dims.len());
    let mut off = 0;
    for &d in dims {
        out.push(joint[off..off + d].to_vec());
        off += d;
    }
    debug_assert_eq!(off, joint.len());
    out
}

pub(crate) fn full_obs_tensor(per_agent: &[Tensor], shared: &Tensor) -> Tensor {
    let mut parts: Vec<&Tensor> = per_agent.iter().collect();
    parts.push(shared);
    hcat(&parts)
}
