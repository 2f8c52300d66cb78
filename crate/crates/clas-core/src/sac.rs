//! Soft actor-critic with twin critics, target networks, and learned
//! temperature.
//!
//! One [`SacLearner`] couples K actors to a single twin-critic pair whose
//! input is the (centralized) critic observation plus the concatenation of
//! all actors' actions. K = 1 recovers standard single-agent SAC; the
//! multi-actor form serves the central-critic baselines and the latent-space
//! learners, whose actors factor a joint action.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{gaussian_log_prob_graph, tanh_gaussian_sample_graph, TanhGaussian};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::latent::LatentActionModel;
use crate::nn::{grads_for, AdamState, GaussianMlp, Mlp, NetRole};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    /// Discount factor, in (0, 1).
    pub gamma: f64,
    /// Target smoothing coefficient, in (0, 1].
    pub tau: f64,
    /// Learning rate shared by actor, critic, and temperature optimizers.
    pub lr: f64,
    pub batch_size: usize,
    /// Gradient updates per environment step after warm-up.
    pub update_to_data: f64,
    pub init_alpha: f64,
    /// Target entropy is `target_entropy_per_dim * action_dim`.
    pub target_entropy_per_dim: f64,
    /// Latent-space learners only: let actor updates reach the decoder
    /// parameters through the executed-action distribution. Off by default:
    /// with critics scoring latent actions, the only gradient this path
    /// carries is decoder-entropy inflation, which destabilizes model/policy
    /// co-training (see the flag tests for the exact contract).
    pub decoder_flow: bool,
    pub hidden_width: usize,
    /// Bellman targets are clamped to this range; rewards live in [0, 1], so
    /// the defaults leave generous slack around the feasible soft-value range.
    pub value_clip: (f64, f64),
    /// Global-norm gradient clip for actor and critic updates.
    pub grad_clip: f64,
    /// Upper cap on the learned temperature.
    pub alpha_max: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            batch_size: 256,
            update_to_data: 1.0,
            init_alpha: 0.2,
            target_entropy_per_dim: -1.0,
            decoder_flow: false,
            hidden_width: 64,
            value_clip: (-50.0, 250.0),
            grad_clip: 10.0,
            alpha_max: 2.0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("gamma must be in (0, 1)".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config("tau must be in (0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Tanh-Gaussian policy head plus its learned temperature.
#[derive(Debug, Clone)]
pub struct Actor {
    pub net: GaussianMlp,
    /// Temperature stored as log(alpha); alpha stays positive by construction.
    pub log_alpha: Tensor,
    pub target_entropy: f64,
}

impl Actor {
    pub fn new<R: Rng>(
        obs_dim: usize,
        action_dim: usize,
        cfg: &SacConfig,
        rng: &mut R,
    ) -> Self {
        Self {
            net: GaussianMlp::for_role(NetRole::Actor, obs_dim, cfg.hidden_width, action_dim, rng),
            log_alpha: Tensor::scalar(cfg.init_alpha.ln()),
            target_entropy: cfg.target_entropy_per_dim * action_dim as f64,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.scalar_value().exp()
    }

    /// Execute for one observation: tanh-Gaussian sample when stochastic,
    /// tanh of the mean otherwise.
    pub fn act1<R: Rng>(&self, obs: &[f64], stochastic: bool, rng: &mut R) -> Vec<f64> {
        let dist = TanhGaussian::new(self.net.dist1(obs));
        if stochastic {
            dist.sample(rng).0
        } else {
            dist.mean_action()
        }
    }

    /// Batched graph-free sample: `(actions, row log-probs)`.
    pub fn sample_plain<R: Rng>(&self, obs: &Tensor, rng: &mut R) -> (Tensor, Tensor) {
        let (mean, log_std) = self.net.dist_plain(obs);
        let (b, k) = (mean.rows(), mean.cols());
        let mut actions = Tensor::zeros(b, k);
        let mut log_probs = Tensor::zeros(b, 1);
        for i in 0..b {
            let d = TanhGaussian::new(crate::dist::DiagGaussian::new(
                mean.row_slice(i).to_vec(),
                log_std.row_slice(i).to_vec(),
            ));
            let (a, lp) = d.sample(rng);
            actions.data_mut()[i * k..(i + 1) * k].copy_from_slice(&a);
            log_probs.data_mut()[i] = lp;
        }
        (actions, log_probs)
    }
}

/// Twin critics plus their Polyak-averaged targets.
#[derive(Debug, Clone)]
pub struct CriticPair {
    pub q1: Mlp,
    pub q2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
}

impl CriticPair {
    pub fn new<R: Rng>(obs_dim: usize, action_dim: usize, cfg: &SacConfig, rng: &mut R) -> Self {
        let q1 = Mlp::for_role(NetRole::Critic, obs_dim + action_dim, cfg.hidden_width, 1, rng);
        let q2 = Mlp::for_role(NetRole::Critic, obs_dim + action_dim, cfg.hidden_width, 1, rng);
        let target1 = q1.clone();
        let target2 = q2.clone();
        Self {
            q1,
            q2,
            target1,
            target2,
        }
    }

    /// `target <- tau * online + (1 - tau) * target`.
    pub fn soft_update(&mut self, tau: f64) {
        for (online, target) in [(&self.q1, &mut self.target1), (&self.q2, &mut self.target2)] {
            for (o, t) in online.params().into_iter().zip(target.params_mut()) {
                for (ov, tv) in o.data().iter().zip(t.data_mut()) {
                    *tv = tau * ov + (1.0 - tau) * *tv;
                }
            }
        }
    }

    /// `min(target1, target2)` on a plain batch.
    pub fn target_min_plain(&self, input: &Tensor) -> Tensor {
        let a = self.target1.forward_plain(input);
        let b = self.target2.forward_plain(input);
        a.zip_map(&b, f64::min)
    }
}

/// Per-update diagnostics.
#[derive(Debug, Clone, Default)]
pub struct SacStepMetrics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_losses: Vec<f64>,
    pub alphas: Vec<f64>,
}

/// Pre-assembled batch in the learner's own action space.
#[derive(Debug, Clone)]
pub struct SacBatch {
    /// Per-actor observation matrices, `[B, obs_k]`.
    pub actor_obs: Vec<Tensor>,
    pub next_actor_obs: Vec<Tensor>,
    pub critic_obs: Tensor,
    pub next_critic_obs: Tensor,
    /// Joint action in learner space, `[B, sum(action_k)]`.
    pub actions: Tensor,
    pub rewards: Tensor,
    /// `1 - done`, `[B, 1]`.
    pub not_done: Tensor,
}

/// Everything the actor update needs to route gradients through decoders:
/// the latent model owning them, a dedicated optimizer over the decoder
/// parameters, and the observation blocks for decoder inputs.
pub struct DecoderFlowCtx<'a> {
    pub model: &'a mut LatentActionModel,
    pub decoder_opt: &'a mut AdamState,
    pub per_agent_obs: &'a [Tensor],
    pub shared_obs: &'a Tensor,
}

/// K actors against one centralized twin-critic pair.
#[derive(Debug, Clone)]
pub struct SacLearner {
    pub actors: Vec<Actor>,
    pub critics: CriticPair,
    pub cfg: SacConfig,
    opt_actors: Vec<AdamState>,
    opt_critics: AdamState,
    opt_alphas: Vec<AdamState>,
}

impl SacLearner {
    /// `actor_dims` is `[(obs_dim, action_dim); K]`; the critic consumes
    /// `critic_obs_dim` plus the summed action dims.
    pub fn new<R: Rng>(
        actor_dims: &[(usize, usize)],
        critic_obs_dim: usize,
        cfg: SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if actor_dims.is_empty() {
            return Err(Error::Config("sac learner needs at least one actor".into()));
        }
        let actors: Vec<Actor> = actor_dims
            .iter()
            .map(|&(o, a)| Actor::new(o, a, &cfg, rng))
            .collect();
        let total_action: usize = actor_dims.iter().map(|&(_, a)| a).sum();
        let critics = CriticPair::new(critic_obs_dim, total_action, &cfg, rng);

        let opt_actors = actors
            .iter()
            .map(|a| AdamState::new(&a.net.net().params(), cfg.lr))
            .collect();
        let mut critic_params = critics.q1.params();
        critic_params.extend(critics.q2.params());
        let opt_critics = AdamState::new(&critic_params, cfg.lr);
        let opt_alphas = actors
            .iter()
            .map(|a| AdamState::new(&[&a.log_alpha], cfg.lr))
            .collect();
        Ok(Self {
            actors,
            critics,
            cfg,
            opt_actors,
            opt_critics,
            opt_alphas,
        })
    }

    pub fn total_action_dim(&self) -> usize {
        self.actors.iter().map(|a| a.action_dim()).sum()
    }

    /// Bellman target `y = r + gamma * (1 - done) * (min(Q̄1, Q̄2)(s', a') -
    /// sum_k alpha_k ln pi_k(a'_k | s'))` with `a'` sampled from the current
    /// actors. No gradients flow here, so this is pure tensor math.
    pub fn bellman_target<R: Rng>(&self, batch: &SacBatch, rng: &mut R) -> Tensor {
        let b = batch.rewards.rows();
        let mut next_actions: Vec<Tensor> = Vec::with_capacity(self.actors.len());
        let mut ent = Tensor::zeros(b, 1);
        for (k, actor) in self.actors.iter().enumerate() {
            let (a, lp) = actor.sample_plain(&batch.next_actor_obs[k], rng);
            let alpha = actor.alpha();
            for i in 0..b {
                ent.data_mut()[i] += alpha * lp.data()[i];
            }
            next_actions.push(a);
        }
        let mut parts: Vec<&Tensor> = vec![&batch.next_critic_obs];
        parts.extend(next_actions.iter());
        let target_in = hcat(&parts);
        let q_min = self.critics.target_min_plain(&target_in);

        let (clip_lo, clip_hi) = self.cfg.value_clip;
        let mut y = Tensor::zeros(b, 1);
        for i in 0..b {
            let raw = batch.rewards.data()[i]
                + self.cfg.gamma
                    * batch.not_done.data()[i]
                    * (q_min.data()[i] - ent.data()[i]);
            y.data_mut()[i] = raw.clamp(clip_lo, clip_hi);
        }
        y
    }

    /// MSE of both online critics against the Bellman target.
    pub fn critic_update<R: Rng>(&mut self, batch: &SacBatch, rng: &mut R) -> Result<f64> {
        let y = self.bellman_target(batch, rng);
        if !y.all_finite() {
            return Err(Error::Training("non-finite critic target; batch skipped".into()));
        }

        let mut g = Graph::new();
        let q1_vars = self.critics.q1.lease(&mut g);
        let q2_vars = self.critics.q2.lease(&mut g);
        let parts: Vec<&Tensor> = vec![&batch.critic_obs, &batch.actions];
        let input = g.constant(hcat(&parts));
        let y_var = g.constant(y);

        let q1 = self.critics.q1.forward(&mut g, &q1_vars, input);
        let q2 = self.critics.q2.forward(&mut g, &q2_vars, input);
        let e1 = g.sub(q1, y_var);
        let e2 = g.sub(q2, y_var);
        let s1 = g.square(e1);
        let s2 = g.square(e2);
        let m1 = g.mean_all(s1);
        let m2 = g.mean_all(s2);
        let loss = g.add(m1, m2);

        let loss_val = g.value(loss).scalar_value();
        if !loss_val.is_finite() {
            return Err(Error::Training("non-finite critic loss; batch skipped".into()));
        }
        let grads = g.backward(loss)?;
        let mut grad_list = grads_for(&q1_vars, &grads, &g);
        grad_list.extend(grads_for(&q2_vars, &grads, &g));
        clip_grad_norm(&mut grad_list, self.cfg.grad_clip);
        let mut params = self.critics.q1.params_mut();
        params.extend(self.critics.q2.params_mut());
        self.opt_critics.step(&mut params, &grad_list)?;
        Ok(loss_val)
    }

    /// Actor loss `E[sum_k alpha_k ln pi_k(a_k|s) - min(Q1, Q2)(s, a)]` with
    /// reparameterized actions. When `flow` is given and `cfg.decoder_flow`
    /// is on, the executed-action distribution is attached by decoding the
    /// sampled latent and adding its log density at a reparameterized sample
    /// (scaled by the central actor's temperature), which extends the entropy
    /// pressure through the decoder parameters.
    ///
    /// Returns `(actor_loss, mean log-prob per actor)`.
    pub fn actor_update<R: Rng>(
        &mut self,
        batch: &SacBatch,
        flow: Option<DecoderFlowCtx<'_>>,
        rng: &mut R,
    ) -> Result<(f64, Vec<f64>)> {
        let b = batch.rewards.rows();
        let mut g = Graph::new();

        let actor_vars: Vec<_> = self.actors.iter().map(|a| a.net.lease(&mut g)).collect();
        let mut sampled = Vec::with_capacity(self.actors.len());
        for (k, actor) in self.actors.iter().enumerate() {
            let obs = g.constant(batch.actor_obs[k].clone());
            let (mean, log_std) = actor.net.forward(&mut g, &actor_vars[k], obs);
            let noise = g.constant(Tensor::randn(b, actor.action_dim(), rng));
            let (a, lp) = tanh_gaussian_sample_graph(&mut g, mean, log_std, noise);
            sampled.push((a, lp));
        }
        let action_nodes: Vec<Var> = sampled.iter().map(|&(a, _)| a).collect();
        let joint = g.concat_cols(&action_nodes);

        let critic_obs = g.constant(batch.critic_obs.clone());
        let q_in = g.concat_cols(&[critic_obs, joint]);
        let q1_vars = self.critics.q1.lease_frozen(&mut g);
        let q2_vars = self.critics.q2.lease_frozen(&mut g);
        let q1 = self.critics.q1.forward(&mut g, &q1_vars, q_in);
        let q2 = self.critics.q2.forward(&mut g, &q2_vars, q_in);
        let q_min = g.min_elem(q1, q2);

        let mut ent: Option<Var> = None;
        for (k, actor) in self.actors.iter().enumerate() {
            let alpha = g.constant_scalar(actor.alpha());
            let term = g.mul_broadcast(alpha, sampled[k].1);
            ent = Some(match ent {
                Some(e) => g.add(e, term),
                None => term,
            });
        }
        let ent = ent.expect("at least one actor");
        let core = g.sub(ent, q_min);
        let mut loss = g.mean_all(core);

        let mut flow = flow;
        let mut decoder_leases = None;
        if self.cfg.decoder_flow {
            if let Some(ctx) = &flow {
                let dec_vars = ctx.model.lease_decoders(&mut g);
                let obs_nodes: Vec<Var> = ctx
                    .per_agent_obs
                    .iter()
                    .map(|t| g.constant(t.clone()))
                    .collect();
                let shared_node = g.constant(ctx.shared_obs.clone());
                let alpha_c = g.constant_scalar(self.actors.last().unwrap().alpha());
                // The latent input is detached: the flag routes gradient into
                // the decoder parameters, not back into the actors (an
                // actor-side path here would reward leaving the decodable
                // manifold).
                let joint_detached = g.detach(joint);
                let mut dec_lp: Option<Var> = None;
                for i in 0..ctx.model.spec().n_agents {
                    let (mu_d, ls_d) = ctx.model.decode_graph(
                        &mut g,
                        &dec_vars[i],
                        i,
                        &obs_nodes,
                        shared_node,
                        joint_detached,
                    );
                    let noise =
                        g.constant(Tensor::randn(b, ctx.model.spec().action_dims[i], rng));
                    let std_d = g.exp(ls_d);
                    let eps = g.mul(std_d, noise);
                    let u_hat = g.add(mu_d, eps);
                    let lp = gaussian_log_prob_graph(&mut g, mu_d, ls_d, u_hat);
                    dec_lp = Some(match dec_lp {
                        Some(acc) => g.add(acc, lp),
                        None => lp,
                    });
                }
                let dec_lp = dec_lp.expect("at least one decoder");
                let dec_term_rows = g.mul_broadcast(alpha_c, dec_lp);
                let dec_term = g.mean_all(dec_term_rows);
                loss = g.add(loss, dec_term);
                decoder_leases = Some(dec_vars);
            }
        }

        let loss_val = g.value(loss).scalar_value();
        if !loss_val.is_finite() {
            return Err(Error::Training("non-finite actor loss; batch skipped".into()));
        }
        let grads = g.backward(loss)?;
        for (k, actor) in self.actors.iter_mut().enumerate() {
            let mut grad_list = grads_for(&actor_vars[k].mlp, &grads, &g);
            clip_grad_norm(&mut grad_list, self.cfg.grad_clip);
            let mut params = actor.net.net_mut().params_mut();
            self.opt_actors[k].step(&mut params, &grad_list)?;
        }
        if let (Some(dec_vars), Some(ctx)) = (decoder_leases, &mut flow) {
            let mut grad_list = Vec::new();
            for dv in &dec_vars {
                grad_list.extend(grads_for(&dv.mlp, &grads, &g));
            }
            clip_grad_norm(&mut grad_list, self.cfg.grad_clip);
            let mut params = ctx.model.decoder_params_mut();
            ctx.decoder_opt.step(&mut params, &grad_list)?;
        }
        let mean_lps: Vec<f64> = sampled
            .iter()
            .map(|&(_, lp)| {
                let t = g.value(lp);
                t.data().iter().sum::<f64>() / t.rows() as f64
            })
            .collect();
        Ok((loss_val, mean_lps))
    }

    /// Temperature loss per actor: `E[-alpha (ln pi + target_entropy)]`,
    /// using the mean log-probs from the latest actor update.
    pub fn temperature_update(&mut self, mean_log_probs: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(mean_log_probs.len(), self.actors.len());
        let mut losses = Vec::with_capacity(self.actors.len());
        for (k, actor) in self.actors.iter_mut().enumerate() {
            let mut g = Graph::new();
            let la = g.param(&actor.log_alpha);
            let alpha = g.exp(la);
            let loss = g.scale(alpha, -(mean_log_probs[k] + actor.target_entropy));
            let loss_scalar = g.mean_all(loss);
            let grads = g.backward(loss_scalar)?;
            let grad = grads.get(la, &g);
            self.opt_alphas[k].step(&mut [&mut actor.log_alpha], &[grad])?;
            let cap = self.cfg.alpha_max.ln();
            let la_val = actor.log_alpha.scalar_value();
            if la_val > cap {
                actor.log_alpha = Tensor::scalar(cap);
            }
            losses.push(g.value(loss_scalar).scalar_value());
        }
        Ok(losses)
    }

    pub fn soft_update(&mut self) {
        self.critics.soft_update(self.cfg.tau);
    }

    /// One full SAC step: critic, actor (+ optional decoder flow),
    /// temperature, target smoothing.
    pub fn update_step<R: Rng>(
        &mut self,
        batch: &SacBatch,
        flow: Option<DecoderFlowCtx<'_>>,
        rng: &mut R,
    ) -> Result<SacStepMetrics> {
        let critic_loss = self.critic_update(batch, rng)?;
        let (actor_loss, mean_lps) = self.actor_update(batch, flow, rng)?;
        let alpha_losses = self.temperature_update(&mean_lps)?;
        self.soft_update();
        Ok(SacStepMetrics {
            critic_loss,
            actor_loss,
            alpha_losses,
            alphas: self.actors.iter().map(|a| a.alpha()).collect(),
        })
    }

    /// Named parameters for checkpoints: `actor.<k>.*` (including
    /// `actor.<k>.log_alpha`), `critic1.*`, `critic2.*`, `target1.*`,
    /// `target2.*`, all under an optional prefix.
    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        let mut out = Vec::new();
        for (k, a) in self.actors.iter().enumerate() {
            out.extend(a.net.net().named_params(&p(&format!("actor.{k}"))));
            out.push((p(&format!("actor.{k}.log_alpha")), a.log_alpha.clone()));
        }
        out.extend(self.critics.q1.named_params(&p("critic1")));
        out.extend(self.critics.q2.named_params(&p("critic2")));
        out.extend(self.critics.target1.named_params(&p("target1")));
        out.extend(self.critics.target2.named_params(&p("target2")));
        out
    }

    pub fn load_named_params(
        &mut self,
        prefix: &str,
        lookup: &mut impl FnMut(&str) -> Option<Tensor>,
    ) -> Result<()> {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        for (k, a) in self.actors.iter_mut().enumerate() {
            a.net
                .net_mut()
                .load_named_params(&p(&format!("actor.{k}")), lookup)?;
            let key = p(&format!("actor.{k}.log_alpha"));
            a.log_alpha = lookup(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing key {key}")))?;
        }
        self.critics.q1.load_named_params(&p("critic1"), lookup)?;
        self.critics.q2.load_named_params(&p("critic2"), lookup)?;
        self.critics.target1.load_named_params(&p("target1"), lookup)?;
        self.critics.target2.load_named_params(&p("target2"), lookup)?;
        Ok(())
    }

    pub fn all_params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for a in &self.actors {
            out.extend(a.net.net().params());
            out.push(&a.log_alpha);
        }
        out.extend(self.critics.q1.params());
        out.extend(self.critics.q2.params());
        out.extend(self.critics.target1.params());
        out.extend(self.critics.target2.params());
        out
    }
}

/// Scale a gradient list in place so its global L2 norm is at most
/// `max_norm`.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) {
    let mut sum_sq = 0.0;
    for g in grads.iter() {
        for &v in g.data() {
            sum_sq += v * v;
        }
    }
    let norm = sum_sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
}

/// Horizontal concatenation of matrices with equal row counts.
pub fn hcat(parts: &[&Tensor]) -> Tensor {
    let rows = parts[0].rows();
    let total: usize = parts.iter().map(|t| t.cols()).sum();
    let mut out = Tensor::zeros(rows, total);
    let mut offset = 0;
    for t in parts {
        assert_eq!(t.rows(), rows, "hcat row mismatch");
        let w = t.cols();
        for i in 0..rows {
            out.data_mut()[i * total + offset..i * total + offset + w]
                .copy_from_slice(t.row_slice(i));
        }
        offset += w;
    }
    out
}
