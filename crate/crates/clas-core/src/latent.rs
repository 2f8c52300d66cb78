//! Conditional autoencoder over joint actions: posterior encoder, per-agent
//! decoders, observation-conditioned prior, and the evidence-lower-bound loss
//! that trains all three simultaneously.
//!
//! Two observability variants share one implementation:
//!
//! * full: a single latent block conditioned on the full observation; every
//!   decoder sees the full observation.
//! * partial: the latent splits into per-agent blocks plus one central block;
//!   decoder `i` sees only `(o_i, o_c, v_i, v_c)`, and the prior factorizes as
//!   per-agent networks over `o_i` plus a central network over `o_c`.
//!
//! Latent layout is `[v_1, ..., v_N, v_c]` with the central block last.
//!
//! Latent values are tanh-squashed: the posterior and prior are diagonal
//! Gaussians over a pre-squash space (their KL is invariant under the
//! squash), while every consumer of latent values — decoders, critics,
//! policies — sees `tanh` of the pre-squash variable, so the usable latent
//! space is the open cube (-1, 1)^D and matches what tanh-Gaussian policies
//! can produce.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{gaussian_log_prob_graph, kl_diag_graph, DiagGaussian};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{grads_for, AdamState, GaussianMlp, GaussianVars, NetRole};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observability {
    Full,
    Partial,
}

/// Dimensional layout of the latent action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub n_agents: usize,
    /// Per-agent private observation dims.
    pub obs_dims: Vec<usize>,
    /// Shared observation dim.
    pub shared_obs_dim: usize,
    /// Per-agent original action dims (may differ per agent).
    pub action_dims: Vec<usize>,
    /// Per-agent latent dims; all zero in full mode.
    pub agent_latent_dims: Vec<usize>,
    /// Central latent dim (the whole latent in full mode).
    pub central_latent_dim: usize,
    pub mode: Observability,
}

impl LatentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 1 {
            return Err(Error::Config("n_agents must be >= 1".into()));
        }
        if self.central_latent_dim < 1 {
            return Err(Error::Config("central latent dim must be >= 1".into()));
        }
        let lens_ok = self.obs_dims.len() == self.n_agents
            && self.action_dims.len() == self.n_agents
            && self.agent_latent_dims.len() == self.n_agents;
        if !lens_ok {
            return Err(Error::Config(
                "per-agent dimension lists must match n_agents".into(),
            ));
        }
        if self.mode == Observability::Full && self.agent_latent_dims.iter().any(|&d| d != 0) {
            return Err(Error::Config(
                "full observability uses a single latent block; agent latent dims must be 0"
                    .into(),
            ));
        }
        if self.total_latent_dim() >= self.total_action_dim() {
            return Err(Error::Config(format!(
                "latent dim {} must compress the joint action dim {}",
                self.total_latent_dim(),
                self.total_action_dim()
            )));
        }
        Ok(())
    }

    pub fn total_action_dim(&self) -> usize {
        self.action_dims.iter().sum()
    }

    pub fn total_latent_dim(&self) -> usize {
        self.agent_latent_dims.iter().sum::<usize>() + self.central_latent_dim
    }

    pub fn full_obs_dim(&self) -> usize {
        self.obs_dims.iter().sum::<usize>() + self.shared_obs_dim
    }

    pub fn encoder_input_dim(&self) -> usize {
        self.full_obs_dim() + self.total_action_dim()
    }

    pub fn decoder_input_dim(&self, agent: usize) -> usize {
        match self.mode {
            Observability::Full => self.full_obs_dim() + self.total_latent_dim(),
            Observability::Partial => {
                self.obs_dims[agent]
                    + self.shared_obs_dim
                    + self.agent_latent_dims[agent]
                    + self.central_latent_dim
            }
        }
    }

    /// Start offset of agent `i`'s latent block within the full latent.
    pub fn agent_latent_offset(&self, agent: usize) -> usize {
        self.agent_latent_dims[..agent].iter().sum()
    }

    /// Start offset of the central block (always the trailing block).
    pub fn central_latent_offset(&self) -> usize {
        self.agent_latent_dims.iter().sum()
    }
}

/// Zero the central block of a full latent vector in place; agent blocks are
/// untouched. Idempotent.
pub fn mask_central_latent(v: &mut [f64], spec: &LatentSpec) {
    assert_eq!(v.len(), spec.total_latent_dim(), "latent dim mismatch");
    let start = spec.central_latent_offset();
    for x in &mut v[start..] {
        *x = 0.0;
    }
}

/// Observation/action batch in model coordinates, one tensor per block.
#[derive(Debug, Clone)]
pub struct ObsActBatch {
    pub per_agent_obs: Vec<Tensor>,
    pub shared_obs: Tensor,
    pub actions: Vec<Tensor>,
}

impl ObsActBatch {
    pub fn batch_size(&self) -> usize {
        self.shared_obs.rows()
    }
}

/// Loss breakdown from one ELBO evaluation. `loss = nll + beta * kl` exactly.
#[derive(Debug, Clone, Copy)]
pub struct ElboBreakdown {
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
}

/// Graph nodes from an in-graph ELBO evaluation, for composition into larger
/// losses.
pub struct ElboNodes {
    pub loss: Var,
    pub nll: Var,
    pub kl: Var,
}

/// The conditional action autoencoder: encoder `q(v|o, u)`, per-agent
/// decoders `p_i(u_i | ...)`, and observation-conditioned prior `p(v|o)`.
#[derive(Debug, Clone)]
pub struct LatentActionModel {
    spec: LatentSpec,
    /// Optional so checkpoints stripped for deployment still execute actions;
    /// training requires it.
    encoder: Option<GaussianMlp>,
    decoders: Vec<GaussianMlp>,
    /// Per-agent prior networks over `v_i`; present only when the agent has a
    /// nonzero latent block (partial mode).
    agent_priors: Vec<Option<GaussianMlp>>,
    /// Prior over `v_c` from `o_c` (partial) or over the whole latent from
    /// the full observation (full mode).
    central_prior: GaussianMlp,
}

impl LatentActionModel {
    pub fn new<R: Rng>(spec: LatentSpec, hidden_width: usize, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let encoder = Some(GaussianMlp::for_role(
            NetRole::Encoder,
            spec.encoder_input_dim(),
            hidden_width,
            spec.total_latent_dim(),
            rng,
        ));
        let decoders = (0..spec.n_agents)
            .map(|i| {
                GaussianMlp::for_role(
                    NetRole::Decoder,
                    spec.decoder_input_dim(i),
                    hidden_width,
                    spec.action_dims[i],
                    rng,
                )
            })
            .collect();
        let agent_priors = (0..spec.n_agents)
            .map(|i| {
                if spec.mode == Observability::Partial && spec.agent_latent_dims[i] > 0 {
                    Some(GaussianMlp::for_role(
                        NetRole::Prior,
                        spec.obs_dims[i],
                        hidden_width,
                        spec.agent_latent_dims[i],
                        rng,
                    ))
                } else {
                    None
                }
            })
            .collect();
        let central_prior = match spec.mode {
            Observability::Partial => GaussianMlp::for_role(
                NetRole::Prior,
                spec.shared_obs_dim,
                hidden_width,
                spec.central_latent_dim,
                rng,
            ),
            Observability::Full => GaussianMlp::for_role(
                NetRole::Prior,
                spec.full_obs_dim(),
                hidden_width,
                spec.total_latent_dim(),
                rng,
            ),
        };
        Ok(Self {
            spec,
            encoder,
            decoders,
            agent_priors,
            central_prior,
        })
    }

    pub fn spec(&self) -> &LatentSpec {
        &self.spec
    }

    pub fn has_encoder(&self) -> bool {
        self.encoder.is_some()
    }

    /// Remove the encoder (deployment-style model). Action execution never
    /// needs it; training does.
    pub fn drop_encoder(&mut self) {
        self.encoder = None;
    }

    pub fn decoder(&self, agent: usize) -> &GaussianMlp {
        &self.decoders[agent]
    }

    pub fn decoder_mut(&mut self, agent: usize) -> &mut GaussianMlp {
        &mut self.decoders[agent]
    }

    fn encoder_ref(&self) -> Result<&GaussianMlp> {
        self.encoder
            .as_ref()
            .ok_or_else(|| Error::Contract("model has no encoder (deployment checkpoint)".into()))
    }

    // -- plain (execution / oracle) paths ------------------------------------

    /// Posterior `q(v | o, u)` for one datum.
    pub fn encode1(&self, per_agent_obs: &[Vec<f64>], shared_obs: &[f64], actions: &[Vec<f64>]) -> Result<DiagGaussian> {
        let enc = self.encoder_ref()?;
        let mut input = Vec::with_capacity(self.spec.encoder_input_dim());
        for (o, want) in per_agent_obs.iter().zip(&self.spec.obs_dims) {
            if o.len() != *want {
                return Err(Error::DimMismatch(format!(
                    "agent obs {} vs spec {}",
                    o.len(),
                    want
                )));
            }
            input.extend_from_slice(o);
        }
        if shared_obs.len() != self.spec.shared_obs_dim {
            return Err(Error::DimMismatch("shared obs dim".into()));
        }
        input.extend_from_slice(shared_obs);
        for (u, want) in actions.iter().zip(&self.spec.action_dims) {
            if u.len() != *want {
                return Err(Error::DimMismatch("action dim".into()));
            }
            input.extend_from_slice(u);
        }
        Ok(enc.dist1(&input))
    }

    /// Squashed posterior means for a batch, as a `[B, latent]` matrix in
    /// executed-latent coordinates. Used to place replayed transitions into
    /// the latent action space during training.
    pub fn encode_latent_batch(&self, batch: &ObsActBatch) -> Result<Tensor> {
        let enc = self.encoder_ref()?;
        let input = concat_tensors(
            batch
                .per_agent_obs
                .iter()
                .chain(std::iter::once(&batch.shared_obs))
                .chain(batch.actions.iter()),
        );
        let (mean, _) = enc.dist_plain(&input);
        Ok(mean.map(f64::tanh))
    }

    /// Map a pre-squash latent draw into executed-latent coordinates.
    pub fn squash_latent(v_pre: &[f64]) -> Vec<f64> {
        v_pre.iter().map(|x| x.tanh()).collect()
    }

    /// Decoder distribution for one agent and one datum.
    pub fn decode1(
        &self,
        agent: usize,
        per_agent_obs: &[Vec<f64>],
        shared_obs: &[f64],
        v: &[f64],
    ) -> Result<DiagGaussian> {
        if v.len() != self.spec.total_latent_dim() {
            return Err(Error::DimMismatch(format!(
                "latent dim {} vs spec {}",
                v.len(),
                self.spec.total_latent_dim()
            )));
        }
        let input = self.decoder_input1(agent, per_agent_obs, shared_obs, v);
        Ok(self.decoders[agent].dist1(&input))
    }

    fn decoder_input1(
        &self,
        agent: usize,
        per_agent_obs: &[Vec<f64>],
        shared_obs: &[f64],
        v: &[f64],
    ) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.spec.decoder_input_dim(agent));
        match self.spec.mode {
            Observability::Full => {
                for o in per_agent_obs {
                    input.extend_from_slice(o);
                }
                input.extend_from_slice(shared_obs);
                input.extend_from_slice(v);
            }
            Observability::Partial => {
                input.extend_from_slice(&per_agent_obs[agent]);
                input.extend_from_slice(shared_obs);
                let off = self.spec.agent_latent_offset(agent);
                let k = self.spec.agent_latent_dims[agent];
                input.extend_from_slice(&v[off..off + k]);
                input.extend_from_slice(&v[self.spec.central_latent_offset()..]);
            }
        }
        input
    }

    /// Executable action for one agent: tanh of the decoder mean.
    pub fn decode_action1(
        &self,
        agent: usize,
        per_agent_obs: &[Vec<f64>],
        shared_obs: &[f64],
        v: &[f64],
    ) -> Result<Vec<f64>> {
        let d = self.decode1(agent, per_agent_obs, shared_obs, v)?;
        Ok(d
            .mean()
            .iter()
            .map(|&m| m.tanh().clamp(-crate::dist::ACTION_BOUND, crate::dist::ACTION_BOUND))
            .collect())
    }

    /// Prior `p(v | o)` for one datum, concatenated over blocks in latent
    /// layout order.
    pub fn prior1(&self, per_agent_obs: &[Vec<f64>], shared_obs: &[f64]) -> Result<DiagGaussian> {
        match self.spec.mode {
            Observability::Full => {
                let mut input = Vec::with_capacity(self.spec.full_obs_dim());
                for o in per_agent_obs {
                    input.extend_from_slice(o);
                }
                input.extend_from_slice(shared_obs);
                Ok(self.central_prior.dist1(&input))
            }
            Observability::Partial => {
                let mut blocks = Vec::new();
                for (i, p) in self.agent_priors.iter().enumerate() {
                    if let Some(p) = p {
                        blocks.push(p.dist1(&per_agent_obs[i]));
                    }
                }
                blocks.push(self.central_prior.dist1(shared_obs));
                Ok(DiagGaussian::concat(&blocks))
            }
        }
    }

    // -- graph (training) paths ----------------------------------------------

    /// Lease every trainable parameter set into `g`.
    pub fn lease(&self, g: &mut Graph) -> Result<LatentModelVars> {
        Ok(LatentModelVars {
            encoder: self.encoder_ref()?.lease(g),
            decoders: self.decoders.iter().map(|d| d.lease(g)).collect(),
            agent_priors: self
                .agent_priors
                .iter()
                .map(|p| p.as_ref().map(|p| p.lease(g)))
                .collect(),
            central_prior: self.central_prior.lease(g),
        })
    }

    /// Lease only the decoders (differentiably); used by the actor update's
    /// decoder-flow path.
    pub fn lease_decoders(&self, g: &mut Graph) -> Vec<GaussianVars> {
        self.decoders.iter().map(|d| d.lease(g)).collect()
    }

    /// In-graph posterior over a batch: returns `(mean, log_std)` nodes.
    pub fn encode_graph(
        &self,
        g: &mut Graph,
        vars: &GaussianVars,
        obs_nodes: &[Var],
        shared_node: Var,
        action_nodes: &[Var],
    ) -> (Var, Var) {
        let mut parts: Vec<Var> = obs_nodes.to_vec();
        parts.push(shared_node);
        parts.extend_from_slice(action_nodes);
        let input = g.concat_cols(&parts);
        self.encoder.as_ref().unwrap().forward(g, vars, input)
    }

    /// In-graph decoder distribution for agent `i` given a full-latent node.
    pub fn decode_graph(
        &self,
        g: &mut Graph,
        vars: &GaussianVars,
        agent: usize,
        obs_nodes: &[Var],
        shared_node: Var,
        v: Var,
    ) -> (Var, Var) {
        let input = match self.spec.mode {
            Observability::Full => {
                let mut parts: Vec<Var> = obs_nodes.to_vec();
                parts.push(shared_node);
                parts.push(v);
                g.concat_cols(&parts)
            }
            Observability::Partial => {
                let off = self.spec.agent_latent_offset(agent);
                let k = self.spec.agent_latent_dims[agent];
                let c0 = self.spec.central_latent_offset();
                let total = self.spec.total_latent_dim();
                let v_c = g.slice_cols(v, c0, total);
                let mut parts = vec![obs_nodes[agent], shared_node];
                if k > 0 {
                    let v_i = g.slice_cols(v, off, off + k);
                    parts.push(v_i);
                }
                parts.push(v_c);
                g.concat_cols(&parts)
            }
        };
        self.decoders[agent].forward(g, vars, input)
    }

    /// In-graph prior over the full latent in layout order.
    pub fn prior_graph(
        &self,
        g: &mut Graph,
        vars: &LatentModelVars,
        obs_nodes: &[Var],
        shared_node: Var,
    ) -> (Var, Var) {
        match self.spec.mode {
            Observability::Full => {
                let mut parts: Vec<Var> = obs_nodes.to_vec();
                parts.push(shared_node);
                let input = g.concat_cols(&parts);
                self.central_prior.forward(g, &vars.central_prior, input)
            }
            Observability::Partial => {
                let mut means = Vec::new();
                let mut log_stds = Vec::new();
                for (i, p) in self.agent_priors.iter().enumerate() {
                    if let Some(p) = p {
                        let (m, ls) =
                            p.forward(g, vars.agent_priors[i].as_ref().unwrap(), obs_nodes[i]);
                        means.push(m);
                        log_stds.push(ls);
                    }
                }
                let (mc, lsc) = self
                    .central_prior
                    .forward(g, &vars.central_prior, shared_node);
                means.push(mc);
                log_stds.push(lsc);
                (g.concat_cols(&means), g.concat_cols(&log_stds))
            }
        }
    }

    /// Build the negated evidence lower bound over a batch, using one
    /// reparameterized latent sample per datum.
    ///
    /// `loss = mean[-sum_i ln p_i(u_i|...)] + beta * mean[KL(q || p)]`, and the
    /// returned breakdown satisfies that identity exactly.
    pub fn elbo_graph<R: Rng>(
        &self,
        g: &mut Graph,
        vars: &LatentModelVars,
        batch: &ObsActBatch,
        beta: f64,
        rng: &mut R,
    ) -> ElboNodes {
        let b = batch.batch_size();
        let obs_nodes: Vec<Var> = batch
            .per_agent_obs
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect();
        let shared_node = g.constant(batch.shared_obs.clone());
        let action_nodes: Vec<Var> = batch
            .actions
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect();

        let (mu_q, ls_q) = self.encode_graph(g, &vars.encoder, &obs_nodes, shared_node, &action_nodes);
        let noise = g.constant(Tensor::randn(b, self.spec.total_latent_dim(), rng));
        let std_q = g.exp(ls_q);
        let eps_scaled = g.mul(std_q, noise);
        let v_pre = g.add(mu_q, eps_scaled);
        let v = g.tanh(v_pre);

        let mut recon: Option<Var> = None;
        for i in 0..self.spec.n_agents {
            let (mu_d, ls_d) =
                self.decode_graph(g, &vars.decoders[i], i, &obs_nodes, shared_node, v);
            let lp = gaussian_log_prob_graph(g, mu_d, ls_d, action_nodes[i]);
            recon = Some(match recon {
                Some(r) => g.add(r, lp),
                None => lp,
            });
        }
        let recon = recon.expect("at least one agent");

        let (mu_p, ls_p) = self.prior_graph(g, vars, &obs_nodes, shared_node);
        let kl_rows = kl_diag_graph(g, mu_q, ls_q, mu_p, ls_p);

        let neg_recon = g.neg(recon);
        let nll = g.mean_all(neg_recon);
        let kl = g.mean_all(kl_rows);
        let kl_scaled = g.scale(kl, beta);
        let loss = g.add(nll, kl_scaled);
        ElboNodes { loss, nll, kl }
    }

    /// One optimization step on the ELBO. Returns the loss breakdown, or a
    /// training error on non-finite losses (the batch is skipped and no
    /// parameter changes).
    pub fn train_step<R: Rng>(
        &mut self,
        batch: &ObsActBatch,
        beta: f64,
        opt: &mut AdamState,
        rng: &mut R,
    ) -> Result<ElboBreakdown> {
        let mut g = Graph::new();
        let vars = self.lease(&mut g)?;
        let nodes = self.elbo_graph(&mut g, &vars, batch, beta, rng);
        let breakdown = ElboBreakdown {
            loss: g.value(nodes.loss).scalar_value(),
            nll: g.value(nodes.nll).scalar_value(),
            kl: g.value(nodes.kl).scalar_value(),
        };
        if !breakdown.loss.is_finite() {
            return Err(Error::Training("non-finite elbo loss; batch skipped".into()));
        }
        let grads = g.backward(nodes.loss)?;

        let mut grad_list = grads_for(&vars.encoder.mlp, &grads, &g);
        for dv in &vars.decoders {
            grad_list.extend(grads_for(&dv.mlp, &grads, &g));
        }
        for pv in vars.agent_priors.iter().flatten() {
            grad_list.extend(grads_for(&pv.mlp, &grads, &g));
        }
        grad_list.extend(grads_for(&vars.central_prior.mlp, &grads, &g));

        let mut params = self.trainable_params_mut();
        opt.step(&mut params, &grad_list)?;
        Ok(breakdown)
    }

    /// All trainable parameters in lease order (encoder, decoders, agent
    /// priors, central prior).
    pub fn trainable_params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        if let Some(e) = &self.encoder {
            out.extend(e.net().params());
        }
        for d in &self.decoders {
            out.extend(d.net().params());
        }
        for p in self.agent_priors.iter().flatten() {
            out.extend(p.net().params());
        }
        out.extend(self.central_prior.net().params());
        out
    }

    /// Decoder parameters only, in lease order; the policy-side optimizer of
    /// the decoder-flow path runs over exactly this list.
    pub fn decoder_params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for d in &self.decoders {
            out.extend(d.net().params());
        }
        out
    }

    pub fn decoder_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for d in &mut self.decoders {
            out.extend(d.net_mut().params_mut());
        }
        out
    }

    pub fn trainable_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if let Some(e) = &mut self.encoder {
            out.extend(e.net_mut().params_mut());
        }
        for d in &mut self.decoders {
            out.extend(d.net_mut().params_mut());
        }
        for p in self.agent_priors.iter_mut().flatten() {
            out.extend(p.net_mut().params_mut());
        }
        out.extend(self.central_prior.net_mut().params_mut());
        out
    }

    /// Named parameters for checkpoints: `encoder.*`, `decoder.<i>.*`,
    /// `prior.agent<i>.*`, `prior.central.*`.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        if let Some(e) = &self.encoder {
            out.extend(e.net().named_params("encoder"));
        }
        for (i, d) in self.decoders.iter().enumerate() {
            out.extend(d.net().named_params(&format!("decoder.{i}")));
        }
        for (i, p) in self.agent_priors.iter().enumerate() {
            if let Some(p) = p {
                out.extend(p.net().named_params(&format!("prior.agent{i}")));
            }
        }
        out.extend(self.central_prior.net().named_params("prior.central"));
        out
    }

    /// Load named parameters. A model whose checkpoint carries no `encoder.*`
    /// keys loads encoder-free and can still execute actions. `lookup` may be
    /// queried more than once per key and must be non-consuming.
    pub fn load_named_params(
        &mut self,
        lookup: &mut impl FnMut(&str) -> Option<Tensor>,
    ) -> Result<()> {
        let has_encoder_keys = lookup("encoder.w0").is_some();
        if has_encoder_keys {
            if let Some(e) = &mut self.encoder {
                e.net_mut().load_named_params("encoder", lookup)?;
            }
        } else {
            self.encoder = None;
        }
        for (i, d) in self.decoders.iter_mut().enumerate() {
            d.net_mut()
                .load_named_params(&format!("decoder.{i}"), lookup)?;
        }
        for (i, p) in self.agent_priors.iter_mut().enumerate() {
            if let Some(p) = p {
                p.net_mut()
                    .load_named_params(&format!("prior.agent{i}"), lookup)?;
            }
        }
        self.central_prior
            .net_mut()
            .load_named_params("prior.central", lookup)?;
        Ok(())
    }
}

/// Leased graph handles for every trainable parameter set of the model.
pub struct LatentModelVars {
    pub encoder: GaussianVars,
    pub decoders: Vec<GaussianVars>,
    pub agent_priors: Vec<Option<GaussianVars>>,
    pub central_prior: GaussianVars,
}

fn concat_tensors<'a>(parts: impl Iterator<Item = &'a Tensor>) -> Tensor {
    let parts: Vec<&Tensor> = parts.collect();
    let rows = parts[0].rows();
    let total: usize = parts.iter().map(|t| t.cols()).sum();
    let mut out = Tensor::zeros(rows, total);
    let mut offset = 0;
    for t in parts {
        assert_eq!(t.rows(), rows);
        let w = t.cols();
        for i in 0..rows {
            out.data_mut()[i * total + offset..i * total + offset + w]
                .copy_from_slice(t.row_slice(i));
        }
        offset += w;
    }
    out
}
