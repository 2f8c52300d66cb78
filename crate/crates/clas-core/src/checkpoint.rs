//! Checkpoint format: one JSON document holding the method identity, the
//! configurations needed to rebuild the networks, and every parameter tensor
//! under a stable dotted name (`encoder.*`, `decoder.<i>.*`, `prior.*`,
//! `actor.<k>.*`, `critic1.*`, ...).
//!
//! The format is versioned; loading rejects unknown versions. Values are
//! 64-bit floats serialized as JSON numbers (shortest round-trip form), so a
//! save/load cycle reproduces parameters bit-exactly.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{EnvDims, LatentConfig, MethodKind, MultiAgentPolicy};
use crate::error::{Error, Result};
use crate::sac::SacConfig;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub method: MethodKind,
    pub env_name: String,
    pub step: usize,
    pub dims: EnvDims,
    /// Latent layout actually used (latent methods only).
    pub agent_latent_dims: Option<Vec<usize>>,
    pub central_latent_dim: Option<usize>,
    pub sac: SacConfig,
    pub latent: LatentConfig,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn capture(policy: &MultiAgentPolicy, env_name: &str, step: usize) -> Checkpoint {
        let (agent_latent_dims, central_latent_dim) = match policy.latent_spec() {
            Some(spec) => (
                Some(spec.agent_latent_dims.clone()),
                Some(spec.central_latent_dim),
            ),
            None => (None, None),
        };
        Checkpoint {
            format_version: FORMAT_VERSION,
            method: policy.kind(),
            env_name: env_name.to_string(),
            step,
            dims: policy.dims().clone(),
            agent_latent_dims,
            central_latent_dim,
            sac: policy.sac_cfg().clone(),
            latent: policy.latent_cfg().clone(),
            params: policy
                .named_params()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuild a policy with identical architecture and parameters.
    pub fn restore(&self) -> Result<MultiAgentPolicy> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        let default_latent = (
            self.agent_latent_dims
                .clone()
                .filter(|d| d.len() == self.dims.n_agents())
                .unwrap_or_else(|| vec![0; self.dims.n_agents()]),
            self.central_latent_dim.unwrap_or(1),
        );
        let mut latent_cfg = self.latent.clone();
        latent_cfg.central_latent_dim = self.central_latent_dim;
        let mut policy = MultiAgentPolicy::new(
            self.method,
            self.dims.clone(),
            default_latent,
            self.sac.clone(),
            latent_cfg,
            0,
        )?;
        let map: HashMap<&str, &NamedTensor> =
            self.params.iter().map(|p| (p.name.as_str(), p)).collect();
        policy.load_named_params(&mut |k| {
            map.get(k)
                .map(|p| Tensor::new(p.shape.clone(), p.values.clone()))
        })?;
        Ok(policy)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let raw = std::fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(|e| Error::Checkpoint(format!("parse: {e}")))
    }

    /// Strip encoder parameters (deployment checkpoints still act).
    pub fn without_encoder(mut self) -> Checkpoint {
        self.params.retain(|p| !p.name.starts_with("encoder."));
        self
    }

    pub fn has_key_prefix(&self, prefix: &str) -> bool {
        self.params.iter().any(|p| p.name.starts_with(prefix))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{ActPolicy, AgentRngs, JointObs};
    use crate::envs::EnvConfig;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build_policy(kind: MethodKind, env: &str, seed: u64) -> (MultiAgentPolicy, String) {
        let cfg = EnvConfig::named(env).unwrap();
        let e = crate::envs::make_env(&cfg).unwrap();
        let dims = EnvDims::of(e.as_ref());
        let policy = MultiAgentPolicy::new(
            kind,
            dims,
            cfg.default_latent_dims(),
            SacConfig {
                hidden_width: 8,
                ..SacConfig::default()
            },
            LatentConfig {
                hidden_width: 8,
                ..LatentConfig::default()
            },
            seed,
        )
        .unwrap();
        (policy, env.to_string())
    }

    fn random_obs(dims: &EnvDims, seed: u64) -> JointObs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        JointObs {
            per_agent: dims
                .obs_dims
                .iter()
                .map(|&d| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            shared: (0..dims.shared_obs_dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        }
    }

    #[test]
    fn file_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let (policy, env) = build_policy(MethodKind::ClasPartial, "four_lift", 1);
        let before = policy.full_param_hash();
        Checkpoint::capture(&policy, &env, 1234).save(&path).unwrap();
        let restored = Checkpoint::load(&path).unwrap().restore().unwrap();
        assert_eq!(restored.full_param_hash(), before);
        assert_eq!(restored.kind(), MethodKind::ClasPartial);
    }

    #[test]
    fn encoder_stripped_checkpoint_still_executes() {
        let (policy, env) = build_policy(MethodKind::ClasPartial, "dual_lift", 2);
        let ckpt = Checkpoint::capture(&policy, &env, 0).without_encoder();
        assert!(!ckpt.has_key_prefix("encoder."));
        let restored = ckpt.restore().unwrap();
        assert!(!restored.latent_model().unwrap().has_encoder());

        let obs = random_obs(policy.dims(), 3);
        let mut r1 = AgentRngs::new(4, 2);
        let mut r2 = AgentRngs::new(4, 2);
        assert_eq!(
            policy.act(&obs, false, &mut r1),
            restored.act(&obs, false, &mut r2),
            "deployment checkpoint must act identically"
        );
    }

    #[test]
    fn unknown_version_is_rejected() {
        let (policy, env) = build_policy(MethodKind::Single, "dual_lift", 3);
        let mut ckpt = Checkpoint::capture(&policy, &env, 0);
        ckpt.format_version = 99;
        assert!(ckpt.restore().is_err());
    }

    #[test]
    fn baseline_checkpoints_roundtrip_for_all_methods() {
        for kind in [
            MethodKind::Single,
            MethodKind::Laser,
            MethodKind::FullDec,
            MethodKind::SharedQ,
            MethodKind::ClasFull,
        ] {
            let (policy, env) = build_policy(kind, "dual_lift", 7);
            let ckpt = Checkpoint::capture(&policy, &env, 5);
            let json = serde_json::to_string(&ckpt).unwrap();
            let back: Checkpoint = serde_json::from_str(&json).unwrap();
            let restored = back.restore().unwrap();
            assert_eq!(restored.full_param_hash(), policy.full_param_hash(), "{kind:?}");
        }
    }
}
