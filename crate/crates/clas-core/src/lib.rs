//! Central latent action spaces (CLAS) for cooperative multi-agent control.
//!
//! A desk-scale laboratory: a small reverse-mode autodiff core, a conditional
//! autoencoder over joint actions, soft actor-critic learners operating in
//! latent or original action spaces, baseline methods, 2-D cooperative
//! manipulation environments, and a training/evaluation harness.

pub mod agents;
pub mod checkpoint;
pub mod dist;
pub mod envs;
pub mod error;
pub mod expert;
pub mod graph;
pub mod latent;
pub mod sac;
pub mod trainer;
pub mod nn;
pub mod replay;
pub mod tensor;

pub use dist::{DiagGaussian, TanhGaussian};
pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use nn::{AdamState, GaussianMlp, Mlp, NetRole};
pub use sac::{SacConfig, SacLearner};
pub use agents::{ActPolicy, AgentRngs, EnvDims, JointObs, LatentConfig, MethodKind, MultiAgentPolicy};
pub use checkpoint::Checkpoint;
pub use envs::{make_env, make_named_env, DisturbanceConfig, Env, EnvConfig};
pub use latent::{LatentActionModel, LatentSpec, Observability};
pub use replay::{ReplayBuffer, Transition};
pub use tensor::Tensor;
pub use trainer::{evaluate, robustness_sweep, run_training, RunMetrics, RunSpec, TrainerConfig};
