//! Training loop, evaluation protocol, and robustness sweeps.
//!
//! A run is fully determined by `(configs, seed)`: every random stream —
//! exploration, environment resets, replay sampling, update noise — derives
//! from the run seed, and the metrics log is written in a fixed order with
//! no timing data, so identical runs produce byte-identical `metrics.jsonl`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    ActPolicy, AgentRngs, EnvDims, JointObs, LatentConfig, MethodKind, MultiAgentPolicy,
};
use crate::checkpoint::Checkpoint;
use crate::envs::{make_env, DisturbanceConfig, Env, EnvConfig};
use crate::error::{Error, Result};
use crate::replay::{ReplayBuffer, Transition};
use crate::sac::SacConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub total_steps: usize,
    /// Warm-up phase: uniform random actions; only the latent action model
    /// trains (methods that have one). Actors and critics stay frozen.
    pub warmup_steps: usize,
    pub buffer_capacity: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub checkpoint_interval: usize,
    /// Metrics cadence for loss events.
    pub log_interval: usize,
    /// Abort after this many consecutive skipped (non-finite) batches.
    pub abort_after_skipped: usize,
    /// Keep per-step rewards of every episode in the returned metrics
    /// (bookkeeping checks; off by default to save memory).
    pub keep_step_rewards: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            total_steps: 150_000,
            warmup_steps: 5_000,
            buffer_capacity: 200_000,
            eval_interval: 5_000,
            eval_episodes: 10,
            checkpoint_interval: 25_000,
            log_interval: 200,
            abort_after_skipped: 100,
            keep_step_rewards: false,
        }
    }
}

impl TrainerConfig {
    /// Full-scale preset (selectable alternative to the desk-scale default).
    pub fn paper_scale() -> Self {
        Self {
            total_steps: 750_000,
            warmup_steps: 100_000,
            buffer_capacity: 1_000_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if self.eval_interval == 0 || self.checkpoint_interval == 0 || self.log_interval == 0 {
            return Err(Error::Config("intervals must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub mean_reward: f64,
    pub success_rate: f64,
}

/// Append-only account of one training run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub episode_rewards: Vec<f64>,
    pub episode_successes: Vec<bool>,
    pub episode_lengths: Vec<usize>,
    pub evals: Vec<EvalPoint>,
    pub final_eval: Option<EvalReport>,
    pub skipped_batches: usize,
    pub wall_clock_secs: f64,
    /// Per-episode step rewards when `keep_step_rewards` is set.
    pub episode_step_rewards: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub episode_rewards: Vec<f64>,
    pub successes: Vec<bool>,
    pub mean_reward: f64,
    pub success_rate: f64,
}

/// One JSONL event. Field order is fixed by the struct definitions, values
/// carry no timing data, so logs are reproducible byte for byte.
#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum MetricEvent<'a> {
    Episode {
        step: usize,
        episode: usize,
        reward: f64,
        length: usize,
        success: bool,
    },
    Loss {
        step: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        elbo: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        nll: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        kl: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        critic: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        actor: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
    },
    Eval {
        step: usize,
        mean_reward: f64,
        success_rate: f64,
        episodes: &'a [f64],
    },
}

struct MetricsLog {
    file: Option<std::io::BufWriter<std::fs::File>>,
}

impl MetricsLog {
    fn new(dir: Option<&Path>) -> Result<Self> {
        let file = match dir {
            Some(d) => {
                std::fs::create_dir_all(d)?;
                Some(std::io::BufWriter::new(std::fs::File::create(
                    d.join("metrics.jsonl"),
                )?))
            }
            None => None,
        };
        Ok(Self { file })
    }

    fn emit(&mut self, event: &MetricEvent) -> Result<()> {
        if let Some(f) = &mut self.file {
            let line = serde_json::to_string(event)
                .map_err(|e| Error::Training(format!("metrics serialize: {e}")))?;
            writeln!(f, "{line}")?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(f) = &mut self.file {
            f.flush()?;
        }
        Ok(())
    }
}

/// Everything a single training run needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSpec {
    pub method: MethodKind,
    pub env: EnvConfig,
    pub sac: SacConfig,
    pub latent: LatentConfig,
    pub trainer: TrainerConfig,
    pub seed: u64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Run one training job. When `out_dir` is given, writes `metrics.jsonl`
/// plus periodic/best/final checkpoints under `checkpoints/`.
pub fn run_training(spec: &RunSpec, out_dir: Option<&Path>) -> Result<RunMetrics> {
    spec.trainer.validate()?;
    spec.env.validate()?;
    let start = Instant::now();

    let mut env = make_env(&spec.env)?;
    let mut eval_env = make_env(&spec.env)?;
    let dims = EnvDims::of(env.as_ref());
    let mut policy = MultiAgentPolicy::new(
        spec.method,
        dims,
        spec.env.default_latent_dims(),
        spec.sac.clone(),
        spec.latent.clone(),
        spec.seed,
    )?;

    let mut replay = ReplayBuffer::new(spec.trainer.buffer_capacity);
    let mut log = MetricsLog::new(out_dir)?;
    let mut metrics = RunMetrics {
        seed: spec.seed,
        ..RunMetrics::default()
    };

    // Independent random streams per role.
    let mut env_seed_rng = stream_rng(spec.seed, 100);
    let mut update_rng = stream_rng(spec.seed, 101);
    let mut explore_rng = stream_rng(spec.seed, 102);
    let mut agent_rngs = AgentRngs::new(spec.seed, env.n_agents());

    let mut episode = 0usize;
    let mut episode_reward = 0.0;
    let mut episode_len = 0usize;
    let mut step_rewards: Vec<f64> = Vec::new();
    let mut last = env.reset(env_seed_rng.gen());
    let mut obs = JointObs::from_step(&last);

    let mut consecutive_skips = 0usize;
    let mut updates_due = 0.0f64;
    let mut best_eval = f64::NEG_INFINITY;

    for step in 1..=spec.trainer.total_steps {
        let in_warmup = step <= spec.trainer.warmup_steps;
        let actions: Vec<Vec<f64>> = if in_warmup {
            env.action_dims()
                .iter()
                .map(|&d| (0..d).map(|_| explore_rng.gen_range(-1.0..1.0)).collect())
                .collect()
        } else {
            policy.act(&obs, true, &mut agent_rngs)
        };

        let next = env.step(&actions)?;
        replay.push(Transition {
            per_agent_obs: obs.per_agent.clone(),
            shared_obs: obs.shared.clone(),
            actions,
            reward: next.reward,
            next_per_agent_obs: next.per_agent_obs.clone(),
            next_shared_obs: next.shared_obs.clone(),
            // Timeouts are not value terminals; only hard failures cut the
            // bootstrap.
            done: next.info.failure,
        });
        episode_reward += next.reward;
        episode_len += 1;
        if spec.trainer.keep_step_rewards {
            step_rewards.push(next.reward);
        }

        // Update-to-data ratio: accumulate fractional update credit.
        updates_due += if in_warmup { 1.0 } else { spec.sac.update_to_data };
        let mut last_update = None;
        while updates_due >= 1.0 {
            updates_due -= 1.0;
            match policy.update(&replay, in_warmup, &mut update_rng) {
                Ok(m) => {
                    consecutive_skips = 0;
                    last_update = Some(m);
                }
                Err(Error::Training(msg)) => {
                    metrics.skipped_batches += 1;
                    consecutive_skips += 1;
                    if consecutive_skips >= spec.trainer.abort_after_skipped {
                        return Err(Error::Training(format!(
                            "aborting at step {step}: {consecutive_skips} consecutive skipped batches (last: {msg})"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        }

        if step % spec.trainer.log_interval == 0 {
            if let Some(m) = &last_update {
                let sac = m.sac.first();
                log.emit(&MetricEvent::Loss {
                    step,
                    elbo: m.elbo.map(|e| e.loss),
                    nll: m.elbo.map(|e| e.nll),
                    kl: m.elbo.map(|e| e.kl),
                    critic: sac.map(|s| s.critic_loss),
                    actor: sac.map(|s| s.actor_loss),
                    alpha: sac.and_then(|s| s.alphas.first().copied()),
                })?;
            }
        }

        if next.done {
            log.emit(&MetricEvent::Episode {
                step,
                episode,
                reward: episode_reward,
                length: episode_len,
                success: next.info.success,
            })?;
            metrics.episode_rewards.push(episode_reward);
            metrics.episode_successes.push(next.info.success);
            metrics.episode_lengths.push(episode_len);
            if spec.trainer.keep_step_rewards {
                metrics.episode_step_rewards.push(std::mem::take(&mut step_rewards));
            }
            episode += 1;
            episode_reward = 0.0;
            episode_len = 0;
            last = env.reset(env_seed_rng.gen());
            obs = JointObs::from_step(&last);
        } else {
            last = next;
            obs = JointObs::from_step(&last);
        }

        if step % spec.trainer.eval_interval == 0 || step == spec.trainer.total_steps {
            let report = evaluate(
                &policy,
                eval_env.as_mut(),
                spec.trainer.eval_episodes,
                None,
                eval_seed_base(spec.seed, step),
            )?;
            log.emit(&MetricEvent::Eval {
                step,
                mean_reward: report.mean_reward,
                success_rate: report.success_rate,
                episodes: &report.episode_rewards,
            })?;
            log.flush()?;
            metrics.evals.push(EvalPoint {
                step,
                mean_reward: report.mean_reward,
                success_rate: report.success_rate,
            });

            if let Some(dir) = out_dir {
                if report.mean_reward > best_eval {
                    best_eval = report.mean_reward;
                    Checkpoint::capture(&policy, &spec.env.name, step)
                        .save(&dir.join("checkpoints").join("best.json"))?;
                }
                if step % spec.trainer.checkpoint_interval == 0 {
                    Checkpoint::capture(&policy, &spec.env.name, step).save(
                        &dir.join("checkpoints")
                            .join(format!("step_{step:09}.json")),
                    )?;
                }
            }
            metrics.final_eval = Some(report);
        }
    }

    if let Some(dir) = out_dir {
        Checkpoint::capture(&policy, &spec.env.name, spec.trainer.total_steps)
            .save(&dir.join("checkpoints").join("final.json"))?;
    }
    log.flush()?;
    metrics.wall_clock_secs = start.elapsed().as_secs_f64();

    if let Some(dir) = out_dir {
        // Timing lives outside metrics.jsonl so logs stay reproducible.
        let summary = serde_json::json!({
            "seed": spec.seed,
            "episodes": metrics.episode_rewards.len(),
            "skipped_batches": metrics.skipped_batches,
            "wall_clock_secs": metrics.wall_clock_secs,
            "final_eval_mean_reward": metrics.final_eval.as_ref().map(|e| e.mean_reward),
            "final_eval_success_rate": metrics.final_eval.as_ref().map(|e| e.success_rate),
        });
        std::fs::write(
            dir.join("run_summary.json"),
            serde_json::to_string_pretty(&summary)
                .map_err(|e| Error::Training(format!("summary serialize: {e}")))?,
        )?;
    }
    Ok(metrics)
}

fn eval_seed_base(seed: u64, step: usize) -> u64 {
    // splitmix64 over (seed, step) keeps evaluation streams disjoint from
    // training streams and from each other.
    let mut x = seed ^ (step as u64).wrapping_mul(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Deterministic evaluation: fixed per-episode seeds, deterministic action
/// mode, optional disturbance override.
pub fn evaluate(
    policy: &dyn ActPolicy,
    env: &mut dyn Env,
    episodes: usize,
    disturbance: Option<DisturbanceConfig>,
    seed_base: u64,
) -> Result<EvalReport> {
    let previous = env.config().disturbance.clone();
    env.set_disturbance(disturbance);
    let mut episode_rewards = Vec::with_capacity(episodes);
    let mut successes = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut rngs = AgentRngs::new(seed_base.wrapping_add(ep as u64), env.n_agents());
        let mut r = env.reset(seed_base.wrapping_add(ep as u64));
        let mut total = 0.0;
        loop {
            let obs = JointObs::from_step(&r);
            let actions = policy.act(&obs, false, &mut rngs);
            r = env.step(&actions)?;
            total += r.reward;
            if r.done {
                successes.push(r.info.success);
                break;
            }
        }
        episode_rewards.push(total);
    }
    env.set_disturbance(previous);
    let mean_reward = episode_rewards.iter().sum::<f64>() / episodes.max(1) as f64;
    let success_rate =
        successes.iter().filter(|&&s| s).count() as f64 / episodes.max(1) as f64;
    Ok(EvalReport {
        episode_rewards,
        successes,
        mean_reward,
        success_rate,
    })
}

/// One row of a robustness table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub label: String,
    pub force_lo: f64,
    pub force_hi: f64,
    pub mean_reward: f64,
    pub success_rate: f64,
}

/// Evaluate a frozen policy under no disturbance and then under each force
/// range; rows mirror the sweep table structure (a "none" row first, then
/// one row per range).
pub fn robustness_sweep(
    policy: &dyn ActPolicy,
    env: &mut dyn Env,
    ranges: &[(f64, f64)],
    episodes: usize,
    seed_base: u64,
) -> Result<Vec<RobustnessRow>> {
    let mut rows = Vec::with_capacity(ranges.len() + 1);
    let base = evaluate(policy, env, episodes, None, seed_base)?;
    rows.push(RobustnessRow {
        label: "none".to_string(),
        force_lo: 0.0,
        force_hi: 0.0,
        mean_reward: base.mean_reward,
        success_rate: base.success_rate,
    });
    for &(lo, hi) in ranges {
        let report = evaluate(
            policy,
            env,
            episodes,
            Some(DisturbanceConfig::range(lo, hi)),
            seed_base,
        )?;
        rows.push(RobustnessRow {
            label: format!("[{lo}, {hi}]"),
            force_lo: lo,
            force_hi: hi,
            mean_reward: report.mean_reward,
            success_rate: report.success_rate,
        });
    }
    Ok(rows)
}

/// Standard output layout for a run: `<out>/<method>/<env>/<seed>/`.
pub fn run_dir(out: &Path, method: MethodKind, env_name: &str, seed: u64) -> PathBuf {
    out.join(method.name()).join(env_name).join(seed.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::{LiftExpert, RandomPolicy};

    fn tiny_spec(method: MethodKind, seed: u64) -> RunSpec {
        let mut env = EnvConfig::named("dual_lift").unwrap();
        env.max_steps = 60;
        RunSpec {
            method,
            env,
            sac: SacConfig {
                hidden_width: 8,
                batch_size: 16,
                ..SacConfig::default()
            },
            latent: LatentConfig {
                hidden_width: 8,
                ..LatentConfig::default()
            },
            trainer: TrainerConfig {
                total_steps: 400,
                warmup_steps: 100,
                buffer_capacity: 1000,
                eval_interval: 200,
                eval_episodes: 2,
                checkpoint_interval: 400,
                log_interval: 50,
                keep_step_rewards: true,
                ..TrainerConfig::default()
            },
            seed,
        }
    }

    #[test]
    fn training_runs_and_episode_bookkeeping_is_exact() {
        let spec = tiny_spec(MethodKind::ClasPartial, 1);
        let m = run_training(&spec, None).unwrap();
        assert!(!m.episode_rewards.is_empty());
        for (i, steps) in m.episode_step_rewards.iter().enumerate() {
            let total: f64 = steps.iter().sum();
            assert!(
                (total - m.episode_rewards[i]).abs() < 1e-12,
                "episode {i}: {total} vs {}",
                m.episode_rewards[i]
            );
            assert_eq!(steps.len(), m.episode_lengths[i]);
        }
        assert!(!m.evals.is_empty());
    }

    #[test]
    fn zero_warmup_skips_phase_one() {
        let mut spec = tiny_spec(MethodKind::FullDec, 2);
        spec.trainer.warmup_steps = 0;
        spec.trainer.total_steps = 120;
        let m = run_training(&spec, None).unwrap();
        assert!(!m.episode_rewards.is_empty());
    }

    #[test]
    fn full_dec_metrics_have_no_elbo_entries() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_spec(MethodKind::FullDec, 3);
        run_training(&spec, Some(dir.path())).unwrap();
        let text = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
        assert!(!text.contains("\"elbo\""));
        assert!(text.contains("\"kind\":\"episode\""));
    }

    #[test]
    fn identical_runs_produce_byte_identical_metrics() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let spec = tiny_spec(MethodKind::ClasPartial, 7);
        run_training(&spec, Some(d1.path())).unwrap();
        run_training(&spec, Some(d2.path())).unwrap();
        let a = std::fs::read(d1.path().join("metrics.jsonl")).unwrap();
        let b = std::fs::read(d2.path().join("metrics.jsonl")).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn random_policy_has_zero_success_on_dual_lift() {
        let cfg = EnvConfig::named("dual_lift").unwrap();
        let mut env = make_env(&cfg).unwrap();
        let policy = RandomPolicy {
            action_dims: cfg.action_dims(),
        };
        let report = evaluate(&policy, env.as_mut(), 10, None, 99).unwrap();
        assert_eq!(report.success_rate, 0.0);
        // Success rates over 10 episodes land on tenths.
        assert_eq!((report.success_rate * 10.0).fract(), 0.0);
    }

    #[test]
    fn expert_solves_dual_lift_and_zero_disturbance_matches_none() {
        let cfg = EnvConfig::named("dual_lift").unwrap();
        let mut env = make_env(&cfg).unwrap();
        let expert = LiftExpert::new(&cfg);
        let plain = evaluate(&expert, env.as_mut(), 10, None, 5).unwrap();
        assert_eq!(plain.success_rate, 1.0, "expert must solve the task");
        assert!(plain.mean_reward > 400.0, "expert reward {}", plain.mean_reward);

        let zero = evaluate(
            &expert,
            env.as_mut(),
            10,
            Some(DisturbanceConfig::range(0.0, 0.0)),
            5,
        )
        .unwrap();
        assert_eq!(plain.episode_rewards, zero.episode_rewards);
        assert_eq!(plain.successes, zero.successes);
    }

    #[test]
    fn solo_expert_fails_dual_lift() {
        let cfg = EnvConfig::named("dual_lift").unwrap();
        let mut env = make_env(&cfg).unwrap();
        let solo = LiftExpert::solo(&cfg, 0);
        let report = evaluate(&solo, env.as_mut(), 10, None, 6).unwrap();
        assert_eq!(report.success_rate, 0.0, "one agent cannot lift alone");
    }

    #[test]
    fn robustness_rows_mirror_range_structure() {
        let cfg = EnvConfig::named("dual_lift").unwrap();
        let mut env = make_env(&cfg).unwrap();
        let expert = LiftExpert::new(&cfg);
        let ranges = [(0.0, 0.2), (0.2, 0.4)];
        let rows = robustness_sweep(&expert, env.as_mut(), &ranges, 4, 7).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].label, "none");
        // The "none" row reproduces a plain evaluate call.
        let plain = evaluate(&expert, env.as_mut(), 4, None, 7).unwrap();
        assert_eq!(rows[0].mean_reward, plain.mean_reward);
    }

    #[test]
    fn strong_disturbance_costs_the_expert_reward() {
        let cfg = EnvConfig::named("four_lift").unwrap();
        let mut env = make_env(&cfg).unwrap();
        let expert = LiftExpert::new(&cfg);
        let rows = robustness_sweep(&expert, env.as_mut(), &[(4.0, 6.0)], 5, 11).unwrap();
        assert_eq!(rows[0].success_rate, 1.0);
        assert!(
            rows[1].mean_reward < rows[0].mean_reward - 5.0,
            "a shove beyond the team's force authority must cost reward: {rows:?}"
        );
    }
}
