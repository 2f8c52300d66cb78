//! Quick training smoke run for calibrating desk-scale configs.
use clas_core::envs::EnvConfig;
use clas_core::sac::SacConfig;
use clas_core::trainer::{run_training, RunSpec, TrainerConfig};
use clas_core::{LatentConfig, MethodKind};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let method = MethodKind::parse(args.get(1).map(|s| s.as_str()).unwrap_or("clas_partial")).unwrap();
    let env_name = args.get(2).map(|s| s.as_str()).unwrap_or("dual_lift");
    let steps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(30_000);
    let width: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(48);
    let seed: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0);
    let batch: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(128);

    let spec = RunSpec {
        method,
        env: EnvConfig::named(env_name).unwrap(),
        sac: SacConfig {
            hidden_width: width,
            batch_size: batch,
            decoder_flow: std::env::var("SMOKE_DECFLOW").map(|v| v != "0").unwrap_or(SacConfig::default().decoder_flow),
            ..SacConfig::default()
        },
        latent: LatentConfig {
            hidden_width: width,
            lr: std::env::var("SMOKE_LLR").ok().and_then(|v| v.parse().ok()).unwrap_or(1e-3),
            ..LatentConfig::default()
        },
        trainer: TrainerConfig {
            total_steps: steps,
            warmup_steps: std::env::var("SMOKE_WARMUP").ok().and_then(|v| v.parse().ok()).unwrap_or((steps / 30).max(500)),
            eval_interval: (steps / 10).max(500),
            eval_episodes: 5,
            ..TrainerConfig::default()
        },
        seed,
    };
    let out = std::env::var("SMOKE_OUT").ok().map(std::path::PathBuf::from);
    let t0 = std::time::Instant::now();
    let m = run_training(&spec, out.as_deref()).unwrap();
    for e in &m.evals {
        println!(
            "step {:>7}  eval_reward {:>8.2}  success {:.0}%",
            e.step, e.mean_reward, e.success_rate * 100.0
        );
    }
    println!(
        "method {} env {} steps {} width {}: wall {:.1}s  ({:.2} ms/step)  skipped {}",
        method.name(), env_name, steps, width,
        t0.elapsed().as_secs_f64(),
        1000.0 * t0.elapsed().as_secs_f64() / steps as f64,
        m.skipped_batches,
    );
}
