// The component ablation on the 30-class task: softmax baseline, stage 1,
// and stage 2 with the balance loss only, hallucination only and both.
//
// `cargo run --release --example balance_experiment -- 5` runs seeds 0..5
// (about ten seconds each in release mode).

use bacl::datagen::TaskSpec;
use bacl::experiment::{run_seed, SuiteResult};
use bacl::trainer::{Mode, TrainConfig};
use bacl::{HyperParams, Result};

pub fn run_example_with(spec: &TaskSpec, hp: HyperParams, seeds: u64) -> Result<Vec<SuiteResult>> {
    let cfg = TrainConfig {
        batch_size: 256,
        ..TrainConfig::new(hp, Mode::Bacl, 0)
    };
    (0..seeds).map(|s| run_seed(spec, &cfg, s)).collect()
}

pub fn run_example() -> Result<Vec<SuiteResult>> {
    let spec = TaskSpec {
        background_count: 600,
        test_per_class: 20,
        test_background: 100,
        ..TaskSpec::long_tailed(8, 8, 400, 5)
    };
    let hp = HyperParams {
        epochs_stage1: 2,
        epochs_stage2: 2,
        ..Default::default()
    };
    run_example_with(&spec, hp, 1)
}

fn main() -> Result<()> {
    let seeds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let results = run_example_with(&TaskSpec::long_tailed(30, 32, 5000, 5), HyperParams::default(), seeds)?;
    println!("seed arm          rare   common frequent mean   norm_cv");
    for r in &results {
        for a in r.arms() {
            println!(
                "{:<4} {:<12} {:.3}  {:.3}  {:.3}    {:.3}  {:.3}",
                r.seed, a.name, a.eval.rare, a.eval.common, a.eval.frequent, a.eval.mean, a.norm_cv
            );
        }
    }
    Ok(())
}
