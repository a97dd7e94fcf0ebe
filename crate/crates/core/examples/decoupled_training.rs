// The two-stage pipeline on a small long-tailed task: representation
// learning with the objectness loss, then classifier learning with the
// balance loss and feature hallucination on a frozen extractor.

use bacl::datagen::{make_task, TaskSpec};
use bacl::trainer::{train_stage1, train_stage2, Mode, RunLog, TrainConfig};
use bacl::{HyperParams, LrSchedule, Result};

pub fn run_example() -> Result<(RunLog, RunLog)> {
    let spec = TaskSpec {
        background_count: 1500,
        test_per_class: 40,
        test_background: 200,
        ..TaskSpec::long_tailed(10, 12, 1000, 5)
    };
    let ds = make_task(&spec, 1)?;
    let hp = HyperParams {
        epochs_stage1: 6,
        epochs_stage2: 4,
        lr: LrSchedule {
            initial: 0.05,
            decay_factor: 0.1,
            decay_epochs: vec![4],
        },
        ..Default::default()
    };
    let cfg = TrainConfig {
        batch_size: 128,
        ..TrainConfig::new(hp, Mode::Bacl, 1)
    };
    let (stage1, log1) = train_stage1(&ds, &cfg)?;
    let out = train_stage2(&stage1, &ds, &cfg)?;
    assert_eq!(out.model.extractor.layers, stage1.extractor.layers);
    Ok((log1, out.log))
}

fn main() -> Result<()> {
    let (s1, s2) = run_example()?;
    for log in [&s1, &s2] {
        println!("== {}", log.label);
        log.write_csv(std::io::stdout()).expect("stdout");
    }
    Ok(())
}
