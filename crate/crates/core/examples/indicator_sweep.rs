// Classifier learning under each of the seven long-term indicators from a
// shared stage-1 model, collected into one comparison table.

use bacl::datagen::{make_task, TaskSpec};
use bacl::metrics::compare_runs;
use bacl::trainer::{train_stage1, train_stage2, Mode, TrainConfig};
use bacl::{HyperParams, IndicatorKind, Result};

pub fn run_example() -> Result<String> {
    let spec = TaskSpec {
        background_count: 800,
        test_per_class: 30,
        test_background: 100,
        ..TaskSpec::long_tailed(8, 10, 600, 5)
    };
    let ds = make_task(&spec, 2)?;
    let hp = HyperParams {
        epochs_stage1: 4,
        epochs_stage2: 3,
        ..Default::default()
    };
    let cfg = TrainConfig {
        batch_size: 128,
        ..TrainConfig::new(hp, Mode::Bacl, 2)
    };
    let (m1, _) = train_stage1(&ds, &cfg)?;
    let mut logs = Vec::new();
    for kind in IndicatorKind::ALL {
        let mut c = cfg.clone();
        c.hp.indicator_kind = kind;
        logs.push(train_stage2(&m1, &ds, &c)?.log);
    }
    let mut out = Vec::new();
    compare_runs(&logs)?.write_final_csv(&mut out).expect("in-memory write");
    Ok(String::from_utf8(out).expect("utf-8"))
}

fn main() -> Result<()> {
    print!("{}", run_example()?);
    Ok(())
}
