// Weight-norm profile of the softmax baseline against the balanced head,
// written as rank/count/norm plot data plus a side-by-side epoch table.

use bacl::datagen::{make_task, TaskSpec};
use bacl::metrics::{balance_report, compare_runs, BalanceReport, Metric};
use bacl::trainer::{train_baseline, train_stage1, train_stage2, Mode, TrainConfig};
use bacl::{HyperParams, Result};

pub fn run_example() -> Result<(BalanceReport, BalanceReport, String)> {
    let spec = TaskSpec {
        background_count: 1500,
        test_per_class: 40,
        test_background: 200,
        ..TaskSpec::long_tailed(12, 12, 1500, 5)
    };
    let ds = make_task(&spec, 4)?;
    let hp = HyperParams {
        epochs_stage1: 6,
        epochs_stage2: 6,
        ..Default::default()
    };
    let cfg = TrainConfig {
        batch_size: 128,
        ..TrainConfig::new(hp, Mode::Bacl, 4)
    };
    let (base, base_log) = train_baseline(&ds, &TrainConfig { mode: Mode::BaselineCe, ..cfg.clone() })?;
    let (m1, _) = train_stage1(&ds, &cfg)?;
    let out = train_stage2(&m1, &ds, &cfg)?;

    let table = compare_runs(&[base_log, out.log])?;
    let mut text = Vec::new();
    table.write_metric_csv(&mut text, Metric::NormCv).expect("in-memory write");
    Ok((
        balance_report(&base, &ds, None)?,
        balance_report(&out.model, &ds, None)?,
        String::from_utf8(text).expect("utf-8"),
    ))
}

fn main() -> Result<()> {
    let (base, bal, table) = run_example()?;
    for (name, r) in [("baseline_ce", &base), ("bacl", &bal)] {
        println!("== {name}: norm CV {:.3}, rare {:.3}, frequent {:.3}", r.norm_cv, r.acc_rare, r.acc_frequent);
        r.write_plot_data(std::io::stdout()).expect("stdout");
    }
    println!("== norm CV per epoch\n{table}");
    Ok(())
}
