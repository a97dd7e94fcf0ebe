//! Classifier-balance diagnostics and run comparison tables.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::classifier::{weight_norms, ClassifierHead, Model};
use crate::datagen::{Dataset, GroupAssignment};
use crate::error::{Error, Result};
use crate::trainer::{evaluate, EpochRecord, Evaluation, RunLog};

/// Population standard deviation over mean. Zero for empty input or a zero
/// mean.
pub fn coefficient_of_variation(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean.abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormEntry {
    /// Zero-based rank by descending training count.
    pub rank: usize,
    pub class: usize,
    pub count: usize,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub norms: Vec<NormEntry>,
    pub norm_cv: f64,
    pub acc_rare: f64,
    pub acc_common: f64,
    pub acc_frequent: f64,
    pub acc_overall: f64,
    /// Frequent-group accuracy minus rare-group accuracy.
    pub head_tail_gap: f64,
}

impl BalanceReport {
    pub fn from_parts(head: &ClassifierHead, counts: &[usize], eval: &Evaluation) -> Result<Self> {
        let norms = weight_norms(head);
        if norms.len() != counts.len() {
            return Err(Error::Shape {
                context: "balance report",
                expected: norms.len(),
                actual: counts.len(),
            });
        }
        let mut order: Vec<usize> = (0..counts.len()).collect();
        // stable sort keeps class order among ties
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]));
        Ok(BalanceReport {
            norms: order
                .iter()
                .enumerate()
                .map(|(rank, &class)| NormEntry {
                    rank,
                    class,
                    count: counts[class],
                    norm: norms[class],
                })
                .collect(),
            norm_cv: coefficient_of_variation(&norms),
            acc_rare: eval.rare,
            acc_common: eval.common,
            acc_frequent: eval.frequent,
            acc_overall: eval.mean,
            head_tail_gap: eval.frequent - eval.rare,
        })
    }

    pub fn write_plot_data<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "rank,class,count,norm")?;
        for e in &self.norms {
            writeln!(w, "{},{},{},{}", e.rank, e.class, e.count, e.norm)?;
        }
        Ok(())
    }
}

/// Weight-norm profile and grouped accuracy of `model` on `dataset`.
/// `groups` overrides the dataset's own count-based grouping.
pub fn balance_report(model: &Model, dataset: &Dataset, groups: Option<&GroupAssignment>) -> Result<BalanceReport> {
    let mut eval = evaluate(model, dataset)?;
    if let Some(g) = groups {
        let [r, c, f] = crate::trainer::group_means(&eval.per_class, g);
        eval.rare = r;
        eval.common = c;
        eval.frequent = f;
    }
    BalanceReport::from_parts(&model.head, &dataset.counts, &eval)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Loss,
    AccOverall,
    AccRare,
    AccCommon,
    AccFrequent,
    NormCv,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Loss,
        Metric::AccOverall,
        Metric::AccRare,
        Metric::AccCommon,
        Metric::AccFrequent,
        Metric::NormCv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Loss => "loss",
            Metric::AccOverall => "acc_overall",
            Metric::AccRare => "acc_rare",
            Metric::AccCommon => "acc_common",
            Metric::AccFrequent => "acc_frequent",
            Metric::NormCv => "norm_cv",
        }
    }

    pub fn of(self, r: &EpochRecord) -> f64 {
        match self {
            Metric::Loss => r.loss,
            Metric::AccOverall => r.acc_overall,
            Metric::AccRare => r.acc_rare,
            Metric::AccCommon => r.acc_common,
            Metric::AccFrequent => r.acc_frequent,
            Metric::NormCv => r.norm_cv,
        }
    }
}

/// Side-by-side view of several runs over the same class set.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub labels: Vec<String>,
    /// Union of epoch numbers over all runs, ascending.
    pub epochs: Vec<usize>,
    /// `cells[e][r]` is run `r`'s record at `epochs[e]`, if it has one.
    pub cells: Vec<Vec<Option<EpochRecord>>>,
    /// Last record of each run.
    pub finals: Vec<Option<EpochRecord>>,
}

pub fn compare_runs(logs: &[RunLog]) -> Result<ComparisonTable> {
    if let Some(first) = logs.first() {
        for l in &logs[1..] {
            if l.num_classes != first.num_classes {
                return Err(Error::Incompatible(format!(
                    "run `{}` has {} classes but `{}` has {}",
                    l.label, l.num_classes, first.label, first.num_classes
                )));
            }
        }
    }
    let mut epochs: Vec<usize> = logs.iter().flat_map(|l| l.epochs.iter().map(|r| r.epoch)).collect();
    epochs.sort_unstable();
    epochs.dedup();
    let cells = epochs
        .iter()
        .map(|&e| {
            logs.iter()
                .map(|l| l.epochs.iter().find(|r| r.epoch == e).cloned())
                .collect()
        })
        .collect();
    Ok(ComparisonTable {
        labels: logs.iter().map(|l| l.label.clone()).collect(),
        epochs,
        cells,
        finals: logs.iter().map(|l| l.last().cloned()).collect(),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ComparisonTable {
    /// One row per epoch, one column per run.
    pub fn write_metric_csv<W: Write>(&self, mut w: W, metric: Metric) -> std::io::Result<()> {
        writeln!(w, "epoch,{}", self.labels.join(","))?;
        for (e, row) in self.epochs.iter().zip(&self.cells) {
            let vals: Vec<String> = row.iter().map(|r| cell(r.as_ref().map(|r| metric.of(r)))).collect();
            writeln!(w, "{e},{}", vals.join(","))?;
        }
        Ok(())
    }

    /// One row per run with its final metrics and the difference from the
    /// first run.
    pub fn write_final_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let names: Vec<&str> = Metric::ALL.iter().map(|m| m.name()).collect();
        let deltas: Vec<String> = names.iter().map(|n| format!("delta_{n}")).collect();
        writeln!(w, "run,{},{}", names.join(","), deltas.join(","))?;
        let base = self.finals.first().cloned().flatten();
        for (label, fin) in self.labels.iter().zip(&self.finals) {
            let vals: Vec<String> = Metric::ALL.iter().map(|m| cell(fin.as_ref().map(|r| m.of(r)))).collect();
            let ds: Vec<String> = Metric::ALL
                .iter()
                .map(|m| match (fin, &base) {
                    (Some(r), Some(b)) => (m.of(r) - m.of(b)).to_string(),
                    _ => String::new(),
                })
                .collect();
            writeln!(w, "{label},{},{}", vals.join(","), ds.join(","))?;
        }
        Ok(())
    }
}
