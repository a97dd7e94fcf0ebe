//! Long-term indicators: streaming per-class statistics that track how the
//! classifier leans between foreground classes.
//!
//! Every statistic is updated on every call regardless of which
//! [`IndicatorKind`] is active, so a snapshot can serve any kind.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{pairwise_margin, sigmoid, softmax, MarginRow};
use crate::params::IndicatorKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTermIndicators {
    num_classes: usize,
    image_freq: Vec<f64>,
    instance_freq: Vec<f64>,
    cum_count: Vec<u64>,
    mean_score: Vec<f64>,
    tpr_num: Vec<u64>,
    tpr_den: Vec<u64>,
    /// Row-major `C x C` sums of foreground softmax rows.
    soft_num: Vec<f64>,
    soft_den: Vec<u64>,
    /// Row-major `C x C` argmax counts.
    hard_num: Vec<u64>,
    hard_den: Vec<u64>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = k;
        }
    }
    best
}

fn check_labels(labels: &[usize], c: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= c) {
        Some(l) => Err(Error::InvalidLabel(format!(
            "indicator update with non-foreground label {l}"
        ))),
        None => Ok(()),
    }
}

impl LongTermIndicators {
    /// `static_f` and `static_big_f` are the image- and instance-frequency
    /// vectors; the dynamic statistics start empty, with the mean score at
    /// `1/(C+1)`.
    pub fn new(num_classes: usize, static_f: &[f64], static_big_f: &[f64]) -> Result<Self> {
        for (ctx, v) in [("image frequency", static_f), ("instance frequency", static_big_f)] {
            if v.len() != num_classes {
                return Err(Error::Shape {
                    context: ctx,
                    expected: num_classes,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::NonFinite(format!("{ctx} must be finite and non-negative")));
            }
        }
        let c = num_classes;
        Ok(LongTermIndicators {
            num_classes: c,
            image_freq: static_f.to_vec(),
            instance_freq: static_big_f.to_vec(),
            cum_count: vec![0; c],
            mean_score: vec![1.0 / (c as f64 + 1.0); c],
            tpr_num: vec![0; c],
            tpr_den: vec![0; c],
            soft_num: vec![0.0; c * c],
            soft_den: vec![0; c],
            hard_num: vec![0; c * c],
            hard_den: vec![0; c],
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// EMA of the per-class mean ground-truth score over this step.
    /// `probs[n]` is the sigmoid score of sample `n` on its own class.
    pub fn update_mean_score(&mut self, probs: &[f64], labels: &[usize], gamma: f64) -> Result<()> {
        check_labels(labels, self.num_classes)?;
        let mut sum = vec![0.0; self.num_classes];
        let mut cnt = vec![0usize; self.num_classes];
        for (&p, &l) in probs.iter().zip(labels) {
            sum[l] += p;
            cnt[l] += 1;
        }
        for i in 0..self.num_classes {
            if cnt[i] > 0 {
                let batch_mean = sum[i] / cnt[i] as f64;
                self.mean_score[i] = gamma * self.mean_score[i] + (1.0 - gamma) * batch_mean;
            }
        }
        Ok(())
    }

    /// Cumulative counts and true-positive counters. `predicted[n]` is the
    /// argmax over the foreground channels.
    pub fn update_counts_tpr(&mut self, predicted: &[usize], labels: &[usize]) -> Result<()> {
        check_labels(labels, self.num_classes)?;
        for (&p, &l) in predicted.iter().zip(labels) {
            self.cum_count[l] += 1;
            self.tpr_den[l] += 1;
            if p == l {
                self.tpr_num[l] += 1;
            }
        }
        Ok(())
    }

    /// Adds the softmax over the first `C` logits of each sample to the row
    /// of its label. Logit rows may carry the objectness channel at the end;
    /// it is ignored.
    pub fn update_confusion_soft<Z: AsRef<[f64]>>(&mut self, logits: &[Z], labels: &[usize]) -> Result<()> {
        check_labels(labels, self.num_classes)?;
        let c = self.num_classes;
        for (z, &l) in logits.iter().zip(labels) {
            let p = softmax(&z.as_ref()[..c]);
            for (acc, pj) in self.soft_num[l * c..(l + 1) * c].iter_mut().zip(p) {
                *acc += pj;
            }
            self.soft_den[l] += 1;
        }
        Ok(())
    }

    /// Indicator-function variant: one count at the foreground argmax.
    pub fn update_confusion_hard<Z: AsRef<[f64]>>(&mut self, logits: &[Z], labels: &[usize]) -> Result<()> {
        check_labels(labels, self.num_classes)?;
        let c = self.num_classes;
        for (z, &l) in logits.iter().zip(labels) {
            let j = argmax(&z.as_ref()[..c]);
            self.hard_num[l * c + j] += 1;
            self.hard_den[l] += 1;
        }
        Ok(())
    }

    /// Feeds one step of foreground samples through every statistic.
    pub fn observe<Z: AsRef<[f64]>>(&mut self, logits: &[Z], labels: &[usize], gamma: f64) -> Result<()> {
        check_labels(labels, self.num_classes)?;
        let c = self.num_classes;
        let probs: Vec<f64> = logits
            .iter()
            .zip(labels)
            .map(|(z, &l)| sigmoid(z.as_ref()[l]))
            .collect();
        let predicted: Vec<usize> = logits.iter().map(|z| argmax(&z.as_ref()[..c])).collect();
        self.update_mean_score(&probs, labels, gamma)?;
        self.update_counts_tpr(&predicted, labels)?;
        self.update_confusion_soft(logits, labels)?;
        self.update_confusion_hard(logits, labels)
    }

    pub fn snapshot(&self) -> IndicatorSnapshot {
        let c = self.num_classes;
        let uniform = 1.0 / c as f64;
        let rows = |num: &dyn Fn(usize, usize) -> f64, den: &[u64]| -> Vec<f64> {
            let mut m = vec![uniform; c * c];
            for i in 0..c {
                if den[i] > 0 {
                    for j in 0..c {
                        m[i * c + j] = num(i, j) / den[i] as f64;
                    }
                }
            }
            m
        };
        IndicatorSnapshot {
            num_classes: c,
            image_freq: self.image_freq.clone(),
            instance_freq: self.instance_freq.clone(),
            cum_count: self.cum_count.iter().map(|&n| n as f64).collect(),
            mean_score: self.mean_score.clone(),
            tpr: self
                .tpr_num
                .iter()
                .zip(&self.tpr_den)
                .map(|(&n, &d)| if d > 0 { n as f64 / d as f64 } else { 0.0 })
                .collect(),
            tpr_has_data: self.tpr_den.iter().map(|&d| d > 0).collect(),
            confusion_soft: rows(&|i, j| self.soft_num[i * c + j], &self.soft_den),
            confusion_hard: rows(&|i, j| self.hard_num[i * c + j] as f64, &self.hard_den),
        }
    }
}

/// Frozen derived values of every long-term indicator. Confusion rows with
/// no observations read as uniform `1/C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSnapshot {
    pub num_classes: usize,
    pub image_freq: Vec<f64>,
    pub instance_freq: Vec<f64>,
    pub cum_count: Vec<f64>,
    pub mean_score: Vec<f64>,
    /// `0` where `tpr_has_data` is false.
    pub tpr: Vec<f64>,
    pub tpr_has_data: Vec<bool>,
    pub confusion_soft: Vec<f64>,
    pub confusion_hard: Vec<f64>,
}

impl IndicatorSnapshot {
    pub fn confusion(&self, kind: IndicatorKind) -> Option<&[f64]> {
        match kind {
            IndicatorKind::ConfusionSoft => Some(&self.confusion_soft),
            IndicatorKind::ConfusionHard => Some(&self.confusion_hard),
            _ => None,
        }
    }

    /// Per-class vector for the scalar kinds, `None` for confusion kinds.
    pub fn scalar(&self, kind: IndicatorKind) -> Option<&[f64]> {
        match kind {
            IndicatorKind::ImageFreq => Some(&self.image_freq),
            IndicatorKind::InstanceFreq => Some(&self.instance_freq),
            IndicatorKind::CumCount => Some(&self.cum_count),
            IndicatorKind::MeanScore => Some(&self.mean_score),
            IndicatorKind::Tpr => Some(&self.tpr),
            IndicatorKind::ConfusionSoft | IndicatorKind::ConfusionHard => None,
        }
    }

    /// `(l_i, l_j)` for the margin between ground truth `i` and class `j`.
    /// Confusion kinds use `l_i = M[j][i]` and `l_j = M[i][j]`.
    pub fn margin_inputs(&self, kind: IndicatorKind, i: usize, j: usize) -> (f64, f64) {
        let c = self.num_classes;
        match self.confusion(kind) {
            Some(m) => (m[j * c + i], m[i * c + j]),
            None => {
                let v = self.scalar(kind).expect("scalar kind");
                (v[i], v[j])
            }
        }
    }

    pub fn margin_row(&self, kind: IndicatorKind, i: usize, alpha: f64) -> Result<MarginRow> {
        let mut row = vec![0.0; self.num_classes];
        for (j, slot) in row.iter_mut().enumerate() {
            if j != i {
                let (li, lj) = self.margin_inputs(kind, i, j);
                *slot = pairwise_margin(li, lj, alpha)?;
            }
        }
        Ok(MarginRow(row))
    }

    /// Whether the dominance criterion says `i` is stronger than `j`.
    pub fn dominates(&self, kind: IndicatorKind, i: usize, j: usize) -> bool {
        let (li, lj) = self.margin_inputs(kind, i, j);
        li > lj
    }

    /// Per-class value in `[0, 1]` for the hallucination sampling weights:
    /// the unbounded kinds are divided by their maximum, confusion kinds use
    /// the diagonal. An all-zero vector reads as zero everywhere.
    pub fn fhm_values(&self, kind: IndicatorKind) -> Vec<f64> {
        let c = self.num_classes;
        match kind {
            IndicatorKind::ImageFreq | IndicatorKind::InstanceFreq | IndicatorKind::CumCount => {
                let v = self.scalar(kind).expect("scalar kind");
                let max = v.iter().copied().fold(0.0, f64::max);
                if max > 0.0 {
                    v.iter().map(|x| x / max).collect()
                } else {
                    vec![0.0; c]
                }
            }
            IndicatorKind::MeanScore | IndicatorKind::Tpr => self.scalar(kind).expect("scalar kind").to_vec(),
            IndicatorKind::ConfusionSoft | IndicatorKind::ConfusionHard => {
                let m = self.confusion(kind).expect("confusion kind");
                (0..c).map(|i| m[i * c + i]).collect()
            }
        }
    }

    pub fn fhm_indicator(&self, kind: IndicatorKind, i: usize) -> f64 {
        self.fhm_values(kind)[i]
    }

    /// One row per class with every scalar statistic.
    pub fn write_per_class_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "class,image_freq,instance_freq,cum_count,mean_score,tpr,tpr_has_data,confusion_soft_diag,confusion_hard_diag"
        )?;
        let c = self.num_classes;
        for i in 0..c {
            writeln!(
                w,
                "{i},{},{},{},{},{},{},{},{}",
                self.image_freq[i],
                self.instance_freq[i],
                self.cum_count[i],
                self.mean_score[i],
                self.tpr[i],
                self.tpr_has_data[i],
                self.confusion_soft[i * c + i],
                self.confusion_hard[i * c + i],
            )?;
        }
        Ok(())
    }

    /// The `C x C` matrix of `kind` with a header row of column indices.
    pub fn write_matrix_csv<W: Write>(&self, mut w: W, kind: IndicatorKind) -> std::io::Result<()> {
        let c = self.num_classes;
        let m = self.confusion(kind).unwrap_or(&self.confusion_soft);
        let header: Vec<String> = (0..c).map(|j| j.to_string()).collect();
        writeln!(w, "row,{}", header.join(","))?;
        for i in 0..c {
            let row: Vec<String> = m[i * c..(i + 1) * c].iter().map(|v| v.to_string()).collect();
            writeln!(w, "{i},{}", row.join(","))?;
        }
        Ok(())
    }
}
