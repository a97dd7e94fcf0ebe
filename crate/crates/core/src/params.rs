//! Hyperparameter record and its validation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which long-term statistic drives the pairwise margins and the
/// hallucination sampling probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorKind {
    /// Static fraction of training examples per class.
    ImageFreq,
    /// Static training instance count per class.
    InstanceFreq,
    /// Cumulative foreground instances seen during classifier learning.
    CumCount,
    /// EMA of the ground-truth sigmoid score.
    MeanScore,
    /// Online true positive rate over the foreground channels.
    Tpr,
    /// Confusion matrix accumulated from foreground softmax rows.
    ConfusionSoft,
    /// Confusion matrix accumulated from argmax predictions.
    ConfusionHard,
}

impl IndicatorKind {
    pub const ALL: [IndicatorKind; 7] = [
        IndicatorKind::ImageFreq,
        IndicatorKind::InstanceFreq,
        IndicatorKind::CumCount,
        IndicatorKind::MeanScore,
        IndicatorKind::Tpr,
        IndicatorKind::ConfusionSoft,
        IndicatorKind::ConfusionHard,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IndicatorKind::ImageFreq => "image_freq",
            IndicatorKind::InstanceFreq => "instance_freq",
            IndicatorKind::CumCount => "cum_count",
            IndicatorKind::MeanScore => "mean_score",
            IndicatorKind::Tpr => "tpr",
            IndicatorKind::ConfusionSoft => "confusion_soft",
            IndicatorKind::ConfusionHard => "confusion_hard",
        }
    }

    pub fn is_confusion(self) -> bool {
        matches!(
            self,
            IndicatorKind::ConfusionSoft | IndicatorKind::ConfusionHard
        )
    }
}

impl fmt::Display for IndicatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IndicatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        IndicatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParam {
                field: "indicator_kind",
                value: s.to_string(),
                range: "one of image_freq, instance_freq, cum_count, mean_score, tpr, confusion_soft, confusion_hard",
            })
    }
}

/// Step decay: `initial * decay_factor^k` where `k` counts the decay epochs
/// already passed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_factor: f64,
    /// Zero-based epoch indices at which the decay kicks in. `[8, 11]` means
    /// epochs 0..8 run at `initial`, 8..11 at `0.1 * initial`, and so on.
    pub decay_epochs: Vec<usize>,
}

impl LrSchedule {
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let passed = self.decay_epochs.iter().filter(|&&d| d <= epoch).count();
        self.initial * self.decay_factor.powi(passed as i32)
    }

    /// Same schedule shape over a run `factor` times as long.
    pub fn stretched(&self, factor: f64) -> LrSchedule {
        LrSchedule {
            decay_epochs: self
                .decay_epochs
                .iter()
                .map(|&d| (d as f64 * factor).round() as usize)
                .collect(),
            ..self.clone()
        }
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 0.02,
            decay_factor: 0.1,
            decay_epochs: vec![8, 11],
        }
    }
}

/// Every tunable of the method. Build one with struct update syntax over
/// [`HyperParams::default`] and pass it through [`validate_params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// EMA rate of the mean classification score.
    pub gamma: f64,
    /// Margin scale.
    pub alpha: f64,
    /// Weight-term threshold on the short-term indicator.
    pub p_thresh: f64,
    /// EMA rate of the per-class feature distributions.
    pub beta: f64,
    /// Classes selected for hallucination per step.
    pub c_sampled: usize,
    /// Hallucinated features per selected class.
    pub m_per_class: usize,
    pub lr: LrSchedule,
    pub momentum: f64,
    /// Weight decay of the classifier-learning stage.
    pub weight_decay: f64,
    /// Weight decay of the representation-learning stage.
    pub weight_decay_stage1: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub indicator_kind: IndicatorKind,
    /// Scale of the feature jitter attached to each dense proposal, multiplied
    /// by the proposal's mean absolute offset.
    pub proposal_noise: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            gamma: 0.9,
            alpha: 0.85,
            p_thresh: 0.7,
            beta: 0.9,
            c_sampled: 8,
            m_per_class: 12,
            lr: LrSchedule::default(),
            momentum: 0.9,
            weight_decay: 1e-4,
            weight_decay_stage1: 5e-5,
            epochs_stage1: 12,
            epochs_stage2: 12,
            indicator_kind: IndicatorKind::ConfusionSoft,
            proposal_noise: 0.05,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        fn check(
            ok: bool,
            field: &'static str,
            value: impl fmt::Display,
            range: &'static str,
        ) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParam {
                    field,
                    value: value.to_string(),
                    range,
                })
            }
        }
        let unit = |v: f64| (0.0..1.0).contains(&v);

        check(unit(self.gamma), "gamma", self.gamma, "[0, 1)")?;
        check(
            self.alpha.is_finite() && self.alpha >= 0.0,
            "alpha",
            self.alpha,
            "finite and >= 0",
        )?;
        check(
            self.p_thresh > 0.0 && self.p_thresh <= 1.0,
            "p_thresh",
            self.p_thresh,
            "(0, 1]",
        )?;
        check(unit(self.beta), "beta", self.beta, "[0, 1)")?;
        check(
            self.lr.initial.is_finite() && self.lr.initial > 0.0,
            "lr.initial",
            self.lr.initial,
            "finite and > 0",
        )?;
        check(
            self.lr.decay_factor > 0.0 && self.lr.decay_factor <= 1.0,
            "lr.decay_factor",
            self.lr.decay_factor,
            "(0, 1]",
        )?;
        check(
            self.lr.decay_epochs.windows(2).all(|w| w[0] < w[1]),
            "lr.decay_epochs",
            format!("{:?}", self.lr.decay_epochs),
            "strictly increasing",
        )?;
        check(unit(self.momentum), "momentum", self.momentum, "[0, 1)")?;
        check(
            self.weight_decay.is_finite() && self.weight_decay >= 0.0,
            "weight_decay",
            self.weight_decay,
            "finite and >= 0",
        )?;
        check(
            self.weight_decay_stage1.is_finite() && self.weight_decay_stage1 >= 0.0,
            "weight_decay_stage1",
            self.weight_decay_stage1,
            "finite and >= 0",
        )?;
        check(
            self.epochs_stage1 > 0,
            "epochs_stage1",
            self.epochs_stage1,
            "a positive integer",
        )?;
        check(
            self.epochs_stage2 > 0,
            "epochs_stage2",
            self.epochs_stage2,
            "a positive integer",
        )?;
        check(
            self.proposal_noise.is_finite() && self.proposal_noise >= 0.0,
            "proposal_noise",
            self.proposal_noise,
            "finite and >= 0",
        )?;
        Ok(())
    }
}

/// Accepts `raw` unchanged if every field is in range, otherwise names the
/// first violated constraint.
pub fn validate_params(raw: HyperParams) -> Result<HyperParams> {
    raw.validate()?;
    Ok(raw)
}
