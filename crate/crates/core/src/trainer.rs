//! The decoupled pipeline.
//!
//! Stage 1 trains extractor and head end to end with the sigmoid/objectness
//! loss. Stage 2 freezes the extractor and fine-tunes the head one step at a
//! time with the foreground balance loss and hallucinated features. The
//! softmax cross-entropy comparator is trained end to end over both stages'
//! worth of epochs.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classifier::{weight_norms, ClassifierHead, Model, Parameters, Scoring, Sgd};
use crate::datagen::{epoch_batches, Dataset, Example, Group, GroupAssignment};
use crate::error::{Error, Result};
use crate::fhm::{dense_proposals, sampling_probs, select_classes, synthesize, FeatureDistribution, HallucinatedBatch};
use crate::indicators::{IndicatorSnapshot, LongTermIndicators};
use crate::losses::{bce_objectness, fcbl, inference_probs, softmax_ce, weight_terms, MarginRow, WeightRow};
use crate::metrics::coefficient_of_variation;
use crate::params::{HyperParams, LrSchedule};
use crate::rng::{RngStreams, Stream, StreamRng};
use crate::types::Label;

/// A test item is called background when its background probability
/// reaches this value.
pub const BACKGROUND_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Softmax cross-entropy, end to end, no decoupling.
    BaselineCe,
    /// Sigmoid/objectness loss; in stage 2 this is fine-tuning with no
    /// balancing component.
    BceObjectness,
    /// Full method in stage 2 (components selected by [`Ablation`]).
    Bacl,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::BaselineCe => "baseline_ce",
            Mode::BceObjectness => "bce_objectness",
            Mode::Bacl => "bacl",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline_ce" => Ok(Mode::BaselineCe),
            "bce_objectness" => Ok(Mode::BceObjectness),
            "bacl" => Ok(Mode::Bacl),
            _ => Err(Error::InvalidParam {
                field: "mode",
                value: s.to_string(),
                range: "one of baseline_ce, bce_objectness, bacl",
            }),
        }
    }
}

/// Stage-2 component switches: class-aware margin, weight term and feature
/// hallucination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    pub use_margin: bool,
    pub use_weight_term: bool,
    pub use_fhm: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation::FULL
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        use_margin: true,
        use_weight_term: true,
        use_fhm: true,
    };
    pub const NONE: Ablation = Ablation {
        use_margin: false,
        use_weight_term: false,
        use_fhm: false,
    };
    pub const FCBL_ONLY: Ablation = Ablation {
        use_margin: true,
        use_weight_term: true,
        use_fhm: false,
    };
    pub const FHM_ONLY: Ablation = Ablation {
        use_margin: false,
        use_weight_term: false,
        use_fhm: true,
    };

    /// All eight on/off combinations.
    pub fn lattice() -> Vec<Ablation> {
        (0..8u8)
            .map(|b| Ablation {
                use_margin: b & 1 != 0,
                use_weight_term: b & 2 != 0,
                use_fhm: b & 4 != 0,
            })
            .collect()
    }

    pub fn tag(&self) -> String {
        let parts: Vec<&str> = [
            (self.use_margin, "MG"),
            (self.use_weight_term, "WT"),
            (self.use_fhm, "FHM"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hp: HyperParams,
    pub batch_size: usize,
    pub mode: Mode,
    pub ablation: Ablation,
    /// Start stage 2 from a fresh head instead of the stage-1 head.
    pub reinit_head: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(hp: HyperParams, mode: Mode, seed: u64) -> Self {
        TrainConfig {
            hp,
            batch_size: 256,
            mode,
            ablation: Ablation::FULL,
            reinit_head: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidParam {
                field: "batch_size",
                value: "0".into(),
                range: "a positive integer",
            });
        }
        Ok(())
    }

    /// Components actually active in stage 2.
    pub fn components(&self) -> Ablation {
        match self.mode {
            Mode::Bacl => self.ablation,
            _ => Ablation::NONE,
        }
    }

    fn streams(&self) -> RngStreams {
        RngStreams::new(self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub loss: f64,
    pub acc_overall: f64,
    pub acc_rare: f64,
    pub acc_common: f64,
    pub acc_frequent: f64,
    pub norm_cv: f64,
}

pub const RUNLOG_HEADER: &str = "epoch,loss,acc_overall,acc_rare,acc_common,acc_frequent,norm_cv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub label: String,
    pub num_classes: usize,
    pub epochs: Vec<EpochRecord>,
    /// Foreground weight norms after each epoch.
    pub weight_norms: Vec<Vec<f64>>,
    /// Indicator state after each classifier-learning epoch.
    pub snapshots: Vec<IndicatorSnapshot>,
    pub final_eval: Option<Evaluation>,
}

impl RunLog {
    pub fn new(label: impl Into<String>, num_classes: usize) -> Self {
        RunLog {
            label: label.into(),
            num_classes,
            epochs: Vec::new(),
            weight_norms: Vec::new(),
            snapshots: Vec::new(),
            final_eval: None,
        }
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{RUNLOG_HEADER}")?;
        for r in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.epoch, r.loss, r.acc_overall, r.acc_rare, r.acc_common, r.acc_frequent, r.norm_cv
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(label: &str, num_classes: usize, r: R) -> Result<RunLog> {
        let err = |line: usize, msg: String| Error::Parse {
            path: label.to_string(),
            line,
            msg,
        };
        let mut log = RunLog::new(label, num_classes);
        for (k, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io(label, e))?;
            if k == 0 {
                if line.trim() != RUNLOG_HEADER {
                    return Err(err(1, format!("expected header `{RUNLOG_HEADER}`")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(err(k + 1, format!("expected 7 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(k + 1, format!("bad number `{s}`")));
            log.epochs.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| err(k + 1, format!("bad epoch `{}`", f[0])))?,
                loss: num(f[1])?,
                acc_overall: num(f[2])?,
                acc_rare: num(f[3])?,
                acc_common: num(f[4])?,
                acc_frequent: num(f[5])?,
                norm_cv: num(f[6])?,
            });
        }
        Ok(log)
    }
}

/// Per-class and grouped accuracy on held-out items. Group means over empty
/// groups are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_class: Vec<f64>,
    pub rare: f64,
    pub common: f64,
    pub frequent: f64,
    /// Mean of the per-class accuracies.
    pub mean: f64,
    pub background: f64,
}

impl Evaluation {
    pub fn group(&self, g: Group) -> f64 {
        match g {
            Group::Rare => self.rare,
            Group::Common => self.common,
            Group::Frequent => self.frequent,
        }
    }
}

/// Background if its probability reaches [`BACKGROUND_THRESHOLD`], otherwise
/// the most probable foreground class.
pub fn predict(probs: &[f64]) -> Label {
    let c = probs.len() - 1;
    if probs[c] >= BACKGROUND_THRESHOLD {
        return Label::Background;
    }
    let mut best = 0;
    for k in 1..c {
        if probs[k] > probs[best] {
            best = k;
        }
    }
    Label::Foreground(best)
}

pub fn group_means(per_class: &[f64], groups: &GroupAssignment) -> [f64; 3] {
    Group::ALL.map(|g| {
        let members: Vec<f64> = groups.members(g).map(|c| per_class[c]).collect();
        if members.is_empty() {
            f64::NAN
        } else {
            members.iter().sum::<f64>() / members.len() as f64
        }
    })
}

/// Accuracy of `predict_fn` over `examples`. Classes without items score 0.
pub fn evaluate_with<F>(examples: &[Example], num_classes: usize, groups: &GroupAssignment, mut predict_fn: F) -> Result<Evaluation>
where
    F: FnMut(&Example) -> Result<Label>,
{
    let mut hits = vec![0usize; num_classes + 1];
    let mut totals = vec![0usize; num_classes + 1];
    for ex in examples {
        let k = ex.label.channel(num_classes);
        totals[k] += 1;
        if predict_fn(ex)? == ex.label {
            hits[k] += 1;
        }
    }
    let acc: Vec<f64> = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| if t > 0 { h as f64 / t as f64 } else { 0.0 })
        .collect();
    let per_class = acc[..num_classes].to_vec();
    let [rare, common, frequent] = group_means(&per_class, groups);
    Ok(Evaluation {
        mean: per_class.iter().sum::<f64>() / num_classes as f64,
        per_class,
        rare,
        common,
        frequent,
        background: acc[num_classes],
    })
}

/// Evaluates `model` on the held-out split of `dataset`, grouping classes by
/// their training counts.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<Evaluation> {
    let groups = dataset.groups();
    evaluate_with(&dataset.test, dataset.num_classes(), &groups, |ex| {
        Ok(predict(&model.probs(&ex.features)?))
    })
}

fn batch_histogram(dataset: &Dataset, batch: &[usize]) -> String {
    let c = dataset.num_classes();
    let mut hist = vec![0usize; c + 1];
    for &i in batch {
        hist[dataset.train[i].label.channel(c)] += 1;
    }
    format!("batch class histogram (background last): {hist:?}")
}

fn epoch_record(epoch: usize, loss: f64, eval: &Evaluation, norms: &[f64]) -> EpochRecord {
    EpochRecord {
        epoch,
        loss,
        acc_overall: eval.mean,
        acc_rare: eval.rare,
        acc_common: eval.common,
        acc_frequent: eval.frequent,
        norm_cv: coefficient_of_variation(norms),
    }
}

fn scale_grads(grads: &mut [Vec<f64>], s: f64) {
    for g in grads.iter_mut().flatten() {
        *g *= s;
    }
}

#[derive(Clone, Copy)]
enum EndToEndLoss {
    SoftmaxCe,
    BceObjectness,
}

fn train_end_to_end(
    dataset: &Dataset,
    cfg: &TrainConfig,
    loss_kind: EndToEndLoss,
    epochs: usize,
    schedule: LrSchedule,
    weight_decay: f64,
    label: &str,
) -> Result<(Model, RunLog)> {
    cfg.validate()?;
    let streams = cfg.streams();
    let c = dataset.num_classes();
    let d = dataset.feature_dim();
    let scoring = match loss_kind {
        EndToEndLoss::SoftmaxCe => Scoring::Softmax,
        EndToEndLoss::BceObjectness => Scoring::Sigmoid,
    };
    let mut model = Model::new(d, d, c, scoring, &mut streams.stream(Stream::Init));
    let mut ex_opt = Sgd::new(schedule.clone(), cfg.hp.momentum, weight_decay);
    let mut head_opt = Sgd::new(schedule, cfg.hp.momentum, weight_decay);
    let mut batch_rng = streams.stream(Stream::Batch);
    let mut log = RunLog::new(label, c);
    let mut step = 0;

    for epoch in 0..epochs {
        ex_opt.set_epoch(epoch);
        head_opt.set_epoch(epoch);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in epoch_batches(dataset.train.len(), cfg.batch_size, &mut batch_rng) {
            let mut ex_grads = model.extractor.zero_grads();
            let mut head_grads = model.head.zero_grads();
            let mut batch_loss = 0.0;
            for &i in &batch {
                let ex = &dataset.train[i];
                let trace = model.extractor.trace(&ex.features)?;
                let z = model.head.forward(trace.output())?;
                let r = match loss_kind {
                    EndToEndLoss::SoftmaxCe => softmax_ce(&z, ex.label.channel(c))?,
                    EndToEndLoss::BceObjectness => bce_objectness(&z, ex.label)?,
                };
                batch_loss += r.loss;
                let gh = model.head.backward(trace.output(), &r.grad_z, &mut head_grads);
                model.extractor.backward(&trace, &gh, &mut ex_grads);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: batch_histogram(dataset, &batch),
                });
            }
            let inv = 1.0 / batch.len() as f64;
            scale_grads(&mut ex_grads, inv);
            scale_grads(&mut head_grads, inv);
            ex_opt
                .step(&mut model.extractor, &ex_grads)
                .map_err(|e| Error::Diverged { step, detail: e.to_string() })?;
            head_opt
                .step(&mut model.head, &head_grads)
                .map_err(|e| Error::Diverged { step, detail: e.to_string() })?;
            loss_sum += batch_loss;
            seen += batch.len();
            step += 1;
        }
        let eval = evaluate(&model, dataset)?;
        let norms = weight_norms(&model.head);
        log.epochs.push(epoch_record(epoch + 1, loss_sum / seen as f64, &eval, &norms));
        log.weight_norms.push(norms);
        log.final_eval = Some(eval);
    }
    Ok((model, log))
}

/// Representation learning: extractor and head trained end to end.
///
/// With [`Mode::BaselineCe`] this instead trains the softmax comparator for
/// `epochs_stage1 + epochs_stage2` epochs, stretching the decay schedule to
/// the longer run.
pub fn train_stage1(dataset: &Dataset, cfg: &TrainConfig) -> Result<(Model, RunLog)> {
    let hp = &cfg.hp;
    match cfg.mode {
        Mode::BaselineCe => train_baseline(dataset, cfg),
        Mode::BceObjectness | Mode::Bacl => train_end_to_end(
            dataset,
            cfg,
            EndToEndLoss::BceObjectness,
            hp.epochs_stage1,
            hp.lr.clone(),
            hp.weight_decay_stage1,
            "stage1",
        ),
    }
}

/// End-to-end softmax cross-entropy comparator.
pub fn train_baseline(dataset: &Dataset, cfg: &TrainConfig) -> Result<(Model, RunLog)> {
    let hp = &cfg.hp;
    let epochs = hp.epochs_stage1 + hp.epochs_stage2;
    let schedule = hp.lr.stretched(epochs as f64 / hp.epochs_stage1 as f64);
    train_end_to_end(
        dataset,
        cfg,
        EndToEndLoss::SoftmaxCe,
        epochs,
        schedule,
        hp.weight_decay,
        "baseline_ce",
    )
}

/// What one classifier-learning step did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepStats {
    /// Summed (not averaged) loss over every sample in the step.
    pub loss_sum: f64,
    pub real_foreground: usize,
    pub background: usize,
    pub hallucinated: usize,
}

impl StepStats {
    pub fn samples(&self) -> usize {
        self.real_foreground + self.background + self.hallucinated
    }
}

/// Mutable state of the classifier-learning stage.
#[derive(Debug, Clone)]
pub struct ClassifierLearner<'a> {
    pub cfg: TrainConfig,
    pub dataset: &'a Dataset,
    pub model: Model,
    pub opt: Sgd,
    pub indicators: LongTermIndicators,
    pub distribution: FeatureDistribution,
    /// Frozen-extractor features of every training example.
    pub features: Vec<Vec<f64>>,
    boxgen_rng: StreamRng,
    select_rng: StreamRng,
    noise_rng: StreamRng,
    pub steps: usize,
}

impl<'a> ClassifierLearner<'a> {
    pub fn new(stage1: &Model, dataset: &'a Dataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let c = dataset.num_classes();
        if stage1.num_classes() != c {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} classes, dataset has {c}",
                stage1.num_classes()
            )));
        }
        if stage1.extractor.input_dim() != dataset.feature_dim() {
            return Err(Error::Checkpoint(format!(
                "checkpoint expects {}-wide inputs, dataset has {}",
                stage1.extractor.input_dim(),
                dataset.feature_dim()
            )));
        }
        let streams = cfg.streams();
        let mut model = stage1.clone();
        model.extractor.freeze();
        model.scoring = Scoring::Sigmoid;
        if cfg.reinit_head {
            model.head = ClassifierHead::new(model.head.dim(), c, &mut streams.stream(Stream::Init));
        }
        let features = dataset
            .train
            .iter()
            .map(|ex| model.extractor.extract(&ex.features))
            .collect::<Result<Vec<_>>>()?;
        let counts: Vec<f64> = dataset.counts.iter().map(|&n| n as f64).collect();
        let indicators = LongTermIndicators::new(c, &dataset.class_fractions(), &counts)?;
        let distribution = FeatureDistribution::new(c, model.head.dim());
        Ok(ClassifierLearner {
            opt: Sgd::new(cfg.hp.lr.clone(), cfg.hp.momentum, cfg.hp.weight_decay),
            cfg: cfg.clone(),
            dataset,
            model,
            indicators,
            distribution,
            features,
            boxgen_rng: streams.stream(Stream::BoxGen),
            select_rng: streams.stream(Stream::FhmSelect),
            noise_rng: streams.stream(Stream::FhmNoise),
            steps: 0,
        })
    }

    /// Dense-proposal features for the foreground items of `batch`: the
    /// example's feature plus Gaussian jitter scaled by each proposal's mean
    /// absolute offset.
    fn proposal_features(&mut self, batch: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let scale = self.cfg.hp.proposal_noise;
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for &idx in batch {
            let ex = &self.dataset.train[idx];
            let Some(class) = ex.label.foreground() else {
                continue;
            };
            for p in dense_proposals(&ex.bbox, &mut self.boxgen_rng)? {
                let s = scale * p.mean_abs_offset();
                let rng = &mut self.boxgen_rng;
                feats.push(
                    self.features[idx]
                        .iter()
                        .map(|&v| v + s * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                );
                labels.push(class);
            }
        }
        Ok((feats, labels))
    }

    fn hallucinate(&mut self) -> Result<HallucinatedBatch> {
        let hp = &self.cfg.hp;
        let sp = sampling_probs(&self.indicators.snapshot(), hp.indicator_kind);
        let chosen = select_classes(&sp, hp.c_sampled.min(sp.len()), &mut self.select_rng);
        let mut out = HallucinatedBatch {
            features: Vec::new(),
            labels: Vec::new(),
        };
        for class in chosen {
            if self.distribution.is_eligible(class) {
                out.extend(synthesize(&self.distribution, class, hp.m_per_class, &mut self.noise_rng)?);
            }
        }
        Ok(out)
    }

    /// One classifier-learning step over the training items `batch`:
    ///
    /// 1. dense proposals for every foreground item and their features,
    /// 2. EMA update of the per-class feature distributions from those,
    /// 3. class selection by the sampling probabilities and synthesis,
    /// 4. indicator update from real and hallucinated foreground logits,
    /// 5. balance loss on foreground, objectness BCE on background,
    /// 6. one SGD step on the head.
    ///
    /// Steps 1-3 are skipped when hallucination is switched off.
    pub fn step(&mut self, batch: &[usize]) -> Result<StepStats> {
        let comps = self.cfg.components();
        let hp = self.cfg.hp.clone();
        let c = self.dataset.num_classes();
        let ctx = |step: usize, e: Error| match e {
            Error::Diverged { .. } => e,
            other => Error::Diverged {
                step,
                detail: other.to_string(),
            },
        };

        let hallucinated = if comps.use_fhm {
            let (feats, labels) = self.proposal_features(batch)?;
            self.distribution
                .update(&feats, &labels, hp.beta)
                .map_err(|e| ctx(self.steps, e))?;
            self.hallucinate().map_err(|e| ctx(self.steps, e))?
        } else {
            HallucinatedBatch {
                features: Vec::new(),
                labels: Vec::new(),
            }
        };

        // (feature, label) for every sample that enters the loss
        let mut samples: Vec<(&[f64], Label)> = batch
            .iter()
            .map(|&i| (self.features[i].as_slice(), self.dataset.train[i].label))
            .collect();
        samples.extend(
            hallucinated
                .features
                .iter()
                .zip(&hallucinated.labels)
                .map(|(f, &l)| (f.as_slice(), Label::Foreground(l))),
        );
        let logits = samples
            .iter()
            .map(|(h, _)| self.model.head.forward(h))
            .collect::<Result<Vec<_>>>()?;

        let (fg_logits, fg_labels): (Vec<&[f64]>, Vec<usize>) = logits
            .iter()
            .zip(&samples)
            .filter_map(|(z, (_, l))| l.foreground().map(|i| (z.as_slice(), i)))
            .unzip();
        self.indicators
            .observe(&fg_logits, &fg_labels, hp.gamma)
            .map_err(|e| ctx(self.steps, e))?;
        let snapshot = self.indicators.snapshot();

        let mut margin_cache: Vec<Option<MarginRow>> = vec![None; c];
        let mut grads = self.model.head.zero_grads();
        let mut stats = StepStats {
            hallucinated: hallucinated.len(),
            ..Default::default()
        };
        for (k, ((h, label), z)) in samples.iter().zip(&logits).enumerate() {
            let r = match label {
                Label::Background => {
                    stats.background += 1;
                    bce_objectness(z, *label)?
                }
                Label::Foreground(i) => {
                    if k < batch.len() {
                        stats.real_foreground += 1;
                    }
                    let margins = if comps.use_margin {
                        if margin_cache[*i].is_none() {
                            margin_cache[*i] = Some(
                                snapshot
                                    .margin_row(hp.indicator_kind, *i, hp.alpha)
                                    .map_err(|e| ctx(self.steps, e))?,
                            );
                        }
                        margin_cache[*i].clone().expect("cached")
                    } else {
                        MarginRow::zeros(c)
                    };
                    let weights = if comps.use_weight_term {
                        weight_terms(&inference_probs(z), *i, hp.p_thresh)
                    } else {
                        WeightRow::ones(c, *i)
                    };
                    fcbl(z, *label, &margins, &weights)?
                }
            };
            stats.loss_sum += r.loss;
            self.model.head.backward(h, &r.grad_z, &mut grads);
        }
        if !stats.loss_sum.is_finite() {
            return Err(Error::Diverged {
                step: self.steps,
                detail: batch_histogram(self.dataset, batch),
            });
        }
        let n = samples.len();
        if n > 0 {
            scale_grads(&mut grads, 1.0 / n as f64);
            self.opt
                .step(&mut self.model.head, &grads)
                .map_err(|e| ctx(self.steps, e))?;
        }
        self.steps += 1;
        Ok(stats)
    }

    pub fn run_epoch(&mut self, epoch: usize, batch_rng: &mut StreamRng) -> Result<f64> {
        self.opt.set_epoch(epoch);
        let mut loss = 0.0;
        let mut n = 0usize;
        for batch in epoch_batches(self.dataset.train.len(), self.cfg.batch_size, batch_rng) {
            let s = self.step(&batch)?;
            loss += s.loss_sum;
            n += s.samples();
        }
        Ok(if n > 0 { loss / n as f64 } else { 0.0 })
    }
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub model: Model,
    pub log: RunLog,
    pub indicators: LongTermIndicators,
    pub distribution: FeatureDistribution,
}

pub fn stage2_label(cfg: &TrainConfig) -> String {
    match cfg.mode {
        Mode::Bacl => format!("bacl[{}]/{}", cfg.ablation.tag(), cfg.hp.indicator_kind),
        m => format!("{m}/stage2"),
    }
}

/// Classifier learning on top of a stage-1 model for `epochs_stage2` epochs.
pub fn train_stage2(stage1: &Model, dataset: &Dataset, cfg: &TrainConfig) -> Result<Stage2Output> {
    if cfg.mode == Mode::BaselineCe {
        return Err(Error::InvalidParam {
            field: "mode",
            value: "baseline_ce".into(),
            range: "bce_objectness or bacl for stage 2 (the softmax baseline has no second stage)",
        });
    }
    let mut learner = ClassifierLearner::new(stage1, dataset, cfg)?;
    let mut batch_rng = cfg.streams().stream(Stream::FineTuneBatch);
    let mut log = RunLog::new(stage2_label(cfg), dataset.num_classes());
    for epoch in 0..cfg.hp.epochs_stage2 {
        let loss = learner.run_epoch(epoch, &mut batch_rng)?;
        let eval = evaluate(&learner.model, dataset)?;
        let norms = weight_norms(&learner.model.head);
        log.epochs.push(epoch_record(epoch + 1, loss, &eval, &norms));
        log.weight_norms.push(norms);
        log.snapshots.push(learner.indicators.snapshot());
        log.final_eval = Some(eval);
    }
    Ok(Stage2Output {
        model: learner.model,
        log,
        indicators: learner.indicators,
        distribution: learner.distribution,
    })
}
