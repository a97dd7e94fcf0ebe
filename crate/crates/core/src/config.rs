//! Experiment configuration: a TOML file read as flat dotted keys
//! (`fcbl.alpha = 0.85` or `[fcbl]` tables alike).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::TaskSpec;
use crate::error::{Error, Result};
use crate::params::{HyperParams, IndicatorKind};
use crate::trainer::{Ablation, Mode, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub hp: HyperParams,
    pub batch_size: usize,
    pub ablation: Ablation,
    pub reinit_head: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskSpec::default(),
            hp: HyperParams::default(),
            batch_size: 256,
            ablation: Ablation::FULL,
            reinit_head: false,
        }
    }
}

/// Every key the file may set.
pub const KNOWN_KEYS: &[&str] = &[
    "task.num_classes",
    "task.feature_dim",
    "task.max_count",
    "task.min_count",
    "task.power",
    "task.background_count",
    "task.class_sep",
    "task.noise_scale",
    "task.background_scale",
    "task.test_per_class",
    "task.test_background",
    "fcbl.alpha",
    "fcbl.p_thresh",
    "indicator.kind",
    "indicator.gamma",
    "fhm.beta",
    "fhm.c_sampled",
    "fhm.m_per_class",
    "fhm.proposal_noise",
    "optim.lr",
    "optim.lr_decay",
    "optim.decay_epochs",
    "optim.momentum",
    "optim.weight_decay",
    "optim.weight_decay_stage1",
    "train.epochs_stage1",
    "train.epochs_stage2",
    "train.batch_size",
    "train.reinit_head",
    "ablation.use_margin",
    "ablation.use_weight_term",
    "ablation.use_fhm",
];

/// Flattens nested tables into `a.b.c` keys.
pub fn flatten(table: &toml::Table) -> BTreeMap<String, toml::Value> {
    fn walk(prefix: &str, t: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
        for (k, v) in t {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                toml::Value::Table(inner) => walk(&key, inner, out),
                other => {
                    out.insert(key, other.clone());
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", table, &mut out);
    out
}

fn bad(key: &str, want: &str, v: &toml::Value) -> Error {
    Error::Config(format!("`{key}` must be {want}, got `{v}`"))
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(x) => Ok(*x),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, "a number", v)),
    }
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(bad(key, "a non-negative integer", v)),
    }
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| bad(key, "true or false", v))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string().replace('\n', " ")))?;
        Self::from_flat(&flatten(&table))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_flat(flat: &BTreeMap<String, toml::Value>) -> Result<Self> {
        if let Some(k) = flat.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(Error::UnknownKey(k.clone()));
        }
        let mut cfg = ExperimentConfig::default();
        // the count-curve exponent follows the shape keys unless set explicitly
        let shape = ["task.num_classes", "task.feature_dim", "task.max_count", "task.min_count"];
        if shape.iter().any(|k| flat.contains_key(*k)) {
            let get = |k: &str, d: usize| flat.get(k).map(|v| as_usize(k, v)).unwrap_or(Ok(d));
            let base = TaskSpec::long_tailed(
                get(shape[0], cfg.task.num_classes)?,
                get(shape[1], cfg.task.feature_dim)?,
                get(shape[2], cfg.task.max_count)?,
                get(shape[3], cfg.task.min_count)?,
            );
            cfg.task = TaskSpec {
                num_classes: base.num_classes,
                feature_dim: base.feature_dim,
                max_count: base.max_count,
                min_count: base.min_count,
                power: base.power,
                ..cfg.task
            };
        }
        for (k, v) in flat {
            if !shape.contains(&k.as_str()) {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one dotted key. Does not revalidate.
    pub fn set(&mut self, key: &str, v: &toml::Value) -> Result<()> {
        let t = &mut self.task;
        let hp = &mut self.hp;
        match key {
            "task.num_classes" => t.num_classes = as_usize(key, v)?,
            "task.feature_dim" => t.feature_dim = as_usize(key, v)?,
            "task.max_count" => t.max_count = as_usize(key, v)?,
            "task.min_count" => t.min_count = as_usize(key, v)?,
            "task.power" => t.power = as_f64(key, v)?,
            "task.background_count" => t.background_count = as_usize(key, v)?,
            "task.class_sep" => t.class_sep = as_f64(key, v)?,
            "task.noise_scale" => t.noise_scale = as_f64(key, v)?,
            "task.background_scale" => t.background_scale = as_f64(key, v)?,
            "task.test_per_class" => t.test_per_class = as_usize(key, v)?,
            "task.test_background" => t.test_background = as_usize(key, v)?,
            "fcbl.alpha" => hp.alpha = as_f64(key, v)?,
            "fcbl.p_thresh" => hp.p_thresh = as_f64(key, v)?,
            "indicator.kind" => {
                hp.indicator_kind = v
                    .as_str()
                    .ok_or_else(|| bad(key, "a string", v))?
                    .parse::<IndicatorKind>()?
            }
            "indicator.gamma" => hp.gamma = as_f64(key, v)?,
            "fhm.beta" => hp.beta = as_f64(key, v)?,
            "fhm.c_sampled" => hp.c_sampled = as_usize(key, v)?,
            "fhm.m_per_class" => hp.m_per_class = as_usize(key, v)?,
            "fhm.proposal_noise" => hp.proposal_noise = as_f64(key, v)?,
            "optim.lr" => hp.lr.initial = as_f64(key, v)?,
            "optim.lr_decay" => hp.lr.decay_factor = as_f64(key, v)?,
            "optim.decay_epochs" => {
                let arr = v.as_array().ok_or_else(|| bad(key, "an array of epochs", v))?;
                hp.lr.decay_epochs = arr.iter().map(|e| as_usize(key, e)).collect::<Result<_>>()?;
            }
            "optim.momentum" => hp.momentum = as_f64(key, v)?,
            "optim.weight_decay" => hp.weight_decay = as_f64(key, v)?,
            "optim.weight_decay_stage1" => hp.weight_decay_stage1 = as_f64(key, v)?,
            "train.epochs_stage1" => hp.epochs_stage1 = as_usize(key, v)?,
            "train.epochs_stage2" => hp.epochs_stage2 = as_usize(key, v)?,
            "train.batch_size" => self.batch_size = as_usize(key, v)?,
            "train.reinit_head" => self.reinit_head = as_bool(key, v)?,
            "ablation.use_margin" => self.ablation.use_margin = as_bool(key, v)?,
            "ablation.use_weight_term" => self.ablation.use_weight_term = as_bool(key, v)?,
            "ablation.use_fhm" => self.ablation.use_fhm = as_bool(key, v)?,
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
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

    pub fn train_config(&self, mode: Mode, seed: u64) -> TrainConfig {
        TrainConfig {
            hp: self.hp.clone(),
            batch_size: self.batch_size,
            mode,
            ablation: self.ablation,
            reinit_head: self.reinit_head,
            seed,
        }
    }

    /// The resolved configuration in the file format, every key present.
    pub fn to_toml_string(&self) -> String {
        let t = &self.task;
        let hp = &self.hp;
        let epochs: Vec<String> = hp.lr.decay_epochs.iter().map(|e| e.to_string()).collect();
        format!(
            "[task]\nnum_classes = {}\nfeature_dim = {}\nmax_count = {}\nmin_count = {}\npower = {:?}\n\
             background_count = {}\nclass_sep = {:?}\nnoise_scale = {:?}\nbackground_scale = {:?}\n\
             test_per_class = {}\ntest_background = {}\n\n\
             [fcbl]\nalpha = {:?}\np_thresh = {:?}\n\n\
             [indicator]\nkind = \"{}\"\ngamma = {:?}\n\n\
             [fhm]\nbeta = {:?}\nc_sampled = {}\nm_per_class = {}\nproposal_noise = {:?}\n\n\
             [optim]\nlr = {:?}\nlr_decay = {:?}\ndecay_epochs = [{}]\nmomentum = {:?}\nweight_decay = {:?}\n\
             weight_decay_stage1 = {:?}\n\n\
             [train]\nepochs_stage1 = {}\nepochs_stage2 = {}\nbatch_size = {}\nreinit_head = {}\n\n\
             [ablation]\nuse_margin = {}\nuse_weight_term = {}\nuse_fhm = {}\n",
            t.num_classes,
            t.feature_dim,
            t.max_count,
            t.min_count,
            t.power,
            t.background_count,
            t.class_sep,
            t.noise_scale,
            t.background_scale,
            t.test_per_class,
            t.test_background,
            hp.alpha,
            hp.p_thresh,
            hp.indicator_kind,
            hp.gamma,
            hp.beta,
            hp.c_sampled,
            hp.m_per_class,
            hp.proposal_noise,
            hp.lr.initial,
            hp.lr.decay_factor,
            epochs.join(", "),
            hp.momentum,
            hp.weight_decay,
            hp.weight_decay_stage1,
            hp.epochs_stage1,
            hp.epochs_stage2,
            self.batch_size,
            self.reinit_head,
            self.ablation.use_margin,
            self.ablation.use_weight_term,
            self.ablation.use_fhm,
        )
    }
}
