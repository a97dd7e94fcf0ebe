//! The component-ablation comparison on one task and seed: softmax baseline,
//! the stage-1 model, and stage 2 with the balance loss only, hallucination
//! only, and both.

use serde::{Deserialize, Serialize};

use crate::classifier::weight_norms;
use crate::datagen::{make_task, Dataset, TaskSpec};
use crate::error::Result;
use crate::metrics::coefficient_of_variation;
use crate::trainer::{train_baseline, train_stage1, train_stage2, Ablation, Evaluation, Mode, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub name: String,
    pub eval: Evaluation,
    pub norm_cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub seed: u64,
    pub baseline: ArmResult,
    pub stage1: ArmResult,
    pub fcbl_only: ArmResult,
    pub fhm_only: ArmResult,
    pub full: ArmResult,
}

impl SuiteResult {
    pub fn arms(&self) -> [&ArmResult; 5] {
        [&self.baseline, &self.stage1, &self.fcbl_only, &self.fhm_only, &self.full]
    }
}

/// Runs all five arms. `cfg.mode` and `cfg.ablation` are overridden per arm.
pub fn run_suite(dataset: &Dataset, cfg: &TrainConfig) -> Result<SuiteResult> {
    let arm = |name: &str, model: &crate::classifier::Model, eval: Evaluation| ArmResult {
        name: name.to_string(),
        eval,
        norm_cv: coefficient_of_variation(&weight_norms(&model.head)),
    };
    let last = |log: &crate::trainer::RunLog| log.final_eval.clone().expect("at least one epoch");

    let base_cfg = TrainConfig {
        mode: Mode::BaselineCe,
        ..cfg.clone()
    };
    let (bm, bl) = train_baseline(dataset, &base_cfg)?;
    let baseline = arm("baseline_ce", &bm, last(&bl));

    let s1_cfg = TrainConfig {
        mode: Mode::Bacl,
        ..cfg.clone()
    };
    let (m1, l1) = train_stage1(dataset, &s1_cfg)?;
    let stage1 = arm("stage1", &m1, last(&l1));

    let run = |name: &str, ablation: Ablation| -> Result<ArmResult> {
        let c = TrainConfig {
            ablation,
            ..s1_cfg.clone()
        };
        let out = train_stage2(&m1, dataset, &c)?;
        Ok(arm(name, &out.model, last(&out.log)))
    };
    Ok(SuiteResult {
        seed: cfg.seed,
        baseline,
        stage1,
        fcbl_only: run("fcbl_only", Ablation::FCBL_ONLY)?,
        fhm_only: run("fhm_only", Ablation::FHM_ONLY)?,
        full: run("full", Ablation::FULL)?,
    })
}

/// Generates the task for `seed` and runs the suite on it.
pub fn run_seed(spec: &TaskSpec, cfg: &TrainConfig, seed: u64) -> Result<SuiteResult> {
    let ds = make_task(spec, seed)?;
    run_suite(
        &ds,
        &TrainConfig {
            seed,
            ..cfg.clone()
        },
    )
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
