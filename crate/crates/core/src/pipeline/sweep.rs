use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::Sample;
use super::train::{StepRecord, Trainer};
use crate::{Error, Result};

/// λ values of the default sweep.
pub const DEFAULT_LAMBDAS: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];

/// Outcome of one configuration in a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub lambda: f64,
    pub mu: f64,
    pub e2e: bool,
    pub pe: bool,
    pub ccm: bool,
    pub steps: u64,
    pub first_l_ce: f64,
    pub final_l_ce: f64,
    pub final_l_itl: f64,
    /// Mean of the last epoch's step losses.
    pub final_loss: f64,
    #[serde(skip)]
    pub telemetry: Vec<StepRecord>,
}

impl RunSummary {
    fn from_trainer(name: String, t: &Trainer) -> Self {
        let tel = &t.telemetry;
        let last_epoch: Vec<&StepRecord> = tel.iter().filter(|r| Some(r.epoch) == tel.last().map(|l| l.epoch)).collect();
        let mean = |f: fn(&StepRecord) -> f64| {
            if last_epoch.is_empty() {
                f64::NAN
            } else {
                last_epoch.iter().map(|r| f(r)).sum::<f64>() / last_epoch.len() as f64
            }
        };
        Self {
            name,
            lambda: t.config.lambda,
            mu: t.config.mu,
            e2e: t.config.e2e,
            pe: t.config.pe,
            ccm: t.config.ccm,
            steps: t.step,
            first_l_ce: tel.first().map_or(f64::NAN, |r| r.l_ce),
            final_l_ce: mean(|r| r.l_ce),
            final_l_itl: mean(|r| r.l_itl),
            final_loss: mean(|r| r.loss),
            telemetry: tel.clone(),
        }
    }
}

/// Trains one run per configuration. Each run's telemetry goes to
/// `out_dir/NAME.jsonl` and the summaries to `out_dir/summary.json`.
pub fn run_grid(
    runs: Vec<(String, TrainConfig)>,
    samples: &[Sample],
    out_dir: Option<&Path>,
) -> Result<Vec<RunSummary>> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = Vec::with_capacity(runs.len());
    for (name, config) in runs {
        let mut t = Trainer::new(config, samples.to_vec())?;
        if let Some(dir) = out_dir {
            let path = dir.join(format!("{name}.jsonl"));
            if path.exists() {
                std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
            t.log_to(&path)?;
        }
        t.train(None)?;
        out.push(RunSummary::from_trainer(name, &t));
    }
    if let Some(dir) = out_dir {
        let path = dir.join("summary.json");
        std::fs::write(&path, serde_json::to_string_pretty(&out)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(out)
}

/// The λ × μ grid over `base`.
pub fn loss_weight_grid(base: &TrainConfig, lambdas: &[f64], mus: &[f64]) -> Vec<(String, TrainConfig)> {
    let mut runs = Vec::new();
    for &lambda in lambdas {
        for &mu in mus {
            let config = TrainConfig {
                lambda,
                mu,
                ..base.clone()
            };
            runs.push((format!("lambda{lambda}_mu{mu}"), config));
        }
    }
    runs
}

/// All eight on/off combinations of end-to-end backbone training,
/// positional encoding and concept mining.
pub fn ablation_grid(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let mut runs = Vec::new();
    for e2e in [true, false] {
        for pe in [true, false] {
            for ccm in [true, false] {
                let config = TrainConfig {
                    e2e,
                    pe,
                    ccm,
                    ..base.clone()
                };
                let flag = |b: bool| if b { "on" } else { "off" };
                runs.push((format!("e2e-{}_pe-{}_ccm-{}", flag(e2e), flag(pe), flag(ccm)), config));
            }
        }
    }
    runs
}
