//! Training, inference, sweeps and data handling.

mod checkpoint;
mod config;
mod data;
pub mod diagnostics;
mod infer;
mod optim;
mod sweep;
mod synthetic;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{Precision, TrainConfig};
pub use data::{load_dataset, read_translations, write_translations, DatasetManifest, ManifestEntry, Sample};
pub use infer::{evaluate_manifest, Translator};
pub use optim::{clip_grad_norm, global_norm, lr_schedule, AdamW, AdamWState};
pub use sweep::{ablation_grid, loss_weight_grid, run_grid, RunSummary, DEFAULT_LAMBDAS};
pub use synthetic::{generate_synthetic, synthesize, SyntheticSpec};
pub use train::{mine_anchors, CcmProbe, StepRecord, Trainer};

use crate::{Error, Result};

/// Environment variable fixing the number of worker threads.
pub const THREADS_ENV: &str = "SLT_THREADS";

/// A pool sized by `SLT_THREADS`, or by the number of cores when unset.
/// Results never depend on the size.
pub(crate) fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}
