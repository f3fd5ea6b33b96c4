//! End-to-end experiments: batch attacks, transfer matrices, the top-k
//! precision sweep, the prefix-word experiment, dataset export/import and
//! reports.
//!
//! Per-sample jobs run on a rayon pool. Every job owns clones of the models
//! it touches and derives its seed from its position, so results do not
//! depend on the worker count.

pub mod batch;
pub mod config;
pub mod curves;
pub mod dataset;
pub mod prefix;
pub mod report;
pub mod sweep;
pub mod transfer;

pub use batch::{config_fingerprint, run_attack_batch, AdversarialExample, BatchOutcome, LossTrace, SampleFailure};
pub use config::{ExperimentConfig, ModelSpec};
pub use curves::{loss_curves, LossCurves, LossSeries};
pub use dataset::{export_dataset, import_dataset, read_manifest, ManifestRecord};
pub use prefix::{off_diagonal_stats, run_prefix_experiment, OffDiagonalStats, PrefixConfig, PrefixMatrix};
pub use report::{render_report, render_text, ReportData, ReportFormat};
pub use sweep::{run_precision_sweep, PrecisionCurve, SweepConfig};
pub use transfer::{evaluate_transfer, CellRates, TranscriptionRecord, TransferCell, TransferMatrix};

use crate::error::{Error, Result};

/// Thread pool with `workers` threads, or one per core when 0.
pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}
