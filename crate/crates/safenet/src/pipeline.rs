//! High-level plumbing from raw recordings to a trained, evaluated
//! model: window a cohort, split/standardize, and run the full training
//! protocol with one call each. The CLI is a thin shell over this
//! module, so library users get the exact same pipeline.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::dsp::{
    preprocess_recording, segment_windows, window_params, NormStats, RawRecording,
    WindowedDataset,
};
use crate::error::{Error, Result};
use crate::model::SafeNet;
use crate::train::{
    apply_stats, evaluate, fit, fit_stats, split, FitResult, MetricReport, SplitSpec,
};

/// Preprocesses every recording (notch + high-pass, angle resampling)
/// and cuts it into standard windows — 100 ms length, 16 ms step at the
/// recording's own sEMG rate — keeping subject labels. Per-recording
/// datasets are concatenated in the order given, so a one-recording-
/// per-subject cohort yields contiguous subject runs ready for
/// splitting.
pub fn window_cohort(recordings: &[RawRecording]) -> Result<WindowedDataset> {
    if recordings.is_empty() {
        return Err(Error::EmptyInput("cohort windowing".into()));
    }
    let mut parts = Vec::with_capacity(recordings.len());
    for rec in recordings {
        let (semg, angles) = preprocess_recording(rec)?;
        let (len, step) = window_params(rec.fs_emg);
        parts.push(segment_windows(&semg, &angles, rec.subject_id, len, step)?);
    }
    WindowedDataset::concat(&parts)
}

/// The three standardized partitions plus the statistics that produced
/// them (fitted on the training partition only).
#[derive(Clone, Debug)]
pub struct PreparedSplits {
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
    pub stats: NormStats,
}

/// Splits per subject, fits standardization on the training partition,
/// and applies it to all three partitions.
pub fn prepare_splits(ds: &WindowedDataset, spec: &SplitSpec) -> Result<PreparedSplits> {
    let (tr, va, te) = split(ds, spec)?;
    let stats = fit_stats(&tr)?;
    Ok(PreparedSplits {
        train: apply_stats(&tr, &stats)?,
        val: apply_stats(&va, &stats)?,
        test: apply_stats(&te, &stats)?,
        stats,
    })
}

/// A finished training run: the fitted network, its epoch history, the
/// held-out metric report, and the statistics needed to feed the model
/// new data.
pub struct RunOutcome {
    pub net: SafeNet,
    pub fit: FitResult,
    pub test_report: MetricReport,
    pub stats: NormStats,
}

/// Full protocol on an already-windowed cohort: split → standardize →
/// seed-derived initialization → fit → evaluate on the held-out
/// partition. Epoch progress lines go to `log`.
pub fn run_training(
    ds: &WindowedDataset,
    cfg: &RunConfig,
    log: &mut dyn Write,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let splits = prepare_splits(ds, &cfg.split)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut net = SafeNet::init(&cfg.model, &mut rng)?;
    let fit_result = fit(
        &mut net,
        &splits.train,
        &splits.val,
        &cfg.train,
        cfg.use_safd,
        log,
    )?;
    let test_report = evaluate(
        &net,
        &splits.test,
        &splits.stats,
        cfg.train.batch_size,
        cfg.use_safd,
    )?;
    Ok(RunOutcome {
        net,
        fit: fit_result,
        test_report,
        stats: splits.stats,
    })
}
