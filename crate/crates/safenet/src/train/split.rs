//! Per-subject, contiguous-in-time partitioning into train/val/test.
//! Adjacent windows overlap heavily, so shuffled splits would leak
//! nearly identical samples across partitions; keeping each subject's
//! stream contiguous prevents that.

use serde::{Deserialize, Serialize};

use crate::dsp::{ChannelStats, NormStats, WindowedDataset};
use crate::error::{Error, Result};

/// Ratio specification; the defaults carve each subject's stream into
/// 3:1:1 train/val/test in recording order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 3,
            val: 1,
            test: 1,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return Err(Error::Split(
                "every split ratio must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Splits each subject's contiguous window stream by the given ratios:
/// the earliest `train/total` of its windows, then `val/total`, then the
/// remainder. A subject contributing fewer windows than ratio units
/// cannot populate all three partitions and is an error.
pub fn split(
    ds: &WindowedDataset,
    spec: &SplitSpec,
) -> Result<(WindowedDataset, WindowedDataset, WindowedDataset)> {
    spec.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyInput("windowed dataset split".into()));
    }
    let total = spec.total();
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for (subject, start, end) in ds.subject_runs() {
        let count = end - start;
        if count < total {
            return Err(Error::Split(format!(
                "subject {subject} has only {count} windows; \
                 {total} are needed for a {}:{}:{} split",
                spec.train, spec.val, spec.test
            )));
        }
        let n_train = count * spec.train / total;
        let n_val = count * spec.val / total;
        tr.extend(start..start + n_train);
        va.extend(start + n_train..start + n_train + n_val);
        te.extend(start + n_train + n_val..end);
    }
    Ok((ds.select(&tr)?, ds.select(&va)?, ds.select(&te)?))
}

/// Fits standardization statistics on one (training) partition: sEMG
/// stats per channel over every sample of every window, angle stats per
/// joint over the window targets.
pub fn fit_stats(train: &WindowedDataset) -> Result<NormStats> {
    Ok(NormStats {
        semg: ChannelStats::fit(&train.windows)?,
        angles: ChannelStats::fit(&train.targets)?,
    })
}

/// Applies fitted statistics to a partition, standardizing both the
/// sEMG windows and the angle targets.
pub fn apply_stats(ds: &WindowedDataset, stats: &NormStats) -> Result<WindowedDataset> {
    Ok(WindowedDataset {
        windows: stats.semg.apply(&ds.windows)?,
        targets: stats.angles.apply(&ds.targets)?,
        labels: ds.labels.clone(),
        window_len: ds.window_len,
        step: ds.step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    /// Dataset with `per_subject` windows for each listed subject, with
    /// values that encode (subject, position) so rows stay identifiable.
    fn synthetic(subjects: &[usize], per_subject: usize) -> WindowedDataset {
        let (l, c, n) = (4, 2, 1);
        let mut labels = Vec::new();
        for &s in subjects {
            labels.extend(std::iter::repeat(s).take(per_subject));
        }
        let total = labels.len();
        let windows = Tensor::from_fn(&[total, l, c], |i| {
            let w = i / (l * c);
            labels[w] as f64 * 1000.0 + w as f64
        });
        let targets = Tensor::from_fn(&[total, n], |i| i as f64 * 0.5);
        WindowedDataset {
            windows,
            targets,
            labels,
            window_len: l,
            step: 2,
        }
    }

    #[test]
    fn hundred_windows_split_sixty_twenty_twenty() {
        let ds = synthetic(&[0, 1], 100);
        let (tr, va, te) = split(&ds, &SplitSpec::default()).unwrap();
        assert_eq!(tr.len(), 120);
        assert_eq!(va.len(), 40);
        assert_eq!(te.len(), 40);
        for part in [&tr, &va, &te] {
            // Both subjects appear in every partition.
            let subjects: std::collections::BTreeSet<_> =
                part.labels.iter().copied().collect();
            assert_eq!(subjects.len(), 2);
        }
    }

    #[test]
    fn partitions_are_disjoint_and_cover_everything() {
        let ds = synthetic(&[0, 1, 2], 23);
        let (tr, va, te) = split(&ds, &SplitSpec::default()).unwrap();
        assert_eq!(tr.len() + va.len() + te.len(), ds.len());
        // Window identity is embedded in the first value of each window.
        let ids = |p: &WindowedDataset| -> std::collections::BTreeSet<u64> {
            (0..p.len())
                .map(|i| p.windows.values()[i * 4 * 2].to_bits())
                .collect()
        };
        let (a, b, c) = (ids(&tr), ids(&va), ids(&te));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        assert_eq!(a.len() + b.len() + c.len(), ds.len());
    }

    #[test]
    fn splits_keep_recording_order_within_each_subject() {
        let ds = synthetic(&[0], 25);
        let (tr, va, te) = split(&ds, &SplitSpec::default()).unwrap();
        assert_eq!(tr.len(), 15);
        assert_eq!(va.len(), 5);
        assert_eq!(te.len(), 5);
        // Train holds the earliest windows, test the latest.
        let first = |p: &WindowedDataset, i: usize| p.windows.values()[i * 8];
        assert_eq!(first(&tr, 0), 0.0);
        assert_eq!(first(&va, 0), 15.0);
        assert_eq!(first(&te, 0), 20.0);
        assert_eq!(first(&te, 4), 24.0);
    }

    #[test]
    fn undersized_subject_is_an_error() {
        let ds = synthetic(&[0, 1], 4);
        let err = split(&ds, &SplitSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Split(_)), "got {err:?}");
    }

    #[test]
    fn train_statistics_standardize_the_training_partition() {
        let ds = synthetic(&[0, 1], 30);
        let (tr, va, _) = split(&ds, &SplitSpec::default()).unwrap();
        let stats = fit_stats(&tr).unwrap();
        let z_tr = apply_stats(&tr, &stats).unwrap();
        let z_va = apply_stats(&va, &stats).unwrap();
        let mean0: f64 = z_tr.windows.values().iter().step_by(2).sum::<f64>()
            / (z_tr.windows.numel() / 2) as f64;
        assert!(mean0.abs() < 1e-9, "train mean {mean0}");
        // Validation keeps whatever offset it has under train stats.
        assert_eq!(z_va.len(), va.len());
        assert_eq!(z_va.labels, va.labels);
    }
}
