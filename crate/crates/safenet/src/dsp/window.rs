//! Sliding-window segmentation of aligned sEMG/angle streams.

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Aligned (sEMG window, target angle row, subject label) triples.
#[derive(Clone, Debug)]
pub struct WindowedDataset {
    /// [N × L × c] sEMG windows.
    pub windows: Tensor,
    /// [N × n] angle targets, each aligned to the final sample of its
    /// window.
    pub targets: Tensor,
    /// Subject id per window.
    pub labels: Vec<usize>,
    /// Samples per window.
    pub window_len: usize,
    /// Samples advanced between consecutive windows.
    pub step: usize,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.windows.dim(2)
    }

    pub fn joints(&self) -> usize {
        self.targets.dim(1)
    }

    /// New dataset holding the windows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<WindowedDataset> {
        let (l, c, n) = (self.window_len, self.channels(), self.joints());
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Range {
                what: "window index".into(),
                value: bad as f64,
                limit: format!("< {}", self.len()),
            });
        }
        let mut windows = Vec::with_capacity(idx.len() * l * c);
        let mut targets = Vec::with_capacity(idx.len() * n);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            windows.extend_from_slice(&self.windows.values()[i * l * c..(i + 1) * l * c]);
            targets.extend_from_slice(&self.targets.values()[i * n..(i + 1) * n]);
            labels.push(self.labels[i]);
        }
        Ok(WindowedDataset {
            windows: Tensor::new(windows, &[idx.len(), l, c])?,
            targets: Tensor::new(targets, &[idx.len(), n])?,
            labels,
            window_len: l,
            step: self.step,
        })
    }

    /// Concatenates datasets with identical window geometry.
    pub fn concat(parts: &[WindowedDataset]) -> Result<WindowedDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptyInput("windowed dataset concat".into()))?;
        let (l, c, n) = (first.window_len, first.channels(), first.joints());
        let mut windows = Vec::new();
        let mut targets = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.window_len != l || p.channels() != c || p.joints() != n || p.step != first.step
            {
                return Err(Error::ShapeMismatch {
                    context: "windowed dataset concat".into(),
                    lhs: vec![l, c, n],
                    rhs: vec![p.window_len, p.channels(), p.joints()],
                });
            }
            windows.extend_from_slice(p.windows.values());
            targets.extend_from_slice(p.targets.values());
            labels.extend_from_slice(&p.labels);
        }
        let total = labels.len();
        Ok(WindowedDataset {
            windows: Tensor::new(windows, &[total, l, c])?,
            targets: Tensor::new(targets, &[total, n])?,
            labels,
            window_len: l,
            step: first.step,
        })
    }

    /// Maximal runs of consecutive windows sharing a subject label, as
    /// (subject, start, end-exclusive) triples in storage order.
    pub fn subject_runs(&self) -> Vec<(usize, usize, usize)> {
        let mut runs = Vec::new();
        let mut start = 0;
        for i in 1..=self.len() {
            if i == self.len() || self.labels[i] != self.labels[start] {
                runs.push((self.labels[start], start, i));
                start = i;
            }
        }
        runs
    }
}

/// Window geometry from a sample rate: a 100 ms window advanced in 16 ms
/// steps.
pub fn window_params(fs_hz: f64) -> (usize, usize) {
    (
        (0.100 * fs_hz).round() as usize,
        (0.016 * fs_hz).round() as usize,
    )
}

/// Cuts aligned streams into windows: window k covers sEMG samples
/// [k·step, k·step+L) and its target is the angle row at sample
/// k·step+L−1. Streams must already share one sample rate.
pub fn segment_windows(
    semg: &Tensor,
    angles: &Tensor,
    subject: usize,
    window_len: usize,
    step: usize,
) -> Result<WindowedDataset> {
    if semg.rank() != 2 || angles.rank() != 2 {
        return Err(Error::InvalidArgument(
            "segment_windows expects 2-D [samples × channels] streams".into(),
        ));
    }
    if semg.dim(0) != angles.dim(0) {
        return Err(Error::ShapeMismatch {
            context: "segment_windows stream lengths".into(),
            lhs: semg.shape().to_vec(),
            rhs: angles.shape().to_vec(),
        });
    }
    if window_len == 0 || step == 0 {
        return Err(Error::Range {
            what: "window length / step".into(),
            value: 0.0,
            limit: "> 0".into(),
        });
    }
    let (t, c) = (semg.dim(0), semg.dim(1));
    let n = angles.dim(1);
    if t < window_len {
        return Err(Error::EmptyInput(format!(
            "stream of {t} samples is shorter than one {window_len}-sample window"
        )));
    }
    let count = (t - window_len) / step + 1;
    let mut windows = Vec::with_capacity(count * window_len * c);
    let mut targets = Vec::with_capacity(count * n);
    for k in 0..count {
        let start = k * step;
        windows
            .extend_from_slice(&semg.values()[start * c..(start + window_len) * c]);
        let target_row = start + window_len - 1;
        targets.extend_from_slice(&angles.values()[target_row * n..(target_row + 1) * n]);
    }
    Ok(WindowedDataset {
        windows: Tensor::new(windows, &[count, window_len, c])?,
        targets: Tensor::new(targets, &[count, n])?,
        labels: vec![subject; count],
        window_len,
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn streams(t: usize) -> (Tensor, Tensor) {
        let semg = Tensor::from_fn(&[t, 2], |i| i as f64 * 0.1);
        let angles = Tensor::from_fn(&[t, 3], |i| i as f64);
        (semg, angles)
    }

    #[test]
    fn window_count_matches_formula() {
        let (semg, angles) = streams(500);
        let ds = segment_windows(&semg, &angles, 0, 50, 8).unwrap();
        assert_eq!(ds.len(), (500 - 50) / 8 + 1);
        assert_eq!(ds.len(), 57);
        assert_eq!(ds.windows.shape(), &[57, 50, 2]);
        assert_eq!(ds.targets.shape(), &[57, 3]);
    }

    #[test]
    fn exact_length_stream_gives_one_window() {
        let (semg, angles) = streams(50);
        let ds = segment_windows(&semg, &angles, 1, 50, 8).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels, vec![1]);
    }

    #[test]
    fn targets_align_to_final_window_sample() {
        let (semg, angles) = streams(200);
        let ds = segment_windows(&semg, &angles, 0, 50, 8).unwrap();
        for k in 0..ds.len() {
            let expect = (k * 8 + 49) as f64;
            assert_eq!(
                &ds.targets.values()[k * 3..k * 3 + 3],
                &[expect * 3.0, expect * 3.0 + 1.0, expect * 3.0 + 2.0]
            );
        }
    }

    #[test]
    fn too_short_stream_is_an_error() {
        let (semg, angles) = streams(30);
        assert!(segment_windows(&semg, &angles, 0, 50, 8).is_err());
    }

    #[test]
    fn default_geometry_at_500_hz() {
        assert_eq!(window_params(500.0), (50, 8));
        assert_eq!(window_params(1000.0), (100, 16));
    }

    #[test]
    fn concat_and_runs_track_subjects() {
        let (semg, angles) = streams(100);
        let a = segment_windows(&semg, &angles, 0, 50, 10).unwrap();
        let b = segment_windows(&semg, &angles, 1, 50, 10).unwrap();
        let both = WindowedDataset::concat(&[a.clone(), b]).unwrap();
        assert_eq!(both.len(), 2 * a.len());
        assert_eq!(
            both.subject_runs(),
            vec![(0, 0, a.len()), (1, a.len(), 2 * a.len())]
        );
        let picked = both.select(&[0, a.len()]).unwrap();
        assert_eq!(picked.labels, vec![0, 1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn count_formula_holds_for_random_geometry(
            t in 1usize..400,
            l in 1usize..80,
            step in 1usize..40,
        ) {
            let semg = Tensor::zeros(&[t, 1]);
            let angles = Tensor::zeros(&[t, 1]);
            let res = segment_windows(&semg, &angles, 0, l, step);
            if t < l {
                prop_assert!(res.is_err());
            } else {
                prop_assert_eq!(res.unwrap().len(), (t - l) / step + 1);
            }
        }
    }
}
