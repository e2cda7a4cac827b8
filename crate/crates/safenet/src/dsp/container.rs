//! Binary container for windowed datasets plus a sidecar stats file.
//!
//! Layout (all integers little-endian): 4 magic bytes `SFW1`, then u32
//! fields N (windows), L (samples per window), c (sEMG channels),
//! n (joints), step (stride in samples), followed by float32 payloads
//! for windows [N·L·c], targets [N·n], and subject labels [N].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::dsp::window::WindowedDataset;
use crate::dsp::zscore::ChannelStats;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SFW1";

/// Per-channel standardization statistics for both streams, fitted on
/// the training partition only.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NormStats {
    pub semg: ChannelStats,
    pub angles: ChannelStats,
}

/// Writes a windowed dataset to `path` in the SFW1 layout.
pub fn save_windows(path: &Path, ds: &WindowedDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for dim in [
        ds.len(),
        ds.window_len,
        ds.channels(),
        ds.joints(),
        ds.step,
    ] {
        w.write_u32::<LittleEndian>(u32::try_from(dim).map_err(|_| {
            Error::Contract(format!("dataset dimension {dim} exceeds u32 container field"))
        })?)?;
    }
    for &v in ds.windows.values() {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    for &v in ds.targets.values() {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    for &label in &ds.labels {
        w.write_f32::<LittleEndian>(label as f32)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset previously written by [`save_windows`].
pub fn load_windows(path: &Path) -> Result<WindowedDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Contract(format!(
            "{} is not an SFW1 container (magic {:?})",
            path.display(),
            magic
        )));
    }
    let n_windows = r.read_u32::<LittleEndian>()? as usize;
    let window_len = r.read_u32::<LittleEndian>()? as usize;
    let channels = r.read_u32::<LittleEndian>()? as usize;
    let joints = r.read_u32::<LittleEndian>()? as usize;
    let step = r.read_u32::<LittleEndian>()? as usize;
    let read_block = |r: &mut BufReader<File>, len: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(r.read_f32::<LittleEndian>()? as f64);
        }
        Ok(out)
    };
    let windows = read_block(&mut r, n_windows * window_len * channels)?;
    let targets = read_block(&mut r, n_windows * joints)?;
    let labels = read_block(&mut r, n_windows)?
        .into_iter()
        .map(|v| v as usize)
        .collect();
    Ok(WindowedDataset {
        windows: Tensor::new(windows, &[n_windows, window_len, channels])?,
        targets: Tensor::new(targets, &[n_windows, joints])?,
        labels,
        window_len,
        step,
    })
}

/// Writes standardization stats next to a container as readable text.
pub fn save_stats(path: &Path, stats: &NormStats) -> Result<()> {
    let text = toml::to_string_pretty(stats)
        .map_err(|e| Error::Config(format!("could not serialize stats: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads stats written by [`save_stats`].
pub fn load_stats(path: &Path) -> Result<NormStats> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| {
        Error::Config(format!("could not parse stats file {}: {e}", path.display()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::window::segment_windows;

    fn sample_dataset() -> WindowedDataset {
        let semg = Tensor::from_fn(&[120, 3], |i| (i as f64 * 0.37).sin());
        let angles = Tensor::from_fn(&[120, 2], |i| i as f64 * 0.5 - 10.0);
        let mut ds = segment_windows(&semg, &angles, 0, 40, 9).unwrap();
        ds.labels = (0..ds.len()).map(|i| i % 3).collect();
        ds
    }

    #[test]
    fn round_trip_preserves_contents_to_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.sfw");
        let ds = sample_dataset();
        save_windows(&path, &ds).unwrap();
        let back = load_windows(&path).unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.window_len, ds.window_len);
        assert_eq!(back.step, ds.step);
        assert_eq!(back.labels, ds.labels);
        for (a, b) in ds.windows.values().iter().zip(back.windows.values()) {
            assert!((a - b).abs() <= (*a as f32).abs() as f64 * 1e-7 + 1e-7);
        }
        for (a, b) in ds.targets.values().iter().zip(back.targets.values()) {
            assert!((a - b).abs() <= 1e-4);
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.sfw");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        let err = load_windows(&path).unwrap_err();
        assert!(err.to_string().contains("SFW1"));
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.sfw");
        save_windows(&path, &sample_dataset()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_windows(&path).is_err());
    }

    #[test]
    fn stats_round_trip_through_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.stats.toml");
        let semg = Tensor::from_fn(&[50, 3], |i| (i % 7) as f64);
        let angles = Tensor::from_fn(&[50, 2], |i| (i % 5) as f64 * 3.0);
        let stats = NormStats {
            semg: ChannelStats::fit(&semg).unwrap(),
            angles: ChannelStats::fit(&angles).unwrap(),
        };
        save_stats(&path, &stats).unwrap();
        let back = load_stats(&path).unwrap();
        for (a, b) in stats.semg.mean.iter().zip(&back.semg.mean) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in stats.angles.std.iter().zip(&back.angles.std) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
