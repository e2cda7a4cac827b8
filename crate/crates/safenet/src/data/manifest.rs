//! Dataset manifest plus delimited-text recording I/O. A manifest lists
//! one entry per recording; each entry's `path` is a stem relative to
//! the manifest directory, with the sEMG stream in `<stem>.emg.csv` and
//! the joint-angle stream in `<stem>.ang.csv`, both comma-separated
//! with one header row.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::dsp::RawRecording;
use crate::error::{Error, Result};

/// One recording's bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// File stem relative to the manifest's directory.
    pub path: String,
    pub subject_id: usize,
    pub fs_emg: f64,
    pub fs_ang: f64,
    pub condition: String,
}

/// Channel naming and the recording list for one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub channel_names: Vec<String>,
    pub joint_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.channel_names.is_empty() || self.joint_names.is_empty() {
            return Err(Error::Config(
                "manifest needs at least one channel and one joint name".into(),
            ));
        }
        if self.entries.is_empty() {
            return Err(Error::Config("manifest lists no recordings".into()));
        }
        let mut ids: Vec<usize> = self.entries.iter().map(|e| e.subject_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.first() != Some(&0) || *ids.last().unwrap() != ids.len() - 1 {
            return Err(Error::Config(format!(
                "subject ids must be contiguous from 0, got {ids:?}"
            )));
        }
        Ok(())
    }

    /// Number of distinct subjects.
    pub fn n_subjects(&self) -> usize {
        let mut ids: Vec<usize> = self.entries.iter().map(|e| e.subject_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

pub fn save_manifest(path: &Path, m: &DatasetManifest) -> Result<()> {
    m.validate()?;
    let text = toml::to_string_pretty(m)
        .map_err(|e| Error::Config(format!("cannot encode manifest: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("cannot read manifest: {e}"),
    })?;
    let m: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("malformed manifest: {e}"),
    })?;
    m.validate()?;
    Ok(m)
}

/// Writes a [rows × cols] table as comma-separated text with a header.
/// Values use Rust's shortest round-trip float formatting, so reading
/// the file back reproduces them bit-exactly.
pub fn write_table(path: &Path, header: &[String], rows: &Tensor) -> Result<()> {
    if rows.rank() != 2 || rows.dim(1) != header.len() {
        return Err(Error::ShapeMismatch {
            context: "table write".into(),
            lhs: vec![header.len()],
            rhs: rows.shape().to_vec(),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    let c = rows.dim(1);
    for row in rows.values().chunks(c) {
        let mut line = String::new();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format!("{v}"));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a comma-separated table back: header names plus a [rows × cols]
/// tensor. Every malformation is reported with its line number.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Tensor)> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let file = File::open(path).map_err(|e| err(0, format!("cannot open: {e}")))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header: Vec<String> = match lines.next() {
        Some((_, Ok(l))) if !l.trim().is_empty() => {
            l.split(',').map(|s| s.trim().to_string()).collect()
        }
        Some((_, Ok(_))) => return Err(err(1, "empty header row".into())),
        Some((_, Err(e))) => return Err(err(1, e.to_string())),
        None => return Err(err(0, "file is empty".into())),
    };
    let cols = header.len();
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (i, line) in lines {
        let line = line.map_err(|e| err(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols {
            return Err(err(
                i + 1,
                format!("expected {cols} columns, found {}", cells.len()),
            ));
        }
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                err(
                    i + 1,
                    format!("column {} ({}) is not numeric: {cell:?}", j, header[j]),
                )
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(err(1, "table has a header but no data rows".into()));
    }
    Ok((header, Tensor::new(values, &[rows, cols])?))
}

fn stream_paths(manifest_dir: &Path, entry: &ManifestEntry) -> (PathBuf, PathBuf) {
    (
        manifest_dir.join(format!("{}.emg.csv", entry.path)),
        manifest_dir.join(format!("{}.ang.csv", entry.path)),
    )
}

fn check_header(path: &Path, got: &[String], want: &[String]) -> Result<()> {
    if got.len() != want.len() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected {} columns, found {}", want.len(), got.len()),
        });
    }
    for (j, (g, w)) in got.iter().zip(want).enumerate() {
        if g != w {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("column {j} is named {g:?}, manifest says {w:?}"),
            });
        }
    }
    Ok(())
}

/// Loads one manifest entry's two streams into a validated recording.
pub fn load_recording(
    manifest_dir: &Path,
    m: &DatasetManifest,
    entry: &ManifestEntry,
) -> Result<RawRecording> {
    let (emg_path, ang_path) = stream_paths(manifest_dir, entry);
    let (emg_header, semg) = read_table(&emg_path)?;
    check_header(&emg_path, &emg_header, &m.channel_names)?;
    let (ang_header, angles) = read_table(&ang_path)?;
    check_header(&ang_path, &ang_header, &m.joint_names)?;
    let rec = RawRecording {
        semg,
        angles,
        subject_id: entry.subject_id,
        condition: entry.condition.clone(),
        fs_emg: entry.fs_emg,
        fs_ang: entry.fs_ang,
    };
    rec.validate()?;
    Ok(rec)
}

/// Writes one recording's two streams next to the manifest.
pub fn save_recording(
    manifest_dir: &Path,
    m: &DatasetManifest,
    entry: &ManifestEntry,
    rec: &RawRecording,
) -> Result<()> {
    rec.validate()?;
    let (emg_path, ang_path) = stream_paths(manifest_dir, entry);
    write_table(&emg_path, &m.channel_names, &rec.semg)?;
    write_table(&ang_path, &m.joint_names, &rec.angles)?;
    Ok(())
}
