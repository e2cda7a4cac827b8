//! Feature-dump export: per-window kinematic and biological feature
//! vectors with subject labels, as delimited text ready for external
//! embedding/visualization tooling.

use std::path::Path;

use crate::attention::AttentionMode;
use crate::data::manifest::write_table;
use crate::diffcore::{Tape, Tensor};
use crate::dsp::WindowedDataset;
use crate::error::{Error, Result};
use crate::model::SafeNet;
use crate::train::gather_batch;

/// Runs the decomposition over `ds` in eval mode and writes one row per
/// window: the kinematic feature, the biological feature, then the
/// subject label (2·d + 1 columns). Returns the number of rows.
pub fn export_features(
    net: &SafeNet,
    ds: &WindowedDataset,
    path: &Path,
    batch_size: usize,
) -> Result<usize> {
    if ds.is_empty() {
        return Err(Error::EmptyInput("feature export".into()));
    }
    if batch_size == 0 {
        return Err(Error::Range {
            what: "export batch size".into(),
            value: 0.0,
            limit: "≥ 1".into(),
        });
    }
    let tape = Tape::inference();
    let n = ds.len();
    let d = net.cfg.embed.d_model;
    let mut rows = Vec::with_capacity(n * (2 * d + 1));
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let (batch, _, labels) = gather_batch(ds, &idx)?;
        let out = net.forward(&tape, &batch, false, AttentionMode::Spiking, true)?;
        let dec = out
            .decomp
            .expect("decomposition requested, so it must be present");
        for (i, &label) in labels.iter().enumerate() {
            rows.extend_from_slice(&dec.f_k.values()[i * d..(i + 1) * d]);
            rows.extend_from_slice(&dec.f_b.values()[i * d..(i + 1) * d]);
            rows.push(label as f64);
        }
        start = end;
    }
    let mut header: Vec<String> = (0..d).map(|i| format!("fk_{i}")).collect();
    header.extend((0..d).map(|i| format!("fb_{i}")));
    header.push("label".into());
    write_table(path, &header, &Tensor::new(rows, &[n, 2 * d + 1])?)?;
    Ok(n)
}
