//! Regression and identity metrics over a windowed test partition:
//! per-joint RMSE/MAE/PCC/R² in original degree units plus argmax
//! identity accuracy.

use std::fmt;

use crate::attention::AttentionMode;
use crate::diffcore::{Tape, Tensor};
use crate::dsp::{NormStats, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::SafeNet;

/// One joint's regression quality. Correlation and R² are undefined
/// when the relevant variance vanishes; those cases are reported as
/// absent rather than coerced to a number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub pcc: Option<f64>,
    pub r2: Option<f64>,
}

/// Full evaluation summary in degree units.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub per_joint: Vec<JointMetrics>,
    pub mean_rmse: f64,
    pub mean_mae: f64,
    /// Present only when every joint has a defined correlation.
    pub mean_pcc: Option<f64>,
    /// Present only when every joint has a defined R².
    pub mean_r2: Option<f64>,
    /// Fraction of windows whose argmax logit names the true subject.
    pub identity_accuracy: f64,
    pub n_windows: usize,
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "undefined".into(),
        };
        writeln!(f, "windows evaluated: {}", self.n_windows)?;
        for (j, m) in self.per_joint.iter().enumerate() {
            writeln!(
                f,
                "joint {j}: rmse {:.4} deg, mae {:.4} deg, pcc {}, r2 {}",
                m.rmse,
                m.mae,
                opt(m.pcc),
                opt(m.r2)
            )?;
        }
        writeln!(
            f,
            "mean: rmse {:.4} deg, mae {:.4} deg, pcc {}, r2 {}",
            self.mean_rmse,
            self.mean_mae,
            opt(self.mean_pcc),
            opt(self.mean_r2)
        )?;
        write!(f, "identity accuracy: {:.4}", self.identity_accuracy)
    }
}

/// Per-joint metrics from already-denormalized prediction/target
/// columns, concatenated over the whole test stream.
fn joint_metrics(pred: &[f64], target: &[f64]) -> JointMetrics {
    let n = pred.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    for (p, t) in pred.iter().zip(target) {
        se += (p - t) * (p - t);
        ae += (p - t).abs();
    }
    let rmse = (se / n).sqrt();
    let mae = ae / n;

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / n;
    let (mp, mt) = (mean(pred), mean(target));
    let mut cov = 0.0;
    let mut var_p = 0.0;
    let mut var_t = 0.0;
    for (p, t) in pred.iter().zip(target) {
        cov += (p - mp) * (t - mt);
        var_p += (p - mp) * (p - mp);
        var_t += (t - mt) * (t - mt);
    }
    let pcc = if var_p > 0.0 && var_t > 0.0 {
        Some(cov / (var_p.sqrt() * var_t.sqrt()))
    } else {
        None
    };
    let r2 = if var_t > 0.0 { Some(1.0 - se / var_t) } else { None };
    JointMetrics { rmse, mae, pcc, r2 }
}

fn mean_of(parts: &[JointMetrics], f: impl Fn(&JointMetrics) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = parts.iter().filter_map(&f).collect();
    if vals.len() == parts.len() {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    } else {
        None
    }
}

/// Builds a report from standardized predictions/targets plus the
/// statistics needed to return to degrees.
pub fn report_from_predictions(
    pred_std: &Tensor,
    target_std: &Tensor,
    logits: &Tensor,
    labels: &[usize],
    stats: &NormStats,
) -> Result<MetricReport> {
    pred_std.check_same_shape(target_std, "metric predictions")?;
    let n = pred_std.dim(0);
    if n == 0 {
        return Err(Error::EmptyInput("metric computation".into()));
    }
    let joints = pred_std.dim(1);
    let pred = stats.angles.invert(pred_std)?;
    let target = stats.angles.invert(target_std)?;
    let column = |t: &Tensor, j: usize| -> Vec<f64> {
        t.values().iter().skip(j).step_by(joints).copied().collect()
    };
    let per_joint: Vec<JointMetrics> = (0..joints)
        .map(|j| joint_metrics(&column(&pred, j), &column(&target, j)))
        .collect();

    let classes = logits.dim(1);
    let mut correct = 0usize;
    for (i, row) in logits.values().chunks(classes).enumerate() {
        let mut best = 0;
        for (k, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = k;
            }
        }
        if best == labels[i] {
            correct += 1;
        }
    }

    let k = per_joint.len() as f64;
    Ok(MetricReport {
        mean_rmse: per_joint.iter().map(|m| m.rmse).sum::<f64>() / k,
        mean_mae: per_joint.iter().map(|m| m.mae).sum::<f64>() / k,
        mean_pcc: mean_of(&per_joint, |m| m.pcc),
        mean_r2: mean_of(&per_joint, |m| m.r2),
        per_joint,
        identity_accuracy: correct as f64 / n as f64,
        n_windows: n,
    })
}

/// Copies the window rows at `idx` into one [B×L×c] batch with its
/// matching targets and labels.
pub fn gather_batch(
    ds: &WindowedDataset,
    idx: &[usize],
) -> Result<(Tensor, Tensor, Vec<usize>)> {
    let (l, c, n) = (ds.window_len, ds.channels(), ds.joints());
    let mut w = Vec::with_capacity(idx.len() * l * c);
    let mut t = Vec::with_capacity(idx.len() * n);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        if i >= ds.len() {
            return Err(Error::Range {
                what: "batch index".into(),
                value: i as f64,
                limit: format!("< {}", ds.len()),
            });
        }
        w.extend_from_slice(&ds.windows.values()[i * l * c..(i + 1) * l * c]);
        t.extend_from_slice(&ds.targets.values()[i * n..(i + 1) * n]);
        labels.push(ds.labels[i]);
    }
    Ok((
        Tensor::new(w, &[idx.len(), l, c])?,
        Tensor::new(t, &[idx.len(), n])?,
        labels,
    ))
}

/// Runs the model over the whole partition in eval mode and reports
/// metrics in degrees. `use_safd` selects the full model or the
/// encoder-only ablation.
pub fn evaluate(
    net: &SafeNet,
    ds: &WindowedDataset,
    stats: &NormStats,
    batch_size: usize,
    use_safd: bool,
) -> Result<MetricReport> {
    if ds.is_empty() {
        return Err(Error::EmptyInput("evaluation partition".into()));
    }
    if batch_size == 0 {
        return Err(Error::Range {
            what: "evaluation batch size".into(),
            value: 0.0,
            limit: "≥ 1".into(),
        });
    }
    let tape = Tape::inference();
    let n = ds.len();
    let joints = ds.joints();
    let mut pred = Vec::with_capacity(n * joints);
    let mut logit_rows = Vec::new();
    let mut classes = 0;
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let (batch, _, _) = gather_batch(ds, &idx)?;
        let out = net.forward(&tape, &batch, false, AttentionMode::Spiking, use_safd)?;
        pred.extend_from_slice(out.angles.values());
        classes = out.logits.dim(1);
        logit_rows.extend_from_slice(out.logits.values());
        start = end;
    }
    let pred_std = Tensor::new(pred, &[n, joints])?;
    let logits = Tensor::new(logit_rows, &[n, classes])?;
    report_from_predictions(&pred_std, &ds.targets, &logits, &ds.labels, stats)
}
