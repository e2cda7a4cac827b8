//! Spike-aware cost accounting: analytic parameter and dense-operation
//! counts from layer shapes, instrumented effective multiply–accumulate
//! measurement on real samples, single-worker latency benchmarking, and
//! a coefficient-4.6 power estimate reported both verbatim and under a
//! picojoule-per-operation energy reading.

use std::fmt;
use std::sync::Mutex;
use std::time::Instant;

use crate::attention::{AttentionMode, EmbedConfig};
use crate::diffcore::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::tcn::TCNConfig;
use crate::model::{checkpoint_bytes, SAFENetConfig, SafeNet};

/// Coefficient of the verbatim power formula P = 4.6 · MAC / T.
pub const POWER_COEFF: f64 = 4.6;
/// Energy per multiply–accumulate under the physical reading of the
/// same coefficient: 4.6 pJ.
pub const MAC_ENERGY_J: f64 = 4.6e-12;
/// Forward passes discarded before latency timing starts.
pub const WARMUP_RUNS: usize = 3;
/// Smallest accepted repeat count for a latency measurement.
pub const MIN_LATENCY_REPEATS: usize = 10;

/// Dense floating-point operations of a linear map [m×k]·[k×n].
pub fn flops_linear(m: u64, k: u64, n: u64) -> u64 {
    2 * m * k * n
}

/// Dense floating-point operations of a length-preserving 1-D
/// convolution over `t` positions.
pub fn flops_conv1d(t: u64, k_w: u64, c_in: u64, c_out: u64) -> u64 {
    2 * t * k_w * c_in * c_out
}

/// Dense floating-point operations of one attention score + apply pair
/// over a `t`-step sequence of width `d`: 2·t²·d each.
pub fn flops_attention_dense(t: u64, d: u64) -> u64 {
    2 * (2 * t * t * d)
}

/// Dense operation count split by how the spiking path treats each
/// stage: score products can be elided by binary queries, convolutions
/// scale linearly with the window, and everything else stays dense.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopCount {
    /// Dense Q·Kᵀ score products — the stage the spike gather replaces.
    pub attention_scores: u64,
    /// Value-embedding and temporal-stack convolutions.
    pub convolutions: u64,
    /// Projections, softmax, apply, norms, gates, heads, and
    /// element-wise glue, each counted at one operation per element.
    pub other: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.attention_scores + self.convolutions + self.other
    }
}

impl std::ops::Add for FlopCount {
    type Output = FlopCount;
    fn add(self, rhs: FlopCount) -> FlopCount {
        FlopCount {
            attention_scores: self.attention_scores + rhs.attention_scores,
            convolutions: self.convolutions + rhs.convolutions,
            other: self.other + rhs.other,
        }
    }
}

/// Value embedding: same-padded convolution, bias, positional table.
fn embed_stage(cfg: &EmbedConfig, t: u64) -> FlopCount {
    let (c, d, k) = (cfg.c_in as u64, cfg.d_model as u64, cfg.conv_kernel as u64);
    FlopCount {
        attention_scores: 0,
        convolutions: flops_conv1d(t, k, c, d),
        other: 2 * t * d,
    }
}

/// One attention block on a `t`-step sequence: four projections, query
/// normalization and firing, dense-counted scores, scale + softmax,
/// apply, and the residual add.
fn attention_stage(t: u64, d: u64) -> FlopCount {
    FlopCount {
        attention_scores: 2 * t * t * d,
        convolutions: 0,
        other: 4 * flops_linear(t, d, d) + 2 * t * d + 2 * t * t + 2 * t * t * d + t * d,
    }
}

/// The causal convolution stack: two biased convolutions per dilation
/// level with a rectifier between them and an optional residual add.
fn temporal_stage(cfg: &TCNConfig, t: u64) -> FlopCount {
    let (d, k) = (cfg.channels as u64, cfg.kernel as u64);
    let blocks = cfg.dilations.len() as u64;
    let residual = if cfg.residual { t * d } else { 0 };
    FlopCount {
        attention_scores: 0,
        convolutions: blocks * 2 * flops_conv1d(t, k, d, d),
        other: blocks * (2 * t * d + t * d + residual),
    }
}

/// Gating network of one decomposition stage: two biased linear layers
/// with a rectifier between them and a sigmoid output.
fn gate_stage(d: u64, hidden: u64) -> u64 {
    flops_linear(1, d, hidden) + 2 * hidden + flops_linear(1, hidden, d) + 2 * d
}

/// Dense operation count of one forward pass on a `window_len`-sample
/// window, split by stage kind. Pure shape arithmetic — weights never
/// influence the count, and degenerate geometries simply contribute
/// nothing.
pub fn count_flops_detailed(cfg: &SAFENetConfig, window_len: usize) -> FlopCount {
    let (t, d) = (window_len as u64, cfg.embed.d_model as u64);
    let mut total = embed_stage(&cfg.embed, t);
    for _ in 0..cfg.encoder_layers {
        total = total + attention_stage(t, d) + temporal_stage(&cfg.tcn, t);
    }
    // Mean pooling over time.
    total.other += t * d;
    for _ in 0..cfg.safd.iterations {
        total = total + attention_stage(1, d);
        total.other += gate_stage(d, cfg.safd.weight_hidden as u64) + 2 * d;
    }
    // Summing the gated parts into the kinematic feature.
    total.other += (cfg.safd.iterations as u64).saturating_sub(1) * d;
    total.other += flops_linear(1, d, cfg.n_joints as u64)
        + cfg.n_joints as u64
        + flops_linear(1, d, cfg.n_subjects as u64)
        + cfg.n_subjects as u64;
    total
}

/// Dense floating-point operation count per sample from per-stage
/// closed forms: linear layers cost 2·m·k·n, convolutions
/// 2·t·k_w·c_in·c_out, attention scores and apply are counted dense at
/// 2·t²·d each, and softmax, normalization, firing, and other
/// element-wise stages cost one operation per element. For the default
/// configuration on a 50-sample window the stages sum to 102,400
/// (embedding) + 2 × 7,233,800 (encoder layers) + 3,200 (pooling) +
/// 83,524 (decomposition) + 903 (heads) = 14,657,627 operations.
pub fn count_flops(cfg: &SAFENetConfig, window_len: usize) -> u64 {
    count_flops_detailed(cfg, window_len).total()
}

/// Element count of one tensor collection — the model-size column of a
/// cost sheet.
pub fn count_tensor_params<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> u64 {
    tensors.into_iter().map(|t| t.numel() as u64).sum()
}

/// Learnable scalar count of the whole network. Structure-only: the
/// count covers every learnable slot whether or not a slot currently
/// carries gradients, and never depends on the weight values.
pub fn count_params(net: &SafeNet) -> u64 {
    let params = net.named_params();
    count_tensor_params(params.iter().map(|(_, t)| t))
}

/// Spike-aware multiply–accumulate measurement of one instrumented run.
#[derive(Clone, Copy, Debug)]
pub struct MacReport {
    /// Measured score-side additions over the whole batch: one per
    /// spike per key column, active queries only.
    pub score_additions: u64,
    /// Measured lazy-row fill additions (column mean of V) over the
    /// whole batch.
    pub lazy_additions: u64,
    /// Analytic cost of every non-spiking stage per sample: half the
    /// dense operation count, since one multiply–accumulate covers a
    /// multiply and an add.
    pub dense_macs_per_sample: u64,
    /// Samples in the instrumented batch.
    pub n_samples: usize,
}

impl MacReport {
    /// Mean spike-aware multiply–accumulate count per sample: the
    /// analytic dense part plus the measured additions averaged over
    /// the batch (rounded up).
    pub fn per_sample(&self) -> u64 {
        self.dense_macs_per_sample
            + (self.score_additions + self.lazy_additions).div_ceil(self.n_samples as u64)
    }
}

/// Runs the network once in evaluation mode on `batch` ([t×c] or
/// [B×t×c]) with the spiking path instrumented, and combines the
/// measured score/lazy additions with the analytic cost of the
/// non-spiking stages.
pub fn effective_macs(net: &SafeNet, batch: &Tensor) -> Result<MacReport> {
    let (n, t) = match batch.rank() {
        2 => (1, batch.dim(0)),
        3 => (batch.dim(0), batch.dim(1)),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "effective_macs expects [t×c] or [B×t×c], got shape {:?}",
                batch.shape()
            )))
        }
    };
    if n == 0 || t == 0 {
        return Err(Error::EmptyInput("effective_macs on an empty batch".into()));
    }
    let tape = Tape::inference();
    net.forward(&tape, batch, false, AttentionMode::Spiking, true)?;
    let detailed = count_flops_detailed(&net.cfg, t);
    Ok(MacReport {
        score_additions: tape.counters.attn_score_adds.get(),
        lazy_additions: tape.counters.attn_lazy_adds.get(),
        dense_macs_per_sample: (detailed.total() - detailed.attention_scores) / 2,
        n_samples: n,
    })
}

/// The verbatim power formula P = 4.6 · MAC / T. The coefficient is
/// applied with no unit conversion, so the result does not reduce to
/// watts under any standard reading; [`power_energy_model`] holds the
/// physically consistent variant.
pub fn power_estimate(macs: u64, latency_s: f64) -> Result<f64> {
    if !(latency_s > 0.0) {
        return Err(Error::Range {
            what: "latency".into(),
            value: latency_s,
            limit: "> 0 seconds".into(),
        });
    }
    Ok(POWER_COEFF * macs as f64 / latency_s)
}

/// Power in watts under the 4.6 pJ-per-multiply-accumulate energy
/// reading of the same coefficient: P = 4.6e-12 J · MAC / T.
pub fn power_energy_model(macs: u64, latency_s: f64) -> Result<f64> {
    if !(latency_s > 0.0) {
        return Err(Error::Range {
            what: "latency".into(),
            value: latency_s,
            limit: "> 0 seconds".into(),
        });
    }
    Ok(MAC_ENERGY_J * macs as f64 / latency_s)
}

/// Wall-time measurement of evaluation-mode forward passes.
#[derive(Clone, Copy, Debug)]
pub struct LatencyReport {
    /// Mean per-sample wall time over the repeats.
    pub mean_s: f64,
    /// Population variance of the per-sample times across repeats.
    pub variance_s2: f64,
    /// Timed repeats (warm-up passes excluded).
    pub repeats: usize,
    /// Samples per forward pass.
    pub batch_size: usize,
}

/// Serializes benchmarks within the process: concurrent timing runs
/// would contaminate each other's wall clocks.
static BENCH_GUARD: Mutex<()> = Mutex::new(());

/// Times evaluation-mode forward passes on `batch` ([t×c] or [B×t×c]):
/// [`WARMUP_RUNS`] discarded passes, then `repeats` timed ones, with
/// per-sample mean and variance. Requires `repeats` ≥
/// [`MIN_LATENCY_REPEATS`]. Only one measurement runs at a time.
pub fn measure_latency(net: &SafeNet, batch: &Tensor, repeats: usize) -> Result<LatencyReport> {
    if repeats < MIN_LATENCY_REPEATS {
        return Err(Error::Range {
            what: "latency repeats".into(),
            value: repeats as f64,
            limit: format!("≥ {MIN_LATENCY_REPEATS}"),
        });
    }
    let n = match batch.rank() {
        2 => 1,
        3 => batch.dim(0),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "measure_latency expects [t×c] or [B×t×c], got shape {:?}",
                batch.shape()
            )))
        }
    };
    if n == 0 {
        return Err(Error::EmptyInput("measure_latency on an empty batch".into()));
    }
    let _guard = BENCH_GUARD.lock().unwrap_or_else(|p| p.into_inner());
    let tape = Tape::inference();
    for _ in 0..WARMUP_RUNS {
        net.forward(&tape, batch, false, AttentionMode::Spiking, true)?;
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        net.forward(&tape, batch, false, AttentionMode::Spiking, true)?;
        times.push(start.elapsed().as_secs_f64() / n as f64);
    }
    let mean = times.iter().sum::<f64>() / repeats as f64;
    let variance = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / repeats as f64;
    Ok(LatencyReport {
        mean_s: mean,
        variance_s2: variance,
        repeats,
        batch_size: n,
    })
}

/// Full cost sheet of one network on one batch shape.
#[derive(Clone, Copy, Debug)]
pub struct CostReport {
    /// Learnable scalar count.
    pub params: u64,
    /// Serialized checkpoint size in bytes.
    pub model_size_bytes: u64,
    /// Dense floating-point operations per sample.
    pub flops: u64,
    /// Spike-aware multiply–accumulates per sample; additions are
    /// counted where the binary queries elide multiplications.
    pub effective_macs: u64,
    /// Mean per-sample inference wall time.
    pub latency_s: f64,
    /// Variance of the per-sample wall time across repeats.
    pub latency_var_s2: f64,
    /// Verbatim 4.6 · FLOPs / T figure (dense operations substituted
    /// for multiply–accumulates); not a physical wattage.
    pub power_w: f64,
    /// 4.6 pJ per effective multiply–accumulate, in watts.
    pub power_energy_model_w: f64,
}

impl CostReport {
    /// Gathers every cost figure for `net` on `batch`: analytic counts,
    /// one instrumented run, and a timed benchmark with `repeats`
    /// repetitions.
    pub fn collect(net: &SafeNet, batch: &Tensor, repeats: usize) -> Result<Self> {
        let window_len = match batch.rank() {
            2 => batch.dim(0),
            3 => batch.dim(1),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "cost report expects [t×c] or [B×t×c], got shape {:?}",
                    batch.shape()
                )))
            }
        };
        let params = count_params(net);
        let model_size_bytes = checkpoint_bytes(net)?.len() as u64;
        let flops = count_flops(&net.cfg, window_len);
        let effective = effective_macs(net, batch)?.per_sample();
        let lat = measure_latency(net, batch, repeats)?;
        Ok(Self {
            params,
            model_size_bytes,
            flops,
            effective_macs: effective,
            latency_s: lat.mean_s,
            latency_var_s2: lat.variance_s2,
            power_w: power_estimate(flops, lat.mean_s)?,
            power_energy_model_w: power_energy_model(effective, lat.mean_s)?,
        })
    }

    /// Column names matching [`delimited_row`](Self::delimited_row).
    pub fn delimited_header() -> &'static str {
        "params,model_size_bytes,flops,effective_macs,latency_s,power_raw,power_energy_model_w"
    }

    /// One comma-separated row for batch comparisons across runs.
    pub fn delimited_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.params,
            self.model_size_bytes,
            self.flops,
            self.effective_macs,
            self.latency_s,
            self.power_w,
            self.power_energy_model_w
        )
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "parameters          {}", self.params)?;
        writeln!(f, "model size          {} bytes", self.model_size_bytes)?;
        writeln!(f, "dense flops         {} per sample", self.flops)?;
        writeln!(f, "effective macs      {} per sample", self.effective_macs)?;
        writeln!(
            f,
            "latency             {:.3e} s per sample (variance {:.3e})",
            self.latency_s, self.latency_var_s2
        )?;
        writeln!(f, "power, raw formula  {:.3e}", self.power_w)?;
        writeln!(f, "power, 4.6 pJ/MAC   {:.3e} W", self.power_energy_model_w)?;
        write!(
            f,
            "note: the raw figure applies the 4.6 coefficient to dense \
             flops over latency verbatim and does not reduce to watts; \
             the energy-model line is the physical reading"
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::SSAConfig;
    use crate::model::safd::SAFDConfig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> SAFENetConfig {
        SAFENetConfig {
            embed: EmbedConfig {
                c_in: 2,
                d_model: 8,
                conv_kernel: 3,
            },
            ssa: SSAConfig {
                d_model: 8,
                ..SSAConfig::default()
            },
            tcn: TCNConfig {
                channels: 8,
                kernel: 3,
                dilations: vec![1, 2],
                residual: true,
            },
            safd: SAFDConfig {
                iterations: 2,
                weight_hidden: 6,
            },
            encoder_layers: 1,
            n_joints: 2,
            n_subjects: 3,
            ..SAFENetConfig::default()
        }
    }

    fn tiny_net(seed: u64) -> SafeNet {
        SafeNet::init(&tiny_cfg(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_batch(b: usize, t: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[b, t, c], |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn single_projection_layer_with_bias_counts_4160_parameters() {
        let w = Tensor::zeros(&[64, 64]);
        let b = Tensor::zeros(&[64]);
        assert_eq!(count_tensor_params([&w, &b]), 64 * 64 + 64);
        assert_eq!(count_tensor_params([&w, &b]), 4160);
    }

    #[test]
    fn parameter_count_ignores_values_and_gradient_flags() {
        let a = count_params(&tiny_net(1));
        let b = count_params(&tiny_net(2));
        assert_eq!(a, b, "count must not depend on weight values");
        // A slot that no longer carries gradients still counts.
        let mut frozen = tiny_net(3);
        frozen.heads.w_r = Tensor::zeros(frozen.heads.w_r.shape());
        assert!(!frozen.heads.w_r.requires_grad());
        assert_eq!(count_params(&frozen), a);
        assert_eq!(count_params(&frozen), frozen.n_params() as u64);
    }

    #[test]
    fn dense_attention_pair_counts_scores_and_apply_at_two_ops_per_mac() {
        // Q·Kᵀ contracts over d and the apply contracts over t, so each
        // side of the pair costs 2·50·50·64 = 320,000 operations.
        let scores = 2 * 50 * 50 * 64;
        let apply = 2 * 50 * 50 * 64;
        assert_eq!(scores + apply, 640_000);
        assert_eq!(flops_attention_dense(50, 64), scores + apply);
        let stage = attention_stage(50, 64);
        assert_eq!(stage.attention_scores, scores);
    }

    #[test]
    fn default_configuration_matches_the_documented_closed_form() {
        // Independent hand derivation, stage by stage, for the default
        // geometry (d = 64, c = 5, two encoder layers, kernel-3
        // convolutions at dilations 1 and 2, two decomposition stages
        // with a 32-wide gate, 3 joints, 4 subjects) on a 50-sample
        // window.
        let (t, d, c) = (50u64, 64u64, 5u64);
        let embed = 2 * t * 3 * c * d + t * d + t * d;
        let attention = 4 * (2 * t * d * d)   // q, k, v, out projections
            + t * d + t * d                   // query norm + firing
            + 2 * t * t * d                   // scores
            + t * t + t * t                   // scale + softmax
            + 2 * t * t * d                   // apply
            + t * d;                          // residual
        let per_block = 2 * (2 * t * 3 * d * d) + 2 * t * d + t * d + t * d;
        let layer = attention + 2 * per_block;
        let pool = t * d;
        let safd_iter = 4 * (2 * d * d) + d + d   // projections, norm, firing
            + 2 * d + 1 + 1 + 2 * d + d           // scores, scale, softmax, apply, residual
            + 2 * d * 32 + 32 + 32 + 2 * 32 * d + d + d  // gate network
            + 2 * d;                              // gating product + residue
        let safd = 2 * safd_iter + d;
        let heads = 2 * d * 3 + 3 + 2 * d * 4 + 4;
        let hand_total = embed + 2 * layer + pool + safd + heads;
        assert_eq!(hand_total, 14_657_627);
        assert_eq!(count_flops(&SAFENetConfig::default(), 50), hand_total);
    }

    #[test]
    fn doubling_the_window_doubles_convolution_flops_exactly() {
        for cfg in [SAFENetConfig::default(), tiny_cfg()] {
            for t in [10usize, 25, 50] {
                let once = count_flops_detailed(&cfg, t);
                let twice = count_flops_detailed(&cfg, 2 * t);
                assert_eq!(twice.convolutions, 2 * once.convolutions);
            }
        }
    }

    #[test]
    fn degenerate_empty_architecture_costs_nothing() {
        let cfg = SAFENetConfig {
            embed: EmbedConfig {
                c_in: 0,
                d_model: 0,
                conv_kernel: 3,
            },
            ssa: SSAConfig {
                d_model: 0,
                ..SSAConfig::default()
            },
            tcn: TCNConfig {
                channels: 0,
                kernel: 3,
                dilations: vec![1],
                residual: true,
            },
            safd: SAFDConfig {
                iterations: 0,
                weight_hidden: 0,
            },
            encoder_layers: 0,
            n_joints: 0,
            n_subjects: 0,
            ..SAFENetConfig::default()
        };
        assert_eq!(count_flops(&cfg, 50), 0);
    }

    #[test]
    fn silent_query_branch_measures_zero_score_additions() {
        let mut net = tiny_net(5);
        let d = net.cfg.embed.d_model;
        for layer in &mut net.encoder {
            layer.ssa.w_q = Tensor::zeros(&[d, d]);
        }
        net.safd.ssa.w_q = Tensor::zeros(&[d, d]);
        let report = effective_macs(&net, &random_batch(3, 12, 2, 6)).unwrap();
        assert_eq!(report.score_additions, 0);
        assert!(report.lazy_additions > 0, "lazy fill still runs");
        assert!(report.per_sample() <= count_flops(&net.cfg, 12));
    }

    #[test]
    fn saturated_query_branch_attains_the_dense_score_bound() {
        // Zero query weights with a large normalization shift drive the
        // firing layer at every step, and a 12-step sequence keeps every
        // query active, so the measured additions must equal the dense
        // t²·d bound per encoder layer.
        let mut net = tiny_net(7);
        let d = net.cfg.embed.d_model;
        for layer in &mut net.encoder {
            layer.ssa.w_q = Tensor::zeros(&[d, d]);
            layer.ssa.bn_beta = Tensor::new(vec![10.0; d], &[d]).unwrap();
        }
        let (b, t) = (3usize, 12usize);
        let report = effective_macs(&net, &random_batch(b, t, 2, 8)).unwrap();
        let dense_bound = (net.cfg.encoder_layers * t * t * d) as u64;
        assert_eq!(report.score_additions, b as u64 * dense_bound);
        // Lazy fills come only from the single-step decomposition
        // sequences, whose active budget is empty.
        assert_eq!(
            report.lazy_additions,
            (b * net.cfg.safd.iterations * d) as u64
        );
    }

    #[test]
    fn random_spikes_stay_strictly_below_the_dense_bound() {
        // At 40 steps only half the queries are active, so even fully
        // saturated spiking cannot reach the dense score count.
        let net = tiny_net(9);
        let d = net.cfg.embed.d_model;
        let (b, t) = (2usize, 40usize);
        let report = effective_macs(&net, &random_batch(b, t, 2, 10)).unwrap();
        let dense_scores = (b * net.cfg.encoder_layers * t * t * d) as u64;
        assert!(
            report.score_additions < dense_scores,
            "measured {} vs dense {}",
            report.score_additions,
            dense_scores
        );
        assert!(report.per_sample() <= count_flops(&net.cfg, t));
    }

    #[test]
    fn power_formula_is_applied_verbatim() {
        assert_eq!(power_estimate(10, 2.0).unwrap(), 23.0);
        assert_eq!(power_estimate(0, 5.0).unwrap(), 0.0);
        let p = power_estimate(1000, 0.5).unwrap();
        assert_eq!(power_estimate(1000, 0.25).unwrap(), 2.0 * p);
        assert_eq!(power_estimate(2000, 0.5).unwrap(), 2.0 * p);
        assert!(matches!(power_estimate(10, 0.0), Err(Error::Range { .. })));
        assert!(matches!(power_estimate(10, -1.0), Err(Error::Range { .. })));
        assert!(matches!(
            power_estimate(10, f64::NAN),
            Err(Error::Range { .. })
        ));
    }

    #[test]
    fn energy_model_reading_gives_physical_watts() {
        // 10¹² multiply–accumulates per second at 4.6 pJ each is 4.6 W.
        let p = power_energy_model(1_000_000_000_000, 1.0).unwrap();
        assert!((p - 4.6).abs() < 1e-12);
        assert!(matches!(
            power_energy_model(10, 0.0),
            Err(Error::Range { .. })
        ));
    }

    #[test]
    fn latency_reports_positive_mean_and_finite_spread() {
        let net = tiny_net(11);
        let batch = random_batch(2, 8, 2, 12);
        let report = measure_latency(&net, &batch, MIN_LATENCY_REPEATS).unwrap();
        assert!(report.mean_s > 0.0);
        assert!(report.variance_s2.is_finite() && report.variance_s2 >= 0.0);
        assert_eq!(report.repeats, MIN_LATENCY_REPEATS);
        assert_eq!(report.batch_size, 2);
        assert!(matches!(
            measure_latency(&net, &batch, 9),
            Err(Error::Range { .. })
        ));
    }

    #[test]
    fn batched_inference_amortizes_per_sample_cost() {
        let net = tiny_net(13);
        let single = random_batch(1, 8, 2, 14);
        let batched = random_batch(16, 8, 2, 15);
        let lone = measure_latency(&net, &single, MIN_LATENCY_REPEATS).unwrap();
        let group = measure_latency(&net, &batched, MIN_LATENCY_REPEATS).unwrap();
        // Amortization is expected but scheduling noise can flip it on a
        // loaded machine, so a violation only warns.
        if group.mean_s > lone.mean_s {
            eprintln!(
                "warning: batch-16 per-sample latency {:.3e}s exceeded \
                 batch-1 latency {:.3e}s",
                group.mean_s, lone.mean_s
            );
        }
    }

    #[test]
    fn cost_report_is_internally_consistent() {
        let net = tiny_net(17);
        let batch = random_batch(2, 10, 2, 18);
        let report = CostReport::collect(&net, &batch, MIN_LATENCY_REPEATS).unwrap();
        assert_eq!(report.params, net.n_params() as u64);
        assert!(report.effective_macs <= report.flops);
        assert!(report.latency_s > 0.0 && report.latency_var_s2 >= 0.0);
        assert!(report.power_w > 0.0 && report.power_energy_model_w > 0.0);
        assert_eq!(
            report.power_w,
            power_estimate(report.flops, report.latency_s).unwrap()
        );

        // The size column equals the bytes a saved checkpoint occupies.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.sfn");
        crate::model::save_checkpoint(&path, &net).unwrap();
        assert_eq!(
            report.model_size_bytes,
            std::fs::metadata(&path).unwrap().len()
        );

        let text = report.to_string();
        for label in ["parameters", "model size", "effective macs", "note:"] {
            assert!(text.contains(label), "missing {label} in report");
        }
        let row = report.delimited_row();
        assert_eq!(
            row.split(',').count(),
            CostReport::delimited_header().split(',').count()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn effective_macs_never_exceed_dense_flops(
            d_exp in 2u32..=3,
            layers in 1usize..=2,
            t in 6usize..=20,
            c_in in 1usize..=3,
            iterations in 1usize..=2,
            hidden in 2usize..=8,
            seed in 0u64..1000,
        ) {
            let d = 2usize.pow(d_exp);
            let cfg = SAFENetConfig {
                embed: EmbedConfig { c_in, d_model: d, conv_kernel: 3 },
                ssa: SSAConfig { d_model: d, ..SSAConfig::default() },
                tcn: TCNConfig {
                    channels: d,
                    kernel: 3,
                    dilations: vec![1, 2],
                    residual: true,
                },
                safd: SAFDConfig { iterations, weight_hidden: hidden },
                encoder_layers: layers,
                n_joints: 2,
                n_subjects: 3,
                ..SAFENetConfig::default()
            };
            let net = SafeNet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let batch = Tensor::from_fn(&[2, t, c_in], |_| rng.gen_range(-1.0..1.0));
            let report = effective_macs(&net, &batch).unwrap();
            prop_assert!(report.per_sample() <= count_flops(&cfg, t));
        }
    }
}
