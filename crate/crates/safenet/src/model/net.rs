//! The full network: a convolutional embedding, a stack of attention +
//! temporal-convolution encoder layers, mean pooling over time, the
//! feature-decomposition cascade, and the two output heads, together
//! with the weighted training objective.

use std::cell::RefCell;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    embed, ssa_block_mode, AttentionMode, EmbedConfig, ProjectionWeights, SSAConfig,
};
use crate::diffcore::ops::{mean_time, reshape, RunningStats};
use crate::diffcore::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::heads::{heads, loss_ce, loss_mse, loss_orth, loss_total, HeadWeights};
use crate::model::safd::{safd_decompose, DecompositionOutput, SAFDConfig, SafdWeights};
use crate::model::tcn::{tcn_forward, TCNConfig, TcnWeights};

/// Complete architecture description. All widths must agree on the
/// shared feature dimension d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SAFENetConfig {
    pub embed: EmbedConfig,
    pub ssa: SSAConfig,
    pub tcn: TCNConfig,
    pub safd: SAFDConfig,
    /// Number of attention + temporal-convolution encoder layers.
    pub encoder_layers: usize,
    /// Output joints of the regression head.
    pub n_joints: usize,
    /// Classes of the identity head.
    pub n_subjects: usize,
    /// Weight of the regression loss.
    pub alpha: f64,
    /// Weight of the classification loss.
    pub beta: f64,
    /// Weight of the orthogonality loss.
    pub gamma: f64,
}

impl Default for SAFENetConfig {
    fn default() -> Self {
        Self {
            embed: EmbedConfig::default(),
            ssa: SSAConfig::default(),
            tcn: TCNConfig::default(),
            safd: SAFDConfig::default(),
            encoder_layers: 2,
            n_joints: 3,
            n_subjects: 4,
            alpha: 0.1,
            beta: 1.0,
            gamma: 0.5,
        }
    }
}

impl SAFENetConfig {
    pub fn validate(&self) -> Result<()> {
        self.embed.validate()?;
        self.ssa.validate()?;
        self.tcn.validate()?;
        self.safd.validate()?;
        let d = self.embed.d_model;
        if self.ssa.d_model != d || self.tcn.channels != d {
            return Err(Error::Config(format!(
                "feature width disagrees: embed {d}, attention {}, \
                 temporal convolution {}",
                self.ssa.d_model, self.tcn.channels
            )));
        }
        if self.encoder_layers == 0 {
            return Err(Error::Range {
                what: "encoder layers".into(),
                value: 0.0,
                limit: "≥ 1".into(),
            });
        }
        if self.n_joints == 0 || self.n_subjects == 0 {
            return Err(Error::Config(
                "the model needs at least one joint and one subject".into(),
            ));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Range {
                    what: format!("loss weight {name}"),
                    value: v,
                    limit: "finite and ≥ 0".into(),
                });
            }
        }
        Ok(())
    }
}

/// One encoder layer: attention block followed by the temporal
/// convolution stack, with the layer's own batch-norm running state.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub ssa: ProjectionWeights,
    pub tcn: TcnWeights,
    pub bn: RefCell<RunningStats>,
}

/// All learnable state of the network plus batch-norm running buffers.
#[derive(Clone, Debug)]
pub struct SafeNet {
    pub cfg: SAFENetConfig,
    /// Embedding convolution kernel [d × c × k] and bias [d].
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub encoder: Vec<EncoderLayer>,
    pub safd: SafdWeights,
    pub safd_bn: RefCell<RunningStats>,
    pub heads: HeadWeights,
}

/// Everything one forward pass produces.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// Joint-angle predictions [B×n], standardized scale.
    pub angles: Tensor,
    /// Subject logits [B×C].
    pub logits: Tensor,
    /// Pooled encoder feature [B×d].
    pub x1: Tensor,
    /// Decomposition detail; absent in encoder-only mode.
    pub decomp: Option<DecompositionOutput>,
}

/// Scalar view of one loss evaluation alongside the differentiable total.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Tensor,
    pub regression: f64,
    pub classification: f64,
    pub orthogonal: f64,
}

impl SafeNet {
    /// Fresh network with deterministic, seed-driven initialization.
    pub fn init(cfg: &SAFENetConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed.d_model;
        let (c, k) = (cfg.embed.c_in, cfg.embed.conv_kernel);
        let bound = (3.0 / (c * k) as f64).sqrt();
        let embed_w = Tensor::param(
            (0..d * c * k).map(|_| rng.gen_range(-bound..bound)).collect(),
            &[d, c, k],
        )?;
        let embed_b = Tensor::param(vec![0.0; d], &[d])?;
        let encoder = (0..cfg.encoder_layers)
            .map(|_| EncoderLayer {
                ssa: ProjectionWeights::init(d, rng),
                tcn: TcnWeights::init(&cfg.tcn, rng),
                bn: RefCell::new(RunningStats::new(d)),
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            embed_w,
            embed_b,
            encoder,
            safd: SafdWeights::init(d, cfg.safd.weight_hidden, rng),
            safd_bn: RefCell::new(RunningStats::new(d)),
            heads: HeadWeights::init(d, cfg.n_joints, cfg.n_subjects, rng),
        })
    }

    /// Encoder: embedding, the layer stack, and mean pooling over time.
    /// Maps [t×c] to [d] and [B×t×c] to [B×d].
    pub fn encode(
        &self,
        tape: &Tape,
        x: &Tensor,
        training: bool,
        mode: AttentionMode,
    ) -> Result<Tensor> {
        let batched = match x.rank() {
            2 => false,
            3 => true,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "encode expects [t×c] or [B×t×c], got shape {:?}",
                    x.shape()
                )))
            }
        };
        let (b, t) = if batched {
            (x.dim(0), x.dim(1))
        } else {
            (1, x.dim(0))
        };
        let d = self.cfg.embed.d_model;
        let x3 = reshape(tape, x, &[b, t, self.cfg.embed.c_in])?;
        let mut h = embed(tape, &self.cfg.embed, &self.embed_w, Some(&self.embed_b), &x3)?;
        for layer in &self.encoder {
            let mut bn = layer.bn.borrow_mut();
            h = ssa_block_mode(tape, &h, &layer.ssa, &self.cfg.ssa, &mut bn, training, mode)?;
            drop(bn);
            h = tcn_forward(tape, &self.cfg.tcn, &layer.tcn, &h)?;
        }
        let pooled = mean_time(tape, &h)?;
        if batched {
            Ok(pooled)
        } else {
            reshape(tape, &pooled, &[d])
        }
    }

    /// Full forward pass. With `use_safd` off the pooled feature feeds
    /// both heads directly (the encoder-only ablation) and no
    /// decomposition is produced.
    pub fn forward(
        &self,
        tape: &Tape,
        batch: &Tensor,
        training: bool,
        mode: AttentionMode,
        use_safd: bool,
    ) -> Result<ModelOutput> {
        let x1 = self.encode(tape, batch, training, mode)?;
        let (decomp, f_k, f_b) = if use_safd {
            let mut bn = self.safd_bn.borrow_mut();
            let out = safd_decompose(
                tape,
                &self.cfg.safd,
                &self.cfg.ssa,
                &self.safd,
                &mut bn,
                &x1,
                training,
                mode,
            )?;
            let (f_k, f_b) = (out.f_k.clone(), out.f_b.clone());
            (Some(out), f_k, f_b)
        } else {
            (None, x1.clone(), x1.clone())
        };
        let (angles, logits) = heads(tape, &self.heads, &f_k, &f_b)?;
        Ok(ModelOutput {
            angles,
            logits,
            x1,
            decomp,
        })
    }

    /// Weighted objective for one batch. The orthogonality term only
    /// exists when a decomposition was produced.
    pub fn compute_loss(
        &self,
        tape: &Tape,
        out: &ModelOutput,
        targets: &Tensor,
        labels: &[usize],
    ) -> Result<LossTerms> {
        let l_re = loss_mse(tape, &out.angles, targets)?;
        let l_cls = loss_ce(tape, &out.logits, labels)?;
        let (l_orth, orth_val) = match &out.decomp {
            Some(dec) => {
                let l = loss_orth(tape, &dec.f_k, &dec.f_b)?;
                let v = l.values()[0];
                (l, v)
            }
            None => (Tensor::scalar(0.0), 0.0),
        };
        let total = loss_total(
            tape,
            &l_re,
            &l_cls,
            &l_orth,
            self.cfg.alpha,
            self.cfg.beta,
            self.cfg.gamma,
        )?;
        Ok(LossTerms {
            total,
            regression: l_re.values()[0],
            classification: l_cls.values()[0],
            orthogonal: orth_val,
        })
    }

    /// Stable name → tensor walk over every learnable parameter.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        out.push(("embed.w".into(), self.embed_w.clone()));
        out.push(("embed.b".into(), self.embed_b.clone()));
        for (i, layer) in self.encoder.iter().enumerate() {
            for (suffix, t) in proj_fields(&layer.ssa) {
                out.push((format!("enc{i}.ssa.{suffix}"), t.clone()));
            }
            for (j, blk) in layer.tcn.blocks.iter().enumerate() {
                out.push((format!("enc{i}.tcn.b{j}.w1"), blk.w1.clone()));
                out.push((format!("enc{i}.tcn.b{j}.b1"), blk.b1.clone()));
                out.push((format!("enc{i}.tcn.b{j}.w2"), blk.w2.clone()));
                out.push((format!("enc{i}.tcn.b{j}.b2"), blk.b2.clone()));
            }
        }
        for (suffix, t) in proj_fields(&self.safd.ssa) {
            out.push((format!("safd.ssa.{suffix}"), t.clone()));
        }
        out.push(("safd.gate.w1".into(), self.safd.gate_w1.clone()));
        out.push(("safd.gate.b1".into(), self.safd.gate_b1.clone()));
        out.push(("safd.gate.w2".into(), self.safd.gate_w2.clone()));
        out.push(("safd.gate.b2".into(), self.safd.gate_b2.clone()));
        out.push(("heads.w_r".into(), self.heads.w_r.clone()));
        out.push(("heads.b_r".into(), self.heads.b_r.clone()));
        out.push(("heads.w_c".into(), self.heads.w_c.clone()));
        out.push(("heads.b_c".into(), self.heads.b_c.clone()));
        out
    }

    /// Mutable twin of [`named_params`](Self::named_params), in the same
    /// order, for optimizers and checkpoint restore.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        out.push(("embed.w".into(), &mut self.embed_w));
        out.push(("embed.b".into(), &mut self.embed_b));
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            for (suffix, t) in proj_fields_mut(&mut layer.ssa) {
                out.push((format!("enc{i}.ssa.{suffix}"), t));
            }
            for (j, blk) in layer.tcn.blocks.iter_mut().enumerate() {
                out.push((format!("enc{i}.tcn.b{j}.w1"), &mut blk.w1));
                out.push((format!("enc{i}.tcn.b{j}.b1"), &mut blk.b1));
                out.push((format!("enc{i}.tcn.b{j}.w2"), &mut blk.w2));
                out.push((format!("enc{i}.tcn.b{j}.b2"), &mut blk.b2));
            }
        }
        for (suffix, t) in proj_fields_mut(&mut self.safd.ssa) {
            out.push((format!("safd.ssa.{suffix}"), t));
        }
        out.push(("safd.gate.w1".into(), &mut self.safd.gate_w1));
        out.push(("safd.gate.b1".into(), &mut self.safd.gate_b1));
        out.push(("safd.gate.w2".into(), &mut self.safd.gate_w2));
        out.push(("safd.gate.b2".into(), &mut self.safd.gate_b2));
        out.push(("heads.w_r".into(), &mut self.heads.w_r));
        out.push(("heads.b_r".into(), &mut self.heads.b_r));
        out.push(("heads.w_c".into(), &mut self.heads.w_c));
        out.push(("heads.b_c".into(), &mut self.heads.b_c));
        out
    }

    /// Non-learnable state: batch-norm running means and variances.
    pub fn named_buffers(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, layer) in self.encoder.iter().enumerate() {
            let bn = layer.bn.borrow();
            out.push((format!("enc{i}.bn.mean"), bn.mean.clone()));
            out.push((format!("enc{i}.bn.var"), bn.var.clone()));
        }
        let bn = self.safd_bn.borrow();
        out.push(("safd.bn.mean".into(), bn.mean.clone()));
        out.push(("safd.bn.var".into(), bn.var.clone()));
        out
    }

    /// Mutable access to the running buffers, mirroring
    /// [`named_buffers`](Self::named_buffers).
    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out: Vec<(String, &mut Vec<f64>)> = Vec::new();
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            let bn = layer.bn.get_mut();
            out.push((format!("enc{i}.bn.mean"), &mut bn.mean));
            out.push((format!("enc{i}.bn.var"), &mut bn.var));
        }
        let bn = self.safd_bn.get_mut();
        out.push(("safd.bn.mean".into(), &mut bn.mean));
        out.push(("safd.bn.var".into(), &mut bn.var));
        out
    }

    /// Total learnable scalar count.
    pub fn n_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }
}

fn proj_fields(p: &ProjectionWeights) -> [(&'static str, &Tensor); 6] {
    [
        ("w_q", &p.w_q),
        ("w_k", &p.w_k),
        ("w_v", &p.w_v),
        ("w_out", &p.w_out),
        ("bn_g", &p.bn_gamma),
        ("bn_b", &p.bn_beta),
    ]
}

fn proj_fields_mut(p: &mut ProjectionWeights) -> [(&'static str, &mut Tensor); 6] {
    [
        ("w_q", &mut p.w_q),
        ("w_k", &mut p.w_k),
        ("w_v", &mut p.w_v),
        ("w_out", &mut p.w_out),
        ("bn_g", &mut p.bn_gamma),
        ("bn_b", &mut p.bn_beta),
    ]
}
