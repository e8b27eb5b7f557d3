//! Training objectives: segmentation cross-entropy, PCL, UPCL, HPCL, and
//! their weighted sum.
//!
//! The three contrastive losses share one graph op: logits are
//! `scale[i][k] * (q_k . c_i) / tau` where `q_k` is a (possibly weighted,
//! possibly normalized) prototype row held as a constant and `c_i` the pooled
//! class feature. Gradients flow into class features only; prototypes, U and
//! H are gradient-stopped buffers.

use crate::error::{CdpclError, Result};
use crate::numerics::{GradOp, Graph, Tensor, Var, GUARD_EPS};
use crate::protobank::{LabelBatch, PrototypeBank, IGNORE_INDEX};

/// Temperatures, loss weights and denominator conventions.
#[derive(Debug, Clone)]
pub struct LossConfig {
    pub tau: f64,
    pub tau_u: f64,
    pub tau_h: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Standard InfoNCE keeps the positive pair in the denominator; the
    /// literal excluded-positive form is available for ablation.
    pub include_positive_in_denominator: bool,
    pub normalize_features: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.8,
            tau_u: 0.8,
            tau_h: 0.8,
            lambda1: 0.1,
            lambda2: 0.01,
            include_positive_in_denominator: true,
            normalize_features: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 || self.tau_u <= 0.0 || self.tau_h <= 0.0 {
            return Err(CdpclError::Config("temperatures must be > 0".into()));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(CdpclError::Config("lambdas must be >= 0".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// segmentation cross-entropy

struct SegLossOp {
    labels: LabelBatch,
    count: u64,
}

fn seg_forward(logits: &Tensor, labels: &LabelBatch) -> (f64, u64) {
    let (b, c, h, w) = (
        logits.shape()[0],
        logits.shape()[1],
        logits.shape()[2],
        logits.shape()[3],
    );
    let ld = logits.data();
    let mut total = 0.0;
    let mut count = 0u64;
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let l = labels.at(bi, y, x);
                if l == IGNORE_INDEX {
                    continue;
                }
                count += 1;
                let pix = (bi * c * h + y) * w + x;
                let mut mx = f64::NEG_INFINITY;
                for ci in 0..c {
                    mx = mx.max(ld[pix + ci * h * w]);
                }
                let mut sum = 0.0;
                for ci in 0..c {
                    sum += (ld[pix + ci * h * w] - mx).exp();
                }
                let lt = ld[pix + l as usize * h * w];
                total -= lt - mx - sum.ln();
            }
        }
    }
    if count == 0 {
        (0.0, 0)
    } else {
        (total / count as f64, count)
    }
}

impl GradOp for SegLossOp {
    fn name(&self) -> &'static str {
        "seg_loss"
    }
    fn input_grads(&self, inputs: &[&Tensor], _o: &Tensor, g: &Tensor, _n: &[bool]) -> Vec<Option<Tensor>> {
        let logits = inputs[0];
        let (b, c, h, w) = (
            logits.shape()[0],
            logits.shape()[1],
            logits.shape()[2],
            logits.shape()[3],
        );
        let mut gx = Tensor::zeros(logits.shape());
        if self.count == 0 {
            return vec![Some(gx)];
        }
        let scale = g.item() / self.count as f64;
        let ld = logits.data();
        let gxd = gx.data_mut();
        for bi in 0..b {
            for y in 0..h {
                for x in 0..w {
                    let l = self.labels.at(bi, y, x);
                    if l == IGNORE_INDEX {
                        continue;
                    }
                    let pix = (bi * c * h + y) * w + x;
                    let mut mx = f64::NEG_INFINITY;
                    for ci in 0..c {
                        mx = mx.max(ld[pix + ci * h * w]);
                    }
                    let mut sum = 0.0;
                    for ci in 0..c {
                        sum += (ld[pix + ci * h * w] - mx).exp();
                    }
                    for ci in 0..c {
                        let p = (ld[pix + ci * h * w] - mx).exp() / sum;
                        let onehot = if ci == l as usize { 1.0 } else { 0.0 };
                        gxd[pix + ci * h * w] += scale * (p - onehot);
                    }
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Mean over non-ignored pixels of `-log softmax(logits)[true class]`.
/// All pixels ignored returns 0 with a warning counted on the graph.
pub fn seg_loss(graph: &mut Graph, logits: Var, labels: &LabelBatch) -> Result<Var> {
    let t = graph.value(logits);
    if t.shape().len() != 4
        || t.shape()[0] != labels.b
        || t.shape()[2] != labels.h
        || t.shape()[3] != labels.w
    {
        return Err(CdpclError::Shape {
            op: "seg_loss",
            detail: format!(
                "logits {:?} incompatible with labels {}x{}x{}",
                t.shape(),
                labels.b,
                labels.h,
                labels.w
            ),
        });
    }
    let num_classes = t.shape()[1];
    for &l in &labels.data {
        if l != IGNORE_INDEX && l as usize >= num_classes {
            return Err(CdpclError::Data(format!(
                "label value {} outside [0,{}) and not ignore index {}",
                l, num_classes, IGNORE_INDEX
            )));
        }
    }
    let (value, count) = seg_forward(t, labels);
    if count == 0 {
        graph.warn();
    }
    let op = SegLossOp { labels: labels.clone(), count };
    Ok(graph.record(Box::new(op), &[logits], Tensor::scalar(value)))
}

// ---------------------------------------------------------------------------
// prototypical contrastive family

struct ProtoContrastOp {
    /// `C x N` constant prototype rows (already weighted / normalized).
    protos: Tensor,
    /// `C x C` logit scale factors; `scale[i][k]` multiplies the dot with
    /// prototype `k` for anchor `i`.
    scale: Tensor,
    active: Vec<usize>,
    include_positive: bool,
    normalize: bool,
    tau: f64,
}

impl ProtoContrastOp {
    fn denom<'a>(&'a self, i: usize) -> impl Iterator<Item = usize> + 'a {
        self.active
            .iter()
            .copied()
            .filter(move |&k| self.include_positive || k != i)
    }

    /// Normalized (or raw) anchor row and its guard norm.
    fn anchor(&self, feats: &Tensor, i: usize) -> (Vec<f64>, f64) {
        let n = feats.shape()[1];
        let row = &feats.data()[i * n..(i + 1) * n];
        if self.normalize {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(GUARD_EPS);
            (row.iter().map(|v| v / norm).collect(), norm)
        } else {
            (row.to_vec(), 1.0)
        }
    }

    fn forward(&self, feats: &Tensor) -> (f64, u64) {
        let n = feats.shape()[1];
        let mut total = 0.0;
        let mut warnings = 0;
        for &i in &self.active {
            let (c_hat, _) = self.anchor(feats, i);
            let logit = |k: usize| -> f64 {
                let q = &self.protos.data()[k * n..(k + 1) * n];
                let dot: f64 = q.iter().zip(&c_hat).map(|(a, b)| a * b).sum();
                self.scale.at2(i, k) * dot / self.tau
            };
            let denom: Vec<usize> = self.denom(i).collect();
            if denom.is_empty() {
                warnings += 1;
                continue;
            }
            let pos = logit(i);
            let mut mx = f64::NEG_INFINITY;
            let logits: Vec<f64> = denom.iter().map(|&k| logit(k)).collect();
            for &l in &logits {
                mx = mx.max(l);
            }
            let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
            total += -pos + lse;
        }
        (total, warnings)
    }
}

impl GradOp for ProtoContrastOp {
    fn name(&self) -> &'static str {
        "proto_contrast"
    }
    fn input_grads(&self, inputs: &[&Tensor], _o: &Tensor, g: &Tensor, _n: &[bool]) -> Vec<Option<Tensor>> {
        let feats = inputs[0];
        let n = feats.shape()[1];
        let mut gx = Tensor::zeros(feats.shape());
        let gscale = g.item();
        for &i in &self.active {
            let (c_hat, norm) = self.anchor(feats, i);
            let denom: Vec<usize> = self.denom(i).collect();
            if denom.is_empty() {
                continue;
            }
            let logit = |k: usize| -> f64 {
                let q = &self.protos.data()[k * n..(k + 1) * n];
                let dot: f64 = q.iter().zip(&c_hat).map(|(a, b)| a * b).sum();
                self.scale.at2(i, k) * dot / self.tau
            };
            let logits: Vec<f64> = denom.iter().map(|&k| logit(k)).collect();
            let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let sum: f64 = exps.iter().sum();

            // d term / d c_hat = (1/tau) (-s_ii q_i + sum_k p_k s_ik q_k)
            let mut ghat = vec![0.0; n];
            {
                let q = &self.protos.data()[i * n..(i + 1) * n];
                let s = self.scale.at2(i, i) / self.tau;
                for (gh, qv) in ghat.iter_mut().zip(q) {
                    *gh -= s * qv;
                }
            }
            for (&k, e) in denom.iter().zip(&exps) {
                let p = e / sum;
                let q = &self.protos.data()[k * n..(k + 1) * n];
                let s = p * self.scale.at2(i, k) / self.tau;
                for (gh, qv) in ghat.iter_mut().zip(q) {
                    *gh += s * qv;
                }
            }
            let grow = &mut gx.data_mut()[i * n..(i + 1) * n];
            if self.normalize {
                let dot: f64 = ghat.iter().zip(&c_hat).map(|(a, b)| a * b).sum();
                for ((gr, gh), ch) in grow.iter_mut().zip(&ghat).zip(&c_hat) {
                    *gr += gscale * (gh - ch * dot) / norm;
                }
            } else {
                for (gr, gh) in grow.iter_mut().zip(&ghat) {
                    *gr += gscale * gh;
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Rows of `bank` with per-row elementwise weights applied, then optionally
/// L2-normalized.
fn weighted_protos(bank: &Tensor, weights: Option<&Tensor>, normalize: bool) -> Tensor {
    let (c, n) = (bank.shape()[0], bank.shape()[1]);
    let mut out = bank.clone();
    if let Some(w) = weights {
        debug_assert_eq!(w.shape(), bank.shape());
        for (o, wv) in out.data_mut().iter_mut().zip(w.data()) {
            *o *= wv;
        }
    }
    if normalize {
        let od = out.data_mut();
        for ci in 0..c {
            let row = &mut od[ci * n..(ci + 1) * n];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(GUARD_EPS);
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    out
}

/// Active set: classes present in the batch with an initialized prototype.
fn active_set(present: &[bool], initialized: &[bool]) -> Vec<usize> {
    present
        .iter()
        .zip(initialized)
        .enumerate()
        .filter(|(_, (&p, &i))| p && i)
        .map(|(c, _)| c)
        .collect()
}

fn contrast(
    graph: &mut Graph,
    protos: Tensor,
    scale: Tensor,
    active: Vec<usize>,
    class_feats: Var,
    tau: f64,
    cfg: &LossConfig,
) -> Result<Var> {
    if graph.value(class_feats).shape() != protos.shape() {
        return Err(CdpclError::Shape {
            op: "proto_contrast",
            detail: format!(
                "class features {:?} vs prototypes {:?}",
                graph.value(class_feats).shape(),
                protos.shape()
            ),
        });
    }
    let op = ProtoContrastOp {
        protos,
        scale,
        active,
        include_positive: cfg.include_positive_in_denominator,
        normalize: cfg.normalize_features,
        tau,
    };
    if op.active.is_empty() {
        graph.warn();
    }
    let (value, warnings) = op.forward(graph.value(class_feats));
    for _ in 0..warnings {
        graph.warn();
    }
    Ok(graph.record(Box::new(op), &[class_feats], Tensor::scalar(value)))
}

/// Plain prototypical contrastive loss (temperature `cfg.tau`).
pub fn pcl_loss(
    graph: &mut Graph,
    bank: &PrototypeBank,
    class_feats: Var,
    present: &[bool],
    cfg: &LossConfig,
) -> Result<Var> {
    let c = bank.prototypes.shape()[0];
    let protos = weighted_protos(&bank.prototypes, None, cfg.normalize_features);
    let active = active_set(present, &bank.initialized);
    contrast(graph, protos, Tensor::filled(&[c, c], 1.0), active, class_feats, cfg.tau, cfg)
}

/// PCL with source prototype rows reweighted elementwise by U
/// (temperature `cfg.tau_u`).
pub fn upcl_loss(
    graph: &mut Graph,
    bank_src: &PrototypeBank,
    u: &Tensor,
    class_feats: Var,
    present: &[bool],
    cfg: &LossConfig,
) -> Result<Var> {
    let c = bank_src.prototypes.shape()[0];
    let protos = weighted_protos(&bank_src.prototypes, Some(u), cfg.normalize_features);
    let active = active_set(present, &bank_src.initialized);
    contrast(graph, protos, Tensor::filled(&[c, c], 1.0), active, class_feats, cfg.tau_u, cfg)
}

/// PCL against augmented prototypes with hard-weight calibration: the
/// positive logit is scaled by `H[i][i]`, each negative by `1 / H[i][k]`
/// (temperature `cfg.tau_h`). Scalar weights multiply the normalized
/// prototype so calibration survives normalization.
pub fn hpcl_loss(
    graph: &mut Graph,
    bank_aug: &PrototypeBank,
    h: &Tensor,
    class_feats: Var,
    present: &[bool],
    cfg: &LossConfig,
) -> Result<Var> {
    let c = bank_aug.prototypes.shape()[0];
    let protos = weighted_protos(&bank_aug.prototypes, None, cfg.normalize_features);
    let mut scale = Tensor::zeros(&[c, c]);
    for i in 0..c {
        for k in 0..c {
            let v = if i == k { h.at2(i, i) } else { 1.0 / h.at2(i, k) };
            scale.set2(i, k, v);
        }
    }
    let active = active_set(present, &bank_aug.initialized);
    contrast(graph, protos, scale, active, class_feats, cfg.tau_h, cfg)
}

/// `L = L_seg + lambda1 * L_upcl + lambda2 * L_hpcl`. Terms with a zero
/// weight are left out of the graph entirely so the backward path matches a
/// run that never computed them.
pub fn total_loss(
    graph: &mut Graph,
    l_seg: Var,
    l_upcl: Option<Var>,
    l_hpcl: Option<Var>,
    cfg: &LossConfig,
) -> Result<Var> {
    let mut total = l_seg;
    if let Some(u) = l_upcl {
        if cfg.lambda1 != 0.0 {
            let t = graph.scale(u, cfg.lambda1)?;
            total = graph.add(total, t)?;
        }
    }
    if let Some(h) = l_hpcl {
        if cfg.lambda2 != 0.0 {
            let t = graph.scale(h, cfg.lambda2)?;
            total = graph.add(total, t)?;
        }
    }
    Ok(total)
}
