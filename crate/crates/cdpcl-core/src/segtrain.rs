//! Toy segmentation network, the frozen augmented branch, the SGD optimizer
//! with a polynomial schedule, and the full training loop.
//!
//! Per step, in this fixed order: augment the batch; forward the source
//! branch; run the frozen branch on the augmented view; pool class features
//! on both; EMA-update both prototype banks; compute D, the uncertainty
//! matrix and its EMA; compute S and H; build the losses and their weighted
//! total; backward; SGD update at the scheduled rate; bump the iteration and
//! append a log row. Prototype and uncertainty updates therefore feed the
//! same iteration's losses.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;

use crate::calibration::{
    difference_matrix, hard_weight_matrix, similarity_matrix, uncertainty_matrix,
    UncertaintyMatrix,
};
use crate::error::{CdpclError, Result};
use crate::losses::{hpcl_loss, pcl_loss, seg_loss, total_loss, upcl_loss, LossConfig};
use crate::numerics::{read_checkpoint, write_checkpoint, Graph, Tensor, Var};
use crate::protobank::{
    downsample_labels, pool_class_features, pool_class_features_var, ClassFeatures, LabelBatch,
    PrototypeBank,
};
use crate::synthdomains::{augment, read_dataset, AugParams, Dataset};

/// Spatial reduction of the encoder (two stride-2 blocks).
pub const DOWNSAMPLE: usize = 4;

fn mix(seed: u64, salt: u64) -> u64 {
    let mut x = seed ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x ^ (x >> 31)
}

// ---------------------------------------------------------------------------
// network

/// Three 3x3 conv blocks (strides 1, 2, 2; widths 16, 32, feat_dim) with
/// relu, a 1x1 head to class logits, and nearest upsampling back to input
/// size.
#[derive(Debug, Clone)]
pub struct SegNet {
    pub classes: usize,
    pub feat_dim: usize,
    /// named parameter tensors in a fixed order
    pub params: Vec<(String, Tensor)>,
}

/// Graph handles produced by one [`SegNet::forward`] call.
pub struct ForwardPass {
    pub features: Var,
    pub logits: Var,
    /// leaf vars matching `SegNet::params` order, for gradient collection
    pub param_vars: Vec<Var>,
}

impl SegNet {
    pub fn new(classes: usize, feat_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5e97));
        let mut params = Vec::new();
        let mut conv = |name: &str, out_ch: usize, in_ch: usize, k: usize| {
            let bound = (1.0 / (in_ch * k * k) as f64).sqrt();
            let n = out_ch * in_ch * k * k;
            let w = Tensor::new(
                vec![out_ch, in_ch, k, k],
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
            )
            .unwrap();
            let b = Tensor::new(
                vec![out_ch],
                (0..out_ch).map(|_| rng.gen_range(-bound..bound)).collect(),
            )
            .unwrap();
            params.push((format!("{name}_w"), w));
            params.push((format!("{name}_b"), b));
        };
        conv("conv1", 16, 3, 3);
        conv("conv2", 32, 16, 3);
        conv("conv3", feat_dim, 32, 3);
        conv("head", classes, feat_dim, 1);
        Self { classes, feat_dim, params }
    }

    fn check_input(&self, images: &Tensor) -> Result<()> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(CdpclError::Shape {
                op: "SegNet::forward",
                detail: format!("expected B x 3 x H x W input, got {s:?}"),
            });
        }
        if s[2] % DOWNSAMPLE != 0 || s[3] % DOWNSAMPLE != 0 {
            return Err(CdpclError::Shape {
                op: "SegNet::forward",
                detail: format!("input {}x{} not divisible by {}", s[2], s[3], DOWNSAMPLE),
            });
        }
        Ok(())
    }

    fn run(&self, g: &mut Graph, images: &Tensor, requires_grad: bool) -> Result<ForwardPass> {
        self.check_input(images)?;
        let param_vars: Vec<Var> = self
            .params
            .iter()
            .map(|(_, t)| g.leaf(t.clone(), requires_grad))
            .collect();
        let x = g.constant(images.clone());
        let strides = [1usize, 2, 2];
        let mut h = x;
        for (block, &stride) in strides.iter().enumerate() {
            let c = g.conv2d(h, param_vars[2 * block], Some(param_vars[2 * block + 1]), stride, 1)?;
            h = g.relu(c)?;
        }
        let features = h;
        let logits_small = g.conv2d(features, param_vars[6], Some(param_vars[7]), 1, 0)?;
        let logits = g.upsample_nearest(logits_small, DOWNSAMPLE)?;
        Ok(ForwardPass { features, logits, param_vars })
    }

    /// Gradient-recording forward: features `B x N x H/4 x W/4` and logits
    /// `B x C x H x W`.
    pub fn forward(&self, g: &mut Graph, images: &Tensor) -> Result<ForwardPass> {
        self.run(g, images, true)
    }

    /// Same numeric path with gradient recording off; nothing reaches the
    /// tape, so this branch contributes exactly zero to every parameter
    /// gradient. Returns the encoder features.
    pub fn frozen_forward(&self, g: &mut Graph, images: &Tensor) -> Result<Var> {
        Ok(self.run(g, images, false)?.features)
    }

    /// Argmax class per pixel, flat `B*H*W` row-major.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<u8>> {
        let mut g = Graph::new();
        let pass = self.run(&mut g, images, false)?;
        let logits = g.value(pass.logits);
        let (b, c, h, w) = (
            logits.shape()[0],
            logits.shape()[1],
            logits.shape()[2],
            logits.shape()[3],
        );
        let ld = logits.data();
        let mut out = Vec::with_capacity(b * h * w);
        for bi in 0..b {
            for y in 0..h {
                for x in 0..w {
                    let pix = (bi * c * h + y) * w + x;
                    let mut best = 0usize;
                    let mut best_v = f64::NEG_INFINITY;
                    for ci in 0..c {
                        let v = ld[pix + ci * h * w];
                        if v > best_v {
                            best_v = v;
                            best = ci;
                        }
                    }
                    out.push(best as u8);
                }
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// optimizer and schedule

/// `base_lr * (1 - iter/max_iter)^power`.
pub fn poly_lr(iter: u64, max_iter: u64, base_lr: f64, power: f64) -> f64 {
    debug_assert!(iter <= max_iter && max_iter > 0);
    base_lr * (1.0 - iter as f64 / max_iter as f64).powf(power)
}

/// Plain SGD with momentum buffers, one per parameter.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub momentum: f64,
    pub buffers: Vec<Tensor>,
}

impl SgdMomentum {
    pub fn new(params: &[(String, Tensor)], momentum: f64) -> Self {
        Self {
            momentum,
            buffers: params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
        }
    }

    /// `v = m v + g; p -= lr v`. A missing gradient means the parameter was
    /// unused this step and decays its buffer only.
    pub fn step(&mut self, params: &mut [(String, Tensor)], grads: &[Option<Tensor>], lr: f64) {
        for ((buf, (_, p)), g) in self.buffers.iter_mut().zip(params.iter_mut()).zip(grads) {
            let m = self.momentum;
            match g {
                Some(g) => {
                    for (bv, gv) in buf.data_mut().iter_mut().zip(g.data()) {
                        *bv = m * *bv + gv;
                    }
                }
                None => {
                    for bv in buf.data_mut().iter_mut() {
                        *bv *= m;
                    }
                }
            }
            for (pv, bv) in p.data_mut().iter_mut().zip(buf.data()) {
                *pv -= lr * bv;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Baseline,
    Pcl,
    Upcl,
    Hpcl,
    Cdpcl,
}

impl std::str::FromStr for Ablation {
    type Err = CdpclError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Ablation::Baseline),
            "pcl" => Ok(Ablation::Pcl),
            "upcl" => Ok(Ablation::Upcl),
            "hpcl" => Ok(Ablation::Hpcl),
            "cdpcl" => Ok(Ablation::Cdpcl),
            _ => Err(CdpclError::Config(format!(
                "unknown ablation '{s}' (expected baseline|pcl|upcl|hpcl|cdpcl)"
            ))),
        }
    }
}

impl Ablation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::Pcl => "pcl",
            Ablation::Upcl => "upcl",
            Ablation::Hpcl => "hpcl",
            Ablation::Cdpcl => "cdpcl",
        }
    }

    /// Loss weights actually applied: slot 1 covers PCL/UPCL, slot 2 HPCL.
    fn effective_lambdas(&self, cfg: &LossConfig) -> (f64, f64) {
        match self {
            Ablation::Baseline => (0.0, 0.0),
            Ablation::Pcl | Ablation::Upcl => (cfg.lambda1, 0.0),
            Ablation::Hpcl => (0.0, cfg.lambda2),
            Ablation::Cdpcl => (cfg.lambda1, cfg.lambda2),
        }
    }
}

/// Everything `train` needs; parsed from a line-based `key = value` file.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub classes: usize,
    pub feat_dim: usize,
    pub batch: usize,
    pub iters: u64,
    pub base_lr: f64,
    pub m_p: f64,
    pub m_a: f64,
    pub m_u: f64,
    pub loss: LossConfig,
    pub ablation: Ablation,
    /// Steps trained with the contrastive weights forced to zero (default
    /// 250, ~iters/8). The published method starts from a pretrained
    /// backbone whose class features are already separated; from random
    /// init the off-diagonal prototype similarities begin near 1, H clamps
    /// to its floor, and the HPCL logits explode. A short segmentation-only
    /// warm-up is the desk-scale stand-in for that pretraining.
    pub warmup_iters: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            seed: 0,
            classes: 6,
            feat_dim: 32,
            batch: 8,
            iters: 2000,
            base_lr: 1e-2,
            m_p: 0.9,
            m_a: 0.9,
            m_u: 0.9,
            loss: LossConfig::default(),
            ablation: Ablation::Cdpcl,
            warmup_iters: 250,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CdpclError::Config(format!("line {}: expected 'key = value'", ln + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                CdpclError::Config(format!("line {}: bad {} value '{}'", ln + 1, what, value))
            };
            macro_rules! num {
                () => {
                    value.parse().map_err(|_| bad(key))?
                };
            }
            match key {
                "data_dir" => cfg.data_dir = value.into(),
                "out_dir" => cfg.out_dir = value.into(),
                "seed" => cfg.seed = num!(),
                "classes" => cfg.classes = num!(),
                "feat_dim" => cfg.feat_dim = num!(),
                "batch" => cfg.batch = num!(),
                "iters" => cfg.iters = num!(),
                "base_lr" => cfg.base_lr = num!(),
                "m_p" => cfg.m_p = num!(),
                "m_a" => cfg.m_a = num!(),
                "m_u" => cfg.m_u = num!(),
                "tau" => cfg.loss.tau = num!(),
                "tau_u" => cfg.loss.tau_u = num!(),
                "tau_h" => cfg.loss.tau_h = num!(),
                "lambda1" => cfg.loss.lambda1 = num!(),
                "lambda2" => cfg.loss.lambda2 = num!(),
                "ablation" => cfg.ablation = value.parse()?,
                "include_positive" => {
                    cfg.loss.include_positive_in_denominator = parse_bool(value).ok_or_else(|| bad(key))?
                }
                "normalize_features" => {
                    cfg.loss.normalize_features = parse_bool(value).ok_or_else(|| bad(key))?
                }
                "warmup_iters" => cfg.warmup_iters = num!(),
                "checkpoint_every" => cfg.checkpoint_every = num!(),
                _ => return Err(CdpclError::Config(format!("line {}: unknown key '{key}'", ln + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| CdpclError::Io { path: path.into(), source: e })?;
        Self::parse(&text)
    }

    /// Serialize back into the `key = value` format accepted by [`parse`].
    ///
    /// [`parse`]: TrainConfig::parse
    pub fn to_text(&self) -> String {
        format!(
            "data_dir = {}\nout_dir = {}\nseed = {}\nclasses = {}\nfeat_dim = {}\n\
             batch = {}\niters = {}\nbase_lr = {}\nm_p = {}\nm_a = {}\nm_u = {}\n\
             tau = {}\ntau_u = {}\ntau_h = {}\nlambda1 = {}\nlambda2 = {}\n\
             ablation = {}\ninclude_positive = {}\nnormalize_features = {}\n\
             warmup_iters = {}\ncheckpoint_every = {}\n",
            self.data_dir.display(),
            self.out_dir.display(),
            self.seed,
            self.classes,
            self.feat_dim,
            self.batch,
            self.iters,
            self.base_lr,
            self.m_p,
            self.m_a,
            self.m_u,
            self.loss.tau,
            self.loss.tau_u,
            self.loss.tau_h,
            self.loss.lambda1,
            self.loss.lambda2,
            self.ablation.as_str(),
            self.loss.include_positive_in_denominator,
            self.loss.normalize_features,
            self.warmup_iters,
            self.checkpoint_every,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.classes < 2 {
            return Err(CdpclError::Config("classes must be >= 2".into()));
        }
        if self.batch == 0 || self.iters == 0 {
            return Err(CdpclError::Config("batch and iters must be >= 1".into()));
        }
        if self.base_lr <= 0.0 {
            return Err(CdpclError::Config("base_lr must be > 0".into()));
        }
        for (name, m) in [("m_p", self.m_p), ("m_a", self.m_a), ("m_u", self.m_u)] {
            if !(0.0..1.0).contains(&m) {
                return Err(CdpclError::Config(format!("{name} must be in [0,1)")));
            }
        }
        Ok(())
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// train state and step

/// One CSV row of the training log.
#[derive(Debug, Clone, Copy)]
pub struct StepLog {
    pub iter: u64,
    pub lr: f64,
    pub l_seg: f64,
    pub l_upcl: f64,
    pub l_hpcl: f64,
    pub l_total: f64,
    pub active_classes: usize,
}

pub const LOG_HEADER: &str = "iter,lr,l_seg,l_upcl,l_hpcl,l_total,active_classes";

impl StepLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iter, self.lr, self.l_seg, self.l_upcl, self.l_hpcl, self.l_total,
            self.active_classes
        )
    }
}

#[derive(Debug)]
pub struct TrainState {
    pub net: SegNet,
    pub opt: SgdMomentum,
    pub bank_src: PrototypeBank,
    pub bank_aug: PrototypeBank,
    pub uncertainty: UncertaintyMatrix,
    pub cfg: TrainConfig,
    pub iter: u64,
    pub rng: ChaCha8Rng,
    pub aug_params: AugParams,
    pub warnings: u64,
}

impl TrainState {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let net = SegNet::new(cfg.classes, cfg.feat_dim, cfg.seed);
        let opt = SgdMomentum::new(&net.params, 0.9);
        Ok(Self {
            opt,
            bank_src: PrototypeBank::new(cfg.classes, cfg.feat_dim, cfg.m_p),
            bank_aug: PrototypeBank::new(cfg.classes, cfg.feat_dim, cfg.m_a),
            uncertainty: UncertaintyMatrix::new(cfg.classes, cfg.feat_dim, cfg.m_u),
            rng: ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x7a21)),
            iter: 0,
            net,
            cfg,
            aug_params: AugParams::default(),
            warnings: 0,
        })
    }

    /// One full optimization step over a source batch.
    pub fn train_step(&mut self, images: &Tensor, labels: &LabelBatch) -> Result<StepLog> {
        if self.iter >= self.cfg.iters {
            return Err(CdpclError::Contract {
                op: "train_step",
                detail: format!("iteration {} past max {}", self.iter, self.cfg.iters),
            });
        }
        let (b, h, w) = (images.shape()[0], images.shape()[2], images.shape()[3]);

        // 1. jitter the source batch (the standard training augmentation,
        // applied in every mode including the baseline), then draw the
        // augmented-domain view as a second jitter on top; two draws per
        // sample in a fixed order
        let mut src_images = Tensor::zeros(images.shape());
        let mut aug_images = Tensor::zeros(images.shape());
        let per = 3 * h * w;
        for bi in 0..b {
            let one = Tensor::new(
                vec![1, 3, h, w],
                images.data()[bi * per..(bi + 1) * per].to_vec(),
            )
            .unwrap();
            let seed: u64 = self.rng.gen();
            let x = augment(&one, &self.aug_params, seed);
            let seed: u64 = self.rng.gen();
            let a = augment(&x, &self.aug_params, seed);
            src_images.data_mut()[bi * per..(bi + 1) * per].copy_from_slice(x.data());
            aug_images.data_mut()[bi * per..(bi + 1) * per].copy_from_slice(a.data());
        }

        // 2-3. source forward (recorded) and frozen augmented branch
        let mut g = Graph::new();
        let pass = self.net.forward(&mut g, &src_images)?;
        let feat_aug = self.net.frozen_forward(&mut g, &aug_images)?;

        // 4. pooled class features on both branches
        let labels_ds = downsample_labels(labels, h / DOWNSAMPLE, w / DOWNSAMPLE)?;
        let (pooled_src, present) =
            pool_class_features_var(&mut g, pass.features, &labels_ds, self.cfg.classes)?;
        let pooled_aug = pool_class_features(g.value(feat_aug), &labels_ds, self.cfg.classes)?;

        // 5. prototype bank EMA updates (detached copies)
        let src_cf = ClassFeatures {
            features: g.value(pooled_src).clone(),
            present: present.clone(),
        };
        self.bank_src.update(&src_cf);
        self.bank_aug.update(&pooled_aug);

        // 6. difference and uncertainty, then the uncertainty EMA
        let valid: Vec<bool> = self
            .bank_src
            .initialized
            .iter()
            .zip(&self.bank_aug.initialized)
            .map(|(&a, &b)| a && b)
            .collect();
        let d = difference_matrix(&self.bank_src.prototypes, &self.bank_aug.prototypes, &valid);
        let (u_cur, wu) = uncertainty_matrix(&d, &valid);
        self.uncertainty.update(&u_cur);

        // 7. similarity and hard-weight matrices
        let (s, ws) = similarity_matrix(
            &self.bank_src.prototypes,
            &self.bank_aug.prototypes,
            &valid,
        );
        let hmat = hard_weight_matrix(&s);
        self.warnings += wu + ws;

        // 8. losses; slot 1 is PCL in pcl mode, UPCL otherwise
        let l_seg = seg_loss(&mut g, pass.logits, labels)?;
        let l_aux1 = if self.cfg.ablation == Ablation::Pcl {
            let pcl_cfg = LossConfig { tau: self.cfg.loss.tau_u, ..self.cfg.loss.clone() };
            pcl_loss(&mut g, &self.bank_src, pooled_src, &present, &pcl_cfg)?
        } else {
            upcl_loss(&mut g, &self.bank_src, &self.uncertainty.u, pooled_src, &present, &self.cfg.loss)?
        };
        let l_aux2 = hpcl_loss(&mut g, &self.bank_aug, &hmat, pooled_src, &present, &self.cfg.loss)?;
        let (mut lam1, mut lam2) = self.cfg.ablation.effective_lambdas(&self.cfg.loss);
        if self.iter < self.cfg.warmup_iters {
            (lam1, lam2) = (0.0, 0.0);
        }
        let eff = LossConfig { lambda1: lam1, lambda2: lam2, ..self.cfg.loss.clone() };
        let l_total = total_loss(&mut g, l_seg, Some(l_aux1), Some(l_aux2), &eff)?;

        let log = StepLog {
            iter: self.iter,
            lr: poly_lr(self.iter, self.cfg.iters, self.cfg.base_lr, 0.9),
            l_seg: g.value(l_seg).item(),
            l_upcl: g.value(l_aux1).item(),
            l_hpcl: g.value(l_aux2).item(),
            l_total: g.value(l_total).item(),
            active_classes: present
                .iter()
                .zip(&self.bank_src.initialized)
                .filter(|(&p, &i)| p && i)
                .count(),
        };
        if !log.l_total.is_finite() {
            return Err(CdpclError::NonFinite {
                iter: self.iter,
                detail: format!(
                    "l_seg={} l_upcl={} l_hpcl={}",
                    log.l_seg, log.l_upcl, log.l_hpcl
                ),
            });
        }

        // 9. backward
        g.backward(l_total)?;
        self.warnings += g.warning_count();

        // 10. SGD with momentum at the scheduled rate
        let grads: Vec<Option<Tensor>> =
            pass.param_vars.iter().map(|&v| g.take_grad(v)).collect();
        for grad in grads.iter().flatten() {
            if !grad.all_finite() {
                return Err(CdpclError::NonFinite {
                    iter: self.iter,
                    detail: "non-finite parameter gradient".into(),
                });
            }
        }
        self.opt.step(&mut self.net.params, &grads, log.lr);

        // 11. advance
        self.iter += 1;
        Ok(log)
    }
}

// ---------------------------------------------------------------------------
// checkpointing

fn flags_tensor(rows: &[&[bool]]) -> Tensor {
    let c = rows[0].len();
    let data: Vec<f64> = rows
        .iter()
        .flat_map(|r| r.iter().map(|&b| if b { 1.0 } else { 0.0 }))
        .collect();
    Tensor::new(vec![rows.len(), c], data).unwrap()
}

/// Persist network parameters, momentum buffers, both banks, and the
/// uncertainty state.
pub fn save_state(state: &TrainState, path: &Path) -> Result<()> {
    let mut tensors: Vec<(String, Tensor)> = state.net.params.clone();
    for ((name, _), buf) in state.net.params.iter().zip(&state.opt.buffers) {
        tensors.push((format!("mom_{name}"), buf.clone()));
    }
    tensors.push(("proto_src".into(), state.bank_src.prototypes.clone()));
    tensors.push(("proto_aug".into(), state.bank_aug.prototypes.clone()));
    tensors.push((
        "proto_init_flags".into(),
        flags_tensor(&[&state.bank_src.initialized, &state.bank_aug.initialized]),
    ));
    tensors.push(("uncertainty_u".into(), state.uncertainty.u.clone()));
    tensors.push((
        "uncertainty_init".into(),
        Tensor::scalar(if state.uncertainty.initialized { 1.0 } else { 0.0 }),
    ));
    tensors.push(("iteration".into(), Tensor::scalar(state.iter as f64)));
    write_checkpoint(path, &tensors)
}

/// Restore a state written by [`save_state`]. The RNG restarts from the
/// config seed, so this is meant for evaluation, not for resuming training
/// mid-run.
pub fn load_state(cfg: TrainConfig, path: &Path) -> Result<TrainState> {
    let tensors = read_checkpoint(path)?;
    let lookup = |name: &str| -> Result<&Tensor> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CdpclError::Data(format!("{}: missing tensor '{name}'", path.display())))
    };
    let mut state = TrainState::new(cfg)?;
    for (name, p) in state.net.params.iter_mut() {
        *p = lookup(name)?.clone();
    }
    for ((name, _), buf) in state.net.params.iter().zip(state.opt.buffers.iter_mut()) {
        *buf = lookup(&format!("mom_{name}"))?.clone();
    }
    state.bank_src.prototypes = lookup("proto_src")?.clone();
    state.bank_aug.prototypes = lookup("proto_aug")?.clone();
    let flags = lookup("proto_init_flags")?;
    let c = state.cfg.classes;
    state.bank_src.initialized = flags.data()[..c].iter().map(|&v| v != 0.0).collect();
    state.bank_aug.initialized = flags.data()[c..2 * c].iter().map(|&v| v != 0.0).collect();
    state.uncertainty.u = lookup("uncertainty_u")?.clone();
    state.uncertainty.initialized = lookup("uncertainty_init")?.item() != 0.0;
    state.iter = lookup("iteration")?.item() as u64;
    Ok(state)
}

/// Load only the network from a checkpoint, for evaluation.
pub fn load_net(path: &Path, classes: usize, feat_dim: usize) -> Result<SegNet> {
    let cfg = TrainConfig { classes, feat_dim, ..TrainConfig::default() };
    Ok(load_state(cfg, path)?.net)
}

// ---------------------------------------------------------------------------
// full loop

/// Assemble `B x 3 x H x W` images and the label batch for given sample
/// indices.
pub fn batch_tensor(ds: &Dataset, idxs: &[usize]) -> (Tensor, LabelBatch) {
    let (h, w) = (ds.height, ds.width);
    let per = 3 * h * w;
    let mut images = Tensor::zeros(&[idxs.len(), 3, h, w]);
    let mut labels = Vec::with_capacity(idxs.len() * h * w);
    for (bi, &i) in idxs.iter().enumerate() {
        images.data_mut()[bi * per..(bi + 1) * per].copy_from_slice(ds.samples[i].image.data());
        labels.extend_from_slice(&ds.samples[i].labels);
    }
    (images, LabelBatch::new(idxs.len(), h, w, labels).unwrap())
}

/// Artifacts of a completed run.
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub final_loss: f64,
}

/// Run the full loop over the source split at `data_dir/src_train`, logging
/// one CSV row per step and checkpointing periodically plus at the end. A
/// non-finite loss aborts after dumping the state next to the log.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ds = read_dataset(&cfg.data_dir.join("src_train"))?;
    if ds.classes != cfg.classes {
        return Err(CdpclError::Config(format!(
            "dataset has {} classes, config says {}",
            ds.classes, cfg.classes
        )));
    }
    if ds.samples.is_empty() {
        return Err(CdpclError::Config("source split is empty".into()));
    }
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CdpclError::Io { path: cfg.out_dir.clone(), source: e })?;
    let cfg_path = cfg.out_dir.join("config_used.cfg");
    fs::write(&cfg_path, cfg.to_text())
        .map_err(|e| CdpclError::Io { path: cfg_path, source: e })?;
    let log_path = cfg.out_dir.join("train_log.csv");
    let mut log_file = fs::File::create(&log_path)
        .map_err(|e| CdpclError::Io { path: log_path.clone(), source: e })?;
    writeln!(log_file, "{LOG_HEADER}")
        .map_err(|e| CdpclError::Io { path: log_path.clone(), source: e })?;

    let mut state = TrainState::new(cfg.clone())?;
    let mut final_loss = f64::NAN;
    for it in 0..cfg.iters {
        let idxs: Vec<usize> =
            (0..cfg.batch).map(|_| state.rng.gen_range(0..ds.samples.len())).collect();
        let (images, labels) = batch_tensor(&ds, &idxs);
        let row = match state.train_step(&images, &labels) {
            Ok(row) => row,
            Err(e) => {
                let dump = cfg.out_dir.join("abort_state.ckpt");
                save_state(&state, &dump)?;
                return Err(e);
            }
        };
        final_loss = row.l_total;
        writeln!(log_file, "{}", row.csv_row())
            .map_err(|e| CdpclError::Io { path: log_path.clone(), source: e })?;
        let done = it + 1 == cfg.iters;
        if done || (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0) {
            let name = if done {
                "ckpt_final.ckpt".to_string()
            } else {
                format!("ckpt_{:06}.ckpt", it + 1)
            };
            save_state(&state, &cfg.out_dir.join(name))?;
        }
    }
    Ok(TrainOutcome {
        checkpoint: cfg.out_dir.join("ckpt_final.ckpt"),
        log: log_path,
        final_loss,
    })
}
