//! Class-wise feature pooling and EMA prototype banks.
//!
//! Features are pooled per class by masked averaging at feature resolution;
//! banks hold one EMA centroid per class for the source and augmented
//! domains. Bank contents are plain buffers: gradients never flow into them.

use crate::error::{CdpclError, Result};
use crate::numerics::{GradOp, Graph, Tensor, Var};

/// Label value excluded from pooling, losses, and evaluation.
pub const IGNORE_INDEX: u8 = 255;

/// Batch of dense label maps, `B x H x W`, values in `[0, C) ∪ {255}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelBatch {
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl LabelBatch {
    pub fn new(b: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != b * h * w {
            return Err(CdpclError::Shape {
                op: "LabelBatch::new",
                detail: format!("{}x{}x{} needs {} labels, got {}", b, h, w, b * h * w, data.len()),
            });
        }
        Ok(Self { b, h, w, data })
    }

    pub fn at(&self, bi: usize, y: usize, x: usize) -> u8 {
        self.data[(bi * self.h + y) * self.w + x]
    }
}

/// Per-class masked-average features with presence flags. Rows for absent
/// classes are all-zero and excluded downstream.
#[derive(Debug, Clone)]
pub struct ClassFeatures {
    /// `C x N`, one row per class.
    pub features: Tensor,
    pub present: Vec<bool>,
}

/// Per-class EMA feature centroids with first-seen initialization.
#[derive(Debug, Clone)]
pub struct PrototypeBank {
    /// `C x N`.
    pub prototypes: Tensor,
    pub initialized: Vec<bool>,
    pub momentum: f64,
}

impl PrototypeBank {
    pub fn new(num_classes: usize, feat_dim: usize, momentum: f64) -> Self {
        assert!((0.0..1.0).contains(&momentum), "momentum must be in [0,1)");
        Self {
            prototypes: Tensor::zeros(&[num_classes, feat_dim]),
            initialized: vec![false; num_classes],
            momentum,
        }
    }

    /// EMA update on present classes; first sighting bypasses the EMA.
    /// Absent classes are untouched.
    pub fn update(&mut self, cf: &ClassFeatures) {
        debug_assert_eq!(self.prototypes.shape(), cf.features.shape());
        let (c, n) = (self.prototypes.shape()[0], self.prototypes.shape()[1]);
        let m = self.momentum;
        for ci in 0..c {
            if !cf.present[ci] {
                continue;
            }
            let row = &cf.features.data()[ci * n..(ci + 1) * n];
            let dst = &mut self.prototypes.data_mut()[ci * n..(ci + 1) * n];
            if self.initialized[ci] {
                for (d, s) in dst.iter_mut().zip(row) {
                    *d = m * *d + (1.0 - m) * s;
                }
            } else {
                dst.copy_from_slice(row);
                self.initialized[ci] = true;
            }
        }
    }
}

/// Nearest-neighbor label downsampling with fixed top-left offset.
/// `H % h == 0` and `W % w == 0` required.
pub fn downsample_labels(labels: &LabelBatch, h: usize, w: usize) -> Result<LabelBatch> {
    if h == 0 || w == 0 || labels.h % h != 0 || labels.w % w != 0 {
        return Err(CdpclError::Shape {
            op: "downsample_labels",
            detail: format!("{}x{} not an integer multiple of {}x{}", labels.h, labels.w, h, w),
        });
    }
    let (sy, sx) = (labels.h / h, labels.w / w);
    let mut data = Vec::with_capacity(labels.b * h * w);
    for bi in 0..labels.b {
        for y in 0..h {
            for x in 0..w {
                data.push(labels.at(bi, y * sy, x * sx));
            }
        }
    }
    LabelBatch::new(labels.b, h, w, data)
}

fn check_labels(labels: &LabelBatch, num_classes: usize) -> Result<()> {
    for &l in &labels.data {
        if l != IGNORE_INDEX && l as usize >= num_classes {
            return Err(CdpclError::Data(format!(
                "label value {} outside [0,{}) and not ignore index {}",
                l, num_classes, IGNORE_INDEX
            )));
        }
    }
    Ok(())
}

/// Plain (non-differentiable) class pooling. `features` is `B x N x h x w`;
/// labels are downsampled from `B x H x W` to feature resolution first.
pub fn pool_class_features(
    features: &Tensor,
    labels: &LabelBatch,
    num_classes: usize,
) -> Result<ClassFeatures> {
    let (pooled, present, _) = pool_impl(features, labels, num_classes)?;
    Ok(ClassFeatures { features: pooled, present })
}

/// Shared pooling kernel; also returns per-class pixel counts.
fn pool_impl(
    features: &Tensor,
    labels: &LabelBatch,
    num_classes: usize,
) -> Result<(Tensor, Vec<bool>, Vec<u64>)> {
    if features.shape().len() != 4 || features.shape()[0] != labels.b {
        return Err(CdpclError::Shape {
            op: "pool_class_features",
            detail: format!(
                "features {:?} incompatible with labels {}x{}x{}",
                features.shape(),
                labels.b,
                labels.h,
                labels.w
            ),
        });
    }
    check_labels(labels, num_classes)?;
    let (b, n, h, w) = (
        features.shape()[0],
        features.shape()[1],
        features.shape()[2],
        features.shape()[3],
    );
    let ds = downsample_labels(labels, h, w)?;
    let mut sums = Tensor::zeros(&[num_classes, n]);
    let mut counts = vec![0u64; num_classes];
    let fd = features.data();
    {
        let sd = sums.data_mut();
        for bi in 0..b {
            for y in 0..h {
                for x in 0..w {
                    let l = ds.at(bi, y, x);
                    if l == IGNORE_INDEX {
                        continue;
                    }
                    let c = l as usize;
                    counts[c] += 1;
                    let pix = (bi * n * h + y) * w + x;
                    let row = &mut sd[c * n..(c + 1) * n];
                    for (ni, slot) in row.iter_mut().enumerate() {
                        *slot += fd[pix + ni * h * w];
                    }
                }
            }
        }
        for c in 0..num_classes {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for v in &mut sd[c * n..(c + 1) * n] {
                    *v *= inv;
                }
            }
        }
    }
    let present = counts.iter().map(|&c| c > 0).collect();
    Ok((sums, present, counts))
}

struct PoolOp {
    ds_labels: LabelBatch,
    counts: Vec<u64>,
    num_classes: usize,
}

impl GradOp for PoolOp {
    fn name(&self) -> &'static str {
        "pool_class_features"
    }
    fn input_grads(
        &self,
        inputs: &[&Tensor],
        _o: &Tensor,
        g: &Tensor,
        _n: &[bool],
    ) -> Vec<Option<Tensor>> {
        let feats = inputs[0];
        let (b, n, h, w) = (
            feats.shape()[0],
            feats.shape()[1],
            feats.shape()[2],
            feats.shape()[3],
        );
        let mut gx = Tensor::zeros(feats.shape());
        let gd = g.data();
        let gxd = gx.data_mut();
        for bi in 0..b {
            for y in 0..h {
                for x in 0..w {
                    let l = self.ds_labels.at(bi, y, x);
                    if l == IGNORE_INDEX {
                        continue;
                    }
                    let c = l as usize;
                    debug_assert!(c < self.num_classes);
                    let inv = 1.0 / self.counts[c] as f64;
                    let pix = (bi * n * h + y) * w + x;
                    for ni in 0..n {
                        gxd[pix + ni * h * w] += gd[c * n + ni] * inv;
                    }
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Differentiable class pooling on the graph. Returns the pooled `C x N`
/// variable and presence flags; gradient distributes `1/count_c` to each
/// contributing pixel.
pub fn pool_class_features_var(
    graph: &mut Graph,
    features: Var,
    labels: &LabelBatch,
    num_classes: usize,
) -> Result<(Var, Vec<bool>)> {
    let (pooled, present, counts) = pool_impl(graph.value(features), labels, num_classes)?;
    let ds = downsample_labels(
        labels,
        graph.value(features).shape()[2],
        graph.value(features).shape()[3],
    )?;
    let var = graph.record(
        Box::new(PoolOp { ds_labels: ds, counts, num_classes }),
        &[features],
        pooled,
    );
    Ok((var, present))
}
