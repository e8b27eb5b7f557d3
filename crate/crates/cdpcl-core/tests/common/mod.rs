//! Independent scalar-loop oracles. Everything here is written with plain
//! nested loops over indices, deliberately sharing no code with the library
//! implementations it checks.

#![allow(dead_code)]

use cdpcl_core::numerics::Tensor;
use cdpcl_core::protobank::LabelBatch;
use rand::Rng as _;
use rand_chacha::ChaCha8Rng;

pub const IGNORE: u8 = 255;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Masked-average pooling by brute-force per-pixel loop.
/// `features` is `B x N x h x w`; labels `B x H x W` with `H = h * sy`.
pub fn oracle_pool(
    features: &Tensor,
    labels: &LabelBatch,
    num_classes: usize,
) -> (Vec<Vec<f64>>, Vec<bool>) {
    let (b, n, h, w) = (
        features.shape()[0],
        features.shape()[1],
        features.shape()[2],
        features.shape()[3],
    );
    let (sy, sx) = (labels.h / h, labels.w / w);
    let mut rows = vec![vec![0.0; n]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let l = labels.at(bi, y * sy, x * sx);
                if l == IGNORE {
                    continue;
                }
                let c = l as usize;
                counts[c] += 1;
                for ni in 0..n {
                    rows[c][ni] += features.data()[((bi * n + ni) * h + y) * w + x];
                }
            }
        }
    }
    for c in 0..num_classes {
        if counts[c] > 0 {
            for v in &mut rows[c] {
                *v /= counts[c] as f64;
            }
        }
    }
    (rows, counts.iter().map(|&c| c > 0).collect())
}

/// Per-pixel cross-entropy by direct softmax loop.
pub fn oracle_seg_loss(logits: &Tensor, labels: &LabelBatch) -> f64 {
    let (b, c, h, w) = (
        logits.shape()[0],
        logits.shape()[1],
        logits.shape()[2],
        logits.shape()[3],
    );
    let mut total = 0.0;
    let mut count = 0usize;
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let l = labels.at(bi, y, x);
                if l == IGNORE {
                    continue;
                }
                count += 1;
                let get = |ci: usize| logits.data()[((bi * c + ci) * h + y) * w + x];
                let mx = (0..c).map(get).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..c).map(|ci| (get(ci) - mx).exp()).sum();
                let p = (get(l as usize) - mx).exp() / z;
                total -= p.ln();
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = norm(v).max(1e-12);
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub struct OracleContrast<'a> {
    /// prototype rows, one per class
    pub protos: &'a [Vec<f64>],
    /// class-feature rows
    pub feats: &'a [Vec<f64>],
    pub active: &'a [usize],
    /// element-wise prototype weights (U rows), applied before normalization
    pub u: Option<&'a [Vec<f64>]>,
    /// hard-weight matrix, scaling logits: pos * H[i][i], neg / H[i][k]
    pub h: Option<&'a [Vec<f64>]>,
    pub tau: f64,
    pub include_positive: bool,
    pub normalize: bool,
}

/// Literal sum-of-terms evaluation of the PCL / UPCL / HPCL family.
pub fn oracle_contrast(p: &OracleContrast) -> f64 {
    let n = p.feats[0].len();
    let mut total = 0.0;
    for &i in p.active {
        let c_i = if p.normalize { normalized(&p.feats[i]) } else { p.feats[i].clone() };
        let proto = |k: usize| -> Vec<f64> {
            let mut row = p.protos[k].clone();
            if let Some(u) = p.u {
                for (r, uv) in row.iter_mut().zip(&u[k]) {
                    *r *= uv;
                }
            }
            if p.normalize {
                normalized(&row)
            } else {
                row
            }
        };
        let logit = |k: usize| -> f64 {
            let q = proto(k);
            debug_assert_eq!(q.len(), n);
            let mut d = dot(&q, &c_i);
            if let Some(h) = p.h {
                if k == i {
                    d *= h[i][i];
                } else {
                    d /= h[i][k];
                }
            }
            d / p.tau
        };
        let denom: Vec<usize> = p
            .active
            .iter()
            .copied()
            .filter(|&k| p.include_positive || k != i)
            .collect();
        if denom.is_empty() {
            continue;
        }
        let z: f64 = denom.iter().map(|&k| logit(k).exp()).sum();
        total += -(logit(i).exp() / z).ln();
    }
    total
}

/// Manhattan difference matrix by loops.
pub fn oracle_difference(src: &[Vec<f64>], aug: &[Vec<f64>], valid: &[bool]) -> Vec<Vec<f64>> {
    let n = src[0].len();
    src.iter()
        .zip(aug)
        .zip(valid)
        .map(|((s, a), &v)| {
            if v {
                s.iter().zip(a).map(|(x, y)| (x - y).abs()).collect()
            } else {
                vec![0.0; n]
            }
        })
        .collect()
}

/// Column-wise softmax over valid classes, subtracted from one.
pub fn oracle_uncertainty(d: &[Vec<f64>], valid: &[bool]) -> Vec<Vec<f64>> {
    let c = d.len();
    let n = d[0].len();
    let mut u = vec![vec![1.0; n]; c];
    if valid.iter().filter(|&&v| v).count() < 2 {
        return u;
    }
    for ni in 0..n {
        let z: f64 = (0..c).filter(|&ci| valid[ci]).map(|ci| d[ci][ni].exp()).sum();
        for ci in 0..c {
            if valid[ci] {
                u[ci][ni] = 1.0 - d[ci][ni].exp() / z;
            }
        }
    }
    u
}

/// Cosine similarity matrix by loops; neutral rows for invalid classes.
pub fn oracle_similarity(src: &[Vec<f64>], aug: &[Vec<f64>], valid: &[bool]) -> Vec<Vec<f64>> {
    let c = src.len();
    let mut s = vec![vec![0.0; c]; c];
    for i in 0..c {
        for k in 0..c {
            let ok = valid[i] && valid[k] && norm(&src[i]) >= 1e-12 && norm(&aug[k]) >= 1e-12;
            s[i][k] = if ok {
                dot(&src[i], &aug[k]) / (norm(&src[i]) * norm(&aug[k]))
            } else if i == k {
                1.0
            } else {
                0.0
            };
        }
    }
    s
}

pub fn oracle_hard_weight(s: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let c = s.len();
    let mut h = vec![vec![0.0; c]; c];
    for i in 0..c {
        for k in 0..c {
            let v = if i == k { s[i][k].abs() } else { (1.0 - s[i][k]).abs() };
            h[i][k] = v.max(1e-4);
        }
    }
    h
}

/// Per-class IoU directly from label maps, no confusion matrix.
pub fn oracle_miou(truth: &[u8], pred: &[u8], num_classes: usize) -> (Vec<Option<f64>>, f64) {
    let mut per = Vec::with_capacity(num_classes);
    let mut sum = 0.0;
    let mut counted = 0usize;
    for c in 0..num_classes {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fne = 0usize;
        for (&t, &p) in truth.iter().zip(pred) {
            if t == IGNORE {
                continue;
            }
            let tc = t as usize == c;
            let pc = p as usize == c;
            match (tc, pc) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fne += 1,
                _ => {}
            }
        }
        if tp + fp + fne == 0 {
            per.push(None);
        } else {
            let iou = tp as f64 / (tp + fp + fne) as f64;
            per.push(Some(iou));
            sum += iou;
            counted += 1;
        }
    }
    let mean = if counted == 0 { 0.0 } else { sum / counted as f64 };
    (per, mean)
}

pub fn rows_to_tensor(rows: &[Vec<f64>]) -> Tensor {
    let c = rows.len();
    let n = rows[0].len();
    Tensor::new(vec![c, n], rows.iter().flatten().copied().collect()).unwrap()
}

pub fn tensor_to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let (c, n) = (t.shape()[0], t.shape()[1]);
    (0..c).map(|i| t.data()[i * n..(i + 1) * n].to_vec()).collect()
}
