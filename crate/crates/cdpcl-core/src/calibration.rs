//! Calibration matrices: difference matrix D, uncertainty probability
//! matrix U, cosine similarity matrix S, and hard-weighted matrix H.
//!
//! All functions are pure over their inputs except [`UncertaintyMatrix::update`].
//! Classes never seen in training receive neutral weights (U = 1, H diag = 1,
//! H off-diag = 1): they contribute no loss terms anyway.

use crate::numerics::{Tensor, GUARD_EPS};

/// Lower clamp on H entries; the HPCL denominator divides by `H[i][k]`,
/// which is unbounded as S approaches 1.
pub const EPS_H: f64 = 1e-4;

/// EMA-tracked uncertainty probability matrix, `C x N`.
#[derive(Debug, Clone)]
pub struct UncertaintyMatrix {
    pub u: Tensor,
    pub momentum: f64,
    pub initialized: bool,
}

impl UncertaintyMatrix {
    pub fn new(num_classes: usize, feat_dim: usize, momentum: f64) -> Self {
        Self {
            u: Tensor::filled(&[num_classes, feat_dim], 1.0),
            momentum,
            initialized: false,
        }
    }

    /// EMA blend with the current matrix; the first call bypasses the EMA.
    pub fn update(&mut self, current: &Tensor) {
        debug_assert_eq!(self.u.shape(), current.shape());
        if self.initialized {
            let m = self.momentum;
            for (u, c) in self.u.data_mut().iter_mut().zip(current.data()) {
                *u = m * *u + (1.0 - m) * c;
            }
        } else {
            self.u = current.clone();
            self.initialized = true;
        }
    }
}

/// Elementwise Manhattan difference `|src - aug|` on valid rows; invalid
/// rows zero.
pub fn difference_matrix(proto_src: &Tensor, proto_aug: &Tensor, valid: &[bool]) -> Tensor {
    debug_assert_eq!(proto_src.shape(), proto_aug.shape());
    let (c, n) = (proto_src.shape()[0], proto_src.shape()[1]);
    let mut d = Tensor::zeros(&[c, n]);
    let dd = d.data_mut();
    for ci in 0..c {
        if !valid[ci] {
            continue;
        }
        for ni in 0..n {
            let idx = ci * n + ni;
            dd[idx] = (proto_src.data()[idx] - proto_aug.data()[idx]).abs();
        }
    }
    d
}

/// Per-feature-dimension softmax of D over valid classes, subtracted from
/// one. Invalid rows are set to 1 (neutral). With fewer than two valid
/// classes the softmax is degenerate: calibration is skipped, the whole
/// matrix is ones, and a warning is counted in the return value.
pub fn uncertainty_matrix(d: &Tensor, valid: &[bool]) -> (Tensor, u64) {
    let (c, n) = (d.shape()[0], d.shape()[1]);
    let valid_count = valid.iter().filter(|&&v| v).count();
    let mut u = Tensor::filled(&[c, n], 1.0);
    if valid_count < 2 {
        return (u, 1);
    }
    let dd = d.data();
    let ud = u.data_mut();
    for ni in 0..n {
        let mut mx = f64::NEG_INFINITY;
        for ci in 0..c {
            if valid[ci] {
                mx = mx.max(dd[ci * n + ni]);
            }
        }
        let mut sum = 0.0;
        for ci in 0..c {
            if valid[ci] {
                sum += (dd[ci * n + ni] - mx).exp();
            }
        }
        for ci in 0..c {
            if valid[ci] {
                ud[ci * n + ni] = 1.0 - (dd[ci * n + ni] - mx).exp() / sum;
            }
        }
    }
    (u, 0)
}

/// Cosine similarity `S[i][k] = cos(src_i, aug_k)`, `C x C`. Rows or columns
/// of invalid classes are set so that H becomes neutral (`S[i][i] = 1`,
/// `S[i][k] = 0`); a zero-norm valid row is skipped the same way with a
/// warning counted.
pub fn similarity_matrix(proto_src: &Tensor, proto_aug: &Tensor, valid: &[bool]) -> (Tensor, u64) {
    debug_assert_eq!(proto_src.shape(), proto_aug.shape());
    let (c, n) = (proto_src.shape()[0], proto_src.shape()[1]);
    let norm = |t: &Tensor, row: usize| -> f64 {
        t.data()[row * n..(row + 1) * n]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    };
    let mut warnings = 0u64;
    let mut usable = vec![false; c];
    for ci in 0..c {
        if !valid[ci] {
            continue;
        }
        if norm(proto_src, ci) < GUARD_EPS || norm(proto_aug, ci) < GUARD_EPS {
            warnings += 1;
        } else {
            usable[ci] = true;
        }
    }
    let mut s = Tensor::zeros(&[c, c]);
    for i in 0..c {
        for k in 0..c {
            let v = if usable[i] && usable[k] {
                let a = &proto_src.data()[i * n..(i + 1) * n];
                let b = &proto_aug.data()[k * n..(k + 1) * n];
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                dot / (norm(proto_src, i) * norm(proto_aug, k))
            } else if i == k {
                1.0
            } else {
                0.0
            };
            s.set2(i, k, v);
        }
    }
    (s, warnings)
}

/// Hard-weighted matrix `H = abs(M - E - S)`: `H[i][i] = |S[i][i]|` and
/// `H[i][k] = |1 - S[i][k]|` off the diagonal, clamped below at [`EPS_H`].
pub fn hard_weight_matrix(s: &Tensor) -> Tensor {
    let c = s.shape()[0];
    let mut h = Tensor::zeros(&[c, c]);
    for i in 0..c {
        for k in 0..c {
            let v = if i == k { s.at2(i, k).abs() } else { (1.0 - s.at2(i, k)).abs() };
            h.set2(i, k, v.max(EPS_H));
        }
    }
    h
}
