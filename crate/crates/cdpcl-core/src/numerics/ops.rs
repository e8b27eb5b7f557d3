//! Primitive differentiable operations.
//!
//! Elementwise binaries accept equal shapes or a scalar on either side;
//! anything richer goes through `broadcast_to`. log/div/l2_normalize clamp
//! denominators at [`GUARD_EPS`] and count a warning on the graph.

use super::graph::{GradOp, Graph, Var};
use super::tensor::Tensor;
use crate::error::{CdpclError, Result};

/// Numeric guard for log arguments, divisors and norms.
pub const GUARD_EPS: f64 = 1e-12;

fn shape_err(op: &'static str, detail: String) -> CdpclError {
    CdpclError::Shape { op, detail }
}

/// Split a shape around `axis` into (outer, axis_len, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(shape_err(op, format!("axis {} out of range for shape {:?}", axis, shape)));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// elementwise binaries

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

struct BinOp {
    kind: BinKind,
}

/// (len, is_scalar_a, is_scalar_b) layout of a binary op.
fn bin_layout(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Vec<usize>, bool, bool)> {
    if a.shape() == b.shape() {
        Ok((a.shape().to_vec(), false, false))
    } else if a.is_scalar() {
        Ok((b.shape().to_vec(), true, false))
    } else if b.is_scalar() {
        Ok((a.shape().to_vec(), false, true))
    } else {
        Err(shape_err(op, format!("incompatible shapes {:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn reduce_to_scalar(g: &[f64]) -> Tensor {
    Tensor::scalar(g.iter().sum())
}

impl GradOp for BinOp {
    fn name(&self) -> &'static str {
        match self.kind {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
            BinKind::Div => "div",
        }
    }

    fn input_grads(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        out_grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let g = out_grad.data();
        let sa = a.is_scalar() && !b.is_scalar();
        let sb = b.is_scalar() && !a.is_scalar();
        let av = |i: usize| if sa { a.data()[0] } else { a.data()[i] };
        let bv = |i: usize| if sb { b.data()[0] } else { b.data()[i] };

        let full = |vals: Vec<f64>, scalar: bool| -> Tensor {
            if scalar {
                reduce_to_scalar(&vals)
            } else {
                Tensor::new(out_grad.shape().to_vec(), vals).expect("bin grad shape")
            }
        };

        let ga = if needs[0] {
            let vals: Vec<f64> = match self.kind {
                BinKind::Add | BinKind::Sub => g.to_vec(),
                BinKind::Mul => g.iter().enumerate().map(|(i, gi)| gi * bv(i)).collect(),
                BinKind::Div => g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| gi / guard_div(bv(i)))
                    .collect(),
            };
            Some(full(vals, sa))
        } else {
            None
        };
        let gb = if needs[1] {
            let vals: Vec<f64> = match self.kind {
                BinKind::Add => g.to_vec(),
                BinKind::Sub => g.iter().map(|gi| -gi).collect(),
                BinKind::Mul => g.iter().enumerate().map(|(i, gi)| gi * av(i)).collect(),
                BinKind::Div => g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| {
                        let d = guard_div(bv(i));
                        -gi * av(i) / (d * d)
                    })
                    .collect(),
            };
            Some(full(vals, sb))
        } else {
            None
        };
        vec![ga, gb]
    }
}

/// Clamp a divisor away from zero, preserving sign.
fn guard_div(d: f64) -> f64 {
    if d.abs() < GUARD_EPS {
        if d.is_sign_negative() {
            -GUARD_EPS
        } else {
            GUARD_EPS
        }
    } else {
        d
    }
}

// ---------------------------------------------------------------------------
// elementwise unaries

struct AbsOp;
impl GradOp for AbsOp {
    fn name(&self) -> &'static str {
        "abs"
    }
    fn input_grads(&self, inputs: &[&Tensor], _o: &Tensor, g: &Tensor, _n: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let vals = x
            .data()
            .iter()
            .zip(g.data())
            .map(|(&xi, &gi)| if xi > 0.0 { gi } else if xi < 0.0 { -gi } else { 0.0 })
            .collect();
        vec![Some(Tensor::new(x.shape().to_vec(), vals).unwrap())]
    }
}

struct ExpOp;
impl GradOp for ExpOp {
    fn name(&self) -> &'static str {
        "exp"
    }
    fn input_grads(&self, _i: &[&Tensor], out: &Tensor, g: &Tensor, _n: &[bool]) -> Vec<Option<Tensor>> {
        let vals = out.data().iter().zip(g.data()).map(|(&o, &gi)| o * gi).collect();
        vec![Some(Tensor::new(out.shape().to_vec(), vals).unwrap())]
    }
}

struct LogOp;
impl GradOp for LogOp {
    fn name(&self) -> &'static str {
        "log"
    }
    fn input_grads(&self, inputs: &[&Tensor], _o: &Tensor, g: &Tensor, _n: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let vals = x
            .data()
            .iter()
            .zip(g.data())
            .map(|(&xi, &gi)| gi / xi.max(GUARD_EPS))
            .collect();
        vec![Some(Tensor::new(x.shape().to_vec(), vals).unwrap())]
    }
}

struct ReluOp;
impl GradOp for ReluOp {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn input_grads(&self, inputs: &[&Tensor], _o: &Tensor, g: &Tensor, _n: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let vals = x
            .data()
            .iter()
            .zip(g.data())
            .map(|(&xi, &gi)| if xi > 0.0 { gi } else { 0.0 })
            .collect();
        vec![Some(Tensor::new(x.shape().to_vec(), vals).unwrap())]
    }
}

// ---------------------------------------------------------------------------
// reductions

struct SumAllOp;
impl GradOp for SumAllOp {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn input_grads(&self, inputs: &[&Tensor], _o: &Tensor, g: &Tensor, _n: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::filled(inputs[0].shape(), g.item()))]
    }
}

struct MeanAllOp;
impl GradOp for MeanAllOp {
    fn name(&self) -> &'static str {
        "mean"
    }
    fn input_grads(&self, inputs: &[&Tensor], _o: &Tensor, g: &Tensor, _n: &[bool]) -> Vec<Option<Tensor>> {
        let n = inputs[0].len() as f64;
        vec![Some(Tensor::filled(inputs[0].shape(), g.item() / n))]
    }
}

struct SumAxisOp {
    axis: usize,
}
impl GradOp for SumAxisOp {
    fn name(&self) -> &'static str {
        "sum_axis"
    }
    fn input_grads(&self, inputs: &[&Tensor], _o: &Tensor, g: &Tensor, _n: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (outer, n, inner) = axis_split(x.shape(), self.axis);
        let mut gx = Tensor::zeros(x.shape());
        let gd = g.data();
        let out = gx.data_mut();
        for o in 0..outer {
            for j in 0..n {
                let base = (o * n + j) * inner;
                let gbase = o * inner;
                for i in 0..inner {
                    out[base + i] = gd[gbase + i];
                }
            }
        }
        vec![Some(gx)]
    }
}

// ---------------------------------------------------------------------------
// matmul

struct MatmulOp;
impl GradOp for MatmulOp {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn input_grads(&self, inputs: &[&Tensor], _o: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let ga = if needs[0] {
            // gA = G · Bᵀ
            let mut t = Tensor::zeros(a.shape());
            let out = t.data_mut();
            for i in 0..m {
                for j in 0..n {
                    let gij = g.data()[i * n + j];
                    for p in 0..k {
                        out[i * k + p] += gij * b.data()[p * n + j];
                    }
                }
            }
            Some(t)
        } else {
            None
        };
        let gb = if needs[1] {
            // gB = Aᵀ · G
            let mut t = Tensor::zeros(b.shape());
            let out = t.data_mut();
            for i in 0..m {
                for p in 0..k {
                    let aip = a.data()[i * k + p];
                    for j in 0..n {
                        out[p * n + j] += aip * g.data()[i * n + j];
                    }
                }
            }
            Some(t)
        } else {
            None
        };
        vec![ga, gb]
    }
}

// ---------------------------------------------------------------------------
// conv2d, NCHW, optional bias; lowered to im2col + GEMM per image

use super::gemm::{col2im, gemm_nn, gemm_nt, im2col};

struct Conv2dOp {
    stride: usize,
    pad: usize,
}

fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Forward convolution. `input` [B,Cin,H,W], `weight` [Cout,Cin,kh,kw].
fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (bsz, cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (cout, kh, kw) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
    let ho = conv_out_dim(h, kh, stride, pad);
    let wo = conv_out_dim(w, kw, stride, pad);
    let kdim = cin * kh * kw;
    let m = ho * wo;
    let mut out = Tensor::zeros(&[bsz, cout, ho, wo]);
    let od = out.data_mut();
    let id = input.data();
    let wd = weight.data();
    let mut col = vec![0.0; kdim * m];
    for b in 0..bsz {
        im2col(&id[b * cin * h * w..(b + 1) * cin * h * w], cin, h, w, kh, kw, stride, pad, ho, wo, &mut col);
        let plane = &mut od[b * cout * m..(b + 1) * cout * m];
        if let Some(bias) = bias {
            for (oc, &bv) in bias.data().iter().enumerate() {
                plane[oc * m..(oc + 1) * m].fill(bv);
            }
        }
        gemm_nn(cout, m, kdim, wd, &col, plane);
    }
    out
}

impl GradOp for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn input_grads(&self, inputs: &[&Tensor], _o: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let input = inputs[0];
        let weight = inputs[1];
        let (stride, pad) = (self.stride, self.pad);
        let (bsz, cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
        let (cout, kh, kw) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
        let (ho, wo) = (g.shape()[2], g.shape()[3]);
        let kdim = cin * kh * kw;
        let m = ho * wo;
        let gd = g.data();
        let id = input.data();
        let wd = weight.data();

        let gi = if needs[0] {
            let mut t = Tensor::zeros(input.shape());
            let out = t.data_mut();
            // W^T as kdim x cout for the patch-gradient GEMM
            let mut wt = vec![0.0; kdim * cout];
            for oc in 0..cout {
                for k in 0..kdim {
                    wt[k * cout + oc] = wd[oc * kdim + k];
                }
            }
            let mut gcol = vec![0.0; kdim * m];
            for b in 0..bsz {
                gcol.fill(0.0);
                gemm_nn(kdim, m, cout, &wt, &gd[b * cout * m..(b + 1) * cout * m], &mut gcol);
                col2im(&gcol, cin, h, w, kh, kw, stride, pad, ho, wo, &mut out[b * cin * h * w..(b + 1) * cin * h * w]);
            }
            Some(t)
        } else {
            None
        };

        let gw = if needs[1] {
            let mut t = Tensor::zeros(weight.shape());
            let out = t.data_mut();
            let mut col = vec![0.0; kdim * m];
            for b in 0..bsz {
                im2col(&id[b * cin * h * w..(b + 1) * cin * h * w], cin, h, w, kh, kw, stride, pad, ho, wo, &mut col);
                gemm_nt(cout, kdim, m, &gd[b * cout * m..(b + 1) * cout * m], &col, out);
            }
            Some(t)
        } else {
            None
        };

        let gb = if needs.len() > 2 && needs[2] {
            let mut t = Tensor::zeros(&[cout]);
            let out = t.data_mut();
            for b in 0..bsz {
                for oc in 0..cout {
                    let obase = ((b * cout) + oc) * ho * wo;
                    out[oc] += gd[obase..obase + ho * wo].iter().sum::<f64>();
                }
            }
            Some(t)
        } else {
            None
        };

        if inputs.len() > 2 {
            vec![gi, gw, gb]
        } else {
            vec![gi, gw]
        }
    }
}

// ---------------------------------------------------------------------------
// softmax / l2_normalize along an axis

struct SoftmaxOp {
    axis: usize,
}
impl GradOp for SoftmaxOp {
    fn name(&self) -> &'static str {
        "softmax"
    }
    fn input_grads(&self, _i: &[&Tensor], out: &Tensor, g: &Tensor, _n: &[bool]) -> Vec<Option<Tensor>> {
        let (outer, n, inner) = axis_split(out.shape(), self.axis);
        let mut gx = Tensor::zeros(out.shape());
        let s = out.data();
        let gd = g.data();
        let gxd = gx.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let mut dot = 0.0;
                for j in 0..n {
                    let idx = (o * n + j) * inner + i;
                    dot += gd[idx] * s[idx];
                }
                for j in 0..n {
                    let idx = (o * n + j) * inner + i;
                    gxd[idx] = s[idx] * (gd[idx] - dot);
                }
            }
        }
        vec![Some(gx)]
    }
}

struct L2NormalizeOp {
    axis: usize,
    eps: f64,
}
impl GradOp for L2NormalizeOp {
    fn name(&self) -> &'static str {
        "l2_normalize"
    }
    fn input_grads(&self, inputs: &[&Tensor], out: &Tensor, g: &Tensor, _n: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (outer, n, inner) = axis_split(x.shape(), self.axis);
        let mut gx = Tensor::zeros(x.shape());
        let xd = x.data();
        let od = out.data();
        let gd = g.data();
        let gxd = gx.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let mut norm2 = 0.0;
                let mut dot = 0.0;
                for j in 0..n {
                    let idx = (o * n + j) * inner + i;
                    norm2 += xd[idx] * xd[idx];
                    dot += gd[idx] * od[idx];
                }
                let norm = norm2.sqrt().max(self.eps);
                for j in 0..n {
                    let idx = (o * n + j) * inner + i;
                    gxd[idx] = (gd[idx] - od[idx] * dot) / norm;
                }
            }
        }
        vec![Some(gx)]
    }
}

// ---------------------------------------------------------------------------
// shape ops

struct UpsampleNearestOp {
    factor: usize,
}
impl GradOp for UpsampleNearestOp {
    fn name(&self) -> &'static str {
        "upsample_nearest"
    }
    fn input_grads(&self, inputs: &[&Tensor], _o: &Tensor, g: &Tensor, _n: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let rank = x.shape().len();
        let (h, w) = (x.shape()[rank - 2], x.shape()[rank - 1]);
        let chans: usize = x.shape()[..rank - 2].iter().product();
        let f = self.factor;
        let (gh, gw) = (h * f, w * f);
        let mut gx = Tensor::zeros(x.shape());
        let gd = g.data();
        let gxd = gx.data_mut();
        for c in 0..chans {
            let ib = c * h * w;
            let ob = c * gh * gw;
            for y in 0..gh {
                let iy = y / f;
                for xo in 0..gw {
                    gxd[ib + iy * w + xo / f] += gd[ob + y * gw + xo];
                }
            }
        }
        vec![Some(gx)]
    }
}

struct SliceOp {
    axis: usize,
    start: usize,
    end: usize,
}
impl GradOp for SliceOp {
    fn name(&self) -> &'static str {
        "slice"
    }
    fn input_grads(&self, inputs: &[&Tensor], _o: &Tensor, g: &Tensor, _n: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (outer, n, inner) = axis_split(x.shape(), self.axis);
        let m = self.end - self.start;
        let mut gx = Tensor::zeros(x.shape());
        let gd = g.data();
        let gxd = gx.data_mut();
        for o in 0..outer {
            for j in 0..m {
                let src = (o * m + j) * inner;
                let dst = (o * n + self.start + j) * inner;
                gxd[dst..dst + inner].copy_from_slice(&gd[src..src + inner]);
            }
        }
        vec![Some(gx)]
    }
}

struct ConcatOp {
    axis: usize,
}
impl GradOp for ConcatOp {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn input_grads(&self, inputs: &[&Tensor], out: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (outer, total, inner) = axis_split(out.shape(), self.axis);
        let gd = g.data();
        let mut offset = 0;
        let mut grads = Vec::with_capacity(inputs.len());
        for (x, need) in inputs.iter().zip(needs) {
            let n = x.shape()[self.axis];
            if *need {
                let mut gx = Tensor::zeros(x.shape());
                let gxd = gx.data_mut();
                for o in 0..outer {
                    for j in 0..n {
                        let src = (o * total + offset + j) * inner;
                        let dst = (o * n + j) * inner;
                        gxd[dst..dst + inner].copy_from_slice(&gd[src..src + inner]);
                    }
                }
                grads.push(Some(gx));
            } else {
                grads.push(None);
            }
            offset += n;
        }
        grads
    }
}

struct BroadcastOp;

/// Strides for reading `src_shape` as if it had `dst_shape` (NumPy alignment:
/// shapes right-aligned, size-1 dims repeat).
fn broadcast_strides(src_shape: &[usize], dst_shape: &[usize]) -> Option<Vec<usize>> {
    let offset = dst_shape.len().checked_sub(src_shape.len())?;
    let mut strides = vec![0usize; dst_shape.len()];
    // row-major strides of src
    let mut src_strides = vec![0usize; src_shape.len()];
    let mut acc = 1;
    for i in (0..src_shape.len()).rev() {
        src_strides[i] = acc;
        acc *= src_shape[i];
    }
    for i in 0..dst_shape.len() {
        if i < offset {
            strides[i] = 0;
        } else {
            let s = src_shape[i - offset];
            if s == dst_shape[i] {
                strides[i] = if s == 1 { 0 } else { src_strides[i - offset] };
            } else if s == 1 {
                strides[i] = 0;
            } else {
                return None;
            }
        }
    }
    Some(strides)
}

fn broadcast_map(src: &Tensor, dst_shape: &[usize], strides: &[usize]) -> Tensor {
    let numel: usize = dst_shape.iter().product();
    let mut out = vec![0.0; numel];
    let mut idx = vec![0usize; dst_shape.len()];
    let sd = src.data();
    for slot in out.iter_mut() {
        let mut off = 0;
        for (i, s) in idx.iter().zip(strides) {
            off += i * s;
        }
        *slot = sd[off];
        // increment multi-index
        for d in (0..dst_shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < dst_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(dst_shape.to_vec(), out).expect("broadcast shape")
}

impl GradOp for BroadcastOp {
    fn name(&self) -> &'static str {
        "broadcast"
    }
    fn input_grads(&self, inputs: &[&Tensor], out: &Tensor, g: &Tensor, _n: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let dst_shape = out.shape();
        let strides = broadcast_strides(x.shape(), dst_shape).expect("checked at forward");
        let mut gx = Tensor::zeros(x.shape());
        let gxd = gx.data_mut();
        let gd = g.data();
        let mut idx = vec![0usize; dst_shape.len()];
        for gv in gd {
            let mut off = 0;
            for (i, s) in idx.iter().zip(&strides) {
                off += i * s;
            }
            gxd[off] += gv;
            for d in (0..dst_shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < dst_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        vec![Some(gx)]
    }
}

struct ReshapeOp;
impl GradOp for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn input_grads(&self, inputs: &[&Tensor], _o: &Tensor, g: &Tensor, _n: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), g.data().to_vec()).unwrap())]
    }
}

// ---------------------------------------------------------------------------
// graph methods

impl Graph {
    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let op = BinOp { kind };
        let (shape, sa, sb) = bin_layout(op.name(), self.value(a), self.value(b))?;
        let numel: usize = shape.iter().product();
        let mut warned = 0u64;
        let out = {
            let (ta, tb) = (self.value(a), self.value(b));
            let av = |i: usize| if sa { ta.data()[0] } else { ta.data()[i] };
            let bv = |i: usize| if sb { tb.data()[0] } else { tb.data()[i] };
            let vals: Vec<f64> = (0..numel)
                .map(|i| match kind {
                    BinKind::Add => av(i) + bv(i),
                    BinKind::Sub => av(i) - bv(i),
                    BinKind::Mul => av(i) * bv(i),
                    BinKind::Div => {
                        let d = bv(i);
                        if d.abs() < GUARD_EPS {
                            warned += 1;
                        }
                        av(i) / guard_div(d)
                    }
                })
                .collect();
            Tensor::new(shape, vals)?
        };
        if warned > 0 {
            self.warn();
        }
        Ok(self.record(Box::new(op), &[a, b], out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Div, a, b)
    }

    /// Multiply by a plain scalar constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let k = self.constant_scalar(c);
        self.mul(a, k)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let vals = self.value(a).data().iter().map(|v| v.abs()).collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), vals)?;
        Ok(self.record(Box::new(AbsOp), &[a], out))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let vals = self.value(a).data().iter().map(|v| v.exp()).collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), vals)?;
        Ok(self.record(Box::new(ExpOp), &[a], out))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let mut warned = false;
        let vals = self
            .value(a)
            .data()
            .iter()
            .map(|&v| {
                if v < GUARD_EPS {
                    warned = true;
                }
                v.max(GUARD_EPS).ln()
            })
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), vals)?;
        if warned {
            self.warn();
        }
        Ok(self.record(Box::new(LogOp), &[a], out))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let vals = self.value(a).data().iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), vals)?;
        Ok(self.record(Box::new(ReluOp), &[a], out))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        Ok(self.record(Box::new(SumAllOp), &[a], out))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(shape_err("mean", "mean of empty tensor".into()));
        }
        let out = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        Ok(self.record(Box::new(MeanAllOp), &[a], out))
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        check_axis("sum_axis", t.shape(), axis)?;
        let (outer, n, inner) = axis_split(t.shape(), axis);
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let mut vals = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let base = (o * n + j) * inner;
                for i in 0..inner {
                    vals[o * inner + i] += t.data()[base + i];
                }
            }
        }
        let out = Tensor::new(shape, vals)?;
        Ok(self.record(Box::new(SumAxisOp { axis }), &[a], out))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err(
                "matmul",
                format!("incompatible shapes {:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let n = tb.shape()[1];
        let mut vals = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = ta.data()[i * k + p];
                let brow = &tb.data()[p * n..(p + 1) * n];
                let orow = &mut vals[i * n..(i + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let out = Tensor::new(vec![m, n], vals)?;
        Ok(self.record(Box::new(MatmulOp), &[a, b], out))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (ti, tw) = (self.value(input), self.value(weight));
        if ti.shape().len() != 4 || tw.shape().len() != 4 || ti.shape()[1] != tw.shape()[1] {
            return Err(shape_err(
                "conv2d",
                format!("input {:?} incompatible with weight {:?}", ti.shape(), tw.shape()),
            ));
        }
        if stride == 0 {
            return Err(shape_err("conv2d", "stride must be >= 1".into()));
        }
        if ti.shape()[2] + 2 * pad < tw.shape()[2] || ti.shape()[3] + 2 * pad < tw.shape()[3] {
            return Err(shape_err(
                "conv2d",
                format!("kernel {:?} larger than padded input {:?}", tw.shape(), ti.shape()),
            ));
        }
        if let Some(b) = bias {
            let tb = self.value(b);
            if tb.shape() != [tw.shape()[0]] {
                return Err(shape_err(
                    "conv2d",
                    format!("bias {:?} does not match out channels {}", tb.shape(), tw.shape()[0]),
                ));
            }
        }
        let out = conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        );
        let mut inputs = vec![input, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        Ok(self.record(Box::new(Conv2dOp { stride, pad }), &inputs, out))
    }

    /// Numerically stable softmax along `axis` (max subtraction).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        check_axis("softmax", t.shape(), axis)?;
        let (outer, n, inner) = axis_split(t.shape(), axis);
        let mut vals = vec![0.0; t.len()];
        let d = t.data();
        for o in 0..outer {
            for i in 0..inner {
                let mut mx = f64::NEG_INFINITY;
                for j in 0..n {
                    mx = mx.max(d[(o * n + j) * inner + i]);
                }
                let mut sum = 0.0;
                for j in 0..n {
                    let idx = (o * n + j) * inner + i;
                    let e = (d[idx] - mx).exp();
                    vals[idx] = e;
                    sum += e;
                }
                for j in 0..n {
                    vals[(o * n + j) * inner + i] /= sum;
                }
            }
        }
        let out = Tensor::new(t.shape().to_vec(), vals)?;
        Ok(self.record(Box::new(SoftmaxOp { axis }), &[a], out))
    }

    pub fn l2_normalize(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.l2_normalize_eps(a, axis, GUARD_EPS)
    }

    pub fn l2_normalize_eps(&mut self, a: Var, axis: usize, eps: f64) -> Result<Var> {
        let t = self.value(a);
        check_axis("l2_normalize", t.shape(), axis)?;
        let (outer, n, inner) = axis_split(t.shape(), axis);
        let mut vals = vec![0.0; t.len()];
        let d = t.data();
        let mut warned = false;
        for o in 0..outer {
            for i in 0..inner {
                let mut norm2 = 0.0;
                for j in 0..n {
                    let v = d[(o * n + j) * inner + i];
                    norm2 += v * v;
                }
                let norm = norm2.sqrt();
                if norm < eps {
                    warned = true;
                }
                let norm = norm.max(eps);
                for j in 0..n {
                    let idx = (o * n + j) * inner + i;
                    vals[idx] = d[idx] / norm;
                }
            }
        }
        let shape = t.shape().to_vec();
        if warned {
            self.warn();
        }
        let out = Tensor::new(shape, vals)?;
        Ok(self.record(Box::new(L2NormalizeOp { axis, eps }), &[a], out))
    }

    /// Nearest-neighbor upsampling of the last two dimensions by `factor`.
    pub fn upsample_nearest(&mut self, a: Var, factor: usize) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() < 2 || factor == 0 {
            return Err(shape_err(
                "upsample_nearest",
                format!("need rank >= 2 and factor >= 1, got {:?} x{}", t.shape(), factor),
            ));
        }
        let rank = t.shape().len();
        let (h, w) = (t.shape()[rank - 2], t.shape()[rank - 1]);
        let chans: usize = t.shape()[..rank - 2].iter().product();
        let (gh, gw) = (h * factor, w * factor);
        let mut shape = t.shape().to_vec();
        shape[rank - 2] = gh;
        shape[rank - 1] = gw;
        let mut vals = vec![0.0; chans * gh * gw];
        let d = t.data();
        for c in 0..chans {
            let ib = c * h * w;
            let ob = c * gh * gw;
            for y in 0..gh {
                let irow = ib + (y / factor) * w;
                let orow = ob + y * gw;
                for x in 0..gw {
                    vals[orow + x] = d[irow + x / factor];
                }
            }
        }
        let out = Tensor::new(shape, vals)?;
        Ok(self.record(Box::new(UpsampleNearestOp { factor }), &[a], out))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        check_axis("slice", t.shape(), axis)?;
        if start > end || end > t.shape()[axis] {
            return Err(shape_err(
                "slice",
                format!("range {}..{} out of bounds for axis {} of {:?}", start, end, axis, t.shape()),
            ));
        }
        let (outer, n, inner) = axis_split(t.shape(), axis);
        let m = end - start;
        let mut shape = t.shape().to_vec();
        shape[axis] = m;
        let mut vals = vec![0.0; outer * m * inner];
        let d = t.data();
        for o in 0..outer {
            for j in 0..m {
                let src = (o * n + start + j) * inner;
                let dst = (o * m + j) * inner;
                vals[dst..dst + inner].copy_from_slice(&d[src..src + inner]);
            }
        }
        let out = Tensor::new(shape, vals)?;
        Ok(self.record(Box::new(SliceOp { axis, start, end }), &[a], out))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        check_axis("concat", &first, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &v)| i != axis && v != first[i])
            {
                return Err(shape_err(
                    "concat",
                    format!("shape {:?} incompatible with {:?} along axis {}", s, first, axis),
                ));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let numel: usize = shape.iter().product();
        let mut vals = vec![0.0; numel];
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            let n = t.shape()[axis];
            let d = t.data();
            for o in 0..outer {
                for j in 0..n {
                    let src = (o * n + j) * inner;
                    let dst = (o * total + offset + j) * inner;
                    vals[dst..dst + inner].copy_from_slice(&d[src..src + inner]);
                }
            }
            offset += n;
        }
        let out = Tensor::new(shape, vals)?;
        Ok(self.record(Box::new(ConcatOp { axis }), parts, out))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let strides = broadcast_strides(t.shape(), shape).ok_or_else(|| {
            shape_err("broadcast", format!("cannot broadcast {:?} to {:?}", t.shape(), shape))
        })?;
        let out = broadcast_map(t, shape, &strides);
        Ok(self.record(Box::new(BroadcastOp), &[a], out))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.record(Box::new(ReshapeOp), &[a], out))
    }
}

/// Generic op selector for [`Graph::apply`].
#[derive(Debug, Clone)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Abs,
    Exp,
    Log,
    Sum,
    Mean,
    Matmul,
    Conv2d { stride: usize, pad: usize },
    Relu,
    Softmax { axis: usize },
    L2Normalize { axis: usize, eps: f64 },
    UpsampleNearest { factor: usize },
    Slice { axis: usize, start: usize, end: usize },
    Concat { axis: usize },
    Broadcast { shape: Vec<usize> },
}

impl Graph {
    /// Uniform entry point over the primitive op set.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                Err(CdpclError::Contract {
                    op: "apply",
                    detail: format!("{:?} expects {} inputs, got {}", kind, n, inputs.len()),
                })
            } else {
                Ok(())
            }
        };
        match kind.clone() {
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Sub => {
                arity(2)?;
                self.sub(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::Div => {
                arity(2)?;
                self.div(inputs[0], inputs[1])
            }
            OpKind::Abs => {
                arity(1)?;
                self.abs(inputs[0])
            }
            OpKind::Exp => {
                arity(1)?;
                self.exp(inputs[0])
            }
            OpKind::Log => {
                arity(1)?;
                self.log(inputs[0])
            }
            OpKind::Sum => {
                arity(1)?;
                self.sum_all(inputs[0])
            }
            OpKind::Mean => {
                arity(1)?;
                self.mean_all(inputs[0])
            }
            OpKind::Matmul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Conv2d { stride, pad } => {
                if inputs.len() == 2 {
                    self.conv2d(inputs[0], inputs[1], None, stride, pad)
                } else {
                    arity(3)?;
                    self.conv2d(inputs[0], inputs[1], Some(inputs[2]), stride, pad)
                }
            }
            OpKind::Relu => {
                arity(1)?;
                self.relu(inputs[0])
            }
            OpKind::Softmax { axis } => {
                arity(1)?;
                self.softmax(inputs[0], axis)
            }
            OpKind::L2Normalize { axis, eps } => {
                arity(1)?;
                self.l2_normalize_eps(inputs[0], axis, eps)
            }
            OpKind::UpsampleNearest { factor } => {
                arity(1)?;
                self.upsample_nearest(inputs[0], factor)
            }
            OpKind::Slice { axis, start, end } => {
                arity(1)?;
                self.slice(inputs[0], axis, start, end)
            }
            OpKind::Concat { axis } => self.concat(inputs, axis),
            OpKind::Broadcast { shape } => {
                arity(1)?;
                self.broadcast_to(inputs[0], &shape)
            }
        }
    }
}
