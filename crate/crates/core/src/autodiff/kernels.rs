//! Numeric kernels shared by the forward and backward passes.
//!
//! All buffers are row-major. Nothing here records onto a tape.

use crate::error::{Error, Result};

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_ip * b_pj;
            }
        }
    }
}

/// `da[m×k] += dc[m×n] · bᵀ`
pub fn matmul_grad_lhs(dc: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let dot: f64 = dc_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            da[i * k + p] += dot;
        }
    }
}

/// `db[k×n] += aᵀ · dc[m×n]`
pub fn matmul_grad_rhs(a: &[f64], dc: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let db_row = &mut db[p * n..(p + 1) * n];
            for (d, &g) in db_row.iter_mut().zip(dc_row) {
                *d += a_ip * g;
            }
        }
    }
}

/// Numpy-style broadcast of two shapes, aligned from the trailing axis.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let ndim = a.len().max(b.len());
    let mut out = vec![0; ndim];
    for i in 0..ndim {
        let da = if i < ndim - a.len() { 1 } else { a[i - (ndim - a.len())] };
        let db = if i < ndim - b.len() { 1 } else { b[i - (ndim - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out` (row-major), the flat index of the element of
/// an operand of shape `src` that broadcasts onto it.
pub fn broadcast_index(out: &[usize], src: &[usize]) -> Vec<usize> {
    let numel: usize = out.iter().product();
    if out == src {
        return (0..numel).collect();
    }
    let offset = out.len() - src.len();
    // stride of src along each output axis, zero where broadcast
    let mut strides = vec![0usize; out.len()];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        if src[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= src[i];
    }
    let mut idx = vec![0usize; out.len()];
    let mut result = Vec::with_capacity(numel);
    let mut cur = 0usize;
    for _ in 0..numel {
        result.push(cur);
        for axis in (0..out.len()).rev() {
            idx[axis] += 1;
            cur += strides[axis];
            if idx[axis] < out[axis] {
                break;
            }
            cur -= strides[axis] * idx[axis];
            idx[axis] = 0;
        }
    }
    result
}

/// Sums `grad` (shaped like the broadcast output) back onto an operand's shape.
pub fn reduce_broadcast(grad: &[f64], index: &[usize], src_numel: usize) -> Vec<f64> {
    let mut out = vec![0.0; src_numel];
    for (&g, &i) in grad.iter().zip(index) {
        out[i] += g;
    }
    out
}

/// (outer, axis, inner) extents for an axis of `shape`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Exact standard-normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax over each contiguous row of length `n`, with max subtraction.
pub fn softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, dst) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}

/// Log-softmax over each row via log-sum-exp.
pub fn log_softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, dst) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = v - lse;
        }
    }
    out
}

/// Geometry of a channels-last 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub len_in: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn len_out(&self) -> usize {
        let padded = self.len_in + 2 * self.padding;
        if padded < self.kernel {
            0
        } else {
            (padded - self.kernel) / self.stride + 1
        }
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.c_in
    }

    pub fn check(&self) -> Result<()> {
        if self.stride == 0 || self.kernel == 0 {
            return Err(Error::contract("conv1d stride and kernel must be positive"));
        }
        if self.len_out() == 0 {
            return Err(Error::dim(
                "conv1d",
                &[self.batch, self.len_in, self.c_in],
                &[self.kernel, self.c_in, self.c_out],
            ));
        }
        Ok(())
    }
}

/// Unfolds `x[B, T, Cin]` into `[B·Tout, K·Cin]` patches; out-of-range taps are zero.
pub fn im2col(x: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let len_out = g.len_out();
    let plen = g.patch_len();
    let mut cols = vec![0.0; g.batch * len_out * plen];
    for b in 0..g.batch {
        let xb = &x[b * g.len_in * g.c_in..(b + 1) * g.len_in * g.c_in];
        for t in 0..len_out {
            let dst = &mut cols[(b * len_out + t) * plen..(b * len_out + t + 1) * plen];
            let start = (t * g.stride) as isize - g.padding as isize;
            for k in 0..g.kernel {
                let pos = start + k as isize;
                if pos < 0 || pos as usize >= g.len_in {
                    continue;
                }
                let pos = pos as usize;
                dst[k * g.c_in..(k + 1) * g.c_in]
                    .copy_from_slice(&xb[pos * g.c_in..(pos + 1) * g.c_in]);
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto `dx[B, T, Cin]`.
pub fn col2im_acc(dcols: &[f64], g: &ConvGeometry, dx: &mut [f64]) {
    let len_out = g.len_out();
    let plen = g.patch_len();
    for b in 0..g.batch {
        let dxb = &mut dx[b * g.len_in * g.c_in..(b + 1) * g.len_in * g.c_in];
        for t in 0..len_out {
            let src = &dcols[(b * len_out + t) * plen..(b * len_out + t + 1) * plen];
            let start = (t * g.stride) as isize - g.padding as isize;
            for k in 0..g.kernel {
                let pos = start + k as isize;
                if pos < 0 || pos as usize >= g.len_in {
                    continue;
                }
                let pos = pos as usize;
                for (d, s) in dxb[pos * g.c_in..(pos + 1) * g.c_in]
                    .iter_mut()
                    .zip(&src[k * g.c_in..(k + 1) * g.c_in])
                {
                    *d += s;
                }
            }
        }
    }
}
