//! Forward and backward kernels on plain [`Tensor`]s.
//!
//! The tape in [`super::graph`] calls into these; they are also usable
//! directly when no gradient is needed.

use super::{NumericsError, Tensor};

/// `c = a · b + beta · c` for row-major operands described by strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
        }
    };
    assert!(a.len() >= span(m, k, rsa, csa), "gemm: lhs buffer too short");
    assert!(b.len() >= span(k, n, rsb, csb), "gemm: rhs buffer too short");
    assert!(c.len() >= m * n, "gemm: output buffer too short");
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `[m,k] · [k,n]`
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), (k as isize, 1), b.data(), (n as isize, 1), 0.0, &mut out);
    Tensor::new(vec![m, n], out)
}

/// `[m,k] · [n,k]ᵀ`
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (m, k) = a.dims2("matmul_nt")?;
    let (n, k2) = b.dims2("matmul_nt")?;
    if k != k2 {
        return Err(mismatch("matmul_nt", a, b));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), (k as isize, 1), b.data(), (1, k as isize), 0.0, &mut out);
    Tensor::new(vec![m, n], out)
}

/// `[k,m]ᵀ · [k,n]`
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (k, m) = a.dims2("matmul_tn")?;
    let (k2, n) = b.dims2("matmul_tn")?;
    if k != k2 {
        return Err(mismatch("matmul_tn", a, b));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), (1, m as isize), b.data(), (n as isize, 1), 0.0, &mut out);
    Tensor::new(vec![m, n], out)
}

pub(crate) fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn dims4(t: &Tensor, op: &'static str) -> Result<[usize; 4], NumericsError> {
    match t.shape() {
        [n, c, h, w] => Ok([*n, *c, *h, *w]),
        s => Err(NumericsError::RankMismatch {
            op,
            expected: 4,
            shape: s.to_vec(),
        }),
    }
}

/// Output columns `[lo, hi)` whose source column `x + dx` lies inside `0..w`,
/// for a kernel offset `dx ∈ {-1, 0, 1}`.
fn valid_cols(dx: isize, w: usize) -> (usize, usize) {
    match dx {
        -1 => (1.min(w), w),
        1 => (0, w.saturating_sub(1)),
        _ => (0, w),
    }
}

/// Unfolds one `[C,H,W]` sample into `[C*9, H*W]` patches of a 3×3, pad-1 window.
fn im2col3(x: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            let dy = ky as isize - 1;
            for kx in 0..3 {
                let dx = kx as isize - 1;
                let (lo, hi) = valid_cols(dx, w);
                let row = &mut cols[((ch * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    dst[..lo].fill(0.0);
                    dst[hi..].fill(0.0);
                    let s0 = (lo as isize + dx) as usize;
                    dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: scatters patch gradients back onto the image.
fn col2im3(cols: &[f64], c: usize, h: usize, w: usize, dx_out: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut dx_out[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            let dy = ky as isize - 1;
            for kx in 0..3 {
                let dx = kx as isize - 1;
                let (lo, hi) = valid_cols(dx, w);
                let row = &cols[((ch * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (lo as isize + dx) as usize;
                    let dst = &mut plane[sy as usize * w + s0..][..hi - lo];
                    for (d, v) in dst.iter_mut().zip(&row[y * w + lo..y * w + hi]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// 3×3 convolution, stride 1, zero padding 1. `x: [N,C,H,W]`, `w: [O,C,3,3]`, `b: [O]`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let [n, c, h, wd] = dims4(x, "conv2d")?;
    let [o, c2, kh, kw] = dims4(w, "conv2d")?;
    if c != c2 || kh != 3 || kw != 3 {
        return Err(mismatch("conv2d", x, w));
    }
    if b.shape() != [o] {
        return Err(mismatch("conv2d bias", w, b));
    }
    let hw = h * wd;
    let k = c * 9;
    let mut out = vec![0.0; n * o * hw];
    let mut cols = vec![0.0; k * hw];
    for s in 0..n {
        im2col3(&x.data()[s * c * hw..(s + 1) * c * hw], c, h, wd, &mut cols);
        let dst = &mut out[s * o * hw..(s + 1) * o * hw];
        for (oc, bias) in b.data().iter().enumerate() {
            dst[oc * hw..(oc + 1) * hw].fill(*bias);
        }
        gemm(o, k, hw, w.data(), (k as isize, 1), &cols, (hw as isize, 1), 1.0, dst);
    }
    Tensor::new(vec![n, o, h, wd], out)
}

/// Gradients of [`conv2d`] with respect to input (when `need_dx`), kernel and bias.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    need_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor), NumericsError> {
    let [n, c, h, wd] = dims4(x, "conv2d_backward")?;
    let [o, _, _, _] = dims4(w, "conv2d_backward")?;
    let hw = h * wd;
    let k = c * 9;
    let mut dx = if need_dx { vec![0.0; n * c * hw] } else { Vec::new() };
    let mut dw = vec![0.0; o * k];
    let mut db = vec![0.0; o];
    let mut cols = vec![0.0; k * hw];
    let mut dcols = if need_dx { vec![0.0; k * hw] } else { Vec::new() };
    for s in 0..n {
        let go = &grad_out.data()[s * o * hw..(s + 1) * o * hw];
        for (oc, d) in db.iter_mut().enumerate() {
            *d += go[oc * hw..(oc + 1) * hw].iter().sum::<f64>();
        }
        im2col3(&x.data()[s * c * hw..(s + 1) * c * hw], c, h, wd, &mut cols);
        // dW += dOut · colsᵀ
        gemm(o, hw, k, go, (hw as isize, 1), &cols, (1, hw as isize), 1.0, &mut dw);
        if need_dx {
            // dCols = Wᵀ · dOut
            gemm(k, o, hw, w.data(), (1, k as isize), go, (hw as isize, 1), 0.0, &mut dcols);
            col2im3(&dcols, c, h, wd, &mut dx[s * c * hw..(s + 1) * c * hw]);
        }
    }
    let dx = if need_dx {
        Some(Tensor::new(x.shape().to_vec(), dx)?)
    } else {
        None
    };
    Ok((
        dx,
        Tensor::new(w.shape().to_vec(), dw)?,
        Tensor::new(vec![o], db)?,
    ))
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, per output,
/// the flat index of the winning input element (first maximum wins).
pub fn maxpool2(x: &Tensor) -> Result<(Tensor, Vec<usize>), NumericsError> {
    let [n, c, h, w] = dims4(x, "maxpool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NumericsError::RankMismatch {
            op: "maxpool2 (even spatial dims)",
            expected: 4,
            shape: x.shape().to_vec(),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let d = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                    if d[idx] > d[best] {
                        best = idx;
                    }
                }
                out.push(d[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
}

/// Taylor coefficients of `tanh` in `x²`, enough for full precision on `|x| < 0.25`.
const TANH_SERIES: [f64; 12] = [
    1.0,
    -0.3333333333333333,
    0.13333333333333333,
    -0.05396825396825397,
    0.021869488536155203,
    -0.008863235529902197,
    0.003592128036572481,
    -0.0014558343870513183,
    0.000590027440945586,
    -0.00023912911424355248,
    9.691537956929451e-05,
    -3.927832388331683e-05,
];

/// Hyperbolic tangent, cheaper than the libm routine. Away from zero a single
/// `exp` is enough; near zero that form loses relative precision, so a short
/// odd series takes over.
pub fn tanh(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 0.25 {
        let x2 = x * x;
        return x * TANH_SERIES.iter().rev().fold(0.0, |acc, c| acc * x2 + c);
    }
    let e = (-2.0 * ax).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

/// Row-wise softmax. `mask[j] == false` excludes column `j` (probability 0).
pub fn softmax_rows(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor, NumericsError> {
    let (r, c) = x.dims2("softmax_rows")?;
    if let Some(m) = mask {
        if m.len() != c {
            return Err(NumericsError::ShapeMismatch {
                op: "softmax_rows mask",
                left: x.shape().to_vec(),
                right: vec![m.len()],
            });
        }
    }
    let keep = |j: usize| mask.is_none_or(|m| m[j]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = x.row(i);
        let mx = (0..c)
            .filter(|&j| keep(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out[i * c..(i + 1) * c];
        let mut total = 0.0;
        for j in 0..c {
            if keep(j) {
                dst[j] = (row[j] - mx).exp();
                total += dst[j];
            }
        }
        if total > 0.0 {
            for v in dst.iter_mut() {
                *v /= total;
            }
        }
        debug_assert!(
            !total.is_finite() || total == 0.0 || (dst.iter().sum::<f64>() - 1.0).abs() < 1e-12,
            "softmax row {i} does not sum to one"
        );
    }
    Tensor::new(vec![r, c], out)
}

/// Per-row normalization statistics kept for the backward pass.
pub struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn layer_norm(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, LayerNormCache), NumericsError> {
    let (r, c) = x.dims2("layer_norm")?;
    if gain.shape() != [c] || bias.shape() != [c] {
        return Err(mismatch("layer_norm", x, gain));
    }
    let mut xhat = vec![0.0; r * c];
    let mut out = vec![0.0; r * c];
    let mut inv_std = Vec::with_capacity(r);
    for i in 0..r {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(is);
        for j in 0..c {
            let h = (row[j] - mean) * is;
            xhat[i * c + j] = h;
            out[i * c + j] = h * gain.data()[j] + bias.data()[j];
        }
    }
    Ok((
        Tensor::new(vec![r, c], out)?,
        LayerNormCache {
            normalized: Tensor::new(vec![r, c], xhat)?,
            inv_std,
        },
    ))
}

/// Log density of a diagonal Gaussian with shared scalar `std`, summed over the row.
pub fn gaussian_log_prob(mean: &[f64], action: &[f64], std: f64) -> f64 {
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let log_std = std.ln();
    let inv_var = 1.0 / (std * std);
    mean.iter()
        .zip(action)
        .map(|(m, a)| -0.5 * (a - m) * (a - m) * inv_var - log_std - half_log_2pi)
        .sum()
}
