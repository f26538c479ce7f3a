//! Dense row-major `f32` tensors and the numeric kernels built on them.
//!
//! Supports rank-1 and rank-2 tensors, which is all the model needs. Every
//! kernel uses a fixed accumulation order, so two runs over the same inputs
//! produce bit-identical outputs regardless of optimization level or vector
//! width: the compiler may vectorize the independent inner loops but never
//! reorders the sequential reductions.
//!
//! Reductions that feed user-visible invariants (softmax row sums, layer-norm
//! statistics, cross-entropy means) accumulate in `f64` before rounding back
//! to `f32`.

use crate::error::{Error, Result};

/// Dense row-major tensor of `f32` values, rank 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// All-zero tensor with the given shape.
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Builds a tensor from raw data; the element count must match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::Input(format!(
                "tensor rank must be 1 or 2, got shape {shape:?}"
            )));
        }
        if n != data.len() {
            return Err(Error::Input(format!(
                "shape {shape:?} wants {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Single-element tensor (used for scalar losses).
    pub fn scalar(v: f32) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Interprets the tensor as a matrix, returning `(rows, cols)`.
    /// Rank-1 tensors are treated as a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1]),
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let (_, c) = self.dims2();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f32 {
        let (_, c) = self.dims2();
        self.data[i * c + j]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape.to_vec(),
        right: b.shape.to_vec(),
    }
}

/// Dot product with eight interleaved partial sums combined in a fixed tree
/// order; bit-deterministic and wide enough for the compiler to vectorize.
pub(crate) fn dot(x: &[f32], y: &[f32]) -> f32 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [0.0f32; 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let xr = xc.remainder();
    let yr = yc.remainder();
    for (xs, ys) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] += xs[l] * ys[l];
        }
    }
    for (l, (xv, yv)) in xr.iter().zip(yr).enumerate() {
        acc[l] += xv * yv;
    }
    let s01 = acc[0] + acc[1];
    let s23 = acc[2] + acc[3];
    let s45 = acc[4] + acc[5];
    let s67 = acc[6] + acc[7];
    (s01 + s23) + (s45 + s67)
}

/// `a (m x k) * b (k x n) -> (m x n)`.
///
/// Accumulates over `k` in ascending order for every output element.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, ka) = a.dims2();
    let (kb, n) = b.dims2();
    if ka != kb {
        return Err(shape_err("matmul", a, b));
    }
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &a.data[i * ka..(i + 1) * ka];
        let orow = &mut out[i * n..(i + 1) * n];
        for (k, &av) in arow.iter().enumerate() {
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// `a (m x k) * b^T (b is n x k) -> (m x n)`; used for `Q K^T`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, ka) = a.dims2();
    let (n, kb) = b.dims2();
    if ka != kb {
        return Err(shape_err("matmul_nt", a, b));
    }
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &a.data[i * ka..(i + 1) * ka];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            *o = dot(arow, &b.data[j * kb..(j + 1) * kb]);
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// `a^T (a is k x m) * b (k x n) -> (m x n)`; used for weight gradients.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ka, m) = a.dims2();
    let (kb, n) = b.dims2();
    if ka != kb {
        return Err(shape_err("matmul_tn", a, b));
    }
    let mut out = vec![0.0f32; m * n];
    for p in 0..ka {
        let arow = &a.data[p * m..(p + 1) * m];
        let brow = &b.data[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// Elementwise sum of two tensors with identical shapes.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(shape_err("add", a, b));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Tensor::from_vec(&a.shape, data)
}

/// Adds `b` into `a` in place; shapes must match.
pub fn add_assign(a: &mut Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(shape_err("add_assign", a, b));
    }
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
    Ok(())
}

/// Multiplies every element by a constant.
/// Multiplies every element in place.
pub fn scale_in_place(a: &mut Tensor, c: f32) {
    for v in a.data.iter_mut() {
        *v *= c;
    }
}

pub fn scale(a: &Tensor, c: f32) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|v| v * c).collect(),
    }
}

const GELU_C: f32 = 0.797_884_56; // sqrt(2/pi)
const GELU_A: f32 = 0.044_715;

fn gelu_scalar(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_deriv(x: f32) -> f32 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Elementwise GELU (tanh approximation).
pub fn gelu(a: &Tensor) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|&v| gelu_scalar(v)).collect(),
    }
}

/// Vector-Jacobian product of [`gelu`]: `dx = dy * gelu'(x)`.
pub fn gelu_vjp(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if x.shape != dy.shape {
        return Err(shape_err("gelu_vjp", x, dy));
    }
    let data = x
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&xv, &dv)| dv * gelu_deriv(xv))
        .collect();
    Tensor::from_vec(&x.shape, data)
}

/// Softmax over one row: `dst[j] = exp(scale*src[j] - max) / sum`.
/// Exponentials and the normalizing sum are computed in `f64`.
pub(crate) fn softmax_row_into(src: &[f32], scale: f64, dst: &mut [f32]) {
    let mut mx = f64::NEG_INFINITY;
    for &v in src {
        let z = scale * v as f64;
        if z > mx {
            mx = z;
        }
    }
    let mut sum = 0.0f64;
    let mut exps = vec![0.0f64; src.len()];
    for (e, &v) in exps.iter_mut().zip(src) {
        *e = (scale * v as f64 - mx).exp();
        sum += *e;
    }
    for (d, e) in dst.iter_mut().zip(&exps) {
        *d = (e / sum) as f32;
    }
}

/// Row-wise softmax of `scale * x`. Requires a finite positive `scale` and
/// finite inputs.
pub fn softmax_rows(x: &Tensor, scale: f32) -> Result<Tensor> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Input(format!(
            "softmax_rows scale must be finite and positive, got {scale}"
        )));
    }
    if !x.all_finite() {
        return Err(Error::Input("softmax_rows input has non-finite values".into()));
    }
    let (r, c) = x.dims2();
    if c == 0 {
        return Err(Error::Input("softmax_rows rows must be non-empty".into()));
    }
    let mut out = Tensor::zeros(x.shape());
    for i in 0..r {
        let src = &x.data[i * c..(i + 1) * c];
        let dst = &mut out.data[i * c..(i + 1) * c];
        softmax_row_into(src, scale as f64, dst);
    }
    Ok(out)
}

/// Causal row-wise softmax over a square score matrix: row `i` is the softmax
/// of `scale * x[i, ..=i]`; entries above the diagonal are exactly zero.
pub fn softmax_rows_causal(x: &Tensor, scale: f32) -> Result<Tensor> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Input(format!(
            "softmax_rows_causal scale must be finite and positive, got {scale}"
        )));
    }
    if !x.all_finite() {
        return Err(Error::Input(
            "softmax_rows_causal input has non-finite values".into(),
        ));
    }
    let (r, c) = x.dims2();
    if r != c {
        return Err(Error::Input(format!(
            "softmax_rows_causal wants a square matrix, got {:?}",
            x.shape()
        )));
    }
    let mut out = Tensor::zeros(x.shape());
    for i in 0..r {
        let src = &x.data[i * c..i * c + i + 1];
        let dst = &mut out.data[i * c..i * c + i + 1];
        softmax_row_into(src, scale as f64, dst);
    }
    Ok(out)
}

/// Vector-Jacobian product of a row-wise softmax (masked or not): given the
/// forward output `probs` and upstream `dp`, returns the gradient with
/// respect to the pre-softmax scores.
pub fn softmax_vjp(probs: &Tensor, dp: &Tensor, scale: f32) -> Result<Tensor> {
    if probs.shape != dp.shape {
        return Err(shape_err("softmax_vjp", probs, dp));
    }
    let (r, c) = probs.dims2();
    let mut out = Tensor::zeros(probs.shape());
    for i in 0..r {
        let p = &probs.data[i * c..(i + 1) * c];
        let d = &dp.data[i * c..(i + 1) * c];
        let mut s = 0.0f64;
        for (pv, dv) in p.iter().zip(d) {
            s += *pv as f64 * *dv as f64;
        }
        let o = &mut out.data[i * c..(i + 1) * c];
        for ((ov, pv), dv) in o.iter_mut().zip(p).zip(d) {
            *ov = scale * pv * (dv - s as f32);
        }
    }
    Ok(out)
}

/// Row-wise layer normalization with learned gain and bias.
/// Statistics are computed per row in `f64`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f32) -> Result<Tensor> {
    let (r, c) = x.dims2();
    if gain.numel() != c {
        return Err(shape_err("layer_norm(gain)", x, gain));
    }
    if bias.numel() != c {
        return Err(shape_err("layer_norm(bias)", x, bias));
    }
    let mut out = Tensor::zeros(x.shape());
    for i in 0..r {
        let src = &x.data[i * c..(i + 1) * c];
        let (mean, rstd) = row_stats(src, eps);
        let dst = &mut out.data[i * c..(i + 1) * c];
        for (j, (d, &v)) in dst.iter_mut().zip(src).enumerate() {
            let nv = ((v as f64 - mean) * rstd) as f32;
            *d = nv * gain.data[j] + bias.data[j];
        }
    }
    Ok(out)
}

fn row_stats(src: &[f32], eps: f32) -> (f64, f64) {
    let n = src.len() as f64;
    let mut mean = 0.0f64;
    for &v in src {
        mean += v as f64;
    }
    mean /= n;
    let mut var = 0.0f64;
    for &v in src {
        let d = v as f64 - mean;
        var += d * d;
    }
    var /= n;
    let rstd = 1.0 / (var + eps as f64).sqrt();
    (mean, rstd)
}

/// Vector-Jacobian product of [`layer_norm`]; returns `(dx, dgain, dbias)`.
pub fn layer_norm_vjp(
    x: &Tensor,
    gain: &Tensor,
    eps: f32,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    if x.shape != dy.shape {
        return Err(shape_err("layer_norm_vjp", x, dy));
    }
    let (r, c) = x.dims2();
    let mut dx = Tensor::zeros(x.shape());
    let mut dgain = vec![0.0f64; c];
    let mut dbias = vec![0.0f64; c];
    for i in 0..r {
        let src = &x.data[i * c..(i + 1) * c];
        let dyr = &dy.data[i * c..(i + 1) * c];
        let (mean, rstd) = row_stats(src, eps);
        // a_j = dy_j * gain_j ; dx = rstd * (a - mean(a) - nv * mean(a*nv))
        let mut m1 = 0.0f64;
        let mut m2 = 0.0f64;
        let mut nv = vec![0.0f64; c];
        for j in 0..c {
            nv[j] = (src[j] as f64 - mean) * rstd;
            let a = dyr[j] as f64 * gain.data[j] as f64;
            m1 += a;
            m2 += a * nv[j];
        }
        m1 /= c as f64;
        m2 /= c as f64;
        let dxr = &mut dx.data[i * c..(i + 1) * c];
        for j in 0..c {
            let a = dyr[j] as f64 * gain.data[j] as f64;
            dxr[j] = (rstd * (a - m1 - nv[j] * m2)) as f32;
            dgain[j] += dyr[j] as f64 * nv[j];
            dbias[j] += dyr[j] as f64;
        }
    }
    let dgain = Tensor::from_vec(&[c], dgain.iter().map(|&v| v as f32).collect())?;
    let dbias = Tensor::from_vec(&[c], dbias.iter().map(|&v| v as f32).collect())?;
    Ok((dx, dgain, dbias))
}

/// Log-sum-exp of one row in `f64` (row-max stabilized).
pub(crate) fn lse_row(src: &[f32]) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    for &v in src {
        if (v as f64) > mx {
            mx = v as f64;
        }
    }
    let mut sum = 0.0f64;
    for &v in src {
        sum += (v as f64 - mx).exp();
    }
    mx + sum.ln()
}

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits`. Means and log-sum-exp run in `f64`; the result is rounded
/// to `f32` once at the end.
pub fn cross_entropy(logits: &Tensor, targets: &[u32]) -> Result<f32> {
    let (r, c) = logits.dims2();
    if targets.len() != r {
        return Err(Error::Contract(format!(
            "cross_entropy: {r} logit rows but {} targets",
            targets.len()
        )));
    }
    if r == 0 {
        return Err(Error::Input("cross_entropy: no rows".into()));
    }
    if !logits.all_finite() {
        return Err(Error::Input("cross_entropy: non-finite logits".into()));
    }
    let mut total = 0.0f64;
    for (i, &t) in targets.iter().enumerate() {
        let t = t as usize;
        if t >= c {
            return Err(Error::Index(format!(
                "cross_entropy target {t} out of vocab {c} at row {i}"
            )));
        }
        let row = &logits.data[i * c..(i + 1) * c];
        total += lse_row(row) - row[t] as f64;
    }
    Ok((total / r as f64) as f32)
}

/// Gradient of [`cross_entropy`] with respect to the logits, scaled by the
/// upstream scalar: `(softmax(row) - onehot(target)) * upstream / rows`.
pub fn cross_entropy_grad(logits: &Tensor, targets: &[u32], upstream: f32) -> Result<Tensor> {
    let (r, c) = logits.dims2();
    if targets.len() != r {
        return Err(Error::Contract(format!(
            "cross_entropy_grad: {r} logit rows but {} targets",
            targets.len()
        )));
    }
    let mut out = Tensor::zeros(logits.shape());
    let w = upstream as f64 / r as f64;
    for (i, &t) in targets.iter().enumerate() {
        let row = &logits.data[i * c..(i + 1) * c];
        let lse = lse_row(row);
        let dst = &mut out.data[i * c..(i + 1) * c];
        for (j, (d, &v)) in dst.iter_mut().zip(row).enumerate() {
            let p = (v as f64 - lse).exp();
            let onehot = if j == t as usize { 1.0 } else { 0.0 };
            *d = ((p - onehot) * w) as f32;
        }
    }
    Ok(out)
}

/// Gathers rows of `table` at the given indices into a new matrix.
pub fn gather_rows(table: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let (r, c) = table.dims2();
    let mut out = Tensor::zeros(&[rows.len(), c]);
    for (pos, &idx) in rows.iter().enumerate() {
        if idx >= r {
            return Err(Error::Index(format!(
                "gather_rows: row {idx} out of {r} rows"
            )));
        }
        out.row_mut(pos).copy_from_slice(table.row(idx));
    }
    Ok(out)
}

/// Scatter-accumulates `dy` rows back into `dtable` at the gathered indices,
/// in ascending position order (backward of [`gather_rows`]).
pub fn scatter_add_rows(dtable: &mut Tensor, rows: &[usize], dy: &Tensor) -> Result<()> {
    let (_, c) = dtable.dims2();
    let (dr, dc) = dy.dims2();
    if dc != c || dr != rows.len() {
        return Err(shape_err("scatter_add_rows", dtable, dy));
    }
    for (pos, &idx) in rows.iter().enumerate() {
        let src = dy.row(pos);
        let dst = dtable.row_mut(idx);
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
    Ok(())
}

/// Copies columns `start..end` of a matrix into a new matrix.
pub fn slice_cols(x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let (r, c) = x.dims2();
    if start > end || end > c {
        return Err(Error::Index(format!(
            "slice_cols {start}..{end} out of width {c}"
        )));
    }
    let w = end - start;
    let mut out = Tensor::zeros(&[r, w]);
    for i in 0..r {
        out.row_mut(i)
            .copy_from_slice(&x.row(i)[start..end]);
    }
    Ok(out)
}

/// Adds `src` into columns `start..` of `dst` (backward of [`slice_cols`]).
pub fn add_into_cols(dst: &mut Tensor, src: &Tensor, start: usize) -> Result<()> {
    let (r, c) = dst.dims2();
    let (sr, sc) = src.dims2();
    if sr != r || start + sc > c {
        return Err(shape_err("add_into_cols", dst, src));
    }
    for i in 0..r {
        let d = &mut dst.row_mut(i)[start..start + sc];
        for (dv, sv) in d.iter_mut().zip(src.row(i)) {
            *dv += sv;
        }
    }
    Ok(())
}

/// Concatenates matrices with equal row counts along the column axis.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Input("concat_cols: no parts".into()));
    }
    let (r, _) = parts[0].dims2();
    let mut total = 0;
    for p in parts {
        let (pr, pc) = p.dims2();
        if pr != r {
            return Err(shape_err("concat_cols", parts[0], p));
        }
        total += pc;
    }
    let mut out = Tensor::zeros(&[r, total]);
    for i in 0..r {
        let dst = out.row_mut(i);
        let mut off = 0;
        for p in parts {
            let (_, pc) = p.dims2();
            dst[off..off + pc].copy_from_slice(p.row(i));
            off += pc;
        }
    }
    Ok(out)
}
