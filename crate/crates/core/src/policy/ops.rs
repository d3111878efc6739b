//! Row-level kernels shared by the full-sequence pass and the incremental
//! decoder. Both paths call exactly these functions in the same order, which
//! keeps sampled log-probabilities bit-identical to scored ones.

pub const LN_EPS: f64 = 1e-5;

/// `y = b + x W` for one row; `w` is `[x.len() x b.len()]` row-major.
#[inline]
pub fn linear_row(x: &[f64], w: &[f64], b: &[f64], y: &mut [f64]) {
    let dout = b.len();
    y.copy_from_slice(b);
    for (&xk, wk) in x.iter().zip(w.chunks_exact(dout)) {
        for (yj, &wj) in y.iter_mut().zip(wk) {
            *yj += xk * wj;
        }
    }
}

/// Backward of [`linear_row`]: accumulates into `dx`, `dw` and `db`.
#[inline]
pub fn linear_row_backward(
    x: &[f64],
    dy: &[f64],
    w: &[f64],
    dx: &mut [f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    let dout = dy.len();
    for (dbj, &g) in db.iter_mut().zip(dy) {
        *dbj += g;
    }
    for (((&xk, wk), dwk), dxk) in x
        .iter()
        .zip(w.chunks_exact(dout))
        .zip(dw.chunks_exact_mut(dout))
        .zip(dx.iter_mut())
    {
        let mut acc = 0.0;
        for ((&wj, dwj), &g) in wk.iter().zip(dwk.iter_mut()).zip(dy) {
            acc += wj * g;
            *dwj += xk * g;
        }
        *dxk += acc;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Layer norm of one row. Writes the output and normalised input, returns `1/std`.
#[inline]
pub fn layer_norm_row(x: &[f64], g: &[f64], b: &[f64], out: &mut [f64], xhat: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * rstd;
        out[i] = xhat[i] * g[i] + b[i];
    }
    rstd
}

/// Backward of [`layer_norm_row`]; adds into `dx`.
#[inline]
pub fn layer_norm_row_backward(
    dout: &[f64],
    xhat: &[f64],
    rstd: f64,
    g: &[f64],
    dx: &mut [f64],
    dg: &mut [f64],
    db: &mut [f64],
) {
    let n = dout.len() as f64;
    let mut mean_dxhat = 0.0;
    let mut mean_dxhat_xhat = 0.0;
    for i in 0..dout.len() {
        let dxh = dout[i] * g[i];
        mean_dxhat += dxh;
        mean_dxhat_xhat += dxh * xhat[i];
        dg[i] += dout[i] * xhat[i];
        db[i] += dout[i];
    }
    mean_dxhat /= n;
    mean_dxhat_xhat /= n;
    for i in 0..dout.len() {
        let dxh = dout[i] * g[i];
        dx[i] += rstd * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Causal attention of row `i` for one head.
///
/// `qkv` holds rows `0..=i` of packed `[q | k | v]` vectors (stride `3d`);
/// head `h` occupies columns `h*hd .. (h+1)*hd` of each part. Writes the
/// attention weights over `0..=i` into `probs` and the head output into `out`.
#[inline]
pub fn attend_row(qkv: &[f64], d: usize, hd: usize, h: usize, i: usize, probs: &mut [f64], out: &mut [f64]) {
    let stride = 3 * d;
    let scale = 1.0 / (hd as f64).sqrt();
    let q = &qkv[i * stride + h * hd..i * stride + (h + 1) * hd];
    let mut max = f64::NEG_INFINITY;
    for j in 0..=i {
        let k = &qkv[j * stride + d + h * hd..j * stride + d + (h + 1) * hd];
        let s = dot(q, k) * scale;
        probs[j] = s;
        max = max.max(s);
    }
    let mut sum = 0.0;
    for p in probs[..=i].iter_mut() {
        *p = (*p - max).exp();
        sum += *p;
    }
    for p in probs[..=i].iter_mut() {
        *p /= sum;
    }
    out.fill(0.0);
    for j in 0..=i {
        let v = &qkv[j * stride + 2 * d + h * hd..j * stride + 2 * d + (h + 1) * hd];
        let p = probs[j];
        for (o, &vv) in out.iter_mut().zip(v) {
            *o += p * vv;
        }
    }
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    for (o, z) in out.iter_mut().zip(logits) {
        *o = z - lse;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    log_softmax(logits, &mut out);
    out.iter_mut().for_each(|v| *v = v.exp());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.3, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn log_softmax_normalises() {
        let z = [1.0, -2.0, 0.5, 700.0];
        let mut out = [0.0; 4];
        log_softmax(&z, &mut out);
        let s: f64 = out.iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
