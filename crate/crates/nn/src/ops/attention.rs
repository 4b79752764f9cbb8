//! Token-volume operations and the fused shifted-window attention block.
//!
//! Token volumes are channel-last `[B, T, H, W, C]`.

use uta_core::par;

use crate::autograd::Var;
use crate::error::{shape_err, Error, Result};
use crate::gemm::gemm;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn add_partial(acc: &mut [f64], part: &[f64]) {
    acc.iter_mut().zip(part).for_each(|(a, b)| *a += b);
}

fn col_sum_into(acc: &mut [f64], m: &[f64], cols: usize) {
    for row in m.chunks(cols) {
        add_partial(acc, row);
    }
}

/// Normalizes rows of length `C` then applies `x̂·γ + β`.
fn ln_rows(x: &[f64], c: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = x.len() / c;
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    let mut rstd = vec![0.0; n];
    for r in 0..n {
        let row = &x[r * c..(r + 1) * c];
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
        let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        rstd[r] = rs;
        for j in 0..c {
            let h = (row[j] - mean) * rs;
            xhat[r * c + j] = h;
            y[r * c + j] = h * gamma[j] + beta[j];
        }
    }
    (xhat, rstd, y)
}

/// Backward of [`ln_rows`]: returns `dx` and accumulates `dγ`, `dβ`.
fn ln_rows_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let c = gamma.len();
    let mut dx = vec![0.0; dy.len()];
    for (r, &rs) in rstd.iter().enumerate() {
        let (dyr, xr) = (&dy[r * c..(r + 1) * c], &xhat[r * c..(r + 1) * c]);
        let (mut m1, mut m2) = (0.0, 0.0);
        for j in 0..c {
            dgamma[j] += dyr[j] * xr[j];
            dbeta[j] += dyr[j];
            let dh = dyr[j] * gamma[j];
            m1 += dh;
            m2 += dh * xr[j];
        }
        m1 /= c as f64;
        m2 /= c as f64;
        for j in 0..c {
            dx[r * c + j] = rs * (dyr[j] * gamma[j] - m1 - xr[j] * m2);
        }
    }
    dx
}

fn last_dim(x: &Var) -> Result<usize> {
    x.shape()
        .last()
        .copied()
        .filter(|&c| c > 0)
        .ok_or_else(|| Error::Config(format!("expected a non-empty last axis, got {:?}", x.shape())))
}

fn check_vec(v: &Var, len: usize) -> Result<()> {
    if v.shape() != [len] {
        return Err(shape_err(&[len], v.shape()));
    }
    Ok(())
}

/// Layer normalization over the last axis.
pub fn layer_norm(x: &Var, gamma: &Var, beta: &Var) -> Result<Var> {
    let c = last_dim(x)?;
    check_vec(gamma, c)?;
    check_vec(beta, c)?;
    let rows = x.value().len() / c;
    let ranges = par::split_ranges(rows, par::REDUCTION_PARTS);
    let (xv, gv, bv) = (x.value().clone(), gamma.value().clone(), beta.value().clone());
    let parts = par::map_slice(&ranges, |r| {
        ln_rows(&xv.data()[r.start * c..r.end * c], c, gv.data(), bv.data())
    });
    let y: Vec<f64> = parts.iter().flat_map(|p| p.2.iter().copied()).collect();
    Ok(Var::from_op(
        Tensor::from_parts(x.shape().to_vec(), y),
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |g, _| {
            let grads = par::map_slice(&ranges, |r| {
                let (xhat, rstd, _) = ln_rows(&xv.data()[r.start * c..r.end * c], c, gv.data(), bv.data());
                let (mut dg, mut db) = (vec![0.0; c], vec![0.0; c]);
                let dx = ln_rows_backward(&g[r.start * c..r.end * c], &xhat, &rstd, gv.data(), &mut dg, &mut db);
                (dx, dg, db)
            });
            let (mut dg, mut db) = (vec![0.0; c], vec![0.0; c]);
            let mut dx = Vec::with_capacity(rows * c);
            for (a, b, d) in grads {
                dx.extend(a);
                add_partial(&mut dg, &b);
                add_partial(&mut db, &d);
            }
            vec![Some(dx), Some(dg), Some(db)]
        },
    ))
}

/// `x·W + b` over the last axis; `w` is `[Cin, Cout]`.
pub fn linear(x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
    let cin = last_dim(x)?;
    if w.shape().len() != 2 || w.shape()[0] != cin {
        return Err(shape_err(&[cin, w.shape().get(1).copied().unwrap_or(0)], w.shape()));
    }
    let cout = w.shape()[1];
    if let Some(b) = b {
        check_vec(b, cout)?;
    }
    let rows = x.value().len() / cin;
    let ranges = par::split_ranges(rows, par::REDUCTION_PARTS);
    let (xv, wv) = (x.value().clone(), w.value().clone());
    let bias = b.map(|b| b.value().clone());
    let parts = par::map_slice(&ranges, |r| {
        let n = r.len();
        let mut y = vec![0.0; n * cout];
        if let Some(bias) = &bias {
            for row in y.chunks_mut(cout) {
                row.copy_from_slice(bias.data());
            }
        }
        gemm(n, cin, cout, 1.0, &xv.data()[r.start * cin..r.end * cin], false, wv.data(), false, 1.0, &mut y);
        y
    });
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("non-empty shape") = cout;
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        parents.push(b.clone());
    }
    Ok(Var::from_op(
        Tensor::from_parts(shape, parts.concat()),
        parents,
        move |g, needs| {
            let grads = par::map_slice(&ranges, |r| {
                let n = r.len();
                let gy = &g[r.start * cout..r.end * cout];
                let dx = needs[0].then(|| {
                    let mut dx = vec![0.0; n * cin];
                    gemm(n, cout, cin, 1.0, gy, false, wv.data(), true, 0.0, &mut dx);
                    dx
                });
                let dw = needs[1].then(|| {
                    let mut dw = vec![0.0; cin * cout];
                    gemm(cin, n, cout, 1.0, &xv.data()[r.start * cin..r.end * cin], true, gy, false, 0.0, &mut dw);
                    dw
                });
                let mut db = vec![0.0; cout];
                col_sum_into(&mut db, gy, cout);
                (dx, dw, db)
            });
            let mut dx = Vec::with_capacity(if needs[0] { rows * cin } else { 0 });
            let mut dw = vec![0.0; cin * cout];
            let mut db = vec![0.0; cout];
            for (a, b_, c_) in grads {
                if let Some(a) = a {
                    dx.extend(a);
                }
                if let Some(b_) = b_ {
                    add_partial(&mut dw, &b_);
                }
                add_partial(&mut db, &c_);
            }
            let mut out = vec![needs[0].then_some(dx), needs[1].then_some(dw)];
            if needs.len() > 2 {
                out.push(needs[2].then_some(db));
            }
            out
        },
    ))
}

fn dims5(x: &[usize]) -> Result<[usize; 5]> {
    <[usize; 5]>::try_from(x)
        .map_err(|_| Error::Config(format!("expected a [B, T, H, W, C] volume, got {x:?}")))
}

/// `[B, T, H, W, C] → [B, T, H/2, W/2, 4C]`, gathering each 2×2 neighbourhood
/// as channel blocks in the order (0,0), (1,0), (0,1), (1,1) (row, col).
pub fn space_to_depth(x: &Var) -> Result<Var> {
    let [b, t, h, w, c] = dims5(x.shape())?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!("space_to_depth needs even H and W, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut index = Vec::with_capacity(x.value().len());
    for f in 0..b * t {
        for y in 0..ho {
            for xx in 0..wo {
                for (dy, dx) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let base = ((f * h + 2 * y + dy) * w + 2 * xx + dx) * c;
                    index.extend(base..base + c);
                }
            }
        }
    }
    let src = x.data();
    let data: Vec<f64> = index.iter().map(|&i| src[i]).collect();
    Ok(Var::from_op(
        Tensor::from_parts(vec![b, t, ho, wo, 4 * c], data),
        vec![x.clone()],
        move |g, _| {
            let mut dx = vec![0.0; g.len()];
            for (o, &i) in index.iter().enumerate() {
                dx[i] = g[o];
            }
            vec![Some(dx)]
        },
    ))
}

/// Cyclic shift per axis: element `i` moves to `(i + shift) mod n`.
pub fn roll(x: &Tensor, shifts: &[isize]) -> Result<Tensor> {
    let shape = x.shape();
    if shifts.len() != shape.len() {
        return Err(Error::Config(format!("{} shifts for rank {}", shifts.len(), shape.len())));
    }
    let n = x.len();
    let rank = shape.len();
    let mut out = vec![0.0; n];
    let mut idx = vec![0usize; rank];
    for (flat, &v) in x.data().iter().enumerate() {
        let mut rem = flat;
        for ax in (0..rank).rev() {
            idx[ax] = rem % shape[ax];
            rem /= shape[ax];
        }
        let mut dst = 0;
        for ax in 0..rank {
            let d = shape[ax] as isize;
            dst = dst * shape[ax] + (idx[ax] as isize + shifts[ax]).rem_euclid(d) as usize;
        }
        out[dst] = v;
    }
    Tensor::new(shape, out)
}

/// `[B, T, H, W, C] → [B·nW, Wt·Wh·Ww, C]`; dims must be multiples of the
/// window. Windows are ordered batch-major then (t, h, w).
pub fn partition_windows(x: &Tensor, window: [usize; 3]) -> Result<Tensor> {
    let [b, t, h, w, c] = dims5(x.shape())?;
    let [wt, wh, ww] = window;
    if wt == 0 || wh == 0 || ww == 0 || t % wt != 0 || h % wh != 0 || w % ww != 0 {
        return Err(Error::Config(format!("window {window:?} does not tile {t}x{h}x{w}")));
    }
    let src = x.data();
    let mut out = Vec::with_capacity(x.len());
    for bi in 0..b {
        for a in 0..t / wt {
            for bb in 0..h / wh {
                for cc in 0..w / ww {
                    for i in 0..wt {
                        for j in 0..wh {
                            let row = (((bi * t + a * wt + i) * h + bb * wh + j) * w + cc * ww) * c;
                            out.extend_from_slice(&src[row..row + ww * c]);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[b * (t / wt) * (h / wh) * (w / ww), wt * wh * ww, c], out)
}

/// Inverse of [`partition_windows`] for a volume of shape `dims`.
pub fn merge_windows(windows: &Tensor, dims: [usize; 5], window: [usize; 3]) -> Result<Tensor> {
    let [b, t, h, w, c] = dims;
    let [wt, wh, ww] = window;
    if wt == 0 || wh == 0 || ww == 0 || t % wt != 0 || h % wh != 0 || w % ww != 0 {
        return Err(Error::Config(format!("window {window:?} does not tile {t}x{h}x{w}")));
    }
    let expect = [b * (t / wt) * (h / wh) * (w / ww), wt * wh * ww, c];
    if windows.shape() != expect {
        return Err(shape_err(&expect, windows.shape()));
    }
    let src = windows.data();
    let mut out = vec![0.0; windows.len()];
    let mut pos = 0;
    for bi in 0..b {
        for a in 0..t / wt {
            for bb in 0..h / wh {
                for cc in 0..w / ww {
                    for i in 0..wt {
                        for j in 0..wh {
                            let row = (((bi * t + a * wt + i) * h + bb * wh + j) * w + cc * ww) * c;
                            out[row..row + ww * c].copy_from_slice(&src[pos..pos + ww * c]);
                            pos += ww * c;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&dims, out)
}

fn axis_region(p: usize, padded: usize, window: usize, shift: usize) -> usize {
    if p < padded - window {
        0
    } else if p < padded - shift {
        1
    } else {
        2
    }
}

/// Region label of every position of a rolled, padded `T×H×W` volume.
/// Tokens attend only within their own label, so content that wrapped
/// around during the cyclic shift never mixes with its new neighbours.
pub fn window_region_ids(padded: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> Vec<usize> {
    let mut out = Vec::with_capacity(padded.iter().product());
    for t in 0..padded[0] {
        let rt = axis_region(t, padded[0], window[0], shift[0]);
        for h in 0..padded[1] {
            let rh = axis_region(h, padded[1], window[1], shift[1]);
            for w in 0..padded[2] {
                out.push((rt * 3 + rh) * 3 + axis_region(w, padded[2], window[2], shift[2]));
            }
        }
    }
    out
}

/// Parameters of one attention block: pre-norm, fused QKV projection
/// (`[C, 3C]`) and output projection (`[C, C]`).
#[derive(Clone, Debug)]
pub struct WindowAttentionParams {
    pub norm_gamma: Var,
    pub norm_beta: Var,
    pub qkv_weight: Var,
    pub qkv_bias: Var,
    pub proj_weight: Var,
    pub proj_bias: Var,
}

impl WindowAttentionParams {
    fn vars(&self) -> [&Var; 6] {
        [
            &self.norm_gamma,
            &self.norm_beta,
            &self.qkv_weight,
            &self.qkv_bias,
            &self.proj_weight,
            &self.proj_bias,
        ]
    }

    fn check(&self, c: usize) -> Result<()> {
        let expect: [&[usize]; 6] = [&[c], &[c], &[c, 3 * c], &[3 * c], &[c, c], &[c]];
        for (v, e) in self.vars().iter().zip(expect) {
            if v.shape() != e {
                return Err(shape_err(e, v.shape()));
            }
        }
        Ok(())
    }
}

/// Effective window layout of one block on a `T×H×W` volume.
#[derive(Clone, Copy, Debug)]
struct Layout {
    dims: [usize; 3],
    window: [usize; 3],
    shift: [usize; 3],
    padded: [usize; 3],
}

impl Layout {
    fn new(dims: [usize; 3], window: [usize; 3], shifted: bool) -> Self {
        let mut l = Layout {
            dims,
            window: [1; 3],
            shift: [0; 3],
            padded: dims,
        };
        for i in 0..3 {
            let w = window[i].max(1).min(dims[i]);
            l.window[i] = w;
            l.shift[i] = if shifted && dims[i] > window[i] { w / 2 } else { 0 };
            l.padded[i] = dims[i].div_ceil(w) * w;
        }
        l
    }

    fn windows_per_item(&self) -> usize {
        (0..3).map(|i| self.padded[i] / self.window[i]).product()
    }
}

/// Flattened window membership: token indices (into the `B·T·H·W` token
/// axis) and region labels, padded tokens omitted.
struct Windows {
    tokens: Vec<usize>,
    regions: Vec<usize>,
    offsets: Vec<usize>,
}

impl Windows {
    fn build(batch: usize, l: &Layout) -> Self {
        let ids = window_region_ids(l.padded, l.window, l.shift);
        let [pt, ph, pw] = l.padded;
        let [wt, wh, ww] = l.window;
        let [t, h, w] = l.dims;
        let mut tokens = Vec::with_capacity(batch * t * h * w);
        let mut regions = Vec::with_capacity(batch * t * h * w);
        let mut offsets = vec![0];
        for b in 0..batch {
            for a in 0..pt / wt {
                for bb in 0..ph / wh {
                    for cc in 0..pw / ww {
                        for i in 0..wt {
                            let p0 = a * wt + i;
                            let q0 = (p0 + l.shift[0]) % pt;
                            if q0 >= t {
                                continue;
                            }
                            for j in 0..wh {
                                let p1 = bb * wh + j;
                                let q1 = (p1 + l.shift[1]) % ph;
                                if q1 >= h {
                                    continue;
                                }
                                for k in 0..ww {
                                    let p2 = cc * ww + k;
                                    let q2 = (p2 + l.shift[2]) % pw;
                                    if q2 >= w {
                                        continue;
                                    }
                                    tokens.push(((b * t + q0) * h + q1) * w + q2);
                                    regions.push(ids[(p0 * ph + p1) * pw + p2]);
                                }
                            }
                        }
                        offsets.push(tokens.len());
                    }
                }
            }
        }
        Windows {
            tokens,
            regions,
            offsets,
        }
    }

    fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

/// Borrowed parameter values of one block.
struct Weights<'a> {
    c: usize,
    heads: usize,
    gamma: &'a [f64],
    beta: &'a [f64],
    wqkv: &'a [f64],
    bqkv: &'a [f64],
    wp: &'a [f64],
    bp: &'a [f64],
}

struct WindowState {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
    xn: Vec<f64>,
    qkv: Vec<f64>,
    /// `heads × n × n` attention probabilities.
    probs: Vec<f64>,
    attended: Vec<f64>,
    out: Vec<f64>,
}

fn head_slice(qkv: &[f64], n: usize, c: usize, part: usize, head: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * d);
    for r in 0..n {
        let base = r * 3 * c + part * c + head * d;
        out.extend_from_slice(&qkv[base..base + d]);
    }
    out
}

fn window_forward(wt: &Weights, xw: &[f64], regions: &[usize]) -> WindowState {
    let (c, heads) = (wt.c, wt.heads);
    let d = c / heads;
    let n = regions.len();
    let scale = 1.0 / (d as f64).sqrt();
    let (xhat, rstd, xn) = ln_rows(xw, c, wt.gamma, wt.beta);
    let mut qkv = Vec::with_capacity(n * 3 * c);
    for _ in 0..n {
        qkv.extend_from_slice(wt.bqkv);
    }
    gemm(n, c, 3 * c, 1.0, &xn, false, wt.wqkv, false, 1.0, &mut qkv);
    let mut probs = vec![0.0; heads * n * n];
    let mut attended = vec![0.0; n * c];
    let mut oh = vec![0.0; n * d];
    for h in 0..heads {
        let q = head_slice(&qkv, n, c, 0, h, d);
        let k = head_slice(&qkv, n, c, 1, h, d);
        let v = head_slice(&qkv, n, c, 2, h, d);
        let p = &mut probs[h * n * n..(h + 1) * n * n];
        gemm(n, d, n, scale, &q, false, &k, true, 0.0, p);
        for i in 0..n {
            let row = &mut p[i * n..(i + 1) * n];
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if regions[j] == regions[i] {
                    max = max.max(row[j]);
                }
            }
            let mut total = 0.0;
            for j in 0..n {
                row[j] = if regions[j] == regions[i] {
                    (row[j] - max).exp()
                } else {
                    0.0
                };
                total += row[j];
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        gemm(n, n, d, 1.0, p, false, &v, false, 0.0, &mut oh);
        for r in 0..n {
            attended[r * c + h * d..r * c + (h + 1) * d].copy_from_slice(&oh[r * d..(r + 1) * d]);
        }
    }
    let mut out = Vec::with_capacity(n * c);
    for _ in 0..n {
        out.extend_from_slice(wt.bp);
    }
    gemm(n, c, c, 1.0, &attended, false, wt.wp, false, 1.0, &mut out);
    WindowState {
        xhat,
        rstd,
        xn,
        qkv,
        probs,
        attended,
        out,
    }
}

/// Parameter gradients accumulated over windows, in `vars()` order.
struct ParamGrads([Vec<f64>; 6]);

impl ParamGrads {
    fn zeros(c: usize) -> Self {
        ParamGrads([
            vec![0.0; c],
            vec![0.0; c],
            vec![0.0; 3 * c * c],
            vec![0.0; 3 * c],
            vec![0.0; c * c],
            vec![0.0; c],
        ])
    }

    fn add(&mut self, other: &ParamGrads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            add_partial(a, b);
        }
    }
}

/// Gradient with respect to the window input (excluding the residual path).
fn window_backward(wt: &Weights, s: &WindowState, dy: &[f64], acc: &mut ParamGrads) -> Vec<f64> {
    let (c, heads) = (wt.c, wt.heads);
    let d = c / heads;
    let n = s.rstd.len();
    let scale = 1.0 / (d as f64).sqrt();
    let [dgamma, dbeta, dwqkv, dbqkv, dwp, dbp] = &mut acc.0;
    gemm(c, n, c, 1.0, &s.attended, true, dy, false, 1.0, dwp);
    col_sum_into(dbp, dy, c);
    let mut dattended = vec![0.0; n * c];
    gemm(n, c, c, 1.0, dy, false, wt.wp, true, 0.0, &mut dattended);
    let mut dqkv = vec![0.0; n * 3 * c];
    let mut doh = vec![0.0; n * d];
    let mut dp = vec![0.0; n * n];
    let (mut dq, mut dk, mut dv) = (vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d]);
    for h in 0..heads {
        let q = head_slice(&s.qkv, n, c, 0, h, d);
        let k = head_slice(&s.qkv, n, c, 1, h, d);
        let v = head_slice(&s.qkv, n, c, 2, h, d);
        for r in 0..n {
            doh[r * d..(r + 1) * d].copy_from_slice(&dattended[r * c + h * d..r * c + (h + 1) * d]);
        }
        let p = &s.probs[h * n * n..(h + 1) * n * n];
        gemm(n, d, n, 1.0, &doh, false, &v, true, 0.0, &mut dp);
        gemm(n, n, d, 1.0, p, true, &doh, false, 0.0, &mut dv);
        for i in 0..n {
            let (pr, dr) = (&p[i * n..(i + 1) * n], &mut dp[i * n..(i + 1) * n]);
            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
            for j in 0..n {
                dr[j] = pr[j] * (dr[j] - dot) * scale;
            }
        }
        gemm(n, n, d, 1.0, &dp, false, &k, false, 0.0, &mut dq);
        gemm(n, n, d, 1.0, &dp, true, &q, false, 0.0, &mut dk);
        for r in 0..n {
            for (part, src) in [(0, &dq), (1, &dk), (2, &dv)] {
                let base = r * 3 * c + part * c + h * d;
                dqkv[base..base + d].copy_from_slice(&src[r * d..(r + 1) * d]);
            }
        }
    }
    gemm(c, n, 3 * c, 1.0, &s.xn, true, &dqkv, false, 1.0, dwqkv);
    col_sum_into(dbqkv, &dqkv, 3 * c);
    let mut dxn = vec![0.0; n * c];
    gemm(n, 3 * c, c, 1.0, &dqkv, false, wt.wqkv, true, 0.0, &mut dxn);
    ln_rows_backward(&dxn, &s.xhat, &s.rstd, wt.gamma, dgamma, dbeta)
}

fn gather(src: &[f64], tokens: &[usize], c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(tokens.len() * c);
    for &t in tokens {
        out.extend_from_slice(&src[t * c..(t + 1) * c]);
    }
    out
}

struct Prepared {
    dims: [usize; 5],
    windows: Windows,
    values: [Tensor; 6],
}

fn prepare(x: &[usize], p: &WindowAttentionParams, heads: usize, window: [usize; 3], shifted: bool) -> Result<Prepared> {
    let dims = dims5(x)?;
    let c = dims[4];
    if heads == 0 || c % heads != 0 {
        return Err(Error::Config(format!("{c} channels cannot be split into {heads} heads")));
    }
    p.check(c)?;
    let layout = Layout::new([dims[1], dims[2], dims[3]], window, shifted);
    let windows = Windows::build(dims[0], &layout);
    debug_assert_eq!(windows.count(), dims[0] * layout.windows_per_item());
    let values = p.vars().map(|v| v.value().clone());
    Ok(Prepared { dims, windows, values })
}

fn weights<'a>(values: &'a [Tensor; 6], c: usize, heads: usize) -> Weights<'a> {
    Weights {
        c,
        heads,
        gamma: values[0].data(),
        beta: values[1].data(),
        wqkv: values[2].data(),
        bqkv: values[3].data(),
        wp: values[4].data(),
        bp: values[5].data(),
    }
}

/// One shifted-window self-attention block with residual:
/// `x + roll₊ₛ(WAtt(roll₋ₛ(LN(x))))`.
///
/// `window` is clamped to the volume on each axis; the shift is half the
/// window on axes larger than the window and zero elsewhere. Dimensions are
/// padded up to a multiple of the window after which padded tokens neither
/// attend nor are attended to.
pub fn window_attention_block(
    x: &Var,
    p: &WindowAttentionParams,
    heads: usize,
    window: [usize; 3],
    shifted: bool,
) -> Result<Var> {
    let Prepared { dims, windows, values } = prepare(x.shape(), p, heads, window, shifted)?;
    let c = dims[4];
    let ranges = par::split_ranges(windows.count(), par::REDUCTION_PARTS);
    let xv = x.value().clone();
    let deltas = par::map_slice(&ranges, |r| {
        let wt = weights(&values, c, heads);
        let mut out = Vec::new();
        for i in r.clone() {
            let span = windows.range(i);
            let xw = gather(xv.data(), &windows.tokens[span.clone()], c);
            out.extend(window_forward(&wt, &xw, &windows.regions[span]).out);
        }
        out
    });
    let mut y = xv.to_vec();
    scatter_add(&mut y, &windows, &ranges, &deltas, c);
    let mut parents = vec![x.clone()];
    parents.extend(p.vars().into_iter().cloned());
    Ok(Var::from_op(
        Tensor::from_parts(dims.to_vec(), y),
        parents,
        move |g, needs| {
            let parts = par::map_slice(&ranges, |r| {
                let wt = weights(&values, c, heads);
                let mut acc = ParamGrads::zeros(c);
                let mut dx = Vec::new();
                for i in r.clone() {
                    let span = windows.range(i);
                    let toks = &windows.tokens[span.clone()];
                    let xw = gather(xv.data(), toks, c);
                    let state = window_forward(&wt, &xw, &windows.regions[span]);
                    let dy = gather(g, toks, c);
                    dx.extend(window_backward(&wt, &state, &dy, &mut acc));
                }
                (dx, acc)
            });
            let mut total = ParamGrads::zeros(c);
            for (_, acc) in &parts {
                total.add(acc);
            }
            let dx_parts: Vec<Vec<f64>> = parts.into_iter().map(|p| p.0).collect();
            let mut dx = g.to_vec();
            scatter_add(&mut dx, &windows, &ranges, &dx_parts, c);
            let mut out = vec![needs[0].then_some(dx)];
            for (need, gr) in needs[1..].iter().zip(total.0) {
                out.push(need.then_some(gr));
            }
            out
        },
    ))
}

fn scatter_add(dst: &mut [f64], windows: &Windows, ranges: &[std::ops::Range<usize>], parts: &[Vec<f64>], c: usize) {
    for (r, part) in ranges.iter().zip(parts) {
        let toks = &windows.tokens[windows.offsets[r.start]..windows.offsets[r.end]];
        for (k, &t) in toks.iter().enumerate() {
            add_partial(&mut dst[t * c..(t + 1) * c], &part[k * c..(k + 1) * c]);
        }
    }
}

/// Attention probabilities of one window and head, `n × n` row-major.
#[derive(Clone, Debug)]
pub struct AttentionMap {
    pub window: usize,
    pub head: usize,
    pub tokens: usize,
    pub probs: Vec<f64>,
}

/// Attention maps computed by [`window_attention_block`] on `x`.
pub fn window_attention_probs(
    x: &Tensor,
    p: &WindowAttentionParams,
    heads: usize,
    window: [usize; 3],
    shifted: bool,
) -> Result<Vec<AttentionMap>> {
    let Prepared { dims, windows, values } = prepare(x.shape(), p, heads, window, shifted)?;
    let c = dims[4];
    let wt = weights(&values, c, heads);
    let mut out = Vec::new();
    for i in 0..windows.count() {
        let span = windows.range(i);
        let n = span.len();
        if n == 0 {
            continue;
        }
        let xw = gather(x.data(), &windows.tokens[span.clone()], c);
        let state = window_forward(&wt, &xw, &windows.regions[span]);
        for h in 0..heads {
            out.push(AttentionMap {
                window: i,
                head: h,
                tokens: n,
                probs: state.probs[h * n * n..(h + 1) * n * n].to_vec(),
            });
        }
    }
    Ok(out)
}
