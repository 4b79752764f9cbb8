use uta_core::par;
use uta_core::raster::reflect_index;

use crate::autograd::Var;
use crate::error::{shape_err, Error, Result};
use crate::gemm::gemm;
use crate::tensor::Tensor;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Geometry of a sliding `k×k` window over a `c×h×w` image producing an
/// `gh×gw` grid.
#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    gh: usize,
    gw: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.gh * self.gw
    }
}

fn im2col(img: &[f64], g: Geom) -> Vec<f64> {
    let mut cols = vec![0.0; g.rows() * g.cols()];
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * g.cols()..(row + 1) * g.cols()];
                for oy in 0..g.gh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &img[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for ox in 0..g.gw {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.gw + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: Geom) -> Vec<f64> {
    let mut img = vec![0.0; g.c * g.h * g.w];
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * g.cols()..(row + 1) * g.cols()];
                for oy in 0..g.gh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.gw {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            img[base + ix as usize] += src[oy * g.gw + ox];
                        }
                    }
                }
            }
        }
    }
    img
}

fn sum_in_order(parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for p in parts {
        acc.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
    }
    acc
}

fn check_rank(x: &Var, rank: usize, what: &str) -> Result<()> {
    if x.shape().len() != rank {
        return Err(Error::Config(format!(
            "{what} expects rank {rank}, got shape {:?}",
            x.shape()
        )));
    }
    Ok(())
}

/// 2-D convolution with zero padding. `w` is `[Cout, Cin, k, k]`, `b` is
/// `[Cout]`.
pub fn conv2d(x: &Var, w: &Var, b: Option<&Var>, stride: usize, pad: usize) -> Result<Var> {
    check_rank(x, 4, "conv2d input")?;
    check_rank(w, 4, "conv2d weight")?;
    let (bn, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    if w.shape()[1] != cin || w.shape()[3] != k {
        return Err(shape_err(&[cout, cin, k, k], w.shape()));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(shape_err(&[cout], b.shape()));
        }
    }
    if h + 2 * pad < k || wd + 2 * pad < k || stride == 0 {
        return Err(Error::Config(format!("conv2d: {h}x{wd} input too small for kernel {k}")));
    }
    let g = Geom {
        c: cin,
        h,
        w: wd,
        k,
        stride,
        pad,
        gh: (h + 2 * pad - k) / stride + 1,
        gw: (wd + 2 * pad - k) / stride + 1,
    };
    let (xin, win) = (x.value().clone(), w.value().clone());
    let bias = b.map(|b| b.value().clone());
    let in_len = cin * h * wd;
    let out_len = cout * g.cols();
    let outs = par::map_range(bn, |i| {
        let cols = im2col(&xin.data()[i * in_len..(i + 1) * in_len], g);
        let mut y = vec![0.0; out_len];
        if let Some(bias) = &bias {
            for (co, chunk) in y.chunks_mut(g.cols()).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bias.data()[co]);
            }
        }
        gemm(cout, g.rows(), g.cols(), 1.0, win.data(), false, &cols, false, 1.0, &mut y);
        y
    });
    let out = Tensor::from_parts(vec![bn, cout, g.gh, g.gw], outs.concat());
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        parents.push(b.clone());
    }
    Ok(Var::from_op(out, parents, move |gy, needs| {
        let per = par::map_range(bn, |i| {
            let dy = &gy[i * out_len..(i + 1) * out_len];
            let dx = needs[0].then(|| {
                let mut dcols = vec![0.0; g.rows() * g.cols()];
                gemm(g.rows(), cout, g.cols(), 1.0, win.data(), true, dy, false, 0.0, &mut dcols);
                col2im(&dcols, g)
            });
            let dw = needs[1].then(|| {
                let cols = im2col(&xin.data()[i * in_len..(i + 1) * in_len], g);
                let mut dw = vec![0.0; cout * g.rows()];
                gemm(cout, g.cols(), g.rows(), 1.0, dy, false, &cols, true, 0.0, &mut dw);
                dw
            });
            let db = (needs.len() > 2 && needs[2])
                .then(|| dy.chunks(g.cols()).map(|c| c.iter().sum::<f64>()).collect::<Vec<_>>());
            (dx, dw, db)
        });
        let mut dx = Vec::new();
        let (mut dws, mut dbs) = (Vec::new(), Vec::new());
        for (a, b, c) in per {
            if let Some(a) = a {
                dx.extend(a);
            }
            dws.extend(b);
            dbs.extend(c);
        }
        let mut grads = vec![
            needs[0].then_some(dx),
            needs[1].then(|| sum_in_order(dws, cout * g.rows())),
        ];
        if needs.len() > 2 {
            grads.push(needs[2].then(|| sum_in_order(dbs, cout)));
        }
        grads
    }))
}

/// Transposed convolution (the adjoint of [`conv2d`] with the same stride and
/// padding), output size `(H−1)·s − 2p + k + output_pad`. `w` is
/// `[Cin, Cout, k, k]`.
pub fn conv_transpose2d(
    x: &Var,
    w: &Var,
    b: Option<&Var>,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> Result<Var> {
    check_rank(x, 4, "conv_transpose2d input")?;
    check_rank(w, 4, "conv_transpose2d weight")?;
    let (bn, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, k) = (w.shape()[1], w.shape()[2]);
    if w.shape()[0] != cin || w.shape()[3] != k {
        return Err(shape_err(&[cin, cout, k, k], w.shape()));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(shape_err(&[cout], b.shape()));
        }
    }
    if stride == 0 || output_pad >= stride {
        return Err(Error::Config("output padding must be smaller than the stride".into()));
    }
    let ho = ((h - 1) * stride + k + output_pad)
        .checked_sub(2 * pad)
        .ok_or_else(|| Error::Config("transposed conv output would be empty".into()))?;
    let wo = ((wd - 1) * stride + k + output_pad)
        .checked_sub(2 * pad)
        .ok_or_else(|| Error::Config("transposed conv output would be empty".into()))?;
    let g = Geom {
        c: cout,
        h: ho,
        w: wo,
        k,
        stride,
        pad,
        gh: h,
        gw: wd,
    };
    let (xin, win) = (x.value().clone(), w.value().clone());
    let bias = b.map(|b| b.value().clone());
    let in_len = cin * h * wd;
    let out_len = cout * ho * wo;
    let outs = par::map_range(bn, |i| {
        let xi = &xin.data()[i * in_len..(i + 1) * in_len];
        let mut cols = vec![0.0; g.rows() * g.cols()];
        gemm(g.rows(), cin, g.cols(), 1.0, win.data(), true, xi, false, 0.0, &mut cols);
        let mut y = col2im(&cols, g);
        if let Some(bias) = &bias {
            for (co, chunk) in y.chunks_mut(ho * wo).enumerate() {
                chunk.iter_mut().for_each(|v| *v += bias.data()[co]);
            }
        }
        y
    });
    let out = Tensor::from_parts(vec![bn, cout, ho, wo], outs.concat());
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        parents.push(b.clone());
    }
    Ok(Var::from_op(out, parents, move |gy, needs| {
        let per = par::map_range(bn, |i| {
            let dy = &gy[i * out_len..(i + 1) * out_len];
            let dcols = im2col(dy, g);
            let dx = needs[0].then(|| {
                let mut dx = vec![0.0; in_len];
                gemm(cin, g.rows(), g.cols(), 1.0, win.data(), false, &dcols, false, 0.0, &mut dx);
                dx
            });
            let dw = needs[1].then(|| {
                let xi = &xin.data()[i * in_len..(i + 1) * in_len];
                let mut dw = vec![0.0; cin * g.rows()];
                gemm(cin, g.cols(), g.rows(), 1.0, xi, false, &dcols, true, 0.0, &mut dw);
                dw
            });
            let db = (needs.len() > 2 && needs[2])
                .then(|| dy.chunks(ho * wo).map(|c| c.iter().sum::<f64>()).collect::<Vec<_>>());
            (dx, dw, db)
        });
        let mut dx = Vec::new();
        let (mut dws, mut dbs) = (Vec::new(), Vec::new());
        for (a, b, c) in per {
            if let Some(a) = a {
                dx.extend(a);
            }
            dws.extend(b);
            dbs.extend(c);
        }
        let mut grads = vec![
            needs[0].then_some(dx),
            needs[1].then(|| sum_in_order(dws, cin * g.rows())),
        ];
        if needs.len() > 2 {
            grads.push(needs[2].then(|| sum_in_order(dbs, cout)));
        }
        grads
    }))
}

/// Per-sample, per-channel normalization over the spatial extent, without
/// affine parameters.
pub fn instance_norm(x: &Var) -> Result<Var> {
    check_rank(x, 4, "instance_norm")?;
    let plane = x.shape()[2] * x.shape()[3];
    let planes = x.shape()[0] * x.shape()[1];
    let src = x.value().clone();
    let stats = par::map_range(planes, |p| {
        let v = &src.data()[p * plane..(p + 1) * plane];
        let mean = v.iter().sum::<f64>() / plane as f64;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / plane as f64;
        let rstd = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
        let y: Vec<f64> = v.iter().map(|a| (a - mean) * rstd).collect();
        (y, rstd)
    });
    let rstd: Vec<f64> = stats.iter().map(|s| s.1).collect();
    let y: Vec<f64> = stats.into_iter().flat_map(|s| s.0).collect();
    let out = Tensor::from_parts(x.shape().to_vec(), y);
    let yv = out.clone();
    Ok(Var::from_op(out, vec![x.clone()], move |g, _| {
        let parts = par::map_range(planes, |p| {
            let gy = &g[p * plane..(p + 1) * plane];
            let yy = &yv.data()[p * plane..(p + 1) * plane];
            let n = plane as f64;
            let mg = gy.iter().sum::<f64>() / n;
            let mgy = gy.iter().zip(yy).map(|(a, b)| a * b).sum::<f64>() / n;
            gy.iter()
                .zip(yy)
                .map(|(a, b)| rstd[p] * (a - mg - b * mgy))
                .collect::<Vec<_>>()
        });
        vec![Some(parts.concat())]
    }))
}

/// 4-neighbour Laplacian `[[0,1,0],[1,−4,1],[0,1,0]]` with mirrored
/// (edge-excluding) borders, applied per channel.
pub fn laplacian(x: &Var) -> Result<Var> {
    check_rank(x, 4, "laplacian")?;
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let planes = x.shape()[0] * x.shape()[1];
    let plane = h * w;
    let taps = move |i: usize, j: usize| -> [(usize, f64); 5] {
        let (ii, jj) = (i as isize, j as isize);
        [
            (reflect_index(ii - 1, h) * w + j, 1.0),
            (reflect_index(ii + 1, h) * w + j, 1.0),
            (i * w + reflect_index(jj - 1, w), 1.0),
            (i * w + reflect_index(jj + 1, w), 1.0),
            (i * w + j, -4.0),
        ]
    };
    let src = x.value().clone();
    let y: Vec<f64> = par::map_range(planes, |p| {
        let v = &src.data()[p * plane..(p + 1) * plane];
        let mut out = vec![0.0; plane];
        for i in 0..h {
            for j in 0..w {
                out[i * w + j] = taps(i, j).iter().map(|&(k, c)| c * v[k]).sum();
            }
        }
        out
    })
    .concat();
    Ok(Var::from_op(
        Tensor::from_parts(x.shape().to_vec(), y),
        vec![x.clone()],
        move |g, _| {
            let parts = par::map_range(planes, |p| {
                let gy = &g[p * plane..(p + 1) * plane];
                let mut dx = vec![0.0; plane];
                for i in 0..h {
                    for j in 0..w {
                        for (k, c) in taps(i, j) {
                            dx[k] += c * gy[i * w + j];
                        }
                    }
                }
                dx
            });
            vec![Some(parts.concat())]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], f: impl Fn(usize) -> f64) -> Var {
        let n = shape.iter().product();
        Var::parameter(Tensor::new(shape, (0..n).map(f).collect()).unwrap())
    }

    fn naive_conv(x: &Var, w: &Var, stride: usize, pad: usize) -> Vec<f64> {
        let (b, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, k) = (w.shape()[0], w.shape()[2]);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; b * cout * ho * wo];
        for n in 0..b {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += w.data()[((co * cin + ci) * k + ki) * k + kj]
                                            * x.data()[((n * cin + ci) * h + iy as usize) * wd + ix as usize];
                                    }
                                }
                            }
                        }
                        out[((n * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let x = t(&[2, 3, 7, 6], |i| ((i * 37) % 11) as f64 / 11.0 - 0.4);
        let w = t(&[4, 3, 3, 3], |i| ((i * 13) % 7) as f64 / 7.0 - 0.5);
        for (s, p) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
            let y = conv2d(&x, &w, None, s, p).unwrap();
            let expect = naive_conv(&x, &w, s, p);
            assert_eq!(y.data().len(), expect.len());
            for (a, b) in y.data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_conv_is_adjoint() {
        // <conv(x), y> == <x, convT(y)> for matching geometry
        let x = t(&[1, 2, 8, 8], |i| ((i * 7) % 5) as f64 - 2.0);
        let w = t(&[3, 2, 3, 3], |i| ((i * 5) % 9) as f64 / 9.0);
        let y = t(&[1, 3, 4, 4], |i| ((i * 3) % 7) as f64 - 3.0);
        let cx = conv2d(&x, &w, None, 2, 1).unwrap();
        let ty = conv_transpose2d(&y, &w, None, 2, 1, 1).unwrap();
        assert_eq!(ty.shape(), &[1, 2, 8, 8]);
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let x = t(&[1, 1, 5, 4], |_| 0.7);
        assert!(laplacian(&x).unwrap().data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn instance_norm_standardizes() {
        let x = t(&[1, 2, 4, 4], |i| (i as f64).sin());
        let y = instance_norm(&x).unwrap();
        for p in y.data().chunks(16) {
            let m = p.iter().sum::<f64>() / 16.0;
            let v = p.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 16.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }
}
