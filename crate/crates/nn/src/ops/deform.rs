use uta_core::par;

use crate::autograd::Var;
use crate::error::{shape_err, Error, Result};
use crate::gemm::gemm;
use crate::tensor::Tensor;

struct Geom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn taps(&self) -> usize {
        self.k * self.k
    }

    fn out_len(&self) -> usize {
        self.ho * self.wo
    }

    /// Sampling position of tap `t` for output `(oy, ox)`.
    fn position(&self, off: &[f64], t: usize, oy: usize, ox: usize) -> (f64, f64) {
        let (ki, kj) = (t / self.k, t % self.k);
        let o = oy * self.wo + ox;
        let dy = off[(2 * t) * self.out_len() + o];
        let dx = off[(2 * t + 1) * self.out_len() + o];
        (
            (oy + ki) as f64 - self.pad as f64 + dy,
            (ox + kj) as f64 - self.pad as f64 + dx,
        )
    }
}

/// Bilinear corner taps `(index, weight)` and the partial derivatives of the
/// weights with respect to `(y, x)`; out-of-image corners are dropped.
fn corners(h: usize, w: usize, py: f64, px: f64) -> [(Option<usize>, f64, f64, f64); 4] {
    let (y0, x0) = (py.floor(), px.floor());
    let (ly, lx) = (py - y0, px - x0);
    let at = |y: f64, x: f64| {
        (y >= 0.0 && x >= 0.0 && y < h as f64 && x < w as f64).then(|| y as usize * w + x as usize)
    };
    [
        (at(y0, x0), (1.0 - ly) * (1.0 - lx), -(1.0 - lx), -(1.0 - ly)),
        (at(y0, x0 + 1.0), (1.0 - ly) * lx, -lx, 1.0 - ly),
        (at(y0 + 1.0, x0), ly * (1.0 - lx), 1.0 - lx, -ly),
        (at(y0 + 1.0, x0 + 1.0), ly * lx, lx, ly),
    ]
}

fn sample_cols(img: &[f64], off: &[f64], g: &Geom) -> Vec<f64> {
    let n = g.out_len();
    let mut cols = vec![0.0; g.cin * g.taps() * n];
    for t in 0..g.taps() {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let (py, px) = g.position(off, t, oy, ox);
                let cs = corners(g.h, g.w, py, px);
                for c in 0..g.cin {
                    let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
                    let v: f64 = cs.iter().filter_map(|&(i, wt, _, _)| i.map(|i| wt * plane[i])).sum();
                    cols[(c * g.taps() + t) * n + oy * g.wo + ox] = v;
                }
            }
        }
    }
    cols
}

/// Deformable 3×3-style convolution, stride 1. `offsets` is
/// `[B, 2·k·k, Ho, Wo]` holding `(dy, dx)` per tap; `w` is `[Cout, Cin, k, k]`.
/// Samples are bilinear with zeros outside the image.
pub fn deform_conv2d(x: &Var, offsets: &Var, w: &Var, b: Option<&Var>, pad: usize) -> Result<Var> {
    if x.shape().len() != 4 || w.shape().len() != 4 {
        return Err(Error::Config("deform_conv2d expects rank-4 input and weight".into()));
    }
    let (bn, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    if w.shape()[1] != cin || w.shape()[3] != k {
        return Err(shape_err(&[cout, cin, k, k], w.shape()));
    }
    if h + 2 * pad < k || wd + 2 * pad < k {
        return Err(Error::Config("deform_conv2d: input smaller than kernel".into()));
    }
    let g = Geom {
        cin,
        h,
        w: wd,
        k,
        pad,
        ho: h + 2 * pad + 1 - k,
        wo: wd + 2 * pad + 1 - k,
    };
    let off_shape = [bn, 2 * k * k, g.ho, g.wo];
    if offsets.shape() != off_shape {
        return Err(shape_err(&off_shape, offsets.shape()));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(shape_err(&[cout], b.shape()));
        }
    }
    let rows = cin * g.taps();
    let n = g.out_len();
    let (in_len, off_len, out_len) = (cin * h * wd, 2 * g.taps() * n, cout * n);
    let (xv, ov, wv) = (x.value().clone(), offsets.value().clone(), w.value().clone());
    let bias = b.map(|b| b.value().clone());
    let outs = par::map_range(bn, |i| {
        let cols = sample_cols(
            &xv.data()[i * in_len..(i + 1) * in_len],
            &ov.data()[i * off_len..(i + 1) * off_len],
            &g,
        );
        let mut y = vec![0.0; out_len];
        if let Some(bias) = &bias {
            for (co, chunk) in y.chunks_mut(n).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bias.data()[co]);
            }
        }
        gemm(cout, rows, n, 1.0, wv.data(), false, &cols, false, 1.0, &mut y);
        y
    });
    let out = Tensor::from_parts(vec![bn, cout, g.ho, g.wo], outs.concat());
    let mut parents = vec![x.clone(), offsets.clone(), w.clone()];
    if let Some(b) = b {
        parents.push(b.clone());
    }
    Ok(Var::from_op(out, parents, move |gy, needs| {
        let per = par::map_range(bn, |i| {
            let img = &xv.data()[i * in_len..(i + 1) * in_len];
            let off = &ov.data()[i * off_len..(i + 1) * off_len];
            let dy = &gy[i * out_len..(i + 1) * out_len];
            let mut dcols = vec![0.0; rows * n];
            gemm(rows, cout, n, 1.0, wv.data(), true, dy, false, 0.0, &mut dcols);
            let mut dx = vec![0.0; in_len];
            let mut doff = vec![0.0; off_len];
            for t in 0..g.taps() {
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        let o = oy * g.wo + ox;
                        let (py, px) = g.position(off, t, oy, ox);
                        let cs = corners(h, wd, py, px);
                        let (mut gyp, mut gxp) = (0.0, 0.0);
                        for c in 0..cin {
                            let gc = dcols[(c * g.taps() + t) * n + o];
                            if gc == 0.0 {
                                continue;
                            }
                            let base = c * h * wd;
                            for &(idx, wt, dwy, dwx) in &cs {
                                if let Some(idx) = idx {
                                    dx[base + idx] += gc * wt;
                                    gyp += gc * dwy * img[base + idx];
                                    gxp += gc * dwx * img[base + idx];
                                }
                            }
                        }
                        doff[2 * t * n + o] = gyp;
                        doff[(2 * t + 1) * n + o] = gxp;
                    }
                }
            }
            let dw = needs[2].then(|| {
                let cols = sample_cols(img, off, &g);
                let mut dw = vec![0.0; cout * rows];
                gemm(cout, n, rows, 1.0, dy, false, &cols, true, 0.0, &mut dw);
                dw
            });
            let db = (needs.len() > 3 && needs[3])
                .then(|| dy.chunks(n).map(|c| c.iter().sum::<f64>()).collect::<Vec<_>>());
            (dx, doff, dw, db)
        });
        let mut dx = Vec::with_capacity(bn * in_len);
        let mut doff = Vec::with_capacity(bn * off_len);
        let mut dw = vec![0.0; cout * rows];
        let mut db = vec![0.0; cout];
        for (a, o, w_, b_) in per {
            dx.extend(a);
            doff.extend(o);
            if let Some(w_) = w_ {
                dw.iter_mut().zip(&w_).for_each(|(s, v)| *s += v);
            }
            if let Some(b_) = b_ {
                db.iter_mut().zip(&b_).for_each(|(s, v)| *s += v);
            }
        }
        let mut grads = vec![needs[0].then_some(dx), needs[1].then_some(doff), needs[2].then_some(dw)];
        if needs.len() > 3 {
            grads.push(needs[3].then_some(db));
        }
        grads
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::conv2d;

    fn t(shape: &[usize], f: impl Fn(usize) -> f64) -> Var {
        let n = shape.iter().product();
        Var::parameter(Tensor::new(shape, (0..n).map(f).collect()).unwrap())
    }

    #[test]
    fn zero_offsets_match_convolution() {
        let x = t(&[2, 2, 6, 5], |i| ((i * 29) % 13) as f64 / 13.0);
        let w = t(&[3, 2, 3, 3], |i| ((i * 7) % 5) as f64 - 2.0);
        let b = t(&[3], |i| i as f64 * 0.1);
        let off = Var::constant(Tensor::zeros(&[2, 18, 6, 5]));
        let d = deform_conv2d(&x, &off, &w, Some(&b), 1).unwrap();
        let c = conv2d(&x, &w, Some(&b), 1, 1).unwrap();
        assert!(d.value().max_abs_diff(c.value()) < 1e-12);
    }

    #[test]
    fn unit_offsets_shift_the_input() {
        // offset (+1, 0) everywhere samples the row below
        let x = t(&[1, 1, 6, 6], |i| (i as f64 * 0.37).sin());
        let w = t(&[1, 1, 3, 3], |i| i as f64 - 4.0);
        let mut off = vec![0.0; 18 * 36];
        for tap in 0..9 {
            off[2 * tap * 36..(2 * tap + 1) * 36].iter_mut().for_each(|v| *v = 1.0);
        }
        let off = Var::constant(Tensor::new(&[1, 18, 6, 6], off).unwrap());
        let d = deform_conv2d(&x, &off, &w, None, 1).unwrap();
        let shifted = t(&[1, 1, 6, 6], |i| if i / 6 < 5 { (((i + 6) as f64) * 0.37).sin() } else { 0.0 });
        let c = conv2d(&shifted, &w, None, 1, 1).unwrap();
        // the top row differs: the shifted copy sees padding where the
        // deformed kernel still reads row 0
        for i in 6..36 {
            assert!((d.data()[i] - c.data()[i]).abs() < 1e-12, "at {i}");
        }
    }
}
