use uta_core::par;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Source taps `(i0, i1, w1)` per output index, half-pixel aligned.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of `[B, C, H, W]` to `[B, C, out_h, out_w]` with
/// half-pixel centres and edge clamping.
pub fn resize_bilinear(x: &Var, out_h: usize, out_w: usize) -> Result<Var> {
    if x.shape().len() != 4 || out_h == 0 || out_w == 0 {
        return Err(Error::Config(format!(
            "resize_bilinear: bad input {:?} or target {out_h}x{out_w}",
            x.shape()
        )));
    }
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let planes = x.shape()[0] * x.shape()[1];
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let src = x.value().clone();
    let y = par::map_range(planes, |p| {
        let v = &src.data()[p * h * w..(p + 1) * h * w];
        let mut out = Vec::with_capacity(out_h * out_w);
        for &(y0, y1, wy) in &ty {
            for &(x0, x1, wx) in &tx {
                let top = v[y0 * w + x0] * (1.0 - wx) + v[y0 * w + x1] * wx;
                let bot = v[y1 * w + x0] * (1.0 - wx) + v[y1 * w + x1] * wx;
                out.push(top * (1.0 - wy) + bot * wy);
            }
        }
        out
    })
    .concat();
    let mut shape = x.shape().to_vec();
    shape[2] = out_h;
    shape[3] = out_w;
    Ok(Var::from_op(Tensor::from_parts(shape, y), vec![x.clone()], move |g, _| {
        let parts = par::map_range(planes, |p| {
            let gp = &g[p * out_h * out_w..(p + 1) * out_h * out_w];
            let mut dx = vec![0.0; h * w];
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let gv = gp[oy * out_w + ox];
                    dx[y0 * w + x0] += gv * (1.0 - wy) * (1.0 - wx);
                    dx[y0 * w + x1] += gv * (1.0 - wy) * wx;
                    dx[y1 * w + x0] += gv * wy * (1.0 - wx);
                    dx[y1 * w + x1] += gv * wy * wx;
                }
            }
            dx
        });
        vec![Some(parts.concat())]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let x = Var::constant(Tensor::new(&[1, 1, 3, 4], (0..12).map(|i| i as f64).collect()).unwrap());
        let y = resize_bilinear(&x, 3, 4).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn upsampling_preserves_constants_and_ramps() {
        let x = Var::constant(Tensor::filled(&[2, 1, 4, 4], 0.3));
        let y = resize_bilinear(&x, 8, 8).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
        // interior of a horizontal ramp stays linear
        let r = Var::constant(Tensor::new(&[1, 1, 1, 4], vec![0.0, 1.0, 2.0, 3.0]).unwrap());
        let u = resize_bilinear(&r, 1, 8).unwrap();
        assert!((u.data()[3] - 1.25).abs() < 1e-12);
    }
}
