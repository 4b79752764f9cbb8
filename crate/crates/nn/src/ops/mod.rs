//! Differentiable operations. Image tensors are `[B, C, H, W]`; token
//! volumes for attention are channel-last `[B, T, H, W, C]`.

mod attention;
mod conv;
mod deform;
mod loss;
mod resize;

pub use attention::{
    layer_norm, linear, partition_windows, roll, space_to_depth, window_attention_block,
    window_attention_probs, window_region_ids, merge_windows, AttentionMap, WindowAttentionParams,
    LAYER_NORM_EPS,
};
pub use conv::{conv2d, conv_transpose2d, instance_norm, laplacian, INSTANCE_NORM_EPS};
pub use deform::deform_conv2d;
pub use loss::{l1_loss, masked_l1};
pub use resize::resize_bilinear;

use uta_core::par;

use crate::autograd::Var;
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

fn same_shape(a: &Var, b: &Var) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(a.shape(), b.shape()));
    }
    Ok(())
}

fn zip_map(a: &Var, b: &Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

pub fn add(a: &Var, b: &Var) -> Result<Var> {
    same_shape(a, b)?;
    let out = zip_map(a, b, |x, y| x + y);
    Ok(Var::from_op(out, vec![a.clone(), b.clone()], |g, needs| {
        vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())]
    }))
}

pub fn sub(a: &Var, b: &Var) -> Result<Var> {
    same_shape(a, b)?;
    let out = zip_map(a, b, |x, y| x - y);
    Ok(Var::from_op(out, vec![a.clone(), b.clone()], |g, needs| {
        vec![
            needs[0].then(|| g.to_vec()),
            needs[1].then(|| g.iter().map(|v| -v).collect()),
        ]
    }))
}

pub fn mul(a: &Var, b: &Var) -> Result<Var> {
    same_shape(a, b)?;
    let out = zip_map(a, b, |x, y| x * y);
    let (av, bv) = (a.value().clone(), b.value().clone());
    Ok(Var::from_op(out, vec![a.clone(), b.clone()], move |g, needs| {
        vec![
            needs[0].then(|| g.iter().zip(bv.data()).map(|(g, b)| g * b).collect()),
            needs[1].then(|| g.iter().zip(av.data()).map(|(g, a)| g * a).collect()),
        ]
    }))
}

pub fn scale(a: &Var, c: f64) -> Var {
    let out = a.value().map(|v| v * c);
    Var::from_op(out, vec![a.clone()], move |g, _| vec![Some(g.iter().map(|v| v * c).collect())])
}

pub fn add_scalar(a: &Var, c: f64) -> Var {
    let out = a.value().map(|v| v + c);
    Var::from_op(out, vec![a.clone()], |g, _| vec![Some(g.to_vec())])
}

pub fn sigmoid(a: &Var) -> Var {
    let out = a.value().map(|v| 1.0 / (1.0 + (-v).exp()));
    let y = out.clone();
    Var::from_op(out, vec![a.clone()], move |g, _| {
        vec![Some(g.iter().zip(y.data()).map(|(g, y)| g * y * (1.0 - y)).collect())]
    })
}

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(a: &Var) -> Var {
    let out = a.value().map(|v| if v >= 0.0 { v } else { LEAKY_SLOPE * v });
    let x = a.value().clone();
    Var::from_op(out, vec![a.clone()], move |g, _| {
        vec![Some(
            g.iter()
                .zip(x.data())
                .map(|(g, &x)| if x >= 0.0 { *g } else { LEAKY_SLOPE * g })
                .collect(),
        )]
    })
}

pub fn sum(a: &Var) -> Var {
    let s = ordered_sum(a.data());
    let n = a.value().len();
    Var::from_op(Tensor::scalar(s), vec![a.clone()], move |g, _| vec![Some(vec![g[0]; n])])
}

pub fn mean(a: &Var) -> Var {
    let n = a.value().len().max(1);
    scale(&sum(a), 1.0 / n as f64)
}

/// Sum in fixed partitions so the result does not depend on threading.
pub fn ordered_sum(v: &[f64]) -> f64 {
    let ranges = par::split_ranges(v.len(), par::REDUCTION_PARTS);
    par::map_slice(&ranges, |r| v[r.clone()].iter().sum::<f64>())
        .into_iter()
        .sum()
}

pub fn reshape(a: &Var, shape: &[usize]) -> Result<Var> {
    let out = a.value().reshape(shape)?;
    Ok(Var::from_op(out, vec![a.clone()], |g, _| vec![Some(g.to_vec())]))
}

/// Splits a shape into `(outer, axis, inner)` extents around `axis`.
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat(parts: &[Var], axis: usize) -> Result<Var> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Config("concat of nothing".into()))?;
    let rank = first.shape().len();
    if axis >= rank {
        return Err(Error::Config(format!("axis {axis} out of range for rank {rank}")));
    }
    for p in parts {
        let ok = p.shape().len() == rank
            && p.shape().iter().enumerate().all(|(i, &d)| i == axis || d == first.shape()[i]);
        if !ok {
            return Err(shape_err(first.shape(), p.shape()));
        }
    }
    let (outer, _, inner) = around(first.shape(), axis);
    let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total: usize = extents.iter().sum();
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, &e) in parts.iter().zip(&extents) {
            data.extend_from_slice(&p.data()[o * e * inner..(o + 1) * e * inner]);
        }
    }
    Ok(Var::from_op(
        Tensor::from_parts(shape, data),
        parts.to_vec(),
        move |g, needs| {
            let mut offset = 0;
            extents
                .iter()
                .zip(needs)
                .map(|(&e, &need)| {
                    let out = need.then(|| {
                        let mut v = Vec::with_capacity(outer * e * inner);
                        for o in 0..outer {
                            let base = o * total * inner + offset * inner;
                            v.extend_from_slice(&g[base..base + e * inner]);
                        }
                        v
                    });
                    offset += e;
                    out
                })
                .collect()
        },
    ))
}

/// Stacks equally shaped tensors along a new axis `axis`.
pub fn stack(parts: &[Var], axis: usize) -> Result<Var> {
    let expanded = parts
        .iter()
        .map(|p| {
            let mut s = p.shape().to_vec();
            if axis > s.len() {
                return Err(Error::Config(format!("stack axis {axis} beyond rank {}", s.len())));
            }
            s.insert(axis, 1);
            reshape(p, &s)
        })
        .collect::<Result<Vec<_>>>()?;
    concat(&expanded, axis)
}

/// Reorders axes: output axis `i` is input axis `axes[i]`.
pub fn permute(a: &Var, axes: &[usize]) -> Result<Var> {
    let shape = a.shape().to_vec();
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&x| x >= rank || std::mem::replace(&mut seen[x], true)) {
        return Err(Error::Config(format!("{axes:?} is not a permutation of {rank} axes")));
    }
    let out_shape: Vec<usize> = axes.iter().map(|&x| shape[x]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&x| in_strides[x]).collect();
    let index_map = permutation_indices(&out_shape, &strides);
    let src = a.data();
    let data: Vec<f64> = index_map.iter().map(|&i| src[i]).collect();
    Ok(Var::from_op(
        Tensor::from_parts(out_shape, data),
        vec![a.clone()],
        move |g, _| {
            let mut out = vec![0.0; g.len()];
            for (o, &i) in index_map.iter().enumerate() {
                out[i] = g[o];
            }
            vec![Some(out)]
        },
    ))
}

fn permutation_indices(out_shape: &[usize], strides: &[usize]) -> Vec<usize> {
    let n: usize = out_shape.iter().product();
    let mut idx = Vec::with_capacity(n);
    let rank = out_shape.len();
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..n {
        idx.push(offset);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            offset += strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * out_shape[ax];
            counter[ax] = 0;
        }
    }
    idx
}

/// Mean over `axis`, which is kept with extent 1.
pub fn mean_axis(a: &Var, axis: usize) -> Result<Var> {
    if axis >= a.shape().len() {
        return Err(Error::Config(format!("axis {axis} out of range")));
    }
    let (outer, n, inner) = around(a.shape(), axis);
    let mut shape = a.shape().to_vec();
    shape[axis] = 1;
    let src = a.data();
    let mut data = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..n {
            let row = &src[(o * n + k) * inner..(o * n + k + 1) * inner];
            for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                *d += s;
            }
        }
    }
    let inv = 1.0 / n as f64;
    data.iter_mut().for_each(|v| *v *= inv);
    Ok(Var::from_op(
        Tensor::from_parts(shape, data),
        vec![a.clone()],
        move |g, _| {
            let mut out = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for k in 0..n {
                    for i in 0..inner {
                        out[(o * n + k) * inner + i] = g[o * inner + i] * inv;
                    }
                }
            }
            vec![Some(out)]
        },
    ))
}

/// Slice `start..start+len` along `axis`.
pub fn narrow(a: &Var, axis: usize, start: usize, len: usize) -> Result<Var> {
    if axis >= a.shape().len() || start + len > a.shape()[axis] {
        return Err(Error::Config(format!(
            "narrow {start}+{len} on axis {axis} of {:?}",
            a.shape()
        )));
    }
    let (outer, n, inner) = around(a.shape(), axis);
    let mut shape = a.shape().to_vec();
    shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        data.extend_from_slice(&a.data()[base..base + len * inner]);
    }
    Ok(Var::from_op(
        Tensor::from_parts(shape, data),
        vec![a.clone()],
        move |g, _| {
            let mut out = vec![0.0; outer * n * inner];
            for o in 0..outer {
                let base = (o * n + start) * inner;
                out[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(out)]
        },
    ))
}
