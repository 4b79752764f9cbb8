use crate::autograd::Var;
use crate::error::{shape_err, Error, Result};
use crate::ops::ordered_sum;
use crate::tensor::Tensor;

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute difference.
pub fn l1_loss(pred: &Var, target: &Var) -> Result<Var> {
    if pred.shape() != target.shape() {
        return Err(shape_err(pred.shape(), target.shape()));
    }
    let n = pred.value().len().max(1) as f64;
    let diff: Vec<f64> = pred.data().iter().zip(target.data()).map(|(a, b)| a - b).collect();
    let abs: Vec<f64> = diff.iter().map(|d| d.abs()).collect();
    let value = ordered_sum(&abs) / n;
    Ok(Var::from_op(
        Tensor::scalar(value),
        vec![pred.clone(), target.clone()],
        move |g, needs| {
            let gp: Vec<f64> = diff.iter().map(|&d| g[0] * sign(d) / n).collect();
            let gt = needs[1].then(|| gp.iter().map(|v| -v).collect());
            vec![needs[0].then_some(gp), gt]
        },
    ))
}

/// `Σ m·|a − b| / (C·Σ m)` for `[B, C, H, W]` features and a `[B, 1, H, W]`
/// mask broadcast over channels; zero when the mask is empty.
pub fn masked_l1(a: &Var, b: &Var, mask: &Tensor) -> Result<Var> {
    if a.shape() != b.shape() {
        return Err(shape_err(a.shape(), b.shape()));
    }
    if a.shape().len() != 4 {
        return Err(Error::Config(format!("masked_l1 expects [B,C,H,W], got {:?}", a.shape())));
    }
    let (bn, c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2], a.shape()[3]);
    if mask.shape() != [bn, 1, h, w] {
        return Err(shape_err(&[bn, 1, h, w], mask.shape()));
    }
    let weight = ordered_sum(mask.data());
    if weight <= 0.0 {
        return Ok(Var::constant(Tensor::scalar(0.0)));
    }
    let norm = c as f64 * weight;
    let plane = h * w;
    let m = mask.clone();
    let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let weighted: Vec<f64> = diff
        .iter()
        .enumerate()
        .map(|(i, d)| m.data()[(i / (c * plane)) * plane + i % plane] * d.abs())
        .collect();
    let value = ordered_sum(&weighted) / norm;
    Ok(Var::from_op(
        Tensor::scalar(value),
        vec![a.clone(), b.clone()],
        move |g, needs| {
            let ga: Vec<f64> = diff
                .iter()
                .enumerate()
                .map(|(i, &d)| g[0] * m.data()[(i / (c * plane)) * plane + i % plane] * sign(d) / norm)
                .collect();
            let gb = needs[1].then(|| ga.iter().map(|v| -v).collect());
            vec![needs[0].then_some(ga), gb]
        },
    ))
}
