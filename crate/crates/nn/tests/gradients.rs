//! Finite-difference checks of every differentiable operation with
//! learnable inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uta_nn::gradcheck::{check_input, Probe};
use uta_nn::ops::{
    conv2d, conv_transpose2d, deform_conv2d, instance_norm, laplacian, layer_norm, linear, mul, resize_bilinear,
    space_to_depth, sum, window_attention_block, WindowAttentionParams,
};
use uta_nn::{Result, Tensor, Var};

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// `Σ r ⊙ f(x)` for fixed random weights `r`, which keeps every output
/// element in play.
fn weighted(f: impl Fn(&Var) -> Result<Var>, out_shape: &[usize], seed: u64) -> impl Fn(&Var) -> Result<Var> {
    let r = Var::constant(random(&mut ChaCha8Rng::seed_from_u64(seed), out_shape, 1.0));
    move |x| Ok(sum(&mul(&f(x)?, &r)?))
}

fn assert_close(what: &str, probes: &[Probe]) {
    for p in probes {
        assert!(
            p.relative_error() <= TOL,
            "{what}: index {} analytic {} numeric {}",
            p.index,
            p.analytic,
            p.numeric
        );
    }
}

fn all_indices(n: usize, rng: &mut ChaCha8Rng, count: usize) -> Vec<usize> {
    (0..count).map(|_| rng.gen_range(0..n)).collect()
}

#[test]
fn convolutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[2, 3, 7, 6], 1.0);
    let w = Var::constant(random(&mut rng, &[4, 3, 3, 3], 0.5));
    let b = Var::constant(random(&mut rng, &[4], 0.5));
    let idx = all_indices(x.len(), &mut rng, 30);
    for stride in [1, 2] {
        let out = conv2d(&Var::constant(x.clone()), &w, Some(&b), stride, 1).unwrap();
        let f = weighted(|v| conv2d(v, &w, Some(&b), stride, 1), out.shape(), 2);
        assert_close("conv2d input", &check_input(&x, &idx, STEP, f).unwrap());
    }
    let wt = w.value().clone();
    let xc = Var::constant(x.clone());
    let out = conv2d(&xc, &w, None, 1, 1).unwrap();
    let f = weighted(|v| conv2d(&xc, v, None, 1, 1), out.shape(), 3);
    assert_close("conv2d weight", &check_input(&wt, &all_indices(wt.len(), &mut rng, 30), STEP, f).unwrap());

    let wt = Var::constant(random(&mut rng, &[3, 2, 4, 4], 0.5));
    let out = conv_transpose2d(&Var::constant(x.clone()), &wt, None, 2, 1, 0).unwrap();
    let f = weighted(|v| conv_transpose2d(v, &wt, None, 2, 1, 0), out.shape(), 4);
    assert_close("conv_transpose2d", &check_input(&x, &idx, STEP, f).unwrap());
}

#[test]
fn deformable_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[1, 2, 6, 6], 1.0);
    let w = Var::constant(random(&mut rng, &[3, 2, 3, 3], 0.5));
    // offsets away from integers so bilinear weights are smooth
    let off = Tensor::new(&[1, 18, 6, 6], (0..18 * 36).map(|_| rng.gen_range(-0.8..0.8) + 0.13).collect()).unwrap();
    let xc = Var::constant(x.clone());
    let oc = Var::constant(off.clone());
    let shape = deform_conv2d(&xc, &oc, &w, None, 1).unwrap().shape().to_vec();
    let f = weighted(|v| deform_conv2d(v, &oc, &w, None, 1), &shape, 6);
    assert_close("deform input", &check_input(&x, &all_indices(x.len(), &mut rng, 30), STEP, f).unwrap());
    let f = weighted(|v| deform_conv2d(&xc, v, &w, None, 1), &shape, 7);
    assert_close("deform offsets", &check_input(&off, &all_indices(off.len(), &mut rng, 30), STEP, f).unwrap());
}

#[test]
fn normalizations_and_resampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&mut rng, &[2, 3, 6, 5], 1.0);
    let idx = all_indices(x.len(), &mut rng, 30);
    let f = weighted(instance_norm, x.shape(), 9);
    assert_close("instance_norm", &check_input(&x, &idx, STEP, f).unwrap());
    let f = weighted(laplacian, x.shape(), 10);
    assert_close("laplacian", &check_input(&x, &idx, STEP, f).unwrap());
    let f = weighted(|v| resize_bilinear(v, 11, 7), &[2, 3, 11, 7], 11);
    assert_close("resize_bilinear", &check_input(&x, &idx, STEP, f).unwrap());

    let tokens = random(&mut rng, &[1, 2, 4, 4, 6], 1.0);
    let idx = all_indices(tokens.len(), &mut rng, 30);
    let gamma = Var::constant(random(&mut rng, &[6], 1.0));
    let beta = Var::constant(random(&mut rng, &[6], 1.0));
    let f = weighted(|v| layer_norm(v, &gamma, &beta), tokens.shape(), 12);
    assert_close("layer_norm", &check_input(&tokens, &idx, STEP, f).unwrap());
    let w = Var::constant(random(&mut rng, &[6, 5], 1.0));
    let f = weighted(|v| linear(v, &w, None), &[1, 2, 4, 4, 5], 13);
    assert_close("linear", &check_input(&tokens, &idx, STEP, f).unwrap());
    let f = weighted(space_to_depth, &[1, 2, 2, 2, 24], 14);
    assert_close("space_to_depth", &check_input(&tokens, &idx, STEP, f).unwrap());
}

fn block_params(rng: &mut ChaCha8Rng, c: usize) -> WindowAttentionParams {
    let mut v = |shape: &[usize], s: f64| Var::constant(random(rng, shape, s));
    WindowAttentionParams {
        norm_gamma: v(&[c], 1.0),
        norm_beta: v(&[c], 0.5),
        qkv_weight: v(&[c, 3 * c], 0.8),
        qkv_bias: v(&[3 * c], 0.2),
        proj_weight: v(&[c, c], 0.8),
        proj_bias: v(&[c], 0.2),
    }
}

#[test]
fn window_attention_inputs_and_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let dims = [1, 3, 5, 7, 4];
    let x = random(&mut rng, &dims, 1.0);
    let p = block_params(&mut rng, 4);
    for shifted in [false, true] {
        let f = weighted(|v| window_attention_block(v, &p, 2, [2, 3, 3], shifted), &dims, 16);
        assert_close("attention input", &check_input(&x, &all_indices(x.len(), &mut rng, 40), STEP, f).unwrap());
    }
    let xc = Var::constant(x);
    let qkv = p.qkv_weight.value().clone();
    let f = weighted(
        |v| {
            let q = WindowAttentionParams {
                qkv_weight: v.clone(),
                ..p.clone()
            };
            window_attention_block(&xc, &q, 2, [2, 3, 3], true)
        },
        &dims,
        17,
    );
    assert_close("attention qkv weight", &check_input(&qkv, &all_indices(qkv.len(), &mut rng, 30), STEP, f).unwrap());
}
