use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uta_nn::losses::{l_gradient, l_perceptual, l_sis, l_tcc, PerceptualExtractor};
use uta_nn::{Tensor, Var};

fn var(shape: &[usize], data: Vec<f64>) -> Var {
    Var::constant(Tensor::new(shape, data).unwrap())
}

fn image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect()
}

#[test]
fn l1_terms_on_a_two_by_two_case() {
    let pred = var(&[1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]);
    let target = var(&[1, 1, 2, 2], vec![1.0, 1.0, 0.0, 0.0]);
    assert_eq!(l_sis(&pred, &target).unwrap().value().item(), 0.5);
    assert_eq!(l_tcc(&pred, &target).unwrap().value().item(), 0.5);
}

#[test]
fn gradient_loss_matches_direct_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, w) = (9, 11);
    let a = image(&mut rng, h, w);
    let b = image(&mut rng, h, w);
    let reflect = |i: isize, n: usize| -> usize {
        if i < 0 {
            (-i) as usize
        } else if i as usize >= n {
            2 * (n - 1) - i as usize
        } else {
            i as usize
        }
    };
    let lap = |img: &[f64], y: usize, x: usize| {
        let at = |dy: isize, dx: isize| img[reflect(y as isize + dy, h) * w + reflect(x as isize + dx, w)];
        at(-1, 0) + at(1, 0) + at(0, -1) + at(0, 1) - 4.0 * at(0, 0)
    };
    let mut want = 0.0;
    for y in 0..h {
        for x in 0..w {
            want += (lap(&a, y, x) - lap(&b, y, x)).abs();
        }
    }
    want /= (h * w) as f64;
    let got = l_gradient(&var(&[1, 1, h, w], a), &var(&[1, 1, h, w], b)).unwrap().value().item();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn perceptual_loss_grows_with_inverted_area() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 64;
    let target = image(&mut rng, n, n);
    let mask = Tensor::new(&[1, 1, n, n], vec![1.0; n * n]).unwrap();
    let extractor = PerceptualExtractor::default();
    let mut last = 0.0;
    for rows in [0, 8, 16, 32, 64] {
        let pred: Vec<f64> = target
            .iter()
            .enumerate()
            .map(|(i, &v)| if i / n < rows { 1.0 - v } else { v })
            .collect();
        let l = l_perceptual(&var(&[1, 1, n, n], pred), &var(&[1, 1, n, n], target.clone()), &mask, &extractor)
            .unwrap()
            .value()
            .item();
        if rows == 0 {
            assert_eq!(l, 0.0);
        } else {
            assert!(l > last, "{rows} rows: {l} after {last}");
        }
        last = l;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn l1_and_gradient_terms_are_symmetric_and_nonnegative(seed: u64, h in 3usize..10, w in 3usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = var(&[1, 1, h, w], image(&mut rng, h, w));
        let b = var(&[1, 1, h, w], image(&mut rng, h, w));
        for f in [l_sis, l_tcc, l_gradient] {
            let ab = f(&a, &b).unwrap().value().item();
            let ba = f(&b, &a).unwrap().value().item();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(f(&a, &a).unwrap().value().item(), 0.0);
        }
    }

    #[test]
    fn empty_mask_gives_zero_perceptual_loss(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = var(&[1, 1, 16, 16], image(&mut rng, 16, 16));
        let b = var(&[1, 1, 16, 16], image(&mut rng, 16, 16));
        let mask = Tensor::zeros(&[1, 1, 16, 16]);
        let l = l_perceptual(&a, &b, &mask, &PerceptualExtractor::default()).unwrap().value().item();
        prop_assert_eq!(l, 0.0);
    }
}
