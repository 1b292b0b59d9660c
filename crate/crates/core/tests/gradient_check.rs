mod common;

use common::*;
use probe_inject::feature_store::{Label, CLS_DIM};
use probe_inject::linear_head::{
    bce_loss, forward, masked_logit, ForwardMode, HeadParams, HIDDEN_WIDTH,
};
use probe_inject::rng::SeededRng;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn forward_matches_reference_arithmetic() {
    let mut rng = chacha(101);
    for _ in 0..20 {
        let p = random_params(CLS_DIM, HIDDEN_WIDTH, &mut rng);
        let x: Vec<f64> = (0..CLS_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = forward(&x, &p, ForwardMode::Eval).unwrap();
        let want = oracle_probability(&x, &p, &[1.0; HIDDEN_WIDTH]);
        assert!(((got - want) / want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn bce_matches_direct_summation() {
    let mut rng = chacha(7);
    let preds: Vec<f64> = (0..16).map(|_| rng.gen_range(0.001..0.999)).collect();
    let labels: Vec<f64> = (0..16).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let mut want = 0.0;
    for (p, y) in preds.iter().zip(&labels) {
        want -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    want /= 16.0;
    assert!((bce_loss(&preds, &labels).unwrap() - want).abs() < 1e-12);
}

#[test]
fn every_w1_coordinate_of_a_full_size_head() {
    let mut rng = chacha(2024);
    let inst = gradient_instance(&mut rng, CLS_DIM, HIDDEN_WIDTH, 8, false);
    let coords = check_coords(&inst.params, None, &mut rng);
    assert_eq!(coords.len(), inst.params.num_parameters());
    let err = max_gradient_error(&inst, &coords);
    assert!(err < 1e-5, "max relative error {err:e}");
}

#[test]
fn masked_gradients_match_finite_differences() {
    let mut rng = chacha(77);
    for _ in 0..5 {
        let inst = gradient_instance(&mut rng, 64, HIDDEN_WIDTH, 8, true);
        let coords = check_coords(&inst.params, None, &mut rng);
        let err = max_gradient_error(&inst, &coords);
        assert!(err < 1e-5, "max relative error {err:e}");
    }
}

#[test]
fn l2_normalized_head_gradients() {
    let mut rng = chacha(5);
    let mut inst = gradient_instance(&mut rng, 32, 4, 6, false);
    inst.params.l2_normalize = true;
    let g = probe_inject::linear_head::gradient(&inst.batch, &inst.params, None).unwrap();
    // Gradient w.r.t. W1 is taken on the normalised input.
    let batch_n: Vec<_> = inst
        .batch
        .iter()
        .map(|r| {
            let n = r.features.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut r = r.clone();
            r.features.iter_mut().for_each(|v| *v /= n);
            r
        })
        .collect();
    for i in 0..inst.params.w1.len() {
        let c = Coord::W1(i);
        let numeric = central_difference(&batch_n, &inst.params, &inst.keeps, c, FD_STEP);
        assert!(relative_error(analytic_at(&g, c), numeric) < 1e-5);
    }
}

/// Enumerates all 2^4 masks of a width-4 head: the probability-weighted mean
/// of the masked logit equals the eval-mode logit.
#[test]
fn inverted_dropout_preserves_expected_logit() {
    let mut rng = chacha(9);
    let hidden = 4;
    for _ in 0..10 {
        let p = random_params(16, hidden, &mut rng);
        let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let keep_prob = 1.0 - p.dropout_p;
        let mut expected = 0.0;
        for bits in 0u32..(1 << hidden) {
            let mask: Vec<bool> = (0..hidden).map(|j| bits >> j & 1 == 1).collect();
            let kept = mask.iter().filter(|k| **k).count() as i32;
            let weight = keep_prob.powi(kept) * p.dropout_p.powi(hidden as i32 - kept);
            expected += weight * masked_logit(&x, &p, Some(&mask)).unwrap();
        }
        let eval = masked_logit(&x, &p, None).unwrap();
        assert!((expected - eval).abs() < 1e-12, "{expected} vs {eval}");
    }
}

#[test]
fn eval_mode_is_deterministic_and_train_mode_is_seeded() {
    let mut rng = chacha(3);
    let p = random_params(CLS_DIM, HIDDEN_WIDTH, &mut rng);
    let x: Vec<f64> = (0..CLS_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a = forward(&x, &p, ForwardMode::Eval).unwrap();
    assert_eq!(a, forward(&x, &p, ForwardMode::Eval).unwrap());
    let t1 = forward(&x, &p, ForwardMode::Train(&mut SeededRng::new(5))).unwrap();
    let t2 = forward(&x, &p, ForwardMode::Train(&mut SeededRng::new(5))).unwrap();
    assert_eq!(t1, t2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probability_is_strictly_inside_unit_interval(
        seed in any::<u64>(),
        x in prop::collection::vec(-3.0f64..3.0, 32),
    ) {
        let mut rng = chacha(seed);
        let p = random_params(32, 6, &mut rng);
        let y = forward(&x, &p, ForwardMode::Eval).unwrap();
        prop_assert!(y > 0.0 && y < 1.0);
    }

    #[test]
    fn bce_is_nonnegative_and_monotone_toward_label(
        p in 0.0001f64..0.9999,
        step in 0.0f64..1.0,
        fake in any::<bool>(),
    ) {
        let y = if fake { 1.0 } else { 0.0 };
        let closer = p + (y - p) * step * 0.5;
        let far = bce_loss(&[p], &[y]).unwrap();
        let near = bce_loss(&[closer], &[y]).unwrap();
        prop_assert!(far >= 0.0 && near >= 0.0);
        if closer != p {
            prop_assert!(near < far);
        }
    }

    #[test]
    fn gradient_of_b2_is_mean_residual(seed in any::<u64>()) {
        let mut rng = chacha(seed);
        let inst = gradient_instance(&mut rng, 12, 3, 5, false);
        let g = probe_inject::linear_head::gradient(&inst.batch, &inst.params, None).unwrap();
        let resid: f64 = inst.batch.iter().map(|r| {
            oracle_probability(&r.features, &inst.params, &[1.0; 3])
                - if r.label == Label::Fake { 1.0 } else { 0.0 }
        }).sum::<f64>() / 5.0;
        prop_assert!((g.b2 - resid).abs() < 1e-12);
    }
}

#[test]
fn zero_params_gradient_sanity() {
    let p = HeadParams::zeros(4, 2);
    let batch = random_batch(4, 4, &mut chacha(1));
    let g = probe_inject::linear_head::gradient(&batch, &p, None).unwrap();
    // With W2 = 0 nothing flows back into the first layer.
    assert!(g.w1.iter().chain(&g.b1).all(|v| *v == 0.0));
    assert!(g.w2.iter().all(|v| *v == 0.0));
}
