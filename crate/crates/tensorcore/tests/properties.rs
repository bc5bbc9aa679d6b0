mod common;

use common::{random, reference_conv2d, reference_linear, rng};
use proptest::prelude::*;
use skelmap_tensor::{bce_sum_values, kl_term_values, Tape, PREDICTION_CLAMP};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn conv2d_agrees_with_loops(
        n in 1usize..3, c in 1usize..4, f in 1usize..4,
        h in 3usize..10, w in 3usize..10,
        kh in 1usize..4, kw in 1usize..4,
        stride in 1usize..3, pad in 0usize..2, seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let x = random(&[n, c, h, w], &mut r);
        let k = random(&[f, c, kh, kw], &mut r);
        let b = random(&[f], &mut r);
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.constant(x.clone()), tape.constant(k.clone()), tape.constant(b.clone()));
        let y = tape.conv2d(xv, kv, bv, stride, pad).unwrap();
        let want = reference_conv2d(&x, &k, &b, stride, pad);
        prop_assert_eq!(tape.value(y).shape(), want.shape());
        prop_assert!(tape.value(y).max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn linear_agrees_with_loops(n in 1usize..8, din in 1usize..12, dout in 1usize..12, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random(&[n, din], &mut r);
        let w = random(&[dout, din], &mut r);
        let b = random(&[dout], &mut r);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let y = tape.linear(xv, wv, Some(bv)).unwrap();
        prop_assert!(tape.value(y).max_abs_diff(&reference_linear(&x, &w, &b)) < 1e-12);
    }

    #[test]
    fn kl_term_is_never_positive(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..32)
    ) {
        let (mu, lv): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!(kl_term_values(&mu, &lv) <= 0.0);
    }

    #[test]
    fn bce_is_never_positive_for_binary_targets(
        items in prop::collection::vec((any::<bool>(), 0.0f64..=1.0), 1..64)
    ) {
        let target: Vec<f64> = items.iter().map(|(t, _)| f64::from(u8::from(*t))).collect();
        let pred: Vec<f64> = items.iter().map(|(_, p)| *p).collect();
        let v = bce_sum_values(&target, &pred);
        prop_assert!(v <= 0.0);
        prop_assert!(v.is_finite());
        // every term is bounded by the clamp
        prop_assert!(v >= target.len() as f64 * PREDICTION_CLAMP.ln());
    }
}
