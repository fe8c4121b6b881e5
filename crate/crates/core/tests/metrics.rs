mod common;

use common::*;
use nowcast::data::Unit;
use nowcast::metrics::{binarize, confusion, exact_sum, per_sample_sse, scores, UnitMeta};
use nowcast::Tensor4;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

#[test]
fn rain_threshold_boundary_is_inclusive() {
    // Hourly frames and scale 100: normalised 0.5 is exactly 0.5 mm/h.
    let meta = UnitMeta::new(Unit::RawHundredthsMm, 100.0, 60);
    let x = Tensor4::<f64>::from_vec([1, 1, 1, 3], vec![0.5, 0.5 - 1e-12, 0.7]).unwrap();
    assert_eq!(binarize(&x, 0.5, &meta).data(), &[1.0, 0.0, 1.0]);
    // Five-minute frames: 0.5 mm/h is 4.1666.. hundredths per frame.
    let five = UnitMeta::new(Unit::RawHundredthsMm, 1.0, 5);
    let y = Tensor4::<f64>::from_vec([1, 1, 1, 2], vec![4.2, 4.1]).unwrap();
    assert_eq!(binarize(&y, 0.5, &five).data(), &[1.0, 0.0]);
    let mask = UnitMeta::new(Unit::Binary, 1.0, 15);
    let z = Tensor4::<f64>::from_vec([1, 1, 1, 2], vec![0.5, 0.49]).unwrap();
    assert_eq!(binarize(&z, 0.5, &mask).data(), &[1.0, 0.0]);
}

#[test]
fn empty_classes_flag_zero_division() {
    let zeros = Tensor4::<f32>::zeros([1, 1, 4, 4]);
    let c = confusion(&zeros, &zeros).unwrap();
    assert_eq!((c.tn, c.tp, c.fp, c.fn_), (16, 0, 0, 0));
    let s = scores(&c);
    assert_eq!((s.precision, s.recall, s.f1, s.accuracy), (0.0, 0.0, 0.0, 1.0));
    assert!(s.zero_division.precision && s.zero_division.recall && s.zero_division.f1);
    assert!(!s.zero_division.accuracy);
    let half = Tensor4::<f32>::full([1, 1, 4, 4], 0.5);
    assert!(confusion(&half, &zeros).is_err());
}

#[test]
fn exact_sum_is_correctly_rounded() {
    assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
    assert_eq!(exact_sum(vec![0.1; 10]), 1.0);
    assert_eq!(exact_sum(std::iter::empty()), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn confusion_and_scores_match_loops(seed in any::<u64>(), n in 1..200usize) {
        let mut r = rng(seed);
        let p: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
        let t: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
        let pt = Tensor4::<f32>::from_vec([1, 1, 1, n], p.iter().map(|&v| v as f32).collect()).unwrap();
        let tt = Tensor4::<f32>::from_vec([1, 1, 1, n], t.iter().map(|&v| v as f32).collect()).unwrap();
        let c = confusion(&pt, &tt).unwrap();
        let [tp, tn, fp, fn_] = loop_confusion(&p, &t);
        prop_assert_eq!([c.tp, c.tn, c.fp, c.fn_], [tp, tn, fp, fn_]);
        let s = scores(&c);
        let [prec, rec, acc, f1] = loop_scores([tp, tn, fp, fn_]);
        prop_assert_eq!([s.precision, s.recall, s.accuracy, s.f1], [prec, rec, acc, f1]);
    }

    #[test]
    fn dataset_mse_ignores_order_and_duplication(seed in any::<u64>(), n in 1..12usize) {
        let mut r = rng(seed);
        let pred = uniform(&mut r, [n, 2, 5, 5], 0.0, 1.0).cast::<f32>();
        let target = uniform(&mut r, [n, 2, 5, 5], 0.0, 1.0).cast::<f32>();
        let sse = per_sample_sse(&pred, &target).unwrap();
        let total = exact_sum(sse.iter().copied());
        let mut shuffled = sse.clone();
        shuffled.shuffle(&mut r);
        prop_assert_eq!(exact_sum(shuffled.iter().copied()).to_bits(), total.to_bits());
        let doubled = exact_sum(sse.iter().chain(&sse).copied());
        prop_assert_eq!((doubled / (2 * n) as f64).to_bits(), (total / n as f64).to_bits());
    }

    #[test]
    fn recall_never_rises_with_the_threshold(seed in any::<u64>(), a in 0.0..3.0f64, b in 0.0..3.0f64) {
        let mut r = rng(seed);
        let meta = UnitMeta::new(Unit::RawHundredthsMm, 20.0, 5);
        let pred = uniform(&mut r, [1, 1, 8, 8], 0.0, 0.5);
        let target = binarize(&uniform(&mut r, [1, 1, 8, 8], 0.0, 0.5), 0.5, &meta);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let rec = |th| scores(&confusion(&binarize(&pred, th, &meta), &target).unwrap()).recall;
        prop_assert!(rec(hi) <= rec(lo));
    }
}
