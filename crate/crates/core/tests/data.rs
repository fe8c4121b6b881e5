mod common;

use std::collections::BTreeSet;

use nowcast::data::{
    crop_center, denormalize, make_windows, normalization_scale, normalize, prepare_splits, read_nwds, select_rainy,
    split_series, synth_generate, windows_csv, write_nwds, FrameSeries, GateMode, PrepareConfig, SynthConfig, Unit,
    WindowSpec,
};
use nowcast::{Error, Tensor4};
use proptest::prelude::*;
use rand::Rng;

fn frames_from(vals: &[Vec<f32>], side: usize) -> FrameSeries {
    let frames = vals
        .iter()
        .map(|v| Tensor4::from_vec([1, 1, side, side], v.clone()).unwrap())
        .collect();
    FrameSeries::new(frames, 5, Unit::RawHundredthsMm).unwrap()
}

/// Counting oracle for the selection rule: wet pixels over total, inclusive.
fn select_oracle(vals: &[Vec<f32>], fraction: f64) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for (i, v) in vals.iter().enumerate() {
        let mut wet = 0usize;
        for &p in v {
            if p > 0.0 {
                wet += 1;
            }
        }
        if wet as f64 >= fraction * v.len() as f64 {
            out.insert(i);
        }
    }
    out
}

#[test]
fn selection_boundary_is_inclusive() {
    // 8 of 16 pixels wet: exactly half.
    let half: Vec<f32> = (0..16).map(|i| if i % 2 == 0 { 3.0 } else { 0.0 }).collect();
    let s = frames_from(&[half], 4);
    assert_eq!(select_rainy(&s, 0.5).unwrap().len(), 1);
    assert!(select_rainy(&s, 0.5 + 1e-9).unwrap().is_empty());
    assert!(select_rainy(&s, 1.5).is_err());
}

#[test]
fn crop_center_takes_the_floor_offset() {
    let f = Tensor4::from_fn([1, 1, 7, 9], |_, _, y, x| (10 * y + x) as f32);
    let c = crop_center(&f, 4).unwrap();
    // offsets floor(3/2)=1 and floor(5/2)=2
    assert_eq!(c.at(0, 0, 0, 0), 12.0);
    assert_eq!(c.at(0, 0, 3, 3), 45.0);
    assert!(crop_center(&f, 8).is_err());
}

#[test]
fn windows_csv_lists_every_window() {
    let all: BTreeSet<usize> = (0..10).collect();
    let w = make_windows(10, &WindowSpec::new(3, vec![2]), &all).unwrap();
    let csv = windows_csv(&w);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "anchor,input_first,input_last,targets");
    assert_eq!(lines[1], "2,0,2,4");
    assert_eq!(lines.len(), 1 + 6);
    let cloud = make_windows(12, &WindowSpec::cloud(), &(0..12).collect()).unwrap();
    assert_eq!(windows_csv(&cloud).lines().nth(1).unwrap(), "3,0,3,4;5;6;7;8;9");
}

#[test]
fn empty_selection_is_an_explicit_error() {
    let r = make_windows(20, &WindowSpec::new(6, vec![6]), &BTreeSet::new());
    assert!(matches!(r, Err(Error::EmptyDataset(_))));
    assert!(WindowSpec::precipitation(6, 32, 5).is_err());
    assert_eq!(WindowSpec::precipitation(6, 30, 5).unwrap().target_offsets, vec![6]);
}

#[test]
fn splits_are_chronological_and_share_the_train_scale() {
    let cfg = SynthConfig {
        n_frames: 120,
        height: 32,
        width: 32,
        n_blobs: 40,
        ..SynthConfig::default()
    };
    let s = synth_generate(&cfg).unwrap();
    let [a, b, c] = split_series(&s, 0.7, 0.15).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (84, 18, 18));
    assert_eq!(b.frames()[0], s.frames()[84]);
    assert_eq!(c.frames()[0], s.frames()[102]);
    let splits = prepare_splits(&s, &PrepareConfig::new(WindowSpec::new(2, vec![1])).with_fraction(0.0)).unwrap();
    assert_eq!(splits.scale, a.max_value());
    assert_eq!(normalization_scale(&a).unwrap(), a.max_value());
    let batch = splits.train.all::<f32>().unwrap();
    assert!(batch.inputs.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn normalisation_round_trips() {
    let t = common::uniform(&mut common::rng(0), [1, 1, 8, 8], 0.0, 500.0).cast::<f32>();
    let back = denormalize(&normalize(&t, 437.0), 437.0);
    for (a, b) in back.data().iter().zip(t.data()) {
        assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0));
    }
    let zero = frames_from(&[vec![0.0; 4]], 2);
    assert!(matches!(normalization_scale(&zero), Err(Error::Data(_))));
    let binary = FrameSeries::new(vec![Tensor4::full([1, 1, 2, 2], 1.0)], 15, Unit::Binary).unwrap();
    assert_eq!(normalization_scale(&binary).unwrap(), 1.0);
}

#[test]
fn nwds_round_trip_and_corruption() {
    let s = synth_generate(&SynthConfig {
        n_frames: 5,
        height: 32,
        width: 40,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut bytes = Vec::new();
    write_nwds(&mut bytes, &s).unwrap();
    assert_eq!(&bytes[..4], b"NWDS");
    let back = read_nwds(&mut bytes.as_slice()).unwrap();
    assert_eq!(back, s);
    assert!(read_nwds(&mut &bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[8] = 9;
    assert!(read_nwds(&mut bad.as_slice()).is_err());
}

#[test]
fn synth_is_seeded() {
    let cfg = SynthConfig {
        n_frames: 6,
        height: 32,
        width: 32,
        ..SynthConfig::default()
    };
    assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
    let other = SynthConfig { seed: 1, ..cfg.clone() };
    assert_ne!(synth_generate(&cfg).unwrap(), synth_generate(&other).unwrap());
    let small = SynthConfig { height: 31, ..cfg };
    assert!(synth_generate(&small).is_err());
}

#[test]
fn integer_wind_shifts_frames_on_the_torus() {
    let cfg = SynthConfig {
        n_frames: 4,
        height: 32,
        width: 36,
        wind: (2.0, -1.0),
        ..SynthConfig::default()
    };
    let s = synth_generate(&cfg).unwrap();
    let (h, w) = (32, 36);
    for t in 0..3 {
        let (a, b) = (&s.frames()[t], &s.frames()[t + 1]);
        for y in 0..h {
            for x in 0..w {
                let v = a.at(0, 0, y, x);
                let u = b.at(0, 0, (y + h - 1) % h, (x + 2) % w);
                assert!((u - v).abs() <= 1e-3, "t {t} ({y},{x}): {v} vs {u}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn selection_matches_counting_oracle(seed in any::<u64>(), n in 1..12usize, fraction in 0.0..=1.0f64) {
        let mut r = common::rng(seed);
        let vals: Vec<Vec<f32>> = (0..n)
            .map(|_| {
                let p: f64 = r.gen();
                (0..16).map(|_| if r.gen::<f64>() < p { r.gen_range(0.1..10.0) } else { 0.0 }).collect()
            })
            .collect();
        let s = frames_from(&vals, 4);
        prop_assert_eq!(select_rainy(&s, fraction).unwrap(), select_oracle(&vals, fraction));
    }

    #[test]
    fn selection_shrinks_as_fraction_grows(seed in any::<u64>(), f1 in 0.0..=1.0f64, f2 in 0.0..=1.0f64) {
        let mut r = common::rng(seed);
        let vals: Vec<Vec<f32>> = (0..8).map(|_| (0..9).map(|_| if r.gen() { 1.0 } else { 0.0 }).collect()).collect();
        let s = frames_from(&vals, 3);
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        prop_assert!(select_rainy(&s, hi).unwrap().is_subset(&select_rainy(&s, lo).unwrap()));
    }

    #[test]
    fn windows_stay_in_bounds(
        n in 1..80usize,
        input in 1..8usize,
        offsets in proptest::collection::btree_set(1..10usize, 1..4),
        stride in 1..4usize,
        keep in proptest::collection::vec(any::<bool>(), 80),
        both in any::<bool>(),
    ) {
        let selected: BTreeSet<usize> = (0..n).filter(|&i| keep[i]).collect();
        let gate = if both { GateMode::Both } else { GateMode::Targets };
        let spec = WindowSpec::new(input, offsets.into_iter().collect()).with_stride(stride).with_gate(gate);
        match make_windows(n, &spec, &selected) {
            Ok(ws) => {
                for w in &ws {
                    prop_assert_eq!(w.inputs.len(), input);
                    prop_assert_eq!(w.inputs.end - 1, w.anchor);
                    prop_assert_eq!((w.anchor + 1 - input) % stride, 0);
                    prop_assert!(w.targets.iter().all(|t| *t < n && selected.contains(t)));
                    prop_assert!(w.targets.iter().all(|&t| t > w.anchor));
                    if both {
                        prop_assert!(w.inputs.clone().all(|i| selected.contains(&i)));
                    }
                }
                prop_assert!(ws.windows(2).all(|p| p[0].anchor < p[1].anchor));
            }
            Err(e) => prop_assert!(matches!(e, Error::EmptyDataset(_))),
        }
    }
}
