mod common;

use common::*;
use nowcast::data::Unit;
use nowcast::gradcam::{
    colormap, combine, explain_suite, grad_cam, grad_cam_many, grid_position, write_ppm, GradCamOptions, ScoreMode,
};
use nowcast::metrics::UnitMeta;
use nowcast::model::{Model, ModelConfig, Variant};
use nowcast::{Error, Tensor4};

fn setup() -> (Model<f64>, Tensor4<f64>, UnitMeta) {
    let model = Model::<f64>::build(ModelConfig::tiny(Variant::Sar, 3, 1), 4).unwrap();
    let x = uniform(&mut rng(9), [1, 3, 32, 32], 0.0, 1.0);
    // A large scale so that most of the untrained output counts as rain.
    let meta = UnitMeta::new(Unit::RawHundredthsMm, 1.0e4, 5);
    (model, x, meta)
}

#[test]
fn suite_covers_every_layer_in_figure_order() {
    let (model, x, meta) = setup();
    let maps = explain_suite(&model, &x, &meta, &GradCamOptions::default()).unwrap();
    assert_eq!(maps.len(), 32);
    let names: Vec<&str> = maps.iter().map(|m| m.target.as_str()).collect();
    assert_eq!(
        &names[..5],
        [
            "enc0.block",
            "enc0.block.dsc_path",
            "enc0.block.shortcut",
            "enc0.cbam",
            "enc1.block"
        ]
    );
    assert_eq!(names[20], "dec3.block");
    assert_eq!(names[31], "dec0.block.shortcut");
    let mut last = ("encoder", 0usize);
    for m in &maps {
        let (section, depth, _) = grid_position(&m.target).unwrap();
        if section == last.0 {
            let forward = if section == "encoder" {
                depth >= last.1
            } else {
                depth <= last.1
            };
            assert!(forward, "{} out of order", m.target);
        }
        last = (section, depth);
        assert_eq!(m.values.shape().dims(), [1, 1, 32, 32]);
        assert!(m.values.data().iter().all(|v| (0.0..=1.0).contains(v)));
        if m.raw_max > 0.0 {
            assert_eq!(m.values.data().iter().cloned().fold(0.0, f32::max), 1.0);
        }
    }
    assert!(maps.iter().any(|m| m.raw_max > 0.0));
}

#[test]
fn power_of_two_score_scale_changes_nothing_but_alpha() {
    let (model, x, meta) = setup();
    let targets: Vec<String> = ["enc1.block", "enc2.cbam", "dec1.block.shortcut"]
        .map(String::from)
        .to_vec();
    let base = grad_cam_many(&model, &x, &targets, &meta, &GradCamOptions::default()).unwrap();
    let opts = GradCamOptions {
        score_scale: 4.0,
        ..GradCamOptions::default()
    };
    let scaled = grad_cam_many(&model, &x, &targets, &meta, &opts).unwrap();
    for (a, b) in base.iter().zip(&scaled) {
        assert_eq!(a.values, b.values, "{}", a.target);
        let quad: Vec<f64> = a.alpha.iter().map(|v| 4.0 * v).collect();
        assert_eq!(b.alpha, quad);
    }
}

#[test]
fn masked_mean_only_rescales_the_weights() {
    let (model, x, meta) = setup();
    let sum = grad_cam(&model, &x, "enc1.block", &meta, &GradCamOptions::default()).unwrap();
    let mean_opts = GradCamOptions {
        mode: ScoreMode::MaskedMean,
        ..GradCamOptions::default()
    };
    let mean = grad_cam(&model, &x, "enc1.block", &meta, &mean_opts).unwrap();
    let ratio = sum.alpha[0] / mean.alpha[0];
    assert!(
        ratio > 1.0 && (ratio - ratio.round()).abs() < 1e-6,
        "mask count {ratio}"
    );
    for (a, b) in sum.values.data().iter().zip(mean.values.data()) {
        assert!((a - b).abs() <= 1e-5);
    }
}

#[test]
fn zero_score_scale_gives_blank_maps() {
    let (model, x, meta) = setup();
    let opts = GradCamOptions {
        score_scale: 0.0,
        ..GradCamOptions::default()
    };
    let maps = explain_suite(&model, &x, &meta, &opts).unwrap();
    for m in maps {
        assert_eq!(m.raw_max, 0.0);
        assert!(m.values.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn single_channel_map_is_the_rectified_activation() {
    let a = uniform(&mut rng(10), [1, 1, 6, 7], -1.0, 1.0);
    let l = combine(&a, &[2.5]);
    for (o, v) in l.data().iter().zip(a.data()) {
        assert_eq!(*o, (2.5 * v).max(0.0));
    }
    assert!(combine(&a, &[-1.0])
        .data()
        .iter()
        .zip(a.data())
        .all(|(o, v)| *o == (-v).max(0.0)));
}

#[test]
fn bad_targets_are_usage_errors() {
    let (_, x, meta) = setup();
    let opts = GradCamOptions::default();
    let smaat = Model::<f64>::build(ModelConfig::tiny(Variant::Smaat, 3, 1), 4).unwrap();
    match grad_cam(&smaat, &x, "enc1.block.shortcut", &meta, &opts) {
        Err(Error::Usage(msg)) => assert!(msg.contains("no shortcuts"), "{msg}"),
        other => panic!("expected usage error, got {other:?}"),
    }
    assert!(matches!(explain_suite(&smaat, &x, &meta, &opts), Err(Error::Usage(_))));
    let (model, _, _) = setup();
    assert!(matches!(
        grad_cam(&model, &x, "dec2.cbam", &meta, &opts),
        Err(Error::Usage(_))
    ));
    let batch = uniform(&mut rng(1), [2, 3, 32, 32], 0.0, 1.0);
    assert!(grad_cam(&model, &batch, "enc0.block", &meta, &opts).is_err());
}

#[test]
fn colormap_follows_the_piecewise_jet_ramp() {
    let table = colormap();
    for (i, rgb) in table.iter().enumerate() {
        let t = i as f64 / 255.0;
        let ramp = |c: f64| {
            let v = 1.5 - (4.0 * t - c).abs();
            (v.max(0.0).min(1.0) * 255.0).round() as u8
        };
        assert_eq!(*rgb, [ramp(3.0), ramp(2.0), ramp(1.0)], "entry {i}");
    }
    assert_eq!(table[0], [0, 0, 128]);
    assert_eq!(table[255], [128, 0, 0]);
}

#[test]
fn ppm_has_header_and_one_pixel_per_value() {
    let (model, x, meta) = setup();
    let map = grad_cam(&model, &x, "enc0.block", &meta, &GradCamOptions::default()).unwrap();
    let mut bytes = Vec::new();
    write_ppm(&mut bytes, &map).unwrap();
    let header = b"P6\n32 32\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 3 * 32 * 32);
}
