mod common;

use nowcast::data::{prepare_splits, synth_generate, PrepareConfig, SynthConfig, WindowSpec};
use nowcast::model::{Model, ModelConfig, Variant};
use nowcast::nn::{Ctx, Mode, ParamStore};
use nowcast::train::{evaluate_mse, fit, history_csv, Adam, Scheduler, SchedulerConfig, TrainConfig};
use nowcast::{Graph, Tensor4};
use proptest::prelude::*;

/// Textbook bias-corrected Adam on a plain vector.
fn adam_oracle(p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], t: i32, lr: f64) {
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    for j in 0..p.len() {
        m[j] = b1 * m[j] + (1.0 - b1) * g[j];
        v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
        let mh = m[j] / (1.0 - b1.powi(t));
        let vh = v[j] / (1.0 - b2.powi(t));
        p[j] -= lr * mh / (vh.sqrt() + eps);
    }
}

#[test]
fn adam_matches_textbook_update() {
    let target = [0.3, -1.0, 2.0, 0.0];
    let mut store = ParamStore::<f64>::new();
    let id = store
        .add_param(
            "p",
            Tensor4::from_vec([1, 1, 1, 4], vec![1.0, 1.0, -0.5, 0.25]).unwrap(),
        )
        .unwrap();
    let mut adam = Adam::new(&store, 0.9, 0.999, 1e-8);
    let mut p = store.value(id).data().to_vec();
    let (mut m, mut v) = (vec![0.0; 4], vec![0.0; 4]);
    for t in 1..=5 {
        store.zero_grad();
        let g = Graph::new();
        let leaves = {
            let ctx = Ctx::new(&g, &store, Mode::Train);
            let tv = g.constant(Tensor4::from_vec([1, 1, 1, 4], target.to_vec()).unwrap());
            let loss = g.mse(&ctx.param(id), &tv).unwrap();
            g.backward(&loss).unwrap();
            ctx.param_leaves()
        };
        store.accumulate_grads(&g, &leaves);
        let grad: Vec<f64> = p.iter().zip(target).map(|(a, b)| 2.0 * (a - b) / 4.0).collect();
        adam.step(&mut store, 1e-2).unwrap();
        adam_oracle(&mut p, &mut m, &mut v, &grad, t, 1e-2);
        for (a, b) in store.value(id).data().iter().zip(&p) {
            assert!((a - b).abs() <= 1e-14, "step {t}: {a} vs {b}");
        }
    }
}

#[test]
fn adam_refuses_missing_gradients() {
    let mut store = ParamStore::<f32>::new();
    store.add_param("p", Tensor4::zeros([1, 1, 1, 1])).unwrap();
    let mut adam = Adam::new(&store, 0.9, 0.999, 1e-8);
    assert!(adam.step(&mut store, 1e-3).is_err());
}

#[test]
fn best_validation_is_the_history_minimum() {
    let series = synth_generate(&SynthConfig {
        n_frames: 90,
        height: 32,
        width: 32,
        n_blobs: 30,
        ..SynthConfig::default()
    })
    .unwrap();
    let splits = prepare_splits(&series, &PrepareConfig::new(WindowSpec::new(3, vec![1]).with_stride(2))).unwrap();
    let cfg = TrainConfig {
        max_epochs: 5,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let model = Model::<f32>::build(ModelConfig::tiny(Variant::Sar, 3, 1), 0).unwrap();
    let trainer = fit(model, &splits.train, &splits.val, cfg).unwrap();
    let h = trainer.history();
    assert_eq!(h.len(), 5);
    let (best_epoch, best_val) = h
        .iter()
        .map(|r| (r.epoch, r.val_mse))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    assert_eq!(trainer.state.best_epoch, best_epoch);
    assert_eq!(trainer.state.best_val, best_val);
    let best = trainer.best_model().unwrap();
    assert_eq!(evaluate_mse(&best, &splits.val, 4).unwrap(), best_val);
    let csv = history_csv(h);
    assert!(csv.starts_with("epoch,train_mse,val_mse,lr,seconds\n"));
    assert_eq!(csv.lines().count(), 6);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn rate_is_always_a_decade_below_the_start(
        losses in proptest::collection::vec(0.0..1.0f64, 1..80),
        patience in 1..6usize,
        stop in 1..20usize,
        reset in any::<bool>(),
    ) {
        let mut s = Scheduler::new(SchedulerConfig {
            plateau_patience: patience,
            early_stop_patience: stop,
            reset_on_drop: reset,
            ..SchedulerConfig::default()
        });
        let mut best = f64::INFINITY;
        let mut since = 0usize;
        let mut prev_drops = 0;
        for (i, &l) in losses.iter().enumerate() {
            let d = s.step(l).unwrap();
            prop_assert_eq!(d.improved, l < best);
            if l < best && best.is_finite() { since = 0 } else { since += 1 }
            best = best.min(l);
            prop_assert!(s.drops >= prev_drops && s.drops <= prev_drops + 1);
            if reset {
                prop_assert!(s.drops as usize <= (i + 1) / patience);
            } else {
                prop_assert!(s.drops as usize <= (i + 2).saturating_sub(patience));
            }
            prev_drops = s.drops;
            let expect = 1e-3 / 10f64.powi(s.drops as i32);
            prop_assert_eq!(d.lr, expect);
            prop_assert_eq!(d.stop, since >= stop);
            if d.stop {
                break;
            }
        }
    }
}
