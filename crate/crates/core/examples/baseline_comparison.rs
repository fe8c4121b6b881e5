//! Train a tiny model on synthetic advection and compare it with
//! persistence and the ablation variant on the test split.
//!
//! ```text
//! cargo run --release --example baseline_comparison -- [seed] [epochs] [stride]
//! ```

use nowcast::data::{prepare_splits, synth_generate, PrepareConfig, SynthConfig, WindowSpec};
use nowcast::metrics::{evaluate_setup, report_table, Persistence, RAIN_THRESHOLD_MM_H};
use nowcast::model::{Model, ModelConfig, Variant};
use nowcast::train::{fit, TrainConfig};

fn main() -> nowcast::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let seed = args.first().copied().unwrap_or(0);
    let epochs = args.get(1).copied().unwrap_or(8) as usize;
    let stride = args.get(2).copied().unwrap_or(4) as usize;

    let series = synth_generate(&SynthConfig {
        seed,
        n_frames: 2000,
        ..SynthConfig::default()
    })?;
    let spec = WindowSpec::new(6, vec![6]).with_stride(stride);
    let splits = prepare_splits(&series, &PrepareConfig::new(spec))?;
    println!(
        "windows: {} train, {} val, {} test",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );

    let mut rows = vec![evaluate_setup(
        &Persistence { out_channels: 1 },
        &splits.test,
        RAIN_THRESHOLD_MM_H,
        8,
    )?];
    for variant in [Variant::Smaat, Variant::Sar] {
        let model = Model::<f32>::build(ModelConfig::tiny(variant, 6, 1), seed)?;
        let cfg = TrainConfig {
            seed,
            max_epochs: epochs,
            ..TrainConfig::default()
        };
        let start = std::time::Instant::now();
        let trainer = fit(model, &splits.train, &splits.val, cfg)?;
        for row in trainer.history() {
            println!(
                "  epoch {:>3}  train {:.6}  val {:.6}  lr {:e}",
                row.epoch, row.train_mse, row.val_mse, row.lr
            );
        }
        println!(
            "{}: best epoch {} (val {:.6}) in {:.1}s",
            variant.label(),
            trainer.state.best_epoch,
            trainer.state.best_val,
            start.elapsed().as_secs_f64()
        );
        rows.push(evaluate_setup(
            &trainer.best_model()?,
            &splits.test,
            RAIN_THRESHOLD_MM_H,
            8,
        )?);
    }
    print!("{}", report_table(&rows));
    Ok(())
}
