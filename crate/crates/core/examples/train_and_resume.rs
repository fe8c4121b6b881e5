//! Train a tiny model for a few epochs, save the full trainer state,
//! resume it and check the resumed run matches an uninterrupted one.

use nowcast::data::{prepare_splits, synth_generate, PrepareConfig, SynthConfig, WindowSpec};
use nowcast::model::{Model, ModelConfig, Variant};
use nowcast::train::{history_csv, TrainConfig, Trainer};

fn main() -> nowcast::Result<()> {
    let series = synth_generate(&SynthConfig {
        n_frames: 300,
        height: 32,
        width: 32,
        n_blobs: 20,
        ..SynthConfig::default()
    })?;
    let splits = prepare_splits(
        &series,
        &PrepareConfig::new(WindowSpec::new(6, vec![6]).with_stride(2)).with_fraction(0.2),
    )?;
    let cfg = TrainConfig {
        max_epochs: 6,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let fresh = || Model::<f32>::build(ModelConfig::tiny(Variant::Sar, 6, 1), 1);

    let mut full = Trainer::new(fresh()?, cfg.clone())?;
    full.fit(&splits.train, &splits.val)?;
    print!("{}", history_csv(full.history()));

    let mut half = Trainer::new(fresh()?, cfg)?;
    for _ in 0..3 {
        half.run_epoch(&splits.train, &splits.val)?;
    }
    let mut bytes = Vec::new();
    half.save(&mut bytes, &Default::default())?;
    let (mut resumed, _) = Trainer::<f32>::load(&mut bytes.as_slice())?;
    resumed.fit(&splits.train, &splits.val)?;
    let same = resumed.history().iter().zip(full.history()).all(|(a, b)| a.same_run(b));
    println!(
        "checkpoint {} bytes; resumed run identical: {same}; best epoch {} (val {:.6})",
        bytes.len(),
        resumed.state.best_epoch,
        resumed.state.best_val
    );
    Ok(())
}
