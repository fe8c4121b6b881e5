//! Briefly train a tiny model, then render Grad-CAM maps for every
//! explainable layer of one test window as PPM images.
//!
//! ```text
//! cargo run --release --example explain_heatmaps -- [out_dir]
//! ```

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use nowcast::data::{prepare_splits, synth_generate, PrepareConfig, SynthConfig, WindowSpec};
use nowcast::gradcam::{explain_suite, grid_position, write_ppm, GradCamOptions};
use nowcast::metrics::UnitMeta;
use nowcast::model::{Model, ModelConfig, Variant};
use nowcast::train::{fit, TrainConfig};

fn main() -> nowcast::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("gradcam_example"));
    fs::create_dir_all(&out)?;

    let series = synth_generate(&SynthConfig {
        n_frames: 300,
        height: 48,
        width: 48,
        n_blobs: 20,
        ..SynthConfig::default()
    })?;
    let splits = prepare_splits(
        &series,
        &PrepareConfig::new(WindowSpec::new(6, vec![6]).with_stride(2)).with_fraction(0.2),
    )?;
    let model = Model::<f32>::build(ModelConfig::tiny(Variant::Sar, 6, 1), 0)?;
    let cfg = TrainConfig {
        max_epochs: 3,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let model = fit(model, &splits.train, &splits.val, cfg)?.best_model()?;

    let x = splits.test.batch::<f32>(&[0])?.inputs;
    let meta = UnitMeta::of(&splits.test);
    let maps = explain_suite(&model, &x, &meta, &GradCamOptions::default())?;
    for (i, map) in maps.iter().enumerate() {
        let (section, depth, column) = grid_position(&map.target).unwrap();
        let path = out.join(format!("{i:02}_{}.ppm", map.target));
        write_ppm(&mut BufWriter::new(File::create(&path)?), map)?;
        println!("{section:<8} {depth} {column:<9} raw max {:.4e}", map.raw_max);
    }
    println!("{} heatmaps in {}", maps.len(), out.display());
    Ok(())
}
