//! Generate a synthetic rain series, store it as NWDS, read it back and
//! show which windows survive the wet-pixel selection.
//!
//! ```text
//! cargo run --release --example synth_dataset -- [out.nwds]
//! ```

use std::path::PathBuf;

use nowcast::data::{
    make_windows, read_nwds_file, select_rainy, synth_generate, windows_csv, write_nwds_file, SynthConfig, WindowSpec,
};

fn main() -> nowcast::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("synth_example.nwds"));

    let series = synth_generate(&SynthConfig {
        seed: 7,
        n_frames: 60,
        height: 64,
        width: 64,
        n_blobs: 12,
        wind: (1.0, 0.5),
        ..SynthConfig::default()
    })?;
    write_nwds_file(&out, &series)?;
    let back = read_nwds_file(&out)?;
    assert_eq!(back, series);
    println!(
        "{} frames of {:?} every {} min, max {:.1} hundredths of mm -> {}",
        back.len(),
        back.frame_size().unwrap(),
        back.interval_minutes,
        back.max_value(),
        out.display()
    );

    for fraction in [0.0, 0.1, 0.25, 0.5] {
        let sel = select_rainy(&back, fraction)?;
        println!("fraction {fraction:.2}: {} frames selected", sel.len());
    }

    let selected = select_rainy(&back, 0.1)?;
    let spec = WindowSpec::precipitation(6, 30, back.interval_minutes)?.with_stride(6);
    match make_windows(back.len(), &spec, &selected) {
        Ok(ws) => print!("{}", windows_csv(&ws)),
        Err(e) => println!("no windows: {e}"),
    }
    Ok(())
}
