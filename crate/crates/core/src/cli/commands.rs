use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::manifest::Manifest;
use super::settings::{Pair, Settings};
use super::{Command, DataArgs, EvaluateArgs, ExplainArgs, PredictArgs, SynthArgs, TrainArgs};
use crate::data::{
    normalization_scale, normalize, prepare_from_parts, read_nwds_file, select_rainy, split_series, synth_generate,
    windows_csv, write_nwds_file, Dataset, FrameSeries, PrepareConfig, SynthConfig, Unit, WindowSpec,
};
use crate::error::{Error, Result};
use crate::gradcam::{explain_suite, grad_cam_many, grid_position, write_ppm, GradCamOptions};
use crate::metrics::{
    evaluate_setup, per_lead_csv, report_csv, report_table, Persistence, UnitMeta, RAIN_THRESHOLD_MM_H,
};
use crate::model::{load_checkpoint, save_checkpoint, Model, ModelConfig, Variant};
use crate::tensor::Tensor4;
use crate::train::{history_csv, TrainConfig, Trainer};

/// Input lengths of the precipitation grid, in frames.
pub const PRECIP_INPUTS: [usize; 3] = [6, 12, 18];
/// Lead times of the precipitation grid, in minutes.
pub const PRECIP_LEADS: [u32; 5] = [30, 60, 90, 120, 180];

const EVAL_BATCH: usize = 8;

pub(super) fn run(cmd: Command, argv: &[String]) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a, argv),
        Command::Train(a) => train(a, argv),
        Command::Evaluate(a) => evaluate(a, argv),
        Command::Predict(a) => predict(a, argv),
        Command::Explain(a) => explain(a, argv),
    }
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Usage(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", path.display()))
}

/// Reads `--data`: a directory with `train.nwds`, `val.nwds` and
/// `test.nwds`, or one file split 70/15/15 in time.
pub fn load_parts(path: &Path) -> Result<[FrameSeries; 3]> {
    if path.is_dir() {
        let read = |n: &str| read_nwds_file(&path.join(n));
        Ok([read("train.nwds")?, read("val.nwds")?, read("test.nwds")?])
    } else {
        split_series(&read_nwds_file(path)?, 0.7, 0.15)
    }
}

struct DataSel {
    path: PathBuf,
    fraction: Option<f64>,
    stride: Option<usize>,
}

fn data_settings(s: &mut Settings, a: DataArgs) -> Result<DataSel> {
    Ok(DataSel {
        path: s.required_path("data", a.data)?,
        fraction: s.optional("select_fraction", a.select_fraction)?,
        stride: s.optional("stride", a.stride)?,
    })
}

/// A point of the experiment grid.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Setup {
    Precip { in_frames: usize, lead_minutes: u32 },
    Cloud,
}

impl Setup {
    fn resolve(cloud: bool, in_frames: Option<usize>, lead: Option<u32>) -> Result<Setup> {
        let grid = || {
            format!(
                "valid setups: --in-frames {:?} with --lead-minutes {:?}, or --cloud (4 inputs, 6 outputs)",
                PRECIP_INPUTS, PRECIP_LEADS
            )
        };
        if cloud {
            if in_frames.is_some_and(|n| n != 4) || lead.is_some() {
                return Err(Error::Usage(format!(
                    "--cloud fixes 4 inputs and the next 6 frames; {}",
                    grid()
                )));
            }
            return Ok(Setup::Cloud);
        }
        let in_frames = in_frames.unwrap_or(6);
        let lead_minutes = lead.unwrap_or(30);
        if !PRECIP_INPUTS.contains(&in_frames) || !PRECIP_LEADS.contains(&lead_minutes) {
            return Err(Error::Usage(format!(
                "no setup with {in_frames} input frames and {lead_minutes} min lead; {}",
                grid()
            )));
        }
        Ok(Setup::Precip {
            in_frames,
            lead_minutes,
        })
    }

    fn spec(self, interval: u32) -> Result<WindowSpec> {
        match self {
            Setup::Cloud => Ok(WindowSpec::cloud()),
            Setup::Precip {
                in_frames,
                lead_minutes,
            } => WindowSpec::precipitation(in_frames, lead_minutes, interval),
        }
    }
}

fn setup_map(data: &Dataset, fraction: f64) -> BTreeMap<String, String> {
    let spec = data.spec();
    let (h, w) = data.frame_size();
    let offsets: Vec<String> = spec.target_offsets.iter().map(|o| o.to_string()).collect();
    [
        ("unit", data.unit.name().to_string()),
        ("norm_scale", data.scale().to_string()),
        ("interval_minutes", data.interval_minutes.to_string()),
        ("in_frames", spec.input_frames.to_string()),
        ("offsets", offsets.join(";")),
        ("stride", spec.stride.to_string()),
        ("select_fraction", fraction.to_string()),
        ("frame_height", h.to_string()),
        ("frame_width", w.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn synth(a: SynthArgs, argv: &[String]) -> Result<()> {
    let t0 = Instant::now();
    let mut s = Settings::load(a.config.as_deref())?;
    let d = SynthConfig::default();
    let out = s.required_path("out", a.out)?;
    let force = s.switch("force", a.force)?;
    let size = s.value("size", a.size, d.height)?;
    let wind = s.value("wind", a.wind, Pair(d.wind.0, d.wind.1))?;
    let cfg = SynthConfig {
        seed: s.value("seed", a.seed, d.seed)?,
        n_frames: s.value("frames", a.frames, d.n_frames)?,
        height: size,
        width: size,
        n_blobs: s.value("blobs", a.blobs, d.n_blobs)?,
        wind: (wind.0, wind.1),
        growth: s.value("growth", a.growth, d.growth)?,
        ..d
    };
    s.finish()?;
    cfg.validate()?;
    refuse_overwrite(&out, force)?;
    let series = synth_generate(&cfg)?;
    ensure_parent(&out)?;
    write_nwds_file(&out, &series)?;
    let mut m = Manifest::new("synth", argv, s.resolved());
    m.output(&out)?;
    m.timings.insert("total_seconds".into(), t0.elapsed().as_secs_f64());
    m.write(&sidecar(&out, ".manifest.json"))?;
    println!("wrote {} frames of {size}x{size} to {}", series.len(), out.display());
    Ok(())
}

fn train(a: TrainArgs, argv: &[String]) -> Result<()> {
    let t0 = Instant::now();
    let mut s = Settings::load(a.config.as_deref())?;
    let data = data_settings(&mut s, a.data)?;
    let out_dir = s.required_path("out_dir", a.out_dir)?;
    let force = s.switch("force", a.force)?;
    let variant = s.value("variant", a.variant, Variant::Sar)?;
    let cloud = s.switch("cloud", a.cloud)?;
    let in_frames = s.optional("in_frames", a.in_frames)?;
    let lead = s.optional("lead_minutes", a.lead_minutes)?;
    let setup = Setup::resolve(cloud, in_frames, lead)?;
    let base = s.value("base_channels", a.base_channels, 64usize)?;
    let reduction = s.value("reduction", a.reduction, (base / 2).clamp(1, 16))?;
    let d = TrainConfig::default();
    let tcfg = TrainConfig {
        seed: s.value("seed", a.seed, d.seed)?,
        max_epochs: s.value("epochs", a.epochs, d.max_epochs)?,
        batch_size: s.value("batch_size", a.batch_size, d.batch_size)?,
        lr0: s.value("lr", a.lr, d.lr0)?,
        plateau_patience: s.value("patience", a.patience, d.plateau_patience)?,
        early_stop_patience: s.value("early_stop", a.early_stop, d.early_stop_patience)?,
        ..d
    };
    let fraction = s.value("select_fraction", data.fraction, 0.5)?;
    let stride = s.value("stride", data.stride, 1usize)?;
    s.finish()?;
    tcfg.validate()?;

    let best_path = out_dir.join("best.ckpt");
    refuse_overwrite(&best_path, force)?;
    let parts = load_parts(&data.path)?;
    let spec = setup.spec(parts[0].interval_minutes)?.with_stride(stride);
    let mut pcfg = PrepareConfig::new(spec.clone());
    pcfg.select_fraction = fraction;
    let splits = prepare_from_parts(&parts[0], &parts[1], &parts[2], &pcfg)?;
    let mcfg = ModelConfig::new(variant, spec.input_frames, spec.target_offsets.len(), base).with_reduction(reduction);
    let model = Model::<f32>::build(mcfg, tcfg.seed)?;
    let (h, w) = splits.train.frame_size();
    model.check_input([1, spec.input_frames, h, w].into())?;
    eprintln!(
        "training {} ({} parameters) on {}/{}/{} windows",
        variant.label(),
        model.param_count(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );

    let t_train = Instant::now();
    let mut trainer = Trainer::new(model, tcfg)?;
    trainer.fit_with(&splits.train, &splits.val, |r| {
        eprintln!(
            "epoch {:>3}  train {:.6}  val {:.6}  lr {:e}{}",
            r.row.epoch,
            r.row.train_mse,
            r.row.val_mse,
            r.row.lr,
            if r.decision.improved { "  *" } else { "" }
        );
    })?;
    let train_seconds = t_train.elapsed().as_secs_f64();

    fs::create_dir_all(&out_dir)?;
    let setup_kv = setup_map(&splits.train, fraction);
    let best = trainer.best_model()?;
    let mut outputs = vec![best_path.clone()];
    save_checkpoint(&mut BufWriter::new(File::create(&best_path)?), &best, &setup_kv)?;
    let last = out_dir.join("last.ckpt");
    trainer.save(&mut BufWriter::new(File::create(&last)?), &setup_kv)?;
    outputs.push(last);
    let hist = out_dir.join("history.csv");
    fs::write(&hist, history_csv(trainer.history()))?;
    outputs.push(hist);
    for (name, ds) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        let p = out_dir.join(format!("windows_{name}.csv"));
        fs::write(&p, windows_csv(ds.windows()))?;
        outputs.push(p);
    }

    let mut m = Manifest::new("train", argv, s.resolved());
    m.input(&data.path)?;
    for p in &outputs {
        m.output(p)?;
    }
    m.timings.insert("train_seconds".into(), train_seconds);
    m.timings.insert("total_seconds".into(), t0.elapsed().as_secs_f64());
    m.write(&out_dir.join("manifest.json"))?;
    println!(
        "best epoch {} with val mse {:.6}; wrote {}",
        trainer.state.best_epoch,
        trainer.state.best_val,
        out_dir.display()
    );
    Ok(())
}

struct Loaded {
    model: Model<f32>,
    setup: BTreeMap<String, String>,
    spec: WindowSpec,
    scale: f32,
}

fn setup_value<V: std::str::FromStr>(setup: &BTreeMap<String, String>, k: &str) -> Result<V> {
    setup
        .get(k)
        .ok_or_else(|| Error::Format(format!("checkpoint setup lacks {k}")))?
        .parse()
        .map_err(|_| Error::Format(format!("checkpoint setup value {k} does not parse")))
}

fn load_model(path: &Path) -> Result<Loaded> {
    let mut r = BufReader::new(File::open(path)?);
    let (model, setup) = load_checkpoint::<f32, _>(&mut r)?;
    let offsets = setup_value::<String>(&setup, "offsets")?
        .split(';')
        .map(|o| o.parse().map_err(|_| Error::Format(format!("bad offset {o:?}"))))
        .collect::<Result<Vec<usize>>>()?;
    let spec = WindowSpec::new(setup_value(&setup, "in_frames")?, offsets);
    let scale = setup_value(&setup, "norm_scale")?;
    Ok(Loaded {
        model,
        setup,
        spec,
        scale,
    })
}

/// Lists every way the checkpoint and the data disagree.
fn check_compat(l: &Loaded, series: &FrameSeries) -> Result<()> {
    let mut diff = Vec::new();
    let unit = l.setup.get("unit").map(String::as_str).unwrap_or("?");
    if unit != series.unit.name() {
        diff.push(format!("unit: checkpoint {unit}, data {}", series.unit.name()));
    }
    let interval = l.setup.get("interval_minutes").map(String::as_str).unwrap_or("?");
    if interval != series.interval_minutes.to_string() {
        diff.push(format!(
            "interval_minutes: checkpoint {interval}, data {}",
            series.interval_minutes
        ));
    }
    let cfg = l.model.config();
    if cfg.in_channels != l.spec.input_frames || cfg.out_channels != l.spec.target_offsets.len() {
        diff.push(format!(
            "channels: model {}->{}, window {}->{}",
            cfg.in_channels,
            cfg.out_channels,
            l.spec.input_frames,
            l.spec.target_offsets.len()
        ));
    }
    if let Some((h, w)) = series.frame_size() {
        if let Err(e) = l.model.check_input([1, cfg.in_channels, h, w].into()) {
            diff.push(format!("frame size {h}x{w}: {e}"));
        }
    }
    if diff.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "checkpoint is incompatible with the data:\n  {}",
            diff.join("\n  ")
        )))
    }
}

fn test_dataset(test: &FrameSeries, spec: &WindowSpec, fraction: f64, scale: f32) -> Result<Dataset> {
    Dataset::new(test, spec, &select_rainy(test, fraction)?, scale)
}

fn evaluate(a: EvaluateArgs, argv: &[String]) -> Result<()> {
    let t0 = Instant::now();
    let mut s = Settings::load(a.config.as_deref())?;
    let data = data_settings(&mut s, a.data)?;
    let joined = (!a.checkpoint.is_empty()).then(|| {
        a.checkpoint
            .iter()
            .map(|p| p.to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join(",")
    });
    let checkpoints: Vec<PathBuf> = s
        .optional::<String>("checkpoint", joined)?
        .map(|j| j.split(',').map(PathBuf::from).collect())
        .unwrap_or_default();
    let baseline = s.optional::<String>("baseline", a.baseline)?;
    if let Some(b) = baseline.as_deref().filter(|b| *b != "persistence") {
        return Err(Error::Usage(format!(
            "unknown baseline {b:?}; the only baseline is persistence"
        )));
    }
    let with_persistence = baseline.is_some();
    let cloud = s.switch("cloud", a.cloud)?;
    let in_frames = s.optional("in_frames", a.in_frames)?;
    let lead = s.optional("lead_minutes", a.lead_minutes)?;
    let threshold = s.value("threshold", a.threshold, RAIN_THRESHOLD_MM_H)?;
    let out_dir = s.required_path("out_dir", a.out_dir)?;
    let force = s.switch("force", a.force)?;
    s.finish()?;
    if checkpoints.is_empty() && !with_persistence {
        return Err(Error::Usage(
            "nothing to evaluate: pass --checkpoint and/or --baseline persistence".into(),
        ));
    }
    let report = out_dir.join("report.csv");
    refuse_overwrite(&report, force)?;

    let parts = load_parts(&data.path)?;
    let test = &parts[2];
    let mut rows = Vec::new();
    let mut baseline_done: Vec<WindowSpec> = Vec::new();
    for path in &checkpoints {
        let l = load_model(path)?;
        check_compat(&l, test)?;
        let fraction = match data.fraction {
            Some(f) => f,
            None => setup_value(&l.setup, "select_fraction")?,
        };
        let spec = l.spec.clone().with_stride(data.stride.unwrap_or(1));
        let ds = test_dataset(test, &spec, fraction, l.scale)?;
        rows.push(evaluate_setup(&l.model, &ds, threshold, EVAL_BATCH)?);
        if with_persistence && !baseline_done.contains(&spec) {
            let out = spec.target_offsets.len();
            rows.push(evaluate_setup(
                &Persistence { out_channels: out },
                &ds,
                threshold,
                EVAL_BATCH,
            )?);
            baseline_done.push(spec);
        }
    }
    if checkpoints.is_empty() {
        let setup = Setup::resolve(cloud, in_frames, lead)?;
        let spec = setup.spec(test.interval_minutes)?.with_stride(data.stride.unwrap_or(1));
        let scale = normalization_scale(&parts[0])?;
        let ds = test_dataset(test, &spec, data.fraction.unwrap_or(0.5), scale)?;
        let out = spec.target_offsets.len();
        rows.push(evaluate_setup(
            &Persistence { out_channels: out },
            &ds,
            threshold,
            EVAL_BATCH,
        )?);
    }

    fs::create_dir_all(&out_dir)?;
    let table = report_table(&rows);
    let files = [
        (report.clone(), report_csv(&rows)),
        (out_dir.join("report.txt"), table.clone()),
        (out_dir.join("per_lead.csv"), per_lead_csv(&rows)),
    ];
    let mut m = Manifest::new("evaluate", argv, s.resolved());
    m.input(&data.path)?;
    for c in &checkpoints {
        m.input(c)?;
    }
    for (p, text) in &files {
        fs::write(p, text)?;
        m.output(p)?;
    }
    m.timings.insert("total_seconds".into(), t0.elapsed().as_secs_f64());
    m.write(&out_dir.join("manifest.json"))?;
    print!("{table}");
    Ok(())
}

fn predict(a: PredictArgs, argv: &[String]) -> Result<()> {
    let t0 = Instant::now();
    let mut s = Settings::load(a.config.as_deref())?;
    let data = data_settings(&mut s, a.data)?;
    let ckpt = s.required_path("checkpoint", a.checkpoint)?;
    let window = s.optional("window", a.window)?;
    let out = s.required_path("out", a.out)?;
    let force = s.switch("force", a.force)?;
    s.finish()?;
    refuse_overwrite(&out, force)?;

    let l = load_model(&ckpt)?;
    let parts = load_parts(&data.path)?;
    let test = &parts[2];
    check_compat(&l, test)?;
    let fraction = match data.fraction {
        Some(f) => f,
        None => setup_value(&l.setup, "select_fraction")?,
    };
    let spec = l.spec.clone().with_stride(data.stride.unwrap_or(1));
    let ds = test_dataset(test, &spec, fraction, l.scale)?;
    let idx: Vec<usize> = match window {
        Some(i) if i >= ds.len() => {
            return Err(Error::Usage(format!(
                "--window {i} is out of range; the test split has {} windows",
                ds.len()
            )))
        }
        Some(i) => vec![i],
        None => (0..ds.len()).collect(),
    };
    let mut frames = Vec::new();
    for chunk in idx.chunks(EVAL_BATCH) {
        let b = ds.batch::<f32>(chunk)?;
        let y = l.model.predict(&b.inputs)?;
        let ys = y.shape();
        for n in 0..ys.n {
            for c in 0..ys.c {
                let plane = y.plane(n, c).iter().map(|v| (v * l.scale).max(0.0)).collect();
                frames.push(Tensor4::from_vec([1, 1, ys.h, ys.w], plane)?);
            }
        }
    }
    // Model outputs on binary data are scores in [0, 1], not masks.
    let unit = if test.unit == Unit::Binary {
        Unit::Unitless
    } else {
        test.unit
    };
    let series = FrameSeries::new(frames, test.interval_minutes, unit)?;
    ensure_parent(&out)?;
    write_nwds_file(&out, &series)?;

    let mut m = Manifest::new("predict", argv, s.resolved());
    m.input(&data.path)?;
    m.input(&ckpt)?;
    m.output(&out)?;
    m.timings.insert("total_seconds".into(), t0.elapsed().as_secs_f64());
    m.write(&sidecar(&out, ".manifest.json"))?;
    println!(
        "wrote {} frames ({} windows x {} leads) to {}",
        series.len(),
        idx.len(),
        spec.target_offsets.len(),
        out.display()
    );
    Ok(())
}

/// The normalised input stack for `explain`.
fn explain_input(l: &Loaded, window: &str, data: Option<DataSel>) -> Result<(Tensor4<f32>, Option<PathBuf>)> {
    if let Ok(i) = window.parse::<usize>() {
        let data = data.ok_or_else(|| Error::Usage("a window index needs --data".into()))?;
        let parts = load_parts(&data.path)?;
        check_compat(l, &parts[2])?;
        let fraction = match data.fraction {
            Some(f) => f,
            None => setup_value(&l.setup, "select_fraction")?,
        };
        let spec = l.spec.clone().with_stride(data.stride.unwrap_or(1));
        let ds = test_dataset(&parts[2], &spec, fraction, l.scale)?;
        if i >= ds.len() {
            return Err(Error::Usage(format!(
                "--input-window {i} is out of range; the test split has {} windows",
                ds.len()
            )));
        }
        return Ok((ds.batch::<f32>(&[i])?.inputs, Some(data.path)));
    }
    let path = PathBuf::from(window);
    let series = read_nwds_file(&path)?;
    check_compat(l, &series)?;
    let want = l.model.config().in_channels;
    if series.len() != want {
        return Err(Error::Config(format!(
            "input window has {} frames, the checkpoint expects {want}",
            series.len()
        )));
    }
    let (h, w) = series.frame_size().unwrap_or((0, 0));
    let mut stack = Vec::with_capacity(want * h * w);
    for f in series.frames() {
        stack.extend_from_slice(normalize(f, l.scale).data());
    }
    Ok((Tensor4::from_vec([1, want, h, w], stack)?, Some(path)))
}

fn explain(a: ExplainArgs, argv: &[String]) -> Result<()> {
    let t0 = Instant::now();
    let mut s = Settings::load(a.config.as_deref())?;
    let data_path = s.path("data", a.data.data)?;
    let data = match data_path {
        Some(path) => Some(DataSel {
            path,
            fraction: s.optional("select_fraction", a.data.select_fraction)?,
            stride: s.optional("stride", a.data.stride)?,
        }),
        None => None,
    };
    let ckpt = s.required_path("checkpoint", a.checkpoint)?;
    let window = s.required::<String>("input_window", a.input_window)?;
    let targets = s.value("targets", a.targets, "all".to_string())?;
    let ppm = s.switch("ppm", a.ppm)?;
    let out_dir = s.required_path("out_dir", a.out_dir)?;
    let force = s.switch("force", a.force)?;
    s.finish()?;
    let index_path = out_dir.join("index.csv");
    refuse_overwrite(&index_path, force)?;

    let l = load_model(&ckpt)?;
    let (x, input) = explain_input(&l, &window, data)?;
    l.model.check_input(x.shape())?;
    let meta = UnitMeta::from_setup(&l.setup)?;
    let opts = GradCamOptions::default();
    let maps = if targets == "all" {
        match l.model.config().variant {
            Variant::Sar => explain_suite(&l.model, &x, &meta, &opts)?,
            Variant::Smaat => grad_cam_many(&l.model, &x, &l.model.explain_targets(), &meta, &opts)?,
        }
    } else {
        let names: Vec<String> = targets.split(',').map(|t| t.trim().to_string()).collect();
        grad_cam_many(&l.model, &x, &names, &meta, &opts)?
    };

    fs::create_dir_all(&out_dir)?;
    let mut m = Manifest::new("explain", argv, s.resolved());
    m.input(&ckpt)?;
    if let Some(p) = &input {
        m.input(p)?;
    }
    let mut index = String::from("file,target,section,depth,column,raw_max\n");
    for (i, map) in maps.iter().enumerate() {
        let stem = format!("{i:02}_{}", map.target);
        let file = out_dir.join(format!("{stem}.nwds"));
        let series = FrameSeries::new(vec![map.values.clone()], meta.interval_minutes, Unit::Unitless)?;
        write_nwds_file(&file, &series)?;
        m.output(&file)?;
        if ppm {
            let p = out_dir.join(format!("{stem}.ppm"));
            let mut w = BufWriter::new(File::create(&p)?);
            write_ppm(&mut w, map)?;
            w.flush()?;
            drop(w);
            m.output(&p)?;
        }
        let (section, depth, column) = grid_position(&map.target).unwrap_or(("other", 0, "block"));
        index.push_str(&format!(
            "{stem}.nwds,{},{section},{depth},{column},{}\n",
            map.target, map.raw_max
        ));
    }
    fs::write(&index_path, &index)?;
    m.output(&index_path)?;
    m.timings.insert("total_seconds".into(), t0.elapsed().as_secs_f64());
    m.write(&out_dir.join("manifest.json"))?;
    println!("wrote {} heatmaps to {}", maps.len(), out_dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_precipitation_grid_is_valid() {
        let mut n = 0;
        for i in PRECIP_INPUTS {
            for l in PRECIP_LEADS {
                let s = Setup::resolve(false, Some(i), Some(l)).unwrap();
                let spec = s.spec(5).unwrap();
                assert_eq!(spec.target_offsets, vec![(l / 5) as usize]);
                n += 1;
            }
        }
        assert_eq!(n, 15);
    }

    #[test]
    fn off_grid_lists_the_grid() {
        let e = Setup::resolve(false, Some(7), Some(30)).unwrap_err();
        assert!(matches!(&e, Error::Usage(m) if m.contains("[6, 12, 18]") && m.contains("180")));
        assert!(Setup::resolve(true, Some(6), None).is_err());
        let spec = Setup::resolve(true, None, None).unwrap().spec(15).unwrap();
        assert_eq!((spec.input_frames, spec.target_offsets.len()), (4, 6));
    }
}
