//! Binarisation, confusion counts, classification scores, MSE and report
//! assembly.
//!
//! Confusion counts are micro-averaged: accumulated over a whole split
//! before any ratio is taken. MSE uses an exactly rounded sum of
//! per-sample squared errors, so it does not depend on sample order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::{Dataset, Unit};
use crate::error::{Error, Result};
use crate::model::{persistence_forward, Model};
use crate::real::Real;
use crate::tensor::Tensor4;

/// Default rain-rate threshold in mm/h.
pub const RAIN_THRESHOLD_MM_H: f64 = 0.5;

/// What a prediction's values mean physically.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitMeta {
    pub unit: Unit,
    /// Normalisation scale: physical value = normalised value * scale.
    pub scale: f32,
    pub interval_minutes: u32,
    /// Multiplier from per-frame accumulation to an hourly rate; `None`
    /// means `60 / interval_minutes`.
    pub rate_factor: Option<f64>,
}

impl UnitMeta {
    pub fn new(unit: Unit, scale: f32, interval_minutes: u32) -> Self {
        UnitMeta {
            unit,
            scale,
            interval_minutes,
            rate_factor: None,
        }
    }

    pub fn of(data: &Dataset) -> Self {
        Self::new(data.unit, data.scale(), data.interval_minutes)
    }

    /// Reads `unit`, `norm_scale` and `interval_minutes` from checkpoint
    /// setup metadata.
    pub fn from_setup(setup: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            setup
                .get(k)
                .ok_or_else(|| Error::Usage(format!("unit metadata missing: {k}")))
        };
        let unit = Unit::from_name(get("unit")?)?;
        let scale = get("norm_scale")?
            .parse()
            .map_err(|_| Error::Usage("unit metadata norm_scale does not parse".into()))?;
        let interval = get("interval_minutes")?
            .parse()
            .map_err(|_| Error::Usage("unit metadata interval_minutes does not parse".into()))?;
        Ok(Self::new(unit, scale, interval))
    }

    fn rate(&self) -> f64 {
        self.rate_factor.unwrap_or(60.0 / self.interval_minutes as f64)
    }

    /// Whether a normalised value counts as the positive class.
    pub fn is_positive(&self, v: f64, threshold: f64) -> bool {
        match self.unit {
            Unit::RawHundredthsMm => {
                let raw = v * self.scale as f64;
                raw / 100.0 * self.rate() >= threshold
            }
            Unit::Binary | Unit::Unitless => v >= threshold,
        }
    }

    /// Default threshold for the unit: 0.5 mm/h for rain, 0.5 for masks.
    pub fn default_threshold(&self) -> f64 {
        RAIN_THRESHOLD_MM_H
    }
}

/// 1 where the value reaches `threshold` (in mm/h for rain data), else 0.
pub fn binarize<T: Real>(image: &Tensor4<T>, threshold: f64, meta: &UnitMeta) -> Tensor4<T> {
    image.map(|v| {
        if meta.is_positive(v.as_f64(), threshold) {
            T::one()
        } else {
            T::zero()
        }
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn add(&mut self, o: &ConfusionCounts) {
        self.tp += o.tp;
        self.tn += o.tn;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Counts over two binary tensors of equal shape.
pub fn confusion<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<ConfusionCounts> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(
            "confusion",
            format!("{} vs {}", pred.shape(), target.shape()),
        ));
    }
    let mut c = ConfusionCounts::default();
    let (zero, one) = (T::zero(), T::one());
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        match (p == one, t == one) {
            _ if (p != zero && p != one) || (t != zero && t != one) => {
                return Err(Error::Usage("confusion needs binary inputs".into()));
            }
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Which ratios had a zero denominator (and were reported as 0).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ZeroDivision {
    pub precision: bool,
    pub recall: bool,
    pub accuracy: bool,
    pub f1: bool,
}

impl ZeroDivision {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.accuracy || self.f1
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub zero_division: ZeroDivision,
}

fn ratio(num: f64, den: f64, flag: &mut bool) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        *flag = true;
        0.0
    }
}

pub fn scores(c: &ConfusionCounts) -> Scores {
    let mut z = ZeroDivision::default();
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let precision = ratio(tp, tp + fp, &mut z.precision);
    let recall = ratio(tp, tp + fn_, &mut z.recall);
    let accuracy = ratio(tp + tn, c.total() as f64, &mut z.accuracy);
    let f1 = ratio(2.0 * precision * recall, precision + recall, &mut z.f1);
    Scores {
        precision,
        recall,
        accuracy,
        f1,
        zero_division: z,
    }
}

/// Correctly rounded sum of `values` (Shewchuk / `fsum`), independent of
/// their order.
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Squared error of each sample of a batch, in f64.
pub fn per_sample_sse<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<Vec<f64>> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("mse", format!("{} vs {}", pred.shape(), target.shape())));
    }
    Ok((0..pred.shape().n)
        .map(|n| {
            pred.sample_slice(n)
                .iter()
                .zip(target.sample_slice(n))
                .map(|(&p, &t)| {
                    let d = p.as_f64() - t.as_f64();
                    d * d
                })
                .sum()
        })
        .collect())
}

/// Something that maps an input stack to a prediction stack.
pub trait Predictor {
    fn name(&self) -> String;
    fn predict(&self, x: &Tensor4<f32>) -> Result<Tensor4<f32>>;
}

/// The last input frame, repeated for every output channel.
pub struct Persistence {
    pub out_channels: usize,
}

impl Predictor for Persistence {
    fn name(&self) -> String {
        "persistence".into()
    }

    fn predict(&self, x: &Tensor4<f32>) -> Result<Tensor4<f32>> {
        Ok(persistence_forward(x, self.out_channels))
    }
}

impl Predictor for Model<f32> {
    fn name(&self) -> String {
        self.config().variant.label().into()
    }

    fn predict(&self, x: &Tensor4<f32>) -> Result<Tensor4<f32>> {
        Model::predict(self, x)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SetupDesc {
    pub input_minutes: u32,
    /// Lead of each target channel, in minutes.
    pub lead_minutes: Vec<u32>,
}

impl SetupDesc {
    pub fn of(data: &Dataset) -> Self {
        let i = data.interval_minutes;
        SetupDesc {
            input_minutes: data.spec().input_frames as u32 * i,
            lead_minutes: data.spec().target_offsets.iter().map(|&o| o as u32 * i).collect(),
        }
    }

    fn lead_label(&self) -> String {
        match self.lead_minutes.as_slice() {
            [l] => l.to_string(),
            ls => format!("{}-{}", ls.iter().min().unwrap_or(&0), ls.iter().max().unwrap_or(&0)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeadMetrics {
    pub lead_minutes: u32,
    pub mse: f64,
    pub counts: ConfusionCounts,
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub setup: SetupDesc,
    pub model: String,
    /// Normalised units.
    pub mse: f64,
    /// Squared raw units (`mse * scale²`).
    pub mse_physical: f64,
    pub counts: ConfusionCounts,
    pub scores: Scores,
    pub per_lead: Vec<LeadMetrics>,
}

/// Scores one predictor on a whole split.
pub fn evaluate_setup(
    predictor: &dyn Predictor,
    data: &Dataset,
    threshold: f64,
    batch_size: usize,
) -> Result<MetricReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("test split is empty".into()));
    }
    let meta = UnitMeta::of(data);
    let setup = SetupDesc::of(data);
    let leads = setup.lead_minutes.len();
    let mut sse = Vec::with_capacity(data.len());
    let mut lead_sse: Vec<Vec<f64>> = vec![Vec::new(); leads];
    let mut lead_counts = vec![ConfusionCounts::default(); leads];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let b = data.batch::<f32>(chunk)?;
        let y = predictor.predict(&b.inputs)?;
        if y.shape() != b.targets.shape() {
            return Err(Error::Config(format!(
                "{} predicts {}, targets are {}",
                predictor.name(),
                y.shape(),
                b.targets.shape()
            )));
        }
        sse.extend(per_sample_sse(&y, &b.targets)?);
        for k in 0..leads {
            let yk = y.slice_channels(k, 1)?;
            let tk = b.targets.slice_channels(k, 1)?;
            lead_sse[k].extend(per_sample_sse(&yk, &tk)?);
            let c = confusion(&binarize(&yk, threshold, &meta), &binarize(&tk, threshold, &meta))?;
            lead_counts[k].add(&c);
        }
    }
    let (h, w) = data.frame_size();
    let per_sample = (h * w) as f64;
    let n = data.len() as f64;
    let mse = exact_sum(sse) / (n * per_sample * leads as f64);
    let mut counts = ConfusionCounts::default();
    let per_lead = (0..leads)
        .map(|k| {
            counts.add(&lead_counts[k]);
            LeadMetrics {
                lead_minutes: setup.lead_minutes[k],
                mse: exact_sum(lead_sse[k].iter().copied()) / (n * per_sample),
                counts: lead_counts[k],
                scores: scores(&lead_counts[k]),
            }
        })
        .collect();
    let s2 = (meta.scale as f64) * (meta.scale as f64);
    Ok(MetricReport {
        setup,
        model: predictor.name(),
        mse,
        mse_physical: mse * s2,
        counts,
        scores: scores(&counts),
        per_lead,
    })
}

fn model_rank(name: &str) -> usize {
    match name {
        "persistence" => 0,
        "smaat-config" => 1,
        "sar-unet" => 2,
        _ => 3,
    }
}

/// Rows ordered by input amount, then lead, then model (persistence,
/// smaat-config, sar-unet, others by name).
pub fn sort_reports(rows: &mut [MetricReport]) {
    rows.sort_by(|a, b| {
        (
            a.setup.input_minutes,
            &a.setup.lead_minutes,
            model_rank(&a.model),
            &a.model,
        )
            .cmp(&(
                b.setup.input_minutes,
                &b.setup.lead_minutes,
                model_rank(&b.model),
                &b.model,
            ))
    });
}

fn multi_setup(rows: &[MetricReport]) -> bool {
    rows.windows(2).any(|w| w[0].setup != w[1].setup)
}

fn row_label(r: &MetricReport, multi: bool) -> String {
    if multi {
        format!("{}@{}in/{}ahead", r.model, r.setup.input_minutes, r.setup.lead_label())
    } else {
        r.model.clone()
    }
}

/// CSV with columns `model,mse,precision,recall,accuracy,f1`. When rows
/// span several setups the model field carries `@<in>in/<lead>ahead`.
pub fn report_csv(rows: &[MetricReport]) -> String {
    let mut rows = rows.to_vec();
    sort_reports(&mut rows);
    let multi = multi_setup(&rows);
    let mut s = String::from("model,mse,precision,recall,accuracy,f1\n");
    for r in &rows {
        let _ = writeln!(
            s,
            "{},{:.8},{:.6},{:.6},{:.6},{:.6}",
            row_label(r, multi),
            r.mse,
            r.scores.precision,
            r.scores.recall,
            r.scores.accuracy,
            r.scores.f1
        );
    }
    s
}

/// Per-lead averages: `model,input_minutes,lead_minutes,mse,precision,recall,accuracy,f1`.
pub fn per_lead_csv(rows: &[MetricReport]) -> String {
    let mut rows = rows.to_vec();
    sort_reports(&mut rows);
    let mut s = String::from("model,input_minutes,lead_minutes,mse,precision,recall,accuracy,f1\n");
    for r in &rows {
        for l in &r.per_lead {
            let _ = writeln!(
                s,
                "{},{},{},{:.8},{:.6},{:.6},{:.6},{:.6}",
                r.model,
                r.setup.input_minutes,
                l.lead_minutes,
                l.mse,
                l.scores.precision,
                l.scores.recall,
                l.scores.accuracy,
                l.scores.f1
            );
        }
    }
    s
}

/// Aligned text table, one block per setup, `*` marking the best value of
/// each column within a setup (lowest MSE, highest otherwise). Ratios with
/// a zero denominator are suffixed `!`.
pub fn report_table(rows: &[MetricReport]) -> String {
    let mut rows = rows.to_vec();
    sort_reports(&mut rows);
    let mut out = String::new();
    let mut start = 0;
    while start < rows.len() {
        let mut end = start + 1;
        while end < rows.len() && rows[end].setup == rows[start].setup {
            end += 1;
        }
        let group = &rows[start..end];
        let _ = writeln!(
            out,
            "input {} min, lead {} min",
            group[0].setup.input_minutes,
            group[0].setup.lead_label()
        );
        let _ = writeln!(
            out,
            "{:<14} {:>13} {:>11} {:>11} {:>11} {:>11} {:>15}",
            "Model", "MSE", "Precision", "Recall", "Accuracy", "F1 score", "MSE (raw^2)"
        );
        let best_mse = group.iter().map(|r| r.mse).fold(f64::INFINITY, f64::min);
        let best = |f: fn(&Scores) -> f64| group.iter().map(|r| f(&r.scores)).fold(f64::NEG_INFINITY, f64::max);
        let (bp, br, ba, bf) = (
            best(|s| s.precision),
            best(|s| s.recall),
            best(|s| s.accuracy),
            best(|s| s.f1),
        );
        let mark = |v: f64, b: f64, zero: bool| {
            format!(
                "{v:.6}{}{}",
                if v == b { "*" } else { " " },
                if zero { "!" } else { " " }
            )
        };
        for r in group {
            let z = r.scores.zero_division;
            let _ = writeln!(
                out,
                "{:<14} {:>13} {:>11} {:>11} {:>11} {:>11} {:>15.4}",
                r.model,
                format!("{:.8}{}", r.mse, if r.mse == best_mse { "*" } else { " " }),
                mark(r.scores.precision, bp, z.precision),
                mark(r.scores.recall, br, z.recall),
                mark(r.scores.accuracy, ba, z.accuracy),
                mark(r.scores.f1, bf, z.f1),
                r.mse_physical
            );
        }
        out.push('\n');
        start = end;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rain(scale: f32) -> UnitMeta {
        UnitMeta::new(Unit::RawHundredthsMm, scale, 5)
    }

    #[test]
    fn rate_conversion_boundary() {
        let t = Tensor4::<f32>::from_vec([1, 1, 1, 3], vec![5.0, 4.0, 0.0]).unwrap();
        let b = binarize(&t, 0.5, &rain(1.0));
        assert_eq!(b.data(), &[1.0, 0.0, 0.0]);
        let n = Tensor4::<f32>::from_vec([1, 1, 1, 2], vec![5.0 / 800.0, 4.0 / 800.0]).unwrap();
        assert_eq!(binarize(&n, 0.5, &rain(800.0)).data(), &[1.0, 0.0]);
    }

    #[test]
    fn hand_counted_case() {
        let p = Tensor4::<f32>::full([1, 1, 2, 2], 1.0);
        let t = Tensor4::<f32>::from_vec([1, 1, 2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let c = confusion(&p, &t).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 2,
                tn: 0,
                fp: 2,
                fn_: 0
            }
        );
        let s = scores(&c);
        assert_eq!((s.precision, s.recall, s.accuracy), (0.5, 1.0, 0.5));
        assert_eq!(s.f1, 2.0 / 3.0);
    }

    #[test]
    fn zero_denominators_flagged() {
        let z = Tensor4::<f32>::zeros([1, 1, 2, 2]);
        let s = scores(&confusion(&z, &z).unwrap());
        assert_eq!((s.precision, s.recall, s.f1, s.accuracy), (0.0, 0.0, 0.0, 1.0));
        assert!(s.zero_division.precision && s.zero_division.recall && s.zero_division.f1);
        assert!(!s.zero_division.accuracy);
    }

    #[test]
    fn non_binary_rejected() {
        let p = Tensor4::<f32>::full([1, 1, 1, 1], 0.5);
        assert!(matches!(confusion(&p, &p), Err(Error::Usage(_))));
    }

    #[test]
    fn exact_sum_is_order_free() {
        let v = [1e16, 1.0, -1e16, 3.0, 1e-3, 7.5e15];
        let mut w = v;
        w.reverse();
        assert_eq!(exact_sum(v), exact_sum(w));
        assert_eq!(exact_sum([1e16, 1.0, -1e16]), 1.0);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
    }
}
