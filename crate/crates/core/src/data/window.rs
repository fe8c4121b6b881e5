use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::ops::Range;

use crate::error::{Error, Result};

/// Which frames must be selected for a window to be emitted.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub enum GateMode {
    /// Every target frame.
    #[default]
    Targets,
    /// Every input and target frame.
    Both,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub input_frames: usize,
    /// Frame offsets of the targets relative to the last input frame.
    pub target_offsets: Vec<usize>,
    pub stride: usize,
    pub gate: GateMode,
}

impl WindowSpec {
    pub fn new(input_frames: usize, target_offsets: Vec<usize>) -> Self {
        WindowSpec {
            input_frames,
            target_offsets,
            stride: 1,
            gate: GateMode::Targets,
        }
    }

    /// One target `lead_minutes` after the last input.
    pub fn precipitation(input_frames: usize, lead_minutes: u32, interval_minutes: u32) -> Result<Self> {
        if interval_minutes == 0 || lead_minutes == 0 || lead_minutes % interval_minutes != 0 {
            return Err(Error::Config(format!(
                "lead {lead_minutes} min is not a positive multiple of the {interval_minutes} min interval"
            )));
        }
        Ok(Self::new(
            input_frames,
            vec![(lead_minutes / interval_minutes) as usize],
        ))
    }

    /// Four inputs, the next six frames as targets.
    pub fn cloud() -> Self {
        Self::new(4, (1..=6).collect())
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_gate(mut self, gate: GateMode) -> Self {
        self.gate = gate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_frames == 0 {
            return Err(Error::Config("input_frames must be >= 1".into()));
        }
        if self.target_offsets.is_empty() || self.target_offsets.contains(&0) {
            return Err(Error::Config("target offsets must be non-empty and positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        Ok(())
    }

    pub fn max_offset(&self) -> usize {
        self.target_offsets.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub anchor: usize,
    pub inputs: Range<usize>,
    pub targets: Vec<usize>,
}

/// Windows over a series of `n_frames`: anchor `i` reads inputs
/// `i - input_frames + 1 ..= i` and targets `i + offset`. Anchors start at
/// `input_frames - 1` and advance by `stride`. An empty result is an
/// [`Error::EmptyDataset`].
pub fn make_windows(n_frames: usize, spec: &WindowSpec, selected: &BTreeSet<usize>) -> Result<Vec<Window>> {
    spec.validate()?;
    let first = spec.input_frames - 1;
    let reach = spec.max_offset();
    let mut out = Vec::new();
    let mut i = first;
    while i + reach < n_frames {
        let targets: Vec<usize> = spec.target_offsets.iter().map(|o| i + o).collect();
        let inputs = i + 1 - spec.input_frames..i + 1;
        let ok = targets.iter().all(|t| selected.contains(t))
            && (spec.gate == GateMode::Targets || inputs.clone().all(|t| selected.contains(&t)));
        if ok {
            out.push(Window {
                anchor: i,
                inputs,
                targets,
            });
        }
        i += spec.stride;
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no window of {} inputs with offsets {:?} fits {n_frames} frames with the given selection",
            spec.input_frames, spec.target_offsets
        )));
    }
    Ok(out)
}

/// Audit CSV: `anchor,input_first,input_last,targets` with targets joined
/// by `;`.
pub fn windows_csv(windows: &[Window]) -> String {
    let mut s = String::from("anchor,input_first,input_last,targets\n");
    for w in windows {
        let t: Vec<String> = w.targets.iter().map(usize::to_string).collect();
        let _ = writeln!(
            s,
            "{},{},{},{}",
            w.anchor,
            w.inputs.start,
            w.inputs.end - 1,
            t.join(";")
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_frames_six_in_offset_six() {
        let all: BTreeSet<usize> = (0..30).collect();
        let w = make_windows(30, &WindowSpec::new(6, vec![6]), &all).unwrap();
        assert_eq!(w.len(), 19);
        assert_eq!(w[0].inputs, 0..6);
        assert_eq!(w[0].targets, vec![11]);
        assert_eq!(w[18].targets, vec![29]);
    }

    #[test]
    fn nothing_selected_is_empty_dataset() {
        let e = make_windows(30, &WindowSpec::new(6, vec![6]), &BTreeSet::new()).unwrap_err();
        assert!(matches!(e, Error::EmptyDataset(_)));
    }

    #[test]
    fn gate_both_needs_inputs() {
        let sel: BTreeSet<usize> = (3..20).collect();
        let spec = WindowSpec::new(2, vec![1]);
        let t = make_windows(20, &spec, &sel).unwrap();
        let b = make_windows(20, &spec.clone().with_gate(GateMode::Both), &sel).unwrap();
        assert_eq!(t[0].anchor, 2);
        assert_eq!(b[0].anchor, 4);
    }

    #[test]
    fn precipitation_leads() {
        let s = WindowSpec::precipitation(12, 90, 5).unwrap();
        assert_eq!(s.target_offsets, vec![18]);
        assert!(WindowSpec::precipitation(12, 7, 5).is_err());
    }

    #[test]
    fn csv_layout() {
        let all: BTreeSet<usize> = (0..8).collect();
        let w = make_windows(8, &WindowSpec::new(2, vec![1, 2]).with_stride(3), &all).unwrap();
        assert_eq!(
            windows_csv(&w),
            "anchor,input_first,input_last,targets\n1,0,1,2;3\n4,3,4,5;6\n"
        );
    }
}
