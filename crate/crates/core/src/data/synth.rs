//! Gaussian blobs advected by a constant wind on a periodic domain.
//!
//! Frame `t` is `Σ_b A_b · growth^t · exp(-d² / 2σ_b²)`, with `d` the
//! wrap-around distance to the blob centre `c_b + t · wind`, truncated to
//! zero beyond `3σ_b`. Centres, widths and amplitudes are drawn per blob
//! from a ChaCha8 stream seeded by `seed`. Values are raw hundredths of a
//! millimetre per 5-minute frame, computed in f64 and stored as f32.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FrameSeries, Unit};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const MIN_SIZE: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub n_blobs: usize,
    /// Pixels per frame along x and y.
    pub wind: (f64, f64),
    /// Multiplicative intensity change per frame.
    pub growth: f64,
    pub amplitude: (f64, f64),
    pub sigma: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_frames: 200,
            height: 96,
            width: 96,
            n_blobs: 6,
            wind: (1.0, 0.0),
            growth: 1.0,
            amplitude: (40.0, 120.0),
            sigma: (3.0, 8.0),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_SIZE || self.width < MIN_SIZE {
            return Err(Error::Config(format!(
                "frame size {}x{} is below the minimum of {MIN_SIZE}",
                self.height, self.width
            )));
        }
        if self.n_frames == 0 {
            return Err(Error::Config("n_frames must be >= 1".into()));
        }
        if !(self.growth > 0.0 && self.growth.is_finite()) {
            return Err(Error::Config(format!("growth {} must be positive", self.growth)));
        }
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if !range_ok(self.amplitude) || !range_ok(self.sigma) {
            return Err(Error::Config("amplitude and sigma ranges must be positive".into()));
        }
        if !(self.wind.0.is_finite() && self.wind.1.is_finite()) {
            return Err(Error::Config("wind must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Blob {
    cx: f64,
    cy: f64,
    sigma: f64,
    amp: f64,
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Shortest signed offset on a ring of circumference `len`.
fn wrap(d: f64, len: f64) -> f64 {
    d - len * (d / len).round()
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<FrameSeries> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (h, w) = (cfg.height, cfg.width);
    let blobs: Vec<Blob> = (0..cfg.n_blobs)
        .map(|_| Blob {
            cx: rng.gen_range(0.0..w as f64),
            cy: rng.gen_range(0.0..h as f64),
            sigma: draw(&mut rng, cfg.sigma),
            amp: draw(&mut rng, cfg.amplitude),
        })
        .collect();
    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut acc = vec![0.0f64; h * w];
    for t in 0..cfg.n_frames {
        acc.fill(0.0);
        let gain = cfg.growth.powi(t as i32);
        for b in &blobs {
            let cx = b.cx + cfg.wind.0 * t as f64;
            let cy = b.cy + cfg.wind.1 * t as f64;
            let cut = 3.0 * b.sigma;
            let inv = 1.0 / (2.0 * b.sigma * b.sigma);
            for y in 0..h {
                let dy = wrap(y as f64 - cy, h as f64);
                if dy.abs() > cut {
                    continue;
                }
                for x in 0..w {
                    let dx = wrap(x as f64 - cx, w as f64);
                    let d2 = dx * dx + dy * dy;
                    if d2 <= cut * cut {
                        acc[y * w + x] += b.amp * gain * (-d2 * inv).exp();
                    }
                }
            }
        }
        let data: Vec<f32> = acc.iter().map(|&v| v as f32).collect();
        frames.push(Tensor4::from_vec([1, 1, h, w], data)?);
    }
    FrameSeries::new(frames, 5, Unit::RawHundredthsMm)
}
