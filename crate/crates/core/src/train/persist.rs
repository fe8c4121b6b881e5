//! Training checkpoints: a `SARv1` model record followed by an `OPTv1`
//! section.
//!
//! ```text
//! "OPTv1"
//! u32 line count, then u32-length-prefixed "key=value" lines
//!     (train config, counters, RNG position; one "history=" line per epoch)
//! u32 tensor count, then (name, T4v1) pairs:
//!     adam.m.<param>, adam.v.<param>, best.<param or buffer>
//! ```
//!
//! Floats are written in shortest round-trip form, so reloading is exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{HistoryRow, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint};
use crate::real::Real;
use crate::tensor::io::{expect_magic, read_str, read_tensor, read_u32, write_str, write_tensor};

pub const OPT_MAGIC: &[u8; 5] = b"OPTv1";

impl<T: Real> Trainer<T> {
    /// Writes the current model, setup metadata and the full optimisation
    /// state.
    pub fn save<W: Write>(&self, w: &mut W, setup: &BTreeMap<String, String>) -> Result<()> {
        save_checkpoint(w, &self.model, setup)?;
        let c = &self.cfg;
        let s = &self.state;
        let mut lines = vec![
            format!("lr0={}", c.lr0),
            format!("plateau_patience={}", c.plateau_patience),
            format!("lr_factor={}", c.lr_factor),
            format!("early_stop_patience={}", c.early_stop_patience),
            format!("max_epochs={}", c.max_epochs),
            format!("batch_size={}", c.batch_size),
            format!("beta1={}", c.beta1),
            format!("beta2={}", c.beta2),
            format!("eps={}", c.eps),
            format!("seed={}", c.seed),
            format!("reset_lr_counter_on_drop={}", c.reset_lr_counter_on_drop),
            format!("epoch={}", s.epoch),
            format!("best_val={}", s.best_val),
            format!("best_epoch={}", s.best_epoch),
            format!("stopped={}", s.stopped),
            format!("sched.best={}", s.scheduler.best),
            format!("sched.since_lr={}", s.scheduler.since_improvement_lr),
            format!("sched.since_stop={}", s.scheduler.since_improvement_stop),
            format!("sched.drops={}", s.scheduler.drops),
            format!("adam.step={}", s.adam.step),
            format!("rng.seed={}", hex::encode(s.rng.get_seed())),
            format!("rng.stream={}", s.rng.get_stream()),
            format!("rng.word_pos={}", s.rng.get_word_pos()),
        ];
        for r in &s.history {
            lines.push(format!(
                "history={},{},{},{},{}",
                r.epoch, r.train_mse, r.val_mse, r.lr, r.seconds
            ));
        }
        w.write_all(OPT_MAGIC)?;
        w.write_all(&(lines.len() as u32).to_le_bytes())?;
        for l in &lines {
            write_str(w, l)?;
        }
        let names: Vec<&str> = self.model.store.params().iter().map(|p| p.name.as_str()).collect();
        let mut tensors = Vec::new();
        for (n, m) in names.iter().zip(&s.adam.m) {
            tensors.push((format!("adam.m.{n}"), m));
        }
        for (n, v) in names.iter().zip(&s.adam.v) {
            tensors.push((format!("adam.v.{n}"), v));
        }
        if let Some(best) = &s.best {
            for (n, t) in best {
                tensors.push((format!("best.{n}"), t));
            }
        }
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for (n, t) in tensors {
            write_str(w, &n)?;
            write_tensor(w, t)?;
        }
        Ok(())
    }

    /// Restores a trainer written by [`Trainer::save`].
    pub fn load<R: Read>(r: &mut R) -> Result<(Self, BTreeMap<String, String>)> {
        let (model, setup) = load_checkpoint::<T, _>(r)?;
        expect_magic(r, OPT_MAGIC)?;
        let n = read_u32(r)?;
        let mut kv = BTreeMap::new();
        let mut history = Vec::new();
        for _ in 0..n {
            let line = read_str(r)?;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("optimizer line {line:?} lacks '='")))?;
            if k == "history" {
                history.push(parse_row(v)?);
            } else {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        let cfg = TrainConfig {
            lr0: get(&kv, "lr0")?,
            plateau_patience: get(&kv, "plateau_patience")?,
            lr_factor: get(&kv, "lr_factor")?,
            early_stop_patience: get(&kv, "early_stop_patience")?,
            max_epochs: get(&kv, "max_epochs")?,
            batch_size: get(&kv, "batch_size")?,
            beta1: get(&kv, "beta1")?,
            beta2: get(&kv, "beta2")?,
            eps: get(&kv, "eps")?,
            seed: get(&kv, "seed")?,
            reset_lr_counter_on_drop: get(&kv, "reset_lr_counter_on_drop")?,
        };
        let mut t = Trainer::new(model, cfg)?;
        let s = &mut t.state;
        s.epoch = get(&kv, "epoch")?;
        s.best_val = get(&kv, "best_val")?;
        s.best_epoch = get(&kv, "best_epoch")?;
        s.stopped = get(&kv, "stopped")?;
        s.scheduler.best = get(&kv, "sched.best")?;
        s.scheduler.since_improvement_lr = get(&kv, "sched.since_lr")?;
        s.scheduler.since_improvement_stop = get(&kv, "sched.since_stop")?;
        s.scheduler.drops = get(&kv, "sched.drops")?;
        s.adam.step = get(&kv, "adam.step")?;
        let seed: [u8; 32] = hex::decode(get::<String>(&kv, "rng.seed")?)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::Format("bad rng.seed".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(get(&kv, "rng.stream")?);
        rng.set_word_pos(get(&kv, "rng.word_pos")?);
        s.rng = rng;
        s.history = history;

        let index: BTreeMap<String, usize> = t
            .model
            .store
            .params()
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        let count = read_u32(r)?;
        let mut best = Vec::new();
        for _ in 0..count {
            let name = read_str(r)?;
            let tensor = read_tensor::<T, _>(r)?;
            let slot = if let Some(p) = name.strip_prefix("adam.m.") {
                index.get(p).map(|&i| &mut t.state.adam.m[i])
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                index.get(p).map(|&i| &mut t.state.adam.v[i])
            } else if let Some(p) = name.strip_prefix("best.") {
                best.push((p.to_string(), tensor));
                continue;
            } else {
                None
            };
            let slot = slot.ok_or_else(|| Error::Format(format!("unexpected optimizer tensor {name}")))?;
            if slot.shape() != tensor.shape() {
                return Err(Error::Format(format!("optimizer tensor {name} has the wrong shape")));
            }
            *slot = tensor;
        }
        t.state.best = (!best.is_empty()).then_some(best);
        Ok((t, setup))
    }
}

fn get<V: std::str::FromStr>(kv: &BTreeMap<String, String>, k: &str) -> Result<V> {
    kv.get(k)
        .ok_or_else(|| Error::Format(format!("optimizer section lacks {k}")))?
        .parse()
        .map_err(|_| Error::Format(format!("optimizer value {k} does not parse")))
}

fn parse_row(v: &str) -> Result<HistoryRow> {
    let f: Vec<&str> = v.split(',').collect();
    let bad = || Error::Format(format!("bad history row {v:?}"));
    if f.len() != 5 {
        return Err(bad());
    }
    Ok(HistoryRow {
        epoch: f[0].parse().map_err(|_| bad())?,
        train_mse: f[1].parse().map_err(|_| bad())?,
        val_mse: f[2].parse().map_err(|_| bad())?,
        lr: f[3].parse().map_err(|_| bad())?,
        seconds: f[4].parse().map_err(|_| bad())?,
    })
}
