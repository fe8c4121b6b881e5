//! The full encoder/decoder network and its SmaAt-style ablation.
//!
//! Level layout (`b` = base channels):
//!
//! ```text
//! sar    enc: b  2b  4b  8b  16b      dec: reduce -> up -> [skip; up] -> block
//!        pool input = CBAM output     dec block outputs 8b 4b 2b b
//! smaat  enc: b  2b  4b  8b  8b       dec: up -> [skip; up] -> block
//!        pool input = block output    dec block outputs 4b 2b b b
//! ```

mod checkpoint;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Cbam, Conv2dLayer, Ctx, Mode, ParamId, ParamStore, Probe, ResidualDscBlock, ShortcutConfig};
use crate::real::Real;
use crate::tensor::{Shape4, Tensor4};

/// Number of poolings. The topology is fixed.
pub const DEPTH: usize = 4;
const LEVELS: usize = DEPTH + 1;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Sar,
    Smaat,
}

impl Variant {
    /// Row label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Sar => "sar-unet",
            Variant::Smaat => "smaat-config",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Sar => "sar",
            Variant::Smaat => "smaat",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sar" => Ok(Variant::Sar),
            "smaat" => Ok(Variant::Smaat),
            _ => Err(Error::Config(format!("unknown variant {s:?}, expected sar or smaat"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub variant: Variant,
    pub cbam_reduction: usize,
    pub spatial_kernel: usize,
    /// Batch norm after the shortcut 1x1 conv.
    pub shortcut_norm: bool,
}

impl ModelConfig {
    pub fn new(variant: Variant, in_channels: usize, out_channels: usize, base_channels: usize) -> Self {
        ModelConfig {
            in_channels,
            out_channels,
            base_channels,
            depth: DEPTH,
            variant,
            cbam_reduction: 16,
            spatial_kernel: 7,
            shortcut_norm: false,
        }
    }

    /// Paper-scale precipitation network.
    pub fn precipitation(variant: Variant, in_frames: usize) -> Self {
        Self::new(variant, in_frames, 1, 64)
    }

    /// Paper-scale cloud-cover network: four frames in, six out.
    pub fn cloud(variant: Variant) -> Self {
        Self::new(variant, 4, 6, 64)
    }

    /// Test-scale network: base 4 with CBAM reduction 2.
    pub fn tiny(variant: Variant, in_channels: usize, out_channels: usize) -> Self {
        ModelConfig {
            cbam_reduction: 2,
            ..Self::new(variant, in_channels, out_channels, 4)
        }
    }

    pub fn with_reduction(mut self, r: usize) -> Self {
        self.cbam_reduction = r;
        self
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.encoder_channels()[DEPTH]
    }

    /// Output channels of each encoder block.
    pub fn encoder_channels(&self) -> [usize; LEVELS] {
        let b = self.base_channels;
        match self.variant {
            Variant::Sar => [b, 2 * b, 4 * b, 8 * b, 16 * b],
            Variant::Smaat => [b, 2 * b, 4 * b, 8 * b, 8 * b],
        }
    }

    /// `(cin, mid, cout)` of decoder block `k`, for `k` in `0..4`.
    pub fn decoder_block(&self, k: usize) -> (usize, usize, usize) {
        let enc = self.encoder_channels();
        match self.variant {
            Variant::Sar => (2 * enc[k], enc[k], enc[k]),
            Variant::Smaat => {
                let cin = 2 * enc[k];
                let cout = if k == 0 { enc[0] } else { enc[k - 1] };
                (cin, cin / 2, cout)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rule = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        rule(self.depth == DEPTH, "depth must be 4 (five levels)")?;
        rule(self.in_channels >= 1, "in_channels must be >= 1")?;
        rule(self.out_channels >= 1, "out_channels must be >= 1")?;
        rule(self.base_channels >= 1, "base_channels must be >= 1")?;
        rule(self.spatial_kernel % 2 == 1, "spatial_kernel must be odd")?;
        rule(self.cbam_reduction >= 1, "cbam_reduction must be >= 1")?;
        if let Some(c) = self.encoder_channels().iter().find(|&&c| c % self.cbam_reduction != 0) {
            return Err(Error::Config(format!(
                "cbam_reduction {} must divide every encoder width (fails at {c})",
                self.cbam_reduction
            )));
        }
        Ok(())
    }

    /// `(key, value)` pairs covering every field, for checkpoints.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("in_channels".into(), self.in_channels.to_string()),
            ("out_channels".into(), self.out_channels.to_string()),
            ("base_channels".into(), self.base_channels.to_string()),
            ("depth".into(), self.depth.to_string()),
            ("variant".into(), self.variant.to_string()),
            ("cbam_reduction".into(), self.cbam_reduction.to_string()),
            ("spatial_kernel".into(), self.spatial_kernel.to_string()),
            ("shortcut_norm".into(), self.shortcut_norm.to_string()),
            ("bottleneck_channels".into(), self.bottleneck_channels().to_string()),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        fn get<'a>(p: &'a BTreeMap<String, String>, k: &str) -> Result<&'a str> {
            p.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("checkpoint config lacks {k}")))
        }
        fn num(p: &BTreeMap<String, String>, k: &str) -> Result<usize> {
            get(p, k)?
                .parse()
                .map_err(|_| Error::Format(format!("checkpoint config {k} is not a count")))
        }
        let cfg = ModelConfig {
            in_channels: num(pairs, "in_channels")?,
            out_channels: num(pairs, "out_channels")?,
            base_channels: num(pairs, "base_channels")?,
            depth: num(pairs, "depth")?,
            variant: get(pairs, "variant")?.parse()?,
            cbam_reduction: num(pairs, "cbam_reduction")?,
            spatial_kernel: num(pairs, "spatial_kernel")?,
            shortcut_norm: get(pairs, "shortcut_norm")?
                .parse()
                .map_err(|_| Error::Format("checkpoint config shortcut_norm is not a bool".into()))?,
        };
        if num(pairs, "bottleneck_channels")? != cfg.bottleneck_channels() {
            return Err(Error::Format(
                "checkpoint bottleneck_channels disagrees with variant".into(),
            ));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
struct EncLevel {
    block: ResidualDscBlock,
    cbam: Cbam,
}

#[derive(Clone, Debug)]
struct DecLevel {
    reduce: Option<Conv2dLayer>,
    block: ResidualDscBlock,
}

/// Retained activations (and gradients, when a backward pass ran).
#[derive(Clone, Debug, Default)]
pub struct ActivationTrace<T> {
    pub values: BTreeMap<String, Tensor4<T>>,
    pub grads: BTreeMap<String, Tensor4<T>>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    enc: Vec<EncLevel>,
    /// Indexed by decoder depth; executed 3, 2, 1, 0.
    dec: Vec<DecLevel>,
    out: Conv2dLayer,
    pub store: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Builds a network with seeded initialisation.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let shortcut = match config.variant {
            Variant::Sar => ShortcutConfig::Conv {
                norm: config.shortcut_norm,
            },
            Variant::Smaat => ShortcutConfig::None,
        };
        let widths = config.encoder_channels();
        let mut enc = Vec::with_capacity(LEVELS);
        let mut cin = config.in_channels;
        for (i, &c) in widths.iter().enumerate() {
            let block = ResidualDscBlock::new(&mut store, &mut rng, &format!("enc{i}.block"), cin, c, c, shortcut)?;
            let cbam = Cbam::new(
                &mut store,
                &mut rng,
                &format!("enc{i}.cbam"),
                c,
                config.cbam_reduction,
                config.spatial_kernel,
            )?;
            enc.push(EncLevel { block, cbam });
            cin = c;
        }
        let mut dec: Vec<Option<DecLevel>> = vec![None; DEPTH];
        let mut below = widths[DEPTH];
        for k in (0..DEPTH).rev() {
            let reduce = match config.variant {
                Variant::Sar => {
                    let r = Conv2dLayer::pointwise(&mut store, &mut rng, &format!("dec{k}.reduce"), below, below / 2)?;
                    below /= 2;
                    Some(r)
                }
                Variant::Smaat => None,
            };
            let (bin, mid, bout) = config.decoder_block(k);
            if bin != widths[k] + below {
                return Err(Error::Config(format!(
                    "dec{k}: concat width {} + {below} does not match block input {bin}",
                    widths[k]
                )));
            }
            let block =
                ResidualDscBlock::new(&mut store, &mut rng, &format!("dec{k}.block"), bin, mid, bout, shortcut)?;
            dec[k] = Some(DecLevel { reduce, block });
            below = bout;
        }
        let out = Conv2dLayer::pointwise(&mut store, &mut rng, "out", below, config.out_channels)?;
        Ok(Model {
            config,
            enc,
            dec: dec.into_iter().map(|d| d.expect("every decoder level built")).collect(),
            out,
            store,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.store.num_trainable()
    }

    /// Trainable scalars per component, keyed by layer name
    /// (`enc{i}.block`, `enc{i}.block.shortcut`, `enc{i}.cbam`,
    /// `dec{k}.reduce`, `dec{k}.block`, `dec{k}.block.shortcut`, `out`).
    /// Block totals include their shortcut.
    pub fn component_counts(&self) -> BTreeMap<String, usize> {
        let s = &self.store;
        let mut m = BTreeMap::new();
        for (i, e) in self.enc.iter().enumerate() {
            m.insert(format!("enc{i}.block"), s.count(&e.block.params()));
            m.insert(format!("enc{i}.block.shortcut"), s.count(&e.block.shortcut_params()));
            m.insert(format!("enc{i}.cbam"), s.count(&e.cbam.params()));
        }
        for (k, d) in self.dec.iter().enumerate() {
            if let Some(r) = &d.reduce {
                m.insert(format!("dec{k}.reduce"), s.count(&r.params()));
            }
            m.insert(format!("dec{k}.block"), s.count(&d.block.params()));
            m.insert(format!("dec{k}.block.shortcut"), s.count(&d.block.shortcut_params()));
        }
        m.insert("out".into(), s.count(&self.out.params()));
        m
    }

    /// Every name `forward` can trace, in network order.
    pub fn trace_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (i, e) in self.enc.iter().enumerate() {
            v.extend(e.block.activation_names());
            v.push(format!("enc{i}.cbam"));
            if i < DEPTH {
                v.push(format!("enc{i}.pool_input"));
            }
        }
        for k in (0..DEPTH).rev() {
            let d = &self.dec[k];
            if d.reduce.is_some() {
                v.push(format!("dec{k}.reduce"));
            }
            v.push(format!("dec{k}.skip"));
            v.extend(d.block.activation_names());
        }
        v.push("out".into());
        v
    }

    /// Names the explainer accepts, in suite order: per encoder depth
    /// 0..4 (block, dsc_path, shortcut, cbam), then per decoder depth 3..0
    /// (block, dsc_path, shortcut). Sub-paths exist only with shortcuts.
    pub fn explain_targets(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (i, e) in self.enc.iter().enumerate() {
            v.extend(e.block.activation_names());
            v.push(format!("enc{i}.cbam"));
        }
        for k in (0..DEPTH).rev() {
            v.extend(self.dec[k].block.activation_names());
        }
        v
    }

    pub fn check_input(&self, x: Shape4) -> Result<()> {
        let m = 1 << DEPTH;
        if x.c != self.config.in_channels {
            return Err(Error::dim(
                "forward",
                format!("input has {} channels, model expects {}", x.c, self.config.in_channels),
            ));
        }
        if x.h % m != 0 || x.w % m != 0 {
            return Err(Error::dim(
                "forward",
                format!("input {}x{} is not divisible by {m}", x.h, x.w),
            ));
        }
        Ok(())
    }

    fn check_probe(&self, probe: &Probe<T>) -> Result<()> {
        let valid = self.trace_names();
        for name in probe.requested() {
            if !valid.iter().any(|v| v == name) {
                return Err(Error::Usage(format!(
                    "unknown layer {name:?}; valid names: {}",
                    valid.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Runs the network on the context's graph.
    pub fn forward(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        self.check_input(x.shape())?;
        if let Some(p) = ctx.probe() {
            self.check_probe(p)?;
        }
        let g = ctx.graph;
        let mut skips = Vec::with_capacity(DEPTH);
        let mut h = x.clone();
        for (i, e) in self.enc.iter().enumerate() {
            let b = e.block.forward(ctx, &h)?;
            let c = e.cbam.forward(ctx, &b)?;
            if i == DEPTH {
                h = c;
                break;
            }
            let pool_in = match self.config.variant {
                Variant::Sar => c.clone(),
                Variant::Smaat => b,
            };
            let pool_in = ctx.emit(&format!("enc{i}.pool_input"), pool_in)?;
            h = g.max_pool2(&pool_in)?;
            skips.push(c);
        }
        for k in (0..DEPTH).rev() {
            let d = &self.dec[k];
            if let Some(r) = &d.reduce {
                h = ctx.emit(&format!("dec{k}.reduce"), r.forward(ctx, &h)?)?;
            }
            let up = g.upsample_bilinear2(&h)?;
            let skip = ctx.emit(&format!("dec{k}.skip"), skips[k].clone())?;
            h = d.block.forward(ctx, &g.concat_channels(&skip, &up)?)?;
        }
        ctx.emit("out", self.out.forward(ctx, &h)?)
    }

    /// Eval-mode inference without recording a tape.
    pub fn predict(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = Graph::no_grad();
        let ctx = Ctx::new(&g, &self.store, Mode::Eval);
        let y = self.forward(&ctx, &g.constant(x.clone()))?;
        Ok(y.to_tensor())
    }

    /// Eval-mode forward that returns the requested activations.
    pub fn forward_traced<S: AsRef<str>>(
        &self,
        x: &Tensor4<T>,
        names: &[S],
    ) -> Result<(Tensor4<T>, ActivationTrace<T>)> {
        let probe = Probe::new(names);
        let g = Graph::no_grad();
        let y = {
            let ctx = Ctx::new(&g, &self.store, Mode::Eval).with_probe(&probe);
            self.forward(&ctx, &g.constant(x.clone()))?
        };
        let values = probe
            .into_captured()
            .into_iter()
            .map(|(k, v)| (k, v.to_tensor()))
            .collect();
        Ok((
            y.to_tensor(),
            ActivationTrace {
                values,
                grads: BTreeMap::new(),
            },
        ))
    }

    /// One forward/backward pass in the given mode, accumulating parameter
    /// gradients into the store. Train mode also folds batch statistics
    /// into the running buffers. Returns the loss.
    pub fn loss_and_grads(&mut self, x: &Tensor4<T>, target: &Tensor4<T>, mode: Mode) -> Result<f64> {
        let g = Graph::new();
        let (loss, leaves, updates) = {
            let ctx = Ctx::new(&g, &self.store, mode);
            let y = self.forward(&ctx, &g.constant(x.clone()))?;
            let loss = g.mse(&y, &g.constant(target.clone()))?;
            g.backward(&loss)?;
            (
                loss.value().data()[0].as_f64(),
                ctx.param_leaves(),
                ctx.take_bn_updates(),
            )
        };
        self.store.accumulate_grads(&g, &leaves);
        self.store.apply_bn_updates(&updates);
        Ok(loss)
    }

    /// Mean squared error in eval mode, no tape.
    pub fn eval_mse(&self, x: &Tensor4<T>, target: &Tensor4<T>) -> Result<f64> {
        let y = self.predict(x)?;
        mse(&y, target)
    }

    /// The same network in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            enc: self.enc.clone(),
            dec: self.dec.clone(),
            out: self.out.clone(),
            store: self.store.cast(),
        }
    }

    /// Parameter ids in registration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }
}

/// Plain mean of squared differences, accumulated in f64.
pub fn mse<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim("mse", format!("{} vs {}", a.shape(), b.shape())));
    }
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &t)| {
            let d = p.as_f64() - t.as_f64();
            d * d
        })
        .sum();
    Ok(s / a.numel() as f64)
}

/// Shapes of every traced activation for a `[1, in, h, w]` input, derived
/// without running the network.
pub fn layer_shapes(config: &ModelConfig, h: usize, w: usize) -> Result<Vec<(String, Shape4)>> {
    config.validate()?;
    let m = 1 << DEPTH;
    if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
        return Err(Error::dim("layer_shapes", format!("{h}x{w} is not divisible by {m}")));
    }
    let enc = config.encoder_channels();
    let has_sc = config.variant == Variant::Sar;
    let mut v = Vec::new();
    let block = |v: &mut Vec<(String, Shape4)>, name: String, s: Shape4| {
        if has_sc {
            v.push((format!("{name}.dsc_path"), s));
            v.push((format!("{name}.shortcut"), s));
        }
        v.push((name, s));
    };
    for (i, &c) in enc.iter().enumerate() {
        let s = Shape4::new(1, c, h >> i, w >> i);
        block(&mut v, format!("enc{i}.block"), s);
        v.push((format!("enc{i}.cbam"), s));
    }
    let mut below = enc[DEPTH];
    for k in (0..DEPTH).rev() {
        let (hk, wk) = (h >> k, w >> k);
        if has_sc {
            below /= 2;
            v.push((format!("dec{k}.reduce"), Shape4::new(1, below, hk / 2, wk / 2)));
        }
        v.push((format!("dec{k}.skip"), Shape4::new(1, enc[k], hk, wk)));
        let (_, _, out) = config.decoder_block(k);
        block(&mut v, format!("dec{k}.block"), Shape4::new(1, out, hk, wk));
        below = out;
    }
    v.push(("out".into(), Shape4::new(1, config.out_channels, h, w)));
    Ok(v)
}

/// The last input channel repeated `out_ch` times.
pub fn persistence_forward<T: Real>(x: &Tensor4<T>, out_ch: usize) -> Tensor4<T> {
    let s = x.shape();
    let mut y = Tensor4::zeros(s.with_c(out_ch));
    for n in 0..s.n {
        let last = x.plane(n, s.c - 1);
        for k in 0..out_ch {
            y.plane_mut(n, k).copy_from_slice(last);
        }
    }
    y
}

/// Trainable parameters of a classic UNet with the same five-level
/// widths: two 3x3 convs (no bias) each followed by batch norm per block,
/// 2x2 transposed convs (with bias) for upsampling, and a 1x1 output conv.
pub fn regular_unet_param_count(in_channels: usize, out_channels: usize, base: usize) -> usize {
    let double = |cin: usize, cout: usize| 9 * cin * cout + 2 * cout + 9 * cout * cout + 2 * cout;
    let widths: Vec<usize> = (0..LEVELS).map(|i| base << i).collect();
    let mut total = double(in_channels, widths[0]);
    for i in 0..DEPTH {
        total += double(widths[i], widths[i + 1]);
    }
    for i in (0..DEPTH).rev() {
        let c = widths[i + 1];
        total += c * (c / 2) * 4 + c / 2;
        total += double(c, c / 2);
    }
    total + base * out_channels + out_channels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_shapes_paper_scale() {
        let cfg = ModelConfig::precipitation(Variant::Sar, 12);
        let shapes: BTreeMap<_, _> = layer_shapes(&cfg, 288, 288).unwrap().into_iter().collect();
        assert_eq!(shapes["enc4.cbam"], Shape4::new(1, 1024, 18, 18));
        assert_eq!(shapes["dec3.reduce"], Shape4::new(1, 512, 18, 18));
        assert_eq!(shapes["dec0.block"], Shape4::new(1, 64, 288, 288));
        assert_eq!(shapes["out"], Shape4::new(1, 1, 288, 288));
    }

    #[test]
    fn layer_shapes_match_trace_names() {
        for variant in [Variant::Sar, Variant::Smaat] {
            let cfg = ModelConfig::tiny(variant, 2, 1);
            let m = Model::<f32>::build(cfg.clone(), 0).unwrap();
            let (_, trace) = m
                .forward_traced(&Tensor4::zeros([1, 2, 16, 16]), &m.trace_names())
                .unwrap();
            for (name, shape) in layer_shapes(&cfg, 16, 16).unwrap() {
                assert_eq!(trace.values[&name].shape(), shape, "{name}");
            }
        }
    }

    #[test]
    fn unknown_trace_name_is_usage_error() {
        let m = Model::<f32>::build(ModelConfig::tiny(Variant::Sar, 2, 1), 0).unwrap();
        let e = m
            .forward_traced(&Tensor4::zeros([1, 2, 16, 16]), &["enc9.block"])
            .unwrap_err();
        assert!(matches!(e, Error::Usage(ref s) if s.contains("enc0.block")));
    }

    #[test]
    fn persistence_replicates_last_channel() {
        let x = Tensor4::<f32>::from_fn([2, 4, 3, 3], |n, c, y, x| (n * 100 + c * 10 + y * 3 + x) as f32);
        let y = persistence_forward(&x, 6);
        for n in 0..2 {
            for k in 0..6 {
                assert_eq!(y.plane(n, k), x.plane(n, 3));
            }
        }
    }

    #[test]
    fn config_pairs_round_trip() {
        let cfg = ModelConfig::tiny(Variant::Smaat, 3, 2);
        let pairs: BTreeMap<_, _> = cfg.to_pairs().into_iter().collect();
        assert_eq!(ModelConfig::from_pairs(&pairs).unwrap(), cfg);
    }

    #[test]
    fn bad_reduction_is_config_error() {
        let cfg = ModelConfig::new(Variant::Sar, 2, 1, 4);
        assert!(matches!(Model::<f32>::build(cfg, 0), Err(Error::Config(_))));
    }
}
