use rand_chacha::ChaCha8Rng;

use super::{BatchNorm2d, Conv2dLayer, Ctx, DscLayer, ParamId, ParamStore};
use crate::autograd::Var;
use crate::error::Result;
use crate::real::Real;

/// What runs alongside the DSC path.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ShortcutConfig {
    /// Plain double-DSC block.
    None,
    /// 1x1 convolution with bias, optionally followed by batch norm.
    Conv { norm: bool },
}

#[derive(Clone, Debug)]
struct Shortcut {
    conv: Conv2dLayer,
    bn: Option<BatchNorm2d>,
}

/// `relu(bn2(dsc2(relu(bn1(dsc1(x))))))`, plus a 1x1 shortcut of `x` when
/// configured. The sum is not re-activated.
///
/// Emits three named activations: `{name}.dsc_path`, `{name}.shortcut`
/// (only with a shortcut) and `{name}` itself.
#[derive(Clone, Debug)]
pub struct ResidualDscBlock {
    pub name: String,
    pub dsc1: DscLayer,
    pub bn1: BatchNorm2d,
    pub dsc2: DscLayer,
    pub bn2: BatchNorm2d,
    shortcut: Option<Shortcut>,
    pub cin: usize,
    pub cout: usize,
}

pub struct BlockOutput<T> {
    pub dsc_path: Var<T>,
    pub shortcut: Option<Var<T>>,
    pub out: Var<T>,
}

impl ResidualDscBlock {
    /// `mid` is the width between the two DSC stages (usually `cout`).
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        mid: usize,
        cout: usize,
        shortcut: ShortcutConfig,
    ) -> Result<Self> {
        let dsc1 = DscLayer::new(store, rng, &format!("{name}.dsc1"), cin, mid)?;
        let bn1 = BatchNorm2d::new(store, &format!("{name}.bn1"), mid)?;
        let dsc2 = DscLayer::new(store, rng, &format!("{name}.dsc2"), mid, cout)?;
        let bn2 = BatchNorm2d::new(store, &format!("{name}.bn2"), cout)?;
        let shortcut = match shortcut {
            ShortcutConfig::None => None,
            ShortcutConfig::Conv { norm } => {
                let conv = Conv2dLayer::pointwise(store, rng, &format!("{name}.shortcut"), cin, cout)?;
                let bn = if norm {
                    Some(BatchNorm2d::new(store, &format!("{name}.shortcut.bn"), cout)?)
                } else {
                    None
                };
                Some(Shortcut { conv, bn })
            }
        };
        Ok(ResidualDscBlock {
            name: name.to_string(),
            dsc1,
            bn1,
            dsc2,
            bn2,
            shortcut,
            cin,
            cout,
        })
    }

    pub fn has_shortcut(&self) -> bool {
        self.shortcut.is_some()
    }

    pub fn forward<T: Real>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        Ok(self.forward_parts(ctx, x)?.out)
    }

    pub fn forward_parts<T: Real>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<BlockOutput<T>> {
        let g = ctx.graph;
        let h = self.dsc1.forward(ctx, x)?;
        let h = g.relu(&self.bn1.forward(ctx, &h)?)?;
        let h = self.dsc2.forward(ctx, &h)?;
        let dsc_path = g.relu(&self.bn2.forward(ctx, &h)?)?;
        let Some(sc) = &self.shortcut else {
            let out = ctx.emit(&self.name, dsc_path.clone())?;
            return Ok(BlockOutput {
                dsc_path,
                shortcut: None,
                out,
            });
        };
        let dsc_path = ctx.emit(&format!("{}.dsc_path", self.name), dsc_path)?;
        let mut s = sc.conv.forward(ctx, x)?;
        if let Some(bn) = &sc.bn {
            s = bn.forward(ctx, &s)?;
        }
        let s = ctx.emit(&format!("{}.shortcut", self.name), s)?;
        let out = ctx.emit(&self.name, g.add(&dsc_path, &s)?)?;
        Ok(BlockOutput {
            dsc_path,
            shortcut: Some(s),
            out,
        })
    }

    /// Activation names this block emits, in suite order.
    pub fn activation_names(&self) -> Vec<String> {
        if self.shortcut.is_some() {
            vec![
                self.name.clone(),
                format!("{}.dsc_path", self.name),
                format!("{}.shortcut", self.name),
            ]
        } else {
            vec![self.name.clone()]
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.dsc1.params();
        p.extend(self.bn1.params());
        p.extend(self.dsc2.params());
        p.extend(self.bn2.params());
        if let Some(sc) = &self.shortcut {
            p.extend(sc.conv.params());
            if let Some(bn) = &sc.bn {
                p.extend(bn.params());
            }
        }
        p
    }

    pub fn shortcut_params(&self) -> Vec<ParamId> {
        match &self.shortcut {
            Some(sc) => {
                let mut p = sc.conv.params();
                if let Some(bn) = &sc.bn {
                    p.extend(bn.params());
                }
                p
            }
            None => Vec::new(),
        }
    }
}
