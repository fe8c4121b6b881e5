use rand_chacha::ChaCha8Rng;

use super::{Conv2dLayer, Ctx, ParamId, ParamStore};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::ops::{PoolAxis, PoolKind};
use crate::tensor::ConvGeom;

/// Channel attention followed by spatial attention.
///
/// Channel: a shared two-layer perceptron (1x1 convs with bias, ReLU
/// between) over the spatial-avg and spatial-max descriptors, summed, then
/// sigmoid. Spatial: a `k x k` conv with bias over `[channel-avg;
/// channel-max]`, then sigmoid.
#[derive(Clone, Debug)]
pub struct Cbam {
    pub name: String,
    pub mlp1: Conv2dLayer,
    pub mlp2: Conv2dLayer,
    pub spatial: Conv2dLayer,
    pub channels: usize,
    pub reduction: usize,
}

impl Cbam {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        reduction: usize,
        spatial_kernel: usize,
    ) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::Config(format!(
                "{name}: CBAM reduction ratio {reduction} must divide channel count {channels}"
            )));
        }
        if spatial_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "{name}: spatial kernel {spatial_kernel} must be odd"
            )));
        }
        let hidden = channels / reduction;
        let mlp1 = Conv2dLayer::pointwise(store, rng, &format!("{name}.mlp1"), channels, hidden)?;
        let mlp2 = Conv2dLayer::pointwise(store, rng, &format!("{name}.mlp2"), hidden, channels)?;
        let spatial = Conv2dLayer::new(
            store,
            rng,
            &format!("{name}.spatial"),
            2,
            1,
            spatial_kernel,
            ConvGeom::padded(spatial_kernel / 2),
            true,
        )?;
        Ok(Cbam {
            name: name.to_string(),
            mlp1,
            mlp2,
            spatial,
            channels,
            reduction,
        })
    }

    fn mlp<T: Real>(&self, ctx: &Ctx<'_, T>, d: &Var<T>) -> Result<Var<T>> {
        let h = ctx.graph.relu(&self.mlp1.forward(ctx, d)?)?;
        self.mlp2.forward(ctx, &h)
    }

    /// Channel gate `[n, c, 1, 1]`, values in (0, 1).
    pub fn channel_attention<T: Real>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let g = ctx.graph;
        let avg = g.global_pool(x, PoolKind::Avg, PoolAxis::Spatial)?;
        let max = g.global_pool(x, PoolKind::Max, PoolAxis::Spatial)?;
        let s = g.add(&self.mlp(ctx, &avg)?, &self.mlp(ctx, &max)?)?;
        g.sigmoid(&s)
    }

    /// Spatial gate `[n, 1, h, w]`, values in (0, 1).
    pub fn spatial_attention<T: Real>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let g = ctx.graph;
        let avg = g.global_pool(x, PoolKind::Avg, PoolAxis::Channel)?;
        let max = g.global_pool(x, PoolKind::Max, PoolAxis::Channel)?;
        let stacked = g.concat_channels(&avg, &max)?;
        g.sigmoid(&self.spatial.forward(ctx, &stacked)?)
    }

    pub fn forward<T: Real>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        if x.shape().c != self.channels {
            return Err(Error::dim(
                "cbam_forward",
                format!("input has {} channels, module expects {}", x.shape().c, self.channels),
            ));
        }
        let g = ctx.graph;
        let xc = g.mul_broadcast(x, &self.channel_attention(ctx, x)?)?;
        let out = g.mul_broadcast(&xc, &self.spatial_attention(ctx, &xc)?)?;
        ctx.emit(&self.name, out)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.mlp1.params();
        p.extend(self.mlp2.params());
        p.extend(self.spatial.params());
        p
    }
}
