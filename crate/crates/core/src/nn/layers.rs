use rand_chacha::ChaCha8Rng;

use super::{BnUpdate, BufferId, Ctx, Init, Mode, ParamId, ParamStore};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::ops::BN_EPS;
use crate::tensor::{ConvGeom, Shape4, Tensor4};

/// A convolution with optional bias. Weight `[cout, cin/g, k, k]`, bias
/// stored as `[1, cout, 1, 1]`.
#[derive(Clone, Debug)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub cin: usize,
    pub cout: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        geom: ConvGeom,
        bias: bool,
    ) -> Result<Self> {
        if cin % geom.groups != 0 || cout % geom.groups != 0 {
            return Err(Error::Config(format!(
                "{name}: channels {cin}->{cout} not divisible by groups {}",
                geom.groups
            )));
        }
        let cin_g = cin / geom.groups;
        let shape = Shape4::new(cout, cin_g, kernel, kernel);
        let w = Init::new(rng).kaiming_uniform(shape, cin_g * kernel * kernel);
        let weight = store.add_param(format!("{name}.weight"), w)?;
        let bias = if bias {
            Some(store.add_param(format!("{name}.bias"), Tensor4::zeros([1, cout, 1, 1]))?)
        } else {
            None
        };
        Ok(Conv2dLayer {
            weight,
            bias,
            geom,
            cin,
            cout,
        })
    }

    /// A 1x1 convolution with bias.
    pub fn pointwise<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        Self::new(store, rng, name, cin, cout, 1, ConvGeom::default(), true)
    }

    pub fn forward<T: Real>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.graph.conv2d(x, &w, b.as_ref(), self.geom)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Batch norm over `(n, h, w)` with learnable affine and running stats.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, c: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: store.add_param(format!("{name}.gamma"), Tensor4::full([1, c, 1, 1], T::one()))?,
            beta: store.add_param(format!("{name}.beta"), Tensor4::zeros([1, c, 1, 1]))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor4::zeros([1, c, 1, 1]))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor4::full([1, c, 1, 1], T::one()))?,
            channels: c,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let running = (
            ctx.store.buffer(self.running_mean).data(),
            ctx.store.buffer(self.running_var).data(),
        );
        let train = ctx.mode == Mode::Train;
        let (y, stats) = ctx.graph.batch_norm(x, &gamma, &beta, running, train, BN_EPS)?;
        if let Some(stats) = stats {
            ctx.push_bn_update(BnUpdate {
                mean: self.running_mean,
                var: self.running_var,
                stats,
            });
        }
        Ok(y)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta]
    }
}

/// 3x3 depthwise convolution (no bias) followed by a 1x1 pointwise
/// convolution with bias. Padding 1, stride 1.
#[derive(Clone, Debug)]
pub struct DscLayer {
    pub depthwise: ParamId,
    pub pointwise: ParamId,
    pub bias: ParamId,
    pub cin: usize,
    pub cout: usize,
}

impl DscLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        if cin == 0 || cout == 0 {
            return Err(Error::Config(format!("{name}: zero channels")));
        }
        let dw = Init::new(rng).kaiming_uniform(Shape4::new(cin, 1, 3, 3), 9);
        let pw = Init::new(rng).kaiming_uniform(Shape4::new(cout, cin, 1, 1), cin);
        Ok(DscLayer {
            depthwise: store.add_param(format!("{name}.depthwise"), dw)?,
            pointwise: store.add_param(format!("{name}.pointwise"), pw)?,
            bias: store.add_param(format!("{name}.bias"), Tensor4::zeros([1, cout, 1, 1]))?,
            cin,
            cout,
        })
    }

    pub fn forward<T: Real>(&self, ctx: &Ctx<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        if x.shape().c != self.cin {
            return Err(Error::dim(
                "dsc_forward",
                format!("input has {} channels, layer expects {}", x.shape().c, self.cin),
            ));
        }
        let dw = ctx.param(self.depthwise);
        let pw = ctx.param(self.pointwise);
        let b = ctx.param(self.bias);
        let mid = ctx
            .graph
            .conv2d(x, &dw, None, ConvGeom::padded(1).with_groups(self.cin))?;
        ctx.graph.conv2d(&mid, &pw, Some(&b), ConvGeom::default())
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.depthwise, self.pointwise, self.bias]
    }
}
