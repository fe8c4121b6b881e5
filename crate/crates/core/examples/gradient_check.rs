//! Compare reverse-mode gradients of a residual block with central
//! differences, in f64.

use nowcast::nn::{Ctx, Mode, ParamStore, ResidualDscBlock, ShortcutConfig};
use nowcast::{Graph, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(store: &ParamStore<f64>, block: &ResidualDscBlock, x: &Tensor4<f64>) -> f64 {
    let g = Graph::no_grad();
    let ctx = Ctx::new(&g, store, Mode::Eval);
    let y = block.forward(&ctx, &g.constant(x.clone())).unwrap();
    y.value().data().iter().map(|v| v * v).sum::<f64>() / 2.0
}

fn main() -> nowcast::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f64>::new();
    let block = ResidualDscBlock::new(
        &mut store,
        &mut rng,
        "blk",
        3,
        6,
        4,
        ShortcutConfig::Conv { norm: false },
    )?;
    let x = Tensor4::from_fn([2, 3, 8, 8], |_, _, _, _| rng.gen_range(-1.0..1.0));

    let g = Graph::new();
    let leaves = {
        let ctx = Ctx::new(&g, &store, Mode::Eval);
        let y = block.forward(&ctx, &g.constant(x.clone()))?;
        let half = g.scale(&g.sum(&g.mul_broadcast(&y, &y)?)?, 0.5)?;
        g.backward(&half)?;
        ctx.param_leaves()
    };
    store.accumulate_grads(&g, &leaves);

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.param(id).name.clone();
        let n = store.value(id).numel();
        let i = rng.gen_range(0..n);
        let analytic = store.param(id).grad().data()[i];
        let orig = store.value(id).data()[i];
        store.value_mut(id).data_mut()[i] = orig + h;
        let up = loss(&store, &block, &x);
        store.value_mut(id).data_mut()[i] = orig - h;
        let down = loss(&store, &block, &x);
        store.value_mut(id).data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
        println!("{name:<22} [{i:>3}]  analytic {analytic:>12.6e}  numeric {numeric:>12.6e}  rel {rel:.1e}");
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
