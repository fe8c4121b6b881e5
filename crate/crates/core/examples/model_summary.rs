//! Parameter counts and activation shapes of both variants at full scale,
//! next to a dense UNet of the same widths.

use nowcast::model::{layer_shapes, regular_unet_param_count, Model, ModelConfig, Variant};

fn main() -> nowcast::Result<()> {
    for variant in [Variant::Sar, Variant::Smaat] {
        let cfg = ModelConfig::precipitation(variant, 12);
        let model = Model::<f32>::build(cfg.clone(), 0)?;
        println!("{}: {} trainable parameters", variant.label(), model.param_count());
        for (name, n) in model.component_counts() {
            println!("  {name:<24} {n:>9}");
        }
        if variant == Variant::Sar {
            println!("  activation shapes for a 288x288 input:");
            for (name, shape) in layer_shapes(&cfg, 288, 288)? {
                println!("    {name:<24} {shape}");
            }
        }
    }
    println!("dense UNet, same widths: {}", regular_unet_param_count(12, 1, 64));
    Ok(())
}
