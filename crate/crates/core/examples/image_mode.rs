//! Image-shaped records with the convolutional backbone.

use ddstn::data::{generate_synthetic, GenConfig, GenMode};
use ddstn::eval::{metrics, predict};
use ddstn::train::{train_ddstn, ChannelSpecs, TrainConfig};

fn main() -> ddstn::Result<()> {
    let ds = generate_synthetic(&GenConfig {
        mode: GenMode::Image,
        n_paired: 40,
        n_unpaired: 60,
        ..GenConfig::default()
    })?;
    let cfg = TrainConfig {
        epochs: 15,
        feature_dim: 16,
        ..TrainConfig::default()
    };
    let specs = ChannelSpecs::for_dataset(&ds, cfg.feature_dim);
    println!("target layers: {:?}", specs.target.layers);
    println!("layer output shapes: {:?}", specs.target.layer_shapes()?);

    let model = train_ddstn(&ds, &specs, &cfg)?;
    println!(
        "loss {:.4} -> {:.4}",
        model.history.first().copied().unwrap_or_default(),
        model.history.last().copied().unwrap_or_default()
    );
    let x = ds.batch(ds.unpaired.iter().map(|r| r.target.as_slice()), false)?;
    let truth: Vec<i8> = ds.unpaired.iter().map(|r| r.label).collect();
    let m = metrics(&predict(&model, &x)?.labels, &truth)?;
    println!("training accuracy on target-only images: {:.3}", m.acc);
    Ok(())
}
