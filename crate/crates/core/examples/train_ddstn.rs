//! Train the two-channel model on one synthetic dataset and score the
//! target-only records.

use ddstn::data::{generate_synthetic, GenConfig};
use ddstn::eval::{metrics, predict, roc_auc};
use ddstn::train::{train_ddstn, ChannelSpecs, TrainConfig};

fn main() -> ddstn::Result<()> {
    let ds = generate_synthetic(&GenConfig::default())?;
    let cfg = TrainConfig {
        epochs: 60,
        ..TrainConfig::default()
    };
    let specs = ChannelSpecs::for_dataset(&ds, cfg.feature_dim);
    let model = train_ddstn(&ds, &specs, &cfg)?;

    for (epoch, loss) in model.history.iter().enumerate().step_by(10) {
        println!("epoch {epoch:3}  loss {loss:.4}");
    }

    let x = ds.batch(ds.unpaired.iter().map(|r| r.target.as_slice()), false)?;
    let truth: Vec<i8> = ds.unpaired.iter().map(|r| r.label).collect();
    let pred = predict(&model, &x)?;
    let m = metrics(&pred.labels, &truth)?;
    let roc = roc_auc(&pred.scores, &truth)?;
    println!(
        "training-set fit on target-only records: acc {:.3} sen {:.3} spe {:.3} auc {:.3}",
        m.acc, m.sen, m.spe, roc.auc
    );

    let path = std::env::temp_dir().join("ddstn_model.json");
    model.save_json(&path)?;
    println!("checkpoint written to {}", path.display());
    Ok(())
}
