//! Three-fold cross-validation of the two-channel model with per-fold metrics.
//! Paired records always stay in the training side.

use ddstn::data::{generate_synthetic, make_fold_plan, GenConfig};
use ddstn::eval::{cross_validate, RunSpec};
use ddstn::train::{Algorithm, TrainConfig};

fn main() -> ddstn::Result<()> {
    let seed = 3;
    let ds = generate_synthetic(&GenConfig {
        seed,
        ..GenConfig::default()
    })?;
    let plan = make_fold_plan(&ds, 3, seed)?;
    let report = cross_validate(
        &ds,
        &plan,
        &RunSpec {
            algorithm: Algorithm::Ddstn,
            config: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            specs: None,
        },
    )?;

    for f in &report.folds {
        println!(
            "fold {}: train {:3} ids, test {:2} ids  acc {:.3} sen {:.3} spe {:.3} yi {:.3} auc {:.3}",
            f.fold,
            f.train_ids.len(),
            f.test_ids.len(),
            f.metrics.acc,
            f.metrics.sen,
            f.metrics.spe,
            f.metrics.yi,
            f.auc
        );
    }
    let a = &report.aggregate;
    println!("mean acc {:.3} ± {:.3}", a.acc.mean, a.acc.sd);
    println!("pooled auc {:.3}", report.pooled_roc.auc);
    Ok(())
}
