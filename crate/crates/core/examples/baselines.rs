//! Cross-validate every algorithm on one dataset with the same fold plan.

use ddstn::data::{generate_synthetic, make_fold_plan, GenConfig};
use ddstn::eval::{cross_validate, RunSpec};
use ddstn::train::{Algorithm, TrainConfig};

fn main() -> ddstn::Result<()> {
    let ds = generate_synthetic(&GenConfig::default())?;
    let plan = make_fold_plan(&ds, 3, 0)?;
    println!("{:<12} {:>6} {:>6} {:>6} {:>6}", "algorithm", "ACC", "SEN", "SPE", "AUC");
    for algorithm in Algorithm::ALL {
        let run = RunSpec {
            algorithm,
            config: TrainConfig::default(),
            specs: None,
        };
        let report = cross_validate(&ds, &plan, &run)?;
        let a = &report.aggregate;
        println!(
            "{:<12} {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
            algorithm.label(),
            a.acc.mean,
            a.sen.mean,
            a.spe.mean,
            a.auc.mean
        );
    }
    Ok(())
}
