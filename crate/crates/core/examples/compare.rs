//! Reduced comparison run: every algorithm, two seeds, short training.
//! Writes the same report directory as `ddstn compare`.
//!
//! Run with `cargo run --release --example compare -- [out_dir]`.

use ddstn::experiment::{cmd_compare, table_csv, ExperimentConfig};
use ddstn::train::TrainConfig;

fn main() -> ddstn::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("ddstn_compare"));
    let cfg = ExperimentConfig {
        seeds: vec![0, 1],
        train: TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        },
        out,
        ..ExperimentConfig::default()
    };
    let outcome = cmd_compare(&cfg)?;
    print!("{}", table_csv(&outcome.rows));
    for row in &outcome.rows {
        println!("{:<12} pooled AUC {:.3}", row.algorithm.label(), row.pooled_auc);
    }
    println!("reports in {}", cfg.out.display());
    Ok(())
}
