//! ROC points and trapezoidal AUC for a handful of scores, including ties.

use ddstn::eval::roc_auc;
use ddstn::experiment::roc_csv;

fn main() -> ddstn::Result<()> {
    let scores = [2.1, 1.4, 1.4, 0.3, 0.3, -0.2, -0.9, -1.5];
    let labels = [1, 1, -1, 1, -1, -1, 1, -1];
    let roc = roc_auc(&scores, &labels)?;
    print!("{}", roc_csv(&roc));

    let pairs: f64 = scores
        .iter()
        .zip(labels)
        .filter(|p| p.1 > 0)
        .flat_map(|(p, _)| {
            scores.iter().zip(labels).filter(|n| n.1 < 0).map(move |(n, _)| {
                if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                }
            })
        })
        .sum();
    println!("auc {:.4}  (ranking probability {:.4})", roc.auc, pairs / 16.0);
    Ok(())
}
