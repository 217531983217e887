//! Generate the default synthetic profile, write it as CSV and read it back.
//!
//! Run with `cargo run --example generate_dataset -- [out.csv]`.

use ddstn::data::{generate_synthetic, BimodalDataset, GenConfig, GenMode};

fn class_mean(rows: &[(&[f64], i8)], label: i8) -> Vec<f64> {
    let picked: Vec<&[f64]> = rows.iter().filter(|r| r.1 == label).map(|r| r.0).collect();
    let d = picked[0].len();
    (0..d)
        .map(|j| picked.iter().map(|r| r[j]).sum::<f64>() / picked.len() as f64)
        .collect()
}

fn gap(rows: &[(&[f64], i8)]) -> f64 {
    let (p, n) = (class_mean(rows, 1), class_mean(rows, -1));
    p.iter().zip(&n).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

fn main() -> ddstn::Result<()> {
    let cfg = GenConfig::default();
    let ds = generate_synthetic(&cfg)?;
    println!(
        "paired: {}  target-only: {}  dims: source {} / target {}",
        ds.paired.len(),
        ds.unpaired.len(),
        ds.dim_s,
        ds.dim_t
    );

    let source: Vec<(&[f64], i8)> = ds.paired.iter().map(|r| (r.source.as_slice(), r.label)).collect();
    let target: Vec<(&[f64], i8)> = ds.paired.iter().map(|r| (r.target.as_slice(), r.label)).collect();
    println!("distance between class means, source: {:.3}", gap(&source));
    println!("distance between class means, target: {:.3}", gap(&target));

    let path = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("ddstn_dataset.csv"));
    ds.save_csv(&path)?;
    let back = BimodalDataset::load_csv(&path)?;
    assert_eq!(back, ds);
    println!("wrote and re-read {}", path.display());

    let images = generate_synthetic(&GenConfig {
        mode: GenMode::Image,
        ..cfg
    })?;
    println!(
        "image mode: target input shape {:?}",
        images.target_input_shape()
    );
    Ok(())
}
