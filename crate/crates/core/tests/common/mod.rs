#![allow(dead_code)]

use ddstn::autodiff::{Graph, NodeId};
use ddstn::tensor::Tensor;
use ddstn::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn signs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect()
}

fn eval(record: &dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>, inputs: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = record(&mut g, &ids).unwrap();
    g.scalar(out).unwrap()
}

/// Worst gradient mismatch against central differences with step `1e-5`.
/// An entry passes when the absolute error is under `1e-8` or the relative
/// error is under `1e-4`; the return value is the worst relative error over
/// the entries that miss the absolute floor (0 when none do).
pub fn finite_difference_error(
    record: &dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
    inputs: &[Tensor],
) -> f64 {
    let h = 1e-5;
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = record(&mut g, &ids).unwrap();
    let grads = g.backward(out).unwrap();

    let mut worst: f64 = 0.0;
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.wrt(*id);
        for i in 0..inputs[k].numel() {
            let mut bumped = inputs.to_vec();
            bumped[k].data_mut()[i] += h;
            let up = eval(record, &bumped);
            bumped[k].data_mut()[i] -= 2.0 * h;
            let down = eval(record, &bumped);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[i];
            let abs = (a - numeric).abs();
            if abs > 1e-8 {
                worst = worst.max(abs / a.abs().max(numeric.abs()));
            }
        }
    }
    worst
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
