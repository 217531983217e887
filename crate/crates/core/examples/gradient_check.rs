//! Compare reverse-mode gradients of the full objective with central
//! finite differences on a small pair of channels.

use ddstn::autodiff::Graph;
use ddstn::losses::{ddstn_objective, Channel, Hyperparams, LupiDirection, MmdKernel, ObjectiveBatch, PairedBatch, UnpairedBatch};
use ddstn::network::{build_network, NetworkParams, NetworkSpec};
use ddstn::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn loss(source: &NetworkParams, target: &NetworkParams, batch: &ObjectiveBatch, hp: &Hyperparams) -> f64 {
    let mut g = Graph::new();
    let s = source.bind(&mut g);
    let t = target.bind(&mut g);
    let nodes = ddstn_objective(&mut g, Channel::new(source, &s), Channel::new(target, &t), batch, hp, LupiDirection::Symmetric).unwrap();
    g.scalar(nodes.total).unwrap()
}

fn main() -> ddstn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = NetworkSpec::vector_default(4, 3);
    let source = build_network(&spec, 1)?;
    let target = build_network(&spec, 2)?;
    let labels = |rng: &mut ChaCha8Rng, n| (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect::<Vec<f64>>();
    let batch = ObjectiveBatch {
        paired: Some(PairedBatch {
            source: random(&mut rng, &[5, 4]),
            target: random(&mut rng, &[5, 4]),
            labels: labels(&mut rng, 5),
        }),
        unpaired: UnpairedBatch {
            target: random(&mut rng, &[6, 4]),
            labels: labels(&mut rng, 6),
        },
        source_pool: None,
    };
    let hp = Hyperparams {
        mmd_kernel: MmdKernel::Rbf { bandwidths: vec![0.5, 2.0] },
        ..Hyperparams::default()
    };

    let mut g = Graph::new();
    let s_ids = source.bind(&mut g);
    let t_ids = target.bind(&mut g);
    let nodes = ddstn_objective(&mut g, Channel::new(&source, &s_ids), Channel::new(&target, &t_ids), &batch, &hp, LupiDirection::Symmetric)?;
    let grads = g.backward(nodes.total)?;
    println!("objective = {:.10}", g.scalar(nodes.total)?);

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (which, net, ids) in [("target", &target, &t_ids), ("source", &source, &s_ids)] {
        for (p, &id) in ids.iter().enumerate() {
            let analytic = grads.wrt(id);
            for i in 0..net.params[p].numel() {
                let mut bumped = net.clone();
                bumped.params[p].data_mut()[i] += h;
                let up = if which == "target" { loss(&source, &bumped, &batch, &hp) } else { loss(&bumped, &target, &batch, &hp) };
                bumped.params[p].data_mut()[i] -= 2.0 * h;
                let down = if which == "target" { loss(&source, &bumped, &batch, &hp) } else { loss(&bumped, &target, &batch, &hp) };
                let numeric = (up - down) / (2.0 * h);
                let a = analytic.data()[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    println!("max relative error over all parameters: {worst:.3e}");
    Ok(())
}
