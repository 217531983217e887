mod common;

use common::{rng, uniform};
use ddstn::network::{build_network, fans, LayerSpec, NetworkParams, NetworkSpec};
use ddstn::tensor::Tensor;
use ddstn::Error;
use proptest::prelude::*;

fn dense_chain(input: usize, dims: &[usize]) -> NetworkSpec {
    let mut layers = Vec::new();
    for (i, &d) in dims.iter().enumerate() {
        if i > 0 {
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Dense { out_dim: d });
    }
    NetworkSpec {
        input_shape: vec![input],
        layers,
    }
}

/// `⟨W, φ_i⟩ + b` from the exposed features and final-layer parameters.
fn recompose(net: &NetworkParams, features: &Tensor) -> Vec<f64> {
    let w = net.final_weight().data();
    let b = net.final_bias().data()[0];
    (0..features.rows())
        .map(|i| features.row(i).iter().zip(w).map(|(f, w)| f * w).sum::<f64>() + b)
        .collect()
}

#[test]
fn glorot_bounds_per_layer() {
    let net = build_network(&dense_chain(2, &[3, 1]), 7).unwrap();
    assert_eq!(net.params.len(), 4);
    for p in &net.params {
        if p.rank() == 1 {
            assert!(p.data().iter().all(|&v| v == 0.0));
        } else {
            let (fi, fo) = fans(p.shape());
            let s = (6.0 / (fi + fo) as f64).sqrt();
            assert!(p.data().iter().all(|v| v.abs() <= s));
        }
    }
    assert_eq!(net.params[0].shape(), &[2, 3]);
    assert_eq!(net.params[2].shape(), &[3, 1]);
}

#[test]
fn single_dense_shapes() {
    let net = build_network(&dense_chain(4, &[1]), 0).unwrap();
    assert_eq!(net.final_weight().shape(), &[4, 1]);
    assert_eq!(net.final_bias().shape(), &[1]);
}

#[test]
fn hand_linear_algebra() {
    let mut net = build_network(&dense_chain(2, &[2, 1]), 1).unwrap();
    net.params[0] = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    net.params[2] = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
    let out = net.forward(&Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap()).unwrap();
    assert_eq!(out.scores, vec![3.0]);
    assert_eq!(out.features.data(), &[1.0, 2.0]);
}

#[test]
fn zero_weights_score_bias() {
    let mut net = build_network(&NetworkSpec::vector_default(5, 8), 2).unwrap();
    for p in &mut net.params {
        p.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let x = uniform(&mut rng(1), &[6, 5], -3.0, 3.0);
    assert!(net.forward(&x).unwrap().scores.iter().all(|&s| s == 0.0));
}

#[test]
fn recomposition_vector_and_image() {
    let mut r = rng(2);
    for seed in 0..10 {
        let mut net = build_network(&NetworkSpec::vector_default(6, 32), seed).unwrap();
        net.params.last_mut().unwrap().data_mut()[0] = 0.37;
        let x = uniform(&mut r, &[9, 6], -2.0, 2.0);
        let out = net.forward(&x).unwrap();
        assert_eq!(out.features.shape(), &[9, 32]);
        let expect = recompose(&net, &out.features);
        assert!(common::max_abs_diff(&out.scores, &expect) <= 1e-12);
    }
    let net = build_network(&NetworkSpec::image_default(12, 16), 3).unwrap();
    let x = uniform(&mut r, &[4, 1, 12, 12], 0.0, 1.0);
    let out = net.forward(&x).unwrap();
    assert_eq!(out.features.shape(), &[4, 16]);
    assert!(common::max_abs_diff(&out.scores, &recompose(&net, &out.features)) <= 1e-12);
}

#[test]
fn default_backbones() {
    let v = NetworkSpec::vector_default(8, 32);
    assert_eq!(v.layer_shapes().unwrap(), vec![vec![64], vec![64], vec![32], vec![32], vec![1]]);
    let i = NetworkSpec::image_default(12, 32);
    assert_eq!(
        i.layers,
        vec![
            LayerSpec::Conv { kernel: 3, channels: 8 },
            LayerSpec::Relu,
            LayerSpec::Maxpool2,
            LayerSpec::Flatten,
            LayerSpec::Dense { out_dim: 32 },
            LayerSpec::Relu,
            LayerSpec::Dense { out_dim: 1 },
        ]
    );
    assert_eq!(i.feature_dim().unwrap(), 32);
}

#[test]
fn inconsistent_specs_name_the_layer() {
    let no_score = dense_chain(3, &[4, 2]);
    assert!(matches!(build_network(&no_score, 0), Err(Error::Spec { layer: 2, .. })));
    let conv_on_vector = NetworkSpec {
        input_shape: vec![5],
        layers: vec![LayerSpec::Conv { kernel: 3, channels: 2 }, LayerSpec::Flatten, LayerSpec::Dense { out_dim: 1 }],
    };
    assert!(matches!(build_network(&conv_on_vector, 0), Err(Error::Spec { layer: 0, .. })));
    let big_kernel = NetworkSpec {
        input_shape: vec![1, 4, 4],
        layers: vec![LayerSpec::Conv { kernel: 5, channels: 2 }, LayerSpec::Flatten, LayerSpec::Dense { out_dim: 1 }],
    };
    assert!(matches!(build_network(&big_kernel, 0), Err(Error::Spec { layer: 0, .. })));
}

#[test]
fn batch_shape_mismatch() {
    let net = build_network(&dense_chain(3, &[1]), 0).unwrap();
    assert!(matches!(net.forward(&Tensor::zeros(&[2, 4])), Err(Error::Dimension(_))));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let mut net = build_network(&NetworkSpec::image_default(12, 8), 5).unwrap();
    net.params[1].data_mut()[0] = 1.0 / 3.0;
    net.params[1].data_mut()[1] = -2.0e-300;
    net.save_json(&path).unwrap();
    let back = NetworkParams::load_json(&path).unwrap();
    let bits = |n: &NetworkParams| n.params.iter().flat_map(|p| p.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&net));
    assert_eq!(back.spec, net.spec);

    let x = uniform(&mut rng(4), &[3, 1, 12, 12], 0.0, 1.0);
    assert_eq!(back.forward(&x).unwrap(), net.forward(&x).unwrap());
}

#[test]
fn corrupted_checkpoint_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let mut net = build_network(&dense_chain(3, &[4, 1]), 0).unwrap();
    net.params.swap(0, 2);
    net.save_json(&path).unwrap();
    assert!(NetworkParams::load_json(&path).is_err());
}

proptest! {
    #[test]
    fn build_is_deterministic(seed in any::<u64>(), input in 1usize..6, hidden in 1usize..6) {
        let spec = dense_chain(input, &[hidden, 1]);
        let a = build_network(&spec, seed).unwrap();
        prop_assert_eq!(&a, &build_network(&spec, seed).unwrap());
        let b = build_network(&spec, seed.wrapping_add(1)).unwrap();
        prop_assert_ne!(a.params, b.params);
    }
}
