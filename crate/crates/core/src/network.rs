//! Per-domain channels: a feature extractor followed by a final `dense(1)`
//! score layer whose weight and bias are the `(W, b)` pair of the linear
//! decision function. The activation entering that layer is the feature
//! representation `φ(x)` used for distribution matching.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { out_dim: usize },
    Conv { kernel: usize, channels: usize },
    Maxpool2,
    Relu,
    Flatten,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Per-sample input shape: `[d]` for vectors, `[c, H, W]` for images.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// `dense(64) → relu → dense(feature_dim) → relu → dense(1)`.
    pub fn vector_default(input_dim: usize, feature_dim: usize) -> Self {
        NetworkSpec {
            input_shape: vec![input_dim],
            layers: vec![
                LayerSpec::Dense { out_dim: 64 },
                LayerSpec::Relu,
                LayerSpec::Dense { out_dim: feature_dim },
                LayerSpec::Relu,
                LayerSpec::Dense { out_dim: 1 },
            ],
        }
    }

    /// `conv(3, 8) → relu → maxpool2 → flatten → dense(feature_dim) → relu → dense(1)`
    /// on single-channel `side × side` images.
    pub fn image_default(side: usize, feature_dim: usize) -> Self {
        NetworkSpec {
            input_shape: vec![1, side, side],
            layers: vec![
                LayerSpec::Conv {
                    kernel: 3,
                    channels: 8,
                },
                LayerSpec::Relu,
                LayerSpec::Maxpool2,
                LayerSpec::Flatten,
                LayerSpec::Dense { out_dim: feature_dim },
                LayerSpec::Relu,
                LayerSpec::Dense { out_dim: 1 },
            ],
        }
    }

    /// Per-sample output shape after every layer.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Spec {
                layer: 0,
                message: format!("invalid input shape {:?}", self.input_shape),
            });
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { out_dim: 1 }) => {}
            _ => {
                return Err(Error::Spec {
                    layer: self.layers.len().saturating_sub(1),
                    message: "final layer must be dense(1)".into(),
                })
            }
        }
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let err = |message: String| Error::Spec { layer: i, message };
            shape = match *layer {
                LayerSpec::Dense { out_dim } => {
                    if shape.len() != 1 {
                        return Err(err(format!("dense needs a flat input, got {shape:?}")));
                    }
                    if out_dim == 0 {
                        return Err(err("dense out_dim must be positive".into()));
                    }
                    vec![out_dim]
                }
                LayerSpec::Conv { kernel, channels } => match shape.as_slice() {
                    [_, h, w] if kernel >= 1 && kernel <= *h && kernel <= *w && channels >= 1 => {
                        vec![channels, h - kernel + 1, w - kernel + 1]
                    }
                    _ => return Err(err(format!("conv({kernel}, {channels}) cannot apply to {shape:?}"))),
                },
                LayerSpec::Maxpool2 => match shape.as_slice() {
                    [c, h, w] if *h >= 2 && *w >= 2 => vec![*c, h / 2, w / 2],
                    _ => return Err(err(format!("maxpool2 cannot apply to {shape:?}"))),
                },
                LayerSpec::Relu => shape,
                LayerSpec::Flatten => vec![shape.iter().product()],
            };
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.layer_shapes().map(|_| ())
    }

    /// Dimension of `φ(x)`, the input to the final dense layer.
    pub fn feature_dim(&self) -> Result<usize> {
        let shapes = self.layer_shapes()?;
        Ok(if shapes.len() >= 2 {
            shapes[shapes.len() - 2][0]
        } else {
            self.input_shape[0]
        })
    }

    /// Parameter shapes, in storage order, for every parametrised layer.
    fn param_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let shapes = self.layer_shapes()?;
        let mut prev = self.input_shape.clone();
        let mut out = Vec::new();
        for (layer, shape) in self.layers.iter().zip(&shapes) {
            match *layer {
                LayerSpec::Dense { out_dim } => {
                    out.push(vec![prev[0], out_dim]);
                    out.push(vec![out_dim]);
                }
                LayerSpec::Conv { kernel, channels } => {
                    out.push(vec![channels, prev[0], kernel, kernel]);
                    out.push(vec![channels]);
                }
                _ => {}
            }
            prev = shape.clone();
        }
        Ok(out)
    }
}

/// Learned tensors of one channel, stored layer by layer as `(weight, bias)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub spec: NetworkSpec,
    pub params: Vec<Tensor>,
}

/// Plain forward-pass output.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    /// `n × d_φ` penultimate activations.
    pub features: Tensor,
    pub scores: Vec<f64>,
}

/// Node handles for one forward pass recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct ForwardNodes {
    pub features: NodeId,
    /// `n × 1`.
    pub scores: NodeId,
}

/// Scaled-uniform (Glorot) initialisation, zero biases.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<NetworkParams> {
    let shapes = spec.param_shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = shapes
        .into_iter()
        .map(|shape| {
            if shape.len() == 1 {
                return Tensor::zeros(&shape);
            }
            let (fan_in, fan_out) = fans(&shape);
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-s..=s)).collect();
            Tensor::new(shape, data).expect("shape from spec")
        })
        .collect();
    Ok(NetworkParams {
        spec: spec.clone(),
        params,
    })
}

/// Fan-in and fan-out of a dense (`in × out`) or conv (`c_out × c_in × k × k`) weight.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [i, o] => (*i, *o),
        [co, ci, k1, k2] => (ci * k1 * k2, co * k1 * k2),
        _ => (1, 1),
    }
}

impl NetworkParams {
    /// Final-layer weight `W` (`d_φ × 1`).
    pub fn final_weight(&self) -> &Tensor {
        &self.params[self.params.len() - 2]
    }

    /// Final-layer bias `b` (shape `[1]`).
    pub fn final_bias(&self) -> &Tensor {
        &self.params[self.params.len() - 1]
    }

    pub fn final_weight_index(&self) -> usize {
        self.params.len() - 2
    }

    /// Checks that stored tensors match the spec's parameter layout.
    pub fn validate(&self) -> Result<()> {
        let expected = self.spec.param_shapes()?;
        let got: Vec<Vec<usize>> = self.params.iter().map(|t| t.shape().to_vec()).collect();
        if expected != got {
            return Err(Error::Dimension(format!(
                "parameter shapes {got:?} do not match spec layout {expected:?}"
            )));
        }
        Ok(())
    }

    /// Register every parameter as a graph leaf.
    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params.iter().map(|p| g.leaf(p.clone())).collect()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.rank() < 1 || batch.shape()[1..] != self.spec.input_shape[..] {
            return Err(Error::Dimension(format!(
                "batch shape {:?} does not match input shape {:?}",
                batch.shape(),
                self.spec.input_shape
            )));
        }
        Ok(())
    }

    /// Record a forward pass over `x` (`n × input_shape`) using bound parameter nodes.
    pub fn forward_on(&self, g: &mut Graph, params: &[NodeId], x: NodeId) -> Result<ForwardNodes> {
        self.check_batch(g.value(x))?;
        let n = g.value(x).shape()[0];
        let ones = g.leaf(Tensor::filled(&[n, 1], 1.0));
        let mut h = x;
        let mut features = x;
        let mut p = 0;
        let last = self.spec.layers.len() - 1;
        for (i, layer) in self.spec.layers.iter().enumerate() {
            if i == last {
                features = h;
            }
            h = match *layer {
                LayerSpec::Dense { out_dim } => {
                    let (w, b) = (params[p], params[p + 1]);
                    p += 2;
                    let xw = g.matmul(h, w)?;
                    let b_row = g.reshape(b, vec![1, out_dim])?;
                    let bias = g.matmul(ones, b_row)?;
                    g.add(xw, bias)?
                }
                LayerSpec::Conv { .. } => {
                    let (k, b) = (params[p], params[p + 1]);
                    p += 2;
                    g.conv_layer(h, k, b)?
                }
                LayerSpec::Maxpool2 => g.maxpool2(h)?,
                LayerSpec::Relu => g.relu(h),
                LayerSpec::Flatten => {
                    let shape = g.value(h).shape();
                    let width = shape[1..].iter().product();
                    g.reshape(h, vec![n, width])?
                }
            };
        }
        Ok(ForwardNodes { features, scores: h })
    }

    /// Forward pass outside of training.
    pub fn forward(&self, batch: &Tensor) -> Result<Forward> {
        let mut g = Graph::new();
        let ids = self.bind(&mut g);
        let x = g.leaf(batch.clone());
        let out = self.forward_on(&mut g, &ids, x)?;
        Ok(Forward {
            features: g.value(out.features).clone(),
            scores: g.value(out.scores).data().to_vec(),
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: Self = serde_json::from_str(&text)?;
        params.validate()?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_one_shapes() {
        let spec = NetworkSpec {
            input_shape: vec![4],
            layers: vec![LayerSpec::Dense { out_dim: 1 }],
        };
        let p = build_network(&spec, 0).unwrap();
        assert_eq!(p.final_weight().shape(), &[4, 1]);
        assert_eq!(p.final_bias().shape(), &[1]);
        assert_eq!(spec.feature_dim().unwrap(), 4);
    }

    #[test]
    fn rejects_bad_final_layer() {
        let spec = NetworkSpec {
            input_shape: vec![4],
            layers: vec![LayerSpec::Dense { out_dim: 3 }],
        };
        assert!(matches!(build_network(&spec, 0), Err(Error::Spec { layer: 0, .. })));
    }

    #[test]
    fn rejects_dense_on_image_without_flatten() {
        let spec = NetworkSpec {
            input_shape: vec![1, 6, 6],
            layers: vec![LayerSpec::Relu, LayerSpec::Dense { out_dim: 1 }],
        };
        assert!(matches!(spec.validate(), Err(Error::Spec { layer: 1, .. })));
    }

    #[test]
    fn default_backbones_have_feature_dim() {
        assert_eq!(NetworkSpec::vector_default(8, 32).feature_dim().unwrap(), 32);
        let img = NetworkSpec::image_default(12, 32);
        let shapes = img.layer_shapes().unwrap();
        assert_eq!(shapes[0], vec![8, 10, 10]);
        assert_eq!(shapes[3], vec![200]);
        assert_eq!(img.feature_dim().unwrap(), 32);
    }

    #[test]
    fn hand_linear_score() {
        let spec = NetworkSpec {
            input_shape: vec![2],
            layers: vec![LayerSpec::Dense { out_dim: 2 }, LayerSpec::Dense { out_dim: 1 }],
        };
        let mut p = build_network(&spec, 1).unwrap();
        p.params[0] = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        p.params[2] = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let out = p.forward(&Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(out.scores, vec![3.0]);
        assert_eq!(out.features.data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weights_score_bias() {
        let spec = NetworkSpec::vector_default(3, 4);
        let mut p = build_network(&spec, 3).unwrap();
        p.params.iter_mut().for_each(|t| t.data_mut().fill(0.0));
        let out = p.forward(&Tensor::filled(&[5, 3], 1.5)).unwrap();
        assert!(out.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn wrong_batch_shape() {
        let p = build_network(&NetworkSpec::vector_default(3, 4), 0).unwrap();
        assert!(matches!(p.forward(&Tensor::zeros(&[2, 4])), Err(Error::Dimension(_))));
    }
}
