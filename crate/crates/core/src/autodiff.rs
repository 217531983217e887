//! Tape-style reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is an append-only list of nodes. Every node caches its forward
//! value; parents always have smaller ids than children, so the backward pass
//! is a single sweep in decreasing id order. Graphs are built fresh for every
//! training step and thrown away afterwards.
//!
//! Broadcasting is limited to one-element operands; anything else must be
//! expressed with an explicit `matmul` against a ones vector or a `reshape`.

use crate::error::{Error, Result};
use crate::tensor::{self, conv_backward, conv_forward, ConvGeom, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Relu(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Exp(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Reshape(NodeId),
    Conv {
        input: NodeId,
        kernels: NodeId,
        bias: Option<NodeId>,
        geom: ConvGeom,
    },
    MaxPool2 {
        input: NodeId,
        argmax: Vec<usize>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to the leaves of a graph.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, zeros when the loss does not depend on it.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        match self.get(id) {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
}

fn broadcast_pair(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() == b.shape() || a.numel() == 1 || b.numel() == 1 {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{op}: incompatible shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (shape, data) = if a.numel() == 1 && b.numel() != 1 {
        let x = a.data()[0];
        (b.shape().to_vec(), b.data().iter().map(|&y| f(x, y)).collect())
    } else if b.numel() == 1 && a.numel() != 1 {
        let y = b.data()[0];
        (a.shape().to_vec(), a.data().iter().map(|&x| f(x, y)).collect())
    } else {
        let shape = if a.rank() >= b.rank() { a.shape() } else { b.shape() };
        (
            shape.to_vec(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
    };
    Tensor::new(shape, data).expect("broadcast shape is consistent")
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
        .expect("same shape")
}

/// Reduce a gradient computed at the broadcast shape back to `target`'s shape.
fn unbroadcast(grad: Tensor, target: &Tensor) -> Tensor {
    if grad.shape() == target.shape() {
        grad
    } else if target.numel() == 1 {
        Tensor::new(target.shape().to_vec(), vec![grad.data().iter().sum()]).expect("scalar")
    } else {
        Tensor::new(target.shape().to_vec(), grad.into_data()).expect("same numel")
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Shorthand for the value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        self.value(id).item()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Input or parameter node.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.leaf(Tensor::scalar(value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).transpose()?;
        Ok(self.push(Op::Transpose(a), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        broadcast_pair(self.value(a), self.value(b), "add")?;
        let v = zip_broadcast(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        broadcast_pair(self.value(a), self.value(b), "sub")?;
        let v = zip_broadcast(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        broadcast_pair(self.value(a), self.value(b), "mul")?;
        let v = zip_broadcast(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = map(self.value(a), |x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = map(self.value(a), |x| x + c);
        self.push(Op::Offset(a), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = map(self.value(a), |x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), v)
    }

    /// Same as [`Graph::relu`]; reads better where it enforces a `≥ 0` constraint.
    pub fn clamp_min0(&mut self, a: NodeId) -> NodeId {
        self.relu(a)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = map(self.value(a), |x| x * x);
        self.push(Op::Square(a), v)
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(Error::Contract("sqrt of a negative value".into()));
        }
        let v = map(self.value(a), f64::sqrt);
        Ok(self.push(Op::Sqrt(a), v))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = map(self.value(a), f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Op::Mean(a), Tensor::scalar(s))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(Op::Reshape(a), v))
    }

    /// Single-channel valid convolution of an `H×W` node with a `k×k` node.
    pub fn conv2d_valid(&mut self, input: NodeId, kernel: NodeId) -> Result<NodeId> {
        let geom = tensor::conv2d_geom(self.value(input).shape(), self.value(kernel).shape())?;
        let out = conv_forward(geom, self.value(input).data(), self.value(kernel).data());
        let v = Tensor::new(vec![geom.out_h(), geom.out_w()], out)?;
        Ok(self.push(
            Op::Conv {
                input,
                kernels: kernel,
                bias: None,
                geom,
            },
            v,
        ))
    }

    /// Batched convolution layer: input `n×c_in×H×W`, kernels `c_out×c_in×k×k`,
    /// bias `c_out`; output `n×c_out×(H−k+1)×(W−k+1)`.
    pub fn conv_layer(&mut self, input: NodeId, kernels: NodeId, bias: NodeId) -> Result<NodeId> {
        let (x, kt, bt) = (self.value(input), self.value(kernels), self.value(bias));
        let (n, cin, h, w) = match x.shape() {
            [n, c, h, w] => (*n, *c, *h, *w),
            s => return Err(Error::Dimension(format!("conv layer input must be n×c×H×W, got {s:?}"))),
        };
        let (cout, k) = match kt.shape() {
            [co, ci, k1, k2] if *ci == cin && k1 == k2 => (*co, *k1),
            s => {
                return Err(Error::Dimension(format!(
                    "conv kernels {s:?} do not match input {:?}",
                    x.shape()
                )))
            }
        };
        if bt.shape() != [cout] {
            return Err(Error::Dimension(format!(
                "conv bias {:?} does not match {cout} channels",
                bt.shape()
            )));
        }
        if k > h || k > w {
            return Err(Error::Dimension(format!(
                "kernel {:?} larger than input {:?}",
                kt.shape(),
                x.shape()
            )));
        }
        let geom = ConvGeom {
            batch: n,
            in_ch: cin,
            height: h,
            width: w,
            out_ch: cout,
            k,
        };
        let mut out = conv_forward(geom, x.data(), kt.data());
        let plane = geom.out_h() * geom.out_w();
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            let b = bt.data()[i % cout];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        let v = Tensor::new(vec![n, cout, geom.out_h(), geom.out_w()], out)?;
        Ok(self.push(
            Op::Conv {
                input,
                kernels,
                bias: Some(bias),
                geom,
            },
            v,
        ))
    }

    /// 2×2 max pooling (stride 2, floor) over the last two axes.
    pub fn maxpool2(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let r = x.rank();
        if r < 2 || x.shape()[r - 2] < 2 || x.shape()[r - 1] < 2 {
            return Err(Error::Dimension(format!(
                "maxpool2 needs trailing dims ≥ 2, got {:?}",
                x.shape()
            )));
        }
        let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
        let (oh, ow) = (h / 2, w / 2);
        let planes = x.numel() / (h * w);
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (u, v) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + u) * w + 2 * j + v;
                        if x.data()[idx] > x.data()[best] {
                            best = idx;
                        }
                    }
                    out.push(x.data()[best]);
                    argmax.push(best);
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        let v = Tensor::new(shape, out)?;
        Ok(self.push(Op::MaxPool2 { input, argmax }, v))
    }

    /// Reverse sweep from a one-element `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, node has shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(up) = grads[id].take() else { continue };
            let mut acc = |target: NodeId, g: Tensor| {
                let slot = &mut grads[target.0];
                match slot {
                    Some(existing) => existing
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(e, v)| *e += v),
                    None => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!("leaves keep their gradient"),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(*a, tensor::matmul(&up, &bv.transpose()?)?);
                    acc(*b, tensor::matmul(&av.transpose()?, &up)?);
                }
                Op::Transpose(a) => acc(*a, up.transpose()?),
                Op::Add(a, b) => {
                    acc(*a, unbroadcast(up.clone(), self.value(*a)));
                    acc(*b, unbroadcast(up, self.value(*b)));
                }
                Op::Sub(a, b) => {
                    acc(*a, unbroadcast(up.clone(), self.value(*a)));
                    acc(*b, unbroadcast(map(&up, |v| -v), self.value(*b)));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = zip_broadcast(&up, bv, |u, y| u * y);
                    let gb = zip_broadcast(&up, av, |u, x| u * x);
                    acc(*a, unbroadcast(ga, av));
                    acc(*b, unbroadcast(gb, bv));
                }
                Op::Scale(a, c) => acc(*a, map(&up, |v| v * c)),
                Op::Offset(a) => acc(*a, up),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(*a, zip_broadcast(&up, x, |u, x| if x > 0.0 { u } else { 0.0 }));
                }
                Op::Square(a) => {
                    let x = self.value(*a);
                    acc(*a, zip_broadcast(&up, x, |u, x| 2.0 * x * u));
                }
                Op::Sqrt(a) => {
                    let y = &node.value;
                    acc(
                        *a,
                        zip_broadcast(&up, y, |u, y| if y > 0.0 { 0.5 * u / y } else { 0.0 }),
                    );
                }
                Op::Exp(a) => acc(*a, zip_broadcast(&up, &node.value, |u, y| u * y)),
                Op::Sum(a) => {
                    let u = up.data()[0];
                    acc(*a, Tensor::filled(self.value(*a).shape(), u));
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let u = up.data()[0] / x.numel() as f64;
                    acc(*a, Tensor::filled(x.shape(), u));
                }
                Op::Reshape(a) => acc(*a, up.reshape(self.value(*a).shape().to_vec())?),
                Op::Conv {
                    input,
                    kernels,
                    bias,
                    geom,
                } => {
                    let (xv, kv) = (self.value(*input), self.value(*kernels));
                    let (d_in, d_k) = conv_backward(*geom, xv.data(), kv.data(), up.data());
                    acc(*input, Tensor::new(xv.shape().to_vec(), d_in)?);
                    acc(*kernels, Tensor::new(kv.shape().to_vec(), d_k)?);
                    if let Some(b) = bias {
                        let plane = geom.out_h() * geom.out_w();
                        let mut db = vec![0.0; geom.out_ch];
                        for (i, chunk) in up.data().chunks(plane).enumerate() {
                            db[i % geom.out_ch] += chunk.iter().sum::<f64>();
                        }
                        acc(*b, Tensor::new(vec![geom.out_ch], db)?);
                    }
                }
                Op::MaxPool2 { input, argmax } => {
                    let x = self.value(*input);
                    let mut g = vec![0.0; x.numel()];
                    for (&src, &u) in argmax.iter().zip(up.data()) {
                        g[src] += u;
                    }
                    acc(*input, Tensor::new(x.shape().to_vec(), g)?);
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 5.0]).unwrap());
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.square(x);
        assert_eq!(g.scalar(y).unwrap(), 9.0);
        assert_eq!(g.backward(y).unwrap().wrt(x).data(), &[6.0]);
    }

    #[test]
    fn relu_and_mean() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let m = g.mean(r);
        // kink at 0 takes subgradient 0
        assert_eq!(g.backward(m).unwrap().wrt(x).data(), &[0.0, 0.0, 1.0 / 3.0]);
        let y = g.leaf(Tensor::new(vec![2], vec![2.0, 4.0]).unwrap());
        let my = g.mean(y);
        assert_eq!(g.scalar(my).unwrap(), 3.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn incompatible_shapes_rejected() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]));
        let b = g.leaf(Tensor::zeros(&[3, 2]));
        assert!(matches!(g.add(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = g.leaf(Tensor::scalar(2.0));
        let p = g.mul(a, c).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(c).data(), &[10.0]);
        assert_eq!(grads.wrt(a).data(), &[2.0; 4]);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2, 2], vec![1.0, 4.0, 3.0, 2.0]).unwrap());
        let p = g.maxpool2(x).unwrap();
        assert_eq!(g.value(p).data(), &[4.0]);
        let s = g.sum(p);
        assert_eq!(g.backward(s).unwrap().wrt(x).data(), &[0.0, 1.0, 0.0, 0.0]);
    }
}
