//! Dense layers and multi-layer perceptrons on top of the tape.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};

/// Negative slope used by every leaky ReLU in the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    /// Xavier-normal weights, `N(0, 2 / (in + out))`, and a zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(TensorError::InvalidArgument {
                op: "init_dense",
                msg: format!("dimensions must be positive, got {in_dim}×{out_dim}"),
            });
        }
        let std = (2.0 / (in_dim + out_dim) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let weights = (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect();
        Ok(Self {
            weight: Tensor::param(vec![in_dim, out_dim], weights)?,
            bias: Tensor::param(vec![out_dim], vec![0.0; out_dim])?,
            activation,
        })
    }

    /// Wraps explicit parameters; both are marked trainable.
    pub fn from_parts(mut weight: Tensor, mut bias: Tensor, activation: Activation) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 2 || bias.shape() != [ws[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                lhs: ws.to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        weight.set_requires_grad(true);
        bias.set_requires_grad(true);
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Tape handles for the parameters of one [`Mlp`] bound to one tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    vars: Vec<(Var, Var)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "mlp",
                msg: "at least one layer is required".into(),
            });
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(TensorError::ShapeMismatch {
                    op: "mlp",
                    lhs: pair[0].weight.shape().to_vec(),
                    rhs: pair[1].weight.shape().to_vec(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Builds `dims[0] → dims[1] → … → dims[n]`, with `hidden` between layers
    /// and `output` after the last one.
    pub fn build<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(TensorError::InvalidArgument {
                op: "mlp",
                msg: format!("need at least input and output dims, got {dims:?}"),
            });
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                DenseLayer::init(w[0], w[1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Places the parameters on `tape`, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let vars = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.leaf(&l.weight), tape.leaf(&l.bias))
                } else {
                    (tape.constant(&l.weight), tape.constant(&l.bias))
                }
            })
            .collect();
        BoundMlp { vars }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &BoundMlp, x: Var) -> Result<Var> {
        let xs = tape.shape(x);
        if xs.len() != 2 || xs[1] != self.in_dim() {
            return Err(TensorError::ShapeMismatch {
                op: "mlp_forward",
                lhs: xs.to_vec(),
                rhs: vec![self.in_dim(), self.out_dim()],
            });
        }
        let mut h = x;
        for (layer, &(w, b)) in self.layers.iter().zip(&bound.vars) {
            let z = tape.matmul(h, w)?;
            let z = tape.add(z, b)?;
            h = layer.activation.apply(tape, z);
        }
        Ok(h)
    }

    /// Tapeless inference on a `[batch × in_dim]` tensor.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x);
        let y = self.forward(&mut tape, &bound, xv)?;
        Ok(tape.to_tensor(y))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Parameters keyed `{prefix}.{layer}.weight` / `{prefix}.{layer}.bias`.
    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.{i}.weight"), &l.weight),
                    (format!("{prefix}.{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.{i}.weight"), &mut l.weight),
                    (format!("{prefix}.{i}.bias"), &mut l.bias),
                ]
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    /// Adds the gradients of a backward pass onto the parameter grad slots.
    /// Parameters the pass did not reach receive an explicit zero.
    pub fn accumulate_grads(&mut self, grads: &Gradients, bound: &BoundMlp) -> Result<()> {
        for (layer, &(w, b)) in self.layers.iter_mut().zip(&bound.vars) {
            for (p, v) in [(&mut layer.weight, w), (&mut layer.bias, b)] {
                match grads.get(v) {
                    Some(g) => p.accumulate_grad(g)?,
                    None => p.accumulate_grad(&vec![0.0; p.len()])?,
                }
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_shapes_and_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = DenseLayer::init(4, 3, Activation::Tanh, &mut rng).unwrap();
        assert_eq!(l.weight.shape(), &[4, 3]);
        assert_eq!(l.bias.data(), &[0.0, 0.0, 0.0]);
        assert!(l.weight.requires_grad() && l.bias.requires_grad());
    }

    #[test]
    fn init_rejects_zero_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(DenseLayer::init(0, 3, Activation::Tanh, &mut rng).is_err());
        assert!(DenseLayer::init(3, 0, Activation::Tanh, &mut rng).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = DenseLayer::init(5, 7, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(9));
        let b = DenseLayer::init(5, 7, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a.unwrap(), b.unwrap());
    }

    #[test]
    fn init_variance_is_xavier() {
        // 100 layers of 100×100 gives 10^6 draws; target variance 2/200.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut n = 0usize;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..100 {
            let l = DenseLayer::init(100, 100, Activation::Identity, &mut rng).unwrap();
            for &w in l.weight.data() {
                s += w;
                s2 += w * w;
                n += 1;
            }
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((var - 0.01).abs() < 0.0005, "variance {var}");
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let w = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let b = Tensor::zeros(vec![3]);
        let net = Mlp::new(vec![DenseLayer::from_parts(w, b, Activation::Identity).unwrap()]).unwrap();
        let x = Tensor::from_rows(&[[0.5, -1.0, 2.0], [3.0, 0.0, -0.25]]).unwrap();
        assert_eq!(net.predict(&x).unwrap().data(), x.data());
    }

    #[test]
    fn mismatched_chain_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = DenseLayer::init(2, 3, Activation::Tanh, &mut rng).unwrap();
        let b = DenseLayer::init(4, 1, Activation::Tanh, &mut rng).unwrap();
        assert!(Mlp::new(vec![a, b]).is_err());
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::build(&[3, 4, 2], Activation::LeakyRelu, Activation::Tanh, &mut rng).unwrap();
        assert!(net.predict(&Tensor::zeros(vec![2, 4])).is_err());
    }

    #[test]
    fn output_codomains() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(vec![64, 6], &mut rng).reshaped(vec![64, 6]).unwrap();
        let x = Tensor::new(vec![64, 6], x.data().iter().map(|v| v * 30.0).collect()).unwrap();
        for (act, lo, hi) in [(Activation::Tanh, -1.0, 1.0), (Activation::Sigmoid, 0.0, 1.0)] {
            let net = Mlp::build(&[6, 16, 3], Activation::LeakyRelu, act, &mut rng).unwrap();
            let y = net.predict(&x).unwrap();
            assert!(y.data().iter().all(|&v| v >= lo && v <= hi));
        }
    }

    #[test]
    fn two_layer_matches_scalar_unroll() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::build(&[3, 4, 2], Activation::LeakyRelu, Activation::Tanh, &mut rng).unwrap();
        let x = Tensor::randn(vec![2, 3], &mut rng);
        let y = net.predict(&x).unwrap();

        let [l1, l2] = net.layers() else { unreachable!() };
        for r in 0..2 {
            let xr = x.row(r);
            let mut h = [0.0; 4];
            for (j, hj) in h.iter_mut().enumerate() {
                let mut s = l1.bias.data()[j];
                for (i, xi) in xr.iter().enumerate() {
                    s += xi * l1.weight.data()[i * 4 + j];
                }
                *hj = if s > 0.0 { s } else { LEAKY_SLOPE * s };
            }
            for k in 0..2 {
                let mut s = l2.bias.data()[k];
                for (j, hj) in h.iter().enumerate() {
                    s += hj * l2.weight.data()[j * 2 + k];
                }
                assert!((y.row(r)[k] - s.tanh()).abs() < 1e-12);
            }
        }
    }
}
