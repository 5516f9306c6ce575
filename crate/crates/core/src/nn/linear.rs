use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fully connected layer, `y = x W^T + b` with `W` stored out x in.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
}

impl LinearLayer {
    pub fn new<R: Rng>(name: impl Into<String>, n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        let w = (0..n_in * n_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let b = (0..n_out).map(|_| rng.random_range(-bound..bound)).collect();
        Self::from_parts(
            name,
            Tensor::new(vec![n_out, n_in], w).expect("sizes agree"),
            Tensor::from_vec(b),
        )
        .expect("consistent construction")
    }

    pub fn from_parts(name: impl Into<String>, weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::ShapeMismatch {
                op: "linear construction",
                left: weight.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            name: name.into(),
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weight,
            bias,
        })
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape()[0]
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.rank() != 2 || input.shape()[1] != self.n_in() {
            return Err(Error::ShapeMismatch {
                op: "linear input",
                left: input.shape().to_vec(),
                right: self.weight.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let (n, d_in, d_out) = (input.shape()[0], self.n_in(), self.n_out());
        let mut out = vec![0.0; n * d_out];
        for b in 0..n {
            let x = input.row(b);
            for o in 0..d_out {
                let w = self.weight.row(o);
                out[b * d_out + o] =
                    self.bias.data()[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        debug_assert_eq!(input.len(), n * d_in);
        Tensor::new(vec![n, d_out], out)
    }

    pub fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let (n, d_in, d_out) = (input.shape()[0], self.n_in(), self.n_out());
        if grad_out.shape() != [n, d_out] {
            return Err(Error::ShapeMismatch {
                op: "linear backward grad_out",
                left: grad_out.shape().to_vec(),
                right: vec![n, d_out],
            });
        }
        let mut gw_inc = vec![0.0; d_out * d_in];
        let mut gb_inc = vec![0.0; d_out];
        let mut gin = vec![0.0; n * d_in];
        for b in 0..n {
            let x = input.row(b);
            let g = grad_out.row(b);
            let gi = &mut gin[b * d_in..(b + 1) * d_in];
            for o in 0..d_out {
                let gv = g[o];
                gb_inc[o] += gv;
                let w = self.weight.row(o);
                let dw = &mut gw_inc[o * d_in..(o + 1) * d_in];
                for i in 0..d_in {
                    dw[i] += gv * x[i];
                    gi[i] += gv * w[i];
                }
            }
        }
        for (dst, inc) in self.grad_weight.data_mut().iter_mut().zip(&gw_inc) {
            *dst += inc;
        }
        for (dst, inc) in self.grad_bias.data_mut().iter_mut().zip(&gb_inc) {
            *dst += inc;
        }
        Tensor::new(vec![n, d_in], gin)
    }

    pub fn zero_grads(&mut self) {
        self.grad_weight.fill(0.0);
        self.grad_bias.fill(0.0);
    }

    /// Keeps only the listed input features (axis 1 of the weight).
    pub fn retain_inputs(&mut self, keep: &[usize]) -> Result<()> {
        let weight = self.weight.slice_axis1(keep)?;
        let grad_weight = self.grad_weight.slice_axis1(keep)?;
        self.weight = weight;
        self.grad_weight = grad_weight;
        Ok(())
    }
}

/// Input-feature indices of a flattened C x H x W map that survive when only
/// the channels in `keep_channels` are kept. Each channel owns a contiguous
/// block of `block` features.
pub fn flatten_keep_indices(keep_channels: &[usize], block: usize) -> Vec<usize> {
    keep_channels
        .iter()
        .flat_map(|&c| c * block..(c + 1) * block)
        .collect()
}
