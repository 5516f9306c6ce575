use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel batch normalization over N, H, W of an NCHW tensor.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub name: String,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub grad_gamma: Tensor,
    pub grad_beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub epsilon: f64,
    pub momentum_bn: f64,
}

/// Values saved by the training-mode forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

impl BatchNormState {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            grad_gamma: Tensor::zeros(&[channels]),
            grad_beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            epsilon: 1e-5,
            momentum_bn: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, input: &Tensor) -> Result<(usize, usize, usize)> {
        if input.rank() != 4 || input.shape()[1] != self.channels() {
            return Err(Error::ShapeMismatch {
                op: "batchnorm input",
                left: input.shape().to_vec(),
                right: vec![self.channels()],
            });
        }
        let s = input.shape();
        Ok((s[0], s[1], s[2] * s[3]))
    }

    /// Normalizes with batch statistics and folds them into the running
    /// estimates (unbiased variance, factor `momentum_bn`).
    pub fn forward_train(&mut self, input: &Tensor) -> Result<(Tensor, BatchNormCache)> {
        let (n, c, hw) = self.check(input)?;
        if n < 2 {
            return Err(Error::DegenerateBatch(n));
        }
        let m = (n * hw) as f64;
        let x = input.data();
        let mut out = vec![0.0; x.len()];
        let mut normalized = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let mut mean = 0.0;
            for b in 0..n {
                mean += x[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().sum::<f64>();
            }
            mean /= m;
            let mut var = 0.0;
            for b in 0..n {
                var += x[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>();
            }
            var /= m;
            let istd = 1.0 / (var + self.epsilon).sqrt();
            inv_std[ch] = istd;
            let (g, bt) = (self.gamma.data()[ch], self.beta.data()[ch]);
            for b in 0..n {
                let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                for i in range {
                    let xh = (x[i] - mean) * istd;
                    normalized[i] = xh;
                    out[i] = g * xh + bt;
                }
            }
            let mom = self.momentum_bn;
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = (1.0 - mom) * *rm + mom * mean;
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = (1.0 - mom) * *rv + mom * var * m / (m - 1.0);
        }
        let shape = input.shape().to_vec();
        Ok((
            Tensor::new(shape.clone(), out)?,
            BatchNormCache {
                normalized: Tensor::new(shape, normalized)?,
                inv_std,
            },
        ))
    }

    pub fn forward_eval(&self, input: &Tensor) -> Result<Tensor> {
        let (n, c, hw) = self.check(input)?;
        let x = input.data();
        let mut out = vec![0.0; x.len()];
        for ch in 0..c {
            let istd = 1.0 / (self.running_var.data()[ch] + self.epsilon).sqrt();
            let mean = self.running_mean.data()[ch];
            let (g, bt) = (self.gamma.data()[ch], self.beta.data()[ch]);
            for b in 0..n {
                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                    out[i] = g * (x[i] - mean) * istd + bt;
                }
            }
        }
        Tensor::new(input.shape().to_vec(), out)
    }

    pub fn backward(&mut self, cache: &BatchNormCache, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.shape() != cache.normalized.shape() {
            return Err(Error::ShapeMismatch {
                op: "batchnorm backward",
                left: grad_out.shape().to_vec(),
                right: cache.normalized.shape().to_vec(),
            });
        }
        let (n, c, hw) = self.check(grad_out)?;
        let m = (n * hw) as f64;
        let g = grad_out.data();
        let xh = cache.normalized.data();
        let mut gin = vec![0.0; g.len()];
        for ch in 0..c {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for b in 0..n {
                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                    sum_g += g[i];
                    sum_gx += g[i] * xh[i];
                }
            }
            self.grad_beta.data_mut()[ch] += sum_g;
            self.grad_gamma.data_mut()[ch] += sum_gx;
            let scale = self.gamma.data()[ch] * cache.inv_std[ch] / m;
            for b in 0..n {
                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                    gin[i] = scale * (m * g[i] - sum_g - xh[i] * sum_gx);
                }
            }
        }
        Tensor::new(grad_out.shape().to_vec(), gin)
    }

    pub fn zero_grads(&mut self) {
        self.grad_gamma.fill(0.0);
        self.grad_beta.fill(0.0);
    }

    pub fn retain_channels(&mut self, keep: &[usize]) -> Result<()> {
        let gamma = self.gamma.slice_axis0(keep)?;
        let beta = self.beta.slice_axis0(keep)?;
        let gg = self.grad_gamma.slice_axis0(keep)?;
        let gb = self.grad_beta.slice_axis0(keep)?;
        let rm = self.running_mean.slice_axis0(keep)?;
        let rv = self.running_var.slice_axis0(keep)?;
        self.gamma = gamma;
        self.beta = beta;
        self.grad_gamma = gg;
        self.grad_beta = gb;
        self.running_mean = rm;
        self.running_var = rv;
        Ok(())
    }

    /// Soft-prunes channels fed by zeroed filters: shift and gradients go to
    /// zero and running statistics return to their initial values, so a zero
    /// input channel maps to an exactly zero output in both modes. The scale
    /// is left alone; zeroing it would block every gradient into the filter.
    pub fn zero_channels(&mut self, rows: &[usize]) -> Result<()> {
        self.beta.zero_rows(rows)?;
        self.grad_gamma.zero_rows(rows)?;
        self.grad_beta.zero_rows(rows)?;
        self.running_mean.zero_rows(rows)?;
        for &r in rows {
            self.running_var.data_mut()[r] = 1.0;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_single_sample_batch() {
        let mut bn = BatchNormState::new("bn", 2);
        assert!(matches!(
            bn.forward_train(&Tensor::ones(&[1, 2, 3, 3])),
            Err(Error::DegenerateBatch(1))
        ));
    }

    #[test]
    fn train_output_is_standardized() {
        let mut bn = BatchNormState::new("bn", 1);
        let x = Tensor::new(vec![2, 1, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let (y, _) = bn.forward_train(&x).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 4.0;
        let var: f64 = y.data().iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.25 / (1.25 + 1e-5)).abs() < 1e-12);
        // running stats: mean 2.5, unbiased var 5/3
        assert!((bn.running_mean.data()[0] - 0.25).abs() < 1e-12);
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn zeroed_channel_outputs_zero() {
        let mut bn = BatchNormState::new("bn", 2);
        bn.running_mean.data_mut()[1] = 0.7;
        bn.zero_channels(&[1]).unwrap();
        let mut x = Tensor::ones(&[2, 2, 2, 2]);
        for b in 0..2 {
            for i in 0..4 {
                x.data_mut()[(b * 2 + 1) * 4 + i] = 0.0;
            }
        }
        let (y, _) = bn.forward_train(&x).unwrap();
        let e = bn.forward_eval(&x).unwrap();
        for b in 0..2 {
            for i in 0..4 {
                assert_eq!(y.data()[(b * 2 + 1) * 4 + i], 0.0);
                assert_eq!(e.data()[(b * 2 + 1) * 4 + i], 0.0);
            }
        }
    }
}
