use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu_forward(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Passes the gradient only where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch {
            op: "relu backward",
            left: input.shape().to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped.
/// Returns the pooled map and, per output element, the flat input index
/// that won (first maximum in row-major window order).
pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    if input.rank() != 4 || input.shape()[2] < 2 || input.shape()[3] < 2 {
        return Err(Error::ShapeMismatch {
            op: "maxpool2x2 input",
            left: input.shape().to_vec(),
            right: vec![2, 2],
        });
    }
    let s = input.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = base + (2 * oh) * w + 2 * ow;
                for (dh, dw) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oh + dh) * w + 2 * ow + dw;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, argmax))
}

pub fn maxpool2x2_backward(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor,
) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::ShapeMismatch {
            op: "maxpool2x2 backward",
            left: vec![argmax.len()],
            right: grad_out.shape().to_vec(),
        });
    }
    let mut gin = Tensor::zeros(input_shape);
    let d = gin.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    Ok(gin)
}

/// NCHW -> N x (C*H*W).
pub fn flatten(input: &Tensor) -> Result<Tensor> {
    let n = *input.shape().first().ok_or(Error::ShapeMismatch {
        op: "flatten",
        left: vec![],
        right: vec![],
    })?;
    let rest = input.row_len();
    input.clone().reshape(&[n, rest])
}

/// Mean softmax cross-entropy over the batch. Returns the loss and the
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            left: logits.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    let (n, classes) = (logits.shape()[0], logits.shape()[1]);
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut grad = vec![0.0; n * classes];
    let mut loss = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let row = logits.row(b);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() + max - row[label];
        let g = &mut grad[b * classes..(b + 1) * classes];
        for (k, e) in exps.iter().enumerate() {
            g[k] = e / z / n as f64;
        }
        g[label] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, Tensor::new(vec![n, classes], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_c() {
        for c in [2usize, 10, 37] {
            let (loss, grad) = softmax_cross_entropy(&Tensor::zeros(&[3, c]), &[0, 1, c - 1]).unwrap();
            assert!((loss - (c as f64).ln()).abs() < 1e-12);
            // rows of the gradient sum to zero
            for b in 0..3 {
                assert!(grad.row(b).iter().sum::<f64>().abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_out_of_range_label() {
        assert!(matches!(
            softmax_cross_entropy(&Tensor::zeros(&[1, 10]), &[10]),
            Err(Error::LabelOutOfRange { label: 10, classes: 10 })
        ));
    }

    #[test]
    fn relu_backward_masks_by_input_sign() {
        let x = Tensor::from_vec(vec![-1.0, 0.0, 2.0]);
        let g = Tensor::from_vec(vec![5.0, 6.0, 7.0]);
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 7.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn maxpool_routes_gradient_to_winner() {
        let x = Tensor::new(vec![1, 1, 2, 3], vec![1., 5., 0., 2., 3., 9.]).unwrap();
        let (y, arg) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
        let g = maxpool2x2_backward(x.shape(), &arg, &Tensor::ones(&[1, 1, 1, 1])).unwrap();
        assert_eq!(g.data(), &[0., 1., 0., 0., 0., 0.]);
    }

    #[test]
    fn zero_channel_stays_zero_through_relu_and_pool() {
        let x = Tensor::zeros(&[2, 1, 4, 4]);
        let (y, _) = maxpool2x2_forward(&relu_forward(&x)).unwrap();
        assert_eq!(y.max_abs(), 0.0);
    }
}
