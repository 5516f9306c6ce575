use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 2-D convolution whose output filters can be hard-removed or zeroed.
///
/// `live_mask` has one slot per filter the layer was built with; a `false`
/// slot has been hard-removed. The current filters are the `true` slots in
/// order, so `weight.shape()[0] == live_mask.iter().filter(|l| **l).count()`.
#[derive(Debug, Clone)]
pub struct PrunableConv {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub live_mask: Vec<bool>,
    pub original_n_out: usize,
    /// Per-filter |sum(dL/dH * H)| accumulated by the graph when feature-map
    /// saliency tracking is on. Zeroed together with the gradients.
    pub feature_saliency: Vec<f64>,
    /// Current filters zeroed by the most recent soft prune.
    pub soft_mask: Vec<bool>,
}

/// Output spatial size of a convolution along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Range of output positions `o` for which `o * stride + offset - padding`
/// lands inside `[0, len)`.
#[inline]
fn valid_range(len: usize, out_len: usize, offset: usize, stride: usize, padding: usize) -> (usize, usize) {
    // need o*stride + offset >= padding and o*stride + offset - padding <= len - 1
    let lo = if offset >= padding {
        0
    } else {
        (padding - offset).div_ceil(stride)
    };
    let hi_excl = if len + padding < offset + 1 {
        0
    } else {
        ((len - 1 + padding - offset) / stride + 1).min(out_len)
    };
    (lo, hi_excl.max(lo))
}

impl PrunableConv {
    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and bias.
    pub fn new<R: Rng>(
        name: impl Into<String>,
        n_in: usize,
        n_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (n_in * kernel * kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let wshape = [n_out, n_in, kernel, kernel];
        let wdata = (0..wshape.iter().product::<usize>())
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bdata = (0..n_out).map(|_| rng.random_range(-bound..bound)).collect();
        Self::from_parts(
            name,
            Tensor::new(wshape.to_vec(), wdata).expect("shape matches data"),
            Tensor::from_vec(bdata),
            stride,
            padding,
        )
        .expect("consistent construction")
    }

    pub fn from_parts(
        name: impl Into<String>,
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let name = name.into();
        if weight.rank() != 4 || weight.shape()[2] != weight.shape()[3] {
            return Err(Error::Graph(format!(
                "conv `{name}` weight must be n_out x n_in x k x k, got {:?}",
                weight.shape()
            )));
        }
        if bias.shape() != [weight.shape()[0]] {
            return Err(Error::ShapeMismatch {
                op: "conv bias",
                left: bias.shape().to_vec(),
                right: vec![weight.shape()[0]],
            });
        }
        if stride == 0 {
            return Err(Error::Graph(format!("conv `{name}` has stride 0")));
        }
        let n_out = weight.shape()[0];
        Ok(Self {
            name,
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weight,
            bias,
            stride,
            padding,
            live_mask: vec![true; n_out],
            original_n_out: n_out,
            feature_saliency: vec![0.0; n_out],
            soft_mask: vec![false; n_out],
        })
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Original slot index of every current filter.
    pub fn live_slots(&self) -> Vec<usize> {
        self.live_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &live)| live.then_some(i))
            .collect()
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        match (
            conv_out_dim(h, k, self.stride, self.padding),
            conv_out_dim(w, k, self.stride, self.padding),
        ) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => Err(Error::ShapeMismatch {
                op: "conv2d spatial size",
                left: vec![h, w],
                right: vec![k, k],
            }),
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if self.n_out() == 0 {
            return Err(Error::LayerFullyPruned(self.name.clone()));
        }
        if input.rank() != 4 || input.shape()[1] != self.n_in() {
            return Err(Error::ShapeMismatch {
                op: "conv2d input channels",
                left: input.shape().to_vec(),
                right: self.weight.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Direct convolution over an NCHW batch.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let (n, c, h, w) = dims4(input);
        let (ho, wo) = self.output_hw(h, w)?;
        let (n_out, k, s, p) = (self.n_out(), self.kernel(), self.stride, self.padding);
        let wt = self.weight.data();
        let x = input.data();
        let mut out = vec![0.0; n * n_out * ho * wo];
        for b in 0..n {
            for oc in 0..n_out {
                let plane = &mut out[(b * n_out + oc) * ho * wo..(b * n_out + oc + 1) * ho * wo];
                plane.fill(self.bias.data()[oc]);
                for ic in 0..c {
                    let xin = &x[(b * c + ic) * h * w..(b * c + ic + 1) * h * w];
                    let wbase = ((oc * c) + ic) * k * k;
                    for kh in 0..k {
                        let (oh_lo, oh_hi) = valid_range(h, ho, kh, s, p);
                        for kw in 0..k {
                            let wv = wt[wbase + kh * k + kw];
                            let (ow_lo, ow_hi) = valid_range(w, wo, kw, s, p);
                            if ow_lo >= ow_hi {
                                continue;
                            }
                            for oh in oh_lo..oh_hi {
                                let ih = oh * s + kh - p;
                                let orow = &mut plane[oh * wo + ow_lo..oh * wo + ow_hi];
                                let irow = &xin[ih * w..(ih + 1) * w];
                                if s == 1 {
                                    let start = ow_lo + kw - p;
                                    let len = orow.len();
                                    for (o, &i) in orow.iter_mut().zip(&irow[start..start + len]) {
                                        *o += wv * i;
                                    }
                                } else {
                                    for (j, o) in orow.iter_mut().enumerate() {
                                        *o += wv * irow[(ow_lo + j) * s + kw - p];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![n, n_out, ho, wo], out)
    }

    /// Accumulates `grad_weight`/`grad_bias` and returns the gradient with
    /// respect to `input`.
    pub fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        self.backward_with(input, grad_out, true)
            .map(|g| g.expect("input gradient requested"))
    }

    /// Like [`PrunableConv::backward`] but skips the input gradient when the
    /// caller does not need it (first layer of a network).
    pub fn backward_with(
        &mut self,
        input: &Tensor,
        grad_out: &Tensor,
        want_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        self.check_input(input)?;
        let (n, c, h, w) = dims4(input);
        let (ho, wo) = self.output_hw(h, w)?;
        let n_out = self.n_out();
        if grad_out.shape() != [n, n_out, ho, wo] {
            return Err(Error::ShapeMismatch {
                op: "conv2d backward grad_out",
                left: grad_out.shape().to_vec(),
                right: vec![n, n_out, ho, wo],
            });
        }
        let (k, s, p) = (self.kernel(), self.stride, self.padding);
        let x = input.data();
        let g = grad_out.data();
        let wt = self.weight.data();

        // Increments are formed in full before being added so that repeated
        // identical backward passes accumulate exactly.
        let mut gw_inc = vec![0.0; self.weight.len()];
        let mut gb_inc = vec![0.0; n_out];
        let mut gin = if want_input_grad {
            Some(vec![0.0; input.len()])
        } else {
            None
        };

        for b in 0..n {
            for oc in 0..n_out {
                let gplane = &g[(b * n_out + oc) * ho * wo..(b * n_out + oc + 1) * ho * wo];
                gb_inc[oc] += gplane.iter().sum::<f64>();
                for ic in 0..c {
                    let xoff = (b * c + ic) * h * w;
                    let xin = &x[xoff..xoff + h * w];
                    let wbase = ((oc * c) + ic) * k * k;
                    for kh in 0..k {
                        let (oh_lo, oh_hi) = valid_range(h, ho, kh, s, p);
                        for kw in 0..k {
                            let (ow_lo, ow_hi) = valid_range(w, wo, kw, s, p);
                            if ow_lo >= ow_hi {
                                continue;
                            }
                            let wv = wt[wbase + kh * k + kw];
                            let mut acc = 0.0;
                            for oh in oh_lo..oh_hi {
                                let ih = oh * s + kh - p;
                                let grow = &gplane[oh * wo + ow_lo..oh * wo + ow_hi];
                                if s == 1 {
                                    let start = ih * w + ow_lo + kw - p;
                                    let irow = &xin[start..start + grow.len()];
                                    acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                                    if let Some(gin) = gin.as_mut() {
                                        let dst = &mut gin[xoff + start..xoff + start + grow.len()];
                                        for (d, &gv) in dst.iter_mut().zip(grow) {
                                            *d += wv * gv;
                                        }
                                    }
                                } else {
                                    for (j, &gv) in grow.iter().enumerate() {
                                        let idx = ih * w + (ow_lo + j) * s + kw - p;
                                        acc += gv * xin[idx];
                                        if let Some(gin) = gin.as_mut() {
                                            gin[xoff + idx] += wv * gv;
                                        }
                                    }
                                }
                            }
                            gw_inc[wbase + kh * k + kw] += acc;
                        }
                    }
                }
            }
        }

        for (dst, inc) in self.grad_weight.data_mut().iter_mut().zip(&gw_inc) {
            *dst += inc;
        }
        for (dst, inc) in self.grad_bias.data_mut().iter_mut().zip(&gb_inc) {
            *dst += inc;
        }
        gin.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()
    }

    pub fn zero_grads(&mut self) {
        self.grad_weight.fill(0.0);
        self.grad_bias.fill(0.0);
        self.feature_saliency.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Keeps only the filters listed in `keep` (current indices, increasing),
    /// slicing weight, bias, and their gradient buffers together.
    pub fn retain_filters(&mut self, keep: &[usize]) -> Result<()> {
        let weight = self.weight.slice_axis0(keep)?;
        let bias = self.bias.slice_axis0(keep)?;
        let grad_weight = self.grad_weight.slice_axis0(keep)?;
        let grad_bias = self.grad_bias.slice_axis0(keep)?;
        let slots = self.live_slots();
        let mut mask = vec![false; self.original_n_out];
        for &k in keep {
            mask[slots[k]] = true;
        }
        self.feature_saliency = keep.iter().map(|&k| self.feature_saliency[k]).collect();
        self.soft_mask = keep.iter().map(|&k| self.soft_mask[k]).collect();
        self.weight = weight;
        self.bias = bias;
        self.grad_weight = grad_weight;
        self.grad_bias = grad_bias;
        self.live_mask = mask;
        Ok(())
    }

    /// Zeroes the listed filters (weights, bias, and gradient buffers).
    pub fn zero_filters(&mut self, rows: &[usize]) -> Result<()> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_out()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.n_out(),
                context: "zero_filters",
            });
        }
        self.weight.zero_rows(rows)?;
        self.bias.zero_rows(rows)?;
        self.grad_weight.zero_rows(rows)?;
        self.grad_bias.zero_rows(rows)?;
        for &r in rows {
            self.feature_saliency[r] = 0.0;
            self.soft_mask[r] = true;
        }
        Ok(())
    }

    pub fn soft_count(&self) -> usize {
        self.soft_mask.iter().filter(|s| **s).count()
    }

    pub fn soft_rows(&self) -> Vec<usize> {
        (0..self.soft_mask.len()).filter(|&i| self.soft_mask[i]).collect()
    }

    /// Forgets which filters were soft-pruned (the next partition replaces them).
    pub fn clear_soft_mask(&mut self) {
        self.soft_mask.iter_mut().for_each(|s| *s = false);
    }

    /// Drops input channels not listed in `keep` (axis 1 of the weight).
    pub fn retain_input_channels(&mut self, keep: &[usize]) -> Result<()> {
        let weight = self.weight.slice_axis1(keep)?;
        let grad_weight = self.grad_weight.slice_axis1(keep)?;
        self.weight = weight;
        self.grad_weight = grad_weight;
        Ok(())
    }
}

pub(crate) fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2], s[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv(weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> PrunableConv {
        PrunableConv::from_parts("c", weight, bias, stride, padding).unwrap()
    }

    #[test]
    fn all_ones_three_by_three() {
        let layer = conv(Tensor::ones(&[1, 1, 3, 3]), Tensor::from_vec(vec![0.5]), 1, 0);
        let out = layer.forward(&Tensor::ones(&[1, 1, 3, 3])).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[9.5]);
    }

    #[test]
    fn unit_one_by_one_kernel_is_identity() {
        let layer = conv(Tensor::ones(&[1, 1, 1, 1]), Tensor::zeros(&[1]), 1, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..2 * 25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::new(vec![2, 1, 5, 5], data).unwrap();
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn output_shape_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = PrunableConv::new("c", 3, 4, 3, 1, 0, &mut rng);
        let x = Tensor::ones(&[2, 3, 8, 8]);
        assert_eq!(layer.forward(&x).unwrap().shape(), &[2, 4, 6, 6]);

        let strided = PrunableConv::new("s", 3, 4, 3, 2, 1, &mut rng);
        assert_eq!(strided.forward(&x).unwrap().shape(), &[2, 4, 4, 4]);
        let one = PrunableConv::new("d", 3, 2, 1, 2, 0, &mut rng);
        assert_eq!(one.forward(&Tensor::ones(&[1, 3, 7, 7])).unwrap().shape(), &[1, 2, 4, 4]);
    }

    #[test]
    fn rejects_channel_mismatch_and_empty_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = PrunableConv::new("c", 3, 2, 3, 1, 0, &mut rng);
        assert!(matches!(
            layer.forward(&Tensor::ones(&[1, 2, 5, 5])),
            Err(Error::ShapeMismatch { .. })
        ));
        layer.retain_filters(&[]).unwrap();
        assert!(matches!(
            layer.forward(&Tensor::ones(&[1, 3, 5, 5])),
            Err(Error::LayerFullyPruned(_))
        ));
    }

    #[test]
    fn zero_grad_out_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = PrunableConv::new("c", 2, 3, 3, 1, 1, &mut rng);
        let x = Tensor::ones(&[1, 2, 5, 5]);
        let gin = layer.backward(&x, &Tensor::zeros(&[1, 3, 5, 5])).unwrap();
        assert_eq!(gin.max_abs(), 0.0);
        assert_eq!(layer.grad_weight.max_abs(), 0.0);
        assert_eq!(layer.grad_bias.max_abs(), 0.0);
    }

    #[test]
    fn backward_accumulates_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layer = PrunableConv::new("c", 2, 3, 3, 1, 0, &mut rng);
        let x = Tensor::new(
            vec![2, 2, 5, 5],
            (0..100).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let g = Tensor::new(
            vec![2, 3, 3, 3],
            (0..54).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        layer.backward(&x, &g).unwrap();
        let once = layer.grad_weight.clone();
        let once_b = layer.grad_bias.clone();
        layer.backward(&x, &g).unwrap();
        assert_eq!(layer.grad_weight, once.scale(2.0));
        assert_eq!(layer.grad_bias, once_b.scale(2.0));
    }

    #[test]
    fn retain_filters_tracks_original_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut layer = PrunableConv::new("c", 1, 4, 3, 1, 0, &mut rng);
        let w2 = layer.weight.row(2).to_vec();
        layer.retain_filters(&[0, 2, 3]).unwrap();
        assert_eq!(layer.live_mask, vec![true, false, true, true]);
        layer.retain_filters(&[0, 1]).unwrap();
        assert_eq!(layer.live_mask, vec![true, false, true, false]);
        assert_eq!(layer.live_slots(), vec![0, 2]);
        assert_eq!(layer.weight.row(1), &w2[..]);
        assert_eq!(layer.original_n_out, 4);
        assert_eq!(layer.grad_weight.shape(), layer.weight.shape());
    }

    #[test]
    fn valid_range_matches_brute_force() {
        for len in 1..9 {
            for k in 1..5 {
                for s in 1..4 {
                    for p in 0..3 {
                        let Some(out) = conv_out_dim(len, k, s, p) else { continue };
                        for off in 0..k {
                            let (lo, hi) = valid_range(len, out, off, s, p);
                            let brute: Vec<usize> = (0..out)
                                .filter(|&o| {
                                    let pos = (o * s + off) as isize - p as isize;
                                    pos >= 0 && (pos as usize) < len
                                })
                                .collect();
                            let got: Vec<usize> = (lo..hi).collect();
                            assert_eq!(got, brute, "len={len} k={k} s={s} p={p} off={off}");
                        }
                    }
                }
            }
        }
    }
}
