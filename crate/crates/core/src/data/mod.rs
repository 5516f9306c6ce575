//! Dataset loading (MNIST IDX, CIFAR-10 binary), a synthetic dataset, and
//! deterministic batching.

mod loaders;
mod synth;

pub use loaders::{load_cifar10_bin, load_mnist_idx, parse_cifar10_bin, parse_idx_images, parse_idx_labels};
pub use synth::synth_dataset;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images in `[0, 1]` stored at 32 bits to keep full MNIST/CIFAR in memory;
/// batches are widened to 64 bits and standardized per channel.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Per-channel standardization applied when batches are assembled.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.rank() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                left: images.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        let c = images.shape()[1];
        Ok(Self {
            images,
            labels,
            num_classes,
            mean: vec![0.0; c],
            std: vec![1.0; c],
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// C x H x W of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn with_standardization(mut self, mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        let c = self.image_shape()[0];
        let fix = |v: Vec<f64>| if v.len() == 1 { vec![v[0]; c] } else { v };
        let (mean, std) = (fix(mean), fix(std));
        if mean.len() != c || std.len() != c || std.iter().any(|s| *s <= 0.0) {
            return Err(Error::Config(format!(
                "standardization needs {c} means and {c} positive stds"
            )));
        }
        self.mean = mean;
        self.std = std;
        Ok(self)
    }

    /// Per-channel mean and standard deviation of the stored pixels.
    pub fn channel_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let [c, h, w] = self.image_shape();
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for i in 0..self.len() {
            let img = self.images.row(i);
            for ch in 0..c {
                for &v in &img[ch * h * w..(ch + 1) * h * w] {
                    sum[ch] += v as f64;
                    sq[ch] += (v as f64) * (v as f64);
                }
            }
        }
        let m = (self.len() * h * w).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, mu)| (q / m - mu * mu).max(1e-12).sqrt())
            .collect();
        (mean, std)
    }

    /// The first `n` examples (or all of them if `n` is larger).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let keep: Vec<usize> = (0..n).collect();
        Self {
            images: self.images.slice_axis0(&keep).expect("prefix indices are valid"),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
            mean: self.mean.clone(),
            std: self.std.clone(),
        }
    }

    /// Standardized 64-bit batch of the listed examples.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let [c, h, w] = self.image_shape();
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.len(),
                    context: "dataset batch",
                });
            }
            let img = self.images.row(i);
            for ch in 0..c {
                let (m, s) = (self.mean[ch], self.std[ch]);
                data.extend(img[ch * h * w..(ch + 1) * h * w].iter().map(|&v| (v as f64 - m) / s));
            }
            labels.push(self.labels[i]);
        }
        Ok((Tensor::new(vec![indices.len(), c, h, w], data)?, labels))
    }
}

/// Index batches for one pass over `n` examples. With a shuffle seed the
/// order is a seeded permutation (distinct per `epoch`), otherwise file
/// order. `drop_last` discards a final short batch.
pub fn batch_iter(n: usize, batch_size: usize, shuffle: Option<(u64, u64)>, drop_last: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let Some((seed, epoch)) = shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if drop_last && batches.last().is_some_and(|b| b.len() < batch_size) {
        batches.pop();
    }
    Ok(batches)
}

/// Random horizontal flip and `pad`-pixel zero-pad-then-crop, per image.
pub fn augment_flip_crop<R: Rng>(x: &mut Tensor, pad: usize, rng: &mut R) {
    let s = x.shape().to_vec();
    let (c, h, w) = (s[1], s[2], s[3]);
    for b in 0..s[0] {
        let flip = rng.random_bool(0.5);
        let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let img = x.row_mut(b);
        let src = img.to_vec();
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let si = i as isize + dy;
                    let sj0 = j as isize + dx;
                    let sj = if flip { w as isize - 1 - sj0 } else { sj0 };
                    let v = if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                        src[(ch * h + si as usize) * w + sj as usize]
                    } else {
                        0.0
                    };
                    img[(ch * h + i) * w + j] = v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let images = Tensor::new(vec![3, 1, 1, 2], vec![0.0f32, 1.0, 0.5, 0.5, 0.25, 0.75]).unwrap();
        Dataset::new(images, vec![0, 1, 1], 2).unwrap()
    }

    #[test]
    fn unshuffled_batches_follow_file_order() {
        let b = batch_iter(5, 2, None, false).unwrap();
        assert_eq!(b, vec![vec![0, 1], vec![2, 3], vec![4]]);
        let b = batch_iter(5, 2, None, true).unwrap();
        assert_eq!(b, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn shuffle_is_seeded_and_epoch_dependent() {
        let a = batch_iter(100, 10, Some((7, 0)), true).unwrap();
        assert_eq!(a, batch_iter(100, 10, Some((7, 0)), true).unwrap());
        assert_ne!(a, batch_iter(100, 10, Some((7, 1)), true).unwrap());
        let mut all: Vec<usize> = a.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn batch_applies_standardization() {
        let ds = tiny().with_standardization(vec![0.5], vec![0.25]).unwrap();
        let (x, y) = ds.batch(&[2, 0]).unwrap();
        assert_eq!(x.shape(), &[2, 1, 1, 2]);
        assert_eq!(x.data(), &[-1.0, 1.0, -2.0, 2.0]);
        assert_eq!(y, vec![1, 0]);
        assert!(ds.batch(&[3]).is_err());
    }

    #[test]
    fn rejects_bad_labels() {
        let images = Tensor::<f32>::zeros(&[1, 1, 1, 1]);
        assert!(matches!(Dataset::new(images, vec![2], 2), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn flip_without_shift_mirrors_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let orig = Tensor::new(vec![16, 1, 1, 3], (0..48).map(|i| i as f64).collect()).unwrap();
        let mut x = orig.clone();
        augment_flip_crop(&mut x, 0, &mut rng);
        for b in 0..16 {
            let (o, n) = (orig.row(b), x.row(b));
            assert!(n == o || n == [o[2], o[1], o[0]]);
        }
    }
}
