use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Class-conditional Gaussian blobs: class `k` puts a bright bump near a
/// point on a circle around the image centre (angle `2*pi*k/K`), with
/// per-image jitter and pixel noise. Labels cycle through the classes.
pub fn synth_dataset(seed: u64, n: usize, num_classes: usize, shape: [usize; 3]) -> Result<Dataset> {
    let [c, h, w] = shape;
    if num_classes == 0 || c == 0 || h < 4 || w < 4 {
        return Err(Error::Config(format!(
            "synthetic data needs classes >= 1 and images of at least 4x4, got {num_classes} / {shape:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).expect("valid std");
    let jitter = Normal::new(0.0, 0.025 * h.min(w) as f64).expect("valid std");
    let radius = 0.33 * h.min(w) as f64;
    let sigma = h.min(w) as f64 / 6.0;
    let mut data = Vec::with_capacity(n * c * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % num_classes;
        let angle = 2.0 * PI * k as f64 / num_classes as f64;
        let cy = (h as f64 - 1.0) / 2.0 + radius * angle.sin() + jitter.sample(&mut rng);
        let cx = (w as f64 - 1.0) / 2.0 + radius * angle.cos() + jitter.sample(&mut rng);
        let amp = rng.random_range(0.7..1.0);
        for _ in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let v = amp * (-d2 / (2.0 * sigma * sigma)).exp() + noise.sample(&mut rng);
                    data.push(v.clamp(0.0, 1.0) as f32);
                }
            }
        }
        labels.push(k);
    }
    Dataset::new(Tensor::new(vec![n, c, h, w], data)?, labels, num_classes)
}
