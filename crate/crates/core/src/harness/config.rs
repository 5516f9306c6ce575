use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{load_cifar10_bin, load_mnist_idx, synth_dataset, Dataset};
use crate::error::{Error, Result};
use crate::models::{lenet5, small_resnet, small_vgg, ModelGraph, ResidualStrategy};
use crate::pruning::PruneSchedule;

/// A complete experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub model: ModelConfig,
    pub data: DataConfig,
    /// Absent for a plain (unpruned) training run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<PruneSchedule>,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub seeds: Seeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Lenet5 {},
    SmallVgg { widths: Vec<usize> },
    SmallResnet { widths: Vec<usize>, strategy: ResidualStrategy },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Mnist {
        dir: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
        #[serde(default = "mnist_mean")]
        mean: Vec<f64>,
        #[serde(default = "mnist_std")]
        std: Vec<f64>,
    },
    Cifar10 {
        dir: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
        #[serde(default = "cifar_mean")]
        mean: Vec<f64>,
        #[serde(default = "cifar_std")]
        std: Vec<f64>,
        #[serde(default)]
        augment: bool,
    },
    Synth {
        seed: u64,
        n_train: usize,
        n_test: usize,
        classes: usize,
        shape: [usize; 3],
    },
}

fn mnist_mean() -> Vec<f64> {
    vec![0.1307]
}
fn mnist_std() -> Vec<f64> {
    vec![0.3081]
}
fn cifar_mean() -> Vec<f64> {
    vec![0.4914, 0.4822, 0.4465]
}
fn cifar_std() -> Vec<f64> {
    vec![0.2470, 0.2435, 0.2616]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Epochs after which the learning rate is multiplied by `lr_gamma`.
    #[serde(default)]
    pub lr_milestones: Vec<usize>,
    #[serde(default = "default_gamma")]
    pub lr_gamma: f64,
    /// Learning rate while fine-tuning; defaults to `alpha`.
    #[serde(default)]
    pub finetune_alpha: Option<f64>,
}

fn default_gamma() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Epochs of a run without a schedule; must match `total_epochs` if both are set.
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub finetune_epochs: usize,
    /// Hard-remove the filters still soft-pruned after the last epoch.
    #[serde(default = "default_true")]
    pub finalize: bool,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
}

fn default_true() -> bool {
    true
}
fn default_eval_batch() -> usize {
    500
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub init: u64,
    pub shuffle: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Makes relative data/output directories relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.data {
            DataConfig::Mnist { dir, .. } | DataConfig::Cifar10 { dir, .. } => fix(dir),
            DataConfig::Synth { .. } => {}
        }
        if let Some(o) = &mut self.output {
            fix(&mut o.dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = &self.schedule {
            s.validate()?;
            if let Some(e) = self.train.epochs {
                if e != s.total_epochs {
                    return Err(Error::Config(format!(
                        "train.epochs = {e} disagrees with schedule.total_epochs = {}",
                        s.total_epochs
                    )));
                }
            }
        } else if self.train.epochs.is_none() {
            return Err(Error::Config("train.epochs is required when there is no [schedule]".into()));
        }
        if self.train.batch_size < 2 {
            return Err(Error::Config("train.batch_size must be at least 2".into()));
        }
        if self.train.eval_batch_size == 0 {
            return Err(Error::Config("train.eval_batch_size must be positive".into()));
        }
        if !(self.optim.alpha > 0.0) || !(0.0..1.0).contains(&self.optim.beta) {
            return Err(Error::Config("optim.alpha must be > 0 and optim.beta in [0, 1)".into()));
        }
        if let DataConfig::Synth { n_train, .. } = self.data {
            if n_train < self.train.batch_size {
                return Err(Error::Config("data.n_train is smaller than one batch".into()));
            }
        }
        Ok(())
    }

    pub fn epochs(&self) -> usize {
        self.schedule
            .map(|s| s.total_epochs)
            .or(self.train.epochs)
            .unwrap_or(0)
    }

    /// Learning rate used during epoch `t` (1-based).
    pub fn lr_at(&self, t: usize) -> f64 {
        let drops = self.optim.lr_milestones.iter().filter(|&&m| m < t).count();
        self.optim.alpha * self.optim.lr_gamma.powi(drops as i32)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        match &self.data {
            DataConfig::Mnist { .. } => [1, 28, 28],
            DataConfig::Cifar10 { .. } => [3, 32, 32],
            DataConfig::Synth { shape, .. } => *shape,
        }
    }

    pub fn num_classes(&self) -> usize {
        match &self.data {
            DataConfig::Synth { classes, .. } => *classes,
            _ => 10,
        }
    }

    /// Freshly initialized model from `seeds.init`.
    pub fn build_model(&self) -> Result<ModelGraph> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seeds.init);
        let input = self.input_shape();
        let classes = self.num_classes();
        match &self.model {
            ModelConfig::Lenet5 {} => {
                if input != [1, 28, 28] {
                    return Err(Error::Config(format!("lenet5 needs 1x28x28 inputs, data gives {input:?}")));
                }
                Ok(lenet5(classes, &mut rng))
            }
            ModelConfig::SmallVgg { widths } => small_vgg(input, widths, classes, &mut rng),
            ModelConfig::SmallResnet { widths, strategy } => small_resnet(input, widths, classes, *strategy, &mut rng),
        }
    }

    /// Train and test splits.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let limit = |ds: Dataset, n: Option<usize>| match n {
            Some(n) => ds.take(n),
            None => ds,
        };
        match &self.data {
            DataConfig::Mnist {
                dir,
                train_limit,
                test_limit,
                mean,
                std,
            } => {
                let train = load_mnist_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?;
                let test = load_mnist_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
                Ok((
                    limit(train, *train_limit).with_standardization(mean.clone(), std.clone())?,
                    limit(test, *test_limit).with_standardization(mean.clone(), std.clone())?,
                ))
            }
            DataConfig::Cifar10 {
                dir,
                train_limit,
                test_limit,
                mean,
                std,
                ..
            } => {
                let train_files: Vec<PathBuf> = (1..=5)
                    .map(|i| dir.join(format!("data_batch_{i}.bin")))
                    .take(train_limit.map_or(5, |n| n.div_ceil(10_000).clamp(1, 5)))
                    .collect();
                let train = load_cifar10_bin(&train_files)?;
                let test = load_cifar10_bin(&[dir.join("test_batch.bin")])?;
                Ok((
                    limit(train, *train_limit).with_standardization(mean.clone(), std.clone())?,
                    limit(test, *test_limit).with_standardization(mean.clone(), std.clone())?,
                ))
            }
            DataConfig::Synth {
                seed,
                n_train,
                n_test,
                classes,
                shape,
            } => {
                // Test images come from a different stream of the same generator.
                let train = synth_dataset(*seed, *n_train, *classes, *shape)?;
                let test = synth_dataset(seed.wrapping_add(0x5eed_7e57), *n_test, *classes, *shape)?;
                let (mean, std) = train.channel_stats();
                Ok((
                    train.with_standardization(mean.clone(), std.clone())?,
                    test.with_standardization(mean, std)?,
                ))
            }
        }
    }

    pub fn augment(&self) -> bool {
        matches!(self.data, DataConfig::Cifar10 { augment: true, .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
name = "t"
[model]
arch = "lenet5"
[data]
source = "synth"
seed = 1
n_train = 64
n_test = 32
classes = 10
shape = [1, 28, 28]
[schedule]
t_prune = 0.5
total_epochs = 4
r = 0.5
criterion = "GN_G"
mode = "PGP"
[optim]
alpha = 0.01
beta = 0.9
[train]
batch_size = 16
[seeds]
init = 1
shuffle = 2
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.epochs(), 4);
        assert!(cfg.train.finalize);
        let again = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_named() {
        for (from, to) in [
            ("batch_size = 16", "batch_size = 16\nbatch_sise = 3"),
            ("r = 0.5", "r = 0.5\nratio = 0.5"),
            ("arch = \"lenet5\"", "arch = \"lenet5\"\ndepth = 3"),
            ("shuffle = 2", "shuffle = 2\nextra = 2"),
        ] {
            let err = RunConfig::from_toml_str(&BASE.replace(from, to)).unwrap_err().to_string();
            let key = to.lines().last().unwrap().split(' ').next().unwrap();
            assert!(err.contains(key), "{err}");
        }
    }

    #[test]
    fn seeds_are_mandatory() {
        let text = BASE.replace("[seeds]\ninit = 1\nshuffle = 2\n", "");
        assert!(RunConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn lr_milestones() {
        let mut cfg = RunConfig::from_toml_str(BASE).unwrap();
        cfg.optim.lr_milestones = vec![2, 3];
        let lrs: Vec<f64> = (1..=4).map(|t| cfg.lr_at(t)).collect();
        assert_eq!(lrs[0], 0.01);
        assert_eq!(lrs[1], 0.01);
        assert!((lrs[2] - 0.001).abs() < 1e-18);
        assert!((lrs[3] - 0.0001).abs() < 1e-18);
    }
}
