use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{GraphBuilder, ModelGraph, NodeId};
use crate::error::{Error, Result};

/// How the filters feeding a residual addition are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualStrategy {
    /// Every conv feeding the same addition is pruned with one shared index set.
    SharedIndex,
    /// Downsample convs, and everything tied to them through an addition,
    /// are never pruned.
    SkipDownsample,
}

/// LeNet-5 for 1x28x28 inputs (first conv padded to keep 28x28).
pub fn lenet5<R: Rng>(num_classes: usize, rng: &mut R) -> ModelGraph {
    let (mut b, x) = GraphBuilder::new("lenet5", [1, 28, 28]);
    let c1 = b.conv("conv1", x, 6, 5, 1, 2, rng);
    let r1 = b.relu(c1);
    let p1 = b.maxpool(r1);
    let c2 = b.conv("conv2", p1, 16, 5, 1, 0, rng);
    let r2 = b.relu(c2);
    let p2 = b.maxpool(r2);
    let f = b.flatten(p2);
    let l1 = b.linear("fc1", f, 120, rng);
    let a1 = b.relu(l1);
    let l2 = b.linear("fc2", a1, 84, rng);
    let a2 = b.relu(l2);
    b.linear("fc3", a2, num_classes, rng);
    b.build().expect("lenet5 is well formed")
}

/// Plain conv-bn-relu-pool stack followed by one linear classifier.
pub fn small_vgg<R: Rng>(
    input: [usize; 3],
    widths: &[usize],
    num_classes: usize,
    rng: &mut R,
) -> Result<ModelGraph> {
    if widths.is_empty() {
        return Err(Error::Config("small_vgg needs at least one width".into()));
    }
    let (mut b, mut cur) = GraphBuilder::new("small_vgg", input);
    for (i, &w) in widths.iter().enumerate() {
        let c = b.conv(&format!("conv{}", i + 1), cur, w, 3, 1, 1, rng);
        let n = b.batchnorm(&format!("bn{}", i + 1), c);
        let r = b.relu(n);
        if b.shape(r)[1] < 2 {
            return Err(Error::Config(format!("input {input:?} too small for {} pooling stages", widths.len())));
        }
        cur = b.maxpool(r);
    }
    let f = b.flatten(cur);
    b.linear("fc", f, num_classes, rng);
    b.build()
}

fn basic_block<R: Rng>(
    b: &mut GraphBuilder,
    name: &str,
    from: NodeId,
    width: usize,
    stride: usize,
    strategy: ResidualStrategy,
    rng: &mut R,
) -> NodeId {
    let ca = b.conv(&format!("{name}.conv1"), from, width, 3, stride, 1, rng);
    let na = b.batchnorm(&format!("{name}.bn1"), ca);
    let ra = b.relu(na);
    let cb = b.conv(&format!("{name}.conv2"), ra, width, 3, 1, 1, rng);
    let nb = b.batchnorm(&format!("{name}.bn2"), cb);
    let cd = b.conv(&format!("{name}.down"), from, width, 1, stride, 0, rng);
    let nd = b.batchnorm(&format!("{name}.down_bn"), cd);
    if strategy == ResidualStrategy::SkipDownsample {
        b.mark_unprunable(cd);
    }
    let sum = b.add(&format!("{name}.add"), nb, nd);
    b.relu(sum)
}

/// Residual network: stem conv + pool, then one basic block per width with a
/// 1x1 projection shortcut; the first stage keeps resolution, later stages
/// halve it.
pub fn small_resnet<R: Rng>(
    input: [usize; 3],
    widths: &[usize],
    num_classes: usize,
    strategy: ResidualStrategy,
    rng: &mut R,
) -> Result<ModelGraph> {
    if widths.is_empty() {
        return Err(Error::Config("small_resnet needs at least one width".into()));
    }
    let (mut b, x) = GraphBuilder::new("small_resnet", input);
    let stem = b.conv("stem", x, widths[0], 3, 1, 1, rng);
    let sn = b.batchnorm("stem_bn", stem);
    let sr = b.relu(sn);
    let mut cur = b.maxpool(sr);
    for (i, &w) in widths.iter().enumerate() {
        let stride = if i == 0 { 1 } else { 2 };
        if b.shape(cur)[1] < stride {
            return Err(Error::Config(format!("input {input:?} too small for {} stages", widths.len())));
        }
        cur = basic_block(&mut b, &format!("layer{}", i + 1), cur, w, stride, strategy, rng);
    }
    let f = b.flatten(cur);
    b.linear("fc", f, num_classes, rng);
    b.build()
}
