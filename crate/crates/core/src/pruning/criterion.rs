use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelGraph, NodeId};
use crate::nn::PrunableConv;
use crate::tensor::{l1, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "L1")]
    L1,
    #[serde(rename = "L2")]
    L2,
    #[serde(rename = "TAYLOR")]
    Taylor,
    #[serde(rename = "TW")]
    Tw,
    #[serde(rename = "GN_G")]
    GnG,
    #[serde(rename = "GN_S")]
    GnS,
}

impl Criterion {
    pub const ALL: [Criterion; 6] = [
        Criterion::L1,
        Criterion::L2,
        Criterion::Taylor,
        Criterion::Tw,
        Criterion::GnG,
        Criterion::GnS,
    ];

    /// Whether scores depend on gradients gathered over an epoch.
    pub fn needs_accumulator(self) -> bool {
        !matches!(self, Criterion::L1 | Criterion::L2)
    }

    pub fn label(self) -> &'static str {
        match self {
            Criterion::L1 => "L1",
            Criterion::L2 => "L2",
            Criterion::Taylor => "TAYLOR",
            Criterion::Tw => "TW",
            Criterion::GnG => "GN_G",
            Criterion::GnS => "GN_S",
        }
    }
}

/// PGP sweeps the epoch a second time without updates to gather the
/// criterion; RPGP gathers it during the training epoch itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "PGP")]
    Pgp,
    #[serde(rename = "RPGP")]
    Rpgp,
}

/// Gradient statistics of one conv over the iterations of an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAccumulator {
    /// Sum of the per-iteration weight gradients.
    pub grad_sum: Tensor,
    /// Per filter, sum over iterations of the L1 norm of its gradient.
    pub grad_l1_sum: Vec<f64>,
    /// Per filter, sum over iterations of the batch-mean feature-map saliency.
    pub saliency_sum: Vec<f64>,
    pub iterations: usize,
}

impl LayerAccumulator {
    pub fn new(weight_shape: &[usize]) -> Self {
        let n = weight_shape.first().copied().unwrap_or(0);
        Self {
            grad_sum: Tensor::zeros(weight_shape),
            grad_l1_sum: vec![0.0; n],
            saliency_sum: vec![0.0; n],
            iterations: 0,
        }
    }

    /// Folds in one iteration's gradient (and saliency) of `conv`.
    pub fn observe(&mut self, grad: &Tensor, saliency: &[f64]) -> Result<()> {
        if grad.shape() != self.grad_sum.shape() || saliency.len() != self.saliency_sum.len() {
            return Err(Error::ShapeMismatch {
                op: "criterion accumulator",
                left: self.grad_sum.shape().to_vec(),
                right: grad.shape().to_vec(),
            });
        }
        self.grad_sum.add_assign(grad)?;
        for (i, acc) in self.grad_l1_sum.iter_mut().enumerate() {
            *acc += l1(grad.row(i));
        }
        for (acc, s) in self.saliency_sum.iter_mut().zip(saliency) {
            *acc += s;
        }
        self.iterations += 1;
        Ok(())
    }
}

/// One [`LayerAccumulator`] per conv of a graph.
#[derive(Debug, Clone)]
pub struct CriterionAccumulator {
    layers: Vec<(NodeId, LayerAccumulator)>,
}

impl CriterionAccumulator {
    /// Zeroed accumulators shaped like the graph's current convs.
    pub fn new(graph: &ModelGraph) -> Self {
        Self {
            layers: graph
                .conv_ids()
                .into_iter()
                .map(|id| (id, LayerAccumulator::new(graph.conv(id).weight.shape())))
                .collect(),
        }
    }

    /// Reads the gradient buffers left by the latest backward pass.
    pub fn observe(&mut self, graph: &ModelGraph) -> Result<()> {
        for (id, acc) in &mut self.layers {
            let c = graph.conv(*id);
            acc.observe(&c.grad_weight, &c.feature_saliency)?;
        }
        Ok(())
    }

    /// Drops input channels of conv `id`'s running sum after its producer
    /// lost filters, so the sum keeps the shape of the weight.
    pub fn retain_input_channels(&mut self, id: NodeId, keep: &[usize]) -> Result<()> {
        if let Some((_, acc)) = self.layers.iter_mut().find(|(i, _)| *i == id) {
            acc.grad_sum = acc.grad_sum.slice_axis1(keep)?;
        }
        Ok(())
    }

    pub fn layer(&self, id: NodeId) -> Option<&LayerAccumulator> {
        self.layers.iter().find(|(i, _)| *i == id).map(|(_, a)| a)
    }

    pub fn iterations(&self) -> usize {
        self.layers.first().map_or(0, |(_, a)| a.iterations)
    }
}

/// Importance of every current filter of `layer`; lower means weaker.
pub fn score_filters(layer: &PrunableConv, acc: Option<&LayerAccumulator>, kind: Criterion) -> Result<Vec<f64>> {
    let w = &layer.weight;
    let n = layer.n_out();
    match kind {
        Criterion::L1 => return Ok((0..n).map(|i| l1(w.row(i))).collect()),
        Criterion::L2 => {
            return Ok((0..n)
                .map(|i| w.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect())
        }
        _ => {}
    }
    let acc = match acc {
        Some(a) if a.iterations > 0 => a,
        _ => return Err(Error::EmptyAccumulator),
    };
    if acc.grad_sum.shape() != w.shape() {
        return Err(Error::ShapeMismatch {
            op: "score_filters accumulator",
            left: acc.grad_sum.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    let s = &acc.grad_sum;
    Ok(match kind {
        Criterion::Tw => (0..n)
            .map(|i| s.row(i).iter().zip(w.row(i)).map(|(g, x)| (g * x).abs()).sum())
            .collect(),
        Criterion::GnG => (0..n).map(|i| l1(s.row(i))).collect(),
        Criterion::GnS => acc.grad_l1_sum.clone(),
        Criterion::Taylor => acc.saliency_sum.clone(),
        Criterion::L1 | Criterion::L2 => unreachable!(),
    })
}
