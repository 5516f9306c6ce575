use std::collections::{BTreeSet, HashSet};

use crate::error::{Error, Result};
use crate::nn::{
    flatten, maxpool2x2_backward, maxpool2x2_forward, relu_backward, relu_forward,
    BatchNormCache, BatchNormState, LinearLayer, PrunableConv,
};
use crate::optim::SgdMomentum;
use crate::tensor::Tensor;

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub enum Op {
    Input,
    Conv(PrunableConv),
    BatchNorm(BatchNormState),
    Relu,
    MaxPool2,
    Flatten,
    Linear(LinearLayer),
    Add,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
}

/// A layer whose input channels follow the output filters of a prune group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Successor {
    Conv(NodeId),
    /// Linear layer behind a flatten; each channel owns `block` inputs.
    Linear { node: NodeId, block: usize },
}

/// Convolutions constrained to identical filter indexes, together with the
/// batch norms that follow them and the layers consuming their channels.
#[derive(Debug, Clone)]
pub struct PruneGroup {
    pub members: Vec<NodeId>,
    pub batchnorms: Vec<NodeId>,
    pub successors: Vec<Successor>,
    pub prunable: bool,
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Bn(BatchNormCache),
    Pool(Vec<usize>),
}

/// Static DAG of layers in topological order. Node 0 is the input.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub name: String,
    nodes: Vec<Node>,
    input_shape: Vec<usize>,
    groups: Vec<PruneGroup>,
    unprunable: BTreeSet<NodeId>,
    outputs: Vec<Option<Tensor>>,
    aux: Vec<Aux>,
    /// When set, backward passes accumulate the per-filter feature-map
    /// saliency |sum(dL/dH * H)| into each conv.
    pub track_feature_saliency: bool,
}

pub struct GraphBuilder {
    name: String,
    nodes: Vec<Node>,
    shapes: Vec<Vec<usize>>,
    unprunable: BTreeSet<NodeId>,
}

impl GraphBuilder {
    /// `input_shape` is C x H x W (no batch axis).
    pub fn new(name: impl Into<String>, input_shape: [usize; 3]) -> (Self, NodeId) {
        let b = Self {
            name: name.into(),
            nodes: vec![Node {
                name: "input".into(),
                op: Op::Input,
                inputs: vec![],
            }],
            shapes: vec![input_shape.to_vec()],
            unprunable: BTreeSet::new(),
        };
        (b, 0)
    }

    fn push(&mut self, name: impl Into<String>, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node {
            name: name.into(),
            op,
            inputs,
        });
        self.shapes.push(shape);
        self.nodes.len() - 1
    }

    pub fn shape(&self, node: NodeId) -> &[usize] {
        &self.shapes[node]
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv<R: rand::Rng>(
        &mut self,
        name: &str,
        from: NodeId,
        n_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> NodeId {
        let s = self.shapes[from].clone();
        let layer = PrunableConv::new(name, s[0], n_out, kernel, stride, padding, rng);
        let (ho, wo) = layer.output_hw(s[1], s[2]).expect("valid conv geometry");
        self.push(name, Op::Conv(layer), vec![from], vec![n_out, ho, wo])
    }

    pub fn batchnorm(&mut self, name: &str, from: NodeId) -> NodeId {
        let s = self.shapes[from].clone();
        self.push(name, Op::BatchNorm(BatchNormState::new(name, s[0])), vec![from], s)
    }

    pub fn relu(&mut self, from: NodeId) -> NodeId {
        let s = self.shapes[from].clone();
        let name = format!("{}.relu", self.nodes[from].name);
        self.push(name, Op::Relu, vec![from], s)
    }

    pub fn maxpool(&mut self, from: NodeId) -> NodeId {
        let s = self.shapes[from].clone();
        let name = format!("{}.pool", self.nodes[from].name);
        self.push(name, Op::MaxPool2, vec![from], vec![s[0], s[1] / 2, s[2] / 2])
    }

    pub fn flatten(&mut self, from: NodeId) -> NodeId {
        let n = self.shapes[from].iter().product();
        self.push("flatten", Op::Flatten, vec![from], vec![n])
    }

    pub fn linear<R: rand::Rng>(&mut self, name: &str, from: NodeId, n_out: usize, rng: &mut R) -> NodeId {
        let n_in = self.shapes[from][0];
        self.push(name, Op::Linear(LinearLayer::new(name, n_in, n_out, rng)), vec![from], vec![n_out])
    }

    pub fn add(&mut self, name: &str, a: NodeId, b: NodeId) -> NodeId {
        let s = self.shapes[a].clone();
        self.push(name, Op::Add, vec![a, b], s)
    }

    pub fn mark_unprunable(&mut self, conv: NodeId) {
        self.unprunable.insert(conv);
    }

    pub fn build(self) -> Result<ModelGraph> {
        ModelGraph::from_nodes(self.name, self.nodes, self.shapes[0].clone(), self.unprunable)
    }
}

fn union_find_root(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

impl ModelGraph {
    pub fn from_nodes(
        name: String,
        nodes: Vec<Node>,
        input_shape: Vec<usize>,
        unprunable: BTreeSet<NodeId>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for (id, node) in nodes.iter().enumerate() {
            if !seen.insert(node.name.clone()) {
                return Err(Error::Graph(format!("duplicate node name `{}`", node.name)));
            }
            if node.inputs.iter().any(|&i| i >= id) {
                return Err(Error::Graph(format!("node `{}` is not in topological order", node.name)));
            }
            let arity = match node.op {
                Op::Input => 0,
                Op::Add => 2,
                _ => 1,
            };
            if node.inputs.len() != arity {
                return Err(Error::Graph(format!("node `{}` expects {arity} inputs", node.name)));
            }
        }
        if !matches!(nodes.first().map(|n| &n.op), Some(Op::Input)) {
            return Err(Error::Graph("node 0 must be the input".into()));
        }
        let n = nodes.len();
        let mut graph = Self {
            name,
            nodes,
            input_shape,
            groups: Vec::new(),
            unprunable,
            outputs: vec![None; n],
            aux: vec![Aux::None; n],
            track_feature_saliency: false,
        };
        graph.groups = graph.derive_groups()?;
        graph.infer_shapes()?;
        Ok(graph)
    }

    fn consumers(&self) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            for &i in &node.inputs {
                out[i].push(id);
            }
        }
        out
    }

    /// Follows a conv's channels downstream through channel-preserving nodes.
    /// Returns (batchnorms directly behind it, add nodes reached, successors).
    fn trace_channels(
        &self,
        conv: NodeId,
        consumers: &[Vec<NodeId>],
        shapes: &[Vec<usize>],
    ) -> Result<(Vec<NodeId>, Vec<NodeId>, Vec<Successor>)> {
        let mut bns = Vec::new();
        let mut adds = Vec::new();
        let mut succ = Vec::new();
        let mut stack: Vec<(NodeId, NodeId, Option<usize>)> =
            consumers[conv].iter().map(|&c| (c, conv, None)).collect();
        let mut visited = HashSet::new();
        while let Some((id, from, flat_block)) = stack.pop() {
            if !visited.insert(id) {
                continue;
            }
            let node = &self.nodes[id];
            let next_block = match &node.op {
                Op::Conv(_) => {
                    succ.push(Successor::Conv(id));
                    continue;
                }
                Op::Linear(_) => match flat_block {
                    Some(block) => {
                        succ.push(Successor::Linear { node: id, block });
                        continue;
                    }
                    None => {
                        return Err(Error::Graph(format!(
                            "linear `{}` consumes conv channels without a flatten",
                            node.name
                        )))
                    }
                },
                Op::BatchNorm(_) => {
                    if from != conv {
                        return Err(Error::Graph(format!(
                            "batch norm `{}` must directly follow a conv",
                            node.name
                        )));
                    }
                    bns.push(id);
                    flat_block
                }
                Op::Add => {
                    adds.push(id);
                    flat_block
                }
                Op::Flatten => {
                    let s = &shapes[node.inputs[0]];
                    Some(s[1] * s[2])
                }
                Op::Relu | Op::MaxPool2 => flat_block,
                Op::Input => unreachable!("input has no producers"),
            };
            if flat_block.is_some() && !matches!(node.op, Op::Relu | Op::Flatten) {
                return Err(Error::Graph(format!(
                    "unsupported node `{}` between flatten and linear",
                    node.name
                )));
            }
            for &c in &consumers[id] {
                stack.push((c, id, next_block));
            }
        }
        succ.sort();
        succ.dedup();
        Ok((bns, adds, succ))
    }

    fn derive_groups(&self) -> Result<Vec<PruneGroup>> {
        let shapes = self.infer_shapes()?;
        let consumers = self.consumers();
        let convs: Vec<NodeId> = self.conv_ids();
        let mut traces = Vec::new();
        for &c in &convs {
            traces.push(self.trace_channels(c, &consumers, &shapes)?);
        }
        let mut parent: Vec<usize> = (0..convs.len()).collect();
        for i in 0..convs.len() {
            for j in i + 1..convs.len() {
                if traces[i].1.iter().any(|a| traces[j].1.contains(a)) {
                    let (ri, rj) = (union_find_root(&mut parent, i), union_find_root(&mut parent, j));
                    if ri != rj {
                        parent[rj.max(ri)] = ri.min(rj);
                    }
                }
            }
        }
        let mut groups: Vec<PruneGroup> = Vec::new();
        let mut root_to_group: Vec<Option<usize>> = vec![None; convs.len()];
        for i in 0..convs.len() {
            let r = union_find_root(&mut parent, i);
            let g = *root_to_group[r].get_or_insert_with(|| {
                groups.push(PruneGroup {
                    members: Vec::new(),
                    batchnorms: Vec::new(),
                    successors: Vec::new(),
                    prunable: true,
                });
                groups.len() - 1
            });
            let group = &mut groups[g];
            group.members.push(convs[i]);
            group.batchnorms.extend(traces[i].0.iter().copied());
            group.successors.extend(traces[i].2.iter().copied());
            if self.unprunable.contains(&convs[i]) {
                group.prunable = false;
            }
        }
        for g in &mut groups {
            g.successors.sort();
            g.successors.dedup();
            if g.successors.is_empty() {
                return Err(Error::Graph(format!(
                    "conv `{}` has no successor layer",
                    self.nodes[g.members[0]].name
                )));
            }
        }
        Ok(groups)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id]
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn groups(&self) -> &[PruneGroup] {
        &self.groups
    }

    pub fn is_unprunable(&self, conv: NodeId) -> bool {
        self.unprunable.contains(&conv)
    }

    pub fn conv_ids(&self) -> Vec<NodeId> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].op, Op::Conv(_)))
            .collect()
    }

    pub fn conv(&self, id: NodeId) -> &PrunableConv {
        match &self.nodes[id].op {
            Op::Conv(c) => c,
            _ => panic!("node `{}` is not a conv", self.nodes[id].name),
        }
    }

    pub fn conv_mut(&mut self, id: NodeId) -> &mut PrunableConv {
        match &mut self.nodes[id].op {
            Op::Conv(c) => c,
            _ => panic!("node is not a conv"),
        }
    }

    pub fn batchnorm(&self, id: NodeId) -> &BatchNormState {
        match &self.nodes[id].op {
            Op::BatchNorm(b) => b,
            _ => panic!("node `{}` is not a batch norm", self.nodes[id].name),
        }
    }

    pub fn batchnorm_mut(&mut self, id: NodeId) -> &mut BatchNormState {
        match &mut self.nodes[id].op {
            Op::BatchNorm(b) => b,
            _ => panic!("node is not a batch norm"),
        }
    }

    pub fn linear(&self, id: NodeId) -> &LinearLayer {
        match &self.nodes[id].op {
            Op::Linear(l) => l,
            _ => panic!("node `{}` is not linear", self.nodes[id].name),
        }
    }

    pub fn linear_mut(&mut self, id: NodeId) -> &mut LinearLayer {
        match &mut self.nodes[id].op {
            Op::Linear(l) => l,
            _ => panic!("node is not linear"),
        }
    }

    /// Per-node output shapes (no batch axis) computed from the current
    /// layer parameters. Fails if any two connected layers disagree.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let inp = |k: usize| -> &Vec<usize> { &shapes[node.inputs[k]] };
            let s = match &node.op {
                Op::Input => self.input_shape.clone(),
                Op::Conv(c) => {
                    let s = inp(0);
                    if s.len() != 3 || s[0] != c.n_in() {
                        return Err(Error::Audit(format!(
                            "conv `{}` expects {} input channels, receives {:?}",
                            node.name,
                            c.n_in(),
                            s
                        )));
                    }
                    let (ho, wo) = c.output_hw(s[1], s[2])?;
                    vec![c.n_out(), ho, wo]
                }
                Op::BatchNorm(b) => {
                    let s = inp(0).clone();
                    if s[0] != b.channels() {
                        return Err(Error::Audit(format!(
                            "batch norm `{}` has {} channels, receives {:?}",
                            node.name,
                            b.channels(),
                            s
                        )));
                    }
                    s
                }
                Op::Relu => inp(0).clone(),
                Op::MaxPool2 => {
                    let s = inp(0);
                    vec![s[0], s[1] / 2, s[2] / 2]
                }
                Op::Flatten => vec![inp(0).iter().product()],
                Op::Linear(l) => {
                    let s = inp(0);
                    if s.len() != 1 || s[0] != l.n_in() {
                        return Err(Error::Audit(format!(
                            "linear `{}` expects {} inputs, receives {:?}",
                            node.name,
                            l.n_in(),
                            s
                        )));
                    }
                    vec![l.n_out()]
                }
                Op::Add => {
                    if inp(0) != inp(1) {
                        return Err(Error::Audit(format!(
                            "add `{}` operands differ: {:?} vs {:?}",
                            node.name,
                            inp(0),
                            inp(1)
                        )));
                    }
                    inp(0).clone()
                }
            };
            shapes.push(s);
        }
        Ok(shapes)
    }

    /// Training-mode forward pass that caches what the backward pass needs.
    /// With `update_bn_stats == false` batch norms still normalize with batch
    /// statistics but leave their running estimates untouched.
    pub fn forward_train(&mut self, x: &Tensor, update_bn_stats: bool) -> Result<Tensor> {
        self.check_input(x)?;
        let n = self.nodes.len();
        let mut outputs: Vec<Option<Tensor>> = vec![None; n];
        let mut aux = vec![Aux::None; n];
        for id in 0..n {
            let inputs = self.nodes[id].inputs.clone();
            let get = |k: usize| outputs[inputs[k]].as_ref().expect("topological order");
            let out = match &mut self.nodes[id].op {
                Op::Input => x.clone(),
                Op::Conv(c) => c.forward(get(0))?,
                Op::BatchNorm(b) => {
                    let (y, cache) = if update_bn_stats {
                        b.forward_train(get(0))?
                    } else {
                        let mut scratch = b.clone();
                        scratch.forward_train(get(0))?
                    };
                    aux[id] = Aux::Bn(cache);
                    y
                }
                Op::Relu => relu_forward(get(0)),
                Op::MaxPool2 => {
                    let (y, arg) = maxpool2x2_forward(get(0))?;
                    aux[id] = Aux::Pool(arg);
                    y
                }
                Op::Flatten => flatten(get(0))?,
                Op::Linear(l) => l.forward(get(0))?,
                Op::Add => get(0).add(get(1))?,
            };
            outputs[id] = Some(out);
        }
        let logits = outputs[n - 1].clone().expect("last node computed");
        self.outputs = outputs;
        self.aux = aux;
        Ok(logits)
    }

    /// Inference with batch norms in eval mode; nothing is cached.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let n = self.nodes.len();
        let mut outputs: Vec<Option<Tensor>> = vec![None; n];
        let consumers = self.consumers();
        let mut remaining: Vec<usize> = consumers.iter().map(|c| c.len()).collect();
        for id in 0..n {
            let node = &self.nodes[id];
            let get = |k: usize| outputs[node.inputs[k]].as_ref().expect("topological order");
            let out = match &node.op {
                Op::Input => x.clone(),
                Op::Conv(c) => c.forward(get(0))?,
                Op::BatchNorm(b) => b.forward_eval(get(0))?,
                Op::Relu => relu_forward(get(0)),
                Op::MaxPool2 => maxpool2x2_forward(get(0))?.0,
                Op::Flatten => flatten(get(0))?,
                Op::Linear(l) => l.forward(get(0))?,
                Op::Add => get(0).add(get(1))?,
            };
            for &i in &node.inputs {
                remaining[i] -= 1;
                if remaining[i] == 0 {
                    outputs[i] = None;
                }
            }
            outputs[id] = Some(out);
        }
        Ok(outputs[n - 1].take().expect("last node computed"))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 4 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: x.shape().to_vec(),
                right: self.input_shape.clone(),
            });
        }
        Ok(())
    }

    /// Back-propagates `grad_logits` through the cached forward pass,
    /// accumulating into every layer's gradient buffers.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<()> {
        let n = self.nodes.len();
        if self.outputs.iter().any(Option::is_none) {
            return Err(Error::Graph("backward called without a cached forward pass".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[n - 1] = Some(grad_logits.clone());
        let track = self.track_feature_saliency;
        for id in (1..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let inputs = self.nodes[id].inputs.clone();
            let first_input_is_data = inputs[0] == 0;
            let input0 = self.outputs[inputs[0]].as_ref().expect("cached");
            let passed: Vec<(NodeId, Tensor)> = match &mut self.nodes[id].op {
                Op::Input => vec![],
                Op::Conv(c) => {
                    if track {
                        let h = self.outputs[id].as_ref().expect("cached");
                        accumulate_feature_saliency(c, h, &g);
                    }
                    match c.backward_with(input0, &g, !first_input_is_data)? {
                        Some(gi) => vec![(inputs[0], gi)],
                        None => vec![],
                    }
                }
                Op::BatchNorm(b) => match &self.aux[id] {
                    Aux::Bn(cache) => vec![(inputs[0], b.backward(cache, &g)?)],
                    _ => return Err(Error::Graph("missing batch norm cache".into())),
                },
                Op::Relu => vec![(inputs[0], relu_backward(input0, &g)?)],
                Op::MaxPool2 => match &self.aux[id] {
                    Aux::Pool(arg) => vec![(inputs[0], maxpool2x2_backward(input0.shape(), arg, &g)?)],
                    _ => return Err(Error::Graph("missing pooling indices".into())),
                },
                Op::Flatten => vec![(inputs[0], g.reshape(input0.shape())?)],
                Op::Linear(l) => vec![(inputs[0], l.backward(input0, &g)?)],
                Op::Add => vec![(inputs[0], g.clone()), (inputs[1], g)],
            };
            for (target, gi) in passed {
                if target == 0 {
                    continue;
                }
                match grads[target].as_mut() {
                    Some(acc) => acc.add_assign(&gi)?,
                    None => grads[target] = Some(gi),
                }
            }
        }
        Ok(())
    }

    /// Drops cached activations (frees memory between phases).
    pub fn clear_cache(&mut self) {
        self.outputs.iter_mut().for_each(|o| *o = None);
        self.aux.iter_mut().for_each(|a| *a = Aux::None);
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            match &mut node.op {
                Op::Conv(c) => c.zero_grads(),
                Op::BatchNorm(b) => b.zero_grads(),
                Op::Linear(l) => l.zero_grads(),
                _ => {}
            }
        }
    }

    /// `(name, value, grad)` for every trainable tensor, in graph order.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor, &Tensor)> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            match &mut node.op {
                Op::Conv(c) => {
                    out.push((format!("{}.weight", node.name), &mut c.weight, &c.grad_weight));
                    out.push((format!("{}.bias", node.name), &mut c.bias, &c.grad_bias));
                }
                Op::BatchNorm(b) => {
                    out.push((format!("{}.gamma", node.name), &mut b.gamma, &b.grad_gamma));
                    out.push((format!("{}.beta", node.name), &mut b.beta, &b.grad_beta));
                }
                Op::Linear(l) => {
                    out.push((format!("{}.weight", node.name), &mut l.weight, &l.grad_weight));
                    out.push((format!("{}.bias", node.name), &mut l.bias, &l.grad_bias));
                }
                _ => {}
            }
        }
        out
    }

    /// `(name, value, grad)` triples without mutable access.
    pub fn params(&self) -> Vec<(String, &Tensor, &Tensor)> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Conv(c) => {
                    out.push((format!("{}.weight", node.name), &c.weight, &c.grad_weight));
                    out.push((format!("{}.bias", node.name), &c.bias, &c.grad_bias));
                }
                Op::BatchNorm(b) => {
                    out.push((format!("{}.gamma", node.name), &b.gamma, &b.grad_gamma));
                    out.push((format!("{}.beta", node.name), &b.beta, &b.grad_beta));
                }
                Op::Linear(l) => {
                    out.push((format!("{}.weight", node.name), &l.weight, &l.grad_weight));
                    out.push((format!("{}.bias", node.name), &l.bias, &l.grad_bias));
                }
                _ => {}
            }
        }
        out
    }

    /// Registers a zero momentum buffer for every parameter.
    pub fn register_params(&self, opt: &mut SgdMomentum) {
        for (name, value, _) in self.params() {
            opt.register(&name, value.shape());
        }
    }

    /// One optimizer step over all parameters.
    pub fn sgd_step(&mut self, opt: &mut SgdMomentum) -> Result<()> {
        opt.sgd_step(self.params_mut())
    }
}

/// Adds mean-over-batch |sum_spatial(dL/dH * H)| per output channel.
fn accumulate_feature_saliency(conv: &mut PrunableConv, h: &Tensor, g: &Tensor) {
    let s = h.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    for ch in 0..c {
        let mut total = 0.0;
        for b in 0..n {
            let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            let dot: f64 = h.data()[r.clone()]
                .iter()
                .zip(&g.data()[r])
                .map(|(a, b)| a * b)
                .sum();
            total += dot.abs();
        }
        conv.feature_saliency[ch] += total / n as f64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{lenet5, small_resnet, ResidualStrategy};
    use crate::nn::softmax_cross_entropy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn loss(g: &mut ModelGraph, x: &Tensor, y: &[usize]) -> f64 {
        let logits = g.forward_train(x, false).unwrap();
        softmax_cross_entropy(&logits, y).unwrap().0
    }

    fn check_graph(mut g: ModelGraph, x: Tensor, y: Vec<usize>, seed: u64) {
        g.zero_grads();
        let logits = g.forward_train(&x, false).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &y).unwrap();
        g.backward(&grad).unwrap();
        let analytic: Vec<(String, Tensor)> = g.params().into_iter().map(|(n, _, gr)| (n, gr.clone())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-5;
        for (pi, (name, ga)) in analytic.iter().enumerate() {
            for _ in 0..4 {
                let k = rng.random_range(0..ga.len());
                let probe = |delta: f64, g: &mut ModelGraph| {
                    let mut params = g.params_mut();
                    params[pi].1.data_mut()[k] += delta;
                };
                probe(h, &mut g);
                let up = loss(&mut g, &x, &y);
                probe(-2.0 * h, &mut g);
                let down = loss(&mut g, &x, &y);
                probe(h, &mut g);
                let num = (up - down) / (2.0 * h);
                let a = ga.data()[k];
                let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
                assert!(rel < 1e-4, "{name}[{k}]: analytic {a} numeric {num}");
            }
        }
    }

    #[test]
    fn lenet_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = lenet5(10, &mut rng);
        let x = Tensor::new(vec![2, 1, 28, 28], (0..2 * 784).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        check_graph(g, x, vec![3, 7], 1);
    }

    #[test]
    fn resnet_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = small_resnet([3, 8, 8], &[4, 6], 5, ResidualStrategy::SharedIndex, &mut rng).unwrap();
        let x = Tensor::new(vec![3, 3, 8, 8], (0..3 * 192).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        check_graph(g, x, vec![0, 4, 2], 2);
    }
}
