use crate::error::{Error, Result};
use crate::models::{ModelGraph, Op, Successor};
use crate::nn::{flatten_keep_indices, BatchNormState, LinearLayer, PrunableConv};
use crate::optim::{keep_list, SgdMomentum};
use crate::tensor::Tensor;

/// The layer consuming a pruned conv's channels.
pub enum NextLayer<'a> {
    Conv(&'a mut PrunableConv),
    /// Linear layer after a flatten; each channel owns `block` inputs.
    Linear { layer: &'a mut LinearLayer, block: usize },
}

fn sorted_unique(idx: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut v = idx.to_vec();
    v.sort_unstable();
    if let Some(w) = v.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::OverlappingIndices(w[0]));
    }
    if let Some(&bad) = v.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: n,
            context: "prune plan",
        });
    }
    Ok(v)
}

/// Sorted copies of a valid (hard, soft) plan for a layer of `n` filters.
fn check_plan(n: usize, hard: &[usize], soft: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let h = sorted_unique(hard, n)?;
    let s = sorted_unique(soft, n)?;
    if let Some(&dup) = h.iter().find(|i| s.binary_search(i).is_ok()) {
        return Err(Error::OverlappingIndices(dup));
    }
    if h.len() >= n {
        return Err(Error::OverPruning {
            requested: h.len(),
            live: n,
        });
    }
    Ok((h, s))
}

fn check_momentum(opt: &SgdMomentum, name: &str, shape: &[usize]) -> Result<()> {
    let m = opt
        .momentum(name)
        .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
    if m.shape() != shape {
        return Err(Error::StaleOptimizerState {
            param: name.to_string(),
            state: m.shape().to_vec(),
            param_shape: shape.to_vec(),
        });
    }
    Ok(())
}

fn check_conv(conv: &PrunableConv, opt: &SgdMomentum) -> Result<()> {
    check_momentum(opt, &format!("{}.weight", conv.name), conv.weight.shape())?;
    check_momentum(opt, &format!("{}.bias", conv.name), conv.bias.shape())
}

fn check_bn(bn: &BatchNormState, n: usize, opt: &SgdMomentum) -> Result<()> {
    if bn.channels() != n {
        return Err(Error::ShapeMismatch {
            op: "prune batch norm channels",
            left: vec![bn.channels()],
            right: vec![n],
        });
    }
    check_momentum(opt, &format!("{}.gamma", bn.name), bn.gamma.shape())?;
    check_momentum(opt, &format!("{}.beta", bn.name), bn.beta.shape())
}

fn check_next_conv(next: &PrunableConv, n: usize, opt: &SgdMomentum) -> Result<()> {
    if next.n_in() != n {
        return Err(Error::ShapeMismatch {
            op: "prune successor input channels",
            left: vec![next.n_in()],
            right: vec![n],
        });
    }
    check_conv(next, opt)
}

fn check_next_linear(next: &LinearLayer, block: usize, n: usize, opt: &SgdMomentum) -> Result<()> {
    if next.n_in() != n * block {
        return Err(Error::ShapeMismatch {
            op: "prune successor linear inputs",
            left: vec![next.n_in()],
            right: vec![n, block],
        });
    }
    check_momentum(opt, &format!("{}.weight", next.name), next.weight.shape())
}

// The mutating helpers below run only after every check has passed.

fn prune_conv_outputs(conv: &mut PrunableConv, opt: &mut SgdMomentum, hard: &[usize], soft: &[usize]) -> Result<()> {
    let keep = keep_list(conv.n_out(), hard);
    conv.clear_soft_mask();
    conv.zero_filters(soft)?;
    opt.prune_momentum(&format!("{}.weight", conv.name), hard, soft)?;
    opt.prune_momentum(&format!("{}.bias", conv.name), hard, soft)?;
    if !hard.is_empty() {
        conv.retain_filters(&keep)?;
    }
    Ok(())
}

fn prune_bn(bn: &mut BatchNormState, opt: &mut SgdMomentum, hard: &[usize], soft: &[usize]) -> Result<()> {
    let keep = keep_list(bn.channels(), hard);
    bn.zero_channels(soft)?;
    opt.prune_momentum(&format!("{}.gamma", bn.name), hard, soft)?;
    opt.prune_momentum(&format!("{}.beta", bn.name), hard, soft)?;
    if !hard.is_empty() {
        bn.retain_channels(&keep)?;
    }
    Ok(())
}

fn prune_next_conv(next: &mut PrunableConv, opt: &mut SgdMomentum, keep: &[usize]) -> Result<()> {
    let rows: Vec<usize> = (0..next.n_out()).collect();
    next.retain_input_channels(keep)?;
    opt.rebuild_after_hard_prune(&format!("{}.weight", next.name), &rows, Some(keep))
}

fn prune_next_linear(next: &mut LinearLayer, block: usize, opt: &mut SgdMomentum, keep: &[usize]) -> Result<()> {
    let rows: Vec<usize> = (0..next.n_out()).collect();
    let cols = flatten_keep_indices(keep, block);
    next.retain_inputs(&cols)?;
    opt.rebuild_after_hard_prune(&format!("{}.weight", next.name), &rows, Some(&cols))
}

/// Prunes the output filters of `layer`: rows in `hard` are removed from the
/// weights, gradients, momentum, batch norm, and the successor's input
/// channels; rows in `soft` are zeroed in place. Everything is validated
/// before the first mutation, so a rejected plan leaves all state unchanged.
pub fn apply_prune(
    layer: &mut PrunableConv,
    next: Option<NextLayer<'_>>,
    bn: Option<&mut BatchNormState>,
    opt: &mut SgdMomentum,
    hard: &[usize],
    soft: &[usize],
) -> Result<()> {
    let n = layer.n_out();
    let (hard, soft) = check_plan(n, hard, soft)?;
    check_conv(layer, opt)?;
    if let Some(bn) = bn.as_deref() {
        check_bn(bn, n, opt)?;
    }
    match &next {
        Some(NextLayer::Conv(c)) => check_next_conv(c, n, opt)?,
        Some(NextLayer::Linear { layer: l, block }) => check_next_linear(l, *block, n, opt)?,
        None => {}
    }

    let keep = keep_list(n, &hard);
    prune_conv_outputs(layer, opt, &hard, &soft)?;
    if let Some(bn) = bn {
        prune_bn(bn, opt, &hard, &soft)?;
    }
    if !hard.is_empty() {
        match next {
            Some(NextLayer::Conv(c)) => prune_next_conv(c, opt, &keep)?,
            Some(NextLayer::Linear { layer: l, block }) => prune_next_linear(l, block, opt, &keep)?,
            None => {}
        }
    }
    Ok(())
}

/// Applies one (hard, soft) plan to every member of prune group `group`,
/// their batch norms, and the input channels of all successors.
pub fn propagate_prune(graph: &mut ModelGraph, group: usize, opt: &mut SgdMomentum, hard: &[usize], soft: &[usize]) -> Result<()> {
    let g = graph
        .groups()
        .get(group)
        .cloned()
        .ok_or(Error::IndexOutOfRange {
            index: group,
            len: graph.groups().len(),
            context: "prune group",
        })?;
    if !g.prunable && !(hard.is_empty() && soft.is_empty()) {
        return Err(Error::Graph(format!(
            "group of `{}` is marked unprunable",
            graph.node(g.members[0]).name
        )));
    }
    let n = graph.conv(g.members[0]).n_out();
    let (hard, soft) = check_plan(n, hard, soft)?;
    for &m in &g.members {
        let c = graph.conv(m);
        if c.n_out() != n || c.live_mask != graph.conv(g.members[0]).live_mask {
            return Err(Error::Graph(format!(
                "group members `{}` and `{}` have diverged",
                graph.node(g.members[0]).name,
                c.name
            )));
        }
        check_conv(c, opt)?;
    }
    for &b in &g.batchnorms {
        check_bn(graph.batchnorm(b), n, opt)?;
    }
    for s in &g.successors {
        match *s {
            Successor::Conv(id) => check_next_conv(graph.conv(id), n, opt)?,
            Successor::Linear { node, block } => check_next_linear(graph.linear(node), block, n, opt)?,
        }
    }

    let keep = keep_list(n, &hard);
    for &m in &g.members {
        prune_conv_outputs(graph.conv_mut(m), opt, &hard, &soft)?;
    }
    for &b in &g.batchnorms {
        prune_bn(graph.batchnorm_mut(b), opt, &hard, &soft)?;
    }
    if !hard.is_empty() {
        for s in &g.successors {
            match *s {
                Successor::Conv(id) => prune_next_conv(graph.conv_mut(id), opt, &keep)?,
                Successor::Linear { node, block } => prune_next_linear(graph.linear_mut(node), block, opt, &keep)?,
            }
        }
    }
    Ok(())
}

/// Whole-graph consistency: layer shapes chain correctly, every parameter
/// has a gradient and momentum of its own shape, and grouped convs agree.
pub fn shape_audit(graph: &ModelGraph, opt: &SgdMomentum) -> Result<()> {
    graph.infer_shapes()?;
    for (name, value, grad) in graph.params() {
        if grad.shape() != value.shape() {
            return Err(Error::Audit(format!(
                "gradient of `{name}` has shape {:?}, parameter {:?}",
                grad.shape(),
                value.shape()
            )));
        }
        match opt.momentum(&name) {
            Some(m) if m.shape() == value.shape() => {}
            Some(m) => {
                return Err(Error::Audit(format!(
                    "momentum of `{name}` has shape {:?}, parameter {:?}",
                    m.shape(),
                    value.shape()
                )))
            }
            None => return Err(Error::Audit(format!("no momentum for `{name}`"))),
        }
    }
    for id in graph.conv_ids() {
        let c = graph.conv(id);
        if c.n_out() == 0 {
            return Err(Error::Audit(format!("conv `{}` has no filters left", c.name)));
        }
        if c.live_mask.iter().filter(|l| **l).count() != c.n_out() || c.soft_mask.len() != c.n_out() {
            return Err(Error::Audit(format!("conv `{}` bookkeeping out of sync", c.name)));
        }
    }
    for g in graph.groups() {
        let first = graph.conv(g.members[0]);
        for &m in &g.members[1..] {
            let c = graph.conv(m);
            if c.live_mask != first.live_mask || c.soft_mask != first.soft_mask {
                return Err(Error::Audit(format!(
                    "grouped convs `{}` and `{}` differ",
                    first.name, c.name
                )));
            }
        }
        if !g.prunable {
            for &m in &g.members {
                let c = graph.conv(m);
                if c.n_out() != c.original_n_out || c.soft_count() > 0 {
                    return Err(Error::Audit(format!("unprunable conv `{}` was pruned", c.name)));
                }
            }
        }
    }
    Ok(())
}

fn rows_zero(t: &Tensor, rows: &[usize]) -> bool {
    rows.iter().all(|&r| t.row(r).iter().all(|v| *v == 0.0))
}

/// Every soft-pruned filter is exactly zero in its weight, bias, gradient,
/// and momentum rows, and its batch norm shift is zero. Meaningful right
/// after a prune event, before training resumes.
pub fn soft_zero_audit(graph: &ModelGraph, opt: &SgdMomentum) -> Result<()> {
    for g in graph.groups() {
        for &m in &g.members {
            let c = graph.conv(m);
            let rows = c.soft_rows();
            let mw = opt.momentum(&format!("{}.weight", c.name));
            let mb = opt.momentum(&format!("{}.bias", c.name));
            let ok = rows_zero(&c.weight, &rows)
                && rows_zero(&c.bias, &rows)
                && rows_zero(&c.grad_weight, &rows)
                && rows_zero(&c.grad_bias, &rows)
                && mw.is_some_and(|m| rows_zero(m, &rows))
                && mb.is_some_and(|m| rows_zero(m, &rows));
            if !ok {
                return Err(Error::Audit(format!("soft-pruned rows of `{}` are not zero", c.name)));
            }
            for &b in &g.batchnorms {
                let bn = graph.batchnorm(b);
                if !rows_zero(&bn.beta, &rows) || !rows_zero(&bn.grad_beta, &rows) {
                    return Err(Error::Audit(format!("soft-pruned channels of `{}` are not zero", bn.name)));
                }
            }
        }
    }
    Ok(())
}

/// `(name, live, soft, hard)` for every conv, in graph order.
pub fn filter_counts(graph: &ModelGraph) -> Vec<(String, usize, usize, usize)> {
    graph
        .conv_ids()
        .into_iter()
        .map(|id| {
            let c = graph.conv(id);
            let soft = c.soft_count();
            (c.name.clone(), c.n_out() - soft, soft, c.original_n_out - c.n_out())
        })
        .collect()
}

/// Total scalar parameters (conv, batch norm scale/shift, linear).
pub fn count_params(graph: &ModelGraph) -> usize {
    graph.params().iter().map(|(_, v, _)| v.len()).sum()
}

/// Multiply-accumulates of one forward pass on a single input:
/// conv `n_out*n_in*k*k*H_out*W_out` plus linear `in*out`.
pub fn count_flops(graph: &ModelGraph) -> Result<usize> {
    let shapes = graph.infer_shapes()?;
    let mut total = 0;
    for (id, node) in graph.nodes().iter().enumerate() {
        match &node.op {
            Op::Conv(c) => {
                let s = &shapes[id];
                total += c.n_out() * c.n_in() * c.kernel() * c.kernel() * s[1] * s[2];
            }
            Op::Linear(l) => total += l.n_in() * l.n_out(),
            _ => {}
        }
    }
    Ok(total)
}
