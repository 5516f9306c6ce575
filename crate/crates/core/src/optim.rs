//! SGD with momentum in the damped form
//!
//! ```text
//! M_t     = beta * M_{t-1} + (1 - beta) * dL/dW_t
//! W_{t+1} = W_t - alpha * M_t
//! ```
//!
//! Note the `(1 - beta)` factor on the gradient: with `beta = 0.9` the
//! steady-state step is `alpha * g`, not the `alpha * g / (1 - beta)` of the
//! undamped `M = beta * M + g` form.
//!
//! Momentum buffers are keyed by parameter name and are never rebuilt from
//! scratch when the model changes shape; pruning edits them in place through
//! [`SgdMomentum::prune_momentum`] and [`SgdMomentum::rebuild_after_hard_prune`].

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub alpha: f64,
    pub beta: f64,
    pub weight_decay: f64,
    names: Vec<String>,
    buffers: Vec<Tensor>,
    index: HashMap<String, usize>,
}

fn check_partition(hard: &[usize], soft: &[usize], rows: usize) -> Result<()> {
    for &i in hard.iter().chain(soft) {
        if i >= rows {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: rows,
                context: "prune_momentum",
            });
        }
    }
    if let Some(&dup) = hard.iter().find(|h| soft.contains(h)) {
        return Err(Error::OverlappingIndices(dup));
    }
    Ok(())
}

/// Complement of `removed` in `0..rows`, ascending.
pub fn keep_list(rows: usize, removed: &[usize]) -> Vec<usize> {
    (0..rows).filter(|i| !removed.contains(i)).collect()
}

impl SgdMomentum {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {alpha}")));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {beta}")));
        }
        Ok(Self {
            alpha,
            beta,
            weight_decay: 0.0,
            names: Vec::new(),
            buffers: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    /// Adds a zero momentum buffer for `name`. Re-registering replaces it.
    pub fn register(&mut self, name: &str, shape: &[usize]) {
        match self.index.get(name) {
            Some(&i) => self.buffers[i] = Tensor::zeros(shape),
            None => {
                self.index.insert(name.to_string(), self.names.len());
                self.names.push(name.to_string());
                self.buffers.push(Tensor::zeros(shape));
            }
        }
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn momentum(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.buffers[i])
    }

    pub fn momentum_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        Ok(&mut self.buffers[i])
    }

    /// One update of a single parameter: momentum first, then the weight.
    pub fn step_param(&mut self, name: &str, weight: &mut Tensor, grad: &Tensor) -> Result<()> {
        let (alpha, beta, wd) = (self.alpha, self.beta, self.weight_decay);
        let m = self.momentum_mut(name)?;
        if m.shape() != weight.shape() || grad.shape() != weight.shape() {
            let stale = if m.shape() != weight.shape() { m.shape() } else { grad.shape() };
            return Err(Error::StaleOptimizerState {
                param: name.to_string(),
                state: stale.to_vec(),
                param_shape: weight.shape().to_vec(),
            });
        }
        for ((mv, wv), &gv) in m
            .data_mut()
            .iter_mut()
            .zip(weight.data_mut().iter_mut())
            .zip(grad.data())
        {
            let g = if wd != 0.0 { gv + wd * *wv } else { gv };
            *mv = beta * *mv + (1.0 - beta) * g;
            *wv -= alpha * *mv;
        }
        Ok(())
    }

    /// Applies [`SgdMomentum::step_param`] to every `(name, weight, grad)`.
    /// Shapes are checked for all entries before anything is mutated.
    pub fn sgd_step<'a, N, I>(&mut self, params: I) -> Result<()>
    where
        N: AsRef<str>,
        I: IntoIterator<Item = (N, &'a mut Tensor, &'a Tensor)>,
    {
        let mut params: Vec<_> = params.into_iter().collect();
        for (name, w, g) in &params {
            let name = name.as_ref();
            let m = self
                .momentum(name)
                .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
            if m.shape() != w.shape() || g.shape() != w.shape() {
                return Err(Error::StaleOptimizerState {
                    param: name.to_string(),
                    state: m.shape().to_vec(),
                    param_shape: w.shape().to_vec(),
                });
            }
        }
        for (name, w, g) in params.iter_mut() {
            self.step_param(name.as_ref(), w, g)?;
        }
        Ok(())
    }

    /// Removes rows `hard` and zeroes rows `soft` of the momentum for `name`
    /// (indices refer to the rows before removal). Other rows are untouched.
    pub fn prune_momentum(&mut self, name: &str, hard: &[usize], soft: &[usize]) -> Result<()> {
        let m = self.momentum_mut(name)?;
        let rows = m.shape().first().copied().unwrap_or(0);
        check_partition(hard, soft, rows)?;
        let mut next = m.clone();
        next.zero_rows(soft)?;
        if !hard.is_empty() {
            next = next.slice_axis0(&keep_list(rows, hard))?;
        }
        *m = next;
        Ok(())
    }

    /// Re-slices the momentum of `name` after its parameter lost rows
    /// (`keep` on axis 0) and, optionally, input channels (`input_keep` on
    /// axis 1). Surviving entries keep their accumulated values.
    pub fn rebuild_after_hard_prune(
        &mut self,
        name: &str,
        keep: &[usize],
        input_keep: Option<&[usize]>,
    ) -> Result<()> {
        let m = self.momentum_mut(name)?;
        let mut next = m.slice_axis0(keep)?;
        if let Some(cols) = input_keep {
            next = next.slice_axis1(cols)?;
        }
        *m = next;
        Ok(())
    }

    /// Zeroes every momentum buffer (used when fine-tuning restarts).
    pub fn reset(&mut self) {
        for b in &mut self.buffers {
            b.fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sgd(alpha: f64, beta: f64) -> SgdMomentum {
        SgdMomentum::new(alpha, beta).unwrap()
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let mut opt = sgd(0.1, 0.9);
        opt.register("w", &[1]);
        let mut w = Tensor::from_vec(vec![0.0]);
        opt.step_param("w", &mut w, &Tensor::from_vec(vec![1.0])).unwrap();
        assert!((opt.momentum("w").unwrap().data()[0] - 0.1).abs() < 1e-15);
        assert!((w.data()[0] + 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_beta_is_plain_gradient_descent() {
        let mut opt = sgd(1.0, 0.0);
        opt.register("w", &[3]);
        let mut w = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let g = Tensor::from_vec(vec![0.25, -0.5, 4.0]);
        opt.step_param("w", &mut w, &g).unwrap();
        assert_eq!(w.data(), &[0.75, 2.5, -1.0]);
    }

    #[test]
    fn two_steps_constant_gradient() {
        let mut opt = sgd(0.01, 0.5);
        opt.register("w", &[1]);
        let mut w = Tensor::from_vec(vec![0.0]);
        let g = Tensor::from_vec(vec![2.0]);
        opt.step_param("w", &mut w, &g).unwrap();
        assert_eq!(opt.momentum("w").unwrap().data()[0], 0.5 * 2.0);
        opt.step_param("w", &mut w, &g).unwrap();
        assert_eq!(opt.momentum("w").unwrap().data()[0], 0.75 * 2.0);
    }

    #[test]
    fn stale_state_is_reported_by_name() {
        let mut opt = sgd(0.1, 0.9);
        opt.register("conv1.weight", &[4, 2]);
        let mut w = Tensor::zeros(&[3, 2]);
        let g = Tensor::zeros(&[3, 2]);
        match opt.sgd_step([("conv1.weight", &mut w, &g)]) {
            Err(Error::StaleOptimizerState { param, .. }) => assert_eq!(param, "conv1.weight"),
            other => panic!("expected stale state error, got {other:?}"),
        }
    }

    #[test]
    fn prune_momentum_examples() {
        let mut opt = sgd(0.1, 0.9);
        opt.register("m", &[4, 2]);
        *opt.momentum_mut("m").unwrap() =
            Tensor::new(vec![4, 2], vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let before = opt.momentum("m").unwrap().clone();
        opt.prune_momentum("m", &[], &[]).unwrap();
        assert_eq!(opt.momentum("m").unwrap(), &before);

        opt.prune_momentum("m", &[1], &[3]).unwrap();
        let m = opt.momentum("m").unwrap();
        assert_eq!(m.shape(), &[3, 2]);
        assert_eq!(m.data(), &[1., 2., 5., 6., 0., 0.]);
    }

    #[test]
    fn prune_momentum_rejects_overlap() {
        let mut opt = sgd(0.1, 0.9);
        opt.register("m", &[4]);
        assert!(matches!(
            opt.prune_momentum("m", &[1, 2], &[2]),
            Err(Error::OverlappingIndices(2))
        ));
        assert!(opt.prune_momentum("m", &[4], &[]).is_err());
    }

    #[test]
    fn soft_pruned_row_restarts_without_history() {
        let (alpha, beta) = (0.05, 0.9);
        let mut opt = sgd(alpha, beta);
        opt.register("w", &[2, 2]);
        let mut w = Tensor::new(vec![2, 2], vec![1.0, -1.0, 2.0, 0.5]).unwrap();
        let g0 = Tensor::new(vec![2, 2], vec![3.0, 3.0, -3.0, -3.0]).unwrap();
        for _ in 0..5 {
            opt.step_param("w", &mut w, &g0).unwrap();
        }
        w.zero_rows(&[1]).unwrap();
        opt.prune_momentum("w", &[], &[1]).unwrap();
        let g = Tensor::new(vec![2, 2], vec![0.3, 0.1, 0.7, -0.2]).unwrap();
        opt.step_param("w", &mut w, &g).unwrap();
        for (j, &gv) in g.row(1).iter().enumerate() {
            let expected = -alpha * (1.0 - beta) * gv;
            assert!((w.row(1)[j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn rebuild_preserves_surviving_rows() {
        let mut opt = sgd(0.1, 0.9);
        opt.register("m", &[2, 3, 1, 1]);
        *opt.momentum_mut("m").unwrap() =
            Tensor::new(vec![2, 3, 1, 1], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let before = opt.momentum("m").unwrap().clone();
        opt.rebuild_after_hard_prune("m", &[0, 1], None).unwrap();
        assert_eq!(opt.momentum("m").unwrap(), &before);
        opt.rebuild_after_hard_prune("m", &[0, 1], Some(&[0, 2])).unwrap();
        assert_eq!(opt.momentum("m").unwrap().shape(), &[2, 2, 1, 1]);
        assert_eq!(opt.momentum("m").unwrap().data(), &[1., 3., 4., 6.]);
        opt.rebuild_after_hard_prune("m", &[0], None).unwrap();
        assert_eq!(opt.momentum("m").unwrap().data(), &[1., 3.]);
        assert!(opt.rebuild_after_hard_prune("m", &[1], None).is_err());
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(SgdMomentum::new(0.0, 0.9).is_err());
        assert!(SgdMomentum::new(0.1, 1.0).is_err());
        assert!(SgdMomentum::new(0.1, -0.1).is_err());
    }
}
