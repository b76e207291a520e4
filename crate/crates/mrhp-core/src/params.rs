//! Flat, ordered registry of named trainable parameters.
//!
//! Model components hold [`ParamId`]s into one shared [`ParamSet`]. Each
//! forward/backward pass clones the current values onto a fresh tape via
//! [`ParamSet::bind`]; after `backward`, gradients are read back in the same
//! order. Registration order is the canonical order for checkpoints and
//! optimizer state.

use crate::tensor::{Tape, Tensor, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let id = ParamId(self.entries.len());
        self.entries.push(Param {
            name: name.into(),
            value: value.with_grad(),
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    /// Element count of every parameter, in registration order.
    pub fn lens(&self) -> Vec<usize> {
        self.entries.iter().map(|p| p.value.numel()).collect()
    }

    /// Mutable data slices in registration order, for the optimizer.
    pub fn values_mut(&mut self) -> Vec<&mut [f64]> {
        self.entries
            .iter_mut()
            .map(|p| p.value.data_mut())
            .collect()
    }

    /// Register every parameter on `tape` (cloning current values) and
    /// return the id mapping.
    pub fn bind(&self, tape: &mut Tape) -> ParamBinding {
        let ids = self
            .entries
            .iter()
            .map(|p| tape.input(p.value.clone()))
            .collect();
        ParamBinding { ids }
    }
}

/// Tape ids for one pass, aligned with the owning [`ParamSet`].
pub struct ParamBinding {
    ids: Vec<TensorId>,
}

impl ParamBinding {
    pub fn id(&self, param: ParamId) -> TensorId {
        self.ids[param.0]
    }

    /// Gradients for every parameter after a backward pass, zeros where the
    /// loss did not reach.
    pub fn collect_grads(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.ids.iter().map(|&id| tape.grad_or_zeros(id)).collect()
    }
}

/// Central-finite-difference check of a scalar function of a whole
/// parameter set. Returns the max over all parameter coordinates of
/// |analytic − numeric| / max(1, |numeric|), with the name of the worst
/// parameter.
pub fn grad_check_params<F>(
    params: &ParamSet,
    h: f64,
    build: F,
) -> crate::tensor::Result<(f64, String)>
where
    F: Fn(&mut Tape, &ParamBinding) -> crate::tensor::Result<TensorId>,
{
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let loss = build(&mut tape, &bind)?;
    tape.backward(loss)?;
    let analytic = bind.collect_grads(&tape);

    let eval = |ps: &ParamSet| -> crate::tensor::Result<f64> {
        let mut tape = Tape::new();
        let bind = ps.bind(&mut tape);
        let loss = build(&mut tape, &bind)?;
        Ok(tape.scalar(loss))
    };

    let mut work = params.clone();
    let mut worst = (0.0f64, String::new());
    for pi in 0..params.len() {
        for ci in 0..params.entries[pi].value.numel() {
            let orig = work.entries[pi].value.data()[ci];
            work.entries[pi].value.data_mut()[ci] = orig + h;
            let f_plus = eval(&work)?;
            work.entries[pi].value.data_mut()[ci] = orig - h;
            let f_minus = eval(&work)?;
            work.entries[pi].value.data_mut()[ci] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let rel = (analytic[pi][ci] - numeric).abs() / numeric.abs().max(1.0);
            if rel > worst.0 {
                worst = (rel, params.entries[pi].name.clone());
            }
        }
    }
    Ok(worst)
}
