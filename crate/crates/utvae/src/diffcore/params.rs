//! Trainable parameters, their group tags, and gradient maps.
//!
//! Parameters are tagged at creation as generative, inference, or auxiliary
//! so objectives can route gradients per group. The store owns the values;
//! tapes copy them in at graph-construction time and gradient maps refer
//! back to them by id.

use super::tensor::Tensor;

/// Stable index of a parameter within its [`ParamStore`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which network a parameter belongs to.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ParamGroup {
    /// The observation model over (x, t, y) given z.
    Generative,
    /// The approximate posterior over z.
    Inference,
    /// The treatment and outcome predictors used for counterfactual queries.
    Auxiliary,
}

/// One named, group-tagged trainable tensor.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    group: ParamGroup,
    value: Tensor,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn group(&self) -> ParamGroup {
        self.group
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }
}

/// Owning collection of all parameters of one model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Names must be unique; they identify parameters
    /// in checkpoints and error messages.
    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name `{name}`"
        );
        self.params.push(Parameter { name, group, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn ids_in_group(&self, group: ParamGroup) -> impl Iterator<Item = ParamId> + '_ {
        self.params
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.group == group)
            .map(|(i, _)| ParamId(i))
    }
}

/// Gradients keyed by [`ParamId`]. A missing entry means the parameter was
/// not reached from the backward root, i.e. its gradient is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMap {
    grads: Vec<Option<Tensor>>,
}

impl GradientMap {
    pub fn new(n_params: usize) -> Self {
        GradientMap { grads: vec![None; n_params] }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn set(&mut self, id: ParamId, grad: Tensor) {
        self.grads[id.0] = Some(grad);
    }

    pub fn take(&mut self, id: ParamId) -> Option<Tensor> {
        self.grads[id.0].take()
    }

    /// Add `contribution` into the entry for `id`, creating it if absent.
    pub fn accumulate(&mut self, id: ParamId, contribution: &Tensor) {
        match &mut self.grads[id.0] {
            Some(acc) => {
                assert_eq!(acc.shape(), contribution.shape(), "gradient shape changed between contributions");
                for (a, b) in acc.data_mut().iter_mut().zip(contribution.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(contribution.clone()),
        }
    }

    /// Move every entry belonging to `group` out of `source` into `self`.
    /// Used to stitch per-group gradients harvested from different roots.
    pub fn adopt_group(&mut self, source: &mut GradientMap, store: &ParamStore, group: ParamGroup) {
        assert_eq!(self.len(), source.len(), "gradient maps cover different parameter counts");
        for id in store.ids_in_group(group) {
            if let Some(g) = source.take(id) {
                self.grads[id.0] = Some(g);
            }
        }
    }
}
