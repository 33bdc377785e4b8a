//! Named parameter storage and per-forward binding onto a tape.

use indexmap::IndexMap;
use ndarray::ArrayD;
use std::cell::RefCell;

use super::real::Real;
use super::tape::{Gradients, Tape, Var};

/// All learnable parameters of a model, keyed by a stable dotted name.
/// Insertion order is the canonical ordering for checkpoints and updates.
#[derive(Clone)]
pub struct ParamStore<F: Real> {
    entries: IndexMap<String, ArrayD<F>>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<F>) {
        let name = name.into();
        let prev = self.entries.insert(name.clone(), value);
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn get(&self, name: &str) -> &ArrayD<F> {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<F> {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<F>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<F>)> {
        self.entries.iter_mut()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.values().map(|v| v.len()).sum()
    }

    /// Convert every parameter to another scalar type (f32 <-> f64).
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        let mut out = ParamStore::new();
        for (name, value) in &self.entries {
            out.insert(name.clone(), value.mapv(|x| G::c(x.f64())));
        }
        out
    }
}

/// Binds parameters onto a tape lazily during one forward pass and collects
/// their gradients afterwards.
pub struct Session<'t, F: Real> {
    tape: &'t Tape<F>,
    store: &'t ParamStore<F>,
    bound: RefCell<IndexMap<String, usize>>,
}

impl<'t, F: Real> Session<'t, F> {
    pub fn new(tape: &'t Tape<F>, store: &'t ParamStore<F>) -> Self {
        Session {
            tape,
            store,
            bound: RefCell::new(IndexMap::new()),
        }
    }

    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    /// Fetch a parameter as a tape variable, binding it on first use so each
    /// parameter appears exactly once per tape.
    pub fn param(&self, name: &str) -> Var<'t, F> {
        if let Some(&id) = self.bound.borrow().get(name) {
            return Var { tape: self.tape, id };
        }
        let var = self.tape.leaf(self.store.get(name).clone());
        self.bound.borrow_mut().insert(name.to_string(), var.id);
        var
    }

    /// Pull gradients for every bound parameter. Parameters that did not
    /// participate in the loss get a zero gradient.
    pub fn collect_grads(&self, grads: &mut Gradients<F>) -> Vec<(String, ArrayD<F>)> {
        let bound = self.bound.borrow();
        let mut out = Vec::with_capacity(bound.len());
        for (name, &id) in bound.iter() {
            let var = Var { tape: self.tape, id };
            let g = grads
                .take(var)
                .unwrap_or_else(|| ArrayD::zeros(self.store.get(name).raw_dim()));
            out.push((name.clone(), g));
        }
        out
    }
}
