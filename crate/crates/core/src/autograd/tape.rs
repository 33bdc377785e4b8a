use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{ArrayD, Array1, Array2};

use super::real::Real;

pub(crate) type BackFn<F> = Box<dyn Fn(&ArrayD<F>, &mut dyn FnMut(usize, ArrayD<F>))>;

struct Node<F: Real> {
    value: Rc<ArrayD<F>>,
    back: Option<BackFn<F>>,
}

/// Records a forward computation so gradients can be replayed in reverse.
///
/// Nodes are topologically ordered by construction: a node's parents always
/// have smaller indices, so [`Tape::backward`] is a single reverse sweep.
pub struct Tape<F: Real> {
    nodes: RefCell<Vec<Node<F>>>,
}

/// Handle to a value on the tape. Cheap to copy.
#[derive(Clone, Copy)]
pub struct Var<'t, F: Real> {
    pub(crate) tape: &'t Tape<F>,
    pub(crate) id: usize,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// An input with no gradient history (constants, images, labels).
    pub fn leaf(&self, value: ArrayD<F>) -> Var<'_, F> {
        self.push_node(value, None)
    }

    pub fn leaf1(&self, value: Array1<F>) -> Var<'_, F> {
        self.leaf(value.into_dyn())
    }

    pub fn leaf2(&self, value: Array2<F>) -> Var<'_, F> {
        self.leaf(value.into_dyn())
    }

    pub fn scalar(&self, value: F) -> Var<'_, F> {
        self.leaf1(Array1::from_elem(1, value))
    }

    pub(crate) fn push(&self, value: ArrayD<F>, back: BackFn<F>) -> Var<'_, F> {
        self.push_node(value, Some(back))
    }

    fn push_node(&self, value: ArrayD<F>, back: Option<BackFn<F>>) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            back,
        });
        Var { tape: self, id }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<ArrayD<F>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from `root`, which is seeded with a gradient of ones.
    /// Call with a scalar (single-element) root for a well-defined result.
    pub fn backward(&self, root: Var<'_, F>) -> Gradients<F> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<ArrayD<F>>> = vec![None; nodes.len()];
        grads[root.id] = Some(ArrayD::ones(nodes[root.id].value.raw_dim()));

        for i in (0..=root.id).rev() {
            let Some(gi) = grads[i].take() else { continue };
            if let Some(back) = &nodes[i].back {
                back(&gi, &mut |parent, contrib| {
                    debug_assert!(parent < i, "tape order violated");
                    match &mut grads[parent] {
                        Some(acc) => *acc += &contrib,
                        slot @ None => *slot = Some(contrib),
                    }
                });
                // Interior gradients are no longer needed once propagated.
            } else {
                grads[i] = Some(gi);
            }
        }
        Gradients { grads }
    }
}

/// Gradients produced by [`Tape::backward`]. Only leaves retain theirs.
pub struct Gradients<F: Real> {
    grads: Vec<Option<ArrayD<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, var: Var<'_, F>) -> Option<&ArrayD<F>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_, F>) -> Option<ArrayD<F>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

impl<'t, F: Real> Var<'t, F> {
    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn value(&self) -> Rc<ArrayD<F>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// The single element of a scalar-shaped variable.
    pub fn item(&self) -> F {
        let v = self.value();
        debug_assert_eq!(v.len(), 1, "item() on non-scalar");
        *v.iter().next().expect("empty value")
    }
}
