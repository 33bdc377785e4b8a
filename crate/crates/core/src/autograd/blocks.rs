//! Parameterized building blocks: linear layers, layer norm with affine
//! part, feed-forward blocks, small MLP heads, and conv layers.

use ndarray::{Array1, ArrayD};
use rand::Rng;

use super::conv::conv2d;
use super::params::{ParamStore, Session};
use super::real::Real;
use super::tape::Var;

pub(crate) const LN_EPS: f64 = 1e-5;

fn uniform_init<F: Real>(rng: &mut impl Rng, shape: &[usize], limit: f64) -> ArrayD<F> {
    let n: usize = shape.iter().product();
    let data: Vec<F> = (0..n)
        .map(|_| F::c(rng.gen_range(-limit..limit)))
        .collect();
    ArrayD::from_shape_vec(ndarray::IxDyn(shape), data).expect("init shape")
}

/// Fully connected layer, `y = x W + b` with `W` stored `[din, dout]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, din: usize, dout: usize) -> Self {
        Linear {
            name: name.into(),
            din,
            dout,
        }
    }

    pub fn register<F: Real>(&self, store: &mut ParamStore<F>, rng: &mut impl Rng) {
        let limit = (6.0 / (self.din + self.dout) as f64).sqrt();
        store.insert(
            format!("{}.w", self.name),
            uniform_init(rng, &[self.din, self.dout], limit),
        );
        store.insert(
            format!("{}.b", self.name),
            ArrayD::zeros(ndarray::IxDyn(&[self.dout])),
        );
    }

    /// Forward for a `[n, din]` batch.
    pub fn forward<'t, F: Real>(&self, sess: &Session<'t, F>, x: Var<'t, F>) -> Var<'t, F> {
        let w = sess.param(&format!("{}.w", self.name));
        let b = sess.param(&format!("{}.b", self.name));
        x.matmul(w).add_row(b)
    }

    /// Forward for a single `[din]` vector.
    pub fn forward_vec<'t, F: Real>(&self, sess: &Session<'t, F>, x: Var<'t, F>) -> Var<'t, F> {
        let n = x.value().len();
        self.forward(sess, x.reshape(&[1, n])).reshape(&[self.dout])
    }
}

/// Layer normalization over the last axis with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        LayerNorm {
            name: name.into(),
            dim,
        }
    }

    pub fn register<F: Real>(&self, store: &mut ParamStore<F>, _rng: &mut impl Rng) {
        store.insert(
            format!("{}.g", self.name),
            Array1::<F>::ones(self.dim).into_dyn(),
        );
        store.insert(
            format!("{}.b", self.name),
            ArrayD::zeros(ndarray::IxDyn(&[self.dim])),
        );
    }

    pub fn forward<'t, F: Real>(&self, sess: &Session<'t, F>, x: Var<'t, F>) -> Var<'t, F> {
        let g = sess.param(&format!("{}.g", self.name));
        let b = sess.param(&format!("{}.b", self.name));
        let normed = x.layer_norm(LN_EPS);
        if x.value().ndim() == 1 {
            normed.mul(g).add(b)
        } else {
            normed.mul_row(g).add_row(b)
        }
    }
}

/// Two-layer feed-forward block with ReLU, `dim -> hidden -> dim`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
}

impl FeedForward {
    pub fn new(name: &str, dim: usize, hidden: usize) -> Self {
        FeedForward {
            lin1: Linear::new(format!("{name}.1"), dim, hidden),
            lin2: Linear::new(format!("{name}.2"), hidden, dim),
        }
    }

    pub fn register<F: Real>(&self, store: &mut ParamStore<F>, rng: &mut impl Rng) {
        self.lin1.register(store, rng);
        self.lin2.register(store, rng);
    }

    pub fn forward<'t, F: Real>(&self, sess: &Session<'t, F>, x: Var<'t, F>) -> Var<'t, F> {
        if x.value().ndim() == 1 {
            self.lin2
                .forward_vec(sess, self.lin1.forward_vec(sess, x).relu())
        } else {
            self.lin2.forward(sess, self.lin1.forward(sess, x).relu())
        }
    }
}

/// Small MLP head: ReLU between layers, raw output on the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(name: &str, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least one layer");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Mlp { layers }
    }

    pub fn register<F: Real>(&self, store: &mut ParamStore<F>, rng: &mut impl Rng) {
        for l in &self.layers {
            l.register(store, rng);
        }
    }

    pub fn forward<'t, F: Real>(&self, sess: &Session<'t, F>, x: Var<'t, F>) -> Var<'t, F> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(sess, h);
            if i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        h
    }
}

/// Square-kernel conv layer over a `[C, H, W]` image.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    pub fn new(
        name: impl Into<String>,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        ConvLayer {
            name: name.into(),
            cin,
            cout,
            k,
            stride,
            pad,
        }
    }

    pub fn register<F: Real>(&self, store: &mut ParamStore<F>, rng: &mut impl Rng) {
        let fan_in = (self.cin * self.k * self.k) as f64;
        let limit = (6.0 / fan_in).sqrt();
        store.insert(
            format!("{}.w", self.name),
            uniform_init(rng, &[self.cout, self.cin, self.k, self.k], limit),
        );
        store.insert(
            format!("{}.b", self.name),
            ArrayD::zeros(ndarray::IxDyn(&[self.cout])),
        );
    }

    pub fn forward<'t, F: Real>(&self, sess: &Session<'t, F>, x: Var<'t, F>) -> Var<'t, F> {
        let w = sess.param(&format!("{}.w", self.name));
        let b = sess.param(&format!("{}.b", self.name));
        conv2d(x, w, b, self.stride, self.pad)
    }
}
