//! Dense multi-head attention and deformable cross-attention.
//!
//! The deformable variant attends to a small set of sample points offset
//! from a per-query reference position. Offsets and attention weights are
//! predicted from the query by linear maps; the weights are softmax
//! normalized jointly over all `heads * points` slots of a query, so each
//! query's slot weights sum to one.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

use super::blocks::Linear;
use super::ops::concat_cols;
use super::params::{ParamStore, Session};
use super::real::Real;
use super::sample::bilinear_sample_many;
use super::tape::Var;

/// Shape configuration shared by the attention layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    /// Sample points per head (deformable attention only).
    pub num_points: usize,
}

impl AttentionConfig {
    pub fn new(embed_dim: usize, num_heads: usize, num_points: usize) -> Result<Self> {
        if num_heads == 0 || embed_dim % num_heads != 0 {
            return Err(Error::Shape(format!(
                "embed_dim {embed_dim} not divisible by heads {num_heads}"
            )));
        }
        if num_points == 0 {
            return Err(Error::Shape("need at least one sample point".into()));
        }
        Ok(AttentionConfig {
            embed_dim,
            num_heads,
            num_points,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }
}

/// Standard scaled-dot-product multi-head attention.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub cfg: AttentionConfig,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
}

impl MultiHeadAttention {
    pub fn new(name: &str, cfg: AttentionConfig) -> Self {
        let c = cfg.embed_dim;
        MultiHeadAttention {
            cfg,
            wq: Linear::new(format!("{name}.wq"), c, c),
            wk: Linear::new(format!("{name}.wk"), c, c),
            wv: Linear::new(format!("{name}.wv"), c, c),
            wo: Linear::new(format!("{name}.wo"), c, c),
        }
    }

    pub fn register<F: Real>(&self, store: &mut ParamStore<F>, rng: &mut impl Rng) {
        self.wq.register(store, rng);
        self.wk.register(store, rng);
        self.wv.register(store, rng);
        self.wo.register(store, rng);
    }

    /// `queries` is `[Nq, c]`, `keys_values` is `[Nk, c]`; output `[Nq, c]`.
    pub fn forward<'t, F: Real>(
        &self,
        sess: &Session<'t, F>,
        queries: Var<'t, F>,
        keys_values: Var<'t, F>,
    ) -> Result<Var<'t, F>> {
        let c = self.cfg.embed_dim;
        let qs = queries.shape();
        let ks = keys_values.shape();
        if qs.len() != 2 || ks.len() != 2 || qs[1] != c || ks[1] != c {
            return Err(Error::Shape(format!(
                "attention wants [*, {c}] inputs, got {qs:?} and {ks:?}"
            )));
        }
        let dh = self.cfg.head_dim();
        let qp = self.wq.forward(sess, queries);
        let kp = self.wk.forward(sess, keys_values);
        let vp = self.wv.forward(sess, keys_values);
        let scale = 1.0 / (dh as f64).sqrt();

        let mut heads = Vec::with_capacity(self.cfg.num_heads);
        for m in 0..self.cfg.num_heads {
            let (c0, c1) = (m * dh, (m + 1) * dh);
            let qm = qp.slice_cols(c0, c1);
            let km = kp.slice_cols(c0, c1);
            let vm = vp.slice_cols(c0, c1);
            let attn = qm.matmul(km.transpose2()).scale(scale).softmax();
            heads.push(attn.matmul(vm));
        }
        let merged = concat_cols(&heads);
        Ok(self.wo.forward(sess, merged))
    }
}

/// One sample point read by deformable attention, in normalized coordinates.
#[derive(Debug, Clone, Copy)]
pub struct SamplePoint {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
}

/// Sample positions and weights per query, exposed for inspection.
#[derive(Debug, Clone, Default)]
pub struct DeformableSamples {
    pub per_query: Vec<Vec<SamplePoint>>,
}

/// Deformable cross-attention over a single-scale feature map.
#[derive(Debug, Clone)]
pub struct DeformableAttention {
    pub cfg: AttentionConfig,
    value_lin: Linear,
    offset_lin: Linear,
    weight_lin: Linear,
    out_lin: Linear,
}

impl DeformableAttention {
    pub fn new(name: &str, cfg: AttentionConfig) -> Self {
        let c = cfg.embed_dim;
        let slots = cfg.num_heads * cfg.num_points;
        DeformableAttention {
            cfg,
            value_lin: Linear::new(format!("{name}.value"), c, c),
            offset_lin: Linear::new(format!("{name}.offset"), c, slots * 2),
            weight_lin: Linear::new(format!("{name}.weight"), c, slots),
            out_lin: Linear::new(format!("{name}.out"), c, c),
        }
    }

    pub fn register<F: Real>(&self, store: &mut ParamStore<F>, rng: &mut impl Rng) {
        self.value_lin.register(store, rng);
        self.offset_lin.register(store, rng);
        self.weight_lin.register(store, rng);
        self.out_lin.register(store, rng);

        // Start with zero offset weights and a fixed spread of sample
        // points (bias in feature-cell units), and uniform attention.
        let (h, k) = (self.cfg.num_heads, self.cfg.num_points);
        store
            .get_mut(&format!("{}.w", self.offset_lin.name))
            .fill(F::zero());
        store
            .get_mut(&format!("{}.w", self.weight_lin.name))
            .fill(F::zero());
        let bias = store.get_mut(&format!("{}.b", self.offset_lin.name));
        for m in 0..h {
            let angle = 2.0 * std::f64::consts::PI * m as f64 / h as f64;
            for p in 0..k {
                let r = (p + 1) as f64;
                bias[[(m * k + p) * 2]] = F::c(r * angle.cos());
                bias[[(m * k + p) * 2 + 1]] = F::c(r * angle.sin());
            }
        }
    }

    /// `queries` is `[N, c]`, `refs` is `[N, 2]` normalized positions, and
    /// the feature map comes as `tokens` `[H*W, c]` in row-major order.
    /// Returns output embeddings `[N, c]` and the realized sample points.
    pub fn forward<'t, F: Real>(
        &self,
        sess: &Session<'t, F>,
        queries: Var<'t, F>,
        refs: Var<'t, F>,
        tokens: Var<'t, F>,
        map_h: usize,
        map_w: usize,
    ) -> Result<(Var<'t, F>, DeformableSamples)> {
        if map_h == 0 || map_w == 0 {
            return Err(Error::Shape("empty feature map".into()));
        }
        let c = self.cfg.embed_dim;
        let ts = tokens.shape();
        if ts.len() != 2 || ts[0] != map_h * map_w || ts[1] != c {
            return Err(Error::Shape(format!(
                "tokens shape {ts:?} does not match {map_h}x{map_w}x{c}"
            )));
        }
        let n = queries.shape()[0];
        let (heads, points) = (self.cfg.num_heads, self.cfg.num_points);
        let slots = heads * points;
        let dh = self.cfg.head_dim();
        let tape = sess.tape();

        // Project the value map once; sampling then reads projected values.
        let vmap = self
            .value_lin
            .forward(sess, tokens)
            .reshape(&[map_h, map_w, c]);

        // Offsets in feature-cell units, converted to normalized coords.
        let offsets = self
            .offset_lin
            .forward(sess, queries)
            .reshape(&[n * slots, 2]);
        let cell = tape.leaf1(ndarray::Array1::from_vec(vec![
            F::c(1.0 / map_w as f64),
            F::c(1.0 / map_h as f64),
        ]));
        let offsets_norm = offsets.mul_row(cell);

        // Repeat each query's reference for its slots: rows are (n, m, k).
        let mut rep = Array2::<F>::zeros((n * slots, n));
        for r in 0..n * slots {
            rep[[r, r / slots]] = F::one();
        }
        let positions = tape.leaf2(rep).matmul(refs).add(offsets_norm);

        // Joint softmax over all slots of a query.
        let weights = self.weight_lin.forward(sess, queries).softmax();

        let sampled = bilinear_sample_many(vmap, positions);

        // Reorder rows from (n, m, k) to (m, n, k) so each head is a
        // contiguous block, then apply weights and sum each slot group.
        let mut perm = Array2::<F>::zeros((n * slots, n * slots));
        for nn in 0..n {
            for m in 0..heads {
                for p in 0..points {
                    let src = nn * slots + m * points + p;
                    let dst = (m * n + nn) * points + p;
                    perm[[dst, src]] = F::one();
                }
            }
        }
        let perm = tape.leaf2(perm);
        let sampled_mnk = perm.matmul(sampled);
        let weights_mnk = perm
            .matmul(weights.reshape(&[n * slots, 1]))
            .reshape(&[n * slots]);
        let weighted = sampled_mnk.mul_col(weights_mnk);

        let mut group = Array2::<F>::zeros((heads * n, n * slots));
        for q in 0..heads * n {
            for p in 0..points {
                group[[q, q * points + p]] = F::one();
            }
        }
        let grouped = tape.leaf2(group).matmul(weighted); // [heads*n, c]

        let mut head_outs = Vec::with_capacity(heads);
        for m in 0..heads {
            head_outs.push(
                grouped
                    .slice_rows(m * n, (m + 1) * n)
                    .slice_cols(m * dh, (m + 1) * dh),
            );
        }
        let merged = concat_cols(&head_outs);
        let out = self.out_lin.forward(sess, merged);

        // Expose realized sample positions and weights, per query.
        let pos_v = positions.value();
        let w_v = weights.value();
        let mut per_query = Vec::with_capacity(n);
        for nn in 0..n {
            let mut pts = Vec::with_capacity(slots);
            for s in 0..slots {
                pts.push(SamplePoint {
                    x: pos_v[[nn * slots + s, 0]].f64(),
                    y: pos_v[[nn * slots + s, 1]].f64(),
                    weight: w_v[[nn, s]].f64(),
                });
            }
            per_query.push(pts);
        }
        Ok((out, DeformableSamples { per_query }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{ParamStore, Session, Tape};
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn identity<F: Real>(c: usize) -> ndarray::ArrayD<F> {
        let mut m = Array2::<F>::zeros((c, c));
        for i in 0..c {
            m[[i, i]] = F::one();
        }
        m.into_dyn()
    }

    #[test]
    fn single_key_forces_weight_one() {
        let cfg = AttentionConfig::new(4, 2, 1).unwrap();
        let mha = MultiHeadAttention::new("a", cfg);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut store: ParamStore<f64> = ParamStore::new();
        mha.register(&mut store, &mut rng);
        let tape = Tape::new();
        let sess = Session::new(&tape, &store);
        let q = tape.leaf2(Array2::from_shape_fn((3, 4), |(i, j)| (i + j) as f64 * 0.1));
        let kv = tape.leaf2(Array2::from_shape_fn((1, 4), |(_, j)| j as f64 * 0.2 - 0.3));
        let out = mha.forward(&sess, q, kv).unwrap();
        // With one key, attention weights are 1 regardless of the query, so
        // every output row equals wo(wv(kv)).
        let ov = out.value();
        for i in 1..3 {
            for j in 0..4 {
                assert!((ov[[i, j]] - ov[[0, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_keys_average_values() {
        let cfg = AttentionConfig::new(4, 1, 1).unwrap();
        let mha = MultiHeadAttention::new("a", cfg);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut store: ParamStore<f64> = ParamStore::new();
        mha.register(&mut store, &mut rng);
        let tape = Tape::new();
        let sess = Session::new(&tape, &store);
        let q = tape.leaf2(Array2::from_shape_fn((2, 4), |(i, j)| (i * 4 + j) as f64 * 0.1));
        // all keys identical -> uniform weights
        let kv = tape.leaf2(Array2::from_elem((5, 4), 0.7));
        let out = mha.forward(&sess, q, kv).unwrap();
        let single = tape.leaf2(Array2::from_elem((1, 4), 0.7));
        let out1 = mha.forward(&sess, q, single).unwrap();
        for (a, b) in out.value().iter().zip(out1.value().iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    /// Independent dense scaled-dot-product oracle.
    #[test]
    fn matches_direct_formula() {
        let cfg = AttentionConfig::new(4, 2, 1).unwrap();
        let mha = MultiHeadAttention::new("a", cfg);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut store: ParamStore<f64> = ParamStore::new();
        mha.register(&mut store, &mut rng);
        let tape = Tape::new();
        let sess = Session::new(&tape, &store);
        let qa = Array2::from_shape_fn((3, 4), |(i, j)| ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.5);
        let ka = Array2::from_shape_fn((4, 4), |(i, j)| ((i * 5 + j * 2) % 7) as f64 * 0.2 - 0.6);
        let q = tape.leaf2(qa.clone());
        let kv = tape.leaf2(ka.clone());
        let got = mha.forward(&sess, q, kv).unwrap();

        // Straight-line recomputation.
        let w = |n: &str| {
            store
                .get(n)
                .clone()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap()
        };
        let b = |n: &str| {
            store
                .get(n)
                .clone()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap()
        };
        let qp = qa.dot(&w("a.wq.w")) + &b("a.wq.b");
        let kp = ka.dot(&w("a.wk.w")) + &b("a.wk.b");
        let vp = ka.dot(&w("a.wv.w")) + &b("a.wv.b");
        let dh = 2usize;
        let mut merged = Array2::<f64>::zeros((3, 4));
        for m in 0..2 {
            let qm = qp.slice(ndarray::s![.., m * dh..(m + 1) * dh]);
            let km = kp.slice(ndarray::s![.., m * dh..(m + 1) * dh]);
            let vm = vp.slice(ndarray::s![.., m * dh..(m + 1) * dh]);
            let mut scores = qm.dot(&km.t());
            scores.mapv_inplace(|v| v / (dh as f64).sqrt());
            for mut row in scores.rows_mut() {
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|v| (v - mx).exp());
                let s: f64 = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            let om = scores.dot(&vm);
            merged
                .slice_mut(ndarray::s![.., m * dh..(m + 1) * dh])
                .assign(&om);
        }
        let want = merged.dot(&w("a.wo.w")) + &b("a.wo.b");
        for (a, bv) in got.value().iter().zip(want.iter()) {
            assert!((a - bv).abs() < 1e-10);
        }
    }

    fn neutral_deformable(
        cfg: AttentionConfig,
    ) -> (DeformableAttention, ParamStore<f64>) {
        let att = DeformableAttention::new("d", cfg);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut store: ParamStore<f64> = ParamStore::new();
        att.register(&mut store, &mut rng);
        let c = cfg.embed_dim;
        *store.get_mut("d.value.w") = identity::<f64>(c);
        store.get_mut("d.value.b").fill(0.0);
        *store.get_mut("d.out.w") = identity::<f64>(c);
        store.get_mut("d.out.b").fill(0.0);
        store.get_mut("d.offset.w").fill(0.0);
        store.get_mut("d.offset.b").fill(0.0);
        store.get_mut("d.weight.w").fill(0.0);
        store.get_mut("d.weight.b").fill(0.0);
        (att, store)
    }

    #[test]
    fn degenerate_single_point_reads_reference() {
        let cfg = AttentionConfig::new(3, 1, 1).unwrap();
        let (att, store) = neutral_deformable(cfg);
        let tape = Tape::new();
        let sess = Session::new(&tape, &store);
        let (h, w, c) = (4, 5, 3);
        let fmap = ndarray::Array3::from_shape_fn((h, w, c), |(y, x, ch)| {
            (y * 100 + x * 10 + ch) as f64
        });
        let tokens = tape.leaf(
            fmap.clone()
                .into_shape_with_order((h * w, c))
                .unwrap()
                .into_dyn(),
        );
        // Reference exactly on the center of pixel (x=2, y=1).
        let refs = tape.leaf2(ndarray::arr2(&[[(2.0 + 0.5) / 5.0, (1.0 + 0.5) / 4.0]]));
        let q = tape.leaf2(Array2::from_elem((1, 3), 0.3));
        let (out, samples) = att.forward(&sess, q, refs, tokens, h, w).unwrap();
        let ov = out.value();
        for ch in 0..c {
            assert!((ov[[0, ch]] - fmap[[1, 2, ch]]).abs() < 1e-10);
        }
        assert_eq!(samples.per_query.len(), 1);
        assert_eq!(samples.per_query[0].len(), 1);
        assert!((samples.per_query[0][0].weight - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_weights_average_samples() {
        let cfg = AttentionConfig::new(3, 1, 4).unwrap();
        let (att, mut store) = neutral_deformable(cfg);
        // Fixed distinct integer-cell offsets so samples hit exact pixels.
        let bias = store.get_mut("d.offset.b");
        let offs = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
        for (i, (dx, dy)) in offs.iter().enumerate() {
            bias[[i * 2]] = *dx;
            bias[[i * 2 + 1]] = *dy;
        }
        let tape = Tape::new();
        let sess = Session::new(&tape, &store);
        let (h, w, c) = (4, 5, 3);
        let fmap = ndarray::Array3::from_shape_fn((h, w, c), |(y, x, ch)| {
            (y * 31 + x * 7 + ch) as f64 * 0.1
        });
        let tokens = tape.leaf(
            fmap.clone()
                .into_shape_with_order((h * w, c))
                .unwrap()
                .into_dyn(),
        );
        let refs = tape.leaf2(ndarray::arr2(&[[(1.0 + 0.5) / 5.0, (1.0 + 0.5) / 4.0]]));
        let q = tape.leaf2(Array2::from_elem((1, 3), 0.0));
        let (out, samples) = att.forward(&sess, q, refs, tokens, h, w).unwrap();
        let ov = out.value();
        for ch in 0..c {
            let want = 0.25
                * (fmap[[1, 1, ch]] + fmap[[1, 2, ch]] + fmap[[2, 1, ch]] + fmap[[2, 2, ch]]);
            assert!((ov[[0, ch]] - want).abs() < 1e-10);
        }
        let wsum: f64 = samples.per_query[0].iter().map(|p| p.weight).sum();
        assert!((wsum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_feature_map_is_an_error() {
        let cfg = AttentionConfig::new(3, 1, 1).unwrap();
        let (att, store) = neutral_deformable(cfg);
        let tape = Tape::new();
        let sess = Session::new(&tape, &store);
        let tokens = tape.leaf2(Array2::<f64>::zeros((0, 3)));
        let refs = tape.leaf2(ndarray::arr2(&[[0.5, 0.5]]));
        let q = tape.leaf2(Array2::from_elem((1, 3), 0.0));
        assert!(att.forward(&sess, q, refs, tokens, 0, 0).is_err());
    }

    #[test]
    fn weights_sum_to_one_per_query() {
        let cfg = AttentionConfig::new(8, 4, 4).unwrap();
        let att = DeformableAttention::new("d", cfg);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut store: ParamStore<f64> = ParamStore::new();
        att.register(&mut store, &mut rng);
        // Perturb the weight head so the softmax is non-trivial.
        let wm = store.get_mut("d.weight.w");
        for (i, v) in wm.iter_mut().enumerate() {
            *v = ((i % 13) as f64 - 6.0) * 0.11;
        }
        let tape = Tape::new();
        let sess = Session::new(&tape, &store);
        let fmap = ndarray::Array3::<f64>::from_shape_fn((6, 6, 8), |(y, x, ch)| {
            ((y * x + ch) % 5) as f64 * 0.2
        });
        let tokens = tape.leaf(fmap.into_shape_with_order((36, 8)).unwrap().into_dyn());
        let refs = tape.leaf2(ndarray::arr2(&[[0.3, 0.4], [0.8, 0.2], [0.5, 0.9]]));
        let q = tape.leaf2(Array2::from_shape_fn((3, 8), |(i, j)| {
            (i as f64 - j as f64) * 0.17
        }));
        let (_, samples) = att.forward(&sess, q, refs, tokens, 6, 6).unwrap();
        for pts in &samples.per_query {
            assert_eq!(pts.len(), 16);
            let s: f64 = pts.iter().map(|p| p.weight).sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(pts.iter().all(|p| p.weight >= 0.0));
        }
    }
}
