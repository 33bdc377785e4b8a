//! Primitive differentiable operations on [`Var`] handles.

use ndarray::{ArrayD, Array1, Array2, Axis, Ix1, Ix2};

use super::real::Real;
use super::tape::Var;

fn as2<F: Real>(a: &ArrayD<F>) -> ndarray::ArrayView2<'_, F> {
    a.view().into_dimensionality::<Ix2>().expect("expected 2-D")
}

fn as1<F: Real>(a: &ArrayD<F>) -> ndarray::ArrayView1<'_, F> {
    a.view().into_dimensionality::<Ix1>().expect("expected 1-D")
}

impl<'t, F: Real> Var<'t, F> {
    fn unary(
        self,
        f: impl Fn(F) -> F,
        df: impl Fn(F) -> F + 'static,
    ) -> Var<'t, F> {
        let x = self.value();
        let out = x.mapv(&f);
        let id = self.id;
        self.tape.push(
            out,
            Box::new(move |g, sink| {
                let mut dx = x.mapv(&df);
                dx *= g;
                sink(id, dx);
            }),
        )
    }

    fn binary(
        self,
        other: Var<'t, F>,
        f: impl Fn(F, F) -> F,
        dfa: impl Fn(F, F) -> F + 'static,
        dfb: impl Fn(F, F) -> F + 'static,
    ) -> Var<'t, F> {
        let a = self.value();
        let b = other.value();
        assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
        let mut out = ArrayD::zeros(a.raw_dim());
        ndarray::Zip::from(&mut out)
            .and(a.as_ref())
            .and(b.as_ref())
            .for_each(|o, &x, &y| *o = f(x, y));
        let (ia, ib) = (self.id, other.id);
        self.tape.push(
            out,
            Box::new(move |g, sink| {
                let mut da = ArrayD::zeros(a.raw_dim());
                ndarray::Zip::from(&mut da)
                    .and(g)
                    .and(a.as_ref())
                    .and(b.as_ref())
                    .for_each(|o, &gv, &x, &y| *o = gv * dfa(x, y));
                sink(ia, da);
                let mut db = ArrayD::zeros(b.raw_dim());
                ndarray::Zip::from(&mut db)
                    .and(g)
                    .and(a.as_ref())
                    .and(b.as_ref())
                    .for_each(|o, &gv, &x, &y| *o = gv * dfb(x, y));
                sink(ib, db);
            }),
        )
    }

    pub fn add(self, o: Var<'t, F>) -> Var<'t, F> {
        self.binary(o, |a, b| a + b, |_, _| F::one(), |_, _| F::one())
    }

    pub fn sub(self, o: Var<'t, F>) -> Var<'t, F> {
        self.binary(o, |a, b| a - b, |_, _| F::one(), |_, _| -F::one())
    }

    pub fn mul(self, o: Var<'t, F>) -> Var<'t, F> {
        self.binary(o, |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(self, o: Var<'t, F>) -> Var<'t, F> {
        self.binary(
            o,
            |a, b| a / b,
            |_, b| F::one() / b,
            |a, b| -a / (b * b),
        )
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn minimum(self, o: Var<'t, F>) -> Var<'t, F> {
        self.binary(
            o,
            |a, b| a.min(b),
            |a, b| if a <= b { F::one() } else { F::zero() },
            |a, b| if a <= b { F::zero() } else { F::one() },
        )
    }

    /// Elementwise maximum; ties route the gradient to `self`.
    pub fn maximum(self, o: Var<'t, F>) -> Var<'t, F> {
        self.binary(
            o,
            |a, b| a.max(b),
            |a, b| if a >= b { F::one() } else { F::zero() },
            |a, b| if a >= b { F::zero() } else { F::one() },
        )
    }

    pub fn neg(self) -> Var<'t, F> {
        self.scale(-1.0)
    }

    pub fn scale(self, k: f64) -> Var<'t, F> {
        let k = F::c(k);
        self.unary(move |x| x * k, move |_| k)
    }

    /// Add a constant to every element.
    pub fn shift(self, k: f64) -> Var<'t, F> {
        let k = F::c(k);
        self.unary(move |x| x + k, |_| F::one())
    }

    pub fn relu(self) -> Var<'t, F> {
        self.unary(
            |x| x.max(F::zero()),
            |x| if x > F::zero() { F::one() } else { F::zero() },
        )
    }

    pub fn sigmoid(self) -> Var<'t, F> {
        let one = F::one();
        let sig = move |x: F| {
            if x >= F::zero() {
                one / (one + (-x).exp())
            } else {
                let e = x.exp();
                e / (one + e)
            }
        };
        self.unary(sig, move |x| {
            let s = sig(x);
            s * (one - s)
        })
    }

    pub fn ln(self) -> Var<'t, F> {
        self.unary(|x| x.ln(), |x| F::one() / x)
    }

    pub fn sqrt(self) -> Var<'t, F> {
        self.unary(
            |x| x.sqrt(),
            |x| F::c(0.5) / x.sqrt(),
        )
    }

    pub fn abs(self) -> Var<'t, F> {
        self.unary(
            |x| x.abs(),
            |x| {
                if x > F::zero() {
                    F::one()
                } else if x < F::zero() {
                    -F::one()
                } else {
                    F::zero()
                }
            },
        )
    }

    pub fn powf(self, p: f64) -> Var<'t, F> {
        let p = F::c(p);
        self.unary(move |x| x.powf(p), move |x| p * x.powf(p - F::one()))
    }

    /// Clamp into `[lo, hi]`; gradient is zero outside the open interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t, F> {
        let (lo, hi) = (F::c(lo), F::c(hi));
        self.unary(
            move |x| x.min(hi).max(lo),
            move |x| {
                if x > lo && x < hi {
                    F::one()
                } else {
                    F::zero()
                }
            },
        )
    }

    /// Matrix product of two 2-D variables.
    pub fn matmul(self, o: Var<'t, F>) -> Var<'t, F> {
        let a = self.value();
        let b = o.value();
        let av = as2(&a);
        let bv = as2(&b);
        assert_eq!(av.ncols(), bv.nrows(), "matmul inner dims");
        let out = av.dot(&bv).into_dyn();
        let (ia, ib) = (self.id, o.id);
        self.tape.push(
            out,
            Box::new(move |g, sink| {
                let gv = as2(g);
                let da = gv.dot(&as2(&b).t()).into_dyn();
                let db = as2(&a).t().dot(&gv).into_dyn();
                sink(ia, da);
                sink(ib, db);
            }),
        )
    }

    pub fn transpose2(self) -> Var<'t, F> {
        let a = self.value();
        let out = as2(&a).t().to_owned().into_dyn();
        let id = self.id;
        self.tape.push(
            out,
            Box::new(move |g, sink| {
                sink(id, as2(g).t().to_owned().into_dyn());
            }),
        )
    }

    /// Broadcast-add a 1-D row vector to every row of a 2-D variable.
    pub fn add_row(self, row: Var<'t, F>) -> Var<'t, F> {
        let a = self.value();
        let r = row.value();
        let mut out = as2(&a).to_owned();
        out += &as1(&r);
        let (ia, ir) = (self.id, row.id);
        self.tape.push(
            out.into_dyn(),
            Box::new(move |g, sink| {
                sink(ia, g.clone());
                sink(ir, as2(g).sum_axis(Axis(0)).into_dyn());
            }),
        )
    }

    /// Broadcast-multiply every row of a 2-D variable by a 1-D row vector.
    pub fn mul_row(self, row: Var<'t, F>) -> Var<'t, F> {
        let a = self.value();
        let r = row.value();
        let mut out = as2(&a).to_owned();
        out *= &as1(&r);
        let (ia, ir) = (self.id, row.id);
        self.tape.push(
            out.into_dyn(),
            Box::new(move |g, sink| {
                let gv = as2(g);
                let mut da = gv.to_owned();
                da *= &as1(&r);
                sink(ia, da.into_dyn());
                let mut dr = Array1::<F>::zeros(r.len());
                for (grow, arow) in gv.rows().into_iter().zip(as2(&a).rows()) {
                    for ((d, &gx), &ax) in dr.iter_mut().zip(grow.iter()).zip(arow.iter()) {
                        *d += gx * ax;
                    }
                }
                sink(ir, dr.into_dyn());
            }),
        )
    }

    /// Broadcast-multiply every row `i` of a 2-D variable by `col[i]`.
    pub fn mul_col(self, col: Var<'t, F>) -> Var<'t, F> {
        let a = self.value();
        let cvals = col.value();
        let av = as2(&a);
        let cv = as1(&cvals);
        assert_eq!(av.nrows(), cv.len(), "mul_col length");
        let mut out = av.to_owned();
        for (mut row, &k) in out.rows_mut().into_iter().zip(cv.iter()) {
            row.mapv_inplace(|v| v * k);
        }
        let (ia, ic) = (self.id, col.id);
        self.tape.push(
            out.into_dyn(),
            Box::new(move |g, sink| {
                let gv = as2(g);
                let cv = as1(&cvals);
                let mut da = gv.to_owned();
                for (mut row, &k) in da.rows_mut().into_iter().zip(cv.iter()) {
                    row.mapv_inplace(|v| v * k);
                }
                sink(ia, da.into_dyn());
                let av = as2(&a);
                let mut dc = Array1::<F>::zeros(av.nrows());
                for ((d, grow), arow) in
                    dc.iter_mut().zip(gv.rows()).zip(av.rows())
                {
                    *d = grow.iter().zip(arow.iter()).map(|(&x, &y)| x * y).sum();
                }
                sink(ic, dc.into_dyn());
            }),
        )
    }

    /// Multiply every element by a single-element variable.
    pub fn mul_scalar_var(self, s: Var<'t, F>) -> Var<'t, F> {
        let a = self.value();
        let sv = s.value();
        let k = *sv.iter().next().expect("scalar");
        let out = a.mapv(|x| x * k);
        let (ia, is) = (self.id, s.id);
        self.tape.push(
            out,
            Box::new(move |g, sink| {
                sink(ia, g.mapv(|x| x * k));
                let ds: F = g.iter().zip(a.iter()).map(|(&gv, &av)| gv * av).sum();
                sink(is, ArrayD::from_elem(ndarray::IxDyn(&[1]), ds));
            }),
        )
    }

    /// Divide every element by a single-element variable.
    pub fn div_scalar_var(self, s: Var<'t, F>) -> Var<'t, F> {
        let a = self.value();
        let sv = s.value();
        let k = *sv.iter().next().expect("scalar");
        let out = a.mapv(|x| x / k);
        let (ia, is) = (self.id, s.id);
        self.tape.push(
            out,
            Box::new(move |g, sink| {
                sink(ia, g.mapv(|x| x / k));
                let mut ds = F::zero();
                for (&gv, &av) in g.iter().zip(a.iter()) {
                    ds += -gv * av / (k * k);
                }
                sink(is, ArrayD::from_elem(ndarray::IxDyn(&[1]), ds));
            }),
        )
    }

    pub fn sum_all(self) -> Var<'t, F> {
        let a = self.value();
        let s: F = a.iter().copied().sum();
        let id = self.id;
        self.tape.push(
            ArrayD::from_elem(ndarray::IxDyn(&[1]), s),
            Box::new(move |g, sink| {
                let g0 = *g.iter().next().expect("scalar grad");
                sink(id, ArrayD::from_elem(a.raw_dim(), g0));
            }),
        )
    }

    pub fn mean_all(self) -> Var<'t, F> {
        let n = self.value().len();
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Column-wise mean of a 2-D variable: `[n, c] -> [c]`.
    pub fn mean_axis0(self) -> Var<'t, F> {
        let a = self.value();
        let av = as2(&a);
        let n = av.nrows();
        let out = av.mean_axis(Axis(0)).expect("nonempty").into_dyn();
        let id = self.id;
        let shape = (av.nrows(), av.ncols());
        self.tape.push(
            out,
            Box::new(move |g, sink| {
                let gr = as1(g);
                let scale = F::one() / F::c(n as f64);
                let mut da = Array2::<F>::zeros(shape);
                for mut row in da.rows_mut() {
                    for (d, &gv) in row.iter_mut().zip(gr.iter()) {
                        *d = gv * scale;
                    }
                }
                sink(id, da.into_dyn());
            }),
        )
    }

    /// Rows `r0..r1` of a 2-D variable.
    pub fn slice_rows(self, r0: usize, r1: usize) -> Var<'t, F> {
        let a = self.value();
        let av = as2(&a);
        let out = av.slice(ndarray::s![r0..r1, ..]).to_owned().into_dyn();
        let id = self.id;
        let shape = (av.nrows(), av.ncols());
        self.tape.push(
            out,
            Box::new(move |g, sink| {
                let mut da = Array2::<F>::zeros(shape);
                da.slice_mut(ndarray::s![r0..r1, ..]).assign(&as2(g));
                sink(id, da.into_dyn());
            }),
        )
    }

    /// Columns `c0..c1` of a 2-D variable.
    pub fn slice_cols(self, c0: usize, c1: usize) -> Var<'t, F> {
        let a = self.value();
        let av = as2(&a);
        let out = av.slice(ndarray::s![.., c0..c1]).to_owned().into_dyn();
        let id = self.id;
        let shape = (av.nrows(), av.ncols());
        self.tape.push(
            out,
            Box::new(move |g, sink| {
                let mut da = Array2::<F>::zeros(shape);
                da.slice_mut(ndarray::s![.., c0..c1]).assign(&as2(g));
                sink(id, da.into_dyn());
            }),
        )
    }

    /// Row `i` of a 2-D variable as a 1-D vector.
    pub fn row(self, i: usize) -> Var<'t, F> {
        let a = self.value();
        let av = as2(&a);
        let out = av.row(i).to_owned().into_dyn();
        let id = self.id;
        let shape = (av.nrows(), av.ncols());
        self.tape.push(
            out,
            Box::new(move |g, sink| {
                let mut da = Array2::<F>::zeros(shape);
                da.row_mut(i).assign(&as1(g));
                sink(id, da.into_dyn());
            }),
        )
    }

    /// Element `i` of a 1-D variable as a single-element vector.
    pub fn index(self, i: usize) -> Var<'t, F> {
        let a = self.value();
        let av = as1(&a);
        let out = Array1::from_elem(1, av[i]).into_dyn();
        let id = self.id;
        let n = av.len();
        self.tape.push(
            out,
            Box::new(move |g, sink| {
                let mut da = Array1::<F>::zeros(n);
                da[i] = *g.iter().next().expect("scalar grad");
                sink(id, da.into_dyn());
            }),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t, F> {
        let a = self.value();
        assert_eq!(a.len(), shape.iter().product::<usize>(), "reshape size");
        let old = a.raw_dim();
        let out = a
            .to_shape(ndarray::IxDyn(shape))
            .expect("reshape")
            .to_owned();
        let id = self.id;
        self.tape.push(
            out,
            Box::new(move |g, sink| {
                sink(id, g.to_shape(old.clone()).expect("reshape back").to_owned());
            }),
        )
    }

    /// Softmax over the last axis of a 1-D or 2-D variable.
    pub fn softmax(self) -> Var<'t, F> {
        let a = self.value();
        let rows: Vec<Vec<F>> = match a.ndim() {
            1 => vec![as1(&a).to_vec()],
            2 => as2(&a).rows().into_iter().map(|r| r.to_vec()).collect(),
            d => panic!("softmax expects 1-D or 2-D, got {d}-D"),
        };
        assert!(
            rows.iter().all(|r| !r.is_empty()),
            "softmax over empty axis"
        );
        let mut out = a.as_ref().clone();
        {
            let flat = out.as_slice_mut().expect("contiguous");
            let width = rows[0].len();
            for (ri, row) in rows.iter().enumerate() {
                let m = row.iter().copied().fold(F::neg_infinity(), F::max);
                let mut z = F::zero();
                for (j, &x) in row.iter().enumerate() {
                    let e = (x - m).exp();
                    flat[ri * width + j] = e;
                    z += e;
                }
                for j in 0..width {
                    flat[ri * width + j] /= z;
                }
            }
        }
        let y = out.clone();
        let id = self.id;
        self.tape.push(
            out,
            Box::new(move |g, sink| {
                // dx = (g - <g, y>_row) * y per row
                let mut dx = y.clone();
                match y.ndim() {
                    1 => {
                        let dot: F = g.iter().zip(y.iter()).map(|(&a, &b)| a * b).sum();
                        ndarray::Zip::from(&mut dx).and(g).for_each(|d, &gv| {
                            *d = (gv - dot) * *d;
                        });
                    }
                    _ => {
                        let gv = as2(g);
                        let yv = as2(&y);
                        let mut dv = dx.view_mut().into_dimensionality::<Ix2>().unwrap();
                        for ((mut drow, grow), yrow) in
                            dv.rows_mut().into_iter().zip(gv.rows()).zip(yv.rows())
                        {
                            let dot: F =
                                grow.iter().zip(yrow.iter()).map(|(&a, &b)| a * b).sum();
                            for ((d, &g1), &y1) in
                                drow.iter_mut().zip(grow.iter()).zip(yrow.iter())
                            {
                                *d = (g1 - dot) * y1;
                            }
                        }
                    }
                }
                sink(id, dx);
            }),
        )
    }

    /// Normalize the last axis of a 1-D or 2-D variable to zero mean and
    /// unit variance (no affine part; compose with `mul_row`/`add_row`).
    pub fn layer_norm(self, eps: f64) -> Var<'t, F> {
        let a = self.value();
        let eps = F::c(eps);
        let (rows, width) = match a.ndim() {
            1 => (1, a.len()),
            2 => {
                let v = as2(&a);
                (v.nrows(), v.ncols())
            }
            d => panic!("layer_norm expects 1-D or 2-D, got {d}-D"),
        };
        let mut xhat = a.as_ref().clone();
        let mut inv_std = Vec::with_capacity(rows);
        {
            let flat = xhat.as_slice_mut().expect("contiguous");
            for r in 0..rows {
                let seg = &mut flat[r * width..(r + 1) * width];
                let n = F::c(width as f64);
                let mean = seg.iter().copied().sum::<F>() / n;
                let var = seg
                    .iter()
                    .map(|&x| (x - mean) * (x - mean))
                    .sum::<F>()
                    / n;
                let is = F::one() / (var + eps).sqrt();
                for x in seg.iter_mut() {
                    *x = (*x - mean) * is;
                }
                inv_std.push(is);
            }
        }
        let xh = xhat.clone();
        let id = self.id;
        self.tape.push(
            xhat,
            Box::new(move |g, sink| {
                let mut dx = g.clone();
                let gflat = g.as_slice().expect("contiguous");
                let xflat = xh.as_slice().expect("contiguous");
                let dflat = dx.as_slice_mut().expect("contiguous");
                let n = F::c(width as f64);
                for r in 0..rows {
                    let gs = &gflat[r * width..(r + 1) * width];
                    let xs = &xflat[r * width..(r + 1) * width];
                    let gmean = gs.iter().copied().sum::<F>() / n;
                    let gxmean = gs
                        .iter()
                        .zip(xs.iter())
                        .map(|(&a, &b)| a * b)
                        .sum::<F>()
                        / n;
                    for j in 0..width {
                        dflat[r * width + j] =
                            inv_std[r] * (gs[j] - gmean - xs[j] * gxmean);
                    }
                }
                sink(id, dx);
            }),
        )
    }

    /// Dot product of two 1-D variables.
    pub fn dot(self, o: Var<'t, F>) -> Var<'t, F> {
        self.mul(o).sum_all()
    }

    /// L2-normalize a 1-D variable (with a small epsilon under the root).
    pub fn l2_normalize(self, eps: f64) -> Var<'t, F> {
        let norm = self.mul(self).sum_all().shift(eps).sqrt();
        self.div_scalar_var(norm)
    }

    /// Cosine similarity of two 1-D variables.
    pub fn cosine(self, o: Var<'t, F>, eps: f64) -> Var<'t, F> {
        let na = self.mul(self).sum_all().shift(eps).sqrt();
        let nb = o.mul(o).sum_all().shift(eps).sqrt();
        self.dot(o).div(na.mul(nb))
    }
}

/// Concatenate 2-D variables along rows.
pub fn concat_rows<'t, F: Real>(vars: &[Var<'t, F>]) -> Var<'t, F> {
    assert!(!vars.is_empty(), "concat of nothing");
    let tape = vars[0].tape();
    let values: Vec<_> = vars.iter().map(|v| v.value()).collect();
    let views: Vec<_> = values.iter().map(|v| as2(v)).collect();
    let out = ndarray::concatenate(Axis(0), &views).expect("concat rows");
    let ids: Vec<usize> = vars.iter().map(|v| v.id).collect();
    let row_counts: Vec<usize> = views.iter().map(|v| v.nrows()).collect();
    tape.push(
        out.into_dyn(),
        Box::new(move |g, sink| {
            let gv = as2(g);
            let mut r = 0;
            for (id, &n) in ids.iter().zip(row_counts.iter()) {
                sink(*id, gv.slice(ndarray::s![r..r + n, ..]).to_owned().into_dyn());
                r += n;
            }
        }),
    )
}

/// Stack 1-D variables of equal length into a 2-D matrix, one per row.
pub fn stack_rows<'t, F: Real>(vars: &[Var<'t, F>]) -> Var<'t, F> {
    assert!(!vars.is_empty(), "stack of nothing");
    let tape = vars[0].tape();
    let values: Vec<_> = vars.iter().map(|v| v.value()).collect();
    let width = values[0].len();
    let mut out = Array2::<F>::zeros((vars.len(), width));
    for (mut row, v) in out.rows_mut().into_iter().zip(values.iter()) {
        row.assign(&as1(v));
    }
    let ids: Vec<usize> = vars.iter().map(|v| v.id).collect();
    tape.push(
        out.into_dyn(),
        Box::new(move |g, sink| {
            let gv = as2(g);
            for (i, id) in ids.iter().enumerate() {
                sink(*id, gv.row(i).to_owned().into_dyn());
            }
        }),
    )
}

/// Concatenate 2-D variables along columns.
pub fn concat_cols<'t, F: Real>(vars: &[Var<'t, F>]) -> Var<'t, F> {
    assert!(!vars.is_empty(), "concat of nothing");
    let tape = vars[0].tape();
    let values: Vec<_> = vars.iter().map(|v| v.value()).collect();
    let views: Vec<_> = values.iter().map(|v| as2(v)).collect();
    let out = ndarray::concatenate(Axis(1), &views).expect("concat cols");
    let ids: Vec<usize> = vars.iter().map(|v| v.id).collect();
    let col_counts: Vec<usize> = views.iter().map(|v| v.ncols()).collect();
    tape.push(
        out.into_dyn(),
        Box::new(move |g, sink| {
            let gv = as2(g);
            let mut c = 0;
            for (id, &n) in ids.iter().zip(col_counts.iter()) {
                sink(*id, gv.slice(ndarray::s![.., c..c + n]).to_owned().into_dyn());
                c += n;
            }
        }),
    )
}
