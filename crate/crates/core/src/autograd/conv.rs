//! 2-D convolution over a single `[C, H, W]` image via im2col.

use ndarray::{Array2, Array3, ArrayView3, Ix1, Ix3, Ix4};

use super::real::Real;
use super::tape::Var;

fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

fn im2col<F: Real>(
    x: ArrayView3<'_, F>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array2<F> {
    let (c, h, w) = x.dim();
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(w, k, stride, pad);
    let mut col = Array2::<F>::zeros((c * k * k, ho * wo));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        col[[row, oy * wo + ox]] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    col
}

fn col2im<F: Real>(
    dcol: &Array2<F>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array3<F> {
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(w, k, stride, pad);
    let mut dx = Array3::<F>::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[[ci, iy as usize, ix as usize]] += dcol[[row, oy * wo + ox]];
                    }
                }
            }
        }
    }
    dx
}

/// Convolve `input` (`[Cin, H, W]`) with `weight` (`[Cout, Cin, k, k]`) plus
/// a per-channel `bias` (`[Cout]`). Square kernel, symmetric zero padding.
pub fn conv2d<'t, F: Real>(
    input: Var<'t, F>,
    weight: Var<'t, F>,
    bias: Var<'t, F>,
    stride: usize,
    pad: usize,
) -> Var<'t, F> {
    let xv = input.value();
    let wv = weight.value();
    let bv = bias.value();
    let x3 = xv.view().into_dimensionality::<Ix3>().expect("input 3-D");
    let w4 = wv.view().into_dimensionality::<Ix4>().expect("weight 4-D");
    let b1 = bv.view().into_dimensionality::<Ix1>().expect("bias 1-D");
    let (cin, h, w) = x3.dim();
    let (cout, wcin, k, k2) = w4.dim();
    assert_eq!(cin, wcin, "channel mismatch");
    assert_eq!(k, k2, "square kernels only");
    assert_eq!(b1.len(), cout, "bias length");
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(w, k, stride, pad);

    let col = std::rc::Rc::new(im2col(x3, k, stride, pad));
    let wmat = w4
        .to_shape((cout, cin * k * k))
        .expect("weight reshape")
        .to_owned();
    let mut out = wmat.dot(col.as_ref());
    for (mut row, &b) in out.rows_mut().into_iter().zip(b1.iter()) {
        row.mapv_inplace(|v| v + b);
    }
    let out = out
        .into_shape_with_order((cout, ho, wo))
        .expect("output reshape")
        .into_dyn();

    let (xi, wi, bi) = (input.id, weight.id, bias.id);
    input.tape().push(
        out,
        Box::new(move |g, sink| {
            let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
            let gmat = g3
                .to_shape((cout, ho * wo))
                .expect("grad reshape")
                .to_owned();
            // bias: sum over spatial positions
            let db = gmat.sum_axis(ndarray::Axis(1));
            sink(bi, db.into_dyn());
            // weight: g · colᵀ
            let dw = gmat.dot(&col.t());
            sink(
                wi,
                dw.into_shape_with_order((cout, cin, k, k))
                    .expect("dw reshape")
                    .into_dyn(),
            );
            // input: wᵀ · g, scattered back
            let w4 = wv.view().into_dimensionality::<Ix4>().unwrap();
            let wmat = w4
                .to_shape((cout, cin * k * k))
                .expect("weight reshape")
                .to_owned();
            let dcol = wmat.t().dot(&gmat);
            sink(xi, col2im(&dcol, cin, h, w, k, stride, pad).into_dyn());
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::super::tape::Tape;
    use super::*;
    use ndarray::{Array1, Array4};

    #[test]
    fn identity_kernel_passthrough() {
        // 1x1 kernel with weight 1 and zero bias reproduces the input.
        let tape: Tape<f64> = Tape::new();
        let x = Array3::from_shape_fn((1, 3, 4), |(_, y, xx)| (y * 4 + xx) as f64);
        let xv = tape.leaf(x.clone().into_dyn());
        let wv = tape.leaf(Array4::from_elem((1, 1, 1, 1), 1.0).into_dyn());
        let bv = tape.leaf(Array1::zeros(1).into_dyn());
        let y = conv2d(xv, wv, bv, 1, 0);
        assert_eq!(y.shape(), vec![1, 3, 4]);
        for (a, b) in y.value().iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stride_two_halves_spatial_dims() {
        let tape: Tape<f64> = Tape::new();
        let xv = tape.leaf(Array3::<f64>::zeros((3, 8, 6)).into_dyn());
        let wv = tape.leaf(Array4::<f64>::zeros((5, 3, 3, 3)).into_dyn());
        let bv = tape.leaf(Array1::<f64>::zeros(5).into_dyn());
        let y = conv2d(xv, wv, bv, 2, 1);
        assert_eq!(y.shape(), vec![5, 4, 3]);
    }

    #[test]
    fn matches_direct_convolution() {
        let tape: Tape<f64> = Tape::new();
        let mut rng = 1u64;
        let mut next = move || {
            // xorshift for a tiny deterministic stream
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng % 1000) as f64 / 500.0 - 1.0
        };
        let x = Array3::from_shape_fn((2, 5, 5), |_| next());
        let w = Array4::from_shape_fn((3, 2, 3, 3), |_| next());
        let b = Array1::from_shape_fn(3, |_| next());
        let xv = tape.leaf(x.clone().into_dyn());
        let wv = tape.leaf(w.clone().into_dyn());
        let bv = tape.leaf(b.clone().into_dyn());
        let y = conv2d(xv, wv, bv, 2, 1);
        let yv = y.value();

        let fetch = |c: usize, yy: isize, xx: isize| -> f64 {
            if yy < 0 || xx < 0 || yy >= 5 || xx >= 5 {
                0.0
            } else {
                x[[c, yy as usize, xx as usize]]
            }
        };
        for co in 0..3 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut acc = b[co];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                acc += w[[co, ci, ky, kx]]
                                    * fetch(
                                        ci,
                                        (oy * 2 + ky) as isize - 1,
                                        (ox * 2 + kx) as isize - 1,
                                    );
                            }
                        }
                    }
                    assert!((yv[[co, oy, ox]] - acc).abs() < 1e-10);
                }
            }
        }
    }
}
