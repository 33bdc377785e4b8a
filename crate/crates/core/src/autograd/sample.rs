//! Sub-pixel bilinear sampling of feature maps, differentiable in both the
//! map and the sampling position.
//!
//! Normalized coordinates map to the continuous grid with pixel centers at
//! `((i + 0.5) / W, (j + 0.5) / H)`. Neighbors outside the map contribute
//! zero, so positions are never clamped and wandering sample offsets read
//! zeros instead of border values.

use ndarray::{Array1, Array2, ArrayView3, Ix2, Ix3};

use super::real::Real;
use super::tape::Var;

/// The four bilinear taps for a grid-space position, with weights.
/// Out-of-bounds taps are omitted.
fn taps(gx: f64, gy: f64, w: usize, h: usize) -> [(Option<(usize, usize)>, f64); 4] {
    let x0 = gx.floor();
    let y0 = gy.floor();
    let fx = gx - x0;
    let fy = gy - y0;
    let mut out = [(None, 0.0); 4];
    let coords = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1.0, y0, fx * (1.0 - fy)),
        (x0, y0 + 1.0, (1.0 - fx) * fy),
        (x0 + 1.0, y0 + 1.0, fx * fy),
    ];
    for (slot, (x, y, wt)) in out.iter_mut().zip(coords) {
        if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
            *slot = (Some((y as usize, x as usize)), wt);
        }
    }
    out
}

/// Bilinear sample of a `[H, W, C]` feature array at a normalized position.
pub fn bilinear_sample<F: Real>(values: ArrayView3<'_, F>, px: f64, py: f64) -> Array1<F> {
    let (h, w, c) = values.dim();
    let gx = px * w as f64 - 0.5;
    let gy = py * h as f64 - 0.5;
    let mut out = Array1::<F>::zeros(c);
    for (tap, wt) in taps(gx, gy, w, h) {
        if let Some((y, x)) = tap {
            let wt = F::c(wt);
            for (o, &v) in out.iter_mut().zip(values.slice(ndarray::s![y, x, ..])) {
                *o += wt * v;
            }
        }
    }
    out
}

/// Differentiable batched sampling: `fmap` is `[H, W, C]`, `positions` is
/// `[M, 2]` of normalized `(x, y)` pairs; the result is `[M, C]`.
pub fn bilinear_sample_many<'t, F: Real>(
    fmap: Var<'t, F>,
    positions: Var<'t, F>,
) -> Var<'t, F> {
    let fv = fmap.value();
    let pv = positions.value();
    let f3 = fv.view().into_dimensionality::<Ix3>().expect("fmap 3-D");
    let p2 = pv
        .view()
        .into_dimensionality::<Ix2>()
        .expect("positions 2-D");
    assert_eq!(p2.ncols(), 2, "positions must be (x, y) pairs");
    let (h, w, c) = f3.dim();
    assert!(h > 0 && w > 0, "empty feature map");
    let m = p2.nrows();

    let mut out = Array2::<F>::zeros((m, c));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let gx = p2[[i, 0]].f64() * w as f64 - 0.5;
        let gy = p2[[i, 1]].f64() * h as f64 - 0.5;
        for (tap, wt) in taps(gx, gy, w, h) {
            if let Some((y, x)) = tap {
                let wt = F::c(wt);
                for (o, &v) in row.iter_mut().zip(f3.slice(ndarray::s![y, x, ..])) {
                    *o += wt * v;
                }
            }
        }
    }

    let (fid, pid) = (fmap.id, positions.id);
    let tape = fmap.tape();
    tape.push(
        out.into_dyn(),
        Box::new(move |g, sink| {
            let gv = g.view().into_dimensionality::<Ix2>().expect("grad 2-D");
            let f3 = fv.view().into_dimensionality::<Ix3>().unwrap();
            let p2 = pv.view().into_dimensionality::<Ix2>().unwrap();
            let mut dfmap = ndarray::Array3::<F>::zeros((h, w, c));
            let mut dpos = Array2::<F>::zeros((m, 2));
            for i in 0..m {
                let gx = p2[[i, 0]].f64() * w as f64 - 0.5;
                let gy = p2[[i, 1]].f64() * h as f64 - 0.5;
                let x0 = gx.floor();
                let y0 = gy.floor();
                let fx = gx - x0;
                let fy = gy - y0;
                let grow = gv.row(i);

                // Gradient into the map: scatter tap weights.
                for (tap, wt) in taps(gx, gy, w, h) {
                    if let Some((y, x)) = tap {
                        let wt = F::c(wt);
                        for (d, &gg) in dfmap
                            .slice_mut(ndarray::s![y, x, ..])
                            .iter_mut()
                            .zip(grow.iter())
                        {
                            *d += wt * gg;
                        }
                    }
                }

                // Gradient into the position via the tap values (zero when
                // the tap is out of bounds).
                let fetch = |xi: f64, yi: f64, ch: usize| -> F {
                    if xi >= 0.0 && yi >= 0.0 && (xi as usize) < w && (yi as usize) < h {
                        f3[[yi as usize, xi as usize, ch]]
                    } else {
                        F::zero()
                    }
                };
                let mut dgx = F::zero();
                let mut dgy = F::zero();
                for ch in 0..c {
                    let f00 = fetch(x0, y0, ch);
                    let f10 = fetch(x0 + 1.0, y0, ch);
                    let f01 = fetch(x0, y0 + 1.0, ch);
                    let f11 = fetch(x0 + 1.0, y0 + 1.0, ch);
                    let gch = grow[ch];
                    dgx += gch
                        * ((f10 - f00) * F::c(1.0 - fy) + (f11 - f01) * F::c(fy));
                    dgy += gch
                        * ((f01 - f00) * F::c(1.0 - fx) + (f11 - f10) * F::c(fx));
                }
                dpos[[i, 0]] = dgx * F::c(w as f64);
                dpos[[i, 1]] = dgy * F::c(h as f64);
            }
            sink(fid, dfmap.into_dyn());
            sink(pid, dpos.into_dyn());
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::super::tape::Tape;
    use super::*;
    use ndarray::Array3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn grid(h: usize, w: usize, c: usize) -> Array3<f64> {
        let mut a = Array3::zeros((h, w, c));
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    a[[y, x, ch]] = (y * 100 + x * 10 + ch) as f64;
                }
            }
        }
        a
    }

    #[test]
    fn sample_on_pixel_center_is_identity() {
        let f = grid(4, 6, 3);
        // Center of pixel (x=2, y=1).
        let px = (2.0 + 0.5) / 6.0;
        let py = (1.0 + 0.5) / 4.0;
        let s = bilinear_sample(f.view(), px, py);
        for ch in 0..3 {
            assert!((s[ch] - f[[1, 2, ch]]).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_midpoint_is_average() {
        let f = grid(4, 6, 2);
        // Midpoint between pixels (1,2) and (2,2) horizontally.
        let px = (1.5 + 0.5) / 6.0;
        let py = (2.0 + 0.5) / 4.0;
        let s = bilinear_sample(f.view(), px, py);
        for ch in 0..2 {
            let want = 0.5 * (f[[2, 1, ch]] + f[[2, 2, ch]]);
            assert!((s[ch] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_bounds_reads_zero() {
        let f = grid(4, 6, 2);
        let s = bilinear_sample(f.view(), -0.5, 0.5);
        assert!(s.iter().all(|&v| v == 0.0));
    }

    /// Independent 4-neighbor weighted-sum oracle on random positions.
    #[test]
    fn random_positions_match_four_neighbor_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        let (h, w, c) = (5, 7, 3);
        let f = Array3::from_shape_fn((h, w, c), |_| rng.gen_range(-2.0..2.0));
        for _ in 0..1000 {
            let px: f64 = rng.gen_range(-0.2..1.2);
            let py: f64 = rng.gen_range(-0.2..1.2);
            let got = bilinear_sample(f.view(), px, py);

            let gx = px * w as f64 - 0.5;
            let gy = py * h as f64 - 0.5;
            let (x0, y0) = (gx.floor() as i64, gy.floor() as i64);
            let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
            let at = |x: i64, y: i64, ch: usize| -> f64 {
                if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                    f[[y as usize, x as usize, ch]]
                } else {
                    0.0
                }
            };
            for ch in 0..c {
                let want = at(x0, y0, ch) * (1.0 - fx) * (1.0 - fy)
                    + at(x0 + 1, y0, ch) * fx * (1.0 - fy)
                    + at(x0, y0 + 1, ch) * (1.0 - fx) * fy
                    + at(x0 + 1, y0 + 1, ch) * fx * fy;
                assert!((got[ch] - want).abs() < 1e-12);
            }
        }
    }

    /// sample(aF1 + bF2, p) = a*sample(F1, p) + b*sample(F2, p)
    #[test]
    fn sampling_is_linear_in_the_map() {
        let mut rng = StdRng::seed_from_u64(11);
        let (h, w, c) = (4, 4, 2);
        let f1 = Array3::from_shape_fn((h, w, c), |_| rng.gen_range(-1.0..1.0));
        let f2 = Array3::from_shape_fn((h, w, c), |_| rng.gen_range(-1.0..1.0));
        for _ in 0..100 {
            let px: f64 = rng.gen_range(0.0..1.0);
            let py: f64 = rng.gen_range(0.0..1.0);
            let (a, b) = (0.7f64, -1.3f64);
            let mixed = &f1 * a + &f2 * b;
            let lhs = bilinear_sample(mixed.view(), px, py);
            let s1 = bilinear_sample(f1.view(), px, py);
            let s2 = bilinear_sample(f2.view(), px, py);
            for ch in 0..c {
                assert!((lhs[ch] - (a * s1[ch] + b * s2[ch])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn var_op_matches_pure_fn_and_has_position_grads() {
        let mut rng = StdRng::seed_from_u64(3);
        let (h, w, c) = (5, 6, 3);
        let f = Array3::from_shape_fn((h, w, c), |_| rng.gen_range(-1.0..1.0));
        let tape: Tape<f64> = Tape::new();
        let fv = tape.leaf(f.clone().into_dyn());
        let pos = ndarray::arr2(&[[0.31, 0.62], [0.87, 0.13]]);
        let pv = tape.leaf(pos.clone().into_dyn());
        let out = bilinear_sample_many(fv, pv);
        for i in 0..2 {
            let pure = bilinear_sample(f.view(), pos[[i, 0]], pos[[i, 1]]);
            let ov = out.value();
            for ch in 0..c {
                assert!((ov[[i, ch]] - pure[ch]).abs() < 1e-12);
            }
        }
        let loss = out.sum_all();
        let grads = tape.backward(loss);
        assert!(grads.get(pv).is_some());
        assert!(grads.get(fv).is_some());
    }
}
