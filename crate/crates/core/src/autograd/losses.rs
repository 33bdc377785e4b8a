//! Focal classification loss and differentiable box losses.

use ndarray::{ArrayD, Array1, Axis};

use crate::error::{Error, Result};

use super::real::Real;
use super::tape::Var;

const SCORE_EPS: f64 = 1e-7;

/// Softmax along `axis` of an arbitrary array. Pure convenience version of
/// the on-tape op, used where no gradients are needed.
pub fn softmax_normalize(x: &ArrayD<f64>, axis: usize) -> Result<ArrayD<f64>> {
    if axis >= x.ndim() {
        return Err(Error::Shape(format!(
            "softmax axis {axis} out of range for {}-d array",
            x.ndim()
        )));
    }
    if x.shape()[axis] == 0 {
        return Err(Error::Shape("softmax over empty axis".into()));
    }
    let mut out = x.clone();
    for mut lane in out.lanes_mut(Axis(axis)) {
        let m = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        lane.mapv_inplace(|v| (v - m).exp());
        let s: f64 = lane.iter().sum();
        lane.mapv_inplace(|v| v / s);
    }
    Ok(out)
}

/// Focal loss for a binary label. `alpha` inside `(0, 1)` enables class
/// balancing (`alpha` on positives, `1 - alpha` on negatives); any other
/// value disables it. The score is clamped away from {0, 1}.
pub fn focal_loss(score: f64, label: bool, gamma: f64, alpha: f64) -> f64 {
    let s = score.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
    let p_t = if label { s } else { 1.0 - s };
    let a_t = if alpha > 0.0 && alpha < 1.0 {
        if label {
            alpha
        } else {
            1.0 - alpha
        }
    } else {
        1.0
    };
    -a_t * (1.0 - p_t).powf(gamma) * p_t.ln()
}

/// On-tape focal loss over a score vector `[N]` against 0/1 labels.
/// Returns per-candidate losses `[N]`.
pub fn focal_loss_vec<'t, F: Real>(
    scores: Var<'t, F>,
    labels: &[f64],
    gamma: f64,
    alpha: f64,
) -> Var<'t, F> {
    let n = scores.value().len();
    assert_eq!(n, labels.len(), "labels length");
    let tape = scores.tape();
    let y = tape.leaf1(Array1::from_iter(labels.iter().map(|&l| F::c(l))));
    let a_t = Array1::from_iter(labels.iter().map(|&l| {
        if alpha > 0.0 && alpha < 1.0 {
            F::c(if l > 0.5 { alpha } else { 1.0 - alpha })
        } else {
            F::one()
        }
    }));
    let a_t = tape.leaf1(a_t);
    let ones = tape.leaf1(Array1::<F>::ones(n));

    let s = scores.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
    // p_t = y*s + (1-y)*(1-s)
    let p_t = y.mul(s).add(ones.sub(y).mul(ones.sub(s)));
    let focus = ones.sub(p_t).powf(gamma);
    a_t.mul(focus).mul(p_t.ln().neg())
}

/// `1 - GIoU(pred, gt)` as a scalar on the tape. Boxes are `(cx, cy, w, h)`.
pub fn giou_loss_var<'t, F: Real>(pred: Var<'t, F>, gt: [f64; 4]) -> Var<'t, F> {
    let tape = pred.tape();
    let g = |v: f64| tape.scalar(F::c(v));
    let (gcx, gcy, gw, gh) = (gt[0], gt[1], gt[2], gt[3]);
    let (gx0, gy0, gx1, gy1) = (
        g(gcx - gw / 2.0),
        g(gcy - gh / 2.0),
        g(gcx + gw / 2.0),
        g(gcy + gh / 2.0),
    );
    let garea = g(gw * gh);

    let cx = pred.index(0);
    let cy = pred.index(1);
    let w = pred.index(2);
    let h = pred.index(3);
    let px0 = cx.sub(w.scale(0.5));
    let py0 = cy.sub(h.scale(0.5));
    let px1 = cx.add(w.scale(0.5));
    let py1 = cy.add(h.scale(0.5));
    let parea = w.mul(h);

    let iw = px1.minimum(gx1).sub(px0.maximum(gx0)).relu();
    let ih = py1.minimum(gy1).sub(py0.maximum(gy0)).relu();
    let inter = iw.mul(ih);
    let union = parea.add(garea).sub(inter);
    let iou = inter.div(union);

    let ew = px1.maximum(gx1).sub(px0.minimum(gx0));
    let eh = py1.maximum(gy1).sub(py0.minimum(gy0));
    let enclose = ew.mul(eh);
    let giou = iou.sub(enclose.sub(union).div(enclose));
    giou.neg().shift(1.0)
}

/// L1 distance between a predicted box `[4]` and a ground-truth box.
pub fn l1_loss_var<'t, F: Real>(pred: Var<'t, F>, gt: [f64; 4]) -> Var<'t, F> {
    let tape = pred.tape();
    let gtv = tape.leaf1(Array1::from_iter(gt.iter().map(|&v| F::c(v))));
    pred.sub(gtv).abs().sum_all()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::geometry::{box_overlap_metrics, BBox};

    #[test]
    fn softmax_normalize_basic() {
        let x = ArrayD::from_shape_vec(ndarray::IxDyn(&[2]), vec![0.0, 0.0]).unwrap();
        let y = softmax_normalize(&x, 0).unwrap();
        assert!((y[[0]] - 0.5).abs() < 1e-12);
        assert!((y[[1]] - 0.5).abs() < 1e-12);
        assert!(softmax_normalize(&x, 1).is_err());
    }

    #[test]
    fn focal_reduces_to_bce_at_gamma_zero() {
        // gamma = 0, balancing disabled -> -ln(p_t)
        for &(s, l) in &[(0.3, true), (0.9, false), (0.5, true)] {
            let p_t: f64 = if l { s } else { 1.0 - s };
            let bce = -p_t.ln();
            assert!((focal_loss(s, l, 0.0, 1.0) - bce).abs() < 1e-9);
        }
    }

    #[test]
    fn focal_vanishes_for_confident_positive() {
        assert!(focal_loss(1.0 - 1e-9, true, 2.0, 0.25) < 1e-6);
    }

    #[test]
    fn focal_hand_value() {
        // label 1, s 0.5, gamma 2, alpha 0.25: 0.25 * 0.25 * ln 2
        let want = 0.25 * 0.25 * std::f64::consts::LN_2;
        assert!((focal_loss(0.5, true, 2.0, 0.25) - want).abs() < 1e-9);
        assert!((want - 0.04332).abs() < 1e-5);
    }

    #[test]
    fn focal_monotone_decreasing_in_score_for_positive() {
        let mut prev = f64::INFINITY;
        for i in 1..20 {
            let s = i as f64 / 20.0;
            let l = focal_loss(s, true, 2.0, 0.25);
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn focal_vec_matches_scalar() {
        let tape: Tape<f64> = Tape::new();
        let scores = tape.leaf1(ndarray::arr1(&[0.2, 0.7, 0.95]));
        let labels = [1.0, 0.0, 1.0];
        let out = focal_loss_vec(scores, &labels, 2.0, 0.25).value();
        for (i, &l) in labels.iter().enumerate() {
            let want = focal_loss([0.2, 0.7, 0.95][i], l > 0.5, 2.0, 0.25);
            assert!((out[[i]] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn giou_var_matches_geometry() {
        let cases = [
            ([0.3, 0.4, 0.2, 0.3], [0.3, 0.4, 0.2, 0.3]),
            ([0.2, 0.5, 0.3, 0.4], [0.6, 0.5, 0.2, 0.2]),
            ([0.1, 0.1, 0.15, 0.12], [0.9, 0.9, 0.1, 0.1]),
        ];
        for (p, g) in cases {
            let tape: Tape<f64> = Tape::new();
            let pv = tape.leaf1(ndarray::arr1(&p));
            let loss = giou_loss_var(pv, g).item();
            let pb = BBox::new(p[0], p[1], p[2], p[3]).unwrap();
            let gb = BBox::new(g[0], g[1], g[2], g[3]).unwrap();
            let (_, giou) = box_overlap_metrics(&pb, &gb);
            assert!((loss - (1.0 - giou)).abs() < 1e-12);
        }
    }

    #[test]
    fn l1_var_is_component_sum() {
        let tape: Tape<f64> = Tape::new();
        let pv = tape.leaf1(ndarray::arr1(&[0.2, 0.5, 0.3, 0.4]));
        let loss = l1_loss_var(pv, [0.25, 0.4, 0.35, 0.4]).item();
        assert!((loss - (0.05 + 0.1 + 0.05)).abs() < 1e-12);
    }
}
