//! Central-difference gradient checking for anything built on the tape.
//!
//! Always runs at 64-bit: the caller provides `f64` inputs and a builder
//! that reconstructs the scalar output from leaves, so the same forward
//! code is evaluated analytically and numerically.

use ndarray::ArrayD;

use super::tape::{Tape, Var};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub pass: bool,
    /// Number of elements perturbed.
    pub evaluated: usize,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

/// Check the builder's analytic gradients against central differences for
/// every element of every input. The builder must return a single-element
/// output and be deterministic.
pub fn finite_difference_gradcheck<B>(
    builder: B,
    inputs: &[ArrayD<f64>],
    epsilon: f64,
    tol: f64,
) -> GradCheckReport
where
    B: for<'a> Fn(&'a Tape<f64>, &'a [Var<'a, f64>]) -> Var<'a, f64>,
{
    finite_difference_gradcheck_sampled(builder, inputs, epsilon, tol, usize::MAX)
}

/// Like [`finite_difference_gradcheck`] but perturbing at most
/// `max_per_input` evenly spaced elements of each input, for expensive
/// forwards such as fully unrolled sequences.
pub fn finite_difference_gradcheck_sampled<B>(
    builder: B,
    inputs: &[ArrayD<f64>],
    epsilon: f64,
    tol: f64,
    max_per_input: usize,
) -> GradCheckReport
where
    B: for<'a> Fn(&'a Tape<f64>, &'a [Var<'a, f64>]) -> Var<'a, f64>,
{
    let eval = |arrays: &[ArrayD<f64>]| -> (f64, Option<Vec<Option<ArrayD<f64>>>>) {
        let tape = Tape::new();
        let vars: Vec<Var<'_, f64>> = arrays.iter().map(|a| tape.leaf(a.clone())).collect();
        let out = builder(&tape, &vars);
        assert_eq!(out.value().len(), 1, "gradcheck needs a scalar output");
        let y = out.item();
        let mut grads = tape.backward(out);
        let collected = vars.iter().map(|v| grads.take(*v)).collect();
        (y, Some(collected))
    };

    let (_, analytic) = eval(inputs);
    let analytic = analytic.expect("analytic grads");

    let mut max_err = 0.0f64;
    let mut evaluated = 0usize;
    let mut work: Vec<ArrayD<f64>> = inputs.to_vec();

    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let step = (n / max_per_input.max(1)).max(1);
        for j in (0..n).step_by(step) {
            let orig = work[i].as_slice().expect("contiguous")[j];

            work[i].as_slice_mut().expect("contiguous")[j] = orig + epsilon;
            let (y_plus, _) = eval(&work);
            work[i].as_slice_mut().expect("contiguous")[j] = orig - epsilon;
            let (y_minus, _) = eval(&work);
            work[i].as_slice_mut().expect("contiguous")[j] = orig;

            let numeric = (y_plus - y_minus) / (2.0 * epsilon);
            let analytic_j = analytic[i]
                .as_ref()
                .map(|g| g.as_slice().expect("contiguous")[j])
                .unwrap_or(0.0);

            if !numeric.is_finite() || !analytic_j.is_finite() {
                // Non-differentiable point or numeric blow-up: report it
                // rather than crash.
                return GradCheckReport {
                    max_rel_err: f64::INFINITY,
                    pass: false,
                    evaluated: evaluated + 1,
                };
            }
            max_err = max_err.max(rel_err(analytic_j, numeric));
            evaluated += 1;
        }
    }

    GradCheckReport {
        max_rel_err: max_err,
        pass: max_err < tol,
        evaluated,
    }
}
