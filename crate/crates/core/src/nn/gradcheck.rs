//! Central finite differences against tape gradients. Verification-only:
//! nothing in the training path depends on this module.

use ndarray::IxDyn;

use super::tape::{Arr, Tape, Var};

/// Build the graph once, backprop, and return (value, input gradients).
pub fn autodiff_grads<F>(inputs: &[Arr], build: F) -> (f32, Vec<Arr>)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
    let root = build(&mut tape, &vars);
    let value = tape.scalar_value(root);
    tape.backward(root).expect("scalar root");
    let grads = vars
        .iter()
        .map(|&v| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Arr::zeros(tape.value(v).raw_dim()))
        })
        .collect();
    (value, grads)
}

/// Central-difference gradient of the same scalar function, element by
/// element, re-running the forward pass for each probe.
pub fn numeric_grads<F>(inputs: &[Arr], build: F, h: f32) -> Vec<Arr>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |probe: &[Arr]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = probe.iter().map(|a| tape.leaf(a.clone())).collect();
        let root = build(&mut tape, &vars);
        tape.scalar_value(root) as f64
    };

    let mut out = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let mut grad = Arr::zeros(input.raw_dim());
        let n = input.len();
        for flat in 0..n {
            let idx = flat_to_index(input.shape(), flat);
            let mut plus = inputs.to_vec();
            plus[i][IxDyn(&idx)] += h;
            let mut minus = inputs.to_vec();
            minus[i][IxDyn(&idx)] -= h;
            grad[IxDyn(&idx)] = ((eval(&plus) - eval(&minus)) / (2.0 * h as f64)) as f32;
        }
        out.push(grad);
    }
    out
}

fn flat_to_index(shape: &[usize], mut flat: usize) -> Vec<usize> {
    let mut idx = vec![0usize; shape.len()];
    for d in (0..shape.len()).rev() {
        idx[d] = flat % shape[d];
        flat /= shape[d];
    }
    idx
}

/// Largest relative error between tape and numeric gradients.
///
/// Relative to `max(|fd|, |ad|, floor)` so near-zero entries do not dominate;
/// callers that need a pure relative bound should choose probe points with
/// gradients bounded away from zero and pass a small floor.
pub fn max_relative_error<F>(inputs: &[Arr], build: F, h: f32, floor: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var + Copy,
{
    let (_, ad) = autodiff_grads(inputs, build);
    let fd = numeric_grads(inputs, build, h);
    let mut worst = 0f64;
    for (a, f) in ad.iter().zip(&fd) {
        for (&av, &fv) in a.iter().zip(f.iter()) {
            let denom = (av.abs() as f64).max(fv.abs() as f64).max(floor);
            let err = ((av - fv).abs() as f64) / denom;
            worst = worst.max(err);
        }
    }
    worst
}
