#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcm_core::{Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(-scale..scale)).collect()).unwrap()
}

/// Relative error with an absolute floor so near-zero entries do not blow up.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Worst relative error between analytic gradients of `f` (reduced to a
/// scalar by a fixed random projection) and central differences.
pub fn grad_check(inputs: &[Tensor], seed: u64, h: f64, f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let project = |tape: &mut Tape, out: Var| -> Var {
        let shape = tape.shape(out).to_vec();
        let w = random_tensor(&mut rng(seed), &shape, 1.0);
        let w = tape.constant(w);
        let p = tape.mul(out, w).unwrap();
        tape.sum(p)
    };
    let eval = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars);
        let s = project(&mut tape, out);
        tape.value(s).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars);
    let s = project(&mut tape, out);
    tape.backward(s).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*v)
            .map(|g| g.data().to_vec())
            .unwrap_or(vec![0.0; inputs[i].numel()]);
        for (j, &a) in analytic.iter().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    worst
}

use tcm_core::data::Label;
use tcm_core::model::{Classifier, Dropout};
use tcm_core::train::weighted_cross_entropy;

fn model_loss(model: &Classifier, x: &Tensor, label: Label, w: [f64; 2]) -> f64 {
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, x, false, &mut Dropout::off()).unwrap();
    let l = weighted_cross_entropy(&mut tape, pass.logits, &[label], w).unwrap();
    tape.value(l).data()[0]
}

/// Worst relative error over every parameter of `model` between the
/// backward pass and central differences of the weighted loss.
pub fn model_grad_check(model: &Classifier, x: &Tensor, label: Label, w: [f64; 2], h: f64) -> (f64, usize) {
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, x, true, &mut Dropout::off()).unwrap();
    let l = weighted_cross_entropy(&mut tape, pass.logits, &[label], w).unwrap();
    tape.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (ti, &pv) in pass.params.iter().enumerate() {
        let analytic = tape.grad(pv).unwrap().data().to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let mut plus = model.clone();
            plus.params_mut().tensors_mut().nth(ti).unwrap().data_mut()[j] += h;
            let mut minus = model.clone();
            minus.params_mut().tensors_mut().nth(ti).unwrap().data_mut()[j] -= h;
            let numeric = (model_loss(&plus, x, label, w) - model_loss(&minus, x, label, w)) / (2.0 * h);
            worst = worst.max(rel_err(a, numeric));
            checked += 1;
        }
    }
    (worst, checked)
}
