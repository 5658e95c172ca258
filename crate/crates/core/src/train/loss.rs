use crate::data::Label;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// `(1/B) Σ_i w[y_i] · (−log softmax(logits_i)[y_i])` over a `B×2` logit matrix.
pub fn weighted_cross_entropy(tape: &mut Tape, logits: Var, labels: &[Label], weights: [f64; 2]) -> Result<Var> {
    let (b, c) = match tape.shape(logits) {
        &[b, c] => (b, c),
        s => {
            return Err(Error::Rank {
                op: "weighted_cross_entropy",
                expected: "rank 2 (batch × classes)",
                shape: s.to_vec(),
            })
        }
    };
    if c != 2 || b != labels.len() || b == 0 {
        return Err(Error::Dimension {
            op: "weighted_cross_entropy",
            lhs: vec![b, c],
            rhs: vec![labels.len(), 2],
        });
    }
    let logp = tape.log_softmax_rows(logits)?;
    let mut total: Option<Var> = None;
    for (i, label) in labels.iter().enumerate() {
        let y = label.index();
        let term = tape.index(logp, i * 2 + y)?;
        let term = tape.scale(term, -weights[y] / b as f64);
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    Ok(total.expect("b > 0"))
}

/// Plain-float `w[y] · (−log softmax(logits)[y])` for one sample.
pub fn sample_loss(logits: [f64; 2], label: Label, weights: [f64; 2]) -> f64 {
    let y = label.index();
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    weights[y] * (lse - logits[y])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn loss_of(logits: &[f64], labels: &[Label], w: [f64; 2]) -> f64 {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new([labels.len(), 2], logits.to_vec()).unwrap());
        let l = weighted_cross_entropy(&mut tape, x, labels, w).unwrap();
        tape.value(l).data()[0]
    }

    #[test]
    fn equal_logits_give_ln2_and_scale_linearly() {
        let l = loss_of(&[0.3, 0.3], &[Label::Spoof], [1.0, 1.0]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let labels = [Label::Bonafide, Label::Spoof];
        let x = [0.1, -2.0, 1.5, 0.4];
        assert_eq!(loss_of(&x, &labels, [2.0, 2.0]), 2.0 * loss_of(&x, &labels, [1.0, 1.0]));
    }

    #[test]
    fn gradient_is_weighted_softmax_minus_onehot() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new([1, 2], vec![0.5, -0.25]).unwrap());
        let l = weighted_cross_entropy(&mut tape, x, &[Label::Bonafide], [3.0, 1.0]).unwrap();
        tape.backward(l).unwrap();
        let g = tape.grad(x).unwrap().data();
        let p0 = 1.0 / (1.0 + (-0.75f64).exp());
        assert!((g[0] - 3.0 * (p0 - 1.0)).abs() < 1e-14);
        assert!((g[1] - 3.0 * (1.0 - p0)).abs() < 1e-14);
    }

    #[test]
    fn mismatched_labels_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros([2, 2]));
        assert!(weighted_cross_entropy(&mut tape, x, &[Label::Spoof], [1.0, 1.0]).is_err());
    }
}
