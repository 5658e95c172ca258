use rand::Rng;

use super::params::{FeedForwardParams, Linear, Norm};
use crate::error::Result;
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};

pub fn linear(tape: &mut Tape, x: Var, p: &Linear<Var>) -> Result<Var> {
    tape.linear(x, p.weight, p.bias)
}

pub fn norm(tape: &mut Tape, x: Var, p: &Norm<Var>, eps: f64) -> Result<Var> {
    tape.layer_norm(x, p.gamma, p.beta, eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Swish,
}

/// `LN → D→hD → activation → hD→D`. The residual is added by the caller.
pub fn feed_forward(tape: &mut Tape, x: Var, p: &FeedForwardParams<Var>, act: Activation, eps: f64) -> Result<Var> {
    let h = norm(tape, x, &p.norm, eps)?;
    let h = linear(tape, h, &p.up)?;
    let h = match act {
        Activation::Gelu => tape.gelu(h),
        Activation::Swish => tape.silu(h),
    };
    linear(tape, h, &p.down)
}

/// Inverted dropout whose masks are a pure function of `(key, call index)`.
///
/// A rate of zero is the identity and records nothing on the tape.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    key: u64,
    calls: u64,
}

impl Dropout {
    pub fn off() -> Self {
        Dropout {
            rate: 0.0,
            key: 0,
            calls: 0,
        }
    }

    pub fn new(rate: f64, key: u64) -> Self {
        Dropout { rate, key, calls: 0 }
    }

    pub fn is_active(&self) -> bool {
        self.rate > 0.0
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if !self.is_active() {
            return Ok(x);
        }
        self.calls += 1;
        let mut r = rng::keyed(&[self.key, self.calls]);
        let keep = 1.0 / (1.0 - self.rate);
        let shape = tape.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask = (0..n)
            .map(|_| if r.gen::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        let m = tape.constant(Tensor::new(shape, mask)?);
        tape.mul(x, m)
    }
}
