use rand::Rng;

use crate::error::{arg_err, shape_err, Result};
use crate::op::Op;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Forward-pass mode. Dropout is the only op that reads it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn zip_with(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data)
}

// Fallible (shape and tape checks), so these cannot be the std operator traits.
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let out = zip_with("add", &self.value(), &other.value(), |x, y| x + y)?;
        self.tape.record("add", out, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let out = zip_with("sub", &self.value(), &other.value(), |x, y| x - y)?;
        self.tape.record("sub", out, Op::Sub(self.id, other.id))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let out = zip_with("mul", &self.value(), &other.value(), |x, y| x * y)?;
        self.tape.record("mul", out, Op::Mul(self.id, other.id))
    }

    pub fn scale(self, factor: f64) -> Result<Var<'t>> {
        let out = self.value().map(|x| x * factor);
        self.tape.record("scale", out, Op::Scale(self.id, factor))
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        let out = self.value().map(|x| x + c);
        self.tape.record("add_scalar", out, Op::AddScalar(self.id))
    }

    pub fn relu(self) -> Result<Var<'t>> {
        let out = self.value().map(|x| x.max(0.0));
        self.tape.record("relu", out, Op::Relu(self.id))
    }

    pub fn ln(self) -> Result<Var<'t>> {
        let out = self.value().map(f64::ln);
        self.tape.record("ln", out, Op::Ln(self.id))
    }

    pub fn exp(self) -> Result<Var<'t>> {
        let out = self.value().map(f64::exp);
        self.tape.record("exp", out, Op::Exp(self.id))
    }

    /// Channel dropout on a `[C, ...]` tensor: whole channels are zeroed with
    /// probability `rate`, survivors scaled by `1/(1-rate)`. Identity in eval mode.
    pub fn dropout_channels<R: Rng + ?Sized>(self, rate: f64, mode: Mode, rng: &mut R) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&rate) {
            return arg_err("dropout", format!("rate {rate} outside [0, 1)"));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(self);
        }
        let x = self.value();
        let channels = x.shape()[0];
        let per = x.numel() / channels;
        let keep = 1.0 / (1.0 - rate);
        let mut scale = Vec::with_capacity(x.numel());
        for _ in 0..channels {
            let k = if rng.random::<f64>() < rate { 0.0 } else { keep };
            scale.extend(std::iter::repeat_n(k, per));
        }
        let data = x.data().iter().zip(&scale).map(|(v, k)| v * k).collect();
        let out = Tensor::new(x.shape(), data)?;
        self.tape.record("dropout", out, Op::Dropout { input: self.id, scale })
    }
}
