use rand::Rng;

use crate::autodiff::tape::Op;
use crate::autodiff::tensor::{numel, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
    SqL2Norm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Tensor {
    fn unary(&self, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data = self.data.iter().map(|v| f(*v)).collect();
        Tensor::record(op, name, &[self], self.shape.clone(), data)
    }

    fn binary(
        &self,
        other: &Tensor,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "{name}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| f(*a, *b))
            .collect();
        Tensor::record(op, name, &[self, other], self.shape.clone(), data)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Add, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Sub, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Mul, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Div, "div", |a, b| a / b)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.unary(Op::Neg, "neg", |a| -a)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.unary(Op::Scale(c), "scale", |a| a * c)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.unary(Op::AddScalar, "add_scalar", |a| a + c)
    }

    pub fn powf(&self, p: f64) -> Result<Tensor> {
        self.unary(Op::Pow(p), "pow", |a| a.powf(p))
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        self.powf(0.5)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.mul(self)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary(Op::Exp, "exp", f64::exp)
    }

    pub fn ln(&self) -> Result<Tensor> {
        self.unary(Op::Ln, "ln", f64::ln)
    }

    pub fn tanh(&self) -> Result<Tensor> {
        self.unary(Op::Tanh, "tanh", f64::tanh)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary(Op::Sigmoid, "sigmoid", sigmoid)
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.unary(Op::Relu, "relu", |a| a.max(0.0))
    }

    pub fn leaky_relu(&self, alpha: f64) -> Result<Tensor> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Parameter(format!(
                "leaky_relu slope must lie in (0, 1), got {alpha}"
            )));
        }
        self.unary(Op::LeakyRelu(alpha), "leaky_relu", |a| {
            if a > 0.0 {
                a
            } else {
                alpha * a
            }
        })
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        self.unary(Op::Clamp(lo, hi), "clamp", |a| a.clamp(lo, hi))
    }

    pub fn activation(&self, kind: Activation) -> Result<Tensor> {
        match kind {
            Activation::Relu => self.relu(),
            Activation::LeakyRelu(alpha) => self.leaky_relu(alpha),
            Activation::Tanh => self.tanh(),
            Activation::Sigmoid => self.sigmoid(),
        }
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, mode: Mode, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        if p == 0.0 || mode == Mode::Eval {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mul(&Tensor::from_parts(self.shape.clone(), mask))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Tensor::record(
            Op::Reshape,
            "reshape",
            &[self],
            shape.to_vec(),
            self.data.as_ref().clone(),
        )
    }

    /// Sums over `axes`, keeping them as extent-1 dimensions.
    pub fn sum_keep(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        if let Some(a) = axes.iter().find(|a| **a >= rank) {
            return Err(Error::Parameter(format!(
                "axis {a} out of range for shape {:?}",
                self.shape
            )));
        }
        let mut out_shape = self.shape.clone();
        for a in axes {
            out_shape[*a] = 1;
        }
        let in_strides = strides(&self.shape);
        let out_strides = strides(&out_shape);
        let mut out = vec![0.0; numel(&out_shape)];
        for (i, v) in self.data.iter().enumerate() {
            let mut o = 0;
            for d in 0..rank {
                let idx = (i / in_strides[d]) % self.shape[d];
                if out_shape[d] != 1 {
                    o += idx * out_strides[d];
                }
            }
            out[o] += v;
        }
        Tensor::record(Op::SumKeep, "sum", &[self], out_shape, out)
    }

    /// Repeats extent-1 dimensions up to `shape` (ranks must match).
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.len() != self.rank()
            || self
                .shape
                .iter()
                .zip(shape)
                .any(|(a, b)| *a != *b && *a != 1)
        {
            return Err(Error::Dimension(format!(
                "cannot broadcast {:?} to {:?}",
                self.shape, shape
            )));
        }
        if shape == self.shape() {
            return Ok(self.clone());
        }
        let rank = shape.len();
        let in_strides = strides(&self.shape);
        let out_strides = strides(shape);
        let n = numel(shape);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut src = 0;
            for d in 0..rank {
                if self.shape[d] != 1 {
                    src += ((i / out_strides[d]) % shape[d]) * in_strides[d];
                }
            }
            out.push(self.data[src]);
        }
        Tensor::record(Op::BroadcastTo, "broadcast", &[self], shape.to_vec(), out)
    }

    /// Reduces over `axes` (all axes when `None`), dropping reduced dimensions.
    pub fn reduce(&self, kind: Reduction, axes: Option<&[usize]>) -> Result<Tensor> {
        let all: Vec<usize> = (0..self.rank()).collect();
        let axes = axes.unwrap_or(&all);
        let count: usize = axes
            .iter()
            .map(|a| self.shape.get(*a).copied().unwrap_or(0))
            .product();
        if count == 0 || self.is_empty() {
            return Err(Error::Parameter(format!(
                "empty reduction over axes {axes:?} of shape {:?}",
                self.shape
            )));
        }
        let base = match kind {
            Reduction::SqL2Norm => self.square()?,
            _ => self.clone(),
        };
        let summed = base.sum_keep(axes)?;
        let kept: Vec<usize> = self
            .shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, d)| *d)
            .collect();
        let summed = summed.reshape(&kept)?;
        match kind {
            Reduction::Mean => summed.scale(1.0 / count as f64),
            _ => Ok(summed),
        }
    }

    pub fn sum(&self) -> Result<Tensor> {
        self.reduce(Reduction::Sum, None)
    }

    pub fn mean(&self) -> Result<Tensor> {
        self.reduce(Reduction::Mean, None)
    }

    pub fn sq_l2_norm(&self) -> Result<Tensor> {
        self.reduce(Reduction::SqL2Norm, None)
    }

    /// Multiplies by `other` broadcast up to this tensor's shape.
    pub fn mul_bcast(&self, other: &Tensor) -> Result<Tensor> {
        self.mul(&other.broadcast_to(self.shape())?)
    }

    pub fn add_bcast(&self, other: &Tensor) -> Result<Tensor> {
        self.add(&other.broadcast_to(self.shape())?)
    }

    pub fn sub_bcast(&self, other: &Tensor) -> Result<Tensor> {
        self.sub(&other.broadcast_to(self.shape())?)
    }
}
