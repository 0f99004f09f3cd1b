use std::fmt;
use std::io::Write;
use std::rc::Rc;
use std::sync::atomic::{AtomicBool, Ordering};

use crate::autodiff::tape::{Op, Saved, Tape};
use crate::error::{Error, Result};

static DEBUG_CHECKS: AtomicBool = AtomicBool::new(cfg!(debug_assertions));
static DETERMINISTIC: AtomicBool = AtomicBool::new(true);

/// Enables or disables the non-finite check applied to every op output.
pub fn set_debug_checks(enabled: bool) {
    DEBUG_CHECKS.store(enabled, Ordering::Relaxed);
}

pub fn debug_checks() -> bool {
    DEBUG_CHECKS.load(Ordering::Relaxed)
}

/// With deterministic reductions on (the default) every kernel sums in a fixed
/// sequential order. Turning it off lets convolution kernels fan out across
/// threads, which can change the low bits of weight-gradient sums.
pub fn set_deterministic_reductions(enabled: bool) {
    DETERMINISTIC.store(enabled, Ordering::Relaxed);
}

pub fn deterministic_reductions() -> bool {
    DETERMINISTIC.load(Ordering::Relaxed)
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub(crate) tape: Tape,
    pub(crate) id: usize,
}

/// An n-dimensional array of `f64` values, optionally recorded on a [`Tape`].
///
/// Tensors are immutable. Cloning is cheap: data is reference counted.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Rc<Vec<f64>>,
    pub(crate) node: Option<NodeRef>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad())
            .field("data", &self.data)
            .finish()
    }
}

/// Bitwise equality of shape and values.
impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape() == other.shape()
            && self
                .data()
                .iter()
                .zip(other.data())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            shape,
            data: Rc::new(data),
            node: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(Vec::new(), vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::from_parts(shape.to_vec(), vec![value; numel(shape)])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// The tape this tensor is recorded on, if any.
    pub fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|n| &n.tape)
    }

    pub(crate) fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    /// Same values, cut from the tape.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            node: None,
        }
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub(crate) fn saved(&self) -> Saved {
        Saved {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            id: self.node_id(),
        }
    }

    pub(crate) fn dims3(&self, what: &str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::Dimension(format!(
                "{what} must be rank 3, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Writes the tensor as two CSV lines: the shape, then the flattened values.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let shape: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        writeln!(out, "{}", shape.join(","))?;
        let values: Vec<String> = self.data.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", values.join(","))
    }

    /// Builds the output tensor of an op, recording it when any input is on a tape.
    pub(crate) fn record(
        op: Op,
        name: &'static str,
        inputs: &[&Tensor],
        shape: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<Tensor> {
        if debug_checks() {
            if let Some(index) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: name, index });
            }
        }
        let mut tape: Option<&Tape> = None;
        for t in inputs {
            if let Some(n) = &t.node {
                match tape {
                    None => tape = Some(&n.tape),
                    Some(existing) if !existing.same_as(&n.tape) => {
                        return Err(Error::Contract(format!(
                            "{name}: inputs recorded on different tapes"
                        )))
                    }
                    _ => {}
                }
            }
        }
        let data = Rc::new(data);
        let node = match tape {
            Some(tape) => {
                let saved = inputs.iter().map(|t| t.saved()).collect();
                let id = tape.push(op, saved, shape.clone(), Rc::clone(&data));
                Some(NodeRef {
                    tape: tape.clone(),
                    id,
                })
            }
            None => None,
        };
        Ok(Tensor { shape, data, node })
    }
}
