//! Operation recording and reverse-mode gradient propagation.
//!
//! Every op whose inputs live on a [`Tape`] appends one node holding the
//! op kind, the inputs (by value) and the output. Node ids increase in
//! creation order, so walking ids backwards is a valid reverse topological
//! order. Backward rules are written in terms of ordinary tensor ops; when
//! `create_graph` is set they run on tape-attached tensors and the gradient
//! computation is itself recorded, which is what makes a gradient norm
//! differentiable.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::autodiff::tensor::{NodeRef, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    AddScalar,
    Pow(f64),
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Clamp(f64, f64),
    SumKeep,
    BroadcastTo,
    Reshape,
    Conv1d { stride: usize, padding: usize },
    ConvTranspose1d { stride: usize, padding: usize },
    ConvWeightGrad { stride: usize, padding: usize },
}

/// An op input or output as kept on the tape: values plus the producing node.
#[derive(Clone)]
pub(crate) struct Saved {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Rc<Vec<f64>>,
    pub(crate) id: Option<usize>,
}

struct Node {
    op: Op,
    inputs: Vec<Saved>,
    output: Saved,
}

/// Append-only record of the operations of one forward pass.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Rc<RefCell<Vec<Node>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `value` as a differentiable leaf and returns the tracked copy.
    pub fn leaf(&self, value: &Tensor) -> Tensor {
        let data = Rc::clone(&value.data);
        let id = self.push(Op::Leaf, Vec::new(), value.shape.clone(), Rc::clone(&data));
        Tensor {
            shape: value.shape.clone(),
            data,
            node: Some(NodeRef {
                tape: self.clone(),
                id,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn same_as(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    pub(crate) fn push(
        &self,
        op: Op,
        inputs: Vec<Saved>,
        shape: Vec<usize>,
        data: Rc<Vec<f64>>,
    ) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        debug_assert!(inputs.iter().all(|s| s.id.is_none_or(|i| i < id)));
        nodes.push(Node {
            op,
            inputs,
            output: Saved {
                shape,
                data,
                id: Some(id),
            },
        });
        id
    }

    fn attach(&self, saved: &Saved, create_graph: bool) -> Tensor {
        Tensor {
            shape: saved.shape.clone(),
            data: Rc::clone(&saved.data),
            node: match (create_graph, saved.id) {
                (true, Some(id)) => Some(NodeRef {
                    tape: self.clone(),
                    id,
                }),
                _ => None,
            },
        }
    }
}

/// Gradients of a scalar with respect to every leaf on its tape.
pub struct GradientMap {
    tape: Tape,
    grads: HashMap<usize, Tensor>,
}

impl GradientMap {
    /// Gradient for `leaf`; `None` when the output does not depend on it.
    pub fn get(&self, leaf: &Tensor) -> Option<&Tensor> {
        let node = leaf.node.as_ref()?;
        if !node.tape.same_as(&self.tape) {
            return None;
        }
        self.grads.get(&node.id)
    }

    /// Like [`get`](Self::get) but returns zeros for unreachable leaves.
    pub fn get_or_zeros(&self, leaf: &Tensor) -> Tensor {
        self.get(leaf)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(leaf.shape()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Tensor {
    /// Gradients of this scalar with respect to all leaves of its tape.
    ///
    /// With `create_graph` the returned gradients are recorded on the same
    /// tape, so a function of them can be differentiated again.
    pub fn backward(&self, create_graph: bool) -> Result<GradientMap> {
        let (tape, out_id) = self.backward_root()?;
        let nodes = snapshot(&tape, out_id);
        let needed: Vec<bool> = {
            let mut needed = vec![false; nodes.len()];
            for (i, n) in nodes.iter().enumerate() {
                needed[i] = matches!(n.0, Op::Leaf)
                    || n.1.iter().any(|s| s.id.is_some_and(|j| needed[j]));
            }
            needed
        };
        let mut collected = HashMap::new();
        propagate(&tape, &nodes, &needed, create_graph, |id, op, g| {
            if matches!(op, Op::Leaf) {
                collected.insert(id, g.clone());
            }
        })?;
        Ok(GradientMap {
            tape,
            grads: collected,
        })
    }

    /// Gradients of this scalar with respect to `wrt` only. Work on branches
    /// that cannot reach any of `wrt` is skipped. Unreachable targets get zeros.
    pub fn grad(&self, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
        let (tape, out_id) = self.backward_root()?;
        let mut targets = Vec::with_capacity(wrt.len());
        for t in wrt {
            match &t.node {
                Some(n) if n.tape.same_as(&tape) => targets.push(n.id),
                _ => {
                    return Err(Error::Contract(
                        "grad target is not recorded on the output's tape".into(),
                    ))
                }
            }
        }
        let nodes = snapshot(&tape, out_id);
        let mut needed = vec![false; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            needed[i] = targets.contains(&i) || n.1.iter().any(|s| s.id.is_some_and(|j| needed[j]));
        }
        let mut collected: HashMap<usize, Tensor> = HashMap::new();
        propagate(&tape, &nodes, &needed, create_graph, |id, _, g| {
            if targets.contains(&id) {
                collected.insert(id, g.clone());
            }
        })?;
        Ok(wrt
            .iter()
            .zip(&targets)
            .map(|(t, id)| {
                collected
                    .remove(id)
                    .unwrap_or_else(|| Tensor::zeros(t.shape()))
            })
            .collect())
    }

    fn backward_root(&self) -> Result<(Tape, usize)> {
        let node = self.node.as_ref().ok_or(Error::NoTape)?;
        if self.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape
            )));
        }
        Ok((node.tape.clone(), node.id))
    }
}

type NodeView = (Op, Vec<Saved>, Saved);

fn snapshot(tape: &Tape, last: usize) -> Vec<NodeView> {
    tape.nodes.borrow()[..=last]
        .iter()
        .map(|n| (n.op.clone(), n.inputs.clone(), n.output.clone()))
        .collect()
}

fn propagate(
    tape: &Tape,
    nodes: &[NodeView],
    needed: &[bool],
    create_graph: bool,
    mut visit: impl FnMut(usize, &Op, &Tensor),
) -> Result<()> {
    let last = nodes.len() - 1;
    let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
    grads[last] = Some(Tensor::ones(&nodes[last].2.shape));
    for id in (0..nodes.len()).rev() {
        if !needed[id] {
            continue;
        }
        let Some(g) = grads[id].take() else { continue };
        let (op, inputs, output) = &nodes[id];
        visit(id, op, &g);
        if matches!(op, Op::Leaf) {
            continue;
        }
        let wants: Vec<bool> = inputs
            .iter()
            .map(|s| s.id.is_some_and(|j| needed[j]))
            .collect();
        if !wants.iter().any(|w| *w) {
            continue;
        }
        let ins: Vec<Tensor> = inputs.iter().map(|s| tape.attach(s, create_graph)).collect();
        let out = tape.attach(output, create_graph);
        let g = if create_graph { g } else { g.detach() };
        let input_grads = op.backward(&ins, &out, &g, &wants)?;
        for ((saved, want), ig) in inputs.iter().zip(&wants).zip(input_grads) {
            if !want {
                continue;
            }
            let (Some(j), Some(ig)) = (saved.id, ig) else { continue };
            grads[j] = Some(match grads[j].take() {
                Some(acc) => acc.add(&ig)?,
                None => ig,
            });
        }
    }
    Ok(())
}

fn step_mask(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(x.shape.clone(), x.data.iter().map(|v| f(*v)).collect())
}

impl Op {
    fn backward(
        &self,
        ins: &[Tensor],
        out: &Tensor,
        g: &Tensor,
        wants: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let want = |i: usize| wants.get(i).copied().unwrap_or(false);
        Ok(match self {
            Op::Leaf => Vec::new(),
            Op::Add => vec![Some(g.clone()), Some(g.clone())],
            Op::Sub => vec![Some(g.clone()), Some(g.neg()?)],
            Op::Mul => vec![
                if want(0) { Some(g.mul(&ins[1])?) } else { None },
                if want(1) { Some(g.mul(&ins[0])?) } else { None },
            ],
            Op::Div => {
                let ga = g.div(&ins[1])?;
                let gb = if want(1) {
                    Some(ga.mul(out)?.neg()?)
                } else {
                    None
                };
                vec![Some(ga), gb]
            }
            Op::Neg => vec![Some(g.neg()?)],
            Op::Scale(c) => vec![Some(g.scale(*c)?)],
            Op::AddScalar => vec![Some(g.clone())],
            Op::Pow(p) => vec![Some(g.mul(&ins[0].powf(p - 1.0)?.scale(*p)?)?)],
            Op::Exp => vec![Some(g.mul(out)?)],
            Op::Ln => vec![Some(g.div(&ins[0])?)],
            Op::Tanh => {
                let d = out.mul(out)?.neg()?.add_scalar(1.0)?;
                vec![Some(g.mul(&d)?)]
            }
            Op::Sigmoid => {
                let d = out.mul(&out.neg()?.add_scalar(1.0)?)?;
                vec![Some(g.mul(&d)?)]
            }
            Op::Relu => {
                let mask = step_mask(&ins[0], |v| if v > 0.0 { 1.0 } else { 0.0 });
                vec![Some(g.mul(&mask)?)]
            }
            Op::LeakyRelu(alpha) => {
                let a = *alpha;
                let mask = step_mask(&ins[0], |v| if v > 0.0 { 1.0 } else { a });
                vec![Some(g.mul(&mask)?)]
            }
            Op::Clamp(lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let mask = step_mask(&ins[0], |v| if v >= lo && v <= hi { 1.0 } else { 0.0 });
                vec![Some(g.mul(&mask)?)]
            }
            Op::SumKeep => vec![Some(g.broadcast_to(ins[0].shape())?)],
            Op::BroadcastTo => {
                let axes: Vec<usize> = ins[0]
                    .shape()
                    .iter()
                    .zip(out.shape())
                    .enumerate()
                    .filter(|(_, (a, b))| a != b)
                    .map(|(i, _)| i)
                    .collect();
                vec![Some(g.sum_keep(&axes)?)]
            }
            Op::Reshape => vec![Some(g.reshape(ins[0].shape())?)],
            Op::Conv1d { stride, padding } => {
                let (s, p) = (*stride, *padding);
                let (_, _, len) = ins[0].dims3("conv1d input")?;
                let k = ins[1].shape()[2];
                vec![
                    if want(0) {
                        Some(g.conv_transpose1d_raw(&ins[1], s, p, len)?)
                    } else {
                        None
                    },
                    if want(1) {
                        Some(ins[0].conv1d_weight_grad(g, k, s, p)?)
                    } else {
                        None
                    },
                ]
            }
            Op::ConvTranspose1d { stride, padding } => {
                let (s, p) = (*stride, *padding);
                let k = ins[1].shape()[2];
                vec![
                    if want(0) {
                        Some(g.conv1d_raw(&ins[1], s, p)?)
                    } else {
                        None
                    },
                    if want(1) {
                        Some(g.conv1d_weight_grad(&ins[0], k, s, p)?)
                    } else {
                        None
                    },
                ]
            }
            Op::ConvWeightGrad { stride, padding, .. } => {
                // ins[0] = signal X, ins[1] = output gradient G, g has kernel shape.
                let (s, p) = (*stride, *padding);
                let (_, _, len) = ins[0].dims3("weight-grad signal")?;
                vec![
                    if want(0) {
                        Some(ins[1].conv_transpose1d_raw(g, s, p, len)?)
                    } else {
                        None
                    },
                    if want(1) {
                        Some(ins[0].conv1d_raw(g, s, p)?)
                    } else {
                        None
                    },
                ]
            }
        })
    }
}
