//! Reverse-mode automatic differentiation on a single-use tape.
//!
//! A [`Tape`] records every operation applied through it; [`Tape::backward`]
//! runs one reverse sweep from a scalar root and returns gradients for the
//! leaves created with [`Tape::input`]. Tensors are immutable and cheap to
//! clone; the tape itself is confined to one thread.

mod ops;
mod tensor;

pub use ops::Op;
pub use tensor::Tensor;

use std::cell::Cell;
use std::marker::PhantomData;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("shape {shape:?} does not describe {len} elements")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("{op}: operand shapes {lhs:?} and {rhs:?} do not line up")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {want} inputs, got {got}")]
    Arity {
        op: &'static str,
        got: usize,
        want: usize,
    },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("backward root must be scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("backward called twice on one tape")]
    TapeConsumed,
    #[error("variable does not belong to this tape")]
    ForeignVar,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

struct Node {
    op: Option<Op>,
    inputs: [usize; 2],
    n_inputs: u8,
    value: Tensor,
    needs_grad: bool,
}

/// Single-use recording of a computation.
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    _confined: PhantomData<Cell<()>>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            nodes: Vec::new(),
            consumed: false,
            _confined: PhantomData,
        }
    }

    /// Leaf that participates in gradients.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant by the backward sweep.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op: None,
            inputs: [0, 0],
            n_inputs: 0,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Applies `op` to recorded values, records the result, and returns its handle.
    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var, AdError> {
        if inputs.iter().any(|v| v.0 >= self.nodes.len()) {
            return Err(AdError::ForeignVar);
        }
        let tensors: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = op.forward(&tensors)?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let mut ids = [0usize; 2];
        for (slot, v) in ids.iter_mut().zip(inputs) {
            *slot = v.0;
        }
        self.nodes.push(Node {
            op: Some(op),
            inputs: ids,
            n_inputs: inputs.len() as u8,
            value,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.apply(Op::Matmul, &[a, b])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AdError> {
        self.apply(Op::Relu, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AdError> {
        self.apply(Op::Tanh, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AdError> {
        self.apply(Op::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AdError> {
        self.apply(Op::Log, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AdError> {
        self.apply(Op::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AdError> {
        self.apply(Op::Mean, &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AdError> {
        self.apply(Op::Square, &[a])
    }

    pub fn clamp_min(&mut self, a: Var, threshold: f64) -> Result<Var, AdError> {
        self.apply(Op::ClampMin(threshold), &[a])
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Reverse sweep from a scalar root. Gradients are returned for every
    /// input leaf on a path to the root; the tape cannot be swept twice.
    pub fn backward(&mut self, root: Var) -> Result<Gradients, AdError> {
        if self.consumed {
            return Err(AdError::TapeConsumed);
        }
        if root.0 >= self.nodes.len() {
            return Err(AdError::ForeignVar);
        }
        if self.nodes[root.0].value.numel() != 1 {
            return Err(AdError::NonScalarRoot {
                shape: self.nodes[root.0].value.shape().to_vec(),
            });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.nodes[root.0].value.shape(), 1.0));

        for id in (0..=root.0).rev() {
            let grad = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(op) = node.op else {
                grads[id] = Some(grad);
                continue;
            };
            let in_ids = &node.inputs[..node.n_inputs as usize];
            let tensors: Vec<&Tensor> = in_ids.iter().map(|&i| &self.nodes[i].value).collect();
            let gs = op.backward(&tensors, &node.value, &grad)?;
            for (&in_id, g) in in_ids.iter().zip(gs) {
                if !self.nodes[in_id].needs_grad {
                    continue;
                }
                grads[in_id] = Some(match grads[in_id].take() {
                    None => g,
                    Some(acc) => accumulate(&acc, &g),
                });
            }
        }

        let leaf_grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                if self.nodes[id].op.is_none() && self.nodes[id].needs_grad {
                    g
                } else {
                    None
                }
            })
            .collect();
        Ok(Gradients { grads: leaf_grads })
    }
}

fn accumulate(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let v = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_parts(a.shape().to_vec(), v)
}

/// Gradients for the input leaves of one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, if `v` was an input leaf
    /// connected to the root.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Compares the tape gradient of `f` at `x` against central finite
/// differences with step `h`, returning the worst relative error
/// `|g_ad - g_fd| / max(1, |g_fd|)` over all coordinates.
///
/// `f` receives a fresh tape and the handle of `x` and must return a scalar
/// root. The difference quotients use forward evaluation only, so this check
/// is independent of the backward rules it verifies.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64, AdError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AdError>,
{
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let root = f(&mut tape, xv)?;
    if tape.value(root).numel() != 1 {
        return Err(AdError::NonScalarRoot {
            shape: tape.value(root).shape().to_vec(),
        });
    }
    let mut grads = tape.backward(root)?;
    let g_ad = grads
        .take(xv)
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |pt: Tensor| -> Result<f64, AdError> {
        let mut t = Tape::new();
        let v = t.input(pt);
        let r = f(&mut t, v)?;
        Ok(t.value(r).item())
    };

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut up = x.data().to_vec();
        let mut dn = up.clone();
        up[i] += h;
        dn[i] -= h;
        let fu = eval(Tensor::from_parts(x.shape().to_vec(), up))?;
        let fd = eval(Tensor::from_parts(x.shape().to_vec(), dn))?;
        let g_fd = (fu - fd) / (2.0 * h);
        let err = (g_ad.data()[i] - g_fd).abs() / g_fd.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
