use super::tensor::Tensor;
use super::AdError;

/// The differentiable operation set. Binary ops broadcast a scalar or a
/// missing leading batch dimension; matmul handles matrix-matrix,
/// matrix-vector and vector-matrix shapes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Matmul,
    Relu,
    Tanh,
    Exp,
    Log,
    Sum,
    Mean,
    Square,
    /// max(x, threshold); zero gradient at and below the threshold.
    ClampMin(f64),
}

impl Op {
    pub fn arity(self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Matmul => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Matmul => "matmul",
            Op::Relu => "relu",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Square => "square",
            Op::ClampMin(_) => "clamp_min",
        }
    }

    /// Forward evaluation without recording. The tape calls this same kernel,
    /// so recorded and unrecorded forward passes are bit-identical.
    pub fn forward(self, inputs: &[&Tensor]) -> Result<Tensor, AdError> {
        if inputs.len() != self.arity() {
            return Err(AdError::Arity {
                op: self.name(),
                got: inputs.len(),
                want: self.arity(),
            });
        }
        match self {
            Op::Add => ew2(self, inputs[0], inputs[1], |a, b| a + b),
            Op::Sub => ew2(self, inputs[0], inputs[1], |a, b| a - b),
            Op::Mul => ew2(self, inputs[0], inputs[1], |a, b| a * b),
            Op::Matmul => matmul(inputs[0], inputs[1]),
            Op::Relu => Ok(ew1(inputs[0], |x| x.max(0.0))),
            Op::Tanh => Ok(ew1(inputs[0], f64::tanh)),
            Op::Exp => {
                let out = ew1(inputs[0], f64::exp);
                if !out.all_finite() {
                    return Err(AdError::Domain {
                        op: "exp",
                        detail: "overflow to non-finite value".into(),
                    });
                }
                Ok(out)
            }
            Op::Log => {
                if inputs[0].data().iter().any(|&x| x <= 0.0) {
                    return Err(AdError::Domain {
                        op: "log",
                        detail: "input has a non-positive entry".into(),
                    });
                }
                Ok(ew1(inputs[0], f64::ln))
            }
            Op::Sum => Ok(Tensor::scalar(inputs[0].data().iter().sum())),
            Op::Mean => {
                let n = inputs[0].numel() as f64;
                Ok(Tensor::scalar(inputs[0].data().iter().sum::<f64>() / n))
            }
            Op::Square => Ok(ew1(inputs[0], |x| x * x)),
            Op::ClampMin(c) => Ok(ew1(inputs[0], |x| x.max(c))),
        }
    }

    /// Gradients with respect to each input, given the cotangent of the output.
    pub(crate) fn backward(
        self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
    ) -> Result<Vec<Tensor>, AdError> {
        let out = match self {
            Op::Add => vec![
                reduce_to(grad, inputs[0].shape()),
                reduce_to(grad, inputs[1].shape()),
            ],
            Op::Sub => vec![
                reduce_to(grad, inputs[0].shape()),
                reduce_to(&neg(grad), inputs[1].shape()),
            ],
            Op::Mul => {
                let ga = ew2(Op::Mul, grad, inputs[1], |a, b| a * b)?;
                let gb = ew2(Op::Mul, grad, inputs[0], |a, b| a * b)?;
                vec![
                    reduce_to(&ga, inputs[0].shape()),
                    reduce_to(&gb, inputs[1].shape()),
                ]
            }
            Op::Matmul => matmul_backward(inputs[0], inputs[1], grad)?,
            Op::Relu => vec![mask_mul(grad, inputs[0], |x| x > 0.0)],
            Op::Tanh => {
                let d = output.data();
                let g = grad.data();
                let v = g.iter().zip(d).map(|(g, t)| g * (1.0 - t * t)).collect();
                vec![Tensor::from_parts(inputs[0].shape().to_vec(), v)]
            }
            Op::Exp => {
                let v = grad
                    .data()
                    .iter()
                    .zip(output.data())
                    .map(|(g, e)| g * e)
                    .collect();
                vec![Tensor::from_parts(inputs[0].shape().to_vec(), v)]
            }
            Op::Log => {
                let v = grad
                    .data()
                    .iter()
                    .zip(inputs[0].data())
                    .map(|(g, x)| g / x)
                    .collect();
                vec![Tensor::from_parts(inputs[0].shape().to_vec(), v)]
            }
            Op::Sum => vec![Tensor::full(inputs[0].shape(), grad.item())],
            Op::Mean => {
                let n = inputs[0].numel() as f64;
                vec![Tensor::full(inputs[0].shape(), grad.item() / n)]
            }
            Op::Square => {
                let v = grad
                    .data()
                    .iter()
                    .zip(inputs[0].data())
                    .map(|(g, x)| g * 2.0 * x)
                    .collect();
                vec![Tensor::from_parts(inputs[0].shape().to_vec(), v)]
            }
            Op::ClampMin(c) => vec![mask_mul(grad, inputs[0], |x| x > c)],
        };
        Ok(out)
    }
}

fn ew1(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

fn neg(a: &Tensor) -> Tensor {
    ew1(a, |x| -x)
}

fn mask_mul(grad: &Tensor, x: &Tensor, keep: impl Fn(f64) -> bool) -> Tensor {
    let v = grad
        .data()
        .iter()
        .zip(x.data())
        .map(|(g, x)| if keep(*x) { *g } else { 0.0 })
        .collect();
    Tensor::from_parts(x.shape().to_vec(), v)
}

/// How the two operand shapes of an elementwise op line up.
enum Pairing {
    Same,
    /// Right operand is a scalar or lacks the left's leading batch dimension.
    RightNarrow,
    LeftNarrow,
}

fn pairing(a: &[usize], b: &[usize]) -> Option<Pairing> {
    if a == b {
        Some(Pairing::Same)
    } else if b.is_empty() || (!a.is_empty() && a[1..] == *b) {
        Some(Pairing::RightNarrow)
    } else if a.is_empty() || (!b.is_empty() && b[1..] == *a) {
        Some(Pairing::LeftNarrow)
    } else {
        None
    }
}

fn ew2(op: Op, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, AdError> {
    let mismatch = || AdError::ShapeMismatch {
        op: op.name(),
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    match pairing(a.shape(), b.shape()).ok_or_else(mismatch)? {
        Pairing::Same => {
            let v = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Ok(Tensor::from_parts(a.shape().to_vec(), v))
        }
        Pairing::RightNarrow => {
            let inner = b.numel();
            let v = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, b.data()[i % inner]))
                .collect();
            Ok(Tensor::from_parts(a.shape().to_vec(), v))
        }
        Pairing::LeftNarrow => {
            let inner = a.numel();
            let v = b
                .data()
                .iter()
                .enumerate()
                .map(|(i, &y)| f(a.data()[i % inner], y))
                .collect();
            Ok(Tensor::from_parts(b.shape().to_vec(), v))
        }
    }
}

/// Sums a broadcast gradient back down to the operand's shape.
fn reduce_to(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let inner: usize = shape.iter().product();
    let mut acc = vec![0.0; inner];
    for (i, &g) in grad.data().iter().enumerate() {
        acc[i % inner] += g;
    }
    Tensor::from_parts(shape.to_vec(), acc)
}

fn dgemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, AdError> {
    let mismatch = || AdError::ShapeMismatch {
        op: "matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    match (a.shape(), b.shape()) {
        ([m, k], [k2, n]) if k == k2 => {
            let mut c = vec![0.0; m * n];
            dgemm(*m, *k, *n, a.data(), b.data(), &mut c);
            Ok(Tensor::from_parts(vec![*m, *n], c))
        }
        ([m, k], [k2]) if k == k2 => {
            let mut c = vec![0.0; *m];
            dgemm(*m, *k, 1, a.data(), b.data(), &mut c);
            Ok(Tensor::from_parts(vec![*m], c))
        }
        ([k], [k2, n]) if k == k2 => {
            let mut c = vec![0.0; *n];
            dgemm(1, *k, *n, a.data(), b.data(), &mut c);
            Ok(Tensor::from_parts(vec![*n], c))
        }
        _ => Err(mismatch()),
    }
}

fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>, AdError> {
    match (a.shape(), b.shape()) {
        ([m, k], [_, n]) => {
            // dA = G B^T, dB = A^T G
            let bt = transpose(*k, *n, b.data());
            let mut da = vec![0.0; m * k];
            dgemm(*m, *n, *k, grad.data(), &bt, &mut da);
            let at = transpose(*m, *k, a.data());
            let mut db = vec![0.0; k * n];
            dgemm(*k, *m, *n, &at, grad.data(), &mut db);
            Ok(vec![
                Tensor::from_parts(vec![*m, *k], da),
                Tensor::from_parts(vec![*k, *n], db),
            ])
        }
        ([m, k], [_]) => {
            // c = A b: dA = g b^T (outer), db = A^T g
            let g = grad.data();
            let mut da = vec![0.0; m * k];
            for r in 0..*m {
                for c in 0..*k {
                    da[r * k + c] = g[r] * b.data()[c];
                }
            }
            let at = transpose(*m, *k, a.data());
            let mut db = vec![0.0; *k];
            dgemm(*k, *m, 1, &at, g, &mut db);
            Ok(vec![
                Tensor::from_parts(vec![*m, *k], da),
                Tensor::from_parts(vec![*k], db),
            ])
        }
        ([k], [_, n]) => {
            // c = a B: da = B g, dB = a g^T (outer)
            let g = grad.data();
            let mut da = vec![0.0; *k];
            dgemm(*k, *n, 1, b.data(), g, &mut da);
            let mut db = vec![0.0; k * n];
            for r in 0..*k {
                for c in 0..*n {
                    db[r * n + c] = a.data()[r] * g[c];
                }
            }
            Ok(vec![
                Tensor::from_parts(vec![*k], da),
                Tensor::from_parts(vec![*k, *n], db),
            ])
        }
        _ => unreachable!("matmul_backward on shapes the forward pass rejected"),
    }
}
