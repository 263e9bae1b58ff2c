//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable once written by an op: every operation allocates its
//! output, records its parents and a backward closure, and `backward()` on a
//! scalar loss replays those closures in reverse topological order. Gradients
//! accumulate into `grad` buffers until cleared, so two backward passes double
//! the gradient of one. Parameter data may only be rewritten through
//! [`Tensor::update_data`] (the optimizer path), which invalidates any graph
//! built on the old values.
//!
//! The element type is generic over [`Scalar`]; the training pipeline uses
//! `f32` while the gradient-check harness instantiates the identical code at
//! `f64`.

mod nn;

pub use nn::*;

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch { op: &'static str, lhs: Shape, rhs: Shape },
    #[error("{op}: expected rank {expected}, got shape {shape}")]
    RankMismatch { op: &'static str, expected: usize, shape: Shape },
    #[error("shape {shape} implies {expected} elements, data has {got}")]
    DataLength { shape: Shape, expected: usize, got: usize },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis { op: &'static str, axis: usize, rank: usize },
    #[error("{op}: channel mismatch between input {lhs} and kernels {rhs}")]
    ChannelMismatch { op: &'static str, lhs: Shape, rhs: Shape },
    #[error("{op}: spatial extent too small in {shape} (need at least 2x2)")]
    SpatialTooSmall { op: &'static str, shape: Shape },
    #[error("dropout rate {rate} must lie in [0, 1)")]
    InvalidDropoutRate { rate: f64 },
    #[error("backward requires a scalar, got shape {shape}")]
    NotScalar { shape: Shape },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    #[error("{op}: empty selection (no unmasked targets)")]
    EmptySelection { op: &'static str },
}

/// Shape newtype so errors print as `[m, n]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape(pub Vec<usize>);

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

type BackwardFn<F> = Box<dyn Fn(&[F])>;

struct Inner<F: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<F>>,
    grad: RefCell<Option<Vec<F>>>,
    requires_grad: bool,
    parents: Vec<Tensor<F>>,
    backward: Option<BackwardFn<F>>,
}

/// N-dimensional row-major tensor, cheaply cloneable (shared storage).
pub struct Tensor<F: Scalar>(Rc<Inner<F>>);

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<F: Scalar> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Runs `f` with graph recording disabled (inference / finite differences).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    let out = f();
    GRAD_ENABLED.with(|c| c.set(prev));
    out
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Scalar> Tensor<F> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<F>) -> Result<Self, TensorError> {
        let expected = numel(&shape);
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape: Shape(shape),
                expected,
                got: data.len(),
            });
        }
        Ok(Self::leaf(shape, data, false))
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self::leaf(shape, vec![F::zero(); n], false)
    }

    pub fn full(shape: Vec<usize>, value: F) -> Self {
        let n = numel(&shape);
        Self::leaf(shape, vec![value; n], false)
    }

    pub fn scalar(value: F) -> Self {
        Self::leaf(vec![1], vec![value], false)
    }

    pub(crate) fn leaf(shape: Vec<usize>, data: Vec<F>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Inner {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        }))
    }

    pub(crate) fn result(
        shape: Vec<usize>,
        data: Vec<F>,
        parents: Vec<Tensor<F>>,
        backward: BackwardFn<F>,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.0.requires_grad);
        if track {
            Tensor(Rc::new(Inner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: true,
                parents,
                backward: Some(backward),
            }))
        } else {
            Self::leaf(shape, data, false)
        }
    }

    /// Marks this leaf as a gradient target. Consumes and re-wraps so the flag
    /// can only be set before the tensor enters any graph.
    pub fn requires_grad(self) -> Self {
        Tensor(Rc::new(Inner {
            id: next_id(),
            shape: self.0.shape.clone(),
            data: RefCell::new(self.0.data.borrow().clone()),
            grad: RefCell::new(None),
            requires_grad: true,
            parents: Vec::new(),
            backward: None,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn len(&self) -> usize {
        self.0.data.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }

    pub fn requires_grad_flag(&self) -> bool {
        self.0.requires_grad
    }

    /// Copies the data out.
    pub fn to_vec(&self) -> Vec<F> {
        self.0.data.borrow().clone()
    }

    /// Runs `f` over the raw data slice.
    pub fn with_data<R>(&self, f: impl FnOnce(&[F]) -> R) -> R {
        f(&self.0.data.borrow())
    }

    /// Scalar value of a 1-element tensor.
    pub fn item(&self) -> F {
        debug_assert!(self.is_scalar(), "item() on non-scalar");
        self.0.data.borrow()[0]
    }

    /// Current gradient, if any backward pass has populated it.
    pub fn grad(&self) -> Option<Vec<F>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// In-place rewrite of the data (optimizer updates, buffer maintenance).
    /// Any graph recorded over the old values must not be replayed afterwards.
    pub fn update_data(&self, f: impl FnOnce(&mut [F])) {
        f(&mut self.0.data.borrow_mut());
    }

    /// A graph-detached copy sharing no autograd history.
    pub fn detach(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.to_vec(), false)
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.borrow().iter().all(|v| v.is_finite())
    }

    pub(crate) fn accumulate_grad(&self, contribution: impl Iterator<Item = F>) {
        let mut slot = self.0.grad.borrow_mut();
        let buf = slot.get_or_insert_with(|| vec![F::zero(); self.len()]);
        for (g, c) in buf.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    pub(crate) fn data_ref(&self) -> std::cell::Ref<'_, Vec<F>> {
        self.0.data.borrow()
    }

    /// Accumulates `contribution` into the gradient of `self` (used by
    /// backward closures).
    pub(crate) fn add_grad(&self, contribution: &[F]) {
        self.accumulate_grad(contribution.iter().copied());
    }

    /// Mutable access to the gradient buffer, allocating zeros on first use.
    pub(crate) fn with_grad_mut<R>(&self, f: impl FnOnce(&mut [F]) -> R) -> R {
        let mut slot = self.0.grad.borrow_mut();
        let buf = slot.get_or_insert_with(|| vec![F::zero(); self.len()]);
        f(buf)
    }

    /// Reverse-mode differentiation from a scalar loss. Gradients accumulate
    /// into every `requires_grad` ancestor.
    pub fn backward(&self) -> Result<(), TensorError> {
        if !self.is_scalar() {
            return Err(TensorError::NotScalar {
                shape: Shape(self.0.shape.clone()),
            });
        }
        // Iterative post-order DFS over parents; reverse gives topological
        // order from the loss down to the leaves.
        let mut order: Vec<Tensor<F>> = Vec::new();
        let mut visited: std::collections::HashSet<u64> = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor<F>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.0.id);
        while let Some((node, child_idx)) = stack.pop() {
            if child_idx < node.0.parents.len() {
                let parent = node.0.parents[child_idx].clone();
                stack.push((node, child_idx + 1));
                if parent.0.requires_grad && visited.insert(parent.0.id) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }
        // Interior nodes carry per-pass gradients; only leaves accumulate
        // across passes (two backward calls double a parameter's gradient).
        for node in &order {
            if node.0.backward.is_some() {
                *node.0.grad.borrow_mut() = None;
            }
        }
        self.accumulate_grad(std::iter::once(F::one()));
        for node in order.iter().rev() {
            if let Some(backward) = &node.0.backward {
                let grad = node.0.grad.borrow().clone().unwrap_or_else(|| vec![F::zero(); node.len()]);
                backward(&grad);
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra ops
// ---------------------------------------------------------------------------

fn same_shape<F: Scalar>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: Shape(a.shape().to_vec()),
            rhs: Shape(b.shape().to_vec()),
        });
    }
    Ok(())
}

impl<F: Scalar> Tensor<F> {
    pub fn add(&self, other: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
        same_shape("add", self, other)?;
        let out: Vec<F> = {
            let a = self.0.data.borrow();
            let b = other.0.data.borrow();
            a.iter().zip(b.iter()).map(|(x, y)| *x + *y).collect()
        };
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::result(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                if pa.0.requires_grad {
                    pa.add_grad(g);
                }
                if pb.0.requires_grad {
                    pb.add_grad(g);
                }
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
        same_shape("sub", self, other)?;
        let out: Vec<F> = {
            let a = self.0.data.borrow();
            let b = other.0.data.borrow();
            a.iter().zip(b.iter()).map(|(x, y)| *x - *y).collect()
        };
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::result(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                if pa.0.requires_grad {
                    pa.add_grad(g);
                }
                if pb.0.requires_grad {
                    pb.accumulate_grad(g.iter().map(|v| -*v));
                }
            }),
        ))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
        same_shape("mul", self, other)?;
        let out: Vec<F> = {
            let a = self.0.data.borrow();
            let b = other.0.data.borrow();
            a.iter().zip(b.iter()).map(|(x, y)| *x * *y).collect()
        };
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::result(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                if pa.0.requires_grad {
                    let b = pb.0.data.borrow();
                    pa.accumulate_grad(g.iter().zip(b.iter()).map(|(gv, bv)| *gv * *bv));
                }
                if pb.0.requires_grad {
                    let a = pa.0.data.borrow();
                    pb.accumulate_grad(g.iter().zip(a.iter()).map(|(gv, av)| *gv * *av));
                }
            }),
        ))
    }

    pub fn scale(&self, c: F) -> Tensor<F> {
        let out: Vec<F> = self.0.data.borrow().iter().map(|v| *v * c).collect();
        let p = self.clone();
        Tensor::result(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if p.0.requires_grad {
                    p.accumulate_grad(g.iter().map(|v| *v * c));
                }
            }),
        )
    }

    pub fn add_scalar(&self, c: F) -> Tensor<F> {
        let out: Vec<F> = self.0.data.borrow().iter().map(|v| *v + c).collect();
        let p = self.clone();
        Tensor::result(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if p.0.requires_grad {
                    p.add_grad(g);
                }
            }),
        )
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum_all(&self) -> Tensor<F> {
        let total: F = self.0.data.borrow().iter().copied().sum();
        let p = self.clone();
        Tensor::result(
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |g| {
                if p.0.requires_grad {
                    let gv = g[0];
                    p.accumulate_grad(std::iter::repeat(gv).take(p.len()));
                }
            }),
        )
    }

    /// Mean of all elements, as a scalar tensor.
    pub fn mean_all(&self) -> Tensor<F> {
        let n = F::from_f64(self.len() as f64);
        let total: F = self.0.data.borrow().iter().copied().sum();
        let p = self.clone();
        Tensor::result(
            vec![1],
            vec![total / n],
            vec![self.clone()],
            Box::new(move |g| {
                if p.0.requires_grad {
                    let gv = g[0] / n;
                    p.accumulate_grad(std::iter::repeat(gv).take(p.len()));
                }
            }),
        )
    }

    /// Mean over the last axis: `[..., W] -> [...]`.
    pub fn mean_last_axis(&self) -> Result<Tensor<F>, TensorError> {
        if self.rank() < 2 {
            return Err(TensorError::RankMismatch {
                op: "mean_last_axis",
                expected: 2,
                shape: Shape(self.shape().to_vec()),
            });
        }
        let w = *self.shape().last().unwrap();
        let rows = self.len() / w;
        let inv = F::one() / F::from_f64(w as f64);
        let data = self.0.data.borrow();
        let out: Vec<F> = (0..rows)
            .map(|r| data[r * w..(r + 1) * w].iter().copied().sum::<F>() * inv)
            .collect();
        drop(data);
        let mut shape = self.shape().to_vec();
        shape.pop();
        let p = self.clone();
        Ok(Tensor::result(
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if p.0.requires_grad {
                    p.with_grad_mut(|buf| {
                        for (r, gv) in g.iter().enumerate() {
                            let spread = *gv * inv;
                            for slot in &mut buf[r * w..(r + 1) * w] {
                                *slot += spread;
                            }
                        }
                    });
                }
            }),
        ))
    }

    /// Reinterprets the buffer under a new shape of identical element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor<F>, TensorError> {
        let expected = numel(&shape);
        if expected != self.len() {
            return Err(TensorError::DataLength {
                shape: Shape(shape),
                expected,
                got: self.len(),
            });
        }
        let p = self.clone();
        Ok(Tensor::result(
            shape,
            self.to_vec(),
            vec![self.clone()],
            Box::new(move |g| {
                if p.0.requires_grad {
                    p.add_grad(g);
                }
            }),
        ))
    }

    /// 2-D transpose (copies).
    pub fn transpose(&self) -> Result<Tensor<F>, TensorError> {
        let [r, c] = two_dims("transpose", self)?;
        let data = self.0.data.borrow();
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = data[i * c + j];
            }
        }
        drop(data);
        let p = self.clone();
        Ok(Tensor::result(
            vec![c, r],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if p.0.requires_grad {
                    p.with_grad_mut(|buf| {
                        for i in 0..r {
                            for j in 0..c {
                                buf[i * c + j] += g[j * r + i];
                            }
                        }
                    });
                }
            }),
        ))
    }

    /// Matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
        let [m, k] = two_dims("matmul", self)?;
        let [k2, n] = two_dims("matmul", other)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: Shape(self.shape().to_vec()),
                rhs: Shape(other.shape().to_vec()),
            });
        }
        let mut out = vec![F::zero(); m * n];
        {
            let a = self.0.data.borrow();
            let b = other.0.data.borrow();
            gemm_rowmajor(m, k, n, &a, k as isize, 1, &b, n as isize, 1, &mut out, false);
        }
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::result(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                // dA = dC . B^T ; dB = A^T . dC
                if pa.0.requires_grad {
                    let b = pb.0.data.borrow();
                    pa.with_grad_mut(|buf| {
                        gemm_rowmajor(m, n, k, g, n as isize, 1, &b, 1, n as isize, buf, true);
                    });
                }
                if pb.0.requires_grad {
                    let a = pa.0.data.borrow();
                    pb.with_grad_mut(|buf| {
                        gemm_rowmajor(k, m, n, &a, 1, k as isize, g, n as isize, 1, buf, true);
                    });
                }
            }),
        ))
    }

    /// Matrix product against a transposed right operand:
    /// `[m,k] x [n,k]^T -> [m,n]`. Used for attention scores and the tied
    /// output projection, where materializing the transpose would copy.
    pub fn matmul_t(&self, other: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
        let [m, k] = two_dims("matmul_t", self)?;
        let [n, k2] = two_dims("matmul_t", other)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_t",
                lhs: Shape(self.shape().to_vec()),
                rhs: Shape(other.shape().to_vec()),
            });
        }
        let mut out = vec![F::zero(); m * n];
        {
            let a = self.0.data.borrow();
            let b = other.0.data.borrow();
            gemm_rowmajor(m, k, n, &a, k as isize, 1, &b, 1, k as isize, &mut out, false);
        }
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::result(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                // C = A.B^T => dA = dC.B ; dB = dC^T.A
                if pa.0.requires_grad {
                    let b = pb.0.data.borrow();
                    pa.with_grad_mut(|buf| {
                        gemm_rowmajor(m, n, k, g, n as isize, 1, &b, k as isize, 1, buf, true);
                    });
                }
                if pb.0.requires_grad {
                    let a = pa.0.data.borrow();
                    pb.with_grad_mut(|buf| {
                        gemm_rowmajor(n, m, k, g, 1, n as isize, &a, k as isize, 1, buf, true);
                    });
                }
            }),
        ))
    }

    /// Adds a length-`C` bias row to every row of a `[R, C]` matrix.
    pub fn add_row_broadcast(&self, bias: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
        let [r, c] = two_dims("add_row_broadcast", self)?;
        if bias.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_broadcast",
                lhs: Shape(self.shape().to_vec()),
                rhs: Shape(bias.shape().to_vec()),
            });
        }
        let out: Vec<F> = {
            let a = self.0.data.borrow();
            let b = bias.0.data.borrow();
            a.chunks(c).flat_map(|row| row.iter().zip(b.iter()).map(|(x, y)| *x + *y).collect::<Vec<_>>()).collect()
        };
        let (pa, pb) = (self.clone(), bias.clone());
        Ok(Tensor::result(
            vec![r, c],
            out,
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                if pa.0.requires_grad {
                    pa.add_grad(g);
                }
                if pb.0.requires_grad {
                    pb.with_grad_mut(|buf| {
                        for row in g.chunks(c) {
                            for (slot, gv) in buf.iter_mut().zip(row.iter()) {
                                *slot += *gv;
                            }
                        }
                    });
                }
            }),
        ))
    }

    /// Column slice of a `[R, C]` matrix: `[R, hi-lo]`.
    pub fn slice_cols(&self, lo: usize, hi: usize) -> Result<Tensor<F>, TensorError> {
        let [r, c] = two_dims("slice_cols", self)?;
        if lo >= hi || hi > c {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_cols",
                index: hi,
                bound: c,
            });
        }
        let w = hi - lo;
        let data = self.0.data.borrow();
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&data[i * c + lo..i * c + hi]);
        }
        drop(data);
        let p = self.clone();
        Ok(Tensor::result(
            vec![r, w],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                if p.0.requires_grad {
                    p.with_grad_mut(|buf| {
                        for i in 0..r {
                            for j in 0..w {
                                buf[i * c + lo + j] += g[i * w + j];
                            }
                        }
                    });
                }
            }),
        ))
    }

    /// Horizontal concatenation of equal-height matrices.
    pub fn concat_cols(parts: &[Tensor<F>]) -> Result<Tensor<F>, TensorError> {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let [r, _] = two_dims("concat_cols", &parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let [pr, pc] = two_dims("concat_cols", p)?;
            if pr != r {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: Shape(parts[0].shape().to_vec()),
                    rhs: Shape(p.shape().to_vec()),
                });
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (p, w) in parts.iter().zip(widths.iter()) {
                let data = p.0.data.borrow();
                out.extend_from_slice(&data[i * w..(i + 1) * w]);
            }
        }
        let owned: Vec<Tensor<F>> = parts.to_vec();
        let widths_bw = widths.clone();
        Ok(Tensor::result(
            vec![r, total],
            out,
            owned.clone(),
            Box::new(move |g| {
                let mut offset = 0;
                for (p, w) in owned.iter().zip(widths_bw.iter()) {
                    if p.0.requires_grad {
                        p.with_grad_mut(|buf| {
                            for i in 0..r {
                                for j in 0..*w {
                                    buf[i * w + j] += g[i * total + offset + j];
                                }
                            }
                        });
                    }
                    offset += w;
                }
            }),
        ))
    }
}

pub(crate) fn two_dims<F: Scalar>(op: &'static str, t: &Tensor<F>) -> Result<[usize; 2], TensorError> {
    match t.shape() {
        [r, c] => Ok([*r, *c]),
        _ => Err(TensorError::RankMismatch {
            op,
            expected: 2,
            shape: Shape(t.shape().to_vec()),
        }),
    }
}

pub(crate) fn three_dims<F: Scalar>(op: &'static str, t: &Tensor<F>) -> Result<[usize; 3], TensorError> {
    match t.shape() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(TensorError::RankMismatch {
            op,
            expected: 3,
            shape: Shape(t.shape().to_vec()),
        }),
    }
}

/// gemm wrapper writing into a row-major `[m, n]` slice; `accumulate` selects
/// beta = 1 (gradient accumulation) vs beta = 0 (fresh output).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_rowmajor<F: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    rsa: isize,
    csa: isize,
    b: &[F],
    rsb: isize,
    csb: isize,
    c: &mut [F],
    accumulate: bool,
) {
    debug_assert!(c.len() == m * n);
    let beta = if accumulate { F::one() } else { F::zero() };
    unsafe {
        F::gemm(
            m,
            k,
            n,
            F::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type T = Tensor<f32>;

    fn t2(rows: usize, cols: usize, v: &[f32]) -> T {
        T::from_vec(vec![rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn from_vec_rejects_length_mismatch() {
        let err = T::from_vec(vec![2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::DataLength { expected: 6, got: 5, .. }));
    }

    #[test]
    fn matmul_identity() {
        let a = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let eye = t2(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let c = a.matmul(&eye).unwrap();
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_selector_row() {
        let a = t2(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = t2(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.to_vec(), vec![5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        // Independent naive oracle over seeded random matrices.
        let mut rng = crate::rng::Rng::new(99);
        for _ in 0..10 {
            let a_data: Vec<f32> = (0..12).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
            let b_data: Vec<f32> = (0..8).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
            let a = t2(3, 4, &a_data);
            let b = t2(4, 2, &b_data);
            let c = a.matmul(&b).unwrap();
            let mut expect = vec![0.0f32; 6];
            for i in 0..3 {
                for j in 0..2 {
                    let mut s = 0.0f32;
                    for p in 0..4 {
                        s += a_data[i * 4 + p] * b_data[p * 2 + j];
                    }
                    expect[i * 2 + j] = s;
                }
            }
            for (got, want) in c.to_vec().iter().zip(expect.iter()) {
                assert!((got - want).abs() < 1e-6, "got {got}, want {want}");
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = t2(2, 3, &[0.0; 6]);
        let b = t2(2, 2, &[0.0; 4]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn matmul_t_equals_explicit_transpose() {
        let a = t2(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t2(4, 3, &[0.5, -1.0, 2.0, 1.5, 0.0, -0.5, 1.0, 1.0, 1.0, -2.0, 0.25, 3.0]);
        let via_t = a.matmul_t(&b).unwrap();
        let explicit = a.matmul(&b.transpose().unwrap()).unwrap();
        for (x, y) in via_t.to_vec().iter().zip(explicit.to_vec().iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_sum_gives_ones() {
        let x = T::from_vec(vec![3], vec![1.0, -2.0, 5.0]).unwrap().requires_grad();
        let loss = x.sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_sum_of_squares_gives_2x() {
        let x = T::from_vec(vec![3], vec![1.0, -2.0, 5.0]).unwrap().requires_grad();
        let loss = x.mul(&x).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 10.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let x = T::from_vec(vec![2], vec![1.0, 2.0]).unwrap().requires_grad();
        let y = x.scale(2.0);
        assert!(matches!(y.backward(), Err(TensorError::NotScalar { .. })));
    }

    #[test]
    fn gradient_accumulates_across_backward_calls() {
        let x = T::from_vec(vec![2], vec![3.0, 4.0]).unwrap().requires_grad();
        let loss = x.sum_all();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn no_grad_suppresses_graph() {
        let x = T::from_vec(vec![2], vec![1.0, 2.0]).unwrap().requires_grad();
        let y = no_grad(|| x.scale(3.0));
        assert!(!y.requires_grad_flag());
    }

    #[test]
    fn matmul_backward_matches_manual() {
        // loss = sum(A.B) => dA = ones.B^T, dB = A^T.ones
        let a = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]).requires_grad();
        let b = t2(2, 2, &[5.0, 6.0, 7.0, 8.0]).requires_grad();
        let loss = a.matmul(&b).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![11.0, 15.0, 11.0, 15.0]);
        assert_eq!(b.grad().unwrap(), vec![4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn slice_concat_roundtrip_and_grads() {
        let x = t2(2, 4, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).requires_grad();
        let left = x.slice_cols(0, 2).unwrap();
        let right = x.slice_cols(2, 4).unwrap();
        let back = Tensor::concat_cols(&[left, right]).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
        let loss = back.sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 8]);
    }

    #[test]
    fn mean_last_axis_pools_rows() {
        let x = T::from_vec(vec![2, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0])
            .unwrap();
        let m = x.mean_last_axis().unwrap();
        assert_eq!(m.shape(), &[2, 2]);
        assert_eq!(m.to_vec(), vec![2.0, 5.0, 8.0, 11.0]);
    }
}
