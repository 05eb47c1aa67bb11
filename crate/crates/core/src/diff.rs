//! Scalar reverse-mode differentiation.
//!
//! Every physical model in the crate is written once, generically over
//! [`Real`]. Evaluating with `f64` gives plain numbers; evaluating with
//! [`Var`] records each operation on a [`Tape`] so that [`Tape::backward`]
//! can propagate adjoints from a scalar root back to every leaf.
//!
//! ```
//! use wdmtwin_core::diff::{Real, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.var(2.0);
//! let y = tape.var(3.0);
//! let z = x * y + x.ln();
//! let g = tape.backward(z).unwrap();
//! assert_eq!(g.wrt(x), 3.0 + 0.5);
//! assert_eq!(g.wrt(y), 2.0);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

const LN_10: f64 = std::f64::consts::LN_10;

/// Operation tag of a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    AddConst,
    MulConst,
    Exp,
    Ln,
    Pow10,
    Log10,
    Tanh,
    Sigmoid,
    Asinh,
    MaxConst,
    Dot,
    DotConst,
    Sum,
}

impl Op {
    pub fn tag(self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::AddConst => "add_const",
            Op::MulConst => "mul_const",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Pow10 => "pow10",
            Op::Log10 => "log10",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Asinh => "asinh",
            Op::MaxConst => "max_const",
            Op::Dot => "dot",
            Op::DotConst => "dot_const",
            Op::Sum => "sum",
        }
    }
}

/// Scalar type the physics is generic over.
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant living in the same context as `self`.
    fn lift(self, v: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    /// `10^self`
    fn pow10(self) -> Self;
    fn log10(self) -> Self;
    fn tanh(self) -> Self;
    fn sigmoid(self) -> Self;
    fn asinh(self) -> Self;
    /// `max(self, c)`; the derivative is taken as 1 on the tie.
    fn max_c(self, c: f64) -> Self;
    fn dot(a: &[Self], b: &[Self]) -> Self;
    fn dot_c(a: &[Self], w: &[f64]) -> Self;
    /// Sum of a non-empty slice.
    fn sum(a: &[Self]) -> Self;

    fn recip(self) -> Self {
        self.lift(1.0) / self
    }

    /// dB to linear ratio.
    fn db_to_lin(self) -> Self {
        (self * 0.1).pow10()
    }

    /// Linear ratio to dB.
    fn lin_to_db(self) -> Self {
        self.log10() * 10.0
    }
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, v: f64) -> Self {
        v
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn pow10(self) -> Self {
        10f64.powf(self)
    }
    fn log10(self) -> Self {
        f64::log10(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
    fn asinh(self) -> Self {
        f64::asinh(self)
    }
    fn max_c(self, c: f64) -> Self {
        if self >= c {
            self
        } else {
            c
        }
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        assert_eq!(a.len(), b.len(), "dot: length mismatch");
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
    fn dot_c(a: &[Self], w: &[f64]) -> Self {
        Self::dot(a, w)
    }
    fn sum(a: &[Self]) -> Self {
        assert!(!a.is_empty(), "sum of empty slice");
        a.iter().sum()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug)]
struct NodeRec {
    value: f64,
    op: Op,
    start: u32,
    end: u32,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<NodeRec>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    violation: Option<(Op, f64)>,
}

/// Append-only record of a forward computation.
///
/// Single-threaded by construction (`!Sync`); use one tape per thread.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

/// Read-only view of a recorded node.
#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub value: f64,
    pub op: Op,
    pub parents: Vec<usize>,
    pub local_grads: Vec<f64>,
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.idx, self.val)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        let tape = Self::default();
        {
            let mut inner = tape.inner.borrow_mut();
            inner.nodes.reserve(nodes);
            inner.parents.reserve(2 * nodes);
            inner.partials.reserve(2 * nodes);
        }
        tape
    }

    /// New independent variable.
    pub fn var(&self, v: f64) -> Var<'_> {
        self.push(Op::Leaf, v, &[])
    }

    pub fn vars(&self, vs: &[f64]) -> Vec<Var<'_>> {
        vs.iter().map(|&v| self.var(v)).collect()
    }

    pub fn constant(&self, v: f64) -> Var<'_> {
        self.push(Op::Const, v, &[])
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, idx: usize) -> Node {
        let inner = self.inner.borrow();
        let rec = inner.nodes[idx];
        let range = rec.start as usize..rec.end as usize;
        Node {
            value: rec.value,
            op: rec.op,
            parents: inner.parents[range.clone()].iter().map(|&p| p as usize).collect(),
            local_grads: inner.partials[range].to_vec(),
        }
    }

    /// First domain violation recorded during the forward pass.
    pub fn check(&self) -> Result<()> {
        match self.inner.borrow().violation {
            Some((op, value)) => Err(Error::Domain { op: op.tag(), value }),
            None => Ok(()),
        }
    }

    /// Adjoints of `root` with respect to every node recorded before it.
    ///
    /// Each call starts from fresh zeroed adjoints, so repeated calls
    /// return identical results.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        assert!(
            std::ptr::eq(root.tape, self),
            "backward: root belongs to a different tape"
        );
        self.check()?;
        let inner = self.inner.borrow();
        let n = root.idx as usize + 1;
        let mut adj = vec![0.0; n];
        adj[n - 1] = 1.0;
        for i in (0..n).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let rec = inner.nodes[i];
            for e in rec.start as usize..rec.end as usize {
                adj[inner.parents[e] as usize] += a * inner.partials[e];
            }
        }
        Ok(Gradients { adj })
    }

    fn push(&self, op: Op, value: f64, edges: &[(u32, f64)]) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let start = inner.parents.len() as u32;
        for &(p, g) in edges {
            inner.parents.push(p);
            inner.partials.push(g);
        }
        let end = inner.parents.len() as u32;
        let idx = inner.nodes.len() as u32;
        inner.nodes.push(NodeRec {
            value,
            op,
            start,
            end,
        });
        Var {
            tape: self,
            idx,
            val: value,
        }
    }

    fn flag(&self, op: Op, operand: f64) {
        let mut inner = self.inner.borrow_mut();
        if inner.violation.is_none() {
            inner.violation = Some((op, operand));
        }
    }

    fn push_n<'t>(&'t self, op: Op, value: f64, parents: &[Var<'t>], grads: impl Iterator<Item = f64>) -> Var<'t> {
        let mut inner = self.inner.borrow_mut();
        let start = inner.parents.len() as u32;
        for (p, g) in parents.iter().zip(grads) {
            inner.parents.push(p.idx);
            inner.partials.push(g);
        }
        let end = inner.parents.len() as u32;
        let idx = inner.nodes.len() as u32;
        inner.nodes.push(NodeRec {
            value,
            op,
            start,
            end,
        });
        Var {
            tape: self,
            idx,
            val: value,
        }
    }
}

/// Adjoint vector produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    adj: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adj.get(v.idx as usize).copied().unwrap_or(0.0)
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|&v| self.wrt(v)).collect()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn index(&self) -> usize {
        self.idx as usize
    }

    fn unary(self, op: Op, value: f64, grad: f64) -> Self {
        self.tape.push(op, value, &[(self.idx, grad)])
    }

    fn same_tape(self, other: Self) {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "operands on different tapes");
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.same_tape(rhs);
        self.tape
            .push(Op::Add, self.val + rhs.val, &[(self.idx, 1.0), (rhs.idx, 1.0)])
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.same_tape(rhs);
        self.tape
            .push(Op::Sub, self.val - rhs.val, &[(self.idx, 1.0), (rhs.idx, -1.0)])
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.same_tape(rhs);
        self.tape.push(
            Op::Mul,
            self.val * rhs.val,
            &[(self.idx, rhs.val), (rhs.idx, self.val)],
        )
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        self.same_tape(rhs);
        if rhs.val == 0.0 {
            self.tape.flag(Op::Div, rhs.val);
        }
        let q = self.val / rhs.val;
        self.tape.push(
            Op::Div,
            q,
            &[(self.idx, 1.0 / rhs.val), (rhs.idx, -q / rhs.val)],
        )
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(Op::Neg, -self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Self {
        self.unary(Op::AddConst, self.val + c, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Self {
        self.unary(Op::AddConst, self.val - c, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Self {
        self.unary(Op::MulConst, self.val * c, c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Self {
        if c == 0.0 {
            self.tape.flag(Op::Div, c);
        }
        self.unary(Op::MulConst, self.val / c, 1.0 / c)
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        self.val
    }

    fn lift(self, v: f64) -> Self {
        self.tape.constant(v)
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(Op::Exp, e, e)
    }

    fn ln(self) -> Self {
        if self.val <= 0.0 {
            self.tape.flag(Op::Ln, self.val);
        }
        self.unary(Op::Ln, self.val.ln(), 1.0 / self.val)
    }

    fn pow10(self) -> Self {
        let p = 10f64.powf(self.val);
        self.unary(Op::Pow10, p, p * LN_10)
    }

    fn log10(self) -> Self {
        if self.val <= 0.0 {
            self.tape.flag(Op::Log10, self.val);
        }
        self.unary(Op::Log10, self.val.log10(), 1.0 / (self.val * LN_10))
    }

    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.unary(Op::Tanh, t, 1.0 - t * t)
    }

    fn sigmoid(self) -> Self {
        let s = sigmoid(self.val);
        self.unary(Op::Sigmoid, s, s * (1.0 - s))
    }

    fn asinh(self) -> Self {
        let g = 1.0 / (1.0 + self.val * self.val).sqrt();
        self.unary(Op::Asinh, self.val.asinh(), g)
    }

    fn max_c(self, c: f64) -> Self {
        if self.val >= c {
            self.unary(Op::MaxConst, self.val, 1.0)
        } else {
            self.unary(Op::MaxConst, c, 0.0)
        }
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        assert_eq!(a.len(), b.len(), "dot: length mismatch");
        assert!(!a.is_empty(), "dot of empty slices");
        let tape = a[0].tape;
        let value = a.iter().zip(b).map(|(x, y)| x.val * y.val).sum();
        let mut edges = Vec::with_capacity(2 * a.len());
        for (x, y) in a.iter().zip(b) {
            edges.push((x.idx, y.val));
            edges.push((y.idx, x.val));
        }
        tape.push(Op::Dot, value, &edges)
    }

    fn dot_c(a: &[Self], w: &[f64]) -> Self {
        assert_eq!(a.len(), w.len(), "dot_c: length mismatch");
        assert!(!a.is_empty(), "dot of empty slices");
        let value = a.iter().zip(w).map(|(x, c)| x.val * c).sum();
        a[0].tape.push_n(Op::DotConst, value, a, w.iter().copied())
    }

    fn sum(a: &[Self]) -> Self {
        assert!(!a.is_empty(), "sum of empty slice");
        let value = a.iter().map(|x| x.val).sum();
        a[0].tape.push_n(Op::Sum, value, a, std::iter::repeat(1.0))
    }
}

/// Outcome of [`gradcheck`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub pass: bool,
    pub worst_index: usize,
    /// `|g - ĝ| / max(1, |g|, |ĝ|)` at `worst_index`; infinite when a
    /// perturbed evaluation left the function's domain.
    pub worst_error: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Central-difference step used by [`gradcheck`].
pub fn fd_step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// Compare reverse-mode gradients of `f` at `x` against central
/// differences. A domain error at `x` itself is returned as `Err`; one
/// that only occurs at a perturbed point makes the check fail.
pub fn gradcheck<F>(f: F, x: &[f64], tol: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let xs = tape.vars(x);
    let y = f(&xs);
    let analytic = tape.backward(y)?.wrt_all(&xs);

    let eval = |pt: &[f64]| -> Option<f64> {
        let tape = Tape::new();
        let xs = tape.vars(pt);
        let y = f(&xs).value();
        tape.check().ok().map(|_| y)
    };

    let mut numeric = Vec::with_capacity(x.len());
    let mut worst_index = 0;
    let mut worst_error = 0.0f64;
    let mut pt = x.to_vec();
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        pt[i] = x[i] + h;
        let fp = eval(&pt);
        pt[i] = x[i] - h;
        let fm = eval(&pt);
        pt[i] = x[i];
        let (num, err) = match (fp, fm) {
            (Some(a), Some(b)) => {
                let num = (a - b) / (2.0 * h);
                let g = analytic[i];
                let err = (g - num).abs() / 1f64.max(g.abs()).max(num.abs());
                (num, if err.is_nan() { f64::INFINITY } else { err })
            }
            _ => (f64::NAN, f64::INFINITY),
        };
        numeric.push(num);
        if i == 0 || err > worst_error {
            worst_error = err;
            worst_index = i;
        }
    }
    Ok(GradCheck {
        pass: worst_error < tol,
        worst_index,
        worst_error,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let y = tape.var(3.0);
        let g = tape.backward(x * y).unwrap();
        assert_eq!((g.wrt(x), g.wrt(y)), (3.0, 2.0));
    }

    #[test]
    fn ln_and_asinh_at_reference_points() {
        let tape = Tape::new();
        let x = tape.var(1.0);
        assert_eq!(tape.backward(x.ln()).unwrap().wrt(x), 1.0);
        let z = tape.var(0.0);
        assert_eq!(tape.backward(z.asinh()).unwrap().wrt(z), 1.0);
    }

    #[test]
    fn linear_sum_and_square() {
        let tape = Tape::new();
        let leaves = tape.vars(&[1.0, -2.0, 3.5, 0.0, 7.0]);
        let root = Real::sum(&leaves);
        let g = tape.backward(root).unwrap();
        assert!(leaves.iter().all(|&l| g.wrt(l) == 1.0));

        let x = tape.var(3.0);
        assert_eq!(tape.backward(x * x).unwrap().wrt(x), 6.0);
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        let tape = Tape::new();
        let x = tape.var(1.5);
        let s = x.exp();
        let y = s * s + s;
        let g = tape.backward(y).unwrap().wrt(x);
        let e = 1.5f64.exp();
        assert!((g - (2.0 * e * e + e)).abs() < 1e-12);
    }

    #[test]
    fn backward_is_idempotent() {
        let tape = Tape::new();
        let x = tape.var(0.7);
        let y = (x * x).tanh() + x.sigmoid();
        let a = tape.backward(y).unwrap().wrt(x);
        let b = tape.backward(y).unwrap().wrt(x);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn domain_violation_carries_op_tag() {
        let tape = Tape::new();
        let x = tape.var(-1.0);
        let y = x.ln();
        match tape.backward(y) {
            Err(Error::Domain { op, .. }) => assert_eq!(op, "ln"),
            other => panic!("expected domain error, got {other:?}"),
        }
        let tape = Tape::new();
        let a = tape.var(1.0);
        let b = tape.var(0.0);
        assert!(matches!(tape.backward(a / b), Err(Error::Domain { op: "div", .. })));
    }

    #[test]
    fn node_view_exposes_parents() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let y = tape.var(5.0);
        let z = x * y;
        let node = tape.node(z.index());
        assert_eq!(node.op, Op::Mul);
        assert_eq!(node.parents, vec![0, 1]);
        assert_eq!(node.local_grads, vec![5.0, 2.0]);
        assert_eq!(node.value, 10.0);
    }

    #[test]
    fn gradcheck_passes_on_product() {
        let r = gradcheck(|x| x[0] * x[1], &[2.0, 3.0], 1e-6).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn gradcheck_reports_ill_conditioned_log() {
        let r = gradcheck(|x| x[0].ln(), &[1e-12], 1e-6).unwrap();
        assert!(!r.pass);
        assert_eq!(r.worst_index, 0);
    }

    #[test]
    fn gradcheck_propagates_domain_error_at_point() {
        assert!(gradcheck(|x| x[0].ln(), &[-1.0], 1e-6).is_err());
    }

    #[test]
    fn max_with_constant() {
        let tape = Tape::new();
        let x = tape.var(-2.0);
        let y = x.max_c(0.0);
        assert_eq!(y.value(), 0.0);
        assert_eq!(tape.backward(y).unwrap().wrt(x), 0.0);
        let x = tape.var(2.0);
        assert_eq!(tape.backward(x.max_c(0.0)).unwrap().wrt(x), 1.0);
    }

    #[test]
    fn fused_dot_matches_expanded() {
        let tape = Tape::new();
        let a = tape.vars(&[1.0, 2.0, -3.0]);
        let b = tape.vars(&[0.5, -1.0, 4.0]);
        let d = Var::dot(&a, &b);
        assert_eq!(d.value(), 0.5 - 2.0 - 12.0);
        let g = tape.backward(d).unwrap();
        assert_eq!(g.wrt_all(&a), vec![0.5, -1.0, 4.0]);
        assert_eq!(g.wrt_all(&b), vec![1.0, 2.0, -3.0]);
        let w = [2.0, 0.0, 1.0];
        let e = Var::dot_c(&a, &w);
        assert_eq!(tape.backward(e).unwrap().wrt_all(&a), w.to_vec());
    }
}
