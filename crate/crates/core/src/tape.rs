//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied to its [`Var`]s as a node with
//! references to its parents and the local partial derivatives. A backward
//! sweep in reverse recording order (which is a topological order) then yields
//! the adjoint of every node with respect to a chosen scalar root.
//!
//! Numerical code in this crate is written against the [`Scalar`] trait so the
//! same routine runs on plain `f64` (fast evaluation) and on `Var` (recorded
//! for differentiation) with identical floating point behaviour.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Inputs to `exp` are clamped to this magnitude.
pub const EXP_CLAMP: f64 = 50.0;

const CONST: u32 = u32::MAX;

/// Arithmetic shared by `f64` and recorded tape variables.
pub trait Scalar:
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
    fn lift(self, c: f64) -> Self;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn powf(self, p: f64) -> Self;
    /// Absolute value; the derivative at zero is taken as zero.
    fn abs(self) -> Self;

    /// Inner product. Panics on length mismatch; `a` must be nonempty.
    fn dot(a: &[Self], b: &[Self]) -> Self {
        assert_eq!(a.len(), b.len(), "dot: length mismatch");
        let mut acc = a[0] * b[0];
        for (x, y) in a.iter().zip(b).skip(1) {
            acc = acc + *x * *y;
        }
        acc
    }

    /// Sum of a nonempty slice.
    fn sum(xs: &[Self]) -> Self {
        let mut acc = xs[0];
        for x in &xs[1..] {
            acc = acc + *x;
        }
        acc
    }

    /// `Σ coeffs[i] * xs[i]` for constant coefficients; `xs` nonempty.
    fn lincomb(coeffs: &[f64], xs: &[Self]) -> Self {
        assert_eq!(coeffs.len(), xs.len(), "lincomb: length mismatch");
        let mut acc = xs[0] * coeffs[0];
        for (c, x) in coeffs.iter().zip(xs).skip(1) {
            acc = acc + *x * *c;
        }
        acc
    }

    fn square(self) -> Self {
        self * self
    }

    /// Euclidean norm of a nonempty slice.
    fn norm(xs: &[Self]) -> Self {
        Self::dot(xs, xs).sqrt()
    }
}

fn clamp_exp_arg(x: f64) -> (f64, bool) {
    if x > EXP_CLAMP {
        (EXP_CLAMP, true)
    } else if x < -EXP_CLAMP {
        (-EXP_CLAMP, true)
    } else {
        (x, false)
    }
}

impl Scalar for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn lift(self, c: f64) -> f64 {
        c
    }
    #[inline]
    fn tanh(self) -> f64 {
        f64::tanh(self)
    }
    #[inline]
    fn exp(self) -> f64 {
        f64::exp(clamp_exp_arg(self).0)
    }
    #[inline]
    fn ln(self) -> f64 {
        f64::ln(self)
    }
    #[inline]
    fn sin(self) -> f64 {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> f64 {
        f64::cos(self)
    }
    #[inline]
    fn sqrt(self) -> f64 {
        f64::sqrt(self)
    }
    #[inline]
    fn powf(self, p: f64) -> f64 {
        f64::powf(self, p)
    }
    #[inline]
    fn abs(self) -> f64 {
        f64::abs(self)
    }
}

/// Where the first numerical fault on a tape happened.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Fault {
    NonFinite { primitive: &'static str, node: usize },
    DivisionByZero { node: usize },
}

/// Recording of a scalar computation graph.
///
/// Node `i` owns the parent/partial entries in `offsets[i]..offsets[i + 1]`.
/// Leaves (inputs) own an empty range.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Graph>,
    fault: Cell<Option<Fault>>,
    saturations: Cell<u64>,
    /// Adjoint buffer handed back by [`Tape::recycle`].
    spare: RefCell<Vec<f64>>,
}

#[derive(Default)]
struct Graph {
    offsets: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
}

impl Graph {
    fn len(&self) -> usize {
        self.offsets.len()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .field("saturations", &self.saturations.get())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        let tape = Self::default();
        {
            let mut g = tape.inner.borrow_mut();
            g.offsets.reserve(nodes);
            g.parents.reserve(2 * nodes);
            g.partials.reserve(2 * nodes);
        }
        tape
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of `exp` evaluations whose argument had to be clamped.
    pub fn saturation_count(&self) -> u64 {
        self.saturations.get()
    }

    /// Drops all recorded nodes, keeping the allocations.
    pub fn clear(&mut self) {
        let g = self.inner.get_mut();
        g.offsets.clear();
        g.parents.clear();
        g.partials.clear();
        self.fault.set(None);
        self.saturations.set(0);
    }

    /// Registers an independent input.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(value, "input", std::iter::empty());
        Var {
            tape: self,
            idx,
            val: value,
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// A constant that is not recorded.
    pub fn constant(&self, value: f64) -> Var<'_> {
        Var {
            tape: self,
            idx: CONST,
            val: value,
        }
    }

    fn push(
        &self,
        value: f64,
        primitive: &'static str,
        edges: impl Iterator<Item = (u32, f64)>,
    ) -> u32 {
        let mut g = self.inner.borrow_mut();
        let node = g.len();
        let start = g.parents.len() as u32;
        g.offsets.push(start);
        for (p, d) in edges {
            if p != CONST {
                g.parents.push(p);
                g.partials.push(d);
            }
        }
        if !value.is_finite() && self.fault.get().is_none() {
            self.fault.set(Some(Fault::NonFinite { primitive, node }));
        }
        node as u32
    }

    fn note_div_by_zero(&self) {
        if self.fault.get().is_none() {
            self.fault.set(Some(Fault::DivisionByZero { node: self.len() }));
        }
    }

    /// Fails if any recorded primitive produced a non-finite value or divided by zero.
    pub fn check(&self) -> Result<()> {
        match self.fault.get() {
            None => Ok(()),
            Some(Fault::NonFinite { primitive, node }) => Err(Error::NonFinite { primitive, node }),
            Some(Fault::DivisionByZero { node }) => Err(Error::DivisionByZero { node }),
        }
    }

    /// Keeps the buffer of `adj` for the next [`Tape::gradient`].
    pub fn recycle(&self, adj: Adjoints) {
        *self.spare.borrow_mut() = adj.0;
    }

    /// Reverse sweep from `root` with unit seed.
    pub fn gradient(&self, root: Var<'_>) -> Result<Adjoints> {
        debug_assert!(std::ptr::eq(root.tape, self), "root recorded on another tape");
        self.check()?;
        let g = self.inner.borrow();
        let n = g.len();
        let mut adj = std::mem::take(&mut *self.spare.borrow_mut());
        adj.clear();
        adj.resize(n, 0.0);
        if root.idx == CONST {
            return Ok(Adjoints(adj));
        }
        adj[root.idx as usize] = 1.0;
        for i in (0..=root.idx as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let start = g.offsets[i] as usize;
            let end = g.offsets.get(i + 1).map_or(g.parents.len(), |&e| e as usize);
            for k in start..end {
                adj[g.parents[k] as usize] += a * g.partials[k];
            }
        }
        if let Some(i) = adj.iter().position(|a| !a.is_finite()) {
            return Err(Error::NonFinite {
                primitive: "backward",
                node: i,
            });
        }
        Ok(Adjoints(adj))
    }
}

/// Result of a backward sweep.
#[derive(Debug, Clone)]
pub struct Adjoints(Vec<f64>);

impl Adjoints {
    /// Partial derivative of the root with respect to `v` (zero for constants).
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        if v.idx == CONST {
            0.0
        } else {
            self.0[v.idx as usize]
        }
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|&v| self.wrt(v)).collect()
    }
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
        if self.idx == CONST {
            write!(f, "Const({})", self.val)
        } else {
            write!(f, "Var#{}({})", self.idx, self.val)
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn is_constant(&self) -> bool {
        self.idx == CONST
    }

    /// Same value, cut off from the graph.
    pub fn detach(self) -> Var<'t> {
        self.tape.constant(self.val)
    }

    fn unary(self, primitive: &'static str, val: f64, d: f64) -> Var<'t> {
        if self.idx == CONST {
            return Var { idx: CONST, val, ..self };
        }
        let idx = self
            .tape
            .push(val, primitive, std::iter::once((self.idx, d)));
        Var { idx, val, ..self }
    }

    fn binary(self, rhs: Var<'t>, primitive: &'static str, val: f64, da: f64, db: f64) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, rhs.tape), "mixing tapes");
        if self.idx == CONST && rhs.idx == CONST {
            return Var { idx: CONST, val, ..self };
        }
        let idx = self.tape.push(
            val,
            primitive,
            [(self.idx, da), (rhs.idx, db)].into_iter(),
        );
        Var { idx, val, ..self }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, "add", self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, "sub", self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, "mul", self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        if rhs.val == 0.0 {
            self.tape.note_div_by_zero();
        }
        let inv = 1.0 / rhs.val;
        let val = self.val / rhs.val;
        self.binary(rhs, "div", val, inv, -val * inv)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary("neg", -self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.unary("add", self.val + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.unary("sub", self.val - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.unary("mul", self.val * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        if rhs == 0.0 {
            self.tape.note_div_by_zero();
        }
        self.unary("div", self.val / rhs, 1.0 / rhs)
    }
}

impl<'t> Scalar for Var<'t> {
    #[inline]
    fn value(self) -> f64 {
        self.val
    }

    fn lift(self, c: f64) -> Var<'t> {
        self.tape.constant(c)
    }

    fn tanh(self) -> Var<'t> {
        let t = self.val.tanh();
        self.unary("tanh", t, 1.0 - t * t)
    }

    fn exp(self) -> Var<'t> {
        let (arg, saturated) = clamp_exp_arg(self.val);
        let e = arg.exp();
        if saturated {
            self.tape.saturations.set(self.tape.saturations.get() + 1);
            self.unary("exp", e, 0.0)
        } else {
            self.unary("exp", e, e)
        }
    }

    fn ln(self) -> Var<'t> {
        self.unary("ln", self.val.ln(), 1.0 / self.val)
    }

    fn sin(self) -> Var<'t> {
        self.unary("sin", self.val.sin(), self.val.cos())
    }

    fn cos(self) -> Var<'t> {
        self.unary("cos", self.val.cos(), -self.val.sin())
    }

    fn sqrt(self) -> Var<'t> {
        let s = self.val.sqrt();
        self.unary("sqrt", s, 0.5 / s)
    }

    fn powf(self, p: f64) -> Var<'t> {
        let v = self.val.powf(p);
        self.unary("pow", v, p * self.val.powf(p - 1.0))
    }

    fn abs(self) -> Var<'t> {
        let d = if self.val > 0.0 {
            1.0
        } else if self.val < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary("abs", self.val.abs(), d)
    }

    /// Records the whole inner product as one n-ary node.
    fn dot(a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
        assert_eq!(a.len(), b.len(), "dot: length mismatch");
        let tape = a[0].tape;
        let mut val = 0.0;
        for (x, y) in a.iter().zip(b) {
            val += x.val * y.val;
        }
        if a.iter().chain(b).all(|v| v.idx == CONST) {
            return tape.constant(val);
        }
        let edges = a
            .iter()
            .zip(b)
            .flat_map(|(x, y)| [(x.idx, y.val), (y.idx, x.val)]);
        let idx = tape.push(val, "dot", edges);
        Var { tape, idx, val }
    }

    fn lincomb(coeffs: &[f64], xs: &[Var<'t>]) -> Var<'t> {
        assert_eq!(coeffs.len(), xs.len(), "lincomb: length mismatch");
        let tape = xs[0].tape;
        let val = coeffs.iter().zip(xs).fold(0.0, |acc, (c, x)| acc + c * x.val);
        if xs.iter().all(|v| v.idx == CONST) {
            return tape.constant(val);
        }
        let idx = tape.push(val, "lincomb", coeffs.iter().zip(xs).map(|(&c, x)| (x.idx, c)));
        Var { tape, idx, val }
    }

    fn sum(xs: &[Var<'t>]) -> Var<'t> {
        let tape = xs[0].tape;
        let val = xs.iter().fold(0.0, |acc, v| acc + v.val);
        if xs.iter().all(|v| v.idx == CONST) {
            return tape.constant(val);
        }
        let idx = tape.push(val, "sum", xs.iter().map(|v| (v.idx, 1.0)));
        Var { tape, idx, val }
    }
}

/// Gradient of a scalar function of a vector, evaluated at `x`.
pub fn grad<F>(f: F, x: &[f64]) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    value_and_grad(f, x).map(|(_, g)| g)
}

pub fn value_and_grad<F>(f: F, x: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let xs = tape.vars(x);
    let y = f(&xs);
    let adj = tape.gradient(y)?;
    Ok((y.value(), adj.wrt_all(&xs)))
}

/// Loss value and gradient with respect to a flat parameter vector.
///
/// `expected_len` is the parameter count implied by the model configuration.
/// The closure may record arbitrary work on the tape it is handed, including
/// whole integrator runs.
pub fn param_grad<F>(params: &[f64], expected_len: usize, loss: F) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> FnOnce(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    crate::error::check_len("parameter vector", expected_len, params.len())?;
    let mut tape = POOL.with(|p| p.borrow_mut().take()).unwrap_or_default();
    tape.clear();
    let out = (|| {
        let theta = tape.vars(params);
        let l = loss(&tape, &theta)?;
        let adj = tape.gradient(l)?;
        if tape.saturation_count() > 0 {
            log::warn!("exp saturated {} times during loss evaluation", tape.saturation_count());
        }
        let g = adj.wrt_all(&theta);
        tape.recycle(adj);
        Ok((l.value(), g))
    })();
    POOL.with(|p| *p.borrow_mut() = Some(tape));
    out
}

thread_local! {
    static POOL: RefCell<Option<Tape>> = const { RefCell::new(None) };
}
