//! Scalar reverse-mode differentiation.
//!
//! Numeric code that needs gradients is written once against the [`Real`]
//! trait. Evaluating it with `f64` gives plain values; evaluating it with
//! [`Var`] records every elementary operation on a [`Tape`], which can then be
//! swept backwards to obtain exact partial derivatives.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Scalar abstraction shared by plain floats and tape variables.
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
    + AddAssign
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    /// `acos(clamp(x, -1, 1))²`, continuously differentiable through `x = 1`.
    fn acos_sq(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn square(self) -> Self {
        self * self
    }
}

pub(crate) fn acos_sq_value(x: f64) -> f64 {
    let a = x.clamp(-1.0, 1.0).acos();
    a * a
}

/// Derivative of `acos(x)²`. Near `x = 1` the closed form is 0/0, so the
/// Taylor expansion in `u = 1 - x` is used; beyond the clamp the limit holds.
pub(crate) fn acos_sq_deriv(x: f64) -> f64 {
    let u = 1.0 - x;
    if u <= 0.0 {
        return -2.0;
    }
    if u < 1e-6 {
        return -(2.0 + 2.0 * u / 3.0 + 8.0 * u * u / 15.0);
    }
    let x = x.max(-1.0);
    let s = (1.0 - x * x).max(1e-24).sqrt();
    -2.0 * x.acos() / s
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn acos_sq(self) -> Self {
        acos_sq_value(self)
    }
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
    extra_start: u32,
    extra_len: u32,
}

/// Append-only record of operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    extra: RefCell<Vec<(u32, f64)>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
            extra: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        (nodes.len() - 1) as u32
    }

    /// New independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(Node {
            parents: [NONE, NONE],
            partials: [0.0, 0.0],
            extra_start: 0,
            extra_len: 0,
        });
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// Inject a node whose value and partials were computed outside the tape.
    pub fn custom<'t>(&'t self, inputs: &[Var<'t>], value: f64, partials: &[f64]) -> Var<'t> {
        debug_assert_eq!(inputs.len(), partials.len());
        let mut extra = self.extra.borrow_mut();
        let start = extra.len() as u32;
        for (x, &d) in inputs.iter().zip(partials) {
            if x.idx != NONE && d != 0.0 {
                extra.push((x.idx, d));
            }
        }
        let len = extra.len() as u32 - start;
        drop(extra);
        let idx = self.push(Node {
            parents: [NONE, NONE],
            partials: [0.0, 0.0],
            extra_start: start,
            extra_len: len,
        });
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    /// Backward sweep from `output`; returns the adjoint of every node.
    pub fn gradient(&self, output: Var<'_>) -> Gradient {
        let nodes = self.nodes.borrow();
        let extra = self.extra.borrow();
        let mut adj = vec![0.0; nodes.len()];
        if output.idx == NONE {
            return Gradient(adj);
        }
        adj[output.idx as usize] = 1.0;
        for i in (0..=output.idx as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let n = &nodes[i];
            for k in 0..2 {
                if n.parents[k] != NONE {
                    adj[n.parents[k] as usize] += a * n.partials[k];
                }
            }
            let s = n.extra_start as usize;
            for &(p, d) in &extra[s..s + n.extra_len as usize] {
                adj[p as usize] += a * d;
            }
        }
        Gradient(adj)
    }
}

/// Adjoints produced by [`Tape::gradient`].
pub struct Gradient(Vec<f64>);

impl Gradient {
    pub fn wrt(&self, v: &Var<'_>) -> f64 {
        if v.idx == NONE {
            0.0
        } else {
            self.0[v.idx as usize]
        }
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|v| self.wrt(v)).collect()
    }
}

/// Variable recorded on a tape, or a constant when `tape` is `None`.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.val)
    }
}

impl<'t> Var<'t> {
    pub fn constant(val: f64) -> Self {
        Var {
            tape: None,
            idx: NONE,
            val,
        }
    }

    pub fn val(&self) -> f64 {
        self.val
    }

    pub fn tape(&self) -> Option<&'t Tape> {
        self.tape
    }

    fn unary(self, val: f64, d: f64) -> Self {
        match self.tape {
            Some(tape) if self.idx != NONE => {
                let idx = tape.push(Node {
                    parents: [self.idx, NONE],
                    partials: [d, 0.0],
                    extra_start: 0,
                    extra_len: 0,
                });
                Var {
                    tape: Some(tape),
                    idx,
                    val,
                }
            }
            _ => Var::constant(val),
        }
    }

    fn binary(a: Self, b: Self, val: f64, da: f64, db: f64) -> Self {
        match a.tape.or(b.tape) {
            Some(tape) => {
                let idx = tape.push(Node {
                    parents: [a.idx, b.idx],
                    partials: [da, db],
                    extra_start: 0,
                    extra_len: 0,
                });
                Var {
                    tape: Some(tape),
                    idx,
                    val,
                }
            }
            None => Var::constant(val),
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Var::binary(self, o, self.val + o.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Var::binary(self, o, self.val - o.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Var::binary(self, o, self.val * o.val, o.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.val / o.val;
        Var::binary(self, o, q, 1.0 / o.val, -q / o.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, c: f64) -> Self {
        self.unary(self.val + c, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, c: f64) -> Self {
        self.unary(self.val - c, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        self.unary(self.val * c, c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, c: f64) -> Self {
        self.unary(self.val / c, 1.0 / c)
    }
}

impl<'t> AddAssign for Var<'t> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<'t> Real for Var<'t> {
    fn cst(v: f64) -> Self {
        Var::constant(v)
    }
    fn value(self) -> f64 {
        self.val
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }
    fn sin(self) -> Self {
        self.unary(self.val.sin(), self.val.cos())
    }
    fn cos(self) -> Self {
        self.unary(self.val.cos(), -self.val.sin())
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }
    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.unary(t, 1.0 - t * t)
    }
    fn acos_sq(self) -> Self {
        self.unary(acos_sq_value(self.val), acos_sq_deriv(self.val))
    }
}

/// Value and gradient of a scalar function of `x`.
pub fn value_and_grad<F>(x: &[f64], f: F) -> (f64, Vec<f64>)
where
    F: for<'t> Fn(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars = tape.vars(x);
    let out = f(&vars);
    let g = tape.gradient(out);
    (out.val, g.wrt_all(&vars))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let h = 1e-6 * x[i].abs().max(1.0);
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn poly<T: Real>(x: &[T]) -> T {
        let a = x[0] * x[1] + (x[2].sin() * x[0]).exp() / (x[1] + 3.0);
        a - x[2].tanh() * x[2].ln() + (x[0] * x[0] + 1.0).sqrt() * 2.0 - (-x[1])
    }

    #[test]
    fn matches_finite_differences() {
        let x = [0.3, -0.7, 1.4];
        let (v, g) = value_and_grad(&x, |v| poly(v));
        assert!((v - poly(&x)).abs() < 1e-15);
        let n = fd(&x, |p| poly(p));
        for (a, b) in g.iter().zip(&n) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn constants_do_not_touch_the_tape() {
        let tape = Tape::new();
        let c = Var::constant(2.0) * Var::constant(3.0) + 1.0;
        assert_eq!(c.val(), 7.0);
        assert!(tape.is_empty());
    }

    #[test]
    fn acos_sq_is_smooth_at_one() {
        let (v, g) = value_and_grad(&[1.0], |x| x[0].acos_sq());
        assert_eq!(v, 0.0);
        assert!((g[0] + 2.0).abs() < 1e-12);
        for &x in &[0.999_99, 0.9999, 0.5, -0.3, -0.99] {
            let (_, g) = value_and_grad(&[x], |v| v[0].acos_sq());
            let n = fd(&[x], |p| acos_sq_value(p[0]))[0];
            assert!(
                (g[0] - n).abs() < 1e-4 * n.abs().max(1.0),
                "{x}: {} vs {n}",
                g[0]
            );
        }
    }

    #[test]
    fn custom_nodes_chain() {
        let x = [1.5, -2.0];
        let (v, g) = value_and_grad(&x, |v| {
            let tape_node = v[0] * v[1];
            // f(u, w) = u² + 3w with partials supplied externally
            let u = tape_node.val();
            let w = v[1].val();
            let t = v[0].tape.unwrap();
            t.custom(&[tape_node, v[1]], u * u + 3.0 * w, &[2.0 * u, 3.0])
        });
        assert!((v - (9.0 - 6.0)).abs() < 1e-12);
        // d/dx0 (x0 x1)² = 2 x0 x1²; d/dx1 = 2 x0² x1 + 3
        assert!((g[0] - 2.0 * 1.5 * 4.0).abs() < 1e-12);
        assert!((g[1] - (2.0 * 2.25 * -2.0 + 3.0)).abs() < 1e-12);
    }
}
