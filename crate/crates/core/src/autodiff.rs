//! Scalar abstraction used by the bound computations, with a small
//! reverse-mode tape so that the same code yields values (`f64`) or
//! gradients with respect to the network parameters (`Var`).
//!
//! Piecewise operations (`max`, `min`, `relu`) route the gradient to the
//! branch selected by the primal values, which gives a valid subgradient at
//! kinks and the exact gradient everywhere else.

use std::cell::RefCell;
use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Numeric type the bound propagation code is generic over.
pub trait Scalar:
    Copy + Debug + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sigmoid(self) -> Self;

    /// Multiplication by a plain constant.
    fn scale(self, c: f64) -> Self;

    fn max(self, other: Self) -> Self {
        if self.value() >= other.value() {
            self
        } else {
            other
        }
    }

    fn min(self, other: Self) -> Self {
        if self.value() <= other.value() {
            self
        } else {
            other
        }
    }

    fn relu(self) -> Self {
        if self.value() > 0.0 {
            self
        } else {
            Self::constant(0.0)
        }
    }

    fn zero() -> Self {
        Self::constant(0.0)
    }

    /// True for a zero that carries no derivative.
    fn is_const_zero(self) -> bool;
}

/// Numerically stable logistic function.
pub fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Scalar for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    #[inline]
    fn scale(self, c: f64) -> Self {
        self * c
    }
    #[inline]
    fn is_const_zero(self) -> bool {
        self == 0.0
    }
}

const NO_PARENT: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [(u32, f64); 2],
}

/// Append-only record of operations. One tape per gradient evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push([(NO_PARENT, 0.0), (NO_PARENT, 0.0)]);
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    fn push(&self, parents: [(u32, f64); 2]) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = u32::try_from(nodes.len()).expect("tape exceeds u32 nodes");
        nodes.push(Node { parents });
        idx
    }

    /// Reverse sweep from `output`; returns d output / d node for every node.
    pub fn gradient(&self, output: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        if output.tape.is_none() {
            return adj;
        }
        adj[output.idx as usize] = 1.0;
        for i in (0..=output.idx as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            for &(p, d) in &nodes[i].parents {
                if p != NO_PARENT {
                    adj[p as usize] += a * d;
                }
            }
        }
        adj
    }
}

/// A value recorded on a [`Tape`]. Constants carry no tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.val)
    }
}

impl<'t> Var<'t> {
    pub fn index(&self) -> Option<usize> {
        self.tape.map(|_| self.idx as usize)
    }

    fn unary(self, val: f64, d: f64) -> Self {
        match self.tape {
            None => Var::constant(val),
            Some(t) => Var {
                tape: Some(t),
                idx: t.push([(self.idx, d), (NO_PARENT, 0.0)]),
                val,
            },
        }
    }

    fn binary(self, other: Self, val: f64, da: f64, db: f64) -> Self {
        match (self.tape, other.tape) {
            (None, None) => Var::constant(val),
            (Some(t), None) => Var {
                tape: Some(t),
                idx: t.push([(self.idx, da), (NO_PARENT, 0.0)]),
                val,
            },
            (None, Some(t)) => Var {
                tape: Some(t),
                idx: t.push([(other.idx, db), (NO_PARENT, 0.0)]),
                val,
            },
            (Some(t), Some(_)) => Var {
                tape: Some(t),
                idx: t.push([(self.idx, da), (other.idx, db)]),
                val,
            },
        }
    }
}

impl Add for Var<'_> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        self.binary(o, self.val + o.val, 1.0, 1.0)
    }
}

impl Sub for Var<'_> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self.binary(o, self.val - o.val, 1.0, -1.0)
    }
}

impl Mul for Var<'_> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        // a product with a constant zero is a constant zero
        if self.is_const_zero() || o.is_const_zero() {
            return Var::constant(0.0);
        }
        self.binary(o, self.val * o.val, o.val, self.val)
    }
}

impl Div for Var<'_> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.val / o.val;
        self.binary(o, q, 1.0 / o.val, -q / o.val)
    }
}

impl Neg for Var<'_> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl Scalar for Var<'_> {
    fn constant(v: f64) -> Self {
        Var {
            tape: None,
            idx: NO_PARENT,
            val: v,
        }
    }
    fn value(self) -> f64 {
        self.val
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.val);
        self.unary(s, s * (1.0 - s))
    }
    fn scale(self, c: f64) -> Self {
        if c == 0.0 {
            return Var::constant(0.0);
        }
        self.unary(self.val * c, c)
    }
    fn is_const_zero(self) -> bool {
        self.tape.is_none() && self.val == 0.0
    }
}
