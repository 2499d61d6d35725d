use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use super::Block;

/// Symbolic scalar expression in the decision block `w` and the parameter
/// block `p`. Cheap to clone; shared subtrees are deduplicated when the
/// expression is interned into an [`super::ExprGraph`].
#[derive(Clone, Debug)]
pub struct Expr(pub(crate) Rc<ExprNode>);

#[derive(Debug)]
pub(crate) enum ExprNode {
    Const(f64),
    Var(Block, usize),
    Unary(UnaryOp, Expr),
    Binary(BinaryOp, Expr, Expr),
    PowConst(Expr, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub(crate) enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Sqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub(crate) enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl Expr {
    fn wrap(node: ExprNode) -> Self {
        Expr(Rc::new(node))
    }

    pub fn constant(value: f64) -> Self {
        Self::wrap(ExprNode::Const(value))
    }

    /// Decision variable `w[index]`.
    pub fn w(index: usize) -> Self {
        Self::wrap(ExprNode::Var(Block::W, index))
    }

    /// Parameter `p[index]`.
    pub fn p(index: usize) -> Self {
        Self::wrap(ExprNode::Var(Block::P, index))
    }

    pub fn sin(&self) -> Self {
        Self::wrap(ExprNode::Unary(UnaryOp::Sin, self.clone()))
    }

    pub fn cos(&self) -> Self {
        Self::wrap(ExprNode::Unary(UnaryOp::Cos, self.clone()))
    }

    pub fn exp(&self) -> Self {
        Self::wrap(ExprNode::Unary(UnaryOp::Exp, self.clone()))
    }

    pub fn sqrt(&self) -> Self {
        Self::wrap(ExprNode::Unary(UnaryOp::Sqrt, self.clone()))
    }

    /// `self` raised to a constant power.
    pub fn powf(&self, exponent: f64) -> Self {
        Self::wrap(ExprNode::PowConst(self.clone(), exponent))
    }

    pub fn square(&self) -> Self {
        self.powf(2.0)
    }

    /// Balanced sum; avoids deep left-leaning chains for long sums.
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Self {
        let mut level: Vec<Expr> = terms.into_iter().collect();
        if level.is_empty() {
            return Expr::constant(0.0);
        }
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len().div_ceil(2));
            let mut it = level.into_iter();
            while let Some(a) = it.next() {
                match it.next() {
                    Some(b) => next.push(a + b),
                    None => next.push(a),
                }
            }
            level = next;
        }
        level.pop().unwrap()
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Self {
        Expr::constant(v)
    }
}

macro_rules! binary_impl {
    ($trait:ident, $method:ident, $op:expr) => {
        impl $trait<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::wrap(ExprNode::Binary($op, self, rhs))
            }
        }
        impl $trait<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::wrap(ExprNode::Binary($op, self, rhs.clone()))
            }
        }
        impl $trait<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::wrap(ExprNode::Binary($op, self.clone(), rhs))
            }
        }
        impl $trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::wrap(ExprNode::Binary($op, self.clone(), rhs.clone()))
            }
        }
        impl $trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                Expr::wrap(ExprNode::Binary($op, self, Expr::constant(rhs)))
            }
        }
        impl $trait<f64> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                Expr::wrap(ExprNode::Binary($op, self.clone(), Expr::constant(rhs)))
            }
        }
        impl $trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::wrap(ExprNode::Binary($op, Expr::constant(self), rhs))
            }
        }
        impl $trait<&Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::wrap(ExprNode::Binary($op, Expr::constant(self), rhs.clone()))
            }
        }
    };
}

binary_impl!(Add, add, BinaryOp::Add);
binary_impl!(Sub, sub, BinaryOp::Sub);
binary_impl!(Mul, mul, BinaryOp::Mul);
binary_impl!(Div, div, BinaryOp::Div);

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::wrap(ExprNode::Unary(UnaryOp::Neg, self))
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::wrap(ExprNode::Unary(UnaryOp::Neg, self.clone()))
    }
}
