//! Expression graphs over `(w, p)` with exact symbolic derivatives.
//!
//! Functions are written with [`Expr`] and interned into an [`ExprGraph`]:
//! a hash-consed DAG in topological order. Derivatives are produced by
//! source transformation (reverse accumulation that emits new graph nodes),
//! applied twice for second derivatives, and the requested roots are compiled
//! into flat straight-line programs for evaluation.
//!
//! Supported primitives: `+ - × ÷`, negation, constant powers, `sin`, `cos`,
//! `exp`, `sqrt`. The set is closed under differentiation.

mod eval;
mod expr;
mod tape;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eval::{FirstOrder, FirstOrderEvaluator, HessianEvaluator, JacobianEvaluator};
pub use expr::Expr;

pub(crate) use eval::Program;
pub(crate) use tape::Tape;

/// Input block of a variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    W,
    P,
}

/// Second-derivative block of the Lagrangian.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockPair {
    WW,
    WP,
}

pub type NodeId = u32;

/// One node of an [`ExprGraph`]. Child indices always precede the node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NodeKind {
    Const(f64),
    Input(Block, u32),
    Neg(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    PowConst(NodeId, f64),
    Sin(NodeId),
    Cos(NodeId),
    Exp(NodeId),
    Sqrt(NodeId),
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Const(_) => "const",
            NodeKind::Input(..) => "input",
            NodeKind::Neg(_) => "neg",
            NodeKind::Add(..) => "add",
            NodeKind::Sub(..) => "sub",
            NodeKind::Mul(..) => "mul",
            NodeKind::Div(..) => "div",
            NodeKind::PowConst(..) => "pow",
            NodeKind::Sin(_) => "sin",
            NodeKind::Cos(_) => "cos",
            NodeKind::Exp(_) => "exp",
            NodeKind::Sqrt(_) => "sqrt",
        }
    }

    pub(crate) fn children(&self) -> [Option<NodeId>; 2] {
        match *self {
            NodeKind::Const(_) | NodeKind::Input(..) => [None, None],
            NodeKind::Neg(a)
            | NodeKind::PowConst(a, _)
            | NodeKind::Sin(a)
            | NodeKind::Cos(a)
            | NodeKind::Exp(a)
            | NodeKind::Sqrt(a) => [Some(a), None],
            NodeKind::Add(a, b)
            | NodeKind::Sub(a, b)
            | NodeKind::Mul(a, b)
            | NodeKind::Div(a, b) => [Some(a), Some(b)],
        }
    }

    pub(crate) fn map_children(&self, f: impl Fn(NodeId) -> NodeId) -> NodeKind {
        match *self {
            NodeKind::Const(c) => NodeKind::Const(c),
            NodeKind::Input(b, i) => NodeKind::Input(b, i),
            NodeKind::Neg(a) => NodeKind::Neg(f(a)),
            NodeKind::Add(a, b) => NodeKind::Add(f(a), f(b)),
            NodeKind::Sub(a, b) => NodeKind::Sub(f(a), f(b)),
            NodeKind::Mul(a, b) => NodeKind::Mul(f(a), f(b)),
            NodeKind::Div(a, b) => NodeKind::Div(f(a), f(b)),
            NodeKind::PowConst(a, c) => NodeKind::PowConst(f(a), c),
            NodeKind::Sin(a) => NodeKind::Sin(f(a)),
            NodeKind::Cos(a) => NodeKind::Cos(f(a)),
            NodeKind::Exp(a) => NodeKind::Exp(f(a)),
            NodeKind::Sqrt(a) => NodeKind::Sqrt(f(a)),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("domain error in `{op}` at node {node}")]
    Domain { node: usize, op: &'static str },
    #[error("input {block:?}[{index}] is outside its block of size {size}")]
    UnknownInput {
        block: Block,
        index: usize,
        size: usize,
    },
    #[error("graphs disagree on input blocks: {0}")]
    IncompatibleGraphs(String),
}

/// Immutable DAG of scalar expressions with an ordered list of outputs.
#[derive(Clone, Debug)]
pub struct ExprGraph {
    n_w: usize,
    n_p: usize,
    nodes: Vec<NodeKind>,
    outputs: Vec<NodeId>,
    program: Program,
    output_slots: Vec<u32>,
}

impl ExprGraph {
    /// Interns `outputs` into a graph whose inputs are `w ∈ R^n_w`, `p ∈ R^n_p`.
    pub fn new(n_w: usize, n_p: usize, outputs: &[Expr]) -> Result<Self, AdError> {
        let mut tape = Tape::new(n_w, n_p);
        let roots = tape.intern_all(outputs)?;
        let nodes = tape.into_nodes();
        let (program, output_slots) = Program::compile(n_w, n_p, &nodes, &roots);
        Ok(Self {
            n_w,
            n_p,
            nodes,
            outputs: roots,
            program,
            output_slots,
        })
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn nodes(&self) -> &[NodeKind] {
        &self.nodes
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    /// Evaluates every output at `(w, p)`.
    pub fn evaluate(&self, w: &[f64], p: &[f64]) -> Result<Vec<f64>, AdError> {
        let values = self.program.run(w, p)?;
        Ok(self
            .output_slots
            .iter()
            .map(|&s| values[s as usize])
            .collect())
    }

    /// Compiles the Jacobian of the outputs with respect to `block`.
    pub fn jacobian(&self, block: Block) -> Result<JacobianEvaluator, AdError> {
        let mut tape = Tape::from_nodes(self.n_w, self.n_p, self.nodes.clone());
        let entries = tape.jacobian_entries(&self.outputs, block);
        Ok(JacobianEvaluator::compile(
            &tape,
            self.outputs.len(),
            block,
            entries,
        ))
    }

    pub(crate) fn check_same_inputs(&self, other: &ExprGraph, what: &str) -> Result<(), AdError> {
        if self.n_w != other.n_w || self.n_p != other.n_p {
            return Err(AdError::IncompatibleGraphs(format!(
                "{what}: (n_w, n_p) = ({}, {}) vs ({}, {})",
                other.n_w, other.n_p, self.n_w, self.n_p
            )));
        }
        Ok(())
    }
}

/// Compiles the requested second-derivative block of
/// `L = J + λᵀc + μᵀg`; multipliers are supplied at evaluation time.
///
/// The `(w, w)` block is built from its lower triangle and mirrored, so the
/// result is exactly symmetric.
pub fn hessian_lagrangian(
    objective: &ExprGraph,
    equalities: &ExprGraph,
    inequalities: &ExprGraph,
    pair: BlockPair,
) -> Result<HessianEvaluator, AdError> {
    objective.check_same_inputs(equalities, "equalities")?;
    objective.check_same_inputs(inequalities, "inequalities")?;
    if objective.n_outputs() != 1 {
        return Err(AdError::DimensionMismatch {
            what: "objective outputs",
            expected: 1,
            got: objective.n_outputs(),
        });
    }
    let mut tape = Tape::new(objective.n_w, objective.n_p);
    let f = tape.import(objective);
    let c = tape.import(equalities);
    let g = tape.import(inequalities);
    Ok(HessianEvaluator::compile(&mut tape, pair, f[0], &c, &g))
}

#[cfg(test)]
mod tests;
