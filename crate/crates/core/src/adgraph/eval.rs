use nalgebra::{DMatrix, DVector};

use super::tape::Tape;
use super::{AdError, Block, BlockPair, NodeId, NodeKind};

/// Straight-line program over the subgraph reachable from a set of roots.
/// Slot `i` holds the value of instruction `i`; children precede parents.
#[derive(Clone, Debug)]
pub(crate) struct Program {
    n_w: usize,
    n_p: usize,
    instrs: Vec<NodeKind>,
    /// Node id of each instruction in the graph it was compiled from.
    origin: Vec<NodeId>,
}

impl Program {
    pub fn compile(
        n_w: usize,
        n_p: usize,
        nodes: &[NodeKind],
        roots: &[NodeId],
    ) -> (Self, Vec<u32>) {
        let mut keep = vec![false; nodes.len()];
        let mut stack: Vec<NodeId> = roots.to_vec();
        while let Some(id) = stack.pop() {
            if keep[id as usize] {
                continue;
            }
            keep[id as usize] = true;
            for c in nodes[id as usize].children().into_iter().flatten() {
                if !keep[c as usize] {
                    stack.push(c);
                }
            }
        }
        let mut slot = vec![u32::MAX; nodes.len()];
        let mut instrs = Vec::new();
        let mut origin = Vec::new();
        for (id, kind) in nodes.iter().enumerate() {
            if !keep[id] {
                continue;
            }
            slot[id] = instrs.len() as u32;
            instrs.push(kind.map_children(|c| slot[c as usize]));
            origin.push(id as NodeId);
        }
        let root_slots = roots.iter().map(|&r| slot[r as usize]).collect();
        (
            Self {
                n_w,
                n_p,
                instrs,
                origin,
            },
            root_slots,
        )
    }

    pub fn run(&self, w: &[f64], p: &[f64]) -> Result<Vec<f64>, AdError> {
        if w.len() != self.n_w {
            return Err(AdError::DimensionMismatch {
                what: "w",
                expected: self.n_w,
                got: w.len(),
            });
        }
        if p.len() != self.n_p {
            return Err(AdError::DimensionMismatch {
                what: "p",
                expected: self.n_p,
                got: p.len(),
            });
        }
        let mut v = vec![0.0; self.instrs.len()];
        for (i, instr) in self.instrs.iter().enumerate() {
            let x = match *instr {
                NodeKind::Const(c) => c,
                NodeKind::Input(Block::W, k) => w[k as usize],
                NodeKind::Input(Block::P, k) => p[k as usize],
                NodeKind::Neg(a) => -v[a as usize],
                NodeKind::Add(a, b) => v[a as usize] + v[b as usize],
                NodeKind::Sub(a, b) => v[a as usize] - v[b as usize],
                NodeKind::Mul(a, b) => v[a as usize] * v[b as usize],
                NodeKind::Div(a, b) => {
                    let d = v[b as usize];
                    if d == 0.0 {
                        return Err(self.domain(i));
                    }
                    v[a as usize] / d
                }
                NodeKind::PowConst(a, c) => {
                    let base = v[a as usize];
                    if (base < 0.0 && c.fract() != 0.0) || (base == 0.0 && c < 0.0) {
                        return Err(self.domain(i));
                    }
                    if c == 2.0 {
                        base * base
                    } else if c.fract() == 0.0 && c.abs() <= 16.0 {
                        base.powi(c as i32)
                    } else {
                        base.powf(c)
                    }
                }
                NodeKind::Sin(a) => v[a as usize].sin(),
                NodeKind::Cos(a) => v[a as usize].cos(),
                NodeKind::Exp(a) => v[a as usize].exp(),
                NodeKind::Sqrt(a) => {
                    let x = v[a as usize];
                    if x < 0.0 {
                        return Err(self.domain(i));
                    }
                    x.sqrt()
                }
            };
            if !x.is_finite() {
                return Err(self.domain(i));
            }
            v[i] = x;
        }
        Ok(v)
    }

    fn domain(&self, i: usize) -> AdError {
        AdError::Domain {
            node: self.origin[i] as usize,
            op: self.instrs[i].name(),
        }
    }
}

/// Evaluates the dense `m × n` Jacobian of a graph's outputs with respect to
/// one input block.
#[derive(Clone, Debug)]
pub struct JacobianEvaluator {
    program: Program,
    rows: usize,
    cols: usize,
    block: Block,
    entries: Vec<(u32, u32, u32)>,
}

impl JacobianEvaluator {
    pub(crate) fn compile(
        tape: &Tape,
        rows: usize,
        block: Block,
        entries: Vec<(u32, u32, NodeId)>,
    ) -> Self {
        let cols = match block {
            Block::W => tape.n_w(),
            Block::P => tape.n_p(),
        };
        let roots: Vec<NodeId> = entries.iter().map(|e| e.2).collect();
        let (program, slots) = Program::compile(tape.n_w(), tape.n_p(), tape.nodes(), &roots);
        let entries = entries
            .iter()
            .zip(slots)
            .map(|(e, s)| (e.0, e.1, s))
            .collect();
        Self {
            program,
            rows,
            cols,
            block,
            entries,
        }
    }

    pub fn block(&self) -> Block {
        self.block
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Number of structurally nonzero entries.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn evaluate(&self, w: &[f64], p: &[f64]) -> Result<DMatrix<f64>, AdError> {
        let v = self.program.run(w, p)?;
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for &(r, c, s) in &self.entries {
            m[(r as usize, c as usize)] = v[s as usize];
        }
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug)]
enum Weight {
    Objective,
    Equality(u32),
    Inequality(u32),
}

/// Evaluates one second-derivative block of the Lagrangian
/// `L = J + λᵀc + μᵀg` for multipliers supplied per call.
#[derive(Clone, Debug)]
pub struct HessianEvaluator {
    program: Program,
    pair: BlockPair,
    rows: usize,
    cols: usize,
    n_c: usize,
    n_g: usize,
    entries: Vec<(Weight, u32, u32, u32)>,
}

impl HessianEvaluator {
    pub(crate) fn compile(
        tape: &mut Tape,
        pair: BlockPair,
        f: NodeId,
        c: &[NodeId],
        g: &[NodeId],
    ) -> Self {
        let mut raw: Vec<(Weight, u32, u32, NodeId)> = Vec::new();
        for (r, col, n) in tape.hessian_entries(f, pair) {
            raw.push((Weight::Objective, r, col, n));
        }
        for (i, &ci) in c.iter().enumerate() {
            for (r, col, n) in tape.hessian_entries(ci, pair) {
                raw.push((Weight::Equality(i as u32), r, col, n));
            }
        }
        for (j, &gj) in g.iter().enumerate() {
            for (r, col, n) in tape.hessian_entries(gj, pair) {
                raw.push((Weight::Inequality(j as u32), r, col, n));
            }
        }
        let roots: Vec<NodeId> = raw.iter().map(|e| e.3).collect();
        let (program, slots) = Program::compile(tape.n_w(), tape.n_p(), tape.nodes(), &roots);
        let entries = raw
            .iter()
            .zip(slots)
            .map(|(e, s)| (e.0, e.1, e.2, s))
            .collect();
        let cols = match pair {
            BlockPair::WW => tape.n_w(),
            BlockPair::WP => tape.n_p(),
        };
        Self {
            program,
            pair,
            rows: tape.n_w(),
            cols,
            n_c: c.len(),
            n_g: g.len(),
            entries,
        }
    }

    pub fn pair(&self) -> BlockPair {
        self.pair
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn evaluate(
        &self,
        w: &[f64],
        p: &[f64],
        lambda: &[f64],
        mu: &[f64],
    ) -> Result<DMatrix<f64>, AdError> {
        if lambda.len() != self.n_c {
            return Err(AdError::DimensionMismatch {
                what: "lambda",
                expected: self.n_c,
                got: lambda.len(),
            });
        }
        if mu.len() != self.n_g {
            return Err(AdError::DimensionMismatch {
                what: "mu",
                expected: self.n_g,
                got: mu.len(),
            });
        }
        let v = self.program.run(w, p)?;
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for &(weight, r, c, s) in &self.entries {
            let k = match weight {
                Weight::Objective => 1.0,
                Weight::Equality(i) => lambda[i as usize],
                Weight::Inequality(j) => mu[j as usize],
            };
            if k != 0.0 {
                m[(r as usize, c as usize)] += k * v[s as usize];
            }
        }
        if self.pair == BlockPair::WW {
            for j in 0..self.rows {
                for i in j + 1..self.rows {
                    m[(j, i)] = m[(i, j)];
                }
            }
        }
        Ok(m)
    }
}

/// Objective, constraints and their `w`-Jacobians at one point.
#[derive(Clone, Debug)]
pub struct FirstOrder {
    pub objective: f64,
    pub gradient: DVector<f64>,
    pub equalities: DVector<f64>,
    pub jac_equalities: DMatrix<f64>,
    pub inequalities: DVector<f64>,
    pub jac_inequalities: DMatrix<f64>,
}

/// Fused evaluator for [`FirstOrder`]: one program shares all common
/// subexpressions between values and Jacobians.
#[derive(Clone, Debug)]
pub struct FirstOrderEvaluator {
    program: Program,
    n_w: usize,
    n_c: usize,
    n_g: usize,
    value_slots: Vec<u32>,
    grad: Vec<(u32, u32)>,
    jac_c: Vec<(u32, u32, u32)>,
    jac_g: Vec<(u32, u32, u32)>,
}

impl FirstOrderEvaluator {
    pub(crate) fn compile(tape: &mut Tape, f: NodeId, c: &[NodeId], g: &[NodeId]) -> Self {
        let grad = tape.jacobian_entries(&[f], Block::W);
        let jac_c = tape.jacobian_entries(c, Block::W);
        let jac_g = tape.jacobian_entries(g, Block::W);
        let mut roots: Vec<NodeId> = Vec::with_capacity(1 + c.len() + g.len());
        roots.push(f);
        roots.extend_from_slice(c);
        roots.extend_from_slice(g);
        let n_values = roots.len();
        roots.extend(grad.iter().map(|e| e.2));
        roots.extend(jac_c.iter().map(|e| e.2));
        roots.extend(jac_g.iter().map(|e| e.2));
        let (program, slots) = Program::compile(tape.n_w(), tape.n_p(), tape.nodes(), &roots);
        let (value_slots, rest) = slots.split_at(n_values);
        let (gs, rest) = rest.split_at(grad.len());
        let (cs, gjs) = rest.split_at(jac_c.len());
        Self {
            program,
            n_w: tape.n_w(),
            n_c: c.len(),
            n_g: g.len(),
            value_slots: value_slots.to_vec(),
            grad: grad.iter().zip(gs).map(|(e, &s)| (e.1, s)).collect(),
            jac_c: jac_c.iter().zip(cs).map(|(e, &s)| (e.0, e.1, s)).collect(),
            jac_g: jac_g.iter().zip(gjs).map(|(e, &s)| (e.0, e.1, s)).collect(),
        }
    }

    pub fn evaluate(&self, w: &[f64], p: &[f64]) -> Result<FirstOrder, AdError> {
        let v = self.program.run(w, p)?;
        let vs = &self.value_slots;
        let mut gradient = DVector::zeros(self.n_w);
        for &(c, s) in &self.grad {
            gradient[c as usize] = v[s as usize];
        }
        let mut jac_equalities = DMatrix::zeros(self.n_c, self.n_w);
        for &(r, c, s) in &self.jac_c {
            jac_equalities[(r as usize, c as usize)] = v[s as usize];
        }
        let mut jac_inequalities = DMatrix::zeros(self.n_g, self.n_w);
        for &(r, c, s) in &self.jac_g {
            jac_inequalities[(r as usize, c as usize)] = v[s as usize];
        }
        Ok(FirstOrder {
            objective: v[vs[0] as usize],
            gradient,
            equalities: DVector::from_iterator(
                self.n_c,
                vs[1..1 + self.n_c].iter().map(|&s| v[s as usize]),
            ),
            jac_equalities,
            inequalities: DVector::from_iterator(
                self.n_g,
                vs[1 + self.n_c..].iter().map(|&s| v[s as usize]),
            ),
            jac_inequalities,
        })
    }
}
