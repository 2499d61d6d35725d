use std::collections::{BTreeMap, HashMap};

use super::expr::{BinaryOp, ExprNode, UnaryOp};
use super::{AdError, Block, Expr, ExprGraph, NodeId, NodeKind};

/// Hash-consing key; constants are keyed by bit pattern with `-0.0 == 0.0`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct Key(u8, u32, u32, u64);

fn key_of(kind: &NodeKind) -> Key {
    let bits = |c: f64| if c == 0.0 { 0u64 } else { c.to_bits() };
    match *kind {
        NodeKind::Const(c) => Key(0, 0, 0, bits(c)),
        NodeKind::Input(Block::W, i) => Key(1, i, 0, 0),
        NodeKind::Input(Block::P, i) => Key(2, i, 0, 0),
        NodeKind::Neg(a) => Key(3, a, 0, 0),
        NodeKind::Add(a, b) => Key(4, a, b, 0),
        NodeKind::Sub(a, b) => Key(5, a, b, 0),
        NodeKind::Mul(a, b) => Key(6, a, b, 0),
        NodeKind::Div(a, b) => Key(7, a, b, 0),
        NodeKind::PowConst(a, c) => Key(8, a, 0, bits(c)),
        NodeKind::Sin(a) => Key(9, a, 0, 0),
        NodeKind::Cos(a) => Key(10, a, 0, 0),
        NodeKind::Exp(a) => Key(11, a, 0, 0),
        NodeKind::Sqrt(a) => Key(12, a, 0, 0),
    }
}

/// Growable, hash-consed node arena with algebraic simplification. Used to
/// build graphs and to emit derivative nodes.
pub(crate) struct Tape {
    n_w: usize,
    n_p: usize,
    nodes: Vec<NodeKind>,
    index: HashMap<Key, NodeId>,
}

impl Tape {
    pub fn new(n_w: usize, n_p: usize) -> Self {
        Self {
            n_w,
            n_p,
            nodes: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_nodes(n_w: usize, n_p: usize, nodes: Vec<NodeKind>) -> Self {
        let index = nodes
            .iter()
            .enumerate()
            .map(|(i, k)| (key_of(k), i as NodeId))
            .collect();
        Self {
            n_w,
            n_p,
            nodes,
            index,
        }
    }

    pub fn nodes(&self) -> &[NodeKind] {
        &self.nodes
    }

    pub fn into_nodes(self) -> Vec<NodeKind> {
        self.nodes
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    fn push(&mut self, kind: NodeKind) -> NodeId {
        let key = key_of(&kind);
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.nodes.len() as NodeId;
        self.nodes.push(kind);
        self.index.insert(key, id);
        id
    }

    fn as_const(&self, id: NodeId) -> Option<f64> {
        match self.nodes[id as usize] {
            NodeKind::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn constant(&mut self, c: f64) -> NodeId {
        self.push(NodeKind::Const(if c == 0.0 { 0.0 } else { c }))
    }

    pub fn input(&mut self, block: Block, index: u32) -> NodeId {
        self.push(NodeKind::Input(block, index))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        if let Some(c) = self.as_const(a) {
            return self.constant(-c);
        }
        if let NodeKind::Neg(x) = self.nodes[a as usize] {
            return x;
        }
        self.push(NodeKind::Neg(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => return self.constant(x + y),
            (Some(x), None) if x == 0.0 => return b,
            (None, Some(y)) if y == 0.0 => return a,
            _ => {}
        }
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.push(NodeKind::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        if a == b {
            return self.constant(0.0);
        }
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => return self.constant(x - y),
            (Some(x), None) if x == 0.0 => return self.neg(b),
            (None, Some(y)) if y == 0.0 => return a,
            _ => {}
        }
        self.push(NodeKind::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) => return self.constant(x * y),
            (Some(x), _) if x == 0.0 => return a,
            (_, Some(y)) if y == 0.0 => return b,
            (Some(x), _) if x == 1.0 => return b,
            (_, Some(y)) if y == 1.0 => return a,
            (Some(x), _) if x == -1.0 => return self.neg(b),
            (_, Some(y)) if y == -1.0 => return self.neg(a),
            _ => {}
        }
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.push(NodeKind::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.as_const(a), self.as_const(b)) {
            (Some(x), Some(y)) if y != 0.0 => return self.constant(x / y),
            (Some(x), _) if x == 0.0 => return a,
            (_, Some(y)) if y == 1.0 => return a,
            _ => {}
        }
        self.push(NodeKind::Div(a, b))
    }

    pub fn pow(&mut self, a: NodeId, c: f64) -> NodeId {
        if c == 0.0 {
            return self.constant(1.0);
        }
        if c == 1.0 {
            return a;
        }
        if let Some(x) = self.as_const(a) {
            let v = x.powf(c);
            if v.is_finite() {
                return self.constant(v);
            }
        }
        self.push(NodeKind::PowConst(a, c))
    }

    fn unary(&mut self, op: fn(NodeId) -> NodeKind, f: fn(f64) -> f64, a: NodeId) -> NodeId {
        if let Some(x) = self.as_const(a) {
            let v = f(x);
            if v.is_finite() {
                return self.constant(v);
            }
        }
        self.push(op(a))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.unary(NodeKind::Sin, f64::sin, a)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.unary(NodeKind::Cos, f64::cos, a)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(NodeKind::Exp, f64::exp, a)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(NodeKind::Sqrt, f64::sqrt, a)
    }

    /// Rebuilds `kind` (whose children already live on this tape) through the
    /// simplifying constructors.
    fn rebuild(&mut self, kind: NodeKind) -> NodeId {
        match kind {
            NodeKind::Const(c) => self.constant(c),
            NodeKind::Input(b, i) => self.input(b, i),
            NodeKind::Neg(a) => self.neg(a),
            NodeKind::Add(a, b) => self.add(a, b),
            NodeKind::Sub(a, b) => self.sub(a, b),
            NodeKind::Mul(a, b) => self.mul(a, b),
            NodeKind::Div(a, b) => self.div(a, b),
            NodeKind::PowConst(a, c) => self.pow(a, c),
            NodeKind::Sin(a) => self.sin(a),
            NodeKind::Cos(a) => self.cos(a),
            NodeKind::Exp(a) => self.exp(a),
            NodeKind::Sqrt(a) => self.sqrt(a),
        }
    }

    /// Copies the nodes of `graph` onto this tape; returns the output ids.
    pub fn import(&mut self, graph: &ExprGraph) -> Vec<NodeId> {
        let mut map: Vec<NodeId> = Vec::with_capacity(graph.nodes().len());
        for kind in graph.nodes() {
            let k = kind.map_children(|c| map[c as usize]);
            let id = self.rebuild(k);
            map.push(id);
        }
        graph.outputs().iter().map(|&o| map[o as usize]).collect()
    }

    pub fn intern_all(&mut self, exprs: &[Expr]) -> Result<Vec<NodeId>, AdError> {
        let mut memo: HashMap<*const ExprNode, NodeId> = HashMap::new();
        exprs.iter().map(|e| self.intern(e, &mut memo)).collect()
    }

    fn intern(
        &mut self,
        e: &Expr,
        memo: &mut HashMap<*const ExprNode, NodeId>,
    ) -> Result<NodeId, AdError> {
        let ptr = std::rc::Rc::as_ptr(&e.0);
        if let Some(&id) = memo.get(&ptr) {
            return Ok(id);
        }
        let id = match &*e.0 {
            ExprNode::Const(c) => self.constant(*c),
            ExprNode::Var(block, index) => {
                let size = match block {
                    Block::W => self.n_w,
                    Block::P => self.n_p,
                };
                if *index >= size {
                    return Err(AdError::UnknownInput {
                        block: *block,
                        index: *index,
                        size,
                    });
                }
                self.input(*block, *index as u32)
            }
            ExprNode::Unary(op, a) => {
                let a = self.intern(a, memo)?;
                match op {
                    UnaryOp::Neg => self.neg(a),
                    UnaryOp::Sin => self.sin(a),
                    UnaryOp::Cos => self.cos(a),
                    UnaryOp::Exp => self.exp(a),
                    UnaryOp::Sqrt => self.sqrt(a),
                }
            }
            ExprNode::Binary(op, a, b) => {
                let a = self.intern(a, memo)?;
                let b = self.intern(b, memo)?;
                match op {
                    BinaryOp::Add => self.add(a, b),
                    BinaryOp::Sub => self.sub(a, b),
                    BinaryOp::Mul => self.mul(a, b),
                    BinaryOp::Div => self.div(a, b),
                }
            }
            ExprNode::PowConst(a, c) => {
                let a = self.intern(a, memo)?;
                self.pow(a, *c)
            }
        };
        memo.insert(ptr, id);
        Ok(id)
    }

    /// Global variable index: `w` first, then `p`.
    fn var_index(&self, block: Block, i: u32) -> usize {
        match block {
            Block::W => i as usize,
            Block::P => self.n_w + i as usize,
        }
    }

    /// Emits nodes for the gradient of `root` by reverse accumulation.
    /// Returns `(global variable index, derivative node)` for every variable
    /// with a structurally nonzero derivative, sorted by variable.
    pub fn gradient(&mut self, root: NodeId) -> Vec<(usize, NodeId)> {
        let mut seen = vec![false; root as usize + 1];
        let mut reach = Vec::new();
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if seen[id as usize] {
                continue;
            }
            seen[id as usize] = true;
            reach.push(id);
            for c in self.nodes[id as usize].children().into_iter().flatten() {
                if !seen[c as usize] {
                    stack.push(c);
                }
            }
        }
        reach.sort_unstable_by(|a, b| b.cmp(a));

        let one = self.constant(1.0);
        let mut adj: HashMap<NodeId, NodeId> = HashMap::new();
        adj.insert(root, one);
        let mut grad: BTreeMap<usize, NodeId> = BTreeMap::new();

        for id in reach {
            let Some(&a) = adj.get(&id) else { continue };
            let kind = self.nodes[id as usize];
            match kind {
                NodeKind::Const(_) => {}
                NodeKind::Input(block, i) => {
                    let v = self.var_index(block, i);
                    let total = match grad.get(&v) {
                        Some(&prev) => self.add(prev, a),
                        None => a,
                    };
                    grad.insert(v, total);
                }
                NodeKind::Neg(x) => {
                    let d = self.neg(a);
                    self.accumulate(&mut adj, x, d);
                }
                NodeKind::Add(x, y) => {
                    self.accumulate(&mut adj, x, a);
                    self.accumulate(&mut adj, y, a);
                }
                NodeKind::Sub(x, y) => {
                    self.accumulate(&mut adj, x, a);
                    let d = self.neg(a);
                    self.accumulate(&mut adj, y, d);
                }
                NodeKind::Mul(x, y) => {
                    let dx = self.mul(a, y);
                    self.accumulate(&mut adj, x, dx);
                    let dy = self.mul(a, x);
                    self.accumulate(&mut adj, y, dy);
                }
                NodeKind::Div(x, y) => {
                    let dx = self.div(a, y);
                    self.accumulate(&mut adj, x, dx);
                    // d(x/y)/dy = -(x/y)/y
                    let q = self.div(id, y);
                    let t = self.mul(a, q);
                    let dy = self.neg(t);
                    self.accumulate(&mut adj, y, dy);
                }
                NodeKind::PowConst(x, c) => {
                    let base = self.pow(x, c - 1.0);
                    let k = self.constant(c);
                    let local = self.mul(k, base);
                    let dx = self.mul(a, local);
                    self.accumulate(&mut adj, x, dx);
                }
                NodeKind::Sin(x) => {
                    let cx = self.cos(x);
                    let dx = self.mul(a, cx);
                    self.accumulate(&mut adj, x, dx);
                }
                NodeKind::Cos(x) => {
                    let sx = self.sin(x);
                    let t = self.mul(a, sx);
                    let dx = self.neg(t);
                    self.accumulate(&mut adj, x, dx);
                }
                NodeKind::Exp(x) => {
                    let dx = self.mul(a, id);
                    self.accumulate(&mut adj, x, dx);
                }
                NodeKind::Sqrt(x) => {
                    let two = self.constant(2.0);
                    let den = self.mul(two, id);
                    let dx = self.div(a, den);
                    self.accumulate(&mut adj, x, dx);
                }
            }
        }
        grad.into_iter()
            .filter(|&(_, n)| self.as_const(n) != Some(0.0))
            .collect()
    }

    fn accumulate(&mut self, adj: &mut HashMap<NodeId, NodeId>, target: NodeId, contrib: NodeId) {
        let total = match adj.get(&target) {
            Some(&prev) => self.add(prev, contrib),
            None => contrib,
        };
        adj.insert(target, total);
    }

    fn block_range(&self, block: Block) -> std::ops::Range<usize> {
        match block {
            Block::W => 0..self.n_w,
            Block::P => self.n_w..self.n_w + self.n_p,
        }
    }

    /// Structurally nonzero Jacobian entries `(row, col, node)` of `roots`
    /// with respect to `block`; columns are block-local.
    pub fn jacobian_entries(&mut self, roots: &[NodeId], block: Block) -> Vec<(u32, u32, NodeId)> {
        let range = self.block_range(block);
        let mut out = Vec::new();
        for (row, &root) in roots.iter().enumerate() {
            for (v, node) in self.gradient(root) {
                if range.contains(&v) {
                    out.push((row as u32, (v - range.start) as u32, node));
                }
            }
        }
        out
    }

    /// Second-derivative entries `(row, col, node)` of a scalar root. For
    /// `(W, W)` only the lower triangle (`col <= row`) is emitted.
    pub fn hessian_entries(
        &mut self,
        root: NodeId,
        pair: super::BlockPair,
    ) -> Vec<(u32, u32, NodeId)> {
        let w_range = self.block_range(Block::W);
        let col_range = match pair {
            super::BlockPair::WW => w_range.clone(),
            super::BlockPair::WP => self.block_range(Block::P),
        };
        let mut out = Vec::new();
        let first: Vec<(usize, NodeId)> = self
            .gradient(root)
            .into_iter()
            .filter(|(v, _)| w_range.contains(v))
            .collect();
        for (a, ga) in first {
            for (b, hab) in self.gradient(ga) {
                if !col_range.contains(&b) {
                    continue;
                }
                let col = b - col_range.start;
                if pair == super::BlockPair::WW && col > a {
                    continue;
                }
                out.push((a as u32, col as u32, hab));
            }
        }
        out
    }
}
