//! Small problems with closed-form solution manifolds.

use crate::adgraph::{Expr, ExprGraph};
use crate::nlp::ParametricNlp;

/// `min ½(w₁² + w₂²)  s.t.  w₁ + w₂ = p`.
///
/// Solution `w = (p/2, p/2)`, `λ = −p/2`; the manifold is affine in `p`.
pub fn oracle_eqp() -> ParametricNlp {
    let (w1, w2, p) = (Expr::w(0), Expr::w(1), Expr::p(0));
    let objective =
        ExprGraph::new(2, 1, &[0.5 * (w1.square() + w2.square())]).expect("valid graph");
    let equalities = ExprGraph::new(2, 1, &[w1 + w2 - p]).expect("valid graph");
    let inequalities = ExprGraph::new(2, 1, &[]).expect("valid graph");
    ParametricNlp::new(
        "oracle-eqp",
        objective,
        equalities,
        inequalities,
        vec![0, 1],
    )
    .expect("valid problem")
}

/// `min (w − p)²  s.t.  w ≤ 1`.
///
/// Solution `w = min(p, 1)`, `μ = max(0, 2(p − 1))`, with a kink at `p = 1`.
pub fn oracle_ineq() -> ParametricNlp {
    let (w, p) = (Expr::w(0), Expr::p(0));
    let objective = ExprGraph::new(1, 1, &[(&w - p).square()]).expect("valid graph");
    let equalities = ExprGraph::new(1, 1, &[]).expect("valid graph");
    let inequalities = ExprGraph::new(1, 1, &[w - 1.0]).expect("valid graph");
    ParametricNlp::new("oracle-ineq", objective, equalities, inequalities, vec![0])
        .expect("valid problem")
}

/// Closed-form `(w, λ)` of [`oracle_eqp`].
pub fn oracle_eqp_solution(p: f64) -> ([f64; 2], f64) {
    ([0.5 * p, 0.5 * p], -0.5 * p)
}

/// Closed-form `(w, μ)` of [`oracle_ineq`].
pub fn oracle_ineq_solution(p: f64) -> (f64, f64) {
    (p.min(1.0), (2.0 * (p - 1.0)).max(0.0))
}
