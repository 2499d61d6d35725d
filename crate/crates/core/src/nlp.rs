//! Parametric NLP `min_w J(w,p) s.t. c(w,p) = 0, g(w,p) <= 0`, its KKT
//! residual and active-set bookkeeping.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adgraph::{
    AdError, Block, BlockPair, ExprGraph, FirstOrder, FirstOrderEvaluator, HessianEvaluator,
    JacobianEvaluator, Program, Tape,
};
use crate::linalg::{saddle_matrix, Inertia, LdlFactor};

/// Default threshold separating active from inactive inequalities.
pub const DEFAULT_ACTIVITY_TOL: f64 = 1e-6;
/// Default lower bound on active multipliers for strict complementarity.
pub const DEFAULT_COMP_MARGIN: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NlpError {
    #[error(transparent)]
    Eval(#[from] AdError),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid problem: {0}")]
    Invalid(String),
}

pub type InitialGuess = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// The problem `Π(p)` with compiled derivative evaluators.
pub struct ParametricNlp {
    name: String,
    objective: ExprGraph,
    equalities: ExprGraph,
    inequalities: ExprGraph,
    action_indices: Vec<usize>,
    initial_guess: Option<InitialGuess>,
    values: Program,
    value_slots: Vec<u32>,
    first_order: FirstOrderEvaluator,
    hess_ww: HessianEvaluator,
    hess_wp: HessianEvaluator,
    jac_c_p: JacobianEvaluator,
    jac_g_p: JacobianEvaluator,
}

impl fmt::Debug for ParametricNlp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParametricNlp")
            .field("name", &self.name)
            .field("n_w", &self.n_w())
            .field("n_p", &self.n_p())
            .field("n_c", &self.n_c())
            .field("n_g", &self.n_g())
            .field("action_indices", &self.action_indices)
            .finish()
    }
}

impl ParametricNlp {
    pub fn new(
        name: impl Into<String>,
        objective: ExprGraph,
        equalities: ExprGraph,
        inequalities: ExprGraph,
        action_indices: Vec<usize>,
    ) -> Result<Self, NlpError> {
        objective.check_same_inputs(&equalities, "equalities")?;
        objective.check_same_inputs(&inequalities, "inequalities")?;
        if objective.n_outputs() != 1 {
            return Err(NlpError::Invalid(format!(
                "objective must be scalar, has {} outputs",
                objective.n_outputs()
            )));
        }
        let n_w = objective.n_w();
        let n_p = objective.n_p();
        let mut seen = vec![false; n_w];
        for &i in &action_indices {
            if i >= n_w || seen[i] {
                return Err(NlpError::Invalid(format!(
                    "action index {i} is out of range or repeated"
                )));
            }
            seen[i] = true;
        }

        let mut tape = Tape::new(n_w, n_p);
        let f = tape.import(&objective)[0];
        let c = tape.import(&equalities);
        let g = tape.import(&inequalities);
        let mut roots = vec![f];
        roots.extend_from_slice(&c);
        roots.extend_from_slice(&g);
        let (values, value_slots) = Program::compile(n_w, n_p, tape.nodes(), &roots);
        let first_order = FirstOrderEvaluator::compile(&mut tape, f, &c, &g);
        let hess_ww = HessianEvaluator::compile(&mut tape, BlockPair::WW, f, &c, &g);
        let hess_wp = HessianEvaluator::compile(&mut tape, BlockPair::WP, f, &c, &g);
        let entries = tape.jacobian_entries(&c, Block::P);
        let jac_c_p = JacobianEvaluator::compile(&tape, c.len(), Block::P, entries);
        let entries = tape.jacobian_entries(&g, Block::P);
        let jac_g_p = JacobianEvaluator::compile(&tape, g.len(), Block::P, entries);

        Ok(Self {
            name: name.into(),
            objective,
            equalities,
            inequalities,
            action_indices,
            initial_guess: None,
            values,
            value_slots,
            first_order,
            hess_ww,
            hess_wp,
            jac_c_p,
            jac_g_p,
        })
    }

    /// Problem-supplied primal starting point used when no warm start exists.
    pub fn with_initial_guess(mut self, guess: InitialGuess) -> Self {
        self.initial_guess = Some(guess);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_w(&self) -> usize {
        self.objective.n_w()
    }

    pub fn n_p(&self) -> usize {
        self.objective.n_p()
    }

    pub fn n_c(&self) -> usize {
        self.equalities.n_outputs()
    }

    pub fn n_g(&self) -> usize {
        self.inequalities.n_outputs()
    }

    pub fn objective(&self) -> &ExprGraph {
        &self.objective
    }

    pub fn equalities(&self) -> &ExprGraph {
        &self.equalities
    }

    pub fn inequalities(&self) -> &ExprGraph {
        &self.inequalities
    }

    pub fn action_indices(&self) -> &[usize] {
        &self.action_indices
    }

    pub fn initial_guess(&self, p: &[f64]) -> Vec<f64> {
        match &self.initial_guess {
            Some(f) => f(p),
            None => vec![0.0; self.n_w()],
        }
    }

    /// The action slice `u` of a primal vector.
    pub fn action(&self, w: &[f64]) -> Vec<f64> {
        self.action_indices.iter().map(|&i| w[i]).collect()
    }

    /// `(J, c, g)` at `(w, p)`.
    pub fn values(&self, w: &[f64], p: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), AdError> {
        let v = self.values.run(w, p)?;
        let s = &self.value_slots;
        let nc = self.n_c();
        Ok((
            v[s[0] as usize],
            s[1..1 + nc].iter().map(|&k| v[k as usize]).collect(),
            s[1 + nc..].iter().map(|&k| v[k as usize]).collect(),
        ))
    }

    pub fn first_order(&self, w: &[f64], p: &[f64]) -> Result<FirstOrder, AdError> {
        self.first_order.evaluate(w, p)
    }

    /// `∇²_ww L` for full-length multipliers `lambda`, `mu`.
    pub fn hessian_ww(
        &self,
        w: &[f64],
        p: &[f64],
        lambda: &[f64],
        mu: &[f64],
    ) -> Result<DMatrix<f64>, AdError> {
        self.hess_ww.evaluate(w, p, lambda, mu)
    }

    /// `∇²_wp L`.
    pub fn hessian_wp(
        &self,
        w: &[f64],
        p: &[f64],
        lambda: &[f64],
        mu: &[f64],
    ) -> Result<DMatrix<f64>, AdError> {
        self.hess_wp.evaluate(w, p, lambda, mu)
    }

    /// `(∇_p c, ∇_p g)` as `n_c × n_p` and `n_g × n_p` matrices.
    pub fn parameter_jacobians(
        &self,
        w: &[f64],
        p: &[f64],
    ) -> Result<(DMatrix<f64>, DMatrix<f64>), AdError> {
        Ok((self.jac_c_p.evaluate(w, p)?, self.jac_g_p.evaluate(w, p)?))
    }

    pub(crate) fn check_point(&self, s: &PrimalDualPoint) -> Result<(), NlpError> {
        let checks = [
            ("w", self.n_w(), s.w.len()),
            ("lambda", self.n_c(), s.lambda.len()),
            ("mu", self.n_g(), s.mu.len()),
            ("p", self.n_p(), s.p.len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(NlpError::Dimension {
                    what,
                    expected,
                    got,
                });
            }
        }
        if let Some(&j) = s.active_set.iter().find(|&&j| j >= self.n_g()) {
            return Err(NlpError::Invalid(format!(
                "active index {j} exceeds n_g = {}",
                self.n_g()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    ExactAnchor,
    Augmented,
}

/// Primal-dual vector `s = [w, λ, μ]` at parameter `p`.
///
/// `mu` has one entry per inequality and is zero outside `active_set`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimalDualPoint {
    pub w: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub p: Vec<f64>,
    pub active_set: Vec<usize>,
    pub stationarity_norm: f64,
    pub kind: PointKind,
}

impl PrimalDualPoint {
    /// Primal point with zero multipliers and an empty active set.
    pub fn primal(nlp: &ParametricNlp, w: Vec<f64>, p: Vec<f64>) -> Self {
        Self {
            w,
            lambda: vec![0.0; nlp.n_c()],
            mu: vec![0.0; nlp.n_g()],
            p,
            active_set: Vec::new(),
            stationarity_norm: f64::NAN,
            kind: PointKind::Augmented,
        }
    }

    pub fn action(&self, nlp: &ParametricNlp) -> Vec<f64> {
        nlp.action(&self.w)
    }

    /// Multipliers of the active inequalities, in `active_set` order.
    pub fn active_multipliers(&self) -> Vec<f64> {
        self.active_set.iter().map(|&j| self.mu[j]).collect()
    }
}

/// Blocks of `φ = [∇_w L; c; g_A]`.
#[derive(Clone, Debug)]
pub struct KktResidual {
    pub stationarity: DVector<f64>,
    pub equalities: DVector<f64>,
    pub active_inequalities: DVector<f64>,
}

impl KktResidual {
    pub fn stationarity_norm(&self) -> f64 {
        self.stationarity.norm()
    }

    /// Largest constraint violation among `c` and `g_A`.
    pub fn feasibility_inf_norm(&self) -> f64 {
        self.equalities.amax().max(self.active_inequalities.amax())
    }

    pub fn inf_norm(&self) -> f64 {
        self.stationarity.amax().max(self.feasibility_inf_norm())
    }

    pub fn stacked(&self) -> DVector<f64> {
        let n = self.stationarity.len() + self.equalities.len() + self.active_inequalities.len();
        DVector::from_iterator(
            n,
            self.stationarity
                .iter()
                .chain(self.equalities.iter())
                .chain(self.active_inequalities.iter())
                .copied(),
        )
    }
}

/// `∇_w L = ∇J + ∇cᵀλ + ∇gᵀμ` from first-order data.
pub(crate) fn lagrangian_gradient(fo: &FirstOrder, lambda: &[f64], mu: &[f64]) -> DVector<f64> {
    let mut grad = fo.gradient.clone();
    if !lambda.is_empty() {
        grad += fo
            .jac_equalities
            .tr_mul(&DVector::from_column_slice(lambda));
    }
    if !mu.is_empty() {
        grad += fo.jac_inequalities.tr_mul(&DVector::from_column_slice(mu));
    }
    grad
}

pub(crate) fn residual_from(fo: &FirstOrder, s: &PrimalDualPoint) -> KktResidual {
    KktResidual {
        stationarity: lagrangian_gradient(fo, &s.lambda, &s.mu),
        equalities: fo.equalities.clone(),
        active_inequalities: DVector::from_iterator(
            s.active_set.len(),
            s.active_set.iter().map(|&j| fo.inequalities[j]),
        ),
    }
}

/// Blocks of the KKT residual at `s`, using `s.active_set` for `g_A`.
pub fn kkt_residual_parts(
    nlp: &ParametricNlp,
    s: &PrimalDualPoint,
) -> Result<KktResidual, NlpError> {
    nlp.check_point(s)?;
    let fo = nlp.first_order(&s.w, &s.p)?;
    Ok(residual_from(&fo, s))
}

/// Stacked `φ = [∇_w L; c; g_A]`; stores `‖∇_w L‖₂` into `s.stationarity_norm`.
pub fn kkt_residual(
    nlp: &ParametricNlp,
    s: &mut PrimalDualPoint,
) -> Result<DVector<f64>, NlpError> {
    let r = kkt_residual_parts(nlp, s)?;
    s.stationarity_norm = r.stationarity_norm();
    Ok(r.stacked())
}

/// Indices `j` with `g_j(w, p) >= -activity_tol`, ascending.
pub fn detect_active_set(
    nlp: &ParametricNlp,
    s: &PrimalDualPoint,
    activity_tol: f64,
) -> Result<Vec<usize>, NlpError> {
    nlp.check_point(s)?;
    let (_, _, g) = nlp.values(&s.w, &s.p)?;
    Ok(active_indices(&g, activity_tol))
}

pub(crate) fn active_indices(g: &[f64], activity_tol: f64) -> Vec<usize> {
    g.iter()
        .enumerate()
        .filter(|(_, &v)| v >= -activity_tol)
        .map(|(j, _)| j)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoscStatus {
    Pass,
    Fail,
    /// The KKT matrix is numerically singular.
    Indeterminate,
}

/// Outcome of the LICQ / strict complementarity / SOSC checks at a point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub licq: bool,
    pub constraint_rank: usize,
    pub constraint_count: usize,
    pub strict_complementarity: bool,
    pub min_active_multiplier: Option<f64>,
    pub sosc: SoscStatus,
    pub inertia: Inertia,
}

impl RegularityReport {
    pub fn passed(&self) -> bool {
        self.licq && self.strict_complementarity && self.sosc == SoscStatus::Pass
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.licq {
            out.push("licq");
        }
        if !self.strict_complementarity {
            out.push("strict_complementarity");
        }
        match self.sosc {
            SoscStatus::Pass => {}
            SoscStatus::Fail => out.push("sosc"),
            SoscStatus::Indeterminate => out.push("sosc_indeterminate"),
        }
        out
    }
}

/// Stacks `[∇c; ∇g_A]` (one row per constraint).
pub(crate) fn active_jacobian(fo: &FirstOrder, active: &[usize]) -> DMatrix<f64> {
    let nc = fo.jac_equalities.nrows();
    let n_w = fo.jac_equalities.ncols();
    let mut a = DMatrix::zeros(nc + active.len(), n_w);
    a.rows_mut(0, nc).copy_from(&fo.jac_equalities);
    for (k, &j) in active.iter().enumerate() {
        a.row_mut(nc + k).copy_from(&fo.jac_inequalities.row(j));
    }
    a
}

fn numerical_rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    let smax = sv.amax();
    if smax == 0.0 {
        return 0;
    }
    let tol = 1e-10 * smax * (a.nrows().max(a.ncols()) as f64);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Checks LICQ, strict complementarity (`min μ_A >= comp_margin`) and SOSC
/// through the inertia of the KKT matrix at `s`.
pub fn check_regularity(
    nlp: &ParametricNlp,
    s: &PrimalDualPoint,
    comp_margin: f64,
) -> Result<RegularityReport, NlpError> {
    nlp.check_point(s)?;
    let fo = nlp.first_order(&s.w, &s.p)?;
    let a = active_jacobian(&fo, &s.active_set);
    let m = a.nrows();
    let rank = numerical_rank(&a);

    let min_mu = s
        .active_set
        .iter()
        .map(|&j| s.mu[j])
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.min(v)))
        });
    let strict = min_mu.is_none_or(|v| v >= comp_margin);

    let h = nlp.hessian_ww(&s.w, &s.p, &s.lambda, &s.mu)?;
    let factor = LdlFactor::new(&saddle_matrix(&h, &a));
    let inertia = factor.inertia();
    let sosc = if inertia.zero > 0 {
        SoscStatus::Indeterminate
    } else if inertia == Inertia::new(nlp.n_w(), m, 0) {
        SoscStatus::Pass
    } else {
        SoscStatus::Fail
    };

    Ok(RegularityReport {
        licq: rank == m,
        constraint_rank: rank,
        constraint_count: m,
        strict_complementarity: strict,
        min_active_multiplier: min_mu,
        sosc,
        inertia,
    })
}
