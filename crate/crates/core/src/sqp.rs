//! Line-search SQP for exact solves of `Π(p)`.
//!
//! Each iteration solves the inequality QP with an inner working-set loop of
//! equality-constrained subproblems, globalized by an ℓ1 merit function with
//! Armijo backtracking and a second-order correction. All linear algebra goes
//! through [`solve_eqp`]'s inertia-corrected factorization.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Inertia, LdlFactor, SaddleMatrix};
use crate::nlp::{
    active_indices, active_jacobian, check_regularity, kkt_residual, lagrangian_gradient, NlpError,
    ParametricNlp, PointKind, PrimalDualPoint, RegularityReport, DEFAULT_ACTIVITY_TOL,
    DEFAULT_COMP_MARGIN,
};

const ARMIJO_ETA: f64 = 1e-4;
const MIN_STEP: f64 = 1e-12;
const MAX_HESSIAN_SHIFT: f64 = 1e20;
const REFINEMENT_STEPS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub kkt_tol: f64,
    pub max_iter: usize,
    /// Initial ℓ1 penalty weight; raised monotonically as multipliers grow.
    pub merit_penalty: f64,
    pub regularization_floor: f64,
    pub linesearch_backtrack: f64,
    pub activity_tol: f64,
    pub comp_margin: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-8,
            max_iter: 100,
            merit_penalty: 10.0,
            regularization_floor: 1e-8,
            linesearch_backtrack: 0.5,
            activity_tol: DEFAULT_ACTIVITY_TOL,
            comp_margin: DEFAULT_COMP_MARGIN,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.kkt_tol > 0.0) {
            return Err("kkt_tol must be positive".into());
        }
        if self.max_iter < 1 {
            return Err("max_iter must be at least 1".into());
        }
        if !(self.merit_penalty > 0.0) {
            return Err("merit_penalty must be positive".into());
        }
        if !(self.regularization_floor > 0.0) {
            return Err("regularization_floor must be positive".into());
        }
        if !(self.linesearch_backtrack > 0.0 && self.linesearch_backtrack < 1.0) {
            return Err("linesearch_backtrack must lie in (0, 1)".into());
        }
        if !(self.activity_tol > 0.0) {
            return Err("activity_tol must be positive".into());
        }
        if !(self.comp_margin >= 0.0) {
            return Err("comp_margin must be nonnegative".into());
        }
        Ok(())
    }
}

/// A converged solve with its regularity diagnostics.
#[derive(Clone, Debug)]
pub struct Solution {
    pub point: PrimalDualPoint,
    pub regularity: RegularityReport,
    pub iterations: usize,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("no convergence after {iterations} iterations (best KKT error {best_error:.3e})")]
    MaxIterations {
        best: Box<PrimalDualPoint>,
        best_error: f64,
        iterations: usize,
    },
    #[error("QP subproblem has no feasible working set: {0}")]
    InfeasibleSubproblem(String),
    #[error("converged point fails regularity checks: {}", .solution.regularity.failures().join(", "))]
    RegularityFailure { solution: Box<Solution> },
    #[error("KKT matrix is singular after regularization")]
    SingularKkt,
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nlp(#[from] NlpError),
}

impl From<crate::adgraph::AdError> for SolveError {
    fn from(e: crate::adgraph::AdError) -> Self {
        SolveError::Nlp(NlpError::Eval(e))
    }
}

/// Solution of an equality-constrained QP step.
#[derive(Clone, Debug)]
pub struct EqpSolution {
    pub step: DVector<f64>,
    pub multipliers: DVector<f64>,
    /// `δ` added to the Hessian block (0 when no correction was needed).
    pub hessian_shift: f64,
    /// `δ_c` subtracted from the constraint block.
    pub constraint_shift: f64,
    pub inertia: Inertia,
}

impl EqpSolution {
    pub fn inertia_corrected(&self) -> bool {
        self.hessian_shift > 0.0 || self.constraint_shift > 0.0
    }
}

/// Inertia-corrected factorization of `[[H + δI, Aᵀ], [A, −δ_c I]]`.
pub(crate) struct KktSystem {
    matrix: SaddleMatrix,
    factor: LdlFactor,
    n: usize,
    hessian_shift: f64,
    constraint_shift: f64,
}

impl KktSystem {
    /// Unregularized factorization; `None` if `[[H, Aᵀ], [A, 0]]` is singular.
    pub(crate) fn exact(
        h: &DMatrix<f64>,
        a: &DMatrix<f64>,
        ordering: Option<&[usize]>,
    ) -> Option<Self> {
        let matrix = SaddleMatrix::new(h, a);
        let factor = match ordering {
            Some(o) if o.len() == matrix.dim() => matrix.factor(o),
            _ => matrix.factor(&matrix.ordering()),
        };
        if factor.is_singular() {
            return None;
        }
        Some(Self {
            matrix,
            factor,
            n: h.nrows(),
            hessian_shift: 0.0,
            constraint_shift: 0.0,
        })
    }

    pub(crate) fn matrix(&self) -> DMatrix<f64> {
        self.matrix.to_dense()
    }

    pub(crate) fn inertia(&self) -> Inertia {
        self.factor.inertia()
    }

    pub(crate) fn ordering(&self) -> &[usize] {
        self.factor.ordering()
    }

    /// Factorization with inertia correction. `ordering` is reused when given
    /// (the shifted trials share the pattern of the unshifted matrix).
    pub(crate) fn factorize(
        h: &DMatrix<f64>,
        a: &DMatrix<f64>,
        floor: f64,
        last_shift: f64,
        ordering: Option<&[usize]>,
    ) -> Option<Self> {
        let n = h.nrows();
        let m = a.nrows();
        let target = Inertia::new(n, m, 0);
        let base = SaddleMatrix::new(h, a);
        let ordering = match ordering {
            Some(o) if o.len() == n + m => o.to_vec(),
            _ => base.ordering(),
        };
        let factor = base.factor(&ordering);
        if factor.inertia() == target {
            return Some(Self {
                matrix: base,
                factor,
                n,
                hessian_shift: 0.0,
                constraint_shift: 0.0,
            });
        }
        // The constraint block is only perturbed once a Hessian shift alone
        // leaves zero pivots, which signals dependent constraint rows.
        let mut constraint_shift = 0.0;
        let (mut delta, growth) = if last_shift == 0.0 {
            (1e-4f64.max(floor), 100.0)
        } else {
            ((last_shift / 3.0).max(floor), 8.0)
        };
        while delta <= MAX_HESSIAN_SHIFT {
            let k = base.with_shifts(delta, constraint_shift);
            let factor = k.factor(&ordering);
            if factor.inertia() == target {
                return Some(Self {
                    matrix: k,
                    factor,
                    n,
                    hessian_shift: delta,
                    constraint_shift,
                });
            }
            if factor.inertia().zero > 0 && m > 0 && constraint_shift == 0.0 {
                constraint_shift = floor;
                continue;
            }
            delta *= growth;
        }
        None
    }

    /// Solves `K x = b` with up to a few steps of iterative refinement,
    /// stopping once the residual is at rounding level or stops shrinking.
    pub(crate) fn solve(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        let mut x = self.factor.solve(b)?;
        let mut prev = f64::INFINITY;
        for _ in 0..REFINEMENT_STEPS {
            let r = b - self.matrix.mul(&x);
            let err = r.amax();
            let floor = 8.0 * f64::EPSILON * (self.factor.scale() * x.amax() + b.amax());
            if err <= floor || err > 0.5 * prev {
                break;
            }
            prev = err;
            x += self.factor.solve(&r)?;
        }
        Some(x)
    }

    /// Solves `H d + Aᵀ y = −gradient`, `A d = −residuals`.
    pub(crate) fn solve_step(
        &self,
        gradient: &DVector<f64>,
        residuals: &DVector<f64>,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.n;
        let m = residuals.len();
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-gradient));
        rhs.rows_mut(n, m).copy_from(&(-residuals));
        let x = self.solve(&rhs)?;
        Some((x.rows(0, n).into_owned(), x.rows(n, m).into_owned()))
    }
}

/// Solves the saddle-point system `[H Aᵀ; A 0] [d; y] = [−gradient; −residuals]`
/// with inertia correction. Returns the step `d` and multipliers `y`.
pub fn solve_eqp(
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    gradient: &DVector<f64>,
    residuals: &DVector<f64>,
    regularization_floor: f64,
) -> Result<EqpSolution, SolveError> {
    let n = h.nrows();
    if !h.is_square()
        || a.ncols() != n && a.nrows() > 0
        || gradient.len() != n
        || residuals.len() != a.nrows()
    {
        return Err(NlpError::Invalid(format!(
            "inconsistent EQP shapes: H {}x{}, A {}x{}, gradient {}, residuals {}",
            h.nrows(),
            h.ncols(),
            a.nrows(),
            a.ncols(),
            gradient.len(),
            residuals.len()
        ))
        .into());
    }
    let a = if a.nrows() == 0 {
        DMatrix::zeros(0, n)
    } else {
        a.clone()
    };
    let sys = KktSystem::factorize(h, &a, regularization_floor, 0.0, None)
        .ok_or(SolveError::SingularKkt)?;
    let (step, multipliers) = sys
        .solve_step(gradient, residuals)
        .ok_or(SolveError::SingularKkt)?;
    Ok(EqpSolution {
        step,
        multipliers,
        hessian_shift: sys.hessian_shift,
        constraint_shift: sys.constraint_shift,
        inertia: sys.factor.inertia(),
    })
}

struct QpStep {
    d: DVector<f64>,
    lambda: DVector<f64>,
    /// Full-length inequality multipliers, zero off the working set.
    mu: DVector<f64>,
    working_set: Vec<usize>,
    system: KktSystem,
}

struct Iterate<'a> {
    nlp: &'a ParametricNlp,
    p: &'a [f64],
    cfg: &'a SolverConfig,
    /// KKT orderings by working set; the sparsity pattern only depends on it.
    orderings: RefCell<HashMap<Vec<usize>, Vec<usize>>>,
}

impl Iterate<'_> {
    fn merit(&self, w: &[f64], nu: f64) -> f64 {
        match self.nlp.values(w, self.p) {
            Ok((f, c, g)) => f + nu * infeasibility(&c, &g),
            Err(_) => f64::INFINITY,
        }
    }

    /// Inequality QP by a working-set loop over equality subproblems.
    fn solve_qp(
        &self,
        h: &DMatrix<f64>,
        fo: &crate::adgraph::FirstOrder,
        initial_ws: &[usize],
        last_shift: f64,
    ) -> Result<QpStep, SolveError> {
        let n_c = fo.equalities.len();
        let n_g = fo.inequalities.len();
        let viol_tol = 0.1 * self.cfg.kkt_tol;
        let mut ws: Vec<usize> = initial_ws.to_vec();
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        let mut one_at_a_time = false;
        let mut last_good: Option<QpStep> = None;
        let max_inner = 4 * n_g + 20;

        for _ in 0..max_inner {
            ws.sort_unstable();
            if !seen.insert(ws.clone()) {
                if one_at_a_time {
                    break;
                }
                one_at_a_time = true;
            }
            let a = active_jacobian(fo, &ws);
            let mut r = DVector::zeros(n_c + ws.len());
            r.rows_mut(0, n_c).copy_from(&fo.equalities);
            for (k, &j) in ws.iter().enumerate() {
                r[n_c + k] = fo.inequalities[j];
            }
            let cached = self.orderings.borrow().get(&ws).cloned();
            let solved = KktSystem::factorize(
                h,
                &a,
                self.cfg.regularization_floor,
                last_shift,
                cached.as_deref(),
            )
            .inspect(|sys| {
                if cached.is_none() {
                    self.orderings
                        .borrow_mut()
                        .insert(ws.clone(), sys.ordering().to_vec());
                }
            })
            .and_then(|sys| sys.solve_step(&fo.gradient, &r).map(|(d, y)| (sys, d, y)));
            let Some((system, d, y)) = solved else {
                // Dependent working set: back off to the last good one and add singly.
                match last_good.take() {
                    Some(prev) if !one_at_a_time => {
                        one_at_a_time = true;
                        ws = prev.working_set.clone();
                        last_good = Some(prev);
                        continue;
                    }
                    _ => {
                        return Err(SolveError::InfeasibleSubproblem(format!(
                            "working set {ws:?} is degenerate"
                        )))
                    }
                }
            };
            let mut mu = DVector::zeros(n_g);
            for (k, &j) in ws.iter().enumerate() {
                mu[j] = y[n_c + k];
            }
            let lambda = y.rows(0, n_c).into_owned();
            let lin = &fo.inequalities + &fo.jac_inequalities * &d;
            let step = QpStep {
                d,
                lambda,
                mu,
                working_set: ws.clone(),
                system,
            };

            let violated: Vec<(usize, f64)> = (0..n_g)
                .filter(|j| !ws.contains(j) && lin[*j] > viol_tol)
                .map(|j| (j, lin[j]))
                .collect();
            if !violated.is_empty() {
                if one_at_a_time {
                    let worst = violated
                        .iter()
                        .max_by(|a, b| a.1.total_cmp(&b.1))
                        .unwrap()
                        .0;
                    ws.push(worst);
                } else {
                    ws.extend(violated.iter().map(|v| v.0));
                }
                last_good = Some(step);
                continue;
            }
            let most_negative = ws
                .iter()
                .map(|&j| (j, step.mu[j]))
                .filter(|&(_, m)| m < -1e-12)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((j, _)) = most_negative {
                ws.retain(|&k| k != j);
                last_good = Some(step);
                continue;
            }
            return Ok(step);
        }
        // Cycling or cap reached: keep the last subproblem, clipping multiplier signs.
        let mut step = last_good
            .ok_or_else(|| SolveError::InfeasibleSubproblem("working-set loop failed".into()))?;
        step.mu.iter_mut().for_each(|m| *m = m.max(0.0));
        log::debug!("QP working-set loop stopped without certifying optimality");
        Ok(step)
    }
}

fn infeasibility(c: &[f64], g: &[f64]) -> f64 {
    c.iter().map(|v| v.abs()).sum::<f64>() + g.iter().map(|v| v.max(0.0)).sum::<f64>()
}

/// KKT error of `(w, λ, μ)` after zeroing `μ` off the detected active set.
/// Returns the error together with that active set and cleaned multipliers.
fn kkt_error(
    fo: &crate::adgraph::FirstOrder,
    lambda: &[f64],
    mu: &[f64],
    activity_tol: f64,
) -> (f64, Vec<usize>, Vec<f64>) {
    let g = fo.inequalities.as_slice();
    let active = active_indices(g, activity_tol);
    let mut mu_a = vec![0.0; mu.len()];
    for &j in &active {
        mu_a[j] = mu[j];
    }
    let stat = lagrangian_gradient(fo, lambda, &mu_a).amax();
    let mut err = stat.max(fo.equalities.amax());
    for (j, &gj) in g.iter().enumerate() {
        err = err.max(gj.max(0.0));
        if active.binary_search(&j).is_ok() {
            err = err.max(gj.abs()).max(-mu[j]);
        }
    }
    (err, active, mu_a)
}

/// Solves `Π(p)` from `warm_start`, or from the problem's initial guess with
/// zero multipliers.
pub fn solve(
    nlp: &ParametricNlp,
    p: &[f64],
    warm_start: Option<&PrimalDualPoint>,
    cfg: &SolverConfig,
) -> Result<Solution, SolveError> {
    cfg.validate().map_err(SolveError::Config)?;
    if p.len() != nlp.n_p() {
        return Err(NlpError::Dimension {
            what: "p",
            expected: nlp.n_p(),
            got: p.len(),
        }
        .into());
    }
    let (mut w, mut lambda, mut mu, mut ws) = match warm_start {
        Some(s) => {
            let mut probe = s.clone();
            probe.p = p.to_vec();
            nlp.check_point(&probe)?;
            (
                DVector::from_column_slice(&s.w),
                DVector::from_column_slice(&s.lambda),
                DVector::from_iterator(s.mu.len(), s.mu.iter().map(|m| m.max(0.0))),
                s.active_set.clone(),
            )
        }
        None => {
            let w0 = nlp.initial_guess(p);
            if w0.len() != nlp.n_w() {
                return Err(NlpError::Dimension {
                    what: "initial guess",
                    expected: nlp.n_w(),
                    got: w0.len(),
                }
                .into());
            }
            (
                DVector::from_vec(w0),
                DVector::zeros(nlp.n_c()),
                DVector::zeros(nlp.n_g()),
                Vec::new(),
            )
        }
    };

    let it = Iterate {
        nlp,
        p,
        cfg,
        orderings: RefCell::default(),
    };
    let mut nu = cfg.merit_penalty;
    let mut last_shift = 0.0;
    let mut best: Option<(f64, PrimalDualPoint)> = None;

    for iter in 0..cfg.max_iter {
        let fo = nlp.first_order(w.as_slice(), p)?;
        let (err, active, mu_a) =
            kkt_error(&fo, lambda.as_slice(), mu.as_slice(), cfg.activity_tol);
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            let mut s = PrimalDualPoint::primal(nlp, w.as_slice().to_vec(), p.to_vec());
            s.lambda = lambda.as_slice().to_vec();
            s.mu = mu_a.clone();
            s.active_set = active.clone();
            best = Some((err, s));
        }
        if err <= cfg.kkt_tol {
            return finish(nlp, w, lambda, mu_a, active, p, cfg, iter);
        }

        let h = nlp.hessian_ww(w.as_slice(), p, lambda.as_slice(), mu.as_slice())?;
        let qp = it.solve_qp(&h, &fo, &ws, last_shift)?;
        last_shift = qp.system.hessian_shift;

        let y_max = qp.lambda.amax().max(qp.mu.amax());
        if nu < 1.1 * y_max {
            nu = 1.5 * y_max + 1.0;
        }
        let infeas = infeasibility(fo.equalities.as_slice(), fo.inequalities.as_slice());
        let phi0 = fo.objective + nu * infeas;
        let slope = fo.gradient.dot(&qp.d) - nu * infeas;
        let armijo = |alpha: f64, val: f64| {
            val <= phi0 + ARMIJO_ETA * alpha * slope.min(0.0) + 1e-14 * phi0.abs()
        };

        let mut step = qp.d.clone();
        let mut alpha = 1.0;
        let trial = &w + &step;
        let mut accepted = armijo(1.0, it.merit(trial.as_slice(), nu));
        if !accepted {
            if let Some(soc) = second_order_correction(nlp, p, &trial, &qp) {
                let trial_soc = &w + &qp.d + &soc;
                if armijo(1.0, it.merit(trial_soc.as_slice(), nu)) {
                    step = &qp.d + soc;
                    accepted = true;
                }
            }
        }
        while !accepted {
            alpha *= cfg.linesearch_backtrack;
            if alpha < MIN_STEP {
                log::debug!("line search stalled at iteration {iter}");
                break;
            }
            let trial = &w + alpha * &qp.d;
            accepted = armijo(alpha, it.merit(trial.as_slice(), nu));
        }

        w += alpha * &step;
        lambda += alpha * (&qp.lambda - &lambda);
        let mu_qp = qp.mu.map(|m| m.max(0.0));
        mu += alpha * (&mu_qp - &mu);
        ws = qp.working_set;
        log::trace!(
            "sqp iter {iter}: err {err:.3e}, alpha {alpha:.3e}, |W| {}",
            ws.len()
        );
    }

    let fo = nlp.first_order(w.as_slice(), p)?;
    let (err, active, mu_a) = kkt_error(&fo, lambda.as_slice(), mu.as_slice(), cfg.activity_tol);
    if err <= cfg.kkt_tol {
        return finish(nlp, w, lambda, mu_a, active, p, cfg, cfg.max_iter);
    }
    let (best_error, best) = best.expect("at least one iterate");
    Err(SolveError::MaxIterations {
        best: Box::new(best),
        best_error,
        iterations: cfg.max_iter,
    })
}

fn second_order_correction(
    nlp: &ParametricNlp,
    p: &[f64],
    trial: &DVector<f64>,
    qp: &QpStep,
) -> Option<DVector<f64>> {
    let (_, c, g) = nlp.values(trial.as_slice(), p).ok()?;
    let n_c = c.len();
    let mut r = DVector::zeros(n_c + qp.working_set.len());
    r.rows_mut(0, n_c).copy_from_slice(&c);
    for (k, &j) in qp.working_set.iter().enumerate() {
        r[n_c + k] = g[j];
    }
    let zero = DVector::zeros(trial.len());
    qp.system.solve_step(&zero, &r).map(|(d, _)| d)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    nlp: &ParametricNlp,
    w: DVector<f64>,
    lambda: DVector<f64>,
    mu: Vec<f64>,
    active: Vec<usize>,
    p: &[f64],
    cfg: &SolverConfig,
    iterations: usize,
) -> Result<Solution, SolveError> {
    let mut point = PrimalDualPoint {
        w: w.as_slice().to_vec(),
        lambda: lambda.as_slice().to_vec(),
        mu,
        p: p.to_vec(),
        active_set: active,
        stationarity_norm: 0.0,
        kind: PointKind::ExactAnchor,
    };
    kkt_residual(nlp, &mut point)?;
    let regularity = check_regularity(nlp, &point, cfg.comp_margin)?;
    let solution = Solution {
        point,
        regularity,
        iterations,
    };
    if solution.regularity.passed() {
        Ok(solution)
    } else {
        Err(SolveError::RegularityFailure {
            solution: Box::new(solution),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eqp_with_one_equality() {
        let h = DMatrix::identity(2, 2);
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let sol = solve_eqp(
            &h,
            &a,
            &DVector::from_vec(vec![1.0, 1.0]),
            &DVector::from_vec(vec![-2.0]),
            1e-8,
        )
        .unwrap();
        assert_relative_eq!(sol.step[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(sol.step[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!((&a * &sol.step)[0], 2.0, epsilon = 1e-12);
        // y solves H d + Aᵀ y = −gradient.
        assert_relative_eq!(sol.multipliers[0], -2.0, epsilon = 1e-12);
        assert!(!sol.inertia_corrected());
    }

    #[test]
    fn eqp_without_constraints_is_a_newton_step() {
        let h = DMatrix::identity(1, 1);
        let a = DMatrix::zeros(0, 1);
        let sol = solve_eqp(
            &h,
            &a,
            &DVector::from_vec(vec![4.0]),
            &DVector::zeros(0),
            1e-8,
        )
        .unwrap();
        assert_relative_eq!(sol.step[0], -4.0, epsilon = 1e-14);
        assert_eq!(sol.multipliers.len(), 0);
    }

    #[test]
    fn indefinite_eqp_is_regularized() {
        let h = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let g = DVector::from_vec(vec![0.5, -1.0]);
        let r = DVector::from_vec(vec![0.25]);
        let sol = solve_eqp(&h, &a, &g, &r, 1e-8).unwrap();
        assert!(sol.inertia_corrected());
        assert!(sol.hessian_shift > 0.0);
        assert_eq!(sol.inertia, Inertia::new(2, 1, 0));
        // The linearized constraint holds for the regularized step.
        assert_relative_eq!(sol.step[0], -0.25, epsilon = 1e-6);
    }

    #[test]
    fn eqp_linear_solve_residual_is_tiny() {
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let g = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let r = DVector::from_vec(vec![0.7, -0.1]);
        let sol = solve_eqp(&h, &a, &g, &r, 1e-8).unwrap();
        let res1 = &h * &sol.step + a.transpose() * &sol.multipliers + &g;
        let res2 = &a * &sol.step + &r;
        let scale = g.amax().max(r.amax());
        assert!(res1.amax() <= 1e-10 * scale);
        assert!(res2.amax() <= 1e-10 * scale);
    }

    #[test]
    fn eqp_rejects_bad_shapes() {
        let h = DMatrix::identity(2, 2);
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        assert!(solve_eqp(&h, &a, &DVector::zeros(2), &DVector::zeros(1), 1e-8).is_err());
    }

    #[test]
    fn config_validation_names_the_field() {
        let cfg = SolverConfig {
            kkt_tol: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().unwrap_err().contains("kkt_tol"));
        let cfg = SolverConfig {
            linesearch_backtrack: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().unwrap_err().contains("linesearch_backtrack"));
    }
}
