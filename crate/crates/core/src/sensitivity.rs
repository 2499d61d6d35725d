//! KKT sensitivities, the linear predictor and the fixed-active-set SQP
//! corrector.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adgraph::{AdError, FirstOrder};
use crate::linalg::Inertia;
use crate::nlp::{
    active_jacobian, check_regularity, kkt_residual, residual_from, NlpError, ParametricNlp,
    PointKind, PrimalDualPoint, DEFAULT_ACTIVITY_TOL, DEFAULT_COMP_MARGIN,
};
use crate::sqp::KktSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("KKT matrix is singular")]
    SingularKkt,
    #[error("point fails regularity checks: {}", .0.join(", "))]
    Irregular(Vec<&'static str>),
    #[error(transparent)]
    Nlp(#[from] NlpError),
}

impl From<AdError> for SensitivityError {
    fn from(e: AdError) -> Self {
        SensitivityError::Nlp(NlpError::Eval(e))
    }
}

/// Factorized KKT matrix `M = [[∇²L, ∇cᵀ, ∇g_Aᵀ], [∇c, 0, 0], [∇g_A, 0, 0]]`.
pub struct KktMatrix {
    system: KktSystem,
    n_w: usize,
    n_c: usize,
    active_set: Vec<usize>,
}

impl std::fmt::Debug for KktMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KktMatrix")
            .field("dim", &self.dim())
            .field("active_set", &self.active_set)
            .field("inertia", &self.inertia())
            .finish()
    }
}

impl KktMatrix {
    /// The matrix as a dense array.
    pub fn matrix(&self) -> DMatrix<f64> {
        self.system.matrix()
    }

    pub fn inertia(&self) -> Inertia {
        self.system.inertia()
    }

    pub fn dim(&self) -> usize {
        self.n_w + self.n_c + self.active_set.len()
    }

    pub fn active_set(&self) -> &[usize] {
        &self.active_set
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>, SensitivityError> {
        if b.len() != self.dim() {
            return Err(NlpError::Dimension {
                what: "kkt rhs",
                expected: self.dim(),
                got: b.len(),
            }
            .into());
        }
        self.system.solve(b).ok_or(SensitivityError::SingularKkt)
    }

    fn step(&self, fo: &FirstOrder) -> Result<(DVector<f64>, DVector<f64>), SensitivityError> {
        let mut r = DVector::zeros(self.n_c + self.active_set.len());
        r.rows_mut(0, self.n_c).copy_from(&fo.equalities);
        for (k, &j) in self.active_set.iter().enumerate() {
            r[self.n_c + k] = fo.inequalities[j];
        }
        debug_assert_eq!(fo.gradient.len(), self.n_w);
        self.system
            .solve_step(&fo.gradient, &r)
            .ok_or(SensitivityError::SingularKkt)
    }
}

fn factorize_at(
    nlp: &ParametricNlp,
    s: &PrimalDualPoint,
    fo: &FirstOrder,
    ordering: Option<&[usize]>,
) -> Result<KktMatrix, SensitivityError> {
    let h = nlp.hessian_ww(&s.w, &s.p, &s.lambda, &s.mu)?;
    let a = active_jacobian(fo, &s.active_set);
    let system = KktSystem::exact(&h, &a, ordering).ok_or(SensitivityError::SingularKkt)?;
    Ok(KktMatrix {
        system,
        n_w: nlp.n_w(),
        n_c: nlp.n_c(),
        active_set: s.active_set.clone(),
    })
}

/// Assembles and factorizes the KKT matrix at `s` on its active set.
pub fn assemble_kkt(
    nlp: &ParametricNlp,
    s: &PrimalDualPoint,
) -> Result<KktMatrix, SensitivityError> {
    nlp.check_point(s)?;
    let fo = nlp.first_order(&s.w, &s.p)?;
    factorize_at(nlp, s, &fo, None)
}

/// `∂s*/∂p` at an anchor, rows ordered `[Δw; Δλ; Δμ_A]`.
#[derive(Debug, Clone)]
pub struct SensitivityMatrix {
    pub h: DMatrix<f64>,
    pub anchor: PrimalDualPoint,
    pub active_set: Vec<usize>,
    pub kkt: Arc<KktMatrix>,
}

/// Stacks `∂φ/∂p = [∇²_wp L; ∇_p c; ∇_p g_A]`.
fn parameter_block(
    nlp: &ParametricNlp,
    s: &PrimalDualPoint,
) -> Result<DMatrix<f64>, SensitivityError> {
    let hwp = nlp.hessian_wp(&s.w, &s.p, &s.lambda, &s.mu)?;
    let (cp, gp) = nlp.parameter_jacobians(&s.w, &s.p)?;
    let (n_w, n_c, n_p) = (nlp.n_w(), nlp.n_c(), nlp.n_p());
    let mut b = DMatrix::zeros(n_w + n_c + s.active_set.len(), n_p);
    b.rows_mut(0, n_w).copy_from(&hwp);
    b.rows_mut(n_w, n_c).copy_from(&cp);
    for (k, &j) in s.active_set.iter().enumerate() {
        b.row_mut(n_w + n_c + k).copy_from(&gp.row(j));
    }
    Ok(b)
}

/// Computes `H = −M⁻¹ ∂φ/∂p` at a regular KKT point; irregular points are
/// refused. The factorization is kept for later solves at this anchor.
pub fn sensitivity_matrix(
    nlp: &ParametricNlp,
    s: &PrimalDualPoint,
) -> Result<SensitivityMatrix, SensitivityError> {
    sensitivity_matrix_with_margin(nlp, s, DEFAULT_COMP_MARGIN)
}

pub fn sensitivity_matrix_with_margin(
    nlp: &ParametricNlp,
    s: &PrimalDualPoint,
    comp_margin: f64,
) -> Result<SensitivityMatrix, SensitivityError> {
    let report = check_regularity(nlp, s, comp_margin)?;
    if !report.passed() {
        return Err(SensitivityError::Irregular(report.failures()));
    }
    let kkt = assemble_kkt(nlp, s)?;
    let rhs = -parameter_block(nlp, s)?;
    let mut h = DMatrix::zeros(rhs.nrows(), rhs.ncols());
    for k in 0..rhs.ncols() {
        let col = kkt.solve(&rhs.column(k).into_owned())?;
        h.set_column(k, &col);
    }
    Ok(SensitivityMatrix {
        h,
        anchor: s.clone(),
        active_set: s.active_set.clone(),
        kkt: Arc::new(kkt),
    })
}

/// Linear predictor `ŝ(p + dp) = s*(p) + H dp`. Performs no graph evaluation.
pub fn predict(anchor: &PrimalDualPoint, sens: &SensitivityMatrix, dp: &[f64]) -> PrimalDualPoint {
    assert_eq!(dp.len(), sens.h.ncols(), "dp length must equal n_p");
    let n_w = anchor.w.len();
    let n_c = anchor.lambda.len();
    let ds = &sens.h * DVector::from_column_slice(dp);
    let mut out = anchor.clone();
    for (i, wi) in out.w.iter_mut().enumerate() {
        *wi += ds[i];
    }
    for (i, li) in out.lambda.iter_mut().enumerate() {
        *li += ds[n_w + i];
    }
    out.mu.iter_mut().for_each(|m| *m = 0.0);
    for (k, &j) in sens.active_set.iter().enumerate() {
        out.mu[j] = anchor.mu[j] + ds[n_w + n_c + k];
    }
    out.p = anchor.p.iter().zip(dp).map(|(a, b)| a + b).collect();
    out.active_set = sens.active_set.clone();
    out.kind = PointKind::Augmented;
    out.stationarity_norm = f64::NAN;
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectorConfig {
    pub eps_tol: f64,
    pub max_corrector_iters: usize,
    pub activity_tol: f64,
    /// Reuse the anchor factorization for every step instead of refactorizing.
    pub chord: bool,
    /// Stop as soon as a contracting iterate violates the frozen active set
    /// by more than twice the last step could still undo.
    pub early_discard: bool,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        Self {
            eps_tol: 1e-6,
            max_corrector_iters: 10,
            activity_tol: DEFAULT_ACTIVITY_TOL,
            chord: false,
            early_discard: true,
        }
    }
}

impl CorrectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.eps_tol > 0.0) {
            return Err("eps_tol must be positive".into());
        }
        if !(self.activity_tol > 0.0) {
            return Err("activity_tol must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrectorError {
    #[error("corrector residual increased twice in a row: {residuals:?}")]
    Diverged { residuals: Vec<f64> },
    #[error("corrector did not reach tolerance in {iterations} iterations")]
    MaxIters {
        iterations: usize,
        residuals: Vec<f64>,
    },
    #[error("KKT matrix is singular at corrector iterate {iteration}")]
    SingularKkt { iteration: usize },
    #[error("active set changed after correction")]
    ActiveSetChanged {
        point: Box<PrimalDualPoint>,
        iterations: usize,
        residuals: Vec<f64>,
    },
    #[error(transparent)]
    Nlp(#[from] NlpError),
}

impl CorrectorError {
    /// Short machine-readable discard reason.
    pub fn reason(&self) -> &'static str {
        match self {
            CorrectorError::Diverged { .. } => "corrector_diverged",
            CorrectorError::MaxIters { .. } => "max_iters",
            CorrectorError::SingularKkt { .. } => "singular_kkt",
            CorrectorError::ActiveSetChanged { .. } => "active_set_changed",
            CorrectorError::Nlp(_) => "evaluation_error",
        }
    }
}

impl From<AdError> for CorrectorError {
    fn from(e: AdError) -> Self {
        CorrectorError::Nlp(NlpError::Eval(e))
    }
}

#[derive(Clone, Debug)]
pub struct Corrected {
    pub point: PrimalDualPoint,
    pub iterations: usize,
    /// Residual `max(‖∇_w L‖₂, ‖c‖∞, ‖g_A‖∞)` before each step and after the last.
    pub residuals: Vec<f64>,
}

/// Corrector residual: stationarity in the 2-norm and feasibility of `c`, `g_A`
/// in the max-norm.
fn corrector_residual(fo: &FirstOrder, s: &PrimalDualPoint) -> (f64, f64) {
    let r = residual_from(fo, s);
    let stat = r.stationarity_norm();
    (stat.max(r.feasibility_inf_norm()), stat)
}

/// Runs fixed-active-set SQP steps
/// `[w; λ; μ_A] ← [w; 0; 0] − M⁻¹ [∇J; c; g_A]` from `s_hat` until the
/// residual drops below `cfg.eps_tol`, then checks the frozen active set.
pub fn correct(
    nlp: &ParametricNlp,
    s_hat: &PrimalDualPoint,
    cfg: &CorrectorConfig,
) -> Result<Corrected, CorrectorError> {
    correct_with(nlp, s_hat, cfg, None)
}

/// As [`correct`]; in chord mode every step reuses `anchor_kkt`, otherwise
/// only its fill-reducing ordering is reused.
pub fn correct_with(
    nlp: &ParametricNlp,
    s_hat: &PrimalDualPoint,
    cfg: &CorrectorConfig,
    anchor_kkt: Option<&KktMatrix>,
) -> Result<Corrected, CorrectorError> {
    nlp.check_point(s_hat)?;
    let mut s = s_hat.clone();
    s.kind = PointKind::Augmented;
    let n_c = nlp.n_c();
    let mut fo = nlp.first_order(&s.w, &s.p)?;
    let (mut r, mut stat) = corrector_residual(&fo, &s);
    let mut residuals = vec![r];
    let mut iterations = 0;
    let mut increases = 0;
    // The pattern is fixed with the active set, so one ordering serves all steps.
    let mut ordering: Option<Vec<usize>> = anchor_kkt
        .filter(|k| k.active_set() == s.active_set.as_slice())
        .map(|k| k.system.ordering().to_vec());

    while r > cfg.eps_tol {
        if iterations == cfg.max_corrector_iters {
            return Err(CorrectorError::MaxIters {
                iterations,
                residuals,
            });
        }
        let fresh;
        let kkt = match (cfg.chord, anchor_kkt) {
            (true, Some(k)) if k.active_set() == s.active_set.as_slice() => k,
            _ => {
                fresh = factorize_at(nlp, &s, &fo, ordering.as_deref()).map_err(|e| match e {
                    SensitivityError::Nlp(e) => CorrectorError::Nlp(e),
                    _ => CorrectorError::SingularKkt {
                        iteration: iterations,
                    },
                })?;
                if ordering.is_none() {
                    ordering = Some(fresh.system.ordering().to_vec());
                }
                &fresh
            }
        };
        let (d, y) = kkt.step(&fo).map_err(|_| CorrectorError::SingularKkt {
            iteration: iterations,
        })?;
        for (wi, di) in s.w.iter_mut().zip(d.iter()) {
            *wi += di;
        }
        let mut step = d.amax();
        for (l, yl) in s.lambda.iter_mut().zip(&y.as_slice()[..n_c]) {
            step = step.max((yl - *l).abs());
            *l = *yl;
        }
        let mut mu = vec![0.0; s.mu.len()];
        for (k, &j) in s.active_set.iter().enumerate() {
            mu[j] = y[n_c + k];
        }
        for (old, new) in s.mu.iter().zip(&mu) {
            step = step.max((new - old).abs());
        }
        s.mu = mu;
        iterations += 1;

        fo = nlp.first_order(&s.w, &s.p)?;
        let prev = r;
        (r, stat) = corrector_residual(&fo, &s);
        residuals.push(r);
        if r > prev {
            increases += 1;
            if increases >= 2 {
                return Err(CorrectorError::Diverged { residuals });
            }
        } else {
            increases = 0;
            if cfg.early_discard
                && r > cfg.eps_tol
                && clearly_leaves_active_set(&fo, &s, d.amax(), step, cfg.activity_tol)
            {
                s.stationarity_norm = stat;
                return Err(CorrectorError::ActiveSetChanged {
                    point: Box::new(s),
                    iterations,
                    residuals,
                });
            }
        }
    }
    s.stationarity_norm = stat;

    if validate_active_set(nlp, &s, cfg.activity_tol)? != ActiveSetStatus::Valid {
        return Err(CorrectorError::ActiveSetChanged {
            point: Box::new(s),
            iterations,
            residuals,
        });
    }
    Ok(Corrected {
        point: s,
        iterations,
        residuals,
    })
}

/// True when some frozen-active multiplier or frozen-inactive constraint is
/// wrong-signed by more than twice what the last step (`primal_step` in `w`,
/// `step` overall) could still move it. While Newton iterates contract, the
/// remaining distance to the limit is below the last step, so such a sample
/// would fail the final check anyway.
fn clearly_leaves_active_set(
    fo: &FirstOrder,
    s: &PrimalDualPoint,
    primal_step: f64,
    step: f64,
    activity_tol: f64,
) -> bool {
    if s.active_set.iter().any(|&j| s.mu[j] < -2.0 * step) {
        return true;
    }
    fo.inequalities.iter().enumerate().any(|(j, &gj)| {
        gj > activity_tol
            && !s.active_set.contains(&j)
            && gj
                > activity_tol
                    + 2.0
                        * primal_step
                        * fo.jac_inequalities
                            .row(j)
                            .iter()
                            .map(|v| v.abs())
                            .sum::<f64>()
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveSetStatus {
    Valid,
    Changed,
}

/// `Changed` if a frozen-active multiplier is negative or a frozen-inactive
/// constraint exceeds `activity_tol`.
pub fn validate_active_set(
    nlp: &ParametricNlp,
    s: &PrimalDualPoint,
    activity_tol: f64,
) -> Result<ActiveSetStatus, NlpError> {
    nlp.check_point(s)?;
    if s.active_set.iter().any(|&j| s.mu[j] < 0.0) {
        return Ok(ActiveSetStatus::Changed);
    }
    let (_, _, g) = nlp.values(&s.w, &s.p)?;
    let changed = g
        .iter()
        .enumerate()
        .any(|(j, &gj)| gj > activity_tol && !s.active_set.contains(&j));
    Ok(if changed {
        ActiveSetStatus::Changed
    } else {
        ActiveSetStatus::Valid
    })
}

/// Fills `stationarity_norm` of a predicted point from one evaluation.
pub fn record_stationarity(nlp: &ParametricNlp, s: &mut PrimalDualPoint) -> Result<f64, NlpError> {
    let phi = kkt_residual(nlp, s)?;
    Ok(phi.amax())
}

#[cfg(test)]
mod tests;
