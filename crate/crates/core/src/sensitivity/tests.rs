use approx::assert_relative_eq;
use proptest::prelude::*;

use super::*;
use crate::oracles::{oracle_eqp, oracle_eqp_solution, oracle_ineq, oracle_ineq_solution};
use crate::sqp::{solve, SolverConfig};

fn eqp_anchor(p: f64) -> (ParametricNlp, PrimalDualPoint) {
    let nlp = oracle_eqp();
    let sol = solve(&nlp, &[p], None, &SolverConfig::default()).unwrap();
    (nlp, sol.point)
}

fn ineq_anchor(p: f64) -> (ParametricNlp, PrimalDualPoint) {
    let nlp = oracle_ineq();
    let sol = solve(&nlp, &[p], None, &SolverConfig::default()).unwrap();
    (nlp, sol.point)
}

#[test]
fn kkt_matrix_of_eqp() {
    let (nlp, s) = eqp_anchor(1.0);
    let k = assemble_kkt(&nlp, &s).unwrap();
    let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
    assert_eq!(k.matrix(), expected);
}

#[test]
fn kkt_matrix_of_ineq_on_both_branches() {
    let (nlp, s) = ineq_anchor(2.0);
    assert_eq!(s.active_set, vec![0]);
    let k = assemble_kkt(&nlp, &s).unwrap();
    assert_eq!(
        k.matrix(),
        DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 0.0])
    );

    let (nlp, s) = ineq_anchor(0.3);
    assert!(s.active_set.is_empty());
    let k = assemble_kkt(&nlp, &s).unwrap();
    assert_eq!(k.matrix(), DMatrix::from_row_slice(1, 1, &[2.0]));
}

#[test]
fn sensitivity_of_eqp() {
    let (nlp, s) = eqp_anchor(1.0);
    let h = sensitivity_matrix(&nlp, &s).unwrap();
    // [[1,0,1],[0,1,1],[1,1,0]] H = (0, 0, 1)
    let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
    let oracle = m
        .lu()
        .solve(&DVector::from_vec(vec![0.0, 0.0, 1.0]))
        .unwrap();
    for i in 0..3 {
        assert_relative_eq!(h.h[(i, 0)], oracle[i], epsilon = 1e-12);
    }
    assert_relative_eq!(h.h[(0, 0)], 0.5, epsilon = 1e-12);
    assert_relative_eq!(h.h[(2, 0)], -0.5, epsilon = 1e-12);
}

#[test]
fn sensitivity_of_ineq_branches() {
    let (nlp, s) = ineq_anchor(2.0);
    let h = sensitivity_matrix(&nlp, &s).unwrap();
    assert_eq!(h.h.shape(), (2, 1));
    assert_relative_eq!(h.h[(0, 0)], 0.0, epsilon = 1e-12);
    assert_relative_eq!(h.h[(1, 0)], 2.0, epsilon = 1e-12);

    let (nlp, s) = ineq_anchor(0.3);
    let h = sensitivity_matrix(&nlp, &s).unwrap();
    assert_eq!(h.h.shape(), (1, 1));
    assert_relative_eq!(h.h[(0, 0)], 1.0, epsilon = 1e-12);
}

#[test]
fn irregular_points_are_refused() {
    let nlp = oracle_ineq();
    let p = 1.0 + 1e-12;
    let mut s = PrimalDualPoint::primal(&nlp, vec![1.0], vec![p]);
    s.mu = vec![2e-12];
    s.active_set = vec![0];
    assert!(matches!(
        sensitivity_matrix(&nlp, &s),
        Err(SensitivityError::Irregular(_))
    ));
}

#[test]
fn predictor_with_zero_step_is_identity() {
    let (nlp, s) = ineq_anchor(2.0);
    let h = sensitivity_matrix(&nlp, &s).unwrap();
    let hat = predict(&s, &h, &[0.0]);
    assert_eq!(hat.w, s.w);
    assert_eq!(hat.mu, s.mu);
    assert_eq!(hat.p, s.p);
    assert_eq!(hat.kind, PointKind::Augmented);
}

#[test]
fn predictor_is_exact_on_affine_manifolds() {
    let (nlp, s) = eqp_anchor(1.0);
    let h = sensitivity_matrix(&nlp, &s).unwrap();
    let hat = predict(&s, &h, &[0.4]);
    assert_relative_eq!(hat.w[0], 0.7, epsilon = 1e-12);
    assert_relative_eq!(hat.w[1], 0.7, epsilon = 1e-12);
    assert_relative_eq!(hat.lambda[0], -0.7, epsilon = 1e-12);

    let (nlp, s) = ineq_anchor(2.0);
    let h = sensitivity_matrix(&nlp, &s).unwrap();
    let hat = predict(&s, &h, &[0.5]);
    assert_relative_eq!(hat.w[0], 1.0, epsilon = 1e-12);
    assert_relative_eq!(hat.mu[0], 3.0, epsilon = 1e-12);
}

#[test]
fn corrector_leaves_exact_points_alone() {
    let (nlp, s) = eqp_anchor(1.0);
    let out = correct(&nlp, &s, &CorrectorConfig::default()).unwrap();
    assert_eq!(out.iterations, 0);
    assert_eq!(out.point.w, s.w);
    assert_eq!(out.point.lambda, s.lambda);
}

#[test]
fn corrector_on_eqp_takes_one_step() {
    let (nlp, s) = eqp_anchor(1.0);
    // Perturb the prediction so the corrector has work to do.
    let mut hat = s.clone();
    hat.p = vec![3.0];
    hat.w = vec![0.1, -0.4];
    hat.lambda = vec![5.0];
    let out = correct(&nlp, &hat, &CorrectorConfig::default()).unwrap();
    assert_eq!(out.iterations, 1);
    let (w, lam) = oracle_eqp_solution(3.0);
    assert_relative_eq!(out.point.w[0], w[0], epsilon = 1e-14);
    assert_relative_eq!(out.point.w[1], w[1], epsilon = 1e-14);
    assert_relative_eq!(out.point.lambda[0], lam, epsilon = 1e-14);
    assert!(out.point.stationarity_norm <= 1e-14);
}

#[test]
fn chord_mode_reuses_anchor_factorization() {
    let (nlp, s) = ineq_anchor(2.0);
    let h = sensitivity_matrix(&nlp, &s).unwrap();
    let hat = predict(&s, &h, &[0.5]);
    let cfg = CorrectorConfig {
        chord: true,
        ..Default::default()
    };
    let out = correct_with(&nlp, &hat, &cfg, Some(&h.kkt)).unwrap();
    assert_relative_eq!(out.point.w[0], 1.0, epsilon = 1e-12);
    assert_relative_eq!(out.point.mu[0], 3.0, epsilon = 1e-12);
}

#[test]
fn active_set_validation() {
    let (nlp, s) = ineq_anchor(2.0);
    let h = sensitivity_matrix(&nlp, &s).unwrap();
    let corrected = correct(&nlp, &predict(&s, &h, &[0.5]), &CorrectorConfig::default()).unwrap();
    assert_eq!(
        validate_active_set(&nlp, &corrected.point, 1e-6).unwrap(),
        ActiveSetStatus::Valid
    );
    assert_eq!(
        validate_active_set(&nlp, &s, 1e-6).unwrap(),
        ActiveSetStatus::Valid
    );

    let (nlp, s) = ineq_anchor(0.5);
    let h = sensitivity_matrix(&nlp, &s).unwrap();
    let hat = predict(&s, &h, &[1.0]);
    assert_relative_eq!(hat.w[0], 1.5, epsilon = 1e-12);
    assert_eq!(
        validate_active_set(&nlp, &hat, 1e-6).unwrap(),
        ActiveSetStatus::Changed
    );
    let err = correct(&nlp, &hat, &CorrectorConfig::default()).unwrap_err();
    assert_eq!(err.reason(), "active_set_changed");

    // Active branch crossing the kink: the multiplier turns negative.
    let (nlp, s) = ineq_anchor(1.5);
    let h = sensitivity_matrix(&nlp, &s).unwrap();
    let hat = predict(&s, &h, &[-1.0]);
    assert!(hat.mu[0] < 0.0);
    assert_eq!(
        validate_active_set(&nlp, &hat, 1e-6).unwrap(),
        ActiveSetStatus::Changed
    );
}

proptest! {
    #[test]
    fn eqp_predictor_matches_closed_form(p in -5.0f64..5.0, dp in -10.0f64..10.0) {
        let (nlp, s) = eqp_anchor(p);
        let h = sensitivity_matrix(&nlp, &s).unwrap();
        let hat = predict(&s, &h, &[dp]);
        let (w, lam) = oracle_eqp_solution(p + dp);
        prop_assert!((hat.w[0] - w[0]).abs() <= 1e-10);
        prop_assert!((hat.w[1] - w[1]).abs() <= 1e-10);
        prop_assert!((hat.lambda[0] - lam).abs() <= 1e-10);
    }

    #[test]
    fn ineq_corrected_points_match_closed_form(p in 1.05f64..3.0, dp in -0.04f64..1.0) {
        let (nlp, s) = ineq_anchor(p);
        let h = sensitivity_matrix(&nlp, &s).unwrap();
        let out = correct(&nlp, &predict(&s, &h, &[dp]), &CorrectorConfig::default()).unwrap();
        let (w, mu) = oracle_ineq_solution(p + dp);
        prop_assert!((out.point.w[0] - w).abs() <= 1e-10);
        prop_assert!((out.point.mu[0] - mu).abs() <= 1e-10);
    }
}

#[test]
fn early_discard_agrees_with_full_correction() {
    use crate::pendulum::{build_nlp, MpcSpec, PendulumParams};
    let nlp = build_nlp(
        &PendulumParams::default(),
        &MpcSpec::default().with_horizon(15),
    );
    let anchor = solve(&nlp, &[1.0, 0.0], None, &SolverConfig::default())
        .unwrap()
        .point;
    let sens = sensitivity_matrix(&nlp, &anchor).unwrap();
    let full = CorrectorConfig {
        early_discard: false,
        ..Default::default()
    };
    let early = CorrectorConfig::default();
    let mut saw_early_exit = false;
    for k in 0..40 {
        let dp = [0.08 * (k % 8) as f64 - 0.3, 0.4 * (k / 8) as f64 - 0.8];
        let mut hat = predict(&anchor, &sens, &dp);
        hat.p = vec![1.0 + dp[0], dp[1]];
        let a = correct_with(&nlp, &hat, &full, Some(&sens.kkt));
        let b = correct_with(&nlp, &hat, &early, Some(&sens.kkt));
        match (&a, &b) {
            (Ok(x), Ok(y)) => assert_eq!(x.point.w, y.point.w),
            (Err(x), Err(y)) => {
                assert_eq!(x.reason(), y.reason());
                if let (
                    CorrectorError::ActiveSetChanged { iterations: i, .. },
                    CorrectorError::ActiveSetChanged { iterations: j, .. },
                ) = (x, y)
                {
                    assert!(j <= i);
                    saw_early_exit |= j < i;
                }
            }
            _ => panic!("outcomes differ at dp = {dp:?}: {a:?} vs {b:?}"),
        }
    }
    assert!(saw_early_exit);
}
