use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn w(i: usize) -> Expr {
    Expr::w(i)
}

fn p(i: usize) -> Expr {
    Expr::p(i)
}

fn empty(n_w: usize, n_p: usize) -> ExprGraph {
    ExprGraph::new(n_w, n_p, &[]).unwrap()
}

/// Central differences of every output with respect to one block.
fn fd_jacobian(g: &ExprGraph, block: Block, wv: &[f64], pv: &[f64], h: f64) -> DMatrix<f64> {
    let n = match block {
        Block::W => wv.len(),
        Block::P => pv.len(),
    };
    let mut out = DMatrix::zeros(g.n_outputs(), n);
    for k in 0..n {
        let (mut wp, mut pp) = (wv.to_vec(), pv.to_vec());
        let (mut wm, mut pm) = (wv.to_vec(), pv.to_vec());
        match block {
            Block::W => {
                wp[k] += h;
                wm[k] -= h;
            }
            Block::P => {
                pp[k] += h;
                pm[k] -= h;
            }
        }
        let fp = g.evaluate(&wp, &pp).unwrap();
        let fm = g.evaluate(&wm, &pm).unwrap();
        for r in 0..g.n_outputs() {
            out[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    out
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

use nalgebra::DMatrix;

#[test]
fn evaluate_trivial_examples() {
    let sq = ExprGraph::new(1, 0, &[w(0).square()]).unwrap();
    assert_eq!(sq.evaluate(&[3.0], &[]).unwrap(), vec![9.0]);

    let s = ExprGraph::new(1, 0, &[w(0).sin()]).unwrap();
    assert_eq!(s.evaluate(&[0.0], &[]).unwrap(), vec![0.0]);

    // u - b*omegadot - m*g*l*sin(omega) at rest with zero torque.
    let (m, l, grav, b) = (1.0, 1.0, 9.81, 0.1);
    let dyn_rhs = ExprGraph::new(3, 0, &[w(2) - b * w(1) - m * grav * l * w(0).sin()]).unwrap();
    assert_eq!(dyn_rhs.evaluate(&[0.0, 0.0, 0.0], &[]).unwrap(), vec![0.0]);
}

#[test]
fn evaluate_reports_dimension_mismatch_and_domain_errors() {
    let g = ExprGraph::new(2, 1, &[w(0) + w(1) * p(0)]).unwrap();
    assert!(matches!(
        g.evaluate(&[1.0], &[0.0]),
        Err(AdError::DimensionMismatch { what: "w", .. })
    ));
    assert!(matches!(
        g.evaluate(&[1.0, 2.0], &[]),
        Err(AdError::DimensionMismatch { what: "p", .. })
    ));

    let root = ExprGraph::new(1, 0, &[w(0).sqrt()]).unwrap();
    match root.evaluate(&[-1.0], &[]) {
        Err(AdError::Domain { op, node }) => {
            assert_eq!(op, "sqrt");
            assert!(matches!(root.nodes()[node], NodeKind::Sqrt(_)));
        }
        other => panic!("expected domain error, got {other:?}"),
    }
    let div = ExprGraph::new(1, 0, &[1.0 / w(0)]).unwrap();
    assert!(matches!(
        div.evaluate(&[0.0], &[]),
        Err(AdError::Domain { op: "div", .. })
    ));
    let frac = ExprGraph::new(1, 0, &[w(0).powf(0.5)]).unwrap();
    assert!(matches!(
        frac.evaluate(&[-2.0], &[]),
        Err(AdError::Domain { op: "pow", .. })
    ));
}

#[test]
fn out_of_range_input_is_rejected() {
    let err = ExprGraph::new(1, 1, &[w(3)]).unwrap_err();
    assert_eq!(
        err,
        AdError::UnknownInput {
            block: Block::W,
            index: 3,
            size: 1
        }
    );
    assert!(ExprGraph::new(1, 1, &[p(1)]).is_err());
}

#[test]
fn graph_is_topologically_ordered_and_hash_consed() {
    let x = w(0).sin() * w(1);
    let y = w(0).sin() * w(1) + x.clone();
    let g = ExprGraph::new(2, 0, &[x, y]).unwrap();
    for (i, n) in g.nodes().iter().enumerate() {
        for c in n.children().into_iter().flatten() {
            assert!((c as usize) < i);
        }
    }
    // sin(w0)*w1 appears once even though it was built twice.
    let muls = g
        .nodes()
        .iter()
        .filter(|n| matches!(n, NodeKind::Mul(..)))
        .count();
    assert_eq!(muls, 1);
}

#[test]
fn linear_constraint_jacobians() {
    let c = ExprGraph::new(2, 1, &[w(0) + w(1) - p(0)]).unwrap();
    let jw = c.jacobian(Block::W).unwrap();
    let jp = c.jacobian(Block::P).unwrap();
    for (a, b, q) in [(0.0, 0.0, 0.0), (1.5, -2.0, 7.0)] {
        assert_eq!(
            jw.evaluate(&[a, b], &[q]).unwrap(),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0])
        );
        assert_eq!(
            jp.evaluate(&[a, b], &[q]).unwrap(),
            DMatrix::from_row_slice(1, 1, &[-1.0])
        );
    }
    let g = ExprGraph::new(1, 0, &[w(0) - 1.0]).unwrap();
    assert_eq!(
        g.jacobian(Block::W).unwrap().evaluate(&[4.0], &[]).unwrap()[(0, 0)],
        1.0
    );
}

#[test]
fn every_primitive_matches_central_differences() {
    // One output per primitive, arguments kept inside each primitive's domain.
    let a = w(0);
    let b = w(1);
    let q = p(0);
    let outputs = vec![
        &a + &b * &q,
        &a - &q,
        &a * &b * &q,
        &a / (&b * &b + 1.0),
        -(&a * &q),
        (&a * &a + 1.0).powf(1.5),
        (&a * &q).sin(),
        (&b - &q).cos(),
        (0.3 * &a * &b).exp(),
        (&a * &a + &b * &b + &q * &q + 0.5).sqrt(),
        (&b * &b + 2.0).powf(-2.0),
    ];
    let g = ExprGraph::new(2, 1, &outputs).unwrap();
    let jw = g.jacobian(Block::W).unwrap();
    let jp = g.jacobian(Block::P).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let wv = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let pv = [rng.gen_range(-2.0..2.0)];
        for (ev, block) in [(&jw, Block::W), (&jp, Block::P)] {
            let exact = ev.evaluate(&wv, &pv).unwrap();
            let fd = fd_jacobian(&g, block, &wv, &pv, 1e-5);
            for (x, y) in exact.iter().zip(fd.iter()) {
                assert!(rel_err(*x, *y) < 1e-5, "exact {x} vs fd {y}");
            }
        }
    }
}

#[test]
fn quadratic_lagrangian_hessian_blocks() {
    // L = ½(w0² + w1²) + λ (w0 + w1 - p)
    let obj = ExprGraph::new(2, 1, &[0.5 * (w(0).square() + w(1).square())]).unwrap();
    let eq = ExprGraph::new(2, 1, &[w(0) + w(1) - p(0)]).unwrap();
    let ineq = empty(2, 1);
    let ww = hessian_lagrangian(&obj, &eq, &ineq, BlockPair::WW).unwrap();
    let wp = hessian_lagrangian(&obj, &eq, &ineq, BlockPair::WP).unwrap();
    let h = ww.evaluate(&[0.3, -0.7], &[1.0], &[-0.5], &[]).unwrap();
    assert_eq!(h, DMatrix::identity(2, 2));
    let hp = wp.evaluate(&[0.3, -0.7], &[1.0], &[-0.5], &[]).unwrap();
    assert_eq!(hp, DMatrix::zeros(2, 1));
}

#[test]
fn mixed_block_of_tracking_objective() {
    // L = (w - p)² + μ (w - 1): ∂²L/∂w∂p = -2, confirmed by differencing ∂L/∂w in p.
    let obj = ExprGraph::new(1, 1, &[(w(0) - p(0)).square()]).unwrap();
    let ineq = ExprGraph::new(1, 1, &[w(0) - 1.0]).unwrap();
    let wp = hessian_lagrangian(&obj, &empty(1, 1), &ineq, BlockPair::WP).unwrap();
    let hp = wp.evaluate(&[1.0], &[2.0], &[], &[2.0]).unwrap();
    assert_eq!(hp[(0, 0)], -2.0);

    let grad = obj.jacobian(Block::W).unwrap();
    let h = 1e-5;
    let gp = grad.evaluate(&[1.0], &[2.0 + h]).unwrap()[(0, 0)];
    let gm = grad.evaluate(&[1.0], &[2.0 - h]).unwrap()[(0, 0)];
    assert!(((gp - gm) / (2.0 * h) + 2.0).abs() < 1e-8);
}

#[test]
fn hessian_of_nonlinear_lagrangian_matches_differenced_gradient() {
    let obj = ExprGraph::new(
        3,
        1,
        &[w(0).sin() * w(1) + (w(2) * p(0)).exp() + w(0) / (w(2).square() + 1.0)],
    )
    .unwrap();
    let eq = ExprGraph::new(3, 1, &[w(0) * w(1) * w(2) - p(0), (w(1) * p(0)).cos()]).unwrap();
    let ineq = ExprGraph::new(3, 1, &[(w(0).square() + w(1).square()).sqrt() - 2.0]).unwrap();
    let ww = hessian_lagrangian(&obj, &eq, &ineq, BlockPair::WW).unwrap();
    let wp = hessian_lagrangian(&obj, &eq, &ineq, BlockPair::WP).unwrap();

    let lam = [0.7, -1.3];
    let mu = [0.4];
    // ∇_w L via the first-derivative evaluators.
    let gj = obj.jacobian(Block::W).unwrap();
    let cj = eq.jacobian(Block::W).unwrap();
    let hj = ineq.jacobian(Block::W).unwrap();
    let grad_l = |wv: &[f64], pv: &[f64]| -> Vec<f64> {
        let a = gj.evaluate(wv, pv).unwrap();
        let b = cj.evaluate(wv, pv).unwrap();
        let c = hj.evaluate(wv, pv).unwrap();
        (0..3)
            .map(|k| a[(0, k)] + lam[0] * b[(0, k)] + lam[1] * b[(1, k)] + mu[0] * c[(0, k)])
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-5;
    for _ in 0..10 {
        let wv: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pv = vec![rng.gen_range(-1.0..1.0)];
        let hw = ww.evaluate(&wv, &pv, &lam, &mu).unwrap();
        assert_eq!(hw, hw.transpose());
        for k in 0..3 {
            let mut a = wv.clone();
            let mut b = wv.clone();
            a[k] += h;
            b[k] -= h;
            let (ga, gb) = (grad_l(&a, &pv), grad_l(&b, &pv));
            for r in 0..3 {
                assert!(rel_err(hw[(r, k)], (ga[r] - gb[r]) / (2.0 * h)) < 1e-5);
            }
        }
        let hp = wp.evaluate(&wv, &pv, &lam, &mu).unwrap();
        let ga = grad_l(&wv, &[pv[0] + h]);
        let gb = grad_l(&wv, &[pv[0] - h]);
        for r in 0..3 {
            assert!(rel_err(hp[(r, 0)], (ga[r] - gb[r]) / (2.0 * h)) < 1e-5);
        }
    }
}

#[test]
fn evaluation_is_bit_reproducible() {
    let g = ExprGraph::new(
        2,
        1,
        &[(w(0) * p(0)).sin().exp() / (w(1).square() + 1.0).sqrt()],
    )
    .unwrap();
    let jw = g.jacobian(Block::W).unwrap();
    let a = g.evaluate(&[0.1234, -5.5], &[0.77]).unwrap();
    let b = g.evaluate(&[0.1234, -5.5], &[0.77]).unwrap();
    assert_eq!(a[0].to_bits(), b[0].to_bits());
    let ja = jw.evaluate(&[0.1234, -5.5], &[0.77]).unwrap();
    let jb = jw.evaluate(&[0.1234, -5.5], &[0.77]).unwrap();
    assert!(ja
        .iter()
        .zip(jb.iter())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn incompatible_blocks_are_rejected() {
    let obj = ExprGraph::new(2, 1, &[w(0)]).unwrap();
    let eq = ExprGraph::new(3, 1, &[w(2)]).unwrap();
    assert!(matches!(
        hessian_lagrangian(&obj, &eq, &empty(2, 1), BlockPair::WW),
        Err(AdError::IncompatibleGraphs(_))
    ));
}

#[test]
fn long_sums_stay_shallow() {
    let terms: Vec<Expr> = (0..1000).map(|i| w(i % 3) * (i as f64)).collect();
    let g = ExprGraph::new(3, 0, &[Expr::sum(terms)]).unwrap();
    let v = g.evaluate(&[1.0, 1.0, 1.0], &[]).unwrap()[0];
    assert_eq!(v, (0..1000).sum::<usize>() as f64);
}
