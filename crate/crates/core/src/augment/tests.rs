use super::*;
use crate::oracles::{oracle_eqp, oracle_eqp_solution, oracle_ineq, oracle_ineq_solution};

fn ineq_cfg(anchor: f64, half: f64, count: usize, mode: Mode) -> AugmentConfig {
    AugmentConfig {
        anchor_sampler: Sampler::Points {
            points: vec![vec![anchor]],
        },
        neighborhood_sampler: Sampler::Grid { dims: vec![count] },
        neighborhood: Some(vec![half]),
        mode,
        ..Default::default()
    }
}

#[test]
fn cell_centered_grid_tiles_box() {
    let g = cell_centered_grid(&vec![(0.0, 2.0), (-1.0, 1.0)], &[2, 1]);
    assert_eq!(g, vec![vec![0.5, 0.0], vec![1.5, 0.0]]);
}

#[test]
fn grid_anchor_cells_tile_the_box() {
    let pbox = vec![(0.0, 3.0), (-1.0, 1.0)];
    let cfg = AugmentConfig {
        anchor_sampler: Sampler::Grid { dims: vec![3, 2] },
        ..Default::default()
    };
    let cells = anchor_cells(&pbox, &cfg);
    assert_eq!(cells.len(), 6);
    let area: f64 = cells
        .iter()
        .map(|c| c.cell.iter().map(|(l, h)| h - l).product::<f64>())
        .sum();
    assert!((area - 6.0).abs() < 1e-12);
    assert_eq!(cells[0].cell, vec![(0.0, 1.0), (-1.0, 0.0)]);
}

#[test]
fn snake_order_reverses_odd_rows() {
    assert_eq!(snake_order(6, Some(&[2, 3])), vec![0, 1, 2, 5, 4, 3]);
    assert_eq!(snake_order(3, None), vec![0, 1, 2]);
}

#[test]
fn ineq_anchor_above_kink_discards_lower_branch() {
    let nlp = oracle_ineq();
    let pbox = vec![(0.0, 2.0)];
    let ds = generate(
        &nlp,
        &pbox,
        &ineq_cfg(1.0001, 1.0001, 40, Mode::PredictorCorrector),
        &SolverConfig::default(),
    )
    .unwrap();
    assert_eq!(ds.n_anchors(), 1);
    assert_eq!(ds.augmented().count(), 40);
    for s in ds.augmented() {
        if s.p[0] < 1.0 {
            assert_eq!(
                s.discarded,
                Some(DiscardReason::ActiveSetChanged),
                "p = {}",
                s.p[0]
            );
        } else {
            assert!(s.is_valid(), "p = {}", s.p[0]);
            assert!((s.u[0] - oracle_ineq_solution(s.p[0]).0).abs() < 1e-10);
            assert!(s.stationarity_norm <= 1e-6);
        }
    }
}

#[test]
fn predictor_only_zero_offset_reproduces_anchor() {
    let nlp = oracle_ineq();
    let pbox = vec![(0.0, 2.0)];
    // An odd cell-centered grid on a box centered at the anchor contains dp = 0.
    let ds = generate(
        &nlp,
        &pbox,
        &ineq_cfg(0.5, 0.25, 5, Mode::PredictorOnly),
        &SolverConfig::default(),
    )
    .unwrap();
    let anchor_u = ds.anchors().next().unwrap().u.clone();
    let mid = ds
        .augmented()
        .find(|s| s.p[0] == 0.5)
        .expect("dp = 0 sample");
    assert_eq!(mid.u, anchor_u);
}

#[test]
fn eqp_augmented_actions_are_exact() {
    let nlp = oracle_eqp();
    let pbox = vec![(-4.0, 4.0)];
    let cfg = AugmentConfig {
        anchor_sampler: Sampler::Grid { dims: vec![2] },
        neighborhood_sampler: Sampler::Grid { dims: vec![9] },
        mode: Mode::PredictorOnly,
        ..Default::default()
    };
    let ds = generate(&nlp, &pbox, &cfg, &SolverConfig::default()).unwrap();
    assert_eq!(ds.n_augmented(), 18);
    for s in ds.valid() {
        let (w, _) = oracle_eqp_solution(s.p[0]);
        assert!((s.u[0] - w[0]).abs() < 1e-10 && (s.u[1] - w[1]).abs() < 1e-10);
    }
    let probe = max_policy_error(&ds, &nlp, &SolverConfig::default(), 200, 1).unwrap();
    assert!(probe.max_error < 1e-10, "{probe:?}");
    assert_eq!(probe.probes, 18);
}

#[test]
fn one_sensitivity_call_per_anchor() {
    let nlp = oracle_ineq();
    let pbox = vec![(0.0, 0.9)];
    for count in [1, 7, 30] {
        let cfg = AugmentConfig {
            anchor_sampler: Sampler::Grid { dims: vec![3] },
            neighborhood_sampler: Sampler::Grid { dims: vec![count] },
            ..Default::default()
        };
        let ds = generate(&nlp, &pbox, &cfg, &SolverConfig::default()).unwrap();
        assert_eq!(ds.sensitivity_calls, 3);
        assert_eq!(ds.augmented().count(), 3 * count);
    }
}

#[test]
fn anchor_only_probe_is_near_zero() {
    let nlp = oracle_ineq();
    let cfg = AugmentConfig {
        anchor_sampler: Sampler::Grid { dims: vec![4] },
        neighborhood_sampler: Sampler::Grid { dims: vec![1] },
        ..Default::default()
    };
    let mut ds = generate(&nlp, &vec![(0.0, 2.0)], &cfg, &SolverConfig::default()).unwrap();
    ds.samples.retain(|s| s.kind == PointKind::ExactAnchor);
    let probe = max_policy_error(&ds, &nlp, &SolverConfig::default(), 200, 0).unwrap();
    assert_eq!(probe.probes, 4);
    assert!(probe.max_error <= 2e-8);
}

#[test]
fn path_following_samples_meet_tolerance() {
    let nlp = oracle_ineq();
    let cfg = AugmentConfig {
        chaining: Chaining::PathFollowing,
        ..ineq_cfg(0.4, 0.4, 17, Mode::PredictorCorrector)
    };
    let ds = generate(&nlp, &vec![(0.0, 0.95)], &cfg, &SolverConfig::default()).unwrap();
    assert_eq!(ds.sensitivity_calls, 1);
    assert!(ds.chain_factorizations > 0);
    let idx: Vec<_> = ds.augmented().map(|s| s.sample_index.unwrap()).collect();
    assert_eq!(idx, (0..17).collect::<Vec<_>>());
    for s in ds.augmented() {
        assert!(s.is_valid());
        assert!(s.stationarity_norm <= 1e-6);
    }
}

#[test]
fn generation_is_deterministic() {
    let nlp = oracle_ineq();
    let cfg = AugmentConfig {
        anchor_sampler: Sampler::UniformRandom { count: 4, seed: 9 },
        neighborhood_sampler: Sampler::UniformRandom { count: 6, seed: 3 },
        neighborhood: Some(vec![0.2]),
        ..Default::default()
    };
    let a = generate(&nlp, &vec![(0.0, 2.0)], &cfg, &SolverConfig::default()).unwrap();
    let b = generate(&nlp, &vec![(0.0, 2.0)], &cfg, &SolverConfig::default()).unwrap();
    let strip = |d: &Dataset| {
        let mut buf = Vec::new();
        write_dataset_csv(d, &mut buf).unwrap();
        buf
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn csv_round_trip_preserves_samples() {
    let nlp = oracle_ineq();
    let ds = generate(
        &nlp,
        &vec![(0.0, 2.0)],
        &ineq_cfg(1.0001, 1.0001, 6, Mode::PredictorCorrector),
        &SolverConfig::default(),
    )
    .unwrap();
    let mut buf = Vec::new();
    write_dataset_csv(&ds, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with(
        "p_0,u_0,kind,anchor_id,stationarity_norm,corrector_iters,discarded,reason\n"
    ));
    let back = read_dataset_csv(buf.as_slice()).unwrap();
    assert_eq!(back.samples.len(), ds.samples.len());
    for (x, y) in back.samples.iter().zip(&ds.samples) {
        assert_eq!(x.p, y.p);
        assert_eq!(x.u, y.u);
        assert_eq!(x.kind, y.kind);
        assert_eq!(x.discarded, y.discarded);
        assert_eq!(x.corrector_iters, y.corrector_iters);
        assert!(
            x.stationarity_norm == y.stationarity_norm
                || (x.stationarity_norm.is_nan() && y.stationarity_norm.is_nan())
        );
    }
}

#[test]
fn garbled_csv_reports_row() {
    let text = "p_0,u_0,kind,anchor_id,stationarity_norm,corrector_iters,discarded,reason\n\
                1.0,1.0,exact_anchor,0,0.0,0,false,\n\
                x,1.0,augmented,0,0.0,1,false,\n";
    match read_dataset_csv(text.as_bytes()) {
        Err(CsvError::Row { row, .. }) => assert_eq!(row, 3),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        read_dataset_csv("".as_bytes()),
        Err(CsvError::Header(_) | CsvError::Empty)
    ));
}

#[test]
fn config_errors_name_the_field() {
    let pbox = vec![(0.0, 1.0)];
    let cfg = AugmentConfig {
        neighborhood: Some(vec![-1.0]),
        ..ineq_cfg(0.5, 1.0, 3, Mode::PredictorOnly)
    };
    let e = cfg.validate(&pbox).unwrap_err().to_string();
    assert!(e.contains("neighborhood"), "{e}");
    let cfg = AugmentConfig {
        anchor_sampler: Sampler::Grid { dims: vec![2, 2] },
        ..Default::default()
    };
    assert!(cfg
        .validate(&pbox)
        .unwrap_err()
        .to_string()
        .contains("anchor_sampler"));
}

#[test]
fn failed_anchor_is_skipped() {
    // The kink at p = 1 fails strict complementarity; every jitter stays
    // within 0.1 of a tiny cell so all attempts fail.
    let nlp = oracle_ineq();
    let cfg = AugmentConfig {
        anchor_sampler: Sampler::Points {
            points: vec![vec![1.0], vec![0.3]],
        },
        neighborhood: Some(vec![1e-14]),
        neighborhood_sampler: Sampler::Grid { dims: vec![1] },
        ..Default::default()
    };
    let ds = generate(&nlp, &vec![(0.0, 2.0)], &cfg, &SolverConfig::default()).unwrap();
    assert_eq!(ds.n_anchors(), 1);
    assert_eq!(ds.anchor_failures.len(), 1);
    assert_eq!(ds.anchor_failures[0].anchor_id, 0);
    assert_eq!(ds.sensitivity_calls, 1);

    let only_bad = AugmentConfig {
        anchor_sampler: Sampler::Points {
            points: vec![vec![1.0]],
        },
        ..cfg
    };
    assert!(matches!(
        generate(&nlp, &vec![(0.0, 2.0)], &only_bad, &SolverConfig::default()),
        Err(AugmentError::NoAnchors(1))
    ));
}
