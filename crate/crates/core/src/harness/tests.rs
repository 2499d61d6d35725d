use super::*;
use crate::augment::read_dataset_csv;

fn tiny_case() -> CaseConfig {
    CaseConfig {
        mpc: MpcSpec::default().with_horizon(10),
        anchors: vec![6, 6],
        per_anchor: vec![2, 2],
        probes: Some(8),
        probe_seed: 7,
        ..CaseConfig::default()
    }
}

fn zero_timings(mut r: CaseReport) -> CaseReport {
    r.t_exact_s = 0.0;
    r.t_augment_s = 0.0;
    r.t_exact_resolve_s = 0.0;
    for m in &mut r.modes {
        m.t_exact_s = 0.0;
        m.t_augment_s = 0.0;
    }
    r
}

#[test]
fn case_presets() {
    let c1 = CaseConfig::for_case(1).unwrap();
    assert_eq!(
        (c1.anchors.clone(), c1.samples_per_anchor()),
        (vec![10, 10], 25)
    );
    let c2 = CaseConfig::for_case(2).unwrap();
    assert_eq!(
        (c2.anchors.clone(), c2.samples_per_anchor()),
        (vec![3, 3], 121)
    );
    let c3 = CaseConfig::for_case(3).unwrap();
    assert_eq!(
        (c3.anchors.clone(), c3.samples_per_anchor()),
        (vec![1, 1], 1600)
    );
    assert!(matches!(
        CaseConfig::for_case(4),
        Err(HarnessError::Config(_))
    ));
}

#[test]
fn case_config_rejects_bad_fields() {
    let cfg = CaseConfig {
        probes: Some(0),
        ..CaseConfig::default()
    };
    assert!(cfg.validate().unwrap_err().to_string().contains("probes"));
    let cfg = CaseConfig {
        eps_tol: 0.0,
        ..CaseConfig::default()
    };
    assert!(cfg.validate().is_err());
    let cfg = CaseConfig {
        anchors: vec![3],
        ..CaseConfig::default()
    };
    assert!(cfg.validate().is_err());
    assert!(serde_json::from_str::<CaseConfig>(r#"{"anchor": [2, 2]}"#).is_err());
    let parsed: CaseConfig = serde_json::from_str(r#"{"anchors": [2, 2]}"#).unwrap();
    assert_eq!(parsed.per_anchor, vec![11, 11]);
}

#[test]
fn round_ms_keeps_three_decimals() {
    assert_eq!(round_ms(1.23456), 1.235);
    assert_eq!(round_ms(0.0004), 0.0);
}

#[test]
fn run_case_is_deterministic_and_writes_outputs() {
    let cfg = tiny_case();
    let dir = tempfile::tempdir().unwrap();
    let a = run_case(2, &cfg, Some(dir.path())).unwrap();
    let b = run_case(2, &cfg, None).unwrap();
    assert_eq!(
        zero_timings(a.report.clone()),
        zero_timings(b.report.clone())
    );
    assert_eq!(a.predictor_corrector.samples, b.predictor_corrector.samples);

    let r = &a.report;
    assert_eq!(r.n_exact, 36);
    assert_eq!(r.n_augmented + r.n_discarded, 144);
    assert!(r.n_augmented > 0);
    assert_eq!(r.n_resolved, 8);
    assert_eq!(r.seeds["probe_seed"], 7);
    assert!(r.t_exact_s >= 0.0 && r.t_augment_s >= 0.0 && r.t_exact_resolve_s >= 0.0);
    assert!(r.max_error_predictor_only >= 0.0 && r.max_error_predictor_corrector >= 0.0);
    assert!(r.max_error_predictor_corrector <= r.max_error_predictor_only);

    for name in [
        "case2_predictor_only.csv",
        "case2_predictor_corrector.csv",
        "case2_report.json",
        "case2.gp",
    ] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let back: CaseReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("case2_report.json")).unwrap())
            .unwrap();
    assert_eq!(&back, r);
    let csv =
        read_dataset_csv(fs::File::open(dir.path().join("case2_predictor_corrector.csv")).unwrap())
            .unwrap();
    assert_eq!(csv.samples.len(), a.predictor_corrector.samples.len());
    for s in csv.valid() {
        assert!(s.stationarity_norm <= cfg.eps_tol);
    }
}

#[test]
fn gnuplot_script_names_both_datasets() {
    let s = case_gnuplot("case3");
    assert!(s.contains("'case3_predictor_only.csv'"));
    assert!(s.contains("'case3_predictor_corrector.csv'"));
    assert!(s.contains("set output 'case3.png'"));
}

#[test]
fn rollout_config_validation() {
    assert!(RolloutConfig::default().validate().is_ok());
    assert!(RolloutConfig {
        dt: 0.0,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(RolloutConfig {
        duration: -1.0,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(RolloutConfig {
        tolerance: [0.0, 0.2],
        ..Default::default()
    }
    .validate()
    .is_err());
}

#[test]
fn trace_time_advances_by_dt() {
    let cfg = RolloutConfig {
        duration: 2.0,
        ..Default::default()
    };
    let trace = closed_loop(
        &Controller::Linear(LinearPolicy::new(0.0, 0.0, 0.0)),
        [1.0, 0.0],
        &cfg,
    )
    .unwrap();
    assert_eq!(trace.points.len(), 41);
    for w in trace.points.windows(2) {
        assert!(w[1].t > w[0].t);
        assert!((w[1].t - w[0].t - cfg.dt).abs() < 1e-12);
    }
    assert!(!trace.reached() && trace.timed_out);
}

#[test]
fn torque_is_saturated() {
    let cfg = RolloutConfig {
        duration: 0.5,
        ..Default::default()
    };
    let trace = closed_loop(
        &Controller::Linear(LinearPolicy::new(0.0, 0.0, 100.0)),
        [0.0, 0.0],
        &cfg,
    )
    .unwrap();
    assert!(trace.points.iter().all(|p| p.u == cfg.pendulum.u_max));
}

#[test]
fn start_at_target_stays_in_band() {
    let cfg = RolloutConfig::default();
    let expert = Expert::new(
        &cfg.pendulum,
        &MpcSpec::default().with_horizon(20),
        SolverConfig::default(),
    );
    let trace = closed_loop(&Controller::Expert(&expert), [3.14, 0.0], &cfg).unwrap();
    assert_eq!(trace.reached_at, Some(0.0));
    for p in &trace.points {
        assert!(
            (p.x[0] - 3.14).abs() <= 0.15 && p.x[1].abs() <= 0.2,
            "left band at t = {}",
            p.t
        );
    }
}

#[test]
fn band_check_wraps_the_angle() {
    let cfg = RolloutConfig {
        duration: 1.5,
        ..Default::default()
    };
    // Hold the pendulum at ω = 3.14 + 2π with the exact gravity torque.
    let w = 3.14 + 2.0 * std::f64::consts::PI;
    let hold = cfg.pendulum.m * cfg.pendulum.grav * cfg.pendulum.l * w.sin();
    let trace = closed_loop(
        &Controller::Linear(LinearPolicy::new(0.0, 0.0, hold)),
        [w, 0.0],
        &cfg,
    )
    .unwrap();
    assert_eq!(trace.reached_at, Some(0.0));
}

#[test]
fn linear_policy_settles_at_offset_equilibrium() {
    // Equilibria of u = −11ω − 7ω̇ + 35 satisfy −11ω + 35 = m g l sin ω.
    let pp = PendulumParams::default();
    let f = |w: f64| -11.0 * w + 35.0 - pp.m * pp.grav * pp.l * w.sin();
    let (mut lo, mut hi) = (2.0, 4.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let eq = 0.5 * (lo + hi);
    // The approach is slow, so simulate well past the task horizon.
    let cfg = RolloutConfig {
        duration: 80.0,
        ..Default::default()
    };
    let trace = closed_loop(
        &Controller::Linear(LinearPolicy::new(-11.0, -7.0, 35.0)),
        [0.0, 0.0],
        &cfg,
    )
    .unwrap();
    let last = trace.points.last().unwrap();
    assert!((last.x[0] - eq).abs() < 1e-6, "{} vs {eq}", last.x[0]);
    assert!(last.x[1].abs() < 1e-6);
}

#[test]
fn trace_csv_layout() {
    let cfg = RolloutConfig {
        duration: 0.1,
        ..Default::default()
    };
    let trace = closed_loop(
        &Controller::Linear(LinearPolicy::new(-1.0, 0.0, 0.0)),
        [0.5, 0.0],
        &cfg,
    )
    .unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&trace, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,omega,omegadot,u");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0.000,5.0000000000000000e-1,"));
    assert!(lines[3].starts_with("0.100,"));
    let script = rollout_gnuplot("trace.csv", [3.14, 0.0]);
    assert!(script.contains("set output 'trace.png'"));
}

fn short_imitation() -> ImitationConfig {
    ImitationConfig {
        mpc: MpcSpec::default().with_horizon(10),
        rollout: RolloutConfig {
            duration: 0.5,
            ..Default::default()
        },
        stop_on_success: false,
        ..Default::default()
    }
}

#[test]
fn imitation_requires_a_rollout() {
    let r = imitation_loop(
        LinearPolicy::new(-11.0, -7.0, 35.0),
        0,
        0,
        &short_imitation(),
    );
    assert!(matches!(r, Err(HarnessError::Config(_))));
}

#[test]
fn augmentation_multiplies_feedback_by_26() {
    let cfg = short_imitation();
    let k = LinearPolicy::new(-11.0, -7.0, 35.0);
    let plain = imitation_loop(k, 1, 0, &cfg).unwrap();
    let aug = imitation_loop(k, 1, 25, &cfg).unwrap();
    assert_eq!(plain.table.len(), 2);
    assert_eq!(aug.table.len(), 2);
    let seed = &plain.table[0];
    assert_eq!(seed.expert_queries, 11);
    assert_eq!(seed.augmented, 0);
    assert_eq!(seed.dataset_size, 11 - seed.expert_failures);
    let seed_aug = &aug.table[0];
    assert_eq!(seed_aug.expert_queries, 11);
    let anchors = 11 - seed_aug.expert_failures;
    assert_eq!(seed_aug.augmented + seed_aug.discarded, 25 * anchors);
    assert_eq!(seed_aug.dataset_size, anchors + seed_aug.augmented);
    let attempted = (anchors + seed_aug.augmented + seed_aug.discarded) as f64 / anchors as f64;
    assert_eq!(attempted, 26.0);
    assert!(seed_aug.dataset_size as f64 >= 0.9 * 26.0 * anchors as f64);
    for s in aug.dataset.valid() {
        assert!(s.stationarity_norm <= cfg.eps_tol);
    }
    assert!(aug.model.is_some());
}

#[test]
fn initial_linear_policy_is_only_a_seed() {
    let cfg = ImitationConfig {
        stop_on_success: true,
        ..short_imitation()
    };
    let res = imitation_loop(LinearPolicy::new(-11.0, -7.0, 35.0), 1, 0, &cfg).unwrap();
    assert_eq!(res.table[0].rollout, 0);
    assert_eq!(
        res.first_success(),
        res.table
            .iter()
            .skip(1)
            .find(|r| r.success)
            .map(|r| r.rollout)
    );
    assert_eq!(res.traces.len(), res.table.len());
}
