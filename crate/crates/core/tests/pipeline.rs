use sensaug::augment::{
    generate, read_dataset_csv, write_dataset_csv, AugmentConfig, Dataset, Mode, Sampler,
};
use sensaug::harness::{run_case, CaseConfig};
use sensaug::pendulum::{build_nlp, parameter_box, MpcSpec, PendulumParams};
use sensaug::policy::fit;
use sensaug::sqp::{solve, SolverConfig};

fn small_pendulum_config(mode: Mode) -> AugmentConfig {
    AugmentConfig {
        anchor_sampler: Sampler::Grid { dims: vec![5, 5] },
        neighborhood_sampler: Sampler::UniformRandom { count: 8, seed: 11 },
        mode,
        ..AugmentConfig::default()
    }
}

#[test]
fn dataset_does_not_depend_on_thread_count() {
    let nlp = build_nlp(
        &PendulumParams::default(),
        &MpcSpec::default().with_horizon(12),
    );
    let cfg = small_pendulum_config(Mode::PredictorCorrector);
    let run = |threads: usize| -> Dataset {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| generate(&nlp, &parameter_box(), &cfg, &SolverConfig::default()).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.sensitivity_calls, a.n_anchors());
}

#[test]
fn csv_fit_predict_near_target() {
    let spec = MpcSpec::default().with_horizon(20);
    let nlp = build_nlp(&PendulumParams::default(), &spec);
    let ds = generate(
        &nlp,
        &parameter_box(),
        &small_pendulum_config(Mode::PredictorCorrector),
        &SolverConfig::default(),
    )
    .unwrap();
    let mut buf = Vec::new();
    write_dataset_csv(&ds, &mut buf).unwrap();
    let back = read_dataset_csv(buf.as_slice()).unwrap();
    assert_eq!(back.valid().count(), ds.valid().count());

    let model = fit(&back, None).unwrap();
    assert_eq!(model.centers.len(), ds.valid().count());
    for p in [[3.14, 0.0], [1.0, -2.0]] {
        assert_eq!(fit(&ds, None).unwrap().predict(&p), model.predict(&p));
    }
}

#[test]
fn corrector_dataset_gives_the_better_policy() {
    let cfg = CaseConfig {
        probes: Some(100),
        ..CaseConfig::for_case(1).unwrap()
    };
    let out = run_case(1, &cfg, None).unwrap();
    let r = &out.report;
    assert!(r.max_error_predictor_corrector < r.max_error_predictor_only);

    // Both policies are fitted on the valid samples of their own mode and
    // compared against exact solves on a held-out 20 x 20 grid.
    let nlp = build_nlp(&cfg.pendulum, &cfg.mpc);
    let po = fit(&out.predictor_only, None).unwrap();
    let pc = fit(&out.predictor_corrector, None).unwrap();
    let (mut sup_po, mut sup_pc) = (0.0f64, 0.0f64);
    for i in 0..20 {
        for j in 0..20 {
            let p = [
                (i as f64 + 0.37) * 2.0 * std::f64::consts::PI / 20.0,
                -5.0 + (j as f64 + 0.61) * 0.5,
            ];
            let Ok(sol) = solve(&nlp, &p, None, &cfg.solver) else {
                continue;
            };
            let u = sol.point.action(&nlp)[0];
            sup_po = sup_po.max((po.predict(&p)[0] - u).abs());
            sup_pc = sup_pc.max((pc.predict(&p)[0] - u).abs());
        }
    }
    assert!(
        sup_pc < sup_po,
        "corrector {sup_pc} vs predictor-only {sup_po}"
    );

    // Holding the pendulum near upright needs almost no torque.
    let target = [3.14, 0.0];
    let exact = solve(&nlp, &target, None, &cfg.solver)
        .unwrap()
        .point
        .action(&nlp)[0];
    assert!(exact.abs() <= 0.5, "exact action {exact}");
    assert!(
        pc.predict(&target)[0].abs() <= 0.5,
        "model action {:?}",
        pc.predict(&target)
    );
}
