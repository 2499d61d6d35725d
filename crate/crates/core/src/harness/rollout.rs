use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::augment::{generate_cells, AnchorCell, AugmentConfig, Dataset, Mode, Sampler};
use crate::nlp::ParametricNlp;
use crate::pendulum::{build_nlp, plant_step, MpcSpec, PendulumParams};
use crate::policy::{fit, PolicyModel};
use crate::sqp::{solve, SolveError, SolverConfig};

/// Angle wrapped into `[0, 2π)`.
fn wrap_angle(w: f64) -> f64 {
    w.rem_euclid(2.0 * PI)
}

/// Signed angular difference in `(−π, π]`.
fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        d - 2.0 * PI
    } else {
        d
    }
}

/// `u = k_ω ω + k_ω̇ ω̇ + k₀`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPolicy {
    pub k_omega: f64,
    pub k_omegadot: f64,
    pub k0: f64,
}

impl LinearPolicy {
    pub fn new(k_omega: f64, k_omegadot: f64, k0: f64) -> Self {
        Self {
            k_omega,
            k_omegadot,
            k0,
        }
    }

    pub fn action(&self, x: [f64; 2]) -> f64 {
        self.k_omega * x[0] + self.k_omegadot * x[1] + self.k0
    }
}

/// Exact MPC, solved from the problem's initial guess at every call.
pub struct Expert {
    pub nlp: ParametricNlp,
    pub solver: SolverConfig,
}

impl Expert {
    pub fn new(params: &PendulumParams, spec: &MpcSpec, solver: SolverConfig) -> Self {
        Self {
            nlp: build_nlp(params, spec),
            solver,
        }
    }

    pub fn action(&self, x: [f64; 2]) -> Result<f64, SolveError> {
        match solve(&self.nlp, &x, None, &self.solver) {
            Ok(sol) => Ok(sol.point.action(&self.nlp)[0]),
            Err(SolveError::RegularityFailure { solution }) => {
                Ok(solution.point.action(&self.nlp)[0])
            }
            Err(e) => Err(e),
        }
    }
}

pub enum Controller<'a> {
    Policy(&'a PolicyModel),
    Linear(LinearPolicy),
    Expert(&'a Expert),
}

impl Controller<'_> {
    /// Control at a state whose angle is already wrapped into `[0, 2π)`.
    fn action(&self, x: [f64; 2]) -> Result<f64, String> {
        match self {
            Controller::Policy(m) => Ok(m.predict(&x)[0]),
            Controller::Linear(k) => Ok(k.action(x)),
            Controller::Expert(e) => e.action(x).map_err(|e| e.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub pendulum: PendulumParams,
    pub dt: f64,
    pub duration: f64,
    pub target: [f64; 2],
    /// Band half-widths on `(ω, ω̇)`.
    pub tolerance: [f64; 2],
    /// Time the state must stay in the band.
    pub hold: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            pendulum: PendulumParams::default(),
            dt: 0.05,
            duration: 10.0,
            target: [3.14, 0.0],
            tolerance: [0.15, 0.2],
            hold: 1.0,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if let Err(e) = self.pendulum.validate() {
            return Err(HarnessError::Config(format!("pendulum: {e}")));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt: must be positive");
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration: must be positive");
        }
        if !(self.hold >= 0.0) || self.tolerance.iter().any(|t| !(*t > 0.0)) {
            return bad("hold and tolerance: must be nonnegative and positive");
        }
        Ok(())
    }

    fn in_band(&self, x: [f64; 2]) -> bool {
        angle_diff(x[0], self.target[0]).abs() <= self.tolerance[0]
            && (x[1] - self.target[1]).abs() <= self.tolerance[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub x: [f64; 2],
    /// Torque applied from this state (after saturation).
    pub u: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub points: Vec<TracePoint>,
    /// Start of the first window of `hold` seconds spent inside the band.
    pub reached_at: Option<f64>,
    pub timed_out: bool,
    /// Controller failure that cut the trace short.
    pub aborted: Option<String>,
}

impl RolloutTrace {
    pub fn reached(&self) -> bool {
        self.reached_at.is_some()
    }
}

/// Simulates the plant under `controller` from `x0`. The controller sees the
/// angle wrapped into `[0, 2π)`; the trace keeps the continuous angle.
/// Torques are saturated at `±u_max`.
pub fn closed_loop(
    controller: &Controller,
    x0: [f64; 2],
    cfg: &RolloutConfig,
) -> Result<RolloutTrace, HarnessError> {
    cfg.validate()?;
    let steps = (cfg.duration / cfg.dt).round() as usize;
    let u_max = cfg.pendulum.u_max;
    let mut points = Vec::with_capacity(steps + 1);
    let mut x = x0;
    let mut aborted = None;
    for k in 0..=steps {
        let u = match controller.action([wrap_angle(x[0]), x[1]]) {
            Ok(u) if u.is_finite() => u.clamp(-u_max, u_max),
            Ok(u) => {
                aborted = Some(format!(
                    "controller returned {u} at t = {:.3}",
                    k as f64 * cfg.dt
                ));
                break;
            }
            Err(e) => {
                aborted = Some(format!(
                    "controller failed at t = {:.3}: {e}",
                    k as f64 * cfg.dt
                ));
                break;
            }
        };
        points.push(TracePoint {
            t: k as f64 * cfg.dt,
            x,
            u,
        });
        if k < steps {
            x = plant_step(&cfg.pendulum, x, u, cfg.dt);
        }
    }
    let hold_steps = (cfg.hold / cfg.dt - 1e-9).ceil() as usize;
    let inside: Vec<bool> = points.iter().map(|p| cfg.in_band(p.x)).collect();
    let mut reached_at = None;
    let mut run = 0;
    for (k, &ok) in inside.iter().enumerate() {
        run = if ok { run + 1 } else { 0 };
        if run > hold_steps {
            reached_at = Some(points[k - hold_steps].t);
            break;
        }
    }
    let timed_out = reached_at.is_none() && aborted.is_none();
    Ok(RolloutTrace {
        points,
        reached_at,
        timed_out,
        aborted,
    })
}

/// Writes the trace as `t,omega,omegadot,u`.
pub fn write_trace_csv<W: Write>(trace: &RolloutTrace, mut out: W) -> std::io::Result<()> {
    writeln!(out, "t,omega,omegadot,u")?;
    for p in &trace.points {
        writeln!(
            out,
            "{:.3},{:.16e},{:.16e},{:.16e}",
            p.t, p.x[0], p.x[1], p.u
        )?;
    }
    out.flush()
}

/// Gnuplot script for a trace CSV written by [`write_trace_csv`].
pub fn rollout_gnuplot(csv_name: &str, target: [f64; 2]) -> String {
    let stem = csv_name.trim_end_matches(".csv");
    format!(
        "set datafile separator ','\n\
         set terminal pngcairo size 900,700\n\
         set output '{stem}.png'\n\
         set multiplot layout 3,1\n\
         set xlabel 't [s]'\n\
         set ylabel 'omega [rad]'\n\
         plot '{csv_name}' every ::1 using 1:2 with lines title 'omega', {} with lines dt 2 title 'target'\n\
         set ylabel 'omegadot [rad/s]'\n\
         plot '{csv_name}' every ::1 using 1:3 with lines title 'omegadot', {} with lines dt 2 title 'target'\n\
         set ylabel 'u [Nm]'\n\
         plot '{csv_name}' every ::1 using 1:4 with steps title 'u'\n\
         unset multiplot\n",
        target[0], target[1]
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImitationConfig {
    pub pendulum: PendulumParams,
    pub mpc: MpcSpec,
    pub solver: SolverConfig,
    pub rollout: RolloutConfig,
    pub x0: [f64; 2],
    /// Half-widths of the box sampled around each expert feedback state.
    pub neighborhood: [f64; 2],
    pub eps_tol: f64,
    pub seed: u64,
    pub bandwidth: Option<f64>,
    /// Stop after the first successful rollout.
    pub stop_on_success: bool,
}

impl Default for ImitationConfig {
    fn default() -> Self {
        Self {
            pendulum: PendulumParams::default(),
            mpc: MpcSpec::default(),
            solver: SolverConfig::default(),
            rollout: RolloutConfig::default(),
            x0: [0.0, 0.0],
            neighborhood: [0.1, 0.25],
            eps_tol: AugmentConfig::default().eps_tol,
            seed: 0,
            bandwidth: None,
            stop_on_success: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    /// Zero for the seed rollout of the initial policy.
    pub rollout: usize,
    pub success: bool,
    pub reached_at: Option<f64>,
    /// Valid samples in the aggregated dataset after this rollout.
    pub dataset_size: usize,
    pub expert_queries: usize,
    pub expert_failures: usize,
    pub augmented: usize,
    pub discarded: usize,
}

pub struct ImitationResult {
    pub model: Option<PolicyModel>,
    pub table: Vec<RolloutRecord>,
    pub dataset: Dataset,
    pub traces: Vec<RolloutTrace>,
}

impl ImitationResult {
    /// Index of the first successful rollout of a learned policy.
    pub fn first_success(&self) -> Option<usize> {
        self.table
            .iter()
            .find(|r| r.rollout > 0 && r.success)
            .map(|r| r.rollout)
    }
}

/// Dataset aggregation with an exact MPC expert. A seed rollout of the
/// initial policy is followed by `rollouts` rollouts of learned policies.
/// After each rollout every visited state is labeled by the expert,
/// `feedback_augment` predictor-corrector samples are added around each
/// label and the policy is refit on everything gathered so far.
pub fn imitation_loop(
    initial: LinearPolicy,
    rollouts: usize,
    feedback_augment: usize,
    cfg: &ImitationConfig,
) -> Result<ImitationResult, HarnessError> {
    if rollouts == 0 {
        return Err(HarnessError::Config("rollouts: must be at least 1".into()));
    }
    cfg.rollout.validate()?;
    let nlp = build_nlp(&cfg.pendulum, &cfg.mpc);
    let mut dataset = Dataset::default();
    let mut model: Option<PolicyModel> = None;
    let mut table = Vec::new();
    let mut traces = Vec::new();

    for r in 0..=rollouts {
        let controller = match &model {
            Some(m) => Controller::Policy(m),
            None => Controller::Linear(initial),
        };
        let trace = closed_loop(&controller, cfg.x0, &cfg.rollout)?;
        let success = trace.reached();
        if r == rollouts || (r > 0 && success && cfg.stop_on_success) {
            table.push(RolloutRecord {
                rollout: r,
                success,
                reached_at: trace.reached_at,
                dataset_size: dataset.valid().count(),
                expert_queries: 0,
                expert_failures: 0,
                augmented: 0,
                discarded: 0,
            });
            traces.push(trace);
            break;
        }

        let cells: Vec<AnchorCell> = trace
            .points
            .iter()
            .map(|p| {
                let c = vec![wrap_angle(p.x[0]), p.x[1]];
                let cell = c
                    .iter()
                    .zip(&cfg.neighborhood)
                    .map(|(&v, &h)| (v - h, v + h))
                    .collect();
                AnchorCell { center: c, cell }
            })
            .collect();
        let neighborhood_sampler = if feedback_augment == 0 {
            Sampler::Points { points: Vec::new() }
        } else {
            Sampler::UniformRandom {
                count: feedback_augment,
                seed: cfg.seed.wrapping_add(r as u64),
            }
        };
        let aug = AugmentConfig {
            anchor_sampler: Sampler::Points { points: Vec::new() },
            neighborhood_sampler,
            neighborhood: Some(cfg.neighborhood.to_vec()),
            eps_tol: cfg.eps_tol,
            mode: Mode::PredictorCorrector,
            ..AugmentConfig::default()
        };
        let queries = cells.len();
        let batch = match generate_cells(&nlp, &cells, &aug, &cfg.solver) {
            Ok(ds) => ds,
            Err(crate::augment::AugmentError::NoAnchors(n)) => {
                log::warn!("rollout {r}: all {n} expert queries failed");
                Dataset {
                    anchors_attempted: n,
                    ..Default::default()
                }
            }
            Err(e) => return Err(e.into()),
        };
        let failures = batch.anchors_attempted - batch.n_anchors();
        for f in &batch.anchor_failures {
            log::info!("rollout {r}: expert failed at {:?}: {}", f.p, f.error);
        }
        let (augmented, discarded) = (batch.n_augmented(), batch.n_discarded());
        dataset.extend(batch);
        if dataset.valid().next().is_some() {
            model = Some(fit(&dataset, cfg.bandwidth)?);
        }
        table.push(RolloutRecord {
            rollout: r,
            success,
            reached_at: trace.reached_at,
            dataset_size: dataset.valid().count(),
            expert_queries: queries,
            expert_failures: failures,
            augmented,
            discarded,
        });
        log::info!(
            "rollout {r}: success {success}, dataset {}",
            dataset.valid().count()
        );
        traces.push(trace);
    }
    Ok(ImitationResult {
        model,
        table,
        dataset,
        traces,
    })
}
