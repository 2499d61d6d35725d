//! Experiment drivers for the pendulum benchmark: the three dataset cases,
//! closed-loop rollouts and the imitation-learning loop.

mod rollout;

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use rollout::{
    closed_loop, imitation_loop, rollout_gnuplot, write_trace_csv, Controller, Expert,
    ImitationConfig, ImitationResult, LinearPolicy, RolloutConfig, RolloutRecord, RolloutTrace,
    TracePoint,
};

use crate::augment::{
    exact_action, generate, write_dataset_csv, write_points_jsonl, AugmentConfig, AugmentError,
    Chaining, CsvError, Dataset, Mode, Sampler,
};
use crate::nlp::ParametricNlp;
use crate::pendulum::{build_nlp, parameter_box, MpcSpec, PendulumParams};
use crate::policy::PolicyError;
use crate::sqp::SolverConfig;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Rounds a duration in seconds to milliseconds for reports.
pub fn round_ms(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Settings of one dataset case. Defaults are the desk-scale Case-2 values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseConfig {
    pub pendulum: PendulumParams,
    pub mpc: MpcSpec,
    pub solver: SolverConfig,
    /// Anchor grid over the parameter box.
    pub anchors: Vec<usize>,
    /// Neighborhood grid per anchor.
    pub per_anchor: Vec<usize>,
    pub eps_tol: f64,
    pub chaining: Chaining,
    /// Re-solved points for the error estimate; all augmented points when unset.
    pub probes: Option<usize>,
    pub probe_seed: u64,
    pub keep_points: bool,
}

impl Default for CaseConfig {
    fn default() -> Self {
        Self {
            pendulum: PendulumParams::default(),
            mpc: MpcSpec::default(),
            solver: SolverConfig::default(),
            anchors: vec![3, 3],
            per_anchor: vec![11, 11],
            eps_tol: AugmentConfig::default().eps_tol,
            chaining: Chaining::FromAnchor,
            probes: None,
            probe_seed: 0,
            keep_points: false,
        }
    }
}

impl CaseConfig {
    /// Desk-scale defaults: Case 1 is 10×10 anchors with 5×5 samples each,
    /// Case 2 is 3×3 anchors with 11×11 each, Case 3 is one anchor with a
    /// 40×40 grid over the whole box.
    pub fn for_case(case: u8) -> Result<Self, HarnessError> {
        let (anchors, per_anchor) = match case {
            1 => (vec![10, 10], vec![5, 5]),
            2 => (vec![3, 3], vec![11, 11]),
            3 => (vec![1, 1], vec![40, 40]),
            other => {
                return Err(HarnessError::Config(format!(
                    "case: expected 1, 2 or 3, got {other}"
                )))
            }
        };
        Ok(Self {
            anchors,
            per_anchor,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |field: &str, e: String| Err(HarnessError::Config(format!("{field}: {e}")));
        if let Err(e) = self.pendulum.validate() {
            return bad("pendulum", e);
        }
        if let Err(e) = self.mpc.validate() {
            return bad("mpc", e);
        }
        if let Err(e) = self.solver.validate() {
            return bad("solver", e);
        }
        if self.probes == Some(0) {
            return bad("probes", "must be positive when set".into());
        }
        self.augment(Mode::PredictorCorrector)
            .validate(&parameter_box())?;
        Ok(())
    }

    pub fn augment(&self, mode: Mode) -> AugmentConfig {
        AugmentConfig {
            anchor_sampler: Sampler::Grid {
                dims: self.anchors.clone(),
            },
            neighborhood_sampler: Sampler::Grid {
                dims: self.per_anchor.clone(),
            },
            neighborhood: None,
            eps_tol: self.eps_tol,
            mode,
            chaining: self.chaining,
            keep_points: self.keep_points,
            ..AugmentConfig::default()
        }
    }

    pub fn samples_per_anchor(&self) -> usize {
        self.per_anchor.iter().product()
    }
}

/// Per-mode half of a case run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: Mode,
    pub n_exact: usize,
    pub n_augmented: usize,
    pub n_discarded: usize,
    pub discard_counts: BTreeMap<String, usize>,
    pub anchor_failures: usize,
    pub t_exact_s: f64,
    pub t_augment_s: f64,
    /// Max `‖û − u*‖₂` over the probed valid augmented samples.
    pub max_error: f64,
    pub probe_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: u8,
    /// Counts and timings of the predictor-corrector run.
    pub n_exact: usize,
    pub n_augmented: usize,
    pub n_discarded: usize,
    pub t_exact_s: f64,
    pub t_augment_s: f64,
    /// Time to re-solve every probed augmented point exactly.
    pub t_exact_resolve_s: f64,
    pub n_resolved: usize,
    pub max_error_predictor_only: f64,
    pub max_error_predictor_corrector: f64,
    /// `max_error_predictor_only / max_error_predictor_corrector`, unset when
    /// the quotient is not finite.
    pub error_ratio: Option<f64>,
    pub probe_count: usize,
    pub seeds: BTreeMap<String, u64>,
    /// Set when anchors or probe re-solves failed.
    pub partial: bool,
    pub modes: Vec<ModeReport>,
    pub config: CaseConfig,
}

impl CaseReport {
    /// The exact re-solve time over the augmentation time of the given mode.
    pub fn speedup(&self, mode: Mode) -> Option<f64> {
        let m = self.modes.iter().find(|m| m.mode == mode)?;
        (m.t_augment_s > 0.0).then(|| self.t_exact_resolve_s / m.t_augment_s)
    }
}

pub struct CaseOutput {
    pub report: CaseReport,
    pub predictor_only: Dataset,
    pub predictor_corrector: Dataset,
}

/// Exact actions at a set of parameters, with the summed solve time.
struct Resolved {
    actions: BTreeMap<usize, Vec<f64>>,
    failures: usize,
    t_s: f64,
}

/// Solves the probe points one by one so the timing reflects a serial exact
/// labeling of the same points.
fn resolve_points(
    nlp: &ParametricNlp,
    points: &[(usize, Vec<f64>)],
    solver: &SolverConfig,
) -> Resolved {
    let mut out = Resolved {
        actions: BTreeMap::new(),
        failures: 0,
        t_s: 0.0,
    };
    for (key, p) in points {
        let t = Instant::now();
        let u = exact_action(nlp, p, solver);
        out.t_s += t.elapsed().as_secs_f64();
        match u {
            Some(u) => {
                out.actions.insert(*key, u);
            }
            None => out.failures += 1,
        }
    }
    out
}

/// Probe keys are positions in the dataset's sample list; both modes share
/// anchors and neighborhood grids, so the lists line up.
fn max_error(ds: &Dataset, resolved: &Resolved) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut n = 0;
    for (&key, u_star) in &resolved.actions {
        let s = &ds.samples[key];
        if s.is_valid() {
            let e =
                s.u.iter()
                    .zip(u_star)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
            worst = worst.max(e);
            n += 1;
        }
    }
    (worst, n)
}

fn mode_report(mode: Mode, ds: &Dataset, resolved: &Resolved) -> ModeReport {
    let (max_error, probe_count) = max_error(ds, resolved);
    ModeReport {
        mode,
        n_exact: ds.n_anchors(),
        n_augmented: ds.n_augmented(),
        n_discarded: ds.n_discarded(),
        discard_counts: ds.discard_counts(),
        anchor_failures: ds.anchor_failures.len(),
        t_exact_s: round_ms(ds.timing.t_exact_s),
        t_augment_s: round_ms(ds.timing.t_augment_s),
        max_error,
        probe_count,
    }
}

fn same_points(a: &Dataset, b: &Dataset) -> bool {
    a.samples.len() == b.samples.len()
        && a.samples
            .iter()
            .zip(&b.samples)
            .all(|(x, y)| x.p == y.p && x.kind == y.kind)
}

/// Runs one case in both modes and, when `out_dir` is given, writes the
/// report, both datasets and a plot script there.
pub fn run_case(
    case: u8,
    cfg: &CaseConfig,
    out_dir: Option<&Path>,
) -> Result<CaseOutput, HarnessError> {
    cfg.validate()?;
    let nlp = build_nlp(&cfg.pendulum, &cfg.mpc);
    let pbox = parameter_box();
    let po = generate(&nlp, &pbox, &cfg.augment(Mode::PredictorOnly), &cfg.solver)?;
    let pc = generate(
        &nlp,
        &pbox,
        &cfg.augment(Mode::PredictorCorrector),
        &cfg.solver,
    )?;
    if !same_points(&po, &pc) {
        return Err(HarnessError::Config(
            "modes produced different sample layouts".into(),
        ));
    }

    let mut points: Vec<(usize, Vec<f64>)> = pc
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.sample_index.is_some())
        .map(|(i, s)| (i, s.p.clone()))
        .collect();
    if let Some(n) = cfg.probes {
        if n < points.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.probe_seed);
            points = points.choose_multiple(&mut rng, n).cloned().collect();
            points.sort_by_key(|(i, _)| *i);
        }
    }
    let resolved = resolve_points(&nlp, &points, &cfg.solver);
    let m_po = mode_report(Mode::PredictorOnly, &po, &resolved);
    let m_pc = mode_report(Mode::PredictorCorrector, &pc, &resolved);

    let mut seeds = BTreeMap::new();
    seeds.insert("probe_seed".to_string(), cfg.probe_seed);
    let report = CaseReport {
        case_id: case,
        n_exact: m_pc.n_exact,
        n_augmented: m_pc.n_augmented,
        n_discarded: m_pc.n_discarded,
        t_exact_s: m_pc.t_exact_s,
        t_augment_s: m_pc.t_augment_s,
        t_exact_resolve_s: round_ms(resolved.t_s),
        n_resolved: points.len(),
        max_error_predictor_only: m_po.max_error,
        max_error_predictor_corrector: m_pc.max_error,
        error_ratio: Some(m_po.max_error / m_pc.max_error).filter(|r| r.is_finite()),
        probe_count: m_pc.probe_count,
        seeds,
        partial: resolved.failures > 0
            || !pc.anchor_failures.is_empty()
            || !po.anchor_failures.is_empty(),
        modes: vec![m_po, m_pc],
        config: cfg.clone(),
    };

    if let Some(dir) = out_dir {
        write_case_outputs(dir, &report, &po, &pc)?;
    }
    Ok(CaseOutput {
        report,
        predictor_only: po,
        predictor_corrector: pc,
    })
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::PredictorOnly => "predictor_only",
        Mode::PredictorCorrector => "predictor_corrector",
    }
}

fn write_case_outputs(
    dir: &Path,
    report: &CaseReport,
    po: &Dataset,
    pc: &Dataset,
) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let stem = format!("case{}", report.case_id);
    for (mode, ds) in [(Mode::PredictorOnly, po), (Mode::PredictorCorrector, pc)] {
        let name = format!("{stem}_{}", mode_name(mode));
        write_dataset_csv(
            ds,
            BufWriter::new(fs::File::create(dir.join(format!("{name}.csv")))?),
        )?;
        if report.config.keep_points {
            write_points_jsonl(
                ds,
                BufWriter::new(fs::File::create(dir.join(format!("{name}_points.jsonl")))?),
            )?;
        }
    }
    fs::write(
        dir.join(format!("{stem}_report.json")),
        serde_json::to_string_pretty(report)? + "\n",
    )?;
    fs::write(dir.join(format!("{stem}.gp")), case_gnuplot(&stem))?;
    Ok(())
}

/// Gnuplot script drawing the valid samples of both datasets of a case.
pub fn case_gnuplot(stem: &str) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str(&format!(
        "set terminal pngcairo size 1200,500\nset output '{stem}.png'\n"
    ));
    s.push_str("set multiplot layout 1,2\nset xlabel 'omega [rad]'\nset ylabel 'omegadot [rad/s]'\nset zlabel 'u0 [Nm]'\n");
    for mode in ["predictor_only", "predictor_corrector"] {
        s.push_str(&format!(
            "set title '{mode}'\nsplot '{stem}_{mode}.csv' every ::1 using 1:2:(strcol(8) eq 'false' ? $3 : NaN) with points pt 7 ps 0.3 notitle\n"
        ));
    }
    s.push_str("unset multiplot\n");
    s
}

#[cfg(test)]
mod tests;
