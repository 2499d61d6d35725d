//! Predictor-corrector data augmentation around exactly solved anchors.

mod io;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    read_dataset_csv, read_points_jsonl, write_dataset_csv, write_points_jsonl, CsvError,
};

use crate::nlp::{kkt_residual, ParametricNlp, PointKind, PrimalDualPoint};
use crate::sensitivity::{
    correct_with, predict, sensitivity_matrix_with_margin, validate_active_set, ActiveSetStatus,
    CorrectorConfig, CorrectorError, SensitivityMatrix,
};
use crate::sqp::{solve, SolveError, SolverConfig};

/// Axis-aligned parameter box, one `(lo, hi)` per dimension.
pub type ParamBox = Vec<(f64, f64)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sampler {
    /// Cell-centered grid with `dims[k]` points along dimension `k`.
    Grid {
        dims: Vec<usize>,
    },
    UniformRandom {
        count: usize,
        seed: u64,
    },
    /// Explicit points (anchors only).
    Points {
        points: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    PredictorOnly,
    PredictorCorrector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chaining {
    FromAnchor,
    PathFollowing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub anchor_sampler: Sampler,
    pub neighborhood_sampler: Sampler,
    /// Half-widths of each anchor's box. Defaults to half the anchor spacing
    /// for grid anchors, so the boxes tile the parameter box.
    pub neighborhood: Option<Vec<f64>>,
    pub eps_tol: f64,
    pub mode: Mode,
    pub chaining: Chaining,
    pub max_corrector_iters: usize,
    pub activity_tol: f64,
    pub chord: bool,
    /// Discard corrector runs early once they clearly leave the active set.
    pub early_discard: bool,
    /// Jittered re-solves attempted when an anchor fails.
    pub reseed_attempts: usize,
    /// Keep full primal-dual points of accepted samples.
    pub keep_points: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        let c = CorrectorConfig::default();
        Self {
            anchor_sampler: Sampler::Grid { dims: vec![3, 3] },
            neighborhood_sampler: Sampler::Grid { dims: vec![11, 11] },
            neighborhood: None,
            eps_tol: c.eps_tol,
            mode: Mode::PredictorCorrector,
            chaining: Chaining::FromAnchor,
            max_corrector_iters: c.max_corrector_iters,
            activity_tol: c.activity_tol,
            chord: c.chord,
            early_discard: c.early_discard,
            reseed_attempts: 3,
            keep_points: false,
        }
    }
}

impl AugmentConfig {
    pub fn corrector(&self) -> CorrectorConfig {
        CorrectorConfig {
            eps_tol: self.eps_tol,
            max_corrector_iters: self.max_corrector_iters,
            activity_tol: self.activity_tol,
            chord: self.chord,
            early_discard: self.early_discard,
        }
    }

    /// Checks the configuration against a parameter box; errors name the field.
    pub fn validate(&self, pbox: &ParamBox) -> Result<(), AugmentError> {
        let n_p = pbox.len();
        let bad = |field: &str, msg: String| Err(AugmentError::Config(format!("{field}: {msg}")));
        if !(self.eps_tol > 0.0) {
            return bad("eps_tol", "must be positive".into());
        }
        if !(self.activity_tol > 0.0) {
            return bad("activity_tol", "must be positive".into());
        }
        for (k, &(lo, hi)) in pbox.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad("pbox", format!("dimension {k} must have finite lo < hi"));
            }
        }
        check_sampler("anchor_sampler", &self.anchor_sampler, n_p)?;
        check_sampler("neighborhood_sampler", &self.neighborhood_sampler, n_p)?;
        if matches!(self.neighborhood_sampler, Sampler::Points { .. }) {
            return bad(
                "neighborhood_sampler",
                "explicit points are only supported for anchors".into(),
            );
        }
        match &self.neighborhood {
            Some(h) => {
                if h.len() != n_p {
                    return bad(
                        "neighborhood",
                        format!("expected {n_p} half-widths, got {}", h.len()),
                    );
                }
                if h.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return bad("neighborhood", "half-widths must be positive".into());
                }
            }
            None if !matches!(self.anchor_sampler, Sampler::Grid { .. }) => {
                return bad(
                    "neighborhood",
                    "required unless anchors are on a grid".into(),
                );
            }
            None => {}
        }
        Ok(())
    }
}

fn check_sampler(field: &str, s: &Sampler, n_p: usize) -> Result<(), AugmentError> {
    let err = |msg: String| Err(AugmentError::Config(format!("{field}: {msg}")));
    match s {
        Sampler::Grid { dims } => {
            if dims.len() != n_p {
                return err(format!("grid needs {n_p} dimensions, got {}", dims.len()));
            }
            if dims.contains(&0) {
                return err("grid dimensions must be positive".into());
            }
        }
        Sampler::UniformRandom { count, .. } => {
            if *count == 0 {
                return err("count must be positive".into());
            }
        }
        Sampler::Points { points } => {
            if points.is_empty() || points.iter().any(|p| p.len() != n_p) {
                return err(format!(
                    "points must be nonempty with {n_p} coordinates each"
                ));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation config: {0}")]
    Config(String),
    #[error("no anchor could be solved ({0} attempted)")]
    NoAnchors(usize),
    #[error("dataset has no samples")]
    EmptyDataset,
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    ActiveSetChanged,
    CorrectorDiverged,
    MaxIters,
    SingularKkt,
    EvaluationError,
}

impl DiscardReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DiscardReason::ActiveSetChanged => "active_set_changed",
            DiscardReason::CorrectorDiverged => "corrector_diverged",
            DiscardReason::MaxIters => "max_iters",
            DiscardReason::SingularKkt => "singular_kkt",
            DiscardReason::EvaluationError => "evaluation_error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            DiscardReason::ActiveSetChanged,
            DiscardReason::CorrectorDiverged,
            DiscardReason::MaxIters,
            DiscardReason::SingularKkt,
            DiscardReason::EvaluationError,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }

    fn from_corrector(e: &CorrectorError) -> Self {
        match e {
            CorrectorError::Diverged { .. } => DiscardReason::CorrectorDiverged,
            CorrectorError::MaxIters { .. } => DiscardReason::MaxIters,
            CorrectorError::SingularKkt { .. } => DiscardReason::SingularKkt,
            CorrectorError::ActiveSetChanged { .. } => DiscardReason::ActiveSetChanged,
            CorrectorError::Nlp(_) => DiscardReason::EvaluationError,
        }
    }
}

/// One labeled `(p, u)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub p: Vec<f64>,
    pub u: Vec<f64>,
    pub kind: PointKind,
    pub anchor_id: usize,
    /// Position within the anchor's neighborhood; `None` for the anchor itself.
    pub sample_index: Option<usize>,
    pub stationarity_norm: f64,
    pub corrector_iters: usize,
    pub discarded: Option<DiscardReason>,
    #[serde(skip)]
    pub point: Option<PrimalDualPoint>,
}

impl Sample {
    pub fn is_valid(&self) -> bool {
        self.discarded.is_none()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Summed per-anchor exact solve time.
    pub t_exact_s: f64,
    /// Summed sensitivity, predictor and corrector time.
    pub t_augment_s: f64,
    pub t_wall_s: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub timing: Timing,
    /// `sensitivity_matrix` evaluations at anchors.
    pub sensitivity_calls: usize,
    /// Extra KKT factorizations made while chaining samples.
    pub chain_factorizations: usize,
    pub anchors_attempted: usize,
    pub anchor_failures: Vec<AnchorFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorFailure {
    pub anchor_id: usize,
    pub p: Vec<f64>,
    pub error: String,
}

impl Dataset {
    pub fn anchors(&self) -> impl Iterator<Item = &Sample> {
        self.samples
            .iter()
            .filter(|s| s.kind == PointKind::ExactAnchor)
    }

    pub fn augmented(&self) -> impl Iterator<Item = &Sample> {
        self.samples
            .iter()
            .filter(|s| s.kind == PointKind::Augmented)
    }

    pub fn valid(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| s.is_valid())
    }

    pub fn n_anchors(&self) -> usize {
        self.anchors().count()
    }

    pub fn n_augmented(&self) -> usize {
        self.augmented().filter(|s| s.is_valid()).count()
    }

    pub fn n_discarded(&self) -> usize {
        self.samples.iter().filter(|s| !s.is_valid()).count()
    }

    pub fn discard_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            if let Some(r) = s.discarded {
                *out.entry(r.as_str().to_string()).or_insert(0) += 1;
            }
        }
        out
    }

    /// Appends another dataset, offsetting its anchor ids.
    pub fn extend(&mut self, other: Dataset) {
        let offset = self
            .samples
            .iter()
            .map(|s| s.anchor_id + 1)
            .max()
            .unwrap_or(0);
        self.samples.extend(other.samples.into_iter().map(|mut s| {
            s.anchor_id += offset;
            s
        }));
        self.timing.t_exact_s += other.timing.t_exact_s;
        self.timing.t_augment_s += other.timing.t_augment_s;
        self.timing.t_wall_s += other.timing.t_wall_s;
        self.sensitivity_calls += other.sensitivity_calls;
        self.chain_factorizations += other.chain_factorizations;
        self.anchors_attempted += other.anchors_attempted;
        self.anchor_failures
            .extend(other.anchor_failures.into_iter().map(|mut f| {
                f.anchor_id += offset;
                f
            }));
    }
}

/// JSON run summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub n_anchors: usize,
    pub n_augmented: usize,
    pub n_discarded: usize,
    pub discard_counts: BTreeMap<String, usize>,
    pub anchor_failures: Vec<AnchorFailure>,
    pub sensitivity_calls: usize,
    pub t_exact_s: f64,
    pub t_augment_s: f64,
    pub t_wall_s: f64,
    pub max_error: Option<f64>,
    pub config: AugmentConfig,
    pub solver: SolverConfig,
}

impl RunReport {
    pub fn new(
        ds: &Dataset,
        cfg: &AugmentConfig,
        solver: &SolverConfig,
        max_error: Option<f64>,
    ) -> Self {
        let r3 = |v: f64| (v * 1000.0).round() / 1000.0;
        Self {
            n_anchors: ds.n_anchors(),
            n_augmented: ds.n_augmented(),
            n_discarded: ds.n_discarded(),
            discard_counts: ds.discard_counts(),
            anchor_failures: ds.anchor_failures.clone(),
            sensitivity_calls: ds.sensitivity_calls,
            t_exact_s: r3(ds.timing.t_exact_s),
            t_augment_s: r3(ds.timing.t_augment_s),
            t_wall_s: r3(ds.timing.t_wall_s),
            max_error,
            config: cfg.clone(),
            solver: solver.clone(),
        }
    }
}

/// Anchor location and the box its neighborhood samples are drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorCell {
    pub center: Vec<f64>,
    pub cell: ParamBox,
}

/// Cell-centered grid over `bx`: `lo + (i + ½)(hi − lo)/k`.
pub fn cell_centered_grid(bx: &ParamBox, dims: &[usize]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for (&(lo, hi), &k) in bx.iter().zip(dims) {
        let step = (hi - lo) / k as f64;
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..k).map(move |i| {
                    let mut v = prefix.clone();
                    v.push(lo + (i as f64 + 0.5) * step);
                    v
                })
            })
            .collect();
    }
    out
}

fn uniform_points(bx: &ParamBox, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| bx.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect())
        .collect()
}

fn intersect(center: &[f64], half: &[f64], pbox: &ParamBox) -> ParamBox {
    center
        .iter()
        .zip(half)
        .zip(pbox)
        .map(|((&c, &h), &(lo, hi))| ((c - h).max(lo), (c + h).min(hi)))
        .collect()
}

/// Anchors and their neighborhood boxes.
pub fn anchor_cells(pbox: &ParamBox, cfg: &AugmentConfig) -> Vec<AnchorCell> {
    match &cfg.anchor_sampler {
        Sampler::Grid { dims } => {
            let centers = cell_centered_grid(pbox, dims);
            let half: Vec<f64> = match &cfg.neighborhood {
                Some(h) => h.clone(),
                None => pbox
                    .iter()
                    .zip(dims)
                    .map(|(&(lo, hi), &k)| 0.5 * (hi - lo) / k as f64)
                    .collect(),
            };
            centers
                .into_iter()
                .map(|c| {
                    let cell = intersect(&c, &half, pbox);
                    AnchorCell { center: c, cell }
                })
                .collect()
        }
        Sampler::UniformRandom { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let half = cfg.neighborhood.clone().expect("validated");
            uniform_points(pbox, *count, &mut rng)
                .into_iter()
                .map(|c| {
                    let cell = intersect(&c, &half, pbox);
                    AnchorCell { center: c, cell }
                })
                .collect()
        }
        Sampler::Points { points } => {
            let half = cfg.neighborhood.clone().expect("validated");
            points
                .iter()
                .map(|c| AnchorCell {
                    center: c.clone(),
                    cell: intersect(c, &half, pbox),
                })
                .collect()
        }
    }
}

/// Neighborhood sample points of one anchor cell, with their grid shape when
/// the sampler is a grid.
fn neighborhood_points(
    cell: &AnchorCell,
    sampler: &Sampler,
    anchor_id: usize,
) -> (Vec<Vec<f64>>, Option<Vec<usize>>) {
    match sampler {
        Sampler::Grid { dims } => (cell_centered_grid(&cell.cell, dims), Some(dims.clone())),
        Sampler::UniformRandom { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed.wrapping_add((anchor_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            );
            (uniform_points(&cell.cell, *count, &mut rng), None)
        }
        Sampler::Points { points } => (points.clone(), None),
    }
}

struct AnchorResult {
    samples: Vec<Sample>,
    failure: Option<AnchorFailure>,
    t_exact: Duration,
    t_augment: Duration,
    chain_factorizations: usize,
}

fn solve_anchor(
    nlp: &ParametricNlp,
    cell: &AnchorCell,
    anchor_id: usize,
    cfg: &AugmentConfig,
    solver_cfg: &SolverConfig,
) -> Result<PrimalDualPoint, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED ^ anchor_id as u64);
    let mut p = cell.center.clone();
    let mut last = String::new();
    for attempt in 0..=cfg.reseed_attempts {
        if attempt > 0 {
            // Jitter within a tenth of the cell, staying inside it.
            p = cell
                .center
                .iter()
                .zip(&cell.cell)
                .map(|(&c, &(lo, hi))| {
                    (c + 0.1 * (hi - lo) * rng.gen_range(-0.5..0.5)).clamp(lo, hi)
                })
                .collect();
        }
        match solve(nlp, &p, None, solver_cfg) {
            Ok(sol) => return Ok(sol.point),
            Err(e) => {
                log::info!("anchor {anchor_id} attempt {attempt} at {p:?} failed: {e}");
                last = e.to_string();
            }
        }
    }
    Err(last)
}

fn sample_from_point(
    nlp: &ParametricNlp,
    point: &PrimalDualPoint,
    anchor_id: usize,
    index: Option<usize>,
    keep: bool,
) -> Sample {
    Sample {
        p: point.p.clone(),
        u: point.action(nlp),
        kind: point.kind,
        anchor_id,
        sample_index: index,
        stationarity_norm: point.stationarity_norm,
        corrector_iters: 0,
        discarded: None,
        point: keep.then(|| point.clone()),
    }
}

/// Produces one augmented sample from a predictor base.
fn augment_one(
    nlp: &ParametricNlp,
    base: &PrimalDualPoint,
    sens: &SensitivityMatrix,
    target: &[f64],
    anchor_id: usize,
    index: usize,
    cfg: &AugmentConfig,
) -> (Sample, Option<PrimalDualPoint>) {
    let dp: Vec<f64> = target.iter().zip(&base.p).map(|(t, b)| t - b).collect();
    let mut hat = predict(base, sens, &dp);
    hat.p = target.to_vec();
    let mut sample = Sample {
        p: target.to_vec(),
        u: hat.action(nlp),
        kind: PointKind::Augmented,
        anchor_id,
        sample_index: Some(index),
        stationarity_norm: f64::NAN,
        corrector_iters: 0,
        discarded: None,
        point: None,
    };
    match cfg.mode {
        Mode::PredictorOnly => {
            match kkt_residual(nlp, &mut hat) {
                Ok(_) => sample.stationarity_norm = hat.stationarity_norm,
                Err(_) => {
                    sample.discarded = Some(DiscardReason::EvaluationError);
                    return (sample, None);
                }
            }
            match validate_active_set(nlp, &hat, cfg.activity_tol) {
                Ok(ActiveSetStatus::Valid) => {
                    sample.point = cfg.keep_points.then(|| hat.clone());
                    (sample, Some(hat))
                }
                Ok(ActiveSetStatus::Changed) => {
                    sample.discarded = Some(DiscardReason::ActiveSetChanged);
                    (sample, None)
                }
                Err(_) => {
                    sample.discarded = Some(DiscardReason::EvaluationError);
                    (sample, None)
                }
            }
        }
        Mode::PredictorCorrector => {
            match correct_with(nlp, &hat, &cfg.corrector(), Some(&sens.kkt)) {
                Ok(out) => {
                    sample.u = out.point.action(nlp);
                    sample.stationarity_norm = out.point.stationarity_norm;
                    sample.corrector_iters = out.iterations;
                    sample.point = cfg.keep_points.then(|| out.point.clone());
                    (sample, Some(out.point))
                }
                Err(e) => {
                    if let CorrectorError::ActiveSetChanged {
                        point, iterations, ..
                    } = &e
                    {
                        sample.u = point.action(nlp);
                        sample.corrector_iters = *iterations;
                        sample.stationarity_norm = point.stationarity_norm;
                    } else if let CorrectorError::MaxIters { iterations, .. } = &e {
                        sample.corrector_iters = *iterations;
                    }
                    sample.discarded = Some(DiscardReason::from_corrector(&e));
                    (sample, None)
                }
            }
        }
    }
}

/// Visit order over a neighborhood: boustrophedon for grids, input order
/// otherwise.
fn snake_order(n: usize, dims: Option<&[usize]>) -> Vec<usize> {
    let Some(dims) = dims else {
        return (0..n).collect();
    };
    if dims.len() < 2 {
        return (0..n).collect();
    }
    // Row-major with the last dimension fastest; reverse every other row.
    let inner: usize = dims[dims.len() - 1];
    let rows = n / inner;
    let mut out = Vec::with_capacity(n);
    for r in 0..rows {
        if r % 2 == 0 {
            out.extend(r * inner..(r + 1) * inner);
        } else {
            out.extend((r * inner..(r + 1) * inner).rev());
        }
    }
    out
}

fn process_anchor(
    nlp: &ParametricNlp,
    cell: &AnchorCell,
    anchor_id: usize,
    cfg: &AugmentConfig,
    solver_cfg: &SolverConfig,
    sens_calls: &AtomicUsize,
) -> AnchorResult {
    let t0 = Instant::now();
    let anchor = solve_anchor(nlp, cell, anchor_id, cfg, solver_cfg);
    let t_exact = t0.elapsed();
    let fail = |error: String, t_exact, t_augment| AnchorResult {
        samples: Vec::new(),
        failure: Some(AnchorFailure {
            anchor_id,
            p: cell.center.clone(),
            error,
        }),
        t_exact,
        t_augment,
        chain_factorizations: 0,
    };
    let anchor = match anchor {
        Ok(a) => a,
        Err(e) => return fail(e, t_exact, Duration::ZERO),
    };

    let t1 = Instant::now();
    sens_calls.fetch_add(1, Ordering::Relaxed);
    let sens = match sensitivity_matrix_with_margin(nlp, &anchor, solver_cfg.comp_margin) {
        Ok(s) => s,
        Err(e) => return fail(format!("sensitivity: {e}"), t_exact, t1.elapsed()),
    };
    let mut samples = vec![sample_from_point(
        nlp,
        &anchor,
        anchor_id,
        None,
        cfg.keep_points,
    )];
    let (points, dims) = neighborhood_points(cell, &cfg.neighborhood_sampler, anchor_id);
    let mut chain_factorizations = 0;

    match cfg.chaining {
        Chaining::FromAnchor => {
            let out: Vec<Sample> = points
                .par_iter()
                .enumerate()
                .map(|(j, q)| augment_one(nlp, &anchor, &sens, q, anchor_id, j, cfg).0)
                .collect();
            samples.extend(out);
        }
        Chaining::PathFollowing => {
            let mut done: Vec<(PrimalDualPoint, Option<SensitivityMatrix>)> =
                vec![(anchor.clone(), Some(sens.clone()))];
            let mut out: Vec<Option<Sample>> = vec![None; points.len()];
            for j in snake_order(points.len(), dims.as_deref()) {
                let q = &points[j];
                let nearest = (0..done.len())
                    .min_by(|&a, &b| dist2(&done[a].0.p, q).total_cmp(&dist2(&done[b].0.p, q)))
                    .expect("anchor is always available");
                if done[nearest].1.is_none() {
                    chain_factorizations += 1;
                    done[nearest].1 =
                        sensitivity_matrix_with_margin(nlp, &done[nearest].0, 0.0).ok();
                }
                let (base, base_sens) = match &done[nearest].1 {
                    Some(s) => (&done[nearest].0, s),
                    None => (&anchor, &sens),
                };
                let (sample, accepted) = augment_one(nlp, base, base_sens, q, anchor_id, j, cfg);
                if let Some(pt) = accepted {
                    done.push((pt, None));
                }
                out[j] = Some(sample);
            }
            samples.extend(out.into_iter().flatten());
        }
    }

    AnchorResult {
        samples,
        failure: None,
        t_exact,
        t_augment: t1.elapsed(),
        chain_factorizations,
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Runs predictor(-corrector) augmentation over all anchors of `pbox`.
///
/// Anchors are processed in parallel; the output is ordered by
/// `(anchor_id, sample_index)` and independent of scheduling.
pub fn generate(
    nlp: &ParametricNlp,
    pbox: &ParamBox,
    cfg: &AugmentConfig,
    solver_cfg: &SolverConfig,
) -> Result<Dataset, AugmentError> {
    if pbox.len() != nlp.n_p() {
        return Err(AugmentError::Config(format!(
            "pbox: expected {} dimensions, got {}",
            nlp.n_p(),
            pbox.len()
        )));
    }
    cfg.validate(pbox)?;
    solver_cfg
        .validate()
        .map_err(|e| AugmentError::Config(format!("solver: {e}")))?;
    let cells = anchor_cells(pbox, cfg);
    generate_cells(nlp, &cells, cfg, solver_cfg)
}

/// As [`generate`] for precomputed anchor cells.
pub fn generate_cells(
    nlp: &ParametricNlp,
    cells: &[AnchorCell],
    cfg: &AugmentConfig,
    solver_cfg: &SolverConfig,
) -> Result<Dataset, AugmentError> {
    let wall = Instant::now();
    let sens_calls = AtomicUsize::new(0);
    let results: Vec<AnchorResult> = cells
        .par_iter()
        .enumerate()
        .map(|(i, cell)| process_anchor(nlp, cell, i, cfg, solver_cfg, &sens_calls))
        .collect();

    let mut ds = Dataset {
        anchors_attempted: cells.len(),
        ..Default::default()
    };
    for r in results {
        ds.timing.t_exact_s += r.t_exact.as_secs_f64();
        ds.timing.t_augment_s += r.t_augment.as_secs_f64();
        ds.chain_factorizations += r.chain_factorizations;
        ds.samples.extend(r.samples);
        if let Some(f) = r.failure {
            ds.anchor_failures.push(f);
        }
    }
    ds.sensitivity_calls = sens_calls.into_inner();
    ds.timing.t_wall_s = wall.elapsed().as_secs_f64();
    if ds.n_anchors() == 0 {
        return Err(AugmentError::NoAnchors(cells.len()));
    }
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub max_error: f64,
    pub probes: usize,
    pub skipped: usize,
    /// Summed exact re-solve time of the probes.
    pub t_resolve_s: f64,
}

/// Re-solves `Π(p)` from the problem's initial guess at up to `subsample`
/// randomly chosen valid augmented samples (all of them if `subsample` is at
/// least their count) and returns the largest `‖û − u*‖₂`. Falls back to the
/// anchors when there are no augmented samples.
pub fn max_policy_error(
    ds: &Dataset,
    nlp: &ParametricNlp,
    solver_cfg: &SolverConfig,
    subsample: usize,
    seed: u64,
) -> Result<ProbeReport, AugmentError> {
    let mut pool: Vec<&Sample> = ds.augmented().filter(|s| s.is_valid()).collect();
    if pool.is_empty() {
        pool = ds.anchors().collect();
    }
    if pool.is_empty() {
        return Err(AugmentError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<&Sample> = if subsample >= pool.len() {
        pool
    } else {
        pool.choose_multiple(&mut rng, subsample).copied().collect()
    };
    let results: Vec<(Option<f64>, f64)> = chosen
        .par_iter()
        .map(|s| {
            let t = Instant::now();
            let r = exact_action(nlp, &s.p, solver_cfg).map(|u| dist2(&u, &s.u).sqrt());
            (r, t.elapsed().as_secs_f64())
        })
        .collect();
    let mut report = ProbeReport {
        max_error: 0.0,
        probes: 0,
        skipped: 0,
        t_resolve_s: 0.0,
    };
    for (r, t) in results {
        report.t_resolve_s += t;
        match r {
            Some(e) => {
                report.probes += 1;
                report.max_error = report.max_error.max(e);
            }
            None => report.skipped += 1,
        }
    }
    Ok(report)
}

/// Exact MPC action at `p`; weakly active solutions are still usable labels.
pub fn exact_action(nlp: &ParametricNlp, p: &[f64], solver_cfg: &SolverConfig) -> Option<Vec<f64>> {
    match solve(nlp, p, None, solver_cfg) {
        Ok(sol) => Some(sol.point.action(nlp)),
        Err(SolveError::RegularityFailure { solution }) => Some(solution.point.action(nlp)),
        Err(e) => {
            log::warn!("exact solve at {p:?} failed: {e}");
            None
        }
    }
}

#[cfg(test)]
mod tests;
