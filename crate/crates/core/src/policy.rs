//! Generalized regression neural network: Gaussian Nadaraya-Watson kernel
//! regression over per-dimension normalized parameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::Dataset;

/// Largest number of centers used for the bandwidth heuristic.
const BANDWIDTH_SUBSAMPLE: usize = 2000;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("dataset has no valid samples")]
    EmptyDataset,
    #[error("inconsistent sample widths: {0}")]
    Shape(String),
    #[error("bandwidth must be positive and finite, got {0}")]
    Bandwidth(f64),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Affine map `p̃ = (p − shift) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    /// Zero mean and unit standard deviation per dimension; constant
    /// dimensions keep unit scale.
    pub fn fit(points: &[Vec<f64>]) -> Self {
        let n = points.len() as f64;
        let dim = points[0].len();
        let mut shift = vec![0.0; dim];
        for p in points {
            for (s, v) in shift.iter_mut().zip(p) {
                *s += v / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for p in points {
            for ((s, v), m) in scale.iter_mut().zip(p).zip(&shift) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut scale {
            *s = s.sqrt();
            if !(*s > 1e-12 * (1.0 + s.abs())) {
                *s = 1.0;
            }
        }
        Self { shift, scale }
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(&self.shift)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyModel {
    pub normalization: Normalization,
    pub bandwidth: f64,
    /// Normalized kernel centers.
    pub centers: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

/// Fits a GRNN to the valid samples of `ds`.
pub fn fit(ds: &Dataset, bandwidth: Option<f64>) -> Result<PolicyModel, PolicyError> {
    let (p, u): (Vec<_>, Vec<_>) = ds.valid().map(|s| (s.p.clone(), s.u.clone())).unzip();
    fit_pairs(p, u, bandwidth)
}

/// Fits a GRNN to explicit `(p, u)` pairs.
pub fn fit_pairs(
    p: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    bandwidth: Option<f64>,
) -> Result<PolicyModel, PolicyError> {
    if p.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    if p.len() != u.len() {
        return Err(PolicyError::Shape(format!(
            "{} parameters but {} targets",
            p.len(),
            u.len()
        )));
    }
    let (n_p, n_u) = (p[0].len(), u[0].len());
    if n_p == 0 || p.iter().any(|v| v.len() != n_p) || u.iter().any(|v| v.len() != n_u) {
        return Err(PolicyError::Shape(
            "all samples must share their p and u widths".into(),
        ));
    }
    if p.iter().chain(&u).flatten().any(|v| !v.is_finite()) {
        return Err(PolicyError::Shape("samples must be finite".into()));
    }
    let normalization = Normalization::fit(&p);
    let centers: Vec<Vec<f64>> = p.iter().map(|v| normalization.apply(v)).collect();
    let bandwidth = match bandwidth {
        Some(b) if b > 0.0 && b.is_finite() => b,
        Some(b) => return Err(PolicyError::Bandwidth(b)),
        None => default_bandwidth(&centers),
    };
    Ok(PolicyModel {
        normalization,
        bandwidth,
        centers,
        targets: u,
    })
}

/// Half the median distance from a center to its nearest distinct center,
/// over an evenly strided subsample of at most 2000 centers. The subsample is
/// taken in lexicographic order so the result ignores sample order.
pub fn default_bandwidth(centers: &[Vec<f64>]) -> f64 {
    let stride = centers.len().div_ceil(BANDWIDTH_SUBSAMPLE).max(1);
    let mut sorted: Vec<&Vec<f64>> = centers.iter().collect();
    if stride > 1 {
        sorted.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
    }
    let mut nn: Vec<f64> = sorted
        .into_iter()
        .step_by(stride)
        .filter_map(|c| {
            centers
                .iter()
                .map(|o| dist2(c, o))
                .filter(|&d| d > 0.0)
                .min_by(f64::total_cmp)
                .map(f64::sqrt)
        })
        .collect();
    if nn.is_empty() {
        // All centers coincide; any bandwidth gives the same prediction.
        return 1.0;
    }
    nn.sort_by(f64::total_cmp);
    let mid = nn.len() / 2;
    let median = if nn.len() % 2 == 1 {
        nn[mid]
    } else {
        0.5 * (nn[mid - 1] + nn[mid])
    };
    0.5 * median
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl PolicyModel {
    pub fn n_p(&self) -> usize {
        self.normalization.shift.len()
    }

    pub fn n_u(&self) -> usize {
        self.targets[0].len()
    }

    /// Nadaraya-Watson estimate at `p`.
    ///
    /// Exponents are shifted by their minimum so the nearest center always
    /// has weight one and far extrapolation cannot underflow to 0/0.
    pub fn predict(&self, p: &[f64]) -> Vec<f64> {
        assert_eq!(p.len(), self.n_p(), "parameter dimension mismatch");
        let q = self.normalization.apply(p);
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let e: Vec<f64> = self.centers.iter().map(|c| dist2(&q, c) * inv).collect();
        let e_min = e.iter().copied().fold(f64::INFINITY, f64::min);
        let mut num = vec![0.0; self.n_u()];
        let mut den = 0.0;
        for (ei, t) in e.iter().zip(&self.targets) {
            let w = (e_min - ei).exp();
            if w == 0.0 {
                continue;
            }
            den += w;
            for (n, v) in num.iter_mut().zip(t) {
                *n += w * v;
            }
        }
        num.iter().map(|n| n / den).collect()
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::Invalid(m.into()));
        let n_p = self.normalization.shift.len();
        if self.centers.is_empty() {
            return bad("no centers");
        }
        if self.centers.len() != self.targets.len() {
            return bad("centers and targets differ in length");
        }
        if self.normalization.scale.len() != n_p
            || self.normalization.scale.iter().any(|s| !(*s > 0.0))
        {
            return bad("normalization scale must be positive per dimension");
        }
        if self.centers.iter().any(|c| c.len() != n_p) {
            return bad("center width differs from normalization");
        }
        let n_u = self.targets[0].len();
        if n_u == 0 || self.targets.iter().any(|t| t.len() != n_u) {
            return bad("targets must share a nonzero width");
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(PolicyError::Bandwidth(self.bandwidth));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, PolicyError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(p: &[f64], u: &[f64], bw: Option<f64>) -> PolicyModel {
        fit_pairs(
            p.iter().map(|&v| vec![v]).collect(),
            u.iter().map(|&v| vec![v]).collect(),
            bw,
        )
        .unwrap()
    }

    #[test]
    fn single_sample_is_constant() {
        let m = fit_pairs(vec![vec![1.0, 2.0]], vec![vec![0.7]], None).unwrap();
        for p in [[1.0, 2.0], [-50.0, 3.0], [1e6, -1e6]] {
            assert_eq!(m.predict(&p), vec![0.7]);
        }
    }

    #[test]
    fn equidistant_between_two_centers() {
        let m = model(&[0.0, 2.0], &[0.0, 2.0], Some(0.3));
        assert!((m.predict(&[1.0])[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn small_bandwidth_recovers_center_target() {
        let m = model(&[0.0, 1.0, 2.0], &[5.0, -3.0, 1.0], Some(1e-3));
        assert_eq!(m.predict(&[1.0]), vec![-3.0]);
    }

    #[test]
    fn far_extrapolation_is_finite() {
        let m = model(&[0.0, 1.0], &[5.0, -3.0], Some(1e-2));
        assert_eq!(m.predict(&[1e8]), vec![-3.0]);
        assert_eq!(m.predict(&[-1e8]), vec![5.0]);
    }

    #[test]
    fn duplicating_every_sample_changes_nothing() {
        let p = [0.1, 0.5, 0.9, 1.7];
        let u = [1.0, -1.0, 2.0, 0.5];
        let a = model(&p, &u, None);
        let pp: Vec<f64> = p.iter().chain(&p).copied().collect();
        let uu: Vec<f64> = u.iter().chain(&u).copied().collect();
        let b = model(&pp, &uu, None);
        assert!((a.bandwidth - b.bandwidth).abs() < 1e-15);
        for x in [0.0, 0.3, 1.2, 5.0] {
            assert!((a.predict(&[x])[0] - b.predict(&[x])[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn default_bandwidth_is_half_median_nn() {
        // Normalized spacing 1 for points with unit spread per gap.
        let c: Vec<Vec<f64>> = [0.0, 1.0, 3.0, 6.0].iter().map(|&v| vec![v]).collect();
        // Nearest distances: 1, 1, 2, 3 → median 1.5.
        assert!((default_bandwidth(&c) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(
            fit(&Dataset::default(), None),
            Err(PolicyError::EmptyDataset)
        ));
        assert!(matches!(
            fit_pairs(vec![vec![0.0]], vec![vec![1.0]], Some(0.0)),
            Err(PolicyError::Bandwidth(_))
        ));
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let m = model(&[0.0, 1.0], &[1.0, 2.0], None);
        let text = m.to_json().unwrap();
        for key in ["normalization", "bandwidth", "centers", "targets"] {
            assert!(text.contains(key));
        }
        assert_eq!(PolicyModel::from_json(&text).unwrap(), m);
        let extra = text.replacen('{', "{\"extra\": 1,", 1);
        assert!(PolicyModel::from_json(&extra).is_err());
        let broken = text.replace("\"bandwidth\": ", "\"bandwidth\": -");
        assert!(PolicyModel::from_json(&broken).is_err());
    }

    fn dataset() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
        prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -20.0..20.0f64), 1..30)
    }

    proptest! {
        #[test]
        fn prediction_within_target_bounds(data in dataset(), q in (-10.0..10.0f64, -10.0..10.0f64)) {
            let m = fit_pairs(
                data.iter().map(|d| vec![d.0, d.1]).collect(),
                data.iter().map(|d| vec![d.2]).collect(),
                None,
            ).unwrap();
            let lo = data.iter().map(|d| d.2).fold(f64::INFINITY, f64::min);
            let hi = data.iter().map(|d| d.2).fold(f64::NEG_INFINITY, f64::max);
            let u = m.predict(&[q.0, q.1])[0];
            prop_assert!(u >= lo - 1e-9 * (1.0 + lo.abs()) && u <= hi + 1e-9 * (1.0 + hi.abs()));
        }

        #[test]
        fn prediction_is_permutation_invariant(data in dataset(), q in (-6.0..6.0f64, -6.0..6.0f64), rot in 0usize..30) {
            let fit_of = |d: &[(f64, f64, f64)]| fit_pairs(
                d.iter().map(|d| vec![d.0, d.1]).collect(),
                d.iter().map(|d| vec![d.2]).collect(),
                None,
            ).unwrap();
            let mut perm = data.clone();
            perm.reverse();
            let k = rot % perm.len();
            perm.rotate_left(k);
            let a = fit_of(&data).predict(&[q.0, q.1])[0];
            let b = fit_of(&perm).predict(&[q.0, q.1])[0];
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
