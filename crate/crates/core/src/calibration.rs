//! Fitting error models from matched (predictor, error) samples.
//!
//! Regression target is the absolute component error. For zero-mean
//! Gaussian errors `E|e| = sigma * sqrt(2/pi)`, so [`fit_sigma_model`]
//! rescales a fit into a standard-deviation model that can be squared onto
//! a covariance diagonal.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error_models::{ErrorModel, ModelError, PredictorKind};
use crate::geometry::{Mat2, Vec2};

/// `sqrt(pi / 2)`: converts a mean absolute deviation into a Gaussian sigma.
pub const MEAN_ABS_TO_SIGMA: f64 = 1.253_314_137_315_500_3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error(
        "design matrix is rank deficient ({distinct} distinct predictor values for degree {degree}); try degree 0"
    )]
    DegenerateFit { degree: usize, distinct: usize },
    #[error("R^2 is undefined: the samples have zero variance")]
    UndefinedRSquared,
    #[error("sample {index} is invalid: {reason}")]
    InvalidSample { index: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub predictor: f64,
    /// Signed component error in meters.
    pub error: f64,
}

impl ErrorSample {
    pub fn new(predictor: f64, error: f64) -> Self {
        Self { predictor, error }
    }
}

/// One row of a sample log: `predictor,error,component,source`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub predictor: f64,
    pub error: f64,
    pub component: String,
    pub source: String,
}

fn check_samples(samples: &[ErrorSample]) -> Result<(), CalibrationError> {
    for (index, s) in samples.iter().enumerate() {
        if !(s.predictor.is_finite() && s.predictor >= 0.0) {
            return Err(CalibrationError::InvalidSample {
                index,
                reason: format!("predictor {}", s.predictor),
            });
        }
        if !s.error.is_finite() {
            return Err(CalibrationError::InvalidSample {
                index,
                reason: format!("error {}", s.error),
            });
        }
    }
    Ok(())
}

fn mean_abs(samples: &[ErrorSample]) -> f64 {
    samples.iter().map(|s| s.error.abs()).sum::<f64>() / samples.len() as f64
}

/// Least-squares polynomial fit of `|error|` against the predictor through
/// the normal equations.
pub fn fit_error_model(
    samples: &[ErrorSample],
    degree: usize,
    kind: PredictorKind,
) -> Result<ErrorModel, CalibrationError> {
    if samples.len() <= degree + 1 {
        return Err(CalibrationError::InsufficientSamples {
            needed: degree + 2,
            got: samples.len(),
        });
    }
    check_samples(samples)?;
    if degree == 0 {
        return Ok(ErrorModel::new(kind, vec![mean_abs(samples)])?);
    }

    let mut distinct: Vec<f64> = samples.iter().map(|s| s.predictor).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() <= degree {
        return Err(CalibrationError::DegenerateFit {
            degree,
            distinct: distinct.len(),
        });
    }

    let cols = degree + 1;
    let mut xtx = DMatrix::<f64>::zeros(cols, cols);
    let mut xty = DVector::<f64>::zeros(cols);
    let mut powers = vec![0.0; 2 * degree + 1];
    for s in samples {
        let mut p = 1.0;
        for slot in powers.iter_mut() {
            *slot = p;
            p *= s.predictor;
        }
        let y = s.error.abs();
        for r in 0..cols {
            xty[r] += powers[r] * y;
            for c in 0..cols {
                xtx[(r, c)] += powers[r + c];
            }
        }
    }
    let solution = xtx
        .cholesky()
        .ok_or(CalibrationError::DegenerateFit {
            degree,
            distinct: distinct.len(),
        })?
        .solve(&xty);
    Ok(ErrorModel::new(kind, solution.iter().copied().collect())?)
}

/// [`fit_error_model`] rescaled from mean absolute error to a Gaussian
/// standard deviation.
pub fn fit_sigma_model(
    samples: &[ErrorSample],
    degree: usize,
    kind: PredictorKind,
) -> Result<ErrorModel, CalibrationError> {
    let mut model = fit_error_model(samples, degree, kind)?;
    for c in &mut model.coefficients {
        *c *= MEAN_ABS_TO_SIGMA;
    }
    Ok(model)
}

/// Degree-0 model: the mean absolute error.
pub fn fit_fixed_model(samples: &[ErrorSample], kind: PredictorKind) -> Result<ErrorModel, CalibrationError> {
    if samples.is_empty() {
        return Err(CalibrationError::InsufficientSamples { needed: 1, got: 0 });
    }
    check_samples(samples)?;
    Ok(ErrorModel::new(kind, vec![mean_abs(samples)])?)
}

/// Predictor kind implied by a component name: localizer components are
/// functions of speed, everything else of distance.
pub fn component_kind(component: &str) -> PredictorKind {
    if component.starts_with("localizer") {
        PredictorKind::Speed
    } else {
        PredictorKind::Distance
    }
}

/// Fits a sigma model of `degree` to every component present in `records`.
/// With all six components the map serializes as a model set.
pub fn fit_components(
    records: &[SampleRecord],
    degree: usize,
) -> Result<BTreeMap<String, ErrorModel>, CalibrationError> {
    let mut groups: BTreeMap<&str, Vec<ErrorSample>> = BTreeMap::new();
    for r in records {
        groups
            .entry(r.component.as_str())
            .or_default()
            .push(ErrorSample::new(r.predictor, r.error));
    }
    groups
        .into_iter()
        .map(|(component, samples)| {
            fit_sigma_model(&samples, degree, component_kind(component)).map(|m| (component.to_string(), m))
        })
        .collect()
}

/// Coefficient of determination of `model` against `|error|`.
pub fn fit_quality(samples: &[ErrorSample], model: &ErrorModel) -> Result<f64, CalibrationError> {
    if samples.len() < 2 {
        return Err(CalibrationError::InsufficientSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    check_samples(samples)?;
    let mean = mean_abs(samples);
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for s in samples {
        let y = s.error.abs();
        let r = y - model.eval(s.predictor)?;
        ss_res += r * r;
        ss_tot += (y - mean) * (y - mean);
    }
    if ss_tot == 0.0 {
        return Err(CalibrationError::UndefinedRSquared);
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Sample covariances of 2D localization errors at or below `split` speed
/// and above it, for checking how the error cloud grows with speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionedCovariance {
    pub slow: Mat2,
    pub slow_count: usize,
    pub fast: Mat2,
    pub fast_count: usize,
}

fn sample_covariance(errors: &[Vec2]) -> Mat2 {
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<Vec2>() / n;
    errors.iter().map(|e| (e - mean) * (e - mean).transpose()).sum::<Mat2>() / (n - 1.0)
}

/// Splits `(speed, error)` samples at `split` and returns each half's sample
/// covariance. Each half needs at least two samples.
pub fn partitioned_covariance(samples: &[(f64, Vec2)], split: f64) -> Result<PartitionedCovariance, CalibrationError> {
    for (index, (v, e)) in samples.iter().enumerate() {
        if !(v.is_finite() && *v >= 0.0 && e.iter().all(|x| x.is_finite())) {
            return Err(CalibrationError::InvalidSample {
                index,
                reason: format!("speed {v}, error ({}, {})", e.x, e.y),
            });
        }
    }
    let half = |slow: bool| -> Vec<Vec2> {
        samples
            .iter()
            .filter(|(v, _)| (*v <= split) == slow)
            .map(|(_, e)| *e)
            .collect()
    };
    let (slow, fast) = (half(true), half(false));
    let got = slow.len().min(fast.len());
    if got < 2 {
        return Err(CalibrationError::InsufficientSamples { needed: 2, got });
    }
    Ok(PartitionedCovariance {
        slow: sample_covariance(&slow),
        slow_count: slow.len(),
        fast: sample_covariance(&fast),
        fast_count: fast.len(),
    })
}

/// A matched observation / ground-truth pair with its error decomposed
/// along and across the ray from the sensor to the true object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub observation: usize,
    pub truth: usize,
    pub distance: f64,
    /// Range from the sensor to the true object.
    pub range: f64,
    pub distal_error: f64,
    pub perpendicular_error: f64,
}

impl MatchedPair {
    pub fn distal_sample(&self) -> ErrorSample {
        ErrorSample::new(self.range, self.distal_error)
    }

    pub fn perpendicular_sample(&self) -> ErrorSample {
        ErrorSample::new(self.range, self.perpendicular_error)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchOutcome {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_observations: Vec<usize>,
    pub unmatched_truth: Vec<usize>,
}

/// Minimum-cost one-to-one matching of points, pairs farther than
/// `max_dist` disallowed. Leaving an observation and a truth unmatched costs
/// `max_dist`, so every allowed pair is preferred to no match.
pub fn gnn_match(observations: &[Vec2], truth: &[Vec2], max_dist: f64) -> Vec<(usize, usize, f64)> {
    let n = observations.len();
    let m = truth.len();
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let size = n + m;
    let forbidden = f64::INFINITY;
    let mut cost = vec![vec![forbidden; size]; size];
    for i in 0..n {
        for j in 0..m {
            let d = (observations[i] - truth[j]).norm();
            if d <= max_dist {
                cost[i][j] = d;
            }
        }
        cost[i][m + i] = max_dist / 2.0;
    }
    for j in 0..m {
        cost[n + j][j] = max_dist / 2.0;
        for k in 0..n {
            cost[n + j][m + k] = 0.0;
        }
    }
    let assignment = hungarian(&cost);
    (0..n)
        .filter_map(|i| {
            let j = assignment[i];
            (j < m).then(|| (i, j, cost[i][j]))
        })
        .collect()
}

/// Global-nearest-neighbor matching of sensor observations to ground truth
/// (both in the same frame), reporting distal / perpendicular errors
/// relative to the ray from `sensor` to each true object.
pub fn match_observations_to_truth(observations: &[Vec2], truth: &[Vec2], sensor: Vec2, max_dist: f64) -> MatchOutcome {
    let matches = gnn_match(observations, truth, max_dist);
    let mut pairs = Vec::with_capacity(matches.len());
    for (i, j, distance) in matches {
        let ray = truth[j] - sensor;
        let range = ray.norm();
        let along = if range > 0.0 { ray / range } else { Vec2::new(1.0, 0.0) };
        let across = Vec2::new(-along.y, along.x);
        let e = observations[i] - truth[j];
        pairs.push(MatchedPair {
            observation: i,
            truth: j,
            distance,
            range,
            distal_error: e.dot(&along),
            perpendicular_error: e.dot(&across),
        });
    }
    let unmatched_observations = (0..observations.len())
        .filter(|i| !pairs.iter().any(|p| p.observation == *i))
        .collect();
    let unmatched_truth = (0..truth.len())
        .filter(|j| !pairs.iter().any(|p| p.truth == *j))
        .collect();
    MatchOutcome {
        pairs,
        unmatched_observations,
        unmatched_truth,
    }
}

/// Hungarian algorithm (shortest augmenting paths with potentials) on a
/// square cost matrix. Infinite entries are forbidden; a finite-cost
/// perfect matching must exist. Returns the column assigned to each row.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}
