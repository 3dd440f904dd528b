//! Off-the-shelf learners used by the analyst's strategies and by the
//! outcome model behind the residuals.

mod forest;
mod linear;

pub use forest::{Forest, Tree};
pub use linear::{fit_least_squares, LinearFit};

use crate::error::{invalid, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    ForestClassifier,
    ForestRegressor,
    LeastSquares,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesPerSplit {
    Sqrt,
    All,
    Count(usize),
}

impl FeaturesPerSplit {
    pub fn resolve(self, d: usize) -> usize {
        match self {
            FeaturesPerSplit::Sqrt => ((d as f64).sqrt().floor() as usize).max(1).min(d),
            FeaturesPerSplit::All => d,
            FeaturesPerSplit::Count(k) => k.clamp(1, d.max(1)).min(d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: FeaturesPerSplit,
    pub seed: u64,
}

impl LearnerSpec {
    pub fn forest_regressor(seed: u64) -> Self {
        LearnerSpec {
            kind: LearnerKind::ForestRegressor,
            trees: 100,
            max_depth: 8,
            min_leaf: 5,
            features_per_split: FeaturesPerSplit::Sqrt,
            seed,
        }
    }

    pub fn forest_classifier(seed: u64) -> Self {
        LearnerSpec { kind: LearnerKind::ForestClassifier, ..Self::forest_regressor(seed) }
    }

    pub fn least_squares() -> Self {
        LearnerSpec { kind: LearnerKind::LeastSquares, ..Self::forest_regressor(0) }
    }

    pub fn with_kind(self, kind: LearnerKind) -> Self {
        LearnerSpec { kind, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        LearnerSpec { seed, ..self }
    }
}

/// Row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub values: Vec<f64>,
    pub d: usize,
}

impl Features {
    pub fn new(d: usize) -> Self {
        Features { values: Vec::new(), d }
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.d);
        self.values.extend_from_slice(row);
    }

    pub fn rows(&self) -> usize {
        if self.d == 0 {
            0
        } else {
            self.values.len() / self.d
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Forest(Forest),
    Linear(LinearFit),
}

impl FittedModel {
    /// Regression prediction, or probability of the `+1` class for classifiers.
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            FittedModel::Forest(f) => f.predict(x),
            FittedModel::Linear(l) => l.predict(x),
        }
    }
}

/// Fits a learner on `n` rows. Classifier labels must be `±1`. With `d = 0`
/// the feature matrix is ignored and `n` is taken from `labels`.
pub fn fit(spec: &LearnerSpec, features: &Features, labels: &[f64]) -> Result<FittedModel> {
    let n = labels.len();
    if n == 0 {
        return Err(invalid("cannot fit a learner on zero rows"));
    }
    if features.d > 0 && features.rows() != n {
        return Err(invalid("feature rows and labels disagree"));
    }
    if labels.iter().any(|v| !v.is_finite()) {
        return Err(invalid("labels must be finite"));
    }
    match spec.kind {
        LearnerKind::ForestClassifier => {
            if labels.iter().any(|&v| v != 1.0 && v != -1.0) {
                return Err(invalid("classifier labels must be +1 or -1"));
            }
            Ok(FittedModel::Forest(Forest::fit(spec, features, labels, true)?))
        }
        LearnerKind::ForestRegressor => Ok(FittedModel::Forest(Forest::fit(spec, features, labels, false)?)),
        LearnerKind::LeastSquares => Ok(FittedModel::Linear(fit_least_squares(features, labels)?)),
    }
}
