//! False discovery proportion and power against known truth, and Monte Carlo
//! summaries.

use crate::data::Labels;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullKind {
    /// `H₀: Y^T = Y^C`.
    Zero,
    /// `H₀: Y^T ≤ Y^C`.
    Nonpositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub fdp: f64,
    pub power: f64,
    pub rejections: usize,
}

/// FDP `|R ∩ H₀| / max(|R|, 1)` and power `|R ∩ positive| / max(#positive, 1)`.
/// Ids missing from `labels` are ignored.
pub fn evaluate(rejected: &[usize], labels: &Labels, kind: NullKind) -> Evaluation {
    let index: HashMap<usize, usize> = labels.ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let null = match kind {
        NullKind::Zero => &labels.zero_null,
        NullKind::Nonpositive => &labels.nonpositive_null,
    };
    let mut false_hits = 0usize;
    let mut true_hits = 0usize;
    let mut seen = 0usize;
    for id in rejected {
        if let Some(&k) = index.get(id) {
            seen += 1;
            false_hits += null[k] as usize;
            true_hits += labels.positive[k] as usize;
        }
    }
    let n_pos = labels.positive.iter().filter(|&&p| p).count();
    Evaluation {
        fdp: false_hits as f64 / seen.max(1) as f64,
        power: true_hits as f64 / n_pos.max(1) as f64,
        rejections: seen,
    }
}

/// Mean and standard error `√(s²/n)` of replicate values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        if n == 0 {
            return Summary { mean: f64::NAN, se: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Summary { mean, se: (var / n as f64).sqrt(), n }
    }

    /// Binomial-style standard error `√(F(1−F)/n)` of the mean.
    pub fn binomial_se(&self) -> f64 {
        (self.mean * (1.0 - self.mean) / self.n as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Labels {
        Labels {
            ids: vec![0, 1, 2, 3, 4],
            zero_null: vec![true, true, false, false, false],
            nonpositive_null: vec![true, true, true, false, false],
            positive: vec![false, false, false, true, true],
        }
    }

    #[test]
    fn fdp_and_power() {
        let e = evaluate(&[0, 2, 3], &labels(), NullKind::Zero);
        assert!((e.fdp - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(e.power, 0.5);
        let e = evaluate(&[0, 2, 3], &labels(), NullKind::Nonpositive);
        assert!((e.fdp - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_rejection_has_zero_power_and_fdp() {
        let e = evaluate(&[], &labels(), NullKind::Zero);
        assert_eq!((e.fdp, e.power, e.rejections), (0.0, 0.0, 0));
    }

    #[test]
    fn summary_standard_error() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
