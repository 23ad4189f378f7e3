//! McNemar tests and Holm–Bonferroni correction.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

/// Exact two-sided McNemar test: `2·min(P(X ≤ min(b, c)), 0.5)` with
/// `X ~ Binomial(b + c, 1/2)`, clamped to `[0, 1]`.
pub fn mcnemar_exact(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let Ok(dist) = Binomial::new(0.5, n) else { return 1.0 };
    (2.0 * dist.cdf(b.min(c)).min(0.5)).clamp(0.0, 1.0)
}

/// Asymptotic McNemar with continuity correction, for cross-checking.
pub fn mcnemar_chi2(b: u64, c: u64) -> f64 {
    let n = (b + c) as f64;
    if n == 0.0 {
        return 1.0;
    }
    let diff = ((b as f64 - c as f64).abs() - 1.0).max(0.0);
    let stat = diff * diff / n;
    ChiSquared::new(1.0).map(|d| d.sf(stat)).unwrap_or(1.0).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McNemarMethod {
    #[default]
    Exact,
    ChiSquare,
}

pub fn mcnemar(b: u64, c: u64, method: McNemarMethod) -> f64 {
    match method {
        McNemarMethod::Exact => mcnemar_exact(b, c),
        McNemarMethod::ChiSquare => mcnemar_chi2(b, c),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolmStep {
    /// Position in the caller's list.
    pub index: usize,
    pub p: f64,
    pub adjusted_threshold: f64,
    pub rejected: bool,
}

/// Holm step-down: ascending p-values, the i-th (0-based) tested against
/// `alpha / (m − i)`, rejecting until the first failure. Output is in
/// ascending-p order.
pub fn holm_bonferroni(p_values: &[f64], alpha: f64) -> Vec<HolmStep> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut still = true;
    order
        .into_iter()
        .enumerate()
        .map(|(i, index)| {
            let adjusted_threshold = alpha / (m - i) as f64;
            let p = p_values[index];
            still = still && p <= adjusted_threshold;
            HolmStep { index, p, adjusted_threshold, rejected: still }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert!((mcnemar_exact(76, 33) - 4.6555788945522814e-05).abs() < 1e-12);
        assert!((mcnemar_exact(71, 39) - 0.0029436388593452253).abs() < 1e-10);
        assert_eq!(mcnemar_exact(5, 5), 1.0);
        assert_eq!(mcnemar_exact(0, 0), 1.0);
        assert!((mcnemar_exact(10, 2) - 0.03857421875).abs() < 1e-12);
        assert!((mcnemar_exact(0, 7) - 0.015625).abs() < 1e-12);
        assert!((mcnemar_chi2(76, 33) - 5.749e-05).abs() < 1e-7);
        assert!((mcnemar_chi2(71, 39) - 0.0031193).abs() < 1e-6);
    }

    #[test]
    fn holm_traces() {
        let steps = holm_bonferroni(&[0.00006, 0.003], 0.05);
        assert_eq!(steps.iter().map(|s| s.adjusted_threshold).collect::<Vec<_>>(), vec![0.025, 0.05]);
        assert!(steps.iter().all(|s| s.rejected));

        assert!(!holm_bonferroni(&[0.5], 0.05)[0].rejected);

        let steps = holm_bonferroni(&[0.03, 0.02], 0.05);
        assert_eq!((steps[0].index, steps[0].p), (1, 0.02));
        assert!(steps[0].rejected && steps[1].rejected);

        let steps = holm_bonferroni(&[0.04, 0.001, 0.2], 0.05);
        assert_eq!(steps.iter().map(|s| s.rejected).collect::<Vec<_>>(), vec![true, false, false]);
        assert!(holm_bonferroni(&[], 0.05).is_empty());
    }
}
