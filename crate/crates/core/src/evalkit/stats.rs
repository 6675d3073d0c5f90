//! One-sample tests of oriented Likert ratings against the neutral midpoint.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use super::{Metric, OrientedRating};

/// "No difference" on the oriented 5-point scale.
pub const NEUTRAL_RATING: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Degenerate {
    /// Every rating equals the null mean.
    MeanEqualsMu,
    /// Constant ratings away from the null mean; t and d are unbounded.
    MeanDiffers,
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 ratings, got {0}")]
    TooFewSamples(usize),
    #[error("zero variance sample ({0:?}); effect size undefined")]
    DegenerateSample(Degenerate),
}

/// Sample mean and standard deviation (n - 1 denominator).
pub fn describe(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, f64::NAN);
    }
    let ss: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneSampleTest {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p_value: f64,
    pub cohens_d: f64,
}

pub fn one_sample_test(samples: &[f64], mu: f64) -> Result<OneSampleTest, StatsError> {
    let n = samples.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples(n));
    }
    let (mean, sd) = describe(samples);
    if sd == 0.0 {
        let kind = if mean == mu {
            Degenerate::MeanEqualsMu
        } else {
            Degenerate::MeanDiffers
        };
        return Err(StatsError::DegenerateSample(kind));
    }
    let df = (n - 1) as f64;
    let t = (mean - mu) / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    let p_value = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(OneSampleTest {
        n,
        mean,
        sd,
        t,
        df,
        p_value,
        cohens_d: (mean - mu) / sd,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Ratings that differ from the null mean.
    pub n_nonzero: usize,
    pub w_plus: f64,
    pub z: f64,
    /// Two-sided, normal approximation with tie correction.
    pub p_value: f64,
}

/// Wilcoxon signed-rank test of `samples` against `mu`. Zero differences are
/// dropped; tied magnitudes get average ranks.
pub fn wilcoxon_signed_rank(samples: &[f64], mu: f64) -> WilcoxonResult {
    let mut diffs: Vec<f64> = samples.iter().map(|x| x - mu).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return WilcoxonResult {
            n_nonzero: 0,
            w_plus: 0.0,
            z: 0.0,
            p_value: 1.0,
        };
    }
    diffs.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mut w_plus = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[j + 1].abs() == diffs[i].abs() {
            j += 1;
        }
        let group = (j - i + 1) as f64;
        let avg_rank = (i + j + 2) as f64 / 2.0;
        w_plus += diffs[i..=j].iter().filter(|d| **d > 0.0).count() as f64 * avg_rank;
        tie_term += group.powi(3) - group;
        i = j + 1;
    }
    let nf = n as f64;
    let expected = nf * (nf + 1.0) / 4.0;
    let variance = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = if variance > 0.0 {
        (w_plus - expected) / variance.sqrt()
    } else {
        0.0
    };
    let normal = Normal::standard();
    WilcoxonResult {
        n_nonzero: n,
        w_plus,
        z,
        p_value: (2.0 * normal.sf(z.abs())).min(1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShareBreakdown {
    /// Oriented score 4 or 5.
    pub favorable: f64,
    /// Oriented score 3.
    pub neutral: f64,
    /// Oriented score 1 or 2.
    pub unfavorable: f64,
}

impl ShareBreakdown {
    /// Oriented score 3, 4 or 5.
    pub fn equal_or_better(&self) -> f64 {
        self.favorable + self.neutral
    }
}

pub fn favorability(scores: &[u8]) -> ShareBreakdown {
    let n = scores.len().max(1) as f64;
    let count = |f: fn(u8) -> bool| scores.iter().filter(|s| f(**s)).count() as f64 / n;
    ShareBreakdown {
        favorable: count(|s| s >= 4),
        neutral: count(|s| s == 3),
        unfavorable: count(|s| s <= 2),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: Option<f64>,
    pub favorability: f64,
    pub equal_or_better: f64,
    pub t: Option<f64>,
    pub p_value: Option<f64>,
    pub cohens_d: Option<f64>,
    pub wilcoxon_p: f64,
    pub degenerate: Option<Degenerate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub mu: f64,
    pub metrics: BTreeMap<Metric, MetricSummary>,
}

/// Per-metric statistics of oriented ratings against the neutral midpoint.
pub fn summarize(ratings: &[OrientedRating]) -> StatsSummary {
    let mut by_metric: BTreeMap<Metric, Vec<u8>> = BTreeMap::new();
    for r in ratings {
        by_metric.entry(r.metric).or_default().push(r.score);
    }
    let metrics = by_metric
        .into_iter()
        .map(|(metric, scores)| {
            let samples: Vec<f64> = scores.iter().map(|s| *s as f64).collect();
            let shares = favorability(&scores);
            let (mean, sd) = describe(&samples);
            let test = one_sample_test(&samples, NEUTRAL_RATING);
            let summary = MetricSummary {
                n: scores.len(),
                mean,
                sd: sd.is_finite().then_some(sd),
                favorability: shares.favorable,
                equal_or_better: shares.equal_or_better(),
                t: test.as_ref().ok().map(|t| t.t),
                p_value: test.as_ref().ok().map(|t| t.p_value),
                cohens_d: test.as_ref().ok().map(|t| t.cohens_d),
                wilcoxon_p: wilcoxon_signed_rank(&samples, NEUTRAL_RATING).p_value,
                degenerate: match test {
                    Err(StatsError::DegenerateSample(kind)) => Some(kind),
                    _ => None,
                },
            };
            (metric, summary)
        })
        .collect();
    StatsSummary {
        mu: NEUTRAL_RATING,
        metrics,
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    #[test]
    fn alternating_three_four() {
        let x: Vec<f64> = [3.0, 4.0].repeat(5);
        let r = one_sample_test(&x, 3.0).unwrap();
        assert_abs_diff_eq!(r.mean, 3.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.sd, 0.5270462766947299, epsilon = 1e-12);
        assert_abs_diff_eq!(r.t, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.cohens_d, 0.9486832980505138, epsilon = 1e-12);
    }

    #[test]
    fn constant_ratings_are_degenerate() {
        assert_eq!(
            one_sample_test(&[3.0; 6], 3.0),
            Err(StatsError::DegenerateSample(Degenerate::MeanEqualsMu))
        );
        assert_eq!(
            one_sample_test(&[5.0; 6], 3.0),
            Err(StatsError::DegenerateSample(Degenerate::MeanDiffers))
        );
        assert_eq!(one_sample_test(&[4.0], 3.0), Err(StatsError::TooFewSamples(1)));
    }

    #[test]
    fn favorability_counts() {
        let s = favorability(&[5, 4, 3, 2, 1]);
        assert_abs_diff_eq!(s.favorable, 0.4);
        assert_abs_diff_eq!(s.equal_or_better(), 0.6);
        assert_abs_diff_eq!(s.favorable + s.neutral + s.unfavorable, 1.0);
    }

    #[test]
    fn wilcoxon_all_neutral() {
        let w = wilcoxon_signed_rank(&[3.0; 4], 3.0);
        assert_eq!((w.n_nonzero, w.p_value), (0, 1.0));
    }

    #[test]
    fn summary_flags_degenerate_metric() {
        let ratings: Vec<OrientedRating> = (0..5)
            .map(|_| OrientedRating {
                metric: Metric::Correctness,
                score: 3,
            })
            .chain([4, 5, 4].into_iter().map(|score| OrientedRating {
                metric: Metric::ContextualFit,
                score,
            }))
            .collect();
        let s = summarize(&ratings);
        let c = &s.metrics[&Metric::Correctness];
        assert_eq!(c.degenerate, Some(Degenerate::MeanEqualsMu));
        assert!(c.cohens_d.is_none());
        let f = &s.metrics[&Metric::ContextualFit];
        assert!(f.cohens_d.unwrap() > 0.0);
        assert_abs_diff_eq!(f.favorability, 1.0);
    }
}
