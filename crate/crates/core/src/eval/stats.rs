use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("paired samples differ in length: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("need at least 2 pairs, got {n}")]
    TooFew { n: usize },
    #[error("degenerate variance: all paired differences are equal")]
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub t: f64,
    pub df: usize,
    pub p_value: f64,
    /// Paired effect size `mean(d) / sd(d)`.
    pub cohens_d: f64,
    pub mean_diff: f64,
    pub n: usize,
}

/// Two-sided p value of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: usize) -> f64 {
    let v = df as f64;
    beta_reg(v / 2.0, 0.5, v / (v + t * t))
}

/// Paired t-test on `a[i] - b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<SignificanceResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch { a: a.len(), b: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Err(StatsError::TooFew { n });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (nf - 1.0);
    if !(var > 0.0) {
        return Err(StatsError::ZeroVariance);
    }
    let sd = var.sqrt();
    let t = mean / (sd / nf.sqrt());
    let df = n - 1;
    Ok(SignificanceResult { t, df, p_value: student_t_two_sided_p(t, df), cohens_d: mean / sd, mean_diff: mean, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_example() {
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[0.0; 3]).unwrap();
        assert!((r.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        assert_eq!((r.df, r.n), (2, 3));
        assert!((r.cohens_d - 2.0).abs() < 1e-12);
        // df = 2 has the closed form p = 1 - |t| / sqrt(2 + t²)
        let closed = 1.0 - r.t / (2.0 + r.t * r.t).sqrt();
        assert!((r.p_value - closed).abs() < 1e-12);
    }

    #[test]
    fn reference_quantiles() {
        // df = 1 is Cauchy: p = 1 - 2·atan(|t|)/π
        for t in [0.5, 1.0, 3.0, 12.7062] {
            let closed = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
            assert!((student_t_two_sided_p(t, 1) - closed).abs() < 1e-12);
        }
        // t_{0.975, 10} = 2.228138851986...
        assert!((student_t_two_sided_p(2.228_138_851_986_274, 10) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        assert_eq!(paired_t_test(&[0.3, 0.4], &[0.3, 0.4]), Err(StatsError::ZeroVariance));
        assert_eq!(paired_t_test(&[1.0], &[0.0]), Err(StatsError::TooFew { n: 1 }));
        assert_eq!(paired_t_test(&[1.0, 2.0], &[0.0]), Err(StatsError::LengthMismatch { a: 2, b: 1 }));
    }

    #[test]
    fn p_at_zero_is_one() {
        for df in [1, 2, 5, 39, 1000] {
            assert_eq!(student_t_two_sided_p(0.0, df), 1.0);
        }
    }

    proptest! {
        #[test]
        fn negation_flips_sign_only(d in proptest::collection::vec(-5.0f64..5.0, 2..40)) {
            let zeros = vec![0.0; d.len()];
            let neg: Vec<f64> = d.iter().map(|v| -v).collect();
            if let (Ok(a), Ok(b)) = (paired_t_test(&d, &zeros), paired_t_test(&neg, &zeros)) {
                prop_assert!((a.t + b.t).abs() < 1e-9 * a.t.abs().max(1.0));
                prop_assert!((a.cohens_d + b.cohens_d).abs() < 1e-9 * a.cohens_d.abs().max(1.0));
                prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
                prop_assert!(a.p_value > 0.0 && a.p_value <= 1.0);
            }
        }

        #[test]
        fn p_monotone_in_abs_t(t1 in 0.0f64..20.0, dt in 0.001f64..5.0, df in 1usize..200) {
            prop_assert!(student_t_two_sided_p(t1 + dt, df) <= student_t_two_sided_p(t1, df));
            prop_assert_eq!(student_t_two_sided_p(-t1, df), student_t_two_sided_p(t1, df));
        }
    }
}
