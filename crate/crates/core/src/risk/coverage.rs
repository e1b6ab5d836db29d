//! Hit sequences and the unconditional-coverage, independence and
//! conditional-coverage likelihood-ratio tests.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Shortest hit sequence accepted by [`christoffersen_tests`].
pub const MIN_OUT_OF_SAMPLE: usize = 20;

/// `hit_t = realized_t <= -VaR_t`.
pub fn hit_sequence(realized: &[f64], var_path: &[f64]) -> Result<Vec<bool>> {
    if realized.len() != var_path.len() {
        return Err(Error::InvalidInput(format!(
            "{} realized returns for {} VaR values",
            realized.len(),
            var_path.len()
        )));
    }
    Ok(realized.iter().zip(var_path).map(|(&r, &v)| r <= -v).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageTests {
    pub n: usize,
    pub hits: usize,
    pub pi_hat: f64,
    pub lr_uc: f64,
    pub p_uc: f64,
    /// Missing when the hit sequence never changes.
    pub lr_ind: Option<f64>,
    pub p_ind: Option<f64>,
    pub lr_cc: Option<f64>,
    pub p_cc: Option<f64>,
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn bernoulli_ll(ones: f64, zeros: f64, p: f64) -> f64 {
    xlogy(ones, p) + xlogy(zeros, 1.0 - p)
}

fn chi2_sf(x: f64, df: f64) -> f64 {
    ChiSquared::new(df)
        .map(|d| d.sf(x.max(0.0)))
        .unwrap_or(f64::NAN)
        .clamp(0.0, 1.0)
}

pub fn christoffersen_tests(hits: &[bool], alpha: f64) -> Result<CoverageTests> {
    let n = hits.len();
    if n < MIN_OUT_OF_SAMPLE {
        return Err(Error::InvalidInput(format!(
            "coverage tests need at least {MIN_OUT_OF_SAMPLE} observations, got {n}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha = {alpha} outside (0, 1)")));
    }
    let x = hits.iter().filter(|&&h| h).count();
    let ones = x as f64;
    let zeros = (n - x) as f64;
    let pi_hat = ones / n as f64;
    let lr_uc = (-2.0 * (bernoulli_ll(ones, zeros, alpha) - bernoulli_ll(ones, zeros, pi_hat))).max(0.0);

    let (lr_ind, p_ind, lr_cc, p_cc) = if x == 0 || x == n {
        (None, None, None, None)
    } else {
        let mut c = [[0.0f64; 2]; 2];
        for w in hits.windows(2) {
            c[w[0] as usize][w[1] as usize] += 1.0;
        }
        let from0 = c[0][0] + c[0][1];
        let from1 = c[1][0] + c[1][1];
        let pooled = (c[0][1] + c[1][1]) / (from0 + from1);
        let mut unrestricted = 0.0;
        if from0 > 0.0 {
            unrestricted += bernoulli_ll(c[0][1], c[0][0], c[0][1] / from0);
        }
        if from1 > 0.0 {
            unrestricted += bernoulli_ll(c[1][1], c[1][0], c[1][1] / from1);
        }
        let restricted = bernoulli_ll(c[0][1] + c[1][1], c[0][0] + c[1][0], pooled);
        let lr_ind = (-2.0 * (restricted - unrestricted)).max(0.0);
        let lr_cc = lr_uc + lr_ind;
        (
            Some(lr_ind),
            Some(chi2_sf(lr_ind, 1.0)),
            Some(lr_cc),
            Some(chi2_sf(lr_cc, 2.0)),
        )
    };
    Ok(CoverageTests {
        n,
        hits: x,
        pi_hat,
        lr_uc,
        p_uc: chi2_sf(lr_uc, 1.0),
        lr_ind,
        p_ind,
        lr_cc,
        p_cc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hits_follow_violation_convention() {
        assert_eq!(hit_sequence(&[-5.0, 1.0], &[3.0, 3.0]).unwrap(), vec![true, false]);
        assert_eq!(hit_sequence(&[-3.0], &[3.0]).unwrap(), vec![true]);
        assert!(hit_sequence(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn exact_coverage_has_zero_statistic() {
        let mut hits = vec![false; 100];
        for k in [3, 27, 51, 70, 94] {
            hits[k] = true;
        }
        let t = christoffersen_tests(&hits, 0.05).unwrap();
        assert_eq!(t.lr_uc, 0.0);
        assert_relative_eq!(t.p_uc, 1.0);
    }

    #[test]
    fn degenerate_sequences_leave_independence_missing() {
        let t = christoffersen_tests(&[false; 30], 0.05).unwrap();
        assert!(t.lr_ind.is_none() && t.lr_cc.is_none());
        assert_eq!(t.pi_hat, 0.0);
        assert_relative_eq!(t.lr_uc, -2.0 * 30.0 * 0.95f64.ln(), epsilon = 1e-12);
        assert!(christoffersen_tests(&[true; 30], 0.05).unwrap().lr_ind.is_none());
    }

    #[test]
    fn alternating_hits_match_transition_likelihood() {
        let hits: Vec<bool> = (0..40).map(|t| t % 2 == 1).collect();
        let t = christoffersen_tests(&hits, 0.05).unwrap();
        // n01 = 20, n10 = 19, n00 = n11 = 0: unrestricted likelihood is 1
        let pooled: f64 = 20.0 / 39.0;
        let restricted = 20.0 * pooled.ln() + 19.0 * (1.0 - pooled).ln();
        assert_relative_eq!(t.lr_ind.unwrap(), -2.0 * restricted, epsilon = 1e-12);
        assert_relative_eq!(t.lr_cc.unwrap(), t.lr_uc + t.lr_ind.unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn short_sequences_refused() {
        assert!(christoffersen_tests(&[false; 19], 0.05).is_err());
    }
}
