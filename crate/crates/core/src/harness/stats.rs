//! Pairwise one-tailed two-sample Student t-tests.

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::config::StrategySpec;
use super::results::ResultsTable;
use crate::error::{Error, Result};

/// `p[row][col]` tests H1: mean(row) < mean(col).
#[derive(Debug, Clone, PartialEq)]
pub struct PValueGrid {
    pub strategies: Vec<StrategySpec>,
    /// `NaN` where a row has fewer than two samples.
    pub p: Vec<Vec<f64>>,
    /// Set where the pooled variance was zero and p was reported as 0.5.
    pub degenerate: Vec<Vec<bool>>,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let ss = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    (m, ss)
}

/// Pooled-variance t statistic of `a` against `b`, or `None` when the pooled
/// variance is zero.
pub fn pooled_t(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Validation(format!(
            "t-test needs at least two samples per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, ssa) = mean_var(a);
    let (mb, ssb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (ssa + ssb) / (na + nb - 2.0);
    if pooled <= 0.0 {
        return Ok(None);
    }
    Ok(Some((ma - mb) / (pooled * (1.0 / na + 1.0 / nb)).sqrt()))
}

/// One-tailed p-value for H1: mean(a) < mean(b), with the degenerate flag.
pub fn one_tailed_p(a: &[f64], b: &[f64]) -> Result<(f64, bool)> {
    let Some(t) = pooled_t(a, b)? else {
        return Ok((0.5, true));
    };
    let df = (a.len() + b.len() - 2) as f64;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Validation(e.to_string()))?;
    // Evaluate the lower tail on the non-positive side so that swapping the
    // arguments yields the exact complement.
    let p = if t == 0.0 {
        0.5
    } else if t < 0.0 {
        dist.cdf(t)
    } else {
        1.0 - dist.cdf(-t)
    };
    Ok((p, false))
}

/// Significance marker for a p-value.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.10 {
        "*"
    } else {
        ""
    }
}

/// Tests every ordered pair of strategies. Samples are the per-display-size
/// mean RMSEs, or every per-user RMSE when `per_user` is set.
pub fn t_test_matrix(results: &ResultsTable, per_user: bool) -> PValueGrid {
    let samples: Vec<Vec<f64>> = (0..results.strategies.len())
        .map(|r| {
            if per_user {
                results.pooled_samples(r)
            } else {
                results.size_means(r)
            }
        })
        .collect();
    let n = samples.len();
    let mut p = vec![vec![f64::NAN; n]; n];
    let mut degenerate = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                p[i][j] = 0.5;
                continue;
            }
            if let Ok((pv, flag)) = one_tailed_p(&samples[i], &samples[j]) {
                p[i][j] = pv;
                degenerate[i][j] = flag;
            }
        }
    }
    PValueGrid {
        strategies: results.strategies.clone(),
        p,
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Regularized incomplete beta via continued fraction, for an
    /// independent Student t lower tail.
    fn t_cdf_oracle(t: f64, df: f64) -> f64 {
        fn ln_gamma(x: f64) -> f64 {
            let g = [
                76.18009172947146,
                -86.50532032941677,
                24.01409824083091,
                -1.231739572450155,
                0.1208650973866179e-2,
                -0.5395239384953e-5,
            ];
            let mut y = x;
            let tmp = x + 5.5 - (x + 0.5) * (x + 5.5).ln();
            let mut ser = 1.000000000190015;
            for c in g {
                y += 1.0;
                ser += c / y;
            }
            -tmp + (2.5066282746310005 * ser / x).ln()
        }
        fn betacf(a: f64, b: f64, x: f64) -> f64 {
            let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
            let mut c = 1.0;
            let mut d = 1.0 - qab * x / qap;
            d = 1.0 / d;
            let mut h = d;
            for m in 1..300 {
                let m = m as f64;
                let m2 = 2.0 * m;
                let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
                d = 1.0 / (1.0 + aa * d);
                c = 1.0 + aa / c;
                h *= d * c;
                let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
                d = 1.0 / (1.0 + aa * d);
                c = 1.0 + aa / c;
                let del = d * c;
                h *= del;
                if (del - 1.0).abs() < 1e-15 {
                    break;
                }
            }
            h
        }
        let x = df / (df + t * t);
        let (a, b) = (df / 2.0, 0.5);
        let bt = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
        let ib = if x < (a + 1.0) / (a + b + 2.0) {
            bt * betacf(a, b, x) / a
        } else {
            1.0 - bt * betacf(b, a, 1.0 - x) / b
        };
        if t < 0.0 {
            0.5 * ib
        } else {
            1.0 - 0.5 * ib
        }
    }

    #[test]
    fn hand_computed_t() {
        // means 2 and 5, pooled variance 1, n = 3 each: t = -3 / sqrt(2/3)
        let t = pooled_t(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap().unwrap();
        assert!((t + 3.0 / (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let (p, flag) = one_tailed_p(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!(!flag);
        assert!((p - t_cdf_oracle(t, 4.0)).abs() < 1e-8, "{p}");
    }

    #[test]
    fn separated_samples_are_highly_significant() {
        let a = [0.1, 0.1001, 0.0999, 0.1];
        let b = [0.9, 0.9001, 0.8999, 0.9];
        assert!(one_tailed_p(&a, &b).unwrap().0 < 0.001);
        assert!(one_tailed_p(&b, &a).unwrap().0 > 0.999);
    }

    #[test]
    fn degenerate_and_small_samples() {
        assert_eq!(one_tailed_p(&[0.3, 0.3], &[0.3, 0.3]).unwrap(), (0.5, true));
        assert_eq!(one_tailed_p(&[0.1, 0.1], &[0.4, 0.4]).unwrap(), (0.5, true));
        assert!(one_tailed_p(&[0.1], &[0.2, 0.3]).is_err());
    }

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(0.04), "**");
        assert_eq!(stars(0.005), "***");
        assert_eq!(stars(0.2), "");
        assert_eq!(stars(0.07), "*");
        assert_eq!(stars(0.10), "");
        assert_eq!(stars(0.05), "*");
        assert_eq!(stars(0.01), "**");
    }

    proptest::proptest! {
        #[test]
        fn complement_and_oracle(
            a in proptest::collection::vec(0.0f64..1.0, 2..8),
            b in proptest::collection::vec(0.0f64..1.0, 2..8),
        ) {
            let (pab, _) = one_tailed_p(&a, &b).unwrap();
            let (pba, _) = one_tailed_p(&b, &a).unwrap();
            proptest::prop_assert!((pab + pba - 1.0).abs() < 1e-12);
            if let Some(t) = pooled_t(&a, &b).unwrap() {
                let df = (a.len() + b.len() - 2) as f64;
                proptest::prop_assert!((pab - t_cdf_oracle(t, df)).abs() < 1e-7);
            }
        }
    }
}
