use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// `100 · (a − b) / b`.
pub fn relative_gain(a: f64, b: f64) -> Result<f64> {
    if b.is_nan() || b <= 0.0 {
        return Err(Error::invalid(format!(
            "relative gain against non-positive base {b}"
        )));
    }
    Ok(100.0 * (a - b) / b)
}

/// Paired t statistic of `a − b` with `n − 1` degrees of freedom, or `None`
/// when the differences have zero variance.
pub fn paired_t_statistic(a: &[f64], b: &[f64]) -> Result<Option<(f64, f64)>> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("paired test needs at least two users"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(None);
    }
    Ok(Some((mean / (var / n as f64).sqrt(), (n - 1) as f64)))
}

/// Two-sided paired t-test p-value. Zero-variance differences give `p = 1`
/// when they are all zero and `p = 0` otherwise.
pub fn paired_significance(a: &[f64], b: &[f64]) -> Result<f64> {
    match paired_t_statistic(a, b)? {
        Some((t, df)) => {
            let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid(e.to_string()))?;
            Ok((2.0 * dist.sf(t.abs())).min(1.0))
        }
        None if a.iter().zip(b).all(|(x, y)| x == y) => Ok(1.0),
        None => Ok(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_gain_arithmetic() {
        assert_eq!(relative_gain(0.0132, 0.0113).unwrap().round(), 17.0);
        assert_eq!(relative_gain(0.0217, 0.0191).unwrap().round(), 14.0);
        assert_eq!(relative_gain(0.3, 0.3).unwrap(), 0.0);
        assert!(relative_gain(0.1, 0.0).is_err());
        assert!(relative_gain(0.1, -0.2).is_err());
    }

    #[test]
    fn degenerate_cases() {
        let a = [0.5, 0.25, 0.125];
        assert_eq!(paired_significance(&a, &a).unwrap(), 1.0);
        let shifted: Vec<f64> = a.iter().map(|x| x + 0.25).collect();
        // Dyadic values, so every difference is exactly 0.25.
        assert_eq!(paired_significance(&shifted, &a).unwrap(), 0.0);
        assert!(paired_significance(&[0.1], &[0.2]).is_err());
        assert!(paired_significance(&[0.1, 0.2], &[0.2]).is_err());
    }

    /// Student t density normalized with Γ at integer and half-integer
    /// arguments, built by recurrence from Γ(1) = 1 and Γ(1/2) = √π.
    fn t_density(x: f64, nu: u32) -> f64 {
        let gamma_half = |m: u32| -> f64 {
            // Γ(m / 2)
            let (mut g, mut z) = if m.is_multiple_of(2) {
                (1.0, 1.0)
            } else {
                (std::f64::consts::PI.sqrt(), 0.5)
            };
            while z < m as f64 / 2.0 {
                g *= z;
                z += 1.0;
            }
            g
        };
        let nu_f = nu as f64;
        gamma_half(nu + 1) / ((nu_f * std::f64::consts::PI).sqrt() * gamma_half(nu))
            * (1.0 + x * x / nu_f).powf(-(nu_f + 1.0) / 2.0)
    }

    /// Two-sided tail `1 − 2∫₀^|t| f` by composite Simpson quadrature.
    fn p_by_quadrature(t: f64, nu: u32) -> f64 {
        let steps = 20_000;
        let h = t.abs() / steps as f64;
        let mut s = t_density(0.0, nu) + t_density(t.abs(), nu);
        for i in 1..steps {
            s += t_density(i as f64 * h, nu) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        1.0 - 2.0 * s * h / 3.0
    }

    #[test]
    fn matches_closed_form_for_three_degrees_of_freedom() {
        // Differences [1, -1, 1, 1]: mean 0.5, sd 1, t = 1 with 3 df.
        let a = [1.0, 0.0, 1.0, 1.0];
        let b = [0.0, 1.0, 0.0, 0.0];
        let (t, df) = paired_t_statistic(&a, &b).unwrap().unwrap();
        assert!((t - 1.0).abs() < 1e-15);
        assert_eq!(df, 3.0);
        let x = t / 3f64.sqrt();
        let cdf = 0.5 + (x / (1.0 + x * x) + x.atan()) / std::f64::consts::PI;
        let p = paired_significance(&a, &b).unwrap();
        assert!((p - 2.0 * (1.0 - cdf)).abs() < 1e-12, "{p}");
        assert!((p - 0.390_98).abs() < 1e-4);
    }

    #[test]
    fn matches_quadrature_oracle() {
        let cases: [(&[f64], &[f64]); 3] = [
            (
                &[0.3, 0.5, 0.2, 0.9, 0.4, 0.6],
                &[0.1, 0.4, 0.3, 0.5, 0.2, 0.1],
            ),
            (&[1.0, 0.0, 0.5], &[0.0, 0.5, 0.0]),
            (
                &[0.11, 0.52, 0.33, 0.24, 0.65, 0.46, 0.17, 0.88, 0.29, 0.3],
                &[0.1; 10],
            ),
        ];
        for (a, b) in cases {
            let (t, df) = paired_t_statistic(a, b).unwrap().unwrap();
            let oracle = p_by_quadrature(t, df as u32);
            let p = paired_significance(a, b).unwrap();
            assert!((p - oracle).abs() < 1e-9, "p {p} oracle {oracle}");
        }
    }

    #[test]
    fn symmetric_in_argument_order() {
        let a = [0.3, 0.5, 0.2, 0.9];
        let b = [0.1, 0.4, 0.3, 0.5];
        assert_eq!(
            paired_significance(&a, &b).unwrap(),
            paired_significance(&b, &a).unwrap()
        );
    }
}
