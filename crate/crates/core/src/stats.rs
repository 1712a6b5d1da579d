//! Small statistical helpers used by the diagnostics and the test suites.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::model::Estimate;

/// Sample mean and its standard error.
pub fn mean_stderr(values: impl IntoIterator<Item = f64>) -> Estimate {
    let (mut n, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
    for v in values {
        n += 1.0;
        let delta = v - mean;
        mean += delta / n;
        m2 += delta * (v - mean);
    }
    if n < 2.0 {
        return Estimate {
            value: mean,
            stderr: 0.0,
        };
    }
    Estimate {
        value: mean,
        stderr: (m2 / (n - 1.0) / n).sqrt(),
    }
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "KS needs non-empty samples");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0f64, |d, (i, &v)| {
        let f = cdf(v);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}

/// Chi-square homogeneity test of two count vectors over the same
/// categories. Categories with expected count below 5 are pooled.
/// Returns `(statistic, degrees of freedom, p-value)`.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> (f64, usize, f64) {
    assert_eq!(a.len(), b.len());
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let n = na + nb;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pend = (0.0, 0.0);
    for (&ca, &cb) in a.iter().zip(b) {
        pend.0 += ca as f64;
        pend.1 += cb as f64;
        let tot = pend.0 + pend.1;
        if tot * na.min(nb) / n >= 5.0 {
            cells.push(pend);
            pend = (0.0, 0.0);
        }
    }
    if pend.0 + pend.1 > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += pend.0;
                last.1 += pend.1;
            }
            None => cells.push(pend),
        }
    }
    if cells.len() < 2 {
        return (0.0, 0, 1.0);
    }
    let stat: f64 = cells
        .iter()
        .map(|&(ca, cb)| {
            let tot = ca + cb;
            let (ea, eb) = (tot * na / n, tot * nb / n);
            (ca - ea).powi(2) / ea + (cb - eb).powi(2) / eb
        })
        .sum();
    let dof = cells.len() - 1;
    let p = 1.0 - ChiSquared::new(dof as f64).expect("dof > 0").cdf(stat);
    (stat, dof, p)
}

pub fn normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Ordinary least squares fit `y = a + b x`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r2: f64,
    /// Standard error of the intercept (weighted fits only; zero otherwise).
    pub intercept_stderr: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    weighted_fit(x, y, &vec![1.0; x.len()], false)
}

/// Weighted least squares with known standard errors `se` on `y`; the
/// intercept standard error follows from the weights.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], se: &[f64]) -> LinearFit {
    let w: Vec<f64> = se.iter().map(|s| 1.0 / (s * s)).collect();
    weighted_fit(x, y, &w, true)
}

fn weighted_fit(x: &[f64], y: &[f64], w: &[f64], known_var: bool) -> LinearFit {
    assert!(x.len() == y.len() && x.len() == w.len() && x.len() >= 2);
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * dy;
        syy += w[i] * dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    let intercept_stderr = if known_var {
        (1.0 / sw + mx * mx / sxx).sqrt()
    } else {
        0.0
    };
    LinearFit {
        intercept,
        slope,
        r2,
        intercept_stderr,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_stderr() {
        let e = mean_stderr([1.0, 2.0, 3.0, 4.0]);
        assert!((e.value - 2.5).abs() < 1e-15);
        // sample variance 5/3
        assert!((e.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        assert_eq!(ks_two_sample(&a, &[10.0, 11.0]), 1.0);
        assert!((ks_two_sample(&[1.0, 2.0], &[1.5, 2.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_one_sample_uniform_grid() {
        let s: Vec<f64> = (0..10).map(|i| (i as f64 + 0.5) / 10.0).collect();
        assert!((ks_one_sample(&s, |v| v.clamp(0.0, 1.0)) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn chi_square_equal_counts_has_unit_p() {
        let (stat, dof, p) = chi_square_homogeneity(&[100, 200, 300], &[100, 200, 300]);
        assert_eq!(stat, 0.0);
        assert_eq!(dof, 2);
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_detects_difference() {
        let (_, _, p) = chi_square_homogeneity(&[500, 500], &[300, 700]);
        assert!(p < 1e-10);
    }

    #[test]
    fn exact_line_fit() {
        let x = [0.0, 1.0, 2.0];
        let f = linear_fit(&x, &[1.0, 3.0, 5.0]);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        let w = weighted_linear_fit(&x, &[1.0, 3.0, 5.0], &[1.0, 1.0, 1.0]);
        // intercept variance 1/n + mean^2 / Sxx = 1/3 + 1/2
        assert!((w.intercept_stderr - (1.0f64 / 3.0 + 0.5).sqrt()).abs() < 1e-12);
    }
}
