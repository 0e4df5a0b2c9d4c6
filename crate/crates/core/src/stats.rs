//! Statistics used by the experiment harness: Kolmogorov-Smirnov tests,
//! sample moments, log-log regression and empirical covariance matrices.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::numeric::neumaier_sum;

/// Standard normal CDF.
pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("valid normal").cdf(x)
}

/// Survival function of the Kolmogorov distribution,
/// `Q(x) = 2 Σ_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    // The alternating series converges quickly for x >~ 0.3; below that the
    // survival probability is 1 to double precision.
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = sign * (-2.0 * (k as f64) * (k as f64) * x * x).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test. Returns `(statistic, p_value)` with
/// the asymptotic p-value at effective size `n m / (n + m)`.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert!(!xs.is_empty() && !ys.is_empty());
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_unstable_by(|u, v| u.partial_cmp(v).unwrap());
    b.sort_unstable_by(|u, v| u.partial_cmp(v).unwrap());
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    let scaled = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_sf(scaled))
}

/// One-sample Kolmogorov-Smirnov test against a CDF.
pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    assert!(!xs.is_empty());
    let mut a = xs.to_vec();
    a.sort_unstable_by(|u, v| u.partial_cmp(v).unwrap());
    let n = a.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in a.iter().enumerate() {
        let f = cdf(x);
        d = d.max(((i + 1) as f64 / n - f).abs());
        d = d.max((f - i as f64 / n).abs());
    }
    let scaled = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    (d, kolmogorov_sf(scaled))
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = neumaier_sum(xs.iter().copied()) / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = neumaier_sum(xs.iter().map(|&x| (x - mean) * (x - mean))) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = neumaier_sum(xs.iter().copied()) / n;
    neumaier_sum(xs.iter().map(|&x| (x - mean) * (x - mean))) / (n - 1.0)
}

/// Sample skewness `m3 / m2^{3/2}`; its SE under normality is `sqrt(6/n)`.
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = neumaier_sum(xs.iter().copied()) / n;
    let m2 = neumaier_sum(xs.iter().map(|&x| (x - mean).powi(2))) / n;
    let m3 = neumaier_sum(xs.iter().map(|&x| (x - mean).powi(3))) / n;
    m3 / m2.powf(1.5)
}

/// Ordinary least squares `y = slope x + intercept`.
#[derive(Debug, Clone)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// 95% confidence interval on the slope (Student t).
    pub slope_ci: (f64, f64),
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    assert!(
        xs.len() >= 3,
        "need at least 3 points for a slope with error"
    );
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let dof = n - 2.0;
    let slope_se = if dof > 0.0 {
        (ssr / dof / sxx).sqrt()
    } else {
        f64::NAN
    };
    let half = if dof > 0.0 {
        let t = StudentsT::new(0.0, 1.0, dof).unwrap().inverse_cdf(0.975);
        t * slope_se
    } else {
        f64::NAN
    };
    LineFit {
        slope,
        intercept,
        slope_se,
        slope_ci: (slope - half, slope + half),
    }
}

/// Empirical covariance matrix of `samples` (one inner vector per trial).
pub fn empirical_covariance(samples: &[Vec<f64>]) -> DMatrix<f64> {
    let t = samples.len();
    assert!(t >= 2);
    let dim = samples[0].len();
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, &v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= t as f64;
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for s in samples {
        for i in 0..dim {
            let di = s[i] - mean[i];
            for j in i..dim {
                cov[(i, j)] += di * (s[j] - mean[j]);
            }
        }
    }
    let norm = 1.0 / (t as f64 - 1.0);
    for i in 0..dim {
        for j in i..dim {
            let v = cov[(i, j)] * norm;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc.sqrt()
}
