//! Statistics shared by the diagnostics and the experiment harness: moment
//! estimators, jackknife standard errors, goodness-of-fit statistics and a
//! least-squares slope.

use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the sample mean.
pub fn standard_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Biased (method-of-moments) estimator `g1 = m3 / m2^{3/2}`.
pub fn skewness(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// `g2 = m4 / m2^2 - 3`.
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

/// Unbiased sample covariance of row-vectors `data[r]` across replicas.
pub fn sample_covariance(data: &[Vec<f64>]) -> DMatrix<f64> {
    let r = data.len();
    assert!(r >= 2, "covariance needs at least two replicas");
    let k = data[0].len();
    let mut mu = vec![0.0; k];
    for row in data {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= r as f64;
    }
    let mut cov: DMatrix<f64> = DMatrix::zeros(k, k);
    for row in data {
        for i in 0..k {
            for j in 0..k {
                cov[(i, j)] += (row[i] - mu[i]) * (row[j] - mu[j]);
            }
        }
    }
    cov / (r as f64 - 1.0)
}

/// Leave-one-out jackknife standard errors for every entry of the sample
/// covariance matrix.
pub fn jackknife_covariance_se(data: &[Vec<f64>]) -> DMatrix<f64> {
    let r = data.len();
    assert!(r >= 3, "jackknife needs at least three replicas");
    let k = data[0].len();

    // Running sums allow O(R K^2) leave-one-out recomputation.
    let mut sum = vec![0.0; k];
    let mut cross: DMatrix<f64> = DMatrix::zeros(k, k);
    for row in data {
        for i in 0..k {
            sum[i] += row[i];
            for j in 0..k {
                cross[(i, j)] += row[i] * row[j];
            }
        }
    }

    let mut loo: Vec<DMatrix<f64>> = vec![DMatrix::zeros(k, k); r];
    let m = (r - 1) as f64;
    for (idx, row) in data.iter().enumerate() {
        for i in 0..k {
            let si = sum[i] - row[i];
            for j in 0..k {
                let sj = sum[j] - row[j];
                let cij = cross[(i, j)] - row[i] * row[j];
                // Unbiased covariance of the remaining R-1 rows.
                loo[idx][(i, j)] = (cij - si * sj / m) / (m - 1.0);
            }
        }
    }

    let mut mean_loo: DMatrix<f64> = DMatrix::zeros(k, k);
    for l in &loo {
        mean_loo += l;
    }
    mean_loo /= r as f64;

    let mut se: DMatrix<f64> = DMatrix::zeros(k, k);
    for l in &loo {
        let d = l - &mean_loo;
        se.zip_apply(&d, |s, di| *s += di * di);
    }
    se.map(|v: f64| (v * (r as f64 - 1.0) / r as f64).sqrt())
}

/// Jackknife standard error of an arbitrary scalar statistic.
pub fn jackknife_se<F: Fn(&[f64]) -> f64>(xs: &[f64], stat: F) -> f64 {
    let r = xs.len();
    assert!(r >= 3);
    let mut loo = Vec::with_capacity(r);
    let mut buf = Vec::with_capacity(r - 1);
    for i in 0..r {
        buf.clear();
        buf.extend_from_slice(&xs[..i]);
        buf.extend_from_slice(&xs[i + 1..]);
        loo.push(stat(&buf));
    }
    let m = mean(&loo);
    let ss: f64 = loo.iter().map(|v| (v - m).powi(2)).sum();
    (ss * (r as f64 - 1.0) / r as f64).sqrt()
}

/// Two-sided Kolmogorov-Smirnov distance between the sample and the normal
/// law fitted to it (mean and standard deviation estimated from the data).
pub fn ks_distance_fitted_normal(xs: &[f64]) -> f64 {
    let mu = mean(xs);
    let sd = variance(xs).sqrt();
    let normal = Normal::new(mu, sd).expect("positive sd");
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let f = normal.cdf(*x);
        d = d.max(((i + 1) as f64 / n - f).abs());
        d = d.max((f - i as f64 / n).abs());
    }
    d
}

/// One-sample KS distance against an explicit CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(((i + 1) as f64 / n - f).abs());
        d = d.max((f - i as f64 / n).abs());
    }
    d
}

/// Asymptotic p-value for the one-sample KS statistic with a fully
/// specified null (Kolmogorov distribution tail).
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let t = (n as f64).sqrt() * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        p += sign * (-2.0 * (k as f64 * t).powi(2)).exp();
    }
    (2.0 * p).clamp(0.0, 1.0)
}

/// Pearson chi-square goodness-of-fit p-value for observed counts against
/// expected counts (expected from a fully specified law).
pub fn chi_square_pvalue(observed: &[u64], expected: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected.len());
    let mut stat = 0.0;
    let mut dof = 0usize;
    for (&o, &e) in observed.iter().zip(expected) {
        if e < 1e-12 {
            continue;
        }
        stat += (o as f64 - e).powi(2) / e;
        dof += 1;
    }
    assert!(dof >= 2, "chi-square needs at least two usable bins");
    let chi = ChiSquared::new((dof - 1) as f64).expect("positive dof");
    1.0 - chi.cdf(stat)
}

/// Least-squares slope of `y` against `x`.
pub fn linear_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
