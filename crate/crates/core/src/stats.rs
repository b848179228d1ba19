//! Small statistics toolkit for the studies: two-sample KS, means with
//! standard errors, log-log power fits with bootstrap intervals, and a
//! one-sided rank test.

use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ensure, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    /// Standard error of the mean.
    pub se: f64,
    pub sd: f64,
    pub count: usize,
}

pub fn estimate(xs: &[f64]) -> Estimate {
    let count = xs.len();
    if count == 0 {
        return Estimate { mean: f64::NAN, se: f64::NAN, sd: f64::NAN, count };
    }
    let nf = count as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let var = if count > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)
    } else {
        0.0
    };
    Estimate { mean, se: (var / nf).sqrt(), sd: var.sqrt(), count }
}

/// Sample variance with its standard error (fourth-moment formula).
pub fn variance_estimate(xs: &[f64]) -> Estimate {
    let nf = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / nf;
    let sq: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    let mut e = estimate(&sq);
    // unbiased scaling of the point value; the SE comes from the squared deviations
    e.mean *= nf / (nf - 1.0);
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    /// Asymptotic two-sided p-value.
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

/// Two-sample Kolmogorov-Smirnov distance; ties are handled by stepping both
/// empirical CDFs past equal values together.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    ensure(!a.is_empty() && !b.is_empty(), || "KS needs two nonempty samples".into())?;
    ensure(a.iter().chain(b).all(|x| !x.is_nan()), || "KS sample contains NaN".into())?;
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n1, n2) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n1 && j < n2 {
        let v = x[i].min(y[j]);
        while i < n1 && x[i] <= v {
            i += 1;
        }
        while j < n2 && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let en = ((n1 * n2) as f64 / (n1 + n2) as f64).sqrt();
    let p_value = kolmogorov_q((en + 0.12 + 0.11 / en) * d);
    Ok(KsResult { statistic: d, p_value, n1, n2 })
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let a = -2.0 * lambda * lambda;
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = sign * (a * jf * jf).exp();
        sum += term;
        if term.abs() < 1e-12 * sum.abs() || term.abs() < 1e-300 {
            return (2.0 * sum).clamp(0.0, 1.0);
        }
        sign = -sign;
    }
    1.0
}

/// Ordinary least squares `y = intercept + slope x`.
pub fn ols(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    ensure(x.len() == y.len() && x.len() >= 2, || "ols needs >= 2 paired points".into())?;
    let nf = x.len() as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    ensure(sxx > 0.0, || "ols needs distinct abscissae".into())?;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Bootstrap standard deviation of the slope.
    pub slope_se: f64,
    pub bootstrap: usize,
    pub replicas_per_point: Vec<usize>,
}

impl PowerFit {
    pub fn covers(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }
    pub fn ci_width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Fits `log mean(samples[i]) = c + slope log sizes[i]`, with a percentile
/// CI (level `1 - alpha`) from resampling the replicas within each size.
pub fn loglog_fit(
    sizes: &[f64],
    samples: &[Vec<f64>],
    bootstrap: usize,
    alpha: f64,
    rng: &mut SimRng,
) -> Result<PowerFit> {
    ensure(sizes.len() == samples.len(), || "sizes and samples differ in length".into())?;
    ensure(sizes.len() >= 2, || "a power fit needs at least two sizes".into())?;
    ensure(samples.iter().all(|s| !s.is_empty()), || "empty sample in power fit".into())?;
    ensure(sizes.iter().all(|&s| s > 0.0), || "sizes must be positive".into())?;
    let lx: Vec<f64> = sizes.iter().map(|s| s.ln()).collect();
    let log_mean = |m: f64| -> Result<f64> {
        ensure(m > 0.0, || format!("nonpositive mean {m} in power fit"))?;
        Ok(m.ln())
    };
    let ly = samples.iter().map(|s| log_mean(mean(s))).collect::<Result<Vec<_>>>()?;
    let (slope, intercept) = ols(&lx, &ly)?;

    let mut slopes = Vec::with_capacity(bootstrap);
    let mut buf = Vec::new();
    for _ in 0..bootstrap {
        buf.clear();
        for s in samples {
            let m = (0..s.len()).map(|_| s[rng.random_range(0..s.len())]).sum::<f64>() / s.len() as f64;
            buf.push(if m > 0.0 { m.ln() } else { f64::NEG_INFINITY });
        }
        if buf.iter().all(|v| v.is_finite()) {
            slopes.push(ols(&lx, &buf)?.0);
        }
    }
    let (ci_low, ci_high, slope_se) = if slopes.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        slopes.sort_by(f64::total_cmp);
        (
            quantile_sorted(&slopes, alpha / 2.0),
            quantile_sorted(&slopes, 1.0 - alpha / 2.0),
            estimate(&slopes).sd,
        )
    };
    Ok(PowerFit {
        slope,
        intercept,
        ci_low,
        ci_high,
        slope_se,
        bootstrap: slopes.len(),
        replicas_per_point: samples.iter().map(Vec::len).collect(),
    })
}

/// Linear-interpolated quantile of a sorted sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankTest {
    /// Mann-Whitney `U` of the first sample.
    pub u: f64,
    pub z: f64,
    /// p-value for the alternative "first sample stochastically smaller".
    pub p_less: f64,
}

/// One-sided Mann-Whitney test with midranks and tie-corrected normal approximation.
pub fn mann_whitney_less(x: &[f64], y: &[f64]) -> Result<RankTest> {
    ensure(!x.is_empty() && !y.is_empty(), || "rank test needs two nonempty samples".into())?;
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let mut all: Vec<(f64, bool)> = x.iter().map(|&v| (v, true)).chain(y.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + j + 1) as f64 / 2.0;
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        rank_sum += midrank * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let u = rank_sum - n1 * (n1 + 1.0) / 2.0;
    let nt = n1 + n2;
    let var = n1 * n2 / 12.0 * ((nt + 1.0) - tie_term / (nt * (nt - 1.0)));
    let z = if var > 0.0 { (u - n1 * n2 / 2.0) / var.sqrt() } else { 0.0 };
    let p_less = Normal::standard().cdf(z);
    Ok(RankTest { u, z, p_less })
}
