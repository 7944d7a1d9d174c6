//! Goodness-of-fit and symmetry statistics used by the test harnesses.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

impl TestResult {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

/// Upper tail of the χ² distribution.
pub fn chi2_sf(statistic: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    dist.sf(statistic)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and a
/// continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let s = sorted(samples);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic p-value of a KS distance for effective sample size `n`.
pub fn ks_p_value(d: f64, n: f64) -> f64 {
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Bowker's test of symmetry of a square contingency table.
pub fn bowker(table: &[Vec<u64>]) -> TestResult {
    let k = table.len();
    let mut statistic = 0.0;
    let mut df = 0;
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = (table[i][j] as f64, table[j][i] as f64);
            if a + b > 0.0 {
                statistic += (a - b) * (a - b) / (a + b);
                df += 1;
            }
        }
    }
    TestResult {
        statistic,
        df,
        p_value: chi2_sf(statistic, df),
    }
}

/// χ² test that two independent samples share one categorical law.
pub fn homogeneity(a: &[u64], b: &[u64]) -> TestResult {
    assert_eq!(a.len(), b.len());
    let na: f64 = a.iter().map(|&c| c as f64).sum();
    let nb: f64 = b.iter().map(|&c| c as f64).sum();
    let total = na + nb;
    let mut statistic = 0.0;
    let mut cells = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        cells += 1;
        let ea = na * col / total;
        let eb = nb * col / total;
        statistic += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    let df = cells.saturating_sub(1);
    TestResult {
        statistic,
        df,
        p_value: chi2_sf(statistic, df),
    }
}

/// Wilson score interval for a binomial proportion at confidence `level`.
pub fn wilson(successes: usize, n: usize, level: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * nf)) / (1.0 + z2 / nf);
    let half = z / (1.0 + z2 / nf) * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Fixed rectangular binning in two variables; out-of-range values are
/// clamped into the edge bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram2d {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub bins: usize,
    pub counts: Vec<u64>,
}

impl Histogram2d {
    pub fn new(x_range: (f64, f64), y_range: (f64, f64), bins: usize) -> Self {
        Self {
            x_range,
            y_range,
            bins,
            counts: vec![0; bins * bins],
        }
    }

    fn bin(v: f64, (lo, hi): (f64, f64), bins: usize) -> usize {
        let t = ((v - lo) / (hi - lo) * bins as f64).floor();
        t.clamp(0.0, (bins - 1) as f64) as usize
    }

    pub fn add(&mut self, x: f64, y: f64) {
        let i = Self::bin(x, self.x_range, self.bins);
        let j = Self::bin(y, self.y_range, self.bins);
        self.counts[i * self.bins + j] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Total-variation distance between two count vectors on the same bins.
pub fn total_variation(p: &[u64], q: &[u64]) -> f64 {
    assert_eq!(p.len(), q.len());
    let np: f64 = p.iter().map(|&c| c as f64).sum();
    let nq: f64 = q.iter().map(|&c| c as f64).sum();
    0.5 * p
        .iter()
        .zip(q)
        .map(|(&a, &b)| (a as f64 / np - b as f64 / nq).abs())
        .sum::<f64>()
}

/// Empirical quantile by linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let s = sorted(values);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// Integrated autocorrelation time with Geyer's initial positive sequence.
pub fn integrated_autocorrelation(trace: &[f64]) -> f64 {
    let n = trace.len();
    if n < 4 {
        return 1.0;
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let var = trace.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return 1.0;
    }
    let rho = |lag: usize| -> f64 {
        (0..n - lag)
            .map(|t| (trace[t] - mean) * (trace[t + lag] - mean))
            .sum::<f64>()
            / (n as f64 * var)
    };
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n / 2 {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    tau.max(1.0)
}
