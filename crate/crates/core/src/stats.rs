//! Small numerical and statistical helpers shared by the estimators.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

/// Neumaier compensated sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut s = CompensatedSum::new();
    for x in it {
        s.add(x);
    }
    s.value()
}

/// Streaming mean and variance; `merge` is Chan's parallel update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Welford {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_err(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Upper tail of the standard normal.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

pub fn normal_cdf(x: f64) -> f64 {
    normal_sf(-x)
}

/// Half-width of the Dvoretzky–Kiefer–Wolfowitz band at level `alpha`.
pub fn dkw_epsilon(samples: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * samples as f64)).sqrt()
}

/// Sup distance between two right-continuous step CDFs given by their jump
/// points (sorted) and values at those points.
pub fn kolmogorov_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut d = 0.0f64;
    while i < a.len() || j < b.len() {
        let xa = a.get(i).map_or(f64::INFINITY, |p| p.0);
        let xb = b.get(j).map_or(f64::INFINITY, |p| p.0);
        let x = xa.min(xb);
        while i < a.len() && a[i].0 == x {
            fa = a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 == x {
            fb = b[j].1;
            j += 1;
        }
        d = d.max((fa - fb).abs());
    }
    d
}

/// Empirical CDF as (jump point, value) pairs.
pub fn empirical_cdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut s: Vec<f64> = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (k, x) in s.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = (k + 1) as f64 / n,
            _ => out.push((*x, (k + 1) as f64 / n)),
        }
    }
    out
}

/// Weighted least squares for y = b0 + b1 x. Returns coefficients, their
/// standard errors and the residual sum of squares.
pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> Option<([f64; 2], [f64; 2], f64)> {
    let n = x.len();
    if n < 2 || y.len() != n || w.len() != n {
        return None;
    }
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for k in 0..n {
        sxx += w[k] * (x[k] - mx) * (x[k] - mx);
        sxy += w[k] * (x[k] - mx) * (y[k] - my);
    }
    if sxx <= 0.0 {
        return None;
    }
    let b1 = sxy / sxx;
    let b0 = my - b1 * mx;
    let rss: f64 = (0..n).map(|k| w[k] * (y[k] - b0 - b1 * x[k]).powi(2)).sum();
    let s2 = if n > 2 { rss / (n - 2) as f64 } else { 0.0 };
    let se1 = (s2 / sxx).sqrt();
    let se0 = (s2 * (1.0 / sw + mx * mx / sxx)).sqrt();
    Some(([b0, b1], [se0, se1], rss))
}
