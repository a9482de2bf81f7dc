//! Statistical checks of the limit behaviour: tail fits, moment ratios,
//! the Gumbel-mixture law and the barrier bound.

use serde::{Deserialize, Serialize};

use crate::error::{domain, BrwError, Result};
use crate::model::ModelConstants;
use crate::oracle::floor_index;
use crate::stats::{normal_sf, weighted_line_fit, Welford};

/// Least exceedance count accepted for a Monte Carlo tail point.
pub const MIN_EXCEEDANCES: u64 = 100;
/// Least number of replicates in a mixture-test bin.
pub const MIN_BIN: usize = 200;

// ---------------------------------------------------------------------------
// Tail fit

/// One survival value `P(η*_n > m_n + z)`. `exceedances` is set for Monte
/// Carlo estimates (out of `replicates`) and left `None` for exact values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailSample {
    pub z: f64,
    pub prob: f64,
    pub exceedances: Option<u64>,
    pub replicates: Option<u64>,
}

impl TailSample {
    pub fn exact(z: f64, prob: f64) -> Self {
        Self { z, prob, exceedances: None, replicates: None }
    }

    pub fn counted(z: f64, exceedances: u64, replicates: u64) -> Self {
        Self { z, prob: exceedances as f64 / replicates as f64, exceedances: Some(exceedances), replicates: Some(replicates) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMethod {
    WeightedLeastSquares,
    /// Multinomial likelihood over the cells cut by the `z` points.
    Mle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub theta_hat: f64,
    pub alpha_hat: f64,
    pub z_range: (f64, f64),
    /// Standard errors of `(θ̂, α̂)`.
    pub fit_stderr: [f64; 2],
    pub method: FitMethod,
    /// Weighted residual sum of squares of `log(P/z)` (least squares only).
    pub residual: f64,
}

fn check_tail(samples: &[TailSample]) -> Result<()> {
    if samples.len() < 5 {
        return Err(BrwError::InsufficientData(format!("tail fit needs 5 z-points, got {}", samples.len())));
    }
    for s in samples {
        if !(s.z >= 1.0) {
            return domain(format!("tail fit needs z >= 1, got {}", s.z));
        }
        if let Some(k) = s.exceedances {
            if k < MIN_EXCEEDANCES {
                return Err(BrwError::InsufficientData(format!(
                    "z = {}: {k} exceedances, need {MIN_EXCEEDANCES}",
                    s.z
                )));
            }
        }
        if !(s.prob > 0.0 && s.prob <= 1.0) {
            return Err(BrwError::InsufficientData(format!("z = {}: survival {} is not usable", s.z, s.prob)));
        }
    }
    Ok(())
}

/// Fits `P(> z) = α z e^{−θ z}`.
pub fn fit_tail(samples: &[TailSample], method: FitMethod) -> Result<TailFit> {
    check_tail(samples)?;
    let zs: Vec<f64> = samples.iter().map(|s| s.z).collect();
    let z_range = (zs.iter().copied().fold(f64::INFINITY, f64::min), zs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let fit = match method {
        FitMethod::WeightedLeastSquares => {
            let y: Vec<f64> = samples.iter().map(|s| (s.prob / s.z).ln()).collect();
            // var(log p̂) ≈ (1 − p)/k for a count k
            let w: Vec<f64> = samples
                .iter()
                .map(|s| match s.exceedances {
                    Some(k) => k as f64 / (1.0 - s.prob).max(1e-12),
                    None => 1.0,
                })
                .collect();
            let (b, se, rss) = weighted_line_fit(&zs, &y, &w)
                .ok_or_else(|| BrwError::InsufficientData("tail points do not span a range of z".into()))?;
            let alpha = b[0].exp();
            TailFit {
                theta_hat: -b[1],
                alpha_hat: alpha,
                z_range,
                fit_stderr: [se[1], alpha * se[0]],
                method,
                residual: rss,
            }
        }
        FitMethod::Mle => mle_fit(samples, z_range)?,
    };
    if !(fit.theta_hat > 0.0) {
        return domain(format!("fitted tail exponent {} is not positive", fit.theta_hat));
    }
    Ok(fit)
}

fn mle_fit(samples: &[TailSample], z_range: (f64, f64)) -> Result<TailFit> {
    let reps = match samples.iter().map(|s| s.replicates).collect::<Option<Vec<u64>>>() {
        Some(r) if r.windows(2).all(|w| w[0] == w[1]) => r[0] as f64,
        _ => return domain("likelihood fit needs counted samples from one batch"),
    };
    let mut pts: Vec<(f64, f64)> = samples.iter().map(|s| (s.z, s.exceedances.unwrap() as f64)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    // cell counts: below z_1, [z_i, z_{i+1}), above z_m
    let mut cells = vec![reps - pts[0].1];
    for w in pts.windows(2) {
        cells.push(w[0].1 - w[1].1);
    }
    cells.push(pts[pts.len() - 1].1);
    if cells.iter().any(|c| *c < 0.0) {
        return domain("exceedance counts must decrease in z");
    }
    let loglik = |la: f64, th: f64| -> f64 {
        let s: Vec<f64> = pts.iter().map(|(z, _)| (la + z.ln() - th * z).exp()).collect();
        if s.iter().any(|v| *v >= 1.0) || s.windows(2).any(|w| w[1] >= w[0]) {
            return f64::NEG_INFINITY;
        }
        let mut probs = vec![1.0 - s[0]];
        for w in s.windows(2) {
            probs.push(w[0] - w[1]);
        }
        probs.push(s[s.len() - 1]);
        cells.iter().zip(&probs).map(|(c, p)| if *c > 0.0 { c * p.ln() } else { 0.0 }).sum()
    };
    // start from least squares and polish with Newton steps on numeric derivatives
    let start = fit_tail(samples, FitMethod::WeightedLeastSquares)?;
    let mut x = [start.alpha_hat.ln(), start.theta_hat];
    let h = [1e-4, 1e-4];
    let hessian = |x: [f64; 2]| -> ([f64; 2], [[f64; 2]; 2]) {
        let f = |a: f64, b: f64| loglik(a, b);
        let f0 = f(x[0], x[1]);
        let g = [
            (f(x[0] + h[0], x[1]) - f(x[0] - h[0], x[1])) / (2.0 * h[0]),
            (f(x[0], x[1] + h[1]) - f(x[0], x[1] - h[1])) / (2.0 * h[1]),
        ];
        let haa = (f(x[0] + h[0], x[1]) - 2.0 * f0 + f(x[0] - h[0], x[1])) / (h[0] * h[0]);
        let hbb = (f(x[0], x[1] + h[1]) - 2.0 * f0 + f(x[0], x[1] - h[1])) / (h[1] * h[1]);
        let hab = (f(x[0] + h[0], x[1] + h[1]) - f(x[0] + h[0], x[1] - h[1]) - f(x[0] - h[0], x[1] + h[1])
            + f(x[0] - h[0], x[1] - h[1]))
            / (4.0 * h[0] * h[1]);
        (g, [[haa, hab], [hab, hbb]])
    };
    for _ in 0..100 {
        let (g, hm) = hessian(x);
        let det = hm[0][0] * hm[1][1] - hm[0][1] * hm[0][1];
        if !det.is_finite() || det <= 0.0 || hm[0][0] >= 0.0 {
            break;
        }
        let step = [(hm[1][1] * g[0] - hm[0][1] * g[1]) / det, (hm[0][0] * g[1] - hm[0][1] * g[0]) / det];
        let mut t = 1.0;
        let base = loglik(x[0], x[1]);
        let mut moved = false;
        while t > 1e-6 {
            let cand = [x[0] - t * step[0], x[1] - t * step[1]];
            if loglik(cand[0], cand[1]) >= base {
                x = cand;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved || step[0].abs().max(step[1].abs()) < 1e-12 {
            break;
        }
    }
    let (_, hm) = hessian(x);
    let det = hm[0][0] * hm[1][1] - hm[0][1] * hm[0][1];
    // inverse of the observed information −H
    let var_la = -hm[1][1] / det;
    let var_th = -hm[0][0] / det;
    let alpha = x[0].exp();
    Ok(TailFit {
        theta_hat: x[1],
        alpha_hat: alpha,
        z_range,
        fit_stderr: [var_th.max(0.0).sqrt(), alpha * var_la.max(0.0).sqrt()],
        method: FitMethod::Mle,
        residual: f64::NAN,
    })
}

/// `z⁻¹ e^{θ̄ z} P(> z)` along the samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledTail {
    pub rows: Vec<(f64, f64)>,
    /// `max/min` of the scaled values.
    pub spread: f64,
}

pub fn scaled_tail(samples: &[TailSample], theta_bar: f64) -> Result<ScaledTail> {
    if samples.is_empty() {
        return Err(BrwError::InsufficientData("no tail points".into()));
    }
    let rows: Vec<(f64, f64)> = samples.iter().map(|s| (s.z, (theta_bar * s.z).exp() * s.prob / s.z)).collect();
    let hi = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    Ok(ScaledTail { rows, spread: if lo > 0.0 { hi / lo } else { f64::INFINITY } })
}

// ---------------------------------------------------------------------------
// Moment ratios

/// Per-replicate `Λ`, `Γ` and exceedance indicators at one `(z, ℓ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentInput {
    pub z: f64,
    pub ell: usize,
    pub lambda: Vec<u64>,
    pub gamma: Vec<u64>,
    pub exceed: Vec<bool>,
}

/// A ratio of means with its delete-one jackknife standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub std_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub z: f64,
    pub ell: usize,
    pub replicates: usize,
    pub mean_lambda: f64,
    pub mean_gamma: f64,
    pub mean_lambda_sq: f64,
    pub p_exceed: f64,
    pub gamma_over_lambda: Ratio,
    pub second_over_first: Ratio,
    pub exceed_over_lambda: Ratio,
}

/// Jackknife for `Σa / Σb` in one pass over sums.
fn jackknife_ratio(a: &[f64], b: &[f64]) -> Ratio {
    let n = a.len();
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    let value = sa / sb;
    if n < 2 {
        return Ratio { value, std_err: f64::NAN };
    }
    let mut w = Welford::new();
    for i in 0..n {
        w.push((sa - a[i]) / (sb - b[i]));
    }
    let nf = n as f64;
    Ratio { value, std_err: ((nf - 1.0) * (nf - 1.0) / nf * w.variance()).sqrt() }
}

pub fn moment_ratio_diagnostics(inputs: &[MomentInput]) -> Result<Vec<MomentRow>> {
    inputs
        .iter()
        .map(|m| {
            let n = m.lambda.len();
            if n == 0 || m.gamma.len() != n || m.exceed.len() != n {
                return domain(format!("moment input at z = {} has mismatched or empty columns", m.z));
            }
            if m.lambda.iter().zip(&m.gamma).any(|(l, g)| l > g) {
                return domain(format!("Λ exceeds Γ on some replicate at z = {}", m.z));
            }
            let lam: Vec<f64> = m.lambda.iter().map(|v| *v as f64).collect();
            let gam: Vec<f64> = m.gamma.iter().map(|v| *v as f64).collect();
            let sq: Vec<f64> = lam.iter().map(|v| v * v).collect();
            let ex: Vec<f64> = m.exceed.iter().map(|v| *v as u8 as f64).collect();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
            let (ml, mg) = (mean(&lam), mean(&gam));
            assert!(ml <= mg);
            Ok(MomentRow {
                z: m.z,
                ell: m.ell,
                replicates: n,
                mean_lambda: ml,
                mean_gamma: mg,
                mean_lambda_sq: mean(&sq),
                p_exceed: mean(&ex),
                gamma_over_lambda: jackknife_ratio(&gam, &lam),
                second_over_first: jackknife_ratio(&sq, &lam),
                exceed_over_lambda: jackknife_ratio(&ex, &lam),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Gumbel mixture

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureBin {
    pub count: usize,
    pub z_mean: f64,
    pub observed: f64,
    pub predicted: f64,
    pub deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureTest {
    pub k: usize,
    pub n: usize,
    pub pairs: usize,
    /// The probe after snapping to the lattice grid.
    pub z_used: f64,
    pub bins: Vec<MixtureBin>,
    /// Largest standardized deviation over bins.
    pub statistic: f64,
    /// Šidák-combined two-sided normal p-value of the largest deviation.
    pub p_value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub k: usize,
    pub n: usize,
    pub theta_bar: f64,
    /// Centering `m_n`.
    pub center: f64,
    pub alpha: f64,
    pub z_probe: f64,
    pub bins: usize,
    pub span: Option<f64>,
}

impl MixtureSpec {
    pub fn new(c: &ModelConstants, k: usize, n: usize, alpha: f64, z_probe: f64, bins: usize) -> Result<Self> {
        Ok(Self {
            k,
            n,
            theta_bar: c.theta_bar,
            center: c.centering(n as i64)?,
            alpha,
            z_probe,
            bins,
            span: c.increment.lattice_span(),
        })
    }
}

/// Bins `(Z_k, η*_n)` pairs by `Z_k` quantile and compares the frequency of
/// `η*_n ≤ m_n + z` with `exp(−α Z̄ e^{−θ̄ z})` per bin.
pub fn mixture_test(pairs: &[(f64, f64)], spec: &MixtureSpec) -> Result<MixtureTest> {
    if spec.bins == 0 {
        return domain("mixture test needs at least one bin");
    }
    if pairs.len() < spec.bins * MIN_BIN {
        return Err(BrwError::InsufficientData(format!(
            "{} pairs for {} bins; each bin needs {MIN_BIN}",
            pairs.len(),
            spec.bins
        )));
    }
    let level = spec.center + spec.z_probe;
    let (threshold, z_used) = match spec.span {
        Some(h) => {
            let top = floor_index(level, h) as f64 * h;
            (top + 0.5 * h, top - spec.center)
        }
        None => (level, spec.z_probe),
    };
    let mut sorted: Vec<(f64, f64)> = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let shift = (-spec.theta_bar * z_used).exp();
    let total = sorted.len();
    let mut bins = Vec::with_capacity(spec.bins);
    for b in 0..spec.bins {
        let (lo, hi) = (b * total / spec.bins, (b + 1) * total / spec.bins);
        let cell = &sorted[lo..hi];
        let count = cell.len();
        let z_mean = cell.iter().map(|p| p.0).sum::<f64>() / count as f64;
        let below = match spec.span {
            Some(_) => cell.iter().filter(|p| p.1 < threshold).count(),
            None => cell.iter().filter(|p| p.1 <= threshold).count(),
        };
        let observed = below as f64 / count as f64;
        let predicted = (-spec.alpha * z_mean * shift).exp();
        let pc = predicted.clamp(0.0, 1.0);
        let sd = (pc * (1.0 - pc) / count as f64).sqrt().max(1.0 / count as f64);
        bins.push(MixtureBin { count, z_mean, observed, predicted, deviation: (observed - predicted) / sd });
    }
    let statistic = bins.iter().map(|b| b.deviation.abs()).fold(0.0, f64::max);
    let p_min = (2.0 * normal_sf(statistic)).min(1.0);
    let p_value = 1.0 - (1.0 - p_min).powi(spec.bins as i32);
    Ok(MixtureTest { k: spec.k, n: spec.n, pairs: total, z_used, bins, statistic, p_value })
}

// ---------------------------------------------------------------------------
// Barrier bound

/// `g_{n,δ}(β) = exp{−δ|β| (|β|/(n log n) ∧ 1)}`.
pub fn g_factor(n: usize, delta: f64, beta: f64) -> f64 {
    let nl = n as f64 * (n as f64).ln();
    (-delta * beta.abs() * (beta.abs() / nl).min(1.0)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierRow {
    pub beta: f64,
    pub p_hat: f64,
    /// `β e^{−θ̄β} g_{n,δ}(β)`.
    pub shape: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierBound {
    pub n: usize,
    pub delta: f64,
    pub rows: Vec<BarrierRow>,
    /// Smallest `C` with `P̂ ≤ C·shape` on every row.
    pub fitted_c: f64,
    pub monotone: bool,
}

/// `observations` are `(β, P̂(G_{n,β}))`.
pub fn barrier_bound_check(observations: &[(f64, f64)], n: usize, theta_bar: f64, delta: f64) -> Result<BarrierBound> {
    if n < 2 {
        return domain("barrier bound needs n >= 2");
    }
    let mut obs = observations.to_vec();
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let rows: Vec<BarrierRow> = obs
        .iter()
        .map(|&(beta, p_hat)| {
            let shape = beta * (-theta_bar * beta).exp() * g_factor(n, delta, beta);
            BarrierRow { beta, p_hat, shape, ratio: p_hat / shape }
        })
        .collect();
    let fitted_c = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let monotone = rows.windows(2).all(|w| w[1].p_hat <= w[0].p_hat);
    Ok(BarrierBound { n, delta, rows, fitted_c, monotone })
}

/// Ratio of the larger to the smaller fitted constant.
pub fn constant_stability(a: &BarrierBound, b: &BarrierBound) -> f64 {
    let (x, y) = (a.fitted_c, b.fitted_c);
    x.max(y) / x.min(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{calibrate, IncrementLaw, OffspringLaw};
    use crate::oracle::{self, centered_tail};
    use crate::rng::CounterRng;

    fn synthetic(alpha: f64, theta: f64) -> Vec<TailSample> {
        (2..=10).map(|z| TailSample::exact(z as f64, alpha * z as f64 * (-theta * z as f64).exp())).collect()
    }

    #[test]
    fn least_squares_inverts_exact_tail() {
        let f = fit_tail(&synthetic(0.7, 1.3), FitMethod::WeightedLeastSquares).unwrap();
        assert!((f.alpha_hat - 0.7).abs() < 1e-8 && (f.theta_hat - 1.3).abs() < 1e-8, "{f:?}");
        assert!(f.residual < 1e-8);
        assert_eq!(f.z_range, (2.0, 10.0));
    }

    #[test]
    fn flat_tail_is_rejected() {
        let s: Vec<TailSample> = (2..=8).map(|z| TailSample::exact(z as f64, 0.01 * z as f64)).collect();
        assert!(matches!(fit_tail(&s, FitMethod::WeightedLeastSquares), Err(BrwError::Domain(_))));
        assert!(matches!(fit_tail(&s[..3], FitMethod::WeightedLeastSquares), Err(BrwError::InsufficientData(_))));
        let thin = vec![TailSample::counted(2.0, 50, 1000); 5];
        assert!(matches!(fit_tail(&thin, FitMethod::WeightedLeastSquares), Err(BrwError::InsufficientData(_))));
    }

    #[test]
    fn likelihood_fit_recovers_parameters() {
        let (alpha, theta) = (0.8, 1.1);
        let reps = 2_000_000u64;
        let zs = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5];
        let surv = |z: f64| alpha * z * (-theta * z).exp();
        // sample one batch: uniform u, exceedance of z iff u < S(z)
        let mut counts = [0u64; 6];
        let mut rng = CounterRng::new(5, 0, 0, 0);
        for _ in 0..reps {
            let u = rng.unit();
            for (i, z) in zs.iter().enumerate() {
                if u < surv(*z) {
                    counts[i] += 1;
                }
            }
        }
        let s: Vec<TailSample> = zs.iter().zip(counts).map(|(z, k)| TailSample::counted(*z, k, reps)).collect();
        for m in [FitMethod::Mle, FitMethod::WeightedLeastSquares] {
            let f = fit_tail(&s, m).unwrap();
            assert!((f.theta_hat - theta).abs() < 4.0 * f.fit_stderr[0], "{f:?}");
            assert!((f.alpha_hat - alpha).abs() < 4.0 * f.fit_stderr[1], "{f:?}");
            assert!(f.fit_stderr[0] < 0.02);
        }
        assert!(fit_tail(&synthetic(0.7, 1.3), FitMethod::Mle).is_err());
    }

    #[test]
    fn lazy_tail_exponent_from_exact_law() {
        let (off, inc) = (OffspringLaw::binary(), IncrementLaw::lazy_unit());
        let c = calibrate(&off, &inc).unwrap();
        let u = oracle::exact_max_law(&off, &inc, 256).unwrap();
        let z: Vec<f64> = (2..=10).map(|v| v as f64).collect();
        let tail = centered_tail(&u, &c, &z).unwrap();
        let s: Vec<TailSample> = tail.iter().map(|t| TailSample::exact(t.z_used, t.prob)).collect();
        let f = fit_tail(&s, FitMethod::WeightedLeastSquares).unwrap();
        assert!((f.theta_hat / c.theta_bar - 1.0).abs() < 0.15, "{} vs {}", f.theta_hat, c.theta_bar);
        assert!(scaled_tail(&s, c.theta_bar).unwrap().spread < 3.0);
    }

    #[test]
    fn indicator_counts_have_unit_second_ratio() {
        let lambda: Vec<u64> = (0..1000).map(|i| (i % 7 == 0) as u64).collect();
        let gamma: Vec<u64> = lambda.iter().enumerate().map(|(i, l)| l + (i % 11 == 0) as u64).collect();
        let exceed: Vec<bool> = lambda.iter().map(|l| *l == 1).collect();
        let rows = moment_ratio_diagnostics(&[MomentInput { z: 3.0, ell: 2, lambda, gamma, exceed }]).unwrap();
        let r = &rows[0];
        assert_eq!(r.second_over_first.value, 1.0);
        assert_eq!(r.exceed_over_lambda.value, 1.0);
        assert!(r.gamma_over_lambda.value > 1.0 && r.gamma_over_lambda.std_err > 0.0);
        let bad = MomentInput { z: 1.0, ell: 1, lambda: vec![2], gamma: vec![1], exceed: vec![true] };
        assert!(moment_ratio_diagnostics(&[bad]).is_err());
    }

    #[test]
    fn jackknife_matches_delta_method() {
        let mut rng = CounterRng::new(3, 0, 0, 0);
        let n = 20_000;
        let a: Vec<f64> = (0..n).map(|_| rng.unit() * 2.0).collect();
        let b: Vec<f64> = (0..n).map(|_| 1.0 + rng.unit()).collect();
        let r = jackknife_ratio(&a, &b);
        // delta method for mean(a)/mean(b) with independent columns
        let (ma, mb) = (1.0f64, 1.5f64);
        let (va, vb) = (4.0 / 12.0, 1.0 / 12.0);
        let sd = ((va / (mb * mb) + ma * ma * vb / mb.powi(4)) / n as f64).sqrt();
        assert!((r.std_err / sd - 1.0).abs() < 0.05, "{} {sd}", r.std_err);
    }

    fn mixture_draws(seed: u64, count: usize, alpha: f64, theta: f64, z: f64) -> Vec<(f64, f64)> {
        let mut rng = CounterRng::new(seed, 0, 0, 0);
        (0..count)
            .map(|_| {
                let zk = 0.5 + rng.unit();
                let p_below = (-alpha * zk * (-theta * z).exp()).exp();
                let below = rng.unit() < p_below;
                (zk, if below { z - 1.0 } else { z + 1.0 })
            })
            .collect()
    }

    fn continuous_spec(bins: usize) -> MixtureSpec {
        MixtureSpec { k: 1, n: 10, theta_bar: 1.0, center: 0.0, alpha: 2.0, z_probe: 0.5, bins, span: None }
    }

    #[test]
    fn mixture_p_values_are_calibrated() {
        let spec = continuous_spec(5);
        let mut ps: Vec<f64> = (0..1000u64)
            .map(|t| mixture_test(&mixture_draws(t, 2000, 2.0, 1.0, 0.5), &spec).unwrap().p_value)
            .collect();
        ps.sort_by(|a, b| a.total_cmp(b));
        let d = ps.iter().enumerate().map(|(i, p)| ((i + 1) as f64 / 1000.0 - p).abs().max((i as f64 / 1000.0 - p).abs())).fold(0.0, f64::max);
        // the bin means are not the bin-wise averages of the prediction, so allow a little slack over KS(0.001)
        assert!(d < 0.07, "{d}");
        let small = ps.iter().filter(|p| **p < 0.05).count();
        assert!((20..=90).contains(&small), "{small}");
    }

    #[test]
    fn mixture_detects_wrong_alpha_and_is_order_free() {
        let draws = mixture_draws(77, 20_000, 2.0, 1.0, 0.5);
        let mut spec = continuous_spec(10);
        let good = mixture_test(&draws, &spec).unwrap();
        let mut shuffled = draws.clone();
        shuffled.reverse();
        shuffled.swap(3, 999);
        assert_eq!(good, mixture_test(&shuffled, &spec).unwrap());
        spec.alpha = 3.0;
        assert!(mixture_test(&draws, &spec).unwrap().statistic > 6.0);
        assert!(matches!(mixture_test(&draws[..1000], &spec), Err(BrwError::InsufficientData(_))));
    }

    #[test]
    fn constant_z_reduces_to_single_frequency() {
        let spec = continuous_spec(1);
        let draws: Vec<(f64, f64)> = mixture_draws(9, 5000, 2.0, 1.0, 0.5).into_iter().map(|(_, m)| (1.0, m)).collect();
        let t = mixture_test(&draws, &spec).unwrap();
        assert_eq!(t.bins.len(), 1);
        assert!((t.bins[0].predicted - (-2.0 * (-0.5f64).exp()).exp()).abs() < 1e-15);
    }

    #[test]
    fn lattice_probe_snaps_down() {
        let spec = MixtureSpec { k: 1, n: 10, theta_bar: 1.0, center: 3.3, alpha: 1.0, z_probe: 1.5, bins: 1, span: Some(1.0) };
        let draws: Vec<(f64, f64)> = (0..400).map(|i| (1.0, if i % 2 == 0 { 4.0 } else { 5.0 })).collect();
        let t = mixture_test(&draws, &spec).unwrap();
        assert!((t.z_used - 0.7).abs() < 1e-12);
        assert_eq!(t.bins[0].observed, 0.5);
    }

    #[test]
    fn barrier_bound_rows() {
        let b = barrier_bound_check(&[(3.0, 1e-3), (2.0, 1e-2), (12.0, 0.0)], 32, 2.0, 0.5).unwrap();
        assert_eq!(b.rows[0].beta, 2.0);
        assert!(b.monotone);
        assert_eq!(b.rows[2].ratio, 0.0);
        let want = 1e-2 / (2.0 * (-4.0f64).exp() * g_factor(32, 0.5, 2.0));
        assert!((b.fitted_c - want).abs() < 1e-12 * want);
        assert!((g_factor(4, 1.0, 100.0) - (-100.0f64).exp()).abs() < 1e-50);
        let c = barrier_bound_check(&[(2.0, 2e-2)], 64, 2.0, 0.5).unwrap();
        assert!(constant_stability(&b, &c) >= 1.0);
    }
}
