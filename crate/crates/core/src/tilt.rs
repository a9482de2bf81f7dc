//! Exponential changes of measure for increments and walks.
//!
//! A [`TiltedLaw`] has density `e^{θx}/φ(θ)` against its base law, plus an
//! additive `shift` used to carry a per-step drift. `θ` is signed; callers
//! choose the orientation.

use serde::{Deserialize, Serialize};

use crate::error::{domain, BrwError, Result};
use crate::model::{solve_stationarity, IncrementLaw, IncrementSampler, LatticePmf};
use crate::rng::CounterRng;
use crate::stats::CompensatedSum;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltedLaw {
    pub base: IncrementLaw,
    pub theta: f64,
    /// `log φ(θ)`.
    pub log_normalizer: f64,
    pub shift: f64,
}

impl TiltedLaw {
    pub fn new(base: IncrementLaw, theta: f64) -> Result<Self> {
        let (lo, hi) = base.theta_domain();
        if !(theta > lo && theta < hi) {
            return domain(format!("tilt {theta} outside the finite-MGF interval ({lo}, {hi})"));
        }
        let log_normalizer = base.log_mgf(theta);
        Ok(Self { base, theta, log_normalizer, shift: 0.0 })
    }

    pub fn identity(base: IncrementLaw) -> Self {
        Self { base, theta: 0.0, log_normalizer: 0.0, shift: 0.0 }
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    pub fn mean(&self) -> f64 {
        let m = if self.theta == 0.0 { self.base.mean() } else { self.base.dlog_mgf(self.theta) };
        m + self.shift
    }

    pub fn variance(&self) -> f64 {
        self.base.d2log_mgf(self.theta)
    }

    /// Log-MGF of the tilted law (including the shift) at `t`.
    pub fn log_mgf(&self, t: f64) -> f64 {
        self.base.log_mgf(self.theta + t) - self.log_normalizer + t * self.shift
    }

    /// Tilted pmf as a lattice law; `None` unless the base is lattice and
    /// the shift keeps points on the lattice.
    pub fn lattice_law(&self) -> Option<IncrementLaw> {
        let l = self.base.as_lattice()?;
        let k = self.shift / l.span;
        if (k - k.round()).abs() > 1e-12 {
            return None;
        }
        let k = k.round() as i64;
        let probs = tilted_pmf(l, self.theta);
        Some(IncrementLaw::Lattice(LatticePmf { span: l.span, min_index: l.min_index + k, probs }))
    }

    /// Density of the tilted law (continuous bases).
    pub fn density(&self, x: f64) -> Option<f64> {
        let y = x - self.shift;
        let base = match &self.base {
            IncrementLaw::Gaussian { mu, sigma } => {
                let z = (y - mu) / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            }
            IncrementLaw::ShiftedExponential { shift, rate } => {
                if y < *shift {
                    0.0
                } else {
                    rate * (-(rate * (y - shift))).exp()
                }
            }
            IncrementLaw::Uniform { a, b } => {
                if y < *a || y > *b {
                    0.0
                } else {
                    1.0 / (b - a)
                }
            }
            IncrementLaw::Lattice(_) => return None,
        };
        Some(base * (self.theta * y - self.log_normalizer).exp())
    }

    pub fn sampler(&self) -> Result<TiltedSampler> {
        let inner = match &self.base {
            IncrementLaw::Gaussian { mu, sigma } => Inner::Exact(IncrementSampler::Gaussian {
                mu: mu + sigma * sigma * self.theta,
                sigma: *sigma,
            }),
            IncrementLaw::Lattice(l) => Inner::Exact(IncrementSampler::lattice(&LatticePmf {
                span: l.span,
                min_index: l.min_index,
                probs: tilted_pmf(l, self.theta),
            })),
            IncrementLaw::ShiftedExponential { shift, rate } => {
                // tilted density ∝ exp(−(rate − θ)(x − shift)) on [shift, ∞)
                let k = rate - self.theta;
                let s0 = *shift;
                Inner::Rejection(Envelope::build(
                    move |x| -k * (x - s0),
                    move |_| -k,
                    *shift,
                    f64::INFINITY,
                    1.0 / k,
                )?)
            }
            IncrementLaw::Uniform { a, b } => {
                let t = self.theta;
                Inner::Rejection(Envelope::build(move |x| t * x, move |_| t, *a, *b, b - a)?)
            }
        };
        Ok(TiltedSampler { inner, shift: self.shift })
    }
}

fn tilted_pmf(l: &LatticePmf, theta: f64) -> Vec<f64> {
    let logs: Vec<f64> = l
        .points()
        .map(|(i, p)| if p > 0.0 { theta * i as f64 * l.span + p.ln() } else { f64::NEG_INFINITY })
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// Chooses `θ` so that the tilted mean equals `target_mean`.
pub fn solve_tilt(law: &IncrementLaw, target_mean: f64) -> Result<TiltedLaw> {
    let theta = solve_stationarity(law, target_mean)?;
    if theta == 0.0 {
        return Ok(TiltedLaw::identity(law.clone()));
    }
    TiltedLaw::new(law.clone(), theta)
}

/// `log dP/dQ = −θ Σx + n log φ(θ)` for a path drawn under the tilt.
pub fn walk_weight(increments: &[f64], theta: f64, log_phi: f64) -> f64 {
    let mut s = CompensatedSum::new();
    for x in increments {
        s.add(*x);
    }
    -theta * s.value() + increments.len() as f64 * log_phi
}

/// `count` draws from the tilted law on stream `(seed, 0, 0, 0)`.
pub fn tilted_sample(law: &TiltedLaw, count: usize, seed: u64) -> Result<Vec<f64>> {
    let sampler = law.sampler()?;
    let mut rng = CounterRng::new(seed, 0, 0, 0);
    let mut out = Vec::with_capacity(count);
    let mut stats = RejectionStats::default();
    for _ in 0..count {
        out.push(sampler.sample_tracked(&mut rng, &mut stats)?);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
enum Inner {
    Exact(IncrementSampler),
    Rejection(Envelope),
}

#[derive(Clone, Debug)]
pub struct TiltedSampler {
    inner: Inner,
    shift: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RejectionStats {
    pub proposals: u64,
    pub accepted: u64,
}

impl TiltedSampler {
    #[inline]
    pub fn sample(&self, rng: &mut CounterRng) -> f64 {
        match &self.inner {
            Inner::Exact(s) => s.sample(rng) + self.shift,
            Inner::Rejection(e) => loop {
                if let Some(x) = e.propose(rng) {
                    return x + self.shift;
                }
            },
        }
    }

    /// As [`TiltedSampler::sample`], failing once the running acceptance rate
    /// drops below 1e−4 after at least 10⁴ proposals.
    pub fn sample_tracked(&self, rng: &mut CounterRng, st: &mut RejectionStats) -> Result<f64> {
        match &self.inner {
            Inner::Exact(s) => Ok(s.sample(rng) + self.shift),
            Inner::Rejection(e) => loop {
                st.proposals += 1;
                if let Some(x) = e.propose(rng) {
                    st.accepted += 1;
                    return Ok(x + self.shift);
                }
                if st.proposals >= 10_000 {
                    let rate = st.accepted as f64 / st.proposals as f64;
                    if rate < 1e-4 {
                        return Err(BrwError::Envelope(rate));
                    }
                }
            },
        }
    }

    pub fn acceptance_bound(&self) -> f64 {
        match &self.inner {
            Inner::Exact(_) => 1.0,
            Inner::Rejection(e) => e.acceptance,
        }
    }
}

/// Piecewise-exponential envelope made of tangents to a concave log-density.
#[derive(Clone, Debug)]
struct Envelope {
    pieces: Vec<Piece>,
    cumulative: Vec<f64>,
    log_f: fn_box::LogDensity,
    acceptance: f64,
}

#[derive(Clone, Copy, Debug)]
struct Piece {
    x0: f64,
    x1: f64,
    /// tangent value at `x0` and slope
    h0: f64,
    slope: f64,
}

mod fn_box {
    use std::sync::Arc;

    #[derive(Clone)]
    pub struct LogDensity(pub Arc<dyn Fn(f64) -> f64 + Send + Sync>);

    impl std::fmt::Debug for LogDensity {
        fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            f.write_str("LogDensity")
        }
    }
}

impl Envelope {
    fn build<F, D>(log_f: F, dlog_f: D, lo: f64, hi: f64, scale: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64,
    {
        const PIECES: usize = 8;
        let mut edges: Vec<f64> = Vec::with_capacity(PIECES + 2);
        let finite_hi = if hi.is_finite() { hi } else { lo + 8.0 * scale };
        for k in 0..=PIECES {
            edges.push(lo + (finite_hi - lo) * k as f64 / PIECES as f64);
        }
        if !hi.is_finite() {
            edges.push(f64::INFINITY);
        }
        let mut pieces = Vec::new();
        let mut cumulative = Vec::new();
        let mut total = 0.0;
        for w in edges.windows(2) {
            let (x0, x1) = (w[0], w[1]);
            let anchor = if x1.is_finite() { 0.5 * (x0 + x1) } else { x0 };
            let slope = dlog_f(anchor);
            let h0 = log_f(anchor) + slope * (x0 - anchor);
            if !x1.is_finite() && !(slope < 0.0) {
                return Err(BrwError::Envelope(0.0));
            }
            let mass = piece_mass(h0, slope, x1 - x0);
            total += mass;
            pieces.push(Piece { x0, x1, h0, slope });
            cumulative.push(total);
        }
        for c in &mut cumulative {
            *c /= total;
        }
        // exact mass of the target on the same support, for the acceptance bound
        let target_mass: f64 = pieces
            .iter()
            .map(|p| {
                let s = dlog_f(p.x0);
                piece_mass(log_f(p.x0), s, p.x1 - p.x0)
            })
            .sum();
        Ok(Self {
            pieces,
            cumulative,
            log_f: fn_box::LogDensity(std::sync::Arc::new(log_f)),
            acceptance: (target_mass / total).min(1.0),
        })
    }

    #[inline]
    fn propose(&self, rng: &mut CounterRng) -> Option<f64> {
        let u = rng.unit();
        let k = self.cumulative.partition_point(|c| *c <= u).min(self.pieces.len() - 1);
        let p = self.pieces[k];
        let v = rng.unit_open0();
        let width = p.x1 - p.x0;
        let x = if !width.is_finite() {
            p.x0 - v.ln() / (-p.slope)
        } else if (p.slope * width).abs() < 1e-12 {
            p.x0 + v * width
        } else {
            p.x0 + (v * (p.slope * width).exp_m1()).ln_1p() / p.slope
        };
        let env = p.h0 + p.slope * (x - p.x0);
        let accept = ((self.log_f.0)(x) - env).exp();
        if accept >= 1.0 || rng.unit() < accept {
            Some(x)
        } else {
            None
        }
    }
}

/// `∫_0^w exp(h0 + s t) dt`.
fn piece_mass(h0: f64, s: f64, w: f64) -> f64 {
    if !w.is_finite() {
        return h0.exp() / -s;
    }
    if (s * w).abs() < 1e-12 {
        h0.exp() * w
    } else {
        h0.exp() * (s * w).exp_m1() / s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Welford;

    #[test]
    fn solve_tilt_examples() {
        let n = IncrementLaw::standard_normal();
        let t = solve_tilt(&n, -0.5).unwrap();
        assert!((t.theta + 0.5).abs() < 1e-12);
        assert!((t.mean() + 0.5).abs() < 1e-10);
        let pm = IncrementLaw::plus_minus_one();
        let t = solve_tilt(&pm, 0.25).unwrap();
        assert!((t.theta - 0.25f64.atanh()).abs() < 1e-10);
        assert!((t.theta - 0.255413).abs() < 1e-6);
        for law in [
            n.clone(),
            pm.clone(),
            IncrementLaw::lazy_unit(),
            IncrementLaw::uniform(-0.3, 1.1).unwrap(),
            IncrementLaw::shifted_exponential(-2.0, 0.7).unwrap(),
        ] {
            assert_eq!(solve_tilt(&law, law.mean()).unwrap().theta, 0.0);
        }
        assert!(solve_tilt(&pm, 1.0).is_err());
        assert!(solve_tilt(&IncrementLaw::uniform(0.0, 1.0).unwrap(), -0.1).is_err());
    }

    #[test]
    fn tilted_means_hit_target() {
        let cases = [
            (IncrementLaw::uniform(-1.0, 2.0).unwrap(), 1.7),
            (IncrementLaw::uniform(-1.0, 2.0).unwrap(), -0.8),
            (IncrementLaw::shifted_exponential(-1.0, 2.0).unwrap(), 0.9),
            (IncrementLaw::shifted_exponential(-1.0, 2.0).unwrap(), -0.9),
            (IncrementLaw::lattice(1.0, &[(-2, 0.3), (0, 0.3), (3, 0.4)]).unwrap(), 2.5),
        ];
        for (law, target) in cases {
            let t = solve_tilt(&law, target).unwrap();
            assert!((t.mean() - target).abs() < 1e-10, "{law:?} {target}");
        }
    }

    #[test]
    fn tilted_total_mass_is_one() {
        for (law, theta) in [
            (IncrementLaw::standard_normal(), 0.7),
            (IncrementLaw::uniform(-1.0, 2.0).unwrap(), -1.3),
            (IncrementLaw::shifted_exponential(0.5, 2.0).unwrap(), 1.2),
        ] {
            let t = TiltedLaw::new(law.clone(), theta).unwrap();
            let (lo, hi) = match law {
                IncrementLaw::Gaussian { .. } => (-15.0, 15.0),
                IncrementLaw::Uniform { a, b } => (a, b),
                _ => (0.5, 60.0),
            };
            // composite Simpson
            let m = 200_000;
            let h = (hi - lo) / m as f64;
            let mut s = 0.0;
            for k in 0..=m {
                let w = if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                s += w * t.density(lo + k as f64 * h).unwrap();
            }
            assert!((s * h / 3.0 - 1.0).abs() < 1e-10, "{law:?}: {}", s * h / 3.0);
        }
        let l = solve_tilt(&IncrementLaw::lazy_unit(), 0.4).unwrap().lattice_law().unwrap();
        let sum: f64 = l.as_lattice().unwrap().probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sample_means_within_error() {
        let n = 1_000_000;
        let pm = TiltedLaw::identity(IncrementLaw::plus_minus_one());
        let xs = tilted_sample(&pm, n, 11).unwrap();
        let m = xs.iter().sum::<f64>() / n as f64;
        assert!(m.abs() < 4.0 / (n as f64).sqrt());
        let g = solve_tilt(&IncrementLaw::standard_normal(), -0.5).unwrap();
        let xs = tilted_sample(&g, n, 12).unwrap();
        let m = xs.iter().sum::<f64>() / n as f64;
        assert!((m + 0.5).abs() < 4e-3);
        assert!(tilted_sample(&g, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn every_shipped_law_recovers_target_mean() {
        let cases = [
            (IncrementLaw::standard_normal(), 0.8),
            (IncrementLaw::uniform(-1.0, 2.0).unwrap(), 1.6),
            (IncrementLaw::uniform(-1.0, 2.0).unwrap(), -0.2),
            (IncrementLaw::shifted_exponential(-1.0, 2.0).unwrap(), 1.5),
            (IncrementLaw::shifted_exponential(-1.0, 2.0).unwrap(), -0.6),
            (IncrementLaw::lazy_unit(), -0.5),
        ];
        for (k, (law, target)) in cases.into_iter().enumerate() {
            let t = solve_tilt(&law, target).unwrap().with_shift(0.25);
            let xs = tilted_sample(&t, 1_000_000, 100 + k as u64).unwrap();
            let mut w = Welford::new();
            xs.iter().for_each(|x| w.push(*x));
            assert!((w.mean - target - 0.25).abs() < 5.0 * w.std_err(), "{law:?}");
            assert!((w.variance() / t.variance() - 1.0).abs() < 0.02, "{law:?}");
            assert!(t.sampler().unwrap().acceptance_bound() > 0.99);
        }
    }

    #[test]
    fn walk_weight_examples() {
        assert_eq!(walk_weight(&[], 1.3, 0.7), 0.0);
        let lp = IncrementLaw::standard_normal().log_mgf(1.0);
        assert!((walk_weight(&[1.0], 1.0, lp) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn reweighting_matches_direct_estimate() {
        // P(S_20 > 5) for the ±1 walk: direct vs tilted-and-reweighted
        let base = IncrementLaw::plus_minus_one();
        let tilt = solve_tilt(&base, 0.25).unwrap();
        let (n, reps) = (20, 100_000u64);
        let direct_s = TiltedLaw::identity(base.clone()).sampler().unwrap();
        let tilt_s = tilt.sampler().unwrap();
        let (mut d, mut w) = (Welford::new(), Welford::new());
        let mut path = vec![0.0; n];
        for r in 0..reps {
            let mut rng = CounterRng::new(5, r, 0, 0);
            let s: f64 = (0..n).map(|_| direct_s.sample(&mut rng)).sum();
            d.push(if s > 5.0 { 1.0 } else { 0.0 });
            let mut rng = CounterRng::new(6, r, 0, 0);
            path.iter_mut().for_each(|x| *x = tilt_s.sample(&mut rng));
            let s: f64 = path.iter().sum();
            let lw = walk_weight(&path, tilt.theta, tilt.log_normalizer);
            w.push(if s > 5.0 { lw.exp() } else { 0.0 });
        }
        let joint = (d.std_err().powi(2) + w.std_err().powi(2)).sqrt();
        assert!((d.mean - w.mean).abs() < 4.0 * joint);
        // exact binomial value
        let exact: f64 = (0..=20u64)
            .filter(|k| 2.0 * *k as f64 - 20.0 > 5.0)
            .map(|k| binom(20, k) / 2f64.powi(20))
            .sum();
        assert!((w.mean - exact).abs() < 4.0 * w.std_err());
    }

    fn binom(n: u64, k: u64) -> f64 {
        (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64)
    }
}
