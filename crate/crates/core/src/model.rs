//! Offspring and increment laws, and calibration of the speed `c1`, the
//! tilt `theta_bar` and the log correction `c2`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, BrwError, Result};
use crate::rng::{CounterRng, U64Table};
use crate::stats::normal_cdf;

/// Tolerance on the residual of the stationarity equations.
pub const SOLVER_TOL: f64 = 1e-12;
/// Relative margin keeping `c1` strictly inside the range of `(log φ)'`.
pub const BOUNDARY_MARGIN: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Offspring

/// Finite-support reproduction law with `p_0 = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffspringLaw {
    /// `probs[i]` is the probability of `i` children; `probs[0] == 0`.
    probs: Vec<f64>,
    rho: f64,
    k: f64,
}

impl OffspringLaw {
    /// Builds a law from `(children, probability)` pairs.
    pub fn new(pairs: &[(u32, f64)]) -> Result<Self> {
        let law = Self::unchecked(pairs)?;
        if !(law.rho > 1.0) {
            return domain(format!("offspring mean rho = {} must exceed 1", law.rho));
        }
        Ok(law)
    }

    /// Same validation as [`OffspringLaw::new`] except `rho > 1`. Exists for
    /// degenerate test models such as the single-child law.
    pub fn unchecked(pairs: &[(u32, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return domain("offspring law has no support");
        }
        let max = pairs.iter().map(|p| p.0).max().unwrap() as usize;
        let mut probs = vec![0.0; max + 1];
        for &(i, p) in pairs {
            if !(p >= 0.0) || !p.is_finite() {
                return domain(format!("offspring probability p_{i} = {p} is not a probability"));
            }
            if i == 0 && p > 0.0 {
                return domain("offspring index must be >= 1 (extinction is excluded)");
            }
            probs[i as usize] += p;
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return domain(format!("offspring probabilities sum to {total}, not 1"));
        }
        while probs.len() > 1 && *probs.last().unwrap() == 0.0 {
            probs.pop();
        }
        let rho = probs.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
        let k = probs.iter().enumerate().map(|(i, p)| (i * i) as f64 * p).sum();
        Ok(Self { probs, rho, k })
    }

    pub fn binary() -> Self {
        Self::new(&[(2, 1.0)]).unwrap()
    }

    /// Test-only law `p_1 = 1` (plain random walk).
    pub fn single_child() -> Self {
        Self::unchecked(&[(1, 1.0)]).unwrap()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Second moment `K = Σ i² p_i`.
    pub fn second_moment(&self) -> f64 {
        self.k
    }

    /// `K* = K − ρ = E[N(N−1)]`, the expected number of ordered sibling pairs.
    pub fn k_star(&self) -> f64 {
        self.k - self.rho
    }

    pub fn max_children(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// Pairs `(i, p_i)` with `p_i > 0`.
    pub fn support(&self) -> Vec<(u32, f64)> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, p)| (i as u32, *p))
            .collect()
    }

    /// Generating function `f(s) = Σ p_i s^i` by Horner.
    pub fn pgf(&self, s: f64) -> f64 {
        self.probs.iter().rev().fold(0.0, |acc, p| acc * s + p)
    }

    /// `1 − f(1 − t)`, accurate for small `t`.
    pub fn pgf_complement(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t >= 1.0 {
            return 1.0;
        }
        let l = (-t).ln_1p();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate().skip(1) {
            if *p > 0.0 {
                acc += p * -((i as f64) * l).exp_m1();
            }
        }
        acc.min(1.0)
    }

    pub fn sampler(&self) -> OffspringSampler {
        let support = self.support();
        if support.len() == 1 {
            OffspringSampler { fixed: Some(support[0].0), values: vec![], table: None }
        } else {
            let probs: Vec<f64> = support.iter().map(|p| p.1).collect();
            OffspringSampler {
                fixed: None,
                values: support.iter().map(|p| p.0).collect(),
                table: Some(U64Table::new(&probs)),
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct OffspringSampler {
    fixed: Option<u32>,
    values: Vec<u32>,
    table: Option<U64Table>,
}

impl OffspringSampler {
    #[inline(always)]
    pub fn sample(&self, rng: &mut CounterRng) -> u32 {
        match self.fixed {
            Some(k) => k,
            None => self.values[self.table.as_ref().unwrap().pick(rng.next())],
        }
    }
}

// ---------------------------------------------------------------------------
// Increments

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IncrementKind {
    ContinuousParametric,
    LatticePmf,
}

/// Finite pmf on `span · {min_index, …, min_index + probs.len() − 1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticePmf {
    pub span: f64,
    pub min_index: i64,
    pub probs: Vec<f64>,
}

impl LatticePmf {
    pub fn max_index(&self) -> i64 {
        self.min_index + self.probs.len() as i64 - 1
    }

    pub fn points(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, p)| (self.min_index + i as i64, *p))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum IncrementLaw {
    Gaussian { mu: f64, sigma: f64 },
    /// `shift + Exp(rate)`.
    ShiftedExponential { shift: f64, rate: f64 },
    Uniform { a: f64, b: f64 },
    Lattice(LatticePmf),
}

impl IncrementLaw {
    pub fn gaussian(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !mu.is_finite() || !sigma.is_finite() {
            return domain(format!("gaussian needs finite mu and sigma > 0, got ({mu}, {sigma})"));
        }
        Ok(Self::Gaussian { mu, sigma })
    }

    pub fn standard_normal() -> Self {
        Self::Gaussian { mu: 0.0, sigma: 1.0 }
    }

    pub fn shifted_exponential(shift: f64, rate: f64) -> Result<Self> {
        if !(rate > 0.0) || !shift.is_finite() || !rate.is_finite() {
            return domain(format!("shifted exponential needs rate > 0, got {rate}"));
        }
        Ok(Self::ShiftedExponential { shift, rate })
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return domain(format!("uniform needs a < b, got ({a}, {b})"));
        }
        Ok(Self::Uniform { a, b })
    }

    /// Lattice law from `(index, probability)` pairs on `span · ℤ`.
    pub fn lattice(span: f64, pairs: &[(i64, f64)]) -> Result<Self> {
        if !(span > 0.0) || !span.is_finite() {
            return domain(format!("lattice span must be positive, got {span}"));
        }
        let mut pts: Vec<(i64, f64)> = pairs.iter().copied().filter(|p| p.1 != 0.0).collect();
        if pts.is_empty() {
            return domain("lattice law has no support");
        }
        for &(i, p) in &pts {
            if !(p > 0.0) || !p.is_finite() {
                return domain(format!("lattice probability at {i} is {p}"));
            }
        }
        let total: f64 = pts.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return domain(format!("lattice probabilities sum to {total}, not 1"));
        }
        pts.sort_by_key(|p| p.0);
        let lo = pts[0].0;
        let hi = pts[pts.len() - 1].0;
        let mut probs = vec![0.0; (hi - lo + 1) as usize];
        for (i, p) in pts {
            probs[(i - lo) as usize] += p;
        }
        Ok(Self::Lattice(LatticePmf { span, min_index: lo, probs }))
    }

    /// ±1 with probability 1/2 each.
    pub fn plus_minus_one() -> Self {
        Self::lattice(1.0, &[(-1, 0.5), (1, 0.5)]).unwrap()
    }

    /// Uniform on {−1, 0, 1}.
    pub fn lazy_unit() -> Self {
        let t = 1.0 / 3.0;
        Self::lattice(1.0, &[(-1, t), (0, t), (1, 1.0 - 2.0 * t)]).unwrap()
    }

    pub fn kind(&self) -> IncrementKind {
        match self {
            Self::Lattice(_) => IncrementKind::LatticePmf,
            _ => IncrementKind::ContinuousParametric,
        }
    }

    pub fn as_lattice(&self) -> Option<&LatticePmf> {
        match self {
            Self::Lattice(l) => Some(l),
            _ => None,
        }
    }

    pub fn lattice_span(&self) -> Option<f64> {
        self.as_lattice().map(|l| l.span)
    }

    pub fn support_bounds(&self) -> Option<(f64, f64)> {
        match self {
            Self::Gaussian { .. } => None,
            Self::ShiftedExponential { shift, .. } => Some((*shift, f64::INFINITY)),
            Self::Uniform { a, b } => Some((*a, *b)),
            Self::Lattice(l) => Some((l.min_index as f64 * l.span, l.max_index() as f64 * l.span)),
        }
    }

    /// Open interval on which `φ` is finite.
    pub fn theta_domain(&self) -> (f64, f64) {
        match self {
            Self::ShiftedExponential { rate, .. } => (f64::NEG_INFINITY, *rate),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Gaussian { mu, .. } => *mu,
            Self::ShiftedExponential { shift, rate } => shift + 1.0 / rate,
            Self::Uniform { a, b } => 0.5 * (a + b),
            Self::Lattice(l) => l.points().map(|(i, p)| i as f64 * l.span * p).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        self.d2log_mgf(0.0)
    }

    /// `φ(θ)`, with an error outside the finite-MGF interval.
    pub fn mgf(&self, theta: f64) -> Result<f64> {
        let (lo, hi) = self.theta_domain();
        if !(theta > lo && theta < hi) {
            return domain(format!("theta = {theta} outside the finite-MGF interval ({lo}, {hi})"));
        }
        Ok(self.log_mgf(theta).exp())
    }

    /// `log φ(θ)`; `+∞` outside the domain.
    pub fn log_mgf(&self, theta: f64) -> f64 {
        match self {
            Self::Gaussian { mu, sigma } => mu * theta + 0.5 * sigma * sigma * theta * theta,
            Self::ShiftedExponential { shift, rate } => {
                if theta >= *rate {
                    f64::INFINITY
                } else {
                    shift * theta + rate.ln() - (rate - theta).ln()
                }
            }
            Self::Uniform { a, b } => a * theta + log_expm1_over(theta * (b - a)),
            Self::Lattice(l) => {
                let m = l
                    .points()
                    .map(|(i, p)| theta * i as f64 * l.span + p.ln())
                    .fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = l
                    .points()
                    .map(|(i, p)| (theta * i as f64 * l.span + p.ln() - m).exp())
                    .sum();
                m + s.ln()
            }
        }
    }

    /// `(log φ)'(θ)`: the mean of the law tilted by `e^{θx}`.
    pub fn dlog_mgf(&self, theta: f64) -> f64 {
        match self {
            Self::Gaussian { mu, sigma } => mu + sigma * sigma * theta,
            Self::ShiftedExponential { shift, rate } => shift + 1.0 / (rate - theta),
            Self::Uniform { a, b } => {
                let w = b - a;
                a + w * uniform_g(theta * w)
            }
            Self::Lattice(l) => lattice_tilted_moments(l, theta).0,
        }
    }

    /// `(log φ)''(θ)`: the variance of the tilted law.
    pub fn d2log_mgf(&self, theta: f64) -> f64 {
        match self {
            Self::Gaussian { sigma, .. } => sigma * sigma,
            Self::ShiftedExponential { rate, .. } => 1.0 / ((rate - theta) * (rate - theta)),
            Self::Uniform { a, b } => {
                let w = b - a;
                w * w * uniform_dg(theta * w)
            }
            Self::Lattice(l) => lattice_tilted_moments(l, theta).1,
        }
    }

    /// Supremum of `(log φ)'`, the top of the support.
    pub fn sup_slope(&self) -> f64 {
        self.support_bounds().map_or(f64::INFINITY, |b| b.1)
    }

    pub fn inf_slope(&self) -> f64 {
        self.support_bounds().map_or(f64::NEG_INFINITY, |b| b.0)
    }

    /// Distribution function (continuous laws; lattice laws use their pmf).
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Gaussian { mu, sigma } => normal_cdf((x - mu) / sigma),
            Self::ShiftedExponential { shift, rate } => {
                if x <= *shift {
                    0.0
                } else {
                    -(-(rate * (x - shift))).exp_m1()
                }
            }
            Self::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            Self::Lattice(l) => l
                .points()
                .filter(|(i, _)| *i as f64 * l.span <= x)
                .map(|p| p.1)
                .sum(),
        }
    }

    /// Upper bound on the density; `None` for lattice laws.
    pub fn density_sup(&self) -> Option<f64> {
        match self {
            Self::Gaussian { sigma, .. } => Some(1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt())),
            Self::ShiftedExponential { rate, .. } => Some(*rate),
            Self::Uniform { a, b } => Some(1.0 / (b - a)),
            Self::Lattice(_) => None,
        }
    }

    pub fn sampler(&self) -> IncrementSampler {
        match self {
            Self::Gaussian { mu, sigma } => IncrementSampler::Gaussian { mu: *mu, sigma: *sigma },
            Self::ShiftedExponential { shift, rate } => {
                IncrementSampler::Exponential { shift: *shift, rate: *rate }
            }
            Self::Uniform { a, b } => IncrementSampler::Uniform { a: *a, width: b - a },
            Self::Lattice(l) => IncrementSampler::lattice(l),
        }
    }
}

/// Fast per-draw sampler for an increment law (or a tilted lattice law).
#[derive(Clone, Debug)]
pub enum IncrementSampler {
    Gaussian { mu: f64, sigma: f64 },
    Exponential { shift: f64, rate: f64 },
    Uniform { a: f64, width: f64 },
    Lattice { values: Vec<f64>, table: U64Table },
}

impl IncrementSampler {
    pub fn lattice(l: &LatticePmf) -> Self {
        let pts: Vec<(i64, f64)> = l.points().filter(|p| p.1 > 0.0).collect();
        Self::Lattice {
            values: pts.iter().map(|(i, _)| *i as f64 * l.span).collect(),
            table: U64Table::new(&pts.iter().map(|p| p.1).collect::<Vec<_>>()),
        }
    }

    #[inline(always)]
    pub fn sample(&self, rng: &mut CounterRng) -> f64 {
        match self {
            Self::Lattice { values, table } => values[table.pick(rng.next())],
            Self::Gaussian { mu, sigma } => {
                let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
                mu + sigma * z
            }
            Self::Exponential { shift, rate } => shift - rng.unit_open0().ln() / rate,
            Self::Uniform { a, width } => a + width * rng.unit(),
        }
    }
}

/// `log((e^u − 1)/u)`, stable near 0 and for large |u|.
fn log_expm1_over(u: f64) -> f64 {
    if u.abs() < 1e-3 {
        let u2 = u * u;
        u / 2.0 + u2 / 24.0 - u2 * u2 / 2880.0
    } else if u > 0.0 {
        u + (-(-u).exp_m1()).ln() - u.ln()
    } else {
        (-u.exp_m1()).ln() - (-u).ln()
    }
}

/// `d/du log((e^u − 1)/u) = 1/(1 − e^{−u}) − 1/u`.
fn uniform_g(u: f64) -> f64 {
    if u.abs() < 1e-3 {
        return 0.5 + u / 12.0 - u * u * u / 720.0;
    }
    let a = u.abs();
    let ga = 1.0 / (-(-a).exp_m1()) - 1.0 / a;
    if u > 0.0 {
        ga
    } else {
        1.0 - ga
    }
}

fn uniform_dg(u: f64) -> f64 {
    if u.abs() < 1e-3 {
        return 1.0 / 12.0 - u * u / 240.0;
    }
    let a = u.abs();
    let e = (-a).exp();
    let d = -(-a).exp_m1();
    1.0 / (a * a) - e / (d * d)
}

fn lattice_tilted_moments(l: &LatticePmf, theta: f64) -> (f64, f64) {
    let m = l
        .points()
        .map(|(i, p)| theta * i as f64 * l.span + p.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut s1 = 0.0;
    for (i, p) in l.points() {
        let x = i as f64 * l.span;
        let w = (theta * x + p.ln() - m).exp();
        z += w;
        s1 += w * x;
    }
    let mean = s1 / z;
    let mut s2 = 0.0;
    for (i, p) in l.points() {
        let x = i as f64 * l.span;
        let w = (theta * x + p.ln() - m).exp();
        s2 += w * (x - mean) * (x - mean);
    }
    (mean, s2 / z)
}

// ---------------------------------------------------------------------------
// Root finding

/// Solves `f(x) = target` for increasing `f` on `[lo, hi]` by Newton steps
/// kept inside a shrinking bracket, bisecting whenever Newton leaves it.
pub(crate) fn solve_increasing<F>(f: F, target: f64, mut lo: f64, mut hi: f64, tol: f64) -> f64
where
    F: Fn(f64) -> (f64, f64),
{
    let mut x = 0.5 * (lo + hi);
    let mut best = (f64::INFINITY, x);
    for _ in 0..400 {
        let (fx, dfx) = f(x);
        let r = fx - target;
        if r.abs() < best.0 {
            best = (r.abs(), x);
        }
        if r.abs() <= tol {
            return x;
        }
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE) {
            break;
        }
        let nx = x - r / dfx;
        x = if nx.is_finite() && nx > lo && nx < hi { nx } else { 0.5 * (lo + hi) };
    }
    best.1
}

/// Finds a point in direction `dir` from 0 where `f` reaches `target`,
/// staying inside the open domain `(lo, hi)`.
fn expand_bracket<F>(f: &F, target: f64, dir: f64, limit: f64) -> Option<f64>
where
    F: Fn(f64) -> f64,
{
    for k in 0..1100 {
        let t = if limit.is_finite() {
            // approach the boundary geometrically
            limit * (1.0 - 0.5f64.powi(k + 1))
        } else {
            dir * 2f64.powi(k - 10)
        };
        if !t.is_finite() {
            return None;
        }
        let v = f(t);
        if v.is_nan() {
            return None;
        }
        if (dir > 0.0 && v >= target) || (dir < 0.0 && v <= target) {
            return Some(t);
        }
        if limit.is_finite() && k > 60 {
            return None;
        }
    }
    None
}

/// Solves `(log φ)'(θ) = target` for any attainable target mean.
pub(crate) fn solve_stationarity(law: &IncrementLaw, target: f64) -> Result<f64> {
    let mean = law.dlog_mgf(0.0);
    if target == mean || target == law.mean() {
        return Ok(0.0);
    }
    if !(target > law.inf_slope() && target < law.sup_slope()) {
        return domain(format!(
            "target mean {target} is outside the range ({}, {}) of (log φ)'",
            law.inf_slope(),
            law.sup_slope()
        ));
    }
    let (dlo, dhi) = law.theta_domain();
    let g = |t: f64| law.dlog_mgf(t);
    let fd = |t: f64| (law.dlog_mgf(t), law.d2log_mgf(t));
    let tol = SOLVER_TOL * target.abs().clamp(1e-3, 1.0);
    if target > mean {
        let hi = expand_bracket(&g, target, 1.0, dhi)
            .ok_or_else(|| BrwError::Domain(format!("no tilt reaches mean {target}")))?;
        Ok(solve_increasing(fd, target, 0.0, hi, tol))
    } else {
        let lo = expand_bracket(&g, target, -1.0, dlo)
            .ok_or_else(|| BrwError::Domain(format!("no tilt reaches mean {target}")))?;
        Ok(solve_increasing(fd, target, lo, 0.0, tol))
    }
}

// ---------------------------------------------------------------------------
// Rate function and calibration

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatePoint {
    pub value: f64,
    pub theta: f64,
}

/// `I(λ) = sup_{θ>0} [θλ − log φ(θ)]` for `λ` at or above the mean.
pub fn rate_function(law: &IncrementLaw, lambda: f64) -> Result<RatePoint> {
    let mean = law.mean();
    if lambda < mean {
        return domain(format!("lambda = {lambda} is below the mean {mean}"));
    }
    let theta = solve_stationarity(law, lambda)?;
    Ok(RatePoint { value: theta * lambda - law.log_mgf(theta), theta })
}

/// Calibrated constants for an (offspring, increment) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    pub c1: f64,
    pub theta_bar: f64,
    pub c2: f64,
    pub log_rho: f64,
    /// Finite-MGF interval; `None` for an infinite end.
    pub theta_domain: (Option<f64>, Option<f64>),
    /// Minimum value and minimiser of `(log ρ + log φ(θ))/θ`.
    pub dual_c1: f64,
    pub dual_theta: f64,
    pub increment: IncrementLaw,
}

impl ModelConstants {
    /// `m_n = c1 n − c2 log n`.
    pub fn centering(&self, n: i64) -> Result<f64> {
        if n <= 0 {
            return domain(format!("centering needs n >= 1, got {n}"));
        }
        Ok(self.centering_real(n as f64))
    }

    /// The centering formula with real-valued `n`.
    pub fn centering_real(&self, n: f64) -> f64 {
        self.c1 * n - self.c2 * n.ln()
    }

    pub fn rate(&self, lambda: f64) -> Result<f64> {
        rate_function(&self.increment, lambda).map(|r| r.value)
    }

    /// `ρ φ(θ̄) e^{−θ̄ c1}`, which equals 1 for calibrated constants.
    pub fn fundamental_identity(&self) -> f64 {
        (self.log_rho + self.increment.log_mgf(self.theta_bar) - self.theta_bar * self.c1).exp()
    }
}

/// Golden-section minimiser of the unimodal function `q` on `(0, b]`.
fn golden_min<F: Fn(f64) -> f64>(q: F, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (q(c), q(d));
    for _ in 0..400 {
        if b - a <= 1e-15 * b.abs().max(1e-300) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = q(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = q(d);
        }
    }
    0.5 * (a + b)
}

/// Dual route to the speed: `c1 = min_θ (log ρ + log φ(θ))/θ`.
pub fn dual_speed(log_rho: f64, law: &IncrementLaw) -> Result<(f64, f64)> {
    let (_, dhi) = law.theta_domain();
    let q = |t: f64| (log_rho + law.log_mgf(t)) / t;
    let mut b = if dhi.is_finite() { dhi.min(1.0) * 0.5 } else { 1.0 };
    for _ in 0..2000 {
        let next = if dhi.is_finite() { 0.5 * (b + dhi) } else { 2.0 * b };
        if q(b) < q(0.5 * b) || q(next) < q(b) {
            b = next;
        } else {
            break;
        }
        if !b.is_finite() {
            return domain("dual objective has no finite minimiser");
        }
    }
    let t = golden_min(q, 0.0, b);
    Ok((q(t), t))
}

/// Solves `I(c1) = log ρ` and returns the constants.
pub fn calibrate(off: &OffspringLaw, inc: &IncrementLaw) -> Result<ModelConstants> {
    let log_rho = off.rho().ln();
    if !(log_rho > 0.0) {
        return Err(BrwError::Assumption(format!(
            "offspring mean rho = {} must exceed 1 so that log rho > 0",
            off.rho()
        )));
    }
    let (dlo, dhi) = inc.theta_domain();
    // h(θ) = θ(log φ)'(θ) − log φ(θ) is increasing and I(c1) = h(θ̄).
    let h = |t: f64| t * inc.dlog_mgf(t) - inc.log_mgf(t);
    let hd = |t: f64| (h(t), t * inc.d2log_mgf(t));
    let hi = expand_bracket(&h, log_rho, 1.0, dhi).ok_or_else(|| {
        BrwError::Assumption(format!(
            "log rho = {log_rho} is not inside the range of the rate function I \
             (I stays below log rho up to the top of the support {}), so c1 is undefined",
            inc.sup_slope()
        ))
    })?;
    let tol = SOLVER_TOL * log_rho.min(1.0);
    let theta = solve_increasing(hd, log_rho, 0.0, hi, tol);
    let c1 = inc.dlog_mgf(theta);
    let sup = inc.sup_slope();
    if sup.is_finite() && sup - c1 <= BOUNDARY_MARGIN * sup.abs().max(1.0) {
        return Err(BrwError::Assumption(format!(
            "c1 = {c1} is not strictly inside the range of (log φ)' (upper end {sup})"
        )));
    }
    if dhi.is_finite() && dhi - theta <= BOUNDARY_MARGIN * dhi.abs().max(1.0) {
        return Err(BrwError::Assumption(format!(
            "theta_bar = {theta} is at the edge of the finite-MGF interval"
        )));
    }
    let (dual_c1, dual_theta) = dual_speed(log_rho, inc)?;
    if (dual_c1 - c1).abs() > 1e-9 * c1.abs().max(1.0) {
        return domain(format!(
            "primal c1 = {c1} and dual c1 = {dual_c1} disagree beyond 1e-9"
        ));
    }
    let fin = |x: f64| if x.is_finite() { Some(x) } else { None };
    Ok(ModelConstants {
        c1,
        theta_bar: theta,
        c2: 1.5 / theta,
        log_rho,
        theta_domain: (fin(dlo), fin(dhi)),
        dual_c1,
        dual_theta,
        increment: inc.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal() -> IncrementLaw {
        IncrementLaw::standard_normal()
    }

    #[test]
    fn mgf_examples() {
        assert_eq!(normal().mgf(0.0).unwrap(), 1.0);
        assert!((normal().mgf(1.0).unwrap() - 0.5f64.exp()).abs() < 1e-15);
        let pm = IncrementLaw::plus_minus_one();
        assert!((pm.mgf(1.0).unwrap() - 1f64.cosh()).abs() < 1e-15);
        let e = IncrementLaw::shifted_exponential(0.0, 2.0).unwrap();
        assert!(e.mgf(2.0).is_err());
        assert!((e.mgf(1.0).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gaussian_mgf_by_quadrature() {
        // trapezoid rule on a wide grid; exact to rounding for this integrand
        let h = 1e-3;
        let mut s = 0.0;
        let mut x: f64 = -12.0;
        while x <= 14.0 {
            s += (x - 0.5 * x * x).exp() * h;
            x += h;
        }
        s /= (2.0 * std::f64::consts::PI).sqrt();
        assert!((s - normal().mgf(1.0).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn uniform_series_is_continuous() {
        let u = IncrementLaw::uniform(-1.0, 2.0).unwrap();
        for t in [-1e-3 * 0.999 / 3.0f64, 1e-3 * 0.999 / 3.0] {
            let eps = 1e-3 * 1.001 / 3.0 * t.signum();
            assert!((u.log_mgf(t) - u.log_mgf(eps)).abs() < 1e-6);
            assert!((u.dlog_mgf(t) - u.dlog_mgf(eps)).abs() < 1e-6);
            assert!((u.d2log_mgf(t) - u.d2log_mgf(eps)).abs() < 1e-6);
        }
        assert!((u.dlog_mgf(0.0) - 0.5).abs() < 1e-15);
        assert!((u.d2log_mgf(0.0) - 0.75).abs() < 1e-15);
        // direct evaluation away from zero
        let t = 0.7;
        let direct = ((t * 2.0f64).exp() - (-t as f64).exp()) / (3.0 * t);
        assert!((u.log_mgf(t) - direct.ln()).abs() < 1e-14);
        // derivative against a central difference
        let d = (u.log_mgf(t + 1e-6) - u.log_mgf(t - 1e-6)) / 2e-6;
        assert!((u.dlog_mgf(t) - d).abs() < 1e-8);
        let d2 = (u.dlog_mgf(-5.0 + 1e-6) - u.dlog_mgf(-5.0 - 1e-6)) / 2e-6;
        assert!((u.d2log_mgf(-5.0) - d2).abs() < 1e-7);
    }

    #[test]
    fn rate_function_examples() {
        let r = rate_function(&normal(), 2.0).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12 && (r.theta - 2.0).abs() < 1e-12);
        assert!(rate_function(&normal(), 1e-9).unwrap().value.abs() < 1e-15);
        // golden-section oracle on the ±1 law
        let pm = IncrementLaw::plus_minus_one();
        let want = 0.5 * 0.5f64.atanh() - 0.5f64.atanh().cosh().ln();
        assert!((want - 0.130812).abs() < 1e-6);
        let obj = |t: f64| -(0.5 * t - t.cosh().ln());
        let t = golden_min(obj, 0.0, 4.0);
        assert!((-obj(t) - want).abs() < 1e-14);
        let r = rate_function(&pm, 0.5).unwrap();
        assert!((r.value - want).abs() < 1e-13);
        assert!(rate_function(&pm, 1.0).is_err());
    }

    #[test]
    fn gaussian_calibration() {
        let k = calibrate(&OffspringLaw::binary(), &normal()).unwrap();
        let c1 = (2.0 * 2f64.ln()).sqrt();
        assert!((k.c1 - c1).abs() < 1e-10);
        assert!((k.theta_bar - c1).abs() < 1e-10);
        assert!((k.c2 - 1.5 / k.theta_bar).abs() < 1e-12);
        assert!((k.c2 - 1.273983).abs() < 1e-6);
        assert!((k.dual_c1 - c1).abs() < 1e-8);
        assert!((k.dual_theta - c1).abs() < 1e-6);
        assert!((k.fundamental_identity() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn near_critical_calibration() {
        let off = OffspringLaw::new(&[(1, 1.0 - 1e-7), (2, 1e-7)]).unwrap();
        let k = calibrate(&off, &normal()).unwrap();
        let want = (2.0 * off.rho().ln()).sqrt();
        assert!((k.c1 - want).abs() < 1e-10 * want.max(1e-3) / 1e-3);
        assert!((k.c1 / want - 1.0).abs() < 1e-6);
        assert!((k.rate(k.c1).unwrap() - k.log_rho).abs() < 1e-9);
    }

    #[test]
    fn plus_minus_one_binary_violates_interiority() {
        let e = calibrate(&OffspringLaw::binary(), &IncrementLaw::plus_minus_one()).unwrap_err();
        assert!(matches!(e, BrwError::Assumption(_)), "{e}");
    }

    #[test]
    fn lazy_binary_constants() {
        let k = calibrate(&OffspringLaw::binary(), &IncrementLaw::lazy_unit()).unwrap();
        // tilted mean and rate identity solved independently by bisection
        let inc = IncrementLaw::lazy_unit();
        let (mut lo, mut hi) = (0.0f64, 50.0f64);
        for _ in 0..200 {
            let t = 0.5 * (lo + hi);
            let lam = (t.exp() - (-t).exp()) / (1.0 + t.exp() + (-t).exp());
            let i = t * lam - ((1.0 + t.exp() + (-t).exp()) / 3.0).ln();
            if i < 2f64.ln() { lo = t } else { hi = t }
        }
        assert!((k.theta_bar - lo).abs() < 1e-9);
        assert!((k.c1 - inc.dlog_mgf(lo)).abs() < 1e-9);
        assert!((k.theta_bar - 2.11606).abs() < 1e-4);
    }

    #[test]
    fn other_laws_calibrate() {
        let off = OffspringLaw::new(&[(1, 0.3), (2, 0.4), (3, 0.3)]).unwrap();
        for inc in [
            IncrementLaw::shifted_exponential(-1.0, 1.5).unwrap(),
            IncrementLaw::uniform(-1.0, 1.0).unwrap(),
            IncrementLaw::lattice(0.5, &[(-2, 0.2), (0, 0.5), (3, 0.3)]).unwrap(),
        ] {
            let k = calibrate(&off, &inc).unwrap();
            assert!((k.rate(k.c1).unwrap() - k.log_rho).abs() < 1e-9, "{inc:?}");
            assert!((inc.dlog_mgf(k.theta_bar) - k.c1).abs() < 1e-9);
            assert!((k.dual_c1 - k.c1).abs() < 1e-8);
            assert!((k.dual_theta - k.theta_bar).abs() < 1e-6);
            assert!((k.fundamental_identity() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn centering_examples() {
        let k = calibrate(&OffspringLaw::binary(), &normal()).unwrap();
        assert!((k.centering(1).unwrap() - 1.177410).abs() < 1e-6);
        assert!((k.centering(100).unwrap() - 111.874).abs() < 1e-3);
        let e = std::f64::consts::E;
        let d = k.centering_real(e) - k.centering_real(1.0);
        assert!((d - (k.c1 * (e - 1.0) - k.c2)).abs() < 1e-12);
        assert!(k.centering(0).is_err());
    }

    #[test]
    fn offspring_validation() {
        assert!(OffspringLaw::new(&[(0, 0.5), (2, 0.5)]).is_err());
        assert!(OffspringLaw::new(&[(1, 1.0)]).is_err());
        assert!(OffspringLaw::new(&[(2, 0.5), (3, 0.4)]).is_err());
        let o = OffspringLaw::new(&[(1, 0.25), (3, 0.75)]).unwrap();
        assert!((o.rho() - 2.5).abs() < 1e-15);
        assert!((o.second_moment() - 7.0).abs() < 1e-15);
        assert!((o.k_star() - 4.5).abs() < 1e-15);
        for t in [1e-18, 1e-9, 0.3, 0.999] {
            let direct = 1.0 - o.pgf(1.0 - t);
            assert!((o.pgf_complement(t) - direct).abs() <= 1e-15 + 1e-12 * direct);
        }
        assert!((o.pgf_complement(1e-18) - 2.5e-18).abs() < 1e-30);
    }
}
