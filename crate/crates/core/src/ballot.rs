//! Barrier-crossing probabilities for mean-zero and slightly drifted walks.
//!
//! The event of interest is
//! `S_k ≥ −y − h(k ∧ (n−k)) − d·k` for all `0 < k < n` (strict `>` if asked)
//! together with `S_n + n·d` in a terminal window, where `S` is a mean-zero
//! walk. Adding `d·k` to both sides gives the drifted walk `S_k + d·k`.
//!
//! On lattice walks barrier levels are turned into integer thresholds:
//! `s ≥ floor(L/span)` for non-strict and `s ≥ floor(L/span) + 1` for strict
//! barriers. Strict barriers are therefore exact; non-strict ones round the
//! curve down to the lattice. Monte Carlo on lattice walks uses the same
//! integers so both estimators target the same event.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, BrwError, Result};
use crate::model::{IncrementLaw, LatticePmf};
use crate::rng::CounterRng;
use crate::stats::{normal_cdf, Welford};
use crate::tilt::{solve_tilt, walk_weight, TiltedLaw};

/// Largest DP state space accepted (`n · support width`).
pub const DP_STATE_LIMIT: u64 = 10_000_000;
const FLOOR_FUZZ: f64 = 1e-9;
const CHUNK: u64 = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Curve {
    None,
    /// `coefficient · (log m)_+` at `m = k ∧ (n−k)`.
    SymmetricLog { coefficient: f64 },
    /// `h(m)` tabulated for `m = 0, 1, …`; indexed by `k ∧ (n−k)`.
    Custom(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub y: f64,
    pub curve: Curve,
    pub strict: bool,
    /// Per-step drift `d`.
    pub drift: f64,
}

impl BarrierSpec {
    pub fn new(y: f64, curve: Curve, strict: bool, drift: f64) -> Result<Self> {
        if !(y >= 0.0) || !y.is_finite() {
            return domain(format!("barrier depth y = {y} must be finite and >= 0"));
        }
        if !drift.is_finite() {
            return domain("barrier drift must be finite");
        }
        match &curve {
            Curve::SymmetricLog { coefficient } if !(*coefficient >= 0.0) => {
                return domain("log-curve coefficient must be >= 0")
            }
            Curve::Custom(t) => {
                if t.is_empty() || t[0] != 0.0 {
                    return domain("custom curve must start with h(0) = 0");
                }
                if t.iter().any(|v| !(*v >= 0.0)) {
                    return domain("custom curve must be nonnegative");
                }
            }
            _ => {}
        }
        Ok(Self { y, curve, strict, drift })
    }

    /// Flat non-strict floor at depth `y` without drift.
    pub fn flat(y: f64) -> Self {
        Self { y, curve: Curve::None, strict: false, drift: 0.0 }
    }

    pub fn with_drift(mut self, d: f64) -> Self {
        self.drift = d;
        self
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn h(&self, k: usize, n: usize) -> f64 {
        let m = k.min(n.saturating_sub(k));
        match &self.curve {
            Curve::None => 0.0,
            Curve::SymmetricLog { coefficient } => {
                if m == 0 {
                    0.0
                } else {
                    coefficient * (m as f64).ln().max(0.0)
                }
            }
            Curve::Custom(t) => *t.get(m).unwrap_or_else(|| t.last().unwrap()),
        }
    }

    /// Barrier level for `S_k` (the undrifted walk).
    pub fn level(&self, k: usize, n: usize) -> f64 {
        -self.y - self.h(k, n) - self.drift * k as f64
    }

    /// Smallest admissible lattice index at step `k`.
    pub fn lattice_threshold(&self, k: usize, n: usize, span: f64) -> i64 {
        let f = (self.level(k, n) / span + FLOOR_FUZZ).floor() as i64;
        if self.strict {
            f + 1
        } else {
            f
        }
    }

    #[inline]
    fn admits(&self, s: f64, k: usize, n: usize) -> bool {
        let l = self.level(k, n);
        if self.strict {
            s > l
        } else {
            s >= l
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowMode {
    /// `(a, b)`
    Open,
    /// `(a, b]`
    HalfOpen,
    /// `[a, b)`
    ClosedOpen,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalWindow {
    pub a: f64,
    pub b: f64,
    pub mode: WindowMode,
}

impl TerminalWindow {
    pub fn new(a: f64, b: f64, mode: WindowMode) -> Result<Self> {
        if !(a < b) {
            return domain(format!("terminal window needs a < b, got ({a}, {b})"));
        }
        Ok(Self { a, b, mode })
    }

    pub fn open(a: f64, b: f64) -> Result<Self> {
        Self::new(a, b, WindowMode::Open)
    }

    pub fn half_open(a: f64, b: f64) -> Result<Self> {
        Self::new(a, b, WindowMode::HalfOpen)
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        match self.mode {
            WindowMode::Open => x > self.a && x < self.b,
            WindowMode::HalfOpen => x > self.a && x <= self.b,
            WindowMode::ClosedOpen => x >= self.a && x < self.b,
        }
    }

    /// The window `−W` seen by the time-reversed walk.
    pub fn reflected(&self) -> Self {
        let mode = match self.mode {
            WindowMode::Open => WindowMode::Open,
            WindowMode::HalfOpen => WindowMode::ClosedOpen,
            WindowMode::ClosedOpen => WindowMode::HalfOpen,
        };
        Self { a: -self.b, b: -self.a, mode }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub p_hat: f64,
    pub std_err: f64,
    pub replicates: u64,
    /// True when the tilted proposal with likelihood-ratio weights was used.
    pub importance: bool,
}

// ---------------------------------------------------------------------------
// Exact lattice DP

fn lattice_of(walk: &IncrementLaw) -> Result<&LatticePmf> {
    walk.as_lattice()
        .ok_or_else(|| BrwError::Domain("the exact barrier DP needs a lattice walk".into()))
}

/// Mass of paths surviving the barrier, by terminal lattice index.
/// Returns `(first index, masses)`.
pub fn dp_terminal_masses(walk: &IncrementLaw, n: usize, barrier: &BarrierSpec) -> Result<(i64, Vec<f64>)> {
    let l = lattice_of(walk)?;
    let (lo, hi) = (l.min_index, l.max_index());
    let width = (hi - lo) as u64;
    if (n as u64).saturating_mul(width.max(1)) > DP_STATE_LIMIT {
        return Err(BrwError::Capacity(format!(
            "barrier DP state space n·width = {} exceeds {DP_STATE_LIMIT}",
            n as u64 * width
        )));
    }
    let base = n as i64 * lo;
    let len = (n as i64 * (hi - lo) + 1) as usize;
    let mut cur = vec![0.0f64; len];
    let mut next = vec![0.0f64; len];
    cur[(0 - base) as usize] = 1.0;
    // reachable index window at step k is [k lo, k hi]; clipped windows shrink it
    let (mut clo, mut chi) = (0i64, 0i64);
    for k in 1..=n {
        let (nlo, nhi) = (clo + lo, chi + hi);
        for v in &mut next[(nlo - base) as usize..=(nhi - base) as usize] {
            *v = 0.0;
        }
        for s in clo..=chi {
            let m = cur[(s - base) as usize];
            if m == 0.0 {
                continue;
            }
            for (j, p) in l.points() {
                next[(s + j - base) as usize] += m * p;
            }
        }
        let (mut a, b) = (nlo, nhi);
        if k < n {
            let thr = barrier.lattice_threshold(k, n, l.span);
            while a <= b && a < thr {
                next[(a - base) as usize] = 0.0;
                a += 1;
            }
        }
        std::mem::swap(&mut cur, &mut next);
        clo = a.min(b);
        chi = b;
        if a > b {
            // everything was killed
            return Ok((0, vec![]));
        }
    }
    Ok((clo, cur[(clo - base) as usize..=(chi - base) as usize].to_vec()))
}

/// Exact probability of the barrier event for a lattice walk.
pub fn dp_barrier_prob(walk: &IncrementLaw, n: usize, barrier: &BarrierSpec, window: &TerminalWindow) -> Result<f64> {
    if n == 0 {
        return domain("n must be >= 1");
    }
    let span = lattice_of(walk)?.span;
    let (first, masses) = dp_terminal_masses(walk, n, barrier)?;
    let shift = n as f64 * barrier.drift;
    let mut acc = 0.0;
    for (i, m) in masses.iter().enumerate() {
        let x = (first + i as i64) as f64 * span + shift;
        if window.contains(x) {
            acc += m;
        }
    }
    Ok(acc)
}

/// Terminal distribution of `S_n + n d` on surviving paths, for golden files.
pub fn dp_terminal_distribution(walk: &IncrementLaw, n: usize, barrier: &BarrierSpec) -> Result<Vec<(f64, f64)>> {
    let span = lattice_of(walk)?.span;
    let (first, masses) = dp_terminal_masses(walk, n, barrier)?;
    let shift = n as f64 * barrier.drift;
    Ok(masses
        .iter()
        .enumerate()
        .map(|(i, m)| ((first + i as i64) as f64 * span + shift, *m))
        .collect())
}

// ---------------------------------------------------------------------------
// Monte Carlo

enum PathMode {
    Lattice { span: f64, thresholds: Vec<i64> },
    Real,
}

fn path_mode(walk: &TiltedLaw, n: usize, barrier: &BarrierSpec) -> PathMode {
    match walk.base.as_lattice() {
        Some(l) if walk.shift == 0.0 => PathMode::Lattice {
            span: l.span,
            thresholds: (0..=n).map(|k| barrier.lattice_threshold(k, n, l.span)).collect(),
        },
        _ => PathMode::Real,
    }
}

/// Normal approximation to the window mass, used to spot deep tails.
fn window_mass_normal(walk: &TiltedLaw, n: usize, barrier: &BarrierSpec, window: &TerminalWindow) -> f64 {
    let sd = (walk.variance() * n as f64).sqrt();
    let m = n as f64 * barrier.drift;
    normal_cdf((window.b - m) / sd) - normal_cdf((window.a - m) / sd)
}

/// Unbiased estimate of the barrier event probability.
pub fn mc_barrier_prob(
    walk: &TiltedLaw,
    n: usize,
    barrier: &BarrierSpec,
    window: &TerminalWindow,
    replicates: u64,
    seed: u64,
) -> Result<Estimate> {
    if n == 0 {
        return domain("n must be >= 1");
    }
    if replicates == 0 {
        return domain("replicates must be >= 1");
    }
    if !(window.a < window.b) {
        return domain("terminal window needs a < b");
    }
    if walk.mean().abs() > 1e-9 {
        return domain(format!("walk mean {} is not 0; put the drift in the barrier", walk.mean()));
    }
    // S_n + n d cannot reach the window: the event is empty
    let (lo, hi) = (walk.base.inf_slope(), walk.base.sup_slope());
    let nf = n as f64;
    let (reach_lo, reach_hi) = (nf * (lo + walk.shift + barrier.drift), nf * (hi + walk.shift + barrier.drift));
    if reach_hi < window.a || reach_lo > window.b {
        return Ok(Estimate { p_hat: 0.0, std_err: 0.0, replicates, importance: false });
    }
    let deep = window_mass_normal(walk, n, barrier, window) < 1e-6;
    let proposal = if deep {
        // aim at the window centre, clipped inside the attainable slopes
        let mut target = (0.5 * (window.a + window.b) - nf * barrier.drift) / nf - walk.shift;
        let (smin, smax) = (walk.base.inf_slope(), walk.base.sup_slope());
        if smin.is_finite() {
            target = target.max(smin + 1e-3 * (1.0 + smin.abs()));
        }
        if smax.is_finite() {
            target = target.min(smax - 1e-3 * (1.0 + smax.abs()));
        }
        Some(solve_tilt(&walk.base, target)?.with_shift(walk.shift))
    } else {
        None
    };
    let law = proposal.as_ref().unwrap_or(walk);
    let sampler = law.sampler()?;
    let (dtheta, dlog) = match &proposal {
        Some(q) => (q.theta - walk.theta, q.log_normalizer - walk.log_normalizer),
        None => (0.0, 0.0),
    };
    let mode = path_mode(law, n, barrier);
    let shift = walk.shift;
    let chunks = replicates.div_ceil(CHUNK);
    let parts: Vec<Welford> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut w = Welford::new();
            let mut steps: Vec<f64> = Vec::with_capacity(n);
            for r in c * CHUNK..((c + 1) * CHUNK).min(replicates) {
                let mut rng = CounterRng::new(seed, r, 0, 0);
                steps.clear();
                let mut alive = true;
                let terminal = match &mode {
                    PathMode::Lattice { span, thresholds } => {
                        let mut s = 0i64;
                        for k in 1..=n {
                            let x = sampler.sample(&mut rng);
                            steps.push(x - shift);
                            s += (x / span).round() as i64;
                            if k < n && s < thresholds[k] {
                                alive = false;
                                break;
                            }
                        }
                        s as f64 * span
                    }
                    PathMode::Real => {
                        let mut s = 0.0;
                        for k in 1..=n {
                            let x = sampler.sample(&mut rng);
                            steps.push(x - shift);
                            s += x;
                            if k < n && !barrier.admits(s, k, n) {
                                alive = false;
                                break;
                            }
                        }
                        s
                    }
                };
                let hit = alive && window.contains(terminal + n as f64 * barrier.drift);
                let v = if !hit {
                    0.0
                } else if deep {
                    walk_weight(&steps, dtheta, dlog).exp()
                } else {
                    1.0
                };
                w.push(v);
            }
            w
        })
        .collect();
    let mut total = Welford::new();
    for p in &parts {
        total.merge(p);
    }
    Ok(Estimate { p_hat: total.mean, std_err: total.std_err(), replicates, importance: deep })
}

// ---------------------------------------------------------------------------
// Diagnostics

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub p_hat: f64,
    pub std_err: f64,
    /// `n^{3/2} p̂(n)`
    pub n32_p: f64,
    /// `p̂(n)/p̂(previous n)`
    pub ratio: Option<f64>,
    /// `n^{3/2} p̂ / ((b − a) y (y + a))`
    pub beta_star: Option<f64>,
}

fn scaling_rows(
    estimates: Vec<(usize, f64, f64)>,
    barrier: &BarrierSpec,
    window: &TerminalWindow,
) -> Vec<ScalingRow> {
    let mut rows: Vec<ScalingRow> = Vec::with_capacity(estimates.len());
    for (n, p, se) in estimates {
        let n32 = (n as f64).powf(1.5);
        let ratio = rows.last().map(|r| p / r.p_hat);
        let denom = (window.b - window.a) * barrier.y * (barrier.y + window.a);
        let beta_star = if denom > 0.0 { Some(n32 * p / denom) } else { None };
        rows.push(ScalingRow { n, p_hat: p, std_err: se, n32_p: n32 * p, ratio, beta_star });
    }
    rows
}

fn check_increasing(n_list: &[usize]) -> Result<()> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) || n_list[0] == 0 {
        return domain("n_list must be nonempty, positive and increasing");
    }
    Ok(())
}

/// `n^{3/2} p̂(n)` by Monte Carlo over an increasing list of horizons.
pub fn scaling_diagnostic(
    walk: &TiltedLaw,
    barrier: &BarrierSpec,
    window: &TerminalWindow,
    n_list: &[usize],
    replicates: u64,
    seed: u64,
) -> Result<Vec<ScalingRow>> {
    check_increasing(n_list)?;
    let mut est = Vec::new();
    for (i, &n) in n_list.iter().enumerate() {
        let e = mc_barrier_prob(walk, n, barrier, window, replicates, seed.wrapping_add(i as u64))?;
        est.push((n, e.p_hat, e.std_err));
    }
    Ok(scaling_rows(est, barrier, window))
}

/// Same table from the exact lattice DP (standard errors are zero).
pub fn scaling_diagnostic_dp(
    walk: &IncrementLaw,
    barrier: &BarrierSpec,
    window: &TerminalWindow,
    n_list: &[usize],
) -> Result<Vec<ScalingRow>> {
    check_increasing(n_list)?;
    let est: Result<Vec<_>> = n_list
        .iter()
        .map(|&n| dp_barrier_prob(walk, n, barrier, window).map(|p| (n, p, 0.0)))
        .collect();
    Ok(scaling_rows(est?, barrier, window))
}

/// Relative spread `(max − min)/mean` of `n^{3/2}p` over rows with `n ≥ n_min`.
pub fn relative_spread(rows: &[ScalingRow], n_min: usize) -> f64 {
    let v: Vec<f64> = rows.iter().filter(|r| r.n >= n_min).map(|r| r.n32_p).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    (hi - lo) / mean
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub n: usize,
    pub drift: f64,
    pub p_drift: f64,
    pub p_zero: f64,
    pub ratio: f64,
}

/// DP ratio of the drifted (`d = coef · log n / n`) to the undrifted event.
pub fn drift_ratio_table(
    walk: &IncrementLaw,
    barrier: &BarrierSpec,
    window: &TerminalWindow,
    n_list: &[usize],
    coef: f64,
) -> Result<Vec<DriftRow>> {
    check_increasing(n_list)?;
    n_list
        .iter()
        .map(|&n| {
            let d = coef * (n as f64).ln() / n as f64;
            let p0 = dp_barrier_prob(walk, n, &barrier.clone().with_drift(0.0), window)?;
            let pd = dp_barrier_prob(walk, n, &barrier.clone().with_drift(d), window)?;
            Ok(DriftRow { n, drift: d, p_drift: pd, p_zero: p0, ratio: pd / p0 })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub x: f64,
    pub mass: f64,
    pub predicted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub n: usize,
    pub p_cn_hat: f64,
    pub std_err: f64,
    pub hits: u64,
    pub profile: Vec<ProfileRow>,
    /// `sup_x √n |mass − predicted|`
    pub sup_distance: f64,
}

/// Exact `P(S_1, …, S_n > 0)` on a lattice walk.
pub fn positivity_probability_dp(walk: &IncrementLaw, n: usize) -> Result<f64> {
    let b = BarrierSpec::flat(0.0).strict(true);
    let full = TerminalWindow::open(f64::NEG_INFINITY, f64::INFINITY)?;
    // the last step is outside the barrier loop, so restrict the window too
    let (first, masses) = dp_terminal_masses(walk, n, &b)?;
    let span = lattice_of(walk)?.span;
    let _ = full;
    Ok(masses
        .iter()
        .enumerate()
        .filter(|(i, _)| (first + *i as i64) as f64 * span > 0.0)
        .map(|(_, m)| m)
        .sum())
}

/// Estimates `P(C_n)` and the conditional profile of `S_n/σ` on windows of
/// width `q`, against the Rayleigh profile `(x/n) e^{−x²/2n}`.
pub fn positivity_clt_diagnostic(walk: &TiltedLaw, n: usize, q: f64, replicates: u64, seed: u64) -> Result<PositivityReport> {
    if !(q > 0.0) {
        return domain("window width q must be > 0");
    }
    if n == 0 || replicates == 0 {
        return domain("n and replicates must be >= 1");
    }
    if walk.mean().abs() > 1e-9 {
        return domain("walk mean must be 0");
    }
    let sigma = walk.variance().sqrt();
    let sampler = walk.sampler()?;
    let chunks = replicates.div_ceil(CHUNK);
    let parts: Vec<(Welford, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut w = Welford::new();
            let mut ends = Vec::new();
            for r in c * CHUNK..((c + 1) * CHUNK).min(replicates) {
                let mut rng = CounterRng::new(seed, r, 0, 0);
                let mut s = 0.0;
                let mut ok = true;
                for _ in 0..n {
                    s += sampler.sample(&mut rng) / sigma;
                    if s <= 0.0 {
                        ok = false;
                        break;
                    }
                }
                w.push(if ok { 1.0 } else { 0.0 });
                if ok {
                    ends.push(s);
                }
            }
            (w, ends)
        })
        .collect();
    let mut total = Welford::new();
    let mut ends = Vec::new();
    for (w, e) in parts {
        total.merge(&w);
        ends.extend(e);
    }
    let hits = ends.len() as u64;
    if hits < 100 {
        return Err(BrwError::InsufficientSamples(format!("{hits} conditional hits, need 100")));
    }
    let nf = n as f64;
    let top = 4.0 * nf.sqrt();
    let bins = (top / q).ceil() as usize;
    let mut counts = vec![0u64; bins];
    for e in &ends {
        let b = (e / q).floor() as usize;
        if b < bins {
            counts[b] += 1;
        }
    }
    let mut profile = Vec::with_capacity(bins);
    let mut sup = 0.0f64;
    for (b, c) in counts.iter().enumerate() {
        let x = b as f64 * q;
        let predicted = (-x * x / (2.0 * nf)).exp() - (-(x + q) * (x + q) / (2.0 * nf)).exp();
        let mass = *c as f64 / hits as f64;
        sup = sup.max(nf.sqrt() * (mass - predicted).abs());
        profile.push(ProfileRow { x, mass, predicted });
    }
    Ok(PositivityReport { n, p_cn_hat: total.mean, std_err: total.std_err(), hits, profile, sup_distance: sup })
}

// ---------------------------------------------------------------------------
// Time reversal

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub lower: f64,
    pub mid: f64,
    pub upper: f64,
    pub std_errs: [f64; 3],
    pub holds: bool,
    pub exact: bool,
}

/// Law of `−X`.
pub fn negate(law: &IncrementLaw) -> Result<IncrementLaw> {
    match law {
        IncrementLaw::Gaussian { mu, sigma } => Ok(IncrementLaw::Gaussian { mu: -mu, sigma: *sigma }),
        IncrementLaw::Uniform { a, b } => Ok(IncrementLaw::Uniform { a: -b, b: -a }),
        IncrementLaw::Lattice(l) => {
            let mut probs = l.probs.clone();
            probs.reverse();
            Ok(IncrementLaw::Lattice(LatticePmf { span: l.span, min_index: -l.max_index(), probs }))
        }
        IncrementLaw::ShiftedExponential { .. } => {
            domain("the negated shifted exponential is not a shipped law")
        }
    }
}

fn reversed_barriers(barrier: &BarrierSpec, window: &TerminalWindow) -> (BarrierSpec, BarrierSpec) {
    let mk = |off: f64| BarrierSpec {
        y: barrier.y + off,
        curve: barrier.curve.clone(),
        strict: barrier.strict,
        drift: -barrier.drift,
    };
    (mk(window.a), mk(window.b))
}

/// The reversed-walk bounds around the forward barrier probability.
pub enum SandwichMethod {
    Dp,
    Mc { replicates: u64, seed: u64 },
}

pub fn reversal_sandwich_check(
    walk: &TiltedLaw,
    n: usize,
    barrier: &BarrierSpec,
    window: &TerminalWindow,
    method: SandwichMethod,
) -> Result<SandwichReport> {
    let (lo_b, up_b) = reversed_barriers(barrier, window);
    let rwin = window.reflected();
    let rev = TiltedLaw {
        base: negate(&walk.base)?,
        theta: -walk.theta,
        log_normalizer: walk.log_normalizer,
        shift: -walk.shift,
    };
    match method {
        SandwichMethod::Dp => {
            let fwd = walk
                .lattice_law()
                .ok_or_else(|| BrwError::Domain("DP sandwich needs a lattice walk".into()))?;
            let bwd = rev.lattice_law().unwrap();
            let lower = dp_barrier_prob(&bwd, n, &lo_b, &rwin)?;
            let mid = dp_barrier_prob(&fwd, n, barrier, window)?;
            let upper = dp_barrier_prob(&bwd, n, &up_b, &rwin)?;
            let tol = 1e-12;
            Ok(SandwichReport {
                lower,
                mid,
                upper,
                std_errs: [0.0; 3],
                holds: lower <= mid + tol && mid <= upper + tol,
                exact: true,
            })
        }
        SandwichMethod::Mc { replicates, seed } => {
            let l = mc_barrier_prob(&rev, n, &lo_b, &rwin, replicates, seed)?;
            let m = mc_barrier_prob(walk, n, barrier, window, replicates, seed.wrapping_add(1))?;
            let u = mc_barrier_prob(&rev, n, &up_b, &rwin, replicates, seed.wrapping_add(2))?;
            let j1 = (l.std_err.powi(2) + m.std_err.powi(2)).sqrt();
            let j2 = (m.std_err.powi(2) + u.std_err.powi(2)).sqrt();
            Ok(SandwichReport {
                lower: l.p_hat,
                mid: m.p_hat,
                upper: u.p_hat,
                std_errs: [l.std_err, m.std_err, u.std_err],
                holds: l.p_hat <= m.p_hat + 3.0 * j1 && m.p_hat <= u.p_hat + 3.0 * j2,
                exact: false,
            })
        }
    }
}
