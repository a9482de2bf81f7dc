//! Exact and gridded laws of the maximum `η*_n`.
//!
//! With `t_n(x) = P(η*_n > x)` the first-generation decomposition gives
//! `t_{n+1}(x) = 1 − f(1 − Σ_j p_j t_n(x − x_j))` where `f` is the offspring
//! generating function and `p_j` the increment pmf. Both the CDF and the
//! survival function are propagated so each tail keeps full relative
//! precision.
//!
//! The same backward recursion with a moving threshold gives the probability
//! that a particle at `(k, x)` has a descendant crossing a curve; that drives
//! the `Reach` pruning rule and the exact value of `P(G_{n,β})`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, BrwError, Result};
use crate::model::{IncrementLaw, LatticePmf, ModelConstants, OffspringLaw};
use crate::rng::CounterRng;
use crate::stats::kolmogorov_distance;

/// Largest lattice grid accepted by [`exact_max_law`].
pub const GRID_LIMIT: u64 = 1_000_000;
/// Mass allowed to leave a continuous grid before failing.
pub const LEAK_LIMIT: f64 = 1e-9;
const FUZZ: f64 = 1e-9;

/// Index of the largest lattice point `≤ x`.
#[inline]
pub fn floor_index(x: f64, span: f64) -> i64 {
    (x / span + FUZZ).floor() as i64
}

/// Index of the smallest lattice point `≥ x`.
#[inline]
pub fn ceil_index(x: f64, span: f64) -> i64 {
    (x / span - FUZZ).ceil() as i64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Exactness {
    LatticeExact,
    GridApprox { step: f64 },
}

/// Law of `η*_n` on the grid `(first + i) · step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxCdf {
    pub n: usize,
    pub step: f64,
    pub first: i64,
    /// `P(η*_n ≤ x_i)`
    pub cdf: Vec<f64>,
    /// `P(η*_n > x_i)`
    pub sf: Vec<f64>,
    pub exactness: Exactness,
    /// Bound on the sup-norm error of `cdf` (0 for lattice laws).
    pub error_budget: f64,
    /// Mass dropped by kernel truncation and grid trimming.
    pub leaked: f64,
}

impl MaxCdf {
    pub fn point_mass(step: f64, exactness: Exactness) -> Self {
        Self { n: 0, step, first: 0, cdf: vec![1.0], sf: vec![0.0], exactness, error_budget: 0.0, leaked: 0.0 }
    }

    pub fn last(&self) -> i64 {
        self.first + self.cdf.len() as i64 - 1
    }

    pub fn position(&self, i: usize) -> f64 {
        (self.first + i as i64) as f64 * self.step
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.cdf.len()).map(|i| self.position(i)).collect()
    }

    pub fn is_lattice(&self) -> bool {
        self.exactness == Exactness::LatticeExact
    }

    #[inline]
    pub fn cdf_index(&self, idx: i64) -> f64 {
        if idx < self.first {
            0.0
        } else if idx > self.last() {
            1.0
        } else {
            self.cdf[(idx - self.first) as usize]
        }
    }

    #[inline]
    pub fn sf_index(&self, idx: i64) -> f64 {
        if idx < self.first {
            1.0
        } else if idx > self.last() {
            0.0
        } else {
            self.sf[(idx - self.first) as usize]
        }
    }

    /// Right-continuous step interpolant of `P(η*_n ≤ x)`.
    pub fn cdf_step(&self, x: f64) -> f64 {
        self.cdf_index(floor_index(x, self.step))
    }

    /// `P(η*_n > x)` from the step interpolant.
    pub fn sf_step(&self, x: f64) -> f64 {
        self.sf_index(floor_index(x, self.step))
    }

    /// Linear interpolant of the CDF between grid points.
    pub fn cdf_linear(&self, x: f64) -> f64 {
        let u = x / self.step;
        let i = u.floor();
        let w = u - i;
        let i = i as i64;
        (1.0 - w) * self.cdf_index(i) + w * self.cdf_index(i + 1)
    }

    pub fn sf_linear(&self, x: f64) -> f64 {
        let u = x / self.step;
        let i = u.floor();
        let w = u - i;
        let i = i as i64;
        (1.0 - w) * self.sf_index(i) + w * self.sf_index(i + 1)
    }

    /// Point masses `(x, P(η*_n = x))`.
    pub fn pmf(&self) -> Vec<(f64, f64)> {
        (0..self.cdf.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { self.sf[i - 1] };
                // differences of the smaller tail keep precision
                let m = if self.cdf[i] < 0.5 {
                    self.cdf[i] - if i == 0 { 0.0 } else { self.cdf[i - 1] }
                } else {
                    prev - self.sf[i]
                };
                (self.position(i), m)
            })
            .collect()
    }

    /// Step CDF as `(x, F(x))` jump points, shifted by `−center`.
    pub fn centered_steps(&self, center: f64) -> Vec<(f64, f64)> {
        (0..self.cdf.len()).map(|i| (self.position(i) - center, self.cdf[i])).collect()
    }

    pub fn sampler(&self) -> MaxLawSampler {
        MaxLawSampler { first: self.first, step: self.step, sf: self.sf.clone() }
    }
}

fn lattice_of(inc: &IncrementLaw) -> Result<&LatticePmf> {
    inc.as_lattice()
        .ok_or_else(|| BrwError::Domain("exact max law needs a lattice increment law".into()))
}

fn check_grid(len: u64) -> Result<()> {
    if len > GRID_LIMIT {
        return Err(BrwError::Capacity(format!("max-law grid of {len} points exceeds {GRID_LIMIT}")));
    }
    Ok(())
}

/// Keeps each tail from the recursion that resolves it. Run alone, the CDF
/// recursion rounds the leading edge (`P(η* > x) < 1e-16`) to exactly 1 and
/// the front falls behind after a few hundred generations.
fn reconcile(cdf: &mut [f64], sf: &mut [f64]) {
    for (c, s) in cdf.iter_mut().zip(sf.iter_mut()) {
        if *s <= 0.5 {
            *c = 1.0 - *s;
        } else {
            *s = 1.0 - *c;
        }
    }
}

/// One generation of the recursion.
pub fn recursion_step(u: &MaxCdf, off: &OffspringLaw, inc: &IncrementLaw) -> Result<MaxCdf> {
    match u.exactness {
        Exactness::LatticeExact => lattice_step(u, off, lattice_of(inc)?),
        Exactness::GridApprox { step } => {
            let kernel = GridKernel::new(inc, step)?;
            grid_step(u, off, &kernel, GridOptions::default().trim)
        }
    }
}

fn lattice_step(u: &MaxCdf, off: &OffspringLaw, l: &LatticePmf) -> Result<MaxCdf> {
    if (u.step - l.span).abs() > 1e-12 * l.span {
        return domain(format!("grid step {} does not match lattice span {}", u.step, l.span));
    }
    let (lo, hi) = (l.min_index, l.max_index());
    let first = u.first + lo;
    let last = u.last() + hi;
    check_grid((last - first + 1) as u64)?;
    let pts: Vec<(i64, f64)> = l.points().filter(|p| p.1 > 0.0).collect();
    let len = (last - first + 1) as usize;
    let mut cdf = Vec::with_capacity(len);
    let mut sf = Vec::with_capacity(len);
    for x in first..=last {
        let (mut sc, mut st) = (0.0, 0.0);
        for &(j, p) in &pts {
            sc += p * u.cdf_index(x - j);
            st += p * u.sf_index(x - j);
        }
        cdf.push(off.pgf(sc.min(1.0)));
        sf.push(off.pgf_complement(st.min(1.0)));
    }
    reconcile(&mut cdf, &mut sf);
    Ok(MaxCdf {
        n: u.n + 1,
        step: u.step,
        first,
        cdf,
        sf,
        exactness: Exactness::LatticeExact,
        error_budget: 0.0,
        leaked: 0.0,
    })
}

/// Exact law of `η*_n` for a lattice increment law.
pub fn exact_max_law(off: &OffspringLaw, inc: &IncrementLaw, n: usize) -> Result<MaxCdf> {
    let l = lattice_of(inc)?;
    let width = (l.max_index() - l.min_index) as u64;
    check_grid((n as u64).saturating_mul(width) + 1)?;
    let mut u = MaxCdf::point_mass(l.span, Exactness::LatticeExact);
    for _ in 0..n {
        u = lattice_step(&u, off, l)?;
    }
    Ok(u)
}

/// Sup distance between the laws of `η*_n − m_n` for two horizons.
///
/// On a lattice the centered grids `A_n` move with `n`, so step CDFs never
/// converge; both laws are compared through their linear interpolants, which
/// is exact at the union of breakpoints.
pub fn centered_kolmogorov(a: &MaxCdf, b: &MaxCdf, c: &ModelConstants) -> Result<f64> {
    let ca = c.centering(a.n as i64)?;
    let cb = c.centering(b.n as i64)?;
    let mut d = 0.0f64;
    let mut visit = |p: f64| {
        d = d.max((a.cdf_linear(p + ca) - b.cdf_linear(p + cb)).abs());
    };
    for i in a.first - 1..=a.last() + 1 {
        visit(i as f64 * a.step - ca);
    }
    for i in b.first - 1..=b.last() + 1 {
        visit(i as f64 * b.step - cb);
    }
    Ok(d)
}

/// Sup distance between the step CDFs of `η*_n − m_n` for two horizons.
pub fn centered_step_kolmogorov(a: &MaxCdf, b: &MaxCdf, c: &ModelConstants) -> Result<f64> {
    let ca = c.centering(a.n as i64)?;
    let cb = c.centering(b.n as i64)?;
    Ok(kolmogorov_distance(&a.centered_steps(ca), &b.centered_steps(cb)))
}

// ---------------------------------------------------------------------------
// Continuous laws on a grid

#[derive(Clone, Copy, Debug)]
pub struct GridOptions {
    pub step: f64,
    /// Edge cells with CDF (left) or survival (right) below this are dropped.
    pub trim: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { step: 0.01, trim: 1e-15 }
    }
}

/// Step keeping the per-generation convolution error `h · sup w` below `target`.
pub fn grid_step_for(inc: &IncrementLaw, target: f64) -> Option<f64> {
    inc.density_sup().map(|d| target / d)
}

/// Increment law rounded to the nearest grid point.
struct GridKernel {
    first: i64,
    probs: Vec<f64>,
    tail: f64,
    density_sup: f64,
}

impl GridKernel {
    fn new(inc: &IncrementLaw, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return domain("grid step must be > 0");
        }
        let density_sup = inc
            .density_sup()
            .ok_or_else(|| BrwError::Domain("grid max law is for continuous laws".into()))?;
        let (a, b) = match inc {
            IncrementLaw::Gaussian { mu, sigma } => (mu - 8.0 * sigma, mu + 8.0 * sigma),
            IncrementLaw::ShiftedExponential { shift, rate } => (*shift, shift + 32.0 / rate),
            IncrementLaw::Uniform { a, b } => (*a, *b),
            IncrementLaw::Lattice(_) => unreachable!(),
        };
        let tail = inc.cdf(a) + (1.0 - inc.cdf(b));
        let first = (a / h).round() as i64;
        let last = (b / h).round() as i64;
        check_grid((last - first + 1) as u64)?;
        let mut probs = Vec::with_capacity((last - first + 1) as usize);
        for j in first..=last {
            let lo = if j == first { f64::NEG_INFINITY } else { (j as f64 - 0.5) * h };
            let hi = if j == last { f64::INFINITY } else { (j as f64 + 0.5) * h };
            let p = if hi.is_infinite() { 1.0 - inc.cdf(lo) } else { inc.cdf(hi) - if lo.is_infinite() { 0.0 } else { inc.cdf(lo) } };
            probs.push(p.max(0.0));
        }
        Ok(Self { first, probs, tail, density_sup })
    }
}

fn grid_step(u: &MaxCdf, off: &OffspringLaw, k: &GridKernel, trim: f64) -> Result<MaxCdf> {
    let h = match u.exactness {
        Exactness::GridApprox { step } => step,
        _ => unreachable!(),
    };
    let klast = k.first + k.probs.len() as i64 - 1;
    let first = u.first + k.first;
    let last = u.last() + klast;
    check_grid((last - first + 1) as u64)?;
    let mut cdf = Vec::with_capacity((last - first + 1) as usize);
    let mut sf = Vec::with_capacity(cdf.capacity());
    for x in first..=last {
        let (mut sc, mut st) = (0.0, 0.0);
        for (i, p) in k.probs.iter().enumerate() {
            let j = k.first + i as i64;
            sc += p * u.cdf_index(x - j);
            st += p * u.sf_index(x - j);
        }
        cdf.push(off.pgf(sc.min(1.0)));
        sf.push(off.pgf_complement(st.min(1.0)));
    }
    reconcile(&mut cdf, &mut sf);
    // trim negligible edges
    let mut leaked = u.leaked + k.tail;
    let mut a = 0usize;
    while a + 1 < cdf.len() && cdf[a] < trim {
        a += 1;
    }
    if a > 0 {
        leaked += cdf[a - 1];
    }
    let mut b = cdf.len();
    while b > a + 1 && sf[b - 2] < trim {
        b -= 1;
    }
    if b < cdf.len() {
        leaked += sf[b - 1];
    }
    if leaked > LEAK_LIMIT {
        return Err(BrwError::Truncation { leaked, limit: LEAK_LIMIT });
    }
    let rho = off.rho();
    let budget = rho * (u.error_budget + h * k.density_sup + k.tail) + (leaked - u.leaked - k.tail);
    Ok(MaxCdf {
        n: u.n + 1,
        step: h,
        first: first + a as i64,
        cdf: cdf[a..b].to_vec(),
        sf: sf[a..b].to_vec(),
        exactness: u.exactness,
        error_budget: budget,
        leaked,
    })
}

/// Approximate law of `η*_n` for a continuous increment law.
///
/// Increments are rounded to the grid, so the result is the exact law of a
/// rounded process; `error_budget` bounds the sup distance to the true CDF via
/// `e_{k+1} = ρ (e_k + h · sup w + tail)`.
pub fn grid_max_law(off: &OffspringLaw, inc: &IncrementLaw, n: usize, opts: GridOptions) -> Result<MaxCdf> {
    if inc.as_lattice().is_some() {
        return exact_max_law(off, inc, n);
    }
    let kernel = GridKernel::new(inc, opts.step)?;
    let mut u = MaxCdf::point_mass(opts.step, Exactness::GridApprox { step: opts.step });
    for _ in 0..n {
        u = grid_step(&u, off, &kernel, opts.trim)?;
    }
    Ok(u)
}

// ---------------------------------------------------------------------------
// Centered tails

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub z: f64,
    /// `z` after snapping to the grid `A_n = span·ℤ − m_n` (lattice laws).
    pub z_used: f64,
    pub prob: f64,
}

/// `P(η*_n > m_n + z)` for each `z`.
pub fn centered_tail(u: &MaxCdf, c: &ModelConstants, z_list: &[f64]) -> Result<Vec<TailPoint>> {
    if u.n == 0 {
        return Err(BrwError::Range("centered tail needs n >= 1".into()));
    }
    let m = c.centering(u.n as i64)?;
    z_list
        .iter()
        .map(|&z| {
            if !z.is_finite() {
                return Err(BrwError::Range(format!("z = {z} is not finite")));
            }
            let x = m + z;
            Ok(if u.is_lattice() {
                let idx = floor_index(x, u.step);
                TailPoint { z, z_used: idx as f64 * u.step - m, prob: u.sf_index(idx) }
            } else {
                TailPoint { z, z_used: z, prob: u.sf_linear(x) }
            })
        })
        .collect()
}

/// Inverse-survival sampler for `η*_n`.
#[derive(Clone, Debug)]
pub struct MaxLawSampler {
    first: i64,
    step: f64,
    sf: Vec<f64>,
}

impl MaxLawSampler {
    /// `min{x : P(η* > x) < v}` for `v ∈ (0, 1]`.
    #[inline]
    pub fn quantile(&self, v: f64) -> f64 {
        let i = self.sf.partition_point(|s| *s >= v);
        (self.first + i as i64) as f64 * self.step
    }

    #[inline]
    pub fn sample(&self, rng: &mut CounterRng) -> f64 {
        self.quantile(rng.unit_open0())
    }
}

// ---------------------------------------------------------------------------
// Query curves

/// `(log m)_+` with `log 0 = −∞`.
#[inline]
pub fn log_plus(m: usize) -> f64 {
    if m <= 1 {
        0.0
    } else {
        (m as f64).ln()
    }
}

/// `ψ_{n,β}(k) + k m_n/n` for `k = 0..=n`: the `G_{n,β}` curve.
pub fn psi_curve(c: &ModelConstants, n: usize, beta: f64) -> Result<Vec<f64>> {
    let m = c.centering(n as i64)?;
    Ok((0..=n)
        .map(|k| k as f64 * m / n as f64 + beta + 4.0 / c.theta_bar * log_plus(k.min(n - k)))
        .collect())
}

/// `j m_n/n + z` for `j = 0..=n−ℓ`: the upper line of the `E` event.
pub fn e_line(c: &ModelConstants, n: usize, ell: usize, z: f64) -> Result<Vec<f64>> {
    let m = c.centering(n as i64)?;
    Ok((0..=n - ell).map(|j| j as f64 * m / n as f64 + z).collect())
}

/// The raised curve of the `F` and `G_n(z)` events.
pub fn f_curve(c: &ModelConstants, n: usize, ell: usize, z: f64) -> Result<Vec<f64>> {
    let m = c.centering(n as i64)?;
    let top = n - ell;
    Ok((0..=top)
        .map(|j| {
            j as f64 * m / n as f64 + z + 0.5 * (ell as f64).ln() + 4.0 / c.theta_bar * log_plus(j.min(top - j))
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Reach probabilities

/// `r_k(x)`: probability that a particle at generation `k`, lattice index `x`,
/// has a descendant (itself included) at some generation `j ≥ k` with index
/// `≥ c_j`. Stored on `[lo_k, up_k)`; `r = 0` below and `r = 1` from `up_k`.
#[derive(Clone, Debug)]
pub struct ReachTable {
    pub n: usize,
    pub span: f64,
    lo: Vec<i64>,
    up: Vec<i64>,
    rows: Vec<Vec<f64>>,
}

const NEVER: i64 = i64::MAX;

impl ReachTable {
    /// `thresholds[k]` is `c_k` (`None` for no constraint at `k`).
    pub fn new(off: &OffspringLaw, inc: &IncrementLaw, thresholds: &[Option<i64>]) -> Result<Self> {
        let l = lattice_of(inc)?;
        if thresholds.is_empty() {
            return domain("reach table needs at least generation 0");
        }
        let n = thresholds.len() - 1;
        let (slo, shi) = (l.min_index, l.max_index());
        let pts: Vec<(i64, f64)> = l.points().filter(|p| p.1 > 0.0).collect();
        let mut lo = vec![NEVER; n + 1];
        let mut up = vec![NEVER; n + 1];
        for k in (0..=n).rev() {
            let (mut a, mut b) = (NEVER, NEVER);
            for (j, cj) in thresholds.iter().enumerate().skip(k) {
                if let Some(cj) = cj {
                    let d = (j - k) as i64;
                    a = a.min(cj - d * shi);
                    b = b.min(cj - d * slo);
                }
            }
            lo[k] = a;
            up[k] = b.max(a);
        }
        let total: u64 = (0..=n).map(|k| if lo[k] == NEVER { 0 } else { (up[k] - lo[k]) as u64 }).sum();
        check_grid(total)?;
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
        for k in (0..n).rev() {
            if lo[k] == NEVER {
                continue;
            }
            let next = |x: i64| -> f64 {
                if x < lo[k + 1] {
                    0.0
                } else if x >= up[k + 1] {
                    1.0
                } else {
                    rows[k + 1][(x - lo[k + 1]) as usize]
                }
            };
            let row: Vec<f64> = (lo[k]..up[k])
                .map(|x| {
                    let s: f64 = pts.iter().map(|&(j, p)| p * next(x + j)).sum();
                    off.pgf_complement(s.min(1.0))
                })
                .collect();
            rows[k] = row;
        }
        Ok(Self { n, span: l.span, lo, up, rows })
    }

    #[inline]
    pub fn value(&self, k: usize, x: i64) -> f64 {
        if x < self.lo[k] {
            0.0
        } else if x >= self.up[k] {
            1.0
        } else {
            self.rows[k][(x - self.lo[k]) as usize]
        }
    }

    /// Per generation, the smallest index with `r_k ≥ eps` (`i64::MAX` when
    /// nothing can reach).
    pub fn cutoffs(&self, eps: f64) -> Vec<i64> {
        (0..=self.n)
            .map(|k| {
                if self.lo[k] == NEVER {
                    return NEVER;
                }
                match self.rows[k].iter().position(|r| *r >= eps) {
                    Some(i) => self.lo[k] + i as i64,
                    None => self.up[k],
                }
            })
            .collect()
    }
}

/// Lattice thresholds `c_k = ⌈ψ_{n,β}(k) + k m_n/n⌉` for the `G_{n,β}` event.
pub fn gbeta_thresholds(c: &ModelConstants, n: usize, beta: f64, span: f64) -> Result<Vec<Option<i64>>> {
    Ok(psi_curve(c, n, beta)?.iter().map(|t| Some(ceil_index(*t, span))).collect())
}

/// Exact `P(G_{n,β})` on a lattice model.
pub fn exact_gbeta_probability(off: &OffspringLaw, inc: &IncrementLaw, c: &ModelConstants, n: usize, beta: f64) -> Result<f64> {
    let span = lattice_of(inc)?.span;
    let t = ReachTable::new(off, inc, &gbeta_thresholds(c, n, beta, span)?)?;
    Ok(t.value(0, 0))
}

// ---------------------------------------------------------------------------
// Exact first and second moments of Λ and Γ

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaMoments {
    pub n: usize,
    pub ell: usize,
    pub z: f64,
    pub mean_lambda: f64,
    pub mean_gamma: f64,
    /// `E Λ²`
    pub second_lambda: f64,
    /// `E[#ordered pairs splitting at j = n−ℓ−s]`, indexed by `s − 1`.
    pub pairs_by_split: Vec<f64>,
    /// `P(η*_n > m_n + z)`
    pub p_exceed: f64,
    /// `ν_{n,z}` as `(y, mass)` with `y = η̄(n−ℓ) − z`.
    pub nu: Vec<(f64, f64)>,
    /// `γ_ℓ(−y)` on the same `y` points.
    pub gamma_ell: Vec<(f64, f64)>,
    /// `E Λ` restricted to `y ∈ L_ℓ = (−ℓ, −ℓ^{2/5}]`.
    pub mean_lambda_window: f64,
}

impl LambdaMoments {
    pub fn gamma_over_lambda(&self) -> f64 {
        self.mean_gamma / self.mean_lambda
    }

    pub fn second_over_first(&self) -> f64 {
        self.second_lambda / self.mean_lambda
    }

    pub fn exceed_over_lambda(&self) -> f64 {
        self.p_exceed / self.mean_lambda
    }
}

/// Forward sub-probabilities of a walk staying `≤ caps[j]` (lattice indices):
/// `f[j]` holds masses on `[base_j, base_j + len)`.
fn capped_forward(l: &LatticePmf, caps: &[i64]) -> Vec<(i64, Vec<f64>)> {
    let pts: Vec<(i64, f64)> = l.points().filter(|p| p.1 > 0.0).collect();
    let mut out: Vec<(i64, Vec<f64>)> = Vec::with_capacity(caps.len());
    out.push(if caps[0] >= 0 { (0, vec![1.0]) } else { (0, vec![]) });
    for j in 1..caps.len() {
        let (pb, prev) = &out[j - 1];
        let base = pb + l.min_index;
        let top = (pb + prev.len() as i64 - 1 + l.max_index()).min(caps[j]);
        if prev.is_empty() || top < base {
            out.push((base, vec![]));
            continue;
        }
        let mut cur = vec![0.0; (top - base + 1) as usize];
        for (i, m) in prev.iter().enumerate() {
            let x = pb + i as i64;
            for &(s, p) in &pts {
                let y = x + s;
                if y <= top {
                    cur[(y - base) as usize] += m * p;
                }
            }
        }
        out.push((base, cur));
    }
    out
}

/// Exact `E Λ_{n,z}`, `E Γ_{n,z}`, `E Λ²_{n,z}` and related quantities.
pub fn exact_lambda_moments(
    off: &OffspringLaw,
    inc: &IncrementLaw,
    c: &ModelConstants,
    n: usize,
    ell: usize,
    z: f64,
) -> Result<LambdaMoments> {
    let l = lattice_of(inc)?;
    if ell == 0 || ell > n {
        return domain(format!("need 1 <= ell <= n, got ell = {ell}, n = {n}"));
    }
    let span = l.span;
    let top = n - ell;
    let m = c.centering(n as i64)?;
    let rho = off.rho();
    let law_ell = exact_max_law(off, inc, ell)?;
    let law_n = exact_max_law(off, inc, n)?;
    let target = floor_index(m + z, span);
    let gamma_at = |x: i64| law_ell.sf_index(target - x);

    let caps_e: Vec<i64> = e_line(c, n, ell, z)?.iter().map(|t| floor_index(*t, span)).collect();
    let caps_f: Vec<i64> = f_curve(c, n, ell, z)?.iter().map(|t| floor_index(*t, span)).collect();
    let fe = capped_forward(l, &caps_e);
    let ff = capped_forward(l, &caps_f);
    let weight = rho.powi(top as i32);
    let terminal = |f: &(i64, Vec<f64>)| -> f64 {
        f.1.iter().enumerate().map(|(i, p)| p * gamma_at(f.0 + i as i64)).sum::<f64>()
    };
    let mean_lambda = weight * terminal(&fe[top]);
    let mean_gamma = weight * terminal(&ff[top]);

    // backward: g_j(x) = P(path from (j, x) stays under the line and the subtree exceeds)
    let pts: Vec<(i64, f64)> = l.points().filter(|p| p.1 > 0.0).collect();
    let mut g: Vec<(i64, Vec<f64>)> = vec![(0, vec![]); top + 1];
    let (tb, tv) = &fe[top];
    g[top] = (*tb, tv.iter().enumerate().map(|(i, _)| gamma_at(tb + i as i64)).collect());
    for j in (0..top).rev() {
        let (base, f) = &fe[j];
        let (nb, nv) = g[j + 1].clone();
        let vals: Vec<f64> = (0..f.len())
            .map(|i| {
                let x = base + i as i64;
                pts.iter()
                    .map(|&(s, p)| {
                        let y = x + s;
                        if y < nb || y >= nb + nv.len() as i64 {
                            0.0
                        } else {
                            p * nv[(y - nb) as usize]
                        }
                    })
                    .sum()
            })
            .collect();
        g[j] = (*base, vals);
    }
    let kstar = off.k_star();
    let mut pairs_by_split = vec![0.0; top];
    for j in 0..top {
        let (base, f) = &fe[j];
        let (nb, nv) = &g[j + 1];
        let mut acc = 0.0;
        for (i, p) in f.iter().enumerate() {
            let x = base + i as i64;
            let child: f64 = pts
                .iter()
                .map(|&(s, q)| {
                    let y = x + s;
                    if y < *nb || y >= nb + nv.len() as i64 {
                        0.0
                    } else {
                        q * nv[(y - nb) as usize]
                    }
                })
                .sum();
            acc += p * child * child;
        }
        let count = rho.powi(j as i32) * kstar * rho.powi(2 * (top - j - 1) as i32);
        pairs_by_split[top - j - 1] = count * acc;
    }
    let second_lambda = mean_lambda + pairs_by_split.iter().sum::<f64>();

    let shift = top as f64 * m / n as f64 + z;
    let (base, f) = &fe[top];
    let nu: Vec<(f64, f64)> = f.iter().enumerate().map(|(i, p)| ((base + i as i64) as f64 * span - shift, *p)).collect();
    let gamma_ell: Vec<(f64, f64)> = f.iter().enumerate().map(|(i, _)| (nu[i].0, gamma_at(base + i as i64))).collect();
    let (wl, wh) = (-(ell as f64), -(ell as f64).powf(0.4));
    let mean_lambda_window = weight
        * nu.iter()
            .zip(&gamma_ell)
            .filter(|((y, _), _)| *y > wl && *y <= wh)
            .map(|((_, p), (_, g))| p * g)
            .sum::<f64>();
    let p_exceed = law_n.sf_index(target);
    Ok(LambdaMoments {
        n,
        ell,
        z,
        mean_lambda,
        mean_gamma,
        second_lambda,
        pairs_by_split,
        p_exceed,
        nu,
        gamma_ell,
        mean_lambda_window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::calibrate;

    fn pm() -> IncrementLaw {
        IncrementLaw::plus_minus_one()
    }

    /// `P(η*_n ≤ x)` for binary offspring by enumerating the first `n−1`
    /// generations and counting the last generation's choices per parent.
    fn enumerate_binary(steps: &[(i64, u64)], n: usize, x: i64) -> f64 {
        // steps: (value, weight); total weight per step is `w`
        let w: u64 = steps.iter().map(|s| s.1).sum();
        fn rec(gen: usize, n: usize, pos: Vec<i64>, steps: &[(i64, u64)], x: i64, acc: &mut u128, mult: u128) {
            if gen + 1 == n {
                // every child of every particle must land at or below x
                let mut prod: u128 = mult;
                for p in &pos {
                    let ok: u64 = steps.iter().filter(|s| p + s.0 <= x).map(|s| s.1).sum();
                    prod *= (ok as u128) * (ok as u128);
                }
                *acc += prod;
                return;
            }
            let kids = pos.len() * 2;
            let mut idx = vec![0usize; kids];
            loop {
                let mut next = Vec::with_capacity(kids);
                let mut m = mult;
                for (c, i) in idx.iter().enumerate() {
                    next.push(pos[c / 2] + steps[*i].0);
                    m *= steps[*i].1 as u128;
                }
                rec(gen + 1, n, next, steps, x, acc, m);
                let mut c = 0;
                loop {
                    if c == kids {
                        return;
                    }
                    idx[c] += 1;
                    if idx[c] < steps.len() {
                        break;
                    }
                    idx[c] = 0;
                    c += 1;
                }
            }
        }
        let mut acc = 0u128;
        rec(0, n, vec![0], steps, x, &mut acc, 1);
        let total_steps = (1u32 << (n + 1)) - 2;
        acc as f64 / (w as f64).powi(total_steps as i32)
    }

    #[test]
    fn one_and_two_steps() {
        let b = OffspringLaw::binary();
        let u1 = exact_max_law(&b, &pm(), 1).unwrap();
        assert_eq!(u1.cdf_index(-1), 0.25);
        assert_eq!(u1.cdf_index(0), 0.25);
        assert_eq!(u1.cdf_index(1), 1.0);
        assert_eq!(u1.sf_index(-1), 0.75);
        let u2 = exact_max_law(&b, &pm(), 2).unwrap();
        assert!((u2.cdf_index(0) - 25.0 / 64.0).abs() < 1e-15);
        assert!((u2.cdf_step(0.5) - 25.0 / 64.0).abs() < 1e-15);
        let u0 = exact_max_law(&b, &pm(), 0).unwrap();
        assert_eq!(u0.cdf, vec![1.0]);
        assert_eq!(u0.first, 0);
        let total: f64 = u2.pmf().iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn enumeration_agrees() {
        let b = OffspringLaw::binary();
        let laws: Vec<(IncrementLaw, Vec<(i64, u64)>)> = vec![
            (pm(), vec![(-1, 1), (1, 1)]),
            (IncrementLaw::lazy_unit(), vec![(-1, 1), (0, 1), (1, 1)]),
            (IncrementLaw::lattice(1.0, &[(-1, 0.25), (2, 0.75)]).unwrap(), vec![(-1, 1), (2, 3)]),
        ];
        for (law, steps) in laws {
            let nmax = if steps.len() == 3 { 3 } else { 4 };
            for n in 1..=nmax {
                let u = exact_max_law(&b, &law, n).unwrap();
                for x in u.first - 1..=u.last() + 1 {
                    let e = enumerate_binary(&steps, n, x);
                    assert!((u.cdf_index(x) - e).abs() < 1e-12, "n={n} x={x}: {} vs {e}", u.cdf_index(x));
                    assert!((u.sf_index(x) - (1.0 - e)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_child_is_walk_convolution() {
        let one = OffspringLaw::single_child();
        let u = exact_max_law(&one, &pm(), 6).unwrap();
        // P(S_6 ≤ 0) = P(#up ≤ 3) = 42/64
        assert!((u.cdf_index(0) - 42.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn composition_is_bit_identical() {
        let b = OffspringLaw::binary();
        let law = IncrementLaw::lazy_unit();
        let mut u = MaxCdf::point_mass(1.0, Exactness::LatticeExact);
        for _ in 0..20 {
            u = recursion_step(&u, &b, &law).unwrap();
        }
        assert_eq!(u, exact_max_law(&b, &law, 20).unwrap());
    }

    #[test]
    fn monotone_and_complementary() {
        let b = OffspringLaw::new(&[(1, 0.3), (2, 0.5), (3, 0.2)]).unwrap();
        let law = IncrementLaw::lazy_unit();
        let u = exact_max_law(&b, &law, 40).unwrap();
        for w in u.cdf.windows(2) {
            assert!(w[1] >= w[0]);
        }
        for (c, s) in u.cdf.iter().zip(&u.sf) {
            assert!((c + s - 1.0).abs() < 1e-12);
        }
        assert_eq!(*u.cdf.last().unwrap(), 1.0);
        assert_eq!(*u.sf.last().unwrap(), 0.0);
    }

    #[test]
    fn capacity_guard() {
        let wide = IncrementLaw::lattice(1.0, &[(-600, 0.5), (600, 0.5)]).unwrap();
        let e = exact_max_law(&OffspringLaw::binary(), &wide, 1000);
        assert!(matches!(e, Err(BrwError::Capacity(_))));
        assert!(matches!(exact_max_law(&OffspringLaw::binary(), &IncrementLaw::standard_normal(), 3), Err(BrwError::Domain(_))));
    }

    #[test]
    fn centered_tail_snapping_and_edges() {
        let b = OffspringLaw::binary();
        let law = IncrementLaw::lazy_unit();
        let c = calibrate(&b, &law).unwrap();
        let u = exact_max_law(&b, &law, 64).unwrap();
        let m = c.centering(64).unwrap();
        let t = centered_tail(&u, &c, &[2.0, 3.0, -1000.0, 1000.0]).unwrap();
        for p in &t[..2] {
            assert!(p.z_used <= p.z && p.z - p.z_used < 1.0);
            assert!(((m + p.z_used) - (m + p.z_used).round()).abs() < 1e-9);
            assert_eq!(p.prob, u.sf_step(m + p.z));
        }
        assert_eq!(t[2].prob, 1.0);
        assert_eq!(t[3].prob, 0.0);
        assert!(matches!(centered_tail(&u, &c, &[f64::NAN]), Err(BrwError::Range(_))));
    }

    #[test]
    fn interpolants() {
        let u = exact_max_law(&OffspringLaw::binary(), &pm(), 2).unwrap();
        assert_eq!(u.cdf_linear(0.0), u.cdf_index(0));
        let mid = u.cdf_linear(0.5);
        assert!((mid - 0.5 * (u.cdf_index(0) + u.cdf_index(1))).abs() < 1e-15);
        assert_eq!(u.cdf_step(0.999), u.cdf_index(0));
    }

    #[test]
    fn sampler_matches_law() {
        let b = OffspringLaw::binary();
        let law = IncrementLaw::lazy_unit();
        let u = exact_max_law(&b, &law, 10).unwrap();
        let s = u.sampler();
        let lowest = u.sf.iter().position(|v| *v < 1.0).unwrap();
        assert_eq!(s.quantile(1.0), u.position(lowest));
        assert_eq!(s.quantile(1e-300), u.last() as f64);
        let mut rng = CounterRng::new(3, 0, 0, 0);
        let draws: Vec<f64> = (0..100_000).map(|_| s.sample(&mut rng)).collect();
        let emp = crate::stats::empirical_cdf(&draws);
        let exact: Vec<(f64, f64)> = (0..u.cdf.len()).map(|i| (u.position(i), u.cdf[i])).collect();
        let d = kolmogorov_distance(&emp, &exact);
        assert!(d < crate::stats::dkw_epsilon(100_000, 1e-3), "{d}");
    }

    #[test]
    fn kolmogorov_trend_decreases() {
        let b = OffspringLaw::binary();
        let law = IncrementLaw::lazy_unit();
        let c = calibrate(&b, &law).unwrap();
        // pairs (n, 2n) for n = 16, 32, 64; the moving grid leaves an
        // interpolation floor of a few 1e-2, reached around n = 128
        let laws: Vec<MaxCdf> = [16, 32, 64, 128].iter().map(|n| exact_max_law(&b, &law, *n).unwrap()).collect();
        let d: Vec<f64> = laws.windows(2).map(|w| centered_kolmogorov(&w[0], &w[1], &c).unwrap()).collect();
        assert!(d.windows(2).all(|p| p[1] < p[0]), "{d:?}");
        // step CDFs on shifted grids stay a full jump apart
        let s = centered_step_kolmogorov(&laws[2], &laws[3], &c).unwrap();
        assert!(s > 5.0 * d[2]);
    }

    #[test]
    fn gaussian_grid_against_closed_forms() {
        let g = IncrementLaw::standard_normal();
        let opts = GridOptions { step: 0.005, trim: 1e-15 };
        let u = grid_max_law(&OffspringLaw::single_child(), &g, 3, opts).unwrap();
        for x in [-2.0, 0.0, 1.3] {
            let want = crate::stats::normal_cdf(x / 3f64.sqrt());
            assert!((u.cdf_linear(x) - want).abs() <= u.error_budget + 1e-12, "{x}");
        }
        let u = grid_max_law(&OffspringLaw::binary(), &g, 1, opts).unwrap();
        for x in [-1.0, 0.2, 2.0] {
            let want = crate::stats::normal_cdf(x).powi(2);
            assert!((u.cdf_linear(x) - want).abs() <= u.error_budget + 1e-12);
        }
        assert!(u.error_budget > 0.0 && u.error_budget < 0.01);
        let uni = IncrementLaw::uniform(-1.0, 1.0).unwrap();
        let u = grid_max_law(&OffspringLaw::binary(), &uni, 1, opts).unwrap();
        assert!((u.cdf_linear(0.0) - 0.25).abs() <= u.error_budget);
        assert!(grid_step_for(&g, 1e-6).unwrap() > 0.0);
    }

    #[test]
    fn grid_leakage_fails_loudly() {
        let g = IncrementLaw::standard_normal();
        let e = grid_max_law(&OffspringLaw::binary(), &g, 2, GridOptions { step: 0.01, trim: 1e-6 });
        assert!(matches!(e, Err(BrwError::Truncation { .. })));
    }

    /// Enumerates lazy/binary trees to depth n and evaluates G_{n,β} directly.
    fn enumerate_gbeta(c: &ModelConstants, n: usize, beta: f64) -> f64 {
        let curve = psi_curve(c, n, beta).unwrap();
        let cut: Vec<i64> = curve.iter().map(|t| ceil_index(*t, 1.0)).collect();
        fn rec(k: usize, n: usize, pos: &[i64], cut: &[i64]) -> f64 {
            if pos.iter().any(|p| *p >= cut[k]) {
                return 1.0;
            }
            if k == n {
                return 0.0;
            }
            let kids = pos.len() * 2;
            let mut total = 0.0;
            let combos = 3usize.pow(kids as u32);
            for code in 0..combos {
                let mut c = code;
                let next: Vec<i64> = (0..kids)
                    .map(|i| {
                        let s = (c % 3) as i64 - 1;
                        c /= 3;
                        pos[i / 2] + s
                    })
                    .collect();
                total += rec(k + 1, n, &next, cut);
            }
            total / combos as f64
        }
        rec(0, n, &[0], &cut)
    }

    #[test]
    fn gbeta_exact_against_enumeration() {
        let b = OffspringLaw::binary();
        let law = IncrementLaw::lazy_unit();
        let c = calibrate(&b, &law).unwrap();
        for beta in [0.3, 1.0, 1.7] {
            let e = enumerate_gbeta(&c, 3, beta);
            let x = exact_gbeta_probability(&b, &law, &c, 3, beta).unwrap();
            assert!((x - e).abs() < 1e-12, "beta={beta}: {x} vs {e}");
        }
        // unreachable curve
        let x = exact_gbeta_probability(&b, &law, &c, 8, 100.0).unwrap();
        assert_eq!(x, 0.0);
        // nonincreasing in beta
        let v: Vec<f64> = (2..=10).map(|b2| exact_gbeta_probability(&b, &law, &c, 32, b2 as f64).unwrap()).collect();
        assert!(v.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn reach_cutoffs_are_monotone_in_eps() {
        let b = OffspringLaw::binary();
        let law = IncrementLaw::lazy_unit();
        let c = calibrate(&b, &law).unwrap();
        let th = gbeta_thresholds(&c, 32, 2.0, 1.0).unwrap();
        let t = ReachTable::new(&b, &law, &th).unwrap();
        let a = t.cutoffs(1e-3);
        let d = t.cutoffs(1e-8);
        for k in 0..=32 {
            assert!(d[k] <= a[k]);
            if d[k] != i64::MAX {
                assert!(t.value(k, d[k]) >= 1e-8);
                assert!(t.value(k, d[k] - 1) < 1e-8);
            }
        }
        // nothing to reach: everything is prunable
        let none = ReachTable::new(&b, &law, &vec![None; 5]).unwrap();
        assert!(none.cutoffs(1e-6).iter().all(|x| *x == i64::MAX));
    }

    /// Enumerates the first n−ℓ generations of lazy/binary trees and uses the
    /// exact subtree-max law for the last ℓ (subtrees are independent).
    fn enumerate_lambda(c: &ModelConstants, n: usize, ell: usize, z: f64) -> (f64, f64, f64) {
        let b = OffspringLaw::binary();
        let law = IncrementLaw::lazy_unit();
        let sub = exact_max_law(&b, &law, ell).unwrap();
        let m = c.centering(n as i64).unwrap();
        let target = floor_index(m + z, 1.0);
        let e_caps: Vec<i64> = e_line(c, n, ell, z).unwrap().iter().map(|t| floor_index(*t, 1.0)).collect();
        let f_caps: Vec<i64> = f_curve(c, n, ell, z).unwrap().iter().map(|t| floor_index(*t, 1.0)).collect();
        let top = n - ell;
        // particles: (position, e_ok, f_ok)
        let mut gens: Vec<(f64, Vec<(i64, bool, bool)>)> = vec![(1.0, vec![(0, e_caps[0] >= 0, f_caps[0] >= 0)])];
        for j in 1..=top {
            let mut next = Vec::new();
            for (w, ps) in &gens {
                let kids = ps.len() * 2;
                let combos = 3usize.pow(kids as u32);
                for code in 0..combos {
                    let mut cc = code;
                    let v: Vec<(i64, bool, bool)> = (0..kids)
                        .map(|i| {
                            let s = (cc % 3) as i64 - 1;
                            cc /= 3;
                            let (p, e, f) = ps[i / 2];
                            (p + s, e && p + s <= e_caps[j], f && p + s <= f_caps[j])
                        })
                        .collect();
                    next.push((w / combos as f64, v));
                }
            }
            gens = next;
        }
        use crate::stats::CompensatedSum;
        let (mut el, mut eg, mut el2) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
        for (w, ps) in &gens {
            let g: Vec<f64> = ps.iter().map(|(p, _, _)| sub.sf_index(target - p)).collect();
            let a: Vec<f64> = ps.iter().zip(&g).map(|((_, e, _), g)| if *e { *g } else { 0.0 }).collect();
            let lam: f64 = a.iter().sum();
            let gam: f64 = ps.iter().zip(&g).map(|((_, _, f), g)| if *f { *g } else { 0.0 }).sum();
            let sq: f64 = a.iter().map(|x| x * x).sum();
            el.add(w * lam);
            eg.add(w * gam);
            el2.add(w * (lam + lam * lam - sq));
        }
        (el.value(), eg.value(), el2.value())
    }

    #[test]
    fn lambda_moments_against_enumeration() {
        let b = OffspringLaw::binary();
        let law = IncrementLaw::lazy_unit();
        let c = calibrate(&b, &law).unwrap();
        for (n, ell, z) in [(4, 2, 1.0), (4, 2, 2.0), (5, 2, 0.5), (4, 1, 1.5)] {
            let x = exact_lambda_moments(&b, &law, &c, n, ell, z).unwrap();
            let (el, eg, el2) = enumerate_lambda(&c, n, ell, z);
            assert!((x.mean_lambda - el).abs() < 1e-12, "{n} {ell} {z}: {} vs {el}", x.mean_lambda);
            assert!((x.mean_gamma - eg).abs() < 1e-12);
            assert!((x.second_lambda - el2).abs() < 1e-12, "{} vs {el2}", x.second_lambda);
            assert!(x.mean_lambda <= x.mean_gamma);
            assert!(x.second_lambda >= x.mean_lambda);
        }
    }

    #[test]
    fn lambda_degenerate_cases() {
        let b = OffspringLaw::binary();
        let law = IncrementLaw::lazy_unit();
        let c = calibrate(&b, &law).unwrap();
        // ℓ = n: Λ is the indicator of the root's subtree exceeding, when z ≥ 0
        let x = exact_lambda_moments(&b, &law, &c, 6, 6, 1.0).unwrap();
        assert!((x.mean_lambda - x.p_exceed).abs() < 1e-15);
        assert_eq!(x.second_lambda, x.mean_lambda);
        let x = exact_lambda_moments(&b, &law, &c, 6, 6, -0.5).unwrap();
        assert_eq!(x.mean_lambda, 0.0);
        assert!(exact_lambda_moments(&b, &law, &c, 6, 0, 1.0).is_err());
        // the ν masses times γ reproduce E Λ
        let x = exact_lambda_moments(&b, &law, &c, 40, 8, 2.0).unwrap();
        assert!(x.mean_lambda > 0.0);
        let s: f64 = x.nu.iter().zip(&x.gamma_ell).map(|(a, g)| a.1 * g.1).sum::<f64>() * 2f64.powi(32);
        assert!((s - x.mean_lambda).abs() < 1e-12 * x.mean_lambda);
        assert!(x.mean_lambda_window <= x.mean_lambda);
        assert!(x.p_exceed <= x.mean_gamma + 1e-15);
    }
}
