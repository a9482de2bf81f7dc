//! Forward simulation of pruned branching random walk populations.
//!
//! A replicate keeps flat arrays of positions, tree labels, per-query path
//! flags and subtree tags, regenerated one generation at a time. Random
//! streams are keyed by `(seed, replicate, generation, label)` where the label
//! is a hash of the particle's place in the tree, so results do not depend on
//! thread schedule or on which other particles were pruned.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, BrwError, Result};
use crate::model::{IncrementLaw, IncrementSampler, ModelConstants, OffspringLaw, OffspringSampler};
use crate::oracle::{self, ceil_index, floor_index, MaxLawSampler, ReachTable};
use crate::rng::{child_key, stream_base, CounterRng};
use crate::stats::Welford;

/// Largest expected explicit population `ρ^n` accepted without pruning.
pub const UNPRUNED_LIMIT: f64 = 1e8;
/// Population cap applied when genealogy is retained.
pub const GENEALOGY_CAP: usize = 100_000;
/// Most `E`/`F` queries a set may hold (one flag bit each).
pub const MAX_COUNT_QUERIES: usize = 64;

const ROOT_LABEL: u64 = 1;
/// Generation key for subtree-maximum draws in hybrid mode.
const SPLIT_KEY: u64 = u32::MAX as u64 + 1;
const NO_TAG: u32 = u32::MAX;

// ---------------------------------------------------------------------------
// Queries

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Some particle reaches the `ψ_{n,β}` curve.
    Gbeta,
    /// `Λ_{n,z}`: generation-`(n−ℓ)` particles below the line whose subtree
    /// beats `m_n + z`.
    E,
    /// `Γ_{n,z}`: as `E` with the raised curve.
    F,
    /// Some particle up to generation `n−ℓ` exceeds the raised curve.
    Gn,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventQuery {
    pub family: Family,
    /// `β` for `Gbeta`, `z` otherwise.
    pub value: f64,
    /// Subtree depth; unused by `Gbeta`.
    pub ell: usize,
}

impl EventQuery {
    pub fn is_count(&self) -> bool {
        matches!(self.family, Family::E | Family::F)
    }
}

/// `ℓ(z) = max(2, ⌊min(z, √z log(2+z))⌋)`.
pub fn default_ell(z: f64) -> usize {
    let v = z.min(z.max(0.0).sqrt() * (2.0 + z).ln()).floor();
    if v.is_finite() && v > 2.0 {
        v as usize
    } else {
        2
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    n: usize,
    queries: Vec<EventQuery>,
}

impl QuerySet {
    pub fn new(n: usize) -> Self {
        Self { n, queries: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&EventQuery> {
        self.queries.get(id)
    }

    pub fn queries(&self) -> &[EventQuery] {
        &self.queries
    }

    /// Registers an event and returns its id. `relax_ell` lifts the `ℓ ≤ z`
    /// coupling constraint.
    pub fn barrier_event_query(&mut self, value: f64, family: Family, ell: usize, relax_ell: bool) -> Result<usize> {
        if !value.is_finite() {
            return domain(format!("query parameter {value} is not finite"));
        }
        let ell = match family {
            Family::Gbeta => 0,
            _ => {
                if ell == 0 || ell > self.n {
                    return domain(format!("need 1 <= ell <= n = {}, got {ell}", self.n));
                }
                if !relax_ell && ell as f64 > value {
                    return domain(format!("ell = {ell} exceeds z = {value}; set relax_ell to allow it"));
                }
                ell
            }
        };
        if family == Family::E || family == Family::F {
            let counted = self.queries.iter().filter(|q| q.is_count()).count();
            if counted >= MAX_COUNT_QUERIES {
                return Err(BrwError::Capacity(format!("at most {MAX_COUNT_QUERIES} E/F queries per set")));
            }
        }
        self.queries.push(EventQuery { family, value, ell });
        Ok(self.queries.len() - 1)
    }
}

/// Strict exceedance `x > t`. On a lattice of span `h` the level is first
/// snapped with the shared floor rule, so `x` only has to clear `⌊t/h⌋ h`.
pub fn exceeds(x: f64, t: f64, span: Option<f64>) -> bool {
    Level::new(t, true, span).hit(x)
}

/// `x ≥ t` or `x > t`; on lattices the comparison runs half a span below the
/// first admitted index, which is robust to accumulated rounding.
#[derive(Clone, Copy, Debug)]
struct Level {
    t: f64,
    strict: bool,
}

impl Level {
    fn index(t: f64, strict: bool, span: f64) -> i64 {
        if strict {
            floor_index(t, span) + 1
        } else {
            ceil_index(t, span)
        }
    }

    fn new(t: f64, strict: bool, span: Option<f64>) -> Self {
        match span {
            Some(h) => Self { t: (Self::index(t, strict, h) as f64 - 0.5) * h, strict: false },
            None => Self { t, strict },
        }
    }

    #[inline(always)]
    fn hit(self, x: f64) -> bool {
        if self.strict {
            x > self.t
        } else {
            x >= self.t
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PruneMode {
    None,
    /// Drop particles more than `gap` below the generation maximum.
    GapBelowMax { gap: f64 },
    /// Drop particles below `line_slope·k + offset`.
    BelowLine { line_slope: f64, offset: f64 },
    /// Drop particles whose exact probability of ever meeting a registered
    /// threshold is below `epsilon` (lattice laws only).
    Reach { epsilon: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneRule {
    pub mode: PruneMode,
    /// Accumulate the discarded weight `e^{−θ̄(c1 k − η)}` (and reach mass
    /// under `Reach`).
    pub audit: bool,
}

impl PruneRule {
    pub fn none() -> Self {
        Self { mode: PruneMode::None, audit: false }
    }

    pub fn gap(gap: f64) -> Self {
        Self { mode: PruneMode::GapBelowMax { gap }, audit: true }
    }

    pub fn reach(epsilon: f64) -> Self {
        Self { mode: PruneMode::Reach { epsilon }, audit: true }
    }

    /// Gap `(12/θ̄) log(n+1)` with auditing.
    pub fn default_for(c: &ModelConstants, n: usize) -> Self {
        Self::gap(12.0 / c.theta_bar * ((n + 1) as f64).ln())
    }

    fn validate(&self) -> Result<()> {
        match self.mode {
            PruneMode::None => Ok(()),
            PruneMode::GapBelowMax { gap } if !(gap > 0.0) || !gap.is_finite() => {
                domain(format!("prune gap must be positive, got {gap}"))
            }
            PruneMode::BelowLine { line_slope, offset } if !line_slope.is_finite() || !offset.is_finite() => {
                domain("prune line must be finite")
            }
            PruneMode::Reach { epsilon } if !(epsilon > 0.0 && epsilon < 1.0) => {
                domain(format!("reach epsilon must lie in (0, 1), got {epsilon}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub prune: PruneRule,
    pub population_cap: usize,
    /// Record `Y_k`, `Z_k` for `k = 0..=h`.
    pub martingale_horizon: Option<usize>,
    pub record_max_trace: bool,
    /// Keep parent pointers up to the deepest tag generation.
    pub retain_genealogy: bool,
    /// Simulate explicitly to this generation and draw each survivor's
    /// remaining subtree maximum from the exact lattice law.
    pub split: Option<usize>,
}

impl SimConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            prune: PruneRule::none(),
            population_cap: 10_000_000,
            martingale_horizon: None,
            record_max_trace: false,
            retain_genealogy: false,
            split: None,
        }
    }

    pub fn with_prune(mut self, prune: PruneRule) -> Self {
        self.prune = prune;
        self
    }

    pub fn with_horizon(mut self, h: usize) -> Self {
        self.martingale_horizon = Some(h);
        self
    }

    pub fn with_split(mut self, s: usize) -> Self {
        self.split = Some(s);
        self
    }

    pub fn with_genealogy(mut self) -> Self {
        self.retain_genealogy = true;
        self
    }

    pub fn with_max_trace(mut self) -> Self {
        self.record_max_trace = true;
        self
    }
}

// ---------------------------------------------------------------------------
// Records

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Genealogy {
    /// `parents[k][i]`: index at generation `k−1` of particle `i` of
    /// generation `k` (after pruning). `parents[0]` is empty.
    pub parents: Vec<Vec<u32>>,
    /// Per query, the qualifying generation-`(n−ℓ)` indices (empty for
    /// `Gbeta`/`Gn`).
    pub members: Vec<Vec<u32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub replicate: u64,
    pub seed: u64,
    pub max_final: f64,
    pub max_trace: Vec<f64>,
    pub y_trace: Vec<f64>,
    pub z_trace: Vec<f64>,
    /// Indexed by query id.
    pub event_flags: Vec<bool>,
    /// `Λ` for `E`, `Γ` for `F`, the indicator for `Gbeta`/`Gn`.
    pub counts: Vec<u64>,
    pub pruned_count: u64,
    pub pruned_weight: f64,
    /// Summed reach probability of pruned particles; bounds the chance that
    /// pruning changed any registered event.
    pub pruned_reach: f64,
    pub population_peak: usize,
    pub genealogy: Option<Genealogy>,
}

// ---------------------------------------------------------------------------
// Simulator

#[derive(Clone, Debug)]
struct Counted {
    query: usize,
    group: usize,
    terminal: Level,
}

enum Prune {
    None,
    Gap(f64),
    Line(f64, f64),
    /// Per-generation position below which particles go.
    Levels(Vec<f64>),
}

/// A compiled (model, configuration, queries) triple.
pub struct Simulator {
    cfg: SimConfig,
    queries: QuerySet,
    offspring: OffspringSampler,
    increments: IncrementSampler,
    explicit: usize,
    cap: usize,
    /// `(c1, θ̄)` when constants were supplied.
    line: Option<(f64, f64)>,
    max_hits: Vec<Vec<(usize, Level)>>,
    caps: Vec<Vec<(u32, Level)>>,
    /// Tag generation of each group.
    groups: Vec<usize>,
    counted: Vec<Counted>,
    prune: Prune,
    reach: Option<ReachTable>,
    tail: Option<MaxLawSampler>,
}

impl Simulator {
    pub fn new(
        off: &OffspringLaw,
        inc: &IncrementLaw,
        constants: Option<&ModelConstants>,
        cfg: SimConfig,
        queries: QuerySet,
    ) -> Result<Self> {
        let n = cfg.n;
        if queries.n() != n {
            return domain(format!("query set built for n = {}, config has n = {n}", queries.n()));
        }
        cfg.prune.validate()?;
        let explicit = cfg.split.unwrap_or(n);
        if explicit > n {
            return domain(format!("split generation {explicit} exceeds n = {n}"));
        }
        if cfg.prune.mode == PruneMode::None && (explicit as f64) * off.rho().ln() > UNPRUNED_LIMIT.ln() {
            return Err(BrwError::Capacity(format!(
                "unpruned expected population rho^{explicit} = {:e} exceeds {UNPRUNED_LIMIT:e}",
                off.rho().powi(explicit as i32)
            )));
        }
        if let Some(h) = cfg.martingale_horizon {
            if h > explicit {
                return domain(format!("martingale horizon {h} beyond the explicit generations {explicit}"));
            }
            if constants.is_none() {
                return domain("martingale traces need calibrated constants");
            }
        }
        if !queries.is_empty() && constants.is_none() {
            return domain("event queries need calibrated constants");
        }
        let span = inc.lattice_span();
        let cap = if cfg.retain_genealogy { cfg.population_cap.min(GENEALOGY_CAP) } else { cfg.population_cap };

        let mut max_hits = vec![Vec::new(); explicit + 1];
        let mut caps = vec![Vec::new(); explicit + 1];
        let mut groups: Vec<usize> = Vec::new();
        let mut counted: Vec<Counted> = Vec::new();
        // Reach thresholds (lattice indices) per generation.
        let mut reach_at: Vec<Option<i64>> = vec![None; n + 1];
        let mut lower = |k: usize, c: i64| {
            reach_at[k] = Some(reach_at[k].map_or(c, |o: i64| o.min(c)));
        };
        for (id, q) in queries.queries().iter().enumerate() {
            let c = constants.unwrap();
            match q.family {
                Family::Gbeta => {
                    if explicit < n {
                        return domain("Gbeta queries need every generation simulated (no split)");
                    }
                    for (k, t) in oracle::psi_curve(c, n, q.value)?.into_iter().enumerate() {
                        max_hits[k].push((id, Level::new(t, false, span)));
                        if let Some(h) = span {
                            lower(k, Level::index(t, false, h));
                        }
                    }
                }
                Family::Gn => {
                    if n - q.ell > explicit {
                        return domain("Gn query reaches past the split generation");
                    }
                    for (j, t) in oracle::f_curve(c, n, q.ell, q.value)?.into_iter().enumerate() {
                        max_hits[j].push((id, Level::new(t, true, span)));
                        if let Some(h) = span {
                            lower(j, Level::index(t, true, h));
                        }
                    }
                }
                Family::E | Family::F => {
                    let top = n - q.ell;
                    if top > explicit {
                        return domain("E/F subtree roots lie past the split generation");
                    }
                    let curve = if q.family == Family::E {
                        oracle::e_line(c, n, q.ell, q.value)?
                    } else {
                        oracle::f_curve(c, n, q.ell, q.value)?
                    };
                    let bit = counted.len() as u32;
                    for (j, t) in curve.into_iter().enumerate() {
                        caps[j].push((bit, Level::new(t, true, span)));
                    }
                    let group = match groups.iter().position(|g| *g == top) {
                        Some(g) => g,
                        None => {
                            groups.push(top);
                            groups.len() - 1
                        }
                    };
                    let t = c.centering(n as i64)? + q.value;
                    counted.push(Counted { query: id, group, terminal: Level::new(t, true, span) });
                    if let Some(h) = span {
                        lower(n, Level::index(t, true, h));
                    }
                }
            }
        }

        let mut reach = None;
        let prune = match cfg.prune.mode {
            PruneMode::None => Prune::None,
            PruneMode::GapBelowMax { gap } => Prune::Gap(gap),
            PruneMode::BelowLine { line_slope, offset } => Prune::Line(line_slope, offset),
            PruneMode::Reach { epsilon } => {
                let h = match span {
                    Some(h) => h,
                    None => return domain("reach pruning needs a lattice increment law"),
                };
                if queries.is_empty() {
                    return domain("reach pruning needs at least one registered query");
                }
                let table = ReachTable::new(off, inc, &reach_at)?;
                let levels = table
                    .cutoffs(epsilon)
                    .into_iter()
                    .map(|c| if c == i64::MAX { f64::INFINITY } else { (c as f64 - 0.5) * h })
                    .collect();
                if cfg.prune.audit {
                    reach = Some(table);
                }
                Prune::Levels(levels)
            }
        };

        let tail = if explicit < n {
            if span.is_none() {
                return domain("hybrid split needs a lattice increment law");
            }
            Some(oracle::exact_max_law(off, inc, n - explicit)?.sampler())
        } else {
            None
        };

        Ok(Self {
            line: constants.map(|c| (c.c1, c.theta_bar)),
            offspring: off.sampler(),
            increments: inc.sampler(),
            cfg,
            queries,
            explicit,
            cap,
            max_hits,
            caps,
            groups,
            counted,
            prune,
            reach,
            tail,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn queries(&self) -> &QuerySet {
        &self.queries
    }

    /// One replicate.
    pub fn run(&self, seed: u64, replicate: u64) -> Result<RunRecord> {
        let n = self.cfg.n;
        let ng = self.groups.len();
        let nq = self.queries.len();
        let all_ok: u64 = if self.counted.len() == 64 { u64::MAX } else { (1u64 << self.counted.len()) - 1 };
        let keep_tree = self.cfg.retain_genealogy;
        let deepest = self.groups.iter().copied().max().unwrap_or(0);

        let mut pos = vec![0.0f64];
        let mut lab = vec![ROOT_LABEL];
        let mut ok = if self.counted.is_empty() { Vec::new() } else { vec![all_ok] };
        let mut tags = vec![NO_TAG; ng];
        let mut par: Vec<u32> = Vec::new();
        let (mut npos, mut nlab, mut nok, mut ntags, mut npar) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::<u32>::new(), Vec::<u32>::new());
        let mut tag_ok: Vec<Vec<u64>> = vec![Vec::new(); ng];
        let mut parents: Vec<Vec<u32>> = if keep_tree { vec![Vec::new()] } else { Vec::new() };

        let mut rec = RunRecord {
            replicate,
            seed,
            max_final: 0.0,
            max_trace: Vec::new(),
            y_trace: Vec::new(),
            z_trace: Vec::new(),
            event_flags: vec![false; nq],
            counts: vec![0; nq],
            pruned_count: 0,
            pruned_weight: 0.0,
            pruned_reach: 0.0,
            population_peak: 1,
            genealogy: None,
        };

        for k in 0..=self.explicit {
            if k > 0 {
                npos.clear();
                nlab.clear();
                nok.clear();
                ntags.clear();
                npar.clear();
                let base = stream_base(seed, replicate, k as u64);
                let need_ok = !self.counted.is_empty();
                for i in 0..pos.len() {
                    let (x0, l0) = (pos[i], lab[i]);
                    let mut rng = CounterRng::keyed(base, l0);
                    let kids = self.offspring.sample(&mut rng);
                    for c in 0..kids {
                        npos.push(x0 + self.increments.sample(&mut rng));
                        nlab.push(child_key(l0, c));
                    }
                    if need_ok {
                        nok.extend(std::iter::repeat_n(ok[i], kids as usize));
                    }
                    if ng > 0 {
                        for _ in 0..kids {
                            ntags.extend_from_slice(&tags[i * ng..(i + 1) * ng]);
                        }
                    }
                    if keep_tree {
                        npar.extend(std::iter::repeat_n(i as u32, kids as usize));
                    }
                    if npos.len() > self.cap {
                        return Err(BrwError::PopulationOverflow { live: npos.len(), cap: self.cap });
                    }
                }
                std::mem::swap(&mut pos, &mut npos);
                std::mem::swap(&mut lab, &mut nlab);
                std::mem::swap(&mut ok, &mut nok);
                std::mem::swap(&mut tags, &mut ntags);
                std::mem::swap(&mut par, &mut npar);
            }
            rec.population_peak = rec.population_peak.max(pos.len());

            let (arg, top) = argmax(&pos);
            for (q, level) in &self.max_hits[k] {
                if level.hit(top) {
                    rec.event_flags[*q] = true;
                }
            }
            if !self.caps[k].is_empty() {
                for (x, bits) in pos.iter().zip(ok.iter_mut()) {
                    for (bit, level) in &self.caps[k] {
                        if level.hit(*x) {
                            *bits &= !(1u64 << bit);
                        }
                    }
                }
            }
            if self.cfg.record_max_trace {
                rec.max_trace.push(top);
            }
            if let (Some(h), Some((c1, theta))) = (self.cfg.martingale_horizon, self.line) {
                if k <= h {
                    let (mut y, mut z) = (0.0, 0.0);
                    for x in &pos {
                        let d = c1 * k as f64 - x;
                        let w = (-theta * d).exp();
                        y += w;
                        z += d * w;
                    }
                    rec.y_trace.push(y);
                    rec.z_trace.push(z);
                }
            }

            if k < n {
                self.prune_generation(k, arg, top, &mut pos, &mut lab, &mut ok, &mut tags, &mut par, &mut rec);
            }
            if keep_tree && k > 0 && k <= deepest {
                parents.push(par.clone());
            }
            for (g, gen) in self.groups.iter().enumerate() {
                if *gen == k {
                    for (i, t) in tags.iter_mut().skip(g).step_by(ng).enumerate() {
                        *t = i as u32;
                    }
                    tag_ok[g] = ok.clone();
                }
            }
        }

        let finals: Vec<f64> = match &self.tail {
            None => pos,
            Some(tail) => pos
                .iter()
                .zip(&lab)
                .map(|(x, l)| x + tail.sample(&mut CounterRng::new(seed, replicate, SPLIT_KEY, *l)))
                .collect(),
        };
        rec.max_final = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let mut best: Vec<Vec<f64>> = tag_ok.iter().map(|t| vec![f64::NEG_INFINITY; t.len()]).collect();
        for (i, x) in finals.iter().enumerate() {
            for g in 0..ng {
                let t = tags[i * ng + g];
                if t != NO_TAG {
                    let b = &mut best[g][t as usize];
                    *b = b.max(*x);
                }
            }
        }
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); nq];
        for (bit, c) in self.counted.iter().enumerate() {
            let mut count = 0u64;
            for (t, (bits, b)) in tag_ok[c.group].iter().zip(&best[c.group]).enumerate() {
                if bits >> bit & 1 == 1 && c.terminal.hit(*b) {
                    count += 1;
                    if keep_tree {
                        members[c.query].push(t as u32);
                    }
                }
            }
            rec.counts[c.query] = count;
            rec.event_flags[c.query] = count > 0;
        }
        for (q, flag) in rec.event_flags.iter().enumerate() {
            if !self.queries.queries()[q].is_count() {
                rec.counts[q] = *flag as u64;
            }
        }
        if keep_tree {
            rec.genealogy = Some(Genealogy { parents, members });
        }
        Ok(rec)
    }

    #[allow(clippy::too_many_arguments)]
    fn prune_generation(
        &self,
        k: usize,
        arg: usize,
        top: f64,
        pos: &mut Vec<f64>,
        lab: &mut Vec<u64>,
        ok: &mut Vec<u64>,
        tags: &mut Vec<u32>,
        par: &mut Vec<u32>,
        rec: &mut RunRecord,
    ) {
        let below = match &self.prune {
            Prune::None => return,
            Prune::Gap(g) => top - g,
            Prune::Line(s, o) => s * k as f64 + o,
            Prune::Levels(v) => v[k],
        };
        let ng = self.groups.len();
        let audit = self.cfg.prune.audit;
        let mut w = 0;
        for i in 0..pos.len() {
            let x = pos[i];
            if x < below && i != arg {
                rec.pruned_count += 1;
                if audit {
                    if let Some((c1, theta)) = self.line {
                        rec.pruned_weight += (-theta * (c1 * k as f64 - x)).exp();
                    }
                    if let Some(t) = &self.reach {
                        rec.pruned_reach += t.value(k, (x / t.span).round() as i64);
                    }
                }
                continue;
            }
            pos[w] = x;
            lab[w] = lab[i];
            if !ok.is_empty() {
                ok[w] = ok[i];
            }
            for g in 0..ng {
                tags[w * ng + g] = tags[i * ng + g];
            }
            if !par.is_empty() {
                par[w] = par[i];
            }
            w += 1;
        }
        pos.truncate(w);
        lab.truncate(w);
        if !ok.is_empty() {
            ok.truncate(w);
        }
        tags.truncate(w * ng);
        if !par.is_empty() {
            par.truncate(w);
        }
    }

    /// Replicates `range` in order, spread over the current rayon pool.
    pub fn batch(&self, seed: u64, range: std::ops::Range<u64>) -> Result<Vec<RunRecord>> {
        range.into_par_iter().map(|r| self.run(seed, r)).collect()
    }

    /// As [`Simulator::batch`] but keeps only `f(record)`.
    pub fn batch_map<T, F>(&self, seed: u64, range: std::ops::Range<u64>, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(RunRecord) -> T + Sync + Send,
    {
        range.into_par_iter().map(|r| self.run(seed, r).map(&f)).collect()
    }
}

fn argmax(xs: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in xs.iter().enumerate() {
        if *x > best.1 {
            best = (i, *x);
        }
    }
    best
}

/// One replicate without keeping the compiled simulator.
pub fn simulate(
    off: &OffspringLaw,
    inc: &IncrementLaw,
    constants: Option<&ModelConstants>,
    cfg: SimConfig,
    queries: QuerySet,
    seed: u64,
    replicate: u64,
) -> Result<RunRecord> {
    Simulator::new(off, inc, constants, cfg, queries)?.run(seed, replicate)
}

// ---------------------------------------------------------------------------
// Batch summaries

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleRow {
    pub k: usize,
    pub mean_y: f64,
    pub se_y: f64,
    pub mean_z: f64,
    pub se_z: f64,
}

/// Per-generation means of `Y_k` and `Z_k` with standard errors.
pub fn martingale_traces(records: &[RunRecord]) -> Result<Vec<MartingaleRow>> {
    let h = match records.first() {
        Some(r) if !r.y_trace.is_empty() => r.y_trace.len(),
        Some(_) => return domain("records carry no martingale traces"),
        None => return domain("empty batch"),
    };
    let mut ys = vec![Welford::new(); h];
    let mut zs = vec![Welford::new(); h];
    for r in records {
        if r.y_trace.len() != h || r.z_trace.len() != h {
            return domain("martingale traces of unequal length");
        }
        for k in 0..h {
            ys[k].push(r.y_trace[k]);
            zs[k].push(r.z_trace[k]);
        }
    }
    Ok((0..h)
        .map(|k| MartingaleRow {
            k,
            mean_y: ys[k].mean,
            se_y: ys[k].std_err(),
            mean_z: zs[k].mean,
            se_z: zs[k].std_err(),
        })
        .collect())
}

/// Ordered pairs of distinct qualifying subtree roots by split depth `s`
/// (index `s`; entry 0 unused), summed over the batch.
pub fn pair_split_histogram(records: &[RunRecord], queries: &QuerySet, query: usize) -> Result<Vec<u64>> {
    let q = match queries.get(query) {
        Some(q) if q.is_count() => *q,
        _ => return domain(format!("query {query} is not an E/F count")),
    };
    let top = queries.n() - q.ell;
    let mut hist = vec![0u64; top + 1];
    for r in records {
        let g = r
            .genealogy
            .as_ref()
            .ok_or_else(|| BrwError::Capacity("pair splits need retained genealogy".into()))?;
        let m = &g.members[query];
        for (i, &a) in m.iter().enumerate() {
            for &b in &m[i + 1..] {
                let (mut u, mut v, mut j) = (a, b, top);
                while u != v {
                    u = g.parents[j][u as usize];
                    v = g.parents[j][v as usize];
                    j -= 1;
                }
                hist[top - j] += 2;
            }
        }
    }
    Ok(hist)
}
