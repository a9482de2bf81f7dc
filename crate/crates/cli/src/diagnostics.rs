//! Diagnostics over a finished batch. Each kind writes a CSV table and
//! returns one or more verdicts.

use std::path::Path;

use brw_core::analysis::{
    barrier_bound_check, fit_tail, mixture_test, moment_ratio_diagnostics, scaled_tail, FitMethod, MixtureSpec,
    MomentInput, TailSample,
};
use brw_core::oracle::{centered_tail, MaxCdf};
use brw_core::simulator::{exceeds, martingale_traces, Family, QuerySet, RunRecord};
use brw_core::stats::{dkw_epsilon, empirical_cdf, kolmogorov_distance};
use brw_core::{IncrementLaw, ModelConstants, OffspringLaw};
use serde::{Deserialize, Serialize};

use crate::config::{Dec, DiagnosticSection, TailSource};
use crate::error::{CliError, CliResult};
use crate::oracle_cache::max_law;
use crate::records::write_table;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check_name: String,
    pub pass: bool,
    #[serde(with = "real")]
    pub statistic: f64,
    #[serde(with = "real")]
    pub tolerance: f64,
}

/// JSON has no infinities; those go out as the strings `"inf"`, `"-inf"`, `"nan"`.
mod real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad real {other:?}"))),
            },
        }
    }
}

impl Verdict {
    /// Passes when `statistic ≤ tolerance`.
    pub fn at_most(name: impl Into<String>, statistic: f64, tolerance: f64) -> Self {
        Self { check_name: name.into(), pass: statistic <= tolerance, statistic, tolerance }
    }

    pub fn line(&self) -> String {
        format!(
            "{:<34} {}  statistic = {:.6e}  tolerance = {:.6e}",
            self.check_name,
            if self.pass { "PASS" } else { "FAIL" },
            self.statistic,
            self.tolerance
        )
    }
}

/// Everything a diagnostic may look at.
pub struct Batch<'a> {
    pub off: &'a OffspringLaw,
    pub inc: &'a IncrementLaw,
    pub constants: Option<&'a ModelConstants>,
    pub n: usize,
    pub queries: &'a QuerySet,
    pub records: &'a [RunRecord],
}

impl Batch<'_> {
    fn constants(&self, what: &str) -> CliResult<&ModelConstants> {
        self.constants.ok_or_else(|| CliError::Config(format!("{what} needs calibrated constants")))
    }

    fn exact_law(&self, what: &str) -> CliResult<MaxCdf> {
        if self.inc.lattice_span().is_none() {
            return Err(CliError::Config(format!("{what} needs a lattice increment law")));
        }
        max_law(self.off, self.inc, self.n)
    }
}

fn opt(d: &Option<Dec>, field: &str, default: f64) -> CliResult<f64> {
    match d {
        Some(v) => v.value(field),
        None => Ok(default),
    }
}

fn fmt(x: f64) -> String {
    x.to_string()
}

/// Runs diagnostic `index` and writes `diagnostics/<kind>_<index>.csv`.
pub fn run_diagnostic(b: &Batch, d: &DiagnosticSection, index: usize, dir: &Path) -> CliResult<Vec<Verdict>> {
    let path = |kind: &str| dir.join(format!("{kind}_{index}.csv"));
    match d {
        DiagnosticSection::Dkw { alpha } => {
            let alpha = opt(alpha, "dkw.alpha", 1e-3)?;
            let law = b.exact_law("dkw")?;
            let h = law.step;
            let samples: Vec<f64> = b.records.iter().map(|r| (r.max_final / h).round() * h).collect();
            let emp = empirical_cdf(&samples);
            let exact: Vec<(f64, f64)> = (0..law.cdf.len()).map(|i| (law.position(i), law.cdf[i])).collect();
            let stat = kolmogorov_distance(&emp, &exact);
            let rows: Vec<Vec<String>> = exact
                .iter()
                .map(|&(x, f)| {
                    let k = samples.iter().filter(|s| **s <= x + 0.5 * h).count();
                    vec![fmt(x), fmt(k as f64 / samples.len() as f64), fmt(f)]
                })
                .collect();
            write_table(&path("dkw"), &["x", "empirical_cdf", "exact_cdf"], &rows)?;
            Ok(vec![Verdict::at_most("dkw", stat, dkw_epsilon(samples.len(), alpha))])
        }
        DiagnosticSection::CdfPoint { x, sigmas } => {
            let x = x.value("cdf_point.x")?;
            let sig = opt(sigmas, "cdf_point.sigmas", 4.0)?;
            let law = b.exact_law("cdf_point")?;
            let h = law.step;
            let p = law.cdf_step(x);
            let reps = b.records.len() as f64;
            let hits = b.records.iter().filter(|r| r.max_final <= x + 0.5 * h).count() as f64;
            let p_hat = hits / reps;
            let se = (p * (1.0 - p) / reps).sqrt();
            let stat = if se > 0.0 { (p_hat - p).abs() / se } else if p_hat == p { 0.0 } else { f64::INFINITY };
            write_table(
                &path("cdf_point"),
                &["x", "p_hat", "exact", "std_err", "deviation"],
                &[vec![fmt(x), fmt(p_hat), fmt(p), fmt(se), fmt(stat)]],
            )?;
            Ok(vec![Verdict::at_most("cdf_point", stat, sig)])
        }
        DiagnosticSection::Martingale { sigmas } => {
            let sig = opt(sigmas, "martingale.sigmas", 5.0)?;
            b.constants("martingale")?;
            let rows = martingale_traces(b.records)?;
            let dev = |x: f64, se: f64| if se > 0.0 { x.abs() / se } else if x.abs() < 1e-12 { 0.0 } else { f64::INFINITY };
            let stat =
                rows.iter().map(|r| dev(r.mean_y - 1.0, r.se_y).max(dev(r.mean_z, r.se_z))).fold(0.0, f64::max);
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| vec![r.k.to_string(), fmt(r.mean_y), fmt(r.se_y), fmt(r.mean_z), fmt(r.se_z)])
                .collect();
            write_table(&path("martingale"), &["k", "mean_y", "se_y", "mean_z", "se_z"], &table)?;
            Ok(vec![Verdict::at_most("martingale", stat, sig)])
        }
        DiagnosticSection::TailFit { z, source, tolerance, spread } => {
            let c = b.constants("tail_fit")?;
            let tol = opt(tolerance, "tail_fit.tolerance", 0.15)?;
            let max_spread = opt(spread, "tail_fit.spread", 3.0)?;
            let zs: Vec<f64> = z.iter().map(|d| d.value("tail_fit.z")).collect::<CliResult<_>>()?;
            let (samples, method) = match source {
                TailSource::Oracle => {
                    let law = b.exact_law("tail_fit")?;
                    let pts = centered_tail(&law, c, &zs)?;
                    (pts.iter().map(|p| TailSample::exact(p.z_used, p.prob)).collect::<Vec<_>>(), FitMethod::WeightedLeastSquares)
                }
                TailSource::Records => {
                    let m = c.centering(b.n as i64)?;
                    let span = b.inc.lattice_span();
                    let reps = b.records.len() as u64;
                    let s = zs
                        .iter()
                        .map(|&z| {
                            let k = b.records.iter().filter(|r| exceeds(r.max_final, m + z, span)).count() as u64;
                            TailSample::counted(z, k, reps)
                        })
                        .collect();
                    (s, FitMethod::Mle)
                }
            };
            let fit = fit_tail(&samples, method)?;
            let scaled = scaled_tail(&samples, c.theta_bar)?;
            let table: Vec<Vec<String>> = samples
                .iter()
                .zip(&scaled.rows)
                .map(|(s, r)| vec![fmt(s.z), fmt(s.prob), fmt(r.1), fmt(fit.alpha_hat * s.z * (-fit.theta_hat * s.z).exp())])
                .collect();
            write_table(&path("tail_fit"), &["z", "prob", "scaled", "fitted"], &table)?;
            Ok(vec![
                Verdict::at_most("tail_fit.theta", (fit.theta_hat / c.theta_bar - 1.0).abs(), tol),
                Verdict::at_most("tail_fit.spread", scaled.spread, max_spread),
            ])
        }
        DiagnosticSection::Moments { bound, exceed_low, exceed_high } => {
            let c = b.constants("moments")?;
            let bound = opt(bound, "moments.bound", 1.5)?;
            let lo = opt(exceed_low, "moments.exceed_low", 0.5)?;
            let hi = opt(exceed_high, "moments.exceed_high", 1.5)?;
            let inputs = moment_inputs(b, c)?;
            let rows = moment_ratio_diagnostics(&inputs)?;
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        fmt(r.z),
                        r.ell.to_string(),
                        r.replicates.to_string(),
                        fmt(r.mean_lambda),
                        fmt(r.mean_gamma),
                        fmt(r.mean_lambda_sq),
                        fmt(r.p_exceed),
                        fmt(r.gamma_over_lambda.value),
                        fmt(r.gamma_over_lambda.std_err),
                        fmt(r.second_over_first.value),
                        fmt(r.second_over_first.std_err),
                        fmt(r.exceed_over_lambda.value),
                        fmt(r.exceed_over_lambda.std_err),
                    ]
                })
                .collect();
            write_table(
                &path("moments"),
                &[
                    "z",
                    "ell",
                    "replicates",
                    "mean_lambda",
                    "mean_gamma",
                    "mean_lambda_sq",
                    "p_exceed",
                    "gamma_over_lambda",
                    "gamma_over_lambda_se",
                    "second_over_first",
                    "second_over_first_se",
                    "exceed_over_lambda",
                    "exceed_over_lambda_se",
                ],
                &table,
            )?;
            Ok(moment_verdicts(
                &rows.iter().map(|r| (r.gamma_over_lambda.value, r.second_over_first.value, r.exceed_over_lambda.value)).collect::<Vec<_>>(),
                bound,
                lo,
                hi,
            ))
        }
        DiagnosticSection::Mixture { k, z, alpha, bins, sigmas } => {
            let c = b.constants("mixture")?;
            let sig = opt(sigmas, "mixture.sigmas", 4.0)?;
            let pairs = mixture_pairs(b.records, *k)?;
            let spec = MixtureSpec::new(c, *k, b.n, alpha.value("mixture.alpha")?, z.value("mixture.z")?, bins.unwrap_or(10))?;
            let t = mixture_test(&pairs, &spec)?;
            let table: Vec<Vec<String>> = t
                .bins
                .iter()
                .map(|x| vec![x.count.to_string(), fmt(x.z_mean), fmt(x.observed), fmt(x.predicted), fmt(x.deviation)])
                .collect();
            write_table(&path("mixture"), &["count", "z_mean", "observed", "predicted", "deviation"], &table)?;
            Ok(vec![Verdict::at_most("mixture", t.statistic, sig)])
        }
        DiagnosticSection::Barrier { delta, reference_c, factor } => {
            let c = b.constants("barrier")?;
            let delta = opt(delta, "barrier.delta", c.theta_bar / 4.0)?;
            let obs = gbeta_observations(b)?;
            let bound = barrier_bound_check(&obs, b.n, c.theta_bar, delta)?;
            let table: Vec<Vec<String>> =
                bound.rows.iter().map(|r| vec![fmt(r.beta), fmt(r.p_hat), fmt(r.shape), fmt(r.ratio)]).collect();
            write_table(&path("barrier"), &["beta", "p_hat", "shape", "ratio"], &table)?;
            let verdict = match reference_c {
                Some(rc) => {
                    let rc = rc.value("barrier.reference_c")?;
                    let ratio = bound.fitted_c.max(rc) / bound.fitted_c.min(rc);
                    Verdict::at_most("barrier.stability", ratio, opt(factor, "barrier.factor", 2.0)?)
                }
                // alone, the check is that C is finite and positive
                None => Verdict {
                    check_name: "barrier.fitted_c".into(),
                    pass: bound.fitted_c.is_finite() && bound.fitted_c > 0.0,
                    statistic: bound.fitted_c,
                    tolerance: f64::INFINITY,
                },
            };
            Ok(vec![verdict])
        }
    }
}

/// `(β, P̂(G_{n,β}))` from the `gbeta` queries.
pub fn gbeta_observations(b: &Batch) -> CliResult<Vec<(f64, f64)>> {
    let reps = b.records.len() as f64;
    let obs: Vec<(f64, f64)> = b
        .queries
        .queries()
        .iter()
        .enumerate()
        .filter(|(_, q)| q.family == Family::Gbeta)
        .map(|(i, q)| (q.value, b.records.iter().filter(|r| r.event_flags[i]).count() as f64 / reps))
        .collect();
    if obs.is_empty() {
        return Err(CliError::Config("barrier diagnostic needs gbeta queries".into()));
    }
    Ok(obs)
}

/// Pairs each `E` query with the `F` query of the same `(z, ℓ)`.
pub fn moment_inputs(b: &Batch, c: &ModelConstants) -> CliResult<Vec<MomentInput>> {
    let qs = b.queries.queries();
    let m = c.centering(b.n as i64)?;
    let span = b.inc.lattice_span();
    let mut out = Vec::new();
    for (i, e) in qs.iter().enumerate().filter(|(_, q)| q.family == Family::E) {
        let Some(j) = qs.iter().position(|f| f.family == Family::F && f.value == e.value && f.ell == e.ell) else {
            continue;
        };
        out.push(MomentInput {
            z: e.value,
            ell: e.ell,
            lambda: b.records.iter().map(|r| r.counts[i]).collect(),
            gamma: b.records.iter().map(|r| r.counts[j]).collect(),
            exceed: b.records.iter().map(|r| exceeds(r.max_final, m + e.value, span)).collect(),
        });
    }
    if out.is_empty() {
        return Err(CliError::Config("moments diagnostic needs matching e and f queries".into()));
    }
    out.sort_by(|a, b| a.z.total_cmp(&b.z));
    Ok(out)
}

/// Verdicts on `(EΓ/EΛ, EΛ²/EΛ, P/EΛ)` rows sorted by increasing `z`: the
/// first two must decrease in `z` and end `≤ bound`, the last must end in
/// `[lo, hi]`.
pub fn moment_verdicts(rows: &[(f64, f64, f64)], bound: f64, lo: f64, hi: f64) -> Vec<Verdict> {
    let last = rows.last().copied().unwrap_or((f64::NAN, f64::NAN, f64::NAN));
    let decreasing = |f: fn(&(f64, f64, f64)) -> f64| rows.windows(2).all(|w| f(&w[1]) <= f(&w[0]));
    let g_dec = decreasing(|r| r.0);
    let s_dec = decreasing(|r| r.1);
    vec![
        Verdict { check_name: "moments.gamma_over_lambda".into(), pass: last.0 <= bound && g_dec, statistic: last.0, tolerance: bound },
        Verdict { check_name: "moments.second_over_first".into(), pass: last.1 <= bound && s_dec, statistic: last.1, tolerance: bound },
        Verdict {
            check_name: "moments.exceed_over_lambda".into(),
            pass: last.2 >= lo && last.2 <= hi,
            statistic: last.2,
            tolerance: hi,
        },
    ]
}

/// `(Z_k, η*_n)` per replicate.
pub fn mixture_pairs(records: &[RunRecord], k: usize) -> CliResult<Vec<(f64, f64)>> {
    records
        .iter()
        .map(|r| {
            r.z_trace
                .get(k)
                .map(|z| (*z, r.max_final))
                .ok_or_else(|| CliError::Config(format!("mixture at k = {k} needs run.horizon >= {k}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moment_verdict_rules() {
        let ok = moment_verdicts(&[(2.0, 1.8, 1.2), (1.4, 1.3, 0.9)], 1.5, 0.5, 1.5);
        assert!(ok.iter().all(|v| v.pass));
        let not_decreasing = moment_verdicts(&[(1.2, 1.8, 1.2), (1.4, 1.3, 0.9)], 1.5, 0.5, 1.5);
        assert!(!not_decreasing[0].pass && not_decreasing[1].pass);
        let off = moment_verdicts(&[(1.0, 1.0, 1.6)], 1.5, 0.5, 1.5);
        assert!(!off[2].pass);
    }

    #[test]
    fn non_finite_verdicts_round_trip() {
        let v = vec![Verdict::at_most("a", f64::INFINITY, 4.0), Verdict::at_most("b", 0.25, f64::NEG_INFINITY)];
        let s = serde_json::to_string(&v).unwrap();
        assert!(s.contains("\"inf\""));
        let back: Vec<Verdict> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn verdict_line_marks_failures() {
        assert!(Verdict::at_most("x", 2.0, 1.0).line().contains("FAIL"));
        assert!(Verdict::at_most("x", 1.0, 1.0).line().contains("PASS"));
    }
}
