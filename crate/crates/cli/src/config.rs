//! Run configuration: TOML in, validated structs out.
//!
//! Reals are written as decimal strings (`"0.5"`, `"1e-9"`) so the bytes that
//! get hashed are the bytes the user wrote. Counts and indices stay integers.

use std::collections::BTreeMap;
use std::path::Path;

use brw_core::simulator::{default_ell, Family, PruneMode, PruneRule, QuerySet, SimConfig};
use brw_core::{IncrementLaw, ModelConstants, OffspringLaw};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// A real number kept as the decimal string it was written as.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dec(pub String);

impl Dec {
    pub fn value(&self, field: &str) -> CliResult<f64> {
        parse_decimal(&self.0).ok_or_else(|| CliError::Config(format!("{field}: {:?} is not a decimal number", self.0)))
    }
}

/// Accepts `[+-]digits[.digits][e[+-]digits]`; rejects `inf`, `nan`, hex.
pub fn parse_decimal(s: &str) -> Option<f64> {
    let t = s.trim();
    let body = t.strip_prefix(['+', '-']).unwrap_or(t);
    let (mant, exp) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], Some(&body[i + 1..])),
        None => (body, None),
    };
    let mut parts = mant.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let frac = parts.next().unwrap_or("");
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if let Some(e) = exp {
        let e = e.strip_prefix(['+', '-']).unwrap_or(e);
        if e.is_empty() || !e.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub run: RunSection,
    #[serde(default)]
    pub prune: PruneSection,
    #[serde(default, rename = "query")]
    pub queries: Vec<QuerySection>,
    #[serde(default, rename = "diagnostic")]
    pub diagnostics: Vec<DiagnosticSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Child count -> probability.
    pub offspring: BTreeMap<String, Dec>,
    pub increment: IncrementSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IncrementSection {
    PlusMinusOne,
    LazyUnit,
    /// Steps `span · i` with probability `points[i]`.
    Lattice { span: Dec, points: BTreeMap<String, Dec> },
    Gaussian { mean: Dec, sd: Dec },
    Uniform { low: Dec, high: Dec },
    Exponential { shift: Dec, rate: Dec },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub n: usize,
    pub replicates: u64,
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub split: Option<usize>,
    /// Record `Y_k`, `Z_k` up to this generation.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub max_trace: bool,
    #[serde(default)]
    pub population_cap: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PruneSection {
    #[default]
    None,
    Gap {
        gap: Dec,
    },
    /// `(12/θ̄) log(n+1)` below the running maximum.
    Default,
    Line {
        slope: Dec,
        offset: Dec,
    },
    Reach {
        epsilon: Dec,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySection {
    pub family: String,
    pub value: Dec,
    #[serde(default)]
    pub ell: Option<usize>,
    #[serde(default)]
    pub relax_ell: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiagnosticSection {
    /// Empirical CDF of the maximum against the exact lattice law.
    Dkw {
        #[serde(default)]
        alpha: Option<Dec>,
    },
    /// `P̂(max ≤ x)` against the exact value.
    CdfPoint {
        x: Dec,
        #[serde(default)]
        sigmas: Option<Dec>,
    },
    Martingale {
        #[serde(default)]
        sigmas: Option<Dec>,
    },
    TailFit {
        z: Vec<Dec>,
        #[serde(default)]
        source: TailSource,
        #[serde(default)]
        tolerance: Option<Dec>,
        #[serde(default)]
        spread: Option<Dec>,
    },
    /// Ratios built from paired `E`/`F` queries.
    Moments {
        #[serde(default)]
        bound: Option<Dec>,
        #[serde(default)]
        exceed_low: Option<Dec>,
        #[serde(default)]
        exceed_high: Option<Dec>,
    },
    Mixture {
        k: usize,
        z: Dec,
        alpha: Dec,
        #[serde(default)]
        bins: Option<usize>,
        #[serde(default)]
        sigmas: Option<Dec>,
    },
    /// Fitted constant of the `G_{n,β}` bound from the `gbeta` queries.
    Barrier {
        #[serde(default)]
        delta: Option<Dec>,
        /// Compare with a constant fitted elsewhere.
        #[serde(default)]
        reference_c: Option<Dec>,
        #[serde(default)]
        factor: Option<Dec>,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailSource {
    #[default]
    Oracle,
    Records,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<String>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Schema checks that serde cannot express.
    pub fn validate(&self) -> CliResult<()> {
        if self.run.n == 0 {
            return Err(CliError::Config("run.n must be >= 1".into()));
        }
        if self.run.replicates == 0 {
            return Err(CliError::Config("run.replicates must be >= 1".into()));
        }
        if self.run.workers == Some(0) {
            return Err(CliError::Config("run.workers must be >= 1".into()));
        }
        if self.model.offspring.is_empty() {
            return Err(CliError::Config("model.offspring is empty".into()));
        }
        for (k, p) in &self.model.offspring {
            k.parse::<u32>().map_err(|_| CliError::Config(format!("model.offspring: key {k:?} is not a child count")))?;
            p.value("model.offspring")?;
        }
        if let IncrementSection::Lattice { span, points } = &self.model.increment {
            span.value("model.increment.span")?;
            for (k, p) in points {
                k.parse::<i64>()
                    .map_err(|_| CliError::Config(format!("model.increment.points: key {k:?} is not an integer")))?;
                p.value("model.increment.points")?;
            }
        }
        for (i, q) in self.queries.iter().enumerate() {
            parse_family(&q.family).map_err(|e| CliError::Config(format!("query[{i}]: {e}")))?;
            q.value.value(&format!("query[{i}].value"))?;
        }
        Ok(())
    }

    pub fn offspring(&self) -> CliResult<OffspringLaw> {
        let mut pairs = Vec::new();
        for (k, p) in &self.model.offspring {
            pairs.push((k.parse::<u32>().unwrap_or(0), p.value("model.offspring")?));
        }
        pairs.sort_by_key(|p| p.0);
        OffspringLaw::new(&pairs).map_err(|e| CliError::Model(format!("offspring law: {e}")))
    }

    pub fn increment(&self) -> CliResult<IncrementLaw> {
        let law = match &self.model.increment {
            IncrementSection::PlusMinusOne => Ok(IncrementLaw::plus_minus_one()),
            IncrementSection::LazyUnit => Ok(IncrementLaw::lazy_unit()),
            IncrementSection::Lattice { span, points } => {
                let mut pairs = Vec::new();
                for (k, p) in points {
                    pairs.push((k.parse::<i64>().unwrap_or(0), p.value("model.increment.points")?));
                }
                pairs.sort_by_key(|p| p.0);
                IncrementLaw::lattice(span.value("model.increment.span")?, &pairs)
            }
            IncrementSection::Gaussian { mean, sd } => {
                IncrementLaw::gaussian(mean.value("model.increment.mean")?, sd.value("model.increment.sd")?)
            }
            IncrementSection::Uniform { low, high } => {
                IncrementLaw::uniform(low.value("model.increment.low")?, high.value("model.increment.high")?)
            }
            IncrementSection::Exponential { shift, rate } => IncrementLaw::shifted_exponential(
                shift.value("model.increment.shift")?,
                rate.value("model.increment.rate")?,
            ),
        };
        law.map_err(|e| CliError::Model(format!("increment law: {e}")))
    }

    /// Whether anything in the run needs `c1`, `θ̄`, `c2`.
    pub fn needs_constants(&self) -> bool {
        !self.queries.is_empty()
            || self.run.horizon.is_some()
            || matches!(self.prune, PruneSection::Default | PruneSection::Reach { .. })
            || self.diagnostics.iter().any(|d| {
                matches!(
                    d,
                    DiagnosticSection::Martingale { .. }
                        | DiagnosticSection::TailFit { .. }
                        | DiagnosticSection::Moments { .. }
                        | DiagnosticSection::Mixture { .. }
                        | DiagnosticSection::Barrier { .. }
                )
            })
    }

    pub fn prune_rule(&self, constants: Option<&ModelConstants>) -> CliResult<PruneRule> {
        Ok(match &self.prune {
            PruneSection::None => PruneRule::none(),
            PruneSection::Gap { gap } => PruneRule::gap(gap.value("prune.gap")?),
            PruneSection::Default => match constants {
                Some(c) => PruneRule::default_for(c, self.run.n),
                None => return Err(CliError::Config("prune.mode = \"default\" needs calibrated constants".into())),
            },
            PruneSection::Line { slope, offset } => PruneRule {
                mode: PruneMode::BelowLine {
                    line_slope: slope.value("prune.slope")?,
                    offset: offset.value("prune.offset")?,
                },
                audit: true,
            },
            PruneSection::Reach { epsilon } => PruneRule::reach(epsilon.value("prune.epsilon")?),
        })
    }

    pub fn sim_config(&self, constants: Option<&ModelConstants>) -> CliResult<SimConfig> {
        let mut cfg = SimConfig::new(self.run.n).with_prune(self.prune_rule(constants)?);
        if let Some(h) = self.run.horizon {
            cfg = cfg.with_horizon(h);
        }
        if let Some(s) = self.run.split {
            cfg = cfg.with_split(s);
        }
        if self.run.max_trace {
            cfg = cfg.with_max_trace();
        }
        if let Some(cap) = self.run.population_cap {
            cfg.population_cap = cap;
        }
        Ok(cfg)
    }

    pub fn query_set(&self) -> CliResult<QuerySet> {
        let mut qs = QuerySet::new(self.run.n);
        for (i, q) in self.queries.iter().enumerate() {
            let family = parse_family(&q.family).map_err(CliError::Config)?;
            let value = q.value.value(&format!("query[{i}].value"))?;
            let ell = match family {
                Family::Gbeta => 0,
                _ => q.ell.unwrap_or_else(|| default_ell(value)),
            };
            qs.barrier_event_query(value, family, ell, q.relax_ell)
                .map_err(|e| CliError::Config(format!("query[{i}]: {e}")))?;
        }
        Ok(qs)
    }
}

pub fn parse_family(s: &str) -> Result<Family, String> {
    match s.to_ascii_lowercase().as_str() {
        "gbeta" => Ok(Family::Gbeta),
        "e" => Ok(Family::E),
        "f" => Ok(Family::F),
        "gn" => Ok(Family::Gn),
        other => Err(format!("unknown event family {other:?} (expected gbeta, e, f, gn)")),
    }
}

/// The configuration as it takes part in the hash: the parsed TOML tree with
/// `run.workers` and `[output]` removed and the effective seed written in,
/// rendered as JSON with sorted keys.
pub fn canonical_json(text: &str, seed_override: Option<u64>) -> CliResult<String> {
    let tree: toml::Value = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let mut json = serde_json::to_value(&tree).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(obj) = json.as_object_mut() {
        obj.remove("output");
        if let Some(run) = obj.get_mut("run").and_then(|r| r.as_object_mut()) {
            run.remove("workers");
            if let Some(s) = seed_override {
                run.insert("seed".into(), serde_json::Value::from(s));
            }
        }
    }
    serde_json::to_string(&json).map_err(|e| CliError::Config(e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
offspring = { "2" = "1" }
increment = { kind = "plus_minus_one" }

[run]
n = 2
replicates = 10000
seed = 7
"#;

    #[test]
    fn decimal_strings() {
        assert_eq!(parse_decimal("0.5"), Some(0.5));
        assert_eq!(parse_decimal("-1e-9"), Some(-1e-9));
        assert_eq!(parse_decimal(".25"), Some(0.25));
        assert_eq!(parse_decimal("3."), Some(3.0));
        for bad in ["inf", "NaN", "0x10", "", ".", "1e", "1.2.3", "e5"] {
            assert_eq!(parse_decimal(bad), None, "{bad}");
        }
    }

    #[test]
    fn minimal_config_parses() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.run.n, 2);
        assert!(!c.needs_constants());
        assert_eq!(c.offspring().unwrap().rho(), 2.0);
    }

    #[test]
    fn unknown_fields_and_bare_floats_rejected() {
        let extra = MINIMAL.replace("seed = 7", "seed = 7\nbogus = 1");
        assert!(matches!(RunConfig::from_toml(&extra), Err(CliError::Config(_))));
        let float = MINIMAL.replace(r#""2" = "1""#, r#""2" = 1.0"#);
        assert!(matches!(RunConfig::from_toml(&float), Err(CliError::Config(_))));
    }

    #[test]
    fn hash_ignores_workers_and_layout() {
        let a = canonical_json(MINIMAL, None).unwrap();
        let b = canonical_json(&MINIMAL.replace("seed = 7", "workers = 8\nseed = 7"), None).unwrap();
        let reordered = "[run]\nseed = 7\nreplicates = 10000\nn = 2\n[model]\nincrement = { kind = \"plus_minus_one\" }\noffspring = { \"2\" = \"1\" }\n";
        let c = canonical_json(reordered, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_ne!(a, canonical_json(MINIMAL, Some(8)).unwrap());
        assert_eq!(canonical_json(MINIMAL, Some(7)).unwrap(), a);
    }
}
