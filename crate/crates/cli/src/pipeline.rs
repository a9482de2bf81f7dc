//! calibrate → simulate → analyze, with artifacts on disk.
//!
//! An artifact directory holds
//! `config.toml` (the input as written), `config.json` (the canonical form
//! that is hashed), `records.csv`, `diagnostics/*.csv`, `verdicts.json` and
//! `manifest.json`. `checkpoint.bin` exists only while a batch is unfinished.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use brw_core::simulator::{QuerySet, RunRecord, Simulator};
use brw_core::{calibrate, BrwError, IncrementLaw, ModelConstants, OffspringLaw};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::checkpoint::Checkpoint;
use crate::config::{canonical_json, sha256_hex, RunConfig};
use crate::diagnostics::{run_diagnostic, Batch, Verdict};
use crate::error::{CliError, CliResult};
use crate::records::{write_table, Layout};

/// Replicates per checkpointed shard. Fixed, so shard boundaries never
/// depend on the worker count.
pub const SHARD: u64 = 4096;
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub resume: bool,
    /// Stop after this many shards, leaving a checkpoint (for testing resume).
    pub stop_after: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Finished { verdicts: Vec<Verdict> },
    Stopped { done: u64 },
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Finished { verdicts } if verdicts.iter().any(|v| !v.pass) => 1,
            _ => 0,
        }
    }
}

/// A parsed configuration together with its model objects.
pub struct Prepared {
    pub text: String,
    pub cfg: RunConfig,
    pub canonical: String,
    pub hash: String,
    pub seed: u64,
    pub off: OffspringLaw,
    pub inc: IncrementLaw,
    pub constants: Option<ModelConstants>,
    pub constants_note: Option<String>,
    pub queries: QuerySet,
}

impl Prepared {
    pub fn from_text(text: &str, seed: Option<u64>) -> CliResult<Self> {
        let cfg = RunConfig::from_toml(text)?;
        let canonical = canonical_json(text, seed)?;
        let hash = sha256_hex(canonical.as_bytes());
        let off = cfg.offspring()?;
        let inc = cfg.increment()?;
        let (constants, constants_note) = match calibrate(&off, &inc) {
            Ok(c) => (Some(c), None),
            Err(e @ BrwError::Assumption(_)) if !cfg.needs_constants() => (None, Some(e.to_string())),
            Err(e) => return Err(CliError::Model(format!("calibration: {e}"))),
        };
        let queries = cfg.query_set()?;
        Ok(Self { seed: seed.unwrap_or(cfg.run.seed), text: text.to_string(), cfg, canonical, hash, off, inc, constants, constants_note, queries })
    }

    pub fn load(path: &Path, seed: Option<u64>) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_text(&text, seed)
    }

    pub fn layout(&self) -> Layout {
        Layout {
            queries: self.queries.len(),
            max_trace: self.cfg.run.max_trace.then_some(self.cfg.run.n),
            horizon: self.cfg.run.horizon,
        }
    }

    pub fn simulator(&self) -> CliResult<Simulator> {
        let sim_cfg = self.cfg.sim_config(self.constants.as_ref())?;
        Ok(Simulator::new(&self.off, &self.inc, self.constants.as_ref(), sim_cfg, self.queries.clone())?)
    }
}

fn pool(workers: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w);
    }
    b.build().map_err(|e| CliError::Config(format!("worker pool: {e}")))
}

fn hash_bytes(hex_hash: &str) -> [u8; 32] {
    let mut out = [0u8; 32];
    if let Ok(v) = hex::decode(hex_hash) {
        if v.len() == 32 {
            out.copy_from_slice(&v);
        }
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Simulates the configured batch into `out`, then analyzes it.
pub fn simulate(p: &Prepared, out: &Path, opts: &RunOptions) -> CliResult<Outcome> {
    let sim = p.simulator()?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let records_path = out.join("records.csv");
    let ckpt_path = out.join("checkpoint.bin");
    let layout = p.layout();
    let total = p.cfg.run.replicates;

    let mut done = 0u64;
    if opts.resume {
        let ck = Checkpoint::load(&ckpt_path)?;
        if ck.config_hash != hash_bytes(&p.hash) {
            return Err(CliError::Checkpoint("checkpoint belongs to a different configuration".into()));
        }
        let f = OpenOptions::new().write(true).open(&records_path).map_err(|e| CliError::io(&records_path, e))?;
        f.set_len(ck.records_len).map_err(|e| CliError::io(&records_path, e))?;
        done = ck.done;
    } else {
        write_file(&out.join("config.toml"), p.text.as_bytes())?;
        write_file(&out.join("config.json"), p.canonical.as_bytes())?;
        let f = File::create(&records_path).map_err(|e| CliError::io(&records_path, e))?;
        layout.write_header(BufWriter::new(f))?;
    }

    let pool = pool(opts.workers.or(p.cfg.run.workers))?;
    let mut shards = 0u64;
    while done < total {
        if opts.stop_after.is_some_and(|s| shards >= s) {
            return Ok(Outcome::Stopped { done });
        }
        let hi = (done + SHARD).min(total);
        let recs = pool.install(|| sim.batch(p.seed, done..hi))?;
        let f = OpenOptions::new().append(true).open(&records_path).map_err(|e| CliError::io(&records_path, e))?;
        let mut w = BufWriter::new(f);
        layout.write_rows(&mut w, &recs)?;
        w.flush().map_err(|e| CliError::io(&records_path, e))?;
        drop(w);
        done = hi;
        shards += 1;
        let len = std::fs::metadata(&records_path).map_err(|e| CliError::io(&records_path, e))?.len();
        Checkpoint { config_hash: hash_bytes(&p.hash), done, records_len: len }.save(&ckpt_path)?;
    }

    let verdicts = analyze_dir(p, out)?;
    if ckpt_path.exists() {
        std::fs::remove_file(&ckpt_path).map_err(|e| CliError::io(&ckpt_path, e))?;
    }
    Ok(Outcome::Finished { verdicts })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub replicates: u64,
    pub pruned_count: u64,
    pub pruned_weight: f64,
    pub pruned_reach: f64,
    pub population_peak: usize,
}

impl Audit {
    pub fn of(records: &[RunRecord]) -> Self {
        let mut a = Audit { replicates: records.len() as u64, ..Default::default() };
        for r in records {
            a.pruned_count += r.pruned_count;
            a.pruned_weight += r.pruned_weight;
            a.pruned_reach += r.pruned_reach;
            a.population_peak = a.population_peak.max(r.population_peak);
        }
        a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub brw_core: String,
    pub brw_cli: String,
    pub format: u32,
}

impl Versions {
    pub fn current() -> Self {
        Self { brw_core: env!("CARGO_PKG_VERSION").into(), brw_cli: env!("CARGO_PKG_VERSION").into(), format: FORMAT_VERSION }
    }
}

#[derive(Debug, Serialize)]
struct ManifestOut<'a> {
    config_hash: &'a str,
    seed: u64,
    constants: Box<RawValue>,
    constants_note: Option<&'a str>,
    versions: Versions,
    audit: Audit,
    records_sha256: String,
}

#[derive(Clone, Debug, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub constants: Option<serde_json::Value>,
    pub constants_note: Option<String>,
    pub versions: Versions,
    pub audit: Audit,
    pub records_sha256: String,
}

/// Constants as JSON with every real printed to 17 significant digits.
pub fn constants_json(c: Option<&ModelConstants>) -> String {
    let Some(c) = c else { return "null".into() };
    let r = |x: f64| format!("{x:.16e}");
    let end = |x: Option<f64>| x.map_or("null".to_string(), r);
    format!(
        "{{\"c1\":{},\"theta_bar\":{},\"c2\":{},\"log_rho\":{},\"theta_domain\":[{},{}],\"dual_c1\":{},\"dual_theta\":{}}}",
        r(c.c1),
        r(c.theta_bar),
        r(c.c2),
        r(c.log_rho),
        end(c.theta_domain.0),
        end(c.theta_domain.1),
        r(c.dual_c1),
        r(c.dual_theta)
    )
}

/// Reads `records.csv` in `out`, runs every configured diagnostic and writes
/// `diagnostics/`, `verdicts.json` and `manifest.json`.
pub fn analyze_dir(p: &Prepared, out: &Path) -> CliResult<Vec<Verdict>> {
    let records_path = out.join("records.csv");
    let bytes = std::fs::read(&records_path).map_err(|_| CliError::MissingArtifact(records_path.display().to_string()))?;
    let records = p.layout().read(&bytes[..])?;
    if records.len() as u64 != p.cfg.run.replicates {
        return Err(CliError::Integrity(format!(
            "records.csv has {} rows, the configuration asks for {}",
            records.len(),
            p.cfg.run.replicates
        )));
    }
    let diag_dir = out.join("diagnostics");
    std::fs::create_dir_all(&diag_dir).map_err(|e| CliError::io(&diag_dir, e))?;
    let batch = Batch {
        off: &p.off,
        inc: &p.inc,
        constants: p.constants.as_ref(),
        n: p.cfg.run.n,
        queries: &p.queries,
        records: &records,
    };
    let mut verdicts = Vec::new();
    for (i, d) in p.cfg.diagnostics.iter().enumerate() {
        verdicts.extend(run_diagnostic(&batch, d, i, &diag_dir)?);
    }
    let vjson = serde_json::to_string_pretty(&verdicts).map_err(|e| CliError::io(out, e))?;
    write_file(&out.join("verdicts.json"), vjson.as_bytes())?;

    let constants = RawValue::from_string(constants_json(p.constants.as_ref())).map_err(|e| CliError::io(out, e))?;
    let manifest = ManifestOut {
        config_hash: &p.hash,
        seed: p.seed,
        constants,
        constants_note: p.constants_note.as_deref(),
        versions: Versions::current(),
        audit: Audit::of(&records),
        records_sha256: sha256_hex(&bytes),
    };
    let mjson = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::io(out, e))?;
    write_file(&out.join("manifest.json"), mjson.as_bytes())?;
    Ok(verdicts)
}

/// Re-runs the diagnostics of an existing artifact directory.
pub fn analyze(dir: &Path) -> CliResult<Vec<Verdict>> {
    let p = prepared_from_dir(dir)?;
    analyze_dir(&p, dir)
}

/// Rebuilds the run from `config.toml` with the seed stored in the hashed
/// `config.json`, and checks both against the manifest when there is one.
pub fn prepared_from_dir(dir: &Path) -> CliResult<Prepared> {
    let cfg_path = dir.join("config.toml");
    let text = std::fs::read_to_string(&cfg_path).map_err(|_| CliError::MissingArtifact(cfg_path.display().to_string()))?;
    let canon_path = dir.join("config.json");
    let canon =
        std::fs::read_to_string(&canon_path).map_err(|_| CliError::MissingArtifact(canon_path.display().to_string()))?;
    let seed = serde_json::from_str::<serde_json::Value>(&canon)
        .ok()
        .and_then(|v| v["run"]["seed"].as_u64())
        .ok_or_else(|| CliError::Integrity("config.json has no run.seed".into()))?;
    let p = Prepared::from_text(&text, Some(seed))?;
    if p.canonical != canon {
        return Err(CliError::Integrity("config.json does not match config.toml".into()));
    }
    if dir.join("manifest.json").exists() {
        let manifest = read_manifest(dir)?;
        if p.hash != manifest.config_hash || manifest.seed != seed {
            return Err(CliError::Integrity(format!(
                "manifest config_hash {} does not match the configuration ({})",
                manifest.config_hash, p.hash
            )));
        }
    }
    Ok(p)
}

pub fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|_| CliError::MissingArtifact(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| CliError::Integrity(format!("manifest.json: {e}")))
}

pub fn read_verdicts(dir: &Path) -> CliResult<Vec<Verdict>> {
    let path = dir.join("verdicts.json");
    let text = std::fs::read_to_string(&path).map_err(|_| CliError::MissingArtifact(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| CliError::Integrity(format!("verdicts.json: {e}")))
}

#[derive(Clone, Debug)]
pub struct Report {
    pub text: String,
    pub verdicts: Vec<Verdict>,
    pub plot_files: Vec<PathBuf>,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        if self.verdicts.iter().all(|v| v.pass) {
            0
        } else {
            1
        }
    }
}

/// Verifies hashes, renders the verdict table and writes tidy plot-data CSVs
/// under `plots/`.
pub fn report(dir: &Path) -> CliResult<Report> {
    let manifest = read_manifest(dir)?;
    let p = prepared_from_dir(dir)?;
    let records_path = dir.join("records.csv");
    let bytes = std::fs::read(&records_path).map_err(|_| CliError::MissingArtifact(records_path.display().to_string()))?;
    if sha256_hex(&bytes) != manifest.records_sha256 {
        return Err(CliError::Integrity("records.csv does not match the manifest records_sha256".into()));
    }
    let diag_dir = dir.join("diagnostics");
    if !p.cfg.diagnostics.is_empty() && !diag_dir.is_dir() {
        return Err(CliError::MissingArtifact(diag_dir.display().to_string()));
    }
    let verdicts = read_verdicts(dir)?;

    let mut t = String::new();
    t.push_str(&format!("config hash   {}\n", manifest.config_hash));
    t.push_str(&format!("seed          {}\n", manifest.seed));
    t.push_str(&format!("replicates    {}\n", manifest.audit.replicates));
    t.push_str("models        1\n");
    t.push_str(&format!("  offspring   {:?}\n", p.off.support()));
    t.push_str(&format!("  increment   {:?}\n", p.cfg.model.increment));
    match &manifest.constants {
        Some(serde_json::Value::Object(c)) => {
            for key in ["c1", "theta_bar", "c2"] {
                if let Some(v) = c.get(key) {
                    t.push_str(&format!("  {key:<11} {v}\n"));
                }
            }
        }
        _ => t.push_str(&format!(
            "  constants   unavailable ({})\n",
            manifest.constants_note.as_deref().unwrap_or("not calibrated")
        )),
    }
    t.push_str(&format!(
        "audit         pruned {} particles, weight {:e}, reach {:e}, peak population {}\n",
        manifest.audit.pruned_count, manifest.audit.pruned_weight, manifest.audit.pruned_reach, manifest.audit.population_peak
    ));
    t.push_str("verdicts\n");
    for v in &verdicts {
        t.push_str(&format!("  {}\n", v.line()));
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    t.push_str(&format!("{} of {} checks passed{}\n", verdicts.len() - failed, verdicts.len(), if failed > 0 { "; FAIL" } else { "" }));

    let plot_files = plot_data(dir, &diag_dir)?;
    Ok(Report { text: t, verdicts, plot_files })
}

/// Reshapes diagnostic tables into long `(series, x, y)` CSVs.
fn plot_data(dir: &Path, diag_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let plots = dir.join("plots");
    let mut written = Vec::new();
    let Ok(entries) = std::fs::read_dir(diag_dir) else { return Ok(written) };
    let mut names: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    names.sort();
    for path in names {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let kind = stem.rsplit_once('_').map_or(stem.as_str(), |(k, _)| k);
        let x_col = match kind {
            "tail_fit" | "moments" => "z",
            "martingale" => "k",
            "dkw" => "x",
            "barrier" => "beta",
            "mixture" => "z_mean",
            _ => continue,
        };
        let mut rd = csv::Reader::from_path(&path).map_err(|e| CliError::io(&path, e))?;
        let header: Vec<String> = rd.headers().map_err(|e| CliError::io(&path, e))?.iter().map(String::from).collect();
        let xi = header.iter().position(|h| h == x_col).unwrap_or(0);
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| CliError::io(&path, e))?;
            for (j, h) in header.iter().enumerate() {
                if j != xi {
                    rows.push(vec![h.clone(), rec[xi].to_string(), rec[j].to_string()]);
                }
            }
        }
        std::fs::create_dir_all(&plots).map_err(|e| CliError::io(&plots, e))?;
        let target = plots.join(format!("{stem}.csv"));
        write_table(&target, &["series", x_col, "value"], &rows)?;
        written.push(target);
    }
    Ok(written)
}

/// Constants of the configured model as 17-digit JSON.
pub fn calibrate_json(p: &Prepared) -> String {
    match &p.constants {
        Some(c) => constants_json(Some(c)),
        None => format!("{{\"error\":{}}}", serde_json::Value::from(p.constants_note.clone().unwrap_or_default())),
    }
}

/// Writes the exact law of `η*_n` as `max_cdf.csv` plus a JSON header.
pub fn oracle(p: &Prepared, out: &Path) -> CliResult<PathBuf> {
    let law = crate::oracle_cache::max_law(&p.off, &p.inc, p.cfg.run.n)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let rows: Vec<Vec<String>> =
        (0..law.cdf.len()).map(|i| vec![law.position(i).to_string(), law.cdf[i].to_string(), law.sf[i].to_string()]).collect();
    let path = out.join("max_cdf.csv");
    write_table(&path, &["position", "cdf", "sf"], &rows)?;
    let header = serde_json::json!({
        "n": law.n,
        "step": law.step,
        "exactness": law.exactness,
        "error_budget": law.error_budget,
        "config_hash": p.hash,
    });
    write_file(&out.join("max_cdf.header.json"), header.to_string().as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_have_17_digits() {
        let c = calibrate(&OffspringLaw::binary(), &IncrementLaw::standard_normal()).unwrap();
        let s = constants_json(Some(&c));
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["c1"].as_f64().unwrap(), c.c1);
        assert!(s.contains(&format!("{:.16e}", c.c1)));
        assert_eq!(constants_json(None), "null");
    }
}
