//! Exact max-law tables, optionally cached as JSON under `BRW_CACHE_DIR`.

use std::path::PathBuf;

use brw_core::oracle::{exact_max_law, MaxCdf};
use brw_core::{IncrementLaw, OffspringLaw};

use crate::config::sha256_hex;
use crate::error::{CliError, CliResult};

pub const CACHE_ENV: &str = "BRW_CACHE_DIR";

fn cache_path(off: &OffspringLaw, inc: &IncrementLaw, n: usize) -> Option<PathBuf> {
    let dir = std::env::var_os(CACHE_ENV)?;
    let key = serde_json::to_string(&(off.support(), inc, n)).ok()?;
    Some(PathBuf::from(dir).join(format!("maxlaw-{}.json", &sha256_hex(key.as_bytes())[..16])))
}

/// The exact law of `η*_n`; reads and refreshes the cache when one is set.
pub fn max_law(off: &OffspringLaw, inc: &IncrementLaw, n: usize) -> CliResult<MaxCdf> {
    let path = cache_path(off, inc, n);
    if let Some(p) = &path {
        if let Ok(text) = std::fs::read_to_string(p) {
            if let Ok(law) = serde_json::from_str::<MaxCdf>(&text) {
                if law.n == n {
                    return Ok(law);
                }
            }
        }
    }
    let law = exact_max_law(off, inc, n)?;
    if let Some(p) = &path {
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        let text = serde_json::to_string(&law).map_err(|e| CliError::io(p, e))?;
        std::fs::write(p, text).map_err(|e| CliError::io(p, e))?;
    }
    Ok(law)
}
