//! Columnar CSV for run records, one row per replicate.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back gives the same bits and rewriting it gives the same bytes.

use std::io::{Read, Write};

use brw_core::simulator::RunRecord;

use crate::error::{CliError, CliResult};

/// Column layout fixed by the run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub queries: usize,
    /// Generations `0..=n` when the max trace is kept.
    pub max_trace: Option<usize>,
    /// Generations `0..=h` of `Y_k`, `Z_k`.
    pub horizon: Option<usize>,
}

const FIXED: [&str; 7] =
    ["replicate", "seed", "max_final", "pruned_count", "pruned_weight", "pruned_reach", "population_peak"];

impl Layout {
    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
        for q in 0..self.queries {
            h.push(format!("event_{q}"));
            h.push(format!("count_{q}"));
        }
        if let Some(n) = self.max_trace {
            h.extend((0..=n).map(|k| format!("max_{k}")));
        }
        if let Some(t) = self.horizon {
            h.extend((0..=t).map(|k| format!("y_{k}")));
            h.extend((0..=t).map(|k| format!("z_{k}")));
        }
        h
    }

    fn row(&self, r: &RunRecord) -> Vec<String> {
        let mut v = vec![
            r.replicate.to_string(),
            r.seed.to_string(),
            r.max_final.to_string(),
            r.pruned_count.to_string(),
            r.pruned_weight.to_string(),
            r.pruned_reach.to_string(),
            r.population_peak.to_string(),
        ];
        for q in 0..self.queries {
            v.push((r.event_flags[q] as u8).to_string());
            v.push(r.counts[q].to_string());
        }
        if self.max_trace.is_some() {
            v.extend(r.max_trace.iter().map(|x| x.to_string()));
        }
        if self.horizon.is_some() {
            v.extend(r.y_trace.iter().map(|x| x.to_string()));
            v.extend(r.z_trace.iter().map(|x| x.to_string()));
        }
        v
    }

    pub fn write_header<W: Write>(&self, out: W) -> CliResult<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out);
        w.write_record(self.header()).map_err(csv_err)?;
        w.flush().map_err(|e| CliError::Io { path: "records.csv".into(), message: e.to_string() })
    }

    pub fn write_rows<W: Write>(&self, out: W, records: &[RunRecord]) -> CliResult<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out);
        for r in records {
            w.write_record(self.row(r)).map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::Io { path: "records.csv".into(), message: e.to_string() })
    }

    /// Parses a records file written with this layout. Genealogy is not
    /// stored, so it comes back as `None`.
    pub fn read<R: Read>(&self, input: R) -> CliResult<Vec<RunRecord>> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(|s| s.to_string()).collect();
        if header != self.header() {
            return Err(CliError::Integrity("records.csv header does not match the run configuration".into()));
        }
        let mut out = Vec::new();
        for row in rd.records() {
            let row = row.map_err(csv_err)?;
            out.push(self.parse_row(&row)?);
        }
        Ok(out)
    }

    fn parse_row(&self, row: &csv::StringRecord) -> CliResult<RunRecord> {
        let bad = |i: usize| CliError::Integrity(format!("records.csv: bad value in column {i}: {:?}", row.get(i)));
        let f = |i: usize| row.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| bad(i));
        let u = |i: usize| row.get(i).and_then(|s| s.parse::<u64>().ok()).ok_or_else(|| bad(i));
        let mut rec = RunRecord {
            replicate: u(0)?,
            seed: u(1)?,
            max_final: f(2)?,
            max_trace: Vec::new(),
            y_trace: Vec::new(),
            z_trace: Vec::new(),
            event_flags: Vec::with_capacity(self.queries),
            counts: Vec::with_capacity(self.queries),
            pruned_count: u(3)?,
            pruned_weight: f(4)?,
            pruned_reach: f(5)?,
            population_peak: u(6)? as usize,
            genealogy: None,
        };
        let mut i = FIXED.len();
        for _ in 0..self.queries {
            rec.event_flags.push(u(i)? != 0);
            rec.counts.push(u(i + 1)?);
            i += 2;
        }
        if let Some(n) = self.max_trace {
            rec.max_trace = (i..=i + n).map(f).collect::<CliResult<_>>()?;
            i += n + 1;
        }
        if let Some(t) = self.horizon {
            rec.y_trace = (i..=i + t).map(f).collect::<CliResult<_>>()?;
            i += t + 1;
            rec.z_trace = (i..=i + t).map(f).collect::<CliResult<_>>()?;
        }
        Ok(rec)
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io { path: "records.csv".into(), message: e.to_string() }
}

/// Writes a header plus rows of plain values (diagnostic tables).
pub fn write_table(path: &std::path::Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: u64) -> RunRecord {
        RunRecord {
            replicate: i,
            seed: 3,
            max_final: 0.1 + i as f64 / 3.0,
            max_trace: vec![0.0, 1.0, 0.1 + 0.2],
            y_trace: vec![1.0, 0.7],
            z_trace: vec![0.0, -1e-300],
            event_flags: vec![true, false],
            counts: vec![4, 0],
            pruned_count: 2,
            pruned_weight: 1.0 / 7.0,
            pruned_reach: 0.0,
            population_peak: 12,
            genealogy: None,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let layout = Layout { queries: 2, max_trace: Some(2), horizon: Some(1) };
        let recs: Vec<RunRecord> = (0..5).map(record).collect();
        let mut buf = Vec::new();
        layout.write_header(&mut buf).unwrap();
        layout.write_rows(&mut buf, &recs).unwrap();
        assert!(buf.ends_with(b"\r\n"));
        let back = layout.read(&buf[..]).unwrap();
        assert_eq!(back, recs);
        let mut again = Vec::new();
        layout.write_header(&mut again).unwrap();
        layout.write_rows(&mut again, &back).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn header_mismatch_is_an_integrity_error() {
        let a = Layout { queries: 1, max_trace: None, horizon: None };
        let b = Layout { queries: 2, max_trace: None, horizon: None };
        let mut buf = Vec::new();
        a.write_header(&mut buf).unwrap();
        assert!(matches!(b.read(&buf[..]), Err(CliError::Integrity(_))));
    }
}
