//! File writers. Floats are printed with 17 significant digits so every value
//! round-trips exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use xhmc_core::trajectory::Transition;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub const DRAW_COLUMNS: [&str; 8] = [
    "draw",
    "energy",
    "accept_stat",
    "n_leapfrog",
    "wasted_leapfrog",
    "tree_depth",
    "divergent",
    "termination_time",
];

/// Streams draws to CSV, flushing periodically so partial output survives a crash.
pub struct DrawWriter {
    writer: csv::Writer<File>,
    rows: usize,
}

impl DrawWriter {
    const FLUSH_EVERY: usize = 64;

    pub fn create(path: &Path, dim: usize) -> Result<Self> {
        let mut writer = csv_writer(path)?;
        let header: Vec<String> = DRAW_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain((0..dim).map(|i| format!("param_{i}")))
            .collect();
        writer.write_record(&header)?;
        writer.flush()?;
        Ok(Self { writer, rows: 0 })
    }

    pub fn write(&mut self, draw: usize, t: &Transition) -> Result<()> {
        let r = &t.record;
        let mut row = vec![
            draw.to_string(),
            fmt_f64(r.energy),
            fmt_f64(r.accept_stat),
            r.n_leapfrog.to_string(),
            r.wasted_leapfrog.to_string(),
            r.tree_depth.to_string(),
            u8::from(r.divergent).to_string(),
            fmt_f64(r.termination_time),
        ];
        row.extend(t.position().iter().map(|&x| fmt_f64(x)));
        self.writer.write_record(&row)?;
        self.rows += 1;
        if self.rows.is_multiple_of(Self::FLUSH_EVERY) {
            self.writer.flush()?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

/// `lag, param_0, ...` with one row per lag.
pub fn write_autocorr(path: &Path, curves: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let header: Vec<String> = std::iter::once("lag".to_string())
        .chain((0..curves.len()).map(|i| format!("param_{i}")))
        .collect();
    w.write_record(&header)?;
    let max_len = curves.iter().map(Vec::len).max().unwrap_or(0);
    for lag in 0..max_len {
        let row: Vec<String> = std::iter::once(lag.to_string())
            .chain(
                curves
                    .iter()
                    .map(|c| c.get(lag).map(|&v| fmt_f64(v)).unwrap_or_default()),
            )
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `name` for a single chain, `stem.chain{k}.ext` otherwise.
pub fn chain_file(name: &str, chain: usize, n_chains: usize) -> String {
    if n_chains == 1 {
        return name.to_string();
    }
    match name.rsplit_once('.') {
        Some((stem, ext)) => format!("{stem}.chain{chain}.{ext}"),
        None => format!("{name}.chain{chain}"),
    }
}
