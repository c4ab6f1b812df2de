//! CSV rendering of sweep rows.

use std::path::Path;

use super::run::SweepRow;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 10] = [
    "experiment",
    "x",
    "pcrb",
    "rate",
    "mse",
    "rank",
    "kkt",
    "seed",
    "status",
    "wall_ms",
];

/// Scientific notation with 12 significant digits.
fn sci(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else {
        v.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(sci).unwrap_or_default()
}

/// Renders rows with the fixed header; every line ends in `\n`.
pub fn render_csv(rows: &[SweepRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::invalid("rows", "nothing to write"));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let io = |e: csv::Error| Error::invalid("csv", e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.experiment.to_string(),
            sci(r.x),
            sci(r.pcrb),
            opt(r.rate),
            opt(r.mse),
            r.rank.map(|k| k.to_string()).unwrap_or_default(),
            opt(r.kkt),
            r.seed.to_string(),
            r.status.label().to_string(),
            opt(r.wall_ms),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid("csv", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
}

/// Writes rows to `path`; nothing is created when `rows` is empty.
pub fn emit_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let text = render_csv(rows)?;
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
