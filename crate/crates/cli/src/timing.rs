//! Timing statistics and the comparison table.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

/// CSV header of the comparison table.
pub const CSV_HEADER: &str = "id,mean_a_ms,mean_b_ms,std_a,std_b,ratio";

/// Closing note of every comparison report.
pub const FOOTER: &str = "Configurations A and B ran on the same machine. Cross-toolchain GPU timing \
ratios need two GPU toolchains and matching hardware and are not reproducible with this harness.";

/// Arithmetic mean and sample standard deviation (0 for a single sample).
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One scenario timed under configurations A and B, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub id: String,
    pub mean_a_ms: f64,
    pub mean_b_ms: f64,
    pub std_a: f64,
    pub std_b: f64,
    pub ratio: f64,
}

impl TimingRow {
    /// Builds a row from raw samples; the ratio is always `mean_b / mean_a`.
    pub fn from_samples(id: impl Into<String>, a_ms: &[f64], b_ms: &[f64]) -> Self {
        let (mean_a_ms, std_a) = mean_std(a_ms);
        let (mean_b_ms, std_b) = mean_std(b_ms);
        TimingRow {
            id: id.into(),
            mean_a_ms,
            mean_b_ms,
            std_a,
            std_b,
            ratio: mean_b_ms / mean_a_ms,
        }
    }
}

/// Writes rows sorted by id under [`CSV_HEADER`], then the footer as a `#`
/// comment line.
pub fn write_csv<W: Write>(rows: &[TimingRow], out: W) -> csv::Result<()> {
    let mut sorted: Vec<&TimingRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut w = csv::Writer::from_writer(out);
    for row in sorted {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    let mut out = w.into_inner().map_err(|e| e.into_error())?;
    writeln!(out, "# {FOOTER}")?;
    Ok(())
}

/// Parses a table written by [`write_csv`].
pub fn read_csv<R: Read>(input: R) -> csv::Result<Vec<TimingRow>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input)
        .deserialize()
        .collect()
}
