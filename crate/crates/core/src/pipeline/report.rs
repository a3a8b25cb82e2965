use std::io::{self, Write};

use super::SweepRecord;
use crate::error::{Error, Result};

pub const SWEEP_COLUMNS: [&str; 6] = ["epsilon", "fraction_sent", "accuracy", "tpr", "fpr", "elapsed_per_sample"];

pub fn write_sweep_csv<W: Write>(records: &[SweepRecord], out: &mut W) -> io::Result<()> {
    writeln!(out, "{}", SWEEP_COLUMNS.join(","))?;
    for r in records {
        writeln!(
            out,
            "{:?},{:?},{:?},{:?},{:?},{:?}",
            r.epsilon, r.fraction_sent, r.accuracy, r.tpr, r.fpr, r.elapsed_per_sample
        )?;
    }
    Ok(())
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRecord>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != SWEEP_COLUMNS.join(",") {
        return Err(Error::MalformedRow { line: 1, reason: format!("unexpected header `{header}`") });
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let values = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::MalformedRow { line: i + 2, reason: e.to_string() })?;
            let [epsilon, fraction_sent, accuracy, tpr, fpr, elapsed_per_sample] = values[..] else {
                return Err(Error::MalformedRow { line: i + 2, reason: format!("expected 6 fields, found {}", values.len()) });
            };
            Ok(SweepRecord { epsilon, fraction_sent, accuracy, tpr, fpr, elapsed_per_sample })
        })
        .collect()
}

/// Human-readable digest: one line per record plus the operating point that
/// reaches the best accuracy with the least traffic.
pub fn summarize(records: &[SweepRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "eps={:<6} sent={:>6.2}% acc={:>6.2}% tpr={:.3} fpr={:.3} elapsed={:.3}s\n",
            r.epsilon,
            100.0 * r.fraction_sent,
            100.0 * r.accuracy,
            r.tpr,
            r.fpr,
            r.elapsed_per_sample
        ));
    }
    let best = records
        .iter()
        .filter(|r| r.accuracy.is_finite())
        .max_by(|a, b| a.accuracy.total_cmp(&b.accuracy).then(b.fraction_sent.total_cmp(&a.fraction_sent)));
    if let Some(b) = best {
        out.push_str(&format!(
            "best: eps={} accuracy={:.2}% at {:.2}% sent, {:.3}s/sample\n",
            b.epsilon,
            100.0 * b.accuracy,
            100.0 * b.fraction_sent,
            b.elapsed_per_sample
        ));
    }
    out
}
