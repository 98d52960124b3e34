//! Chain trace files and the CSV series `stats` derives from them.
//!
//! A trace file is line-oriented JSON: one header line naming the target
//! and the reported best rewrite, then one line per sampled proposal.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use superopt::isa::parse_listing;
use superopt::mcmc::TraceRecord;
use superopt::search::{overlap_diagnostic, ChainTrace, Phase};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("trace: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Line {
    Header {
        target: String,
        /// Final zero-cost rewrite, the default overlap reference.
        reference: Option<String>,
    },
    Record {
        phase: Phase,
        worker: usize,
        #[serde(flatten)]
        record: TraceRecord,
    },
}

pub fn write_trace<W: Write>(
    mut out: W,
    target: &str,
    reference: Option<&str>,
    traces: &[ChainTrace],
) -> Result<(), TraceError> {
    let header = Line::Header {
        target: target.to_string(),
        reference: reference.map(str::to_string),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("serializable"))?;
    for t in traces {
        for r in &t.records {
            let line = Line::Record {
                phase: t.phase,
                worker: t.worker,
                record: r.clone(),
            };
            writeln!(out, "{}", serde_json::to_string(&line).expect("serializable"))?;
        }
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<Line>, TraceError> {
    let mut lines = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push(serde_json::from_str(&line).map_err(|source| TraceError::Json { line: i + 1, source })?);
    }
    Ok(lines)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Series {
    /// Current and best cost against proposal count.
    Cost,
    /// Testcases evaluated before termination against current cost.
    Evaluated,
    /// Instruction overlap with the reference against current cost.
    Overlap,
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Synthesis => "synthesis",
        Phase::Optimization => "optimization",
    }
}

/// Writes `series` as CSV. `reference` overrides the header's reference.
pub fn write_series<W: Write>(
    out: W,
    lines: &[Line],
    series: Series,
    reference: Option<&str>,
) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    let header_ref = lines.iter().find_map(|l| match l {
        Line::Header { reference, .. } => reference.clone(),
        _ => None,
    });
    let reference = match series {
        Series::Overlap => {
            let text = reference
                .map(str::to_string)
                .or(header_ref)
                .ok_or_else(|| TraceError::Invalid("overlap needs a reference rewrite".into()))?;
            Some(parse_listing(&text).map_err(|e| TraceError::Invalid(format!("reference: {e}")))?)
        }
        _ => None,
    };
    match series {
        Series::Cost => w.write_record(["phase", "worker", "proposal", "current", "best"])?,
        Series::Evaluated => w.write_record(["phase", "worker", "proposal", "current", "evaluated", "early_stop"])?,
        Series::Overlap => w.write_record(["phase", "worker", "proposal", "current", "overlap"])?,
    }
    for line in lines {
        let Line::Record { phase, worker, record } = line else {
            continue;
        };
        let lead = [
            phase_name(*phase).to_string(),
            worker.to_string(),
            record.proposal.to_string(),
            record.current.to_string(),
        ];
        let tail: Vec<String> = match series {
            Series::Cost => vec![record.best.to_string()],
            Series::Evaluated => vec![record.evaluated.to_string(), record.proposed.is_none().to_string()],
            Series::Overlap => {
                let program = parse_listing(&record.program)
                    .map_err(|e| TraceError::Invalid(format!("proposal {}: {e}", record.proposal)))?;
                let overlap = overlap_diagnostic(&program, reference.as_ref().expect("set for overlap"));
                vec![format!("{overlap:.1}")]
            }
        };
        w.write_record(lead.iter().chain(tail.iter()))?;
    }
    w.flush()?;
    Ok(())
}
