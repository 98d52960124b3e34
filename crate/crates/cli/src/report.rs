//! Result reports: deterministic JSON documents plus terse tables.
//!
//! Reports never contain timings, so two runs with the same seeds and
//! proposal budgets serialize to identical bytes.

use serde::Serialize;

use superopt::cost::{perf_term, CostReport};
use superopt::isa::{Isa, Program};
use superopt::mcmc::EvalStats;
use superopt::search::{PhaseOutcome, Provenance, SearchResult};
use superopt::testgen::{testcases_to_json, Testcase};
use superopt::verify::Verdict;

pub const REPORT_SCHEMA: u32 = 1;

/// Exit codes of the `superopt` binary.
pub mod exit {
    /// A proven-equal rewrite was found (or the verdict is proven).
    pub const PROVEN: i32 = 0;
    pub const ERROR: i32 = 1;
    /// Command-line usage error.
    pub const USAGE: i32 = 2;
    /// A rewrite passes every testcase but could not be proven.
    pub const UNVERIFIED: i32 = 3;
    /// No correct rewrite was found.
    pub const NOT_FOUND: i32 = 4;
    /// `verify` found a counterexample.
    pub const REFUTED: i32 = 5;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Proven,
    Unverified,
    NotFound,
}

impl Status {
    pub fn of(best: Option<&SearchResult>) -> Status {
        match best {
            Some(r) if r.is_proven() => Status::Proven,
            Some(r) if r.is_correct() => Status::Unverified,
            _ => Status::NotFound,
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Status::Proven => exit::PROVEN,
            Status::Unverified => exit::UNVERIFIED,
            Status::NotFound => exit::NOT_FOUND,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerdictJson {
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inputs: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    /// A replayable testcase in the testcase-file layout.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<serde_json::Value>,
}

pub fn testcase_json(t: &Testcase) -> serde_json::Value {
    let doc: serde_json::Value =
        serde_json::from_str(&testcases_to_json(std::slice::from_ref(t))).expect("testcase JSON is valid");
    doc["testcases"][0].clone()
}

impl From<&Verdict> for VerdictJson {
    fn from(v: &Verdict) -> Self {
        let mut out = VerdictJson {
            status: v.status(),
            width: None,
            inputs: None,
            trials: None,
            counterexample: None,
        };
        match v {
            Verdict::Proven { width, inputs } => {
                out.width = Some(*width);
                out.inputs = Some(*inputs);
            }
            Verdict::Refuted { counterexample } => out.counterexample = Some(testcase_json(counterexample)),
            Verdict::Inconclusive { trials } => out.trials = Some(*trials),
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProgramJson {
    pub text: String,
    pub active_len: usize,
    /// Static latency sum H.
    pub h: u64,
}

impl ProgramJson {
    pub fn new(program: &Program, isa: &Isa) -> ProgramJson {
        ProgramJson {
            text: program.compacted().to_string(),
            active_len: program.active_len(),
            h: perf_term(program, isa.latency()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultJson {
    pub rewrite: ProgramJson,
    pub cost: CostReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerdictJson>,
    pub provenance: Provenance,
}

impl ResultJson {
    pub fn new(r: &SearchResult, isa: &Isa) -> ResultJson {
        ResultJson {
            rewrite: ProgramJson::new(&r.rewrite, isa),
            cost: r.cost,
            verdict: r.verdict.as_ref().map(VerdictJson::from),
            provenance: r.provenance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseJson {
    pub proposals: u64,
    /// Size of the testcase set after refinement.
    pub testcases: usize,
    pub stats: EvalStats,
    pub cancelled: bool,
    pub candidates: Vec<ResultJson>,
    pub bests: Vec<ResultJson>,
}

impl PhaseJson {
    pub fn new(p: &PhaseOutcome, isa: &Isa) -> PhaseJson {
        PhaseJson {
            proposals: p.proposals,
            testcases: p.tests.len(),
            stats: p.stats,
            cancelled: p.cancelled,
            candidates: p.candidates.iter().map(|r| ResultJson::new(r, isa)).collect(),
            bests: p.bests.iter().map(|r| ResultJson::new(r, isa)).collect(),
        }
    }
}

/// Report of `synthesize`, `optimize` and `run`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub schema: u32,
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
    pub master_seed: u64,
    pub target: ProgramJson,
    pub status: Status,
    pub best: Option<ResultJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<PhaseJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimization: Option<PhaseJson>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let push = |out: &mut String, k: &str, v: String| out.push_str(&format!("{k:<14}{v}\n"));
        if let Some(k) = &self.kernel {
            push(&mut out, "kernel", k.clone());
        }
        push(&mut out, "status", format!("{:?}", self.status).to_lowercase());
        push(
            &mut out,
            "target",
            format!("{} instructions, H = {}", self.target.active_len, self.target.h),
        );
        for (name, phase) in [("synthesis", &self.synthesis), ("optimization", &self.optimization)] {
            if let Some(p) = phase {
                push(
                    &mut out,
                    name,
                    format!(
                        "{} proposals, {} candidates, {} testcases{}",
                        p.proposals,
                        p.candidates.len(),
                        p.testcases,
                        if p.cancelled { ", cancelled" } else { "" }
                    ),
                );
            }
        }
        match &self.best {
            Some(b) => {
                let verdict = b.verdict.as_ref().map_or("none", |v| v.status);
                push(
                    &mut out,
                    "best",
                    format!(
                        "{} instructions, H = {}, verdict {verdict}",
                        b.rewrite.active_len, b.rewrite.h
                    ),
                );
                out.push('\n');
                out.push_str(&b.rewrite.text);
            }
            None => push(&mut out, "best", "none".into()),
        }
        out
    }
}

/// Report of `verify`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub schema: u32,
    pub target: ProgramJson,
    pub rewrite: ProgramJson,
    pub verdict: VerdictJson,
}

impl VerifyReport {
    pub fn exit_code(&self) -> i32 {
        match self.verdict.status {
            "proven" => exit::PROVEN,
            "refuted" => exit::REFUTED,
            _ => exit::UNVERIFIED,
        }
    }
}

/// One row of the `bench` table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub kernel: String,
    pub h_target: u64,
    pub h_found: Option<u64>,
    pub h_golden: u64,
    pub status: Status,
    /// Synthesis produced a correct candidate.
    pub synthesized: bool,
    pub expected: crate::config::Expectation,
    pub found_len: Option<usize>,
    pub found: Option<String>,
    pub proposals: u64,
    pub proposals_per_sec: f64,
    pub testcase_evals_per_sec: f64,
    /// Raw emulator throughput on the target over its testcases.
    pub executions_per_sec: f64,
    pub seconds: f64,
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut out = format!(
        "{:<12} {:>8} {:>7} {:>8} {:<11} {:<6} {:>10} {:>12} {:>12} {:>12} {:>8}\n",
        "kernel", "H(T)", "H(R)", "H(gold)", "status", "synth", "proposals", "prop/s", "evals/s", "exec/s", "secs"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:>8} {:>7} {:>8} {:<11} {:<6} {:>10} {:>12.0} {:>12.0} {:>12.0} {:>8.1}\n",
            r.kernel,
            r.h_target,
            r.h_found.map_or("-".into(), |h| h.to_string()),
            r.h_golden,
            format!("{:?}", r.status).to_lowercase(),
            if r.synthesized { "yes" } else { "no" },
            r.proposals,
            r.proposals_per_sec,
            r.testcase_evals_per_sec,
            r.executions_per_sec,
            r.seconds,
        ));
    }
    out
}
