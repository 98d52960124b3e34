//! Subcommand implementations. Each returns the process exit code.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::time::{Duration, Instant};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use superopt::cost::{perf_term, Metric};
use superopt::isa::{parse_listing, Isa, Program};
use superopt::machine::{execute_into, Effects, MachineState};
use superopt::search::{self, rerank, Budget, PhaseOutcome, Problem, SearchResult};
use superopt::testgen::{save_testcases, testcases_to_json, Testcase};
use superopt::verify::{verify_cancellable, Verifier};

use crate::config::{JobConfig, CONFIG_ENV};
use crate::corpus;
use crate::report::{self, bench_table, BenchRow, PhaseJson, ProgramJson, ResultJson, RunReport, Status, VerdictJson, VerifyReport};
use crate::trace::{read_trace, write_series, write_trace, Series};

#[derive(Debug, Parser)]
#[command(name = "superopt", version, about = "Stochastic superoptimizer for loop-free x86-like code")]
pub struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate testcases for a target and write them as JSON.
    Testgen {
        #[command(flatten)]
        job: JobArgs,
        /// Output file; stdout when absent.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Synthesis phase only: search from random programs.
    Synthesize {
        #[command(flatten)]
        job: JobArgs,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Optimization phase only: search from the target and extra starts.
    Optimize {
        #[command(flatten)]
        job: JobArgs,
        #[command(flatten)]
        search: SearchArgs,
        /// Additional start programs (assembly files).
        #[arg(long)]
        start: Vec<PathBuf>,
    },
    /// Synthesis, optimization and reranking.
    Run {
        #[command(flatten)]
        job: JobArgs,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Check a rewrite against the target.
    Verify {
        #[command(flatten)]
        job: JobArgs,
        /// Rewrite file; the target itself when neither this nor
        /// --rewrite-text nor --golden is given.
        #[arg(long)]
        rewrite: Option<PathBuf>,
        #[arg(long)]
        rewrite_text: Option<String>,
        /// Check the corpus kernel's golden rewrite.
        #[arg(long)]
        golden: bool,
        #[arg(long)]
        width_cap: Option<u32>,
        #[arg(long)]
        json: bool,
    },
    /// Run the pipeline over corpus kernels and tabulate the results.
    Bench {
        /// Kernel names; every kernel when empty.
        kernels: Vec<String>,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Turn a trace file into CSV series.
    Stats {
        trace: PathBuf,
        #[arg(long, value_enum, default_value = "cost")]
        series: Series,
        /// Reference rewrite file for the overlap series.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct JobArgs {
    /// Job config file.
    #[arg(long, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Use a corpus kernel instead of a config file.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Testcase file to use instead of generating testcases.
    #[arg(long)]
    pub testcases: Option<PathBuf>,
    /// Number of testcases to generate.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub testgen_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Proposals per chain in both phases.
    #[arg(long)]
    pub proposals: Option<u64>,
    #[arg(long)]
    pub synthesis_proposals: Option<u64>,
    #[arg(long)]
    pub optimization_proposals: Option<u64>,
    /// Wall time per phase, in seconds.
    #[arg(long)]
    pub seconds: Option<f64>,
    /// Chains per phase.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Program capacity ℓ.
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Use the strict equality metric.
    #[arg(long)]
    pub strict_metric: bool,
    /// Write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    pub json: bool,
    /// Write chain traces (JSON lines) here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub trace_every: u64,
}

/// Raised for problems the user must fix on the command line.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(String);

impl JobArgs {
    pub fn load(&self) -> anyhow::Result<JobConfig> {
        let mut cfg = match (&self.kernel, &self.config) {
            (Some(name), _) => corpus::kernel(name)?,
            (None, Some(path)) => JobConfig::load(path)?,
            (None, None) => {
                return Err(UsageError(format!(
                    "no job given: pass --config FILE, --kernel NAME or set {CONFIG_ENV}"
                ))
                .into())
            }
        };
        if let Some(p) = &self.testcases {
            cfg.testcases.path = Some(p.clone());
        }
        if let Some(n) = self.count {
            cfg.testcases.count = n;
        }
        if let Some(s) = self.testgen_seed {
            cfg.testcases.seed = s;
        }
        Ok(cfg)
    }
}

impl SearchArgs {
    pub fn apply(&self, cfg: &mut JobConfig) {
        let s = &mut cfg.search;
        if let Some(seed) = self.seed {
            s.master_seed = seed;
        }
        if let Some(secs) = self.seconds {
            s.synthesis_budget = Budget::Seconds(secs);
            s.optimization_budget = Budget::Seconds(secs);
        }
        if let Some(n) = self.proposals {
            s.synthesis_budget = Budget::Proposals(n);
            s.optimization_budget = Budget::Proposals(n);
        }
        if let Some(n) = self.synthesis_proposals {
            s.synthesis_budget = Budget::Proposals(n);
        }
        if let Some(n) = self.optimization_proposals {
            s.optimization_budget = Budget::Proposals(n);
        }
        if let Some(w) = self.workers {
            s.synthesis_workers = w;
            s.optimization_workers = w;
        }
        if self.trace.is_some() {
            s.trace_every = self.trace_every.max(1);
        }
        if let Some(l) = self.length {
            cfg.mcmc.length = l;
        }
        if let Some(b) = self.beta {
            cfg.mcmc.beta = b;
        }
        if self.strict_metric {
            cfg.cost.metric = Metric::Strict;
        }
    }
}

static CANCEL: AtomicBool = AtomicBool::new(false);

/// The flag an interrupt handler should set to stop running searches.
pub fn cancel_flag() -> &'static AtomicBool {
    &CANCEL
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn warn_zero_budgets(cfg: &JobConfig, synthesis: bool, optimization: bool) {
    let zero = |b: Budget| matches!(b, Budget::Proposals(0)) || matches!(b, Budget::Seconds(s) if s <= 0.0);
    if synthesis && zero(cfg.search.synthesis_budget) {
        log::warn!("synthesis budget is zero; no synthesis chain will run");
    }
    if optimization && zero(cfg.search.optimization_budget) {
        log::warn!("optimization budget is zero; no optimization chain will run");
    }
}

pub fn execute(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Testgen { job, out } => cmd_testgen(&job, out.as_deref()),
        Command::Synthesize { job, search } => cmd_search(&job, &search, Mode::Synthesize, &[]),
        Command::Optimize { job, search, start } => cmd_search(&job, &search, Mode::Optimize, &start),
        Command::Run { job, search } => cmd_search(&job, &search, Mode::Run, &[]),
        Command::Verify {
            job,
            rewrite,
            rewrite_text,
            golden,
            width_cap,
            json,
        } => cmd_verify(&job, rewrite.as_deref(), rewrite_text.as_deref(), golden, width_cap, json),
        Command::Bench { kernels, search } => cmd_bench(&kernels, &search),
        Command::Stats {
            trace,
            series,
            reference,
            out,
        } => cmd_stats(&trace, series, reference.as_deref(), out.as_deref()),
    }
}

pub fn cmd_testgen(job: &JobArgs, out: Option<&Path>) -> anyhow::Result<i32> {
    let cfg = job.load()?;
    cfg.validate()?;
    let spec = cfg.target_spec()?;
    let tests = cfg.testcases(&spec)?;
    match out {
        Some(path) => save_testcases(path, &tests).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{}", testcases_to_json(&tests)),
    }
    eprintln!(
        "{} testcases, live in: {}, live out: {}",
        tests.len(),
        join(spec.live_in.iter()),
        join(spec.live_out.regs.iter())
    );
    Ok(report::exit::PROVEN)
}

fn join<T: std::fmt::Display>(items: impl Iterator<Item = T>) -> String {
    items.map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Synthesize,
    Optimize,
    Run,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Synthesize => "synthesize",
            Mode::Optimize => "optimize",
            Mode::Run => "run",
        }
    }
}

/// Everything a search command produced.
pub struct Outcome {
    pub report: RunReport,
    pub synthesis: Option<PhaseOutcome>,
    pub optimization: Option<PhaseOutcome>,
    pub problem: Problem,
}

/// Runs the pipeline (or one phase of it) for a loaded config.
pub fn search_job(cfg: &JobConfig, mode: Mode, starts: &[Program], cancel: Option<&AtomicBool>) -> anyhow::Result<Outcome> {
    let problem = cfg.problem()?;
    warn_zero_budgets(cfg, mode != Mode::Optimize, mode != Mode::Synthesize);
    let verifier = Verifier::new(problem.spec.clone(), cfg.verify.clone());
    let pick = |phase: &PhaseOutcome| -> anyhow::Result<Option<SearchResult>> {
        if phase.candidates.is_empty() {
            return Ok(None);
        }
        Ok(Some(rerank(&phase.candidates, &phase.tests, &problem.isa, cfg.search.rerank_window)?))
    };
    let (synthesis, optimization, best) = match mode {
        Mode::Synthesize => {
            let s = search::synthesize(&problem, &verifier, &cfg.search, cancel)?;
            let best = pick(&s)?;
            (Some(s), None, best)
        }
        Mode::Optimize => {
            let o = search::optimize(&problem, &verifier, starts, &cfg.search, cancel)?;
            let best = pick(&o)?;
            (None, Some(o), best)
        }
        Mode::Run => {
            let r = search::run(&problem, &verifier, &cfg.search, cancel)?;
            (Some(r.synthesis), Some(r.optimization), r.best)
        }
    };
    let report = RunReport {
        schema: report::REPORT_SCHEMA,
        command: mode.name(),
        kernel: cfg.kernel.as_ref().map(|k| k.name.clone()),
        master_seed: cfg.search.master_seed,
        target: ProgramJson::new(&problem.spec.target, &problem.isa),
        status: Status::of(best.as_ref()),
        best: best.as_ref().map(|b| ResultJson::new(b, &problem.isa)),
        synthesis: synthesis.as_ref().map(|p| PhaseJson::new(p, &problem.isa)),
        optimization: optimization.as_ref().map(|p| PhaseJson::new(p, &problem.isa)),
    };
    Ok(Outcome {
        report,
        synthesis,
        optimization,
        problem,
    })
}

fn cmd_search(job: &JobArgs, args: &SearchArgs, mode: Mode, start_files: &[PathBuf]) -> anyhow::Result<i32> {
    let mut cfg = job.load()?;
    args.apply(&mut cfg);
    let mut starts = Vec::new();
    for path in start_files {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        starts.push(parse_listing(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    let clock = Instant::now();
    let outcome = search_job(&cfg, mode, &starts, Some(cancel_flag()))?;
    let report = &outcome.report;
    let json = report.to_json();
    if let Some(path) = &args.report {
        write_file(path, &json)?;
    }
    if let Some(path) = &args.trace {
        let mut traces = Vec::new();
        for phase in [&outcome.synthesis, &outcome.optimization].into_iter().flatten() {
            traces.extend(phase.traces.iter().cloned());
        }
        let reference = report.best.as_ref().map(|b| b.rewrite.text.as_str());
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_trace(BufWriter::new(file), &report.target.text, reference, &traces)?;
    }
    if args.json {
        print!("{json}");
    } else {
        print!("{}", report.table());
    }
    if report.synthesis.as_ref().is_some_and(|p| p.cancelled) || report.optimization.as_ref().is_some_and(|p| p.cancelled) {
        eprintln!("interrupted; reporting the best rewrite found so far");
    }
    log::info!("{} finished in {:.1}s", mode.name(), clock.elapsed().as_secs_f64());
    Ok(report.status.exit_code())
}

fn cmd_verify(
    job: &JobArgs,
    rewrite: Option<&Path>,
    rewrite_text: Option<&str>,
    golden: bool,
    width_cap: Option<u32>,
    json: bool,
) -> anyhow::Result<i32> {
    let mut cfg = job.load()?;
    if let Some(w) = width_cap {
        cfg.verify.width_cap = w;
        cfg.verify.min_width = cfg.verify.min_width.min(w);
    }
    cfg.validate()?;
    let spec = cfg.target_spec()?;
    let isa = cfg.build_isa(&spec.target)?;
    let program = match (rewrite, rewrite_text, golden) {
        (Some(path), None, false) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_listing(&text)?
        }
        (None, Some(text), false) => parse_listing(text)?,
        (None, None, true) => corpus::golden(&cfg)?,
        (None, None, false) => spec.target.clone(),
        _ => return Err(UsageError("give at most one of --rewrite, --rewrite-text, --golden".into()).into()),
    };
    let verdict = verify_cancellable(&spec, &program, &cfg.verify, Some(cancel_flag()))?;
    let report = VerifyReport {
        schema: report::REPORT_SCHEMA,
        target: ProgramJson::new(&spec.target, &isa),
        rewrite: ProgramJson::new(&program, &isa),
        verdict: VerdictJson::from(&verdict),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        let v = &report.verdict;
        match (v.width, v.inputs, v.trials) {
            (Some(w), Some(n), _) => println!("proven equal on {n} inputs at effective width {w}"),
            (_, _, Some(t)) => println!("inconclusive: no difference in {t} random inputs"),
            _ => {
                println!("refuted");
                if let Some(cex) = &v.counterexample {
                    println!("{}", serde_json::to_string_pretty(cex)?);
                }
            }
        }
    }
    Ok(report.exit_code())
}

/// Emulator throughput: executions of `program` per second over `tests`.
pub fn throughput(program: &Program, tests: &[Testcase], duration: Duration) -> f64 {
    if tests.is_empty() {
        return 0.0;
    }
    let mut out = MachineState::new();
    let mut effects = Effects::default();
    let mut runs = 0u64;
    let clock = Instant::now();
    loop {
        for t in tests {
            execute_into(program, &t.input, &t.sandbox, &mut out, &mut effects);
        }
        runs += tests.len() as u64;
        let elapsed = clock.elapsed();
        if elapsed >= duration {
            return runs as f64 / elapsed.as_secs_f64();
        }
    }
}

/// Runs one corpus kernel under the standard settings plus `args`.
pub fn bench_kernel(name: &str, args: &SearchArgs, cancel: Option<&AtomicBool>) -> anyhow::Result<(BenchRow, RunReport)> {
    let mut cfg = corpus::kernel(name)?;
    args.apply(&mut cfg);
    let meta = corpus::metadata(&cfg)?.clone();
    let clock = Instant::now();
    let outcome = search_job(&cfg, Mode::Run, &[], cancel)?;
    let seconds = clock.elapsed().as_secs_f64();
    let isa: &Isa = &outcome.problem.isa;
    let golden = parse_listing(&meta.golden)?;
    let report = outcome.report;
    let proposals: u64 = [&outcome.synthesis, &outcome.optimization]
        .into_iter()
        .flatten()
        .map(|p| p.proposals)
        .sum();
    let runs: u64 = [&outcome.synthesis, &outcome.optimization]
        .into_iter()
        .flatten()
        .map(|p| p.stats.testcase_runs)
        .sum();
    let synthesized = outcome
        .synthesis
        .as_ref()
        .is_some_and(|s| s.candidates.iter().any(SearchResult::is_correct));
    let row = BenchRow {
        kernel: meta.name.clone(),
        h_target: perf_term(&outcome.problem.spec.target, isa.latency()),
        h_found: report.best.as_ref().map(|b| b.rewrite.h),
        h_golden: perf_term(&golden, isa.latency()),
        status: report.status,
        synthesized,
        expected: meta.expect,
        found_len: report.best.as_ref().map(|b| b.rewrite.active_len),
        found: report.best.as_ref().map(|b| b.rewrite.text.clone()),
        proposals,
        proposals_per_sec: proposals as f64 / seconds.max(1e-9),
        testcase_evals_per_sec: runs as f64 / seconds.max(1e-9),
        executions_per_sec: throughput(&outcome.problem.spec.target, &outcome.problem.tests, Duration::from_millis(200)),
        seconds,
    };
    Ok((row, report))
}

fn cmd_bench(kernels: &[String], args: &SearchArgs) -> anyhow::Result<i32> {
    let names: Vec<String> = if kernels.is_empty() {
        corpus::names().map(str::to_string).collect()
    } else {
        kernels.to_vec()
    };
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for name in &names {
        eprintln!("bench: {name}");
        let (row, report) = bench_kernel(name, args, Some(cancel_flag()))?;
        rows.push(row);
        reports.push(report);
        if cancel_flag().load(std::sync::atomic::Ordering::Relaxed) {
            break;
        }
    }
    let doc = serde_json::json!({ "schema": report::REPORT_SCHEMA, "rows": rows, "reports": reports });
    if let Some(path) = &args.report {
        write_file(path, &format!("{}\n", serde_json::to_string_pretty(&doc)?))?;
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        print!("{}", bench_table(&rows));
    }
    Ok(report::exit::PROVEN)
}

fn cmd_stats(trace: &Path, series: Series, reference: Option<&Path>, out: Option<&Path>) -> anyhow::Result<i32> {
    let file = File::open(trace).with_context(|| format!("opening {}", trace.display()))?;
    let lines = read_trace(BufReader::new(file))?;
    let reference = match reference {
        Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    match out {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_series(BufWriter::new(file), &lines, series, reference.as_deref())?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_series(&mut lock, &lines, series, reference.as_deref())?;
            lock.flush()?;
        }
    }
    Ok(report::exit::PROVEN)
}

/// Maps an error to its exit code.
pub fn error_code(e: &anyhow::Error) -> i32 {
    if e.downcast_ref::<UsageError>().is_some() {
        report::exit::USAGE
    } else {
        report::exit::ERROR
    }
}
