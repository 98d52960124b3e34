//! The two-phase pipeline: synthesis chains from random starts, then
//! optimization chains from the target and the synthesized candidates,
//! then reranking.
//!
//! Chains run in lock-step epochs of `epoch` proposals on the rayon pool.
//! Between epochs the coordinator collects counterexamples in worker order
//! and hands every new one to every chain, so results depend only on the
//! seeds and the proposal budgets, never on thread scheduling.

use std::collections::HashMap;
use std::sync::atomic::AtomicBool;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{perf_term, CostParams, CostReport, Evaluator, Mode, Validation};
use crate::isa::{Instruction, Isa, Program};
use crate::mcmc::{random_program, Chain, Escalation, EvalStats, McmcParams, Objective, RunOptions, TraceRecord};
use crate::testgen::{TargetSpec, Testcase};
use crate::verify::{refine, Refinement, Verdict, Verifier, VerifyError};

/// A phase budget: a fixed number of proposals per chain, or wall time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    Proposals(u64),
    Seconds(f64),
}

impl Budget {
    fn is_zero(self) -> bool {
        match self {
            Budget::Proposals(n) => n == 0,
            Budget::Seconds(s) => s <= 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub synthesis_workers: usize,
    pub optimization_workers: usize,
    pub synthesis_budget: Budget,
    pub optimization_budget: Budget,
    pub rerank_window: f64,
    pub master_seed: u64,
    /// Proposals each chain runs between testcase exchanges.
    pub epoch: u64,
    /// Upper bound on the refined testcase set.
    pub testcase_cap: usize,
    /// Synthesized candidates carried into optimization besides the target.
    pub max_candidates: usize,
    /// Stop a synthesis chain at its first proven zero-cost rewrite.
    pub stop_on_proven: bool,
    /// Record every n-th proposal of each chain; 0 disables traces.
    pub trace_every: u64,
    pub escalation: Escalation,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            synthesis_workers: 4,
            optimization_workers: 4,
            synthesis_budget: Budget::Seconds(1800.0),
            optimization_budget: Budget::Seconds(1800.0),
            rerank_window: 0.20,
            master_seed: 0,
            epoch: 20_000,
            testcase_cap: 256,
            max_candidates: 8,
            stop_on_proven: true,
            trace_every: 0,
            escalation: Escalation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SearchError {
    #[error("no results to rerank")]
    Empty,
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.synthesis_workers == 0 || self.optimization_workers == 0 {
            return Err(SearchError::Config("worker counts must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rerank_window) {
            return Err(SearchError::Config("rerank_window must lie in [0, 1]".into()));
        }
        if self.epoch == 0 {
            return Err(SearchError::Config("epoch must be at least 1".into()));
        }
        if self.testcase_cap == 0 {
            return Err(SearchError::Config("testcase_cap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Synthesis,
    Optimization,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub phase: Phase,
    pub worker: usize,
    pub seed: u64,
    /// Proposals the chain had made when the search ended.
    pub proposals: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchResult {
    pub rewrite: Program,
    pub cost: CostReport,
    pub verdict: Option<Verdict>,
    pub provenance: Provenance,
}

impl SearchResult {
    /// Zero correctness cost and not refuted.
    pub fn is_correct(&self) -> bool {
        self.cost.eq_term == 0 && matches!(self.cost.validation, Validation::Proven | Validation::Unverified)
    }

    pub fn is_proven(&self) -> bool {
        self.is_correct() && self.cost.validation == Validation::Proven
    }
}

/// A chain's sampled trajectory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub phase: Phase,
    pub worker: usize,
    pub records: Vec<TraceRecord>,
}

/// Everything a phase produced.
#[derive(Clone, Debug)]
pub struct PhaseOutcome {
    /// Zero-cost rewrites, one per chain that found one, in worker order.
    pub candidates: Vec<SearchResult>,
    /// Each chain's lowest-cost rewrite, in worker order.
    pub bests: Vec<SearchResult>,
    /// The testcase set after refinement.
    pub tests: Vec<Testcase>,
    pub proposals: u64,
    pub stats: EvalStats,
    pub traces: Vec<ChainTrace>,
    pub cancelled: bool,
    pub elapsed: Duration,
}

/// Target, proposal universe, testcases and parameters of one job.
#[derive(Clone, Debug)]
pub struct Problem {
    pub spec: TargetSpec,
    pub isa: Isa,
    pub tests: Vec<Testcase>,
    pub mcmc: McmcParams,
    pub cost: CostParams,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of worker `worker` in `phase`, derived from the master seed only.
pub fn worker_seed(master: u64, phase: Phase, worker: usize) -> u64 {
    let tag = match phase {
        Phase::Synthesis => 1,
        Phase::Optimization => 2,
    };
    splitmix(splitmix(master ^ splitmix(tag)).wrapping_add(worker as u64))
}

fn add_stats(a: &mut EvalStats, b: &EvalStats) {
    a.evaluations += b.evaluations;
    a.testcase_runs += b.testcase_runs;
    a.early_exits += b.early_exits;
    a.verifications += b.verifications;
    a.refinements += b.refinements;
}

struct Worker<'a> {
    chain: Chain<'a>,
    seed: u64,
    stopped: bool,
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    problem: &Problem,
    verifier: &Verifier,
    cfg: &SearchConfig,
    phase: Phase,
    starts: Vec<Program>,
    params: McmcParams,
    budget: Budget,
    cancel: Option<&AtomicBool>,
) -> Result<PhaseOutcome, SearchError> {
    let clock = Instant::now();
    let cost = match phase {
        Phase::Synthesis => problem.cost.with_mode(Mode::Synthesis),
        Phase::Optimization => problem.cost.with_mode(Mode::Optimization),
    };
    let mut tests = problem.tests.clone();
    let latency = problem.isa.latency();
    let mut workers: Vec<Worker> = Vec::with_capacity(starts.len());
    if !budget.is_zero() {
        for (i, start) in starts.iter().enumerate() {
            let seed = worker_seed(cfg.master_seed, phase, i);
            let objective = Objective::new(tests.clone(), cost, latency, Some(verifier), cfg.testcase_cap);
            let chain = match Chain::new(&problem.isa, params, objective, start, seed) {
                Ok(c) => c.with_escalation(cfg.escalation),
                Err(VerifyError::Cancelled) => break,
                Err(e) => return Err(e.into()),
            };
            workers.push(Worker {
                chain,
                seed,
                stopped: false,
            });
        }
    }
    let options = RunOptions {
        trace_every: cfg.trace_every,
        stop_on_proven: cfg.stop_on_proven && phase == Phase::Synthesis,
    };
    let deadline = match budget {
        Budget::Seconds(s) => Some(clock + Duration::from_secs_f64(s.max(0.0))),
        Budget::Proposals(_) => None,
    };
    let mut remaining = match budget {
        Budget::Proposals(n) => n,
        Budget::Seconds(_) => u64::MAX,
    };
    let mut cancelled = workers.len() < starts.len() && !budget.is_zero();
    while remaining > 0 && !cancelled && !workers.iter().all(|w| w.stopped) {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            break;
        }
        let n = remaining.min(cfg.epoch);
        let errors: Vec<Option<VerifyError>> = workers
            .par_iter_mut()
            .map(|w| {
                if w.stopped {
                    return None;
                }
                let result = w.chain.run(n, options, cancel);
                w.stopped = w.chain.done(options);
                result.err()
            })
            .collect();
        remaining -= n;
        for e in errors.into_iter().flatten() {
            match e {
                VerifyError::Cancelled => cancelled = true,
                e => return Err(e.into()),
            }
        }
        if cancel.is_some_and(|c| c.load(std::sync::atomic::Ordering::Relaxed)) {
            cancelled = true;
        }
        // Exchange counterexamples in worker order.
        let mut fresh = Vec::new();
        for w in &mut workers {
            for cex in w.chain.objective_mut().take_counterexamples() {
                if refine(&mut tests, cex.clone(), cfg.testcase_cap) == Refinement::Added {
                    fresh.push(cex);
                }
            }
        }
        if !fresh.is_empty() {
            for w in &mut workers {
                if w.chain.objective_mut().add_testcases(&fresh) > 0 {
                    match w.chain.refresh() {
                        Ok(()) => {}
                        Err(VerifyError::Cancelled) => cancelled = true,
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }
    }

    let mut outcome = PhaseOutcome {
        candidates: Vec::new(),
        bests: Vec::new(),
        tests,
        proposals: 0,
        stats: EvalStats::default(),
        traces: Vec::new(),
        cancelled,
        elapsed: Duration::ZERO,
    };
    for (i, w) in workers.into_iter().enumerate() {
        add_stats(&mut outcome.stats, &w.chain.objective().stats);
        let state = w.chain.into_state();
        outcome.proposals += state.proposals;
        let provenance = Provenance {
            phase,
            worker: i,
            seed: w.seed,
            proposals: state.proposals,
        };
        let result = |(program, cost): (Program, CostReport)| SearchResult {
            rewrite: program.compacted(),
            cost,
            verdict: None,
            provenance,
        };
        if let Some(found) = state.best_correct.clone() {
            outcome.candidates.push(result(found));
        }
        outcome.bests.push(result(state.best.clone()));
        if cfg.trace_every > 0 {
            outcome.traces.push(ChainTrace {
                phase,
                worker: i,
                records: state.trace,
            });
        }
    }
    finalize(problem, verifier, &mut outcome.candidates, &outcome.tests, cost)?;
    outcome.elapsed = clock.elapsed();
    Ok(outcome)
}

/// Greedily drops instructions, last to first, whenever every testcase
/// still passes without them.
pub fn prune(program: &Program, tests: &[Testcase], cost: &CostParams) -> Program {
    let mut evaluator = Evaluator::new();
    let mut current = program.compacted();
    for i in (0..current.len()).rev() {
        let mut trial = current.clone();
        trial.set_slot(i, None);
        if evaluator.eq_prime(&trial, tests, cost).0 == 0 {
            current = trial;
        }
    }
    current.compacted()
}

/// Re-checks candidates against the final testcase set, drops any that
/// fail it, prunes the rest and attaches the verifier's verdict. A pruned
/// rewrite the verifier refutes is replaced by its unpruned original.
fn finalize(
    problem: &Problem,
    verifier: &Verifier,
    candidates: &mut Vec<SearchResult>,
    tests: &[Testcase],
    cost: CostParams,
) -> Result<(), SearchError> {
    let mut evaluator = Evaluator::new();
    let mut kept = Vec::new();
    'candidates: for mut c in candidates.drain(..) {
        let (eq, _) = evaluator.eq_prime(&c.rewrite, tests, &cost);
        if eq != 0 {
            continue;
        }
        let pruned = prune(&c.rewrite, tests, &cost);
        let mut options = vec![pruned];
        if options[0] != c.rewrite {
            options.push(c.rewrite.clone());
        }
        for rewrite in options {
            let verdict = match verifier.check(&rewrite) {
                Ok(v) => v,
                Err(VerifyError::Cancelled) => {
                    kept.push(c);
                    continue 'candidates;
                }
                Err(e) => return Err(e.into()),
            };
            let validation = match &verdict {
                Verdict::Proven { .. } => Validation::Proven,
                Verdict::Refuted { .. } => continue,
                Verdict::Inconclusive { .. } => Validation::Unverified,
            };
            let perf = match cost.mode {
                Mode::Synthesis => 0,
                Mode::Optimization => perf_term(&rewrite, problem.isa.latency()),
            };
            c.rewrite = rewrite;
            c.cost = CostReport::new(0, 0, perf, validation);
            c.verdict = Some(verdict);
            kept.push(c);
            continue 'candidates;
        }
    }
    *candidates = kept;
    Ok(())
}

/// Synthesis: chains from random programs, correctness cost only.
pub fn synthesize(
    problem: &Problem,
    verifier: &Verifier,
    cfg: &SearchConfig,
    cancel: Option<&AtomicBool>,
) -> Result<PhaseOutcome, SearchError> {
    cfg.validate()?;
    let length = problem.mcmc.length;
    let starts = (0..cfg.synthesis_workers)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(worker_seed(cfg.master_seed, Phase::Synthesis, i) ^ 0x5747_4152_5453);
            let active = rng.gen_range(1..=length);
            random_program(&problem.isa, length, active, &mut rng)
        })
        .collect();
    run_phase(
        problem,
        verifier,
        cfg,
        Phase::Synthesis,
        starts,
        problem.mcmc,
        cfg.synthesis_budget,
        cancel,
    )
}

/// Optimization: chains from `starts` (the target first), correctness plus
/// latency. Only rewrites that pass the final testcase set and are not
/// refuted are returned as candidates.
pub fn optimize(
    problem: &Problem,
    verifier: &Verifier,
    starts: &[Program],
    cfg: &SearchConfig,
    cancel: Option<&AtomicBool>,
) -> Result<PhaseOutcome, SearchError> {
    cfg.validate()?;
    let mut pool = vec![problem.spec.target.compacted()];
    for s in starts {
        let text = s.compacted().to_string();
        if !pool.iter().any(|p| p.to_string() == text) {
            pool.push(s.compacted());
        }
    }
    let longest = pool.iter().map(Program::active_len).max().unwrap_or(0);
    let params = McmcParams {
        length: problem.mcmc.length.max(longest),
        ..problem.mcmc
    };
    let chain_starts = (0..cfg.optimization_workers)
        .map(|i| pool[i % pool.len()].resized(params.length).expect("capacity covers the start"))
        .collect();
    let problem = Problem {
        tests: problem.tests.clone(),
        ..problem.clone()
    };
    run_phase(
        &problem,
        verifier,
        cfg,
        Phase::Optimization,
        chain_starts,
        params,
        cfg.optimization_budget,
        cancel,
    )
}

/// Latency-weighted emulated cost over `tests`. Programs are straight-line,
/// so every active instruction executes once per testcase.
pub fn emulated_cost(program: &Program, tests: &[Testcase], isa: &Isa) -> u64 {
    tests.len() as u64 * perf_term(program, isa.latency())
}

/// Keeps results within `window` of the lowest total and returns the one
/// with the lowest emulated cost; ties go to lower H, then fewer active
/// instructions, then program text.
pub fn rerank(results: &[SearchResult], tests: &[Testcase], isa: &Isa, window: f64) -> Result<SearchResult, SearchError> {
    let min = results.iter().map(|r| r.cost.total).min().ok_or(SearchError::Empty)?;
    let limit = (1.0 + window) * min as f64;
    results
        .iter()
        .filter(|r| r.cost.total as f64 <= limit)
        .min_by_key(|r| {
            (
                emulated_cost(&r.rewrite, tests, isa),
                perf_term(&r.rewrite, isa.latency()),
                r.rewrite.active_len(),
                r.rewrite.to_string(),
                r.provenance.phase == Phase::Synthesis,
                r.provenance.worker,
            )
        })
        .cloned()
        .ok_or(SearchError::Empty)
}

/// Percentage of the reference's active instructions (as a multiset) that
/// also appear in `current`.
pub fn overlap_diagnostic(current: &Program, reference: &Program) -> f64 {
    let total = reference.active_len();
    if total == 0 {
        return 100.0;
    }
    let mut counts: HashMap<Instruction, usize> = HashMap::new();
    for i in current.instructions() {
        *counts.entry(*i).or_default() += 1;
    }
    let shared = reference
        .instructions()
        .filter(|i| match counts.get_mut(i) {
            Some(n) if *n > 0 => {
                *n -= 1;
                true
            }
            _ => false,
        })
        .count();
    100.0 * shared as f64 / total as f64
}

/// Result of the full pipeline.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub synthesis: PhaseOutcome,
    pub optimization: PhaseOutcome,
    /// The reranked winner among the optimization candidates.
    pub best: Option<SearchResult>,
}

/// Synthesis, then optimization from the target and the synthesized
/// candidates, then reranking.
pub fn run(
    problem: &Problem,
    verifier: &Verifier,
    cfg: &SearchConfig,
    cancel: Option<&AtomicBool>,
) -> Result<RunOutcome, SearchError> {
    let synthesis = synthesize(problem, verifier, cfg, cancel)?;
    let starts: Vec<Program> = synthesis
        .candidates
        .iter()
        .take(cfg.max_candidates)
        .map(|c| c.rewrite.clone())
        .collect();
    let refined = Problem {
        tests: synthesis.tests.clone(),
        ..problem.clone()
    };
    let optimization = optimize(&refined, verifier, &starts, cfg, cancel)?;
    let best = if optimization.candidates.is_empty() {
        None
    } else {
        Some(rerank(
            &optimization.candidates,
            &optimization.tests,
            &problem.isa,
            cfg.rerank_window,
        )?)
    };
    Ok(RunOutcome {
        synthesis,
        optimization,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{parse_program, Register};
    use crate::testgen::generate;
    use crate::verify::VerifyConfig;

    fn problem(target: &str, length: usize) -> Problem {
        let spec = TargetSpec::new(
            parse_program(target, 16).unwrap(),
            vec![Register::q(0), Register::q(1)],
            vec![Register::q(0)],
        );
        let tests = generate(&spec, 16, 1).unwrap();
        Problem {
            isa: Isa::for_target(&spec.target),
            spec,
            tests,
            mcmc: McmcParams {
                length,
                ..McmcParams::default()
            },
            cost: CostParams::default(),
        }
    }

    fn result(text: &str, total: u64, worker: usize) -> SearchResult {
        SearchResult {
            rewrite: parse_program(text, 4).unwrap(),
            cost: CostReport::new(0, 0, total, Validation::Proven),
            verdict: None,
            provenance: Provenance {
                phase: Phase::Optimization,
                worker,
                seed: 0,
                proposals: 0,
            },
        }
    }

    #[test]
    fn seeds_differ_by_worker_and_phase() {
        let a = worker_seed(1, Phase::Synthesis, 0);
        assert_ne!(a, worker_seed(1, Phase::Synthesis, 1));
        assert_ne!(a, worker_seed(1, Phase::Optimization, 0));
        assert_eq!(a, worker_seed(1, Phase::Synthesis, 0));
    }

    #[test]
    fn rerank_window_and_ties() {
        let isa = Isa::builder().build();
        let a = result("addq r1, r0\naddq r1, r0", 100, 0);
        let b = result("negq r0", 125, 1);
        assert_eq!(rerank(&[a.clone(), b.clone()], &[], &isa, 0.2).unwrap(), a);
        let c = result("negq r0\nnotq r0", 118, 1);
        let d = result("addq r1, r0\nsubq r1, r0", 100, 2);
        // Equal emulated cost and H: the shorter... both have two
        // instructions, so text order decides.
        let w = rerank(&[c.clone(), d.clone()], &[], &isa, 0.2).unwrap();
        assert_eq!(w, rerank(&[d, c], &[], &isa, 0.2).unwrap());
        assert!(matches!(rerank(&[], &[], &isa, 0.2), Err(SearchError::Empty)));
    }

    #[test]
    fn overlap() {
        let p = parse_program("addq r1, r0\nnegq r0", 4).unwrap();
        let q = parse_program("notq r2", 4).unwrap();
        let r = parse_program("addq r1, r0\nnegq r0\nnotq r2", 4).unwrap();
        assert_eq!(overlap_diagnostic(&p, &p), 100.0);
        assert_eq!(overlap_diagnostic(&q, &p), 0.0);
        assert_eq!(overlap_diagnostic(&r, &p), 100.0);
        assert_eq!(overlap_diagnostic(&parse_program("negq r0", 4).unwrap(), &p), 50.0);
    }

    #[test]
    fn zero_budget_synthesis_is_empty() {
        let p = problem("shlq 1, r0", 8);
        let v = Verifier::new(p.spec.clone(), VerifyConfig::default());
        let cfg = SearchConfig {
            synthesis_budget: Budget::Proposals(0),
            ..SearchConfig::default()
        };
        let out = synthesize(&p, &v, &cfg, None).unwrap();
        assert!(out.candidates.is_empty());
        assert_eq!(out.proposals, 0);
    }

    #[test]
    fn synthesizes_doubling() {
        let p = problem("shlq 1, r0", 8);
        let v = Verifier::new(p.spec.clone(), VerifyConfig::default());
        let cfg = SearchConfig {
            synthesis_workers: 2,
            synthesis_budget: Budget::Proposals(1_000_000),
            master_seed: 7,
            ..SearchConfig::default()
        };
        let out = synthesize(&p, &v, &cfg, None).unwrap();
        assert!(out.candidates.iter().any(|c| c.is_proven()), "{:?}", out.bests);
    }

    #[test]
    fn prune_drops_dead_instructions_only() {
        let p = problem("movq r1, r0\naddq r0, r0", 8);
        let padded = parse_program("movq r1, r3\nmovq r1, r0\nnotq r3\naddq r0, r0\nmovq 7, r2", 8).unwrap();
        let pruned = prune(&padded, &p.tests, &p.cost);
        assert_eq!(pruned.to_string(), "movq r1, r0\naddq r0, r0\n");
        // A program that already fails keeps every instruction it has.
        let wrong = parse_program("movq r1, r0\nnotq r3", 8).unwrap();
        assert_eq!(prune(&wrong, &p.tests, &p.cost), wrong);
    }

    #[test]
    fn optimization_shortens_mov_chain() {
        let p = problem("movq r1, r2\nmovq r2, r3\nmovq r3, r4\nmovq r4, r5\nmovq r5, r0", 8);
        let v = Verifier::new(p.spec.clone(), VerifyConfig::default());
        let cfg = SearchConfig {
            optimization_workers: 2,
            optimization_budget: Budget::Proposals(200_000),
            master_seed: 3,
            ..SearchConfig::default()
        };
        let out = optimize(&p, &v, &[], &cfg, None).unwrap();
        let best = rerank(&out.candidates, &out.tests, &p.isa, 0.2).unwrap();
        assert!(best.is_proven());
        assert_eq!(best.rewrite.to_string(), "movq r1, r0\n");
        assert_eq!(best.cost.perf_term, 1);
    }
}
