//! Metropolis sampling over fixed-capacity programs.
//!
//! A proposal applies one of four moves: replace an opcode within its
//! signature class, replace one operand within its class, swap two slots,
//! or overwrite a slot with UNUSED or a fresh random instruction. The
//! proposal is accepted when its cost falls strictly below
//! `c(R) - ln(u) / beta` for `u` uniform in (0, 1], which lets evaluation
//! stop as soon as the running cost reaches that bound.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{escalate, perf_term, Bounded, CostParams, CostReport, Evaluator, Mode, Validation};
use crate::isa::{Instruction, Isa, LatencyTable, Operand, Program, DEFAULT_LENGTH};
use crate::testgen::Testcase;
use crate::verify::{refine, Refinement, Verdict, Verifier, VerifyError};

/// How the acceptance test treats the proposal distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    /// Treat the proposal distribution as symmetric.
    #[default]
    None,
    /// Weight acceptance by the exact reverse/forward proposal ratio.
    Hastings,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcParams {
    pub p_c: f64,
    pub p_o: f64,
    pub p_s: f64,
    pub p_i: f64,
    /// Probability that an Instruction move proposes UNUSED.
    pub p_u: f64,
    pub beta: f64,
    /// Program capacity ℓ.
    pub length: usize,
    pub correction: Correction,
}

impl Default for McmcParams {
    fn default() -> Self {
        McmcParams {
            p_c: 0.16,
            p_o: 0.5,
            p_s: 0.16,
            p_i: 0.16,
            p_u: 0.16,
            beta: 0.1,
            length: DEFAULT_LENGTH,
            correction: Correction::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamError {
    #[error("move probabilities must sum to at most 1 (found {0})")]
    MoveSum(f64),
    #[error("`{0}` must lie in [0, 1]")]
    Probability(&'static str),
    #[error("beta must be positive and finite")]
    Beta,
    #[error("program length must be at least 1")]
    Length,
}

impl McmcParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        for (name, p) in [
            ("p_c", self.p_c),
            ("p_o", self.p_o),
            ("p_s", self.p_s),
            ("p_i", self.p_i),
            ("p_u", self.p_u),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ParamError::Probability(name));
            }
        }
        let sum = self.p_c + self.p_o + self.p_s + self.p_i;
        if sum > 1.0 + 1e-9 || sum <= 0.0 {
            return Err(ParamError::MoveSum(sum));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(ParamError::Beta);
        }
        if self.length == 0 {
            return Err(ParamError::Length);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Opcode,
    Operand,
    Swap,
    Instruction,
    /// Leaves the program unchanged; drawn with the probability mass the
    /// four real moves leave over (0.02 under the defaults).
    Identity,
}

impl MoveKind {
    pub const ALL: [MoveKind; 5] = [
        MoveKind::Opcode,
        MoveKind::Operand,
        MoveKind::Swap,
        MoveKind::Instruction,
        MoveKind::Identity,
    ];
}

/// What a proposal did. `forward` and `backward` count the equally likely
/// choices the move had when making this change and when undoing it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Move {
    /// Kind drawn from the move mix.
    pub requested: MoveKind,
    /// Kind actually applied (Opcode and Operand fall through to
    /// Instruction on a program with no active slot).
    pub applied: MoveKind,
    pub slots: (usize, usize),
    pub forward: usize,
    pub backward: usize,
}

fn random_instruction<R: Rng>(isa: &Isa, rng: &mut R) -> Instruction {
    let opcodes = isa.opcodes();
    let opcode = opcodes[rng.gen_range(0..opcodes.len())];
    let kinds = opcode.signature();
    let operands: Vec<Operand> = kinds
        .kinds()
        .iter()
        .map(|&k| isa.operand_domain_get(k, rng.gen_range(0..isa.operand_domain_len(k))))
        .collect();
    Instruction::new(opcode, &operands).expect("domains match their kinds")
}

/// Draws a random program with `active` leading instructions.
pub fn random_program<R: Rng>(isa: &Isa, length: usize, active: usize, rng: &mut R) -> Program {
    let instructions: Vec<Instruction> = (0..active.min(length)).map(|_| random_instruction(isa, rng)).collect();
    Program::from_instructions(&instructions, length).expect("fits")
}

fn draw_kind<R: Rng>(params: &McmcParams, rng: &mut R) -> MoveKind {
    let x: f64 = rng.gen();
    if x < params.p_c {
        MoveKind::Opcode
    } else if x < params.p_c + params.p_o {
        MoveKind::Operand
    } else if x < params.p_c + params.p_o + params.p_s {
        MoveKind::Swap
    } else if x < params.p_c + params.p_o + params.p_s + params.p_i {
        MoveKind::Instruction
    } else {
        MoveKind::Identity
    }
}

fn random_active<R: Rng>(program: &Program, rng: &mut R) -> Option<usize> {
    let active = program.active_len();
    if active == 0 {
        return None;
    }
    let k = rng.gen_range(0..active);
    program
        .slots()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_some())
        .nth(k)
        .map(|(i, _)| i)
}

/// Applies one random move to `program`. The capacity is preserved.
pub fn propose<R: Rng>(isa: &Isa, params: &McmcParams, program: &Program, rng: &mut R) -> (Program, Move) {
    let requested = draw_kind(params, rng);
    let mut next = program.clone();
    let target = match requested {
        MoveKind::Opcode | MoveKind::Operand => random_active(program, rng),
        _ => None,
    };
    let mv = match (requested, target) {
        (MoveKind::Opcode, Some(i)) => {
            let old = *program.slot(i).unwrap();
            let n = isa.opcode_class_len(old.opcode());
            let opcode = isa.opcode_class_get(old.opcode(), rng.gen_range(0..n));
            next.set_slot(i, Some(old.with_opcode(opcode)));
            Move {
                requested,
                applied: requested,
                slots: (i, i),
                forward: n,
                backward: isa.opcode_class_len(opcode),
            }
        }
        (MoveKind::Operand, Some(i)) => {
            let old = *program.slot(i).unwrap();
            let kinds = old.opcode().signature();
            let position = rng.gen_range(0..kinds.kinds().len());
            let kind = kinds.kinds()[position];
            let current = old.operand(position);
            let n = isa.operand_class_len(kind, &current);
            let k = rng.gen_range(0..n);
            let operand = if k < isa.operand_domain_len(kind) {
                isa.operand_domain_get(kind, k)
            } else {
                current
            };
            next.set_slot(i, Some(old.with_operand(position, operand)));
            Move {
                requested,
                applied: requested,
                slots: (i, i),
                forward: n,
                backward: isa.operand_class_len(kind, &operand),
            }
        }
        (MoveKind::Identity, _) => Move {
            requested,
            applied: requested,
            slots: (0, 0),
            forward: 1,
            backward: 1,
        },
        (MoveKind::Swap, _) => {
            let i = rng.gen_range(0..program.len());
            let j = rng.gen_range(0..program.len());
            next.swap(i, j);
            let pairs = program.len() * program.len();
            Move {
                requested,
                applied: MoveKind::Swap,
                slots: (i, j),
                forward: pairs,
                backward: pairs,
            }
        }
        _ => {
            let i = rng.gen_range(0..program.len());
            let replacement = if rng.gen::<f64>() < params.p_u {
                None
            } else {
                Some(random_instruction(isa, rng))
            };
            next.set_slot(i, replacement);
            Move {
                requested,
                applied: MoveKind::Instruction,
                slots: (i, i),
                forward: program.len(),
                backward: program.len(),
            }
        }
    };
    (next, mv)
}

fn slot_probability(isa: &Isa, params: &McmcParams, slot: Option<&Instruction>) -> f64 {
    match slot {
        None => params.p_u,
        Some(i) => (1.0 - params.p_u) * isa.random_instruction_probability(i),
    }
}

/// Exact probability that one call to [`propose`] turns `from` into `to`,
/// summed over every move that can produce the change. Meaningless (but
/// harmless) when `from == to`.
pub fn proposal_probability(isa: &Isa, params: &McmcParams, from: &Program, to: &Program) -> f64 {
    let len = from.len();
    if len != to.len() {
        return 0.0;
    }
    let diff: Vec<usize> = (0..len).filter(|&i| from.slots()[i] != to.slots()[i]).collect();
    let active = from.active_len();
    match diff[..] {
        [i] => {
            let (a, b) = (from.slot(i), to.slot(i));
            let instruction_mass = params.p_i + if active == 0 { params.p_c + params.p_o } else { 0.0 };
            let mut p = instruction_mass / len as f64 * slot_probability(isa, params, b);
            if let (Some(a), Some(b)) = (a, b) {
                let per_slot = 1.0 / active as f64;
                if a.operands() == b.operands() && a.opcode().signature() == b.opcode().signature() {
                    let class = isa.opcode_class(a.opcode());
                    if class.contains(&b.opcode()) {
                        p += params.p_c * per_slot / class.len() as f64;
                    }
                }
                if a.opcode() == b.opcode() {
                    let differing: Vec<usize> = (0..a.operands().len())
                        .filter(|&k| a.operand(k) != b.operand(k))
                        .collect();
                    if let [k] = differing[..] {
                        let kind = a.opcode().signature().kinds()[k];
                        if isa.operand_class(kind, &a.operand(k)).contains(&b.operand(k)) {
                            let arity = a.operands().len() as f64;
                            p += params.p_o * per_slot / arity / isa.operand_class_len(kind, &a.operand(k)) as f64;
                        }
                    }
                }
            }
            p
        }
        [i, j] if from.slots()[i] == to.slots()[j] && from.slots()[j] == to.slots()[i] => {
            params.p_s * 2.0 / (len * len) as f64
        }
        _ => 0.0,
    }
}

/// Largest cost a proposal may have and still be accepted.
pub fn acceptance_bound(p: f64, current_cost: f64, beta: f64) -> f64 {
    current_cost - p.ln() / beta
}

/// Result of evaluating a proposal against a bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EarlyStop {
    Accepted(u64),
    Rejected { evaluated: usize },
}

/// Sums the per-testcase cost of `program` (on top of H in optimization
/// mode) and rejects as soon as the sum reaches `bound`. Makes the same
/// decision as full evaluation followed by comparison with `bound`.
pub fn eval_early_stop(
    evaluator: &mut Evaluator,
    program: &Program,
    tests: &[Testcase],
    params: &CostParams,
    latency: &LatencyTable,
    bound: f64,
) -> EarlyStop {
    let start = match params.mode {
        Mode::Synthesis => 0,
        Mode::Optimization => perf_term(program, latency),
    };
    match evaluator.eq_prime_bounded(program, tests, params, start, bound) {
        Bounded::Within { eq, .. } => EarlyStop::Accepted(start + eq),
        Bounded::Exceeded { evaluated } => EarlyStop::Rejected { evaluated },
    }
}

/// When a chain consults the verifier about a rewrite that passes every
/// testcase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Escalation {
    /// On every such proposal.
    Always,
    /// Only when the rewrite would improve on the chain's best correct
    /// rewrite; otherwise a cached verdict is used if there is one and the
    /// rewrite is marked [`Validation::Pending`].
    #[default]
    Improvement,
}

/// Counters kept by an [`Objective`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalStats {
    /// Rewrites evaluated.
    pub evaluations: u64,
    /// Individual testcase executions.
    pub testcase_runs: u64,
    /// Evaluations cut short by the bound.
    pub early_exits: u64,
    /// Verifier queries.
    pub verifications: u64,
    /// Counterexamples added to the local testcase set.
    pub refinements: u64,
}

/// Evaluation of a proposal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Evaluation {
    /// `None` when evaluation stopped at the bound.
    pub report: Option<CostReport>,
    /// Testcases run before stopping (all of them when not stopped).
    pub evaluated: usize,
    /// True when a counterexample was added to the testcase set.
    pub refined: bool,
}

/// The cost function a chain minimizes: eq* over a local testcase set,
/// plus H(R) in optimization mode. Without a verifier, eq' = 0 counts as
/// zero cost with validation [`Validation::Unverified`].
pub struct Objective<'a> {
    tests: Vec<Testcase>,
    params: CostParams,
    latency: &'a LatencyTable,
    verifier: Option<&'a Verifier>,
    cap: usize,
    evaluator: Evaluator,
    found: Vec<Testcase>,
    pub stats: EvalStats,
}

impl<'a> Objective<'a> {
    pub fn new(
        tests: Vec<Testcase>,
        params: CostParams,
        latency: &'a LatencyTable,
        verifier: Option<&'a Verifier>,
        cap: usize,
    ) -> Objective<'a> {
        Objective {
            tests,
            params,
            latency,
            verifier,
            cap,
            evaluator: Evaluator::new(),
            found: Vec::new(),
            stats: EvalStats::default(),
        }
    }

    pub fn tests(&self) -> &[Testcase] {
        &self.tests
    }

    pub fn params(&self) -> &CostParams {
        &self.params
    }

    /// Adds testcases found elsewhere; returns how many were new.
    pub fn add_testcases(&mut self, tests: &[Testcase]) -> usize {
        tests
            .iter()
            .filter(|t| refine(&mut self.tests, (*t).clone(), self.cap) == Refinement::Added)
            .count()
    }

    /// Counterexamples discovered since the last call.
    pub fn take_counterexamples(&mut self) -> Vec<Testcase> {
        std::mem::take(&mut self.found)
    }

    /// Full evaluation, escalating to the verifier when eq' is zero.
    pub fn evaluate(&mut self, program: &Program) -> Result<Evaluation, VerifyError> {
        self.evaluate_bounded(program, f64::INFINITY, u64::MAX)
    }

    /// Evaluation that stops once the cost reaches `bound`. A rewrite with
    /// eq' = 0 is sent to the verifier only if its total would be below
    /// `escalate_below`.
    pub fn evaluate_bounded(
        &mut self,
        program: &Program,
        bound: f64,
        escalate_below: u64,
    ) -> Result<Evaluation, VerifyError> {
        self.stats.evaluations += 1;
        let perf = match self.params.mode {
            Mode::Synthesis => 0,
            Mode::Optimization => perf_term(program, self.latency),
        };
        let (eq, err) = match self
            .evaluator
            .eq_prime_bounded(program, &self.tests, &self.params, perf, bound)
        {
            Bounded::Exceeded { evaluated } => {
                self.stats.testcase_runs += evaluated as u64;
                self.stats.early_exits += 1;
                return Ok(Evaluation {
                    report: None,
                    evaluated,
                    refined: false,
                });
            }
            Bounded::Within { eq, err } => (eq, err),
        };
        let evaluated = self.tests.len();
        self.stats.testcase_runs += evaluated as u64;
        if eq > 0 {
            return Ok(Evaluation {
                report: Some(CostReport::new(eq, err, perf, Validation::NotAttempted)),
                evaluated,
                refined: false,
            });
        }
        let Some(verifier) = self.verifier else {
            return Ok(Evaluation {
                report: Some(CostReport::new(0, 0, perf, Validation::Unverified)),
                evaluated,
                refined: false,
            });
        };
        if perf >= escalate_below {
            let validation = match verifier.cached(program) {
                Some(Verdict::Proven { .. }) => Validation::Proven,
                Some(Verdict::Inconclusive { .. }) => Validation::Unverified,
                Some(Verdict::Refuted { .. }) => {
                    return Ok(Evaluation {
                        report: Some(CostReport::new(1, 0, perf, Validation::Refuted)),
                        evaluated,
                        refined: false,
                    })
                }
                None => Validation::Pending,
            };
            return Ok(Evaluation {
                report: Some(CostReport::new(0, 0, perf, validation)),
                evaluated,
                refined: false,
            });
        }
        self.stats.verifications += 1;
        let star = escalate(program, 0, 0, verifier)?;
        let mut refined = false;
        if let Some(cex) = star.counterexample {
            if refine(&mut self.tests, cex.clone(), self.cap) == Refinement::Added {
                self.stats.refinements += 1;
                self.found.push(cex);
                refined = true;
            }
        }
        Ok(Evaluation {
            report: Some(CostReport::new(star.cost, 0, perf, star.validation)),
            evaluated,
            refined,
        })
    }
}

/// A sampled point of a chain's trajectory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub proposal: u64,
    /// Cost of the current rewrite after this step.
    pub current: u64,
    pub best: u64,
    /// Cost of the proposal, when it was evaluated to completion.
    pub proposed: Option<u64>,
    /// Testcases run on the proposal.
    pub evaluated: usize,
    pub accepted: bool,
    /// The current rewrite.
    pub program: String,
}

#[derive(Clone, Debug)]
pub struct ChainState {
    pub current: Program,
    pub current_cost: CostReport,
    pub best: (Program, CostReport),
    /// Lowest-cost rewrite seen whose eq* is zero.
    pub best_correct: Option<(Program, CostReport)>,
    pub proposals: u64,
    pub accepts: u64,
    /// Requested move kinds, indexed as [`MoveKind::ALL`].
    pub move_counts: [u64; 5],
    pub trace: Vec<TraceRecord>,
}

/// Settings for [`Chain::run`] beyond the proposal budget.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Record every n-th proposal in the trace; 0 disables tracing.
    pub trace_every: u64,
    /// Stop as soon as a proven zero-cost rewrite is found.
    pub stop_on_proven: bool,
}

/// One Markov chain together with its objective and generator.
pub struct Chain<'a> {
    isa: &'a Isa,
    params: McmcParams,
    escalation: Escalation,
    objective: Objective<'a>,
    rng: ChaCha8Rng,
    state: ChainState,
}

/// What a single step did.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub mv: Move,
    pub accepted: bool,
    pub evaluated: usize,
    pub proposed: Option<u64>,
}

fn is_correct(report: &CostReport) -> bool {
    report.eq_term == 0 && matches!(report.validation, Validation::Proven | Validation::Unverified)
}

impl<'a> Chain<'a> {
    /// Starts a chain at `start`, resized to the capacity in `params`.
    pub fn new(
        isa: &'a Isa,
        params: McmcParams,
        mut objective: Objective<'a>,
        start: &Program,
        seed: u64,
    ) -> Result<Chain<'a>, VerifyError> {
        let start = if start.len() == params.length {
            start.clone()
        } else {
            start
                .resized(params.length.max(start.active_len()))
                .expect("capacity covers the active instructions")
        };
        let mut cost = objective.evaluate(&start)?;
        if cost.refined {
            cost = objective.evaluate(&start)?;
        }
        let report = cost.report.expect("unbounded evaluation completes");
        let best_correct = is_correct(&report).then(|| (start.clone(), report));
        Ok(Chain {
            isa,
            params,
            escalation: Escalation::default(),
            objective,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: ChainState {
                current: start.clone(),
                current_cost: report,
                best: (start, report),
                best_correct,
                proposals: 0,
                accepts: 0,
                move_counts: [0; 5],
                trace: Vec::new(),
            },
        })
    }

    pub fn with_escalation(mut self, escalation: Escalation) -> Self {
        self.escalation = escalation;
        self
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn into_state(self) -> ChainState {
        self.state
    }

    pub fn objective(&self) -> &Objective<'a> {
        &self.objective
    }

    pub fn objective_mut(&mut self) -> &mut Objective<'a> {
        &mut self.objective
    }

    /// Re-evaluates the current rewrite after the testcase set changed.
    pub fn refresh(&mut self) -> Result<(), VerifyError> {
        let below = self.escalate_below();
        let mut e = self.objective.evaluate_bounded(&self.state.current, f64::INFINITY, below)?;
        while e.refined {
            e = self.objective.evaluate_bounded(&self.state.current, f64::INFINITY, below)?;
        }
        self.state.current_cost = e.report.expect("unbounded evaluation completes");
        Ok(())
    }

    fn escalate_below(&self) -> u64 {
        match (self.escalation, &self.state.best_correct) {
            (Escalation::Always, _) | (_, None) => u64::MAX,
            (Escalation::Improvement, Some((_, best))) => best.total,
        }
    }

    fn record(&mut self, program: &Program, report: CostReport) {
        if report.total < self.state.best.1.total {
            self.state.best = (program.clone(), report);
        }
        if is_correct(&report)
            && self
                .state
                .best_correct
                .as_ref()
                .is_none_or(|(_, b)| report.total < b.total)
        {
            self.state.best_correct = Some((program.clone(), report));
        }
    }

    /// One propose / evaluate / accept cycle.
    pub fn step(&mut self) -> Result<Step, VerifyError> {
        let (candidate, mv) = propose(self.isa, &self.params, &self.state.current, &mut self.rng);
        self.state.proposals += 1;
        self.state.move_counts[mv.requested as usize] += 1;
        let u = 1.0 - self.rng.gen::<f64>();
        if candidate == self.state.current {
            return Ok(Step {
                mv,
                accepted: false,
                evaluated: 0,
                proposed: None,
            });
        }
        let log_ratio = match self.params.correction {
            Correction::None => 0.0,
            Correction::Hastings => {
                let fwd = proposal_probability(self.isa, &self.params, &self.state.current, &candidate);
                let bwd = proposal_probability(self.isa, &self.params, &candidate, &self.state.current);
                (bwd / fwd).ln()
            }
        };
        let beta = self.params.beta;
        let bound = move |current: u64| acceptance_bound(u, current as f64, beta) + log_ratio / beta;
        let below = self.escalate_below();
        let mut eval = self
            .objective
            .evaluate_bounded(&candidate, bound(self.state.current_cost.total), below)?;
        if eval.refined {
            // The testcase set grew: re-score both sides on the new set.
            self.refresh()?;
            eval = self.objective.evaluate_bounded(&candidate, f64::INFINITY, below)?;
        }
        let proposed = eval.report.map(|r| r.total);
        let accepted = match eval.report {
            Some(report) if (report.total as f64) < bound(self.state.current_cost.total) => {
                self.state.current = candidate.clone();
                self.state.current_cost = report;
                self.state.accepts += 1;
                true
            }
            _ => false,
        };
        if let Some(report) = eval.report {
            if accepted {
                let current = self.state.current.clone();
                self.record(&current, report);
            } else if is_correct(&report) || report.total < self.state.best.1.total {
                self.record(&candidate, report);
            }
        }
        Ok(Step {
            mv,
            accepted,
            evaluated: eval.evaluated,
            proposed,
        })
    }

    /// Runs up to `proposals` steps. Returns early on cancellation or, with
    /// `stop_on_proven`, once a proven zero-cost rewrite is found.
    pub fn run(&mut self, proposals: u64, options: RunOptions, cancel: Option<&AtomicBool>) -> Result<(), VerifyError> {
        for _ in 0..proposals {
            if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) || self.done(options) {
                break;
            }
            let step = self.step()?;
            if options.trace_every > 0 && self.state.proposals.is_multiple_of(options.trace_every) {
                self.state.trace.push(TraceRecord {
                    proposal: self.state.proposals,
                    current: self.state.current_cost.total,
                    best: self.state.best.1.total,
                    proposed: step.proposed,
                    evaluated: step.evaluated,
                    accepted: step.accepted,
                    program: self.state.current.compacted().to_string(),
                });
            }
        }
        Ok(())
    }

    /// True once the chain holds a proven zero-cost rewrite and was asked
    /// to stop there.
    pub fn done(&self, options: RunOptions) -> bool {
        options.stop_on_proven
            && self
                .state
                .best_correct
                .as_ref()
                .is_some_and(|(_, r)| r.total == 0 && r.validation == Validation::Proven)
    }
}

/// Runs a single chain from `start` for `proposals` steps.
#[allow(clippy::too_many_arguments)]
pub fn run_chain<'a>(
    isa: &'a Isa,
    params: McmcParams,
    objective: Objective<'a>,
    start: &Program,
    proposals: u64,
    seed: u64,
    options: RunOptions,
) -> Result<ChainState, VerifyError> {
    let mut chain = Chain::new(isa, params, objective, start, seed)?;
    chain.run(proposals, options, None)?;
    Ok(chain.into_state())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{parse_program, Form, Op, Opcode, Register, Width};
    use crate::testgen::{generate, TargetSpec};

    fn isa() -> Isa {
        Isa::builder().build()
    }

    #[test]
    fn default_params_validate() {
        assert!(McmcParams::default().validate().is_ok());
        let bad = McmcParams {
            p_o: 0.6,
            ..McmcParams::default()
        };
        assert!(matches!(bad.validate(), Err(ParamError::MoveSum(_))));
    }

    #[test]
    fn bound_examples() {
        assert_eq!(acceptance_bound(1.0, 7.0, 0.1), 7.0);
        assert!((acceptance_bound((-1.0f64).exp(), 100.0, 0.1) - 110.0).abs() < 1e-9);
    }

    #[test]
    fn moves_preserve_length_and_class() {
        let isa = isa();
        let params = McmcParams {
            length: 6,
            ..McmcParams::default()
        };
        let p = parse_program("addq r1, r0\nshlq 2, r0", 6).unwrap();
        let shl = Opcode::new(Op::Shl, Width::B64, Form::ImmReg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20_000 {
            let (q, mv) = propose(&isa, &params, &p, &mut rng);
            assert_eq!(q.len(), 6);
            if mv.applied == MoveKind::Opcode {
                assert_eq!(mv.forward, mv.backward);
                if mv.slots.0 == 0 {
                    assert_ne!(q.slot(0).unwrap().opcode(), shl);
                }
            }
            if matches!(mv.applied, MoveKind::Operand | MoveKind::Swap) {
                assert_eq!(mv.forward, mv.backward);
            }
        }
    }

    #[test]
    fn swap_exchanges() {
        let isa = isa();
        let params = McmcParams {
            p_c: 0.0,
            p_o: 0.0,
            p_s: 1.0,
            p_i: 0.0,
            length: 2,
            ..McmcParams::default()
        };
        let p = parse_program("addq r1, r0\nnegq r2", 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        loop {
            let (q, mv) = propose(&isa, &params, &p, &mut rng);
            if mv.slots.0 != mv.slots.1 {
                assert_eq!(q.slot(0), p.slot(1));
                assert_eq!(q.slot(1), p.slot(0));
                break;
            }
        }
    }

    #[test]
    fn empty_program_falls_through_to_instruction() {
        let isa = isa();
        let params = McmcParams {
            length: 4,
            ..McmcParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let (_, mv) = propose(&isa, &params, &Program::empty(4), &mut rng);
            assert!(matches!(mv.applied, MoveKind::Swap | MoveKind::Instruction | MoveKind::Identity));
        }
    }

    #[test]
    fn proposal_probability_matches_frequency() {
        let isa = Isa::builder()
            .opcodes([
                Opcode::new(Op::Add, Width::B64, Form::RegReg).unwrap(),
                Opcode::new(Op::Xor, Width::B64, Form::RegReg).unwrap(),
            ])
            .registers([0, 1])
            .build();
        let params = McmcParams {
            length: 2,
            ..McmcParams::default()
        };
        let from = parse_program("addq r1, r0", 2).unwrap();
        let to = parse_program("xorq r1, r0", 2).unwrap();
        let exact = proposal_probability(&isa, &params, &from, &to);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 400_000;
        let hits = (0..n).filter(|_| propose(&isa, &params, &from, &mut rng).0 == to).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - exact).abs() < 0.003, "{freq} vs {exact}");
    }

    fn neg_setup() -> (TargetSpec, Vec<Testcase>) {
        let spec = TargetSpec::new(
            parse_program("negq r0", 4).unwrap(),
            vec![Register::q(0)],
            vec![Register::q(0)],
        );
        let tests = generate(&spec, 16, 2).unwrap();
        (spec, tests)
    }

    #[test]
    fn zero_budget_keeps_start() {
        let isa = isa();
        let (spec, tests) = neg_setup();
        let lat = LatencyTable::default();
        let obj = Objective::new(tests, CostParams::default(), &lat, None, 64);
        let params = McmcParams {
            length: 4,
            ..McmcParams::default()
        };
        let s = run_chain(&isa, params, obj, &spec.target, 0, 1, RunOptions::default()).unwrap();
        assert_eq!(s.current, spec.target);
        assert_eq!(s.proposals, 0);
    }

    #[test]
    fn chain_is_deterministic() {
        let isa = isa();
        let (_, tests) = neg_setup();
        let lat = LatencyTable::default();
        let params = McmcParams {
            length: 4,
            ..McmcParams::default()
        };
        let run = || {
            let obj = Objective::new(tests.clone(), CostParams::default(), &lat, None, 64);
            run_chain(&isa, params, obj, &Program::empty(4), 5_000, 42, RunOptions::default()).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.best.0, b.best.0);
        assert_eq!(a.current, b.current);
        assert_eq!(a.accepts, b.accepts);
        assert!(a.best.1.total <= a.current_cost.total);
    }
}
