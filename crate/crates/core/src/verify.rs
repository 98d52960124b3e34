//! Equivalence checking of a rewrite against its target.
//!
//! The exhaustive strategy enumerates every assignment of the live inputs at
//! a reduced effective width: an unannotated register contributes its low
//! `w` bits (high bits zero), an annotated register the first `2^w` values
//! of its range, and each input memory byte its low `w` bits. `w` starts at
//! `width_cap` and shrinks until the domain fits `input_budget`. Before
//! enumerating, a short full-width random pass catches most bugs early.
//!
//! A proof is therefore a proof of the restricted equivalence; [`Verdict`]
//! records the width used.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::isa::{Instruction, Program, Register};
use crate::machine::{execute_into, AddressSet, Effects, MachineState, Sandbox};
use crate::testgen::{record_testcase, sample_input, LiveOut, TargetSpec, Testcase};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Exhaustive,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub strategy: Strategy,
    /// Largest effective input width tried by the exhaustive strategy.
    pub width_cap: u32,
    /// Smallest effective width the exhaustive strategy will settle for.
    pub min_width: u32,
    /// Maximum number of enumerated input states.
    pub input_budget: u64,
    /// Trials for the random strategy.
    pub random_trials: u64,
    /// Full-width random inputs checked before enumerating.
    pub prepass: u64,
    /// Degrade to the random strategy when enumeration is infeasible.
    pub fallback: bool,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            strategy: Strategy::Exhaustive,
            width_cap: 8,
            min_width: 4,
            input_budget: 1 << 24,
            random_trials: 1_000_000,
            prepass: 64,
            fallback: true,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// Equal on every enumerated input at effective width `width`.
    Proven { width: u32, inputs: u64 },
    Refuted { counterexample: Box<Testcase> },
    /// No divergence in `trials` random inputs; not a proof.
    Inconclusive { trials: u64 },
}

impl Verdict {
    pub fn is_proven(&self) -> bool {
        matches!(self, Verdict::Proven { .. })
    }

    pub fn status(&self) -> &'static str {
        match self {
            Verdict::Proven { .. } => "proven",
            Verdict::Refuted { .. } => "refuted",
            Verdict::Inconclusive { .. } => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VerifyError {
    #[error("exhaustive verification needs {states} input states at width {min_width} (budget {budget}) and fallback is disabled")]
    Infeasible { states: u128, min_width: u32, budget: u64 },
    #[error("the target faults on input {input}; live_in or annotations do not cover what it reads")]
    TargetFault { input: String },
    #[error("verification cancelled")]
    Cancelled,
}

/// One enumerated input coordinate.
#[derive(Clone, Copy, Debug)]
enum Coord {
    Reg(Register),
    Byte(u64),
}

#[derive(Clone, Copy, Debug)]
struct Dim {
    coord: Coord,
    lo: u64,
    size: u64,
}

fn dims_at(spec: &TargetSpec, width: u32) -> Vec<Dim> {
    let mut dims: Vec<Dim> = spec
        .live_in
        .iter()
        .map(|&reg| {
            let (lo, size) = match spec.annotation(reg.index()) {
                Some(a) => {
                    let span = (a.max - a.min) as u128 + 1;
                    (a.min, span.min(1u128 << width) as u64)
                }
                None => (0, 1u64 << width.min(reg.width().bits())),
            };
            Dim {
                coord: Coord::Reg(reg),
                lo,
                size,
            }
        })
        .collect();
    for span in &spec.memory_in {
        dims.extend(span.addresses().map(|a| Dim {
            coord: Coord::Byte(a),
            lo: 0,
            size: 1 << width.min(8),
        }));
    }
    dims
}

fn domain_size(dims: &[Dim]) -> u128 {
    dims.iter()
        .try_fold(1u128, |acc, d| acc.checked_mul(d.size as u128))
        .unwrap_or(u128::MAX)
}

fn input_at(dims: &[Dim], mut k: u64, state: &mut MachineState) {
    state.clone_from(&MachineState::new());
    for d in dims {
        let digit = k % d.size;
        k /= d.size;
        let value = d.lo.wrapping_add(digit);
        match d.coord {
            Coord::Reg(reg) => {
                let mask = reg.width().mask();
                let defined = state.defined_mask(reg.index()) | mask;
                let merged = (state.reg(reg.index()) & !mask) | (value & mask);
                state.set_raw(reg.index(), merged, defined);
            }
            Coord::Byte(addr) => state.memory_mut().set(addr, value as u8),
        }
    }
}

/// True when `r` agrees with `t` on every defined live output of `t`.
pub(crate) fn same_outputs(live: &LiveOut, t: &MachineState, r: &MachineState) -> bool {
    live.regs.iter().all(|&reg| {
        let td = t.read_defined(reg);
        td & ((t.read(reg) ^ r.read(reg)) | !r.read_defined(reg)) == 0
    }) && live
        .flags
        .iter()
        .all(|&f| t.flag(f).is_none_or(|v| r.flag(f) == Some(v)))
        && live
            .memory
            .iter()
            .flat_map(|s| s.addresses())
            .all(|a| t.memory().get(a).is_none_or(|b| r.memory().get(a) == Some(b)))
}

/// Scratch buffers for comparing the two programs on one input.
struct Bench<'a> {
    spec: &'a TargetSpec,
    rewrite: &'a Program,
    t_state: MachineState,
    r_state: MachineState,
    effects: Effects,
    touched: Vec<u64>,
    sandbox: Sandbox,
}

enum Check {
    Same,
    Differ,
    TargetFault,
}

impl<'a> Bench<'a> {
    fn new(spec: &'a TargetSpec, rewrite: &'a Program) -> Self {
        Bench {
            spec,
            rewrite,
            t_state: MachineState::new(),
            r_state: MachineState::new(),
            effects: Effects::default(),
            touched: Vec::new(),
            sandbox: Sandbox::default(),
        }
    }

    fn check(&mut self, input: &MachineState) -> Check {
        execute_into(
            &self.spec.target,
            input,
            &Sandbox::permissive(),
            &mut self.t_state,
            &mut self.effects,
        );
        if !self.effects.counters.is_clean() {
            return Check::TargetFault;
        }
        // The target usually touches the same addresses on every input, so
        // the sandbox is rebuilt only when the access sequence changes.
        if self.effects.touched != self.touched {
            self.touched.clone_from(&self.effects.touched);
            self.sandbox = Sandbox::new(self.touched.iter().copied().collect::<AddressSet>());
        }
        execute_into(self.rewrite, input, &self.sandbox, &mut self.r_state, &mut self.effects);
        if self.effects.counters.is_clean() && same_outputs(&self.spec.live_out, &self.t_state, &self.r_state) {
            Check::Same
        } else {
            Check::Differ
        }
    }
}

fn describe(spec: &TargetSpec, input: &MachineState) -> String {
    spec.live_in
        .iter()
        .map(|r| format!("{r}={:#x}", input.read(*r)))
        .collect::<Vec<_>>()
        .join(", ")
}

fn refuted(spec: &TargetSpec, input: MachineState) -> Result<Verdict, VerifyError> {
    let description = describe(spec, &input);
    let counterexample =
        record_testcase(spec, input).map_err(|_| VerifyError::TargetFault { input: description })?;
    Ok(Verdict::Refuted {
        counterexample: Box::new(counterexample),
    })
}

fn random_pass(
    spec: &TargetSpec,
    rewrite: &Program,
    trials: u64,
    seed: u64,
    cancel: Option<&AtomicBool>,
) -> Result<Option<MachineState>, VerifyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bench = Bench::new(spec, rewrite);
    for i in 0..trials {
        if i % 4096 == 0 && cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            return Err(VerifyError::Cancelled);
        }
        let input = sample_input(spec, &mut rng);
        match bench.check(&input) {
            Check::Same => {}
            Check::Differ => return Ok(Some(input)),
            Check::TargetFault => {
                return Err(VerifyError::TargetFault {
                    input: describe(spec, &input),
                })
            }
        }
    }
    Ok(None)
}

const CHUNK: u64 = 1 << 12;

/// Checks `rewrite` against the target. Deterministic for a fixed config.
pub fn verify(spec: &TargetSpec, rewrite: &Program, cfg: &VerifyConfig) -> Result<Verdict, VerifyError> {
    verify_cancellable(spec, rewrite, cfg, None)
}

pub fn verify_cancellable(
    spec: &TargetSpec,
    rewrite: &Program,
    cfg: &VerifyConfig,
    cancel: Option<&AtomicBool>,
) -> Result<Verdict, VerifyError> {
    if let Some(input) = random_pass(spec, rewrite, cfg.prepass, cfg.seed, cancel)? {
        return refuted(spec, input);
    }
    let random = |cancel| -> Result<Verdict, VerifyError> {
        match random_pass(spec, rewrite, cfg.random_trials, cfg.seed ^ 0x9e37_79b9_7f4a_7c15, cancel)? {
            Some(input) => refuted(spec, input),
            None => Ok(Verdict::Inconclusive {
                trials: cfg.random_trials + cfg.prepass,
            }),
        }
    };
    if cfg.strategy == Strategy::Random {
        return random(cancel);
    }
    let min_width = cfg.min_width.clamp(1, cfg.width_cap.max(1));
    let chosen = (min_width..=cfg.width_cap.max(min_width))
        .rev()
        .map(|w| (w, dims_at(spec, w)))
        .find(|(_, dims)| domain_size(dims) <= cfg.input_budget as u128);
    let Some((width, dims)) = chosen else {
        if cfg.fallback {
            log::warn!("input domain exceeds the exhaustive budget; falling back to random checking");
            return random(cancel);
        }
        return Err(VerifyError::Infeasible {
            states: domain_size(&dims_at(spec, min_width)),
            min_width,
            budget: cfg.input_budget,
        });
    };
    let total = domain_size(&dims) as u64;
    let chunks = total.div_ceil(CHUNK);
    let first = (0..chunks).into_par_iter().find_map_first(|c| {
        if cancel.is_some_and(|f| f.load(Ordering::Relaxed)) {
            return Some(Err(VerifyError::Cancelled));
        }
        let mut bench = Bench::new(spec, rewrite);
        let mut input = MachineState::new();
        for k in c * CHUNK..((c + 1) * CHUNK).min(total) {
            input_at(&dims, k, &mut input);
            match bench.check(&input) {
                Check::Same => {}
                Check::Differ => return Some(Ok(input)),
                Check::TargetFault => {
                    return Some(Err(VerifyError::TargetFault {
                        input: describe(spec, &input),
                    }))
                }
            }
        }
        None
    });
    match first {
        None => Ok(Verdict::Proven { width, inputs: total }),
        Some(Ok(input)) => refuted(spec, input),
        Some(Err(e)) => Err(e),
    }
}

/// Outcome of adding a counterexample to the testcase set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Refinement {
    Added,
    Duplicate,
    CapReached,
}

/// Adds `cex` to `tests` unless it is already present or `tests` holds
/// `cap` testcases.
pub fn refine(tests: &mut Vec<Testcase>, cex: Testcase, cap: usize) -> Refinement {
    if tests.contains(&cex) {
        Refinement::Duplicate
    } else if tests.len() >= cap {
        log::warn!("testcase cap of {cap} reached; counterexample dropped");
        Refinement::CapReached
    } else {
        tests.push(cex);
        Refinement::Added
    }
}

/// A shared, caching verification service for one target.
#[derive(Debug)]
pub struct Verifier {
    spec: TargetSpec,
    cfg: VerifyConfig,
    cache: Mutex<HashMap<Vec<Instruction>, Verdict>>,
    cancel: AtomicBool,
}

impl Verifier {
    pub fn new(spec: TargetSpec, cfg: VerifyConfig) -> Verifier {
        Verifier {
            spec,
            cfg,
            cache: Mutex::new(HashMap::new()),
            cancel: AtomicBool::new(false),
        }
    }

    pub fn spec(&self) -> &TargetSpec {
        &self.spec
    }

    pub fn config(&self) -> &VerifyConfig {
        &self.cfg
    }

    /// Verdict for `rewrite`, computed at most once per active instruction
    /// sequence.
    pub fn check(&self, rewrite: &Program) -> Result<Verdict, VerifyError> {
        let key: Vec<Instruction> = rewrite.instructions().copied().collect();
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let verdict = verify_cancellable(&self.spec, rewrite, &self.cfg, Some(&self.cancel))?;
        self.cache.lock().unwrap().insert(key, verdict.clone());
        Ok(verdict)
    }

    /// Makes running and future checks fail with [`VerifyError::Cancelled`].
    pub fn cancel(&self) {
        self.cancel.store(true, Ordering::Relaxed);
    }

    /// The verdict for `rewrite` if it has already been computed.
    pub fn cached(&self, rewrite: &Program) -> Option<Verdict> {
        let key: Vec<Instruction> = rewrite.instructions().copied().collect();
        self.cache.lock().unwrap().get(&key).cloned()
    }

    /// Number of distinct rewrites checked so far.
    pub fn cache_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{parse_program, Width};
    use crate::testgen::{Annotation, Span};

    fn spec(target: &str, live_in: &[Register], live_out: &[Register]) -> TargetSpec {
        TargetSpec::new(parse_program(target, 8).unwrap(), live_in.to_vec(), live_out.to_vec())
    }

    fn run(s: &TargetSpec, rewrite: &str) -> Verdict {
        verify(s, &parse_program(rewrite, 8).unwrap(), &VerifyConfig::default()).unwrap()
    }

    #[test]
    fn target_equals_itself() {
        let s = spec("addq r1, r0", &[Register::q(0), Register::q(1)], &[Register::q(0)]);
        assert_eq!(run(&s, "addq r1, r0"), Verdict::Proven { width: 8, inputs: 1 << 16 });
    }

    #[test]
    fn zeroing_idioms() {
        let s = spec("xorq r0, r0", &[], &[Register::q(0)]);
        assert!(run(&s, "movq 0, r0").is_proven());
    }

    #[test]
    fn add_versus_sub() {
        let s = spec("addq r1, r0", &[Register::q(0), Register::q(1)], &[Register::q(0)]);
        let Verdict::Refuted { counterexample } = run(&s, "subq r1, r0") else {
            panic!("expected refutation");
        };
        assert_ne!(counterexample.input.reg(1) & 0x7FFF_FFFF_FFFF_FFFF, 0);
    }

    #[test]
    fn width_shrinks_to_fit_budget() {
        let regs: Vec<Register> = (0..4).map(|i| Register::new(i, Width::B32).unwrap()).collect();
        let s = spec("addl r1d, r0d", &regs, &regs[..1]);
        let v = run(&s, "addl r1d, r0d");
        assert_eq!(v, Verdict::Proven { width: 6, inputs: 1 << 24 });
    }

    #[test]
    fn infeasible_without_fallback() {
        let regs: Vec<Register> = (0..8).map(Register::q).collect();
        let s = spec("addq r1, r0", &regs, &regs[..1]);
        let cfg = VerifyConfig {
            fallback: false,
            ..VerifyConfig::default()
        };
        let err = verify(&s, &s.target, &cfg).unwrap_err();
        assert!(matches!(err, VerifyError::Infeasible { .. }));
        let cfg = VerifyConfig {
            random_trials: 1000,
            ..VerifyConfig::default()
        };
        assert_eq!(verify(&s, &s.target, &cfg).unwrap(), Verdict::Inconclusive { trials: 1064 });
    }

    #[test]
    fn high_bit_difference_found_by_prepass() {
        // Agrees on every input whose high bits are zero.
        let s = spec("movq r1, r0", &[Register::q(1)], &[Register::q(0)]);
        assert!(matches!(run(&s, "movl r1d, r0d"), Verdict::Refuted { .. }));
    }

    #[test]
    fn rewrite_faults_are_refutations() {
        let mut s = spec(
            "loadb (r6), r0b",
            &[Register::q(6)],
            &[Register::new(0, Width::B8).unwrap()],
        );
        s.annotations.push(Annotation {
            reg: 6,
            min: 0x100,
            max: 0x100,
        });
        s.memory_in.push(Span { start: 0x100, len: 1 });
        assert!(run(&s, "loadb (r6), r0b").is_proven());
        assert!(matches!(run(&s, "loadb 1(r6), r0b"), Verdict::Refuted { .. }));
    }

    #[test]
    fn refine_dedups_and_caps() {
        let s = spec("negq r0", &[Register::q(0)], &[Register::q(0)]);
        let mut ts = crate::testgen::generate(&s, 2, 1).unwrap();
        let extra = crate::testgen::generate(&s, 3, 2).unwrap();
        assert_eq!(refine(&mut ts, extra[0].clone(), 3), Refinement::Added);
        assert_eq!(refine(&mut ts, extra[0].clone(), 3), Refinement::Duplicate);
        assert_eq!(refine(&mut ts, extra[1].clone(), 3), Refinement::CapReached);
        assert_eq!(ts.len(), 3);
    }

    #[test]
    fn verifier_caches_by_compacted_program() {
        let s = spec("negq r0", &[Register::q(0)], &[Register::q(0)]);
        let v = Verifier::new(s, VerifyConfig::default());
        let p = parse_program("negq r0", 4).unwrap();
        let mut q = Program::empty(6);
        q.set_slot(3, p.slot(0).copied());
        assert!(v.check(&p).unwrap().is_proven());
        assert!(v.check(&q).unwrap().is_proven());
        assert_eq!(v.cache_len(), 1);
        assert!(v.cached(&q).is_some_and(|v| v.is_proven()));
    }
}
