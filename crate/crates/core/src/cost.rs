//! Cost functions: testcase-based correctness, fault penalties, the exact
//! escalation through the verifier, and the static latency heuristic.
//!
//! Distances only count bits the target defines: a target-defined bit costs
//! one when the rewrite leaves it undefined or gives it a different value.

use serde::{Deserialize, Serialize};

use crate::isa::{LatencyTable, Program, Register, NUM_REGS};
use crate::machine::{execute_into, AddressSet, Counters, Effects, MachineState};
use crate::testgen::{Expected, LiveOut, RegValue, Span, Testcase};
use crate::verify::{Verdict, Verifier, VerifyError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Correctness only.
    #[default]
    Synthesis,
    /// Correctness plus the latency heuristic.
    Optimization,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Credits correct values found in the wrong location.
    #[default]
    Improved,
    Strict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    pub w_sf: u64,
    pub w_fp: u64,
    pub w_ur: u64,
    /// Misplacement penalty of the improved metric.
    pub w_m: u64,
    pub mode: Mode,
    pub metric: Metric,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            w_sf: 1,
            w_fp: 1,
            w_ur: 2,
            w_m: 3,
            mode: Mode::Synthesis,
            metric: Metric::Improved,
        }
    }
}

impl CostParams {
    pub fn with_mode(self, mode: Mode) -> CostParams {
        CostParams { mode, ..self }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Validation {
    /// Some testcase failed, so the verifier was not consulted.
    #[default]
    NotAttempted,
    Proven,
    Refuted,
    /// All testcases pass but the verifier could not decide.
    Unverified,
    /// All testcases pass; the verifier has not been asked yet.
    Pending,
}

/// Decomposed cost of one rewrite.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CostReport {
    /// Correctness term, fault penalties included.
    pub eq_term: u64,
    /// H(R) in optimization mode, zero in synthesis mode.
    pub perf_term: u64,
    /// The fault-penalty part of `eq_term`.
    pub err_term: u64,
    pub total: u64,
    pub validation: Validation,
}

impl CostReport {
    pub fn new(eq_term: u64, err_term: u64, perf_term: u64, validation: Validation) -> CostReport {
        CostReport {
            eq_term,
            perf_term,
            err_term,
            total: eq_term + perf_term,
            validation,
        }
    }
}

pub fn popcount(x: u64) -> u32 {
    x.count_ones()
}

/// Bits of the expected value missing from (`value`, `defined`).
fn distance(expected: &RegValue, value: u64, defined: u64) -> u64 {
    popcount(expected.defined & ((expected.value ^ value) | !defined)) as u64
}

fn reg_distance_strict(r: &MachineState, expected: &[RegValue]) -> u64 {
    expected
        .iter()
        .map(|e| distance(e, r.read(e.reg), r.read_defined(e.reg)))
        .sum()
}

fn reg_distance_improved(r: &MachineState, expected: &[RegValue], w_m: u64) -> u64 {
    expected
        .iter()
        .map(|e| {
            let own = distance(e, r.read(e.reg), r.read_defined(e.reg));
            if own <= w_m {
                return own;
            }
            (0..NUM_REGS as u8)
                .filter(|&i| i != e.reg.index())
                .map(|i| {
                    let other = Register::new(i, e.reg.width()).unwrap();
                    distance(e, r.read(other), r.read_defined(other)) + w_m
                })
                .fold(own, u64::min)
        })
        .sum()
}

fn byte_distance(expected: Option<u8>, actual: Option<u8>) -> u64 {
    match (expected, actual) {
        (None, _) => 0,
        (Some(_), None) => 8,
        (Some(e), Some(a)) => popcount((e ^ a) as u64) as u64,
    }
}

fn mem_distance_strict(r: &MachineState, expected: &[(u64, Option<u8>)]) -> u64 {
    expected
        .iter()
        .map(|&(a, e)| byte_distance(e, r.memory().get(a)))
        .sum()
}

fn mem_distance_improved(r: &MachineState, written: &[u64], expected: &[(u64, Option<u8>)], w_m: u64) -> u64 {
    let mut candidates: Vec<u64> = written.iter().map(|a| a & !7).collect();
    candidates.sort_unstable();
    candidates.dedup();
    let mut total = 0;
    let mut rest = expected;
    while let Some(&(first, _)) = rest.first() {
        let chunk = first & !7;
        let n = rest.iter().take_while(|&&(a, _)| a & !7 == chunk).count();
        let (bytes, tail) = rest.split_at(n);
        rest = tail;
        let at = |base: u64| -> u64 {
            bytes
                .iter()
                .map(|&(a, e)| byte_distance(e, r.memory().get(a - chunk + base)))
                .sum()
        };
        let own = at(chunk);
        total += candidates
            .iter()
            .filter(|&&c| c != chunk && own > w_m)
            .map(|&c| at(c) + w_m)
            .fold(own, u64::min);
    }
    total
}

fn flag_distance(r: &MachineState, expected: &[(crate::machine::Flag, Option<bool>)]) -> u64 {
    expected
        .iter()
        .filter(|&&(f, e)| e.is_some() && r.flag(f) != e)
        .count() as u64
}

/// Hamming distance over the live registers at their widths.
pub fn reg_strict(r_out: &MachineState, t_out: &MachineState, live: &[Register]) -> u64 {
    let expected = Expected::project(t_out, &live_regs(live));
    reg_distance_strict(r_out, &expected.regs)
}

/// Like [`reg_strict`] but each live register may be matched by any
/// same-width register of the rewrite at a penalty of `w_m`.
pub fn reg_improved(r_out: &MachineState, t_out: &MachineState, live: &[Register], w_m: u64) -> u64 {
    let expected = Expected::project(t_out, &live_regs(live));
    reg_distance_improved(r_out, &expected.regs, w_m)
}

fn live_regs(live: &[Register]) -> LiveOut {
    LiveOut {
        regs: live.to_vec(),
        ..LiveOut::default()
    }
}

/// (strict, improved) memory distances over the live spans. The improved
/// form may match each 8-byte aligned chunk against any chunk the rewrite
/// wrote, at a penalty of `w_m`.
pub fn mem_terms(
    r_out: &MachineState,
    r_written: &AddressSet,
    t_out: &MachineState,
    live: &[Span],
    w_m: u64,
) -> (u64, u64) {
    let expected = Expected::project(
        t_out,
        &LiveOut {
            memory: live.to_vec(),
            ..LiveOut::default()
        },
    );
    let written: Vec<u64> = r_written.iter().collect();
    (
        mem_distance_strict(r_out, &expected.memory),
        mem_distance_improved(r_out, &written, &expected.memory, w_m),
    )
}

pub fn err_term(counters: &Counters, params: &CostParams) -> u64 {
    params.w_sf * counters.sigsegv + params.w_fp * counters.sigfloat + params.w_ur * counters.undef
}

/// H(R): total latency of the active instructions.
pub fn perf_term(program: &Program, latency: &LatencyTable) -> u64 {
    program.instructions().map(|i| latency.get(i.opcode()) as u64).sum()
}

/// Result of a bounded correctness evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bounded {
    /// Evaluated every testcase and stayed below the bound.
    Within { eq: u64, err: u64 },
    /// The running total reached the bound after `evaluated` testcases.
    Exceeded { evaluated: usize },
}

/// Reusable scratch space for running rewrites over testcases.
#[derive(Debug, Default)]
pub struct Evaluator {
    state: MachineState,
    effects: Effects,
}

impl Evaluator {
    pub fn new() -> Evaluator {
        Evaluator::default()
    }

    /// (distance, fault penalty) of `program` on one testcase.
    pub fn testcase_cost(&mut self, program: &Program, t: &Testcase, params: &CostParams) -> (u64, u64) {
        execute_into(program, &t.input, &t.sandbox, &mut self.state, &mut self.effects);
        let e = &t.expected;
        let distance = match params.metric {
            Metric::Strict => reg_distance_strict(&self.state, &e.regs) + mem_distance_strict(&self.state, &e.memory),
            Metric::Improved => {
                reg_distance_improved(&self.state, &e.regs, params.w_m)
                    + if e.memory.is_empty() {
                        0
                    } else {
                        mem_distance_improved(&self.state, &self.effects.written, &e.memory, params.w_m)
                    }
            }
        } + flag_distance(&self.state, &e.flags);
        (distance, err_term(&self.effects.counters, params))
    }

    /// eq'(R) over `tests`, returned as (total, fault-penalty part).
    pub fn eq_prime(&mut self, program: &Program, tests: &[Testcase], params: &CostParams) -> (u64, u64) {
        tests.iter().fold((0, 0), |(eq, err), t| {
            let (d, e) = self.testcase_cost(program, t, params);
            (eq + d + e, err + e)
        })
    }

    /// Accumulates eq' on top of `start` in testcase order and stops as soon
    /// as the running total reaches `bound`.
    pub fn eq_prime_bounded(
        &mut self,
        program: &Program,
        tests: &[Testcase],
        params: &CostParams,
        start: u64,
        bound: f64,
    ) -> Bounded {
        if start as f64 >= bound {
            return Bounded::Exceeded { evaluated: 0 };
        }
        let (mut eq, mut err) = (0, 0);
        for (i, t) in tests.iter().enumerate() {
            let (d, e) = self.testcase_cost(program, t, params);
            eq += d + e;
            err += e;
            if (start + eq) as f64 >= bound {
                return Bounded::Exceeded { evaluated: i + 1 };
            }
        }
        Bounded::Within { eq, err }
    }
}

/// eq'(R) over `tests`.
pub fn eq_prime(program: &Program, tests: &[Testcase], params: &CostParams) -> u64 {
    Evaluator::new().eq_prime(program, tests, params).0
}

/// Correctness after escalation to the verifier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EqStar {
    pub cost: u64,
    pub err: u64,
    pub validation: Validation,
    pub counterexample: Option<Testcase>,
}

/// Turns an already computed eq' into eq*, consulting the verifier only
/// when eq' is zero.
pub fn escalate(program: &Program, eq: u64, err: u64, verifier: &Verifier) -> Result<EqStar, VerifyError> {
    if eq > 0 {
        return Ok(EqStar {
            cost: eq,
            err,
            validation: Validation::NotAttempted,
            counterexample: None,
        });
    }
    Ok(match verifier.check(program)? {
        Verdict::Proven { .. } => EqStar {
            cost: 0,
            err: 0,
            validation: Validation::Proven,
            counterexample: None,
        },
        Verdict::Refuted { counterexample } => EqStar {
            cost: 1,
            err: 0,
            validation: Validation::Refuted,
            counterexample: Some(*counterexample),
        },
        Verdict::Inconclusive { .. } => EqStar {
            cost: 0,
            err: 0,
            validation: Validation::Unverified,
            counterexample: None,
        },
    })
}

pub fn eq_star(
    program: &Program,
    tests: &[Testcase],
    params: &CostParams,
    verifier: &Verifier,
) -> Result<EqStar, VerifyError> {
    let (eq, err) = Evaluator::new().eq_prime(program, tests, params);
    escalate(program, eq, err, verifier)
}

/// c(R) = eq*(R), plus H(R) in optimization mode.
pub fn total_cost(
    program: &Program,
    tests: &[Testcase],
    params: &CostParams,
    latency: &LatencyTable,
    verifier: &Verifier,
) -> Result<CostReport, VerifyError> {
    let star = eq_star(program, tests, params, verifier)?;
    let perf = match params.mode {
        Mode::Synthesis => 0,
        Mode::Optimization => perf_term(program, latency),
    };
    Ok(CostReport::new(star.cost, star.err, perf, star.validation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{parse_program, Width};
    use crate::machine::Flag;
    use crate::testgen::{generate, TargetSpec};
    use crate::verify::VerifyConfig;

    fn byte(i: u8) -> Register {
        Register::new(i, Width::B8).unwrap()
    }

    /// Four 8-bit register views whose low nibbles differ from the target's
    /// live register in 4, 3, 2 and 0 bits.
    fn nibble_fixture() -> (MachineState, MachineState) {
        let mut t = MachineState::new();
        let mut r = MachineState::new();
        for i in 0..4 {
            t.write(byte(i), 0);
        }
        for (i, v) in [0b1111u64, 0b0111, 0b0011, 0b0000].into_iter().enumerate() {
            r.write(byte(i as u8), v);
        }
        (t, r)
    }

    #[test]
    fn popcount_values() {
        assert_eq!(popcount(0), 0);
        assert_eq!(popcount(0xFF), 8);
        assert_eq!(popcount(u64::MAX), 64);
    }

    #[test]
    fn strict_and_improved_on_nibble_fixture() {
        let (t, r) = nibble_fixture();
        assert_eq!(reg_strict(&r, &t, &[byte(0)]), 4);
        assert_eq!(reg_improved(&r, &t, &[byte(0)], 1), 1);
        assert_eq!(reg_improved(&r, &t, &[byte(0)], 3), 3);
    }

    #[test]
    fn top_bit_distance() {
        let mut t = MachineState::new();
        let mut r = MachineState::new();
        t.write(Register::q(0), 1 << 63);
        r.write(Register::q(0), 0);
        assert_eq!(reg_strict(&r, &t, &[Register::q(0)]), 1);
        assert_eq!(reg_strict(&t, &t, &[Register::q(0)]), 0);
    }

    #[test]
    fn undefined_bits() {
        let mut t = MachineState::new();
        t.write(byte(0), 0xAA);
        // Rewrite never wrote r0: all 8 expected bits are missing.
        assert_eq!(reg_strict(&MachineState::new(), &t, &[byte(0)]), 8);
        // Bits the target leaves undefined are free.
        assert_eq!(reg_strict(&t, &MachineState::new(), &[byte(0)]), 0);
    }

    #[test]
    fn memory_terms() {
        let span = [Span { start: 0x100, len: 8 }];
        let mut t = MachineState::new();
        for k in 0..8 {
            t.memory_mut().set(0x100 + k, k as u8 + 1);
        }
        assert_eq!(mem_terms(&t, &(0x100..0x108).collect(), &t, &span, 3), (0, 0));

        // The right value stored one chunk too high.
        let mut r = MachineState::new();
        for k in 0..8 {
            r.memory_mut().set(0x100 + k, 0);
            r.memory_mut().set(0x108 + k, k as u8 + 1);
        }
        let strict: u64 = (1..=8u64).map(|v| v.count_ones() as u64).sum();
        let written: AddressSet = (0x100..0x110).collect();
        assert_eq!(mem_terms(&r, &written, &t, &span, 3), (strict, 3));
    }

    #[test]
    fn err_weights() {
        let p = CostParams::default();
        assert_eq!(err_term(&Counters::default(), &p), 0);
        let c = Counters {
            sigsegv: 2,
            sigfloat: 0,
            undef: 1,
        };
        assert_eq!(err_term(&c, &p), 4);
        let c = Counters {
            sigfloat: 5,
            ..Counters::default()
        };
        assert_eq!(err_term(&c, &p), 5 * p.w_fp);
    }

    #[test]
    fn perf_values() {
        let lat = LatencyTable::default();
        assert_eq!(perf_term(&Program::empty(4), &lat), 0);
        assert_eq!(perf_term(&parse_program("movq r1, r0\nmulq r6", 4).unwrap(), &lat), 4);
    }

    #[test]
    fn flags_opt_in() {
        let spec = TargetSpec {
            live_out: LiveOut {
                regs: vec![],
                flags: vec![Flag::Zf],
                memory: vec![],
            },
            ..TargetSpec::new(parse_program("cmpq r1, r0", 4).unwrap(), vec![Register::q(0), Register::q(1)], vec![])
        };
        let tests = generate(&spec, 8, 1).unwrap();
        let p = CostParams::default();
        assert_eq!(eq_prime(&spec.target, &tests, &p), 0);
        // Not writing ZF at all misses it on every testcase.
        assert_eq!(eq_prime(&Program::empty(4), &tests, &p), 8);
    }

    #[test]
    fn escalation() {
        let spec = TargetSpec::new(
            parse_program("negq r0", 4).unwrap(),
            vec![Register::q(0)],
            vec![Register::q(0)],
        );
        let tests = generate(&spec, 32, 7).unwrap();
        let v = Verifier::new(spec.clone(), VerifyConfig::default());
        let p = CostParams::default();
        let star = eq_star(&spec.target, &tests, &p, &v).unwrap();
        assert_eq!((star.cost, star.validation), (0, Validation::Proven));
        let bad = Program::empty(4);
        let star = eq_star(&bad, &tests, &p, &v).unwrap();
        assert_eq!(star.validation, Validation::NotAttempted);
        let oracle: u64 = tests
            .iter()
            .map(|t| {
                let x = t.input.reg(0);
                (x ^ x.wrapping_neg()).count_ones() as u64
            })
            .sum();
        assert_eq!(star.cost, oracle);

        let lat = LatencyTable::default();
        let synth = total_cost(&spec.target, &tests, &p, &lat, &v).unwrap();
        assert_eq!(synth.total, 0);
        let opt = total_cost(&spec.target, &tests, &p.with_mode(Mode::Optimization), &lat, &v).unwrap();
        assert_eq!((opt.total, opt.perf_term), (1, 1));
    }

    #[test]
    fn bounded_matches_full() {
        let spec = TargetSpec::new(
            parse_program("negq r0", 4).unwrap(),
            vec![Register::q(0)],
            vec![Register::q(0)],
        );
        let tests = generate(&spec, 32, 7).unwrap();
        // Every bit of the result wrong on every testcase.
        let bad = parse_program("negq r0\nnotq r0", 4).unwrap();
        let p = CostParams::default();
        let mut ev = Evaluator::new();
        let full = ev.eq_prime(&bad, &tests, &p).0;
        assert_eq!(full, 32 * 64);
        assert_eq!(ev.eq_prime_bounded(&bad, &tests, &p, 0, 64.0), Bounded::Exceeded { evaluated: 1 });
        assert_eq!(
            ev.eq_prime_bounded(&bad, &tests, &p, 0, full as f64 + 0.5),
            Bounded::Within { eq: full, err: 0 }
        );
        assert_eq!(
            ev.eq_prime_bounded(&bad, &tests, &p, 0, full as f64),
            Bounded::Exceeded { evaluated: 32 }
        );
    }
}
