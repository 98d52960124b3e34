//! Testcase generation and the testcase file format.
//!
//! Inputs are sampled with ChaCha8 seeded from the user seed; testcase `i`
//! draws from stream `i` of that generator, so corpora are reproducible
//! across platforms and independent of how many testcases are requested.
//!
//! Within a testcase, live-in registers are sampled in declaration order
//! (uniform over the register's width, or uniform over the annotated range),
//! then each byte of each input memory span in address order.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::isa::{Program, Register};
use crate::machine::{record_trace, AddressSet, Flag, MachineState, Sandbox, TraceError};

/// Default number of testcases per target.
pub const DEFAULT_COUNT: usize = 32;

/// Current testcase file schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// A contiguous run of bytes `[start, start + len)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: u64,
    pub len: u64,
}

impl Span {
    pub fn addresses(self) -> impl Iterator<Item = u64> {
        (0..self.len).map(move |k| self.start.wrapping_add(k))
    }
}

/// Restricts the sampled value of an input register to `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub reg: u8,
    pub min: u64,
    pub max: u64,
}

/// Testcase-only precondition: `reg` takes the value of one of `sources`,
/// chosen uniformly per testcase. The verifier ignores aliases and covers
/// the whole annotated domain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alias {
    pub reg: u8,
    pub sources: Vec<u8>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LiveOut {
    pub regs: Vec<Register>,
    pub flags: Vec<Flag>,
    pub memory: Vec<Span>,
}

impl LiveOut {
    pub fn is_empty(&self) -> bool {
        self.regs.is_empty() && self.flags.is_empty() && self.memory.is_empty()
    }
}

/// A target together with its live inputs and outputs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetSpec {
    pub target: Program,
    pub live_in: Vec<Register>,
    pub memory_in: Vec<Span>,
    pub live_out: LiveOut,
    pub annotations: Vec<Annotation>,
    pub aliases: Vec<Alias>,
}

impl TargetSpec {
    pub fn new(target: Program, live_in: Vec<Register>, live_out: Vec<Register>) -> TargetSpec {
        TargetSpec {
            target,
            live_in,
            memory_in: Vec::new(),
            live_out: LiveOut {
                regs: live_out,
                ..LiveOut::default()
            },
            annotations: Vec::new(),
            aliases: Vec::new(),
        }
    }

    pub fn annotation(&self, reg: u8) -> Option<&Annotation> {
        self.annotations.iter().find(|a| a.reg == reg)
    }
}

/// Expected value of one live register view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RegValue {
    pub reg: Register,
    pub value: u64,
    pub defined: u64,
}

/// The target's live outputs on one input.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Expected {
    pub regs: Vec<RegValue>,
    pub flags: Vec<(Flag, Option<bool>)>,
    /// Live memory bytes in span order; `None` for undefined bytes.
    pub memory: Vec<(u64, Option<u8>)>,
}

impl Expected {
    pub fn project(state: &MachineState, live_out: &LiveOut) -> Expected {
        Expected {
            regs: live_out
                .regs
                .iter()
                .map(|&reg| RegValue {
                    reg,
                    value: state.read(reg),
                    defined: state.read_defined(reg),
                })
                .collect(),
            flags: live_out.flags.iter().map(|&f| (f, state.flag(f))).collect(),
            memory: live_out
                .memory
                .iter()
                .flat_map(|s| s.addresses())
                .map(|a| (a, state.memory().get(a)))
                .collect(),
        }
    }
}

/// A recorded input, the target's live outputs on it, and the sandbox of
/// addresses the target dereferenced.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Testcase {
    pub input: MachineState,
    pub expected: Expected,
    pub sandbox: Sandbox,
}

#[derive(Debug, thiserror::Error)]
pub enum TestgenError {
    #[error("testcase count must be at least 1")]
    EmptyRequest,
    #[error("live_out is empty")]
    NoLiveOutputs,
    #[error("annotation for r{reg} has min {min:#x} > max {max:#x}")]
    BadAnnotation { reg: u8, min: u64, max: u64 },
    #[error("alias for r{reg} needs live-in target and sources")]
    BadAlias { reg: u8 },
    #[error("target faults on testcase {index} (annotations insufficient?): {source}; input registers: {input}")]
    Annotation {
        index: usize,
        input: String,
        #[source]
        source: TraceError,
    },
}

/// Runs the target on `input` and records the testcase.
pub fn record_testcase(spec: &TargetSpec, input: MachineState) -> Result<Testcase, TraceError> {
    let (outcome, legal) = record_trace(&spec.target, &input)?;
    Ok(Testcase {
        expected: Expected::project(&outcome.state, &spec.live_out),
        input,
        sandbox: Sandbox::new(legal),
    })
}

/// Samples one input state. Exposed for the random verification strategy.
pub fn sample_input<R: Rng>(spec: &TargetSpec, rng: &mut R) -> MachineState {
    let mut state = MachineState::new();
    for &reg in &spec.live_in {
        let mask = reg.width().mask();
        let value = match spec.annotation(reg.index()) {
            Some(a) => rng.gen_range(a.min..=a.max),
            None => rng.gen::<u64>(),
        };
        let defined = state.defined_mask(reg.index()) | mask;
        let merged = (state.reg(reg.index()) & !mask) | (value & mask);
        state.set_raw(reg.index(), merged, defined);
    }
    for alias in &spec.aliases {
        let source = alias.sources[rng.gen_range(0..alias.sources.len())];
        let mask = spec
            .live_in
            .iter()
            .filter(|r| r.index() == alias.reg)
            .fold(0, |m, r| m | r.width().mask());
        let merged = (state.reg(alias.reg) & !mask) | (state.reg(source) & mask);
        state.set_raw(alias.reg, merged, state.defined_mask(alias.reg));
    }
    for span in &spec.memory_in {
        for addr in span.addresses() {
            state.memory_mut().set(addr, rng.gen());
        }
    }
    state
}

pub(crate) fn check_spec(spec: &TargetSpec) -> Result<(), TestgenError> {
    if spec.live_out.is_empty() {
        return Err(TestgenError::NoLiveOutputs);
    }
    for a in &spec.annotations {
        if a.min > a.max {
            return Err(TestgenError::BadAnnotation {
                reg: a.reg,
                min: a.min,
                max: a.max,
            });
        }
    }
    for a in &spec.aliases {
        let live = |reg: u8| spec.live_in.iter().any(|r| r.index() == reg);
        if a.sources.is_empty() || !live(a.reg) || !a.sources.iter().all(|&s| live(s)) {
            return Err(TestgenError::BadAlias { reg: a.reg });
        }
    }
    Ok(())
}

/// Generates `count` testcases, deterministically in `seed`.
pub fn generate(spec: &TargetSpec, count: usize, seed: u64) -> Result<Vec<Testcase>, TestgenError> {
    if count == 0 {
        return Err(TestgenError::EmptyRequest);
    }
    check_spec(spec)?;
    (0..count)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            let input = sample_input(spec, &mut rng);
            let summary = describe_inputs(spec, &input);
            record_testcase(spec, input).map_err(|source| TestgenError::Annotation {
                index,
                input: summary,
                source,
            })
        })
        .collect()
}

fn describe_inputs(spec: &TargetSpec, input: &MachineState) -> String {
    spec.live_in
        .iter()
        .map(|r| format!("{r}={:#x}", input.read(*r)))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, thiserror::Error)]
pub enum TestcaseFileError {
    #[error("testcase file: {0}")]
    Io(#[from] std::io::Error),
    #[error("testcase file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("testcase file: unsupported schema version {found} (this build reads version {SCHEMA_VERSION})")]
    Version { found: u32 },
    #[error("testcase file: {0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------------
// JSON representation

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRepr {
    version: u32,
    testcases: Vec<TestcaseRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestcaseRepr {
    input: StateRepr,
    expected: ExpectedRepr,
    #[serde(default)]
    legal_addresses: Vec<String>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub(crate) struct StateRepr {
    #[serde(default)]
    regs: BTreeMap<Register, RegRepr>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    flags: BTreeMap<Flag, bool>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    memory: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegRepr {
    value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    defined: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpectedRepr {
    #[serde(default)]
    regs: Vec<ExpectedRegRepr>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    flags: Vec<(Flag, Option<bool>)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    memory: Vec<(String, Option<String>)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpectedRegRepr {
    reg: Register,
    value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    defined: Option<String>,
}

pub(crate) fn hex(v: u64) -> String {
    format!("{v:#x}")
}

pub(crate) fn parse_hex(s: &str) -> Result<u64, TestcaseFileError> {
    let digits = s
        .strip_prefix("0x")
        .ok_or_else(|| TestcaseFileError::Invalid(format!("expected 0x-prefixed hex, found `{s}`")))?;
    u64::from_str_radix(digits, 16).map_err(|_| TestcaseFileError::Invalid(format!("bad hex value `{s}`")))
}

impl StateRepr {
    pub(crate) fn from_state(state: &MachineState) -> StateRepr {
        let mut regs = BTreeMap::new();
        for i in 0..crate::isa::NUM_REGS as u8 {
            let defined = state.defined_mask(i);
            if defined != 0 {
                regs.insert(
                    Register::q(i),
                    RegRepr {
                        value: hex(state.reg(i)),
                        defined: (defined != u64::MAX).then(|| hex(defined)),
                    },
                );
            }
        }
        let flags = Flag::ALL
            .iter()
            .filter_map(|&f| state.flag(f).map(|v| (f, v)))
            .collect();
        let memory = state.memory().iter().map(|(a, b)| (hex(a), hex(b as u64))).collect();
        StateRepr { regs, flags, memory }
    }

    pub(crate) fn to_state(&self) -> Result<MachineState, TestcaseFileError> {
        let mut state = MachineState::new();
        for (reg, repr) in &self.regs {
            let mask = reg.width().mask();
            let value = parse_hex(&repr.value)?;
            let defined = match &repr.defined {
                Some(d) => parse_hex(d)?,
                None => mask,
            };
            if value & !defined != 0 || defined & !mask != 0 {
                return Err(TestcaseFileError::Invalid(format!(
                    "{reg}: value or definedness exceeds the register view"
                )));
            }
            state.set_raw(reg.index(), value, defined);
        }
        for (&flag, &value) in &self.flags {
            state.set_flag(flag, Some(value));
        }
        for (addr, byte) in &self.memory {
            let byte = parse_hex(byte)?;
            if byte > 0xFF {
                return Err(TestcaseFileError::Invalid(format!("memory byte `{byte:#x}` out of range")));
            }
            state.memory_mut().set(parse_hex(addr)?, byte as u8);
        }
        Ok(state)
    }
}

fn encode_addresses(set: &AddressSet) -> Vec<String> {
    let mut out = Vec::new();
    let mut iter = set.iter().peekable();
    while let Some(start) = iter.next() {
        let mut end = start;
        while iter.peek() == Some(&end.wrapping_add(1)) {
            end = iter.next().unwrap();
        }
        if start == end {
            out.push(hex(start));
        } else {
            out.push(format!("{}-{}", hex(start), hex(end)));
        }
    }
    out
}

fn decode_addresses(items: &[String]) -> Result<AddressSet, TestcaseFileError> {
    let mut addrs = Vec::new();
    for item in items {
        match item.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (parse_hex(a)?, parse_hex(b)?);
                if b < a || b - a > 1 << 20 {
                    return Err(TestcaseFileError::Invalid(format!("bad address range `{item}`")));
                }
                addrs.extend(a..=b);
            }
            None => addrs.push(parse_hex(item)?),
        }
    }
    Ok(addrs.into_iter().collect())
}

impl Testcase {
    fn to_repr(&self) -> TestcaseRepr {
        TestcaseRepr {
            input: StateRepr::from_state(&self.input),
            expected: ExpectedRepr {
                regs: self
                    .expected
                    .regs
                    .iter()
                    .map(|r| ExpectedRegRepr {
                        reg: r.reg,
                        value: hex(r.value),
                        defined: (r.defined != r.reg.width().mask()).then(|| hex(r.defined)),
                    })
                    .collect(),
                flags: self.expected.flags.clone(),
                memory: self
                    .expected
                    .memory
                    .iter()
                    .map(|&(a, b)| (hex(a), b.map(|b| hex(b as u64))))
                    .collect(),
            },
            legal_addresses: encode_addresses(self.sandbox.legal_addresses()),
        }
    }

    fn from_repr(repr: &TestcaseRepr) -> Result<Testcase, TestcaseFileError> {
        let regs = repr
            .expected
            .regs
            .iter()
            .map(|r| {
                let mask = r.reg.width().mask();
                let defined = match &r.defined {
                    Some(d) => parse_hex(d)?,
                    None => mask,
                };
                let value = parse_hex(&r.value)?;
                if value & !mask != 0 || defined & !mask != 0 {
                    return Err(TestcaseFileError::Invalid(format!("{}: value exceeds the register view", r.reg)));
                }
                Ok(RegValue {
                    reg: r.reg,
                    value,
                    defined,
                })
            })
            .collect::<Result<_, _>>()?;
        let memory = repr
            .expected
            .memory
            .iter()
            .map(|(a, b)| {
                let byte = match b {
                    Some(b) => {
                        let v = parse_hex(b)?;
                        if v > 0xFF {
                            return Err(TestcaseFileError::Invalid(format!("memory byte `{b}` out of range")));
                        }
                        Some(v as u8)
                    }
                    None => None,
                };
                Ok((parse_hex(a)?, byte))
            })
            .collect::<Result<_, _>>()?;
        Ok(Testcase {
            input: repr.input.to_state()?,
            expected: Expected {
                regs,
                flags: repr.expected.flags.clone(),
                memory,
            },
            sandbox: Sandbox::new(decode_addresses(&repr.legal_addresses)?),
        })
    }
}

/// Serializes testcases to the versioned JSON format.
pub fn testcases_to_json(testcases: &[Testcase]) -> String {
    let file = FileRepr {
        version: SCHEMA_VERSION,
        testcases: testcases.iter().map(Testcase::to_repr).collect(),
    };
    serde_json::to_string_pretty(&file).expect("testcases serialize")
}

pub fn testcases_from_json(text: &str) -> Result<Vec<Testcase>, TestcaseFileError> {
    #[derive(Deserialize)]
    struct VersionProbe {
        version: u32,
    }
    let probe: VersionProbe = serde_json::from_str(text)?;
    if probe.version != SCHEMA_VERSION {
        return Err(TestcaseFileError::Version { found: probe.version });
    }
    let file: FileRepr = serde_json::from_str(text)?;
    file.testcases.iter().map(Testcase::from_repr).collect()
}

pub fn save_testcases(path: &Path, testcases: &[Testcase]) -> Result<(), TestcaseFileError> {
    std::fs::write(path, testcases_to_json(testcases))?;
    Ok(())
}

pub fn load_testcases(path: &Path) -> Result<Vec<Testcase>, TestcaseFileError> {
    testcases_from_json(&std::fs::read_to_string(path)?)
}
