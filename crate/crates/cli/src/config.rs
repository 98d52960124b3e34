//! Job configuration: a TOML file naming the target, its live sets, the
//! testcase source and parameter overrides for every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use superopt::cost::CostParams;
use superopt::isa::{parse_listing, Isa, LatencyTable, Op, Opcode, Program, Register, DEFAULT_CONSTANTS, NUM_REGS};
use superopt::machine::Flag;
use superopt::mcmc::McmcParams;
use superopt::search::{Problem, SearchConfig};
use superopt::testgen::{self, Alias, Annotation, LiveOut, Span, TargetSpec, Testcase};
use superopt::verify::VerifyConfig;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "SUPEROPT_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error("target: {0}")]
    Parse(#[from] superopt::isa::ParseError),
    #[error(transparent)]
    Latency(#[from] superopt::isa::LatencyError),
    #[error(transparent)]
    Testgen(#[from] superopt::testgen::TestgenError),
    #[error(transparent)]
    Testcases(#[from] superopt::testgen::TestcaseFileError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub target: TargetSection,
    #[serde(default)]
    pub testcases: TestcaseSection,
    #[serde(default)]
    pub isa: IsaSection,
    #[serde(default)]
    pub mcmc: McmcParams,
    #[serde(default)]
    pub cost: CostParams,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    /// Corpus metadata; ignored outside `bench`.
    #[serde(default)]
    pub kernel: Option<KernelSection>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    /// Assembly file, relative to the config file.
    pub path: Option<PathBuf>,
    /// Inline assembly; exclusive with `path`.
    pub text: Option<String>,
    pub live_in: Vec<String>,
    pub live_out: Vec<String>,
    pub live_out_flags: Vec<String>,
    pub memory_in: Vec<Span>,
    pub live_out_memory: Vec<Span>,
    pub annotations: Vec<AnnotationEntry>,
    /// Testcase-only preconditions, e.g. `{ reg = "r7", sources = ["r6", "r1"] }`.
    pub aliases: Vec<AliasEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AliasEntry {
    pub reg: String,
    pub sources: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationEntry {
    pub reg: String,
    pub min: u64,
    pub max: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestcaseSection {
    /// Load testcases from this JSON file instead of generating them.
    pub path: Option<PathBuf>,
    pub count: usize,
    pub seed: u64,
}

impl Default for TestcaseSection {
    fn default() -> Self {
        TestcaseSection {
            path: None,
            count: testgen::DEFAULT_COUNT,
            seed: 0,
        }
    }
}

/// Restrictions of the proposal universe. Unset fields keep the full pool.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsaSection {
    /// Operation names (`add`) or mnemonics (`addl`).
    pub opcodes: Option<Vec<String>>,
    /// Register names; the width suffix is ignored.
    pub registers: Option<Vec<String>>,
    /// Replaces the default constant bag. Target immediates are always added.
    pub constants: Option<Vec<u64>>,
    /// Latency table file, relative to the config file.
    pub latency: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    /// Synthesis should find a proven rewrite.
    Proven,
    /// Synthesis is expected to time out.
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub name: String,
    pub description: String,
    /// Known-good rewrite.
    pub golden: String,
    pub expect: Expectation,
    #[serde(default)]
    pub notes: Option<String>,
}

impl JobConfig {
    pub fn parse(text: &str) -> Result<JobConfig, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path`, resolving relative paths inside it against its directory.
    pub fn load(path: &Path) -> Result<JobConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = JobConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        rebase(&mut cfg.target.path);
        rebase(&mut cfg.testcases.path);
        rebase(&mut cfg.isa.latency);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.mcmc.validate().map_err(|e| invalid(e.to_string()))?;
        self.search.validate().map_err(|e| invalid(e.to_string()))?;
        if self.verify.min_width == 0 || self.verify.min_width > self.verify.width_cap || self.verify.width_cap > 64 {
            return Err(invalid("verify widths must satisfy 1 <= min_width <= width_cap <= 64"));
        }
        match (&self.target.path, &self.target.text) {
            (Some(_), Some(_)) => return Err(invalid("target: give either `path` or `text`, not both")),
            (None, None) => return Err(invalid("target: `path` or `text` is required")),
            _ => {}
        }
        if self.testcases.path.is_none() && self.testcases.count == 0 {
            return Err(invalid("testcases.count must be at least 1"));
        }
        Ok(())
    }

    pub fn target_text(&self) -> Result<String, ConfigError> {
        match (&self.target.path, &self.target.text) {
            (Some(path), _) => std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            }),
            (None, Some(text)) => Ok(text.clone()),
            (None, None) => Err(invalid("target: `path` or `text` is required")),
        }
    }

    pub fn target_spec(&self) -> Result<TargetSpec, ConfigError> {
        let text = self.target_text()?;
        let target = parse_listing(&text)?;
        self.spec_for(target)
    }

    /// The live sets of this config around an already parsed target.
    pub fn spec_for(&self, target: Program) -> Result<TargetSpec, ConfigError> {
        let t = &self.target;
        let live_in = parse_registers(&t.live_in)?;
        let regs = parse_registers(&t.live_out)?;
        let flags = t
            .live_out_flags
            .iter()
            .map(|f| f.parse::<Flag>().map_err(invalid))
            .collect::<Result<Vec<_>, _>>()?;
        let annotations = t
            .annotations
            .iter()
            .map(|a| {
                let reg = a.reg.parse::<Register>().map_err(invalid)?;
                Ok(Annotation {
                    reg: reg.index(),
                    min: a.min,
                    max: a.max,
                })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let aliases = t
            .aliases
            .iter()
            .map(|a| {
                Ok(Alias {
                    reg: a.reg.parse::<Register>().map_err(invalid)?.index(),
                    sources: parse_registers(&a.sources)?.iter().map(|r| r.index()).collect(),
                })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        Ok(TargetSpec {
            target,
            live_in,
            memory_in: t.memory_in.clone(),
            live_out: LiveOut {
                regs,
                flags,
                memory: t.live_out_memory.clone(),
            },
            annotations,
            aliases,
        })
    }

    pub fn build_isa(&self, target: &Program) -> Result<Isa, ConfigError> {
        let mut builder = Isa::builder().constants(self.isa.constants.clone().unwrap_or_else(|| DEFAULT_CONSTANTS.to_vec()));
        if let Some(names) = &self.isa.opcodes {
            builder = builder.opcodes(parse_opcodes(names)?);
        }
        if let Some(names) = &self.isa.registers {
            let regs = parse_registers(names)?;
            builder = builder.registers(regs.iter().map(|r| r.index()));
        }
        if let Some(path) = &self.isa.latency {
            builder = builder.latency(LatencyTable::load(path)?);
        }
        Ok(builder.with_target(target).build())
    }

    pub fn testcases(&self, spec: &TargetSpec) -> Result<Vec<Testcase>, ConfigError> {
        match &self.testcases.path {
            Some(path) => Ok(testgen::load_testcases(path)?),
            None => Ok(testgen::generate(spec, self.testcases.count, self.testcases.seed)?),
        }
    }

    /// Validates and assembles everything a search needs.
    pub fn problem(&self) -> Result<Problem, ConfigError> {
        self.validate()?;
        let spec = self.target_spec()?;
        let isa = self.build_isa(&spec.target)?;
        let tests = self.testcases(&spec)?;
        Ok(Problem {
            spec,
            isa,
            tests,
            mcmc: self.mcmc,
            cost: self.cost,
        })
    }
}

pub fn parse_registers(names: &[String]) -> Result<Vec<Register>, ConfigError> {
    names
        .iter()
        .map(|n| {
            let r = n.trim().parse::<Register>().map_err(invalid)?;
            if (r.index() as usize) < NUM_REGS {
                Ok(r)
            } else {
                Err(invalid(format!("register `{n}` out of range")))
            }
        })
        .collect()
}

pub fn parse_opcodes(names: &[String]) -> Result<Vec<Opcode>, ConfigError> {
    let mut out = Vec::new();
    for name in names {
        let name = name.trim();
        let matched: Vec<Opcode> = match Op::from_name(name) {
            Some(op) => Opcode::all().iter().copied().filter(|o| o.op() == op).collect(),
            None => Opcode::all().iter().copied().filter(|o| o.mnemonic() == name).collect(),
        };
        if matched.is_empty() {
            return Err(invalid(format!("unknown opcode `{name}`")));
        }
        out.extend(matched);
    }
    Ok(out)
}
