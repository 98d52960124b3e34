//! The benchmark corpus, embedded so `bench` works from any directory.

use superopt::isa::{parse_listing, Program};

use crate::config::{ConfigError, JobConfig, KernelSection};

/// Kernel name and TOML source, in bench order.
pub const KERNELS: &[(&str, &str)] = &[
    ("p18", include_str!("../corpus/p18.toml")),
    ("p21", include_str!("../corpus/p21.toml")),
    ("p22", include_str!("../corpus/p22.toml")),
    ("p23", include_str!("../corpus/p23.toml")),
    ("p25", include_str!("../corpus/p25.toml")),
    ("montgomery", include_str!("../corpus/montgomery.toml")),
    ("p19", include_str!("../corpus/p19.toml")),
    ("p20", include_str!("../corpus/p20.toml")),
    ("p24", include_str!("../corpus/p24.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    KERNELS.iter().map(|(n, _)| *n)
}

/// The job config of kernel `name`.
pub fn kernel(name: &str) -> Result<JobConfig, ConfigError> {
    let (_, text) = KERNELS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ConfigError::Invalid(format!("no corpus kernel named `{name}`")))?;
    let cfg = JobConfig::parse(text)?;
    if cfg.kernel.is_none() {
        return Err(ConfigError::Invalid(format!("corpus kernel `{name}` lacks a [kernel] section")));
    }
    Ok(cfg)
}

pub fn metadata(cfg: &JobConfig) -> Result<&KernelSection, ConfigError> {
    cfg.kernel
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("config has no [kernel] section".into()))
}

pub fn golden(cfg: &JobConfig) -> Result<Program, ConfigError> {
    Ok(parse_listing(&metadata(cfg)?.golden)?)
}
