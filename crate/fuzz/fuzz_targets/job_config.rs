#![no_main]

use libfuzzer_sys::fuzz_target;
use superopt_cli::config::JobConfig;

// Only inline targets are followed further, so the fuzzer never reads files.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = JobConfig::parse(text) else { return };
    if cfg.target.path.is_none() && cfg.isa.latency.is_none() {
        if let Ok(spec) = cfg.target_spec() {
            let _ = cfg.build_isa(&spec.target);
        }
    }
});
