use std::path::PathBuf;
use std::process::{Command, Output};

use superopt::isa::Register;
use superopt::testgen::testcases_from_json;

fn superopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_superopt"))
        .args(args)
        .env_remove("SUPEROPT_CONFIG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_job(name: &str, text: &str) -> PathBuf {
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::write(&path, text).unwrap();
    path
}

const ADD: &str = r#"
[target]
text = "addq r1, r0"
live_in = ["r0", "r1"]
live_out = ["r0"]
"#;

#[test]
fn verify_proves_an_equivalent_rewrite() {
    let job = write_job("add_proven.toml", ADD);
    let out = superopt(&[
        "verify",
        "--config",
        job.to_str().unwrap(),
        "--rewrite-text",
        "movq r1, r2\naddq r0, r2\nmovq r2, r0",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn verify_refutes_sub_for_add_with_a_real_counterexample() {
    let job = write_job("add_refuted.toml", ADD);
    let out = superopt(&[
        "verify",
        "--config",
        job.to_str().unwrap(),
        "--rewrite-text",
        "subq r1, r0",
        "--json",
    ]);
    assert_eq!(code(&out), 5);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["verdict"]["status"], "refuted");
    let doc = serde_json::json!({ "version": 1, "testcases": [report["verdict"]["counterexample"]] });
    let cex = testcases_from_json(&doc.to_string()).unwrap();
    // x + y and x - y agree exactly when 2y wraps to zero.
    let y = cex[0].input.read(Register::q(1));
    assert!(y != 0 && y != 1 << 63, "y = {y:#x} does not separate add from sub");
}

#[test]
fn verify_over_budget_is_inconclusive() {
    let job = write_job("add_inconclusive.toml", &format!("{ADD}\n[verify]\ninput_budget = 16\n"));
    let out = superopt(&["verify", "--config", job.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn testgen_writes_the_requested_count() {
    let job = write_job("neg.toml", "[target]\ntext = \"negq r0\"\nlive_in = [\"r0\"]\nlive_out = [\"r0\"]\n");
    let out = superopt(&["testgen", "--config", job.to_str().unwrap(), "--count", "7"]);
    assert_eq!(code(&out), 0);
    let tests = testcases_from_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert_eq!(tests.len(), 7);
    for t in &tests {
        let x = t.input.read(Register::q(0));
        assert_eq!(t.expected.regs[0].value, x.wrapping_neg());
    }
}

#[test]
fn exhausted_budget_is_not_found() {
    let out = superopt(&["synthesize", "--kernel", "p20", "--proposals", "200", "--workers", "1"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn same_seed_same_report() {
    let args = ["run", "--kernel", "p23", "--proposals", "5000", "--workers", "2", "--seed", "3", "--json"];
    let a = superopt(&args);
    let b = superopt(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&superopt(&["frobnicate"])), 2);
    assert_eq!(code(&superopt(&["verify"])), 2);
    assert_eq!(
        code(&superopt(&["verify", "--kernel", "p23", "--golden", "--rewrite-text", "negq r0"])),
        2
    );
}

#[test]
fn bad_input_exits_1() {
    assert_eq!(code(&superopt(&["verify", "--config", "/nonexistent/job.toml"])), 1);
    let job = write_job("broken.toml", "[target]\ntext = \"frob r0\"\nlive_in = [\"r0\"]\nlive_out = [\"r0\"]\n");
    assert_eq!(code(&superopt(&["verify", "--config", job.to_str().unwrap()])), 1);
}

#[test]
fn run_finds_a_proven_double() {
    let job = write_job(
        "double.toml",
        "[target]\ntext = \"movq r0, r1\\naddq r1, r0\"\nlive_in = [\"r0\"]\nlive_out = [\"r0\"]\n",
    );
    let out = superopt(&["run", "--config", job.to_str().unwrap(), "--proposals", "20000", "--json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["status"], "proven");
}

#[test]
fn zero_budget_synthesis_is_not_found() {
    let out = superopt(&["synthesize", "--kernel", "p23", "--proposals", "0"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn missing_target_file_is_an_error() {
    let job = write_job(
        "missing_target.toml",
        "[target]\npath = \"/nonexistent/target.s\"\nlive_in = [\"r0\"]\nlive_out = [\"r0\"]\n",
    );
    assert_eq!(code(&superopt(&["testgen", "--config", job.to_str().unwrap()])), 1);
}
