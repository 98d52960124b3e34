//! Emulator results against Rust integer arithmetic.

use proptest::prelude::*;

use superopt::isa::{format_program, parse_listing, Program, Register};
use superopt::machine::{execute, Flag, MachineState, Sandbox};

fn run(text: &str, a: u64, b: u64) -> MachineState {
    let mut input = MachineState::new();
    input.write(Register::q(0), a);
    input.write(Register::q(1), b);
    let out = execute(&parse_listing(text).unwrap(), &input, &Sandbox::permissive());
    assert!(out.counters.is_clean(), "{text} faulted");
    out.state
}

fn r0(text: &str, a: u64, b: u64) -> u64 {
    run(text, a, b).reg(0)
}

const LOW: u64 = 0xffff_ffff;

proptest! {
    #[test]
    fn quad_alu(a: u64, b: u64) {
        prop_assert_eq!(r0("addq r1, r0", a, b), a.wrapping_add(b));
        prop_assert_eq!(r0("subq r1, r0", a, b), a.wrapping_sub(b));
        prop_assert_eq!(r0("andq r1, r0", a, b), a & b);
        prop_assert_eq!(r0("orq r1, r0", a, b), a | b);
        prop_assert_eq!(r0("xorq r1, r0", a, b), a ^ b);
        prop_assert_eq!(r0("imulq r1, r0", a, b), a.wrapping_mul(b));
        prop_assert_eq!(r0("negq r0", a, b), a.wrapping_neg());
        prop_assert_eq!(r0("notq r0", a, b), !a);
        prop_assert_eq!(r0("popcntq r1, r0", a, b), u64::from(b.count_ones()));
        prop_assert_eq!(r0("movq r1, r0", a, b), b);
    }

    #[test]
    fn long_ops_zero_the_upper_half(a: u64, b: u64) {
        prop_assert_eq!(r0("addl r1d, r0d", a, b), (a as u32).wrapping_add(b as u32) as u64);
        prop_assert_eq!(r0("xorl r1d, r0d", a, b), (a ^ b) & LOW);
        prop_assert_eq!(r0("movl r1d, r0d", a, b), b & LOW);
    }

    #[test]
    fn byte_ops_keep_the_upper_bits(a: u64, b: u64) {
        let low = (a as u8).wrapping_add(b as u8) as u64;
        prop_assert_eq!(r0("addb r1b, r0b", a, b), (a & !0xff) | low);
    }

    #[test]
    fn shifts_by_constant(a: u64, k in 0u32..64) {
        prop_assert_eq!(r0(&format!("shlq {k}, r0"), a, 0), a << k);
        prop_assert_eq!(r0(&format!("shrq {k}, r0"), a, 0), a >> k);
        prop_assert_eq!(r0(&format!("sarq {k}, r0"), a, 0), ((a as i64) >> k) as u64);
    }

    #[test]
    fn widening_multiply(a: u64, b: u64) {
        let s = run("mulq r1", a, b);
        let wide = u128::from(a) * u128::from(b);
        prop_assert_eq!(s.reg(0), wide as u64);
        prop_assert_eq!(s.reg(2), (wide >> 64) as u64);
    }

    #[test]
    fn compare_flags_and_conditionals(a: u64, b: u64) {
        let s = run("cmpq r1, r0", a, b);
        prop_assert_eq!(s.flag(Flag::Zf), Some(a == b));
        prop_assert_eq!(s.flag(Flag::Cf), Some(a < b));
        prop_assert_eq!(s.flag(Flag::Sf), Some((a.wrapping_sub(b) as i64) < 0));
        prop_assert_eq!(s.flag(Flag::Of), Some((a as i64).overflowing_sub(b as i64).1));
        prop_assert_eq!(r0("cmpq r1, r0\nsetb r0b", a, b), (a & !0xff) | u64::from(a < b));
        prop_assert_eq!(r0("cmpq r1, r0\ncmovneq r1, r0", a, b), b);
        let min = r0("movq r0, r2\ncmpq r1, r0\ncmovbq r0, r1\nmovq r1, r0", a, b);
        prop_assert_eq!(min, a.min(b));
    }

    #[test]
    fn carry_chain_adds_128_bits(a: u64, b: u64, c: u64, d: u64) {
        let mut input = MachineState::new();
        for (reg, v) in [(0, a), (1, b), (2, c), (3, d)] {
            input.write(Register::q(reg), v);
        }
        let program = parse_listing("addq r2, r0\nadcq r3, r1").unwrap();
        let s = execute(&program, &input, &Sandbox::permissive()).state;
        let sum = (u128::from(b) << 64 | u128::from(a)).wrapping_add(u128::from(d) << 64 | u128::from(c));
        prop_assert_eq!((s.reg(0), s.reg(1)), (sum as u64, (sum >> 64) as u64));
    }

    #[test]
    fn store_then_load_round_trips(a: u64) {
        let mut input = MachineState::new();
        input.write(Register::q(0), a);
        input.write(Register::q(4), 0x10000);
        let program = parse_listing("storeq r0, -8(r4)\nloadl -8(r4), r1d\nloadq -8(r4), r2").unwrap();
        let out = execute(&program, &input, &Sandbox::permissive());
        prop_assert!(out.counters.is_clean());
        prop_assert_eq!(out.state.reg(1), a & LOW);
        prop_assert_eq!(out.state.reg(2), a);
        prop_assert_eq!(out.state.memory().read_span(0x10000 - 8, 8), (a, true));
    }
}

#[test]
fn loads_outside_the_sandbox_fault() {
    let mut input = MachineState::new();
    input.write(Register::q(4), 0x10000);
    let out = execute(&parse_listing("loadq -8(r4), r0").unwrap(), &input, &Sandbox::new(Default::default()));
    assert_eq!(out.counters.sigsegv, 1);
}

#[test]
fn listing_round_trips_through_the_formatter() {
    let text = "popcntl r7d, r0d\ncmpl 1, r0d\nsete r0b\nstorel r7d, -4(r4)\nmulq r1\n";
    let program: Program = parse_listing(text).unwrap();
    assert_eq!(format_program(&program), text);
}
