//! Deterministic emulator for the ISA.
//!
//! Faults never abort execution: a dereference outside the sandbox yields a
//! zero value (or a dropped store) and bumps `sigsegv`, a read of an undefined
//! register, flag or memory byte yields zeros for the undefined bits and bumps
//! `undef`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::isa::{Form, Instruction, MemOperand, Op, Operand, Program, Register, Width, NUM_REGS};

/// Condition flags modelled by the emulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flag {
    Cf,
    Zf,
    Sf,
    Of,
}

impl Flag {
    pub const ALL: [Flag; 4] = [Flag::Cf, Flag::Zf, Flag::Sf, Flag::Of];

    const fn bit(self) -> u8 {
        match self {
            Flag::Cf => 1,
            Flag::Zf => 2,
            Flag::Sf => 4,
            Flag::Of => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Flag::Cf => "cf",
            Flag::Zf => "zf",
            Flag::Sf => "sf",
            Flag::Of => "of",
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Flag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Flag::ALL
            .into_iter()
            .find(|f| f.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown flag `{s}`"))
    }
}

/// Sparse byte-addressed memory holding only defined bytes.
#[derive(Debug, Default, PartialEq, Eq, Hash)]
pub struct Memory {
    bytes: Vec<(u64, u8)>,
}

impl Clone for Memory {
    fn clone(&self) -> Self {
        Memory {
            bytes: self.bytes.clone(),
        }
    }

    fn clone_from(&mut self, source: &Self) {
        self.bytes.clone_from(&source.bytes);
    }
}

impl Memory {
    pub fn get(&self, addr: u64) -> Option<u8> {
        self.bytes
            .binary_search_by_key(&addr, |&(a, _)| a)
            .ok()
            .map(|i| self.bytes[i].1)
    }

    pub fn set(&mut self, addr: u64, value: u8) {
        match self.bytes.binary_search_by_key(&addr, |&(a, _)| a) {
            Ok(i) => self.bytes[i].1 = value,
            Err(i) => self.bytes.insert(i, (addr, value)),
        }
    }

    /// Little-endian read of `len` bytes at `addr`. The flag is false when
    /// any byte is undefined; undefined bytes read as zero.
    pub fn read_span(&self, addr: u64, len: usize) -> (u64, bool) {
        let mut value = 0u64;
        let mut complete = true;
        if addr.checked_add(len as u64).is_none() {
            for k in 0..len {
                match self.get(addr.wrapping_add(k as u64)) {
                    Some(b) => value |= (b as u64) << (8 * k),
                    None => complete = false,
                }
            }
            return (value, complete);
        }
        let mut j = self.bytes.partition_point(|&(a, _)| a < addr);
        for k in 0..len {
            match self.bytes.get(j) {
                Some(&(a, b)) if a == addr + k as u64 => {
                    value |= (b as u64) << (8 * k);
                    j += 1;
                }
                _ => complete = false,
            }
        }
        (value, complete)
    }

    /// Little-endian write of the low `len` bytes of `value` at `addr`.
    pub fn write_span(&mut self, addr: u64, len: usize, value: u64) {
        if addr.checked_add(len as u64).is_none() {
            for k in 0..len {
                self.set(addr.wrapping_add(k as u64), (value >> (8 * k)) as u8);
            }
            return;
        }
        let start = self.bytes.partition_point(|&(a, _)| a < addr);
        for (k, j) in (start..start + len).enumerate() {
            let a = addr + k as u64;
            let b = (value >> (8 * k)) as u8;
            match self.bytes.get_mut(j) {
                Some(slot) if slot.0 == a => slot.1 = b,
                _ => self.bytes.insert(j, (a, b)),
            }
        }
    }

    pub fn remove(&mut self, addr: u64) {
        if let Ok(i) = self.bytes.binary_search_by_key(&addr, |&(a, _)| a) {
            self.bytes.remove(i);
        }
    }

    /// Defined bytes in address order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u8)> + '_ {
        self.bytes.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// Registers with per-bit definedness, tri-state flags and sparse memory.
///
/// Undefined register bits always hold zero.
#[derive(Debug, Default, PartialEq, Eq, Hash)]
pub struct MachineState {
    regs: [u64; NUM_REGS],
    defined: [u64; NUM_REGS],
    flag_values: u8,
    flag_defined: u8,
    memory: Memory,
}

impl Clone for MachineState {
    fn clone(&self) -> Self {
        MachineState {
            regs: self.regs,
            defined: self.defined,
            flag_values: self.flag_values,
            flag_defined: self.flag_defined,
            memory: self.memory.clone(),
        }
    }

    // Reuses the memory buffer; the emulator calls this once per run.
    fn clone_from(&mut self, source: &Self) {
        self.regs = source.regs;
        self.defined = source.defined;
        self.flag_values = source.flag_values;
        self.flag_defined = source.flag_defined;
        self.memory.clone_from(&source.memory);
    }
}

impl MachineState {
    /// Everything undefined.
    pub fn new() -> MachineState {
        MachineState::default()
    }

    pub fn reg(&self, index: u8) -> u64 {
        self.regs[index as usize]
    }

    pub fn defined_mask(&self, index: u8) -> u64 {
        self.defined[index as usize]
    }

    /// Value of a register view, undefined bits reading as zero.
    pub fn read(&self, r: Register) -> u64 {
        self.regs[r.index() as usize] & r.width().mask()
    }

    /// Definedness of a register view.
    pub fn read_defined(&self, r: Register) -> u64 {
        self.defined[r.index() as usize] & r.width().mask()
    }

    /// Writes a register view with x86 aliasing rules; written bits become
    /// defined.
    pub fn write(&mut self, r: Register, value: u64) {
        let i = r.index() as usize;
        match r.width() {
            Width::B64 => {
                self.regs[i] = value;
                self.defined[i] = u64::MAX;
            }
            Width::B32 => {
                self.regs[i] = value & 0xFFFF_FFFF;
                self.defined[i] = u64::MAX;
            }
            w => {
                let m = w.mask();
                self.regs[i] = (self.regs[i] & !m) | (value & m);
                self.defined[i] |= m;
            }
        }
    }

    /// Sets the raw 64-bit contents and definedness mask of a register.
    pub fn set_raw(&mut self, index: u8, value: u64, defined: u64) {
        self.regs[index as usize] = value & defined;
        self.defined[index as usize] = defined;
    }

    pub fn flag(&self, flag: Flag) -> Option<bool> {
        (self.flag_defined & flag.bit() != 0).then_some(self.flag_values & flag.bit() != 0)
    }

    pub fn set_flag(&mut self, flag: Flag, value: Option<bool>) {
        match value {
            Some(v) => {
                self.flag_defined |= flag.bit();
                if v {
                    self.flag_values |= flag.bit();
                } else {
                    self.flag_values &= !flag.bit();
                }
            }
            None => {
                self.flag_defined &= !flag.bit();
                self.flag_values &= !flag.bit();
            }
        }
    }

    pub fn memory(&self) -> &Memory {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut Memory {
        &mut self.memory
    }
}

/// Sorted set of byte addresses.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct AddressSet {
    addrs: Vec<u64>,
}

impl AddressSet {
    pub fn new() -> AddressSet {
        AddressSet::default()
    }

    pub fn contains(&self, addr: u64) -> bool {
        self.addrs.binary_search(&addr).is_ok()
    }

    pub fn contains_span(&self, addr: u64, len: usize) -> bool {
        if addr.checked_add(len as u64).is_none() {
            return (0..len as u64).all(|k| self.contains(addr.wrapping_add(k)));
        }
        let i = self.addrs.partition_point(|&a| a < addr);
        self.addrs
            .get(i..i + len)
            .is_some_and(|run| run.iter().zip(addr..).all(|(&a, b)| a == b))
    }

    pub fn insert(&mut self, addr: u64) {
        if let Err(i) = self.addrs.binary_search(&addr) {
            self.addrs.insert(i, addr);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.addrs.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.addrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addrs.is_empty()
    }
}

impl FromIterator<u64> for AddressSet {
    fn from_iter<I: IntoIterator<Item = u64>>(iter: I) -> Self {
        let mut addrs: Vec<u64> = iter.into_iter().collect();
        addrs.sort_unstable();
        addrs.dedup();
        AddressSet { addrs }
    }
}

/// The addresses a program may dereference. A permissive sandbox allows
/// everything and is used when recording the target.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Sandbox {
    legal: AddressSet,
    permissive: bool,
}

impl Sandbox {
    pub fn new(legal: AddressSet) -> Sandbox {
        Sandbox {
            legal,
            permissive: false,
        }
    }

    pub fn permissive() -> Sandbox {
        Sandbox {
            legal: AddressSet::new(),
            permissive: true,
        }
    }

    pub fn legal_addresses(&self) -> &AddressSet {
        &self.legal
    }

    fn allows(&self, addr: u64, len: usize) -> bool {
        self.permissive || self.legal.contains_span(addr, len)
    }
}

/// Fault counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Counters {
    pub sigsegv: u64,
    /// Always zero: the ISA has no instruction that raises it.
    pub sigfloat: u64,
    pub undef: u64,
}

impl Counters {
    pub fn is_clean(&self) -> bool {
        self.sigsegv == 0 && self.sigfloat == 0 && self.undef == 0
    }
}

/// Side information gathered while executing.
#[derive(Clone, Debug, Default)]
pub struct Effects {
    pub counters: Counters,
    /// Every byte address dereferenced (loads and stores), in order.
    pub touched: Vec<u64>,
    /// Every byte address successfully stored to, in order.
    pub written: Vec<u64>,
}

impl Effects {
    pub fn clear(&mut self) {
        self.counters = Counters::default();
        self.touched.clear();
        self.written.clear();
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub state: MachineState,
    pub counters: Counters,
    /// Byte addresses written, deduplicated and sorted.
    pub written: AddressSet,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("target faults on this input ({sigsegv} segfaults, {undef} undefined reads)")]
    Fault { sigsegv: u64, undef: u64 },
}

/// Executes one instruction in place. UNUSED slots are simply not passed in.
pub fn step(instruction: &Instruction, state: &mut MachineState, sandbox: &Sandbox, effects: &mut Effects) {
    Cpu {
        s: state,
        sandbox,
        fx: effects,
    }
    .step(instruction);
}

/// Runs `program` from `input` without touching `input`.
pub fn execute(program: &Program, input: &MachineState, sandbox: &Sandbox) -> Outcome {
    let mut state = input.clone();
    let mut effects = Effects::default();
    run(program, &mut state, sandbox, &mut effects);
    Outcome {
        state,
        counters: effects.counters,
        written: effects.written.iter().copied().collect(),
    }
}

/// Allocation-reusing form of [`execute`]: `scratch` receives the final
/// state and `effects` is cleared first.
pub fn execute_into(
    program: &Program,
    input: &MachineState,
    sandbox: &Sandbox,
    scratch: &mut MachineState,
    effects: &mut Effects,
) {
    scratch.clone_from(input);
    effects.clear();
    run(program, scratch, sandbox, effects);
}

fn run(program: &Program, state: &mut MachineState, sandbox: &Sandbox, effects: &mut Effects) {
    let mut cpu = Cpu {
        s: state,
        sandbox,
        fx: effects,
    };
    for instruction in program.instructions() {
        cpu.step(instruction);
    }
}

/// Runs the target under a permissive sandbox and returns the outcome with
/// the set of byte addresses it dereferenced. Fails if the target faults.
pub fn record_trace(program: &Program, input: &MachineState) -> Result<(Outcome, AddressSet), TraceError> {
    let mut state = input.clone();
    let mut effects = Effects::default();
    run(program, &mut state, &Sandbox::permissive(), &mut effects);
    if !effects.counters.is_clean() {
        return Err(TraceError::Fault {
            sigsegv: effects.counters.sigsegv,
            undef: effects.counters.undef,
        });
    }
    let touched = effects.touched.iter().copied().collect();
    Ok((
        Outcome {
            state,
            counters: effects.counters,
            written: effects.written.iter().copied().collect(),
        },
        touched,
    ))
}

struct Cpu<'a> {
    s: &'a mut MachineState,
    sandbox: &'a Sandbox,
    fx: &'a mut Effects,
}

impl Cpu<'_> {
    fn read_reg(&mut self, r: Register) -> u64 {
        let m = r.width().mask();
        if self.s.defined[r.index() as usize] & m != m {
            self.fx.counters.undef += 1;
        }
        self.s.regs[r.index() as usize] & m
    }

    fn read_flag(&mut self, flag: Flag) -> bool {
        match self.s.flag(flag) {
            Some(v) => v,
            None => {
                self.fx.counters.undef += 1;
                false
            }
        }
    }

    fn source(&mut self, operand: Operand, width: Width) -> u64 {
        match operand {
            Operand::Reg(r) => self.read_reg(r),
            Operand::Imm(v) => v & width.mask(),
            Operand::Mem(_) => unreachable!("memory sources only appear in loads"),
        }
    }

    fn dest(operand: Operand) -> Register {
        match operand {
            Operand::Reg(r) => r,
            _ => unreachable!("destinations are registers"),
        }
    }

    fn address(&mut self, m: MemOperand) -> u64 {
        let mut addr = self.read_reg(Register::q(m.base));
        if let Some(index) = m.index {
            addr = addr.wrapping_add(self.read_reg(Register::q(index)).wrapping_mul(m.scale as u64));
        }
        addr.wrapping_add(m.disp as i64 as u64)
    }

    fn load(&mut self, addr: u64, width: Width) -> u64 {
        let len = width.bytes();
        for k in 0..len as u64 {
            self.fx.touched.push(addr.wrapping_add(k));
        }
        if !self.sandbox.allows(addr, len) {
            self.fx.counters.sigsegv += 1;
            return 0;
        }
        let (value, complete) = self.s.memory.read_span(addr, len);
        if !complete {
            self.fx.counters.undef += 1;
        }
        value
    }

    fn store(&mut self, addr: u64, width: Width, value: u64) {
        let len = width.bytes();
        for k in 0..len as u64 {
            self.fx.touched.push(addr.wrapping_add(k));
        }
        if !self.sandbox.allows(addr, len) {
            self.fx.counters.sigsegv += 1;
            return;
        }
        self.s.memory.write_span(addr, len, value);
        for k in 0..len as u64 {
            self.fx.written.push(addr.wrapping_add(k));
        }
    }

    fn set_flags(&mut self, cf: Option<bool>, zf: Option<bool>, sf: Option<bool>, of: Option<bool>) {
        self.s.set_flag(Flag::Cf, cf);
        self.s.set_flag(Flag::Zf, zf);
        self.s.set_flag(Flag::Sf, sf);
        self.s.set_flag(Flag::Of, of);
    }

    fn result_flags(&mut self, r: u64, width: Width, cf: Option<bool>, of: Option<bool>) {
        let zf = r & width.mask() == 0;
        let sf = r & width.sign_bit() != 0;
        self.set_flags(cf, Some(zf), Some(sf), of);
    }

    fn step(&mut self, ins: &Instruction) {
        let opcode = ins.opcode();
        let w = opcode.width();
        let m = w.mask();
        let sign = w.sign_bit();
        let op = opcode.op();

        match opcode.form() {
            Form::RegReg | Form::ImmReg => {
                let dst = Self::dest(ins.operand(1));
                // `xor r, r` and `sub r, r` are zeroing idioms: no dependency
                // on the old value.
                if opcode.form() == Form::RegReg && matches!(op, Op::Xor | Op::Sub) && ins.operand(0) == ins.operand(1) {
                    self.s.write(dst, 0);
                    self.result_flags(0, w, Some(false), Some(false));
                    return;
                }
                let src = self.source(ins.operand(0), w);
                self.binary(op, w, m, sign, src, dst);
            }
            Form::Reg => {
                let r = Self::dest(ins.operand(0));
                self.unary(op, w, m, sign, r);
            }
            Form::MemReg => {
                let Operand::Mem(mem) = ins.operand(0) else { unreachable!() };
                let dst = Self::dest(ins.operand(1));
                let addr = self.address(mem);
                let v = self.load(addr, w);
                self.s.write(dst, v);
            }
            Form::RegMem => {
                let src = Self::dest(ins.operand(0));
                let Operand::Mem(mem) = ins.operand(1) else { unreachable!() };
                let v = self.read_reg(src);
                let addr = self.address(mem);
                self.store(addr, w, v);
            }
        }
    }

    fn binary(&mut self, op: Op, w: Width, m: u64, sign: u64, src: u64, dst: Register) {
        match op {
            Op::Mov => self.s.write(dst, src),
            Op::Add | Op::Adc => {
                let d = self.read_reg(dst);
                let carry = if op == Op::Adc { self.read_flag(Flag::Cf) as u128 } else { 0 };
                let sum = d as u128 + src as u128 + carry;
                let r = sum as u64 & m;
                let of = (d ^ r) & (src ^ r) & sign != 0;
                self.s.write(dst, r);
                self.result_flags(r, w, Some(sum > m as u128), Some(of));
            }
            Op::Sub | Op::Sbb | Op::Cmp => {
                let d = self.read_reg(dst);
                let borrow = if op == Op::Sbb { self.read_flag(Flag::Cf) as u64 } else { 0 };
                let r = d.wrapping_sub(src).wrapping_sub(borrow) & m;
                let cf = (src as u128 + borrow as u128) > d as u128;
                let of = (d ^ src) & (d ^ r) & sign != 0;
                if op != Op::Cmp {
                    self.s.write(dst, r);
                }
                self.result_flags(r, w, Some(cf), Some(of));
            }
            Op::And | Op::Or | Op::Xor | Op::Test => {
                let d = self.read_reg(dst);
                let r = match op {
                    Op::And | Op::Test => d & src,
                    Op::Or => d | src,
                    _ => d ^ src,
                };
                if op != Op::Test {
                    self.s.write(dst, r);
                }
                self.result_flags(r, w, Some(false), Some(false));
            }
            Op::Shl | Op::Shr | Op::Sar => self.shift(op, w, m, sign, src, dst),
            Op::Imul => {
                let d = self.read_reg(dst);
                let (r, overflow) = match w {
                    Width::B64 => {
                        let (r, o) = (d as i64).overflowing_mul(src as i64);
                        (r as u64, o)
                    }
                    _ => {
                        let full = sext(d, w) as i128 * sext(src, w) as i128;
                        let r = full as u64 & m;
                        (r, sext(r, w) as i128 != full)
                    }
                };
                self.s.write(dst, r);
                self.set_flags(Some(overflow), None, None, Some(overflow));
            }
            Op::Popcnt => {
                let r = (src & m).count_ones() as u64;
                self.s.write(dst, r);
                self.set_flags(Some(false), Some(src & m == 0), Some(false), Some(false));
            }
            Op::Cmove | Op::Cmovne | Op::Cmovb => {
                let cond = match op {
                    Op::Cmove => self.read_flag(Flag::Zf),
                    Op::Cmovne => !self.read_flag(Flag::Zf),
                    _ => self.read_flag(Flag::Cf),
                };
                if cond {
                    self.s.write(dst, src);
                } else if w == Width::B32 {
                    // A 32-bit cmov zero-extends its destination even when
                    // the move does not happen.
                    let i = dst.index() as usize;
                    self.s.regs[i] &= 0xFFFF_FFFF;
                    self.s.defined[i] |= !0xFFFF_FFFF;
                }
            }
            _ => unreachable!("{op:?} is not a binary operation"),
        }
    }

    fn shift(&mut self, op: Op, w: Width, m: u64, sign: u64, count: u64, dst: Register) {
        let bits = w.bits() as u64;
        let count = count & if w == Width::B64 { 63 } else { 31 };
        let d = self.read_reg(dst);
        if count == 0 {
            // Flags are untouched; a 32-bit write still zero-extends.
            self.s.write(dst, d);
            return;
        }
        let (r, cf) = match op {
            Op::Shl => {
                let r = if count >= bits { 0 } else { (d << count) & m };
                let cf = (count <= bits).then(|| (d >> (bits - count)) & 1 == 1);
                (r, cf)
            }
            Op::Shr => {
                let r = if count >= bits { 0 } else { d >> count };
                let cf = (count <= bits).then(|| (d >> (count - 1)) & 1 == 1);
                (r, cf)
            }
            _ => {
                let s = sext(d, w);
                let r = (s >> count.min(bits - 1)) as u64 & m;
                let cf = (count <= bits).then(|| (s >> (count - 1).min(bits - 1)) & 1 == 1);
                (r, cf)
            }
        };
        let of = if count == 1 {
            Some(match op {
                Op::Shl => (r & sign != 0) != cf.unwrap_or(false),
                Op::Shr => d & sign != 0,
                _ => false,
            })
        } else {
            None
        };
        self.s.write(dst, r);
        self.result_flags(r, w, cf, of);
    }

    fn unary(&mut self, op: Op, w: Width, m: u64, sign: u64, r: Register) {
        match op {
            Op::Neg => {
                let d = self.read_reg(r);
                let v = d.wrapping_neg() & m;
                self.s.write(r, v);
                self.result_flags(v, w, Some(d != 0), Some(d == sign));
            }
            Op::Not => {
                let d = self.read_reg(r);
                self.s.write(r, !d & m);
            }
            Op::Mul => {
                let acc = Register::new(0, w).expect("r0");
                let hi_reg = Register::new(2, w).expect("r2");
                let a = self.read_reg(acc);
                let b = self.read_reg(r);
                let full = a as u128 * b as u128;
                let lo = full as u64 & m;
                let hi = (full >> w.bits()) as u64 & m;
                self.s.write(acc, lo);
                self.s.write(hi_reg, hi);
                self.set_flags(Some(hi != 0), None, None, Some(hi != 0));
            }
            Op::Sete | Op::Setne | Op::Setb | Op::Setae => {
                let cond = match op {
                    Op::Sete => self.read_flag(Flag::Zf),
                    Op::Setne => !self.read_flag(Flag::Zf),
                    Op::Setb => self.read_flag(Flag::Cf),
                    _ => !self.read_flag(Flag::Cf),
                };
                self.s.write(r, cond as u64);
            }
            _ => unreachable!("{op:?} is not a unary operation"),
        }
    }
}

fn sext(v: u64, w: Width) -> i64 {
    let shift = 64 - w.bits();
    ((v << shift) as i64) >> shift
}
