//! Instruction set: registers, operands, opcodes, programs and the proposal
//! universe ([`Isa`]) that the search draws from.

mod latency;
mod syntax;

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub use latency::{LatencyError, LatencyTable};
pub use syntax::{format_program, parse_instruction, parse_listing, parse_program, ParseError, ParseErrorKind};

/// Number of general purpose registers.
pub const NUM_REGS: usize = 16;

/// Default program capacity.
pub const DEFAULT_LENGTH: usize = 50;

/// Default bag of immediates offered to operand and instruction moves.
pub const DEFAULT_CONSTANTS: &[u64] = &[
    0,
    1,
    2,
    4,
    7,
    8,
    16,
    31,
    32,
    63,
    64,
    0xFF,
    0xFFFF,
    0x7FFF_FFFF,
    0xFFFF_FFFF,
    0x5555_5555_5555_5555,
    0x3333_3333_3333_3333,
    0x0F0F_0F0F_0F0F_0F0F,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Width {
    B8,
    B16,
    B32,
    B64,
}

impl Width {
    pub const ALL: [Width; 4] = [Width::B8, Width::B16, Width::B32, Width::B64];

    pub const fn bits(self) -> u32 {
        match self {
            Width::B8 => 8,
            Width::B16 => 16,
            Width::B32 => 32,
            Width::B64 => 64,
        }
    }

    pub const fn bytes(self) -> usize {
        self.bits() as usize / 8
    }

    pub const fn mask(self) -> u64 {
        match self {
            Width::B8 => 0xFF,
            Width::B16 => 0xFFFF,
            Width::B32 => 0xFFFF_FFFF,
            Width::B64 => u64::MAX,
        }
    }

    pub const fn sign_bit(self) -> u64 {
        1 << (self.bits() - 1)
    }

    /// Mnemonic suffix in the AT&T style used by the assembly format.
    pub const fn suffix(self) -> &'static str {
        match self {
            Width::B8 => "b",
            Width::B16 => "w",
            Width::B32 => "l",
            Width::B64 => "q",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// A view of one of the sixteen general purpose registers.
///
/// All views of an index alias the same 64-bit storage. The 8/16-bit views
/// are the low bytes; writing the 32-bit view zeroes bits 32..64.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Register {
    index: u8,
    width: Width,
}

impl Register {
    pub fn new(index: u8, width: Width) -> Option<Register> {
        ((index as usize) < NUM_REGS).then_some(Register { index, width })
    }

    /// 64-bit view of register `index`. Panics if `index` is out of range.
    pub fn q(index: u8) -> Register {
        Register::new(index, Width::B64).expect("register index out of range")
    }

    pub fn index(self) -> u8 {
        self.index
    }

    pub fn width(self) -> Width {
        self.width
    }

    pub fn with_width(self, width: Width) -> Register {
        Register { index: self.index, width }
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = match self.width {
            Width::B64 => "",
            Width::B32 => "d",
            Width::B16 => "w",
            Width::B8 => "b",
        };
        write!(f, "r{}{}", self.index, suffix)
    }
}

impl std::str::FromStr for Register {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s
            .strip_prefix('r')
            .ok_or_else(|| format!("invalid register `{s}`"))?;
        let (digits, width) = match body.as_bytes().last() {
            Some(b'd') => (&body[..body.len() - 1], Width::B32),
            Some(b'w') => (&body[..body.len() - 1], Width::B16),
            Some(b'b') => (&body[..body.len() - 1], Width::B8),
            _ => (body, Width::B64),
        };
        if digits.is_empty() || digits.len() > 2 || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("invalid register `{s}`"));
        }
        let index: u8 = digits.parse().map_err(|_| format!("invalid register `{s}`"))?;
        Register::new(index, width).ok_or_else(|| format!("register index out of range in `{s}`"))
    }
}

impl Serialize for Register {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Register {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Memory operand `disp(base, index, scale)`; base and index are 64-bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MemOperand {
    pub base: u8,
    pub index: Option<u8>,
    pub scale: u8,
    pub disp: i32,
}

impl MemOperand {
    pub fn new(base: u8, disp: i32) -> MemOperand {
        MemOperand {
            base,
            index: None,
            scale: 1,
            disp,
        }
    }
}

impl fmt::Display for MemOperand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.disp != 0 {
            write!(f, "{}", self.disp)?;
        }
        write!(f, "(r{}", self.base)?;
        if let Some(index) = self.index {
            write!(f, ",r{},{}", index, self.scale)?;
        }
        write!(f, ")")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operand {
    Reg(Register),
    Imm(u64),
    Mem(MemOperand),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Imm(v) => {
                let signed = *v as i64;
                if (-4096..=4096).contains(&signed) {
                    write!(f, "{signed}")
                } else {
                    write!(f, "0x{v:x}")
                }
            }
            Operand::Mem(m) => write!(f, "{m}"),
        }
    }
}

/// Kind of operand an opcode expects at one position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OperandKind {
    Reg(Width),
    Imm,
    Mem(Width),
}

impl OperandKind {
    pub fn matches(self, operand: &Operand) -> bool {
        match (self, operand) {
            (OperandKind::Reg(w), Operand::Reg(r)) => r.width() == w,
            (OperandKind::Imm, Operand::Imm(_)) => true,
            (OperandKind::Mem(_), Operand::Mem(m)) => {
                m.base < NUM_REGS as u8
                    && m.index.is_none_or(|i| i < NUM_REGS as u8)
                    && matches!(m.scale, 1 | 2 | 4 | 8)
            }
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Mov,
    Add,
    Adc,
    Sub,
    Sbb,
    Neg,
    Not,
    And,
    Or,
    Xor,
    Cmp,
    Test,
    Shl,
    Shr,
    Sar,
    Imul,
    Mul,
    Popcnt,
    Sete,
    Setne,
    Setb,
    Setae,
    Cmove,
    Cmovne,
    Cmovb,
    Load,
    Store,
}

impl Op {
    pub const ALL: [Op; 27] = [
        Op::Mov,
        Op::Add,
        Op::Adc,
        Op::Sub,
        Op::Sbb,
        Op::Neg,
        Op::Not,
        Op::And,
        Op::Or,
        Op::Xor,
        Op::Cmp,
        Op::Test,
        Op::Shl,
        Op::Shr,
        Op::Sar,
        Op::Imul,
        Op::Mul,
        Op::Popcnt,
        Op::Sete,
        Op::Setne,
        Op::Setb,
        Op::Setae,
        Op::Cmove,
        Op::Cmovne,
        Op::Cmovb,
        Op::Load,
        Op::Store,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Op::Mov => "mov",
            Op::Add => "add",
            Op::Adc => "adc",
            Op::Sub => "sub",
            Op::Sbb => "sbb",
            Op::Neg => "neg",
            Op::Not => "not",
            Op::And => "and",
            Op::Or => "or",
            Op::Xor => "xor",
            Op::Cmp => "cmp",
            Op::Test => "test",
            Op::Shl => "shl",
            Op::Shr => "shr",
            Op::Sar => "sar",
            Op::Imul => "imul",
            Op::Mul => "mul",
            Op::Popcnt => "popcnt",
            Op::Sete => "sete",
            Op::Setne => "setne",
            Op::Setb => "setb",
            Op::Setae => "setae",
            Op::Cmove => "cmove",
            Op::Cmovne => "cmovne",
            Op::Cmovb => "cmovb",
            Op::Load => "load",
            Op::Store => "store",
        }
    }

    pub fn from_name(name: &str) -> Option<Op> {
        Op::ALL.iter().copied().find(|op| op.name() == name)
    }

    /// Set-byte opcodes take no width suffix.
    fn is_setcc(self) -> bool {
        matches!(self, Op::Sete | Op::Setne | Op::Setb | Op::Setae)
    }

    /// (widths, forms) this operation is defined for.
    fn variants(self) -> (&'static [Width], &'static [Form]) {
        use Width::*;
        const STD: &[Width] = &[B8, B32, B64];
        const WIDE: &[Width] = &[B32, B64];
        match self {
            Op::Mov
            | Op::Add
            | Op::Adc
            | Op::Sub
            | Op::Sbb
            | Op::And
            | Op::Or
            | Op::Xor
            | Op::Cmp
            | Op::Test => (STD, &[Form::RegReg, Form::ImmReg]),
            Op::Neg | Op::Not => (STD, &[Form::Reg]),
            Op::Shl | Op::Shr | Op::Sar => (STD, &[Form::ImmReg]),
            Op::Imul | Op::Popcnt | Op::Cmove | Op::Cmovne | Op::Cmovb => (WIDE, &[Form::RegReg]),
            Op::Mul => (WIDE, &[Form::Reg]),
            Op::Sete | Op::Setne | Op::Setb | Op::Setae => (&[B8], &[Form::Reg]),
            Op::Load => (STD, &[Form::MemReg]),
            Op::Store => (STD, &[Form::RegMem]),
        }
    }
}

/// Operand layout of an opcode, in source-then-destination order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Form {
    RegReg,
    ImmReg,
    Reg,
    MemReg,
    RegMem,
}

impl Form {
    pub fn arity(self) -> usize {
        match self {
            Form::Reg => 1,
            _ => 2,
        }
    }
}

/// An operation at a width with a fixed operand form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Opcode {
    op: Op,
    width: Width,
    form: Form,
}

impl Opcode {
    /// Returns the opcode if the ISA defines `op` at `width` with `form`.
    pub fn new(op: Op, width: Width, form: Form) -> Option<Opcode> {
        let (widths, forms) = op.variants();
        (widths.contains(&width) && forms.contains(&form)).then_some(Opcode { op, width, form })
    }

    /// Every opcode of the ISA, in a stable order.
    pub fn all() -> &'static [Opcode] {
        static ALL: OnceLock<Vec<Opcode>> = OnceLock::new();
        ALL.get_or_init(|| {
            let mut all = Vec::new();
            for op in Op::ALL {
                let (widths, forms) = op.variants();
                for &form in forms {
                    for &width in widths {
                        all.push(Opcode { op, width, form });
                    }
                }
            }
            all
        })
    }

    pub fn op(self) -> Op {
        self.op
    }

    pub fn width(self) -> Width {
        self.width
    }

    pub fn form(self) -> Form {
        self.form
    }

    pub fn arity(self) -> usize {
        self.form.arity()
    }

    pub fn signature(self) -> Signature {
        let w = self.width;
        let kinds = match self.form {
            Form::RegReg => [OperandKind::Reg(w), OperandKind::Reg(w)],
            Form::ImmReg => [OperandKind::Imm, OperandKind::Reg(w)],
            Form::Reg => [OperandKind::Reg(w), OperandKind::Reg(w)],
            Form::MemReg => [OperandKind::Mem(w), OperandKind::Reg(w)],
            Form::RegMem => [OperandKind::Reg(w), OperandKind::Mem(w)],
        };
        Signature {
            kinds,
            arity: self.arity() as u8,
        }
    }

    pub fn mnemonic(self) -> String {
        if self.op.is_setcc() {
            self.op.name().to_string()
        } else {
            format!("{}{}", self.op.name(), self.width.suffix())
        }
    }

    /// Dense index used by per-opcode tables.
    pub(crate) fn slot(self) -> usize {
        ((self.op as usize * 4) + self.width.index()) * 5 + self.form as usize
    }

    pub(crate) const SLOTS: usize = 27 * 4 * 5;
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.mnemonic())
    }
}

/// Ordered operand kinds an opcode expects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Signature {
    kinds: [OperandKind; 2],
    arity: u8,
}

impl Signature {
    pub fn kinds(&self) -> &[OperandKind] {
        &self.kinds[..self.arity as usize]
    }
}

/// A concrete instruction. Unused operand positions hold `Imm(0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Instruction {
    opcode: Opcode,
    operands: [Operand; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InstructionError {
    #[error("`{mnemonic}` expects {expected} operand(s), found {found}")]
    Arity {
        mnemonic: String,
        expected: usize,
        found: usize,
    },
    #[error("operand {position} of `{mnemonic}` must be {expected}, found `{found}`")]
    Kind {
        mnemonic: String,
        position: usize,
        expected: String,
        found: String,
    },
}

impl Instruction {
    pub fn new(opcode: Opcode, operands: &[Operand]) -> Result<Instruction, InstructionError> {
        let sig = opcode.signature();
        if operands.len() != sig.kinds().len() {
            return Err(InstructionError::Arity {
                mnemonic: opcode.mnemonic(),
                expected: sig.kinds().len(),
                found: operands.len(),
            });
        }
        for (position, (kind, operand)) in sig.kinds().iter().zip(operands).enumerate() {
            if !kind.matches(operand) {
                return Err(InstructionError::Kind {
                    mnemonic: opcode.mnemonic(),
                    position,
                    expected: describe_kind(*kind),
                    found: operand.to_string(),
                });
            }
        }
        let mut slots = [Operand::Imm(0); 2];
        slots[..operands.len()].copy_from_slice(operands);
        Ok(Instruction {
            opcode,
            operands: slots,
        })
    }

    pub fn opcode(&self) -> Opcode {
        self.opcode
    }

    pub fn operands(&self) -> &[Operand] {
        &self.operands[..self.opcode.arity()]
    }

    pub(crate) fn operand(&self, i: usize) -> Operand {
        self.operands[i]
    }

    /// Same operands under a different opcode of the same signature.
    pub fn with_opcode(&self, opcode: Opcode) -> Instruction {
        debug_assert_eq!(opcode.signature(), self.opcode.signature());
        Instruction {
            opcode,
            operands: self.operands,
        }
    }

    pub fn with_operand(&self, position: usize, operand: Operand) -> Instruction {
        debug_assert!(self.opcode.signature().kinds()[position].matches(&operand));
        let mut operands = self.operands;
        operands[position] = operand;
        Instruction {
            opcode: self.opcode,
            operands,
        }
    }
}

fn describe_kind(kind: OperandKind) -> String {
    match kind {
        OperandKind::Reg(w) => format!("a {}-bit register", w.bits()),
        OperandKind::Imm => "an immediate".to_string(),
        OperandKind::Mem(w) => format!("a {}-bit memory operand", w.bits()),
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.opcode)?;
        for (i, operand) in self.operands().iter().enumerate() {
            let sep = if i == 0 { " " } else { ", " };
            write!(f, "{sep}{operand}")?;
        }
        Ok(())
    }
}

/// A fixed-capacity sequence of instruction slots; `None` is the UNUSED token.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Program {
    slots: Vec<Option<Instruction>>,
}

impl Program {
    pub fn empty(length: usize) -> Program {
        Program {
            slots: vec![None; length],
        }
    }

    /// Places `instructions` in the leading slots and pads with UNUSED.
    /// Returns `None` if they do not fit.
    pub fn from_instructions(instructions: &[Instruction], length: usize) -> Option<Program> {
        if instructions.len() > length {
            return None;
        }
        let mut slots: Vec<_> = instructions.iter().copied().map(Some).collect();
        slots.resize(length, None);
        Some(Program { slots })
    }

    pub fn from_slots(slots: Vec<Option<Instruction>>) -> Program {
        Program { slots }
    }

    /// The capacity ℓ.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active_len() == 0
    }

    pub fn slots(&self) -> &[Option<Instruction>] {
        &self.slots
    }

    pub fn slot(&self, i: usize) -> Option<&Instruction> {
        self.slots[i].as_ref()
    }

    pub fn set_slot(&mut self, i: usize, instruction: Option<Instruction>) {
        self.slots[i] = instruction;
    }

    pub fn swap(&mut self, i: usize, j: usize) {
        self.slots.swap(i, j);
    }

    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> + '_ {
        self.slots.iter().flatten()
    }

    pub fn active_len(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// Active instructions moved to the front, preserving their order.
    pub fn compacted(&self) -> Program {
        let instructions: Vec<_> = self.instructions().copied().collect();
        Program::from_instructions(&instructions, self.len()).expect("compaction keeps capacity")
    }

    /// Same active instructions at a different capacity.
    pub fn resized(&self, length: usize) -> Option<Program> {
        let instructions: Vec<_> = self.instructions().copied().collect();
        Program::from_instructions(&instructions, length)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_program(self))
    }
}

/// The universe proposals draw from: opcode pool, register pool, constant
/// bag, memory operand pool and the latency table.
///
/// Immutable once built; share it across threads by reference.
#[derive(Clone, Debug)]
pub struct Isa {
    opcodes: Vec<Opcode>,
    registers: Vec<u8>,
    constants: Vec<u64>,
    memory: Vec<MemOperand>,
    latency: LatencyTable,
    classes: HashMap<Signature, Vec<Opcode>>,
}

impl Isa {
    pub fn builder() -> IsaBuilder {
        IsaBuilder::default()
    }

    /// Full opcode roster and register file, the default constant bag plus
    /// every immediate in `target`, and the memory operands `target` uses.
    pub fn for_target(target: &Program) -> Isa {
        Isa::builder().with_target(target).build()
    }

    pub fn opcodes(&self) -> &[Opcode] {
        &self.opcodes
    }

    pub fn registers(&self) -> &[u8] {
        &self.registers
    }

    pub fn constants(&self) -> &[u64] {
        &self.constants
    }

    pub fn memory_operands(&self) -> &[MemOperand] {
        &self.memory
    }

    pub fn latency(&self) -> &LatencyTable {
        &self.latency
    }

    /// Opcodes of the pool sharing `opcode`'s signature. Always contains
    /// `opcode` itself, even when it lies outside the pool.
    pub fn opcode_class(&self, opcode: Opcode) -> Vec<Opcode> {
        let mut class = self
            .classes
            .get(&opcode.signature())
            .cloned()
            .unwrap_or_default();
        if !class.contains(&opcode) {
            class.push(opcode);
            class.sort();
        }
        class
    }

    pub(crate) fn opcode_class_len(&self, opcode: Opcode) -> usize {
        match self.classes.get(&opcode.signature()) {
            Some(class) if class.contains(&opcode) => class.len(),
            Some(class) => class.len() + 1,
            None => 1,
        }
    }

    pub(crate) fn opcode_class_get(&self, opcode: Opcode, i: usize) -> Opcode {
        match self.classes.get(&opcode.signature()) {
            Some(class) if i < class.len() => class[i],
            _ => opcode,
        }
    }

    /// Operands admissible at a position of kind `kind`, drawn from the
    /// register pool, constant bag or memory pool. Always contains `operand`.
    pub fn operand_class(&self, kind: OperandKind, operand: &Operand) -> Vec<Operand> {
        let mut class: Vec<Operand> = (0..self.operand_domain_len(kind))
            .map(|i| self.operand_domain_get(kind, i))
            .collect();
        if !class.contains(operand) {
            class.push(*operand);
        }
        class
    }

    pub(crate) fn operand_class_len(&self, kind: OperandKind, operand: &Operand) -> usize {
        let n = self.operand_domain_len(kind);
        if self.in_domain(kind, operand) {
            n
        } else {
            n + 1
        }
    }

    pub(crate) fn operand_domain_len(&self, kind: OperandKind) -> usize {
        match kind {
            OperandKind::Reg(_) => self.registers.len(),
            OperandKind::Imm => self.constants.len(),
            OperandKind::Mem(_) => self.memory.len(),
        }
    }

    pub(crate) fn operand_domain_get(&self, kind: OperandKind, i: usize) -> Operand {
        match kind {
            OperandKind::Reg(w) => Operand::Reg(Register {
                index: self.registers[i],
                width: w,
            }),
            OperandKind::Imm => Operand::Imm(self.constants[i]),
            OperandKind::Mem(_) => Operand::Mem(self.memory[i]),
        }
    }

    pub(crate) fn in_domain(&self, kind: OperandKind, operand: &Operand) -> bool {
        match (kind, operand) {
            (OperandKind::Reg(w), Operand::Reg(r)) => {
                r.width() == w && self.registers.contains(&r.index())
            }
            (OperandKind::Imm, Operand::Imm(v)) => self.constants.contains(v),
            (OperandKind::Mem(_), Operand::Mem(m)) => self.memory.contains(m),
            _ => false,
        }
    }

    /// Whether a random instruction with this opcode can be built (every
    /// operand position has a non-empty domain).
    pub(crate) fn can_instantiate(&self, opcode: Opcode) -> bool {
        opcode
            .signature()
            .kinds()
            .iter()
            .all(|&k| self.operand_domain_len(k) > 0)
    }

    /// Probability that a uniformly random instruction draw (opcode, then
    /// each operand) yields exactly `instruction`.
    pub fn random_instruction_probability(&self, instruction: &Instruction) -> f64 {
        if !self.opcodes.contains(&instruction.opcode()) {
            return 0.0;
        }
        let mut p = 1.0 / self.opcodes.len() as f64;
        for (kind, operand) in instruction.opcode().signature().kinds().iter().zip(instruction.operands()) {
            if !self.in_domain(*kind, operand) {
                return 0.0;
            }
            p /= self.operand_domain_len(*kind) as f64;
        }
        p
    }
}

/// Builder for restricted or retargeted instruction pools.
#[derive(Clone, Debug)]
pub struct IsaBuilder {
    opcodes: Vec<Opcode>,
    registers: Vec<u8>,
    constants: Vec<u64>,
    memory: Vec<MemOperand>,
    latency: LatencyTable,
}

impl Default for IsaBuilder {
    fn default() -> Self {
        IsaBuilder {
            opcodes: Opcode::all().to_vec(),
            registers: (0..NUM_REGS as u8).collect(),
            constants: DEFAULT_CONSTANTS.to_vec(),
            memory: Vec::new(),
            latency: LatencyTable::default(),
        }
    }
}

impl IsaBuilder {
    pub fn opcodes(mut self, opcodes: impl IntoIterator<Item = Opcode>) -> Self {
        self.opcodes = opcodes.into_iter().collect();
        self
    }

    pub fn registers(mut self, registers: impl IntoIterator<Item = u8>) -> Self {
        self.registers = registers.into_iter().collect();
        self
    }

    pub fn constants(mut self, constants: impl IntoIterator<Item = u64>) -> Self {
        self.constants = constants.into_iter().collect();
        self
    }

    pub fn memory_operands(mut self, memory: impl IntoIterator<Item = MemOperand>) -> Self {
        self.memory = memory.into_iter().collect();
        self
    }

    pub fn latency(mut self, latency: LatencyTable) -> Self {
        self.latency = latency;
        self
    }

    /// Adds the immediates and memory operands appearing in `target`.
    pub fn with_target(mut self, target: &Program) -> Self {
        for instruction in target.instructions() {
            for operand in instruction.operands() {
                match operand {
                    Operand::Imm(v) => self.constants.push(*v),
                    Operand::Mem(m) => self.memory.push(*m),
                    Operand::Reg(_) => {}
                }
            }
        }
        self
    }

    pub fn build(mut self) -> Isa {
        fn dedup<T: Ord>(v: &mut Vec<T>) {
            v.sort();
            v.dedup();
        }
        dedup(&mut self.opcodes);
        dedup(&mut self.registers);
        self.registers.retain(|&r| (r as usize) < NUM_REGS);
        dedup(&mut self.constants);
        dedup(&mut self.memory);

        let mut isa = Isa {
            opcodes: Vec::new(),
            registers: self.registers,
            constants: self.constants,
            memory: self.memory,
            latency: self.latency,
            classes: HashMap::new(),
        };
        // Opcodes whose operands cannot be drawn (e.g. memory forms with an
        // empty memory pool) are left out of the pool.
        isa.opcodes = self
            .opcodes
            .into_iter()
            .filter(|&o| isa.can_instantiate(o))
            .collect();
        for &opcode in &isa.opcodes {
            isa.classes.entry(opcode.signature()).or_default().push(opcode);
        }
        isa
    }
}
