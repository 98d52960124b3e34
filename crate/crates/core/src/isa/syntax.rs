//! Textual assembly format.
//!
//! One instruction per line, AT&T operand order (source first), width
//! suffixes on mnemonics (`b`, `l`, `q`), registers `r0`..`r15` with `d`, `w`,
//! `b` suffixes for the 32/16/8-bit views. `#` starts a comment. Lines whose
//! first token starts with `.` (labels such as `.L0`, directives) are ignored.
//!
//! ```text
//! .L0
//!   movq r6, r0        # copy
//!   addq 8, r0
//!   loadl -8(r4), r1d
//!   storeq r0, 16(r6,r2,8)
//! ```

use std::fmt;

use super::{Form, Instruction, MemOperand, Op, Opcode, Operand, OperandKind, Program, Register, Width};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnknownMnemonic(String),
    InvalidOperand(String),
    Arity {
        mnemonic: String,
        found: usize,
    },
    OperandKind {
        mnemonic: String,
        position: usize,
    },
    WidthMismatch {
        mnemonic: String,
        register: String,
    },
    Capacity {
        capacity: usize,
    },
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::UnknownMnemonic(m) => write!(f, "unknown mnemonic `{m}`"),
            ParseErrorKind::InvalidOperand(o) => write!(f, "invalid operand `{o}`"),
            ParseErrorKind::Arity { mnemonic, found } => {
                write!(f, "`{mnemonic}` does not take {found} operand(s)")
            }
            ParseErrorKind::OperandKind { mnemonic, position } => {
                write!(f, "operand {} of `{mnemonic}` has the wrong kind", position + 1)
            }
            ParseErrorKind::WidthMismatch { mnemonic, register } => {
                write!(f, "register `{register}` does not match the width of `{mnemonic}`")
            }
            ParseErrorKind::Capacity { capacity } => {
                write!(f, "program exceeds capacity of {capacity} instructions")
            }
        }
    }
}

/// Parses an assembly listing into a program of `capacity` slots. Active
/// instructions occupy the leading slots in source order.
pub fn parse_program(text: &str, capacity: usize) -> Result<Program, ParseError> {
    let mut instructions = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if let Some(instruction) = parse_line(line, line_no + 1)? {
            if instructions.len() == capacity {
                return Err(ParseError {
                    line: line_no + 1,
                    column: 1,
                    kind: ParseErrorKind::Capacity { capacity },
                });
            }
            instructions.push(instruction);
        }
    }
    Ok(Program::from_instructions(&instructions, capacity).expect("checked capacity"))
}

/// Parses an assembly listing into a program with exactly as many slots as
/// it has instructions.
pub fn parse_listing(text: &str) -> Result<Program, ParseError> {
    let mut instructions = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if let Some(instruction) = parse_line(line, line_no + 1)? {
            instructions.push(instruction);
        }
    }
    Ok(Program::from_instructions(&instructions, instructions.len()).expect("capacity equals length"))
}

/// Parses a single instruction.
pub fn parse_instruction(text: &str) -> Result<Instruction, ParseError> {
    match parse_line(text, 1)? {
        Some(instruction) => Ok(instruction),
        None => Err(ParseError {
            line: 1,
            column: 1,
            kind: ParseErrorKind::UnknownMnemonic(String::new()),
        }),
    }
}

/// Prints the active instructions, one per line. UNUSED slots are omitted.
pub fn format_program(program: &Program) -> String {
    let mut out = String::new();
    for instruction in program.instructions() {
        out.push_str(&instruction.to_string());
        out.push('\n');
    }
    out
}

fn parse_line(line: &str, line_no: usize) -> Result<Option<Instruction>, ParseError> {
    let code = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    let start = match code.find(|c: char| !c.is_whitespace()) {
        Some(i) => i,
        None => return Ok(None),
    };
    let code = code.trim_end();
    let body = &code[start..];
    if body.starts_with('.') {
        return Ok(None);
    }
    let err = |offset: usize, kind| ParseError {
        line: line_no,
        column: char_column(line, offset),
        kind,
    };

    let mnemonic_end = body.find(char::is_whitespace).unwrap_or(body.len());
    let mnemonic = &body[..mnemonic_end];
    let (op, width) =
        resolve_mnemonic(mnemonic).ok_or_else(|| err(start, ParseErrorKind::UnknownMnemonic(mnemonic.to_string())))?;

    let mut operands = Vec::new();
    let mut positions = Vec::new();
    let rest_offset = start + mnemonic_end;
    let rest = &code[rest_offset..];
    if !rest.trim().is_empty() {
        for (offset, token) in split_operands(rest) {
            let trimmed = token.trim();
            let lead = token.len() - token.trim_start().len();
            let at = rest_offset + offset + lead;
            if trimmed.is_empty() {
                return Err(err(at, ParseErrorKind::InvalidOperand(String::new())));
            }
            let operand = parse_operand(trimmed)
                .ok_or_else(|| err(at, ParseErrorKind::InvalidOperand(trimmed.to_string())))?;
            operands.push(operand);
            positions.push(at);
        }
    }

    let form = form_of(&operands).ok_or_else(|| {
        err(
            start,
            ParseErrorKind::Arity {
                mnemonic: mnemonic.to_string(),
                found: operands.len(),
            },
        )
    })?;
    let opcode = match Opcode::new(op, width, form) {
        Some(opcode) => opcode,
        None => {
            let same_arity = Opcode::all()
                .iter()
                .any(|o| o.op() == op && o.width() == width && o.arity() == operands.len());
            return Err(if same_arity {
                let position = mismatched_position(op, width, &operands);
                err(
                    positions.get(position).copied().unwrap_or(start),
                    ParseErrorKind::OperandKind {
                        mnemonic: mnemonic.to_string(),
                        position,
                    },
                )
            } else {
                err(
                    start,
                    ParseErrorKind::Arity {
                        mnemonic: mnemonic.to_string(),
                        found: operands.len(),
                    },
                )
            });
        }
    };
    for (i, (kind, operand)) in opcode.signature().kinds().iter().zip(&operands).enumerate() {
        if let (OperandKind::Reg(w), Operand::Reg(r)) = (kind, operand) {
            if r.width() != *w {
                return Err(err(
                    positions[i],
                    ParseErrorKind::WidthMismatch {
                        mnemonic: mnemonic.to_string(),
                        register: r.to_string(),
                    },
                ));
            }
        }
    }
    Instruction::new(opcode, &operands)
        .map(Some)
        .map_err(|_| err(start, ParseErrorKind::OperandKind { mnemonic: mnemonic.to_string(), position: 0 }))
}

fn char_column(line: &str, byte_offset: usize) -> usize {
    line[..byte_offset.min(line.len())].chars().count() + 1
}

fn resolve_mnemonic(mnemonic: &str) -> Option<(Op, Width)> {
    if let Some(op) = Op::from_name(mnemonic) {
        if op.is_setcc() {
            return Some((op, Width::B8));
        }
    }
    let last = mnemonic.chars().next_back()?;
    let (base, suffix) = mnemonic.split_at(mnemonic.len() - last.len_utf8());
    let width = match suffix {
        "b" => Width::B8,
        "w" => Width::B16,
        "l" => Width::B32,
        "q" => Width::B64,
        _ => return None,
    };
    let op = Op::from_name(base)?;
    if op.is_setcc() {
        return None;
    }
    let defined = Opcode::all().iter().any(|o| o.op() == op && o.width() == width);
    defined.then_some((op, width))
}

fn form_of(operands: &[Operand]) -> Option<Form> {
    match operands {
        [Operand::Reg(_)] => Some(Form::Reg),
        [Operand::Reg(_), Operand::Reg(_)] => Some(Form::RegReg),
        [Operand::Imm(_), Operand::Reg(_)] => Some(Form::ImmReg),
        [Operand::Mem(_), Operand::Reg(_)] => Some(Form::MemReg),
        [Operand::Reg(_), Operand::Mem(_)] => Some(Form::RegMem),
        [_] | [_, _] => Some(Form::RegReg),
        _ => None,
    }
}

fn mismatched_position(op: Op, width: Width, operands: &[Operand]) -> usize {
    let candidates: Vec<_> = Opcode::all()
        .iter()
        .filter(|o| o.op() == op && o.width() == width && o.arity() == operands.len())
        .collect();
    for (i, operand) in operands.iter().enumerate() {
        if candidates
            .iter()
            .all(|o| !o.signature().kinds()[i].matches(operand))
        {
            return i;
        }
    }
    0
}

/// Splits at top-level commas, returning (byte offset, token) pairs.
fn split_operands(rest: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut begin = 0;
    for (i, c) in rest.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push((begin, &rest[begin..i]));
                begin = i + 1;
            }
            _ => {}
        }
    }
    out.push((begin, &rest[begin..]));
    out
}

fn parse_operand(token: &str) -> Option<Operand> {
    if token.starts_with('r') {
        return token.parse::<Register>().ok().map(Operand::Reg);
    }
    if let Some(open) = token.find('(') {
        return parse_memory(&token[..open], &token[open..]).map(Operand::Mem);
    }
    parse_immediate(token).map(Operand::Imm)
}

fn parse_immediate(token: &str) -> Option<u64> {
    let token = token.strip_prefix('$').unwrap_or(token);
    let (negative, digits) = match token.strip_prefix('-') {
        Some(d) => (true, d),
        None => (false, token),
    };
    let magnitude = if let Some(hex) = digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")) {
        if hex.is_empty() || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
            return None;
        }
        u64::from_str_radix(hex, 16).ok()?
    } else {
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse::<u64>().ok()?
    };
    if negative {
        if magnitude > 1 << 63 {
            return None;
        }
        Some(magnitude.wrapping_neg())
    } else {
        Some(magnitude)
    }
}

fn parse_memory(disp: &str, inner: &str) -> Option<MemOperand> {
    let disp = disp.trim();
    let disp: i32 = if disp.is_empty() {
        0
    } else {
        let value = parse_immediate(disp)? as i64;
        i32::try_from(value).ok()?
    };
    let inner = inner.strip_prefix('(')?.strip_suffix(')')?;
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    let reg64 = |s: &str| {
        let r: Register = s.parse().ok()?;
        (r.width() == Width::B64).then_some(r.index())
    };
    match parts.as_slice() {
        [base] => Some(MemOperand {
            base: reg64(base)?,
            index: None,
            scale: 1,
            disp,
        }),
        [base, index] => Some(MemOperand {
            base: reg64(base)?,
            index: Some(reg64(index)?),
            scale: 1,
            disp,
        }),
        [base, index, scale] => {
            let scale: u8 = scale.parse().ok()?;
            matches!(scale, 1 | 2 | 4 | 8).then_some(())?;
            Some(MemOperand {
                base: reg64(base)?,
                index: Some(reg64(index)?),
                scale,
                disp,
            })
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_add() {
        let p = parse_program("addq r1, r0", 50).unwrap();
        assert_eq!(p.len(), 50);
        assert_eq!(p.active_len(), 1);
        let i = p.slot(0).unwrap();
        assert_eq!(i.opcode(), Opcode::new(Op::Add, Width::B64, Form::RegReg).unwrap());
        assert_eq!(
            i.operands(),
            &[Operand::Reg(Register::q(1)), Operand::Reg(Register::q(0))]
        );
    }

    #[test]
    fn parses_32_bit_self_move() {
        let p = parse_program("movl r2d, r2d", 4).unwrap();
        let i = p.slot(0).unwrap();
        assert_eq!(i.opcode(), Opcode::new(Op::Mov, Width::B32, Form::RegReg).unwrap());
        let r2d = Register::new(2, Width::B32).unwrap();
        assert_eq!(i.operands(), &[Operand::Reg(r2d), Operand::Reg(r2d)]);
    }

    #[test]
    fn rejects_unknown_mnemonic() {
        let e = parse_program("bogus r0", 4).unwrap_err();
        assert_eq!(e.line, 1);
        assert_eq!(e.column, 1);
        assert_eq!(e.kind, ParseErrorKind::UnknownMnemonic("bogus".into()));
        let e = parse_program("movÊ r0", 4).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownMnemonic("movÊ".into()));
    }

    #[test]
    fn reports_line_and_column() {
        let e = parse_program("movq r1, r0\n  addq r1, r0x\n", 4).unwrap_err();
        assert_eq!((e.line, e.column), (2, 12));
        assert!(matches!(e.kind, ParseErrorKind::InvalidOperand(_)));
    }

    #[test]
    fn rejects_width_mismatch() {
        let e = parse_program("addq r1d, r0", 4).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::WidthMismatch { .. }));
        assert_eq!(e.column, 6);
    }

    #[test]
    fn rejects_arity_and_kind() {
        assert!(matches!(
            parse_program("addq r0", 4).unwrap_err().kind,
            ParseErrorKind::Arity { .. }
        ));
        assert!(matches!(
            parse_program("negq r0, r1", 4).unwrap_err().kind,
            ParseErrorKind::Arity { .. }
        ));
        assert!(matches!(
            parse_program("shlq r1, r0", 4).unwrap_err().kind,
            ParseErrorKind::OperandKind { position: 0, .. }
        ));
        assert!(matches!(
            parse_program("addq r1, r0, r2", 4).unwrap_err().kind,
            ParseErrorKind::Arity { .. }
        ));
    }

    #[test]
    fn rejects_overflowing_capacity() {
        let e = parse_program("negq r0\nnegq r0\nnegq r0\n", 2).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Capacity { capacity: 2 });
        assert_eq!(e.line, 3);
    }

    #[test]
    fn ignores_labels_comments_and_blank_lines() {
        let text = ".L0\n  # header\n\n  movq 0, r0   # zero\n.L2:\n  negq r0\n";
        let p = parse_program(text, 8).unwrap();
        assert_eq!(p.active_len(), 2);
    }

    #[test]
    fn memory_operands() {
        let p = parse_program("loadq -8(r4), r0\nstorel r1d, 16(r6,r2,8)\nloadb (r6), r3b", 4).unwrap();
        assert_eq!(
            p.slot(0).unwrap().operands()[0],
            Operand::Mem(MemOperand::new(4, -8))
        );
        assert_eq!(
            p.slot(1).unwrap().operands()[1],
            Operand::Mem(MemOperand {
                base: 6,
                index: Some(2),
                scale: 8,
                disp: 16
            })
        );
        assert_eq!(format_program(&p), "loadq -8(r4), r0\nstorel r1d, 16(r6,r2,8)\nloadb (r6), r3b\n");
    }

    #[test]
    fn immediates() {
        let p = parse_program("movq 0xffffffffffffffff, r0\nmovq -1, r1\nmovq $7, r2\nshlq 2, r0", 4).unwrap();
        assert_eq!(p.slot(0).unwrap().operands()[0], Operand::Imm(u64::MAX));
        assert_eq!(p.slot(1).unwrap().operands()[0], Operand::Imm(u64::MAX));
        assert_eq!(p.slot(2).unwrap().operands()[0], Operand::Imm(7));
        assert_eq!(format_program(&p), "movq -1, r0\nmovq -1, r1\nmovq 7, r2\nshlq 2, r0\n");
        assert!(parse_program("movq 0x, r0", 4).is_err());
        assert!(parse_program("movq 18446744073709551616, r0", 4).is_err());
    }

    #[test]
    fn setcc_has_no_suffix() {
        let p = parse_program("sete r0b", 4).unwrap();
        assert_eq!(format_program(&p), "sete r0b\n");
        assert!(parse_program("seteb r0b", 4).is_err());
        assert!(parse_program("sete r0", 4).is_err());
    }

    #[test]
    fn empty_program_formats_empty() {
        assert_eq!(format_program(&Program::empty(5)), "");
        assert_eq!(parse_program("", 5).unwrap(), Program::empty(5));
    }

    #[test]
    fn one_instruction_is_one_line() {
        let p = parse_program("popcntq r7, r0", 3).unwrap();
        assert_eq!(format_program(&p), "popcntq r7, r0\n");
    }
}
