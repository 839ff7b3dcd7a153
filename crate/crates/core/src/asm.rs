//! Tiny label-resolving assembler used to build fixtures and tests.

use std::collections::HashMap;

use crate::evm::Word;
use crate::opcode;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AsmError {
    #[error("label `{0}` is never defined")]
    UndefinedLabel(String),
    #[error("label `{0}` is defined twice")]
    DuplicateLabel(String),
    #[error("label `{0}` lies beyond the 16-bit push range")]
    LabelOutOfRange(String),
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("bad immediate `{0}`")]
    BadImmediate(String),
}

#[derive(Debug, Clone)]
enum Item {
    Bytes(Vec<u8>),
    /// PUSH2 of a label offset.
    LabelRef(String),
    Label(String),
}

#[derive(Debug, Clone, Default)]
pub struct Assembler {
    items: Vec<Item>,
}

impl Assembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn op(&mut self, op: u8) -> &mut Self {
        self.items.push(Item::Bytes(vec![op]));
        self
    }

    pub fn ops(&mut self, ops: &[u8]) -> &mut Self {
        self.items.push(Item::Bytes(ops.to_vec()));
        self
    }

    /// Shortest PUSH for `v` (PUSH1 0 for zero).
    pub fn push(&mut self, v: impl Into<Word>) -> &mut Self {
        let v: Word = v.into();
        let be = v.to_big_endian();
        let skip = be.iter().take_while(|b| **b == 0).count().min(31);
        let n = 32 - skip;
        let mut out = vec![opcode::PUSH1 + (n as u8 - 1)];
        out.extend_from_slice(&be[skip..]);
        self.items.push(Item::Bytes(out));
        self
    }

    /// PUSH of exactly `bytes.len()` bytes.
    pub fn push_bytes(&mut self, bytes: &[u8]) -> &mut Self {
        assert!((1..=32).contains(&bytes.len()), "push width must be 1..=32");
        let mut out = vec![opcode::PUSH1 + (bytes.len() as u8 - 1)];
        out.extend_from_slice(bytes);
        self.items.push(Item::Bytes(out));
        self
    }

    pub fn push_label(&mut self, name: &str) -> &mut Self {
        self.items.push(Item::LabelRef(name.to_string()));
        self
    }

    /// Defines `name` here and emits a JUMPDEST.
    pub fn label(&mut self, name: &str) -> &mut Self {
        self.items.push(Item::Label(name.to_string()));
        self
    }

    pub fn jump(&mut self, name: &str) -> &mut Self {
        self.push_label(name).op(opcode::JUMP)
    }

    pub fn jumpi(&mut self, name: &str) -> &mut Self {
        self.push_label(name).op(opcode::JUMPI)
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.ops(bytes)
    }

    /// Appends another assembler's items (labels share one namespace).
    pub fn append(&mut self, other: &Assembler) -> &mut Self {
        self.items.extend(other.items.iter().cloned());
        self
    }

    pub fn build(&self) -> Result<Vec<u8>, AsmError> {
        let mut labels = HashMap::new();
        let mut pc = 0usize;
        for item in &self.items {
            match item {
                Item::Bytes(b) => pc += b.len(),
                Item::LabelRef(_) => pc += 3,
                Item::Label(name) => {
                    if labels.insert(name.clone(), pc).is_some() {
                        return Err(AsmError::DuplicateLabel(name.clone()));
                    }
                    pc += 1;
                }
            }
        }
        let mut code = Vec::with_capacity(pc);
        for item in &self.items {
            match item {
                Item::Bytes(b) => code.extend_from_slice(b),
                Item::Label(_) => code.push(opcode::JUMPDEST),
                Item::LabelRef(name) => {
                    let target = *labels
                        .get(name)
                        .ok_or_else(|| AsmError::UndefinedLabel(name.clone()))?;
                    let target =
                        u16::try_from(target).map_err(|_| AsmError::LabelOutOfRange(name.clone()))?;
                    code.push(opcode::PUSH2);
                    code.extend_from_slice(&target.to_be_bytes());
                }
            }
        }
        Ok(code)
    }
}

/// Assembles whitespace-separated mnemonics, e.g. `"PUSH1 0x2a PUSH1 0 SSTORE STOP"`.
///
/// `name:` defines a label (emitting JUMPDEST) and `@name` pushes its offset.
pub fn assemble(src: &str) -> Result<Vec<u8>, AsmError> {
    let mut asm = Assembler::new();
    let mut tokens = src.split_whitespace().peekable();
    while let Some(tok) = tokens.next() {
        if let Some(name) = tok.strip_suffix(':') {
            asm.label(name);
        } else if let Some(name) = tok.strip_prefix('@') {
            asm.push_label(name);
        } else {
            let op = opcode::from_mnemonic(tok).ok_or_else(|| AsmError::UnknownMnemonic(tok.to_string()))?;
            let n = opcode::immediate_len(op);
            if n == 0 {
                asm.op(op);
                continue;
            }
            let imm = tokens.next().ok_or_else(|| AsmError::BadImmediate(tok.to_string()))?;
            let v = parse_word(imm)?;
            let be = v.to_big_endian();
            if be[..32 - n].iter().any(|b| *b != 0) {
                return Err(AsmError::BadImmediate(imm.to_string()));
            }
            asm.push_bytes(&be[32 - n..]);
        }
    }
    asm.build()
}

fn parse_word(s: &str) -> Result<Word, AsmError> {
    let bad = || AsmError::BadImmediate(s.to_string());
    match s.strip_prefix("0x") {
        Some(h) => Word::from_str_radix(h, 16).map_err(|_| bad()),
        None => Word::from_dec_str(s).map_err(|_| bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_resolve_forward_and_back() {
        let code = Assembler::new()
            .label("top")
            .jump("end")
            .jump("top")
            .label("end")
            .op(opcode::STOP)
            .build()
            .unwrap();
        assert_eq!(code, vec![0x5b, 0x61, 0, 9, 0x56, 0x61, 0, 0, 0x56, 0x5b, 0x00]);
    }

    #[test]
    fn shortest_push() {
        let code = Assembler::new().push(0u64).push(0x1234u64).build().unwrap();
        assert_eq!(code, vec![0x60, 0, 0x61, 0x12, 0x34]);
        let max = Assembler::new().push(Word::max_value()).build().unwrap();
        assert_eq!(max.len(), 33);
        assert_eq!(max[0], opcode::PUSH32);
    }

    #[test]
    fn text_form() {
        assert_eq!(assemble("PUSH1 0x2a PUSH1 0 SSTORE STOP").unwrap(), vec![0x60, 0x2a, 0x60, 0, 0x55, 0]);
        assert_eq!(assemble("@x JUMP x: STOP").unwrap(), vec![0x61, 0, 4, 0x56, 0x5b, 0]);
        assert!(matches!(assemble("FOO"), Err(AsmError::UnknownMnemonic(_))));
        assert!(matches!(assemble("PUSH1 0x100"), Err(AsmError::BadImmediate(_))));
        assert!(matches!(assemble("@nowhere"), Err(AsmError::UndefinedLabel(_))));
        assert!(matches!(assemble("a: a:"), Err(AsmError::DuplicateLabel(_))));
    }
}
