//! Disassembly, basic-block recovery and distance maps towards critical instructions.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::evm::Word;
use crate::opcode::{self, immediate_len};

/// Abstract stack depth tracked while resolving jump targets.
const SIM_DEPTH: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub pc: usize,
    pub opcode: u8,
    /// PUSH payload as present in the code.
    pub immediate: Vec<u8>,
    /// The payload was cut short by the end of the code.
    pub truncated: bool,
}

impl Instruction {
    pub fn mnemonic(&self) -> &'static str {
        opcode::mnemonic(self.opcode)
    }

    /// Offset of the following instruction.
    pub fn next_pc(&self) -> usize {
        self.pc + 1 + immediate_len(self.opcode)
    }

    /// PUSH value, zero-padded on the right when truncated.
    pub fn push_value(&self) -> Option<Word> {
        let n = immediate_len(self.opcode);
        if n == 0 {
            return None;
        }
        let mut buf = [0u8; 32];
        buf[32 - n..32 - n + self.immediate.len()].copy_from_slice(&self.immediate);
        Some(Word::from_big_endian(&buf))
    }
}

/// Linear-sweep disassembly; total over any byte string.
pub fn disassemble(code: &[u8]) -> Vec<Instruction> {
    let mut out = Vec::new();
    let mut pc = 0;
    while pc < code.len() {
        let opcode = code[pc];
        let n = immediate_len(opcode);
        let end = (pc + 1 + n).min(code.len());
        out.push(Instruction {
            pc,
            opcode,
            immediate: code[pc + 1..end].to_vec(),
            truncated: end - pc - 1 < n,
        });
        pc += 1 + n;
    }
    out
}

/// Inverse of [`disassemble`].
pub fn reassemble(instructions: &[Instruction]) -> Vec<u8> {
    let mut out = Vec::new();
    for ins in instructions {
        out.push(ins.opcode);
        out.extend_from_slice(&ins.immediate);
    }
    out
}

pub fn critical_sites(instructions: &[Instruction]) -> Vec<usize> {
    instructions
        .iter()
        .filter(|i| opcode::is_critical(i.opcode))
        .map(|i| i.pc)
        .collect()
}

pub fn count_critical(instructions: &[Instruction]) -> BTreeMap<&'static str, usize> {
    let mut counts = BTreeMap::new();
    for ins in instructions.iter().filter(|i| opcode::is_critical(i.opcode)) {
        *counts.entry(ins.mnemonic()).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminator {
    Jump,
    JumpI,
    Fallthrough,
    Halt,
    /// JUMP or JUMPI whose destination is not a block-local constant.
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasicBlock {
    pub id: usize,
    pub start_pc: usize,
    pub instructions: Vec<Instruction>,
    pub terminator: Terminator,
}

impl BasicBlock {
    pub fn last(&self) -> &Instruction {
        self.instructions.last().expect("blocks are non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cfg {
    pub blocks: Vec<BasicBlock>,
    pub edges: BTreeSet<(usize, usize)>,
    pub unresolved: BTreeSet<usize>,
    /// Block id by start pc.
    starts: BTreeMap<usize, usize>,
}

fn ends_block(op: u8) -> bool {
    opcode::is_jump(op) || opcode::is_halt(op)
}

/// Splits into blocks and resolves constant jump targets.
pub fn build_cfg(instructions: &[Instruction]) -> Cfg {
    let mut blocks: Vec<BasicBlock> = Vec::new();
    let mut current: Vec<Instruction> = Vec::new();
    for ins in instructions {
        if ins.opcode == opcode::JUMPDEST && !current.is_empty() {
            push_block(&mut blocks, std::mem::take(&mut current));
        }
        let ends = ends_block(ins.opcode);
        current.push(ins.clone());
        if ends {
            push_block(&mut blocks, std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        push_block(&mut blocks, current);
    }

    let starts: BTreeMap<usize, usize> = blocks.iter().map(|b| (b.start_pc, b.id)).collect();
    let jumpdests: BTreeMap<usize, usize> = blocks
        .iter()
        .filter(|b| b.instructions[0].opcode == opcode::JUMPDEST)
        .map(|b| (b.start_pc, b.id))
        .collect();
    let mut edges = BTreeSet::new();
    let mut unresolved = BTreeSet::new();
    let n = blocks.len();
    for block in &mut blocks {
        let last = block.last().clone();
        let next = (block.id + 1 < n).then_some(block.id + 1);
        block.terminator = match last.opcode {
            opcode::JUMP | opcode::JUMPI => {
                let target = resolve_jump(&block.instructions);
                match target {
                    Some(t) => {
                        let dest = (t <= Word::from(u32::MAX))
                            .then(|| jumpdests.get(&(t.low_u64() as usize)))
                            .flatten();
                        if let Some(&id) = dest {
                            edges.insert((block.id, id));
                        }
                    }
                    None => {
                        unresolved.insert(block.id);
                    }
                }
                if last.opcode == opcode::JUMPI {
                    if let Some(nx) = next {
                        edges.insert((block.id, nx));
                    }
                }
                match (target, last.opcode) {
                    (None, _) => Terminator::Unresolved,
                    (Some(_), opcode::JUMP) => Terminator::Jump,
                    _ => Terminator::JumpI,
                }
            }
            op if opcode::is_halt(op) => Terminator::Halt,
            _ => {
                if let Some(nx) = next {
                    edges.insert((block.id, nx));
                }
                Terminator::Fallthrough
            }
        };
    }
    Cfg {
        blocks,
        edges,
        unresolved,
        starts,
    }
}

fn push_block(blocks: &mut Vec<BasicBlock>, instructions: Vec<Instruction>) {
    blocks.push(BasicBlock {
        id: blocks.len(),
        start_pc: instructions[0].pc,
        instructions,
        terminator: Terminator::Fallthrough,
    });
}

/// Simulates the block's stack effect on constants and returns the jump target.
fn resolve_jump(instructions: &[Instruction]) -> Option<Word> {
    let mut stack: Vec<Option<Word>> = Vec::new();
    let body = &instructions[..instructions.len() - 1];
    for ins in body {
        let op = ins.opcode;
        match op {
            opcode::PUSH1..=opcode::PUSH32 => stack.push(ins.push_value()),
            opcode::DUP1..=opcode::DUP16 => {
                let n = (op - opcode::DUP1) as usize + 1;
                let v = stack.len().checked_sub(n).and_then(|i| stack[i]);
                stack.push(v);
            }
            opcode::SWAP1..=opcode::SWAP16 => {
                let n = (op - opcode::SWAP1) as usize + 1;
                // Pad with unknowns so the swap has both operands.
                while stack.len() < n + 1 {
                    stack.insert(0, None);
                }
                let top = stack.len() - 1;
                stack.swap(top, top - n);
            }
            _ => {
                let (pops, pushes) = opcode::info(op).map_or((0, 0), |i| (i.pops, i.pushes));
                for _ in 0..pops {
                    stack.pop();
                }
                for _ in 0..pushes {
                    stack.push(None);
                }
            }
        }
        if stack.len() > SIM_DEPTH {
            stack.remove(0);
        }
    }
    stack.last().copied().flatten()
}

impl Cfg {
    pub fn from_code(code: &[u8]) -> Cfg {
        build_cfg(&disassemble(code))
    }

    /// Block containing `pc`, if `pc` starts an instruction of some block.
    pub fn block_of(&self, pc: usize) -> Option<usize> {
        let (_, &id) = self.starts.range(..=pc).next_back()?;
        self.blocks[id]
            .instructions
            .iter()
            .any(|i| i.pc == pc)
            .then_some(id)
    }

    pub fn successors(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.range((id, 0)..(id + 1, 0)).map(|&(_, to)| to)
    }

    pub fn instruction_count(&self) -> usize {
        self.blocks.iter().map(|b| b.instructions.len()).sum()
    }

    pub fn pcs(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks.iter().flat_map(|b| b.instructions.iter().map(|i| i.pc))
    }

    /// Adds block edges observed at run time; returns how many were new.
    ///
    /// Pairs whose source is not a block's final instruction or whose destination
    /// does not start a block are ignored.
    pub fn augment_edges<'a>(&mut self, dynamic: impl IntoIterator<Item = &'a (usize, usize)>) -> usize {
        let mut added = 0;
        for &(from, to) in dynamic {
            let Some(src) = self.block_of(from) else { continue };
            if self.blocks[src].last().pc != from {
                continue;
            }
            let Some(&dst) = self.starts.get(&to) else { continue };
            if self.edges.insert((src, dst)) {
                added += 1;
            }
        }
        added
    }

    /// Graphviz rendering; critical instructions are highlighted.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph cfg {\n  node [shape=box fontname=monospace];\n");
        for b in &self.blocks {
            let mut label = String::new();
            for ins in &b.instructions {
                let _ = write!(label, "{:04x} {}", ins.pc, ins.mnemonic());
                if !ins.immediate.is_empty() {
                    let _ = write!(label, " 0x{}", hex::encode(&ins.immediate));
                }
                label.push_str("\\l");
            }
            let critical = b.instructions.iter().any(|i| opcode::is_critical(i.opcode));
            let style = if critical {
                " style=filled fillcolor=salmon"
            } else if self.unresolved.contains(&b.id) {
                " style=dashed"
            } else {
                ""
            };
            let _ = writeln!(out, "  b{} [label=\"{}\"{}];", b.id, label, style);
        }
        for (from, to) in &self.edges {
            let _ = writeln!(out, "  b{from} -> b{to};");
        }
        out.push_str("}\n");
        out
    }
}

/// Per-pc distance (in block hops) to the nearest critical site; `None` is unreachable.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DistanceMap {
    pub dist: BTreeMap<usize, Option<u32>>,
}

impl DistanceMap {
    pub fn get(&self, pc: usize) -> Option<u32> {
        self.dist.get(&pc).copied().flatten()
    }

    /// Smallest finite distance among `pcs`.
    pub fn min_over(&self, pcs: impl IntoIterator<Item = usize>) -> Option<u32> {
        pcs.into_iter().filter_map(|pc| self.get(pc)).min()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("pc,distance\n");
        for (pc, d) in &self.dist {
            match d {
                Some(d) => {
                    let _ = writeln!(out, "{pc},{d}");
                }
                None => {
                    let _ = writeln!(out, "{pc},unreachable");
                }
            }
        }
        out
    }
}

pub fn distance_map(cfg: &Cfg, sites: &[usize]) -> DistanceMap {
    let n = cfg.blocks.len();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(from, to) in &cfg.edges {
        preds[to].push(from);
    }
    // Last site pc per block.
    let mut last_site: BTreeMap<usize, usize> = BTreeMap::new();
    for &pc in sites {
        if let Some(b) = cfg.block_of(pc) {
            let e = last_site.entry(b).or_insert(pc);
            *e = (*e).max(pc);
        }
    }
    let mut block_dist: Vec<Option<u32>> = vec![None; n];
    let mut queue = VecDeque::new();
    for &b in last_site.keys() {
        block_dist[b] = Some(0);
        queue.push_back(b);
    }
    while let Some(b) = queue.pop_front() {
        let d = block_dist[b].expect("queued blocks have a distance");
        for &p in &preds[b] {
            if block_dist[p].is_none() {
                block_dist[p] = Some(d + 1);
                queue.push_back(p);
            }
        }
    }
    let mut dist = BTreeMap::new();
    for b in &cfg.blocks {
        let tail = cfg
            .successors(b.id)
            .filter_map(|s| block_dist[s])
            .min()
            .map(|d| d + 1);
        for ins in &b.instructions {
            let d = match last_site.get(&b.id) {
                Some(&site) if ins.pc <= site => Some(0),
                Some(_) => tail,
                None => block_dist[b.id],
            };
            dist.insert(ins.pc, d);
        }
    }
    DistanceMap { dist }
}
