//! Opcode table for the Istanbul-era instruction set.
//!
//! Shared by the interpreter and the static analyses so both agree on
//! mnemonics, immediate widths and stack arity.

pub const STOP: u8 = 0x00;
pub const ADD: u8 = 0x01;
pub const MUL: u8 = 0x02;
pub const SUB: u8 = 0x03;
pub const DIV: u8 = 0x04;
pub const SDIV: u8 = 0x05;
pub const MOD: u8 = 0x06;
pub const SMOD: u8 = 0x07;
pub const ADDMOD: u8 = 0x08;
pub const MULMOD: u8 = 0x09;
pub const EXP: u8 = 0x0a;
pub const SIGNEXTEND: u8 = 0x0b;
pub const LT: u8 = 0x10;
pub const GT: u8 = 0x11;
pub const SLT: u8 = 0x12;
pub const SGT: u8 = 0x13;
pub const EQ: u8 = 0x14;
pub const ISZERO: u8 = 0x15;
pub const AND: u8 = 0x16;
pub const OR: u8 = 0x17;
pub const XOR: u8 = 0x18;
pub const NOT: u8 = 0x19;
pub const BYTE: u8 = 0x1a;
pub const SHL: u8 = 0x1b;
pub const SHR: u8 = 0x1c;
pub const SAR: u8 = 0x1d;
pub const SHA3: u8 = 0x20;
pub const ADDRESS: u8 = 0x30;
pub const BALANCE: u8 = 0x31;
pub const ORIGIN: u8 = 0x32;
pub const CALLER: u8 = 0x33;
pub const CALLVALUE: u8 = 0x34;
pub const CALLDATALOAD: u8 = 0x35;
pub const CALLDATASIZE: u8 = 0x36;
pub const CALLDATACOPY: u8 = 0x37;
pub const CODESIZE: u8 = 0x38;
pub const CODECOPY: u8 = 0x39;
pub const GASPRICE: u8 = 0x3a;
pub const EXTCODESIZE: u8 = 0x3b;
pub const EXTCODECOPY: u8 = 0x3c;
pub const RETURNDATASIZE: u8 = 0x3d;
pub const RETURNDATACOPY: u8 = 0x3e;
pub const EXTCODEHASH: u8 = 0x3f;
pub const BLOCKHASH: u8 = 0x40;
pub const COINBASE: u8 = 0x41;
pub const TIMESTAMP: u8 = 0x42;
pub const NUMBER: u8 = 0x43;
pub const DIFFICULTY: u8 = 0x44;
pub const GASLIMIT: u8 = 0x45;
pub const CHAINID: u8 = 0x46;
pub const SELFBALANCE: u8 = 0x47;
pub const POP: u8 = 0x50;
pub const MLOAD: u8 = 0x51;
pub const MSTORE: u8 = 0x52;
pub const MSTORE8: u8 = 0x53;
pub const SLOAD: u8 = 0x54;
pub const SSTORE: u8 = 0x55;
pub const JUMP: u8 = 0x56;
pub const JUMPI: u8 = 0x57;
pub const PC: u8 = 0x58;
pub const MSIZE: u8 = 0x59;
pub const GAS: u8 = 0x5a;
pub const JUMPDEST: u8 = 0x5b;
pub const PUSH1: u8 = 0x60;
pub const PUSH2: u8 = 0x61;
pub const PUSH4: u8 = 0x63;
pub const PUSH20: u8 = 0x73;
pub const PUSH32: u8 = 0x7f;
pub const DUP1: u8 = 0x80;
pub const DUP16: u8 = 0x8f;
pub const SWAP1: u8 = 0x90;
pub const SWAP16: u8 = 0x9f;
pub const LOG0: u8 = 0xa0;
pub const LOG4: u8 = 0xa4;
pub const CREATE: u8 = 0xf0;
pub const CALL: u8 = 0xf1;
pub const CALLCODE: u8 = 0xf2;
pub const RETURN: u8 = 0xf3;
pub const DELEGATECALL: u8 = 0xf4;
pub const CREATE2: u8 = 0xf5;
pub const STATICCALL: u8 = 0xfa;
pub const REVERT: u8 = 0xfd;
pub const INVALID: u8 = 0xfe;
pub const SELFDESTRUCT: u8 = 0xff;

/// Static description of one opcode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpInfo {
    pub name: &'static str,
    /// Stack items consumed.
    pub pops: u8,
    /// Stack items produced.
    pub pushes: u8,
    /// Fixed part of the gas cost; dynamic parts are charged by the interpreter.
    pub gas: u64,
}

const fn op(name: &'static str, pops: u8, pushes: u8, gas: u64) -> Option<OpInfo> {
    Some(OpInfo {
        name,
        pops,
        pushes,
        gas,
    })
}

const PUSH_NAMES: [&str; 32] = [
    "PUSH1", "PUSH2", "PUSH3", "PUSH4", "PUSH5", "PUSH6", "PUSH7", "PUSH8", "PUSH9", "PUSH10",
    "PUSH11", "PUSH12", "PUSH13", "PUSH14", "PUSH15", "PUSH16", "PUSH17", "PUSH18", "PUSH19",
    "PUSH20", "PUSH21", "PUSH22", "PUSH23", "PUSH24", "PUSH25", "PUSH26", "PUSH27", "PUSH28",
    "PUSH29", "PUSH30", "PUSH31", "PUSH32",
];
const DUP_NAMES: [&str; 16] = [
    "DUP1", "DUP2", "DUP3", "DUP4", "DUP5", "DUP6", "DUP7", "DUP8", "DUP9", "DUP10", "DUP11",
    "DUP12", "DUP13", "DUP14", "DUP15", "DUP16",
];
const SWAP_NAMES: [&str; 16] = [
    "SWAP1", "SWAP2", "SWAP3", "SWAP4", "SWAP5", "SWAP6", "SWAP7", "SWAP8", "SWAP9", "SWAP10",
    "SWAP11", "SWAP12", "SWAP13", "SWAP14", "SWAP15", "SWAP16",
];
const LOG_NAMES: [&str; 5] = ["LOG0", "LOG1", "LOG2", "LOG3", "LOG4"];

const fn build_table() -> [Option<OpInfo>; 256] {
    let mut t: [Option<OpInfo>; 256] = [None; 256];
    t[STOP as usize] = op("STOP", 0, 0, 0);
    t[ADD as usize] = op("ADD", 2, 1, 3);
    t[MUL as usize] = op("MUL", 2, 1, 5);
    t[SUB as usize] = op("SUB", 2, 1, 3);
    t[DIV as usize] = op("DIV", 2, 1, 5);
    t[SDIV as usize] = op("SDIV", 2, 1, 5);
    t[MOD as usize] = op("MOD", 2, 1, 5);
    t[SMOD as usize] = op("SMOD", 2, 1, 5);
    t[ADDMOD as usize] = op("ADDMOD", 3, 1, 8);
    t[MULMOD as usize] = op("MULMOD", 3, 1, 8);
    t[EXP as usize] = op("EXP", 2, 1, 10);
    t[SIGNEXTEND as usize] = op("SIGNEXTEND", 2, 1, 5);
    t[LT as usize] = op("LT", 2, 1, 3);
    t[GT as usize] = op("GT", 2, 1, 3);
    t[SLT as usize] = op("SLT", 2, 1, 3);
    t[SGT as usize] = op("SGT", 2, 1, 3);
    t[EQ as usize] = op("EQ", 2, 1, 3);
    t[ISZERO as usize] = op("ISZERO", 1, 1, 3);
    t[AND as usize] = op("AND", 2, 1, 3);
    t[OR as usize] = op("OR", 2, 1, 3);
    t[XOR as usize] = op("XOR", 2, 1, 3);
    t[NOT as usize] = op("NOT", 1, 1, 3);
    t[BYTE as usize] = op("BYTE", 2, 1, 3);
    t[SHL as usize] = op("SHL", 2, 1, 3);
    t[SHR as usize] = op("SHR", 2, 1, 3);
    t[SAR as usize] = op("SAR", 2, 1, 3);
    t[SHA3 as usize] = op("SHA3", 2, 1, 30);
    t[ADDRESS as usize] = op("ADDRESS", 0, 1, 3);
    t[BALANCE as usize] = op("BALANCE", 1, 1, 10);
    t[ORIGIN as usize] = op("ORIGIN", 0, 1, 3);
    t[CALLER as usize] = op("CALLER", 0, 1, 3);
    t[CALLVALUE as usize] = op("CALLVALUE", 0, 1, 3);
    t[CALLDATALOAD as usize] = op("CALLDATALOAD", 1, 1, 3);
    t[CALLDATASIZE as usize] = op("CALLDATASIZE", 0, 1, 3);
    t[CALLDATACOPY as usize] = op("CALLDATACOPY", 3, 0, 3);
    t[CODESIZE as usize] = op("CODESIZE", 0, 1, 3);
    t[CODECOPY as usize] = op("CODECOPY", 3, 0, 3);
    t[GASPRICE as usize] = op("GASPRICE", 0, 1, 3);
    t[EXTCODESIZE as usize] = op("EXTCODESIZE", 1, 1, 10);
    t[EXTCODECOPY as usize] = op("EXTCODECOPY", 4, 0, 10);
    t[RETURNDATASIZE as usize] = op("RETURNDATASIZE", 0, 1, 3);
    t[RETURNDATACOPY as usize] = op("RETURNDATACOPY", 3, 0, 3);
    t[EXTCODEHASH as usize] = op("EXTCODEHASH", 1, 1, 10);
    t[BLOCKHASH as usize] = op("BLOCKHASH", 1, 1, 10);
    t[COINBASE as usize] = op("COINBASE", 0, 1, 3);
    t[TIMESTAMP as usize] = op("TIMESTAMP", 0, 1, 3);
    t[NUMBER as usize] = op("NUMBER", 0, 1, 3);
    t[DIFFICULTY as usize] = op("DIFFICULTY", 0, 1, 3);
    t[GASLIMIT as usize] = op("GASLIMIT", 0, 1, 3);
    t[CHAINID as usize] = op("CHAINID", 0, 1, 3);
    t[SELFBALANCE as usize] = op("SELFBALANCE", 0, 1, 5);
    t[POP as usize] = op("POP", 1, 0, 3);
    t[MLOAD as usize] = op("MLOAD", 1, 1, 3);
    t[MSTORE as usize] = op("MSTORE", 2, 0, 3);
    t[MSTORE8 as usize] = op("MSTORE8", 2, 0, 3);
    t[SLOAD as usize] = op("SLOAD", 1, 1, 200);
    // SSTORE is charged entirely by the interpreter (fresh vs update).
    t[SSTORE as usize] = op("SSTORE", 2, 0, 0);
    t[JUMP as usize] = op("JUMP", 1, 0, 8);
    t[JUMPI as usize] = op("JUMPI", 2, 0, 10);
    t[PC as usize] = op("PC", 0, 1, 3);
    t[MSIZE as usize] = op("MSIZE", 0, 1, 3);
    t[GAS as usize] = op("GAS", 0, 1, 3);
    t[JUMPDEST as usize] = op("JUMPDEST", 0, 0, 3);
    let mut i = 0;
    while i < 32 {
        t[PUSH1 as usize + i] = op(PUSH_NAMES[i], 0, 1, 3);
        i += 1;
    }
    let mut i = 0;
    while i < 16 {
        t[DUP1 as usize + i] = op(DUP_NAMES[i], i as u8 + 1, i as u8 + 2, 3);
        t[SWAP1 as usize + i] = op(SWAP_NAMES[i], i as u8 + 2, i as u8 + 2, 3);
        i += 1;
    }
    let mut i = 0;
    while i < 5 {
        t[LOG0 as usize + i] = op(LOG_NAMES[i], i as u8 + 2, 0, 3);
        i += 1;
    }
    t[CREATE as usize] = op("CREATE", 3, 1, 32000);
    t[CALL as usize] = op("CALL", 7, 1, 700);
    t[CALLCODE as usize] = op("CALLCODE", 7, 1, 700);
    t[RETURN as usize] = op("RETURN", 2, 0, 0);
    t[DELEGATECALL as usize] = op("DELEGATECALL", 6, 1, 700);
    t[CREATE2 as usize] = op("CREATE2", 4, 1, 32000);
    t[STATICCALL as usize] = op("STATICCALL", 6, 1, 700);
    t[REVERT as usize] = op("REVERT", 2, 0, 0);
    t[INVALID as usize] = op("INVALID", 0, 0, 0);
    t[SELFDESTRUCT as usize] = op("SELFDESTRUCT", 1, 0, 5000);
    t
}

static TABLE: [Option<OpInfo>; 256] = build_table();

/// Returns the table entry for a defined opcode, `None` for unassigned bytes.
pub fn info(opcode: u8) -> Option<&'static OpInfo> {
    TABLE[opcode as usize].as_ref()
}

/// Mnemonic for an opcode byte; unassigned bytes read as `INVALID`.
pub fn mnemonic(opcode: u8) -> &'static str {
    info(opcode).map_or("INVALID", |i| i.name)
}

/// Number of immediate bytes following the opcode (PUSHn only).
pub fn immediate_len(opcode: u8) -> usize {
    if (PUSH1..=PUSH32).contains(&opcode) {
        (opcode - PUSH1) as usize + 1
    } else {
        0
    }
}

/// Opcodes that end execution of the current frame.
pub fn is_halt(opcode: u8) -> bool {
    matches!(opcode, STOP | RETURN | REVERT | INVALID | SELFDESTRUCT) || info(opcode).is_none()
}

pub fn is_jump(opcode: u8) -> bool {
    opcode == JUMP || opcode == JUMPI
}

/// The value- and control-transferring instructions targeted by the directed strategy.
pub fn is_critical(opcode: u8) -> bool {
    matches!(opcode, CALL | CALLCODE | DELEGATECALL | SELFDESTRUCT)
}

/// Byte value for a mnemonic, used by the assembler and the textual fixtures.
pub fn from_mnemonic(name: &str) -> Option<u8> {
    (0..=255u8).find(|&b| info(b).is_some_and(|i| i.name.eq_ignore_ascii_case(name)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_immediates() {
        assert_eq!(immediate_len(PUSH1), 1);
        assert_eq!(immediate_len(PUSH32), 32);
        assert_eq!(immediate_len(ADD), 0);
        assert_eq!(immediate_len(DUP1), 0);
    }

    #[test]
    fn mnemonics_round_trip() {
        for b in 0..=255u8 {
            if let Some(i) = info(b) {
                assert_eq!(from_mnemonic(i.name), Some(b), "{}", i.name);
            }
        }
        assert_eq!(mnemonic(0x0c), "INVALID");
        assert_eq!(from_mnemonic("push20"), Some(PUSH20));
    }

    #[test]
    fn critical_set_has_four_members() {
        let n = (0..=255u8).filter(|&b| is_critical(b)).count();
        assert_eq!(n, 4);
    }

    #[test]
    fn dup_swap_arity() {
        assert_eq!(info(DUP16).unwrap().pops, 16);
        assert_eq!(info(DUP16).unwrap().pushes, 17);
        assert_eq!(info(SWAP16).unwrap().pops, 17);
    }
}
