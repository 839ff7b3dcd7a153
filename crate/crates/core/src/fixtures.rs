//! Hand-assembled contracts with one planted bug each, their fixed twins, and a gated target.
//!
//! Bodies follow the shape solc emits: a selector dispatch, mapping slots via SHA3,
//! `send` as a zero-gas value call (stipend only) and `call.value` with all gas.

use serde_json::json;

use crate::abi::{parse_abi, selector_of, Abi};
use crate::asm::assemble;
use crate::evm::{deploy_contract, DeployMode, Word, WorldState};
use crate::fuzzer::Target;
use crate::oracles::{FineBugClass, Taxonomy};

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub code: Vec<u8>,
    pub mode: DeployMode,
    pub abi_json: String,
    pub endowment: Word,
    /// Bug class the fixture must expose; `None` for clean contracts.
    pub planted: Option<FineBugClass>,
    /// Further real bugs that come with the planted one and belong in its labels.
    pub incidental: &'static [FineBugClass],
}

impl Fixture {
    /// Ground-truth taxonomy labels: the planted bug plus incidental ones.
    pub fn labels(&self) -> Vec<Taxonomy> {
        self.planted.iter().chain(self.incidental).map(|f| f.taxonomy()).collect()
    }

    pub fn abi(&self) -> Abi {
        parse_abi(&self.abi_json).expect("fixture ABI is well-formed")
    }

    pub fn deploy(&self) -> Target {
        let mut state = WorldState::new();
        let address = deploy_contract(&mut state, &self.code, self.mode, &[], self.endowment)
            .unwrap_or_else(|e| panic!("fixture {} failed to deploy: {e}", self.name));
        Target::new(state, address, &self.abi()).expect("fixture has code")
    }
}

struct Func {
    name: &'static str,
    inputs: &'static [&'static str],
    payable: bool,
    body: String,
}

fn ether(n: u64) -> Word {
    Word::from(n) * Word::exp10(18)
}

fn push_word(v: Word) -> String {
    format!("PUSH32 0x{}", hex::encode(v.to_big_endian()))
}

fn signature(f: &Func) -> String {
    format!("{}({})", f.name, f.inputs.join(","))
}

fn abi_json(funcs: &[Func]) -> String {
    let entries: Vec<_> = funcs
        .iter()
        .map(|f| {
            let inputs: Vec<_> = f
                .inputs
                .iter()
                .enumerate()
                .map(|(i, t)| json!({"name": format!("arg{i}"), "type": t}))
                .collect();
            json!({
                "type": "function",
                "name": f.name,
                "inputs": inputs,
                "outputs": [],
                "stateMutability": if f.payable { "payable" } else { "nonpayable" },
            })
        })
        .collect();
    serde_json::to_string_pretty(&entries).expect("json values serialize")
}

fn runtime(funcs: &[Func]) -> Vec<u8> {
    let mut src = String::from("PUSH1 0 CALLDATALOAD PUSH1 0xe0 SHR\n");
    for f in funcs {
        let sel = selector_of(&signature(f));
        src += &format!("DUP1 PUSH4 0x{} EQ @fn_{} JUMPI\n", hex::encode(sel), f.name);
    }
    src += "fail: PUSH1 0 DUP1 REVERT\n";
    for f in funcs {
        src += &format!("fn_{}: POP\n", f.name);
        if !f.payable {
            src += "CALLVALUE @fail JUMPI\n";
        }
        src += &f.body;
        src += "\n";
    }
    assemble(&src).expect("fixture assembly is valid")
}

/// Init code that runs `ctor` and returns `runtime`.
fn creation(ctor: &str, runtime: &[u8]) -> Vec<u8> {
    let ctor = assemble(ctor).expect("constructor assembly is valid");
    let offset = ctor.len() + 13;
    let copy = format!(
        "PUSH2 {} DUP1 PUSH2 {} PUSH1 0 CODECOPY PUSH1 0 RETURN",
        runtime.len(),
        offset
    );
    let mut out = ctor;
    out.extend(assemble(&copy).expect("copy stub is valid"));
    debug_assert_eq!(out.len(), offset);
    out.extend_from_slice(runtime);
    out
}

fn fixture(name: &'static str, funcs: &[Func], planted: Option<FineBugClass>) -> Fixture {
    Fixture {
        name,
        code: runtime(funcs),
        mode: DeployMode::Runtime,
        abi_json: abi_json(funcs),
        endowment: ether(100),
        planted,
        incidental: &[],
    }
}

/// `keccak(caller . 0)`: the slot of `balances[msg.sender]`.
const BALANCE_SLOT: &str = "CALLER PUSH1 0 MSTORE PUSH1 0 PUSH1 0x20 MSTORE PUSH1 0x40 PUSH1 0 SHA3";
/// `msg.sender.send(1)`; leaves the success flag.
const SEND_ONE: &str = "PUSH1 0 DUP1 DUP1 DUP1 PUSH1 1 CALLER PUSH1 0 CALL";
/// `msg.sender.call.value(1)("")`; leaves the success flag.
const CALL_ONE: &str = "PUSH1 0 DUP1 DUP1 DUP1 PUSH1 1 CALLER GAS CALL";

fn deposit() -> Func {
    Func {
        name: "deposit",
        inputs: &[],
        payable: true,
        body: format!("{BALANCE_SLOT} DUP1 SLOAD CALLVALUE ADD SWAP1 SSTORE STOP"),
    }
}

fn bank(name: &'static str, withdraw: String, planted: Option<FineBugClass>) -> Fixture {
    let withdraw = Func {
        name: "withdraw",
        inputs: &[],
        payable: false,
        body: withdraw,
    };
    fixture(name, &[deposit(), withdraw], planted)
}

pub fn reentrancy() -> Fixture {
    // Pays out before zeroing the balance.
    let body = format!(
        "{BALANCE_SLOT} DUP1 SLOAD PUSH1 0 DUP1 DUP1 DUP1 DUP5 CALLER GAS CALL ISZERO @fail JUMPI \
         POP PUSH1 0 SWAP1 SSTORE STOP"
    );
    bank("reentrancy", body, Some(FineBugClass::Reentrancy))
}

pub fn reentrancy_fixed() -> Fixture {
    let body = format!(
        "{BALANCE_SLOT} DUP1 SLOAD PUSH1 0 DUP3 SSTORE PUSH1 0 DUP1 DUP1 DUP1 DUP5 CALLER GAS CALL \
         ISZERO @fail JUMPI STOP"
    );
    bank("reentrancy_fixed", body, None)
}

/// Copies `data` from `fwd(address,bytes)` to memory 0 and delegate-calls `c` with it.
const FORWARD: &str = "PUSH1 0x24 CALLDATALOAD PUSH1 4 ADD DUP1 CALLDATALOAD SWAP1 PUSH1 0x20 ADD \
    DUP2 SWAP1 PUSH1 0 CALLDATACOPY \
    PUSH1 0 DUP1 DUP3 PUSH1 0 PUSH1 4 CALLDATALOAD GAS DELEGATECALL ISZERO @fail JUMPI POP STOP";

fn forwarder(name: &'static str, guard: &str, planted: Option<FineBugClass>) -> Fixture {
    let funcs = [Func {
        name: "fwd",
        inputs: &["address", "bytes"],
        payable: false,
        body: format!("{guard} {FORWARD}"),
    }];
    Fixture {
        name,
        // The constructor records the deployer as owner.
        code: creation("CALLER PUSH1 0 SSTORE", &runtime(&funcs)),
        mode: DeployMode::Creation,
        abi_json: abi_json(&funcs),
        endowment: ether(100),
        planted,
        incidental: &[],
    }
}

pub fn delegate() -> Fixture {
    forwarder("delegate", "", Some(FineBugClass::DangerousDelegateCall))
}

pub fn delegate_fixed() -> Fixture {
    forwarder("delegate_fixed", "PUSH1 0 SLOAD CALLER EQ ISZERO @fail JUMPI", None)
}

fn payer(name: &'static str, body: String, planted: Option<FineBugClass>) -> Fixture {
    let funcs = [Func {
        name: "pay",
        inputs: &[],
        payable: false,
        body,
    }];
    fixture(name, &funcs, planted)
}

pub fn gasless_send() -> Fixture {
    // The swallowed failure is also an unchecked exception.
    Fixture {
        incidental: &[FineBugClass::ExceptionDisorder],
        ..payer("gasless_send", format!("{SEND_ONE} POP STOP"), Some(FineBugClass::GaslessSend))
    }
}

pub fn gasless_send_fixed() -> Fixture {
    payer("gasless_send_fixed", format!("{SEND_ONE} ISZERO @fail JUMPI STOP"), None)
}

pub fn exception_disorder() -> Fixture {
    // Without a lock the forwarded gas lets the agent re-enter and be paid again.
    Fixture {
        incidental: &[FineBugClass::Reentrancy],
        ..payer("exception_disorder", format!("{CALL_ONE} POP STOP"), Some(FineBugClass::ExceptionDisorder))
    }
}

pub fn exception_disorder_fixed() -> Fixture {
    // Checked, and locked against re-entry.
    let body = format!(
        "PUSH1 1 SLOAD @fail JUMPI PUSH1 1 PUSH1 1 SSTORE {CALL_ONE} ISZERO @fail JUMPI \
         PUSH1 0 PUSH1 1 SSTORE STOP"
    );
    payer("exception_disorder_fixed", body, None)
}

/// `msg.sender.transfer(amount)` with the amount on the stack.
fn transfer_amount(amount: &str) -> String {
    format!("PUSH1 0 DUP1 DUP1 DUP1 {amount} CALLER PUSH1 0 CALL ISZERO @fail JUMPI STOP")
}

pub fn timestamp() -> Fixture {
    let body = transfer_amount("PUSH1 2 TIMESTAMP MOD PUSH1 1 ADD");
    payer("timestamp", body, Some(FineBugClass::TimestampDependency))
}

pub fn timestamp_fixed() -> Fixture {
    payer("timestamp_fixed", transfer_amount("PUSH1 1"), None)
}

pub fn number() -> Fixture {
    let body = transfer_amount("PUSH1 2 NUMBER MOD PUSH1 1 ADD");
    payer("number", body, Some(FineBugClass::NumberDependency))
}

pub fn number_fixed() -> Fixture {
    payer("number_fixed", transfer_amount("PUSH1 1"), None)
}

/// `gate(a,b,c)` pays out on a timestamp-derived amount only for three exact arguments.
pub fn gated() -> Fixture {
    let keys = [
        Word::from(u32::MAX),
        (Word::one() << 128) + 1,
        Word::from(u64::MAX),
    ];
    let mut body = String::new();
    for (i, k) in keys.iter().enumerate() {
        body += &format!("PUSH1 {} CALLDATALOAD {} EQ ISZERO @fail JUMPI ", 4 + 32 * i, push_word(*k));
    }
    body += &transfer_amount("PUSH1 2 TIMESTAMP MOD PUSH1 1 ADD");
    let funcs = [Func {
        name: "gate",
        inputs: &["uint256", "uint256", "uint256"],
        payable: false,
        body,
    }];
    fixture("gated", &funcs, Some(FineBugClass::TimestampDependency))
}

pub fn vulnerable() -> Vec<Fixture> {
    vec![reentrancy(), delegate(), gasless_send(), exception_disorder(), timestamp(), number()]
}

/// Fixed twins, in the same order as [`vulnerable`].
pub fn fixed() -> Vec<Fixture> {
    vec![
        reentrancy_fixed(),
        delegate_fixed(),
        gasless_send_fixed(),
        exception_disorder_fixed(),
        timestamp_fixed(),
        number_fixed(),
    ]
}

pub fn all() -> Vec<Fixture> {
    let mut out = vulnerable();
    out.extend(fixed());
    out.push(gated());
    out
}
