use num_bigint::BigUint;
use proptest::prelude::*;

use super::*;
use crate::asm::{assemble, Assembler};
use crate::opcode as op;

fn install(state: &mut WorldState, code: &[u8], endowment: u64) -> Address {
    deploy_contract(state, code, DeployMode::Runtime, &[], Word::from(endowment)).unwrap()
}

fn run_src(src: &str) -> (ExecutionTrace, WorldState, Address) {
    let mut state = WorldState::new();
    let addr = install(&mut state, &assemble(src).unwrap(), 0);
    let trace = execute_transaction(&mut state, &Transaction::call(addr, vec![])).unwrap();
    (trace, state, addr)
}

/// Evaluates `src` and returns the word left on top of the stack.
fn eval(src: &str) -> Word {
    let (trace, _, _) = run_src(&format!("{src} PUSH1 0 MSTORE PUSH1 32 PUSH1 0 RETURN"));
    assert_eq!(trace.status, TxStatus::Success, "{src}");
    Word::from_big_endian(&trace.output)
}

fn word_hex(w: Word) -> String {
    format!("0x{w:x}")
}

/// `CALL` sequence: out(0,32), in(0,0), value, target, gas.
fn call_asm(a: &mut Assembler, opcode: u8, target: Address, value: u64, gas: u64) {
    a.push(32u64).push(0u64).push(0u64).push(0u64);
    if matches!(opcode, op::CALL | op::CALLCODE) {
        a.push(value);
    }
    a.push_bytes(target.as_bytes()).push(gas).op(opcode);
}

#[test]
fn stop_only() {
    let (trace, _, addr) = run_src("STOP");
    assert_eq!(trace.status, TxStatus::Success);
    assert!(trace.events.is_empty());
    assert_eq!(trace.pcs_of(&addr).collect::<Vec<_>>(), vec![0]);
}

#[test]
fn sstore_emits_storage_changed() {
    let (trace, state, addr) = run_src("PUSH1 0x2a PUSH1 0 SSTORE STOP");
    assert_eq!(trace.status, TxStatus::Success);
    assert_eq!(state.sload(&addr, &Word::zero()), Word::from(42));
    assert_eq!(trace.events.len(), 1);
    assert_eq!(trace.events[0].kind, EventKind::StorageChanged);
    assert_eq!(trace.events[0].pc, 4);
    assert_eq!(trace.storage_diff.len(), 1);
    assert_eq!(trace.gas_used, 3 + 3 + 20_000);
}

#[test]
fn sstore_same_value_is_silent() {
    let (trace, _, _) = run_src("PUSH1 0 PUSH1 0 SSTORE PUSH1 7 PUSH1 1 SSTORE PUSH1 7 PUSH1 1 SSTORE STOP");
    assert_eq!(trace.events_of(EventKind::StorageChanged).count(), 1);
}

#[test]
fn wraparound() {
    let max = word_hex(Word::max_value());
    assert_eq!(eval(&format!("PUSH1 1 PUSH32 {max} ADD")), Word::zero());
    assert_eq!(eval("PUSH1 1 PUSH1 0 SUB"), Word::max_value());
    assert_eq!(eval(&format!("PUSH1 2 PUSH32 {max} MUL")), Word::max_value() - 1);
}

#[test]
fn block_reads_emit_events() {
    let (trace, _, _) = run_src("TIMESTAMP NUMBER POP POP STOP");
    let kinds: Vec<_> = trace.events.iter().map(|e| e.kind).collect();
    assert_eq!(kinds, vec![EventKind::Timestamp, EventKind::BlockNumber]);
    assert_eq!(trace.events[1].pc, 1);
}

#[test]
fn revert_rolls_back_and_returns_gas() {
    let mut state = WorldState::new();
    let addr = install(&mut state, &assemble("PUSH1 1 PUSH1 0 SSTORE PUSH1 0 PUSH1 0 REVERT").unwrap(), 0);
    let before = state.clone();
    let mut tx = Transaction::call(addr, vec![]);
    tx.value = Word::from(5);
    let trace = execute_transaction(&mut state, &tx).unwrap();
    assert_eq!(trace.status, TxStatus::Reverted);
    assert_eq!(state, before);
    assert!(trace.storage_diff.is_empty());
    assert!(trace.gas_used < tx.gas_limit);
    // events of the reverted execution are still reported
    assert!(trace.has_event(EventKind::StorageChanged));
}

#[test]
fn out_of_gas_rolls_back() {
    let mut state = WorldState::new();
    let addr = install(&mut state, &assemble("PUSH1 1 PUSH1 0 SSTORE STOP").unwrap(), 0);
    let before = state.clone();
    let mut tx = Transaction::call(addr, vec![]);
    tx.gas_limit = 10_000;
    let trace = execute_transaction(&mut state, &tx).unwrap();
    assert_eq!(trace.status, TxStatus::OutOfGas);
    assert_eq!(trace.gas_used, 10_000);
    assert_eq!(state, before);
}

#[test]
fn undefined_opcode_is_invalid() {
    for code in [vec![0x0c], vec![0xfe], vec![0x5f], vec![0x21]] {
        let mut state = WorldState::new();
        let addr = install(&mut state, &code, 0);
        let trace = execute_transaction(&mut state, &Transaction::call(addr, vec![])).unwrap();
        assert_eq!(trace.status, TxStatus::InvalidOpcode, "{code:?}");
    }
}

#[test]
fn stack_underflow_and_bad_jump_are_exceptional() {
    assert_eq!(run_src("ADD").0.status, TxStatus::InvalidOpcode);
    assert_eq!(run_src("PUSH1 3 JUMP STOP STOP").0.status, TxStatus::InvalidOpcode);
    // a 0x5b inside push data is not a valid destination
    assert_eq!(run_src("PUSH1 3 JUMP PUSH1 0x5b STOP").0.status, TxStatus::InvalidOpcode);
}

#[test]
fn stack_overflow_is_exceptional() {
    let src = "PUSH1 1 ".repeat(1025);
    assert_eq!(run_src(&src).0.status, TxStatus::InvalidOpcode);
    let ok = "PUSH1 1 ".repeat(1024);
    assert_eq!(run_src(&ok).0.status, TxStatus::Success);
}

#[test]
fn validation_errors() {
    let mut state = WorldState::new();
    let addr = install(&mut state, &[0], 0);
    let mut tx = Transaction::call(addr, vec![]);
    tx.gas_limit = 0;
    assert_eq!(execute_transaction(&mut state, &tx), Err(EvmError::ZeroGas));
    let tx = Transaction::call(Address::from_low_u64(0x1234_5678), vec![]);
    assert!(matches!(execute_transaction(&mut state, &tx), Err(EvmError::UnknownTarget(_))));
    let mut tx = Transaction::call(addr, vec![]);
    tx.value = agent_funds() + 1;
    assert!(matches!(execute_transaction(&mut state, &tx), Err(EvmError::InsufficientBalance { .. })));
    let mut tx = Transaction::call(addr, vec![]);
    tx.agent_policy = AgentPolicy::Reentrant { max_reentries: 0 };
    assert_eq!(execute_transaction(&mut state, &tx), Err(EvmError::BadAgentPolicy(0)));
}

#[test]
fn value_transfer_conserves_supply() {
    let mut state = WorldState::new();
    let addr = install(&mut state, &[0], 0);
    let total = state.total_balance();
    let mut tx = Transaction::call(addr, vec![]);
    tx.value = Word::from(1000);
    let trace = execute_transaction(&mut state, &tx).unwrap();
    assert!(trace.status.is_success());
    assert_eq!(state.balance(&addr), Word::from(1000));
    assert_eq!(state.total_balance(), total);
}

#[test]
fn stipend_is_exact() {
    let mut state = WorldState::new();
    let callee = install(&mut state, &assemble("GAS PUSH1 0 MSTORE PUSH1 32 PUSH1 0 RETURN").unwrap(), 0);
    let mut a = Assembler::new();
    call_asm(&mut a, op::CALL, callee, 1, 0);
    a.op(op::POP);
    let code = assemble("PUSH1 32 PUSH1 0 RETURN").unwrap();
    a.raw(&code);
    let caller = install(&mut state, &a.build().unwrap(), 10);
    let trace = execute_transaction(&mut state, &Transaction::call(caller, vec![])).unwrap();
    assert!(trace.status.is_success());
    // GAS itself costs 3 before reading the counter
    assert_eq!(Word::from_big_endian(&trace.output), Word::from(CALL_STIPEND - 3));
    assert!(trace.has_event(EventKind::SendOp));
    assert!(trace.has_event(EventKind::EtherTransfer));
    assert!(!trace.has_event(EventKind::GaslessSend));
}

#[test]
fn sstore_under_stipend_is_gasless_send() {
    let mut state = WorldState::new();
    let callee = install(&mut state, &assemble("PUSH1 1 PUSH1 0 SSTORE STOP").unwrap(), 0);
    let mut a = Assembler::new();
    call_asm(&mut a, op::CALL, callee, 1, 0);
    a.op(op::POP).op(op::STOP);
    let caller = install(&mut state, &a.build().unwrap(), 10);
    let trace = execute_transaction(&mut state, &Transaction::call(caller, vec![])).unwrap();
    assert!(trace.status.is_success());
    let gs: Vec<_> = trace.events_of(EventKind::GaslessSend).collect();
    assert_eq!(gs.len(), 1);
    assert_eq!(state.code(&caller)[gs[0].pc], op::CALL);
    assert!(trace.has_event(EventKind::ExceptionDisorder));
    // the failed send's value came back
    assert_eq!(state.balance(&caller), Word::from(10));
    assert_eq!(state.sload(&callee, &Word::zero()), Word::zero());
}

#[test]
fn value_zero_stipend_call_is_not_sendop() {
    let mut state = WorldState::new();
    let callee = install(&mut state, &[0], 0);
    let mut a = Assembler::new();
    call_asm(&mut a, op::CALL, callee, 0, 2300);
    a.op(op::POP).op(op::STOP);
    let caller = install(&mut state, &a.build().unwrap(), 10);
    let trace = execute_transaction(&mut state, &Transaction::call(caller, vec![])).unwrap();
    assert!(!trace.has_event(EventKind::SendOp));
    assert!(!trace.has_event(EventKind::EtherTransfer));
}

#[test]
fn static_call_rejects_writes() {
    let mut state = WorldState::new();
    let writer = install(&mut state, &assemble("PUSH1 1 PUSH1 0 SSTORE STOP").unwrap(), 0);
    let reader = install(&mut state, &assemble("PUSH1 0 SLOAD POP STOP").unwrap(), 0);
    for (target, expect) in [(writer, 0u64), (reader, 1)] {
        let mut a = Assembler::new();
        call_asm(&mut a, op::STATICCALL, target, 0, 100_000);
        a.raw(&assemble("PUSH1 0 MSTORE PUSH1 32 PUSH1 0 RETURN").unwrap());
        let caller = install(&mut state, &a.build().unwrap(), 0);
        let trace = execute_transaction(&mut state, &Transaction::call(caller, vec![])).unwrap();
        assert!(trace.status.is_success());
        assert_eq!(Word::from_big_endian(&trace.output), Word::from(expect));
    }
    assert_eq!(state.sload(&writer, &Word::zero()), Word::zero());
}

#[test]
fn failed_child_is_exception_disorder_only_if_parent_succeeds() {
    let mut state = WorldState::new();
    let thrower = install(&mut state, &assemble("PUSH1 0 PUSH1 0 REVERT").unwrap(), 0);
    let mut a = Assembler::new();
    call_asm(&mut a, op::CALL, thrower, 0, 50_000);
    a.op(op::POP).op(op::STOP);
    let swallow = install(&mut state, &a.build().unwrap(), 0);
    let trace = execute_transaction(&mut state, &Transaction::call(swallow, vec![])).unwrap();
    let ed: Vec<_> = trace.events_of(EventKind::ExceptionDisorder).collect();
    assert_eq!(ed.len(), 1);
    assert_eq!(ed[0].pc, a.build().unwrap().len() - 3);

    let mut b = Assembler::new();
    call_asm(&mut b, op::CALL, thrower, 0, 50_000);
    b.jumpi("ok").push(0u64).push(0u64).op(op::REVERT).label("ok").op(op::STOP);
    let checked = install(&mut state, &b.build().unwrap(), 0);
    let trace = execute_transaction(&mut state, &Transaction::call(checked, vec![])).unwrap();
    assert_eq!(trace.status, TxStatus::Reverted);
    assert!(!trace.has_event(EventKind::ExceptionDisorder));
}

#[test]
fn delegate_event_requires_target_in_calldata() {
    let mut state = WorldState::new();
    let lib = install(&mut state, &assemble("PUSH1 9 PUSH1 0 SSTORE STOP").unwrap(), 0);
    // DELEGATECALL to the address in calldata word 0
    let mut a = Assembler::new();
    a.push(0u64).push(0u64).push(0u64).push(0u64);
    a.push(0u64).op(op::CALLDATALOAD).op(op::GAS).op(op::DELEGATECALL).op(op::STOP);
    let proxy = install(&mut state, &a.build().unwrap(), 0);
    let mut calldata = vec![0u8; 12];
    calldata.extend_from_slice(lib.as_bytes());
    let trace = execute_transaction(&mut state, &Transaction::call(proxy, calldata)).unwrap();
    assert!(trace.status.is_success());
    assert_eq!(trace.events_of(EventKind::Delegate).count(), 1);
    // storage written in the proxy's context
    assert_eq!(state.sload(&proxy, &Word::zero()), Word::from(9));
    assert_eq!(state.sload(&lib, &Word::zero()), Word::zero());

    let mut fixed = Assembler::new();
    call_asm(&mut fixed, op::DELEGATECALL, lib, 0, 100_000);
    fixed.op(op::STOP);
    let hard = install(&mut state, &fixed.build().unwrap(), 0);
    let trace = execute_transaction(&mut state, &Transaction::call(hard, vec![])).unwrap();
    assert!(!trace.has_event(EventKind::Delegate));
}

/// Pays 1 wei to the caller with all gas, then marks slot 0.
fn payout_code() -> Vec<u8> {
    let mut a = Assembler::new();
    a.push(0u64).push(0u64).push(0u64).push(0u64).push(1u64).op(op::CALLER).op(op::GAS).op(op::CALL);
    a.op(op::POP);
    a.raw(&assemble("PUSH1 1 PUSH1 0 SSTORE STOP").unwrap());
    a.build().unwrap()
}

#[test]
fn reentrant_agent_reenters_caller() {
    let mut state = WorldState::new();
    let addr = install(&mut state, &payout_code(), 100);
    let mut tx = Transaction::call(addr, vec![0xab]);
    tx.agent_policy = AgentPolicy::Reentrant { max_reentries: 2 };
    let trace = execute_transaction(&mut state, &tx).unwrap();
    assert!(trace.status.is_success());
    let r: Vec<_> = trace.events_of(EventKind::Reentrancy).collect();
    assert_eq!(r.len(), 2);
    assert_eq!(r[0].pc, 0);
    assert_eq!(r[0].depth, 2);
    assert_eq!(r[1].depth, 4);
    assert_eq!(trace.events_of(EventKind::EtherTransfer).count(), 3);
    assert_eq!(state.balance(&addr), Word::from(97));

    let mut state = WorldState::new();
    let addr = install(&mut state, &payout_code(), 100);
    let trace = execute_transaction(&mut state, &Transaction::call(addr, vec![])).unwrap();
    assert!(!trace.has_event(EventKind::Reentrancy));
    assert_eq!(state.balance(&addr), Word::from(99));
}

#[test]
fn thrower_agent_reverts() {
    let mut state = WorldState::new();
    let addr = install(&mut state, &payout_code(), 100);
    let mut tx = Transaction::call(addr, vec![]);
    tx.agent_policy = AgentPolicy::Thrower;
    let trace = execute_transaction(&mut state, &tx).unwrap();
    assert!(trace.status.is_success());
    assert!(trace.has_event(EventKind::ExceptionDisorder));
    assert_eq!(state.balance(&addr), Word::from(100));
}

#[test]
fn reentrant_agent_cannot_act_on_stipend() {
    let mut state = WorldState::new();
    let mut a = Assembler::new();
    a.push(0u64).push(0u64).push(0u64).push(0u64).push(1u64).op(op::CALLER).push(0u64).op(op::CALL);
    a.op(op::POP).op(op::STOP);
    let addr = install(&mut state, &a.build().unwrap(), 10);
    let mut tx = Transaction::call(addr, vec![]);
    tx.agent_policy = AgentPolicy::Reentrant { max_reentries: 1 };
    let trace = execute_transaction(&mut state, &tx).unwrap();
    assert!(trace.status.is_success());
    assert!(trace.has_event(EventKind::GaslessSend));
    assert!(!trace.has_event(EventKind::Reentrancy));
}

#[test]
fn depth_limit_aborts() {
    // calls itself with all gas until the limit
    let mut a = Assembler::new();
    a.push(0u64).push(0u64).push(0u64).push(0u64).push(0u64).op(op::ADDRESS).op(op::GAS).op(op::CALL);
    a.raw(&assemble("PUSH1 1 PUSH1 0 SSTORE STOP").unwrap());
    let mut state = WorldState::new();
    let addr = install(&mut state, &a.build().unwrap(), 0);
    let before = state.clone();
    let mut tx = Transaction::call(addr, vec![]);
    tx.gas_limit = 10_000_000;
    let trace = execute_transaction(&mut state, &tx).unwrap();
    assert_eq!(trace.status, TxStatus::DepthExceeded);
    assert_eq!(state, before);
    assert!(trace.events.iter().all(|e| e.depth <= CALL_DEPTH_LIMIT));
}

#[test]
fn precompile_and_empty_account_calls_succeed() {
    let mut state = WorldState::new();
    for target in [Address::from_low_u64(4), Address::from_low_u64(0xeeee)] {
        let mut a = Assembler::new();
        call_asm(&mut a, op::CALL, target, 0, 1000);
        a.raw(&assemble("PUSH1 0 MSTORE PUSH1 32 PUSH1 0 RETURN").unwrap());
        let caller = install(&mut state, &a.build().unwrap(), 0);
        let trace = execute_transaction(&mut state, &Transaction::call(caller, vec![])).unwrap();
        assert_eq!(Word::from_big_endian(&trace.output), Word::one());
    }
}

#[test]
fn create_installs_returned_code() {
    // init code: return one STOP byte
    let init = assemble("PUSH1 0 PUSH1 0 MSTORE8 PUSH1 1 PUSH1 0 RETURN").unwrap();
    let mut word = [0u8; 32];
    word[..init.len()].copy_from_slice(&init);
    let mut a = Assembler::new();
    a.push_bytes(&word).push(0u64).op(op::MSTORE);
    a.push(init.len() as u64).push(0u64).push(0u64).op(op::CREATE);
    a.raw(&assemble("PUSH1 0 MSTORE PUSH1 32 PUSH1 0 RETURN").unwrap());
    let mut state = WorldState::new();
    let factory = install(&mut state, &a.build().unwrap(), 0);
    let trace = execute_transaction(&mut state, &Transaction::call(factory, vec![])).unwrap();
    assert!(trace.status.is_success());
    let child = Address::from_word(Word::from_big_endian(&trace.output));
    assert_eq!(child, Address::derive(factory, 1));
    assert_eq!(&*state.code(&child), &[0u8]);
}

#[test]
fn create2_address_is_salted() {
    let init = assemble("PUSH1 0 PUSH1 0 RETURN").unwrap();
    let mut a = Assembler::new();
    a.push(7u64);
    a.push(init.len() as u64).push(0u64).push(0u64).op(op::CREATE2);
    a.raw(&assemble("PUSH1 0 MSTORE PUSH1 32 PUSH1 0 RETURN").unwrap());
    let mut state = WorldState::new();
    let factory = install(&mut state, &a.build().unwrap(), 0);
    let trace = execute_transaction(&mut state, &Transaction::call(factory, vec![])).unwrap();
    let child = Address::from_word(Word::from_big_endian(&trace.output));
    let mut pre = vec![0xff];
    pre.extend_from_slice(factory.as_bytes());
    pre.extend_from_slice(&Word::from(7).to_big_endian());
    // memory is empty so the init code is all zero bytes
    pre.extend_from_slice(&word::keccak256(&vec![0; init.len()]));
    assert_eq!(child, Address::from_word(Word::from_big_endian(&word::keccak256(&pre))));
}

#[test]
fn deploy_creation_runs_constructor() {
    // constructor: copy the trailing runtime byte and return it
    let ctor = assemble("PUSH1 1 PUSH1 12 PUSH1 0 CODECOPY PUSH1 1 PUSH1 0 RETURN STOP").unwrap();
    assert_eq!(ctor.len(), 13);
    let mut state = WorldState::new();
    let addr = deploy_contract(&mut state, &ctor, DeployMode::Creation, &[], Word::from(3)).unwrap();
    assert_eq!(&*state.code(&addr), &[0u8]);
    assert_eq!(state.balance(&addr), Word::from(3));

    let before = state.clone();
    let bad = assemble("PUSH1 0 PUSH1 0 REVERT").unwrap();
    let err = deploy_contract(&mut state, &bad, DeployMode::Creation, &[], Word::zero());
    assert_eq!(err, Err(EvmError::ConstructorFailed(TxStatus::Reverted)));
    assert_eq!(state, before);
    assert_eq!(deploy_contract(&mut state, &[], DeployMode::Runtime, &[], Word::zero()), Err(EvmError::EmptyCode));
}

#[test]
fn deploy_runtime_is_verbatim() {
    let mut state = WorldState::new();
    let a = install(&mut state, &[0], 0);
    let b = install(&mut state, &[0], 0);
    assert_ne!(a, b);
    assert_eq!(&*state.code(&a), &[0u8]);
    assert_eq!(state.balance(&a), Word::zero());
}

#[test]
fn snapshot_restore_after_success() {
    let mut state = WorldState::new();
    let addr = install(&mut state, &assemble("PUSH1 5 PUSH1 0 SSTORE STOP").unwrap(), 0);
    let snap = state.snapshot();
    execute_transaction(&mut state, &Transaction::call(addr, vec![])).unwrap();
    assert_eq!(state.sload(&addr, &Word::zero()), Word::from(5));
    let restored = WorldState::restore(&snap);
    assert_eq!(restored.sload(&addr, &Word::zero()), Word::zero());
}

#[test]
fn selfdestruct_moves_balance() {
    let mut state = WorldState::new();
    let addr = install(&mut state, &assemble("CALLER SELFDESTRUCT").unwrap(), 50);
    let total = state.total_balance();
    let trace = execute_transaction(&mut state, &Transaction::call(addr, vec![])).unwrap();
    assert!(trace.status.is_success());
    let et: Vec<_> = trace.events_of(EventKind::EtherTransfer).collect();
    assert_eq!(et.len(), 1);
    assert_eq!(et[0].pc, 1);
    assert_eq!(state.balance(&addr), Word::zero());
    assert!(state.code(&addr).is_empty());
    assert_eq!(state.total_balance(), total);
}

#[test]
fn dynamic_edges_follow_jumps() {
    let (trace, _, addr) = run_src("PUSH1 1 @a JUMPI INVALID a: PUSH1 0 @b JUMPI PUSH1 1 POP b: STOP");
    let pcs: Vec<_> = trace.pcs_of(&addr).collect();
    // 0 PUSH1, 2 PUSH2, 5 JUMPI, 6 INVALID, 7 JUMPDEST a, 8 PUSH1, 10 PUSH2, 13 JUMPI, 14 PUSH1, 16 POP, 17 b, 18 STOP
    assert_eq!(pcs, vec![0, 2, 5, 7, 8, 10, 13, 14, 16, 17, 18]);
    let edges: Vec<_> = trace.dynamic_edges.iter().copied().collect();
    assert_eq!(edges, vec![(5, 7), (13, 14), (16, 17)]);
    for (a, b) in edges {
        assert!(pcs.contains(&a) && pcs.contains(&b));
    }
}

#[test]
fn determinism() {
    let mut s1 = WorldState::new();
    let addr = install(&mut s1, &payout_code(), 100);
    let mut s2 = s1.clone();
    let mut tx = Transaction::call(addr, vec![1, 2, 3]);
    tx.agent_policy = AgentPolicy::Reentrant { max_reentries: 3 };
    let a = execute_transaction(&mut s1, &tx).unwrap();
    let b = execute_transaction(&mut s2, &tx).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(s1, s2);
}

#[test]
fn events_are_local_to_their_frame() {
    let mut state = WorldState::new();
    let addr = install(&mut state, &payout_code(), 100);
    let mut tx = Transaction::call(addr, vec![]);
    tx.agent_policy = AgentPolicy::Reentrant { max_reentries: 1 };
    let trace = execute_transaction(&mut state, &tx).unwrap();
    for e in &trace.events {
        assert!(trace.executed_pcs[&e.contract].contains(&e.pc), "{e:?}");
    }
}

fn u256_to_big(w: Word) -> BigUint {
    BigUint::from_bytes_be(&w.to_big_endian())
}

fn arb_word() -> impl Strategy<Value = Word> {
    prop::array::uniform32(any::<u8>()).prop_map(|b| Word::from_big_endian(&b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn arithmetic_matches_bigint(a in arb_word(), b in arb_word()) {
        let modulus = BigUint::from(1u8) << 256;
        let (ba, bb) = (u256_to_big(a), u256_to_big(b));
        let src = |opname: &str| format!("PUSH32 {} PUSH32 {} {opname}", word_hex(b), word_hex(a));
        prop_assert_eq!(u256_to_big(eval(&src("ADD"))), (&ba + &bb) % &modulus);
        prop_assert_eq!(u256_to_big(eval(&src("MUL"))), (&ba * &bb) % &modulus);
        prop_assert_eq!(u256_to_big(eval(&src("SUB"))), (&ba + &modulus - &bb) % &modulus);
    }
}

/// Small random programs biased towards storage writes and failures.
fn arb_program() -> impl Strategy<Value = Vec<u8>> {
    let piece = prop_oneof![
        any::<u8>().prop_map(|v| vec![op::PUSH1, v % 4, op::PUSH1, v, op::SSTORE]),
        Just(vec![op::PUSH1, 0, op::PUSH1, 0, op::REVERT]),
        Just(vec![op::INVALID]),
        Just(vec![op::PUSH1, 1, op::ADD]),
        Just(vec![op::CALLER, op::BALANCE, op::POP]),
        any::<u8>().prop_map(|v| vec![op::PUSH1, v]),
        Just(vec![op::POP]),
        Just(vec![op::TIMESTAMP]),
    ];
    prop::collection::vec(piece, 1..12).prop_map(|ps| ps.concat())
}

proptest! {
    #[test]
    fn failed_transactions_leave_state_untouched(code in arb_program(), gas in 1u64..60_000, value in 0u64..3) {
        let mut state = WorldState::new();
        let addr = install(&mut state, &code, 0);
        // seed storage so updates and clears are exercised
        state.account_mut(addr).sstore(Word::one(), Word::from(9));
        let before = state.clone();
        let mut tx = Transaction::call(addr, vec![]);
        tx.gas_limit = gas;
        tx.value = Word::from(value);
        let trace = execute_transaction(&mut state, &tx).unwrap();
        if trace.status.is_success() {
            prop_assert_eq!(state.total_balance(), before.total_balance());
        } else {
            prop_assert_eq!(&state, &before);
            prop_assert!(trace.storage_diff.is_empty());
        }
    }
}
