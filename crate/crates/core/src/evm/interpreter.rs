use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use log::trace;

use super::types::*;
use super::word::{self, bool_word, keccak256, to_u64_sat};
use crate::opcode::{self as op, immediate_len};

/// Gas the agent spends on its own bookkeeping before calling back into its caller.
/// Deliberately above the 2300 stipend so a re-entrant agent reached by `send` runs dry.
pub const AGENT_REENTRY_GAS: u64 = 5000;

const STACK_LIMIT: usize = 1024;
/// Memory beyond 4 GiB is treated as unaffordable.
const MEMORY_LIMIT: u64 = 1 << 32;
const PRECOMPILE_MAX: u64 = 9;
const COINBASE: Address = Address::from_low_u64(0xc014_ba5e);

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EvmError {
    #[error("target {0} is not deployed")]
    UnknownTarget(Address),
    #[error("sender {sender} cannot cover value {value}")]
    InsufficientBalance { sender: Address, value: Word },
    #[error("transaction gas limit must be positive")]
    ZeroGas,
    #[error("re-entry bound {0} must lie in 1..={CALL_DEPTH_LIMIT}")]
    BadAgentPolicy(u16),
    #[error("deployment code is empty")]
    EmptyCode,
    #[error("constructor halted with {0:?}")]
    ConstructorFailed(TxStatus),
}

/// Exceptional halt of a single frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fault {
    OutOfGas,
    Invalid,
}

impl Fault {
    fn status(self) -> TxStatus {
        match self {
            Fault::OutOfGas => TxStatus::OutOfGas,
            Fault::Invalid => TxStatus::InvalidOpcode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FrameKind {
    Code,
    Agent,
}

#[derive(Debug, Clone)]
enum ReturnTo {
    Root,
    Call { out_offset: usize, out_len: usize },
    Create { address: Address },
}

/// Bookkeeping handed back to the parent when a child finishes.
#[derive(Debug)]
struct ChildLink {
    checkpoint: WorldState,
    ret: ReturnTo,
    call_pc: usize,
    sendop: bool,
}

struct Frame {
    kind: FrameKind,
    /// Storage and balance context.
    address: Address,
    /// Account whose code runs (differs from `address` under DELEGATECALL/CALLCODE).
    code_address: Address,
    code: Arc<[u8]>,
    jumpdests: Vec<bool>,
    caller: Address,
    value: Word,
    calldata: Arc<[u8]>,
    gas: u64,
    pc: usize,
    stack: Vec<Word>,
    memory: Vec<u8>,
    return_data: Vec<u8>,
    is_static: bool,
    depth: usize,
    /// Offsets of calls whose callee failed without this frame reverting (yet).
    swallowed: Vec<usize>,
    /// Previous instruction and whether it was a branch.
    prev: Option<(usize, bool)>,
    link: ChildLink,
}

impl Frame {
    fn charge(&mut self, amount: u64) -> Result<(), Fault> {
        if self.gas < amount {
            self.gas = 0;
            return Err(Fault::OutOfGas);
        }
        self.gas -= amount;
        Ok(())
    }

    fn pop(&mut self) -> Result<Word, Fault> {
        self.stack.pop().ok_or(Fault::Invalid)
    }

    fn push(&mut self, v: Word) -> Result<(), Fault> {
        if self.stack.len() >= STACK_LIMIT {
            return Err(Fault::Invalid);
        }
        self.stack.push(v);
        Ok(())
    }

    /// Expands memory to cover `[offset, offset + len)` and charges 3 gas per new word.
    fn expand(&mut self, offset: Word, len: Word) -> Result<(usize, usize), Fault> {
        if len.is_zero() {
            return Ok((0, 0));
        }
        let off = to_u64_sat(offset);
        let len = to_u64_sat(len);
        let end = off.checked_add(len).ok_or(Fault::OutOfGas)?;
        if end > MEMORY_LIMIT {
            self.gas = 0;
            return Err(Fault::OutOfGas);
        }
        let new_words = end.div_ceil(32);
        let cur_words = (self.memory.len() / 32) as u64;
        if new_words > cur_words {
            self.charge(3 * (new_words - cur_words))?;
            self.memory.resize(new_words as usize * 32, 0);
        }
        Ok((off as usize, len as usize))
    }

    fn mem_slice(&self, off: usize, len: usize) -> &[u8] {
        if len == 0 {
            &[]
        } else {
            &self.memory[off..off + len]
        }
    }

    /// Writes `src` (zero-padded to `len`) into already-expanded memory.
    fn mem_write_padded(&mut self, off: usize, len: usize, src: &[u8], src_off: u64) {
        for i in 0..len {
            let idx = src_off.checked_add(i as u64);
            self.memory[off + i] = idx
                .and_then(|j| src.get(usize::try_from(j).ok()?))
                .copied()
                .unwrap_or(0);
        }
    }
}

fn jumpdest_map(code: &[u8]) -> Vec<bool> {
    let mut map = vec![false; code.len()];
    let mut pc = 0;
    while pc < code.len() {
        let b = code[pc];
        if b == op::JUMPDEST {
            map[pc] = true;
        }
        pc += 1 + immediate_len(b);
    }
    map
}

enum Step {
    Continue,
    Halt { status: TxStatus, output: Vec<u8> },
    Call(CallRequest),
    Create(CreateRequest),
}

struct CallRequest {
    opcode: u8,
    target: Address,
    value: Word,
    input: Vec<u8>,
    gas: u64,
    /// Gas actually deducted from the caller (excludes the stipend).
    charged: u64,
    out_offset: usize,
    out_len: usize,
    call_pc: usize,
}

struct CreateRequest {
    value: Word,
    init_code: Vec<u8>,
    salt: Option<Word>,
    call_pc: usize,
}

#[derive(Default)]
struct Recorder {
    executed_pcs: BTreeMap<Address, BTreeSet<usize>>,
    dynamic_edges: BTreeSet<(usize, usize)>,
    events: Vec<ExecutionEvent>,
}

impl Recorder {
    fn emit(&mut self, kind: EventKind, pc: usize, depth: usize, contract: Address, detail: EventDetail) {
        trace!("event {:?} pc={} depth={}", kind, pc, depth);
        self.events.push(ExecutionEvent {
            kind,
            pc,
            depth,
            contract,
            detail,
        });
    }
}

struct Executor<'a> {
    state: &'a mut WorldState,
    tx: &'a Transaction,
    frames: Vec<Frame>,
    rec: Recorder,
    agent_reentries: u16,
    /// Set when the transaction is aborted wholesale (depth limit).
    abort: Option<TxStatus>,
    /// Filled when the root frame finishes.
    root_result: Option<(TxStatus, Vec<u8>, u64)>,
}

/// Runs `tx` against `state`, applying its effects only if it succeeds.
pub fn execute_transaction(state: &mut WorldState, tx: &Transaction) -> Result<ExecutionTrace, EvmError> {
    validate(state, tx)?;
    let checkpoint = state.clone();
    state.transfer(tx.sender, tx.target, tx.value);
    state.account_mut(tx.sender).nonce += 1;
    let code = state.code(&tx.target);
    let root = new_frame(
        FrameKind::Code,
        tx.target,
        tx.target,
        code,
        tx.sender,
        tx.value,
        Arc::from(tx.calldata.as_slice()),
        tx.gas_limit,
        false,
        0,
        ChildLink {
            checkpoint: WorldState::default(),
            ret: ReturnTo::Root,
            call_pc: 0,
            sendop: false,
        },
    );
    let (status, output, gas_left, rec) = run(state, tx, root);
    if !status.is_success() {
        *state = checkpoint.clone();
    }
    let storage_diff = if status.is_success() {
        storage_diff(&checkpoint, state)
    } else {
        Vec::new()
    };
    Ok(ExecutionTrace {
        executed_pcs: rec.executed_pcs,
        dynamic_edges: rec.dynamic_edges,
        events: rec.events,
        status,
        gas_used: tx.gas_limit - gas_left,
        storage_diff,
        output,
    })
}

fn validate(state: &WorldState, tx: &Transaction) -> Result<(), EvmError> {
    if tx.gas_limit == 0 {
        return Err(EvmError::ZeroGas);
    }
    if !state.exists(&tx.target) {
        return Err(EvmError::UnknownTarget(tx.target));
    }
    if state.balance(&tx.sender) < tx.value {
        return Err(EvmError::InsufficientBalance {
            sender: tx.sender,
            value: tx.value,
        });
    }
    if let AgentPolicy::Reentrant { max_reentries } = tx.agent_policy {
        if max_reentries == 0 || max_reentries as usize > CALL_DEPTH_LIMIT {
            return Err(EvmError::BadAgentPolicy(max_reentries));
        }
    }
    Ok(())
}

/// How [`deploy_contract`] treats the supplied bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeployMode {
    /// Init code whose execution returns the runtime code.
    Creation,
    /// Runtime code installed verbatim.
    Runtime,
}

/// Deploys `code` from the deployer account at a nonce-derived address.
///
/// The endowment is minted (faucet) rather than taken from another account.
pub fn deploy_contract(
    state: &mut WorldState,
    code: &[u8],
    mode: DeployMode,
    constructor_args: &[u8],
    endowment: Word,
) -> Result<Address, EvmError> {
    if code.is_empty() {
        return Err(EvmError::EmptyCode);
    }
    let nonce = state.account(&DEPLOYER_ADDRESS).map_or(0, |a| a.nonce);
    let address = Address::derive(DEPLOYER_ADDRESS, nonce);
    match mode {
        DeployMode::Runtime => {
            state.account_mut(DEPLOYER_ADDRESS).nonce += 1;
            let acct = state.account_mut(address);
            acct.code = Arc::from(code);
            acct.nonce = 1;
            state.mint(address, endowment);
            Ok(address)
        }
        DeployMode::Creation => {
            let checkpoint = state.clone();
            state.account_mut(DEPLOYER_ADDRESS).nonce += 1;
            state.account_mut(address).nonce = 1;
            state.mint(address, endowment);
            let mut init = code.to_vec();
            init.extend_from_slice(constructor_args);
            let tx = Transaction {
                sender: DEPLOYER_ADDRESS,
                target: address,
                value: Word::zero(),
                calldata: Vec::new(),
                gas_limit: 10_000_000,
                agent_policy: AgentPolicy::Benign,
                block: BlockContext::default(),
            };
            let root = new_frame(
                FrameKind::Code,
                address,
                address,
                Arc::from(init),
                DEPLOYER_ADDRESS,
                Word::zero(),
                Arc::from(Vec::new()),
                tx.gas_limit,
                false,
                0,
                ChildLink {
                    checkpoint: WorldState::default(),
                    ret: ReturnTo::Root,
                    call_pc: 0,
                    sendop: false,
                },
            );
            let (status, output, _, _) = run(state, &tx, root);
            if !status.is_success() {
                *state = checkpoint;
                return Err(EvmError::ConstructorFailed(status));
            }
            state.account_mut(address).code = Arc::from(output);
            Ok(address)
        }
    }
}

fn storage_diff(before: &WorldState, after: &WorldState) -> Vec<StorageChange> {
    let empty = BTreeMap::new();
    let mut out = Vec::new();
    let addrs: BTreeSet<&Address> = before.accounts.keys().chain(after.accounts.keys()).collect();
    for addr in addrs {
        let old = before.account(addr).map_or(&empty, |a| &a.storage);
        let new = after.account(addr).map_or(&empty, |a| &a.storage);
        let keys: BTreeSet<&Word> = old.keys().chain(new.keys()).collect();
        for key in keys {
            let o = old.get(key).copied().unwrap_or_default();
            let n = new.get(key).copied().unwrap_or_default();
            if o != n {
                out.push(StorageChange {
                    address: *addr,
                    key: *key,
                    old: o,
                    new: n,
                });
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn new_frame(
    kind: FrameKind,
    address: Address,
    code_address: Address,
    code: Arc<[u8]>,
    caller: Address,
    value: Word,
    calldata: Arc<[u8]>,
    gas: u64,
    is_static: bool,
    depth: usize,
    link: ChildLink,
) -> Frame {
    let jumpdests = jumpdest_map(&code);
    Frame {
        kind,
        address,
        code_address,
        code,
        jumpdests,
        caller,
        value,
        calldata,
        gas,
        pc: 0,
        stack: Vec::new(),
        memory: Vec::new(),
        return_data: Vec::new(),
        is_static,
        depth,
        swallowed: Vec::new(),
        prev: None,
        link,
    }
}

fn run(state: &mut WorldState, tx: &Transaction, root: Frame) -> (TxStatus, Vec<u8>, u64, Recorder) {
    let mut ex = Executor {
        state,
        tx,
        frames: vec![root],
        rec: Recorder::default(),
        agent_reentries: 0,
        abort: None,
        root_result: None,
    };
    ex.run_loop();
    let rec = std::mem::take(&mut ex.rec);
    if let Some(status) = ex.abort {
        return (status, Vec::new(), 0, rec);
    }
    let (status, output, gas_left) = ex.root_result.take().expect("root frame finished");
    (status, output, gas_left, rec)
}

impl Executor<'_> {
    fn run_loop(&mut self) {
        while self.root_result.is_none() && self.abort.is_none() {
            let top = self.frames.last().expect("frame stack non-empty");
            if top.kind == FrameKind::Agent {
                // The agent's callback returned; the agent itself always completes.
                self.end_frame(TxStatus::Success, Vec::new());
                continue;
            }
            match self.step() {
                Ok(Step::Continue) => {}
                Ok(Step::Halt { status, output }) => self.end_frame(status, output),
                Ok(Step::Call(req)) => self.begin_call(req),
                Ok(Step::Create(req)) => self.begin_create(req),
                Err(fault) => self.end_frame(fault.status(), Vec::new()),
            }
        }
    }

    /// Pops the top frame and hands its result to the parent (or finishes the transaction).
    fn end_frame(&mut self, status: TxStatus, output: Vec<u8>) {
        let frame = self.frames.pop().expect("frame to end");
        if status.is_success() && frame.kind == FrameKind::Code {
            for &pc in &frame.swallowed {
                self.rec.emit(
                    EventKind::ExceptionDisorder,
                    pc,
                    frame.depth,
                    frame.code_address,
                    EventDetail::None,
                );
            }
        }
        let gas_left = match status {
            TxStatus::Success | TxStatus::Reverted => frame.gas,
            _ => 0,
        };
        if let ReturnTo::Root = frame.link.ret {
            self.root_result = Some((status, output, gas_left));
            return;
        }
        self.complete_child(status, output, gas_left, frame.link);
    }

    /// Delivers a child's outcome to the frame now on top of the stack.
    fn complete_child(&mut self, status: TxStatus, output: Vec<u8>, gas_left: u64, link: ChildLink) {
        if !status.is_success() {
            *self.state = link.checkpoint;
        }
        let parent = self.frames.last_mut().expect("parent frame");
        parent.gas += gas_left;
        let ok = status.is_success();
        if !ok {
            parent.swallowed.push(link.call_pc);
            if link.sendop && status == TxStatus::OutOfGas && parent.kind == FrameKind::Code {
                let (depth, contract) = (parent.depth, parent.code_address);
                self.rec.emit(
                    EventKind::GaslessSend,
                    link.call_pc,
                    depth,
                    contract,
                    EventDetail::None,
                );
            }
        }
        let parent = self.frames.last_mut().expect("parent frame");
        match link.ret {
            ReturnTo::Root => unreachable!("root has no parent"),
            ReturnTo::Call { out_offset, out_len } => {
                let n = out_len.min(output.len());
                parent.memory[out_offset..out_offset + n].copy_from_slice(&output[..n]);
                parent.return_data = output;
                // Stack room was reserved when the call operands were popped.
                parent.stack.push(bool_word(ok));
            }
            ReturnTo::Create { address } => {
                if ok {
                    self.state.account_mut(address).code = Arc::from(output);
                    let parent = self.frames.last_mut().expect("parent frame");
                    parent.return_data.clear();
                    parent.stack.push(address.to_word());
                } else {
                    parent.return_data = if status == TxStatus::Reverted { output } else { Vec::new() };
                    parent.stack.push(Word::zero());
                }
            }
        }
    }

    fn begin_call(&mut self, req: CallRequest) {
        let parent = self.frames.last().expect("caller frame");
        let depth = parent.depth + 1;
        if depth > CALL_DEPTH_LIMIT {
            self.abort = Some(TxStatus::DepthExceeded);
            return;
        }
        let (p_addr, p_code_addr, p_caller, p_value, p_depth, p_static) = (
            parent.address,
            parent.code_address,
            parent.caller,
            parent.value,
            parent.depth,
            parent.is_static,
        );
        let is_code_parent = parent.kind == FrameKind::Code;

        if is_code_parent
            && matches!(req.opcode, op::DELEGATECALL | op::CALLCODE)
            && contains_subslice(&self.tx.calldata, req.target.as_bytes())
        {
            self.rec.emit(
                EventKind::Delegate,
                req.call_pc,
                p_depth,
                p_code_addr,
                EventDetail::Call { target: req.target },
            );
        }

        let transfers_value = matches!(req.opcode, op::CALL | op::CALLCODE) && !req.value.is_zero();
        if transfers_value && self.state.balance(&p_addr) < req.value {
            let parent = self.frames.last_mut().expect("caller frame");
            parent.gas += req.charged;
            parent.return_data.clear();
            parent.stack.push(Word::zero());
            return;
        }

        let checkpoint = self.state.clone();
        let (address, caller, value, is_static) = match req.opcode {
            op::CALL => (req.target, p_addr, req.value, p_static),
            op::CALLCODE => (p_addr, p_addr, req.value, p_static),
            op::DELEGATECALL => (p_addr, p_caller, p_value, p_static),
            op::STATICCALL => (req.target, p_addr, Word::zero(), true),
            other => unreachable!("not a call opcode: {other:#x}"),
        };
        if req.opcode == op::CALL {
            self.state.transfer(p_addr, req.target, req.value);
        }
        let mut sendop = false;
        if transfers_value && is_code_parent {
            self.rec.emit(
                EventKind::EtherTransfer,
                req.call_pc,
                p_depth,
                p_code_addr,
                EventDetail::Transfer {
                    to: req.target,
                    value: req.value,
                },
            );
            if req.opcode == op::CALL && req.gas == CALL_STIPEND {
                sendop = true;
                self.rec.emit(
                    EventKind::SendOp,
                    req.call_pc,
                    p_depth,
                    p_code_addr,
                    EventDetail::Call { target: req.target },
                );
            }
        }
        let link = ChildLink {
            checkpoint,
            ret: ReturnTo::Call {
                out_offset: req.out_offset,
                out_len: req.out_len,
            },
            call_pc: req.call_pc,
            sendop,
        };

        if req.target == AGENT_ADDRESS {
            self.enter_agent(req.gas, depth, p_addr, link);
            return;
        }
        let target_num = req.target.to_word();
        if !target_num.is_zero() && target_num <= Word::from(PRECOMPILE_MAX) {
            self.complete_child(TxStatus::Success, Vec::new(), req.gas, link);
            return;
        }
        let code = self.state.code(&req.target);
        if code.is_empty() {
            self.complete_child(TxStatus::Success, Vec::new(), req.gas, link);
            return;
        }
        if req.opcode == op::CALL
            && self
                .frames
                .iter()
                .any(|f| f.kind == FrameKind::Code && f.address == req.target)
        {
            self.rec.emit(
                EventKind::Reentrancy,
                0,
                depth,
                req.target,
                EventDetail::Call { target: req.target },
            );
        }
        let frame = new_frame(
            FrameKind::Code,
            address,
            req.target,
            code,
            caller,
            value,
            Arc::from(req.input),
            req.gas,
            is_static,
            depth,
            link,
        );
        self.frames.push(frame);
    }

    /// The agent was called by the contract at `caller_addr` with `gas`.
    fn enter_agent(&mut self, gas: u64, depth: usize, caller_addr: Address, link: ChildLink) {
        match self.tx.agent_policy {
            AgentPolicy::Thrower => {
                self.complete_child(TxStatus::Reverted, Vec::new(), gas, link);
            }
            AgentPolicy::Reentrant { max_reentries } if self.agent_reentries < max_reentries => {
                let call_cost = AGENT_REENTRY_GAS + crate::opcode::info(op::CALL).unwrap().gas;
                if gas < call_cost {
                    self.complete_child(TxStatus::OutOfGas, Vec::new(), 0, link);
                    return;
                }
                self.agent_reentries += 1;
                // Re-invoke the calling frame's own function with the same calldata.
                let caller_frame = self
                    .frames
                    .iter()
                    .rev()
                    .find(|f| f.kind == FrameKind::Code)
                    .expect("a contract called the agent");
                let calldata = caller_frame.calldata.to_vec();
                let agent = new_frame(
                    FrameKind::Agent,
                    AGENT_ADDRESS,
                    AGENT_ADDRESS,
                    Arc::from(Vec::new()),
                    caller_addr,
                    Word::zero(),
                    Arc::from(Vec::new()),
                    0,
                    false,
                    depth,
                    link,
                );
                self.frames.push(agent);
                let forwarded = gas - call_cost;
                self.begin_call(CallRequest {
                    opcode: op::CALL,
                    target: caller_addr,
                    value: Word::zero(),
                    input: calldata,
                    gas: forwarded,
                    charged: forwarded,
                    out_offset: 0,
                    out_len: 0,
                    call_pc: 0,
                });
            }
            _ => self.complete_child(TxStatus::Success, Vec::new(), gas, link),
        }
    }

    fn begin_create(&mut self, req: CreateRequest) {
        let parent = self.frames.last().expect("creator frame");
        let depth = parent.depth + 1;
        if depth > CALL_DEPTH_LIMIT {
            self.abort = Some(TxStatus::DepthExceeded);
            return;
        }
        let creator = parent.address;
        let gas = parent.gas;
        if self.state.balance(&creator) < req.value {
            let parent = self.frames.last_mut().expect("creator frame");
            parent.return_data.clear();
            parent.stack.push(Word::zero());
            return;
        }
        let checkpoint = self.state.clone();
        let nonce = self.state.account(&creator).map_or(0, |a| a.nonce);
        self.state.account_mut(creator).nonce += 1;
        let address = match req.salt {
            None => Address::derive(creator, nonce),
            Some(salt) => {
                let mut pre = vec![0xff];
                pre.extend_from_slice(creator.as_bytes());
                pre.extend_from_slice(&salt.to_big_endian());
                pre.extend_from_slice(&keccak256(&req.init_code));
                Address::from_word(Word::from_big_endian(&keccak256(&pre)))
            }
        };
        let occupied = self
            .state
            .account(&address)
            .is_some_and(|a| !a.code.is_empty() || a.nonce > 0);
        if occupied {
            let parent = self.frames.last_mut().expect("creator frame");
            parent.return_data.clear();
            parent.stack.push(Word::zero());
            return;
        }
        self.state.transfer(creator, address, req.value);
        self.state.account_mut(address).nonce = 1;
        let parent = self.frames.last_mut().expect("creator frame");
        parent.gas = 0;
        let frame = new_frame(
            FrameKind::Code,
            address,
            address,
            Arc::from(req.init_code),
            creator,
            req.value,
            Arc::from(Vec::new()),
            gas,
            false,
            depth,
            ChildLink {
                checkpoint,
                ret: ReturnTo::Create { address },
                call_pc: req.call_pc,
                sendop: false,
            },
        );
        self.frames.push(frame);
    }

    fn step(&mut self) -> Result<Step, Fault> {
        let tx = self.tx;
        let frame = self.frames.last_mut().expect("active frame");
        let pc = frame.pc;
        if pc >= frame.code.len() {
            return Ok(Step::Halt {
                status: TxStatus::Success,
                output: Vec::new(),
            });
        }
        let opcode = frame.code[pc];
        self.rec
            .executed_pcs
            .entry(frame.code_address)
            .or_default()
            .insert(pc);
        if frame.code_address == tx.target {
            if let Some((prev_pc, was_branch)) = frame.prev {
                if was_branch || opcode == op::JUMPDEST {
                    self.rec.dynamic_edges.insert((prev_pc, pc));
                }
            }
        }
        frame.prev = Some((pc, op::is_jump(opcode)));

        let Some(info) = op::info(opcode) else {
            return Err(Fault::Invalid);
        };
        frame.charge(info.gas)?;
        if frame.stack.len() < info.pops as usize {
            return Err(Fault::Invalid);
        }
        if frame.stack.len() - info.pops as usize + info.pushes as usize > STACK_LIMIT {
            return Err(Fault::Invalid);
        }
        frame.pc += 1 + immediate_len(opcode);

        macro_rules! binop {
            ($f:expr) => {{
                let a = frame.pop()?;
                let b = frame.pop()?;
                frame.push($f(a, b))?;
            }};
        }

        match opcode {
            op::STOP => {
                return Ok(Step::Halt {
                    status: TxStatus::Success,
                    output: Vec::new(),
                })
            }
            op::ADD => binop!(|a: Word, b| a.overflowing_add(b).0),
            op::MUL => binop!(|a: Word, b| a.overflowing_mul(b).0),
            op::SUB => binop!(|a: Word, b| a.overflowing_sub(b).0),
            op::DIV => binop!(|a: Word, b: Word| if b.is_zero() { Word::zero() } else { a / b }),
            op::SDIV => binop!(word::sdiv),
            op::MOD => binop!(|a: Word, b: Word| if b.is_zero() { Word::zero() } else { a % b }),
            op::SMOD => binop!(word::smod),
            op::ADDMOD => {
                let (a, b, m) = (frame.pop()?, frame.pop()?, frame.pop()?);
                frame.push(word::addmod(a, b, m))?;
            }
            op::MULMOD => {
                let (a, b, m) = (frame.pop()?, frame.pop()?, frame.pop()?);
                frame.push(word::mulmod(a, b, m))?;
            }
            op::EXP => {
                let (base, e) = (frame.pop()?, frame.pop()?);
                frame.charge(50 * e.bits().div_ceil(8) as u64)?;
                frame.push(word::exp(base, e))?;
            }
            op::SIGNEXTEND => binop!(word::signextend),
            op::LT => binop!(|a, b| bool_word(a < b)),
            op::GT => binop!(|a, b| bool_word(a > b)),
            op::SLT => binop!(|a, b| bool_word(word::slt(a, b))),
            op::SGT => binop!(|a, b| bool_word(word::slt(b, a))),
            op::EQ => binop!(|a, b| bool_word(a == b)),
            op::ISZERO => {
                let a = frame.pop()?;
                frame.push(bool_word(a.is_zero()))?;
            }
            op::AND => binop!(|a, b| a & b),
            op::OR => binop!(|a, b| a | b),
            op::XOR => binop!(|a, b| a ^ b),
            op::NOT => {
                let a = frame.pop()?;
                frame.push(!a)?;
            }
            op::BYTE => binop!(word::byte),
            op::SHL => binop!(word::shl),
            op::SHR => binop!(word::shr),
            op::SAR => binop!(word::sar),
            op::SHA3 => {
                let (off, len) = (frame.pop()?, frame.pop()?);
                let (o, l) = frame.expand(off, len)?;
                frame.charge(6 * (l as u64).div_ceil(32))?;
                let digest = keccak256(frame.mem_slice(o, l));
                frame.push(Word::from_big_endian(&digest))?;
            }
            op::ADDRESS => {
                let a = frame.address.to_word();
                frame.push(a)?;
            }
            op::BALANCE => {
                let a = Address::from_word(frame.pop()?);
                frame.push(self.state.balance(&a))?;
            }
            op::SELFBALANCE => {
                let b = self.state.balance(&frame.address);
                frame.push(b)?;
            }
            op::ORIGIN => frame.push(tx.sender.to_word())?,
            op::CALLER => {
                let c = frame.caller.to_word();
                frame.push(c)?;
            }
            op::CALLVALUE => {
                let v = frame.value;
                frame.push(v)?;
            }
            op::CALLDATALOAD => {
                let off = to_u64_sat(frame.pop()?);
                let mut buf = [0u8; 32];
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = off
                        .checked_add(i as u64)
                        .and_then(|j| frame.calldata.get(usize::try_from(j).ok()?))
                        .copied()
                        .unwrap_or(0);
                }
                frame.push(Word::from_big_endian(&buf))?;
            }
            op::CALLDATASIZE => {
                let n = frame.calldata.len();
                frame.push(Word::from(n))?;
            }
            op::CALLDATACOPY | op::CODECOPY | op::RETURNDATACOPY => {
                let (dst, src, len) = (frame.pop()?, frame.pop()?, frame.pop()?);
                if opcode == op::RETURNDATACOPY {
                    let end = src.overflowing_add(len);
                    if end.1 || end.0 > Word::from(frame.return_data.len()) {
                        return Err(Fault::Invalid);
                    }
                }
                let (d, l) = frame.expand(dst, len)?;
                frame.charge(3 * (l as u64).div_ceil(32))?;
                let source = match opcode {
                    op::CALLDATACOPY => frame.calldata.to_vec(),
                    op::CODECOPY => frame.code.to_vec(),
                    _ => frame.return_data.clone(),
                };
                frame.mem_write_padded(d, l, &source, to_u64_sat(src));
            }
            op::CODESIZE => {
                let n = frame.code.len();
                frame.push(Word::from(n))?;
            }
            op::GASPRICE => frame.push(Word::one())?,
            op::EXTCODESIZE => {
                let a = Address::from_word(frame.pop()?);
                frame.push(Word::from(self.state.code(&a).len()))?;
            }
            op::EXTCODECOPY => {
                let a = Address::from_word(frame.pop()?);
                let (dst, src, len) = (frame.pop()?, frame.pop()?, frame.pop()?);
                let (d, l) = frame.expand(dst, len)?;
                frame.charge(3 * (l as u64).div_ceil(32))?;
                let code = self.state.code(&a);
                frame.mem_write_padded(d, l, &code, to_u64_sat(src));
            }
            op::RETURNDATASIZE => {
                let n = frame.return_data.len();
                frame.push(Word::from(n))?;
            }
            op::EXTCODEHASH => {
                let a = Address::from_word(frame.pop()?);
                let h = match self.state.account(&a) {
                    Some(acct) => Word::from_big_endian(&keccak256(&acct.code)),
                    None => Word::zero(),
                };
                frame.push(h)?;
            }
            op::BLOCKHASH => {
                let n = frame.pop()?;
                let cur = Word::from(tx.block.number);
                let h = if n < cur && n + 256 >= cur {
                    Word::from_big_endian(&keccak256(&n.to_big_endian()))
                } else {
                    Word::zero()
                };
                frame.push(h)?;
            }
            op::COINBASE => frame.push(COINBASE.to_word())?,
            op::TIMESTAMP | op::NUMBER => {
                let (kind, value) = if opcode == op::TIMESTAMP {
                    (EventKind::Timestamp, tx.block.timestamp)
                } else {
                    (EventKind::BlockNumber, tx.block.number)
                };
                frame.push(Word::from(value))?;
                let (depth, contract) = (frame.depth, frame.code_address);
                self.rec.emit(kind, pc, depth, contract, EventDetail::Block { value });
            }
            op::DIFFICULTY => frame.push(Word::from(0x20000u64))?,
            op::GASLIMIT => frame.push(Word::from(tx.block.gas_limit))?,
            op::CHAINID => frame.push(Word::one())?,
            op::POP => {
                frame.pop()?;
            }
            op::MLOAD => {
                let off = frame.pop()?;
                let (o, _) = frame.expand(off, Word::from(32))?;
                let v = Word::from_big_endian(&frame.memory[o..o + 32]);
                frame.push(v)?;
            }
            op::MSTORE => {
                let (off, v) = (frame.pop()?, frame.pop()?);
                let (o, _) = frame.expand(off, Word::from(32))?;
                frame.memory[o..o + 32].copy_from_slice(&v.to_big_endian());
            }
            op::MSTORE8 => {
                let (off, v) = (frame.pop()?, frame.pop()?);
                let (o, _) = frame.expand(off, Word::one())?;
                frame.memory[o] = v.byte(0);
            }
            op::SLOAD => {
                let key = frame.pop()?;
                frame.push(self.state.sload(&frame.address, &key))?;
            }
            op::SSTORE => {
                if frame.is_static {
                    return Err(Fault::Invalid);
                }
                let (key, value) = (frame.pop()?, frame.pop()?);
                let current = self.state.sload(&frame.address, &key);
                let cost = if current.is_zero() && !value.is_zero() { 20_000 } else { 5_000 };
                frame.charge(cost)?;
                if current != value {
                    self.state.account_mut(frame.address).sstore(key, value);
                    let (depth, contract) = (frame.depth, frame.code_address);
                    self.rec.emit(
                        EventKind::StorageChanged,
                        pc,
                        depth,
                        contract,
                        EventDetail::Storage {
                            key,
                            old: current,
                            new: value,
                        },
                    );
                }
            }
            op::JUMP => {
                let dest = frame.pop()?;
                frame.pc = jump_target(frame, dest)?;
            }
            op::JUMPI => {
                let (dest, cond) = (frame.pop()?, frame.pop()?);
                if !cond.is_zero() {
                    frame.pc = jump_target(frame, dest)?;
                }
            }
            op::PC => frame.push(Word::from(pc))?,
            op::MSIZE => {
                let n = frame.memory.len();
                frame.push(Word::from(n))?;
            }
            op::GAS => {
                let g = frame.gas;
                frame.push(Word::from(g))?;
            }
            op::JUMPDEST => {}
            op::PUSH1..=op::PUSH32 => {
                let n = immediate_len(opcode);
                let mut buf = [0u8; 32];
                for i in 0..n {
                    buf[32 - n + i] = frame.code.get(pc + 1 + i).copied().unwrap_or(0);
                }
                frame.push(Word::from_big_endian(&buf))?;
            }
            op::DUP1..=op::DUP16 => {
                let n = (opcode - op::DUP1) as usize + 1;
                let v = frame.stack[frame.stack.len() - n];
                frame.push(v)?;
            }
            op::SWAP1..=op::SWAP16 => {
                let n = (opcode - op::SWAP1) as usize + 1;
                let top = frame.stack.len() - 1;
                frame.stack.swap(top, top - n);
            }
            op::LOG0..=op::LOG4 => {
                if frame.is_static {
                    return Err(Fault::Invalid);
                }
                let topics = (opcode - op::LOG0) as usize;
                let (off, len) = (frame.pop()?, frame.pop()?);
                for _ in 0..topics {
                    frame.pop()?;
                }
                frame.expand(off, len)?;
            }
            op::CREATE | op::CREATE2 => {
                if frame.is_static {
                    return Err(Fault::Invalid);
                }
                let (value, off, len) = (frame.pop()?, frame.pop()?, frame.pop()?);
                let salt = if opcode == op::CREATE2 {
                    Some(frame.pop()?)
                } else {
                    None
                };
                let (o, l) = frame.expand(off, len)?;
                let init_code = frame.mem_slice(o, l).to_vec();
                return Ok(Step::Create(CreateRequest {
                    value,
                    init_code,
                    salt,
                    call_pc: pc,
                }));
            }
            op::CALL | op::CALLCODE | op::DELEGATECALL | op::STATICCALL => {
                let gas_arg = frame.pop()?;
                let target = Address::from_word(frame.pop()?);
                let value = if matches!(opcode, op::CALL | op::CALLCODE) {
                    frame.pop()?
                } else {
                    Word::zero()
                };
                let (in_off, in_len, out_off, out_len) =
                    (frame.pop()?, frame.pop()?, frame.pop()?, frame.pop()?);
                if opcode == op::CALL && frame.is_static && !value.is_zero() {
                    return Err(Fault::Invalid);
                }
                if !value.is_zero() {
                    frame.charge(9_000)?;
                }
                let (io, il) = frame.expand(in_off, in_len)?;
                let (oo, ol) = frame.expand(out_off, out_len)?;
                let requested = to_u64_sat(gas_arg).min(frame.gas);
                frame.gas -= requested;
                let gas = if value.is_zero() {
                    requested
                } else {
                    requested + CALL_STIPEND
                };
                let input = frame.mem_slice(io, il).to_vec();
                return Ok(Step::Call(CallRequest {
                    opcode,
                    target,
                    value,
                    input,
                    gas,
                    charged: requested,
                    out_offset: oo,
                    out_len: ol,
                    call_pc: pc,
                }));
            }
            op::RETURN | op::REVERT => {
                let (off, len) = (frame.pop()?, frame.pop()?);
                let (o, l) = frame.expand(off, len)?;
                let output = frame.mem_slice(o, l).to_vec();
                let status = if opcode == op::RETURN {
                    TxStatus::Success
                } else {
                    TxStatus::Reverted
                };
                return Ok(Step::Halt { status, output });
            }
            op::SELFDESTRUCT => {
                if frame.is_static {
                    return Err(Fault::Invalid);
                }
                let beneficiary = Address::from_word(frame.pop()?);
                let me = frame.address;
                let balance = self.state.balance(&me);
                self.state.transfer(me, beneficiary, balance);
                if !balance.is_zero() {
                    let (depth, contract) = (frame.depth, frame.code_address);
                    self.rec.emit(
                        EventKind::EtherTransfer,
                        pc,
                        depth,
                        contract,
                        EventDetail::Transfer {
                            to: beneficiary,
                            value: balance,
                        },
                    );
                }
                // Destruction is applied immediately; frames already running keep their code.
                let acct = self.state.account_mut(me);
                acct.code = Arc::from(Vec::new());
                acct.storage.clear();
                return Ok(Step::Halt {
                    status: TxStatus::Success,
                    output: Vec::new(),
                });
            }
            _ => return Err(Fault::Invalid),
        }
        Ok(Step::Continue)
    }
}

fn jump_target(frame: &Frame, dest: Word) -> Result<usize, Fault> {
    if dest >= Word::from(frame.code.len()) {
        return Err(Fault::Invalid);
    }
    let d = dest.low_u64() as usize;
    if frame.jumpdests[d] {
        Ok(d)
    } else {
        Err(Fault::Invalid)
    }
}

fn contains_subslice(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}
