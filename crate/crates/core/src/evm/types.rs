use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use primitive_types::U256;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::word::keccak256;

/// A 256-bit EVM word. All arithmetic on it is modulo 2^256.
pub type Word = U256;

/// Maximum call depth; entering a frame deeper than this aborts the transaction.
pub const CALL_DEPTH_LIMIT: usize = 1024;

/// Gas forwarded for free with every value-bearing call.
pub const CALL_STIPEND: u64 = 2300;

/// 20-byte account identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; 20]);

impl Address {
    pub const ZERO: Address = Address([0u8; 20]);

    /// Low-order address with the given numeric value (handy for fixtures).
    pub const fn from_low_u64(v: u64) -> Self {
        let b = v.to_be_bytes();
        let mut out = [0u8; 20];
        let mut i = 0;
        while i < 8 {
            out[12 + i] = b[i];
            i += 1;
        }
        Address(out)
    }

    /// Truncates a word to its low 20 bytes.
    pub fn from_word(w: Word) -> Self {
        let buf = w.to_big_endian();
        let mut out = [0u8; 20];
        out.copy_from_slice(&buf[12..]);
        Address(out)
    }

    pub fn to_word(self) -> Word {
        Word::from_big_endian(&self.0)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    /// Address derived from a creator and its nonce (CREATE semantics, without RLP).
    pub fn derive(creator: Address, nonce: u64) -> Self {
        let mut preimage = Vec::with_capacity(28);
        preimage.extend_from_slice(&creator.0);
        preimage.extend_from_slice(&nonce.to_be_bytes());
        let digest = keccak256(&preimage);
        let mut out = [0u8; 20];
        out.copy_from_slice(&digest[12..]);
        Address(out)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Address {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.strip_prefix("0x").unwrap_or(s);
        let bytes = hex::decode(s).map_err(|e| e.to_string())?;
        let arr: [u8; 20] = bytes
            .try_into()
            .map_err(|v: Vec<u8>| format!("address must be 20 bytes, got {}", v.len()))?;
        Ok(Address(arr))
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The built-in attacker account whose behaviour is set per transaction.
pub const AGENT_ADDRESS: Address = Address::from_low_u64(0xa9e47);
/// Account that deploys contracts and owns them after construction.
pub const DEPLOYER_ADDRESS: Address = Address::from_low_u64(0xde9107e5);
/// Initial balance of the agent: one million ether.
pub fn agent_funds() -> Word {
    Word::exp10(24)
}

/// Hex (de)serialization of byte vectors as `0x…` strings.
pub mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{}", hex::encode(bytes)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s.strip_prefix("0x").unwrap_or(&s)).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Account {
    pub balance: Word,
    pub code: Arc<[u8]>,
    /// Zero-valued slots are never stored.
    pub storage: BTreeMap<Word, Word>,
    pub nonce: u64,
}

impl Account {
    pub fn with_balance(balance: Word) -> Self {
        Account {
            balance,
            ..Default::default()
        }
    }

    pub fn sload(&self, key: &Word) -> Word {
        self.storage.get(key).copied().unwrap_or_default()
    }

    pub fn sstore(&mut self, key: Word, value: Word) {
        if value.is_zero() {
            self.storage.remove(&key);
        } else {
            self.storage.insert(key, value);
        }
    }
}

/// Simulated chain state.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WorldState {
    pub accounts: BTreeMap<Address, Account>,
}

/// Opaque copy of a [`WorldState`] taken by [`WorldState::snapshot`].
#[derive(Debug, Clone)]
pub struct Snapshot(WorldState);

impl WorldState {
    /// Empty chain with the pre-funded agent and the deployer account.
    pub fn new() -> Self {
        let mut s = WorldState::default();
        s.accounts
            .insert(AGENT_ADDRESS, Account::with_balance(agent_funds()));
        s.accounts.insert(DEPLOYER_ADDRESS, Account::default());
        s
    }

    pub fn account(&self, addr: &Address) -> Option<&Account> {
        self.accounts.get(addr)
    }

    pub fn account_mut(&mut self, addr: Address) -> &mut Account {
        self.accounts.entry(addr).or_default()
    }

    pub fn exists(&self, addr: &Address) -> bool {
        self.accounts.contains_key(addr)
    }

    pub fn balance(&self, addr: &Address) -> Word {
        self.account(addr).map(|a| a.balance).unwrap_or_default()
    }

    pub fn code(&self, addr: &Address) -> Arc<[u8]> {
        self.account(addr)
            .map(|a| a.code.clone())
            .unwrap_or_else(|| Arc::from(Vec::new()))
    }

    pub fn sload(&self, addr: &Address, key: &Word) -> Word {
        self.account(addr).map(|a| a.sload(key)).unwrap_or_default()
    }

    /// Faucet credit outside any transaction; the only way total supply grows.
    pub fn mint(&mut self, addr: Address, amount: Word) {
        let acct = self.account_mut(addr);
        acct.balance = acct.balance.saturating_add(amount);
    }

    /// Sum of all balances (saturating).
    pub fn total_balance(&self) -> Word {
        self.accounts
            .values()
            .fold(Word::zero(), |acc, a| acc.saturating_add(a.balance))
    }

    /// Moves `value` between accounts; `false` when the sender is short.
    pub(crate) fn transfer(&mut self, from: Address, to: Address, value: Word) -> bool {
        if value.is_zero() {
            return true;
        }
        if self.balance(&from) < value {
            return false;
        }
        if from != to {
            self.account_mut(from).balance -= value;
            let dst = self.account_mut(to);
            dst.balance = dst.balance.overflowing_add(value).0;
        }
        true
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot(self.clone())
    }

    pub fn restore(snapshot: &Snapshot) -> WorldState {
        snapshot.0.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockContext {
    pub number: u64,
    pub timestamp: u64,
    pub gas_limit: u64,
}

impl Default for BlockContext {
    fn default() -> Self {
        BlockContext {
            number: 1_000_000,
            timestamp: 1_600_000_000,
            gas_limit: 10_000_000,
        }
    }
}

/// How the built-in agent reacts when a contract calls it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum AgentPolicy {
    /// Accepts calls and ether.
    #[default]
    Benign,
    /// Calls back into the caller with the caller's own calldata, up to `max_reentries` times.
    Reentrant { max_reentries: u16 },
    /// Reverts on every call.
    Thrower,
}


impl fmt::Display for AgentPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentPolicy::Benign => f.write_str("benign"),
            AgentPolicy::Reentrant { max_reentries } => write!(f, "reentrant({max_reentries})"),
            AgentPolicy::Thrower => f.write_str("thrower"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub sender: Address,
    pub target: Address,
    pub value: Word,
    #[serde(with = "hex_bytes")]
    pub calldata: Vec<u8>,
    pub gas_limit: u64,
    pub agent_policy: AgentPolicy,
    pub block: BlockContext,
}

impl Transaction {
    /// A zero-value call from the agent with default block context.
    pub fn call(target: Address, calldata: Vec<u8>) -> Self {
        Transaction {
            sender: AGENT_ADDRESS,
            target,
            value: Word::zero(),
            calldata,
            gas_limit: 3_000_000,
            agent_policy: AgentPolicy::Benign,
            block: BlockContext::default(),
        }
    }
}

/// The nine instrumentation event kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Delegate,
    GaslessSend,
    SendOp,
    ExceptionDisorder,
    BlockNumber,
    Timestamp,
    Reentrancy,
    StorageChanged,
    EtherTransfer,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        EventKind::Delegate,
        EventKind::GaslessSend,
        EventKind::SendOp,
        EventKind::ExceptionDisorder,
        EventKind::BlockNumber,
        EventKind::Timestamp,
        EventKind::Reentrancy,
        EventKind::StorageChanged,
        EventKind::EtherTransfer,
    ];

    pub fn short(self) -> &'static str {
        match self {
            EventKind::Delegate => "D",
            EventKind::GaslessSend => "GS",
            EventKind::SendOp => "SO",
            EventKind::ExceptionDisorder => "ED",
            EventKind::BlockNumber => "BN",
            EventKind::Timestamp => "T",
            EventKind::Reentrancy => "R",
            EventKind::StorageChanged => "SC",
            EventKind::EtherTransfer => "ET",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventDetail {
    None,
    Transfer { to: Address, value: Word },
    Storage { key: Word, old: Word, new: Word },
    Call { target: Address },
    Block { value: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionEvent {
    pub kind: EventKind,
    /// Offset in the code of `contract` that produced the event.
    pub pc: usize,
    pub depth: usize,
    /// Account whose code was running.
    pub contract: Address,
    pub detail: EventDetail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TxStatus {
    Success,
    Reverted,
    OutOfGas,
    /// Undefined opcode or any other exceptional halt (bad jump, stack fault, static write).
    InvalidOpcode,
    DepthExceeded,
}

impl TxStatus {
    pub fn is_success(self) -> bool {
        self == TxStatus::Success
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageChange {
    pub address: Address,
    pub key: Word,
    pub old: Word,
    pub new: Word,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub executed_pcs: BTreeMap<Address, BTreeSet<usize>>,
    /// Control transfers `(from_pc, to_pc)` observed in the target contract.
    pub dynamic_edges: BTreeSet<(usize, usize)>,
    pub events: Vec<ExecutionEvent>,
    pub status: TxStatus,
    pub gas_used: u64,
    pub storage_diff: Vec<StorageChange>,
    #[serde(with = "hex_bytes")]
    pub output: Vec<u8>,
}

impl ExecutionTrace {
    /// Executed offsets of one contract's code.
    pub fn pcs_of(&self, addr: &Address) -> impl Iterator<Item = usize> + '_ {
        self.executed_pcs
            .get(addr)
            .into_iter()
            .flat_map(|s| s.iter().copied())
    }

    pub fn has_event(&self, kind: EventKind) -> bool {
        self.events.iter().any(|e| e.kind == kind)
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &ExecutionEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}
