pub mod abi;
pub mod asm;
pub mod cfg;
pub mod evm;
pub mod fixtures;
pub mod fuzzer;
pub mod harness;
pub mod opcode;
pub mod oracles;

pub use evm::{
    deploy_contract, execute_transaction, Address, AgentPolicy, BlockContext, DeployMode, EventKind,
    ExecutionEvent, ExecutionTrace, Transaction, TxStatus, Word, WorldState,
};
