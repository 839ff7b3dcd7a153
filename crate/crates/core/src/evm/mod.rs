//! A compact Istanbul-era EVM with a simplified gas schedule and execution instrumentation.

mod interpreter;
mod types;
pub mod word;

pub use interpreter::{deploy_contract, execute_transaction, DeployMode, EvmError, AGENT_REENTRY_GAS};
pub use types::*;

#[cfg(test)]
mod tests;
