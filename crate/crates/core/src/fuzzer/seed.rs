use rand::seq::SliceRandom;
use rand::Rng;

use super::FuzzError;
use crate::abi::{encode_call, generate_value, mutate_value, FunctionSpec, Value, ValuePools};
use crate::evm::{Address, AgentPolicy, BlockContext, Transaction, Word, AGENT_ADDRESS};
use crate::oracles::Reproducer;

pub const TIMESTAMP_STEPS: [u64; 3] = [1, 3600, 86_400];
pub const NUMBER_STEPS: [u64; 2] = [1, 256];

/// Upper bound on payable amounts (1000 ether), well inside the agent's funds.
fn max_value() -> Word {
    Word::exp10(21)
}

fn value_pool() -> [Word; 4] {
    [Word::one(), Word::from(1000), Word::exp10(15), Word::exp10(18)]
}

/// One scheduled input: a call plus its environment and scheduling metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Seed {
    pub function: FunctionSpec,
    pub args: Vec<Value>,
    pub value: Word,
    pub agent_policy: AgentPolicy,
    pub block: BlockContext,
    pub energy: f64,
    pub new_edges: usize,
    pub d_min: Option<u32>,
    pub created_at: usize,
}

impl Seed {
    fn bare(function: FunctionSpec, args: Vec<Value>) -> Self {
        Seed {
            function,
            args,
            value: Word::zero(),
            agent_policy: AgentPolicy::Benign,
            block: BlockContext::default(),
            energy: 0.0,
            new_edges: 0,
            d_min: None,
            created_at: 0,
        }
    }

    pub fn calldata(&self) -> Vec<u8> {
        encode_call(&self.function, &self.args).expect("seed arguments match their function")
    }

    pub fn transaction(&self, target: Address, gas_limit: u64) -> Transaction {
        Transaction {
            sender: AGENT_ADDRESS,
            target,
            value: self.value,
            calldata: self.calldata(),
            gas_limit,
            agent_policy: self.agent_policy,
            block: self.block,
        }
    }

    pub fn reproducer(&self, target: Address, gas_limit: u64) -> Reproducer {
        Reproducer {
            function: self.function.to_string(),
            args: self.args.iter().map(Value::to_string).collect(),
            transaction: self.transaction(target, gas_limit),
        }
    }

    /// Checks the structural invariants every seed must satisfy.
    pub fn is_well_formed(&self) -> bool {
        (self.value.is_zero() || self.function.is_payable())
            && self.energy.is_finite()
            && self.energy >= 0.0
            && self.args.len() == self.function.inputs.len()
            && self.args.iter().zip(&self.function.inputs).all(|(v, p)| v.fits(&p.ty))
            && self.block.number > 0
            && self.block.timestamp > 0
    }
}

fn random_args<R: Rng + ?Sized>(f: &FunctionSpec, rng: &mut R, pools: &ValuePools) -> Vec<Value> {
    f.inputs.iter().map(|p| generate_value(&p.ty, rng, pools)).collect()
}

fn random_payment<R: Rng + ?Sized>(rng: &mut R) -> Word {
    Word::from(rng.gen_range(1..=1_000_000_000_000_000_000u64))
}

/// `per_function` seeds for every state-changing function, in ABI order.
pub fn initial_corpus<R: Rng + ?Sized>(
    specs: &[FunctionSpec],
    per_function: usize,
    pools: &ValuePools,
    rng: &mut R,
) -> Result<Vec<Seed>, FuzzError> {
    let mut out = Vec::new();
    for f in specs.iter().filter(|f| f.is_fuzzable()) {
        for _ in 0..per_function {
            let mut s = Seed::bare(f.clone(), random_args(f, rng, pools));
            if f.is_payable() {
                s.value = random_payment(rng);
            }
            out.push(s);
        }
    }
    if out.is_empty() {
        return Err(FuzzError::EmptyCorpus);
    }
    Ok(out)
}

/// Entirely random input, used by the black-box strategy instead of mutation.
pub fn fresh_seed<R: Rng + ?Sized>(specs: &[FunctionSpec], pools: &ValuePools, rng: &mut R) -> Seed {
    let fuzzable: Vec<&FunctionSpec> = specs.iter().filter(|f| f.is_fuzzable()).collect();
    let f = (*fuzzable.choose(rng).expect("campaigns start with a fuzzable function")).clone();
    let mut s = Seed::bare(f.clone(), random_args(&f, rng, pools));
    if f.is_payable() && rng.gen_bool(0.5) {
        s.value = random_payment(rng);
    }
    s.agent_policy = *POLICY_CYCLE.choose(rng).expect("non-empty");
    s.block.timestamp += rng.gen_range(0..=*TIMESTAMP_STEPS.last().unwrap());
    s.block.number += rng.gen_range(0..=*NUMBER_STEPS.last().unwrap());
    s
}

const POLICY_CYCLE: [AgentPolicy; 3] = [
    AgentPolicy::Benign,
    AgentPolicy::Reentrant { max_reentries: 1 },
    AgentPolicy::Thrower,
];

/// Walks `steps` positions along the policy cycle.
fn advance_policy(p: AgentPolicy, steps: usize) -> AgentPolicy {
    let at = match p {
        AgentPolicy::Benign => 0,
        AgentPolicy::Reentrant { .. } => 1,
        AgentPolicy::Thrower => 2,
    };
    POLICY_CYCLE[(at + steps) % POLICY_CYCLE.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dimension {
    Arg(usize),
    Value,
    Policy,
    Block,
}

fn step(v: u64, delta: u64, up: bool) -> u64 {
    if up {
        v.saturating_add(delta)
    } else {
        v.saturating_sub(delta).max(1)
    }
}

/// Child differing from `seed` in one randomly chosen dimension; scheduling fields reset.
pub fn mutate_seed<R: Rng + ?Sized>(seed: &Seed, rng: &mut R, pools: &ValuePools) -> Seed {
    let mut dims: Vec<Dimension> = (0..seed.args.len()).map(Dimension::Arg).collect();
    if seed.function.is_payable() {
        dims.push(Dimension::Value);
    }
    dims.push(Dimension::Policy);
    dims.push(Dimension::Block);
    let mut child = Seed {
        energy: 0.0,
        new_edges: 0,
        d_min: None,
        ..seed.clone()
    };
    match *dims.choose(rng).expect("policy and block are always available") {
        Dimension::Arg(i) => {
            child.args[i] = mutate_value(&seed.function.inputs[i].ty, &seed.args[i], rng, pools);
        }
        Dimension::Value => {
            let v = seed.value;
            child.value = match rng.gen_range(0..5) {
                0 => v.saturating_add(Word::one()),
                1 => v.saturating_sub(Word::one()),
                2 => v.saturating_mul(Word::from(2)),
                3 => v / 2,
                _ => *value_pool().choose(rng).expect("non-empty"),
            }
            .min(max_value());
        }
        // One or two steps, so every other policy is a single mutation away.
        Dimension::Policy => child.agent_policy = advance_policy(seed.agent_policy, rng.gen_range(1..=2)),
        Dimension::Block => {
            let up = rng.gen_bool(0.5);
            if rng.gen_bool(0.5) {
                let d = *TIMESTAMP_STEPS.choose(rng).expect("non-empty");
                child.block.timestamp = step(seed.block.timestamp, d, up);
            } else {
                let d = *NUMBER_STEPS.choose(rng).expect("non-empty");
                child.block.number = step(seed.block.number, d, up);
            }
        }
    }
    child
}
