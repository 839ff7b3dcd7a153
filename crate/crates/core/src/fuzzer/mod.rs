//! Campaign engine: corpus, power schedule and the three scheduling strategies.

mod schedule;
mod seed;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use schedule::{directed_bonus, score_seed, select_seed, CoverageState, Score};
pub use seed::{fresh_seed, initial_corpus, mutate_seed, Seed, NUMBER_STEPS, TIMESTAMP_STEPS};

use crate::abi::{Abi, FunctionSpec, ValuePools};
use crate::cfg::{critical_sites, disassemble, distance_map, Cfg, DistanceMap};
use crate::evm::{execute_transaction, Address, WorldState, AGENT_ADDRESS};
use crate::oracles::{detect, dedupe, BugFinding, FineBugClass, TransactionSnapshot};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FuzzError {
    #[error("no fuzzable functions in the ABI")]
    EmptyCorpus,
    #[error("campaign budget must be positive")]
    ZeroBudget,
    #[error("seed queue is empty")]
    EmptyQueue,
    #[error("no contract code at {0:?}")]
    NoCode(Address),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "blackbox")]
    BlackBox,
    #[serde(rename = "greybox")]
    GreyBox,
    #[serde(rename = "directed")]
    DirectedGreyBox,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::BlackBox, Strategy::GreyBox, Strategy::DirectedGreyBox];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::BlackBox => "blackbox",
            Strategy::GreyBox => "greybox",
            Strategy::DirectedGreyBox => "directed",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}` (expected blackbox, greybox or directed)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    Iterations(u64),
    Seconds(u64),
}

impl Budget {
    fn amount(self) -> u64 {
        match self {
            Budget::Iterations(n) | Budget::Seconds(n) => n,
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Iterations(n) => write!(f, "{n}iter"),
            Budget::Seconds(n) => write!(f, "{n}s"),
        }
    }
}

/// Accepts `N`, `Niter` or `Ns`.
impl FromStr for Budget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (num, secs) = if let Some(n) = s.strip_suffix("iter") {
            (n, false)
        } else if let Some(n) = s.strip_suffix('s') {
            (n, true)
        } else {
            (s, false)
        };
        let n: u64 = num.parse().map_err(|_| format!("bad budget `{s}` (expected N, Niter or Ns)"))?;
        Ok(if secs { Budget::Seconds(n) } else { Budget::Iterations(n) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub strategy: Strategy,
    pub budget: Budget,
    pub rng_seed: u64,
    pub mutants_per_cycle: usize,
    pub coverage_sample_interval: u64,
    pub initial_seeds_per_function: usize,
    pub directed_bonus: f64,
    /// End the campaign at the first oracle hit.
    pub stop_after_first_finding: bool,
    pub tx_gas_limit: u64,
}

impl CampaignConfig {
    pub fn new(strategy: Strategy, budget: Budget, rng_seed: u64) -> Self {
        CampaignConfig {
            strategy,
            budget,
            rng_seed,
            mutants_per_cycle: 8,
            coverage_sample_interval: 50,
            initial_seeds_per_function: 2,
            directed_bonus: 10.0,
            stop_after_first_finding: false,
            tx_gas_limit: 3_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    /// `(tick, coverage ratio)`; ticks are iterations or elapsed seconds.
    pub coverage_curve: Vec<(u64, f64)>,
    pub findings: Vec<BugFinding>,
    pub executions: u64,
    pub final_coverage: f64,
    pub first_finding_iteration: Option<u64>,
}

impl CampaignReport {
    pub fn found(&self, fine: FineBugClass) -> bool {
        self.findings.iter().any(|f| f.fine == fine)
    }
}

/// A deployed contract together with its static analysis.
#[derive(Debug, Clone)]
pub struct Target {
    pub address: Address,
    pub state: WorldState,
    pub functions: Vec<FunctionSpec>,
    pub cfg: Cfg,
    pub sites: Vec<usize>,
}

impl Target {
    pub fn new(state: WorldState, address: Address, abi: &Abi) -> Result<Self, FuzzError> {
        let code = state.code(&address);
        if code.is_empty() {
            return Err(FuzzError::NoCode(address));
        }
        let instructions = disassemble(&code);
        Ok(Target {
            address,
            functions: abi.functions.clone(),
            cfg: Cfg::from_code(&code),
            sites: critical_sites(&instructions),
            state,
        })
    }

    pub fn distance_map(&self) -> DistanceMap {
        distance_map(&self.cfg, &self.sites)
    }
}

enum Clock {
    Iterations { limit: u64, interval: u64 },
    Seconds { start: Instant, limit: Duration, last_tick: u64 },
}

/// Mutable campaign state; single-threaded by construction.
struct Campaign<'a> {
    config: &'a CampaignConfig,
    address: Address,
    cfg: Cfg,
    sites: &'a [usize],
    dmap: DistanceMap,
    coverage: CoverageState,
    findings: BTreeMap<(FineBugClass, usize), BugFinding>,
    curve: Vec<(u64, f64)>,
    executions: u64,
    first_finding: Option<u64>,
    clock: Clock,
}

impl Campaign<'_> {
    fn exhausted(&self) -> bool {
        let stop = self.config.stop_after_first_finding && self.first_finding.is_some();
        stop || match &self.clock {
            Clock::Iterations { limit, .. } => self.executions >= *limit,
            Clock::Seconds { start, limit, .. } => start.elapsed() >= *limit,
        }
    }

    /// Runs one input on `state` and folds its trace into the campaign.
    fn execute(&mut self, seed: &Seed, state: &mut WorldState) -> Option<Score> {
        self.executions += 1;
        let iteration = self.executions;
        let tx = seed.transaction(self.address, self.config.tx_gas_limit);
        let result = execute_transaction(state, &tx);
        let score = match result {
            Ok(trace) => {
                let score = score_seed(
                    self.config.strategy,
                    &trace,
                    &self.coverage,
                    &self.dmap,
                    &self.address,
                    self.config.directed_bonus,
                );
                self.coverage.record(&trace, &self.address);
                if self.cfg.augment_edges(&trace.dynamic_edges) > 0 {
                    self.dmap = distance_map(&self.cfg, self.sites);
                }
                let snapshot = TransactionSnapshot {
                    events: trace.events,
                    status: trace.status,
                    reproducer: seed.reproducer(self.address, self.config.tx_gas_limit),
                    iteration: iteration as usize,
                };
                for f in detect(&snapshot) {
                    self.findings.entry((f.fine, f.pc)).or_insert(f);
                    self.first_finding.get_or_insert(iteration);
                }
                Some(score)
            }
            Err(e) => {
                log::debug!("iteration {iteration}: transaction rejected: {e}");
                None
            }
        };
        self.sample();
        score
    }

    fn sample(&mut self) {
        let ratio = self.coverage.ratio();
        match &mut self.clock {
            Clock::Iterations { limit, interval } => {
                if self.executions.is_multiple_of(*interval) || self.executions == *limit {
                    self.curve.push((self.executions, ratio));
                }
            }
            Clock::Seconds { start, last_tick, .. } => {
                let secs = start.elapsed().as_secs();
                if secs > *last_tick {
                    *last_tick = secs;
                    self.curve.push((secs, ratio));
                }
            }
        }
    }

    fn finish(mut self) -> CampaignReport {
        if let Clock::Seconds { start, last_tick, .. } = &self.clock {
            let secs = start.elapsed().as_secs().max(1);
            if secs > *last_tick || self.curve.is_empty() {
                self.curve.push((secs, self.coverage.ratio()));
            }
        } else if self.curve.last().map(|(t, _)| *t) != Some(self.executions) && self.executions > 0 {
            // Stopped early on the first finding.
            self.curve.push((self.executions, self.coverage.ratio()));
        }
        CampaignReport {
            config: self.config.clone(),
            coverage_curve: self.curve,
            findings: dedupe(self.findings.into_values()),
            executions: self.executions,
            final_coverage: self.coverage.ratio(),
            first_finding_iteration: self.first_finding,
        }
    }
}

/// Fuzzes `target` until the budget runs out.
pub fn run_campaign(target: &Target, config: &CampaignConfig) -> Result<CampaignReport, FuzzError> {
    if config.budget.amount() == 0 || config.coverage_sample_interval == 0 {
        return Err(FuzzError::ZeroBudget);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let pools = ValuePools::new(target.address, AGENT_ADDRESS);
    let mut queue = initial_corpus(&target.functions, config.initial_seeds_per_function, &pools, &mut rng)?;
    let clock = match config.budget {
        Budget::Iterations(n) => Clock::Iterations {
            limit: n,
            interval: config.coverage_sample_interval,
        },
        Budget::Seconds(n) => Clock::Seconds {
            start: Instant::now(),
            limit: Duration::from_secs(n),
            last_tick: 0,
        },
    };
    let mut c = Campaign {
        config,
        address: target.address,
        cfg: target.cfg.clone(),
        sites: &target.sites,
        dmap: target.distance_map(),
        coverage: CoverageState::new(target.cfg.instruction_count()),
        findings: BTreeMap::new(),
        curve: Vec::new(),
        executions: 0,
        first_finding: None,
        clock,
    };
    let mut state = target.state.clone();

    for seed in queue.iter_mut() {
        if c.exhausted() {
            return Ok(c.finish());
        }
        if let Some(s) = c.execute(seed, &mut state) {
            seed.energy = s.energy;
            seed.new_edges = s.new_edges;
            seed.d_min = s.d_min;
        } else {
            seed.energy = 1.0;
        }
    }

    while !c.exhausted() {
        let parent = match config.strategy {
            Strategy::BlackBox => None,
            _ => Some(queue[select_seed(&queue, &mut rng)?].clone()),
        };
        // Parent's energy as it would score now that its edges are known.
        let bar = parent.as_ref().map_or(f64::INFINITY, |p| match config.strategy {
            Strategy::DirectedGreyBox => 1.0 + directed_bonus(p.d_min, config.directed_bonus),
            _ => 1.0,
        });
        let mut best: Option<Seed> = None;
        for _ in 0..config.mutants_per_cycle {
            if c.exhausted() {
                break;
            }
            let mut child = match &parent {
                Some(p) => mutate_seed(p, &mut rng, &pools),
                None => fresh_seed(&target.functions, &pools, &mut rng),
            };
            child.created_at = c.executions as usize + 1;
            let mut scratch = state.clone();
            let Some(score) = c.execute(&child, &mut scratch) else {
                continue;
            };
            child.energy = score.energy;
            child.new_edges = score.new_edges;
            child.d_min = score.d_min;
            if best.as_ref().is_none_or(|b| child.energy > b.energy) {
                best = Some(child.clone());
            }
            if child.energy > bar {
                queue.push(child);
            }
        }
        if let Some(b) = best {
            if !c.exhausted() {
                c.execute(&b, &mut state);
            }
        }
    }
    Ok(c.finish())
}
