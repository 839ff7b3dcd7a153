//! Power schedule: seed energy and energy-proportional selection.

use std::collections::BTreeSet;

use rand::Rng;

use super::{FuzzError, Seed, Strategy};
use crate::cfg::DistanceMap;
use crate::evm::{Address, ExecutionTrace};

/// Code covered so far in the target contract.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverageState {
    pub covered_pcs: BTreeSet<usize>,
    pub covered_edges: BTreeSet<(usize, usize)>,
    pub total_instructions: usize,
}

impl CoverageState {
    pub fn new(total_instructions: usize) -> Self {
        CoverageState {
            total_instructions,
            ..Default::default()
        }
    }

    pub fn new_edges(&self, trace: &ExecutionTrace) -> usize {
        trace
            .dynamic_edges
            .iter()
            .filter(|e| !self.covered_edges.contains(e))
            .count()
    }

    pub fn record(&mut self, trace: &ExecutionTrace, target: &Address) {
        self.covered_pcs.extend(trace.pcs_of(target));
        self.covered_edges.extend(trace.dynamic_edges.iter().copied());
    }

    pub fn ratio(&self) -> f64 {
        if self.total_instructions == 0 {
            return 0.0;
        }
        (self.covered_pcs.len() as f64 / self.total_instructions as f64).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub energy: f64,
    pub new_edges: usize,
    pub d_min: Option<u32>,
}

/// Directed bonus for a minimum distance; zero when nothing is reachable.
pub fn directed_bonus(d_min: Option<u32>, weight: f64) -> f64 {
    d_min.map_or(0.0, |d| weight / (1.0 + d as f64))
}

/// Energy of a freshly executed input, before its coverage is recorded.
pub fn score_seed(
    strategy: Strategy,
    trace: &ExecutionTrace,
    coverage: &CoverageState,
    dmap: &DistanceMap,
    target: &Address,
    bonus_weight: f64,
) -> Score {
    let new_edges = coverage.new_edges(trace);
    let d_min = dmap.min_over(trace.pcs_of(target));
    let energy = match strategy {
        Strategy::BlackBox => 1.0,
        Strategy::GreyBox => 1.0 + new_edges as f64,
        Strategy::DirectedGreyBox => 1.0 + new_edges as f64 + directed_bonus(d_min, bonus_weight),
    };
    Score {
        energy,
        new_edges,
        d_min,
    }
}

/// Roulette selection; equal energies favour the most recent seed.
pub fn select_seed<R: Rng + ?Sized>(queue: &[Seed], rng: &mut R) -> Result<usize, FuzzError> {
    if queue.is_empty() {
        return Err(FuzzError::EmptyQueue);
    }
    let mut order: Vec<usize> = (0..queue.len()).collect();
    order.sort_by(|&a, &b| {
        queue[b]
            .energy
            .total_cmp(&queue[a].energy)
            .then(queue[b].created_at.cmp(&queue[a].created_at))
    });
    let total: f64 = queue.iter().map(|s| s.energy).sum();
    if total <= 0.0 {
        return Ok(order[0]);
    }
    let mut r = rng.gen::<f64>() * total;
    for &i in &order {
        r -= queue[i].energy;
        if r < 0.0 {
            return Ok(i);
        }
    }
    Ok(*order.last().expect("non-empty"))
}
