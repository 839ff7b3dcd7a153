//! Bug oracles over per-transaction event snapshots.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::evm::{EventKind, ExecutionEvent, Transaction, TxStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FineBugClass {
    Reentrancy,
    DangerousDelegateCall,
    GaslessSend,
    ExceptionDisorder,
    NumberDependency,
    TimestampDependency,
}

/// Coarse label classes used by benchmark ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Taxonomy {
    /// Reentrancy.
    RE,
    /// Mishandled exception.
    ME,
    /// Block-state dependency.
    BD,
}

impl Taxonomy {
    pub const ALL: [Taxonomy; 3] = [Taxonomy::BD, Taxonomy::ME, Taxonomy::RE];
}

impl fmt::Display for Taxonomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Taxonomy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "RE" => Ok(Taxonomy::RE),
            "ME" => Ok(Taxonomy::ME),
            "BD" => Ok(Taxonomy::BD),
            other => Err(format!("unknown bug class `{other}` (expected RE, ME or BD)")),
        }
    }
}

impl FineBugClass {
    pub const ALL: [FineBugClass; 6] = [
        FineBugClass::Reentrancy,
        FineBugClass::DangerousDelegateCall,
        FineBugClass::GaslessSend,
        FineBugClass::ExceptionDisorder,
        FineBugClass::NumberDependency,
        FineBugClass::TimestampDependency,
    ];

    pub fn swc(self) -> &'static str {
        match self {
            FineBugClass::Reentrancy => "SWC-107",
            FineBugClass::DangerousDelegateCall => "SWC-112",
            FineBugClass::GaslessSend | FineBugClass::ExceptionDisorder => "SWC-104",
            FineBugClass::NumberDependency | FineBugClass::TimestampDependency => "SWC-120",
        }
    }

    pub fn taxonomy(self) -> Taxonomy {
        match self {
            FineBugClass::Reentrancy => Taxonomy::RE,
            FineBugClass::DangerousDelegateCall
            | FineBugClass::GaslessSend
            | FineBugClass::ExceptionDisorder => Taxonomy::ME,
            FineBugClass::NumberDependency | FineBugClass::TimestampDependency => Taxonomy::BD,
        }
    }
}

impl fmt::Display for FineBugClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A transaction that can be replayed to reproduce a finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reproducer {
    /// Canonical signature of the called function.
    pub function: String,
    /// Rendered argument values.
    pub args: Vec<String>,
    pub transaction: Transaction,
}

/// Events of one completed transaction, frozen for analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionSnapshot {
    pub events: Vec<ExecutionEvent>,
    pub status: TxStatus,
    pub reproducer: Reproducer,
    /// Campaign iteration that produced the transaction.
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugFinding {
    pub fine: FineBugClass,
    pub taxonomy: Taxonomy,
    pub swc: String,
    pub pc: usize,
    pub reproducer: Reproducer,
    pub iteration: usize,
}

impl BugFinding {
    pub fn new(fine: FineBugClass, pc: usize, reproducer: Reproducer, iteration: usize) -> Self {
        BugFinding {
            fine,
            taxonomy: fine.taxonomy(),
            swc: fine.swc().to_string(),
            pc,
            reproducer,
            iteration,
        }
    }
}

fn first(events: &[ExecutionEvent], kind: EventKind) -> Option<&ExecutionEvent> {
    events.iter().find(|e| e.kind == kind)
}

/// Applies the rule table; at most one finding per fine class.
pub fn detect(snapshot: &TransactionSnapshot) -> Vec<BugFinding> {
    let ev = &snapshot.events;
    let ok = snapshot.status.is_success();
    let has = |k| first(ev, k).is_some();
    let mut hits: Vec<(FineBugClass, usize)> = Vec::new();

    // Effect (ether or storage) inside the re-entered frame or deeper.
    let reentrant_effect = ev.iter().enumerate().find_map(|(i, r)| {
        (r.kind == EventKind::Reentrancy)
            .then(|| {
                ev[i + 1..].iter().find(|e| {
                    matches!(e.kind, EventKind::EtherTransfer | EventKind::StorageChanged) && e.depth >= r.depth
                })
            })
            .flatten()
    });
    if let Some(e) = reentrant_effect {
        hits.push((FineBugClass::Reentrancy, e.pc));
    }
    if let Some(e) = first(ev, EventKind::Delegate) {
        hits.push((FineBugClass::DangerousDelegateCall, e.pc));
    }
    if let Some(e) = first(ev, EventKind::GaslessSend).filter(|_| ok) {
        hits.push((FineBugClass::GaslessSend, e.pc));
    }
    if let Some(e) = first(ev, EventKind::ExceptionDisorder).filter(|_| ok) {
        hits.push((FineBugClass::ExceptionDisorder, e.pc));
    }
    let transfers = has(EventKind::EtherTransfer);
    if let Some(e) = first(ev, EventKind::BlockNumber).filter(|_| transfers) {
        hits.push((FineBugClass::NumberDependency, e.pc));
    }
    if let Some(e) = first(ev, EventKind::Timestamp).filter(|_| transfers) {
        hits.push((FineBugClass::TimestampDependency, e.pc));
    }
    hits.into_iter()
        .map(|(fine, pc)| BugFinding::new(fine, pc, snapshot.reproducer.clone(), snapshot.iteration))
        .collect()
}

/// Unique by `(fine, pc)`, keeping the earliest iteration; ordered by iteration.
pub fn dedupe(findings: impl IntoIterator<Item = BugFinding>) -> Vec<BugFinding> {
    let mut best: BTreeMap<(FineBugClass, usize), BugFinding> = BTreeMap::new();
    for f in findings {
        let key = (f.fine, f.pc);
        match best.get(&key) {
            Some(existing) if existing.iteration <= f.iteration => {}
            _ => {
                best.insert(key, f);
            }
        }
    }
    let mut out: Vec<BugFinding> = best.into_values().collect();
    out.sort_by_key(|f| (f.iteration, f.fine, f.pc));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evm::{Address, EventDetail, Transaction};

    fn event(kind: EventKind, pc: usize, depth: usize) -> ExecutionEvent {
        ExecutionEvent {
            kind,
            pc,
            depth,
            contract: Address::from_low_u64(1),
            detail: EventDetail::None,
        }
    }

    fn snap(events: Vec<ExecutionEvent>, status: TxStatus) -> TransactionSnapshot {
        TransactionSnapshot {
            events,
            status,
            reproducer: Reproducer {
                function: "f()".into(),
                args: vec![],
                transaction: Transaction::call(Address::from_low_u64(1), vec![]),
            },
            iteration: 3,
        }
    }

    fn classes(s: &TransactionSnapshot) -> Vec<FineBugClass> {
        detect(s).into_iter().map(|f| f.fine).collect()
    }

    #[test]
    fn mapping_is_total() {
        let rows: Vec<_> = FineBugClass::ALL.iter().map(|c| (c.swc(), c.taxonomy())).collect();
        assert_eq!(
            rows,
            vec![
                ("SWC-107", Taxonomy::RE),
                ("SWC-112", Taxonomy::ME),
                ("SWC-104", Taxonomy::ME),
                ("SWC-104", Taxonomy::ME),
                ("SWC-120", Taxonomy::BD),
                ("SWC-120", Taxonomy::BD),
            ]
        );
    }

    #[test]
    fn timestamp_with_transfer() {
        let s = snap(vec![event(EventKind::Timestamp, 5, 0), event(EventKind::EtherTransfer, 9, 0)], TxStatus::Success);
        let found = detect(&s);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].fine, FineBugClass::TimestampDependency);
        assert_eq!(found[0].pc, 5);
        assert_eq!(found[0].swc, "SWC-120");
        assert_eq!(found[0].iteration, 3);
    }

    #[test]
    fn lone_sendop_is_benign() {
        assert!(detect(&snap(vec![event(EventKind::SendOp, 1, 0)], TxStatus::Success)).is_empty());
        // storage writes alone do not make block reads dangerous
        let s = snap(vec![event(EventKind::BlockNumber, 1, 0), event(EventKind::StorageChanged, 2, 0)], TxStatus::Success);
        assert!(detect(&s).is_empty());
    }

    #[test]
    fn reentrancy_needs_effect_in_reentered_frame() {
        let with_effect = snap(
            vec![
                event(EventKind::EtherTransfer, 10, 0),
                event(EventKind::Reentrancy, 0, 2),
                event(EventKind::EtherTransfer, 10, 2),
            ],
            TxStatus::Success,
        );
        let found = detect(&with_effect);
        assert_eq!(found[0].fine, FineBugClass::Reentrancy);
        assert_eq!(found[0].pc, 10);
        let shallow_only = snap(
            vec![event(EventKind::Reentrancy, 0, 2), event(EventKind::StorageChanged, 7, 0)],
            TxStatus::Success,
        );
        assert!(!classes(&shallow_only).contains(&FineBugClass::Reentrancy));
        // reverted transactions still count: the attack was executed
        let reverted = snap(
            vec![event(EventKind::Reentrancy, 0, 2), event(EventKind::StorageChanged, 7, 3)],
            TxStatus::Reverted,
        );
        assert_eq!(classes(&reverted), vec![FineBugClass::Reentrancy]);
    }

    #[test]
    fn exception_rules_need_root_success() {
        let evs = vec![event(EventKind::GaslessSend, 4, 0), event(EventKind::ExceptionDisorder, 4, 0)];
        assert_eq!(
            classes(&snap(evs.clone(), TxStatus::Success)),
            vec![FineBugClass::GaslessSend, FineBugClass::ExceptionDisorder]
        );
        assert!(detect(&snap(evs, TxStatus::Reverted)).is_empty());
    }

    #[test]
    fn delegate_and_number() {
        let s = snap(
            vec![
                event(EventKind::Delegate, 3, 0),
                event(EventKind::BlockNumber, 8, 0),
                event(EventKind::EtherTransfer, 9, 0),
            ],
            TxStatus::Reverted,
        );
        assert_eq!(classes(&s), vec![FineBugClass::DangerousDelegateCall, FineBugClass::NumberDependency]);
        assert_eq!(detect(&s), detect(&s.clone()));
    }

    #[test]
    fn dedupe_keeps_earliest() {
        let s = snap(vec![event(EventKind::Delegate, 3, 0)], TxStatus::Success);
        let mut late = detect(&s);
        late[0].iteration = 9;
        let mut early = detect(&s);
        early[0].iteration = 2;
        let mut other_pc = detect(&s);
        other_pc[0].pc = 4;
        let out = dedupe(late.into_iter().chain(early).chain(other_pc));
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].iteration, 2);
        assert_eq!(out[1].pc, 4);
        assert!(dedupe(Vec::new()).is_empty());
    }

    #[test]
    fn taxonomy_parsing() {
        assert_eq!("re".parse::<Taxonomy>().unwrap(), Taxonomy::RE);
        assert!("XX".parse::<Taxonomy>().is_err());
    }
}
