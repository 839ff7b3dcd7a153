//! Benchmark bundles, campaign orchestration, label scoring and report files.
//!
//! A bundle is a directory holding:
//! - `manifest.json`: `{"name", "mode": "creation"|"runtime", "constructor_args": hex, "initial_balance": decimal or 0x-hex}`
//! - `code.hex`: bytecode as hex, optional `0x`, whitespace ignored
//! - `abi.json`: a standard JSON ABI
//! - `labels.json` (optional): taxonomy classes with multiplicity, e.g. `["RE", "RE", "ME"]`

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abi::{parse_abi, Abi, AbiError};
use crate::evm::{deploy_contract, DeployMode, EvmError, Word, WorldState};
use crate::fixtures::Fixture;
use crate::fuzzer::{run_campaign, CampaignConfig, CampaignReport, FuzzError, Strategy, Target};
use crate::oracles::{BugFinding, Taxonomy};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}: no bundles found")]
    EmptyBenchmark(PathBuf),
    #[error("bundle {name}: {reason}")]
    Bundle { name: String, reason: String },
    #[error("bundle {name}: deployment failed: {source}")]
    Deploy { name: String, source: EvmError },
    #[error("bundle {name}: {source}")]
    Campaign { name: String, source: FuzzError },
}

impl HarnessError {
    pub fn is_io(&self) -> bool {
        matches!(self, HarnessError::Io { .. })
    }
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub mode: DeployMode,
    #[serde(default)]
    pub constructor_args: String,
    #[serde(default = "zero_balance")]
    pub initial_balance: String,
}

fn zero_balance() -> String {
    "0".into()
}

/// Decimal, or hex with a `0x` prefix.
pub fn parse_word(s: &str) -> Result<Word, String> {
    let s = s.trim();
    let parsed = match s.strip_prefix("0x") {
        Some(h) => Word::from_str_radix(h, 16).ok(),
        None => Word::from_dec_str(s).ok(),
    };
    parsed.ok_or_else(|| format!("bad number `{s}`"))
}

/// Hex bytes; `0x` prefix and whitespace tolerated.
pub fn parse_hex(s: &str) -> Result<Vec<u8>, String> {
    let compact: String = s.split_whitespace().collect();
    let digits = compact.strip_prefix("0x").unwrap_or(&compact);
    hex::decode(digits).map_err(|e| format!("bad hex: {e}"))
}

#[derive(Debug, Clone)]
pub struct TargetBundle {
    pub name: String,
    pub code: Vec<u8>,
    pub mode: DeployMode,
    pub constructor_args: Vec<u8>,
    pub initial_balance: Word,
    pub abi: Abi,
    pub labels: Option<Vec<Taxonomy>>,
}

impl TargetBundle {
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let fallback_name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let bad = |reason: String| HarnessError::Bundle {
            name: fallback_name.clone(),
            reason,
        };
        let missing = |file: &str| bad(format!("missing {file}"));
        let file = |name: &str| dir.join(name);

        for required in ["manifest.json", "code.hex", "abi.json"] {
            if !file(required).is_file() {
                return Err(missing(required));
            }
        }
        let manifest: Manifest = serde_json::from_str(&read(&file("manifest.json"))?)
            .map_err(|e| bad(format!("manifest.json: {e}")))?;
        let code = parse_hex(&read(&file("code.hex"))?).map_err(|e| bad(format!("code.hex: {e}")))?;
        if code.is_empty() {
            return Err(bad("code.hex: empty bytecode".into()));
        }
        let abi = parse_abi(&read(&file("abi.json"))?).map_err(|e: AbiError| bad(format!("abi.json: {e}")))?;
        let constructor_args =
            parse_hex(&manifest.constructor_args).map_err(|e| bad(format!("constructor_args: {e}")))?;
        let initial_balance = parse_word(&manifest.initial_balance).map_err(|e| bad(format!("initial_balance: {e}")))?;
        let labels = if file("labels.json").is_file() {
            let labels: Vec<Taxonomy> = serde_json::from_str(&read(&file("labels.json"))?)
                .map_err(|e| bad(format!("labels.json: {e}")))?;
            if labels.is_empty() {
                return Err(bad("labels.json: empty label list".into()));
            }
            Some(labels)
        } else {
            None
        };
        Ok(TargetBundle {
            name: manifest.name,
            code,
            mode: manifest.mode,
            constructor_args,
            initial_balance,
            abi,
            labels,
        })
    }

    pub fn deploy(&self) -> Result<Target, HarnessError> {
        let mut state = WorldState::new();
        let address = deploy_contract(&mut state, &self.code, self.mode, &self.constructor_args, self.initial_balance)
            .map_err(|source| HarnessError::Deploy {
                name: self.name.clone(),
                source,
            })?;
        Target::new(state, address, &self.abi).map_err(|source| HarnessError::Campaign {
            name: self.name.clone(),
            source,
        })
    }
}

/// Writes `fixture` as a bundle directory under `root`.
pub fn write_bundle(root: &Path, fixture: &Fixture) -> Result<PathBuf, HarnessError> {
    let dir = root.join(fixture.name);
    create_dir(&dir)?;
    let manifest = Manifest {
        name: fixture.name.to_string(),
        mode: fixture.mode,
        constructor_args: String::new(),
        initial_balance: fixture.endowment.to_string(),
    };
    write(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    write(&dir.join("code.hex"), &format!("{}\n", hex::encode(&fixture.code)))?;
    write(&dir.join("abi.json"), &fixture.abi_json)?;
    let labels = fixture.labels();
    if !labels.is_empty() {
        write(&dir.join("labels.json"), &(serde_json::to_string(&labels).expect("labels serialize") + "\n"))?;
    }
    Ok(dir)
}

#[derive(Debug)]
pub struct Benchmark {
    pub bundles: Vec<TargetBundle>,
    /// Directory name and reason for each bundle that failed to load.
    pub skipped: Vec<(String, String)>,
}

/// Loads every sub-directory of `dir` as a bundle, in name order.
pub fn load_benchmark(dir: &Path) -> Result<Benchmark, HarnessError> {
    let entries = fs::read_dir(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut subdirs: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(HarnessError::EmptyBenchmark(dir.to_path_buf()));
    }
    let mut bundles = Vec::new();
    let mut skipped = Vec::new();
    for sub in subdirs {
        match TargetBundle::load(&sub) {
            Ok(b) => bundles.push(b),
            Err(e) => {
                log::warn!("skipping {}: {e}", sub.display());
                let name = sub.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                skipped.push((name, e.to_string()));
            }
        }
    }
    Ok(Benchmark { bundles, skipped })
}

/// Per-class confusion counts and derived scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

/// Taxonomy-level matching per contract; unlabeled contracts are not scored.
pub fn score_results(
    findings: &BTreeMap<String, Vec<BugFinding>>,
    labels: &BTreeMap<String, Vec<Taxonomy>>,
) -> BTreeMap<Taxonomy, Metrics> {
    let mut counts: BTreeMap<Taxonomy, (u64, u64, u64)> = Taxonomy::ALL.iter().map(|t| (*t, (0, 0, 0))).collect();
    for (contract, contract_labels) in labels {
        let contract_findings = findings.get(contract).map(Vec::as_slice).unwrap_or(&[]);
        for class in Taxonomy::ALL {
            let l = contract_labels.iter().filter(|t| **t == class).count() as u64;
            let mut distinct: Vec<_> = contract_findings
                .iter()
                .filter(|f| f.taxonomy == class)
                .map(|f| (f.fine, f.pc))
                .collect();
            distinct.sort();
            distinct.dedup();
            let f = distinct.len() as u64;
            let tp = l.min(f);
            let c = counts.get_mut(&class).expect("all classes present");
            c.0 += tp;
            c.1 += f - tp;
            c.2 += l - tp;
        }
    }
    counts
        .into_iter()
        .map(|(class, (tp, fp, fn_))| (class, Metrics::from_counts(tp, fp, fn_)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractResult {
    pub contract: String,
    pub strategy: Strategy,
    pub report: CampaignReport,
}

/// Runs one campaign per bundle in parallel; results keep bundle order.
pub fn run_benchmark(bundles: &[TargetBundle], config: &CampaignConfig) -> Vec<Result<ContractResult, HarnessError>> {
    bundles
        .par_iter()
        .map(|b| {
            let target = b.deploy()?;
            log::info!("fuzzing {} with {}", b.name, config.strategy);
            let report = run_campaign(&target, config).map_err(|source| HarnessError::Campaign {
                name: b.name.clone(),
                source,
            })?;
            Ok(ContractResult {
                contract: b.name.clone(),
                strategy: config.strategy,
                report,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub results: Vec<ContractResult>,
    pub skipped: Vec<(String, String)>,
    /// Present when at least one contract carried labels.
    pub metrics: Option<BTreeMap<Taxonomy, Metrics>>,
}

impl BenchmarkReport {
    pub fn findings_by_contract(&self) -> BTreeMap<String, Vec<BugFinding>> {
        self.results
            .iter()
            .map(|r| (r.contract.clone(), r.report.findings.clone()))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        serde_json::from_str(&read(path)?).map_err(|source| HarnessError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn coverage_csv(results: &[ContractResult]) -> String {
    let mut out = String::from("contract,strategy,tick,coverage\n");
    for r in results {
        for (tick, cov) in &r.report.coverage_curve {
            writeln!(out, "{},{},{},{:.6}", r.contract, r.strategy, tick, cov).expect("string write");
        }
    }
    out
}

pub fn bugs_csv(results: &[ContractResult]) -> String {
    let mut out = String::from("contract,strategy,class,fine,pc,first_hit_tick\n");
    for r in results {
        for f in &r.report.findings {
            writeln!(out, "{},{},{},{},{},{}", r.contract, r.strategy, f.taxonomy, f.fine, f.pc, f.iteration)
                .expect("string write");
        }
    }
    out
}

/// Writes `report.json`, `coverage.csv` and `bugs.csv` into `out`.
pub fn emit_report(report: &BenchmarkReport, out: &Path) -> Result<(), HarnessError> {
    create_dir(out)?;
    let json = serde_json::to_string_pretty(report).expect("reports serialize");
    write(&out.join("report.json"), &(json + "\n"))?;
    write(&out.join("coverage.csv"), &coverage_csv(&report.results))?;
    write(&out.join("bugs.csv"), &bugs_csv(&report.results))?;
    Ok(())
}

/// Label lists of every labeled bundle, keyed by bundle name.
pub fn labels_of(bundles: &[TargetBundle]) -> BTreeMap<String, Vec<Taxonomy>> {
    bundles
        .iter()
        .filter_map(|b| b.labels.clone().map(|l| (b.name.clone(), l)))
        .collect()
}

/// Campaigns over a loaded benchmark, scored against its labels.
pub fn bench(benchmark: &Benchmark, config: &CampaignConfig) -> BenchmarkReport {
    let mut skipped = benchmark.skipped.clone();
    let mut results = Vec::new();
    for (bundle, outcome) in benchmark.bundles.iter().zip(run_benchmark(&benchmark.bundles, config)) {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => skipped.push((bundle.name.clone(), e.to_string())),
        }
    }
    let labels = labels_of(&benchmark.bundles);
    let mut report = BenchmarkReport {
        results,
        skipped,
        metrics: None,
    };
    if !labels.is_empty() {
        report.metrics = Some(score_results(&report.findings_by_contract(), &labels));
    }
    report
}
