use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evmfuzz_core::cfg::{count_critical, critical_sites, disassemble, distance_map, Cfg};
use evmfuzz_core::fixtures;
use evmfuzz_core::fuzzer::{Budget, CampaignConfig, FuzzError, Strategy};
use evmfuzz_core::harness::{
    bench, emit_report, labels_of, load_benchmark, parse_hex, run_benchmark, score_results, write_bundle,
    BenchmarkReport, HarnessError, Metrics, TargetBundle,
};

#[derive(Parser)]
#[command(name = "evmfuzz", version, about = "Grey-box and directed fuzzing of EVM bytecode")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CampaignArgs {
    /// blackbox, greybox or directed
    #[arg(long, default_value = "directed")]
    strategy: Strategy,
    /// Executions (`N`, `Niter`) or wall-clock seconds (`Ns`)
    #[arg(long, default_value = "10000iter")]
    budget: Budget,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    /// Output directory for report.json, coverage.csv and bugs.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Fuzz a single bundle
    Run {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        campaign: CampaignArgs,
    },
    /// Fuzz every bundle under a directory and score against labels
    Bench {
        #[arg(long)]
        dir: PathBuf,
        #[command(flatten)]
        campaign: CampaignArgs,
    },
    /// Re-score a saved report against the labels of a benchmark directory
    Score {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Export the CFG as DOT and the distance map as CSV
    Cfg {
        /// Hex bytecode file
        #[arg(long)]
        code: PathBuf,
        #[arg(long)]
        dot: Option<PathBuf>,
        #[arg(long)]
        distances: Option<PathBuf>,
    },
    /// Write the built-in fixture contracts as bundles
    Fixtures {
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Io(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Campaign {
                source: FuzzError::ZeroBudget,
                ..
            } => Failure::Usage(e.to_string()),
            other => Failure::Io(other.to_string()),
        }
    }
}

fn config(args: &CampaignArgs) -> Result<CampaignConfig, Failure> {
    if matches!(args.budget, Budget::Iterations(0) | Budget::Seconds(0)) {
        return Err(Failure::Usage("budget must be positive".into()));
    }
    Ok(CampaignConfig::new(args.strategy, args.budget, args.rng_seed))
}

fn summarize(report: &BenchmarkReport) {
    for r in &report.results {
        println!(
            "{}: {} executions, coverage {:.3}, {} finding(s)",
            r.contract,
            r.report.executions,
            r.report.final_coverage,
            r.report.findings.len()
        );
        for f in &r.report.findings {
            println!("  {} ({}) at pc {} after {} executions", f.fine, f.taxonomy, f.pc, f.iteration);
        }
    }
    for (name, reason) in &report.skipped {
        println!("{name}: skipped ({reason})");
    }
    if let Some(metrics) = &report.metrics {
        print_metrics(metrics.iter().map(|(c, m)| (c.to_string(), *m)));
    }
}

fn print_metrics(rows: impl Iterator<Item = (String, Metrics)>) {
    println!("class,tp,fp,fn,precision,recall,f1");
    for (class, m) in rows {
        println!("{class},{},{},{},{:.3},{:.3},{:.3}", m.tp, m.fp, m.fn_, m.precision, m.recall, m.f1);
    }
}

fn read_code(path: &Path) -> Result<Vec<u8>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    parse_hex(&text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { bundle, campaign } => {
            let config = config(&campaign)?;
            let bundle = TargetBundle::load(&bundle)?;
            let result = run_benchmark(std::slice::from_ref(&bundle), &config)
                .pop()
                .expect("one bundle in, one result out")?;
            let labels = labels_of(std::slice::from_ref(&bundle));
            let mut report = BenchmarkReport {
                results: vec![result],
                skipped: vec![],
                metrics: None,
            };
            if !labels.is_empty() {
                report.metrics = Some(score_results(&report.findings_by_contract(), &labels));
            }
            emit_report(&report, &campaign.out)?;
            summarize(&report);
        }
        Command::Bench { dir, campaign } => {
            let config = config(&campaign)?;
            let benchmark = load_benchmark(&dir)?;
            let report = bench(&benchmark, &config);
            emit_report(&report, &campaign.out)?;
            summarize(&report);
        }
        Command::Score { report, labels } => {
            let report = BenchmarkReport::load(&report)?;
            let labels = labels_of(&load_benchmark(&labels)?.bundles);
            let metrics = score_results(&report.findings_by_contract(), &labels);
            print_metrics(metrics.iter().map(|(c, m)| (c.to_string(), *m)));
        }
        Command::Cfg { code, dot, distances } => {
            let code = read_code(&code)?;
            let instructions = disassemble(&code);
            let cfg = Cfg::from_code(&code);
            let sites = critical_sites(&instructions);
            if let Some(path) = dot {
                write_file(&path, &cfg.to_dot())?;
            }
            if let Some(path) = distances {
                write_file(&path, &distance_map(&cfg, &sites).to_csv())?;
            }
            println!("{} instructions, {} blocks", instructions.len(), cfg.blocks.len());
            for (mnemonic, n) in count_critical(&instructions) {
                println!("{mnemonic}: {n}");
            }
        }
        Command::Fixtures { out } => {
            for fixture in fixtures::all() {
                let dir = write_bundle(&out, &fixture)?;
                println!("{}", dir.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DOGE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
