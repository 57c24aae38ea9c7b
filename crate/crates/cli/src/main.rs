//! Benchmark harness: adaptive-sampling and pass@1 evaluations, the
//! curation pipeline, answer verification, and plot-data emission.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ttscale_core::curation::{
    apply_difficulty_filter, apply_difficulty_weights, dedup_exact, load_dataset, RolloutStats,
    WeightsConfig,
};
use ttscale_core::report::{emit_plot_data, run_deepconf, run_pass1, EvalConfig, RunReport};
use ttscale_core::seed::derive_seed;
use ttscale_core::verify::{math_equivalent, normalize_math, DEFAULT_REL_TOL};
use ttscale_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ttscale", about = "Test-time-scaling engine and reward toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Confidence-gated parallel reasoning runs.
    Deepconf {
        #[command(subcommand)]
        command: DeepconfCommand,
    },
    /// Dataset evaluations.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// RL data-preparation pipeline.
    Curate {
        #[command(subcommand)]
        command: CurateCommand,
    },
    /// Check one answer against a ground truth.
    Verify {
        #[arg(long)]
        answer: String,
        #[arg(long)]
        truth: String,
    },
    /// Report post-processing.
    Report {
        #[command(subcommand)]
        command: ReportCommand,
    },
}

#[derive(Subcommand)]
enum DeepconfCommand {
    /// Run the engine over a dataset per the config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// pass@1 over n independent generations per problem.
    Pass1 {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum CurateCommand {
    /// Apply the pass-rate filter rules to records with rollout stats.
    Filter {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Assign difficulty mixture weights to records with rollout stats.
    Weights {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Drop duplicate prompts (whitespace-collapsed, casefolded).
    Dedup {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Collect run reports under a directory into a plot-ready CSV.
    PlotData {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
}

fn read_annotated(path: &Path) -> Result<Vec<(serde_json::Value, RolloutStats)>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::Load { line: i + 1, msg: e.to_string() })?;
        let stats = value
            .get("rollouts")
            .cloned()
            .ok_or_else(|| Error::Load { line: i + 1, msg: "missing \"rollouts\" object".into() })?;
        let stats: RolloutStats = serde_json::from_value(stats)
            .map_err(|e| Error::Load { line: i + 1, msg: e.to_string() })?;
        records.push((value, stats));
    }
    Ok(records)
}

fn record_id(value: &serde_json::Value) -> String {
    value.get("id").and_then(|v| v.as_str()).unwrap_or("").to_string()
}

fn write_jsonl(path: &Path, lines: &[serde_json::Value]) -> Result<()> {
    let mut out = String::new();
    for line in lines {
        out.push_str(&serde_json::to_string(line)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn cmd_run_report(report: &RunReport, out_dir: &Path) -> Result<ExitCode> {
    report.write(out_dir)?;
    println!(
        "{} problems, {} failures, {} tokens; report written to {}",
        report.summary.problems,
        report.summary.failures,
        report.summary.tokens_total,
        out_dir.display()
    );
    for (strategy, accuracy) in &report.summary.accuracy {
        println!("  {strategy}: {accuracy:.4}%");
    }
    if report.summary.failures == 0 {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_curate_filter(input: &Path, output: &Path, seed: u64) -> Result<ExitCode> {
    let records = read_annotated(input)?;
    let mut out = Vec::new();
    let mut kept = 0usize;
    for (mut value, stats) in records {
        let record_seed = derive_seed(seed, &["filter", &record_id(&value)]);
        let decision = apply_difficulty_filter(&stats, record_seed, 0.05);
        if decision.keep {
            kept += 1;
        }
        let obj = value.as_object_mut().expect("record is an object");
        obj.insert("keep".into(), serde_json::json!(decision.keep));
        obj.insert("rule".into(), serde_json::to_value(decision.rule)?);
        obj.insert("pass_rate".into(), serde_json::json!(stats.pass_rate));
        out.push(value);
    }
    write_jsonl(output, &out)?;
    println!("{kept} of {} records kept; annotated output written to {}", out.len(), output.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_curate_weights(input: &Path, output: &Path) -> Result<ExitCode> {
    let records = read_annotated(input)?;
    let keyed: Vec<(String, RolloutStats)> =
        records.iter().map(|(v, s)| (record_id(v), s.clone())).collect();
    let weights = apply_difficulty_weights(&keyed, &WeightsConfig::default())?;
    let mut out = Vec::new();
    for ((mut value, _), weight) in records.into_iter().zip(weights) {
        let obj = value.as_object_mut().expect("record is an object");
        obj.insert("weight".into(), serde_json::json!(weight.weight));
        out.push(value);
    }
    write_jsonl(output, &out)?;
    println!("{} records weighted; output written to {}", out.len(), output.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_curate_dedup(input: &Path, output: &Path) -> Result<ExitCode> {
    let records = load_dataset(input)?;
    let survivors = dedup_exact(&records, &[]);
    let values: Vec<serde_json::Value> =
        survivors.iter().map(|r| serde_json::to_value(r)).collect::<std::result::Result<_, _>>()?;
    write_jsonl(output, &values)?;
    println!(
        "{} of {} records kept; output written to {}",
        survivors.len(),
        records.len(),
        output.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(answer: &str, truth: &str) -> Result<ExitCode> {
    let equivalent = math_equivalent(answer, truth, DEFAULT_REL_TOL);
    let out = serde_json::json!({
        "equivalent": equivalent,
        "normalized_answer": normalize_math(answer),
        "normalized_truth": normalize_math(truth),
    });
    println!("{}", serde_json::to_string(&out)?);
    Ok(if equivalent { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_plot_data(input: &Path, output: &Path) -> Result<ExitCode> {
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in std::fs::read_dir(input)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    let mut reports = Vec::new();
    for path in &paths {
        match RunReport::load(path) {
            Ok(r) => reports.push(r),
            Err(_) => continue, // unrelated JSON files are skipped
        }
    }
    let csv = emit_plot_data(&reports)?;
    std::fs::write(output, &csv)?;
    println!("{} rows written to {}", csv.lines().count() - 1, output.display());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Deepconf { command: DeepconfCommand::Run { config } } => {
            let cfg = EvalConfig::load(&config)?;
            let report = run_deepconf(&cfg)?;
            cmd_run_report(&report, &cfg.out_dir)
        }
        Command::Eval { command: EvalCommand::Pass1 { config } } => {
            let cfg = EvalConfig::load(&config)?;
            let report = run_pass1(&cfg)?;
            cmd_run_report(&report, &cfg.out_dir)
        }
        Command::Curate { command } => match command {
            CurateCommand::Filter { input, output, seed } => cmd_curate_filter(&input, &output, seed),
            CurateCommand::Weights { input, output } => cmd_curate_weights(&input, &output),
            CurateCommand::Dedup { input, output } => cmd_curate_dedup(&input, &output),
        },
        Command::Verify { answer, truth } => cmd_verify(&answer, &truth),
        Command::Report { command: ReportCommand::PlotData { input, output } } => {
            cmd_plot_data(&input, &output)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
