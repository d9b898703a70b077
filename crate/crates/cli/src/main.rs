//! Command-line front end: dataset validation, synthetic data generation,
//! experiment runs, report tables, and mix-plan export.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use aaii_core::augment::{plan_to_csv, MixKind};
use aaii_core::eval::EvaluationReport;
use aaii_core::runner::{
    build_mixplan, run_experiment_with_options, validate_manifest, ExperimentConfig,
};
use aaii_core::synthgen::{generate, SynthSpec};

#[derive(Parser)]
#[command(
    name = "aaii",
    about = "Individual acoustic identification: pipeline runner and dataset tools",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanKind {
    Stratified,
    Adversarial,
}

#[derive(Subcommand)]
enum Command {
    /// Check a manifest and its audio files; print a dataset summary.
    Validate {
        /// Path to manifest.csv
        manifest: PathBuf,
    },
    /// Generate a synthetic confounded dataset from a TOML spec.
    Synth {
        /// TOML file describing the synthetic dataset
        specfile: PathBuf,
        /// Output directory for WAV files and manifest.csv
        outdir: PathBuf,
    },
    /// Run every scenario in an experiment config.
    Run {
        /// Experiment TOML config
        config: PathBuf,
        /// Dump each processed clip's log-mel spectrogram as CSV here
        #[arg(long, value_name = "DIR")]
        dump_mel: Option<PathBuf>,
    },
    /// Tabulate the JSON reports under a run directory.
    Report {
        /// Run output directory
        dir: PathBuf,
    },
    /// Emit a mix plan as CSV without running the experiment.
    Mixplan {
        /// Experiment TOML config
        config: PathBuf,
        /// Which plan to build
        #[arg(long)]
        kind: PlanKind,
        /// Scenario name from the config
        #[arg(long)]
        scenario: String,
        /// Write the CSV here instead of stdout
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { manifest } => {
            let summary = validate_manifest(&manifest)
                .with_context(|| format!("validating {}", manifest.display()))?;
            println!(
                "manifest OK: {} individuals, {} clips ({} foreground / {} background), {} Hz, dates {}..{}",
                summary.individuals,
                summary.clips,
                summary.foreground_clips,
                summary.background_clips,
                summary.sample_rate,
                summary.first_date,
                summary.last_date
            );
            Ok(())
        }
        Command::Synth { specfile, outdir } => {
            let text = fs::read_to_string(&specfile)
                .with_context(|| format!("reading {}", specfile.display()))?;
            let spec = SynthSpec::from_toml_str(&text)?;
            let manifest = generate(&spec, &outdir)?;
            println!(
                "generated {} clips for {} individuals under {}",
                manifest.records.len(),
                manifest.individuals.len(),
                outdir.display()
            );
            println!("manifest: {}", outdir.join("manifest.csv").display());
            Ok(())
        }
        Command::Run { config, dump_mel } => {
            let config = ExperimentConfig::from_toml_file(&config)?;
            let outcome = run_experiment_with_options(&config, dump_mel.as_deref())?;
            let mut warned: Vec<&str> = Vec::new();
            for report in &outcome.reports {
                println!(
                    "{:<30} {:<16} macro_auc={:.4}{}{}",
                    report.scenario.name,
                    report.mode.as_str(),
                    report.macro_auc,
                    report
                        .detection_auc
                        .map_or(String::new(), |d| format!(" detection_auc={d:.4}")),
                    report
                        .rmse_shift
                        .map_or(String::new(), |r| format!(" rmse_shift={r:.4}")),
                );
                if !warned.contains(&report.scenario.name.as_str()) {
                    warned.push(&report.scenario.name);
                    for warning in &report.warnings {
                        eprintln!("scenario `{}` warning: {warning}", report.scenario.name);
                    }
                }
            }
            let failures: Vec<_> = outcome
                .summary
                .scenarios
                .iter()
                .filter(|s| !s.ok)
                .collect();
            for failure in &failures {
                eprintln!(
                    "scenario `{}` failed: {}",
                    failure.name,
                    failure.error.as_deref().unwrap_or("unknown error")
                );
            }
            println!("run summary: {}", config.out_dir.join("run_summary.json").display());
            if failures.is_empty() {
                Ok(())
            } else {
                bail!("{} scenario(s) failed", failures.len());
            }
        }
        Command::Report { dir } => {
            let reports = collect_reports(&dir)?;
            if reports.is_empty() {
                bail!("no report_*.json files under {}", dir.display());
            }
            print!("{}", report_table(&reports));
            Ok(())
        }
        Command::Mixplan {
            config,
            kind,
            scenario,
            out,
        } => {
            let config = ExperimentConfig::from_toml_file(&config)?;
            let kind = match kind {
                PlanKind::Stratified => MixKind::Stratified,
                PlanKind::Adversarial => MixKind::Adversarial,
            };
            let plan = build_mixplan(&config, &scenario, kind)?;
            let csv = plan_to_csv(&plan);
            match out {
                Some(path) => {
                    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
                    println!("wrote {} plan entries to {}", plan.entries.len(), path.display());
                }
                None => print!("{csv}"),
            }
            Ok(())
        }
    }
}

fn collect_reports(dir: &Path) -> Result<Vec<EvaluationReport>> {
    let mut reports = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).with_context(|| format!("reading {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("report_") && n.ends_with(".json"))
            {
                let text = fs::read_to_string(&path)?;
                reports.push(EvaluationReport::from_json(&text)?);
            }
        }
    }
    reports.sort_by(|a, b| {
        (a.scenario.name.as_str(), a.mode.as_str()).cmp(&(b.scenario.name.as_str(), b.mode.as_str()))
    });
    Ok(reports)
}

fn report_table(reports: &[EvaluationReport]) -> String {
    let mut rows = vec![vec![
        "scenario".to_string(),
        "mode".to_string(),
        "features".to_string(),
        "aug".to_string(),
        "exbg".to_string(),
        "macro_auc".to_string(),
        "detection".to_string(),
        "rmse_shift".to_string(),
    ]];
    for r in reports {
        rows.push(vec![
            r.scenario.name.clone(),
            r.mode.as_str().to_string(),
            r.feature_kind.as_str().to_string(),
            if r.scenario.use_stratified_augmentation { "yes" } else { "no" }.to_string(),
            if r.scenario.use_explicit_background { "yes" } else { "no" }.to_string(),
            format!("{:.4}", r.macro_auc),
            r.detection_auc.map_or("-".into(), |d| format!("{d:.4}")),
            r.rmse_shift.map_or("-".into(), |v| format!("{v:.4}")),
        ]);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap())
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
