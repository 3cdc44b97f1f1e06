//! `lineage-audit`: governance auditing over model lineage graphs.
//!
//! Subcommands cover the full pipeline (classify, parse-cards, build-graph,
//! audit, horizon, simulate, merge-stats, comparator, generate) plus `run`,
//! which executes a staged JSON config and writes a reproducibility manifest.

mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use stages::{
    AuditKnobs, AuditStage, BuildGraphStage, ClassifyStage, ComparatorStage, Ctx, GenerateStage,
    HorizonStage, MergeStatsStage, ParseCardsStage, PipelineConfig, SimulateStage,
};

#[derive(Parser)]
#[command(
    name = "lineage-audit",
    version,
    about = "Licence-governance auditing over model lineage graphs"
)]
struct Cli {
    /// Directory overriding the shipped rule tables file by file.
    #[arg(long, global = true, env = "LINEAGE_RULES_DIR")]
    rules_dir: Option<PathBuf>,
    /// Worker threads for data-parallel passes (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Classify restrictive only when the score strictly exceeds the
    /// threshold instead of "at least".
    #[arg(long, global = true)]
    strict_threshold: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assign licence intents and restriction scores to repository records.
    Classify {
        #[arg(long)]
        repos: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract typed derivation edges from repository metadata.
    ParseCards {
        #[arg(long)]
        repos: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write parse warnings as JSONL.
        #[arg(long)]
        warnings: Option<PathBuf>,
        /// Resolve type conflicts by type priority across evidence tiers.
        #[arg(long)]
        type_priority_first: bool,
    },
    /// Assemble and save the lineage graph.
    BuildGraph {
        #[arg(long)]
        repos: PathBuf,
        #[arg(long)]
        edges: PathBuf,
        /// Intent CSV from `classify`; omitted = classify inline.
        #[arg(long)]
        intents: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Reject edges referencing unknown nodes instead of stubbing them.
        #[arg(long)]
        strict: bool,
        /// Write a DOT export of the neighborhood around this node.
        #[arg(long)]
        dot_center: Option<String>,
        #[arg(long, default_value_t = 2)]
        dot_radius: u32,
    },
    /// Assign audit states and write per-hop compositions.
    Audit {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        knobs: AuditKnobs,
        /// Also write the 24-combination policy sweep.
        #[arg(long)]
        sweep: bool,
    },
    /// Governance horizon, retention curves and decay fits.
    Horizon {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        knobs: AuditKnobs,
        #[arg(long, default_value_t = 500)]
        resamples: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated extra thresholds, e.g. "0.1,0.2,0.3,0.4".
        #[arg(long)]
        alpha_sweep: Option<String>,
        /// Weight the exponential fit by per-hop counts.
        #[arg(long)]
        weighted: bool,
        /// Retention unit: pair | node.
        #[arg(long, default_value = "pair")]
        unit: String,
    },
    /// Monte-Carlo platform-intervention simulation.
    Simulate {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated designs: inherit, auto, mandatory (or full names).
        #[arg(
            long,
            default_value = "inherit_strictest,auto_propagate,mandatory_declaration"
        )]
        designs: String,
        #[arg(long, default_value = "0,0.25,0.5,0.75,1.0")]
        rates: String,
        #[arg(long, default_value_t = 500)]
        realizations: u32,
        #[arg(long, default_value_t = 30)]
        window: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Restrict inheritance to baseline ancestors (no cascade).
        #[arg(long)]
        no_cascade: bool,
        #[command(flatten)]
        knobs: AuditKnobs,
    },
    /// Merge-conflict causal estimators and balance diagnostics.
    MergeStats {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "raw,psm,ipw,aipw")]
        estimators: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        raw_resamples: u32,
        #[arg(long, default_value_t = 2000)]
        psm_resamples: u32,
        #[arg(long, default_value_t = 800)]
        weighting_resamples: u32,
        #[arg(long, default_value_t = 0.20)]
        caliper: f64,
        /// Caliper in SD-of-logit units instead of the propensity scale.
        #[arg(long)]
        caliper_logit_sd: bool,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// RFC3339 reference time for model ages (default: newest node).
        #[arg(long)]
        reference_time: Option<String>,
    },
    /// Package-registry comparator curve.
    Comparator {
        #[arg(long)]
        releases: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        cutoff: u32,
    },
    /// Generate a seeded synthetic ecosystem with ground truth.
    Generate {
        /// GeneratorSpec JSON document.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Execute a staged pipeline config and write a run manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // ignore failure: the global pool may already exist
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    let ctx = || Ctx::new(cli.rules_dir.as_deref(), cli.strict_threshold);
    match &cli.command {
        Command::Classify { repos, out } => {
            stages::run_classify(
                &ctx()?,
                &ClassifyStage {
                    repos: repos.clone(),
                    out: out.clone(),
                },
            )?;
        }
        Command::ParseCards {
            repos,
            out,
            warnings,
            type_priority_first,
        } => {
            stages::run_parse_cards(
                &ctx()?,
                &ParseCardsStage {
                    repos: repos.clone(),
                    out: out.clone(),
                    warnings: warnings.clone(),
                    type_priority_first: *type_priority_first,
                },
            )?;
        }
        Command::BuildGraph {
            repos,
            edges,
            intents,
            out_dir,
            strict,
            dot_center,
            dot_radius,
        } => {
            stages::run_build_graph(
                &ctx()?,
                &BuildGraphStage {
                    repos: repos.clone(),
                    edges: edges.clone(),
                    intents: intents.clone(),
                    out_dir: out_dir.clone(),
                    strict: *strict,
                    dot_center: dot_center.clone(),
                    dot_radius: Some(*dot_radius),
                },
            )?;
        }
        Command::Audit {
            graph,
            out_dir,
            knobs,
            sweep,
        } => {
            stages::run_audit(
                &ctx()?,
                &AuditStage {
                    graph: graph.clone(),
                    out_dir: out_dir.clone(),
                    knobs: knobs.clone(),
                    sweep: *sweep,
                },
            )?;
        }
        Command::Horizon {
            graph,
            out_dir,
            knobs,
            resamples,
            seed,
            alpha_sweep,
            weighted,
            unit,
        } => {
            let sweep: Vec<f64> = alpha_sweep
                .as_deref()
                .map(|s| {
                    s.split(',')
                        .map(|a| a.trim().parse::<f64>().context("bad alpha"))
                        .collect::<Result<Vec<f64>>>()
                })
                .transpose()?
                .unwrap_or_default();
            stages::run_horizon(
                &ctx()?,
                &HorizonStage {
                    graph: graph.clone(),
                    out_dir: out_dir.clone(),
                    knobs: knobs.clone(),
                    resamples: *resamples,
                    seed: Some(*seed),
                    alpha_sweep: sweep,
                    weighted: *weighted,
                    unit: unit.clone(),
                },
                *seed,
            )?;
        }
        Command::Simulate {
            graph,
            out,
            designs,
            rates,
            realizations,
            window,
            seed,
            no_cascade,
            knobs,
        } => {
            stages::run_simulate(
                &ctx()?,
                &SimulateStage {
                    graph: graph.clone(),
                    out: out.clone(),
                    designs: designs.clone(),
                    rates: rates.clone(),
                    realizations: *realizations,
                    window: *window,
                    seed: Some(*seed),
                    no_cascade: *no_cascade,
                    knobs: knobs.clone(),
                },
                *seed,
            )?;
        }
        Command::MergeStats {
            graph,
            out_dir,
            estimators,
            seed,
            raw_resamples,
            psm_resamples,
            weighting_resamples,
            caliper,
            caliper_logit_sd,
            k,
            reference_time,
        } => {
            stages::run_merge_stats(
                &ctx()?,
                &MergeStatsStage {
                    graph: graph.clone(),
                    out_dir: out_dir.clone(),
                    estimators: estimators.clone(),
                    seed: Some(*seed),
                    raw_resamples: *raw_resamples,
                    psm_resamples: *psm_resamples,
                    weighting_resamples: *weighting_resamples,
                    caliper: *caliper,
                    caliper_logit_sd: *caliper_logit_sd,
                    k: *k,
                    reference_time: reference_time.clone(),
                },
                *seed,
            )?;
        }
        Command::Comparator {
            releases,
            out,
            cutoff,
        } => {
            stages::run_comparator(
                &ctx()?,
                &ComparatorStage {
                    releases: releases.clone(),
                    out: out.clone(),
                    cutoff: *cutoff,
                },
            )?;
        }
        Command::Generate { spec, out_dir } => {
            stages::run_generate(&GenerateStage {
                spec: Some(spec.clone()),
                spec_inline: None,
                out_dir: out_dir.clone(),
            })?;
        }
        Command::Run { config } => return run_pipeline(cli, config),
    }
    Ok(ExitCode::SUCCESS)
}

/// Execute a staged pipeline. Exit codes: 2 for a config schema violation,
/// 1 for a stage failure (the manifest then records completed stages).
fn run_pipeline(cli: &Cli, config_path: &PathBuf) -> Result<ExitCode> {
    let text = match std::fs::read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("config error: {}: {e}", config_path.display());
            return Ok(ExitCode::from(2));
        }
    };
    let config: PipelineConfig = match serde_json::from_str(&text) {
        Ok(c) => c,
        Err(e) => {
            // serde_json anchors the message with "at line L column C"
            eprintln!("config error: {}: {e}", config_path.display());
            return Ok(ExitCode::from(2));
        }
    };
    if let Some(n) = config.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let rules_dir = cli.rules_dir.clone().or(config.rules_dir.clone());
    let ctx = Ctx::new(
        rules_dir.as_deref(),
        cli.strict_threshold || config.strict_threshold,
    )?;
    let config_value: serde_json::Value = serde_json::from_str(&text)?;

    let mut completed = Vec::new();
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut failure: Option<anyhow::Error> = None;

    for (idx, stage) in config.stages.iter().enumerate() {
        let stage_seed = lineage_audit_core::hash::stage_seed(config.seed, idx, stage.name());
        match stage.execute(&ctx, stage_seed) {
            Ok(io) => {
                inputs.extend(io.inputs);
                outputs.extend(io.outputs);
                completed.push(stage.name().to_string());
            }
            Err(e) => {
                failure = Some(e.context(format!("stage {} ({})", idx + 1, stage.name())));
                break;
            }
        }
    }

    inputs.sort();
    inputs.dedup();
    outputs.sort();
    outputs.dedup();
    let manifest = manifest::RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        config: config_value,
        stages_completed: completed,
        inputs: manifest::digest_all(&inputs)?,
        outputs: manifest::digest_all(&outputs)?,
    };
    if let Some(dir) = config.manifest.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(
        &config.manifest,
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;

    match failure {
        Some(e) => {
            eprintln!("error: {e:#}");
            Ok(ExitCode::FAILURE)
        }
        None => Ok(ExitCode::SUCCESS),
    }
}
