//! Command-line driver: ingest triples, build task datasets, train the
//! embedding and policy models, check single claims, and run the full
//! evaluation grid.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or input error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use factpath_core::config::RunConfig;
use factpath_core::env::Env;
use factpath_core::error::Error;
use factpath_core::eval::{
    run_experiment, sanitize_name, train_task_embeddings, train_task_policy, write_report, TaskSpec,
};
use factpath_core::kg::{generate_negatives, write_claims, KnowledgeGraph, Triple};
use factpath_core::policy::PolicyParams;
use factpath_core::reasoner::{check_claim, render_path};
use factpath_core::ComplexEmbedding;

#[derive(Parser)]
#[command(
    name = "factpath",
    version,
    about = "Fact checking over knowledge graphs"
)]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for model files and reports (overrides the config file).
    #[arg(long, global = true)]
    model_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a triple file; write vocabulary dumps and print
    /// graph counts.
    Ingest {
        /// Triple file (head<TAB>relation<TAB>tail per line).
        #[arg(long)]
        triples: Option<PathBuf>,
        /// Output directory for vocabulary dumps (defaults to the model dir).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Extract a reasoning task and write train/test claim files with
    /// generated negatives.
    GenerateNegatives {
        #[arg(long)]
        triples: Option<PathBuf>,
        /// Query relation label.
        #[arg(long)]
        relation: String,
        /// Negatives per positive (overrides the config file).
        #[arg(long)]
        ratio: Option<u32>,
    },
    /// Train ComplEx embeddings for each configured task (or one relation).
    TrainEmbeddings {
        #[arg(long)]
        triples: Option<PathBuf>,
        /// Train only the task for this relation label.
        #[arg(long)]
        relation: Option<String>,
    },
    /// Train the walk policy for each configured task (or one relation).
    /// Requires embeddings trained beforehand.
    TrainPolicy {
        #[arg(long)]
        triples: Option<PathBuf>,
        #[arg(long)]
        relation: Option<String>,
    },
    /// Check a single claim and print the verdict with its evidential paths.
    Check {
        head: String,
        relation: String,
        tail: String,
        /// Beam width.
        #[arg(long, default_value_t = 10)]
        width: usize,
        /// Task whose models to use (defaults to the claim's relation).
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        triples: Option<PathBuf>,
    },
    /// Evaluate every configured task at every beam width and write the
    /// grid report.
    Evaluate {
        #[arg(long)]
        triples: Option<PathBuf>,
        /// Train missing models instead of failing.
        #[arg(long)]
        train_missing: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// Config precedence: command-line flag > config file > default.
fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::paper_defaults(),
    };
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(model_dir) = &cli.model_dir {
        config.output.model_dir = model_dir.clone();
    }
    Ok(config)
}

fn load_graph(config: &RunConfig, flag: &Option<PathBuf>) -> Result<KnowledgeGraph, Error> {
    let path = flag
        .clone()
        .or_else(|| config.data.triples.clone())
        .ok_or_else(|| {
            Error::Config("no triples file given (--triples or data.triples)".to_string())
        })?;
    KnowledgeGraph::load(path)
}

/// Task specs from an explicit relation flag, or from the config file.
fn resolve_specs(config: &RunConfig, relation: &Option<String>) -> Result<Vec<TaskSpec>, Error> {
    match relation {
        Some(label) => Ok(vec![TaskSpec {
            name: label.clone(),
            relations: vec![label.clone()],
        }]),
        None => config.task_specs(),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let config = load_config(&cli)?;
    let model_dir = config.output.model_dir.clone();
    match &cli.command {
        Command::Ingest { triples, out_dir } => {
            let graph = load_graph(&config, triples)?;
            let out = out_dir.clone().unwrap_or_else(|| model_dir.clone());
            graph.write_vocab(&out)?;
            println!(
                "entities={} relations={} facts={}",
                graph.entity_count(),
                graph.base_relation_count(),
                graph.base_fact_count()
            );
            Ok(())
        }
        Command::GenerateNegatives {
            triples,
            relation,
            ratio,
        } => {
            let graph = load_graph(&config, triples)?;
            let query = graph.resolve_relation(relation)?;
            let ratio = ratio.unwrap_or(config.data.negative_ratio);
            let task =
                factpath_core::extract_task(&graph, query, config.data.split_ratio, config.seed())?;
            let task = generate_negatives(&task, &graph, ratio, config.seed())?;
            let task_dir = model_dir.join(sanitize_name(relation));
            std::fs::create_dir_all(&task_dir).map_err(|e| Error::io(&task_dir, e))?;
            write_claims(task_dir.join("train.tsv"), &task.train, &graph)?;
            write_claims(task_dir.join("test.tsv"), &task.test, &graph)?;
            println!(
                "task={} train={} test={}",
                relation,
                task.train.len(),
                task.test.len()
            );
            Ok(())
        }
        Command::TrainEmbeddings { triples, relation } => {
            let graph = load_graph(&config, triples)?;
            let experiment = config.experiment_config()?;
            for spec in resolve_specs(&config, relation)? {
                let path = train_task_embeddings(&graph, &spec, &experiment, &model_dir)?;
                println!("task={} embeddings={}", spec.name, path.display());
            }
            Ok(())
        }
        Command::TrainPolicy { triples, relation } => {
            let graph = load_graph(&config, triples)?;
            let experiment = config.experiment_config()?;
            for spec in resolve_specs(&config, relation)? {
                let path = train_task_policy(&graph, &spec, &experiment, &model_dir)?;
                println!("task={} policy={}", spec.name, path.display());
            }
            Ok(())
        }
        Command::Check {
            head,
            relation,
            tail,
            width,
            task,
            triples,
        } => {
            let graph = load_graph(&config, triples)?;
            let claim = Triple::new(
                graph.resolve_entity(head)?,
                graph.resolve_relation(relation)?,
                graph.resolve_entity(tail)?,
            );
            let spec = match task {
                Some(name) => config
                    .task_specs()?
                    .into_iter()
                    .find(|s| s.name == *name)
                    .ok_or_else(|| Error::Config(format!("task {name:?} is not configured")))?,
                None => TaskSpec {
                    name: relation.clone(),
                    relations: vec![relation.clone()],
                },
            };
            let mut removed = Vec::new();
            for label in &spec.relations {
                let r = graph.resolve_relation(label)?;
                removed.push(r);
                removed.push(graph.inverse_of(r));
            }
            let pruned = graph.pruned(&removed);
            let task_dir = model_dir.join(sanitize_name(&spec.name));
            let emb = ComplexEmbedding::load(task_dir.join("embeddings.bin"))?;
            emb.ensure_shape(pruned.entity_count(), pruned.relation_count(), None)?;
            let experiment = config.experiment_config()?;
            let env = Env {
                graph: &pruned,
                emb: &emb,
                max_steps: experiment.max_steps,
            };
            let params = PolicyParams::load(task_dir.join("policy.bin"))?;
            params.ensure_shape(env.state_dim(), pruned.relation_count())?;
            let verdict = check_claim(claim, &params, &env, *width)?;

            println!("Claim: {head} {relation} {tail}");
            println!(
                "Verdict: {} (winner: {}, weight {:.4})",
                if verdict.label { "TRUE" } else { "FALSE" },
                pruned.entity_label(verdict.winner),
                verdict.vote_weights[&verdict.winner],
            );
            let mut paths = verdict.paths.clone();
            paths.sort_by(|a, b| b.weight.total_cmp(&a.weight));
            for path in &paths {
                println!(
                    "Path: {}  [weight {:.4}]",
                    render_path(path, &pruned),
                    path.weight
                );
            }
            Ok(())
        }
        Command::Evaluate {
            triples,
            train_missing,
        } => {
            let graph = load_graph(&config, triples)?;
            let specs = config.task_specs()?;
            let experiment = config.experiment_config()?;
            let reports = run_experiment(&graph, &specs, &experiment, &model_dir, *train_missing)?;
            let report_path = model_dir.join("report.tsv");
            write_report(&report_path, &reports)?;
            for r in &reports {
                println!(
                    "task={} size={} width={} hits={:.3} voting_acc={:.3}",
                    r.task, r.dataset_size, r.beam_width, r.hits, r.voting_accuracy
                );
            }
            println!("report written to {}", report_path.display());
            Ok(())
        }
    }
}
