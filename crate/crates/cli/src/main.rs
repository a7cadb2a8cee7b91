//! `fedrag` — federated hybrid retrieval + re-rank experiments.
//!
//! Subcommands cover the pipeline stages: `ingest`, `split`, `train`,
//! `evaluate`, `sweep`, `ablate`, `rerank`, `render`. All take an optional
//! `--config <json>` (defaulting to the built-in synthetic fixture),
//! `--seed` override, and `--out` directory. Exit codes: 0 success, 2
//! invalid input/config, 3 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fedrag_core::checkpoint;
use fedrag_core::data::{ItemId, SplitManifest, UserId, UserSequence};
use fedrag_core::error::Error;
use fedrag_core::federation::GlobalModel;
use fedrag_core::harness::{
    ClientChoice, ExperimentConfig, RerankRuntime, ablation, build_chat_client,
    build_score_cache, evaluate_experiment, format_report_text, prepare_dataset, rerank_config,
    run_experiment, sensitivity_sweep, train_models,
};
use fedrag_core::hybrid::read_candidates_jsonl;
use fedrag_core::rerank::{RequestBudget, rerank_batch};
use fedrag_core::text_retriever::{render_passage, render_query};

#[derive(Parser)]
#[command(name = "fedrag", version, about = "Federated hybrid retrieval with chat re-ranking")]
struct Cli {
    /// Experiment config JSON (defaults to the built-in synthetic fixture).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the experiment seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for run artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ClientArg {
    Identity,
    Oracle,
    Transcript,
    Http,
    Adversarial,
}

impl From<ClientArg> for ClientChoice {
    fn from(arg: ClientArg) -> Self {
        match arg {
            ClientArg::Identity => ClientChoice::Identity,
            ClientArg::Oracle => ClientChoice::Oracle,
            ClientArg::Transcript => ClientChoice::Transcript,
            ClientArg::Http => ClientChoice::Http,
            ClientArg::Adversarial => ClientChoice::Adversarial,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load, 5-core filter, and sequence the dataset; print statistics.
    Ingest,
    /// Partition users into clients and write the split manifest.
    Split,
    /// Run federated training; write checkpoints and the metrics log.
    Train,
    /// Full pipeline: train (or load checkpoints) and evaluate.
    Evaluate {
        /// Directory holding id_global/text_global checkpoints to reuse.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Stage-1 lambda sensitivity sweep.
    Sweep {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Four-variant component ablation.
    Ablate {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Re-rank a candidates JSONL file through a chat client.
    Rerank {
        /// Candidate sets as JSON lines ({user_id, items, scores}).
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long, value_enum)]
        client: Option<ClientArg>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        budget: Option<i64>,
    },
    /// Render a query or passage template to stdout.
    Render {
        /// Render the query for this user's history.
        #[arg(long, conflicts_with = "item")]
        user: Option<String>,
        /// Render the passage for this item.
        #[arg(long)]
        item: Option<String>,
    },
}

fn main() -> ExitCode {
    // Die quietly on a closed pipe (e.g. `fedrag sweep | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<Error>()
                .map(|e| if e.is_validation() { 2 } else { 3 })
                .unwrap_or(3);
            ExitCode::from(code)
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_or_train(
    cfg: &ExperimentConfig,
    catalog: &fedrag_core::data::Catalog,
    split: &fedrag_core::data::FederatedSplit,
    checkpoints: &Option<PathBuf>,
) -> anyhow::Result<GlobalModel> {
    match checkpoints {
        Some(dir) => {
            let model = GlobalModel {
                id_params: checkpoint::load_id(&dir.join("id_global"))?,
                text_params: checkpoint::load_text(&dir.join("text_global"))?,
                round: 0,
            };
            if model.id_params.n_items() != catalog.len() {
                return Err(Error::Shape(format!(
                    "checkpoint scores {} items but the catalog has {}",
                    model.id_params.n_items(),
                    catalog.len()
                ))
                .into());
            }
            Ok(model)
        }
        None => {
            let (model, _) = train_models(cfg, catalog, split)?;
            Ok(model)
        }
    }
}

fn ensure_out(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Ingest => {
            let (catalog, split, summary) = prepare_dataset(&cfg)?;
            println!("catalog items:   {}", catalog.len());
            if summary.interactions > 0 {
                println!("interactions:    {} (after 5-core)", summary.interactions);
            }
            println!("sequences:       {}", summary.sequences);
            println!("skipped users:   {}", summary.skipped_users);
            println!("clients:         {}", split.client_count());
            for (k, client) in split.clients.iter().enumerate() {
                println!(
                    "  client {k}: {} users, {} items in scope",
                    client.len(),
                    split.client_item_scope(k).len()
                );
            }
            println!("test users:      {}", split.test_users.len());
        }
        Command::Split => {
            ensure_out(&cli.out)?;
            let (_, split, _) = prepare_dataset(&cfg)?;
            let path = cli.out.join("split_manifest.json");
            SplitManifest::from_split(&split).write(&path)?;
            println!("wrote {}", path.display());
        }
        Command::Train => {
            ensure_out(&cli.out)?;
            let (catalog, split, _) = prepare_dataset(&cfg)?;
            let (model, logs) = train_models(&cfg, &catalog, &split)?;
            SplitManifest::from_split(&split).write(&cli.out.join("split_manifest.json"))?;
            checkpoint::save_id(&model.id_params, &cli.out.join("id_global"))?;
            checkpoint::save_text(&model.text_params, &cli.out.join("text_global"))?;
            let log_path = cli.out.join("metrics.jsonl");
            let mut lines = String::new();
            for log in &logs {
                lines.push_str(&serde_json::to_string(log)?);
                lines.push('\n');
            }
            std::fs::write(&log_path, lines)
                .map_err(|e| Error::io(log_path.display().to_string(), e))?;
            if let Some(last) = logs.last() {
                println!(
                    "trained {} rounds over {} clients (final round: loss_id {:.4}, loss_text {:.4})",
                    model.round,
                    split.client_count(),
                    last.loss_id,
                    last.loss_text
                );
            }
            println!("checkpoints in {}", cli.out.display());
        }
        Command::Evaluate { checkpoints } => {
            ensure_out(&cli.out)?;
            if checkpoints.is_none() {
                let artifact = run_experiment(&cfg, &cli.out)?;
                print!("{}", format_report_text(&artifact.report));
                println!("\nartifacts in {}", artifact.out_dir.display());
            } else {
                let (catalog, split, summary) = prepare_dataset(&cfg)?;
                let model = load_or_train(&cfg, &catalog, &split, checkpoints)?;
                let (report, candidates) =
                    evaluate_experiment(&cfg, &model, &split.test_users, &catalog, summary)?;
                fedrag_core::hybrid::write_candidates_jsonl(
                    &cli.out.join("candidates.jsonl"),
                    &candidates,
                )?;
                write_json(&cli.out.join("report.json"), &report)?;
                std::fs::write(cli.out.join("report.txt"), format_report_text(&report))
                    .map_err(|e| Error::io("report.txt", e))?;
                print!("{}", format_report_text(&report));
            }
        }
        Command::Sweep { checkpoints } => {
            ensure_out(&cli.out)?;
            let (catalog, split, _) = prepare_dataset(&cfg)?;
            let model = load_or_train(&cfg, &catalog, &split, checkpoints)?;
            let cache = build_score_cache(&model, &split.test_users, &catalog, &cfg.render)?;
            let rows = sensitivity_sweep(
                &cache,
                &split.test_users,
                &catalog,
                &cfg.hybrid,
                &cfg.sweep_grid,
            )?;
            write_json(&cli.out.join("sweep.json"), &rows)?;
            println!(
                "{:>8}  {:>8}  {:>8}  {:>8}  {:>8}",
                "lambda", "R@5", "N@5", "R@10", "N@10"
            );
            for row in &rows {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                println!(
                    "{:>8.2}  {:>8}  {:>8}  {:>8}  {:>8}",
                    row.lambda,
                    fmt(row.stage1.recall_at_5),
                    fmt(row.stage1.ndcg_at_5),
                    fmt(row.stage1.recall_at_10),
                    fmt(row.stage1.ndcg_at_10),
                );
            }
        }
        Command::Ablate { checkpoints } => {
            ensure_out(&cli.out)?;
            let (catalog, split, _) = prepare_dataset(&cfg)?;
            let model = load_or_train(&cfg, &catalog, &split, checkpoints)?;
            let cache = build_score_cache(&model, &split.test_users, &catalog, &cfg.render)?;
            let budget = RequestBudget::new(cfg.rerank.budget);
            let client = build_chat_client(&cfg.rerank)?;
            let runtime = RerankRuntime {
                client: client.as_ref(),
                budget: &budget,
                cfg: rerank_config(&cfg.rerank),
                parallelism: cfg.rerank.parallelism,
            };
            let table = ablation(
                &cache,
                &split.test_users,
                &catalog,
                &cfg.hybrid,
                cfg.flags.use_rerank.then_some(&runtime),
            )?;
            write_json(&cli.out.join("ablation.json"), &table)?;
            print!("{}", table.format_text());
        }
        Command::Rerank {
            candidates,
            client,
            threshold,
            budget,
        } => {
            ensure_out(&cli.out)?;
            let mut setup = cfg.rerank.clone();
            if let Some(choice) = client {
                setup.client = (*choice).into();
            }
            if let Some(t) = threshold {
                setup.threshold = *t;
            }
            if let Some(b) = budget {
                setup.budget = *b;
            }

            let (catalog, split, _) = prepare_dataset(&cfg)?;
            let sets = read_candidates_jsonl(candidates)?;
            let mut by_user: std::collections::HashMap<&UserId, &UserSequence> =
                std::collections::HashMap::new();
            for seq in split.test_users.iter().chain(split.clients.iter().flatten()) {
                by_user.insert(&seq.user_id, seq);
            }
            let pairs: Vec<(&UserSequence, &fedrag_core::hybrid::CandidateSet)> = sets
                .iter()
                .map(|set| {
                    by_user.get(&set.user_id).map(|seq| (*seq, set)).ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "candidate user {} not present in the dataset",
                            set.user_id
                        ))
                    })
                })
                .collect::<Result<_, _>>()?;

            let chat = build_chat_client(&setup)?;
            let request_budget = RequestBudget::new(setup.budget);
            let outcomes = rerank_batch(
                &pairs,
                &catalog,
                chat.as_ref(),
                &request_budget,
                &rerank_config(&setup),
                setup.parallelism,
            );
            let out_path = cli.out.join("rerank_outcomes.jsonl");
            let mut lines = String::new();
            let mut counts = (0usize, 0usize, 0usize);
            for outcome in &outcomes {
                match outcome.source {
                    fedrag_core::rerank::RerankSource::Reranked => counts.0 += 1,
                    fedrag_core::rerank::RerankSource::Stage1Fallback => counts.1 += 1,
                    fedrag_core::rerank::RerankSource::Skipped => counts.2 += 1,
                }
                lines.push_str(&serde_json::to_string(outcome)?);
                lines.push('\n');
            }
            std::fs::write(&out_path, lines)
                .map_err(|e| Error::io(out_path.display().to_string(), e))?;
            println!(
                "{} outcomes: {} reranked, {} fallback, {} skipped (budget left: {})",
                outcomes.len(),
                counts.0,
                counts.1,
                counts.2,
                request_budget.remaining()
            );
            println!("wrote {}", out_path.display());
        }
        Command::Render { user, item } => {
            let (catalog, split, _) = prepare_dataset(&cfg)?;
            match (user, item) {
                (Some(user_id), None) => {
                    let wanted = UserId::new(user_id.clone());
                    let seq = split
                        .test_users
                        .iter()
                        .chain(split.clients.iter().flatten())
                        .find(|s| s.user_id == wanted)
                        .ok_or_else(|| Error::InvalidInput(format!("unknown user id {user_id}")))?;
                    println!(
                        "{}",
                        render_query(&seq.history, &catalog, &cfg.render)?.as_str()
                    );
                }
                (None, Some(item_id)) => {
                    let rendered =
                        render_passage(&ItemId::new(item_id.clone()), &catalog, &cfg.render)?;
                    println!("{}", rendered.as_str());
                }
                _ => {
                    return Err(Error::InvalidInput(
                        "render requires exactly one of --user or --item".to_string(),
                    )
                    .into());
                }
            }
        }
    }
    Ok(())
}
