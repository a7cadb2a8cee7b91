//! Config-driven experiment runner.
//!
//! One seed drives everything: dataset generation or partitioning, model
//! init, per-client training streams, and negative sampling all derive from
//! it, so a config file pins an entire run. Reports are written without
//! timestamps or wall times, making reruns byte-comparable; timing goes to
//! the training log instead.

mod eval;
mod report;

pub use eval::{
    AblationRow, AblationTable, OutcomeCounts, PipelineReport, RerankRuntime, ScoreCache,
    StageTwoReport, SweepRow, ablation, build_score_cache, evaluate_cached, evaluate_pipeline,
    outcome_rank, sensitivity_sweep, stage1_candidates,
};
pub use report::{DatasetSummary, ExperimentReport, RunArtifact, format_report_text};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::data::{
    Catalog, FederatedSplit, SplitConfig, SynthConfig, UserSequence, build_sequences,
    five_core_filter, load_interactions, partition_federated, synth_heterogeneous,
};
use crate::data::{DEFAULT_MAX_LEN, SplitManifest};
use crate::error::{Error, Result};
use crate::federation::{ClientRoundLog, GlobalModel, ModelConfig, RoundConfig, run_federated_training};
use crate::hybrid::HybridConfig;
use crate::rerank::{
    AdversarialClient, ChatClient, DomainProfile, HttpChatClient, HttpClientConfig,
    IdentityClient, OracleClient, RequestBudget, RerankConfig, RetryPolicy, TranscriptClient,
};
use crate::rng;
use crate::text_retriever::RenderConfig;

const TAG_DATA: u64 = 0x64_61_74; // "dat"
const TAG_SPLIT: u64 = 0x73_70_6c; // "spl"
const TAG_TRAIN: u64 = 0x74_72_6e; // "trn"

/// Where the corpus comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Seeded heterogeneous generator.
    Synthetic(SynthConfig),
    /// Interactions TSV plus item-metadata JSON lines.
    Files {
        interactions: PathBuf,
        items: PathBuf,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic(SynthConfig::default())
    }
}

/// Chat backend selection for stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClientChoice {
    #[default]
    Identity,
    Oracle,
    Transcript,
    Http,
    Adversarial,
}

/// Stage-2 configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankSetup {
    pub client: ClientChoice,
    /// Hard cap on chat requests for the whole run.
    pub budget: i64,
    pub threshold: f64,
    pub retry: RetryPolicy,
    pub parallelism: usize,
    pub profile: DomainProfile,
    /// Replay file for `client = transcript`.
    pub transcript_path: Option<PathBuf>,
    pub http: HttpClientConfig,
    /// Seed for the adversarial mock.
    pub adversarial_seed: u64,
}

impl Default for RerankSetup {
    fn default() -> Self {
        RerankSetup {
            client: ClientChoice::Identity,
            budget: 10_000,
            threshold: crate::rerank::DEFAULT_MATCH_THRESHOLD,
            retry: RetryPolicy::default(),
            parallelism: 4,
            profile: DomainProfile::default(),
            transcript_path: None,
            http: HttpClientConfig::default(),
            adversarial_seed: 0,
        }
    }
}

/// Component masks, mirroring the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComponentFlags {
    pub use_id: bool,
    pub use_text: bool,
    pub use_rerank: bool,
}

impl Default for ComponentFlags {
    fn default() -> Self {
        ComponentFlags {
            use_id: true,
            use_text: true,
            use_rerank: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Partitioning for file datasets (synthetic datasets carry their own
    /// client structure).
    pub split: SplitConfig,
    /// History cap applied while building sequences from files.
    pub max_len: usize,
    pub model: ModelConfig,
    pub rounds: RoundConfig,
    pub hybrid: HybridConfig,
    pub render: RenderConfig,
    pub rerank: RerankSetup,
    pub flags: ComponentFlags,
    pub sweep_grid: Vec<f64>,
    pub include_sweep: bool,
    pub include_ablation: bool,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        // Desk-scale defaults: the seeded heterogeneous fixture with
        // training settings tuned so a full run finishes in well under five
        // minutes on a laptop CPU. The compact text encoder trains from
        // scratch, so it gets a far larger step size than a pretrained
        // model would.
        let rounds = RoundConfig {
            global_epochs: 3,
            id_cfg: crate::id_retriever::IdTrainConfig {
                learning_rate: 1e-3,
                local_epochs: 10,
                batch_size: 32,
                seed: 0,
                optimizer: crate::optim::Optimizer::adam(),
            },
            text_cfg: crate::text_retriever::TextTrainConfig {
                learning_rate: 5e-3,
                local_epochs: 2,
                batch_size: 32,
                n_negatives: 32,
                // Clients only contrast against items they have seen;
                // never-seen items keep their shared-text scores instead of
                // being memorized away as perpetual negatives.
                negative_scope: crate::text_retriever::NegativeScope::ClientLocal,
                seed: 0,
                optimizer: crate::optim::Optimizer::adam(),
                render: RenderConfig::default(),
            },
            client_parallelism: 4,
        };
        ExperimentConfig {
            dataset: DatasetConfig::default(),
            split: SplitConfig::default(),
            max_len: DEFAULT_MAX_LEN,
            model: ModelConfig::default(),
            rounds,
            hybrid: HybridConfig::default(),
            render: RenderConfig::default(),
            rerank: RerankSetup::default(),
            flags: ComponentFlags::default(),
            sweep_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            include_sweep: false,
            include_ablation: false,
            seed: 7,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.flags.use_id && !self.flags.use_text {
            return Err(Error::Config(
                "at least one of use_id/use_text must be on".to_string(),
            ));
        }
        self.hybrid.validate()?;
        if !(0.0..=1.0).contains(&self.rerank.threshold) || self.rerank.threshold == 0.0 {
            return Err(Error::Config(format!(
                "match threshold {} must lie in (0, 1]",
                self.rerank.threshold
            )));
        }
        if self.rerank.budget < 0 {
            return Err(Error::Config("rerank budget must be >= 0".to_string()));
        }
        if self.rerank.parallelism == 0 {
            return Err(Error::Config("rerank parallelism must be >= 1".to_string()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be >= 1".to_string()));
        }
        if matches!(self.rerank.client, ClientChoice::Transcript)
            && self.rerank.transcript_path.is_none()
        {
            return Err(Error::Config(
                "transcript client requires rerank.transcript_path".to_string(),
            ));
        }
        if self.sweep_grid.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::Config(
                "sweep grid values must lie in [0, 1]".to_string(),
            ));
        }
        Ok(())
    }

    /// Lambda after applying the component masks: a disabled retriever
    /// forces the corresponding endpoint.
    pub fn effective_lambda(&self) -> f64 {
        match (self.flags.use_id, self.flags.use_text) {
            (true, false) => 1.0,
            (false, true) => 0.0,
            _ => self.hybrid.lambda,
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config always serializes");
        let digest = Sha256::digest(&canonical);
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

/// Materializes the corpus: generate or load+filter+sequence+partition.
pub fn prepare_dataset(
    cfg: &ExperimentConfig,
) -> Result<(Catalog, FederatedSplit, DatasetSummary)> {
    match &cfg.dataset {
        DatasetConfig::Synthetic(synth) => {
            let effective = SynthConfig {
                seed: rng::derive_seed(cfg.seed, &[TAG_DATA]),
                ..synth.clone()
            };
            let (catalog, split) = synth_heterogeneous(&effective)?;
            let summary = DatasetSummary {
                catalog_items: catalog.len(),
                interactions: 0,
                sequences: split.clients.iter().map(Vec::len).sum::<usize>()
                    + split.test_users.len(),
                skipped_users: 0,
                clients: split.client_count(),
                test_users: split.test_users.len(),
            };
            Ok((catalog, split, summary))
        }
        DatasetConfig::Files {
            interactions,
            items,
        } => {
            let (raw, catalog) = load_interactions(interactions, items)?;
            let filtered = five_core_filter(&raw);
            let built = build_sequences(&filtered, cfg.max_len);
            let split_cfg = SplitConfig {
                seed: rng::derive_seed(cfg.seed, &[TAG_SPLIT]),
                ..cfg.split.clone()
            };
            let split = partition_federated(&built.sequences, &split_cfg)?;
            let summary = DatasetSummary {
                catalog_items: catalog.len(),
                interactions: filtered.len(),
                sequences: built.sequences.len(),
                skipped_users: built.skipped_users,
                clients: split.client_count(),
                test_users: split.test_users.len(),
            };
            Ok((catalog, split, summary))
        }
    }
}

/// Federated training under the experiment seed.
pub fn train_models(
    cfg: &ExperimentConfig,
    catalog: &Catalog,
    split: &FederatedSplit,
) -> Result<(GlobalModel, Vec<ClientRoundLog>)> {
    run_federated_training(
        split,
        catalog,
        &cfg.model,
        &cfg.rounds,
        rng::derive_seed(cfg.seed, &[TAG_TRAIN]),
    )
}

/// Builds the configured chat backend.
pub fn build_chat_client(setup: &RerankSetup) -> Result<Box<dyn ChatClient>> {
    Ok(match setup.client {
        ClientChoice::Identity => Box::new(IdentityClient),
        ClientChoice::Oracle => Box::new(OracleClient),
        ClientChoice::Adversarial => Box::new(AdversarialClient {
            seed: setup.adversarial_seed,
        }),
        ClientChoice::Transcript => {
            let path = setup.transcript_path.as_ref().ok_or_else(|| {
                Error::Config("transcript client requires rerank.transcript_path".to_string())
            })?;
            Box::new(TranscriptClient::load(path)?)
        }
        ClientChoice::Http => Box::new(HttpChatClient::from_env(setup.http.clone())?),
    })
}

/// Rerank config (threshold, retry, prompt profile) from the setup.
pub fn rerank_config(setup: &RerankSetup) -> RerankConfig {
    RerankConfig {
        threshold: setup.threshold,
        retry: setup.retry.clone(),
        profile: setup.profile.clone(),
    }
}

/// End-to-end run: dataset, training, evaluation, optional sweep and
/// ablation, plus all artifacts on disk under `out_dir`.
///
/// Artifacts: `split_manifest.json`, `id_global.{bin,json}`,
/// `text_global.{bin,json}`, `metrics.jsonl` (training log, wall times
/// included), `report.json` + `report.txt` (deterministic), and
/// `manifest.json` binding the config hash and seed.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifact> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let (catalog, split, dataset_summary) = prepare_dataset(cfg)?;
    SplitManifest::from_split(&split).write(&out_dir.join("split_manifest.json"))?;

    let (model, logs) = train_models(cfg, &catalog, &split)?;
    report::write_training_log(&out_dir.join("metrics.jsonl"), &logs)?;
    checkpoint::save_id(&model.id_params, &out_dir.join("id_global"))?;
    checkpoint::save_text(&model.text_params, &out_dir.join("text_global"))?;

    let (report, candidates) =
        evaluate_experiment(cfg, &model, &split.test_users, &catalog, dataset_summary)?;
    crate::hybrid::write_candidates_jsonl(&out_dir.join("candidates.jsonl"), &candidates)?;

    let report_json = out_dir.join("report.json");
    report::write_report(&report_json, &out_dir.join("report.txt"), &report)?;
    report::write_manifest(&out_dir.join("manifest.json"), cfg)?;

    Ok(RunArtifact {
        out_dir: out_dir.to_path_buf(),
        report,
        report_json,
    })
}

/// Evaluation half of [`run_experiment`], reusable with a pre-trained
/// model. Also returns the stage-1 candidate sets at the effective lambda
/// for the candidates JSONL interface.
pub fn evaluate_experiment(
    cfg: &ExperimentConfig,
    model: &GlobalModel,
    test_users: &[UserSequence],
    catalog: &Catalog,
    dataset_summary: DatasetSummary,
) -> Result<(ExperimentReport, Vec<crate::hybrid::CandidateSet>)> {
    let cache = build_score_cache(model, test_users, catalog, &cfg.render)?;

    let budget = RequestBudget::new(cfg.rerank.budget);
    let client = build_chat_client(&cfg.rerank)?;
    let runtime = RerankRuntime {
        client: client.as_ref(),
        budget: &budget,
        cfg: rerank_config(&cfg.rerank),
        parallelism: cfg.rerank.parallelism,
    };
    let rerank_opt = cfg.flags.use_rerank.then_some(&runtime);

    let hybrid_cfg = HybridConfig {
        lambda: cfg.effective_lambda(),
        ..cfg.hybrid.clone()
    };
    let pipeline = evaluate_cached(&cache, test_users, catalog, &hybrid_cfg, rerank_opt)?;

    let sweep = if cfg.include_sweep {
        Some(sensitivity_sweep(
            &cache,
            test_users,
            catalog,
            &hybrid_cfg,
            &cfg.sweep_grid,
        )?)
    } else {
        None
    };
    let ablation_table = if cfg.include_ablation {
        Some(ablation(
            &cache,
            test_users,
            catalog,
            &hybrid_cfg,
            rerank_opt,
        )?)
    } else {
        None
    };

    let candidates = stage1_candidates(&cache, test_users, catalog, &hybrid_cfg)?;
    Ok((
        ExperimentReport {
            dataset: dataset_summary,
            lambda: hybrid_cfg.lambda,
            pipeline,
            sweep,
            ablation: ablation_table,
        },
        candidates,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset = DatasetConfig::Synthetic(SynthConfig {
            n_clients: 2,
            items_per_client: 8,
            users_per_client: 6,
            n_attributes: 4,
            test_users: 4,
            test_items: 6,
            history_len: 3,
            seed: 0,
        });
        cfg.model = ModelConfig {
            id_dim: 4,
            text_vocab_size: 128,
            text_dim: 8,
            temperature: 0.05,
        };
        cfg.rounds.global_epochs = 1;
        cfg.rounds.id_cfg.local_epochs = 2;
        cfg.rounds.text_cfg.local_epochs = 1;
        cfg.rounds.text_cfg.n_negatives = 3;
        cfg.seed = 3;
        cfg
    }

    #[test]
    fn config_validation_catches_contradictions() {
        let mut cfg = ExperimentConfig::default();
        cfg.flags.use_id = false;
        cfg.flags.use_text = false;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ExperimentConfig::default();
        cfg.rerank.threshold = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.rerank.client = ClientChoice::Transcript;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.sweep_grid = vec![0.5, 1.5];
        assert!(cfg.validate().is_err());

        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn component_masks_force_lambda_endpoints() {
        let mut cfg = ExperimentConfig::default();
        cfg.hybrid.lambda = 0.4;
        assert_eq!(cfg.effective_lambda(), 0.4);
        cfg.flags.use_text = false;
        assert_eq!(cfg.effective_lambda(), 1.0);
        cfg.flags.use_text = true;
        cfg.flags.use_id = false;
        assert_eq!(cfg.effective_lambda(), 0.0);
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        assert_eq!(a.content_hash(), b.content_hash());
        b.seed += 1;
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn identity_client_makes_stage_two_equal_stage_one() {
        let cfg = tiny_config();
        let (catalog, split, _) = prepare_dataset(&cfg).unwrap();
        let (model, _) = train_models(&cfg, &catalog, &split).unwrap();
        let report = evaluate_pipeline(
            &model,
            &split.test_users,
            &catalog,
            &HybridConfig {
                lambda: cfg.effective_lambda(),
                ..cfg.hybrid.clone()
            },
            &cfg.render,
            Some(&RerankRuntime {
                client: &IdentityClient,
                budget: &RequestBudget::unlimited(),
                cfg: rerank_config(&cfg.rerank),
                parallelism: 1,
            }),
        )
        .unwrap();
        let two = report.stage2.unwrap();
        // Identity reordering cannot move any metric off the stage-1 value.
        assert_eq!(report.stage1.recall_at_5, two.inclusive.recall_at_5);
        assert_eq!(report.stage1.ndcg_at_5, two.inclusive.ndcg_at_5);
        assert_eq!(report.stage1.recall_at_10, two.inclusive.recall_at_10);
        assert_eq!(report.stage1.ndcg_at_10, two.inclusive.ndcg_at_10);
        assert_eq!(two.counts.fallback, 0);
    }

    #[test]
    fn sweep_endpoints_match_single_retriever_runs_and_duplicates_agree() {
        let cfg = tiny_config();
        let (catalog, split, _) = prepare_dataset(&cfg).unwrap();
        let (model, _) = train_models(&cfg, &catalog, &split).unwrap();
        let cache = build_score_cache(&model, &split.test_users, &catalog, &cfg.render).unwrap();

        let rows = sensitivity_sweep(
            &cache,
            &split.test_users,
            &catalog,
            &cfg.hybrid,
            &[0.0, 1.0, 0.5, 0.5],
        )
        .unwrap();
        // Duplicate grid entries give identical rows.
        assert_eq!(rows[2].stage1, rows[3].stage1);

        let id_only = evaluate_cached(
            &cache,
            &split.test_users,
            &catalog,
            &HybridConfig {
                lambda: 1.0,
                ..cfg.hybrid.clone()
            },
            None,
        )
        .unwrap();
        let text_only = evaluate_cached(
            &cache,
            &split.test_users,
            &catalog,
            &HybridConfig {
                lambda: 0.0,
                ..cfg.hybrid.clone()
            },
            None,
        )
        .unwrap();
        assert_eq!(rows[0].stage1, text_only.stage1);
        assert_eq!(rows[1].stage1, id_only.stage1);
    }

    #[test]
    fn cold_start_hygiene_training_ignores_test_users() {
        // Functional form of the access-tracking assertion: swapping the
        // test set for a completely different one leaves trained parameters
        // bit-identical.
        let cfg = tiny_config();
        let (catalog, split, _) = prepare_dataset(&cfg).unwrap();
        let (model_a, _) = train_models(&cfg, &catalog, &split).unwrap();

        let mut altered = split.clone();
        altered.test_users = vec![];
        let (model_b, _) = train_models(&cfg, &catalog, &altered).unwrap();
        assert_eq!(model_a.id_params.flatten(), model_b.id_params.flatten());
        assert_eq!(model_a.text_params.flatten(), model_b.text_params.flatten());
    }

    #[test]
    fn empty_test_set_reports_zero_users() {
        let cfg = tiny_config();
        let (catalog, split, _) = prepare_dataset(&cfg).unwrap();
        let (model, _) = train_models(&cfg, &catalog, &split).unwrap();
        let report = evaluate_pipeline(
            &model,
            &[],
            &catalog,
            &cfg.hybrid,
            &cfg.render,
            None,
        )
        .unwrap();
        assert_eq!(report.stage1.user_count, 0);
        assert!(report.stage1.recall_at_10.is_none());
    }
}
