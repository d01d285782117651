//! Pipeline stages and their on-disk artifacts.
//!
//! Each stage reads the input corpus plus the artifacts of earlier stages
//! and writes versioned JSON under `output_dir/<stage>/`. The pure
//! functions here are shared by the staged commands and by the end-to-end
//! summarizer, so both routes produce the same summaries.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use endorse_abstractor::beam;
use endorse_abstractor::checkpoint::Checkpoint;
use endorse_abstractor::train::{train, TrainReport};
use endorse_abstractor::vocab::{Vocab, EOS};
use endorse_abstractor::{EndorsedInput, Example, Parameters};
use endorse_core::corpus::tokenize_text;
use endorse_core::endorsement::{endorse_cluster, ClusterEndorsement, EndorsementStats, StatsSummary};
use endorse_core::rouge::{evaluate_run, RunReport};
use endorse_core::{load_clusters, Cluster, EmbeddingProvider, PseudoDocument};

use crate::config::RunConfig;
use crate::error::PipelineError;

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Endorse,
    Select,
    Train,
    Summarize,
    Eval,
    Stats,
}

impl Stage {
    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Endorse => "endorse",
            Stage::Select => "select",
            Stage::Train => "train",
            Stage::Summarize => "summarize",
            Stage::Eval => "eval",
            Stage::Stats => "stats",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub format_version: u32,
    pub stage: Stage,
    pub data: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedCluster {
    pub cluster_id: String,
    pub pseudo_document: PseudoDocument,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummaryMode {
    Abstractive,
    Extractive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summaries {
    pub mode: SummaryMode,
    pub summaries: Vec<ClusterSummary>,
}

impl Summaries {
    pub fn as_map(&self) -> HashMap<String, String> {
        self.summaries
            .iter()
            .map(|s| (s.cluster_id.clone(), s.summary.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statistics {
    pub summary: StatsSummary,
    pub totals: EndorsementStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub examples: usize,
    pub vocab_size: usize,
    pub parameters: usize,
    pub report: TrainReport,
}

/// File-name-safe version of a cluster id.
pub fn artifact_name(cluster_id: &str) -> String {
    let safe: String = cluster_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("{safe}.json")
}

pub fn stage_dir(cfg: &RunConfig, stage: Stage) -> PathBuf {
    cfg.output_dir.join(stage.dir_name())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn write_artifact<T: Serialize>(path: &Path, stage: Stage, data: T) -> Result<(), PipelineError> {
    write_json(
        path,
        &Artifact {
            format_version: ARTIFACT_VERSION,
            stage,
            data,
        },
    )
}

pub fn read_artifact<T: DeserializeOwned>(path: &Path, stage: Stage) -> Result<T, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let artifact: Artifact<T> = serde_json::from_str(&text).map_err(|e| PipelineError::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    if artifact.format_version != ARTIFACT_VERSION || artifact.stage != stage {
        return Err(PipelineError::Artifact {
            path: path.to_path_buf(),
            reason: format!(
                "expected {} version {ARTIFACT_VERSION}, found {} version {}",
                stage.dir_name(),
                artifact.stage.dir_name(),
                artifact.format_version
            ),
        });
    }
    Ok(artifact.data)
}

/// Run `f` on a pool with `jobs` threads (0: one per core).
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            warn!("could not build a {jobs}-thread pool ({e}); using the global pool");
            f()
        }
    }
}

pub fn load_input(cfg: &RunConfig) -> Result<Vec<Cluster>, PipelineError> {
    Ok(load_clusters(&cfg.input)?)
}

/// Endorse every cluster, preserving input order.
pub fn endorse_all(
    clusters: &[Cluster],
    cfg: &RunConfig,
    provider: &EmbeddingProvider,
) -> Result<Vec<ClusterEndorsement>, PipelineError> {
    clusters
        .par_iter()
        .map(|c| {
            endorse_cluster(c, &cfg.endorsement, provider).map_err(|e| PipelineError::Endorsement {
                cluster: c.cluster_id.clone(),
                source: e,
            })
        })
        .collect()
}

pub fn statistics(endorsements: &[ClusterEndorsement], tau_max: usize) -> Statistics {
    let mut totals = EndorsementStats::new(tau_max);
    for ce in endorsements {
        totals.add(ce);
    }
    Statistics {
        summary: totals.summary(),
        totals,
    }
}

pub fn select_all(endorsements: &[ClusterEndorsement], cfg: &RunConfig) -> Vec<SelectedCluster> {
    endorsements
        .par_iter()
        .map(|ce| SelectedCluster {
            cluster_id: ce.cluster_id.clone(),
            pseudo_document: ce.pseudo_document(&cfg.endorsement),
        })
        .collect()
}

/// Model input for a pseudo-document, cut to the model's position table.
pub fn model_input(pd: &PseudoDocument, vocab: &Vocab, max_positions: usize) -> EndorsedInput {
    let n = pd.tokens.len().min(max_positions);
    let tokens = &pd.tokens[..n];
    EndorsedInput {
        token_ids: tokens.iter().map(|t| vocab.id(&t.normalized)).collect(),
        endorse_counts: tokens.iter().map(|t| t.endorse_count).collect(),
    }
}

fn reference_tokens(cluster: &Cluster) -> Option<Vec<String>> {
    cluster
        .references
        .first()
        .map(|r| tokenize_text(r).into_iter().map(|t| t.normalized).collect())
}

/// Vocabulary over pseudo-documents and first references.
pub fn build_vocab(selected: &[SelectedCluster], clusters: &[Cluster], max_size: usize) -> Vocab {
    let refs: Vec<Vec<String>> = clusters.iter().filter_map(reference_tokens).collect();
    let words = selected
        .iter()
        .flat_map(|s| s.pseudo_document.tokens.iter().map(|t| t.normalized.as_str()))
        .chain(refs.iter().flatten().map(String::as_str));
    Vocab::build(words, max_size)
}

/// One example per cluster with a reference: the pseudo-document as source
/// and the first reference as target.
pub fn training_examples(
    selected: &[SelectedCluster],
    clusters: &[Cluster],
    vocab: &Vocab,
    max_positions: usize,
) -> Vec<Example> {
    let by_id: HashMap<&str, &Cluster> = clusters.iter().map(|c| (c.cluster_id.as_str(), c)).collect();
    selected
        .iter()
        .filter(|s| !s.pseudo_document.tokens.is_empty())
        .filter_map(|s| {
            let words = reference_tokens(by_id.get(s.cluster_id.as_str())?)?;
            if words.is_empty() {
                return None;
            }
            let mut target = vocab.encode(&words[..words.len().min(max_positions - 1)]);
            target.push(EOS);
            Some(Example {
                input: model_input(&s.pseudo_document, vocab, max_positions),
                target,
            })
        })
        .collect()
}

pub fn train_model(
    selected: &[SelectedCluster],
    clusters: &[Cluster],
    cfg: &RunConfig,
) -> Result<(Checkpoint, TrainingSummary), PipelineError> {
    let vocab = build_vocab(selected, clusters, cfg.model.max_vocab);
    let model_cfg = cfg.model.to_config(vocab.len());
    let data = training_examples(selected, clusters, &vocab, model_cfg.max_positions);
    if data.is_empty() {
        return Err(PipelineError::NoTrainingData);
    }
    let mut params = Parameters::init(&model_cfg, cfg.seed)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    let report = train(&mut params, &data, &train_cfg)?;
    let summary = TrainingSummary {
        examples: data.len(),
        vocab_size: vocab.len(),
        parameters: params.values.len(),
        report,
    };
    Ok((Checkpoint { params, vocab }, summary))
}

/// The extractive fallback: leading whole sentences of the pseudo-document.
pub fn extractive_summary(pd: &PseudoDocument, max_tokens: usize) -> String {
    pd.lead_tokens(max_tokens)
        .iter()
        .map(|t| t.surface.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn abstractive_summary(pd: &PseudoDocument, ck: &Checkpoint, cfg: &RunConfig) -> Result<String, PipelineError> {
    if pd.tokens.is_empty() {
        return Ok(String::new());
    }
    let input = model_input(pd, &ck.vocab, ck.params.config.max_positions);
    let hyp = beam::decode(&ck.params, &cfg.beam, &input)?;
    Ok(ck.vocab.decode(hyp.content()).join(" "))
}

pub fn summarize_all(
    selected: &[SelectedCluster],
    checkpoint: Option<&Checkpoint>,
    cfg: &RunConfig,
) -> Result<Summaries, PipelineError> {
    let summaries = selected
        .par_iter()
        .map(|s| {
            let summary = match checkpoint {
                Some(ck) => abstractive_summary(&s.pseudo_document, ck, cfg)?,
                None => extractive_summary(&s.pseudo_document, cfg.summary_max_tokens),
            };
            Ok(ClusterSummary {
                cluster_id: s.cluster_id.clone(),
                summary,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(Summaries {
        mode: if checkpoint.is_some() {
            SummaryMode::Abstractive
        } else {
            SummaryMode::Extractive
        },
        summaries,
    })
}

/// Summaries straight from the corpus, without reading stage artifacts.
pub fn summarize_end_to_end(cfg: &RunConfig) -> Result<Summaries, PipelineError> {
    let clusters = load_input(cfg)?;
    let provider = cfg.embedding_provider()?;
    let ck = load_checkpoint(cfg)?;
    with_jobs(cfg.jobs, || {
        let endorsements = endorse_all(&clusters, cfg, &provider)?;
        let selected = select_all(&endorsements, cfg);
        summarize_all(&selected, ck.as_ref(), cfg)
    })
}

fn endorse_path(cfg: &RunConfig, cluster_id: &str) -> PathBuf {
    stage_dir(cfg, Stage::Endorse).join(artifact_name(cluster_id))
}

fn select_path(cfg: &RunConfig, cluster_id: &str) -> PathBuf {
    stage_dir(cfg, Stage::Select).join(artifact_name(cluster_id))
}

pub fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    stage_dir(cfg, Stage::Train).join("checkpoint.json")
}

pub fn statistics_path(cfg: &RunConfig) -> PathBuf {
    stage_dir(cfg, Stage::Endorse).join("statistics.json")
}

pub fn summaries_path(cfg: &RunConfig) -> PathBuf {
    stage_dir(cfg, Stage::Summarize).join("summaries.json")
}

/// The configured checkpoint, else the trained one if present, unless
/// extractive summaries were requested.
pub fn load_checkpoint(cfg: &RunConfig) -> Result<Option<Checkpoint>, PipelineError> {
    if cfg.extractive {
        return Ok(None);
    }
    let path = match &cfg.checkpoint {
        Some(p) => p.clone(),
        None => {
            let p = checkpoint_path(cfg);
            if !p.exists() {
                info!("no checkpoint at {}; summarizing extractively", p.display());
                return Ok(None);
            }
            p
        }
    };
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path));
    }
    Ok(Some(Checkpoint::load(&path)?))
}

pub fn cmd_endorse(cfg: &RunConfig) -> Result<Statistics, PipelineError> {
    let clusters = load_input(cfg)?;
    let provider = cfg.embedding_provider()?;
    let endorsements = with_jobs(cfg.jobs, || endorse_all(&clusters, cfg, &provider))?;
    for ce in &endorsements {
        write_artifact(&endorse_path(cfg, &ce.cluster_id), Stage::Endorse, ce)?;
    }
    let stats = statistics(&endorsements, cfg.endorsement.tau_max);
    write_artifact(&statistics_path(cfg), Stage::Endorse, &stats)?;
    Ok(stats)
}

fn read_endorsements(cfg: &RunConfig, clusters: &[Cluster]) -> Result<Vec<ClusterEndorsement>, PipelineError> {
    clusters
        .iter()
        .map(|c| read_artifact(&endorse_path(cfg, &c.cluster_id), Stage::Endorse))
        .collect()
}

fn read_selected(cfg: &RunConfig, clusters: &[Cluster]) -> Result<Vec<SelectedCluster>, PipelineError> {
    clusters
        .iter()
        .map(|c| read_artifact(&select_path(cfg, &c.cluster_id), Stage::Select))
        .collect()
}

pub fn cmd_select(cfg: &RunConfig) -> Result<Vec<SelectedCluster>, PipelineError> {
    let clusters = load_input(cfg)?;
    let endorsements = read_endorsements(cfg, &clusters)?;
    let selected = with_jobs(cfg.jobs, || select_all(&endorsements, cfg));
    for s in &selected {
        write_artifact(&select_path(cfg, &s.cluster_id), Stage::Select, s)?;
    }
    Ok(selected)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainingSummary, PipelineError> {
    let clusters = load_input(cfg)?;
    let selected = read_selected(cfg, &clusters)?;
    let (ck, summary) = with_jobs(cfg.jobs, || train_model(&selected, &clusters, cfg))?;
    let path = checkpoint_path(cfg);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    ck.save(&path)?;
    write_artifact(&stage_dir(cfg, Stage::Train).join("report.json"), Stage::Train, &summary)?;
    Ok(summary)
}

/// Summarize from the select artifacts, or recompute every stage in
/// memory when `end_to_end` is set.
pub fn cmd_summarize(cfg: &RunConfig, end_to_end: bool) -> Result<Summaries, PipelineError> {
    let summaries = if end_to_end {
        summarize_end_to_end(cfg)?
    } else {
        let clusters = load_input(cfg)?;
        let selected = read_selected(cfg, &clusters)?;
        let ck = load_checkpoint(cfg)?;
        with_jobs(cfg.jobs, || summarize_all(&selected, ck.as_ref(), cfg))?
    };
    write_artifact(&summaries_path(cfg), Stage::Summarize, &summaries)?;
    Ok(summaries)
}

/// Score summaries against references. `summaries` defaults to the
/// summarize artifact; a plain `{cluster_id: text}` JSON object also works.
pub fn cmd_eval(cfg: &RunConfig, summaries: Option<&Path>) -> Result<RunReport, PipelineError> {
    let clusters = load_input(cfg)?;
    let map: HashMap<String, String> = match summaries {
        None => read_artifact::<Summaries>(&summaries_path(cfg), Stage::Summarize)?.as_map(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
            match serde_json::from_str::<Artifact<Summaries>>(&text) {
                Ok(a) => a.data.as_map(),
                Err(_) => serde_json::from_str::<BTreeMap<String, String>>(&text)
                    .map_err(|e| PipelineError::Json {
                        path: path.to_path_buf(),
                        source: e,
                    })?
                    .into_iter()
                    .collect(),
            }
        }
    };
    let report = evaluate_run(&map, &clusters, Some(cfg.summary_max_tokens));
    let dir = stage_dir(cfg, Stage::Eval);
    write_artifact(
        &dir.join("report.json"),
        Stage::Eval,
        serde_json::json!({
            "metrics": report.metric_json(),
            "run": &report,
        }),
    )?;
    write_text(&dir.join("table.txt"), &report.table())?;
    let bad = report.violations(&cfg.thresholds);
    if !bad.is_empty() {
        return Err(PipelineError::Regression(bad));
    }
    Ok(report)
}

/// Text table of corpus-level endorsement statistics.
pub fn stats_table(stats: &Statistics) -> String {
    let s = &stats.summary;
    let mut out = String::new();
    out.push_str(&format!("{:<36} {:>10}\n", "clusters", s.clusters));
    out.push_str(&format!("{:<36} {:>10.2}\n", "mean synopsis length (tokens)", s.mean_synopsis_length));
    out.push_str(&format!("{:<36} {:>10.2}\n", "mean segments per synopsis-doc pair", s.mean_segments_per_pair));
    out.push_str(&format!("{:<36} {:>10.2}\n", "mean segment length (tokens)", s.mean_segment_length));
    for (tau, pct) in s.percent_at_least.iter().enumerate().skip(1) {
        out.push_str(&format!("{:<36} {:>9.2}%\n", format!("tokens with count >= {tau}"), pct));
    }
    out
}

pub fn cmd_stats(cfg: &RunConfig) -> Result<String, PipelineError> {
    let path = statistics_path(cfg);
    let stats: Statistics = if path.exists() {
        read_artifact(&path, Stage::Endorse)?
    } else {
        cmd_endorse(cfg)?
    };
    let table = stats_table(&stats);
    write_text(&stage_dir(cfg, Stage::Stats).join("table.txt"), &table)?;
    Ok(table)
}
