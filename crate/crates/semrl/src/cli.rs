//! Command-line front end: `train`, `collect`, `analyze`, `tsne`, `export`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use semrl_core::analysis::{
    collect_states, exact_tsne, inconsistent_records, state_set_stats, transition_probability, ClusterStats, StateSet, MAX_TSNE_POINTS,
};
use semrl_core::trainer::{MetricsRow, Trainer};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, Checkpoint, LoadedModel, Metadata};
use crate::config::RunConfig;
use crate::error::{write_file, CliError, CliResult};
use crate::export::{ExplorerExport, Meta};
use crate::manifest::{content_hash, RunManifest};
use crate::metrics::MetricsWriter;
use crate::states::{replay_trace, StateSetFile};

#[derive(Debug, Parser)]
#[command(name = "semrl", version, about = "Semantic clustering for deep RL on the MiniRun platformer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent and write checkpoint, metrics CSV and manifest.
    Train(TrainArgs),
    /// Run a checkpoint with ε-random actions and record visited states.
    Collect(CollectArgs),
    /// Cluster statistics, transition probability, segmentation and explorer export.
    Analyze(AnalyzeArgs),
    /// Exact t-SNE of the stored state features.
    Tsne(TsneArgs),
    /// Write only the explorer export.
    Export(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub envs: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub w_fdr: Option<f64>,
    #[arg(long)]
    pub w_vq: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub codebook_size: Option<usize>,
    /// Train plain PPO without the semantic module.
    #[arg(long)]
    pub no_semantic: bool,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub envs: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub collect_prob: Option<f64>,
    /// 64 environments × 500 steps, collect probability 0.8.
    #[arg(long)]
    pub paper_protocol: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub states: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TsneArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub states: PathBuf,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

fn resolve(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn check(cfg: &RunConfig) -> CliResult<()> {
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::Collect(a) => collect(&a),
        Command::Analyze(a) => analyze(&a, true),
        Command::Export(a) => analyze(&a, false),
        Command::Tsne(a) => tsne(&a),
    }
}

fn save_checkpoint(trainer: &Trainer, cfg: &RunConfig, path: &Path) -> CliResult<String> {
    let ckpt = Checkpoint::from_store(
        &trainer.store,
        Metadata {
            iteration: trainer.iteration,
            seed: cfg.seed,
            config_hash: cfg.hash(),
        },
    );
    let json = ckpt.to_json();
    write_file(path, json.as_bytes())?;
    Ok(content_hash(json.as_bytes()))
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let mut cfg = resolve(&a.common)?;
    let t = &mut cfg.train;
    if let Some(v) = a.envs {
        t.n_envs = v;
    }
    if let Some(v) = a.iterations {
        t.iterations = v;
    }
    if let Some(v) = a.w_fdr {
        t.w_fdr = v;
    }
    if let Some(v) = a.w_vq {
        t.w_vq = v;
    }
    if let Some(v) = a.alpha {
        t.alpha = v;
    }
    if let Some(v) = a.codebook_size {
        t.codebook_size = v;
    }
    if a.no_semantic {
        t.semantic = false;
    }
    check(&cfg)?;
    let out = &a.common.out;
    let metrics_path = out.join("metrics.csv");
    let ckpt_path = out.join("checkpoint.json");
    std::fs::create_dir_all(out).map_err(|source| CliError::Write {
        path: out.clone(),
        source,
    })?;
    let file = File::create(&metrics_path).map_err(|source| CliError::Write {
        path: metrics_path.clone(),
        source,
    })?;
    let k = cfg.train.codebook_size;
    let csv_err = |e: csv::Error| CliError::Write {
        path: metrics_path.clone(),
        source: std::io::Error::other(e.to_string()),
    };
    let mut writer = MetricsWriter::new(BufWriter::new(file), k).map_err(csv_err)?;

    let mut trainer = Trainer::new(cfg.train_config())?;
    info!("training {} iterations, semantic = {}", cfg.train.iterations, cfg.train.semantic);
    let every = cfg.train.checkpoint_every;
    let mut failure: Option<CliError> = None;
    let result = trainer.run(|tr: &Trainer, row: &MetricsRow| {
        if failure.is_some() {
            return;
        }
        if let Err(e) = writer.write(row) {
            failure = Some(csv_err(e));
            return;
        }
        if row.iteration % 10 == 0 {
            info!(
                "iteration {} mean_return {:?} l_fdr {:.4} f_control {}",
                row.iteration, row.mean_return, row.l_fdr, row.f_control
            );
        }
        if every > 0 && row.iteration % every == 0 {
            let p = out.join(format!("checkpoint-{:06}.json", row.iteration));
            if let Err(e) = save_checkpoint(tr, &cfg, &p) {
                failure = Some(e);
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Err(semrl_core::trainer::TrainError::NonFinite(dump)) = &result {
        let dump_path = out.join("nonfinite-dump.json");
        let body = serde_json::json!({
            "iteration": dump.iteration,
            "epoch": dump.epoch,
            "minibatch": dump.minibatch,
            "l_drl": dump.l_drl,
            "l_fdr": dump.l_fdr,
            "l_vq": dump.l_vq,
            "indices": dump.indices,
            "actions": dump.actions,
            "old_logprobs": dump.old_logprobs,
            "advantages": dump.advantages,
            "returns": dump.returns,
        });
        write_file(&dump_path, body.to_string().as_bytes())?;
        warn!("wrote diagnostic dump to {}", dump_path.display());
    }
    result?;
    writer.into_inner().map_err(|e| CliError::Write {
        path: metrics_path.clone(),
        source: std::io::Error::other(e),
    })?;
    let hash = save_checkpoint(&trainer, &cfg, &ckpt_path)?;
    let mut m = RunManifest::new("train", cfg.to_toml(), vec![cfg.seed]);
    if let Some(c) = &a.common.config {
        m.input("config", c);
    }
    m.output("checkpoint", &ckpt_path).output("metrics", &metrics_path);
    m.checkpoint_hash = Some(hash);
    m.write(out)?;
    Ok(())
}

fn semantic_model(model: &LoadedModel, path: &Path) -> CliResult<()> {
    if model.semantic.is_none() {
        return Err(CliError::Validation(format!(
            "checkpoint `{}` has no semantic module; states cannot be clustered",
            path.display()
        )));
    }
    Ok(())
}

pub fn collect(a: &CollectArgs) -> CliResult<()> {
    let mut cfg = resolve(&a.common)?;
    if a.paper_protocol {
        cfg.collect.envs = semrl_core::analysis::PAPER_COLLECT_ENVS;
        cfg.collect.steps = semrl_core::analysis::PAPER_COLLECT_STEPS;
        cfg.collect.collect_prob = semrl_core::analysis::DEFAULT_COLLECT_PROB;
    }
    if let Some(v) = a.envs {
        cfg.collect.envs = v;
    }
    if let Some(v) = a.steps {
        cfg.collect.steps = v;
    }
    if let Some(v) = a.epsilon {
        cfg.collect.epsilon = v;
    }
    if let Some(v) = a.collect_prob {
        cfg.collect.collect_prob = v;
    }
    if let Some(v) = a.alpha {
        cfg.train.alpha = v;
    }
    check(&cfg)?;
    let (model, hash) = load_checkpoint(&a.checkpoint, &cfg.train_config())?;
    semantic_model(&model, &a.checkpoint)?;
    let sem = model.semantic.as_ref().expect("checked");
    let set = collect_states(&model.agent, sem, &model.store, &cfg.collect_config())?;
    info!("collected {} states over {} episodes", set.len(), set.episodes.len());

    let out = &a.common.out;
    let states_path = out.join("states.json");
    let replay_path = out.join("replay.json");
    let file = StateSetFile::from_set(&set, &hash, sem.codebook_size());
    write_file(&states_path, file.to_json().as_bytes())?;
    let trace = serde_json::to_string(&replay_trace(&set)).expect("trace serializes");
    write_file(&replay_path, trace.as_bytes())?;

    let mut m = RunManifest::new("collect", cfg.to_toml(), vec![cfg.seed]);
    m.input("checkpoint", &a.checkpoint);
    if let Some(c) = &a.common.config {
        m.input("config", c);
    }
    m.output("states", &states_path).output("replay", &replay_path);
    m.checkpoint_hash = Some(hash);
    m.write(out)?;
    Ok(())
}

/// Machine-readable analysis report.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub states: usize,
    pub episodes: usize,
    pub transition_probability: Option<f64>,
    pub pixel_mean: f64,
    pub pixel_std: f64,
    pub clusters: Vec<ReportRow>,
    pub empty_clusters: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub k: usize,
    pub count: usize,
    pub pixel_mean: f64,
    pub pixel_std: f64,
}

pub fn report(states: &StateSet, stats: &ClusterStats) -> Report {
    Report {
        states: states.len(),
        episodes: states.episodes.len(),
        transition_probability: stats.transition_probability,
        pixel_mean: stats.pooled_pixel_mean,
        pixel_std: stats.pooled_pixel_std,
        clusters: stats
            .clusters
            .iter()
            .filter(|c| c.count > 0)
            .map(|c| ReportRow {
                k: c.code,
                count: c.count,
                pixel_mean: c.pixel_mean,
                pixel_std: c.pixel_std,
            })
            .collect(),
        empty_clusters: stats.empty_clusters.clone(),
    }
}

/// Text table: one summary line in the `transition probability | pixel
/// distance mean (std)` layout, then one row per non-empty cluster.
pub fn report_text(r: &Report) -> String {
    let mut s = String::new();
    s.push_str(&format!("states {}  episodes {}\n\n", r.states, r.episodes));
    s.push_str("transition probability | pixel distance mean (std)\n");
    let tp = r.transition_probability.map_or("n/a".to_string(), |p| format!("{p:.4}"));
    s.push_str(&format!("{tp} | {:.4} ({:.4})\n\n", r.pixel_mean, r.pixel_std));
    s.push_str("k  count  pixel distance mean (std)\n");
    for c in &r.clusters {
        s.push_str(&format!("{}  {}  {:.4} ({:.4})\n", c.k, c.count, c.pixel_mean, c.pixel_std));
    }
    if !r.empty_clusters.is_empty() {
        s.push_str(&format!("empty clusters: {:?}\n", r.empty_clusters));
    }
    s
}

fn created_at() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn analyze(a: &AnalyzeArgs, full: bool) -> CliResult<()> {
    let mut cfg = resolve(&a.common)?;
    if let Some(v) = a.alpha {
        cfg.train.alpha = v;
    }
    check(&cfg)?;
    let (model, hash) = load_checkpoint(&a.checkpoint, &cfg.train_config())?;
    semantic_model(&model, &a.checkpoint)?;
    let sem = model.semantic.as_ref().expect("checked");
    let file = StateSetFile::read(&a.states)?;
    if file.checkpoint_hash != hash {
        return Err(CliError::Validation(format!(
            "state set `{}` was collected with checkpoint {}, not {}",
            a.states.display(),
            file.checkpoint_hash,
            hash
        )));
    }
    let states = file.to_set().map_err(|message| CliError::Format {
        what: "state set",
        path: a.states.clone(),
        message,
    })?;
    let bad = inconsistent_records(&model.agent, sem, &model.store, &states)?;
    if !bad.is_empty() {
        return Err(CliError::Validation(format!("{} records disagree with the checkpoint (first: {})", bad.len(), bad[0])));
    }
    if states.is_empty() {
        return Err(CliError::Validation("state set is empty".into()));
    }
    let k = sem.codebook_size();
    let stats = state_set_stats(&states, k)?;
    if !stats.empty_clusters.is_empty() {
        warn!("empty clusters excluded from pooled statistics: {:?}", stats.empty_clusters);
    }
    let out = &a.common.out;
    let export_path = out.join("export.json");
    let meta = Meta {
        checkpoint_hash: hash.clone(),
        env_config: cfg.level.clone(),
        k,
        alpha: sem.config.alpha,
        created_at: created_at(),
    };
    let codebook = (0..k).map(|i| sem.embedding(&model.store, i)).collect();
    let export = ExplorerExport::build(meta, codebook, &states, &stats);
    write_file(&export_path, export.to_json().as_bytes())?;

    let command = if full { "analyze" } else { "export" };
    let mut m = RunManifest::new(command, cfg.to_toml(), vec![cfg.seed]);
    m.input("checkpoint", &a.checkpoint).input("states", &a.states);
    m.output("export", &export_path);
    if full {
        let r = report(&states, &stats);
        let text_path = out.join("report.txt");
        let json_path = out.join("report.json");
        write_file(&text_path, report_text(&r).as_bytes())?;
        write_file(&json_path, serde_json::to_string_pretty(&r).expect("report serializes").as_bytes())?;
        m.output("report_text", &text_path).output("report_json", &json_path);
        if let Ok(p) = transition_probability(&states.episode_codes()) {
            info!("transition probability {p:.4}");
        }
    }
    m.checkpoint_hash = Some(hash);
    m.write(out)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct TsneFile {
    pub seed: u64,
    pub perplexity: f64,
    pub iterations: usize,
    pub kl: f64,
    pub points: Vec<[f64; 2]>,
}

pub fn tsne(a: &TsneArgs) -> CliResult<()> {
    let mut cfg = resolve(&a.common)?;
    if let Some(v) = a.perplexity {
        cfg.tsne.perplexity = v;
    }
    if let Some(v) = a.iterations {
        cfg.tsne.iterations = v;
    }
    check(&cfg)?;
    let file = StateSetFile::read(&a.states)?;
    let n = file.records.len();
    if n > MAX_TSNE_POINTS {
        return Err(CliError::Usage(format!("exact t-SNE is limited to {MAX_TSNE_POINTS} states, the set has {n}")));
    }
    let states = file.to_set().map_err(|message| CliError::Format {
        what: "state set",
        path: a.states.clone(),
        message,
    })?;
    let tc = cfg.tsne_config();
    let res = exact_tsne(&states.feature_matrix(), &tc)?;
    info!("t-SNE done, KL {:.4}", res.kl);
    let out = &a.common.out;
    let path = out.join(format!("tsne-seed{}.json", tc.seed));
    let body = TsneFile {
        seed: tc.seed,
        perplexity: tc.perplexity,
        iterations: tc.iterations,
        kl: res.kl,
        points: res.points,
    };
    write_file(&path, serde_json::to_string(&body).expect("tsne serializes").as_bytes())?;
    let mut m = RunManifest::new("tsne", cfg.to_toml(), vec![cfg.seed]);
    m.input("states", &a.states).output("embedding", &path);
    m.checkpoint_hash = Some(file.checkpoint_hash.clone());
    m.write(out)?;
    Ok(())
}
