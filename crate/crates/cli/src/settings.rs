use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use magent::domain::EngineConfig;
use magent::sim::{OrchestratorPolicy, PolicyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Simulated judge and centroid-nudge reformulation over a local corpus.
    Sim,
    /// Chat-completions backend for judging, deciding and reformulating.
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PolicyName {
    Threshold,
    Exploit,
    Explore,
    Llm,
}

/// Every knob, as read from the config file or given as a flag. Flags win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Maximum iterations per topic.
    #[arg(long = "T")]
    #[serde(rename = "T")]
    pub t: Option<usize>,
    /// Candidates examined per iteration.
    #[arg(long = "k")]
    #[serde(rename = "k")]
    pub k: Option<usize>,
    /// Submission length per topic.
    #[arg(long = "L")]
    #[serde(rename = "L")]
    pub l: Option<usize>,
    /// Topics run concurrently.
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Concurrent judgment calls within one slice.
    #[arg(long)]
    pub judge_parallelism: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    /// Chat-completions URL (or set MAGENT_ENDPOINT).
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub embedding_endpoint: Option<String>,
    #[arg(long)]
    pub embedding_model: Option<String>,
    /// Topics file: `topic<TAB>query[<TAB>space-separated vector]`.
    #[arg(long)]
    pub topics: Option<PathBuf>,
    /// Corpus matrix file, or a directory of `<id>.vec` files.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Id list for a matrix corpus; defaults to the matrix path with `.ids`.
    #[arg(long)]
    pub ids: Option<PathBuf>,
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Parent of the per-invocation output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyName>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub tpr: Option<f64>,
    #[arg(long)]
    pub fpr: Option<f64>,
    /// World spec file for `simulate` and `ablate`.
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Number of seeds for `ablate`.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub video_dir: Option<PathBuf>,
    #[arg(long)]
    pub video_ext: Option<String>,
    /// Attach this many frames per candidate instead of a video path.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Directory holding the prompt templates.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),*) => {
        Settings { $($field: $top.$field.clone().or($base.$field.clone()),)* }
    };
}

impl Settings {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// `flags` over `self`.
    pub fn overlay(&self, flags: &Settings) -> Settings {
        overlay!(
            self, flags, t, k, l, parallelism, judge_parallelism, seed, backend, endpoint, model,
            embedding_endpoint, embedding_model, topics, corpus, ids, qrels, out, policy, tau,
            alpha, tpr, fpr, world, seeds, video_dir, video_ext, frames, prompts
        )
    }

    /// Fills the defaults of every knob that has one.
    pub fn effective(&self) -> Settings {
        let engine = EngineConfig::default();
        let policy = PolicyConfig::default();
        let tau = match policy.orchestrator {
            OrchestratorPolicy::Threshold { tau } => tau,
            _ => unreachable!("default policy is a threshold"),
        };
        let backend = self.backend.unwrap_or(Backend::Sim);
        Settings {
            t: Some(self.t.unwrap_or(engine.max_iterations())),
            k: Some(self.k.unwrap_or(engine.examination_length())),
            l: Some(self.l.unwrap_or(engine.submission_length())),
            parallelism: Some(self.parallelism.unwrap_or(1)),
            judge_parallelism: Some(self.judge_parallelism.unwrap_or(1)),
            seed: Some(self.seed.unwrap_or(0)),
            backend: Some(backend),
            policy: Some(self.policy.unwrap_or(match backend {
                Backend::Sim => PolicyName::Threshold,
                Backend::Http => PolicyName::Llm,
            })),
            tau: Some(self.tau.unwrap_or(tau)),
            alpha: Some(self.alpha.unwrap_or(policy.alpha)),
            tpr: Some(self.tpr.unwrap_or(policy.tpr)),
            fpr: Some(self.fpr.unwrap_or(policy.fpr)),
            out: Some(self.out.clone().unwrap_or_else(|| PathBuf::from("runs"))),
            ..self.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings always serialize")
    }

    /// Engine config of an [`effective`](Self::effective) settings value.
    pub fn engine(&self) -> anyhow::Result<EngineConfig> {
        let (t, k, l) = (self.t.unwrap_or(60), self.k.unwrap_or(50), self.l.unwrap_or(1000));
        EngineConfig::new(t, k, l).map_err(|e| anyhow::anyhow!("T={t} k={k} L={l}: {e}"))
    }

    pub fn policy_config(&self) -> PolicyConfig {
        let orchestrator = match self.policy.unwrap_or(PolicyName::Threshold) {
            PolicyName::Threshold => OrchestratorPolicy::Threshold {
                tau: self.tau.unwrap_or(0.2),
            },
            PolicyName::Exploit => OrchestratorPolicy::AlwaysExploit,
            PolicyName::Explore => OrchestratorPolicy::AlwaysExplore,
            PolicyName::Llm => OrchestratorPolicy::Llm,
        };
        let d = PolicyConfig::default();
        PolicyConfig {
            orchestrator,
            alpha: self.alpha.unwrap_or(d.alpha),
            tpr: self.tpr.unwrap_or(d.tpr),
            fpr: self.fpr.unwrap_or(d.fpr),
        }
    }
}
