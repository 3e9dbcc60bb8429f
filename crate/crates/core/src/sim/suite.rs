use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::world::{generate_world, SimTopic, SyntheticWorld, WorldParams};
use super::SimError;
use crate::agents::{
    CentroidNudge, ExactRetriever, FixedPolicy, NoisyReasoner, OrchestrationAgent,
    ThresholdOrchestrator,
};
use crate::domain::{ActionKind, CandidateId, EngineConfig, ExclusionSet, SubmissionList};
use crate::eval::{average_precision, paired_randomization_test, Qrels};
use crate::orchestrator::{finalize_submission, run_topic, AgentSet, RunTrace, TopicRun};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum OrchestratorPolicy {
    AlwaysExploit,
    AlwaysExplore,
    Threshold { tau: f64 },
    /// A language-model orchestrator supplied by the caller.
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub orchestrator: OrchestratorPolicy,
    /// Centroid-nudge step.
    pub alpha: f64,
    /// Simulated judge true/false positive rates.
    pub tpr: f64,
    pub fpr: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            orchestrator: OrchestratorPolicy::Threshold { tau: 0.2 },
            alpha: 0.5,
            tpr: 1.0,
            fpr: 0.0,
        }
    }
}

impl PolicyConfig {
    pub fn with_orchestrator(mut self, o: OrchestratorPolicy) -> Self {
        self.orchestrator = o;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(SimError::InvalidParams(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("tpr", self.tpr)?;
        unit("fpr", self.fpr)?;
        if let OrchestratorPolicy::Threshold { tau } = self.orchestrator {
            unit("tau", tau)?;
        }
        Ok(())
    }
}

/// Agents for one world under `policy`. Judgment noise is keyed by `seed`,
/// so arms sharing a seed see the same judge mistakes.
pub fn agents_for(
    world: &SyntheticWorld,
    policy: &PolicyConfig,
    seed: u64,
    llm: Option<Arc<dyn OrchestrationAgent>>,
) -> Result<AgentSet, SimError> {
    policy.validate()?;
    let orchestration: Arc<dyn OrchestrationAgent> = match policy.orchestrator {
        OrchestratorPolicy::AlwaysExploit => Arc::new(FixedPolicy(ActionKind::Exploit)),
        OrchestratorPolicy::AlwaysExplore => Arc::new(FixedPolicy(ActionKind::Explore)),
        OrchestratorPolicy::Threshold { tau } => Arc::new(ThresholdOrchestrator::new(tau)?),
        OrchestratorPolicy::Llm => llm.ok_or(SimError::NeedsBackend)?,
    };
    Ok(AgentSet {
        retrieval: Arc::new(ExactRetriever::new(world.index.clone())),
        reasoning: Arc::new(NoisyReasoner::new(
            world.qrels.clone(),
            policy.tpr,
            policy.fpr,
            seeds::derive(seed, "judge"),
        )?),
        reformulation: Arc::new(CentroidNudge::new(world.index.clone(), policy.alpha)?),
        orchestration,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arm", rename_all = "snake_case")]
pub enum Arm {
    /// The top `L` of the initial ranking, no loop.
    RetrievalOnly,
    Loop(PolicyConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub name: String,
    pub arm: Arm,
}

impl ArmSpec {
    pub fn retrieval_only() -> Self {
        Self {
            name: "retrieval_only".into(),
            arm: Arm::RetrievalOnly,
        }
    }

    pub fn looped(name: impl Into<String>, policy: PolicyConfig) -> Self {
        Self {
            name: name.into(),
            arm: Arm::Loop(policy),
        }
    }
}

/// Retrieval, then judging with exploit only, then reformulating every
/// iteration, then the full orchestrated loop. `base` supplies noise, step
/// size and the full arm's orchestrator.
pub fn stacked_arms(base: &PolicyConfig) -> Vec<ArmSpec> {
    let full = match base.orchestrator {
        OrchestratorPolicy::AlwaysExploit | OrchestratorPolicy::AlwaysExplore => {
            PolicyConfig::default().orchestrator
        }
        o => o,
    };
    vec![
        ArmSpec::retrieval_only(),
        ArmSpec::looped("+reasoning", base.with_orchestrator(OrchestratorPolicy::AlwaysExploit)),
        ArmSpec::looped("+reformulation", base.with_orchestrator(OrchestratorPolicy::AlwaysExplore)),
        ArmSpec::looped("full", base.with_orchestrator(full)),
    ]
}

/// The outcome of one arm on one topic.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub topic: String,
    pub submission: SubmissionList,
    /// Absent for retrieval-only.
    pub trace: Option<RunTrace>,
}

fn retrieval_only(world: &SyntheticWorld, topic: &SimTopic, limit: usize) -> Result<SubmissionList, SimError> {
    let list = ExactRetriever::new(world.index.clone()).search(&topic.query, &ExclusionSet::new(), limit);
    Ok(finalize_submission(
        &SubmissionList::new(limit)?,
        &list,
        &ExclusionSet::new(),
        limit,
    ))
}

fn run_one(
    world: &SyntheticWorld,
    arm: &ArmSpec,
    agents: Option<&AgentSet>,
    config: EngineConfig,
    topic: &SimTopic,
) -> Result<SimRun, SimError> {
    match (&arm.arm, agents) {
        (Arm::RetrievalOnly, _) => Ok(SimRun {
            topic: topic.id.clone(),
            submission: retrieval_only(world, topic, config.submission_length())?,
            trace: None,
        }),
        (Arm::Loop(_), Some(agents)) => {
            let run = TopicRun::new(topic.id.clone(), topic.initial_query(), config, agents.clone());
            let trace = run_topic(&run);
            Ok(SimRun {
                topic: topic.id.clone(),
                submission: trace.submission.clone(),
                trace: Some(trace),
            })
        }
        (Arm::Loop(_), None) => unreachable!("loop arms always have agents"),
    }
}

/// Runs one arm on every topic of `world`, topics in parallel on the
/// current rayon pool. Output follows topic order.
pub fn simulate(
    world: &SyntheticWorld,
    arm: &ArmSpec,
    config: EngineConfig,
    seed: u64,
    llm: Option<Arc<dyn OrchestrationAgent>>,
) -> Result<Vec<SimRun>, SimError> {
    if world.index.len() < config.examination_length() {
        return Err(SimError::InvalidParams(format!(
            "corpus of {} is smaller than k={}",
            world.index.len(),
            config.examination_length()
        )));
    }
    let agents = match &arm.arm {
        Arm::RetrievalOnly => None,
        Arm::Loop(policy) => Some(agents_for(world, policy, seed, llm)?),
    };
    world
        .topics
        .par_iter()
        .map(|t| run_one(world, arm, agents.as_ref(), config, t))
        .collect()
}

/// Cumulative ground-truth count at the end of each of `bins` bins of
/// `bin` ranks. A ranking that ends early stays flat.
pub fn gt_curve<'a>(
    ranking: impl IntoIterator<Item = &'a CandidateId>,
    topic: &str,
    qrels: &Qrels,
    bin: usize,
    bins: usize,
) -> Vec<usize> {
    let mut curve = vec![0usize; bins];
    let mut found = 0;
    let mut ranking = ranking.into_iter();
    for slot in curve.iter_mut() {
        for id in ranking.by_ref().take(bin) {
            found += usize::from(qrels.is_relevant(topic, id));
        }
        *slot = found;
    }
    curve
}

/// [`gt_curve`] over a finished trace's submission in bins of `k` up to `L`.
pub fn accumulated_gt_curve(trace: &RunTrace, qrels: &Qrels) -> Vec<usize> {
    let k = trace.config.examination_length();
    let bins = trace.config.submission_length().div_ceil(k);
    gt_curve(trace.submission.ids(), &trace.topic, qrels, k, bins)
}

/// True when `a` is at least `b` at every bin.
pub fn dominates(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x >= y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub config: EngineConfig,
    /// `(T, k)` pairs for the sensitivity grid, `L` held fixed.
    pub grid: Vec<(usize, usize)>,
    /// Arm run over the grid; defaults to the last arm.
    pub sensitivity_arm: Option<String>,
    pub parallelism: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            config: EngineConfig::default(),
            grid: vec![(60, 50), (30, 100), (50, 100)],
            sensitivity_arm: None,
            parallelism: rayon::current_num_threads(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicScore {
    pub seed: u64,
    pub topic: String,
    pub arm: String,
    pub ap: f64,
    pub curve: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub name: String,
    pub mean_ap: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean AP over each seed's topics, in seed order.
    pub per_seed: Vec<f64>,
    /// Accumulated-GT curve summed over each seed's topics, in seed order.
    pub seed_curves: Vec<Vec<usize>>,
    /// Curve averaged over every (seed, topic).
    pub mean_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmComparison {
    pub baseline: String,
    pub arm: String,
    pub mean_diff: f64,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub max_iterations: usize,
    pub examination_length: usize,
    pub arm: String,
    pub mean_ap: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub world: WorldParams,
    pub seeds: Vec<u64>,
    pub config: EngineConfig,
    pub arms: Vec<ArmSummary>,
    pub comparisons: Vec<ArmComparison>,
    pub sensitivity: Vec<SensitivityRow>,
    pub topics: Vec<TopicScore>,
}

const Z95: f64 = 1.959_963_984_540_054;

/// Mean with a normal-approximation 95% interval.
fn mean_ci(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, mean, mean);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = Z95 * (var / n).sqrt();
    (mean, mean - half, mean + half)
}

impl SuiteReport {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.name == name)
    }

    /// Per-topic APs of `arm` in (seed, topic) order.
    pub fn scores(&self, arm: &str) -> Vec<f64> {
        self.topics.iter().filter(|t| t.arm == arm).map(|t| t.ap).collect()
    }

    /// `(max - min) / mean` of the sensitivity means.
    pub fn sensitivity_spread(&self) -> Option<f64> {
        if self.sensitivity.is_empty() {
            return None;
        }
        let means: Vec<f64> = self.sensitivity.iter().map(|r| r.mean_ap).collect();
        let max = means.iter().cloned().fold(f64::MIN, f64::max);
        let min = means.iter().cloned().fold(f64::MAX, f64::min);
        let mean = means.iter().sum::<f64>() / means.len() as f64;
        Some(if mean > 0.0 { (max - min) / mean } else { 0.0 })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("arm\tmean_ap\tci_low\tci_high\tseeds\n");
        for a in &self.arms {
            out += &format!(
                "{}\t{:.4}\t{:.4}\t{:.4}\t{}\n",
                a.name,
                a.mean_ap,
                a.ci_low,
                a.ci_high,
                a.per_seed.len()
            );
        }
        if !self.comparisons.is_empty() {
            out += "\nbaseline\tarm\tmean_diff\twins\tlosses\tties\tp_value\n";
            for c in &self.comparisons {
                out += &format!(
                    "{}\t{}\t{:+.4}\t{}\t{}\t{}\t{:.4}\n",
                    c.baseline, c.arm, c.mean_diff, c.wins, c.losses, c.ties, c.p_value
                );
            }
        }
        if !self.sensitivity.is_empty() {
            out += "\nT\tk\tarm\tmean_ap\tci_low\tci_high\n";
            for r in &self.sensitivity {
                out += &format!(
                    "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\n",
                    r.max_iterations, r.examination_length, r.arm, r.mean_ap, r.ci_low, r.ci_high
                );
            }
        }
        out
    }

    /// Mean accumulated-GT curve per arm: one row per bin.
    pub fn curves_tsv(&self) -> String {
        let k = self.config.examination_length();
        let mut out = String::from("bin\tend_rank");
        for a in &self.arms {
            out += &format!("\t{}", a.name);
        }
        out.push('\n');
        let bins = self.arms.first().map_or(0, |a| a.mean_curve.len());
        for b in 0..bins {
            out += &format!("{}\t{}", b + 1, (b + 1) * k);
            for a in &self.arms {
                out += &format!("\t{:.3}", a.mean_curve[b]);
            }
            out.push('\n');
        }
        out
    }
}

fn score_runs(
    world: &SyntheticWorld,
    seed: u64,
    arm: &str,
    runs: &[SimRun],
    config: &EngineConfig,
) -> Result<Vec<TopicScore>, SimError> {
    let k = config.examination_length();
    let bins = config.submission_length().div_ceil(k);
    runs.iter()
        .map(|r| {
            let ranking: Vec<CandidateId> = r.submission.ids().cloned().collect();
            Ok(TopicScore {
                seed,
                topic: r.topic.clone(),
                arm: arm.to_string(),
                ap: average_precision(&ranking, &world.qrels, &r.topic)?,
                curve: gt_curve(&ranking, &r.topic, &world.qrels, k, bins),
            })
        })
        .collect()
}

fn run_seed(
    params: &WorldParams,
    seed: u64,
    arms: &[ArmSpec],
    options: &SuiteOptions,
    sensitivity_arm: &ArmSpec,
) -> Result<(Vec<TopicScore>, Vec<Vec<TopicScore>>), SimError> {
    let world = generate_world(&params.clone().with_seed(seed))?;
    let policy_seed = seeds::derive(seed, "policy");
    let main: Vec<Vec<TopicScore>> = arms
        .par_iter()
        .map(|arm| {
            let runs = simulate(&world, arm, options.config, policy_seed, None)?;
            score_runs(&world, seed, &arm.name, &runs, &options.config)
        })
        .collect::<Result<_, SimError>>()?;
    let mut grid = Vec::with_capacity(options.grid.len());
    for &(t, k) in &options.grid {
        let config = EngineConfig::new(t, k, options.config.submission_length())?;
        let scores = if config == options.config {
            let i = arms.iter().position(|a| a.name == sensitivity_arm.name).expect("arm is listed");
            main[i].clone()
        } else {
            let runs = simulate(&world, sensitivity_arm, config, policy_seed, None)?;
            score_runs(&world, seed, &sensitivity_arm.name, &runs, &config)?
        };
        grid.push(scores);
    }
    Ok((main.into_iter().flatten().collect(), grid))
}

/// Runs every arm on a fresh world per seed and aggregates mean AP,
/// pairwise comparisons against the first arm, and the `(T, k)` grid.
pub fn ablation_suite(
    params: &WorldParams,
    arms: &[ArmSpec],
    seeds: &[u64],
    options: &SuiteOptions,
) -> Result<SuiteReport, SimError> {
    if arms.is_empty() {
        return Err(SimError::InvalidParams("at least one arm is required".into()));
    }
    if seeds.is_empty() {
        return Err(SimError::InvalidParams("at least one seed is required".into()));
    }
    if options.parallelism == 0 {
        return Err(SimError::InvalidParams("parallelism must be at least 1".into()));
    }
    let sensitivity_arm = match &options.sensitivity_arm {
        Some(name) => arms
            .iter()
            .find(|a| &a.name == name)
            .ok_or_else(|| SimError::InvalidParams(format!("unknown arm {name}")))?,
        None => arms.last().expect("non-empty"),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallelism)
        .build()
        .map_err(|e| SimError::InvalidParams(e.to_string()))?;
    let per_seed: Vec<(Vec<TopicScore>, Vec<Vec<TopicScore>>)> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| run_seed(params, s, arms, options, sensitivity_arm))
            .collect::<Result<_, SimError>>()
    })?;

    let topics: Vec<TopicScore> = per_seed.iter().flat_map(|(m, _)| m.iter().cloned()).collect();
    let summaries = arms
        .iter()
        .map(|arm| summarize(&arm.name, seeds, &topics))
        .collect();

    let baseline = &arms[0].name;
    let base_scores: Vec<f64> = topics.iter().filter(|t| &t.arm == baseline).map(|t| t.ap).collect();
    let comparisons = arms[1..]
        .iter()
        .map(|arm| {
            let scores: Vec<f64> = topics.iter().filter(|t| t.arm == arm.name).map(|t| t.ap).collect();
            let diffs: Vec<f64> = scores.iter().zip(&base_scores).map(|(a, b)| a - b).collect();
            ArmComparison {
                baseline: baseline.clone(),
                arm: arm.name.clone(),
                mean_diff: diffs.iter().sum::<f64>() / diffs.len() as f64,
                wins: diffs.iter().filter(|d| **d > 0.0).count(),
                losses: diffs.iter().filter(|d| **d < 0.0).count(),
                ties: diffs.iter().filter(|d| **d == 0.0).count(),
                p_value: paired_randomization_test(&scores, &base_scores, seeds::derive(seeds[0], &arm.name)),
            }
        })
        .collect();

    let sensitivity = options
        .grid
        .iter()
        .enumerate()
        .map(|(g, &(t, k))| {
            let scores: Vec<TopicScore> = per_seed.iter().flat_map(|(_, grid)| grid[g].iter().cloned()).collect();
            let s = summarize(&sensitivity_arm.name, seeds, &scores);
            SensitivityRow {
                max_iterations: t,
                examination_length: k,
                arm: sensitivity_arm.name.clone(),
                mean_ap: s.mean_ap,
                ci_low: s.ci_low,
                ci_high: s.ci_high,
            }
        })
        .collect();

    Ok(SuiteReport {
        world: params.clone(),
        seeds: seeds.to_vec(),
        config: options.config,
        arms: summaries,
        comparisons,
        sensitivity,
        topics,
    })
}

/// Aggregates one arm. The interval is over seeds, or over topics when
/// only one seed ran.
fn summarize(arm: &str, seeds: &[u64], topics: &[TopicScore]) -> ArmSummary {
    let mine: Vec<&TopicScore> = topics.iter().filter(|t| t.arm == arm).collect();
    let bins = mine.first().map_or(0, |t| t.curve.len());
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut seed_curves = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let of_seed: Vec<&&TopicScore> = mine.iter().filter(|t| t.seed == s).collect();
        per_seed.push(of_seed.iter().map(|t| t.ap).sum::<f64>() / of_seed.len() as f64);
        let mut curve = vec![0usize; bins];
        for t in &of_seed {
            curve.iter_mut().zip(&t.curve).for_each(|(c, x)| *c += x);
        }
        seed_curves.push(curve);
    }
    let all: Vec<f64> = mine.iter().map(|t| t.ap).collect();
    let (mean_ap, ci_low, ci_high) = if seeds.len() > 1 {
        mean_ci(&per_seed)
    } else {
        mean_ci(&all)
    };
    let mut mean_curve = vec![0.0; bins];
    for t in &mine {
        mean_curve.iter_mut().zip(&t.curve).for_each(|(c, &x)| *c += x as f64);
    }
    mean_curve.iter_mut().for_each(|c| *c /= mine.len().max(1) as f64);
    ArmSummary {
        name: arm.to_string(),
        mean_ap,
        ci_low,
        ci_high,
        per_seed,
        seed_curves,
        mean_curve,
    }
}
