use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};

use magent::agents::{
    CentroidNudge, CorpusIndex, ExactRetriever, FixedPolicy, HttpEncoder, LlmOrchestrator,
    LlmReasoner, LlmReformulator, NoisyReasoner, OrchestrationAgent, ThresholdOrchestrator,
    VideoEvidence, VideoLocator,
};
use magent::domain::{ActionKind, CandidateId};
use magent::eval::{average_precision, compare_runs, score_runs, Metric, Qrels, RunFile, SamplingRates};
use magent::llm_gateway::{ChatClient, ClientConfig, PromptSet, API_KEY_ENV};
use magent::orchestrator::{
    narrate, run_batch_with_sinks, AgentSet, JsonlTraceWriter, NullSink, RunTrace, Termination,
    TopicRun, TraceSink,
};
use magent::seeds;
use magent::sim::{
    ablation_suite, accumulated_gt_curve, generate_world, simulate, stacked_arms, ArmSpec,
    OrchestratorPolicy, SuiteOptions, WorldParams,
};

use crate::io::{file_stem, format_topics, load_corpus, output_dir, read_topics, TopicLine};
use crate::settings::{Backend, PolicyName, Settings};

/// How a command ended when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    /// Some topics failed; the rest were written.
    Partial,
}

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or unreadable inputs; nothing was written.
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

pub type CmdResult = Result<Outcome, Failure>;

trait Classify<T> {
    fn input(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Input(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, Failure> {
    value.as_ref().ok_or_else(|| Failure::Input(anyhow!("{flag} is required")))
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .runtime()
}

fn read_qrels(path: &Path) -> anyhow::Result<Qrels> {
    Qrels::read(path).with_context(|| format!("reading qrels {}", path.display()))
}

fn chat_client(s: &Settings) -> anyhow::Result<Arc<ChatClient>> {
    let mut config = ClientConfig::from_env();
    if let Some(e) = &s.endpoint {
        config.endpoint = e.clone();
    }
    if let Some(m) = &s.model {
        config.model = m.clone();
    }
    let mut client = ChatClient::new(config)?;
    if let Ok(key) = std::env::var(API_KEY_ENV) {
        client = client.with_api_key(key);
    }
    Ok(Arc::new(client))
}

fn prompts(s: &Settings) -> anyhow::Result<Arc<PromptSet>> {
    let set = match &s.prompts {
        Some(dir) => PromptSet::load_dir(dir)?,
        None => PromptSet::load_default()?,
    };
    Ok(Arc::new(set))
}

fn build_agents(s: &Settings, index: &Arc<CorpusIndex>, qrels: Option<&Arc<Qrels>>) -> anyhow::Result<AgentSet> {
    let policy = s.policy_config();
    policy.validate()?;
    let backend = s.backend.unwrap_or(Backend::Sim);
    let needs_client = backend == Backend::Http || s.policy == Some(PolicyName::Llm);
    let client = if needs_client { Some(chat_client(s)?) } else { None };

    let orchestration: Arc<dyn OrchestrationAgent> = match policy.orchestrator {
        OrchestratorPolicy::AlwaysExploit => Arc::new(FixedPolicy(ActionKind::Exploit)),
        OrchestratorPolicy::AlwaysExplore => Arc::new(FixedPolicy(ActionKind::Explore)),
        OrchestratorPolicy::Threshold { tau } => Arc::new(ThresholdOrchestrator::new(tau)?),
        OrchestratorPolicy::Llm => Arc::new(LlmOrchestrator::new(
            client.clone().expect("client built for llm policy"),
            prompts(s)?,
        )),
    };

    match backend {
        Backend::Sim => {
            let qrels = qrels.ok_or_else(|| anyhow!("--qrels is required with the sim backend"))?;
            Ok(AgentSet {
                retrieval: Arc::new(ExactRetriever::new(index.clone())),
                reasoning: Arc::new(NoisyReasoner::new(
                    qrels.clone(),
                    policy.tpr,
                    policy.fpr,
                    seeds::derive(s.seed.unwrap_or(0), "judge"),
                )?),
                reformulation: Arc::new(CentroidNudge::new(index.clone(), policy.alpha)?),
                orchestration,
            })
        }
        Backend::Http => {
            let client = client.expect("client built for http backend");
            let prompts = prompts(s)?;
            let video_dir = s
                .video_dir
                .clone()
                .ok_or_else(|| anyhow!("--video-dir is required with the http backend"))?;
            let embedding = s
                .embedding_endpoint
                .clone()
                .ok_or_else(|| anyhow!("--embedding-endpoint is required with the http backend"))?;
            let locator = VideoLocator::new(video_dir, s.video_ext.clone().unwrap_or_else(|| "mp4".into()));
            let evidence = match s.frames {
                Some(count) => VideoEvidence::Frames { count },
                None => VideoEvidence::Path,
            };
            let encoder = HttpEncoder::new(
                embedding,
                s.embedding_model.clone().unwrap_or_else(|| "default".into()),
                Duration::from_secs(60),
            );
            Ok(AgentSet {
                retrieval: Arc::new(ExactRetriever::new(index.clone()).with_encoder(Arc::new(encoder))),
                reasoning: Arc::new(
                    LlmReasoner::new(client.clone(), prompts.clone(), locator).with_evidence(evidence),
                ),
                reformulation: Arc::new(LlmReformulator::new(client, prompts)),
                orchestration,
            })
        }
    }
}

fn check_vectors(topics: &[TopicLine], index: &CorpusIndex, need: bool) -> anyhow::Result<()> {
    for t in topics {
        match &t.vector {
            Some(v) if v.len() != index.dimension() => {
                return Err(anyhow!(
                    "topic {}: vector has {} dimensions, corpus has {}",
                    t.topic,
                    v.len(),
                    index.dimension()
                ))
            }
            None if need => {
                return Err(anyhow!("topic {}: the sim backend needs a query vector column", t.topic))
            }
            _ => {}
        }
    }
    Ok(())
}

fn run_file(traces: &[RunTrace]) -> anyhow::Result<RunFile> {
    let mut run = RunFile::new();
    for t in traces {
        run.add_submission(&t.topic, &t.submission, "magent")?;
    }
    Ok(run)
}

fn termination_name(t: Termination) -> String {
    serde_json::to_value(t)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Runs the loop over every topic and writes the run file, one trace per
/// topic and a status table.
pub fn cmd_run(s: &Settings) -> CmdResult {
    let topics_path = required(&s.topics, "--topics")?;
    let corpus_path = required(&s.corpus, "--corpus")?;
    let config = s.engine().input()?;
    let parallelism = s.parallelism.unwrap_or(1);
    if parallelism == 0 {
        return Err(Failure::Input(anyhow!("--parallelism must be at least 1")));
    }
    let topics = read_topics(topics_path).input()?;
    let index = Arc::new(load_corpus(corpus_path, s.ids.as_deref()).input()?);
    let qrels = s.qrels.as_deref().map(read_qrels).transpose().input()?.map(Arc::new);
    check_vectors(&topics, &index, s.backend.unwrap_or(Backend::Sim) == Backend::Sim).input()?;
    let agents = build_agents(s, &index, qrels.as_ref()).input()?;
    let runs = topics
        .iter()
        .map(|t| {
            Ok(TopicRun::new(t.topic.clone(), t.query()?, config, agents.clone())
                .with_judge_parallelism(s.judge_parallelism.unwrap_or(1)))
        })
        .collect::<anyhow::Result<Vec<_>>>()
        .input()?;

    let dir = output_dir(s.out.as_deref().unwrap_or(Path::new("runs")), "run").runtime()?;
    write(&dir, "config.toml", s.to_toml())?;
    let trace_dir = dir.join("traces");
    std::fs::create_dir_all(&trace_dir).runtime()?;

    let partial_path = |topic: &str| trace_dir.join(format!("{}.partial.jsonl", file_stem(topic)));
    let sink_for = |run: &TopicRun| -> Box<dyn TraceSink> {
        match JsonlTraceWriter::create(partial_path(&run.topic)) {
            Ok(w) => Box::new(w),
            Err(err) => {
                tracing::warn!(topic = %run.topic, %err, "cannot stream trace");
                Box::new(NullSink)
            }
        }
    };
    let traces = run_batch_with_sinks(&runs, parallelism, &sink_for).runtime()?;

    let mut status = String::from("topic\ttermination\tsubmitted\tmatched\terror\n");
    let mut failed = 0;
    for t in &traces {
        write(&trace_dir, &format!("{}.json", file_stem(&t.topic)), t.to_json())?;
        let _ = std::fs::remove_file(partial_path(&t.topic));
        failed += usize::from(t.termination == Termination::Failed);
        status += &format!(
            "{}\t{}\t{}\t{}\t{}\n",
            t.topic,
            termination_name(t.termination),
            t.submission.len(),
            t.submission.matched_len(),
            t.error.as_deref().unwrap_or("")
        );
    }
    write(&dir, "status.tsv", &status)?;
    write(&dir, "run.txt", run_file(&traces).runtime()?.to_trec_string())?;

    if let Some(qrels) = &qrels {
        let mut scores = String::from("topic\tap\n");
        let mut sum = 0.0;
        for t in &traces {
            let ranking: Vec<CandidateId> = t.submission.ids().cloned().collect();
            let ap = average_precision(&ranking, qrels, &t.topic).runtime()?;
            sum += ap;
            scores += &format!("{}\t{ap:.4}\n", t.topic);
        }
        scores += &format!("mean\t{:.4}\n", sum / traces.len() as f64);
        write(&dir, "scores.tsv", &scores)?;
        print!("{scores}");
    }
    print!("{status}");
    println!("outputs: {}", dir.display());
    Ok(if failed > 0 { Outcome::Partial } else { Outcome::Complete })
}

fn world_params(s: &Settings) -> Result<WorldParams, Failure> {
    let mut params = match &s.world {
        Some(path) => WorldParams::read(path)
            .with_context(|| format!("reading world spec {}", path.display()))
            .input()?,
        None => WorldParams::default(),
    };
    if let Some(seed) = s.seed {
        params.seed = seed;
    }
    Ok(params)
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool, Failure> {
    if parallelism == 0 {
        return Err(Failure::Input(anyhow!("--parallelism must be at least 1")));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .runtime()
}

/// Generates a world, runs one policy over it and exports both, so the
/// exported corpus can be fed back to `run`.
pub fn cmd_simulate(s: &Settings) -> CmdResult {
    let params = world_params(s)?;
    let config = s.engine().input()?;
    let policy = s.policy_config();
    policy.validate().input()?;
    if policy.orchestrator == OrchestratorPolicy::Llm {
        return Err(Failure::Input(anyhow!("simulate runs simulated policies only; use run --backend http")));
    }
    let pool = pool(s.parallelism.unwrap_or(1))?;
    let world = generate_world(&params).input()?;
    let arm = ArmSpec::looped("sim", policy);
    let runs = pool
        .install(|| simulate(&world, &arm, config, seeds::derive(params.seed, "policy"), None))
        .runtime()?;

    let dir = output_dir(s.out.as_deref().unwrap_or(Path::new("runs")), "simulate").runtime()?;
    write(&dir, "config.toml", s.to_toml())?;
    let world_dir = dir.join("world");
    std::fs::create_dir_all(&world_dir).runtime()?;
    write(&world_dir, "world.toml", params.to_spec_string())?;
    world
        .index
        .save_matrix(world_dir.join("corpus.bin"), world_dir.join("corpus.ids"))
        .runtime()?;
    world.qrels.write(world_dir.join("qrels.txt")).runtime()?;
    let lines: Vec<TopicLine> = world
        .topics
        .iter()
        .map(|t| TopicLine {
            topic: t.id.clone(),
            query: t.initial_query().text().to_string(),
            vector: Some(t.query.clone()),
        })
        .collect();
    write(&world_dir, "topics.tsv", format_topics(&lines))?;

    let trace_dir = dir.join("traces");
    std::fs::create_dir_all(&trace_dir).runtime()?;
    let traces: Vec<RunTrace> = runs.into_iter().filter_map(|r| r.trace).collect();
    let mut summary = String::from("topic\trelevant\tap\ttermination\titerations\n");
    let mut curves = String::from("topic");
    let bins = config.submission_length().div_ceil(config.examination_length());
    for b in 1..=bins {
        curves += &format!("\t{}", b * config.examination_length());
    }
    curves.push('\n');
    let mut sum = 0.0;
    for (t, topic) in traces.iter().zip(&world.topics) {
        write(&trace_dir, &format!("{}.json", file_stem(&t.topic)), t.to_json())?;
        let ranking: Vec<CandidateId> = t.submission.ids().cloned().collect();
        let ap = average_precision(&ranking, &world.qrels, &t.topic).runtime()?;
        sum += ap;
        summary += &format!(
            "{}\t{}\t{ap:.4}\t{}\t{}\n",
            t.topic,
            topic.relevant,
            termination_name(t.termination),
            t.iterations.len()
        );
        let curve: Vec<String> = accumulated_gt_curve(t, &world.qrels).iter().map(usize::to_string).collect();
        curves += &format!("{}\t{}\n", t.topic, curve.join("\t"));
    }
    summary += &format!("mean\t\t{:.4}\t\t\n", sum / traces.len() as f64);
    write(&dir, "summary.tsv", &summary)?;
    write(&dir, "curves.tsv", &curves)?;
    write(&dir, "run.txt", run_file(&traces).runtime()?.to_trec_string())?;
    print!("{summary}");
    println!("outputs: {}", dir.display());
    Ok(Outcome::Complete)
}

/// Parses `stratum=rate` pairs.
fn sampling(rates: &[String]) -> anyhow::Result<SamplingRates> {
    let mut out = SamplingRates::default();
    for r in rates {
        let (stratum, rate) = r
            .split_once('=')
            .ok_or_else(|| anyhow!("--rate expects stratum=rate, got {r}"))?;
        out.rates.insert(stratum.to_string(), rate.parse().with_context(|| format!("--rate {r}"))?);
    }
    Ok(out)
}

pub fn cmd_evaluate(s: &Settings, runs: &[PathBuf], inferred: bool, rates: &[String]) -> CmdResult {
    let qrels_path = required(&s.qrels, "--qrels")?;
    if runs.is_empty() {
        return Err(Failure::Input(anyhow!("give at least one run file")));
    }
    let qrels = read_qrels(qrels_path).input()?;
    let mut loaded = Vec::with_capacity(runs.len());
    for path in runs {
        let run = RunFile::read(path)
            .with_context(|| format!("reading run {}", path.display()))
            .input()?;
        let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        let name = if loaded.iter().any(|(n, _): &(String, RunFile)| *n == name) {
            path.display().to_string()
        } else {
            name
        };
        loaded.push((name, run));
    }
    let metric = if inferred {
        let sampling = if rates.is_empty() {
            SamplingRates::complete_for(&qrels)
        } else {
            sampling(rates).input()?
        };
        Metric::InferredAp { sampling }
    } else {
        Metric::AveragePrecision
    };
    let report = if loaded.len() == 1 {
        score_runs(&loaded, &qrels, &metric)
    } else {
        compare_runs(&loaded, &qrels, &metric)
    }
    .input()?;
    let dir = output_dir(s.out.as_deref().unwrap_or(Path::new("runs")), "evaluate").runtime()?;
    write(&dir, "config.toml", s.to_toml())?;
    write(&dir, "report.tsv", report.to_tsv())?;
    write(&dir, "report.json", serde_json::to_string_pretty(&report).runtime()?)?;
    print!("{}", report.to_tsv());
    println!("outputs: {}", dir.display());
    Ok(Outcome::Complete)
}

pub fn cmd_ablate(s: &Settings) -> CmdResult {
    let params = world_params(s)?;
    let config = s.engine().input()?;
    let base = s.policy_config();
    if base.orchestrator == OrchestratorPolicy::Llm {
        return Err(Failure::Input(anyhow!("ablate runs simulated policies only")));
    }
    base.validate().input()?;
    let n = s.seeds.unwrap_or(20);
    if n == 0 {
        return Err(Failure::Input(anyhow!("--seeds must be at least 1")));
    }
    let seeds: Vec<u64> = (0..n as u64).map(|i| params.seed + i).collect();
    let options = SuiteOptions {
        config,
        parallelism: s.parallelism.unwrap_or(1),
        ..SuiteOptions::default()
    };
    if options.parallelism == 0 {
        return Err(Failure::Input(anyhow!("--parallelism must be at least 1")));
    }
    let report = ablation_suite(&params, &stacked_arms(&base), &seeds, &options).input()?;
    let dir = output_dir(s.out.as_deref().unwrap_or(Path::new("runs")), "ablate").runtime()?;
    write(&dir, "config.toml", s.to_toml())?;
    write(&dir, "world.toml", params.to_spec_string())?;
    write(&dir, "report.tsv", report.to_tsv())?;
    write(&dir, "report.json", report.to_json())?;
    write(&dir, "curves.tsv", report.curves_tsv())?;
    print!("{}", report.to_tsv());
    println!("outputs: {}", dir.display());
    Ok(Outcome::Complete)
}

pub fn cmd_trace(path: &Path, iteration: Option<usize>) -> CmdResult {
    let trace = RunTrace::read(path)
        .with_context(|| format!("reading trace {}", path.display()))
        .input()?;
    print!("{}", narrate(&trace, iteration));
    Ok(Outcome::Complete)
}
