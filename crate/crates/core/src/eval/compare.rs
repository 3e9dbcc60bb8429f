use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{average_precision, inferred_ap, mean_score, EvalError, Qrels, RunFile, SamplingRates};

/// Enumerate every sign assignment up to this many topics; sample beyond it.
const EXACT_LIMIT: usize = 20;
const SAMPLED_PERMUTATIONS: usize = 100_000;
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum Metric {
    AveragePrecision,
    InferredAp { sampling: SamplingRates },
}

impl Metric {
    pub fn label(&self) -> &'static str {
        match self {
            Metric::AveragePrecision => "ap",
            Metric::InferredAp { .. } => "infap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub a: String,
    pub b: String,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    /// Fraction of topics where `a` beats `b`.
    pub win_rate: f64,
    /// Two-sided paired randomization test on the mean difference.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metric: String,
    pub runs: Vec<String>,
    pub topics: Vec<String>,
    /// `scores[run][topic]`.
    pub scores: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub pairs: Vec<PairComparison>,
}

impl EvaluationReport {
    /// Per-topic table, then a `mean` row, then one line per run pair.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "topic\t{}", self.runs.join("\t"));
        for (t, topic) in self.topics.iter().enumerate() {
            let row: Vec<String> = self.scores.iter().map(|s| format!("{:.4}", s[t])).collect();
            let _ = writeln!(out, "{topic}\t{}", row.join("\t"));
        }
        let means: Vec<String> = self.means.iter().map(|m| format!("{m:.4}")).collect();
        let _ = writeln!(out, "mean\t{}", means.join("\t"));
        if !self.pairs.is_empty() {
            let _ = writeln!(out, "\nrun_a\trun_b\twins\tties\tlosses\twin_rate\tp_value");
            for p in &self.pairs {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{:.4}\t{:.6}",
                    p.a, p.b, p.wins, p.ties, p.losses, p.win_rate, p.p_value
                );
            }
        }
        out
    }
}

/// Scores every run on the topics shared by all runs and the qrels.
pub fn score_runs(
    runs: &[(String, RunFile)],
    qrels: &Qrels,
    metric: &Metric,
) -> Result<EvaluationReport, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::TooFewRuns { needed: 1, got: 0 });
    }
    let topics: Vec<String> = runs[0]
        .1
        .topics()
        .filter(|t| qrels.has_topic(t) && runs.iter().all(|(_, r)| r.topic(t).is_some()))
        .map(str::to_string)
        .collect();
    if topics.is_empty() {
        return Err(EvalError::DisjointTopics);
    }
    let mut scores = Vec::with_capacity(runs.len());
    for (_, run) in runs {
        let mut row = Vec::with_capacity(topics.len());
        for topic in &topics {
            let ranking = run.ranking(topic);
            row.push(match metric {
                Metric::AveragePrecision => average_precision(&ranking, qrels, topic)?,
                Metric::InferredAp { sampling } => inferred_ap(&ranking, qrels, topic, sampling)?,
            });
        }
        scores.push(row);
    }
    let means = scores
        .iter()
        .map(|s| mean_score(s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvaluationReport {
        metric: metric.label().to_string(),
        runs: runs.iter().map(|(n, _)| n.clone()).collect(),
        topics,
        scores,
        means,
        pairs: Vec::new(),
    })
}

/// [`score_runs`] plus win/tie/loss and significance for every run pair.
pub fn compare_runs(
    runs: &[(String, RunFile)],
    qrels: &Qrels,
    metric: &Metric,
) -> Result<EvaluationReport, EvalError> {
    if runs.len() < 2 {
        return Err(EvalError::TooFewRuns {
            needed: 2,
            got: runs.len(),
        });
    }
    let mut report = score_runs(runs, qrels, metric)?;
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let (a, b) = (&report.scores[i], &report.scores[j]);
            let mut pair = PairComparison {
                a: report.runs[i].clone(),
                b: report.runs[j].clone(),
                wins: 0,
                ties: 0,
                losses: 0,
                win_rate: 0.0,
                p_value: paired_randomization_test(a, b, (i * runs.len() + j) as u64),
            };
            for (x, y) in a.iter().zip(b) {
                if (x - y).abs() <= TIE_EPS {
                    pair.ties += 1;
                } else if x > y {
                    pair.wins += 1;
                } else {
                    pair.losses += 1;
                }
            }
            pair.win_rate = pair.wins as f64 / a.len() as f64;
            report.pairs.push(pair);
        }
    }
    Ok(report)
}

/// Two-sided paired randomization (sign-flip) test of the mean difference.
///
/// Exact over all `2^n` sign assignments for up to 20 pairs; otherwise a
/// seeded sample of 100,000 assignments with the usual `+1` correction.
pub fn paired_randomization_test(a: &[f64], b: &[f64], seed: u64) -> f64 {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    if n == 0 {
        return 1.0;
    }
    let observed = diffs.iter().sum::<f64>().abs();
    let at_least = |s: f64| s.abs() >= observed - TIE_EPS;
    if n <= EXACT_LIMIT {
        let total = 1u64 << n;
        let extreme = (0..total)
            .filter(|mask| {
                let s: f64 = diffs
                    .iter()
                    .enumerate()
                    .map(|(i, d)| if mask >> i & 1 == 1 { -d } else { *d })
                    .sum();
                at_least(s)
            })
            .count();
        return extreme as f64 / total as f64;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..SAMPLED_PERMUTATIONS {
        let s: f64 = diffs
            .iter()
            .map(|d| if rng.random::<bool>() { -d } else { *d })
            .sum();
        if at_least(s) {
            extreme += 1;
        }
    }
    (extreme + 1) as f64 / (SAMPLED_PERMUTATIONS + 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::CandidateId;
    use crate::eval::RunEntry;

    fn run_from(rankings: &[(&str, &[&str])]) -> RunFile {
        let mut run = RunFile::new();
        for (topic, ids) in rankings {
            let n = ids.len();
            let entries = ids
                .iter()
                .enumerate()
                .map(|(i, s)| RunEntry {
                    candidate: CandidateId::new(*s).unwrap(),
                    rank: i + 1,
                    score: (n - i) as f64,
                    tag: "t".into(),
                })
                .collect();
            run.add_topic(topic, entries).unwrap();
        }
        run
    }

    #[test]
    fn dominating_run_wins_everywhere_and_is_significant() {
        let mut qrels = Qrels::new();
        let topics: Vec<String> = (0..6).map(|i| format!("t{i}")).collect();
        for t in &topics {
            qrels.judge(t, CandidateId::new("rel").unwrap(), true).unwrap();
            qrels.judge(t, CandidateId::new("non").unwrap(), false).unwrap();
        }
        let good: Vec<(&str, &[&str])> = topics.iter().map(|t| (t.as_str(), &["rel", "non"][..])).collect();
        let bad: Vec<(&str, &[&str])> = topics.iter().map(|t| (t.as_str(), &["non", "rel"][..])).collect();
        let runs = vec![("good".to_string(), run_from(&good)), ("bad".to_string(), run_from(&bad))];
        let report = compare_runs(&runs, &qrels, &Metric::AveragePrecision).unwrap();
        let pair = &report.pairs[0];
        assert_eq!((pair.wins, pair.ties, pair.losses), (6, 0, 0));
        assert_eq!(pair.win_rate, 1.0);
        // Only the all-plus and all-minus assignments are as extreme: 2 / 64.
        assert!((pair.p_value - 2.0 / 64.0).abs() < 1e-12);
        assert!(pair.p_value < 0.05);
    }

    #[test]
    fn identical_runs_tie_with_p_one() {
        let mut qrels = Qrels::new();
        qrels.judge("1", CandidateId::new("a").unwrap(), true).unwrap();
        let run = run_from(&[("1", &["a", "b"])]);
        let runs = vec![("x".to_string(), run.clone()), ("y".to_string(), run)];
        let report = compare_runs(&runs, &qrels, &Metric::AveragePrecision).unwrap();
        assert_eq!(report.pairs[0].ties, 1);
        assert_eq!(report.pairs[0].p_value, 1.0);
    }

    #[test]
    fn disjoint_topics_error() {
        let mut qrels = Qrels::new();
        qrels.judge("1", CandidateId::new("a").unwrap(), true).unwrap();
        let runs = vec![
            ("x".to_string(), run_from(&[("2", &["a"])])),
            ("y".to_string(), run_from(&[("2", &["a"])])),
        ];
        assert!(matches!(
            compare_runs(&runs, &qrels, &Metric::AveragePrecision),
            Err(EvalError::DisjointTopics)
        ));
        assert!(compare_runs(&runs[..1], &qrels, &Metric::AveragePrecision).is_err());
    }

    #[test]
    fn win_rates_over_210_topics_match_hand_count() {
        // Topic i: run a ranks the relevant item first when i % 3 != 0,
        // run b when i % 5 == 0; both first (tie) when both conditions hold.
        let mut qrels = Qrels::new();
        let mut ra = Vec::new();
        let mut rb = Vec::new();
        let topics: Vec<String> = (0..210).map(|i| format!("{i}")).collect();
        for t in &topics {
            qrels.judge(t, CandidateId::new("rel").unwrap(), true).unwrap();
        }
        for (i, t) in topics.iter().enumerate() {
            let a_first: &[&str] = if i % 3 != 0 { &["rel", "x"] } else { &["x", "rel"] };
            let b_first: &[&str] = if i % 5 == 0 { &["rel", "x"] } else { &["x", "rel"] };
            ra.push((t.as_str(), a_first));
            rb.push((t.as_str(), b_first));
        }
        let runs = vec![("a".to_string(), run_from(&ra)), ("b".to_string(), run_from(&rb))];
        let report = compare_runs(&runs, &qrels, &Metric::AveragePrecision).unwrap();
        let (mut wins, mut ties, mut losses) = (0, 0, 0);
        for i in 0..210 {
            match (i % 3 != 0, i % 5 == 0) {
                (true, false) => wins += 1,
                (false, true) => losses += 1,
                _ => ties += 1,
            }
        }
        let p = &report.pairs[0];
        assert_eq!((p.wins, p.ties, p.losses), (wins, ties, losses));
        assert!((p.win_rate - wins as f64 / 210.0).abs() < 1e-12);
        assert!(p.p_value < 0.05);
    }

    #[test]
    fn sampled_test_is_seeded() {
        let a: Vec<f64> = (0..30).map(|i| (i % 7) as f64 * 0.1).collect();
        let b: Vec<f64> = (0..30).map(|i| (i % 5) as f64 * 0.1).collect();
        assert_eq!(
            paired_randomization_test(&a, &b, 3),
            paired_randomization_test(&a, &b, 3)
        );
    }
}
