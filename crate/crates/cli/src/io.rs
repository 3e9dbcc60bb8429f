use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use magent::agents::CorpusIndex;
use magent::domain::Query;

/// One line of a topics file.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicLine {
    pub topic: String,
    pub query: String,
    pub vector: Option<Vec<f32>>,
}

impl TopicLine {
    pub fn query(&self) -> anyhow::Result<Query> {
        let q = Query::original(self.query.clone())?;
        Ok(match &self.vector {
            Some(v) => q.with_embedding(v.clone()),
            None => q,
        })
    }
}

/// `topic<TAB>query[<TAB>vector]`, blank lines and `#` comments skipped.
pub fn parse_topics(text: &str, source: &Path) -> anyhow::Result<Vec<TopicLine>> {
    let mut out: Vec<TopicLine> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let at = || format!("{}:{}", source.display(), i + 1);
        let mut cols = line.split('\t');
        let topic = cols.next().unwrap_or_default().trim();
        let query = cols.next().map(str::trim).unwrap_or_default();
        if topic.is_empty() || query.is_empty() {
            bail!("{}: expected topic<TAB>query", at());
        }
        let vector = match cols.next() {
            Some(v) => Some(
                v.split_whitespace()
                    .map(|x| x.parse::<f32>())
                    .collect::<Result<Vec<_>, _>>()
                    .with_context(at)?,
            ),
            None => None,
        };
        if out.iter().any(|t| t.topic == topic) {
            bail!("{}: topic {topic} listed twice", at());
        }
        out.push(TopicLine {
            topic: topic.to_string(),
            query: query.to_string(),
            vector,
        });
    }
    if out.is_empty() {
        bail!("{}: no topics", source.display());
    }
    Ok(out)
}

pub fn read_topics(path: &Path) -> anyhow::Result<Vec<TopicLine>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading topics {}", path.display()))?;
    parse_topics(&text, path)
}

pub fn format_topics(lines: &[TopicLine]) -> String {
    let mut out = String::new();
    for t in lines {
        out += &format!("{}\t{}", t.topic, t.query);
        if let Some(v) = &t.vector {
            let cols: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            out += &format!("\t{}", cols.join(" "));
        }
        out.push('\n');
    }
    out
}

pub fn load_corpus(corpus: &Path, ids: Option<&Path>) -> anyhow::Result<CorpusIndex> {
    if corpus.is_dir() {
        return CorpusIndex::load_dir(corpus).with_context(|| format!("loading corpus {}", corpus.display()));
    }
    let ids = ids.map_or_else(|| corpus.with_extension("ids"), Path::to_path_buf);
    CorpusIndex::load_matrix(corpus, &ids)
        .with_context(|| format!("loading corpus {} with ids {}", corpus.display(), ids.display()))
}

/// A fresh `<parent>/<command>-<UTC timestamp>` directory.
pub fn output_dir(parent: &Path, command: &str) -> anyhow::Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = parent.join(format!("{command}-{stamp}"));
    let mut dir = base.clone();
    let mut n = 1;
    while dir.exists() {
        n += 1;
        dir = PathBuf::from(format!("{}-{n}", base.display()));
    }
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Topic ids made safe as file names.
pub fn file_stem(topic: &str) -> String {
    topic
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topics_parse_with_and_without_vectors() {
        let text = "# header\n1501\tfind a dog\n\n1502\ta door opening\t0.6 0.8\n";
        let t = parse_topics(text, Path::new("t.tsv")).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].vector, None);
        assert_eq!(t[1].vector, Some(vec![0.6, 0.8]));
        assert_eq!(parse_topics(&format_topics(&t), Path::new("x")).unwrap(), t);
    }

    #[test]
    fn topic_errors_name_the_line() {
        let err = parse_topics("a\tq\nb\n", Path::new("t.tsv")).unwrap_err();
        assert!(err.to_string().contains("t.tsv:2"), "{err}");
        let err = parse_topics("a\tq\t0.1 x\n", Path::new("t.tsv")).unwrap_err();
        assert!(format!("{err:#}").contains("t.tsv:1"), "{err:#}");
        assert!(parse_topics("a\tq\na\tr\n", Path::new("t")).is_err());
        assert!(parse_topics("\n", Path::new("t")).is_err());
    }

    #[test]
    fn stems_are_path_safe() {
        assert_eq!(file_stem("a/b c"), "a_b_c");
    }
}
