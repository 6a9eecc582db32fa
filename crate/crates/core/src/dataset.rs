//! Corpus ingestion, vocabulary construction and copy-target alignment.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Entity, KGSubgraph, PredicateEdge};

/// Lowercases, treats `_` as a space and splits every other ASCII
/// punctuation character into its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() || ch == '_' {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_ascii_punctuation() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        } else {
            current.push(ch);
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// A `(subject, predicate, object)` triple of a [`KGSubgraph`]; the
/// predicate id indexes the graph's edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub subject: usize,
    pub predicate: usize,
    pub object: usize,
}

impl KGSubgraph {
    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.edges().iter().enumerate().map(|(k, e)| Triple {
            subject: e.source,
            predicate: k,
            object: e.target,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QGExample {
    pub id: String,
    pub graph: KGSubgraph,
    pub question: Vec<String>,
}

impl QGExample {
    pub fn answers(&self) -> Vec<usize> {
        self.graph.answers().collect()
    }
}

#[derive(Debug, Deserialize)]
struct RawExample {
    #[serde(default)]
    id: Option<String>,
    triples: Vec<[String; 3]>,
    answers: Vec<String>,
    question: String,
}

/// Builds one example from a corpus line.
pub fn parse_example(line: &str, default_id: &str) -> Result<QGExample> {
    let raw: RawExample = serde_json::from_str(line)?;
    let id = raw.id.unwrap_or_else(|| default_id.to_string());
    if raw.triples.is_empty() {
        return Err(Error::NoEdges { id });
    }
    let mut entities: Vec<Entity> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut entity_id = |text: &str, entities: &mut Vec<Entity>| {
        *index.entry(text.to_string()).or_insert_with(|| {
            entities.push(Entity {
                text: text.to_string(),
                is_answer: false,
            });
            entities.len() - 1
        })
    };
    let mut edges = Vec::with_capacity(raw.triples.len());
    for [s, p, o] in &raw.triples {
        let source = entity_id(s, &mut entities);
        let target = entity_id(o, &mut entities);
        edges.push(PredicateEdge {
            text: p.clone(),
            source,
            target,
        });
    }
    for answer in &raw.answers {
        match entities.iter_mut().find(|e| &e.text == answer) {
            Some(e) => e.is_answer = true,
            None => {
                return Err(Error::UnknownAnswer {
                    id,
                    answer: answer.clone(),
                })
            }
        }
    }
    let question = tokenize(&raw.question);
    if question.is_empty() {
        return Err(Error::EmptyQuestion { id });
    }
    let graph = KGSubgraph::new(entities, edges).map_err(|e| match e {
        Error::NoEdges { .. } => Error::NoEdges { id: id.clone() },
        other => other,
    })?;
    Ok(QGExample { id, graph, question })
}

/// Reads a JSON-lines corpus. Blank lines are skipped; examples without an
/// `id` are named `<split>-<line>`.
pub fn load_corpus(path: impl AsRef<Path>, split: Split) -> Result<Vec<QGExample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path, split)
}

pub fn parse_corpus(text: &str, path: &Path, split: Split) -> Result<Vec<QGExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let example = parse_example(line, &format!("{split}-{line_no}")).map_err(|e| match e {
            Error::Json(err) => Error::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                message: err.to_string(),
            },
            other => other,
        })?;
        out.push(example);
    }
    Ok(out)
}

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

/// Token vocabulary with the four special tokens at fixed indices.
/// Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Vocabulary from an ordered token list (specials are prepended when
    /// missing). Counts are unknown and recorded as zero.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut list: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for t in tokens {
            let t = t.into();
            if !SPECIALS.contains(&t.as_str()) {
                list.push(t);
            }
        }
        let counts = vec![0; list.len()];
        Self::from_parts(list, counts)
    }

    fn from_parts(tokens: Vec<String>, counts: Vec<usize>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            counts,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index of `token`, or [`UNK`].
    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Training-corpus frequency of the token at `index`.
    pub fn count(&self, index: usize) -> usize {
        self.counts[index]
    }

    /// One token per line; line number is the index. Counts follow a tab.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            out.push_str(t);
            out.push('\t');
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (tok, count) = match line.split_once('\t') {
                Some((t, c)) => (
                    t,
                    c.trim().parse().map_err(|_| {
                        Error::Config(format!("vocabulary line {}: bad count {c:?}", i + 1))
                    })?,
                ),
                None => (line, 0),
            };
            tokens.push(tok.to_string());
            counts.push(count);
        }
        if tokens.len() < SPECIALS.len()
            || tokens[..SPECIALS.len()].iter().zip(SPECIALS).any(|(a, b)| a != b)
        {
            return Err(Error::Config(
                "vocabulary file must start with the four special tokens".into(),
            ));
        }
        Ok(Self::from_parts(tokens, counts))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Every token of an example that counts toward the vocabulary: question,
/// entity text and predicate text.
fn example_tokens(ex: &QGExample) -> impl Iterator<Item = String> + '_ {
    ex.question
        .iter()
        .cloned()
        .chain(ex.graph.entities().iter().flat_map(|e| tokenize(&e.text)))
        .chain(ex.graph.edges().iter().flat_map(|e| tokenize(&e.text)))
}

/// Keeps tokens with frequency ≥ `min_freq`, ordered by frequency
/// descending then lexicographically.
pub fn build_vocab(examples: &[QGExample], min_freq: usize) -> Result<Vocabulary> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    for ex in examples {
        for t in example_tokens(ex) {
            *freq.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = freq
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !SPECIALS.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    let mut counts = vec![0; SPECIALS.len()];
    for (t, c) in kept {
        tokens.push(t);
        counts.push(c);
    }
    Ok(Vocabulary::from_parts(tokens, counts))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum TargetStep {
    /// Generate one word.
    Gen(String),
    /// Copy the whole name of entity node `id`.
    Copy(usize),
}

/// Question in terms of generation and node-copy steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopyAlignedTarget {
    pub steps: Vec<TargetStep>,
    pub surface: Vec<String>,
}

impl CopyAlignedTarget {
    /// All-generation target (copying disabled).
    pub fn generate_only(question: &[String]) -> Self {
        CopyAlignedTarget {
            steps: question.iter().cloned().map(TargetStep::Gen).collect(),
            surface: question.to_vec(),
        }
    }

    /// Replaces each copy step with the node's name tokens.
    pub fn expand(&self, graph: &KGSubgraph) -> Vec<String> {
        self.steps
            .iter()
            .flat_map(|s| match s {
                TargetStep::Gen(t) => vec![t.clone()],
                TargetStep::Copy(id) => tokenize(&graph.entities()[*id].text),
            })
            .collect()
    }

    pub fn copy_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, TargetStep::Copy(_)))
            .count()
    }
}

/// A span of the question equal to an entity's tokenized name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NameMatch {
    pub start: usize,
    pub len: usize,
    pub node: usize,
}

/// Every occurrence of every entity name in `question`.
pub fn find_name_matches(graph: &KGSubgraph, question: &[String]) -> Vec<NameMatch> {
    let mut out = Vec::new();
    for (node, e) in graph.entities().iter().enumerate() {
        let name = tokenize(&e.text);
        if name.is_empty() || name.len() > question.len() {
            continue;
        }
        for start in 0..=question.len() - name.len() {
            if question[start..start + name.len()] == name[..] {
                out.push(NameMatch {
                    start,
                    len: name.len(),
                    node,
                });
            }
        }
    }
    out
}

/// Collapses entity-name mentions into copy steps: longest match first,
/// then earliest position, then smallest node id, without overlaps.
pub fn align_copy_targets(example: &QGExample) -> CopyAlignedTarget {
    let question = &example.question;
    let mut matches = find_name_matches(&example.graph, question);
    matches.sort_by(|a, b| {
        b.len
            .cmp(&a.len)
            .then(a.start.cmp(&b.start))
            .then(a.node.cmp(&b.node))
    });
    let mut covered = vec![false; question.len()];
    let mut chosen: Vec<NameMatch> = Vec::new();
    for m in matches {
        if covered[m.start..m.start + m.len].iter().any(|&c| c) {
            continue;
        }
        covered[m.start..m.start + m.len].fill(true);
        chosen.push(m);
    }
    chosen.sort_by_key(|m| m.start);

    let mut steps = Vec::new();
    let mut pos = 0;
    let mut next = chosen.iter().peekable();
    while pos < question.len() {
        match next.peek() {
            Some(m) if m.start == pos => {
                steps.push(TargetStep::Copy(m.node));
                pos += m.len;
                next.next();
            }
            _ => {
                steps.push(TargetStep::Gen(question[pos].clone()));
                pos += 1;
            }
        }
    }
    CopyAlignedTarget {
        steps,
        surface: question.clone(),
    }
}

/// Distinct tokens of a corpus (used to decide which pretrained vectors to
/// load).
pub fn distinct_tokens(examples: &[QGExample]) -> HashSet<String> {
    examples.iter().flat_map(example_tokens).collect()
}
