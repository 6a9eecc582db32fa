//! Distribution of question-opening trigrams ("what is the", "who is the"),
//! as a flat list and as a token1 → token2 → token3 tree.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const DEFAULT_MIN_FREQ: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixCount {
    pub prefix: [String; 3],
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixNode {
    pub token: String,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<PrefixNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixAnalysis {
    pub n_questions: usize,
    /// Questions with at least three tokens.
    pub n_eligible: usize,
    pub min_freq: usize,
    /// Kept prefixes, most frequent first (ties in token order).
    pub prefixes: Vec<PrefixCount>,
    pub tree: Vec<PrefixNode>,
}

/// Counts first-three-token prefixes, drops those seen fewer than
/// `min_freq` times and keeps the `top_k` most frequent of the rest.
pub fn analyze<T: AsRef<str>>(questions: &[Vec<T>], top_k: Option<usize>, min_freq: usize) -> PrefixAnalysis {
    let mut counts: HashMap<[&str; 3], usize> = HashMap::new();
    let mut eligible = 0;
    for q in questions {
        if let [a, b, c, ..] = q.as_slice() {
            eligible += 1;
            *counts.entry([a.as_ref(), b.as_ref(), c.as_ref()]).or_default() += 1;
        }
    }
    let mut prefixes: Vec<PrefixCount> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_freq)
        .map(|(p, count)| PrefixCount {
            prefix: p.map(str::to_string),
            count,
        })
        .collect();
    prefixes.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.prefix.cmp(&b.prefix)));
    if let Some(k) = top_k {
        prefixes.truncate(k);
    }
    PrefixAnalysis {
        n_questions: questions.len(),
        n_eligible: eligible,
        min_freq,
        tree: build_tree(&prefixes),
        prefixes,
    }
}

fn build_tree(prefixes: &[PrefixCount]) -> Vec<PrefixNode> {
    let mut levels: BTreeMap<&str, BTreeMap<&str, BTreeMap<&str, usize>>> = BTreeMap::new();
    for p in prefixes {
        let [a, b, c] = &p.prefix;
        *levels.entry(a).or_default().entry(b).or_default().entry(c).or_default() += p.count;
    }
    let mut tree: Vec<PrefixNode> = levels
        .into_iter()
        .map(|(a, second)| {
            let mut children: Vec<PrefixNode> = second
                .into_iter()
                .map(|(b, third)| {
                    let mut leaves: Vec<PrefixNode> = third
                        .into_iter()
                        .map(|(c, count)| PrefixNode {
                            token: c.to_string(),
                            count,
                            children: Vec::new(),
                        })
                        .collect();
                    sort_nodes(&mut leaves);
                    PrefixNode {
                        token: b.to_string(),
                        count: leaves.iter().map(|n| n.count).sum(),
                        children: leaves,
                    }
                })
                .collect();
            sort_nodes(&mut children);
            PrefixNode {
                token: a.to_string(),
                count: children.iter().map(|n| n.count).sum(),
                children,
            }
        })
        .collect();
    sort_nodes(&mut tree);
    tree
}

fn sort_nodes(nodes: &mut [PrefixNode]) {
    nodes.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.token.cmp(&b.token)));
}

impl PrefixAnalysis {
    /// Sunburst table with columns `id,label,parent,value`; ids are the
    /// space-joined path from the root.
    pub fn to_csv(&self) -> Result<String> {
        fn walk(w: &mut csv::Writer<Vec<u8>>, nodes: &[PrefixNode], parent: &str) -> csv::Result<()> {
            for n in nodes {
                let id = if parent.is_empty() {
                    n.token.clone()
                } else {
                    format!("{parent} {}", n.token)
                };
                w.write_record([id.as_str(), n.token.as_str(), parent, &n.count.to_string()])?;
                walk(w, &n.children, &id)?;
            }
            Ok(())
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let run = |w: &mut csv::Writer<Vec<u8>>| -> csv::Result<()> {
            w.write_record(["id", "label", "parent", "value"])?;
            walk(w, &self.tree, "")?;
            w.flush()?;
            Ok(())
        };
        run(&mut w).map_err(|e| crate::Error::Config(format!("csv: {e}")))?;
        let bytes = w.into_inner().map_err(|e| crate::Error::Config(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn q(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn identical_questions_give_one_prefix() {
        let qs = vec![q("what is the capital of france ?"); 7];
        let a = analyze(&qs, None, 5);
        assert_eq!(a.prefixes.len(), 1);
        assert_eq!(a.prefixes[0].count, 7);
        assert_eq!(a.tree[0].count, 7);
        assert_eq!(a.tree[0].children[0].children[0].token, "the");
    }

    #[test]
    fn short_questions_are_excluded() {
        let qs = vec![q("who ?"), q("why"), q("what is it"), q("what is it ?")];
        let a = analyze(&qs, None, 1);
        assert_eq!(a.n_eligible, 2);
        assert_eq!(a.prefixes.len(), 1);
        assert_eq!(a.prefixes[0].count, 2);
    }

    #[test]
    fn min_freq_and_top_k() {
        let mut qs = vec![q("what is the x"); 6];
        qs.extend(vec![q("who is the y"); 5]);
        qs.extend(vec![q("where was z born"); 4]);
        assert_eq!(analyze(&qs, None, 5).prefixes.len(), 2);
        let top = analyze(&qs, Some(1), 1);
        assert_eq!(top.prefixes.len(), 1);
        assert_eq!(top.prefixes[0].prefix[0], "what");
    }

    #[test]
    fn matches_brute_force_tally() {
        let words = ["what", "who", "is", "the", "was", "a"];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let qs: Vec<Vec<String>> = (0..20)
            .map(|_| {
                let len = rng.random_range(1..6);
                (0..len).map(|_| words[rng.random_range(0..3)].to_string()).collect()
            })
            .collect();
        for min_freq in 1..4 {
            let mut want: Vec<(Vec<String>, usize)> = Vec::new();
            for x in &qs {
                if x.len() < 3 {
                    continue;
                }
                match want.iter_mut().find(|(p, _)| p[..] == x[..3]) {
                    Some((_, c)) => *c += 1,
                    None => want.push((x[..3].to_vec(), 1)),
                }
            }
            want.retain(|(_, c)| *c >= min_freq);
            let got = analyze(&qs, None, min_freq);
            assert_eq!(got.prefixes.len(), want.len());
            for (p, c) in want {
                let found = got.prefixes.iter().find(|g| g.prefix[..] == p[..]).unwrap();
                assert_eq!(found.count, c);
            }
            let tree_total: usize = got.tree.iter().map(|n| n.count).sum();
            assert_eq!(tree_total, got.prefixes.iter().map(|p| p.count).sum::<usize>());
        }
    }

    #[test]
    fn csv_quotes_punctuation_tokens() {
        let qs = vec![q(", is it"); 2];
        let csv = analyze(&qs, None, 1).to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "id,label,parent,value");
        assert_eq!(lines[1], "\",\",\",\",,2");
        assert_eq!(lines[3], "\", is it\",it,\", is\",2");
    }
}
