//! Approximate dictionary matching of concept names and synonyms
//! against free-text notes. Sliding token windows are compared to
//! normalized index keys by token-set Jaccard similarity; overlapping
//! matches keep the highest-scoring, longest, leftmost span.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use thiserror::Error;

use crate::kg::KnowledgeGraph;

pub const DEFAULT_WINDOW: usize = 6;
pub const DEFAULT_THRESHOLD: f64 = 0.7;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MatcherError {
    #[error("window length must be in 1..=10, got {0}")]
    InvalidWindow(usize),
    #[error("threshold must be in (0, 1], got {0}")]
    InvalidThreshold(String),
}

/// Normalization applied to index keys and note tokens: lowercase,
/// punctuation to single spaces, whitespace collapsed. Applied to a
/// fixpoint so every key satisfies normalize(key) == key.
pub fn normalize(text: &str) -> String {
    let mut current = normalize_once(text);
    // A handful of Unicode lowercasings expand into marks that the
    // second pass strips; iterate until stable.
    for _ in 0..3 {
        let next = normalize_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn normalize_once(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            for lc in ch.to_lowercase() {
                out.push(lc);
            }
        } else {
            pending_space = true;
        }
    }
    out
}

/// One match of an index term in a note. Offsets are byte offsets into
/// the note, so `note[start..end] == surface`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mention {
    pub cui: String,
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub score: f64,
}

/// Dictionary of normalized concept terms with matcher configuration.
#[derive(Debug, Clone)]
pub struct TermIndex {
    entries: BTreeMap<String, BTreeSet<String>>,
    token_to_keys: BTreeMap<String, BTreeSet<String>>,
    n_max: usize,
    threshold: f64,
}

impl TermIndex {
    /// Indexes every preferred name and synonym in the graph.
    pub fn build(
        graph: &KnowledgeGraph,
        n_max: usize,
        threshold: f64,
    ) -> Result<TermIndex, MatcherError> {
        if n_max == 0 || n_max > 10 {
            return Err(MatcherError::InvalidWindow(n_max));
        }
        if !(threshold > 0.0 && threshold <= 1.0) {
            let mut repr = String::new();
            fmt_f64(&mut repr, threshold);
            return Err(MatcherError::InvalidThreshold(repr));
        }
        let mut entries: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for concept in graph.concepts() {
            let mut terms: Vec<&str> = Vec::with_capacity(1 + concept.synonyms.len());
            terms.push(concept.preferred_name.as_str());
            terms.extend(concept.synonyms.iter().map(|s| s.as_str()));
            for term in terms {
                let key = normalize(term);
                if key.is_empty() {
                    continue;
                }
                entries.entry(key).or_default().insert(concept.cui.clone());
            }
        }
        let mut token_to_keys: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for key in entries.keys() {
            for token in key.split(' ') {
                token_to_keys
                    .entry(token.to_string())
                    .or_default()
                    .insert(key.clone());
            }
        }
        Ok(TermIndex {
            entries,
            token_to_keys,
            n_max,
            threshold,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn cuis_for_term(&self, key: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    /// Extracts mentions from a note. Windows of 1..=n_max tokens are
    /// scored against candidate keys sharing at least one token; scores
    /// at or above the threshold emit one mention per matched cui.
    /// Partial overlaps are resolved greedily by (score, span length,
    /// leftmost start); identical spans may carry multiple cuis.
    /// The result is sorted by span start.
    pub fn extract_mentions(&self, note: &str) -> Vec<Mention> {
        let tokens = tokenize_spans(note);
        if tokens.is_empty() {
            return Vec::new();
        }

        // (start, end, cui) -> best score
        let mut best: BTreeMap<(usize, usize, String), f64> = BTreeMap::new();
        for i in 0..tokens.len() {
            let upper = (i + self.n_max).min(tokens.len());
            let mut window: BTreeSet<&str> = BTreeSet::new();
            for j in i..upper {
                window.insert(tokens[j].norm.as_str());
                let span = (tokens[i].start, tokens[j].end);
                let mut candidates: BTreeSet<&String> = BTreeSet::new();
                for tok in &window {
                    if let Some(keys) = self.token_to_keys.get(*tok) {
                        candidates.extend(keys.iter());
                    }
                }
                for key in candidates {
                    let score = jaccard(&window, key);
                    if score >= self.threshold {
                        for cui in &self.entries[key] {
                            let slot = best
                                .entry((span.0, span.1, cui.clone()))
                                .or_insert(f64::MIN);
                            if score > *slot {
                                *slot = score;
                            }
                        }
                    }
                }
            }
        }

        let mut candidates: Vec<Mention> = best
            .into_iter()
            .map(|((start, end, cui), score)| Mention {
                cui,
                start,
                end,
                surface: note[start..end].to_string(),
                score,
            })
            .collect();
        candidates.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then_with(|| (b.end - b.start).cmp(&(a.end - a.start)))
                .then_with(|| a.start.cmp(&b.start))
                .then_with(|| a.cui.cmp(&b.cui))
        });

        let mut accepted: Vec<Mention> = Vec::new();
        for cand in candidates {
            let compatible = accepted.iter().all(|kept| {
                let same_span = kept.start == cand.start && kept.end == cand.end;
                let disjoint = cand.end <= kept.start || kept.end <= cand.start;
                same_span || disjoint
            });
            if compatible {
                accepted.push(cand);
            }
        }
        accepted.sort_by(|a, b| {
            (a.start, a.end, a.cui.as_str()).cmp(&(b.start, b.end, b.cui.as_str()))
        });
        accepted
    }
}

struct Token {
    norm: String,
    start: usize,
    end: usize,
}

fn tokenize_spans(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (idx, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if start.is_none() {
                start = Some(idx);
            }
        } else if let Some(s) = start.take() {
            tokens.push(Token {
                norm: normalize(&text[s..idx]),
                start: s,
                end: idx,
            });
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            norm: normalize(&text[s..]),
            start: s,
            end: text.len(),
        });
    }
    tokens
}

/// Token-set Jaccard similarity between a window token set and an
/// index key (space-separated tokens).
pub fn jaccard(window: &BTreeSet<&str>, key: &str) -> f64 {
    let key_tokens: BTreeSet<&str> = key.split(' ').collect();
    let intersection = key_tokens.iter().filter(|t| window.contains(**t)).count();
    let union = key_tokens.len() + window.len() - intersection;
    if union == 0 {
        return 0.0;
    }
    intersection as f64 / union as f64
}

fn fmt_f64(out: &mut String, v: f64) {
    // Minimal display for error messages only.
    let scaled = (v * 1e6) as i64;
    let int = scaled / 1_000_000;
    let frac = (scaled % 1_000_000).unsigned_abs();
    out.push_str(&alloc::format!("{int}.{frac:06}"));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Concept, KnowledgeGraph};

    fn graph_with(concepts: &[(&str, &str, &[&str])]) -> KnowledgeGraph {
        let mut b = KnowledgeGraph::builder();
        for (cui, name, syns) in concepts {
            b.add_concept(Concept::new(cui, name, "T047").with_synonyms(syns))
                .unwrap();
        }
        b.finish()
    }

    #[test]
    fn keys_are_normalized() {
        let g = graph_with(&[("X1", "Elevated K", &[])]);
        let idx = TermIndex::build(&g, 6, 0.7).unwrap();
        assert!(idx.cuis_for_term("elevated k").is_some());
    }

    #[test]
    fn synonyms_expand_to_separate_keys() {
        let g = graph_with(&[("X1", "Chronic kidney disease", &["CKD"])]);
        let idx = TermIndex::build(&g, 6, 0.7).unwrap();
        assert!(idx.cuis_for_term("ckd").unwrap().contains("X1"));
        assert!(idx
            .cuis_for_term("chronic kidney disease")
            .unwrap()
            .contains("X1"));
    }

    #[test]
    fn empty_graph_yields_empty_index() {
        let g = KnowledgeGraph::builder().finish();
        let idx = TermIndex::build(&g, 6, 0.7).unwrap();
        assert!(idx.is_empty());
        assert!(idx.extract_mentions("any text").is_empty());
    }

    #[test]
    fn invalid_parameters_rejected() {
        let g = KnowledgeGraph::builder().finish();
        assert!(TermIndex::build(&g, 0, 0.7).is_err());
        assert!(TermIndex::build(&g, 11, 0.7).is_err());
        assert!(TermIndex::build(&g, 6, 0.0).is_err());
        assert!(TermIndex::build(&g, 6, 1.5).is_err());
        assert!(TermIndex::build(&g, 6, 1.0).is_ok());
    }

    #[test]
    fn exact_containment_scores_one() {
        let g = graph_with(&[("X1", "Elevated K", &[])]);
        let idx = TermIndex::build(&g, 6, 0.7).unwrap();
        let mentions = idx.extract_mentions("pt with elevated k today");
        assert_eq!(mentions.len(), 1);
        let m = &mentions[0];
        assert_eq!(m.cui, "X1");
        assert_eq!(m.surface, "elevated k");
        assert_eq!(m.score, 1.0);
        assert_eq!(&"pt with elevated k today"[m.start..m.end], "elevated k");
    }

    #[test]
    fn partial_match_below_threshold_is_dropped() {
        // {chronic, kidney} vs {chronic, kidney, disease}: 2/3 < 0.7.
        let g = graph_with(&[("X1", "Chronic kidney disease", &[])]);
        let idx = TermIndex::build(&g, 6, 0.7).unwrap();
        assert!(idx.extract_mentions("chronic kidney").is_empty());
        let relaxed = TermIndex::build(&g, 6, 0.6).unwrap();
        let mentions = relaxed.extract_mentions("chronic kidney");
        assert_eq!(mentions.len(), 1);
        assert!((mentions[0].score - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_note_and_key_score_exactly_one() {
        let g = graph_with(&[("X1", "acute renal failure", &[])]);
        let idx = TermIndex::build(&g, 6, 0.7).unwrap();
        let mentions = idx.extract_mentions("acute renal failure");
        assert_eq!(mentions.len(), 1);
        assert_eq!(mentions[0].score, 1.0);
    }

    #[test]
    fn longest_span_wins_overlap() {
        let g = graph_with(&[("SHORT", "kidney disease", &[]), ("LONG", "chronic kidney disease", &[])]);
        let idx = TermIndex::build(&g, 6, 0.7).unwrap();
        let mentions = idx.extract_mentions("has chronic kidney disease today");
        assert_eq!(mentions.len(), 1);
        assert_eq!(mentions[0].cui, "LONG");
        assert_eq!(mentions[0].surface, "chronic kidney disease");
    }

    #[test]
    fn identical_spans_keep_multiple_cuis() {
        let g = graph_with(&[("A1", "fever", &[]), ("A2", "Fever", &[])]);
        // Distinct preferred names normalize to the same key.
        let idx = TermIndex::build(&g, 6, 0.7).unwrap();
        let mentions = idx.extract_mentions("fever noted");
        assert_eq!(mentions.len(), 2);
        assert_eq!(mentions[0].start, mentions[1].start);
    }

    #[test]
    fn empty_text_yields_no_mentions() {
        let g = graph_with(&[("X1", "fever", &[])]);
        let idx = TermIndex::build(&g, 6, 0.7).unwrap();
        assert!(idx.extract_mentions("").is_empty());
    }
}
