//! Treebank and semantic-graph ingestion, vocabularies, word features and
//! batching.

mod batch;
mod conllu;
mod features;
mod semgraph;
mod vocab;

use serde::{Deserialize, Serialize};

pub use batch::{make_batches, Batch};
pub use conllu::{parse_conllu, write_conllu};
pub use features::{get_features, FeatureMode, FrozenTable};
pub use semgraph::{parse_semgraph_json, write_semgraph_json};
pub use vocab::{EncodedSample, Vocabulary, NONE_RELATION, OUTSIDE_TAG, UNK};

/// One directed, labelled edge. Word positions are 1-based; 0 is ROOT.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub head: usize,
    pub dep: usize,
    pub label: String,
}

/// One sentence or graph with its gold annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedGraphSample {
    pub words: Vec<String>,
    pub tags: Vec<String>,
    pub edges: Vec<Edge>,
}

impl AnnotatedGraphSample {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Primary head of every word: the lowest-index head among its incoming
    /// edges, or ROOT when it has none.
    pub fn heads(&self) -> Vec<usize> {
        self.primary_edges()
            .iter()
            .map(|e| e.map_or(0, |e| e.head))
            .collect()
    }

    /// Label of each word's primary edge; [`NONE_RELATION`] when it has none.
    pub fn relations(&self) -> Vec<String> {
        self.primary_edges()
            .iter()
            .map(|e| e.map_or_else(|| NONE_RELATION.to_string(), |e| e.label.clone()))
            .collect()
    }

    fn primary_edges(&self) -> Vec<Option<&Edge>> {
        let mut best: Vec<Option<&Edge>> = vec![None; self.len()];
        for e in &self.edges {
            let slot = &mut best[e.dep - 1];
            if slot.is_none_or(|b| e.head < b.head) {
                *slot = Some(e);
            }
        }
        best
    }

    /// Exactly one word hangs off ROOT.
    pub fn is_single_root(&self) -> bool {
        self.heads().iter().filter(|&&h| h == 0).count() == 1
    }

    /// Every word has exactly one incoming edge.
    pub fn is_tree(&self) -> bool {
        let mut incoming = vec![0usize; self.len()];
        for e in &self.edges {
            incoming[e.dep - 1] += 1;
        }
        incoming.iter().all(|&c| c == 1)
    }

    /// Checks the structural invariants shared by every input format.
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error;
        let n = self.len();
        if self.tags.len() != n {
            return Err(Error::Validation(format!(
                "{} tags for {} words",
                self.tags.len(),
                n
            )));
        }
        for e in &self.edges {
            if e.dep == 0 || e.dep > n || e.head > n {
                return Err(Error::Validation(format!(
                    "edge {} -> {} outside a sentence of {} words",
                    e.head, e.dep, n
                )));
            }
            if e.head == e.dep {
                return Err(Error::Validation(format!("self-loop on word {}", e.dep)));
            }
        }
        Ok(())
    }

    /// Drops edges whose label is listed, e.g. placeholder labels.
    pub fn without_relations(mut self, drop: &[String]) -> Self {
        self.edges.retain(|e| !drop.contains(&e.label));
        self
    }
}

/// Reads either format based on the first non-whitespace character.
pub fn parse_any(text: &str) -> crate::Result<Vec<AnnotatedGraphSample>> {
    match text.trim_start().chars().next() {
        Some('[') => parse_semgraph_json(text),
        _ => parse_conllu(text),
    }
}
