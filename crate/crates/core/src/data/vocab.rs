use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::AnnotatedGraphSample;
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
/// Relation of words that have no incoming edge; they are attached to ROOT.
pub const NONE_RELATION: &str = "<none>";
/// Tag of words outside every entity span.
pub const OUTSIDE_TAG: &str = "O";

/// Dense index maps for words, tags and relations. Index 0 of the word map
/// is [`UNK`]; everything else is sorted so indices are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabLists", into = "VocabLists")]
pub struct Vocabulary {
    words: Vec<String>,
    tags: Vec<String>,
    relations: Vec<String>,
    word_index: HashMap<String, usize>,
    tag_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabLists {
    words: Vec<String>,
    tags: Vec<String>,
    relations: Vec<String>,
}

impl From<Vocabulary> for VocabLists {
    fn from(v: Vocabulary) -> Self {
        VocabLists {
            words: v.words,
            tags: v.tags,
            relations: v.relations,
        }
    }
}

impl TryFrom<VocabLists> for Vocabulary {
    type Error = Error;

    fn try_from(l: VocabLists) -> Result<Self> {
        if l.words.first().map(String::as_str) != Some(UNK) {
            return Err(Error::Validation("word list must start with <unk>".into()));
        }
        Ok(Vocabulary {
            word_index: index_of(&l.words)?,
            tag_index: index_of(&l.tags)?,
            relation_index: index_of(&l.relations)?,
            words: l.words,
            tags: l.tags,
            relations: l.relations,
        })
    }
}

fn index_of(items: &[String]) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(items.len());
    for (i, s) in items.iter().enumerate() {
        if map.insert(s.clone(), i).is_some() {
            return Err(Error::Validation(format!("duplicate vocabulary entry {s:?}")));
        }
    }
    Ok(map)
}

/// A sample mapped to indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub words: Vec<usize>,
    pub tags: Vec<usize>,
    /// Primary head per word (0 = ROOT).
    pub heads: Vec<usize>,
    /// Relation of the primary edge per word.
    pub rels: Vec<usize>,
    /// Every gold edge as `(dep, head, rel)`.
    pub edges: Vec<(usize, usize, usize)>,
}

impl EncodedSample {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl Vocabulary {
    /// Builds the maps from the training split. Words seen fewer than
    /// `min_count` times are left to [`UNK`].
    pub fn build(samples: &[AnnotatedGraphSample], min_count: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("cannot build a vocabulary from no samples".into()));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut tags = BTreeSet::new();
        let mut relations = BTreeSet::new();
        for s in samples {
            for w in &s.words {
                *counts.entry(w.as_str()).or_default() += 1;
            }
            tags.extend(s.tags.iter().cloned());
            relations.extend(s.relations());
        }
        let words = std::iter::once(UNK.to_string())
            .chain(
                counts
                    .into_iter()
                    .filter(|&(w, c)| c >= min_count.max(1) && w != UNK)
                    .map(|(w, _)| w.to_string()),
            )
            .collect();
        Vocabulary::try_from(VocabLists {
            words,
            tags: tags.into_iter().collect(),
            relations: relations.into_iter().collect(),
        })
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_id(&self, w: &str) -> usize {
        self.word_index.get(w).copied().unwrap_or(0)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn tag_id(&self, t: &str) -> Option<usize> {
        self.tag_index.get(t).copied()
    }

    pub fn tag(&self, id: usize) -> &str {
        &self.tags[id]
    }

    pub fn relation_id(&self, r: &str) -> Option<usize> {
        self.relation_index.get(r).copied()
    }

    pub fn relation(&self, id: usize) -> &str {
        &self.relations[id]
    }

    /// Index of [`NONE_RELATION`] if the training data needed it.
    pub fn none_relation(&self) -> Option<usize> {
        self.relation_id(NONE_RELATION)
    }

    pub fn encode(&self, s: &AnnotatedGraphSample) -> Result<EncodedSample> {
        s.validate()?;
        let tag = |t: &String| {
            self.tag_id(t)
                .ok_or_else(|| Error::Validation(format!("tag {t:?} not in the training tag set")))
        };
        let rel = |r: &String| {
            self.relation_id(r).ok_or_else(|| {
                Error::Validation(format!("relation {r:?} not in the training relation set"))
            })
        };
        Ok(EncodedSample {
            words: s.words.iter().map(|w| self.word_id(w)).collect(),
            tags: s.tags.iter().map(tag).collect::<Result<_>>()?,
            heads: s.heads(),
            rels: s.relations().iter().map(rel).collect::<Result<_>>()?,
            edges: s
                .edges
                .iter()
                .map(|e| Ok((e.dep, e.head, rel(&e.label)?)))
                .collect::<Result<_>>()?,
        })
    }

    pub fn encode_all(&self, samples: &[AnnotatedGraphSample]) -> Result<Vec<EncodedSample>> {
        samples.iter().map(|s| self.encode(s)).collect()
    }
}
