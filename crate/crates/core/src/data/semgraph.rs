use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{AnnotatedGraphSample, Edge, NONE_RELATION, OUTSIDE_TAG};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    words: Vec<String>,
    #[serde(default)]
    entities: Vec<EntityDoc>,
    #[serde(default)]
    relations: Vec<RelationDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityDoc {
    id: i64,
    label: String,
    start: usize,
    end: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationDoc {
    label: String,
    head: i64,
    tail: i64,
}

/// Reads the semantic-graph JSON format. Every word of an entity span takes
/// the entity label (other words get [`OUTSIDE_TAG`]); a relation becomes an
/// edge from the last word of the head span to the last word of the tail
/// span.
pub fn parse_semgraph_json(text: &str) -> Result<Vec<AnnotatedGraphSample>> {
    let docs: Vec<GraphDoc> =
        serde_json::from_str(text).map_err(|e| Error::Validation(format!("semantic graph: {e}")))?;
    docs.into_iter()
        .enumerate()
        .map(|(k, doc)| convert(doc).map_err(|e| Error::Validation(format!("graph {k}: {e}"))))
        .collect()
}

fn convert(doc: GraphDoc) -> std::result::Result<AnnotatedGraphSample, String> {
    let n = doc.words.len();
    let mut tags = vec![OUTSIDE_TAG.to_string(); n];
    let mut covered = vec![false; n];
    let mut last_word = HashMap::new();
    for e in &doc.entities {
        if e.start >= e.end || e.end > n {
            return Err(format!("entity {} span {}..{} outside {} words", e.id, e.start, e.end, n));
        }
        if last_word.insert(e.id, e.end).is_some() {
            return Err(format!("duplicate entity id {}", e.id));
        }
        for w in e.start..e.end {
            if covered[w] {
                return Err(format!("entity {} overlaps another span at word {}", e.id, w));
            }
            covered[w] = true;
            tags[w] = e.label.clone();
        }
    }
    let mut edges = Vec::with_capacity(doc.relations.len());
    for r in &doc.relations {
        let head = *last_word
            .get(&r.head)
            .ok_or_else(|| format!("relation {} references missing entity {}", r.label, r.head))?;
        let dep = *last_word
            .get(&r.tail)
            .ok_or_else(|| format!("relation {} references missing entity {}", r.label, r.tail))?;
        if head == dep {
            return Err(format!("relation {} is a self-loop", r.label));
        }
        edges.push(Edge {
            head,
            dep,
            label: r.label.clone(),
        });
    }
    Ok(AnnotatedGraphSample {
        words: doc.words,
        tags,
        edges,
    })
}

/// Writes samples back out. Maximal runs of one non-outside tag become
/// entities; edges between span-final words become relations. Edges into
/// ROOT and [`NONE_RELATION`] edges are not representable and are skipped.
pub fn write_semgraph_json(samples: &[AnnotatedGraphSample]) -> Result<String> {
    let docs: Vec<GraphDoc> = samples.iter().map(to_doc).collect();
    Ok(serde_json::to_string_pretty(&docs)?)
}

fn to_doc(s: &AnnotatedGraphSample) -> GraphDoc {
    let mut entities = Vec::new();
    let mut by_last = HashMap::new();
    let mut i = 0;
    while i < s.len() {
        if s.tags[i] == OUTSIDE_TAG {
            i += 1;
            continue;
        }
        let start = i;
        while i < s.len() && s.tags[i] == s.tags[start] {
            i += 1;
        }
        let id = entities.len() as i64;
        by_last.insert(i, id);
        entities.push(EntityDoc {
            id,
            label: s.tags[start].clone(),
            start,
            end: i,
        });
    }
    let relations = s
        .edges
        .iter()
        .filter(|e| e.head > 0 && e.label != NONE_RELATION)
        .filter_map(|e| {
            Some(RelationDoc {
                label: e.label.clone(),
                head: *by_last.get(&e.head)?,
                tail: *by_last.get(&e.dep)?,
            })
        })
        .collect();
    GraphDoc {
        words: s.words.clone(),
        entities,
        relations,
    }
}
