//! Seeded generator for a small case-marked treebank.
//!
//! Every clause has a verb, a nominative subject and optionally an
//! accusative object, a prepositional oblique, an adverb and a genitive
//! modifier of the subject. Determiners, adjectives and nouns carry the
//! case suffix of their phrase and each case occurs at most once per
//! sentence, so every head is recoverable from the word pair alone. Phrases
//! are scrambled; the full stop always comes last.

use rand_distr::Zipf;
use serde::{Deserialize, Serialize};

use crate::data::{AnnotatedGraphSample, Edge};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

pub const RELATIONS: [&str; 10] = [
    "root", "nsubj", "obj", "obl", "nmod", "det", "amod", "advmod", "case", "punct",
];

const CASES: [&str; 4] = ["on", "ek", "ul", "im"];
const NOM: usize = 0;
const ACC: usize = 1;
const OBL: usize = 2;
const GEN: usize = 3;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub nouns: usize,
    pub adjectives: usize,
    pub verbs: usize,
    pub adverbs: usize,
    /// Zipf exponent of open-class stem frequencies.
    pub zipf: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 13,
            train: 1000,
            dev: 200,
            test: 200,
            nouns: 80,
            adjectives: 30,
            verbs: 40,
            adverbs: 12,
            zipf: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Treebank {
    pub train: Vec<AnnotatedGraphSample>,
    pub dev: Vec<AnnotatedGraphSample>,
    pub test: Vec<AnnotatedGraphSample>,
}

/// Two-syllable stem, unique per index below `14^2 * 5^2`.
fn stem(index: usize) -> String {
    let syll = |k: usize| {
        let c = CONSONANTS[k % CONSONANTS.len()] as char;
        let v = VOWELS[(k / CONSONANTS.len()) % VOWELS.len()] as char;
        format!("{c}{v}")
    };
    let per = CONSONANTS.len() * VOWELS.len();
    format!("{}{}", syll(index / per), syll(index % per))
}

struct Lexicon {
    nouns: Vec<String>,
    adjectives: Vec<String>,
    verbs: Vec<String>,
    adverbs: Vec<String>,
    noun_dist: Zipf<f64>,
    adj_dist: Zipf<f64>,
    verb_dist: Zipf<f64>,
    adv_dist: Zipf<f64>,
}

impl Lexicon {
    fn new(cfg: &SynthConfig) -> Result<Self> {
        let sizes = [cfg.nouns, cfg.adjectives, cfg.verbs, cfg.adverbs];
        if sizes.contains(&0) {
            return Err(Error::Config("every open class needs at least one stem".into()));
        }
        let total: usize = sizes.iter().sum();
        let limit = (CONSONANTS.len() * VOWELS.len()).pow(2);
        if total > limit {
            return Err(Error::Config(format!("at most {limit} stems, asked for {total}")));
        }
        let zipf = |n: usize| {
            Zipf::new(n as f64, cfg.zipf).map_err(|e| Error::Config(format!("zipf exponent {}: {e}", cfg.zipf)))
        };
        // disjoint stem ranges per class
        let mut next = 0;
        let mut take = |n: usize| {
            let out: Vec<String> = (next..next + n).map(stem).collect();
            next += n;
            out
        };
        Ok(Lexicon {
            nouns: take(cfg.nouns),
            adjectives: take(cfg.adjectives).into_iter().map(|s| s + "a").collect(),
            verbs: take(cfg.verbs).into_iter().map(|s| s + "t").collect(),
            adverbs: take(cfg.adverbs).into_iter().map(|s| s + "ly").collect(),
            noun_dist: zipf(cfg.nouns)?,
            adj_dist: zipf(cfg.adjectives)?,
            verb_dist: zipf(cfg.verbs)?,
            adv_dist: zipf(cfg.adverbs)?,
        })
    }
}

fn pick<'a>(words: &'a [String], dist: &Zipf<f64>, rng: &mut SeededRng) -> &'a str {
    let k = rng.sample(dist) as usize;
    &words[k.clamp(1, words.len()) - 1]
}

/// Words of one phrase; `head` is the index of its noun inside `words`.
struct Phrase {
    words: Vec<(String, &'static str)>,
    arcs: Vec<(usize, &'static str)>,
    head: usize,
}

fn noun_phrase(case: usize, lex: &Lexicon, rng: &mut SeededRng) -> Phrase {
    let suffix = CASES[case];
    let mut words = Vec::new();
    let mut arcs = Vec::new();
    if case == OBL {
        let prep = ["pa", "vo", "ki"][rng.below(3)];
        words.push((prep.to_string(), "ADP"));
        arcs.push((usize::MAX, "case"));
    }
    if rng.chance(0.6) {
        let det = ["ta", "ko"][rng.below(2)];
        words.push((format!("{det}{suffix}"), "DET"));
        arcs.push((usize::MAX, "det"));
    }
    if rng.chance(0.4) {
        words.push((format!("{}{suffix}", pick(&lex.adjectives, &lex.adj_dist, rng)), "ADJ"));
        arcs.push((usize::MAX, "amod"));
    }
    let head = words.len();
    words.push((format!("{}{suffix}", pick(&lex.nouns, &lex.noun_dist, rng)), "NOUN"));
    arcs.push((usize::MAX, ""));
    // dependents inside the phrase point at the noun
    for a in arcs.iter_mut().take(head) {
        a.0 = head;
    }
    Phrase { words, arcs, head }
}

fn sentence(lex: &Lexicon, rng: &mut SeededRng) -> AnnotatedGraphSample {
    // Each unit is a list of (word, tag, local head or external marker, relation).
    // External heads are resolved after scrambling.
    enum Ext {
        Local(usize),
        Verb,
        Subject,
        Root,
    }
    struct Unit {
        words: Vec<(String, &'static str, Ext, &'static str)>,
    }
    // `offset` is the phrase's start inside its unit
    let phrase_unit = |p: Phrase, ext: Ext, rel: &'static str, offset: usize| {
        let mut words = Vec::new();
        let mut ext = Some(ext);
        for (i, ((w, t), (h, r))) in p.words.into_iter().zip(p.arcs).enumerate() {
            if i == p.head {
                words.push((w, t, ext.take().expect("one head"), rel));
            } else {
                words.push((w, t, Ext::Local(offset + h), r));
            }
        }
        words
    };

    let mut units: Vec<Unit> = Vec::new();
    let mut subject = phrase_unit(noun_phrase(NOM, lex, rng), Ext::Verb, "nsubj", 0);
    if rng.chance(0.3) {
        // the genitive follows the subject phrase inside the same unit
        let offset = subject.len();
        subject.extend(phrase_unit(noun_phrase(GEN, lex, rng), Ext::Subject, "nmod", offset));
    }
    units.push(Unit { words: subject });
    units.push(Unit {
        words: vec![(
            pick(&lex.verbs, &lex.verb_dist, rng).to_string(),
            "VERB",
            Ext::Root,
            "root",
        )],
    });
    if rng.chance(0.6) {
        units.push(Unit {
            words: phrase_unit(noun_phrase(ACC, lex, rng), Ext::Verb, "obj", 0),
        });
    }
    if rng.chance(0.5) {
        units.push(Unit {
            words: phrase_unit(noun_phrase(OBL, lex, rng), Ext::Verb, "obl", 0),
        });
    }
    if rng.chance(0.35) {
        units.push(Unit {
            words: vec![(
                pick(&lex.adverbs, &lex.adv_dist, rng).to_string(),
                "ADV",
                Ext::Verb,
                "advmod",
            )],
        });
    }
    rng.shuffle(&mut units);

    let mut words = Vec::new();
    let mut tags = Vec::new();
    let mut pending = Vec::new();
    let mut verb = 0;
    let mut subject_noun = 0;
    for unit in units {
        let base = words.len();
        for (k, (w, t, ext, rel)) in unit.words.into_iter().enumerate() {
            let pos = base + k + 1;
            if t == "VERB" {
                verb = pos;
            }
            if rel == "nsubj" {
                subject_noun = pos;
            }
            words.push(w);
            tags.push(t.to_string());
            pending.push((pos, ext, rel, base));
        }
    }
    words.push(".".into());
    tags.push("PUNCT".into());
    let n = words.len();
    let mut edges: Vec<Edge> = pending
        .into_iter()
        .map(|(dep, ext, rel, base)| {
            let head = match ext {
                Ext::Local(h) => base + h + 1,
                Ext::Verb => verb,
                Ext::Subject => subject_noun,
                Ext::Root => 0,
            };
            Edge {
                head,
                dep,
                label: rel.to_string(),
            }
        })
        .collect();
    edges.push(Edge {
        head: verb,
        dep: n,
        label: "punct".into(),
    });
    edges.sort_by_key(|e| e.dep);
    AnnotatedGraphSample { words, tags, edges }
}

pub fn generate(cfg: &SynthConfig) -> Result<Treebank> {
    let lex = Lexicon::new(cfg)?;
    let base = SeededRng::new(cfg.seed);
    let make = |stream: u64, count: usize| -> Vec<AnnotatedGraphSample> {
        let mut rng = base.fork(stream);
        (0..count)
            .map(|_| sentence(&lex, &mut rng))
            .collect()
    };
    Ok(Treebank {
        train: make(1, cfg.train),
        dev: make(2, cfg.dev),
        test: make(3, cfg.test),
    })
}
