//! Synthetic data shared by the integration tests.
#![allow(dead_code)]

pub mod opgrad;

use duet_core::model::ModelConfig;
use duet_core::textpipe::{build_vocabulary, compute_idf, IdfTable, Triple, Vocabulary};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOPICS: usize = 16;
pub const FILLERS: usize = 16;

fn topic(i: usize) -> String {
    format!("topic{i}")
}

fn filler(i: usize) -> String {
    format!("filler{i}")
}

pub struct ToyQuery {
    pub text: String,
    terms: Vec<usize>,
}

impl ToyQuery {
    /// Recovers the topic terms of a query built by [`toy_query`].
    pub fn parse(text: &str) -> Self {
        let terms = text
            .split_whitespace()
            .filter_map(|w| w.strip_prefix("topic")?.parse().ok())
            .collect();
        ToyQuery {
            text: text.to_string(),
            terms,
        }
    }
}

pub fn toy_query(rng: &mut ChaCha8Rng) -> ToyQuery {
    let mut terms: Vec<usize> = (0..TOPICS).collect();
    terms.shuffle(rng);
    terms.truncate(2);
    let text = terms
        .iter()
        .map(|&t| topic(t))
        .collect::<Vec<_>>()
        .join(" ");
    ToyQuery { text, terms }
}

fn passage(rng: &mut ChaCha8Rng, topic_term: usize) -> String {
    let n = rng.random_range(4..=6);
    let mut words: Vec<String> = (0..n)
        .map(|_| filler(rng.random_range(0..FILLERS)))
        .collect();
    words.push(topic(topic_term));
    words.shuffle(rng);
    words.join(" ")
}

/// Contains one of the query's topic terms.
pub fn relevant_passage(rng: &mut ChaCha8Rng, q: &ToyQuery) -> String {
    let t = *q.terms.choose(rng).unwrap();
    passage(rng, t)
}

/// Contains a topic term the query does not have.
pub fn irrelevant_passage(rng: &mut ChaCha8Rng, q: &ToyQuery) -> String {
    let others: Vec<usize> = (0..TOPICS).filter(|t| !q.terms.contains(t)).collect();
    let t = *others.choose(rng).unwrap();
    passage(rng, t)
}

/// Triples whose positive shares a token with the query and whose negative
/// shares none.
pub fn separable_triples(n: usize, seed: u64) -> Vec<Triple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let q = toy_query(&mut rng);
            Triple {
                positive: relevant_passage(&mut rng, &q),
                negative: irrelevant_passage(&mut rng, &q),
                query: q.text,
            }
        })
        .collect()
}

/// Vocabulary and IDF over every passage in `triples`.
pub fn tables(triples: &[Triple]) -> (Vocabulary, IdfTable) {
    let passages: Vec<&str> = triples
        .iter()
        .flat_map(|t| [t.positive.as_str(), t.negative.as_str()])
        .collect();
    (
        build_vocabulary(&passages, 1000).unwrap(),
        compute_idf(&passages).unwrap(),
    )
}

/// Small dimensions with the vocabulary size filled in.
pub fn tiny_config(vocab: &Vocabulary) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        ..ModelConfig::tiny()
    }
}
