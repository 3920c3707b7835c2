use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::textpipe::{tokenize, CollectionStats};

use super::ranking::{CandidateSet, RankedList};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

/// Okapi BM25 over fixed collection statistics.
#[derive(Debug, Clone)]
pub struct Bm25 {
    params: Bm25Params,
    passages: u64,
    avgdl: f64,
    doc_freq: HashMap<String, u64>,
}

impl Bm25 {
    pub fn new(stats: &CollectionStats, params: Bm25Params) -> Result<Self> {
        if params.k1.is_nan() || params.k1 < 0.0 || !(0.0..=1.0).contains(&params.b) {
            return Err(Error::Parameter(format!(
                "BM25 needs k1 ≥ 0 and b in [0, 1], got k1={} b={}",
                params.k1, params.b
            )));
        }
        if stats.passages == 0 {
            return Err(Error::Contract("BM25 collection is empty".into()));
        }
        let total: u64 = stats.term_freq.values().sum();
        Ok(Self {
            params,
            passages: stats.passages,
            avgdl: total as f64 / stats.passages as f64,
            doc_freq: stats.doc_freq.clone(),
        })
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    /// `log((N - n_t + 0.5) / (n_t + 0.5) + 1)`.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.passages as f64;
        let nt = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((n - nt + 0.5) / (nt + 0.5) + 1.0).ln()
    }

    /// Each query token occurrence contributes separately, so a repeated
    /// query term counts twice.
    pub fn score(&self, query: &[String], passage: &[String]) -> f64 {
        let mut tf: HashMap<&str, u64> = HashMap::new();
        for t in passage {
            *tf.entry(t.as_str()).or_insert(0) += 1;
        }
        let Bm25Params { k1, b } = self.params;
        let norm = k1 * (1.0 - b + b * passage.len() as f64 / self.avgdl);
        query
            .iter()
            .filter_map(|t| {
                let f = *tf.get(t.as_str())? as f64;
                Some(self.idf(t) * f * (k1 + 1.0) / (f + norm))
            })
            .sum()
    }

    pub fn rank(&self, set: &CandidateSet) -> RankedList {
        let q = tokenize(&set.query);
        let scores = set
            .passages
            .iter()
            .map(|(pid, text)| (*pid, self.score(&q, &tokenize(text))))
            .collect();
        RankedList::from_scores(set.qid, scores)
    }
}

/// Statistics over the distinct passages of a candidate file, counting each
/// passage id once.
pub fn candidate_stats(sets: &[CandidateSet]) -> CollectionStats {
    let mut seen = std::collections::HashSet::new();
    let mut stats = CollectionStats::new();
    for set in sets {
        for (pid, text) in &set.passages {
            if seen.insert(*pid) {
                stats.add_passage(text);
            }
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn single_passage_by_hand() {
        let bm = Bm25::new(
            &CollectionStats::from_passages(["cat"]),
            Bm25Params::default(),
        )
        .unwrap();
        // N=1, n=1: idf = ln(0.5/1.5 + 1); |d| = avgdl so norm = k1
        let idf = (0.5f64 / 1.5 + 1.0).ln();
        let want = idf * 1.0 * 1.9 / (1.0 + 0.9);
        assert!((bm.score(&toks("cat"), &toks("cat")) - want).abs() < 1e-15);
    }

    #[test]
    fn no_overlap_is_zero_and_duplicates_double() {
        let stats = CollectionStats::from_passages(["a b c", "b c d", "e"]);
        let bm = Bm25::new(&stats, Bm25Params::default()).unwrap();
        assert_eq!(bm.score(&toks("x y"), &toks("a b")), 0.0);
        let one = bm.score(&toks("a"), &toks("a b c"));
        let two = bm.score(&toks("a a"), &toks("a b c"));
        assert!(one > 0.0);
        assert!((two - 2.0 * one).abs() < 1e-15);
    }

    #[test]
    fn invalid_params_rejected() {
        let stats = CollectionStats::from_passages(["a"]);
        assert!(Bm25::new(&stats, Bm25Params { k1: -1.0, b: 0.4 }).is_err());
        assert!(Bm25::new(&stats, Bm25Params { k1: 0.9, b: 1.5 }).is_err());
        assert!(Bm25::new(&CollectionStats::new(), Bm25Params::default()).is_err());
    }
}
