use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::model::DuetV2;
use crate::ndgrad::Scalar;
use crate::textpipe::{encode, CandidateRecord, IdfTable, Vocabulary};

/// One query and the passages to re-rank for it.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub qid: u64,
    pub query: String,
    pub passages: Vec<(u64, String)>,
}

/// Groups candidate records by query id, keeping queries in order of first
/// appearance and passages in file order. A repeated (qid, pid) pair is an
/// error.
pub fn group_candidates(
    records: impl IntoIterator<Item = Result<CandidateRecord>>,
) -> Result<Vec<CandidateSet>> {
    let mut sets: Vec<CandidateSet> = Vec::new();
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut seen = HashSet::new();
    for r in records {
        let r = r?;
        if !seen.insert((r.qid, r.pid)) {
            return Err(Error::Contract(format!(
                "passage {} listed twice for query {}",
                r.pid, r.qid
            )));
        }
        let i = *index.entry(r.qid).or_insert_with(|| {
            sets.push(CandidateSet {
                qid: r.qid,
                query: r.query.clone(),
                passages: Vec::new(),
            });
            sets.len() - 1
        });
        sets[i].passages.push((r.pid, r.passage));
    }
    Ok(sets)
}

/// Passages of one query in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub qid: u64,
    pub entries: Vec<(u64, f64)>,
}

/// Descending score, then ascending passage id.
pub fn rank_order(a: &(u64, f64), b: &(u64, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

impl RankedList {
    /// Sorts `(pid, score)` pairs into rank order.
    pub fn from_scores(qid: u64, mut scores: Vec<(u64, f64)>) -> Self {
        scores.sort_by(rank_order);
        Self {
            qid,
            entries: scores,
        }
    }

    /// Entries already in rank order, as read from a run file.
    pub fn from_ordered(qid: u64, entries: Vec<(u64, f64)>) -> Self {
        Self { qid, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pids(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|e| e.0)
    }
}

/// Mean of per-model scores for each passage. Every list must cover the
/// same passage ids; the result follows the first list's order.
pub fn ensemble_scores(per_model: &[Vec<(u64, f64)>]) -> Result<Vec<(u64, f64)>> {
    let Some(first) = per_model.first() else {
        return Err(Error::Contract("ensemble of zero models".into()));
    };
    let position: HashMap<u64, usize> = first.iter().enumerate().map(|(i, e)| (e.0, i)).collect();
    let mut sums: Vec<f64> = first.iter().map(|e| e.1).collect();
    for (m, scores) in per_model.iter().enumerate().skip(1) {
        if scores.len() != first.len() {
            return Err(Error::Contract(format!(
                "model {m} scored {} passages, model 0 scored {}",
                scores.len(),
                first.len()
            )));
        }
        let mut hit = vec![false; first.len()];
        for &(pid, s) in scores {
            let i = *position.get(&pid).ok_or_else(|| {
                Error::Contract(format!("model {m} scored passage {pid}, model 0 did not"))
            })?;
            if hit[i] {
                return Err(Error::Contract(format!(
                    "model {m} scored passage {pid} twice"
                )));
            }
            hit[i] = true;
            sums[i] += s;
        }
    }
    let n = per_model.len() as f64;
    Ok(first.iter().zip(sums).map(|(e, s)| (e.0, s / n)).collect())
}

/// Inference-mode scores of one model for every candidate, in input order.
pub fn score_candidates<T: Scalar>(
    model: &DuetV2<T>,
    set: &CandidateSet,
    vocab: &Vocabulary,
    idf: &IdfTable,
) -> Result<Vec<(u64, f64)>> {
    let cfg = model.config();
    let q = encode(&set.query, cfg.query_cap, vocab);
    set.passages
        .iter()
        .map(|(pid, text)| {
            let p = encode(text, cfg.passage_cap, vocab);
            Ok((*pid, model.score(&q, &p, idf)?.as_f64()))
        })
        .collect()
}

/// Scores a query's candidates with one model, or with the mean of several,
/// and sorts them.
pub fn rank_candidates<T: Scalar>(
    models: &[DuetV2<T>],
    set: &CandidateSet,
    vocab: &Vocabulary,
    idf: &IdfTable,
) -> Result<RankedList> {
    let per_model = models
        .iter()
        .map(|m| score_candidates(m, set, vocab, idf))
        .collect::<Result<Vec<_>>>()?;
    let fused = if per_model.len() == 1 {
        per_model.into_iter().next().unwrap()
    } else {
        ensemble_scores(&per_model)?
    };
    Ok(RankedList::from_scores(set.qid, fused))
}
