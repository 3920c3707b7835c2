use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use super::ranking::RankedList;
use crate::error::{Error, Result};
use crate::textpipe::QrelRecord;

pub const DEFAULT_CUTOFF: usize = 10;

/// Relevant passage ids per judged query. Judgments with relevance ≤ 0 are
/// dropped, so every stored set is non-empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    relevant: BTreeMap<u64, BTreeSet<u64>>,
}

impl Qrels {
    pub fn from_records(records: impl IntoIterator<Item = Result<QrelRecord>>) -> Result<Self> {
        let mut q = Self::default();
        for r in records {
            let r = r?;
            if r.is_relevant() {
                q.relevant.entry(r.qid).or_default().insert(r.pid);
            }
        }
        Ok(q)
    }

    pub fn insert(&mut self, qid: u64, pid: u64) {
        self.relevant.entry(qid).or_default().insert(pid);
    }

    pub fn judged_queries(&self) -> usize {
        self.relevant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevant.is_empty()
    }

    pub fn relevant(&self, qid: u64) -> Option<&BTreeSet<u64>> {
        self.relevant.get(&qid)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &BTreeSet<u64>)> {
        self.relevant.iter().map(|(q, s)| (*q, s))
    }
}

/// `1 / r` for the 1-based rank `r` of the first relevant passage when
/// `r ≤ k`, else 0.
pub fn reciprocal_rank_at_k(ranked: &RankedList, relevant: &BTreeSet<u64>, k: usize) -> f64 {
    ranked
        .pids()
        .take(k)
        .position(|pid| relevant.contains(&pid))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MrrReport {
    pub metric: String,
    pub value: f64,
    pub judged_queries: usize,
    /// Judged queries absent from the run; each counts as 0.
    pub missing_queries: usize,
}

/// Mean reciprocal rank at `k` over every judged query.
pub fn mrr_at_k(run: &[RankedList], qrels: &Qrels, k: usize) -> Result<MrrReport> {
    if k == 0 {
        return Err(Error::Parameter("cutoff k must be ≥ 1".into()));
    }
    if qrels.is_empty() {
        return Err(Error::Contract(
            "qrels contain no relevant judgments".into(),
        ));
    }
    let by_qid: HashMap<u64, &RankedList> = run.iter().map(|r| (r.qid, r)).collect();
    let mut sum = 0.0;
    let mut missing = 0;
    for (qid, relevant) in qrels.iter() {
        match by_qid.get(&qid) {
            Some(r) => sum += reciprocal_rank_at_k(r, relevant, k),
            None => missing += 1,
        }
    }
    Ok(MrrReport {
        metric: format!("mrr@{k}"),
        value: sum / qrels.judged_queries() as f64,
        judged_queries: qrels.judged_queries(),
        missing_queries: missing,
    })
}
