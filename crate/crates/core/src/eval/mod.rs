//! Re-ranking candidate sets, fusing ensembles and scoring runs.

mod bm25;
mod metrics;
mod ranking;
mod runfile;

pub use bm25::{candidate_stats, Bm25, Bm25Params};
pub use metrics::{mrr_at_k, reciprocal_rank_at_k, MrrReport, Qrels, DEFAULT_CUTOFF};
pub use ranking::{
    ensemble_scores, group_candidates, rank_candidates, rank_order, score_candidates, CandidateSet,
    RankedList,
};
pub use runfile::{parse_run, write_run, RunFormat};
