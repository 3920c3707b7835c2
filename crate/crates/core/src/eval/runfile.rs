//! Ranked run files.
//!
//! `trec`: `qid Q0 pid rank score run_name`, whitespace separated.
//! `marco`: `qid<TAB>pid<TAB>rank`.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::ranking::RankedList;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunFormat {
    Trec,
    Marco,
}

impl std::str::FromStr for RunFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trec" => Ok(RunFormat::Trec),
            "marco" => Ok(RunFormat::Marco),
            _ => Err(Error::Config(format!("unknown run format {s:?}"))),
        }
    }
}

impl std::fmt::Display for RunFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunFormat::Trec => "trec",
            RunFormat::Marco => "marco",
        })
    }
}

pub fn write_run<W: Write>(
    mut out: W,
    run: &[RankedList],
    format: RunFormat,
    run_name: &str,
) -> std::io::Result<()> {
    for list in run {
        for (i, (pid, score)) in list.entries.iter().enumerate() {
            let rank = i + 1;
            match format {
                RunFormat::Trec => {
                    writeln!(out, "{} Q0 {pid} {rank} {score:.6} {run_name}", list.qid)?
                }
                RunFormat::Marco => writeln!(out, "{}\t{pid}\t{rank}", list.qid)?,
            }
        }
    }
    out.flush()
}

/// Reads a run in either format (detected per line by field count). Entries
/// are ordered by their rank column. Marco lines carry no score, so `-rank`
/// stands in for it.
pub fn parse_run<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<RankedList>> {
    let mut order: Vec<u64> = Vec::new();
    let mut rows: HashMap<u64, Vec<(usize, u64, f64)>> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::io(source_name, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::format(source_name, n, msg);
        let int = |s: &str, what: &str| {
            s.parse::<u64>()
                .map_err(|_| bad(format!("{what} {s:?} is not a non-negative integer")))
        };
        let (qid, pid, rank, score) = match fields.len() {
            3 => {
                let rank = int(fields[2], "rank")?;
                (
                    int(fields[0], "query id")?,
                    int(fields[1], "passage id")?,
                    rank,
                    -(rank as f64),
                )
            }
            6 => {
                let score: f64 = fields[4]
                    .parse()
                    .map_err(|_| bad(format!("score {:?} is not a number", fields[4])))?;
                (
                    int(fields[0], "query id")?,
                    int(fields[2], "passage id")?,
                    int(fields[3], "rank")?,
                    score,
                )
            }
            k => return Err(bad(format!("expected 3 or 6 fields, found {k}"))),
        };
        if rank == 0 {
            return Err(bad("ranks start at 1".into()));
        }
        rows.entry(qid)
            .or_insert_with(|| {
                order.push(qid);
                Vec::new()
            })
            .push((rank as usize, pid, score));
    }
    Ok(order
        .into_iter()
        .map(|qid| {
            let mut r = rows.remove(&qid).unwrap();
            r.sort_by_key(|e| e.0);
            RankedList::from_ordered(qid, r.into_iter().map(|e| (e.1, e.2)).collect())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run() -> Vec<RankedList> {
        vec![
            RankedList::from_scores(7, vec![(3, 0.25), (1, 0.75)]),
            RankedList::from_scores(2, vec![(9, -1.5)]),
        ]
    }

    fn text(format: RunFormat) -> String {
        let mut out = Vec::new();
        write_run(&mut out, &run(), format, "duet").unwrap();
        String::from_utf8(out).unwrap()
    }

    #[test]
    fn trec_lines() {
        assert_eq!(
            text(RunFormat::Trec),
            "7 Q0 1 1 0.750000 duet\n7 Q0 3 2 0.250000 duet\n2 Q0 9 1 -1.500000 duet\n"
        );
    }

    #[test]
    fn marco_lines() {
        assert_eq!(text(RunFormat::Marco), "7\t1\t1\n7\t3\t2\n2\t9\t1\n");
    }

    #[test]
    fn round_trip_keeps_order() {
        for f in [RunFormat::Trec, RunFormat::Marco] {
            let back = parse_run(text(f).as_bytes(), "run").unwrap();
            assert_eq!(back.len(), 2);
            assert_eq!(back[0].qid, 7);
            assert_eq!(back[0].pids().collect::<Vec<_>>(), [1, 3]);
            assert_eq!(back[1].pids().collect::<Vec<_>>(), [9]);
        }
        let back = parse_run(text(RunFormat::Trec).as_bytes(), "run").unwrap();
        assert_eq!(back[0].entries[0].1, 0.75);
    }

    #[test]
    fn rank_column_decides_order() {
        let back = parse_run("1\t5\t2\n1\t6\t1\n".as_bytes(), "run").unwrap();
        assert_eq!(back[0].pids().collect::<Vec<_>>(), [6, 5]);
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let err = parse_run("1\t2\t1\n\n1 2\n".as_bytes(), "r.tsv").unwrap_err();
        assert!(matches!(err, Error::Format { line: 3, .. }), "{err}");
        assert!(parse_run("1\tx\t1\n".as_bytes(), "r").is_err());
        assert!(parse_run("1\t2\t0\n".as_bytes(), "r").is_err());
    }
}
