//! Streaming readers for the dataset files. Each reader yields one record
//! per non-empty line and reports malformed lines with their line number.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A training sample: a query, a more relevant passage and a less relevant one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub query: String,
    pub positive: String,
    pub negative: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateRecord {
    pub qid: u64,
    pub pid: u64,
    pub query: String,
    pub passage: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QrelRecord {
    pub qid: u64,
    pub pid: u64,
    pub relevance: i64,
}

impl QrelRecord {
    pub fn is_relevant(&self) -> bool {
        self.relevance > 0
    }
}

/// Line iterator that tracks 1-based line numbers and skips blank lines.
pub struct Lines<R> {
    inner: std::io::Lines<R>,
    line_no: usize,
    source_name: String,
}

impl<R: BufRead> Lines<R> {
    pub fn new(reader: R, source_name: impl Into<String>) -> Self {
        Self {
            inner: reader.lines(),
            line_no: 0,
            source_name: source_name.into(),
        }
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::format(self.source_name.clone(), self.line_no, message)
    }

    fn next_line(&mut self) -> Option<Result<String>> {
        loop {
            let line = self.inner.next()?;
            self.line_no += 1;
            match line {
                Err(e) => return Some(Err(self.error(e.to_string()))),
                Ok(mut l) => {
                    if l.ends_with('\r') {
                        l.pop();
                    }
                    if !l.is_empty() {
                        return Some(Ok(l));
                    }
                }
            }
        }
    }
}

fn parse_id(lines: &Lines<impl BufRead>, field: &str, what: &str) -> Result<u64> {
    field
        .trim()
        .parse()
        .map_err(|_| lines.error(format!("{what} {field:?} is not a non-negative integer")))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Three TAB-separated fields: query, positive passage, negative passage.
pub struct TriplesReader<R>(Lines<R>);

impl<R: BufRead> TriplesReader<R> {
    pub fn new(reader: R, source_name: impl Into<String>) -> Self {
        Self(Lines::new(reader, source_name))
    }
}

impl<R: BufRead> Iterator for TriplesReader<R> {
    type Item = Result<Triple>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = match self.0.next_line()? {
            Ok(l) => l,
            Err(e) => return Some(Err(e)),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Some(Err(self.0.error(format!(
                "expected 3 tab-separated fields, got {}",
                fields.len()
            ))));
        }
        Some(Ok(Triple {
            query: fields[0].to_string(),
            positive: fields[1].to_string(),
            negative: fields[2].to_string(),
        }))
    }
}

pub fn read_triples(path: &Path) -> Result<TriplesReader<BufReader<File>>> {
    Ok(TriplesReader::new(open(path)?, path.display().to_string()))
}

/// Writes triples in the format [`TriplesReader`] accepts. Fields must not
/// contain tabs or newlines.
pub fn write_triples<'a, W: Write>(
    mut out: W,
    triples: impl IntoIterator<Item = &'a Triple>,
) -> std::io::Result<()> {
    for t in triples {
        writeln!(out, "{}\t{}\t{}", t.query, t.positive, t.negative)?;
    }
    Ok(())
}

/// Four TAB-separated fields: query id, passage id, query text, passage text.
pub struct CandidatesReader<R>(Lines<R>);

impl<R: BufRead> CandidatesReader<R> {
    pub fn new(reader: R, source_name: impl Into<String>) -> Self {
        Self(Lines::new(reader, source_name))
    }
}

impl<R: BufRead> Iterator for CandidatesReader<R> {
    type Item = Result<CandidateRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = match self.0.next_line()? {
            Ok(l) => l,
            Err(e) => return Some(Err(e)),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Some(Err(self.0.error(format!(
                "expected 4 tab-separated fields, got {}",
                fields.len()
            ))));
        }
        let record = (|| {
            Ok(CandidateRecord {
                qid: parse_id(&self.0, fields[0], "query id")?,
                pid: parse_id(&self.0, fields[1], "passage id")?,
                query: fields[2].to_string(),
                passage: fields[3].to_string(),
            })
        })();
        Some(record)
    }
}

pub fn read_candidates(path: &Path) -> Result<CandidatesReader<BufReader<File>>> {
    Ok(CandidatesReader::new(
        open(path)?,
        path.display().to_string(),
    ))
}

/// Four whitespace-separated fields: query id, literal `0`, passage id,
/// relevance.
pub struct QrelsReader<R>(Lines<R>);

impl<R: BufRead> QrelsReader<R> {
    pub fn new(reader: R, source_name: impl Into<String>) -> Self {
        Self(Lines::new(reader, source_name))
    }
}

impl<R: BufRead> Iterator for QrelsReader<R> {
    type Item = Result<QrelRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = match self.0.next_line()? {
            Ok(l) => l,
            Err(e) => return Some(Err(e)),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Some(Err(self.0.error(format!(
                "expected 4 whitespace-separated fields, got {}",
                fields.len()
            ))));
        }
        if fields[1] != "0" && fields[1] != "Q0" {
            return Some(Err(self
                .0
                .error(format!("second field must be `0`, got {:?}", fields[1]))));
        }
        let record = (|| {
            let relevance = fields[3].parse().map_err(|_| {
                self.0
                    .error(format!("relevance {:?} is not an integer", fields[3]))
            })?;
            Ok(QrelRecord {
                qid: parse_id(&self.0, fields[0], "query id")?,
                pid: parse_id(&self.0, fields[2], "passage id")?,
                relevance,
            })
        })();
        Some(record)
    }
}

pub fn read_qrels(path: &Path) -> Result<QrelsReader<BufReader<File>>> {
    Ok(QrelsReader::new(open(path)?, path.display().to_string()))
}

/// One passage per line. With `id_column`, a leading `<id>\t` is stripped.
pub struct PassagesReader<R> {
    lines: Lines<R>,
    id_column: bool,
}

impl<R: BufRead> PassagesReader<R> {
    pub fn new(reader: R, source_name: impl Into<String>, id_column: bool) -> Self {
        Self {
            lines: Lines::new(reader, source_name),
            id_column,
        }
    }
}

impl<R: BufRead> Iterator for PassagesReader<R> {
    type Item = Result<String>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = match self.lines.next_line()? {
            Ok(l) => l,
            Err(e) => return Some(Err(e)),
        };
        if !self.id_column {
            return Some(Ok(line));
        }
        match line.split_once('\t') {
            Some((_, text)) => Some(Ok(text.to_string())),
            None => Some(Err(self.lines.error("expected `<id>\\t<passage>`"))),
        }
    }
}

pub fn read_passages(path: &Path, id_column: bool) -> Result<PassagesReader<BufReader<File>>> {
    Ok(PassagesReader::new(
        open(path)?,
        path.display().to_string(),
        id_column,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn triple_line() {
        let mut r = TriplesReader::new("what is x\tx is y\tunrelated\n".as_bytes(), "t");
        let t = r.next().unwrap().unwrap();
        assert_eq!(t.query, "what is x");
        assert_eq!(t.positive, "x is y");
        assert_eq!(t.negative, "unrelated");
        assert!(r.next().is_none());
    }

    #[test]
    fn triple_with_two_columns_names_line() {
        let data = "a\tb\tc\n\nq\tp\n";
        let recs: Vec<_> = TriplesReader::new(data.as_bytes(), "triples.tsv").collect();
        assert!(recs[0].is_ok());
        let err = recs[1].as_ref().unwrap_err().to_string();
        assert!(err.starts_with("triples.tsv:3:"), "{err}");
    }

    #[test]
    fn qrels_line() {
        let mut r = QrelsReader::new("3 0 7 1\n".as_bytes(), "q");
        let q = r.next().unwrap().unwrap();
        assert_eq!((q.qid, q.pid, q.relevance), (3, 7, 1));
        assert!(q.is_relevant());
    }

    #[test]
    fn non_integer_ids_rejected() {
        let mut r = QrelsReader::new("x 0 7 1\n".as_bytes(), "q");
        assert!(matches!(r.next(), Some(Err(Error::Format { line: 1, .. }))));
        let mut c = CandidatesReader::new("1\tp9\tq\tp\n".as_bytes(), "c");
        assert!(matches!(c.next(), Some(Err(Error::Format { line: 1, .. }))));
        let mut c = CandidatesReader::new("1\t9\tq\tp\textra\n".as_bytes(), "c");
        assert!(matches!(c.next(), Some(Err(Error::Format { .. }))));
    }

    #[test]
    fn candidate_line() {
        let mut c = CandidatesReader::new("12\t34\tq text\tp text\r\n".as_bytes(), "c");
        let rec = c.next().unwrap().unwrap();
        assert_eq!(rec.qid, 12);
        assert_eq!(rec.pid, 34);
        assert_eq!(rec.passage, "p text");
    }

    #[test]
    fn passages_with_and_without_ids() {
        let p: Vec<_> = PassagesReader::new("7\thello world\n".as_bytes(), "p", true)
            .map(Result::unwrap)
            .collect();
        assert_eq!(p, ["hello world"]);
        let p: Vec<_> = PassagesReader::new("hello\tworld\n".as_bytes(), "p", false)
            .map(Result::unwrap)
            .collect();
        assert_eq!(p, ["hello\tworld"]);
    }

    proptest! {
        #[test]
        fn triples_round_trip(
            records in proptest::collection::vec(("[a-z ]{1,20}", "[a-z ]{1,40}", "[a-z ]{1,40}"), 0..20)
        ) {
            let triples: Vec<Triple> = records
                .into_iter()
                .map(|(q, p, n)| Triple { query: q, positive: p, negative: n })
                .collect();
            let mut buf = Vec::new();
            write_triples(&mut buf, &triples).unwrap();
            let back: Vec<Triple> = TriplesReader::new(buf.as_slice(), "mem")
                .collect::<Result<_>>()
                .unwrap();
            prop_assert_eq!(back, triples);
        }
    }
}
