use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::tokenize::tokenize;
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<PAD>";
pub const UNK_TOKEN: &str = "<UNK>";

/// Content-term capacity used for MS MARCO.
pub const DEFAULT_VOCAB_CAP: usize = 71_486;

/// Term statistics over a passage collection. Counting can be sharded and
/// merged; merging is plain addition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollectionStats {
    /// Number of passages (N).
    pub passages: u64,
    /// Total occurrences per term.
    pub term_freq: HashMap<String, u64>,
    /// Passages containing each term (n_t).
    pub doc_freq: HashMap<String, u64>,
}

impl CollectionStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_passage(&mut self, text: &str) {
        self.add_tokens(&tokenize(text));
    }

    pub fn add_tokens(&mut self, tokens: &[String]) {
        self.passages += 1;
        let mut seen = HashSet::new();
        for t in tokens {
            *self.term_freq.entry(t.clone()).or_insert(0) += 1;
            if seen.insert(t.as_str()) {
                *self.doc_freq.entry(t.clone()).or_insert(0) += 1;
            }
        }
    }

    pub fn from_passages<I, S>(passages: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut stats = Self::new();
        for p in passages {
            stats.add_passage(p.as_ref());
        }
        stats
    }

    pub fn merge(&mut self, other: CollectionStats) {
        self.passages += other.passages;
        for (t, c) in other.term_freq {
            *self.term_freq.entry(t).or_insert(0) += c;
        }
        for (t, c) in other.doc_freq {
            *self.doc_freq.entry(t).or_insert(0) += c;
        }
    }
}

/// Dense term→id map with PAD = 0 and UNK = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Keeps the `cap` most frequent terms by total occurrence count, ties
    /// broken lexicographically, and numbers them from 2 in that order.
    pub fn from_stats(stats: &CollectionStats, cap: usize) -> Result<Self> {
        if cap < 1 {
            return Err(Error::Parameter("vocabulary cap must be ≥ 1".into()));
        }
        if stats.passages == 0 {
            return Err(Error::Contract(
                "cannot build a vocabulary from an empty collection".into(),
            ));
        }
        let mut ranked: Vec<(&String, u64)> =
            stats.term_freq.iter().map(|(t, &c)| (t, c)).collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap);
        Ok(Self::from_terms(ranked.into_iter().map(|(t, _)| t.clone())))
    }

    /// Content terms in id order, starting at id 2.
    pub fn from_terms(terms: impl IntoIterator<Item = String>) -> Self {
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(terms);
        let index = all
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { terms: all, index }
    }

    /// Size including PAD and UNK.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn content_len(&self) -> usize {
        self.terms.len() - 2
    }

    /// Id of `term`, or `UNK_ID`.
    pub fn id(&self, term: &str) -> u32 {
        self.index.get(term).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: u32) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    /// Content terms in id order.
    pub fn content_terms(&self) -> impl Iterator<Item = &str> {
        self.terms[2..].iter().map(String::as_str)
    }
}

pub fn build_vocabulary<I, S>(passages: I, cap: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    Vocabulary::from_stats(&CollectionStats::from_passages(passages), cap)
}

/// Normalized IDF, `log(N / n_t) / log(N)`, for every term in a collection.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    passages: u64,
    entries: HashMap<String, IdfEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdfEntry {
    pub doc_freq: u64,
    pub idf: f64,
}

pub fn normalized_idf(passages: u64, doc_freq: u64) -> f64 {
    let n = passages as f64;
    (n / doc_freq as f64).ln() / n.ln()
}

impl IdfTable {
    pub fn from_stats(stats: &CollectionStats) -> Result<Self> {
        if stats.passages < 2 {
            return Err(Error::Parameter(format!(
                "IDF needs at least 2 passages, collection has {}",
                stats.passages
            )));
        }
        let entries = stats
            .doc_freq
            .iter()
            .map(|(t, &df)| {
                (
                    t.clone(),
                    IdfEntry {
                        doc_freq: df,
                        idf: normalized_idf(stats.passages, df),
                    },
                )
            })
            .collect();
        Ok(Self {
            passages: stats.passages,
            entries,
        })
    }

    pub fn passages(&self) -> u64 {
        self.passages
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// IDF of `term`; terms never seen in the collection get 1.
    pub fn idf(&self, term: &str) -> f64 {
        self.entries.get(term).map_or(1.0, |e| e.idf)
    }

    pub fn doc_freq(&self, term: &str) -> u64 {
        self.entries.get(term).map_or(0, |e| e.doc_freq)
    }

    pub fn get(&self, term: &str) -> Option<IdfEntry> {
        self.entries.get(term).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, IdfEntry)> {
        self.entries.iter().map(|(t, e)| (t.as_str(), *e))
    }
}

pub fn compute_idf<I, S>(passages: I) -> Result<IdfTable>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    IdfTable::from_stats(&CollectionStats::from_passages(passages))
}

/// Writes vocabulary and IDF as one TSV: a `#N=<count>` header, then
/// `term\tid\tn_t\tidf` rows. Vocabulary terms come first in id order,
/// followed by the remaining collection terms (id 1) in lexicographic order.
pub fn write_tables<W: Write>(
    mut out: W,
    vocab: &Vocabulary,
    idf: &IdfTable,
) -> std::io::Result<()> {
    writeln!(out, "#N={}", idf.passages)?;
    for (i, term) in vocab.content_terms().enumerate() {
        let (df, v) = idf.get(term).map_or((0, 1.0), |e| (e.doc_freq, e.idf));
        writeln!(out, "{term}\t{}\t{df}\t{v}", i + 2)?;
    }
    let mut rest: Vec<(&str, IdfEntry)> =
        idf.iter().filter(|(t, _)| vocab.get(t).is_none()).collect();
    rest.sort_unstable_by(|a, b| a.0.cmp(b.0));
    for (term, e) in rest {
        writeln!(out, "{term}\t{UNK_ID}\t{}\t{}", e.doc_freq, e.idf)?;
    }
    Ok(())
}

pub fn save_tables(path: &Path, vocab: &Vocabulary, idf: &IdfTable) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_tables(&mut w, vocab, idf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_tables<R: BufRead>(reader: R, source_name: &str) -> Result<(Vocabulary, IdfTable)> {
    let fmt = |line: usize, msg: String| Error::format(source_name, line, msg);
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| fmt(1, e.to_string()))?,
        None => return Err(fmt(1, "empty file".into())),
    };
    let passages: u64 = header
        .strip_prefix("#N=")
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| fmt(1, format!("expected `#N=<count>` header, got {header:?}")))?;

    let mut terms = Vec::new();
    let mut entries = HashMap::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| fmt(line_no, e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(fmt(
                line_no,
                format!("expected 4 fields, got {}", fields.len()),
            ));
        }
        let id: u32 = fields[1]
            .parse()
            .map_err(|_| fmt(line_no, format!("bad id {:?}", fields[1])))?;
        let df: u64 = fields[2]
            .parse()
            .map_err(|_| fmt(line_no, format!("bad n_t {:?}", fields[2])))?;
        let v: f64 = fields[3]
            .parse()
            .map_err(|_| fmt(line_no, format!("bad idf {:?}", fields[3])))?;
        let term = fields[0].to_string();
        if id >= 2 {
            if id as usize != terms.len() + 2 {
                return Err(fmt(line_no, format!("id {id} out of sequence")));
            }
            terms.push(term.clone());
        } else if id != UNK_ID {
            return Err(fmt(line_no, format!("reserved id {id} in table")));
        }
        if df > 0 {
            entries.insert(
                term,
                IdfEntry {
                    doc_freq: df,
                    idf: v,
                },
            );
        }
    }
    Ok((
        Vocabulary::from_terms(terms),
        IdfTable { passages, entries },
    ))
}

pub fn load_tables(path: &Path) -> Result<(Vocabulary, IdfTable)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tables(BufReader::new(file), &path.display().to_string())
}
