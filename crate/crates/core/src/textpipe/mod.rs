//! Tokenization, vocabulary and IDF tables, sequence encoding, pretrained
//! embedding loading and the dataset file readers.

mod embeddings;
mod encode;
mod readers;
mod tokenize;
mod vocab;

pub use embeddings::{
    load_embedding_init, read_embedding_init, EmbeddingInit, EMBEDDING_INIT_RANGE,
};
pub use encode::{encode, encode_tokens, TermSequence, PASSAGE_CAP, QUERY_CAP};
pub use readers::{
    read_candidates, read_passages, read_qrels, read_triples, write_triples, CandidateRecord,
    CandidatesReader, Lines, PassagesReader, QrelRecord, QrelsReader, Triple, TriplesReader,
};
pub use tokenize::tokenize;
pub use vocab::{
    build_vocabulary, compute_idf, load_tables, normalized_idf, read_tables, save_tables,
    write_tables, CollectionStats, IdfEntry, IdfTable, Vocabulary, DEFAULT_VOCAB_CAP, PAD_ID,
    PAD_TOKEN, UNK_ID, UNK_TOKEN,
};
