use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use duet_core::eval::{
    candidate_stats, group_candidates, mrr_at_k, parse_run, rank_candidates, write_run, Bm25,
    Bm25Params, Qrels, RankedList,
};
use duet_core::model::{load_checkpoint_for, parse_key_values, save_checkpoint, DuetV2};
use duet_core::textpipe::{
    load_embedding_init, load_tables, read_candidates, read_passages, read_qrels, save_tables,
    CollectionStats, IdfTable, Vocabulary,
};
use duet_core::train::{
    make_bagging_plan, train_bagged, train_model, FileSource, TrainInputs, TrainReport,
    SHUFFLE_BLOCK,
};
use duet_core::{Error, Result};
use rayon::prelude::*;

use crate::settings::{flag_setting, resolve, Settings, SEED_ENV};
use crate::{EvalArgs, RankArgs, TrainArgs, VocabArgs};

pub const VOCAB_FILE: &str = "vocab.tsv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))
}

pub fn vocab(a: &VocabArgs) -> Result<()> {
    let stats = if a.from_candidates {
        candidate_stats(&group_candidates(read_candidates(&a.collection)?)?)
    } else {
        let mut stats = CollectionStats::new();
        for p in read_passages(&a.collection, a.with_ids)? {
            stats.add_passage(&p?);
        }
        stats
    };
    let vocab = Vocabulary::from_stats(&stats, a.cap)?;
    let idf = IdfTable::from_stats(&stats)?;
    create_dir(&a.out)?;
    let path = a.out.join(VOCAB_FILE);
    save_tables(&path, &vocab, &idf)?;
    println!("passages: {}", stats.passages);
    println!("distinct terms: {}", idf.len());
    println!(
        "vocabulary: {} ids ({} terms + PAD + UNK) -> {}",
        vocab.len(),
        vocab.content_len(),
        path.display()
    );
    Ok(())
}

fn report_path(out: &Path, member: Option<usize>) -> (PathBuf, PathBuf) {
    match member {
        None => (out.join("model.ckpt"), out.join("report.jsonl")),
        Some(k) => (
            out.join(format!("model_{k}.ckpt")),
            out.join(format!("report_{k}.jsonl")),
        ),
    }
}

/// First report line: the effective settings.
fn config_line(s: &Settings) -> Result<String> {
    let map: serde_json::Map<String, serde_json::Value> = parse_key_values(&s.to_text())?
        .into_iter()
        .map(|(k, v)| (k, serde_json::Value::String(v)))
        .collect();
    Ok(serde_json::json!({ "config": map }).to_string())
}

fn finish(
    s: &Settings,
    model: &DuetV2<f32>,
    mut report: TrainReport,
    out: &Path,
    member: Option<usize>,
) -> Result<()> {
    let (ckpt, report_file) = report_path(out, member);
    save_checkpoint(model, &ckpt)?;
    report.checkpoint = Some(ckpt.display().to_string());
    let mut w = create(&report_file)?;
    let io = |e| Error::io(&report_file, e);
    writeln!(w, "{}", config_line(s)?).map_err(io)?;
    report.write_jsonl(&mut w).map_err(io)?;
    w.flush().map_err(io)?;
    println!(
        "{}: {} minibatches, final loss {:.6}, seed {}",
        ckpt.display(),
        report.optimizer_steps,
        report.final_loss().unwrap_or(f64::NAN),
        report.seed
    );
    if report.skipped_records > 0 {
        eprintln!(
            "warning: skipped {} triples with an empty field",
            report.skipped_records
        );
    }
    if report.shortfall > 0 {
        eprintln!(
            "warning: triples file recycled; {} more usable triples were needed for one pass",
            report.shortfall
        );
    }
    Ok(())
}

pub fn train(a: &TrainArgs, explicit: &[(String, String)]) -> Result<()> {
    let file = match &a.config {
        Some(p) => Some((
            p.display().to_string(),
            fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        )),
        None => None,
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let flags: Vec<(&str, String)> = explicit
        .iter()
        .filter_map(|(id, raw)| flag_setting(id, raw))
        .collect();
    let mut s = resolve(
        file.as_ref().map(|(n, t)| (n.as_str(), t.as_str())),
        env_seed.as_deref(),
        &flags,
    )?;
    let (vocab, idf) = load_tables(&a.vocab)?;
    s.bind_vocabulary(vocab.len())?;
    let embeddings = match &a.glove {
        Some(p) => {
            let init = load_embedding_init(p, &vocab, s.model.embed_dim, s.model.seed)?;
            eprintln!(
                "{}: pre-trained vectors for {} of {} terms",
                p.display(),
                init.covered,
                vocab.content_len()
            );
            Some(init)
        }
        None => None,
    };
    let source = FileSource::index(&a.triples, SHUFFLE_BLOCK)?;
    create_dir(&a.out)?;
    let inputs = TrainInputs {
        source: &source,
        vocab: &vocab,
        idf: &idf,
        embeddings: embeddings.as_ref(),
    };
    let pool = thread_pool(s.jobs)?;
    if s.bagging == 1 {
        let total = s.train.num_minibatches;
        let every = (total / 10).max(1);
        let (model, report) = pool.install(|| {
            train_model(inputs, &s.model, &s.train, |r| {
                if r.step % every == 0 || r.step == total {
                    eprintln!("step {}/{total} loss {:.6}", r.step, r.loss);
                }
            })
        })?;
        finish(&s, &model, report, &a.out, None)
    } else {
        let plan = make_bagging_plan(s.bagging, s.train.seed, s.train.sample_mode)?;
        let trained = pool.install(|| train_bagged(inputs, &s.model, &s.train, &plan))?;
        for (member, (model, report)) in plan.members.iter().zip(trained) {
            let mut member_settings = s.clone();
            member_settings.train.seed = member.seed;
            member_settings.model.seed = member.seed;
            finish(&member_settings, &model, report, &a.out, Some(member.index))?;
        }
        Ok(())
    }
}

pub fn rank(a: &RankArgs) -> Result<()> {
    let start = Instant::now();
    let sets = group_candidates(read_candidates(&a.candidates)?)?;
    let pool = thread_pool(a.jobs)?;
    let run: Vec<RankedList> = if a.bm25 {
        let bm = Bm25::new(&candidate_stats(&sets), Bm25Params { k1: a.k1, b: a.b })?;
        pool.install(|| sets.par_iter().map(|s| bm.rank(s)).collect())
    } else {
        let vocab_path = a
            .vocab
            .as_ref()
            .expect("clap requires --vocab without --bm25");
        let (vocab, idf) = load_tables(vocab_path)?;
        let models = a
            .checkpoints
            .iter()
            .map(|p| load_checkpoint_for(p, vocab.len()))
            .collect::<Result<Vec<_>>>()?;
        pool.install(|| {
            sets.par_iter()
                .map(|s| rank_candidates(&models, s, &vocab, &idf))
                .collect::<Result<Vec<_>>>()
        })?
    };
    let mut w = create(&a.out)?;
    write_run(&mut w, &run, a.format, &a.run_name).map_err(|e| Error::io(&a.out, e))?;
    let secs = start.elapsed().as_secs_f64();
    let passages: usize = run.iter().map(RankedList::len).sum();
    println!(
        "ranked {} queries ({passages} passages) in {secs:.2}s, {:.2} ms/query -> {}",
        run.len(),
        1000.0 * secs / run.len().max(1) as f64,
        a.out.display()
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let file = File::open(&a.run).map_err(|e| Error::io(&a.run, e))?;
    let run = parse_run(BufReader::new(file), &a.run.display().to_string())?;
    let qrels = Qrels::from_records(read_qrels(&a.qrels)?)?;
    let report = mrr_at_k(&run, &qrels, a.k)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    let out = a.out.clone().unwrap_or_else(|| {
        let mut p = a.run.clone().into_os_string();
        p.push(".mrr.json");
        PathBuf::from(p)
    });
    let mut w = create(&out)?;
    writeln!(w, "{json}")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&out, e))?;
    println!("{json}");
    Ok(())
}
