//! Runs the `duetrank` binary on small generated files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use duet_core::model::load_checkpoint;

const TINY: [&str; 10] = [
    "--hidden",
    "4",
    "--embed-dim",
    "4",
    "--query-cap",
    "4",
    "--passage-cap",
    "8",
    "--pool-window",
    "4",
];

fn duetrank(args: &[&str]) -> Output {
    duetrank_env(args, &[])
}

fn duetrank_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_duetrank"));
    cmd.args(args).env_remove("DUETRANK_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Toy triples, candidates and qrels in the style of the real data files.
/// Query `q` is about `topic{q}`; its relevant candidates mention it.
struct Toy {
    _dir: tempfile::TempDir,
    root: PathBuf,
    triples: PathBuf,
    candidates: PathBuf,
    qrels: PathBuf,
    vocab: PathBuf,
}

fn toy() -> Toy {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let fill = |i: usize| {
        format!(
            "filler{} filler{} filler{}",
            i % 5,
            (i * 3) % 7,
            (i * 5) % 11
        )
    };
    let mut triples = String::new();
    for i in 0..24 {
        let (t, u) = (i % 6, (i + 3) % 6);
        writeln!(
            triples,
            "topic{t} thing\t{} topic{t}\t{} topic{u}",
            fill(i),
            fill(i + 1)
        )
        .unwrap();
    }
    let mut cands = String::new();
    let mut qrels = String::new();
    let mut pid = 500;
    for q in 0..4 {
        for i in 0..6 {
            let topic = if i % 3 == 1 { q } else { (q + 2) % 6 };
            if topic == q {
                writeln!(qrels, "{q} 0 {pid} 1").unwrap();
            }
            writeln!(
                cands,
                "{q}\t{pid}\ttopic{q} thing\t{} topic{topic}",
                fill(pid)
            )
            .unwrap();
            pid += 1;
        }
    }
    let t = Toy {
        triples: root.join("triples.tsv"),
        candidates: root.join("top.tsv"),
        qrels: root.join("qrels.tsv"),
        vocab: root.join("vocab").join("vocab.tsv"),
        root,
        _dir: dir,
    };
    fs::write(&t.triples, triples).unwrap();
    fs::write(&t.candidates, cands).unwrap();
    fs::write(&t.qrels, qrels).unwrap();
    ok(&duetrank(&[
        "vocab",
        s(&t.candidates),
        "--from-candidates",
        "-o",
        s(&t.root.join("vocab")),
    ]));
    t
}

fn train(t: &Toy, out: &str, extra: &[&str]) -> PathBuf {
    let dir = t.root.join(out);
    let mut args = vec![
        "train",
        s(&t.triples),
        "--vocab",
        s(&t.vocab),
        "-o",
        s(&dir),
    ];
    for (flag, value) in [("--minibatches", "2"), ("--batch-size", "2")] {
        if !extra.contains(&flag) {
            args.extend([flag, value]);
        }
    }
    args.extend(TINY);
    args.extend(extra);
    ok(&duetrank(&args));
    dir
}

#[test]
fn vocab_small_collection_keeps_every_term() {
    let dir = tempfile::tempdir().unwrap();
    let col = dir.path().join("collection.txt");
    fs::write(&col, "the cat sat\nthe dog ran\na bird\n").unwrap();
    let out = dir.path().join("v");
    let stdout = ok(&duetrank(&["vocab", s(&col), "--cap", "10", "-o", s(&out)]));
    assert!(stdout.contains("passages: 3"), "{stdout}");
    assert!(stdout.contains("vocabulary: 9 ids"), "{stdout}");
    let first = fs::read(out.join("vocab.tsv")).unwrap();
    ok(&duetrank(&["vocab", s(&col), "--cap", "10", "-o", s(&out)]));
    assert_eq!(fs::read(out.join("vocab.tsv")).unwrap(), first);
}

#[test]
fn missing_input_exits_2_and_names_the_path() {
    let out = duetrank(&["vocab", "/no/such/collection.tsv", "-o", "/tmp/unused"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("/no/such/collection.tsv"));
}

#[test]
fn two_minibatches_record_two_steps() {
    let t = toy();
    let dir = train(&t, "m", &[]);
    let report = fs::read_to_string(dir.join("report.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = report
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0]["config"]["num_minibatches"], "2");
    assert_eq!(lines[3]["summary"], true);
    assert_eq!(lines[3]["optimizer_steps"], 2);
}

#[test]
fn ablation_flags_reach_the_checkpoint() {
    let t = toy();
    let full = load_checkpoint(&train(&t, "full", &[]).join("model.ckpt")).unwrap();
    let dir = train(&t, "abl", &["--no-idf", "--tanh", "--linear-combine"]);
    let abl = load_checkpoint(&dir.join("model.ckpt")).unwrap();
    assert!(full.config().idf_weighting);
    assert!(!abl.config().idf_weighting);
    assert_eq!(abl.config().activation.to_string(), "tanh");
    assert_eq!(abl.config().combiner.to_string(), "linear");
}

#[test]
fn bagging_writes_distinct_seeded_models() {
    let t = toy();
    let dir = train(&t, "bag", &["--bagging", "8", "--seed", "40"]);
    let mut bytes = Vec::new();
    for k in 0..8 {
        let path = dir.join(format!("model_{k}.ckpt"));
        assert_eq!(load_checkpoint(&path).unwrap().config().seed, 40 + k as u64);
        bytes.push(fs::read(&path).unwrap());
        let report = fs::read_to_string(dir.join(format!("report_{k}.jsonl"))).unwrap();
        assert!(report.contains("\"sample_mode\":\"shuffle\""));
    }
    for i in 0..8 {
        for j in i + 1..8 {
            assert_ne!(bytes[i], bytes[j], "models {i} and {j}");
        }
    }
}

#[test]
fn jobs_do_not_change_models() {
    let t = toy();
    let a = train(
        &t,
        "j1",
        &["--bagging", "3", "--jobs", "1", "--batch-size", "20"],
    );
    let b = train(
        &t,
        "j3",
        &["--bagging", "3", "--jobs", "3", "--batch-size", "20"],
    );
    for k in 0..3 {
        let name = format!("model_{k}.ckpt");
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap()
        );
    }
}

#[test]
fn seed_precedence_env_file_flag() {
    let t = toy();
    let seed_of = |dir: &Path| {
        load_checkpoint(&dir.join("model.ckpt"))
            .unwrap()
            .config()
            .seed
    };
    let base = |out: &str| {
        let dir = t.root.join(out);
        let mut args = vec![
            "train".to_string(),
            s(&t.triples).into(),
            "--vocab".into(),
            s(&t.vocab).into(),
            "-o".into(),
            s(&dir).into(),
            "--minibatches".into(),
            "1".into(),
        ];
        args.extend(TINY.iter().map(|a| a.to_string()));
        (dir, args)
    };
    let run = |args: &[String], env: &[(&str, &str)]| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&duetrank_env(&refs, env));
    };

    let (dir, args) = base("env");
    run(&args, &[("DUETRANK_SEED", "11")]);
    assert_eq!(seed_of(&dir), 11);

    let conf = t.root.join("run.conf");
    fs::write(&conf, "# settings\nseed = 12\nhidden = 6\n").unwrap();
    let (dir, mut args) = base("file");
    args.extend(["--config".into(), s(&conf).into()]);
    run(&args, &[("DUETRANK_SEED", "11")]);
    let m = load_checkpoint(&dir.join("model.ckpt")).unwrap();
    assert_eq!(m.config().seed, 12);
    // The flag list above also sets --hidden 4, which wins over the file.
    assert_eq!(m.config().hidden, 4);

    let (dir, mut args) = base("flag");
    args.extend([
        "--config".into(),
        s(&conf).into(),
        "--seed".into(),
        "13".into(),
    ]);
    run(&args, &[("DUETRANK_SEED", "11")]);
    assert_eq!(seed_of(&dir), 13);
}

#[test]
fn numeric_blow_up_exits_3() {
    let t = toy();
    let mut args = vec!["train", s(&t.triples), "--vocab", s(&t.vocab)];
    let out_dir = t.root.join("nan");
    args.extend([
        "-o",
        s(&out_dir),
        "--lr",
        "1e38",
        "--minibatches",
        "4",
        "--batch-size",
        "4",
    ]);
    args.extend(TINY);
    let out = duetrank(&args);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("numeric"));
}

fn rank(t: &Toy, checkpoints: &[PathBuf], out: &str, extra: &[&str]) -> Output {
    let run = t.root.join(out);
    let mut args = vec![
        "rank",
        s(&t.candidates),
        "--vocab",
        s(&t.vocab),
        "-o",
        s(&run),
    ];
    for c in checkpoints {
        args.extend(["-c", s(c)]);
    }
    args.extend(extra);
    duetrank(&args)
}

#[test]
fn rank_writes_deterministic_trec_runs() {
    let t = toy();
    let ckpt = train(&t, "m", &[]).join("model.ckpt");
    ok(&rank(&t, std::slice::from_ref(&ckpt), "a.trec", &[]));
    ok(&rank(
        &t,
        std::slice::from_ref(&ckpt),
        "b.trec",
        &["--jobs", "3"],
    ));
    let a = fs::read_to_string(t.root.join("a.trec")).unwrap();
    assert_eq!(a, fs::read_to_string(t.root.join("b.trec")).unwrap());
    let mut per_query: Vec<(String, Vec<usize>)> = Vec::new();
    for line in a.lines() {
        let f: Vec<&str> = line.split(' ').collect();
        assert_eq!(f.len(), 6);
        assert_eq!(f[1], "Q0");
        assert_eq!(f[5], "duet");
        match per_query.last_mut() {
            Some((q, ranks)) if q == f[0] => ranks.push(f[3].parse().unwrap()),
            _ => per_query.push((f[0].to_string(), vec![f[3].parse().unwrap()])),
        }
    }
    assert_eq!(per_query.len(), 4);
    for (_, ranks) in per_query {
        assert_eq!(ranks, (1..=6).collect::<Vec<_>>());
    }
}

#[test]
fn eight_identical_checkpoints_rank_like_one() {
    let t = toy();
    let ckpt = train(&t, "m", &[]).join("model.ckpt");
    ok(&rank(
        &t,
        std::slice::from_ref(&ckpt),
        "one.run",
        &["--format", "marco"],
    ));
    ok(&rank(
        &t,
        &vec![ckpt; 8],
        "eight.run",
        &["--format", "marco"],
    ));
    assert_eq!(
        fs::read(t.root.join("one.run")).unwrap(),
        fs::read(t.root.join("eight.run")).unwrap()
    );
}

#[test]
fn vocabulary_mismatch_exits_4() {
    let t = toy();
    let ckpt = train(&t, "m", &[]).join("model.ckpt");
    let col = t.root.join("other.txt");
    fs::write(&col, "alpha beta\ngamma delta\n").unwrap();
    let other = t.root.join("other");
    ok(&duetrank(&["vocab", s(&col), "-o", s(&other)]));
    let run = t.root.join("x.trec");
    let out = duetrank(&[
        "rank",
        s(&t.candidates),
        "--vocab",
        s(&other.join("vocab.tsv")),
        "-c",
        s(&ckpt),
        "-o",
        s(&run),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn corrupt_checkpoint_exits_2() {
    let t = toy();
    let bad = t.root.join("bad.ckpt");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let out = rank(&t, &[bad], "x.trec", &[]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bad.ckpt"));
}

#[test]
fn bm25_run_finds_topic_matches() {
    let t = toy();
    let run = t.root.join("bm25.trec");
    ok(&duetrank(&[
        "rank",
        s(&t.candidates),
        "--bm25",
        "-o",
        s(&run),
    ]));
    let stdout = ok(&duetrank(&["eval", s(&run), "--qrels", s(&t.qrels)]));
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["value"], 1.0);
}

#[test]
fn eval_matches_hand_computation() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run.tsv");
    let qrels = dir.path().join("qrels.tsv");
    // q1: first hit at rank 1; q2: rank 3; q3: rank 7; q4: not retrieved.
    let mut text = String::new();
    for (q, hit) in [(1, 1), (2, 3), (3, 7)] {
        for r in 1..=10 {
            writeln!(text, "{q}\t{}\t{r}", if r == hit { 99 } else { 100 + r }).unwrap();
        }
    }
    fs::write(&run, text).unwrap();
    fs::write(&qrels, "1 0 99 1\n2 0 99 1\n3 0 99 2\n4 0 99 1\n5 0 98 0\n").unwrap();
    let stdout = ok(&duetrank(&["eval", s(&run), "--qrels", s(&qrels)]));
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let want = (1.0 + 1.0 / 3.0 + 1.0 / 7.0) / 4.0;
    assert!((v["value"].as_f64().unwrap() - want).abs() < 1e-12);
    assert_eq!(v["judged_queries"], 4);
    assert_eq!(v["missing_queries"], 1);
    let written: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run.tsv.mrr.json")).unwrap())
            .unwrap();
    assert_eq!(written, v);

    let at5 = ok(&duetrank(&[
        "eval",
        s(&run),
        "--qrels",
        s(&qrels),
        "--k",
        "5",
    ]));
    let at5: serde_json::Value = serde_json::from_str(&at5).unwrap();
    assert!(at5["value"].as_f64().unwrap() <= v["value"].as_f64().unwrap());
    assert_eq!(at5["metric"], "mrr@5");
}

#[test]
fn perfect_run_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run.trec");
    fs::write(&run, "1 Q0 7 1 2.0 x\n1 Q0 8 2 1.0 x\n2 Q0 9 1 5.0 x\n").unwrap();
    let qrels = dir.path().join("q");
    fs::write(&qrels, "1 0 7 1\n2 0 9 1\n").unwrap();
    let v: serde_json::Value =
        serde_json::from_str(&ok(&duetrank(&["eval", s(&run), "--qrels", s(&qrels)]))).unwrap();
    assert_eq!(v["value"], 1.0);
}

#[test]
fn malformed_run_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run.trec");
    fs::write(&run, "1\t7\t1\n1\t8\n").unwrap();
    let qrels = dir.path().join("q");
    fs::write(&qrels, "1 0 7 1\n").unwrap();
    let out = duetrank(&["eval", s(&run), "--qrels", s(&qrels)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("run.trec:2:"), "{}", stderr(&out));
}

#[test]
fn help_lists_published_defaults() {
    let help = ok(&duetrank(&["train", "--help"]));
    for (flag, default) in [
        ("--batch-size", "1024"),
        ("--minibatches", "1024"),
        ("--lr", "0.001"),
        ("--sigma", "0.1"),
        ("--hidden", "300"),
        ("--embed-dim", "300"),
        ("--dropout", "0.5"),
        ("--query-cap", "20"),
        ("--passage-cap", "200"),
        ("--bagging", "1"),
        ("--jobs", "1"),
    ] {
        let line = help
            .lines()
            .find(|l| l.contains(flag))
            .unwrap_or_else(|| panic!("{flag} missing"));
        let block = help.split(line).nth(1).unwrap();
        let shown = line.contains(&format!("[default: {default}]"))
            || block
                .lines()
                .take(3)
                .any(|l| l.contains(&format!("[default: {default}]")));
        assert!(shown, "{flag} should default to {default}:\n{help}");
    }
    for flag in [
        "--no-idf",
        "--tanh",
        "--linear-combine",
        "--glove",
        "--config",
        "--seed",
    ] {
        assert!(help.contains(flag), "{flag}");
    }
    assert!(ok(&duetrank(&["vocab", "--help"])).contains("[default: 71486]"));
    let rank_help = ok(&duetrank(&["rank", "--help"]));
    assert!(rank_help.contains("[default: trec]"));
    assert!(rank_help.contains("[default: 0.9]"));
    assert!(ok(&duetrank(&["eval", "--help"])).contains("[default: 10]"));
}
