use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scratch_tagger::corpus::{read_conll, ColumnSpec};
use scratch_tagger::synth::{Generator, SynthConfig};
use scratch_tagger::tagscheme::{evaluate, Scheme};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scratch-tagger"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes `word class chunk` column files from the synthetic generator.
fn synth_files(dir: &Path, train: usize, test: usize) -> (PathBuf, PathBuf) {
    let mut g = Generator::new(SynthConfig::default(), 7);
    let mut write = |name: &str, n: usize| {
        let mut text = String::new();
        for s in g.sentences(n) {
            for ((w, c), k) in s.words.iter().zip(s.class_tags()).zip(&s.chunks) {
                text.push_str(&format!("{w} {c} {k}\n"));
            }
            text.push('\n');
        }
        let path = dir.join(name);
        fs::write(&path, text).unwrap();
        path
    };
    (write("train.txt", train), write("test.txt", test))
}

const SMALL: &[&str] = &["--word-dim", "8", "--caps-dim", "2", "--hidden", "20", "--window", "3"];

fn train_small(dir: &Path, train: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let model = dir.join(out);
    let mut args = vec!["train", "--train", p(train), "--out", p(&model), "--scheme", "iobes", "--epochs", "2"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(&args);
    model
}

#[test]
fn size_three_dictionary_keeps_one_word() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("c.txt");
    fs::write(&corpus, "b a a\nc a\n").unwrap();
    let out = dir.path().join("d.txt");
    ok(&["build-dict", "--input", p(&corpus), "--size", "3", "--out", p(&out)]);
    assert_eq!(fs::read_to_string(out).unwrap(), "PADDING\nRARE\na\n");
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.txt");
    assert_eq!(run(&["build-dict", "--input", p(&missing), "--size", "3"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--out", "x"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));

    let ragged = dir.path().join("ragged.txt");
    fs::write(&ragged, "a X O\nb O\n\n").unwrap();
    let o = run(&["eval", "--input", p(&ragged)]);
    assert_eq!(o.status.code(), Some(3));

    let text = dir.path().join("t.txt");
    fs::write(&text, "a b\n").unwrap();
    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"not a model").unwrap();
    assert_eq!(run(&["tag", "--model", p(&junk), "--input", p(&text)]).status.code(), Some(4));

    let (train, _) = synth_files(dir.path(), 20, 1);
    let model = train_small(dir.path(), &train, "m.bin", &["--no-checkpoints"]);
    let bytes = fs::read(&model).unwrap();
    let mut future = bytes.clone();
    future[4] = 99;
    fs::write(&junk, &future).unwrap();
    assert_eq!(run(&["tag", "--model", p(&junk), "--input", p(&text)]).status.code(), Some(4));
    fs::write(&junk, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(run(&["tag", "--model", p(&junk), "--input", p(&text)]).status.code(), Some(4));
}

#[test]
fn hand_scored_eval() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("scored.txt");
    // Gold: [the cat]NP [sat]VP. Predicted: [the]NP [cat]NP [sat]VP.
    fs::write(&file, "the B-NP B-NP\ncat I-NP B-NP\nsat B-VP B-VP\n\n").unwrap();
    let out = ok(&["eval", "--input", p(&file), "--scheme", "iob"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "processed 3 tokens with 2 phrases; found: 3 phrases; correct: 1.");
    assert_eq!(lines[1], "accuracy: 66.67%");
    assert_eq!(lines[2], "precision: 33.33%; recall: 50.00%; FB1: 40.00");

    let out = ok(&["eval", "--input", p(&file), "--scheme", "none"]);
    assert!(out.contains("accuracy: 66.67%"));
}

#[test]
fn tag_then_eval_matches_library_scores() {
    let dir = TempDir::new().unwrap();
    let (train, test) = synth_files(dir.path(), 300, 60);
    let model = train_small(dir.path(), &train, "m.bin", &["--lr", "0.1"]);
    assert!(dir.path().join("m.bin.epoch1").exists());
    assert!(dir.path().join("m.bin.epoch2").exists());

    let tagged = dir.path().join("tagged.txt");
    ok(&["tag", "--model", p(&model), "--input", p(&test), "--output", p(&tagged)]);
    let out = ok(&["eval", "--input", p(&tagged)]);

    let sentences = read_conll(fs::File::open(&tagged).map(std::io::BufReader::new).unwrap(), &ColumnSpec::words_only(0)).unwrap();
    let gold: Vec<Vec<String>> = sentences.iter().map(|s| s.column(2)).collect();
    let pred: Vec<Vec<String>> = sentences.iter().map(|s| s.column(3)).collect();
    let report = evaluate(&gold, &pred, Scheme::Iobes).unwrap();
    assert!(out.contains(&report.summary()), "{out}");
    assert!(out.contains(&report.accuracy_line()));
    assert!(report.f1 > 0.8, "F1 {}", report.f1);

    // Same tags whatever the worker count.
    let one = dir.path().join("one.txt");
    let status = Command::new(env!("CARGO_BIN_EXE_scratch-tagger"))
        .args(["tag", "--model", p(&model), "--input", p(&test), "--output", p(&one)])
        .env("SCRATCH_TAGGER_THREADS", "1")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(fs::read(&one).unwrap(), fs::read(&tagged).unwrap());
}

#[test]
fn training_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (train, _) = synth_files(dir.path(), 40, 1);
    let a = train_small(dir.path(), &train, "a.bin", &["--loss", "wll", "--no-checkpoints", "--seed", "3"]);
    let b = train_small(dir.path(), &train, "b.bin", &["--loss", "wll", "--no-checkpoints", "--seed", "3"]);
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn malformed_sentences_are_skipped() {
    let dir = TempDir::new().unwrap();
    let (train, _) = synth_files(dir.path(), 20, 1);
    let model = train_small(dir.path(), &train, "m.bin", &["--no-checkpoints"]);
    let input = dir.path().join("in.txt");
    fs::write(&input, "naa x\nvaa y\n\nbroken\nrow two\n\ndaa z\n\n").unwrap();
    let o = run(&["tag", "--model", p(&model), "--input", p(&input)]);
    assert!(o.status.success());
    let out = stdout(&o);
    let words: Vec<&str> = out.lines().filter(|l| !l.is_empty()).map(|l| l.split(' ').next().unwrap()).collect();
    assert_eq!(words, ["naa", "vaa", "daa"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("skipping"));
}

#[test]
fn plain_text_tagging() {
    let dir = TempDir::new().unwrap();
    let (train, _) = synth_files(dir.path(), 20, 1);
    let model = train_small(dir.path(), &train, "m.bin", &["--no-checkpoints"]);
    let input = dir.path().join("in.txt");
    fs::write(&input, "naa vab\n\nDAA\n").unwrap();
    let out = ok(&["tag", "--model", p(&model), "--input", p(&input), "--format", "text", "--scheme", "iob"]);
    let blocks: Vec<&str> = out.split("\n\n").filter(|b| !b.is_empty()).collect();
    assert_eq!(blocks.len(), 2);
    assert_eq!(blocks[0].lines().count(), 2);
    assert!(blocks[1].starts_with("DAA "));
}

#[test]
fn nearest_neighbors_print_k_lines() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("c.txt");
    let mut g = Generator::new(SynthConfig::default(), 1);
    let lines: Vec<String> = g.text(3000).iter().map(|s| s.join(" ")).collect();
    fs::write(&corpus, lines.join("\n")).unwrap();
    let model = dir.path().join("lm.bin");
    let emb = dir.path().join("emb.txt");
    let out = ok(&[
        "lm-train", "--input", p(&corpus), "--out", p(&model), "--embeddings-out", p(&emb),
        "--window", "3", "--word-dim", "8", "--hidden", "10", "--iterations", "2000", "--eval-every", "1000",
    ]);
    assert_eq!(out.lines().count(), 2);

    let word = g.word(1, 0);
    let from_model = ok(&["nn", "--model", p(&model), "--word", &word, "--k", "10"]);
    assert_eq!(from_model.lines().count(), 10);
    let from_file = ok(&["nn", "--embeddings", p(&emb), "--word", &word, "--k", "10"]);
    assert_eq!(from_file, from_model);
    assert!(!from_model.lines().any(|l| l.starts_with(&format!("{word} "))));

    let o = run(&["nn", "--model", p(&model), "--word", "nosuchword", "--k", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ensemble_vote_merges_last_columns() {
    let dir = TempDir::new().unwrap();
    let write = |name: &str, tags: [&str; 3]| {
        let path = dir.path().join(name);
        fs::write(&path, format!("a {}\nb {}\n\nc {}\n\n", tags[0], tags[1], tags[2])).unwrap();
        path
    };
    let x = write("x.txt", ["N", "V", "D"]);
    let y = write("y.txt", ["N", "N", "P"]);
    let z = write("z.txt", ["V", "N", "O"]);
    let out = ok(&["ensemble-vote", p(&x), p(&y), p(&z)]);
    assert_eq!(out, "a N\nb N\n\nc D\n\n");

    let short = dir.path().join("short.txt");
    fs::write(&short, "a N\n\n").unwrap();
    assert_eq!(run(&["ensemble-vote", p(&x), p(&short)]).status.code(), Some(3));
}

#[test]
fn sentence_network_with_predicate_and_cascade() {
    let dir = TempDir::new().unwrap();
    let mut g = Generator::new(SynthConfig::default(), 9);
    let mut text = String::new();
    for s in g.sentences(30) {
        let verb = s.words.len() / 2;
        for (i, ((w, c), k)) in s.words.iter().zip(s.class_tags()).zip(&s.chunks).enumerate() {
            let mark = if i == verb { w.as_str() } else { "-" };
            text.push_str(&format!("{w} {c} {mark} {k}\n"));
        }
        text.push('\n');
    }
    let train = dir.path().join("srl.txt");
    fs::write(&train, text).unwrap();
    let model = train_small(
        dir.path(),
        &train,
        "srl.bin",
        &["--arch", "sentence", "--verb-column", "2", "--feature-column", "class:1:3", "--hidden2", "10", "--no-checkpoints"],
    );
    let out = ok(&["tag", "--model", p(&model), "--input", p(&train), "--verb-column", "2"]);
    assert_eq!(out.lines().filter(|l| !l.is_empty()).count(), fs::read_to_string(&train).unwrap().lines().filter(|l| !l.is_empty()).count());
    assert_eq!(run(&["tag", "--model", p(&model), "--input", p(&train)]).status.code(), Some(2));
    assert_eq!(
        run(&["tag", "--model", p(&model), "--input", p(&train), "--verb-column", "2", "--format", "text"]).status.code(),
        Some(2)
    );
}
