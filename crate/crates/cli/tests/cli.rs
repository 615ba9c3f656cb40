use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use medsum::metrics::evaluate_corpus;
use medsum::model::greedy_decode;
use medsum::text::{decode_ids, encode, load_corpus, Preprocessor};
use medsum::training::load_checkpoint;
use tempfile::TempDir;

const SMALL: [&str; 8] = [
    "--set",
    "embed_dim=8",
    "--set",
    "hidden_dim=16",
    "--set",
    "attention_dim=8",
    "--set",
    "encoder_layers=1",
];

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn medsum_in(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medsum")).current_dir(cwd).args(args).output().expect("spawn medsum")
}

fn medsum(args: &[&str]) -> Output {
    medsum_in(Path::new(env!("CARGO_MANIFEST_DIR")), args)
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Compares against the pinned copy; `MEDSUM_BLESS=1` rewrites it.
fn assert_golden(actual: &Path, name: &str) {
    let got = fs::read_to_string(actual).unwrap();
    let path = golden(name);
    if std::env::var_os("MEDSUM_BLESS").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, &got).unwrap();
    }
    let want = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {name}"));
    assert_eq!(got, want, "{name} differs from the golden copy");
}

fn preprocessed(tmp: &TempDir) -> PathBuf {
    let d = tmp.path().join("data");
    ok(medsum(&["preprocess", "--corpus", p(&fixture("corpus.jsonl")), "--out", p(&d)]));
    d
}

fn train_small(data: &Path, out: &Path, epochs: &str, extra: &[&str]) -> String {
    let mut args = vec!["train", "--data", p(data), "--out", p(out), "--epochs", epochs];
    args.extend(SMALL);
    args.extend(extra);
    ok(medsum(&args))
}

#[test]
fn preprocess_outputs_are_pinned_and_repeatable() {
    let tmp = TempDir::new().unwrap();
    let a = preprocessed(&tmp);
    let b = tmp.path().join("again");
    ok(medsum(&["preprocess", "--corpus", p(&fixture("corpus.jsonl")), "--out", p(&b)]));
    for f in ["vocab.json", "stats.csv", "train.jsonl", "validation.jsonl", "test.jsonl", "train.ids.jsonl", "run_config.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_golden(&a.join("vocab.json"), "vocab.json");
    assert_golden(&a.join("stats.csv"), "stats.csv");
    let other_seed = tmp.path().join("seed7");
    ok(medsum(&["preprocess", "--corpus", p(&fixture("corpus.jsonl")), "--out", p(&other_seed), "--seed", "7"]));
    assert_ne!(fs::read(a.join("train.jsonl")).unwrap(), fs::read(other_seed.join("train.jsonl")).unwrap());
}

#[test]
fn training_history_is_pinned() {
    let tmp = TempDir::new().unwrap();
    let data = preprocessed(&tmp);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train_small(&data, &a, "4", &[]);
    train_small(&data, &b, "4", &[]);
    assert_eq!(fs::read(a.join("history.csv")).unwrap(), fs::read(b.join("history.csv")).unwrap());
    assert_eq!(fs::read(a.join("checkpoint.msum")).unwrap(), fs::read(b.join("checkpoint.msum")).unwrap());
    assert_golden(&a.join("history.csv"), "history.csv");
    let rows = fs::read_to_string(a.join("history.csv")).unwrap().lines().count() - 1;
    assert!((1..=4).contains(&rows));
    assert!(!a.join("loss.svg").exists());
    let c = tmp.path().join("c");
    train_small(&data, &c, "4", &["--plot"]);
    assert!(fs::read_to_string(c.join("loss.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn crossval_table_shape_and_aggregate() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("cv");
    let corpus = fixture("corpus.jsonl");
    let mut args = vec!["crossval", "--corpus", p(&corpus), "--out", p(&out), "--folds", "5", "--epochs", "2"];
    args.extend(SMALL);
    ok(medsum(&args));
    let csv = fs::read_to_string(out.join("crossval.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 7);
    let folds: Vec<&str> = lines[1..6].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(folds, ["1", "2", "3", "4", "5"]);
    let col = |l: &str, i: usize| l.split(',').nth(i).unwrap().parse::<f64>().unwrap();
    for i in 1..=5 {
        let mean = lines[1..6].iter().map(|l| col(l, i)).sum::<f64>() / 5.0;
        assert!((col(lines[6], i) - mean).abs() <= 1e-9);
    }
    assert_golden(&out.join("crossval.csv"), "crossval.csv");
}

#[test]
fn summarize_beam_one_equals_default_and_matches_library() {
    let tmp = TempDir::new().unwrap();
    let data = preprocessed(&tmp);
    let m = tmp.path().join("m");
    train_small(&data, &m, "4", &[]);
    let ckpt = m.join("checkpoint.msum");
    let text = "Adults with prediabetes received metformin or lifestyle advice.";
    let plain = ok(medsum(&["summarize", "--checkpoint", p(&ckpt), "--text", text]));
    let beam1 = ok(medsum(&["summarize", "--checkpoint", p(&ckpt), "--text", text, "--beam", "1"]));
    assert_eq!(plain, beam1);
    let loaded = load_checkpoint(&ckpt).unwrap();
    let src = encode(&Preprocessor::default().tokens(text), &loaded.vocabulary, false);
    let expected = decode_ids(&greedy_decode(&src, &loaded.params, &loaded.config).unwrap(), &loaded.vocabulary).unwrap();
    assert_eq!(plain.trim_end_matches('\n'), expected);
    let input = tmp.path().join("input.txt");
    fs::write(&input, text).unwrap();
    assert_eq!(ok(medsum(&["summarize", "--checkpoint", p(&ckpt), "--input", p(&input)])), plain);
    assert_eq!(code(&medsum(&["summarize", "--checkpoint", p(&ckpt), "--text", "   "])), 1);
}

#[test]
fn evaluate_table_and_cross_check() {
    let tmp = TempDir::new().unwrap();
    let ident = tmp.path().join("ident");
    let table = ok(medsum(&["evaluate", "--identity", "--test", p(&fixture("corpus.jsonl")), "--out", p(&ident)]));
    assert_eq!(table, "model,rouge1,rouge2,rougeL,recall\nidentity,1,1,1,1\n");
    assert_eq!(fs::read_to_string(ident.join("audit.csv")).unwrap().lines().count(), 11);

    let data = preprocessed(&tmp);
    let m = tmp.path().join("m");
    train_small(&data, &m, "30", &[]);
    let ckpt = m.join("checkpoint.msum");
    let out = tmp.path().join("eval");
    let table = ok(medsum(&["evaluate", "--checkpoint", p(&ckpt), "--test", p(&fixture("corpus.jsonl")), "--out", p(&out), "--name", "small"]));
    let row: Vec<&str> = table.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "small");

    let loaded = load_checkpoint(&ckpt).unwrap();
    let pre = Preprocessor::default();
    let records = load_corpus(&fixture("corpus.jsonl")).unwrap();
    let eval = evaluate_corpus(
        |r| {
            let src = encode(&pre.tokens(&r.source), &loaded.vocabulary, false);
            let ids = greedy_decode(&src, &loaded.params, &loaded.config).map_err(|e| e.to_string())?;
            decode_ids(&ids, &loaded.vocabulary).map_err(|e| e.to_string())
        },
        &records,
        &pre,
    );
    let r = eval.report;
    for (got, want) in row[1..].iter().zip([r.rouge1.f1, r.rouge2.f1, r.rouge_l.f1, r.recall]) {
        assert!((got.parse::<f64>().unwrap() - want).abs() <= 1e-9);
    }
}

#[test]
fn compare_rows() {
    let tmp = TempDir::new().unwrap();
    let data = preprocessed(&tmp);
    let out = tmp.path().join("cmp");
    let mut args = vec!["compare", "--data", p(&data), "--out", p(&out), "--epochs", "2", "--variant", "a", "--variant", "a", "--variant", "flat:attention=off"];
    args.extend(SMALL);
    let table = ok(medsum(&args));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1], lines[2]);
    assert!(lines[3].starts_with("flat,"));
    assert_eq!(fs::read_to_string(out.join("compare.csv")).unwrap(), table);

    let one = medsum(&["compare", "--data", p(&data), "--out", p(&out), "--variant", "a"]);
    assert_eq!(code(&one), 1);
    // a bad teacher reference fails that row only
    let mut args = vec!["compare", "--data", p(&data), "--out", p(&out), "--epochs", "1", "--variant", "a", "--variant", "kd:teacher=zzz"];
    args.extend(SMALL);
    let table = ok(medsum(&args));
    assert!(table.lines().nth(2).unwrap() == "kd,,,,");
}

#[test]
fn distill_contracts() {
    let tmp = TempDir::new().unwrap();
    let data = preprocessed(&tmp);
    let teacher = tmp.path().join("teacher");
    let mut args = vec!["train", "--data", p(&data), "--out", p(&teacher), "--epochs", "2"];
    args.extend(["--set", "embed_dim=16", "--set", "hidden_dim=32", "--set", "attention_dim=16", "--set", "encoder_layers=1"]);
    ok(medsum(&args));
    let tckpt = teacher.join("checkpoint.msum");

    let plain = tmp.path().join("plain");
    train_small(&data, &plain, "4", &["--set", "distill_mix=1"]);
    let student = tmp.path().join("student");
    let mut args = vec!["distill", "--teacher", p(&tckpt), "--data", p(&data), "--out", p(&student), "--epochs", "4", "--set", "distill_mix=1"];
    args.extend(SMALL);
    ok(medsum(&args));
    assert_eq!(fs::read(plain.join("history.csv")).unwrap(), fs::read(student.join("history.csv")).unwrap());
    let size = |p: &Path| fs::metadata(p).unwrap().len();
    assert!(size(&student.join("student.msum")) < size(&tckpt));

    let other = tmp.path().join("other");
    ok(medsum(&[
        "preprocess",
        "--corpus",
        p(&fixture("overfit8.jsonl")),
        "--out",
        p(&other),
        "--set",
        "split_train=0.5",
        "--set",
        "split_val=0.25",
        "--set",
        "split_test=0.25",
    ]));
    let x = tmp.path().join("x");
    let mut args = vec!["distill", "--teacher", p(&tckpt), "--data", p(&other), "--out", p(&x)];
    args.extend(SMALL);
    assert_eq!(code(&medsum(&args)), 5);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let data = preprocessed(&tmp);
    let out = tmp.path().join("o");
    assert_eq!(code(&medsum(&["train", "--data", p(&data), "--out", p(&out), "--set", "nonsense=1"])), 1);
    assert_eq!(code(&medsum(&["no-such-command"])), 1);
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "epochs = 2\nhidden = 3\n").unwrap();
    let bad = medsum(&["train", "--data", p(&data), "--out", p(&out), "--config", p(&cfg)]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 2"));

    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&medsum(&["preprocess", "--corpus", p(&empty), "--out", p(&out)])), 2);
    let broken = tmp.path().join("broken.jsonl");
    fs::write(&broken, "{\"id\": \"a\", \"title\": \"t\", \"reference\": \"r\"}\n{oops\n").unwrap();
    let o = medsum(&["preprocess", "--corpus", p(&broken), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let mut args = vec!["train", "--data", p(&data), "--out", p(&out), "--epochs", "3"];
    args.extend(SMALL);
    args.extend(["--set", "base_lr=1e30", "--set", "clip_norm=1e30", "--set", "warmup_steps=1"]);
    assert_eq!(code(&medsum(&args)), 3);
    assert!(out.join("history.csv").exists());

    assert_eq!(code(&medsum(&["summarize", "--checkpoint", p(&tmp.path().join("none.msum")), "--text", "x"])), 4);
    let junk = tmp.path().join("junk.msum");
    fs::write(&junk, b"MSUMCKPT\x02\x00\x00\x00{}").unwrap();
    assert_eq!(code(&medsum(&["summarize", "--checkpoint", p(&junk), "--text", "x"])), 4);
}

#[test]
fn flags_override_config_file() {
    let tmp = TempDir::new().unwrap();
    let data = preprocessed(&tmp);
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# small model\nembed_dim = 8\nhidden_dim = 16\nattention_dim = 8\nencoder_layers = 1\nepochs = 9\nseed = 4\n").unwrap();
    let out = tmp.path().join("o");
    ok(medsum(&["train", "--data", p(&data), "--out", p(&out), "--config", p(&cfg), "--epochs", "2"]));
    let rendered = fs::read_to_string(out.join("run_config.txt")).unwrap();
    assert!(rendered.contains("epochs = 2  # flag"));
    assert!(rendered.contains("seed = 4  # file"));
    assert!(rendered.contains("momentum = 0.9  # default"));
    assert_eq!(fs::read_to_string(out.join("history.csv")).unwrap().lines().count(), 3);
}

#[test]
fn writes_stay_inside_out() {
    let tmp = TempDir::new().unwrap();
    let data = preprocessed(&tmp);
    let work = TempDir::new().unwrap();
    let run = |args: &[&str]| ok(medsum_in(work.path(), args));
    let mut train = vec!["train", "--data", p(&data), "--out", "o1", "--epochs", "1", "--plot"];
    train.extend(SMALL);
    run(&train);
    run(&["preprocess", "--corpus", p(&fixture("corpus.jsonl")), "--out", "o2"]);
    run(&["evaluate", "--identity", "--test", p(&fixture("corpus.jsonl")), "--out", "o3"]);
    run(&["summarize", "--checkpoint", "o1/checkpoint.msum", "--text", "metformin"]);
    let mut names: Vec<String> = fs::read_dir(work.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["o1", "o2", "o3"]);
    let mut data_files: Vec<String> = fs::read_dir(&data).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    data_files.sort();
    assert_eq!(data_files.len(), 9);
}
