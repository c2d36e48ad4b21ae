use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::io::Write;

use morphtag::corpus::write_conllu;
use morphtag::synthetic::twin_languages;
use morphtag::Corpus;
use tempfile::TempDir;

const SMALL: &[&str] = &["--char-emb", "8", "--char-hidden", "16", "--ctx-hidden", "16"];

fn morphtag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morphtag")).args(args).output().unwrap()
}

fn with_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_morphtag"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(o), stderr(o));
}

fn write_corpus(dir: &Path, name: &str, c: &Corpus) -> PathBuf {
    let p = dir.join(name);
    let mut f = fs::File::create(&p).unwrap();
    write_conllu(c, &mut f).unwrap();
    p
}

/// (word, upos, feats) of every token line.
fn token_columns(conllu: &str) -> Vec<(String, String, String)> {
    conllu
        .lines()
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let c: Vec<&str> = l.split('\t').collect();
            (c[1].to_string(), c[3].to_string(), c[5].to_string())
        })
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn overfit_model_reproduces_gold_columns() {
    let dir = TempDir::new().unwrap();
    let (_, b) = twin_languages("aa", "bb");
    let gold = write_corpus(dir.path(), "bb.conllu", &b.corpus(1, 4));
    let model = dir.path().join("m.mtag");
    let target = format!("bb={}", s(&gold));
    let mut args = vec!["train", "--arch", "mono", "--target", &target, "--epochs", "200", "--seed", "5"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--out", s(&model)]);
    assert_ok(&morphtag(&args));

    let report = fs::read_to_string(dir.path().join("m.mtag.csv")).unwrap();
    assert!(report.starts_with("# seed = 5\nepoch,loss,lr\n"), "{report}");
    assert_eq!(report.lines().count(), 2 + 200);

    let out = morphtag(&["tag", "--model", s(&model), "--input", s(&gold), "--language", "bb"]);
    assert_ok(&out);
    let tagged = stdout(&out);
    assert!(tagged.starts_with("# seed = 5\n"));
    assert_eq!(token_columns(&tagged), token_columns(&fs::read_to_string(&gold).unwrap()));

    let ev = morphtag(&["eval", "--model", s(&model), "--gold", s(&gold), "--language", "bb"]);
    assert_ok(&ev);
    assert!(stdout(&ev).contains("accuracy=1,macro_f1=1"), "{}", stdout(&ev));
}

#[test]
fn text_input_and_empty_input() {
    let dir = TempDir::new().unwrap();
    let (a, b) = twin_languages("aa", "bb");
    let src = write_corpus(dir.path(), "aa.conllu", &a.corpus(10, 1));
    let tgt = write_corpus(dir.path(), "bb.conllu", &b.corpus(5, 2));
    let model = dir.path().join("j.mtag");
    let (source, target) = (format!("aa={}", s(&src)), format!("bb={}", s(&tgt)));
    let mut args = vec!["train", "--arch", "joint", "--source", &source, "--target", &target, "--epochs", "1"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--out", s(&model)]);
    assert_ok(&morphtag(&args));

    let out = with_stdin(&["tag", "--model", s(&model)], "");
    assert_ok(&out);
    assert!(out.stdout.is_empty());

    let out = with_stdin(&["tag", "--model", s(&model)], "dabu gizu .\nkefo .\n");
    assert_ok(&out);
    let text = stdout(&out);
    assert_eq!(text.matches("# language = ").count(), 2, "{text}");
    assert_eq!(token_columns(&text).len(), 5);

    let out = with_stdin(&["tag", "--model", s(&model), "--language", "aa", "--format", "text"], "dabu .\n");
    assert_ok(&out);
    assert!(!stdout(&out).contains("# language"));

    let info = morphtag(&["inspect", "--model", s(&model)]);
    assert_ok(&info);
    assert!(stdout(&info).contains("joint"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let (_, b) = twin_languages("aa", "bb");
    let gold = write_corpus(dir.path(), "bb.conllu", &b.corpus(3, 4));
    let model = dir.path().join("m.mtag");
    let target = format!("bb={}", s(&gold));

    // unknown flag, missing corpus, bad value
    assert_eq!(morphtag(&["train", "--bogus"]).status.code(), Some(2));
    let missing = format!("bb={}", s(&dir.path().join("nope.conllu")));
    assert_eq!(morphtag(&["train", "--target", &missing, "--out", s(&model)]).status.code(), Some(2));
    assert_eq!(
        morphtag(&["train", "--target", &target, "--target-size", "0", "--out", s(&model)]).status.code(),
        Some(2)
    );
    assert_eq!(
        morphtag(&["train", "--arch", "mono", "--source", &target, "--target", &target, "--out", s(&model)])
            .status
            .code(),
        Some(2)
    );

    // a learning rate this large overflows the parameters
    let mut args = vec!["train", "--target", &target, "--epochs", "5", "--lr", "1e306", "--clip-norm", "0"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--out", s(&model)]);
    let out = morphtag(&args);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));

    let mut args = vec!["train", "--target", &target, "--epochs", "1"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--out", s(&model)]);
    assert_ok(&morphtag(&args));
    let out = with_stdin(&["tag", "--model", s(&model)], "dabu .\n");
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--language"));
    let out = with_stdin(&["tag", "--model", s(&model), "--language", "zz"], "dabu .\n");
    assert_eq!(out.status.code(), Some(2));

    let garbage = dir.path().join("garbage.mtag");
    fs::write(&garbage, b"not a model").unwrap();
    assert_eq!(morphtag(&["inspect", "--model", s(&garbage)]).status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let (_, b) = twin_languages("aa", "bb");
    let gold = write_corpus(dir.path(), "bb.conllu", &b.corpus(3, 4));
    let config = dir.path().join("run.cfg");
    fs::write(
        &config,
        format!("# small run\ntarget = bb={}\nepochs = 5\nchar_emb = 8\nchar-hidden = 16\nctx_hidden = 16\nseed = 9\n", s(&gold)),
    )
    .unwrap();
    let model = dir.path().join("m.mtag");
    let report = dir.path().join("r.csv");
    assert_ok(&morphtag(&[
        "train", "--config", s(&config), "--epochs", "3", "--out", s(&model), "--report", s(&report),
    ]));
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("# seed = 9\n"));
    assert_eq!(text.lines().count(), 2 + 3);

    fs::write(&config, "epochs = many\n").unwrap();
    let out = morphtag(&["train", "--config", s(&config), "--out", s(&model)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_pass_through_and_worked_example() {
    let dir = TempDir::new().unwrap();
    let (_, b) = twin_languages("aa", "bb");
    let gold = write_corpus(dir.path(), "bb.conllu", &b.corpus(6, 4));
    let out = morphtag(&["eval", "--gold", s(&gold), "--predicted", s(&gold), "--language", "bb"]);
    assert_ok(&out);
    assert!(stdout(&out).contains("accuracy=1,macro_f1=1"));

    let line = |id: usize, w: &str, pos: &str, feats: &str| format!("{id}\t{w}\t_\t{pos}\t_\t{feats}\t_\t_\t_\t_\n");
    let g = dir.path().join("g.conllu");
    let p = dir.path().join("p.conllu");
    fs::write(&g, line(1, "casa", "N", "Case=Nom") + &line(2, "come", "V", "Tense=Pres")).unwrap();
    fs::write(&p, line(1, "casa", "N", "Case=Acc") + &line(2, "come", "V", "Tense=Pres")).unwrap();
    let csv = dir.path().join("f1.csv");
    let out = morphtag(&["eval", "--gold", s(&g), "--predicted", s(&p), "--language", "xx", "--output", s(&csv)]);
    assert_ok(&out);
    let macro_f1: f64 = stdout(&out).split_whitespace().last().unwrap().parse().unwrap();
    assert_eq!(macro_f1, 2.0 / 3.0);
    let rows = fs::read_to_string(&csv).unwrap();
    assert!(rows.contains("\nCase,0,0,0,1\n"), "{rows}");
    assert!(rows.contains("\nPOS,1,1,1,2\n"), "{rows}");
}

#[test]
fn stats_rows_follow_argument_order() {
    let dir = TempDir::new().unwrap();
    let (a, b) = twin_languages("aa", "bb");
    let first = write_corpus(dir.path(), "zz_thing-ud-test.conllu", &b.corpus(4, 1));
    let second = write_corpus(dir.path(), "a.conllu", &a.corpus(7, 2));
    let named = format!("aa={}", s(&second));
    let out = morphtag(&["stats", s(&first), &named]);
    assert_ok(&out);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "file,language,split,sentences,tokens,unique_tags");
    assert!(lines[1].starts_with(&format!("{},zz,test,4,", s(&first))), "{text}");
    assert!(lines[2].starts_with(&format!("{},aa,,7,", s(&second))), "{text}");

    let bad = dir.path().join("bad.conllu");
    fs::write(&bad, "1\tx\n").unwrap();
    let out = morphtag(&["stats", s(&bad), s(&first)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stdout(&out).lines().count(), 2);
    assert!(stderr(&out).contains("bad.conllu"));
}

fn grid_dir() -> TempDir {
    let dir = TempDir::new().unwrap();
    let (a, b) = twin_languages("aa", "bb");
    let (c, d) = twin_languages("cc", "dd");
    for (i, lang) in [a, b, c, d].iter().enumerate() {
        let code = lang.code();
        let seed = 10 * i as u64;
        write_corpus(dir.path(), &format!("{code}-train.conllu"), &lang.corpus(12, seed));
        write_corpus(dir.path(), &format!("{code}-test.conllu"), &lang.corpus(10, seed + 1));
    }
    let mut spec = String::from("output = \"out\"\n\n[train]\nepochs = 2\nchar_emb = 4\nchar_hidden = 6\nctx_hidden = 6\n\n");
    for l in ["aa", "bb", "cc", "dd"] {
        spec.push_str(&format!("[corpora.{l}]\ntrain = \"{l}-train.conllu\"\ntest = \"{l}-test.conllu\"\n\n"));
    }
    fs::write(dir.path().join("spec.toml"), spec).unwrap();
    dir
}

fn add_grid(dir: &Path, block: &str) {
    let path = dir.join("spec.toml");
    let mut spec = fs::read_to_string(&path).unwrap();
    spec.push_str("[[grid]]\n");
    spec.push_str(block);
    spec.push('\n');
    fs::write(path, spec).unwrap();
}

#[test]
fn experiment_matrix_and_resume() {
    let dir = grid_dir();
    add_grid(
        dir.path(),
        "sources = [[\"aa\"], [\"bb\"]]\ntargets = [\"cc\", \"dd\"]\nsizes = [5]\narchitectures = [\"universal\"]\nseeds = [1]",
    );
    let spec = dir.path().join("spec.toml");
    let out = morphtag(&["experiment", s(&spec)]);
    assert_ok(&out);
    assert!(stderr(&out).contains("4 cells, 4 trained, 0 skipped, 0 failed"), "{}", stderr(&out));

    let out_dir = dir.path().join("out");
    let matrix = fs::read_to_string(out_dir.join("matrix_universal_5.csv")).unwrap();
    let rows: Vec<&str> = matrix.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "source,cc,dd");
    assert_eq!(rows.len(), 3);
    for row in &rows[1..] {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 3);
        for v in &cols[1..] {
            let acc: f64 = v.parse().unwrap();
            assert!((0.0..=1.0).contains(&acc));
        }
    }
    assert!(matrix.starts_with("# seeds = 1\n"));
    assert_eq!(fs::read_dir(out_dir.join("models")).unwrap().count(), 4);

    let stamp = |p: &Path| -> Vec<_> {
        let mut v: Vec<_> = fs::read_dir(p)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name(), e.metadata().unwrap().modified().unwrap())
            })
            .collect();
        v.sort();
        v
    };
    let before = stamp(&out_dir.join("models"));
    let again = morphtag(&["experiment", s(&spec)]);
    assert_ok(&again);
    assert!(stderr(&again).contains("4 cells, 0 trained, 4 skipped, 0 failed"), "{}", stderr(&again));
    assert_eq!(stamp(&out_dir.join("models")), before);
    assert_eq!(fs::read_to_string(out_dir.join("matrix_universal_5.csv")).unwrap(), matrix);
}

#[test]
fn experiment_curve_rows_and_failures() {
    let dir = grid_dir();
    add_grid(
        dir.path(),
        "sources = [[\"aa\"]]\ntargets = [\"bb\"]\nsizes = [3, 6, \"all\"]\narchitectures = [\"mono\", \"joint\"]\nseeds = [1, 2]",
    );
    let spec = dir.path().join("spec.toml");
    let out = morphtag(&["experiment", s(&spec)]);
    assert_ok(&out);
    let out_dir = dir.path().join("out");
    let curve = fs::read_to_string(out_dir.join("curve.csv")).unwrap();
    let rows: Vec<Vec<&str>> = curve.lines().skip(2).map(|l| l.split(',').collect()).collect();
    // 2 architectures × 3 sizes, each averaged over 2 seeds
    assert_eq!(rows.len(), 6, "{curve}");
    assert!(rows.iter().all(|r| r[4] == "2"));
    let sizes: Vec<&str> = rows.iter().filter(|r| r[2] == "mono").map(|r| r[3]).collect();
    assert_eq!(sizes, ["3", "6", "all"]);
    assert_eq!(rows.iter().find(|r| r[3] == "all").unwrap()[5], "12");
    let svg = fs::read_to_string(out_dir.join("curve_bb.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    let cells = fs::read_to_string(out_dir.join("cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 2 + 12);

    // a grid with a missing corpus is refused before any training
    let bad = dir.path().join("bad.toml");
    let text = fs::read_to_string(&spec).unwrap().replace("dd-test.conllu", "missing.conllu");
    fs::write(&bad, text.replace("targets = [\"bb\"]", "targets = [\"dd\"]")).unwrap();
    let out = morphtag(&["experiment", s(&bad)]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    // a cell that fails is recorded and the rest of the grid still runs
    let failing = dir.path().join("failing.toml");
    let text = fs::read_to_string(&spec)
        .unwrap()
        .replace("output = \"out\"", "output = \"out2\"")
        .replace("epochs = 2", "epochs = 2\nlr = 1e306\nclip_norm = 0")
        .replace("architectures = [\"mono\", \"joint\"]", "architectures = [\"mono\"]");
    fs::write(&failing, text).unwrap();
    let out = morphtag(&["experiment", s(&failing)]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    let failures = fs::read_to_string(dir.path().join("out2/failures.csv")).unwrap();
    assert_eq!(failures.lines().count(), 1 + 6, "{failures}");
}
