use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn slt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slt"))
        .args(args)
        .env("MEDIATOR_LOG", "warn")
        .output()
        .expect("slt runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn report_reproduces_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let tsv = tmp.path().join("report.tsv");
    let dir = fixtures().join("devset_tables");
    let out = slt(&["report", path(&dir), "--tsv", path(&tsv)]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    for cell in [
        "32.96", "26.10", "10.45", "23.17", "33.84", "3.796", "2.538", "275.51",
    ] {
        assert!(text.contains(cell), "missing {cell}");
    }
    assert!(fs::read_to_string(&tsv).unwrap().contains("KIT-seq2seq"));
}

#[test]
fn report_without_inputs_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(slt(&["report", path(tmp.path())]).status.code(), Some(4));
    let gone = tmp.path().join("nope");
    assert_eq!(slt(&["eval", "report", path(&gone)]).status.code(), Some(4));
}

#[test]
fn train_run_and_score() {
    let tmp = tempfile::tempdir().unwrap();
    let doc = fixtures().join("teddy");
    let model = tmp.path().join("punct.model");
    let out = slt(&[
        "punct",
        "train",
        "--corpus",
        path(&doc.join("reference.en.txt")),
        "--out",
        path(&model),
    ]);
    assert_eq!(out.status.code(), Some(0));

    let run_dir = tmp.path().join("run");
    let out = slt(&[
        "run",
        "--doc",
        path(&doc),
        "--out",
        path(&run_dir),
        "--punct-model",
        path(&model),
        "--seed",
        "5",
        "--set",
        "asr.p_sub=0",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in [
        "translation.cs.txt",
        "emissions.tsv",
        "timing.txt",
        "latency.tsv",
    ] {
        assert!(run_dir.join(name).exists(), "{name}");
    }

    let out = slt(&[
        "eval",
        "wer",
        "--doc",
        path(&doc),
        "--hyp",
        path(&run_dir.join("translation.cs.txt")),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let row = stdout(&out).lines().nth(1).unwrap().to_string();
    assert!(row.ends_with("\t0.00"), "{row}");

    // One line per translated sentence: the English reference scores 100.
    let out = slt(&[
        "eval",
        "bleu",
        "--doc",
        path(&doc),
        "--hyp",
        path(&run_dir.join("source.en.txt")),
        "--lang",
        "en",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(
        stdout(&out).starts_with("BLEU = 100.00"),
        "{}",
        stdout(&out)
    );
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let doc = fixtures().join("teddy");
    let out = slt(&["run", "--doc", path(&doc), "--set", "asr.bogus=1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = slt(&["run", "--doc", path(&doc), "--stability", "sometimes"]);
    assert_eq!(out.status.code(), Some(2));
    let conf = tmp.path().join("bad.conf");
    fs::write(&conf, "cascade = mt:en-cs,asr:en\n").unwrap();
    assert_eq!(
        slt(&["run", "--config", path(&conf)]).status.code(),
        Some(2)
    );
}

#[test]
fn missing_evaluation_input_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let doc = fixtures().join("teddy");
    let hyp = tmp.path().join("absent.txt");
    let out = slt(&["eval", "wer", "--doc", path(&doc), "--hyp", path(&hyp)]);
    assert_eq!(out.status.code(), Some(4));

    fs::write(&hyp, "just one line\n").unwrap();
    let out = slt(&[
        "eval",
        "bleu",
        "--doc",
        path(&doc),
        "--hyp",
        path(&hyp),
        "--lang",
        "cs",
    ]);
    assert_eq!(out.status.code(), Some(4), "line-count mismatch");
}

#[test]
fn mwer_resegments_unsegmented_output() {
    let tmp = tempfile::tempdir().unwrap();
    let doc = fixtures().join("teddy");
    let reference = fs::read_to_string(doc.join("reference.en.txt")).unwrap();
    let hyp = tmp.path().join("flat.txt");
    fs::write(
        &hyp,
        reference.split_whitespace().collect::<Vec<_>>().join(" "),
    )
    .unwrap();
    let out = slt(&[
        "eval",
        "mwer",
        "--doc",
        path(&doc),
        "--hyp",
        path(&hyp),
        "--lang",
        "en",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let segments: Vec<String> = stdout(&out).lines().map(str::to_string).collect();
    let want: Vec<&str> = reference.lines().filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(segments, want);
    assert!(String::from_utf8_lossy(&out.stderr).contains("edit_cost = 0"));
}

#[test]
fn run_against_standalone_mediator() {
    let tmp = tempfile::tempdir().unwrap();
    let doc = fixtures().join("teddy");
    let addr = {
        let probe = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        probe.local_addr().unwrap().to_string()
    };
    let mut mediator = Command::new(env!("CARGO_BIN_EXE_mediator"))
        .args(["serve", "--listen", &addr])
        .env("MEDIATOR_LOG", "warn")
        .spawn()
        .unwrap();
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(10);
    while std::net::TcpStream::connect(&addr).is_err() {
        assert!(
            std::time::Instant::now() < deadline,
            "mediator did not start"
        );
        std::thread::sleep(std::time::Duration::from_millis(20));
    }

    let model = tmp.path().join("punct.model");
    let corpus = doc.join("reference.en.txt");
    slt(&[
        "punct",
        "train",
        "--corpus",
        path(&corpus),
        "--out",
        path(&model),
    ]);
    let run_dir = tmp.path().join("run");
    let out = Command::new(env!("CARGO_BIN_EXE_slt"))
        .args(["run", "--doc", path(&doc), "--out", path(&run_dir)])
        .args(["--punct-model", path(&model), "--transform", "tag"])
        .env("MEDIATOR_LOG", "warn")
        .args(["--mediator", &addr])
        .output()
        .unwrap();
    let _ = mediator.kill();
    let _ = mediator.wait();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let translation = fs::read_to_string(run_dir.join("translation.cs.txt")).unwrap();
    assert_eq!(translation.lines().count(), 11);
    assert!(translation
        .lines()
        .all(|l| l.starts_with("\u{27e6}cs\u{27e7} ")));
}
