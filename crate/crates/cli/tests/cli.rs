use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use affectgen::checkpoint;
use affectgen::corpus::{build_vocab, read_text_pairs, tokenize};
use affectgen::decoding::greedy_decode;
use affectgen::lexicon::{load_lexicon, ColumnMap};
use affectgen::model::{ModelConfig, Seq2Seq};
use tempfile::TempDir;

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn lexicon() -> String {
    data("lexicon_fixture.csv").display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affectgen"))
        .args(args)
        .output()
        .unwrap()
}

fn run_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_affectgen"))
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

/// First 60 toy dialogue pairs in a scratch directory.
fn workspace() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(data("toy/dialogues_train.tsv")).unwrap();
    let pairs = dir.path().join("pairs.tsv");
    let mut f = File::create(&pairs).unwrap();
    for line in text.lines().take(60) {
        writeln!(f, "{line}").unwrap();
    }
    (dir, pairs)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 6] = ["--embed-dim", "4", "--hidden-dim", "6", "--batch-size", "16"];

fn train(pairs: &Path, out: &Path, extra: &[&str]) -> Output {
    let lex = lexicon();
    let mut args = vec!["train", "--lexicon", &lex, "--pairs", p(pairs), "--out", p(out)];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn help_lists_defaults() {
    let o = run(&["train", "--help"]);
    assert!(o.status.success());
    let h = stdout(&o);
    for want in [
        "[default: ac]",
        "[default: 40]",
        "[default: 10]",
        "[default: 0.001]",
        "[default: 64]",
        "[default: 5]",
        "[default: 2000]",
        "[default: 32]",
    ] {
        assert!(h.contains(want), "train help lacks {want}");
    }
    let h = stdout(&run(&["decode", "--help"]));
    for want in [
        "[default: 3]",
        "[default: 0.7]",
        "[default: sl-affect]",
        "[default: 20]",
    ] {
        assert!(h.contains(want), "decode help lacks {want}");
    }
    assert!(run(&["--version"]).status.success());
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["decode", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(
        run(&[
            "decode",
            "--checkpoint",
            "/nonexistent/m.ckpt",
            "--prompts",
            "/dev/null"
        ])
        .status
        .code(),
        Some(2)
    );
    let (dir, pairs) = workspace();
    let out = dir.path().join("m.ckpt");
    assert_eq!(
        train(&pairs, &out, &["--epochs", "1", "--lr=-1"]).status.code(),
        Some(1)
    );
    assert_eq!(
        train(&pairs, &out, &["--epochs", "1", "--lambda", "2"]).status.code(),
        Some(1)
    );
    assert_eq!(
        train(&pairs, &out, &["--epochs", "1", "--lr", "1e39", "--clip", "0"])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        train(&dir.path().join("absent.tsv"), &out, &["--epochs", "1"])
            .status
            .code(),
        Some(2)
    );
    let o = run(&[
        "decode",
        "--mock",
        p(&data("mock_trace.txt")),
        "--beam",
        "3",
        "--groups",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn prep_cornell_mini() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pairs.tsv");
    let o = run(&["prep-cornell", "--input", p(&data("cornell_mini")), "--output", p(&out)]);
    assert!(o.status.success());
    // L5-L6 and L6-L7 reference a missing line; L7 is also empty
    assert_eq!(
        fs::read_to_string(&out).unwrap(),
        "can we make this quick ?\twell , i thought we ' d start with pronunciation .\n\
         well , i thought we ' d start with pronunciation .\tnot the hacking and gagging again .\n\
         you ' re asking me out . that ' s so cute .\tforget it .\n"
    );
    let o = run(&["prep-cornell", "--input", p(dir.path()), "--output", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("movie_lines.txt"));
}

#[test]
fn zero_epochs_is_the_initialization() {
    let (dir, pairs) = workspace();
    let out = dir.path().join("m.ckpt");
    assert!(train(&pairs, &out, &["--epochs", "0", "--loss", "xent", "--seed", "7"])
        .status
        .success());
    let lex = load_lexicon(File::open(lexicon()).unwrap(), &ColumnMap::default()).unwrap();
    let text = read_text_pairs(File::open(&pairs).unwrap()).unwrap();
    let vocab = build_vocab(text.sequences(), 2000).unwrap();
    let mut cfg = ModelConfig::new(vocab.len());
    cfg.embed_dim = 4;
    cfg.hidden_dim = 6;
    let init = Seq2Seq::init(cfg, &lex, vocab, 7).unwrap();
    assert_eq!(fs::read(&out).unwrap(), checkpoint::to_bytes(&init).unwrap());
}

#[test]
fn training_is_byte_reproducible_and_resumable() {
    let (dir, pairs) = workspace();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let args = ["--phase1-epochs", "2", "--phase2-epochs", "1", "--seed", "3"];
    assert!(train(&pairs, &a, &args).status.success());
    assert!(train(&pairs, &b, &args).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(dir.path().join("a.ckpt.phase1").is_file());
    let log = fs::read_to_string(dir.path().join("a.ckpt.log")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch\tphase\tloss\tmean_loss\tseconds");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("2\t2\tac\t"));

    let c = dir.path().join("c.ckpt");
    assert!(train(&pairs, &c, &["--epochs", "1", "--resume", p(&a)])
        .status
        .success());
    let (ma, mc) = (checkpoint::load(&a).unwrap(), checkpoint::load(&c).unwrap());
    assert_eq!(ma.vocab, mc.vocab);
    assert_ne!(ma.params, mc.params);
}

#[test]
fn beam_one_without_diversity_is_greedy() {
    let (dir, pairs) = workspace();
    let ckpt = dir.path().join("m.ckpt");
    assert!(train(&pairs, &ckpt, &["--epochs", "3", "--loss", "xent"])
        .status
        .success());
    let prompts = "how was the movie ?\nwhat about the party\n\ndid you like the zebra ?\n";
    let o = run_stdin(
        &["decode", "--checkpoint", p(&ckpt), "--beam", "1", "--metric", "none"],
        prompts,
    );
    assert!(o.status.success());
    let m = checkpoint::load(&ckpt).unwrap();
    let want: Vec<String> = prompts
        .lines()
        .map(|l| {
            let ids = m.vocab.encode(&tokenize(l));
            if ids.is_empty() {
                String::new()
            } else {
                m.vocab.render(&greedy_decode(&m, &ids, 20).unwrap())
            }
        })
        .collect();
    assert_eq!(stdout(&o).lines().collect::<Vec<_>>(), want);

    // default decoding prints B tab-separated beams per prompt
    let o = run_stdin(&["decode", "--checkpoint", p(&ckpt)], "how was the day\n");
    assert_eq!(stdout(&o).trim_end_matches('\n').split('\t').count(), 3);
}

#[test]
fn mock_decoding_matches_hand_trace() {
    let o = run(&[
        "decode",
        "--mock",
        p(&data("mock_trace.txt")),
        "--metric",
        "hamming",
        "--max-decode-len",
        "2",
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "0 0\t2 2\t1 1\n");
    let o = run(&[
        "decode",
        "--mock",
        p(&data("mock_trace.txt")),
        "--beam",
        "3",
        "--groups",
        "1",
        "--max-decode-len",
        "2",
    ]);
    assert_eq!(stdout(&o), "0 0\t2 2\t0 1\n");
}

#[test]
fn chat_session() {
    let (dir, pairs) = workspace();
    let ckpt = dir.path().join("m.ckpt");
    assert!(train(&pairs, &ckpt, &["--epochs", "1", "--loss", "xent"])
        .status
        .success());
    let lex = lexicon();
    let args = ["chat", "--checkpoint", p(&ckpt), "--lexicon", &lex, "--show-affect"];
    let o = run_stdin(&args, "\nhow was the movie\n:quit\nnever read\n");
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.matches("> ").count(), 3, "{out}");
    assert_eq!(out.lines().filter(|l| l.contains("affect ")).count(), 1);
    // end of input also ends the session
    let o = run_stdin(&["chat", "--checkpoint", p(&ckpt), "--all-beams"], "how was the day\n");
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 4);
    assert_eq!(
        run_stdin(&["chat", "--checkpoint", p(&ckpt), "--show-affect"], "")
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn affect_score_of_bored() {
    let lex = lexicon();
    let o = run(&["affect-score", "--lexicon", &lex, "I am bored"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "token\tV\tA\tD\tlemma");
    assert_eq!(lines[3], "bored\t2.95\t3.65\t4.96\tbored");
    let content: f64 = lines[6].strip_prefix("#content\t").unwrap().parse().unwrap();
    // |(2.95, 3.65, 4.96) - (5, 1, 5)| / 3, the other two tokens are neutral
    let hand = (2.05f64.powi(2) + 2.65f64.powi(2) + 0.04f64.powi(2)).sqrt() / 3.0;
    assert!((content - hand).abs() < 1e-12);
    let o = run(&["affect-score", "--lexicon", &lex, ""]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "token\tV\tA\tD\tlemma\n");
    let o = run_stdin(&["affect-score", "--lexicon", &lex], "bored\n");
    assert!(stdout(&o).contains("bored\t2.95"));
}

#[test]
fn config_file_sets_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("decode.cfg");
    fs::write(&cfg, "# trace settings\nmetric = hamming\nmax_decode_len = 2\n").unwrap();
    let mock = data("mock_trace.txt");
    let o = run(&["decode", "--config", p(&cfg), "--mock", p(&mock)]);
    assert_eq!(stdout(&o), "0 0\t2 2\t1 1\n");
    let o = run(&[
        "decode",
        "--config",
        p(&cfg),
        "--mock",
        p(&mock),
        "--metric",
        "none",
        "--groups",
        "1",
    ]);
    assert_eq!(stdout(&o), "0 0\t2 2\t0 1\n");
    fs::write(&cfg, "beam five\n").unwrap();
    assert_eq!(
        run(&["decode", "--config", p(&cfg), "--mock", p(&mock)]).status.code(),
        Some(1)
    );
}

#[test]
fn eval_appends_rows() {
    let (dir, pairs) = workspace();
    let ckpt = dir.path().join("m.ckpt");
    assert!(train(&pairs, &ckpt, &["--epochs", "1", "--loss", "xent"])
        .status
        .success());
    let tsv = dir.path().join("eval.tsv");
    let lex = lexicon();
    for label in ["bs", "sl"] {
        let mut args = vec![
            "eval",
            "--checkpoint",
            p(&ckpt),
            "--lexicon",
            &lex,
            "--pairs",
            p(&pairs),
        ];
        args.extend([
            "--output",
            p(&tsv),
            "--append",
            "--label",
            label,
            "--max-decode-len",
            "5",
        ]);
        assert!(run(&args).status.success());
    }
    let text = fs::read_to_string(&tsv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("config\tprompts\taffect_content"));
    assert!(lines[1].starts_with("bs\t60\t") && lines[2].starts_with("sl\t60\t"));
}
