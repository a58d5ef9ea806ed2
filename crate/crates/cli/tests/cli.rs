use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TRAIN: &str = "a\tlikes\tb\nb\tlikes\tc\nc\tlikes\td\nd\tknows\ta\n\
                     a\tknows\tc\ne\tlikes\tf\nf\tknows\tg\ng\tlikes\th\nh\tknows\te\nb\tknows\te\n";
const VALID: &str = "a\tlikes\tc\ne\tknows\tg\n";
const TEST: &str = "b\tlikes\td\nf\tlikes\th\n";

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("train.txt"), TRAIN).unwrap();
        std::fs::write(dir.path().join("valid.txt"), VALID).unwrap();
        std::fs::write(dir.path().join("test.txt"), TEST).unwrap();
        let run = Self { dir };
        run.write_config(extra);
        run
    }

    fn write_config(&self, extra: &str) {
        let base = "seed = 3\noutput = \"out\"\n\
                    [data]\ntrain = \"train.txt\"\nvalid = \"valid.txt\"\ntest = \"test.txt\"\n";
        let mut text = base.to_string();
        let mut sections = vec![
            ("transe", "dim = 8\nepochs = 4\neval_every = 2\n"),
            ("model", "layers = 1\nfanouts = [3]\n"),
            ("train", "epochs = 2\nbatch_size = 4\nprefetch = 1\n"),
            ("train.negatives", "k = 2\n"),
        ]
        .into_iter()
        .map(|(s, b)| (s.to_string(), b.to_string()))
        .collect::<Vec<_>>();
        for line in extra.lines().filter(|l| !l.is_empty()) {
            let (section, kv) = line.split_once(' ').unwrap();
            match sections.iter_mut().find(|(s, _)| *s == section) {
                Some((_, body)) => {
                    let key = kv.split('=').next().unwrap().trim();
                    *body = body
                        .lines()
                        .filter(|l| l.split('=').next().unwrap().trim() != key)
                        .map(|l| format!("{l}\n"))
                        .collect::<String>();
                    body.push_str(&format!("{kv}\n"));
                }
                None => sections.push((section.to_string(), format!("{kv}\n"))),
            }
        }
        for (s, body) in sections {
            text.push_str(&format!("[{s}]\n{body}"));
        }
        std::fs::write(self.config(), text).unwrap();
    }

    fn config(&self) -> PathBuf {
        self.dir.path().join("run.toml")
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn ghawk(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_ghawk"))
            .args(args)
            .arg("--config")
            .arg(self.config())
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn preprocess_writes_artifacts_and_manifest() {
    let run = Run::new("");
    let stdout = ok(&run.ghawk(&["preprocess"]));
    assert!(stdout.contains("n_estimate="), "{stdout}");
    for f in ["bloom.ghbf", "transe_entities.ghem", "transe_relations.ghem", "fusion.ghnn", "preprocess.manifest.json"] {
        assert!(run.out().join(f).is_file(), "{f} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&run.out().join("preprocess.manifest.json"))).unwrap();
    let d = &manifest["degree"];
    assert_eq!(
        d["n_estimate"].as_u64().unwrap(),
        d["out_p95"].as_u64().unwrap() + d["in_p95"].as_u64().unwrap()
    );
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn preprocess_is_reproducible_and_seed_override_changes_it() {
    let run = Run::new("");
    ok(&run.ghawk(&["preprocess"]));
    let files = ["bloom.ghbf", "transe_entities.ghem", "fusion.ghnn"];
    let first: Vec<_> = files.iter().map(|f| read(&run.out().join(f))).collect();
    ok(&run.ghawk(&["preprocess"]));
    let second: Vec<_> = files.iter().map(|f| read(&run.out().join(f))).collect();
    assert_eq!(first, second);
    ok(&run.ghawk(&["preprocess", "--seed", "4"]));
    assert_ne!(read(&run.out().join("transe_entities.ghem")), first[1]);
}

#[test]
fn train_then_eval_reproduces_validation_metric() {
    let run = Run::new("");
    ok(&run.ghawk(&["preprocess"]));
    let history = ok(&run.ghawk(&["train"]));
    let best: f64 = history
        .lines()
        .find_map(|l| l.strip_prefix("best_epoch="))
        .and_then(|l| l.split("best_valid=").nth(1))
        .and_then(|v| v.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    for f in ["model.ghnn", "config.toml", "history.txt", "train.manifest.json"] {
        assert!(run.out().join("checkpoint").join(f).is_file(), "{f} missing");
    }
    let first = ok(&run.ghawk(&["eval"]));
    let second = ok(&run.ghawk(&["eval", "--checkpoint", run.out().join("checkpoint").to_str().unwrap()]));
    assert_eq!(first, second);
    let mrr: f64 = first
        .lines()
        .find_map(|l| l.strip_prefix("mrr="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((mrr - best).abs() < 1e-6, "{mrr} vs {best}");
    assert!(first.contains("[test]"));
}

#[test]
fn eval_with_mismatched_dimensions_fails_clearly() {
    let run = Run::new("");
    ok(&run.ghawk(&["preprocess"]));
    ok(&run.ghawk(&["train"]));
    run.write_config("model dim = 6");
    let out = run.ghawk(&["eval"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("shape"), "{}", stderr(&out));

    run.write_config("transe dim = 16");
    let out = run.ghawk(&["eval"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("dim 8 but transe.dim = 16"), "{}", stderr(&out));
}

#[test]
fn train_without_preprocessing_reports_missing_artifact() {
    let run = Run::new("");
    let out = run.ghawk(&["train"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("missing artifact"), "{}", stderr(&out));
}

#[test]
fn validation_errors_exit_with_code_two() {
    let run = Run::new("");
    std::fs::remove_file(run.dir.path().join("valid.txt")).unwrap();
    run.write_config("train batch_size = 0");
    let out = run.ghawk(&["preprocess"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("data.valid") && err.contains("train.batch_size"), "{err}");

    run.write_config("train batchsize = 3");
    let out = run.ghawk(&["preprocess"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("batchsize"));
}

#[test]
fn usage_errors_exit_with_code_one() {
    let run = Run::new("");
    assert_eq!(run.ghawk(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run.ghawk(&["train", "--threads", "x"]).status.code(), Some(1));
    let help = Command::new(env!("CARGO_BIN_EXE_ghawk")).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    let none = Command::new(env!("CARGO_BIN_EXE_ghawk")).arg("footprint").output().unwrap();
    assert_eq!(none.status.code(), Some(2));
}

#[test]
fn footprint_reports_reference_sizes() {
    let run = Run::new(
        "bloom sizing = \"explicit\"\nbloom m = 1024\nbloom k = 7\ntranse dim = 200\n\
         footprint entities = 10000000\nfootprint relations = 237\nfootprint hidden = 500",
    );
    let out = ok(&run.ghawk(&["footprint"]));
    assert!(out.contains("bloom bytes         1280000000 (1.28 GB)"), "{out}");
    assert!(out.contains("(8.00 GB)"), "{out}");
    assert!(out.contains("rgcn layer floats   59500000"), "{out}");
    assert!(out.contains("sage layer floats   500000"), "{out}");
}

#[test]
fn footprint_matches_artifact_sizes() {
    let run = Run::new("");
    ok(&run.ghawk(&["preprocess"]));
    let out = ok(&run.ghawk(&["footprint"]));
    let field = |name: &str| -> u64 {
        out.lines()
            .find_map(|l| l.strip_prefix(name))
            .unwrap()
            .split_whitespace()
            .next()
            .unwrap()
            .parse()
            .unwrap()
    };
    let bloom = std::fs::metadata(run.out().join("bloom.ghbf")).unwrap().len();
    let ent = std::fs::metadata(run.out().join("transe_entities.ghem")).unwrap().len();
    let rel = std::fs::metadata(run.out().join("transe_relations.ghem")).unwrap().len();
    assert!(bloom >= field("bloom bytes") && bloom - field("bloom bytes") < 1024);
    assert!(ent + rel >= field("transe bytes") && ent + rel - field("transe bytes") < 1024);
}

#[test]
fn bloom_inspect_prints_a_row() {
    let run = Run::new("");
    ok(&run.ghawk(&["preprocess"]));
    let out = ok(&run.ghawk(&["bloom-inspect", "a"]));
    let mut lines = out.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("entity a (id 0)"), "{header}");
    let bits: Vec<u32> = lines.next().unwrap().split_whitespace().map(|b| b.parse().unwrap()).collect();
    assert!(!bits.is_empty());
    assert!(bits.windows(2).all(|w| w[0] < w[1]));
    let by_id = ok(&run.ghawk(&["bloom-inspect", "0"]));
    assert_eq!(by_id, out);
    assert_eq!(run.ghawk(&["bloom-inspect", "zz"]).status.code(), Some(3));
}
