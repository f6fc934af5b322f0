use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

/// Runs the binary inside `dir`, so relative paths in manifests resolve there.
fn metasim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metasim"))
        .current_dir(dir)
        .env_remove("METASIM_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = metasim(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read(dir: &Path, path: &str) -> String {
    fs::read_to_string(dir.join(path)).unwrap_or_else(|e| panic!("{path}: {e}"))
}

const SMALL: &[&str] = &[
    "gen", "--classes", "8", "--per-class", "8", "--dim", "6", "--test-classes", "4", "--seed", "3",
];

fn small_dataset(dir: &Path, out: &str) {
    let mut args = SMALL.to_vec();
    args.extend(["--out", out]);
    ok(dir, &args);
}

fn train_small(dir: &Path, data: &str, out: &str) {
    ok(
        dir,
        &[
            "train", "--phase", "meta", "--labeled", &format!("{data}/labeled.txt"),
            "--epochs", "3", "--batch-labeled", "8", "--batch-meta-val", "8", "--per-class", "2",
            "--hidden", "8", "--embed-dim", "4", "--out", out,
        ],
    );
}

fn report_keys(report: &str) -> Vec<String> {
    report
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('=').next().unwrap().to_string())
        .collect()
}

#[test]
fn gen_writes_three_splits_deterministically() {
    let tmp = TempDir::new().unwrap();
    small_dataset(tmp.path(), "a");
    small_dataset(tmp.path(), "b");
    for file in ["labeled.txt", "unlabeled.txt", "test.txt"] {
        let a = read(tmp.path(), &format!("a/{file}"));
        assert!(a.starts_with("#metasim v1 dim=6 "), "{file}: {}", a.lines().next().unwrap());
        assert_eq!(a, read(tmp.path(), &format!("b/{file}")), "{file}");
    }
    assert!(read(tmp.path(), "a/labeled.txt").lines().next().unwrap().contains("n=32"));
    assert!(read(tmp.path(), "a/test.txt").lines().next().unwrap().contains("n=32"));
    assert!(tmp.path().join("a/gen.manifest.json").exists());
}

#[test]
fn help_and_version_exit_zero() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&metasim(tmp.path(), &["--help"])), 0);
    assert_eq!(code(&metasim(tmp.path(), &["--version"])), 0);
    assert_eq!(code(&metasim(tmp.path(), &["train", "--help"])), 0);
}

#[test]
fn bad_arguments_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&metasim(tmp.path(), &["gen", "--label-frac", "1.5"])), 1);
    assert_eq!(code(&metasim(tmp.path(), &["frobnicate"])), 1);
    assert_eq!(code(&metasim(tmp.path(), &["train", "--phase", "sideways", "--labeled", "x"])), 1);
    let grid = metasim(
        tmp.path(),
        &["audit", "--checkpoint", "c", "--labeled", "l", "--unlabeled", "u", "--psi-min", "2", "--psi-max", "1"],
    );
    assert_eq!(code(&grid), 1);
}

#[test]
fn semi_phase_needs_an_unlabeled_pool_and_records_the_failure() {
    let tmp = TempDir::new().unwrap();
    small_dataset(tmp.path(), "data");
    let out = metasim(
        tmp.path(),
        &["train", "--phase", "semi", "--labeled", "data/labeled.txt", "--out", "run"],
    );
    assert_eq!(code(&out), 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&read(tmp.path(), "run/train.manifest.json")).unwrap();
    assert_eq!(manifest["status"]["state"], "failed");
    assert_eq!(manifest["status"]["exit_code"], 1);
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 0);
}

#[test]
fn missing_input_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let out = metasim(
        tmp.path(),
        &["train", "--phase", "meta", "--labeled", "nowhere.txt", "--out", "run"],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.txt"));
}

#[test]
fn replay_reproduces_every_artifact_bit_for_bit() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    small_dataset(dir, "data");
    train_small(dir, "data", "m");
    ok(dir, &["train", "--phase", "semi", "--init", "m/checkpoint.json", "--labeled", "data/labeled.txt",
        "--unlabeled", "data/unlabeled.txt", "--epochs", "2", "--batch-labeled", "8",
        "--batch-unlabeled", "8", "--per-class", "2", "--out", "s"]);
    ok(dir, &["eval", "--checkpoint", "s/checkpoint.json", "--test", "data/test.txt", "--out", "e"]);
    ok(dir, &["audit", "--checkpoint", "s/checkpoint.json", "--labeled", "data/labeled.txt",
        "--unlabeled", "data/unlabeled.txt", "--psi-steps", "5", "--out", "a"]);

    let cases = [
        ("m/train.manifest.json", vec!["checkpoint.json", "train_log.jsonl", "train_steps.jsonl"]),
        ("s/train.manifest.json", vec!["checkpoint.json", "train_log.jsonl", "train_steps.jsonl"]),
        ("e/eval.manifest.json", vec!["report.txt", "report.tsv"]),
        ("a/audit.manifest.json", vec!["audit.tsv"]),
    ];
    for (i, (manifest, files)) in cases.iter().enumerate() {
        let into = format!("replay{i}");
        ok(dir, &["replay", manifest, "--into", &into]);
        let original = Path::new(manifest).parent().unwrap();
        for f in files {
            let a = fs::read(dir.join(original).join(f)).unwrap();
            let b = fs::read(dir.join(&into).join(f)).unwrap();
            assert!(a == b, "{manifest}: {f} differs after replay");
        }
    }
}

#[test]
fn one_hot_embeddings_score_perfectly() {
    let tmp = TempDir::new().unwrap();
    let mut text = String::from("#metasim v1 dim=3 n=9 labels=1 cameras=1\n");
    for uid in 0..9u32 {
        let label = uid % 3;
        let mut v = [0.0; 3];
        v[label as usize] = 1.0;
        text += &format!("{uid},{label},{},{},{},{}\n", uid % 2, v[0], v[1], v[2]);
    }
    fs::write(tmp.path().join("onehot.txt"), text).unwrap();

    let retrieval = ok(tmp.path(), &["eval", "--embeddings", "onehot.txt", "--out", "r"]);
    let report = read(tmp.path(), "r/report.txt");
    assert!(report.contains("measure=cosine"), "{report}");
    let keys = report_keys(&report);
    assert_eq!(keys, ["R@1", "R@2", "R@4", "R@8", "NMI", "CMC@1", "CMC@5", "CMC@10", "mAP"]);
    for line in report.lines().filter(|l| !l.starts_with('#')) {
        assert!(line.ends_with("=1.000000"), "{line}");
    }
    let table = String::from_utf8(retrieval.stdout).unwrap();
    assert_eq!(table.lines().count(), 2);

    ok(tmp.path(), &["eval", "--embeddings", "onehot.txt", "--protocol", "reid", "--out", "q"]);
    let reid = read(tmp.path(), "q/report.txt");
    assert!(reid.contains("protocol=reid measure=euclidean"), "{reid}");
    assert!(reid.contains("CMC@1=1.000000") && reid.contains("mAP=1.000000"), "{reid}");
}

#[test]
fn audit_rows_follow_the_grid() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    small_dataset(dir, "data");
    train_small(dir, "data", "m");
    ok(dir, &["audit", "--checkpoint", "m/checkpoint.json", "--labeled", "data/labeled.txt",
        "--unlabeled", "data/unlabeled.txt", "--grid", "1e-9,0.5,1e9", "--out", "a"]);
    let table = read(dir, "a/audit.tsv");
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    // 4 unlabeled classes of 8: 32 samples, 496 pairs, 4 * 28 positives.
    let count = |row: &[&str], col: usize| row[col].parse::<usize>().unwrap();
    let (first, last) = (&rows[0], &rows[2]);
    assert_eq!(count(first, 1) + count(first, 2), 0);
    assert_eq!(count(last, 3) + count(last, 4), 0);
    assert_eq!((count(last, 1), count(last, 2)), (112, 384));
}

#[test]
fn audit_needs_oracle_labels() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    small_dataset(dir, "data");
    train_small(dir, "data", "m");
    let hidden: String = read(dir, "data/unlabeled.txt")
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                l.replace("labels=1", "labels=0") + "\n"
            } else {
                let mut cells: Vec<&str> = l.split(',').collect();
                cells[1] = "-";
                cells.join(",") + "\n"
            }
        })
        .collect();
    fs::write(dir.join("pool.txt"), hidden).unwrap();
    let out = metasim(dir, &["audit", "--checkpoint", "m/checkpoint.json", "--labeled",
        "data/labeled.txt", "--unlabeled", "pool.txt", "--out", "a"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn export_writes_model_embeddings() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    small_dataset(dir, "data");
    train_small(dir, "data", "m");
    ok(dir, &["export", "--checkpoint", "m/checkpoint.json", "--data", "data/test.txt", "--out", "x"]);
    let text = read(dir, "x/embeddings.txt");
    assert!(text.starts_with("#metasim v1 dim=4 n=32 labels=1"), "{}", text.lines().next().unwrap());
    ok(dir, &["eval", "--embeddings", "x/embeddings.txt", "--out", "e"]);
    let bad = metasim(dir, &["export", "--checkpoint", "m/checkpoint.json", "--data",
        "data/test.txt", "--name", "../escape.txt", "--out", "x"]);
    assert_eq!(code(&bad), 1);
}
