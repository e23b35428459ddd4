//! Command-line behavior: outputs, determinism and exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

use intnn::cli;
use intnn::data;
use intnn::experiment::acceptance_teacher;
use intnn::network::NetworkParams;
use tempfile::TempDir;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Outcome {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut full = vec!["intnn"];
    full.extend_from_slice(args);
    let code = cli::run(full, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Teacher-labeled panel written from the fixture teacher.
fn teacher_panel(dir: &TempDir, units: usize) -> PathBuf {
    let cfg = write(
        dir,
        "gen.cfg",
        &format!(
            "n_units = {units}\nn_periods = 24\n\
             employed_pay_prob = [0.45, 0.85, 0.6, 0.8, 0.75, 0.05, 0.7]\n\
             unemployed_pay_prob = [0.8, 0.05, 0.6, 0.05, 0.05, 0.5, 0.1]\n"
        ),
    );
    let out = dir.path().join("panel.csv");
    let r = run(&[
        "generate",
        "--config",
        p(&cfg),
        "--teacher",
        p(&fixture("acceptance_teacher.txt")),
        "--seed",
        "9",
        "--out",
        p(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    out
}

#[test]
fn generate_default_writes_every_unit_period() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("panel.csv");
    let r = run(&["generate", "--out", p(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 1000 * 24);
    assert!(text.starts_with("unit_id,period,"));
}

#[test]
fn generate_with_teacher_labels_full_windows() {
    let dir = TempDir::new().unwrap();
    let ds = data::load_csv(teacher_panel(&dir, 20)).unwrap();
    for r in &ds.records {
        assert_eq!(r.label.is_some(), r.period >= 6, "period {}", r.period);
    }
}

#[test]
fn bad_config_key_exits_2_naming_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "bad.cfg", "n_units = 5\nlearning_rat = 0.1\n");
    let r = run(&["generate", "--config", p(&cfg), "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("learning_rat"), "{}", r.stderr);
}

#[test]
fn missing_data_file_exits_2() {
    let dir = TempDir::new().unwrap();
    let r = run(&["train", "--data", p(&dir.path().join("none.csv")), "--out", p(&dir.path().join("m.txt"))]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("none.csv"), "{}", r.stderr);
}

#[test]
fn integrity_error_exits_3() {
    let dir = TempDir::new().unwrap();
    let csv = "unit_id,period,pay_1,pay_2,label\n1,1,0,0,\n1,1,5,0,\n";
    let data = write(&dir, "dup.csv", csv);
    let r = run(&["train", "--data", p(&data), "--out", p(&dir.path().join("m.txt"))]);
    assert_eq!(r.code, 3, "{}", r.stderr);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&[]).code, 2);
    assert_eq!(run(&["filter-demo", "--mode", "example3"]).code, 2);
}

#[test]
fn train_intnn_on_teacher_data_reaches_target_accuracy() {
    let dir = TempDir::new().unwrap();
    let data = teacher_panel(&dir, 400);
    let cfg = write(&dir, "train.cfg", "n_per_class = 2000\n");
    let model = dir.path().join("model.txt");
    let r = run(&["train", "--data", p(&data), "--model", "intnn", "--config", p(&cfg), "--out", p(&model)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let metrics = std::fs::read_to_string(dir.path().join("model.txt.metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,train_acc,test_acc"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 201);
    let last = rows.last().unwrap();
    assert_eq!(last[0], "200");
    let test_acc: f64 = last[3].parse().unwrap();
    assert!(test_acc >= 0.95, "test accuracy {test_acc}");
    let initial: f64 = rows[0][1].parse().unwrap();
    let fin: f64 = last[1].parse().unwrap();
    assert!(fin <= initial);
    assert!(NetworkParams::from_text(&std::fs::read_to_string(&model).unwrap()).is_ok());
}

#[test]
fn zero_epochs_writes_initial_parameters() {
    let dir = TempDir::new().unwrap();
    let data = teacher_panel(&dir, 60);
    let cfg = write(&dir, "train.cfg", "epochs = 0\nn_per_class = 100\nseed = 4\n");
    let model = dir.path().join("m0.txt");
    let r = run(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&model)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let got = NetworkParams::from_text(&std::fs::read_to_string(&model).unwrap()).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(4);
    rng.set_stream(u64::MAX);
    assert_eq!(got, NetworkParams::init(7, 6, 1, &mut rng));
    let metrics = std::fs::read_to_string(dir.path().join("m0.txt.metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
}

#[test]
fn compare_prints_eleven_rows_deterministically() {
    let dir = TempDir::new().unwrap();
    let data = teacher_panel(&dir, 60);
    let cfg = write(&dir, "cmp.cfg", "n_per_class = 200\nepochs = 20\n");
    let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    for out in [&a, &b] {
        let r = run(&["compare", "--data", p(&data), "--config", p(&cfg), "--out", p(out)]);
        assert_eq!(r.code, 0, "{}", r.stderr);
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let rows: Vec<&str> = text.lines().filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit())).collect();
    assert_eq!(rows.len(), 11);
    let first: Vec<&str> = rows[0].split_whitespace().collect();
    assert_eq!(&first[..3], ["1", "IntNN", "-"]);
}

#[test]
fn interpret_reference_model() {
    let r = run(&["interpret", "--model", p(&fixture("employment_model.txt"))]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("threshold -d/c = 15.9462"), "{}", r.stdout);
    assert!(r.stdout.contains("smoothing k = 0.999999"));
    assert!(r.stdout.contains("positively weighted: hpf, working_medical, injury, maternity"));
    assert!(r.stdout.contains("negatively weighted: unemployment, endowment, non_working_medical"));
}

#[test]
fn interpret_zero_weights_has_empty_partitions() {
    let dir = TempDir::new().unwrap();
    let model = write(&dir, "zero.txt", &NetworkParams::zeros(3, 4, 1).to_text());
    let r = run(&["interpret", "--model", p(&model), "--names", "a,b,c"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("positively weighted: (none)"));
    assert!(r.stdout.contains("negatively weighted: (none)"));
}

#[test]
fn interpret_name_count_mismatch_exits_2() {
    let r = run(&["interpret", "--model", p(&fixture("employment_model.txt")), "--names", "a,b"]);
    assert_eq!(r.code, 2);
}

#[test]
fn interpret_with_logistic_appends_sign_table() {
    let dir = TempDir::new().unwrap();
    let data = teacher_panel(&dir, 60);
    let cfg = write(&dir, "l.cfg", "n_per_class = 200\nepochs = 30\n");
    let logistic = dir.path().join("npc.txt");
    let r = run(&[
        "train", "--data", p(&data), "--model", "logistic", "--features", "npc", "--config", p(&cfg), "--out",
        p(&logistic),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let r = run(&["interpret", "--model", p(&fixture("employment_model.txt")), "--logistic", p(&logistic)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("agreeing rows: "), "{}", r.stdout);
    assert_eq!(r.stdout.lines().filter(|l| l.ends_with(" yes") || l.ends_with(" no")).count(), 7);
}

#[test]
fn evaluate_reports_accuracy() {
    let dir = TempDir::new().unwrap();
    let data = teacher_panel(&dir, 30);
    let r = run(&["evaluate", "--data", p(&data), "--model", p(&fixture("acceptance_teacher.txt"))]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains(&format!("n = {}", 30 * 19)), "{}", r.stdout);
    let acc: f64 = r.stdout.lines().find_map(|l| l.strip_prefix("accuracy = ")).unwrap().parse().unwrap();
    assert!(acc > 0.9, "{acc}");
}

fn demo(args: &[&str]) -> Vec<(usize, f64, f64)> {
    let r = run(args);
    assert_eq!(r.code, 0, "{}", r.stderr);
    r.stdout
        .lines()
        .skip(1)
        .map(|l| {
            let v: Vec<&str> = l.split(',').collect();
            (v[0].parse().unwrap(), v[1].parse().unwrap(), v[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn filter_demo_example1_values() {
    let rows = demo(&["filter-demo", "--mode", "example1", "--T", "1000", "--k", "0.75,1"]);
    assert_eq!(rows.len(), 21 * 2);
    let at = |t0, k| rows.iter().find(|r| r.0 == t0 && r.1 == k).unwrap().2;
    assert!((at(500, 0.75) - 500.0).abs() <= 1e-6);
    assert_eq!(at(0, 1.0), -1000.0);
}

#[test]
fn filter_demo_example2_smoothing_helps() {
    let args = ["filter-demo", "--mode", "example2", "--k", "0.6,1", "--t0-step", "100", "--seed", "3"];
    let rows = demo(&args);
    let mean = |k: f64| {
        let sel: Vec<_> = rows.iter().filter(|r| r.1 == k && r.0 >= 100 && r.0 <= 900).collect();
        sel.iter().map(|r| (r.2 - r.0 as f64).abs()).sum::<f64>() / sel.len() as f64
    };
    assert!(mean(1.0) > mean(0.6));
    assert_eq!(rows, demo(&args));
}

#[test]
fn gradcheck_passes_for_every_model_kind() {
    for kind in ["network", "logistic", "mlp", "quadratic"] {
        let r = run(&["gradcheck", "--model-kind", kind, "--seed", "1"]);
        assert_eq!(r.code, 0, "{kind}: {}", r.stdout);
        assert!(r.stdout.trim_end().ends_with("PASS"));
    }
    let r = run(&["gradcheck", "--model-kind", "quadratic"]);
    let err: f64 = r
        .stdout
        .lines()
        .find_map(|l| l.strip_prefix("overall  max relative error "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err <= 1e-10);
}

#[test]
fn robustness_at_zero_rate_repeats_the_clean_table() {
    let dir = TempDir::new().unwrap();
    let data = teacher_panel(&dir, 60);
    let cfg = write(&dir, "r.cfg", "n_per_class = 200\nepochs = 10\n");
    let out = dir.path().join("rob");
    let r = run(&["robustness", "--data", p(&data), "--rate", "0", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let clean = std::fs::read_to_string(out.join("clean.txt")).unwrap();
    assert_eq!(clean, std::fs::read_to_string(out.join("corrupted.txt")).unwrap());
    assert!(r.stdout.contains("k clean = "));
    assert!(std::fs::read_to_string(out.join("parameters.txt")).unwrap().contains("channel 0 k"));
}

#[test]
fn fixture_teacher_matches_library_teacher() {
    let text = std::fs::read_to_string(fixture("acceptance_teacher.txt")).unwrap();
    let file = NetworkParams::from_text(&text).unwrap();
    let lib = acceptance_teacher();
    assert_eq!((file.c, file.d, &file.channels[0].w, file.u[0]), (lib.c, lib.d, &lib.channels[0].w, lib.u[0]));
    assert!((file.channels[0].k() - lib.channels[0].k()).abs() <= 1e-15);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_intnn");
    let ok = Command::new(bin).args(["gradcheck", "--model-kind", "quadratic"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let bad = Command::new(bin).args(["interpret", "--model", "/nonexistent/model.txt"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("/nonexistent/model.txt"));
}
