use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use simcrit::simulate::{
    gen_dataset, gen_labels, rep_stream, EffectLaw, ErrorModel, SimConfig, SimDesign, Truth,
};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_simcrit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes a simulated matrix (and groups file for two samples).
fn write_matrix(dir: &Path, design: SimDesign, m: usize, pi1: f64, lo: f64, hi: f64, seed: u64) -> (PathBuf, Option<PathBuf>) {
    let cfg = SimConfig::new(
        m,
        design,
        Truth::Iid { pi1 },
        EffectLaw::MirroredUniform { lo, hi },
        ErrorModel::Normal,
        1,
        seed,
    )
    .unwrap();
    let mut rng = rep_stream(seed, 0);
    let labels = gen_labels(&cfg.truth, m, &mut rng);
    let data = gen_dataset(&cfg, &labels, &mut rng).unwrap();
    let n = design.n_cols();
    let mut text = String::from("gene");
    for j in 0..n {
        text.push_str(&format!("\ts{j}"));
    }
    text.push('\n');
    for (i, id) in data.feature_ids().iter().enumerate() {
        text.push_str(id);
        for x in data.row(i) {
            text.push_str(&format!("\t{x}"));
        }
        text.push('\n');
    }
    let path = dir.join("matrix.tsv");
    fs::write(&path, text).unwrap();
    let groups = match design {
        SimDesign::OneSample { .. } => None,
        SimDesign::TwoSample { n1, n2 } => {
            let g = dir.join("groups.txt");
            let lines: Vec<&str> = std::iter::repeat("ALL").take(n1).chain(std::iter::repeat("AML").take(n2)).collect();
            fs::write(&g, lines.join("\n") + "\n").unwrap();
            Some(g)
        }
    };
    (path, groups)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn two_group_fdr_run_writes_consistent_outputs() {
    let dir = TempDir::new().unwrap();
    let (matrix, groups) = write_matrix(dir.path(), SimDesign::TwoSample { n1: 12, n2: 10 }, 600, 0.3, 0.8, 1.6, 11);
    let groups = groups.unwrap();
    let prefix = dir.path().join("run");
    let out = run(&[
        "test", "--input", s(&matrix), "--groups", s(&groups), "--method", "fdr", "--gamma", "0.05",
        "--compare", "--out", s(&prefix),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let summary = json(&prefix.with_extension("summary.json"));
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["method"], "fdr");
    let pi1 = summary["pi1_hat"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&pi1));
    let t_hat = summary["t_hat"].as_f64().expect("signal present, threshold finite");
    let num = summary["num_rejected"].as_u64().unwrap() as usize;
    let bh = summary["compare"]["bh_rejected"].as_u64().unwrap() as usize;
    let st = summary["compare"]["st_rejected"].as_u64().unwrap() as usize;
    assert!(num >= st && st >= bh, "ck {num}, st {st}, bh {bh}");

    // reload the table and re-threshold at t_hat
    let table = fs::read_to_string(prefix.with_extension("features.tsv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "feature_id\tt_stat\tabs_t\trejected\tp_value\tq_value");
    let mut flagged = 0;
    let mut rethresholded = 0;
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 6);
        rows += 1;
        flagged += usize::from(f[3] == "1");
        if f[2] != "NA" && f[2].parse::<f64>().unwrap() >= t_hat {
            rethresholded += 1;
        }
    }
    assert_eq!(rows, 600);
    assert_eq!(flagged, num);
    assert_eq!(rethresholded, num);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (matrix, _) = write_matrix(dir.path(), SimDesign::OneSample { n: 15 }, 300, 0.2, 0.5, 1.0, 5);
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "2"].iter().enumerate() {
        let prefix = dir.path().join(format!("r{i}"));
        let out = bin()
            .env("SIMCRIT_THREADS", threads)
            .args(["test", "--input", s(&matrix), "--method", "fdtp", "--alpha", "0.1", "--gamma", "0.1", "--out", s(&prefix)])
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        outputs.push((
            fs::read(prefix.with_extension("features.tsv")).unwrap(),
            fs::read_to_string(prefix.with_extension("summary.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0].0, outputs[1].0);
    // the summary names its own table, which differs by prefix only
    assert_eq!(outputs[0].1.replace("r0.", "rX."), outputs[1].1.replace("r1.", "rX."));
}

#[test]
fn floats_carry_17_significant_digits() {
    let dir = TempDir::new().unwrap();
    let (matrix, _) = write_matrix(dir.path(), SimDesign::OneSample { n: 8 }, 50, 0.2, 0.5, 1.0, 9);
    let prefix = dir.path().join("d");
    let out = run(&["test", "--input", s(&matrix), "--gamma", "0.1", "--out", s(&prefix)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(prefix.with_extension("summary.json")).unwrap();
    let line = text.lines().find(|l| l.contains("\"pi1_hat\"")).unwrap();
    let value = line.split(':').nth(1).unwrap().trim().trim_end_matches(',');
    let mantissa = value.split('e').next().unwrap().trim_start_matches('-');
    assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17, "{value}");
}

#[test]
fn kfwer_and_fixed_pi1() {
    let dir = TempDir::new().unwrap();
    let (matrix, _) = write_matrix(dir.path(), SimDesign::OneSample { n: 20 }, 400, 0.1, 0.8, 1.2, 3);
    let prefix = dir.path().join("k");
    let out = run(&[
        "test", "--input", s(&matrix), "--method", "kfwer", "--k", "3", "--gamma", "0.05", "--pi1", "0.1",
        "--out", s(&prefix),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary = json(&prefix.with_extension("summary.json"));
    assert_eq!(summary["pi1_source"], "fixed");
    assert_eq!(summary["k"], 3);
    assert!(summary["c_star"].is_null());
}

#[test]
fn usage_errors_exit_64() {
    let dir = TempDir::new().unwrap();
    let (matrix, _) = write_matrix(dir.path(), SimDesign::OneSample { n: 6 }, 20, 0.2, 0.5, 1.0, 1);
    let prefix = dir.path().join("u");
    let cases: Vec<Vec<&str>> = vec![
        vec!["test", "--input", s(&matrix), "--gamma", "1.5", "--out", s(&prefix)],
        vec!["test", "--input", s(&matrix), "--gamma", "0.1", "--out", s(&prefix), "--bogus"],
        vec!["test", "--input", s(&matrix), "--gamma", "0.1", "--method", "fdtp", "--out", s(&prefix)],
        vec!["test", "--input", s(&matrix), "--gamma", "0.1", "--method", "kfwer", "--k", "0", "--out", s(&prefix)],
        vec!["test", "--input", s(&matrix), "--gamma", "0.1", "--pi1", "1.2", "--out", s(&prefix)],
        vec!["estimate-pi1", "--input", s(&matrix), "--grid", "1:1:1"],
        vec!["estimate-pi1", "--input", s(&matrix), "--grid", "2:1:10"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let out = run(&args);
        assert_eq!(code(&out), 64, "{args:?}: {}", stderr(&out));
    }
    let out = bin()
        .env("SIMCRIT_THREADS", "zero")
        .args(["estimate-pi1", "--input", s(&matrix)])
        .output()
        .unwrap();
    assert_eq!(code(&out), 64);
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["test", "--help"])), 0);
}

#[test]
fn data_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let prefix = d.join("x");

    let bad = d.join("bad.tsv");
    fs::write(&bad, "gene\ta\tb\tc\ng1\t1\t2\t3\ng2\t1\toops\t3\n").unwrap();
    let out = run(&["test", "--input", s(&bad), "--gamma", "0.1", "--out", s(&prefix)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    let ragged = d.join("ragged.csv");
    fs::write(&ragged, "gene,a,b,c\ng1,1,2,3\ng2,1,2\n").unwrap();
    let out = run(&["test", "--input", s(&ragged), "--gamma", "0.1", "--out", s(&prefix)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    let (matrix, _) = write_matrix(d, SimDesign::OneSample { n: 5 }, 20, 0.2, 0.5, 1.0, 2);
    let short = d.join("short.txt");
    fs::write(&short, "A\nA\nB\nB\n").unwrap();
    let out = run(&["test", "--input", s(&matrix), "--groups", s(&short), "--gamma", "0.1", "--out", s(&prefix)]);
    assert_eq!(code(&out), 2, "labels != columns");

    let lonely = d.join("lonely.txt");
    fs::write(&lonely, "A\nA\nA\nA\nB\n").unwrap();
    let out = run(&["test", "--input", s(&matrix), "--groups", s(&lonely), "--gamma", "0.1", "--out", s(&prefix)]);
    assert_eq!(code(&out), 2, "one sample in a group");

    let three = d.join("three.txt");
    fs::write(&three, "A\nA\nB\nB\nC\n").unwrap();
    let out = run(&["test", "--input", s(&matrix), "--groups", s(&three), "--gamma", "0.1", "--out", s(&prefix)]);
    assert_eq!(code(&out), 2, "three labels");

    let zeros = d.join("zeros.tsv");
    fs::write(&zeros, "gene\ta\tb\tc\ng1\t0\t0\t0\ng2\t0\t0\t0\n").unwrap();
    let out = run(&["estimate-pi1", "--input", s(&zeros)]);
    assert_eq!(code(&out), 2);

    let missing = d.join("missing.tsv");
    let out = run(&["estimate-pi1", "--input", s(&missing)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn estimate_pi1_on_leukemia_like_data() {
    let dir = TempDir::new().unwrap();
    let (matrix, groups) = write_matrix(dir.path(), SimDesign::TwoSample { n1: 47, n2: 25 }, 2000, 0.45, 1.0, 2.0, 21);
    let grid_out = dir.path().join("grid.tsv");
    let out = run(&[
        "estimate-pi1", "--input", s(&matrix), "--groups", s(&groups.unwrap()), "--dump-grid", s(&grid_out),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let pi1: f64 = stdout.lines().next().unwrap().split('\t').nth(1).unwrap().parse().unwrap();
    assert!((0.35..=0.5).contains(&pi1), "pi1_hat = {pi1}");
    assert!(stdout.contains("c_star\t"));
    let grid = fs::read_to_string(grid_out).unwrap();
    assert_eq!(grid.lines().count(), 201);
}

fn study_config(reps: usize, error: &str) -> String {
    format!(
        r#"{{
  "sim": {{
    "m": 300,
    "design": {{"kind": "one_sample", "n": 20}},
    "truth": {{"kind": "hmm", "p0": 0.8, "p1": 0.2}},
    "effect": {{"kind": "mirrored_uniform", "lo": 0.5, "hi": 1.0}},
    "error": {error},
    "reps": {reps},
    "seed": 17
  }},
  "procedures": [{{"kind": "fdr"}}, {{"kind": "kfwer", "k": 5}}, {{"kind": "bh"}}, {{"kind": "st"}}],
  "levels": [0.05, 0.2],
  "gold": [{{"method": "fdr", "gamma": 0.1}}],
  "gold_reps": 100,
  "rmse": true
}}"#
    )
}

#[test]
fn simulate_single_rep_output() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("study.json");
    fs::write(&cfg, study_config(1, r#"{"kind": "normal"}"#)).unwrap();
    let prefix = dir.path().join("sim");
    let out = run(&["simulate", "--config", s(&cfg), "--out", s(&prefix)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let reps = fs::read_to_string(prefix.with_extension("reps.tsv")).unwrap();
    // header plus one row per procedure and level
    assert_eq!(reps.lines().count(), 1 + 4 * 2);
    let curve = fs::read_to_string(prefix.with_extension("curve.tsv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 4 * 2);
    let summary = json(&prefix.with_extension("summary.json"));
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["evaluations"].as_array().unwrap().len(), 8);
    assert!(summary["gold"][0]["threshold"].is_number());
}

#[test]
fn simulate_is_deterministic_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("study.json");
    fs::write(&cfg, study_config(6, r#"{"kind": "student_t", "df": 4}"#)).unwrap();
    let mut files = Vec::new();
    for threads in ["1", "3"] {
        let prefix = dir.path().join(format!("t{threads}"));
        let out = bin()
            .env("SIMCRIT_THREADS", threads)
            .args(["simulate", "--config", s(&cfg), "--out", s(&prefix)])
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        files.push(
            ["reps.tsv", "curve.tsv", "summary.json"]
                .map(|ext| fs::read(prefix.with_extension(ext)).unwrap()),
        );
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn simulate_schema_errors_name_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("study.json");
    let prefix = dir.path().join("sim");

    fs::write(&cfg, study_config(2, r#"{"kind": "gumbel"}"#)).unwrap();
    let out = run(&["simulate", "--config", s(&cfg), "--out", s(&prefix)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("sim.error"), "{}", stderr(&out));

    fs::write(&cfg, study_config(2, r#"{"kind": "normal"}"#).replace("\"reps\": 2", "\"repz\": 2")).unwrap();
    let out = run(&["simulate", "--config", s(&cfg), "--out", s(&prefix)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("repz"), "{}", stderr(&out));

    fs::write(&cfg, study_config(0, r#"{"kind": "normal"}"#)).unwrap();
    let out = run(&["simulate", "--config", s(&cfg), "--out", s(&prefix)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("reps"), "{}", stderr(&out));
}
