use std::path::Path;
use std::process::{Command, Output};

fn cogd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cogd"))
        .args(args)
        .current_dir(cwd)
        .env_remove("COGD_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap()
}

#[test]
fn run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.txt", "experiment = beale\niterations = 20\n");
    let out = cogd(&["run", &cfg, "--output", "out", "--seed", "3"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = dir.path().join("out");
    assert!(run.join("beale_adam_cogd.csv").exists());
    let config = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(config.contains("\n# seed 3\n"));
    assert!(config.contains("\niterations=20\n"));

    let rep = cogd(&["report", "out"], dir.path());
    assert_eq!(rep.status.code(), Some(0));
    let text = String::from_utf8(rep.stdout).unwrap();
    assert!(text.starts_with("key"));
    assert!(text.contains("adam_cogd_path_length"));
}

#[test]
fn validate_prints_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.txt", "experiment = csc-inpaint\n");
    let out = cogd(&["validate", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("keep_fraction=0.25\n"));
}

#[test]
fn config_errors_exit_2_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.txt",
        "experiment = beale\nlearning_rate = -1\nwhat = 1\n",
    );
    let out = cogd(&["run", &cfg, "--output", "out"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "config");
    assert_eq!(err["exit_code"], 2);
    assert_eq!(err["details"].as_array().unwrap().len(), 2);
    assert_eq!(err["details"][0]["location"], "line 2");
    assert!(!dir.path().join("out").exists());

    let out = cogd(&["validate", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = cogd(&["run", "bad.txt", "--set", "seed=x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_3_with_partial_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "lsq.txt",
        "experiment = bilinear-lsq\nlearning_rate = 50\niterations = 200\n",
    );
    let out = cogd(&["run", &cfg, "--output", "out"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(stderr_json(&out)["error"], "numeric");
    let trace = std::fs::read_to_string(dir.path().join("out/lsq_plain.csv")).unwrap();
    let rows = trace.lines().count() - 1;
    assert!(rows >= 1 && rows < 201, "{rows} rows");
    let summary = std::fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert!(summary.contains("failure"));
}

#[test]
fn io_failures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = cogd(&["run", "missing.txt"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"], "io");

    let cfg = write(dir.path(), "b.txt", "experiment = beale\niterations = 5\n");
    write(dir.path(), "blocker", "a file");
    let out = cogd(&["run", &cfg, "--output", "blocker/run"], dir.path());
    assert_eq!(out.status.code(), Some(4));

    let out = cogd(&["report", "nowhere"], dir.path());
    assert_eq!(out.status.code(), Some(4));

    let img = write(
        dir.path(),
        "i.txt",
        "experiment = csc-reconstruct\nimage = nope.pgm\n",
    );
    let out = cogd(&["run", &img, "--output", "o"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "b.txt",
        "experiment = beale\niterations = 5\nseed = 8\n",
    );
    let root = dir.path().join("root");
    let out = Command::new(env!("CARGO_BIN_EXE_cogd"))
        .args(["run", &cfg])
        .current_dir(dir.path())
        .env("COGD_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(root.join("runs/beale-8/summary.csv").exists());
}

#[test]
fn pgm_input_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut pgm = b"P5\n16 16\n255\n".to_vec();
    pgm.extend((0..256u32).map(|i| ((i * 37 + (i / 16) * 11) % 256) as u8));
    std::fs::write(dir.path().join("img.pgm"), pgm).unwrap();
    let cfg = write(
        dir.path(),
        "c.txt",
        "experiment = csc-inpaint\nimage = img.pgm\nfilters = 2\nfilter_size = 3\nepochs = 3\ninpaint_iters = 5\n",
    );
    let out = cogd(&["run", &cfg, "--output", "o"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics = std::fs::read_to_string(dir.path().join("o/metrics.csv")).unwrap();
    assert!(metrics.lines().nth(1).unwrap().starts_with("img,plain,"));
}
