use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vecgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vecgp")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn only_run_folder(parent: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = std::fs::read_dir(parent).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

#[test]
fn zero_generation_run_logs_only_generation_zero() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let o = vecgp(&["run", "--seed", "3", "--gens", "0", "--pop", "20", "--out", runs.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let folder = only_run_folder(&runs);
    assert!(folder.file_name().unwrap().to_str().unwrap().starts_with("run_"));
    let csv = std::fs::read_to_string(folder.join("evolution.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "generation,individual,fitness,depth,nodes");
    assert_eq!(lines.len(), 21);
    assert!(lines[1..].iter().all(|l| l.starts_with("0,")));
    assert!(folder.join("config.txt").exists());
    assert!(folder.join("state.txt").exists());
}

#[test]
fn eval_of_the_target_expression_is_exact() {
    let expr = "add(div(mult(mult(x,x),mult(x,x)), add(1, mult(mult(x,x),mult(x,x)))), \
                div(mult(mult(y,y),mult(y,y)), add(1, mult(mult(y,y),mult(y,y)))))";
    let o = vecgp(&["eval", expr, "--domain", "64x64"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let line = out.lines().find(|l| l.starts_with("rmse: ")).unwrap();
    let rmse: f64 = line["rmse: ".len()..].parse().unwrap();
    assert!(rmse < 1e-6, "{rmse}");
}

#[test]
fn iterative_and_vectorized_eval_agree() {
    let expr = "sin(add(mult(x, 3), cos(y)))";
    let a = stdout(&vecgp(&["eval", expr, "--engine", "vectorized"]));
    let b = stdout(&vecgp(&["eval", expr, "--engine", "iterative"]));
    let rmse = |s: &str| s.lines().find(|l| l.starts_with("rmse")).unwrap().to_string();
    assert_eq!(rmse(&a), rmse(&b));
}

#[test]
fn resuming_a_finished_run_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let o = vecgp(&["run", "--seed", "4", "--gens", "2", "--pop", "10", "--out", runs.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let folder = only_run_folder(&runs);
    let before = std::fs::read(folder.join("evolution.csv")).unwrap();
    let o = vecgp(&["resume", folder.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("already finished"));
    assert_eq!(std::fs::read(folder.join("evolution.csv")).unwrap(), before);

    // raising the limit continues where it stopped
    let o = vecgp(&["resume", folder.to_str().unwrap(), "--gens", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(folder.join("evolution.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5 * 10);
}

#[test]
fn missing_run_folder_is_a_usage_error() {
    let o = vecgp(&["resume", "/nonexistent/run_folder"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(vecgp(&["run", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(vecgp(&["eval", "frobnicate(x)"]).status.code(), Some(2));
}

#[test]
fn check_reports_offending_lines() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("pop.txt");
    std::fs::write(&file, "add(x, y)\nsin(x\nmult(x, 0.5)\n").unwrap();
    let o = vecgp(&["check", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("line 1: ok"));
    assert!(out.contains("line 2: error"));
    assert!(out.contains("line 3: ok"));
}

#[test]
fn render_writes_a_png_of_the_requested_size() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("r.png");
    let o = vecgp(&["render", "x", "--domain", "40x30", "--out", png.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let img = image::open(&png).unwrap().to_luma8();
    assert_eq!(img.dimensions(), (40, 30));
    assert_eq!(img.get_pixel(0, 0)[0], 0);
    assert_eq!(img.get_pixel(39, 0)[0], 255);
}
