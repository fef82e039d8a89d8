use std::path::PathBuf;
use std::process::{Command, Output};

fn vvca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vvca")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scratch_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("vvca-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn verify_quick_passes() {
    let o = vvca(&["verify", "--scale", "quick"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("oracle_equivalence"));
}

#[test]
fn defaults_print_a_loadable_config() {
    let o = vvca(&["defaults", "--setting", "A", "--n", "5", "--m", "10"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("lr = 0.0003") && text.contains("sigma = 0.001"));

    let dir = scratch_dir("defaults");
    let path = dir.join("a.toml");
    std::fs::write(&path, &text).unwrap();
    let o = vvca(&[
        "evaluate",
        "--config",
        path.to_str().unwrap(),
        "--method",
        "vcg",
        "--set",
        "eval_size=64",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn configuration_errors_exit_with_two() {
    let o = vvca(&[
        "evaluate",
        "--set",
        "setting=A",
        "--set",
        "n=2",
        "--set",
        "m=2",
        "--set",
        "bogus=1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = vvca(&["evaluate", "--set", "setting=Q", "--set", "n=2", "--set", "m=2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = vvca(&[
        "evaluate",
        "--set",
        "setting=D",
        "--set",
        "n=2",
        "--set",
        "m=2",
        "--method",
        "item_myerson",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = vvca(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_vcg_reports_revenue() {
    let o = vvca(&[
        "evaluate",
        "--set",
        "setting=A",
        "--set",
        "n=2",
        "--set",
        "m=2",
        "--method",
        "vcg",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mean: f64 = text
        .split("mean ")
        .nth(1)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((mean - 2.0 / 3.0).abs() < 0.01, "{text}");
}

#[test]
fn train_writes_runs_that_evaluate_back() {
    let dir = scratch_dir("train");
    let out = dir.to_str().unwrap();
    let args = [
        "train",
        "--set",
        "setting=A",
        "--set",
        "n=2",
        "--set",
        "m=2",
        "--set",
        "iterations=20",
        "--set",
        "batch_size=64",
        "--set",
        "eval_size=512",
        "--set",
        "runs=2",
        "--set",
        "name=t",
    ];
    let o = vvca(&[&args[..], &["--set", &format!("output_dir={out}")]].concat());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for run in ["run_0", "run_1"] {
        for file in ["params.json", "curve.csv", "report.csv"] {
            assert!(dir.join("t").join(run).join(file).exists(), "{run}/{file}");
        }
    }
    assert!(dir.join("t/summary.json").exists());

    let params = dir.join("t/run_0/params.json");
    let o = vvca(&[
        "evaluate",
        "--set",
        "setting=A",
        "--set",
        "n=2",
        "--set",
        "m=2",
        "--set",
        "eval_size=512",
        "--params",
        params.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("mean"));
}

#[test]
fn sweep_and_grid_write_csv() {
    let dir = scratch_dir("csv");
    let sweep = dir.join("sweep.csv");
    let o = vvca(&[
        "sweep",
        "--set",
        "setting=A",
        "--set",
        "n=2",
        "--set",
        "m=2",
        "--points",
        "11",
        "--directions",
        "8",
        "--batch-size",
        "32",
        "--out",
        sweep.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&sweep).unwrap().lines().count(), 12);

    let grid = dir.join("grid.csv");
    let o = vvca(&[
        "grid",
        "--set",
        "setting=A",
        "--set",
        "n=2",
        "--set",
        "m=2",
        "--grid-n",
        "5",
        "--batch-size",
        "32",
        "--out",
        grid.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&grid).unwrap();
    assert!(text.starts_with("x,y,R,F,Z"));
    assert_eq!(text.lines().count(), 26);

    let o = vvca(&[
        "grid",
        "--set",
        "setting=A",
        "--set",
        "n=3",
        "--set",
        "m=2",
        "--out",
        grid.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
