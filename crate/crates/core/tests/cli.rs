use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[experiment]
kind = "uniqueness_vs_distance"
trials = 30
seed = 7

[topology]
antennas = ["2x2"]
d_rq_grid = [15, 60]
"#;

fn powergame(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_powergame")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let cfg = cfg.to_str().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("out{threads}"));
        let o = powergame(&["run", cfg, "--seed", "9", "--trials", "25", "--threads", threads, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(fs::read(out.join("results.csv")).unwrap());
        assert!(out.join("trials.csv").exists());
        let meta = fs::read_to_string(out.join("meta.txt")).unwrap();
        assert!(meta.contains("seed = 9") && meta.contains("trials = 25") && meta.contains(env!("CARGO_PKG_VERSION")));
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert!(text.starts_with("d_rq,config,n,p_row,p_col,p_rho,p_converged"));
}

#[test]
fn check_accepts_shipped_configs() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        let o = powergame(&["check", path.to_str().unwrap()]);
        assert!(o.status.success(), "{}: {}", path.display(), stderr(&o));
        seen += 1;
    }
    assert!(seen >= 5);
}

#[test]
fn config_errors_exit_2_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[experiment]\nkind = \"sumrate_vs_power\"\n\n[power]\nbudget_db = 3\n");
    let o = powergame(&["run", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4:") && stderr(&o).contains("power.grid_db"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "[experiment]\ntrials = 3\ncolour = 1\n");
    let o = powergame(&["check", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3:"), "{}", stderr(&o));

    let o = powergame(&["run", cfg.to_str().unwrap(), "--bogus"]);
    assert_eq!(o.status.code(), Some(2));

    let o = powergame(&["check", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = powergame(&["run", cfg.to_str().unwrap(), "--trials", "2", "--out", blocker.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn trace_writes_power_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[experiment]\nkind = \"convergence_trace\"\nseed = 3\nalgorithms = [\"IWFA\", \"RJ\"]\n[topology]\nd_qq = 1\nd_rq = 2\n",
    );
    let out = dir.path().join("t");
    let o = powergame(&["trace", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(results.starts_with("iter,algorithm,sumrate,residual,verdict"));
    for alg in ["IWFA", "RJ"] {
        let powers = fs::read_to_string(out.join(format!("powers_{alg}.csv"))).unwrap();
        assert!(powers.lines().count() > 2);
    }
}
