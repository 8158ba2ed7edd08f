use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spinn::csv_io::Table;
use spinn::evaluation::ErrorReport;
use spinn::levy_paths::{NoiseKind, PathSample};
use spinn::network::{checkpoint_precision, read_checkpoint, Precision};
use spinn::reference::Trajectory;

const SMALL: &str = r#"
seed = 5

[problem]
drift = "5*(0.4-x1)"
lipschitz = 5.0
sigma = 0.61
x0 = -0.3

[mesh]
n = 16

[training]
epochs = 30
checkpoint_every = 10

[evaluation]
paths = 4
reference_steps = 1024
dump_paths = 2

[simulate]
paths = 2
"#;

fn spinn(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinn"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--set")
        .arg(format!("output.dir={}", out.display()))
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .unwrap()
}

fn setup(text: &str) -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, text).unwrap();
    let out = dir.path().join("out");
    (dir, config, out)
}

fn stderr_line(o: &Output) -> String {
    let s = String::from_utf8_lossy(&o.stderr).to_string();
    assert_eq!(s.trim_end().lines().count(), 1, "expected one line, got {s:?}");
    s.trim_end().to_string()
}

#[test]
fn simulate_paths_on_four_intervals() {
    let (_d, config, out) = setup(SMALL);
    let o = spinn(&["simulate-paths", "--set", "mesh.n=4", "--set", "simulate.paths=1"], &config, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files: Vec<_> = std::fs::read_dir(&out).unwrap().collect();
    assert_eq!(files.len(), 1);
    let table = Table::read(&out.join("path_0000.csv")).unwrap();
    assert_eq!(table.rows.len(), 5);
    assert_eq!(table.floats("l_1").unwrap()[0], 0.0);
    assert!(table.comments.contains(&"seed=5".to_string()));
    let path = PathSample::read_csv(&out.join("path_0000.csv"), NoiseKind::wiener(1)).unwrap();
    assert!(path.is_valid());
}

#[test]
fn train_then_evaluate_end_to_end() {
    let (_d, config, out) = setup(SMALL);
    let o = spinn(&["train"], &config, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let loss = Table::read(&out.join("loss.csv")).unwrap();
    assert_eq!(loss.header, ["epoch", "loss", "eta"]);
    assert_eq!(loss.rows.len(), 30);
    assert!(loss.comments.contains(&"seed=5".to_string()));
    assert!(loss.floats("loss").unwrap().iter().all(|l| l.is_finite()));
    for k in [10, 20] {
        assert!(out.join(format!("checkpoint_{k:06}.ckpt")).exists());
    }
    let ck = out.join("checkpoint.ckpt");
    assert_eq!(checkpoint_precision(&ck).unwrap(), Precision::Single);
    let loaded = read_checkpoint::<f32>(&ck).unwrap();
    assert_eq!(loaded.meta["seed"], "5");
    assert_eq!(loaded.head.d0, vec![3.5]);
    let resolved = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(resolved.contains("epochs = 30"));

    let o = spinn(&["evaluate"], &config, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let errors = Table::read(&out.join("errors.csv")).unwrap();
    assert_eq!(errors.header, ErrorReport::HEADER);
    assert_eq!(errors.rows.len(), 1);
    assert_eq!(errors.rows[0][0], "16");
    assert_eq!(errors.rows[0][1], "4");
    assert!(errors.floats("err_time").unwrap()[0] > 0.0);

    for i in 0..2 {
        let dump = Table::read(&out.join(format!("trajectory_{i:04}.csv"))).unwrap();
        assert_eq!(
            dump.header,
            ["t", "expected_derivative_1", "actual_derivative_1", "x_bar_1", "x_ref_1"]
        );
        assert_eq!(dump.rows.len(), 17);
        // at t = 0 both derivatives are f(0, x0, 0) and both trajectories start at x0
        let row = dump.rows[0].iter().map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>();
        assert_eq!(row, vec![0.0, 3.5, 3.5, -0.3, -0.3]);
    }
}

#[test]
fn evaluate_with_missing_checkpoint_names_the_path() {
    let (_d, config, out) = setup(SMALL);
    let o = spinn(&["evaluate", "--checkpoint", "/nonexistent/model.ckpt"], &config, &out);
    assert!(!o.status.success());
    let line = stderr_line(&o);
    assert!(line.starts_with("error[io]:"), "{line}");
    assert!(line.contains("/nonexistent/model.ckpt"), "{line}");
}

#[test]
fn config_errors_are_one_line_and_nonzero() {
    let (_d, config, out) = setup("seed = 1\n[problem\n");
    let o = spinn(&["train"], &config, &out);
    assert!(!o.status.success());
    let line = stderr_line(&o);
    assert!(line.starts_with("error[syntax]:") && line.contains("line 2"), "{line}");

    let (_d, config, out) = setup(SMALL);
    let o = spinn(
        &["train", "--set", "noise.kind=cauchy", "--set", "noise.scale=1.0", "--set", "training.loss=bridge"],
        &config,
        &out,
    );
    assert!(!o.status.success());
    let line = stderr_line(&o);
    assert!(line.contains("training.loss") && line.contains("noise.kind"), "{line}");

    let (_d, config, out) = setup(&format!("{SMALL}\nunexpected = 3\n"));
    let o = spinn(&["train"], &config, &out);
    assert!(!o.status.success());
    assert!(stderr_line(&o).contains("unexpected"));
}

#[test]
fn reference_and_bounds_audit_outputs_are_readable() {
    let (_d, config, out) = setup(SMALL);
    let o = spinn(&["reference"], &config, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let traj = Trajectory::read_csv(&out.join("reference_0001.csv")).unwrap();
    assert_eq!(traj.grid.n(), 16);
    assert_eq!(traj.states[[0, 0]], -0.3);

    let o = spinn(&["bounds-audit"], &config, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = Table::read(&out.join("bounds.csv")).unwrap();
    assert_eq!(table.rows.len(), 4);
    let passed = table.column("passed").unwrap();
    assert!(table.rows.iter().all(|r| r[passed] == "true"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("bounds hold on 4 of 4 paths"));
}

#[test]
fn loss_csv_depends_on_the_seed_only() {
    let (_d, config, out) = setup(SMALL);
    let run = |extra: &[&str], dir: &str| {
        let mut args = vec!["train"];
        args.extend_from_slice(extra);
        let target = out.join(dir);
        let o = spinn(&args, &config, &target);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(target.join("loss.csv")).unwrap()
    };
    let a = run(&[], "a");
    let b = run(&[], "b");
    let c = run(&["--set", "seed=6"], "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}
