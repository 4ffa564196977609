//! End-to-end tests of the command-line surface against the built binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vradmm"))
}

fn write_dataset(path: &Path, n: usize, seed: u64) {
    let ds = vradmm::io::synth_a9a_like(n, seed);
    let mut buf = Vec::new();
    vradmm::io::serialize_libsvm(&ds, &mut buf).unwrap();
    fs::write(path, buf).unwrap();
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn solve_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synthetic.libsvm");
    write_dataset(&data, 400, 11);
    let run = |out: &Path| {
        let status = bin()
            .args([
                "solve",
                "--data",
                data.to_str().unwrap(),
                "--algo",
                "saga",
                "--iters",
                "1000",
                "--seed",
                "7",
                "--out",
                out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
    };
    let out1 = dir.path().join("t1.csv");
    let out2 = dir.path().join("t2.csv");
    run(&out1);
    run(&out2);
    let b1 = fs::read(&out1).unwrap();
    let b2 = fs::read(&out2).unwrap();
    assert_eq!(b1, b2, "traces differ across executions");
    let text = String::from_utf8(b1).unwrap();
    assert!(text.starts_with(
        "t,epoch,effective_passes,objective,r_grad,r_subgrad,r_feas,theta,lyapunov,realized_variance,wall_ms\n"
    ));
    assert_eq!(text.lines().count(), 1002); // header + rows 0..=1000
}

#[test]
fn solve_with_split_adds_test_loss_column() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synthetic.libsvm");
    write_dataset(&data, 200, 3);
    let out = dir.path().join("t.csv");
    let result = bin()
        .args([
            "solve",
            "--data",
            data.to_str().unwrap(),
            "--algo",
            "svrg",
            "--m",
            "100",
            "--iters",
            "200",
            "--seed",
            "1",
            "--split",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let text = fs::read_to_string(&out).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.ends_with(",test_loss"));
    let last = text.lines().last().unwrap();
    let test_loss: f64 = last.rsplit(',').next().unwrap().parse().unwrap();
    assert!(test_loss > 0.0 && test_loss < 1.0);
}

#[test]
fn check_tiny_passes_quickly() {
    let start = Instant::now();
    let out = bin().args(["check", "--tiny"]).output().unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("PASS"), "{text}");
    assert!(!text.contains("FAIL"), "{text}");
    assert!(elapsed < 60.0, "check --tiny took {elapsed:.1}s");
}

#[test]
fn params_reports_sigma_at_least_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synthetic.libsvm");
    write_dataset(&data, 300, 5);
    let out = bin()
        .args(["params", "--data", data.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    let sigma_line = text
        .lines()
        .find(|l| l.starts_with("sigma_A"))
        .expect("sigma_A line");
    let value: f64 = sigma_line
        .split('=')
        .nth(1)
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(value >= 1.0 - 1e-9, "sigma_A = {value}");
    assert!(text.contains("rho_floor"), "{text}");
}

#[test]
fn bench_writes_combined_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synthetic.libsvm");
    write_dataset(&data, 200, 9);
    let out = dir.path().join("bench.csv");
    let result = bin()
        .args([
            "bench",
            "--data",
            data.to_str().unwrap(),
            "--algos",
            "saga,svrg",
            "--m",
            "100",
            "--iters",
            "300",
            "--seed",
            "2",
            "--record-every",
            "50",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("algorithm,t,epoch,"));
    let algos: std::collections::BTreeSet<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        algos.into_iter().collect::<Vec<_>>(),
        vec!["saga-admm", "svrg-admm"]
    );
}

#[test]
fn malformed_data_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.libsvm");
    fs::write(&data, "+1 1:0.5\n+1 3:2 2:1\n").unwrap();
    let out = bin()
        .args([
            "solve",
            "--data",
            data.to_str().unwrap(),
            "--algo",
            "saga",
            "--iters",
            "5",
            "--seed",
            "1",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn missing_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synthetic.libsvm");
    write_dataset(&data, 50, 1);
    let out = bin()
        .args(["solve", "--data", data.to_str().unwrap(), "--algo", "saga"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seed"), "{err}");
}

#[test]
fn config_file_with_unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"algorithm":"saga","seed":1,"bogus_knob":3}"#).unwrap();
    let out = bin()
        .args(["solve", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus_knob"), "{err}");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synthetic.libsvm");
    write_dataset(&data, 100, 2);
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"algorithm":"saga","seed":5,"iterations":40,"data_path":"{}"}}"#,
            data.display()
        ),
    )
    .unwrap();
    let out_path = dir.path().join("t.csv");
    let out = bin()
        .args([
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--iters",
            "20",
            "--out",
            out_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&out_path).unwrap();
    // flag value 20 wins over the file's 40: rows 0..=20
    assert_eq!(text.lines().count(), 22);
}
