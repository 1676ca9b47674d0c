use std::fs;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_chainsync");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("run chainsync")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn validate_passes_and_writes_rows() {
    let out = run(&["--preset", "techB", "--executions", "20000", "validate"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = String::from_utf8(out.stdout.clone()).unwrap();
    assert!(csv.starts_with("n,m,analytic,empirical,visits\n"), "{csv}");
    assert!(stderr(&out).contains("max |empirical - analytic|"));
}

#[test]
fn tolerance_breach_exits_with_two() {
    let out = run(&["--executions", "5000", "--tolerance", "1e-6", "validate"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn config_errors_exit_with_one() {
    for args in [
        &["--set", "device.p_s=1.5", "kernel"][..],
        &["--set", "link.p_e_dl=1", "kernel"],
        &["--set", "blockchain.l_h=50000", "kernel"],
        &["--set", "no_such_key=3", "kernel"],
        &["--set", "missing-equals", "kernel"],
        &["sweep", "--param", "n_peers"],
        &["--config", "/nonexistent/chainsync.conf", "kernel"],
    ] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", stderr(&out));
        assert!(stderr(&out).starts_with("config error:"), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn degenerate_link_is_named() {
    let out = run(&["--set", "link.p_e_ul=1", "kernel"]);
    assert!(stderr(&out).contains("degenerate link"), "{}", stderr(&out));
}

#[test]
fn config_file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "# techB-like uplink\nlink.rate_ul_bps = 100kbps\ndevice.t_s = 600 s\ndevice.p_s = 0.5\n").unwrap();
    let out_path = dir.path().join("sweep.csv");
    let out = Command::new(BIN)
        .arg("--config")
        .arg(&conf)
        .args(["--set", "device.p_s=0.25", "--engine", "analytic", "--out"])
        .arg(&out_path)
        .args(["sweep", "--param", "device.t_s", "--values", "600"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    let csv = fs::read_to_string(&out_path).unwrap();
    assert!(csv.starts_with("param,value,analytic,simulated,sim_stderr\ndevice.t_s,600"), "{csv}");
}

#[test]
fn sweep_reports_trend_on_stderr() {
    let out = run(&["--engine", "analytic", "sweep", "--param", "blockchain.l_b"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("p_sync (analytic) along blockchain.l_b: non-increasing"), "{}", stderr(&out));
    assert_eq!(String::from_utf8(out.stdout.clone()).unwrap().lines().count(), 4);
}

#[test]
fn kernel_rows_sum_to_one() {
    let out = run(&["--set", "n_max=8", "kernel"]);
    let csv = String::from_utf8(out.stdout.clone()).unwrap();
    let mut sums = vec![0.0; 9];
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        sums[f[0].parse::<usize>().unwrap()] += f[2].parse::<f64>().unwrap();
    }
    assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-12), "{sums:?}");
}

#[test]
fn simulate_emits_one_row_per_execution() {
    let out = run(&["--executions", "250", "--seed", "3", "simulate"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(csv.lines().count(), 251);
    assert!(csv.starts_with("k,t_start,t_end,n_before,x_k,waking,matched,ul_bits,dl_bits\n"));
}

#[test]
fn seeds_change_simulated_output() {
    let a = run(&["--executions", "500", "--seed", "1", "simulate"]).stdout;
    let b = run(&["--executions", "500", "--seed", "2", "simulate"]).stdout;
    assert_ne!(a, b);
}
