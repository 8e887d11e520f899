use std::fs;
use std::process::{Command, Output};

fn celu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_celu")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const METRICS_HEADER: &str =
    "round,local_steps,bytes_sent,simulated_time_s,train_loss,eval_auc,rho_estimate,weights_zeroed_fraction";

#[test]
fn train_writes_metrics_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = celu(&[
        "train", "--data", "synth:600,5,4,3", "--batch-size", "32", "--max-rounds", "12", "--eval-every", "5",
        "--holdout", "0.2", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    let rounds: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rounds, ["0", "5", "10", "12"]);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 8));
}

#[test]
fn train_reads_csv_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let mut text = String::from("id,a_0,a_1,b_0,label\n");
    for i in 0..64 {
        let x = i as f64 / 64.0;
        text.push_str(&format!("{i},{x},{},{},{}\n", 1.0 - x, x * x, i % 2));
    }
    fs::write(&data, text).unwrap();
    let out = dir.path().join("run");
    let o = celu(&[
        "train", "--data", &format!("csv:{}", data.display()), "--batch-size", "16", "--max-rounds", "4",
        "--algo", "fedbcd", "--workset", "1", "--xi", "off", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("rounds 4 "));
}

#[test]
fn experiment_writes_runs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let config = dir.path().join("grid.conf");
    fs::write(
        &config,
        format!(
            "# small grid\ndata = synth:800,5,4,1\nbatch-size = 32\nmax_rounds = 40\neval_every = 10\n\
             algo = vanilla, celu\nlocal_steps = 3\nworkset = 1, 3\nxi = off\nseed = 0, 1\nout = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let o = celu(&["experiment", config.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert!(lines[0].starts_with("algorithm,local_steps,workset,xi,target,seeds"));
    assert_eq!(lines.len(), 1 + 3);
    assert_eq!(fs::read_dir(out.join("runs")).unwrap().count(), 3 * 2);
}

#[test]
fn probe_delta_prints_the_factor() {
    let o = celu(&[
        "probe", "delta", "--lipschitz", "1", "--sigma", "0.5", "--dim", "10", "--delta", "0.05",
        "--batch-size", "64", "--workset", "4", "--rho", "0.8",
    ]);
    assert!(o.status.success());
    let v: f64 = stdout(&o).trim().parse().unwrap();
    let expected = (2.0f64 * 10.0 / 0.05).ln() / 64.0 * (1.0 + 0.25) + 0.25 * 1.2;
    assert!((v - expected).abs() < 1e-12);
}

#[test]
fn probe_variance_reports_holding_trials() {
    let o = celu(&["probe", "variance", "--trials", "30"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("trials_holding 30/30"));
}

#[test]
fn probe_rho_prints_estimates_after_round_zero() {
    let o = celu(&[
        "probe", "rho", "--data", "synth:400,5,4", "--batch-size", "32", "--max-rounds", "6", "--eval-every", "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "round,rho_estimate");
    assert_eq!(lines[1], "0,");
    assert!(lines[2..].iter().all(|l| l.split(',').nth(1).unwrap().parse::<f64>().is_ok()));
}

#[test]
fn invalid_arguments_exit_nonzero() {
    let o = celu(&["train", "--algo", "fedbcd", "--workset", "5", "--max-rounds", "1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = celu(&["probe", "delta", "--lipschitz", "1", "--sigma", "1", "--dim", "1", "--delta", "0.1",
        "--batch-size", "8", "--workset", "2", "--rho", "1.5"]);
    assert!(!o.status.success());
}
