use std::path::Path;
use std::process::{Command, Output};

fn eoppg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eoppg")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL_MSE: &str = r#"
sizes = [40, 80]
replications = 3
estimators = ["stepwise_is", "pg", "eoppg"]
[benchmark]
horizon = 5
"#;

#[test]
fn mse_writes_csv_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "mse.toml", SMALL_MSE);
    let out = dir.path().join("mse.csv");
    let res = eoppg(&["mse", "--config", &config, "--out", out.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("experiment,estimator,corruption,n,replication,seed,theta"));
    assert_eq!(lines.count(), 2 * 3 * 3);
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "mse.toml", SMALL_MSE);
    let run = |workers: &str| {
        let res = eoppg(&["mse", "--config", &config, "--workers", workers]);
        assert_eq!(res.status.code(), Some(0));
        res.stdout
    };
    let one = run("1");
    assert!(!one.is_empty());
    assert_eq!(one, run("4"));
    assert_eq!(one, run("0"));
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "a.toml", "replications = 2\nno_such_key = 1\n");
    assert_eq!(eoppg(&["mse", "--config", &unknown]).status.code(), Some(1));
    let zero = write_config(dir.path(), "b.toml", "replications = 0\n");
    assert_eq!(eoppg(&["mse", "--config", &zero]).status.code(), Some(1));
    let wrong_kind = write_config(dir.path(), "c.toml", "kind = \"regret\"\n");
    assert_eq!(eoppg(&["mse", "--config", &wrong_kind]).status.code(), Some(1));
    let missing = dir.path().join("missing.toml");
    assert_eq!(eoppg(&["mse", "--config", missing.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn estimator_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // two-fold cross-fitting needs at least four trajectories
    let config = write_config(
        dir.path(),
        "tiny.toml",
        "sizes = [3]\nreplications = 2\nestimators = [\"eoppg\"]\nmax_failure_fraction = 0.0\n[benchmark]\nhorizon = 3\n",
    );
    let res = eoppg(&["mse", "--config", &config]);
    assert_eq!(res.status.code(), Some(2));
    let csv = String::from_utf8(res.stdout).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().skip(1).all(|l| !l.ends_with(',')));
}

#[test]
fn oracle_prints_exact_values() {
    let res = eoppg(&["oracle", "--theta", "1"]);
    assert_eq!(res.status.code(), Some(0));
    let text = String::from_utf8(res.stdout).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(row[0], 1.0);
    assert!((row[1] + 1.96).abs() < 1e-12);
    assert!(row[2].abs() < 1e-12);
    assert!(row[3].abs() < 1e-12);
    assert_eq!(eoppg(&["oracle", "--horizon", "0"]).status.code(), Some(1));
}

#[test]
fn ascend_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "asc.toml", "[benchmark]\nhorizon = 5\n[ascent]\niterations = 4\n");
    let res = eoppg(&["ascend", "--config", &config, "--n", "60"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let text = String::from_utf8(res.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 + 1);
}
