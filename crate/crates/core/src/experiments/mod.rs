//! Seeded replication harness on the LQ benchmark with CSV output.
//!
//! Work items are `(n, replication)` pairs. Each item draws one dataset that
//! every arm of the item shares, so comparisons between estimators are
//! paired. Rows come back in a fixed order (by `n`, then replication, then
//! arm) whatever the number of workers.

mod config;
mod run;

pub use config::{AscentSettings, ExperimentConfig, ExperimentKind, Preset};
pub use run::{data_seed, run, run_mse, run_regret, run_robustness};

use std::io::Write;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: ExperimentKind,
    pub estimator: String,
    /// `none` or the corrupted families joined by `+`.
    pub corruption: String,
    pub n: usize,
    pub replication: usize,
    /// Seed of the shared dataset.
    pub seed: u64,
    /// Evaluation point, or the final iterate for regret rows.
    pub theta: f64,
    pub estimate: Vec<f64>,
    pub squared_error: Option<f64>,
    pub regret: Option<f64>,
    pub runtime_ms: Option<f64>,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn is_failure(&self) -> bool {
        self.error.is_some()
    }
}

pub fn squared_error(estimate: &[f64], truth: &[f64]) -> f64 {
    estimate.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum()
}

fn num(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

/// Header plus one line per row. Floats use the shortest representation
/// that round-trips, so equal rows give identical bytes.
pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let dim = rows.iter().map(|r| r.estimate.len()).max().unwrap_or(0).max(1);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["experiment", "estimator", "corruption", "n", "replication", "seed", "theta"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..dim).map(|k| format!("estimate_{k}")));
    header.extend(["squared_error", "regret", "runtime_ms", "error"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.experiment.name().to_string(),
            r.estimator.clone(),
            r.corruption.clone(),
            r.n.to_string(),
            r.replication.to_string(),
            r.seed.to_string(),
            format!("{:e}", r.theta),
        ];
        rec.extend((0..dim).map(|k| num(r.estimate.get(k).copied())));
        rec.push(num(r.squared_error));
        rec.push(num(r.regret));
        rec.push(num(r.runtime_ms));
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn failure_fraction(rows: &[ResultRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().filter(|r| r.is_failure()).count() as f64 / rows.len() as f64
}

/// Aggregate over replications for one `(estimator, corruption, n)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub experiment: ExperimentKind,
    pub estimator: String,
    pub corruption: String,
    pub n: usize,
    /// Successful rows.
    pub count: usize,
    pub failures: usize,
    pub mse: Option<f64>,
    /// Standard error of `mse` across replications.
    pub mse_se: Option<f64>,
    /// Mean of `estimate − truth`, per component.
    pub bias: Vec<f64>,
    pub bias_se: Vec<f64>,
    pub median_regret: Option<f64>,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Cells in order of first appearance. `truth` is the gradient the
/// estimates are compared against.
pub fn summarize(rows: &[ResultRow], truth: &[f64]) -> Vec<Summary> {
    let mut keys: Vec<(&str, &str, usize)> = Vec::new();
    for r in rows {
        let key = (r.estimator.as_str(), r.corruption.as_str(), r.n);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(estimator, corruption, n)| {
            let cell: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.estimator == estimator && r.corruption == corruption && r.n == n)
                .collect();
            let ok: Vec<&ResultRow> = cell.iter().copied().filter(|r| !r.is_failure()).collect();
            let se: Vec<f64> = ok.iter().filter_map(|r| r.squared_error).collect();
            let (mse, mse_se) = if se.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_se(&se);
                (Some(m), Some(s))
            };
            let dim = ok.iter().map(|r| r.estimate.len()).max().unwrap_or(0);
            let (bias, bias_se) = (0..dim)
                .map(|k| {
                    let errs: Vec<f64> = ok
                        .iter()
                        .filter(|r| r.estimate.len() > k)
                        .map(|r| r.estimate[k] - truth.get(k).copied().unwrap_or(0.0))
                        .collect();
                    mean_se(&errs)
                })
                .unzip();
            let regrets: Vec<f64> = ok.iter().filter_map(|r| r.regret).collect();
            Summary {
                experiment: cell[0].experiment,
                estimator: estimator.to_string(),
                corruption: corruption.to_string(),
                n,
                count: ok.len(),
                failures: cell.len() - ok.len(),
                mse,
                mse_se,
                bias,
                bias_se,
                median_regret: (!regrets.is_empty()).then(|| median(&regrets)),
            }
        })
        .collect()
}

/// Human-readable table of summaries.
pub fn write_summary<W: Write>(summaries: &[Summary], mut out: W) -> Result<()> {
    writeln!(out, "{:<12} {:<14} {:>6} {:>5} {:>12} {:>12} {:>12}", "estimator", "corruption", "n", "ok", "mse", "bias", "med_regret")?;
    let f = |x: Option<f64>| x.map(|v| format!("{v:.4e}")).unwrap_or_else(|| "-".into());
    for s in summaries {
        writeln!(
            out,
            "{:<12} {:<14} {:>6} {:>5} {:>12} {:>12} {:>12}",
            s.estimator,
            s.corruption,
            s.n,
            s.count,
            f(s.mse),
            f(s.bias.first().copied()),
            f(s.median_regret)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(estimator: &str, n: usize, est: f64) -> ResultRow {
        ResultRow {
            experiment: ExperimentKind::Mse,
            estimator: estimator.into(),
            corruption: "none".into(),
            n,
            replication: 0,
            seed: 1,
            theta: 1.0,
            estimate: vec![est],
            squared_error: Some(est * est),
            regret: None,
            runtime_ms: None,
            error: None,
        }
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn summary_by_hand() {
        let mut rows = vec![row("a", 10, 1.0), row("a", 10, -3.0), row("b", 10, 2.0)];
        let mut failed = row("b", 10, 0.0);
        failed.error = Some("boom".into());
        failed.estimate.clear();
        failed.squared_error = None;
        rows.push(failed);
        let s = summarize(&rows, &[0.0]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].mse, Some(5.0));
        assert_eq!(s[0].bias, vec![-1.0]);
        assert!((s[0].bias_se[0] - 2.0).abs() < 1e-15);
        assert_eq!((s[1].count, s[1].failures), (1, 1));
        assert_eq!(failure_fraction(&rows), 0.25);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&[row("eoppg", 5, 0.5)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "experiment,estimator,corruption,n,replication,seed,theta,estimate_0,squared_error,regret,runtime_ms,error"
        );
        assert_eq!(lines[1], "mse,eoppg,none,5,0,1,1e0,5e-1,2.5e-1,,,");
    }
}
