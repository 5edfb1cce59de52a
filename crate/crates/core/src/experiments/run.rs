use rayon::prelude::*;
use std::time::Instant;

use super::{squared_error, ExperimentConfig, ExperimentKind, ResultRow};
use crate::env::{sample_dataset, Dataset, LqBenchmark};
use crate::error::{Error, Result};
use crate::estimators::{eoppg_contribution, estimate, evaluate_folds, fit_folds, EstimatorKind};
use crate::nuisance::{Corrupted, CorruptionSpec};
use crate::optimizer::{ascend, ascend_with};
use crate::regression::FoldPartition;
use crate::rng::{derive_seed, label_key};

/// Seed of the dataset shared by every arm of replication `r` at size `n`.
pub fn data_seed(master: u64, n: usize, r: usize) -> u64 {
    derive_seed(master, &[n as u64, r as u64])
}

/// Seed handed to an estimator for its internal randomness (fold split).
fn arm_seed(data_seed: u64, arm: &str) -> u64 {
    derive_seed(data_seed, &[label_key(arm)])
}

struct Item {
    n: usize,
    r: usize,
    seed: u64,
}

impl Item {
    fn row(&self, config: &ExperimentConfig, estimator: &str, corruption: &str) -> ResultRow {
        ResultRow {
            experiment: config.kind,
            estimator: estimator.to_string(),
            corruption: corruption.to_string(),
            n: self.n,
            replication: self.r,
            seed: self.seed,
            theta: config.theta,
            estimate: Vec::new(),
            squared_error: None,
            regret: None,
            runtime_ms: None,
            error: None,
        }
    }
}

fn items(config: &ExperimentConfig) -> Vec<Item> {
    config
        .sizes
        .iter()
        .flat_map(|&n| {
            (0..config.replications).map(move |r| Item {
                n,
                r,
                seed: data_seed(config.seed, n, r),
            })
        })
        .collect()
}

/// Map items on a pool of `config.workers` threads; output keeps item order.
fn execute<F>(config: &ExperimentConfig, f: F) -> Result<Vec<ResultRow>>
where
    F: Fn(&Item) -> Vec<ResultRow> + Sync + Send,
{
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let work = items(config);
    let nested: Vec<Vec<ResultRow>> = pool.install(|| work.par_iter().map(&f).collect());
    Ok(nested.into_iter().flatten().collect())
}

fn timed(config: &ExperimentConfig, start: Instant) -> Option<f64> {
    config.record_timing.then(|| start.elapsed().as_secs_f64() * 1e3)
}

fn dataset(config: &ExperimentConfig, item: &Item) -> Result<Dataset> {
    let bench = config.benchmark;
    sample_dataset(&bench, &bench.behavior_policy(), item.n, item.seed)
}

/// One row per `(n, replication, estimator)`: the gradient estimate at
/// `config.theta` and its squared error against the exact gradient.
pub fn run_mse(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let bench = config.benchmark;
    let truth = [bench.analytic_gradient(config.theta)];
    let target = bench.target_policy(config.theta);
    let behavior = bench.behavior_policy();
    execute(config, |item| {
        let data = dataset(config, item);
        config
            .estimators
            .iter()
            .map(|&kind| {
                let mut row = item.row(config, kind.name(), "none");
                let start = Instant::now();
                let result = data.as_ref().map_err(Clone::clone).and_then(|data| {
                    estimate(kind, data, &target, &behavior, &config.estimator, arm_seed(item.seed, kind.name()))
                });
                row.runtime_ms = timed(config, start);
                match result {
                    Ok(est) => {
                        row.estimate = est.value.iter().copied().collect();
                        row.squared_error = Some(squared_error(&row.estimate, &truth));
                    }
                    Err(e) => row.error = Some(e.to_string()),
                }
                row
            })
            .collect()
    })
}

/// Cross-fitted EOPPG under each corruption variant. Nuisances are fitted
/// once per replication on the same fold split the mse experiment uses, so
/// the uncorrupted variant reproduces its EOPPG rows.
pub fn run_robustness(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let bench = config.benchmark;
    let truth = [bench.analytic_gradient(config.theta)];
    let target = bench.target_policy(config.theta);
    let behavior = bench.behavior_policy();
    let name = EstimatorKind::Eoppg.name();
    let specs: Vec<CorruptionSpec> = config
        .corruptions
        .iter()
        .map(|families| CorruptionSpec::new(families.clone(), config.corruption_scale, 0))
        .collect();
    execute(config, |item| {
        let start = Instant::now();
        let fitted = dataset(config, item).and_then(|data| {
            let partition = FoldPartition::random(data.len(), config.estimator.folds, arm_seed(item.seed, name))?;
            if data.len() < 2 * config.estimator.folds {
                return Err(Error::TooFewSamples {
                    n: data.len(),
                    folds: config.estimator.folds,
                });
            }
            let sets = fit_folds(&data, &partition, &target, &behavior, &config.estimator.fit)?;
            Ok((data, partition, sets))
        });
        let fit_ms = timed(config, start);
        specs
            .iter()
            .map(|spec| {
                let mut row = item.row(config, name, &spec.tag());
                let start = Instant::now();
                let result = fitted.as_ref().map_err(Clone::clone).and_then(|(data, partition, sets)| {
                    let eval = |tr: &_, _: &_, nu: &dyn crate::nuisance::Nuisances, out: &mut [f64]| {
                        eoppg_contribution(tr, nu, out)
                    };
                    if spec.is_identity() {
                        evaluate_folds(name, data, partition, &target, &behavior, sets, eval)
                    } else {
                        let seeded = CorruptionSpec::new(
                            spec.families.clone(),
                            spec.scale,
                            arm_seed(item.seed, "corruption"),
                        );
                        let wrapped: Vec<_> = sets
                            .iter()
                            .enumerate()
                            .map(|(k, s)| Corrupted::new(s, &seeded, k, &target, config.estimator.fit.rule()))
                            .collect();
                        evaluate_folds(name, data, partition, &target, &behavior, &wrapped, eval)
                    }
                });
                row.runtime_ms = fit_ms.zip(timed(config, start)).map(|(a, b)| a + b);
                match result {
                    Ok(est) => {
                        row.estimate = est.value.iter().copied().collect();
                        row.squared_error = Some(squared_error(&row.estimate, &truth));
                    }
                    Err(e) => row.error = Some(e.to_string()),
                }
                row
            })
            .collect()
    })
}

/// Projected ascent from `ascent.theta1` with each estimator on one reused
/// dataset; rows report the final iterate and its regret. The optional
/// analytic arm uses the exact gradient and is independent of the data.
pub fn run_regret(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let bench: LqBenchmark = config.benchmark;
    let behavior = bench.behavior_policy();
    let template = bench.target_policy(config.ascent.theta1);
    execute(config, |item| {
        let data = dataset(config, item);
        let mut rows = Vec::new();
        if config.analytic_arm {
            let mut row = item.row(config, "analytic", "none");
            let start = Instant::now();
            let result = config
                .ascent
                .to_config(EstimatorKind::Eoppg, &config.estimator)
                .and_then(|c| ascend_with(&c, |th, _| Ok(vec![bench.analytic_gradient(th[0])])));
            row.runtime_ms = timed(config, start);
            fill_regret(&mut row, &bench, result);
            rows.push(row);
        }
        for &kind in &config.estimators {
            let mut row = item.row(config, kind.name(), "none");
            let start = Instant::now();
            let result = data.as_ref().map_err(Clone::clone).and_then(|data| {
                let c = config.ascent.to_config(kind, &config.estimator)?;
                ascend(data, &template, &behavior, &c, arm_seed(item.seed, kind.name()))
            });
            row.runtime_ms = timed(config, start);
            fill_regret(&mut row, &bench, result);
            rows.push(row);
        }
        rows
    })
}

fn fill_regret(row: &mut ResultRow, bench: &LqBenchmark, result: Result<crate::optimizer::AscentTrace>) {
    match result {
        Ok(trace) => {
            row.theta = trace.final_theta[0];
            row.regret = Some(bench.regret(row.theta));
        }
        Err(e) => row.error = Some(e.to_string()),
    }
}

pub fn run(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    match config.kind {
        ExperimentKind::Mse => run_mse(config),
        ExperimentKind::Robustness => run_robustness(config),
        ExperimentKind::Regret => run_regret(config),
    }
}
