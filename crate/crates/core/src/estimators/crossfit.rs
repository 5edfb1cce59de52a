//! K-fold cross-fitting: nuisances fitted on the complement of each fold are
//! evaluated on the fold, and the fold means are averaged.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::eif::{eoppg_contribution, nmdp_contribution, stack, SpecialVariant};
use super::{require, EstimatorConfig, GradientEstimate};
use crate::env::{Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::nuisance::{fit_nuisances, Corrupted, CorruptionSpec, FitConfig, NuisanceSet, Nuisances};
use crate::policy::{DifferentiablePolicy, Policy, TrajectoryTerms};
use crate::regression::FoldPartition;

/// Fit one nuisance set per fold, each on that fold's complement.
pub fn fit_folds(
    data: &Dataset,
    partition: &FoldPartition,
    target: &dyn DifferentiablePolicy,
    behavior: &dyn Policy,
    fit: &FitConfig,
) -> Result<Vec<NuisanceSet>> {
    if partition.len() != data.len() {
        return Err(Error::InvalidArgument(format!(
            "partition covers {} trajectories, dataset has {}",
            partition.len(),
            data.len()
        )));
    }
    (0..partition.folds())
        .map(|k| {
            let train = data.select(&partition.complement(k))?;
            fit_nuisances(&train, target, behavior, fit)
        })
        .collect()
}

/// Evaluate `eval` on each fold with that fold's nuisances.
///
/// The value is the average over folds of the within-fold means. Rows of
/// the contribution matrix are in data order and rescaled by
/// `n / (K |I_k|)`, so their plain mean is the same value.
pub fn evaluate_folds<N, F>(
    estimator: &str,
    data: &Dataset,
    partition: &FoldPartition,
    target: &dyn DifferentiablePolicy,
    behavior: &dyn Policy,
    nuisances: &[N],
    eval: F,
) -> Result<GradientEstimate>
where
    N: Nuisances,
    F: Fn(&Trajectory, &TrajectoryTerms, &dyn Nuisances, &mut [f64]) + Sync,
{
    let k_folds = partition.folds();
    if nuisances.len() != k_folds || partition.len() != data.len() {
        return Err(Error::InvalidArgument(format!(
            "{} nuisance sets for {k_folds} folds over {} of {} trajectories",
            nuisances.len(),
            partition.len(),
            data.len()
        )));
    }
    let d = target.num_params();
    let n = data.len();
    let sizes = partition.sizes();
    let rows: Vec<Vec<f64>> = data
        .trajectories()
        .par_iter()
        .enumerate()
        .map(|(i, tr)| {
            let k = partition.fold_of(i);
            let terms = TrajectoryTerms::new(target, behavior, tr);
            let mut out = vec![0.0; d];
            eval(tr, &terms, &nuisances[k], &mut out);
            out
        })
        .collect();
    let mut fold_sums = vec![vec![0.0; d]; k_folds];
    for (i, row) in rows.iter().enumerate() {
        let k = partition.fold_of(i);
        for c in 0..d {
            fold_sums[k][c] += row[c];
        }
    }
    let value = DVector::from_fn(d, |c, _| {
        (0..k_folds).map(|k| fold_sums[k][c] / sizes[k] as f64).sum::<f64>() / k_folds as f64
    });
    let mut contributions: DMatrix<f64> = stack(rows, d);
    for i in 0..n {
        let w = n as f64 / (k_folds * sizes[partition.fold_of(i)]) as f64;
        contributions.row_mut(i).scale_mut(w);
    }
    Ok(GradientEstimate {
        estimator: estimator.to_string(),
        value,
        contributions,
    })
}

fn check_size(n: usize, folds: usize) -> Result<()> {
    if folds < 2 || n < 2 * folds {
        return Err(Error::TooFewSamples { n, folds });
    }
    Ok(())
}

/// Cross-fitted EOPPG on a given partition, optionally with the nuisances
/// corrupted by `corruption`.
pub fn grad_eoppg_with_partition(
    data: &Dataset,
    partition: &FoldPartition,
    target: &dyn DifferentiablePolicy,
    behavior: &dyn Policy,
    fit: &FitConfig,
    corruption: Option<&CorruptionSpec>,
) -> Result<GradientEstimate> {
    let sets = fit_folds(data, partition, target, behavior, fit)?;
    match corruption {
        Some(spec) if !spec.is_identity() => {
            let wrapped: Vec<_> = sets
                .iter()
                .enumerate()
                .map(|(k, set)| Corrupted::new(set, spec, k, target, fit.rule()))
                .collect();
            evaluate_folds("eoppg", data, partition, target, behavior, &wrapped, |tr, _, nu, out| {
                eoppg_contribution(tr, nu, out)
            })
        }
        _ => evaluate_folds("eoppg", data, partition, target, behavior, &sets, |tr, _, nu, out| {
            eoppg_contribution(tr, nu, out)
        }),
    }
}

/// Cross-fitted EOPPG with a random balanced partition drawn from `seed`.
pub fn grad_eoppg(
    data: &Dataset,
    target: &dyn DifferentiablePolicy,
    behavior: &dyn Policy,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<GradientEstimate> {
    check_size(data.len(), config.folds)?;
    let partition = FoldPartition::random(data.len(), config.folds, seed)?;
    grad_eoppg_with_partition(data, &partition, target, behavior, &config.fit, None)
}

pub fn grad_eif_nmdp_crossfit(
    data: &Dataset,
    target: &dyn DifferentiablePolicy,
    behavior: &dyn Policy,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<GradientEstimate> {
    check_size(data.len(), config.folds)?;
    let partition = FoldPartition::random(data.len(), config.folds, seed)?;
    let sets = fit_folds(data, &partition, target, behavior, &config.fit)?;
    evaluate_folds("eif_nmdp", data, &partition, target, behavior, &sets, |tr, tt, nu, out| {
        nmdp_contribution(tr, tt, nu, out)
    })
}

pub fn grad_special_crossfit(
    data: &Dataset,
    variant: SpecialVariant,
    target: &dyn DifferentiablePolicy,
    behavior: &dyn Policy,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<GradientEstimate> {
    check_size(data.len(), config.folds)?;
    let partition = FoldPartition::random(data.len(), config.folds, seed)?;
    let sets = fit_folds(data, &partition, target, behavior, &config.fit)?;
    for set in &sets {
        require(set, variant.required())?;
    }
    let rule = config.fit.rule();
    evaluate_folds(variant.name(), data, &partition, target, behavior, &sets, |tr, _, nu, out| {
        variant.contribution(tr, nu, target, &rule, out)
    })
}

