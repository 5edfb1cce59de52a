//! Polynomial-sieve ridge regression and K-fold partitions.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::rng::substream;

type FeatureBuf = SmallVec<[f64; 32]>;

/// All monomials of total degree `≤ degree` in `arity` inputs, graded by
/// degree. With an intercept the first feature is the constant 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMap {
    arity: usize,
    degree: usize,
    intercept: bool,
    exponents: Vec<Vec<u8>>,
    // per feature and input, the index into the table of input powers
    lookup: Vec<usize>,
}

fn monomials_of_degree(arity: usize, degree: usize, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if prefix.len() + 1 == arity {
        prefix.push(degree as u8);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for e in (0..=degree).rev() {
        prefix.push(e as u8);
        monomials_of_degree(arity, degree - e, prefix, out);
        prefix.pop();
    }
}

impl FeatureMap {
    pub fn new(arity: usize, degree: usize, intercept: bool) -> Self {
        assert!(degree < u8::MAX as usize);
        let mut exponents = Vec::new();
        let start = if intercept { 0 } else { 1 };
        for d in start..=degree {
            if arity == 0 {
                if d == 0 {
                    exponents.push(Vec::new());
                }
                continue;
            }
            monomials_of_degree(arity, d, &mut Vec::with_capacity(arity), &mut exponents);
        }
        let stride = degree + 1;
        let lookup = exponents
            .iter()
            .flat_map(|exps| exps.iter().enumerate().map(move |(k, &e)| k * stride + e as usize))
            .collect();
        Self {
            arity,
            degree,
            intercept,
            exponents,
            lookup,
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u8>] {
        &self.exponents
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.arity);
        let mut powers: SmallVec<[f64; 32]> = SmallVec::new();
        for &xi in x {
            let mut p = 1.0;
            for _ in 0..=self.degree {
                powers.push(p);
                p *= xi;
            }
        }
        if self.arity == 0 {
            out.fill(1.0);
            return;
        }
        for (o, idx) in out.iter_mut().zip(self.lookup.chunks_exact(self.arity)) {
            *o = idx.iter().map(|&i| powers[i]).product();
        }
    }

    fn features(&self, x: &[f64]) -> FeatureBuf {
        let mut buf: FeatureBuf = SmallVec::from_elem(0.0, self.len());
        self.eval(x, &mut buf);
        buf
    }
}

/// Incrementally accumulated `XᵀX` and `XᵀY` for one regression.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    fmap: FeatureMap,
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    rows: usize,
}

impl NormalEquations {
    pub fn new(fmap: FeatureMap, outputs: usize) -> Self {
        let p = fmap.len();
        Self {
            fmap,
            gram: DMatrix::zeros(p, p),
            cross: DMatrix::zeros(p, outputs),
            rows: 0,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Add the observation `(x, y)`; `y` has one entry per output column.
    pub fn push(&mut self, x: &[f64], y: &[f64]) {
        let f = self.fmap.features(x);
        let p = f.len();
        for j in 0..p {
            let fj = f[j];
            for i in j..p {
                self.gram[(i, j)] += f[i] * fj;
            }
            for (k, &yk) in y.iter().enumerate() {
                self.cross[(j, k)] += fj * yk;
            }
        }
        self.rows += 1;
    }

    /// Solve `(XᵀX + λ P) β = XᵀY` where `P` is the identity with the
    /// intercept entry zeroed.
    pub fn solve(mut self, lambda: f64) -> Result<RidgeModel> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("ridge penalty must be ≥ 0, got {lambda}")));
        }
        if self.rows == 0 {
            return Err(Error::EmptyDataset);
        }
        let p = self.fmap.len();
        for j in 0..p {
            for i in 0..j {
                self.gram[(i, j)] = self.gram[(j, i)];
            }
        }
        let first_penalized = usize::from(self.fmap.intercept);
        for i in first_penalized..p {
            self.gram[(i, i)] += lambda;
        }
        let coefficients = solve_spd(self.gram, &self.cross, self.rows)?;
        Ok(RidgeModel {
            fmap: self.fmap,
            coefficients,
            lambda,
        })
    }
}

fn solve_spd(a: DMatrix<f64>, b: &DMatrix<f64>, rows: usize) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    let scale = a.diagonal().iter().fold(0.0f64, |m, &d| m.max(d));
    let rank_err = Error::RankDeficient { rows, cols: p };
    if p == 0 {
        return Ok(DMatrix::zeros(0, b.ncols()));
    }
    if scale <= 0.0 {
        return Err(rank_err);
    }
    let chol = a.cholesky().ok_or_else(|| rank_err.clone())?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, &d| m.min(d * d));
    if min_pivot <= 1e-13 * scale {
        return Err(rank_err);
    }
    Ok(chol.solve(b))
}

/// Ridge fit on a precomputed design matrix. `unpenalized` lists columns
/// (e.g. an intercept) that receive no penalty.
pub fn fit_ridge_design(
    design: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
    unpenalized: &[usize],
) -> Result<DMatrix<f64>> {
    if design.nrows() != targets.nrows() || design.nrows() == 0 {
        return Err(Error::InvalidArgument(format!(
            "design has {} rows, targets {}",
            design.nrows(),
            targets.nrows()
        )));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("ridge penalty must be ≥ 0, got {lambda}")));
    }
    let mut gram = design.transpose() * design;
    for i in 0..gram.nrows() {
        if !unpenalized.contains(&i) {
            gram[(i, i)] += lambda;
        }
    }
    let cross = design.transpose() * targets;
    solve_spd(gram, &cross, design.nrows())
}

/// Fitted polynomial ridge model with one column of coefficients per output.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    fmap: FeatureMap,
    coefficients: DMatrix<f64>,
    lambda: f64,
}

impl RidgeModel {
    /// Fit on raw inputs (`n × arity`) and targets (`n × outputs`).
    pub fn fit(fmap: FeatureMap, inputs: &DMatrix<f64>, targets: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::InvalidArgument(format!(
                "{} input rows but {} target rows",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        if inputs.ncols() != fmap.arity() {
            return Err(Error::InvalidArgument(format!(
                "inputs have {} columns, feature map expects {}",
                inputs.ncols(),
                fmap.arity()
            )));
        }
        let mut eqs = NormalEquations::new(fmap, targets.ncols());
        let mut x = vec![0.0; inputs.ncols()];
        let mut y = vec![0.0; targets.ncols()];
        for r in 0..inputs.nrows() {
            x.iter_mut().enumerate().for_each(|(c, v)| *v = inputs[(r, c)]);
            y.iter_mut().enumerate().for_each(|(c, v)| *v = targets[(r, c)]);
            eqs.push(&x, &y);
        }
        eqs.solve(lambda)
    }

    /// A model with given coefficients (`features × outputs`).
    pub fn from_coefficients(fmap: FeatureMap, coefficients: DMatrix<f64>) -> Self {
        assert_eq!(coefficients.nrows(), fmap.len());
        Self {
            fmap,
            coefficients,
            lambda: 0.0,
        }
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.fmap
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.coefficients
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn outputs(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn predict(&self, x: &[f64], out: &mut [f64]) {
        let f = self.fmap.features(x);
        let p = f.len();
        let coef = self.coefficients.as_slice();
        for (k, o) in out.iter_mut().enumerate() {
            *o = coef[k * p..(k + 1) * p].iter().zip(&f).map(|(c, v)| c * v).sum();
        }
    }

    /// First output only.
    pub fn predict_scalar(&self, x: &[f64]) -> f64 {
        let f = self.fmap.features(x);
        self.coefficients.as_slice().iter().zip(&f).map(|(c, v)| c * v).sum()
    }

    pub fn predict_vec(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.outputs());
        self.predict(x, out.as_mut_slice());
        out
    }
}

/// Assignment of `n` indices to `K` folds with sizes within one of `n / K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPartition {
    folds: usize,
    assignment: Vec<usize>,
}

impl FoldPartition {
    /// Uniformly random balanced partition, deterministic in `seed`.
    pub fn random(n: usize, folds: usize, seed: u64) -> Result<Self> {
        if folds < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
        }
        if n < folds {
            return Err(Error::TooFewSamples { n, folds });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut substream(seed, 0));
        let mut assignment = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            assignment[i] = pos % folds;
        }
        Ok(Self { folds, assignment })
    }

    /// An explicit assignment; every fold must be nonempty.
    pub fn from_assignment(folds: usize, assignment: Vec<usize>) -> Result<Self> {
        let mut sizes = vec![0usize; folds];
        for &f in &assignment {
            if f >= folds {
                return Err(Error::InvalidArgument(format!("fold index {f} out of range")));
            }
            sizes[f] += 1;
        }
        if folds < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument("every fold must be nonempty and K ≥ 2".into()));
        }
        Ok(Self { folds, assignment })
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    /// Indices in fold `k`, ascending.
    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] == k).collect()
    }

    /// Indices outside fold `k`, ascending.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] != k).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}
