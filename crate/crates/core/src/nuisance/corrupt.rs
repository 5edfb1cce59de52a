use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{derive_v_dv_into, Family, Nuisances};
use crate::error::Result;
use crate::policy::DifferentiablePolicy;
use crate::quadrature::QuadratureRule;
use crate::rng::{derive_seed, substream};

/// Which families receive fixed Gaussian offsets, and how large.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub families: Vec<Family>,
    pub scale: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(families: Vec<Family>, scale: f64, seed: u64) -> Self {
        let mut families = families;
        families.sort();
        families.dedup();
        Self { families, scale, seed }
    }

    /// Parse family names such as `["q", "dq"]`.
    pub fn parse<S: AsRef<str>>(names: &[S], scale: f64, seed: u64) -> Result<Self> {
        let families = names.iter().map(|n| n.as_ref().parse()).collect::<Result<Vec<Family>>>()?;
        Ok(Self::new(families, scale, seed))
    }

    pub fn none() -> Self {
        Self::new(Vec::new(), 1.0, 0)
    }

    pub fn is_identity(&self) -> bool {
        self.families.is_empty() || self.scale == 0.0
    }

    pub fn contains(&self, family: Family) -> bool {
        self.families.contains(&family)
    }

    /// Short tag like `q+dq`, or `none`.
    pub fn tag(&self) -> String {
        if self.families.is_empty() {
            return "none".into();
        }
        self.families.iter().map(|f| f.name()).collect::<Vec<_>>().join("+")
    }

    /// Offsets `H × dim` for one family in one fold; independent of which
    /// other families are selected.
    fn offsets(&self, family: Family, fold: usize, horizon: usize, dim: usize) -> Vec<f64> {
        let mut rng = substream(derive_seed(self.seed, &[fold as u64]), family.index());
        (0..horizon * dim)
            .map(|_| self.scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// A nuisance set with constant offsets added to the selected families.
///
/// Offsets are drawn once per (family, step, component, fold), so the
/// corrupted functions stay deterministic. `v̂` and `d̂v` are re-derived from
/// the corrupted `q̂` and `d̂q` by quadrature over the target policy.
#[derive(Debug)]
pub struct Corrupted<N> {
    base: N,
    target: Box<dyn DifferentiablePolicy>,
    rule: QuadratureRule,
    q: Option<Vec<f64>>,
    mu: Option<Vec<f64>>,
    dq: Option<Vec<f64>>,
    dmu: Option<Vec<f64>>,
}

impl<N: Nuisances> Corrupted<N> {
    pub fn new(base: N, spec: &CorruptionSpec, fold: usize, target: &dyn DifferentiablePolicy, rule: QuadratureRule) -> Self {
        let (h, d) = (base.horizon(), base.dim());
        let pick = |family: Family, dim: usize| {
            (spec.contains(family) && spec.scale != 0.0).then(|| spec.offsets(family, fold, h, dim))
        };
        Self {
            q: pick(Family::Q, 1),
            mu: pick(Family::Mu, 1),
            dq: pick(Family::Dq, d),
            dmu: pick(Family::Dmu, d),
            base,
            target: target.with_params(target.params()),
            rule,
        }
    }

    pub fn base(&self) -> &N {
        &self.base
    }

    fn touches_values(&self) -> bool {
        self.q.is_some() || self.dq.is_some()
    }
}

fn add_offsets(out: &mut [f64], offsets: Option<&Vec<f64>>, j: usize) {
    if let Some(off) = offsets {
        let d = out.len();
        out.iter_mut().zip(&off[j * d..(j + 1) * d]).for_each(|(o, c)| *o += c);
    }
}

impl<N: Nuisances> Nuisances for Corrupted<N> {
    fn horizon(&self) -> usize {
        self.base.horizon()
    }

    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn has(&self, family: Family) -> bool {
        self.base.has(family)
    }

    fn q(&self, j: usize, s: &[f64], a: f64) -> f64 {
        let base = self.base.q(j, s, a);
        match &self.q {
            Some(off) if j < self.horizon() => base + off[j],
            _ => base,
        }
    }

    fn v(&self, j: usize, s: &[f64]) -> f64 {
        if j >= self.horizon() || self.q.is_none() {
            return self.base.v(j, s);
        }
        let mut nodes = crate::policy::ActionNodes::new();
        self.target.action_measure(s, &self.rule, &mut nodes);
        nodes.iter().map(|&(a, w)| w * self.q(j, s, a)).sum()
    }

    fn mu(&self, j: usize, s: &[f64], a: f64) -> f64 {
        let base = self.base.mu(j, s, a);
        match &self.mu {
            Some(off) if j < self.horizon() => base + off[j],
            _ => base,
        }
    }

    fn dq(&self, j: usize, s: &[f64], a: f64, out: &mut [f64]) {
        self.base.dq(j, s, a, out);
        if j < self.horizon() {
            add_offsets(out, self.dq.as_ref(), j);
        }
    }

    fn dv(&self, j: usize, s: &[f64], out: &mut [f64]) {
        self.v_dv(j, s, out);
    }

    fn v_dv(&self, j: usize, s: &[f64], out: &mut [f64]) -> f64 {
        if j >= self.horizon() || !self.touches_values() {
            return self.base.v_dv(j, s, out);
        }
        derive_v_dv_into(
            |s, a| self.q(j, s, a),
            |s, a, o| self.dq(j, s, a, o),
            self.target.as_ref(),
            &self.rule,
            s,
            out,
        )
    }

    fn dmu(&self, j: usize, s: &[f64], a: f64, out: &mut [f64]) {
        self.base.dmu(j, s, a, out);
        if j < self.horizon() {
            add_offsets(out, self.dmu.as_ref(), j);
        }
    }
}
