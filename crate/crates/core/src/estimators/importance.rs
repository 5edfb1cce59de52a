//! Importance-sampling policy gradients and the plug-in `q` gradient.

use super::{contributions, require, GradientEstimate};
use crate::env::Dataset;
use crate::error::Result;
use crate::nuisance::{Family, Nuisances};
use crate::policy::{DifferentiablePolicy, Policy};

/// `E_n[ν_{0:H-1} (Σ_t r_t)(Σ_t g_t)]`.
pub fn grad_reinforce(data: &Dataset, target: &dyn DifferentiablePolicy, behavior: &dyn Policy) -> GradientEstimate {
    let m = contributions(data, target, behavior, |tr, tt, out| {
        let h = tr.horizon();
        let w = tt.ratios.prefix_log(h - 1).exp() * tr.total_reward();
        out.fill(0.0);
        for t in 0..h {
            for (o, g) in out.iter_mut().zip(tt.score(t)) {
                *o += w * g;
            }
        }
    });
    GradientEstimate::from_contributions("reinforce", m)
}

/// `E_n[ν_{0:H-1} Σ_t r_t Σ_{s≤t} g_s]`.
pub fn grad_gpomdp(data: &Dataset, target: &dyn DifferentiablePolicy, behavior: &dyn Policy) -> GradientEstimate {
    let m = contributions(data, target, behavior, |tr, tt, out| {
        let h = tr.horizon();
        let cum = tt.cumulative_scores();
        let d = out.len();
        out.fill(0.0);
        for t in 0..h {
            for k in 0..d {
                out[k] += tr.reward(t) * cum[t * d + k];
            }
        }
        let w = tt.ratios.prefix_log(h - 1).exp();
        out.iter_mut().for_each(|o| *o *= w);
    });
    GradientEstimate::from_contributions("gpomdp", m)
}

/// Step-wise importance sampling: `E_n[Σ_t ν_{0:t} r_t Σ_{s≤t} g_s]`.
pub fn grad_stepwise_is(data: &Dataset, target: &dyn DifferentiablePolicy, behavior: &dyn Policy) -> GradientEstimate {
    let m = contributions(data, target, behavior, |tr, tt, out| {
        let cum = tt.cumulative_scores();
        let d = out.len();
        out.fill(0.0);
        for t in 0..tr.horizon() {
            let w = tt.ratios.prefix_log(t).exp() * tr.reward(t);
            for k in 0..d {
                out[k] += w * cum[t * d + k];
            }
        }
    });
    GradientEstimate::from_contributions("stepwise_is", m)
}

/// `E_n[Σ_t ν_{0:t} g_t q̂_t(s_t, a_t)]`.
pub fn grad_pg_q(
    data: &Dataset,
    target: &dyn DifferentiablePolicy,
    behavior: &dyn Policy,
    nuisances: &dyn Nuisances,
) -> Result<GradientEstimate> {
    require(nuisances, &[Family::Q])?;
    let m = contributions(data, target, behavior, |tr, tt, out| {
        out.fill(0.0);
        for t in 0..tr.horizon() {
            let w = tt.ratios.prefix_log(t).exp() * nuisances.q(t, tr.state(t), tr.action(t));
            for (o, g) in out.iter_mut().zip(tt.score(t)) {
                *o += w * g;
            }
        }
    });
    Ok(GradientEstimate::from_contributions("pg", m))
}
