//! Finite-horizon environments, trajectories and logged datasets.
//!
//! Decision steps are indexed `t = 0..H-1`. A trajectory stores the `H + 1`
//! states `s_0..s_H`, and one action and one reward per decision step.

mod lq;

pub use lq::LqBenchmark;

use rand::RngCore;
use rayon::prelude::*;
use std::io::Write;

use crate::error::{Error, Result};
use crate::nuisance::Nuisances;
use crate::policy::{DifferentiablePolicy, Policy, RatioSeries, TrajectoryTerms};
use crate::rng::substream;

/// A finite-horizon MDP with real-vector states and scalar actions.
///
/// All randomness is drawn from the caller's rng, so replaying the same stream
/// reproduces a trajectory exactly. Per step the draw order is: action,
/// reward, transition.
pub trait Environment: Send + Sync {
    fn horizon(&self) -> usize;

    fn state_dim(&self) -> usize;

    fn initial_state(&self, rng: &mut dyn RngCore, out: &mut [f64]);

    fn reward(&self, t: usize, state: &[f64], action: f64, rng: &mut dyn RngCore) -> f64;

    fn transition(&self, t: usize, state: &[f64], action: f64, rng: &mut dyn RngCore, out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    state_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
}

impl Trajectory {
    /// `states` is row-major `(H + 1) × state_dim`.
    pub fn new(state_dim: usize, states: Vec<f64>, actions: Vec<f64>, rewards: Vec<f64>) -> Result<Self> {
        let h = actions.len();
        if rewards.len() != h || states.len() != (h + 1) * state_dim {
            return Err(Error::InvalidArgument(format!(
                "trajectory lengths inconsistent: {} states of dim {state_dim}, {h} actions, {} rewards",
                states.len(),
                rewards.len()
            )));
        }
        Ok(Self {
            state_dim,
            states,
            actions,
            rewards,
        })
    }

    /// Scalar-state convenience constructor.
    pub fn scalar(states: Vec<f64>, actions: Vec<f64>, rewards: Vec<f64>) -> Result<Self> {
        Self::new(1, states, actions, rewards)
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// `s_t` for `t = 0..=H`.
    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn action(&self, t: usize) -> f64 {
        self.actions[t]
    }

    pub fn reward(&self, t: usize) -> f64 {
        self.rewards[t]
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// `n ≥ 1` trajectories sharing horizon and state dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories.first().ok_or(Error::EmptyDataset)?;
        let (h, d) = (first.horizon(), first.state_dim());
        for (index, tr) in trajectories.iter().enumerate() {
            if tr.horizon() != h {
                return Err(Error::HorizonMismatch {
                    index,
                    expected: h,
                    found: tr.horizon(),
                });
            }
            if tr.state_dim() != d {
                return Err(Error::InvalidArgument(format!(
                    "trajectory {index} has state dimension {}, expected {d}",
                    tr.state_dim()
                )));
            }
        }
        Ok(Self { trajectories })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories[0].horizon()
    }

    pub fn state_dim(&self) -> usize {
        self.trajectories[0].state_dim()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn get(&self, i: usize) -> &Trajectory {
        &self.trajectories[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trajectory> {
        self.trajectories.iter()
    }

    /// Trajectories at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.trajectories[i].clone()).collect())
    }

    /// The first `n` trajectories.
    pub fn head(&self, n: usize) -> Result<Self> {
        Self::new(self.trajectories[..n.min(self.len())].to_vec())
    }

    /// Ratios and scores of every trajectory for a (target, behavior) pair.
    pub fn terms(&self, target: &dyn DifferentiablePolicy, behavior: &dyn Policy) -> Vec<TrajectoryTerms> {
        self.trajectories
            .iter()
            .map(|tr| TrajectoryTerms::new(target, behavior, tr))
            .collect()
    }

    /// Debug dump with columns `traj_id,t,s,a,r`.
    ///
    /// Vector states are written as `;`-joined components. The row with
    /// `t = H` carries the terminal state and empty action/reward cells.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["traj_id", "t", "s", "a", "r"])?;
        for (i, tr) in self.trajectories.iter().enumerate() {
            let h = tr.horizon();
            for t in 0..=h {
                let s = tr
                    .state(t)
                    .iter()
                    .map(|x| format!("{x:e}"))
                    .collect::<Vec<_>>()
                    .join(";");
                let (a, r) = if t < h {
                    (format!("{:e}", tr.action(t)), format!("{:e}", tr.reward(t)))
                } else {
                    (String::new(), String::new())
                };
                w.write_record([i.to_string(), t.to_string(), s, a, r])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Trajectory;
    type IntoIter = std::slice::Iter<'a, Trajectory>;

    fn into_iter(self) -> Self::IntoIter {
        self.trajectories.iter()
    }
}

pub fn sample_trajectory(env: &dyn Environment, policy: &dyn Policy, rng: &mut dyn RngCore) -> Trajectory {
    let (h, d) = (env.horizon(), env.state_dim());
    let mut states = vec![0.0; (h + 1) * d];
    let mut actions = Vec::with_capacity(h);
    let mut rewards = Vec::with_capacity(h);
    env.initial_state(rng, &mut states[..d]);
    for t in 0..h {
        let (head, tail) = states.split_at_mut((t + 1) * d);
        let s = &head[t * d..];
        let a = policy.sample(s, rng);
        let r = env.reward(t, s, a, rng);
        env.transition(t, s, a, rng, &mut tail[..d]);
        actions.push(a);
        rewards.push(r);
    }
    Trajectory {
        state_dim: d,
        states,
        actions,
        rewards,
    }
}

/// `n` trajectories; trajectory `i` uses substream `i` of `seed` only, so the
/// result is identical for any rayon pool size and `sample_dataset(.., m, ..)`
/// is a prefix of `sample_dataset(.., n, ..)` for `m ≤ n`.
pub fn sample_dataset(env: &dyn Environment, policy: &dyn Policy, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot sample an empty dataset".into()));
    }
    let trajectories = (0..n as u64)
        .into_par_iter()
        .map(|i| sample_trajectory(env, policy, &mut substream(seed, i)))
        .collect();
    Dataset::new(trajectories)
}

/// Observed caps on reward, score norm and density ratios. Diagnostics only.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct BoundsProfile {
    pub r_max: f64,
    pub g_max: f64,
    pub c1: f64,
    pub c2: f64,
}

impl BoundsProfile {
    /// Maxima over the data. `c2` is the largest fitted `μ̂_t` when a nuisance
    /// set with `μ` is supplied, otherwise zero.
    pub fn observe(
        data: &Dataset,
        target: &dyn DifferentiablePolicy,
        behavior: &dyn Policy,
        nuisances: Option<&dyn Nuisances>,
    ) -> Self {
        let mut out = Self::default();
        let mut g = vec![0.0; target.num_params()];
        let with_mu = nuisances.filter(|n| n.has(crate::nuisance::Family::Mu));
        for tr in data {
            let ratios = RatioSeries::new(target, behavior, tr);
            for t in 0..tr.horizon() {
                let (s, a) = (tr.state(t), tr.action(t));
                out.r_max = out.r_max.max(tr.reward(t).abs());
                target.score(s, a, &mut g);
                out.g_max = out.g_max.max(g.iter().map(|x| x * x).sum::<f64>().sqrt());
                out.c1 = out.c1.max(ratios.step_ratio(t));
                if let Some(nu) = with_mu {
                    out.c2 = out.c2.max(nu.mu(t, s, a));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::GaussianLinearPolicy;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Trajectory::scalar(vec![0.0], vec![1.0], vec![0.0]).is_err());
        assert!(Dataset::new(vec![]).is_err());
        let a = Trajectory::scalar(vec![0.0, 1.0], vec![1.0], vec![0.0]).unwrap();
        let b = Trajectory::scalar(vec![0.0, 1.0, 2.0], vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            Dataset::new(vec![a, b]),
            Err(Error::HorizonMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn zero_trajectories_rejected() {
        let bench = LqBenchmark::default();
        assert!(sample_dataset(&bench, &bench.behavior_policy(), 0, 1).is_err());
    }

    #[test]
    fn csv_has_one_row_per_state() {
        let bench = LqBenchmark::with_horizon(3);
        let data = sample_dataset(&bench, &GaussianLinearPolicy::scalar(0.8, 0.2), 2, 5).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 4);
        assert!(text.starts_with("traj_id,t,s,a,r\n0,0,0e0,"));
    }
}
