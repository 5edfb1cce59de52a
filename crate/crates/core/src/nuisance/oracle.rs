use super::{Family, Nuisances};
use crate::env::LqBenchmark;

/// Exact nuisances of the LQ benchmark at a given θ.
///
/// With `v_j(s) = A_j s² + B_j` the Bellman recursion closes on quadratics:
/// `q_j(s, a) = −s² + A_{j+1}(a − s)² + B_{j+1}`,
/// `A_j = −1 + (θ − 1)² A_{j+1}`, `B_j = σ² A_{j+1} + B_{j+1}`, and the
/// θ-derivatives follow by differentiating the coefficient recursion.
/// State marginals are centred normals with variance `V_j`, so `μ_j` is a
/// ratio of Gaussian densities times the step ratio.
#[derive(Debug, Clone)]
pub struct LqTrueNuisances {
    bench: LqBenchmark,
    theta: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    da: Vec<f64>,
    db: Vec<f64>,
    var_target: Vec<f64>,
    dvar_target: Vec<f64>,
    var_behavior: Vec<f64>,
}

impl LqTrueNuisances {
    pub fn new(bench: LqBenchmark, theta: f64) -> Self {
        let h = bench.horizon;
        let sigma2 = bench.sigma * bench.sigma;
        let c = (theta - 1.0).powi(2);
        let dc = 2.0 * (theta - 1.0);
        let (mut a, mut b, mut da, mut db) = (vec![0.0; h + 1], vec![0.0; h + 1], vec![0.0; h + 1], vec![0.0; h + 1]);
        for j in (0..h).rev() {
            a[j] = -1.0 + c * a[j + 1];
            b[j] = sigma2 * a[j + 1] + b[j + 1];
            da[j] = dc * a[j + 1] + c * da[j + 1];
            db[j] = sigma2 * da[j + 1] + db[j + 1];
        }
        Self {
            bench,
            theta,
            a,
            b,
            da,
            db,
            var_target: bench.second_moments(theta),
            dvar_target: bench.second_moment_grads(theta),
            var_behavior: bench.second_moments(bench.behavior_coef),
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `(A_j, B_j)` for `j = 0..=H` with `v_j(s) = A_j s² + B_j`.
    pub fn value_coefficients(&self) -> (&[f64], &[f64]) {
        (&self.a, &self.b)
    }

    /// `(dA_j, dB_j)` for `j = 0..=H`.
    pub fn gradient_coefficients(&self) -> (&[f64], &[f64]) {
        (&self.da, &self.db)
    }

    fn log_step_ratio(&self, s: f64, a: f64) -> f64 {
        let sigma2 = self.bench.sigma * self.bench.sigma;
        ((a - self.bench.behavior_coef * s).powi(2) - (a - self.theta * s).powi(2)) / (2.0 * sigma2)
    }

    fn log_state_ratio(&self, j: usize, s: f64) -> f64 {
        if j == 0 {
            return 0.0;
        }
        let (vt, vb) = (self.var_target[j], self.var_behavior[j]);
        -0.5 * (vt / vb).ln() - s * s / (2.0 * vt) + s * s / (2.0 * vb)
    }

    fn dlog_state_ratio(&self, j: usize, s: f64) -> f64 {
        if j == 0 {
            return 0.0;
        }
        let (v, dv) = (self.var_target[j], self.dvar_target[j]);
        dv * (s * s / (2.0 * v * v) - 1.0 / (2.0 * v))
    }

    fn score(&self, s: f64, a: f64) -> f64 {
        s * (a - self.theta * s) / (self.bench.sigma * self.bench.sigma)
    }
}

impl Nuisances for LqTrueNuisances {
    fn horizon(&self) -> usize {
        self.bench.horizon
    }

    fn dim(&self) -> usize {
        1
    }

    fn has(&self, _family: Family) -> bool {
        true
    }

    fn q(&self, j: usize, s: &[f64], a: f64) -> f64 {
        if j >= self.bench.horizon {
            return 0.0;
        }
        let s = s[0];
        -s * s + self.a[j + 1] * (a - s).powi(2) + self.b[j + 1]
    }

    fn v(&self, j: usize, s: &[f64]) -> f64 {
        if j >= self.bench.horizon {
            return 0.0;
        }
        self.a[j] * s[0] * s[0] + self.b[j]
    }

    fn mu(&self, j: usize, s: &[f64], a: f64) -> f64 {
        (self.log_state_ratio(j, s[0]) + self.log_step_ratio(s[0], a)).exp()
    }

    fn dq(&self, j: usize, s: &[f64], a: f64, out: &mut [f64]) {
        out[0] = if j >= self.bench.horizon {
            0.0
        } else {
            self.da[j + 1] * (a - s[0]).powi(2) + self.db[j + 1]
        };
    }

    fn dv(&self, j: usize, s: &[f64], out: &mut [f64]) {
        out[0] = if j >= self.bench.horizon {
            0.0
        } else {
            self.da[j] * s[0] * s[0] + self.db[j]
        };
    }

    fn dmu(&self, j: usize, s: &[f64], a: f64, out: &mut [f64]) {
        out[0] = self.mu(j, s, a) * (self.dlog_state_ratio(j, s[0]) + self.score(s[0], a));
    }
}
