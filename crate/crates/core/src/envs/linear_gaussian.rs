use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::copula::LatentLayout;
use crate::error::{domain, Result};
use crate::smc::{Proposal, StateSpaceModel};
use crate::stats::{Gaussian1D, Rng};

/// Scalar model `x_1 ~ N(m0, p0)`, `x_t = a x_{t-1} + N(0, q)`, `y_t = x_t + N(0, r)`.
/// Variances, not standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearGaussianModel {
    pub a: f64,
    pub q: f64,
    pub r: f64,
    pub m0: f64,
    pub p0: f64,
    pub horizon: usize,
}

impl Default for LinearGaussianModel {
    fn default() -> Self {
        Self { a: 0.9, q: 0.5, r: 1.0, m0: 0.0, p0: 1.0, horizon: 5 }
    }
}

/// Kalman filter output.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanResult {
    pub log_evidence: f64,
    pub filter_means: Vec<f64>,
    pub filter_vars: Vec<f64>,
}

fn gauss(mean: f64, var: f64) -> Gaussian1D {
    Gaussian1D { mean, std: var.sqrt() }
}

impl LinearGaussianModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.r > 0.0 && self.p0 > 0.0) || !self.a.is_finite() || !self.m0.is_finite() {
            return domain("linear-Gaussian variances must be positive and coefficients finite");
        }
        Ok(())
    }

    /// Exact filtering distributions and `log p(y_1:T)`.
    pub fn kalman(&self, obs: &[Vec<f64>]) -> KalmanResult {
        let (mut m, mut p) = (self.m0, self.p0);
        let mut out = KalmanResult { log_evidence: 0.0, filter_means: Vec::new(), filter_vars: Vec::new() };
        for (t, y) in obs.iter().enumerate() {
            if t > 0 {
                m *= self.a;
                p = self.a * self.a * p + self.q;
            }
            let s = p + self.r;
            out.log_evidence += gauss(m, s).logpdf(y[0]);
            let k = p / s;
            m += k * (y[0] - m);
            p *= 1.0 - k;
            out.filter_means.push(m);
            out.filter_vars.push(p);
        }
        out
    }

    /// `p(x_t | x_{t-1}, y_t)` as (mean, variance); `prev = None` at step 0.
    pub fn locally_optimal(&self, prev: Option<f64>, y: f64) -> (f64, f64) {
        let (pm, pv) = match prev {
            None => (self.m0, self.p0),
            Some(x) => (self.a * x, self.q),
        };
        let v = 1.0 / (1.0 / pv + 1.0 / self.r);
        (v * (pm / pv + y / self.r), v)
    }
}

impl StateSpaceModel for LinearGaussianModel {
    fn layout(&self) -> LatentLayout {
        LatentLayout::new(1, 0, 1)
    }

    fn initial_logpdf(&self, x: &[f64]) -> f64 {
        gauss(self.m0, self.p0).logpdf(x[0])
    }

    fn transition_logpdf(&self, _t: usize, prev: &[f64], x: &[f64]) -> f64 {
        gauss(self.a * prev[0], self.q).logpdf(x[0])
    }

    fn observation_logpdf(&self, _t: usize, x: &[f64], obs: &[f64]) -> f64 {
        gauss(x[0], self.r).logpdf(obs[0])
    }

    fn sample_initial(&self, rng: &mut Rng) -> Vec<f64> {
        vec![gauss(self.m0, self.p0).sample(rng)]
    }

    fn sample_transition(&self, _t: usize, prev: &[f64], rng: &mut Rng) -> Vec<f64> {
        vec![gauss(self.a * prev[0], self.q).sample(rng)]
    }

    fn sample_observation(&self, _t: usize, x: &[f64], rng: &mut Rng) -> Vec<f64> {
        vec![gauss(x[0], self.r).sample(rng)]
    }

    fn initial_moments(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![self.m0], vec![self.p0.sqrt()])
    }

    fn transition_mean(&self, _t: usize, prev: &[f64]) -> Vec<f64> {
        vec![self.a * prev[0]]
    }

    fn transition_std(&self, _t: usize) -> Vec<f64> {
        vec![self.q.sqrt()]
    }

    fn transition_mean_jacobian(&self, _t: usize, _prev: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.a)
    }

    fn grad_initial_logpdf(&self, x: &[f64]) -> Vec<f64> {
        vec![-(x[0] - self.m0) / self.p0]
    }

    fn grad_transition_logpdf(&self, _t: usize, prev: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let e = (x[0] - self.a * prev[0]) / self.q;
        (vec![self.a * e], vec![-e])
    }

    fn grad_observation_logpdf(&self, _t: usize, x: &[f64], obs: &[f64]) -> Vec<f64> {
        vec![(obs[0] - x[0]) / self.r]
    }
}

/// Proposes from `p(x_t | x_{t-1}, y_t)`; needs the observations up front.
#[derive(Debug, Clone)]
pub struct LocallyOptimalProposal<'a> {
    pub model: LinearGaussianModel,
    pub obs: &'a [Vec<f64>],
}

impl Proposal<LinearGaussianModel> for LocallyOptimalProposal<'_> {
    fn sample(&self, _m: &LinearGaussianModel, t: usize, prev: Option<&[f64]>, rng: &mut Rng) -> Result<Vec<f64>> {
        let (m, v) = self.model.locally_optimal(prev.map(|p| p[0]), self.obs[t][0]);
        Ok(vec![gauss(m, v).sample(rng)])
    }

    fn logpdf(&self, _m: &LinearGaussianModel, t: usize, prev: Option<&[f64]>, x: &[f64]) -> Result<f64> {
        let (m, v) = self.model.locally_optimal(prev.map(|p| p[0]), self.obs[t][0]);
        Ok(gauss(m, v).logpdf(x[0]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kalman_single_step_evidence() {
        let m = LinearGaussianModel::default();
        let k = m.kalman(&[vec![0.7]]);
        assert!((k.log_evidence - gauss(0.0, 2.0).logpdf(0.7)).abs() < 1e-14);
        assert!((k.filter_means[0] - 0.35).abs() < 1e-14);
        assert!((k.filter_vars[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = LinearGaussianModel::default();
        let h = 1e-6;
        let (x, p, y) = (0.4, -0.3, 1.1);
        let (gp, gx) = m.grad_transition_logpdf(1, &[p], &[x]);
        let fd_x = (m.transition_logpdf(1, &[p], &[x + h]) - m.transition_logpdf(1, &[p], &[x - h])) / (2.0 * h);
        let fd_p = (m.transition_logpdf(1, &[p + h], &[x]) - m.transition_logpdf(1, &[p - h], &[x])) / (2.0 * h);
        assert!((gx[0] - fd_x).abs() < 1e-8 && (gp[0] - fd_p).abs() < 1e-8);
        let fd_o = (m.observation_logpdf(0, &[x + h], &[y]) - m.observation_logpdf(0, &[x - h], &[y])) / (2.0 * h);
        assert!((m.grad_observation_logpdf(0, &[x], &[y])[0] - fd_o).abs() < 1e-8);
    }
}
