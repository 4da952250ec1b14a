use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::copula::LatentLayout;
use crate::error::{domain, Result};
use crate::stats::{log_sum_exp, Gaussian1D, GaussianMixture1D, Rng};
use crate::smc::StateSpaceModel;

/// A robot on a line observing its offset to one of three doors, with the
/// door identity unknown. Latent `x = (s, l_1, l_2, l_3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThreeDoorsModel {
    pub landmarks: Vec<f64>,
    pub velocity: f64,
    pub var_state: f64,
    pub var_landmark: f64,
    pub var_obs: f64,
    pub horizon: usize,
}

impl Default for ThreeDoorsModel {
    fn default() -> Self {
        Self { landmarks: vec![0.0, 2.0, 6.0], velocity: 2.0, var_state: 0.1, var_landmark: 0.1, var_obs: 0.1, horizon: 3 }
    }
}

/// One simulated 3Doors run. `associations[t]` is the door seen at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeDoorsRun {
    pub states: Vec<Vec<f64>>,
    pub associations: Vec<usize>,
    pub observations: Vec<Vec<f64>>,
}

impl ThreeDoorsModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.var_state > 0.0 && self.var_landmark > 0.0 && self.var_obs > 0.0) {
            return domain("3Doors variances must be positive");
        }
        if self.landmarks.is_empty() {
            return domain("3Doors needs at least one door");
        }
        Ok(())
    }

    pub fn n_doors(&self) -> usize {
        self.landmarks.len()
    }

    fn obs_mixture(&self, x: &[f64]) -> GaussianMixture1D {
        let k = self.n_doors();
        let sd = self.var_obs.sqrt();
        GaussianMixture1D {
            weights: vec![1.0 / k as f64; k],
            components: x[1..].iter().map(|l| Gaussian1D { mean: l - x[0], std: sd }).collect(),
        }
    }

    /// Simulates states, door labels and observations.
    pub fn simulate(&self, rng: &mut Rng) -> ThreeDoorsRun {
        let mut run = ThreeDoorsRun { states: Vec::new(), associations: Vec::new(), observations: Vec::new() };
        let k = self.n_doors();
        for t in 0..self.horizon {
            let x = if t == 0 { self.sample_initial(rng) } else { self.sample_transition(t, &run.states[t - 1], rng) };
            let c = ((rng.uniform() * k as f64) as usize).min(k - 1);
            let z = x[1 + c] - x[0] + self.var_obs.sqrt() * rng.standard_normal();
            run.states.push(x);
            run.associations.push(c);
            run.observations.push(vec![z]);
        }
        run
    }

    fn initial_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0];
        m.extend_from_slice(&self.landmarks);
        m
    }

    fn process_vars(&self) -> Vec<f64> {
        let mut v = vec![self.var_state];
        v.extend(std::iter::repeat_n(self.var_landmark, self.n_doors()));
        v
    }

    /// Exact posterior by enumerating door sequences, each a Kalman filter on the
    /// joint latent. Returns every hypothesis at every step.
    pub fn exact_hypotheses(&self, obs: &[Vec<f64>]) -> Vec<Vec<Hypothesis>> {
        let d = 1 + self.n_doors();
        let k = self.n_doors();
        let log_prior_assoc = -(k as f64).ln();
        let mut steps: Vec<Vec<Hypothesis>> = Vec::new();
        let q = DMatrix::from_diagonal(&DVector::from_vec(self.process_vars()));
        for (t, y) in obs.iter().enumerate() {
            let parents: Vec<(Vec<usize>, DVector<f64>, DMatrix<f64>, f64)> = if t == 0 {
                vec![(Vec::new(), DVector::from_vec(self.initial_mean()), q.clone(), 0.0)]
            } else {
                steps[t - 1]
                    .iter()
                    .map(|h| {
                        let mut m = DVector::from_vec(h.mean.clone());
                        m[0] += self.velocity;
                        let p = to_matrix(&h.cov) + &q;
                        (h.associations.clone(), m, p, h.log_weight)
                    })
                    .collect()
            };
            let mut hyps = Vec::with_capacity(parents.len() * k);
            for (assoc, m, p) in parents.iter().map(|(a, m, p, _)| (a, m, p)) {
                for c in 0..k {
                    let mut hrow = DVector::zeros(d);
                    hrow[0] = -1.0;
                    hrow[1 + c] = 1.0;
                    let ph = p * &hrow;
                    let s = hrow.dot(&ph) + self.var_obs;
                    let pred = hrow.dot(m);
                    let log_inc = Gaussian1D { mean: pred, std: s.sqrt() }.logpdf(y[0]);
                    let gain = &ph / s;
                    let mean = m + &gain * (y[0] - pred);
                    let cov = p - &gain * ph.transpose();
                    let cov = (&cov + cov.transpose()) * 0.5;
                    let mut a = assoc.clone();
                    a.push(c);
                    hyps.push(Hypothesis {
                        associations: a,
                        prior_mean: m.as_slice().to_vec(),
                        prior_cov: from_matrix(p),
                        log_increment: log_inc,
                        mean: mean.as_slice().to_vec(),
                        cov: from_matrix(&cov),
                        log_weight: 0.0,
                    });
                }
            }
            // log weight = log prior of the sequence + accumulated likelihood, normalized
            let parent_lw: Vec<f64> = parents.iter().map(|p| p.3).collect();
            for (j, h) in hyps.iter_mut().enumerate() {
                h.log_weight = parent_lw[j / k] + log_prior_assoc + h.log_increment;
            }
            let total = log_sum_exp(&hyps.iter().map(|h| h.log_weight).collect::<Vec<_>>());
            for h in &mut hyps {
                h.log_weight -= total;
            }
            steps.push(hyps);
        }
        steps
    }

    /// The exact filtering posterior as a Gaussian mixture per step.
    pub fn exact_posterior(&self, obs: &[Vec<f64>]) -> ExactMixturePosterior {
        let steps = self
            .exact_hypotheses(obs)
            .into_iter()
            .map(|hs| MixtureStep {
                weights: hs.iter().map(|h| h.log_weight.exp()).collect(),
                means: hs.iter().map(|h| h.mean.clone()).collect(),
                covariances: hs.iter().map(|h| h.cov.clone()).collect(),
                associations: hs.into_iter().map(|h| h.associations).collect(),
            })
            .collect();
        ExactMixturePosterior { steps }
    }
}

/// One door sequence of the exact filter at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub associations: Vec<usize>,
    /// Predicted moments before this step's observation.
    pub prior_mean: Vec<f64>,
    pub prior_cov: Vec<Vec<f64>>,
    /// `log p(y_t | sequence, y_1:t-1)`.
    pub log_increment: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    /// Normalized log posterior probability of the sequence.
    pub log_weight: f64,
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Filtering posterior at each step as a weighted list of joint Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactMixturePosterior {
    pub steps: Vec<MixtureStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureStep {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub associations: Vec<Vec<usize>>,
}

impl ExactMixturePosterior {
    /// Marginal mixture of component `i` at step `t`.
    pub fn marginal(&self, t: usize, i: usize) -> GaussianMixture1D {
        let s = &self.steps[t];
        GaussianMixture1D {
            weights: s.weights.clone(),
            components: s
                .means
                .iter()
                .zip(&s.covariances)
                .map(|(m, c)| Gaussian1D { mean: m[i], std: c[i][i].sqrt() })
                .collect(),
        }
    }

    /// Posterior mean vector at step `t`.
    pub fn mean(&self, t: usize) -> Vec<f64> {
        let s = &self.steps[t];
        let d = s.means[0].len();
        (0..d).map(|i| s.weights.iter().zip(&s.means).map(|(w, m)| w * m[i]).sum()).collect()
    }
}

impl StateSpaceModel for ThreeDoorsModel {
    fn layout(&self) -> LatentLayout {
        LatentLayout::new(1, self.n_doors(), 1)
    }

    fn initial_logpdf(&self, x: &[f64]) -> f64 {
        let m = self.initial_mean();
        let v = self.process_vars();
        (0..x.len()).map(|i| Gaussian1D { mean: m[i], std: v[i].sqrt() }.logpdf(x[i])).sum()
    }

    fn transition_logpdf(&self, t: usize, prev: &[f64], x: &[f64]) -> f64 {
        let m = self.transition_mean(t, prev);
        let v = self.process_vars();
        (0..x.len()).map(|i| Gaussian1D { mean: m[i], std: v[i].sqrt() }.logpdf(x[i])).sum()
    }

    fn observation_logpdf(&self, _t: usize, x: &[f64], obs: &[f64]) -> f64 {
        self.obs_mixture(x).logpdf(obs[0])
    }

    fn sample_initial(&self, rng: &mut Rng) -> Vec<f64> {
        let m = self.initial_mean();
        self.process_vars().iter().zip(m).map(|(v, m)| m + v.sqrt() * rng.standard_normal()).collect()
    }

    fn sample_transition(&self, t: usize, prev: &[f64], rng: &mut Rng) -> Vec<f64> {
        let m = self.transition_mean(t, prev);
        self.process_vars().iter().zip(m).map(|(v, m)| m + v.sqrt() * rng.standard_normal()).collect()
    }

    fn sample_observation(&self, _t: usize, x: &[f64], rng: &mut Rng) -> Vec<f64> {
        vec![self.obs_mixture(x).sample(rng)]
    }

    fn initial_moments(&self) -> (Vec<f64>, Vec<f64>) {
        (self.initial_mean(), self.process_vars().iter().map(|v| v.sqrt()).collect())
    }

    fn transition_mean(&self, _t: usize, prev: &[f64]) -> Vec<f64> {
        let mut m = prev.to_vec();
        m[0] += self.velocity;
        m
    }

    fn transition_std(&self, _t: usize) -> Vec<f64> {
        self.process_vars().iter().map(|v| v.sqrt()).collect()
    }

    fn transition_mean_jacobian(&self, _t: usize, prev: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(prev.len(), prev.len())
    }

    fn grad_initial_logpdf(&self, x: &[f64]) -> Vec<f64> {
        let m = self.initial_mean();
        let v = self.process_vars();
        (0..x.len()).map(|i| -(x[i] - m[i]) / v[i]).collect()
    }

    fn grad_transition_logpdf(&self, t: usize, prev: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.transition_mean(t, prev);
        let v = self.process_vars();
        let gx: Vec<f64> = (0..x.len()).map(|i| -(x[i] - m[i]) / v[i]).collect();
        (gx.iter().map(|g| -g).collect(), gx)
    }

    fn grad_observation_logpdf(&self, _t: usize, x: &[f64], obs: &[f64]) -> Vec<f64> {
        let mix = self.obs_mixture(x);
        let lp: Vec<f64> = mix.components.iter().map(|c| c.logpdf(obs[0])).collect();
        let total = log_sum_exp(&lp);
        let mut g = vec![0.0; x.len()];
        for (j, c) in mix.components.iter().enumerate() {
            let r = (lp[j] - total).exp();
            let e = r * (obs[0] - c.mean) / self.var_obs;
            g[1 + j] += e;
            g[0] -= e;
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_counts_and_weights() {
        let m = ThreeDoorsModel::default();
        let run = m.simulate(&mut Rng::new(3));
        let post = m.exact_posterior(&run.observations);
        for (t, s) in post.steps.iter().enumerate() {
            assert_eq!(s.weights.len(), 3usize.pow(t as u32 + 1));
            assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_limit() {
        let m = ThreeDoorsModel { var_state: 1e-300, var_landmark: 1e-300, var_obs: 1e-300, ..Default::default() };
        let run = m.simulate(&mut Rng::new(9));
        for t in 0..3 {
            assert!((run.states[t][0] - 2.0 * t as f64).abs() < 1e-12);
            let c = run.associations[t];
            assert!((run.observations[t][0] - (m.landmarks[c] - 2.0 * t as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = ThreeDoorsModel::default();
        let x = [0.3, 0.1, 1.7, 6.2];
        let obs = [1.5];
        let g = m.grad_observation_logpdf(0, &x, &obs);
        for i in 0..4 {
            let mut a = x;
            let mut b = x;
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (m.observation_logpdf(0, &a, &obs) - m.observation_logpdf(0, &b, &obs)) / 2e-6;
            assert!((g[i] - fd).abs() < 1e-6);
        }
    }
}
