use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::copula::LatentLayout;
use crate::error::{domain, Result};
use crate::smc::StateSpaceModel;
use crate::stats::{Gaussian1D, Rng};

/// Constant-speed planar motion `(x, y, heading)` with range-to-origin measurements.
///
/// The first state is one kinematic step from `start` plus process noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanarNavModel {
    pub speed: f64,
    pub start: [f64; 3],
    pub process_std: [f64; 3],
    pub range_std: f64,
    pub horizon: usize,
}

impl Default for PlanarNavModel {
    fn default() -> Self {
        Self { speed: 0.5, start: [0.0, 0.0, 0.5], process_std: [0.05; 3], range_std: 0.1, horizon: 10 }
    }
}

impl PlanarNavModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed > 0.0) || !(self.range_std > 0.0) || self.process_std.iter().any(|s| !(*s > 0.0)) {
            return domain("planar navigation needs positive speed and noise levels");
        }
        Ok(())
    }

    /// Noise-free successor of a pose.
    pub fn kinematics(&self, p: &[f64]) -> Vec<f64> {
        vec![p[0] + self.speed * p[2].cos(), p[1] + self.speed * p[2].sin(), p[2]]
    }

    pub fn range(p: &[f64]) -> f64 {
        p[0].hypot(p[1])
    }

    /// Simulates states and range observations.
    pub fn simulate(&self, rng: &mut Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut states: Vec<Vec<f64>> = Vec::new();
        let mut obs = Vec::new();
        for t in 0..self.horizon {
            let x = if t == 0 { self.sample_initial(rng) } else { self.sample_transition(t, &states[t - 1], rng) };
            obs.push(self.sample_observation(t, &x, rng));
            states.push(x);
        }
        (states, obs)
    }

    fn gaussian_logpdf(&self, mean: &[f64], x: &[f64]) -> f64 {
        (0..3).map(|i| Gaussian1D { mean: mean[i], std: self.process_std[i] }.logpdf(x[i])).sum()
    }

    fn gaussian_sample(&self, mean: &[f64], rng: &mut Rng) -> Vec<f64> {
        (0..3).map(|i| mean[i] + self.process_std[i] * rng.standard_normal()).collect()
    }
}

impl StateSpaceModel for PlanarNavModel {
    fn layout(&self) -> LatentLayout {
        LatentLayout::new(3, 0, 1)
    }

    fn initial_logpdf(&self, x: &[f64]) -> f64 {
        self.gaussian_logpdf(&self.kinematics(&self.start), x)
    }

    fn transition_logpdf(&self, _t: usize, prev: &[f64], x: &[f64]) -> f64 {
        self.gaussian_logpdf(&self.kinematics(prev), x)
    }

    fn observation_logpdf(&self, _t: usize, x: &[f64], obs: &[f64]) -> f64 {
        Gaussian1D { mean: Self::range(x), std: self.range_std }.logpdf(obs[0])
    }

    fn sample_initial(&self, rng: &mut Rng) -> Vec<f64> {
        self.gaussian_sample(&self.kinematics(&self.start), rng)
    }

    fn sample_transition(&self, _t: usize, prev: &[f64], rng: &mut Rng) -> Vec<f64> {
        self.gaussian_sample(&self.kinematics(prev), rng)
    }

    fn sample_observation(&self, _t: usize, x: &[f64], rng: &mut Rng) -> Vec<f64> {
        vec![Self::range(x) + self.range_std * rng.standard_normal()]
    }

    fn initial_moments(&self) -> (Vec<f64>, Vec<f64>) {
        (self.kinematics(&self.start), self.process_std.to_vec())
    }

    fn transition_mean(&self, _t: usize, prev: &[f64]) -> Vec<f64> {
        self.kinematics(prev)
    }

    fn transition_std(&self, _t: usize) -> Vec<f64> {
        self.process_std.to_vec()
    }

    fn transition_mean_jacobian(&self, _t: usize, prev: &[f64]) -> DMatrix<f64> {
        let mut j = DMatrix::identity(3, 3);
        j[(0, 2)] = -self.speed * prev[2].sin();
        j[(1, 2)] = self.speed * prev[2].cos();
        j
    }

    fn grad_initial_logpdf(&self, x: &[f64]) -> Vec<f64> {
        let m = self.kinematics(&self.start);
        (0..3).map(|i| -(x[i] - m[i]) / self.process_std[i].powi(2)).collect()
    }

    fn grad_transition_logpdf(&self, t: usize, prev: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.kinematics(prev);
        let gx: Vec<f64> = (0..3).map(|i| -(x[i] - m[i]) / self.process_std[i].powi(2)).collect();
        let j = self.transition_mean_jacobian(t, prev);
        let gp = (0..3).map(|c| -(0..3).map(|r| j[(r, c)] * gx[r]).sum::<f64>()).collect();
        (gp, gx)
    }

    fn grad_observation_logpdf(&self, _t: usize, x: &[f64], obs: &[f64]) -> Vec<f64> {
        let r = Self::range(x);
        if r == 0.0 {
            return vec![0.0; 3];
        }
        let e = (obs[0] - r) / self.range_std.powi(2);
        vec![e * x[0] / r, e * x[1] / r, 0.0]
    }
}
