//! Benchmark state-space models and simulated datasets.

mod linear_gaussian;
mod planar;
mod three_doors;

pub use linear_gaussian::{KalmanResult, LinearGaussianModel, LocallyOptimalProposal};
pub use planar::PlanarNavModel;
pub use three_doors::{ExactMixturePosterior, Hypothesis, MixtureStep, ThreeDoorsModel, ThreeDoorsRun};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::smc::StateSpaceModel;
use crate::stats::Rng;

/// A simulated run together with the model parameters that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub env: String,
    pub seed: u64,
    pub params: serde_json::Value,
    pub states: Vec<Vec<f64>>,
    /// Door labels for 3Doors; empty for other models.
    pub associations: Vec<usize>,
    pub observations: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Rolls a model forward for `horizon` steps: states, then observations.
pub fn simulate<M: StateSpaceModel + ?Sized>(model: &M, horizon: usize, rng: &mut Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut states: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    let mut obs = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let x = match states.last() {
            None => model.sample_initial(rng),
            Some(p) => model.sample_transition(t, p, rng),
        };
        obs.push(model.sample_observation(t, &x, rng));
        states.push(x);
    }
    (states, obs)
}
