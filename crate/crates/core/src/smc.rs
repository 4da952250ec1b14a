//! Sequential Monte Carlo with multinomial resampling at every step.

use std::io::Write;

use nalgebra::DMatrix;

use crate::copula::LatentLayout;
use crate::error::{Error, Result};
use crate::proposal::{Anchor, CopulaProposal, Frame};
use crate::stats::{log_sum_exp, Categorical, Rng};

/// A state-space model `p(x_1) prod p(x_t | x_{t-1}) prod p(y_t | x_t)`, evaluable
/// pointwise in log space. Steps are indexed from 0.
///
/// The gradient and moment methods feed the residual proposal frame and the
/// reparameterization gradient; the transition standard deviation must not depend
/// on the parent state.
pub trait StateSpaceModel: Sync {
    fn layout(&self) -> LatentLayout;

    fn initial_logpdf(&self, x: &[f64]) -> f64;
    fn transition_logpdf(&self, t: usize, prev: &[f64], x: &[f64]) -> f64;
    fn observation_logpdf(&self, t: usize, x: &[f64], obs: &[f64]) -> f64;

    fn sample_initial(&self, rng: &mut Rng) -> Vec<f64>;
    fn sample_transition(&self, t: usize, prev: &[f64], rng: &mut Rng) -> Vec<f64>;
    fn sample_observation(&self, t: usize, x: &[f64], rng: &mut Rng) -> Vec<f64>;

    /// Mean and per-component standard deviation of the initial distribution.
    fn initial_moments(&self) -> (Vec<f64>, Vec<f64>);
    fn transition_mean(&self, t: usize, prev: &[f64]) -> Vec<f64>;
    fn transition_std(&self, t: usize) -> Vec<f64>;
    /// `d transition_mean / d prev`.
    fn transition_mean_jacobian(&self, t: usize, prev: &[f64]) -> DMatrix<f64>;

    fn grad_initial_logpdf(&self, x: &[f64]) -> Vec<f64>;
    /// Gradients with respect to `(prev, x)`.
    fn grad_transition_logpdf(&self, t: usize, prev: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>);
    fn grad_observation_logpdf(&self, t: usize, x: &[f64], obs: &[f64]) -> Vec<f64>;
}

/// `log p(x_t | x_{t-1}) + log p(y_t | x_t)`, or the prior term at step 0.
pub fn log_target_increment<M: StateSpaceModel + ?Sized>(
    model: &M,
    t: usize,
    prev: Option<&[f64]>,
    x: &[f64],
    obs: &[f64],
) -> f64 {
    let dynamics = match prev {
        None => model.initial_logpdf(x),
        Some(p) => model.transition_logpdf(t, p, x),
    };
    dynamics + model.observation_logpdf(t, x, obs)
}

/// A proposal `q(x_t | x_{t-1})`; `prev` is `None` at step 0.
pub trait Proposal<M: StateSpaceModel + ?Sized> {
    fn sample(&self, model: &M, t: usize, prev: Option<&[f64]>, rng: &mut Rng) -> Result<Vec<f64>>;
    fn logpdf(&self, model: &M, t: usize, prev: Option<&[f64]>, x: &[f64]) -> Result<f64>;

    /// Log incremental weight: target increment minus the proposal log-density.
    fn log_incremental_weight(&self, model: &M, t: usize, prev: Option<&[f64]>, x: &[f64], obs: &[f64]) -> Result<f64> {
        Ok(log_target_increment(model, t, prev, x, obs) - self.logpdf(model, t, prev, x)?)
    }

    /// Draws `x_t` and returns it with its log incremental weight.
    fn sample_weighted(
        &self,
        model: &M,
        t: usize,
        prev: Option<&[f64]>,
        obs: &[f64],
        rng: &mut Rng,
    ) -> Result<(Vec<f64>, f64)> {
        let x = self.sample(model, t, prev, rng)?;
        let lw = self.log_incremental_weight(model, t, prev, &x, obs)?;
        Ok((x, lw))
    }
}

/// Proposes from the model's own dynamics.
#[derive(Debug, Clone, Copy, Default)]
pub struct BootstrapProposal;

impl<M: StateSpaceModel + ?Sized> Proposal<M> for BootstrapProposal {
    fn sample(&self, model: &M, t: usize, prev: Option<&[f64]>, rng: &mut Rng) -> Result<Vec<f64>> {
        Ok(match prev {
            None => model.sample_initial(rng),
            Some(p) => model.sample_transition(t, p, rng),
        })
    }

    fn logpdf(&self, model: &M, t: usize, prev: Option<&[f64]>, x: &[f64]) -> Result<f64> {
        Ok(match prev {
            None => model.initial_logpdf(x),
            Some(p) => model.transition_logpdf(t, p, x),
        })
    }

    /// The dynamics terms cancel, leaving the observation likelihood.
    fn log_incremental_weight(&self, model: &M, t: usize, _prev: Option<&[f64]>, x: &[f64], obs: &[f64]) -> Result<f64> {
        Ok(model.observation_logpdf(t, x, obs))
    }
}

/// Residual anchor for a particle under the given frame.
pub fn anchor_for<M: StateSpaceModel + ?Sized>(frame: Frame, model: &M, t: usize, prev: Option<&[f64]>) -> Anchor {
    match (frame, prev) {
        (Frame::Absolute, _) => Anchor::identity(model.layout().dim()),
        (Frame::TransitionResidual, None) => {
            let (mean, scale) = model.initial_moments();
            Anchor { mean, scale }
        }
        (Frame::TransitionResidual, Some(p)) => Anchor { mean: model.transition_mean(t, p), scale: model.transition_std(t) },
    }
}

impl<M: StateSpaceModel + ?Sized> Proposal<M> for CopulaProposal<'_> {
    fn sample(&self, model: &M, t: usize, prev: Option<&[f64]>, rng: &mut Rng) -> Result<Vec<f64>> {
        let eps = rng.standard_normal_vec(self.dim());
        let draw = self.draw(t, &eps)?;
        Ok(anchor_for(self.params().frame, model, t, prev).to_latent(&draw.x))
    }

    fn logpdf(&self, model: &M, t: usize, prev: Option<&[f64]>, x: &[f64]) -> Result<f64> {
        let anchor = anchor_for(self.params().frame, model, t, prev);
        Ok(CopulaProposal::logpdf(self, t, &anchor.to_residual(x))? - anchor.log_scale())
    }

    /// Uses the density carried by the draw, which avoids inverting the marginals.
    fn sample_weighted(
        &self,
        model: &M,
        t: usize,
        prev: Option<&[f64]>,
        obs: &[f64],
        rng: &mut Rng,
    ) -> Result<(Vec<f64>, f64)> {
        let eps = rng.standard_normal_vec(self.dim());
        let draw = self.draw(t, &eps)?;
        let anchor = anchor_for(self.params().frame, model, t, prev);
        let x = anchor.to_latent(&draw.x);
        let lw = log_target_increment(model, t, prev, &x, obs) - (draw.log_q - anchor.log_scale());
        Ok((x, lw))
    }
}

/// The weighted particle approximation produced by [`smc_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    pub n: usize,
    /// `particles[t][n]`: particle `n` after propagation at step `t`.
    pub particles: Vec<Vec<Vec<f64>>>,
    /// `trajectories[n][t]`: full paths of the final particles, recorded forward.
    pub trajectories: Vec<Vec<Vec<f64>>>,
    /// `ancestors[t - 1][n]`: index at step `t - 1` of the parent of particle `n` at step `t`.
    pub ancestors: Vec<Vec<usize>>,
    /// `log_weights[t][n]`: log incremental (unnormalized) weights.
    pub log_weights: Vec<Vec<f64>>,
    /// `log((1/N) sum_n w_t^n)` per step.
    pub log_z_terms: Vec<f64>,
}

impl ParticleSystem {
    pub fn steps(&self) -> usize {
        self.log_weights.len()
    }

    pub fn normalized_weights(&self, t: usize) -> Vec<f64> {
        normalize_log_weights(&self.log_weights[t])
    }

    /// Path of final particle `n`, recovered by following the ancestor links back.
    pub fn ancestral_path(&self, n: usize) -> Vec<Vec<f64>> {
        let steps = self.steps();
        let mut path = vec![Vec::new(); steps];
        let mut idx = n;
        for t in (0..steps).rev() {
            path[t] = self.particles[t][idx].clone();
            if t > 0 {
                idx = self.ancestors[t - 1][idx];
            }
        }
        path
    }
}

/// Normalizes log weights to probabilities.
pub fn normalize_log_weights(lw: &[f64]) -> Vec<f64> {
    let total = log_sum_exp(lw);
    lw.iter().map(|w| (w - total).exp()).collect()
}

/// Multinomial resampling: `n` ancestor indices drawn from normalized weights.
pub fn resample(weights: &[f64], n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let cat = Categorical::new(weights)?;
    Ok((0..n).map(|_| cat.sample(rng)).collect())
}

/// `log((1/N) sum exp(lw))`, failing if every weight vanished.
pub fn log_mean_weight(lw: &[f64], step: usize) -> Result<f64> {
    if lw.iter().any(|w| w.is_nan()) {
        return Err(Error::Numeric(format!("NaN importance weight at step {step}")));
    }
    let total = log_sum_exp(lw);
    if total == f64::NEG_INFINITY {
        return Err(Error::DegenerateFilter { step });
    }
    Ok(total - (lw.len() as f64).ln())
}

/// Runs the particle filter over `obs` with `n` particles.
///
/// Step 0 samples from the proposal and weights by prior times likelihood over the
/// proposal density. Each later step first draws all `n` ancestors in one
/// multinomial pass, then proposes and weights each particle in index order.
pub fn smc_run<M, Q>(model: &M, proposal: &Q, obs: &[Vec<f64>], n: usize, rng: &mut Rng) -> Result<ParticleSystem>
where
    M: StateSpaceModel + ?Sized,
    Q: Proposal<M> + ?Sized,
{
    if n == 0 {
        return Err(Error::Domain("particle count must be positive".into()));
    }
    let mut ps = ParticleSystem {
        n,
        particles: Vec::with_capacity(obs.len()),
        trajectories: vec![Vec::with_capacity(obs.len()); n],
        ancestors: Vec::new(),
        log_weights: Vec::with_capacity(obs.len()),
        log_z_terms: Vec::with_capacity(obs.len()),
    };
    for (t, y) in obs.iter().enumerate() {
        let mut xs = Vec::with_capacity(n);
        let mut lw = Vec::with_capacity(n);
        if t == 0 {
            for _ in 0..n {
                let (x, w) = proposal.sample_weighted(model, 0, None, y, rng)?;
                lw.push(w);
                xs.push(x);
            }
        } else {
            let w = ps.normalized_weights(t - 1);
            let anc = resample(&w, n, rng)?;
            let prev = &ps.particles[t - 1];
            for &a in &anc {
                let (x, w) = proposal.sample_weighted(model, t, Some(&prev[a]), y, rng)?;
                lw.push(w);
                xs.push(x);
            }
            ps.trajectories = anc.iter().map(|&a| ps.trajectories[a].clone()).collect();
            ps.ancestors.push(anc);
        }
        ps.log_z_terms.push(log_mean_weight(&lw, t)?);
        for (path, x) in ps.trajectories.iter_mut().zip(&xs) {
            path.push(x.clone());
        }
        ps.particles.push(xs);
        ps.log_weights.push(lw);
    }
    Ok(ps)
}

/// The evidence estimate `log Z = sum_t log((1/N) sum_n w_t^n)`.
pub fn log_evidence(ps: &ParticleSystem) -> f64 {
    ps.log_z_terms.iter().sum()
}

/// Draws one final particle by its weight and returns its ancestral path.
pub fn sample_trajectory(ps: &ParticleSystem, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    if ps.steps() == 0 {
        return Ok(Vec::new());
    }
    let w = ps.normalized_weights(ps.steps() - 1);
    let idx = Categorical::new(&w)?.sample(rng);
    Ok(ps.ancestral_path(idx))
}

/// Weighted mean and variance per step and component.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    /// `mean[t][i]`.
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

fn weighted_moments(points: &[&Vec<f64>], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = points.first().map_or(0, |p| p.len());
    let mut mean = vec![0.0; d];
    for (p, &wi) in points.iter().zip(w) {
        for i in 0..d {
            mean[i] += wi * p[i];
        }
    }
    let mut var = vec![0.0; d];
    for (p, &wi) in points.iter().zip(w) {
        for i in 0..d {
            var[i] += wi * (p[i] - mean[i]).powi(2);
        }
    }
    (mean, var)
}

/// Smoothing moments of the trajectories under the final-step weights.
pub fn posterior_moments(ps: &ParticleSystem) -> Moments {
    let steps = ps.steps();
    if steps == 0 {
        return Moments { mean: Vec::new(), var: Vec::new() };
    }
    let w = ps.normalized_weights(steps - 1);
    let mut out = Moments { mean: Vec::with_capacity(steps), var: Vec::with_capacity(steps) };
    for t in 0..steps {
        let pts: Vec<&Vec<f64>> = ps.trajectories.iter().map(|p| &p[t]).collect();
        let (m, v) = weighted_moments(&pts, &w);
        out.mean.push(m);
        out.var.push(v);
    }
    out
}

/// Filtering moments: the particles of each step under that step's weights.
pub fn filtering_moments(ps: &ParticleSystem) -> Moments {
    let mut out = Moments { mean: Vec::new(), var: Vec::new() };
    for t in 0..ps.steps() {
        let pts: Vec<&Vec<f64>> = ps.particles[t].iter().collect();
        let (m, v) = weighted_moments(&pts, &ps.normalized_weights(t));
        out.mean.push(m);
        out.var.push(v);
    }
    out
}

/// Header of the particle-cloud CSV.
pub const BELIEFS_HEADER: [&str; 6] = ["trial", "t", "n", "component_index", "value", "norm_weight"];

/// Appends the filtering particle clouds of a run as CSV rows. Steps are written
/// from 1.
pub fn write_beliefs<W: Write>(out: &mut csv::Writer<W>, trial: usize, ps: &ParticleSystem) -> Result<()> {
    for t in 0..ps.steps() {
        let w = ps.normalized_weights(t);
        for (n, x) in ps.particles[t].iter().enumerate() {
            for (i, v) in x.iter().enumerate() {
                out.write_record(&[
                    trial.to_string(),
                    (t + 1).to_string(),
                    n.to_string(),
                    i.to_string(),
                    v.to_string(),
                    w[n].to_string(),
                ])?;
            }
        }
    }
    Ok(())
}
