//! The surrogate objective `E[log Z]`, its reparameterization gradient with frozen
//! resampling, Adam, and the alternating copula/marginal training loop.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proposal::{CopulaProposal, Frame, VariationalParams};
use crate::smc::{
    anchor_for, log_evidence, log_mean_weight, log_target_increment, normalize_log_weights, resample, smc_run,
    ParticleSystem, StateSpaceModel,
};
use crate::stats::{derive_seed, Rng};

/// The noise consumed by one sweep: proposal noise `eps[t][n]` and ancestors
/// `ancestors[t - 1][n]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoiseTape {
    pub eps: Vec<Vec<Vec<f64>>>,
    pub ancestors: Vec<Vec<usize>>,
}

/// Output of [`sweep`].
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub log_z: f64,
    /// Gradient of `log_z` at frozen noise and ancestors; empty if not requested.
    pub grad: Vec<f64>,
    pub tape: NoiseTape,
    pub system: ParticleSystem,
}

enum Noise<'a> {
    Fresh(&'a mut Rng),
    Replay(&'a NoiseTape),
}

/// One copula-proposal particle filter pass that also records its noise and,
/// optionally, differentiates `log Z` along every particle's ancestral path.
///
/// Consumes `rng` exactly as [`smc_run`] does with a [`CopulaProposal`], so both
/// return the same particle system for the same seed.
pub fn sweep<M: StateSpaceModel + ?Sized>(
    model: &M,
    params: &VariationalParams,
    obs: &[Vec<f64>],
    n: usize,
    rng: &mut Rng,
    with_grad: bool,
) -> Result<SweepOutput> {
    run_sweep(model, params, obs, n, Noise::Fresh(rng), with_grad)
}

/// `log Z` of a sweep replayed from a tape, with the same noise and ancestors.
pub fn replay<M: StateSpaceModel + ?Sized>(model: &M, params: &VariationalParams, obs: &[Vec<f64>], tape: &NoiseTape) -> Result<f64> {
    let n = tape.eps.first().map_or(1, |e| e.len());
    Ok(run_sweep(model, params, obs, n, Noise::Replay(tape), false)?.log_z)
}

fn run_sweep<M: StateSpaceModel + ?Sized>(
    model: &M,
    params: &VariationalParams,
    obs: &[Vec<f64>],
    n: usize,
    mut noise: Noise<'_>,
    with_grad: bool,
) -> Result<SweepOutput> {
    if n == 0 {
        return Err(Error::Domain("particle count must be positive".into()));
    }
    if model.layout() != params.layout {
        return Err(Error::Domain("proposal layout does not match the model".into()));
    }
    let q = if with_grad { CopulaProposal::with_gradients(params)? } else { CopulaProposal::new(params)? };
    let d = params.layout.dim();
    let np = params.len();
    let nt = params.n_theta();
    let residual = params.frame == Frame::TransitionResidual;

    let mut ps = ParticleSystem {
        n,
        particles: Vec::with_capacity(obs.len()),
        trajectories: vec![Vec::new(); n],
        ancestors: Vec::new(),
        log_weights: Vec::new(),
        log_z_terms: Vec::new(),
    };
    let mut tape = NoiseTape::default();
    let mut grad = if with_grad { vec![0.0; np] } else { Vec::new() };
    let mut jac_prev: Vec<DMatrix<f64>> = Vec::new();

    for (t, y) in obs.iter().enumerate() {
        let anc: Vec<usize> = if t == 0 {
            Vec::new()
        } else {
            match &mut noise {
                Noise::Fresh(rng) => resample(&ps.normalized_weights(t - 1), n, rng)?,
                Noise::Replay(tp) => tp.ancestors[t - 1].clone(),
            }
        };
        let eta0 = params.eta_offset(t);
        let global = |k: usize| if k < nt { k } else { eta0 + k - nt };

        let mut xs = Vec::with_capacity(n);
        let mut lw = Vec::with_capacity(n);
        let mut eps_t = Vec::with_capacity(n);
        let mut dlw: Vec<Vec<f64>> = Vec::new();
        let mut jac: Vec<DMatrix<f64>> = Vec::new();
        for i in 0..n {
            let a = anc.get(i).copied();
            let prev = a.map(|a| ps.particles[t - 1][a].as_slice());
            let eps = match &mut noise {
                Noise::Fresh(rng) => rng.standard_normal_vec(d),
                Noise::Replay(tp) => tp.eps[t][i].clone(),
            };
            let anchor = anchor_for(params.frame, model, t, prev);
            let (draw, dg) = if with_grad {
                let (dr, g) = q.draw_with_grad(t, &eps)?;
                (dr, Some(g))
            } else {
                (q.draw(t, &eps)?, None)
            };
            let x = anchor.to_latent(&draw.x);
            let w = log_target_increment(model, t, prev, &x, y) - (draw.log_q - anchor.log_scale());

            if let Some(dg) = dg {
                let mut j = DMatrix::<f64>::zeros(d, np);
                for k in 0..dg.dlog_q.len() {
                    let g = global(k);
                    for r in 0..d {
                        j[(r, g)] = anchor.scale[r] * dg.dx[(r, k)];
                    }
                }
                let (gx, gp) = match (prev, a) {
                    (None, _) => (model.grad_initial_logpdf(&x), None),
                    (Some(p), Some(a)) => {
                        if residual {
                            j += model.transition_mean_jacobian(t, p) * &jac_prev[a];
                        }
                        let (gp, gx) = model.grad_transition_logpdf(t, p, &x);
                        (gx, Some((gp, a)))
                    }
                    (Some(_), None) => unreachable!(),
                };
                let go = model.grad_observation_logpdf(t, &x, y);
                let mut dl = vec![0.0; np];
                for r in 0..d {
                    let c = gx[r] + go[r];
                    if c != 0.0 {
                        for (p, v) in dl.iter_mut().enumerate() {
                            *v += c * j[(r, p)];
                        }
                    }
                }
                if let Some((gp, a)) = gp {
                    for r in 0..d {
                        if gp[r] != 0.0 {
                            for (p, v) in dl.iter_mut().enumerate() {
                                *v += gp[r] * jac_prev[a][(r, p)];
                            }
                        }
                    }
                }
                for (k, v) in dg.dlog_q.iter().enumerate() {
                    dl[global(k)] -= v;
                }
                dlw.push(dl);
                jac.push(j);
            }
            xs.push(x);
            lw.push(w);
            eps_t.push(eps);
        }

        ps.log_z_terms.push(log_mean_weight(&lw, t)?);
        if with_grad {
            let wn = normalize_log_weights(&lw);
            for (wi, dl) in wn.iter().zip(&dlw) {
                if *wi > 0.0 {
                    for (g, v) in grad.iter_mut().zip(dl) {
                        *g += wi * v;
                    }
                }
            }
            jac_prev = jac;
        }
        if t > 0 {
            ps.trajectories = anc.iter().map(|&a| ps.trajectories[a].clone()).collect();
            tape.ancestors.push(anc.clone());
            ps.ancestors.push(anc);
        }
        for (path, x) in ps.trajectories.iter_mut().zip(&xs) {
            path.push(x.clone());
        }
        ps.particles.push(xs);
        ps.log_weights.push(lw);
        tape.eps.push(eps_t);
    }
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient for {}", params.param_name(k))));
    }
    let log_z = log_evidence(&ps);
    Ok(SweepOutput { log_z, grad, tape, system: ps })
}

/// Single-sample estimate of `E[log Z]` under the copula proposal.
pub fn surrogate_elbo<M: StateSpaceModel + ?Sized>(
    params: &VariationalParams,
    model: &M,
    obs: &[Vec<f64>],
    n: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let q = CopulaProposal::new(params)?;
    Ok(log_evidence(&smc_run(model, &q, obs, n, rng)?))
}

/// Reparameterization estimate of `grad E[log Z]`, flat in [`VariationalParams::flatten`] order.
pub fn grad_vsmc<M: StateSpaceModel + ?Sized>(
    params: &VariationalParams,
    model: &M,
    obs: &[Vec<f64>],
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    Ok(sweep(model, params, obs, n, rng, true)?.grad)
}

/// Adam moment state for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], steps: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One bias-corrected update that moves `params` along `+grad` (ascent).
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps as i32);
        let c2 = 1.0 - self.beta2.powi(self.steps as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] += lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `lr / (1 + iteration / tau)`.
    InverseDecay { tau: f64 },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, iteration: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::InverseDecay { tau } => base / (1.0 + iteration as f64 / tau),
        }
    }
}

/// Knobs of [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    /// Particles per gradient estimate.
    pub particles: usize,
    /// Adam steps per copula phase and per marginal phase.
    pub inner_block: usize,
    pub seed: u64,
    /// Window of the smoothed objective used for model selection and stopping.
    pub convergence_window: usize,
    /// Stop when the relative change between consecutive windows drops below this; 0 disables.
    pub convergence_tol: f64,
    /// Global-norm clip applied to each phase's gradient.
    pub clip_norm: f64,
    /// Keep the parameters with the best windowed objective rather than the last ones.
    pub keep_best: bool,
    /// Write wall-clock seconds to the trace; off makes traces byte-reproducible.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            learning_rate: 1e-2,
            schedule: LrSchedule::Constant,
            particles: 100,
            inner_block: 25,
            seed: 0,
            convergence_window: 50,
            convergence_tol: 0.0,
            clip_norm: 100.0,
            keep_best: true,
            record_timing: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.inner_block == 0 || self.convergence_window == 0 {
            return Err(Error::Domain("particles, inner_block and convergence_window must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) || !(self.convergence_tol >= 0.0) {
            return Err(Error::Domain("learning rate and clip norm must be positive, tolerance nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Theta,
    Eta,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Theta => "theta",
            Phase::Eta => "eta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub phase: Phase,
    pub elbo: f64,
    pub grad_norm: f64,
    pub seconds: f64,
}

/// Per-iteration record of a training run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    pub fn elbos(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.elbo).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "phase", "elbo", "grad_norm", "seconds"])?;
        for r in &self.rows {
            w.write_record(&[
                r.iteration.to_string(),
                r.phase.as_str().to_string(),
                r.elbo.to_string(),
                r.grad_norm.to_string(),
                r.seconds.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trailing moving average; entry `i` averages `xs[i + 1 - window ..= i]`, shorter at the start.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for i in 0..xs.len() {
        sum += xs[i];
        if i >= window {
            sum -= xs[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// First iteration (1-based) at which the smoothed objective has climbed `fraction` of
/// its total rise, measured from the first full window to the last iteration.
///
/// `None` when the trace is shorter than one window or the objective did not rise.
pub fn improvement_reach(elbos: &[f64], window: usize, fraction: f64) -> Option<usize> {
    if window == 0 || elbos.len() < window {
        return None;
    }
    let ma = moving_average(elbos, window);
    let base = ma[window - 1];
    let total = ma[ma.len() - 1] - base;
    if !(total > 0.0) {
        return None;
    }
    (window - 1..ma.len()).find(|&i| ma[i] - base >= fraction * total).map(|i| i + 1)
}

/// Training result.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: VariationalParams,
    pub trace: TrainTrace,
    /// Iteration whose parameters were returned.
    pub selected_iteration: usize,
}

/// A training failure together with the trace recorded up to it.
#[derive(Debug, thiserror::Error)]
#[error("training failed at iteration {iteration}: {source}")]
pub struct TrainFailure {
    pub iteration: usize,
    #[source]
    pub source: Error,
    pub trace: TrainTrace,
}

/// Alternating stochastic-gradient ascent on `E[log Z]`: `inner_block` Adam steps on
/// the copula parameters with the marginals frozen, then `inner_block` steps on the
/// marginals, repeated. Each iteration draws fresh noise from a stream derived from
/// `(seed, iteration)`.
pub fn train<M: StateSpaceModel + ?Sized>(
    model: &M,
    obs: &[Vec<f64>],
    init: VariationalParams,
    config: &TrainConfig,
) -> std::result::Result<TrainOutcome, TrainFailure> {
    let fail = |iteration, source, trace: &TrainTrace| TrainFailure { iteration, source, trace: trace.clone() };
    let mut trace = TrainTrace::default();
    if let Err(e) = config.validate().and_then(|_| init.check()) {
        return Err(fail(0, e, &trace));
    }
    let start = Instant::now();
    let mut params = init;
    let nt = params.n_theta();
    let mut flat = params.flatten();
    let mut adam_theta = Adam::new(nt);
    let mut adam_eta = Adam::new(flat.len() - nt);
    let window = config.convergence_window;
    let mut best: Option<(f64, usize, VariationalParams)> = None;
    let mut elbos = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let phase = if nt == 0 || (it / config.inner_block) % 2 == 1 { Phase::Eta } else { Phase::Theta };
        let mut rng = Rng::new(derive_seed(config.seed, it as u64));
        let out = match sweep(model, &params, obs, config.particles, &mut rng, true) {
            Ok(o) => o,
            Err(e) => return Err(fail(it, e, &trace)),
        };
        let range = match phase {
            Phase::Theta => 0..nt,
            Phase::Eta => nt..flat.len(),
        };
        let mut g = out.grad[range.clone()].to_vec();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > config.clip_norm {
            g.iter_mut().for_each(|v| *v *= config.clip_norm / norm);
        }
        elbos.push(out.log_z);
        trace.rows.push(TraceRow {
            iteration: it,
            phase,
            elbo: out.log_z,
            grad_norm: norm,
            seconds: if config.record_timing { start.elapsed().as_secs_f64() } else { 0.0 },
        });

        if it + 1 >= window {
            let avg = elbos[it + 1 - window..=it].iter().sum::<f64>() / window as f64;
            if best.as_ref().is_none_or(|b| avg > b.0) {
                best = Some((avg, it, params.clone()));
            }
            if config.convergence_tol > 0.0 && it + 1 >= 2 * window {
                let prev = elbos[it + 1 - 2 * window..it + 1 - window].iter().sum::<f64>() / window as f64;
                if ((avg - prev) / prev.abs().max(1e-12)).abs() < config.convergence_tol {
                    break;
                }
            }
        }

        let lr = config.schedule.rate(config.learning_rate, it);
        match phase {
            Phase::Theta => adam_theta.ascend(&mut flat[range], &g, lr),
            Phase::Eta => adam_eta.ascend(&mut flat[range], &g, lr),
        }
        if let Err(e) = params.assign(&flat) {
            return Err(fail(it, e, &trace));
        }
    }
    let last = trace.rows.len();
    match best {
        Some((_, it, p)) if config.keep_best => Ok(TrainOutcome { params: p, trace, selected_iteration: it }),
        _ => Ok(TrainOutcome { params, trace, selected_iteration: last }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut a = Adam::new(2);
        let mut p = [1.0, -2.0];
        a.ascend(&mut p, &[0.0, 0.0], 0.1);
        assert_eq!(p, [1.0, -2.0]);
    }

    #[test]
    fn adam_constant_gradient_steps_by_lr() {
        let mut a = Adam::new(1);
        let mut p = [0.0];
        for _ in 0..200 {
            let before = p[0];
            a.ascend(&mut p, &[3.7], 0.01);
            assert!(((p[0] - before) - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_quadratic_bowl() {
        let mut a = Adam::new(1);
        let mut p = [1.0];
        for _ in 0..2000 {
            let g = [-2.0 * p[0]];
            a.ascend(&mut p, &g, 1e-2);
        }
        assert!(p[0].abs() < 1e-3, "{}", p[0]);
    }

    #[test]
    fn moving_average_window() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
    }
}
