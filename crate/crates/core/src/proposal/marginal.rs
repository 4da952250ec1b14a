use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::stats::{
    log_sum_exp, norm_cdf, norm_logpdf, norm_quantile, norm_sf, quantile_from_score, clamp_prob, Gaussian1D,
    GaussianMixture1D, QUANTILE_BRACKET_SIGMAS,
};

/// Parametric family of one scalar proposal marginal.
///
/// Standard deviations are stored as logs and mixture weights as softmax logits,
/// so every real parameter vector is valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Marginal {
    Gaussian { mean: f64, log_std: f64 },
    Mixture { logits: Vec<f64>, means: Vec<f64>, log_stds: Vec<f64> },
}

/// Which family a component uses; drives initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MarginalKind {
    Gaussian,
    Mixture { components: usize },
}

/// Derivatives of one marginal at a point, with respect to its own parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalDerivs {
    /// Partial derivative of `log f(x)` with `x` held fixed.
    pub dlogpdf: Vec<f64>,
    /// Derivative of the quantile `F^-1(u)` with `u` held fixed (implicit function).
    pub dquantile: Vec<f64>,
}

impl Marginal {
    pub fn standard_gaussian() -> Self {
        Marginal::Gaussian { mean: 0.0, log_std: 0.0 }
    }

    pub fn kind(&self) -> MarginalKind {
        match self {
            Marginal::Gaussian { .. } => MarginalKind::Gaussian,
            Marginal::Mixture { means, .. } => MarginalKind::Mixture { components: means.len() },
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Marginal::Gaussian { .. } => 2,
            Marginal::Mixture { means, .. } => 3 * means.len(),
        }
    }

    /// Parameters in storage order: `(mean, log_std)` or `(logits, means, log_stds)`.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        match self {
            Marginal::Gaussian { mean, log_std } => out.extend_from_slice(&[*mean, *log_std]),
            Marginal::Mixture { logits, means, log_stds } => {
                out.extend_from_slice(logits);
                out.extend_from_slice(means);
                out.extend_from_slice(log_stds);
            }
        }
    }

    /// Overwrites the parameters from `flat`, which must hold exactly `n_params` values.
    pub fn assign(&mut self, flat: &[f64]) {
        match self {
            Marginal::Gaussian { mean, log_std } => {
                *mean = flat[0];
                *log_std = flat[1];
            }
            Marginal::Mixture { logits, means, log_stds } => {
                let k = means.len();
                logits.copy_from_slice(&flat[..k]);
                means.copy_from_slice(&flat[k..2 * k]);
                log_stds.copy_from_slice(&flat[2 * k..3 * k]);
            }
        }
    }

    pub fn check(&self) -> Result<()> {
        let mut v = Vec::new();
        self.flatten_into(&mut v);
        if v.iter().any(|x| !x.is_finite()) {
            return domain("marginal parameters must be finite");
        }
        if let Marginal::Mixture { logits, means, log_stds } = self {
            if means.is_empty() || logits.len() != means.len() || log_stds.len() != means.len() {
                return domain("mixture marginal needs equally many logits, means and log-stds");
            }
        }
        Ok(())
    }

    pub fn to_mixture(&self) -> GaussianMixture1D {
        match self {
            Marginal::Gaussian { mean, log_std } => {
                GaussianMixture1D::single(Gaussian1D { mean: *mean, std: log_std.exp() })
            }
            Marginal::Mixture { logits, means, log_stds } => {
                let weights = softmax(logits);
                let components = means
                    .iter()
                    .zip(log_stds)
                    .map(|(&m, &ls)| Gaussian1D { mean: m, std: ls.exp() })
                    .collect();
                GaussianMixture1D { weights, components }
            }
        }
    }

    pub fn logpdf(&self, x: f64) -> f64 {
        match self {
            Marginal::Gaussian { mean, log_std } => norm_logpdf((x - mean) / log_std.exp()) - log_std,
            Marginal::Mixture { .. } => self.to_mixture().logpdf(x),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Marginal::Gaussian { mean, log_std } => norm_cdf((x - mean) / log_std.exp()),
            Marginal::Mixture { .. } => self.to_mixture().cdf(x),
        }
    }

    pub fn sf(&self, x: f64) -> f64 {
        match self {
            Marginal::Gaussian { mean, log_std } => norm_sf((x - mean) / log_std.exp()),
            Marginal::Mixture { .. } => self.to_mixture().sf(x),
        }
    }

    /// The `x` with `F(x) = Phi(z)`.
    pub fn quantile_from_score(&self, z: f64) -> Result<f64> {
        match self {
            Marginal::Gaussian { mean, log_std } => Ok(mean + log_std.exp() * z),
            Marginal::Mixture { .. } => {
                let m = self.to_mixture();
                quantile_from_score(z, |x| m.cdf(x), |x| m.sf(x), |x| m.logpdf(x).exp(), m.support_bracket())
            }
        }
    }

    /// Normal score `Phi^-1(F(x))`, computed on the tail that keeps precision.
    pub fn score(&self, x: f64) -> Result<f64> {
        match self {
            Marginal::Gaussian { mean, log_std } => Ok((x - mean) / log_std.exp()),
            Marginal::Mixture { .. } => {
                let m = self.to_mixture();
                let p = m.cdf(x);
                if p <= 0.5 {
                    norm_quantile(clamp_prob(p))
                } else {
                    norm_quantile(clamp_prob(m.sf(x))).map(|v| -v)
                }
            }
        }
    }

    /// `d log f(x) / dx`.
    pub fn dlogpdf_dx(&self, x: f64) -> f64 {
        match self {
            Marginal::Gaussian { mean, log_std } => -(x - mean) / (2.0 * log_std).exp(),
            Marginal::Mixture { means, log_stds, .. } => {
                let r = self.responsibilities(x);
                r.iter()
                    .zip(means.iter().zip(log_stds))
                    .map(|(rk, (m, ls))| -rk * (x - m) / (2.0 * ls).exp())
                    .sum()
            }
        }
    }

    /// Posterior component probabilities at `x` (a single `1.0` for a Gaussian).
    pub fn responsibilities(&self, x: f64) -> Vec<f64> {
        match self {
            Marginal::Gaussian { .. } => vec![1.0],
            Marginal::Mixture { logits, means, log_stds } => {
                let lw = log_softmax(logits);
                let terms: Vec<f64> = lw
                    .iter()
                    .zip(means.iter().zip(log_stds))
                    .map(|(w, (m, ls))| w + norm_logpdf((x - m) / ls.exp()) - ls)
                    .collect();
                let total = log_sum_exp(&terms);
                terms.iter().map(|t| (t - total).exp()).collect()
            }
        }
    }

    /// Parameter derivatives of `log f(x)` and of the quantile map at `x`.
    pub fn derivs(&self, x: f64) -> MarginalDerivs {
        match self {
            Marginal::Gaussian { mean, log_std } => {
                let sd = log_std.exp();
                let u = (x - mean) / sd;
                MarginalDerivs { dlogpdf: vec![u / sd, u * u - 1.0], dquantile: vec![1.0, x - mean] }
            }
            Marginal::Mixture { logits, means, log_stds } => {
                let k = means.len();
                let w = softmax(logits);
                let r = self.responsibilities(x);
                let mut dlogpdf = vec![0.0; 3 * k];
                let mut dquantile = vec![0.0; 3 * k];
                let logf = self.logpdf(x);
                // component CDFs on whichever tail the point sits in
                let mix = self.to_mixture();
                let upper = mix.cdf(x) > 0.5;
                let tails: Vec<f64> = mix
                    .components
                    .iter()
                    .map(|c| if upper { c.sf(x) } else { c.cdf(x) })
                    .collect();
                let total: f64 = w.iter().zip(&tails).map(|(a, b)| a * b).sum();
                let inv_f = (-logf).exp();
                for j in 0..k {
                    let sd = log_stds[j].exp();
                    let u = (x - means[j]) / sd;
                    dlogpdf[j] = r[j] - w[j];
                    dlogpdf[k + j] = r[j] * u / sd;
                    dlogpdf[2 * k + j] = r[j] * (u * u - 1.0);
                    // dF/dlogit_j = w_j (F_j - F) = -w_j (S_j - S)
                    let dcdf = if upper { -w[j] * (tails[j] - total) } else { w[j] * (tails[j] - total) };
                    dquantile[j] = -dcdf * inv_f;
                    dquantile[k + j] = r[j];
                    dquantile[2 * k + j] = r[j] * (x - means[j]);
                }
                MarginalDerivs { dlogpdf, dquantile }
            }
        }
    }

    /// Rough location/scale summary used for bracketing and diagnostics.
    pub fn bracket(&self) -> (f64, f64) {
        match self {
            Marginal::Gaussian { mean, log_std } => {
                let s = log_std.exp() * QUANTILE_BRACKET_SIGMAS;
                (mean - s, mean + s)
            }
            Marginal::Mixture { .. } => self.to_mixture().support_bracket(),
        }
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let total = log_sum_exp(logits);
    logits.iter().map(|l| l - total).collect()
}
