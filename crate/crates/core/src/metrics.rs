//! KL divergence of a particle approximation from an exact mixture, and RMSE.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::stats::{log_sum_exp, GaussianMixture1D, Rng, LN_SQRT_2PI};

/// Default number of Monte Carlo draws for [`kl_mixture_vs_particles`].
pub const KL_MC_SAMPLES: usize = 10_000;

/// Monte Carlo estimate of `KL(truth || estimate)` in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub value: f64,
    pub mc_samples: usize,
    pub standard_error: f64,
}

/// A weighted Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedKde {
    pub centers: Vec<f64>,
    pub weights: Vec<f64>,
    pub bandwidth: f64,
}

fn weighted_quantile(sorted: &[(f64, f64)], p: f64) -> f64 {
    let mut acc = 0.0;
    for &(v, w) in sorted {
        acc += w;
        if acc >= p {
            return v;
        }
    }
    sorted.last().map_or(0.0, |s| s.0)
}

impl WeightedKde {
    /// Silverman's rule `0.9 min(sd, IQR / 1.34) n_eff^(-1/5)` on the weighted sample,
    /// with `n_eff = 1 / sum w^2`.
    pub fn silverman(values: &[f64], weights: &[f64]) -> Result<Self> {
        if values.len() != weights.len() {
            return domain("values and weights differ in length");
        }
        if values.len() < 2 {
            return Err(Error::DegenerateSupport(format!("{} particles cannot form a density estimate", values.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return domain("particle weights must be nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return domain("particle weights sum to zero");
        }
        let w: Vec<f64> = weights.iter().map(|v| v / total).collect();
        let mean: f64 = values.iter().zip(&w).map(|(v, w)| v * w).sum();
        let var: f64 = values.iter().zip(&w).map(|(v, w)| w * (v - mean).powi(2)).sum();
        let sd = var.sqrt();
        if !(sd > 0.0) {
            return Err(Error::DegenerateSupport("all weighted particles share one value".into()));
        }
        let mut sorted: Vec<(f64, f64)> = values.iter().copied().zip(w.iter().copied()).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let iqr = weighted_quantile(&sorted, 0.75) - weighted_quantile(&sorted, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        let n_eff = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
        Ok(Self { centers: values.to_vec(), weights: w, bandwidth: 0.9 * spread * n_eff.powf(-0.2) })
    }

    pub fn logpdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let terms: Vec<f64> = self
            .centers
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(c, w)| w.ln() - 0.5 * ((x - c) / h).powi(2) - LN_SQRT_2PI - h.ln())
            .collect();
        log_sum_exp(&terms)
    }
}

/// `KL(truth || KDE(particles))`, averaging `log truth - log kde` over draws from `truth`.
pub fn kl_mixture_vs_particles(
    truth: &GaussianMixture1D,
    values: &[f64],
    weights: &[f64],
    mc_samples: usize,
    rng: &mut Rng,
) -> Result<KlEstimate> {
    if mc_samples < 2 {
        return domain("need at least two Monte Carlo samples");
    }
    let kde = WeightedKde::silverman(values, weights)?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..mc_samples {
        let x = truth.sample(rng);
        let d = truth.logpdf(x) - kde.logpdf(x);
        sum += d;
        sum_sq += d * d;
    }
    let m = mc_samples as f64;
    let mean = sum / m;
    let var = ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0);
    Ok(KlEstimate { value: mean, mc_samples, standard_error: (var / m).sqrt() })
}

/// Root-mean-squared error per variable and pooled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub trial: usize,
    pub per_variable: Vec<f64>,
    pub pooled: f64,
}

/// RMSE of `estimates[k][v]` against `truth[k][v]`; variable `v`'s error averages over rows `k`.
pub fn rmse(trial: usize, estimates: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<RmseReport> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return domain("estimates and truth need the same, nonzero number of rows");
    }
    let nv = truth[0].len();
    if estimates.iter().chain(truth).any(|r| r.len() != nv) {
        return domain("rows of estimates and truth differ in length");
    }
    let mut per = vec![0.0; nv];
    for (e, t) in estimates.iter().zip(truth) {
        for v in 0..nv {
            per[v] += (e[v] - t[v]).powi(2);
        }
    }
    let rows = estimates.len() as f64;
    let pooled = (per.iter().sum::<f64>() / (rows * nv as f64)).sqrt();
    Ok(RmseReport { trial, per_variable: per.iter().map(|s| (s / rows).sqrt()).collect(), pooled })
}
