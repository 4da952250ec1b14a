//! Copula-factorized proposal distributions and their reparameterized sampler.

mod factor;
mod marginal;
mod params;

pub use factor::{assemble_factor, assemble_full_cholesky, FullFactor};
pub use marginal::{Marginal, MarginalDerivs, MarginalKind};
pub use params::{Frame, VariationalParams, THETA_INIT_STD};

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Error, Result};
use crate::stats::{norm_logpdf, CholeskyFactor, Rng, LN_SQRT_2PI};

/// Standard-normal noise for one proposal draw.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub eps: Vec<f64>,
}

impl NoiseDraw {
    pub fn new(eps: Vec<f64>) -> Self {
        Self { eps }
    }

    pub fn sample(dim: usize, rng: &mut Rng) -> Self {
        Self { eps: rng.standard_normal_vec(dim) }
    }
}

/// Affine map `x = mean + scale * r` between residual and latent coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Anchor {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    pub fn to_latent(&self, r: &[f64]) -> Vec<f64> {
        r.iter().zip(self.mean.iter().zip(&self.scale)).map(|(r, (m, s))| m + s * r).collect()
    }

    pub fn to_residual(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.mean.iter().zip(&self.scale)).map(|(x, (m, s))| (x - m) / s).collect()
    }

    /// `sum_i log scale_i`, the log-Jacobian of [`Anchor::to_latent`].
    pub fn log_scale(&self) -> f64 {
        self.scale.iter().map(|s| s.ln()).sum()
    }
}

/// One reparameterized draw at a step, in the marginals' own coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    /// Correlated normal scores `z = A eps`.
    pub z: Vec<f64>,
    /// The sample, `x_i = F_i^-1(Phi(z_i))`.
    pub x: Vec<f64>,
    /// Log proposal density at `x`.
    pub log_q: f64,
}

/// Derivatives of a [`Draw`] with respect to the step-local parameters: all of
/// `theta` followed by the marginal block of the step.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawGrad {
    /// `dx_i / dlambda_p`, one row per component.
    pub dx: DMatrix<f64>,
    /// Total derivative of `log q(x(eps; lambda); lambda)` at fixed noise.
    pub dlog_q: Vec<f64>,
}

/// A parameter set with its assembled copula factor, ready for sampling and scoring.
#[derive(Debug, Clone)]
pub struct CopulaProposal<'a> {
    params: &'a VariationalParams,
    factor: FullFactor,
    chol: CholeskyFactor,
}

impl<'a> CopulaProposal<'a> {
    pub fn new(params: &'a VariationalParams) -> Result<Self> {
        Self::build(params, false)
    }

    /// Also assembles the copula-factor derivatives needed by the gradient methods.
    pub fn with_gradients(params: &'a VariationalParams) -> Result<Self> {
        Self::build(params, true)
    }

    fn build(params: &'a VariationalParams, grad: bool) -> Result<Self> {
        params.check()?;
        let factor = assemble_factor(&params.theta, &params.layout, grad)?;
        let chol = CholeskyFactor::from_lower(factor.a.clone())?;
        Ok(Self { params, factor, chol })
    }

    pub fn params(&self) -> &VariationalParams {
        self.params
    }

    pub fn factor(&self) -> &FullFactor {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.params.layout.dim()
    }

    /// Number of step-local parameters: `n_theta + n_eta_step(t)`.
    pub fn n_local(&self, t: usize) -> usize {
        self.params.n_theta() + self.params.n_eta_step(t)
    }

    fn check_step(&self, t: usize, len: usize) -> Result<()> {
        if t >= self.params.horizon() {
            return domain(format!("step {t} outside the proposal horizon {}", self.params.horizon()));
        }
        if len != self.dim() {
            return domain(format!("vector of length {len} for a {}-dimensional proposal", self.dim()));
        }
        Ok(())
    }

    /// Deterministic transform of noise into a sample.
    pub fn draw(&self, t: usize, eps: &[f64]) -> Result<Draw> {
        self.check_step(t, eps.len())?;
        let z = &self.factor.a * DVector::from_column_slice(eps);
        let mut x = Vec::with_capacity(eps.len());
        let mut log_q = -self.factor.log_det;
        for (i, m) in self.params.eta[t].iter().enumerate() {
            let xi = m.quantile_from_score(z[i])?;
            log_q += norm_logpdf(eps[i]) - norm_logpdf(z[i]) + m.logpdf(xi);
            x.push(xi);
        }
        if !log_q.is_finite() {
            return Err(Error::Numeric(format!("proposal density at step {t} is not finite")));
        }
        Ok(Draw { z: z.as_slice().to_vec(), x, log_q })
    }

    /// [`CopulaProposal::draw`] plus its parameter derivatives. Requires [`CopulaProposal::with_gradients`].
    pub fn draw_with_grad(&self, t: usize, eps: &[f64]) -> Result<(Draw, DrawGrad)> {
        let draw = self.draw(t, eps)?;
        let d = self.dim();
        let nt = self.params.n_theta();
        if self.factor.da.len() != nt {
            return domain("proposal was built without copula gradients");
        }
        let mut dx = DMatrix::<f64>::zeros(d, self.n_local(t));
        let mut dlog_q = vec![0.0; self.n_local(t)];
        let eta = &self.params.eta[t];
        let mut slope = vec![0.0; d];
        let mut dlogf = vec![0.0; d];
        for i in 0..d {
            slope[i] = (norm_logpdf(draw.z[i]) - eta[i].logpdf(draw.x[i])).exp();
            dlogf[i] = eta[i].dlogpdf_dx(draw.x[i]);
        }
        let e = DVector::from_column_slice(eps);
        for m in 0..nt {
            let dz = &self.factor.da[m] * &e;
            let mut g = -self.factor.dlog_det[m];
            for i in 0..d {
                let dxi = slope[i] * dz[i];
                dx[(i, m)] = dxi;
                g += draw.z[i] * dz[i] + dlogf[i] * dxi;
            }
            dlog_q[m] = g;
        }
        let mut col = nt;
        for i in 0..d {
            let md = eta[i].derivs(draw.x[i]);
            for (dl, dq) in md.dlogpdf.iter().zip(&md.dquantile) {
                dx[(i, col)] = *dq;
                dlog_q[col] = dl + dlogf[i] * dq;
                col += 1;
            }
        }
        Ok((draw, DrawGrad { dx, dlog_q }))
    }

    /// Log proposal density at step `t`.
    pub fn logpdf(&self, t: usize, x: &[f64]) -> Result<f64> {
        Ok(self.score_terms(t, x)?.0)
    }

    fn score_terms(&self, t: usize, x: &[f64]) -> Result<(f64, DVector<f64>, DVector<f64>)> {
        self.check_step(t, x.len())?;
        let eta = &self.params.eta[t];
        let mut z = DVector::zeros(x.len());
        let mut log_q = -self.factor.log_det - x.len() as f64 * LN_SQRT_2PI;
        for (i, m) in eta.iter().enumerate() {
            z[i] = m.score(x[i])?;
            log_q += m.logpdf(x[i]) - norm_logpdf(z[i]);
        }
        let w = self.chol.solve_lower(&z);
        log_q -= 0.5 * w.norm_squared();
        Ok((log_q, z, w))
    }

    /// Gradient of [`CopulaProposal::logpdf`] at fixed `x` with respect to the
    /// step-local parameters. Requires [`CopulaProposal::with_gradients`].
    pub fn grad_logpdf(&self, t: usize, x: &[f64]) -> Result<Vec<f64>> {
        let (_, z, w) = self.score_terms(t, x)?;
        let nt = self.params.n_theta();
        if self.factor.da.len() != nt {
            return domain("proposal was built without copula gradients");
        }
        let mut g = vec![0.0; self.n_local(t)];
        for m in 0..nt {
            let v = self.chol.solve_lower(&(&self.factor.da[m] * &w));
            g[m] = w.dot(&v) - self.factor.dlog_det[m];
        }
        // d log q / dz = z - A^-T A^-1 z
        let gz = &z - self.chol.solve(&z);
        let mut col = nt;
        for (i, m) in self.params.eta[t].iter().enumerate() {
            let md = m.derivs(x[i]);
            let ratio = (m.logpdf(x[i]) - norm_logpdf(z[i])).exp();
            for (dl, dq) in md.dlogpdf.iter().zip(&md.dquantile) {
                g[col] = dl - gz[i] * ratio * dq;
                col += 1;
            }
        }
        Ok(g)
    }
}

/// Reparameterized proposal sample: `z = A eps`, `u = Phi(z)`, `x_i = F_i^-1(u_i)`.
pub fn proposal_sample(eps: &NoiseDraw, t: usize, params: &VariationalParams) -> Result<Vec<f64>> {
    Ok(CopulaProposal::new(params)?.draw(t, &eps.eps)?.x)
}

/// Log-density of the proposal at step `t`: copula term plus the marginal log-densities.
pub fn proposal_logpdf(x: &[f64], t: usize, params: &VariationalParams) -> Result<f64> {
    CopulaProposal::new(params)?.logpdf(t, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::{CopulaTheta, LatentLayout};
    use approx::assert_abs_diff_eq;

    fn random_params(seed: u64) -> VariationalParams {
        let lay = LatentLayout::new(2, 1, 1);
        let kinds = [MarginalKind::Mixture { components: 2 }, MarginalKind::Gaussian, MarginalKind::Gaussian];
        let mut rng = Rng::new(seed);
        let mut p = VariationalParams::init(lay, 2, &kinds, Frame::Absolute, &mut rng).unwrap();
        let mut flat = p.flatten();
        for v in flat.iter_mut() {
            *v += 0.4 * rng.standard_normal();
        }
        p.assign(&flat).unwrap();
        p
    }

    #[test]
    fn identity_proposal_returns_noise() {
        let p = VariationalParams::standard(LatentLayout::new(3, 0, 1), 1, Frame::Absolute);
        let eps = NoiseDraw::new(vec![0.3, -1.2, 2.5]);
        assert_eq!(proposal_sample(&eps, 0, &p).unwrap(), eps.eps);
        assert_abs_diff_eq!(proposal_logpdf(&[0.0; 3], 0, &p).unwrap(), -3.0 * LN_SQRT_2PI, epsilon = 1e-15);
    }

    #[test]
    fn location_scale_marginals() {
        let mut p = VariationalParams::standard(LatentLayout::new(2, 0, 1), 1, Frame::Absolute);
        p.eta[0] = vec![Marginal::Gaussian { mean: 1.5, log_std: 0.2 }, Marginal::Gaussian { mean: -3.0, log_std: -1.0 }];
        let x = proposal_sample(&NoiseDraw::new(vec![0.7, -0.4]), 0, &p).unwrap();
        assert_abs_diff_eq!(x[0], 1.5 + 0.2f64.exp() * 0.7, epsilon = 1e-9);
        assert_abs_diff_eq!(x[1], -3.0 - (-1.0f64).exp() * 0.4, epsilon = 1e-9);
    }

    #[test]
    fn draw_density_matches_logpdf() {
        let p = random_params(3);
        let q = CopulaProposal::new(&p).unwrap();
        let mut rng = Rng::new(8);
        for t in 0..2 {
            let eps = rng.standard_normal_vec(3);
            let d = q.draw(t, &eps).unwrap();
            assert_abs_diff_eq!(d.log_q, q.logpdf(t, &d.x).unwrap(), epsilon = 1e-8);
        }
    }

    #[test]
    fn bivariate_normal_equivalence() {
        let lay = LatentLayout::new(2, 0, 1);
        let mut p = VariationalParams::standard(lay, 1, Frame::Absolute);
        // rho = t / sqrt(1 + t^2) = 0.9
        let t = 0.9 / (1.0f64 - 0.81).sqrt();
        p.theta = CopulaTheta { state: vec![t], ..CopulaTheta::zeros(&lay) };
        let mut rng = Rng::new(1);
        for _ in 0..100 {
            let x = [2.0 * rng.standard_normal(), 2.0 * rng.standard_normal()];
            let rho: f64 = 0.9;
            let det = 1.0 - rho * rho;
            let quad = (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]) / det;
            let oracle = -2.0 * LN_SQRT_2PI - 0.5 * det.ln() - 0.5 * quad;
            assert_abs_diff_eq!(proposal_logpdf(&x, 0, &p).unwrap(), oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn logpdf_gradient_matches_finite_differences() {
        for seed in 0..4 {
            let p = random_params(seed);
            let q = CopulaProposal::with_gradients(&p).unwrap();
            let x = q.draw(1, &[0.2, -0.9, 1.1]).unwrap().x;
            let g = q.grad_logpdf(1, &x).unwrap();
            let base = p.flatten();
            let local: Vec<usize> = (0..p.n_theta()).chain(p.eta_offset(1)..p.eta_offset(2)).collect();
            let h = 1e-6;
            for (k, &idx) in local.iter().enumerate() {
                let mut pp = p.clone();
                let mut v = base.clone();
                v[idx] += h;
                pp.assign(&v).unwrap();
                let up = proposal_logpdf(&x, 1, &pp).unwrap();
                v[idx] -= 2.0 * h;
                pp.assign(&v).unwrap();
                let down = proposal_logpdf(&x, 1, &pp).unwrap();
                let fd = (up - down) / (2.0 * h);
                assert!((g[k] - fd).abs() <= 1e-4 * fd.abs().max(1.0), "seed {seed} param {idx}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn draw_gradient_matches_finite_differences() {
        for seed in 0..4 {
            let p = random_params(seed + 10);
            let q = CopulaProposal::with_gradients(&p).unwrap();
            let eps = [0.5, 1.3, -0.8];
            let (_, g) = q.draw_with_grad(0, &eps).unwrap();
            let base = p.flatten();
            let local: Vec<usize> = (0..p.n_theta()).chain(p.eta_offset(0)..p.eta_offset(1)).collect();
            let h = 1e-6;
            for (k, &idx) in local.iter().enumerate() {
                let mut pp = p.clone();
                let mut v = base.clone();
                v[idx] += h;
                pp.assign(&v).unwrap();
                let up = CopulaProposal::new(&pp).unwrap().draw(0, &eps).unwrap();
                v[idx] -= 2.0 * h;
                pp.assign(&v).unwrap();
                let down = CopulaProposal::new(&pp).unwrap().draw(0, &eps).unwrap();
                let fd_lq = (up.log_q - down.log_q) / (2.0 * h);
                assert!((g.dlog_q[k] - fd_lq).abs() <= 1e-5 * fd_lq.abs().max(1.0), "seed {seed} param {idx}");
                for i in 0..3 {
                    let fd = (up.x[i] - down.x[i]) / (2.0 * h);
                    assert!((g.dx[(i, k)] - fd).abs() <= 1e-5 * fd.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn factorizes_at_zero_theta() {
        let mut p = random_params(2);
        p.theta = CopulaTheta::zeros(&p.layout);
        let x = [0.3, -1.0, 2.0];
        let sum: f64 = p.eta[0].iter().zip(&x).map(|(m, &xi)| m.logpdf(xi)).sum();
        assert_abs_diff_eq!(proposal_logpdf(&x, 0, &p).unwrap(), sum, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_step_and_dims() {
        let p = VariationalParams::standard(LatentLayout::new(1, 0, 1), 2, Frame::Absolute);
        assert!(proposal_logpdf(&[0.0], 2, &p).is_err());
        assert!(proposal_logpdf(&[0.0, 1.0], 0, &p).is_err());
    }
}
