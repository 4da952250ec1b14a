#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use vcsmc::copula::{gauss_copula_logdensity, lkj_build, LatentLayout};
use vcsmc::envs::ThreeDoorsModel;
use vcsmc::proposal::{proposal_logpdf, proposal_sample, Frame, Marginal, NoiseDraw, VariationalParams};
use vcsmc::smc::StateSpaceModel;
use vcsmc::stats::{norm_cdf, norm_pdf, Gaussian1D, Rng};
use vcsmc::train::{replay, sweep};

/// Kolmogorov-Smirnov distance of a sample from U(0, 1).
pub fn ks_uniform(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

/// Asymptotic critical value `sqrt(-ln(alpha / 2) / 2) / sqrt(n)`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Pearson chi-square test: adjacent bins are pooled until each expected count is at
/// least 5. Returns (statistic, degrees of freedom, p-value).
pub fn chi_square(observed: &[f64], expected: &[f64]) -> (f64, usize, f64) {
    let mut pooled = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (a, b) in observed.iter().zip(expected) {
        o += a;
        e += b;
        if e >= 5.0 {
            pooled.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if let Some(last) = pooled.last_mut() {
        last.0 += o;
        last.1 += e;
    }
    let stat: f64 = pooled.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = pooled.len() - 1;
    let p = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
    (stat, dof, p)
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

pub fn rho_to_theta(rho: f64) -> f64 {
    rho / (1.0 - rho * rho).sqrt()
}

/// Largest diagonal deviation from 1 and smallest eigenvalue of the LKJ correlation.
pub fn lkj_defects(theta: &[f64], m: usize) -> (f64, f64) {
    let c = lkj_build(theta, m).unwrap();
    let corr = c.corr();
    let mut diag: f64 = 0.0;
    for i in 0..m {
        diag = diag.max((corr[(i, i)] - 1.0).abs());
        for j in 0..m {
            assert_eq!(corr[(i, j)], corr[(j, i)]);
        }
    }
    (diag, corr.clone().symmetric_eigen().eigenvalues.min())
}

/// Midpoint rule on a score grid: `u = Phi(s)`, `du = phi(s) ds`.
pub fn integrate_copula(rho: f64) -> f64 {
    let c = lkj_build(&[rho_to_theta(rho)], 2).unwrap();
    let h = 0.02;
    let nodes: Vec<(f64, f64)> = (0..750)
        .map(|k| {
            let s = -7.5 + (k as f64 + 0.5) * h;
            (norm_cdf(s), norm_pdf(s) * h)
        })
        .collect();
    let mut total = 0.0;
    for &(u, du) in &nodes {
        for &(v, dv) in &nodes {
            total += gauss_copula_logdensity(&[u, v], &c).unwrap().exp() * du * dv;
        }
    }
    total
}


pub fn perturbed(mut p: VariationalParams, rng: &mut Rng, scale: f64) -> VariationalParams {
    let mut flat = p.flatten();
    for v in flat.iter_mut() {
        *v += scale * rng.standard_normal();
    }
    p.assign(&flat).unwrap();
    p
}

/// Worst relative error of the pathwise gradient against central differences of the
/// surrogate objective with the noise and ancestors frozen.
pub fn worst_relative_error<M: StateSpaceModel>(model: &M, params: &VariationalParams, obs: &[Vec<f64>], n: usize, seed: u64) -> f64 {
    let out = sweep(model, params, obs, n, &mut Rng::new(seed), true).unwrap();
    let base = params.flatten();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..base.len() {
        let mut p = params.clone();
        let mut v = base.clone();
        v[k] += h;
        p.assign(&v).unwrap();
        let up = replay(model, &p, obs, &out.tape).unwrap();
        v[k] -= 2.0 * h;
        p.assign(&v).unwrap();
        let down = replay(model, &p, obs, &out.tape).unwrap();
        let fd = (up - down) / (2.0 * h);
        let err = (out.grad[k] - fd).abs() / fd.abs().max(1e-2);
        worst = worst.max(err);
    }
    worst
}


/// `int N(x; mean, cov) N(y; x[1 + c] - x[0], var_obs) dx` by a midpoint rule on a grid
/// placed at `center` and shaped by `spread`. Any placement gives the same integral; putting
/// the grid where the integrand lives keeps the rule accurate for unlikely doors.
pub fn quadrature_likelihood(
    mean: &[f64],
    cov: &DMatrix<f64>,
    (center, spread): (&[f64], &DMatrix<f64>),
    c: usize,
    y: f64,
    var_obs: f64,
) -> f64 {
    let chol = cov.clone().cholesky().unwrap();
    let log_norm = -0.5 * 4.0 * (2.0 * std::f64::consts::PI).ln() - chol.l().diagonal().map(f64::ln).sum();
    let g = spread.clone().cholesky().unwrap().l() * 1.5;
    let log_jac = g.diagonal().map(f64::ln).sum();
    let (h, k) = (0.5, 26);
    let nodes: Vec<f64> = (0..k).map(|i| -6.5 + (i as f64 + 0.5) * h).collect();
    let obs = Gaussian1D { mean: 0.0, std: var_obs.sqrt() };
    let m = DVector::from_column_slice(mean);
    let ctr = DVector::from_column_slice(center);
    let mut total = 0.0;
    for a in &nodes {
        for b in &nodes {
            for cc in &nodes {
                for d in &nodes {
                    let x = &ctr + &g * DVector::from_vec(vec![*a, *b, *cc, *d]);
                    let r = chol.l().solve_lower_triangular(&(&x - &m)).unwrap();
                    let log_prior = log_norm - 0.5 * r.norm_squared();
                    total += (log_prior + log_jac + obs.logpdf(y - (x[1 + c] - x[0]))).exp();
                }
            }
        }
    }
    total * h.powi(4)
}

/// Worst relative gap between each exact 3Doors component likelihood and its quadrature,
/// over every hypothesis of one simulated run.
pub fn doors_quadrature_worst(seed: u64) -> f64 {
    let m = ThreeDoorsModel::default();
    let run = m.simulate(&mut Rng::new(seed));
    let hyps = m.exact_hypotheses(&run.observations);
    let (m0, s0) = m.initial_moments();
    let prior_cov = DMatrix::from_diagonal(&DVector::from_vec(s0.iter().map(|s| s * s).collect()));
    let mut worst: f64 = 0.0;
    for (t, step) in hyps.iter().enumerate() {
        for h in step {
            let c = *h.associations.last().unwrap();
            let y = run.observations[t][0];
            let (mean, cov) = if t == 0 {
                (m0.clone(), prior_cov.clone())
            } else {
                (h.prior_mean.clone(), DMatrix::from_fn(4, 4, |i, j| h.prior_cov[i][j]))
            };
            let spread = DMatrix::from_fn(4, 4, |i, j| h.cov[i][j]);
            let q = quadrature_likelihood(&mean, &cov, (&h.mean, &spread), c, y, m.var_obs);
            worst = worst.max((h.log_increment.exp() - q).abs() / q);
        }
    }
    worst
}

/// GMM-3 first coordinate, Gaussian second, linked with correlation `rho`.
pub fn gmm_pair(rho: f64) -> VariationalParams {
    let mut p = VariationalParams::standard(LatentLayout::new(1, 1, 1), 1, Frame::Absolute);
    p.theta.state_landmark = vec![rho / (1.0 - rho * rho).sqrt()];
    p.eta[0] = vec![
        Marginal::Mixture { logits: vec![0.2, -0.5, 0.1], means: vec![-2.0, 0.5, 3.0], log_stds: vec![-0.3, -0.6, 0.0] },
        Marginal::Gaussian { mean: 1.0, log_std: 0.2 },
    ];
    p
}

/// Chi-square test of `n` proposal draws against the proposal density integrated over a
/// 11 x 9 grid of boxes plus one bin for everything outside.
pub fn proposal_histogram_test(rho: f64, n: usize, seed: u64) -> (f64, usize, f64) {
    let p = gmm_pair(rho);
    let (x_lo, x_hi, nx) = (-5.0, 6.0, 11);
    let (y_lo, y_hi, ny) = (-3.5, 5.5, 9);
    let (wx, wy) = ((x_hi - x_lo) / nx as f64, (y_hi - y_lo) / ny as f64);
    let sub = 16;
    let mut expected = vec![0.0; nx * ny + 1];
    for i in 0..nx {
        for j in 0..ny {
            let mut mass = 0.0;
            for a in 0..sub {
                for b in 0..sub {
                    let x = x_lo + wx * (i as f64 + (a as f64 + 0.5) / sub as f64);
                    let y = y_lo + wy * (j as f64 + (b as f64 + 0.5) / sub as f64);
                    mass += proposal_logpdf(&[x, y], 0, &p).unwrap().exp();
                }
            }
            expected[i * ny + j] = mass * wx * wy / (sub * sub) as f64;
        }
    }
    let inside: f64 = expected.iter().sum();
    expected[nx * ny] = 1.0 - inside;
    assert!(inside > 0.99 && inside < 1.0 + 1e-6, "box mass {inside}");

    let mut rng = Rng::new(seed);
    let mut observed = vec![0.0; nx * ny + 1];
    for _ in 0..n {
        let s = proposal_sample(&NoiseDraw::sample(2, &mut rng), 0, &p).unwrap();
        let (i, j) = (((s[0] - x_lo) / wx).floor(), ((s[1] - y_lo) / wy).floor());
        let k = if i >= 0.0 && (i as usize) < nx && j >= 0.0 && (j as usize) < ny { i as usize * ny + j as usize } else { nx * ny };
        observed[k] += 1.0;
    }
    let expected: Vec<f64> = expected.iter().map(|e| e * n as f64).collect();
    chi_square(&observed, &expected)
}

