//! Gaussian copulas, the LKJ parameterization of correlation matrices, and the
//! four-level copula hierarchy over a pose and its landmarks.
//!
//! A correlation matrix is never parameterized directly. An unconstrained vector
//! `theta` of length `M(M-1)/2` fills the strict lower triangle of an `M x M`
//! matrix, the identity is added, and every row is scaled to unit Euclidean norm.
//! The result is a Cholesky factor on the oblique manifold, so `P = L L^T` always
//! has a unit diagonal and is positive semidefinite, and the map is smooth in
//! `theta`.
//!
//! The hierarchy couples
//! * the state with the landmarks (`state_landmark`, over all `d` coordinates,
//!   with only state/landmark cross entries free),
//! * the landmarks with each other (`landmark_landmark`, an `M x M` copula applied
//!   once per landmark coordinate),
//! * the scalar components of the state (`state_components`, `d_s x d_s`),
//! * the scalar components of each landmark (`landmark_components`, `d_l x d_l`,
//!   one object shared by every landmark).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::stats::{clamp_prob, norm_cdf, norm_quantile, CholeskyFactor, Rng};

/// Smallest determinant of a correlation matrix accepted by the copula density.
pub const MIN_CORR_DET: f64 = 1e-300;

/// Shape of one latent vector `x_t = (s_t, l_1, ..., l_M)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentLayout {
    pub state_dim: usize,
    pub n_landmarks: usize,
    pub landmark_dim: usize,
}

impl LatentLayout {
    pub fn new(state_dim: usize, n_landmarks: usize, landmark_dim: usize) -> Self {
        Self { state_dim, n_landmarks, landmark_dim }
    }

    /// Total number of scalar components `d = d_s + M * d_l`.
    pub fn dim(&self) -> usize {
        self.state_dim + self.n_landmarks * self.landmark_dim
    }

    /// Flat index of coordinate `k` of landmark `j`.
    pub fn landmark_index(&self, j: usize, k: usize) -> usize {
        self.state_dim + j * self.landmark_dim + k
    }

    /// Flat indices of landmark `j`.
    pub fn landmark_group(&self, j: usize) -> Vec<usize> {
        (0..self.landmark_dim).map(|k| self.landmark_index(j, k)).collect()
    }

    /// Flat indices of coordinate `k` across all landmarks.
    pub fn coordinate_group(&self, k: usize) -> Vec<usize> {
        (0..self.n_landmarks).map(|j| self.landmark_index(j, k)).collect()
    }

    pub fn state_group(&self) -> Vec<usize> {
        (0..self.state_dim).collect()
    }

    /// `(row, col)` pairs of the strict lower triangle that couple a state
    /// component with a landmark component, in storage order.
    pub fn cross_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for i in self.state_dim..self.dim() {
            for j in 0..self.state_dim {
                pairs.push((i, j));
            }
        }
        pairs
    }
}

/// Number of LKJ parameters for an `m x m` correlation matrix.
pub fn lkj_len(m: usize) -> usize {
    m * m.saturating_sub(1) / 2
}

/// Storage index of `(i, j)`, `i > j`, in a row-major strict lower triangle.
pub fn lkj_index(i: usize, j: usize) -> usize {
    debug_assert!(i > j);
    i * (i - 1) / 2 + j
}

/// A correlation matrix together with its unconstrained parameters and its
/// oblique-manifold Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationStructure {
    theta: Vec<f64>,
    factor: CholeskyFactor,
    corr: DMatrix<f64>,
}

impl CorrelationStructure {
    pub fn identity(dim: usize) -> Self {
        lkj_build(&vec![0.0; lkj_len(dim)], dim).expect("zero theta always builds")
    }

    pub fn dim(&self) -> usize {
        self.factor.dim()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    pub fn corr(&self) -> &DMatrix<f64> {
        &self.corr
    }

    pub fn is_identity(&self) -> bool {
        self.theta.iter().all(|&t| t == 0.0)
    }
}

/// Builds a correlation structure from unconstrained parameters.
pub fn lkj_build(theta: &[f64], dim: usize) -> Result<CorrelationStructure> {
    let l = lkj_factor(theta, dim)?;
    let corr = &l * l.transpose();
    let factor = CholeskyFactor::from_lower(l)?;
    Ok(CorrelationStructure { theta: theta.to_vec(), factor, corr })
}

/// The LKJ Cholesky factor alone.
pub fn lkj_factor(theta: &[f64], dim: usize) -> Result<DMatrix<f64>> {
    if theta.len() != lkj_len(dim) {
        return domain(format!(
            "LKJ transform of dimension {dim} needs {} parameters, got {}",
            lkj_len(dim),
            theta.len()
        ));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Numeric("LKJ parameters must be finite".into()));
    }
    let mut l = DMatrix::<f64>::identity(dim, dim);
    for i in 1..dim {
        for j in 0..i {
            l[(i, j)] = theta[lkj_index(i, j)];
        }
    }
    for i in 0..dim {
        // scale before squaring so very large parameters do not overflow
        let big = l.row(i).amax();
        let norm = big * (l.row(i) / big).norm();
        l.row_mut(i).unscale_mut(norm);
    }
    Ok(l)
}

/// The LKJ factor and its derivative with respect to every parameter.
///
/// Parameter `(i, j)` only moves row `i`: with `r_i` the pre-normalization row norm,
/// `dL[i][c] / dtheta(i, j) = (delta(c, j) - L[i][c] * L[i][j]) / r_i` for `c <= i`.
pub fn lkj_factor_with_jacobian(theta: &[f64], dim: usize) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let l = lkj_factor(theta, dim)?;
    let mut grads = Vec::with_capacity(theta.len());
    for i in 1..dim {
        // r_i = 1 / L_ii
        let inv_r = l[(i, i)];
        for j in 0..i {
            let mut d = DMatrix::<f64>::zeros(dim, dim);
            for c in 0..=i {
                let delta = if c == j { 1.0 } else { 0.0 };
                d[(i, c)] = (delta - l[(i, c)] * l[(i, j)]) * inv_r;
            }
            grads.push(d);
        }
    }
    Ok((l, grads))
}

/// Gaussian copula log-density at `u` under correlation `corr`:
/// `-1/2 z^T (P^-1 - I) z - 1/2 log det P` with `z_i = Phi^-1(u_i)`.
pub fn gauss_copula_logdensity(u: &[f64], corr: &CorrelationStructure) -> Result<f64> {
    if u.len() != corr.dim() {
        return domain(format!("copula of dimension {} evaluated at a {}-vector", corr.dim(), u.len()));
    }
    let mut z = Vec::with_capacity(u.len());
    for &ui in u {
        if !(ui > 0.0 && ui < 1.0) {
            return domain(format!("copula argument {ui} outside (0, 1)"));
        }
        z.push(norm_quantile(clamp_prob(ui))?);
    }
    gauss_copula_logdensity_scores(&z, corr)
}

/// Gaussian copula log-density expressed on normal scores `z = Phi^-1(u)`.
pub fn gauss_copula_logdensity_scores(z: &[f64], corr: &CorrelationStructure) -> Result<f64> {
    if corr.is_identity() {
        return Ok(0.0);
    }
    let log_det = corr.factor().log_det();
    if !(log_det >= MIN_CORR_DET.ln()) {
        return Err(Error::Numeric(format!("correlation matrix is singular (log det {log_det})")));
    }
    let zv = DVector::from_column_slice(z);
    let w = corr.factor().solve_lower(&zv);
    Ok(-0.5 * (w.norm_squared() - zv.norm_squared()) - 0.5 * log_det)
}

/// Draws `u` from the Gaussian copula: `z = L eps`, `u_i = Phi(z_i)`.
pub fn gauss_copula_sample(corr: &CorrelationStructure, rng: &mut Rng) -> Vec<f64> {
    let eps = DVector::from_vec(rng.standard_normal_vec(corr.dim()));
    let z = corr.factor().matrix() * eps;
    z.iter().map(|&v| norm_cdf(v)).collect()
}

/// Unconstrained parameters of the four copulas, shared across time steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaTheta {
    /// Free state/landmark cross entries, ordered as [`LatentLayout::cross_pairs`].
    pub state_landmark: Vec<f64>,
    /// LKJ parameters of the `M x M` landmark copula.
    pub landmark_landmark: Vec<f64>,
    /// LKJ parameters of the `d_s x d_s` state-component copula.
    pub state: Vec<f64>,
    /// LKJ parameters of the `d_l x d_l` landmark-component copula.
    pub landmark: Vec<f64>,
}

impl CopulaTheta {
    pub fn zeros(layout: &LatentLayout) -> Self {
        Self {
            state_landmark: vec![0.0; layout.cross_pairs().len()],
            landmark_landmark: vec![0.0; lkj_len(layout.n_landmarks)],
            state: vec![0.0; lkj_len(layout.state_dim)],
            landmark: vec![0.0; lkj_len(layout.landmark_dim)],
        }
    }

    pub fn len(&self) -> usize {
        self.state_landmark.len() + self.landmark_landmark.len() + self.state.len() + self.landmark.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.state_landmark);
        v.extend_from_slice(&self.landmark_landmark);
        v.extend_from_slice(&self.state);
        v.extend_from_slice(&self.landmark);
        v
    }

    /// Inverse of [`CopulaTheta::flatten`] for a layout; consumes from the front of `flat`.
    pub fn unflatten(layout: &LatentLayout, flat: &[f64]) -> Result<(Self, usize)> {
        let mut out = Self::zeros(layout);
        let n = out.len();
        if flat.len() < n {
            return domain("flat parameter vector too short for the copula block");
        }
        let mut k = 0;
        for slot in [&mut out.state_landmark, &mut out.landmark_landmark, &mut out.state, &mut out.landmark] {
            let len = slot.len();
            slot.copy_from_slice(&flat[k..k + len]);
            k += len;
        }
        Ok((out, n))
    }

    pub fn check(&self, layout: &LatentLayout) -> Result<()> {
        let z = Self::zeros(layout);
        if self.state_landmark.len() != z.state_landmark.len()
            || self.landmark_landmark.len() != z.landmark_landmark.len()
            || self.state.len() != z.state.len()
            || self.landmark.len() != z.landmark.len()
        {
            return domain("copula parameter blocks do not match the latent layout");
        }
        if self.flatten().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("copula parameters must be finite".into()));
        }
        Ok(())
    }

    /// Full-length LKJ vector for the state/landmark copula, with every entry that
    /// is not a state/landmark cross pair held at zero.
    pub fn expanded_state_landmark(&self, layout: &LatentLayout) -> Vec<f64> {
        let mut full = vec![0.0; lkj_len(layout.dim())];
        for (&(i, j), &v) in layout.cross_pairs().iter().zip(&self.state_landmark) {
            full[lkj_index(i, j)] = v;
        }
        full
    }
}

/// The four correlation structures of the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaHierarchy {
    pub layout: LatentLayout,
    pub state_landmark: CorrelationStructure,
    pub landmark_landmark: CorrelationStructure,
    pub state_components: CorrelationStructure,
    pub landmark_components: CorrelationStructure,
}

impl CopulaHierarchy {
    pub fn new(theta: &CopulaTheta, layout: LatentLayout) -> Result<Self> {
        theta.check(&layout)?;
        Ok(Self {
            layout,
            state_landmark: lkj_build(&theta.expanded_state_landmark(&layout), layout.dim())?,
            landmark_landmark: lkj_build(&theta.landmark_landmark, layout.n_landmarks)?,
            state_components: lkj_build(&theta.state, layout.state_dim)?,
            landmark_components: lkj_build(&theta.landmark, layout.landmark_dim)?,
        })
    }

    pub fn independent(layout: LatentLayout) -> Self {
        Self::new(&CopulaTheta::zeros(&layout), layout).expect("zero theta always builds")
    }
}

/// Sum of the four sub-copula log-densities at the given uniforms:
/// `log c(s,l) + sum_k log c(l,l) + log c(s) + sum_j log c(l)`.
pub fn hierarchy_logdensity(u_state: &[f64], u_landmarks: &[Vec<f64>], h: &CopulaHierarchy) -> Result<f64> {
    let lay = &h.layout;
    if u_state.len() != lay.state_dim
        || u_landmarks.len() != lay.n_landmarks
        || u_landmarks.iter().any(|l| l.len() != lay.landmark_dim)
    {
        return domain("hierarchy evaluated at inputs that do not match its layout");
    }
    let mut all = u_state.to_vec();
    for l in u_landmarks {
        all.extend_from_slice(l);
    }
    let mut total = gauss_copula_logdensity(&all, &h.state_landmark)?;
    if lay.n_landmarks > 0 {
        for k in 0..lay.landmark_dim {
            let sub: Vec<f64> = u_landmarks.iter().map(|l| l[k]).collect();
            total += gauss_copula_logdensity(&sub, &h.landmark_landmark)?;
        }
    }
    total += gauss_copula_logdensity(u_state, &h.state_components)?;
    for l in u_landmarks {
        total += gauss_copula_logdensity(l, &h.landmark_components)?;
    }
    Ok(total)
}
