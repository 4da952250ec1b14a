use nalgebra::DMatrix;

use crate::copula::{lkj_factor_with_jacobian, lkj_index, CopulaHierarchy, CopulaTheta, LatentLayout};
use crate::error::{Error, Result};
use crate::stats::CholeskyFactor;

/// Cholesky factor `A` of the full proposal correlation matrix, plus optional
/// derivatives with respect to the flattened copula parameters.
#[derive(Debug, Clone)]
pub struct FullFactor {
    pub a: DMatrix<f64>,
    pub log_det: f64,
    /// `dA / dtheta_m` in [`CopulaTheta::flatten`] order; empty when not requested.
    pub da: Vec<DMatrix<f64>>,
    /// `d log det A / dtheta_m`.
    pub dlog_det: Vec<f64>,
}

struct Embedded {
    e: DMatrix<f64>,
    de: Vec<DMatrix<f64>>,
}

fn embed(d: usize, l: &DMatrix<f64>, dl: &[DMatrix<f64>], groups: &[Vec<usize>]) -> Embedded {
    let mut e = DMatrix::<f64>::identity(d, d);
    let mut de = vec![DMatrix::<f64>::zeros(d, d); dl.len()];
    for idx in groups {
        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate().take(a + 1) {
                e[(ia, ib)] = l[(a, b)];
                for (m, g) in dl.iter().enumerate() {
                    de[m][(ia, ib)] = g[(a, b)];
                }
            }
        }
    }
    Embedded { e, de }
}

/// Assembles `A = rownorm(E_sl E_ll E_s E_l)`, where each `E` embeds one structure's
/// LKJ factor into the identity (the landmark/landmark factor once per landmark
/// coordinate, the landmark-component factor once per landmark). `A` is lower
/// triangular with unit rows, so `A A^T` is a valid correlation matrix. When at most
/// one structure is active, or the active ones touch disjoint coordinates, this is
/// exactly the product of the sub-copulas.
pub fn assemble_factor(theta: &CopulaTheta, layout: &LatentLayout, with_grad: bool) -> Result<FullFactor> {
    theta.check(layout)?;
    let d = layout.dim();

    let (l_sl, dl_full) = lkj_factor_with_jacobian(&theta.expanded_state_landmark(layout), d)?;
    let dl_sl: Vec<_> = layout.cross_pairs().iter().map(|&(i, j)| dl_full[lkj_index(i, j)].clone()).collect();
    let (l_ll, dl_ll) = lkj_factor_with_jacobian(&theta.landmark_landmark, layout.n_landmarks)?;
    let (l_s, dl_s) = lkj_factor_with_jacobian(&theta.state, layout.state_dim)?;
    let (l_l, dl_l) = lkj_factor_with_jacobian(&theta.landmark, layout.landmark_dim)?;

    let coords: Vec<_> = (0..layout.landmark_dim).map(|k| layout.coordinate_group(k)).collect();
    let marks: Vec<_> = (0..layout.n_landmarks).map(|j| layout.landmark_group(j)).collect();
    let parts = [
        embed(d, &l_sl, &dl_sl, &[(0..d).collect()]),
        embed(d, &l_ll, &dl_ll, &coords),
        embed(d, &l_s, &dl_s, &[layout.state_group()]),
        embed(d, &l_l, &dl_l, &marks),
    ];

    let mut prefix = vec![DMatrix::<f64>::identity(d, d)];
    for p in &parts {
        let next = prefix.last().unwrap() * &p.e;
        prefix.push(next);
    }
    let b = prefix.pop().unwrap();

    let mut a = b.clone();
    let mut norms = vec![0.0; d];
    for i in 0..d {
        let r = b.row(i).norm();
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Numeric(format!("assembled copula factor has a degenerate row {i} (theta {:?})", theta.flatten())));
        }
        norms[i] = r;
        for c in 0..d {
            a[(i, c)] = b[(i, c)] / r;
        }
    }
    let mut log_det = 0.0;
    for i in 0..d {
        if !(a[(i, i)] > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: i, value: a[(i, i)] });
        }
        log_det += a[(i, i)].ln();
    }

    let mut da = Vec::new();
    let mut dlog_det = Vec::new();
    if with_grad {
        let mut suffix = vec![DMatrix::<f64>::identity(d, d); parts.len()];
        for k in (0..parts.len() - 1).rev() {
            suffix[k] = &parts[k + 1].e * &suffix[k + 1];
        }
        for (k, p) in parts.iter().enumerate() {
            for de in &p.de {
                let db = &prefix[k] * de * &suffix[k];
                let mut g = DMatrix::<f64>::zeros(d, d);
                let mut gl = 0.0;
                for i in 0..d {
                    let proj: f64 = (0..d).map(|c| a[(i, c)] * db[(i, c)]).sum();
                    for c in 0..d {
                        g[(i, c)] = (db[(i, c)] - a[(i, c)] * proj) / norms[i];
                    }
                    gl += g[(i, i)] / a[(i, i)];
                }
                da.push(g);
                dlog_det.push(gl);
            }
        }
    }
    Ok(FullFactor { a, log_det, da, dlog_det })
}

/// The Cholesky factor of the single Gaussian copula that the proposal samples from.
pub fn assemble_full_cholesky(h: &CopulaHierarchy) -> Result<CholeskyFactor> {
    let lay = h.layout;
    let theta = CopulaTheta {
        state_landmark: lay
            .cross_pairs()
            .iter()
            .map(|&(i, j)| h.state_landmark.theta()[lkj_index(i, j)])
            .collect(),
        landmark_landmark: h.landmark_landmark.theta().to_vec(),
        state: h.state_components.theta().to_vec(),
        landmark: h.landmark_components.theta().to_vec(),
    };
    CholeskyFactor::from_lower(assemble_factor(&theta, &lay, false)?.a)
}
