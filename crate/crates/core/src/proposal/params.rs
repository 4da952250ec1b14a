use std::path::Path;

use serde::{Deserialize, Serialize};

use super::marginal::{Marginal, MarginalKind};
use crate::copula::{CopulaTheta, LatentLayout};
use crate::error::{domain, Error, Result};
use crate::stats::Rng;

/// Coordinates in which the per-step marginals are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Marginals describe `x_t` directly.
    #[default]
    Absolute,
    /// Marginals describe `(x_t - m_t) / s_t`, where `m_t` and `s_t` are the mean and
    /// standard deviation of the model's prior (first step) or transition from the
    /// particle's parent.
    TransitionResidual,
}

/// Standard deviation of the initial copula parameters.
pub const THETA_INIT_STD: f64 = 0.01;

/// The variational parameters `lambda = {theta, eta}`.
///
/// `theta` is shared across time; `eta[t][i]` is the marginal of component `i` at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub layout: LatentLayout,
    #[serde(default)]
    pub frame: Frame,
    pub theta: CopulaTheta,
    pub eta: Vec<Vec<Marginal>>,
}

impl VariationalParams {
    /// Random initialization: `theta ~ N(0, 0.01^2)`, marginal means `~ N(0, 1)`,
    /// unit scales and uniform mixture weights.
    pub fn init(layout: LatentLayout, horizon: usize, kinds: &[MarginalKind], frame: Frame, rng: &mut Rng) -> Result<Self> {
        if kinds.len() != layout.dim() {
            return domain(format!("{} marginal kinds given for a {}-dimensional latent", kinds.len(), layout.dim()));
        }
        let mut theta = CopulaTheta::zeros(&layout);
        let flat: Vec<f64> = (0..theta.len()).map(|_| THETA_INIT_STD * rng.standard_normal()).collect();
        theta = CopulaTheta::unflatten(&layout, &flat)?.0;
        let mut eta = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let mut step = Vec::with_capacity(kinds.len());
            for kind in kinds {
                step.push(match *kind {
                    MarginalKind::Gaussian => Marginal::Gaussian { mean: rng.standard_normal(), log_std: 0.0 },
                    MarginalKind::Mixture { components } => {
                        if components == 0 {
                            return domain("mixture marginal needs at least one component");
                        }
                        Marginal::Mixture {
                            logits: vec![0.0; components],
                            means: rng.standard_normal_vec(components),
                            log_stds: vec![0.0; components],
                        }
                    }
                });
            }
            eta.push(step);
        }
        Ok(Self { layout, frame, theta, eta })
    }

    /// Independent standard-normal marginals and zero copula parameters.
    pub fn standard(layout: LatentLayout, horizon: usize, frame: Frame) -> Self {
        Self {
            layout,
            frame,
            theta: CopulaTheta::zeros(&layout),
            eta: vec![vec![Marginal::standard_gaussian(); layout.dim()]; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.eta.len()
    }

    pub fn n_theta(&self) -> usize {
        self.theta.len()
    }

    /// Number of marginal parameters at step `t`.
    pub fn n_eta_step(&self, t: usize) -> usize {
        self.eta[t].iter().map(Marginal::n_params).sum()
    }

    /// Offset of step `t`'s marginal block in the flat vector.
    pub fn eta_offset(&self, t: usize) -> usize {
        self.n_theta() + (0..t).map(|s| self.n_eta_step(s)).sum::<usize>()
    }

    pub fn len(&self) -> usize {
        self.eta_offset(self.horizon())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `theta` (in [`CopulaTheta::flatten`] order) followed by every marginal, step by step.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.theta.flatten();
        for step in &self.eta {
            for m in step {
                m.flatten_into(&mut v);
            }
        }
        v
    }

    /// Overwrites all parameters from a flat vector of matching length.
    pub fn assign(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return domain(format!("flat vector of length {} for {} parameters", flat.len(), self.len()));
        }
        let (theta, mut k) = CopulaTheta::unflatten(&self.layout, flat)?;
        self.theta = theta;
        for step in &mut self.eta {
            for m in step {
                let n = m.n_params();
                m.assign(&flat[k..k + n]);
                k += n;
            }
        }
        Ok(())
    }

    /// Human-readable path of flat parameter `index`, e.g. `eta[1][0].means[2]`.
    pub fn param_name(&self, index: usize) -> String {
        let blocks = [
            ("state_landmark", self.theta.state_landmark.len()),
            ("landmark_landmark", self.theta.landmark_landmark.len()),
            ("state", self.theta.state.len()),
            ("landmark", self.theta.landmark.len()),
        ];
        let mut k = index;
        for (name, len) in blocks {
            if k < len {
                return format!("theta.{name}[{k}]");
            }
            k -= len;
        }
        for (t, step) in self.eta.iter().enumerate() {
            for (i, m) in step.iter().enumerate() {
                let n = m.n_params();
                if k < n {
                    let field = match m {
                        Marginal::Gaussian { .. } => ["mean", "log_std"][k].to_string(),
                        Marginal::Mixture { means, .. } => {
                            let c = means.len();
                            format!("{}[{}]", ["logits", "means", "log_stds"][k / c], k % c)
                        }
                    };
                    return format!("eta[{t}][{i}].{field}");
                }
                k -= n;
            }
        }
        format!("<out of range {index}>")
    }

    pub fn check(&self) -> Result<()> {
        self.theta.check(&self.layout)?;
        for (t, step) in self.eta.iter().enumerate() {
            if step.len() != self.layout.dim() {
                return domain(format!("step {t} has {} marginals, layout needs {}", step.len(), self.layout.dim()));
            }
            for (i, m) in step.iter().enumerate() {
                m.check().map_err(|e| Error::Domain(format!("marginal ({t}, {i}): {e}")))?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.check()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> VariationalParams {
        let lay = LatentLayout::new(1, 3, 1);
        let mut kinds = vec![MarginalKind::Gaussian; 4];
        kinds[0] = MarginalKind::Mixture { components: 3 };
        VariationalParams::init(lay, 3, &kinds, Frame::TransitionResidual, &mut Rng::new(4)).unwrap()
    }

    #[test]
    fn flatten_assign_roundtrip() {
        let p = sample();
        assert_eq!(p.len(), 3 + 3 + 0 + 0 + 3 * (9 + 6));
        let mut q = VariationalParams::standard(p.layout, 3, Frame::Absolute);
        q.eta = p.eta.iter().map(|s| s.iter().map(|m| match m {
            Marginal::Mixture { .. } => Marginal::Mixture { logits: vec![0.0; 3], means: vec![0.0; 3], log_stds: vec![0.0; 3] },
            g => g.clone(),
        }).collect()).collect();
        q.frame = p.frame;
        q.assign(&p.flatten()).unwrap();
        assert_eq!(q, p);
        assert_eq!(p.eta_offset(1), 6 + 15);
    }

    #[test]
    fn json_roundtrip_is_lossless() {
        let p = sample();
        let back = VariationalParams::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        let v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        assert!(v["theta"]["landmark_landmark"].is_array());
        assert_eq!(v["eta"][2][0]["family"], "mixture");
    }

    #[test]
    fn init_statistics() {
        let p = sample();
        assert!(p.theta.flatten().iter().all(|t| t.abs() < 0.05));
        for step in &p.eta {
            match &step[0] {
                Marginal::Mixture { logits, log_stds, .. } => {
                    assert!(logits.iter().chain(log_stds).all(|&v| v == 0.0));
                }
                _ => panic!("pose marginal should be a mixture"),
            }
        }
        assert!(p.check().is_ok());
    }
}
