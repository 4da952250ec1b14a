//! Scalar and small-matrix probability primitives.
//!
//! Everything in this module is deterministic given its inputs (samplers take an
//! explicit [`Rng`]). The normal CDF is built on `erfc`, the quantile on Wichura's
//! AS241 rational approximation polished by a Newton step, and mixture quantiles on
//! bracketing bisection followed by Newton polishing, because quantiles sit on the
//! reparameterization path and feed gradients.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// ln(sqrt(2 pi))
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before any quantile call.
pub const PROB_CLAMP: f64 = 1e-15;

/// Bisection tolerance for mixture quantiles.
pub const QUANTILE_TOL: f64 = 1e-10;

/// Iteration cap for mixture quantile bisection.
pub const QUANTILE_MAX_ITER: usize = 200;

/// Half-width of the mixture quantile bracket, in units of the widest component.
pub const QUANTILE_BRACKET_SIGMAS: f64 = 12.0;

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Log of the standard normal density.
#[inline]
pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF. Saturates to 0 or 1 in the far tails.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal survival function `1 - norm_cdf(x)`, accurate in the upper tail.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    norm_cdf(-x)
}

/// Clamp a probability into the open interval used by every quantile call.
#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Standard normal quantile.
///
/// Returns a domain error unless `0 < p < 1`. Accurate to better than 1e-9 absolute
/// on `(1e-12, 1 - 1e-12)`.
pub fn norm_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("norm_quantile requires 0 < p < 1, got {p}"));
    }
    let x = as241(p);
    // one Newton step on the tail that holds the precision
    let x = if p < 0.5 {
        x - (norm_cdf(x) - p) / norm_pdf(x)
    } else {
        x + (norm_sf(x) - (1.0 - p)) / norm_pdf(x)
    };
    Ok(x)
}

/// Quantile of the upper tail: the `x` with `norm_sf(x) = q`.
///
/// Equivalent to `-norm_quantile(q)` but spelled out for readability at call sites.
pub fn norm_quantile_upper(q: f64) -> Result<f64> {
    norm_quantile(q).map(|x| -x)
}

// Wichura, AS241 (PPND16).
fn as241(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((5.226_495_278_852_854_5e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Numerically stable `ln(sum(exp(xs)))`. Returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// A univariate normal distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian1D {
    pub mean: f64,
    pub std: f64,
}

impl Gaussian1D {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite()) || !mean.is_finite() {
            return domain(format!("Gaussian1D needs finite mean and std > 0, got ({mean}, {std})"));
        }
        Ok(Self { mean, std })
    }

    pub fn standard() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    #[inline]
    pub fn logpdf(&self, x: f64) -> f64 {
        norm_logpdf((x - self.mean) / self.std) - self.std.ln()
    }

    #[inline]
    pub fn cdf(&self, x: f64) -> f64 {
        norm_cdf((x - self.mean) / self.std)
    }

    #[inline]
    pub fn sf(&self, x: f64) -> f64 {
        norm_sf((x - self.mean) / self.std)
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        self.mean + self.std * rng.standard_normal()
    }
}

/// A finite mixture of univariate normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture1D {
    pub weights: Vec<f64>,
    pub components: Vec<Gaussian1D>,
}

impl GaussianMixture1D {
    /// Builds a mixture whose weights already sum to one (within 1e-12).
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian1D>) -> Result<Self> {
        if components.is_empty() || weights.len() != components.len() {
            return domain("mixture needs at least one component and one weight per component");
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return domain("mixture weights must be finite and nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return domain(format!("mixture weights sum to {total}, expected 1"));
        }
        Ok(Self { weights, components })
    }

    /// Builds a mixture from nonnegative weights, normalizing them.
    pub fn normalized(weights: Vec<f64>, components: Vec<Gaussian1D>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return domain("mixture weights must have a positive finite sum");
        }
        Self::new(weights.iter().map(|w| w / total).collect(), components)
    }

    pub fn single(g: Gaussian1D) -> Self {
        Self { weights: vec![1.0], components: vec![g] }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn logpdf(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.logpdf(x))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.weights.iter().zip(&self.components).map(|(w, c)| w * c.cdf(x)).sum()
    }

    pub fn sf(&self, x: f64) -> f64 {
        self.weights.iter().zip(&self.components).map(|(w, c)| w * c.sf(x)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.components).map(|(w, c)| w * c.mean).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w * (c.std * c.std + (c.mean - m).powi(2)))
            .sum()
    }

    /// `(lo, hi)` bracket used by the quantile search.
    pub fn support_bracket(&self) -> (f64, f64) {
        let max_std = self.components.iter().map(|c| c.std).fold(0.0, f64::max);
        let lo = self.components.iter().map(|c| c.mean).fold(f64::INFINITY, f64::min);
        let hi = self.components.iter().map(|c| c.mean).fold(f64::NEG_INFINITY, f64::max);
        (lo - QUANTILE_BRACKET_SIGMAS * max_std, hi + QUANTILE_BRACKET_SIGMAS * max_std)
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let k = Categorical::new(&self.weights).map(|c| c.sample(rng)).unwrap_or(0);
        self.components[k].sample(rng)
    }
}

/// Log-density of a Gaussian mixture at `x`.
pub fn mixture_logpdf(x: f64, m: &GaussianMixture1D) -> f64 {
    m.logpdf(x)
}

/// CDF of a Gaussian mixture at `x`.
pub fn mixture_cdf(x: f64, m: &GaussianMixture1D) -> f64 {
    m.cdf(x)
}

/// Quantile of a Gaussian mixture at probability `p`.
pub fn mixture_quantile(p: f64, m: &GaussianMixture1D) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("mixture_quantile requires 0 < p < 1, got {p}"));
    }
    let p = clamp_prob(p);
    if p <= 0.5 {
        solve_monotone(|x| m.cdf(x), |x| m.logpdf(x).exp(), p, m.support_bracket(), true)
    } else {
        solve_monotone(|x| m.sf(x), |x| m.logpdf(x).exp(), 1.0 - p, m.support_bracket(), false)
    }
}

/// Solve `F(x) = Phi(score)` for a distribution given by its CDF and survival
/// function, choosing whichever tail keeps full precision.
pub fn quantile_from_score<C, S, D>(score: f64, cdf: C, sf: S, pdf: D, bracket: (f64, f64)) -> Result<f64>
where
    C: Fn(f64) -> f64,
    S: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    if score <= 0.0 {
        solve_monotone(cdf, pdf, clamp_prob(norm_cdf(score)), bracket, true)
    } else {
        solve_monotone(sf, pdf, clamp_prob(norm_sf(score)), bracket, false)
    }
}

// Bisection on a monotone function followed by a few guarded Newton steps.
// `increasing` says whether `g` is a CDF (true) or a survival function (false).
fn solve_monotone<G, D>(g: G, pdf: D, target: f64, bracket: (f64, f64), increasing: bool) -> Result<f64>
where
    G: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let (mut lo, mut hi) = bracket;
    let below = |x: f64| if increasing { g(x) < target } else { g(x) > target };
    let mut iterations = 0;
    while hi - lo > QUANTILE_TOL {
        if iterations == QUANTILE_MAX_ITER {
            return Err(Error::NoConvergence { iterations, target, lo, hi });
        }
        let mid = 0.5 * (lo + hi);
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let mut x = 0.5 * (lo + hi);
    let sign = if increasing { 1.0 } else { -1.0 };
    for _ in 0..3 {
        let d = pdf(x);
        if !(d > 0.0) {
            break;
        }
        let step = sign * (g(x) - target) / d;
        let next = x - step;
        if !next.is_finite() || next < lo - QUANTILE_TOL || next > hi + QUANTILE_TOL {
            break;
        }
        x = next;
        if step.abs() < 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Sampler for a categorical distribution over `0..weights.len()`.
#[derive(Debug, Clone)]
pub struct Categorical {
    cumulative: Vec<f64>,
}

impl Categorical {
    /// Validates and normalizes `weights`.
    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return domain("categorical distribution needs at least one weight");
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return domain("categorical weights must be finite and nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return domain("categorical weights are all zero");
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Ok(Self { cumulative })
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u = rng.uniform();
        let idx = self.cumulative.partition_point(|&c| c <= u);
        // floating round-off may leave the last cumulative entry just under 1
        let idx = idx.min(self.cumulative.len() - 1);
        // skip zero-weight slots that share a cumulative value with their predecessor
        self.first_with_mass(idx)
    }

    fn first_with_mass(&self, mut idx: usize) -> usize {
        let mass = |i: usize| {
            if i == 0 {
                self.cumulative[0]
            } else {
                self.cumulative[i] - self.cumulative[i - 1]
            }
        };
        while mass(idx) <= 0.0 && idx > 0 {
            idx -= 1;
        }
        idx
    }
}

/// Draw one index with probability proportional to `weights`.
pub fn categorical_sample(weights: &[f64], rng: &mut Rng) -> Result<usize> {
    Ok(Categorical::new(weights)?.sample(rng))
}

/// A lower-triangular Cholesky factor with strictly positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
}

impl CholeskyFactor {
    /// Wraps a lower-triangular matrix, checking the factor invariants.
    pub fn from_lower(l: DMatrix<f64>) -> Result<Self> {
        if !l.is_square() {
            return domain("Cholesky factor must be square");
        }
        for i in 0..l.nrows() {
            let v = l[(i, i)];
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: i, value: v });
            }
            for j in (i + 1)..l.ncols() {
                if l[(i, j)] != 0.0 {
                    return domain(format!("entry ({i}, {j}) above the diagonal is nonzero"));
                }
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.l
    }

    /// `L * L^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }

    /// Log-determinant of `L * L^T`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let mut s = b[i];
            for j in 0..i {
                s -= self.l[(i, j)] * y[j];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    /// Solves `(L L^T) x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let y = self.solve_lower(b);
        let mut x = DVector::zeros(n);
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in (i + 1)..n {
                s -= self.l[(j, i)] * x[j];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }
}

/// Cholesky decomposition of a symmetric positive-definite matrix.
pub fn cholesky(mat: &DMatrix<f64>) -> Result<CholeskyFactor> {
    if !mat.is_square() {
        return domain("cholesky needs a square matrix");
    }
    let n = mat.nrows();
    for i in 0..n {
        for j in 0..i {
            if (mat[(i, j)] - mat[(j, i)]).abs() > 1e-12 {
                return domain(format!("matrix is not symmetric at ({i}, {j})"));
            }
        }
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = mat[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: diag });
        }
        let d = diag.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = mat[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(CholeskyFactor { l })
}

/// Seeded, splittable pseudo-random stream (ChaCha12).
///
/// Two streams built from the same seed produce bit-identical sequences.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha12Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha12Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent stream keyed by `(self.seed, key)`; does not advance `self`.
    pub fn split(&self, key: u64) -> Rng {
        Rng::new(derive_seed(self.seed, key))
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn standard_normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// SplitMix64-style mixing of a base seed with a key.
pub fn derive_seed(seed: u64, key: u64) -> u64 {
    let mut z = seed ^ key.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
