//! Stationary prior covariance kernels and the detector noise model.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::measurement::MeasurementSet;
use crate::quadrature::{gauss_rule, QuadratureConfig};
use crate::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    /// `σ² exp(−|r|² / 2λ²)`
    SquaredExponential,
    /// `σ² exp(−|r| / λ)`
    Exponential,
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelFamily::SquaredExponential => "squared-exponential",
            KernelFamily::Exponential => "exponential",
        })
    }
}

impl FromStr for KernelFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "squared-exponential" => Ok(KernelFamily::SquaredExponential),
            "exponential" => Ok(KernelFamily::Exponential),
            other => Err(format!(
                "unknown kernel family `{other}` (expected squared-exponential or exponential)"
            )),
        }
    }
}

/// Kernel `c(r)` of the convolution covariance operator
/// `Cφ(x) = ∫ c(x − y) φ(y) dy`.
///
/// A zero variance is accepted and yields the null prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceKernel {
    family: KernelFamily,
    variance: f64,
    length_scale: f64,
    dim: usize,
}

impl CovarianceKernel {
    pub fn new(family: KernelFamily, variance: f64, length_scale: f64, dim: usize) -> Result<Self> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(invalid(format!("kernel variance must be finite and ≥ 0, got {variance}")));
        }
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(invalid(format!(
                "kernel length scale must be finite and > 0, got {length_scale}"
            )));
        }
        if !(dim == 1 || dim == 2) {
            return Err(invalid(format!("kernel dimension must be 1 or 2, got {dim}")));
        }
        Ok(Self {
            family,
            variance,
            length_scale,
            dim,
        })
    }

    pub fn squared_exponential(variance: f64, length_scale: f64) -> Result<Self> {
        Self::new(KernelFamily::SquaredExponential, variance, length_scale, 2)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `c(r)` for a displacement `r`.
    pub fn eval(&self, r: &[f64]) -> f64 {
        debug_assert_eq!(r.len(), self.dim);
        self.eval_sq(r.iter().map(|x| x * x).sum())
    }

    /// `c` as a function of the squared distance.
    #[inline]
    pub fn eval_sq(&self, r2: f64) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => {
                self.variance * (-r2 / (2.0 * self.length_scale * self.length_scale)).exp()
            }
            KernelFamily::Exponential => self.variance * (-r2.sqrt() / self.length_scale).exp(),
        }
    }

    /// For kernels that factor over coordinates as
    /// `σ² Π_d exp(−rate·r_d²)`, the rate.
    pub fn separable_rate(&self) -> Option<f64> {
        match self.family {
            KernelFamily::SquaredExponential => {
                Some(1.0 / (2.0 * self.length_scale * self.length_scale))
            }
            KernelFamily::Exponential => None,
        }
    }

    pub fn with_dim(self, dim: usize) -> Result<Self> {
        Self::new(self.family, self.variance, self.length_scale, dim)
    }
}

/// Covariance of the additive data noise `E`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// `C_E = σ_e² I`, so `Σ_jk = σ_e² ∫ψ_j ψ_k`.
    White { level: f64 },
    /// Convolution noise on the screen parameter.
    Kernel(CovarianceKernel),
}

impl NoiseModel {
    pub fn white(level: f64) -> Result<Self> {
        if !(level >= 0.0 && level.is_finite()) {
            return Err(invalid(format!("white noise level must be finite and ≥ 0, got {level}")));
        }
        Ok(NoiseModel::White { level })
    }
}

/// Noise Gram matrix `Σ_jk = ⟨ψ_j, C_E ψ_k⟩` for 1-D screen functions.
///
/// For white noise, pairs with disjoint supports are skipped and stay
/// exactly zero.
pub fn noise_gram(
    noise: &NoiseModel,
    psi: &MeasurementSet,
    quad: &QuadratureConfig,
) -> Result<DMatrix<f64>> {
    if psi.dim() != 1 {
        return Err(invalid("noise Gram needs a 1-D (screen) measurement set"));
    }
    let rule = gauss_rule(quad.screen_order)?;
    let m = psi.len();
    let mut sigma = DMatrix::zeros(m, m);
    match noise {
        NoiseModel::White { level } => {
            for j in 0..m {
                let (aj, bj) = psi[j].interval()?;
                for k in j..m {
                    let (ak, bk) = psi[k].interval()?;
                    let (lo, hi) = (aj.max(ak), bj.min(bk));
                    if lo >= hi {
                        continue;
                    }
                    let mut acc = 0.0;
                    for (t, w) in rule.mapped(lo, hi) {
                        acc += w * psi[j].eval(&[t]) * psi[k].eval(&[t]);
                    }
                    sigma[(j, k)] = level * acc;
                    sigma[(k, j)] = level * acc;
                }
            }
        }
        NoiseModel::Kernel(kernel) => {
            if kernel.dim() != 1 {
                return Err(invalid("screen noise kernel must be 1-D"));
            }
            let nodes = psi
                .iter()
                .map(|f| f.nodes_1d(&rule))
                .collect::<Result<Vec<_>>>()?;
            for j in 0..m {
                for k in j..m {
                    let mut acc = 0.0;
                    for &(s, ws) in &nodes[j] {
                        for &(t, wt) in &nodes[k] {
                            acc += ws * wt * kernel.eval(&[s - t]);
                        }
                    }
                    sigma[(j, k)] = acc;
                    sigma[(k, j)] = acc;
                }
            }
        }
    }
    Ok(sigma)
}

/// Prior mean `μ_X` as a classical function on the window. Zero by default.
#[derive(Clone, Default)]
pub struct MeanFunction(Option<Arc<dyn Fn(Point2) -> f64 + Send + Sync>>);

impl MeanFunction {
    pub fn zero() -> Self {
        Self(None)
    }

    pub fn constant(c: f64) -> Self {
        if c == 0.0 {
            Self(None)
        } else {
            Self(Some(Arc::new(move |_| c)))
        }
    }

    pub fn from_fn(f: impl Fn(Point2) -> f64 + Send + Sync + 'static) -> Self {
        Self(Some(Arc::new(f)))
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_none()
    }

    pub fn eval(&self, p: Point2) -> f64 {
        self.0.as_ref().map_or(0.0, |f| f(p))
    }
}

impl fmt::Debug for MeanFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            f.write_str("MeanFunction(zero)")
        } else {
            f.write_str("MeanFunction(..)")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{bump_1d, TestFunction};
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn se(var: f64, len: f64) -> CovarianceKernel {
        CovarianceKernel::squared_exponential(var, len).unwrap()
    }

    #[test]
    fn value_at_origin_is_variance() {
        for fam in [KernelFamily::SquaredExponential, KernelFamily::Exponential] {
            let k = CovarianceKernel::new(fam, 2.5, 0.3, 2).unwrap();
            assert_eq!(k.eval(&[0.0, 0.0]), 2.5);
        }
    }

    #[test]
    fn squared_exponential_closed_form() {
        let k = se(1.0, 1.0);
        assert!((k.eval(&[0.6, 0.8]) - (-0.5f64).exp()).abs() < 1e-15);
        let e = CovarianceKernel::new(KernelFamily::Exponential, 1.0, 2.0, 1).unwrap();
        assert!((e.eval(&[-1.0]) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(CovarianceKernel::squared_exponential(-1.0, 1.0).is_err());
        assert!(CovarianceKernel::squared_exponential(1.0, 0.0).is_err());
        assert!(CovarianceKernel::new(KernelFamily::Exponential, 1.0, 1.0, 3).is_err());
        assert!(NoiseModel::white(-1e-3).is_err());
    }

    #[test]
    fn family_names_round_trip() {
        for fam in [KernelFamily::SquaredExponential, KernelFamily::Exponential] {
            assert_eq!(fam.to_string().parse::<KernelFamily>().unwrap(), fam);
        }
        assert!("matern".parse::<KernelFamily>().is_err());
    }

    fn screen(centers: &[f64], half_width: f64) -> MeasurementSet {
        MeasurementSet::new(
            centers
                .iter()
                .map(|&c| bump_1d(c, half_width).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn white_noise_disjoint_supports_give_diagonal() {
        let psi = screen(&[-0.3, -0.1, 0.1, 0.3], 0.09);
        let s = noise_gram(&NoiseModel::white(0.5).unwrap(), &psi, &QuadratureConfig::default())
            .unwrap();
        for j in 0..4 {
            for k in 0..4 {
                if j != k {
                    assert_eq!(s[(j, k)], 0.0);
                }
            }
            // ∫cos⁴ over a window of half-width w is 3w/4
            assert!((s[(j, j)] - 0.5 * 0.75 * 0.09).abs() < 1e-14);
        }
    }

    #[test]
    fn white_noise_single_detector() {
        let psi = screen(&[0.0], 0.2);
        let s = noise_gram(&NoiseModel::white(2.0).unwrap(), &psi, &QuadratureConfig::default())
            .unwrap();
        assert_eq!(s.shape(), (1, 1));
        assert!((s[(0, 0)] - 2.0 * 0.75 * 0.2).abs() < 1e-14);
    }

    /// Composite midpoint rule, Richardson-extrapolated once.
    fn midpoint(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let m = |n: usize| {
            let h = (b - a) / n as f64;
            (0..n).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
        };
        (4.0 * m(2 * n) - m(n)) / 3.0
    }

    #[test]
    fn overlapping_white_noise_matches_midpoint_oracle() {
        let a = bump_1d(0.0, 0.2).unwrap();
        let b = bump_1d(0.13, 0.15).unwrap();
        let psi = MeasurementSet::new(vec![a.clone(), b.clone()]).unwrap();
        let s = noise_gram(&NoiseModel::white(1.0).unwrap(), &psi, &QuadratureConfig::default())
            .unwrap();
        let oracle = midpoint(|t| a.eval(&[t]) * b.eval(&[t]), -0.5, 0.5, 4000);
        assert!((s[(0, 1)] - oracle).abs() < 1e-8, "{} vs {oracle}", s[(0, 1)]);
        assert_eq!(s[(0, 1)], s[(1, 0)]);
    }

    #[test]
    fn white_noise_on_orthonormal_set_is_scaled_identity() {
        let w: f64 = 0.08;
        let norm = (0.75 * w).sqrt();
        let members: Vec<TestFunction> = [-0.2, 0.0, 0.2]
            .iter()
            .map(|&c| bump_1d(c, w).unwrap().scaled(1.0 / norm))
            .collect();
        let psi = MeasurementSet::new(members).unwrap();
        let s = noise_gram(&NoiseModel::white(0.3).unwrap(), &psi, &QuadratureConfig::default())
            .unwrap();
        assert!((s - DMatrix::identity(3, 3) * 0.3).amax() < 1e-12);
    }

    fn gram_is_psd(s: &DMatrix<f64>) -> bool {
        let sym = (s - s.transpose()).amax() <= 1e-12 * s.amax().max(1e-300);
        let eig = SymmetricEigen::new(s.clone()).eigenvalues;
        let max = eig.max();
        sym && eig.min() >= -1e-10 * max.abs()
    }

    proptest! {
        #[test]
        fn kernel_is_even_and_monotone(var in 0.1f64..5.0, len in 0.05f64..2.0, x in -3.0f64..3.0, y in -3.0f64..3.0, grow in 1.0f64..3.0) {
            for fam in [KernelFamily::SquaredExponential, KernelFamily::Exponential] {
                let k = CovarianceKernel::new(fam, var, len, 2).unwrap();
                prop_assert_eq!(k.eval(&[x, y]), k.eval(&[-x, -y]));
                prop_assert!(k.eval(&[x, y]) <= k.eval(&[0.0, 0.0]));
                prop_assert!(k.eval(&[grow * x, grow * y]) <= k.eval(&[x, y]));
            }
        }

        #[test]
        fn kernel_noise_gram_is_symmetric_psd(len in 0.02f64..1.0, centers in proptest::collection::vec(-0.5f64..0.5, 1..6), hw in 0.01f64..0.2) {
            let psi = screen(&centers, hw);
            for fam in [KernelFamily::SquaredExponential, KernelFamily::Exponential] {
                let k = CovarianceKernel::new(fam, 1.0, len, 1).unwrap();
                let s = noise_gram(&NoiseModel::Kernel(k), &psi, &QuadratureConfig::default()).unwrap();
                prop_assert!(gram_is_psd(&s));
            }
        }
    }

    #[test]
    fn mean_function_defaults_to_zero() {
        let m = MeanFunction::default();
        assert!(m.is_zero());
        assert_eq!(m.eval([0.3, 0.4]), 0.0);
        assert!(MeanFunction::constant(0.0).is_zero());
        assert_eq!(MeanFunction::constant(1.5).eval([9.0, 9.0]), 1.5);
    }
}
