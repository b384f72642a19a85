//! Gaussian conditioning of the joint covariance.
//!
//! With the joint covariance of `(Φ(X), Ψ(B))` split as
//!
//! ```text
//! C = [ C11  C12 ]
//!     [ C21  C22 ]
//! ```
//!
//! the posterior of `Φ(X)` given data `z` has mean `C12·b̃` with
//! `b̃ = C22⁻¹ z`, and covariance the Schur complement
//! `C11 − C12·C22⁻¹·C21`. The vector `b̃` does not depend on `Φ`, so a new
//! interrogation set only needs a new `C12` (and `C11` for the covariance).

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DMatrixView, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::assembly::{assemble_c11, assemble_c12, assemble_c22, AssemblyMode};
use crate::error::{invalid, Error, Result};
use crate::geometry::{push_forward, FanBeamGeometry};
use crate::kernels::{CovarianceKernel, NoiseModel};
use crate::measurement::{MeasurementSet, TestFunction};
use crate::quadrature::QuadratureConfig;

/// Default jitter scale: escalation steps are multiples of
/// `policy · trace(C22) / m`.
pub const DEFAULT_JITTER_POLICY: f64 = 1e-10;

/// Above this many interrogation functions only the posterior variances are
/// formed.
pub const DEFAULT_FULL_COVARIANCE_CAP: usize = 4096;

const JITTER_ESCALATIONS: usize = 3;

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Symmetric joint covariance of `n` interrogation and `m` data measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCovariance {
    matrix: DMatrix<f64>,
    n: usize,
    m: usize,
}

impl JointCovariance {
    pub fn new(matrix: DMatrix<f64>, n: usize, m: usize) -> Result<Self> {
        if matrix.nrows() != n + m || matrix.ncols() != n + m {
            return Err(Error::DimensionMismatch(format!(
                "joint covariance is {}×{}, expected {}×{}",
                matrix.nrows(),
                matrix.ncols(),
                n + m,
                n + m
            )));
        }
        if m == 0 {
            return Err(invalid("joint covariance needs at least one datum"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(invalid("joint covariance has non-finite entries"));
        }
        let scale = max_abs(&matrix);
        let asym = max_abs(&(&matrix - matrix.transpose()));
        if asym > 1e-12 * scale {
            return Err(Error::Consistency(format!(
                "joint covariance is not symmetric (max |C − Cᵀ| = {asym:.3e})"
            )));
        }
        Ok(Self { matrix, n, m })
    }

    /// Joins the blocks; `C21` is taken as the transpose of `C12`.
    pub fn from_blocks(c11: &DMatrix<f64>, c12: &DMatrix<f64>, c22: &DMatrix<f64>) -> Result<Self> {
        let (n, m) = (c11.nrows(), c22.nrows());
        if c11.ncols() != n || c22.ncols() != m || c12.shape() != (n, m) {
            return Err(Error::DimensionMismatch(format!(
                "blocks C11 {:?}, C12 {:?}, C22 {:?} do not fit together",
                c11.shape(),
                c12.shape(),
                c22.shape()
            )));
        }
        let mut matrix = DMatrix::zeros(n + m, n + m);
        matrix.view_mut((0, 0), (n, n)).copy_from(c11);
        matrix.view_mut((0, n), (n, m)).copy_from(c12);
        matrix.view_mut((n, 0), (m, n)).copy_from(&c12.transpose());
        matrix.view_mut((n, n), (m, m)).copy_from(c22);
        Self::new(matrix, n, m)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn c11(&self) -> DMatrixView<'_, f64> {
        self.matrix.view((0, 0), (self.n, self.n))
    }

    pub fn c12(&self) -> DMatrixView<'_, f64> {
        self.matrix.view((0, self.n), (self.n, self.m))
    }

    pub fn c21(&self) -> DMatrixView<'_, f64> {
        self.matrix.view((self.n, 0), (self.m, self.n))
    }

    pub fn c22(&self) -> DMatrixView<'_, f64> {
        self.matrix.view((self.n, self.n), (self.m, self.m))
    }
}

/// Assembles the full joint covariance for an interrogation set `phi`, the
/// pushed data set `apsi` and its screen detector set `psi_screen`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_joint(
    phi: &MeasurementSet,
    apsi: &MeasurementSet,
    psi_screen: &MeasurementSet,
    kernel: &CovarianceKernel,
    noise: &NoiseModel,
    quad: &QuadratureConfig,
    c12_mode: AssemblyMode,
    c22_mode: AssemblyMode,
) -> Result<JointCovariance> {
    let c11 = assemble_c11(phi, kernel, quad)?;
    let c12 = assemble_c12(phi, apsi, kernel, quad, c12_mode)?;
    let c22 = assemble_c22(apsi, kernel, noise, psi_screen, quad, c22_mode)?;
    JointCovariance::from_blocks(&c11, &c12, &c22)
}

/// Cholesky factor of `M + jitter·I`, escalating the jitter on failure.
fn factor_with_jitter(matrix: DMatrix<f64>, policy: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let dim = matrix.nrows();
    if let Some(ch) = matrix.clone().cholesky() {
        return Ok((ch, 0.0));
    }
    let step = policy * matrix.trace().abs() / dim as f64;
    let mut jitter = step;
    for _ in 0..JITTER_ESCALATIONS {
        if jitter > 0.0 {
            let shifted = &matrix + DMatrix::identity(dim, dim) * jitter;
            if let Some(ch) = shifted.cholesky() {
                return Ok((ch, jitter));
            }
        }
        jitter *= 10.0;
    }
    let eig = matrix.symmetric_eigenvalues();
    let hi = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let lo = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    Err(Error::IllConditioned {
        condition_estimate: if lo > 0.0 { hi / lo } else { f64::INFINITY },
        attempts: JITTER_ESCALATIONS + 1,
    })
}

/// Cached factorization of `C22 + jitter·I` with solve counters.
#[derive(Debug)]
pub struct DataFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    data_solves: AtomicUsize,
    matrix_solves: AtomicUsize,
}

impl DataFactor {
    pub fn new(c22: DMatrix<f64>, jitter_policy: f64) -> Result<Self> {
        let (chol, jitter) = factor_with_jitter(c22, jitter_policy)?;
        Ok(Self {
            chol,
            jitter,
            data_solves: AtomicUsize::new(0),
            matrix_solves: AtomicUsize::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `(C22 + jitter·I)⁻¹ z`.
    pub fn solve_data(&self, z: &DVector<f64>) -> DVector<f64> {
        self.data_solves.fetch_add(1, Ordering::Relaxed);
        self.chol.solve(z)
    }

    /// `L⁻¹ B` with `L` the lower Cholesky factor.
    pub fn half_solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.matrix_solves.fetch_add(1, Ordering::Relaxed);
        let l = self.chol.l();
        l.solve_lower_triangular(b)
            .expect("Cholesky factor has a nonzero diagonal")
    }

    /// Number of solves against a data vector so far.
    pub fn data_solve_count(&self) -> usize {
        self.data_solves.load(Ordering::Relaxed)
    }

    pub fn matrix_solve_count(&self) -> usize {
        self.matrix_solves.load(Ordering::Relaxed)
    }
}

/// Posterior covariance: dense, or only its diagonal for large `n`.
#[derive(Debug, Clone, PartialEq)]
pub enum PosteriorCovariance {
    Full(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

impl PosteriorCovariance {
    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            PosteriorCovariance::Full(d) => d.diagonal(),
            PosteriorCovariance::Diagonal(v) => v.clone(),
        }
    }

    pub fn full(&self) -> Option<&DMatrix<f64>> {
        match self {
            PosteriorCovariance::Full(d) => Some(d),
            PosteriorCovariance::Diagonal(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConditionOptions {
    pub jitter_policy: f64,
    pub full_covariance_cap: usize,
}

impl Default for ConditionOptions {
    fn default() -> Self {
        Self {
            jitter_policy: DEFAULT_JITTER_POLICY,
            full_covariance_cap: DEFAULT_FULL_COVARIANCE_CAP,
        }
    }
}

/// Posterior moments on `Φ` with the reusable data solve `b̃`.
#[derive(Debug, Clone)]
pub struct PosteriorResult {
    pub mean: DVector<f64>,
    pub covariance: PosteriorCovariance,
    pub data_solve: DVector<f64>,
    pub jitter_used: f64,
    factor: Arc<DataFactor>,
    cap: usize,
}

impl PosteriorResult {
    pub fn factor(&self) -> &DataFactor {
        &self.factor
    }

    /// `log10` of the jitter, or `None` when no jitter was needed.
    pub fn log_jitter_used(&self) -> Option<f64> {
        (self.jitter_used > 0.0).then(|| self.jitter_used.log10())
    }
}

fn schur(c11: &DMatrix<f64>, c21: &DMatrix<f64>, factor: &DataFactor, cap: usize) -> PosteriorCovariance {
    let w = factor.half_solve(c21);
    if c11.nrows() <= cap {
        let mut d = c11 - w.transpose() * &w;
        let sym = (&d + d.transpose()) * 0.5;
        d.copy_from(&sym);
        PosteriorCovariance::Full(d)
    } else {
        PosteriorCovariance::Diagonal(DVector::from_fn(c11.nrows(), |j, _| {
            c11[(j, j)] - w.column(j).norm_squared()
        }))
    }
}

/// Posterior of `Φ(X)` given `Ψ(B) = z`.
pub fn condition(c: &JointCovariance, z: &DVector<f64>, jitter_policy: f64) -> Result<PosteriorResult> {
    condition_with(
        c,
        z,
        &ConditionOptions {
            jitter_policy,
            ..ConditionOptions::default()
        },
    )
}

pub fn condition_with(c: &JointCovariance, z: &DVector<f64>, opts: &ConditionOptions) -> Result<PosteriorResult> {
    if z.len() != c.m() {
        return Err(Error::DimensionMismatch(format!(
            "data has length {}, joint covariance expects {}",
            z.len(),
            c.m()
        )));
    }
    let factor = Arc::new(DataFactor::new(c.c22().into_owned(), opts.jitter_policy)?);
    let data_solve = factor.solve_data(z);
    let mean = c.c12() * &data_solve;
    let covariance = schur(&c.c11().into_owned(), &c.c21().into_owned(), &factor, opts.full_covariance_cap);
    Ok(PosteriorResult {
        mean,
        covariance,
        data_solve,
        jitter_used: factor.jitter(),
        factor,
        cap: opts.full_covariance_cap,
    })
}

/// Posterior on a new interrogation set from the cached data solve and
/// factorization; no new solve against the data is made.
pub fn reinterrogate(
    prev: &PosteriorResult,
    c12_new: &DMatrix<f64>,
    c11_new: &DMatrix<f64>,
    c: &JointCovariance,
) -> Result<PosteriorResult> {
    let m = prev.data_solve.len();
    if c.m() != m || prev.factor.dim() != m {
        return Err(Error::DimensionMismatch(
            "previous posterior was built for a different data block".into(),
        ));
    }
    let n = c12_new.nrows();
    if c12_new.ncols() != m || c11_new.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "new blocks C12 {:?} and C11 {:?} do not match {m} data",
            c12_new.shape(),
            c11_new.shape()
        )));
    }
    let mean = c12_new * &prev.data_solve;
    let covariance = schur(c11_new, &c12_new.transpose(), &prev.factor, prev.cap);
    Ok(PosteriorResult {
        mean,
        covariance,
        data_solve: prev.data_solve.clone(),
        jitter_used: prev.jitter_used,
        factor: Arc::clone(&prev.factor),
        cap: prev.cap,
    })
}

/// Both finite-dimensional posterior forms and their discrepancy.
#[derive(Debug, Clone)]
pub struct SmwReport {
    pub mean_information: DVector<f64>,
    pub mean_covariance_form: DVector<f64>,
    pub cov_information: DMatrix<f64>,
    pub cov_covariance_form: DMatrix<f64>,
    pub mean_discrepancy: f64,
    pub cov_discrepancy: f64,
}

impl SmwReport {
    pub fn max_discrepancy(&self) -> f64 {
        self.mean_discrepancy.max(self.cov_discrepancy)
    }
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn spd_factor(m: &DMatrix<f64>, name: &str) -> Result<Cholesky<f64, Dyn>> {
    let asym = max_abs(&(m - m.transpose()));
    if asym > 1e-12 * max_abs(m) {
        return Err(invalid(format!("{name} is not symmetric")));
    }
    m.clone()
        .cholesky()
        .ok_or_else(|| invalid(format!("{name} is not positive definite")))
}

/// Posterior for the model `b = Aᵀx + e`, `x ~ N(x0, Γ)`, `e ~ N(0, Σ)`, by
/// the information form and by the covariance form.
pub fn smw_equivalence_check(
    a: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    x0: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<SmwReport> {
    let (n, m) = a.shape();
    if gamma.shape() != (n, n) || sigma.shape() != (m, m) || x0.len() != n || b.len() != m {
        return Err(Error::DimensionMismatch("SMW check operands do not fit together".into()));
    }
    let g_ch = spd_factor(gamma, "Γ")?;
    let s_ch = spd_factor(sigma, "Σ")?;

    // information form: D = (Γ⁻¹ + A Σ⁻¹ Aᵀ)⁻¹, mean = D (Γ⁻¹ x0 + A Σ⁻¹ b)
    let precision = g_ch.inverse() + a * s_ch.solve(&a.transpose());
    let p_ch = spd_factor(&((&precision + precision.transpose()) * 0.5), "posterior precision")?;
    let cov_info = p_ch.inverse();
    let mean_info = p_ch.solve(&(g_ch.solve(x0) + a * s_ch.solve(b)));

    // covariance form
    let ga = gamma * a;
    let s = a.transpose() * &ga + sigma;
    let s_ch2 = spd_factor(&((&s + s.transpose()) * 0.5), "AᵀΓA + Σ")?;
    let mean_cov = x0 + &ga * s_ch2.solve(&(b - a.transpose() * x0));
    let cov_cov = gamma - &ga * s_ch2.solve(&ga.transpose());

    Ok(SmwReport {
        mean_discrepancy: rel_diff(mean_info.as_slice(), mean_cov.as_slice()),
        cov_discrepancy: rel_diff(cov_info.as_slice(), cov_cov.as_slice()),
        mean_information: mean_info,
        mean_covariance_form: mean_cov,
        cov_information: cov_info,
        cov_covariance_form: cov_cov,
    })
}

/// Verifies the denoising block structure `C11 = C12 = C21ᵀ`,
/// `C22 = C11 + Σ` of a full joint matrix with `n = m`.
pub fn check_denoising_structure(matrix: &DMatrix<f64>, sigma: &DMatrix<f64>, tol: f64) -> Result<()> {
    let m = sigma.nrows();
    if matrix.shape() != (2 * m, 2 * m) {
        return Err(Error::DimensionMismatch("denoising form needs n = m".into()));
    }
    let scale = max_abs(matrix).max(f64::MIN_POSITIVE);
    let c11 = matrix.view((0, 0), (m, m));
    let c12 = matrix.view((0, m), (m, m));
    let c21 = matrix.view((m, 0), (m, m));
    let c22 = matrix.view((m, m), (m, m));
    let checks = [
        ("C11 = C12", (c11 - c12).abs().max()),
        ("C21 = C12ᵀ", (c21 - c12.transpose()).abs().max()),
        ("C22 symmetric", (c22 - c22.transpose()).abs().max()),
        ("C22 = C11 + Σ", (c22 - c11 - sigma).abs().max()),
    ];
    for (name, err) in checks {
        if !(err <= tol * scale) {
            return Err(Error::Consistency(format!(
                "denoising structure violated: {name} off by {err:.3e}"
            )));
        }
    }
    Ok(())
}

/// Joint covariance for `Φ = AΨ`, with its block structure verified.
///
/// `psi` is the screen detector set; it is pushed through every rotation of
/// `g`. `hook` may alter the assembled matrix before the check and exists
/// for fault injection.
pub fn denoising_structure_with_hook(
    psi: &MeasurementSet,
    g: &FanBeamGeometry,
    kernel: &CovarianceKernel,
    noise: &NoiseModel,
    quad: &QuadratureConfig,
    hook: impl FnOnce(&mut DMatrix<f64>),
) -> Result<JointCovariance> {
    let mut pushed = Vec::with_capacity(psi.len() * g.rotation_count());
    for r in 0..g.rotation_count() {
        for (k, d) in psi.iter().enumerate() {
            pushed.push(TestFunction::pushed(push_forward(g, d, r)?, format!("rot{r}/psi{k}")));
        }
    }
    let apsi = MeasurementSet::new(pushed)?;
    let c11 = assemble_c11(&apsi, kernel, quad)?;
    let c12 = assemble_c12(&apsi, &apsi, kernel, quad, AssemblyMode::Cone)?;
    let c22 = assemble_c22(&apsi, kernel, noise, psi, quad, AssemblyMode::Cone)?;
    let m = apsi.len();
    // assembled on its own so that a faulty prior part of C22 shows up
    let sigma = crate::assembly::noise_block(noise, psi, m, quad)?;
    let mut matrix = DMatrix::zeros(2 * m, 2 * m);
    matrix.view_mut((0, 0), (m, m)).copy_from(&c11);
    matrix.view_mut((0, m), (m, m)).copy_from(&c12);
    matrix.view_mut((m, 0), (m, m)).copy_from(&c12.transpose());
    matrix.view_mut((m, m), (m, m)).copy_from(&c22);
    hook(&mut matrix);
    check_denoising_structure(&matrix, &sigma, 1e-10)?;
    JointCovariance::new(matrix, m, m)
}

pub fn denoising_structure(
    psi: &MeasurementSet,
    g: &FanBeamGeometry,
    kernel: &CovarianceKernel,
    noise: &NoiseModel,
    quad: &QuadratureConfig,
) -> Result<JointCovariance> {
    denoising_structure_with_hook(psi, g, kernel, noise, quad, |_| {})
}

/// `count` draws from `N(0, C)` as columns, deterministic in `seed`.
pub fn sample_joint(c: &JointCovariance, seed: u64, count: usize) -> Result<DMatrix<f64>> {
    let (chol, _) = factor_with_jitter(c.matrix().clone(), DEFAULT_JITTER_POLICY)?;
    let dim = c.n() + c.m();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(dim, count, |_, _| StandardNormal.sample(&mut rng));
    Ok(chol.l() * z)
}
