//! Discretize-and-truncate comparator.
//!
//! The prior is replaced by `C_Xⁿ = (Pⁿ)* C_X Pⁿ` where `Pⁿ` projects onto a
//! tensor trigonometric basis of the window. The truncated matrices are
//!
//! ```text
//! (Cⁿ)22 = Gᵀ K G + Σ,    (Cⁿ)12 = H G,
//! ```
//!
//! with `G_ℓk = ⟨φ_ℓ, Aψ_k⟩`, `K_ℓℓ' = ⟨φ_ℓ, C_X φ_ℓ'⟩` and
//! `H_jℓ = ⟨φ_j, C_X φ_ℓ⟩`. Comparing them with the discretization-free
//! matrices measures the truncation error.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::{assemble_c11, assemble_c22, pushed_clouds, AssemblyMode};
use crate::error::{invalid, Error, Result};
use crate::kernels::{CovarianceKernel, NoiseModel};
use crate::measurement::{MeasurementSet, TestFunction};
use crate::posterior::{DataFactor, DEFAULT_JITTER_POLICY};
use crate::quadrature::{NodeCloud, QuadratureConfig, QuadratureRule1D, Rect};
use crate::Point2;

/// Header of the sweep CSV. Errors are relative Frobenius norms.
pub const SWEEP_CSV_HEADER: &str = "level,rel_err_C22,rel_err_C12,rel_err_mean";

/// Frequency of a 1-D mode index: 0 is the constant, `2k−1` and `2k` are the
/// cosine and sine of frequency `k`.
fn frequency(idx: usize) -> usize {
    idx.div_ceil(2)
}

/// Orthonormal tensor trigonometric modes on a rectangle, ordered in shells
/// of growing maximal frequency so that level `l` is the first `(2l+1)²`
/// members.
#[derive(Debug, Clone)]
pub struct TruncationBasis {
    window: Rect,
    n_per_axis: usize,
    modes: Vec<(usize, usize)>,
    axis_rule: QuadratureRule1D,
    gram_error: f64,
}

/// Builds the basis up to frequency `n_per_axis` per axis and verifies its
/// Gram matrix by quadrature.
pub fn build_basis(n_per_axis: usize, window: Rect) -> Result<TruncationBasis> {
    let per_axis = 2 * n_per_axis + 1;
    let mut modes: Vec<(usize, usize)> = (0..per_axis)
        .flat_map(|p| (0..per_axis).map(move |q| (p, q)))
        .collect();
    modes.sort_by_key(|&(p, q)| (frequency(p).max(frequency(q)), p, q));
    // The panel count follows the highest frequency so that products of two
    // modes stay resolved.
    let axis_rule = QuadratureRule1D::composite(16, n_per_axis.max(4))?;
    let mut basis = TruncationBasis {
        window,
        n_per_axis,
        modes,
        axis_rule,
        gram_error: 0.0,
    };
    let mut worst: f64 = 0.0;
    for axis in 0..2 {
        let g1 = basis.axis_gram(axis);
        worst = worst.max((g1 - DMatrix::identity(per_axis, per_axis)).amax());
    }
    // the 2-D Gram is the Kronecker product of the 1-D ones
    basis.gram_error = 2.0 * worst + worst * worst;
    if basis.gram_error > 1e-10 {
        return Err(Error::Consistency(format!(
            "trigonometric basis is not orthonormal under quadrature (error {:.3e})",
            basis.gram_error
        )));
    }
    Ok(basis)
}

impl TruncationBasis {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn n_per_axis(&self) -> usize {
        self.n_per_axis
    }

    pub fn window(&self) -> Rect {
        self.window
    }

    /// 1-D index pairs `(p, q)` of the modes, in basis order.
    pub fn modes(&self) -> &[(usize, usize)] {
        &self.modes
    }

    /// Bound on `max |Gram − I|` found at construction.
    pub fn gram_error(&self) -> f64 {
        self.gram_error
    }

    /// Number of modes retained at truncation level `level`.
    pub fn level_len(&self, level: usize) -> Result<usize> {
        if level > self.n_per_axis {
            return Err(invalid(format!(
                "truncation level {level} exceeds the basis level {}",
                self.n_per_axis
            )));
        }
        Ok((2 * level + 1) * (2 * level + 1))
    }

    fn axis_bounds(&self, axis: usize) -> (f64, f64) {
        (self.window.lo[axis], self.window.hi[axis])
    }

    /// All 1-D mode values at coordinate `s` along `axis`.
    fn axis_values(&self, axis: usize, s: f64, out: &mut [f64]) {
        let (a, b) = self.axis_bounds(axis);
        let len = b - a;
        let u = (s - a) / len;
        let c0 = 1.0 / len.sqrt();
        let c1 = SQRT_2 * c0;
        out[0] = c0;
        for k in 1..=self.n_per_axis {
            let (sn, cs) = (2.0 * PI * k as f64 * u).sin_cos();
            out[2 * k - 1] = c1 * cs;
            out[2 * k] = c1 * sn;
        }
    }

    fn axis_nodes(&self, axis: usize) -> Vec<(f64, f64)> {
        let (a, b) = self.axis_bounds(axis);
        self.axis_rule.mapped(a, b).collect()
    }

    fn axis_gram(&self, axis: usize) -> DMatrix<f64> {
        let per_axis = 2 * self.n_per_axis + 1;
        let mut vals = vec![0.0; per_axis];
        let mut g = DMatrix::zeros(per_axis, per_axis);
        for (s, w) in self.axis_nodes(axis) {
            self.axis_values(axis, s, &mut vals);
            for p in 0..per_axis {
                for q in 0..per_axis {
                    g[(p, q)] += w * vals[p] * vals[q];
                }
            }
        }
        g
    }

    /// Value of mode `l` at `x`.
    pub fn eval(&self, l: usize, x: Point2) -> f64 {
        let per_axis = 2 * self.n_per_axis + 1;
        let (mut vx, mut vy) = (vec![0.0; per_axis], vec![0.0; per_axis]);
        self.axis_values(0, x[0], &mut vx);
        self.axis_values(1, x[1], &mut vy);
        let (p, q) = self.modes[l];
        vx[p] * vy[q]
    }

    /// Mode `l` as a test function on the window.
    pub fn member(&self, l: usize) -> TestFunction {
        let basis = self.clone();
        TestFunction::custom_2d(self.window, move |x| basis.eval(l, x)).with_label(format!("mode{l}"))
    }

    /// Projection coefficients `G_ℓk = ⟨φ_ℓ, u_k⟩` of clouds `u_k`.
    pub fn projection(&self, clouds: &[NodeCloud]) -> DMatrix<f64> {
        let per_axis = 2 * self.n_per_axis + 1;
        let cols: Vec<Vec<f64>> = clouds
            .par_iter()
            .map(|cloud| {
                let mut acc = DMatrix::<f64>::zeros(per_axis, per_axis);
                let (mut vx, mut vy) = (vec![0.0; per_axis], vec![0.0; per_axis]);
                cloud.for_each(|x, w| {
                    if w == 0.0 {
                        return;
                    }
                    self.axis_values(0, x[0], &mut vx);
                    self.axis_values(1, x[1], &mut vy);
                    for q in 0..per_axis {
                        let wy = w * vy[q];
                        for p in 0..per_axis {
                            acc[(p, q)] += vx[p] * wy;
                        }
                    }
                });
                self.modes.iter().map(|&(p, q)| acc[(p, q)]).collect()
            })
            .collect();
        DMatrix::from_fn(self.len(), clouds.len(), |l, k| cols[k][l])
    }
}

/// Coefficients `K_ℓℓ' = ⟨φ_ℓ, C_X φ_ℓ'⟩` of the prior in a basis.
#[derive(Debug, Clone)]
pub struct TruncatedCovariance {
    basis: TruncationBasis,
    kernel: CovarianceKernel,
    kernel_coeffs: DMatrix<f64>,
}

impl TruncatedCovariance {
    /// For the squared-exponential kernel `K` is a Kronecker product of 1-D
    /// coefficient matrices. Other kernels use a 2-D tensor quadrature of the
    /// window, whose cost grows with the fourth power of the node count per
    /// axis.
    pub fn new(basis: TruncationBasis, kernel: CovarianceKernel) -> Result<Self> {
        if kernel.dim() != 2 {
            return Err(invalid("the prior kernel must be two-dimensional"));
        }
        let kernel_coeffs = match kernel.separable_rate() {
            Some(rate) => {
                let k1: Vec<DMatrix<f64>> = (0..2).map(|axis| axis_kernel_coeffs(&basis, axis, rate)).collect();
                let var = kernel.variance();
                DMatrix::from_fn(basis.len(), basis.len(), |l, m| {
                    let (p, q) = basis.modes[l];
                    let (p2, q2) = basis.modes[m];
                    var * k1[0][(p, p2)] * k1[1][(q, q2)]
                })
            }
            None => generic_kernel_coeffs(&basis, &kernel),
        };
        let kernel_coeffs = (&kernel_coeffs + kernel_coeffs.transpose()) * 0.5;
        Ok(Self {
            basis,
            kernel,
            kernel_coeffs,
        })
    }

    pub fn basis(&self) -> &TruncationBasis {
        &self.basis
    }

    pub fn kernel_coeffs(&self) -> &DMatrix<f64> {
        &self.kernel_coeffs
    }

    /// Leading `level` block of `K`.
    pub fn coeffs_at(&self, level: usize) -> Result<DMatrix<f64>> {
        let n = self.basis.level_len(level)?;
        Ok(self.kernel_coeffs.view((0, 0), (n, n)).into_owned())
    }

    /// `H_jℓ = ⟨u_j, C_X φ_ℓ⟩` for clouds `u_j`.
    pub fn kernel_cross(&self, clouds: &[NodeCloud]) -> DMatrix<f64> {
        let b = &self.basis;
        let per_axis = 2 * b.n_per_axis + 1;
        let rows: Vec<Vec<f64>> = match self.kernel.separable_rate() {
            Some(rate) => {
                let nodes = [b.axis_nodes(0), b.axis_nodes(1)];
                let mut tables = Vec::with_capacity(2);
                for (axis, ax_nodes) in nodes.iter().enumerate() {
                    // values of every 1-D mode at the axis nodes, weighted
                    let mut vals = vec![0.0; per_axis];
                    let table: Vec<Vec<f64>> = ax_nodes
                        .iter()
                        .map(|&(t, w)| {
                            b.axis_values(axis, t, &mut vals);
                            vals.iter().map(|v| v * w).collect()
                        })
                        .collect();
                    tables.push(table);
                }
                // (C φ_p)(s) along one axis
                let smooth = |axis: usize, s: f64, out: &mut [f64]| {
                    out.iter_mut().for_each(|o| *o = 0.0);
                    for (&(t, _), row) in nodes[axis].iter().zip(&tables[axis]) {
                        let e = (-rate * (s - t) * (s - t)).exp();
                        for (o, v) in out.iter_mut().zip(row) {
                            *o += e * v;
                        }
                    }
                };
                let var = self.kernel.variance();
                clouds
                    .par_iter()
                    .map(|cloud| {
                        let mut acc = DMatrix::<f64>::zeros(per_axis, per_axis);
                        let (mut ex, mut ey) = (vec![0.0; per_axis], vec![0.0; per_axis]);
                        cloud.for_each(|x, w| {
                            if w == 0.0 {
                                return;
                            }
                            smooth(0, x[0], &mut ex);
                            smooth(1, x[1], &mut ey);
                            for q in 0..per_axis {
                                let wy = w * ey[q];
                                for p in 0..per_axis {
                                    acc[(p, q)] += ex[p] * wy;
                                }
                            }
                        });
                        b.modes.iter().map(|&(p, q)| var * acc[(p, q)]).collect()
                    })
                    .collect()
            }
            None => {
                let window_cloud = window_cloud(b);
                let (wp, ww) = window_cloud;
                clouds
                    .par_iter()
                    .map(|cloud| {
                        let mut out = vec![0.0; b.len()];
                        cloud.for_each(|x, w| {
                            for (y, wy) in wp.iter().zip(&ww) {
                                let c = w * wy * self.kernel.eval(&[x[0] - y[0], x[1] - y[1]]);
                                for (l, o) in out.iter_mut().enumerate() {
                                    *o += c * b.eval(l, *y);
                                }
                            }
                        });
                        out
                    })
                    .collect()
            }
        };
        DMatrix::from_fn(clouds.len(), b.len(), |j, l| rows[j][l])
    }

    /// Prior part `Gᵀ K G` of `(Cⁿ)22` at a level, from full-basis projections.
    pub fn c22_prior(&self, level: usize, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.basis.level_len(level)?;
        let gl = g.rows(0, n);
        let k = self.kernel_coeffs.view((0, 0), (n, n));
        let out = gl.transpose() * (k * gl);
        Ok((&out + out.transpose()) * 0.5)
    }

    /// `(Cⁿ)12 = H G` at a level, from full-basis `H` and `G`.
    pub fn c12(&self, level: usize, h: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.basis.level_len(level)?;
        Ok(h.columns(0, n) * g.rows(0, n))
    }
}

fn axis_kernel_coeffs(basis: &TruncationBasis, axis: usize, rate: f64) -> DMatrix<f64> {
    let per_axis = 2 * basis.n_per_axis + 1;
    let nodes = basis.axis_nodes(axis);
    let mut vals = vec![0.0; per_axis];
    let table: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&(t, w)| {
            basis.axis_values(axis, t, &mut vals);
            vals.iter().map(|v| v * w).collect()
        })
        .collect();
    let mut k = DMatrix::zeros(per_axis, per_axis);
    for (i, &(s, _)) in nodes.iter().enumerate() {
        // (C φ_q)(s) for every q
        let mut smooth = vec![0.0; per_axis];
        for (&(t, _), row) in nodes.iter().zip(&table) {
            let e = (-rate * (s - t) * (s - t)).exp();
            for (o, v) in smooth.iter_mut().zip(row) {
                *o += e * v;
            }
        }
        for p in 0..per_axis {
            for q in 0..per_axis {
                k[(p, q)] += table[i][p] * smooth[q];
            }
        }
    }
    k
}

fn window_cloud(b: &TruncationBasis) -> (Vec<Point2>, Vec<f64>) {
    let (xs, ys) = (b.axis_nodes(0), b.axis_nodes(1));
    let mut points = Vec::with_capacity(xs.len() * ys.len());
    let mut weights = Vec::with_capacity(points.capacity());
    for &(x, wx) in &xs {
        for &(y, wy) in &ys {
            points.push([x, y]);
            weights.push(wx * wy);
        }
    }
    (points, weights)
}

fn generic_kernel_coeffs(b: &TruncationBasis, kernel: &CovarianceKernel) -> DMatrix<f64> {
    let (points, weights) = window_cloud(b);
    let values: Vec<Vec<f64>> = points.iter().map(|&p| (0..b.len()).map(|l| b.eval(l, p)).collect()).collect();
    // smoothed[i][l] = (C φ_l)(x_i)
    let smoothed: Vec<Vec<f64>> = points
        .par_iter()
        .map(|x| {
            let mut out = vec![0.0; b.len()];
            for ((y, w), v) in points.iter().zip(&weights).zip(&values) {
                let c = w * kernel.eval(&[x[0] - y[0], x[1] - y[1]]);
                for (o, vl) in out.iter_mut().zip(v) {
                    *o += c * vl;
                }
            }
            out
        })
        .collect();
    let mut k = DMatrix::zeros(b.len(), b.len());
    for ((w, v), s) in weights.iter().zip(&values).zip(&smoothed) {
        for l in 0..b.len() {
            for m in 0..b.len() {
                k[(l, m)] += w * v[l] * s[m];
            }
        }
    }
    k
}

/// Zeroes every coefficient beyond truncation level `level`.
pub fn truncate_coefficients(basis: &TruncationBasis, level: usize, coeffs: &DVector<f64>) -> Result<DVector<f64>> {
    let n = basis.level_len(level)?;
    if coeffs.len() != basis.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for a basis of {} modes",
            coeffs.len(),
            basis.len()
        )));
    }
    Ok(DVector::from_fn(coeffs.len(), |l, _| if l < n { coeffs[l] } else { 0.0 }))
}

/// `(Cⁿ)22` at the full level of `tc`, with cone-mode projections of `apsi`.
pub fn truncated_c22(
    tc: &TruncatedCovariance,
    apsi: &MeasurementSet,
    noise: &NoiseModel,
    psi_screen: &MeasurementSet,
    quad: &QuadratureConfig,
) -> Result<DMatrix<f64>> {
    let g = tc.basis.projection(&pushed_clouds(apsi, quad, AssemblyMode::Cone)?);
    let prior = tc.c22_prior(tc.basis.n_per_axis, &g)?;
    Ok(prior + crate::assembly::noise_block(noise, psi_screen, apsi.len(), quad)?)
}

/// `(Cⁿ)12` at the full level of `tc`.
pub fn truncated_c12(
    tc: &TruncatedCovariance,
    phi: &MeasurementSet,
    apsi: &MeasurementSet,
    quad: &QuadratureConfig,
) -> Result<DMatrix<f64>> {
    let g = tc.basis.projection(&pushed_clouds(apsi, quad, AssemblyMode::Cone)?);
    let h = tc.kernel_cross(&phi.clouds(quad)?);
    tc.c12(tc.basis.n_per_axis, &h, &g)
}

/// `⟨Pⁿφ_j, C_X Pⁿφ_k⟩`: the truncated C11 for an interrogation set.
pub fn truncated_c11(tc: &TruncatedCovariance, phi: &MeasurementSet, quad: &QuadratureConfig) -> Result<DMatrix<f64>> {
    let g = tc.basis.projection(&phi.clouds(quad)?);
    tc.c22_prior(tc.basis.n_per_axis, &g)
}

/// A fully assembled discretization-free instance to compare against.
#[derive(Debug, Clone)]
pub struct SweepProblem {
    pub window: Rect,
    pub kernel: CovarianceKernel,
    /// Interrogation clouds (rows of C12).
    pub phi_clouds: Vec<NodeCloud>,
    /// Cone clouds of the pushed data functions.
    pub apsi_clouds: Vec<NodeCloud>,
    /// Noise block of C22.
    pub noise: DMatrix<f64>,
    pub c22: DMatrix<f64>,
    pub c12: DMatrix<f64>,
    /// Discretization-free C11; when present the sweep also reports the
    /// truncated C11 discrepancy.
    pub c11: Option<DMatrix<f64>>,
    pub data: DVector<f64>,
}

impl SweepProblem {
    /// Assembles the discretization-free cone-mode matrices.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        window: Rect,
        phi: &MeasurementSet,
        apsi: &MeasurementSet,
        psi_screen: &MeasurementSet,
        kernel: &CovarianceKernel,
        noise: &NoiseModel,
        quad: &QuadratureConfig,
        data: DVector<f64>,
        with_c11: bool,
    ) -> Result<Self> {
        let phi_clouds = phi.clouds(quad)?;
        let apsi_clouds = pushed_clouds(apsi, quad, AssemblyMode::Cone)?;
        let noise_m = crate::assembly::noise_block(noise, psi_screen, apsi.len(), quad)?;
        let c22 = assemble_c22(apsi, kernel, noise, psi_screen, quad, AssemblyMode::Cone)?;
        let c12 = crate::assembly::cross_matrix(&phi_clouds, &apsi_clouds, kernel);
        let c11 = if with_c11 { Some(assemble_c11(phi, kernel, quad)?) } else { None };
        Ok(Self {
            window,
            kernel: *kernel,
            phi_clouds,
            apsi_clouds,
            noise: noise_m,
            c22,
            c12,
            c11,
            data,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub level: usize,
    pub rel_err_c22: f64,
    pub rel_err_c12: f64,
    pub rel_err_mean: f64,
    pub trace_prior_truncated: f64,
    pub trace_prior_free: f64,
    pub rel_err_c11: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(SWEEP_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e}",
                r.level, r.rel_err_c22, r.rel_err_c12, r.rel_err_mean
            );
        }
        s
    }

    /// Human-readable lines with the traces and the C11 comparison.
    pub fn details(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = write!(
                s,
                "level {}: trace prior C22 truncated {:.6e} free {:.6e}",
                r.level, r.trace_prior_truncated, r.trace_prior_free
            );
            if let Some(e) = r.rel_err_c11 {
                let _ = write!(s, "; C11 truncated vs free rel err {e:.3e}");
            }
            s.push('\n');
        }
        s
    }
}

fn frob_rel(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let den = reference.norm();
    if den == 0.0 {
        (a - reference).norm()
    } else {
        (a - reference).norm() / den
    }
}

/// Relative Frobenius errors of the truncated matrices and of the induced
/// posterior mean for each level.
pub fn truncation_error_sweep(levels: &[usize], problem: &SweepProblem) -> Result<SweepReport> {
    if levels.is_empty() {
        return Err(invalid("truncation sweep needs at least one level"));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("truncation levels must be strictly increasing"));
    }
    let max_level = *levels.last().expect("nonempty");
    let basis = build_basis(max_level, problem.window)?;
    let tc = TruncatedCovariance::new(basis, problem.kernel)?;
    let g = tc.basis.projection(&problem.apsi_clouds);
    let h = tc.kernel_cross(&problem.phi_clouds);
    let g_phi = problem.c11.as_ref().map(|_| tc.basis.projection(&problem.phi_clouds));

    let free_factor = DataFactor::new(problem.c22.clone(), DEFAULT_JITTER_POLICY)?;
    let free_mean = &problem.c12 * free_factor.solve_data(&problem.data);
    let trace_prior_free = problem.c22.trace() - problem.noise.trace();

    let mut rows = Vec::with_capacity(levels.len());
    for &level in levels {
        let prior = tc.c22_prior(level, &g)?;
        let c22n = &prior + &problem.noise;
        let c12n = tc.c12(level, &h, &g)?;
        let factor = DataFactor::new(c22n.clone(), DEFAULT_JITTER_POLICY)?;
        let mean_n = &c12n * factor.solve_data(&problem.data);
        let rel_err_mean = if free_mean.norm() == 0.0 {
            (&mean_n - &free_mean).norm()
        } else {
            (&mean_n - &free_mean).norm() / free_mean.norm()
        };
        let rel_err_c11 = match (&problem.c11, &g_phi) {
            (Some(c11), Some(gp)) => Some(frob_rel(&tc.c22_prior(level, gp)?, c11)),
            _ => None,
        };
        rows.push(SweepRow {
            level,
            rel_err_c22: frob_rel(&c22n, &problem.c22),
            rel_err_c12: frob_rel(&c12n, &problem.c12),
            rel_err_mean,
            trace_prior_truncated: prior.trace(),
            trace_prior_free,
            rel_err_c11,
        });
    }
    Ok(SweepReport { rows })
}
