//! Assembly of the joint covariance blocks.
//!
//! Every entry is a double integral `⟨u, C_X v⟩ = ∫∫ u(x) c_X(x − y) v(y) dx dy`
//! approximated by the weighted double sum over the node clouds of `u` and
//! `v`. For the squared-exponential kernel the double sum factorizes along
//! the coordinate axes, which the tensor-cloud paths exploit.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::kernels::{noise_gram, CovarianceKernel, NoiseModel};
use crate::measurement::{MeasurementSet, Support};
use crate::quadrature::{NodeCloud, QuadratureConfig};

/// How pushed test functions `Aψ_k` enter the assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssemblyMode {
    /// Full double integral over the cone `Γ_k`.
    #[default]
    Cone,
    /// `Aψ_k` collapsed onto its central line `ℓ_k`.
    Line,
    /// As `Line`, and each pixel collapsed to its center (C12 only).
    PointLine,
}

impl fmt::Display for AssemblyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AssemblyMode::Cone => "cone",
            AssemblyMode::Line => "line",
            AssemblyMode::PointLine => "point-line",
        })
    }
}

impl FromStr for AssemblyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cone" => Ok(AssemblyMode::Cone),
            "line" => Ok(AssemblyMode::Line),
            "point-line" => Ok(AssemblyMode::PointLine),
            other => Err(invalid(format!(
                "unknown assembly mode `{other}` (expected cone, line or point-line)"
            ))),
        }
    }
}

/// `Σ_a Σ_b w_a w_b c(x_a − y_b)` without any structural shortcut.
pub fn cross_moment_generic(u: &NodeCloud, v: &NodeCloud, kernel: &CovarianceKernel) -> f64 {
    let (pv, wv) = v.to_scattered();
    let mut acc = 0.0;
    u.for_each(|x, wa| {
        let mut row = 0.0;
        for (y, wb) in pv.iter().zip(&wv) {
            row += wb * kernel.eval(&[x[0] - y[0], x[1] - y[1]]);
        }
        acc += wa * row;
    });
    acc
}

/// `⟨u, C_X v⟩` for two node clouds.
pub fn cross_moment(u: &NodeCloud, v: &NodeCloud, kernel: &CovarianceKernel) -> f64 {
    let Some(rate) = kernel.separable_rate() else {
        return cross_moment_generic(u, v, kernel);
    };
    let var = kernel.variance();
    if var == 0.0 {
        return 0.0;
    }
    match (u, v) {
        (
            NodeCloud::Tensor { xs, ys, weights },
            NodeCloud::Tensor {
                xs: xs2,
                ys: ys2,
                weights: w2,
            },
        ) => var * tensor_tensor(xs, ys, weights, xs2, ys2, w2, rate),
        (NodeCloud::Tensor { xs, ys, weights }, NodeCloud::Scattered { points, weights: w2 })
        | (NodeCloud::Scattered { points, weights: w2 }, NodeCloud::Tensor { xs, ys, weights }) => {
            var * tensor_scattered(xs, ys, weights, points, w2, rate)
        }
        (
            NodeCloud::Scattered { points, weights },
            NodeCloud::Scattered {
                points: p2,
                weights: w2,
            },
        ) => {
            let mut acc = 0.0;
            for (x, wa) in points.iter().zip(weights) {
                let mut row = 0.0;
                for (y, wb) in p2.iter().zip(w2) {
                    let dx = x[0] - y[0];
                    let dy = x[1] - y[1];
                    row += wb * (-rate * (dx * dx + dy * dy)).exp();
                }
                acc += wa * row;
            }
            var * acc
        }
    }
}

fn axis_factors(a: &[f64], b: &[f64], rate: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push((-rate * (x - y) * (x - y)).exp());
        }
    }
    out
}

/// `Σ W_il W'_i'l' e_x(i,i') e_y(l,l')` with the unit-variance factors.
fn tensor_tensor(
    xs: &[f64],
    ys: &[f64],
    w: &[f64],
    xs2: &[f64],
    ys2: &[f64],
    w2: &[f64],
    rate: f64,
) -> f64 {
    let ex = axis_factors(xs, xs2, rate); // xs.len() × xs2.len()
    let ey = axis_factors(ys, ys2, rate); // ys.len() × ys2.len()
    let (q2x, q2y) = (xs2.len(), ys2.len());
    // t[i'][l] = Σ_l' W'[i'][l'] ey[l][l']
    let mut t = vec![0.0; q2x * ys.len()];
    for i2 in 0..q2x {
        let wrow = &w2[i2 * q2y..(i2 + 1) * q2y];
        for l in 0..ys.len() {
            let erow = &ey[l * q2y..(l + 1) * q2y];
            t[i2 * ys.len() + l] = wrow.iter().zip(erow).map(|(a, b)| a * b).sum();
        }
    }
    let mut acc = 0.0;
    for i in 0..xs.len() {
        let erow = &ex[i * q2x..(i + 1) * q2x];
        for l in 0..ys.len() {
            let u: f64 = (0..q2x).map(|i2| erow[i2] * t[i2 * ys.len() + l]).sum();
            acc += w[i * ys.len() + l] * u;
        }
    }
    acc
}

fn tensor_scattered(xs: &[f64], ys: &[f64], w: &[f64], points: &[[f64; 2]], pw: &[f64], rate: f64) -> f64 {
    let mut ex = vec![0.0; xs.len()];
    let mut ey = vec![0.0; ys.len()];
    let mut acc = 0.0;
    for (p, wp) in points.iter().zip(pw) {
        for (e, x) in ex.iter_mut().zip(xs) {
            *e = (-rate * (x - p[0]) * (x - p[0])).exp();
        }
        for (e, y) in ey.iter_mut().zip(ys) {
            *e = (-rate * (y - p[1]) * (y - p[1])).exp();
        }
        let mut s = 0.0;
        for (i, e_i) in ex.iter().enumerate() {
            let row = &w[i * ys.len()..(i + 1) * ys.len()];
            s += e_i * row.iter().zip(&ey).map(|(a, b)| a * b).sum::<f64>();
        }
        acc += wp * s;
    }
    acc
}

fn check_kernel(kernel: &CovarianceKernel) -> Result<()> {
    if kernel.dim() != 2 {
        return Err(invalid("the prior kernel must be two-dimensional"));
    }
    Ok(())
}

/// Symmetric Gram matrix `⟨u_j, C_X u_k⟩` of one list of clouds.
pub fn gram_matrix(clouds: &[NodeCloud], kernel: &CovarianceKernel) -> DMatrix<f64> {
    let n = clouds.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| (j..n).map(|k| cross_moment(&clouds[j], &clouds[k], kernel)).collect())
        .collect();
    let mut out = DMatrix::zeros(n, n);
    for (j, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            out[(j, j + off)] = v;
            out[(j + off, j)] = v;
        }
    }
    out
}

/// Rectangular matrix `⟨u_j, C_X v_k⟩`.
pub fn cross_matrix(left: &[NodeCloud], right: &[NodeCloud], kernel: &CovarianceKernel) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = left
        .par_iter()
        .map(|u| right.iter().map(|v| cross_moment(u, v, kernel)).collect())
        .collect();
    DMatrix::from_fn(left.len(), right.len(), |j, k| rows[j][k])
}

/// Clouds of the pushed functions in `apsi` for the given mode.
pub fn pushed_clouds(apsi: &MeasurementSet, quad: &QuadratureConfig, mode: AssemblyMode) -> Result<Vec<NodeCloud>> {
    if apsi.dim() != 2 {
        return Err(invalid("pushed measurement set must be two-dimensional"));
    }
    match mode {
        AssemblyMode::Cone => apsi.clouds(quad),
        AssemblyMode::Line | AssemblyMode::PointLine => apsi
            .iter()
            .map(|m| m.line_cloud(quad))
            .collect(),
    }
}

/// Clouds of the interrogation set; `PointLine` collapses each member onto
/// the center of its support with its total mass.
fn interrogation_clouds(phi: &MeasurementSet, quad: &QuadratureConfig, mode: AssemblyMode) -> Result<Vec<NodeCloud>> {
    if phi.dim() != 2 {
        return Err(invalid("interrogation set must be two-dimensional"));
    }
    let clouds = phi.clouds(quad)?;
    if mode != AssemblyMode::PointLine {
        return Ok(clouds);
    }
    Ok(clouds
        .into_iter()
        .zip(phi.iter())
        .map(|(c, m)| {
            let center = match m.support() {
                Support::Box(r) => r.center(),
                Support::Interval(a, b) => [0.5 * (a + b), 0.0],
            };
            c.collapsed_to(center)
        })
        .collect())
}

/// `C11_jk = ⟨φ_j, C_X φ_k⟩`.
pub fn assemble_c11(phi: &MeasurementSet, kernel: &CovarianceKernel, quad: &QuadratureConfig) -> Result<DMatrix<f64>> {
    check_kernel(kernel)?;
    quad.validate()?;
    let clouds = interrogation_clouds(phi, quad, AssemblyMode::Cone)?;
    Ok(gram_matrix(&clouds, kernel))
}

/// `C12_jk = ⟨φ_j, C_X Aψ_k⟩`.
pub fn assemble_c12(
    phi: &MeasurementSet,
    apsi: &MeasurementSet,
    kernel: &CovarianceKernel,
    quad: &QuadratureConfig,
    mode: AssemblyMode,
) -> Result<DMatrix<f64>> {
    check_kernel(kernel)?;
    quad.validate()?;
    let left = interrogation_clouds(phi, quad, mode)?;
    let right = pushed_clouds(apsi, quad, mode)?;
    Ok(cross_matrix(&left, &right, kernel))
}

/// Prior part `⟨Aψ_j, C_X Aψ_k⟩` of C22.
pub fn assemble_c22_prior(
    apsi: &MeasurementSet,
    kernel: &CovarianceKernel,
    quad: &QuadratureConfig,
    mode: AssemblyMode,
) -> Result<DMatrix<f64>> {
    check_kernel(kernel)?;
    quad.validate()?;
    if mode == AssemblyMode::PointLine {
        return Err(invalid("point-line mode applies to C12 only; use cone or line for C22"));
    }
    let clouds = pushed_clouds(apsi, quad, mode)?;
    Ok(gram_matrix(&clouds, kernel))
}

/// Noise block for `m` data. When `psi_screen` is one detector set and `m`
/// covers several rotations, detector noise is taken independent across
/// rotations and the set's Gram matrix is repeated block-diagonally.
pub fn noise_block(
    noise: &NoiseModel,
    psi_screen: &MeasurementSet,
    m: usize,
    quad: &QuadratureConfig,
) -> Result<DMatrix<f64>> {
    let m_d = psi_screen.len();
    if !m.is_multiple_of(m_d) {
        return Err(Error::DimensionMismatch(format!(
            "{m} data cannot be split into blocks of {m_d} detectors"
        )));
    }
    let block = noise_gram(noise, psi_screen, quad)?;
    let mut out = DMatrix::zeros(m, m);
    for r in 0..m / m_d {
        out.view_mut((r * m_d, r * m_d), (m_d, m_d)).copy_from(&block);
    }
    Ok(out)
}

/// `C22 = ⟨Aψ_j, C_X Aψ_k⟩ + ⟨ψ_j, C_E ψ_k⟩`.
pub fn assemble_c22(
    apsi: &MeasurementSet,
    kernel: &CovarianceKernel,
    noise: &NoiseModel,
    psi_screen: &MeasurementSet,
    quad: &QuadratureConfig,
    mode: AssemblyMode,
) -> Result<DMatrix<f64>> {
    let prior = assemble_c22_prior(apsi, kernel, quad, mode)?;
    Ok(prior + noise_block(noise, psi_screen, apsi.len(), quad)?)
}
