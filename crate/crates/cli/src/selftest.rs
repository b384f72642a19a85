//! Named consistency checks run by `distfree selftest`.

use distfree_core::assembly::{assemble_c11, assemble_c12, assemble_c22, AssemblyMode};
use distfree_core::geometry::{acquisition_set, detector_set, line_integral_data};
use distfree_core::posterior::{
    condition, denoising_structure_with_hook, smw_equivalence_check, JointCovariance, DEFAULT_JITTER_POLICY,
};
use distfree_core::quadrature::{gauss_rule, QuadratureConfig, QuadratureRule1D};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::commands::resolve_noise;
use crate::config::RunConfig;
use crate::failure::Failure;

/// Outcome of one check: a one-line detail either way.
pub type CheckResult = Result<String, String>;

fn random_spd(rng: &mut ChaCha20Rng, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * 0.5
}

fn smw(seed: u64) -> CheckResult {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let n = rng.random_range(1..=12);
        let m = rng.random_range(1..=12);
        let a = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let gamma = random_spd(&mut rng, n);
        let sigma = random_spd(&mut rng, m);
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let report = smw_equivalence_check(&a, &gamma, &sigma, &x0, &b).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_discrepancy());
    }
    let detail = format!("25 random instances, information vs covariance form {worst:.2e}");
    if worst < 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Conditional moments read off the joint precision matrix.
fn precision_moments(c: &DMatrix<f64>, n: usize, z: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let q = c.clone().try_inverse()?;
    let cov = q.view((0, 0), (n, n)).into_owned().try_inverse()?;
    let mean = -(&cov * q.view((0, n), (n, c.nrows() - n)) * z);
    Some((mean, cov))
}

fn conditioning(seed: u64) -> CheckResult {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let total = rng.random_range(2..=6);
        let n = rng.random_range(1..total);
        let c = random_spd(&mut rng, total);
        let z = DVector::from_fn(total - n, |_, _| rng.random_range(-2.0..2.0));
        let joint = JointCovariance::new(c.clone(), n, total - n).map_err(|e| e.to_string())?;
        let post = condition(&joint, &z, DEFAULT_JITTER_POLICY).map_err(|e| e.to_string())?;
        let (mean, cov) = precision_moments(&c, n, &z).ok_or("oracle inversion failed")?;
        let d = post.covariance.full().ok_or("covariance not kept")?;
        worst = worst
            .max((&post.mean - &mean).norm() / mean.norm().max(f64::MIN_POSITIVE))
            .max((d - &cov).norm() / cov.norm());
    }
    let detail = format!("50 instances with n+m <= 6, gap to precision form {worst:.2e}");
    if worst < 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// The configured geometry reduced to its first rotation.
fn single_rotation(config: &RunConfig) -> RunConfig {
    let mut c = config.clone();
    c.geometry.rotations = 1;
    c
}

fn denoising(config: &RunConfig, inject_fault: bool) -> CheckResult {
    let c = single_rotation(config);
    let run = || -> Result<usize, Failure> {
        let g = c.geometry()?;
        let quad = c.quadrature();
        let noise = resolve_noise(&c, &g, &quad, None)?;
        let psi = detector_set(&g);
        let joint = denoising_structure_with_hook(&psi, &g, &c.kernel()?, &noise, &quad, |m| {
            if inject_fault {
                let k = m.nrows() / 2;
                let bump = 1e-3 * m.amax();
                m[(k, k + 1)] += bump;
            }
        })?;
        Ok(joint.m())
    };
    match run() {
        Ok(m) => Ok(format!("Φ = AΨ with {m} rays: C11 = C12, C22 = C11 + Σ within 1e-10")),
        Err(e) => Err(e.to_string()),
    }
}

fn duality(config: &RunConfig) -> CheckResult {
    let c = single_rotation(config);
    let run = || -> Result<(f64, usize), Failure> {
        let g = c.geometry()?;
        let quad = QuadratureConfig {
            ray_panels: 64,
            ..c.quadrature()
        };
        let phantom = c.phantom()?;
        let rays = line_integral_data(&g, |x| phantom.eval(x), &quad)?;
        let radial = QuadratureRule1D::composite(16, 64)?;
        let angular = gauss_rule(quad.cone_angular)?;
        let scale = rays.amax();
        let mut worst: f64 = 0.0;
        for (k, member) in acquisition_set(&g)?.iter().enumerate() {
            let pushed = member.as_pushed().expect("acquisition members are pushed");
            let cone = pushed.cone_cloud_with(&radial, &angular)?.integrate(|x| phantom.eval(x))?;
            let denom = rays[k].abs().max(1e-3 * scale);
            if denom > 0.0 {
                worst = worst.max((cone - rays[k]).abs() / denom);
            }
        }
        Ok((worst, rays.len()))
    };
    match run() {
        Ok((worst, count)) => {
            let detail = format!("{count} rays, cone quadrature vs ray transform {worst:.2e}");
            if worst < 1e-6 {
                Ok(detail)
            } else {
                Err(detail)
            }
        }
        Err(e) => Err(e.to_string()),
    }
}

fn schur(config: &RunConfig) -> CheckResult {
    let c = single_rotation(config);
    let run = || -> Result<(f64, f64), Failure> {
        let g = c.geometry()?;
        let quad = c.quadrature();
        let kernel = c.kernel()?;
        let noise = resolve_noise(&c, &g, &quad, None)?;
        let apsi = acquisition_set(&g)?;
        let psi = detector_set(&g);
        let phi = c.pixels(8)?;
        let c11 = assemble_c11(&phi, &kernel, &quad)?;
        let c12 = assemble_c12(&phi, &apsi, &kernel, &quad, AssemblyMode::Cone)?;
        let c22 = assemble_c22(&apsi, &kernel, &noise, &psi, &quad, AssemblyMode::Cone)?;
        let joint = JointCovariance::from_blocks(&c11, &c12, &c22)?;
        let post = condition(&joint, &DVector::zeros(joint.m()), c.assembly.jitter_policy)?;
        let d = post.covariance.full().expect("8x8 grid is below the cap").clone();
        let scale = c11.norm().max(f64::MIN_POSITIVE);
        let min_d = d.clone().symmetric_eigenvalues().min() / scale;
        let min_gain = (&c11 - &d).symmetric_eigenvalues().min() / scale;
        Ok((min_d, min_gain))
    };
    match run() {
        Ok((min_d, min_gain)) => {
            let detail = format!("min eig D {min_d:.2e}, min eig (C11 - D) {min_gain:.2e}, relative to |C11|");
            if min_d >= -1e-10 && min_gain >= -1e-10 {
                Ok(detail)
            } else {
                Err(detail)
            }
        }
        Err(e) => Err(e.to_string()),
    }
}

/// Runs every check in a fixed order.
pub fn run_checks(config: &RunConfig, inject_fault: bool) -> Vec<(&'static str, CheckResult)> {
    vec![
        ("smw", smw(config.seed)),
        ("conditioning", conditioning(config.seed)),
        ("denoising", denoising(config, inject_fault)),
        ("duality", duality(config)),
        ("schur", schur(config)),
    ]
}

/// Prints the result table and fails with the names of failing checks.
pub fn selftest(config: &RunConfig, inject_fault: bool) -> Result<(), Failure> {
    let results = run_checks(config, inject_fault);
    println!("{:<14}{:<8}detail", "check", "result");
    let mut failing = Vec::new();
    for (name, outcome) in &results {
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failing.push(name.to_string());
                ("FAIL", d)
            }
        };
        println!("{name:<14}{status:<8}{detail}");
    }
    if failing.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(failing))
    }
}
