//! Acceptance suite. Each criterion prints one PASS or FAIL line; the process
//! exits nonzero when any criterion fails.

use std::time::{Duration, Instant};

use distfree_core::assembly::{assemble_c11, assemble_c12, assemble_c22, AssemblyMode};
use distfree_core::discretized::{
    build_basis, truncated_c11, truncation_error_sweep, SweepProblem, TruncatedCovariance,
};
use distfree_core::geometry::{
    acquisition_set, detector_set, line_integral_data, uniform_rotations, FanBeamGeometry, FanBeamParams,
};
use distfree_core::kernels::{CovarianceKernel, NoiseModel};
use distfree_core::measurement::{pixel_bumps, MeasurementSet, PixelGrid};
use distfree_core::phantom::{clean_data, generate_data, ground_truth_measurement, relative_white_noise, Blob, Phantom};
use distfree_core::posterior::{
    condition, denoising_structure, reinterrogate, sample_joint, smw_equivalence_check, JointCovariance,
    PosteriorResult, DEFAULT_JITTER_POLICY,
};
use distfree_core::quadrature::{gauss_rule, QuadratureConfig, QuadratureRule1D};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_spd(rng: &mut ChaCha20Rng, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * 0.5
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=20);
        let m = rng.random_range(1..=20);
        let a = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let gamma = random_spd(&mut rng, n);
        let sigma = random_spd(&mut rng, m);
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let report = smw_equivalence_check(&a, &gamma, &sigma, &x0, &b).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_discrepancy());
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-9 && elapsed < Duration::from_secs(5),
        format!("worst relative discrepancy {worst:.2e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

/// Conditional moments from the joint precision, Gaussian elimination of the
/// unobserved block: `cov = (Q11)⁻¹`, `mean = −(Q11)⁻¹ Q12 z`.
fn precision_form(c: &DMatrix<f64>, n: usize, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let q = c.clone().try_inverse().expect("SPD joint covariance");
    let q11 = q.view((0, 0), (n, n)).into_owned();
    let q12 = q.view((0, n), (n, c.nrows() - n)).into_owned();
    let cov = q11.try_inverse().expect("SPD precision block");
    let mean = -(&cov * q12 * z);
    (mean, cov)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for seed in 0..200 {
        let mut rng = ChaCha20Rng::seed_from_u64(1000 + seed);
        for total in 2..=6 {
            for n in 1..total {
                let m = total - n;
                let c = random_spd(&mut rng, total);
                let z = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
                let joint = JointCovariance::new(c.clone(), n, m).map_err(|e| e.to_string())?;
                let post = condition(&joint, &z, DEFAULT_JITTER_POLICY).map_err(|e| e.to_string())?;
                let (mean, cov) = precision_form(&c, n, &z);
                let d = post.covariance.full().expect("small instance");
                worst = worst.max(rel_vec(&post.mean, &mean)).max(rel(d, &cov));
                count += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-10 && elapsed < Duration::from_secs(5),
        format!("{count} instances, worst relative gap {worst:.2e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn criterion_3(corpus: &mut Vec<(String, JointCovariance)>) -> Outcome {
    let g = FanBeamGeometry::new(FanBeamParams {
        detector_count: 8,
        rotation_angles: vec![0.0],
        ..FanBeamParams::default()
    })
    .map_err(|e| e.to_string())?;
    let quad = QuadratureConfig::default();
    let kernel = CovarianceKernel::squared_exponential(1.0, 0.12).map_err(|e| e.to_string())?;
    let psi = detector_set(&g);
    let mut structure = Vec::new();
    for level in [1e-4, 1e-12] {
        let noise = NoiseModel::white(level).map_err(|e| e.to_string())?;
        match denoising_structure(&psi, &g, &kernel, &noise, &quad) {
            Ok(c) => structure.push(c),
            Err(e) => return Err(format!("structure check at level {level:e}: {e}")),
        }
    }
    let faint = structure.pop().expect("two instances");
    corpus.push(("denoising, 1 rotation x 8 detectors".into(), structure.pop().expect("one left")));
    let phantom = Phantom::two_blobs(g.object_disc()).map_err(|e| e.to_string())?;
    let z = clean_data(&phantom, &g, &quad).map_err(|e| e.to_string())?;
    let post = condition(&faint, &z, DEFAULT_JITTER_POLICY).map_err(|e| e.to_string())?;
    let gap = rel_vec(&post.mean, &z);
    check(
        gap < 1e-5,
        format!("block identities hold within 1e-10; mean vs data at noise 1e-12: {gap:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let g = FanBeamGeometry::new(FanBeamParams {
        detector_count: 16,
        rotation_angles: vec![0.4],
        ..FanBeamParams::default()
    })
    .map_err(|e| e.to_string())?;
    // the blob rims are kinks along every ray; both sides use panelled
    // rules fine enough that the kinks stay below the tolerance
    let quad = QuadratureConfig {
        ray_panels: 64,
        ..QuadratureConfig::default()
    };
    let disc = g.object_disc();
    let phantoms = [
        Phantom::two_blobs(disc),
        Phantom::new(
            vec![Blob {
                center: [0.5, 0.5],
                radius: 0.38,
                amplitude: 1.0,
            }],
            disc,
        ),
        Phantom::new(
            vec![
                Blob {
                    center: [0.35, 0.4],
                    radius: 0.1,
                    amplitude: 2.0,
                },
                Blob {
                    center: [0.6, 0.65],
                    radius: 0.15,
                    amplitude: -0.5,
                },
                Blob {
                    center: [0.62, 0.38],
                    radius: 0.08,
                    amplitude: 1.5,
                },
            ],
            disc,
        ),
    ];
    let set = acquisition_set(&g).map_err(|e| e.to_string())?;
    let radial = QuadratureRule1D::composite(16, 64).map_err(|e| e.to_string())?;
    let angular = gauss_rule(quad.cone_angular).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for p in phantoms {
        let p = p.map_err(|e| e.to_string())?;
        let rays = line_integral_data(&g, |x| p.eval(x), &quad).map_err(|e| e.to_string())?;
        let scale = rays.amax();
        for (k, member) in set.iter().enumerate() {
            let cloud = member
                .as_pushed()
                .expect("pushed member")
                .cone_cloud_with(&radial, &angular)
                .map_err(|e| e.to_string())?;
            let cone = cloud.integrate(|x| p.eval(x)).map_err(|e| e.to_string())?;
            // rays that miss every blob give zero on both sides; measure
            // those against the largest datum
            worst = worst.max((cone - rays[k]).abs() / rays[k].abs().max(1e-3 * scale));
        }
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-6 && elapsed < Duration::from_secs(30),
        format!("3 phantoms x 16 rays, worst relative gap {worst:.2e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

/// The end-to-end instance shared by criteria 5 to 8.
struct Instance {
    geometry: FanBeamGeometry,
    kernel: CovarianceKernel,
    noise: NoiseModel,
    quad: QuadratureConfig,
    phantom: Phantom,
    apsi: MeasurementSet,
    psi: MeasurementSet,
    phi: MeasurementSet,
    data: DVector<f64>,
    joint: JointCovariance,
    posterior: PosteriorResult,
    assembly_time: Duration,
    solve_time: Duration,
}

fn build_instance() -> Result<Instance, String> {
    let start = Instant::now();
    let geometry = FanBeamGeometry::new(FanBeamParams {
        detector_count: 48,
        rotation_angles: uniform_rotations(24),
        ..FanBeamParams::default()
    })
    .map_err(|e| e.to_string())?;
    let quad = QuadratureConfig::default();
    let kernel = CovarianceKernel::squared_exponential(1.0, 0.12).map_err(|e| e.to_string())?;
    let phantom = Phantom::two_blobs(geometry.object_disc()).map_err(|e| e.to_string())?;
    let clean = clean_data(&phantom, &geometry, &quad).map_err(|e| e.to_string())?;
    let noise = relative_white_noise(&clean, 0.01, &geometry, &quad).map_err(|e| e.to_string())?;
    let data = generate_data(&phantom, &geometry, &noise, 2024, &quad).map_err(|e| e.to_string())?;
    let apsi = acquisition_set(&geometry).map_err(|e| e.to_string())?;
    let psi = detector_set(&geometry);
    let phi = pixel_bumps(&PixelGrid::new(geometry.window(), 32).map_err(|e| e.to_string())?, 0.95)
        .map_err(|e| e.to_string())?;
    let c11 = assemble_c11(&phi, &kernel, &quad).map_err(|e| e.to_string())?;
    let c12 = assemble_c12(&phi, &apsi, &kernel, &quad, AssemblyMode::Cone).map_err(|e| e.to_string())?;
    let c22 = assemble_c22(&apsi, &kernel, &noise, &psi, &quad, AssemblyMode::Cone).map_err(|e| e.to_string())?;
    let joint = JointCovariance::from_blocks(&c11, &c12, &c22).map_err(|e| e.to_string())?;
    let assembly_time = start.elapsed();
    let solve_start = Instant::now();
    let posterior = condition(&joint, &data, DEFAULT_JITTER_POLICY).map_err(|e| e.to_string())?;
    Ok(Instance {
        geometry,
        kernel,
        noise,
        quad,
        phantom,
        apsi,
        psi,
        phi,
        data,
        joint,
        posterior,
        assembly_time,
        solve_time: solve_start.elapsed(),
    })
}

fn criterion_5(inst: &Instance) -> Outcome {
    let truth = ground_truth_measurement(&inst.phantom, &inst.phi, &inst.quad).map_err(|e| e.to_string())?;
    let err = (&inst.posterior.mean - &truth).norm() / truth.norm();
    // the zero estimator has relative error exactly one
    let zero_err = 1.0;
    let var = inst.posterior.covariance.diagonal();
    let prior = inst.joint.c11().diagonal();
    let positive = var.iter().all(|v| *v > 0.0);
    let bounded = var.iter().zip(prior.iter()).all(|(v, p)| *v <= p + 1e-8);
    let total = inst.assembly_time + inst.solve_time;
    check(
        err <= 0.25 && err <= 0.9 * zero_err && positive && bounded && total < Duration::from_secs(300),
        format!(
            "relative L2 error {err:.4}, variance in [{:.3e}, {:.3e}] (positive {positive}, below prior {bounded}), {:.1} s",
            var.min(),
            var.max(),
            total.as_secs_f64()
        ),
    )
}

fn criterion_6(inst: &Instance, corpus: &mut Vec<(String, JointCovariance)>) -> Outcome {
    let grid16 = PixelGrid::new(inst.geometry.window(), 16).map_err(|e| e.to_string())?;
    let phi16 = pixel_bumps(&grid16, 0.95).map_err(|e| e.to_string())?;
    let c11_16 = assemble_c11(&phi16, &inst.kernel, &inst.quad).map_err(|e| e.to_string())?;
    let c12_16 =
        assemble_c12(&phi16, &inst.apsi, &inst.kernel, &inst.quad, AssemblyMode::Cone).map_err(|e| e.to_string())?;
    let c22 = inst.joint.c22().into_owned();
    let joint16 = JointCovariance::from_blocks(&c11_16, &c12_16, &c22).map_err(|e| e.to_string())?;
    let post16 = condition(&joint16, &inst.data, DEFAULT_JITTER_POLICY).map_err(|e| e.to_string())?;
    let solves_before = post16.factor().data_solve_count();
    let c11_32 = inst.joint.c11().into_owned();
    let c12_32 = inst.joint.c12().into_owned();
    let post32 = reinterrogate(&post16, &c12_32, &c11_32, &joint16).map_err(|e| e.to_string())?;
    let extra = post32.factor().data_solve_count() - solves_before;
    let gap = rel_vec(&post32.mean, &inst.posterior.mean);
    let d_gap = rel_vec(&post32.covariance.diagonal(), &inst.posterior.covariance.diagonal());
    corpus.push(("N=16 pixels, 24 x 48 rays".into(), joint16));
    check(
        extra == 0 && gap < 1e-9 && d_gap < 1e-9,
        format!("{extra} extra data solves, mean gap {gap:.2e}, variance gap {d_gap:.2e}"),
    )
}

fn criterion_7(inst: &Instance) -> Outcome {
    let problem = SweepProblem::assemble(
        inst.geometry.window(),
        &inst.phi,
        &inst.apsi,
        &inst.psi,
        &inst.kernel,
        &inst.noise,
        &inst.quad,
        inst.data.clone(),
        true,
    )
    .map_err(|e| e.to_string())?;
    let report = truncation_error_sweep(&[2, 4, 6, 8, 10, 12], &problem).map_err(|e| e.to_string())?;
    let errs: Vec<f64> = report.rows.iter().map(|r| r.rel_err_c22).collect();
    let monotone = errs.windows(2).all(|w| w[1] <= 1.05 * w[0]);
    let last = *errs.last().expect("six levels");

    // C11 of basis-member interrogations is untouched by truncation
    let tc = TruncatedCovariance::new(
        build_basis(2, inst.geometry.window()).map_err(|e| e.to_string())?,
        inst.kernel,
    )
    .map_err(|e| e.to_string())?;
    let members = MeasurementSet::new((0..tc.basis().len()).map(|l| tc.basis().member(l)).collect())
        .map_err(|e| e.to_string())?;
    let fine = QuadratureConfig {
        box_order: 64,
        ..inst.quad.clone()
    };
    let free = assemble_c11(&members, &inst.kernel, &fine).map_err(|e| e.to_string())?;
    let trunc = truncated_c11(&tc, &members, &fine).map_err(|e| e.to_string())?;
    let c11_gap = (free - trunc).amax();

    let shown: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
    check(
        monotone && last < 1e-2 && c11_gap < 1e-10,
        format!(
            "rel_err_C22 by level [{}], basis-member C11 gap {c11_gap:.2e}",
            shown.join(", ")
        ),
    )
}

fn criterion_8(inst: &Instance, corpus: &[(String, JointCovariance)]) -> Outcome {
    let mut worst_d: f64 = f64::INFINITY;
    let mut worst_gain: f64 = f64::INFINITY;
    let mut entries: Vec<(&str, &JointCovariance)> = corpus.iter().map(|(n, c)| (n.as_str(), c)).collect();
    entries.push(("N=32 pixels, 24 x 48 rays", &inst.joint));
    let mut failed = Vec::new();
    for (name, joint) in &entries {
        let c11 = joint.c11().into_owned();
        let post = condition(joint, &DVector::zeros(joint.m()), DEFAULT_JITTER_POLICY).map_err(|e| e.to_string())?;
        let d = post.covariance.full().expect("below the cap").clone();
        let scale = c11.norm();
        let min_d = d.clone().symmetric_eigenvalues().min() / scale;
        let min_gain = (&c11 - &d).symmetric_eigenvalues().min() / scale;
        worst_d = worst_d.min(min_d);
        worst_gain = worst_gain.min(min_gain);
        if min_d < -1e-10 || min_gain < -1e-10 {
            failed.push(*name);
        }
    }
    check(
        failed.is_empty(),
        format!(
            "{} instances, min eig(D)/|C11| {worst_d:.2e}, min eig(C11 - D)/|C11| {worst_gain:.2e}{}",
            entries.len(),
            if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join("; ")) }
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut worst: f64 = 0.0;
    for q in 1..=20 {
        let rule = gauss_rule(q).map_err(|e| e.to_string())?;
        for deg in 0..2 * q {
            let approx: f64 = rule.mapped(0.0, 1.0).map(|(x, w)| w * x.powi(deg as i32)).sum();
            worst = worst.max((approx - 1.0 / (deg as f64 + 1.0)).abs());
            let sym: f64 = rule.mapped(-1.0, 1.0).map(|(x, w)| w * x.powi(deg as i32)).sum();
            let exact = if deg % 2 == 0 { 2.0 / (deg as f64 + 1.0) } else { 0.0 };
            worst = worst.max((sym - exact).abs());
        }
    }
    check(worst < 1e-13, format!("orders 1..=20, worst monomial error {worst:.2e}"))
}

fn criterion_10() -> Outcome {
    let c = DMatrix::from_row_slice(3, 3, &[2.0, 0.6, -0.3, 0.6, 1.0, 0.2, -0.3, 0.2, 0.5]);
    let joint = JointCovariance::new(c.clone(), 1, 2).map_err(|e| e.to_string())?;
    let count = 200_000;
    let samples = sample_joint(&joint, 7, count).map_err(|e| e.to_string())?;
    let emp = &samples * samples.transpose() / count as f64;
    let gap = rel(&emp, &c);
    check(gap < 0.02, format!("{count} samples, relative Frobenius gap {gap:.2e}"))
}

fn report(index: usize, outcome: Outcome) -> bool {
    match outcome {
        Ok(detail) => {
            println!("criterion {index:>2}: PASS  {detail}");
            true
        }
        Err(detail) => {
            println!("criterion {index:>2}: FAIL  {detail}");
            false
        }
    }
}

fn main() {
    let mut corpus = Vec::new();
    let mut all = true;
    all &= report(1, criterion_1());
    all &= report(2, criterion_2());
    all &= report(3, criterion_3(&mut corpus));
    all &= report(4, criterion_4());
    match build_instance() {
        Ok(inst) => {
            all &= report(5, criterion_5(&inst));
            all &= report(6, criterion_6(&inst, &mut corpus));
            all &= report(7, criterion_7(&inst));
            all &= report(8, criterion_8(&inst, &corpus));
        }
        Err(e) => {
            for index in 5..=8 {
                all &= report(index, Err(format!("instance assembly failed: {e}")));
            }
        }
    }
    all &= report(9, criterion_9());
    all &= report(10, criterion_10());
    if !all {
        std::process::exit(1);
    }
}
