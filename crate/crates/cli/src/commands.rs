//! The four subcommands. Each reads a validated [`RunConfig`] and writes its
//! results under an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use distfree_core::assembly::{assemble_c11, assemble_c12, noise_block};
use distfree_core::discretized::{truncation_error_sweep, SweepProblem};
use distfree_core::geometry::{acquisition_set, detector_set, FanBeamGeometry};
use distfree_core::io::{read_vector_csv, write_pgm_grid, write_vector_csv};
use distfree_core::kernels::NoiseModel;
use distfree_core::phantom::{clean_data, ground_truth_measurement, noise_draw, relative_white_noise};
use distfree_core::posterior::{assemble_joint, condition_with, reinterrogate, ConditionOptions, PosteriorResult};
use distfree_core::quadrature::QuadratureConfig;
use nalgebra::DVector;

use crate::config::RunConfig;
use crate::failure::Failure;

pub const DATA_CLEAN: &str = "data_clean.csv";
pub const DATA_NOISY: &str = "data_noisy.csv";
pub const GEOMETRY: &str = "geometry.txt";
pub const SWEEP: &str = "sweep.csv";
pub const RESOLVED_CONFIG: &str = "run_config.toml";

pub fn log(msg: impl AsRef<str>) {
    eprintln!("distfree: {}", msg.as_ref());
}

/// Creates the output directory and records the effective configuration,
/// command-line overrides included.
fn prepare_out(config: &RunConfig, out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out)
        .map_err(|e| Failure::Input(format!("cannot create output directory {}: {e}", out.display())))?;
    fs::write(out.join(RESOLVED_CONFIG), config.to_toml())?;
    Ok(())
}

/// The noise model of the run. A relative level is resolved against the
/// clean data of the configured phantom, so every command sees the same Σ.
pub fn resolve_noise(
    config: &RunConfig,
    g: &FanBeamGeometry,
    quad: &QuadratureConfig,
    clean: Option<&DVector<f64>>,
) -> Result<NoiseModel, Failure> {
    match (config.noise.fraction, config.noise.level) {
        (Some(fraction), _) => {
            let owned;
            let clean = match clean {
                Some(c) => c,
                None => {
                    owned = clean_data(&config.phantom()?, g, quad)?;
                    &owned
                }
            };
            Ok(relative_white_noise(clean, fraction, g, quad)?)
        }
        (None, Some(level)) => Ok(NoiseModel::white(level)?),
        (None, None) => Err(Failure::Input("configuration: no noise model".into())),
    }
}

/// Clean and noisy data of the configured phantom.
pub fn simulate(config: &RunConfig, g: &FanBeamGeometry) -> Result<(DVector<f64>, DVector<f64>, NoiseModel), Failure> {
    let quad = config.quadrature();
    let clean = clean_data(&config.phantom()?, g, &quad)?;
    let noise = resolve_noise(config, g, &quad, Some(&clean))?;
    let sigma = noise_block(&noise, &detector_set(g), g.data_len(), &quad)?;
    let noisy = &clean + noise_draw(&sigma, config.seed)?;
    Ok((clean, noisy, noise))
}

fn noise_description(noise: &NoiseModel) -> String {
    match noise {
        NoiseModel::White { level } => format!("white noise, level {level:.6e}"),
        NoiseModel::Kernel(k) => format!("correlated noise, {k:?}"),
    }
}

pub fn forward(config: &RunConfig, out: &Path) -> Result<(), Failure> {
    prepare_out(config, out)?;
    let g = config.geometry()?;
    let (clean, noisy, noise) = simulate(config, &g)?;
    write_vector_csv(out.join(DATA_CLEAN), &clean)?;
    write_vector_csv(out.join(DATA_NOISY), &noisy)?;
    fs::write(out.join(GEOMETRY), g.summary())?;
    log(format!(
        "forward: {} data ({} rotations x {} detectors), {}",
        g.data_len(),
        g.rotation_count(),
        g.detector_count(),
        noise_description(&noise)
    ));
    Ok(())
}

fn write_grid_outputs(out: &Path, suffix: &str, side: usize, post: &PosteriorResult) -> Result<(), Failure> {
    let var = post.covariance.diagonal();
    write_vector_csv(out.join(format!("mean{suffix}.csv")), &post.mean)?;
    write_vector_csv(out.join(format!("var{suffix}.csv")), &var)?;
    write_pgm_grid(out.join(format!("mean{suffix}.pgm")), post.mean.as_slice(), side)?;
    write_pgm_grid(out.join(format!("var{suffix}.pgm")), var.as_slice(), side)?;
    Ok(())
}

fn read_data(out: &Path, expected: usize) -> Result<DVector<f64>, Failure> {
    let path: PathBuf = out.join(DATA_NOISY);
    if !path.exists() {
        return Err(Failure::Input(format!(
            "missing input {}; run `distfree forward` first",
            path.display()
        )));
    }
    let data = read_vector_csv(&path)?;
    if data.len() != expected {
        return Err(Failure::Input(format!(
            "{} holds {} data but the geometry produces {expected}",
            path.display(),
            data.len()
        )));
    }
    Ok(data)
}

pub fn invert(config: &RunConfig, out: &Path) -> Result<(), Failure> {
    let g = config.geometry()?;
    let data = read_data(out, g.data_len())?;
    prepare_out(config, out)?;
    let quad = config.quadrature();
    let kernel = config.kernel()?;
    let noise = resolve_noise(config, &g, &quad, None)?;
    let apsi = acquisition_set(&g)?;
    let psi = detector_set(&g);
    let side = config.pixels.grid;
    let phi = config.pixels(side)?;
    let (c12_mode, c22_mode) = (config.assembly.c12.into(), config.assembly.c22.into());
    log(format!(
        "invert: {} data, {side}x{side} pixels, C12 {c12_mode}, C22 {c22_mode}",
        data.len()
    ));
    let joint = assemble_joint(&phi, &apsi, &psi, &kernel, &noise, &quad, c12_mode, c22_mode)?;
    let opts = ConditionOptions {
        jitter_policy: config.assembly.jitter_policy,
        ..ConditionOptions::default()
    };
    let post = condition_with(&joint, &data, &opts)?;
    if let Some(lj) = post.log_jitter_used() {
        log(format!("C22 needed jitter 1e{lj:.2} to factor"));
    }
    write_grid_outputs(out, "", side, &post)?;
    write_vector_csv(out.join("btilde.csv"), &post.data_solve)?;
    let truth = ground_truth_measurement(&config.phantom()?, &phi, &quad)?;
    if truth.norm() > 0.0 {
        log(format!(
            "relative L2 error of the mean against the phantom: {:.4}",
            (&post.mean - &truth).norm() / truth.norm()
        ));
    }

    for &n in &config.pixels.reinterrogate {
        let phi_n = config.pixels(n)?;
        let c11 = assemble_c11(&phi_n, &kernel, &quad)?;
        let c12 = assemble_c12(&phi_n, &apsi, &kernel, &quad, c12_mode)?;
        let post_n = reinterrogate(&post, &c12, &c11, &joint)?;
        log(format!(
            "{n}x{n} pixels: reused data solve ({} data solve(s) in total)",
            post_n.factor().data_solve_count()
        ));
        write_grid_outputs(out, &format!("_N{n}"), n, &post_n)?;
    }
    Ok(())
}

pub fn compare(config: &RunConfig, out: &Path) -> Result<(), Failure> {
    prepare_out(config, out)?;
    let g = config.geometry()?;
    let quad = config.quadrature();
    let kernel = config.kernel()?;
    let (_, data, noise) = simulate(config, &g)?;
    let phi = config.pixels(config.pixels.grid)?;
    let apsi = acquisition_set(&g)?;
    let psi = detector_set(&g);
    log(format!(
        "compare: cone-mode matrices, levels {:?}",
        config.compare.levels
    ));
    let problem = SweepProblem::assemble(config.window()?, &phi, &apsi, &psi, &kernel, &noise, &quad, data, true)?;
    let report = truncation_error_sweep(&config.compare.levels, &problem)?;
    fs::write(out.join(SWEEP), report.to_csv())?;
    let details = format!(
        "errors are relative Frobenius norms ||free - truncated||_F / ||free||_F\n{}",
        report.details()
    );
    fs::write(out.join("sweep_details.txt"), &details)?;
    for line in details.lines() {
        log(line);
    }
    Ok(())
}
