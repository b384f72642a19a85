//! Synthetic ground truth and data generation.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::assembly::noise_block;
use crate::error::{invalid, Result};
use crate::geometry::{detector_set, line_integral_data, Disc, FanBeamGeometry};
use crate::kernels::NoiseModel;
use crate::measurement::{evaluate_measurement, MeasurementSet};
use crate::quadrature::{gauss_rule, QuadratureConfig};
use crate::Point2;

/// Radial cos² bump `a·cos²(π|x − c|/2r)` on `|x − c| < r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub center: Point2,
    pub radius: f64,
    pub amplitude: f64,
}

impl Blob {
    pub fn eval(&self, x: Point2) -> f64 {
        let r = (x[0] - self.center[0]).hypot(x[1] - self.center[1]);
        if r < self.radius {
            self.amplitude * (FRAC_PI_2 * r / self.radius).cos().powi(2)
        } else {
            0.0
        }
    }
}

/// Sum of blobs, supported in a disc.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    blobs: Vec<Blob>,
    support_disc: Disc,
}

impl Phantom {
    pub fn new(blobs: Vec<Blob>, support_disc: Disc) -> Result<Self> {
        for (i, b) in blobs.iter().enumerate() {
            if !(b.radius > 0.0 && b.radius.is_finite()) || !b.amplitude.is_finite() {
                return Err(invalid(format!("blob {i} needs a positive radius and finite amplitude")));
            }
            let off = (b.center[0] - support_disc.center[0]).hypot(b.center[1] - support_disc.center[1]);
            if off + b.radius > support_disc.radius * (1.0 + 1e-12) {
                return Err(invalid(format!("blob {i} reaches outside the object disc")));
            }
        }
        Ok(Self { blobs, support_disc })
    }

    /// Two blobs of different size and contrast inside `disc`.
    pub fn two_blobs(disc: Disc) -> Result<Self> {
        Self::new(
            vec![
                Blob {
                    center: [0.4, 0.45],
                    radius: 0.2,
                    amplitude: 1.0,
                },
                Blob {
                    center: [0.62, 0.6],
                    radius: 0.12,
                    amplitude: 0.6,
                },
            ],
            disc,
        )
    }

    pub fn blobs(&self) -> &[Blob] {
        &self.blobs
    }

    pub fn support_disc(&self) -> Disc {
        self.support_disc
    }

    pub fn eval(&self, x: Point2) -> f64 {
        if !self.support_disc.contains(x) {
            return 0.0;
        }
        self.blobs.iter().map(|b| b.eval(x)).sum()
    }

    /// Values at the pixel centers of an `n × n` grid over `window`, in
    /// pixel order `j = iy·n + ix`.
    pub fn raster(&self, window: crate::quadrature::Rect, n: usize) -> Vec<f64> {
        let (dx, dy) = (window.width() / n as f64, window.height() / n as f64);
        (0..n * n)
            .map(|j| {
                let (ix, iy) = (j % n, j / n);
                self.eval([
                    window.lo[0] + (ix as f64 + 0.5) * dx,
                    window.lo[1] + (iy as f64 + 0.5) * dy,
                ])
            })
            .collect()
    }
}

/// A draw from `N(0, Σ)`, deterministic in `seed`. A zero `Σ` gives exact
/// zeros.
pub fn noise_draw(sigma: &DMatrix<f64>, seed: u64) -> Result<DVector<f64>> {
    let m = sigma.nrows();
    if sigma.iter().all(|v| *v == 0.0) {
        return Ok(DVector::zeros(m));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let z = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
    if let Some(ch) = sigma.clone().cholesky() {
        return Ok(ch.l() * z);
    }
    // semidefinite noise: symmetric square root
    let eig = sigma.clone().symmetric_eigen();
    if eig.eigenvalues.min() < -1e-12 * eig.eigenvalues.amax() {
        return Err(invalid("noise covariance is not positive semidefinite"));
    }
    let root = DVector::from_iterator(m, eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * root.component_mul(&(eig.eigenvectors.transpose() * z)))
}

/// White noise whose data standard deviation is `fraction` of the peak
/// absolute clean datum: `level = (fraction·max|b|)² / ∫ψ²`.
pub fn relative_white_noise(
    clean: &DVector<f64>,
    fraction: f64,
    g: &FanBeamGeometry,
    quad: &QuadratureConfig,
) -> Result<NoiseModel> {
    if !(fraction >= 0.0 && fraction.is_finite()) {
        return Err(invalid("noise fraction must be finite and ≥ 0"));
    }
    let psi = detector_set(g);
    let rule = gauss_rule(quad.screen_order)?;
    let (a, b) = psi[0].interval()?;
    let psi_sq: f64 = rule.mapped(a, b).map(|(t, w)| w * psi[0].eval(&[t]).powi(2)).sum();
    let sd = fraction * clean.amax();
    NoiseModel::white(sd * sd / psi_sq)
}

/// Noiseless line-integral data of a phantom.
pub fn clean_data(p: &Phantom, g: &FanBeamGeometry, quad: &QuadratureConfig) -> Result<DVector<f64>> {
    line_integral_data(g, |x| p.eval(x), quad)
}

/// Noisy data: line integrals plus a draw from `N(0, Σ)`.
pub fn generate_data(
    p: &Phantom,
    g: &FanBeamGeometry,
    noise: &NoiseModel,
    seed: u64,
    quad: &QuadratureConfig,
) -> Result<DVector<f64>> {
    let clean = clean_data(p, g, quad)?;
    let sigma = noise_block(noise, &detector_set(g), g.data_len(), quad)?;
    Ok(clean + noise_draw(&sigma, seed)?)
}

/// `Φ(F)` for the phantom, the reconstruction target.
pub fn ground_truth_measurement(p: &Phantom, phi: &MeasurementSet, quad: &QuadratureConfig) -> Result<DVector<f64>> {
    evaluate_measurement(phi, |x| p.eval([x[0], x[1]]), quad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{uniform_rotations, FanBeamParams};
    use crate::measurement::{pixel_bumps, PixelGrid, Support};

    fn disc() -> Disc {
        Disc {
            center: [0.5, 0.5],
            radius: 0.4,
        }
    }

    fn geometry() -> FanBeamGeometry {
        FanBeamGeometry::new(FanBeamParams {
            detector_count: 6,
            rotation_angles: uniform_rotations(3),
            ..FanBeamParams::default()
        })
        .unwrap()
    }

    #[test]
    fn evaluation_examples() {
        let p = Phantom::two_blobs(disc()).unwrap();
        assert_eq!(p.eval([0.4, 0.45]), 1.0 + p.blobs()[1].eval([0.4, 0.45]));
        assert_eq!(p.eval([0.95, 0.95]), 0.0);
        let x = [0.53, 0.54];
        assert_eq!(p.eval(x), p.blobs()[0].eval(x) + p.blobs()[1].eval(x));
        assert!(p.blobs()[0].eval(x) > 0.0 && p.blobs()[1].eval(x) > 0.0);
        let bad = Blob {
            center: [0.8, 0.5],
            radius: 0.2,
            amplitude: 1.0,
        };
        assert!(Phantom::new(vec![bad], disc()).is_err());
    }

    #[test]
    fn zero_phantom_and_zero_noise() {
        let g = geometry();
        let quad = QuadratureConfig::default();
        let zero = Phantom::new(vec![], disc()).unwrap();
        let none = NoiseModel::white(0.0).unwrap();
        assert!(generate_data(&zero, &g, &none, 1, &quad).unwrap().iter().all(|v| *v == 0.0));
        let p = Phantom::two_blobs(disc()).unwrap();
        let clean = clean_data(&p, &g, &quad).unwrap();
        assert_eq!(generate_data(&p, &g, &none, 99, &quad).unwrap(), clean);
        assert_eq!(clean_data(&p, &g, &quad).unwrap(), clean);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let g = geometry();
        let quad = QuadratureConfig::default();
        let p = Phantom::two_blobs(disc()).unwrap();
        let noise = NoiseModel::white(0.01).unwrap();
        let a = generate_data(&p, &g, &noise, 5, &quad).unwrap();
        assert_eq!(a, generate_data(&p, &g, &noise, 5, &quad).unwrap());
        assert_ne!(a, generate_data(&p, &g, &noise, 6, &quad).unwrap());
    }

    #[test]
    fn data_is_linear_in_phantom() {
        let g = geometry();
        let quad = QuadratureConfig::default();
        let p1 = Phantom::two_blobs(disc()).unwrap();
        let b2 = Blob {
            center: [0.55, 0.35],
            radius: 0.1,
            amplitude: 2.0,
        };
        let p2 = Phantom::new(vec![b2], disc()).unwrap();
        let (alpha, beta) = (0.7, -1.3);
        let scaled: Vec<Blob> = p1
            .blobs()
            .iter()
            .map(|b| Blob {
                amplitude: alpha * b.amplitude,
                ..*b
            })
            .chain([Blob {
                amplitude: beta * b2.amplitude,
                ..b2
            }])
            .collect();
        let mix = Phantom::new(scaled, disc()).unwrap();
        let lhs = clean_data(&mix, &g, &quad).unwrap();
        let rhs = clean_data(&p1, &g, &quad).unwrap() * alpha + clean_data(&p2, &g, &quad).unwrap() * beta;
        assert!((&lhs - &rhs).amax() <= 1e-11 * lhs.amax());
    }

    #[test]
    fn noise_moments() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![0.04, 1.0, 2.5]));
        let n = 50_000;
        let mut acc = DVector::zeros(3);
        for seed in 0..n {
            let e = noise_draw(&sigma, seed).unwrap();
            acc += e.component_mul(&e);
        }
        acc /= n as f64;
        for i in 0..3 {
            assert!((acc[i] - sigma[(i, i)]).abs() < 0.03 * sigma[(i, i)]);
        }
        // semidefinite covariance goes through the eigen square root
        let rank_one = DMatrix::from_element(2, 2, 1.0);
        let e = noise_draw(&rank_one, 3).unwrap();
        assert!((e[0] - e[1]).abs() < 1e-12);
    }

    #[test]
    fn relative_noise_level() {
        let g = geometry();
        let quad = QuadratureConfig::default();
        let clean = DVector::from_vec(vec![0.5, -2.0, 1.0]);
        let NoiseModel::White { level } = relative_white_noise(&clean, 0.01, &g, &quad).unwrap() else {
            panic!()
        };
        let psi = detector_set(&g);
        let (a, b) = psi[0].interval().unwrap();
        // ∫cos⁴ over half-width h is 3h/4
        let psi_sq = 0.75 * 0.5 * (b - a);
        assert!((level * psi_sq - 0.02f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn ground_truth_examples() {
        let quad = QuadratureConfig::default();
        let phi = pixel_bumps(&PixelGrid::unit(4).unwrap(), 0.95).unwrap();
        let zero = Phantom::new(vec![], disc()).unwrap();
        assert!(ground_truth_measurement(&zero, &phi, &quad).unwrap().iter().all(|v| *v == 0.0));
        let ones = evaluate_measurement(&phi, |_| 1.0, &quad).unwrap();
        assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn ground_truth_matches_midpoint_oracle() {
        let quad = QuadratureConfig {
            box_order: 32,
            ..QuadratureConfig::default()
        };
        let phi = pixel_bumps(&PixelGrid::unit(5).unwrap(), 0.95).unwrap();
        let p = Phantom::new(
            vec![Blob {
                center: [0.5, 0.5],
                radius: 0.4,
                amplitude: 1.0,
            }],
            disc(),
        )
        .unwrap();
        let gt = ground_truth_measurement(&p, &phi, &quad).unwrap();
        let mut checked = 0;
        for (j, member) in phi.iter().enumerate() {
            let Support::Box(r) = member.support() else { panic!() };
            // the blob profile has a kink at its rim, where neither rule is
            // accurate; only pixels on one side of the rim are compared
            let corners = [r.lo, r.hi, [r.lo[0], r.hi[1]], [r.hi[0], r.lo[1]]];
            let inside = corners.iter().all(|c| (c[0] - 0.5).hypot(c[1] - 0.5) < 0.4);
            if !inside {
                continue;
            }
            checked += 1;
            let sum = |n: usize| {
                let (hx, hy) = (r.width() / n as f64, r.height() / n as f64);
                let mut acc = 0.0;
                for i in 0..n {
                    for l in 0..n {
                        let x = [r.lo[0] + (i as f64 + 0.5) * hx, r.lo[1] + (l as f64 + 0.5) * hy];
                        acc += member.eval(&x) * p.eval(x) * hx * hy;
                    }
                }
                acc
            };
            let oracle = (4.0 * sum(200) - sum(100)) / 3.0;
            assert!((gt[j] - oracle).abs() < 1e-7 * oracle.abs().max(1e-3), "{j}: {} vs {oracle}", gt[j]);
        }
        assert_eq!(checked, 5);
    }
}
