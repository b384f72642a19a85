//! Run configuration: a TOML file with one table per concern.
//!
//! Every table and key is optional and falls back to the default instance
//! (the two-blob phantom under 24 rotations × 48 detectors, reconstructed on
//! a 32×32 pixel grid). Syntax errors carry the line reported by the TOML
//! parser; semantic errors are traced back to the offending key.

use std::fmt;
use std::path::{Path, PathBuf};

use distfree_core::assembly::AssemblyMode;
use distfree_core::geometry::{uniform_rotations, Disc, FanBeamGeometry, FanBeamParams};
use distfree_core::kernels::{CovarianceKernel, KernelFamily};
use distfree_core::measurement::{pixel_bumps, MeasurementSet, PixelGrid};
use distfree_core::phantom::{Blob, Phantom};
use distfree_core::posterior::DEFAULT_JITTER_POLICY;
use distfree_core::quadrature::{QuadratureConfig, Rect};
use serde::{Deserialize, Serialize};

/// A configuration problem, with the 1-based line it was found on when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Cone,
    Line,
    PointLine,
}

impl From<Mode> for AssemblyMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Cone => AssemblyMode::Cone,
            Mode::Line => AssemblyMode::Line,
            Mode::PointLine => AssemblyMode::PointLine,
        }
    }
}

impl From<AssemblyMode> for Mode {
    fn from(m: AssemblyMode) -> Self {
        match m {
            AssemblyMode::Cone => Mode::Cone,
            AssemblyMode::Line => Mode::Line,
            AssemblyMode::PointLine => Mode::PointLine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    SquaredExponential,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub window_lo: [f64; 2],
    pub window_hi: [f64; 2],
    pub source: [f64; 2],
    pub screen_radius: f64,
    pub half_opening: f64,
    pub detectors: usize,
    pub fill: f64,
    /// Number of rotations spread evenly over the full turn.
    pub rotations: usize,
    pub disc_center: [f64; 2],
    pub disc_radius: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        let p = FanBeamParams::default();
        Self {
            window_lo: p.window.lo,
            window_hi: p.window.hi,
            source: p.source,
            screen_radius: p.screen_radius,
            half_opening: p.half_opening,
            detectors: p.detector_count,
            fill: p.detector_fill,
            rotations: p.rotation_angles.len(),
            disc_center: p.object_disc.center,
            disc_radius: p.object_disc.radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub family: Family,
    pub variance: f64,
    pub length_scale: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            family: Family::SquaredExponential,
            variance: 1.0,
            length_scale: 0.12,
        }
    }
}

/// White detector noise, given either relative to the peak clean datum or as
/// an absolute spectral level. Exactly one of the two must be set; a missing
/// table means 1% of the peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Data standard deviation as a fraction of `max |clean data|`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    /// Level `s` of the white-noise covariance `s·δ(θ − θ')` on the screen.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            fraction: Some(0.01),
            level: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSection {
    pub box_order: usize,
    pub cone_radial: usize,
    pub cone_angular: usize,
    pub line_order: usize,
    pub screen_order: usize,
    pub ray_order: usize,
    pub ray_panels: usize,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        let q = QuadratureConfig::default();
        Self {
            box_order: q.box_order,
            cone_radial: q.cone_radial,
            cone_angular: q.cone_angular,
            line_order: q.line_order,
            screen_order: q.screen_order,
            ray_order: q.ray_order,
            ray_panels: q.ray_panels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PixelSection {
    /// Pixels per side of the interrogation grid.
    pub grid: usize,
    /// Fraction of each pixel covered by its bump.
    pub fill: f64,
    /// Further grids interrogated from the same data solve.
    pub reinterrogate: Vec<usize>,
}

impl Default for PixelSection {
    fn default() -> Self {
        Self {
            grid: 32,
            fill: 0.95,
            reinterrogate: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    pub blob: Vec<BlobSpec>,
}

impl Default for PhantomSection {
    fn default() -> Self {
        let disc = Disc {
            center: [0.5, 0.5],
            radius: 0.4,
        };
        let blobs = Phantom::two_blobs(disc).expect("default phantom is valid");
        Self {
            blob: blobs
                .blobs()
                .iter()
                .map(|b| BlobSpec {
                    center: b.center,
                    radius: b.radius,
                    amplitude: b.amplitude,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssemblySection {
    pub c12: Mode,
    pub c22: Mode,
    /// Relative jitter step for factoring C22.
    pub jitter_policy: f64,
}

impl Default for AssemblySection {
    fn default() -> Self {
        Self {
            c12: Mode::Cone,
            c22: Mode::Cone,
            jitter_policy: DEFAULT_JITTER_POLICY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    /// Truncation levels (frequencies per axis), strictly increasing.
    pub levels: Vec<usize>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            levels: vec![2, 4, 6, 8, 10, 12],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub geometry: GeometrySection,
    pub kernel: KernelSection,
    pub noise: NoiseSection,
    pub quadrature: QuadratureSection,
    pub pixels: PixelSection,
    pub phantom: PhantomSection,
    pub assembly: AssemblySection,
    pub compare: CompareSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            output: PathBuf::from("out"),
            geometry: GeometrySection::default(),
            kernel: KernelSection::default(),
            noise: NoiseSection::default(),
            quadrature: QuadratureSection::default(),
            pixels: PixelSection::default(),
            phantom: PhantomSection::default(),
            assembly: AssemblySection::default(),
            compare: CompareSection::default(),
        }
    }
}

/// Line of `key` inside table `section`, or of the table header when the key
/// is absent. `occurrence` selects among repeated `[[section]]` tables.
fn locate(text: &str, section: &str, key: Option<&str>, occurrence: usize) -> Option<usize> {
    let mut current = String::new();
    let mut seen = 0usize;
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            let name = line.trim_start_matches('[').split(']').next().unwrap_or("").trim();
            current = name.to_string();
            if current == section {
                seen += 1;
                if seen == occurrence + 1 {
                    header_line = Some(i + 1);
                }
            }
            continue;
        }
        if current != section || seen != occurrence + 1 {
            continue;
        }
        if let Some(k) = key {
            if let Some(rest) = line.strip_prefix(k) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    header_line
}

fn check(cond: bool, text: &str, section: &str, key: &str, message: impl Into<String>) -> Result<(), ConfigError> {
    if cond {
        Ok(())
    } else {
        Err(ConfigError {
            line: locate(text, section, Some(key), 0),
            message: format!("[{section}] {key}: {}", message.into()),
        })
    }
}

fn finite_all(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError {
            line: e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1),
            message: e.message().trim().to_string(),
        })?;
        config.validate(text)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks every parameter and that the core objects can be built from
    /// them. `text` is the source the configuration came from and is only
    /// used to report line numbers.
    pub fn validate(&self, text: &str) -> Result<(), ConfigError> {
        check(self.seed <= i64::MAX as u64, text, "", "seed", "must fit in a signed 64-bit integer")?;

        let g = &self.geometry;
        let section = "geometry";
        check(
            finite_all(&[g.window_lo[0], g.window_lo[1], g.window_hi[0], g.window_hi[1]]),
            text,
            section,
            "window_lo",
            "window corners must be finite",
        )?;
        check(
            g.window_hi[0] > g.window_lo[0] && g.window_hi[1] > g.window_lo[1],
            text,
            section,
            "window_hi",
            "upper window corner must exceed the lower one",
        )?;
        check(g.detectors >= 1, text, section, "detectors", "need at least one detector")?;
        check(g.rotations >= 1, text, section, "rotations", "need at least one rotation")?;
        check(g.fill > 0.0 && g.fill < 1.0, text, section, "fill", "must lie in (0, 1)")?;
        check(
            g.half_opening > 0.0 && g.half_opening < std::f64::consts::FRAC_PI_2,
            text,
            section,
            "half_opening",
            "must lie in (0, π/2)",
        )?;
        check(g.disc_radius > 0.0, text, section, "disc_radius", "must be positive")?;
        if let Err(e) = self.geometry() {
            return Err(ConfigError {
                line: locate(text, section, None, 0),
                message: format!("[geometry] {e}"),
            });
        }

        let k = &self.kernel;
        check(
            k.variance >= 0.0 && k.variance.is_finite(),
            text,
            "kernel",
            "variance",
            "must be finite and ≥ 0",
        )?;
        check(
            k.length_scale > 0.0 && k.length_scale.is_finite(),
            text,
            "kernel",
            "length_scale",
            "must be finite and > 0",
        )?;

        let n = &self.noise;
        match (n.fraction, n.level) {
            (Some(f), None) => check(f >= 0.0 && f.is_finite(), text, "noise", "fraction", "must be finite and ≥ 0")?,
            (None, Some(l)) => check(l >= 0.0 && l.is_finite(), text, "noise", "level", "must be finite and ≥ 0")?,
            _ => {
                return Err(ConfigError {
                    line: locate(text, "noise", None, 0),
                    message: "[noise] set exactly one of `fraction` and `level`".into(),
                })
            }
        }

        if let Err(e) = self.quadrature().validate() {
            return Err(ConfigError {
                line: locate(text, "quadrature", None, 0),
                message: format!("[quadrature] {e}"),
            });
        }

        let p = &self.pixels;
        check(p.grid >= 1, text, "pixels", "grid", "must be at least 1")?;
        check(p.fill > 0.0 && p.fill <= 1.0, text, "pixels", "fill", "must lie in (0, 1]")?;
        check(
            p.reinterrogate.iter().all(|&n| n >= 1),
            text,
            "pixels",
            "reinterrogate",
            "grid sizes must be at least 1",
        )?;

        let disc = self.disc();
        for (i, b) in self.phantom.blob.iter().enumerate() {
            let blob_check = |cond: bool, key: &str, msg: &str| {
                if cond {
                    Ok(())
                } else {
                    Err(ConfigError {
                        line: locate(text, "phantom.blob", Some(key), i),
                        message: format!("[[phantom.blob]] #{}: {key} {msg}", i + 1),
                    })
                }
            };
            blob_check(b.radius > 0.0 && b.radius.is_finite(), "radius", "must be finite and > 0")?;
            blob_check(b.amplitude.is_finite(), "amplitude", "must be finite")?;
            blob_check(finite_all(&b.center), "center", "must be finite")?;
            let dist = (b.center[0] - disc.center[0]).hypot(b.center[1] - disc.center[1]);
            blob_check(dist + b.radius <= disc.radius + 1e-12, "center", "puts the blob outside the object disc")?;
        }

        let a = &self.assembly;
        check(
            a.c22 != Mode::PointLine,
            text,
            "assembly",
            "c22",
            "point-line collapses only the interrogation side and cannot be used for C22",
        )?;
        check(
            a.jitter_policy >= 0.0 && a.jitter_policy.is_finite(),
            text,
            "assembly",
            "jitter_policy",
            "must be finite and ≥ 0",
        )?;

        let levels = &self.compare.levels;
        check(!levels.is_empty(), text, "compare", "levels", "need at least one level")?;
        check(
            levels.windows(2).all(|w| w[0] < w[1]),
            text,
            "compare",
            "levels",
            "must be strictly increasing",
        )?;
        Ok(())
    }

    /// Applies `--mode`: the mode is used for both blocks, except that
    /// point-line falls back to line for C22.
    pub fn set_mode(&mut self, mode: Mode) {
        self.assembly.c12 = mode;
        self.assembly.c22 = if mode == Mode::PointLine { Mode::Line } else { mode };
    }

    pub fn disc(&self) -> Disc {
        Disc {
            center: self.geometry.disc_center,
            radius: self.geometry.disc_radius,
        }
    }

    pub fn window(&self) -> distfree_core::Result<Rect> {
        Rect::new(self.geometry.window_lo, self.geometry.window_hi)
    }

    pub fn geometry(&self) -> distfree_core::Result<FanBeamGeometry> {
        let g = &self.geometry;
        FanBeamGeometry::new(FanBeamParams {
            window: self.window()?,
            source: g.source,
            screen_radius: g.screen_radius,
            half_opening: g.half_opening,
            detector_count: g.detectors,
            detector_fill: g.fill,
            rotation_angles: uniform_rotations(g.rotations),
            object_disc: self.disc(),
        })
    }

    pub fn kernel(&self) -> distfree_core::Result<CovarianceKernel> {
        let family = match self.kernel.family {
            Family::SquaredExponential => KernelFamily::SquaredExponential,
            Family::Exponential => KernelFamily::Exponential,
        };
        CovarianceKernel::new(family, self.kernel.variance, self.kernel.length_scale, 2)
    }

    pub fn quadrature(&self) -> QuadratureConfig {
        let q = &self.quadrature;
        QuadratureConfig {
            box_order: q.box_order,
            cone_radial: q.cone_radial,
            cone_angular: q.cone_angular,
            line_order: q.line_order,
            screen_order: q.screen_order,
            ray_order: q.ray_order,
            ray_panels: q.ray_panels,
        }
    }

    pub fn phantom(&self) -> distfree_core::Result<Phantom> {
        let blobs = self
            .phantom
            .blob
            .iter()
            .map(|b| Blob {
                center: b.center,
                radius: b.radius,
                amplitude: b.amplitude,
            })
            .collect();
        Phantom::new(blobs, self.disc())
    }

    pub fn pixels(&self, side: usize) -> distfree_core::Result<MeasurementSet> {
        pixel_bumps(&PixelGrid::new(self.window()?, side)?, self.pixels.fill)
    }
}
