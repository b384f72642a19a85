//! Fan-beam acquisition geometry and the pushforward `ψ ↦ Aψ`.
//!
//! A point source `x₀` illuminates the window through a fan of half-opening
//! `α`. The screen is an arc of radius `R` about the source, parametrized by
//! the angle `θ` measured from the central axis (the direction from the
//! source to the window center). A device function `ψ` on the screen induces
//! the test function
//!
//! ```text
//! (Aψ)(x) = ψ(θ(x)) / |x − x₀|
//! ```
//!
//! on the window, supported in the cone of rays hitting `supp ψ`. Projections
//! at different angles rotate the source and screen about the window center,
//! which is equivalent to rotating the object.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::measurement::{bump_1d, MeasurementSet, TestFunction};
use crate::quadrature::{
    gauss_rule, ConeRegion, LineSegment, NodeCloud, QuadratureConfig, QuadratureRule1D, Rect,
};
use crate::Point2;

/// Disc carrying the unknown density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub center: Point2,
    pub radius: f64,
}

impl Disc {
    pub fn contains(&self, p: Point2) -> bool {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1]) <= self.radius
    }

    /// Parameter interval where `origin + t·dir` (unit `dir`) lies in the disc.
    pub fn chord(&self, origin: Point2, dir: Point2) -> Option<(f64, f64)> {
        let to_c = [self.center[0] - origin[0], self.center[1] - origin[1]];
        let b = dir[0] * to_c[0] + dir[1] * to_c[1];
        let perp2 = to_c[0] * to_c[0] + to_c[1] * to_c[1] - b * b;
        let h2 = self.radius * self.radius - perp2;
        if h2 <= 0.0 {
            return None;
        }
        let h = h2.sqrt();
        Some((b - h, b + h))
    }
}

/// Unvalidated fan-beam parameters; see [`FanBeamGeometry::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct FanBeamParams {
    pub window: Rect,
    /// Source position at rotation angle 0.
    pub source: Point2,
    pub screen_radius: f64,
    pub half_opening: f64,
    pub detector_count: usize,
    /// Fraction of each detector interval covered by its device function.
    pub detector_fill: f64,
    pub rotation_angles: Vec<f64>,
    pub object_disc: Disc,
}

impl Default for FanBeamParams {
    fn default() -> Self {
        Self {
            window: Rect::unit(),
            source: [-1.0, 0.5],
            screen_radius: 2.5,
            half_opening: 0.3,
            detector_count: 48,
            detector_fill: 0.95,
            rotation_angles: uniform_rotations(24),
            object_disc: Disc {
                center: [0.5, 0.5],
                radius: 0.4,
            },
        }
    }
}

/// `count` angles evenly spaced over `[0, 2π)`.
pub fn uniform_rotations(count: usize) -> Vec<f64> {
    (0..count).map(|r| 2.0 * PI * r as f64 / count as f64).collect()
}

#[inline]
fn rotate_about(p: Point2, center: Point2, angle: f64) -> Point2 {
    let (s, c) = angle.sin_cos();
    let d = [p[0] - center[0], p[1] - center[1]];
    [center[0] + c * d[0] - s * d[1], center[1] + s * d[0] + c * d[1]]
}

/// Validated, immutable fan-beam geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct FanBeamGeometry {
    params: FanBeamParams,
    base_axis: f64,
}

impl FanBeamGeometry {
    pub fn new(params: FanBeamParams) -> Result<Self> {
        let p = &params;
        let finite = [
            p.source[0],
            p.source[1],
            p.screen_radius,
            p.half_opening,
            p.detector_fill,
            p.object_disc.center[0],
            p.object_disc.center[1],
            p.object_disc.radius,
        ];
        if finite.iter().any(|v| !v.is_finite()) || p.rotation_angles.iter().any(|v| !v.is_finite()) {
            return Err(invalid("geometry parameters must be finite"));
        }
        if !(p.half_opening > 0.0 && p.half_opening < FRAC_PI_2) {
            return Err(invalid(format!(
                "half opening must lie in (0, π/2), got {}",
                p.half_opening
            )));
        }
        if !(p.screen_radius > 0.0) {
            return Err(invalid("screen radius must be positive"));
        }
        if p.detector_count == 0 {
            return Err(invalid("at least one detector is required"));
        }
        if !(p.detector_fill > 0.0 && p.detector_fill < 1.0) {
            return Err(invalid(format!(
                "detector fill must lie in (0, 1), got {}",
                p.detector_fill
            )));
        }
        if p.rotation_angles.is_empty() {
            return Err(invalid("at least one rotation angle is required"));
        }
        let d = p.object_disc;
        if !(d.radius > 0.0) {
            return Err(invalid("object disc radius must be positive"));
        }
        let w = p.window;
        if d.center[0] - d.radius < w.lo[0]
            || d.center[0] + d.radius > w.hi[0]
            || d.center[1] - d.radius < w.lo[1]
            || d.center[1] + d.radius > w.hi[1]
        {
            return Err(invalid("object disc must lie inside the window"));
        }
        let wc = w.center();
        if p.source == wc {
            return Err(invalid("source coincides with the window center"));
        }
        let base_axis = (wc[1] - p.source[1]).atan2(wc[0] - p.source[0]);
        let geometry = Self { params, base_axis };
        for r in 0..geometry.rotation_count() {
            geometry.check_rotation(r)?;
        }
        Ok(geometry)
    }

    fn check_rotation(&self, r: usize) -> Result<()> {
        let p = &self.params;
        let apex = self.source_at(r);
        let angle = p.rotation_angles[r];
        let w = p.window;
        if apex[0] >= w.lo[0] && apex[0] <= w.hi[0] && apex[1] >= w.lo[1] && apex[1] <= w.hi[1] {
            return Err(invalid(format!(
                "rotation {r} ({angle} rad) places the source inside the window"
            )));
        }
        let disc = p.object_disc;
        let to_c = [disc.center[0] - apex[0], disc.center[1] - apex[1]];
        let dist = to_c[0].hypot(to_c[1]);
        if dist <= disc.radius {
            return Err(invalid(format!("rotation {r} places the source inside the object disc")));
        }
        if dist + disc.radius >= p.screen_radius {
            return Err(invalid(format!(
                "screen radius {} does not reach past the object disc at rotation {r}",
                p.screen_radius
            )));
        }
        let axis = self.axis_angle(r);
        let off = wrap_angle(to_c[1].atan2(to_c[0]) - axis);
        if off.abs() + (disc.radius / dist).asin() > p.half_opening {
            return Err(invalid(format!(
                "the fan of half opening {} does not cover the object disc at rotation {r}",
                p.half_opening
            )));
        }
        Ok(())
    }

    pub fn params(&self) -> &FanBeamParams {
        &self.params
    }

    pub fn window(&self) -> Rect {
        self.params.window
    }

    pub fn object_disc(&self) -> Disc {
        self.params.object_disc
    }

    pub fn half_opening(&self) -> f64 {
        self.params.half_opening
    }

    pub fn screen_radius(&self) -> f64 {
        self.params.screen_radius
    }

    pub fn detector_count(&self) -> usize {
        self.params.detector_count
    }

    pub fn rotation_angles(&self) -> &[f64] {
        &self.params.rotation_angles
    }

    pub fn rotation_count(&self) -> usize {
        self.params.rotation_angles.len()
    }

    /// Number of data `m = detectors × rotations`.
    pub fn data_len(&self) -> usize {
        self.detector_count() * self.rotation_count()
    }

    /// Source position at rotation `r`.
    pub fn source_at(&self, r: usize) -> Point2 {
        rotate_about(
            self.params.source,
            self.params.window.center(),
            self.params.rotation_angles[r],
        )
    }

    /// Direction angle of the central axis at rotation `r`.
    pub fn axis_angle(&self, r: usize) -> f64 {
        self.base_axis + self.params.rotation_angles[r]
    }

    /// Width `|s_k| = 2α / m_d` of one detector interval.
    pub fn detector_width(&self) -> f64 {
        2.0 * self.params.half_opening / self.params.detector_count as f64
    }

    /// Detector interval `s_k` on the screen angle.
    pub fn detector_interval(&self, k: usize) -> (f64, f64) {
        let dw = self.detector_width();
        let lo = -self.params.half_opening + k as f64 * dw;
        (lo, lo + dw)
    }

    /// Structured `key = value` description for logs.
    pub fn summary(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        let _ = writeln!(s, "window = {:?} {:?}", p.window.lo, p.window.hi);
        let _ = writeln!(s, "source = {:?}", p.source);
        let _ = writeln!(s, "screen_radius = {}", p.screen_radius);
        let _ = writeln!(s, "half_opening = {}", p.half_opening);
        let _ = writeln!(s, "detector_count = {}", p.detector_count);
        let _ = writeln!(s, "detector_fill = {}", p.detector_fill);
        let _ = writeln!(s, "rotation_count = {}", p.rotation_angles.len());
        let angles: Vec<String> = p.rotation_angles.iter().map(|a| format!("{a:.17e}")).collect();
        let _ = writeln!(s, "rotation_angles = {}", angles.join(","));
        let _ = writeln!(
            s,
            "object_disc = {:?} {}",
            p.object_disc.center, p.object_disc.radius
        );
        let _ = writeln!(s, "data_len = {}", self.data_len());
        s
    }
}

/// Wraps an angle to `(−π, π]`.
fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// The test function `Aψ` on the window for one device function and one
/// rotation.
#[derive(Debug, Clone)]
pub struct PushedTestFunction {
    base: TestFunction,
    rotation_index: usize,
    apex: Point2,
    axis_angle: f64,
    screen_radius: f64,
    window: Rect,
    cone: ConeRegion,
    central_line: Option<LineSegment>,
}

impl PushedTestFunction {
    pub fn base(&self) -> &TestFunction {
        &self.base
    }

    pub fn rotation_index(&self) -> usize {
        self.rotation_index
    }

    pub fn apex(&self) -> Point2 {
        self.apex
    }

    pub fn axis_angle(&self) -> f64 {
        self.axis_angle
    }

    /// Support `Γ_k`: the fan of rays through `supp ψ`, clipped to the window.
    pub fn cone(&self) -> &ConeRegion {
        &self.cone
    }

    /// Ray `ℓ_k` through the middle of `supp ψ`, clipped to the window.
    /// `None` when that ray misses the window.
    pub fn central_line(&self) -> Option<&LineSegment> {
        self.central_line.as_ref()
    }

    /// Screen angle `θ(x)` of a point, measured from the central axis.
    pub fn theta(&self, x: Point2) -> f64 {
        let (s, c) = self.axis_angle.sin_cos();
        let d = [x[0] - self.apex[0], x[1] - self.apex[1]];
        (c * d[1] - s * d[0]).atan2(c * d[0] + s * d[1])
    }

    /// `ψ(θ(x)) / |x − x₀|` inside the clipped cone, zero elsewhere.
    pub fn eval(&self, x: Point2) -> f64 {
        if !self.window.contains(x) {
            return 0.0;
        }
        let r = (x[0] - self.apex[0]).hypot(x[1] - self.apex[1]);
        if r == 0.0 || r >= self.screen_radius {
            return 0.0;
        }
        self.base.eval(&[self.theta(x)]) / r
    }

    /// Polar quadrature cloud of `Aψ` with explicit rules. The `1/t` factor of
    /// `Aψ` cancels the polar Jacobian, so node weights are `w_θ·w_t·ψ(θ)`.
    pub fn cone_cloud_with(
        &self,
        rule_r: &QuadratureRule1D,
        rule_theta: &QuadratureRule1D,
    ) -> Result<NodeCloud> {
        let (a, b) = self.base.interval()?;
        let mut points = Vec::with_capacity(rule_r.order() * rule_theta.order());
        let mut weights = Vec::with_capacity(points.capacity());
        for (theta, w_theta) in rule_theta.mapped(a, b) {
            let psi = self.base.eval(&[theta]);
            if psi == 0.0 {
                continue;
            }
            let Some((t0, t1)) = self.cone.ray_extent(self.axis_angle + theta) else {
                continue;
            };
            let (s, c) = (self.axis_angle + theta).sin_cos();
            for (t, w_t) in rule_r.mapped(t0, t1) {
                points.push([self.apex[0] + t * c, self.apex[1] + t * s]);
                weights.push(w_theta * w_t * psi);
            }
        }
        Ok(NodeCloud::Scattered { points, weights })
    }

    pub fn cone_cloud(&self, quad: &QuadratureConfig) -> Result<NodeCloud> {
        self.cone_cloud_with(&gauss_rule(quad.cone_radial)?, &gauss_rule(quad.cone_angular)?)
    }

    /// Narrow-cone collapse onto the central line: `Aψ` is replaced by the line
    /// density `(∫ψ dθ)·δ_ℓ`, so `⟨Aψ, f⟩ ≈ (∫ψ) ∫_ℓ f ds`.
    pub fn line_cloud(&self, quad: &QuadratureConfig) -> Result<NodeCloud> {
        let Some(seg) = &self.central_line else {
            return Ok(NodeCloud::Scattered {
                points: vec![],
                weights: vec![],
            });
        };
        let mass = self.base.integral(quad)?;
        let rule = gauss_rule(quad.line_order)?;
        let len = seg.length();
        let (points, weights) = rule
            .mapped(0.0, len)
            .map(|(s, w)| (seg.point_at(s / len), w * mass))
            .unzip();
        Ok(NodeCloud::Scattered { points, weights })
    }

    /// Conservative axis-aligned box containing the clipped cone.
    pub fn bounding_box(&self) -> Rect {
        let c = &self.cone;
        let mut lo = c.apex;
        let mut hi = c.apex;
        let mut grow = |p: Point2| {
            lo = [lo[0].min(p[0]), lo[1].min(p[1])];
            hi = [hi[0].max(p[0]), hi[1].max(p[1])];
        };
        for a in [c.angle_lo, c.angle_hi] {
            grow([c.apex[0] + c.radius * a.cos(), c.apex[1] + c.radius * a.sin()]);
        }
        // arc extremes in the four axis directions
        for q in -4i32..=4 {
            let a = q as f64 * FRAC_PI_2;
            if a > c.angle_lo && a < c.angle_hi {
                grow([c.apex[0] + c.radius * a.cos(), c.apex[1] + c.radius * a.sin()]);
            }
        }
        let sector = Rect { lo, hi };
        sector.intersect(&self.window).unwrap_or(Rect {
            lo: self.window.lo,
            hi: self.window.lo,
        })
    }
}

/// `Aψ` for the device function `psi` at rotation `rotation_index`.
pub fn push_forward(
    g: &FanBeamGeometry,
    psi: &TestFunction,
    rotation_index: usize,
) -> Result<PushedTestFunction> {
    if rotation_index >= g.rotation_count() {
        return Err(invalid(format!(
            "rotation index {rotation_index} out of range ({} rotations)",
            g.rotation_count()
        )));
    }
    let (a, b) = psi.interval()?;
    let alpha = g.half_opening();
    let slack = 1e-12 * alpha;
    if a < -alpha - slack || b > alpha + slack {
        return Err(invalid(format!(
            "device function support [{a}, {b}] leaves the fan [−{alpha}, {alpha}]"
        )));
    }
    let apex = g.source_at(rotation_index);
    let axis_angle = g.axis_angle(rotation_index);
    let window = g.window();
    let cone = ConeRegion::new(
        apex,
        axis_angle + a,
        axis_angle + b,
        g.screen_radius(),
        Some(window),
    )?;
    let mid = axis_angle + 0.5 * (a + b);
    let dir = [mid.cos(), mid.sin()];
    let central_line = window.ray_interval(apex, dir).and_then(|(t0, t1)| {
        let t1 = t1.min(g.screen_radius());
        let t0 = t0.max(0.0);
        (t1 > t0)
            .then(|| {
                LineSegment::new(
                    [apex[0] + t0 * dir[0], apex[1] + t0 * dir[1]],
                    [apex[0] + t1 * dir[0], apex[1] + t1 * dir[1]],
                )
                .ok()
            })
            .flatten()
    });
    Ok(PushedTestFunction {
        base: psi.clone(),
        rotation_index,
        apex,
        axis_angle,
        screen_radius: g.screen_radius(),
        window,
        cone,
        central_line,
    })
}

/// One peak-one cos² device function per detector interval, covering the
/// fraction `detector_fill` of the interval about its center.
pub fn detector_set(g: &FanBeamGeometry) -> MeasurementSet {
    let dw = g.detector_width();
    let hw = 0.5 * g.params().detector_fill * dw;
    let members = (0..g.detector_count())
        .map(|k| {
            let center = -g.half_opening() + (k as f64 + 0.5) * dw;
            bump_1d(center, hw)
                .expect("validated geometry gives positive widths")
                .with_label(format!("det{k}"))
        })
        .collect();
    MeasurementSet::new(members).expect("validated geometry has detectors")
}

/// The pushed set `AΨ` of all rotations, rotation-major then detector.
pub fn acquisition_set(g: &FanBeamGeometry) -> Result<MeasurementSet> {
    let psi = detector_set(g);
    let mut members = Vec::with_capacity(g.data_len());
    for r in 0..g.rotation_count() {
        for (k, d) in psi.iter().enumerate() {
            members.push(TestFunction::pushed(push_forward(g, d, r)?, format!("rot{r}/det{k}")));
        }
    }
    MeasurementSet::new(members)
}

/// Noiseless data `b_k = ∫ψ_k(θ) ∫_0^R F(x₀ + tω(θ)) dt dθ` for every
/// rotation and detector, in acquisition order.
///
/// The angular integral uses `cone_angular` Gauss nodes on `supp ψ_k`; the
/// ray integral runs over the chord of the object disc with the composite
/// ray rule. `f` must vanish outside the object disc.
pub fn line_integral_data<F>(g: &FanBeamGeometry, f: F, quad: &QuadratureConfig) -> Result<DVector<f64>>
where
    F: Fn(Point2) -> f64 + Sync,
{
    quad.validate()?;
    let psi = detector_set(g);
    let theta_rule = gauss_rule(quad.cone_angular)?;
    let ray_rule = quad.ray_rule()?;
    let disc = g.object_disc();
    let m_d = g.detector_count();
    let values: Vec<Result<f64>> = (0..g.data_len())
        .into_par_iter()
        .map(|idx| {
            let (r, k) = (idx / m_d, idx % m_d);
            let apex = g.source_at(r);
            let axis = g.axis_angle(r);
            let (a, b) = psi[k].interval()?;
            let mut acc = 0.0;
            for (theta, w_theta) in theta_rule.mapped(a, b) {
                let weight = psi[k].eval(&[theta]);
                if weight == 0.0 {
                    continue;
                }
                let dir = [(axis + theta).cos(), (axis + theta).sin()];
                let Some((t0, t1)) = disc.chord(apex, dir) else {
                    continue;
                };
                let (t0, t1) = (t0.max(0.0), t1.min(g.screen_radius()));
                if t1 <= t0 {
                    continue;
                }
                let mut ray = 0.0;
                for (t, w_t) in ray_rule.mapped(t0, t1) {
                    let x = [apex[0] + t * dir[0], apex[1] + t * dir[1]];
                    let v = f(x);
                    if !v.is_finite() {
                        return Err(Error::NonFinite { location: x.to_vec() });
                    }
                    ray += w_t * v;
                }
                acc += w_theta * weight * ray;
            }
            Ok(acc)
        })
        .collect();
    Ok(DVector::from_vec(values.into_iter().collect::<Result<Vec<_>>>()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::QuadratureRule1D;

    fn blob(center: Point2, radius: f64) -> impl Fn(Point2) -> f64 + Sync {
        move |x: Point2| {
            let r = (x[0] - center[0]).hypot(x[1] - center[1]);
            if r < radius {
                (FRAC_PI_2 * r / radius).cos().powi(2)
            } else {
                0.0
            }
        }
    }

    fn small_geometry(detectors: usize, rotations: Vec<f64>) -> FanBeamGeometry {
        FanBeamGeometry::new(FanBeamParams {
            detector_count: detectors,
            rotation_angles: rotations,
            ..FanBeamParams::default()
        })
        .unwrap()
    }

    #[test]
    fn default_geometry_is_valid() {
        let g = FanBeamGeometry::new(FanBeamParams::default()).unwrap();
        assert_eq!(g.data_len(), 24 * 48);
        assert!(g.summary().contains("data_len = 1152"));
    }

    #[test]
    fn invalid_geometries_rejected() {
        let bad = |f: fn(&mut FanBeamParams)| {
            let mut p = FanBeamParams::default();
            f(&mut p);
            FanBeamGeometry::new(p).is_err()
        };
        assert!(bad(|p| p.half_opening = 0.0));
        assert!(bad(|p| p.half_opening = 1.6));
        assert!(bad(|p| p.half_opening = 0.2)); // fan misses disc edges
        assert!(bad(|p| p.source = [0.6, 0.5])); // inside window
        assert!(bad(|p| p.screen_radius = 1.8));
        assert!(bad(|p| p.detector_count = 0));
        assert!(bad(|p| p.detector_fill = 1.0));
        assert!(bad(|p| p.rotation_angles.clear()));
        assert!(bad(|p| p.object_disc.radius = 0.6));
    }

    #[test]
    fn detector_centers_and_supports() {
        let g = FanBeamGeometry::new(FanBeamParams {
            half_opening: 0.2,
            detector_count: 4,
            object_disc: Disc {
                center: [0.5, 0.5],
                radius: 0.25,
            },
            ..FanBeamParams::default()
        })
        .unwrap();
        let psi = detector_set(&g);
        let expect = [-0.15, -0.05, 0.05, 0.15];
        let mut prev_hi = -0.2;
        for (d, c) in psi.iter().zip(expect) {
            let (a, b) = d.interval().unwrap();
            assert!((0.5 * (a + b) - c).abs() < 1e-15);
            assert!(a > prev_hi - 1e-15 && b <= 0.2);
            prev_hi = b;
        }
    }

    #[test]
    fn pushforward_on_axis_and_outside_cone() {
        let g = small_geometry(1, vec![0.0]);
        let psi = TestFunction::custom_1d(-0.3, 0.3, |_| 1.0).unwrap();
        let p = push_forward(&g, &psi, 0).unwrap();
        assert_eq!(p.apex(), [-1.0, 0.5]);
        for d in [1.2, 1.5, 1.9] {
            let v = p.eval([-1.0 + d, 0.5]);
            assert!((v - 1.0 / d).abs() < 1e-15);
        }
        let det = &detector_set(&small_geometry(8, vec![0.0]))[0];
        let p = push_forward(&g, det, 0).unwrap();
        assert_eq!(p.eval([0.5, 0.5]), 0.0);
        assert!(!p.cone().contains([0.5, 0.5]));
        assert!(push_forward(&g, det, 1).is_err());
        let wide = TestFunction::custom_1d(-0.4, 0.0, |_| 1.0).unwrap();
        assert!(push_forward(&g, &wide, 0).is_err());
    }

    #[test]
    fn rotation_by_pi_is_equivariant() {
        let g = small_geometry(6, vec![0.0, PI]);
        let psi = detector_set(&g);
        let c = g.window().center();
        for d in psi.iter() {
            let p0 = push_forward(&g, d, 0).unwrap();
            let p1 = push_forward(&g, d, 1).unwrap();
            for i in 0..40 {
                for j in 0..40 {
                    let x = [0.0125 + 0.025 * i as f64, 0.0125 + 0.025 * j as f64];
                    let xr = rotate_about(x, c, PI);
                    assert!((p1.eval(xr) - p0.eval(x)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pushed_functions_vanish_outside_their_cone() {
        let g = small_geometry(5, uniform_rotations(3));
        let set = acquisition_set(&g).unwrap();
        assert_eq!(set.len(), 15);
        for m in set.iter() {
            let p = m.as_pushed().unwrap();
            assert!(!g.window().contains(p.apex()));
            let bb = p.bounding_box();
            for i in 0..50 {
                for j in 0..50 {
                    let x = [0.01 + 0.02 * i as f64, 0.01 + 0.02 * j as f64];
                    if !p.cone().contains(x) {
                        assert_eq!(m.eval(&x), 0.0);
                    }
                    if m.eval(&x) != 0.0 {
                        assert!(bb.contains(x));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_phantom_gives_zero_data() {
        let g = small_geometry(4, uniform_rotations(2));
        let b = line_integral_data(&g, |_| 0.0, &QuadratureConfig::default()).unwrap();
        assert_eq!(b.len(), 8);
        assert!(b.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn symmetric_rotations_give_identical_data() {
        let g = small_geometry(7, vec![0.0, PI]);
        let f = blob([0.5, 0.5], 0.3);
        let b = line_integral_data(&g, f, &QuadratureConfig::default()).unwrap();
        for k in 0..7 {
            assert!((b[k] - b[7 + k]).abs() <= 1e-9 * b[k].abs().max(1e-300));
        }
    }

    fn d_sin_max(a: f64, b: f64) -> f64 {
        1.5 * a.abs().max(b.abs()).sin()
    }

    #[test]
    fn chord_length_oracle() {
        // F ≡ 1 on a disc of radius ρ centered on the axis; the chord at screen
        // angle θ has length 2√(ρ² − d² sin²θ) with d the source distance.
        // With 47 detectors the central one sees only rays that cross the disc,
        // so the chord is smooth over its support.
        let rho = 0.3;
        let g = FanBeamGeometry::new(FanBeamParams {
            detector_count: 47,
            rotation_angles: vec![0.0],
            object_disc: Disc {
                center: [0.5, 0.5],
                radius: rho,
            },
            ..FanBeamParams::default()
        })
        .unwrap();
        let quad = QuadratureConfig {
            cone_angular: 48,
            ..QuadratureConfig::default()
        };
        let b = line_integral_data(&g, |_| 1.0, &quad).unwrap();
        let psi = &detector_set(&g)[23];
        let (a, bb) = psi.interval().unwrap();
        assert!(d_sin_max(a, bb) < rho);
        let d = 1.5;
        let fine = QuadratureRule1D::composite(32, 64).unwrap();
        let exact: f64 = fine
            .mapped(a, bb)
            .map(|(th, w)| {
                let h2 = rho * rho - (d * th.sin()).powi(2);
                w * psi.eval(&[th]) * 2.0 * h2.max(0.0).sqrt()
            })
            .sum();
        assert!((b[23] - exact).abs() < 1e-8 * exact, "{} vs {exact}", b[23]);
    }

    #[test]
    fn duality_cone_vs_ray_transform() {
        let g = small_geometry(8, vec![0.0, 1.3]);
        let quad = QuadratureConfig {
            ray_panels: 32,
            ..QuadratureConfig::default()
        };
        let f = blob([0.45, 0.55], 0.25);
        let b = line_integral_data(&g, &f, &quad).unwrap();
        let set = acquisition_set(&g).unwrap();
        let radial = QuadratureRule1D::composite(16, 32).unwrap();
        let angular = gauss_rule(quad.cone_angular).unwrap();
        for (j, m) in set.iter().enumerate() {
            let cloud = m.as_pushed().unwrap().cone_cloud_with(&radial, &angular).unwrap();
            let v = cloud.integrate(&f).unwrap();
            if b[j].abs() > 1e-12 {
                assert!((v - b[j]).abs() < 1e-6 * b[j].abs(), "{j}: {v} vs {}", b[j]);
            }
        }
    }

    #[test]
    fn rotated_phantom_matches_rotated_geometry() {
        let phi = 0.7;
        let c = [0.5, 0.5];
        let f = blob([0.4, 0.6], 0.2);
        let g_rot = small_geometry(6, vec![phi]);
        let g0 = small_geometry(6, vec![0.0]);
        let quad = QuadratureConfig::default();
        let b_rot = line_integral_data(&g_rot, &f, &quad).unwrap();
        let b0 = line_integral_data(&g0, |x| f(rotate_about(x, c, phi)), &quad).unwrap();
        for (a, b) in b_rot.iter().zip(b0.iter()) {
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-12));
        }
    }

    #[test]
    fn cone_to_line_gap_shrinks_with_detector_width() {
        let f = |x: Point2| (-((x[0] - 0.45).powi(2) + (x[1] - 0.55).powi(2)) / 0.05).exp();
        let quad = QuadratureConfig {
            cone_radial: 32,
            line_order: 32,
            ..QuadratureConfig::default()
        };
        let gap = |m_d: usize| {
            let g = small_geometry(m_d, vec![0.0]);
            let set = acquisition_set(&g).unwrap();
            let (mut num, mut den) = (0.0, 0.0);
            for m in set.iter() {
                let p = m.as_pushed().unwrap();
                let cone = p.cone_cloud(&quad).unwrap().integrate(f).unwrap();
                let line = p.line_cloud(&quad).unwrap().integrate(f).unwrap();
                num += (cone - line).abs();
                den += cone.abs();
            }
            num / den
        };
        let gaps: Vec<f64> = [4, 8, 16, 32].into_iter().map(gap).collect();
        for w in gaps.windows(2) {
            assert!(w[0] / w[1] >= 3.0, "{gaps:?}");
        }
    }
}
