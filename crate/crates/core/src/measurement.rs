//! Test functions and measurement sets.
//!
//! A measurement set `Φ = {φ_1, …, φ_n}` maps a classical function `f` to the
//! vector `(⟨φ_1, f⟩, …, ⟨φ_n, f⟩)`. Device functions on the detector screen
//! are 1-D; pixel bumps and pushed-forward detector functions are 2-D.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::ops::Index;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::geometry::PushedTestFunction;
use crate::quadrature::{gauss_rule, NodeCloud, QuadratureConfig, QuadratureRule1D, Rect};
use crate::Point2;

/// Support of a test function: an interval in 1-D, a box in 2-D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Interval(f64, f64),
    Box(Rect),
}

type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Shape {
    /// `cos²(π(t − c)/2w)` on `|t − c| < w`.
    Bump1d { center: f64, half_width: f64 },
    /// Tensor product of two 1-D cos² bumps.
    PixelBump { center: Point2, half_width: Point2 },
    Pushed(Box<PushedTestFunction>),
    Custom {
        dim: usize,
        support: Support,
        f: Evaluator,
    },
}

/// A compactly supported test function, evaluable pointwise.
#[derive(Clone)]
pub struct TestFunction {
    shape: Shape,
    scale: f64,
    label: String,
}

#[inline]
fn cos2_bump(offset: f64, half_width: f64) -> f64 {
    if offset.abs() < half_width {
        (FRAC_PI_2 * offset / half_width).cos().powi(2)
    } else {
        0.0
    }
}

/// Peak-one cos² device function centered at `center`. Its integral equals
/// `half_width`.
pub fn bump_1d(center: f64, half_width: f64) -> Result<TestFunction> {
    if !(half_width > 0.0 && half_width.is_finite()) {
        return Err(invalid(format!("bump half-width must be positive, got {half_width}")));
    }
    Ok(TestFunction {
        shape: Shape::Bump1d { center, half_width },
        scale: 1.0,
        label: format!("bump1d@{center}"),
    })
}

impl TestFunction {
    /// User-supplied 1-D function. It must vanish outside `[a, b]`; values
    /// outside are forced to zero.
    pub fn custom_1d(a: f64, b: f64, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        if !(a < b) {
            return Err(invalid(format!("empty support [{a}, {b}]")));
        }
        Ok(Self {
            shape: Shape::Custom {
                dim: 1,
                support: Support::Interval(a, b),
                f: Arc::new(move |x: &[f64]| f(x[0])),
            },
            scale: 1.0,
            label: "custom1d".into(),
        })
    }

    /// User-supplied 2-D function on a box; zero outside the box.
    pub fn custom_2d(support: Rect, f: impl Fn(Point2) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            shape: Shape::Custom {
                dim: 2,
                support: Support::Box(support),
                f: Arc::new(move |x: &[f64]| f([x[0], x[1]])),
            },
            scale: 1.0,
            label: "custom2d".into(),
        }
    }

    pub(crate) fn pushed(p: PushedTestFunction, label: String) -> Self {
        Self {
            shape: Shape::Pushed(Box::new(p)),
            scale: 1.0,
            label,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.scale *= factor;
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        match &self.shape {
            Shape::Bump1d { .. } => 1,
            Shape::PixelBump { .. } | Shape::Pushed(_) => 2,
            Shape::Custom { dim, .. } => *dim,
        }
    }

    pub fn as_pushed(&self) -> Option<&PushedTestFunction> {
        match &self.shape {
            Shape::Pushed(p) => Some(p),
            _ => None,
        }
    }

    pub fn support(&self) -> Support {
        match &self.shape {
            Shape::Bump1d { center, half_width } => {
                Support::Interval(center - half_width, center + half_width)
            }
            Shape::PixelBump { center, half_width } => Support::Box(Rect {
                lo: [center[0] - half_width[0], center[1] - half_width[1]],
                hi: [center[0] + half_width[0], center[1] + half_width[1]],
            }),
            Shape::Pushed(p) => Support::Box(p.bounding_box()),
            Shape::Custom { support, .. } => *support,
        }
    }

    /// Support interval of a 1-D function.
    pub fn interval(&self) -> Result<(f64, f64)> {
        match self.support() {
            Support::Interval(a, b) => Ok((a, b)),
            Support::Box(_) => Err(invalid(format!("`{}` is not a 1-D test function", self.label))),
        }
    }

    /// Center of the support box or interval.
    pub fn support_center(&self) -> Point2 {
        match self.support() {
            Support::Interval(a, b) => [0.5 * (a + b), 0.0],
            Support::Box(r) => r.center(),
        }
    }

    /// Pointwise value; `x` has `dim()` coordinates.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let v = match &self.shape {
            Shape::Bump1d { center, half_width } => cos2_bump(x[0] - center, *half_width),
            Shape::PixelBump { center, half_width } => {
                cos2_bump(x[0] - center[0], half_width[0]) * cos2_bump(x[1] - center[1], half_width[1])
            }
            Shape::Pushed(p) => p.eval([x[0], x[1]]),
            Shape::Custom { support, f, .. } => {
                let inside = match support {
                    Support::Interval(a, b) => x[0] >= *a && x[0] <= *b,
                    Support::Box(r) => r.contains([x[0], x[1]]),
                };
                if inside {
                    f(x)
                } else {
                    0.0
                }
            }
        };
        self.scale * v
    }

    /// `(t, w·ψ(t))` pairs of a 1-D function on its support.
    pub fn nodes_1d(&self, rule: &QuadratureRule1D) -> Result<Vec<(f64, f64)>> {
        let (a, b) = self.interval()?;
        Ok(rule.mapped(a, b).map(|(t, w)| (t, w * self.eval(&[t]))).collect())
    }

    /// Quadrature discretization of a 2-D function as a weighted point
    /// measure. Box-supported functions give tensor clouds; pushed detector
    /// functions give polar clouds over their clipped cone.
    pub fn cloud(&self, quad: &QuadratureConfig) -> Result<NodeCloud> {
        match &self.shape {
            Shape::Pushed(p) => Ok(p.cone_cloud(quad)?.scaled(self.scale)),
            _ => {
                let Support::Box(r) = self.support() else {
                    return Err(invalid(format!("`{}` is not a 2-D test function", self.label)));
                };
                let rule = gauss_rule(quad.box_order)?;
                let (xs, wx): (Vec<f64>, Vec<f64>) = rule.mapped(r.lo[0], r.hi[0]).unzip();
                let (ys, wy): (Vec<f64>, Vec<f64>) = rule.mapped(r.lo[1], r.hi[1]).unzip();
                let mut weights = Vec::with_capacity(xs.len() * ys.len());
                for (x, a) in xs.iter().zip(&wx) {
                    for (y, b) in ys.iter().zip(&wy) {
                        weights.push(a * b * self.eval(&[*x, *y]));
                    }
                }
                Ok(NodeCloud::Tensor { xs, ys, weights })
            }
        }
    }

    /// Central-line collapse of a pushed detector function.
    pub fn line_cloud(&self, quad: &QuadratureConfig) -> Result<NodeCloud> {
        match &self.shape {
            Shape::Pushed(p) => Ok(p.line_cloud(quad)?.scaled(self.scale)),
            _ => Err(invalid(format!("`{}` is not a pushed test function", self.label))),
        }
    }

    /// `∫ φ` by quadrature.
    pub fn integral(&self, quad: &QuadratureConfig) -> Result<f64> {
        if self.dim() == 1 {
            let rule = gauss_rule(quad.screen_order)?;
            Ok(self.nodes_1d(&rule)?.iter().map(|(_, w)| w).sum())
        } else {
            Ok(self.cloud(quad)?.total_mass())
        }
    }
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("label", &self.label)
            .field("dim", &self.dim())
            .field("support", &self.support())
            .field("scale", &self.scale)
            .finish()
    }
}

impl NodeCloud {
    pub(crate) fn scaled(self, factor: f64) -> NodeCloud {
        if factor == 1.0 {
            return self;
        }
        match self {
            NodeCloud::Scattered { points, weights } => NodeCloud::Scattered {
                points,
                weights: weights.into_iter().map(|w| w * factor).collect(),
            },
            NodeCloud::Tensor { xs, ys, weights } => NodeCloud::Tensor {
                xs,
                ys,
                weights: weights.into_iter().map(|w| w * factor).collect(),
            },
        }
    }
}

/// Ordered, nonempty collection of test functions of one dimension.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    members: Vec<TestFunction>,
    dim: usize,
}

impl MeasurementSet {
    pub fn new(members: Vec<TestFunction>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(invalid("measurement set must be nonempty"));
        };
        let dim = first.dim();
        if let Some(bad) = members.iter().find(|m| m.dim() != dim) {
            return Err(invalid(format!(
                "measurement set mixes dimensions: `{}` has dimension {} but `{}` has {dim}",
                bad.label,
                bad.dim(),
                first.label
            )));
        }
        Ok(Self { members, dim })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TestFunction> {
        self.members.iter()
    }

    pub fn members(&self) -> &[TestFunction] {
        &self.members
    }

    /// Members reordered so that position `i` holds the old member `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        for &i in order {
            if i >= self.len() || std::mem::replace(&mut seen[i], true) {
                return Err(invalid("not a permutation of the measurement set"));
            }
        }
        if order.len() != self.len() {
            return Err(invalid("not a permutation of the measurement set"));
        }
        Self::new(order.iter().map(|&i| self.members[i].clone()).collect())
    }

    /// Quadrature clouds of every (2-D) member.
    pub fn clouds(&self, quad: &QuadratureConfig) -> Result<Vec<NodeCloud>> {
        self.members.iter().map(|m| m.cloud(quad)).collect()
    }
}

impl Index<usize> for MeasurementSet {
    type Output = TestFunction;

    fn index(&self, i: usize) -> &TestFunction {
        &self.members[i]
    }
}

impl<'a> IntoIterator for &'a MeasurementSet {
    type Item = &'a TestFunction;
    type IntoIter = std::slice::Iter<'a, TestFunction>;

    fn into_iter(self) -> Self::IntoIter {
        self.members.iter()
    }
}

/// Regular `N × N` partition of a rectangular extent into pixels.
///
/// Pixel `j = iy·N + ix` covers column `ix` (x-direction) and row `iy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelGrid {
    extent: Rect,
    side_count: usize,
}

impl PixelGrid {
    pub fn new(extent: Rect, side_count: usize) -> Result<Self> {
        if side_count == 0 {
            return Err(invalid("pixel grid needs at least one pixel per side"));
        }
        Ok(Self { extent, side_count })
    }

    /// `N × N` pixels on the unit square.
    pub fn unit(side_count: usize) -> Result<Self> {
        Self::new(Rect::unit(), side_count)
    }

    pub fn extent(&self) -> Rect {
        self.extent
    }

    pub fn side_count(&self) -> usize {
        self.side_count
    }

    pub fn len(&self) -> usize {
        self.side_count * self.side_count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pixel(&self, ix: usize, iy: usize) -> Rect {
        let n = self.side_count as f64;
        let (dx, dy) = (self.extent.width() / n, self.extent.height() / n);
        let lo = [
            self.extent.lo[0] + dx * ix as f64,
            self.extent.lo[1] + dy * iy as f64,
        ];
        // the last pixel ends exactly on the extent boundary
        let hi = [
            if ix + 1 == self.side_count {
                self.extent.hi[0]
            } else {
                self.extent.lo[0] + dx * (ix + 1) as f64
            },
            if iy + 1 == self.side_count {
                self.extent.hi[1]
            } else {
                self.extent.lo[1] + dy * (iy + 1) as f64
            },
        ];
        Rect { lo, hi }
    }

    /// Pixels in index order `j = iy·N + ix`.
    pub fn pixels(&self) -> impl Iterator<Item = Rect> + '_ {
        (0..self.side_count)
            .flat_map(move |iy| (0..self.side_count).map(move |ix| self.pixel(ix, iy)))
    }
}

/// One unit-integral tensor cos² bump per pixel, supported in the pixel
/// shrunk by `fill` about its center.
pub fn pixel_bumps(grid: &PixelGrid, fill: f64) -> Result<MeasurementSet> {
    if !(fill > 0.0 && fill <= 1.0) {
        return Err(invalid(format!("pixel fill must lie in (0, 1], got {fill}")));
    }
    let n = grid.side_count();
    let members = grid
        .pixels()
        .enumerate()
        .map(|(j, p)| {
            let half_width = [0.5 * fill * p.width(), 0.5 * fill * p.height()];
            TestFunction {
                shape: Shape::PixelBump {
                    center: p.center(),
                    half_width,
                },
                // ∫cos² over a window of half-width h is h
                scale: 1.0 / (half_width[0] * half_width[1]),
                label: format!("pixel({},{})", j % n, j / n),
            }
        })
        .collect();
    MeasurementSet::new(members)
}

/// The measurement map `f ↦ (⟨φ_j, f⟩)_j`.
pub fn evaluate_measurement<F>(
    phi: &MeasurementSet,
    f: F,
    quad: &QuadratureConfig,
) -> Result<DVector<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let mut out = DVector::zeros(phi.len());
    if phi.dim() == 1 {
        let rule = gauss_rule(quad.screen_order)?;
        for (j, member) in phi.iter().enumerate() {
            let mut acc = 0.0;
            for (t, w) in member.nodes_1d(&rule)? {
                let v = f(&[t]);
                if !v.is_finite() {
                    return Err(crate::Error::NonFinite { location: vec![t] });
                }
                acc += w * v;
            }
            out[j] = acc;
        }
    } else {
        for (j, member) in phi.iter().enumerate() {
            out[j] = member.cloud(quad)?.integrate(|p| f(&p))?;
        }
    }
    Ok(out)
}
