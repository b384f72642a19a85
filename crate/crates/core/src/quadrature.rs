//! Gauss–Legendre quadrature and the integration domains used for assembly.
//!
//! All integrals in this crate reduce to weighted node sums. A 1-D rule lives
//! on `[-1, 1]` and is mapped affinely onto intervals, segments, radial and
//! angular ranges of cones, and the axes of rectangles.

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::Point2;

/// Largest single-panel Gauss order supported by [`gauss_rule`].
pub const MAX_GAUSS_ORDER: usize = 64;

/// A quadrature rule on `[-1, 1]` with strictly increasing interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule1D {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    degree: usize,
}

impl QuadratureRule1D {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of nodes.
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Highest polynomial degree integrated exactly.
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Nodes and weights mapped affinely onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    /// Composite rule: `panels` equal sub-intervals, each carrying an
    /// `order`-point Gauss rule. Used where integrands have kinks in a
    /// higher derivative and a single panel converges only algebraically.
    pub fn composite(order: usize, panels: usize) -> Result<Self> {
        if panels == 0 {
            return Err(invalid("composite rule needs at least one panel"));
        }
        let base = gauss_rule(order)?;
        if panels == 1 {
            return Ok(base);
        }
        let width = 2.0 / panels as f64;
        let mut nodes = Vec::with_capacity(order * panels);
        let mut weights = Vec::with_capacity(order * panels);
        for p in 0..panels {
            let a = -1.0 + width * p as f64;
            for (x, w) in base.mapped(a, a + width) {
                nodes.push(x);
                weights.push(w);
            }
        }
        Ok(Self {
            nodes,
            weights,
            degree: base.degree,
        })
    }
}

/// The `order`-point Gauss–Legendre rule, exact for polynomials of degree
/// `2·order − 1`.
///
/// Nodes are Newton-iterated roots of the Legendre polynomial; the rule is
/// built from one half and mirrored so it is exactly symmetric.
pub fn gauss_rule(order: usize) -> Result<QuadratureRule1D> {
    if !(1..=MAX_GAUSS_ORDER).contains(&order) {
        return Err(invalid(format!(
            "Gauss order must lie in 1..={MAX_GAUSS_ORDER}, got {order}"
        )));
    }
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // i-th largest root
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
        nodes[i] = -x;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadratureRule1D {
        nodes,
        weights,
        degree: 2 * n - 1,
    })
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn checked(value: f64, location: &[f64]) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            location: location.to_vec(),
        })
    }
}

/// `∫_a^b f(x) dx` by the affinely mapped rule.
pub fn integrate_interval<F>(f: F, a: f64, b: f64, rule: &QuadratureRule1D) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(a < b) {
        return Err(invalid(format!("interval [{a}, {b}] is empty or reversed")));
    }
    rule.mapped(a, b)
        .try_fold(0.0, |acc, (x, w)| Ok(acc + w * checked(f(x), &[x])?))
}

/// Axis-aligned rectangle `[lo.0, hi.0] × [lo.1, hi.1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub lo: Point2,
    pub hi: Point2,
}

impl Rect {
    pub fn new(lo: Point2, hi: Point2) -> Result<Self> {
        if !(lo[0] < hi[0] && lo[1] < hi[1]) {
            return Err(invalid(format!("degenerate rectangle {lo:?}..{hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit() -> Self {
        Self {
            lo: [0.0, 0.0],
            hi: [1.0, 1.0],
        }
    }

    pub fn width(&self) -> f64 {
        self.hi[0] - self.lo[0]
    }

    pub fn height(&self) -> f64 {
        self.hi[1] - self.lo[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point2 {
        [
            0.5 * (self.lo[0] + self.hi[0]),
            0.5 * (self.lo[1] + self.hi[1]),
        ]
    }

    /// Closed containment.
    pub fn contains(&self, p: Point2) -> bool {
        p[0] >= self.lo[0] && p[0] <= self.hi[0] && p[1] >= self.lo[1] && p[1] <= self.hi[1]
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let lo = [self.lo[0].max(other.lo[0]), self.lo[1].max(other.lo[1])];
        let hi = [self.hi[0].min(other.hi[0]), self.hi[1].min(other.hi[1])];
        Rect::new(lo, hi).ok()
    }

    /// Parameter interval `{t : origin + t·dir ∈ self}`, or `None` when the
    /// line misses the rectangle (or only touches it).
    pub fn ray_interval(&self, origin: Point2, dir: Point2) -> Option<(f64, f64)> {
        let mut t_lo = f64::NEG_INFINITY;
        let mut t_hi = f64::INFINITY;
        for d in 0..2 {
            if dir[d] == 0.0 {
                if origin[d] < self.lo[d] || origin[d] > self.hi[d] {
                    return None;
                }
            } else {
                let t1 = (self.lo[d] - origin[d]) / dir[d];
                let t2 = (self.hi[d] - origin[d]) / dir[d];
                t_lo = t_lo.max(t1.min(t2));
                t_hi = t_hi.min(t1.max(t2));
            }
        }
        (t_hi > t_lo).then_some((t_lo, t_hi))
    }
}

/// A straight segment, integrated with respect to arclength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSegment {
    pub start: Point2,
    pub end: Point2,
}

impl LineSegment {
    pub fn new(start: Point2, end: Point2) -> Result<Self> {
        if start == end {
            return Err(invalid("segment endpoints coincide"));
        }
        Ok(Self { start, end })
    }

    pub fn length(&self) -> f64 {
        (self.end[0] - self.start[0]).hypot(self.end[1] - self.start[1])
    }

    /// Point at arclength fraction `s ∈ [0, 1]`.
    pub fn point_at(&self, s: f64) -> Point2 {
        [
            self.start[0] + s * (self.end[0] - self.start[0]),
            self.start[1] + s * (self.end[1] - self.start[1]),
        ]
    }
}

/// `∫_seg f ds`.
pub fn integrate_line<F>(f: F, seg: &LineSegment, rule: &QuadratureRule1D) -> Result<f64>
where
    F: Fn(Point2) -> f64,
{
    let len = seg.length();
    rule.mapped(0.0, 1.0).try_fold(0.0, |acc, (s, w)| {
        let p = seg.point_at(s);
        Ok(acc + w * len * checked(f(p), &p)?)
    })
}

/// Angular sector `{apex + t·ω(θ) : 0 < t < radius, angle_lo < θ < angle_hi}`,
/// optionally clipped to a rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeRegion {
    pub apex: Point2,
    pub angle_lo: f64,
    pub angle_hi: f64,
    pub radius: f64,
    pub clip_box: Option<Rect>,
}

impl ConeRegion {
    pub fn new(
        apex: Point2,
        angle_lo: f64,
        angle_hi: f64,
        radius: f64,
        clip_box: Option<Rect>,
    ) -> Result<Self> {
        if !(angle_lo < angle_hi) {
            return Err(invalid(format!(
                "cone angles must satisfy lo < hi, got {angle_lo} and {angle_hi}"
            )));
        }
        if !(radius > 0.0) {
            return Err(invalid(format!("cone radius must be positive, got {radius}")));
        }
        Ok(Self {
            apex,
            angle_lo,
            angle_hi,
            radius,
            clip_box,
        })
    }

    /// Radial extent `[t0, t1]` of the clipped cone along direction `theta`.
    pub fn ray_extent(&self, theta: f64) -> Option<(f64, f64)> {
        let dir = [theta.cos(), theta.sin()];
        let (mut t0, mut t1) = (0.0f64, self.radius);
        if let Some(b) = &self.clip_box {
            let (lo, hi) = b.ray_interval(self.apex, dir)?;
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
        (t1 > t0).then_some((t0, t1))
    }

    pub fn contains(&self, p: Point2) -> bool {
        if let Some(b) = &self.clip_box {
            if !b.contains(p) {
                return false;
            }
        }
        let d = [p[0] - self.apex[0], p[1] - self.apex[1]];
        let r = d[0].hypot(d[1]);
        if r == 0.0 || r >= self.radius {
            return false;
        }
        let mid = 0.5 * (self.angle_lo + self.angle_hi);
        let half = 0.5 * (self.angle_hi - self.angle_lo);
        let (c, s) = (mid.cos(), mid.sin());
        let rel = (c * d[1] - s * d[0]).atan2(c * d[0] + s * d[1]);
        rel.abs() < half
    }
}

/// `∫∫_cone f(x) dx` in polar coordinates about the apex (Jacobian `t`).
///
/// Each angular node gets its own radial rule on the exact clipped extent of
/// that ray, so the clipped region contributes nothing and no discontinuity
/// enters the radial integrand.
pub fn integrate_cone<F>(
    f: F,
    cone: &ConeRegion,
    rule_r: &QuadratureRule1D,
    rule_theta: &QuadratureRule1D,
) -> Result<f64>
where
    F: Fn(Point2) -> f64,
{
    let nodes = cone_nodes(cone, rule_r, rule_theta);
    nodes
        .points
        .iter()
        .zip(&nodes.weights)
        .try_fold(0.0, |acc, (p, w)| Ok(acc + w * checked(f(*p), p)?))
}

fn cone_nodes(
    cone: &ConeRegion,
    rule_r: &QuadratureRule1D,
    rule_theta: &QuadratureRule1D,
) -> DomainNodes {
    let mut points = Vec::with_capacity(rule_r.order() * rule_theta.order());
    let mut weights = Vec::with_capacity(points.capacity());
    for (theta, w_theta) in rule_theta.mapped(cone.angle_lo, cone.angle_hi) {
        let Some((t0, t1)) = cone.ray_extent(theta) else {
            continue;
        };
        let dir = [theta.cos(), theta.sin()];
        for (t, w_t) in rule_r.mapped(t0, t1) {
            points.push([cone.apex[0] + t * dir[0], cone.apex[1] + t * dir[1]]);
            weights.push(w_theta * w_t * t);
        }
    }
    DomainNodes {
        dim: 2,
        points,
        weights,
    }
}

/// Integration domains accepted by [`integrate_product`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Interval(f64, f64),
    Segment(LineSegment),
    Cone(ConeRegion),
    Rect(Rect),
}

/// Rules for one domain. `along` is the interval/segment/radial/x rule,
/// `across` the angular/y rule (ignored by 1-D domains).
#[derive(Debug, Clone)]
pub struct DomainRule {
    pub along: QuadratureRule1D,
    pub across: QuadratureRule1D,
}

impl DomainRule {
    pub fn uniform(rule: QuadratureRule1D) -> Self {
        Self {
            along: rule.clone(),
            across: rule,
        }
    }
}

/// Quadrature nodes of a domain. 1-D domains (`dim == 1`) store their
/// coordinate in the first component.
#[derive(Debug, Clone, Default)]
pub struct DomainNodes {
    pub dim: usize,
    pub points: Vec<Point2>,
    pub weights: Vec<f64>,
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval(..) => 1,
            _ => 2,
        }
    }

    pub fn nodes(&self, rule: &DomainRule) -> Result<DomainNodes> {
        match self {
            Domain::Interval(a, b) => {
                if !(a < b) {
                    return Err(invalid(format!("interval [{a}, {b}] is empty or reversed")));
                }
                let (points, weights) = rule.along.mapped(*a, *b).map(|(x, w)| ([x, 0.0], w)).unzip();
                Ok(DomainNodes {
                    dim: 1,
                    points,
                    weights,
                })
            }
            Domain::Segment(seg) => {
                let len = seg.length();
                let (points, weights) = rule
                    .along
                    .mapped(0.0, 1.0)
                    .map(|(s, w)| (seg.point_at(s), w * len))
                    .unzip();
                Ok(DomainNodes {
                    dim: 2,
                    points,
                    weights,
                })
            }
            Domain::Cone(cone) => Ok(cone_nodes(cone, &rule.along, &rule.across)),
            Domain::Rect(r) => {
                let mut nodes = DomainNodes {
                    dim: 2,
                    ..Default::default()
                };
                for (x, wx) in rule.along.mapped(r.lo[0], r.hi[0]) {
                    for (y, wy) in rule.across.mapped(r.lo[1], r.hi[1]) {
                        nodes.points.push([x, y]);
                        nodes.weights.push(wx * wy);
                    }
                }
                Ok(nodes)
            }
        }
    }
}

/// `∫_{d1} ∫_{d2} f(x, y) dy dx` by iterated quadrature. `f` receives
/// coordinate slices of length `d1.dim()` and `d2.dim()`.
pub fn integrate_product<F>(
    f: F,
    d1: &Domain,
    d2: &Domain,
    rule1: &DomainRule,
    rule2: &DomainRule,
) -> Result<f64>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let n1 = d1.nodes(rule1)?;
    let n2 = d2.nodes(rule2)?;
    let mut total = 0.0;
    for (x, wx) in n1.points.iter().zip(&n1.weights) {
        let xs = &x[..n1.dim];
        let mut inner = 0.0;
        for (y, wy) in n2.points.iter().zip(&n2.weights) {
            let ys = &y[..n2.dim];
            let v = f(xs, ys);
            if !v.is_finite() {
                let mut location = xs.to_vec();
                location.extend_from_slice(ys);
                return Err(Error::NonFinite { location });
            }
            inner += wy * v;
        }
        total += wx * inner;
    }
    Ok(total)
}

/// A test function discretized as a weighted point measure: the inner product
/// `⟨φ, f⟩` is approximated by `Σ w_a f(x_a)`.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeCloud {
    Scattered {
        points: Vec<Point2>,
        weights: Vec<f64>,
    },
    /// Nodes on the grid `xs × ys`; `weights[i * ys.len() + l]` belongs to
    /// the node `(xs[i], ys[l])`.
    Tensor {
        xs: Vec<f64>,
        ys: Vec<f64>,
        weights: Vec<f64>,
    },
}

impl NodeCloud {
    pub fn len(&self) -> usize {
        match self {
            NodeCloud::Scattered { weights, .. } | NodeCloud::Tensor { weights, .. } => weights.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `Σ w_a`, the quadrature value of `∫ φ`.
    pub fn total_mass(&self) -> f64 {
        match self {
            NodeCloud::Scattered { weights, .. } | NodeCloud::Tensor { weights, .. } => {
                weights.iter().sum()
            }
        }
    }

    /// Visit every `(point, weight)` pair in storage order.
    pub fn for_each(&self, mut f: impl FnMut(Point2, f64)) {
        match self {
            NodeCloud::Scattered { points, weights } => {
                for (p, w) in points.iter().zip(weights) {
                    f(*p, *w);
                }
            }
            NodeCloud::Tensor { xs, ys, weights } => {
                for (i, x) in xs.iter().enumerate() {
                    for (l, y) in ys.iter().enumerate() {
                        f([*x, *y], weights[i * ys.len() + l]);
                    }
                }
            }
        }
    }

    /// `Σ w_a f(x_a)`, failing on the first non-finite value of `f`.
    pub fn integrate(&self, f: impl Fn(Point2) -> f64) -> Result<f64> {
        let mut acc = 0.0;
        let mut bad = None;
        self.for_each(|p, w| {
            if bad.is_some() || w == 0.0 {
                return;
            }
            let v = f(p);
            if v.is_finite() {
                acc += w * v;
            } else {
                bad = Some(p);
            }
        });
        match bad {
            Some(p) => Err(Error::NonFinite { location: p.to_vec() }),
            None => Ok(acc),
        }
    }

    pub fn to_scattered(&self) -> (Vec<Point2>, Vec<f64>) {
        let mut points = Vec::with_capacity(self.len());
        let mut weights = Vec::with_capacity(self.len());
        self.for_each(|p, w| {
            points.push(p);
            weights.push(w);
        });
        (points, weights)
    }

    /// The whole mass placed at a single point.
    pub fn collapsed_to(&self, center: Point2) -> NodeCloud {
        NodeCloud::Scattered {
            points: vec![center],
            weights: vec![self.total_mass()],
        }
    }
}

/// Node counts for every assembly quadrature.
///
/// The defaults keep the acceptance checks at least two digits inside their
/// tolerances for the default fan-beam instance.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureConfig {
    /// Nodes per axis on rectangular supports (pixel bumps).
    pub box_order: usize,
    /// Radial nodes per ray inside a cone.
    pub cone_radial: usize,
    /// Angular nodes across a cone.
    pub cone_angular: usize,
    /// Nodes along a central line.
    pub line_order: usize,
    /// Nodes on 1-D device-function supports.
    pub screen_order: usize,
    /// Gauss order of each panel along a ray when generating data.
    pub ray_order: usize,
    /// Panels along a ray when generating data.
    pub ray_panels: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            box_order: 8,
            cone_radial: 16,
            cone_angular: 8,
            line_order: 16,
            screen_order: 16,
            ray_order: 16,
            ray_panels: 8,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("box_order", self.box_order),
            ("cone_radial", self.cone_radial),
            ("cone_angular", self.cone_angular),
            ("line_order", self.line_order),
            ("screen_order", self.screen_order),
            ("ray_order", self.ray_order),
        ] {
            if !(1..=MAX_GAUSS_ORDER).contains(&v) {
                return Err(invalid(format!(
                    "quadrature {name} must lie in 1..={MAX_GAUSS_ORDER}, got {v}"
                )));
            }
        }
        if self.ray_panels == 0 {
            return Err(invalid("quadrature ray_panels must be at least 1"));
        }
        Ok(())
    }

    pub fn cone_rule(&self) -> Result<DomainRule> {
        Ok(DomainRule {
            along: gauss_rule(self.cone_radial)?,
            across: gauss_rule(self.cone_angular)?,
        })
    }

    pub fn box_rule(&self) -> Result<QuadratureRule1D> {
        gauss_rule(self.box_order)
    }

    pub fn ray_rule(&self) -> Result<QuadratureRule1D> {
        QuadratureRule1D::composite(self.ray_order, self.ray_panels)
    }
}
