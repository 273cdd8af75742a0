//! Planar geometry primitives: vectors, poses, oriented boxes, drivable areas.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::CoreError;

/// 2-D point/vector in meters. Serializes as `[x, y]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    /// Rotate counter-clockwise by `angle` radians.
    pub fn rotate(self, angle: f64) -> Vec2 {
        let (sin, cos) = angle.sin_cos();
        Vec2::new(self.x * cos - self.y * sin, self.x * sin + self.y * cos)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Unit vector, with the gradient-safe convention: `(x − 0)/max(‖x‖, eps)`.
    pub fn safe_unit(self, eps: f64) -> Vec2 {
        let n = self.norm();
        if n == 0.0 {
            Vec2::ZERO
        } else {
            self.scale(1.0 / n.max(eps))
        }
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        self.scale(rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Normalize an angle to the canonical range `(-π, π]`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut a = yaw.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    // rem_euclid maps -π to +π already; 0 stays 0.
    if a == -PI {
        a = PI;
    }
    a
}

/// Position plus heading.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub yaw: f64,
}

impl Pose {
    pub fn new(position: Vec2, yaw: f64) -> Self {
        Pose {
            position,
            yaw: normalize_yaw(yaw),
        }
    }

    /// Identity anchor: rotation 0, translation 0.
    pub fn identity() -> Self {
        Pose::default()
    }
}

/// Map local-frame points into the world frame: rotate by the anchor yaw,
/// then translate by the anchor position.
pub fn local_to_world(local: &[Vec2], anchor: Pose) -> Vec<Vec2> {
    local
        .iter()
        .map(|p| p.rotate(anchor.yaw) + anchor.position)
        .collect()
}

/// Inverse of [`local_to_world`].
pub fn world_to_local(world: &[Vec2], anchor: Pose) -> Vec<Vec2> {
    world
        .iter()
        .map(|p| (*p - anchor.position).rotate(-anchor.yaw))
        .collect()
}

/// Rectangle with center, heading and (length, width) extent in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec2,
    pub yaw: f64,
    /// (length along heading, width across heading), both > 0.
    pub extent: (f64, f64),
}

impl OrientedBox {
    pub fn new(center: Vec2, yaw: f64, extent: (f64, f64)) -> Self {
        OrientedBox {
            center,
            yaw,
            extent,
        }
    }

    /// The four corners, counter-clockwise.
    pub fn corners(&self) -> [Vec2; 4] {
        let hl = self.extent.0 * 0.5;
        let hw = self.extent.1 * 0.5;
        let axis_l = Vec2::new(self.yaw.cos(), self.yaw.sin());
        let axis_w = Vec2::new(-self.yaw.sin(), self.yaw.cos());
        [
            self.center + axis_l.scale(hl) + axis_w.scale(hw),
            self.center + axis_l.scale(-hl) + axis_w.scale(hw),
            self.center + axis_l.scale(-hl) + axis_w.scale(-hw),
            self.center + axis_l.scale(hl) + axis_w.scale(-hw),
        ]
    }
}

/// Separating-axis test over the 4 edge normals of the two rectangles.
/// Boundary contact (touching edges or corners) counts as overlap.
pub fn obb_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let axes = [a.yaw, a.yaw + PI / 2.0, b.yaw, b.yaw + PI / 2.0];
    let delta = b.center - a.center;
    for yaw in axes {
        let axis = Vec2::new(yaw.cos(), yaw.sin());
        let ra = half_projection(a, axis);
        let rb = half_projection(b, axis);
        if delta.dot(axis).abs() > ra + rb {
            return false;
        }
    }
    true
}

fn half_projection(b: &OrientedBox, axis: Vec2) -> f64 {
    let axis_l = Vec2::new(b.yaw.cos(), b.yaw.sin());
    let axis_w = Vec2::new(-b.yaw.sin(), b.yaw.cos());
    (b.extent.0 * 0.5) * axis_l.dot(axis).abs() + (b.extent.1 * 0.5) * axis_w.dot(axis).abs()
}

/// Simple polygon: ≥ 3 vertices, implicitly closed.
pub type Polygon = Vec<Vec2>;

/// Union of outer polygons minus hole polygons.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DrivableArea {
    pub polygons: Vec<Polygon>,
    #[serde(default)]
    pub holes: Vec<Polygon>,
}

impl DrivableArea {
    pub fn new(polygons: Vec<Polygon>, holes: Vec<Polygon>) -> Self {
        DrivableArea { polygons, holes }
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    /// Validate the polygon invariants: ≥ 3 non-collinear vertices, no
    /// self-intersection. Returns the first violation found.
    pub fn validate(&self) -> Result<(), CoreError> {
        for poly in self.polygons.iter().chain(self.holes.iter()) {
            validate_polygon(poly)?;
        }
        Ok(())
    }
}

fn validate_polygon(poly: &Polygon) -> Result<(), CoreError> {
    if poly.len() < 3 {
        return Err(CoreError::InvalidInput(format!(
            "polygon has {} vertices, need at least 3",
            poly.len()
        )));
    }
    if poly.iter().any(|p| !p.is_finite()) {
        return Err(CoreError::InvalidInput(
            "polygon vertex is not finite".into(),
        ));
    }
    // All-collinear check via twice-signed-area of the fan.
    let area2: f64 = (1..poly.len() - 1)
        .map(|i| cross(poly[i] - poly[0], poly[i + 1] - poly[0]))
        .sum();
    if area2.abs() < 1e-12 {
        return Err(CoreError::InvalidInput(
            "polygon vertices are collinear (zero area)".into(),
        ));
    }
    // Non-adjacent edge pairs must not cross.
    let n = poly.len();
    for i in 0..n {
        for j in i + 1..n {
            // Skip adjacent edges (they share a vertex).
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (a1, a2) = (poly[i], poly[(i + 1) % n]);
            let (b1, b2) = (poly[j], poly[(j + 1) % n]);
            if segments_cross(a1, a2, b1, b2) {
                return Err(CoreError::InvalidInput(format!(
                    "polygon self-intersects (edges {i} and {j})"
                )));
            }
        }
    }
    Ok(())
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn segments_cross(a1: Vec2, a2: Vec2, b1: Vec2, b2: Vec2) -> bool {
    let d1 = cross(a2 - a1, b1 - a1);
    let d2 = cross(a2 - a1, b2 - a1);
    let d3 = cross(b2 - b1, a1 - b1);
    let d4 = cross(b2 - b1, a2 - b1);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Even-odd ray-casting membership for a single polygon; points exactly on
/// the boundary count as inside.
pub fn point_in_polygon(p: Vec2, poly: &Polygon) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        if point_on_segment(p, poly[i], poly[(i + 1) % n]) {
            return true;
        }
    }
    // Cast a ray along +x; count crossings with the half-open edge rule so a
    // ray through a vertex is counted once.
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi.y > p.y) != (pj.y > p.y) {
            let x_cross = pj.x + (p.y - pj.y) / (pi.y - pj.y) * (pi.x - pj.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub(crate) fn point_on_segment(p: Vec2, a: Vec2, b: Vec2) -> bool {
    let ab = b - a;
    let ap = p - a;
    if cross(ab, ap).abs() > 1e-12 * ab.norm().max(1.0) {
        return false;
    }
    let t = ap.dot(ab);
    t >= 0.0 && t <= ab.norm_sq()
}

/// True iff `p` lies in some outer polygon and in no hole. Boundary points
/// (of outers and of holes) count as drivable.
pub fn point_in_drivable(p: Vec2, area: &DrivableArea) -> bool {
    if !area.polygons.iter().any(|poly| point_in_polygon(p, poly)) {
        return false;
    }
    for hole in &area.holes {
        // On the hole boundary is still drivable; strictly inside is not.
        if point_in_polygon(p, hole) && !on_polygon_boundary(p, hole) {
            return false;
        }
    }
    true
}

fn on_polygon_boundary(p: Vec2, poly: &Polygon) -> bool {
    let n = poly.len();
    (0..n).any(|i| point_on_segment(p, poly[i], poly[(i + 1) % n]))
}

/// Closest point on the boundary of the drivable area (all outer and hole
/// edges), with the squared distance. `None` when the area has no polygons.
pub fn closest_boundary_point(p: Vec2, area: &DrivableArea) -> Option<(Vec2, f64)> {
    let mut best: Option<(Vec2, f64)> = None;
    for poly in area.polygons.iter().chain(area.holes.iter()) {
        let n = poly.len();
        for i in 0..n {
            let q = closest_point_on_segment(p, poly[i], poly[(i + 1) % n]);
            let d2 = (p - q).norm_sq();
            if best.map_or(true, |(_, bd2)| d2 < bd2) {
                best = Some((q, d2));
            }
        }
    }
    best
}

pub(crate) fn closest_point_on_segment(p: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let ab = b - a;
    let len2 = ab.norm_sq();
    if len2 == 0.0 {
        return a;
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    a + ab.scale(t)
}
