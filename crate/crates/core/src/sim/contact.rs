//! Penalty contact geometry.
//!
//! Contacts are evaluated between probe points (tool tips, peg rims) and
//! static or moving surfaces. Each penetrating probe produces a normal force
//! `max(0, k·δ + d·δ̇)` along the exit normal; there is no friction.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Infinite plane; the solid side is where `(p - point)·normal < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl HalfSpace {
    pub fn new(point: Vector3<f64>, normal: Vector3<f64>) -> Self {
        Self {
            point,
            normal: normal.normalize(),
        }
    }

    pub fn table() -> Self {
        Self::new(Vector3::zeros(), Vector3::z())
    }

    /// Penetration depth and exit normal, if the point is inside the solid.
    pub fn penetration(&self, p: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let s = (p - self.point).dot(&self.normal);
        (s < 0.0).then_some((-s, self.normal))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PegShape {
    Cylinder,
    Cuboid,
}

/// A block with a blind hole. Local frame: origin at the centre of the hole
/// entrance, `+z` the outward face normal, the hole extends toward `-z`.
/// For cylinders "half width" means radius; for cuboids the half side length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoleFixture {
    pub shape: PegShape,
    pub hole_half_width: f64,
    pub outer_half_width: f64,
    pub hole_depth: f64,
    pub block_depth: f64,
    pub chamfer: f64,
}

impl HoleFixture {
    /// Lateral distance measure matching the hole shape and the outward radial direction.
    fn radial(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        match self.shape {
            PegShape::Cylinder => {
                let r = (p.x * p.x + p.y * p.y).sqrt();
                let dir = if r > 1e-12 {
                    Vector3::new(p.x / r, p.y / r, 0.0)
                } else {
                    Vector3::x()
                };
                (r, dir)
            }
            PegShape::Cuboid => {
                if p.x.abs() >= p.y.abs() {
                    (p.x.abs(), Vector3::new(p.x.signum(), 0.0, 0.0))
                } else {
                    (p.y.abs(), Vector3::new(0.0, p.y.signum(), 0.0))
                }
            }
        }
    }

    /// Penetration and exit normal in the fixture frame for a local point.
    pub fn penetration_local(&self, p: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        if p.z >= 0.0 || p.z <= -self.block_depth {
            return None;
        }
        let (r, radial) = self.radial(p);
        if r >= self.outer_half_width {
            return None;
        }
        let h = self.hole_half_width;
        let c = self.chamfer;
        if r <= h {
            // Inside the bore: only the bottom can push back.
            let below = -self.hole_depth - p.z;
            return (below > 0.0).then_some((below, Vector3::z()));
        }
        // The point is in block material (or chamfer region). Collect exit options.
        let mut best: Option<(f64, Vector3<f64>)> = None;
        let consider = |best: &mut Option<(f64, Vector3<f64>)>, depth: f64, n: Vector3<f64>| {
            if depth > 0.0 && best.is_none_or(|(d, _)| depth < d) {
                *best = Some((depth, n));
            }
        };
        if r < h + c {
            // 45° cone from (r = h + c, z = 0) down to (r = h, z = -c).
            let surface_z = -(h + c - r);
            if p.z >= surface_z {
                return None;
            }
            let n = (-radial + Vector3::z()) / std::f64::consts::SQRT_2;
            consider(&mut best, (surface_z - p.z) / std::f64::consts::SQRT_2, n);
        } else {
            consider(&mut best, -p.z, Vector3::z());
        }
        if p.z > -self.hole_depth {
            consider(&mut best, r - h, -radial);
        }
        if best.is_none() {
            // Below the bore bottom and outside the bore radius: exit through the face.
            consider(&mut best, -p.z, Vector3::z());
        }
        best
    }

    /// Depth of a local point below the entrance and its lateral offset.
    pub fn insertion_metrics(&self, p: &Vector3<f64>) -> (f64, f64) {
        (-p.z, (p.x * p.x + p.y * p.y).sqrt())
    }

    pub fn clearance(&self) -> f64 {
        2.0 * self.hole_half_width
    }
}

/// Magnitude of the penalty force for a penetration and its rate; never adhesive.
pub fn penalty_force(stiffness: f64, damping: f64, depth: f64, depth_rate: f64) -> f64 {
    (stiffness * depth + damping * depth_rate).max(0.0)
}
