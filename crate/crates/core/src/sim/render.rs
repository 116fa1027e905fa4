//! Small orthographic rasterizer (painter's algorithm) for policy image input.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{BodyKind, World};
use crate::geometry::Pose;

pub const BACKGROUND: [u8; 3] = [28, 30, 38];
const TABLE: [u8; 3] = [170, 160, 140];
const DIRT: [u8; 3] = [70, 45, 20];
const FIXTURE: [u8; 3] = [120, 120, 130];
const HOLE: [u8; 3] = [20, 20, 20];
const PEG: [u8; 3] = [230, 140, 40];
const ERASER: [u8; 3] = [60, 110, 220];
const LINK: [u8; 3] = [200, 200, 210];
const FINGER: [u8; 3] = [90, 200, 90];

/// Row-major `height × width × 3` RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn channels(&self) -> usize {
        3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CameraAnchor {
    Static,
    /// Rigidly attached to an arm's tool frame.
    Wrist { arm: usize },
}

/// Orthographic camera. Frame convention: `+z` viewing direction, `+x` right, `+y` down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub name: String,
    pub anchor: CameraAnchor,
    /// Static: world pose. Wrist: pose in the tool frame.
    pub pose: PoseRepr,
    pub pixels_per_meter: f64,
}

/// Plain serializable pose (position, quaternion w-x-y-z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRepr {
    pub position: [f64; 3],
    pub quat: [f64; 4],
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let q = p.orientation;
        Self {
            position: [p.position.x, p.position.y, p.position.z],
            quat: [q.w, q.i, q.j, q.k],
        }
    }
}

impl From<PoseRepr> for Pose {
    fn from(r: PoseRepr) -> Self {
        Pose::new(
            Vector3::from(r.position),
            UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                r.quat[0], r.quat[1], r.quat[2], r.quat[3],
            )),
        )
    }
}

/// Camera orientation looking from `eye` toward `target` with `up` pointing up in the image.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Pose {
    let z = (target - eye).normalize();
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Pose::new(eye, UnitQuaternion::from_rotation_matrix(&rot))
}

impl Camera {
    pub fn fixed(name: &str, eye: Vector3<f64>, target: Vector3<f64>, field_width: f64, image_width: usize) -> Self {
        Self {
            name: name.to_string(),
            anchor: CameraAnchor::Static,
            pose: look_at(eye, target, Vector3::z()).into(),
            pixels_per_meter: image_width as f64 / field_width,
        }
    }

    pub fn wrist(name: &str, arm: usize, in_tool: Pose, field_width: f64, image_width: usize) -> Self {
        Self {
            name: name.to_string(),
            anchor: CameraAnchor::Wrist { arm },
            pose: in_tool.into(),
            pixels_per_meter: image_width as f64 / field_width,
        }
    }

    pub fn world_pose(&self, world: &World) -> Pose {
        let local: Pose = self.pose.into();
        match self.anchor {
            CameraAnchor::Static => local,
            CameraAnchor::Wrist { arm } => world.arms[arm].ee_pose().compose(&local),
        }
    }
}

/// Maps world points to pixel coordinates and depth.
#[derive(Debug, Clone, Copy)]
pub struct Projector {
    pose: Pose,
    scale: f64,
    cx: f64,
    cy: f64,
}

impl Projector {
    pub fn new(camera: &Camera, world: &World, width: usize, height: usize) -> Self {
        Self {
            pose: camera.world_pose(world),
            scale: camera.pixels_per_meter,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    pub fn project(&self, p: &Vector3<f64>) -> (Vector2<f64>, f64) {
        let c = self.pose.inverse_transform_point(p);
        (
            Vector2::new(self.cx + self.scale * c.x, self.cy + self.scale * c.y),
            c.z,
        )
    }
}

enum Shape {
    Polygon(Vec<Vector2<f64>>),
    Segment(Vector2<f64>, Vector2<f64>, f64),
}

struct Primitive {
    /// Ground-level primitives (layer 0) are painted before everything else.
    layer: u8,
    depth: f64,
    order: usize,
    color: [u8; 3],
    shape: Shape,
}

fn convex_hull(mut pts: Vec<Vector2<f64>>) -> Vec<Vector2<f64>> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| (*a - *b).norm() < 1e-12);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let mut lower: Vec<Vector2<f64>> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Vector2<f64>> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn box_corners(pose: &Pose, center: Vector3<f64>, half: [f64; 3]) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(8);
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                let local = center + Vector3::new(sx * half[0], sy * half[1], sz * half[2]);
                out.push(pose.transform_point(&local));
            }
        }
    }
    out
}

/// Local-frame box (centre, half extents) used to draw and bound a body.
pub fn body_box(kind: &BodyKind) -> (Vector3<f64>, [f64; 3]) {
    match kind {
        BodyKind::Peg {
            half_width, length, ..
        } => (
            Vector3::new(0.0, 0.0, length / 2.0),
            [*half_width, *half_width, length / 2.0],
        ),
        BodyKind::Fixture(f) => (
            Vector3::new(0.0, 0.0, -f.block_depth / 2.0),
            [f.outer_half_width, f.outer_half_width, f.block_depth / 2.0],
        ),
        BodyKind::Eraser { half_extents } => (Vector3::zeros(), *half_extents),
    }
}

struct Scene<'a> {
    proj: &'a Projector,
    prims: Vec<Primitive>,
}

impl Scene<'_> {
    fn push_polygon(&mut self, pts3: &[Vector3<f64>], color: [u8; 3]) {
        self.push_polygon_layer(pts3, color, 1);
    }

    fn push_polygon_layer(&mut self, pts3: &[Vector3<f64>], color: [u8; 3], layer: u8) {
        let mut depth = 0.0;
        let mut pts = Vec::with_capacity(pts3.len());
        for p in pts3 {
            let (uv, z) = self.proj.project(p);
            depth += z;
            pts.push(uv);
        }
        depth /= pts3.len() as f64;
        let order = self.prims.len();
        self.prims.push(Primitive {
            layer,
            depth,
            order,
            color,
            shape: Shape::Polygon(convex_hull(pts)),
        });
    }

    fn push_segment(&mut self, a: &Vector3<f64>, b: &Vector3<f64>, thickness_m: f64, color: [u8; 3]) {
        let (ua, za) = self.proj.project(a);
        let (ub, zb) = self.proj.project(b);
        let order = self.prims.len();
        self.prims.push(Primitive {
            layer: 1,
            depth: 0.5 * (za + zb),
            order,
            color,
            shape: Shape::Segment(ua, ub, (thickness_m * self.proj.scale / 2.0).max(0.5)),
        });
    }
}

fn inside_convex(poly: &[Vector2<f64>], p: &Vector2<f64>) -> bool {
    if poly.len() < 3 {
        return false;
    }
    let n = poly.len();
    (0..n).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) >= 0.0
    })
}

fn segment_distance(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 < 1e-12 {
        0.0
    } else {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    };
    (a + ab * t - p).norm()
}

fn rasterize(img: &mut Image, prim: &Primitive) {
    let (min, max) = match &prim.shape {
        Shape::Polygon(pts) => {
            if pts.len() < 3 {
                return;
            }
            let mut min = pts[0];
            let mut max = pts[0];
            for p in pts {
                min = min.inf(p);
                max = max.sup(p);
            }
            (min, max)
        }
        Shape::Segment(a, b, r) => (a.inf(b).add_scalar(-r), a.sup(b).add_scalar(*r)),
    };
    let x0 = min.x.floor().max(0.0) as usize;
    let y0 = min.y.floor().max(0.0) as usize;
    let x1 = (max.x.ceil().max(0.0) as usize).min(img.width);
    let y1 = (max.y.ceil().max(0.0) as usize).min(img.height);
    for y in y0..y1 {
        for x in x0..x1 {
            let c = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let hit = match &prim.shape {
                Shape::Polygon(pts) => inside_convex(pts, &c),
                Shape::Segment(a, b, r) => segment_distance(a, b, &c) <= *r,
            };
            if hit {
                img.put(x, y, prim.color);
            }
        }
    }
}

/// Renders camera `camera` of `world` at the configured resolution.
pub fn render(world: &World, camera: usize) -> Image {
    let w = world.config.image_width;
    let h = world.config.image_height;
    let mut img = Image::filled(w, h, BACKGROUND);
    let Some(cam) = world.cameras.get(camera) else {
        return img;
    };
    let proj = Projector::new(cam, world, w, h);
    let mut scene = Scene {
        proj: &proj,
        prims: Vec::new(),
    };

    if world.surfaces.iter().any(|s| s.normal == Vector3::z() && s.point.z == 0.0) {
        let e = 0.4;
        let quad = [
            Vector3::new(-e, -e, 0.0),
            Vector3::new(e, -e, 0.0),
            Vector3::new(e, e, 0.0),
            Vector3::new(-e, e, 0.0),
        ];
        scene.push_polygon_layer(&quad, TABLE, 0);
    }
    if let Some(marks) = &world.marks {
        let hc = marks.cell_size / 2.0;
        for (cell, cleaned) in marks.cells.iter().zip(&marks.cleaned) {
            if *cleaned {
                continue;
            }
            let z = cell.z + 1e-4;
            let quad = [
                Vector3::new(cell.x - hc, cell.y - hc, z),
                Vector3::new(cell.x + hc, cell.y - hc, z),
                Vector3::new(cell.x + hc, cell.y + hc, z),
                Vector3::new(cell.x - hc, cell.y + hc, z),
            ];
            scene.push_polygon_layer(&quad, DIRT, 0);
        }
    }
    for (i, body) in world.bodies.iter().enumerate() {
        let pose = world.body_world_pose(i);
        let (center, half) = body_box(&body.kind);
        let color = match body.kind {
            BodyKind::Peg { .. } => PEG,
            BodyKind::Fixture(_) => FIXTURE,
            BodyKind::Eraser { .. } => ERASER,
        };
        scene.push_polygon(&box_corners(&pose, center, half), color);
        if let BodyKind::Fixture(f) = body.kind {
            let hw = f.hole_half_width;
            let quad: Vec<Vector3<f64>> = [(-hw, -hw), (hw, -hw), (hw, hw), (-hw, hw)]
                .iter()
                .map(|(x, y)| pose.transform_point(&Vector3::new(*x, *y, 1e-4)))
                .collect();
            scene.push_polygon(&quad, HOLE);
        }
    }
    for arm in &world.arms {
        let frames = arm.chain.frames(&arm.joints.q);
        let mut pts = vec![arm.chain.base.position];
        pts.extend(frames.links.iter().map(|l| l.translation.vector));
        pts.push(frames.ee.translation.vector);
        for pair in pts.windows(2) {
            scene.push_segment(&pair[0], &pair[1], 0.02, LINK);
        }
        let ee = Pose::from_isometry(&frames.ee);
        let open = 0.5 * world.config.gripper_max_width * arm.gripper;
        for side in [-1.0, 1.0] {
            let a = ee.transform_point(&Vector3::new(0.0, side * open, 0.0));
            let b = ee.transform_point(&(Vector3::new(0.0, side * open, 0.0) + tool_axis(arm) * 0.02));
            scene.push_segment(&a, &b, 0.006, FINGER);
        }
    }

    let mut prims = scene.prims;
    // Ground first, then far to near; ties keep insertion order.
    prims.sort_by(|a, b| {
        a.layer
            .cmp(&b.layer)
            .then(b.depth.total_cmp(&a.depth))
            .then(a.order.cmp(&b.order))
    });
    for p in prims.iter().filter(|p| p.depth > 0.0) {
        rasterize(&mut img, p);
    }
    img
}

/// Direction the tool points in its own frame (planar chains use `+x`, others `+z`).
fn tool_axis(arm: &super::Arm) -> Vector3<f64> {
    if arm.chain.dof() <= 3 {
        Vector3::x()
    } else {
        Vector3::z()
    }
}

/// Pixel bounding box (x0, y0, x1, y1) of a body's box as seen by a camera.
pub fn project_body_bounds(world: &World, camera: usize, body: usize) -> (f64, f64, f64, f64) {
    let cam = &world.cameras[camera];
    let proj = Projector::new(cam, world, world.config.image_width, world.config.image_height);
    let pose = world.body_world_pose(body);
    let (center, half) = body_box(&world.bodies[body].kind);
    let mut bounds = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for c in box_corners(&pose, center, half) {
        let (uv, _) = proj.project(&c);
        bounds.0 = bounds.0.min(uv.x);
        bounds.1 = bounds.1.min(uv.y);
        bounds.2 = bounds.2.max(uv.x);
        bounds.3 = bounds.3.max(uv.y);
    }
    bounds
}
