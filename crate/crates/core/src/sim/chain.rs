//! Serial revolute chains described by modified DH rows.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{
    DMatrix, DVector, Isometry3, Matrix6xX, Translation3, UnitQuaternion, Vector3, Vector6,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pose_error, Pose};

/// One modified-DH row (Craig convention):
/// `T = RotX(alpha) · TransX(a) · RotZ(q + theta_offset) · TransZ(d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    #[serde(default)]
    pub theta_offset: f64,
}

impl DhRow {
    pub fn new(a: f64, alpha: f64, d: f64) -> Self {
        Self {
            a,
            alpha,
            d,
            theta_offset: 0.0,
        }
    }

    /// Transform up to (but excluding) the joint rotation.
    fn pre_joint(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.alpha),
        ) * Isometry3::translation(self.a, 0.0, 0.0)
    }

    fn joint(&self, q: f64) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::new(0.0, 0.0, self.d),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), q + self.theta_offset),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimit {
    pub lower: f64,
    pub upper: f64,
}

impl JointLimit {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    pub name: String,
    #[serde(with = "pose_serde")]
    pub base: Pose,
    pub rows: Vec<DhRow>,
    pub limits: Vec<JointLimit>,
    /// Tool center point relative to the last joint frame.
    #[serde(with = "pose_serde")]
    pub ee_offset: Pose,
    /// Diagonal joint-space inertia of the physical arm (kg·m²).
    pub joint_inertia: Vec<f64>,
    /// Mass lumped at each joint frame origin, used only when gravity is on (kg).
    #[serde(default)]
    pub link_masses: Vec<f64>,
}

/// Joint positions (rad) and velocities (rad/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl JointState {
    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qdot: DVector::zeros(n),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }
}

/// Per-joint frames needed for Jacobians: joint axis and origin in the world.
#[derive(Debug, Clone)]
pub struct ChainFrames {
    pub axes: Vec<Vector3<f64>>,
    pub origins: Vec<Vector3<f64>>,
    /// Frame after each joint (origin used for lumped masses).
    pub links: Vec<Isometry3<f64>>,
    pub flange: Isometry3<f64>,
    pub ee: Isometry3<f64>,
}

impl KinematicChain {
    pub fn validate(&self) -> Result<()> {
        let n = self.rows.len();
        if n == 0 {
            return Err(Error::config(format!("chain '{}' has no joints", self.name)));
        }
        if self.limits.len() != n || self.joint_inertia.len() != n {
            return Err(Error::config(format!(
                "chain '{}': {} rows but {} limits / {} inertias",
                self.name,
                n,
                self.limits.len(),
                self.joint_inertia.len()
            )));
        }
        if !self.link_masses.is_empty() && self.link_masses.len() != n {
            return Err(Error::config(format!(
                "chain '{}': link_masses must be empty or have {n} entries",
                self.name
            )));
        }
        for (i, l) in self.limits.iter().enumerate() {
            if !(l.lower < l.upper) {
                return Err(Error::config(format!(
                    "chain '{}': joint {i} limits lower {} >= upper {}",
                    self.name, l.lower, l.upper
                )));
            }
        }
        if self.joint_inertia.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::config(format!(
                "chain '{}': joint inertias must be positive",
                self.name
            )));
        }
        let reach: f64 = self
            .rows
            .iter()
            .map(|r| r.a.abs() + r.d.abs())
            .sum::<f64>()
            + self.ee_offset.position.norm();
        let finite = self
            .rows
            .iter()
            .all(|r| r.a.is_finite() && r.d.is_finite() && r.alpha.is_finite());
        if !finite || !(reach > 0.0) {
            return Err(Error::config(format!(
                "chain '{}': link geometry must be finite with positive reach",
                self.name
            )));
        }
        self.base.validate()?;
        self.ee_offset.validate()?;
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.rows.len()
    }

    pub fn clamp(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            q.len(),
            q.iter().zip(&self.limits).map(|(v, l)| l.clamp(*v)),
        )
    }

    pub fn frames(&self, q: &DVector<f64>) -> ChainFrames {
        let n = self.dof();
        let mut t = self.base.to_isometry();
        let mut axes = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        let mut links = Vec::with_capacity(n);
        for (row, qi) in self.rows.iter().zip(q.iter()) {
            t *= row.pre_joint();
            axes.push(t.rotation * Vector3::z());
            origins.push(t.translation.vector);
            t *= row.joint(*qi);
            links.push(t);
        }
        let flange = t;
        let ee = flange * self.ee_offset.to_isometry();
        ChainFrames {
            axes,
            origins,
            links,
            flange,
            ee,
        }
    }

    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Pose {
        Pose::from_isometry(&self.frames(q).ee)
    }

    /// Geometric Jacobian at the tool center point, world frame, rows `[v; ω]`.
    pub fn jacobian(&self, q: &DVector<f64>) -> Matrix6xX<f64> {
        let frames = self.frames(q);
        self.jacobian_at(&frames, &frames.ee.translation.vector)
    }

    /// Jacobian of a point rigidly attached to the last link.
    pub fn jacobian_at(&self, frames: &ChainFrames, point: &Vector3<f64>) -> Matrix6xX<f64> {
        let n = self.dof();
        let mut j = Matrix6xX::zeros(n);
        for i in 0..n {
            let z = frames.axes[i];
            let lin = z.cross(&(point - frames.origins[i]));
            j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        j
    }

    /// Linear Jacobian of the origin of link `k` (only joints `0..=k` contribute).
    pub fn link_point_jacobian(&self, frames: &ChainFrames, k: usize) -> DMatrix<f64> {
        let n = self.dof();
        let p = frames.links[k].translation.vector;
        let mut j = DMatrix::zeros(3, n);
        for i in 0..=k {
            let lin = frames.axes[i].cross(&(p - frames.origins[i]));
            j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        }
        j
    }

    /// Damped least-squares inverse kinematics from `seed`.
    pub fn inverse_kinematics(
        &self,
        target: &Pose,
        seed: &DVector<f64>,
        weights: &Vector6<f64>,
    ) -> Result<DVector<f64>> {
        let mut q = seed.clone();
        let lambda2 = 1e-6;
        for _ in 0..500 {
            let cur = self.forward_kinematics(&q);
            let e = pose_error(target, &cur).to_vector().component_mul(weights);
            if e.norm() < 1e-10 {
                return Ok(q);
            }
            let j = self.jacobian(&q);
            let jw = DMatrix::from_fn(6, self.dof(), |r, c| j[(r, c)] * weights[r]);
            let jjt = &jw * jw.transpose() + DMatrix::identity(6, 6) * lambda2;
            let ev = DVector::from_column_slice(e.as_slice());
            let step = jw.transpose()
                * jjt
                    .lu()
                    .solve(&ev)
                    .ok_or_else(|| Error::domain("singular IK system"))?;
            let scale = (0.2 / step.amax()).min(1.0);
            q += step * scale;
            q = self.clamp(&q);
        }
        let cur = self.forward_kinematics(&q);
        let residual = pose_error(target, &cur).to_vector().component_mul(weights).norm();
        if residual < 1e-6 {
            Ok(q)
        } else {
            Err(Error::domain(format!(
                "IK for chain '{}' did not converge (residual {residual:.2e})",
                self.name
            )))
        }
    }

    /// Planar chain with all joints about the world's `-y` axis, so the tool moves
    /// in the vertical x-z plane. Positive joint angles lift the links.
    pub fn planar(name: &str, base_position: Vector3<f64>, lengths: &[f64], inertia: &[f64]) -> Self {
        let n = lengths.len();
        let mut rows = vec![DhRow::new(0.0, 0.0, 0.0)];
        for l in &lengths[..n - 1] {
            rows.push(DhRow::new(*l, 0.0, 0.0));
        }
        Self {
            name: name.to_string(),
            base: Pose::new(
                base_position,
                UnitQuaternion::from_axis_angle(&Vector3::x_axis(), FRAC_PI_2),
            ),
            rows,
            limits: vec![JointLimit::new(-std::f64::consts::PI, std::f64::consts::PI); n],
            ee_offset: Pose::from_position(Vector3::new(lengths[n - 1], 0.0, 0.0)),
            joint_inertia: inertia.to_vec(),
            link_masses: vec![0.5; n],
        }
    }

    /// Default single-arm chain: three links (0.30, 0.25, 0.10 m), tool along the last link.
    pub fn default_planar3() -> Self {
        Self::planar(
            "planar3",
            Vector3::new(-0.30, 0.0, 0.30),
            &[0.30, 0.25, 0.10],
            &[0.20, 0.10, 0.02],
        )
    }

    /// Half-scale UR-style 6-DOF arm; the tool z axis points out of the flange.
    pub fn default_six_dof(name: &str, base: Pose) -> Self {
        let rows = vec![
            DhRow::new(0.0, 0.0, 0.081),
            DhRow::new(0.0, FRAC_PI_2, 0.0),
            DhRow::new(-0.2125, 0.0, 0.0),
            DhRow::new(-0.196, 0.0, 0.067),
            DhRow::new(0.0, FRAC_PI_2, 0.05),
            DhRow::new(0.0, -FRAC_PI_2, 0.05),
        ];
        let two_pi = 2.0 * std::f64::consts::PI;
        Self {
            name: name.to_string(),
            base,
            rows,
            limits: vec![JointLimit::new(-two_pi, two_pi); 6],
            ee_offset: Pose::from_position(Vector3::new(0.0, 0.0, 0.03)),
            joint_inertia: vec![0.30, 0.30, 0.15, 0.03, 0.03, 0.02],
            link_masses: vec![1.0, 1.0, 0.8, 0.4, 0.3, 0.2],
        }
    }
}

mod pose_serde {
    use nalgebra::{Quaternion, UnitQuaternion, Vector3};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::geometry::Pose;

    #[derive(Serialize, Deserialize)]
    struct Repr {
        position: [f64; 3],
        /// w, x, y, z
        quat: [f64; 4],
    }

    pub fn serialize<S: Serializer>(p: &Pose, s: S) -> Result<S::Ok, S::Error> {
        let q = p.orientation;
        Repr {
            position: [p.position.x, p.position.y, p.position.z],
            quat: [q.w, q.i, q.j, q.k],
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Pose, D::Error> {
        let r = Repr::deserialize(d)?;
        Ok(Pose::new(
            Vector3::from(r.position),
            UnitQuaternion::from_quaternion(Quaternion::new(
                r.quat[0], r.quat[1], r.quat[2], r.quat[3],
            )),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::quat_to_rotvec;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn planar2() -> KinematicChain {
        KinematicChain {
            name: "planar2".into(),
            base: Pose::identity(),
            rows: vec![DhRow::new(0.0, 0.0, 0.0), DhRow::new(0.5, 0.0, 0.0)],
            limits: vec![JointLimit::new(-PI, PI); 2],
            ee_offset: Pose::from_position(Vector3::new(0.5, 0.0, 0.0)),
            joint_inertia: vec![1.0, 1.0],
            link_masses: vec![],
        }
    }

    #[test]
    fn planar_two_link_fk() {
        let c = planar2();
        let p = c.forward_kinematics(&DVector::from_vec(vec![0.0, 0.0]));
        assert_relative_eq!(p.position, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        let p = c.forward_kinematics(&DVector::from_vec(vec![PI / 2.0, 0.0]));
        assert_relative_eq!(p.position, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn planar_two_link_jacobian_rows() {
        let j = planar2().jacobian(&DVector::from_vec(vec![0.0, 0.0]));
        assert_relative_eq!(j[(0, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(j[(0, 1)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(j[(1, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(j[(1, 1)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn single_joint_angular_z() {
        let c = KinematicChain {
            name: "one".into(),
            base: Pose::identity(),
            rows: vec![DhRow::new(0.0, 0.0, 0.0)],
            limits: vec![JointLimit::new(-PI, PI)],
            ee_offset: Pose::from_position(Vector3::new(0.3, 0.0, 0.0)),
            joint_inertia: vec![1.0],
            link_masses: vec![],
        };
        c.validate().unwrap();
        let j = c.jacobian(&DVector::from_vec(vec![0.4]));
        assert_relative_eq!(j[(5, 0)], 1.0, epsilon = 1e-12);
    }

    fn homogeneous(row: &DhRow, q: f64) -> Matrix4<f64> {
        let (ca, sa) = (row.alpha.cos(), row.alpha.sin());
        let th = q + row.theta_offset;
        let (ct, st) = (th.cos(), th.sin());
        // Craig's modified DH matrix written out by hand.
        Matrix4::new(
            ct, -st, 0.0, row.a,
            st * ca, ct * ca, -sa, -sa * row.d,
            st * sa, ct * sa, ca, ca * row.d,
            0.0, 0.0, 0.0, 1.0,
        )
    }

    #[test]
    fn six_dof_fk_matches_hand_composed_matrices() {
        let c = KinematicChain::default_six_dof("arm", Pose::from_position(Vector3::new(0.1, -0.2, 0.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let q = DVector::from_fn(6, |_, _| rng.random_range(-PI..PI));
            let mut t = c.base.to_isometry().to_homogeneous();
            for (row, qi) in c.rows.iter().zip(q.iter()) {
                t *= homogeneous(row, *qi);
            }
            t *= c.ee_offset.to_isometry().to_homogeneous();
            let fk = c.forward_kinematics(&q).to_isometry().to_homogeneous();
            assert_relative_eq!(fk, t, epsilon = 1e-12);
        }
    }

    fn fd_jacobian(c: &KinematicChain, q: &DVector<f64>, h: f64) -> Matrix6xX<f64> {
        let mut j = Matrix6xX::zeros(c.dof());
        for i in 0..c.dof() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += h;
            qm[i] -= h;
            let a = c.forward_kinematics(&qp);
            let b = c.forward_kinematics(&qm);
            let lin = (a.position - b.position) / (2.0 * h);
            let ang = quat_to_rotvec(&(a.orientation * b.orientation.inverse())) / (2.0 * h);
            j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            j.fixed_view_mut::<3, 1>(3, i).copy_from(&ang);
        }
        j
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for c in [KinematicChain::default_planar3(), KinematicChain::default_six_dof("a", Pose::identity())] {
            for _ in 0..50 {
                let q = DVector::from_fn(c.dof(), |_, _| rng.random_range(-PI..PI));
                let j = c.jacobian(&q);
                let fd = fd_jacobian(&c, &q, 1e-6);
                let scale = j.amax().max(1e-3);
                assert!((j - fd).amax() / scale < 1e-5);
            }
        }
    }

    #[test]
    fn ik_recovers_reachable_pose() {
        let c = KinematicChain::default_six_dof("a", Pose::identity());
        let q_true = DVector::from_vec(vec![0.3, -1.2, 1.4, -1.6, -1.5, 0.2]);
        let target = c.forward_kinematics(&q_true);
        let seed = DVector::from_vec(vec![0.2, -1.0, 1.2, -1.5, -1.4, 0.0]);
        let q = c.inverse_kinematics(&target, &seed, &Vector6::repeat(1.0)).unwrap();
        let e = pose_error(&target, &c.forward_kinematics(&q));
        assert!(e.norm() < 1e-8);
    }

    #[test]
    fn validate_rejects_bad_limits() {
        let mut c = planar2();
        c.limits[1] = JointLimit::new(1.0, -1.0);
        assert!(c.validate().is_err());
    }
}
