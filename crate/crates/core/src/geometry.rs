//! Rigid-body primitives and the Cholesky stiffness parameterization.
//!
//! Orientation is stored as a unit quaternion everywhere; rotation vectors
//! (axis-angle) only appear at the action boundary. A [`StiffnessSpec`] is a
//! pair of 3x3 SPD blocks (translation, rotation) that travels through the
//! learning stack as a 12-element [`CholeskyVector`] holding the row-major upper
//! triangle of each block's factor `R` with `K = RᵀR`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Isometry3, Matrix3, Matrix6, Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to the factor diagonal when decoding a Cholesky vector.
pub const CHOLESKY_DIAG_FLOOR: f64 = 1.0;

const SYMMETRY_TOL: f64 = 1e-9;

/// Position (m) and orientation of a frame in the world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_position(position: Vector3<f64>) -> Self {
        Self::new(position, UnitQuaternion::identity())
    }

    /// Builds a pose from a position and a rotation vector (axis-angle).
    pub fn from_rotvec(position: Vector3<f64>, rotvec: Vector3<f64>) -> Self {
        Self::new(position, rotvec_to_quat(&rotvec))
    }

    pub fn rotvec(&self) -> Vector3<f64> {
        quat_to_rotvec(&self.orientation)
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::new(iso.translation.vector, iso.rotation)
    }

    /// Composition `self ∘ other` (other expressed in self's frame).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_isometry(&(self.to_isometry() * other.to_isometry()))
    }

    pub fn inverse(&self) -> Pose {
        Pose::from_isometry(&self.to_isometry().inverse())
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * p + self.position
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.inverse() * (p - self.position)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }

    /// Checks the invariants: finite position and unit quaternion within 1e-9.
    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::domain("pose has non-finite components"));
        }
        let n = self.orientation.coords.norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("quaternion norm {n} is not 1")));
        }
        Ok(())
    }
}

/// Linear and angular parts of a velocity or a small pose displacement.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.linear);
        v.fixed_rows_mut::<3>(3).copy_from(&self.angular);
        v
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

/// Force (N) and torque (N·m).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>) -> Self {
        Self { force, torque }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.force);
        v.fixed_rows_mut::<3>(3).copy_from(&self.torque);
        v
    }

    pub fn to_array(&self) -> [f64; 6] {
        let v = self.to_vector();
        [v[0], v[1], v[2], v[3], v[4], v[5]]
    }

    /// Moves the reference point of the wrench from `from` to `to` (same frame).
    pub fn shift(&self, from: &Vector3<f64>, to: &Vector3<f64>) -> Wrench {
        Wrench::new(self.force, self.torque + (from - to).cross(&self.force))
    }

    /// Re-expresses both components in a rotated frame.
    pub fn rotate(&self, rot: &UnitQuaternion<f64>) -> Wrench {
        Wrench::new(rot * self.force, rot * self.torque)
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.torque.iter()).all(|v| v.is_finite())
    }
}

impl Add for Wrench {
    type Output = Wrench;
    fn add(self, rhs: Wrench) -> Wrench {
        Wrench::new(self.force + rhs.force, self.torque + rhs.torque)
    }
}

impl Sub for Wrench {
    type Output = Wrench;
    fn sub(self, rhs: Wrench) -> Wrench {
        Wrench::new(self.force - rhs.force, self.torque - rhs.torque)
    }
}

impl Mul<f64> for Wrench {
    type Output = Wrench;
    fn mul(self, s: f64) -> Wrench {
        Wrench::new(self.force * s, self.torque * s)
    }
}

impl Neg for Wrench {
    type Output = Wrench;
    fn neg(self) -> Wrench {
        Wrench::new(-self.force, -self.torque)
    }
}

/// Which 3x3 block of a stiffness matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StiffnessBlock {
    Translational,
    Rotational,
}

impl std::fmt::Display for StiffnessBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StiffnessBlock::Translational => write!(f, "translational"),
            StiffnessBlock::Rotational => write!(f, "rotational"),
        }
    }
}

/// Block-diagonal Cartesian stiffness: translation in N/m, rotation in N·m/rad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StiffnessSpec {
    pub translational: Matrix3<f64>,
    pub rotational: Matrix3<f64>,
}

impl StiffnessSpec {
    /// Validated constructor; both blocks must be symmetric positive-definite.
    pub fn new(translational: Matrix3<f64>, rotational: Matrix3<f64>) -> Result<Self> {
        check_spd(&translational, StiffnessBlock::Translational)?;
        check_spd(&rotational, StiffnessBlock::Rotational)?;
        Ok(Self {
            translational,
            rotational,
        })
    }

    /// Same scalar on all six diagonal entries.
    pub fn diagonal(value: f64) -> Self {
        Self {
            translational: Matrix3::from_diagonal_element(value),
            rotational: Matrix3::from_diagonal_element(value),
        }
    }

    pub fn from_diagonals(translational: Vector3<f64>, rotational: Vector3<f64>) -> Self {
        Self {
            translational: Matrix3::from_diagonal(&translational),
            rotational: Matrix3::from_diagonal(&rotational),
        }
    }

    pub fn block(&self, which: StiffnessBlock) -> &Matrix3<f64> {
        match which {
            StiffnessBlock::Translational => &self.translational,
            StiffnessBlock::Rotational => &self.rotational,
        }
    }

    pub fn to_matrix6(&self) -> Matrix6<f64> {
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.translational);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rotational);
        m
    }

    /// The six diagonal entries, translation first.
    pub fn diagonal_entries(&self) -> [f64; 6] {
        [
            self.translational[(0, 0)],
            self.translational[(1, 1)],
            self.translational[(2, 2)],
            self.rotational[(0, 0)],
            self.rotational[(1, 1)],
            self.rotational[(2, 2)],
        ]
    }

    /// Largest translational diagonal entry.
    pub fn max_translational_diagonal(&self) -> f64 {
        let d = self.diagonal_entries();
        d[0].max(d[1]).max(d[2])
    }

    pub fn is_positive_definite(&self) -> bool {
        check_spd(&self.translational, StiffnessBlock::Translational).is_ok()
            && check_spd(&self.rotational, StiffnessBlock::Rotational).is_ok()
    }

    pub fn encode(&self) -> Result<CholeskyVector> {
        cholesky_encode(self)
    }
}

fn check_spd(m: &Matrix3<f64>, block: StiffnessBlock) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(format!("{block} stiffness block is not finite")));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > SYMMETRY_TOL * scale {
        return Err(Error::domain(format!("{block} stiffness block is not symmetric")));
    }
    if m.cholesky().is_none() {
        return Err(Error::domain(format!(
            "{block} stiffness block is not positive-definite"
        )));
    }
    Ok(())
}

/// Flattened upper-triangular Cholesky factors: `[k11,k12,k13,k22,k23,k33]` for
/// the translational block followed by the same for the rotational block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CholeskyVector(pub [f64; 12]);

impl CholeskyVector {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; 12] = values
            .try_into()
            .map_err(|_| Error::domain(format!("cholesky vector needs 12 values, got {}", values.len())))?;
        Ok(Self(arr))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn decode(&self) -> StiffnessSpec {
        cholesky_decode(self)
    }
}

const UPPER_INDEX: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

fn upper_factor(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    // nalgebra yields K = L·Lᵀ; the upper factor is R = Lᵀ with a positive diagonal.
    m.cholesky().map(|c| c.l().transpose())
}

fn factor_from_flat(values: &[f64], floor: f64) -> Matrix3<f64> {
    let mut r = Matrix3::zeros();
    for (&(i, j), &v) in UPPER_INDEX.iter().zip(values) {
        r[(i, j)] = if i == j { v.abs().max(floor) } else { v };
    }
    r
}

/// Encodes a stiffness as the canonical (positive-diagonal) upper factors.
pub fn cholesky_encode(k: &StiffnessSpec) -> Result<CholeskyVector> {
    let mut out = [0.0; 12];
    for (offset, block) in [
        (0, StiffnessBlock::Translational),
        (6, StiffnessBlock::Rotational),
    ] {
        let m = k.block(block);
        check_spd(m, block)?;
        let r = upper_factor(m).ok_or_else(|| {
            Error::domain(format!("{block} stiffness block is not positive-definite"))
        })?;
        for (slot, &(i, j)) in UPPER_INDEX.iter().enumerate() {
            out[offset + slot] = r[(i, j)];
        }
    }
    Ok(CholeskyVector(out))
}

/// Decodes any real 12-vector to a positive-definite stiffness using the default floor.
pub fn cholesky_decode(v: &CholeskyVector) -> StiffnessSpec {
    cholesky_decode_with_floor(v, CHOLESKY_DIAG_FLOOR)
}

/// Decodes with an explicit diagonal floor: each factor diagonal becomes
/// `max(|d|, floor)`. With `floor = 0` the result is only guaranteed PSD.
pub fn cholesky_decode_with_floor(v: &CholeskyVector, floor: f64) -> StiffnessSpec {
    let rt = factor_from_flat(&v.0[..6], floor);
    let rr = factor_from_flat(&v.0[6..], floor);
    StiffnessSpec {
        translational: rt.transpose() * rt,
        rotational: rr.transpose() * rr,
    }
}

/// Rotation vector of a unit quaternion, canonicalized so the angle lies in `[0, π]`
/// and antipodal quaternions give the same vector.
pub fn quat_to_rotvec(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let mut w = q.w;
    let mut v = q.imag();
    let flip = if w.abs() > 1e-15 {
        w < 0.0
    } else {
        // Angle exactly π: pick the sign making the first non-zero axis component positive.
        v.iter()
            .find(|c| c.abs() > 1e-15)
            .map(|c| *c < 0.0)
            .unwrap_or(false)
    };
    if flip {
        w = -w;
        v = -v;
    }
    let s = v.norm();
    if s < 1e-12 {
        // atan2(s, w)/s → 1/w as s → 0
        return v * (2.0 / w);
    }
    let angle = 2.0 * s.atan2(w);
    v * (angle / s)
}

pub fn rotvec_to_quat(v: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*v)
}

/// Wraps a rotation vector so its norm does not exceed π.
pub fn canonical_rotvec(v: &Vector3<f64>) -> Vector3<f64> {
    quat_to_rotvec(&rotvec_to_quat(v))
}

/// Error twist from `current` to `goal`: position difference and the rotation
/// vector of `goal ∘ current⁻¹` (world frame). Its angular norm never exceeds π.
pub fn pose_error(goal: &Pose, current: &Pose) -> Twist {
    let linear = goal.position - current.position;
    let dq = goal.orientation * current.orientation.inverse();
    Twist::new(linear, quat_to_rotvec(&dq))
}

/// Angle of a rotation in radians, in `[0, π]`.
pub fn rotation_angle(q: &UnitQuaternion<f64>) -> f64 {
    quat_to_rotvec(q).norm().min(PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_product(r: &Matrix3<f64>) -> Matrix3<f64> {
        let mut k = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for l in 0..3 {
                    s += r[(l, i)] * r[(l, j)];
                }
                k[(i, j)] = s;
            }
        }
        k
    }

    fn random_spd(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let a = Matrix3::from_fn(|_, _| rng.random_range(-3.0..3.0));
        a.transpose() * a + Matrix3::identity()
    }

    #[test]
    fn encode_identity() {
        let v = cholesky_encode(&StiffnessSpec::diagonal(1.0)).unwrap();
        let expected = [1., 0., 0., 1., 0., 1., 1., 0., 0., 1., 0., 1.];
        for (a, b) in v.0.iter().zip(expected) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn encode_medium_mode_is_sqrt() {
        let v = cholesky_encode(&StiffnessSpec::diagonal(500.0)).unwrap();
        for &i in &[0, 3, 5, 6, 9, 11] {
            assert_relative_eq!(v.0[i], 22.360679, epsilon = 1e-6);
        }
        for &i in &[1, 2, 4, 7, 8, 10] {
            assert_eq!(v.0[i], 0.0);
        }
    }

    #[test]
    fn encode_rejects_non_spd_naming_block() {
        let mut rot = Matrix3::identity();
        rot[(2, 2)] = -1.0;
        let k = StiffnessSpec {
            translational: Matrix3::identity(),
            rotational: rot,
        };
        let err = cholesky_encode(&k).unwrap_err().to_string();
        assert!(err.contains("rotational"), "{err}");

        let mut tr = Matrix3::identity();
        tr[(0, 1)] = 0.5;
        let k = StiffnessSpec {
            translational: tr,
            rotational: Matrix3::identity(),
        };
        let err = cholesky_encode(&k).unwrap_err().to_string();
        assert!(err.contains("translational") && err.contains("symmetric"), "{err}");
    }

    #[test]
    fn decode_zero_vector_hits_floor() {
        let k = cholesky_decode(&CholeskyVector([0.0; 12]));
        assert_eq!(k.translational, Matrix3::identity());
        assert_eq!(k.rotational, Matrix3::identity());
    }

    #[test]
    fn decode_low_mode() {
        let s = 250f64.sqrt();
        let k = cholesky_decode(&CholeskyVector([s, 0., 0., s, 0., s, s, 0., 0., s, 0., s]));
        assert_relative_eq!(k.translational, Matrix3::from_diagonal_element(250.0), epsilon = 1e-9);
        assert_relative_eq!(k.rotational, Matrix3::from_diagonal_element(250.0), epsilon = 1e-9);
    }

    #[test]
    fn decode_off_diagonal_matches_brute_force() {
        let v = CholeskyVector([2., 3., 0., 4., 0., 1., 1., 0., 0., 1., 0., 1.]);
        let k = cholesky_decode(&v);
        let r = Matrix3::new(2., 3., 0., 0., 4., 0., 0., 0., 1.);
        assert_relative_eq!(k.translational, brute_force_product(&r), epsilon = 1e-12);
        assert_relative_eq!(k.translational[(0, 1)], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn random_spd_round_trip_against_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let k = StiffnessSpec::new(random_spd(&mut rng), random_spd(&mut rng)).unwrap();
            let v = cholesky_encode(&k).unwrap();
            let rt = factor_from_flat(&v.0[..6], 0.0);
            assert_relative_eq!(brute_force_product(&rt), k.translational, max_relative = 1e-9);
            let back = cholesky_decode(&v);
            assert_relative_eq!(back.translational, k.translational, max_relative = 1e-9);
            assert_relative_eq!(back.rotational, k.rotational, max_relative = 1e-9);
            for &i in &[0, 3, 5, 6, 9, 11] {
                assert!(v.0[i] > 0.0);
            }
        }
    }

    #[test]
    fn pose_error_examples() {
        let a = Pose::new(Vector3::new(0.1, 0.2, 0.3), rotvec_to_quat(&Vector3::new(0.3, -0.2, 0.1)));
        assert!(pose_error(&a, &a).norm() < 1e-15);

        let goal = Pose::new(a.position + Vector3::new(0.1, 0.0, 0.0), a.orientation);
        let e = pose_error(&goal, &a);
        assert_relative_eq!(e.linear, Vector3::new(0.1, 0.0, 0.0), epsilon = 1e-12);
        assert!(e.angular.norm() < 1e-12);

        let cur = Pose::identity();
        let goal = Pose::new(
            Vector3::zeros(),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI / 2.0),
        );
        let e = pose_error(&goal, &cur);
        assert_relative_eq!(e.angular, Vector3::new(0.0, 0.0, PI / 2.0), epsilon = 1e-12);
    }

    #[test]
    fn rotvec_examples() {
        assert_eq!(quat_to_rotvec(&UnitQuaternion::identity()), Vector3::zeros());
        let q = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI);
        assert_relative_eq!(quat_to_rotvec(&q), Vector3::new(PI, 0.0, 0.0), epsilon = 1e-12);
        let neg = UnitQuaternion::new_unchecked(-q.into_inner());
        assert_relative_eq!(quat_to_rotvec(&neg), Vector3::new(PI, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn rotvec_round_trip_rotates_basis_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let c = nalgebra::Quaternion::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let q = UnitQuaternion::from_quaternion(c);
            let v = quat_to_rotvec(&q);
            assert!(v.norm() <= PI + 1e-12);
            let back = rotvec_to_quat(&v);
            for e in [Vector3::x(), Vector3::y(), Vector3::z()] {
                assert_relative_eq!(q * e, back * e, epsilon = 1e-9);
            }
        }
    }

    fn arb_vec12() -> impl Strategy<Value = [f64; 12]> {
        proptest::array::uniform12(-50.0f64..50.0)
    }

    proptest! {
        #[test]
        fn decode_is_symmetric_psd(v in arb_vec12()) {
            let raw = cholesky_decode_with_floor(&CholeskyVector(v), 0.0);
            for m in [raw.translational, raw.rotational] {
                prop_assert!((m - m.transpose()).amax() <= 1e-9 * m.amax().max(1.0));
                let eig = m.symmetric_eigenvalues();
                prop_assert!(eig.iter().all(|e| *e >= -1e-9 * m.amax().max(1.0)));
            }
            let floored = cholesky_decode(&CholeskyVector(v));
            prop_assert!(floored.is_positive_definite());
            prop_assert!(floored.diagonal_entries().iter().all(|d| *d >= CHOLESKY_DIAG_FLOOR));
        }

        #[test]
        fn pose_error_self_is_zero_and_bounded(
            p in proptest::array::uniform3(-1.0f64..1.0),
            r1 in proptest::array::uniform3(-3.0f64..3.0),
            r2 in proptest::array::uniform3(-3.0f64..3.0),
        ) {
            let a = Pose::from_rotvec(Vector3::from(p), Vector3::from(r1));
            let b = Pose::from_rotvec(Vector3::zeros(), Vector3::from(r2));
            prop_assert!(pose_error(&a, &a).norm() < 1e-12);
            prop_assert!(pose_error(&a, &b).angular.norm() <= PI + 1e-12);
        }
    }
}
