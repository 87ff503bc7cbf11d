//! Shared math: real spherical harmonics up to band 2, anisotropic and
//! isotropic spherical Gaussians, quaternion helpers, covariance
//! construction and rigid transforms.
//!
//! All evaluation happens in `f64`. Parameters are stored as `f32` in the
//! scene and widened on use.

use nalgebra::{Isometry3, Matrix3, Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use std::f64::consts::PI;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type UnitVec3 = nalgebra::UnitVector3<f64>;

/// Number of real SH coefficients for bands 0..=2.
pub const SH_COEFFS: usize = 9;

const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: f64 = 1.092_548_430_592_079_2;
const SH_C2_0: f64 = 0.315_391_565_252_520_05;
const SH_C2_2: f64 = 0.546_274_215_296_039_6;

/// Band index of each coefficient in the fixed (l, m) ordering.
pub const SH_BAND: [usize; SH_COEFFS] = [0, 1, 1, 1, 2, 2, 2, 2, 2];

/// Real SH basis values, ordered (0,0), (1,-1), (1,0), (1,1), (2,-2), (2,-1),
/// (2,0), (2,1), (2,2). No Condon-Shortley phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShBasis2(pub [f64; SH_COEFFS]);

pub fn eval_sh_basis(dir: &UnitVec3) -> ShBasis2 {
    sh_basis_raw(dir.as_ref())
}

/// Evaluates the basis polynomials on an arbitrary vector. Only meaningful
/// for unit vectors; exposed for the backward pass.
pub(crate) fn sh_basis_raw(d: &Vec3) -> ShBasis2 {
    let (x, y, z) = (d.x, d.y, d.z);
    ShBasis2([
        SH_C0,
        SH_C1 * y,
        SH_C1 * z,
        SH_C1 * x,
        SH_C2 * x * y,
        SH_C2 * y * z,
        SH_C2_0 * (3.0 * z * z - 1.0),
        SH_C2 * x * z,
        SH_C2_2 * (x * x - y * y),
    ])
}

/// Gradient of each basis polynomial with respect to the direction.
pub(crate) fn sh_basis_grad(d: &Vec3) -> [Vec3; SH_COEFFS] {
    let (x, y, z) = (d.x, d.y, d.z);
    [
        Vec3::zeros(),
        Vec3::new(0.0, SH_C1, 0.0),
        Vec3::new(0.0, 0.0, SH_C1),
        Vec3::new(SH_C1, 0.0, 0.0),
        Vec3::new(SH_C2 * y, SH_C2 * x, 0.0),
        Vec3::new(0.0, SH_C2 * z, SH_C2 * y),
        Vec3::new(0.0, 0.0, 6.0 * SH_C2_0 * z),
        Vec3::new(SH_C2 * z, 0.0, SH_C2 * x),
        Vec3::new(2.0 * SH_C2_2 * x, -2.0 * SH_C2_2 * y, 0.0),
    ]
}

/// Clamped-cosine convolution factors A_0, A_1, A_2 that turn radiance SH
/// into irradiance SH.
pub const fn cosine_lobe_factors() -> [f64; 3] {
    [PI, 2.0 * PI / 3.0, PI / 4.0]
}

/// Per-coefficient cosine factor, expanded over the 9 coefficients.
pub fn cosine_lobe_expanded() -> [f64; SH_COEFFS] {
    let a = cosine_lobe_factors();
    SH_BAND.map(|l| a[l])
}

/// An activated anisotropic spherical Gaussian lobe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AsgLobe {
    pub frame: UnitQuaternion<f64>,
    pub sharp_x: f64,
    pub sharp_y: f64,
    pub amplitude: Vec3,
}

impl AsgLobe {
    /// Lobe axes (x, y, z) as the columns of the frame rotation.
    pub fn axes(&self) -> (Vec3, Vec3, Vec3) {
        let m = self.frame.to_rotation_matrix();
        let m = m.matrix();
        (m.column(0).into(), m.column(1).into(), m.column(2).into())
    }
}

/// Scalar ASG shape without amplitude: `max(v.z, 0) * exp(-lx (v.x)^2 - ly (v.y)^2)`.
pub fn asg_shape(v: &Vec3, x: &Vec3, y: &Vec3, z: &Vec3, sharp_x: f64, sharp_y: f64) -> f64 {
    let s = v.dot(z);
    if s <= 0.0 {
        return 0.0;
    }
    let u = v.dot(x);
    let w = v.dot(y);
    s * (-sharp_x * u * u - sharp_y * w * w).exp()
}

pub fn eval_asg(v: &UnitVec3, lobe: &AsgLobe) -> Vec3 {
    let (x, y, z) = lobe.axes();
    lobe.amplitude * asg_shape(v.as_ref(), &x, &y, &z, lobe.sharp_x, lobe.sharp_y)
}

/// Lower bound applied to roughness before it enters the microfacet terms.
pub const ROUGHNESS_FLOOR: f64 = 0.04;

/// Spherical Gaussian approximation of the microfacet NDF, warped into
/// reflection space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgNdf {
    pub axis: Vec3,
    pub nu: f64,
    pub a_ndf: f64,
}

/// Returned when the view direction lies in or below the tangent plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DegenerateView;

pub fn ndf_as_sg(roughness: f64, w_r: &UnitVec3, n_dot_wo: f64) -> Result<SgNdf, DegenerateView> {
    if n_dot_wo <= 0.0 {
        return Err(DegenerateView);
    }
    let r = roughness.clamp(ROUGHNESS_FLOOR, 1.0);
    let alpha = r * r;
    let a2 = alpha * alpha;
    Ok(SgNdf {
        axis: w_r.into_inner(),
        nu: 2.0 / a2 / (4.0 * n_dot_wo),
        a_ndf: 1.0 / (PI * a2),
    })
}

/// Rotation matrix of a (not necessarily unit) quaternion `[w, x, y, z]`,
/// normalized first.
pub fn quat_to_mat(q: [f64; 4]) -> Mat3 {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = q.map(|c| c / n);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Vector-Jacobian product of [`quat_to_mat`]: maps dL/dR back onto the raw
/// quaternion, including the normalization.
pub fn quat_to_mat_vjp(q: [f64; 4], d: &Mat3) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = q.map(|c| c / n);
    let g = |r: usize, c: usize| d[(r, c)];
    let dw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    let unit = [w, x, y, z];
    let grad = [dw, dx, dy, dz];
    let dot: f64 = unit.iter().zip(&grad).map(|(a, b)| a * b).sum();
    std::array::from_fn(|i| (grad[i] - dot * unit[i]) / n)
}

/// Backpropagates through `v / |v|`.
pub fn normalize_vjp(raw: &Vec3, d_unit: &Vec3) -> Vec3 {
    let n = raw.norm();
    let u = raw / n;
    (d_unit - u * u.dot(d_unit)) / n
}

/// `Sigma = R diag(s)^2 R^T`.
pub fn build_covariance(q: &UnitQuaternion<f64>, s: &Vec3) -> Mat3 {
    let r = q.to_rotation_matrix().into_inner();
    covariance_from_mat(&r, s)
}

pub(crate) fn covariance_from_mat(r: &Mat3, s: &Vec3) -> Mat3 {
    let m = r * Mat3::from_diagonal(s);
    m * m.transpose()
}

/// Rigid transform in SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Se3Pose(pub Isometry3<f64>);

impl Default for Se3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se3Pose {
    pub fn identity() -> Self {
        Se3Pose(Isometry3::identity())
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Se3Pose(Isometry3::from_parts(Translation3::from(translation), rotation))
    }

    /// Builds a pose from a raw `[w, x, y, z]` quaternion, normalizing it.
    pub fn from_parts(q: [f64; 4], t: [f64; 3]) -> Self {
        let rot = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
        Self::new(rot, Vec3::from(t))
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.0.rotation
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.0.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> Vec3 {
        self.0.translation.vector
    }

    /// `[w, x, y, z]`.
    pub fn quat_wxyz(&self) -> [f64; 4] {
        let q = self.0.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (self.0 * Point3::from(*p)).coords
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &Se3Pose) -> Se3Pose {
        Se3Pose(self.0 * other.0)
    }

    pub fn inverse(&self) -> Se3Pose {
        Se3Pose(self.0.inverse())
    }
}

pub fn se3_apply(pose: &Se3Pose, point: &Vec3) -> Vec3 {
    pose.apply(point)
}

pub fn se3_compose(a: &Se3Pose, b: &Se3Pose) -> Se3Pose {
    a.compose(b)
}

/// Hamilton product of raw `[w, x, y, z]` quaternions.
pub fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Matrix of left multiplication by `a`, so `quat_mul(a, b) = L(a) b`.
pub fn quat_left_matrix(a: [f64; 4]) -> nalgebra::Matrix4<f64> {
    let [w, x, y, z] = a;
    nalgebra::Matrix4::new(
        w, -x, -y, -z, //
        x, w, -z, y, //
        y, z, w, -x, //
        z, -y, x, w,
    )
}

/// `x / (1 + x)`, componentwise.
pub fn reinhard(v: &Vec3) -> Vec3 {
    v.map(|c| c / (1.0 + c))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut impl Rng) -> UnitVec3 {
        loop {
            let v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                return UnitVec3::new_normalize(v);
            }
        }
    }

    fn random_quat(rng: &mut impl Rng) -> UnitQuaternion<f64> {
        let q = Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        UnitQuaternion::from_quaternion(q)
    }

    #[test]
    fn sh_band0_constant() {
        let z = eval_sh_basis(&Vec3::z_axis());
        let x = eval_sh_basis(&Vec3::x_axis());
        assert!((z.0[0] - 0.2820948).abs() < 1e-7);
        assert!((z.0[0] - 1.0 / (2.0 * PI.sqrt())).abs() < 1e-15);
        assert_eq!(z.0[0], x.0[0]);
    }

    #[test]
    fn sh_parity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let d = random_unit(&mut rng);
            let a = eval_sh_basis(&d);
            let b = eval_sh_basis(&UnitVec3::new_unchecked(-d.into_inner()));
            for i in 1..4 {
                assert_eq!(a.0[i], -b.0[i]);
            }
            for i in 4..9 {
                assert!((a.0[i] - b.0[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sh_orthonormal_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mut gram = [[0.0f64; 9]; 9];
        for _ in 0..n {
            // uniform on the sphere via z / phi
            let z: f64 = rng.gen_range(-1.0..1.0);
            let phi: f64 = rng.gen_range(0.0..2.0 * PI);
            let r = (1.0 - z * z).sqrt();
            let d = Vec3::new(r * phi.cos(), r * phi.sin(), z);
            let y = sh_basis_raw(&d).0;
            for i in 0..9 {
                for j in i..9 {
                    gram[i][j] += y[i] * y[j];
                }
            }
        }
        let scale = 4.0 * PI / n as f64;
        for i in 0..9 {
            for j in i..9 {
                let expected = if i == j { 1.0 } else { 0.0 };
                let got = gram[i][j] * scale;
                assert!((got - expected).abs() < 2e-2, "<Y{i},Y{j}> = {got}");
            }
        }
    }

    #[test]
    fn sh_grad_matches_finite_difference() {
        let d = Vec3::new(0.3, -0.5, 0.8);
        let g = sh_basis_grad(&d);
        let h = 1e-6;
        for k in 0..3 {
            let mut p = d;
            let mut m = d;
            p[k] += h;
            m[k] -= h;
            let yp = sh_basis_raw(&p).0;
            let ym = sh_basis_raw(&m).0;
            for i in 0..9 {
                let fd = (yp[i] - ym[i]) / (2.0 * h);
                assert!((fd - g[i][k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn cosine_factors() {
        let a = cosine_lobe_factors();
        assert!((a[0] - PI).abs() < 1e-15);
        assert!((a[1] - 2.0 * PI / 3.0).abs() < 1e-15);
        assert!((a[2] - PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_factors_match_projection_integral() {
        // A_l = 2 pi int_0^1 P_l(t) t dt, by midpoint quadrature
        let n = 200_000;
        let mut acc = [0.0; 3];
        for i in 0..n {
            let t = (i as f64 + 0.5) / n as f64;
            let p = [1.0, t, 0.5 * (3.0 * t * t - 1.0)];
            for l in 0..3 {
                acc[l] += p[l] * t / n as f64;
            }
        }
        let a = cosine_lobe_factors();
        for l in 0..3 {
            assert!((2.0 * PI * acc[l] - a[l]).abs() < 1e-8);
        }
    }

    fn lobe(sharp_x: f64, sharp_y: f64) -> AsgLobe {
        AsgLobe {
            frame: UnitQuaternion::identity(),
            sharp_x,
            sharp_y,
            amplitude: Vec3::new(1.0, 1.0, 1.0),
        }
    }

    #[test]
    fn asg_spot_values() {
        let l = AsgLobe { amplitude: Vec3::new(0.5, 1.0, 2.0), ..lobe(3.0, 4.0) };
        assert_eq!(eval_asg(&Vec3::z_axis(), &l), l.amplitude);
        assert_eq!(eval_asg(&Vec3::x_axis(), &l), Vec3::zeros());
        let v = UnitVec3::new_normalize(Vec3::new(1.0, 0.0, 1.0));
        let got = eval_asg(&v, &lobe(2.0, 1.0));
        let expected = 0.5f64.sqrt() * (-1.0f64).exp();
        assert!((got.x - expected).abs() < 1e-12);
        assert!((got.x - 0.2601).abs() < 1e-4);
    }

    #[test]
    fn asg_nonnegative_and_zero_below_horizon() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let l = AsgLobe {
                frame: random_quat(&mut rng),
                ..lobe(rng.gen_range(0.1..50.0), rng.gen_range(0.1..50.0))
            };
            let v = random_unit(&mut rng);
            let val = eval_asg(&v, &l);
            let (_, _, z) = l.axes();
            assert!(val.min() >= 0.0);
            if v.dot(&z) <= 0.0 {
                assert_eq!(val, Vec3::zeros());
            }
        }
    }

    #[test]
    fn ndf_mapping() {
        let sg = ndf_as_sg(1.0, &Vec3::z_axis(), 0.5).unwrap();
        assert!((sg.nu - 1.0).abs() < 1e-15);
        assert!((sg.a_ndf - 1.0 / PI).abs() < 1e-15);
        let floor = ndf_as_sg(0.0, &Vec3::z_axis(), 1.0).unwrap();
        let at_floor = ndf_as_sg(0.04, &Vec3::z_axis(), 1.0).unwrap();
        assert_eq!(floor, at_floor);
        assert!(floor.nu.is_finite() && floor.nu > 1e5);
        assert_eq!(ndf_as_sg(0.5, &Vec3::z_axis(), 0.0), Err(DegenerateView));
    }

    #[test]
    fn covariance_examples() {
        let id = UnitQuaternion::identity();
        assert_eq!(build_covariance(&id, &Vec3::new(1.0, 1.0, 1.0)), Mat3::identity());
        assert_eq!(
            build_covariance(&id, &Vec3::new(2.0, 1.0, 1.0)),
            Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0))
        );
    }

    #[test]
    fn covariance_eigenvalues_are_squared_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let q = random_quat(&mut rng);
            let s = Vec3::new(
                rng.gen_range(0.05..3.0),
                rng.gen_range(0.05..3.0),
                rng.gen_range(0.05..3.0),
            );
            let sigma = build_covariance(&q, &s);
            assert!((sigma - sigma.transpose()).norm() < 1e-12);
            assert!(sigma.cholesky().is_some());
            let mut eig: Vec<f64> = SymmetricEigen::new(sigma).eigenvalues.iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            let mut expected: Vec<f64> = s.iter().map(|v| v * v).collect();
            expected.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-6, "{eig:?} vs {expected:?}");
            }
        }
    }

    #[test]
    fn quat_matrix_agrees_with_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let raw = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            let q = UnitQuaternion::from_quaternion(Quaternion::new(raw[0], raw[1], raw[2], raw[3]));
            let diff = quat_to_mat(raw) - q.to_rotation_matrix().into_inner();
            assert!(diff.norm() < 1e-12);
        }
    }

    #[test]
    fn quat_vjp_matches_finite_difference() {
        let q = [0.7, -0.4, 1.1, 0.3];
        let weights = Mat3::new(0.3, -1.0, 0.5, 2.0, 0.1, -0.7, 0.4, 0.9, -1.3);
        let f = |q: [f64; 4]| quat_to_mat(q).component_mul(&weights).sum();
        let g = quat_to_mat_vjp(q, &weights);
        for k in 0..4 {
            let h = 1e-6;
            let mut p = q;
            let mut m = q;
            p[k] += h;
            m[k] -= h;
            let fd = (f(p) - f(m)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8, "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn quat_left_matrix_is_hamilton_product() {
        let a = [0.3, 0.1, -0.5, 0.8];
        let b = [-0.2, 0.7, 0.4, 0.1];
        let p = quat_mul(a, b);
        let m = quat_left_matrix(a) * nalgebra::Vector4::from(b);
        for i in 0..4 {
            assert!((p[i] - m[i]).abs() < 1e-15);
        }
        // agrees with nalgebra's composition
        let qa = UnitQuaternion::from_quaternion(Quaternion::new(a[0], a[1], a[2], a[3]));
        let qb = UnitQuaternion::from_quaternion(Quaternion::new(b[0], b[1], b[2], b[3]));
        let diff = quat_to_mat(p) - (qa * qb).to_rotation_matrix().into_inner();
        assert!(diff.norm() < 1e-12);
    }

    #[test]
    fn se3_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(se3_apply(&Se3Pose::identity(), &p), p);
        let t = Se3Pose::new(UnitQuaternion::identity(), Vec3::new(0.0, 0.0, 5.0));
        assert_eq!(se3_apply(&t, &Vec3::zeros()), Vec3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn se3_group_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pose = |rng: &mut ChaCha8Rng| {
            Se3Pose::new(
                random_quat(rng),
                Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
            )
        };
        for _ in 0..100 {
            let (a, b, c) = (pose(&mut rng), pose(&mut rng), pose(&mut rng));
            let p = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let inv = a.compose(&a.inverse());
            assert!((inv.apply(&p) - p).norm() < 1e-6);
            assert!((Se3Pose::identity().compose(&a).apply(&p) - a.apply(&p)).norm() < 1e-6);
            let lhs = se3_compose(&se3_compose(&a, &b), &c).apply(&p);
            let rhs = se3_compose(&a, &se3_compose(&b, &c)).apply(&p);
            assert!((lhs - rhs).norm() < 1e-6);
            assert!((a.compose(&b).apply(&p) - a.apply(&b.apply(&p))).norm() < 1e-9);
        }
    }

    #[test]
    fn normalize_vjp_matches_finite_difference() {
        let raw = Vec3::new(0.4, -1.2, 0.7);
        let w = Vec3::new(0.9, 0.2, -0.6);
        let g = normalize_vjp(&raw, &w);
        for k in 0..3 {
            let h = 1e-6;
            let mut p = raw;
            let mut m = raw;
            p[k] += h;
            m[k] -= h;
            let fd = (p.normalize().dot(&w) - m.normalize().dot(&w)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }
}
