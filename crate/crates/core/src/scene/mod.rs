//! Explicit scene representation.
//!
//! Gaussians are stored unconstrained in `f32` (logits, log-scales, raw
//! quaternions and normals) and activated in `f64` on use. A scene holds a
//! static background set, rigid actors that follow per-timestep poses, a
//! sky cubemap and the global illumination network.

mod cubemap;
mod io;
pub mod synth;

pub use cubemap::{sample_cubemap, CubeMap, CUBEMAP_DEFAULT_RESOLUTION};
pub use io::{load_scene, save_scene, SCENE_FORMAT, SCENE_VERSION};

use crate::error::{Error, Result};
use crate::geom::{quat_left_matrix, quat_mul, quat_to_mat, sigmoid, Mat3, Se3Pose, Vec3};
use crate::illum::GlobalIllumNet;
use nalgebra::{Rotation3, UnitQuaternion, Vector4};
use std::collections::BTreeMap;

pub const NUM_LOBES: usize = 4;
pub const PARAMS_PER_GAUSSIAN: usize = 82;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct AsgParams<T> {
    /// Lobe frame as a raw `[w, x, y, z]` quaternion.
    pub rot: [T; 4],
    /// log of the x / y sharpness.
    pub log_sharp: [T; 2],
    /// log of the RGB amplitude.
    pub log_amp: [T; 3],
}

/// One splat. `Gaussian<f32>` is the stored form; `Gaussian<f64>` doubles as
/// world-frame working copy, gradient and optimizer moment.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Gaussian<T> {
    pub mu: [T; 3],
    /// Raw `[w, x, y, z]`, normalized on use.
    pub rot: [T; 4],
    pub log_scale: [T; 3],
    pub opacity_logit: T,
    pub albedo_logit: [T; 3],
    pub roughness_logit: T,
    pub metallic_logit: T,
    /// Normalized on use.
    pub normal_raw: [T; 3],
    pub asg: [AsgParams<T>; NUM_LOBES],
    /// Per-Gaussian incident specular SH, only used by the SH-specular variant.
    pub sh_specular: [[T; 3]; 9],
}

pub type GaussianPrimitive = Gaussian<f32>;
pub type GaussianGrad = Gaussian<f64>;

/// Learning-rate groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum ParamGroup {
    Position,
    Rotation,
    Scale,
    Opacity,
    Albedo,
    Roughness,
    Metallic,
    Normal,
    AsgAxes,
    AsgSharpness,
    AsgAmplitude,
    ShSpecular,
    Sky,
    Illumination,
}

/// Flat layout of a Gaussian: group and number of scalars, in order.
pub const GAUSSIAN_LAYOUT: [(ParamGroup, usize); 12] = [
    (ParamGroup::Position, 3),
    (ParamGroup::Rotation, 4),
    (ParamGroup::Scale, 3),
    (ParamGroup::Opacity, 1),
    (ParamGroup::Albedo, 3),
    (ParamGroup::Roughness, 1),
    (ParamGroup::Metallic, 1),
    (ParamGroup::Normal, 3),
    (ParamGroup::AsgAxes, 4 * NUM_LOBES),
    (ParamGroup::AsgSharpness, 2 * NUM_LOBES),
    (ParamGroup::AsgAmplitude, 3 * NUM_LOBES),
    (ParamGroup::ShSpecular, 27),
];

/// Group of every flat index.
pub fn gaussian_param_groups() -> [ParamGroup; PARAMS_PER_GAUSSIAN] {
    let mut out = [ParamGroup::Position; PARAMS_PER_GAUSSIAN];
    let mut i = 0;
    for (g, n) in GAUSSIAN_LAYOUT {
        for _ in 0..n {
            out[i] = g;
            i += 1;
        }
    }
    debug_assert_eq!(i, PARAMS_PER_GAUSSIAN);
    out
}

impl<T: Copy + Default> Gaussian<T> {
    pub fn to_flat(&self) -> [T; PARAMS_PER_GAUSSIAN] {
        let mut out = [T::default(); PARAMS_PER_GAUSSIAN];
        let mut i = 0;
        let mut put = |vals: &[T]| {
            out[i..i + vals.len()].copy_from_slice(vals);
            i += vals.len();
        };
        put(&self.mu);
        put(&self.rot);
        put(&self.log_scale);
        put(&[self.opacity_logit]);
        put(&self.albedo_logit);
        put(&[self.roughness_logit]);
        put(&[self.metallic_logit]);
        put(&self.normal_raw);
        for l in &self.asg {
            put(&l.rot);
        }
        for l in &self.asg {
            put(&l.log_sharp);
        }
        for l in &self.asg {
            put(&l.log_amp);
        }
        for c in &self.sh_specular {
            put(c);
        }
        out
    }

    pub fn from_flat(f: &[T; PARAMS_PER_GAUSSIAN]) -> Self {
        let mut i = 0;
        let mut take = |n: usize| {
            let s = &f[i..i + n];
            i += n;
            s
        };
        let mut g = Gaussian::<T>::default();
        g.mu.copy_from_slice(take(3));
        g.rot.copy_from_slice(take(4));
        g.log_scale.copy_from_slice(take(3));
        g.opacity_logit = take(1)[0];
        g.albedo_logit.copy_from_slice(take(3));
        g.roughness_logit = take(1)[0];
        g.metallic_logit = take(1)[0];
        g.normal_raw.copy_from_slice(take(3));
        for l in &mut g.asg {
            l.rot.copy_from_slice(take(4));
        }
        for l in &mut g.asg {
            l.log_sharp.copy_from_slice(take(2));
        }
        for l in &mut g.asg {
            l.log_amp.copy_from_slice(take(3));
        }
        for c in &mut g.sh_specular {
            c.copy_from_slice(take(3));
        }
        g
    }
}

impl Gaussian<f32> {
    pub fn to_f64(&self) -> Gaussian<f64> {
        Gaussian::from_flat(&self.to_flat().map(f64::from))
    }
}

impl Gaussian<f64> {
    pub fn to_f32(&self) -> Gaussian<f32> {
        Gaussian::from_flat(&self.to_flat().map(|v| v as f32))
    }

    pub fn activate(&self) -> Activated {
        let rot_raw = self.rot;
        let normal_raw = Vec3::from(self.normal_raw);
        let lobes = self.asg.map(|l| {
            let axes = quat_to_mat(l.rot);
            ActivatedLobe {
                rot_raw: l.rot,
                x: axes.column(0).into(),
                y: axes.column(1).into(),
                z: axes.column(2).into(),
                sharp: l.log_sharp.map(f64::exp),
                amplitude: Vec3::from(l.log_amp.map(f64::exp)),
            }
        });
        Activated {
            mu: Vec3::from(self.mu),
            rot_raw,
            rot: quat_to_mat(rot_raw),
            scale: Vec3::from(self.log_scale.map(f64::exp)),
            opacity: sigmoid(self.opacity_logit),
            albedo: Vec3::from(self.albedo_logit.map(sigmoid)),
            roughness: sigmoid(self.roughness_logit),
            metallic: sigmoid(self.metallic_logit),
            normal_raw,
            normal: normal_raw.normalize(),
            lobes,
            sh_specular: self.sh_specular.map(Vec3::from),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ActivatedLobe {
    pub rot_raw: [f64; 4],
    pub x: Vec3,
    pub y: Vec3,
    pub z: Vec3,
    pub sharp: [f64; 2],
    pub amplitude: Vec3,
}

/// Gaussian with every bounded parameter pushed through its activation.
#[derive(Clone, Copy, Debug)]
pub struct Activated {
    pub mu: Vec3,
    pub rot_raw: [f64; 4],
    pub rot: Mat3,
    pub scale: Vec3,
    pub opacity: f64,
    pub albedo: Vec3,
    pub roughness: f64,
    pub metallic: f64,
    pub normal_raw: Vec3,
    pub normal: Vec3,
    pub lobes: [ActivatedLobe; NUM_LOBES],
    pub sh_specular: [Vec3; 9],
}

impl Activated {
    pub fn covariance(&self) -> Mat3 {
        crate::geom::covariance_from_mat(&self.rot, &self.scale)
    }
}

/// Pinhole camera, OpenCV axes (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Camera-to-world.
    pub pose: Se3Pose,
    pub camera_id: u32,
    /// Index into the scene timeline.
    pub time_index: usize,
}

impl CameraModel {
    /// Camera at `eye` looking at `target`, with `up` the world up vector.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        width: u32,
        height: u32,
        fov_x_deg: f64,
        camera_id: u32,
        time_index: usize,
    ) -> Self {
        let f = (target - eye).normalize();
        let r = f.cross(&up).normalize();
        let d = f.cross(&r);
        let m = Mat3::from_columns(&[r, d, f]);
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
        let fx = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        CameraModel {
            fx,
            fy: fx,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            pose: Se3Pose::new(rot, eye),
            camera_id,
            time_index,
        }
    }

    pub fn center(&self) -> Vec3 {
        self.pose.translation()
    }

    /// World-to-camera rotation.
    pub fn view_rotation(&self) -> Mat3 {
        self.pose.rotation_matrix().transpose()
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.view_rotation() * (p - self.center())
    }

    /// Unit world-space direction through the center of pixel `(px, py)`.
    pub fn ray_direction(&self, px: usize, py: usize) -> Vec3 {
        let d = Vec3::new(
            (px as f64 + 0.5 - self.cx) / self.fx,
            (py as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        );
        (self.pose.rotation_matrix() * d).normalize()
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigidActor {
    pub id: String,
    /// Object frame.
    pub gaussians: Vec<GaussianPrimitive>,
    /// Object-to-world pose per timeline index.
    pub trajectory: BTreeMap<usize, Se3Pose>,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    pub background: Vec<GaussianPrimitive>,
    pub actors: Vec<RigidActor>,
    pub sky: CubeMap,
    /// Raw timestamps, ascending.
    pub timeline: Vec<f64>,
    pub cameras: Vec<CameraModel>,
    pub illumination: GlobalIllumNet,
}

/// Which stored set a world Gaussian came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GaussianSource {
    Background(usize),
    Actor { actor: usize, index: usize },
}

/// A Gaussian brought into world frame for one timestep.
#[derive(Clone, Copy, Debug)]
pub struct WorldGaussian {
    pub params: Gaussian<f64>,
    pub source: GaussianSource,
    /// Object-to-world pose applied (identity for background).
    pub frame: Se3Pose,
}

impl SceneGraph {
    pub fn gaussian_count(&self) -> usize {
        self.background.len() + self.actors.iter().map(|a| a.gaussians.len()).sum::<usize>()
    }

    /// `(t - t_min) / (t_max - t_min)`; zero for a degenerate timeline.
    pub fn normalized_time(&self, time_index: usize) -> Result<f64> {
        let t = *self.timeline.get(time_index).ok_or(Error::UnknownTime(time_index))?;
        let lo = self.timeline.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.timeline.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            Ok((t - lo) / (hi - lo))
        } else {
            Ok(0.0)
        }
    }

    pub fn actor_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.actors.len()).collect();
        order.sort_by(|&a, &b| self.actors[a].id.cmp(&self.actors[b].id));
        order
    }

    pub fn gaussian(&self, source: GaussianSource) -> &GaussianPrimitive {
        match source {
            GaussianSource::Background(i) => &self.background[i],
            GaussianSource::Actor { actor, index } => &self.actors[actor].gaussians[index],
        }
    }

    pub fn gaussian_mut(&mut self, source: GaussianSource) -> &mut GaussianPrimitive {
        match source {
            GaussianSource::Background(i) => &mut self.background[i],
            GaussianSource::Actor { actor, index } => &mut self.actors[actor].gaussians[index],
        }
    }

    /// Moves every actor Gaussian mean into its actor's bounding box.
    /// Returns whether anything moved.
    pub fn clamp_to_bounds(&mut self) -> bool {
        let mut moved = false;
        for a in &mut self.actors {
            for g in &mut a.gaussians {
                for d in 0..3 {
                    let (lo, hi) = (a.bbox_min[d], a.bbox_max[d]);
                    // the nearest f32 may round past an f64 bound
                    let mut v = (g.mu[d] as f64).clamp(lo, hi) as f32;
                    if (v as f64) > hi {
                        v = v.next_down();
                    } else if (v as f64) < lo {
                        v = v.next_up();
                    }
                    moved |= v != g.mu[d];
                    g.mu[d] = v;
                }
            }
        }
        moved
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScene(msg));
        if self.cameras.is_empty() {
            return bad("scene has no cameras".into());
        }
        if self.timeline.is_empty() {
            return bad("timeline is empty".into());
        }
        if self.timeline.windows(2).any(|w| w[1] < w[0]) {
            return bad("timeline is not ascending".into());
        }
        for (i, c) in self.cameras.iter().enumerate() {
            if !(c.fx > 0.0 && c.fy > 0.0) {
                return bad(format!("camera {i}: focal lengths must be positive"));
            }
            if !(c.cx >= 0.0 && c.cx < c.width as f64 && c.cy >= 0.0 && c.cy < c.height as f64) {
                return bad(format!("camera {i}: principal point outside the image"));
            }
            if c.time_index >= self.timeline.len() {
                return bad(format!("camera {i}: time index {} outside timeline", c.time_index));
            }
            if !self.illumination.camera_ids.contains(&c.camera_id) {
                return bad(format!("camera {i}: id {} has no illumination embedding", c.camera_id));
            }
        }
        for a in &self.actors {
            for t in 0..self.timeline.len() {
                if !a.trajectory.contains_key(&t) {
                    return bad(format!("actor `{}` has no pose at time index {t}", a.id));
                }
            }
            for (k, g) in a.gaussians.iter().enumerate() {
                let inside = (0..3)
                    .all(|d| (g.mu[d] as f64) >= a.bbox_min[d] && (g.mu[d] as f64) <= a.bbox_max[d]);
                if !inside {
                    return bad(format!("actor `{}` gaussian {k} lies outside its bounding box", a.id));
                }
            }
        }
        self.sky.validate()?;
        Ok(())
    }
}

/// Brings every Gaussian into world frame at `time_index`: background first,
/// then actors ordered by id.
pub fn resolve_scene(scene: &SceneGraph, time_index: usize) -> Result<Vec<WorldGaussian>> {
    if time_index >= scene.timeline.len() {
        return Err(Error::UnknownTime(time_index));
    }
    let mut out = Vec::with_capacity(scene.gaussian_count());
    for (i, g) in scene.background.iter().enumerate() {
        out.push(WorldGaussian {
            params: g.to_f64(),
            source: GaussianSource::Background(i),
            frame: Se3Pose::identity(),
        });
    }
    for a in scene.actor_order() {
        let actor = &scene.actors[a];
        let pose = *actor.trajectory.get(&time_index).ok_or_else(|| Error::MissingPose {
            actor: actor.id.clone(),
            time_index,
        })?;
        for (index, g) in actor.gaussians.iter().enumerate() {
            out.push(WorldGaussian {
                params: transform_gaussian(&g.to_f64(), &pose),
                source: GaussianSource::Actor { actor: a, index },
                frame: pose,
            });
        }
    }
    Ok(out)
}

/// Applies a rigid pose to the geometric parameters (mean, rotation, normal
/// and lobe frames). Material parameters pass through unchanged.
pub fn transform_gaussian(g: &Gaussian<f64>, pose: &Se3Pose) -> Gaussian<f64> {
    let r = pose.rotation_matrix();
    let q = pose.quat_wxyz();
    let mut out = *g;
    out.mu = pose.apply(&Vec3::from(g.mu)).into();
    out.rot = quat_mul(q, g.rot);
    out.normal_raw = (r * Vec3::from(g.normal_raw)).into();
    for l in &mut out.asg {
        l.rot = quat_mul(q, l.rot);
    }
    out
}

/// Maps a world-frame gradient back onto object-frame parameters.
pub fn transform_gradient_to_object(d: &Gaussian<f64>, pose: &Se3Pose) -> Gaussian<f64> {
    let rt = pose.rotation_matrix().transpose();
    let lt = quat_left_matrix(pose.quat_wxyz()).transpose();
    let quat_back = |v: [f64; 4]| -> [f64; 4] { (lt * Vector4::from(v)).into() };
    let mut out = *d;
    out.mu = (rt * Vec3::from(d.mu)).into();
    out.rot = quat_back(d.rot);
    out.normal_raw = (rt * Vec3::from(d.normal_raw)).into();
    for l in &mut out.asg {
        l.rot = quat_back(l.rot);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::build_covariance;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_gaussian(rng: &mut impl Rng) -> GaussianPrimitive {
        let mut f = [0.0f32; PARAMS_PER_GAUSSIAN];
        f.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        Gaussian::from_flat(&f)
    }

    fn scene_with_actor(pose: Se3Pose) -> SceneGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let actor = RigidActor {
            id: "car".into(),
            gaussians: (0..12).map(|_| random_gaussian(&mut rng)).collect(),
            trajectory: [(0, pose)].into_iter().collect(),
            bbox_min: [-1.0; 3],
            bbox_max: [1.0; 3],
        };
        SceneGraph {
            background: (0..5).map(|_| random_gaussian(&mut rng)).collect(),
            actors: vec![actor],
            sky: CubeMap::constant(4, Vec3::repeat(0.1)),
            timeline: vec![0.0],
            cameras: vec![CameraModel::look_at(
                Vec3::new(0.0, -5.0, 1.0),
                Vec3::zeros(),
                Vec3::z(),
                32,
                32,
                60.0,
                0,
                0,
            )],
            illumination: GlobalIllumNet::new(&[0], &mut rng),
        }
    }

    #[test]
    fn flat_layout_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_gaussian(&mut rng);
        assert_eq!(Gaussian::from_flat(&g.to_flat()), g);
        assert_eq!(GAUSSIAN_LAYOUT.iter().map(|(_, n)| n).sum::<usize>(), PARAMS_PER_GAUSSIAN);
        let groups = gaussian_param_groups();
        assert_eq!(groups[0], ParamGroup::Position);
        assert_eq!(groups[PARAMS_PER_GAUSSIAN - 1], ParamGroup::ShSpecular);
    }

    #[test]
    fn activation_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let mut g = random_gaussian(&mut rng).to_f64();
            g.opacity_logit *= 20.0;
            let a = g.activate();
            assert!((0.0..=1.0).contains(&a.opacity));
            assert!(a.albedo.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((0.0..=1.0).contains(&a.roughness) && (0.0..=1.0).contains(&a.metallic));
            assert!((a.normal.norm() - 1.0).abs() < 1e-12);
            assert!(a.scale.iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn identity_pose_is_verbatim() {
        let scene = scene_with_actor(Se3Pose::identity());
        let world = resolve_scene(&scene, 0).unwrap();
        assert_eq!(world.len(), scene.gaussian_count());
        for w in &world[5..] {
            let GaussianSource::Actor { index, .. } = w.source else { panic!() };
            let orig = scene.actors[0].gaussians[index].to_f64();
            assert_eq!(w.params.mu, orig.mu);
            assert_eq!(w.params.normal_raw, orig.normal_raw);
            assert_eq!(w.params.rot, orig.rot);
        }
    }

    #[test]
    fn translation_shifts_means_only() {
        let pose = Se3Pose::new(UnitQuaternion::identity(), Vec3::new(0.0, 0.0, 5.0));
        let scene = scene_with_actor(pose);
        let world = resolve_scene(&scene, 0).unwrap();
        for w in &world[5..] {
            let GaussianSource::Actor { index, .. } = w.source else { panic!() };
            let orig = scene.actors[0].gaussians[index].to_f64();
            let shift = Vec3::from(w.params.mu) - Vec3::from(orig.mu);
            assert!((shift - Vec3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
            assert_eq!(w.params.normal_raw, orig.normal_raw);
            assert_eq!(w.params.albedo_logit, orig.albedo_logit);
        }
    }

    #[test]
    fn look_at_centers_the_target_from_every_side() {
        // includes orientations half a turn away from identity
        let target = Vec3::new(0.0, 0.0, 0.3);
        for k in 0..16 {
            let a = std::f64::consts::TAU * k as f64 / 16.0;
            let eye = Vec3::new(5.5 * a.cos(), 5.5 * a.sin(), 2.5);
            let cam = CameraModel::look_at(eye, target, Vec3::z(), 32, 32, 60.0, 0, 0);
            let p = cam.world_to_camera(&target);
            assert!(p.x.abs() < 1e-9 && p.y.abs() < 1e-9, "{k}: {p:?}");
            assert!((p.z - (target - eye).norm()).abs() < 1e-9);
            // image y points down: a point above the target lands above center
            assert!(cam.world_to_camera(&(target + Vec3::z())).y < 0.0);
        }
    }

    #[test]
    fn yaw_rotates_normals_and_keeps_covariance_spectrum() {
        let yaw = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), std::f64::consts::FRAC_PI_2);
        let scene = scene_with_actor(Se3Pose::new(yaw, Vec3::new(1.0, 2.0, 0.0)));
        let world = resolve_scene(&scene, 0).unwrap();
        let spectrum = |g: &Gaussian<f64>| {
            let a = g.activate();
            let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(a.rot));
            let mut e: Vec<f64> =
                SymmetricEigen::new(build_covariance(&q, &a.scale)).eigenvalues.iter().copied().collect();
            e.sort_by(f64::total_cmp);
            e
        };
        for w in &world[5..] {
            let GaussianSource::Actor { index, .. } = w.source else { panic!() };
            let orig = scene.actors[0].gaussians[index].to_f64();
            let n0 = Vec3::from(orig.normal_raw).normalize();
            let n1 = Vec3::from(w.params.normal_raw).normalize();
            let expected = Vec3::new(-n0.y, n0.x, n0.z);
            assert!((n1 - expected).norm() < 1e-12);
            for (a, b) in spectrum(&orig).iter().zip(spectrum(&w.params)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rigid_motion_preserves_distances_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let q = UnitQuaternion::from_euler_angles(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let pose = Se3Pose::new(q, Vec3::new(rng.gen_range(-9.0..9.0), 0.3, -2.0));
            let scene = scene_with_actor(pose);
            let world = resolve_scene(&scene, 0).unwrap();
            assert_eq!(world.len(), 5 + 12);
            let obj: Vec<Vec3> = scene.actors[0].gaussians.iter().map(|g| Vec3::from(g.to_f64().mu)).collect();
            let wld: Vec<Vec3> = world[5..].iter().map(|w| Vec3::from(w.params.mu)).collect();
            for i in 0..obj.len() {
                for j in 0..obj.len() {
                    let d0 = (obj[i] - obj[j]).norm();
                    let d1 = (wld[i] - wld[j]).norm();
                    assert!((d0 - d1).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn missing_pose_is_reported() {
        let mut scene = scene_with_actor(Se3Pose::identity());
        scene.timeline.push(1.0);
        assert!(matches!(resolve_scene(&scene, 1), Err(Error::MissingPose { .. })));
        assert!(scene.validate().is_err());
    }

    #[test]
    fn output_order_background_then_actor_ids() {
        let mut scene = scene_with_actor(Se3Pose::identity());
        let mut second = scene.actors[0].clone();
        second.id = "bus".into();
        second.gaussians.truncate(2);
        scene.actors.push(second);
        let world = resolve_scene(&scene, 0).unwrap();
        assert!(matches!(world[0].source, GaussianSource::Background(0)));
        assert!(matches!(world[5].source, GaussianSource::Actor { actor: 1, index: 0 }));
        assert!(matches!(world[7].source, GaussianSource::Actor { actor: 0, index: 0 }));
    }

    #[test]
    fn gradient_back_transform_is_adjoint() {
        // <d_world, J d_obj> == <J^T d_world, d_obj> for the linear geometric map
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = Se3Pose::new(
            UnitQuaternion::from_euler_angles(0.3, -1.2, 2.0),
            Vec3::new(1.0, -2.0, 0.5),
        );
        let g = random_gaussian(&mut rng).to_f64();
        let dir = random_gaussian(&mut rng).to_f64();
        let upstream = random_gaussian(&mut rng).to_f64();
        let eps = 1e-6;
        let mut gp = g.to_flat();
        let mut gm = g.to_flat();
        for (i, d) in dir.to_flat().iter().enumerate() {
            gp[i] += eps * d;
            gm[i] -= eps * d;
        }
        let wp = transform_gaussian(&Gaussian::from_flat(&gp), &pose).to_flat();
        let wm = transform_gaussian(&Gaussian::from_flat(&gm), &pose).to_flat();
        let u = upstream.to_flat();
        let lhs: f64 = (0..PARAMS_PER_GAUSSIAN).map(|i| u[i] * (wp[i] - wm[i]) / (2.0 * eps)).sum();
        let back = transform_gradient_to_object(&upstream, &pose).to_flat();
        let rhs: f64 = back.iter().zip(dir.to_flat()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-7, "{lhs} vs {rhs}");
    }

    #[test]
    fn normalized_time() {
        let mut scene = scene_with_actor(Se3Pose::identity());
        scene.timeline = vec![2.0, 3.0, 6.0];
        assert_eq!(scene.normalized_time(0).unwrap(), 0.0);
        assert_eq!(scene.normalized_time(1).unwrap(), 0.25);
        assert_eq!(scene.normalized_time(2).unwrap(), 1.0);
        assert!(scene.normalized_time(3).is_err());
    }
}
