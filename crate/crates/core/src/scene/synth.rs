//! Synthetic scene generation.
//!
//! A ground plane of flat Gaussians, scattered ellipsoids, rigid actors
//! driving across the plane, and a ring of cameras that advances a little at
//! every timestep. Ground-truth images are rendered by this engine with early
//! termination off. The initial scene handed to training is the ground truth
//! with jittered parameters, flat sky and a freshly initialized lighting net.

use super::{AsgParams, CameraModel, CubeMap, Gaussian, GaussianPrimitive, RigidActor, SceneGraph, NUM_LOBES};
use crate::error::Result;
use crate::geom::{Mat3, Se3Pose, Vec3};
use crate::illum::GlobalIllumNet;
use crate::render::{render, RenderOptions};
use crate::train::Frame;
use nalgebra::{Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Diffuse-dominated street with mild highlights.
    #[default]
    Default,
    /// Dim ambient light, glossy ground and one bright specular cluster.
    Headlight,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub preset: Preset,
    pub seed: u64,
    /// Total Gaussians including actors.
    pub gaussians: usize,
    pub actors: usize,
    pub cameras: usize,
    pub timesteps: usize,
    pub width: u32,
    pub height: u32,
    pub sky_resolution: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            preset: Preset::Default,
            seed: 0,
            gaussians: 200,
            actors: 1,
            cameras: 8,
            timesteps: 12,
            width: 64,
            height: 64,
            sky_resolution: 8,
        }
    }
}

pub struct SynthOutput {
    pub ground_truth: SceneGraph,
    /// Starting point for reconstruction.
    pub init: SceneGraph,
    /// Camera-major: frame `k * timesteps + t` is camera `k` at time `t`.
    pub frames: Vec<Frame>,
}

const RING_RADIUS: f64 = 5.5;
const RING_HEIGHT: f64 = 2.5;
const RING_STEP: f64 = 0.04;
const FOV_X_DEG: f64 = 60.0;
const GROUND_EXTENT: f64 = 3.0;

fn logit(p: f64) -> f32 {
    (p / (1.0 - p)).ln() as f32
}

/// Quaternion `[w, x, y, z]` of a right-handed frame whose third axis is `z`.
fn frame_quat(z: &Vec3, hint: &Vec3) -> [f32; 4] {
    let z = z.normalize();
    let h = if z.cross(hint).norm() < 1e-3 { Vec3::x() } else { *hint };
    let x = h.cross(&z).normalize();
    let y = z.cross(&x);
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(Mat3::from_columns(&[x, y, z])));
    [q.w as f32, q.i as f32, q.j as f32, q.k as f32]
}

fn unit_from_angles(azimuth: f64, elevation: f64) -> Vec3 {
    Vec3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin())
}

struct Material {
    albedo: Vec3,
    roughness: f64,
    metallic: f64,
    opacity: f64,
}

/// Lobes clustered around `center` with the given amplitude range.
fn lobes(rng: &mut ChaCha8Rng, center: &Vec3, spread: f64, amp: (f64, f64), sharp: (f64, f64)) -> [AsgParams<f32>; NUM_LOBES] {
    std::array::from_fn(|_| {
        let jitter = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let z = (center + spread * jitter).normalize();
        let hint = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0);
        let a = rng.gen_range(amp.0..amp.1);
        let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.85..1.15));
        AsgParams {
            rot: frame_quat(&z, &hint),
            log_sharp: [rng.gen_range(sharp.0..sharp.1).ln() as f32, rng.gen_range(sharp.0..sharp.1).ln() as f32],
            log_amp: tint.map(|t| (a * t).ln() as f32),
        }
    })
}

fn gaussian(mu: Vec3, frame: [f32; 4], scale: Vec3, normal: Vec3, m: &Material, lobes: [AsgParams<f32>; NUM_LOBES]) -> GaussianPrimitive {
    Gaussian {
        mu: [mu.x as f32, mu.y as f32, mu.z as f32],
        rot: frame,
        log_scale: [scale.x.ln() as f32, scale.y.ln() as f32, scale.z.ln() as f32],
        opacity_logit: logit(m.opacity),
        albedo_logit: [logit(m.albedo.x), logit(m.albedo.y), logit(m.albedo.z)],
        roughness_logit: logit(m.roughness),
        metallic_logit: logit(m.metallic),
        normal_raw: [normal.x as f32, normal.y as f32, normal.z as f32],
        asg: lobes,
        sh_specular: [[0.0; 3]; 9],
    }
}

fn ground(rng: &mut ChaCha8Rng, count: usize, preset: Preset) -> Vec<GaussianPrimitive> {
    let side = (count as f64).sqrt().ceil() as usize;
    let cell = 2.0 * GROUND_EXTENT / side as f64;
    (0..count)
        .map(|i| {
            let (gx, gy) = ((i % side) as f64, (i / side) as f64);
            let mu = Vec3::new(
                -GROUND_EXTENT + (gx + 0.5 + rng.gen_range(-0.15..0.15)) * cell,
                -GROUND_EXTENT + (gy + 0.5 + rng.gen_range(-0.15..0.15)) * cell,
                rng.gen_range(-0.01..0.01),
            );
            let checker = if (i % side + i / side) % 2 == 0 { 0.55 } else { 0.35 };
            let m = Material {
                albedo: Vec3::new(checker, checker * 0.95, checker * 0.9) * rng.gen_range(0.9..1.1),
                roughness: match preset {
                    Preset::Default => rng.gen_range(0.4..0.7),
                    Preset::Headlight => rng.gen_range(0.15..0.3),
                },
                metallic: rng.gen_range(0.05..0.2),
                opacity: 0.95,
            };
            let (amp, elevation) = match preset {
                Preset::Default => ((0.2, 0.6), 0.8),
                Preset::Headlight => ((2.0, 4.0), rng.gen_range(0.35..0.6)),
            };
            let dir = unit_from_angles(rng.gen_range(0.0..2.0 * PI), elevation);
            let l = lobes(rng, &dir, 0.15, amp, (2.0, 12.0));
            let frame = frame_quat(&Vec3::z(), &Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0));
            gaussian(mu, frame, Vec3::new(0.55 * cell, 0.55 * cell, 0.02), Vec3::z(), &m, l)
        })
        .collect()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Ellipsoid with its thinnest axis along a normal tilted toward `facing`.
fn blob(rng: &mut ChaCha8Rng, mu: Vec3, facing: &Vec3, size: (f64, f64), m: &Material, amp: (f64, f64)) -> GaussianPrimitive {
    let normal = (facing + 0.5 * random_unit(rng)).normalize();
    let frame = frame_quat(&normal, &random_unit(rng));
    let scale = Vec3::new(rng.gen_range(size.0..size.1), rng.gen_range(size.0..size.1), 0.3 * size.0);
    let l = lobes(rng, &normal, 0.4, amp, (2.0, 12.0));
    gaussian(mu, frame, scale, normal, m, l)
}

fn objects(rng: &mut ChaCha8Rng, count: usize) -> Vec<GaussianPrimitive> {
    (0..count)
        .map(|_| {
            let r = rng.gen_range(0.8..2.6);
            let a = rng.gen_range(0.0..2.0 * PI);
            let mu = Vec3::new(r * a.cos(), r * a.sin(), rng.gen_range(0.2..1.2));
            let outward = Vec3::new(a.cos(), a.sin(), 0.3);
            let m = Material {
                albedo: Vec3::new(rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)),
                roughness: rng.gen_range(0.2..0.7),
                metallic: rng.gen_range(0.0..0.5),
                opacity: rng.gen_range(0.7..0.95),
            };
            blob(rng, mu, &outward, (0.12, 0.35), &m, (0.2, 0.8))
        })
        .collect()
}

/// The bright, mostly specular cluster of the headlight preset.
fn headlight_cluster(rng: &mut ChaCha8Rng, count: usize) -> Vec<GaussianPrimitive> {
    let center = Vec3::new(0.0, 1.2, 0.5);
    (0..count)
        .map(|i| {
            let mu = center + 0.25 * random_unit(rng);
            let azimuth = 2.0 * PI * i as f64 / count.max(1) as f64;
            let facing = unit_from_angles(azimuth, 0.3);
            let m = Material {
                albedo: Vec3::new(0.06, 0.06, 0.05),
                roughness: rng.gen_range(0.2..0.3),
                metallic: 0.9,
                opacity: 0.9,
            };
            blob(rng, mu, &facing, (0.08, 0.15), &m, (5.0, 8.0))
        })
        .collect()
}

fn actor(rng: &mut ChaCha8Rng, index: usize, count: usize, timesteps: usize) -> RigidActor {
    let half = Vec3::new(0.45, 0.22, 0.18);
    let paint = Vec3::new(rng.gen_range(0.5..0.8), rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3));
    let gaussians = (0..count)
        .map(|_| {
            let p = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                .component_mul(&half);
            let facing = Vec3::new(p.x / half.x, p.y / half.y, p.z / half.z + 0.5);
            let m = Material {
                albedo: paint * rng.gen_range(0.85..1.15),
                roughness: rng.gen_range(0.2..0.4),
                metallic: rng.gen_range(0.3..0.7),
                opacity: 0.9,
            };
            blob(rng, p + Vec3::new(0.0, 0.0, half.z), &facing, (0.08, 0.2), &m, (0.3, 1.0))
        })
        .collect();
    let lane = -0.8 + 0.6 * index as f64;
    let trajectory = (0..timesteps)
        .map(|t| {
            let s = t as f64 / (timesteps.max(2) - 1) as f64;
            let yaw = 0.15 * (2.0 * PI * s).sin();
            let pose = Se3Pose::new(
                UnitQuaternion::from_axis_angle(&Vec3::z_axis(), yaw),
                Vec3::new(-1.6 + 3.2 * s, lane, 0.0),
            );
            (t, pose)
        })
        .collect::<BTreeMap<_, _>>();
    RigidActor {
        id: format!("actor{index:02}"),
        gaussians,
        trajectory,
        bbox_min: (-half).into(),
        bbox_max: (half + Vec3::new(0.0, 0.0, 2.0 * half.z)).into(),
    }
}

fn sky(preset: Preset, resolution: usize) -> CubeMap {
    let moon = unit_from_angles(0.7, 0.5);
    let (base, glow) = match preset {
        Preset::Default => (Vec3::new(0.02, 0.03, 0.07), 3.0),
        Preset::Headlight => (Vec3::new(0.01, 0.012, 0.03), 1.0),
    };
    CubeMap::from_fn(resolution, |d| {
        let up = d.z.max(0.0);
        base + Vec3::new(0.05, 0.07, 0.15) * up + Vec3::new(1.0, 0.95, 0.8) * glow * (8.0 * (d.dot(&moon) - 1.0)).exp()
    })
}

fn ground_truth_illumination(preset: Preset, camera_ids: &[u32], rng: &mut ChaCha8Rng) -> GlobalIllumNet {
    let mut net = GlobalIllumNet::new(camera_ids, rng);
    let (ambient, overhead) = match preset {
        Preset::Default => ([0.9f32, 0.85, 1.0], 0.35f32),
        Preset::Headlight => ([0.45, 0.42, 0.5], 0.2),
    };
    for head in &mut net.heads {
        head.weight.iter_mut().for_each(|w| *w = rng.gen_range(-0.01..0.01));
    }
    net.heads[0].bias.copy_from_slice(&ambient);
    // band 1, z-aligned coefficient: light from above
    net.heads[1].bias[3..6].fill(overhead);
    net
}

fn cameras(cfg: &SynthConfig) -> Vec<CameraModel> {
    let target = Vec3::new(0.0, 0.0, 0.3);
    (0..cfg.cameras)
        .flat_map(|k| {
            (0..cfg.timesteps).map(move |t| {
                let a = 2.0 * PI * k as f64 / cfg.cameras.max(1) as f64 + RING_STEP * t as f64;
                let eye = Vec3::new(RING_RADIUS * a.cos(), RING_RADIUS * a.sin(), RING_HEIGHT);
                CameraModel::look_at(eye, target, Vec3::z(), cfg.width, cfg.height, FOV_X_DEG, k as u32, t)
            })
        })
        .collect()
}

/// Jittered copy of the ground truth used to start reconstruction.
pub fn perturb_for_init(gt: &SceneGraph, seed: u64) -> SceneGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1217_5eed);
    let mut init = gt.clone();
    let mut n = |s: f64| -> f32 { (s * (rng.gen_range(-1.0..1.0f64) + rng.gen_range(-1.0..1.0) + rng.gen_range(-1.0..1.0))) as f32 };
    let jitter = |g: &mut GaussianPrimitive, n: &mut dyn FnMut(f64) -> f32| {
        g.mu.iter_mut().for_each(|v| *v += n(0.04));
        g.rot.iter_mut().for_each(|v| *v += n(0.05));
        g.log_scale.iter_mut().for_each(|v| *v += n(0.15));
        g.opacity_logit = 0.0;
        g.albedo_logit = [0.0; 3];
        g.roughness_logit += n(0.2);
        g.metallic_logit += n(0.2);
        g.normal_raw.iter_mut().for_each(|v| *v += n(0.05));
        // a positive DC term keeps the SH specular ablation off its clamp
        g.sh_specular = [[0.0; 3]; 9];
        g.sh_specular[0] = [0.1; 3];
        for l in &mut g.asg {
            l.rot.iter_mut().for_each(|v| *v += n(0.01));
            l.log_sharp.iter_mut().for_each(|v| *v += n(0.03));
            l.log_amp.iter_mut().for_each(|v| *v += n(0.03));
        }
    };
    for g in init.background.iter_mut().chain(init.actors.iter_mut().flat_map(|a| &mut a.gaussians)) {
        jitter(g, &mut n);
    }
    let mean = {
        let t = &gt.sky.texels;
        let c = t.len() / 3;
        Vec3::new(
            t.iter().step_by(3).map(|&v| v as f64).sum::<f64>() / c as f64,
            t.iter().skip(1).step_by(3).map(|&v| v as f64).sum::<f64>() / c as f64,
            t.iter().skip(2).step_by(3).map(|&v| v as f64).sum::<f64>() / c as f64,
        )
    };
    init.sky = CubeMap::constant(gt.sky.face_resolution, mean);
    init.illumination = GlobalIllumNet::new(&gt.illumination.camera_ids, &mut rng);
    init.clamp_to_bounds();
    init
}

/// Builds the ground-truth scene, its reference renders with normal priors,
/// and the initial scene for reconstruction. Deterministic in `cfg`.
pub fn synth_scene(cfg: &SynthConfig) -> Result<SynthOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let actor_total = if cfg.actors > 0 { cfg.gaussians / 5 } else { 0 };
    let bg_total = cfg.gaussians - actor_total;
    let n_ground = (bg_total as f64 * 0.6).round() as usize;
    let n_cluster = match cfg.preset {
        Preset::Default => 0,
        Preset::Headlight => 12.min(bg_total - n_ground),
    };
    let mut background = ground(&mut rng, n_ground, cfg.preset);
    background.extend(objects(&mut rng, bg_total - n_ground - n_cluster));
    background.extend(headlight_cluster(&mut rng, n_cluster));
    let actors = (0..cfg.actors)
        .map(|a| {
            let count = actor_total / cfg.actors + usize::from(a < actor_total % cfg.actors);
            actor(&mut rng, a, count, cfg.timesteps)
        })
        .collect();
    let camera_ids: Vec<u32> = (0..cfg.cameras as u32).collect();
    let ground_truth = SceneGraph {
        background,
        actors,
        sky: sky(cfg.preset, cfg.sky_resolution),
        timeline: (0..cfg.timesteps).map(|t| 0.1 * t as f64).collect(),
        cameras: cameras(cfg),
        illumination: ground_truth_illumination(cfg.preset, &camera_ids, &mut rng),
    };
    ground_truth.validate()?;
    let frames = ground_truth
        .cameras
        .iter()
        .enumerate()
        .map(|(i, cam)| {
            let (out, _) = render(&ground_truth, cam, &RenderOptions::fine())?;
            Ok(Frame { camera: i, rgb: out.rgb, normal_prior: Some(out.normal) })
        })
        .collect::<Result<Vec<_>>>()?;
    let init = perturb_for_init(&ground_truth, cfg.seed);
    Ok(SynthOutput { ground_truth, init, frames })
}
