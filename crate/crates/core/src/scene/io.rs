//! Scene files.
//!
//! A scene is a UTF-8 TOML manifest plus a binary blob of little-endian
//! `f32` arrays. The manifest holds everything scalar (timeline, cameras,
//! trajectories, counts) and an `{ offset, len }` reference, in `f32`
//! elements, for every parameter array in the blob. Cameras and poses are
//! written as decimal `f64` in shortest round-trip form, so a load of a save
//! reproduces every value bit for bit.
//!
//! Manifest layout:
//!
//! ```toml
//! format = "nightsplat-scene"
//! version = 1
//! blob = "scene.bin"
//! dtype = "f32le"
//! timeline = [0.0, 0.5, 1.0]
//!
//! [sky]
//! face_resolution = 64
//! texels = { offset = 0, len = 73728 }          # 6 x R x R x 3
//!
//! [background]
//! count = 100
//! [background.arrays]
//! mu = { offset = .., len = .. }                # count x 3
//! rot = ..                                      # count x 4, [w, x, y, z]
//! log_scale = ..                                # count x 3
//! opacity_logit = ..                            # count
//! albedo_logit = ..                             # count x 3
//! roughness_logit = ..                          # count
//! metallic_logit = ..                           # count
//! normal_raw = ..                               # count x 3
//! asg_rot = ..                                  # count x 4 lobes x 4
//! asg_log_sharp = ..                            # count x 4 lobes x 2
//! asg_log_amp = ..                              # count x 4 lobes x 3
//! sh_specular = ..                              # count x 9 x 3
//!
//! [[actors]]
//! id = "car"
//! bbox_min = [..]; bbox_max = [..]
//! gaussians = { count = .., arrays = { .. } }   # same arrays as background
//! trajectory = [{ time_index = 0, rotation = [w, x, y, z], translation = [..] }, ..]
//!
//! [illumination]
//! camera_ids = [0, 1]
//! embedding_dim = 16
//! embeddings = { offset, len }                  # cameras x embedding_dim
//! layers = [{ in_dim, out_dim, weight = {..}, bias = {..} }, ..]
//! heads = [..]                                  # bands 0, 1, 2
//!
//! [[cameras]]
//! camera_id = 0; time_index = 0
//! fx = ..; fy = ..; cx = ..; cy = ..; width = ..; height = ..
//! rotation = [w, x, y, z]; translation = [..]   # camera-to-world
//! ```

use super::{CameraModel, CubeMap, Gaussian, GaussianPrimitive, RigidActor, SceneGraph, NUM_LOBES};
use crate::error::{Error, Result};
use crate::geom::Se3Pose;
use crate::illum::{GlobalIllumNet, Linear};
use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCENE_FORMAT: &str = "nightsplat-scene";
pub const SCENE_VERSION: i64 = 1;
const DTYPE: &str = "f32le";

#[derive(Serialize, Deserialize, Clone, Copy, Debug)]
#[serde(deny_unknown_fields)]
struct ArrayRef {
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianArrays {
    mu: ArrayRef,
    rot: ArrayRef,
    log_scale: ArrayRef,
    opacity_logit: ArrayRef,
    albedo_logit: ArrayRef,
    roughness_logit: ArrayRef,
    metallic_logit: ArrayRef,
    normal_raw: ArrayRef,
    asg_rot: ArrayRef,
    asg_log_sharp: ArrayRef,
    asg_log_amp: ArrayRef,
    sh_specular: ArrayRef,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianBlock {
    count: usize,
    arrays: GaussianArrays,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseEntry {
    time_index: usize,
    rotation: [f64; 4],
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActorEntry {
    id: String,
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
    gaussians: GaussianBlock,
    trajectory: Vec<PoseEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkyEntry {
    face_resolution: usize,
    texels: ArrayRef,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearEntry {
    in_dim: usize,
    out_dim: usize,
    weight: ArrayRef,
    bias: ArrayRef,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IllumEntry {
    camera_ids: Vec<u32>,
    embedding_dim: usize,
    embeddings: ArrayRef,
    layers: Vec<LinearEntry>,
    heads: Vec<LinearEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraEntry {
    camera_id: u32,
    time_index: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    rotation: [f64; 4],
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: i64,
    blob: String,
    dtype: String,
    timeline: Vec<f64>,
    sky: SkyEntry,
    background: GaussianBlock,
    actors: Vec<ActorEntry>,
    illumination: IllumEntry,
    cameras: Vec<CameraEntry>,
}

struct BlobWriter(Vec<f32>);

impl BlobWriter {
    fn push(&mut self, values: impl IntoIterator<Item = f32>) -> ArrayRef {
        let offset = self.0.len();
        self.0.extend(values);
        ArrayRef { offset, len: self.0.len() - offset }
    }

    fn gaussians(&mut self, gs: &[GaussianPrimitive]) -> GaussianBlock {
        let arrays = GaussianArrays {
            mu: self.push(gs.iter().flat_map(|g| g.mu)),
            rot: self.push(gs.iter().flat_map(|g| g.rot)),
            log_scale: self.push(gs.iter().flat_map(|g| g.log_scale)),
            opacity_logit: self.push(gs.iter().map(|g| g.opacity_logit)),
            albedo_logit: self.push(gs.iter().flat_map(|g| g.albedo_logit)),
            roughness_logit: self.push(gs.iter().map(|g| g.roughness_logit)),
            metallic_logit: self.push(gs.iter().map(|g| g.metallic_logit)),
            normal_raw: self.push(gs.iter().flat_map(|g| g.normal_raw)),
            asg_rot: self.push(gs.iter().flat_map(|g| g.asg.iter().flat_map(|l| l.rot))),
            asg_log_sharp: self.push(gs.iter().flat_map(|g| g.asg.iter().flat_map(|l| l.log_sharp))),
            asg_log_amp: self.push(gs.iter().flat_map(|g| g.asg.iter().flat_map(|l| l.log_amp))),
            sh_specular: self.push(gs.iter().flat_map(|g| g.sh_specular.iter().flatten().copied())),
        };
        GaussianBlock { count: gs.len(), arrays }
    }

    fn linear(&mut self, l: &Linear<f32>) -> LinearEntry {
        LinearEntry {
            in_dim: l.in_dim,
            out_dim: l.out_dim,
            weight: self.push(l.weight.iter().copied()),
            bias: self.push(l.bias.iter().copied()),
        }
    }
}

fn pose_parts(p: &Se3Pose) -> ([f64; 4], [f64; 3]) {
    (p.quat_wxyz(), p.translation().into())
}

/// Rebuilds a pose without renormalizing, so stored bits survive.
fn pose_from_parts(q: [f64; 4], t: [f64; 3]) -> Se3Pose {
    let rot = UnitQuaternion::new_unchecked(Quaternion::new(q[0], q[1], q[2], q[3]));
    Se3Pose(Isometry3::from_parts(Translation3::new(t[0], t[1], t[2]), rot))
}

/// Writes the manifest at `path` and the blob next to it (`<stem>.bin`).
pub fn save_scene(scene: &SceneGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scene");
    let blob_name = format!("{stem}.bin");
    let mut blob = BlobWriter(Vec::new());

    let sky = SkyEntry {
        face_resolution: scene.sky.face_resolution,
        texels: blob.push(scene.sky.texels.iter().copied()),
    };
    let background = blob.gaussians(&scene.background);
    let actors = scene
        .actors
        .iter()
        .map(|a| ActorEntry {
            id: a.id.clone(),
            bbox_min: a.bbox_min,
            bbox_max: a.bbox_max,
            gaussians: blob.gaussians(&a.gaussians),
            trajectory: a
                .trajectory
                .iter()
                .map(|(&time_index, p)| {
                    let (rotation, translation) = pose_parts(p);
                    PoseEntry { time_index, rotation, translation }
                })
                .collect(),
        })
        .collect();
    let net = &scene.illumination;
    let illumination = IllumEntry {
        camera_ids: net.camera_ids.clone(),
        embedding_dim: net.embedding_dim(),
        embeddings: blob.push(net.embeddings.iter().copied()),
        layers: net.layers.iter().map(|l| blob.linear(l)).collect(),
        heads: net.heads.iter().map(|l| blob.linear(l)).collect(),
    };
    let cameras = scene
        .cameras
        .iter()
        .map(|c| {
            let (rotation, translation) = pose_parts(&c.pose);
            CameraEntry {
                camera_id: c.camera_id,
                time_index: c.time_index,
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                width: c.width,
                height: c.height,
                rotation,
                translation,
            }
        })
        .collect();
    let manifest = Manifest {
        format: SCENE_FORMAT.into(),
        version: SCENE_VERSION,
        blob: blob_name.clone(),
        dtype: DTYPE.into(),
        timeline: scene.timeline.clone(),
        sky,
        background,
        actors,
        illumination,
        cameras,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    let bytes: Vec<u8> = blob.0.iter().flat_map(|v| v.to_le_bytes()).collect();
    let blob_path = path.with_file_name(blob_name);
    std::fs::write(&blob_path, bytes).map_err(|e| Error::io(blob_path, e))?;
    Ok(())
}

struct BlobReader<'a> {
    data: Vec<f32>,
    path: &'a Path,
}

impl BlobReader<'_> {
    fn invalid(&self, msg: String) -> Error {
        Error::Parse { path: self.path.to_path_buf(), message: msg }
    }

    fn get(&self, name: &str, r: ArrayRef, expected: usize) -> Result<&[f32]> {
        if r.len != expected {
            return Err(self.invalid(format!("array `{name}`: expected {expected} values, found {}", r.len)));
        }
        r.offset
            .checked_add(r.len)
            .filter(|&end| end <= self.data.len())
            .map(|end| &self.data[r.offset..end])
            .ok_or_else(|| self.invalid(format!("array `{name}` runs past the end of the blob")))
    }

    fn gaussians(&self, block: &GaussianBlock) -> Result<Vec<GaussianPrimitive>> {
        let n = block.count;
        let a = &block.arrays;
        let mu = self.get("mu", a.mu, n * 3)?;
        let rot = self.get("rot", a.rot, n * 4)?;
        let log_scale = self.get("log_scale", a.log_scale, n * 3)?;
        let opacity = self.get("opacity_logit", a.opacity_logit, n)?;
        let albedo = self.get("albedo_logit", a.albedo_logit, n * 3)?;
        let rough = self.get("roughness_logit", a.roughness_logit, n)?;
        let metal = self.get("metallic_logit", a.metallic_logit, n)?;
        let normal = self.get("normal_raw", a.normal_raw, n * 3)?;
        let asg_rot = self.get("asg_rot", a.asg_rot, n * NUM_LOBES * 4)?;
        let asg_sharp = self.get("asg_log_sharp", a.asg_log_sharp, n * NUM_LOBES * 2)?;
        let asg_amp = self.get("asg_log_amp", a.asg_log_amp, n * NUM_LOBES * 3)?;
        let sh = self.get("sh_specular", a.sh_specular, n * 27)?;
        let arr = |s: &[f32], i: usize, k: usize| -> Vec<f32> { s[i * k..(i + 1) * k].to_vec() };
        Ok((0..n)
            .map(|i| {
                let mut g = Gaussian::<f32>::default();
                g.mu.copy_from_slice(&arr(mu, i, 3));
                g.rot.copy_from_slice(&arr(rot, i, 4));
                g.log_scale.copy_from_slice(&arr(log_scale, i, 3));
                g.opacity_logit = opacity[i];
                g.albedo_logit.copy_from_slice(&arr(albedo, i, 3));
                g.roughness_logit = rough[i];
                g.metallic_logit = metal[i];
                g.normal_raw.copy_from_slice(&arr(normal, i, 3));
                for (l, lobe) in g.asg.iter_mut().enumerate() {
                    let j = i * NUM_LOBES + l;
                    lobe.rot.copy_from_slice(&arr(asg_rot, j, 4));
                    lobe.log_sharp.copy_from_slice(&arr(asg_sharp, j, 2));
                    lobe.log_amp.copy_from_slice(&arr(asg_amp, j, 3));
                }
                for (k, c) in g.sh_specular.iter_mut().enumerate() {
                    c.copy_from_slice(&arr(sh, i * 9 + k, 3));
                }
                g
            })
            .collect())
    }

    fn linear(&self, what: &str, e: &LinearEntry) -> Result<Linear<f32>> {
        Ok(Linear {
            in_dim: e.in_dim,
            out_dim: e.out_dim,
            weight: self.get(&format!("{what}.weight"), e.weight, e.in_dim * e.out_dim)?.to_vec(),
            bias: self.get(&format!("{what}.bias"), e.bias, e.out_dim)?.to_vec(),
        })
    }
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), message };

    // check format and version before the strict parse so old files get a
    // version error rather than a field error
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
    match table.get("format").and_then(|v| v.as_str()) {
        Some(SCENE_FORMAT) => {}
        other => return Err(parse_err(format!("field `format`: expected \"{SCENE_FORMAT}\", found {other:?}"))),
    }
    let version = table
        .get("version")
        .and_then(|v| v.as_integer())
        .ok_or_else(|| parse_err("missing field `version`".into()))?;
    if version != SCENE_VERSION {
        return Err(Error::VersionMismatch { path: path.to_path_buf(), found: version, expected: SCENE_VERSION });
    }
    let m: Manifest = toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
    if m.dtype != DTYPE {
        return Err(parse_err(format!("field `dtype`: expected \"{DTYPE}\", found \"{}\"", m.dtype)));
    }

    let blob_path: PathBuf = path.with_file_name(&m.blob);
    let bytes = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(parse_err(format!("blob `{}` length is not a multiple of 4", m.blob)));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let blob = BlobReader { data, path };

    let r = m.sky.face_resolution;
    let sky = CubeMap { face_resolution: r, texels: blob.get("sky.texels", m.sky.texels, 6 * r * r * 3)?.to_vec() };
    let background = blob.gaussians(&m.background)?;
    let actors = m
        .actors
        .iter()
        .map(|a| {
            Ok(RigidActor {
                id: a.id.clone(),
                gaussians: blob.gaussians(&a.gaussians)?,
                trajectory: a
                    .trajectory
                    .iter()
                    .map(|p| (p.time_index, pose_from_parts(p.rotation, p.translation)))
                    .collect(),
                bbox_min: a.bbox_min,
                bbox_max: a.bbox_max,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let il = &m.illumination;
    let illumination = GlobalIllumNet {
        camera_ids: il.camera_ids.clone(),
        embeddings: blob
            .get("illumination.embeddings", il.embeddings, il.camera_ids.len() * il.embedding_dim)?
            .to_vec(),
        layers: il
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| blob.linear(&format!("illumination.layers[{i}]"), l))
            .collect::<Result<_>>()?,
        heads: il
            .heads
            .iter()
            .enumerate()
            .map(|(i, l)| blob.linear(&format!("illumination.heads[{i}]"), l))
            .collect::<Result<_>>()?,
    };
    let cameras = m
        .cameras
        .iter()
        .map(|c| CameraModel {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            pose: pose_from_parts(c.rotation, c.translation),
            camera_id: c.camera_id,
            time_index: c.time_index,
        })
        .collect();
    let scene = SceneGraph { background, actors, sky, timeline: m.timeline, cameras, illumination };
    scene.validate()?;
    Ok(scene)
}
