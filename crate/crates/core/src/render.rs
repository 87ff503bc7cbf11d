//! Scene-level rendering: resolve, shade, project, rasterize; and the
//! matching reverse pass onto every learnable scene tensor.

use crate::error::{Error, Result};
use crate::geom::{normalize_vjp, reinhard, Vec3};
use crate::illum::{GlobalIllumNet, IllumCache, ShEnv};
use crate::raster::{project_backward, project_gaussian, rasterize, rasterize_backward, PixelGrads, RasterCache, RenderOutput, Splat2D};
use crate::scene::{
    resolve_scene, transform_gradient_to_object, CameraModel, Gaussian, GaussianSource, SceneGraph, WorldGaussian,
};
use crate::shading::{shade_gaussian, shading_backward, ShadeCache, ShadingConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::hash::Hasher;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    pub shading: ShadingConfig,
    /// Stop compositing a pixel once its transmittance is negligible.
    pub early_termination: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { shading: ShadingConfig::default(), early_termination: true }
    }
}

impl RenderOptions {
    /// Reference setting used for ground-truth images.
    pub fn fine() -> Self {
        RenderOptions { early_termination: false, ..Default::default() }
    }
}

struct Visible {
    world_index: usize,
    shade: ShadeCache,
}

/// Everything the reverse pass needs from one forward render.
pub struct RenderCache {
    fingerprint: u64,
    world: Vec<WorldGaussian>,
    t_norm: f64,
    env: ShEnv,
    illum: IllumCache,
    visible: Vec<Visible>,
    splats: Vec<Splat2D>,
    sky_hdr: Vec<Vec3>,
    sky_ldr: Vec<Vec3>,
    raster: RasterCache,
}

impl RenderCache {
    pub fn splats(&self) -> &[Splat2D] {
        &self.splats
    }

    pub fn env(&self) -> &ShEnv {
        &self.env
    }
}

fn scene_fingerprint(scene: &SceneGraph, cam: &CameraModel, opts: &RenderOptions) -> u64 {
    let mut h = std::hash::DefaultHasher::new();
    let f32s = |h: &mut std::hash::DefaultHasher, v: &[f32]| v.iter().for_each(|x| h.write_u32(x.to_bits()));
    for g in &scene.background {
        f32s(&mut h, &g.to_flat());
    }
    for a in &scene.actors {
        for g in &a.gaussians {
            f32s(&mut h, &g.to_flat());
        }
        for (t, p) in &a.trajectory {
            h.write_usize(*t);
            p.quat_wxyz().iter().chain(p.translation().iter()).for_each(|v| h.write_u64(v.to_bits()));
        }
    }
    f32s(&mut h, &scene.sky.texels);
    for t in scene.illumination.tensors() {
        f32s(&mut h, t);
    }
    for v in [cam.fx, cam.fy, cam.cx, cam.cy] {
        h.write_u64(v.to_bits());
    }
    cam.pose.quat_wxyz().iter().chain(cam.pose.translation().iter()).for_each(|v| h.write_u64(v.to_bits()));
    h.write_u32(cam.width);
    h.write_u32(cam.height);
    h.write_u32(cam.camera_id);
    h.write_usize(cam.time_index);
    h.write(format!("{opts:?}").as_bytes());
    h.finish()
}

/// Renders `scene` through `cam`.
pub fn render(scene: &SceneGraph, cam: &CameraModel, opts: &RenderOptions) -> Result<(RenderOutput, RenderCache)> {
    let world = resolve_scene(scene, cam.time_index)?;
    let t_norm = scene.normalized_time(cam.time_index)?;
    let (env, illum) = scene.illumination.predict_sh(t_norm, cam.camera_id)?;
    let center = cam.center();
    let view = cam.view_rotation();

    let shaded: Vec<Option<(Splat2D, Visible)>> = world
        .par_iter()
        .enumerate()
        .map(|(i, wg)| {
            let act = wg.params.activate();
            let proj = project_gaussian(&act, cam)?;
            let (out, shade) = shade_gaussian(&wg.params, &center, &env, &opts.shading);
            let splat = Splat2D {
                mean2d: proj.mean2d,
                conic: proj.conic,
                depth: proj.depth,
                color: out.color,
                albedo: out.albedo,
                diffuse: out.diffuse,
                specular: out.specular,
                normal: view * act.normal,
                opacity: act.opacity,
                source_index: i,
                pixel_bounds: proj.pixel_bounds,
            };
            Some((splat, Visible { world_index: i, shade }))
        })
        .collect();
    let (splats, visible): (Vec<_>, Vec<_>) = shaded.into_iter().flatten().unzip();

    let (w, h) = (cam.width as usize, cam.height as usize);
    let sky_hdr: Vec<Vec3> = (0..w * h)
        .map(|i| scene.sky.sample(&cam.ray_direction(i % w, i / w)))
        .collect();
    let sky_ldr: Vec<Vec3> = sky_hdr.iter().map(reinhard).collect();
    let (out, raster) = rasterize(&splats, &sky_ldr, w, h, opts.early_termination);
    let cache = RenderCache {
        fingerprint: scene_fingerprint(scene, cam, opts),
        world,
        t_norm,
        env,
        illum,
        visible,
        splats,
        sky_hdr,
        sky_ldr,
        raster,
    };
    Ok((out, cache))
}

/// Gradient buffers mirroring every learnable tensor of a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGrad {
    pub background: Vec<Gaussian<f64>>,
    pub actors: Vec<Vec<Gaussian<f64>>>,
    pub sky: Vec<f64>,
    pub illumination: GlobalIllumNet<f64>,
}

impl SceneGrad {
    pub fn zeros_like(scene: &SceneGraph) -> Self {
        SceneGrad {
            background: vec![Gaussian::default(); scene.background.len()],
            actors: scene.actors.iter().map(|a| vec![Gaussian::default(); a.gaussians.len()]).collect(),
            sky: vec![0.0; scene.sky.texels.len()],
            illumination: scene.illumination.zeros_like(),
        }
    }

    fn gaussian_mut(&mut self, source: GaussianSource) -> &mut Gaussian<f64> {
        match source {
            GaussianSource::Background(i) => &mut self.background[i],
            GaussianSource::Actor { actor, index } => &mut self.actors[actor][index],
        }
    }

    pub fn gaussian(&self, source: GaussianSource) -> &Gaussian<f64> {
        match source {
            GaussianSource::Background(i) => &self.background[i],
            GaussianSource::Actor { actor, index } => &self.actors[actor][index],
        }
    }
}

fn add_into(acc: &mut Gaussian<f64>, d: &Gaussian<f64>) {
    let mut f = acc.to_flat();
    for (a, b) in f.iter_mut().zip(d.to_flat()) {
        *a += b;
    }
    *acc = Gaussian::from_flat(&f);
}

/// Reverse pass of [`render`]: accumulates the gradient of the scalar whose
/// per-pixel gradients are `grads` into `out`.
pub fn render_backward(
    scene: &SceneGraph,
    cam: &CameraModel,
    opts: &RenderOptions,
    cache: &RenderCache,
    grads: &PixelGrads,
    out: &mut SceneGrad,
) -> Result<()> {
    if scene_fingerprint(scene, cam, opts) != cache.fingerprint {
        return Err(Error::StaleCache("scene or camera changed since the forward render"));
    }
    let (splat_grads, d_sky) = rasterize_backward(&cache.splats, &cache.sky_ldr, &cache.raster, grads)?;
    let center = cam.center();
    let view = cam.view_rotation();

    let per_gaussian: Vec<(Gaussian<f64>, ShEnv)> = cache
        .visible
        .par_iter()
        .zip(&splat_grads)
        .map(|(v, sg)| {
            let wg = &cache.world[v.world_index];
            let (mut dg, d_env) =
                shading_backward(&v.shade, &wg.params, &center, &cache.env, &opts.shading, &sg.color)?;
            let act = wg.params.activate();
            let pg = project_backward(&act, cam, sg.mean2d, sg.conic, sg.depth);
            for k in 0..3 {
                dg.mu[k] += pg.mu[k];
                dg.log_scale[k] += pg.log_scale[k];
                dg.normal_raw[k] += normalize_vjp(&act.normal_raw, &(view.transpose() * sg.normal))[k];
            }
            for k in 0..4 {
                dg.rot[k] += pg.rot[k];
            }
            dg.opacity_logit += sg.opacity * act.opacity * (1.0 - act.opacity);
            Ok((dg, d_env))
        })
        .collect::<Result<_>>()?;

    let mut d_env = ShEnv::default();
    for (v, (dg, de)) in cache.visible.iter().zip(&per_gaussian) {
        let wg = &cache.world[v.world_index];
        let local = match wg.source {
            GaussianSource::Background(_) => *dg,
            GaussianSource::Actor { .. } => transform_gradient_to_object(dg, &wg.frame),
        };
        add_into(out.gaussian_mut(wg.source), &local);
        for j in 0..d_env.coeffs.len() {
            d_env.coeffs[j] += de.coeffs[j];
        }
    }
    scene
        .illumination
        .backward(&cache.illum, cache.t_norm, cam.camera_id, &d_env, &mut out.illumination)?;

    let w = cam.width as usize;
    for (i, g) in d_sky.iter().enumerate() {
        if *g == Vec3::zeros() {
            continue;
        }
        // d/ds s/(1+s) = 1/(1+s)^2
        let s = cache.sky_hdr[i];
        let d_hdr = g.component_div(&s.map(|v| (1.0 + v) * (1.0 + v)));
        for (offset, weight) in scene.sky.bilinear(&cam.ray_direction(i % w, i / w)) {
            for ch in 0..3 {
                out.sky[offset + ch] += weight * d_hdr[ch];
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::CubeMap;

    #[test]
    fn empty_scene_renders_sky_only() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let cam = CameraModel::look_at(Vec3::new(0.0, -5.0, 1.0), Vec3::zeros(), Vec3::z(), 16, 12, 60.0, 0, 0);
        let scene = SceneGraph {
            background: vec![],
            actors: vec![],
            sky: CubeMap::constant(4, Vec3::new(1.0, 3.0, 0.0)),
            timeline: vec![0.0],
            cameras: vec![cam.clone()],
            illumination: GlobalIllumNet::new(&[0], &mut rng),
        };
        let (out, _) = render(&scene, &cam, &RenderOptions::default()).unwrap();
        for y in 0..12 {
            for x in 0..16 {
                assert!((out.pixel_rgb(x, y) - Vec3::new(0.5, 0.75, 0.0)).norm() < 1e-7);
            }
        }
        assert!(out.alpha.iter().all(|&a| a == 0.0));
    }
}
