//! Flat views over every learnable scalar of a scene.
//!
//! Order: background Gaussians, actor Gaussians (actor order, then index),
//! sky texels, illumination tensors. Gradients flatten in the same order.

use crate::error::{Error, Result};
use crate::render::SceneGrad;
use crate::scene::{gaussian_param_groups, Gaussian, ParamGroup, SceneGraph, PARAMS_PER_GAUSSIAN};

pub fn param_count(scene: &SceneGraph) -> usize {
    scene.gaussian_count() * PARAMS_PER_GAUSSIAN
        + scene.sky.texels.len()
        + scene.illumination.tensors().iter().map(|t| t.len()).sum::<usize>()
}

pub fn flatten_params(scene: &SceneGraph) -> Vec<f32> {
    let mut out = Vec::with_capacity(param_count(scene));
    for g in scene.background.iter().chain(scene.actors.iter().flat_map(|a| &a.gaussians)) {
        out.extend_from_slice(&g.to_flat());
    }
    out.extend_from_slice(&scene.sky.texels);
    for t in scene.illumination.tensors() {
        out.extend_from_slice(t);
    }
    out
}

pub fn flatten_grad(grad: &SceneGrad) -> Vec<f64> {
    let mut out = Vec::new();
    for g in grad.background.iter().chain(grad.actors.iter().flatten()) {
        out.extend_from_slice(&g.to_flat());
    }
    out.extend_from_slice(&grad.sky);
    for t in grad.illumination.tensors() {
        out.extend_from_slice(t);
    }
    out
}

/// Writes `flat` back into `scene`; the inverse of [`flatten_params`].
pub fn unflatten_params(scene: &mut SceneGraph, flat: &[f32]) -> Result<()> {
    let expected = param_count(scene);
    if flat.len() != expected {
        return Err(Error::ShapeMismatch(format!("expected {expected} parameters, got {}", flat.len())));
    }
    let mut chunks = flat.chunks_exact(PARAMS_PER_GAUSSIAN);
    for g in scene.background.iter_mut().chain(scene.actors.iter_mut().flat_map(|a| &mut a.gaussians)) {
        let c: &[f32; PARAMS_PER_GAUSSIAN] = chunks.next().expect("length checked").try_into().expect("chunk size");
        *g = Gaussian::from_flat(c);
    }
    let mut rest = &flat[scene.gaussian_count() * PARAMS_PER_GAUSSIAN..];
    let n = scene.sky.texels.len();
    scene.sky.texels.copy_from_slice(&rest[..n]);
    rest = &rest[n..];
    for t in scene.illumination.tensors_mut() {
        let n = t.len();
        t.copy_from_slice(&rest[..n]);
        rest = &rest[n..];
    }
    Ok(())
}

/// Optimizer group of every flat index.
pub fn param_groups(scene: &SceneGraph) -> Vec<ParamGroup> {
    let per = gaussian_param_groups();
    let mut out = Vec::with_capacity(param_count(scene));
    for _ in 0..scene.gaussian_count() {
        out.extend_from_slice(&per);
    }
    out.resize(out.len() + scene.sky.texels.len(), ParamGroup::Sky);
    let illum: usize = scene.illumination.tensors().iter().map(|t| t.len()).sum();
    out.resize(out.len() + illum, ParamGroup::Illumination);
    out
}

/// Human-readable location of a flat index, for diagnostics.
pub fn param_name(scene: &SceneGraph, index: usize) -> String {
    let per = PARAMS_PER_GAUSSIAN;
    let n_bg = scene.background.len();
    let group = |i: usize| gaussian_param_groups()[i % per];
    if index < n_bg * per {
        return format!("background[{}].{:?}[{}]", index / per, group(index), index % per);
    }
    let mut i = index - n_bg * per;
    for a in &scene.actors {
        if i < a.gaussians.len() * per {
            return format!("actor {}[{}].{:?}[{}]", a.id, i / per, group(i), i % per);
        }
        i -= a.gaussians.len() * per;
    }
    if i < scene.sky.texels.len() {
        return format!("sky[{i}]");
    }
    i -= scene.sky.texels.len();
    for (k, t) in scene.illumination.tensors().iter().enumerate() {
        if i < t.len() {
            return format!("illumination.tensor{k}[{i}]");
        }
        i -= t.len();
    }
    format!("out of range ({index})")
}
