//! Finite-difference check of the analytic scene gradient.
//!
//! The objective is any scalar of a rendered frame that also reports its
//! per-pixel gradients: a fixed random linear probe of every output map, or
//! the training loss against a target frame.

use crate::error::Result;
use crate::params::{flatten_grad, flatten_params, param_groups, param_name, unflatten_params};
use crate::raster::{PixelGrads, RenderOutput};
use crate::render::{render, render_backward, RenderOptions, SceneGrad};
use crate::scene::{CameraModel, ParamGroup, SceneGraph};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Scalar objective of one rendered frame and its per-pixel gradients.
pub type Objective<'a> = dyn Fn(&RenderOutput, &CameraModel) -> Result<(f64, PixelGrads)> + Sync + 'a;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub index: usize,
    pub name: String,
    pub group: ParamGroup,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    /// Candidates rejected because the objective is not smooth around them.
    pub skipped: usize,
    pub max_rel_error: f64,
}

/// Relative errors are measured against at least this magnitude.
pub const GRADCHECK_FLOOR: f64 = 1e-4;
/// Relative step in parameter space.
pub const GRADCHECK_STEP: f32 = 1e-5;

/// A fixed random linear functional of every output map.
pub fn linear_probe(width: usize, height: usize, seed: u64) -> impl Fn(&RenderOutput, &CameraModel) -> Result<(f64, PixelGrads)> + Sync {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = |n: usize, scale: f64| (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let n = width * height;
    let grads = PixelGrads { rgb: field(3 * n, 1.0), normal: field(3 * n, 0.5), depth: field(n, 0.1), alpha: field(n, 0.5) };
    move |out: &RenderOutput, _: &CameraModel| {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let v = dot(&grads.rgb, &out.rgb)
            + dot(&grads.normal, &out.normal)
            + dot(&grads.depth, &out.depth)
            + dot(&grads.alpha, &out.alpha);
        Ok((v, grads.clone()))
    }
}

/// Compares analytic and central-difference gradients on up to
/// `per_group` random parameters of every parameter group.
///
/// A candidate is kept only if central differences with step `h` and `h/2`
/// agree, which rejects parameters whose perturbation crosses a kink or
/// step of the objective (support cutoff, opacity clamp, L1 sign change).
pub fn gradcheck(
    scene: &SceneGraph,
    cam: &CameraModel,
    opts: &RenderOptions,
    objective: &Objective,
    per_group: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (out, cache) = render(scene, cam, opts)?;
    let (_, pixel_grads) = objective(&out, cam)?;
    let mut grad = SceneGrad::zeros_like(scene);
    render_backward(scene, cam, opts, &cache, &pixel_grads, &mut grad)?;
    let analytic = flatten_grad(&grad);

    let groups = param_groups(scene);
    let mut order: Vec<ParamGroup> = Vec::new();
    for g in &groups {
        if !order.contains(g) {
            order.push(*g);
        }
    }

    let base = flatten_params(scene);
    let mut work = scene.clone();
    let mut eval = |i: usize, v: f32| -> Result<f64> {
        let mut flat = base.clone();
        flat[i] = v;
        unflatten_params(&mut work, &flat)?;
        Ok(objective(&render(&work, cam, opts)?.0, cam)?.0)
    };
    let mut central = |i: usize, h: f32| -> Result<f64> {
        let (hi, lo) = (base[i] + h, base[i] - h);
        Ok((eval(i, hi)? - eval(i, lo)?) / (hi as f64 - lo as f64))
    };

    let mut entries = Vec::new();
    let mut skipped = 0;
    for g in order {
        // parameters the frame actually depends on
        let mut live: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == g && analytic[i] != 0.0).collect();
        live.shuffle(&mut rng);
        let mut kept = 0;
        for i in live {
            if kept == per_group {
                break;
            }
            let h = GRADCHECK_STEP * base[i].abs().max(1.0);
            let n1 = central(i, h)?;
            let n2 = central(i, 0.5 * h)?;
            let scale = n1.abs().max(n2.abs()).max(GRADCHECK_FLOOR);
            if (n1 - n2).abs() > 1e-2 * scale {
                skipped += 1;
                continue;
            }
            // Richardson extrapolation cancels the leading truncation error
            let numeric = (4.0 * n2 - n1) / 3.0;
            let a = analytic[i];
            let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            entries.push(GradCheckEntry { index: i, name: param_name(scene, i), group: g, analytic: a, numeric, rel_error });
            kept += 1;
        }
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { entries, skipped, max_rel_error })
}
