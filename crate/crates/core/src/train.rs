//! Training loop: sample a frame, render, score, backpropagate, step Adam.

use crate::adam::{AdamState, LearningRates};
use crate::error::{Error, Result};
use crate::loss::{depth_normal_confidences, loss_depth_normal_weighted, loss_dssim, loss_normal, loss_rgb, ssim, LossTerms, LossWeights};
use crate::metrics::psnr;
use crate::params::{flatten_grad, flatten_params, param_groups, unflatten_params};
use crate::raster::{depth_to_normals, depth_to_normals_backward, PixelGrads, RenderOutput, NORMAL_ALPHA_MIN};
use crate::render::{render, render_backward, RenderOptions, SceneGrad};
use crate::scene::{CameraModel, ParamGroup, SceneGraph};
use crate::shading::{ShadingConfig, SpecularMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A training target: an LDR image seen by `scene.cameras[camera]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub camera: usize,
    /// Interleaved RGB in `[0, 1]`.
    pub rgb: Vec<f64>,
    /// Camera-frame unit normals; zero vectors mark pixels without a prior.
    pub normal_prior: Option<Vec<f64>>,
}

/// Lighting-model variants used for ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    Full,
    NoSpecular,
    NoDiffuse,
    ShSpecular,
    NoBrdf,
}

impl Ablation {
    pub const ALL: [Ablation; 5] =
        [Ablation::Full, Ablation::NoSpecular, Ablation::NoDiffuse, Ablation::ShSpecular, Ablation::NoBrdf];

    pub fn shading(self) -> ShadingConfig {
        let specular = match self {
            Ablation::Full | Ablation::NoDiffuse => SpecularMode::Asg,
            Ablation::NoSpecular => SpecularMode::Off,
            Ablation::ShSpecular => SpecularMode::Sh,
            Ablation::NoBrdf => SpecularMode::AsgUnconstrained,
        };
        ShadingConfig { specular, diffuse: self != Ablation::NoDiffuse }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoSpecular => "no-specular",
            Ablation::NoDiffuse => "no-diffuse",
            Ablation::ShSpecular => "sh-specular",
            Ablation::NoBrdf => "no-brdf",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub learning_rates: LearningRates,
    pub ablation: Ablation,
    pub early_termination: bool,
    /// Held-out PSNR is logged every this many iterations and at the end.
    pub snapshot_every: usize,
    /// Frames whose index is a multiple of this are held out.
    pub holdout_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            seed: 0,
            weights: LossWeights::default(),
            learning_rates: LearningRates::default(),
            ablation: Ablation::Full,
            early_termination: true,
            snapshot_every: 100,
            holdout_every: 8,
        }
    }
}

impl TrainConfig {
    pub fn render_options(&self) -> RenderOptions {
        RenderOptions { shading: self.ablation.shading(), early_termination: self.early_termination }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub frame: usize,
    pub total: f64,
    pub rgb: f64,
    pub dssim: f64,
    pub normal: f64,
    pub depth_normal: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout_psnr: Option<f64>,
}

/// Indices of the training and held-out frames.
pub fn split_frames(count: usize, holdout_every: usize) -> (Vec<usize>, Vec<usize>) {
    if holdout_every == 0 {
        return ((0..count).collect(), vec![]);
    }
    (0..count).partition(|i| i % holdout_every != 0)
}

fn check_frame<'a>(scene: &'a SceneGraph, index: usize, frame: &Frame) -> Result<&'a CameraModel> {
    let cam = scene
        .cameras
        .get(frame.camera)
        .ok_or_else(|| Error::ShapeMismatch(format!("frame {index} refers to missing camera {}", frame.camera)))?;
    let n = 3 * cam.pixel_count();
    if frame.rgb.len() != n || frame.normal_prior.as_ref().is_some_and(|p| p.len() != n) {
        return Err(Error::ShapeMismatch(format!(
            "frame {index}: buffers do not match the {}x{} camera",
            cam.width, cam.height
        )));
    }
    Ok(cam)
}

/// Loss of one rendered frame and its per-pixel gradients.
pub fn frame_loss(
    out: &RenderOutput,
    frame: &Frame,
    cam: &CameraModel,
    weights: &LossWeights,
) -> Result<(LossTerms, PixelGrads)> {
    frame_loss_with_confidence(out, frame, cam, weights, None)
}

/// Depth-normal confidences of a rendered frame against its prior, or
/// `None` when the frame has no prior.
pub fn frame_confidence(out: &RenderOutput, frame: &Frame, cam: &CameraModel, gamma: f64) -> Option<Vec<f64>> {
    let prior = frame.normal_prior.as_ref()?;
    Some(depth_normal_confidences(&depth_to_normals(&out.depth, &out.alpha, cam), prior, gamma))
}

/// [`frame_loss`] with the depth-normal confidences optionally held at
/// given values instead of recomputed from `out`. The confidence carries no
/// gradient, so the returned gradient is exact for the frozen objective.
pub fn frame_loss_with_confidence(
    out: &RenderOutput,
    frame: &Frame,
    cam: &CameraModel,
    weights: &LossWeights,
    confidence: Option<&[f64]>,
) -> Result<(LossTerms, PixelGrads)> {
    let (w, h) = (out.width, out.height);
    let (l1, g1) = loss_rgb(&out.rgb, &frame.rgb)?;
    let (ds, gs) = loss_dssim(&out.rgb, &frame.rgb, w, h)?;
    let mut terms = LossTerms { rgb: l1, dssim: ds, ..Default::default() };
    let mut grads = PixelGrads {
        rgb: g1.iter().zip(&gs).map(|(a, b)| weights.w_rgb * a + weights.w_dssim * b).collect(),
        ..Default::default()
    };
    if let (Some(prior), true) = (&frame.normal_prior, weights.w_dn > 0.0) {
        let nonzero = |v: &[f64], i: usize| v[3 * i..3 * i + 3].iter().any(|&c| c != 0.0);
        let mask: Vec<bool> = (0..w * h)
            .map(|i| out.alpha[i] > NORMAL_ALPHA_MIN && nonzero(prior, i) && nonzero(&out.normal, i))
            .collect();
        let (ln, gn) = loss_normal(&out.normal, prior, &mask)?;
        let nd = depth_to_normals(&out.depth, &out.alpha, cam);
        let mask_d: Vec<bool> = (0..w * h).map(|i| nonzero(&nd, i) && nonzero(prior, i)).collect();
        let conf = match confidence {
            Some(c) => c.to_vec(),
            None => depth_normal_confidences(&nd, prior, weights.gamma),
        };
        let (ldn, gdn) = loss_depth_normal_weighted(&nd, prior, &mask_d, &conf)?;
        terms.normal = ln;
        terms.depth_normal = ldn;
        grads.normal = gn.into_iter().map(|g| weights.w_dn * g).collect();
        grads.depth = depth_to_normals_backward(&out.depth, &out.alpha, cam, &gdn)
            .into_iter()
            .map(|g| weights.w_dn * g)
            .collect();
    }
    Ok((terms, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// PSNR and SSIM of `scene` against each listed frame.
pub fn evaluate(scene: &SceneGraph, frames: &[Frame], indices: &[usize], opts: &RenderOptions) -> Result<Vec<FrameMetrics>> {
    indices
        .iter()
        .map(|&i| {
            let cam = check_frame(scene, i, &frames[i])?;
            let (out, _) = render(scene, cam, opts)?;
            Ok(FrameMetrics {
                frame: i,
                psnr: psnr(&out.rgb, &frames[i].rgb)?,
                ssim: ssim(&out.rgb, &frames[i].rgb, out.width, out.height, 3)?,
            })
        })
        .collect()
}

/// Mean PSNR in dB; an infinite entry makes the mean infinite.
pub fn mean_psnr(m: &[FrameMetrics]) -> f64 {
    m.iter().map(|f| f.psnr).sum::<f64>() / m.len().max(1) as f64
}

/// Optimizes `scene` in place. `log` receives one record per iteration.
pub fn train(
    scene: &mut SceneGraph,
    frames: &[Frame],
    config: &TrainConfig,
    log: &mut dyn FnMut(&LogRecord) -> Result<()>,
) -> Result<()> {
    config.weights.validate()?;
    for (i, f) in frames.iter().enumerate() {
        check_frame(scene, i, f)?;
    }
    let (train_idx, held_idx) = split_frames(frames.len(), config.holdout_every);
    if config.iterations == 0 {
        return Ok(());
    }
    if train_idx.is_empty() {
        return Err(Error::ShapeMismatch("no training frames".into()));
    }
    if config.weights.w_dn > 0.0 {
        if let Some(&i) = train_idx.iter().find(|&&i| frames[i].normal_prior.is_none()) {
            return Err(Error::MissingPrior(i));
        }
    }
    let opts = config.render_options();
    let groups = param_groups(scene);
    let mut params = flatten_params(scene);
    let mut adam = AdamState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut lr = vec![0.0; params.len()];
    let last = config.iterations - 1;

    for it in 0..config.iterations {
        let fi = train_idx[rng.gen_range(0..train_idx.len())];
        let frame = &frames[fi];
        let cam = &scene.cameras[frame.camera];
        let (out, cache) = render(scene, cam, &opts)?;
        let (terms, grads) = frame_loss(&out, frame, cam, &config.weights)?;
        let total = terms.total(&config.weights);
        if !total.is_finite() {
            return Err(Error::NonFinite { iteration: it, detail: format!("frame {fi}: {terms:?}") });
        }
        let mut grad = SceneGrad::zeros_like(scene);
        render_backward(scene, cam, &opts, &cache, &grads, &mut grad)?;
        let flat_grad = flatten_grad(&grad);
        if let Some(k) = flat_grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                iteration: it,
                detail: format!("gradient of {} is {}", crate::params::param_name(scene, k), flat_grad[k]),
            });
        }

        let progress = it as f64 / last.max(1) as f64;
        for (l, g) in lr.iter_mut().zip(&groups) {
            *l = config.learning_rates.rate(*g, progress);
        }
        adam.step(&mut params, &flat_grad, &lr)?;
        for (p, g) in params.iter_mut().zip(&groups) {
            if *g == ParamGroup::Sky && *p < 0.0 {
                *p = 0.0;
            }
        }
        unflatten_params(scene, &params)?;
        if scene.clamp_to_bounds() {
            params = flatten_params(scene);
        }

        let snapshot = it == last || (config.snapshot_every > 0 && (it + 1) % config.snapshot_every == 0);
        let heldout_psnr = match (snapshot, held_idx.first()) {
            (true, Some(&h)) => Some(evaluate(scene, frames, &[h], &opts)?[0].psnr),
            _ => None,
        };
        log(&LogRecord {
            iteration: it,
            frame: fi,
            total,
            rgb: terms.rgb,
            dssim: terms.dssim,
            normal: terms.normal,
            depth_normal: terms.depth_normal,
            heldout_psnr,
        })?;
    }
    Ok(())
}
