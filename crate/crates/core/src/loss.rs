//! Image-space training losses with analytic pixel gradients.
//!
//! Images are interleaved RGB rows of `f64`; normal maps use the same
//! layout with one unit vector per pixel.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_rgb: f64,
    pub w_dssim: f64,
    /// Shared weight of the normal-prior and depth-normal terms.
    pub w_dn: f64,
    /// Sharpness of the depth-normal confidence weight.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w_rgb: 0.8, w_dssim: 0.2, w_dn: 0.05, gamma: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_rgb, self.w_dssim, self.w_dn, self.gamma];
        if all.iter().any(|v| !(*v >= 0.0)) || self.gamma == 0.0 {
            return Err(Error::InvalidScene(format!("loss weights must be non-negative with gamma > 0: {self:?}")));
        }
        Ok(())
    }
}

/// Component values of one frame's loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub rgb: f64,
    pub dssim: f64,
    pub normal: f64,
    pub depth_normal: f64,
}

impl LossTerms {
    pub fn total(&self, w: &LossWeights) -> f64 {
        total_loss(self, w)
    }
}

pub fn total_loss(t: &LossTerms, w: &LossWeights) -> f64 {
    w.w_rgb * t.rgb + w.w_dssim * t.dssim + w.w_dn * (t.depth_normal + t.normal)
}

fn check_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{what}: {} vs {} values", a.len(), b.len())));
    }
    Ok(())
}

/// Mean absolute error; subgradient zero where `pred == gt`.
pub fn loss_rgb(pred: &[f64], gt: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(pred, gt, "rgb loss")?;
    if pred.is_empty() {
        return Ok((0.0, vec![]));
    }
    let n = pred.len() as f64;
    let value = pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / n;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = p - g;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((value, grad))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with zero padding; the kernel is symmetric so
/// this operator is self-adjoint.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let xx = x as isize + j as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let yy = y as isize + j as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn plane(img: &[f64], c: usize, channels: usize) -> Vec<f64> {
    img.iter().skip(c).step_by(channels).copied().collect()
}

/// Mean SSIM over pixels and channels, and optionally d(mean SSIM)/d(pred).
fn ssim_impl(pred: &[f64], gt: &[f64], w: usize, h: usize, channels: usize, want_grad: bool) -> (f64, Vec<f64>) {
    let k = ssim_kernel();
    let n = (w * h * channels) as f64;
    let mut total = 0.0;
    let mut grad = if want_grad { vec![0.0; pred.len()] } else { vec![] };
    for c in 0..channels {
        let x = plane(pred, c, channels);
        let y = plane(gt, c, channels);
        let mx = blur(&x, w, h, &k);
        let my = blur(&y, w, h, &k);
        let exx = blur(&x.iter().map(|v| v * v).collect::<Vec<_>>(), w, h, &k);
        let eyy = blur(&y.iter().map(|v| v * v).collect::<Vec<_>>(), w, h, &k);
        let exy = blur(&x.iter().zip(&y).map(|(a, b)| a * b).collect::<Vec<_>>(), w, h, &k);
        let mut d_mx = vec![0.0; w * h];
        let mut d_exx = vec![0.0; w * h];
        let mut d_exy = vec![0.0; w * h];
        for i in 0..w * h {
            let a1 = 2.0 * mx[i] * my[i] + SSIM_C1;
            let a2 = 2.0 * (exy[i] - mx[i] * my[i]) + SSIM_C2;
            let b1 = mx[i] * mx[i] + my[i] * my[i] + SSIM_C1;
            let b2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let g = 1.0 / n;
                d_mx[i] = g * s * (2.0 * my[i] / a1 - 2.0 * my[i] / a2 - 2.0 * mx[i] / b1 + 2.0 * mx[i] / b2);
                d_exx[i] = -g * s / b2;
                d_exy[i] = g * 2.0 * s / a2;
            }
        }
        if want_grad {
            let bmx = blur(&d_mx, w, h, &k);
            let bxx = blur(&d_exx, w, h, &k);
            let bxy = blur(&d_exy, w, h, &k);
            for i in 0..w * h {
                grad[i * channels + c] = bmx[i] + 2.0 * x[i] * bxx[i] + y[i] * bxy[i];
            }
        }
    }
    (total / n, grad)
}

/// Mean SSIM of two interleaved images with `channels` channels.
pub fn ssim(pred: &[f64], gt: &[f64], w: usize, h: usize, channels: usize) -> Result<f64> {
    check_len(pred, gt, "ssim")?;
    if pred.len() != w * h * channels {
        return Err(Error::ShapeMismatch(format!("ssim: {} values for {w}x{h}x{channels}", pred.len())));
    }
    Ok(ssim_impl(pred, gt, w, h, channels, false).0)
}

/// `(1 - SSIM) / 2` on RGB images and its gradient with respect to `pred`.
pub fn loss_dssim(pred: &[f64], gt: &[f64], w: usize, h: usize) -> Result<(f64, Vec<f64>)> {
    check_len(pred, gt, "dssim loss")?;
    if pred.len() != w * h * 3 {
        return Err(Error::ShapeMismatch(format!("dssim loss: {} values for {w}x{h} RGB", pred.len())));
    }
    let (s, g) = ssim_impl(pred, gt, w, h, 3, true);
    Ok(((1.0 - s) / 2.0, g.into_iter().map(|v| -v / 2.0).collect()))
}

fn pixel(v: &[f64], i: usize) -> [f64; 3] {
    [v[3 * i], v[3 * i + 1], v[3 * i + 2]]
}

/// Per-pixel `|a - b|_1 + 1 - a.b` and its gradient in `a`.
fn normal_term(a: [f64; 3], b: [f64; 3]) -> (f64, [f64; 3]) {
    let mut v = 1.0;
    let mut g = [0.0; 3];
    for k in 0..3 {
        let d = a[k] - b[k];
        v += d.abs() - a[k] * b[k];
        g[k] = d.signum() * (d != 0.0) as i32 as f64 - b[k];
    }
    (v, g)
}

/// Normal-prior loss: mean over masked pixels of `|N̂ - N|_1 + 1 - N̂.N`.
pub fn loss_normal(rendered: &[f64], prior: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_len(rendered, prior, "normal loss")?;
    if rendered.len() != 3 * mask.len() {
        return Err(Error::ShapeMismatch(format!("normal loss: {} values, mask of {}", rendered.len(), mask.len())));
    }
    let m = mask.iter().filter(|&&b| b).count();
    let mut grad = vec![0.0; rendered.len()];
    if m == 0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for (i, _) in mask.iter().enumerate().filter(|(_, &b)| b) {
        let (v, g) = normal_term(pixel(rendered, i), pixel(prior, i));
        total += v;
        for k in 0..3 {
            grad[3 * i + k] = g[k] / m as f64;
        }
    }
    Ok((total / m as f64, grad))
}

/// Confidence weight of the depth-normal term; carries no gradient.
pub fn depth_normal_confidence(nd: [f64; 3], n: [f64; 3], gamma: f64) -> f64 {
    let dot = nd[0] * n[0] + nd[1] * n[1] + nd[2] * n[2];
    ((dot - 1.0) / gamma).exp()
}

/// Per-pixel confidence of every depth-derived normal against the prior.
pub fn depth_normal_confidences(depth_normals: &[f64], prior: &[f64], gamma: f64) -> Vec<f64> {
    (0..depth_normals.len().min(prior.len()) / 3)
        .map(|i| depth_normal_confidence(pixel(depth_normals, i), pixel(prior, i), gamma))
        .collect()
}

/// Depth-normal consistency: the normal loss reweighted per pixel by the
/// detached confidence between depth-derived and prior normals.
pub fn loss_depth_normal(depth_normals: &[f64], prior: &[f64], mask: &[bool], gamma: f64) -> Result<(f64, Vec<f64>)> {
    check_len(depth_normals, prior, "depth-normal loss")?;
    loss_depth_normal_weighted(depth_normals, prior, mask, &depth_normal_confidences(depth_normals, prior, gamma))
}

/// [`loss_depth_normal`] with the per-pixel confidences given. The loss is
/// linear in them, so holding them fixed makes the gradient exact.
pub fn loss_depth_normal_weighted(
    depth_normals: &[f64],
    prior: &[f64],
    mask: &[bool],
    confidence: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_len(depth_normals, prior, "depth-normal loss")?;
    if depth_normals.len() != 3 * mask.len() || confidence.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "depth-normal loss: {} values, mask of {}, {} confidences",
            depth_normals.len(),
            mask.len(),
            confidence.len()
        )));
    }
    let m = mask.iter().filter(|&&b| b).count();
    let mut grad = vec![0.0; depth_normals.len()];
    if m == 0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for (i, _) in mask.iter().enumerate().filter(|(_, &b)| b) {
        let w = confidence[i];
        let (v, g) = normal_term(pixel(depth_normals, i), pixel(prior, i));
        total += w * v;
        for k in 0..3 {
            grad[3 * i + k] = w * g[k] / m as f64;
        }
    }
    Ok((total / m as f64, grad))
}
