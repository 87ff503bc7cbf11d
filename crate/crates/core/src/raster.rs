//! Tile-based splatting.
//!
//! Gaussians are projected with the local affine approximation of the
//! pinhole map, binned into 16x16 pixel tiles and composited front to back
//! in `(depth, source_index)` order. Every splat has compact support: a pixel
//! only sees it when its Mahalanobis distance squared is at most 9, which is
//! also the extent used for tile binning, so per-tile and per-pixel
//! traversal visit the same splats in the same order.

use crate::error::{Error, Result};
use crate::geom::{quat_to_mat_vjp, normalize_vjp, Mat3, Vec3};
use crate::scene::{Activated, CameraModel};
use nalgebra::{Matrix2, Matrix2x3};
use rayon::prelude::*;
use std::hash::{Hash, Hasher};

pub const TILE_SIZE: usize = 16;
pub const NEAR_PLANE: f64 = 0.01;
/// Added to the diagonal of every screen covariance (pixels squared).
pub const LOW_PASS: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.99;
/// Compositing stops once transmittance falls below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Squared Mahalanobis radius of a splat's support (3 sigma).
pub const SUPPORT_MAHALANOBIS2: f64 = 9.0;

/// Screen-space footprint of a projected Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub mean2d: [f64; 2],
    /// `[xx, xy, yy]`, low-pass included.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, `[a, b, c]`.
    pub conic: [f64; 3],
    pub depth: f64,
    /// Inclusive pixel bounds `[x0, x1, y0, y1]` of the 3 sigma extent.
    pub pixel_bounds: [usize; 4],
}

/// A shaded splat ready for compositing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: [f64; 2],
    pub conic: [f64; 3],
    pub depth: f64,
    /// Tone-mapped color.
    pub color: Vec3,
    pub albedo: Vec3,
    /// HDR diffuse and specular radiance.
    pub diffuse: Vec3,
    pub specular: Vec3,
    /// Unit normal in camera frame.
    pub normal: Vec3,
    pub opacity: f64,
    pub source_index: usize,
    pub pixel_bounds: [usize; 4],
}

impl Splat2D {
    /// `(alpha, unclamped, gaussian)` at pixel `(x, y)`, or `None` outside
    /// the support.
    fn alpha_at(&self, x: usize, y: usize) -> Option<(f64, bool, f64)> {
        let dx = x as f64 + 0.5 - self.mean2d[0];
        let dy = y as f64 + 0.5 - self.mean2d[1];
        let [a, b, c] = self.conic;
        let m2 = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
        if !(m2 <= SUPPORT_MAHALANOBIS2) {
            return None;
        }
        let gauss = (-0.5 * m2).exp();
        let alpha = self.opacity * gauss;
        if alpha > ALPHA_MAX {
            Some((ALPHA_MAX, false, gauss))
        } else {
            Some((alpha, true, gauss))
        }
    }

    fn hash_into(&self, h: &mut impl Hasher) {
        let bits = |v: &[f64], h: &mut dyn Hasher| v.iter().for_each(|x| h.write_u64(x.to_bits()));
        bits(&self.mean2d, h);
        bits(&self.conic, h);
        bits(&[self.depth, self.opacity], h);
        bits(self.color.as_slice(), h);
        bits(self.normal.as_slice(), h);
        self.source_index.hash(h);
    }
}

fn pinhole_jacobian(cam: &CameraModel, t: &Vec3) -> Matrix2x3<f64> {
    let z2 = t.z * t.z;
    Matrix2x3::new(cam.fx / t.z, 0.0, -cam.fx * t.x / z2, 0.0, cam.fy / t.z, -cam.fy * t.y / z2)
}

/// Projects an activated world-frame Gaussian. `None` when it is behind the
/// near plane or its 3 sigma extent misses the image.
pub fn project_gaussian(g: &Activated, cam: &CameraModel) -> Option<Projected> {
    let w = cam.view_rotation();
    let t = w * (g.mu - cam.center());
    if !(t.z > NEAR_PLANE) {
        return None;
    }
    let mean2d = [cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy];
    let tm = pinhole_jacobian(cam, &t) * w;
    let cov = tm * g.covariance() * tm.transpose();
    let (a, b, c) = (cov[(0, 0)] + LOW_PASS, cov[(0, 1)], cov[(1, 1)] + LOW_PASS);
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = 3.0 * lambda_max.sqrt();
    // pixel centers sit at integer + 0.5; one pixel of slack absorbs rounding
    let range = |m: f64, extent: u32| -> Option<(usize, usize)> {
        let lo = (m - radius - 0.5).floor() - 1.0;
        let hi = (m + radius - 0.5).ceil() + 1.0;
        if hi < 0.0 || lo > extent as f64 - 1.0 || !lo.is_finite() || !hi.is_finite() {
            return None;
        }
        Some((lo.max(0.0) as usize, hi.min(extent as f64 - 1.0) as usize))
    };
    let (x0, x1) = range(mean2d[0], cam.width)?;
    let (y0, y1) = range(mean2d[1], cam.height)?;
    Some(Projected {
        mean2d,
        cov2d: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: t.z,
        pixel_bounds: [x0, x1, y0, y1],
    })
}

/// Gradients of a projection's inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProjectionGrad {
    pub mu: Vec3,
    pub rot: [f64; 4],
    pub log_scale: Vec3,
}

/// Reverse of [`project_gaussian`] for upstream gradients on the mean, the
/// conic `[a, b, c]` and the depth.
pub fn project_backward(
    g: &Activated,
    cam: &CameraModel,
    d_mean: [f64; 2],
    d_conic: [f64; 3],
    d_depth: f64,
) -> ProjectionGrad {
    let w = cam.view_rotation();
    let t = w * (g.mu - cam.center());
    let j = pinhole_jacobian(cam, &t);
    let tm = j * w;
    let m = g.rot * Mat3::from_diagonal(&g.scale);
    let sigma = m * m.transpose();
    let cov = tm * sigma * tm.transpose();
    let cov = Matrix2::new(cov[(0, 0)] + LOW_PASS, cov[(0, 1)], cov[(1, 0)], cov[(1, 1)] + LOW_PASS);
    let k = cov.try_inverse().unwrap_or_else(Matrix2::zeros);
    let g_k = Matrix2::new(d_conic[0], 0.5 * d_conic[1], 0.5 * d_conic[1], d_conic[2]);
    let g2 = -(k * g_k * k);

    let d_sigma = tm.transpose() * g2 * tm;
    let d_tm = 2.0 * g2 * tm * sigma;
    let d_j = d_tm * w.transpose();

    let (x, y, z) = (t.x, t.y, t.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let z2 = z * z;
    let z3 = z2 * z;
    let mut d_t = Vec3::new(
        d_j[(0, 2)] * (-fx / z2),
        d_j[(1, 2)] * (-fy / z2),
        d_j[(0, 0)] * (-fx / z2)
            + d_j[(0, 2)] * (2.0 * fx * x / z3)
            + d_j[(1, 1)] * (-fy / z2)
            + d_j[(1, 2)] * (2.0 * fy * y / z3),
    );
    d_t.x += d_mean[0] * fx / z;
    d_t.y += d_mean[1] * fy / z;
    d_t.z += -d_mean[0] * fx * x / z2 - d_mean[1] * fy * y / z2 + d_depth;

    let d_m = 2.0 * d_sigma * m;
    let mut d_r = Mat3::zeros();
    let mut d_scale = Vec3::zeros();
    for col in 0..3 {
        d_r.set_column(col, &(d_m.column(col) * g.scale[col]));
        d_scale[col] = g.rot.column(col).dot(&d_m.column(col)) * g.scale[col];
    }
    ProjectionGrad { mu: w.transpose() * d_t, rot: quat_to_mat_vjp(g.rot_raw, &d_r), log_scale: d_scale }
}

/// Composited maps. Buffers are row-major; 3-channel maps interleave RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f64>,
    /// Camera-frame unit normals, zero where nothing was composited.
    pub normal: Vec<f64>,
    /// Alpha-weighted mean camera depth, zero where alpha is zero.
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
    pub albedo: Vec<f64>,
    pub diffuse: Vec<f64>,
    pub specular: Vec<f64>,
    /// Transmittance left behind the last composited splat.
    pub transmittance: Vec<f64>,
}

impl RenderOutput {
    fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        RenderOutput {
            width,
            height,
            rgb: vec![0.0; 3 * n],
            normal: vec![0.0; 3 * n],
            depth: vec![0.0; n],
            alpha: vec![0.0; n],
            albedo: vec![0.0; 3 * n],
            diffuse: vec![0.0; 3 * n],
            specular: vec![0.0; 3 * n],
            transmittance: vec![0.0; n],
        }
    }

    pub fn pixel_rgb(&self, x: usize, y: usize) -> Vec3 {
        let o = 3 * (y * self.width + x);
        Vec3::new(self.rgb[o], self.rgb[o + 1], self.rgb[o + 2])
    }
}

/// Per-tile compositing order and the state needed to replay it.
#[derive(Clone, Debug)]
pub struct RasterCache {
    fingerprint: u64,
    width: usize,
    height: usize,
    /// Splat indices per tile, front to back.
    tiles: Vec<Vec<u32>>,
    /// Per pixel: number of tile-list entries consumed.
    consumed: Vec<u32>,
}

impl RasterCache {
    pub fn tile_lists(&self) -> &[Vec<u32>] {
        &self.tiles
    }
}

fn fingerprint(splats: &[Splat2D], sky: &[Vec3]) -> u64 {
    let mut h = std::hash::DefaultHasher::new();
    splats.len().hash(&mut h);
    for s in splats {
        s.hash_into(&mut h);
    }
    for v in sky {
        v.iter().for_each(|x| h.write_u64(x.to_bits()));
    }
    h.finish()
}

/// Splat order: depth ascending, ties broken by source index.
pub fn depth_order(splats: &[Splat2D]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&splats[a as usize], &splats[b as usize]);
        sa.depth.total_cmp(&sb.depth).then(sa.source_index.cmp(&sb.source_index))
    });
    order
}

fn tile_grid(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(TILE_SIZE), height.div_ceil(TILE_SIZE))
}

fn bin_tiles(splats: &[Splat2D], width: usize, height: usize) -> Vec<Vec<u32>> {
    let (tx, ty) = tile_grid(width, height);
    let mut tiles = vec![Vec::new(); tx * ty];
    for i in depth_order(splats) {
        let [x0, x1, y0, y1] = splats[i as usize].pixel_bounds;
        for row in y0 / TILE_SIZE..=(y1 / TILE_SIZE).min(ty - 1) {
            for col in x0 / TILE_SIZE..=(x1 / TILE_SIZE).min(tx - 1) {
                tiles[row * tx + col].push(i);
            }
        }
    }
    tiles
}

#[derive(Clone, Copy, Default)]
struct PixelOut {
    rgb: Vec3,
    albedo: Vec3,
    diffuse: Vec3,
    specular: Vec3,
    normal_sum: Vec3,
    depth_sum: f64,
    weight: f64,
    t: f64,
    consumed: u32,
}

fn tile_pixels(tile: usize, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> {
    let (tx, _) = tile_grid(width, height);
    let (x0, y0) = ((tile % tx) * TILE_SIZE, (tile / tx) * TILE_SIZE);
    let (x1, y1) = ((x0 + TILE_SIZE).min(width), (y0 + TILE_SIZE).min(height));
    (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
}

/// Composites `splats` over the per-pixel background `sky` (tone-mapped).
pub fn rasterize(
    splats: &[Splat2D],
    sky: &[Vec3],
    width: usize,
    height: usize,
    early_termination: bool,
) -> (RenderOutput, RasterCache) {
    assert_eq!(sky.len(), width * height, "one sky color per pixel");
    let tiles = bin_tiles(splats, width, height);
    let per_tile: Vec<Vec<PixelOut>> = (0..tiles.len())
        .into_par_iter()
        .map(|ti| {
            let list = &tiles[ti];
            tile_pixels(ti, width, height)
                .map(|(x, y)| {
                    let mut p = PixelOut { t: 1.0, ..Default::default() };
                    for (k, &si) in list.iter().enumerate() {
                        let s = &splats[si as usize];
                        let Some((alpha, _, _)) = s.alpha_at(x, y) else { continue };
                        let w = alpha * p.t;
                        p.rgb += s.color * w;
                        p.albedo += s.albedo * w;
                        p.diffuse += s.diffuse * w;
                        p.specular += s.specular * w;
                        p.normal_sum += s.normal * w;
                        p.depth_sum += s.depth * w;
                        p.weight += w;
                        p.t *= 1.0 - alpha;
                        p.consumed = k as u32 + 1;
                        if early_termination && p.t < TRANSMITTANCE_MIN {
                            break;
                        }
                    }
                    p
                })
                .collect()
        })
        .collect();

    let mut out = RenderOutput::new(width, height);
    let mut consumed = vec![0u32; width * height];
    for (ti, pixels) in per_tile.iter().enumerate() {
        for ((x, y), p) in tile_pixels(ti, width, height).zip(pixels) {
            let i = y * width + x;
            let put = |buf: &mut Vec<f64>, v: &Vec3| buf[3 * i..3 * i + 3].copy_from_slice(v.as_slice());
            put(&mut out.rgb, &(p.rgb + sky[i] * p.t));
            put(&mut out.albedo, &p.albedo);
            put(&mut out.diffuse, &p.diffuse);
            put(&mut out.specular, &p.specular);
            let norm = p.normal_sum.norm();
            if norm > 0.0 {
                put(&mut out.normal, &(p.normal_sum / norm));
            }
            if p.weight > 0.0 {
                out.depth[i] = p.depth_sum / p.weight;
            }
            out.alpha[i] = p.weight;
            out.transmittance[i] = p.t;
            consumed[i] = p.consumed;
        }
    }
    let cache = RasterCache {
        fingerprint: fingerprint(splats, sky),
        width,
        height,
        tiles,
        consumed,
    };
    (out, cache)
}

/// Upstream gradients on the rendered maps. Empty buffers mean zero.
#[derive(Clone, Debug, Default)]
pub struct PixelGrads {
    pub rgb: Vec<f64>,
    pub normal: Vec<f64>,
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl PixelGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        PixelGrads { rgb: vec![0.0; 3 * n], normal: vec![0.0; 3 * n], depth: vec![0.0; n], alpha: vec![0.0; n] }
    }
}

/// Gradient of one splat's compositing inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad {
    pub mean2d: [f64; 2],
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: Vec3,
    pub normal: Vec3,
    pub opacity: f64,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        self.mean2d[0] += o.mean2d[0];
        self.mean2d[1] += o.mean2d[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
        }
        self.depth += o.depth;
        self.color += o.color;
        self.normal += o.normal;
        self.opacity += o.opacity;
    }
}

struct Contribution {
    slot: usize,
    alpha: f64,
    unclamped: bool,
    gauss: f64,
    t: f64,
}

/// Exact reverse of [`rasterize`]. Returns per-splat gradients and the
/// gradient on each pixel's sky color.
pub fn rasterize_backward(
    splats: &[Splat2D],
    sky: &[Vec3],
    cache: &RasterCache,
    grads: &PixelGrads,
) -> Result<(Vec<SplatGrad>, Vec<Vec3>)> {
    let (width, height) = (cache.width, cache.height);
    if fingerprint(splats, sky) != cache.fingerprint {
        return Err(Error::StaleCache("splats differ from the cached forward pass"));
    }
    let n = width * height;
    let check = |name: &str, buf: &Vec<f64>, len: usize| -> Result<()> {
        if !buf.is_empty() && buf.len() != len {
            return Err(Error::ShapeMismatch(format!("{name} gradient has {} values, expected {len}", buf.len())));
        }
        Ok(())
    };
    check("rgb", &grads.rgb, 3 * n)?;
    check("normal", &grads.normal, 3 * n)?;
    check("depth", &grads.depth, n)?;
    check("alpha", &grads.alpha, n)?;
    let at3 = |buf: &Vec<f64>, i: usize| {
        if buf.is_empty() {
            Vec3::zeros()
        } else {
            Vec3::new(buf[3 * i], buf[3 * i + 1], buf[3 * i + 2])
        }
    };
    let at1 = |buf: &Vec<f64>, i: usize| if buf.is_empty() { 0.0 } else { buf[i] };

    let per_tile: Vec<(Vec<SplatGrad>, Vec<Vec3>)> = (0..cache.tiles.len())
        .into_par_iter()
        .map(|ti| {
            let list = &cache.tiles[ti];
            let mut local = vec![SplatGrad::default(); list.len()];
            let mut d_sky = Vec::new();
            let mut contrib: Vec<Contribution> = Vec::new();
            for (x, y) in tile_pixels(ti, width, height) {
                let i = y * width + x;
                contrib.clear();
                let mut t = 1.0;
                let (mut s_n, mut s_z, mut a) = (Vec3::zeros(), 0.0, 0.0);
                for (slot, &si) in list.iter().enumerate().take(cache.consumed[i] as usize) {
                    let s = &splats[si as usize];
                    let Some((alpha, unclamped, gauss)) = s.alpha_at(x, y) else { continue };
                    let w = alpha * t;
                    s_n += s.normal * w;
                    s_z += s.depth * w;
                    a += w;
                    contrib.push(Contribution { slot, alpha, unclamped, gauss, t });
                    t *= 1.0 - alpha;
                }
                let g_rgb = at3(&grads.rgb, i);
                let g_n = if s_n.norm() > 0.0 { normalize_vjp(&s_n, &at3(&grads.normal, i)) } else { Vec3::zeros() };
                let (mut g_z, mut g_a) = (0.0, at1(&grads.alpha, i));
                if a > 0.0 {
                    let dd = at1(&grads.depth, i);
                    g_z = dd / a;
                    g_a -= dd * (s_z / a) / a;
                }
                d_sky.push(g_rgb * t);
                let mut rest = t * g_rgb.dot(&sky[i]);
                for c in contrib.iter().rev() {
                    let s = &splats[list[c.slot] as usize];
                    let w = c.alpha * c.t;
                    let gf = g_rgb.dot(&s.color) + g_n.dot(&s.normal) + g_z * s.depth + g_a;
                    let d_alpha = c.t * gf - rest / (1.0 - c.alpha);
                    rest += w * gf;
                    let sg = &mut local[c.slot];
                    sg.color += g_rgb * w;
                    sg.normal += g_n * w;
                    sg.depth += g_z * w;
                    if c.unclamped {
                        sg.opacity += d_alpha * c.gauss;
                        // alpha = o exp(-m2 / 2)
                        let d_m2 = -0.5 * d_alpha * c.alpha;
                        let dx = x as f64 + 0.5 - s.mean2d[0];
                        let dy = y as f64 + 0.5 - s.mean2d[1];
                        let [ca, cb, cc] = s.conic;
                        sg.conic[0] += d_m2 * dx * dx;
                        sg.conic[1] += d_m2 * 2.0 * dx * dy;
                        sg.conic[2] += d_m2 * dy * dy;
                        sg.mean2d[0] -= d_m2 * 2.0 * (ca * dx + cb * dy);
                        sg.mean2d[1] -= d_m2 * 2.0 * (cb * dx + cc * dy);
                    }
                }
            }
            (local, d_sky)
        })
        .collect();

    let mut out = vec![SplatGrad::default(); splats.len()];
    let mut d_sky = vec![Vec3::zeros(); n];
    for (ti, (local, sky_grads)) in per_tile.iter().enumerate() {
        for (slot, g) in local.iter().enumerate() {
            out[cache.tiles[ti][slot] as usize].add(g);
        }
        for ((x, y), g) in tile_pixels(ti, width, height).zip(sky_grads) {
            d_sky[y * width + x] = *g;
        }
    }
    Ok((out, d_sky))
}

/// Alpha below which depth-derived normals are undefined.
pub const NORMAL_ALPHA_MIN: f64 = 0.05;

fn camera_ray(cam: &CameraModel, x: usize, y: usize) -> Vec3 {
    Vec3::new((x as f64 + 0.5 - cam.cx) / cam.fx, (y as f64 + 0.5 - cam.cy) / cam.fy, 1.0)
}

/// Whether a depth-derived normal exists at `(x, y)`: interior pixel whose
/// four neighbours and itself all have alpha above the threshold.
fn normal_defined(alpha: &[f64], width: usize, height: usize, x: usize, y: usize) -> bool {
    if x == 0 || y == 0 || x + 1 >= width || y + 1 >= height {
        return false;
    }
    [(x, y), (x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
        .iter()
        .all(|&(a, b)| alpha[b * width + a] > NORMAL_ALPHA_MIN)
}

/// Camera-frame normals from a depth map by central differences of the
/// back-projected points, oriented toward the camera. Zero where undefined.
pub fn depth_to_normals(depth: &[f64], alpha: &[f64], cam: &CameraModel) -> Vec<f64> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut out = vec![0.0; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            if !normal_defined(alpha, w, h, x, y) {
                continue;
            }
            let p = |a: usize, b: usize| camera_ray(cam, a, b) * depth[b * w + a];
            let tx = p(x + 1, y) - p(x - 1, y);
            let ty = p(x, y + 1) - p(x, y - 1);
            let c = tx.cross(&ty);
            let norm = c.norm();
            if norm == 0.0 {
                continue;
            }
            let sign = if c.dot(&p(x, y)) > 0.0 { -1.0 } else { 1.0 };
            let n = c * (sign / norm);
            out[3 * (y * w + x)..3 * (y * w + x) + 3].copy_from_slice(n.as_slice());
        }
    }
    out
}

/// Reverse of [`depth_to_normals`]: maps normal-map gradients onto depth.
pub fn depth_to_normals_backward(depth: &[f64], alpha: &[f64], cam: &CameraModel, d_normals: &[f64]) -> Vec<f64> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut d_depth = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            if !normal_defined(alpha, w, h, x, y) {
                continue;
            }
            let g = Vec3::new(d_normals[3 * (y * w + x)], d_normals[3 * (y * w + x) + 1], d_normals[3 * (y * w + x) + 2]);
            if g == Vec3::zeros() {
                continue;
            }
            let ray = |a: usize, b: usize| camera_ray(cam, a, b);
            let p = |a: usize, b: usize| ray(a, b) * depth[b * w + a];
            let tx = p(x + 1, y) - p(x - 1, y);
            let ty = p(x, y + 1) - p(x, y - 1);
            let c = tx.cross(&ty);
            if c.norm() == 0.0 {
                continue;
            }
            let sign = if c.dot(&p(x, y)) > 0.0 { -1.0 } else { 1.0 };
            let d_c = normalize_vjp(&c, &(g * sign));
            let d_tx = ty.cross(&d_c);
            let d_ty = d_c.cross(&tx);
            d_depth[y * w + x + 1] += ray(x + 1, y).dot(&d_tx);
            d_depth[y * w + x - 1] -= ray(x - 1, y).dot(&d_tx);
            d_depth[(y + 1) * w + x] += ray(x, y + 1).dot(&d_ty);
            d_depth[(y - 1) * w + x] -= ray(x, y - 1).dot(&d_ty);
        }
    }
    d_depth
}
