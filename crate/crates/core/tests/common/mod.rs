//! Independent reference implementations used by the acceptance suite.
//! Nothing here calls the engine code it is compared against.

use nalgebra::Vector3;
use rand::Rng;
use std::f64::consts::PI;

pub type V3 = Vector3<f64>;

/// Real SH basis up to band 2 from the textbook normalization constants,
/// in the engine's order (0,0), (1,-1), (1,0), (1,1), (2,-2), (2,-1), (2,0),
/// (2,1), (2,2).
pub fn sh_basis(d: &V3) -> [f64; 9] {
    let k0 = (1.0 / (4.0 * PI)).sqrt();
    let k1 = (3.0 / (4.0 * PI)).sqrt();
    let k2 = (15.0 / (4.0 * PI)).sqrt();
    let k20 = (5.0 / (16.0 * PI)).sqrt();
    let k22 = (15.0 / (16.0 * PI)).sqrt();
    let (x, y, z) = (d.x, d.y, d.z);
    [k0, k1 * y, k1 * z, k1 * x, k2 * x * y, k2 * y * z, k20 * (3.0 * z * z - 1.0), k2 * x * z, k22 * (x * x - y * y)]
}

/// Orthonormal `(a, b)` completing `w` to a right-handed frame.
pub fn tangent_frame(w: &V3) -> (V3, V3) {
    let h = if w.x.abs() < 0.9 { V3::x() } else { V3::y() };
    let a = h.cross(w).normalize();
    (a, w.cross(&a))
}

pub fn random_unit(rng: &mut impl Rng) -> V3 {
    loop {
        let v = V3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Monte-Carlo Lambertian radiance `albedo / pi * integral L(w) (n . w) dw`
/// over the hemisphere of `n`, with `L` the SH radiance of `coeffs`.
/// Cosine-weighted sampling turns the estimator into `albedo * mean L`.
pub fn mc_diffuse(albedo: &V3, n: &V3, coeffs: &[V3; 9], samples: usize, rng: &mut impl Rng) -> V3 {
    let (a, b) = tangent_frame(n);
    let mut sum = V3::zeros();
    for _ in 0..samples {
        let (u1, u2): (f64, f64) = (rng.gen(), rng.gen());
        let r = u1.sqrt();
        let phi = 2.0 * PI * u2;
        let w = a * (r * phi.cos()) + b * (r * phi.sin()) + n * (1.0 - u1).sqrt();
        let y = sh_basis(&w);
        for k in 0..9 {
            sum += coeffs[k] * y[k];
        }
    }
    albedo.component_mul(&(sum / samples as f64))
}

/// `max(v . z, 0) exp(-l (v . x)^2 - m (v . y)^2)`.
pub fn asg(v: &V3, x: &V3, y: &V3, z: &V3, l: f64, m: f64) -> f64 {
    let s = v.dot(z);
    if s <= 0.0 {
        return 0.0;
    }
    s * (-l * v.dot(x).powi(2) - m * v.dot(y).powi(2)).exp()
}

/// Integral over the sphere of `exp(2 nu (w . w_r - 1)) * asg(w)` by
/// composite Simpson in polar coordinates about `w_r`, where the spherical
/// Gaussian factor is concentrated.
pub fn sg_asg_quadrature(nu: f64, x: &V3, y: &V3, z: &V3, l: f64, m: f64, w_r: &V3) -> f64 {
    const NT: usize = 3000;
    const NP: usize = 360;
    let (a, b) = tangent_frame(w_r);
    let dt = PI / NT as f64;
    let dp = 2.0 * PI / NP as f64;
    let mut total = 0.0;
    for i in 0..=NT {
        let t = i as f64 * dt;
        let simpson = if i == 0 || i == NT { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let (st, ct) = t.sin_cos();
        let sg = (2.0 * nu * (ct - 1.0)).exp();
        if sg == 0.0 {
            continue;
        }
        let ring: f64 = (0..NP)
            .map(|j| {
                let p = j as f64 * dp;
                asg(&(w_r * ct + (a * p.cos() + b * p.sin()) * st), x, y, z, l, m)
            })
            .sum();
        total += simpson * sg * st * ring * dp;
    }
    total * dt / 3.0
}

/// One splat as the naive reference sees it.
pub struct RefSplat {
    pub mean: [f64; 2],
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub index: usize,
    /// Every attribute blended with compositing weights, concatenated.
    pub attrs: Vec<f64>,
}

/// Per-pixel result of the reference: blended attributes, weight sum and
/// final transmittance.
pub struct RefPixel {
    pub attrs: Vec<f64>,
    pub weight: f64,
    pub transmittance: f64,
}

/// Front-to-back compositing of every splat at one pixel after a full sort
/// by `(depth, index)`. No tiles, no bounds and no early exit.
pub fn reference_pixel(splats: &[RefSplat], px: f64, py: f64, alpha_max: f64, support: f64) -> RefPixel {
    let mut order: Vec<&RefSplat> = splats.iter().collect();
    order.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.index.cmp(&b.index)));
    let dim = splats.first().map_or(0, |s| s.attrs.len());
    let mut out = RefPixel { attrs: vec![0.0; dim], weight: 0.0, transmittance: 1.0 };
    for s in order {
        let (dx, dy) = (px - s.mean[0], py - s.mean[1]);
        let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
        if q > support {
            continue;
        }
        let alpha = (s.opacity * (-0.5 * q).exp()).min(alpha_max);
        let w = alpha * out.transmittance;
        for (o, a) in out.attrs.iter_mut().zip(&s.attrs) {
            *o += w * a;
        }
        out.weight += w;
        out.transmittance *= 1.0 - alpha;
    }
    out
}
