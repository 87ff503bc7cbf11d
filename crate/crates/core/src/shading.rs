//! Per-Gaussian shading: SH diffuse plus BRDF-constrained ASG specular,
//! combined in HDR and tone mapped.
//!
//! The microfacet NDF is approximated by a spherical Gaussian around the
//! view reflection `w_r`, and its product with each ASG lobe is integrated
//! in closed form. Fresnel and geometry are evaluated at the representative
//! direction `w_r`, so the half vector is the normal.

use crate::error::{Error, Result};
use crate::geom::{
    normalize_vjp, quat_to_mat_vjp, reinhard, sh_basis_grad, sh_basis_raw, DegenerateView, Mat3, UnitVec3, Vec3,
    ROUGHNESS_FLOOR, SH_COEFFS,
};
use crate::illum::{diffuse_backward, diffuse_radiance, ShEnv};
use crate::scene::{Activated, Gaussian, NUM_LOBES};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Reflectance of dielectrics at normal incidence.
pub const DIELECTRIC_F0: f64 = 0.04;

/// How the specular term is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpecularMode {
    /// ASG lobes convolved with the SG microfacet NDF, times G and F.
    #[default]
    Asg,
    /// ASG lobes evaluated directly at `w_r`.
    AsgUnconstrained,
    /// Per-Gaussian degree-2 SH evaluated at `w_r`, times G and F.
    Sh,
    /// No specular term.
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadingConfig {
    pub specular: SpecularMode,
    pub diffuse: bool,
}

impl Default for ShadingConfig {
    fn default() -> Self {
        ShadingConfig { specular: SpecularMode::Asg, diffuse: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadingContext {
    /// Surface to camera.
    pub w_o: UnitVec3,
    pub n: UnitVec3,
    /// `2 (n . w_o) n - w_o`.
    pub w_r: UnitVec3,
    pub n_dot_wo: f64,
}

impl ShadingContext {
    pub fn new(n: UnitVec3, w_o: UnitVec3) -> Self {
        let c = n.dot(&w_o);
        let w_r = UnitVec3::new_normalize(2.0 * c * n.into_inner() - w_o.into_inner());
        ShadingContext { w_o, n, w_r, n_dot_wo: c }
    }

    pub fn is_degenerate(&self) -> bool {
        self.n_dot_wo <= 0.0
    }
}

/// Schlick Fresnel with `F0 = 0.04 (1 - m) + b m`.
pub fn fresnel_schlick(h_dot_wo: f64, b: &Vec3, m: f64) -> Vec3 {
    let f0 = fresnel_f0(b, m);
    let p = (1.0 - h_dot_wo).powi(5);
    f0.map(|f| f + (1.0 - f) * p)
}

fn fresnel_f0(b: &Vec3, m: f64) -> Vec3 {
    b.map(|c| DIELECTRIC_F0 * (1.0 - m) + c * m)
}

fn smith_lambda(x: f64, a2: f64) -> f64 {
    0.5 * ((1.0 + a2 * (1.0 - x * x) / (x * x)).sqrt() - 1.0)
}

/// Height-correlated Smith masking-shadowing for GGX with `alpha = r^2`.
pub fn smith_geometry(n_dot_wi: f64, n_dot_wo: f64, r: f64) -> Result<f64, DegenerateView> {
    if n_dot_wi <= 0.0 || n_dot_wo <= 0.0 {
        return Err(DegenerateView);
    }
    let rc = r.clamp(ROUGHNESS_FLOOR, 1.0);
    let a2 = rc.powi(4);
    Ok(1.0 / (1.0 + smith_lambda(n_dot_wi, a2) + smith_lambda(n_dot_wo, a2)))
}

pub fn tone_map(hdr: &Vec3) -> Vec3 {
    reinhard(hdr)
}

/// Closed-form integral over the sphere of `exp(2 nu (w . w_r - 1))` times a
/// unit-amplitude ASG with the given axes and sharpness.
pub fn convolved_asg(nu: f64, axes: (&Vec3, &Vec3, &Vec3), sharp: [f64; 2], w_r: &Vec3) -> f64 {
    convolve_lobe(nu, axes.0, axes.1, axes.2, sharp, w_r).value()
}

/// BRDF-constrained specular radiance. Zero for a degenerate view.
pub fn specular_shade(g: &Activated, ctx: &ShadingContext) -> Vec3 {
    if ctx.is_degenerate() {
        return Vec3::zeros();
    }
    brdf_specular(g, ctx.n_dot_wo, ctx.w_r.as_ref()).ls
}

/// Per-Gaussian shading results. `diffuse` and `specular` are HDR.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadeOutput {
    pub color: Vec3,
    pub albedo: Vec3,
    pub diffuse: Vec3,
    pub specular: Vec3,
    pub hdr: Vec3,
}

#[derive(Clone, Copy, Debug, Default)]
struct LobeTerm {
    /// `w_r` projected on the lobe x, y, z axes.
    u: f64,
    w: f64,
    zc: f64,
    /// Effective sharpness after convolution.
    lp: f64,
    mp: f64,
    /// `pi / sqrt((nu + l)(nu + m))`, 1 without convolution.
    k: f64,
    e: f64,
}

impl LobeTerm {
    fn value(&self) -> f64 {
        self.k * self.zc.max(0.0) * self.e
    }
}

fn convolve_lobe(nu: f64, x: &Vec3, y: &Vec3, z: &Vec3, sharp: [f64; 2], w_r: &Vec3) -> LobeTerm {
    let [l, m] = sharp;
    let lp = nu * l / (nu + l);
    let mp = nu * m / (nu + m);
    let (u, w) = (w_r.dot(x), w_r.dot(y));
    LobeTerm {
        u,
        w,
        zc: w_r.dot(z),
        lp,
        mp,
        k: PI / ((nu + l) * (nu + m)).sqrt(),
        e: (-lp * u * u - mp * w * w).exp(),
    }
}

#[derive(Clone, Copy, Debug)]
struct Microfacet {
    alpha: f64,
    /// d alpha / d roughness logit; zero where the floor clamps.
    alpha_grad: f64,
    g: f64,
    f0: Vec3,
    f: Vec3,
}

impl Microfacet {
    fn new(act: &Activated, c: f64) -> Self {
        let r = act.roughness;
        let rc = r.clamp(ROUGHNESS_FLOOR, 1.0);
        let alpha = rc * rc;
        let alpha_grad = if r > ROUGHNESS_FLOOR && r < 1.0 { 2.0 * rc * r * (1.0 - r) } else { 0.0 };
        let a2 = alpha * alpha;
        let g = c / (c * c + a2 * (1.0 - c * c)).sqrt();
        let f0 = fresnel_f0(&act.albedo, act.metallic);
        let f = fresnel_schlick(c, &act.albedo, act.metallic);
        Microfacet { alpha, alpha_grad, g, f0, f }
    }
}

#[derive(Clone, Debug)]
enum Specular {
    None,
    Brdf { mf: Microfacet, nu: f64, a_ndf: f64, q: Vec3, lobes: [LobeTerm; NUM_LOBES] },
    Raw { lobes: [LobeTerm; NUM_LOBES] },
    Sh { mf: Microfacet, basis: [f64; SH_COEFFS], raw: Vec3 },
}

struct BrdfResult {
    ls: Vec3,
    spec: Specular,
}

fn brdf_specular(act: &Activated, c: f64, w_r: &Vec3) -> BrdfResult {
    let mf = Microfacet::new(act, c);
    let a2 = mf.alpha * mf.alpha;
    let nu = 1.0 / (2.0 * a2 * c);
    let a_ndf = 1.0 / (PI * a2);
    let mut q = Vec3::zeros();
    let lobes = std::array::from_fn(|i| {
        let l = &act.lobes[i];
        let t = convolve_lobe(nu, &l.x, &l.y, &l.z, l.sharp, w_r);
        q += l.amplitude * (a_ndf * t.value());
        t
    });
    let ls = mf.g * mf.f.component_mul(&q);
    BrdfResult { ls, spec: Specular::Brdf { mf, nu, a_ndf, q, lobes } }
}

/// Forward intermediates kept for [`shading_backward`].
#[derive(Clone, Debug)]
pub struct ShadeCache {
    params: Gaussian<f64>,
    camera_center: Vec3,
    env: ShEnv,
    config: ShadingConfig,
    act: Activated,
    to_cam: Vec3,
    w_o: Vec3,
    c: f64,
    w_r: Vec3,
    ld_raw: Vec3,
    hdr: Vec3,
    spec: Specular,
}

/// Shades a world-frame Gaussian seen from `camera_center`.
pub fn shade_gaussian(
    g: &Gaussian<f64>,
    camera_center: &Vec3,
    env: &ShEnv,
    config: &ShadingConfig,
) -> (ShadeOutput, ShadeCache) {
    let act = g.activate();
    let to_cam = camera_center - act.mu;
    let w_o = to_cam.normalize();
    let n = act.normal;
    let c = n.dot(&w_o);
    let w_r = 2.0 * c * n - w_o;

    let ld_raw = if config.diffuse {
        diffuse_radiance(&act.albedo, &UnitVec3::new_unchecked(n), env)
    } else {
        Vec3::zeros()
    };
    let ld = ld_raw.map(|v| v.max(0.0));

    let (ls, spec) = if c <= 0.0 {
        (Vec3::zeros(), Specular::None)
    } else {
        match config.specular {
            SpecularMode::Off => (Vec3::zeros(), Specular::None),
            SpecularMode::Asg => {
                let r = brdf_specular(&act, c, &w_r);
                (r.ls, r.spec)
            }
            SpecularMode::AsgUnconstrained => {
                let mut ls = Vec3::zeros();
                let lobes = std::array::from_fn(|i| {
                    let l = &act.lobes[i];
                    let (u, w) = (w_r.dot(&l.x), w_r.dot(&l.y));
                    let [lx, ly] = l.sharp;
                    let t = LobeTerm {
                        u,
                        w,
                        zc: w_r.dot(&l.z),
                        lp: lx,
                        mp: ly,
                        k: 1.0,
                        e: (-lx * u * u - ly * w * w).exp(),
                    };
                    ls += l.amplitude * t.value();
                    t
                });
                (ls, Specular::Raw { lobes })
            }
            SpecularMode::Sh => {
                let mf = Microfacet::new(&act, c);
                let basis = sh_basis_raw(&w_r).0;
                let raw: Vec3 = (0..SH_COEFFS).map(|j| act.sh_specular[j] * basis[j]).sum();
                let ls = mf.g * mf.f.component_mul(&raw.map(|v| v.max(0.0)));
                (ls, Specular::Sh { mf, basis, raw })
            }
        }
    };

    let hdr = ld + ls;
    let out = ShadeOutput { color: tone_map(&hdr), albedo: act.albedo, diffuse: ld, specular: ls, hdr };
    let cache = ShadeCache {
        params: *g,
        camera_center: *camera_center,
        env: *env,
        config: *config,
        act,
        to_cam,
        w_o,
        c,
        w_r,
        ld_raw,
        hdr,
        spec,
    };
    (out, cache)
}

/// Gradient accumulators on activated quantities.
#[derive(Default)]
struct ActGrad {
    c: f64,
    w_r: Vec3,
    n: Vec3,
    albedo: Vec3,
    alpha: f64,
    metallic: f64,
    amp: [Vec3; NUM_LOBES],
    sharp: [[f64; 2]; NUM_LOBES],
    axes: [Mat3; NUM_LOBES],
    sh: [Vec3; SH_COEFFS],
}

fn microfacet_backward(mf: &Microfacet, act: &Activated, c: f64, d_g: f64, d_f: &Vec3, d: &mut ActGrad) {
    let p = (1.0 - c).powi(5);
    let d_f0 = d_f * (1.0 - p);
    d.c += -5.0 * (1.0 - c).powi(4) * d_f.dot(&mf.f0.map(|f| 1.0 - f));
    d.albedo += d_f0 * act.metallic;
    d.metallic += d_f0.dot(&act.albedo.map(|b| b - DIELECTRIC_F0));

    let a2 = mf.alpha * mf.alpha;
    let den = (c * c + a2 * (1.0 - c * c)).powf(1.5);
    d.c += d_g * a2 / den;
    d.alpha += d_g * (-c * mf.alpha * (1.0 - c * c) / den);
}

/// Adds the gradient of one lobe's shape `k * zc * e` given `d_value`.
/// Returns (d k, d lp, d mp) for the caller to chain further.
fn lobe_shape_backward(
    t: &LobeTerm,
    lobe: &crate::scene::ActivatedLobe,
    w_r: &Vec3,
    d_value: f64,
    d_wr: &mut Vec3,
    d_axes: &mut Mat3,
) -> (f64, f64, f64) {
    if t.zc <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let dk = d_value * t.zc * t.e;
    let dz = d_value * t.k * t.e;
    let de = d_value * t.k * t.zc;
    let d_lp = -de * t.e * t.u * t.u;
    let d_mp = -de * t.e * t.w * t.w;
    let du = -2.0 * de * t.lp * t.u * t.e;
    let dw = -2.0 * de * t.mp * t.w * t.e;
    *d_wr += lobe.x * du + lobe.y * dw + lobe.z * dz;
    let mut col = |k: usize, s: f64| {
        let mut c = d_axes.column_mut(k);
        c += w_r * s;
    };
    col(0, du);
    col(1, dw);
    col(2, dz);
    (dk, d_lp, d_mp)
}

/// Reverse pass of [`shade_gaussian`] for an upstream gradient on the tone
/// mapped color. Returns the gradient on the world-frame parameters and on
/// the environment coefficients.
pub fn shading_backward(
    cache: &ShadeCache,
    g: &Gaussian<f64>,
    camera_center: &Vec3,
    env: &ShEnv,
    config: &ShadingConfig,
    d_color: &Vec3,
) -> Result<(Gaussian<f64>, ShEnv)> {
    if cache.params != *g || cache.camera_center != *camera_center || cache.env != *env || cache.config != *config {
        return Err(Error::StaleCache("shading inputs differ from the cached forward pass"));
    }
    let act = &cache.act;
    let c = cache.c;
    let w_r = cache.w_r;
    let mut d_env = ShEnv::default();
    let mut d = ActGrad::default();

    let d_hdr = d_color.component_div(&cache.hdr.map(|h| (1.0 + h) * (1.0 + h)));

    if config.diffuse {
        let d_ld = d_hdr.zip_map(&cache.ld_raw, |g, v| if v > 0.0 { g } else { 0.0 });
        let (db, dn) = diffuse_backward(&act.albedo, &act.normal, env, &d_ld, &mut d_env);
        d.albedo += db;
        d.n += dn;
    }

    let d_ls = d_hdr;
    match &cache.spec {
        Specular::None => {}
        Specular::Brdf { mf, nu, a_ndf, q, lobes } => {
            let (nu, a_ndf) = (*nu, *a_ndf);
            let d_g = d_ls.dot(&mf.f.component_mul(q));
            let d_f = d_ls.component_mul(q) * mf.g;
            let d_q = d_ls.component_mul(&mf.f) * mf.g;
            let (mut d_nu, mut d_a) = (0.0, 0.0);
            for (i, t) in lobes.iter().enumerate() {
                let l = &act.lobes[i];
                let v = t.value();
                d.amp[i] += d_q * (a_ndf * v);
                let coef = d_q.dot(&l.amplitude);
                d_a += coef * v;
                let (dk, d_lp, d_mp) = lobe_shape_backward(t, l, &w_r, coef * a_ndf, &mut d.w_r, &mut d.axes[i]);
                let [lx, ly] = l.sharp;
                let (sx, sy) = (nu + lx, nu + ly);
                d_nu += dk * (-0.5 * t.k) * (1.0 / sx + 1.0 / sy);
                d.sharp[i][0] += dk * (-0.5 * t.k / sx);
                d.sharp[i][1] += dk * (-0.5 * t.k / sy);
                d_nu += d_lp * lx * lx / (sx * sx) + d_mp * ly * ly / (sy * sy);
                d.sharp[i][0] += d_lp * nu * nu / (sx * sx);
                d.sharp[i][1] += d_mp * nu * nu / (sy * sy);
            }
            d.alpha += d_nu * (-2.0 * nu / mf.alpha) + d_a * (-2.0 * a_ndf / mf.alpha);
            d.c += d_nu * (-nu / c);
            microfacet_backward(mf, act, c, d_g, &d_f, &mut d);
        }
        Specular::Raw { lobes } => {
            for (i, t) in lobes.iter().enumerate() {
                let l = &act.lobes[i];
                d.amp[i] += d_ls * t.value();
                let coef = d_ls.dot(&l.amplitude);
                let (_, d_lp, d_mp) = lobe_shape_backward(t, l, &w_r, coef, &mut d.w_r, &mut d.axes[i]);
                d.sharp[i][0] += d_lp;
                d.sharp[i][1] += d_mp;
            }
        }
        Specular::Sh { mf, basis, raw } => {
            let clamped = raw.map(|v| v.max(0.0));
            let d_g = d_ls.dot(&mf.f.component_mul(&clamped));
            let d_f = d_ls.component_mul(&clamped) * mf.g;
            let d_raw = (d_ls.component_mul(&mf.f) * mf.g).zip_map(raw, |g, v| if v > 0.0 { g } else { 0.0 });
            let grads = sh_basis_grad(&w_r);
            for j in 0..SH_COEFFS {
                d.sh[j] += d_raw * basis[j];
                d.w_r += grads[j] * act.sh_specular[j].dot(&d_raw);
            }
            microfacet_backward(mf, act, c, d_g, &d_f, &mut d);
        }
    }

    // w_r = 2 c n - w_o with c = n . w_o
    let n = act.normal;
    let w_o = cache.w_o;
    let d_c = d.c + 2.0 * n.dot(&d.w_r);
    let d_n = d.n + w_o * d_c + d.w_r * (2.0 * c);
    let d_wo = n * d_c - d.w_r;

    let mut out = Gaussian::<f64>::default();
    out.mu = (-normalize_vjp(&cache.to_cam, &d_wo)).into();
    out.normal_raw = normalize_vjp(&act.normal_raw, &d_n).into();
    out.albedo_logit = d.albedo.component_mul(&act.albedo.map(|b| b * (1.0 - b))).into();
    out.roughness_logit = d.alpha * alpha_grad(&cache.spec);
    out.metallic_logit = d.metallic * act.metallic * (1.0 - act.metallic);
    for i in 0..NUM_LOBES {
        let l = &act.lobes[i];
        out.asg[i].rot = quat_to_mat_vjp(l.rot_raw, &d.axes[i]);
        out.asg[i].log_sharp = [d.sharp[i][0] * l.sharp[0], d.sharp[i][1] * l.sharp[1]];
        out.asg[i].log_amp = d.amp[i].component_mul(&l.amplitude).into();
    }
    out.sh_specular = d.sh.map(Into::into);
    Ok((out, d_env))
}

fn alpha_grad(spec: &Specular) -> f64 {
    match spec {
        Specular::Brdf { mf, .. } | Specular::Sh { mf, .. } => mf.alpha_grad,
        Specular::None | Specular::Raw { .. } => 0.0,
    }
}
