//! Global diffuse illumination.
//!
//! A fully connected network maps `(normalized timestep, camera embedding)`
//! to degree-2 SH radiance coefficients, which are convolved with the
//! clamped-cosine kernel to shade each Gaussian as a Lambertian surface.

use crate::error::{Error, Result};
use crate::geom::{cosine_lobe_expanded, eval_sh_basis, UnitVec3, Vec3, SH_COEFFS};
use rand::Rng;
use std::f64::consts::PI;

pub const EMBED_DIM: usize = 16;
pub const HIDDEN_WIDTH: usize = 64;
pub const TRUNK_DEPTH: usize = 8;
/// Output sizes of the per-band heads (coefficients x RGB).
pub const HEAD_SIZES: [usize; 3] = [3, 9, 15];
/// Band-0 bias of a freshly initialized network.
pub const INITIAL_AMBIENT: f32 = 0.5;

/// Radiance SH coefficients, one RGB triple per basis function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShEnv {
    pub coeffs: [Vec3; SH_COEFFS],
}

impl Default for ShEnv {
    fn default() -> Self {
        ShEnv { coeffs: [Vec3::zeros(); SH_COEFFS] }
    }
}

impl ShEnv {
    /// Radiance reconstructed from the coefficients in direction `dir`.
    pub fn radiance(&self, dir: &UnitVec3) -> Vec3 {
        let y = eval_sh_basis(dir).0;
        self.coeffs.iter().zip(y).map(|(c, y)| c * y).sum()
    }
}

/// Diffuse radiance before the clamp at zero.
pub fn diffuse_radiance(albedo: &Vec3, normal: &UnitVec3, env: &ShEnv) -> Vec3 {
    let y = eval_sh_basis(normal).0;
    let a = cosine_lobe_expanded();
    let irradiance: Vec3 = (0..SH_COEFFS).map(|j| env.coeffs[j] * (a[j] * y[j])).sum();
    albedo.component_mul(&irradiance) / PI
}

/// Lambertian shading, clamped below at zero.
pub fn diffuse_shade(albedo: &Vec3, normal: &UnitVec3, env: &ShEnv) -> Vec3 {
    diffuse_radiance(albedo, normal, env).map(|c| c.max(0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Copy + Default> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![T::default(); in_dim * out_dim],
            bias: vec![T::default(); out_dim],
        }
    }
}

impl Linear<f32> {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|o| {
                let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                row.iter().zip(x).map(|(w, x)| *w as f64 * x).sum::<f64>() + self.bias[o] as f64
            })
            .collect()
    }

    /// Accumulates weight/bias gradients and returns dL/dx.
    fn backward(&self, x: &[f64], d_out: &[f64], grad: &mut Linear<f64>) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let g = d_out[o];
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = o * self.in_dim;
            for i in 0..self.in_dim {
                grad.weight[row + i] += g * x[i];
                dx[i] += g * self.weight[row + i] as f64;
            }
        }
        dx
    }
}

/// Fully connected SH predictor. Generic over the scalar so the same shape
/// holds parameters (`f32`), gradients and optimizer moments (`f64`).
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalIllumNet<T = f32> {
    pub camera_ids: Vec<u32>,
    /// `camera_ids.len() x EMBED_DIM`, row per camera.
    pub embeddings: Vec<T>,
    /// ReLU after every trunk layer.
    pub layers: Vec<Linear<T>>,
    /// Linear heads for bands 0, 1, 2.
    pub heads: Vec<Linear<T>>,
}

impl<T: Copy + Default> GlobalIllumNet<T> {
    pub fn zeros_like<U: Copy + Default>(&self) -> GlobalIllumNet<U> {
        GlobalIllumNet {
            camera_ids: self.camera_ids.clone(),
            embeddings: vec![U::default(); self.embeddings.len()],
            layers: self.layers.iter().map(|l| Linear::zeros(l.in_dim, l.out_dim)).collect(),
            heads: self.heads.iter().map(|l| Linear::zeros(l.in_dim, l.out_dim)).collect(),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        if self.camera_ids.is_empty() {
            0
        } else {
            self.embeddings.len() / self.camera_ids.len()
        }
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![&self.embeddings];
        for l in self.layers.iter().chain(&self.heads) {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![&mut self.embeddings];
        for l in self.layers.iter_mut().chain(self.heads.iter_mut()) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    fn camera_slot(&self, camera_id: u32) -> Result<usize> {
        self.camera_ids
            .iter()
            .position(|&c| c == camera_id)
            .ok_or(Error::UnknownCamera(camera_id))
    }
}

/// Activations retained by [`GlobalIllumNet::predict_sh`] for the backward pass.
#[derive(Clone, Debug)]
pub struct IllumCache {
    t_norm: f64,
    camera_id: u32,
    /// Input vector followed by every post-ReLU trunk activation.
    activations: Vec<Vec<f64>>,
}

impl GlobalIllumNet<f32> {
    /// Kaiming-uniform trunk, zero heads with a positive band-0 bias.
    pub fn new(camera_ids: &[u32], rng: &mut impl Rng) -> Self {
        Self::with_shape(camera_ids, EMBED_DIM, HIDDEN_WIDTH, TRUNK_DEPTH, rng)
    }

    pub fn with_shape(
        camera_ids: &[u32],
        embedding_dim: usize,
        hidden: usize,
        depth: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let embeddings = (0..camera_ids.len() * embedding_dim)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect();
        let mut layers = Vec::with_capacity(depth);
        let mut in_dim = 1 + embedding_dim;
        for _ in 0..depth {
            let bound = (6.0 / in_dim as f32).sqrt();
            let mut l = Linear::zeros(in_dim, hidden);
            l.weight.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
            layers.push(l);
            in_dim = hidden;
        }
        let mut heads: Vec<Linear<f32>> = HEAD_SIZES.iter().map(|&n| Linear::zeros(in_dim, n)).collect();
        heads[0].bias.iter_mut().for_each(|b| *b = INITIAL_AMBIENT);
        GlobalIllumNet { camera_ids: camera_ids.to_vec(), embeddings, layers, heads }
    }

    pub fn predict_sh(&self, t_norm: f64, camera_id: u32) -> Result<(ShEnv, IllumCache)> {
        let slot = self.camera_slot(camera_id)?;
        let dim = self.embedding_dim();
        let mut x = Vec::with_capacity(1 + dim);
        x.push(t_norm);
        x.extend(self.embeddings[slot * dim..(slot + 1) * dim].iter().map(|&e| e as f64));
        let mut activations = vec![x];
        for layer in &self.layers {
            let z = layer.forward(activations.last().unwrap());
            activations.push(z.into_iter().map(|v| v.max(0.0)).collect());
        }
        let latent = activations.last().unwrap();
        let mut env = ShEnv::default();
        let mut j = 0;
        for head in &self.heads {
            let out = head.forward(latent);
            for k in 0..out.len() / 3 {
                env.coeffs[j] = Vec3::new(out[3 * k], out[3 * k + 1], out[3 * k + 2]);
                j += 1;
            }
        }
        Ok((env, IllumCache { t_norm, camera_id, activations }))
    }

    /// Reverse-mode pass; accumulates into `grad`.
    pub fn backward(
        &self,
        cache: &IllumCache,
        t_norm: f64,
        camera_id: u32,
        d_env: &ShEnv,
        grad: &mut GlobalIllumNet<f64>,
    ) -> Result<()> {
        if cache.t_norm.to_bits() != t_norm.to_bits() || cache.camera_id != camera_id {
            return Err(Error::StaleCache("illumination inputs differ from the cached forward pass"));
        }
        let latent = cache.activations.last().unwrap();
        let mut d_latent = vec![0.0; latent.len()];
        let mut j = 0;
        for (head, g) in self.heads.iter().zip(grad.heads.iter_mut()) {
            let d_out: Vec<f64> = (0..head.out_dim / 3)
                .flat_map(|k| {
                    let c = d_env.coeffs[j + k];
                    [c.x, c.y, c.z]
                })
                .collect();
            j += head.out_dim / 3;
            let dx = head.backward(latent, &d_out, g);
            d_latent.iter_mut().zip(dx).for_each(|(a, b)| *a += b);
        }
        let mut d = d_latent;
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.activations[k + 1];
            // ReLU mask: zero pre-activations carry no gradient
            for (g, a) in d.iter_mut().zip(out) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            d = layer.backward(&cache.activations[k], &d, &mut grad.layers[k]);
        }
        let slot = self.camera_slot(camera_id)?;
        let dim = self.embedding_dim();
        for (i, g) in d[1..].iter().enumerate() {
            grad.embeddings[slot * dim + i] += g;
        }
        Ok(())
    }
}

pub fn predict_sh(net: &GlobalIllumNet, t_norm: f64, camera_id: u32) -> Result<ShEnv> {
    net.predict_sh(t_norm, camera_id).map(|(env, _)| env)
}

/// Gradient of the pre-clamp diffuse radiance, given dL/dL_d (already masked
/// by the clamp). Returns (d albedo, d unit normal) and accumulates into `d_env`.
pub(crate) fn diffuse_backward(
    albedo: &Vec3,
    normal: &Vec3,
    env: &ShEnv,
    d_ld: &Vec3,
    d_env: &mut ShEnv,
) -> (Vec3, Vec3) {
    let y = crate::geom::sh_basis_raw(normal).0;
    let dy = crate::geom::sh_basis_grad(normal);
    let a = cosine_lobe_expanded();
    let irradiance: Vec3 = (0..SH_COEFFS).map(|j| env.coeffs[j] * (a[j] * y[j])).sum();
    let d_albedo = d_ld.component_mul(&irradiance) / PI;
    let d_irr = d_ld.component_mul(albedo) / PI;
    let mut d_n = Vec3::zeros();
    for j in 0..SH_COEFFS {
        d_env.coeffs[j] += d_irr * (a[j] * y[j]);
        d_n += dy[j] * (a[j] * env.coeffs[j].dot(&d_irr));
    }
    (d_albedo, d_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(v: Vec3) -> UnitVec3 {
        UnitVec3::new_normalize(v)
    }

    fn random_net(seed: u64) -> GlobalIllumNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = GlobalIllumNet::new(&[0, 3, 7], &mut rng);
        for h in &mut net.heads {
            h.weight.iter_mut().for_each(|w| *w = rng.gen_range(-0.3..0.3));
            h.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
        }
        for l in &mut net.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
        net
    }

    #[test]
    fn output_has_27_scalars() {
        let net = random_net(1);
        assert_eq!(net.heads.iter().map(|h| h.out_dim).sum::<usize>(), 27);
        assert_eq!(net.layers.len(), 8);
        let env = predict_sh(&net, 0.25, 3).unwrap();
        assert!(env.coeffs.iter().all(|c| c.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut net = random_net(2);
        for t in net.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        let env = predict_sh(&net, 0.5, 0).unwrap();
        assert_eq!(env, ShEnv::default());
    }

    #[test]
    fn deterministic_and_unknown_camera() {
        let net = random_net(3);
        assert_eq!(predict_sh(&net, 0.4, 7).unwrap(), predict_sh(&net, 0.4, 7).unwrap());
        assert!(matches!(predict_sh(&net, 0.4, 9), Err(Error::UnknownCamera(9))));
    }

    #[test]
    fn fresh_net_is_dim_uniform_light() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = GlobalIllumNet::new(&[0], &mut rng);
        let env = predict_sh(&net, 0.0, 0).unwrap();
        assert_eq!(env.coeffs[0], Vec3::repeat(0.5));
        assert!(env.coeffs[1..].iter().all(|c| *c == Vec3::zeros()));
    }

    /// Straight-line re-implementation of the forward pass used as an oracle.
    fn reference_forward(net: &GlobalIllumNet, t: f64, cam: u32) -> Vec<f64> {
        let slot = net.camera_ids.iter().position(|&c| c == cam).unwrap();
        let mut x = vec![t];
        for i in 0..EMBED_DIM {
            x.push(net.embeddings[slot * EMBED_DIM + i] as f64);
        }
        for l in &net.layers {
            let mut y = vec![0.0; l.out_dim];
            for o in 0..l.out_dim {
                let mut acc = l.bias[o] as f64;
                for i in 0..l.in_dim {
                    acc += l.weight[o * l.in_dim + i] as f64 * x[i];
                }
                y[o] = if acc > 0.0 { acc } else { 0.0 };
            }
            x = y;
        }
        let mut out = Vec::new();
        for h in &net.heads {
            for o in 0..h.out_dim {
                let mut acc = h.bias[o] as f64;
                for i in 0..h.in_dim {
                    acc += h.weight[o * h.in_dim + i] as f64 * x[i];
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn forward_matches_reference() {
        let net = random_net(5);
        let env = predict_sh(&net, 0.7, 0).unwrap();
        let reference = reference_forward(&net, 0.7, 0);
        let flat: Vec<f64> = env.coeffs.iter().flat_map(|c| [c.x, c.y, c.z]).collect();
        for (a, b) in flat.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn loss(net: &GlobalIllumNet, w: &ShEnv, t: f64, cam: u32) -> f64 {
        let env = predict_sh(net, t, cam).unwrap();
        env.coeffs.iter().zip(&w.coeffs).map(|(a, b)| a.dot(b)).sum()
    }

    fn upstream(seed: u64) -> ShEnv {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = ShEnv::default();
        for c in &mut w.coeffs {
            *c = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        w
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = random_net(6);
        let w = upstream(60);
        let (t, cam) = (0.35, 3);
        let (_, cache) = net.predict_sh(t, cam).unwrap();
        let mut grad = net.zeros_like::<f64>();
        net.backward(&cache, t, cam, &w, &mut grad).unwrap();

        let mut worst: f64 = 0.0;
        let mut checked = 0;
        let n_tensors = net.tensors().len();
        for ti in 0..n_tensors {
            let len = net.tensors()[ti].len();
            for idx in (0..len).step_by(len / 7 + 1) {
                let analytic = grad.tensors()[ti][idx];
                let mut p = net.clone();
                let mut m = net.clone();
                let base = net.tensors()[ti][idx];
                let h = 1e-3f32;
                p.tensors_mut()[ti][idx] = base + h;
                m.tensors_mut()[ti][idx] = base - h;
                let step = (p.tensors()[ti][idx] as f64) - (m.tensors()[ti][idx] as f64);
                let fd = (loss(&p, &w, t, cam) - loss(&m, &w, t, cam)) / step;
                let scale = analytic.abs().max(fd.abs());
                if scale < 1e-6 {
                    continue;
                }
                worst = worst.max((fd - analytic).abs() / scale);
                checked += 1;
            }
        }
        assert!(checked > 50, "only {checked} entries checked");
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = random_net(7);
        let (_, cache) = net.predict_sh(0.2, 0).unwrap();
        let mut grad = net.zeros_like::<f64>();
        net.backward(&cache, 0.2, 0, &ShEnv::default(), &mut grad).unwrap();
        assert!(grad.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn headless_trunk_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = GlobalIllumNet::with_shape(&[1], 4, 8, 0, &mut rng);
        let w = upstream(80);
        let (_, cache) = net.predict_sh(0.6, 1).unwrap();
        let mut grad = net.zeros_like::<f64>();
        net.backward(&cache, 0.6, 1, &w, &mut grad).unwrap();
        let input: Vec<f64> =
            std::iter::once(0.6).chain(net.embeddings.iter().map(|&e| e as f64)).collect();
        let d_out: Vec<f64> = w.coeffs[1..4].iter().flat_map(|c| [c.x, c.y, c.z]).collect();
        let head = &grad.heads[1];
        for o in 0..head.out_dim {
            for i in 0..head.in_dim {
                assert!((head.weight[o * head.in_dim + i] - d_out[o] * input[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stale_cache_detected() {
        let net = random_net(9);
        let (_, cache) = net.predict_sh(0.1, 0).unwrap();
        let mut grad = net.zeros_like::<f64>();
        let err = net.backward(&cache, 0.2, 0, &ShEnv::default(), &mut grad);
        assert!(matches!(err, Err(Error::StaleCache(_))));
    }

    #[test]
    fn diffuse_constant_env() {
        let mut env = ShEnv::default();
        env.coeffs[0] = Vec3::repeat(1.0);
        let ld = diffuse_radiance(&Vec3::repeat(1.0), &Vec3::z_axis(), &env);
        assert!((ld.x - 0.2820948).abs() < 1e-7);
        let ld2 = diffuse_radiance(&Vec3::repeat(1.0), &unit(Vec3::new(0.3, -0.7, 0.2)), &env);
        assert!((ld - ld2).norm() < 1e-15);
        assert_eq!(diffuse_radiance(&Vec3::zeros(), &Vec3::z_axis(), &env), Vec3::zeros());
    }

    #[test]
    fn diffuse_band1_is_odd() {
        let mut env = ShEnv::default();
        env.coeffs[1] = Vec3::new(0.3, -0.2, 0.5);
        env.coeffs[3] = Vec3::new(-0.4, 0.1, 0.2);
        let n = unit(Vec3::new(0.2, 0.5, -0.3));
        let b = Vec3::new(0.9, 0.5, 0.3);
        let a = diffuse_radiance(&b, &n, &env);
        let m = diffuse_radiance(&b, &UnitVec3::new_unchecked(-n.into_inner()), &env);
        assert!((a + m).norm() < 1e-15);
        assert!(diffuse_shade(&b, &n, &env).min() >= 0.0);
    }

    #[test]
    fn diffuse_is_linear() {
        let e1 = upstream(1);
        let e2 = upstream(2);
        let mut sum = ShEnv::default();
        for j in 0..SH_COEFFS {
            sum.coeffs[j] = e1.coeffs[j] * 2.0 + e2.coeffs[j];
        }
        let n = unit(Vec3::new(-0.1, 0.4, 0.9));
        let b = Vec3::new(0.3, 0.6, 0.9);
        let lhs = diffuse_radiance(&b, &n, &sum);
        let rhs = diffuse_radiance(&b, &n, &e1) * 2.0 + diffuse_radiance(&b, &n, &e2);
        assert!((lhs - rhs).norm() < 1e-12);
        let lhs = diffuse_radiance(&(b * 3.0), &n, &e1);
        assert!((lhs - diffuse_radiance(&b, &n, &e1) * 3.0).norm() < 1e-12);
    }

    #[test]
    fn diffuse_backward_matches_finite_differences() {
        let env = upstream(11);
        let b = Vec3::new(0.3, 0.6, 0.9);
        let raw_n = Vec3::new(0.2, -0.4, 0.8);
        let w = Vec3::new(0.7, -0.3, 0.5);
        let f = |b: &Vec3, n: &Vec3, env: &ShEnv| {
            diffuse_radiance(b, &UnitVec3::new_normalize(*n), env).dot(&w)
        };
        let mut d_env = ShEnv::default();
        let n = raw_n.normalize();
        let (db, dn_unit) = diffuse_backward(&b, &n, &env, &w, &mut d_env);
        let dn = crate::geom::normalize_vjp(&raw_n, &dn_unit);
        let h = 1e-6;
        for k in 0..3 {
            let mut bp = b;
            let mut bm = b;
            bp[k] += h;
            bm[k] -= h;
            assert!(((f(&bp, &raw_n, &env) - f(&bm, &raw_n, &env)) / (2.0 * h) - db[k]).abs() < 1e-8);
            let mut np = raw_n;
            let mut nm = raw_n;
            np[k] += h;
            nm[k] -= h;
            assert!(((f(&b, &np, &env) - f(&b, &nm, &env)) / (2.0 * h) - dn[k]).abs() < 1e-8);
        }
        for j in 0..SH_COEFFS {
            for k in 0..3 {
                let mut ep = env;
                let mut em = env;
                ep.coeffs[j][k] += h;
                em.coeffs[j][k] -= h;
                let fd = (f(&b, &raw_n, &ep) - f(&b, &raw_n, &em)) / (2.0 * h);
                assert!((fd - d_env.coeffs[j][k]).abs() < 1e-8);
            }
        }
    }
}
