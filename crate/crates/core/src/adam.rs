//! Adam with bias correction and per-group learning rates.

use crate::error::{Error, Result};
use crate::scene::ParamGroup;
use serde::{Deserialize, Serialize};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    /// Position rate at the last iteration relative to the first; the decay
    /// is exponential in between.
    pub position_final_factor: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub albedo: f64,
    pub roughness: f64,
    pub metallic: f64,
    pub normal: f64,
    pub asg_axes: f64,
    pub asg_sharpness: f64,
    pub asg_amplitude: f64,
    pub sh_specular: f64,
    pub sky: f64,
    pub illumination: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            position_final_factor: 0.01,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            albedo: 2.5e-3,
            roughness: 1e-3,
            metallic: 1e-3,
            normal: 1e-3,
            asg_axes: 1e-5,
            asg_sharpness: 1e-5,
            asg_amplitude: 1e-5,
            sh_specular: 2.5e-3,
            sky: 5e-3,
            illumination: 5e-4,
        }
    }
}

impl LearningRates {
    /// Rate for `group` at training progress `t` in `[0, 1]`.
    pub fn rate(&self, group: ParamGroup, t: f64) -> f64 {
        match group {
            ParamGroup::Position => self.position * self.position_final_factor.powf(t.clamp(0.0, 1.0)),
            ParamGroup::Rotation => self.rotation,
            ParamGroup::Scale => self.scale,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::Albedo => self.albedo,
            ParamGroup::Roughness => self.roughness,
            ParamGroup::Metallic => self.metallic,
            ParamGroup::Normal => self.normal,
            ParamGroup::AsgAxes => self.asg_axes,
            ParamGroup::AsgSharpness => self.asg_sharpness,
            ParamGroup::AsgAmplitude => self.asg_amplitude,
            ParamGroup::ShSpecular => self.sh_specular,
            ParamGroup::Sky => self.sky,
            ParamGroup::Illumination => self.illumination,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// One update; `lr[i]` is the rate of parameter `i`.
    pub fn step(&mut self, params: &mut [f32], grads: &[f64], lr: &[f64]) -> Result<()> {
        let n = self.m.len();
        if params.len() != n || grads.len() != n || lr.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "adam state holds {n} moments; got {} params, {} grads, {} rates",
                params.len(),
                grads.len(),
                lr.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..n {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let update = lr[i] * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
            params[i] = (params[i] as f64 - update) as f32;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(3);
        let mut p = [1.0f32, -2.0, 0.5];
        s.step(&mut p, &[0.0; 3], &[0.1; 3]).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps)
        let mut s = AdamState::new(2);
        let mut p = [0.0f32, 0.0];
        s.step(&mut p, &[3.0, -0.25], &[1e-2, 1e-2]).unwrap();
        assert!((p[0] as f64 + 1e-2).abs() < 1e-8);
        assert!((p[1] as f64 - 1e-2).abs() < 1e-8);
    }

    #[test]
    fn matches_reference_recurrence() {
        let grads = [0.3, -1.0, 2.0, 0.0, 0.7];
        let mut s = AdamState::new(1);
        let mut p = [0.5f32];
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.5f64);
        for (k, &g) in grads.iter().enumerate() {
            s.step(&mut p, &[g], &[0.05]).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let t = (k + 1) as i32;
            x -= 0.05 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert!((p[0] as f64 - x).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(2);
        assert!(matches!(s.step(&mut [0.0], &[0.0, 0.0], &[0.0, 0.0]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn position_rate_decays_to_final_factor() {
        let lr = LearningRates::default();
        assert_eq!(lr.rate(ParamGroup::Position, 0.0), 1.6e-4);
        assert!((lr.rate(ParamGroup::Position, 1.0) - 1.6e-6).abs() < 1e-18);
        assert!((lr.rate(ParamGroup::Position, 0.5) - 1.6e-5).abs() < 1e-15);
        assert_eq!(lr.rate(ParamGroup::AsgAxes, 0.3), 1e-5);
        assert_eq!(lr.rate(ParamGroup::Normal, 0.3), 1e-3);
    }
}
