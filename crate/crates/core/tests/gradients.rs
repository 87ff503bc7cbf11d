//! End-to-end gradient checks against central finite differences.

use nightsplat::gradcheck::{gradcheck, linear_probe};
use nightsplat::render::{render, RenderOptions};
use nightsplat::scene::synth::{synth_scene, Preset, SynthConfig};
use nightsplat::shading::{ShadingConfig, SpecularMode};
use nightsplat::train::{frame_confidence, frame_loss_with_confidence};
use nightsplat::loss::LossWeights;

fn small_scene(preset: Preset) -> nightsplat::scene::synth::SynthOutput {
    synth_scene(&SynthConfig { preset, gaussians: 10, cameras: 2, timesteps: 2, width: 32, height: 32, ..Default::default() })
        .unwrap()
}

#[test]
fn training_loss_gradient_matches_finite_differences() {
    let s = small_scene(Preset::Default);
    let cam = &s.init.cameras[1];
    let frame = s.frames[1].clone();
    let weights = LossWeights { w_dn: 0.5, ..Default::default() };
    let opts = RenderOptions::fine();
    // the confidence weight is detached, so differences hold it at the base render
    let (base, _) = render(&s.init, cam, &opts).unwrap();
    let conf = frame_confidence(&base, &frame, cam, weights.gamma).unwrap();
    let objective = move |out: &_, cam: &_| {
        let (terms, grads) = frame_loss_with_confidence(out, &frame, cam, &weights, Some(&conf))?;
        Ok((terms.total(&weights), grads))
    };
    let report = gradcheck(&s.init, cam, &opts, &objective, 6, 1).unwrap();
    for e in &report.entries {
        println!("{:50} {:+.6e} {:+.6e} {:.2e}", e.name, e.analytic, e.numeric, e.rel_error);
    }
    println!("skipped {} max {}", report.skipped, report.max_rel_error);
    assert!(report.max_rel_error <= 1e-3);
}

#[test]
fn probe_gradient_all_specular_modes() {
    for mode in [SpecularMode::Asg, SpecularMode::AsgUnconstrained, SpecularMode::Sh, SpecularMode::Off] {
        let s = small_scene(Preset::Headlight);
        let cam = &s.init.cameras[0];
        let opts = RenderOptions { shading: ShadingConfig { specular: mode, diffuse: true }, early_termination: false };
        let probe = linear_probe(32, 32, 3);
        let report = gradcheck(&s.init, cam, &opts, &probe, 4, 2).unwrap();
        for e in &report.entries {
            println!("{mode:?} {:50} {:+.6e} {:+.6e} {:.2e}", e.name, e.analytic, e.numeric, e.rel_error);
        }
        assert!(report.max_rel_error <= 1e-3, "{mode:?}: {}", report.max_rel_error);
    }
}
