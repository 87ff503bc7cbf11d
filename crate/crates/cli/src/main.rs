//! `nightsplat` command-line tool.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nightsplat::frames::{load_frames, load_frames_sized, save_frames};
use nightsplat::gradcheck::{gradcheck, linear_probe, GradCheckReport};
use nightsplat::image::{write_pfm, write_png, ImageBuffer};
use nightsplat::metrics::{psnr, ssim};
use nightsplat::render::{render, RenderOptions};
use nightsplat::scene::{load_scene, save_scene};
use nightsplat::scene::synth::{synth_scene, Preset, SynthConfig};
use nightsplat::scene::{CameraModel, SceneGraph};
use nightsplat::train::{
    evaluate, frame_confidence, frame_loss_with_confidence, split_frames, train, Ablation, Frame, TrainConfig,
};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "nightsplat", version, about = "Physically based Gaussian splatting for low-light scenes", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render one camera of a scene to PNG, optionally with depth and normal maps.
    Render(RenderArgs),
    /// Optimize a scene against a frame set.
    Train(TrainArgs),
    /// PSNR and SSIM on the training and held-out splits.
    Eval(EvalArgs),
    /// Write albedo, diffuse, specular and normal maps of one camera.
    Decompose(DecomposeArgs),
    /// Generate a synthetic scene, its frames and a starting scene.
    Synth(SynthArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ShadingArgs {
    /// Lighting-model variant.
    #[arg(long, value_enum, default_value = "full")]
    ablation: AblationArg,
    /// Composite every splat instead of stopping at negligible transmittance.
    #[arg(long)]
    no_early_termination: bool,
}

impl ShadingArgs {
    fn options(&self) -> RenderOptions {
        RenderOptions { shading: Ablation::from(self.ablation).shading(), early_termination: !self.no_early_termination }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AblationArg {
    Full,
    NoSpecular,
    NoDiffuse,
    ShSpecular,
    NoBrdf,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Full => Ablation::Full,
            AblationArg::NoSpecular => Ablation::NoSpecular,
            AblationArg::NoDiffuse => Ablation::NoDiffuse,
            AblationArg::ShSpecular => Ablation::ShSpecular,
            AblationArg::NoBrdf => Ablation::NoBrdf,
        }
    }
}

#[derive(Args)]
struct RenderArgs {
    /// Scene manifest.
    #[arg(long)]
    scene: PathBuf,
    /// Index into the scene's camera list.
    #[arg(long, default_value_t = 0)]
    camera: usize,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
    /// Also write the depth map as single-channel PFM.
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Also write the camera-frame normal map as PFM.
    #[arg(long)]
    normal: Option<PathBuf>,
    #[command(flatten)]
    shading: ShadingArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Starting scene manifest.
    #[arg(long)]
    scene: PathBuf,
    /// Frame manifest.
    #[arg(long)]
    frames: PathBuf,
    /// Training configuration (TOML); defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Optimized scene manifest.
    #[arg(long)]
    out: PathBuf,
    /// JSON-lines training log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Overrides the configured iteration count.
    #[arg(long)]
    iterations: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Scene to render; omit when `--pred` is given.
    #[arg(long, required_unless_present = "pred", conflicts_with = "pred")]
    scene: Option<PathBuf>,
    /// Ground-truth frame manifest.
    #[arg(long)]
    frames: PathBuf,
    /// Predicted frame manifest to score instead of rendering a scene.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Frames whose index is a multiple of this are held out.
    #[arg(long, default_value_t = 8)]
    holdout_every: usize,
    /// Print one row per frame as well.
    #[arg(long)]
    per_frame: bool,
    #[command(flatten)]
    shading: ShadingArgs,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Scene manifest.
    #[arg(long)]
    scene: PathBuf,
    /// Index into the scene's camera list.
    #[arg(long, default_value_t = 0)]
    camera: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    shading: ShadingArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    preset: PresetArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Total Gaussians including actors.
    #[arg(long, default_value_t = 200)]
    gaussians: usize,
    #[arg(long, default_value_t = 1)]
    actors: usize,
    #[arg(long, default_value_t = 8)]
    cameras: usize,
    #[arg(long, default_value_t = 12)]
    timesteps: usize,
    #[arg(long, default_value_t = 64)]
    width: u32,
    #[arg(long, default_value_t = 64)]
    height: u32,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PresetArg {
    Default,
    Headlight,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Scene to check; a 10-Gaussian synthetic scene when omitted.
    #[arg(long, requires = "frames")]
    scene: Option<PathBuf>,
    /// Frames whose training loss is checked along with the linear probe.
    #[arg(long, requires = "scene")]
    frames: Option<PathBuf>,
    /// Frame index used as the target.
    #[arg(long, default_value_t = 1)]
    frame: usize,
    /// Parameters sampled per parameter group.
    #[arg(long, default_value_t = 6)]
    per_group: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write every compared entry as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Render(a) => cmd_render(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load(path: &Path) -> Result<SceneGraph> {
    load_scene(path).with_context(|| format!("loading scene {}", path.display()))
}

fn camera(scene: &SceneGraph, index: usize) -> Result<&CameraModel> {
    match scene.cameras.get(index) {
        Some(c) => Ok(c),
        None => bail!("camera {index} out of range: the scene has {} cameras", scene.cameras.len()),
    }
}

fn image(w: usize, h: usize, channels: usize, data: &[f64]) -> Result<ImageBuffer> {
    Ok(ImageBuffer::from_f64(w, h, channels, data)?)
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let scene = load(&a.scene)?;
    let cam = camera(&scene, a.camera)?;
    let (out, _) = render(&scene, cam, &a.shading.options())?;
    let (w, h) = (out.width, out.height);
    write_png(&a.out, &image(w, h, 3, &out.rgb)?)?;
    if let Some(p) = &a.depth {
        write_pfm(p, &image(w, h, 1, &out.depth)?)?;
    }
    if let Some(p) = &a.normal {
        write_pfm(p, &image(w, h, 3, &out.normal)?)?;
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut scene = load(&a.scene)?;
    let frames = load_frames(&a.frames).with_context(|| format!("loading frames {}", a.frames.display()))?;
    let mut config = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<TrainConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    config.iterations = a.iterations.unwrap_or(config.iterations);
    config.seed = a.seed.unwrap_or(config.seed);

    let mut log_file = match &a.log {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let mut last_psnr = None;
    train(&mut scene, &frames, &config, &mut |rec| {
        if let Some(f) = log_file.as_mut() {
            let line = serde_json::to_string(rec).map_err(|e| nightsplat::Error::InvalidScene(e.to_string()))?;
            writeln!(f, "{line}").map_err(|source| nightsplat::Error::Io { path: a.log.clone().unwrap(), source })?;
        }
        if let Some(p) = rec.heldout_psnr {
            last_psnr = Some(p);
            eprintln!("iteration {:>6}  loss {:.5}  held-out PSNR {:.2} dB", rec.iteration + 1, rec.total, p);
        }
        Ok(())
    })?;
    if let Some(mut f) = log_file {
        f.flush()?;
    }
    save_scene(&scene, &a.out).with_context(|| format!("saving {}", a.out.display()))?;
    if let Some(p) = last_psnr {
        println!("final held-out PSNR {p:.2} dB");
    }
    Ok(())
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.2}")
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let gt = load_frames(&a.frames).with_context(|| format!("loading frames {}", a.frames.display()))?;
    let (train_idx, held_idx) = split_frames(gt.len(), a.holdout_every);
    // one (frame, psnr, ssim) row per frame, from rendered or given predictions
    let rows: Vec<(usize, f64, f64)> = match (&a.scene, &a.pred) {
        (Some(path), _) => {
            let scene = load(path)?;
            let all: Vec<usize> = (0..gt.len()).collect();
            evaluate(&scene, &gt, &all, &a.shading.options())?.iter().map(|m| (m.frame, m.psnr, m.ssim)).collect()
        }
        (None, Some(path)) => {
            let pred = load_frames_sized(path).with_context(|| format!("loading frames {}", path.display()))?;
            if pred.len() != gt.len() {
                bail!("{} predicted frames for {} ground-truth frames", pred.len(), gt.len());
            }
            pred.iter()
                .zip(&gt)
                .enumerate()
                .map(|(i, ((p, (w, h)), g))| Ok((i, psnr(&p.rgb, &g.rgb)?, ssim(&p.rgb, &g.rgb, *w, *h, 3)?)))
                .collect::<Result<_>>()?
        }
        (None, None) => unreachable!("clap requires --scene or --pred"),
    };
    if a.per_frame {
        println!("{:>6} {:>9} {:>8} {:>8}", "frame", "split", "psnr", "ssim");
        for &(i, p, s) in &rows {
            let split = if held_idx.contains(&i) { "held-out" } else { "train" };
            println!("{i:>6} {split:>9} {:>8} {s:>8.4}", fmt_db(p));
        }
    }
    println!("{:>9} {:>6} {:>8} {:>8}", "split", "frames", "psnr", "ssim");
    for (name, idx) in [("train", &train_idx), ("held-out", &held_idx)] {
        if idx.is_empty() {
            continue;
        }
        let sel: Vec<_> = rows.iter().filter(|r| idx.contains(&r.0)).collect();
        let n = sel.len() as f64;
        let p = sel.iter().map(|r| r.1).sum::<f64>() / n;
        let s = sel.iter().map(|r| r.2).sum::<f64>() / n;
        println!("{name:>9} {:>6} {:>8} {s:>8.4}", sel.len(), fmt_db(p));
    }
    Ok(())
}

fn cmd_decompose(a: DecomposeArgs) -> Result<()> {
    let scene = load(&a.scene)?;
    let cam = camera(&scene, a.camera)?;
    let (out, _) = render(&scene, cam, &a.shading.options())?;
    let (w, h) = (out.width, out.height);
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let tone = |v: &[f64]| v.iter().map(|x| x / (1.0 + x)).collect::<Vec<_>>();
    let shifted: Vec<f64> = out.normal.iter().map(|n| 0.5 * (n + 1.0)).collect();
    for (name, hdr, preview) in [
        ("albedo", &out.albedo, out.albedo.clone()),
        ("diffuse", &out.diffuse, tone(&out.diffuse)),
        ("specular", &out.specular, tone(&out.specular)),
        ("normal", &out.normal, shifted),
    ] {
        write_pfm(&a.out.join(format!("{name}.pfm")), &image(w, h, 3, hdr)?)?;
        write_png(&a.out.join(format!("{name}.png")), &image(w, h, 3, &preview)?)?;
    }
    write_pfm(&a.out.join("alpha.pfm"), &image(w, h, 1, &out.alpha)?)?;
    write_pfm(&a.out.join("rgb.pfm"), &image(w, h, 3, &out.rgb)?)?;
    write_png(&a.out.join("rgb.png"), &image(w, h, 3, &out.rgb)?)?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        preset: match a.preset {
            PresetArg::Default => Preset::Default,
            PresetArg::Headlight => Preset::Headlight,
        },
        seed: a.seed,
        gaussians: a.gaussians,
        actors: a.actors,
        cameras: a.cameras,
        timesteps: a.timesteps,
        width: a.width,
        height: a.height,
        ..Default::default()
    };
    if cfg.cameras == 0 || cfg.timesteps == 0 {
        bail!("synthetic scenes need at least one camera and one timestep");
    }
    let s = synth_scene(&cfg)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_scene(&s.ground_truth, a.out.join("gt.toml"))?;
    save_scene(&s.init, a.out.join("init.toml"))?;
    let sizes: Vec<(usize, usize)> =
        s.ground_truth.cameras.iter().map(|c| (c.width as usize, c.height as usize)).collect();
    save_frames(a.out.join("frames.toml"), &s.frames, &sizes)?;
    println!(
        "wrote {} frames, ground truth and initial scene to {}",
        s.frames.len(),
        a.out.display()
    );
    Ok(())
}

fn print_report(label: &str, r: &GradCheckReport) {
    let mut groups: Vec<_> = Vec::new();
    for e in &r.entries {
        match groups.iter_mut().find(|(g, _, _)| *g == e.group) {
            Some((_, n, m)) => {
                *n += 1;
                *m = f64::max(*m, e.rel_error);
            }
            None => groups.push((e.group, 1usize, e.rel_error)),
        }
    }
    println!("{label}");
    for (g, n, m) in groups {
        println!("  {:<14} {n:>3} checked  max rel error {m:.2e}", format!("{g:?}"));
    }
    println!("  {} skipped as non-smooth; overall max rel error {:.2e}", r.skipped, r.max_rel_error);
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let (scene, frames): (SceneGraph, Vec<Frame>) = match (&a.scene, &a.frames) {
        (Some(s), Some(f)) => (load(s)?, load_frames(f)?),
        _ => {
            let cfg = SynthConfig { gaussians: 10, cameras: 2, timesteps: 2, width: 32, height: 32, ..Default::default() };
            let s = synth_scene(&cfg)?;
            (s.init, s.frames)
        }
    };
    let frame = match frames.get(a.frame) {
        Some(f) => f.clone(),
        None => bail!("frame {} out of range: {} frames", a.frame, frames.len()),
    };
    let cam = camera(&scene, frame.camera)?;
    let opts = RenderOptions::fine();

    let probe = linear_probe(cam.width as usize, cam.height as usize, a.seed);
    let probe_report = gradcheck(&scene, cam, &opts, &probe, a.per_group, a.seed)?;
    print_report("linear probe of every output map", &probe_report);

    let weights = TrainConfig::default().weights;
    let (base, _) = render(&scene, cam, &opts)?;
    let conf = frame_confidence(&base, &frame, cam, weights.gamma);
    let loss = move |out: &_, cam: &_| {
        let (terms, grads) = frame_loss_with_confidence(out, &frame, cam, &weights, conf.as_deref())?;
        Ok((terms.total(&weights), grads))
    };
    let loss_report = gradcheck(&scene, cam, &opts, &loss, a.per_group, a.seed)?;
    print_report("training loss", &loss_report);

    if let Some(p) = &a.report {
        let json = serde_json::json!({ "probe": probe_report, "loss": loss_report });
        std::fs::write(p, serde_json::to_string_pretty(&json)?).with_context(|| format!("writing {}", p.display()))?;
    }
    let worst = probe_report.max_rel_error.max(loss_report.max_rel_error);
    println!("max relative error {worst:.2e}");
    Ok(())
}
