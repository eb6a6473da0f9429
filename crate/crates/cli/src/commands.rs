use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use npblend::classical::{pie_blend, Mask, MaskRegion};
use npblend::guidance::GuidanceMode;
use npblend::harness::{run_ablation, run_comparison, SceneBundle, BUNDLED_SCENES};
use npblend::inr::{fit_image, Activation, ArchSpec, Encoding, FitOptions};
use npblend::metrics::{residual_metrics, ResidualReport, SolverTag};
use npblend::radiance::{blend_radiance, render, Camera, RadianceScene, Sampling};
use npblend::solver::{blend_2d, BlendProblem, BlendSchedule, ColorSupport};
use npblend::{Error, Image, Inr, Result};

#[derive(Debug, Parser)]
#[command(name = "npblend", version, about = "Poisson blending of neural fields")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML file whose keys are long flag names; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// `max` or `affine:MU,PHI`.
    #[arg(long, global = true)]
    pub mode: Option<GuidanceMode>,
    /// Optimizer steps of the main training loop.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Accepted for scripts; every run is already reproducible from its seed.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an image and write a field checkpoint.
    Fit(FitArgs),
    /// Blend two fitted fields.
    Blend2d(BlendArgs),
    /// Classical discrete Poisson blend of two images.
    Baseline(BaselineArgs),
    /// Blend two voxel radiance fields and render a turntable.
    BlendRf(RadianceArgs),
    /// Residual metrics of one blend, or the solver comparison over scene bundles.
    Eval(EvalArgs),
    /// Global versus boundary-band colour loss on one scene.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated hidden widths.
    #[arg(long, value_delimiter = ',', default_value = "64,64,64")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 10.0)]
    omega: f64,
    /// Train on jittered points against the bilinear interpolant.
    #[arg(long)]
    jitter: bool,
    /// Pixels per step; omit for full-raster steps.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    target_psnr: Option<f64>,
    /// CSV of `step,psnr`.
    #[arg(long)]
    trace: Option<PathBuf>,
}

/// Mask and placement shared by the 2D commands.
#[derive(Debug, Args)]
pub struct Placement {
    /// `rect:X0,Y0,X1,Y1` (half-open, target frame) or a mask image.
    #[arg(long)]
    mask: String,
    /// Pixel translation from the target frame into the source frame.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0,0")]
    offset: Vec<i64>,
}

#[derive(Debug, Args)]
pub struct BlendArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[command(flatten)]
    placement: Placement,
    /// Raster size; defaults to the source checkpoint's grid resolution.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Blended raster (PNG or PFM by extension).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// CSV of `step,l_grad,l_color,total`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Restrict the colour term to background pixels within this many pixels of Ω.
    #[arg(long)]
    band: Option<f64>,
    #[arg(long)]
    warm_steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[command(flatten)]
    placement: Placement,
    #[arg(long)]
    out: PathBuf,
    /// Residual report CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RadianceArgs {
    /// Scene file; the bundled sphere-in-box scene when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 3.0)]
    radius: f64,
    /// Samples per ray for the turntable renders.
    #[arg(long, default_value_t = 128)]
    samples: usize,
}

/// Scene bundles by bundled name or file.
#[derive(Debug, Args)]
pub struct Scenes {
    /// Bundled scene name; repeatable.
    #[arg(long = "scene")]
    names: Vec<String>,
    /// Scene bundle file; repeatable.
    #[arg(long = "bundle")]
    files: Vec<PathBuf>,
    /// Steps of each source and target fit.
    #[arg(long)]
    fit_steps: Option<usize>,
    /// Comma-separated hidden widths of the fitted fields.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    warm_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    scenes: Scenes,
    /// Evaluate this blended raster instead of running the comparison.
    #[arg(long, requires_all = ["source", "target", "mask"])]
    blend: Option<PathBuf>,
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    mask: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0,0")]
    offset: Vec<i64>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    scenes: Scenes,
    /// CSV of both background errors.
    #[arg(long)]
    out: PathBuf,
    /// Global-loss result left, band-only right.
    #[arg(long)]
    image: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Fit(a) => fit(c, a),
        Command::Blend2d(a) => blend2d(c, a),
        Command::Baseline(a) => baseline(c, a),
        Command::BlendRf(a) => blend_rf(c, a),
        Command::Eval(a) => eval(c, a),
        Command::Ablate(a) => ablate(c, a),
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })
}

fn save_image(img: &Image, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => img.save_pfm(path),
        _ => img.save_png(path),
    }
}

fn fit(c: &Common, a: &FitArgs) -> Result<()> {
    let image = Image::load(&a.image)?;
    let (w, h) = (image.width(), image.height());
    let arch = ArchSpec {
        output_dim: image.channels(),
        hidden: a.hidden.clone(),
        activation: Activation::Sine { omega: a.omega },
        ..ArchSpec::image(w, h)
    };
    let seed = c.seed.unwrap_or(0);
    let mut opts = FitOptions {
        seed,
        batch: a.batch,
        jitter: a.jitter,
        target_psnr: a.target_psnr,
        ..FitOptions::default()
    };
    if let Some(s) = c.steps {
        opts.schedule.steps = s;
    }
    if let Some(lr) = a.lr {
        opts.schedule.lr = lr;
    }
    let out = fit_image(Inr::init(arch, seed)?, &image, &opts)?;
    out.model.save(&a.out)?;
    if let Some(p) = &a.trace {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| usage(e.to_string());
        w.write_record(["step", "psnr"]).map_err(err)?;
        for (step, psnr) in &out.psnr_trace {
            w.write_record([step.to_string(), format!("{psnr:.6}")]).map_err(err)?;
        }
        write(p, w.into_inner().map_err(|e| usage(e.to_string()))?)?;
    }
    eprintln!("fit {}: {:.2} dB", a.image.display(), out.final_psnr());
    Ok(())
}

fn region(p: &Placement, w: usize, h: usize) -> Result<MaskRegion> {
    region_from(&p.mask, &p.offset, w, h)
}

fn region_from(spec: &str, offset: &[i64], w: usize, h: usize) -> Result<MaskRegion> {
    let &[dx, dy] = offset else {
        return Err(usage("offset takes two integers DX,DY"));
    };
    let mask = match spec.strip_prefix("rect:") {
        Some(r) => {
            let v: Vec<usize> = r
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| usage(format!("bad rectangle `{r}`")))?;
            let &[x0, y0, x1, y1] = v.as_slice() else {
                return Err(usage("rectangle takes X0,Y0,X1,Y1"));
            };
            if x0 >= x1 || y0 >= y1 || x1 > w || y1 > h {
                return Err(usage("mask rectangle is empty or outside the frame"));
            }
            Mask::rect(w, h, x0, y0, x1, y1)
        }
        None => Mask::from_raster(&Image::load(spec)?),
    };
    MaskRegion::new(mask, [dx, dy], w, h)
}

fn blend2d(c: &Common, a: &BlendArgs) -> Result<()> {
    let source = Inr::load(&a.source)?;
    let target = Inr::load(&a.target)?;
    let grid = match &source.arch().encoding {
        Encoding::Grid { resolution, .. } => Some((resolution[0], resolution[1])),
        Encoding::None => None,
    };
    let (w, h) = match (a.width, a.height, grid) {
        (Some(w), Some(h), _) => (w, h),
        (None, None, Some(g)) => g,
        _ => return Err(usage("give --width and --height for fields without a grid encoding")),
    };
    let mut schedule = BlendSchedule::default();
    if let Some(s) = c.steps {
        schedule.optimizer.steps = s;
    }
    if let Some(s) = a.warm_steps {
        schedule.warm_start.steps = s;
    }
    if let Some(b) = a.batch {
        schedule.inside_batch = b;
        schedule.background_batch = b;
        schedule.warm_start_batch = b;
    }
    let problem = BlendProblem {
        source,
        target,
        region: region(&a.placement, w, h)?,
        mode: c.mode.unwrap_or_default(),
        lambda: c.lambda.unwrap_or(1.0),
        schedule,
        seed: c.seed.unwrap_or(0),
        color_support: a.band.map_or(ColorSupport::Background, |radius| ColorSupport::Band { radius }),
    };
    let out = blend_2d(&problem)?;
    save_image(&out.model.rasterize(w, h)?, &a.out)?;
    if let Some(p) = &a.checkpoint {
        out.model.save(p)?;
    }
    if let Some(p) = &a.trace {
        out.trace.save_csv(p)?;
    }
    if let Some(last) = out.trace.last() {
        eprintln!(
            "blend: {} steps, warm start {:.2} dB, l_grad {:.4e}, l_color {:.4e}",
            out.steps_run, out.warm_start_psnr, last.l_grad, last.l_color
        );
    }
    Ok(())
}

fn report_csv(reports: &[ResidualReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(r).map_err(|e| usage(e.to_string()))?;
    }
    w.into_inner().map_err(|e| usage(e.to_string()))
}

fn baseline(c: &Common, a: &BaselineArgs) -> Result<()> {
    let source = Image::load(&a.source)?;
    let target = Image::load(&a.target)?;
    if !source.same_shape(&target) {
        return Err(usage("source and target images differ in shape"));
    }
    let region = region(&a.placement, source.width(), source.height())?;
    let mode = c.mode.unwrap_or_default();
    let pie = pie_blend(&source, &target, &region, mode)?;
    if !pie.converged() {
        eprintln!("warning: conjugate gradient stopped before tolerance: {:?}", pie.channels);
    }
    save_image(&pie.image, &a.out)?;
    if let Some(p) = &a.report {
        let rep = residual_metrics(&pie.image, &source, &target, &region, mode, SolverTag::Pie)?;
        write(p, report_csv(&[rep])?)?;
    }
    Ok(())
}

fn blend_rf(c: &Common, a: &RadianceArgs) -> Result<()> {
    let mut scene = match &a.scene {
        Some(p) => RadianceScene::load(p)?,
        None => RadianceScene::sphere_in_box(),
    };
    if let Some(s) = c.seed {
        scene.blend.seed = s;
    }
    if let Some(l) = c.lambda {
        scene.blend.lambda = l;
    }
    if let Some(m) = c.mode {
        scene.blend.mode = m;
    }
    if let Some(s) = c.steps {
        scene.blend.schedule.optimizer.steps = s;
    }
    let (source, target) = scene.fields::<f32>()?;
    let roi = scene.roi_box()?;
    let b = &scene.blend;
    let out = blend_radiance(&source, &target, &roi, b.mode, b.lambda, &b.schedule, b.seed)?;
    fs::create_dir_all(&a.out).map_err(|source| Error::Io {
        path: a.out.clone(),
        source,
    })?;
    write(&a.out.join("blend.npvf"), out.field.to_bytes())?;
    out.trace.save_csv(a.out.join("trace.csv"))?;
    let sampling = Sampling {
        samples: a.samples,
        ..Sampling::default()
    };
    for (k, cam) in turntable(roi.placed().center(), a.radius, a.frames, a.size).iter().enumerate() {
        let before = render(&source, cam, &sampling)?;
        let after = render(&out.field, cam, &sampling)?;
        save_image(&side_by_side(&before, &after), &a.out.join(format!("turntable_{k:03}.png")))?;
    }
    Ok(())
}

/// Cameras on a 20° elevation circle around `center`, z up.
fn turntable(center: [f64; 3], radius: f64, frames: usize, size: usize) -> Vec<Camera> {
    let elev = 20f64.to_radians();
    (0..frames)
        .map(|k| {
            let az = std::f64::consts::TAU * k as f64 / frames as f64;
            Camera {
                position: [
                    center[0] + radius * elev.cos() * az.cos(),
                    center[1] + radius * elev.cos() * az.sin(),
                    center[2] + radius * elev.sin(),
                ],
                look_at: center,
                fov_y_deg: 40.0,
                width: size,
                height: size,
            }
        })
        .collect()
}

fn side_by_side(a: &Image, b: &Image) -> Image {
    let (w, h, c) = (a.width(), a.height(), a.channels());
    Image::from_fn(2 * w, h, c, |x, y, ch| if x < w { a.get(x, y, ch) } else { b.get(x - w, y, ch) })
}

fn bundles(c: &Common, s: &Scenes) -> Result<Vec<SceneBundle>> {
    let mut out = Vec::new();
    for n in &s.names {
        out.push(SceneBundle::bundled(n)?);
    }
    for f in &s.files {
        out.push(SceneBundle::load(f)?);
    }
    if out.is_empty() {
        out = BUNDLED_SCENES.iter().map(|n| SceneBundle::bundled(n)).collect::<Result<_>>()?;
    }
    for b in &mut out {
        if let Some(v) = c.seed {
            b.seed = v;
        }
        if let Some(v) = c.lambda {
            b.lambda = v;
        }
        if let Some(v) = c.mode {
            b.mode = v;
        }
        if let Some(v) = c.steps {
            b.schedule.optimizer.steps = v;
        }
        if let Some(v) = s.fit_steps {
            b.fit.options.schedule.steps = v;
        }
        if let Some(v) = &s.hidden {
            b.fit.hidden = v.clone();
        }
        if let Some(v) = s.warm_steps {
            b.schedule.warm_start.steps = v;
        }
    }
    Ok(out)
}

fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => write(p, bytes),
        None => {
            print!("{}", String::from_utf8_lossy(bytes));
            Ok(())
        }
    }
}

fn eval(c: &Common, a: &EvalArgs) -> Result<()> {
    if let Some(blend) = &a.blend {
        let (Some(s), Some(t), Some(mask)) = (&a.source, &a.target, &a.mask) else {
            return Err(usage("--blend needs --source, --target and --mask"));
        };
        let blend = Image::load(blend)?;
        let source = Image::load(s)?;
        let target = Image::load(t)?;
        if !source.same_shape(&target) {
            return Err(usage("source and target images differ in shape"));
        }
        let region = region_from(mask, &a.offset, source.width(), source.height())?;
        let rep = residual_metrics(&blend, &source, &target, &region, c.mode.unwrap_or_default(), SolverTag::Neural)?;
        return emit(&a.out, &report_csv(&[rep])?);
    }
    let table = run_comparison(&bundles(c, &a.scenes)?);
    let failed = table.rows.iter().filter(|r| r.status != "ok").count();
    emit(&a.out, table.to_csv_string().as_bytes())?;
    if failed > 0 {
        eprintln!("{failed} scene(s) failed");
    }
    Ok(())
}

fn ablate(c: &Common, a: &AblateArgs) -> Result<()> {
    let list = bundles(c, &a.scenes)?;
    let [bundle] = list.as_slice() else {
        return Err(usage("ablate takes exactly one --scene or --bundle"));
    };
    let rep = run_ablation(bundle)?;
    write(&a.out, rep.to_csv_string())?;
    if let Some(p) = &a.image {
        save_image(&rep.side_by_side(), p)?;
    }
    eprintln!("background mse: global {:.4e}, band {:.4e}", rep.global_mse, rep.boundary_mse);
    Ok(())
}
