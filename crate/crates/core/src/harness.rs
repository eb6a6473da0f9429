//! Scene bundles, the solver comparison table and the colour-loss ablation.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classical::{pie_blend, Mask, MaskRegion};
use crate::error::{Error, Result};
use crate::guidance::GuidanceMode;
use crate::inr::{fit_image, Activation, ArchSpec, FitOptions, InrModel};
use crate::metrics::{residual_metrics, residual_metrics_inr, ResidualReport, SolverTag};
use crate::raster::Raster;
use crate::solver::{blend_2d, BlendOutcome, BlendProblem, BlendSchedule, ColorSupport, BOUNDARY_BAND_PX};

/// Directory holding the bundled assets.
pub fn assets_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets")
}

/// Names of the bundled 2D scenes.
pub const BUNDLED_SCENES: [&str; 3] = ["ramp", "textured", "edge"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MaskSpec {
    /// Half-open pixel rectangle in the target frame.
    Rect { x0: usize, y0: usize, x1: usize, y1: usize },
    /// Image whose first channel is ≥ 0.5 inside.
    Raster { path: PathBuf },
}

/// How source and target images are fitted before blending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneFit {
    pub omega: f64,
    pub hidden: Vec<usize>,
    pub options: FitOptions,
}

impl Default for SceneFit {
    fn default() -> Self {
        Self {
            omega: 10.0,
            hidden: vec![64, 64, 64],
            options: FitOptions {
                jitter: true,
                ..FitOptions::default()
            },
        }
    }
}

fn default_schedule() -> BlendSchedule {
    let mut s = BlendSchedule::default();
    s.optimizer.steps = 2000;
    s.inside_batch = 1024;
    s.background_batch = 1024;
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneBundle {
    pub name: String,
    pub source: PathBuf,
    pub target: PathBuf,
    pub mask: MaskSpec,
    /// Pixel translation from the target frame into the source frame.
    pub offset: [i64; 2],
    pub lambda: f64,
    pub mode: GuidanceMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fit: SceneFit,
    #[serde(default = "default_schedule")]
    pub schedule: BlendSchedule,
}

impl SceneBundle {
    /// Reads a bundle; relative paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut b: SceneBundle = toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut b.source);
        resolve(&mut b.target);
        if let MaskSpec::Raster { path } = &mut b.mask {
            resolve(path);
        }
        Ok(b)
    }

    pub fn bundled(name: &str) -> Result<Self> {
        if !BUNDLED_SCENES.contains(&name) {
            return Err(Error::usage(format!("no bundled scene `{name}`")));
        }
        Self::load(assets_dir().join("scenes").join(format!("{name}.toml")))
    }

    pub fn all_bundled() -> Result<Vec<Self>> {
        BUNDLED_SCENES.iter().map(|n| Self::bundled(n)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.source, &self.target] {
            if !p.is_file() {
                return Err(Error::usage(format!("{} does not exist", p.display())));
            }
        }
        self.mode.validate()?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("lambda must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn region(&self, width: usize, height: usize) -> Result<MaskRegion> {
        let mask = match &self.mask {
            &MaskSpec::Rect { x0, y0, x1, y1 } => {
                if x1 > width || y1 > height || x0 >= x1 || y0 >= y1 {
                    return Err(Error::usage("mask rectangle is empty or outside the frame"));
                }
                Mask::rect(width, height, x0, y0, x1, y1)
            }
            MaskSpec::Raster { path } => Mask::from_raster(&Raster::<f32>::load(path)?),
        };
        MaskRegion::new(mask, self.offset, width, height)
    }

    pub fn arch(&self, width: usize, height: usize) -> ArchSpec {
        ArchSpec {
            hidden: self.fit.hidden.clone(),
            activation: Activation::Sine { omega: self.fit.omega },
            ..ArchSpec::image(width, height)
        }
    }
}

/// A bundle with fitted source and target fields and their rasterizations,
/// which both solvers consume.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub bundle: SceneBundle,
    pub source_model: InrModel<f32>,
    pub target_model: InrModel<f32>,
    pub source: Raster<f32>,
    pub target: Raster<f32>,
    pub region: MaskRegion,
    pub fit_psnr: (f64, f64),
}

pub fn prepare(bundle: &SceneBundle) -> Result<PreparedScene> {
    bundle.validate()?;
    let s_img = Raster::<f32>::load(&bundle.source)?;
    let t_img = Raster::<f32>::load(&bundle.target)?;
    if !s_img.same_shape(&t_img) {
        return Err(Error::usage("source and target images differ in shape"));
    }
    let (w, h) = (s_img.width(), s_img.height());
    let region = bundle.region(w, h)?;
    let arch = ArchSpec {
        output_dim: s_img.channels(),
        ..bundle.arch(w, h)
    };
    let fit = |img: &Raster<f32>, seed: u64| {
        let opts = FitOptions {
            seed,
            ..bundle.fit.options.clone()
        };
        fit_image(InrModel::init(arch.clone(), seed)?, img, &opts)
    };
    let s = fit(&s_img, 2 * bundle.seed)?;
    let t = fit(&t_img, 2 * bundle.seed + 1)?;
    let fit_psnr = (s.final_psnr(), t.final_psnr());
    Ok(PreparedScene {
        source: s.model.rasterize(w, h)?,
        target: t.model.rasterize(w, h)?,
        source_model: s.model,
        target_model: t.model,
        region,
        bundle: bundle.clone(),
        fit_psnr,
    })
}

impl PreparedScene {
    pub fn problem(&self, mode: GuidanceMode, lambda: f64, color_support: ColorSupport) -> BlendProblem<f32> {
        BlendProblem {
            source: self.source_model.clone(),
            target: self.target_model.clone(),
            region: self.region.clone(),
            mode,
            lambda,
            schedule: self.bundle.schedule,
            seed: self.bundle.seed,
            color_support,
        }
    }

    pub fn blend(&self, mode: GuidanceMode, lambda: f64) -> Result<BlendOutcome<f32>> {
        blend_2d(&self.problem(mode, lambda, ColorSupport::Background))
    }

    pub fn pie_report(&self, mode: GuidanceMode) -> Result<(Raster<f32>, ResidualReport)> {
        let pie = pie_blend(&self.source, &self.target, &self.region, mode)?;
        let report = residual_metrics(&pie.image, &self.source, &self.target, &self.region, mode, SolverTag::Pie)?;
        Ok((pie.image, report))
    }

    pub fn neural_report(&self, model: &InrModel<f32>, mode: GuidanceMode) -> Result<ResidualReport> {
        residual_metrics_inr(model, &self.source, &self.target, &self.region, mode, SolverTag::Neural)
    }
}

pub const COMPARISON_HEADER: [&str; 9] = [
    "scene",
    "mode",
    "solver",
    "grad",
    "color",
    "psnr_background",
    "grad_ratio",
    "color_ratio",
    "status",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub scene: String,
    pub mode: String,
    pub solver: String,
    pub report: Option<ResidualReport>,
    /// PIE over neural, on neural rows.
    pub ratios: Option<(Ratio, Ratio)>,
    pub status: String,
}

/// Improvement ratio of one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Value(f64),
    /// The baseline metric vanishes, so there is nothing to improve on.
    NotApplicable,
}

/// Baseline values below this count as zero.
pub const RATIO_ZERO: f64 = 1e-9;

impl Ratio {
    pub fn of(pie: f64, neural: f64) -> Self {
        if pie.abs() < RATIO_ZERO {
            Ratio::NotApplicable
        } else {
            Ratio::Value(pie / neural)
        }
    }

    fn render(&self) -> String {
        match self {
            Ratio::Value(v) => fmt_num(*v),
            Ratio::NotApplicable => "n/a".into(),
        }
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.6e}")
    }
}

/// Rows for one prepared scene: PIE then neural, for each mode.
pub fn compare_scene(prep: &PreparedScene, modes: &[GuidanceMode]) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::new();
    for &mode in modes {
        let (_, pie) = prep.pie_report(mode)?;
        let out = prep.blend(mode, prep.bundle.lambda)?;
        let neural = prep.neural_report(&out.model, mode)?;
        let row = |solver: SolverTag, report, ratios| ComparisonRow {
            scene: prep.bundle.name.clone(),
            mode: mode.to_string(),
            solver: solver.to_string(),
            report: Some(report),
            ratios,
            status: "ok".into(),
        };
        rows.push(row(SolverTag::Pie, pie, None));
        rows.push(row(
            SolverTag::Neural,
            neural,
            Some((Ratio::of(pie.grad, neural.grad), Ratio::of(pie.color, neural.color))),
        ));
    }
    Ok(rows)
}

/// Both guidance modes used by the comparison.
pub fn comparison_modes() -> [GuidanceMode; 2] {
    [GuidanceMode::MaxMagnitude, GuidanceMode::Affine { mu: 1.0, phi: 1.0 }]
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Runs every bundle in order. A failing scene contributes one `failed` row
/// and the rest still run.
pub fn run_comparison(bundles: &[SceneBundle]) -> ComparisonTable {
    let mut table = ComparisonTable::default();
    for b in bundles {
        match prepare(b).and_then(|p| compare_scene(&p, &comparison_modes())) {
            Ok(rows) => table.rows.extend(rows),
            Err(e) => table.rows.push(ComparisonRow {
                scene: b.name.clone(),
                mode: String::new(),
                solver: String::new(),
                report: None,
                ratios: None,
                status: format!("failed: {e}"),
            }),
        }
    }
    table
}

impl ComparisonTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::format("comparison table", e.to_string());
        w.write_record(COMPARISON_HEADER).map_err(err)?;
        for r in &self.rows {
            let (grad, color, psnr) = match &r.report {
                Some(rep) => (fmt_num(rep.grad), fmt_num(rep.color), fmt_num(rep.psnr_background)),
                None => Default::default(),
            };
            let (gr, cr) = match &r.ratios {
                Some((g, c)) => (g.render(), c.render()),
                None => Default::default(),
            };
            w.write_record([&r.scene, &r.mode, &r.solver, &grad, &color, &psnr, &gr, &cr, &r.status])
                .map_err(err)?;
        }
        w.flush().map_err(|e| Error::format("comparison table", e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub scene: String,
    /// Background MSE against the source, per pixel and channel.
    pub global_mse: f64,
    pub boundary_mse: f64,
    pub global_image: Raster<f32>,
    pub boundary_image: Raster<f32>,
}

impl AblationReport {
    /// The global-loss result on the left, band-only on the right.
    pub fn side_by_side(&self) -> Raster<f32> {
        let (a, b) = (&self.global_image, &self.boundary_image);
        let (w, h, c) = (a.width(), a.height(), a.channels());
        Raster::from_fn(2 * w, h, c, |x, y, ch| if x < w { a.get(x, y, ch) } else { b.get(x - w, y, ch) })
    }

    pub fn to_csv_string(&self) -> String {
        format!(
            "scene,global_mse,boundary_mse\n{},{},{}\n",
            self.scene,
            fmt_num(self.global_mse),
            fmt_num(self.boundary_mse)
        )
    }
}

/// Mean squared difference from `source` over pixels outside Ω.
pub fn background_mse(image: &Raster<f32>, source: &Raster<f32>, region: &MaskRegion) -> Result<f64> {
    if !image.same_shape(source) {
        return Err(Error::usage("image and source frames differ"));
    }
    let c = source.channels();
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, &inside) in region.placed().iter().enumerate() {
        if inside {
            continue;
        }
        for k in i * c..(i + 1) * c {
            sum += (image.data()[k] as f64 - source.data()[k] as f64).powi(2);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

pub fn ablation_prepared(prep: &PreparedScene) -> Result<AblationReport> {
    let (mode, lambda) = (prep.bundle.mode, prep.bundle.lambda);
    let (w, h) = (prep.source.width(), prep.source.height());
    let global = blend_2d(&prep.problem(mode, lambda, ColorSupport::Background))?;
    let band = blend_2d(&prep.problem(mode, lambda, ColorSupport::Band { radius: BOUNDARY_BAND_PX }))?;
    let global_image = global.model.rasterize(w, h)?;
    let boundary_image = band.model.rasterize(w, h)?;
    Ok(AblationReport {
        scene: prep.bundle.name.clone(),
        global_mse: background_mse(&global_image, &prep.source, &prep.region)?,
        boundary_mse: background_mse(&boundary_image, &prep.source, &prep.region)?,
        global_image,
        boundary_image,
    })
}

/// Trains the global and band-only colour variants on one bundle.
pub fn run_ablation(bundle: &SceneBundle) -> Result<AblationReport> {
    ablation_prepared(&prepare(bundle)?)
}
