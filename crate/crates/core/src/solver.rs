//! Poisson blending by direct optimization of a neural field.
//!
//! The blended field `G` is trained on `L = L_grad + λ · L_color`: its exact
//! spatial gradient is pulled towards the guidance inside Ω, and its colour
//! towards the source on the background. No boundary values are imposed.
//! Gradients are measured in pixel units so that the training losses and the
//! discrete residual metrics share a scale.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classical::MaskRegion;
use crate::error::{Error, Result};
use crate::guidance::{guidance_values, GuidanceMode, GuidanceSample};
use crate::inr::{CoordBatch, InrModel, LossKind, ParamGradient};
use crate::metrics::psnr;
use crate::optim::{Adam, Schedule};
use crate::raster::pixel_center;
use crate::scalar::Scalar;

/// Width of the band used by the boundary-only colour loss, in pixels.
pub const BOUNDARY_BAND_PX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlendSchedule {
    pub optimizer: Schedule,
    pub inside_batch: usize,
    pub background_batch: usize,
    /// Pre-training of `G` towards the source over the whole domain.
    pub warm_start: Schedule,
    pub warm_start_batch: usize,
    /// Warm start ends early once the rasterized PSNR against the source
    /// reaches this value.
    pub warm_start_psnr: f64,
    pub log_every: usize,
    /// Early stop when the mean total loss over the last `patience` steps
    /// differs from the mean over the `patience` steps before by less than
    /// `min_relative_change`, relatively.
    pub patience: usize,
    pub min_relative_change: f64,
}

impl Default for BlendSchedule {
    fn default() -> Self {
        Self {
            optimizer: Schedule {
                steps: 3000,
                lr: 1e-3,
                lr_min: 1e-6,
                grid_lr_scale: 10.0,
            },
            inside_batch: 4096,
            background_batch: 4096,
            warm_start: Schedule {
                steps: 2000,
                lr: 2e-3,
                lr_min: 1e-6,
                grid_lr_scale: 10.0,
            },
            warm_start_batch: 4096,
            warm_start_psnr: 50.0,
            log_every: 10,
            patience: 100,
            min_relative_change: 1e-6,
        }
    }
}

/// Where the colour term is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColorSupport {
    /// The whole background `S − Ω`.
    #[default]
    Background,
    /// Background pixels within `radius` pixels of Ω.
    Band { radius: f64 },
}

#[derive(Debug, Clone)]
pub struct BlendProblem<T> {
    pub source: InrModel<T>,
    pub target: InrModel<T>,
    pub region: MaskRegion,
    pub mode: GuidanceMode,
    pub lambda: f64,
    pub schedule: BlendSchedule,
    pub seed: u64,
    pub color_support: ColorSupport,
}

impl<T: Scalar> BlendProblem<T> {
    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("lambda must be finite and non-negative"));
        }
        let (s, t) = (self.source.arch(), self.target.arch());
        if s.input_dim != 2 || t.input_dim != 2 || s.output_dim != t.output_dim {
            return Err(Error::usage("source and target must be 2-d fields with equal channel counts"));
        }
        let mask = self.region.mask();
        if mask.width() != self.region.source_width() || mask.height() != self.region.source_height() {
            return Err(Error::usage(
                "source and target rasters must share a size so the offset is a pure translation",
            ));
        }
        let sch = &self.schedule;
        if sch.inside_batch == 0 || sch.background_batch == 0 || sch.warm_start_batch == 0 {
            return Err(Error::config("batch sizes must be at least 1"));
        }
        if let ColorSupport::Band { radius } = self.color_support {
            if !(radius > 0.0) {
                return Err(Error::config("band radius must be positive"));
            }
        }
        Ok(())
    }

    /// Per-axis factor converting normalized derivatives to pixel units.
    pub fn axis_scale(&self) -> [f64; 2] {
        [
            2.0 / self.region.source_width() as f64,
            2.0 / self.region.source_height() as f64,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub l_grad: f64,
    pub l_color: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTrace {
    pub lambda: f64,
    pub rows: Vec<TraceRow>,
}

impl MetricsTrace {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, step: usize, l_grad: f64, l_color: f64) {
        self.rows.push(TraceRow {
            step,
            l_grad,
            l_color,
            total: l_grad + self.lambda * l_color,
        });
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Columns `step,l_grad,l_color,total`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::format("trace", e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io("trace", e))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory csv");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Jittered samples spread evenly over pixel cells, each kept only if it
/// falls on the requested side of Ω; after a few rejections the pixel centre
/// is used instead.
fn stratified<T: Scalar, R: Rng>(
    region: &MaskRegion,
    strata: &[usize],
    n: usize,
    inside: bool,
    rng: &mut R,
) -> Vec<T> {
    let (w, h) = (region.source_width(), region.source_height());
    let m = strata.len();
    let mut counts = vec![n / m; m];
    for k in sample(rng, m, n % m).iter() {
        counts[k] += 1;
    }
    let mut out = Vec::with_capacity(2 * n);
    for (&pixel, &count) in strata.iter().zip(&counts) {
        let (px, py) = (pixel % w, pixel / w);
        let x0 = -1.0 + 2.0 * px as f64 / w as f64;
        let y0 = -1.0 + 2.0 * py as f64 / h as f64;
        for _ in 0..count {
            let mut point = (pixel_center(px, w), pixel_center(py, h));
            for _ in 0..16 {
                let x = x0 + rng.random::<f64>() * 2.0 / w as f64;
                let y = y0 + rng.random::<f64>() * 2.0 / h as f64;
                if region.is_inside(x, y) == inside {
                    point = (x, y);
                    break;
                }
            }
            out.push(T::of(point.0));
            out.push(T::of(point.1));
        }
    }
    out
}

/// Continuous samples inside Ω and on the background `S − Ω`, membership
/// decided by the interpolated mask.
pub fn sample_coords<T: Scalar, R: Rng>(
    region: &MaskRegion,
    counts: (usize, usize),
    rng: &mut R,
) -> Result<(CoordBatch<T>, CoordBatch<T>)> {
    if counts.0 == 0 || counts.1 == 0 {
        return Err(Error::usage("sample counts must be at least 1"));
    }
    let background: Vec<usize> = (0..region.placed().len())
        .filter(|&i| !region.placed()[i])
        .collect();
    if background.is_empty() {
        return Err(Error::usage("the background is empty"));
    }
    let inside = stratified(region, region.interior(), counts.0, true, rng);
    let outside = stratified(region, &background, counts.1, false, rng);
    Ok((CoordBatch::new(2, inside)?, CoordBatch::new(2, outside)?))
}

/// Continuous background samples within `radius` pixels of Ω.
pub fn sample_band<T: Scalar, R: Rng>(
    region: &MaskRegion,
    radius: f64,
    n: usize,
    rng: &mut R,
) -> Result<CoordBatch<T>> {
    if n == 0 {
        return Err(Error::usage("sample count must be at least 1"));
    }
    let band = region.band(radius);
    if band.is_empty() {
        return Err(Error::usage("the boundary band is empty"));
    }
    CoordBatch::new(2, stratified(region, &band, n, false, rng))
}

fn check_samples(samples: &[GuidanceSample], dim: usize, per: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::usage("no guidance samples"));
    }
    if samples.iter().any(|s| s.coord.len() != dim || s.v.len() != per) {
        return Err(Error::usage("guidance samples do not match the model shape"));
    }
    Ok(())
}

/// Mean over samples of `‖J_G · diag(axis_scale) − v‖²_F`.
pub fn loss_grad_eval<T: Scalar>(
    g: &InrModel<T>,
    samples: &[GuidanceSample],
    axis_scale: &[f64],
) -> Result<f64> {
    let (dim, out) = (g.arch().input_dim, g.arch().output_dim);
    check_samples(samples, dim, dim * out)?;
    let coords: Vec<T> = samples.iter().flat_map(|s| s.coord.iter().map(|&c| T::of(c))).collect();
    let targets: Vec<T> = samples
        .iter()
        .flat_map(|s| s.v.iter().enumerate().map(|(k, &v)| T::of(v * axis_scale[k % dim])))
        .collect();
    g.loss(LossKind::GradientMatch, &CoordBatch::new(dim, coords)?, &targets, axis_scale)
}

/// Mean over points of `Σ_channels (G − S)²`.
pub fn loss_color_eval<T: Scalar>(
    g: &InrModel<T>,
    s: &InrModel<T>,
    background: &CoordBatch<T>,
) -> Result<f64> {
    if g.arch().output_dim != s.arch().output_dim {
        return Err(Error::usage("fields have different channel counts"));
    }
    let ones = vec![1.0; background.dim()];
    g.loss(LossKind::ValueMatch, background, &s.evaluate(background)?, &ones)
}

/// The colour kernel restricted to a band around ∂Ω.
pub fn loss_color_boundary_eval<T: Scalar>(
    g: &InrModel<T>,
    s: &InrModel<T>,
    band: &CoordBatch<T>,
) -> Result<f64> {
    loss_color_eval(g, s, band)
}

#[derive(Debug, Clone)]
pub struct BlendOutcome<T> {
    pub model: InrModel<T>,
    pub trace: MetricsTrace,
    /// Rasterized PSNR of the warm-started `G` against the source.
    pub warm_start_psnr: f64,
    pub steps_run: usize,
}

fn diverged<T: Scalar>(step: usize, model: &InrModel<T>) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Numeric { .. } => Error::Diverged {
            step,
            last_good: Some(model.to_checkpoint_bytes()),
        },
        other => other,
    }
}

fn adam_step<T: Scalar>(adam: &mut Adam, model: &mut InrModel<T>, grad: &ParamGradient, schedule: &Schedule, step: usize) {
    let lr = schedule.lr_at(step);
    let grid_lr = lr * schedule.grid_lr_scale;
    let grid = model.grid_range();
    adam.step(model.params_mut(), grad.as_slice(), |i| match &grid {
        Some(r) if r.contains(&i) => grid_lr,
        _ => lr,
    });
}

/// Fits a freshly initialized copy of the source architecture to the source
/// over the whole domain. Returns the model and its rasterized PSNR.
pub fn warm_start<T: Scalar>(
    source: &InrModel<T>,
    width: usize,
    height: usize,
    schedule: &BlendSchedule,
    seed: u64,
) -> Result<(InrModel<T>, f64)> {
    let mut g = InrModel::init(source.arch().clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5741_524d);
    let reference = source.rasterize(width, height)?;
    let mut adam = Adam::new(g.num_params());
    let n = schedule.warm_start_batch;
    let mut quality = psnr(&g.rasterize(width, height)?, &reference)?;
    for step in 0..schedule.warm_start.steps {
        if step % 50 == 0 {
            quality = psnr(&g.rasterize(width, height)?, &reference)?;
            if quality >= schedule.warm_start_psnr {
                return Ok((g, quality));
            }
        }
        let pts: Vec<T> = (0..2 * n).map(|_| T::of(rng.random_range(-1.0..=1.0))).collect();
        let coords = CoordBatch::new(2, pts)?;
        let targets = source.evaluate(&coords)?;
        let (_, grad) = g
            .param_gradient(LossKind::ValueMatch, &coords, &targets)
            .map_err(diverged(step, &g))?;
        adam_step(&mut adam, &mut g, &grad, &schedule.warm_start, step);
        if !g.all_finite() {
            return Err(Error::Diverged {
                step,
                last_good: None,
            });
        }
    }
    if schedule.warm_start.steps > 0 {
        quality = psnr(&g.rasterize(width, height)?, &reference)?;
    }
    Ok((g, quality))
}

/// Trains the blended field: warm start towards the source, then stochastic
/// minimization of `L_grad + λ L_color` on fresh samples every step.
pub fn blend_2d<T: Scalar>(problem: &BlendProblem<T>) -> Result<BlendOutcome<T>> {
    problem.validate()?;
    let sch = &problem.schedule;
    let region = &problem.region;
    let (w, h) = (region.source_width(), region.source_height());
    let scale = problem.axis_scale();
    let offset = region.normalized_offset();

    let (mut g, warm_start_psnr) = warm_start(&problem.source, w, h, sch, problem.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    let mut adam = Adam::new(g.num_params());
    let mut trace = MetricsTrace::new(problem.lambda);
    let mut totals = Vec::with_capacity(sch.optimizer.steps);
    let log_every = sch.log_every.max(1);
    let patience = sch.patience.max(1);
    let mut steps_run = 0;

    for step in 0..sch.optimizer.steps {
        let (inside, mut background) =
            sample_coords::<T, _>(region, (sch.inside_batch, sch.background_batch), &mut rng)?;
        if let ColorSupport::Band { radius } = problem.color_support {
            background = sample_band(region, radius, sch.background_batch, &mut rng)?;
        }
        let (v, _) = guidance_values(&problem.source, &problem.target, &inside, &offset, problem.mode)?;
        let v_px: Vec<T> = v.iter().enumerate().map(|(k, &x)| T::of(x * scale[k % 2])).collect();
        let colors = problem.source.evaluate(&background)?;

        let (l_grad, mut grad) = g
            .param_gradient_scaled(LossKind::GradientMatch, &inside, &v_px, &scale)
            .map_err(diverged(step, &g))?;
        let (l_color, grad_color) = g
            .param_gradient(LossKind::ValueMatch, &background, &colors)
            .map_err(diverged(step, &g))?;
        grad.axpy(problem.lambda, &grad_color);
        let total = l_grad + problem.lambda * l_color;
        if !total.is_finite() || !grad.is_finite() {
            return Err(Error::Diverged {
                step,
                last_good: Some(g.to_checkpoint_bytes()),
            });
        }

        totals.push(total);
        let stop = totals.len() >= 2 * patience && {
            let k = totals.len();
            let recent = totals[k - patience..].iter().sum::<f64>() / patience as f64;
            let before = totals[k - 2 * patience..k - patience].iter().sum::<f64>() / patience as f64;
            (recent - before).abs() <= sch.min_relative_change * before.abs()
        };
        let last = stop || step + 1 == sch.optimizer.steps;
        if step % log_every == 0 || last {
            trace.push(step, l_grad, l_color);
        }
        steps_run = step + 1;
        if stop {
            break;
        }
        let backup = g.params().to_vec();
        adam_step(&mut adam, &mut g, &grad, &sch.optimizer, step);
        if !g.all_finite() {
            g.params_mut().copy_from_slice(&backup);
            return Err(Error::Diverged {
                step,
                last_good: Some(g.to_checkpoint_bytes()),
            });
        }
    }
    Ok(BlendOutcome {
        model: g,
        trace,
        warm_start_psnr,
        steps_run,
    })
}
