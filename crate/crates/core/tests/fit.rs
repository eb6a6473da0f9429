use npblend::inr::{fit_image, ArchSpec, FitOptions, InrModel};
use npblend::raster::Raster;
use npblend::{Error, Image};

fn gradient_image(w: usize, h: usize) -> Image {
    Raster::from_fn(w, h, 3, |x, y, c| {
        (0.2 + 0.6 * x as f64 / w as f64 * (c as f64 + 1.0) / 3.0 + 0.1 * y as f64 / h as f64) as f32
    })
}

#[test]
fn constant_gray_reaches_sixty_db_within_200_steps() {
    let gray = Raster::<f32>::filled(32, 32, 3, 0.5);
    let model = InrModel::<f32>::init(ArchSpec::image(32, 32), 0).unwrap();
    let opts = FitOptions {
        log_every: 10,
        ..FitOptions::default()
    };
    let opts = FitOptions {
        schedule: npblend::optim::Schedule {
            steps: 200,
            ..opts.schedule
        },
        ..opts
    };
    let out = fit_image(model, &gray, &opts).unwrap();
    let best = out.psnr_trace.iter().map(|p| p.1).fold(0.0, f64::max);
    assert!(best >= 60.0, "trace {:?}", out.psnr_trace);
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let img = gradient_image(24, 20);
    let run = || {
        let mut opts = FitOptions::default();
        opts.schedule.steps = 30;
        opts.batch = Some(128);
        opts.seed = 4;
        let m = InrModel::<f32>::init(ArchSpec::image(24, 20), 9).unwrap();
        fit_image(m, &img, &opts).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.model.to_checkpoint_bytes(), b.model.to_checkpoint_bytes());
    assert_eq!(a.psnr_trace, b.psnr_trace);
}

#[test]
fn trace_is_logged_every_k_steps() {
    let img = gradient_image(8, 8);
    let mut opts = FitOptions::default();
    opts.schedule.steps = 25;
    opts.log_every = 10;
    let m = InrModel::<f32>::init(ArchSpec::image(8, 8), 0).unwrap();
    let out = fit_image(m, &img, &opts).unwrap();
    let steps: Vec<usize> = out.psnr_trace.iter().map(|p| p.0).collect();
    assert_eq!(steps, vec![0, 10, 20, 25]);
    assert!(out.final_psnr() > out.psnr_trace[0].1);
}

#[test]
fn exploding_step_size_aborts_with_the_step_index() {
    let img = gradient_image(8, 8);
    let mut opts = FitOptions::default();
    opts.schedule.lr = 1e38;
    opts.schedule.lr_min = 1e38;
    opts.schedule.steps = 50;
    let m = InrModel::<f32>::init(ArchSpec::image(8, 8), 0).unwrap();
    match fit_image(m, &img, &opts) {
        Err(Error::Diverged { step, .. }) => assert!(step < 50),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.psnr_trace)),
    }
}

#[test]
fn out_of_range_pixels_and_shape_mismatch_are_rejected() {
    let mut img = gradient_image(8, 8);
    img.data_mut()[5] = 1.5;
    let m = InrModel::<f32>::init(ArchSpec::image(8, 8), 0).unwrap();
    assert!(matches!(
        fit_image(m.clone(), &img, &FitOptions::default()),
        Err(Error::Usage(_))
    ));
    let gray = Raster::<f32>::filled(8, 8, 1, 0.5);
    assert!(matches!(
        fit_image(m, &gray, &FitOptions::default()),
        Err(Error::Usage(_))
    ));
}
