use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::encoding::grid_stencil;
use super::*;

fn linear_arch(input_dim: usize, output_dim: usize) -> ArchSpec {
    ArchSpec {
        input_dim,
        output_dim,
        hidden: vec![],
        activation: Activation::Sine { omega: 30.0 },
        encoding: Encoding::None,
    }
}

fn sine_arch(hidden: Vec<usize>, omega: f64) -> ArchSpec {
    ArchSpec {
        input_dim: 2,
        output_dim: 3,
        hidden,
        activation: Activation::Sine { omega },
        encoding: Encoding::None,
    }
}

fn grid_arch(res: [usize; 2], latent_dim: usize, hidden: Vec<usize>) -> ArchSpec {
    ArchSpec {
        encoding: Encoding::Grid {
            resolution: res.to_vec(),
            latent_dim,
        },
        ..sine_arch(hidden, 30.0)
    }
}

fn random_coords(n: usize, seed: u64) -> CoordBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-0.95..0.95)).collect();
    CoordBatch::new(2, pts).unwrap()
}

fn rel_err(exact: f64, approx: f64, floor: f64) -> f64 {
    (exact - approx).abs() / exact.abs().max(approx.abs()).max(floor)
}

#[test]
fn init_is_deterministic_per_seed() {
    let arch = grid_arch([8, 8], 2, vec![16, 16]);
    let a = InrModel::<f32>::init(arch.clone(), 7).unwrap();
    let b = InrModel::<f32>::init(arch.clone(), 7).unwrap();
    let c = InrModel::<f32>::init(arch, 8).unwrap();
    assert_eq!(a.to_checkpoint_bytes(), b.to_checkpoint_bytes());
    assert_ne!(a.params(), c.params());
}

#[test]
fn invalid_architectures_are_configuration_errors() {
    let mut zero_width = sine_arch(vec![16, 0], 30.0);
    assert!(matches!(InrModel::<f32>::init(zero_width.clone(), 0), Err(Error::Config(_))));
    zero_width.hidden = vec![16];
    zero_width.activation = Activation::Sine { omega: 0.0 };
    assert!(matches!(InrModel::<f32>::init(zero_width, 0), Err(Error::Config(_))));
    let tiny_grid = grid_arch([1, 8], 2, vec![8]);
    assert!(matches!(InrModel::<f32>::init(tiny_grid, 0), Err(Error::Config(_))));
}

#[test]
fn zero_weights_reduce_to_the_final_bias() {
    let arch = sine_arch(vec![8, 8], 30.0);
    let mut m = InrModel::<f32>::init(arch, 1).unwrap();
    for p in m.params_mut() {
        *p = 0.0;
    }
    let last = m.num_layers() - 1;
    let w = vec![0.0; m.weights(last).len()];
    m.set_layer(last, &w, &[0.5, 0.5, 0.5]).unwrap();
    let out = m.evaluate(&random_coords(10, 3).cast()).unwrap();
    assert!(out.iter().all(|&v| v == 0.5));
}

impl CoordBatch<f64> {
    fn cast<U: Scalar>(&self) -> CoordBatch<U> {
        CoordBatch::new(self.dim(), self.as_slice().iter().map(|&v| U::of(v)).collect()).unwrap()
    }
}

#[test]
fn affine_model_value_and_constant_jacobian() {
    let mut m = InrModel::<f64>::init(linear_arch(2, 1), 0).unwrap();
    m.set_layer(0, &[1.0, 2.0], &[0.5]).unwrap();
    let batch = CoordBatch::from_points(&[[1.0, 1.0]]);
    assert_eq!(m.evaluate(&batch).unwrap(), vec![3.5]);
    let jac = m.spatial_jacobian(&random_coords(5, 1)).unwrap();
    for i in 0..5 {
        assert_eq!((jac.get(i, 0, 0), jac.get(i, 0, 1)), (1.0, 2.0));
    }
}

#[test]
fn single_sine_unit_matches_symbolic_derivative() {
    let arch = ArchSpec {
        input_dim: 1,
        output_dim: 1,
        hidden: vec![1],
        activation: Activation::Sine { omega: 30.0 },
        encoding: Encoding::None,
    };
    let w = 0.37;
    let mut m = InrModel::<f64>::init(arch, 0).unwrap();
    m.set_layer(0, &[w], &[0.0]).unwrap();
    m.set_layer(1, &[1.0], &[0.0]).unwrap();
    for x in [-0.8, -0.1, 0.0, 0.33, 0.9] {
        let jac = m.spatial_jacobian(&CoordBatch::from_points(&[[x]])).unwrap();
        let expected = 30.0 * w * (30.0 * w * x).cos();
        assert!((jac.get(0, 0, 0) - expected).abs() < 1e-12, "x={x}");
    }
}

#[test]
fn grid_node_and_midpoint_queries() {
    let arch = grid_arch([4, 3], 2, vec![8]);
    let grid_model = InrModel::<f64>::init(arch, 5).unwrap();
    // The same MLP without the encoding, fed the latent directly.
    let plain_arch = sine_arch(vec![8], 30.0);
    let mlp = InrModel::<f64>::from_params(
        plain_arch,
        grid_model.params()[grid_model.grid_range().unwrap().end..].to_vec(),
    )
    .unwrap();
    let node = |ix: usize, iy: usize| grid_model.grid_latent(iy * 4 + ix).unwrap().to_vec();
    let center = |i: usize, n: usize| crate::raster::pixel_center(i, n);

    let at_node = grid_model
        .evaluate(&CoordBatch::from_points(&[[center(2, 4), center(1, 3)]]))
        .unwrap();
    let l = node(2, 1);
    let expected = mlp.evaluate(&CoordBatch::new(2, l).unwrap()).unwrap();
    for (a, b) in at_node.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }

    let mid_x = 0.5 * (center(0, 4) + center(1, 4));
    let at_mid = grid_model
        .evaluate(&CoordBatch::from_points(&[[mid_x, center(2, 3)]]))
        .unwrap();
    let avg: Vec<f64> = node(0, 2)
        .iter()
        .zip(node(1, 2))
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let expected = mlp.evaluate(&CoordBatch::new(2, avg).unwrap()).unwrap();
    for (a, b) in at_mid.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn grid_weights_form_a_partition_of_unity(x in -1.2f64..1.2, y in -1.2f64..1.2) {
        let layout = Layout::of(&grid_arch([7, 5], 2, vec![4]));
        let grid = layout.grid.unwrap();
        let (mut idx, mut w, mut dw) = (Vec::new(), Vec::new(), Vec::new());
        grid_stencil(&grid, &[x, y], &mut idx, &mut w, &mut dw);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
        for a in 0..2 {
            let s: f64 = (0..4).map(|c| dw[c * 2 + a]).sum();
            prop_assert!(s.abs() < 1e-9);
        }
        prop_assert!(idx.iter().all(|&i| i < 35));
    }
}

fn assert_jacobian_matches_fd(model: &InrModel<f64>, coords: &CoordBatch<f64>, h: f64) {
    let exact = model.spatial_jacobian(coords).unwrap();
    let fd = FiniteDifference::axis_aligned(2, h)
        .derivatives(model, coords)
        .unwrap();
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = exact
        .data
        .iter()
        .zip(&fd)
        .map(|(&e, &f)| rel_err(e, f, 1e-3 * scale))
        .fold(0.0, f64::max);
    assert!(worst <= 1e-3, "max relative error {worst}");
}

#[test]
fn spatial_jacobian_matches_central_differences() {
    let coords = random_coords(100, 11);
    for seed in 0..3 {
        let m = InrModel::<f64>::init(sine_arch(vec![32, 32], 30.0), seed).unwrap();
        assert_jacobian_matches_fd(&m, &coords, 1e-4);
    }
    let pe = ArchSpec {
        activation: Activation::ReluPe { num_frequencies: 4 },
        ..sine_arch(vec![32, 32], 1.0)
    };
    // Piecewise linear: a wide stencil would straddle kinks.
    assert_jacobian_matches_fd(&InrModel::<f64>::init(pe, 2).unwrap(), &coords, 1e-6);
}

#[test]
fn grid_encoded_jacobian_matches_differences_inside_cells() {
    let m = InrModel::<f64>::init(grid_arch([6, 6], 2, vec![16]), 4).unwrap();
    // Keep probes away from the cell boundaries where the stencil switches.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pts: Vec<[f64; 2]> = (0..50)
        .map(|_| {
            let cx = rng.random_range(0..5) as f64 + rng.random_range(0.1..0.9);
            let cy = rng.random_range(0..5) as f64 + rng.random_range(0.1..0.9);
            [(cx + 0.5) / 3.0 - 1.0, (cy + 0.5) / 3.0 - 1.0]
        })
        .collect();
    assert_jacobian_matches_fd(&m, &CoordBatch::from_points(&pts), 1e-4);
}

#[test]
fn directional_stencils_project_the_jacobian() {
    let m = InrModel::<f64>::init(sine_arch(vec![16], 10.0), 3).unwrap();
    let coords = random_coords(10, 4);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let fd = FiniteDifference {
        directions: vec![vec![r, r], vec![r, -r]],
        ..FiniteDifference::richardson(2, 1e-3)
    };
    let dirs = fd.derivatives(&m, &coords).unwrap();
    let jac = m.spatial_jacobian(&coords).unwrap();
    for i in 0..10 {
        for o in 0..3 {
            let plus = r * (jac.get(i, o, 0) + jac.get(i, o, 1));
            let minus = r * (jac.get(i, o, 0) - jac.get(i, o, 1));
            assert!((dirs[(i * 3 + o) * 2] - plus).abs() < 1e-6);
            assert!((dirs[(i * 3 + o) * 2 + 1] - minus).abs() < 1e-6);
        }
    }
}

#[test]
fn relu_kink_uses_the_right_derivative() {
    let arch = ArchSpec {
        input_dim: 1,
        output_dim: 1,
        hidden: vec![1],
        activation: Activation::ReluPe { num_frequencies: 0 },
        encoding: Encoding::None,
    };
    let mut m = InrModel::<f64>::init(arch, 0).unwrap();
    m.set_layer(0, &[2.0], &[0.0]).unwrap();
    m.set_layer(1, &[1.0], &[0.0]).unwrap();
    let jac = m.spatial_jacobian(&CoordBatch::from_points(&[[0.0]])).unwrap();
    assert_eq!(jac.get(0, 0, 0), 2.0);
}

#[test]
fn evaluation_is_pure() {
    let m = InrModel::<f32>::init(grid_arch([16, 16], 2, vec![32, 32]), 2).unwrap();
    let c = random_coords(300, 8).cast::<f32>();
    assert_eq!(m.evaluate(&c).unwrap(), m.evaluate(&c).unwrap());
    assert_eq!(
        m.spatial_jacobian(&c).unwrap(),
        m.spatial_jacobian(&c).unwrap()
    );
}

#[test]
fn dimension_mismatch_and_overflow_are_reported() {
    let m = InrModel::<f32>::init(linear_arch(2, 1), 0).unwrap();
    let wrong = CoordBatch::<f32>::from_points(&[[0.1, 0.2, 0.3]]);
    assert!(matches!(m.evaluate(&wrong), Err(Error::Usage(_))));

    let mut big = m.clone();
    big.set_layer(0, &[3e38, 3e38], &[0.0]).unwrap();
    let pts = CoordBatch::<f32>::from_points(&[[0.1, 0.1], [1.0, 1.0]]);
    match big.evaluate(&pts) {
        Err(Error::Numeric { index, .. }) => assert_eq!(index, Some(1)),
        other => panic!("expected numeric error, got {other:?}"),
    }
}

#[test]
fn zero_residual_gives_exactly_zero_gradient() {
    let m = InrModel::<f32>::init(grid_arch([8, 8], 2, vec![16, 16]), 3).unwrap();
    let c = random_coords(64, 2).cast::<f32>();
    let values = m.evaluate(&c).unwrap();
    let (loss, grad) = m.param_gradient(LossKind::ValueMatch, &c, &values).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.as_slice().iter().all(|&g| g == 0.0));

    let jac = m.spatial_jacobian(&c).unwrap();
    let (loss, grad) = m.param_gradient(LossKind::GradientMatch, &c, &jac.data).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.as_slice().iter().all(|&g| g == 0.0));
}

#[test]
fn single_neuron_hand_calculus() {
    let mut m = InrModel::<f64>::init(linear_arch(1, 1), 0).unwrap();
    m.set_layer(0, &[1.0], &[0.0]).unwrap();
    let c = CoordBatch::from_points(&[[1.0]]);
    let (loss, grad) = m.param_gradient(LossKind::ValueMatch, &c, &[0.0]).unwrap();
    assert_eq!(loss, 1.0);
    assert_eq!(grad.as_slice(), &[2.0, 2.0]);
}

#[test]
fn empty_targets_are_a_usage_error() {
    let m = InrModel::<f64>::init(linear_arch(2, 1), 0).unwrap();
    let empty = CoordBatch::<f64>::new(2, vec![]).unwrap();
    assert!(matches!(
        m.param_gradient(LossKind::ValueMatch, &empty, &[]),
        Err(Error::Usage(_))
    ));
}

/// Central differences of the loss over every parameter.
fn fd_param_gradient(
    m: &InrModel<f64>,
    kind: LossKind,
    c: &CoordBatch<f64>,
    t: &[f64],
    scale: &[f64],
) -> Vec<f64> {
    let h = 1e-6;
    (0..m.num_params())
        .map(|i| {
            let mut plus = m.clone();
            plus.params_mut()[i] += h;
            let mut minus = m.clone();
            minus.params_mut()[i] -= h;
            (plus.loss(kind, c, t, scale).unwrap() - minus.loss(kind, c, t, scale).unwrap())
                / (2.0 * h)
        })
        .collect()
}

fn check_param_gradient(m: &InrModel<f64>, scale: &[f64]) {
    let c = random_coords(24, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for kind in [LossKind::ValueMatch, LossKind::GradientMatch] {
        let per = if kind == LossKind::ValueMatch { 3 } else { 6 };
        let t: Vec<f64> = (0..c.len() * per).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (loss, grad) = m.param_gradient_scaled(kind, &c, &t, scale).unwrap();
        assert!((loss - m.loss(kind, &c, &t, scale).unwrap()).abs() < 1e-12 * loss.max(1.0));
        let fd = fd_param_gradient(m, kind, &c, &t, scale);
        let gscale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let worst = grad
            .as_slice()
            .iter()
            .zip(&fd)
            .map(|(&e, &f)| rel_err(e, f, 1e-4 * gscale))
            .fold(0.0, f64::max);
        assert!(worst <= 1e-3, "{kind:?}: max relative error {worst}");
    }
}

#[test]
fn param_gradient_matches_finite_differences() {
    check_param_gradient(
        &InrModel::<f64>::init(sine_arch(vec![12, 12], 5.0), 1).unwrap(),
        &[1.0, 1.0],
    );
    check_param_gradient(
        &InrModel::<f64>::init(sine_arch(vec![10, 10, 10], 3.0), 2).unwrap(),
        &[0.25, 0.5],
    );
    let pe = ArchSpec {
        activation: Activation::ReluPe { num_frequencies: 2 },
        ..sine_arch(vec![10], 1.0)
    };
    check_param_gradient(&InrModel::<f64>::init(pe, 3).unwrap(), &[1.0, 1.0]);
}

#[test]
fn grid_param_gradient_matches_finite_differences() {
    check_param_gradient(
        &InrModel::<f64>::init(grid_arch([5, 4], 2, vec![8]), 6).unwrap(),
        &[1.0, 2.0],
    );
}

#[test]
fn checkpoint_roundtrip_and_corruption() {
    let m = InrModel::<f32>::init(grid_arch([5, 4], 3, vec![8, 6]), 6).unwrap();
    let bytes = m.to_checkpoint_bytes();
    assert!(bytes.starts_with(b"NPSV1\n"));
    let back = InrModel::<f32>::from_checkpoint_bytes(&bytes).unwrap();
    assert_eq!(back, m);

    let pe = InrModel::<f32>::init(
        ArchSpec {
            activation: Activation::ReluPe { num_frequencies: 3 },
            ..sine_arch(vec![4], 1.0)
        },
        1,
    )
    .unwrap();
    assert_eq!(
        InrModel::<f32>::from_checkpoint_bytes(&pe.to_checkpoint_bytes()).unwrap(),
        pe
    );

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        InrModel::<f32>::from_checkpoint_bytes(&bad),
        Err(Error::Format { .. })
    ));
    assert!(InrModel::<f32>::from_checkpoint_bytes(&bytes[..bytes.len() - 1]).is_err());
}
