use ndr_core::loss::{cramer_distance_quadrature, energy_loss, energy_loss_output_grad, mmd_loss, KernelSpec};
use ndr_core::ndarray::{Array1, Array2, Axis};
use ndr_core::rng;
use proptest::prelude::*;
use rand::Rng;

fn batch() -> impl Strategy<Value = (Array2<f64>, Array1<f64>)> {
    (1usize..6, 2usize..6).prop_flat_map(|(b, k)| {
        (
            proptest::collection::vec(-3.0f64..3.0, b * k).prop_map(move |v| Array2::from_shape_vec((b, k), v).unwrap()),
            proptest::collection::vec(-3.0f64..3.0, b).prop_map(Array1::from),
        )
    })
}

fn kernels() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        Just(KernelSpec::Energy),
        Just(KernelSpec::Linear),
        (0.2f64..3.0).prop_map(|bandwidth| KernelSpec::Gaussian { bandwidth }),
    ]
}

fn reversed(n: usize) -> Vec<usize> {
    (0..n).rev().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn losses_ignore_replicate_and_row_order((g, y) in batch(), kernel in kernels(), rot in 0usize..5) {
        let (b, k) = g.dim();
        let cols: Vec<usize> = (0..k).map(|j| (j + rot) % k).collect();
        let rows = reversed(b);
        let gc = g.select(Axis(1), &cols);
        let gr = g.select(Axis(0), &rows);
        let yr = y.select(Axis(0), &rows);
        let e = energy_loss(g.view(), y.view()).unwrap();
        prop_assert!((energy_loss(gc.view(), y.view()).unwrap() - e).abs() < 1e-12);
        prop_assert!((energy_loss(gr.view(), yr.view()).unwrap() - e).abs() < 1e-12);
        let m = mmd_loss(&kernel, g.view(), y.view()).unwrap();
        prop_assert!((mmd_loss(&kernel, gc.view(), y.view()).unwrap() - m).abs() < 1e-12);
        prop_assert!((mmd_loss(&kernel, gr.view(), yr.view()).unwrap() - m).abs() < 1e-12);
    }

    #[test]
    fn min_kernel_differs_from_energy_by_a_constant((g, y) in batch(), moves in proptest::collection::vec(-1.0f64..1.0, 36)) {
        let g = g + 5.0;
        let y = y + 5.0;
        let gap = |g: &Array2<f64>| mmd_loss(&KernelSpec::MinKernel, g.view(), y.view()).unwrap() - 0.5 * energy_loss(g.view(), y.view()).unwrap();
        let base = gap(&g);
        let (b, k) = g.dim();
        let moved = &g + &Array2::from_shape_fn((b, k), |(i, j)| moves[i * k + j]);
        prop_assert!((gap(&moved) - base).abs() < 1e-10);
    }

    #[test]
    fn small_step_against_subgradient_does_not_increase_loss((g, y) in batch()) {
        let (b, k) = g.dim();
        let mut vals: Vec<f64> = g.iter().chain(y.iter()).copied().collect();
        vals.sort_by(f64::total_cmp);
        let min_gap = vals.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        prop_assume!(min_gap > 1e-3);
        let grad = energy_loss_output_grad(g.view(), y.view()).unwrap();
        let t = 1e-5 * (b * k) as f64;
        let before = energy_loss(g.view(), y.view()).unwrap();
        let after = energy_loss((&g - &(&grad * t)).view(), y.view()).unwrap();
        prop_assert!(after <= before + 1e-15);
    }
}

/// Fixed generator law U[-0.5, 1.5] against responses U[-1, 1]; the batch
/// loss then estimates `2 int (F_g - F)^2 + E|Y - Y'|` without bias.
#[test]
fn empirical_loss_converges_to_population_identity() {
    let (n, k, batches) = (2000, 200, 20);
    let mut r = rng::stream(77, &[1]);
    let mut losses = Vec::with_capacity(batches);
    for _ in 0..batches {
        let g = Array2::from_shape_fn((n, k), |_| r.random_range(-0.5..1.5));
        let y = Array1::from_shape_fn(n, |_| r.random_range(-1.0..1.0));
        losses.push(energy_loss(g.view(), y.view()).unwrap());
    }
    let mean = losses.iter().sum::<f64>() / batches as f64;
    let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    let se = (var / batches as f64).sqrt();

    let fg = |t: f64| ((t + 0.5) / 2.0).clamp(0.0, 1.0);
    let fy = |t: f64| ((t + 1.0) / 2.0).clamp(0.0, 1.0);
    let cramer = cramer_distance_quadrature(fg, fy, -2.0, 2.0, 2000).unwrap();
    // E|Y - Y'| = 2/3 for Y uniform on an interval of length 2
    let expected = 2.0 * cramer + 2.0 / 3.0;
    assert!((mean - expected).abs() <= 3.0 * se, "mean {mean} expected {expected} se {se}");
}
