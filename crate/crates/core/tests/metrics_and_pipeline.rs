use ndr_core::datagen::{OracleSampler, SimModel};
use ndr_core::dataio::{prepare, split, SplitSpec, TabularDataset};
use ndr_core::metrics::{cdf_l2_error, CdfErrorSpec};

#[test]
fn cdf_error_of_the_true_sampler_shrinks_with_more_draws() {
    let oracle = OracleSampler { model: SimModel::M2a };
    let mean_err = |k_cdf: usize| {
        let spec = CdfErrorSpec { n_x: 50, grid_n: 500, k_cdf };
        let errs: Vec<f64> = (0..8).map(|s| cdf_l2_error(&oracle, SimModel::M2a, &spec, s).unwrap()).collect();
        assert!(errs.iter().all(|&e| e >= 0.0));
        errs.iter().sum::<f64>() / errs.len() as f64
    };
    let (small, mid, large) = (mean_err(50), mean_err(200), mean_err(800));
    assert!(small > mid && mid > large, "{small} {mid} {large}");
    // the error scales like k^{-1/2}, so quadrupling k roughly halves it
    assert!((small / mid - 2.0).abs() < 0.5);
}

#[test]
fn cdf_error_is_reproducible() {
    let oracle = OracleSampler { model: SimModel::M3 };
    let spec = CdfErrorSpec { n_x: 40, grid_n: 300, k_cdf: 100 };
    let a = cdf_l2_error(&oracle, SimModel::M3, &spec, 9).unwrap();
    let b = cdf_l2_error(&oracle, SimModel::M3, &spec, 9).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

fn table(seed: u64) -> TabularDataset {
    TabularDataset {
        feature_names: (1..=5).map(|j| format!("x{j}")).collect(),
        response_name: "y".into(),
        data: SimModel::M1bAdd.sample(400, seed).unwrap(),
    }
}

#[test]
fn scaler_does_not_see_test_rows() {
    let ds = table(1);
    let base = prepare(&ds, 7, 1.5, false).unwrap();
    let (_, _, test) = split(&ds, &SplitSpec::new(7)).unwrap();
    let mut perturbed = ds.clone();
    for t in test.data.y.iter() {
        let i = ds.data.y.iter().position(|v| v == t).unwrap();
        perturbed.data.y[i] += 0.01;
        perturbed.data.x.row_mut(i).mapv_inplace(|v| v * 0.99);
    }
    let moved = prepare(&perturbed, 7, 1.5, false).unwrap();
    assert_eq!(base.scaler, moved.scaler);
    assert_eq!(base.train.data.x, moved.train.data.x);
    assert_ne!(base.test.data.y, moved.test.data.y);
}

#[test]
fn pipeline_is_deterministic_per_seed() {
    let ds = table(2);
    let a = prepare(&ds, 3, 1.5, false).unwrap();
    let b = prepare(&ds, 3, 1.5, false).unwrap();
    let c = prepare(&ds, 4, 1.5, false).unwrap();
    assert_eq!(a.train.data.y, b.train.data.y);
    assert_eq!(a.test.data.x, b.test.data.x);
    assert_ne!(a.train.data.y, c.train.data.y);
}
