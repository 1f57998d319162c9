use pair::eval::rmse;
use pair::io::{quantize, HeatmapScale};
use pair::objective::{average_data_loss, coefficients, source_loss};
use pair::penalties::tv_value;
use pair::{ImageStack, Matrix, RandomStream, SourceDataset};
use proptest::prelude::*;

fn dataset(seed: u64, n: usize, d: usize, p: usize, q: usize) -> SourceDataset {
    let mut rng = RandomStream::new(seed);
    let z = Matrix::from_vec(n, d, rng.normal_vec(n * d, 1.0)).unwrap();
    let x = ImageStack::from_vec(n, p, q, rng.normal_vec(n * p * q, 1.0)).unwrap();
    SourceDataset::new("s", rng.normal_vec(n, 2.0), z, x).unwrap()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn rmse_squared_is_twice_the_source_loss(seed in any::<u64>(), n in 1usize..30, d in 1usize..4, p in 1usize..5, q in 1usize..5) {
        let ds = dataset(seed, n, d, p, q);
        let mut rng = RandomStream::new(seed ^ 1);
        let beta = rng.normal_vec(d, 1.0);
        let c = Matrix::from_vec(p, q, rng.normal_vec(p * q, 1.0)).unwrap();
        let r = rmse(&ds.predict(&beta, &c), ds.y()).unwrap();
        prop_assert!(close(r * r, 2.0 * source_loss(&ds, &beta, &c).unwrap(), 1e-12));
    }

    #[test]
    fn data_loss_ignores_component_rescaling(seed in any::<u64>(), scale in 0.01f64..100.0, r_pick in 0usize..3) {
        let bundle: Vec<SourceDataset> = (0..2).map(|t| dataset(seed.wrapping_add(t), 12, 2, 3, 4)).collect();
        let mut rng = RandomStream::new(seed ^ 2);
        let betas: Vec<Vec<f64>> = (0..2).map(|_| rng.normal_vec(2, 1.0)).collect();
        let comps: Vec<Matrix> = (0..3).map(|_| Matrix::from_vec(3, 4, rng.normal_vec(12, 1.0)).unwrap()).collect();
        let w = Matrix::from_vec(2, 3, rng.normal_vec(6, 1.0)).unwrap();
        let before = average_data_loss(&bundle, &betas, &coefficients(&comps, &w)).unwrap();
        let mut comps2 = comps.clone();
        comps2[r_pick] = comps2[r_pick].scaled(scale);
        let w2 = Matrix::from_fn(2, 3, |t, r| if r == r_pick { w.get(t, r) / scale } else { w.get(t, r) });
        let after = average_data_loss(&bundle, &betas, &coefficients(&comps2, &w2)).unwrap();
        prop_assert!(close(before, after, 1e-10));
    }

    #[test]
    fn tv_is_absolutely_homogeneous(seed in any::<u64>(), p in 1usize..9, q in 1usize..9, c in -50.0f64..50.0) {
        let mut rng = RandomStream::new(seed);
        let b = Matrix::from_vec(p, q, rng.normal_vec(p * q, 1.0)).unwrap();
        prop_assert!(close(tv_value(&b.scaled(c)), c.abs() * tv_value(&b), 1e-12) || tv_value(&b) == 0.0);
    }

    #[test]
    fn heatmap_quantization_stays_within_half_a_step(seed in any::<u64>(), p in 1usize..10, q in 1usize..10, symmetric in any::<bool>()) {
        let mut rng = RandomStream::new(seed);
        let m = Matrix::from_vec(p, q, rng.normal_vec(p * q, 3.0)).unwrap();
        let scale = if symmetric { HeatmapScale::Symmetric } else { HeatmapScale::MinMax };
        let (samples, affine) = quantize(&m, scale).unwrap();
        for (v, s) in m.as_slice().iter().zip(samples) {
            prop_assert!((affine.value(s) - v).abs() <= 0.5 * affine.scale + 1e-12 * v.abs().max(1.0));
        }
    }
}
