use pair::baselines::*;
use pair::penalties::tv_value;
use pair::simgen::{generate, ComponentLayout, ImageSource, Setting, SimConfig};
use pair::solver::{cell_seed, fit_with, FitOptions};
use pair::{HyperParams, ImageStack, Matrix, RandomStream, SourceDataset};

fn random_source(n: usize, d: usize, p: usize, q: usize, rng: &mut RandomStream) -> SourceDataset {
    let z = Matrix::from_vec(n, d, rng.normal_vec(n * d, 1.0)).unwrap();
    let x = ImageStack::from_vec(n, p, q, rng.normal_vec(n * p * q, 1.0)).unwrap();
    SourceDataset::new("s", rng.normal_vec(n, 1.0), z, x).unwrap()
}

fn noiseless(ds: &SourceDataset, beta: &[f64], c: &Matrix) -> SourceDataset {
    SourceDataset::new("s", ds.predict(beta, c), ds.z().clone(), ds.x().clone()).unwrap()
}

/// Solves a square system by Gaussian elimination with partial pivoting.
fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

fn design_row(ds: &SourceDataset, i: usize) -> Vec<f64> {
    ds.z()
        .row(i)
        .iter()
        .chain(ds.x().image(i))
        .copied()
        .collect()
}

#[test]
fn vr_recovers_noiseless_overdetermined() {
    let mut rng = RandomStream::new(1);
    let ds = random_source(30, 2, 3, 3, &mut rng);
    let beta = vec![1.0, -2.0];
    let c = Matrix::from_vec(3, 3, rng.normal_vec(9, 1.0)).unwrap();
    let fit = fit_vr(&noiseless(&ds, &beta, &c)).unwrap();
    for (a, b) in fit.betas[0].iter().zip(&beta) {
        assert!((a - b).abs() < 1e-8);
    }
    assert!(fit.coefs[0].sub(&c).frobenius_norm() < 1e-8);
}

#[test]
fn vr_interpolates_when_underdetermined() {
    let mut rng = RandomStream::new(2);
    let ds = random_source(12, 2, 4, 4, &mut rng);
    let fit = fit_vr(&ds).unwrap();
    let r = ds.residuals(&fit.betas[0], &fit.coefs[0]);
    assert!(r.iter().all(|v| v.abs() < 1e-8));
}

#[test]
fn vr_matches_pseudo_inverse_oracle() {
    let mut rng = RandomStream::new(3);
    let ds = random_source(5, 2, 3, 3, &mut rng);
    // wide full-row-rank design: x = A^T (A A^T)^-1 y
    let rows: Vec<Vec<f64>> = (0..5).map(|i| design_row(&ds, i)).collect();
    let gram: Vec<Vec<f64>> = rows
        .iter()
        .map(|a| {
            rows.iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum())
                .collect()
        })
        .collect();
    let alpha = gauss(gram, ds.y().to_vec());
    let oracle: Vec<f64> = (0..11)
        .map(|j| (0..5).map(|i| rows[i][j] * alpha[i]).sum())
        .collect();
    let fit = fit_vr(&ds).unwrap();
    let got: Vec<f64> = fit.betas[0]
        .iter()
        .chain(fit.coefs[0].as_slice())
        .copied()
        .collect();
    for (a, b) in got.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn vr_marginal_matches_per_pixel_regression() {
    let mut rng = RandomStream::new(4);
    let base = random_source(40, 1, 2, 2, &mut rng);
    let ds = SourceDataset::new(
        "s",
        base.y().to_vec(),
        Matrix::filled(40, 1, 1.0),
        base.x().clone(),
    )
    .unwrap();
    let fit = fit_vr_marginal(&ds).unwrap();
    let ybar = ds.y().iter().sum::<f64>() / 40.0;
    for k in 0..4 {
        let xs: Vec<f64> = (0..40).map(|i| ds.x().image(i)[k]).collect();
        let xbar = xs.iter().sum::<f64>() / 40.0;
        let sxy: f64 = xs
            .iter()
            .zip(ds.y())
            .map(|(x, y)| (x - xbar) * (y - ybar))
            .sum();
        let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
        assert!((fit.coefs[0].as_slice()[k] - sxy / sxx).abs() < 1e-10);
    }
    assert!((fit.betas[0][0] - ybar).abs() < 1e-12);
}

#[test]
fn lasso_single_column_is_soft_threshold() {
    let mut rng = RandomStream::new(5);
    let x = rng.normal_vec(20, 1.0);
    let y = rng.normal_vec(20, 1.0);
    let n = 20.0;
    let xty: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
    let xtx: f64 = x.iter().map(|a| a * a).sum();
    for alpha in [0.0, 0.05, 0.2, 5.0] {
        let prob = LassoProblem::new(vec![x.clone()], &y, 0);
        let res = prob.solve(alpha, &[0.0], LassoSettings::default());
        let expected = soft_threshold(xty / n, alpha) * n / xtx;
        assert!((res.coef[0] - expected).abs() < 1e-12, "alpha {alpha}");
    }
}

#[test]
fn lasso_objective_never_increases() {
    let mut rng = RandomStream::new(6);
    let ds = random_source(30, 2, 5, 5, &mut rng);
    let prob = LassoProblem::from_dataset(&ds);
    let start = vec![0.0; 27];
    let res = prob.solve(0.05, &start, LassoSettings::default());
    assert!(res.converged);
    let mut prev = prob.objective(&start, 0.05);
    for &v in &res.objective_trace {
        assert!(v <= prev + 1e-12 * prev.abs(), "{v} > {prev}");
        prev = v;
    }
}

#[test]
fn rvr_zero_penalty_matches_vr() {
    let mut rng = RandomStream::new(7);
    let ds = random_source(60, 2, 3, 3, &mut rng);
    let val = random_source(20, 2, 3, 3, &mut rng);
    let settings = LassoSettings {
        tol: 1e-10,
        max_sweeps: 100_000,
    };
    let r = fit_rvr(&ds, &[0.0], &val, settings).unwrap();
    let v = fit_vr(&ds).unwrap();
    for (a, b) in r.betas[0]
        .iter()
        .chain(r.coefs[0].as_slice())
        .zip(v.betas[0].iter().chain(v.coefs[0].as_slice()))
    {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn rvr_huge_penalty_zeroes_image_and_fits_covariates() {
    let mut rng = RandomStream::new(8);
    let ds = random_source(40, 3, 3, 3, &mut rng);
    let val = random_source(10, 3, 3, 3, &mut rng);
    let fit = fit_rvr(&ds, &[1e6], &val, LassoSettings::default()).unwrap();
    assert_eq!(fit.coefs[0].count_nonzero(0.0), 0);
    let ols = pair::linalg::lstsq_min_norm(ds.z(), ds.y()).x;
    for (a, b) in fit.betas[0].iter().zip(&ols) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn rvr_picks_lowest_validation_rmse() {
    let mut rng = RandomStream::new(9);
    let c = Matrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 });
    let train = random_source(40, 2, 4, 4, &mut rng);
    let val = random_source(20, 2, 4, 4, &mut rng);
    let train = SourceDataset::new(
        "s",
        train
            .predict(&[0.0, 0.0], &c)
            .iter()
            .map(|v| v + 0.3 * rng.normal())
            .collect(),
        train.z().clone(),
        train.x().clone(),
    )
    .unwrap();
    let val = noiseless(&val, &[0.0, 0.0], &c);
    let grid = [0.001, 0.01, 0.1, 1.0];
    let fit = fit_rvr(&train, &grid, &val, LassoSettings::default()).unwrap();
    let chosen: f64 = fit.tuning[0].1.parse().unwrap();
    let best = grid
        .iter()
        .map(|&a| {
            let f = fit_rvr(&train, &[a], &val, LassoSettings::default()).unwrap();
            (a, rmse_on(&val, &f.betas[0], &f.coefs[0]))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert_eq!(chosen, best.0);
}

#[test]
fn tr_recovers_rank_one_signal() {
    let mut rng = RandomStream::new(10);
    let u = rng.normal_vec(6, 1.0);
    let v = rng.normal_vec(5, 1.0);
    let c = Matrix::from_fn(6, 5, |i, j| u[i] * v[j]);
    let ds = noiseless(&random_source(200, 2, 6, 5, &mut rng), &[0.5, 1.0], &c);
    let fit = fit_lowrank(&ds, 1, 0.0, LowRankSettings::default()).unwrap();
    let rel = fit.coefficient().sub(&c).frobenius_norm() / c.frobenius_norm();
    assert!(rel <= 1e-3, "relative error {rel}");
    assert_eq!(fit.u.cols(), 1);
}

#[test]
fn rank_zero_is_rejected() {
    let mut rng = RandomStream::new(11);
    let ds = random_source(20, 2, 3, 3, &mut rng);
    assert!(fit_lowrank(&ds, 0, 0.0, LowRankSettings::default()).is_err());
    assert!(fit_tr(&ds, &[], &ds, LowRankSettings::default()).is_err());
}

fn assert_non_increasing(trace: &[f64]) {
    for w in trace.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12, "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn lowrank_objectives_are_monotone_and_factored() {
    let mut rng = RandomStream::new(12);
    let c = Matrix::from_fn(8, 8, |i, j| {
        if (2..6).contains(&i) && (1..4).contains(&j) {
            1.0
        } else {
            0.0
        }
    });
    let ds = random_source(120, 2, 8, 8, &mut rng);
    let ds = SourceDataset::new(
        "s",
        ds.predict(&[0.0, 1.0], &c)
            .iter()
            .map(|v| v + 0.5 * rng.normal())
            .collect(),
        ds.z().clone(),
        ds.x().clone(),
    )
    .unwrap();
    for (k, alpha) in [(2, 0.0), (2, 0.05), (3, 0.2)] {
        let fit = fit_lowrank(&ds, k, alpha, LowRankSettings::default()).unwrap();
        assert_non_increasing(&fit.objective_trace);
        assert_eq!((fit.u.cols(), fit.v.cols()), (k, k));
    }
}

#[test]
fn rtr_grid_records_rank_and_penalty() {
    let mut rng = RandomStream::new(13);
    let ds = random_source(60, 2, 5, 5, &mut rng);
    let val = random_source(20, 2, 5, 5, &mut rng);
    let fit = fit_rtr(&ds, &[1, 2], &[0.01, 0.1], &val, LowRankSettings::default()).unwrap();
    assert_eq!(fit.method, Method::Rtr);
    assert_eq!(fit.tuning.len(), 2);
}

fn small_hp() -> HyperParams {
    HyperParams {
        max_epochs: 30,
        patience: 5,
        inner_steps: 10,
        seed: 21,
        ..Default::default()
    }
}

#[test]
fn sirtv_is_pair_with_one_frozen_component() {
    let mut rng = RandomStream::new(14);
    let ds = random_source(50, 2, 6, 6, &mut rng);
    let val = random_source(20, 2, 6, 6, &mut rng);
    let hp = small_hp();
    let (_, report) = fit_sirtv(&ds, &[0.1], &val, &hp).unwrap();
    let cell = HyperParams {
        r_components: 1,
        lambda_tv: 0.1,
        gamma_sip: 0.0,
        ..hp.clone()
    };
    let direct = fit_with(
        std::slice::from_ref(&ds),
        std::slice::from_ref(&val),
        &HyperParams {
            seed: cell_seed(hp.seed, &cell),
            ..cell
        },
        &FitOptions {
            frozen_weights: Some(Matrix::filled(1, 1, 1.0)),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(report, direct);
}

#[test]
fn sirtv_heavy_penalty_flattens_coefficient() {
    let mut rng = RandomStream::new(15);
    let c = Matrix::from_fn(6, 6, |i, j| ((i * 6 + j) % 5) as f64 - 2.0);
    let ds = noiseless(&random_source(60, 2, 6, 6, &mut rng), &[1.0, 0.0], &c);
    let val = noiseless(&random_source(20, 2, 6, 6, &mut rng), &[1.0, 0.0], &c);
    let hp = HyperParams {
        max_epochs: 100,
        patience: 100,
        ..small_hp()
    };
    let (free, _) = fit_sirtv(&ds, &[0.0], &val, &hp).unwrap();
    let (heavy, _) = fit_sirtv(&ds, &[1e3], &val, &hp).unwrap();
    assert!(tv_value(&heavy.coefs[0]) < tv_value(&free.coefs[0]));
}

#[test]
fn sirtv_unpenalized_recovers_noiseless_signal() {
    let mut rng = RandomStream::new(16);
    let c = Matrix::from_vec(3, 3, rng.normal_vec(9, 1.0)).unwrap();
    let beta = [0.3, -0.7];
    let ds = noiseless(&random_source(100, 2, 3, 3, &mut rng), &beta, &c);
    let val = noiseless(&random_source(30, 2, 3, 3, &mut rng), &beta, &c);
    let hp = HyperParams {
        max_epochs: 500,
        patience: 50,
        ..small_hp()
    };
    let (fit, _) = fit_sirtv(&ds, &[0.0], &val, &hp).unwrap();
    let rel = fit.coefs[0].sub(&c).frobenius_norm() / c.frobenius_norm();
    assert!(rel < 1e-3, "relative error {rel}");
}

#[test]
fn pooling_identical_sources_matches_sirtv() {
    let mut rng = RandomStream::new(17);
    let ds = random_source(40, 2, 5, 5, &mut rng);
    let val = random_source(15, 2, 5, 5, &mut rng);
    let hp = small_hp();
    let (sir, _) = fit_sirtv(&ds, &[0.1], &val, &hp).unwrap();
    let (pool, _) = fit_pool(
        &[ds.clone(), ds.clone()],
        &[0.1],
        &[val.clone(), val.clone()],
        false,
        &hp,
    )
    .unwrap();
    assert_eq!(pool.coefs[0], pool.coefs[1]);
    let rel = pool.coefs[0].sub(&sir.coefs[0]).frobenius_norm() / sir.coefs[0].frobenius_norm();
    assert!(rel < 1e-6, "relative difference {rel}");
}

#[test]
fn stage_indicator_adds_dummy_columns() {
    let mut rng = RandomStream::new(18);
    let a = random_source(10, 2, 3, 3, &mut rng).with_intercept();
    let b = random_source(12, 2, 3, 3, &mut rng).with_intercept();
    assert_eq!(
        pool_bundle(&[a.clone(), b.clone()], true).unwrap().d(),
        a.d() + 1
    );
    assert_eq!(
        pool_bundle(&[a.clone(), b.clone()], false).unwrap().d(),
        a.d()
    );
    let hp = HyperParams {
        max_epochs: 3,
        patience: 1,
        inner_steps: 2,
        ..Default::default()
    };
    let (fit, _) = fit_pool(
        &[a.clone(), b.clone()],
        &[0.1],
        &[a.clone(), b.clone()],
        true,
        &hp,
    )
    .unwrap();
    assert_eq!(fit.betas[0].len(), a.d());
    let no_intercept = random_source(10, 2, 3, 3, &mut rng);
    assert!(fit_pool(
        &[no_intercept.clone(), no_intercept.clone()],
        &[0.1],
        &[no_intercept.clone(), no_intercept],
        true,
        &hp
    )
    .is_err());
    assert!(fit_pool(
        std::slice::from_ref(&a),
        &[0.1],
        std::slice::from_ref(&a),
        false,
        &hp
    )
    .is_err());
}

#[test]
fn predictions_use_the_shared_evaluator() {
    let mut rng = RandomStream::new(19);
    let ds = random_source(15, 2, 3, 3, &mut rng);
    let fit = fit_vr(&ds).unwrap();
    assert_eq!(
        fit.predict(std::slice::from_ref(&ds)).unwrap()[0],
        ds.predict(&fit.betas[0], &fit.coefs[0])
    );
}

#[test]
fn pooling_loses_to_per_source_fits_under_heterogeneity() {
    let hp = HyperParams {
        max_epochs: 200,
        patience: 20,
        ..Default::default()
    };
    let (mut pooled, mut separate) = (0.0, 0.0);
    for seed in 0..10 {
        let cfg = SimConfig {
            setting: Setting::S3,
            p: 24,
            q: 24,
            layout: ComponentLayout {
                size: 6.0,
                ..Default::default()
            },
            seed,
            ..Default::default()
        };
        let data = generate(&cfg, &ImageSource::Gaussian).unwrap();
        let hp = HyperParams { seed, ..hp.clone() };
        let (_, pool) = fit_pool(&data.train, &[0.01, 0.1], &data.val, false, &hp).unwrap();
        pooled += pool.best_val_loss();
        let mut s = 0.0;
        for t in 0..3 {
            let (_, r) = fit_sirtv(&data.train[t], &[0.01, 0.1], &data.val[t], &hp).unwrap();
            s += r.best_val_loss();
        }
        separate += s / 3.0;
    }
    assert!(pooled >= separate, "pooled {pooled} vs separate {separate}");
}
