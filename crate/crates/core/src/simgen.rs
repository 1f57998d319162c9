//! Synthetic benchmark data: rasterized spatial components, weight-matrix
//! settings and the response-generating process.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{PairError, Result};
use crate::rng::RandomStream;
use crate::types::{ImageMatrix, ImageStack, Matrix, PairParams, SourceDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Square,
    Triangle,
    Star,
    Circle,
    Pentagon,
}

/// A filled shape. Coordinates are continuous with pixel `(i, j)` centered
/// at `(i + 0.5, j + 0.5)`; `size` is the side length for squares and the
/// bounding extent (twice the circumradius) for the other shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub center: (f64, f64),
    pub size: f64,
    pub amplitude: f64,
}

fn point_in_polygon(pt: (f64, f64), poly: &[(f64, f64)]) -> bool {
    let (y, x) = pt;
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (yi, xi) = poly[i];
        let (yj, xj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn regular_polygon(center: (f64, f64), radius: f64, vertices: usize) -> Vec<(f64, f64)> {
    // first vertex points up (towards row 0)
    (0..vertices)
        .map(|k| {
            let a = -std::f64::consts::FRAC_PI_2
                + 2.0 * std::f64::consts::PI * k as f64 / vertices as f64;
            (center.0 + radius * a.sin(), center.1 + radius * a.cos())
        })
        .collect()
}

fn star_polygon(center: (f64, f64), radius: f64) -> Vec<(f64, f64)> {
    // inner radius of a regular pentagram
    let inner =
        radius * (std::f64::consts::PI / 10.0).sin() / (3.0 * std::f64::consts::PI / 10.0).sin();
    (0..10)
        .map(|k| {
            let a = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * k as f64 / 5.0;
            let rad = if k % 2 == 0 { radius } else { inner };
            (center.0 + rad * a.sin(), center.1 + rad * a.cos())
        })
        .collect()
}

pub fn rasterize(spec: &ShapeSpec, p: usize, q: usize) -> Result<ImageMatrix> {
    let half = spec.size / 2.0;
    let (cr, cc) = spec.center;
    if !(spec.size > 0.0)
        || cr - half < 0.0
        || cc - half < 0.0
        || cr + half > p as f64
        || cc + half > q as f64
    {
        return Err(PairError::InvalidArgument(format!(
            "{:?} of size {} at {:?} does not fit a {p}x{q} canvas",
            spec.kind, spec.size, spec.center
        )));
    }
    let inside: Box<dyn Fn((f64, f64)) -> bool> = match spec.kind {
        ShapeKind::Square => {
            // s x s block anchored at the rounded top-left corner
            let side = spec.size.round();
            let (r0, c0) = ((cr - half).round(), (cc - half).round());
            Box::new(move |(y, x)| y > r0 && y < r0 + side && x > c0 && x < c0 + side)
        }
        ShapeKind::Circle => {
            Box::new(move |(y, x)| (y - cr).powi(2) + (x - cc).powi(2) <= half * half)
        }
        ShapeKind::Triangle => {
            let poly = vec![
                (cr - half, cc),
                (cr + half, cc + half),
                (cr + half, cc - half),
            ];
            Box::new(move |pt| point_in_polygon(pt, &poly))
        }
        ShapeKind::Pentagon => {
            let poly = regular_polygon((cr, cc), half, 5);
            Box::new(move |pt| point_in_polygon(pt, &poly))
        }
        ShapeKind::Star => {
            let poly = star_polygon((cr, cc), half);
            Box::new(move |pt| point_in_polygon(pt, &poly))
        }
    };
    Ok(Matrix::from_fn(p, q, |i, j| {
        if inside((i as f64 + 0.5, j as f64 + 0.5)) {
            spec.amplitude
        } else {
            0.0
        }
    }))
}

/// Geometry of the three benchmark components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComponentLayout {
    pub size: f64,
    pub amplitude: f64,
    /// Shape placed in the bottom-right corner.
    pub third_shape: ShapeKind,
}

impl Default for ComponentLayout {
    fn default() -> Self {
        Self {
            size: 16.0,
            amplitude: 1.0,
            third_shape: ShapeKind::Pentagon,
        }
    }
}

/// Square top-left, triangle top-right, pentagon (or star) bottom-right,
/// each centered in its quadrant.
pub fn make_components(p: usize, q: usize, layout: &ComponentLayout) -> Result<Vec<ImageMatrix>> {
    let (rp, cq) = (p as f64, q as f64);
    let specs = [
        (ShapeKind::Square, (rp * 0.25, cq * 0.25)),
        (ShapeKind::Triangle, (rp * 0.25, cq * 0.75)),
        (layout.third_shape, (rp * 0.75, cq * 0.75)),
    ];
    specs
        .iter()
        .map(|&(kind, center)| {
            rasterize(
                &ShapeSpec {
                    kind,
                    center,
                    size: layout.size,
                    amplitude: layout.amplitude,
                },
                p,
                q,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    S1,
    S2,
    S3,
}

/// `T x R` weights for a setting: i.i.d. `U[0.5, 1.5]` (S1); the evenly
/// spaced values `0, ..., 2` randomly permuted (S2); S2 with one random entry
/// per row zeroed (S3).
pub fn make_weights(
    setting: Setting,
    t_count: usize,
    r_count: usize,
    rng: &mut RandomStream,
) -> Matrix {
    let k = t_count * r_count;
    match setting {
        Setting::S1 => Matrix::from_fn(t_count, r_count, |_, _| rng.uniform(0.5, 1.5)),
        Setting::S2 | Setting::S3 => {
            let mut values: Vec<f64> = if k == 1 {
                vec![0.0]
            } else {
                (0..k).map(|i| 2.0 * i as f64 / (k - 1) as f64).collect()
            };
            rng.shuffle(&mut values);
            let mut w = Matrix::from_vec(t_count, r_count, values).expect("positive dimensions");
            if setting == Setting::S3 {
                for t in 0..t_count {
                    let r = rng.below(r_count);
                    w.set(t, r, 0.0);
                }
            }
            w
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub setting: Setting,
    pub t_sources: usize,
    pub r_components: usize,
    /// Samples per source before splitting.
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub q: usize,
    pub noise_sd: f64,
    /// Prepend a constant-1 covariate column whose true coefficient is 0.
    pub intercept: bool,
    pub layout: ComponentLayout,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            setting: Setting::S1,
            t_sources: 3,
            r_components: 3,
            n: 300,
            d: 5,
            p: 64,
            q: 64,
            noise_sd: 1.0,
            intercept: true,
            layout: ComponentLayout::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    Gaussian,
    /// An image-stack file or a directory of PGM images.
    FromFiles(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub train: Vec<SourceDataset>,
    pub val: Vec<SourceDataset>,
    pub test: Vec<SourceDataset>,
    pub truth: PairParams,
}

/// Sizes of the 60/20/20 split: floor, floor, remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 60 / 100;
    let val = n * 20 / 100;
    (train, val, n - train - val)
}

/// Standardizes each pixel position to zero mean and unit variance across
/// the stack; constant pixels become 0.
pub fn standardize_pixels(stack: &ImageStack) -> ImageStack {
    let n = stack.len();
    let k = stack.pixels();
    let (p, q) = stack.image_shape();
    let mut mean = vec![0.0; k];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(stack.image(i)) {
            *m += v / n as f64;
        }
    }
    let mut var = vec![0.0; k];
    for i in 0..n {
        for ((s, v), m) in var.iter_mut().zip(stack.image(i)).zip(&mean) {
            *s += (v - m).powi(2) / n as f64;
        }
    }
    let mut data = Vec::with_capacity(n * k);
    for i in 0..n {
        for ((v, m), s) in stack.image(i).iter().zip(&mean).zip(&var) {
            data.push(if *s > 0.0 { (v - m) / s.sqrt() } else { 0.0 });
        }
    }
    ImageStack::from_vec(n, p, q, data).expect("shape preserved")
}

fn load_images(
    path: &std::path::Path,
    needed: usize,
    p: usize,
    q: usize,
    rng: &mut RandomStream,
) -> Result<ImageStack> {
    let stack = if path.is_dir() {
        let images = crate::io::read_pgm_dir(path)?;
        ImageStack::from_images(&images)?
    } else {
        crate::io::read_image_stack(path)?
    };
    if stack.image_shape() != (p, q) {
        return Err(PairError::Dimension(format!(
            "images in {} are {:?}, expected ({p}, {q})",
            path.display(),
            stack.image_shape()
        )));
    }
    if stack.len() < needed {
        return Err(PairError::InvalidArgument(format!(
            "{} provides {} images, {needed} needed",
            path.display(),
            stack.len()
        )));
    }
    let mut idx: Vec<usize> = (0..stack.len()).collect();
    rng.shuffle(&mut idx);
    idx.truncate(needed);
    Ok(standardize_pixels(&stack.select(&idx)))
}

/// Draws a benchmark bundle. Stream layout under `cfg.seed`: child 0 draws
/// the weights, child 1 the covariate coefficients, child 2 the external
/// image selection, child `3 + t` the samples of source `t`.
pub fn generate(cfg: &SimConfig, images: &ImageSource) -> Result<SimData> {
    if cfg.t_sources == 0 || cfg.r_components == 0 || cfg.d == 0 || cfg.n < 5 {
        return Err(PairError::InvalidArgument(
            "simulation needs positive T, R, d and at least 5 samples per source".into(),
        ));
    }
    if !(cfg.noise_sd >= 0.0) {
        return Err(PairError::InvalidArgument(
            "noise_sd must be nonnegative".into(),
        ));
    }
    let root = RandomStream::new(cfg.seed);
    let (t_count, r_count, n, d, p, q) =
        (cfg.t_sources, cfg.r_components, cfg.n, cfg.d, cfg.p, cfg.q);

    let base = make_components(p, q, &cfg.layout)?;
    if r_count > base.len() {
        return Err(PairError::InvalidArgument(format!(
            "at most {} benchmark components are available",
            base.len()
        )));
    }
    let components: Vec<ImageMatrix> = base.into_iter().take(r_count).collect();
    let weights = make_weights(cfg.setting, t_count, r_count, &mut root.split(0));
    let mut beta_rng = root.split(1);
    let raw_betas: Vec<Vec<f64>> = (0..t_count).map(|_| beta_rng.normal_vec(d, 1.0)).collect();

    let external = match images {
        ImageSource::Gaussian => None,
        ImageSource::FromFiles(path) => {
            Some(load_images(path, n * t_count, p, q, &mut root.split(2))?)
        }
    };

    let truth_betas: Vec<Vec<f64>> = raw_betas
        .iter()
        .map(|b| {
            if cfg.intercept {
                std::iter::once(0.0).chain(b.iter().copied()).collect()
            } else {
                b.clone()
            }
        })
        .collect();
    let truth = PairParams::new(truth_betas, components, weights)?;

    let (n_train, n_val, _) = split_sizes(n);
    let mut train = Vec::with_capacity(t_count);
    let mut val = Vec::with_capacity(t_count);
    let mut test = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let mut rng = root.split(3 + t as u64);
        let z_raw = rng.normal_vec(n * d, 1.0);
        let x = match &external {
            None => ImageStack::from_vec(n, p, q, rng.normal_vec(n * p * q, 1.0))?,
            Some(stack) => stack.select(&(t * n..(t + 1) * n).collect::<Vec<_>>()),
        };
        let noise = rng.normal_vec(n, cfg.noise_sd.max(0.0));
        let z = if cfg.intercept {
            Matrix::from_fn(
                n,
                d + 1,
                |i, j| if j == 0 { 1.0 } else { z_raw[i * d + j - 1] },
            )
        } else {
            Matrix::from_vec(n, d, z_raw)?
        };
        let c = truth.compose(t)?;
        let xc = x.inner_products(&c);
        let y: Vec<f64> = (0..n)
            .map(|i| crate::types::dot(z.row(i), &truth.betas[t]) + xc[i] + noise[i])
            .collect();
        let ds = SourceDataset::new(format!("source{}", t + 1), y, z, x)?;
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        train.push(ds.select(&order[..n_train]));
        val.push(ds.select(&order[n_train..n_train + n_val]));
        test.push(ds.select(&order[n_train + n_val..]));
    }
    Ok(SimData {
        train,
        val,
        test,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalties::tv_value;
    use crate::rng::seeded_rng;
    use crate::types::{classify_sharing, SharingStructure, DEFAULT_ZERO_TOL};

    #[test]
    fn square_has_size_squared_pixels() {
        for s in [1usize, 4, 7, 16] {
            let spec = ShapeSpec {
                kind: ShapeKind::Square,
                center: (20.0, 20.0),
                size: s as f64,
                amplitude: 2.0,
            };
            assert_eq!(rasterize(&spec, 40, 40).unwrap().count_nonzero(0.0), s * s);
        }
    }

    #[test]
    fn disk_area_within_perimeter_bound() {
        for r in [3.0f64, 5.5, 8.0, 12.0] {
            let spec = ShapeSpec {
                kind: ShapeKind::Circle,
                center: (32.0, 32.0),
                size: 2.0 * r,
                amplitude: 1.0,
            };
            let count = rasterize(&spec, 64, 64).unwrap().count_nonzero(0.0) as f64;
            let area = std::f64::consts::PI * r * r;
            assert!((count - area).abs() <= 4.0 * r, "r={r}: {count} vs {area}");
        }
    }

    #[test]
    fn zero_amplitude_is_zero() {
        for kind in [
            ShapeKind::Square,
            ShapeKind::Triangle,
            ShapeKind::Star,
            ShapeKind::Circle,
            ShapeKind::Pentagon,
        ] {
            let spec = ShapeSpec {
                kind,
                center: (10.0, 10.0),
                size: 12.0,
                amplitude: 0.0,
            };
            assert_eq!(rasterize(&spec, 20, 20).unwrap(), Matrix::zeros(20, 20));
        }
    }

    #[test]
    fn out_of_bounds_rejected() {
        let spec = ShapeSpec {
            kind: ShapeKind::Square,
            center: (4.0, 10.0),
            size: 10.0,
            amplitude: 1.0,
        };
        assert!(rasterize(&spec, 20, 20).is_err());
    }

    #[test]
    fn star_and_triangle_fill_plausible_areas() {
        let area = |kind| {
            rasterize(
                &ShapeSpec {
                    kind,
                    center: (32.0, 32.0),
                    size: 40.0,
                    amplitude: 1.0,
                },
                64,
                64,
            )
            .unwrap()
            .count_nonzero(0.0) as f64
        };
        // triangle: half of 40 x 40; pentagon: 2.5 R^2 sin 72deg; star: pentagram area
        assert!((area(ShapeKind::Triangle) - 800.0).abs() < 40.0);
        let pent = 2.5 * 400.0 * (72f64.to_radians()).sin();
        assert!((area(ShapeKind::Pentagon) - pent).abs() < 60.0);
        let star = area(ShapeKind::Star);
        assert!(star > 200.0 && star < pent);
    }

    #[test]
    fn benchmark_components_layout() {
        let comps = make_components(64, 64, &ComponentLayout::default()).unwrap();
        assert_eq!(comps.len(), 3);
        for a in 0..3 {
            assert!(tv_value(&comps[a]) > 0.0);
            for b in a + 1..3 {
                let overlap = comps[a]
                    .as_slice()
                    .iter()
                    .zip(comps[b].as_slice())
                    .filter(|(x, y)| **x != 0.0 && **y != 0.0)
                    .count();
                assert_eq!(overlap, 0);
            }
        }
        for i in 0..64 {
            for j in 0..64 {
                if comps[0].get(i, j) != 0.0 {
                    assert!(i < 32 && j < 32);
                }
                if comps[1].get(i, j) != 0.0 {
                    assert!(i < 32 && j >= 32);
                }
                if comps[2].get(i, j) != 0.0 {
                    assert!(i >= 32 && j >= 32);
                }
            }
        }
    }

    #[test]
    fn weight_settings() {
        let mut rng = seeded_rng(1);
        for _ in 0..50 {
            let w1 = make_weights(Setting::S1, 3, 3, &mut rng);
            assert!(w1.as_slice().iter().all(|v| (0.5..=1.5).contains(v)));
            assert_eq!(
                classify_sharing(&w1, DEFAULT_ZERO_TOL),
                SharingStructure::FullySharing
            );

            let w2 = make_weights(Setting::S2, 3, 3, &mut rng);
            let mut vals = w2.as_slice().to_vec();
            vals.sort_by(f64::total_cmp);
            let expected: Vec<f64> = (0..9).map(|i| 0.25 * i as f64).collect();
            assert_eq!(vals, expected);

            let w3 = make_weights(Setting::S3, 3, 3, &mut rng);
            for t in 0..3 {
                let support = w3.row(t).iter().filter(|v| **v != 0.0).count();
                assert!(support < 3);
                assert!(w3.row(t).contains(&0.0));
            }
        }
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_sizes(300), (180, 60, 60));
        assert_eq!(split_sizes(601), (360, 120, 121));
    }

    fn small_cfg() -> SimConfig {
        SimConfig {
            n: 40,
            p: 16,
            q: 16,
            layout: ComponentLayout {
                size: 4.0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_reproducible_and_split() {
        let cfg = small_cfg();
        let a = generate(&cfg, &ImageSource::Gaussian).unwrap();
        let b = generate(&cfg, &ImageSource::Gaussian).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train[0].n(), 24);
        assert_eq!(a.val[0].n(), 8);
        assert_eq!(a.test[0].n(), 8);
        assert_eq!(a.train[0].d(), 6);
        assert_eq!(a.truth.betas[0][0], 0.0);
        let other = generate(&SimConfig { seed: 1, ..cfg }, &ImageSource::Gaussian).unwrap();
        assert_ne!(a.train[0].y(), other.train[0].y());
    }

    #[test]
    fn noiseless_truth_fits_exactly() {
        let cfg = SimConfig {
            noise_sd: 0.0,
            ..small_cfg()
        };
        let sim = generate(&cfg, &ImageSource::Gaussian).unwrap();
        for (t, ds) in sim.test.iter().enumerate() {
            let pred = ds.predict(&sim.truth.betas[t], &sim.truth.compose(t).unwrap());
            let err = ds
                .y()
                .iter()
                .zip(&pred)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-10);
        }
    }

    #[test]
    fn true_coefficients_are_unions_of_selected_supports() {
        let cfg = SimConfig {
            setting: Setting::S3,
            ..small_cfg()
        };
        let sim = generate(&cfg, &ImageSource::Gaussian).unwrap();
        for t in 0..3 {
            let c = sim.truth.compose(t).unwrap();
            for k in 0..c.as_slice().len() {
                let expected = (0..3).any(|r| {
                    sim.truth.weights.get(t, r) != 0.0
                        && sim.truth.components[r].as_slice()[k] != 0.0
                });
                assert_eq!(c.as_slice()[k] != 0.0, expected);
            }
        }
    }

    #[test]
    fn image_signal_variance_matches_frobenius_norm() {
        let cfg = SimConfig {
            n: 10_000,
            t_sources: 1,
            p: 8,
            q: 8,
            layout: ComponentLayout {
                size: 2.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let sim = generate(&cfg, &ImageSource::Gaussian).unwrap();
        let c = sim.truth.compose(0).unwrap();
        let xc = sim.train[0].x().inner_products(&c);
        let m = xc.iter().sum::<f64>() / xc.len() as f64;
        let var = xc.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (xc.len() - 1) as f64;
        let norm2 = c.frobenius_norm().powi(2);
        assert!((var - norm2).abs() <= 0.1 * norm2, "{var} vs {norm2}");
    }

    #[test]
    fn standardized_pixels_have_unit_variance() {
        let mut rng = seeded_rng(4);
        let data: Vec<f64> = (0..50 * 4)
            .map(|k| 3.0 + 2.0 * rng.normal() + (k % 4) as f64)
            .collect();
        let stack = ImageStack::from_vec(50, 2, 2, data).unwrap();
        let out = standardize_pixels(&stack);
        for px in 0..4 {
            let vals: Vec<f64> = (0..50).map(|i| out.image(i)[px]).collect();
            let m = vals.iter().sum::<f64>() / 50.0;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 50.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }
}
