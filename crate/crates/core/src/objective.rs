//! Composite objective: averaged per-source data loss plus TV on every
//! component plus the smoothed selective integration penalty on the weights.

use rayon::prelude::*;

use crate::error::{PairError, Result};
use crate::penalties::{sip_smoothed, tv_subgradient, tv_value};
use crate::types::{
    axpy_slice, bundle_dims, compose_unchecked, dot, HyperParams, ImageMatrix, Matrix, PairParams,
    SourceDataset,
};

/// Per-observation data loss; a source's loss is the mean over its
/// observations. Only the squared loss ships; the solver talks to this
/// trait so another loss can be dropped in.
pub trait DataLoss: Sync {
    fn point(&self, y: f64, pred: f64) -> f64;
    /// Derivative of [`DataLoss::point`] with respect to `pred`.
    fn point_derivative(&self, y: f64, pred: f64) -> f64;

    fn value(&self, y: &[f64], pred: &[f64]) -> f64 {
        y.iter()
            .zip(pred)
            .map(|(a, b)| self.point(*a, *b))
            .sum::<f64>()
            / y.len() as f64
    }
}

/// `(2n)^-1 sum (y - pred)^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredLoss;

impl DataLoss for SquaredLoss {
    fn point(&self, y: f64, pred: f64) -> f64 {
        0.5 * (y - pred) * (y - pred)
    }

    fn point_derivative(&self, y: f64, pred: f64) -> f64 {
        pred - y
    }
}

/// Whether per-source terms may be computed on the rayon pool. Both modes
/// sum the per-source terms in source order, so results are identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalMode {
    #[default]
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub betas: Vec<Vec<f64>>,
    pub components: Vec<ImageMatrix>,
    pub weights: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub total: f64,
    /// `(1/T) sum_t f_t`.
    pub data_loss: f64,
    pub tv_term: f64,
    pub sip_term: f64,
    pub grads: Gradients,
}

pub fn source_loss(ds: &SourceDataset, beta: &[f64], c: &ImageMatrix) -> Result<f64> {
    check_source(ds, beta, c)?;
    let pred = ds.predict(beta, c);
    Ok(SquaredLoss.value(ds.y(), &pred))
}

fn check_source(ds: &SourceDataset, beta: &[f64], c: &ImageMatrix) -> Result<()> {
    if ds.n() == 0 {
        return Err(PairError::Empty("dataset".into()));
    }
    if beta.len() != ds.d() {
        return Err(PairError::Dimension(format!(
            "beta has length {}, d = {}",
            beta.len(),
            ds.d()
        )));
    }
    if c.shape() != ds.image_shape() {
        return Err(PairError::Dimension(format!(
            "coefficient is {:?}, images are {:?}",
            c.shape(),
            ds.image_shape()
        )));
    }
    Ok(())
}

/// Average data loss `(1/T) sum_t f_t(beta_t, C_t)` without gradients.
pub fn average_data_loss(
    bundle: &[SourceDataset],
    betas: &[Vec<f64>],
    coefs: &[ImageMatrix],
) -> Result<f64> {
    if bundle.is_empty() || betas.len() != bundle.len() || coefs.len() != bundle.len() {
        return Err(PairError::Dimension(
            "one beta and coefficient per source required".into(),
        ));
    }
    let mut total = 0.0;
    for ((ds, b), c) in bundle.iter().zip(betas).zip(coefs) {
        total += source_loss(ds, b, c)?;
    }
    Ok(total / bundle.len() as f64)
}

struct SourceTerms {
    loss: f64,
    beta_grad: Vec<f64>,
    /// Gradient of `f_t / T` with respect to `C_t`.
    coef_grad: ImageMatrix,
}

/// One pass over the images: each observation's residual is known as soon
/// as its prediction is, so its image is accumulated into the gradient while
/// still in cache.
fn source_terms(
    loss: &dyn DataLoss,
    ds: &SourceDataset,
    beta: &[f64],
    c: &ImageMatrix,
    t_count: f64,
) -> SourceTerms {
    let n = ds.n();
    let scale = 1.0 / (n as f64 * t_count);
    let (p, q) = ds.image_shape();
    let mut coef_grad = Matrix::zeros(p, q);
    let mut beta_grad = vec![0.0; ds.d()];
    let mut total = 0.0;
    for (i, &yi) in ds.y().iter().enumerate() {
        let img = ds.x().image(i);
        let zi = ds.z().row(i);
        let pred = dot(img, c.as_slice()) + dot(zi, beta);
        total += loss.point(yi, pred);
        let g = loss.point_derivative(yi, pred) * scale;
        for (bg, zij) in beta_grad.iter_mut().zip(zi) {
            *bg += g * zij;
        }
        if g != 0.0 {
            axpy_slice(coef_grad.as_mut_slice(), g, img);
        }
    }
    SourceTerms {
        loss: total / n as f64,
        beta_grad,
        coef_grad,
    }
}

/// Objective value and gradients with the squared loss.
pub fn evaluate(
    bundle: &[SourceDataset],
    params: &PairParams,
    hp: &HyperParams,
) -> Result<ObjectiveEval> {
    evaluate_with(&SquaredLoss, bundle, params, hp, EvalMode::Sequential)
}

pub fn evaluate_with(
    loss: &dyn DataLoss,
    bundle: &[SourceDataset],
    params: &PairParams,
    hp: &HyperParams,
    mode: EvalMode,
) -> Result<ObjectiveEval> {
    params.check_against(bundle)?;
    if !params.is_finite() {
        return Err(PairError::NonFinite("parameters".into()));
    }
    if !(hp.tau > 0.0) {
        return Err(PairError::InvalidArgument("tau must be positive".into()));
    }
    let t_count = bundle.len() as f64;
    let coefs = params.coefficients();
    let per_source =
        |t: usize| source_terms(loss, &bundle[t], &params.betas[t], &coefs[t], t_count);
    let terms: Vec<SourceTerms> = match mode {
        EvalMode::Sequential => (0..bundle.len()).map(per_source).collect(),
        EvalMode::Parallel => (0..bundle.len()).into_par_iter().map(per_source).collect(),
    };

    let data_loss = terms.iter().map(|s| s.loss).sum::<f64>() / t_count;

    let (p, q) = params.image_shape();
    let r_count = params.num_components();
    let mut comp_grads = Vec::with_capacity(r_count);
    let mut tv_sum = 0.0;
    for (r, b) in params.components.iter().enumerate() {
        let mut g = Matrix::zeros(p, q);
        for (t, s) in terms.iter().enumerate() {
            let w = params.weights.get(t, r);
            if w != 0.0 {
                g.axpy(w, &s.coef_grad);
            }
        }
        if hp.lambda_tv != 0.0 {
            g.axpy(hp.lambda_tv, &tv_subgradient(b));
            tv_sum += tv_value(b);
        }
        comp_grads.push(g);
    }

    let sip = sip_smoothed(&params.weights, hp.tau)?;
    let mut weight_grad = Matrix::zeros(bundle.len(), r_count);
    for (t, s) in terms.iter().enumerate() {
        for (r, b) in params.components.iter().enumerate() {
            let v =
                dot(s.coef_grad.as_slice(), b.as_slice()) + hp.gamma_sip * sip.gradient.get(t, r);
            weight_grad.set(t, r, v);
        }
    }

    let tv_term = hp.lambda_tv * tv_sum;
    let sip_term = hp.gamma_sip * sip.value;
    let total = data_loss + tv_term + sip_term;
    if !total.is_finite() {
        return Err(PairError::NonFinite("objective value".into()));
    }
    Ok(ObjectiveEval {
        total,
        data_loss,
        tv_term,
        sip_term,
        grads: Gradients {
            betas: terms.into_iter().map(|s| s.beta_grad).collect(),
            components: comp_grads,
            weights: weight_grad,
        },
    })
}

/// Coefficients `C_t` for given components and weights.
pub fn coefficients(components: &[ImageMatrix], weights: &Matrix) -> Vec<ImageMatrix> {
    (0..weights.rows())
        .map(|t| compose_unchecked(components, weights.row(t)))
        .collect()
}

/// Shape check used by callers that build bundles by hand.
pub fn check_bundle(bundle: &[SourceDataset]) -> Result<(usize, usize, usize)> {
    bundle_dims(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use crate::types::ImageStack;

    fn random_source(n: usize, d: usize, p: usize, q: usize, seed: u64) -> SourceDataset {
        let mut rng = seeded_rng(seed);
        let y = rng.normal_vec(n, 1.0);
        let z = Matrix::from_vec(n, d, rng.normal_vec(n * d, 1.0)).unwrap();
        let x = ImageStack::from_vec(n, p, q, rng.normal_vec(n * p * q, 1.0)).unwrap();
        SourceDataset::new(format!("s{seed}"), y, z, x).unwrap()
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let mut rng = seeded_rng(1);
        let ds = random_source(6, 2, 3, 3, 2);
        let beta = vec![0.3, -1.1];
        let c = Matrix::from_vec(3, 3, rng.normal_vec(9, 1.0)).unwrap();
        let y = ds.predict(&beta, &c);
        let ds = SourceDataset::new("exact", y, ds.z().clone(), ds.x().clone()).unwrap();
        assert!(source_loss(&ds, &beta, &c).unwrap().abs() < 1e-28);
    }

    #[test]
    fn null_model_loss() {
        let ds = random_source(7, 2, 2, 3, 3);
        let expected = ds.y().iter().map(|v| v * v).sum::<f64>() / 14.0;
        let got = source_loss(&ds, &[0.0, 0.0], &Matrix::zeros(2, 3)).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn loss_matches_scalar_loop() {
        let ds = random_source(5, 2, 3, 3, 4);
        let beta = vec![0.7, -0.2];
        let c = Matrix::from_fn(3, 3, |i, j| (i as f64) - 0.5 * j as f64);
        let mut acc = 0.0;
        for i in 0..5 {
            let mut pred = 0.0;
            for k in 0..2 {
                pred += ds.z().get(i, k) * beta[k];
            }
            let img = ds.x().image_matrix(i);
            for a in 0..3 {
                for b in 0..3 {
                    pred += img.get(a, b) * c.get(a, b);
                }
            }
            acc += (ds.y()[i] - pred).powi(2);
        }
        let got = source_loss(&ds, &beta, &c).unwrap();
        assert!((got - acc / 10.0).abs() < 1e-13);
    }

    #[test]
    fn loss_rejects_shape_mismatch() {
        let ds = random_source(5, 2, 3, 3, 4);
        assert!(source_loss(&ds, &[0.0], &Matrix::zeros(3, 3)).is_err());
        assert!(source_loss(&ds, &[0.0, 0.0], &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn noiseless_truth_is_stationary_without_penalties() {
        let mut rng = seeded_rng(5);
        let comps: Vec<Matrix> = (0..2)
            .map(|_| Matrix::from_vec(3, 4, rng.normal_vec(12, 1.0)).unwrap())
            .collect();
        let w = Matrix::from_vec(2, 2, rng.normal_vec(4, 1.0)).unwrap();
        let betas = vec![rng.normal_vec(3, 1.0), rng.normal_vec(3, 1.0)];
        let params = PairParams::new(betas, comps, w).unwrap();
        let bundle: Vec<SourceDataset> = (0..2)
            .map(|t| {
                let raw = random_source(8, 3, 3, 4, 40 + t as u64);
                let y = raw.predict(&params.betas[t], &params.compose(t).unwrap());
                SourceDataset::new("s", y, raw.z().clone(), raw.x().clone()).unwrap()
            })
            .collect();
        let hp = HyperParams {
            lambda_tv: 0.0,
            gamma_sip: 0.0,
            ..Default::default()
        };
        let ev = evaluate(&bundle, &params, &hp).unwrap();
        assert!(ev.total.abs() < 1e-26);
        let max_grad = ev
            .grads
            .betas
            .iter()
            .flatten()
            .chain(ev.grads.components.iter().flat_map(|m| m.as_slice()))
            .chain(ev.grads.weights.as_slice())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_grad < 1e-12);
    }

    #[test]
    fn total_is_sum_of_terms_and_modes_agree() {
        let mut rng = seeded_rng(6);
        let bundle: Vec<SourceDataset> =
            (0..3).map(|t| random_source(9, 2, 4, 4, 60 + t)).collect();
        let comps: Vec<Matrix> = (0..2)
            .map(|_| Matrix::from_vec(4, 4, rng.normal_vec(16, 1.0)).unwrap())
            .collect();
        let w = Matrix::from_vec(3, 2, rng.normal_vec(6, 0.4)).unwrap();
        let params = PairParams::new(vec![vec![0.1, 0.2]; 3], comps, w).unwrap();
        let hp = HyperParams {
            lambda_tv: 0.3,
            gamma_sip: 0.7,
            ..Default::default()
        };
        let seq = evaluate_with(&SquaredLoss, &bundle, &params, &hp, EvalMode::Sequential).unwrap();
        let par = evaluate_with(&SquaredLoss, &bundle, &params, &hp, EvalMode::Parallel).unwrap();
        assert_eq!(seq, par);
        assert!((seq.total - (seq.data_loss + seq.tv_term + seq.sip_term)).abs() <= 1e-12);
    }

    #[test]
    fn data_loss_invariant_to_component_rescaling() {
        let mut rng = seeded_rng(7);
        let bundle: Vec<SourceDataset> =
            (0..2).map(|t| random_source(6, 2, 3, 3, 70 + t)).collect();
        let comps: Vec<Matrix> = (0..2)
            .map(|_| Matrix::from_vec(3, 3, rng.normal_vec(9, 1.0)).unwrap())
            .collect();
        let w = Matrix::from_vec(2, 2, rng.normal_vec(4, 1.0)).unwrap();
        let params = PairParams::new(vec![vec![0.0; 2]; 2], comps, w).unwrap();
        let c = 3.5;
        let mut scaled = params.clone();
        scaled.components[1] = scaled.components[1].scaled(c);
        for t in 0..2 {
            let v = scaled.weights.get(t, 1) / c;
            scaled.weights.set(t, 1, v);
        }
        let hp = HyperParams::default();
        let a = evaluate(&bundle, &params, &hp).unwrap();
        let b = evaluate(&bundle, &scaled, &hp).unwrap();
        assert!((a.data_loss - b.data_loss).abs() < 1e-12 * a.data_loss.max(1.0));
    }

    #[test]
    fn identical_sources_average_to_single_source() {
        let mut rng = seeded_rng(8);
        let ds = random_source(7, 2, 3, 3, 80);
        let comps = vec![Matrix::from_vec(3, 3, rng.normal_vec(9, 1.0)).unwrap()];
        let one = PairParams::new(
            vec![vec![0.2, -0.4]],
            comps.clone(),
            Matrix::filled(1, 1, 0.8),
        )
        .unwrap();
        let three =
            PairParams::new(vec![vec![0.2, -0.4]; 3], comps, Matrix::filled(3, 1, 0.8)).unwrap();
        let hp = HyperParams {
            lambda_tv: 0.2,
            gamma_sip: 0.0,
            ..Default::default()
        };
        let a = evaluate(&[ds.clone()], &one, &hp).unwrap();
        let b = evaluate(&[ds.clone(), ds.clone(), ds], &three, &hp).unwrap();
        assert!((a.data_loss - b.data_loss).abs() < 1e-14);
        assert_eq!(a.tv_term, b.tv_term);
    }
}
