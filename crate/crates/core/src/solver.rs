//! Alternating estimation of the penalized objective.
//!
//! Each epoch runs `inner_steps` Adam updates on the components and weights
//! with the covariate coefficients held fixed, then re-solves every
//! `beta_t` exactly by least squares and scores the unpenalized average data
//! loss on the validation bundle. The best epoch is kept; training stops
//! after `patience` epochs without improvement.

use rayon::prelude::*;

use crate::error::{PairError, Result};
use crate::linalg::lstsq_min_norm;
use crate::objective::{average_data_loss, coefficients, evaluate_with, EvalMode, SquaredLoss};
use crate::rng::{split_seed, RandomStream};
use crate::types::{bundle_dims, HyperParams, ImageMatrix, Matrix, PairParams, SourceDataset};

/// Loss ceiling beyond which a fit is treated as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn from_hp(len: usize, hp: &HyperParams) -> Self {
        Self::new(
            len,
            hp.learning_rate,
            hp.adam_beta1,
            hp.adam_beta2,
            hp.adam_eps,
        )
    }

    /// Applies one bias-corrected update to `params` in place.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((x, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Every entry of every `beta_t`, `B_r` and `W` drawn from `N(0, init_sd^2)`,
/// in that order.
pub fn init_params(
    t_count: usize,
    r_count: usize,
    d: usize,
    p: usize,
    q: usize,
    init_sd: f64,
    rng: &mut RandomStream,
) -> Result<PairParams> {
    if !(init_sd > 0.0) {
        return Err(PairError::InvalidArgument(
            "init_sd must be positive".into(),
        ));
    }
    let betas = (0..t_count).map(|_| rng.normal_vec(d, init_sd)).collect();
    let components = (0..r_count)
        .map(|_| Matrix::from_vec(p, q, rng.normal_vec(p * q, init_sd)))
        .collect::<Result<Vec<_>>>()?;
    let weights = Matrix::from_vec(t_count, r_count, rng.normal_vec(t_count * r_count, init_sd))?;
    PairParams::new(betas, components, weights)
}

/// Least squares of `y_t - <X_t, C_t>` on `Z_t` for each source. Rank
/// deficient designs fall back to the minimum-norm solution with a warning.
pub fn solve_betas(
    bundle: &[SourceDataset],
    components: &[ImageMatrix],
    weights: &Matrix,
) -> Result<Vec<Vec<f64>>> {
    if weights.rows() != bundle.len() || weights.cols() != components.len() {
        return Err(PairError::Dimension("weights must be T x R".into()));
    }
    let coefs = coefficients(components, weights);
    bundle
        .iter()
        .zip(&coefs)
        .map(|(ds, c)| {
            let image_part = if components.is_empty() {
                vec![0.0; ds.n()]
            } else {
                ds.x().inner_products(c)
            };
            let target: Vec<f64> = ds.y().iter().zip(image_part).map(|(y, xc)| y - xc).collect();
            let sol = lstsq_min_norm(ds.z(), &target);
            if sol.rank < ds.d() {
                log::warn!(
                    "covariates of source {} are rank deficient ({} < {}); using minimum-norm solution",
                    ds.source_id,
                    sol.rank,
                    ds.d()
                );
            }
            Ok(sol.x)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub train_total: f64,
    pub train_data_loss: f64,
    pub val_data_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Parameters at the epoch with the lowest validation loss.
    pub params: PairParams,
    pub epoch_log: Vec<EpochRecord>,
    /// Zero-based index of the best epoch.
    pub best_epoch: usize,
    /// Number of epochs run.
    pub stopped_epoch: usize,
    pub hp: HyperParams,
    pub seed: u64,
}

impl FitReport {
    pub fn best_val_loss(&self) -> f64 {
        self.epoch_log[self.best_epoch].val_data_loss
    }

    pub fn coefficients(&self) -> Vec<ImageMatrix> {
        self.params.coefficients()
    }
}

/// Knobs that are not hyperparameters of the model itself.
#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Holds the weight matrix fixed at this value instead of learning it.
    pub frozen_weights: Option<Matrix>,
    pub mode: EvalMode,
}

pub fn fit(train: &[SourceDataset], val: &[SourceDataset], hp: &HyperParams) -> Result<FitReport> {
    fit_with(train, val, hp, &FitOptions::default())
}

pub fn fit_with(
    train: &[SourceDataset],
    val: &[SourceDataset],
    hp: &HyperParams,
    opts: &FitOptions,
) -> Result<FitReport> {
    hp.validate()?;
    let (d, p, q) = bundle_dims(train)?;
    let (vd, vp, vq) = bundle_dims(val)?;
    if val.len() != train.len() || (vd, vp, vq) != (d, p, q) {
        return Err(PairError::Dimension(
            "training and validation bundles must agree in T, d, p and q".into(),
        ));
    }
    let t_count = train.len();
    let r_count = hp.r_components;
    let mut rng = RandomStream::new(hp.seed);
    let mut params = init_params(t_count, r_count, d, p, q, hp.init_sd, &mut rng)?;
    if let Some(w) = &opts.frozen_weights {
        if w.shape() != (t_count, r_count) {
            return Err(PairError::Dimension(format!(
                "frozen weights are {:?}, expected ({t_count}, {r_count})",
                w.shape()
            )));
        }
        params.weights = w.clone();
    }
    params.betas = solve_betas(train, &params.components, &params.weights)?;

    let mut comp_opt = Adam::from_hp(r_count * p * q, hp);
    let mut weight_opt = Adam::from_hp(t_count * r_count, hp);
    let mut flat_comps = vec![0.0; r_count * p * q];
    let mut flat_grads = vec![0.0; r_count * p * q];

    let diverged = |epoch: usize, reason: String| PairError::Diverged {
        epoch,
        learning_rate: hp.learning_rate,
        reason,
    };

    let mut epoch_log = Vec::new();
    let mut best: Option<(usize, f64, PairParams)> = None;
    for epoch in 0..hp.max_epochs {
        for _ in 0..hp.inner_steps {
            let ev = evaluate_with(&SquaredLoss, train, &params, hp, opts.mode)
                .map_err(|e| diverged(epoch, e.to_string()))?;
            if ev.total > DIVERGENCE_THRESHOLD {
                return Err(diverged(
                    epoch,
                    format!("objective {:.3e} exceeds threshold", ev.total),
                ));
            }
            let k = p * q;
            for (r, (b, g)) in params
                .components
                .iter()
                .zip(&ev.grads.components)
                .enumerate()
            {
                flat_comps[r * k..(r + 1) * k].copy_from_slice(b.as_slice());
                flat_grads[r * k..(r + 1) * k].copy_from_slice(g.as_slice());
            }
            comp_opt.update(&mut flat_comps, &flat_grads);
            for (r, b) in params.components.iter_mut().enumerate() {
                b.as_mut_slice()
                    .copy_from_slice(&flat_comps[r * k..(r + 1) * k]);
            }
            if opts.frozen_weights.is_none() {
                weight_opt.update(params.weights.as_mut_slice(), ev.grads.weights.as_slice());
            }
        }
        params.betas = solve_betas(train, &params.components, &params.weights)?;
        let ev = evaluate_with(&SquaredLoss, train, &params, hp, opts.mode)
            .map_err(|e| diverged(epoch, e.to_string()))?;
        if ev.total > DIVERGENCE_THRESHOLD {
            return Err(diverged(
                epoch,
                format!("objective {:.3e} exceeds threshold", ev.total),
            ));
        }
        let val_loss = average_data_loss(val, &params.betas, &params.coefficients())?;
        if !val_loss.is_finite() {
            return Err(diverged(epoch, "validation loss is not finite".into()));
        }
        epoch_log.push(EpochRecord {
            train_total: ev.total,
            train_data_loss: ev.data_loss,
            val_data_loss: val_loss,
        });
        match &best {
            Some((_, b, _)) if val_loss >= *b => {}
            _ => best = Some((epoch, val_loss, params.clone())),
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        if epoch - best_epoch >= hp.patience {
            break;
        }
    }
    let (best_epoch, _, best_params) = best.expect("at least one epoch runs");
    Ok(FitReport {
        params: best_params,
        stopped_epoch: epoch_log.len(),
        epoch_log,
        best_epoch,
        hp: hp.clone(),
        seed: hp.seed,
    })
}

/// One grid cell: its hyperparameters (seed included) and outcome.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub hp: HyperParams,
    pub outcome: std::result::Result<FitReport, String>,
}

impl GridCell {
    pub fn val_loss(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(FitReport::best_val_loss)
    }
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    /// Index of the cell with the lowest validation loss; ties go to the
    /// lowest index.
    pub best: usize,
}

impl GridResult {
    pub fn best_report(&self) -> &FitReport {
        self.cells[self.best]
            .outcome
            .as_ref()
            .expect("best cell succeeded")
    }
}

/// Stable fingerprint of the model-defining hyperparameters (seed excluded).
fn cell_key(hp: &HyperParams) -> u64 {
    let fields = [
        hp.r_components as u64,
        hp.lambda_tv.to_bits(),
        hp.gamma_sip.to_bits(),
        hp.tau.to_bits(),
        hp.learning_rate.to_bits(),
        hp.max_epochs as u64,
        hp.patience as u64,
        hp.inner_steps as u64,
        hp.init_sd.to_bits(),
        hp.adam_beta1.to_bits(),
        hp.adam_beta2.to_bits(),
        hp.adam_eps.to_bits(),
    ];
    fields
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, &f| split_seed(h, f))
}

/// Seed a grid cell receives: a split of the master seed keyed by the cell's
/// hyperparameters, so identical cells reproduce each other.
pub fn cell_seed(master_seed: u64, hp: &HyperParams) -> u64 {
    split_seed(master_seed, cell_key(hp))
}

/// Fits every cell and picks the lowest validation loss. Failed cells are
/// recorded and skipped; an error is returned only if every cell fails.
pub fn grid_search(
    train: &[SourceDataset],
    val: &[SourceDataset],
    grid: &[HyperParams],
    master_seed: u64,
    opts: &FitOptions,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(PairError::Empty("hyperparameter grid".into()));
    }
    let run = |hp: &HyperParams| {
        let hp = HyperParams {
            seed: cell_seed(master_seed, hp),
            ..hp.clone()
        };
        let outcome = fit_with(train, val, &hp, opts).map_err(|e| e.to_string());
        if let Err(e) = &outcome {
            log::warn!("grid cell failed: {e}");
        }
        GridCell { hp, outcome }
    };
    let cells: Vec<GridCell> = match opts.mode {
        EvalMode::Sequential => grid.iter().map(run).collect(),
        EvalMode::Parallel => grid.par_iter().map(run).collect(),
    };
    let best = argmin_first(cells.iter().map(GridCell::val_loss))
        .ok_or(PairError::AllCellsFailed(cells.len()))?;
    Ok(GridResult { cells, best })
}

/// Index of the smallest present value; the first index wins ties.
pub(crate) fn argmin_first(values: impl Iterator<Item = Option<f64>>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if let Some(v) = v {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Cartesian product of the usual tuning axes over a base setting.
pub fn product_grid(
    base: &HyperParams,
    r: &[usize],
    lambda: &[f64],
    gamma: &[f64],
    tau: &[f64],
) -> Vec<HyperParams> {
    let mut out = Vec::new();
    for &r_components in r {
        for &lambda_tv in lambda {
            for &gamma_sip in gamma {
                for &tau in tau {
                    out.push(HyperParams {
                        r_components,
                        lambda_tv,
                        gamma_sip,
                        tau,
                        ..base.clone()
                    });
                }
            }
        }
    }
    out
}

/// Tuning ranges used for PAIR throughout the simulation study.
pub fn default_grid(base: &HyperParams) -> Vec<HyperParams> {
    product_grid(
        base,
        &[2, 3, 4],
        &[0.01, 0.1, 1.0, 10.0],
        &[0.01, 0.1, 1.0, 10.0],
        &[0.3, 0.5, 0.7],
    )
}
