//! Comparison methods: voxelwise regression (plain and lasso), low-rank
//! bilinear regression (plain and lasso on the factors), single-source TV
//! regression, and pooled TV regression.
//!
//! Every method returns per-source `(beta_t, C_t)`; predictions always go
//! through [`SourceDataset::predict`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{PairError, Result};
use crate::linalg::{lstsq_min_norm, to_dmatrix};
use crate::objective::EvalMode;
use crate::solver::{argmin_first, grid_search, FitOptions, FitReport, GridResult};
use crate::types::{dot, HyperParams, ImageMatrix, ImageStack, Matrix, SourceDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Vr,
    Rvr,
    Tr,
    Rtr,
    Sirtv,
    Pool,
    #[default]
    Pair,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Vr,
        Method::Rvr,
        Method::Tr,
        Method::Rtr,
        Method::Sirtv,
        Method::Pool,
        Method::Pair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vr => "vr",
            Method::Rvr => "rvr",
            Method::Tr => "tr",
            Method::Rtr => "rtr",
            Method::Sirtv => "sirtv",
            Method::Pool => "pool",
            Method::Pair => "pair",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = PairError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| PairError::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFit {
    pub method: Method,
    pub betas: Vec<Vec<f64>>,
    pub coefs: Vec<ImageMatrix>,
    /// Selected tuning values, e.g. `("lambda", "0.1")`.
    pub tuning: Vec<(String, String)>,
}

impl BaselineFit {
    pub fn predict(&self, bundle: &[SourceDataset]) -> Result<Vec<Vec<f64>>> {
        if bundle.len() != self.betas.len() {
            return Err(PairError::Dimension(format!(
                "fit covers {} sources, bundle has {}",
                self.betas.len(),
                bundle.len()
            )));
        }
        Ok(bundle
            .iter()
            .zip(self.betas.iter().zip(&self.coefs))
            .map(|(ds, (b, c))| ds.predict(b, c))
            .collect())
    }

    pub fn from_params(
        params: &crate::types::PairParams,
        tuning: Vec<(String, String)>,
    ) -> BaselineFit {
        BaselineFit {
            method: Method::Pair,
            betas: params.betas.clone(),
            coefs: params.coefficients(),
            tuning,
        }
    }

    /// Concatenates single-source fits of the same method.
    pub fn stack(method: Method, fits: Vec<BaselineFit>) -> BaselineFit {
        let mut out = BaselineFit {
            method,
            betas: Vec::new(),
            coefs: Vec::new(),
            tuning: Vec::new(),
        };
        for (t, f) in fits.into_iter().enumerate() {
            out.betas.extend(f.betas);
            out.coefs.extend(f.coefs);
            out.tuning
                .extend(f.tuning.into_iter().map(|(k, v)| (format!("{k}.{t}"), v)));
        }
        out
    }
}

pub fn rmse_on(ds: &SourceDataset, beta: &[f64], c: &ImageMatrix) -> f64 {
    let pred = ds.predict(beta, c);
    let sse: f64 = ds
        .y()
        .iter()
        .zip(&pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    (sse / ds.n() as f64).sqrt()
}

/// `[Z | vec(X)]`, pixels row-major.
fn vectorized_design(ds: &SourceDataset) -> Matrix {
    let d = ds.d();
    let k = ds.x().pixels();
    Matrix::from_fn(ds.n(), d + k, |i, j| {
        if j < d {
            ds.z().get(i, j)
        } else {
            ds.x().image(i)[j - d]
        }
    })
}

fn split_coef(ds: &SourceDataset, coef: &[f64]) -> Result<(Vec<f64>, ImageMatrix)> {
    let d = ds.d();
    let (p, q) = ds.image_shape();
    Ok((
        coef[..d].to_vec(),
        Matrix::from_vec(p, q, coef[d..].to_vec())?,
    ))
}

fn single(
    method: Method,
    beta: Vec<f64>,
    c: ImageMatrix,
    tuning: Vec<(String, String)>,
) -> BaselineFit {
    BaselineFit {
        method,
        betas: vec![beta],
        coefs: vec![c],
        tuning,
    }
}

/// Minimum-norm least squares on `[Z | vec(X)]`.
pub fn fit_vr(ds: &SourceDataset) -> Result<BaselineFit> {
    let sol = lstsq_min_norm(&vectorized_design(ds), ds.y());
    let (beta, c) = split_coef(ds, &sol.x)?;
    Ok(single(
        Method::Vr,
        beta,
        c,
        vec![("rank".into(), sol.rank.to_string())],
    ))
}

/// Mass-univariate map: for each pixel, the coefficient of that pixel in a
/// regression of `y` on `[Z, X_j]`. The returned `beta` is the OLS fit on
/// `Z` alone.
pub fn fit_vr_marginal(ds: &SourceDataset) -> Result<BaselineFit> {
    let z = to_dmatrix(ds.z());
    let n = ds.n();
    // residual-maker via the min-norm solve of Z
    let project_out = |v: &[f64]| -> Vec<f64> {
        let sol = lstsq_min_norm(ds.z(), v);
        let fitted = &z * nalgebra::DVector::from_column_slice(&sol.x);
        v.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect()
    };
    let beta = lstsq_min_norm(ds.z(), ds.y()).x;
    let ry = project_out(ds.y());
    let (p, q) = ds.image_shape();
    let mut map = Matrix::zeros(p, q);
    for j in 0..p * q {
        let col: Vec<f64> = (0..n).map(|i| ds.x().image(i)[j]).collect();
        let rx = project_out(&col);
        let denom = dot(&rx, &rx);
        map.as_mut_slice()[j] = if denom > 0.0 {
            dot(&rx, &ry) / denom
        } else {
            0.0
        };
    }
    Ok(single(
        Method::Vr,
        beta,
        map,
        vec![("mode".into(), "marginal".into())],
    ))
}

/// Settings for the coordinate-descent lasso.
#[derive(Debug, Clone, Copy)]
pub struct LassoSettings {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_sweeps: 5000,
        }
    }
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Column-major design with per-column squared norms.
pub struct LassoProblem<'a> {
    columns: Vec<Vec<f64>>,
    sq_norms: Vec<f64>,
    y: &'a [f64],
    /// Number of leading unpenalized columns.
    free: usize,
}

/// Result of one lasso solve.
#[derive(Debug, Clone)]
pub struct LassoResult {
    pub coef: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective after each sweep.
    pub objective_trace: Vec<f64>,
}

impl<'a> LassoProblem<'a> {
    pub fn new(columns: Vec<Vec<f64>>, y: &'a [f64], free: usize) -> Self {
        let sq_norms = columns.iter().map(|c| dot(c, c)).collect();
        Self {
            columns,
            sq_norms,
            y,
            free,
        }
    }

    pub fn from_dataset(ds: &'a SourceDataset) -> Self {
        let n = ds.n();
        let d = ds.d();
        let mut columns: Vec<Vec<f64>> = (0..d).map(|j| ds.z().column(j)).collect();
        let k = ds.x().pixels();
        let mut pix = vec![vec![0.0; n]; k];
        for i in 0..n {
            for (j, v) in ds.x().image(i).iter().enumerate() {
                pix[j][i] = *v;
            }
        }
        columns.extend(pix);
        Self::new(columns, ds.y(), d)
    }

    fn residual(&self, coef: &[f64]) -> Vec<f64> {
        let mut r = self.y.to_vec();
        for (c, &b) in self.columns.iter().zip(coef) {
            if b != 0.0 {
                for (ri, ci) in r.iter_mut().zip(c) {
                    *ri -= b * ci;
                }
            }
        }
        r
    }

    /// `(2n)^-1 ||r||^2 + alpha * sum_{j >= free} |coef_j|`.
    pub fn objective(&self, coef: &[f64], alpha: f64) -> f64 {
        let r = self.residual(coef);
        dot(&r, &r) / (2.0 * self.y.len() as f64)
            + alpha * coef[self.free..].iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Cyclic coordinate descent from `start`. Stops when no coordinate moves
    /// by more than `tol`.
    pub fn solve(&self, alpha: f64, start: &[f64], settings: LassoSettings) -> LassoResult {
        let n = self.y.len() as f64;
        let mut coef = start.to_vec();
        let mut r = self.residual(&coef);
        let mut trace = Vec::new();
        for sweep in 1..=settings.max_sweeps {
            let mut max_delta = 0.0f64;
            for (j, col) in self.columns.iter().enumerate() {
                let norm = self.sq_norms[j];
                if norm == 0.0 {
                    continue;
                }
                let old = coef[j];
                let rho = dot(col, &r) + norm * old;
                let new = if j < self.free {
                    rho / norm
                } else {
                    soft_threshold(rho / n, alpha) * n / norm
                };
                let delta = new - old;
                if delta != 0.0 {
                    for (ri, ci) in r.iter_mut().zip(col) {
                        *ri -= delta * ci;
                    }
                    coef[j] = new;
                    max_delta = max_delta.max(delta.abs());
                }
            }
            trace.push(
                dot(&r, &r) / (2.0 * n)
                    + alpha * coef[self.free..].iter().map(|v| v.abs()).sum::<f64>(),
            );
            if max_delta < settings.tol {
                return LassoResult {
                    coef,
                    sweeps: sweep,
                    converged: true,
                    objective_trace: trace,
                };
            }
        }
        LassoResult {
            coef,
            sweeps: settings.max_sweeps,
            converged: false,
            objective_trace: trace,
        }
    }
}

/// Vectorized lasso with covariates unpenalized; the penalty is chosen by
/// validation RMSE. Penalties are visited from largest to smallest with warm
/// starts.
pub fn fit_rvr(
    ds: &SourceDataset,
    lasso_grid: &[f64],
    val: &SourceDataset,
    settings: LassoSettings,
) -> Result<BaselineFit> {
    if lasso_grid.is_empty() {
        return Err(PairError::Empty("lasso grid".into()));
    }
    let problem = LassoProblem::from_dataset(ds);
    let mut order: Vec<usize> = (0..lasso_grid.len()).collect();
    order.sort_by(|&a, &b| lasso_grid[b].total_cmp(&lasso_grid[a]));
    let mut start = vec![0.0; ds.d() + ds.x().pixels()];
    let mut results: Vec<Option<(Vec<f64>, ImageMatrix, f64)>> = vec![None; lasso_grid.len()];
    for &g in &order {
        let res = problem.solve(lasso_grid[g], &start, settings);
        start.clone_from(&res.coef);
        if !res.converged {
            log::warn!(
                "lasso with penalty {} did not converge in {} sweeps",
                lasso_grid[g],
                res.sweeps
            );
            continue;
        }
        let (beta, c) = split_coef(ds, &res.coef)?;
        let score = rmse_on(val, &beta, &c);
        results[g] = Some((beta, c, score));
    }
    let best = argmin_first(results.iter().map(|r| r.as_ref().map(|x| x.2))).ok_or_else(|| {
        PairError::NoConvergence {
            iterations: settings.max_sweeps,
            detail: "no lasso penalty converged".into(),
        }
    })?;
    let (beta, c, _) = results[best].take().expect("selected cell exists");
    Ok(single(
        Method::Rvr,
        beta,
        c,
        vec![("lasso".into(), lasso_grid[best].to_string())],
    ))
}

/// Rank-`K` bilinear coefficient `C = U V^T` with optional lasso penalty on
/// the factor entries.
#[derive(Debug, Clone)]
pub struct LowRankFit {
    pub beta: Vec<f64>,
    pub u: Matrix,
    pub v: Matrix,
    /// Penalized objective after each cycle.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl LowRankFit {
    pub fn coefficient(&self) -> ImageMatrix {
        let (p, k) = self.u.shape();
        let q = self.v.rows();
        Matrix::from_fn(p, q, |i, j| {
            (0..k).map(|r| self.u.get(i, r) * self.v.get(j, r)).sum()
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LowRankSettings {
    pub tol: f64,
    pub max_cycles: usize,
    pub lasso: LassoSettings,
}

impl Default for LowRankSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_cycles: 200,
            lasso: LassoSettings {
                tol: 1e-6,
                max_sweeps: 500,
            },
        }
    }
}

/// Top-`k` singular factors of `m`, split as `U sqrt(S)` and `V sqrt(S)`.
fn svd_factors(m: &ImageMatrix, k: usize) -> (Matrix, Matrix) {
    let svd = to_dmatrix(m).svd(true, true);
    let u = svd.u.expect("u computed");
    let vt = svd.v_t.expect("v_t computed");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let (p, q) = m.shape();
    let mut uf = Matrix::zeros(p, k);
    let mut vf = Matrix::zeros(q, k);
    for (r, &s) in idx.iter().take(k).enumerate() {
        let root = svd.singular_values[s].sqrt();
        for i in 0..p {
            uf.set(i, r, u[(i, s)] * root);
        }
        for j in 0..q {
            vf.set(j, r, vt[(s, j)] * root);
        }
    }
    (uf, vf)
}

/// Features for one factor block. With `left = true` the block is `U` and
/// observation `i` contributes `vec(X_i V)`; otherwise `vec(X_i^T U)`.
fn factor_design(x: &ImageStack, other: &Matrix, left: bool) -> Vec<Vec<f64>> {
    let (p, q) = x.image_shape();
    let k = other.cols();
    let dim = if left { p } else { q };
    let n = x.len();
    let mut cols = vec![vec![0.0; n]; dim * k];
    for i in 0..n {
        let img = x.image(i);
        for a in 0..p {
            for b in 0..q {
                let xv = img[a * q + b];
                if xv == 0.0 {
                    continue;
                }
                for r in 0..k {
                    if left {
                        cols[a * k + r][i] += xv * other.get(b, r);
                    } else {
                        cols[b * k + r][i] += xv * other.get(a, r);
                    }
                }
            }
        }
    }
    cols
}

fn lowrank_objective(ds: &SourceDataset, fit: &LowRankFit, alpha: f64) -> f64 {
    let c = fit.coefficient();
    let r: Vec<f64> = ds.residuals(&fit.beta, &c);
    let l1 = fit
        .u
        .as_slice()
        .iter()
        .chain(fit.v.as_slice())
        .map(|v| v.abs())
        .sum::<f64>();
    dot(&r, &r) / (2.0 * ds.n() as f64) + alpha * l1
}

/// Exact minimization over `(beta, block)`; plain least squares when
/// `alpha == 0`, otherwise a warm-started lasso.
fn update_block(
    ds: &SourceDataset,
    block_cols: Vec<Vec<f64>>,
    start: &[f64],
    alpha: f64,
    settings: LowRankSettings,
) -> Vec<f64> {
    let d = ds.d();
    let mut columns: Vec<Vec<f64>> = (0..d).map(|j| ds.z().column(j)).collect();
    columns.extend(block_cols);
    if alpha == 0.0 {
        let m = columns.len();
        let a = Matrix::from_fn(ds.n(), m, |i, j| columns[j][i]);
        lstsq_min_norm(&a, ds.y()).x
    } else {
        LassoProblem::new(columns, ds.y(), d)
            .solve(alpha, start, settings.lasso)
            .coef
    }
}

/// Rescales each rank-one term so its two factors have equal l1 norm; the
/// product is unchanged and the penalty cannot increase.
fn balance(u: &mut Matrix, v: &mut Matrix) {
    for r in 0..u.cols() {
        let nu: f64 = (0..u.rows()).map(|i| u.get(i, r).abs()).sum();
        let nv: f64 = (0..v.rows()).map(|j| v.get(j, r).abs()).sum();
        if nu > 0.0 && nv > 0.0 {
            let s = (nv / nu).sqrt();
            for i in 0..u.rows() {
                u.set(i, r, u.get(i, r) * s);
            }
            for j in 0..v.rows() {
                v.set(j, r, v.get(j, r) / s);
            }
        }
    }
}

/// Block-coordinate fit of the rank-`k` model cycling `(beta, U)` and
/// `(beta, V)`, initialized from the top singular factors of the VR map.
pub fn fit_lowrank(
    ds: &SourceDataset,
    k: usize,
    alpha: f64,
    settings: LowRankSettings,
) -> Result<LowRankFit> {
    if k == 0 {
        return Err(PairError::InvalidArgument("rank must be at least 1".into()));
    }
    let (p, q) = ds.image_shape();
    if k > p.min(q) {
        return Err(PairError::InvalidArgument(format!(
            "rank {k} exceeds min(p, q)"
        )));
    }
    let vr = fit_vr(ds)?;
    let (u, v) = svd_factors(&vr.coefs[0], k);
    let d = ds.d();
    let mut fit = LowRankFit {
        beta: vr.betas[0].clone(),
        u,
        v,
        objective_trace: Vec::new(),
        converged: false,
    };
    if alpha > 0.0 {
        balance(&mut fit.u, &mut fit.v);
    }
    let mut best = fit.clone();
    let mut best_obj = lowrank_objective(ds, &fit, alpha);
    let mut prev = best_obj;
    for _ in 0..settings.max_cycles {
        let start: Vec<f64> = fit.beta.iter().chain(fit.u.as_slice()).copied().collect();
        let sol = update_block(
            ds,
            factor_design(ds.x(), &fit.v, true),
            &start,
            alpha,
            settings,
        );
        fit.beta = sol[..d].to_vec();
        fit.u = Matrix::from_vec(p, k, sol[d..].to_vec())?;
        let start: Vec<f64> = fit.beta.iter().chain(fit.v.as_slice()).copied().collect();
        let sol = update_block(
            ds,
            factor_design(ds.x(), &fit.u, false),
            &start,
            alpha,
            settings,
        );
        fit.beta = sol[..d].to_vec();
        fit.v = Matrix::from_vec(q, k, sol[d..].to_vec())?;
        if alpha > 0.0 {
            balance(&mut fit.u, &mut fit.v);
        }
        let obj = lowrank_objective(ds, &fit, alpha);
        if !obj.is_finite() {
            log::warn!("low-rank fit produced a non-finite objective; returning best iterate");
            break;
        }
        fit.objective_trace.push(obj);
        if obj < best_obj {
            best_obj = obj;
            best = fit.clone();
        }
        let rel = (prev - obj).abs() / prev.abs().max(f64::MIN_POSITIVE);
        if rel < settings.tol || obj == 0.0 {
            fit.converged = true;
            break;
        }
        if obj > prev * (1.0 + 1e-9) + 1e-12 {
            log::warn!("low-rank objective increased ({prev} -> {obj}); returning best iterate");
            break;
        }
        prev = obj;
    }
    best.objective_trace = fit.objective_trace;
    best.converged = fit.converged;
    Ok(best)
}

fn fit_lowrank_grid(
    method: Method,
    ds: &SourceDataset,
    rank_grid: &[usize],
    lasso_grid: &[f64],
    val: &SourceDataset,
    settings: LowRankSettings,
) -> Result<BaselineFit> {
    if rank_grid.is_empty() || lasso_grid.is_empty() {
        return Err(PairError::Empty("rank or lasso grid".into()));
    }
    let mut cells = Vec::new();
    for &k in rank_grid {
        for &alpha in lasso_grid {
            let fit = fit_lowrank(ds, k, alpha, settings)?;
            let c = fit.coefficient();
            let score = rmse_on(val, &fit.beta, &c);
            cells.push((k, alpha, fit.beta, c, score));
        }
    }
    let best = argmin_first(cells.iter().map(|c| Some(c.4))).expect("nonempty grid");
    let (k, alpha, beta, c, _) = cells.swap_remove(best);
    let mut tuning = vec![("rank".to_string(), k.to_string())];
    if method == Method::Rtr {
        tuning.push(("lasso".into(), alpha.to_string()));
    }
    Ok(single(method, beta, c, tuning))
}

pub fn fit_tr(
    ds: &SourceDataset,
    rank_grid: &[usize],
    val: &SourceDataset,
    settings: LowRankSettings,
) -> Result<BaselineFit> {
    fit_lowrank_grid(Method::Tr, ds, rank_grid, &[0.0], val, settings)
}

pub fn fit_rtr(
    ds: &SourceDataset,
    rank_grid: &[usize],
    lasso_grid: &[f64],
    val: &SourceDataset,
    settings: LowRankSettings,
) -> Result<BaselineFit> {
    fit_lowrank_grid(Method::Rtr, ds, rank_grid, lasso_grid, val, settings)
}

/// TV grid search with a single component whose weight is frozen at 1.
fn tv_grid(
    train: &[SourceDataset],
    val: &[SourceDataset],
    tv_grid: &[f64],
    hp_base: &HyperParams,
    mode: EvalMode,
) -> Result<GridResult> {
    let grid: Vec<HyperParams> = tv_grid
        .iter()
        .map(|&lambda_tv| HyperParams {
            r_components: 1,
            lambda_tv,
            gamma_sip: 0.0,
            ..hp_base.clone()
        })
        .collect();
    let opts = FitOptions {
        frozen_weights: Some(Matrix::filled(train.len(), 1, 1.0)),
        mode,
    };
    grid_search(train, val, &grid, hp_base.seed, &opts)
}

/// Single-source TV-penalized regression: the PAIR solver with one
/// component and a frozen unit weight. Returns the fit and the selected
/// report.
pub fn fit_sirtv(
    ds: &SourceDataset,
    tv: &[f64],
    val: &SourceDataset,
    hp_base: &HyperParams,
) -> Result<(BaselineFit, FitReport)> {
    if tv.is_empty() {
        return Err(PairError::Empty("TV grid".into()));
    }
    let res = tv_grid(
        std::slice::from_ref(ds),
        std::slice::from_ref(val),
        tv,
        hp_base,
        EvalMode::Sequential,
    )?;
    let report = res.best_report().clone();
    let fit = single(
        Method::Sirtv,
        report.params.betas[0].clone(),
        report.coefficients().remove(0),
        vec![("lambda".into(), report.hp.lambda_tv.to_string())],
    );
    Ok((fit, report))
}

/// Concatenates sources; with `stage_indicator`, appends `T - 1` dummy
/// columns marking sources `1..T`.
pub fn pool_bundle(bundle: &[SourceDataset], stage_indicator: bool) -> Result<SourceDataset> {
    let (d, _, _) = crate::types::bundle_dims(bundle)?;
    let t_count = bundle.len();
    let extra = if stage_indicator { t_count - 1 } else { 0 };
    let n: usize = bundle.iter().map(SourceDataset::n).sum();
    let mut y = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n * (d + extra));
    for (t, ds) in bundle.iter().enumerate() {
        y.extend_from_slice(ds.y());
        for i in 0..ds.n() {
            z.extend_from_slice(ds.z().row(i));
            for s in 1..=extra {
                z.push(if s == t { 1.0 } else { 0.0 });
            }
        }
    }
    let stacks: Vec<&ImageStack> = bundle.iter().map(SourceDataset::x).collect();
    SourceDataset::new(
        "pooled",
        y,
        Matrix::from_vec(n, d + extra, z)?,
        ImageStack::concat(&stacks)?,
    )
}

fn intercept_column(bundle: &[SourceDataset]) -> Option<usize> {
    let d = bundle.first()?.d();
    (0..d).find(|&j| {
        bundle
            .iter()
            .all(|ds| (0..ds.n()).all(|i| ds.z().get(i, j) == 1.0))
    })
}

/// One shared coefficient image and covariate vector fitted on the pooled
/// sources. Stage offsets, when requested, are folded into each source's
/// intercept, which therefore must exist.
pub fn fit_pool(
    bundle: &[SourceDataset],
    tv: &[f64],
    val_bundle: &[SourceDataset],
    stage_indicator: bool,
    hp_base: &HyperParams,
) -> Result<(BaselineFit, FitReport)> {
    if bundle.len() < 2 {
        return Err(PairError::InvalidArgument(
            "pooling needs at least two sources".into(),
        ));
    }
    if tv.is_empty() {
        return Err(PairError::Empty("TV grid".into()));
    }
    let intercept = if stage_indicator {
        Some(intercept_column(bundle).ok_or_else(|| {
            PairError::InvalidArgument("a stage indicator requires an intercept column".into())
        })?)
    } else {
        None
    };
    let train = pool_bundle(bundle, stage_indicator)?;
    let val = pool_bundle(val_bundle, stage_indicator)?;
    let res = tv_grid(
        std::slice::from_ref(&train),
        std::slice::from_ref(&val),
        tv,
        hp_base,
        EvalMode::Sequential,
    )?;
    let report = res.best_report().clone();
    let shared = &report.params.betas[0];
    let d = bundle[0].d();
    let c = report.coefficients().remove(0);
    let betas = (0..bundle.len())
        .map(|t| {
            let mut b = shared[..d].to_vec();
            if let (Some(j), true) = (intercept, t > 0) {
                b[j] += shared[d + t - 1];
            }
            b
        })
        .collect();
    let fit = BaselineFit {
        method: Method::Pool,
        betas,
        coefs: vec![c; bundle.len()],
        tuning: vec![("lambda".into(), report.hp.lambda_tv.to_string())],
    };
    Ok((fit, report))
}

/// Tuning ranges used for the baselines throughout the simulation study.
pub mod default_grids {
    pub const LASSO: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];
    pub const RANK: [usize; 5] = [1, 2, 3, 4, 5];
    pub const TV: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];
}
