//! One entry point that fits any supported method on train/validation bundles.

use pair::baselines::{self, BaselineFit, Method};
use pair::objective::EvalMode;
use pair::solver::{fit_with, grid_search, FitOptions, FitReport, GridResult};
use pair::{HyperParams, Result, SourceDataset};

use crate::config::RunConfig;

pub struct Fitted {
    pub fit: BaselineFit,
    /// Present for PAIR: the selected training run.
    pub report: Option<FitReport>,
    /// Present for PAIR when more than one cell was searched.
    pub grid: Option<GridResult>,
}

pub fn eval_mode(cfg: &RunConfig) -> EvalMode {
    if cfg.deterministic || cfg.jobs == 1 {
        EvalMode::Sequential
    } else {
        EvalMode::Parallel
    }
}

fn per_source(
    method: Method,
    train: &[SourceDataset],
    val: &[SourceDataset],
    mut f: impl FnMut(&SourceDataset, &SourceDataset) -> Result<BaselineFit>,
) -> Result<BaselineFit> {
    let fits = train
        .iter()
        .zip(val)
        .map(|(t, v)| f(t, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(BaselineFit::stack(method, fits))
}

/// Fits `method`; `seed` replaces the configured seed.
pub fn fit_method(
    method: Method,
    train: &[SourceDataset],
    val: &[SourceDataset],
    cfg: &RunConfig,
    seed: u64,
) -> Result<Fitted> {
    let hp = HyperParams {
        seed,
        ..cfg.hyper.clone()
    };
    let b = &cfg.baselines;
    let plain = |fit| Fitted {
        fit,
        report: None,
        grid: None,
    };
    Ok(match method {
        Method::Pair => {
            let opts = FitOptions {
                frozen_weights: None,
                mode: eval_mode(cfg),
            };
            let grid: Vec<HyperParams> = cfg
                .pair_grid()
                .into_iter()
                .map(|h| HyperParams { seed, ..h })
                .collect();
            let (report, grid) = if grid.len() == 1 {
                (fit_with(train, val, &grid[0], &opts)?, None)
            } else {
                let res = grid_search(train, val, &grid, seed, &opts)?;
                (res.best_report().clone(), Some(res))
            };
            let tuning = vec![
                ("r".to_string(), report.hp.r_components.to_string()),
                ("lambda".to_string(), report.hp.lambda_tv.to_string()),
                ("gamma".to_string(), report.hp.gamma_sip.to_string()),
                ("tau".to_string(), report.hp.tau.to_string()),
            ];
            Fitted {
                fit: BaselineFit::from_params(&report.params, tuning),
                report: Some(report),
                grid,
            }
        }
        Method::Vr if b.marginal => plain(per_source(method, train, val, |t, _| {
            baselines::fit_vr_marginal(t)
        })?),
        Method::Vr => plain(per_source(method, train, val, |t, _| baselines::fit_vr(t))?),
        Method::Rvr => plain(per_source(method, train, val, |t, v| {
            baselines::fit_rvr(t, &b.lasso, v, b.lasso_settings())
        })?),
        Method::Tr => plain(per_source(method, train, val, |t, v| {
            baselines::fit_tr(t, &b.rank, v, b.lowrank_settings())
        })?),
        Method::Rtr => plain(per_source(method, train, val, |t, v| {
            baselines::fit_rtr(t, &b.rank, &b.lasso, v, b.lowrank_settings())
        })?),
        Method::Sirtv => plain(per_source(method, train, val, |t, v| {
            baselines::fit_sirtv(t, &b.tv, v, &hp).map(|(f, _)| f)
        })?),
        Method::Pool => plain(baselines::fit_pool(train, &b.tv, val, b.stage_indicator, &hp)?.0),
    })
}
