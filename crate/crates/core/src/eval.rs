//! Metrics: estimation error, prediction error, explained variance,
//! marginal correlations, heterogeneity maps and replication summaries.

use serde::{Deserialize, Serialize};

use crate::error::{PairError, Result};
use crate::linalg::lstsq_min_norm;
use crate::types::{dot, ImageMatrix, Matrix, PairParams, SourceDataset};

pub fn rmse(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(PairError::Empty("rmse input".into()));
    }
    if y_hat.len() != y.len() {
        return Err(PairError::Dimension(format!(
            "{} predictions for {} responses",
            y_hat.len(),
            y.len()
        )));
    }
    let sse: f64 = y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainedVariance {
    pub r_z: f64,
    pub r_x_given_z: f64,
    pub r_zx: f64,
}

/// Variance ratios relative to `sum (y - mean)^2`: covariate-only fit,
/// increment of the full fit over the covariate-only fit, and full fit.
pub fn explained_variance(
    ds: &SourceDataset,
    beta_z_only: &[f64],
    beta_full: &[f64],
    c_full: &ImageMatrix,
) -> Result<ExplainedVariance> {
    if beta_z_only.len() != ds.d() {
        return Err(PairError::Dimension("covariate-only beta length".into()));
    }
    let y = ds.y();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let total: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if total <= 0.0 {
        return Err(PairError::InvalidArgument("response is constant".into()));
    }
    let y_z: Vec<f64> = (0..ds.n())
        .map(|i| dot(ds.z().row(i), beta_z_only))
        .collect();
    let y_full = ds.predict(beta_full, c_full);
    let ss = |f: &dyn Fn(usize) -> f64| (0..ds.n()).map(|i| f(i) * f(i)).sum::<f64>() / total;
    Ok(ExplainedVariance {
        r_z: ss(&|i| y_z[i] - mean),
        r_x_given_z: ss(&|i| y_full[i] - y_z[i]),
        r_zx: ss(&|i| y_full[i] - mean),
    })
}

/// Ordinary least squares of `y` on `Z` alone.
pub fn covariate_only_beta(ds: &SourceDataset) -> Vec<f64> {
    lstsq_min_norm(ds.z(), ds.y()).x
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalCorrelations {
    pub covariates: Vec<f64>,
    pub pixels: ImageMatrix,
    /// Covariate columns that were constant (correlation reported as 0).
    pub constant_covariates: Vec<usize>,
    /// Pixel positions (row-major) that were constant.
    pub constant_pixels: Vec<usize>,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

pub fn marginal_correlations(ds: &SourceDataset) -> Result<MarginalCorrelations> {
    if ds.n() < 3 {
        return Err(PairError::InvalidArgument(
            "marginal correlations need at least 3 observations".into(),
        ));
    }
    let y = ds.y();
    let mut constant_covariates = Vec::new();
    let covariates = (0..ds.d())
        .map(|j| {
            pearson(&ds.z().column(j), y).unwrap_or_else(|| {
                constant_covariates.push(j);
                0.0
            })
        })
        .collect();
    let (p, q) = ds.image_shape();
    let mut pixels = Matrix::zeros(p, q);
    let mut constant_pixels = Vec::new();
    let mut col = vec![0.0; ds.n()];
    for k in 0..p * q {
        for (i, c) in col.iter_mut().enumerate() {
            *c = ds.x().image(i)[k];
        }
        pixels.as_mut_slice()[k] = pearson(&col, y).unwrap_or_else(|| {
            constant_pixels.push(k);
            0.0
        });
    }
    Ok(MarginalCorrelations {
        covariates,
        pixels,
        constant_covariates,
        constant_pixels,
    })
}

/// Percentile of `values` by linear interpolation between order statistics.
pub fn percentile(values: &[f64], pct: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let pos = (pct.clamp(0.0, 100.0) / 100.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Entrywise `|C_a / C_b| - 1`, truncated above at the `pct` percentile of
/// its finite entries. Entries with `C_b == 0` take the truncation value.
pub fn heterogeneity_ratio(c_a: &ImageMatrix, c_b: &ImageMatrix, pct: f64) -> Result<ImageMatrix> {
    if c_a.shape() != c_b.shape() {
        return Err(PairError::Dimension(format!(
            "shapes {:?} and {:?}",
            c_a.shape(),
            c_b.shape()
        )));
    }
    let raw: Vec<f64> = c_a
        .as_slice()
        .iter()
        .zip(c_b.as_slice())
        .map(|(a, b)| {
            if *b == 0.0 {
                f64::INFINITY
            } else {
                (a / b).abs() - 1.0
            }
        })
        .collect();
    // every denominator zero: nothing to compare against
    let cap = percentile(&raw, pct).unwrap_or(0.0);
    let (p, q) = c_a.shape();
    Matrix::from_vec(p, q, raw.into_iter().map(|v| v.min(cap)).collect())
}

/// Metrics for one source. Missing entries were not computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceMetrics {
    pub source_id: String,
    pub beta_err: Option<f64>,
    pub c_err: Option<f64>,
    pub rmse: Option<f64>,
    pub r_z: Option<f64>,
    pub r_x_given_z: Option<f64>,
    pub r_zx: Option<f64>,
}

impl SourceMetrics {
    pub const NAMES: [&'static str; 6] =
        ["beta_err", "c_err", "rmse", "r_z", "r_x_given_z", "r_zx"];

    pub fn values(&self) -> [Option<f64>; 6] {
        [
            self.beta_err,
            self.c_err,
            self.rmse,
            self.r_z,
            self.r_x_given_z,
            self.r_zx,
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub sources: Vec<SourceMetrics>,
}

impl EvalReport {
    /// Estimation errors against `truth` (when given) and RMSE on `test`.
    pub fn from_fit(
        method: &str,
        betas: &[Vec<f64>],
        coefs: &[ImageMatrix],
        test: &[SourceDataset],
        truth: Option<&PairParams>,
    ) -> Result<Self> {
        if betas.len() != test.len() || coefs.len() != test.len() {
            return Err(PairError::Dimension(
                "fit and test bundle differ in source count".into(),
            ));
        }
        let true_coefs = truth.map(PairParams::coefficients);
        let mut sources = Vec::with_capacity(test.len());
        for (t, ds) in test.iter().enumerate() {
            let mut m = SourceMetrics {
                source_id: ds.source_id.clone(),
                rmse: Some(rmse(&ds.predict(&betas[t], &coefs[t]), ds.y())?),
                ..Default::default()
            };
            if let (Some(tr), Some(tc)) = (truth, &true_coefs) {
                let tb = &tr.betas[t];
                if tb.len() != betas[t].len() {
                    return Err(PairError::Dimension("true beta length differs".into()));
                }
                m.beta_err = Some(
                    betas[t]
                        .iter()
                        .zip(tb)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt(),
                );
                if coefs[t].shape() != tc[t].shape() {
                    return Err(PairError::Dimension(
                        "true coefficient shape differs".into(),
                    ));
                }
                m.c_err = Some(coefs[t].sub(&tc[t]).frobenius_norm());
            }
            sources.push(m);
        }
        Ok(Self {
            method: method.to_string(),
            sources,
        })
    }

    pub fn with_explained_variance(
        mut self,
        data: &[SourceDataset],
        betas: &[Vec<f64>],
        coefs: &[ImageMatrix],
    ) -> Result<Self> {
        for (t, ds) in data.iter().enumerate() {
            let ev = explained_variance(ds, &covariate_only_beta(ds), &betas[t], &coefs[t])?;
            let m = &mut self.sources[t];
            m.r_z = Some(ev.r_z);
            m.r_x_given_z = Some(ev.r_x_given_z);
            m.r_zx = Some(ev.r_zx);
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

/// Two-pass mean and sample standard deviation; `None` for fewer than two values.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Some(Summary {
        mean,
        sd: (ss / (n - 1.0)).sqrt(),
        count: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub source_id: String,
    /// Keyed by [`SourceMetrics::NAMES`]; metrics present in fewer than two
    /// reports are omitted.
    pub metrics: Vec<(String, Summary)>,
}

impl SourceSummary {
    pub fn get(&self, name: &str) -> Option<Summary> {
        self.metrics
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, s)| *s)
    }
}

/// Mean and sample sd per source and metric across replications of one method.
pub fn aggregate_replications(reports: &[EvalReport]) -> Result<Vec<SourceSummary>> {
    if reports.len() < 2 {
        return Err(PairError::InvalidArgument(format!(
            "need at least 2 reports, got {}",
            reports.len()
        )));
    }
    let t_count = reports[0].sources.len();
    if reports.iter().any(|r| r.sources.len() != t_count) {
        return Err(PairError::Dimension(
            "reports cover different numbers of sources".into(),
        ));
    }
    Ok((0..t_count)
        .map(|t| {
            let metrics = SourceMetrics::NAMES
                .iter()
                .enumerate()
                .filter_map(|(k, name)| {
                    let vals: Vec<f64> = reports
                        .iter()
                        .filter_map(|r| r.sources[t].values()[k])
                        .collect();
                    summarize(&vals).map(|s| (name.to_string(), s))
                })
                .collect();
            SourceSummary {
                source_id: reports[0].sources[t].source_id.clone(),
                metrics,
            }
        })
        .collect())
}
