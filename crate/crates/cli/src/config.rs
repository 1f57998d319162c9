//! Run configuration, read from TOML. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pair::baselines::{default_grids, LassoSettings, LowRankSettings, Method};
use pair::io::HeatmapScale;
use pair::simgen::{ImageSource, SimConfig};
use pair::solver::product_grid;
use pair::HyperParams;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Overrides the seed fields of `[simulate]` and `[hyper]`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub jobs: usize,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub simulate: SimConfig,
    #[serde(default)]
    pub images: ImagesConfig,
    #[serde(default)]
    pub hyper: HyperParams,
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub baselines: BaselineConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub replicate: ReplicateConfig,
    #[serde(default)]
    pub heatmap: HeatmapConfig,
}

fn one() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase", tag = "source")]
pub enum ImagesConfig {
    #[default]
    Gaussian,
    /// An image-stack file or a directory of PGM images.
    Files { path: PathBuf },
}

/// Axes of the PAIR tuning grid; a missing axis takes the single value from
/// `[hyper]`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub r: Option<Vec<usize>>,
    pub lambda: Option<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
    pub tau: Option<Vec<f64>>,
    /// Use the full default search ranges instead of the axes above.
    #[serde(default)]
    pub full: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub tv: Vec<f64>,
    pub lasso: Vec<f64>,
    pub rank: Vec<usize>,
    pub stage_indicator: bool,
    /// Mass-univariate map instead of the joint fit for `vr`.
    pub marginal: bool,
    pub lasso_max_sweeps: usize,
    pub lowrank_max_cycles: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            tv: default_grids::TV.to_vec(),
            lasso: default_grids::LASSO.to_vec(),
            rank: default_grids::RANK.to_vec(),
            stage_indicator: false,
            marginal: false,
            lasso_max_sweeps: LassoSettings::default().max_sweeps,
            lowrank_max_cycles: LowRankSettings::default().max_cycles,
        }
    }
}

impl BaselineConfig {
    pub fn lasso_settings(&self) -> LassoSettings {
        LassoSettings {
            max_sweeps: self.lasso_max_sweeps,
            ..LassoSettings::default()
        }
    }

    pub fn lowrank_settings(&self) -> LowRankSettings {
        LowRankSettings {
            max_cycles: self.lowrank_max_cycles,
            ..LowRankSettings::default()
        }
    }
}

/// Bundle manifests and result files used by `fit`, `grid-search` and
/// `evaluate`. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// True parameters, for estimation errors.
    pub truth: Option<PathBuf>,
    /// Fit file to evaluate.
    pub fit: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplicateConfig {
    pub reps: usize,
    pub methods: Vec<Method>,
}

impl Default for ReplicateConfig {
    fn default() -> Self {
        Self {
            reps: 10,
            methods: vec![Method::Pair, Method::Sirtv, Method::Pool],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapConfig {
    /// Fit file whose coefficient images are exported.
    pub input: Option<PathBuf>,
    pub scale: HeatmapScale,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            input: None,
            scale: HeatmapScale::Symmetric,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("invalid configuration")?;
        Ok(cfg)
    }

    /// Reads, anchors relative paths at the file's directory, and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.anchor(base);
        Ok(cfg)
    }

    fn anchor(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        for p in [
            &mut self.data.train,
            &mut self.data.val,
            &mut self.data.test,
            &mut self.data.truth,
            &mut self.data.fit,
            &mut self.heatmap.input,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        if let ImagesConfig::Files { path } = &mut self.images {
            fix(path);
        }
    }

    /// Applies command-line overrides, propagates the master seed and checks
    /// every section.
    pub fn finalize(
        &mut self,
        seed: Option<u64>,
        jobs: Option<usize>,
        deterministic: bool,
        out: Option<PathBuf>,
    ) -> Result<()> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(j) = jobs {
            self.jobs = j;
        }
        self.deterministic |= deterministic;
        if let Some(o) = out {
            self.out = o;
        }
        self.simulate.seed = self.seed;
        self.hyper.seed = self.seed;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        self.hyper.validate()?;
        let s = &self.simulate;
        if s.t_sources == 0 || s.r_components == 0 || s.n < 5 || s.d == 0 || s.p == 0 || s.q == 0 {
            bail!("[simulate] needs positive sources, components, d, p, q and n >= 5");
        }
        if !(s.noise_sd >= 0.0) {
            bail!("[simulate] noise_sd must be nonnegative");
        }
        let b = &self.baselines;
        if b.tv.is_empty() || b.lasso.is_empty() || b.rank.is_empty() {
            bail!("[baselines] grids must be nonempty");
        }
        if b.tv.iter().chain(&b.lasso).any(|v| !(*v >= 0.0)) || b.rank.contains(&0) {
            bail!("[baselines] penalties must be nonnegative and ranks positive");
        }
        if self.replicate.methods.is_empty() {
            bail!("[replicate] methods must not be empty");
        }
        if self.replicate.reps < 2 {
            bail!("[replicate] reps must be at least 2");
        }
        for hp in self.pair_grid() {
            hp.validate()?;
        }
        Ok(())
    }

    pub fn image_source(&self) -> ImageSource {
        match &self.images {
            ImagesConfig::Gaussian => ImageSource::Gaussian,
            ImagesConfig::Files { path } => ImageSource::FromFiles(path.clone()),
        }
    }

    /// PAIR hyperparameter cells; a single cell when no `[grid]` is given.
    pub fn pair_grid(&self) -> Vec<HyperParams> {
        match &self.grid {
            None => vec![self.hyper.clone()],
            Some(g) if g.full => pair::solver::default_grid(&self.hyper),
            Some(g) => product_grid(
                &self.hyper,
                g.r.as_deref().unwrap_or(&[self.hyper.r_components]),
                g.lambda.as_deref().unwrap_or(&[self.hyper.lambda_tv]),
                g.gamma.as_deref().unwrap_or(&[self.hyper.gamma_sip]),
                g.tau.as_deref().unwrap_or(&[self.hyper.tau]),
            ),
        }
    }
}
