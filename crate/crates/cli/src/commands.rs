//! Subcommand implementations. Each writes its outputs under `cfg.out`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pair::baselines::{BaselineFit, Method};
use pair::eval::EvalReport;
use pair::io::{self, BundleFlags, KvDoc};
use pair::simgen::{generate, ImageSource};
use pair::SourceDataset;

use crate::config::RunConfig;
use crate::methods::fit_method;
use crate::replicate;

fn prepare_out(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .with_context(|| format!("[data] {what} is required for this command"))
}

fn load(p: &Option<PathBuf>, what: &str) -> Result<Vec<SourceDataset>> {
    let path = required(p, what)?;
    Ok(io::read_bundle(path)
        .with_context(|| format!("loading {what} bundle"))?
        .0)
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let source = cfg.image_source();
    let data = generate(&cfg.simulate, &source)?;
    let flags = BundleFlags {
        intercept: cfg.simulate.intercept,
        normalized: matches!(source, ImageSource::FromFiles(_)),
    };
    for (name, bundle) in [
        ("train", &data.train),
        ("val", &data.val),
        ("test", &data.test),
    ] {
        let manifest = io::write_bundle(out, name, bundle, flags)?;
        log::info!("wrote {}", manifest.display());
    }
    io::write_params(&out.join("truth.params"), &data.truth)?;
    io::write_fit(
        &out.join("truth.fit"),
        &BaselineFit::from_params(&data.truth, Vec::new()),
    )?;
    Ok(())
}

fn write_fit_outputs(cfg: &RunConfig, out: &Path, fit: &BaselineFit) -> Result<()> {
    let stem = fit.method.name();
    io::write_fit(&out.join(format!("{stem}.fit")), fit)?;
    for (t, c) in fit.coefs.iter().enumerate() {
        io::export_heatmap(
            c,
            &out.join(format!("{stem}_coef_{t}.pgm")),
            cfg.heatmap.scale,
        )?;
    }
    Ok(())
}

fn grid_doc(grid: &pair::solver::GridResult) -> KvDoc {
    let mut doc = KvDoc::new();
    doc.push("format", io::REPORT_VERSION);
    doc.push("kind", "grid");
    doc.push("cells", grid.cells.len());
    doc.push("best", grid.best);
    for (i, cell) in grid.cells.iter().enumerate() {
        io::hyper_doc(&mut doc, &format!("cell.{i}."), &cell.hp);
        match &cell.outcome {
            Ok(r) => doc.push_f64(format!("cell.{i}.val_loss"), r.best_val_loss()),
            Err(e) => doc.push(format!("cell.{i}.error"), e.replace('\n', " ")),
        }
    }
    doc
}

fn run_fit(cfg: &RunConfig, method: Method) -> Result<()> {
    let train = load(&cfg.data.train, "train")?;
    let val = load(&cfg.data.val, "val")?;
    let out = prepare_out(cfg)?;
    let fitted = fit_method(method, &train, &val, cfg, cfg.seed)
        .with_context(|| format!("fitting {method}"))?;
    write_fit_outputs(cfg, out, &fitted.fit)?;
    if let Some(report) = &fitted.report {
        io::write_params(&out.join("pair.params"), &report.params)?;
        io::fit_report_doc(report).write(&out.join("pair.train"))?;
    }
    if let Some(grid) = &fitted.grid {
        grid_doc(grid).write(&out.join("grid.report"))?;
    }
    Ok(())
}

pub fn fit(cfg: &RunConfig) -> Result<()> {
    run_fit(cfg, cfg.method)
}

pub fn grid_search(cfg: &RunConfig) -> Result<()> {
    if cfg.grid.is_none() {
        bail!("grid-search needs a [grid] section");
    }
    run_fit(cfg, Method::Pair)
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let test = load(&cfg.data.test, "test")?;
    let fit = io::read_fit(required(&cfg.data.fit, "fit")?)?;
    let truth = cfg.data.truth.as_deref().map(io::read_params).transpose()?;
    let report = EvalReport::from_fit(
        fit.method.name(),
        &fit.betas,
        &fit.coefs,
        &test,
        truth.as_ref(),
    )?
    .with_explained_variance(&test, &fit.betas, &fit.coefs)?;
    let out = prepare_out(cfg)?;
    io::eval_doc(&report).write(&out.join(format!("{}.eval", fit.method)))?;
    Ok(())
}

pub fn replicate(cfg: &RunConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let reps = replicate::run_all(cfg);
    let rep_dir = out.join("reps");
    fs::create_dir_all(&rep_dir).with_context(|| format!("creating {}", rep_dir.display()))?;
    let mut failures = String::new();
    for r in &reps {
        for (m, res) in &r.results {
            match res {
                Ok(report) => io::eval_doc(report)
                    .write(&rep_dir.join(format!("rep{:03}_{m}.eval", r.rep)))?,
                Err(e) => {
                    let _ = writeln!(failures, "rep {} (seed {}) {m}: {e}", r.rep, r.seed);
                }
            }
        }
    }
    let summaries = replicate::summarize(cfg, &reps);
    fs::write(
        out.join("table.txt"),
        replicate::render_table(cfg, &summaries),
    )
    .context("writing table")?;
    replicate::summary_doc(cfg, &summaries).write(&out.join("summary.report"))?;
    let failures_path = out.join("failures.txt");
    if failures.is_empty() {
        if failures_path.exists() {
            fs::remove_file(&failures_path).context("removing stale failure list")?;
        }
        Ok(())
    } else {
        fs::write(&failures_path, &failures).context("writing failure list")?;
        bail!("some replications failed:\n{failures}")
    }
}

pub fn export_heatmap(cfg: &RunConfig) -> Result<()> {
    let input = cfg
        .heatmap
        .input
        .as_deref()
        .context("[heatmap] input is required")?;
    let fit = io::read_fit(input)?;
    let out = prepare_out(cfg)?;
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("heatmap");
    for (t, c) in fit.coefs.iter().enumerate() {
        let path = io::export_heatmap(c, &out.join(format!("{stem}_{t}.pgm")), cfg.heatmap.scale)?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}
