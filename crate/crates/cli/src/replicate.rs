//! Replication studies: each replication simulates fresh data from
//! `split(master_seed, rep)` and fits every configured method.

use std::fmt::Write as _;

use pair::baselines::Method;
use pair::eval::{aggregate_replications, EvalReport, SourceMetrics, SourceSummary};
use pair::io::KvDoc;
use pair::rng::split_seed;
use pair::simgen::{generate, SimConfig};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::methods::fit_method;

#[derive(Debug, Clone)]
pub struct Replication {
    pub rep: usize,
    pub seed: u64,
    /// One entry per configured method, in configuration order.
    pub results: Vec<(Method, Result<EvalReport, String>)>,
}

pub fn replication_seed(master: u64, rep: usize) -> u64 {
    split_seed(master, rep as u64)
}

pub fn run_one(cfg: &RunConfig, rep: usize) -> Replication {
    let seed = replication_seed(cfg.seed, rep);
    let sim = SimConfig {
        seed,
        ..cfg.simulate.clone()
    };
    let results = match generate(&sim, &cfg.image_source()) {
        Err(e) => cfg
            .replicate
            .methods
            .iter()
            .map(|m| (*m, Err(format!("simulation failed: {e}"))))
            .collect(),
        Ok(data) => cfg
            .replicate
            .methods
            .iter()
            .map(|&m| {
                let outcome = fit_method(m, &data.train, &data.val, cfg, seed).and_then(|f| {
                    EvalReport::from_fit(
                        m.name(),
                        &f.fit.betas,
                        &f.fit.coefs,
                        &data.test,
                        Some(&data.truth),
                    )?
                    .with_explained_variance(
                        &data.test,
                        &f.fit.betas,
                        &f.fit.coefs,
                    )
                });
                if let Err(e) = &outcome {
                    log::warn!("replication {rep}, method {m}: {e}");
                }
                (m, outcome.map_err(|e| e.to_string()))
            })
            .collect(),
    };
    Replication { rep, seed, results }
}

/// Runs all replications; results come back in replication order whatever
/// the number of workers.
pub fn run_all(cfg: &RunConfig) -> Vec<Replication> {
    let reps = cfg.replicate.reps;
    if cfg.deterministic || cfg.jobs == 1 {
        (0..reps).map(|r| run_one(cfg, r)).collect()
    } else {
        (0..reps).into_par_iter().map(|r| run_one(cfg, r)).collect()
    }
}

pub struct MethodSummary {
    pub method: Method,
    pub succeeded: usize,
    /// `None` when fewer than two replications succeeded.
    pub sources: Option<Vec<SourceSummary>>,
}

pub fn summarize(cfg: &RunConfig, reps: &[Replication]) -> Vec<MethodSummary> {
    cfg.replicate
        .methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let ok: Vec<EvalReport> = reps
                .iter()
                .filter_map(|r| r.results[k].1.as_ref().ok().cloned())
                .collect();
            MethodSummary {
                method,
                succeeded: ok.len(),
                sources: aggregate_replications(&ok).ok(),
            }
        })
        .collect()
}

/// Table laid out as rows of (source, metric) and one `mean (sd)` column
/// per method. Methods with failed replications are starred.
pub fn render_table(cfg: &RunConfig, summaries: &[MethodSummary]) -> String {
    let sim = &cfg.simulate;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# setting {:?}, n {}, replications {}, master seed {}",
        sim.setting, sim.n, cfg.replicate.reps, cfg.seed
    );
    let mut header = format!(
        "{:<8} {:<6} {:<7} {:<12}",
        "setting", "n", "source", "metric"
    );
    for s in summaries {
        let star = if s.succeeded < cfg.replicate.reps {
            "*"
        } else {
            ""
        };
        let _ = write!(header, " {:>21}", format!("{}{star}", s.method));
    }
    let _ = writeln!(out, "{header}");
    for t in 0..sim.t_sources {
        for name in SourceMetrics::NAMES {
            let mut line = format!(
                "{:<8} {:<6} {:<7} {:<12}",
                format!("{:?}", sim.setting),
                sim.n,
                t,
                name
            );
            for s in summaries {
                let cell = s
                    .sources
                    .as_ref()
                    .and_then(|src| src.get(t))
                    .and_then(|src| src.get(name))
                    .map_or_else(
                        || "NA".to_string(),
                        |m| format!("{:.3} ({:.3})", m.mean, m.sd),
                    );
                let _ = write!(line, " {cell:>21}");
            }
            let _ = writeln!(out, "{line}");
        }
    }
    for s in summaries
        .iter()
        .filter(|s| s.succeeded < cfg.replicate.reps)
    {
        let _ = writeln!(
            out,
            "# * {}: {} of {} replications failed",
            s.method,
            cfg.replicate.reps - s.succeeded,
            cfg.replicate.reps
        );
    }
    out
}

/// Full-precision version of the table.
pub fn summary_doc(cfg: &RunConfig, summaries: &[MethodSummary]) -> KvDoc {
    let mut doc = KvDoc::new();
    doc.push("format", pair::io::REPORT_VERSION);
    doc.push("kind", "replication-summary");
    doc.push("setting", format!("{:?}", cfg.simulate.setting));
    doc.push("n", cfg.simulate.n);
    doc.push("reps", cfg.replicate.reps);
    doc.push("seed", cfg.seed);
    for s in summaries {
        doc.push(format!("{}.succeeded", s.method), s.succeeded);
        for (t, src) in s.sources.iter().flatten().enumerate() {
            for (name, m) in &src.metrics {
                doc.push_vec(format!("{}.{t}.{name}", s.method), &[m.mean, m.sd]);
            }
        }
    }
    doc
}
