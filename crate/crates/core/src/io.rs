//! File formats.
//!
//! * `y` files: one response per line, `{:.16e}` decimal.
//! * `z` files: one observation per line, comma-separated `{:.16e}` values.
//! * `x` files: 16-byte header (`b"PAIX"`, then `n`, `p`, `q` as little-endian
//!   `u32`) followed by `n * p * q` little-endian `f64`, images concatenated,
//!   each row-major.
//! * bundle manifest: TOML listing dimensions, flags and, per source, the
//!   three payload files with their SHA-256 digests.
//! * parameters, fits and reports: `key = value` lines in a fixed order;
//!   floats as `{:.16e}`, vectors comma-separated, row-major for matrices.
//! * heatmaps: binary 16-bit PGM (`P5`, width `q`, height `p`, maxval 65535,
//!   big-endian samples) plus a `.affine` sidecar holding `offset` and
//!   `scale` such that `value = offset + scale * sample`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{BaselineFit, Method};
use crate::error::{PairError, Result};
use crate::eval::{EvalReport, SourceMetrics};
use crate::solver::FitReport;
use crate::types::{HyperParams, ImageMatrix, ImageStack, Matrix, PairParams, SourceDataset};

pub const BUNDLE_VERSION: &str = "pair-bundle/1";
pub const PARAMS_VERSION: &str = "pair-params/1";
pub const FIT_VERSION: &str = "pair-fit/1";
pub const REPORT_VERSION: &str = "pair-report/1";
const STACK_MAGIC: &[u8; 4] = b"PAIX";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| PairError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PairError::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| PairError::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| PairError::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn parse_f64(path: &Path, line: usize, token: &str) -> Result<f64> {
    let v: f64 = token
        .trim()
        .parse()
        .map_err(|_| PairError::format(path, format!("line {line}: cannot parse {token:?}")))?;
    if !v.is_finite() {
        return Err(PairError::format(
            path,
            format!("line {line}: non-finite value"),
        ));
    }
    Ok(v)
}

/// Lines of a text payload; a single trailing newline is allowed, blank
/// lines are not.
fn payload_lines<'a>(path: &Path, text: &'a str) -> Result<Vec<&'a str>> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    let lines: Vec<&str> = body.split('\n').collect();
    if let Some(k) = lines.iter().position(|l| l.trim().is_empty()) {
        return Err(PairError::format(path, format!("blank line {}", k + 1)));
    }
    Ok(lines)
}

pub fn encode_vector(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x) + "\n").collect()
}

pub fn decode_vector(path: &Path, text: &str) -> Result<Vec<f64>> {
    payload_lines(path, text)?
        .iter()
        .enumerate()
        .map(|(i, l)| parse_f64(path, i + 1, l))
        .collect()
}

pub fn encode_matrix(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn decode_matrix(path: &Path, text: &str, cols: usize) -> Result<Vec<f64>> {
    let mut data = Vec::new();
    for (i, line) in payload_lines(path, text)?.iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(PairError::format(
                path,
                format!("line {}: {} fields, expected {cols}", i + 1, fields.len()),
            ));
        }
        for f in fields {
            data.push(parse_f64(path, i + 1, f)?);
        }
    }
    Ok(data)
}

pub fn encode_image_stack(stack: &ImageStack) -> Vec<u8> {
    let (p, q) = stack.image_shape();
    let mut out = Vec::with_capacity(16 + 8 * stack.as_slice().len());
    out.extend_from_slice(STACK_MAGIC);
    for v in [stack.len(), p, q] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in stack.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_image_stack(path: &Path, bytes: &[u8]) -> Result<ImageStack> {
    if bytes.len() < 16 || &bytes[..4] != STACK_MAGIC {
        return Err(PairError::format(path, "missing image-stack header"));
    }
    let word = |k: usize| {
        u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().expect("4 bytes")) as usize
    };
    let (n, p, q) = (word(0), word(1), word(2));
    let expected = 16 + 8 * n * p * q;
    if bytes.len() != expected {
        return Err(PairError::format(
            path,
            format!("{} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ImageStack::from_vec(n, p, q, data).map_err(|e| PairError::format(path, e.to_string()))
}

pub fn write_image_stack(path: &Path, stack: &ImageStack) -> Result<()> {
    write_file(path, &encode_image_stack(stack))
}

pub fn read_image_stack(path: &Path) -> Result<ImageStack> {
    decode_image_stack(path, &read_bytes(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceEntry {
    pub id: String,
    pub n: usize,
    pub y: String,
    pub z: String,
    pub x: String,
    pub y_sha256: String,
    pub z_sha256: String,
    pub x_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub version: String,
    pub t: usize,
    pub d: usize,
    pub p: usize,
    pub q: usize,
    /// Column 0 of every `z` file is a constant-1 intercept.
    pub intercept: bool,
    /// Image pixels were standardized before writing.
    pub normalized: bool,
    pub sources: Vec<SourceEntry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BundleFlags {
    pub intercept: bool,
    pub normalized: bool,
}

/// Writes `<dir>/<name>.toml` plus three payload files per source and
/// returns the manifest path. Payload paths are stored relative to `dir`.
pub fn write_bundle(
    dir: &Path,
    name: &str,
    bundle: &[SourceDataset],
    flags: BundleFlags,
) -> Result<PathBuf> {
    let (d, p, q) = crate::types::bundle_dims(bundle)?;
    let mut sources = Vec::with_capacity(bundle.len());
    for (t, ds) in bundle.iter().enumerate() {
        let stem = format!("{name}_{t}");
        let y = encode_vector(ds.y()).into_bytes();
        let z = encode_matrix(ds.z()).into_bytes();
        let x = encode_image_stack(ds.x());
        let entry = SourceEntry {
            id: ds.source_id.clone(),
            n: ds.n(),
            y: format!("{stem}_y.txt"),
            z: format!("{stem}_z.txt"),
            x: format!("{stem}_x.bin"),
            y_sha256: sha256_hex(&y),
            z_sha256: sha256_hex(&z),
            x_sha256: sha256_hex(&x),
        };
        write_file(&dir.join(&entry.y), &y)?;
        write_file(&dir.join(&entry.z), &z)?;
        write_file(&dir.join(&entry.x), &x)?;
        sources.push(entry);
    }
    let manifest = BundleManifest {
        version: BUNDLE_VERSION.to_string(),
        t: bundle.len(),
        d,
        p,
        q,
        intercept: flags.intercept,
        normalized: flags.normalized,
        sources,
    };
    let path = dir.join(format!("{name}.toml"));
    let text = toml::to_string(&manifest).map_err(|e| PairError::format(&path, e.to_string()))?;
    write_file(&path, text.as_bytes())?;
    Ok(path)
}

fn checked_payload(base: &Path, rel: &str, digest: &str) -> Result<(PathBuf, Vec<u8>)> {
    let path = base.join(rel);
    let bytes = read_bytes(&path)?;
    if sha256_hex(&bytes) != digest {
        return Err(PairError::Checksum(path));
    }
    Ok((path, bytes))
}

pub fn read_manifest(path: &Path) -> Result<BundleManifest> {
    let manifest: BundleManifest =
        toml::from_str(&read_text(path)?).map_err(|e| PairError::format(path, e.to_string()))?;
    if manifest.version != BUNDLE_VERSION {
        return Err(PairError::format(
            path,
            format!("unsupported version {}", manifest.version),
        ));
    }
    if manifest.sources.len() != manifest.t {
        return Err(PairError::Dimension(format!(
            "manifest declares T = {} but lists {} sources",
            manifest.t,
            manifest.sources.len()
        )));
    }
    Ok(manifest)
}

pub fn read_bundle(manifest_path: &Path) -> Result<(Vec<SourceDataset>, BundleManifest)> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut bundle = Vec::with_capacity(manifest.t);
    for entry in &manifest.sources {
        let (ypath, ybytes) = checked_payload(base, &entry.y, &entry.y_sha256)?;
        let (zpath, zbytes) = checked_payload(base, &entry.z, &entry.z_sha256)?;
        let (xpath, xbytes) = checked_payload(base, &entry.x, &entry.x_sha256)?;
        let ytext =
            String::from_utf8(ybytes).map_err(|_| PairError::format(&ypath, "not UTF-8"))?;
        let ztext =
            String::from_utf8(zbytes).map_err(|_| PairError::format(&zpath, "not UTF-8"))?;
        let y = decode_vector(&ypath, &ytext)?;
        let z = decode_matrix(&zpath, &ztext, manifest.d)?;
        let x = decode_image_stack(&xpath, &xbytes)?;
        if y.len() != entry.n || z.len() != entry.n * manifest.d || x.len() != entry.n {
            return Err(PairError::Dimension(format!(
                "source {}: manifest declares n = {}, files hold {} / {} / {} rows",
                entry.id,
                entry.n,
                y.len(),
                z.len() / manifest.d.max(1),
                x.len()
            )));
        }
        if x.image_shape() != (manifest.p, manifest.q) {
            return Err(PairError::Dimension(format!(
                "source {}: images are {:?}, manifest declares ({}, {})",
                entry.id,
                x.image_shape(),
                manifest.p,
                manifest.q
            )));
        }
        let z = Matrix::from_vec(entry.n, manifest.d, z)?;
        bundle.push(SourceDataset::new(entry.id.clone(), y, z, x)?);
    }
    Ok((bundle, manifest))
}

/// Ordered `key = value` document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn push_f64(&mut self, key: impl Into<String>, value: f64) {
        self.push(key, fmt_f64(value));
    }

    pub fn push_vec(&mut self, key: impl Into<String>, values: &[f64]) {
        let joined: Vec<String> = values.iter().map(|v| fmt_f64(*v)).collect();
        self.push(key, joined.join(","));
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in payload_lines(path, text)?.iter().enumerate() {
            let (k, v) = line.split_once(" = ").ok_or_else(|| {
                PairError::format(path, format!("line {}: expected `key = value`", i + 1))
            })?;
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn require(&self, path: &Path, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| PairError::format(path, format!("missing key {key}")))
    }

    fn usize(&self, path: &Path, key: &str) -> Result<usize> {
        self.require(path, key)?
            .parse()
            .map_err(|_| PairError::format(path, format!("{key} is not an integer")))
    }

    fn vec(&self, path: &Path, key: &str, len: usize) -> Result<Vec<f64>> {
        let raw = self.require(path, key)?;
        let v: Vec<f64> = raw
            .split(',')
            .map(|t| parse_f64(path, 0, t))
            .collect::<Result<_>>()?;
        if v.len() != len {
            return Err(PairError::format(
                path,
                format!("{key}: {} values, expected {len}", v.len()),
            ));
        }
        Ok(v)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.render().as_bytes())
    }
}

pub fn params_doc(params: &PairParams) -> KvDoc {
    let (p, q) = params.image_shape();
    let mut doc = KvDoc::new();
    doc.push("format", PARAMS_VERSION);
    doc.push("sources", params.num_sources());
    doc.push("components", params.num_components());
    doc.push("d", params.betas.first().map_or(0, Vec::len));
    doc.push("p", p);
    doc.push("q", q);
    for (t, b) in params.betas.iter().enumerate() {
        doc.push_vec(format!("beta.{t}"), b);
    }
    for t in 0..params.num_sources() {
        doc.push_vec(format!("weights.{t}"), params.weights.row(t));
    }
    for (r, b) in params.components.iter().enumerate() {
        doc.push_vec(format!("component.{r}"), b.as_slice());
    }
    doc
}

pub fn write_params(path: &Path, params: &PairParams) -> Result<()> {
    params_doc(params).write(path)
}

pub fn read_params(path: &Path) -> Result<PairParams> {
    let doc = KvDoc::parse(path, &read_text(path)?)?;
    if doc.require(path, "format")? != PARAMS_VERSION {
        return Err(PairError::format(path, "unsupported parameter format"));
    }
    let t = doc.usize(path, "sources")?;
    let r = doc.usize(path, "components")?;
    let d = doc.usize(path, "d")?;
    let p = doc.usize(path, "p")?;
    let q = doc.usize(path, "q")?;
    let betas = (0..t)
        .map(|k| doc.vec(path, &format!("beta.{k}"), d))
        .collect::<Result<Vec<_>>>()?;
    let mut w = Vec::with_capacity(t * r);
    for k in 0..t {
        w.extend(doc.vec(path, &format!("weights.{k}"), r)?);
    }
    let components = (0..r)
        .map(|k| Matrix::from_vec(p, q, doc.vec(path, &format!("component.{k}"), p * q)?))
        .collect::<Result<Vec<_>>>()?;
    PairParams::new(betas, components, Matrix::from_vec(t, r, w)?)
}

/// Fitted `(beta_t, C_t)` of any method, with the selected tuning values.
pub fn fit_doc(fit: &BaselineFit) -> KvDoc {
    let (p, q) = fit.coefs.first().map_or((0, 0), Matrix::shape);
    let mut doc = KvDoc::new();
    doc.push("format", FIT_VERSION);
    doc.push("method", fit.method);
    doc.push("sources", fit.betas.len());
    doc.push("d", fit.betas.first().map_or(0, Vec::len));
    doc.push("p", p);
    doc.push("q", q);
    for (k, v) in &fit.tuning {
        doc.push(format!("tuning.{k}"), v);
    }
    for (t, b) in fit.betas.iter().enumerate() {
        doc.push_vec(format!("beta.{t}"), b);
    }
    for (t, c) in fit.coefs.iter().enumerate() {
        doc.push_vec(format!("coef.{t}"), c.as_slice());
    }
    doc
}

pub fn write_fit(path: &Path, fit: &BaselineFit) -> Result<()> {
    fit_doc(fit).write(path)
}

pub fn read_fit(path: &Path) -> Result<BaselineFit> {
    let doc = KvDoc::parse(path, &read_text(path)?)?;
    if doc.require(path, "format")? != FIT_VERSION {
        return Err(PairError::format(path, "unsupported fit format"));
    }
    let method: Method = doc
        .require(path, "method")?
        .parse()
        .map_err(|_| PairError::format(path, "unknown method"))?;
    let t = doc.usize(path, "sources")?;
    let d = doc.usize(path, "d")?;
    let p = doc.usize(path, "p")?;
    let q = doc.usize(path, "q")?;
    let betas = (0..t)
        .map(|k| doc.vec(path, &format!("beta.{k}"), d))
        .collect::<Result<Vec<_>>>()?;
    let coefs = (0..t)
        .map(|k| Matrix::from_vec(p, q, doc.vec(path, &format!("coef.{k}"), p * q)?))
        .collect::<Result<Vec<_>>>()?;
    let tuning = doc
        .entries()
        .iter()
        .filter_map(|(k, v)| {
            k.strip_prefix("tuning.")
                .map(|k| (k.to_string(), v.clone()))
        })
        .collect();
    Ok(BaselineFit {
        method,
        betas,
        coefs,
        tuning,
    })
}

pub fn hyper_doc(doc: &mut KvDoc, prefix: &str, hp: &HyperParams) {
    doc.push(format!("{prefix}r_components"), hp.r_components);
    doc.push_f64(format!("{prefix}lambda_tv"), hp.lambda_tv);
    doc.push_f64(format!("{prefix}gamma_sip"), hp.gamma_sip);
    doc.push_f64(format!("{prefix}tau"), hp.tau);
    doc.push_f64(format!("{prefix}learning_rate"), hp.learning_rate);
    doc.push(format!("{prefix}max_epochs"), hp.max_epochs);
    doc.push(format!("{prefix}patience"), hp.patience);
    doc.push(format!("{prefix}inner_steps"), hp.inner_steps);
    doc.push_f64(format!("{prefix}init_sd"), hp.init_sd);
    doc.push(format!("{prefix}seed"), hp.seed);
}

/// Training summary and per-epoch log of a PAIR fit.
pub fn fit_report_doc(report: &FitReport) -> KvDoc {
    let mut doc = KvDoc::new();
    doc.push("format", REPORT_VERSION);
    doc.push("kind", "training");
    hyper_doc(&mut doc, "hyper.", &report.hp);
    doc.push("best_epoch", report.best_epoch);
    doc.push("stopped_epoch", report.stopped_epoch);
    doc.push_f64("best_val_loss", report.best_val_loss());
    for (k, e) in report.epoch_log.iter().enumerate() {
        doc.push_vec(
            format!("epoch.{k}"),
            &[e.train_total, e.train_data_loss, e.val_data_loss],
        );
    }
    doc
}

fn push_opt(doc: &mut KvDoc, key: String, v: Option<f64>) {
    match v {
        Some(v) => doc.push_f64(key, v),
        None => doc.push(key, "NA"),
    }
}

pub fn eval_doc(report: &EvalReport) -> KvDoc {
    let mut doc = KvDoc::new();
    doc.push("format", REPORT_VERSION);
    doc.push("method", &report.method);
    doc.push("sources", report.sources.len());
    for (t, m) in report.sources.iter().enumerate() {
        doc.push(format!("source.{t}.id"), &m.source_id);
        for (name, v) in SourceMetrics::NAMES.iter().zip(m.values()) {
            push_opt(&mut doc, format!("source.{t}.{name}"), v);
        }
    }
    doc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapScale {
    /// `[min, max] -> [0, 65535]`.
    MinMax,
    /// `[-m, m] -> [0, 65535]` with `m = max |v|`.
    Symmetric,
}

/// Affine map from PGM samples back to values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub offset: f64,
    pub scale: f64,
}

impl Affine {
    pub fn value(&self, sample: u16) -> f64 {
        self.offset + self.scale * sample as f64
    }
}

pub const PGM_MAX: u16 = 65535;

/// Quantizes a matrix to 16-bit samples. A degenerate range maps every
/// sample to 0 with `scale = 0`.
pub fn quantize(m: &ImageMatrix, scale: HeatmapScale) -> Result<(Vec<u16>, Affine)> {
    if !m.is_finite() {
        return Err(PairError::NonFinite("heatmap input".into()));
    }
    let vals = m.as_slice();
    let (lo, hi) = match scale {
        HeatmapScale::MinMax => (
            vals.iter().copied().fold(f64::INFINITY, f64::min),
            vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ),
        HeatmapScale::Symmetric => {
            let a = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            (-a, a)
        }
    };
    let range = hi - lo;
    if !(range > 0.0) {
        let offset = if scale == HeatmapScale::MinMax {
            lo
        } else {
            0.0
        };
        return Ok((vec![0; vals.len()], Affine { offset, scale: 0.0 }));
    }
    let step = range / PGM_MAX as f64;
    let samples = vals
        .iter()
        .map(|v| {
            (((v - lo) / range) * PGM_MAX as f64)
                .round()
                .clamp(0.0, PGM_MAX as f64) as u16
        })
        .collect();
    Ok((
        samples,
        Affine {
            offset: lo,
            scale: step,
        },
    ))
}

pub fn encode_pgm16(p: usize, q: usize, samples: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{q} {p}\n{PGM_MAX}\n").into_bytes();
    for s in samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".affine");
    PathBuf::from(s)
}

/// Writes `path` (PGM) and `path.affine`; returns the sidecar path.
pub fn export_heatmap(m: &ImageMatrix, path: &Path, scale: HeatmapScale) -> Result<PathBuf> {
    let (samples, affine) = quantize(m, scale)?;
    write_file(path, &encode_pgm16(m.rows(), m.cols(), &samples))?;
    let mut doc = KvDoc::new();
    doc.push(
        "scale_mode",
        match scale {
            HeatmapScale::MinMax => "minmax",
            HeatmapScale::Symmetric => "symmetric",
        },
    );
    doc.push_f64("offset", affine.offset);
    doc.push_f64("scale", affine.scale);
    let side = sidecar_path(path);
    doc.write(&side)?;
    Ok(side)
}

/// Parsed PGM: dimensions, maxval and samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

pub fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<Pgm> {
    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(PairError::format(path, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = next_token(bytes)?;
    let num = |s: String| -> Result<usize> {
        s.parse()
            .map_err(|_| PairError::format(path, "bad PGM header"))
    };
    let width = num(next_token(bytes)?)?;
    let height = num(next_token(bytes)?)?;
    let maxval = num(next_token(bytes)?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(PairError::format(path, "PGM maxval out of range"));
    }
    let count = width * height;
    let samples: Vec<u16> = match magic.as_str() {
        "P5" => {
            // exactly one whitespace byte separates the header from the raster
            pos += 1;
            let raster = bytes.get(pos..).unwrap_or(&[]);
            let width_bytes = if maxval < 256 { 1 } else { 2 };
            if raster.len() != count * width_bytes {
                return Err(PairError::format(
                    path,
                    format!(
                        "raster has {} bytes, expected {}",
                        raster.len(),
                        count * width_bytes
                    ),
                ));
            }
            if width_bytes == 1 {
                raster.iter().map(|&b| b as u16).collect()
            } else {
                raster
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]))
                    .collect()
            }
        }
        "P2" => {
            let text = String::from_utf8_lossy(&bytes[pos..]);
            let vals: Vec<u16> = text
                .split_ascii_whitespace()
                .map(|t| {
                    t.parse::<u16>()
                        .map_err(|_| PairError::format(path, "bad PGM sample"))
                })
                .collect::<Result<_>>()?;
            if vals.len() != count {
                return Err(PairError::format(
                    path,
                    format!("{} samples, expected {count}", vals.len()),
                ));
            }
            vals
        }
        _ => {
            return Err(PairError::format(
                path,
                format!("unsupported magic {magic:?}"),
            ))
        }
    };
    if samples.iter().any(|&s| s as usize > maxval) {
        return Err(PairError::format(path, "sample exceeds maxval"));
    }
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    decode_pgm(path, &read_bytes(path)?)
}

/// Reads a heatmap and its sidecar back to values.
pub fn read_heatmap(path: &Path) -> Result<ImageMatrix> {
    let pgm = read_pgm(path)?;
    let side = sidecar_path(path);
    let doc = KvDoc::parse(&side, &read_text(&side)?)?;
    let offset = parse_f64(&side, 0, doc.require(&side, "offset")?)?;
    let scale = parse_f64(&side, 0, doc.require(&side, "scale")?)?;
    let affine = Affine { offset, scale };
    Matrix::from_vec(
        pgm.height,
        pgm.width,
        pgm.samples.iter().map(|&s| affine.value(s)).collect(),
    )
}

/// Every `*.pgm` in a directory, in file-name order, as raw sample values.
pub fn read_pgm_dir(dir: &Path) -> Result<Vec<ImageMatrix>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| PairError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let pgm = read_pgm(p)?;
            Matrix::from_vec(
                pgm.height,
                pgm.width,
                pgm.samples.iter().map(|&s| s as f64).collect(),
            )
        })
        .collect()
}
