//! Dense containers, dataset and parameter types.
//!
//! Matrices are stored row-major: entry `(i, j)` lives at `data[i * cols + j]`.
//! The same flattening is used by the vectorized baselines and by every file
//! format in [`crate::io`].

use serde::{Deserialize, Serialize};

use crate::error::{PairError, Result};

/// Default tolerance below which a weight counts as zero when classifying
/// support patterns.
pub const DEFAULT_ZERO_TOL: f64 = 1e-10;

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// A `p x q` image, spatial component, or imaging coefficient.
pub type ImageMatrix = Matrix;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds a matrix from row-major data. Rejects zero dimensions, length
    /// mismatches and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(PairError::Dimension(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(PairError::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(PairError::NonFinite(format!("matrix entry {pos}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(PairError::Dimension("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scaled(&self, alpha: f64) -> Matrix {
        self.map(|v| alpha * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Matrix) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn count_nonzero(&self, tol: f64) -> usize {
        self.data.iter().filter(|v| v.abs() > tol).count()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // sixteen independent accumulators hide add latency; the summation
    // order is fixed, so results do not depend on the target features
    const W: usize = 16;
    let mut acc = [0.0f64; W];
    let chunks_a = a.chunks_exact(W);
    let chunks_b = b.chunks_exact(W);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for k in 0..W {
            acc[k] += ca[k] * cb[k];
        }
    }
    let mut width = W;
    while width > 1 {
        width /= 2;
        for k in 0..width {
            acc[k] += acc[k + width];
        }
    }
    acc[0] + tail
}

#[inline]
pub(crate) fn axpy_slice(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

/// Stack of `n` images of identical shape, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    n: usize,
    p: usize,
    q: usize,
    data: Vec<f64>,
}

impl ImageStack {
    pub fn from_vec(n: usize, p: usize, q: usize, data: Vec<f64>) -> Result<Self> {
        if p == 0 || q == 0 {
            return Err(PairError::Dimension(format!(
                "image dimensions must be positive, got {p}x{q}"
            )));
        }
        if data.len() != n * p * q {
            return Err(PairError::Dimension(format!(
                "{n} images of {p}x{q} need {} values, got {}",
                n * p * q,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(PairError::NonFinite("image stack".into()));
        }
        Ok(Self { n, p, q, data })
    }

    pub fn from_images(images: &[ImageMatrix]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| PairError::Empty("image list".into()))?;
        let (p, q) = first.shape();
        if images.iter().any(|im| im.shape() != (p, q)) {
            return Err(PairError::Dimension("images differ in shape".into()));
        }
        let data = images
            .iter()
            .flat_map(|im| im.as_slice().iter().copied())
            .collect();
        Self::from_vec(images.len(), p, q, data)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.p, self.q)
    }

    pub fn pixels(&self) -> usize {
        self.p * self.q
    }

    /// Row-major pixels of image `i`.
    pub fn image(&self, i: usize) -> &[f64] {
        let k = self.p * self.q;
        &self.data[i * k..(i + 1) * k]
    }

    pub fn image_matrix(&self, i: usize) -> ImageMatrix {
        Matrix {
            rows: self.p,
            cols: self.q,
            data: self.image(i).to_vec(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select(&self, idx: &[usize]) -> ImageStack {
        let data = idx
            .iter()
            .flat_map(|&i| self.image(i).iter().copied())
            .collect();
        ImageStack {
            n: idx.len(),
            p: self.p,
            q: self.q,
            data,
        }
    }

    pub fn concat(stacks: &[&ImageStack]) -> Result<ImageStack> {
        let first = stacks
            .first()
            .ok_or_else(|| PairError::Empty("stack list".into()))?;
        if stacks
            .iter()
            .any(|s| s.image_shape() != first.image_shape())
        {
            return Err(PairError::Dimension("image shapes differ".into()));
        }
        let data = stacks.iter().flat_map(|s| s.data.iter().copied()).collect();
        Ok(ImageStack {
            n: stacks.iter().map(|s| s.n).sum(),
            p: first.p,
            q: first.q,
            data,
        })
    }

    /// `<X_i, C>` for every image.
    pub fn inner_products(&self, c: &ImageMatrix) -> Vec<f64> {
        debug_assert_eq!(c.as_slice().len(), self.pixels());
        (0..self.n)
            .map(|i| dot(self.image(i), c.as_slice()))
            .collect()
    }

    /// `sum_i coeffs[i] * X_i`.
    pub fn weighted_sum(&self, coeffs: &[f64]) -> ImageMatrix {
        let mut out = Matrix::zeros(self.p, self.q);
        for (i, &a) in coeffs.iter().enumerate() {
            if a != 0.0 {
                axpy_slice(&mut out.data, a, self.image(i));
            }
        }
        out
    }
}

/// One data source: responses, covariates and images.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceDataset {
    pub source_id: String,
    y: Vec<f64>,
    z: Matrix,
    x: ImageStack,
}

impl SourceDataset {
    pub fn new(
        source_id: impl Into<String>,
        y: Vec<f64>,
        z: Matrix,
        x: ImageStack,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(PairError::Empty("dataset has no observations".into()));
        }
        if z.rows() != n || x.len() != n {
            return Err(PairError::Dimension(format!(
                "y has {n} rows, z has {}, x has {}",
                z.rows(),
                x.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(PairError::NonFinite("response".into()));
        }
        Ok(Self {
            source_id: source_id.into(),
            y,
            z,
            x,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.z.cols()
    }

    pub fn image_shape(&self) -> (usize, usize) {
        self.x.image_shape()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> &Matrix {
        &self.z
    }

    pub fn x(&self) -> &ImageStack {
        &self.x
    }

    /// `<Z_i, beta> + <X_i, C>` for every observation.
    pub fn predict(&self, beta: &[f64], c: &ImageMatrix) -> Vec<f64> {
        let mut out = self.x.inner_products(c);
        for (i, o) in out.iter_mut().enumerate() {
            *o += dot(self.z.row(i), beta);
        }
        out
    }

    pub fn residuals(&self, beta: &[f64], c: &ImageMatrix) -> Vec<f64> {
        let pred = self.predict(beta, c);
        self.y.iter().zip(pred).map(|(y, p)| y - p).collect()
    }

    pub fn select(&self, idx: &[usize]) -> SourceDataset {
        let y = idx.iter().map(|&i| self.y[i]).collect();
        let z = Matrix::from_fn(idx.len(), self.d(), |r, c| self.z.get(idx[r], c));
        SourceDataset {
            source_id: self.source_id.clone(),
            y,
            z,
            x: self.x.select(idx),
        }
    }

    /// Copy with a leading constant-1 covariate column.
    pub fn with_intercept(&self) -> SourceDataset {
        let z = Matrix::from_fn(self.n(), self.d() + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                self.z.get(i, j - 1)
            }
        });
        SourceDataset { z, ..self.clone() }
    }

    /// Copy with the covariates replaced.
    pub fn with_covariates(&self, z: Matrix) -> Result<SourceDataset> {
        SourceDataset::new(self.source_id.clone(), self.y.clone(), z, self.x.clone())
    }
}

/// Checks that every source shares `d` and the image shape; returns `(d, p, q)`.
pub fn bundle_dims(bundle: &[SourceDataset]) -> Result<(usize, usize, usize)> {
    let first = bundle
        .first()
        .ok_or_else(|| PairError::Empty("bundle has no sources".into()))?;
    let d = first.d();
    let (p, q) = first.image_shape();
    for ds in bundle {
        if ds.d() != d || ds.image_shape() != (p, q) {
            return Err(PairError::Dimension(format!(
                "source {} has d={} image {:?}, expected d={d} image ({p}, {q})",
                ds.source_id,
                ds.d(),
                ds.image_shape()
            )));
        }
    }
    Ok((d, p, q))
}

/// Covariate coefficients, spatial components and the source-by-component
/// weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PairParams {
    pub betas: Vec<Vec<f64>>,
    pub components: Vec<ImageMatrix>,
    pub weights: Matrix,
}

impl PairParams {
    pub fn new(
        betas: Vec<Vec<f64>>,
        components: Vec<ImageMatrix>,
        weights: Matrix,
    ) -> Result<Self> {
        let params = Self {
            betas,
            components,
            weights,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.betas.len();
        let r = self.components.len();
        if self.weights.shape() != (t, r) {
            return Err(PairError::Dimension(format!(
                "weights are {:?}, expected ({t}, {r})",
                self.weights.shape()
            )));
        }
        if let Some(first) = self.components.first() {
            if self.components.iter().any(|b| b.shape() != first.shape()) {
                return Err(PairError::Dimension("components differ in shape".into()));
            }
        }
        if let Some(first) = self.betas.first() {
            if self.betas.iter().any(|b| b.len() != first.len()) {
                return Err(PairError::Dimension("betas differ in length".into()));
            }
        }
        Ok(())
    }

    pub fn num_sources(&self) -> usize {
        self.betas.len()
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn image_shape(&self) -> (usize, usize) {
        self.components.first().map_or((0, 0), Matrix::shape)
    }

    pub fn compose(&self, t: usize) -> Result<ImageMatrix> {
        compose_coefficient(self, t)
    }

    pub fn coefficients(&self) -> Vec<ImageMatrix> {
        (0..self.num_sources())
            .map(|t| compose_unchecked(&self.components, self.weights.row(t)))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.betas.iter().flatten().all(|v| v.is_finite())
            && self.components.iter().all(Matrix::is_finite)
            && self.weights.is_finite()
    }

    /// Checks shapes against a bundle.
    pub fn check_against(&self, bundle: &[SourceDataset]) -> Result<()> {
        self.validate()?;
        let (d, p, q) = bundle_dims(bundle)?;
        if self.num_sources() != bundle.len() {
            return Err(PairError::Dimension(format!(
                "{} parameter sets for {} sources",
                self.num_sources(),
                bundle.len()
            )));
        }
        if self.betas.iter().any(|b| b.len() != d) {
            return Err(PairError::Dimension(format!("betas must have length {d}")));
        }
        if self.num_components() > 0 && self.image_shape() != (p, q) {
            return Err(PairError::Dimension(format!(
                "components are {:?}, images are ({p}, {q})",
                self.image_shape()
            )));
        }
        Ok(())
    }
}

pub(crate) fn compose_unchecked(components: &[ImageMatrix], weights: &[f64]) -> ImageMatrix {
    let (p, q) = components.first().map_or((0, 0), Matrix::shape);
    let mut c = Matrix::zeros(p, q);
    for (b, &w) in components.iter().zip(weights) {
        if w != 0.0 {
            c.axpy(w, b);
        }
    }
    c
}

/// `C_t = sum_r w_tr B_r`.
pub fn compose_coefficient(params: &PairParams, t: usize) -> Result<ImageMatrix> {
    let len = params.num_sources();
    if t >= len {
        return Err(PairError::IndexOutOfRange { index: t, len });
    }
    Ok(compose_unchecked(&params.components, params.weights.row(t)))
}

/// Optimizer and penalty settings for one PAIR fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub r_components: usize,
    pub lambda_tv: f64,
    pub gamma_sip: f64,
    pub tau: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub inner_steps: usize,
    pub init_sd: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            r_components: 3,
            lambda_tv: 0.01,
            gamma_sip: 0.1,
            tau: 0.5,
            learning_rate: 1e-2,
            max_epochs: 500,
            patience: 20,
            inner_steps: 50,
            init_sd: 0.01,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(PairError::InvalidArgument(msg.to_string()));
        if self.r_components == 0 {
            return bad("r_components must be positive");
        }
        if !(self.lambda_tv >= 0.0 && self.lambda_tv.is_finite()) {
            return bad("lambda_tv must be a finite nonnegative number");
        }
        if !(self.gamma_sip >= 0.0 && self.gamma_sip.is_finite()) {
            return bad("gamma_sip must be a finite nonnegative number");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.max_epochs == 0 || self.patience == 0 || self.inner_steps == 0 {
            return bad("max_epochs, patience and inner_steps must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience must not exceed max_epochs");
        }
        if !(self.init_sd > 0.0 && self.init_sd.is_finite()) {
            return bad("init_sd must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam moment decays must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        Ok(())
    }
}

/// Support pattern of a weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SharingStructure {
    /// No component shared by any two sources.
    #[serde(rename = "STL")]
    SingleTask,
    /// Every source uses every component.
    #[serde(rename = "FS")]
    FullySharing,
    /// One common set shared by all sources, every other component unique.
    #[serde(rename = "JI")]
    JointIndividual,
    /// Anything else.
    #[serde(rename = "PS")]
    PartiallySharing,
}

impl SharingStructure {
    pub fn abbreviation(self) -> &'static str {
        match self {
            SharingStructure::SingleTask => "STL",
            SharingStructure::FullySharing => "FS",
            SharingStructure::JointIndividual => "JI",
            SharingStructure::PartiallySharing => "PS",
        }
    }
}

fn supports(w: &Matrix, zero_tol: f64) -> Vec<Vec<bool>> {
    (0..w.rows())
        .map(|t| w.row(t).iter().map(|v| v.abs() > zero_tol).collect())
        .collect()
}

pub fn classify_sharing(w: &Matrix, zero_tol: f64) -> SharingStructure {
    let supp = supports(w, zero_tol);
    let r = w.cols();
    let t = w.rows();
    if supp.iter().all(|row| row.iter().all(|&s| s)) {
        return SharingStructure::FullySharing;
    }
    let intersect =
        |a: &[bool], b: &[bool]| -> Vec<bool> { a.iter().zip(b).map(|(&x, &y)| x && y).collect() };
    let pairs = || (0..t).flat_map(|a| (a + 1..t).map(move |b| (a, b)));
    if pairs().all(|(a, b)| intersect(&supp[a], &supp[b]).iter().all(|&s| !s)) {
        return SharingStructure::SingleTask;
    }
    let global: Vec<bool> = (0..r).map(|j| supp.iter().all(|row| row[j])).collect();
    if pairs().all(|(a, b)| intersect(&supp[a], &supp[b]) == global) {
        return SharingStructure::JointIndividual;
    }
    SharingStructure::PartiallySharing
}
