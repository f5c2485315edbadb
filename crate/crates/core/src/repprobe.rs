//! Probing decontextualized verb representations for bias.
//!
//! Each verb is embedded by averaging the backend's vector for the verb's
//! first subtoken over all name pairs of its bare frame. Repeated random
//! splits then fit PCA, a linear regression and a Fisher discriminant on
//! one half and measure Spearman correlation with human bias on the other.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lexicon::{NamePool, Polarity, VerbEntry};
use crate::rng::{derive_seed, shuffle, SplitMix64};
use crate::scorer::wire::EmbedRequest;
use crate::scorer::{Backend, RequestContext, ScoreError};
use crate::stats::{spearman_rho, StatsError};
use crate::stimgen::enumerate_name_pairs;

pub const MAX_RESAMPLES: usize = 10;
pub const MIN_VERBS: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("verb {verb_id}: embedding dimension {got} differs from {expected}")]
    DimensionMismatch {
        verb_id: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid probe configuration: {0}")]
    Config(String),
    #[error("need at least {MIN_VERBS} verbs with embeddings and human bias, got {0}")]
    TooFewVerbs(usize),
    #[error("PCA needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("LDA needs at least 2 non-empty classes")]
    SingleClass,
    #[error("within-class scatter is singular; use a positive ridge")]
    SingularScatter,
    #[error("repeat {repeat}: no usable split after {MAX_RESAMPLES} resamples")]
    DegenerateSplits { repeat: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbEmbedding {
    pub verb_id: String,
    pub dim: usize,
    pub vector: Vec<f64>,
}

/// Mean first-subtoken vector of `verb` over every name pair of its frame.
pub fn decontextualized_embedding(
    backend: &dyn Backend,
    verb: &VerbEntry,
    pool: &NamePool,
) -> Result<VerbEmbedding, ProbeError> {
    let caps = backend.capabilities()?;
    if !caps.supports_embed {
        return Err(ScoreError::Unsupported("embeddings").into());
    }
    let word_index = verb.verb_word_index();
    let mut sum: Vec<f64> = Vec::new();
    let pairs = enumerate_name_pairs(pool);
    for (i, pair) in pairs.iter().enumerate() {
        let req = EmbedRequest {
            text: verb.fill(&pair.subject, &pair.object),
            word_index,
        };
        let ctx = RequestContext {
            verb_id: &verb.id,
            variant_index: i,
            subject_gender: pair.subject_gender,
            mode: None,
            filled: None,
        };
        let reply = backend.embed(&req, &ctx)?;
        reply.value.validate()?;
        let v = reply.value.vector;
        if sum.is_empty() {
            sum = vec![0.0; v.len()];
        } else if v.len() != sum.len() {
            return Err(ProbeError::DimensionMismatch {
                verb_id: verb.id.clone(),
                expected: sum.len(),
                got: v.len(),
            });
        }
        for (s, x) in sum.iter_mut().zip(&v) {
            *s += x;
        }
    }
    let n = pairs.len() as f64;
    Ok(VerbEmbedding {
        verb_id: verb.id.clone(),
        dim: sum.len(),
        vector: sum.into_iter().map(|s| s / n).collect(),
    })
}

/// Embeddings of all `verbs`, with at most `parallelism` verbs in flight.
pub fn embed_all(
    backend: &dyn Backend,
    verbs: &[VerbEntry],
    pool: &NamePool,
    parallelism: usize,
) -> Result<Vec<VerbEmbedding>, ProbeError> {
    let run = || {
        verbs
            .par_iter()
            .map(|v| decontextualized_embedding(backend, v, pool))
            .collect()
    };
    match rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
    {
        Ok(threads) => threads.install(run),
        Err(_) => verbs
            .iter()
            .map(|v| decontextualized_embedding(backend, v, pool))
            .collect(),
    }
}

/// Number of PCA components kept: `fraction * d` rounded half to even, at least 1.
pub fn pca_components(d: usize, fraction: f64) -> usize {
    ((fraction * d as f64).round_ties_even() as usize).max(1)
}

/// Column means and a `k x d` orthonormal basis of the centered data.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: DVector<f64>,
    pub basis: DMatrix<f64>,
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

fn center(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    c
}

pub fn pca_fit(x: &DMatrix<f64>, fraction: f64) -> Result<Pca, ProbeError> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(ProbeError::TooFewRows(n));
    }
    let mut k = pca_components(d, fraction);
    let cap = (n - 1).min(d);
    if k > cap {
        log::warn!("PCA: {k} components requested but only {cap} available; clamping");
        k = cap;
    }
    let mean = column_means(x);
    let svd = center(x, &mean).svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut basis = DMatrix::zeros(k, d);
    for (r, &i) in order.iter().take(k).enumerate() {
        let mut row = v_t.row(i).into_owned();
        let pivot = row
            .iter()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { *v } else { m });
        if pivot < 0.0 {
            row = -row;
        }
        basis.set_row(r, &row);
    }
    Ok(Pca { mean, basis })
}

impl Pca {
    pub fn k(&self) -> usize {
        self.basis.nrows()
    }

    /// Project rows of `x` onto the basis (`n x k`).
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        center(x, &self.mean) * self.basis.transpose()
    }

    /// Map projected rows back to the original space.
    pub fn inverse_transform(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = z * &self.basis;
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        x
    }
}

/// Affine map `y = intercept + coef . x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: DVector<f64>,
    /// True when the design was rank deficient and a ridge solve was used.
    pub ridge_fallback: bool,
}

/// Least squares with intercept via QR; a rank-deficient design falls back
/// to a ridge solve with penalty `ridge` relative to the mean feature variance.
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> LinearModel {
    let (n, p) = x.shape();
    let mut design = DMatrix::from_element(n, p + 1, 1.0);
    design.view_mut((0, 1), (n, p)).copy_from(x);
    if n > p {
        let qr = design.clone().qr();
        let r = qr.r();
        let diag_max = r.diagonal().amax();
        let tol = diag_max * (n.max(p + 1) as f64) * f64::EPSILON;
        if diag_max > 0.0 && r.diagonal().iter().all(|v| v.abs() > tol) {
            let beta = r
                .solve_upper_triangular(&(qr.q().transpose() * y))
                .expect("non-singular R");
            return LinearModel {
                intercept: beta[0],
                coef: beta.rows(1, p).into_owned(),
                ridge_fallback: false,
            };
        }
    }
    // Ridge on centered data so the intercept is not penalized.
    let mx = column_means(x);
    let xc = center(x, &mx);
    let my = y.mean();
    let gram = xc.transpose() * &xc;
    let scale = (gram.trace() / p.max(1) as f64).max(f64::MIN_POSITIVE);
    let lambda = ridge.max(f64::EPSILON) * scale;
    let a = &gram + DMatrix::identity(p, p) * lambda;
    let b = xc.transpose() * y.add_scalar(-my);
    let coef = a
        .cholesky()
        .map(|c| c.solve(&b))
        .unwrap_or_else(|| DVector::zeros(p));
    LinearModel {
        intercept: my - mx.dot(&coef),
        coef,
        ridge_fallback: true,
    }
}

impl LinearModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        (x * &self.coef).add_scalar(self.intercept)
    }
}

pub fn ols_predict(model: &LinearModel, x: &DMatrix<f64>) -> DVector<f64> {
    model.predict(x)
}

fn class_index(p: Polarity) -> usize {
    match p {
        Polarity::S => 0,
        Polarity::O => 1,
        Polarity::Zero => 2,
    }
}

/// Leading Fisher discriminant direction for bias-polarity classes.
///
/// `ridge` is added to the within-class scatter relative to its mean
/// diagonal, which keeps the direction invariant to rescaling the data. The
/// sign is chosen so that projections correlate non-negatively with
/// `bias` on the fitting data.
pub fn lda_fit(x: &DMatrix<f64>, bias: &[f64], ridge: f64) -> Result<DVector<f64>, ProbeError> {
    let (n, p) = x.shape();
    let mut members: [Vec<usize>; 3] = Default::default();
    for (i, b) in bias.iter().enumerate() {
        members[class_index(Polarity::of(*b))].push(i);
    }
    if members.iter().filter(|m| !m.is_empty()).count() < 2 {
        return Err(ProbeError::SingleClass);
    }
    let mean = column_means(x);
    let mut sw = DMatrix::zeros(p, p);
    let mut sb = DMatrix::zeros(p, p);
    for m in members.iter().filter(|m| !m.is_empty()) {
        let rows = x.select_rows(m);
        let mc = column_means(&rows);
        let centered = center(&rows, &mc);
        sw += centered.transpose() * &centered;
        let diff = &mc - &mean;
        sb += (&diff * diff.transpose()) * m.len() as f64;
    }
    if ridge > 0.0 {
        let scale = sw.trace() / p as f64;
        let scale = if scale > 0.0 { scale } else { 1.0 };
        sw += DMatrix::identity(p, p) * (ridge * scale);
    }
    let chol = sw.cholesky().ok_or(ProbeError::SingularScatter)?;
    let l = chol.l();
    // Whitened between-class scatter L^-1 Sb L^-T.
    let a = l
        .solve_lower_triangular(&sb)
        .ok_or(ProbeError::SingularScatter)?;
    let m = l
        .solve_lower_triangular(&a.transpose())
        .ok_or(ProbeError::SingularScatter)?;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let top = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty spectrum");
    let u = eig.eigenvectors.column(top).into_owned();
    let mut w = l
        .transpose()
        .solve_upper_triangular(&u)
        .ok_or(ProbeError::SingularScatter)?;
    let norm = w.norm();
    if norm > 0.0 {
        w /= norm;
    }
    let proj: Vec<f64> = (x * &w).iter().copied().collect();
    if n >= 3 && matches!(spearman_rho(&proj, bias), Ok(r) if r < 0.0) {
        w = -w;
    }
    Ok(w)
}

pub fn lda_project(w: &DVector<f64>, x: &DMatrix<f64>) -> DVector<f64> {
    x * w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub pca_fraction: f64,
    pub n_repeats: usize,
    pub split_fraction: f64,
    pub lda_ridge: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            pca_fraction: 0.05,
            n_repeats: 100,
            split_fraction: 0.5,
            lda_ridge: 1e-6,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if !(self.pca_fraction > 0.0 && self.pca_fraction <= 1.0) {
            return Err(ProbeError::Config(format!(
                "pca_fraction must be in (0, 1], got {}",
                self.pca_fraction
            )));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(ProbeError::Config(format!(
                "split_fraction must be in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if self.n_repeats == 0 {
            return Err(ProbeError::Config("n_repeats must be at least 1".into()));
        }
        if !(self.lda_ridge >= 0.0 && self.lda_ridge.is_finite()) {
            return Err(ProbeError::Config(format!(
                "lda_ridge must be a non-negative number, got {}",
                self.lda_ridge
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: usize,
    pub lr_rho: f64,
    pub lda_rho: f64,
    /// Splits discarded before this one was accepted.
    pub resamples: usize,
    pub ridge_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub lr_mean_rho: f64,
    pub lda_mean_rho: f64,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub config: ProbeConfig,
    pub per_repeat: Vec<RepeatResult>,
}

fn subset(x: &DMatrix<f64>, y: &[f64], idx: &[usize]) -> (DMatrix<f64>, Vec<f64>) {
    (x.select_rows(idx), idx.iter().map(|&i| y[i]).collect())
}

fn distinct_classes(y: &[f64]) -> usize {
    let mut seen = [false; 3];
    for b in y {
        seen[class_index(Polarity::of(*b))] = true;
    }
    seen.iter().filter(|s| **s).count()
}

/// Outcome of one split, or `None` when the split is unusable.
fn one_split(
    x: &DMatrix<f64>,
    y: &[f64],
    train: &[usize],
    test: &[usize],
    config: &ProbeConfig,
) -> Result<Option<(f64, f64, bool)>, ProbeError> {
    let (x_train, y_train) = subset(x, y, train);
    let (x_test, y_test) = subset(x, y, test);
    if distinct_classes(&y_train) < 2 {
        return Ok(None);
    }
    let pca = pca_fit(&x_train, config.pca_fraction)?;
    let z_train = pca.transform(&x_train);
    let z_test = pca.transform(&x_test);

    let lr = ols_fit(
        &z_train,
        &DVector::from_column_slice(&y_train),
        config.lda_ridge,
    );
    let pred: Vec<f64> = lr.predict(&z_test).iter().copied().collect();
    let w = match lda_fit(&z_train, &y_train, config.lda_ridge) {
        Ok(w) => w,
        Err(ProbeError::SingleClass) => return Ok(None),
        Err(e) => return Err(e),
    };
    let proj: Vec<f64> = lda_project(&w, &z_test).iter().copied().collect();
    match (spearman_rho(&pred, &y_test), spearman_rho(&proj, &y_test)) {
        (Ok(lr_rho), Ok(lda_rho)) => Ok(Some((lr_rho, lda_rho, lr.ridge_fallback))),
        (Err(StatsError::ZeroVariance), _) | (_, Err(StatsError::ZeroVariance)) => Ok(None),
        (Err(e), _) | (_, Err(e)) => Err(e.into()),
    }
}

/// Repeated split-half evaluation of the regression and LDA probes.
///
/// Repeat `r` draws its splits from `derive_seed(config.seed, r)`, so each
/// repeat is reproducible on its own and independent of `n_repeats`.
pub fn run_probe(
    embeddings: &[VerbEmbedding],
    human_bias: &[f64],
    config: &ProbeConfig,
) -> Result<ProbeReport, ProbeError> {
    config.validate()?;
    if embeddings.len() != human_bias.len() {
        return Err(StatsError::LengthMismatch(embeddings.len(), human_bias.len()).into());
    }
    let n = embeddings.len();
    if n < MIN_VERBS {
        return Err(ProbeError::TooFewVerbs(n));
    }
    let d = embeddings[0].dim;
    for e in embeddings {
        if e.vector.len() != d || e.dim != d {
            return Err(ProbeError::DimensionMismatch {
                verb_id: e.verb_id.clone(),
                expected: d,
                got: e.vector.len(),
            });
        }
    }
    let x = DMatrix::from_row_iterator(
        n,
        d,
        embeddings.iter().flat_map(|e| e.vector.iter().copied()),
    );
    let n_train = ((n as f64) * config.split_fraction).floor() as usize;
    if n_train < 2 || n - n_train < 3 {
        return Err(ProbeError::Config(format!(
            "split of {n} verbs leaves {n_train} for training and {} for testing",
            n - n_train
        )));
    }

    let per_repeat: Vec<RepeatResult> = (0..config.n_repeats)
        .into_par_iter()
        .map(|repeat| {
            let mut rng = SplitMix64::new(derive_seed(config.seed, repeat as u64));
            for resamples in 0..=MAX_RESAMPLES {
                let mut idx: Vec<usize> = (0..n).collect();
                shuffle(&mut idx, &mut rng);
                let (train, test) = idx.split_at(n_train);
                if let Some((lr_rho, lda_rho, ridge_fallback)) =
                    one_split(&x, human_bias, train, test, config)?
                {
                    return Ok(RepeatResult {
                        repeat,
                        lr_rho,
                        lda_rho,
                        resamples,
                        ridge_fallback,
                    });
                }
            }
            Err(ProbeError::DegenerateSplits { repeat })
        })
        .collect::<Result<_, _>>()?;

    let mean = |f: fn(&RepeatResult) -> f64| {
        per_repeat.iter().map(f).sum::<f64>() / per_repeat.len() as f64
    };
    Ok(ProbeReport {
        lr_mean_rho: mean(|r| r.lr_rho),
        lda_mean_rho: mean(|r| r.lda_rho),
        n,
        d,
        k: pca_components(d, config.pca_fraction).min((n_train - 1).min(d)),
        config: *config,
        per_repeat,
    })
}
