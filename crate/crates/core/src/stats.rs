//! Rank correlation with a permutation test, and F1 over bias polarity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lexicon::Polarity;
use crate::rng::{derive_seed, shuffle, SplitMix64};

pub const DEFAULT_PERMUTATIONS: usize = 10_000;
pub const SIGNIFICANCE_LEVEL: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 observations, got {0}")]
    TooFew(usize),
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("zero rank variance: correlation undefined")]
    ZeroVariance,
    #[error("no items to score")]
    Empty,
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn check_inputs(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew(x.len()));
    }
    if let Some(i) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(i % x.len()));
    }
    Ok(())
}

pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_inputs(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Two-sided permutation p-value of Spearman's rho, permuting `y`.
///
/// Permutation `i` is drawn from its own stream `derive_seed(seed, i)`, so
/// the result does not depend on how the work is scheduled.
pub fn perm_pvalue(x: &[f64], y: &[f64], n_perm: usize, seed: u64) -> Result<f64, StatsError> {
    check_inputs(x, y)?;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let observed = pearson(&rx, &ry)?.abs();
    // Ranks only move around under permutation, so the variance is fixed and
    // every permuted correlation is defined.
    let tol = 1e-12;
    let hits: usize = (0..n_perm)
        .into_par_iter()
        .map(|i| {
            let mut perm = ry.clone();
            shuffle(&mut perm, &mut SplitMix64::new(derive_seed(seed, i as u64)));
            let rho = pearson(&rx, &perm).expect("rank variance is permutation invariant");
            usize::from(rho.abs() >= observed - tol)
        })
        .sum();
    Ok((1 + hits) as f64 / (n_perm + 1) as f64)
}

/// Micro-averaged F1 over polarity labels.
///
/// Counts are pooled over all predicted classes, `Zero` included, so each
/// wrong item is one false positive and one false negative and the score
/// equals accuracy. A `Zero` prediction never matches.
pub fn micro_f1(pred: &[Polarity], gold: &[Polarity]) -> Result<f64, StatsError> {
    if pred.len() != gold.len() {
        return Err(StatsError::LengthMismatch(pred.len(), gold.len()));
    }
    if pred.is_empty() {
        return Err(StatsError::Empty);
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gold) {
        if p == g && *p != Polarity::Zero {
            tp += 1;
        } else {
            fp += 1;
            fn_ += 1;
        }
    }
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
    pub significant: bool,
}

pub fn correlate(
    x: &[f64],
    y: &[f64],
    n_perm: usize,
    seed: u64,
) -> Result<CorrelationResult, StatsError> {
    let rho = spearman_rho(x, y)?;
    let p_value = perm_pvalue(x, y, n_perm, seed)?;
    Ok(CorrelationResult {
        rho,
        p_value,
        n: x.len(),
        significant: p_value < SIGNIFICANCE_LEVEL,
    })
}
