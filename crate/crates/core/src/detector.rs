//! Single-Poisson background model.
//!
//! The model is trained on windows known to hold only background noise and
//! scores every window by the negative log-likelihood of its count under
//! the background posterior predictive. Event-bearing windows stand out as
//! high-NLL anomalies.

use serde::{Deserialize, Serialize};

use crate::distributions::{nll, predictive_update, Count, GammaParams, NbParams};
use crate::error::{domain, Result};
use crate::windowing::WindowedCounts;

/// Margin added to the worst noise NLL to form the default flag threshold:
/// one order of magnitude in likelihood.
pub const DEFAULT_FLAG_MARGIN: f64 = std::f64::consts::LN_10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundModel {
    prior: GammaParams,
    n_train: u64,
    sum_train: u64,
    /// Largest NLL observed over the training counts.
    max_train_nll: f64,
    predictive: NbParams,
}

impl BackgroundModel {
    /// Scores against the prior predictive alone.
    pub fn prior_only(prior: GammaParams) -> Self {
        let predictive = NbParams::from_gamma(prior);
        Self {
            prior,
            n_train: 0,
            sum_train: 0,
            max_train_nll: nll(0, &predictive),
            predictive,
        }
    }

    pub fn prior(&self) -> GammaParams {
        self.prior
    }

    pub fn n_train(&self) -> u64 {
        self.n_train
    }

    pub fn sum_train(&self) -> u64 {
        self.sum_train
    }

    pub fn predictive(&self) -> &NbParams {
        &self.predictive
    }

    /// Default flag threshold: worst training NLL plus [`DEFAULT_FLAG_MARGIN`].
    pub fn default_flag_threshold(&self) -> f64 {
        self.max_train_nll + DEFAULT_FLAG_MARGIN
    }

    /// Flag threshold calibrated on a held-out noise trace.
    /// An empty trace falls back to the NLL of a zero count.
    pub fn calibrate_threshold(&self, noise: &[Count], margin: f64) -> f64 {
        let worst = noise
            .iter()
            .map(|&x| nll(x, &self.predictive))
            .fold(f64::NEG_INFINITY, f64::max);
        let worst = if worst.is_finite() {
            worst
        } else {
            nll(0, &self.predictive)
        };
        worst + margin
    }
}

pub fn train_background(prior: GammaParams, noise_counts: &[Count]) -> Result<BackgroundModel> {
    if noise_counts.is_empty() {
        return domain("background training needs at least one noise window");
    }
    let n_train = noise_counts.len() as u64;
    let sum_train = noise_counts.iter().sum();
    let predictive = predictive_update(prior, n_train, sum_train)?;
    let max_train_nll = noise_counts
        .iter()
        .map(|&x| nll(x, &predictive))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(BackgroundModel {
        prior,
        n_train,
        sum_train,
        max_train_nll,
        predictive,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NllEntry {
    pub start: usize,
    pub count: Count,
    pub nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NllTrace {
    pub entries: Vec<NllEntry>,
    pub flag_threshold: f64,
    pub window_length: usize,
    pub step: usize,
}

impl NllTrace {
    pub fn with_threshold(mut self, flag_threshold: f64) -> Self {
        self.flag_threshold = flag_threshold;
        self
    }

    pub fn is_flagged(&self, i: usize) -> bool {
        self.entries[i].nll > self.flag_threshold
    }
}

pub fn score(model: &BackgroundModel, wc: &WindowedCounts) -> NllTrace {
    let entries = wc
        .entries
        .iter()
        .map(|e| NllEntry {
            start: e.start,
            count: e.count,
            nll: nll(e.count, &model.predictive),
        })
        .collect();
    NllTrace {
        entries,
        flag_threshold: model.default_flag_threshold(),
        window_length: wc.spec.length,
        step: wc.spec.step(),
    }
}

/// Sample intervals `[start, end)` covered by runs of flagged windows.
///
/// Runs whose covered intervals overlap, touch, or sit less than one step
/// apart are merged.
pub fn flag_events(trace: &NllTrace) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for e in trace
        .entries
        .iter()
        .filter(|e| e.nll > trace.flag_threshold)
    {
        let (s, t) = (e.start, e.start + trace.window_length);
        match out.last_mut() {
            Some(last) if s < last.1 + trace.step => last.1 = last.1.max(t),
            _ => out.push((s, t)),
        }
    }
    out
}

/// Indices of the lowest-count decile of windows: a heuristic pick of
/// noise-only training windows when none are supplied. Ties keep the
/// earlier window.
pub fn lowest_count_decile(wc: &WindowedCounts) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..wc.entries.len()).collect();
    idx.sort_by_key(|&i| (wc.entries[i].count, i));
    idx.truncate(wc.entries.len().div_ceil(10));
    idx.sort_unstable();
    idx
}
