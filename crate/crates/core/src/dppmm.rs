//! Dirichlet-process Poisson mixture inferred by collapsed Gibbs sampling.
//!
//! Mixing weights and component rates are integrated out, so the state is
//! just the assignment of each count to a cluster plus per-cluster
//! sufficient statistics `(members, Σx)`. Resampling datum `n` weighs
//!
//! * an existing cluster `k` by `c_k · NB(x | a + Σx_k, (c_k + b)/(c_k + b + 1))`
//! * a fresh cluster by `α · NB(x | a, b/(b + 1))`
//!
//! where the statistics exclude datum `n`. Clusters carry stable ids that are
//! never reused; a cluster is deleted the moment it loses its last member.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{Count, GammaParams, NbParams};
use crate::error::{domain, Error, Result};

pub type ClusterId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// DP concentration.
    pub alpha: f64,
    /// Gamma base measure over component rates.
    pub base: GammaParams,
}

impl Hyperparams {
    pub fn new(alpha: f64, base: GammaParams) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return domain(format!("alpha must be finite and > 0, got {alpha}"));
        }
        Ok(Self { alpha, base })
    }

    fn prior_predictive(&self) -> NbParams {
        NbParams::from_gamma(self.base)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub id: ClusterId,
    pub members: u64,
    pub sum_x: u64,
    /// Ordinal of the datum whose assignment created the cluster.
    pub created_at: u64,
}

impl ClusterStats {
    /// Posterior-mean rate `(Σx + a) / (members + b)`.
    pub fn posterior_mean(&self, base: &GammaParams) -> f64 {
        (self.sum_x as f64 + base.shape()) / (self.members as f64 + base.rate())
    }

    fn predictive(&self, base: &GammaParams) -> NbParams {
        NbParams::from_gamma(base.updated(self.members, self.sum_x))
    }
}

/// Target of one assignment draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Existing(ClusterId),
    New,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    hyper: Hyperparams,
    data: Vec<Count>,
    assignments: Vec<ClusterId>,
    clusters: BTreeMap<ClusterId, ClusterStats>,
    next_id: ClusterId,
}

impl MixtureState {
    pub fn empty(hyper: Hyperparams) -> Self {
        Self {
            hyper,
            data: Vec::new(),
            assignments: Vec::new(),
            clusters: BTreeMap::new(),
            next_id: 0,
        }
    }

    /// Every datum in a single cluster.
    pub fn single_cluster(data: Vec<Count>, hyper: Hyperparams) -> Self {
        let mut state = Self::empty(hyper);
        if data.is_empty() {
            return state;
        }
        let id = state.mint(0);
        let stats = state.clusters.get_mut(&id).expect("just minted");
        stats.members = data.len() as u64;
        stats.sum_x = data.iter().sum();
        state.assignments = vec![id; data.len()];
        state.data = data;
        state
    }

    /// Rebuild a state from explicit assignments.
    pub fn from_assignments(
        data: Vec<Count>,
        assignments: Vec<ClusterId>,
        hyper: Hyperparams,
    ) -> Result<Self> {
        if data.len() != assignments.len() {
            return domain(format!(
                "{} data but {} assignments",
                data.len(),
                assignments.len()
            ));
        }
        let mut state = Self::empty(hyper);
        for (i, (&x, &id)) in data.iter().zip(&assignments).enumerate() {
            let c = state.clusters.entry(id).or_insert(ClusterStats {
                id,
                members: 0,
                sum_x: 0,
                created_at: i as u64,
            });
            c.members += 1;
            c.sum_x += x;
        }
        state.next_id = assignments.iter().max().map_or(0, |m| m + 1);
        state.data = data;
        state.assignments = assignments;
        Ok(state)
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn data(&self) -> &[Count] {
        &self.data
    }

    pub fn assignments(&self) -> &[ClusterId] {
        &self.assignments
    }

    pub fn clusters(&self) -> impl Iterator<Item = &ClusterStats> {
        self.clusters.values()
    }

    pub fn cluster(&self, id: ClusterId) -> Option<&ClusterStats> {
        self.clusters.get(&id)
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Id the next new cluster will receive.
    pub fn next_id(&self) -> ClusterId {
        self.next_id
    }

    /// Clusters holding at least `fraction` of the data.
    pub fn clusters_with_share(&self, fraction: f64) -> usize {
        let n = self.data.len() as f64;
        self.clusters
            .values()
            .filter(|c| c.members as f64 >= fraction * n)
            .count()
    }

    /// Cluster with the lowest posterior-mean rate; ties go to the lower id.
    pub fn lowest_rate_cluster(&self) -> Option<ClusterId> {
        let base = self.hyper.base;
        self.clusters
            .values()
            .min_by(|a, b| {
                a.posterior_mean(&base)
                    .total_cmp(&b.posterior_mean(&base))
                    .then(a.id.cmp(&b.id))
            })
            .map(|c| c.id)
    }

    fn mint(&mut self, created_at: u64) -> ClusterId {
        let id = self.next_id;
        self.next_id += 1;
        self.clusters.insert(
            id,
            ClusterStats {
                id,
                members: 0,
                sum_x: 0,
                created_at,
            },
        );
        id
    }

    fn detach(&mut self, index: usize) -> ClusterId {
        let id = self.assignments[index];
        let x = self.data[index];
        let c = self.clusters.get_mut(&id).expect("assigned cluster exists");
        c.members -= 1;
        c.sum_x -= x;
        if c.members == 0 {
            self.clusters.remove(&id);
        }
        id
    }

    /// Places datum `index` (already in `data`) into `slot`, minting a new
    /// cluster for [`Slot::New`].
    fn attach(&mut self, index: usize, slot: Slot) -> ClusterId {
        let id = match slot {
            Slot::Existing(id) => id,
            Slot::New => self.mint(index as u64),
        };
        let c = self
            .clusters
            .get_mut(&id)
            .expect("attach target must be a live cluster");
        c.members += 1;
        c.sum_x += self.data[index];
        self.assignments[index] = id;
        id
    }

    /// Appends a datum into `slot`, returning its cluster id.
    pub(crate) fn push(&mut self, x: Count, slot: Slot) -> ClusterId {
        self.data.push(x);
        self.assignments.push(ClusterId::MAX);
        let i = self.data.len() - 1;
        self.attach(i, slot)
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.data.len() {
            return domain(format!(
                "datum index {index} out of range for {} data",
                self.data.len()
            ));
        }
        Ok(())
    }

    /// Cluster statistics with datum `excluding` removed; emptied clusters vanish.
    fn stats_excluding(&self, excluding: Option<usize>) -> Vec<ClusterStats> {
        let skip = excluding.map(|i| (self.assignments[i], self.data[i]));
        self.clusters
            .values()
            .filter_map(|c| match skip {
                Some((id, x)) if id == c.id => (c.members > 1).then(|| ClusterStats {
                    members: c.members - 1,
                    sum_x: c.sum_x - x,
                    ..*c
                }),
                _ => Some(*c),
            })
            .collect()
    }
}

/// Unnormalised log weights of every existing cluster (ascending id) followed
/// by [`Slot::New`].
pub fn assignment_log_weights(
    x: Count,
    state: &MixtureState,
    excluding: Option<usize>,
) -> Result<Vec<(Slot, f64)>> {
    if let Some(i) = excluding {
        state.check_index(i)?;
    }
    let base = state.hyper.base;
    let mut out: Vec<(Slot, f64)> = state
        .stats_excluding(excluding)
        .iter()
        .map(|c| {
            let w = (c.members as f64).ln() + c.predictive(&base).ln_pmf(x);
            (Slot::Existing(c.id), w)
        })
        .collect();
    let new = state.hyper.alpha.ln() + state.hyper.prior_predictive().ln_pmf(x);
    out.push((Slot::New, new));
    Ok(out)
}

/// Chinese-restaurant prior: `c_k / (α + M)` per cluster and `α / (α + M)`
/// for a new one, where `M` counts the other data.
pub fn crp_prior(state: &MixtureState, excluding: Option<usize>) -> Result<Vec<(Slot, f64)>> {
    if let Some(i) = excluding {
        state.check_index(i)?;
    }
    let others = state.data.len() - usize::from(excluding.is_some());
    let alpha = state.hyper.alpha;
    let denom = alpha + others as f64;
    let mut out: Vec<(Slot, f64)> = state
        .stats_excluding(excluding)
        .iter()
        .map(|c| (Slot::Existing(c.id), c.members as f64 / denom))
        .collect();
    out.push((Slot::New, alpha / denom));
    Ok(out)
}

/// Max-subtracted softmax of log weights.
pub fn normalize_log_weights(weights: &[(Slot, f64)]) -> Vec<(Slot, f64)> {
    let max = weights
        .iter()
        .map(|w| w.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = weights.iter().map(|w| (w.1 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    weights
        .iter()
        .zip(exps)
        .map(|(w, e)| (w.0, e / total))
        .collect()
}

/// Index of the largest weight; the first (lowest id) wins ties.
pub fn argmax_slot(weights: &[(Slot, f64)]) -> usize {
    let mut best = 0;
    for (i, w) in weights.iter().enumerate() {
        if w.1 > weights[best].1 {
            best = i;
        }
    }
    best
}

/// Categorical draw from log weights using one uniform variate.
pub fn sample_slot<R: Rng + ?Sized>(weights: &[(Slot, f64)], rng: &mut R) -> usize {
    let probs = normalize_log_weights(weights);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.1;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the cumulative sum.
    probs
        .iter()
        .rposition(|p| p.1 > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Outcome of resampling one datum.
#[derive(Debug, Clone, PartialEq)]
pub struct Reassignment {
    /// Normalised probabilities the draw was made from. A `New` entry that
    /// was drawn is reported under the freshly minted id.
    pub probs: Vec<(Slot, f64)>,
    pub chosen: ClusterId,
    /// Unnormalised log weight of the chosen slot.
    pub log_weight: f64,
}

/// Removes datum `index`, reweighs, and re-adds it to the slot picked by `choose`.
pub fn resample_one_with(
    state: &mut MixtureState,
    index: usize,
    choose: impl FnOnce(&[(Slot, f64)]) -> usize,
) -> Result<Reassignment> {
    state.check_index(index)?;
    let weights = assignment_log_weights(state.data[index], state, Some(index))?;
    state.detach(index);
    let pick = choose(&weights);
    let chosen = state.attach(index, weights[pick].0);
    let mut probs = normalize_log_weights(&weights);
    if probs[pick].0 == Slot::New {
        probs[pick].0 = Slot::Existing(chosen);
    }
    Ok(Reassignment {
        probs,
        chosen,
        log_weight: weights[pick].1,
    })
}

pub fn resample_one<R: Rng + ?Sized>(
    state: &mut MixtureState,
    index: usize,
    rng: &mut R,
) -> Result<Reassignment> {
    resample_one_with(state, index, |w| sample_slot(w, rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// Per-datum assignment probabilities over realised cluster ids; the mass
    /// of an undrawn new cluster is dropped and the rest renormalised.
    pub probs: Vec<Vec<(ClusterId, f64)>>,
    /// Sum over data of the chosen slot's log weight.
    pub log_likelihood: f64,
    pub num_clusters: usize,
    /// Data whose cluster changed during the sweep.
    pub flips: usize,
}

fn realised(probs: &[(Slot, f64)]) -> Vec<(ClusterId, f64)> {
    let kept: Vec<(ClusterId, f64)> = probs
        .iter()
        .filter_map(|&(s, p)| match s {
            Slot::Existing(id) => Some((id, p)),
            Slot::New => None,
        })
        .collect();
    let total: f64 = kept.iter().map(|k| k.1).sum();
    kept.into_iter().map(|(id, p)| (id, p / total)).collect()
}

/// Resamples every datum once, in index order.
pub fn gibbs_sweep<R: Rng + ?Sized>(state: &mut MixtureState, rng: &mut R) -> SweepReport {
    let mut probs = Vec::with_capacity(state.len());
    let mut log_likelihood = 0.0;
    let mut flips = 0;
    for i in 0..state.len() {
        let before = state.assignments[i];
        let r = resample_one(state, i, rng).expect("index in range");
        flips += usize::from(r.chosen != before);
        log_likelihood += r.log_weight;
        probs.push(realised(&r.probs));
    }
    SweepReport {
        probs,
        log_likelihood,
        num_clusters: state.num_clusters(),
        flips,
    }
}

/// Recomputes all cluster statistics from the assignments and compares.
pub fn audit(state: &MixtureState) -> bool {
    if state.data.len() != state.assignments.len() {
        return false;
    }
    let mut recomputed: BTreeMap<ClusterId, (u64, u64)> = BTreeMap::new();
    for (&x, &id) in state.data.iter().zip(&state.assignments) {
        let e = recomputed.entry(id).or_default();
        e.0 += 1;
        e.1 += x;
    }
    recomputed.len() == state.clusters.len()
        && recomputed.iter().all(|(id, &(n, s))| {
            state.clusters.get(id).is_some_and(|c| {
                c.id == *id && c.members == n && c.sum_x == s && *id < state.next_id
            })
        })
}

/// Stop once the cluster count is unchanged and fewer than `max_flip_fraction`
/// of the labels flip for `patience` consecutive sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: usize,
    pub max_flip_fraction: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            patience: 10,
            max_flip_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
}

impl FitConfig {
    pub fn new(sweeps: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            sweeps,
            burn_in,
            seed,
            early_stop: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweeps <= self.burn_in {
            return domain(format!(
                "sweeps ({}) must exceed burn-in ({})",
                self.sweeps, self.burn_in
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepDiagnostic {
    pub num_clusters: usize,
    pub log_likelihood: f64,
    pub flips: usize,
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub chain: Chain,
    pub diagnostics: Vec<SweepDiagnostic>,
    /// Per-datum probabilities averaged over post-burn-in sweeps, keyed by
    /// cluster id (ascending).
    pub mean_probs: Vec<Vec<(ClusterId, f64)>>,
}

impl Fit {
    pub fn state(&self) -> &MixtureState {
        &self.chain.state
    }

    /// Final-sweep labels: one posterior draw.
    pub fn labels(&self) -> &[ClusterId] {
        self.chain.state.assignments()
    }

    /// Point estimate of the partition: each datum's cluster of highest
    /// averaged probability (lowest id on ties). Falls back to the final
    /// labels when no sweep was kept.
    pub fn point_labels(&self) -> Vec<ClusterId> {
        self.mean_probs
            .iter()
            .zip(self.labels())
            .map(|(probs, &last)| {
                probs
                    .iter()
                    .fold(
                        None,
                        |best: Option<(ClusterId, f64)>, &(id, p)| match best {
                            Some((_, q)) if q >= p => best,
                            _ => Some((id, p)),
                        },
                    )
                    .map_or(last, |(id, _)| id)
            })
            .collect()
    }
}

/// A mixture state paired with the seeded generator that drives it.
///
/// The generator position is part of the state so a chain can be saved and
/// resumed bit-exactly.
#[derive(Debug, Clone)]
pub struct Chain {
    pub state: MixtureState,
    seed: u64,
    rng: ChaCha8Rng,
}

impl Chain {
    pub fn new(state: MixtureState, seed: u64) -> Self {
        Self {
            state,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// 32-bit words consumed from the generator so far.
    pub fn draw_counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn sweep(&mut self) -> SweepReport {
        gibbs_sweep(&mut self.state, &mut self.rng)
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot::capture(self)
    }
}

/// Runs `config.sweeps` Gibbs sweeps from the all-in-one-cluster start.
pub fn fit(data: &[Count], hyper: Hyperparams, config: &FitConfig) -> Result<Fit> {
    config.validate()?;
    let mut chain = Chain::new(
        MixtureState::single_cluster(data.to_vec(), hyper),
        config.seed,
    );
    let mut diagnostics = Vec::with_capacity(config.sweeps);
    let mut sums: Vec<BTreeMap<ClusterId, f64>> = vec![BTreeMap::new(); data.len()];
    let mut kept = 0usize;
    let mut calm = 0usize;
    if data.is_empty() {
        return Ok(Fit {
            chain,
            diagnostics,
            mean_probs: Vec::new(),
        });
    }
    for sweep in 0..config.sweeps {
        let before = chain.state.num_clusters();
        let report = chain.sweep();
        diagnostics.push(SweepDiagnostic {
            num_clusters: report.num_clusters,
            log_likelihood: report.log_likelihood,
            flips: report.flips,
        });
        if sweep >= config.burn_in {
            kept += 1;
            for (acc, probs) in sums.iter_mut().zip(&report.probs) {
                for &(id, p) in probs {
                    *acc.entry(id).or_default() += p;
                }
            }
        }
        if let Some(stop) = config.early_stop {
            let quiet = report.num_clusters == before
                && (report.flips as f64) < stop.max_flip_fraction * data.len() as f64;
            calm = if quiet { calm + 1 } else { 0 };
            if calm >= stop.patience && kept > 0 {
                break;
            }
        }
    }
    let mean_probs = sums
        .into_iter()
        .map(|acc| {
            acc.into_iter()
                .map(|(id, s)| (id, s / kept as f64))
                .collect()
        })
        .collect();
    Ok(Fit {
        chain,
        diagnostics,
        mean_probs,
    })
}

pub const SNAPSHOT_FORMAT: &str = "aemix.dppmm.v1";

/// JSON document for saving and resuming a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub format: String,
    pub hyper: Hyperparams,
    pub data_len: usize,
    /// FNV-1a over the little-endian bytes of the data.
    pub data_digest: String,
    pub data: Vec<Count>,
    pub assignments: Vec<ClusterId>,
    pub clusters: Vec<ClusterStats>,
    pub next_id: ClusterId,
    pub rng_seed: u64,
    /// Generator word position, as a decimal string (u128).
    pub rng_word_pos: String,
}

pub fn data_digest(data: &[Count]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in data {
        for b in x.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

impl ModelSnapshot {
    pub fn capture(chain: &Chain) -> Self {
        let s = &chain.state;
        Self {
            format: SNAPSHOT_FORMAT.to_string(),
            hyper: s.hyper,
            data_len: s.data.len(),
            data_digest: data_digest(&s.data),
            data: s.data.clone(),
            assignments: s.assignments.clone(),
            clusters: s.clusters.values().copied().collect(),
            next_id: s.next_id,
            rng_seed: chain.seed,
            rng_word_pos: chain.draw_counter().to_string(),
        }
    }

    pub fn restore(&self) -> Result<Chain> {
        if self.format != SNAPSHOT_FORMAT {
            return Err(Error::Format(format!(
                "unknown snapshot format {:?}",
                self.format
            )));
        }
        if self.data.len() != self.data_len || data_digest(&self.data) != self.data_digest {
            return Err(Error::Format("snapshot data digest mismatch".into()));
        }
        let mut state = MixtureState::from_assignments(
            self.data.clone(),
            self.assignments.clone(),
            self.hyper,
        )?;
        let stored: BTreeMap<ClusterId, ClusterStats> =
            self.clusters.iter().map(|c| (c.id, *c)).collect();
        for (id, c) in state.clusters.iter_mut() {
            let s = stored
                .get(id)
                .ok_or_else(|| Error::Format(format!("cluster {id} missing from table")))?;
            if (s.members, s.sum_x) != (c.members, c.sum_x) {
                return Err(Error::Format(format!("cluster {id} statistics disagree")));
            }
            c.created_at = s.created_at;
        }
        if stored.len() != state.clusters.len() {
            return Err(Error::Format("cluster table lists empty clusters".into()));
        }
        if self.next_id < state.next_id {
            return Err(Error::Format("next_id precedes a live cluster id".into()));
        }
        state.next_id = self.next_id;
        let pos: u128 = self
            .rng_word_pos
            .parse()
            .map_err(|_| Error::Format(format!("bad rng_word_pos {:?}", self.rng_word_pos)))?;
        let mut chain = Chain::new(state, self.rng_seed);
        chain.rng.set_word_pos(pos);
        Ok(chain)
    }
}
