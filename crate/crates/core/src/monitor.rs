//! Online mixture updating for hit streams.
//!
//! Each incoming hit count is scored against the current mixture. The
//! normalised entropy of its assignment probabilities decides between a
//! full Gibbs reassessment and a cheap greedy assignment. Per-cluster
//! cumulative tracks feed step-change alarms.
//!
//! Draw order per observation (entropy gate): one uniform for the gate,
//! then, on the resample path, one uniform for the categorical draw of the
//! new datum followed by one per datum for the sweep. The greedy path draws
//! nothing further. The forced gate modes skip the gate draw.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::Count;
use crate::dppmm::{
    argmax_slot, assignment_log_weights, normalize_log_weights, sample_slot, Chain, ClusterId,
    MixtureState, Slot,
};
use crate::error::{domain, Result};

const NORMALISATION_TOLERANCE: f64 = 1e-9;

/// Shannon entropy in nats, treating `0·ln 0` as 0.
pub fn entropy(probs: &[f64]) -> Result<f64> {
    let total: f64 = probs.iter().sum();
    if probs
        .iter()
        .any(|p| !(0.0..=1.0 + NORMALISATION_TOLERANCE).contains(p))
        || (total - 1.0).abs() > NORMALISATION_TOLERANCE
    {
        return domain(format!("probabilities sum to {total}, not 1"));
    }
    Ok(-probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>())
}

/// Entropy over `k + 1` outcomes divided by its maximum `ln(k + 1)`.
pub fn information_efficiency(probs: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return domain("information efficiency needs at least one cluster");
    }
    if probs.len() != k + 1 {
        return domain(format!(
            "expected {} probabilities, got {}",
            k + 1,
            probs.len()
        ));
    }
    let h = entropy(probs)?;
    Ok((h / ((k + 1) as f64).ln()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Resample with probability equal to the information efficiency.
    #[default]
    Entropy,
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// The model was empty; the datum founded the first cluster.
    Founded,
    Resampled,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Index of the datum inside the mixture.
    pub index: usize,
    pub decision: Decision,
    /// Cluster holding the datum after the update.
    pub cluster: ClusterId,
    pub eta: f64,
    /// Gate variate, when one was drawn.
    pub gate_draw: Option<f64>,
    /// Normalised assignment probabilities the decision was based on.
    pub probs: Vec<(Slot, f64)>,
    /// Clusters alive after the update that did not exist before it.
    pub new_clusters: Vec<ClusterId>,
}

/// Adds `x` to the chain's mixture.
pub fn observe(x: Count, chain: &mut Chain, gate: GateMode) -> Observation {
    let first_new = chain.state.next_id();
    if chain.state.num_clusters() == 0 {
        let id = chain.state.push(x, Slot::New);
        return Observation {
            index: chain.state.len() - 1,
            decision: Decision::Founded,
            cluster: id,
            eta: 0.0,
            gate_draw: None,
            probs: vec![(Slot::New, 1.0)],
            new_clusters: vec![id],
        };
    }
    let weights = assignment_log_weights(x, &chain.state, None).expect("no exclusion");
    let probs = normalize_log_weights(&weights);
    let plain: Vec<f64> = probs.iter().map(|p| p.1).collect();
    let eta = information_efficiency(&plain, chain.state.num_clusters()).unwrap_or(1.0);

    let (resample, gate_draw) = match gate {
        GateMode::Always => (true, None),
        GateMode::Never => (false, None),
        GateMode::Entropy => {
            let u: f64 = chain.rng().random();
            (u < eta, Some(u))
        }
    };
    let decision = if resample {
        let pick = sample_slot(&weights, chain.rng());
        chain.state.push(x, weights[pick].0);
        chain.sweep();
        Decision::Resampled
    } else {
        chain.state.push(x, weights[argmax_slot(&weights)].0);
        Decision::Greedy
    };
    let index = chain.state.len() - 1;
    let new_clusters = chain
        .state
        .clusters()
        .map(|c| c.id)
        .filter(|&id| id >= first_new)
        .collect();
    Observation {
        index,
        decision,
        cluster: chain.state.assignments()[index],
        eta,
        gate_draw,
        probs,
        new_clusters,
    }
}

/// Whether systematic sampling at `keep_ratio` keeps item `i`.
pub fn keeps(i: u64, keep_ratio: f64) -> bool {
    let now = (i as f64 * keep_ratio).floor();
    let before = ((i as f64 - 1.0) * keep_ratio).floor();
    now > before
}

/// Systematic subsample of `items`, order preserved.
pub fn decimate<T>(items: impl IntoIterator<Item = T>, keep_ratio: f64) -> Result<Vec<T>> {
    validate_keep_ratio(keep_ratio)?;
    Ok(items
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keeps(*i as u64, keep_ratio))
        .map(|(_, t)| t)
        .collect())
}

pub fn validate_keep_ratio(keep_ratio: f64) -> Result<()> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return domain(format!("keep ratio must lie in (0, 1], got {keep_ratio}"));
    }
    Ok(())
}

/// Cumulative per-cluster series, one point per hit credited to the cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTrack {
    pub cluster: ClusterId,
    pub times: Vec<u64>,
    pub cumulative_events: Vec<u64>,
    pub cumulative_counts: Vec<u64>,
    pub cumulative_energy: Vec<f64>,
}

impl ClusterTrack {
    fn new(cluster: ClusterId) -> Self {
        Self {
            cluster,
            times: Vec::new(),
            cumulative_events: Vec::new(),
            cumulative_counts: Vec::new(),
            cumulative_energy: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn energy_increment(&self, i: usize) -> f64 {
        let prev = if i == 0 {
            0.0
        } else {
            self.cumulative_energy[i - 1]
        };
        self.cumulative_energy[i] - prev
    }

    /// Median of the last `lag` energy increments.
    fn trailing_median(&self, lag: usize) -> Option<f64> {
        let n = self.len();
        if n == 0 {
            return None;
        }
        let mut v: Vec<f64> = (n.saturating_sub(lag)..n)
            .map(|i| self.energy_increment(i))
            .collect();
        v.sort_by(f64::total_cmp);
        let m = v.len();
        Some(if m % 2 == 1 {
            v[m / 2]
        } else {
            0.5 * (v[m / 2 - 1] + v[m / 2])
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmKind {
    NewCluster,
    GrowthStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    /// Observation ordinal the alarm refers to.
    pub time: u64,
    pub kind: AlarmKind,
    pub cluster: ClusterId,
    /// Increment ratio over the trailing median for growth steps; member
    /// count at confirmation for new clusters.
    pub magnitude: f64,
    /// Observation ordinal at which the alarm was issued.
    pub issued_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrowthRule {
    pub step_factor: f64,
    /// Trailing increments the median is taken over.
    pub lag: usize,
    /// Increments a track needs before it may alarm.
    pub min_history: usize,
}

impl Default for GrowthRule {
    fn default() -> Self {
        Self {
            step_factor: 10.0,
            lag: 50,
            min_history: 5,
        }
    }
}

/// Appends one hit to `cluster`'s track and checks it for a growth step.
pub fn update_tracks(
    tracks: &mut BTreeMap<ClusterId, ClusterTrack>,
    time: u64,
    cluster: ClusterId,
    count: Count,
    energy: f64,
    rule: &GrowthRule,
) -> Option<AlarmEvent> {
    let track = tracks
        .entry(cluster)
        .or_insert_with(|| ClusterTrack::new(cluster));
    let baseline = (track.len() >= rule.min_history)
        .then(|| track.trailing_median(rule.lag))
        .flatten();
    let energy = energy.max(0.0);
    track.times.push(time);
    track
        .cumulative_events
        .push(track.cumulative_events.last().copied().unwrap_or(0) + 1);
    track
        .cumulative_counts
        .push(track.cumulative_counts.last().copied().unwrap_or(0) + count);
    track
        .cumulative_energy
        .push(track.cumulative_energy.last().copied().unwrap_or(0.0) + energy);

    let baseline = baseline?;
    if energy > 0.0 && energy > rule.step_factor * baseline {
        Some(AlarmEvent {
            time,
            kind: AlarmKind::GrowthStep,
            cluster,
            magnitude: if baseline > 0.0 {
                energy / baseline
            } else {
                f64::INFINITY
            },
            issued_at: time,
        })
    } else {
        None
    }
}

/// The `m` clusters of highest posterior-mean rate, highest first.
pub fn top_clusters_by_rate(state: &MixtureState, m: usize) -> Vec<ClusterId> {
    let base = state.hyper().base;
    let mut ids: Vec<(f64, ClusterId)> = state
        .clusters()
        .map(|c| (c.posterior_mean(&base), c.id))
        .collect();
    ids.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    ids.into_iter().take(m).map(|(_, id)| id).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    pub gate: GateMode,
    pub growth: GrowthRule,
    /// Observations a new cluster must survive before its alarm is issued.
    pub survival_horizon: u64,
    pub min_survivor_members: u64,
    /// Leading observations during which the mixture settles and no alarms
    /// are issued.
    pub warmup: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            gate: GateMode::Entropy,
            growth: GrowthRule::default(),
            survival_horizon: 20,
            min_survivor_members: 2,
            warmup: 0,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.growth;
        if !(g.step_factor.is_finite() && g.step_factor > 0.0) {
            return domain(format!("step factor must be > 0, got {}", g.step_factor));
        }
        if g.lag == 0 {
            return domain("growth lag must be at least 1");
        }
        Ok(())
    }
}

/// One hit as the monitor sees it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub count: Count,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorStep {
    pub observation: Observation,
    /// Alarms issued at this step.
    pub alarms: Vec<AlarmEvent>,
}

/// Single-writer streaming state machine.
#[derive(Debug, Clone)]
pub struct Monitor {
    chain: Chain,
    config: MonitorConfig,
    tracks: BTreeMap<ClusterId, ClusterTrack>,
    /// New-cluster candidates awaiting confirmation, by creation time.
    pending: BTreeMap<ClusterId, u64>,
    confirmed: BTreeSet<ClusterId>,
    time: u64,
}

impl Monitor {
    pub fn new(chain: Chain, config: MonitorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            chain,
            config,
            tracks: BTreeMap::new(),
            pending: BTreeMap::new(),
            confirmed: BTreeSet::new(),
            time: 0,
        })
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn state(&self) -> &MixtureState {
        &self.chain.state
    }

    pub fn tracks(&self) -> &BTreeMap<ClusterId, ClusterTrack> {
        &self.tracks
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    /// Observations processed so far.
    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn observe(&mut self, hit: Hit) -> MonitorStep {
        let time = self.time;
        self.time += 1;
        let armed = time >= self.config.warmup;
        let observation = observe(hit.count, &mut self.chain, self.config.gate);
        let mut alarms = Vec::new();

        if armed {
            for &id in &observation.new_clusters {
                self.pending.insert(id, time);
            }
        }
        let step = update_tracks(
            &mut self.tracks,
            time,
            observation.cluster,
            hit.count,
            hit.energy,
            &self.config.growth,
        );
        if let Some(alarm) = step.filter(|_| armed) {
            alarms.push(alarm);
        }

        let state = &self.chain.state;
        let horizon = self.config.survival_horizon;
        let min_members = self.config.min_survivor_members;
        let mut settled = Vec::new();
        for (&id, &born) in &self.pending {
            match state.cluster(id) {
                None => settled.push(id),
                Some(c) if time >= born + horizon => {
                    settled.push(id);
                    if c.members >= min_members && self.confirmed.insert(id) {
                        alarms.push(AlarmEvent {
                            time: born,
                            kind: AlarmKind::NewCluster,
                            cluster: id,
                            magnitude: c.members as f64,
                            issued_at: time,
                        });
                    }
                }
                Some(_) => {}
            }
        }
        for id in settled {
            self.pending.remove(&id);
        }
        MonitorStep {
            observation,
            alarms,
        }
    }
}

/// Writes alarms as JSON lines.
pub fn write_alarms<W: Write>(out: &mut W, alarms: &[AlarmEvent]) -> Result<()> {
    for a in alarms {
        serde_json::to_writer(&mut *out, a)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes every track point as `time,cluster,cumulative_events,cumulative_counts,cumulative_energy`,
/// ordered by time.
pub fn write_tracks_csv<W: Write>(
    out: &mut W,
    tracks: &BTreeMap<ClusterId, ClusterTrack>,
) -> Result<()> {
    let mut rows: Vec<(u64, ClusterId, u64, u64, f64)> = tracks
        .values()
        .flat_map(|t| {
            (0..t.len()).map(move |i| {
                (
                    t.times[i],
                    t.cluster,
                    t.cumulative_events[i],
                    t.cumulative_counts[i],
                    t.cumulative_energy[i],
                )
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    writeln!(
        out,
        "time,cluster,cumulative_events,cumulative_counts,cumulative_energy"
    )?;
    for (t, c, e, n, en) in rows {
        writeln!(out, "{t},{c},{e},{n},{en:e}")?;
    }
    Ok(())
}
