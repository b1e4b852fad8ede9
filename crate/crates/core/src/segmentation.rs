//! Per-sample assignment probabilities, event boundaries and AE features.
//!
//! Each window's assignment probabilities are spread back onto the samples
//! it covers and averaged with every other window covering the same sample.
//! Because windows start on a fixed step grid, the averaged field is
//! piecewise constant between window boundaries and is stored that way.

use serde::{Deserialize, Serialize};

use crate::distributions::Count;
use crate::dppmm::ClusterId;
use crate::error::{domain, Result};
use crate::windowing::{count_crossings, crossing_indices, Waveform, WindowSpec};

/// A run of samples sharing one averaged probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSegment {
    pub start: usize,
    pub end: usize,
    pub coverage: usize,
    /// Aligned with [`SampleProbabilityField::clusters`]; empty when
    /// `coverage == 0`.
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleProbabilityField {
    pub len: usize,
    /// Every cluster id with mass somewhere, ascending.
    pub clusters: Vec<ClusterId>,
    /// Contiguous, ordered, and spanning `[0, len)`.
    pub segments: Vec<FieldSegment>,
}

impl SampleProbabilityField {
    fn segment_at(&self, sample: usize) -> &FieldSegment {
        let i = self.segments.partition_point(|s| s.end <= sample);
        &self.segments[i]
    }

    pub fn coverage(&self, sample: usize) -> usize {
        self.segment_at(sample).coverage
    }

    /// Probability of `cluster` at `sample`; zero where uncovered.
    pub fn probability(&self, sample: usize, cluster: ClusterId) -> f64 {
        let seg = self.segment_at(sample);
        match self.clusters.binary_search(&cluster) {
            Ok(k) if seg.coverage > 0 => seg.probs[k],
            _ => 0.0,
        }
    }

    /// Per-sample probability of `cluster`, expanded to the full length.
    pub fn series(&self, cluster: ClusterId) -> Vec<f64> {
        let k = self.clusters.binary_search(&cluster).ok();
        let mut out = Vec::with_capacity(self.len);
        for seg in &self.segments {
            let v = match k {
                Some(k) if seg.coverage > 0 => seg.probs[k],
                _ => 0.0,
            };
            out.extend(std::iter::repeat_n(v, seg.end - seg.start));
        }
        out
    }

    /// Cluster of highest probability at `sample`, lowest id on ties.
    pub fn argmax(&self, sample: usize) -> Option<ClusterId> {
        let seg = self.segment_at(sample);
        if seg.coverage == 0 {
            return None;
        }
        let mut best = 0;
        for (k, &p) in seg.probs.iter().enumerate() {
            if p > seg.probs[best] {
                best = k;
            }
        }
        Some(self.clusters[best])
    }
}

/// Averages per-window probability vectors onto the samples they cover.
///
/// `window_probs[i]` belongs to the window starting at `spec.start_of(i)`.
pub fn average_probabilities(
    window_probs: &[Vec<(ClusterId, f64)>],
    spec: &WindowSpec,
    signal_len: usize,
) -> Result<SampleProbabilityField> {
    spec.validate()?;
    let expected = spec.window_count(signal_len);
    if window_probs.len() != expected {
        return domain(format!(
            "{} window vectors but a {}-sample signal holds {} windows",
            window_probs.len(),
            signal_len,
            expected
        ));
    }
    let mut clusters: Vec<ClusterId> = window_probs.iter().flatten().map(|p| p.0).collect();
    clusters.sort_unstable();
    clusters.dedup();

    let dense: Vec<Vec<f64>> = window_probs
        .iter()
        .map(|w| {
            let mut v = vec![0.0; clusters.len()];
            for &(id, p) in w {
                v[clusters.binary_search(&id).expect("collected above")] += p;
            }
            v
        })
        .collect();

    let (n, step) = (spec.length, spec.step());
    let mut cuts: Vec<usize> = (0..expected)
        .flat_map(|i| [spec.start_of(i), spec.start_of(i) + n])
        .chain([0, signal_len])
        .collect();
    cuts.sort_unstable();
    cuts.dedup();

    let mut segments = Vec::with_capacity(cuts.len());
    for pair in cuts.windows(2) {
        let (start, end) = (pair[0], pair[1]);
        // Windows i with i·step <= start and i·step + n >= end.
        let hi = (start / step + 1).min(expected);
        let lo = if end > n { (end - n).div_ceil(step) } else { 0 };
        let coverage = hi.saturating_sub(lo);
        let probs = if coverage == 0 {
            Vec::new()
        } else {
            let mut acc = vec![0.0; clusters.len()];
            for v in &dense[lo..hi] {
                for (a, p) in acc.iter_mut().zip(v) {
                    *a += p;
                }
            }
            let total: f64 = acc.iter().sum();
            acc.iter_mut().for_each(|a| *a /= total);
            acc
        };
        segments.push(FieldSegment {
            start,
            end,
            coverage,
            probs,
        });
    }
    Ok(SampleProbabilityField {
        len: signal_len,
        clusters,
        segments,
    })
}

/// A detected event before feature extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSpan {
    pub start: usize,
    pub end: usize,
    pub label: ClusterId,
    /// Mean over the run of `1 − P(noise)`.
    pub mean_probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    pub min_probability: f64,
    /// Runs shorter than this many samples are discarded.
    pub min_length: usize,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            min_probability: 0.5,
            min_length: 1,
        }
    }
}

/// Maximal runs where `1 − P(noise_cluster) >= min_probability`.
pub fn segment_events(
    field: &SampleProbabilityField,
    noise_cluster: ClusterId,
    params: &SegmentationParams,
) -> Vec<EventSpan> {
    let noise_k = field.clusters.binary_search(&noise_cluster).ok();
    let event_mass = |seg: &FieldSegment| -> Option<f64> {
        (seg.coverage > 0).then(|| 1.0 - noise_k.map_or(0.0, |k| seg.probs[k]))
    };

    let mut out = Vec::new();
    let mut run: Vec<&FieldSegment> = Vec::new();
    let flush = |run: &mut Vec<&FieldSegment>, out: &mut Vec<EventSpan>| {
        if run.is_empty() {
            return;
        }
        let start = run[0].start;
        let end = run[run.len() - 1].end;
        if end - start >= params.min_length.max(1) {
            let len = (end - start) as f64;
            let mut per_cluster = vec![0.0; field.clusters.len()];
            let mut mass = 0.0;
            for seg in run.iter() {
                let w = (seg.end - seg.start) as f64;
                mass += w * event_mass(seg).expect("covered");
                for (acc, p) in per_cluster.iter_mut().zip(&seg.probs) {
                    *acc += w * p;
                }
            }
            let label = (0..field.clusters.len())
                .filter(|&k| Some(k) != noise_k)
                .fold(None, |best: Option<usize>, k| match best {
                    Some(b) if per_cluster[b] >= per_cluster[k] => Some(b),
                    _ => Some(k),
                })
                .map(|k| field.clusters[k]);
            if let Some(label) = label {
                out.push(EventSpan {
                    start,
                    end,
                    label,
                    mean_probability: mass / len,
                });
            }
        }
        run.clear();
    };

    for seg in &field.segments {
        match event_mass(seg) {
            Some(m) if m >= params.min_probability => run.push(seg),
            _ => flush(&mut run, &mut out),
        }
    }
    flush(&mut run, &mut out);
    out
}

/// Classic AE hit features in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformFeatures {
    pub count: Count,
    pub peak_amplitude: f64,
    /// First crossing to peak, seconds.
    pub rise_time: f64,
    /// First crossing to the last sample above threshold, seconds.
    pub duration: f64,
    /// `Σ v² / sample_rate`, V²·s.
    pub energy: f64,
}

pub fn features_of(
    samples: &[f64],
    sample_rate: f64,
    threshold: f64,
    rectify: bool,
) -> WaveformFeatures {
    let energy = samples.iter().map(|v| v * v).sum::<f64>() / sample_rate;
    let (peak_idx, peak) =
        samples
            .iter()
            .map(|v| v.abs())
            .enumerate()
            .fold(
                (0, 0.0),
                |best, (i, a)| if a > best.1 { (i, a) } else { best },
            );
    let level = |v: f64| if rectify { v.abs() } else { v };
    let first = crossing_indices(samples, threshold, rectify)
        .first()
        .copied();
    let (count, rise_time, duration) = match first {
        None => (0, 0.0, 0.0),
        Some(first) => {
            let last_above = samples
                .iter()
                .rposition(|&v| level(v) > threshold)
                .expect("a crossing implies a sample above threshold");
            let rise = peak_idx.saturating_sub(first).min(last_above - first);
            (
                count_crossings(samples, threshold, rectify),
                rise as f64 / sample_rate,
                (last_above - first) as f64 / sample_rate,
            )
        }
    };
    WaveformFeatures {
        count,
        peak_amplitude: peak,
        rise_time,
        duration,
        energy,
    }
}

/// Features of `w[start..end]`, thresholding `|v|`.
pub fn extract_features(
    w: &Waveform,
    event: (usize, usize),
    threshold: f64,
) -> Result<WaveformFeatures> {
    let (start, end) = event;
    if start >= end || end > w.len() {
        return domain(format!(
            "event [{start}, {end}) is empty or exceeds the {}-sample waveform",
            w.len()
        ));
    }
    Ok(features_of(
        &w.samples()[start..end],
        w.sample_rate(),
        threshold,
        true,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub start_index: usize,
    pub end_index: usize,
    pub start_time: f64,
    pub end_time: f64,
    pub label: ClusterId,
    pub mean_probability: f64,
    pub features: WaveformFeatures,
}

impl EventRecord {
    pub fn new(w: &Waveform, span: &EventSpan, threshold: f64) -> Result<Self> {
        Ok(Self {
            start_index: span.start,
            end_index: span.end,
            start_time: span.start as f64 / w.sample_rate(),
            end_time: span.end as f64 / w.sample_rate(),
            label: span.label,
            mean_probability: span.mean_probability,
            features: extract_features(w, (span.start, span.end), threshold)?,
        })
    }
}
