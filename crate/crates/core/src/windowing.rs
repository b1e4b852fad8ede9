//! Ringdown-count extraction from raw waveforms.

use serde::{Deserialize, Serialize};

use crate::distributions::Count;
use crate::error::{domain, Result};

/// Uniformly sampled voltage series.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return domain("waveform has no samples");
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return domain(format!(
                "sample rate must be finite and > 0, got {sample_rate}"
            ));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return domain(format!("sample {i} is not finite"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    /// `value` is a percentile in (0, 100) of the (rectified) samples.
    Percentile,
    /// `value` is an absolute level in volts.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub kind: ThresholdKind,
    pub value: f64,
    /// Threshold `|v|` rather than `v`.
    #[serde(default = "default_rectify")]
    pub rectify: bool,
}

fn default_rectify() -> bool {
    true
}

impl ThresholdPolicy {
    pub fn percentile(q: f64) -> Result<Self> {
        let p = Self {
            kind: ThresholdKind::Percentile,
            value: q,
            rectify: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn fixed(volts: f64) -> Result<Self> {
        let p = Self {
            kind: ThresholdKind::Fixed,
            value: volts,
            rectify: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_rectify(mut self, rectify: bool) -> Self {
        self.rectify = rectify;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ThresholdKind::Percentile if !(self.value > 0.0 && self.value < 100.0) => domain(
                format!("percentile must lie in (0, 100), got {}", self.value),
            ),
            ThresholdKind::Fixed if !self.value.is_finite() => domain(format!(
                "fixed threshold must be finite, got {}",
                self.value
            )),
            _ => Ok(()),
        }
    }
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self {
            kind: ThresholdKind::Percentile,
            value: 99.0,
            rectify: true,
        }
    }
}

/// Sliding window geometry. `overlap` is the fraction of a window shared
/// with its successor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length: usize,
    #[serde(default)]
    pub overlap: f64,
}

impl WindowSpec {
    pub fn new(length: usize, overlap: f64) -> Result<Self> {
        let spec = Self { length, overlap };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return domain("window length must be positive");
        }
        if !(self.overlap >= 0.0 && self.overlap < 1.0) {
            return domain(format!("overlap must lie in [0, 1), got {}", self.overlap));
        }
        if self.step_unchecked() < 1 {
            return domain(format!(
                "window of {} samples with overlap {} has a zero step",
                self.length, self.overlap
            ));
        }
        Ok(())
    }

    fn step_unchecked(&self) -> usize {
        (self.length as f64 * (1.0 - self.overlap)).round() as usize
    }

    /// Samples advanced between consecutive windows.
    pub fn step(&self) -> usize {
        self.step_unchecked().max(1)
    }

    /// Number of whole windows that fit in `signal_len` samples.
    pub fn window_count(&self, signal_len: usize) -> usize {
        if signal_len < self.length {
            0
        } else {
            (signal_len - self.length) / self.step() + 1
        }
    }

    pub fn start_of(&self, index: usize) -> usize {
        index * self.step()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowCount {
    pub start: usize,
    pub count: Count,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedCounts {
    pub entries: Vec<WindowCount>,
    pub spec: WindowSpec,
    /// Resolved threshold in volts.
    pub threshold: f64,
    pub rectify: bool,
}

impl WindowedCounts {
    pub fn counts(&self) -> Vec<Count> {
        self.entries.iter().map(|e| e.count).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Linear interpolation between closest ranks (`(n − 1)·q/100` indexing).
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return domain("percentile of an empty sequence");
    }
    if !(0.0..=100.0).contains(&q) {
        return domain(format!("percentile must lie in [0, 100], got {q}"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

pub fn resolve_threshold(w: &Waveform, policy: &ThresholdPolicy) -> Result<f64> {
    policy.validate()?;
    match policy.kind {
        ThresholdKind::Fixed => Ok(policy.value),
        ThresholdKind::Percentile => {
            if policy.rectify {
                let mags: Vec<f64> = w.samples().iter().map(|v| v.abs()).collect();
                percentile(&mags, policy.value)
            } else {
                percentile(w.samples(), policy.value)
            }
        }
    }
}

/// Indices at which the signal rises above `threshold`. A segment that
/// starts above threshold reports index 0.
pub fn crossing_indices(segment: &[f64], threshold: f64, rectify: bool) -> Vec<usize> {
    let level = |v: f64| if rectify { v.abs() } else { v };
    let mut out = Vec::new();
    let mut below = true;
    for (i, &v) in segment.iter().enumerate() {
        let above = level(v) > threshold;
        if above && below {
            out.push(i);
        }
        below = !above;
    }
    out
}

/// Upward threshold crossings: the ringdown count of a segment.
pub fn count_crossings(segment: &[f64], threshold: f64, rectify: bool) -> Count {
    let mut count = 0;
    let mut below = true;
    for &v in segment {
        let above = if rectify { v.abs() } else { v } > threshold;
        if above && below {
            count += 1;
        }
        below = !above;
    }
    count
}

/// Ringdown count for every whole window; trailing samples that do not
/// fill a window are dropped.
pub fn extract_counts(
    w: &Waveform,
    policy: &ThresholdPolicy,
    spec: &WindowSpec,
) -> Result<WindowedCounts> {
    spec.validate()?;
    if spec.length > w.len() {
        return domain(format!(
            "window of {} samples exceeds signal of {} samples",
            spec.length,
            w.len()
        ));
    }
    let threshold = resolve_threshold(w, policy)?;
    Ok(counts_at_threshold(w, threshold, policy.rectify, spec))
}

/// As [`extract_counts`] with an already resolved threshold.
pub fn counts_at_threshold(
    w: &Waveform,
    threshold: f64,
    rectify: bool,
    spec: &WindowSpec,
) -> WindowedCounts {
    let samples = w.samples();
    let entries = (0..spec.window_count(samples.len()))
        .map(|i| {
            let start = spec.start_of(i);
            WindowCount {
                start,
                count: count_crossings(&samples[start..start + spec.length], threshold, rectify),
            }
        })
        .collect();
    WindowedCounts {
        entries,
        spec: *spec,
        threshold,
        rectify,
    }
}
