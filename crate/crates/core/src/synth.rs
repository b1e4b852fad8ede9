//! Synthetic AE signals: Gaussian noise plus exponentially decaying
//! sinusoidal bursts, with ground-truth annotations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::io::{HitRecord, HitSet};
use crate::monitor::keeps;
use crate::windowing::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    /// Seconds from the start of the signal.
    pub onset: f64,
    pub amplitude: f64,
    pub decay_tau: f64,
    pub carrier_freq: f64,
    #[serde(default)]
    pub family: u32,
    /// Envelope rise constant in seconds; the envelope is scaled by
    /// `1 - exp(-t / rise_tau)`. Zero means an abrupt onset.
    #[serde(default)]
    pub rise_tau: f64,
}

impl Burst {
    /// Noise-free envelope `t` seconds after onset.
    pub fn envelope(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let rise = if self.rise_tau > 0.0 {
            -(-t / self.rise_tau).exp_m1()
        } else {
            1.0
        };
        self.amplitude * rise * (-t / self.decay_tau).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub duration: f64,
    pub sample_rate: f64,
    pub noise_sigma: f64,
    #[serde(default)]
    pub bursts: Vec<Burst>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub family: u32,
}

impl Annotation {
    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

impl SynthSpec {
    pub fn len(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return domain(format!("sample rate must be > 0, got {}", self.sample_rate));
        }
        if !self.duration.is_finite() || self.is_empty() {
            return domain(format!("duration {} s holds no samples", self.duration));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return domain(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        for (i, b) in self.bursts.iter().enumerate() {
            if !(b.onset >= 0.0 && b.onset < self.duration) {
                return domain(format!(
                    "burst {i} onset {} outside [0, {})",
                    b.onset, self.duration
                ));
            }
            if !(b.amplitude.is_finite() && b.amplitude > 0.0) {
                return domain(format!("burst {i} amplitude must be > 0"));
            }
            if !(b.decay_tau.is_finite() && b.decay_tau > 0.0) {
                return domain(format!("burst {i} decay must be > 0"));
            }
            if !(b.carrier_freq.is_finite() && b.carrier_freq >= 0.0) {
                return domain(format!("burst {i} carrier must be >= 0"));
            }
            if !(b.rise_tau.is_finite() && b.rise_tau >= 0.0) {
                return domain(format!("burst {i} rise must be >= 0"));
            }
        }
        Ok(())
    }

    fn onset_index(&self, b: &Burst) -> usize {
        (b.onset * self.sample_rate - 1e-9).ceil().max(0.0) as usize
    }

    /// Onset to the last sample whose decay envelope is still at least the
    /// noise level. Noise-free signals annotate to the end.
    pub fn annotation(&self, b: &Burst) -> Annotation {
        let n = self.len();
        let start = self.onset_index(b);
        let end = if self.noise_sigma > 0.0 {
            let t_end = b.onset + b.decay_tau * (b.amplitude / self.noise_sigma).ln();
            ((self.sample_rate * t_end).floor() as i64 + 1).clamp(0, n as i64) as usize
        } else {
            n
        };
        Annotation {
            start,
            end: end.max(start + 1).min(n),
            family: b.family,
        }
    }
}

/// Adds `b`'s waveform to `samples`, whose first element sits at time 0.
fn add_burst(samples: &mut [f64], sample_rate: f64, start: usize, b: &Burst, floor: f64) {
    let w = 2.0 * std::f64::consts::PI * b.carrier_freq;
    for (i, v) in samples.iter_mut().enumerate().skip(start) {
        let t = i as f64 / sample_rate - b.onset;
        if b.amplitude * (-t / b.decay_tau).exp() < floor {
            break;
        }
        *v += b.envelope(t) * (w * t).sin();
    }
}

pub fn synthesize(spec: &SynthSpec, seed: u64) -> Result<(Waveform, Vec<Annotation>)> {
    spec.validate()?;
    let n = spec.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples: Vec<f64> = if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("sigma checked");
        (0..n).map(|_| normal.sample(&mut rng)).collect()
    } else {
        vec![0.0; n]
    };
    let mut annotations = Vec::with_capacity(spec.bursts.len());
    for b in &spec.bursts {
        let floor = 1e-12 * b.amplitude.min(spec.noise_sigma.max(f64::MIN_POSITIVE));
        add_burst(
            &mut samples,
            spec.sample_rate,
            spec.onset_index(b),
            b,
            floor,
        );
        annotations.push(spec.annotation(b));
    }
    Ok((Waveform::new(samples, spec.sample_rate)?, annotations))
}

/// Two pencil-lead-break-like bursts in 0.2 s of noise at 1 MHz. Each burst
/// starts on a multiple of 4096 samples and its envelope reaches the noise
/// level 4096 samples later.
pub fn lead_break() -> SynthSpec {
    let fs = 1.0e6;
    let sigma = 1.0e-3;
    let amplitude = 20.0 * sigma;
    let tau = 4095.5 / (fs * 20f64.ln());
    let burst = |k: usize| Burst {
        onset: (k * 4096) as f64 / fs,
        amplitude,
        decay_tau: tau,
        carrier_freq: 150.0e3,
        family: 1,
        rise_tau: 0.0,
    };
    SynthSpec {
        duration: 0.2,
        sample_rate: fs,
        noise_sigma: sigma,
        bursts: vec![burst(15), burst(34)],
    }
}

/// Noise with a low-amplitude and a high-amplitude burst family, a
/// desk-scale stand-in for a bearing test record. Family 1 is quiet, family
/// 2 loud; the layout is drawn from `seed`.
pub fn journal_bearing(seed: u64) -> SynthSpec {
    let fs = 1.0e6;
    let sigma = 1.0e-3;
    let duration = 0.25;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a6f_7572_6e61_6c00);
    let slot = 2048usize;
    let slots = (duration * fs) as usize / slot;
    let mut bursts = Vec::new();
    for k in 1..slots - 1 {
        let family = match rng.random_range(0..10) {
            0 | 1 => 1,
            2 | 3 => 2,
            _ => continue,
        };
        let (amp, tau, freq) = if family == 1 {
            (6.0 * sigma, 300.0e-6, 120.0e3)
        } else {
            (60.0 * sigma, 400.0e-6, 200.0e3)
        };
        let jitter: f64 = rng.random_range(0.8..1.25);
        bursts.push(Burst {
            onset: (k * slot) as f64 / fs,
            amplitude: amp * jitter,
            decay_tau: tau,
            carrier_freq: freq,
            family,
            rise_tau: 0.0,
        });
    }
    SynthSpec {
        duration,
        sample_rate: fs,
        noise_sigma: sigma,
        bursts,
    }
}

/// Window length used by [`offset_bursts`].
pub const OFFSET_WINDOW: usize = 256;

/// Three slow-rising bursts in 0.03 s of noise at 1 MHz, each starting half
/// a window past a multiple of [`OFFSET_WINDOW`] samples. Meant to be
/// counted at a fixed threshold of twice the noise level.
pub fn offset_bursts() -> SynthSpec {
    let fs = 1.0e6;
    let sigma = 1.0e-3;
    let burst = |k: usize| Burst {
        onset: (k * OFFSET_WINDOW + OFFSET_WINDOW / 2) as f64 / fs,
        amplitude: 6.0 * sigma,
        decay_tau: 800.0e-6,
        carrier_freq: 200.0e3,
        family: 1,
        rise_tau: 400.0e-6,
    };
    SynthSpec {
        duration: 0.03,
        sample_rate: fs,
        noise_sigma: sigma,
        bursts: vec![burst(15), burst(40), burst(80)],
    }
}

/// A hit family of the stream generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitFamily {
    pub id: u32,
    /// Relative frequency among the families active at a hit.
    pub weight: f64,
    pub amplitude: f64,
    /// Amplitudes are drawn uniformly from `amplitude · [1 − spread, 1 + spread]`.
    pub spread: f64,
    pub decay_tau: f64,
    pub carrier_freq: f64,
    /// First hit index at which the family can occur.
    #[serde(default)]
    pub first_hit: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitStreamSpec {
    pub hits: u64,
    pub sample_rate: f64,
    pub record_length: usize,
    pub pretrigger: usize,
    pub channel: u32,
    pub noise_sigma: f64,
    /// Mean hits per second.
    pub hit_rate: f64,
    pub families: Vec<HitFamily>,
}

impl HitStreamSpec {
    pub fn validate(&self) -> Result<()> {
        if self.pretrigger >= self.record_length {
            return domain("pretrigger must be below the record length");
        }
        if !(self.sample_rate > 0.0 && self.hit_rate > 0.0 && self.noise_sigma >= 0.0) {
            return domain("sample rate and hit rate must be > 0, noise >= 0");
        }
        if self.families.is_empty() || self.families.iter().all(|f| f.first_hit > 0) {
            return domain("at least one family must be active from the first hit");
        }
        for f in &self.families {
            if !(f.weight > 0.0
                && f.amplitude > 0.0
                && f.decay_tau > 0.0
                && (0.0..1.0).contains(&f.spread))
            {
                return domain(format!("family {} has invalid parameters", f.id));
            }
        }
        Ok(())
    }

    /// The hit at index `i` and the family it was drawn from. Each hit has
    /// its own generator stream, so any subset can be produced on its own.
    pub fn hit(&self, seed: u64, i: u64) -> (HitRecord, u32) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i);
        let active: Vec<&HitFamily> = self.families.iter().filter(|f| f.first_hit <= i).collect();
        let total: f64 = active.iter().map(|f| f.weight).sum();
        let mut u = rng.random::<f64>() * total;
        let fam = active
            .iter()
            .find(|f| {
                u -= f.weight;
                u < 0.0
            })
            .unwrap_or(active.last().expect("validated"));
        let amplitude = fam.amplitude * (1.0 + fam.spread * (2.0 * rng.random::<f64>() - 1.0));
        let trigger_time = (i as f64 + rng.random::<f64>()) / self.hit_rate;
        let mut samples: Vec<f64> = (0..self.record_length)
            .map(|_| self.noise_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let b = Burst {
            onset: self.pretrigger as f64 / self.sample_rate,
            amplitude,
            decay_tau: fam.decay_tau,
            carrier_freq: fam.carrier_freq,
            family: fam.id,
            rise_tau: 0.0,
        };
        add_burst(
            &mut samples,
            self.sample_rate,
            self.pretrigger,
            &b,
            1e-12 * amplitude,
        );
        (
            HitRecord {
                trigger_time,
                samples,
                pretrigger: self.pretrigger,
                channel: self.channel,
            },
            fam.id,
        )
    }

    /// Generates the hits that systematic decimation at `keep_ratio` would
    /// retain, with their original indices and family labels.
    pub fn generate(&self, seed: u64, keep_ratio: f64) -> Result<(HitSet, Vec<(u64, u32)>)> {
        self.validate()?;
        crate::monitor::validate_keep_ratio(keep_ratio)?;
        let mut records = Vec::new();
        let mut labels = Vec::new();
        for i in (0..self.hits).filter(|&i| keeps(i, keep_ratio)) {
            let (rec, fam) = self.hit(seed, i);
            records.push(rec);
            labels.push((i, fam));
        }
        Ok((
            HitSet {
                sample_rate: self.sample_rate,
                records,
            },
            labels,
        ))
    }
}

/// Two benign families from the start and a 50× energy damage family from
/// hit 6 000, at 2 MHz with 2048-sample records.
pub fn damage_stream() -> HitStreamSpec {
    let benign = |id, weight, tau, freq| HitFamily {
        id,
        weight,
        amplitude: 1.0,
        spread: 0.2,
        decay_tau: tau,
        carrier_freq: freq,
        first_hit: 0,
    };
    HitStreamSpec {
        hits: 10_000,
        sample_rate: 2.0e6,
        record_length: 2048,
        pretrigger: 500,
        channel: 5,
        noise_sigma: 0.01,
        hit_rate: 3.776,
        families: vec![
            benign(0, 0.6, 100.0e-6, 150.0e3),
            benign(1, 0.4, 200.0e-6, 300.0e3),
            HitFamily {
                id: 2,
                weight: 0.2,
                amplitude: 50f64.sqrt(),
                spread: 0.2,
                decay_tau: 100.0e-6,
                carrier_freq: 150.0e3,
                first_hit: 6_000,
            },
        ],
    }
}
