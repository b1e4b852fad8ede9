//! Waveform files and the hit container.
//!
//! Waveforms come as CSV (one sample per line, or `time,value` pairs) or as
//! headerless little-endian `f32`/`i16`. A hit container is one JSON header
//! line followed by the records as concatenated little-endian `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::windowing::Waveform;

const SPACING_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveFormat {
    Csv,
    RawF32Le,
    RawI16Le,
}

impl FromStr for WaveFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "raw_f32_le" => Ok(Self::RawF32Le),
            "raw_i16_le" => Ok(Self::RawI16Le),
            other => Err(Error::Format(format!("unknown waveform format {other:?}"))),
        }
    }
}

pub fn read_waveform(
    path: &Path,
    format: WaveFormat,
    sample_rate: Option<f64>,
) -> Result<Waveform> {
    parse_waveform(&fs::read(path)?, format, sample_rate)
}

/// Decodes a waveform. CSV `time,value` pairs carry their own rate; a rate
/// given alongside them must agree. All other layouts need `sample_rate`.
pub fn parse_waveform(
    bytes: &[u8],
    format: WaveFormat,
    sample_rate: Option<f64>,
) -> Result<Waveform> {
    let need_rate = || sample_rate.ok_or_else(|| Error::Format("a sample rate is required".into()));
    match format {
        WaveFormat::Csv => parse_csv(bytes, sample_rate),
        WaveFormat::RawF32Le => {
            if !bytes.len().is_multiple_of(4) {
                return Err(Error::Size(format!(
                    "{} bytes is not a whole number of f32 samples",
                    bytes.len()
                )));
            }
            let samples = bytes
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            Waveform::new(samples, need_rate()?)
        }
        WaveFormat::RawI16Le => {
            if !bytes.len().is_multiple_of(2) {
                return Err(Error::Size(format!(
                    "{} bytes is not a whole number of i16 samples",
                    bytes.len()
                )));
            }
            let samples = bytes
                .chunks_exact(2)
                .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])))
                .collect();
            Waveform::new(samples, need_rate()?)
        }
    }
}

fn parse_csv(bytes: &[u8], sample_rate: Option<f64>) -> Result<Waveform> {
    let text =
        std::str::from_utf8(bytes).map_err(|e| Error::Format(format!("CSV is not UTF-8: {e}")))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match fields {
            Ok(v) => rows.push(v),
            // A leading header line is tolerated.
            Err(_) if rows.is_empty() && lineno == 0 => continue,
            Err(e) => return Err(Error::Format(format!("line {}: {e}", lineno + 1))),
        }
    }
    let width = rows.first().map_or(1, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != width) {
        return Err(Error::Format(format!(
            "row {} has {} fields, expected {width}",
            bad + 1,
            rows[bad].len()
        )));
    }
    match width {
        1 => {
            let rate = sample_rate
                .ok_or_else(|| Error::Format("single-column CSV needs a sample rate".into()))?;
            Waveform::new(rows.into_iter().map(|r| r[0]).collect(), rate)
        }
        2 => {
            let times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
            let rate = rate_from_times(&times)?;
            let rate = match (rate, sample_rate) {
                (Some(derived), Some(given))
                    if ((derived - given) / given).abs() > SPACING_TOLERANCE =>
                {
                    return Err(Error::Format(format!(
                        "timestamps imply {derived} Hz but {given} Hz was given"
                    )))
                }
                (_, Some(given)) => given,
                (Some(derived), None) => derived,
                (None, None) => {
                    return Err(Error::Format(
                        "a single timestamp cannot fix the sample rate".into(),
                    ))
                }
            };
            Waveform::new(rows.into_iter().map(|r| r[1]).collect(), rate)
        }
        w => Err(Error::Format(format!(
            "CSV rows need 1 or 2 fields, found {w}"
        ))),
    }
}

/// Rate implied by uniformly spaced timestamps; `None` for fewer than two.
fn rate_from_times(times: &[f64]) -> Result<Option<f64>> {
    if times.len() < 2 {
        return Ok(None);
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::Format("timestamps must increase".into()));
    }
    for (i, pair) in times.windows(2).enumerate() {
        let step = pair[1] - pair[0];
        if ((step - dt) / dt).abs() > SPACING_TOLERANCE {
            return Err(Error::Format(format!(
                "non-uniform timestamps: step {step} at row {} against mean {dt}",
                i + 2
            )));
        }
    }
    Ok(Some(1.0 / dt))
}

pub fn encode_waveform(w: &Waveform, format: WaveFormat) -> Vec<u8> {
    match format {
        WaveFormat::Csv => {
            let mut out = String::with_capacity(w.len() * 12);
            for v in w.samples() {
                out.push_str(&v.to_string());
                out.push('\n');
            }
            out.into_bytes()
        }
        WaveFormat::RawF32Le => w
            .samples()
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect(),
        WaveFormat::RawI16Le => w
            .samples()
            .iter()
            .flat_map(|&v| {
                (v.round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16).to_le_bytes()
            })
            .collect(),
    }
}

pub fn write_waveform(path: &Path, w: &Waveform, format: WaveFormat) -> Result<()> {
    fs::write(path, encode_waveform(w, format))?;
    Ok(())
}

pub const HIT_FORMAT: &str = "aemix.hits.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitHeader {
    #[serde(default = "hit_format")]
    pub format: String,
    pub sample_rate: f64,
    pub record_length: usize,
    pub pretrigger: usize,
    pub channel: u32,
    /// One per record, seconds. When absent records are taken as
    /// back-to-back.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger_times: Option<Vec<f64>>,
}

fn hit_format() -> String {
    HIT_FORMAT.to_string()
}

impl HitHeader {
    fn validate(&self) -> Result<()> {
        if self.format != HIT_FORMAT {
            return Err(Error::Format(format!(
                "unknown hit container format {:?}",
                self.format
            )));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::Format(format!(
                "bad sample rate {}",
                self.sample_rate
            )));
        }
        if self.record_length == 0 || self.pretrigger >= self.record_length {
            return Err(Error::Format(format!(
                "pretrigger {} must be below record length {}",
                self.pretrigger, self.record_length
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRecord {
    pub trigger_time: f64,
    pub samples: Vec<f64>,
    pub pretrigger: usize,
    pub channel: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitSet {
    pub sample_rate: f64,
    pub records: Vec<HitRecord>,
}

pub fn read_hits(path: &Path) -> Result<HitSet> {
    parse_hits(&fs::read(path)?)
}

pub fn parse_hits(bytes: &[u8]) -> Result<HitSet> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("hit container has no header line".into()))?;
    let header: HitHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Format(format!("hit header: {e}")))?;
    header.validate()?;
    let payload = &bytes[newline + 1..];
    let record_bytes = 4 * header.record_length;
    if !payload.len().is_multiple_of(record_bytes) {
        return Err(Error::Size(format!(
            "payload of {} bytes is not a multiple of the {record_bytes}-byte record",
            payload.len()
        )));
    }
    let n = payload.len() / record_bytes;
    if let Some(t) = &header.trigger_times {
        if t.len() != n {
            return Err(Error::Size(format!(
                "{} trigger times for {n} records",
                t.len()
            )));
        }
    }
    let records = payload
        .chunks_exact(record_bytes)
        .enumerate()
        .map(|(i, rec)| HitRecord {
            trigger_time: header.trigger_times.as_ref().map_or(
                (i * header.record_length + header.pretrigger) as f64 / header.sample_rate,
                |t| t[i],
            ),
            samples: rec
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect(),
            pretrigger: header.pretrigger,
            channel: header.channel,
        })
        .collect();
    Ok(HitSet {
        sample_rate: header.sample_rate,
        records,
    })
}

/// Encodes records sharing one length, pretrigger and channel.
pub fn encode_hits(set: &HitSet) -> Result<Vec<u8>> {
    let first = set
        .records
        .first()
        .ok_or_else(|| Error::Format("cannot infer a header from zero records".into()))?;
    let header = HitHeader {
        format: hit_format(),
        sample_rate: set.sample_rate,
        record_length: first.samples.len(),
        pretrigger: first.pretrigger,
        channel: first.channel,
        trigger_times: Some(set.records.iter().map(|r| r.trigger_time).collect()),
    };
    header.validate()?;
    if let Some(bad) = set.records.iter().position(|r| {
        (r.samples.len(), r.pretrigger, r.channel)
            != (header.record_length, header.pretrigger, header.channel)
    }) {
        return Err(Error::Format(format!(
            "record {bad} does not match the first record's layout"
        )));
    }
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.reserve(4 * header.record_length * set.records.len());
    for r in &set.records {
        for &v in &r.samples {
            out.extend((v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_hits(path: &Path, set: &HitSet) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_hits(set)?)?;
    Ok(())
}
