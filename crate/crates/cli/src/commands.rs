use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use aemix::config::PipelineConfig;
use aemix::detector::{flag_events, lowest_count_decile, score, train_background};
use aemix::dppmm::{fit, Chain, MixtureState};
use aemix::io::{read_hits, read_waveform, write_hits, write_waveform};
use aemix::monitor::{decimate, write_alarms, write_tracks_csv, Hit, Monitor};
use aemix::segmentation::{
    average_probabilities, features_of, segment_events, EventRecord, WaveformFeatures,
};
use aemix::synth::{self, synthesize, Annotation, SynthSpec};
use aemix::windowing::{extract_counts, percentile, resolve_threshold, ThresholdKind, Waveform};
use aemix::{HitSet, ModelSnapshot};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::args::{
    ClusterArgs, DetectArgs, FeaturesArgs, InputArgs, MonitorArgs, Preset, SynthArgs,
};

/// Sidecar written next to a synthetic waveform.
#[derive(Debug, Serialize, Deserialize)]
pub struct Truth {
    pub sample_rate: f64,
    pub annotations: Vec<Annotation>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = create(path)?;
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_truth(path: &Path) -> Result<Truth> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_input(input: &InputArgs) -> Result<(Waveform, Option<Truth>)> {
    let truth = input.annotations.as_deref().map(read_truth).transpose()?;
    let rate = input.sample_rate.or(truth.as_ref().map(|t| t.sample_rate));
    let w = read_waveform(&input.input, input.format.into(), rate)
        .with_context(|| format!("reading {}", input.input.display()))?;
    Ok((w, truth))
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let spec = match (args.preset, &args.spec) {
        (Some(Preset::DamageStream), _) => return synth_hits(args),
        (Some(Preset::LeadBreak), _) => synth::lead_break(),
        (Some(Preset::JournalBearing), _) => synth::journal_bearing(args.seed),
        (Some(Preset::OffsetBursts), _) => synth::offset_bursts(),
        (None, Some(path)) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<SynthSpec>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        (None, None) => bail!("give either --preset or --spec"),
    };
    let (w, annotations) = synthesize(&spec, args.seed)?;
    write_waveform(&args.out, &w, args.format.into())?;
    if let Some(path) = &args.truth {
        write_json(
            path,
            &Truth {
                sample_rate: w.sample_rate(),
                annotations,
            },
        )?;
    }
    println!("wrote {} samples at {} Hz", w.len(), w.sample_rate());
    Ok(())
}

#[derive(Serialize)]
struct HitLabel {
    hit: u64,
    family: u32,
}

fn synth_hits(args: &SynthArgs) -> Result<()> {
    let mut spec = synth::damage_stream();
    if let Some(n) = args.hits {
        spec.hits = n;
    }
    let (set, labels) = spec.generate(args.seed, args.keep_ratio)?;
    if set.records.is_empty() {
        bail!("no hits to write");
    }
    write_hits(&args.out, &set)?;
    if let Some(path) = &args.truth {
        let rows: Vec<HitLabel> = labels
            .into_iter()
            .map(|(hit, family)| HitLabel { hit, family })
            .collect();
        write_json_lines(path, &rows)?;
    }
    println!("wrote {} hits", set.records.len());
    Ok(())
}

/// Window indices used to train the background: the first clean windows
/// when annotations are known, else the quietest tenth.
fn training_indices(
    wc: &aemix::WindowedCounts,
    truth: Option<&Truth>,
    cfg: &PipelineConfig,
) -> Vec<usize> {
    match truth {
        Some(t) => (0..wc.len())
            .filter(|&i| {
                let s = wc.entries[i].start;
                !t.annotations
                    .iter()
                    .any(|a| a.overlaps(s, s + wc.spec.length))
            })
            .take(cfg.training_windows)
            .collect(),
        None => lowest_count_decile(wc),
    }
}

#[derive(Serialize)]
struct Interval {
    start: usize,
    end: usize,
    start_time: f64,
    end_time: f64,
}

#[derive(Serialize)]
struct FlagReport {
    count_threshold: f64,
    window_length: usize,
    step: usize,
    training_windows: Vec<usize>,
    flag_threshold: f64,
    intervals: Vec<Interval>,
}

pub fn detect(args: &DetectArgs) -> Result<()> {
    let cfg = args.tuning.resolve()?;
    let (w, truth) = load_input(&args.input)?;
    let wc = extract_counts(&w, &cfg.threshold, &cfg.window)?;
    let train = training_indices(&wc, truth.as_ref(), &cfg);
    let noise: Vec<u64> = train.iter().map(|&i| wc.entries[i].count).collect();
    let model = train_background(cfg.prior, &noise)?;
    let mut trace = score(&model, &wc);
    if let Some(t) = args.flag_threshold {
        trace = trace.with_threshold(t);
    }

    let mut out = create(&args.trace)?;
    writeln!(out, "start,count,nll,flagged")?;
    for (i, e) in trace.entries.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{}",
            e.start,
            e.count,
            e.nll,
            u8::from(trace.is_flagged(i))
        )?;
    }
    out.flush()?;

    let fs = w.sample_rate();
    let intervals: Vec<Interval> = flag_events(&trace)
        .into_iter()
        .map(|(start, end)| Interval {
            start,
            end,
            start_time: start as f64 / fs,
            end_time: end as f64 / fs,
        })
        .collect();
    println!(
        "{} windows, {} flagged intervals",
        trace.entries.len(),
        intervals.len()
    );
    write_json(
        &args.flags,
        &FlagReport {
            count_threshold: wc.threshold,
            window_length: trace.window_length,
            step: trace.step,
            training_windows: train,
            flag_threshold: trace.flag_threshold,
            intervals,
        },
    )
}

pub fn cluster(args: &ClusterArgs) -> Result<()> {
    let cfg = args.tuning.resolve()?;
    let (w, _) = load_input(&args.input)?;
    let wc = extract_counts(&w, &cfg.threshold, &cfg.window)?;
    let result = fit(&wc.counts(), cfg.hyperparams()?, &cfg.fit_config())?;
    let field = average_probabilities(&result.mean_probs, &cfg.window, w.len())?;
    let records = match result.state().lowest_rate_cluster() {
        Some(noise) => segment_events(&field, noise, &cfg.segmentation)
            .iter()
            .map(|span| EventRecord::new(&w, span, wc.threshold))
            .collect::<aemix::Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    write_json_lines(&args.events, &records)?;
    write_json(&args.model, &result.chain.snapshot())?;
    println!(
        "{} windows, {} clusters, {} events",
        wc.len(),
        result.state().num_clusters(),
        records.len()
    );
    Ok(())
}

/// Per-hit counting threshold. A percentile policy is resolved over the
/// pooled samples of the retained hits.
fn hit_threshold(set: &HitSet, cfg: &PipelineConfig) -> Result<f64> {
    Ok(match cfg.threshold.kind {
        ThresholdKind::Fixed => cfg.threshold.value,
        ThresholdKind::Percentile => {
            let pooled: Vec<f64> = set
                .records
                .iter()
                .flat_map(|r| r.samples.iter())
                .map(|&v| if cfg.threshold.rectify { v.abs() } else { v })
                .collect();
            percentile(&pooled, cfg.threshold.value)?
        }
    })
}

pub fn monitor(args: &MonitorArgs) -> Result<()> {
    let cfg = args.tuning.resolve()?;
    let set = read_hits(&args.hits).with_context(|| format!("reading {}", args.hits.display()))?;
    let set = HitSet {
        sample_rate: set.sample_rate,
        records: decimate(set.records, cfg.keep_ratio)?,
    };
    let threshold = hit_threshold(&set, &cfg)?;
    let chain = Chain::new(MixtureState::empty(cfg.hyperparams()?), cfg.seed);
    let mut mon = Monitor::new(chain, cfg.monitor)?;
    let mut alarms = Vec::new();
    for r in &set.records {
        let f = features_of(
            &r.samples,
            set.sample_rate,
            threshold,
            cfg.threshold.rectify,
        );
        alarms.extend(
            mon.observe(Hit {
                count: f.count,
                energy: f.energy,
            })
            .alarms,
        );
    }
    let mut out = create(&args.alarms)?;
    write_alarms(&mut out, &alarms)?;
    out.flush()?;
    let mut out = create(&args.tracks)?;
    write_tracks_csv(&mut out, mon.tracks())?;
    out.flush()?;
    if let Some(path) = &args.model {
        write_json::<ModelSnapshot>(path, &mon.chain().snapshot())?;
    }
    println!(
        "{} hits retained, {} clusters, {} alarms",
        set.records.len(),
        mon.state().num_clusters(),
        alarms.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct FeatureRow {
    start_index: usize,
    end_index: usize,
    start_time: f64,
    end_time: f64,
    family: u32,
    features: WaveformFeatures,
}

pub fn features(args: &FeaturesArgs) -> Result<()> {
    let cfg = args.tuning.resolve()?;
    let (w, truth) = load_input(&args.input)?;
    let Some(truth) = truth else {
        bail!("features needs --annotations");
    };
    let threshold = resolve_threshold(&w, &cfg.threshold)?;
    let fs = w.sample_rate();
    let rows = truth
        .annotations
        .iter()
        .map(|a| {
            if a.start >= a.end || a.end > w.len() {
                bail!(
                    "annotation [{}, {}) lies outside the {}-sample waveform",
                    a.start,
                    a.end,
                    w.len()
                );
            }
            Ok(FeatureRow {
                start_index: a.start,
                end_index: a.end,
                start_time: a.start as f64 / fs,
                end_time: a.end as f64 / fs,
                family: a.family,
                features: features_of(
                    &w.samples()[a.start..a.end],
                    fs,
                    threshold,
                    cfg.threshold.rectify,
                ),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json_lines(&args.out, &rows)?;
    println!("{} events", rows.len());
    Ok(())
}
