//! Probabilistic detection and clustering of acoustic-emission bursts.
//!
//! Threshold-crossing counts over sliding windows are modelled as Poisson
//! with a Gamma prior. A single-component background model flags anomalous
//! windows; a Dirichlet-process mixture of Poissons, fitted by collapsed
//! Gibbs sampling, groups windows or hits into noise and event families.
//! The [`monitor`] module runs the mixture online over hit streams.

pub mod config;
pub mod detector;
pub mod distributions;
pub mod dppmm;
pub mod error;
pub mod io;
pub mod monitor;
pub mod segmentation;
pub mod synth;
pub mod windowing;

pub use config::PipelineConfig;
pub use detector::{flag_events, score, train_background, BackgroundModel, NllEntry, NllTrace};
pub use distributions::{
    nb_pmf, nll, poisson_pmf, predictive_update, Count, GammaParams, NbParams,
};
pub use dppmm::{
    fit, Chain, ClusterId, ClusterStats, Fit, FitConfig, Hyperparams, MixtureState, ModelSnapshot,
    Slot,
};
pub use error::{Error, Result};
pub use io::{HitRecord, HitSet, WaveFormat};
pub use monitor::{AlarmEvent, AlarmKind, ClusterTrack, GateMode, Hit, Monitor, MonitorConfig};
pub use segmentation::{EventRecord, EventSpan, SampleProbabilityField, WaveformFeatures};
pub use synth::{Annotation, Burst, SynthSpec};
pub use windowing::{ThresholdPolicy, Waveform, WindowSpec, WindowedCounts};
