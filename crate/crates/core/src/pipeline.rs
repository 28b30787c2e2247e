//! End-to-end measurement chain: conditioning, comparator, capture and
//! estimation, with the analyzer attached on demand.

use serde::{Deserialize, Serialize};

use crate::analyzer::{AnalyzerConfig, Monitor};
use crate::capture::{self, CaptureConfig, CaptureError, HalfCycleMeasurement};
use crate::estimator::{self, EstimateError, EstimatorConfig, PeakEstimate};
use crate::frontend::{self, CombinedTrain, FrontEndConfig, FrontEndError, PulseTrain};
use crate::label::Label;
use crate::siggen::{self, SampleStream, SpecError, WaveformSpec};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    FrontEnd(#[from] FrontEndError),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("estimator V_h ({estimator} V) differs from front-end V_h ({frontend} V)")]
    ThresholdMismatch { frontend: f64, estimator: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub sample_rate_hz: f64,
    pub frontend: FrontEndConfig,
    pub capture: CaptureConfig,
    pub estimator: EstimatorConfig,
    /// Half-cycles centered before `start + settle_s` are discarded.
    pub settle_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 1e6,
            frontend: FrontEndConfig::default(),
            capture: CaptureConfig::default(),
            estimator: EstimatorConfig::default(),
            settle_s: 0.0,
        }
    }
}

impl PipelineConfig {
    /// Infinite timer resolution, exact inversion.
    pub fn ideal() -> Self {
        Self {
            capture: CaptureConfig::ideal(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(SpecError::new("sample_rate_hz", "must be > 0").into());
        }
        self.frontend.validate()?;
        self.capture.validate()?;
        self.estimator.validate()?;
        if self.frontend.v_h_volts != self.estimator.v_h_volts {
            return Err(PipelineError::ThresholdMismatch {
                frontend: self.frontend.v_h_volts,
                estimator: self.estimator.v_h_volts,
            });
        }
        Ok(())
    }
}

/// Non-fatal problem found while processing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub label: Label,
    pub time_s: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Per-channel trains after quantization and deglitching.
    pub trains: Vec<PulseTrain>,
    pub combined: CombinedTrain,
    pub measurements: Vec<HalfCycleMeasurement>,
    pub estimates: Vec<PeakEstimate>,
    pub diagnostics: Vec<Diagnostic>,
    /// The adder merged pulses, so per-phase trains were used instead.
    pub merge_warning: bool,
}

impl PipelineOutput {
    pub fn labels(&self) -> Vec<Label> {
        self.trains.iter().map(|t| t.channel_label).collect()
    }

    /// Feeds the estimates through a streaming analyzer.
    pub fn analyze(&self, config: AnalyzerConfig) -> Monitor {
        let mut monitor = Monitor::new(&self.labels(), config);
        if self.merge_warning {
            monitor.note_merge();
        }
        let mut ordered = self.estimates.clone();
        ordered.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
        for e in &ordered {
            monitor.push(e);
        }
        monitor
    }
}

pub fn run(
    spec: &WaveformSpec,
    config: &PipelineConfig,
    duration_s: f64,
) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    config.frontend.validate_for(spec.max_fundamental_hz())?;
    let stream = siggen::synth(spec, config.sample_rate_hz, duration_s)?;
    run_stream(&stream, config)
}

fn per_channel(
    trains: &[PulseTrain],
    diagnostics: &mut Vec<Diagnostic>,
) -> Vec<HalfCycleMeasurement> {
    let mut out = Vec::new();
    for t in trains {
        match capture::measure(t) {
            Ok(ms) => out.extend(ms),
            Err(e) => diagnostics.push(Diagnostic {
                label: t.channel_label,
                time_s: None,
                message: e.to_string(),
            }),
        }
    }
    out.sort_by(|a, b| a.center_time_s.total_cmp(&b.center_time_s));
    out
}

/// Runs the chain on an existing sample stream. The stream's sample rate
/// overrides `config.sample_rate_hz`.
pub fn run_stream(
    stream: &SampleStream,
    config: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    let config = PipelineConfig {
        sample_rate_hz: stream.sample_rate_hz,
        ..config.clone()
    };
    config.validate()?;

    let conditioned = frontend::condition(stream, &config.frontend)?;
    let trains: Vec<PulseTrain> = frontend::threshold_pulses(&conditioned, &config.frontend)
        .iter()
        .map(|t| capture::deglitch(&capture::quantize(t, &config.capture), &config.capture))
        .collect();
    let combined = frontend::combine(&trains);

    let mut diagnostics = Vec::new();
    let merge_warning = trains.len() > 1 && combined.has_merges();
    let measurements = if trains.len() > 1 && !merge_warning {
        match capture::assign_phase(&combined.train, &trains) {
            Ok(ms) => ms,
            Err(_) => per_channel(&trains, &mut diagnostics),
        }
    } else {
        per_channel(&trains, &mut diagnostics)
    };

    let (estimates, estimate_diagnostics) = estimate(&measurements, &config, stream.start_time_s)?;
    diagnostics.extend(estimate_diagnostics);

    Ok(PipelineOutput {
        trains,
        combined,
        measurements,
        estimates,
        diagnostics,
        merge_warning,
    })
}

/// Inverts every measurement centered after the settle time, dividing out
/// the passband gain of any configured filters. Undervoltage and invalid
/// measurements become diagnostics.
pub fn estimate(
    measurements: &[HalfCycleMeasurement],
    config: &PipelineConfig,
    start_time_s: f64,
) -> Result<(Vec<PeakEstimate>, Vec<Diagnostic>), PipelineError> {
    let settle_until = start_time_s + config.settle_s;
    let mut estimates = Vec::with_capacity(measurements.len());
    let mut diagnostics = Vec::new();
    for m in measurements
        .iter()
        .filter(|m| m.center_time_s >= settle_until)
    {
        match estimator::peak(m, &config.estimator) {
            Ok(mut e) => {
                if config.frontend.has_filters() {
                    let g = config
                        .frontend
                        .passband_gain(e.frequency_hz, config.sample_rate_hz)?;
                    e.v_p_volts /= g;
                    e.v_n_volts /= g;
                }
                estimates.push(e);
            }
            Err(err @ EstimateError::Undervoltage { .. })
            | Err(err @ EstimateError::InvalidMeasurement { .. }) => diagnostics.push(Diagnostic {
                label: m.channel_label,
                time_s: Some(m.center_time_s),
                message: err.to_string(),
            }),
            Err(err) => return Err(err.into()),
        }
    }
    Ok((estimates, diagnostics))
}
