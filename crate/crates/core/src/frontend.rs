//! Analog front end: optional low-pass stages around the isolation stage,
//! the isolation clip, the threshold comparator and the pulse adder.
//!
//! The comparator output modelled here is the window during which
//! `|v(t)| < V_h` around each zero crossing. Its width is `2·t_h` for an
//! ideal sine, and measuring threshold-to-threshold rather than
//! zero-to-threshold keeps the estimate insensitive to distortion close to
//! the zero crossing.

pub mod filter;

use serde::{Deserialize, Serialize};

use crate::label::{CrossingDirection, Label};
use crate::siggen::SampleStream;

pub use filter::{Biquad, LowPassSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrontEndError {
    #[error("invalid front-end configuration: {0}")]
    InvalidConfig(String),
    #[error("filter cutoff {cutoff_hz} Hz is at or above Nyquist ({nyquist_hz} Hz)")]
    CutoffAboveNyquist { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("{0} is not configured")]
    NotConfigured(&'static str),
}

/// How sub-sample edge times are refined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeInterpolation {
    /// Straight line between the two samples bracketing the threshold.
    Linear,
    /// Cubic through the bracketing samples and one neighbour on each side.
    #[default]
    Cubic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontEndConfig {
    /// Comparator threshold, referred to the input.
    pub v_h_volts: f64,
    /// Low-pass ahead of the isolation stage.
    #[serde(default)]
    pub prefilter: Option<LowPassSpec>,
    /// Saturation level of the isolation stage's linear region.
    #[serde(default)]
    pub linear_range_volts: Option<f64>,
    /// Low-pass between the isolation stage and the comparator.
    #[serde(default)]
    pub comparator_filter: Option<LowPassSpec>,
    #[serde(default)]
    pub hysteresis_volts: f64,
    #[serde(default)]
    pub edge_interpolation: EdgeInterpolation,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        Self {
            v_h_volts: 15.0,
            prefilter: None,
            linear_range_volts: None,
            comparator_filter: None,
            hysteresis_volts: 0.0,
            edge_interpolation: EdgeInterpolation::default(),
        }
    }
}

impl FrontEndConfig {
    pub fn validate(&self) -> Result<(), FrontEndError> {
        if !(self.v_h_volts > 0.0 && self.v_h_volts.is_finite()) {
            return Err(FrontEndError::InvalidConfig("v_h_volts must be > 0".into()));
        }
        if let Some(range) = self.linear_range_volts {
            if !(range > self.v_h_volts) {
                return Err(FrontEndError::InvalidConfig(
                    "linear_range_volts must exceed v_h_volts".into(),
                ));
            }
        }
        if !(self.hysteresis_volts >= 0.0 && self.hysteresis_volts < 2.0 * self.v_h_volts) {
            return Err(FrontEndError::InvalidConfig(
                "hysteresis_volts must lie in [0, 2·v_h_volts)".into(),
            ));
        }
        Ok(())
    }

    /// Checks both filter cutoffs lie above `fundamental_hz`.
    pub fn validate_for(&self, fundamental_hz: f64) -> Result<(), FrontEndError> {
        self.validate()?;
        for f in self.prefilter.iter().chain(self.comparator_filter.iter()) {
            if !(f.cutoff_hz > fundamental_hz) {
                return Err(FrontEndError::InvalidConfig(format!(
                    "filter cutoff {} Hz must exceed the fundamental {fundamental_hz} Hz",
                    f.cutoff_hz
                )));
            }
        }
        Ok(())
    }

    /// Magnitude of the combined linear filtering at `freq_hz`.
    pub fn passband_gain(&self, freq_hz: f64, sample_rate_hz: f64) -> Result<f64, FrontEndError> {
        let mut gain = 1.0;
        for f in self.prefilter.iter().chain(self.comparator_filter.iter()) {
            gain *= f.design(sample_rate_hz)?.magnitude(freq_hz, sample_rate_hz);
        }
        Ok(gain)
    }

    pub fn has_filters(&self) -> bool {
        self.prefilter.is_some() || self.comparator_filter.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub rise_s: f64,
    pub fall_s: f64,
    pub direction: CrossingDirection,
    /// Assembled from more than one raw pulse.
    #[serde(default)]
    pub merged: bool,
}

impl Pulse {
    pub fn width(&self) -> f64 {
        self.fall_s - self.rise_s
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.rise_s + self.fall_s)
    }

    pub fn overlaps(&self, other: &Pulse) -> bool {
        self.rise_s <= other.fall_s && other.rise_s <= self.fall_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseTrain {
    pub channel_label: Label,
    pub pulses: Vec<Pulse>,
}

impl PulseTrain {
    pub fn new(channel_label: Label, pulses: Vec<Pulse>) -> Self {
        Self {
            channel_label,
            pulses,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.pulses.iter().all(|p| p.rise_s < p.fall_s)
            && self.pulses.windows(2).all(|w| w[0].fall_s <= w[1].rise_s)
    }
}

/// Output of the pulse adder.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedTrain {
    pub train: PulseTrain,
    /// Number of combined pulses that absorbed more than one input pulse.
    pub merged_pulses: usize,
}

impl CombinedTrain {
    pub fn has_merges(&self) -> bool {
        self.merged_pulses > 0
    }
}

fn apply_lowpass(stream: &SampleStream, spec: &LowPassSpec) -> Result<SampleStream, FrontEndError> {
    let biquad = spec.design(stream.sample_rate_hz)?;
    Ok(stream.map_channels(|x| biquad.filter(x)))
}

/// Applies the configured pre-filter to every channel. Group delay is left
/// uncompensated.
pub fn prefilter(
    stream: &SampleStream,
    config: &FrontEndConfig,
) -> Result<SampleStream, FrontEndError> {
    let spec = config
        .prefilter
        .as_ref()
        .ok_or(FrontEndError::NotConfigured("prefilter"))?;
    apply_lowpass(stream, spec)
}

/// Applies the low-pass stage that sits right before the comparator.
pub fn comparator_lowpass(
    stream: &SampleStream,
    config: &FrontEndConfig,
) -> Result<SampleStream, FrontEndError> {
    let spec = config
        .comparator_filter
        .as_ref()
        .ok_or(FrontEndError::NotConfigured("comparator_filter"))?;
    apply_lowpass(stream, spec)
}

/// Clamps samples to `±linear_range_volts`; identity when no range is set.
pub fn clip_linear_range(stream: &SampleStream, config: &FrontEndConfig) -> SampleStream {
    match config.linear_range_volts {
        Some(range) => stream.map_channels(|x| x.iter().map(|v| v.clamp(-range, range)).collect()),
        None => stream.clone(),
    }
}

/// Full analog conditioning: pre-filter, clip, comparator low-pass, each
/// only when configured.
pub fn condition(
    stream: &SampleStream,
    config: &FrontEndConfig,
) -> Result<SampleStream, FrontEndError> {
    config.validate()?;
    let mut s = match config.prefilter {
        Some(_) => prefilter(stream, config)?,
        None => stream.clone(),
    };
    s = clip_linear_range(&s, config);
    if config.comparator_filter.is_some() {
        s = comparator_lowpass(&s, config)?;
    }
    Ok(s)
}

/// Fractional position in `[0, 1]` between `y[i]` and `y[i + 1]` where the
/// signal equals `level`. The caller guarantees the two samples bracket it.
fn edge_fraction(y: &[f64], i: usize, level: f64, mode: EdgeInterpolation) -> f64 {
    let (y0, y1) = (y[i], y[i + 1]);
    if y0 == level {
        return 0.0;
    }
    if y1 == level {
        return 1.0;
    }
    let linear = ((level - y0) / (y1 - y0)).clamp(0.0, 1.0);
    if mode == EdgeInterpolation::Linear || i == 0 || i + 2 >= y.len() {
        return linear;
    }

    // Lagrange cubic through x = -1, 0, 1, 2.
    let (ym, y2) = (y[i - 1], y[i + 2]);
    let c0 = y0;
    let c1 = -ym / 3.0 - y0 / 2.0 + y1 - y2 / 6.0;
    let c2 = ym / 2.0 - y0 + y1 / 2.0;
    let c3 = -ym / 6.0 + y0 / 2.0 - y1 / 2.0 + y2 / 6.0;
    let g = |u: f64| ((c3 * u + c2) * u + c1) * u + c0 - level;
    let dg = |u: f64| (3.0 * c3 * u + 2.0 * c2) * u + c1;

    // Safeguarded Newton on the bracket [0, 1].
    let (mut lo, mut hi) = (0.0, 1.0);
    let lo_negative = g(lo) < 0.0;
    let mut u = linear;
    for _ in 0..60 {
        let gu = g(u);
        if gu == 0.0 {
            return u;
        }
        if (gu < 0.0) == lo_negative {
            lo = u;
        } else {
            hi = u;
        }
        let d = dg(u);
        let mut next = if d != 0.0 { u - gu / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 1e-15 {
            return next;
        }
        u = next;
    }
    u
}

fn channel_pulses(samples: &[f64], start: f64, fs: f64, config: &FrontEndConfig) -> Vec<Pulse> {
    let enter = config.v_h_volts - 0.5 * config.hysteresis_volts;
    let exit = config.v_h_volts + 0.5 * config.hysteresis_volts;
    let time = |i: usize, u: f64| start + (i as f64 + u) / fs;

    let mut pulses = Vec::new();
    let Some(&first) = samples.first() else {
        return pulses;
    };
    let mut inside = first.abs() < enter;
    // A pulse already in progress at the first sample has no observable rise.
    let mut rise: Option<(f64, CrossingDirection)> = None;

    for i in 0..samples.len().saturating_sub(1) {
        let next = samples[i + 1];
        if !inside && next.abs() < enter {
            let prev = samples[i];
            let level = enter.copysign(prev);
            let u = edge_fraction(samples, i, level, config.edge_interpolation);
            let direction = if prev > 0.0 {
                CrossingDirection::Down
            } else {
                CrossingDirection::Up
            };
            rise = Some((time(i, u), direction));
            inside = true;
        } else if inside && next.abs() >= exit {
            let level = exit.copysign(next);
            let u = edge_fraction(samples, i, level, config.edge_interpolation);
            let fall = time(i, u);
            if let Some((rise_s, direction)) = rise.take() {
                if fall > rise_s {
                    pulses.push(Pulse {
                        rise_s,
                        fall_s: fall,
                        direction,
                        merged: false,
                    });
                }
            }
            inside = false;
        }
    }
    pulses
}

/// One pulse train per channel. Only pulses whose both edges fall inside
/// the stream are emitted.
pub fn threshold_pulses(stream: &SampleStream, config: &FrontEndConfig) -> Vec<PulseTrain> {
    stream
        .channels
        .iter()
        .map(|c| {
            PulseTrain::new(
                c.label,
                channel_pulses(
                    &c.samples,
                    stream.start_time_s,
                    stream.sample_rate_hz,
                    config,
                ),
            )
        })
        .collect()
}

/// Logical OR of several pulse trains. Overlapping or touching pulses merge
/// into one and are counted in [`CombinedTrain::merged_pulses`].
pub fn combine(trains: &[PulseTrain]) -> CombinedTrain {
    let mut all: Vec<Pulse> = trains
        .iter()
        .flat_map(|t| t.pulses.iter().copied())
        .collect();
    all.sort_by(|a, b| a.rise_s.total_cmp(&b.rise_s));

    let mut out: Vec<Pulse> = Vec::with_capacity(all.len());
    let mut merged_pulses = 0;
    for p in all {
        match out.last_mut() {
            Some(last) if p.rise_s <= last.fall_s => {
                if !last.merged {
                    merged_pulses += 1;
                }
                last.fall_s = last.fall_s.max(p.fall_s);
                last.merged = true;
            }
            _ => out.push(Pulse { merged: false, ..p }),
        }
    }
    CombinedTrain {
        train: PulseTrain::new(Label::Combined, out),
        merged_pulses,
    }
}
