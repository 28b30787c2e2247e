//! Test-signal synthesis.
//!
//! A [`WaveformSpec`] declares the fundamental, per-phase amplitudes and
//! offsets, a harmonic set shared by every phase, and a time-ordered list of
//! disturbance events. [`synth`] evaluates it into a uniformly sampled
//! [`SampleStream`].
//!
//! Events take effect at the first sample whose timestamp is at or after the
//! event time. Amplitude changes are instantaneous. The fundamental phase is
//! continuous across frequency steps.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::label::Label;

/// Minimum ratio between the sample rate and the highest declared frequency.
pub const MIN_OVERSAMPLING: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid `{field}`: {reason}")]
pub struct SpecError {
    pub field: String,
    pub reason: String,
}

impl SpecError {
    pub(crate) fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub label: Label,
    /// Peak amplitude including any unbalance error.
    pub amplitude_volts: f64,
    /// Nominal offset (0, -120, +120) plus any deviation.
    #[serde(default)]
    pub phase_offset_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSpec {
    pub order: u32,
    /// Fraction of each phase's fundamental amplitude.
    pub relative_amplitude: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum EventKind {
    /// Set the amplitude of one phase, or of every phase when `label` is absent.
    AmplitudeStep {
        #[serde(default)]
        label: Option<Label>,
        amplitude_volts: f64,
    },
    /// Scale amplitudes by `1 - depth_fraction` for `duration_s`.
    Sag {
        depth_fraction: f64,
        duration_s: f64,
        #[serde(default)]
        label: Option<Label>,
    },
    /// Output channel `i` carries the source phase `permutation[i]` from now on.
    SequenceSwap {
        permutation: Vec<Label>,
    },
    /// The phase drops to zero volts.
    PhaseCut {
        label: Label,
    },
    FrequencyStep {
        new_hz: f64,
    },
    /// Shift one phase's offset by `delta_deg`.
    PhaseStep {
        label: Label,
        delta_deg: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub at_seconds: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformSpec {
    pub fundamental_hz: f64,
    pub phases: Vec<PhaseSpec>,
    #[serde(default)]
    pub harmonics: Vec<HarmonicSpec>,
    #[serde(default)]
    pub events: Vec<Event>,
}

impl WaveformSpec {
    /// One phase labelled `A` at zero offset.
    pub fn single_phase(fundamental_hz: f64, amplitude_volts: f64) -> Self {
        Self {
            fundamental_hz,
            phases: vec![PhaseSpec {
                label: Label::A,
                amplitude_volts,
                phase_offset_deg: 0.0,
            }],
            harmonics: Vec::new(),
            events: Vec::new(),
        }
    }

    /// Three phases A, B, C at 0°, -120°, +120° with the given amplitudes.
    pub fn three_phase(fundamental_hz: f64, amplitudes: [f64; 3]) -> Self {
        let labels = [Label::A, Label::B, Label::C];
        let offsets = [0.0, -120.0, 120.0];
        Self {
            fundamental_hz,
            phases: (0..3)
                .map(|i| PhaseSpec {
                    label: labels[i],
                    amplitude_volts: amplitudes[i],
                    phase_offset_deg: offsets[i],
                })
                .collect(),
            harmonics: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    fn phase_index(&self, label: Label) -> Option<usize> {
        self.phases.iter().position(|p| p.label == label)
    }

    /// Highest fundamental frequency reached over the whole timeline.
    pub fn max_fundamental_hz(&self) -> f64 {
        self.events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::FrequencyStep { new_hz } => Some(new_hz),
                _ => None,
            })
            .fold(self.fundamental_hz, f64::max)
    }

    pub fn max_harmonic_order(&self) -> u32 {
        self.harmonics.iter().map(|h| h.order).max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if !(self.fundamental_hz > 0.0 && self.fundamental_hz.is_finite()) {
            return Err(SpecError::new(
                "fundamental_hz",
                "must be a positive frequency",
            ));
        }
        if self.phases.is_empty() {
            return Err(SpecError::new("phases", "at least one phase is required"));
        }
        for (i, p) in self.phases.iter().enumerate() {
            if !(p.amplitude_volts >= 0.0 && p.amplitude_volts.is_finite()) {
                return Err(SpecError::new(
                    format!("phases[{i}].amplitude_volts"),
                    "must be a finite value >= 0",
                ));
            }
            if !p.phase_offset_deg.is_finite() {
                return Err(SpecError::new(
                    format!("phases[{i}].phase_offset_deg"),
                    "must be finite",
                ));
            }
            if self.phases[..i].iter().any(|q| q.label == p.label) {
                return Err(SpecError::new(
                    format!("phases[{i}].label"),
                    "duplicate label",
                ));
            }
        }
        for (i, h) in self.harmonics.iter().enumerate() {
            if h.order < 2 {
                return Err(SpecError::new(
                    format!("harmonics[{i}].order"),
                    "must be >= 2",
                ));
            }
            if self.harmonics[..i].iter().any(|g| g.order == h.order) {
                return Err(SpecError::new(
                    format!("harmonics[{i}].order"),
                    "duplicate order",
                ));
            }
            if !(h.relative_amplitude >= 0.0 && h.relative_amplitude.is_finite()) {
                return Err(SpecError::new(
                    format!("harmonics[{i}].relative_amplitude"),
                    "must be a finite value >= 0",
                ));
            }
        }
        let mut last = f64::NEG_INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            if !e.at_seconds.is_finite() || e.at_seconds <= last {
                return Err(SpecError::new(
                    format!("events[{i}].at_seconds"),
                    "events must be strictly increasing in time",
                ));
            }
            last = e.at_seconds;
            self.validate_event(i, &e.kind)?;
        }
        Ok(())
    }

    fn validate_event(&self, i: usize, kind: &EventKind) -> Result<(), SpecError> {
        let known = |label: &Label, field: &str| {
            if self.phase_index(*label).is_some() {
                Ok(())
            } else {
                Err(SpecError::new(
                    format!("events[{i}].kind.{field}"),
                    format!("no phase labelled {label}"),
                ))
            }
        };
        match kind {
            EventKind::AmplitudeStep {
                label,
                amplitude_volts,
            } => {
                if let Some(l) = label {
                    known(l, "label")?;
                }
                if !(*amplitude_volts >= 0.0 && amplitude_volts.is_finite()) {
                    return Err(SpecError::new(
                        format!("events[{i}].kind.amplitude_volts"),
                        "must be a finite value >= 0",
                    ));
                }
            }
            EventKind::Sag {
                depth_fraction,
                duration_s,
                label,
            } => {
                if let Some(l) = label {
                    known(l, "label")?;
                }
                if !(0.0..=1.0).contains(depth_fraction) {
                    return Err(SpecError::new(
                        format!("events[{i}].kind.depth_fraction"),
                        "must lie in [0, 1]",
                    ));
                }
                if !(*duration_s > 0.0) {
                    return Err(SpecError::new(
                        format!("events[{i}].kind.duration_s"),
                        "must be > 0",
                    ));
                }
            }
            EventKind::SequenceSwap { permutation } => {
                let mut seen = vec![false; self.phases.len()];
                let valid = permutation.len() == self.phases.len()
                    && permutation.iter().all(|l| match self.phase_index(*l) {
                        Some(k) if !seen[k] => {
                            seen[k] = true;
                            true
                        }
                        _ => false,
                    });
                if !valid {
                    return Err(SpecError::new(
                        format!("events[{i}].kind.permutation"),
                        "must be a bijection of the phase labels",
                    ));
                }
            }
            EventKind::PhaseCut { label } => known(label, "label")?,
            EventKind::FrequencyStep { new_hz } => {
                if !(*new_hz > 0.0 && new_hz.is_finite()) {
                    return Err(SpecError::new(
                        format!("events[{i}].kind.new_hz"),
                        "must be > 0",
                    ));
                }
            }
            EventKind::PhaseStep { label, delta_deg } => {
                known(label, "label")?;
                if !delta_deg.is_finite() {
                    return Err(SpecError::new(
                        format!("events[{i}].kind.delta_deg"),
                        "must be finite",
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub label: Label,
    pub samples: Vec<f64>,
}

/// Uniformly sampled multi-channel waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStream {
    pub sample_rate_hz: f64,
    pub start_time_s: f64,
    pub channels: Vec<Channel>,
}

impl SampleStream {
    pub fn new(
        sample_rate_hz: f64,
        start_time_s: f64,
        channels: Vec<Channel>,
    ) -> Result<Self, SpecError> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(SpecError::new("sample_rate_hz", "must be > 0"));
        }
        if let Some(first) = channels.first() {
            if let Some(bad) = channels
                .iter()
                .position(|c| c.samples.len() != first.samples.len())
            {
                return Err(SpecError::new(
                    format!("channels[{bad}].samples"),
                    "all channels must have equal length",
                ));
            }
        }
        Ok(Self {
            sample_rate_hz,
            start_time_s,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.samples.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time_at(&self, n: usize) -> f64 {
        sample_time(self.start_time_s, self.sample_rate_hz, n)
    }

    pub fn channel(&self, label: Label) -> Option<&Channel> {
        self.channels.iter().find(|c| c.label == label)
    }

    pub fn labels(&self) -> Vec<Label> {
        self.channels.iter().map(|c| c.label).collect()
    }

    /// Applies `f` to every channel, keeping labels and timebase.
    pub fn map_channels(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> SampleStream {
        SampleStream {
            sample_rate_hz: self.sample_rate_hz,
            start_time_s: self.start_time_s,
            channels: self
                .channels
                .iter()
                .map(|c| Channel {
                    label: c.label,
                    samples: f(&c.samples),
                })
                .collect(),
        }
    }
}

#[inline]
pub(crate) fn sample_time(start: f64, fs: f64, n: usize) -> f64 {
    start + n as f64 / fs
}

/// First sample index whose timestamp is at or after `at`.
fn first_sample_at_or_after(start: f64, fs: f64, at: f64) -> usize {
    let x = ((at - start) * fs).ceil();
    if x <= 0.0 {
        return 0;
    }
    let mut n = x as usize;
    while n > 0 && sample_time(start, fs, n - 1) >= at {
        n -= 1;
    }
    while sample_time(start, fs, n) < at {
        n += 1;
    }
    n
}

#[derive(Debug, Clone, Copy)]
enum Action<'a> {
    Event(&'a EventKind),
    SagEnd(Option<Label>),
}

struct SourceState {
    amplitude: f64,
    offset_rad: f64,
    sag_factor: f64,
    cut: bool,
}

/// Evaluates `spec` at `sample_rate_hz` for `duration_s`, starting at t = 0.
pub fn synth(
    spec: &WaveformSpec,
    sample_rate_hz: f64,
    duration_s: f64,
) -> Result<SampleStream, SpecError> {
    spec.validate()?;
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(SpecError::new("duration_s", "must be > 0"));
    }
    let highest = spec.max_fundamental_hz() * f64::from(spec.max_harmonic_order());
    if !(sample_rate_hz >= MIN_OVERSAMPLING * highest) {
        return Err(SpecError::new(
            "sample_rate_hz",
            format!("must be at least {MIN_OVERSAMPLING} x {highest} Hz"),
        ));
    }

    let start = 0.0;
    let n_samples = (duration_s * sample_rate_hz).round() as usize;

    let mut actions: Vec<(usize, Action<'_>)> = Vec::new();
    for e in &spec.events {
        let n = first_sample_at_or_after(start, sample_rate_hz, e.at_seconds);
        actions.push((n, Action::Event(&e.kind)));
        if let EventKind::Sag {
            duration_s, label, ..
        } = &e.kind
        {
            let end = first_sample_at_or_after(start, sample_rate_hz, e.at_seconds + duration_s);
            actions.push((end, Action::SagEnd(*label)));
        }
    }
    actions.sort_by_key(|(n, _)| *n);

    let mut sources: Vec<SourceState> = spec
        .phases
        .iter()
        .map(|p| SourceState {
            amplitude: p.amplitude_volts,
            offset_rad: p.phase_offset_deg.to_radians(),
            sag_factor: 1.0,
            cut: false,
        })
        .collect();
    let mut route: Vec<usize> = (0..spec.phases.len()).collect();
    let mut freq = spec.fundamental_hz;
    // Fundamental phase is anchor_phase + 2π·freq·(t - anchor_t).
    let mut anchor_t = start;
    let mut anchor_phase = 0.0;
    let harmonics: Vec<(f64, f64, f64)> = spec
        .harmonics
        .iter()
        .map(|h| {
            (
                f64::from(h.order),
                h.relative_amplitude,
                h.phase_deg.to_radians(),
            )
        })
        .collect();

    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(n_samples); spec.phases.len()];
    let mut next_action = 0;
    for n in 0..n_samples {
        let t = sample_time(start, sample_rate_hz, n);
        while next_action < actions.len() && actions[next_action].0 <= n {
            let (_, action) = actions[next_action];
            next_action += 1;
            match action {
                Action::Event(kind) => match kind {
                    EventKind::AmplitudeStep {
                        label,
                        amplitude_volts,
                    } => {
                        for (k, s) in sources.iter_mut().enumerate() {
                            if label.is_none_or(|l| spec.phases[k].label == l) {
                                s.amplitude = *amplitude_volts;
                            }
                        }
                    }
                    EventKind::Sag {
                        depth_fraction,
                        label,
                        ..
                    } => {
                        for (k, s) in sources.iter_mut().enumerate() {
                            if label.is_none_or(|l| spec.phases[k].label == l) {
                                s.sag_factor = 1.0 - depth_fraction;
                            }
                        }
                    }
                    EventKind::SequenceSwap { permutation } => {
                        route = permutation
                            .iter()
                            .map(|l| spec.phase_index(*l).expect("validated permutation"))
                            .collect();
                    }
                    EventKind::PhaseCut { label } => {
                        let k = spec.phase_index(*label).expect("validated label");
                        sources[k].cut = true;
                    }
                    EventKind::FrequencyStep { new_hz } => {
                        anchor_phase += TAU * freq * (t - anchor_t);
                        anchor_t = t;
                        freq = *new_hz;
                    }
                    EventKind::PhaseStep { label, delta_deg } => {
                        let k = spec.phase_index(*label).expect("validated label");
                        sources[k].offset_rad += delta_deg.to_radians();
                    }
                },
                Action::SagEnd(label) => {
                    for (k, s) in sources.iter_mut().enumerate() {
                        if label.is_none_or(|l| spec.phases[k].label == l) {
                            s.sag_factor = 1.0;
                        }
                    }
                }
            }
        }

        let theta = anchor_phase + TAU * freq * (t - anchor_t);
        for (ch, &src) in route.iter().enumerate() {
            let s = &sources[src];
            let v = if s.cut {
                0.0
            } else {
                let amp = s.amplitude * s.sag_factor;
                let phi = theta + s.offset_rad;
                let mut v = amp * phi.sin();
                for &(order, rel, ph) in &harmonics {
                    v += amp * rel * (order * phi + ph).sin();
                }
                v
            };
            out[ch].push(v);
        }
    }

    let channels = spec
        .phases
        .iter()
        .zip(out)
        .map(|(p, samples)| Channel {
            label: p.label,
            samples,
        })
        .collect();
    SampleStream::new(sample_rate_hz, start, channels)
}

/// Converts phase-to-neutral channels A, B, C into line-to-line channels
/// AB = A - B, BC = B - C, CA = C - A.
pub fn line_to_line(stream: &SampleStream) -> Result<SampleStream, SpecError> {
    let labels = stream.labels();
    if labels.len() != 3
        || [Label::A, Label::B, Label::C]
            .iter()
            .any(|l| !labels.contains(l))
    {
        return Err(SpecError::new(
            "channels",
            "line-to-line conversion needs exactly channels A, B, C",
        ));
    }
    let get = |l: Label| &stream.channel(l).expect("checked above").samples;
    let (a, b, c) = (get(Label::A), get(Label::B), get(Label::C));
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>();
    SampleStream::new(
        stream.sample_rate_hz,
        stream.start_time_s,
        vec![
            Channel {
                label: Label::AB,
                samples: diff(a, b),
            },
            Channel {
                label: Label::BC,
                samples: diff(b, c),
            },
            Channel {
                label: Label::CA,
                samples: diff(c, a),
            },
        ],
    )
}
