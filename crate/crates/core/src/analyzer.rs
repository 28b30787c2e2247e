//! Three-phase aggregation: per-phase angle, phase sequence, unbalance and
//! fault detection.
//!
//! The free functions are pure and operate on slices of estimates. The
//! streaming [`Monitor`] feeds them incrementally so that sequence changes
//! and faults are reported at the half-cycle where they become observable,
//! and produces one [`WindowReport`] per fixed-length window.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::estimator::PeakEstimate;
use crate::label::{CrossingDirection, Label, Quality};

/// Up-crossings older than this many periods are ignored when ordering the
/// phases.
pub const SEQUENCE_SPAN_PERIODS: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyzerError {
    #[error("unbalance needs three phases with amplitudes, missing {0:?}")]
    MissingPhases(Vec<Label>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Wiring {
    #[default]
    FourWire,
    /// Inputs are line-to-line; only the amplitude test applies.
    ThreeWire,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzerConfig {
    /// Angle reference; the first channel when absent.
    pub reference: Option<Label>,
    pub wiring: Wiring,
    pub amp_tol_fraction: f64,
    pub phase_tol_deg: f64,
    pub missing_halfcycles: u32,
    pub angle_jump_deg: f64,
    /// Report window; one period of the first measured frequency when absent.
    pub window_s: Option<f64>,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        Self {
            reference: None,
            wiring: Wiring::FourWire,
            amp_tol_fraction: 0.01,
            phase_tol_deg: 2.0,
            missing_halfcycles: 2,
            angle_jump_deg: 10.0,
            window_s: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start_s: f64,
    pub end_s: f64,
}

impl Window {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }
}

/// Maps an angle into (-180°, 180°].
pub fn wrap_deg(angle: f64) -> f64 {
    let mut x = angle % 360.0;
    if x <= -180.0 {
        x += 360.0;
    } else if x > 180.0 {
        x -= 360.0;
    }
    // Adding +0 turns -0 into +0.
    x + 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEntry {
    pub label: Label,
    pub v_p_volts: f64,
    /// Relative to the reference phase; absent without an up-crossing.
    pub phase_angle_deg: Option<f64>,
    pub frequency_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub reference: Label,
    pub wiring: Wiring,
    pub window: Window,
    pub phases: Vec<PhaseEntry>,
    /// Expected phases with no usable estimate in the window.
    pub missing: Vec<Label>,
}

impl PhaseReport {
    pub fn entry(&self, label: Label) -> Option<&PhaseEntry> {
        self.phases.iter().find(|p| p.label == label)
    }
}

fn usable(e: &PeakEstimate) -> bool {
    e.quality == Quality::Ok
}

/// Latest amplitude and up-crossing angle of each phase within `window`.
/// Angles are `-360°·(t_X - t_ref)/T` from the last up-crossing centers,
/// with `T` the reference phase's measured period.
pub fn phase_angles(
    estimates: &[PeakEstimate],
    window: Window,
    labels: &[Label],
    reference: Label,
    wiring: Wiring,
) -> PhaseReport {
    let in_window = || {
        estimates
            .iter()
            .filter(|e| usable(e) && window.contains(e.time_s))
    };
    let latest = |label: Label| in_window().rfind(|e| e.channel_label == label);
    let latest_up = |label: Label| {
        in_window()
            .rfind(|e| e.channel_label == label && e.crossing_direction == CrossingDirection::Up)
    };

    let period = latest(reference)
        .or_else(|| in_window().next_back())
        .map(|e| 1.0 / e.frequency_hz);
    let ref_up = latest_up(reference).map(|e| e.time_s);

    let mut phases = Vec::new();
    let mut missing = Vec::new();
    for &label in labels {
        let Some(e) = latest(label) else {
            missing.push(label);
            continue;
        };
        let angle = match (latest_up(label), ref_up, period) {
            (Some(up), Some(r), Some(t)) => Some(wrap_deg(-360.0 * (up.time_s - r) / t)),
            _ => None,
        };
        phases.push(PhaseEntry {
            label,
            v_p_volts: e.v_p_volts,
            phase_angle_deg: angle,
            frequency_hz: e.frequency_hz,
        });
    }
    PhaseReport {
        reference,
        wiring,
        window,
        phases,
        missing,
    }
}

/// Cyclic order in which phases reach their upward zero crossings, stored
/// rotated so that the reference phase comes first. `A-C-B` is the same
/// cycle as `B-A-C`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseOrder(pub Vec<Label>);

impl PhaseOrder {
    /// Rotates `labels` to start at `reference` (if present).
    pub fn canonical(mut labels: Vec<Label>, reference: Label) -> Self {
        if let Some(k) = labels.iter().position(|&l| l == reference) {
            labels.rotate_left(k);
        }
        Self(labels)
    }

    pub fn labels(&self) -> &[Label] {
        &self.0
    }

    /// Nominal angle of `label` for this order: -120° per step after the
    /// reference, wrapped.
    pub fn nominal_angle(&self, label: Label) -> Option<f64> {
        let n = self.0.len();
        if n == 0 {
            return None;
        }
        let k = self.0.iter().position(|&l| l == label)?;
        Some(wrap_deg(-360.0 / n as f64 * k as f64))
    }
}

impl fmt::Display for PhaseOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "label", rename_all = "kebab-case")]
pub enum Fault {
    PhaseCut(Label),
    /// Sudden angle change of one phase.
    PhaseAnomaly(Label),
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::PhaseCut(l) => write!(f, "phase-cut({l})"),
            Fault::PhaseAnomaly(l) => write!(f, "phase-anomaly({l})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub detected_order: PhaseOrder,
    pub changed: bool,
    pub faults: BTreeSet<Fault>,
}

/// Orders phases by their latest up-crossing center. `up_crossings` holds
/// `(label, center_s)` pairs spanning at least one period.
pub fn detect_sequence(
    up_crossings: &[(Label, f64)],
    expected: &[Label],
    reference: Label,
    previous: Option<&PhaseOrder>,
) -> SequenceReport {
    let mut latest: BTreeMap<Label, f64> = BTreeMap::new();
    for &(label, t) in up_crossings {
        let slot = latest.entry(label).or_insert(t);
        if t > *slot {
            *slot = t;
        }
    }
    let mut present: Vec<(Label, f64)> = latest.into_iter().collect();
    present.sort_by(|a, b| a.1.total_cmp(&b.1));
    let order = PhaseOrder::canonical(present.iter().map(|(l, _)| *l).collect(), reference);

    let faults: BTreeSet<Fault> = expected
        .iter()
        .filter(|l| !order.0.contains(l))
        .map(|&l| Fault::PhaseCut(l))
        .collect();
    let changed = match previous {
        Some(prev) => faults.is_empty() && prev.0.len() == order.0.len() && *prev != order,
        None => false,
    };
    SequenceReport {
        detected_order: order,
        changed,
        faults,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelValue {
    pub label: Label,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbalanceReport {
    pub mean_volts: f64,
    /// `v_i - mean(v)` in volts.
    pub amplitude_deviations: Vec<LabelValue>,
    /// `angle_i - nominal_i` in degrees; absent in three-wire mode or when
    /// an angle is unknown.
    pub phase_deviations: Option<Vec<LabelValue>>,
    pub amplitude_unbalanced: bool,
    pub phase_unbalanced: bool,
    pub amp_tol_fraction: f64,
    pub phase_tol_deg: f64,
}

pub fn detect_unbalance(
    report: &PhaseReport,
    order: &PhaseOrder,
    amp_tol_fraction: f64,
    phase_tol_deg: f64,
) -> Result<UnbalanceReport, AnalyzerError> {
    if report.phases.len() != 3 || !report.missing.is_empty() {
        return Err(AnalyzerError::MissingPhases(report.missing.clone()));
    }
    let mean = report.phases.iter().map(|p| p.v_p_volts).sum::<f64>() / 3.0;
    let amplitude_deviations: Vec<LabelValue> = report
        .phases
        .iter()
        .map(|p| LabelValue {
            label: p.label,
            value: p.v_p_volts - mean,
        })
        .collect();
    let max_dev = amplitude_deviations
        .iter()
        .fold(0.0f64, |m, d| m.max(d.value.abs()));
    let amplitude_unbalanced = max_dev / mean > amp_tol_fraction;

    let phase_deviations = match report.wiring {
        Wiring::ThreeWire => None,
        Wiring::FourWire => report
            .phases
            .iter()
            .map(|p| {
                let angle = p.phase_angle_deg?;
                let nominal = order.nominal_angle(p.label)?;
                Some(LabelValue {
                    label: p.label,
                    value: wrap_deg(angle - nominal),
                })
            })
            .collect::<Option<Vec<_>>>(),
    };
    let phase_unbalanced = phase_deviations
        .as_ref()
        .is_some_and(|d| d.iter().any(|x| x.value.abs() > phase_tol_deg));

    Ok(UnbalanceReport {
        mean_volts: mean,
        amplitude_deviations,
        phase_deviations,
        amplitude_unbalanced,
        phase_unbalanced,
        amp_tol_fraction,
        phase_tol_deg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSample {
    pub time_s: f64,
    pub angle_deg: f64,
}

/// Recent pulse activity of one phase.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhaseHistory {
    pub label: Option<Label>,
    pub last_center_s: Option<f64>,
    /// Consecutive angle observations, oldest first.
    pub angles: Vec<AngleSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    pub missing_halfcycles: u32,
    pub angle_jump_deg: f64,
}

/// Phase cut when a phase has been silent for `missing_halfcycles` expected
/// half periods since its last pulse (or since `since_s` if it never
/// pulsed); phase anomaly when consecutive angles differ by more than
/// `angle_jump_deg`.
pub fn detect_faults(
    histories: &[PhaseHistory],
    now_s: f64,
    since_s: f64,
    half_period_s: f64,
    config: &FaultConfig,
) -> BTreeSet<Fault> {
    let mut faults = BTreeSet::new();
    for h in histories {
        let Some(label) = h.label else { continue };
        let last = h.last_center_s.unwrap_or(since_s);
        let silent = (now_s - last) / half_period_s - 0.5;
        if silent >= f64::from(config.missing_halfcycles) {
            faults.insert(Fault::PhaseCut(label));
        }
        if h.angles
            .windows(2)
            .any(|w| wrap_deg(w[1].angle_deg - w[0].angle_deg).abs() > config.angle_jump_deg)
        {
            faults.insert(Fault::PhaseAnomaly(label));
        }
    }
    faults
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEvent {
    pub at_s: f64,
    pub order: PhaseOrder,
    pub changed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub at_s: f64,
    pub fault: Fault,
    /// False when the condition clears (a cut phase pulses again).
    pub raised: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window: Window,
    pub phases: PhaseReport,
    pub sequence: Option<SequenceReport>,
    pub unbalance: Option<UnbalanceReport>,
    pub merge_warning: bool,
}

impl WindowReport {
    /// `|`-separated condition flags, empty when healthy.
    pub fn flags(&self) -> String {
        let mut flags: Vec<String> = Vec::new();
        if let Some(u) = &self.unbalance {
            if u.amplitude_unbalanced {
                flags.push("amplitude-unbalance".into());
            }
            if u.phase_unbalanced {
                flags.push("phase-unbalance".into());
            }
        }
        if let Some(s) = &self.sequence {
            if s.changed {
                flags.push("sequence-changed".into());
            }
            flags.extend(s.faults.iter().map(Fault::to_string));
        }
        flags.extend(self.phases.missing.iter().map(|l| format!("missing({l})")));
        if self.merge_warning {
            flags.push("merged".into());
        }
        flags.join("|")
    }
}

#[derive(Debug, Clone, Default)]
struct LabelState {
    last_center: Option<f64>,
    last_up: Option<f64>,
    angles: Vec<AngleSample>,
}

/// Streaming aggregator over a time-ordered estimate stream from one
/// signal source.
#[derive(Debug, Clone)]
pub struct Monitor {
    config: AnalyzerConfig,
    labels: Vec<Label>,
    reference: Label,
    estimates: Vec<PeakEstimate>,
    state: BTreeMap<Label, LabelState>,
    order: Option<PhaseOrder>,
    period: Option<f64>,
    start_s: Option<f64>,
    active_cuts: BTreeSet<Label>,
    sequence_events: Vec<SequenceEvent>,
    fault_events: Vec<FaultEvent>,
    merge_warning: bool,
}

impl Monitor {
    pub fn new(labels: &[Label], config: AnalyzerConfig) -> Self {
        let reference = config
            .reference
            .unwrap_or_else(|| labels.first().copied().unwrap_or(Label::A));
        Self {
            labels: labels.to_vec(),
            reference,
            estimates: Vec::new(),
            state: labels.iter().map(|&l| (l, LabelState::default())).collect(),
            order: None,
            period: None,
            start_s: None,
            active_cuts: BTreeSet::new(),
            sequence_events: Vec::new(),
            fault_events: Vec::new(),
            merge_warning: false,
            config,
        }
    }

    pub fn reference(&self) -> Label {
        self.reference
    }

    /// Records that the adder output merged pulses upstream.
    pub fn note_merge(&mut self) {
        self.merge_warning = true;
    }

    pub fn current_order(&self) -> Option<&PhaseOrder> {
        self.order.as_ref()
    }

    pub fn sequence_events(&self) -> &[SequenceEvent] {
        &self.sequence_events
    }

    pub fn fault_events(&self) -> &[FaultEvent] {
        &self.fault_events
    }

    pub fn estimates(&self) -> &[PeakEstimate] {
        &self.estimates
    }

    pub fn push(&mut self, e: &PeakEstimate) {
        let now = e.time_s;
        self.start_s.get_or_insert(now);
        if e.quality != Quality::LowConfidence {
            self.period = Some(1.0 / e.frequency_hz);
        }
        self.estimates.push(e.clone());
        let Some(period) = self.period else { return };
        if !self.state.contains_key(&e.channel_label) {
            return;
        }

        // A low-confidence pulse still marks its zero crossing; only its
        // frequency is suspect. Merged pulses have no reliable center.
        let timed_up =
            e.quality != Quality::Merged && e.crossing_direction == CrossingDirection::Up;
        let mut angle_updated = None;
        {
            let reference_up = self.state.get(&self.reference).and_then(|s| s.last_up);
            let st = self.state.get_mut(&e.channel_label).expect("checked above");
            st.last_center = Some(now);
            if timed_up {
                st.last_up = Some(now);
                if e.channel_label != self.reference {
                    if let Some(r) = reference_up.filter(|r| now - r < period) {
                        st.angles.push(AngleSample {
                            time_s: now,
                            angle_deg: wrap_deg(-360.0 * (now - r) / period),
                        });
                        if st.angles.len() > 2 {
                            st.angles.remove(0);
                        }
                        angle_updated = Some(e.channel_label);
                    }
                }
            }
        }

        if timed_up {
            self.update_sequence(now, period);
        }
        self.update_faults(now, period, angle_updated);
    }

    fn update_sequence(&mut self, now: f64, period: f64) {
        let ups: Vec<(Label, f64)> = self
            .state
            .iter()
            .filter_map(|(&l, s)| s.last_up.map(|t| (l, t)))
            .filter(|&(_, t)| now - t < SEQUENCE_SPAN_PERIODS * period)
            .collect();
        if ups.len() != self.labels.len() {
            return;
        }
        let report = detect_sequence(&ups, &self.labels, self.reference, self.order.as_ref());
        if self.order.as_ref() != Some(&report.detected_order) {
            self.sequence_events.push(SequenceEvent {
                at_s: now,
                order: report.detected_order.clone(),
                changed: report.changed,
            });
            self.order = Some(report.detected_order);
        }
    }

    fn update_faults(&mut self, now: f64, period: f64, angle_updated: Option<Label>) {
        let histories: Vec<PhaseHistory> = self
            .state
            .iter()
            .map(|(&l, s)| PhaseHistory {
                label: Some(l),
                last_center_s: s.last_center,
                angles: if angle_updated == Some(l) {
                    s.angles.clone()
                } else {
                    Vec::new()
                },
            })
            .collect();
        let config = FaultConfig {
            missing_halfcycles: self.config.missing_halfcycles,
            angle_jump_deg: self.config.angle_jump_deg,
        };
        let since = self.start_s.unwrap_or(now);
        let faults = detect_faults(&histories, now, since, period / 2.0, &config);

        for &label in &self.labels {
            let cut = faults.contains(&Fault::PhaseCut(label));
            if cut && self.active_cuts.insert(label) {
                self.fault_events.push(FaultEvent {
                    at_s: now,
                    fault: Fault::PhaseCut(label),
                    raised: true,
                });
            } else if !cut && self.active_cuts.remove(&label) {
                self.fault_events.push(FaultEvent {
                    at_s: now,
                    fault: Fault::PhaseCut(label),
                    raised: false,
                });
            }
        }
        for f in faults {
            if let Fault::PhaseAnomaly(_) = f {
                self.fault_events.push(FaultEvent {
                    at_s: now,
                    fault: f,
                    raised: true,
                });
            }
        }
    }

    fn window_length(&self) -> Option<f64> {
        self.config.window_s.or_else(|| {
            self.estimates
                .iter()
                .find(|e| e.quality == Quality::Ok)
                .map(|e| 1.0 / e.frequency_hz)
        })
    }

    /// Report for one window, using the state observed up to its end.
    pub fn window_report(&self, window: Window) -> WindowReport {
        let phases = phase_angles(
            &self.estimates,
            window,
            &self.labels,
            self.reference,
            self.config.wiring,
        );
        let order = self
            .sequence_events
            .iter()
            .take_while(|ev| ev.at_s < window.end_s)
            .last()
            .map(|ev| ev.order.clone());
        let changed = self
            .sequence_events
            .iter()
            .any(|ev| ev.changed && window.contains(ev.at_s));

        let mut faults: BTreeSet<Fault> = self
            .fault_events
            .iter()
            .filter(|ev| ev.raised && window.contains(ev.at_s))
            .map(|ev| ev.fault)
            .collect();
        let mut cuts: BTreeSet<Label> = BTreeSet::new();
        for ev in self
            .fault_events
            .iter()
            .take_while(|ev| ev.at_s < window.end_s)
        {
            if let Fault::PhaseCut(l) = ev.fault {
                if ev.raised {
                    cuts.insert(l);
                } else {
                    cuts.remove(&l);
                }
            }
        }
        faults.extend(cuts.into_iter().map(Fault::PhaseCut));

        let sequence = order.map(|detected_order| SequenceReport {
            detected_order,
            changed,
            faults,
        });
        let unbalance = match (&sequence, self.labels.len()) {
            (Some(s), 3) => detect_unbalance(
                &phases,
                &s.detected_order,
                self.config.amp_tol_fraction,
                self.config.phase_tol_deg,
            )
            .ok(),
            _ => None,
        };
        WindowReport {
            window,
            phases,
            sequence,
            unbalance,
            merge_warning: self.merge_warning,
        }
    }

    /// Consecutive windows from `start_s` covering every pushed estimate.
    pub fn window_reports(&self, start_s: f64) -> Vec<WindowReport> {
        let Some(len) = self.window_length() else {
            return Vec::new();
        };
        let Some(last) = self.estimates.iter().map(|e| e.time_s).reduce(f64::max) else {
            return Vec::new();
        };
        let count = ((last - start_s) / len).floor() as usize + 1;
        (0..count)
            .map(|k| {
                self.window_report(Window {
                    start_s: start_s + k as f64 * len,
                    end_s: start_s + (k + 1) as f64 * len,
                })
            })
            .collect()
    }
}
