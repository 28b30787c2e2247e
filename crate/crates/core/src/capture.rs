//! Timer-capture model: edge quantization, deglitching, and turning pulses
//! into half-cycle measurements.

use serde::{Deserialize, Serialize};

use crate::frontend::{Pulse, PulseTrain};
use crate::label::{CrossingDirection, Label, Quality};

/// Relative disagreement between adjacent center spacings above which a
/// spacing is treated as a discontinuity rather than a half period.
pub const SPACING_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CaptureError {
    #[error("channel {label}: {pulses} pulse(s), at least 2 are needed to establish frequency")]
    NoMeasurement { label: Label, pulses: usize },
    #[error("combined pulse at {rise_s} s overlaps no per-phase pulse")]
    UnmatchedPulse { rise_s: f64 },
    #[error("invalid capture configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureConfig {
    /// Capture-timer frequency; 0 disables quantization.
    pub timer_hz: f64,
    /// Pulses narrower than this are dropped.
    #[serde(default)]
    pub min_pulse_width_s: f64,
    /// Same-channel pulses separated by less than this are merged.
    #[serde(default)]
    pub merge_gap_s: f64,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            timer_hz: 1e6,
            min_pulse_width_s: 0.0,
            merge_gap_s: 0.0,
        }
    }
}

impl CaptureConfig {
    pub fn ideal() -> Self {
        Self {
            timer_hz: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), CaptureError> {
        if !(self.timer_hz >= 0.0 && self.timer_hz.is_finite()) {
            return Err(CaptureError::InvalidConfig("timer_hz must be >= 0".into()));
        }
        if !(self.min_pulse_width_s >= 0.0) {
            return Err(CaptureError::InvalidConfig(
                "min_pulse_width_s must be >= 0".into(),
            ));
        }
        if !(self.merge_gap_s >= 0.0) {
            return Err(CaptureError::InvalidConfig(
                "merge_gap_s must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfCycleMeasurement {
    pub channel_label: Label,
    pub center_time_s: f64,
    pub width_s: f64,
    /// Half the pulse width: zero crossing to threshold.
    pub t_h_s: f64,
    pub frequency_hz: f64,
    pub crossing_direction: CrossingDirection,
    pub quality: Quality,
}

impl HalfCycleMeasurement {
    /// When the capture of this pulse completes.
    pub fn available_s(&self) -> f64 {
        self.center_time_s + 0.5 * self.width_s
    }
}

/// Rounds every edge to the nearest timer tick. Pulses that collapse to
/// zero width are dropped.
pub fn quantize(train: &PulseTrain, config: &CaptureConfig) -> PulseTrain {
    if config.timer_hz == 0.0 {
        return train.clone();
    }
    let tick = |t: f64| (t * config.timer_hz).round() / config.timer_hz;
    let pulses = train
        .pulses
        .iter()
        .map(|p| Pulse {
            rise_s: tick(p.rise_s),
            fall_s: tick(p.fall_s),
            ..*p
        })
        .filter(|p| p.fall_s > p.rise_s)
        .collect();
    PulseTrain::new(train.channel_label, pulses)
}

/// Drops pulses narrower than `min_pulse_width_s`, then merges pulses whose
/// gap is shorter than `merge_gap_s`.
pub fn deglitch(train: &PulseTrain, config: &CaptureConfig) -> PulseTrain {
    let mut out: Vec<Pulse> = Vec::with_capacity(train.pulses.len());
    for p in train
        .pulses
        .iter()
        .filter(|p| p.width() >= config.min_pulse_width_s)
    {
        match out.last_mut() {
            Some(last) if p.rise_s - last.fall_s < config.merge_gap_s => {
                last.fall_s = last.fall_s.max(p.fall_s);
                last.merged = true;
            }
            _ => out.push(*p),
        }
    }
    PulseTrain::new(train.channel_label, out)
}

fn spacings_agree(a: f64, b: f64) -> bool {
    (a - b).abs() <= SPACING_TOLERANCE * a.max(b)
}

/// Core of [`measure`]: one measurement per pulse of a single label.
fn measure_pulses(
    label: Label,
    pulses: &[Pulse],
) -> Result<Vec<HalfCycleMeasurement>, CaptureError> {
    if pulses.len() < 2 {
        return Err(CaptureError::NoMeasurement {
            label,
            pulses: pulses.len(),
        });
    }
    let centers: Vec<f64> = pulses.iter().map(Pulse::center).collect();
    let spacings: Vec<f64> = centers.windows(2).map(|w| w[1] - w[0]).collect();

    Ok(pulses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            // The first pulse borrows the following spacing.
            let j = i.saturating_sub(1);
            let delta = spacings[j];
            let mut quality = if p.merged {
                Quality::Merged
            } else {
                Quality::Ok
            };

            let neighbours = [
                j.checked_sub(1),
                Some(j + 1).filter(|&k| k < spacings.len()),
            ];
            let mut any = false;
            let mut agrees = false;
            for k in neighbours.into_iter().flatten() {
                any = true;
                agrees |= spacings_agree(delta, spacings[k]);
            }
            let outlier = any && !agrees;
            let skipped = pulses[j].direction == pulses[j + 1].direction;
            let width = p.width();
            if outlier || skipped || width >= delta {
                quality = quality.worst(Quality::LowConfidence);
            }

            HalfCycleMeasurement {
                channel_label: label,
                center_time_s: centers[i],
                width_s: width,
                t_h_s: 0.5 * width,
                frequency_hz: 1.0 / (2.0 * delta),
                crossing_direction: p.direction,
                quality,
            }
        })
        .collect())
}

/// Width, center and frequency for every pulse of one channel. Frequency
/// comes from the spacing to the previous same-channel pulse center.
pub fn measure(train: &PulseTrain) -> Result<Vec<HalfCycleMeasurement>, CaptureError> {
    measure_pulses(train.channel_label, &train.pulses)
}

/// Tags every pulse of the adder output with the phase(s) whose own pulse
/// overlaps it. Geometry comes from the combined pulse; frequency from the
/// spacing of same-label combined pulses. Output is ordered by time, with
/// labels of a merged pulse in input order.
pub fn assign_phase(
    combined: &PulseTrain,
    per_phase: &[PulseTrain],
) -> Result<Vec<HalfCycleMeasurement>, CaptureError> {
    // For each input train, the combined-pulse geometry it was tagged with.
    let mut tagged: Vec<Vec<(usize, Pulse)>> = vec![Vec::new(); per_phase.len()];
    let mut cursors = vec![0usize; per_phase.len()];

    for (ci, cp) in combined.pulses.iter().enumerate() {
        let mut hits: Vec<(usize, CrossingDirection)> = Vec::new();
        for (ti, train) in per_phase.iter().enumerate() {
            let pulses = &train.pulses;
            let cur = &mut cursors[ti];
            while *cur < pulses.len() && pulses[*cur].fall_s < cp.rise_s {
                *cur += 1;
            }
            if let Some(p) = pulses[*cur..].iter().find(|p| p.overlaps(cp)) {
                hits.push((ti, p.direction));
            }
        }
        if hits.is_empty() {
            return Err(CaptureError::UnmatchedPulse { rise_s: cp.rise_s });
        }
        let merged = cp.merged || hits.len() > 1;
        for (ti, direction) in hits {
            tagged[ti].push((
                ci,
                Pulse {
                    direction,
                    merged,
                    ..*cp
                },
            ));
        }
    }

    let mut out: Vec<(usize, usize, HalfCycleMeasurement)> = Vec::new();
    for (ti, list) in tagged.iter().enumerate() {
        let pulses: Vec<Pulse> = list.iter().map(|(_, p)| *p).collect();
        let ms = measure_pulses(per_phase[ti].channel_label, &pulses)?;
        out.extend(list.iter().zip(ms).map(|((ci, _), m)| (*ci, ti, m)));
    }
    out.sort_by_key(|(ci, ti, _)| (*ci, *ti));
    Ok(out.into_iter().map(|(_, _, m)| m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{combine, threshold_pulses, FrontEndConfig};
    use crate::siggen::{synth, Event, EventKind, WaveformSpec};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn pulse(rise_us: f64, fall_us: f64) -> Pulse {
        Pulse {
            rise_s: rise_us * 1e-6,
            fall_s: fall_us * 1e-6,
            direction: CrossingDirection::Up,
            merged: false,
        }
    }

    fn alternating(pulses: Vec<Pulse>) -> Vec<Pulse> {
        pulses
            .into_iter()
            .enumerate()
            .map(|(i, p)| Pulse {
                direction: if i % 2 == 0 {
                    CrossingDirection::Up
                } else {
                    CrossingDirection::Down
                },
                ..p
            })
            .collect()
    }

    fn train(pulses: Vec<Pulse>) -> PulseTrain {
        PulseTrain::new(Label::A, pulses)
    }

    fn frontend(v_h: f64) -> FrontEndConfig {
        FrontEndConfig {
            v_h_volts: v_h,
            ..FrontEndConfig::default()
        }
    }

    #[test]
    fn quantize_identity_and_nearest_tick() {
        let t = train(vec![pulse(153.59, 460.76)]);
        assert_eq!(quantize(&t, &CaptureConfig::ideal()), t);
        let q = quantize(&t, &CaptureConfig::default());
        assert!((q.pulses[0].rise_s - 154e-6).abs() < 1e-15);
        assert!((q.pulses[0].fall_s - 461e-6).abs() < 1e-15);
    }

    #[test]
    fn quantized_width_and_sensitivity() {
        // 307.17 µs pulse at arbitrary phases against a 1 MHz timer.
        let w = 2.0 * (15.0f64 / 311.0).asin() / (100.0 * PI);
        for k in 0..50 {
            let rise = 0.01 + k as f64 * 0.0137e-6;
            let t = train(vec![Pulse {
                rise_s: rise,
                fall_s: rise + w,
                direction: CrossingDirection::Up,
                merged: false,
            }]);
            let qw = quantize(&t, &CaptureConfig::default()).pulses[0].width() * 1e6;
            assert!(
                [306.0, 307.0, 308.0].iter().any(|x| (qw - x).abs() < 1e-6),
                "{qw}"
            );
        }
        // dV_p/dw = -(ω/2)·V_h·cos(ωw/2)/sin²(ωw/2), checked by central differences.
        let v = |w: f64| 15.0 / (100.0 * PI * w / 2.0).sin();
        let theta = 100.0 * PI * w / 2.0;
        let analytic = -(100.0 * PI / 2.0) * 15.0 * theta.cos() / theta.sin().powi(2);
        let h = 1e-9;
        let numeric = (v(w + h) - v(w - h)) / (2.0 * h);
        assert!((analytic - numeric).abs() / analytic.abs() < 1e-6);
        // One tick of width error costs about 1 V at 311 V.
        assert!((analytic * 1e-6).abs() > 1.0 && (analytic * 1e-6).abs() < 1.1);
    }

    #[test]
    fn deglitch_rules() {
        let clean = train(vec![pulse(100.0, 407.0), pulse(10_100.0, 10_407.0)]);
        assert_eq!(deglitch(&clean, &CaptureConfig::ideal()), clean);

        let flanked = train(vec![
            pulse(80.0, 83.0),
            pulse(100.0, 407.0),
            pulse(420.0, 423.0),
        ]);
        let cfg = CaptureConfig {
            min_pulse_width_s: 20e-6,
            ..CaptureConfig::ideal()
        };
        assert_eq!(deglitch(&flanked, &cfg).pulses, vec![pulse(100.0, 407.0)]);

        let split = train(vec![pulse(100.0, 250.0), pulse(260.0, 400.0)]);
        let cfg = CaptureConfig {
            merge_gap_s: 30e-6,
            ..CaptureConfig::ideal()
        };
        let out = deglitch(&split, &cfg);
        assert_eq!(out.pulses.len(), 1);
        assert!((out.pulses[0].width() - 300e-6).abs() < 1e-12);
        assert!(out.pulses[0].merged);
        let next = Pulse {
            direction: CrossingDirection::Down,
            ..pulse(10_100.0, 10_400.0)
        };
        assert_eq!(
            measure(&train(vec![out.pulses[0], next])).unwrap()[0].quality,
            Quality::Merged
        );
    }

    #[test]
    fn frequency_from_center_spacing() {
        let ms = measure(&train(alternating(vec![
            pulse(4900.0, 5100.0),
            pulse(14_900.0, 15_100.0),
        ])))
        .unwrap();
        assert_eq!(ms.len(), 2);
        for m in &ms {
            assert!((m.frequency_hz - 50.0).abs() < 1e-9);
            assert_eq!(m.quality, Quality::Ok);
        }
    }

    #[test]
    fn too_few_pulses_is_diagnosed() {
        assert!(matches!(
            measure(&train(vec![pulse(0.0, 1.0)])),
            Err(CaptureError::NoMeasurement { pulses: 1, .. })
        ));
        assert!(measure(&train(vec![])).is_err());
    }

    #[test]
    fn measurements_of_ideal_311_volt_train() {
        let s = synth(&WaveformSpec::single_phase(50.0, 311.0), 1e6, 0.1).unwrap();
        let trains = threshold_pulses(&s, &frontend(15.0));
        let ms = measure(&trains[0]).unwrap();
        assert_eq!(ms.len(), trains[0].pulses.len());
        for m in &ms {
            assert!((m.t_h_s * 1e6 - 153.585).abs() < 1e-3);
            assert!((m.frequency_hz - 50.0).abs() < 1e-9);
            assert_eq!(m.quality, Quality::Ok);
        }
    }

    #[test]
    fn frequency_step_is_tracked_within_a_half_period() {
        let mut spec = WaveformSpec::single_phase(50.0, 311.0);
        spec.events.push(Event {
            at_seconds: 0.055,
            kind: EventKind::FrequencyStep { new_hz: 60.0 },
        });
        let s = synth(&spec, 1e6, 0.15).unwrap();
        let ms = measure(&threshold_pulses(&s, &frontend(15.0))[0]).unwrap();
        for m in &ms {
            if m.center_time_s < 0.055 {
                assert!((m.frequency_hz - 50.0).abs() < 1e-6);
            }
        }
        // Crossing at 60 ms, then every 8.33 ms.
        let first_after = ms.iter().position(|m| m.center_time_s > 0.055).unwrap();
        let step = &ms[first_after];
        assert!((step.center_time_s - (0.055 + 0.25 / 60.0)).abs() < 1e-9);
        for m in &ms[first_after + 1..] {
            assert!((m.frequency_hz - 60.0).abs() < 1e-6, "{m:?}");
            assert_eq!(m.quality, Quality::Ok);
        }
        assert!(ms[first_after].quality == Quality::LowConfidence);
    }

    fn three_phase_tags(spec: &WaveformSpec, dur: f64) -> Vec<HalfCycleMeasurement> {
        let s = synth(spec, 1e6, dur).unwrap();
        let trains = threshold_pulses(&s, &frontend(15.0));
        let combined = combine(&trains);
        assign_phase(&combined.train, &trains).unwrap()
    }

    #[test]
    fn assign_phase_balanced_order() {
        let ms = three_phase_tags(&WaveformSpec::three_phase(50.0, [311.0; 3]), 0.1);
        let in_period: Vec<Label> = ms
            .iter()
            .filter(|m| m.center_time_s > 0.0199 && m.center_time_s < 0.0399)
            .map(|m| m.channel_label)
            .collect();
        assert_eq!(
            in_period,
            vec![Label::A, Label::C, Label::B, Label::A, Label::C, Label::B]
        );
        assert!(ms.iter().all(|m| m.quality == Quality::Ok));
        assert!(ms.iter().all(|m| (m.frequency_hz - 50.0).abs() < 1e-6));
    }

    #[test]
    fn assign_phase_swapped_order() {
        let mut spec = WaveformSpec::three_phase(50.0, [311.0; 3]);
        spec.phases[0].phase_offset_deg = -120.0;
        spec.phases[1].phase_offset_deg = 0.0;
        let ms = three_phase_tags(&spec, 0.1);
        let in_period: Vec<Label> = ms
            .iter()
            .filter(|m| m.center_time_s > 0.0199 && m.center_time_s < 0.0399)
            .map(|m| m.channel_label)
            .collect();
        assert_eq!(
            in_period,
            vec![Label::B, Label::C, Label::A, Label::B, Label::C, Label::A]
        );
    }

    #[test]
    fn assign_phase_single_phase_and_unmatched() {
        let s = synth(&WaveformSpec::single_phase(50.0, 311.0), 1e5, 0.1).unwrap();
        let trains = threshold_pulses(&s, &frontend(15.0));
        let ms = assign_phase(&combine(&trains).train, &trains).unwrap();
        assert_eq!(ms, measure(&trains[0]).unwrap());

        let stray = train(vec![pulse(1.0, 2.0)]);
        assert!(matches!(
            assign_phase(&stray, &trains),
            Err(CaptureError::UnmatchedPulse { .. })
        ));
    }

    #[test]
    fn assign_phase_merged_pulses_carry_all_labels() {
        // A's wide pulses swallow the neighbouring B and C pulses.
        let ms = three_phase_tags(&WaveformSpec::three_phase(50.0, [16.0, 311.0, 311.0]), 0.1);
        assert!(ms.iter().any(|m| m.quality == Quality::Merged));
        for label in [Label::A, Label::B, Label::C] {
            assert!(ms.iter().any(|m| m.channel_label == label));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn deglitch_is_identity_on_clean_trains(v_p in 30.0f64..440.0, f in 31.0f64..300.0) {
            let s = synth(&WaveformSpec::single_phase(f, v_p), 1e5, 5.0 / f).unwrap();
            let t = &threshold_pulses(&s, &frontend(15.0))[0];
            let cfg = CaptureConfig { timer_hz: 0.0, min_pulse_width_s: 10e-6, merge_gap_s: 10e-6 };
            prop_assert_eq!(measure(&deglitch(t, &cfg)).unwrap(), measure(t).unwrap());
        }

        #[test]
        fn quantized_width_error_within_two_ticks(v_p in 20.0f64..440.0, f in 31.0f64..300.0, offset in 0.0f64..1.0) {
            let mut spec = WaveformSpec::single_phase(f, v_p);
            spec.phases[0].phase_offset_deg = offset * 360.0;
            let s = synth(&spec, 1e6, 4.0 / f).unwrap();
            let t = &threshold_pulses(&s, &frontend(15.0))[0];
            let cfg = CaptureConfig::default();
            let q = quantize(t, &cfg);
            let ideal = 2.0 * (15.0 / v_p).asin() / (2.0 * PI * f);
            let ms = measure(&q).unwrap();
            prop_assert_eq!(ms.len(), t.pulses.len());
            for m in &ms {
                prop_assert!((m.width_s - ideal).abs() <= 2.0 / cfg.timer_hz);
                prop_assert!((m.frequency_hz - f).abs() / f < 2.0 / cfg.timer_hz * 2.0 * f);
            }
        }

        #[test]
        fn label_multiset_per_period(v_p in 60.0f64..440.0, f in 40.0f64..70.0, phase in 0.0f64..360.0) {
            let mut spec = WaveformSpec::three_phase(f, [v_p; 3]);
            for p in &mut spec.phases {
                p.phase_offset_deg += phase;
            }
            let ms = three_phase_tags(&spec, 4.0 / f);
            let period = 1.0 / f;
            let mut counts = std::collections::BTreeMap::new();
            for m in ms.iter().filter(|m| m.center_time_s >= period && m.center_time_s < 2.0 * period) {
                *counts.entry(m.channel_label).or_insert(0) += 1;
            }
            prop_assert_eq!(counts.get(&Label::A), Some(&2));
            prop_assert_eq!(counts.get(&Label::B), Some(&2));
            prop_assert_eq!(counts.get(&Label::C), Some(&2));
        }
    }
}
