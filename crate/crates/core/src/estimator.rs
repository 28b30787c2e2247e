//! Pulse width to peak amplitude.
//!
//! With `θ = ω·t_h` the exact inversion is `V_p = V_h / sin θ`. The fast
//! form replaces `sin θ` by `θ` and corrects the result with a constant:
//! `V_n = V_h / θ`, `V_p = V_n + A / V_n`. Expanding `1/sin θ` to second
//! order gives `A = V_h² / 6`, which leaves a fourth-order residual.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use crate::capture::HalfCycleMeasurement;
use crate::label::{CrossingDirection, Label, Quality};

/// Relative slack on `θ = π/2` before a measurement counts as undervoltage.
const BOUNDARY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimateError {
    #[error("undervoltage on {label} at {time_s} s: ω·t_h = {theta} rad exceeds π/2, peak is at or below V_h")]
    Undervoltage {
        label: Label,
        time_s: f64,
        theta: f64,
    },
    #[error("invalid measurement on {label} at {time_s} s: ω·t_h = {theta} rad")]
    InvalidMeasurement {
        label: Label,
        time_s: f64,
        theta: f64,
    },
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    #[default]
    Exact,
    Approximate,
}

impl EstimatorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorMode::Exact => "exact",
            EstimatorMode::Approximate => "approximate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub v_h_volts: f64,
    #[serde(default)]
    pub mode: EstimatorMode,
    /// Correction constant of the fast form. Defaults to `V_h² / 6`.
    #[serde(default)]
    pub a_volts_squared: Option<f64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            v_h_volts: 15.0,
            mode: EstimatorMode::Exact,
            a_volts_squared: None,
        }
    }
}

impl EstimatorConfig {
    pub fn a(&self) -> f64 {
        self.a_volts_squared
            .unwrap_or_else(|| default_a(self.v_h_volts))
    }

    pub fn validate(&self) -> Result<(), EstimateError> {
        if !(self.v_h_volts > 0.0 && self.v_h_volts.is_finite()) {
            return Err(EstimateError::InvalidConfig("v_h_volts must be > 0".into()));
        }
        if !(self.a() >= 0.0 && self.a().is_finite()) {
            return Err(EstimateError::InvalidConfig(
                "a_volts_squared must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Second-order Taylor value of the correction constant.
pub fn default_a(v_h: f64) -> f64 {
    v_h * v_h / 6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakEstimate {
    pub channel_label: Label,
    /// Center of the measured pulse.
    pub time_s: f64,
    pub v_p_volts: f64,
    /// Uncorrected fast-form value; equals `v_p_volts` in exact mode.
    pub v_n_volts: f64,
    pub frequency_hz: f64,
    pub quality: Quality,
    pub crossing_direction: CrossingDirection,
    pub width_s: f64,
}

impl PeakEstimate {
    /// When the underlying pulse capture completed.
    pub fn available_s(&self) -> f64 {
        self.time_s + 0.5 * self.width_s
    }
}

fn phase_angle(m: &HalfCycleMeasurement) -> Result<f64, EstimateError> {
    let theta = TAU * m.frequency_hz * m.t_h_s;
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(EstimateError::InvalidMeasurement {
            label: m.channel_label,
            time_s: m.center_time_s,
            theta,
        });
    }
    if theta > FRAC_PI_2 * (1.0 + BOUNDARY_SLACK) {
        return Err(EstimateError::Undervoltage {
            label: m.channel_label,
            time_s: m.center_time_s,
            theta,
        });
    }
    Ok(theta.min(FRAC_PI_2))
}

fn estimate(m: &HalfCycleMeasurement, v_p: f64, v_n: f64, quality: Quality) -> PeakEstimate {
    PeakEstimate {
        channel_label: m.channel_label,
        time_s: m.center_time_s,
        v_p_volts: v_p,
        v_n_volts: v_n,
        frequency_hz: m.frequency_hz,
        quality,
        crossing_direction: m.crossing_direction,
        width_s: m.width_s,
    }
}

/// `V_p = V_h / sin(ω·t_h)`.
pub fn peak_exact(
    m: &HalfCycleMeasurement,
    config: &EstimatorConfig,
) -> Result<PeakEstimate, EstimateError> {
    let theta = phase_angle(m)?;
    let v_p = config.v_h_volts / theta.sin();
    Ok(estimate(m, v_p, v_p, m.quality))
}

/// `V_n = V_h / (ω·t_h)`, `V_p = V_n + A / V_n`. Outside `ω·t_h < 1` the
/// exact form is used and the quality is downgraded.
pub fn peak_approx(
    m: &HalfCycleMeasurement,
    config: &EstimatorConfig,
) -> Result<PeakEstimate, EstimateError> {
    let theta = phase_angle(m)?;
    if theta >= 1.0 {
        let mut e = peak_exact(m, config)?;
        e.quality = e.quality.worst(Quality::LowConfidence);
        return Ok(e);
    }
    let v_n = config.v_h_volts / theta;
    Ok(estimate(m, v_n + config.a() / v_n, v_n, m.quality))
}

/// Dispatches on the configured mode.
pub fn peak(
    m: &HalfCycleMeasurement,
    config: &EstimatorConfig,
) -> Result<PeakEstimate, EstimateError> {
    match config.mode {
        EstimatorMode::Exact => peak_exact(m, config),
        EstimatorMode::Approximate => peak_approx(m, config),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPair {
    pub true_v_p: f64,
    pub measured_t_h: f64,
    pub frequency_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub a_volts_squared: f64,
    pub used: usize,
    pub skipped: usize,
    /// Set when no usable pair was supplied and the Taylor default was returned.
    pub warning: Option<String>,
}

/// Least-squares `A` minimizing `Σ (V_n + A/V_n − V_p)²`, i.e.
/// `A = Σ (V_p − V_n)/V_n / Σ 1/V_n²`.
pub fn calibrate_a(pairs: &[CalibrationPair], v_h: f64) -> Calibration {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut used = 0;
    for p in pairs {
        let theta = TAU * p.frequency_hz * p.measured_t_h;
        if !(theta > 0.0 && theta <= FRAC_PI_2) || !p.true_v_p.is_finite() {
            continue;
        }
        let v_n = v_h / theta;
        num += (p.true_v_p - v_n) / v_n;
        den += 1.0 / (v_n * v_n);
        used += 1;
    }
    let skipped = pairs.len() - used;
    if used == 0 {
        let warning = if pairs.is_empty() {
            "no calibration pairs, using V_h²/6".to_string()
        } else {
            format!("all {skipped} calibration pairs out of range, using V_h²/6")
        };
        return Calibration {
            a_volts_squared: default_a(v_h),
            used,
            skipped,
            warning: Some(warning),
        };
    }
    Calibration {
        a_volts_squared: num / den,
        used,
        skipped,
        warning: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn m(t_h: f64, f: f64) -> HalfCycleMeasurement {
        HalfCycleMeasurement {
            channel_label: Label::A,
            center_time_s: 0.01,
            width_s: 2.0 * t_h,
            t_h_s: t_h,
            frequency_hz: f,
            crossing_direction: CrossingDirection::Up,
            quality: Quality::Ok,
        }
    }

    fn exact_cfg() -> EstimatorConfig {
        EstimatorConfig::default()
    }

    fn approx_cfg(a: Option<f64>) -> EstimatorConfig {
        EstimatorConfig {
            mode: EstimatorMode::Approximate,
            a_volts_squared: a,
            ..EstimatorConfig::default()
        }
    }

    /// Ideal half-width for a sine of peak `v_p`.
    fn ideal_t_h(v_p: f64, v_h: f64, f: f64) -> f64 {
        (v_h / v_p).asin() / (2.0 * PI * f)
    }

    #[test]
    fn exact_hand_values() {
        let e = peak_exact(&m(153.585e-6, 50.0), &exact_cfg()).unwrap();
        assert!((2.0 * PI * 50.0 * 153.585e-6 - 0.048_250).abs() < 1e-6);
        assert!((e.v_p_volts - 311.0).abs() < 0.01);
        assert_eq!(e.v_n_volts, e.v_p_volts);
        let e = peak_exact(&m(479.27e-6, 50.0), &exact_cfg()).unwrap();
        assert!((e.v_p_volts - 100.0).abs() < 0.01);
    }

    #[test]
    fn quarter_period_boundary_gives_threshold() {
        let e = peak_exact(&m(0.005, 50.0), &exact_cfg()).unwrap();
        assert_eq!(e.v_p_volts, 15.0);
        let err = peak_exact(&m(0.0051, 50.0), &exact_cfg()).unwrap_err();
        assert!(matches!(err, EstimateError::Undervoltage { .. }));
        assert!(matches!(
            peak_exact(&m(0.0, 50.0), &exact_cfg()),
            Err(EstimateError::InvalidMeasurement { .. })
        ));
    }

    #[test]
    fn approximate_hand_values() {
        let e = peak_approx(&m(153.585e-6, 50.0), &approx_cfg(Some(37.5))).unwrap();
        assert!((e.v_n_volts - 310.879).abs() < 0.01);
        assert!((e.v_p_volts - 311.00).abs() < 0.01);
        let e = peak_approx(&m(479.27e-6, 50.0), &approx_cfg(Some(37.5))).unwrap();
        assert!((e.v_n_volts - 99.623).abs() < 0.001);
        assert!((e.v_p_volts - e.v_n_volts - 0.3764).abs() < 1e-3);
        assert!((e.v_p_volts - 99.999).abs() < 0.001);
    }

    #[test]
    fn zero_correction_is_plain_fast_form() {
        let e = peak_approx(&m(153.585e-6, 50.0), &approx_cfg(Some(0.0))).unwrap();
        assert_eq!(e.v_p_volts, e.v_n_volts);
    }

    #[test]
    fn approximate_falls_back_outside_small_angle() {
        // θ = 1.2 rad
        let t_h = 1.2 / (2.0 * PI * 50.0);
        let e = peak_approx(&m(t_h, 50.0), &approx_cfg(None)).unwrap();
        assert_eq!(e.quality, Quality::LowConfidence);
        assert!((e.v_p_volts - 15.0 / 1.2f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn default_a_is_taylor_value() {
        assert_eq!(default_a(15.0), 37.5);
        assert_eq!(approx_cfg(None).a(), 37.5);
        // V_p - V_n against V_h²/(6·V_n) far inside the small-angle region.
        let v_p = 4000.0;
        let v_n = 15.0 / (15.0f64 / v_p).asin();
        assert!(((v_p - v_n) * v_n - 37.5).abs() < 1e-3);
    }

    #[test]
    fn calibration_defaults_and_single_pair() {
        let c = calibrate_a(&[], 15.0);
        assert_eq!(c.a_volts_squared, 37.5);
        assert!(c.warning.is_some());

        let bad = CalibrationPair {
            true_v_p: 10.0,
            measured_t_h: 0.006,
            frequency_hz: 50.0,
        };
        let c = calibrate_a(&[bad], 15.0);
        assert_eq!((c.used, c.skipped), (0, 1));
        assert_eq!(c.a_volts_squared, 37.5);

        let t_h = ideal_t_h(311.0, 15.0, 50.0);
        let c = calibrate_a(
            &[CalibrationPair {
                true_v_p: 311.0,
                measured_t_h: t_h,
                frequency_hz: 50.0,
            }],
            15.0,
        );
        let v_n = 15.0 / (2.0 * PI * 50.0 * t_h);
        assert!((c.a_volts_squared - (311.0 - v_n) * v_n).abs() < 1e-9);
        assert!(c.warning.is_none());
    }

    #[test]
    fn calibration_over_sweep_near_taylor() {
        let pairs: Vec<CalibrationPair> = (5..=44)
            .map(|k| {
                let v = 10.0 * k as f64;
                CalibrationPair {
                    true_v_p: v,
                    measured_t_h: ideal_t_h(v, 15.0, 50.0),
                    frequency_hz: 50.0,
                }
            })
            .collect();
        let c = calibrate_a(&pairs, 15.0);
        assert_eq!(c.used, 40);
        assert!(
            (c.a_volts_squared - 37.5).abs() / 37.5 < 0.05,
            "{}",
            c.a_volts_squared
        );
    }

    proptest! {
        #[test]
        fn exact_round_trip(v_p in 15.001f64..5000.0, f in 1.0f64..1000.0, v_h in 1.0f64..15.0) {
            let cfg = EstimatorConfig { v_h_volts: v_h, ..exact_cfg() };
            let v_p = v_p.max(v_h * 1.0001);
            let e = peak_exact(&m(ideal_t_h(v_p, v_h, f), f), &cfg).unwrap();
            prop_assert!((e.v_p_volts - v_p).abs() / v_p < 1e-12);
        }

        #[test]
        fn exact_decreasing_in_t_h(theta in 0.001f64..1.5, d in 0.0001f64..0.07) {
            let f = 50.0;
            let t = |th: f64| th / (2.0 * PI * f);
            let a = peak_exact(&m(t(theta), f), &exact_cfg()).unwrap().v_p_volts;
            let b = peak_exact(&m(t(theta + d), f), &exact_cfg()).unwrap().v_p_volts;
            prop_assert!(b < a);
        }

        #[test]
        fn frequency_invariant(ratio in 0.01f64..0.99, f1 in 1.0f64..1000.0, f2 in 1.0f64..1000.0) {
            let v_p = 15.0 / ratio;
            let a = peak_exact(&m(ideal_t_h(v_p, 15.0, f1), f1), &exact_cfg()).unwrap().v_p_volts;
            let b = peak_exact(&m(ideal_t_h(v_p, 15.0, f2), f2), &exact_cfg()).unwrap().v_p_volts;
            prop_assert!((a - b).abs() / v_p < 1e-12);
        }

        #[test]
        fn corrected_never_below_fast_form(theta in 0.001f64..0.999, a in 0.0f64..100.0) {
            let t_h = theta / (2.0 * PI * 50.0);
            let e = peak_approx(&m(t_h, 50.0), &approx_cfg(Some(a))).unwrap();
            prop_assert!(e.v_p_volts >= e.v_n_volts);
        }
    }
}
