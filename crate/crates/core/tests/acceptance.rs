//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::process::ExitCode;

use pulsepeak::analyzer::PhaseOrder;
use pulsepeak::capture::HalfCycleMeasurement;
use pulsepeak::estimator::{
    peak_approx, peak_exact, EstimateError, EstimatorConfig, EstimatorMode,
};
use pulsepeak::experiment::{self, ExperimentConfig, ExperimentKind};
use pulsepeak::io::Table;
use pulsepeak::pipeline::{self, PipelineConfig};
use pulsepeak::siggen::WaveformSpec;
use pulsepeak::{CrossingDirection, Label, Quality};

type Outcome = Result<String, String>;

const V_H: f64 = 15.0;

/// Ideal pulse width of a pure sine: time spent inside ±V_h around a zero.
fn closed_form_width(v_p: f64, f: f64) -> f64 {
    2.0 * (V_H / v_p).asin() / (TAU * f)
}

fn measurement(t_h: f64, f: f64) -> HalfCycleMeasurement {
    HalfCycleMeasurement {
        channel_label: Label::A,
        center_time_s: 0.0,
        width_s: 2.0 * t_h,
        t_h_s: t_h,
        frequency_hz: f,
        crossing_direction: CrossingDirection::Up,
        quality: Quality::Ok,
    }
}

fn table(out: &experiment::ExperimentOutput, name: &str) -> Table {
    let t = out
        .tables
        .iter()
        .find(|t| t.name == name)
        .expect("table present");
    Table::parse(&t.text).expect("parsable table")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn round_trip_exactness() -> Outcome {
    let mut cfg = ExperimentConfig {
        pipeline: PipelineConfig::ideal(),
        ..Default::default()
    };
    cfg.linearity.interior_bound_volts = 1e-6;
    cfg.linearity.boundary_bound_volts = 1e-6;
    let out = experiment::run_linearity(&cfg).map_err(|e| e.to_string())?;
    let t = table(&out, "linearity.csv");
    let v = t.floats("v_true").unwrap();
    let err = t.floats("err_exact").unwrap();
    let max = err
        .iter()
        .map(|e| e.map_or(f64::INFINITY, f64::abs))
        .fold(0.0, f64::max);

    // The measured widths themselves follow the closed form.
    let mut width_dev = 0.0f64;
    for &v_p in &[50.0, 311.0, 440.0] {
        let run = pipeline::run(
            &WaveformSpec::single_phase(50.0, v_p),
            &PipelineConfig::ideal(),
            0.06,
        )
        .map_err(|e| e.to_string())?;
        for m in &run.measurements {
            width_dev = width_dev.max((m.width_s - closed_form_width(v_p, 50.0)).abs());
        }
    }
    check(
        v.len() == 40 && max < 1e-6 && width_dev < 1e-12,
        format!(
            "{} points, max |error| {max:.3e} V, max width deviation {width_dev:.3e} s",
            v.len()
        ),
    )
}

fn linearity_envelope() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.pipeline.estimator.mode = EstimatorMode::Approximate;
    cfg.pipeline.estimator.a_volts_squared = Some(V_H * V_H / 6.0);
    let out = experiment::run_linearity(&cfg).map_err(|e| e.to_string())?;
    let s = &out.summary;
    let interior = s.check("interior_max_error_volts").unwrap();
    let boundary = s.check("boundary_max_error_volts").unwrap();
    check(
        s.passed(),
        format!(
            "interior max {:.3} V (< 0.2), boundary max {:.3} V (< 0.5), timer 1 MHz",
            interior.value, boundary.value
        ),
    )
}

/// Worst-case first-order error at one point: width and spacing each off
/// by one tick.
fn derivative_bound(v_p: f64, f: f64, tick: f64) -> f64 {
    let theta = (V_H / v_p).asin();
    let dv_dtheta = V_H * theta.cos() / theta.sin().powi(2);
    // θ = π·f·w: ∂θ/∂w = π f, ∂θ/∂f = π w = θ / f.
    let width_term = dv_dtheta * PI * f * tick;
    let df = f * 2.0 * f * tick;
    let freq_term = dv_dtheta * theta / f * df;
    width_term + freq_term
}

fn frequency_flatness() -> Outcome {
    let mut ideal = ExperimentConfig::default();
    ideal.pipeline = PipelineConfig::ideal();
    let out = experiment::run_frequency(&ideal).map_err(|e| e.to_string())?;
    let ideal_spread = out.summary.check("spread_volts").unwrap().value;

    let quantized = ExperimentConfig::default();
    let out_q = experiment::run_frequency(&quantized).map_err(|e| e.to_string())?;
    let spread = out_q.summary.check("spread_volts").unwrap().value;
    let oracle = derivative_bound(311.0, 300.0, 1e-6);
    let t = table(&out_q, "frequency.csv");
    let f = t.floats("freq_hz").unwrap();
    let csv_bound_300 =
        t.floats("bound").unwrap()[f.iter().position(|x| *x == Some(300.0)).unwrap()].unwrap();
    // The table's corner-evaluated bound agrees with the derivative oracle
    // to first order.
    let bound_agrees = (csv_bound_300 - oracle).abs() / oracle < 0.05;
    check(
        ideal_spread < 1e-6 && out.summary.passed() && out_q.summary.passed() && spread <= 2.0 * oracle && bound_agrees,
        format!(
            "ideal spread {ideal_spread:.3e} V (< 1e-6); 1 MHz spread {spread:.3} V vs 2×{oracle:.3} V from dV/dw at 300 Hz (table bound {csv_bound_300:.3} V)"
        ),
    )
}

fn half_period_latency() -> Outcome {
    let cfg = ExperimentConfig::default();
    let out = experiment::run_sag_latency(&cfg).map_err(|e| e.to_string())?;
    // Event log oracle: step at 31 ms, first zero crossing after it at
    // 40 ms; that pulse completes t_h later.
    let sc = &cfg.sag;
    let zero = 0.04;
    let t_h = closed_form_width(sc.to_volts, sc.frequency_hz) / 2.0;
    let deadline = zero + 0.5 / sc.frequency_hz + t_h;
    let t = table(&out, "sag.csv");
    let avail: Vec<f64> = t
        .floats("available_s")
        .unwrap()
        .into_iter()
        .flatten()
        .collect();
    let volts: Vec<f64> = t.floats("v_p").unwrap().into_iter().flatten().collect();
    let arrival = avail
        .iter()
        .zip(&volts)
        .filter(|(a, v)| **a > sc.at_s && ((**v - sc.to_volts) / sc.to_volts).abs() <= 0.01)
        .map(|(a, _)| *a)
        .fold(f64::INFINITY, f64::min);
    check(
        out.summary.passed() && arrival <= deadline,
        format!(
            "first 1% estimate at {:.5} s, deadline {:.5} s (zero crossing {zero} s + T/2 + {:.1} µs)",
            arrival,
            deadline,
            t_h * 1e6
        ),
    )
}

fn sequence_invariance() -> Outcome {
    let cfg = ExperimentConfig::default();
    let out = experiment::run_sequence(&cfg).map_err(|e| e.to_string())?;
    let s = &out.summary;
    let swapped = PhaseOrder::canonical(vec![Label::B, Label::A, Label::C], Label::A);
    let after = s
        .notes
        .iter()
        .find(|(k, _)| k == "order_after")
        .map(|(_, v)| v.clone());
    check(
        s.passed() && after.as_deref() == Some(swapped.to_string().as_str()),
        format!(
            "order A-B-C -> {} (cycle of B-A-C) after {:.4} s; per-label delta {:.2e} V",
            after.unwrap_or_default(),
            s.check("flip_latency_s").unwrap().value,
            s.check("max_amplitude_delta_volts").unwrap().value
        ),
    )
}

fn unbalance_recovery() -> Outcome {
    let out = experiment::run_unbalance(&ExperimentConfig::default()).map_err(|e| e.to_string())?;
    let s = &out.summary;
    let failing: Vec<&str> = s
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    check(
        s.passed(),
        format!(
            "four-wire max error {:.2e} V, three-wire {:.2e} V, flags ok; failing: {failing:?}",
            s.check("four-wire_max_amplitude_error_volts")
                .unwrap()
                .value,
            s.check("three-wire_max_amplitude_error_volts")
                .unwrap()
                .value
        ),
    )
}

/// Threshold crossing of `v` inside `[lo, hi]` by bisection.
fn bisect(v: impl Fn(f64) -> f64, level: f64, mut lo: f64, mut hi: f64) -> f64 {
    let rising = v(hi) > v(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (v(mid) < level) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn harmonic_mitigation() -> Outcome {
    let cfg = ExperimentConfig::default();
    let out = experiment::run_harmonics(&cfg).map_err(|e| e.to_string())?;
    let s = &out.summary;

    // Oracle: exact distorted crossings of V(sin θ + 0.1 sin 5θ) around the
    // upward zero at t = 0, inverted as if sinusoidal.
    let (v_p, f) = (311.0, 50.0);
    let w = TAU * f;
    let v = |t: f64| v_p * ((w * t).sin() + 0.1 * (5.0 * w * t).sin());
    let quarter = 0.25 / f;
    let width = bisect(v, V_H, 0.0, quarter / 2.0) - bisect(v, -V_H, -quarter / 2.0, 0.0);
    let oracle_estimate = V_H / (PI * f * width).sin();

    let mut spec = WaveformSpec::single_phase(f, v_p);
    spec.harmonics = cfg.harmonics.harmonics.clone();
    let ideal = pipeline::run(&spec, &PipelineConfig::ideal(), 0.1).map_err(|e| e.to_string())?;
    let dev = ideal
        .estimates
        .iter()
        .filter(|e| e.quality == Quality::Ok)
        .map(|e| (e.v_p_volts - oracle_estimate).abs())
        .fold(0.0, f64::max);

    let unmitigated = s
        .notes
        .iter()
        .find(|(k, _)| k == "unmitigated_max_error_volts")
        .unwrap()
        .1
        .clone();
    let mitigated = s.check("mitigated_max_error_volts").unwrap().value;
    check(
        s.passed() && dev < 1e-6,
        format!(
            "unmitigated error {unmitigated} V (oracle estimate {oracle_estimate:.3} V, pipeline within {dev:.1e} V), mitigated {mitigated:.4} V ({:.3}% of V_p)",
            100.0 * mitigated / v_p
        ),
    )
}

fn approximation_accuracy() -> Outcome {
    let cfg = EstimatorConfig::default();
    let approx_cfg = EstimatorConfig {
        mode: EstimatorMode::Approximate,
        ..cfg.clone()
    };
    let f = 50.0;
    let mut worst = 0.0f64;
    let n = 100_000;
    for k in 1..=n {
        let ratio = 0.3 * k as f64 / n as f64;
        let v_p = V_H / ratio;
        let m = measurement(closed_form_width(v_p, f) / 2.0, f);
        let exact = peak_exact(&m, &cfg).map_err(|e| e.to_string())?.v_p_volts;
        let approx = peak_approx(&m, &approx_cfg)
            .map_err(|e| e.to_string())?
            .v_p_volts;
        worst = worst.max((approx - exact).abs() / exact);
    }
    check(
        worst <= 1e-3,
        format!(
            "max relative difference {:.4}% over {n} ratios in (0, 0.3]",
            worst * 100.0
        ),
    )
}

fn monotonicity_and_boundary() -> Outcome {
    // Widths measured through the full front end strictly decrease with V_p.
    let mut last = f64::INFINITY;
    let mut monotone = true;
    let mut v_p = 16.0;
    while v_p <= 440.0 {
        let out = pipeline::run(
            &WaveformSpec::single_phase(50.0, v_p),
            &PipelineConfig::ideal(),
            0.045,
        )
        .map_err(|e| e.to_string())?;
        let w = out.measurements[0].width_s;
        monotone &= w < last;
        last = w;
        v_p += 7.0;
    }

    let cfg = EstimatorConfig::default();
    let f = 50.0;
    let boundary =
        peak_exact(&measurement(FRAC_PI_2 / (TAU * f), f), &cfg).map_err(|e| e.to_string())?;
    let beyond = peak_exact(&measurement(1.001 * FRAC_PI_2 / (TAU * f), f), &cfg);
    let undervoltage = matches!(beyond, Err(EstimateError::Undervoltage { .. }));

    // Below the threshold the chain diagnoses rather than estimates.
    let under = pipeline::run(
        &WaveformSpec::single_phase(50.0, 14.0),
        &PipelineConfig::ideal(),
        0.1,
    )
    .map_err(|e| e.to_string())?;
    let silent = under.estimates.is_empty() && !under.diagnostics.is_empty();

    check(
        monotone && boundary.v_p_volts == V_H && undervoltage && silent,
        format!(
            "width strictly decreasing: {monotone}; ω·t_h = π/2 -> {} V; beyond -> undervoltage: {undervoltage}; 14 V input -> no estimate: {silent}",
            boundary.v_p_volts
        ),
    )
}

fn determinism() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.frequency.step_hz = 13.0;
    let kinds = [
        ExperimentKind::Linearity,
        ExperimentKind::Frequency,
        ExperimentKind::Sequence,
        ExperimentKind::Harmonics,
        ExperimentKind::Unbalance,
        ExperimentKind::SagLatency,
    ];
    let mut tables = 0;
    for kind in kinds {
        let a = experiment::run(kind, &cfg).map_err(|e| e.to_string())?;
        let b = experiment::run(kind, &cfg).map_err(|e| e.to_string())?;
        if a.tables != b.tables || a.summary.to_csv() != b.summary.to_csv() {
            return Err(format!("{kind:?} output differs between runs"));
        }
        tables += a.tables.len();
    }
    Ok(format!(
        "{tables} tables byte-identical across repeated runs of all six experiments"
    ))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("round-trip exactness", round_trip_exactness),
        ("linearity envelope", linearity_envelope),
        ("frequency flatness", frequency_flatness),
        ("half-period latency", half_period_latency),
        ("sequence invariance", sequence_invariance),
        ("unbalance recovery", unbalance_recovery),
        ("harmonic mitigation", harmonic_mitigation),
        ("approximation accuracy", approximation_accuracy),
        ("monotonicity and boundary", monotonicity_and_boundary),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
