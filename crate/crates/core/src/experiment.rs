//! Reproduction scenarios behind the command-line harness.
//!
//! Each `run_*` function drives the full chain (synthesis, front end,
//! capture, estimator, analyzer) and returns CSV tables. Verdicts are then
//! computed by the matching `*_verdict` function from the CSV text alone,
//! using the constants recorded in the table's comment header.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyzer::{AnalyzerConfig, PhaseOrder, Wiring};
use crate::estimator::{
    self, calibrate_a, CalibrationPair, EstimatorConfig, EstimatorMode, PeakEstimate,
};
use crate::frontend::LowPassSpec;
use crate::io::{self, IoError, Table};
use crate::label::{Label, Quality};
use crate::pipeline::{self, PipelineConfig, PipelineError, PipelineOutput};
use crate::siggen::{self, Event, EventKind, HarmonicSpec, SampleStream, WaveformSpec};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("invalid experiment configuration: {0}")]
    Invalid(String),
}

impl From<siggen::SpecError> for ExperimentError {
    fn from(e: siggen::SpecError) -> Self {
        ExperimentError::Pipeline(e.into())
    }
}

type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Linearity,
    Frequency,
    Sequence,
    Harmonics,
    Unbalance,
    SagLatency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearitySweep {
    pub start_volts: f64,
    pub stop_volts: f64,
    pub step_volts: f64,
    pub frequency_hz: f64,
    /// Simulated periods per sweep point.
    pub periods: f64,
    pub interior_bound_volts: f64,
    pub boundary_bound_volts: f64,
}

impl Default for LinearitySweep {
    fn default() -> Self {
        Self {
            start_volts: 50.0,
            stop_volts: 440.0,
            step_volts: 10.0,
            frequency_hz: 50.0,
            periods: 5.0,
            interior_bound_volts: 0.2,
            boundary_bound_volts: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrequencySweep {
    pub start_hz: f64,
    pub stop_hz: f64,
    pub step_hz: f64,
    pub amplitude_volts: f64,
    pub periods: f64,
}

impl Default for FrequencySweep {
    fn default() -> Self {
        Self {
            start_hz: 31.0,
            stop_hz: 300.0,
            step_hz: 1.0,
            amplitude_volts: 311.0,
            periods: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceScenario {
    pub amplitude_volts: f64,
    pub frequency_hz: f64,
    pub swap_at_s: f64,
    /// Output channel `i` carries source phase `permutation[i]` after the swap.
    pub permutation: Vec<Label>,
    pub duration_s: f64,
    /// Overrides the pipeline's timer when set.
    pub timer_hz: Option<f64>,
    pub tolerance_volts: f64,
}

impl Default for SequenceScenario {
    fn default() -> Self {
        Self {
            amplitude_volts: 311.0,
            frequency_hz: 50.0,
            swap_at_s: 0.045,
            permutation: vec![Label::B, Label::A, Label::C],
            duration_s: 0.1,
            timer_hz: Some(0.0),
            tolerance_volts: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnbalanceScenario {
    pub amplitudes_volts: [f64; 3],
    /// Added to the nominal 0°, -120°, +120° offsets.
    pub phase_deviation_deg: [f64; 3],
    pub frequency_hz: f64,
    pub duration_s: f64,
    pub timer_hz: Option<f64>,
    pub tolerance_volts: f64,
}

impl Default for UnbalanceScenario {
    fn default() -> Self {
        Self {
            amplitudes_volts: [311.0, 280.0, 340.0],
            phase_deviation_deg: [0.0, 0.0, -4.0],
            frequency_hz: 50.0,
            duration_s: 0.1,
            timer_hz: Some(0.0),
            tolerance_volts: 0.01,
        }
    }
}

/// Front-end filtering and deglitching applied in the mitigated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Mitigation {
    pub prefilter: Option<LowPassSpec>,
    pub comparator_filter: Option<LowPassSpec>,
    pub min_pulse_width_s: f64,
    pub merge_gap_s: f64,
}

impl Default for Mitigation {
    fn default() -> Self {
        Self {
            prefilter: Some(LowPassSpec::second_order(75.0)),
            comparator_filter: Some(LowPassSpec::second_order(75.0)),
            min_pulse_width_s: 20e-6,
            merge_gap_s: 30e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarmonicsScenario {
    pub amplitude_volts: f64,
    pub frequency_hz: f64,
    pub harmonics: Vec<HarmonicSpec>,
    pub mitigation: Mitigation,
    pub settle_s: f64,
    pub duration_s: f64,
    pub bound_fraction: f64,
}

impl Default for HarmonicsScenario {
    fn default() -> Self {
        Self {
            amplitude_volts: 311.0,
            frequency_hz: 50.0,
            harmonics: vec![HarmonicSpec {
                order: 5,
                relative_amplitude: 0.1,
                phase_deg: 0.0,
            }],
            mitigation: Mitigation::default(),
            settle_s: 0.1,
            duration_s: 0.3,
            bound_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SagScenario {
    pub from_volts: f64,
    pub to_volts: f64,
    pub at_s: f64,
    pub frequency_hz: f64,
    pub duration_s: f64,
    pub tolerance_fraction: f64,
}

impl Default for SagScenario {
    fn default() -> Self {
        Self {
            from_volts: 311.0,
            to_volts: 150.0,
            at_s: 0.031,
            frequency_hz: 50.0,
            duration_s: 0.08,
            tolerance_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub pipeline: PipelineConfig,
    pub analyzer: AnalyzerConfig,
    pub linearity: LinearitySweep,
    pub frequency: FrequencySweep,
    pub sequence: SequenceScenario,
    pub unbalance: UnbalanceScenario,
    pub harmonics: HarmonicsScenario,
    pub sag: SagScenario,
    /// Waveform for `synth` and `detect`; 311 V at 50 Hz when absent.
    pub waveform: Option<WaveformSpec>,
    pub duration_s: f64,
    pub out_dir: Option<std::path::PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            pipeline: PipelineConfig::default(),
            analyzer: AnalyzerConfig::default(),
            linearity: LinearitySweep::default(),
            frequency: FrequencySweep::default(),
            sequence: SequenceScenario::default(),
            unbalance: UnbalanceScenario::default(),
            harmonics: HarmonicsScenario::default(),
            sag: SagScenario::default(),
            waveform: None,
            duration_s: 0.1,
            out_dir: None,
        }
    }
}

fn sweep_points(start: f64, stop: f64, step: f64, what: &str) -> Result<Vec<f64>> {
    if !(start.is_finite() && stop.is_finite() && start <= stop) {
        return Err(ExperimentError::Invalid(format!(
            "{what}: empty range {start}..{stop}"
        )));
    }
    if !(step > 0.0) {
        return Err(ExperimentError::Invalid(format!(
            "{what}: step must be > 0"
        )));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        sweep_points(
            self.linearity.start_volts,
            self.linearity.stop_volts,
            self.linearity.step_volts,
            "linearity",
        )?;
        sweep_points(
            self.frequency.start_hz,
            self.frequency.stop_hz,
            self.frequency.step_hz,
            "frequency",
        )?;
        Ok(())
    }

    pub fn waveform(&self) -> WaveformSpec {
        self.waveform
            .clone()
            .unwrap_or_else(|| WaveformSpec::single_phase(50.0, 311.0))
    }
}

/// A named CSV (or JSON-lines) document.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub name: String,
    pub text: String,
}

impl CsvTable {
    fn new(name: &str, text: String) -> Self {
        Self {
            name: name.to_string(),
            text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub checks: Vec<Check>,
    /// Informational values that carry no verdict.
    pub notes: Vec<(String, String)>,
}

impl Summary {
    fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.to_string(),
            checks: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn at_most(&mut self, name: &str, value: f64, bound: f64) {
        self.checks.push(Check {
            name: name.into(),
            value,
            bound,
            passed: value <= bound,
        });
    }

    fn below(&mut self, name: &str, value: f64, bound: f64) {
        self.checks.push(Check {
            name: name.into(),
            value,
            bound,
            passed: value < bound,
        });
    }

    fn holds(&mut self, name: &str, ok: bool) {
        self.checks.push(Check {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            bound: 1.0,
            passed: ok,
        });
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.into(), value.to_string()));
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut rows: Vec<Vec<String>> = self
            .checks
            .iter()
            .map(|c| {
                vec![
                    c.name.clone(),
                    c.value.to_string(),
                    c.bound.to_string(),
                    if c.passed { "pass" } else { "fail" }.to_string(),
                ]
            })
            .collect();
        rows.extend(
            self.notes
                .iter()
                .map(|(k, v)| vec![k.clone(), v.clone(), String::new(), "info".to_string()]),
        );
        io::write_table(
            &format!("# experiment={}\n", self.experiment),
            &["check", "value", "bound", "verdict"],
            &rows,
        )
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub tables: Vec<CsvTable>,
    pub summary: Summary,
}

fn header(config: &PipelineConfig, extra: &[(&str, String)]) -> String {
    let mut pairs = io::pipeline_constants(config);
    pairs.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    io::header_line(&pairs)
}

fn with_timer(config: &PipelineConfig, timer_hz: Option<f64>) -> PipelineConfig {
    let mut c = config.clone();
    if let Some(t) = timer_hz {
        c.capture.timer_hz = t;
    }
    c
}

fn with_mode(config: &PipelineConfig, mode: EstimatorMode) -> PipelineConfig {
    PipelineConfig {
        estimator: EstimatorConfig {
            mode,
            ..config.estimator.clone()
        },
        ..config.clone()
    }
}

fn ok_estimates(out: &PipelineOutput, analyzer: &AnalyzerConfig) -> Vec<PeakEstimate> {
    // The analyzer passes estimates through in time order.
    out.analyze(analyzer.clone())
        .estimates()
        .iter()
        .filter(|e| e.quality == Quality::Ok)
        .cloned()
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Signed deviation with the largest magnitude.
fn worst(xs: &[f64], truth: f64) -> f64 {
    xs.iter()
        .map(|x| x - truth)
        .fold(0.0, |w, d| if d.abs() > w.abs() { d } else { w })
}

fn ok_rows(table: &Table) -> Result<Vec<bool>> {
    Ok(table
        .strings("quality")?
        .into_iter()
        .map(|q| q == "ok")
        .collect())
}

fn required(values: Vec<Option<f64>>, name: &str) -> Result<Vec<f64>> {
    values
        .into_iter()
        .map(|v| v.ok_or_else(|| ExperimentError::Invalid(format!("empty `{name}` cell"))))
        .collect()
}

fn find(tables: &[CsvTable], name: &str) -> Result<Table> {
    let t = tables
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| ExperimentError::Invalid(format!("missing table {name}")))?;
    Ok(Table::parse(&t.text)?)
}

struct AmplitudePoint {
    exact: Vec<f64>,
    approx: Vec<f64>,
    v_n: Vec<f64>,
}

fn amplitude_point(
    pipeline_cfg: &PipelineConfig,
    analyzer: &AnalyzerConfig,
    spec: &WaveformSpec,
    duration_s: f64,
) -> Result<AmplitudePoint> {
    let out = pipeline::run(spec, pipeline_cfg, duration_s)?;
    let passed = ok_estimates(&out, analyzer);
    let measured: Vec<_> = out
        .measurements
        .iter()
        .filter(|m| {
            passed
                .iter()
                .any(|e| e.time_s == m.center_time_s && e.channel_label == m.channel_label)
        })
        .cloned()
        .collect();
    let (exact, _) = pipeline::estimate(
        &measured,
        &with_mode(pipeline_cfg, EstimatorMode::Exact),
        0.0,
    )?;
    let (approx, _) = pipeline::estimate(
        &measured,
        &with_mode(pipeline_cfg, EstimatorMode::Approximate),
        0.0,
    )?;
    Ok(AmplitudePoint {
        exact: exact.iter().map(|e| e.v_p_volts).collect(),
        v_n: approx.iter().map(|e| e.v_n_volts).collect(),
        approx: approx.iter().map(|e| e.v_p_volts).collect(),
    })
}

/// Amplitude sweep at fixed frequency: exact and approximate estimates per
/// point.
pub fn run_linearity(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let sw = &cfg.linearity;
    let points = sweep_points(sw.start_volts, sw.stop_volts, sw.step_volts, "linearity")?;
    let duration = sw.periods / sw.frequency_hz;
    let results: Vec<Result<AmplitudePoint>> = points
        .par_iter()
        .map(|&v| {
            amplitude_point(
                &cfg.pipeline,
                &cfg.analyzer,
                &WaveformSpec::single_phase(sw.frequency_hz, v),
                duration,
            )
        })
        .collect();

    let mut rows = Vec::new();
    for (&v, r) in points.iter().zip(results) {
        let row = match r {
            Ok(p) if !p.exact.is_empty() => vec![
                v.to_string(),
                mean(&p.exact).to_string(),
                mean(&p.approx).to_string(),
                mean(&p.v_n).to_string(),
                worst(&p.exact, v).to_string(),
                worst(&p.approx, v).to_string(),
                p.exact.len().to_string(),
                "ok".to_string(),
            ],
            Ok(_) => failure_row(v, 8, "no-measurement"),
            Err(ExperimentError::Pipeline(e)) => failure_row(v, 8, &error_status(&e)),
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    let head = header(
        &cfg.pipeline,
        &[
            ("frequency_hz", sw.frequency_hz.to_string()),
            ("interior_bound", sw.interior_bound_volts.to_string()),
            ("boundary_bound", sw.boundary_bound_volts.to_string()),
        ],
    );
    let table = CsvTable::new(
        "linearity.csv",
        io::write_table(
            &head,
            &[
                "v_true",
                "v_exact",
                "v_approx",
                "v_n",
                "err_exact",
                "err_approx",
                "half_cycles",
                "status",
            ],
            &rows,
        ),
    );
    let tables = vec![table];
    let summary = linearity_verdict(&tables)?;
    Ok(ExperimentOutput { tables, summary })
}

fn failure_row(key: f64, width: usize, status: &str) -> Vec<String> {
    let mut r = vec![key.to_string()];
    r.resize(width - 1, String::new());
    r.push(status.to_string());
    r
}

fn error_status(e: &PipelineError) -> String {
    match e {
        PipelineError::Spec(_) => "invalid-spec",
        PipelineError::FrontEnd(_) => "front-end-error",
        PipelineError::Capture(_) => "no-measurement",
        PipelineError::Estimate(_) => "estimate-error",
        PipelineError::ThresholdMismatch { .. } => "threshold-mismatch",
    }
    .to_string()
}

fn mode_column(table: &Table, exact: &str, approx: &str) -> Result<String> {
    let mode = table
        .header
        .get("mode")
        .ok_or_else(|| ExperimentError::Invalid("missing header constant `mode`".into()))?;
    Ok(if mode == "approximate" { approx } else { exact }.to_string())
}

pub fn linearity_verdict(tables: &[CsvTable]) -> Result<Summary> {
    let t = find(tables, "linearity.csv")?;
    let col = mode_column(&t, "err_exact", "err_approx")?;
    let errors = t.floats(&col)?;
    let failures = t.strings("status")?.iter().filter(|s| **s != "ok").count();
    let abs: Vec<f64> = errors
        .iter()
        .map(|e| e.map_or(f64::INFINITY, f64::abs))
        .collect();
    let n = abs.len();
    let boundary = [abs.first(), abs.last()]
        .into_iter()
        .flatten()
        .fold(0.0f64, |m, &x| m.max(x));
    let interior = if n > 2 {
        abs[1..n - 1].iter().fold(0.0f64, |m, &x| m.max(x))
    } else {
        0.0
    };
    let mut s = Summary::new("linearity");
    s.note("error_column", &col);
    s.below(
        "interior_max_error_volts",
        interior,
        t.constant("interior_bound")?,
    );
    s.below(
        "boundary_max_error_volts",
        boundary,
        t.constant("boundary_bound")?,
    );
    s.at_most("failed_points", failures as f64, 0.0);
    Ok(s)
}

/// Worst-case estimate error from timer quantization at one operating
/// point. Each edge is off by at most half a tick, so the width moves by at
/// most one tick and the center spacing behind the frequency by at most one
/// tick; the bound evaluates the estimator at the four corners. Zero for an
/// ideal timer.
pub fn quantization_bound(v_p: f64, f_hz: f64, timer_hz: f64, estimator: &EstimatorConfig) -> f64 {
    if timer_hz == 0.0 {
        return 0.0;
    }
    let v_h = estimator.v_h_volts;
    let tick = 1.0 / timer_hz;
    let width = 2.0 * (v_h / v_p).asin() / (2.0 * PI * f_hz);
    let spacing = 0.5 / f_hz;
    let eval = |w: f64, f: f64| {
        let theta = PI * f * w;
        match estimator.mode {
            EstimatorMode::Exact => v_h / theta.sin(),
            EstimatorMode::Approximate => {
                let v_n = v_h / theta;
                v_n + estimator.a() / v_n
            }
        }
    };
    let mut bound = 0.0f64;
    for w in [width - tick, width + tick] {
        for d in [spacing - tick, spacing + tick] {
            bound = bound.max((eval(w, 0.5 / d) - v_p).abs());
        }
    }
    bound
}

/// Frequency sweep at fixed amplitude.
pub fn run_frequency(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let sw = &cfg.frequency;
    let points = sweep_points(sw.start_hz, sw.stop_hz, sw.step_hz, "frequency")?;
    let v = sw.amplitude_volts;
    let results: Vec<Result<Vec<f64>>> = points
        .par_iter()
        .map(|&f| {
            let out = pipeline::run(
                &WaveformSpec::single_phase(f, v),
                &cfg.pipeline,
                sw.periods / f,
            )?;
            Ok(ok_estimates(&out, &cfg.analyzer)
                .iter()
                .map(|e| e.v_p_volts)
                .collect())
        })
        .collect();

    let mut rows = Vec::new();
    for (&f, r) in points.iter().zip(results) {
        let bound =
            quantization_bound(v, f, cfg.pipeline.capture.timer_hz, &cfg.pipeline.estimator);
        rows.push(match r {
            Ok(es) if !es.is_empty() => vec![
                f.to_string(),
                v.to_string(),
                mean(&es).to_string(),
                worst(&es, v).to_string(),
                es.len().to_string(),
                bound.to_string(),
                "ok".to_string(),
            ],
            Ok(_) => failure_row(f, 7, "no-measurement"),
            Err(ExperimentError::Pipeline(e)) => failure_row(f, 7, &error_status(&e)),
            Err(e) => return Err(e),
        });
    }
    let head = header(
        &cfg.pipeline,
        &[("v_true", v.to_string()), ("ideal_spread", "1e-6".into())],
    );
    let tables = vec![CsvTable::new(
        "frequency.csv",
        io::write_table(
            &head,
            &[
                "freq_hz",
                "v_true",
                "v_est",
                "err",
                "half_cycles",
                "bound",
                "status",
            ],
            &rows,
        ),
    )];
    let summary = frequency_verdict(&tables)?;
    Ok(ExperimentOutput { tables, summary })
}

pub fn frequency_verdict(tables: &[CsvTable]) -> Result<Summary> {
    let t = find(tables, "frequency.csv")?;
    let failures = t.strings("status")?.iter().filter(|s| **s != "ok").count();
    let est: Vec<f64> = t.floats("v_est")?.into_iter().flatten().collect();
    let errs = t.floats("err")?;
    let bounds = t.floats("bound")?;
    let spread = est.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - est.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_bound = bounds.iter().flatten().fold(0.0f64, |m, &b| m.max(b));
    let ideal = t.constant("timer_hz")? == 0.0;
    let ideal_spread = t.constant("ideal_spread")?;

    let mut s = Summary::new("frequency");
    let spread = if est.is_empty() {
        f64::INFINITY
    } else {
        spread
    };
    if ideal {
        s.below("spread_volts", spread, ideal_spread);
    } else {
        s.at_most("spread_volts", spread, 2.0 * max_bound);
    }
    let excess = errs
        .iter()
        .zip(&bounds)
        .filter_map(|(e, b)| Some(e.as_ref()?.abs() - b.as_ref()?))
        .fold(f64::NEG_INFINITY, f64::max);
    if ideal {
        let max_err = errs.iter().flatten().fold(0.0f64, |m, e| m.max(e.abs()));
        s.below("max_error_volts", max_err, ideal_spread);
    } else {
        s.at_most("max_error_minus_bound_volts", excess, 0.0);
    }
    s.at_most("failed_points", failures as f64, 0.0);
    Ok(s)
}

/// Order in which the output channels reach their upward crossings, given
/// per-channel source offsets in degrees.
fn order_from_offsets(labels: &[Label], offsets: &[f64], reference: Label) -> PhaseOrder {
    let mut lag: Vec<(Label, f64)> = labels
        .iter()
        .zip(offsets)
        .map(|(&l, &o)| (l, (-o).rem_euclid(360.0)))
        .collect();
    lag.sort_by(|a, b| a.1.total_cmp(&b.1));
    PhaseOrder::canonical(lag.into_iter().map(|(l, _)| l).collect(), reference)
}

/// Balanced three-phase source with channels re-routed mid-run.
pub fn run_sequence(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let sc = &cfg.sequence;
    let mut spec = WaveformSpec::three_phase(sc.frequency_hz, [sc.amplitude_volts; 3]);
    spec.events.push(Event {
        at_seconds: sc.swap_at_s,
        kind: EventKind::SequenceSwap {
            permutation: sc.permutation.clone(),
        },
    });
    spec.validate()?;
    let pcfg = with_timer(&cfg.pipeline, sc.timer_hz);
    let out = pipeline::run(&spec, &pcfg, sc.duration_s)?;
    let monitor = out.analyze(cfg.analyzer.clone());
    let reference = monitor.reference();

    let labels: Vec<Label> = spec.phases.iter().map(|p| p.label).collect();
    let offsets: Vec<f64> = spec.phases.iter().map(|p| p.phase_offset_deg).collect();
    let routed: Vec<f64> = sc
        .permutation
        .iter()
        .map(|l| {
            spec.phases
                .iter()
                .find(|p| p.label == *l)
                .map_or(0.0, |p| p.phase_offset_deg)
        })
        .collect();
    let before = order_from_offsets(&labels, &offsets, reference);
    let after = order_from_offsets(&labels, &routed, reference);

    let events = monitor.sequence_events();
    let rows: Vec<Vec<String>> = monitor
        .estimates()
        .iter()
        .map(|e| {
            let order = events
                .iter()
                .take_while(|ev| ev.at_s <= e.time_s)
                .last()
                .map_or(String::new(), |ev| ev.order.to_string());
            vec![
                e.channel_label.to_string(),
                e.time_s.to_string(),
                e.v_p_volts.to_string(),
                e.crossing_direction.to_string(),
                e.quality.to_string(),
                order,
            ]
        })
        .collect();
    let head = header(
        &pcfg,
        &[
            ("swap_s", sc.swap_at_s.to_string()),
            ("period_s", (1.0 / sc.frequency_hz).to_string()),
            ("expected_before", before.to_string()),
            ("expected_after", after.to_string()),
            ("tolerance_volts", sc.tolerance_volts.to_string()),
        ],
    );
    let tables = vec![CsvTable::new(
        "sequence.csv",
        io::write_table(
            &head,
            &["channel", "time_s", "v_p", "direction", "quality", "order"],
            &rows,
        ),
    )];
    let summary = sequence_verdict(&tables)?;
    Ok(ExperimentOutput { tables, summary })
}

pub fn sequence_verdict(tables: &[CsvTable]) -> Result<Summary> {
    let t = find(tables, "sequence.csv")?;
    let swap = t.constant("swap_s")?;
    let period = t.constant("period_s")?;
    let tol = t.constant("tolerance_volts")?;
    let expected_before = t.header.get("expected_before").cloned().unwrap_or_default();
    let expected_after = t.header.get("expected_after").cloned().unwrap_or_default();
    let times = required(t.floats("time_s")?, "time_s")?;
    let volts = required(t.floats("v_p")?, "v_p")?;
    let orders = t.strings("order")?;
    let channels = t.strings("channel")?;
    let ok = ok_rows(&t)?;

    let mut s = Summary::new("sequence");
    let before = (0..times.len())
        .rfind(|&i| times[i] < swap)
        .map(|i| orders[i]);
    let after = orders.last().copied();
    s.note("order_before", before.unwrap_or(""));
    s.note("order_after", after.unwrap_or(""));
    s.holds(
        "order_before_matches",
        before == Some(expected_before.as_str()),
    );
    s.holds(
        "order_after_matches",
        after == Some(expected_after.as_str()),
    );
    s.holds("order_changed", before.is_some() && before != after);
    let flip = (0..times.len())
        .find(|&i| times[i] >= swap && orders[i] == expected_after)
        .map_or(f64::INFINITY, |i| times[i] - swap);
    s.at_most("flip_latency_s", flip, period);

    let mut labels: Vec<&str> = channels.clone();
    labels.sort_unstable();
    labels.dedup();
    let mut max_delta = 0.0f64;
    for label in labels {
        let pick = |pre: bool| -> Vec<f64> {
            (0..times.len())
                .filter(|&i| channels[i] == label && ok[i] && (times[i] < swap) == pre)
                .map(|i| volts[i])
                .collect()
        };
        let (pre, post) = (pick(true), pick(false));
        let Some(&reference) = pre.first() else {
            max_delta = f64::INFINITY;
            continue;
        };
        if post.is_empty() {
            max_delta = f64::INFINITY;
        }
        for v in pre.iter().chain(&post) {
            max_delta = max_delta.max((v - reference).abs());
        }
    }
    s.at_most("max_amplitude_delta_volts", max_delta, tol);
    Ok(s)
}

/// |X∠x - Y∠y| for amplitudes and angles in degrees.
fn phasor_difference(x: f64, x_deg: f64, y: f64, y_deg: f64) -> f64 {
    let (xr, xi) = (x * x_deg.to_radians().cos(), x * x_deg.to_radians().sin());
    let (yr, yi) = (y * y_deg.to_radians().cos(), y * y_deg.to_radians().sin());
    (xr - yr).hypot(xi - yi)
}

fn window_rows(
    out: &PipelineOutput,
    analyzer: &AnalyzerConfig,
    wiring: Wiring,
    head: &str,
) -> String {
    let monitor = out.analyze(AnalyzerConfig {
        wiring,
        ..analyzer.clone()
    });
    let start = monitor.estimates().first().map_or(0.0, |e| e.time_s);
    io::reports_csv(&monitor.window_reports(start), &out.labels(), head)
}

/// Unbalanced source evaluated phase-to-neutral and line-to-line.
pub fn run_unbalance(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let sc = &cfg.unbalance;
    let mut spec = WaveformSpec::three_phase(sc.frequency_hz, sc.amplitudes_volts);
    for (p, d) in spec.phases.iter_mut().zip(sc.phase_deviation_deg) {
        p.phase_offset_deg += d;
    }
    spec.validate()?;
    let pcfg = with_timer(&cfg.pipeline, sc.timer_hz);
    pcfg.frontend
        .validate_for(sc.frequency_hz)
        .map_err(PipelineError::from)?;
    let stream = siggen::synth(&spec, pcfg.sample_rate_hz, sc.duration_s)?;
    let line = siggen::line_to_line(&stream)?;
    let four = pipeline::run_stream(&stream, &pcfg)?;
    let three = pipeline::run_stream(&line, &pcfg)?;

    let mut injected: Vec<(String, String)> = spec
        .phases
        .iter()
        .map(|p| {
            (
                format!("injected_{}", p.label),
                p.amplitude_volts.to_string(),
            )
        })
        .collect();
    for (i, label) in [Label::AB, Label::BC, Label::CA].into_iter().enumerate() {
        let (x, y) = (&spec.phases[i], &spec.phases[(i + 1) % 3]);
        let v = phasor_difference(
            x.amplitude_volts,
            x.phase_offset_deg,
            y.amplitude_volts,
            y.phase_offset_deg,
        );
        injected.push((format!("injected_{label}"), v.to_string()));
    }
    injected.push(("tolerance_volts".into(), sc.tolerance_volts.to_string()));
    injected.push((
        "amp_tol_fraction".into(),
        cfg.analyzer.amp_tol_fraction.to_string(),
    ));
    injected.push((
        "phase_tol_deg".into(),
        cfg.analyzer.phase_tol_deg.to_string(),
    ));
    let mut pairs = io::pipeline_constants(&pcfg);
    pairs.extend(injected);
    let head = io::header_line(&pairs);

    let mut rows = Vec::new();
    for (wiring, out) in [("four-wire", &four), ("three-wire", &three)] {
        for e in out.analyze(cfg.analyzer.clone()).estimates() {
            rows.push(vec![
                wiring.to_string(),
                e.channel_label.to_string(),
                e.time_s.to_string(),
                e.v_p_volts.to_string(),
                e.quality.to_string(),
            ]);
        }
    }
    let tables = vec![
        CsvTable::new(
            "unbalance.csv",
            io::write_table(
                &head,
                &["wiring", "channel", "time_s", "v_p", "quality"],
                &rows,
            ),
        ),
        CsvTable::new(
            "unbalance_four_wire.csv",
            window_rows(&four, &cfg.analyzer, Wiring::FourWire, &head),
        ),
        CsvTable::new(
            "unbalance_three_wire.csv",
            window_rows(&three, &cfg.analyzer, Wiring::ThreeWire, &head),
        ),
    ];
    let summary = unbalance_verdict(&tables)?;
    Ok(ExperimentOutput { tables, summary })
}

/// Flags of the windows where every amplitude, angle and the order are known.
fn complete_window_flags(t: &Table) -> Result<Vec<String>> {
    let cols = ["vA", "vB", "vC", "angA", "angB", "angC", "seq"]
        .iter()
        .map(|c| t.column(c))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let flags = t.column("flags")?;
    Ok(t.rows
        .iter()
        .filter(|r| cols.iter().all(|&c| !r[c].is_empty()))
        .map(|r| r[flags].clone())
        .collect())
}

pub fn unbalance_verdict(tables: &[CsvTable]) -> Result<Summary> {
    let t = find(tables, "unbalance.csv")?;
    let tol = t.constant("tolerance_volts")?;
    let wiring = t.strings("wiring")?;
    let channels = t.strings("channel")?;
    let volts = required(t.floats("v_p")?, "v_p")?;
    let ok = ok_rows(&t)?;

    let mut s = Summary::new("unbalance");
    for w in ["four-wire", "three-wire"] {
        let mut max_err = 0.0f64;
        let mut count = 0;
        for i in (0..volts.len()).filter(|&i| wiring[i] == w && ok[i]) {
            let injected = t.constant(&format!("injected_{}", channels[i]))?;
            max_err = max_err.max((volts[i] - injected).abs());
            count += 1;
        }
        if count == 0 {
            max_err = f64::INFINITY;
        }
        s.at_most(&format!("{w}_max_amplitude_error_volts"), max_err, tol);
    }

    let four = complete_window_flags(&find(tables, "unbalance_four_wire.csv")?)?;
    let three = complete_window_flags(&find(tables, "unbalance_three_wire.csv")?)?;
    let has = |f: &str, flag: &str| f.split('|').any(|x| x == flag);
    s.note("complete_windows_four_wire", four.len());
    s.note("complete_windows_three_wire", three.len());
    s.holds(
        "four_wire_amplitude_flag",
        !four.is_empty() && four.iter().all(|f| has(f, "amplitude-unbalance")),
    );
    s.holds(
        "four_wire_phase_flag",
        !four.is_empty() && four.iter().all(|f| has(f, "phase-unbalance")),
    );
    s.holds(
        "three_wire_amplitude_flag",
        !three.is_empty() && three.iter().all(|f| has(f, "amplitude-unbalance")),
    );
    s.holds(
        "three_wire_no_phase_flag",
        !three.is_empty() && three.iter().all(|f| !has(f, "phase-unbalance")),
    );
    Ok(s)
}

/// Distorted single-phase source with and without mitigation.
pub fn run_harmonics(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let sc = &cfg.harmonics;
    let mut spec = WaveformSpec::single_phase(sc.frequency_hz, sc.amplitude_volts);
    spec.harmonics = sc.harmonics.clone();
    spec.validate()?;

    let mut plain = cfg.pipeline.clone();
    plain.frontend.prefilter = None;
    plain.frontend.comparator_filter = None;
    plain.capture.min_pulse_width_s = 0.0;
    plain.capture.merge_gap_s = 0.0;
    plain.settle_s = sc.settle_s;
    let mut mitigated = plain.clone();
    mitigated.frontend.prefilter = sc.mitigation.prefilter;
    mitigated.frontend.comparator_filter = sc.mitigation.comparator_filter;
    mitigated.capture.min_pulse_width_s = sc.mitigation.min_pulse_width_s;
    mitigated.capture.merge_gap_s = sc.mitigation.merge_gap_s;
    mitigated
        .frontend
        .validate_for(spec.max_fundamental_hz())
        .map_err(PipelineError::from)?;

    let stream = siggen::synth(&spec, cfg.pipeline.sample_rate_hz, sc.duration_s)?;
    let mut rows = Vec::new();
    for (variant, pcfg) in [("unmitigated", &plain), ("mitigated", &mitigated)] {
        let out = pipeline::run_stream(&stream, pcfg)?;
        for e in out.analyze(cfg.analyzer.clone()).estimates() {
            rows.push(vec![
                variant.to_string(),
                e.channel_label.to_string(),
                e.time_s.to_string(),
                e.v_p_volts.to_string(),
                (e.v_p_volts - sc.amplitude_volts).to_string(),
                e.quality.to_string(),
            ]);
        }
    }
    let head = header(
        &mitigated,
        &[
            ("v_true", sc.amplitude_volts.to_string()),
            ("bound_fraction", sc.bound_fraction.to_string()),
        ],
    );
    let tables = vec![CsvTable::new(
        "harmonics.csv",
        io::write_table(
            &head,
            &[
                "variant",
                "channel",
                "time_s",
                "v_p",
                "error_volts",
                "quality",
            ],
            &rows,
        ),
    )];
    let summary = harmonics_verdict(&tables)?;
    Ok(ExperimentOutput { tables, summary })
}

pub fn harmonics_verdict(tables: &[CsvTable]) -> Result<Summary> {
    let t = find(tables, "harmonics.csv")?;
    let v_true = t.constant("v_true")?;
    let bound = t.constant("bound_fraction")?;
    let variant = t.strings("variant")?;
    let errors = required(t.floats("error_volts")?, "error_volts")?;
    let ok = ok_rows(&t)?;
    let max_err = |name: &str| {
        let sel: Vec<f64> = (0..errors.len())
            .filter(|&i| variant[i] == name && ok[i])
            .map(|i| errors[i].abs())
            .collect();
        if sel.is_empty() {
            f64::INFINITY
        } else {
            sel.into_iter().fold(0.0, f64::max)
        }
    };
    let (plain, mitigated) = (max_err("unmitigated"), max_err("mitigated"));
    let mut s = Summary::new("harmonics");
    s.note("unmitigated_max_error_volts", plain);
    s.below("mitigated_max_error_volts", mitigated, plain);
    s.below("mitigated_relative_error", mitigated / v_true, bound);
    Ok(s)
}

/// First zero crossing of the fundamental at or after `t` (zero phase
/// offset, constant frequency).
fn next_zero_crossing(t: f64, f_hz: f64) -> f64 {
    let half = 0.5 / f_hz;
    (t / half).ceil() * half
}

/// Single-phase amplitude step.
pub fn run_sag_latency(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let sc = &cfg.sag;
    let mut spec = WaveformSpec::single_phase(sc.frequency_hz, sc.from_volts);
    spec.events.push(Event {
        at_seconds: sc.at_s,
        kind: EventKind::AmplitudeStep {
            label: None,
            amplitude_volts: sc.to_volts,
        },
    });
    spec.validate()?;
    let out = pipeline::run(&spec, &cfg.pipeline, sc.duration_s)?;
    let rows: Vec<Vec<String>> = out
        .analyze(cfg.analyzer.clone())
        .estimates()
        .iter()
        .map(|e| {
            vec![
                e.channel_label.to_string(),
                e.time_s.to_string(),
                e.available_s().to_string(),
                e.width_s.to_string(),
                e.v_p_volts.to_string(),
                e.quality.to_string(),
            ]
        })
        .collect();
    let head = header(
        &cfg.pipeline,
        &[
            ("step_s", sc.at_s.to_string()),
            (
                "zero_crossing_s",
                next_zero_crossing(sc.at_s, sc.frequency_hz).to_string(),
            ),
            ("half_period_s", (0.5 / sc.frequency_hz).to_string()),
            ("new_amplitude", sc.to_volts.to_string()),
            ("tolerance_fraction", sc.tolerance_fraction.to_string()),
        ],
    );
    let tables = vec![CsvTable::new(
        "sag.csv",
        io::write_table(
            &head,
            &[
                "channel",
                "time_s",
                "available_s",
                "width_s",
                "v_p",
                "quality",
            ],
            &rows,
        ),
    )];
    let summary = sag_verdict(&tables)?;
    Ok(ExperimentOutput { tables, summary })
}

pub fn sag_verdict(tables: &[CsvTable]) -> Result<Summary> {
    let t = find(tables, "sag.csv")?;
    let step = t.constant("step_s")?;
    let zc = t.constant("zero_crossing_s")?;
    let half = t.constant("half_period_s")?;
    let target = t.constant("new_amplitude")?;
    let tol = t.constant("tolerance_fraction")?;
    let available = required(t.floats("available_s")?, "available_s")?;
    let widths = required(t.floats("width_s")?, "width_s")?;
    let volts = required(t.floats("v_p")?, "v_p")?;

    let mut s = Summary::new("sag-latency");
    let first = (0..volts.len())
        .filter(|&i| available[i] > step && ((volts[i] - target) / target).abs() <= tol)
        .min_by(|&a, &b| available[a].total_cmp(&available[b]));
    match first {
        Some(i) => {
            let allowance = half + 0.5 * widths[i];
            s.note("first_estimate_volts", volts[i]);
            s.at_most("latency_from_step_s", available[i] - step, allowance);
            s.at_most("latency_from_zero_crossing_s", available[i] - zc, allowance);
        }
        None => {
            s.at_most("latency_from_step_s", f64::INFINITY, half);
            s.at_most("latency_from_zero_crossing_s", f64::INFINITY, half);
        }
    }
    Ok(s)
}

pub fn run(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    match kind {
        ExperimentKind::Linearity => run_linearity(cfg),
        ExperimentKind::Frequency => run_frequency(cfg),
        ExperimentKind::Sequence => run_sequence(cfg),
        ExperimentKind::Harmonics => run_harmonics(cfg),
        ExperimentKind::Unbalance => run_unbalance(cfg),
        ExperimentKind::SagLatency => run_sag_latency(cfg),
    }
}

/// Fits the correction constant over the linearity sweep's half-cycles.
pub fn run_calibration(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let sw = &cfg.linearity;
    let points = sweep_points(sw.start_volts, sw.stop_volts, sw.step_volts, "linearity")?;
    let results: Vec<Result<Vec<(f64, f64)>>> = points
        .par_iter()
        .map(|&v| {
            let out = pipeline::run(
                &WaveformSpec::single_phase(sw.frequency_hz, v),
                &cfg.pipeline,
                sw.periods / sw.frequency_hz,
            )?;
            let passed = ok_estimates(&out, &cfg.analyzer);
            Ok(out
                .measurements
                .iter()
                .filter(|m| passed.iter().any(|e| e.time_s == m.center_time_s))
                .map(|m| (m.t_h_s, m.frequency_hz))
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for (&v, r) in points.iter().zip(results) {
        for (t_h, f) in r? {
            rows.push(vec![v.to_string(), t_h.to_string(), f.to_string()]);
        }
    }
    let tables = vec![CsvTable::new(
        "calibration.csv",
        io::write_table(
            &header(&cfg.pipeline, &[]),
            &["v_true", "t_h_s", "freq_hz"],
            &rows,
        ),
    )];
    let summary = calibration_verdict(&tables)?;
    Ok(ExperimentOutput { tables, summary })
}

pub fn calibration_verdict(tables: &[CsvTable]) -> Result<Summary> {
    let t = find(tables, "calibration.csv")?;
    let v_h = t.constant("v_h")?;
    let v = required(t.floats("v_true")?, "v_true")?;
    let t_h = required(t.floats("t_h_s")?, "t_h_s")?;
    let f = required(t.floats("freq_hz")?, "freq_hz")?;
    let pairs: Vec<CalibrationPair> = (0..v.len())
        .map(|i| CalibrationPair {
            true_v_p: v[i],
            measured_t_h: t_h[i],
            frequency_hz: f[i],
        })
        .collect();
    let cal = calibrate_a(&pairs, v_h);
    let mut s = Summary::new("calibration");
    s.note("a_volts_squared", cal.a_volts_squared);
    s.note("default_a_volts_squared", estimator::default_a(v_h));
    s.note("skipped_pairs", cal.skipped);
    if let Some(w) = &cal.warning {
        s.note("warning", w.replace(',', ";"));
    }
    s.at_most(
        "usable_pairs_missing",
        if cal.used > 0 { 0.0 } else { 1.0 },
        0.0,
    );
    Ok(s)
}

/// Samples the configured waveform.
pub fn synthesize(cfg: &ExperimentConfig) -> Result<(SampleStream, CsvTable)> {
    let spec = cfg.waveform();
    spec.validate()?;
    let stream = siggen::synth(&spec, cfg.pipeline.sample_rate_hz, cfg.duration_s)?;
    let head = io::header_line(&[
        ("fs_hz".to_string(), cfg.pipeline.sample_rate_hz.to_string()),
        ("duration_s".to_string(), cfg.duration_s.to_string()),
    ]);
    let text = io::stream_csv(&stream, &head);
    Ok((stream, CsvTable::new("stream.csv", text)))
}

/// Runs the full chain on a stream and dumps every intermediate table.
pub fn detect(
    stream: &SampleStream,
    cfg: &ExperimentConfig,
) -> Result<(Vec<CsvTable>, PipelineOutput)> {
    let out = pipeline::run_stream(stream, &cfg.pipeline)?;
    let monitor = out.analyze(cfg.analyzer.clone());
    let start = monitor
        .estimates()
        .first()
        .map_or(stream.start_time_s, |e| e.time_s);
    let reports = monitor.window_reports(start);
    let pcfg = PipelineConfig {
        sample_rate_hz: stream.sample_rate_hz,
        ..cfg.pipeline.clone()
    };
    let head = header(&pcfg, &[]);
    let tables = vec![
        CsvTable::new("pulses.csv", io::pulses_csv(&out.trains, &head)),
        CsvTable::new(
            "measurements.csv",
            io::measurements_csv(&out.measurements, &head),
        ),
        CsvTable::new(
            "estimates.csv",
            io::estimates_csv(monitor.estimates(), &head),
        ),
        CsvTable::new(
            "reports.csv",
            io::reports_csv(&reports, &out.labels(), &head),
        ),
        CsvTable::new("reports.jsonl", io::reports_jsonl(&reports)?),
    ];
    Ok((tables, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_points_include_both_ends() {
        let p = sweep_points(50.0, 440.0, 10.0, "x").unwrap();
        assert_eq!(p.len(), 40);
        assert_eq!(p[0], 50.0);
        assert_eq!(p[39], 440.0);
        assert!(sweep_points(10.0, 5.0, 1.0, "x").is_err());
        assert!(sweep_points(1.0, 5.0, 0.0, "x").is_err());
    }

    #[test]
    fn config_defaults_from_empty_json() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let c = ExperimentConfig::from_json(
            r#"{"experiment":"sag-latency","linearity":{"step_volts":30}}"#,
        )
        .unwrap();
        assert_eq!(c.experiment, Some(ExperimentKind::SagLatency));
        assert_eq!(c.linearity.step_volts, 30.0);
        assert_eq!(c.linearity.start_volts, 50.0);
    }

    #[test]
    fn mismatched_threshold_rejected() {
        let mut c = ExperimentConfig::default();
        c.pipeline.estimator.v_h_volts = 12.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_crossing_after_step() {
        assert!((next_zero_crossing(0.031, 50.0) - 0.04).abs() < 1e-15);
        assert!((next_zero_crossing(0.001, 60.0) - 1.0 / 120.0).abs() < 1e-15);
    }

    #[test]
    fn bound_matches_finite_difference_and_vanishes_when_ideal() {
        let est = EstimatorConfig::default();
        assert_eq!(quantization_bound(311.0, 50.0, 0.0, &est), 0.0);
        let b = quantization_bound(311.0, 300.0, 1e6, &est);
        // Width sensitivity alone: (ω/2)·V_h·cosθ/sin²θ per second of width.
        let theta = (15.0f64 / 311.0).asin();
        let dvdw = PI * 300.0 * 15.0 * theta.cos() / theta.sin().powi(2);
        assert!(
            b > dvdw * 1e-6 && b < 1.2 * dvdw * 1e-6,
            "{b} vs {}",
            dvdw * 1e-6
        );
    }

    #[test]
    fn expected_orders_from_offsets() {
        let labels = [Label::A, Label::B, Label::C];
        assert_eq!(
            order_from_offsets(&labels, &[0.0, -120.0, 120.0], Label::A).to_string(),
            "A-B-C"
        );
        assert_eq!(
            order_from_offsets(&labels, &[-120.0, 0.0, 120.0], Label::A).to_string(),
            "A-C-B"
        );
    }

    #[test]
    fn verdicts_read_only_the_csv() {
        let head = "# mode=exact interior_bound=0.2 boundary_bound=0.5\n";
        let text = io::write_table(
            head,
            &[
                "v_true",
                "v_exact",
                "v_approx",
                "v_n",
                "err_exact",
                "err_approx",
                "half_cycles",
                "status",
            ],
            &[
                vec!["50", "50.4", "", "", "0.4", "9", "4", "ok"]
                    .into_iter()
                    .map(String::from)
                    .collect(),
                vec!["60", "60.1", "", "", "0.1", "9", "4", "ok"]
                    .into_iter()
                    .map(String::from)
                    .collect(),
                vec!["70", "70.3", "", "", "-0.3", "9", "4", "ok"]
                    .into_iter()
                    .map(String::from)
                    .collect(),
            ],
        );
        let s = linearity_verdict(&[CsvTable::new("linearity.csv", text)]).unwrap();
        assert!(s.check("interior_max_error_volts").unwrap().passed);
        assert!(s.check("boundary_max_error_volts").unwrap().passed);
        assert!(s.passed());
    }

    #[test]
    fn summary_csv_layout() {
        let mut s = Summary::new("x");
        s.at_most("a", 1.0, 2.0);
        s.note("n", 3);
        let text = s.to_csv();
        assert_eq!(
            text,
            "# experiment=x\ncheck,value,bound,verdict\na,1,2,pass\nn,3,,info\n"
        );
    }
}
