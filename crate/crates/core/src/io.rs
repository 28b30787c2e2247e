//! CSV and JSON-lines serialization of streams, pulses, measurements,
//! estimates and analyzer reports.
//!
//! Every table may start with `#` comment lines; the first one is
//! conventionally a `key=value` list of the pipeline constants.

use std::collections::BTreeMap;

use crate::analyzer::WindowReport;
use crate::capture::HalfCycleMeasurement;
use crate::estimator::PeakEstimate;
use crate::frontend::{LowPassSpec, PulseTrain};
use crate::label::Label;
use crate::pipeline::PipelineConfig;
use crate::siggen::{Channel, SampleStream};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("malformed table: {0}")]
    Malformed(String),
}

fn filter_str(f: &Option<LowPassSpec>) -> String {
    match f {
        Some(f) => format!("order{}@{}Hz", f.order, f.cutoff_hz),
        None => "none".into(),
    }
}

/// `key=value` pairs describing every pipeline constant.
pub fn pipeline_constants(config: &PipelineConfig) -> Vec<(String, String)> {
    let fe = &config.frontend;
    let cap = &config.capture;
    let est = &config.estimator;
    [
        ("fs_hz", config.sample_rate_hz.to_string()),
        ("timer_hz", cap.timer_hz.to_string()),
        ("v_h", fe.v_h_volts.to_string()),
        ("a", est.a().to_string()),
        ("mode", est.mode.as_str().to_string()),
        ("prefilter", filter_str(&fe.prefilter)),
        ("comparator_filter", filter_str(&fe.comparator_filter)),
        (
            "linear_range",
            fe.linear_range_volts
                .map_or("none".into(), |v| v.to_string()),
        ),
        ("hysteresis", fe.hysteresis_volts.to_string()),
        (
            "edge",
            format!("{:?}", fe.edge_interpolation).to_lowercase(),
        ),
        ("min_pulse_width_s", cap.min_pulse_width_s.to_string()),
        ("merge_gap_s", cap.merge_gap_s.to_string()),
        ("settle_s", config.settle_s.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Formats pairs as a `# k=v k=v` comment line (with trailing newline).
pub fn header_line(pairs: &[(String, String)]) -> String {
    let body: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("# {}\n", body.join(" "))
}

/// Collects the `key=value` pairs of all leading comment lines.
pub fn parse_header(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .flat_map(|l| l.trim_start_matches('#').split_whitespace())
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Writes `header` (comment lines) followed by the CSV records.
pub fn write_table(header: &str, columns: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields");
    format!("{header}{body}")
}

/// Parsed table: column names plus records, comments skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self, IoError> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let columns = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            header: parse_header(text),
            columns,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize, IoError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| IoError::Malformed(format!("missing column `{name}`")))
    }

    /// Header constant parsed as a number.
    pub fn constant(&self, key: &str) -> Result<f64, IoError> {
        let v = self
            .header
            .get(key)
            .ok_or_else(|| IoError::Malformed(format!("missing header constant `{key}`")))?;
        v.parse()
            .map_err(|_| IoError::Malformed(format!("header constant `{key}`={v} is not numeric")))
    }

    /// Cell `name` of every row as `f64`; empty cells become `None`.
    pub fn floats(&self, name: &str) -> Result<Vec<Option<f64>>, IoError> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .map(|r| {
                let cell = r[c].as_str();
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse().map(Some).map_err(|_| {
                        IoError::Malformed(format!("`{name}` cell {cell:?} is not numeric"))
                    })
                }
            })
            .collect()
    }

    pub fn strings(&self, name: &str) -> Result<Vec<&str>, IoError> {
        let c = self.column(name)?;
        Ok(self.rows.iter().map(|r| r[c].as_str()).collect())
    }
}

pub fn stream_csv(stream: &SampleStream, header: &str) -> String {
    let mut columns = vec!["time_s".to_string()];
    columns.extend(stream.channels.iter().map(|c| format!("ch{}", c.label)));
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..stream.len())
        .map(|n| {
            let mut r = vec![stream.time_at(n).to_string()];
            r.extend(stream.channels.iter().map(|c| c.samples[n].to_string()));
            r
        })
        .collect();
    write_table(header, &cols, &rows)
}

/// Reads a `time_s,ch<label>...` table. The sample rate is recovered from
/// the time column.
pub fn read_stream_csv(text: &str) -> Result<SampleStream, IoError> {
    let table = Table::parse(text)?;
    if table.columns.first().map(String::as_str) != Some("time_s") {
        return Err(IoError::Malformed("first column must be `time_s`".into()));
    }
    let times: Vec<f64> = table
        .floats("time_s")?
        .into_iter()
        .map(|t| t.ok_or_else(|| IoError::Malformed("empty time".into())))
        .collect::<Result<_, _>>()?;
    if times.len() < 2 {
        return Err(IoError::Malformed("need at least two samples".into()));
    }
    let span = times[times.len() - 1] - times[0];
    let raw_fs = (times.len() - 1) as f64 / span;
    let fs = if (raw_fs - raw_fs.round()).abs() < 1e-6 * raw_fs {
        raw_fs.round()
    } else {
        raw_fs
    };

    let mut channels = Vec::new();
    for name in &table.columns[1..] {
        let label: Label = name
            .strip_prefix("ch")
            .ok_or_else(|| IoError::Malformed(format!("column `{name}` is not `ch<label>`")))?
            .parse()
            .map_err(|e| IoError::Malformed(format!("{e}")))?;
        let samples = table
            .floats(name)?
            .into_iter()
            .map(|v| v.ok_or_else(|| IoError::Malformed(format!("empty sample in `{name}`"))))
            .collect::<Result<_, _>>()?;
        channels.push(Channel { label, samples });
    }
    SampleStream::new(fs, times[0], channels).map_err(|e| IoError::Malformed(e.to_string()))
}

pub fn pulses_csv(trains: &[PulseTrain], header: &str) -> String {
    let rows: Vec<Vec<String>> = trains
        .iter()
        .flat_map(|t| {
            t.pulses.iter().map(move |p| {
                vec![
                    t.channel_label.to_string(),
                    p.rise_s.to_string(),
                    p.fall_s.to_string(),
                    p.direction.to_string(),
                ]
            })
        })
        .collect();
    write_table(header, &["channel", "rise_s", "fall_s", "direction"], &rows)
}

pub fn measurements_csv(ms: &[HalfCycleMeasurement], header: &str) -> String {
    let rows: Vec<Vec<String>> = ms
        .iter()
        .map(|m| {
            vec![
                m.channel_label.to_string(),
                m.center_time_s.to_string(),
                m.width_s.to_string(),
                m.t_h_s.to_string(),
                m.frequency_hz.to_string(),
                m.crossing_direction.to_string(),
                m.quality.to_string(),
            ]
        })
        .collect();
    write_table(
        header,
        &[
            "channel",
            "center_s",
            "width_s",
            "t_h_s",
            "freq_hz",
            "direction",
            "quality",
        ],
        &rows,
    )
}

pub fn estimates_csv(es: &[PeakEstimate], header: &str) -> String {
    let rows: Vec<Vec<String>> = es
        .iter()
        .map(|e| {
            vec![
                e.channel_label.to_string(),
                e.time_s.to_string(),
                e.v_p_volts.to_string(),
                e.v_n_volts.to_string(),
                e.frequency_hz.to_string(),
                e.quality.to_string(),
            ]
        })
        .collect();
    write_table(
        header,
        &["channel", "time_s", "v_p", "v_n", "freq_hz", "quality"],
        &rows,
    )
}

/// Summary row per window. Up to three phases fill the `v*`/`ang*`
/// columns in channel order; line-to-line inputs occupy the same slots.
pub fn reports_csv(reports: &[WindowReport], labels: &[Label], header: &str) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.window.start_s.to_string(), r.window.end_s.to_string()];
            let slot = |k: usize| labels.get(k).and_then(|&l| r.phases.entry(l));
            for k in 0..3 {
                row.push(slot(k).map_or(String::new(), |p| p.v_p_volts.to_string()));
            }
            for k in 0..3 {
                row.push(
                    slot(k)
                        .and_then(|p| p.phase_angle_deg)
                        .map_or(String::new(), |a| a.to_string()),
                );
            }
            row.push(
                r.sequence
                    .as_ref()
                    .map_or(String::new(), |s| s.detected_order.to_string()),
            );
            row.push(r.flags());
            row
        })
        .collect();
    write_table(
        header,
        &[
            "window_start",
            "window_end",
            "vA",
            "vB",
            "vC",
            "angA",
            "angB",
            "angC",
            "seq",
            "flags",
        ],
        &rows,
    )
}

/// One JSON document per line.
pub fn reports_jsonl(reports: &[WindowReport]) -> Result<String, IoError> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{run, PipelineConfig};
    use crate::siggen::{synth, WaveformSpec};

    #[test]
    fn stream_round_trip() {
        let stream = synth(
            &WaveformSpec::three_phase(50.0, [311.0, 280.0, 340.0]),
            20_000.0,
            0.01,
        )
        .unwrap();
        let text = stream_csv(&stream, "# test\n");
        assert!(text.starts_with("# test\ntime_s,chA,chB,chC\n"));
        let back = read_stream_csv(&text).unwrap();
        assert_eq!(back.sample_rate_hz, 20_000.0);
        assert_eq!(back.labels(), stream.labels());
        assert_eq!(back.channels, stream.channels);
    }

    #[test]
    fn header_round_trip() {
        let pairs = pipeline_constants(&PipelineConfig::default());
        let line = header_line(&pairs);
        let parsed = parse_header(&line);
        assert_eq!(parsed["timer_hz"], "1000000");
        assert_eq!(parsed["a"], "37.5");
        assert_eq!(parsed["prefilter"], "none");
        assert_eq!(parsed.len(), pairs.len());
    }

    #[test]
    fn table_columns_are_exact() {
        let out = run(
            &WaveformSpec::single_phase(50.0, 311.0),
            &PipelineConfig::ideal(),
            0.05,
        )
        .unwrap();
        let first = |s: String| s.lines().nth(1).unwrap().to_string();
        assert_eq!(
            first(pulses_csv(&out.trains, "#\n")),
            "channel,rise_s,fall_s,direction"
        );
        assert_eq!(
            first(measurements_csv(&out.measurements, "#\n")),
            "channel,center_s,width_s,t_h_s,freq_hz,direction,quality"
        );
        assert_eq!(
            first(estimates_csv(&out.estimates, "#\n")),
            "channel,time_s,v_p,v_n,freq_hz,quality"
        );

        let t = Table::parse(&estimates_csv(&out.estimates, "# v=1\n")).unwrap();
        assert_eq!(t.rows.len(), out.estimates.len());
        assert_eq!(t.constant("v").unwrap(), 1.0);
        let v = t.floats("v_p").unwrap();
        assert_eq!(v[0], Some(out.estimates[0].v_p_volts));
    }

    #[test]
    fn malformed_stream_rejected() {
        assert!(read_stream_csv("t,chA\n0,1\n1,2\n").is_err());
        assert!(read_stream_csv("time_s,chQ\n0,1\n1,2\n").is_err());
        assert!(read_stream_csv("time_s,chA\n0,1\n").is_err());
    }
}
