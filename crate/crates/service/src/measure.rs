use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use vqn_core::allocation::PairId;
use vqn_core::measurement::{
    coincidence_count, count_rate, counter, CoincidenceSpec, HistogramSpec, MeasurementError, DEFAULT_BACKGROUND_OFFSET_PS,
    DEFAULT_BACKGROUND_WIDTH_PS, DEFAULT_PEAK_BIN_PS, DEFAULT_PEAK_RANGE_PS, DEFAULT_WINDOW_PS,
};
use vqn_core::tagcore::{ChannelIndex, TagStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementFunction {
    CountRate,
    Counter,
    Coincidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRequest {
    pub pair_id: PairId,
    pub function: MeasurementFunction,
    #[serde(default)]
    pub params: Value,
}

fn one_second() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CountRateParams {
    #[serde(default = "one_second")]
    duration_s: f64,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CounterParams {
    #[serde(default = "one_second")]
    duration_s: f64,
    #[serde(default)]
    seed: Option<u64>,
    /// Signal channel of the pair when omitted.
    #[serde(default)]
    channel: Option<ChannelIndex>,
    bin_width_ps: i64,
    n_bins: usize,
    #[serde(default)]
    start_ps: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoincidenceParams {
    #[serde(default = "one_second")]
    duration_s: f64,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default = "d_window")]
    window_ps: i64,
    #[serde(default = "d_offset")]
    background_offset_ps: i64,
    #[serde(default = "d_width")]
    background_width_ps: i64,
    #[serde(default = "d_range")]
    peak_range_ps: i64,
    #[serde(default = "d_bin")]
    peak_bin_ps: i64,
}

fn d_window() -> i64 {
    DEFAULT_WINDOW_PS
}
fn d_offset() -> i64 {
    DEFAULT_BACKGROUND_OFFSET_PS
}
fn d_width() -> i64 {
    DEFAULT_BACKGROUND_WIDTH_PS
}
fn d_range() -> i64 {
    DEFAULT_PEAK_RANGE_PS
}
fn d_bin() -> i64 {
    DEFAULT_PEAK_BIN_PS
}

/// Validated parameters for one measurement.
#[derive(Debug, Clone, PartialEq)]
pub enum Plan {
    CountRate,
    Counter {
        channel: Option<ChannelIndex>,
        spec: HistogramSpec,
        start_ps: i64,
    },
    Coincidence(CoincidenceSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedMeasurement {
    pub plan: Plan,
    pub duration_s: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid {field}: {message}")]
pub struct ParamError {
    pub field: String,
    pub message: String,
}

fn param_error(field: impl Into<String>, message: impl ToString) -> ParamError {
    ParamError {
        field: field.into(),
        message: message.to_string(),
    }
}

fn from_measurement(e: MeasurementError) -> ParamError {
    match e {
        MeasurementError::InvalidParameter { field, reason } => param_error(format!("params.{field}"), reason),
        other => param_error("params", other),
    }
}

fn decode<T: for<'de> Deserialize<'de>>(params: &Value) -> Result<T, ParamError> {
    let params = if params.is_null() { json!({}) } else { params.clone() };
    serde_json::from_value(params).map_err(|e| param_error("params", e))
}

impl MeasurementRequest {
    pub fn parse(&self, max_duration_s: f64) -> Result<ParsedMeasurement, ParamError> {
        let (plan, duration_s, seed) = match self.function {
            MeasurementFunction::CountRate => {
                let p: CountRateParams = decode(&self.params)?;
                (Plan::CountRate, p.duration_s, p.seed)
            }
            MeasurementFunction::Counter => {
                let p: CounterParams = decode(&self.params)?;
                let spec = HistogramSpec::new(p.bin_width_ps, p.n_bins).map_err(from_measurement)?;
                let plan = Plan::Counter {
                    channel: p.channel,
                    spec,
                    start_ps: p.start_ps,
                };
                (plan, p.duration_s, p.seed)
            }
            MeasurementFunction::Coincidence => {
                let p: CoincidenceParams = decode(&self.params)?;
                let spec = CoincidenceSpec {
                    window_ps: p.window_ps,
                    background_offset_ps: p.background_offset_ps,
                    background_width_ps: p.background_width_ps,
                    peak_range_ps: p.peak_range_ps,
                    peak_bin_ps: p.peak_bin_ps,
                };
                spec.validate().map_err(from_measurement)?;
                (Plan::Coincidence(spec), p.duration_s, p.seed)
            }
        };
        if !(duration_s > 0.0 && duration_s.is_finite()) {
            return Err(param_error("params.duration_s", "must be positive"));
        }
        if duration_s > max_duration_s {
            return Err(param_error(
                "params.duration_s",
                format!("exceeds the {max_duration_s} s limit"),
            ));
        }
        Ok(ParsedMeasurement { plan, duration_s, seed })
    }
}

/// Runs a parsed measurement over the pair's signal and idler streams.
pub fn evaluate(
    plan: &Plan,
    signal: (ChannelIndex, &TagStream),
    idler: (ChannelIndex, &TagStream),
    duration_s: f64,
) -> Result<Value, ParamError> {
    match plan {
        Plan::CountRate => {
            let streams: BTreeMap<ChannelIndex, TagStream> =
                [(signal.0, signal.1.clone()), (idler.0, idler.1.clone())].into();
            let rates = count_rate(&streams, &[signal.0, idler.0], duration_s).map_err(from_measurement)?;
            let rates: BTreeMap<String, f64> = rates.into_iter().map(|(c, r)| (c.to_string(), r)).collect();
            Ok(json!({ "rates_hz": rates }))
        }
        Plan::Counter {
            channel,
            spec,
            start_ps,
        } => {
            let ch = channel.unwrap_or(signal.0);
            let stream = if ch == signal.0 {
                signal.1
            } else if ch == idler.0 {
                idler.1
            } else {
                return Err(param_error("params.channel", format!("channel {ch} is not part of this pair")));
            };
            let h = counter(stream, *spec, *start_ps).map_err(from_measurement)?;
            Ok(json!({ "channel": ch, "histogram": h }))
        }
        Plan::Coincidence(spec) => {
            let r = coincidence_count(signal.1, idler.1, spec, duration_s).map_err(from_measurement)?;
            Ok(serde_json::to_value(r).expect("plain struct"))
        }
    }
}
