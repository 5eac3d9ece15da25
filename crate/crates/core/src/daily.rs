//! Per-day distinct-IP counting as engine operators, exact and estimated.
//!
//! State lives under `exact/<day>` and `hll/<day>` so both pipelines can run
//! in one engine side by side. Days are UTC calendar dates of the record's
//! `time.start_ts`.

use std::fmt;
use std::io::{self, Write};

use chrono::DateTime;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::cardinality::{CardinalitySketch, ExactDistinctState, SketchError};
use crate::engine::{update_state_by_key, Batch, EngineError, KeyedState, Operator, StateCodec};
use crate::schema::LogRecord;

pub const EXACT_NAMESPACE: &str = "exact";
pub const HLL_NAMESPACE: &str = "hll";

/// UTC calendar date, formatted `YYYY-MM-DD`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DayKey(String);

impl DayKey {
    pub fn from_millis(ts_ms: u64) -> Self {
        let dt = DateTime::from_timestamp_millis(ts_ms as i64).expect("timestamp within chrono range");
        DayKey(dt.format("%Y-%m-%d").to_string())
    }

    pub fn of(record: &LogRecord) -> Self {
        Self::from_millis(record.time.start_ts)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DayKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Hllpp,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Exact => "exact",
            Method::Hllpp => "hllpp",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(Method::Exact),
            "hllpp" | "hll" => Ok(Method::Hllpp),
            other => Err(format!("unknown method {other:?} (expected exact or hllpp)")),
        }
    }
}

pub struct ExactCodec;

impl StateCodec for ExactCodec {
    type Value = ExactDistinctState;
    const FAMILY: &'static str = "exact";
    fn encode(value: &ExactDistinctState) -> Vec<u8> {
        value.to_bytes()
    }
    fn decode(bytes: &[u8]) -> Result<ExactDistinctState, String> {
        ExactDistinctState::from_bytes(bytes).map_err(|e| e.to_string())
    }
}

pub struct SketchCodec;

impl StateCodec for SketchCodec {
    type Value = CardinalitySketch;
    const FAMILY: &'static str = "hll";
    fn encode(value: &CardinalitySketch) -> Vec<u8> {
        value.to_bytes()
    }
    fn decode(bytes: &[u8]) -> Result<CardinalitySketch, String> {
        CardinalitySketch::from_bytes(bytes).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactDayUpdate {
    pub day: DayKey,
    pub first_seen_in_batch: u64,
    pub cumulative: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimateDayUpdate {
    pub day: DayKey,
    pub estimate: u64,
}

fn day_of_addressed(record: &LogRecord) -> Option<String> {
    record.geo.ip.as_ref().map(|_| DayKey::of(record).0)
}

/// Inserts every record's IP into its day's exact set.
pub fn exact_daily_update(batch: &Batch, state: &mut KeyedState) -> Result<Vec<ExactDayUpdate>, EngineError> {
    let out = update_state_by_key::<ExactCodec, _, _, _>(batch, state, EXACT_NAMESPACE, day_of_addressed, |day, prior, records| {
        let mut set = prior.unwrap_or_default();
        let mut first_seen = 0u64;
        for r in records {
            if let Some(ip) = &r.record.geo.ip {
                first_seen += set.insert(ip) as u64;
            }
        }
        let update = ExactDayUpdate {
            day: DayKey(day.to_owned()),
            first_seen_in_batch: first_seen,
            cumulative: set.count(),
        };
        Ok((set, update))
    })?;
    Ok(out.into_values().collect())
}

/// Inserts every record's IP into its day's sketch. A stored sketch with a
/// different precision is an error rather than being rebuilt.
pub fn hll_daily_update(
    batch: &Batch,
    state: &mut KeyedState,
    precision: u8,
) -> Result<Vec<EstimateDayUpdate>, EngineError> {
    let out = update_state_by_key::<SketchCodec, _, _, _>(batch, state, HLL_NAMESPACE, day_of_addressed, |day, prior, records| {
        let mut sketch = match prior {
            Some(s) if s.precision() != precision => {
                return Err(SketchError::PrecisionMismatch(s.precision(), precision).into());
            }
            Some(s) => s,
            None => CardinalitySketch::new(precision)?,
        };
        for r in records {
            if let Some(ip) = &r.record.geo.ip {
                sketch.insert(ip.as_bytes());
            }
        }
        let update = EstimateDayUpdate {
            day: DayKey(day.to_owned()),
            estimate: sketch.estimate(),
        };
        Ok((sketch, update))
    })?;
    Ok(out.into_values().collect())
}

pub struct ExactDailyOperator;

impl Operator for ExactDailyOperator {
    fn name(&self) -> &str {
        "exact_daily"
    }

    fn process(&mut self, batch: &Batch, state: &mut KeyedState) -> Result<Vec<Value>, EngineError> {
        Ok(exact_daily_update(batch, state)?
            .into_iter()
            .map(|u| serde_json::to_value(u).expect("serializable"))
            .collect())
    }
}

pub struct HllDailyOperator {
    precision: u8,
}

impl HllDailyOperator {
    pub fn new(precision: u8) -> Result<Self, SketchError> {
        CardinalitySketch::new(precision)?;
        Ok(Self { precision })
    }
}

impl Operator for HllDailyOperator {
    fn name(&self) -> &str {
        "hll_daily"
    }

    fn process(&mut self, batch: &Batch, state: &mut KeyedState) -> Result<Vec<Value>, EngineError> {
        Ok(hll_daily_update(batch, state, self.precision)?
            .into_iter()
            .map(|u| serde_json::to_value(u).expect("serializable"))
            .collect())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("no exact count for the day yet")]
    DivisionByZeroDay,
}

/// `|estimate - exact| / exact * 100`.
pub fn error_report(exact_cumulative: u64, estimate: u64) -> Result<f64, ReportError> {
    if exact_cumulative == 0 {
        return Err(ReportError::DivisionByZeroDay);
    }
    Ok((estimate as f64 - exact_cumulative as f64).abs() / exact_cumulative as f64 * 100.0)
}

/// One line of the per-batch results log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyResultRow {
    pub batch_id: u64,
    pub day: DayKey,
    pub method: Method,
    pub value: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_pct: Option<f64>,
    pub processing_ms: f64,
    pub checkpoint_bytes: u64,
}

pub fn write_result_rows<W: Write>(mut out: W, rows: &[DailyResultRow]) -> io::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
