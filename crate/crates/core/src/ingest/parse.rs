//! Provider JSON payloads to normalized series.

use serde_json::Value;

use super::IngestError;
use crate::ts::{MonthlySeries, QuarterlySeries, YearMonth};

#[derive(Debug, Clone, PartialEq)]
pub struct RawObservation {
    pub period: YearMonth,
    pub value: Option<f64>,
    /// Provider-reported units or similar annotation.
    pub meta: String,
}

fn parse_err(provider: &str, message: impl Into<String>) -> IngestError {
    IngestError::Parse { provider: provider.to_string(), message: message.into() }
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok().filter(|x| x.is_finite()),
        _ => None,
    }
}

/// EIA v2: `{"response": {"data": [{"period": "YYYY-MM", "value": …}, …]}}`.
pub fn parse_eia(body: &str) -> Result<Vec<RawObservation>, IngestError> {
    let doc: Value = serde_json::from_str(body).map_err(|e| parse_err("eia", e.to_string()))?;
    if let Some(err) = doc.get("error") {
        return Err(parse_err("eia", format!("provider error: {err}")));
    }
    let data = doc
        .pointer("/response/data")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("eia", "missing response.data array"))?;
    data.iter()
        .map(|row| {
            let period = row
                .get("period")
                .and_then(Value::as_str)
                .ok_or_else(|| parse_err("eia", "observation without period"))?;
            let value = row.get("value").ok_or_else(|| parse_err("eia", format!("{period}: no value field")))?;
            let parsed = number(value);
            if parsed.is_none() && !value.is_null() && value.as_str().is_none_or(|s| !s.trim().is_empty()) {
                return Err(parse_err("eia", format!("{period}: unparseable value {value}")));
            }
            Ok(RawObservation {
                period: period.parse().map_err(|e| parse_err("eia", format!("{e}")))?,
                value: parsed,
                meta: row.get("units").and_then(Value::as_str).unwrap_or_default().to_string(),
            })
        })
        .collect()
}

/// FRED: `{"observations": [{"date": "YYYY-MM-DD", "value": "…"}, …]}`; `"."` is missing.
pub fn parse_fred(body: &str) -> Result<Vec<RawObservation>, IngestError> {
    let doc: Value = serde_json::from_str(body).map_err(|e| parse_err("fred", e.to_string()))?;
    if let Some(msg) = doc.get("error_message") {
        return Err(parse_err("fred", format!("provider error: {msg}")));
    }
    let units = doc.get("units").and_then(Value::as_str).unwrap_or_default().to_string();
    let obs = doc
        .get("observations")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("fred", "missing observations array"))?;
    obs.iter()
        .map(|row| {
            let date = row
                .get("date")
                .and_then(Value::as_str)
                .ok_or_else(|| parse_err("fred", "observation without date"))?;
            let raw = row.get("value").and_then(Value::as_str).unwrap_or(".");
            let value = match raw.trim() {
                "." | "" => None,
                s => Some(
                    s.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| parse_err("fred", format!("{date}: unparseable value {s:?}")))?,
                ),
            };
            Ok(RawObservation {
                period: date.parse().map_err(|e| parse_err("fred", format!("{e}")))?,
                value,
                meta: units.clone(),
            })
        })
        .collect()
}

/// Sorted, trimmed of leading and trailing missing values, gap-free values.
fn contiguous(
    series_id: &str,
    mut obs: Vec<RawObservation>,
    step: i64,
) -> Result<(YearMonth, Vec<f64>), IngestError> {
    obs.sort_by_key(|o| o.period);
    if let Some(w) = obs.windows(2).find(|w| w[0].period == w[1].period) {
        return Err(IngestError::Parse {
            provider: series_id.to_string(),
            message: format!("duplicate period {}", w[0].period),
        });
    }
    let first = obs.iter().position(|o| o.value.is_some());
    let last = obs.iter().rposition(|o| o.value.is_some());
    let (Some(first), Some(last)) = (first, last) else {
        return Err(IngestError::Parse {
            provider: series_id.to_string(),
            message: "no observations with values".into(),
        });
    };
    let obs = &obs[first..=last];
    let start = obs[0].period;
    let mut values = Vec::with_capacity(obs.len());
    for (i, o) in obs.iter().enumerate() {
        let expected = start.offset(i as i64 * step);
        if o.period != expected {
            return Err(IngestError::Gap { series_id: series_id.to_string(), missing: expected.to_string() });
        }
        match o.value {
            Some(v) => values.push(v),
            None => return Err(IngestError::Gap { series_id: series_id.to_string(), missing: o.period.to_string() }),
        }
    }
    Ok((start, values))
}

pub fn normalize_monthly(series_id: &str, obs: Vec<RawObservation>) -> Result<MonthlySeries, IngestError> {
    let units = obs.first().map(|o| o.meta.clone()).unwrap_or_default();
    let (start, values) = contiguous(series_id, obs, 1)?;
    Ok(MonthlySeries::new(series_id, start, values)?.with_units(units))
}

pub fn normalize_quarterly(series_id: &str, obs: Vec<RawObservation>) -> Result<QuarterlySeries, IngestError> {
    if let Some(o) = obs.iter().find(|o| (o.period.month() - 1) % 3 != 0) {
        return Err(IngestError::Parse {
            provider: series_id.to_string(),
            message: format!("{} does not open a quarter", o.period),
        });
    }
    let (start, values) = contiguous(series_id, obs, 3)?;
    Ok(QuarterlySeries::new(series_id, start.quarter(), values)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ym(y: i32, m: u32) -> YearMonth {
        YearMonth::new(y, m).unwrap()
    }

    #[test]
    fn eia_payload_any_order_with_tail_null() {
        let body = r#"{"response":{"total":4,"data":[
            {"period":"2024-03","value":null,"units":"TBPD"},
            {"period":"2024-02","value":"81.5","units":"TBPD"},
            {"period":"2024-01","value":80.25,"units":"TBPD"}]}}"#;
        let s = normalize_monthly("prod", parse_eia(body).unwrap()).unwrap();
        assert_eq!(s.start(), ym(2024, 1));
        assert_eq!(s.values(), &[80.25, 81.5]);
        assert_eq!(s.units(), "TBPD");
    }

    #[test]
    fn fred_payload_with_leading_missing() {
        let body = r#"{"units":"Index","observations":[
            {"date":"1967-12-01","value":"."},
            {"date":"1968-01-01","value":"34.1"},
            {"date":"1968-02-01","value":"34.2"}]}"#;
        let s = normalize_monthly("CPIAUCSL", parse_fred(body).unwrap()).unwrap();
        assert_eq!(s.start(), ym(1968, 1));
        assert_eq!(s.values(), &[34.1, 34.2]);
    }

    #[test]
    fn hole_names_missing_month() {
        let body = r#"{"observations":[
            {"date":"2001-01-01","value":"1"},
            {"date":"2001-02-01","value":"2"},
            {"date":"2001-04-01","value":"4"}]}"#;
        match normalize_monthly("x", parse_fred(body).unwrap()) {
            Err(IngestError::Gap { missing, .. }) => assert_eq!(missing, "2001-03"),
            other => panic!("{other:?}"),
        }
        let body = r#"{"observations":[
            {"date":"2001-01-01","value":"1"},
            {"date":"2001-02-01","value":"."},
            {"date":"2001-03-01","value":"3"}]}"#;
        match normalize_monthly("x", parse_fred(body).unwrap()) {
            Err(IngestError::Gap { missing, .. }) => assert_eq!(missing, "2001-02"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_payloads() {
        assert!(matches!(parse_eia("not json"), Err(IngestError::Parse { .. })));
        assert!(matches!(parse_eia(r#"{"error":"bad key","code":403}"#), Err(IngestError::Parse { .. })));
        assert!(matches!(parse_fred(r#"{"observations":[{"date":"2001-01-01","value":"abc"}]}"#), Err(IngestError::Parse { .. })));
        let dup = r#"{"observations":[{"date":"2001-01-01","value":"1"},{"date":"2001-01-01","value":"2"}]}"#;
        assert!(matches!(normalize_monthly("x", parse_fred(dup).unwrap()), Err(IngestError::Parse { .. })));
        let empty = r#"{"observations":[{"date":"2001-01-01","value":"."}]}"#;
        assert!(normalize_monthly("x", parse_fred(empty).unwrap()).is_err());
    }

    #[test]
    fn quarterly_fred() {
        let body = r#"{"observations":[
            {"date":"2000-01-01","value":"100"},
            {"date":"2000-04-01","value":"101"},
            {"date":"2000-07-01","value":"102"}]}"#;
        let q = normalize_quarterly("GDPC1", parse_fred(body).unwrap()).unwrap();
        assert_eq!(q.start().to_string(), "2000-Q1");
        assert_eq!(q.values(), &[100.0, 101.0, 102.0]);
        let gap = body.replace("2000-04-01", "2000-10-01");
        assert!(normalize_quarterly("GDPC1", parse_fred(&gap).unwrap()).is_err());
    }
}
