//! Monthly and quarterly series containers, calendar alignment and the data
//! transforms used to build the VAR input panel.
//!
//! Dates are plain `(year, month)` pairs. There is no day-of-month or time
//! zone anywhere in the crate.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TsError {
    #[error("series `{id}` has a non-positive value at {month}")]
    NonPositiveValue { id: String, month: YearMonth },
    #[error("series `{id}` has a missing value at {month}")]
    MissingValue { id: String, month: YearMonth },
    #[error("series `{id}` has a gap: {missing} is missing")]
    Gap { id: String, missing: YearMonth },
    #[error("series `{id}` has a gap: {missing} is missing")]
    QuarterGap { id: String, missing: YearQuarter },
    #[error("averaging window is empty or outside the series range")]
    EmptyWindow,
    #[error("series ranges do not overlap")]
    NoOverlap,
    #[error("series `{0}` covers no complete calendar quarter")]
    NoCompleteQuarter(String),
    #[error("series `{id}` is too short: need {needed} observations, got {got}")]
    TooShort { id: String, needed: usize, got: usize },
    #[error("panel columns must share one month range")]
    RangeMismatch,
    #[error("panel needs at least one column")]
    EmptyPanel,
    #[error("invalid date `{0}`")]
    BadDate(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for TsError {
    fn from(e: csv::Error) -> Self {
        TsError::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, TsError>;

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    year: i32,
    month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(TsError::BadDate(format!("{year}-{month}")));
        }
        Ok(Self { year, month: month as u8 })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u32 {
        self.month as u32
    }

    /// Months since year 0, January.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ord: i64) -> Self {
        Self {
            year: ord.div_euclid(12) as i32,
            month: (ord.rem_euclid(12) + 1) as u8,
        }
    }

    pub fn offset(self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }

    pub fn succ(self) -> Self {
        self.offset(1)
    }

    /// Signed number of months from `self` to `other`.
    pub fn months_until(self, other: YearMonth) -> i64 {
        other.ordinal() - self.ordinal()
    }

    pub fn quarter(self) -> YearQuarter {
        YearQuarter {
            year: self.year,
            quarter: (self.month - 1) / 3 + 1,
        }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = TsError;

    /// Accepts `YYYY-MM`, and `YYYY-MM-DD` where the day is ignored.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || TsError::BadDate(s.to_string());
        let mut parts = s.trim().split('-');
        let year = parts.next().ok_or_else(bad)?.parse::<i32>().map_err(|_| bad())?;
        let month = parts.next().ok_or_else(bad)?.parse::<u32>().map_err(|_| bad())?;
        match parts.next() {
            None => {}
            Some(day) if day.parse::<u32>().is_ok() && parts.next().is_none() => {}
            Some(_) => return Err(bad()),
        }
        YearMonth::new(year, month).map_err(|_| bad())
    }
}

impl Serialize for YearMonth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive range of months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MonthRange {
    pub start: YearMonth,
    pub end: YearMonth,
}

impl MonthRange {
    pub fn new(start: YearMonth, end: YearMonth) -> Result<Self> {
        if end < start {
            return Err(TsError::EmptyWindow);
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        (self.start.months_until(self.end) + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, m: YearMonth) -> bool {
        self.start <= m && m <= self.end
    }

    pub fn contains_range(&self, other: &MonthRange) -> bool {
        self.contains(other.start) && self.contains(other.end)
    }

    pub fn intersect(&self, other: &MonthRange) -> Option<MonthRange> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start <= end).then_some(MonthRange { start, end })
    }

    pub fn months(&self) -> impl Iterator<Item = YearMonth> {
        let start = self.start;
        (0..self.len() as i64).map(move |i| start.offset(i))
    }
}

impl fmt::Display for MonthRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

impl FromStr for MonthRange {
    type Err = TsError;

    /// `FROM:TO`, both `YYYY-MM`.
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| TsError::BadDate(s.to_string()))?;
        MonthRange::new(a.parse()?, b.parse()?)
    }
}

/// A calendar quarter, `quarter` in 1..=4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearQuarter {
    year: i32,
    quarter: u8,
}

impl YearQuarter {
    pub fn new(year: i32, quarter: u32) -> Result<Self> {
        if !(1..=4).contains(&quarter) {
            return Err(TsError::BadDate(format!("{year}-Q{quarter}")));
        }
        Ok(Self { year, quarter: quarter as u8 })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn quarter(self) -> u32 {
        self.quarter as u32
    }

    pub fn ordinal(self) -> i64 {
        self.year as i64 * 4 + (self.quarter as i64 - 1)
    }

    pub fn from_ordinal(ord: i64) -> Self {
        Self {
            year: ord.div_euclid(4) as i32,
            quarter: (ord.rem_euclid(4) + 1) as u8,
        }
    }

    pub fn offset(self, quarters: i64) -> Self {
        Self::from_ordinal(self.ordinal() + quarters)
    }

    pub fn first_month(self) -> YearMonth {
        YearMonth {
            year: self.year,
            month: (self.quarter - 1) * 3 + 1,
        }
    }
}

impl fmt::Display for YearQuarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-Q{}", self.year, self.quarter)
    }
}

impl FromStr for YearQuarter {
    type Err = TsError;

    /// Accepts `YYYY-Qn`, or a month date (`YYYY-MM[-DD]`) whose month opens a quarter.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || TsError::BadDate(s.to_string());
        let t = s.trim();
        if let Some((y, q)) = t.split_once("-Q") {
            let year = y.parse::<i32>().map_err(|_| bad())?;
            let quarter = q.parse::<u32>().map_err(|_| bad())?;
            return YearQuarter::new(year, quarter).map_err(|_| bad());
        }
        let m: YearMonth = t.parse().map_err(|_| bad())?;
        if (m.month() - 1) % 3 != 0 {
            return Err(bad());
        }
        Ok(m.quarter())
    }
}

impl Serialize for YearQuarter {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Gap-free monthly observations.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthlySeries {
    id: String,
    start: YearMonth,
    values: Vec<f64>,
    units: String,
}

impl MonthlySeries {
    /// Every value must be finite; NaN is treated as a missing month.
    pub fn new(id: impl Into<String>, start: YearMonth, values: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TsError::MissingValue {
                id,
                month: start.offset(i as i64),
            });
        }
        if values.is_empty() {
            return Err(TsError::TooShort { id, needed: 1, got: 0 });
        }
        Ok(Self {
            id,
            start,
            values,
            units: String::new(),
        })
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.units = units.into();
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn units(&self) -> &str {
        &self.units
    }

    pub fn start(&self) -> YearMonth {
        self.start
    }

    pub fn end(&self) -> YearMonth {
        self.start.offset(self.values.len() as i64 - 1)
    }

    pub fn range(&self) -> MonthRange {
        MonthRange {
            start: self.start,
            end: self.end(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, m: YearMonth) -> Option<f64> {
        let i = self.start.months_until(m);
        (i >= 0).then(|| self.values.get(i as usize).copied()).flatten()
    }

    pub fn iter(&self) -> impl Iterator<Item = (YearMonth, f64)> + '_ {
        let start = self.start;
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (start.offset(i as i64), *v))
    }

    /// Sub-series over `window`, which must lie inside the series range.
    pub fn slice(&self, window: MonthRange) -> Result<MonthlySeries> {
        if !self.range().contains_range(&window) {
            return Err(TsError::EmptyWindow);
        }
        let from = self.start.months_until(window.start) as usize;
        Ok(MonthlySeries {
            id: self.id.clone(),
            start: window.start,
            values: self.values[from..from + window.len()].to_vec(),
            units: self.units.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<MonthlySeries> {
        MonthlySeries::new(self.id.clone(), self.start, self.values.iter().map(|v| f(*v)).collect())
            .map(|s| s.with_units(self.units.clone()))
    }

    /// Reads the `date,value` CSV layout.
    pub fn read_csv(id: impl Into<String>, reader: impl Read) -> Result<MonthlySeries> {
        let id = id.into();
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut start = None;
        let mut expected: Option<YearMonth> = None;
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(TsError::Csv(format!("short record in `{id}`")));
            }
            let month: YearMonth = rec[0].parse()?;
            if let Some(exp) = expected {
                if month != exp {
                    return Err(if month > exp {
                        TsError::Gap { id, missing: exp }
                    } else {
                        TsError::Csv(format!("dates out of order at {month} in `{id}`"))
                    });
                }
            }
            let raw = rec[1].trim();
            let value = if raw.is_empty() || raw == "NA" || raw == "." {
                f64::NAN
            } else {
                raw.parse::<f64>()
                    .map_err(|_| TsError::Csv(format!("bad value `{raw}` at {month} in `{id}`")))?
            };
            start.get_or_insert(month);
            expected = Some(month.succ());
            values.push(value);
        }
        let start = start.ok_or_else(|| TsError::TooShort { id: id.clone(), needed: 1, got: 0 })?;
        MonthlySeries::new(id, start, values)
    }

    pub fn read_csv_path(id: impl Into<String>, path: &Path) -> Result<MonthlySeries> {
        MonthlySeries::read_csv(id, std::fs::File::open(path)?)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["date", "value"])?;
        for (m, v) in self.iter() {
            w.write_record([m.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8 csv")
    }
}

/// Columns sharing one month range; column order is the recursive ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    columns: Vec<MonthlySeries>,
}

impl Panel {
    pub fn new(columns: Vec<MonthlySeries>) -> Result<Self> {
        let first = columns.first().ok_or(TsError::EmptyPanel)?;
        let range = first.range();
        if columns.iter().any(|c| c.range() != range) {
            return Err(TsError::RangeMismatch);
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &[MonthlySeries] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&MonthlySeries> {
        self.columns.iter().find(|c| c.id() == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.id() == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.id().to_string()).collect()
    }

    pub fn range(&self) -> MonthRange {
        self.columns[0].range()
    }

    pub fn nobs(&self) -> usize {
        self.columns[0].len()
    }

    pub fn nvars(&self) -> usize {
        self.columns.len()
    }

    /// T×K data matrix, rows are months.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.nobs(), self.nvars(), |t, k| self.columns[k].values[t])
    }

    pub fn from_matrix(names: &[String], start: YearMonth, data: &DMatrix<f64>) -> Result<Self> {
        let cols = names
            .iter()
            .enumerate()
            .map(|(k, n)| MonthlySeries::new(n.clone(), start, data.column(k).iter().copied().collect()))
            .collect::<Result<Vec<_>>>()?;
        Panel::new(cols)
    }

    pub fn restrict(&self, window: MonthRange) -> Result<Panel> {
        Panel::new(
            self.columns
                .iter()
                .map(|c| c.slice(window))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    /// Wide CSV: `date,<name1>,<name2>,...`.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.names());
        w.write_record(&header)?;
        for (t, m) in self.range().months().enumerate() {
            let mut row = vec![m.to_string()];
            row.extend(self.columns.iter().map(|c| c.values[t].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(reader: impl Read) -> Result<Panel> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut start = None;
        let mut expected: Option<YearMonth> = None;
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for rec in rdr.records() {
            let rec = rec?;
            let month: YearMonth = rec[0].parse()?;
            if let Some(exp) = expected {
                if month != exp {
                    return Err(TsError::Gap { id: "panel".into(), missing: exp });
                }
            }
            start.get_or_insert(month);
            expected = Some(month.succ());
            for (k, col) in cols.iter_mut().enumerate() {
                let raw = rec.get(k + 1).unwrap_or("");
                col.push(raw.trim().parse::<f64>().unwrap_or(f64::NAN));
            }
        }
        let start = start.ok_or(TsError::EmptyPanel)?;
        Panel::new(
            names
                .into_iter()
                .zip(cols)
                .map(|(n, v)| MonthlySeries::new(n, start, v))
                .collect::<Result<Vec<_>>>()?,
        )
    }
}

/// Quarterly observations.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarterlySeries {
    id: String,
    start: YearQuarter,
    values: Vec<f64>,
}

impl QuarterlySeries {
    pub fn new(id: impl Into<String>, start: YearQuarter, values: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if values.is_empty() {
            return Err(TsError::TooShort { id, needed: 1, got: 0 });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TsError::MissingValue {
                id,
                month: start.offset(i as i64).first_month(),
            });
        }
        Ok(Self { id, start, values })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn start(&self) -> YearQuarter {
        self.start
    }

    pub fn end(&self) -> YearQuarter {
        self.start.offset(self.values.len() as i64 - 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, q: YearQuarter) -> Option<f64> {
        let i = q.ordinal() - self.start.ordinal();
        (i >= 0).then(|| self.values.get(i as usize).copied()).flatten()
    }

    pub fn log_diff(&self) -> Result<QuarterlySeries> {
        if self.values.len() < 2 {
            return Err(TsError::TooShort { id: self.id.clone(), needed: 2, got: self.values.len() });
        }
        if let Some(i) = self.values.iter().position(|v| *v <= 0.0) {
            return Err(TsError::NonPositiveValue {
                id: self.id.clone(),
                month: self.start.offset(i as i64).first_month(),
            });
        }
        let out = self.values.windows(2).map(|w| w[1].ln() - w[0].ln()).collect();
        QuarterlySeries::new(self.id.clone(), self.start.offset(1), out)
    }

    /// Reads `date,value` with `YYYY-Qn` (or quarter-opening month) dates.
    pub fn read_csv(id: impl Into<String>, reader: impl Read) -> Result<QuarterlySeries> {
        let id = id.into();
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut start = None;
        let mut expected: Option<YearQuarter> = None;
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let q: YearQuarter = rec[0].parse()?;
            if let Some(exp) = expected {
                if q != exp {
                    return Err(TsError::QuarterGap { id, missing: exp });
                }
            }
            start.get_or_insert(q);
            expected = Some(q.offset(1));
            let raw = rec.get(1).unwrap_or("").trim();
            values.push(raw.parse::<f64>().unwrap_or(f64::NAN));
        }
        let start = start.ok_or_else(|| TsError::TooShort { id: id.clone(), needed: 1, got: 0 })?;
        QuarterlySeries::new(id, start, values)
    }

    pub fn read_csv_path(id: impl Into<String>, path: &Path) -> Result<QuarterlySeries> {
        QuarterlySeries::read_csv(id, std::fs::File::open(path)?)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["date", "value"])?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([self.start.offset(i as i64).to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `out[t] = ln s[t+1] - ln s[t]`, starting one month later.
pub fn log_diff(s: &MonthlySeries) -> Result<MonthlySeries> {
    if s.len() < 2 {
        return Err(TsError::TooShort { id: s.id.clone(), needed: 2, got: s.len() });
    }
    if let Some((month, _)) = s.iter().find(|(_, v)| *v <= 0.0) {
        return Err(TsError::NonPositiveValue { id: s.id.clone(), month });
    }
    let out = s.values.windows(2).map(|w| w[1].ln() - w[0].ln()).collect();
    Ok(MonthlySeries::new(s.id.clone(), s.start.succ(), out)?.with_units(s.units.clone()))
}

/// Subtracts the mean over `window` (default: the whole series) from every observation.
pub fn demean(s: &MonthlySeries, window: Option<MonthRange>) -> Result<MonthlySeries> {
    let window = window.unwrap_or_else(|| s.range());
    let sub = s.slice(window)?;
    let mean = sub.values.iter().sum::<f64>() / sub.len() as f64;
    s.map(|v| v - mean)
}

/// Truncates every series to the common month range.
pub fn align(series: &[MonthlySeries]) -> Result<Panel> {
    let first = series.first().ok_or(TsError::EmptyPanel)?;
    let common = series
        .iter()
        .skip(1)
        .try_fold(first.range(), |acc, s| acc.intersect(&s.range()))
        .ok_or(TsError::NoOverlap)?;
    Panel::new(
        series
            .iter()
            .map(|s| s.slice(common))
            .collect::<Result<Vec<_>>>()?,
    )
}

/// Mean of each fully covered calendar quarter; partial quarters at either end are dropped.
pub fn quarterly_average(s: &MonthlySeries) -> Result<QuarterlySeries> {
    let lead = (3 - (s.start.month() as i64 - 1) % 3) % 3;
    let first_month = s.start.offset(lead);
    let n_quarters = (s.len() as i64 - lead).max(0) / 3;
    if n_quarters == 0 {
        return Err(TsError::NoCompleteQuarter(s.id.clone()));
    }
    let vals = s.values[lead as usize..]
        .chunks_exact(3)
        .take(n_quarters as usize)
        // centred on the first month so a constant quarter averages to itself exactly
        .map(|c| c[0] + ((c[1] - c[0]) + (c[2] - c[0])) / 3.0)
        .collect();
    QuarterlySeries::new(s.id.clone(), first_month.quarter(), vals)
}

/// Removes month-of-year effects: the residual from a regression on a constant
/// and eleven monthly dummies, with the overall sample mean added back.
///
/// With every calendar month present the regression's fitted value is the
/// month-of-year mean, so the adjusted value is `x - mean(month) + mean(all)`.
pub fn seasonal_adjust(s: &MonthlySeries) -> Result<MonthlySeries> {
    if s.len() < 24 {
        return Err(TsError::TooShort { id: s.id.clone(), needed: 24, got: s.len() });
    }
    let mut sums = [0.0f64; 12];
    let mut counts = [0usize; 12];
    for (m, v) in s.iter() {
        sums[m.month() as usize - 1] += v;
        counts[m.month() as usize - 1] += 1;
    }
    let overall = s.values.iter().sum::<f64>() / s.len() as f64;
    let out = s
        .iter()
        .map(|(m, v)| {
            let i = m.month() as usize - 1;
            v - sums[i] / counts[i] as f64 + overall
        })
        .collect();
    Ok(MonthlySeries::new(s.id.clone(), s.start, out)?.with_units(s.units.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ym(s: &str) -> YearMonth {
        s.parse().unwrap()
    }

    fn series(start: &str, v: &[f64]) -> MonthlySeries {
        MonthlySeries::new("x", ym(start), v.to_vec()).unwrap()
    }

    #[test]
    fn month_arithmetic() {
        assert_eq!(ym("1999-12").succ(), ym("2000-01"));
        assert_eq!(ym("2000-01").offset(-1), ym("1999-12"));
        assert_eq!(ym("1973-02").months_until(ym("2007-12")), 418);
        assert_eq!(ym("2024-05").quarter().to_string(), "2024-Q2");
        assert_eq!(ym("1974-02-01"), ym("1974-02"));
        assert!("1974-13".parse::<YearMonth>().is_err());
        assert!("1974".parse::<YearMonth>().is_err());
        let r: MonthRange = "1974-02:2007-12".parse().unwrap();
        assert_eq!(r.len(), 407);
        assert!("2007-12:1974-02".parse::<MonthRange>().is_err());
    }

    #[test]
    fn quarter_parsing() {
        let q: YearQuarter = "1990-Q3".parse().unwrap();
        assert_eq!(q.first_month(), ym("1990-07"));
        let q2: YearQuarter = "1990-07-01".parse().unwrap();
        assert_eq!(q, q2);
        assert!("1990-08-01".parse::<YearQuarter>().is_err());
        assert_eq!(YearQuarter::from_ordinal(q.ordinal() + 2).to_string(), "1991-Q1");
    }

    #[test]
    fn log_diff_examples() {
        let out = log_diff(&series("2000-01", &[5.0, 5.0, 5.0])).unwrap();
        assert_eq!(out.values(), &[0.0, 0.0]);
        assert_eq!(out.start(), ym("2000-02"));

        let e = std::f64::consts::E;
        let out = log_diff(&series("2000-01", &[1.0, e, e * e])).unwrap();
        assert_abs_diff_eq!(out.values()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.values()[1], 1.0, epsilon = 1e-15);

        // ln(1.1) to 20 digits: 0.09531017980432486004
        let out = log_diff(&series("2000-01", &[100.0, 110.0])).unwrap();
        assert_abs_diff_eq!(out.values()[0], 0.095_310_179_804_324_86, epsilon = 1e-15);
    }

    #[test]
    fn log_diff_rejects_non_positive() {
        let err = log_diff(&series("2000-01", &[1.0, 0.0, 2.0])).unwrap_err();
        assert!(matches!(err, TsError::NonPositiveValue { month, .. } if month == ym("2000-02")));
        assert!(matches!(log_diff(&series("2000-01", &[1.0])), Err(TsError::TooShort { .. })));
    }

    #[test]
    fn demean_examples() {
        let s = series("2000-01", &[1.0, 2.0, 3.0]);
        assert_eq!(demean(&s, None).unwrap().values(), &[-1.0, 0.0, 1.0]);
        let w = MonthRange::new(ym("2000-01"), ym("2000-02")).unwrap();
        assert_eq!(demean(&s, Some(w)).unwrap().values(), &[-0.5, 0.5, 1.5]);
        let twice = demean(&demean(&s, Some(w)).unwrap(), Some(w)).unwrap();
        assert_eq!(twice.values(), &[-0.5, 0.5, 1.5]);
        let outside = MonthRange::new(ym("1999-01"), ym("2000-02")).unwrap();
        assert!(matches!(demean(&s, Some(outside)), Err(TsError::EmptyWindow)));
    }

    #[test]
    fn align_examples() {
        let a = MonthlySeries::new("a", ym("1990-01"), vec![1.0; 132]).unwrap();
        let b = MonthlySeries::new("b", ym("1995-01"), vec![2.0; 132]).unwrap();
        let p = align(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(p.range(), "1995-01:2000-12".parse().unwrap());
        assert_eq!(p.names(), vec!["a", "b"]);

        let p = align(&[a.clone(), a.clone().with_id("a2")]).unwrap();
        assert_eq!(p.columns()[0], a);

        let c = MonthlySeries::new("c", ym("2010-01"), vec![2.0; 12]).unwrap();
        assert!(matches!(align(&[a, c]), Err(TsError::NoOverlap)));
    }

    #[test]
    fn quarterly_average_examples() {
        let s = series("2000-01", &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let q = quarterly_average(&s).unwrap();
        assert_eq!(q.values(), &[2.0, 5.0]);
        assert_eq!(q.start().to_string(), "2000-Q1");

        let s = series("2000-02", &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let q = quarterly_average(&s).unwrap();
        assert_eq!(q.start().to_string(), "2000-Q2");
        assert_eq!(q.values(), &[4.0]);

        let q = quarterly_average(&series("2000-03", &[7.0; 10])).unwrap();
        assert_eq!(q.values(), &[7.0, 7.0, 7.0]);

        assert!(matches!(
            quarterly_average(&series("2000-02", &[1.0, 2.0, 3.0])),
            Err(TsError::NoCompleteQuarter(_))
        ));
    }

    #[test]
    fn seasonal_adjust_examples() {
        let flat = series("2001-01", &[3.25; 30]);
        assert_eq!(seasonal_adjust(&flat).unwrap().values(), flat.values());

        let pattern: Vec<f64> = (0..48).map(|i| (i % 12 + 1) as f64).collect();
        let adj = seasonal_adjust(&series("2001-01", &pattern)).unwrap();
        for v in adj.values() {
            assert_abs_diff_eq!(*v, 6.5, epsilon = 1e-12);
        }
        assert!(matches!(
            seasonal_adjust(&series("2001-01", &[1.0; 23])),
            Err(TsError::TooShort { .. })
        ));
    }

    /// Oracle: explicit least squares on [1, D_2..D_12] through the normal equations.
    #[test]
    fn seasonal_adjust_matches_dummy_regression() {
        let n = 64usize;
        let start = ym("1990-04");
        let x: Vec<f64> = (0..n)
            .map(|t| {
                let m = start.offset(t as i64).month() as f64;
                (0.3 * t as f64).sin() + 2.0 * (m * 0.9).cos() + 0.01 * m * m
            })
            .collect();
        let s = series("1990-04", &x);
        let adj = seasonal_adjust(&s).unwrap();

        let design = DMatrix::from_fn(n, 12, |t, j| {
            if j == 0 {
                1.0
            } else if start.offset(t as i64).month() as usize == j + 1 {
                1.0
            } else {
                0.0
            }
        });
        let y = nalgebra::DVector::from_vec(x.clone());
        let xtx = design.transpose() * &design;
        let xty = design.transpose() * &y;
        let beta = xtx.lu().solve(&xty).unwrap();
        let resid = &y - &design * beta;
        let mean = x.iter().sum::<f64>() / n as f64;
        for t in 0..n {
            assert_abs_diff_eq!(adj.values()[t], resid[t] + mean, epsilon = 1e-8);
        }
    }

    #[test]
    fn gaps_are_load_errors() {
        let csv = "date,value\n2000-01,1\n2000-02,2\n2000-04,3\n";
        let err = MonthlySeries::read_csv("g", csv.as_bytes()).unwrap_err();
        assert!(matches!(err, TsError::Gap { missing, .. } if missing == ym("2000-03")));
        let csv = "date,value\n2000-01,1\n2000-02,\n2000-03,3\n";
        let err = MonthlySeries::read_csv("g", csv.as_bytes()).unwrap_err();
        assert!(matches!(err, TsError::MissingValue { month, .. } if month == ym("2000-02")));
    }

    #[test]
    fn csv_layout() {
        let s = series("1999-11", &[1.5, -0.25, 3.0]);
        let text = s.to_csv_string();
        assert_eq!(text, "date,value\n1999-11,1.5\n1999-12,-0.25\n2000-01,3\n");
        assert_eq!(MonthlySeries::read_csv("x", text.as_bytes()).unwrap(), s);
    }

    proptest! {
        #[test]
        fn log_diff_inverts_exp_cumsum(xs in prop::collection::vec(-0.5f64..0.5, 1..60)) {
            let mut level = Vec::with_capacity(xs.len() + 1);
            let mut acc = 0.0f64;
            level.push(acc.exp());
            for x in &xs {
                acc += x;
                level.push(acc.exp());
            }
            let out = log_diff(&series("1980-01", &level)).unwrap();
            for (a, b) in out.values().iter().zip(&xs) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn demeaned_window_mean_is_zero(xs in prop::collection::vec(-1e3f64..1e3, 2..80), cut in 0usize..40) {
            let s = series("1980-01", &xs);
            let end = (cut % xs.len()).max(0);
            let w = MonthRange::new(s.start(), s.start().offset(end as i64)).unwrap();
            let d = demean(&s, Some(w)).unwrap();
            let m = d.slice(w).unwrap().values().iter().sum::<f64>() / w.len() as f64;
            prop_assert!(m.abs() < 1e-12 * (1.0 + xs.iter().fold(0.0f64, |a, b| a.max(b.abs()))));
        }

        #[test]
        fn quarterly_average_of_quarter_constant(qs in prop::collection::vec(-10f64..10.0, 1..20)) {
            let monthly: Vec<f64> = qs.iter().flat_map(|q| [*q, *q, *q]).collect();
            let out = quarterly_average(&series("1985-04", &monthly)).unwrap();
            prop_assert_eq!(out.values(), &qs[..]);
        }

        #[test]
        fn align_idempotent(a0 in 0i64..40, la in 1i64..40, b0 in 0i64..40, lb in 1i64..40) {
            let base = ym("1990-01");
            let a = MonthlySeries::new("a", base.offset(a0), (0..la).map(|i| i as f64).collect()).unwrap();
            let b = MonthlySeries::new("b", base.offset(b0), (0..lb).map(|i| -(i as f64)).collect()).unwrap();
            match align(&[a, b]) {
                Ok(p) => {
                    let again = align(p.columns()).unwrap();
                    prop_assert_eq!(&again, &p);
                    prop_assert_eq!(p.names(), vec!["a".to_string(), "b".to_string()]);
                }
                Err(e) => prop_assert!(matches!(e, TsError::NoOverlap)),
            }
        }
    }
}
