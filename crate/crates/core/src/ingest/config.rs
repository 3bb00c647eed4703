//! Flat `key = value` data configuration.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' anything
//! entry   := key ws* '=' ws* value [ws+ '#' anything]
//! key     := [a-z0-9_]+ ('.' [a-z0-9_]+)*
//! ```
//!
//! Keys are unique. Relative paths resolve against the directory holding the
//! file. Recognised keys:
//!
//! * `<role>.{provider,series_id,path,route,facet,api_key_env,cache_ttl,transform,name}`
//!   for roles `production`, `activity`, `price`, `price_nominal`, `cpi`
//! * `price.mode = real | deflate`, `price.demean = sample | none | FROM:TO`
//! * `sample = FROM:TO`, `cumulate = name[,name…]`
//! * `eia.base_url`, `fred.base_url`
//! * `target.<name>.*` with the source keys plus
//!   `frequency`, `seasonal_adjust`, `cumulative`, `lags`, `block_len`
//! * `run.*`, free-form settings read by the command-line runner

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::IngestError;
use crate::ts::MonthRange;

pub const DEFAULT_EIA_BASE: &str = "https://api.eia.gov/v2";
pub const DEFAULT_FRED_BASE: &str = "https://api.stlouisfed.org/fred";
pub const DEFAULT_CACHE_TTL_HOURS: f64 = 24.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provider {
    Eia,
    Fred,
    Csv,
}

impl Provider {
    pub fn name(self) -> &'static str {
        match self {
            Provider::Eia => "eia",
            Provider::Fred => "fred",
            Provider::Csv => "csv",
        }
    }

    pub fn default_key_env(self) -> Option<&'static str> {
        match self {
            Provider::Eia => Some("EIA_API_KEY"),
            Provider::Fred => Some("FRED_API_KEY"),
            Provider::Csv => None,
        }
    }
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Provider {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "eia" => Ok(Provider::Eia),
            "fred" => Ok(Provider::Fred),
            "csv" => Ok(Provider::Csv),
            other => Err(format!("unknown provider {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frequency {
    Monthly,
    Quarterly,
}

impl FromStr for Frequency {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "monthly" | "m" => Ok(Frequency::Monthly),
            "quarterly" | "q" => Ok(Frequency::Quarterly),
            other => Err(format!("unknown frequency {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    None,
    Log,
    LogDiff,
    Demean,
}

impl FromStr for Transform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Transform::None),
            "log" => Ok(Transform::Log),
            "log_diff" => Ok(Transform::LogDiff),
            "demean" => Ok(Transform::Demean),
            other => Err(format!("unknown transform {other:?}")),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transform::None => "none",
            Transform::Log => "log",
            Transform::LogDiff => "log_diff",
            Transform::Demean => "demean",
        })
    }
}

/// Where one series comes from.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub provider: Provider,
    pub series_id: String,
    pub path: Option<PathBuf>,
    /// EIA v2 route below the base URL, e.g. `petroleum/pri/rac2`.
    pub route: Option<String>,
    /// EIA facet the series id filters on.
    pub facet: String,
    pub api_key_env: Option<String>,
    pub cache_ttl_hours: f64,
    pub frequency: Frequency,
}

impl SourceSpec {
    pub fn csv(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let series_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self {
            provider: Provider::Csv,
            series_id,
            path: Some(path),
            route: None,
            facet: "series".into(),
            api_key_env: None,
            cache_ttl_hours: DEFAULT_CACHE_TTL_HOURS,
            frequency: Frequency::Monthly,
        }
    }

    pub fn remote(provider: Provider, series_id: impl Into<String>) -> Self {
        Self {
            provider,
            series_id: series_id.into(),
            path: None,
            route: None,
            facet: "series".into(),
            api_key_env: None,
            cache_ttl_hours: DEFAULT_CACHE_TTL_HOURS,
            frequency: Frequency::Monthly,
        }
    }

    pub fn quarterly(mut self) -> Self {
        self.frequency = Frequency::Quarterly;
        self
    }

    pub fn with_route(mut self, route: impl Into<String>) -> Self {
        self.route = Some(route.into());
        self
    }

    pub fn with_ttl(mut self, hours: f64) -> Self {
        self.cache_ttl_hours = hours;
        self
    }

    pub fn key_env(&self) -> Option<&str> {
        self.api_key_env.as_deref().or(self.provider.default_key_env())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.series_id.trim().is_empty() {
            return Err("series_id must be non-empty".into());
        }
        if self.provider == Provider::Csv && self.path.is_none() {
            return Err(format!("csv source {} needs a path", self.series_id));
        }
        if self.provider == Provider::Eia && self.route.is_none() {
            return Err(format!("eia source {} needs a route", self.series_id));
        }
        if !(self.cache_ttl_hours >= 0.0) {
            return Err("cache_ttl must be a non-negative number of hours".into());
        }
        Ok(())
    }
}

/// One panel column: a source plus its transform.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRole {
    pub name: String,
    pub source: SourceSpec,
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriceSource {
    /// Already the real price (or its log).
    Real(SeriesRole),
    /// `ln(nominal / cpi)`.
    Deflate {
        name: String,
        nominal: SourceSpec,
        cpi: SourceSpec,
    },
}

impl PriceSource {
    pub fn name(&self) -> &str {
        match self {
            PriceSource::Real(r) => &r.name,
            PriceSource::Deflate { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemeanWindow {
    None,
    /// The panel's final aligned range.
    Sample,
    Window(MonthRange),
}

impl FromStr for DemeanWindow {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(DemeanWindow::None),
            "sample" => Ok(DemeanWindow::Sample),
            w => w
                .parse::<MonthRange>()
                .map(DemeanWindow::Window)
                .map_err(|e| e.to_string()),
        }
    }
}

impl fmt::Display for DemeanWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DemeanWindow::None => f.write_str("none"),
            DemeanWindow::Sample => f.write_str("sample"),
            DemeanWindow::Window(w) => write!(f, "{w}"),
        }
    }
}

/// External series for second-stage regressions.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub name: String,
    pub source: SourceSpec,
    pub transform: Transform,
    pub seasonal_adjust: bool,
    pub cumulative: bool,
    pub lags: Option<usize>,
    pub block_len: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Endpoints {
    pub eia: String,
    pub fred: String,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self {
            eia: DEFAULT_EIA_BASE.into(),
            fred: DEFAULT_FRED_BASE.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub production: SeriesRole,
    pub activity: SeriesRole,
    pub price: PriceSource,
    pub price_demean: DemeanWindow,
    pub sample: Option<MonthRange>,
    pub cumulate: Vec<String>,
    pub endpoints: Endpoints,
    pub targets: Vec<TargetSpec>,
    /// `run.*` entries with the prefix stripped.
    pub settings: BTreeMap<String, String>,
}

impl DataConfig {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, IngestError> {
        let entries = parse_entries(text)?;
        Builder { entries, base_dir }.build()
    }

    pub fn var_names(&self) -> Vec<String> {
        vec![self.production.name.clone(), self.activity.name.clone(), self.price.name().to_string()]
    }

    pub fn setting<T: FromStr>(&self, key: &str) -> Result<Option<T>, IngestError>
    where
        T::Err: fmt::Display,
    {
        self.settings
            .get(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| IngestError::Config {
                    line: 0,
                    message: format!("run.{key}: {e}"),
                })
            })
            .transpose()
    }

    pub fn target(&self, name: &str) -> Option<&TargetSpec> {
        self.targets.iter().find(|t| t.name == name)
    }
}

struct Entry {
    line: usize,
    value: String,
}

fn parse_entries(text: &str) -> Result<BTreeMap<String, Entry>, IngestError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| IngestError::Config {
            line,
            message: format!("expected key = value, got {content:?}"),
        })?;
        let key = key.trim();
        let valid = !key.is_empty()
            && key.split('.').all(|part| {
                !part.is_empty() && part.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
            });
        if !valid {
            return Err(IngestError::Config { line, message: format!("invalid key {key:?}") });
        }
        let entry = Entry { line, value: value.trim().to_string() };
        if let Some(prev) = out.insert(key.to_string(), entry) {
            return Err(IngestError::Config {
                line,
                message: format!("duplicate key {key:?} (first on line {})", prev.line),
            });
        }
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    if line.trim_start().starts_with('#') {
        return "";
    }
    let bytes = line.as_bytes();
    for i in 1..bytes.len() {
        if bytes[i] == b'#' && bytes[i - 1].is_ascii_whitespace() {
            return &line[..i];
        }
    }
    line
}

const SOURCE_KEYS: &[&str] = &[
    "provider",
    "series_id",
    "path",
    "route",
    "facet",
    "api_key_env",
    "cache_ttl",
    "frequency",
];

struct Builder<'a> {
    entries: BTreeMap<String, Entry>,
    base_dir: &'a Path,
}

impl Builder<'_> {
    fn err(&self, key: &str, message: impl Into<String>) -> IngestError {
        IngestError::Config {
            line: self.entries.get(key).map_or(0, |e| e.line),
            message: format!("{key}: {}", message.into()),
        }
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, IngestError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| self.err(key, e.to_string())))
            .transpose()
    }

    fn require(&self, key: &str) -> Result<&str, IngestError> {
        self.get(key)
            .ok_or_else(|| IngestError::Config { line: 0, message: format!("missing key {key}") })
    }

    fn source(&self, prefix: &str) -> Result<SourceSpec, IngestError> {
        let k = |s: &str| format!("{prefix}.{s}");
        let provider: Provider = self
            .require(&k("provider"))?
            .parse()
            .map_err(|e: String| self.err(&k("provider"), e))?;
        let path = self.get(&k("path")).map(|p| self.base_dir.join(p));
        let mut spec = match provider {
            Provider::Csv => {
                let p = path.ok_or_else(|| self.err(&k("provider"), "csv provider requires a path"))?;
                SourceSpec::csv(p)
            }
            other => {
                let mut s = SourceSpec::remote(other, self.require(&k("series_id"))?);
                s.path = path;
                s
            }
        };
        if let Some(id) = self.get(&k("series_id")) {
            spec.series_id = id.to_string();
        }
        spec.route = self.get(&k("route")).map(|r| r.trim_matches('/').to_string());
        if let Some(f) = self.get(&k("facet")) {
            spec.facet = f.to_string();
        }
        spec.api_key_env = self.get(&k("api_key_env")).map(str::to_string);
        if let Some(ttl) = self.parsed::<f64>(&k("cache_ttl"))? {
            spec.cache_ttl_hours = ttl;
        }
        if let Some(f) = self.get(&k("frequency")) {
            spec.frequency = f.parse().map_err(|e: String| self.err(&k("frequency"), e))?;
        }
        spec.validate().map_err(|e| self.err(&k("provider"), e))?;
        Ok(spec)
    }

    fn role(&self, prefix: &str, default_name: &str, default_transform: Transform) -> Result<SeriesRole, IngestError> {
        let source = self.source(prefix)?;
        if source.frequency != Frequency::Monthly {
            return Err(self.err(&format!("{prefix}.frequency"), "panel series must be monthly"));
        }
        Ok(SeriesRole {
            name: self.get(&format!("{prefix}.name")).unwrap_or(default_name).to_string(),
            source,
            transform: self.parsed(&format!("{prefix}.transform"))?.unwrap_or(default_transform),
        })
    }

    fn check_keys(&self) -> Result<(), IngestError> {
        let role_key = |role: &str, field: &str| match role {
            "production" | "activity" => SOURCE_KEYS.contains(&field) || field == "transform" || field == "name",
            "price" => SOURCE_KEYS.contains(&field) || ["transform", "name", "mode", "demean"].contains(&field),
            "price_nominal" | "cpi" => SOURCE_KEYS.contains(&field),
            _ => false,
        };
        for (key, entry) in &self.entries {
            let ok = match key.split_once('.') {
                None => ["sample", "cumulate"].contains(&key.as_str()),
                Some(("run", _)) => true,
                Some(("eia" | "fred", "base_url")) => true,
                Some(("target", rest)) => rest.split_once('.').is_some_and(|(_, field)| {
                    SOURCE_KEYS.contains(&field)
                        || ["transform", "seasonal_adjust", "cumulative", "lags", "block_len"].contains(&field)
                }),
                Some((role, field)) => role_key(role, field),
            };
            if !ok {
                return Err(IngestError::Config { line: entry.line, message: format!("unknown key {key:?}") });
            }
        }
        Ok(())
    }

    fn build(self) -> Result<DataConfig, IngestError> {
        self.check_keys()?;
        let production = self.role("production", "dprod", Transform::LogDiff)?;
        let activity = self.role("activity", "rea", Transform::None)?;
        let mode = self.get("price.mode").unwrap_or("real");
        let price = match mode {
            "real" => PriceSource::Real(self.role("price", "rpo", Transform::None)?),
            "deflate" => PriceSource::Deflate {
                name: self.get("price.name").unwrap_or("rpo").to_string(),
                nominal: self.source("price_nominal")?,
                cpi: self.source("cpi")?,
            },
            other => return Err(self.err("price.mode", format!("expected real or deflate, got {other:?}"))),
        };
        let price_demean = self.parsed("price.demean")?.unwrap_or(match price {
            PriceSource::Real(_) => DemeanWindow::None,
            PriceSource::Deflate { .. } => DemeanWindow::Sample,
        });
        let sample = self.parsed("sample")?;
        let cumulate = self
            .get("cumulate")
            .map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
            .unwrap_or_else(|| vec![production.name.clone()]);

        let mut endpoints = Endpoints::default();
        if let Some(u) = self.get("eia.base_url") {
            endpoints.eia = u.trim_end_matches('/').to_string();
        }
        if let Some(u) = self.get("fred.base_url") {
            endpoints.fred = u.trim_end_matches('/').to_string();
        }

        let mut target_names: Vec<&str> = self
            .entries
            .keys()
            .filter_map(|k| k.strip_prefix("target."))
            .filter_map(|rest| rest.split_once('.').map(|(name, _)| name))
            .collect();
        target_names.dedup();
        let targets = target_names
            .into_iter()
            .map(|name| {
                let p = format!("target.{name}");
                Ok(TargetSpec {
                    name: name.to_string(),
                    source: self.source(&p)?,
                    transform: self.parsed(&format!("{p}.transform"))?.unwrap_or(Transform::None),
                    seasonal_adjust: self.parsed(&format!("{p}.seasonal_adjust"))?.unwrap_or(false),
                    cumulative: self.parsed(&format!("{p}.cumulative"))?.unwrap_or(false),
                    lags: self.parsed(&format!("{p}.lags"))?,
                    block_len: self.parsed(&format!("{p}.block_len"))?,
                })
            })
            .collect::<Result<Vec<_>, IngestError>>()?;

        let settings = self
            .entries
            .iter()
            .filter_map(|(k, e)| k.strip_prefix("run.").map(|s| (s.to_string(), e.value.clone())))
            .collect();

        Ok(DataConfig {
            production,
            activity,
            price,
            price_demean,
            sample,
            cumulate,
            endpoints,
            targets,
            settings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ts::YearMonth;

    const BASE: &str = "\
# three csv files
production.provider = csv
production.path = p.csv
activity.provider = csv   # trailing comment
activity.path = a.csv
price.provider = csv
price.path = r.csv
";

    #[test]
    fn minimal_csv_config() {
        let cfg = DataConfig::parse(BASE, Path::new("/data")).unwrap();
        assert_eq!(cfg.production.source.path.as_deref(), Some(Path::new("/data/p.csv")));
        assert_eq!(cfg.production.source.series_id, "p");
        assert_eq!(cfg.production.transform, Transform::LogDiff);
        assert_eq!(cfg.activity.source.path.as_deref(), Some(Path::new("/data/a.csv")));
        assert_eq!(cfg.var_names(), vec!["dprod", "rea", "rpo"]);
        assert_eq!(cfg.cumulate, vec!["dprod"]);
        assert_eq!(cfg.price_demean, DemeanWindow::None);
        assert!(cfg.targets.is_empty());
    }

    #[test]
    fn deflated_price_and_targets() {
        let text = format!(
            "{}\nprice.mode = deflate\nprice_nominal.provider = eia\nprice_nominal.series_id = R1300____3\n\
             price_nominal.route = /petroleum/pri/rac2/\ncpi.provider = fred\ncpi.series_id = CPIAUCSL\n\
             price.demean = 1974-02:2007-12\nsample = 1975-01:2020-12\nrun.lags = 24\n\
             target.gdp.provider = csv\ntarget.gdp.path = gdp.csv\ntarget.gdp.frequency = quarterly\n\
             target.gdp.transform = log_diff\ntarget.gdp.cumulative = true\nfred.base_url = http://localhost/fred/\n",
            BASE.replace("price.provider = csv\nprice.path = r.csv\n", "")
        );
        let cfg = DataConfig::parse(&text, Path::new("/d")).unwrap();
        match &cfg.price {
            PriceSource::Deflate { nominal, cpi, .. } => {
                assert_eq!(nominal.route.as_deref(), Some("petroleum/pri/rac2"));
                assert_eq!(nominal.key_env(), Some("EIA_API_KEY"));
                assert_eq!(cpi.key_env(), Some("FRED_API_KEY"));
            }
            other => panic!("{other:?}"),
        }
        let w = MonthRange::new(YearMonth::new(1974, 2).unwrap(), YearMonth::new(2007, 12).unwrap()).unwrap();
        assert_eq!(cfg.price_demean, DemeanWindow::Window(w));
        assert_eq!(cfg.setting::<usize>("lags").unwrap(), Some(24));
        assert_eq!(cfg.endpoints.fred, "http://localhost/fred");
        let gdp = cfg.target("gdp").unwrap();
        assert_eq!(gdp.source.frequency, Frequency::Quarterly);
        assert!(gdp.cumulative);
        assert_eq!(gdp.transform, Transform::LogDiff);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let dup = format!("{BASE}production.path = q.csv\n");
        match DataConfig::parse(&dup, Path::new(".")) {
            Err(IngestError::Config { line: 8, .. }) => {}
            other => panic!("{other:?}"),
        }
        let unknown = format!("{BASE}activity.colour = red\n");
        match DataConfig::parse(&unknown, Path::new(".")) {
            Err(IngestError::Config { line: 8, message }) => assert!(message.contains("activity.colour")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            DataConfig::parse("production.provider csv\n", Path::new(".")),
            Err(IngestError::Config { line: 1, .. })
        ));
        let missing = BASE.replace("production.path = p.csv\n", "");
        assert!(DataConfig::parse(&missing, Path::new(".")).is_err());
        let eia_without_route = BASE.replace("production.provider = csv", "production.provider = eia\nproduction.series_id = X");
        assert!(DataConfig::parse(&eia_without_route, Path::new(".")).is_err());
    }

    #[test]
    fn hash_inside_value_kept() {
        assert_eq!(strip_comment("a = x#y # note"), "a = x#y ");
    }
}
