//! Data acquisition: provider clients behind one injectable transport, an
//! on-disk cache, CSV sources, and construction of the three-variable panel.

mod cache;
mod config;
mod parse;
mod transport;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

pub use cache::{sha256_hex, Cache, CacheEntry, CacheMeta};
pub use config::{
    DataConfig, DemeanWindow, Endpoints, Frequency, PriceSource, Provider, SeriesRole, SourceSpec, TargetSpec,
    Transform, DEFAULT_CACHE_TTL_HOURS, DEFAULT_EIA_BASE, DEFAULT_FRED_BASE,
};
pub use parse::{normalize_monthly, normalize_quarterly, parse_eia, parse_fred, RawObservation};
pub use transport::{redact, HttpResponse, OfflineTransport, RecordingTransport, Transport, UreqTransport};

use crate::ts::{self, MonthRange, MonthlySeries, Panel, QuarterlySeries, TsError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("http {status} from {url}: {excerpt}")]
    Http { status: u16, url: String, excerpt: String },
    #[error("network: {0}")]
    Network(String),
    #[error("{provider}: parse error: {message}")]
    Parse { provider: String, message: String },
    #[error("series `{series_id}` has a gap: {missing} is missing")]
    Gap { series_id: String, missing: String },
    #[error("missing API key: set {var}")]
    MissingApiKey { var: String },
    #[error("offline and no cached copy of {provider}/{series_id}")]
    OfflineCacheMiss { provider: String, series_id: String },
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Ts(#[from] TsError),
}

pub type EnvLookup = Arc<dyn Fn(&str) -> Option<String> + Send + Sync>;
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

const EXCERPT_LEN: usize = 200;

/// Cache directory from `SVAR_CACHE_DIR`, else a per-user default.
pub fn default_cache_dir(env: &dyn Fn(&str) -> Option<String>) -> PathBuf {
    if let Some(dir) = env("SVAR_CACHE_DIR").filter(|d| !d.is_empty()) {
        return PathBuf::from(dir);
    }
    if let Some(dir) = env("XDG_CACHE_HOME").filter(|d| !d.is_empty()) {
        return PathBuf::from(dir).join("oilsvar");
    }
    match env("HOME").filter(|d| !d.is_empty()) {
        Some(home) => PathBuf::from(home).join(".cache").join("oilsvar"),
        None => PathBuf::from(".oilsvar-cache"),
    }
}

fn encode_brackets(s: &str) -> String {
    s.replace('[', "%5B").replace(']', "%5D")
}

pub struct Fetcher {
    transport: Arc<dyn Transport>,
    cache: Option<Cache>,
    offline: bool,
    env: EnvLookup,
    clock: Clock,
    endpoints: Endpoints,
}

impl Fetcher {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self {
            transport,
            cache: None,
            offline: false,
            env: Arc::new(|k| std::env::var(k).ok()),
            clock: Arc::new(|| {
                SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            }),
            endpoints: Endpoints::default(),
        }
    }

    pub fn with_cache(mut self, cache: Cache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Serve remote sources from cache regardless of age; never touch the transport.
    pub fn offline(mut self, offline: bool) -> Self {
        self.offline = offline;
        self
    }

    pub fn with_env(mut self, env: EnvLookup) -> Self {
        self.env = env;
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_endpoints(mut self, endpoints: Endpoints) -> Self {
        self.endpoints = endpoints;
        self
    }

    pub fn cache(&self) -> Option<&Cache> {
        self.cache.as_ref()
    }

    pub fn url(&self, spec: &SourceSpec, api_key: &str) -> Result<String, IngestError> {
        match spec.provider {
            Provider::Eia => {
                let route = spec
                    .route
                    .as_deref()
                    .ok_or_else(|| IngestError::Unsupported(format!("eia source {} has no route", spec.series_id)))?;
                if spec.frequency != Frequency::Monthly {
                    return Err(IngestError::Unsupported("eia sources are monthly only".into()));
                }
                Ok(format!(
                    "{}/{}/data/?frequency=monthly&{}=value&{}={}&{}=period&{}=asc&length=5000&api_key={}",
                    self.endpoints.eia,
                    route,
                    encode_brackets("data[0]"),
                    encode_brackets(&format!("facets[{}][]", spec.facet)),
                    spec.series_id,
                    encode_brackets("sort[0][column]"),
                    encode_brackets("sort[0][direction]"),
                    api_key
                ))
            }
            Provider::Fred => Ok(format!(
                "{}/series/observations?series_id={}&file_type=json&api_key={}",
                self.endpoints.fred, spec.series_id, api_key
            )),
            Provider::Csv => Err(IngestError::Unsupported("csv sources have no URL".into())),
        }
    }

    fn download(&self, spec: &SourceSpec) -> Result<(String, String), IngestError> {
        let var = spec.key_env().unwrap_or_default().to_string();
        let key = (self.env)(&var)
            .filter(|k| !k.trim().is_empty())
            .ok_or(IngestError::MissingApiKey { var })?;
        let url = self.url(spec, &key)?;
        let resp = self.transport.get(&url)?;
        if resp.status != 200 {
            return Err(IngestError::Http {
                status: resp.status,
                url: redact(&url),
                excerpt: resp.body.chars().take(EXCERPT_LEN).collect::<String>().replace('\n', " "),
            });
        }
        let obs = match spec.provider {
            Provider::Eia => parse_eia(&resp.body)?,
            _ => parse_fred(&resp.body)?,
        };
        let text = match spec.frequency {
            Frequency::Monthly => normalize_monthly(&spec.series_id, obs)?.to_csv_string(),
            Frequency::Quarterly => {
                let q = normalize_quarterly(&spec.series_id, obs)?;
                let mut buf = Vec::new();
                q.write_csv(&mut buf)?;
                String::from_utf8(buf).expect("csv output is utf-8")
            }
        };
        Ok((text, redact(&url)))
    }

    /// Series text in the ts CSV format, from cache when fresh.
    fn remote_text(&self, spec: &SourceSpec) -> Result<String, IngestError> {
        let now = (self.clock)();
        if let Some(entry) = self.cache.as_ref().and_then(|c| c.load(spec.provider, &spec.series_id)) {
            if self.offline || entry.age_hours(now) <= spec.cache_ttl_hours {
                return Ok(entry.content);
            }
        }
        if self.offline {
            return Err(IngestError::OfflineCacheMiss {
                provider: spec.provider.name().to_string(),
                series_id: spec.series_id.clone(),
            });
        }
        let (text, url) = self.download(spec)?;
        if let Some(cache) = &self.cache {
            cache.store(spec.provider, &spec.series_id, &text, &url, now)?;
        }
        Ok(text)
    }

    fn csv_path<'a>(&self, spec: &'a SourceSpec) -> Result<&'a PathBuf, IngestError> {
        spec.path
            .as_ref()
            .ok_or_else(|| IngestError::Unsupported(format!("csv source {} has no path", spec.series_id)))
    }

    pub fn fetch(&self, spec: &SourceSpec) -> Result<MonthlySeries, IngestError> {
        spec.validate().map_err(|m| IngestError::Config { line: 0, message: m })?;
        if spec.frequency != Frequency::Monthly {
            return Err(IngestError::Unsupported(format!("{} is not monthly", spec.series_id)));
        }
        Ok(match spec.provider {
            Provider::Csv => MonthlySeries::read_csv_path(spec.series_id.clone(), self.csv_path(spec)?)?,
            _ => MonthlySeries::read_csv(spec.series_id.clone(), self.remote_text(spec)?.as_bytes())?,
        })
    }

    pub fn fetch_quarterly(&self, spec: &SourceSpec) -> Result<QuarterlySeries, IngestError> {
        spec.validate().map_err(|m| IngestError::Config { line: 0, message: m })?;
        if spec.frequency != Frequency::Quarterly {
            return Err(IngestError::Unsupported(format!("{} is not quarterly", spec.series_id)));
        }
        Ok(match spec.provider {
            Provider::Csv => QuarterlySeries::read_csv_path(spec.series_id.clone(), self.csv_path(spec)?)?,
            _ => QuarterlySeries::read_csv(spec.series_id.clone(), self.remote_text(spec)?.as_bytes())?,
        })
    }
}

fn log_level(s: &MonthlySeries) -> Result<MonthlySeries, IngestError> {
    if let Some((month, _)) = s.iter().find(|(_, v)| *v <= 0.0) {
        return Err(TsError::NonPositiveValue { id: s.id().to_string(), month }.into());
    }
    Ok(s.map(f64::ln)?)
}

pub fn apply_transform(s: &MonthlySeries, t: Transform) -> Result<MonthlySeries, IngestError> {
    Ok(match t {
        Transform::None => s.clone(),
        Transform::Log => log_level(s)?,
        Transform::LogDiff => ts::log_diff(s)?,
        Transform::Demean => ts::demean(s, None)?,
    })
}

/// `ln(nominal / cpi)` on the common months, demeaned over `demean_window`.
pub fn build_real_price(
    nominal: &MonthlySeries,
    cpi: &MonthlySeries,
    demean_window: Option<MonthRange>,
) -> Result<MonthlySeries, IngestError> {
    let log_ratio = real_price_level(nominal, cpi)?;
    Ok(match demean_window {
        Some(w) => ts::demean(&log_ratio, Some(w))?,
        None => log_ratio,
    })
}

fn real_price_level(nominal: &MonthlySeries, cpi: &MonthlySeries) -> Result<MonthlySeries, IngestError> {
    let panel = ts::align(&[nominal.clone(), cpi.clone()])?;
    let n = log_level(&panel.columns()[0])?;
    let c = log_level(&panel.columns()[1])?;
    let values = n.values().iter().zip(c.values()).map(|(a, b)| a - b).collect();
    Ok(MonthlySeries::new("rpo", n.start(), values)?)
}

/// Production, activity and price columns, in that order, on their common months.
///
/// `sample` overrides the configured window.
pub fn build_panel(cfg: &DataConfig, fetcher: &Fetcher, sample: Option<MonthRange>) -> Result<Panel, IngestError> {
    let role = |r: &SeriesRole| -> Result<MonthlySeries, IngestError> {
        Ok(apply_transform(&fetcher.fetch(&r.source)?, r.transform)?.with_id(r.name.clone()))
    };
    let production = role(&cfg.production)?;
    let activity = role(&cfg.activity)?;
    let price = match &cfg.price {
        PriceSource::Real(r) => role(r)?,
        PriceSource::Deflate { name, nominal, cpi } => {
            real_price_level(&fetcher.fetch(nominal)?, &fetcher.fetch(cpi)?)?.with_id(name.clone())
        }
    };
    let mut common = ts::align(&[production.clone(), activity.clone(), price.clone()])?.range();
    if let Some(w) = sample.or(cfg.sample) {
        if !common.contains_range(&w) {
            return Err(IngestError::Unsupported(format!("sample {w} lies outside the available data {common}")));
        }
        common = w;
    }
    let price = match cfg.price_demean {
        DemeanWindow::None => price,
        DemeanWindow::Sample => ts::demean(&price, Some(common))?,
        DemeanWindow::Window(w) => ts::demean(&price, Some(w))?,
    };
    Ok(ts::align(&[production, activity, price])?.restrict(common)?)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetSeries {
    Monthly(MonthlySeries),
    Quarterly(QuarterlySeries),
}

/// A second-stage dependent series with its configured adjustments applied.
pub fn load_target(t: &TargetSpec, fetcher: &Fetcher) -> Result<TargetSeries, IngestError> {
    match t.source.frequency {
        Frequency::Monthly => {
            let mut s = fetcher.fetch(&t.source)?;
            if t.seasonal_adjust {
                s = ts::seasonal_adjust(&s)?;
            }
            Ok(TargetSeries::Monthly(apply_transform(&s, t.transform)?.with_id(t.name.clone())))
        }
        Frequency::Quarterly => {
            if t.seasonal_adjust {
                return Err(IngestError::Unsupported(format!("target {}: seasonal adjustment is monthly only", t.name)));
            }
            let q = fetcher.fetch_quarterly(&t.source)?;
            let q = match t.transform {
                Transform::None => q,
                Transform::LogDiff => q.log_diff()?,
                other => {
                    return Err(IngestError::Unsupported(format!("target {}: transform {other} on quarterly data", t.name)))
                }
            };
            Ok(TargetSeries::Quarterly(QuarterlySeries::new(t.name.clone(), q.start(), q.values().to_vec())?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ts::YearMonth;
    use approx::assert_abs_diff_eq;
    use std::path::Path;

    fn ym(y: i32, m: u32) -> YearMonth {
        YearMonth::new(y, m).unwrap()
    }

    fn fred_body(start: YearMonth, values: &[f64]) -> String {
        let obs: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, v)| format!(r#"{{"date":"{}-01","value":"{v}"}}"#, start.offset(i as i64)))
            .collect();
        format!(r#"{{"observations":[{}]}}"#, obs.join(","))
    }

    fn env_with_key() -> EnvLookup {
        Arc::new(|k| (k == "FRED_API_KEY" || k == "EIA_API_KEY").then(|| "k".to_string()))
    }

    #[test]
    fn real_price_examples() {
        let n = MonthlySeries::new("n", ym(2000, 1), vec![2.0, 3.0, 5.0]).unwrap();
        let p = build_real_price(&n, &n, None).unwrap();
        assert!(p.values().iter().all(|v| *v == 0.0));

        let cpi = MonthlySeries::new("c", ym(2000, 1), vec![1.0, 1.5, 2.0]).unwrap();
        let doubled = n.map(|v| 2.0 * v).unwrap();
        let a = build_real_price(&n, &cpi, None).unwrap();
        let b = build_real_price(&doubled, &cpi, None).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_abs_diff_eq!(y - x, 2f64.ln(), epsilon = 1e-15);
        }
        let full = Some(a.range());
        let a = build_real_price(&n, &cpi, full).unwrap();
        let b = build_real_price(&doubled, &cpi, full).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
        let bad = MonthlySeries::new("c", ym(2000, 1), vec![1.0, 0.0, 2.0]).unwrap();
        assert!(matches!(build_real_price(&n, &bad, None), Err(IngestError::Ts(TsError::NonPositiveValue { .. }))));
    }

    #[test]
    fn cache_hit_skips_network() {
        let dir = tempfile::tempdir().unwrap();
        let transport = Arc::new(RecordingTransport::new().respond("CPIAUCSL", 200, fred_body(ym(2000, 1), &[1.0, 2.0])));
        let clock_t = Arc::new(std::sync::atomic::AtomicU64::new(1_000_000));
        let clock = {
            let c = clock_t.clone();
            Arc::new(move || c.load(std::sync::atomic::Ordering::SeqCst)) as Clock
        };
        let fetcher = Fetcher::new(transport.clone())
            .with_cache(Cache::new(dir.path()))
            .with_env(env_with_key())
            .with_clock(clock)
            .with_endpoints(Endpoints { eia: "http://eia".into(), fred: "http://fred".into() });
        let spec = SourceSpec::remote(Provider::Fred, "CPIAUCSL").with_ttl(1.0);
        let a = fetcher.fetch(&spec).unwrap();
        assert_eq!(transport.call_count(), 1);
        assert_eq!(a.values(), &[1.0, 2.0]);
        let meta = fetcher.cache().unwrap().load(Provider::Fred, "CPIAUCSL").unwrap().meta;
        assert!(!meta.source_url.contains("api_key"));

        let b = fetcher.fetch(&spec).unwrap();
        assert_eq!(transport.call_count(), 1);
        assert_eq!(a, b);

        clock_t.store(1_000_000 + 7200, std::sync::atomic::Ordering::SeqCst);
        fetcher.fetch(&spec).unwrap();
        assert_eq!(transport.call_count(), 2);

        let offline = Fetcher::new(Arc::new(OfflineTransport)).with_cache(Cache::new(dir.path())).offline(true);
        assert_eq!(offline.fetch(&spec.clone().with_ttl(0.0)).unwrap(), a);
        assert!(matches!(
            offline.fetch(&SourceSpec::remote(Provider::Fred, "IGREA")),
            Err(IngestError::OfflineCacheMiss { .. })
        ));
    }

    #[test]
    fn truncated_cache_refetched() {
        let dir = tempfile::tempdir().unwrap();
        let transport = Arc::new(RecordingTransport::new().respond("X1", 200, fred_body(ym(2000, 1), &[1.0, 2.0, 3.0])));
        let fetcher = Fetcher::new(transport.clone()).with_cache(Cache::new(dir.path())).with_env(env_with_key());
        let spec = SourceSpec::remote(Provider::Fred, "X1");
        let a = fetcher.fetch(&spec).unwrap();
        let path = fetcher.cache().unwrap().data_path(Provider::Fred, "X1");
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() - 4]).unwrap();
        let b = fetcher.fetch(&spec).unwrap();
        assert_eq!(transport.call_count(), 2);
        assert_eq!(a, b);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
    }

    #[test]
    fn errors_from_remote() {
        let transport = Arc::new(
            RecordingTransport::new()
                .respond("BAD", 500, "upstream exploded")
                .respond("HOLE", 200, r#"{"observations":[{"date":"2000-01-01","value":"1"},{"date":"2000-03-01","value":"1"}]}"#),
        );
        let fetcher = Fetcher::new(transport.clone()).with_env(env_with_key());
        match fetcher.fetch(&SourceSpec::remote(Provider::Fred, "BAD")) {
            Err(IngestError::Http { status: 500, excerpt, url }) => {
                assert_eq!(excerpt, "upstream exploded");
                assert!(!url.contains("api_key"));
            }
            other => panic!("{other:?}"),
        }
        match fetcher.fetch(&SourceSpec::remote(Provider::Fred, "HOLE")) {
            Err(IngestError::Gap { missing, .. }) => assert_eq!(missing, "2000-02"),
            other => panic!("{other:?}"),
        }
        let no_key = Fetcher::new(transport.clone()).with_env(Arc::new(|_| None));
        match no_key.fetch(&SourceSpec::remote(Provider::Eia, "P").with_route("petroleum/crd")) {
            Err(e @ IngestError::MissingApiKey { .. }) => assert!(e.to_string().contains("EIA_API_KEY")),
            other => panic!("{other:?}"),
        }
        assert_eq!(transport.call_count(), 2);
    }

    #[test]
    fn eia_url_shape() {
        let fetcher = Fetcher::new(Arc::new(OfflineTransport));
        let spec = SourceSpec::remote(Provider::Eia, "R1300____3").with_route("petroleum/pri/rac2");
        let url = fetcher.url(&spec, "KEY").unwrap();
        assert_eq!(
            url,
            "https://api.eia.gov/v2/petroleum/pri/rac2/data/?frequency=monthly&data%5B0%5D=value\
             &facets%5Bseries%5D%5B%5D=R1300____3&sort%5B0%5D%5Bcolumn%5D=period\
             &sort%5B0%5D%5Bdirection%5D=asc&length=5000&api_key=KEY"
        );
    }

    fn write_series(dir: &Path, name: &str, start: YearMonth, values: Vec<f64>) {
        let s = MonthlySeries::new(name, start, values).unwrap();
        s.write_csv(std::fs::File::create(dir.join(format!("{name}.csv"))).unwrap()).unwrap();
    }

    #[test]
    fn panel_from_csv_config() {
        let dir = tempfile::tempdir().unwrap();
        write_series(dir.path(), "prod", ym(2000, 1), (0..40).map(|t| 100.0 + t as f64).collect());
        write_series(dir.path(), "rea", ym(2000, 3), (0..40).map(|t| (t as f64).sin()).collect());
        write_series(dir.path(), "rac", ym(1999, 6), (0..50).map(|t| 20.0 + t as f64).collect());
        write_series(dir.path(), "cpi", ym(1999, 1), (0..60).map(|t| 1.0 + 0.01 * t as f64).collect());
        let text = "production.provider = csv\nproduction.path = prod.csv\n\
                    activity.provider = csv\nactivity.path = rea.csv\n\
                    price.mode = deflate\nprice_nominal.provider = csv\nprice_nominal.path = rac.csv\n\
                    cpi.provider = csv\ncpi.path = cpi.csv\n";
        let cfg = DataConfig::parse(text, dir.path()).unwrap();
        let fetcher = Fetcher::new(Arc::new(OfflineTransport)).offline(true);
        let panel = build_panel(&cfg, &fetcher, None).unwrap();
        assert_eq!(panel.names(), vec!["dprod", "rea", "rpo"]);
        assert_eq!(panel.range().start, ym(2000, 3));
        assert_eq!(panel.range().end, ym(2003, 4));
        let rpo = panel.column("rpo").unwrap();
        assert_abs_diff_eq!(rpo.values().iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(panel.column("dprod").unwrap().values()[0], (102f64 / 101.0).ln(), epsilon = 1e-15);

        let w = MonthRange::new(ym(2001, 1), ym(2002, 12)).unwrap();
        let sub = build_panel(&cfg, &fetcher, Some(w)).unwrap();
        assert_eq!(sub.range(), w);
        assert_abs_diff_eq!(sub.column("rpo").unwrap().values().iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        let outside = MonthRange::new(ym(1990, 1), ym(2002, 12)).unwrap();
        assert!(build_panel(&cfg, &fetcher, Some(outside)).is_err());
    }
}
