use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use oilsvar::boot::{self, BootConfig};
use oilsvar::hdecomp;
use oilsvar::ident::{self, ShockSeries, StructuralModel, OIL_SHOCK_NAMES};
use oilsvar::ingest::{
    self, default_cache_dir, sha256_hex, Cache, DataConfig, DemeanWindow, Fetcher, OfflineTransport, PriceSource,
    SeriesRole, SourceSpec, TargetSeries, Transport, UreqTransport,
};
use oilsvar::stage2::{self, Stage2Spec};
use oilsvar::ts::{MonthRange, Panel};
use oilsvar::var::{self, VarSpec};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::{Cli, Command, Common};

/// Additivity tolerance enforced when writing a historical decomposition.
const HD_TOLERANCE: f64 = 1e-8;
const UNIT_VARIANCE_TOLERANCE: f64 = 1e-8;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = Context::new(&cli.opts)?;
    match &cli.command {
        Command::Fetch => ctx.fetch(),
        Command::Estimate => ctx.estimate(),
        Command::Shocks => ctx.shocks(),
        Command::Irf => ctx.irf(),
        Command::Hd => ctx.hd(),
        Command::Stage2 { target, target_lags } => ctx.stage2(target.as_deref(), *target_lags),
    }
}

struct Context {
    opts: Common,
    data: DataConfig,
    config_sha256: String,
    sample: Option<MonthRange>,
    lags: usize,
    horizon: usize,
    reps: usize,
    method: String,
    block_len: Option<usize>,
    seed: Option<u64>,
    cumulate: Vec<String>,
}

fn parse_flag<T: std::str::FromStr>(name: &str, v: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| CliError::usage(format!("--{name} {v:?}: {e}")))
}

impl Context {
    fn new(opts: &Common) -> Result<Self, CliError> {
        let text = fs::read(&opts.config)
            .map_err(|e| CliError::new("ConfigError", format!("{}: {e}", opts.config.display())))?;
        let mut data = DataConfig::load(&opts.config)?;
        if let Some(d) = &opts.demean {
            data.price_demean = parse_flag::<DemeanWindow>("demean", d)?;
        }
        let sample = opts.sample.as_deref().map(|s| parse_flag::<MonthRange>("sample", s)).transpose()?;
        let lags = opts.lags.or(data.setting("lags")?).unwrap_or(24);
        let horizon = opts.horizon.or(data.setting("horizon")?).unwrap_or(15);
        let reps = opts.reps.or(data.setting("reps")?).unwrap_or(1000);
        let method = opts
            .method
            .clone()
            .or(data.setting("method")?)
            .unwrap_or_else(|| "wild".to_string());
        if !["wild", "mbb"].contains(&method.as_str()) {
            return Err(CliError::usage(format!("--method must be wild or mbb, got {method:?}")));
        }
        let seed = opts.seed.or(data.setting("seed")?);
        let cumulate = match &opts.cumulate {
            Some(list) if list == "none" => Vec::new(),
            Some(list) => list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            None => data.cumulate.clone(),
        };
        let names = data.var_names();
        if let Some(bad) = cumulate.iter().find(|c| !names.contains(c)) {
            return Err(CliError::usage(format!("--cumulate: unknown variable {bad:?} (have {})", names.join(","))));
        }
        Ok(Self {
            opts: opts.clone(),
            config_sha256: sha256_hex(&text),
            sample,
            lags,
            horizon,
            reps,
            method,
            block_len: opts.block_len,
            seed,
            cumulate,
            data,
        })
    }

    fn fetcher(&self) -> Fetcher {
        let transport: Arc<dyn Transport> = if self.opts.offline {
            Arc::new(OfflineTransport)
        } else {
            Arc::new(UreqTransport::default())
        };
        let cache_dir = default_cache_dir(&|k| std::env::var(k).ok());
        Fetcher::new(transport)
            .with_cache(Cache::new(cache_dir))
            .offline(self.opts.offline)
            .with_endpoints(self.data.endpoints.clone())
    }

    fn require_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::usage("a seed is required for bootstrap output: pass --seed or set run.seed"))
    }

    fn panel(&self, fetcher: &Fetcher) -> Result<Panel, CliError> {
        Ok(ingest::build_panel(&self.data, fetcher, self.sample)?)
    }

    fn price_row(&self) -> usize {
        2
    }

    fn cumulative_rows(&self) -> Vec<usize> {
        let names = self.data.var_names();
        self.cumulate
            .iter()
            .filter_map(|c| names.iter().position(|n| n == c))
            .collect()
    }

    fn model(&self, panel: &Panel) -> Result<StructuralModel, CliError> {
        let rf = var::estimate(panel, VarSpec::new(self.lags))?;
        let sm = ident::identify(rf, self.price_row())?;
        Ok(sm.with_shock_names(OIL_SHOCK_NAMES.iter().map(|s| s.to_string()).collect()))
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        fs::create_dir_all(&self.opts.out)
            .map_err(|e| CliError::new("Io", format!("{}: {e}", self.opts.out.display())))?;
        Ok(&self.opts.out)
    }

    fn base_meta(&self, command: &str, panel: &Panel) -> Result<BTreeMap<&'static str, Value>, CliError> {
        let mut m = BTreeMap::new();
        m.insert("command", json!(command));
        m.insert("tool_version", json!(env!("CARGO_PKG_VERSION")));
        m.insert("config", json!(self.opts.config.display().to_string()));
        m.insert("config_sha256", json!(self.config_sha256));
        m.insert("variables", json!(panel.names()));
        m.insert("data_range", json!(panel.range().to_string()));
        m.insert("price_demean", json!(self.data.price_demean.to_string()));
        m.insert("panel_sha256", json!(sha256_hex(panel_csv(panel)?.as_bytes())));
        Ok(m)
    }

    fn var_meta(&self, m: &mut BTreeMap<&'static str, Value>, sm: &StructuralModel) {
        m.insert("lags", json!(self.lags));
        m.insert("estimation_sample", json!(sm.reduced_form().sample_range().to_string()));
        m.insert("shock_names", json!(sm.shock_names()));
        m.insert("sign_flips", json!(sm.sign_flips()));
        m.insert("price_row", json!(sm.price_row()));
    }

    fn fetch(&self) -> Result<(), CliError> {
        let fetcher = self.fetcher();
        let panel = self.panel(&fetcher)?;
        for t in &self.data.targets {
            ingest::load_target(t, &fetcher)?;
        }
        let out = self.out_dir()?;
        let mut meta = self.base_meta("fetch", &panel)?;
        meta.insert("sources", json!(self.sources()));
        meta.insert("offline", json!(self.opts.offline));
        let mut outputs = BTreeMap::new();
        write_output(out, "panel.csv", panel_csv(&panel)?, &mut outputs)?;
        finish(out, "panel", meta, outputs)
    }

    fn sources(&self) -> Vec<Value> {
        let describe = |role: &str, s: &SourceSpec| {
            json!({
                "role": role,
                "provider": s.provider.name(),
                "series_id": s.series_id,
                "path": s.path.as_ref().map(|p| p.display().to_string()),
            })
        };
        let role = |name: &str, r: &SeriesRole| {
            let mut v = describe(name, &r.source);
            v["transform"] = json!(r.transform.to_string());
            v
        };
        let mut out = vec![role("production", &self.data.production), role("activity", &self.data.activity)];
        match &self.data.price {
            PriceSource::Real(r) => out.push(role("price", r)),
            PriceSource::Deflate { nominal, cpi, .. } => {
                out.push(describe("price_nominal", nominal));
                out.push(describe("cpi", cpi));
            }
        }
        out.extend(self.data.targets.iter().map(|t| describe(&format!("target.{}", t.name), &t.source)));
        out
    }

    fn estimate(&self) -> Result<(), CliError> {
        let panel = self.panel(&self.fetcher())?;
        let rf = var::estimate(&panel, VarSpec::new(self.lags))?;
        let stability = var::is_stable(&rf);
        let out = self.out_dir()?;
        let mut meta = self.base_meta("estimate", &panel)?;
        meta.insert("lags", json!(self.lags));
        meta.insert("estimation_sample", json!(rf.sample_range().to_string()));
        meta.insert("stable", json!(stability.stable));
        meta.insert("max_modulus", json!(stability.max_modulus));
        let mut outputs = BTreeMap::new();
        let doc = serde_json::to_string_pretty(&rf.to_document(true)).expect("document serializes") + "\n";
        write_output(out, "reduced_form.json", doc, &mut outputs)?;
        finish(out, "estimate", meta, outputs)
    }

    fn shocks(&self) -> Result<(), CliError> {
        let panel = self.panel(&self.fetcher())?;
        let sm = self.model(&panel)?;
        let shocks = ident::structural_shocks(&sm);
        check_unit_variance(&shocks)?;
        let out = self.out_dir()?;
        let mut meta = self.base_meta("shocks", &panel)?;
        self.var_meta(&mut meta, &sm);
        let mut outputs = BTreeMap::new();
        let mut buf = Vec::new();
        shocks.to_panel()?.write_csv(&mut buf)?;
        write_output(out, "shocks.csv", utf8(buf), &mut outputs)?;
        finish(out, "shocks", meta, outputs)
    }

    fn irf(&self) -> Result<(), CliError> {
        let seed = self.require_seed()?;
        let panel = self.panel(&self.fetcher())?;
        let sm = self.model(&panel)?;
        let mut cfg = match self.method.as_str() {
            "mbb" => {
                let l = self.block_len.or(self.data.setting("block_len")?).unwrap_or(36);
                BootConfig::mbb(seed, self.horizon, l)
            }
            _ => BootConfig::wild(seed, self.horizon),
        }
        .with_replications(self.reps)
        .with_cumulative_rows(self.cumulative_rows());
        if let Some(t) = self.opts.threads {
            cfg = cfg.with_threads(t);
        }
        let bands = boot::bootstrap(&sm, &cfg)?;
        let out = self.out_dir()?;
        let mut meta = self.base_meta("irf", &panel)?;
        self.var_meta(&mut meta, &sm);
        meta.insert("horizon", json!(self.horizon));
        meta.insert("replications", json!(self.reps));
        meta.insert("method", json!(cfg.method.name()));
        meta.insert(
            "block_len",
            json!(match cfg.method {
                boot::Method::Mbb { block_len } => Some(block_len),
                boot::Method::Wild => None,
            }),
        );
        meta.insert("seed", json!(seed));
        meta.insert("cumulate", json!(self.cumulate));
        meta.insert("failed_replications", json!(bands.failures));
        meta.insert("bands", json!(cfg.k_list));
        let mut outputs = BTreeMap::new();
        let mut buf = Vec::new();
        bands.write_csv(&mut buf)?;
        write_output(out, "irf.csv", utf8(buf), &mut outputs)?;
        finish(out, "irf", meta, outputs)
    }

    fn hd(&self) -> Result<(), CliError> {
        let panel = self.panel(&self.fetcher())?;
        let sm = self.model(&panel)?;
        let hd = hdecomp::decompose(&sm, &ident::structural_shocks(&sm))?;
        hd.check_additivity(HD_TOLERANCE)?;
        let out = self.out_dir()?;
        let mut meta = self.base_meta("hd", &panel)?;
        self.var_meta(&mut meta, &sm);
        meta.insert("additivity_tolerance", json!(HD_TOLERANCE));
        meta.insert("max_additivity_error", json!(hd.max_additivity_error()));
        meta.insert("cumulate", json!(self.cumulate));
        let mut outputs = BTreeMap::new();
        let mut buf = Vec::new();
        hd.write_contributions_csv(&mut buf)?;
        write_output(out, "hd_contributions.csv", utf8(buf), &mut outputs)?;
        let mut buf = Vec::new();
        hd.write_baseline_csv(&mut buf)?;
        write_output(out, "hd_baseline.csv", utf8(buf), &mut outputs)?;
        if !self.cumulate.is_empty() {
            write_output(out, "hd_cumulated.csv", self.cumulated_contributions(&hd), &mut outputs)?;
        }
        finish(out, "hd", meta, outputs)
    }

    /// Running sums of the contributions to the cumulated variables.
    fn cumulated_contributions(&self, hd: &hdecomp::HistoricalDecomposition) -> String {
        let mut text = String::from("date,variable,shock,cumulative_contribution\n");
        let mut rows = Vec::new();
        for i in self.cumulative_rows() {
            for j in 0..hd.shock_names().len() {
                let mut acc = 0.0;
                for (t, v) in hd.contribution_values(i, j).into_iter().enumerate() {
                    acc += v;
                    rows.push((t, i, j, acc));
                }
            }
        }
        rows.sort_by_key(|&(t, i, j, _)| (t, i, j));
        for (t, i, j, v) in rows {
            text.push_str(&format!(
                "{},{},{},{}\n",
                hd.start().offset(t as i64),
                hd.var_names()[i],
                hd.shock_names()[j],
                v
            ));
        }
        text
    }

    fn stage2(&self, only: Option<&str>, target_lags: Option<usize>) -> Result<(), CliError> {
        let seed = self.require_seed()?;
        let fetcher = self.fetcher();
        let panel = self.panel(&fetcher)?;
        let sm = self.model(&panel)?;
        let shocks = ident::structural_shocks(&sm);
        let targets: Vec<_> = self
            .data
            .targets
            .iter()
            .filter(|t| only.is_none_or(|o| o == t.name))
            .collect();
        if targets.is_empty() {
            return Err(CliError::usage(match only {
                Some(o) => format!("no target named {o:?} in the configuration"),
                None => "the configuration defines no target.* series".to_string(),
            }));
        }
        let quarterly = stage2::shocks_to_quarterly(&shocks)?;
        let out = self.out_dir()?;
        let mut meta = self.base_meta("stage2", &panel)?;
        self.var_meta(&mut meta, &sm);
        meta.insert("seed", json!(seed));
        meta.insert("replications", json!(self.reps));
        let mut outputs = BTreeMap::new();
        let mut per_target = Vec::new();
        for t in targets {
            let mut spec = Stage2Spec::new(seed)
                .with_lags(target_lags.or(t.lags).unwrap_or(12))
                .with_block_len(self.block_len.or(t.block_len).unwrap_or(6))
                .with_replications(self.reps)
                .cumulative(t.cumulative);
            spec.threads = self.opts.threads;
            let series = ingest::load_target(t, &fetcher)?;
            let mut fits = Vec::new();
            let mut window = String::new();
            for (j, name) in sm.shock_names().iter().enumerate() {
                let (z, x, first, last) = match &series {
                    TargetSeries::Monthly(s) => {
                        let (start, z, x) = stage2::align_monthly(s, &shocks.column(j)?)?;
                        let n = z.len() as i64;
                        (z, x, start.offset(spec.lags as i64).to_string(), start.offset(n - 1).to_string())
                    }
                    TargetSeries::Quarterly(q) => {
                        let (start, z, x) = stage2::align_quarterly(q, &quarterly[j])?;
                        let n = z.len() as i64;
                        (z, x, start.offset(spec.lags as i64).to_string(), start.offset(n - 1).to_string())
                    }
                };
                window = format!("{first}:{last}");
                fits.push(stage2::fit_with_bands(&z, &x, name, &spec)?);
            }
            let mut buf = Vec::new();
            stage2::write_csv(&fits, &mut buf)?;
            let file = format!("stage2_{}.csv", t.name);
            write_output(out, &file, utf8(buf), &mut outputs)?;
            per_target.push(json!({
                "target": t.name,
                "frequency": match series { TargetSeries::Monthly(_) => "monthly", TargetSeries::Quarterly(_) => "quarterly" },
                "transform": t.transform.to_string(),
                "seasonal_adjust": t.seasonal_adjust,
                "cumulative": t.cumulative,
                "lags": spec.lags,
                "block_len": spec.block_len,
                "regression_sample": window,
                "failed_replications": fits.iter().map(|f| f.bands.as_ref().map_or(0, |b| b.failures)).collect::<Vec<_>>(),
                "file": file,
            }));
        }
        meta.insert("targets", json!(per_target));
        finish(out, "stage2", meta, outputs)
    }
}

fn check_unit_variance(shocks: &ShockSeries) -> Result<(), CliError> {
    let cov = shocks.covariance();
    for j in 0..cov.ncols() {
        let v = cov[(j, j)];
        if (v - 1.0).abs() > UNIT_VARIANCE_TOLERANCE {
            return Err(CliError::new(
                "ShockVariance",
                format!("shock {} has sample variance {v}, expected 1", shocks.names()[j]),
            ));
        }
    }
    Ok(())
}

fn utf8(buf: Vec<u8>) -> String {
    String::from_utf8(buf).expect("csv output is utf-8")
}

fn panel_csv(panel: &Panel) -> Result<String, CliError> {
    let mut buf = Vec::new();
    panel.write_csv(&mut buf)?;
    Ok(utf8(buf))
}

fn write_output(dir: &Path, name: &str, content: String, outputs: &mut BTreeMap<String, String>) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, content.as_bytes()).map_err(|e| CliError::new("Io", format!("{}: {e}", path.display())))?;
    outputs.insert(name.to_string(), sha256_hex(content.as_bytes()));
    Ok(())
}

#[derive(Serialize)]
struct Meta {
    #[serde(flatten)]
    fields: BTreeMap<&'static str, Value>,
    outputs: BTreeMap<String, String>,
}

fn finish(
    dir: &Path,
    stem: &str,
    fields: BTreeMap<&'static str, Value>,
    outputs: BTreeMap<String, String>,
) -> Result<(), CliError> {
    let path: PathBuf = dir.join(format!("{stem}.meta.json"));
    let text = serde_json::to_string_pretty(&Meta { fields, outputs }).expect("metadata serializes") + "\n";
    fs::write(&path, text).map_err(|e| CliError::new("Io", format!("{}: {e}", path.display())))?;
    Ok(())
}
