//! Second-stage distributed-lag regressions of an external series on one
//! structural shock at a time,
//!
//! ```text
//! z_t = ω + Σ_{i=0..L} φ_i ζ_{t-i} + u_t,
//! ```
//!
//! with inference from a moving-block bootstrap over regression rows: each
//! row keeps `z_t` together with its own `L + 1` shock regressors, so the
//! lag structure survives resampling.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::boot::{replication_rng, MAX_ATTEMPTS};
use crate::ident::ShockSeries;
use crate::linalg::{least_squares, sample_sd};
use crate::ts::{quarterly_average, MonthlySeries, QuarterlySeries, TsError, YearMonth, YearQuarter};

#[derive(Debug, Error)]
pub enum Stage2Error {
    #[error("too few observations: need more than {needed} regression rows, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("regressor cross-product is numerically singular (rcond {rcond:.3e})")]
    SingularDesign { rcond: f64 },
    #[error("block length {block_len} exceeds the {max} regression rows")]
    BlockTooLong { block_len: usize, max: usize },
    #[error("dependent and shock series differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("{failed} of {total} replications failed (limit 1%)")]
    ReplicationFailure { failed: usize, total: usize },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("series do not overlap")]
    NoOverlap,
    #[error(transparent)]
    Ts(#[from] TsError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage2Spec {
    pub lags: usize,
    pub block_len: usize,
    pub replications: usize,
    pub seed: u64,
    /// Report running sums of the coefficients (growth-rate dependents).
    pub cumulative: bool,
    pub k_list: Vec<u32>,
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl Stage2Spec {
    pub fn new(seed: u64) -> Self {
        Self {
            lags: 12,
            block_len: 6,
            replications: 1000,
            seed,
            cumulative: false,
            k_list: vec![1, 2],
            threads: None,
        }
    }

    pub fn with_lags(mut self, lags: usize) -> Self {
        self.lags = lags;
        self
    }

    pub fn with_block_len(mut self, block_len: usize) -> Self {
        self.block_len = block_len;
        self
    }

    pub fn with_replications(mut self, r: usize) -> Self {
        self.replications = r;
        self
    }

    pub fn cumulative(mut self, on: bool) -> Self {
        self.cumulative = on;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Band {
    pub k: u32,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Bands {
    /// Standard error of each reported response.
    pub se: Vec<f64>,
    pub bands: Vec<Stage2Band>,
    pub replications: usize,
    pub failures: usize,
}

impl Stage2Bands {
    pub fn band(&self, k: u32) -> Option<&Stage2Band> {
        self.bands.iter().find(|b| b.k == k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Fit {
    pub shock: String,
    /// `φ_0..φ_L`.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    pub cumulative: bool,
    /// Running sums of `coefficients` when `cumulative`, else the coefficients.
    pub responses: Vec<f64>,
    pub bands: Option<Stage2Bands>,
}

impl Stage2Fit {
    pub fn nobs(&self) -> usize {
        self.residuals.len()
    }
}

/// Regression rows `[1, ζ_t, …, ζ_{t-L}]` for `t = L..n-1`.
#[derive(Debug, Clone)]
struct Rows {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl Rows {
    fn build(z: &[f64], shock: &[f64], lags: usize) -> Result<Self, Stage2Error> {
        if z.len() != shock.len() {
            return Err(Stage2Error::LengthMismatch(z.len(), shock.len()));
        }
        let m = z.len().saturating_sub(lags);
        if m <= lags + 2 {
            return Err(Stage2Error::TooFewObservations { needed: lags + 2, got: m });
        }
        let x = DMatrix::from_fn(m, lags + 2, |r, c| if c == 0 { 1.0 } else { shock[r + lags - (c - 1)] });
        let y = DMatrix::from_fn(m, 1, |r, _| z[r + lags]);
        Ok(Self { x, y })
    }

    fn nrows(&self) -> usize {
        self.x.nrows()
    }

    fn solve(&self) -> Result<DVector<f64>, Stage2Error> {
        least_squares(&self.x, &self.y)
            .map(|b| b.column(0).into_owned())
            .map_err(|s| Stage2Error::SingularDesign { rcond: s.rcond })
    }

    fn resample(&self, block_len: usize, rng: &mut impl Rng) -> Rows {
        let m = self.nrows();
        let mut idx = Vec::with_capacity(m);
        while idx.len() < m {
            let start = rng.random_range(0..=m - block_len);
            idx.extend((start..start + block_len).take(m - idx.len()));
        }
        Rows {
            x: self.x.select_rows(idx.iter()),
            y: self.y.select_rows(idx.iter()),
        }
    }
}

fn responses(coef: &[f64], cumulative: bool) -> Vec<f64> {
    if !cumulative {
        return coef.to_vec();
    }
    coef.iter()
        .scan(0.0, |acc, c| {
            *acc += c;
            Some(*acc)
        })
        .collect()
}

/// Least squares of `z_t` on a constant and shock lags `0..=L`.
///
/// `z` and `shock` must already be aligned period by period; the first `L`
/// periods only supply lags.
pub fn fit_distributed_lag(z: &[f64], shock: &[f64], shock_name: &str, spec: &Stage2Spec) -> Result<Stage2Fit, Stage2Error> {
    let rows = Rows::build(z, shock, spec.lags)?;
    let beta = rows.solve()?;
    let resid = &rows.y.column(0) - &rows.x * &beta;
    let coefficients: Vec<f64> = beta.iter().skip(1).copied().collect();
    Ok(Stage2Fit {
        shock: shock_name.to_string(),
        intercept: beta[0],
        responses: responses(&coefficients, spec.cumulative),
        coefficients,
        residuals: resid.iter().copied().collect(),
        cumulative: spec.cumulative,
        bands: None,
    })
}

/// Moving-block bootstrap over regression rows; bands are centred on the
/// original point responses.
pub fn block_bootstrap_bands(z: &[f64], shock: &[f64], spec: &Stage2Spec) -> Result<Stage2Bands, Stage2Error> {
    if spec.replications < 2 {
        return Err(Stage2Error::InvalidSpec("replications must be at least 2".into()));
    }
    if spec.block_len == 0 {
        return Err(Stage2Error::InvalidSpec("block length must be at least 1".into()));
    }
    let rows = Rows::build(z, shock, spec.lags)?;
    if spec.block_len > rows.nrows() {
        return Err(Stage2Error::BlockTooLong { block_len: spec.block_len, max: rows.nrows() });
    }
    let point: Vec<f64> = responses(&rows.solve()?.as_slice()[1..], spec.cumulative);

    let replicate = |r: u64| -> Option<Vec<f64>> {
        (0..MAX_ATTEMPTS).find_map(|attempt| {
            let mut rng = replication_rng(spec.seed, r, attempt);
            let star = rows.resample(spec.block_len, &mut rng);
            star.solve().ok().map(|b| responses(&b.as_slice()[1..], spec.cumulative))
        })
    };
    let run = || {
        (0..spec.replications as u64)
            .into_par_iter()
            .map(replicate)
            .collect::<Vec<_>>()
    };
    let results = match spec.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Stage2Error::InvalidSpec(e.to_string()))?
            .install(run),
        None => run(),
    };
    let failures = results.iter().filter(|r| r.is_none()).count();
    if failures * 100 > spec.replications {
        return Err(Stage2Error::ReplicationFailure { failed: failures, total: spec.replications });
    }
    let draws: Vec<Vec<f64>> = results.into_iter().flatten().collect();
    let se: Vec<f64> = (0..point.len())
        .map(|h| sample_sd(draws.iter().map(|d| d[h])))
        .collect();
    let bands = spec
        .k_list
        .iter()
        .map(|&k| Stage2Band {
            k,
            lower: point.iter().zip(&se).map(|(p, s)| p - k as f64 * s).collect(),
            upper: point.iter().zip(&se).map(|(p, s)| p + k as f64 * s).collect(),
        })
        .collect();
    Ok(Stage2Bands {
        se,
        bands,
        replications: draws.len(),
        failures,
    })
}

/// Point fit plus bootstrap bands.
pub fn fit_with_bands(z: &[f64], shock: &[f64], shock_name: &str, spec: &Stage2Spec) -> Result<Stage2Fit, Stage2Error> {
    let mut fit = fit_distributed_lag(z, shock, shock_name, spec)?;
    fit.bands = Some(block_bootstrap_bands(z, shock, spec)?);
    Ok(fit)
}

/// Quarterly averages of each monthly shock column.
pub fn shocks_to_quarterly(shocks: &ShockSeries) -> Result<Vec<QuarterlySeries>, Stage2Error> {
    (0..shocks.names().len())
        .map(|j| Ok(quarterly_average(&shocks.column(j)?)?))
        .collect()
}

/// Overlapping quarters of two quarterly series.
pub fn align_quarterly(a: &QuarterlySeries, b: &QuarterlySeries) -> Result<(YearQuarter, Vec<f64>, Vec<f64>), Stage2Error> {
    let start = a.start().max(b.start());
    let end = a.end().min(b.end());
    if end < start {
        return Err(Stage2Error::NoOverlap);
    }
    let n = (end.ordinal() - start.ordinal() + 1) as usize;
    let take = |s: &QuarterlySeries| {
        let off = (start.ordinal() - s.start().ordinal()) as usize;
        s.values()[off..off + n].to_vec()
    };
    Ok((start, take(a), take(b)))
}

/// Overlapping months of two monthly series.
pub fn align_monthly(a: &MonthlySeries, b: &MonthlySeries) -> Result<(YearMonth, Vec<f64>, Vec<f64>), Stage2Error> {
    let common = a.range().intersect(&b.range()).ok_or(Stage2Error::NoOverlap)?;
    Ok((
        common.start,
        a.slice(common)?.values().to_vec(),
        b.slice(common)?.values().to_vec(),
    ))
}

/// Long CSV `shock,horizon,point,se,lo1,hi1,lo2,hi2,cumulative`.
pub fn write_csv(fits: &[Stage2Fit], writer: impl Write) -> Result<(), TsError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let ks: Vec<u32> = fits
        .iter()
        .find_map(|f| f.bands.as_ref())
        .map(|b| b.bands.iter().map(|x| x.k).collect())
        .unwrap_or_else(|| vec![1, 2]);
    let mut header = vec!["shock".to_string(), "horizon".into(), "point".into(), "se".into()];
    for k in &ks {
        header.push(format!("lo{k}"));
        header.push(format!("hi{k}"));
    }
    header.push("cumulative".into());
    w.write_record(&header)?;
    for fit in fits {
        for (h, p) in fit.responses.iter().enumerate() {
            let mut row = vec![fit.shock.clone(), h.to_string(), p.to_string()];
            match &fit.bands {
                Some(b) => {
                    row.push(b.se[h].to_string());
                    for k in &ks {
                        let band = b.band(*k).expect("consistent band set");
                        row.push(band.lower[h].to_string());
                        row.push(band.upper[h].to_string());
                    }
                }
                None => row.extend(std::iter::repeat(String::new()).take(1 + 2 * ks.len())),
            }
            row.push(fit.cumulative.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
