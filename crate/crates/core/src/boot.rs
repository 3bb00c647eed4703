//! Bootstrap inference for structural impulse responses.
//!
//! Both schemes use a recursive design: resampled residuals drive the
//! estimated reduced form forward from the first `p` observed rows, the VAR
//! is re-estimated on the artificial sample, re-identified (including the
//! sign normalization) and its impulse responses recomputed.
//!
//! * [`Method::Wild`] multiplies each residual row by an independent
//!   Rademacher sign.
//! * [`Method::Mbb`] resamples overlapping blocks of residual rows and
//!   recentres each position within a block by the mean of all admissible
//!   blocks at that offset.
//!
//! Replication `r` draws from ChaCha stream `r·5 + attempt` of the
//! configured seed, so results do not depend on the number of worker threads.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::ident::{cholesky_lower, irf_from_impact, normalize, structural_irf, IdentError, IrfResult, StructuralModel};
use crate::linalg::sample_sd;
use crate::ts::TsError;
use crate::var::estimate_matrix;

/// Attempts per replication before it counts as failed.
pub const MAX_ATTEMPTS: u64 = 5;

#[derive(Debug, Error)]
pub enum BootError {
    #[error("invalid bootstrap configuration: {0}")]
    InvalidConfig(String),
    #[error("block length {block_len} exceeds the {max} available residual rows")]
    BlockTooLong { block_len: usize, max: usize },
    #[error("{failed} of {total} replications failed (limit 1%)")]
    ReplicationFailure { failed: usize, total: usize },
    #[error(transparent)]
    Ident(#[from] IdentError),
    #[error(transparent)]
    Ts(#[from] TsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Method {
    Wild,
    Mbb { block_len: usize },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Wild => "wild",
            Method::Mbb { .. } => "mbb",
        }
    }
}

/// Wild-bootstrap multiplier distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Multiplier {
    Rademacher,
    /// Always `+1`; every replication reproduces the original sample.
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootConfig {
    pub replications: usize,
    pub method: Method,
    pub seed: u64,
    pub horizon: usize,
    /// Rows reported as running sums (log-differenced variables).
    pub cumulative_rows: Vec<usize>,
    /// Band half-widths in standard errors.
    pub k_list: Vec<u32>,
    /// Worker threads; `None` uses the rayon default.
    #[serde(skip)]
    pub threads: Option<usize>,
    pub multiplier: Multiplier,
    /// Position-wise recentring of block-bootstrap residuals.
    pub center: bool,
}

impl BootConfig {
    pub fn wild(seed: u64, horizon: usize) -> Self {
        Self {
            replications: 1000,
            method: Method::Wild,
            seed,
            horizon,
            cumulative_rows: Vec::new(),
            k_list: vec![1, 2],
            threads: None,
            multiplier: Multiplier::Rademacher,
            center: true,
        }
    }

    pub fn mbb(seed: u64, horizon: usize, block_len: usize) -> Self {
        Self {
            method: Method::Mbb { block_len },
            ..Self::wild(seed, horizon)
        }
    }

    pub fn with_replications(mut self, r: usize) -> Self {
        self.replications = r;
        self
    }

    pub fn with_cumulative_rows(mut self, rows: Vec<usize>) -> Self {
        self.cumulative_rows = rows;
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }
}

/// One band `point ∓ k·se`.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub k: u32,
    pub lower: Vec<DMatrix<f64>>,
    pub upper: Vec<DMatrix<f64>>,
}

/// Point responses with bootstrap standard errors and bands.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSet {
    pub point: IrfResult,
    /// Per-horizon `K × K` standard deviations across replications.
    pub se: Vec<DMatrix<f64>>,
    pub bands: Vec<Band>,
    pub replications: usize,
    pub failures: usize,
}

impl BandSet {
    pub fn band(&self, k: u32) -> Option<&Band> {
        self.bands.iter().find(|b| b.k == k)
    }

    /// Long CSV `shock,variable,horizon,point,se,lo1,hi1,lo2,hi2`
    /// (one `lo/hi` pair per configured band).
    pub fn write_csv(&self, writer: impl Write) -> Result<(), TsError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header: Vec<String> = ["shock", "variable", "horizon", "point", "se"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for b in &self.bands {
            header.push(format!("lo{}", b.k));
            header.push(format!("hi{}", b.k));
        }
        w.write_record(&header)?;
        for (j, i, h, v) in self.point.entries() {
            let mut row = vec![
                self.point.shock_names[j].clone(),
                self.point.var_names[i].clone(),
                h.to_string(),
                v.to_string(),
                self.se[h][(i, j)].to_string(),
            ];
            for b in &self.bands {
                row.push(b.lower[h][(i, j)].to_string());
                row.push(b.upper[h][(i, j)].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Replication draws: `draws[r][h]` is the `K × K` response matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub thetas: Vec<Vec<DMatrix<f64>>>,
    pub failures: usize,
}

/// Standard errors (divisor `R - 1`) and `point ∓ k·se` bands.
pub fn bands(point: &IrfResult, draws: &[Vec<DMatrix<f64>>], k_list: &[u32]) -> Result<BandSet, BootError> {
    if draws.len() < 2 {
        return Err(BootError::InvalidConfig("at least two draws are required".into()));
    }
    let (k_rows, k_cols) = point.theta[0].shape();
    let se: Vec<DMatrix<f64>> = (0..point.theta.len())
        .map(|h| DMatrix::from_fn(k_rows, k_cols, |i, j| sample_sd(draws.iter().map(|d| d[h][(i, j)]))))
        .collect();
    let bands = k_list
        .iter()
        .map(|&k| Band {
            k,
            lower: point.theta.iter().zip(&se).map(|(p, s)| p - s * k as f64).collect(),
            upper: point.theta.iter().zip(&se).map(|(p, s)| p + s * k as f64).collect(),
        })
        .collect();
    Ok(BandSet {
        point: point.clone(),
        se,
        bands,
        replications: draws.len(),
        failures: 0,
    })
}

pub fn wild_bootstrap(sm: &StructuralModel, cfg: &BootConfig) -> Result<BandSet, BootError> {
    if cfg.method != Method::Wild {
        return Err(BootError::InvalidConfig("wild_bootstrap requires method = wild".into()));
    }
    bootstrap(sm, cfg)
}

pub fn mbb_bootstrap(sm: &StructuralModel, cfg: &BootConfig) -> Result<BandSet, BootError> {
    if !matches!(cfg.method, Method::Mbb { .. }) {
        return Err(BootError::InvalidConfig("mbb_bootstrap requires method = mbb".into()));
    }
    bootstrap(sm, cfg)
}

/// Runs the configured scheme and builds bands around the point responses.
pub fn bootstrap(sm: &StructuralModel, cfg: &BootConfig) -> Result<BandSet, BootError> {
    let point = structural_irf(sm, cfg.horizon, &cfg.cumulative_rows)?;
    let draws = bootstrap_draws(sm, cfg)?;
    let mut set = bands(&point, &draws.thetas, &cfg.k_list)?;
    set.failures = draws.failures;
    Ok(set)
}

/// The per-replication impulse responses, in replication order.
pub fn bootstrap_draws(sm: &StructuralModel, cfg: &BootConfig) -> Result<Draws, BootError> {
    if cfg.replications < 2 {
        return Err(BootError::InvalidConfig("replications must be at least 2".into()));
    }
    let rf = sm.reduced_form();
    let n = rf.residuals().nrows();
    if n == 0 || rf.data().nrows() == 0 {
        return Err(BootError::InvalidConfig("model carries no estimation sample".into()));
    }
    let k = rf.nvars();
    if let Some(&bad) = cfg.cumulative_rows.iter().find(|r| **r >= k) {
        return Err(IdentError::BadIndex { index: bad, k }.into());
    }
    let resampler = match cfg.method {
        Method::Wild => Resampler::Wild(cfg.multiplier),
        Method::Mbb { block_len } => {
            if block_len == 0 {
                return Err(BootError::InvalidConfig("block length must be at least 1".into()));
            }
            if block_len > n {
                return Err(BootError::BlockTooLong { block_len, max: n });
            }
            // a single admissible block recentred by itself is identically zero
            if cfg.center && block_len == n {
                return Err(BootError::BlockTooLong { block_len, max: n - 1 });
            }
            Resampler::Mbb(BlockResampler::new(rf.residuals(), block_len, cfg.center))
        }
    };

    let job = Job { sm, cfg, resampler: &resampler };
    let run = || {
        (0..cfg.replications)
            .into_par_iter()
            .map(|r| job.replicate(r as u64))
            .collect::<Vec<_>>()
    };
    let results = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| BootError::InvalidConfig(e.to_string()))?
            .install(run),
        None => run(),
    };

    let failures = results.iter().filter(|r| r.is_none()).count();
    if failures * 100 > cfg.replications {
        return Err(BootError::ReplicationFailure { failed: failures, total: cfg.replications });
    }
    Ok(Draws {
        thetas: results.into_iter().flatten().collect(),
        failures,
    })
}

enum Resampler {
    Wild(Multiplier),
    Mbb(BlockResampler),
}

/// Overlapping-block residual resampling with position-wise recentring.
pub struct BlockResampler {
    block_len: usize,
    /// `block_len × K` mean of all admissible blocks at each offset.
    offset_means: DMatrix<f64>,
    center: bool,
}

impl BlockResampler {
    pub fn new(residuals: &DMatrix<f64>, block_len: usize, center: bool) -> Self {
        let (n, k) = residuals.shape();
        assert!(block_len >= 1 && block_len <= n);
        let n_blocks = n - block_len + 1;
        let offset_means = DMatrix::from_fn(block_len, k, |s, j| {
            (0..n_blocks).map(|r| residuals[(r + s, j)]).sum::<f64>() / n_blocks as f64
        });
        Self { block_len, offset_means, center }
    }

    pub fn draw(&self, residuals: &DMatrix<f64>, rng: &mut impl Rng) -> DMatrix<f64> {
        let (n, k) = residuals.shape();
        let max_start = n - self.block_len;
        let mut out = DMatrix::zeros(n, k);
        let mut t = 0;
        while t < n {
            let start = rng.random_range(0..=max_start);
            for s in 0..self.block_len.min(n - t) {
                for j in 0..k {
                    let c = if self.center { self.offset_means[(s, j)] } else { 0.0 };
                    out[(t + s, j)] = residuals[(start + s, j)] - c;
                }
            }
            t += self.block_len;
        }
        out
    }
}

/// `ε*_t = η_t ε̂_t` with one sign per row.
pub fn wild_draw(residuals: &DMatrix<f64>, multiplier: Multiplier, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut out = residuals.clone();
    if multiplier == Multiplier::Unit {
        return out;
    }
    for mut row in out.row_iter_mut() {
        if rng.random::<bool>() {
            row.neg_mut();
        }
    }
    out
}

/// Deterministic generator for replication `r`, attempt `attempt`.
pub fn replication_rng(seed: u64, r: u64, attempt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r * MAX_ATTEMPTS + attempt);
    rng
}

struct Job<'a> {
    sm: &'a StructuralModel,
    cfg: &'a BootConfig,
    resampler: &'a Resampler,
}

impl Job<'_> {
    fn replicate(&self, r: u64) -> Option<Vec<DMatrix<f64>>> {
        let rf = self.sm.reduced_form();
        let p = rf.nlags();
        let init = rf.data().rows(0, p).into_owned();
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = replication_rng(self.cfg.seed, r, attempt);
            let eps = match self.resampler {
                Resampler::Wild(m) => wild_draw(rf.residuals(), *m, &mut rng),
                Resampler::Mbb(b) => b.draw(rf.residuals(), &mut rng),
            };
            let y = rf.simulate(&init, &eps);
            let Ok(rf_star) = estimate_matrix(&y, rf.data_start(), rf.var_names().to_vec(), rf.spec()) else {
                continue;
            };
            let Ok(p_star) = cholesky_lower(rf_star.sigma()) else {
                continue;
            };
            let Ok(sm_star) = normalize(p_star, rf_star, self.sm.price_row()) else {
                continue;
            };
            return Some(irf_from_impact(
                sm_star.reduced_form(),
                sm_star.b0inv(),
                self.cfg.horizon,
                &self.cfg.cumulative_rows,
            ));
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ident::identify;
    use crate::ts::YearMonth;
    use crate::var::{ReducedForm, VarSpec};
    use rand_distr::{Distribution, StandardNormal};

    fn simulated_model(t_obs: usize, seed: u64) -> StructuralModel {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.2, 0.3]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.8]);
        let truth = ReducedForm::from_coefficients(vec![a], &b * b.transpose()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e: DMatrix<f64> = DMatrix::from_fn(t_obs - 1, 2, |_, _| StandardNormal.sample(&mut rng));
        let y = truth.simulate(&DMatrix::zeros(1, 2), &(e * b.transpose()));
        let rf = estimate_matrix(&y, YearMonth::new(1990, 1).unwrap(), vec!["a".into(), "b".into()], VarSpec::new(1)).unwrap();
        identify(rf, 1).unwrap()
    }

    #[test]
    fn bands_examples() {
        let point = IrfResult {
            theta: vec![DMatrix::from_element(1, 1, 1.0)],
            cumulative_rows: vec![],
            var_names: vec!["y".into()],
            shock_names: vec!["s".into()],
        };
        let same = vec![vec![DMatrix::from_element(1, 1, 0.3)]; 4];
        let b = bands(&point, &same, &[1, 2]).unwrap();
        assert_eq!(b.se[0][(0, 0)], 0.0);
        assert_eq!(b.band(2).unwrap().lower[0], point.theta[0]);

        let two = vec![vec![DMatrix::from_element(1, 1, 0.0)], vec![DMatrix::from_element(1, 1, 2.0)]];
        let b = bands(&point, &two, &[1, 2]).unwrap();
        let s2 = 2f64.sqrt();
        assert!((b.band(1).unwrap().lower[0][(0, 0)] - (1.0 - s2)).abs() < 1e-15);
        assert!((b.band(1).unwrap().upper[0][(0, 0)] - (1.0 + s2)).abs() < 1e-15);
        assert!(b.band(2).unwrap().lower[0][(0, 0)] <= b.band(1).unwrap().lower[0][(0, 0)]);

        assert!(bands(&point, &two[..1], &[1]).is_err());
    }

    #[test]
    fn unit_multiplier_reproduces_point() {
        let sm = simulated_model(120, 1);
        let mut cfg = BootConfig::wild(7, 6).with_replications(20);
        cfg.multiplier = Multiplier::Unit;
        let set = wild_bootstrap(&sm, &cfg).unwrap();
        for s in &set.se {
            assert_eq!(s.amax(), 0.0);
        }
        let draws = bootstrap_draws(&sm, &cfg).unwrap();
        for d in &draws.thetas {
            for (a, b) in d.iter().zip(&set.point.theta) {
                assert!((a - b).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_same_output() {
        let sm = simulated_model(150, 2);
        let cfg = BootConfig::wild(11, 8).with_replications(50);
        assert_eq!(wild_bootstrap(&sm, &cfg).unwrap(), wild_bootstrap(&sm, &cfg).unwrap());
        let cfg = BootConfig::mbb(11, 8, 10).with_replications(50);
        assert_eq!(mbb_bootstrap(&sm, &cfg).unwrap(), mbb_bootstrap(&sm, &cfg).unwrap());
        let other = BootConfig::mbb(12, 8, 10).with_replications(50);
        assert_ne!(mbb_bootstrap(&sm, &cfg).unwrap().se, mbb_bootstrap(&sm, &other).unwrap().se);
    }

    #[test]
    fn method_mismatch_and_block_errors() {
        let sm = simulated_model(80, 3);
        assert!(matches!(
            wild_bootstrap(&sm, &BootConfig::mbb(1, 4, 5)),
            Err(BootError::InvalidConfig(_))
        ));
        assert!(matches!(
            mbb_bootstrap(&sm, &BootConfig::mbb(1, 4, 80).with_replications(5)),
            Err(BootError::BlockTooLong { block_len: 80, max: 79 })
        ));
        assert!(matches!(
            mbb_bootstrap(&sm, &BootConfig::mbb(1, 4, 0)),
            Err(BootError::InvalidConfig(_))
        ));
        assert!(matches!(
            wild_bootstrap(&sm, &BootConfig::wild(1, 4).with_replications(1)),
            Err(BootError::InvalidConfig(_))
        ));
    }

    #[test]
    fn single_block_without_centering_reproduces_point() {
        let sm = simulated_model(90, 4);
        let n = sm.reduced_form().residuals().nrows();
        let mut cfg = BootConfig::mbb(5, 6, n).with_replications(10);
        cfg.center = false;
        let set = mbb_bootstrap(&sm, &cfg).unwrap();
        assert!(set.se.iter().all(|s| s.amax() == 0.0));
    }

    #[test]
    fn single_block_with_centering_degenerates() {
        // every offset mean equals the only block, so the recentred residuals vanish
        let sm = simulated_model(90, 4);
        let n = sm.reduced_form().residuals().nrows();
        let resampler = BlockResampler::new(sm.reduced_form().residuals(), n, true);
        let draw = resampler.draw(sm.reduced_form().residuals(), &mut replication_rng(1, 0, 0));
        assert!(draw.amax() < 1e-15);
        let cfg = BootConfig::mbb(5, 6, n).with_replications(10);
        assert!(matches!(mbb_bootstrap(&sm, &cfg), Err(BootError::BlockTooLong { max, .. }) if max == n - 1));
    }

    #[test]
    fn centered_blocks_have_zero_expectation() {
        let resid = DMatrix::from_fn(30, 2, |t, j| ((t * 7 + j * 3) % 11) as f64 - 2.0);
        let block = 4;
        let r = BlockResampler::new(&resid, block, true);
        // expectation over the uniform start at each offset is zero
        for s in 0..block {
            for j in 0..2 {
                let e: f64 = (0..=30 - block).map(|st| resid[(st + s, j)] - r.offset_means[(s, j)]).sum();
                assert!(e.abs() < 1e-12);
            }
        }
        let d = r.draw(&resid, &mut replication_rng(3, 1, 0));
        assert_eq!(d.shape(), (30, 2));
    }

    #[test]
    fn wild_draw_preserves_outer_products() {
        let resid = DMatrix::from_fn(25, 3, |t, j| (t as f64 * 0.37 + j as f64).sin());
        let d = wild_draw(&resid, Multiplier::Rademacher, &mut replication_rng(9, 0, 0));
        for t in 0..25 {
            let a = resid.row(t).transpose() * resid.row(t);
            let b = d.row(t).transpose() * d.row(t);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn price_row_normalized_in_every_replication() {
        let sm = simulated_model(150, 5);
        for cfg in [BootConfig::wild(3, 2).with_replications(60), BootConfig::mbb(3, 2, 12).with_replications(60)] {
            let draws = bootstrap_draws(&sm, &cfg).unwrap();
            for d in &draws.thetas {
                assert!(d[0].row(1).iter().all(|v| *v >= 0.0));
                assert_eq!(d[0][(0, 1)], 0.0);
            }
        }
    }

    #[test]
    fn csv_has_one_row_per_entry() {
        let sm = simulated_model(100, 6);
        let set = wild_bootstrap(&sm, &BootConfig::wild(1, 3).with_replications(10)).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "shock,variable,horizon,point,se,lo1,hi1,lo2,hi2");
        assert_eq!(lines.count(), 2 * 2 * 4);
    }
}
