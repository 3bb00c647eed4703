//! Historical decomposition: each observed value split into the cumulative
//! contribution of every structural shock since the sample start plus a
//! baseline that absorbs initial conditions and the intercept.

use std::io::Write;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::ident::{irf_from_impact, ShockSeries, StructuralModel};
use crate::ts::{MonthlySeries, TsError, YearMonth};
use crate::var::is_stable;

#[derive(Debug, Error)]
pub enum HdError {
    #[error("model is not stable (companion spectral radius {modulus:.6})")]
    UnstableModel { modulus: f64 },
    #[error("shock series has {got} rows, model residuals have {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("additivity check failed: max reconstruction error {0:.3e}")]
    Additivity(f64),
    #[error(transparent)]
    Ts(#[from] TsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalDecomposition {
    var_names: Vec<String>,
    shock_names: Vec<String>,
    start: YearMonth,
    /// `contributions[j]` is `n × K`: shock `j`'s contribution to every variable.
    contributions: Vec<DMatrix<f64>>,
    baseline: DMatrix<f64>,
    observed: DMatrix<f64>,
}

impl HistoricalDecomposition {
    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn shock_names(&self) -> &[String] {
        &self.shock_names
    }

    pub fn start(&self) -> YearMonth {
        self.start
    }

    pub fn len(&self) -> usize {
        self.baseline.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Contribution of `shock` to `variable` at each month.
    pub fn contribution_values(&self, variable: usize, shock: usize) -> Vec<f64> {
        self.contributions[shock].column(variable).iter().copied().collect()
    }

    pub fn contribution(&self, variable: usize, shock: usize) -> Result<MonthlySeries, TsError> {
        MonthlySeries::new(
            format!("{}<-{}", self.var_names[variable], self.shock_names[shock]),
            self.start,
            self.contribution_values(variable, shock),
        )
    }

    pub fn baseline(&self, variable: usize) -> Result<MonthlySeries, TsError> {
        MonthlySeries::new(
            format!("{}:baseline", self.var_names[variable]),
            self.start,
            self.baseline.column(variable).iter().copied().collect(),
        )
    }

    pub fn baseline_matrix(&self) -> &DMatrix<f64> {
        &self.baseline
    }

    pub fn observed(&self) -> &DMatrix<f64> {
        &self.observed
    }

    /// Largest `|Σ_j contribution + baseline - observed|` over all cells.
    pub fn max_additivity_error(&self) -> f64 {
        let mut total = self.baseline.clone();
        for c in &self.contributions {
            total += c;
        }
        (total - &self.observed).amax()
    }

    /// Fails unless the reconstruction holds to `tol`.
    pub fn check_additivity(&self, tol: f64) -> Result<(), HdError> {
        let err = self.max_additivity_error();
        if err <= tol {
            Ok(())
        } else {
            Err(HdError::Additivity(err))
        }
    }

    /// Long CSV `date,variable,shock,contribution`.
    pub fn write_contributions_csv(&self, writer: impl Write) -> Result<(), TsError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["date", "variable", "shock", "contribution"])?;
        for t in 0..self.len() {
            let date = self.start.offset(t as i64).to_string();
            for (i, var) in self.var_names.iter().enumerate() {
                for (j, shock) in self.shock_names.iter().enumerate() {
                    w.write_record([
                        date.as_str(),
                        var,
                        shock,
                        &self.contributions[j][(t, i)].to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Long CSV `date,variable,baseline`.
    pub fn write_baseline_csv(&self, writer: impl Write) -> Result<(), TsError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["date", "variable", "baseline"])?;
        for t in 0..self.len() {
            let date = self.start.offset(t as i64).to_string();
            for (i, var) in self.var_names.iter().enumerate() {
                w.write_record([date.as_str(), var, &self.baseline[(t, i)].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Decomposes the estimation sample `t = p+1..T`.
///
/// The contribution of shock `j` to variable `i` at sample position `s` is
/// `Σ_{h<s} Θ_h[i, j] ε̂_{j, s-h}` with non-cumulated `Θ`.
pub fn decompose(sm: &StructuralModel, shocks: &ShockSeries) -> Result<HistoricalDecomposition, HdError> {
    let rf = sm.reduced_form();
    let stability = is_stable(rf);
    if !stability.stable {
        return Err(HdError::UnstableModel { modulus: stability.max_modulus });
    }
    let n = rf.residuals().nrows();
    let k = rf.nvars();
    let eps = shocks.values();
    if eps.nrows() != n || eps.ncols() != k {
        return Err(HdError::ShapeMismatch { expected: n, got: eps.nrows() });
    }
    let observed = rf.data().rows(rf.nlags(), n).into_owned();
    if n == 0 {
        return Err(HdError::ShapeMismatch { expected: 1, got: 0 });
    }

    let theta = irf_from_impact(rf, sm.b0inv(), n - 1, &[]);
    let contributions: Vec<DMatrix<f64>> = (0..k)
        .map(|j| {
            DMatrix::from_fn(n, k, |s, i| (0..=s).map(|h| theta[h][(i, j)] * eps[(s - h, j)]).sum())
        })
        .collect();
    let mut baseline = observed.clone();
    for c in &contributions {
        baseline -= c;
    }
    Ok(HistoricalDecomposition {
        var_names: rf.var_names().to_vec(),
        shock_names: shocks.names().to_vec(),
        start: shocks.start(),
        contributions,
        baseline,
        observed,
    })
}
