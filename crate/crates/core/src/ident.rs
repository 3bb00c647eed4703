//! Recursive identification: lower-triangular Cholesky impact matrix, sign
//! normalization, structural shocks and structural impulse responses.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::ts::{MonthlySeries, Panel, TsError, YearMonth};
use crate::var::{ma_coefficients, ReducedForm};

/// Shock labels for the three-variable oil-market ordering.
pub const OIL_SHOCK_NAMES: [&str; 3] = ["oil_supply", "aggregate_demand", "oil_specific_demand"];

#[derive(Debug, Error, PartialEq)]
pub enum IdentError {
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("price-row impact of shock {column} is exactly zero; sign is undetermined")]
    ZeroImpact { column: usize },
    #[error("row index {index} out of range for {k} variables")]
    BadIndex { index: usize, k: usize },
}

/// Lower-triangular `P` with `P Pᵀ = Σ` and a strictly positive diagonal.
///
/// Upper-triangle entries are exact zeros.
pub fn cholesky_lower(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>, IdentError> {
    let k = sigma.nrows();
    if k == 0 || sigma.ncols() != k {
        return Err(IdentError::NotPositiveDefinite);
    }
    let scale = sigma.amax();
    if !(scale > 0.0) || !sigma.iter().all(|v| v.is_finite()) {
        return Err(IdentError::NotPositiveDefinite);
    }
    if (sigma - sigma.transpose()).amax() > 1e-12 * scale {
        return Err(IdentError::NotPositiveDefinite);
    }
    let eig = SymmetricEigen::new(sigma.clone()).eigenvalues;
    if eig.min() <= 1e-12 * eig.max() {
        return Err(IdentError::NotPositiveDefinite);
    }

    let mut l = DMatrix::zeros(k, k);
    for j in 0..k {
        let mut d = sigma[(j, j)];
        for m in 0..j {
            d -= l[(j, m)] * l[(j, m)];
        }
        if !(d > 0.0) {
            return Err(IdentError::NotPositiveDefinite);
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..k {
            let mut s = sigma[(i, j)];
            for m in 0..j {
                s -= l[(i, m)] * l[(j, m)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Recursively identified model.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralModel {
    rf: ReducedForm,
    b0inv: DMatrix<f64>,
    shock_names: Vec<String>,
    sign_flips: Vec<i8>,
    price_row: usize,
}

impl StructuralModel {
    pub fn reduced_form(&self) -> &ReducedForm {
        &self.rf
    }

    /// Impact matrix `B_0^{-1}`.
    pub fn b0inv(&self) -> &DMatrix<f64> {
        &self.b0inv
    }

    pub fn shock_names(&self) -> &[String] {
        &self.shock_names
    }

    pub fn sign_flips(&self) -> &[i8] {
        &self.sign_flips
    }

    pub fn price_row(&self) -> usize {
        self.price_row
    }

    pub fn with_shock_names(mut self, names: Vec<String>) -> Self {
        assert_eq!(names.len(), self.shock_names.len());
        self.shock_names = names;
        self
    }
}

pub fn default_shock_names(k: usize) -> Vec<String> {
    if k == OIL_SHOCK_NAMES.len() {
        OIL_SHOCK_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (1..=k).map(|j| format!("shock{j}")).collect()
    }
}

/// Flips columns of `p` so no shock lowers the `price_row` variable on impact.
///
/// Only strictly negative price-row entries trigger a flip; zeros (structural
/// or not) are left alone. The price variable's own shock must move it on
/// impact, so a zero diagonal entry at `price_row` is [`IdentError::ZeroImpact`].
pub fn normalize(p: DMatrix<f64>, rf: ReducedForm, price_row: usize) -> Result<StructuralModel, IdentError> {
    let k = p.nrows();
    if price_row >= k {
        return Err(IdentError::BadIndex { index: price_row, k });
    }
    let mut b0inv = p;
    let mut sign_flips = vec![1i8; k];
    if b0inv[(price_row, price_row)] == 0.0 {
        return Err(IdentError::ZeroImpact { column: price_row });
    }
    for j in 0..=price_row {
        if b0inv[(price_row, j)] < 0.0 {
            b0inv.column_mut(j).neg_mut();
            // keep structural zeros as +0.0
            for i in 0..j {
                b0inv[(i, j)] = 0.0;
            }
            sign_flips[j] = -1;
        }
    }
    Ok(StructuralModel {
        shock_names: default_shock_names(k),
        rf,
        b0inv,
        sign_flips,
        price_row,
    })
}

/// Cholesky factorization followed by sign normalization.
pub fn identify(rf: ReducedForm, price_row: usize) -> Result<StructuralModel, IdentError> {
    let p = cholesky_lower(rf.sigma())?;
    normalize(p, rf, price_row)
}

/// Structural shocks `ε̂_t = (B_0^{-1})^{-1} ε̂_t^{rf}`, one row per month.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockSeries {
    names: Vec<String>,
    start: YearMonth,
    values: DMatrix<f64>,
}

impl ShockSeries {
    pub fn new(names: Vec<String>, start: YearMonth, values: DMatrix<f64>) -> Self {
        assert_eq!(names.len(), values.ncols());
        Self { names, start, values }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn start(&self) -> YearMonth {
        self.start
    }

    /// `n × K`.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column(&self, j: usize) -> Result<MonthlySeries, TsError> {
        MonthlySeries::new(self.names[j].clone(), self.start, self.values.column(j).iter().copied().collect())
    }

    pub fn to_panel(&self) -> Result<Panel, TsError> {
        Panel::new((0..self.names.len()).map(|j| self.column(j)).collect::<Result<Vec<_>, _>>()?)
    }

    /// Sample covariance with divisor `n`.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.values.transpose() * &self.values / self.values.nrows() as f64
    }
}

pub fn structural_shocks(sm: &StructuralModel) -> ShockSeries {
    let resid_t = sm.rf.residuals().transpose();
    let shocks = sm
        .b0inv
        .solve_lower_triangular(&resid_t)
        .expect("impact matrix has a positive diagonal");
    ShockSeries {
        names: sm.shock_names.clone(),
        start: sm.rf.sample_range().start,
        values: shocks.transpose(),
    }
}

/// Structural impulse responses `Θ_h[i, j]`: variable `i`, shock `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct IrfResult {
    pub theta: Vec<DMatrix<f64>>,
    pub cumulative_rows: Vec<usize>,
    pub var_names: Vec<String>,
    pub shock_names: Vec<String>,
}

impl IrfResult {
    pub fn horizon(&self) -> usize {
        self.theta.len() - 1
    }

    pub fn nvars(&self) -> usize {
        self.var_names.len()
    }

    /// Entries in CSV order: shock, then variable, then horizon.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        let k = self.nvars();
        let h = self.theta.len();
        (0..k).flat_map(move |j| {
            (0..k).flat_map(move |i| (0..h).map(move |t| (j, i, t, self.theta[t][(i, j)])))
        })
    }

    /// Long CSV `shock,variable,horizon,response`.
    pub fn write_csv(&self, writer: impl Write) -> Result<(), TsError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["shock", "variable", "horizon", "response"])?;
        for (j, i, h, v) in self.entries() {
            w.write_record([
                self.shock_names[j].as_str(),
                self.var_names[i].as_str(),
                &h.to_string(),
                &v.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Impulse responses from an impact matrix: `Θ_h = Φ_h B_0^{-1}`, with the
/// listed rows replaced by their running sums over `h`.
pub fn irf_from_impact(
    rf: &ReducedForm,
    b0inv: &DMatrix<f64>,
    horizon: usize,
    cumulative_rows: &[usize],
) -> Vec<DMatrix<f64>> {
    let ma = ma_coefficients(rf, horizon);
    let mut theta: Vec<DMatrix<f64>> = ma.phi.iter().map(|phi| phi * b0inv).collect();
    for &row in cumulative_rows {
        for h in 1..theta.len() {
            let prev = theta[h - 1].row(row).into_owned();
            let mut cur = theta[h].row_mut(row);
            cur += prev;
        }
    }
    theta
}

pub fn structural_irf(sm: &StructuralModel, horizon: usize, cumulative_rows: &[usize]) -> Result<IrfResult, IdentError> {
    let k = sm.rf.nvars();
    if let Some(&bad) = cumulative_rows.iter().find(|r| **r >= k) {
        return Err(IdentError::BadIndex { index: bad, k });
    }
    let mut rows = cumulative_rows.to_vec();
    rows.sort_unstable();
    rows.dedup();
    Ok(IrfResult {
        theta: irf_from_impact(&sm.rf, &sm.b0inv, horizon, &rows),
        cumulative_rows: rows,
        var_names: sm.rf.var_names().to_vec(),
        shock_names: sm.shock_names.clone(),
    })
}
